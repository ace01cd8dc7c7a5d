//! The user-facing layer: configure a model, fit it to a dataset, predict,
//! export effect surfaces, and persist everything to disk.

mod effects;
mod store;

pub use effects::{EffectSurface, LatentCurves, MarginalCurve};
pub(crate) use effects::linspace;
pub use store::{load, save, StoreError};

use crate::basis::{build_basis, difference_penalty, eval_design, BasisError, PenaltyMatrix, SplineBasis};
use crate::data::Dataset;
use crate::factor::{linear_predictor, FactorTensor, MainEffects};
use crate::par;
use crate::smoothing::{homogeneous_smoothing, SmoothingError, SmoothingPlan};
use crate::trainer::{
    fit_bcd, fit_sgd, LossKind, OptimizerKind, ParamLayout, Problem, TrainConfig, TrainError,
    TrainReport,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fitting on fewer rows than this is refused outright: the initial
/// validation split and the smoother calibration both need some mass.
pub const MIN_ROWS: usize = 20;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {MIN_ROWS} rows to fit, got {n}")]
    TooFewRows { n: usize },
    #[error("interaction degree {degree} exceeds feature count {p}")]
    DegreeExceedsFeatures { degree: usize, p: usize },
    #[error("bad model configuration: {what}")]
    BadConfig { what: String },
    #[error("target column is empty or mismatched: {n} rows of features, {ny} target values")]
    TargetMismatch { n: usize, ny: usize },
    #[error("feature count mismatch: model expects {expect} columns, data has {got}")]
    FeatureMismatch { expect: usize, got: usize },
    #[error("non-finite feature values in matrix rows {rows:?}")]
    NonFiniteRows { rows: Vec<usize> },
    #[error("feature index {feature} out of range for a model with {p} features")]
    FeatureOutOfRange { feature: usize, p: usize },
    #[error("feature subset repeats feature {feature}")]
    RepeatedFeature { feature: usize },
    #[error("feature subset is empty")]
    EmptySubset,
    #[error("subset size {size} exceeds the model's interaction degree {degree}")]
    SubsetTooLarge { size: usize, degree: usize },
    #[error("grid resolution must be at least 2, got {resolution}")]
    GridTooCoarse { resolution: usize },
    #[error("evaluation grid of {cells} cells is too large; reduce the resolution")]
    GridTooLarge { cells: usize },
    #[error("model has no interaction terms of degree {degree}")]
    NoSuchDegree { degree: usize },
    #[error("factor index {factor} out of range: degree {degree} has {count} factors")]
    NoSuchFactor {
        factor: usize,
        degree: usize,
        count: usize,
    },
    #[error("axis feature {feature} is not part of the requested subset")]
    AxisNotInSubset { feature: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn bad(what: impl Into<String>) -> ModelError {
    ModelError::BadConfig { what: what.into() }
}

/// Everything that shapes the model structure (as opposed to how it is
/// optimized, which lives in [`TrainConfig`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Highest interaction order; 1 means a purely additive model.
    pub degree: usize,
    /// Latent dimensions per interaction degree: `factor_counts[0]` is the
    /// number of rank-one terms for pairs, `[1]` for triples, and so on.
    pub factor_counts: Vec<usize>,
    /// Spline basis dimension per feature.
    pub num_basis: usize,
    /// Polynomial degree of the B-splines (3 = cubic).
    pub spline_degree: usize,
    /// Order of the difference penalty.
    pub penalty_order: usize,
    pub loss: LossKind,
    /// Degrees-of-freedom targets, one per degree starting at the
    /// univariate smooths. Targets above the basis dimension are clipped
    /// during calibration (with a warning), which disables smoothing.
    pub df_targets: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_degree(2, 5)
    }
}

impl ModelConfig {
    /// A config with the same number of latent terms for every interaction
    /// degree from 2 up to `degree`, and the stock basis/penalty choices.
    pub fn with_degree(degree: usize, factors_per_degree: usize) -> Self {
        ModelConfig {
            degree,
            factor_counts: vec![factors_per_degree; degree.saturating_sub(1)],
            num_basis: 10,
            spline_degree: 3,
            penalty_order: 2,
            loss: LossKind::SquaredError,
            df_targets: vec![15.0; degree.max(1)],
        }
    }

    fn validate(&self, p: usize) -> Result<(), ModelError> {
        if self.degree == 0 {
            return Err(bad("degree must be at least 1"));
        }
        if self.degree > p {
            return Err(ModelError::DegreeExceedsFeatures {
                degree: self.degree,
                p,
            });
        }
        if self.factor_counts.len() != self.degree - 1 {
            return Err(bad(format!(
                "factor_counts needs one entry per interaction degree 2..={}: expected {}, got {}",
                self.degree,
                self.degree - 1,
                self.factor_counts.len()
            )));
        }
        if self.factor_counts.contains(&0) {
            return Err(bad("factor counts must be positive"));
        }
        if self.df_targets.len() != self.degree {
            return Err(bad(format!(
                "df_targets needs one entry per degree 1..={}: expected {}, got {}",
                self.degree,
                self.degree,
                self.df_targets.len()
            )));
        }
        if self.df_targets.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(bad("df targets must be finite and positive"));
        }
        Ok(())
    }
}

/// How the fit went, kept with the model for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub n_train: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
    pub converged: bool,
}

/// A frozen fit: structure, coefficients, smoothing weights, and metadata.
/// Immutable after fitting; shareable across threads for prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub bases: Vec<SplineBasis>,
    pub main: MainEffects,
    pub factors: Vec<FactorTensor>,
    pub plan: SmoothingPlan,
    pub meta: TrainMeta,
    /// Feature columns the training data had log10-transformed; prediction
    /// data must get the same treatment.
    #[serde(default)]
    pub log10_features: Vec<String>,
}

/// The fitted model plus the per-epoch training history, which is worth
/// reporting but too bulky to persist inside the model file.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: FittedModel,
    pub report: TrainReport,
}

/// Predictions on both scales, with a count of how many feature cells fell
/// outside the training domain and were clamped to its boundary.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub eta: Vec<f64>,
    pub response: Vec<f64>,
    pub clamped_cells: usize,
}

/// Fits a model: builds a spline basis per feature, calibrates smoothing
/// weights to the degrees-of-freedom targets, then runs the configured
/// optimizer.
pub fn fit(
    data: &Dataset,
    config: &ModelConfig,
    train: &TrainConfig,
) -> Result<FitOutput, ModelError> {
    let n = data.n();
    let p = data.num_features();
    if n < MIN_ROWS {
        return Err(ModelError::TooFewRows { n });
    }
    config.validate(p)?;
    if data.y.len() != n {
        return Err(ModelError::TargetMismatch { n, ny: data.y.len() });
    }

    let columns: Vec<Vec<f64>> = (0..p).map(|j| data.column(j)).collect();
    let mut bases = Vec::with_capacity(p);
    for (j, col) in columns.iter().enumerate() {
        bases.push(build_basis(col, config.num_basis, config.spline_degree, j)?);
    }
    let designs = bases
        .iter()
        .zip(&columns)
        .map(|(b, col)| eval_design(b, col))
        .collect::<Result<Vec<_>, _>>()?;
    let penalty = difference_penalty(config.num_basis, config.penalty_order)?;
    let penalties: Vec<PenaltyMatrix> = vec![penalty; p];
    let plan = homogeneous_smoothing(&designs, &penalties, &config.df_targets)?;

    let layout = ParamLayout {
        num_features: p,
        num_basis: config.num_basis,
        factor_counts: config.factor_counts.clone(),
    };
    let problem = Problem {
        designs: &designs,
        y: &data.y,
        loss: config.loss,
        layout: layout.clone(),
        plan: &plan,
        penalties: &penalties,
    };
    let (params, report) = match train.optimizer {
        OptimizerKind::Sgd => fit_sgd(&problem, train)?,
        OptimizerKind::Bcd => fit_bcd(&problem, train)?,
    };
    let (main, factors) = layout.unpack(&params);

    let n_val = (n as f64 * train.validation_fraction).floor() as usize;
    let meta = TrainMeta {
        optimizer: train.optimizer,
        seed: train.seed,
        n_train: n - n_val,
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
        early_stopped: report.early_stopped,
        converged: report.converged,
    };
    let model = FittedModel {
        config: config.clone(),
        feature_names: data.feature_names.clone(),
        bases,
        main,
        factors,
        plan,
        meta,
        log10_features: data.log10_columns.clone(),
    };
    Ok(FitOutput { model, report })
}

impl FittedModel {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Evaluates the model on a feature matrix whose columns follow the
    /// model's feature order. Out-of-domain values are clamped (the count
    /// comes back as a diagnostic); non-finite cells are an error naming
    /// the offending rows.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Predictions, ModelError> {
        let p = self.num_features();
        if x.ncols() != p {
            return Err(ModelError::FeatureMismatch {
                expect: p,
                got: x.ncols(),
            });
        }
        let mut offending = Vec::new();
        for (i, row) in x.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                offending.push(i);
                if offending.len() == 20 {
                    break;
                }
            }
        }
        if !offending.is_empty() {
            return Err(ModelError::NonFiniteRows { rows: offending });
        }

        let mut clamped_cells = 0usize;
        let columns: Vec<Vec<f64>> = (0..p)
            .map(|j| {
                let (lo, hi) = self.bases[j].domain;
                x.column(j)
                    .iter()
                    .inspect(|v| {
                        if **v < lo || **v > hi {
                            clamped_cells += 1;
                        }
                    })
                    .copied()
                    .collect()
            })
            .collect();
        let designs = self
            .bases
            .iter()
            .zip(&columns)
            .map(|(b, col)| eval_design(b, col))
            .collect::<Result<Vec<_>, _>>()?;

        let mut eta = vec![0.0; x.nrows()];
        par::fill_chunked(&mut eta, |offset, out| {
            for (k, e) in out.iter_mut().enumerate() {
                let i = offset + k;
                let rows: Vec<_> = designs.iter().map(|d| d.row(i)).collect();
                *e = linear_predictor(&rows, &self.main, &self.factors)
                    .expect("fitted model shapes are internally consistent");
            }
        });
        let response = eta.iter().map(|&e| self.config.loss.response(e)).collect();
        Ok(Predictions {
            eta,
            response,
            clamped_cells,
        })
    }

    /// Like [`predict`](Self::predict) but aligns a named dataset's columns
    /// with the model's feature order first.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Predictions, ModelError> {
        let x = data
            .select(&self.feature_names)
            .map_err(|e| bad(e.to_string()))?;
        self.predict(&x)
    }

    /// True when every stored coefficient and smoothing weight is finite.
    pub(crate) fn coefficients_finite(&self) -> bool {
        let main_ok = self.main.alpha0.is_finite()
            && self
                .main
                .betas
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()));
        let factors_ok = self
            .factors
            .iter()
            .all(|t| t.as_flat().iter().all(|v| v.is_finite()));
        let plan_ok = self
            .plan
            .lambdas
            .iter()
            .flatten()
            .all(|v| v.is_finite());
        let bases_ok = self
            .bases
            .iter()
            .all(|b| b.knots.iter().all(|v| v.is_finite()));
        main_ok && factors_ok && plan_ok && bases_ok
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// A hand-assembled model (no fitting): cubic bases on [0, 1] with two
    /// interior knots, random coefficients. `factor_counts[k]` gives the
    /// number of factors for degree k+2.
    pub fn toy_model(p: usize, factor_counts: &[usize], seed: u64) -> FittedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases: Vec<SplineBasis> = (0..p)
            .map(|j| SplineBasis::from_interior_knots(j, (0.0, 1.0), &[1.0 / 3.0, 2.0 / 3.0], 3))
            .collect();
        let m = bases[0].num_basis;
        let mut main = MainEffects::zeros(p, m);
        main.alpha0 = rng.random::<f64>() - 0.5;
        for beta in &mut main.betas {
            for v in beta.iter_mut() {
                *v = rng.random::<f64>() - 0.5;
            }
        }
        let factors: Vec<FactorTensor> = factor_counts
            .iter()
            .enumerate()
            .map(|(k, &count)| {
                let mut t = FactorTensor::zeros(k + 2, m, p, count);
                for v in t.as_flat_mut() {
                    *v = rng.random::<f64>() - 0.5;
                }
                t
            })
            .collect();
        let degree = factor_counts.len() + 1;
        FittedModel {
            config: ModelConfig {
                degree,
                factor_counts: factor_counts.to_vec(),
                num_basis: m,
                spline_degree: 3,
                penalty_order: 2,
                loss: LossKind::SquaredError,
                df_targets: vec![5.0; degree],
            },
            feature_names: (0..p).map(|j| format!("x{j}")).collect(),
            bases,
            main,
            factors,
            plan: SmoothingPlan {
                df_targets: vec![5.0; degree],
                lambdas: vec![vec![0.5; p]; degree],
            },
            meta: TrainMeta {
                optimizer: OptimizerKind::Bcd,
                seed,
                n_train: 0,
                epochs_run: 0,
                best_epoch: 0,
                best_val_loss: 0.0,
                early_stopped: false,
                converged: true,
            },
            log10_features: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::toy_model;
    use super::*;
    use ndarray::Array1;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sine_dataset(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y: Vec<f64> = xs.iter().map(|&x| (3.0 * x).sin()).collect();
        Dataset {
            feature_names: vec!["x".into()],
            target_name: Some("y".into()),
            x: Array2::from_shape_vec((n, 1), xs).unwrap(),
            y,
            split: None,
            log10_columns: Vec::new(),
        }
    }

    #[test]
    fn univariate_sine_fit_tracks_the_curve() {
        let data = sine_dataset(500);
        let config = ModelConfig {
            degree: 1,
            factor_counts: vec![],
            num_basis: 10,
            spline_degree: 3,
            penalty_order: 2,
            loss: LossKind::SquaredError,
            df_targets: vec![8.0],
        };
        let train = TrainConfig {
            optimizer: OptimizerKind::Bcd,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let out = fit(&data, &config, &train).unwrap();
        let pred = out.model.predict(&data.x).unwrap();
        // Pearson correlation between fitted values and the clean signal.
        let n = data.y.len() as f64;
        let my = data.y.iter().sum::<f64>() / n;
        let mp = pred.eta.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vy = 0.0;
        let mut vp = 0.0;
        for (yi, pi) in data.y.iter().zip(&pred.eta) {
            cov += (yi - my) * (pi - mp);
            vy += (yi - my).powi(2);
            vp += (pi - mp).powi(2);
        }
        let corr = cov / (vy.sqrt() * vp.sqrt());
        assert!(corr > 0.99, "correlation {corr}");
        assert_eq!(pred.clamped_cells, 0);
    }

    #[test]
    fn degree_above_feature_count_is_refused() {
        let data = sine_dataset(100);
        let config = ModelConfig::with_degree(3, 2);
        let err = fit(&data, &config, &TrainConfig::default()).unwrap_err();
        assert!(
            err.to_string().contains("exceeds feature count"),
            "{err}"
        );
    }

    #[test]
    fn tiny_datasets_are_refused() {
        let mut data = sine_dataset(10);
        data.y.truncate(10);
        let config = ModelConfig {
            degree: 1,
            factor_counts: vec![],
            df_targets: vec![5.0],
            ..ModelConfig::default()
        };
        assert!(matches!(
            fit(&data, &config, &TrainConfig::default()),
            Err(ModelError::TooFewRows { n: 10 })
        ));
    }

    #[test]
    fn config_shape_errors_are_caught() {
        let data = sine_dataset(100);
        let mut config = ModelConfig {
            degree: 1,
            factor_counts: vec![3],
            df_targets: vec![5.0],
            ..ModelConfig::default()
        };
        let err = fit(&data, &config, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("factor_counts"), "{err}");
        config.factor_counts = vec![];
        config.df_targets = vec![5.0, 5.0];
        let err = fit(&data, &config, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("df_targets"), "{err}");
    }

    #[test]
    fn predict_rejects_bad_matrices() {
        let model = toy_model(3, &[2], 1);
        let wrong = Array2::zeros((4, 2));
        assert!(matches!(
            model.predict(&wrong),
            Err(ModelError::FeatureMismatch { expect: 3, got: 2 })
        ));
        let mut x = Array2::from_elem((5, 3), 0.5);
        x[(1, 2)] = f64::NAN;
        x[(3, 0)] = f64::INFINITY;
        match model.predict(&x) {
            Err(ModelError::NonFiniteRows { rows }) => assert_eq!(rows, vec![1, 3]),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn out_of_domain_predictions_clamp_and_count() {
        let model = toy_model(2, &[2], 2);
        let inside = Array2::from_shape_vec((1, 2), vec![1.0, 0.5]).unwrap();
        let outside = Array2::from_shape_vec((1, 2), vec![7.5, 0.5]).unwrap();
        let a = model.predict(&inside).unwrap();
        let b = model.predict(&outside).unwrap();
        assert_eq!(a.clamped_cells, 0);
        assert_eq!(b.clamped_cells, 1);
        assert_eq!(a.eta[0].to_bits(), b.eta[0].to_bits());
    }

    #[test]
    fn all_zero_model_predicts_the_intercept() {
        let mut model = toy_model(2, &[2], 3);
        model.main = MainEffects::zeros(2, model.config.num_basis);
        model.main.alpha0 = 0.7;
        for t in &mut model.factors {
            for v in t.as_flat_mut() {
                *v = 0.0;
            }
        }
        let x = Array2::from_elem((4, 2), 0.3);
        let pred = model.predict(&x).unwrap();
        assert!(pred.eta.iter().all(|&e| e == 0.7));
        model.config.loss = LossKind::Logistic;
        let pred = model.predict(&x).unwrap();
        let want = 1.0 / (1.0 + (-0.7f64).exp());
        assert!(pred.response.iter().all(|&r| (r - want).abs() < 1e-15));
    }

    #[test]
    fn hand_built_indicator_model_matches_manual_arithmetic() {
        // Degree-0 splines over [0,2) with an interior knot at 1 give a
        // two-cell indicator basis, so every term can be read off directly.
        let bases: Vec<SplineBasis> = (0..2)
            .map(|j| SplineBasis::from_interior_knots(j, (0.0, 2.0), &[1.0], 0))
            .collect();
        let mut main = MainEffects::zeros(2, 2);
        main.alpha0 = 0.25;
        main.betas[0] = Array1::from_vec(vec![1.0, -1.0]);
        main.betas[1] = Array1::from_vec(vec![2.0, 3.0]);
        let mut factors = FactorTensor::zeros(2, 2, 2, 2);
        // Factor 0: phi_0 = 0.5 (cell 0), phi_1 = 4.0 (cell 1).
        factors.set(0, 0, 0, 0.5);
        factors.set(1, 1, 0, 4.0);
        // Factor 1: phi_0 = -1.0, phi_1 = 0.5.
        factors.set(0, 0, 1, -1.0);
        factors.set(1, 1, 1, 0.5);
        let mut model = toy_model(2, &[2], 0);
        model.bases = bases;
        model.config.num_basis = 2;
        model.config.spline_degree = 0;
        model.main = main;
        model.factors = vec![factors];
        // x = (0.4, 1.7): cells (0, 1). eta = 0.25 + 1.0 + 3.0
        //   + [0.5*4.0 + (-1.0)*0.5] = 5.75.
        let x = Array2::from_shape_vec((1, 2), vec![0.4, 1.7]).unwrap();
        let pred = model.predict(&x).unwrap();
        assert!((pred.eta[0] - 5.75).abs() < 1e-12, "eta {}", pred.eta[0]);
    }

    #[test]
    fn predictions_decompose_into_exported_effects() {
        let model = toy_model(4, &[2, 2], 11);
        let pairs: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let triples: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let point: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let x = Array2::from_shape_vec((1, 4), point.clone()).unwrap();
            let eta = model.predict(&x).unwrap().eta[0];
            let mut sum = model.main.alpha0;
            for (j, &v) in point.iter().enumerate() {
                let at = Array2::from_shape_vec((1, 1), vec![v]).unwrap();
                sum += model.effect_surface_at(&[j], &at).unwrap()[0];
            }
            for (a, b) in pairs {
                let at = Array2::from_shape_vec((1, 2), vec![point[a], point[b]]).unwrap();
                sum += model.effect_surface_at(&[a, b], &at).unwrap()[0];
            }
            for t in triples {
                let at =
                    Array2::from_shape_vec((1, 3), vec![point[t[0]], point[t[1]], point[t[2]]])
                        .unwrap();
                sum += model.effect_surface_at(&t, &at).unwrap()[0];
            }
            assert!(
                (sum - eta).abs() <= 1e-10 * (1.0 + eta.abs()),
                "decomposition {sum} vs eta {eta}"
            );
        }
    }
}
