//! Interpretability exports: partial-effect surfaces over feature subsets,
//! marginal curves with spread, and the raw univariate latent functions.
//!
//! A caveat applies to everything here: no sum-to-zero constraints are
//! imposed during fitting, so the intercept and univariate smooths absorb
//! level shifts. Individual surfaces are identified only up to additive
//! constants; their sum is what the model actually pins down.

use super::{FittedModel, ModelError};
use crate::factor::latent_value;
use ndarray::Array2;
use serde::Serialize;

/// Refuse to materialize grids bigger than this many cells.
const MAX_GRID_CELLS: usize = 4_000_000;

/// A partial-effect surface on a tensor grid. For a single feature this is
/// the additive smooth `B_j(x)' beta_j`; for a subset of size `d >= 2` it
/// is the degree-`d` interaction term, the factor sum of products of that
/// subset's latent functions.
#[derive(Debug, Clone, Serialize)]
pub struct EffectSurface {
    pub features: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Evaluation points per feature, each spanning the training domain.
    pub axes: Vec<Vec<f64>>,
    /// Values over the tensor grid in row-major order: the last feature's
    /// axis varies fastest.
    pub values: Vec<f64>,
    /// Interaction surfaces carry level ambiguity (see module docs).
    pub level_caveat: bool,
}

impl EffectSurface {
    /// One row per grid cell: tab-separated coordinates then the value.
    pub fn long_format(&self) -> String {
        let mut out = String::new();
        for name in &self.feature_names {
            out.push_str(name);
            out.push('\t');
        }
        out.push_str("value\n");
        let sizes: Vec<usize> = self.axes.iter().map(Vec::len).collect();
        for (cell, v) in self.values.iter().enumerate() {
            let idx = decode_cell(cell, &sizes);
            for (k, i) in idx.iter().enumerate() {
                out.push_str(&format!("{}\t", self.axes[k][*i]));
            }
            out.push_str(&format!("{v}\n"));
        }
        out
    }
}

/// A marginal view of a surface along one axis: the average over all
/// off-axis grid points, plus the min–max spread at each axis point.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalCurve {
    pub feature: usize,
    pub feature_name: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MarginalCurve {
    pub fn table(&self) -> String {
        let mut out = String::from("x\tmean\tlo\thi\n");
        for i in 0..self.x.len() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.x[i], self.mean[i], self.lo[i], self.hi[i]
            ));
        }
        out
    }
}

/// One latent function per feature for a fixed (degree, factor) pair,
/// evaluated on per-feature grids: the raw material the factorization
/// multiplies together.
#[derive(Debug, Clone, Serialize)]
pub struct LatentCurves {
    pub degree: usize,
    pub factor: usize,
    pub feature_names: Vec<String>,
    pub grids: Vec<Vec<f64>>,
    /// `values[j][g]` is feature j's latent function at `grids[j][g]`.
    pub values: Vec<Vec<f64>>,
}

impl LatentCurves {
    pub fn table(&self) -> String {
        let mut out = String::from("feature\tx\tvalue\n");
        for (j, name) in self.feature_names.iter().enumerate() {
            for (x, v) in self.grids[j].iter().zip(&self.values[j]) {
                out.push_str(&format!("{name}\t{x}\t{v}\n"));
            }
        }
        out
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let step = (hi - lo) / (k - 1) as f64;
    (0..k).map(|i| lo + step * i as f64).collect()
}

fn decode_cell(mut cell: usize, sizes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; sizes.len()];
    for k in (0..sizes.len()).rev() {
        idx[k] = cell % sizes[k];
        cell /= sizes[k];
    }
    idx
}

impl FittedModel {
    fn check_subset(&self, features: &[usize]) -> Result<(), ModelError> {
        if features.is_empty() {
            return Err(ModelError::EmptySubset);
        }
        let p = self.num_features();
        for (k, &j) in features.iter().enumerate() {
            if j >= p {
                return Err(ModelError::FeatureOutOfRange { feature: j, p });
            }
            if features[..k].contains(&j) {
                return Err(ModelError::RepeatedFeature { feature: j });
            }
        }
        if features.len() > self.config.degree {
            return Err(ModelError::SubsetTooLarge {
                size: features.len(),
                degree: self.config.degree,
            });
        }
        Ok(())
    }

    /// The partial-effect surface for `features` on a tensor grid with
    /// `resolution` points per axis, spanning each feature's training
    /// domain.
    pub fn effect_surface(
        &self,
        features: &[usize],
        resolution: usize,
    ) -> Result<EffectSurface, ModelError> {
        self.check_subset(features)?;
        if resolution < 2 {
            return Err(ModelError::GridTooCoarse { resolution });
        }
        let cells = resolution
            .checked_pow(features.len() as u32)
            .filter(|c| *c <= MAX_GRID_CELLS)
            .ok_or(ModelError::GridTooLarge {
                cells: MAX_GRID_CELLS + 1,
            })?;
        let axes: Vec<Vec<f64>> = features
            .iter()
            .map(|&j| {
                let (lo, hi) = self.bases[j].domain;
                linspace(lo, hi, resolution)
            })
            .collect();

        let values = if features.len() == 1 {
            let j = features[0];
            axes[0]
                .iter()
                .map(|&x| self.bases[j].eval(x).dot(&self.main.betas[j]))
                .collect()
        } else {
            let d = features.len();
            let tensor = &self.factors[d - 2];
            let nf = tensor.num_factors;
            // phis[k] is resolution x nf for the k-th subset position.
            let phis: Vec<Vec<f64>> = features
                .iter()
                .zip(&axes)
                .map(|(&j, axis)| {
                    let mut table = vec![0.0; axis.len() * nf];
                    for (g, &x) in axis.iter().enumerate() {
                        let row = self.bases[j].eval(x);
                        let row = row.as_slice().unwrap();
                        for f in 0..nf {
                            table[g * nf + f] =
                                latent_value(row, tensor.fiber(j, f)).expect("fiber length");
                        }
                    }
                    table
                })
                .collect();
            let sizes = vec![resolution; d];
            (0..cells)
                .map(|cell| {
                    let idx = decode_cell(cell, &sizes);
                    (0..nf)
                        .map(|f| {
                            idx.iter()
                                .enumerate()
                                .map(|(k, &g)| phis[k][g * nf + f])
                                .product::<f64>()
                        })
                        .sum()
                })
                .collect()
        };

        Ok(EffectSurface {
            features: features.to_vec(),
            feature_names: features
                .iter()
                .map(|&j| self.feature_names[j].clone())
                .collect(),
            axes,
            values,
            level_caveat: features.len() >= 2,
        })
    }

    /// The same quantity as [`effect_surface`](Self::effect_surface) at
    /// arbitrary points: each row of `points` holds coordinates for the
    /// subset's features, in subset order.
    pub fn effect_surface_at(
        &self,
        features: &[usize],
        points: &Array2<f64>,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_subset(features)?;
        if points.ncols() != features.len() {
            return Err(ModelError::FeatureMismatch {
                expect: features.len(),
                got: points.ncols(),
            });
        }
        if features.len() == 1 {
            let j = features[0];
            return Ok(points
                .column(0)
                .iter()
                .map(|&x| self.bases[j].eval(x).dot(&self.main.betas[j]))
                .collect());
        }
        let d = features.len();
        let tensor = &self.factors[d - 2];
        let nf = tensor.num_factors;
        let mut out = Vec::with_capacity(points.nrows());
        for row in points.rows() {
            let mut products = vec![1.0; nf];
            for (k, &j) in features.iter().enumerate() {
                let b = self.bases[j].eval(row[k]);
                let b = b.as_slice().unwrap();
                for (f, prod) in products.iter_mut().enumerate() {
                    *prod *= latent_value(b, tensor.fiber(j, f)).expect("fiber length");
                }
            }
            out.push(products.iter().sum());
        }
        Ok(out)
    }

    /// Marginal of the subset's surface along `axis_feature`: at each grid
    /// point of that feature, the mean and min–max range of the surface
    /// over all off-axis grid points.
    pub fn marginal_effect(
        &self,
        features: &[usize],
        axis_feature: usize,
        resolution: usize,
    ) -> Result<MarginalCurve, ModelError> {
        let axis_pos = features
            .iter()
            .position(|&j| j == axis_feature)
            .ok_or(ModelError::AxisNotInSubset {
                feature: axis_feature,
            })?;
        let surface = self.effect_surface(features, resolution)?;
        let sizes: Vec<usize> = surface.axes.iter().map(Vec::len).collect();
        let n_axis = sizes[axis_pos];
        let mut mean = vec![0.0; n_axis];
        let mut lo = vec![f64::INFINITY; n_axis];
        let mut hi = vec![f64::NEG_INFINITY; n_axis];
        for (cell, &v) in surface.values.iter().enumerate() {
            let idx = decode_cell(cell, &sizes);
            let g = idx[axis_pos];
            mean[g] += v;
            lo[g] = lo[g].min(v);
            hi[g] = hi[g].max(v);
        }
        let per_slice = (surface.values.len() / n_axis) as f64;
        for m in &mut mean {
            *m /= per_slice;
        }
        Ok(MarginalCurve {
            feature: axis_feature,
            feature_name: self.feature_names[axis_feature].clone(),
            x: surface.axes[axis_pos].clone(),
            mean,
            lo,
            hi,
        })
    }

    /// The latent functions of one (degree, factor) pair for every feature,
    /// each on a grid over its own training domain.
    pub fn univariate_latents(
        &self,
        degree: usize,
        factor: usize,
        resolution: usize,
    ) -> Result<LatentCurves, ModelError> {
        if degree < 2 || degree > self.config.degree {
            return Err(ModelError::NoSuchDegree { degree });
        }
        if resolution < 2 {
            return Err(ModelError::GridTooCoarse { resolution });
        }
        let tensor = &self.factors[degree - 2];
        if factor >= tensor.num_factors {
            return Err(ModelError::NoSuchFactor {
                factor,
                degree,
                count: tensor.num_factors,
            });
        }
        let mut grids = Vec::with_capacity(self.num_features());
        let mut values = Vec::with_capacity(self.num_features());
        for (j, basis) in self.bases.iter().enumerate() {
            let (lo, hi) = basis.domain;
            let grid = linspace(lo, hi, resolution);
            let curve: Vec<f64> = grid
                .iter()
                .map(|&x| {
                    let b = basis.eval(x);
                    latent_value(b.as_slice().unwrap(), tensor.fiber(j, factor))
                        .expect("fiber length")
                })
                .collect();
            grids.push(grid);
            values.push(curve);
        }
        Ok(LatentCurves {
            degree,
            factor,
            feature_names: self.feature_names.clone(),
            grids,
            values,
        })
    }
}
