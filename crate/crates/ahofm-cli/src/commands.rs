//! One function per subcommand. Each returns `CliError` so `main` can map
//! the failure class onto an exit code.

use std::path::{Path, PathBuf};

use serde::Serialize;

use ahofm::data::ingest_csv;
use ahofm::model::{self, FittedModel};
use ahofm::scaling::benchmark_scaling;
use ahofm::sim::{simulate, SimSpec, TruthSurface};
use ahofm::study::run_estimation_study;
use ahofm::trainer::TrainConfig;

use crate::args::{
    parse_list, parse_names, BenchmarkArgs, EffectsArgs, FitPlan, PredictArgs, SimulateArgs,
    StudyArgs,
};
use crate::{model_error, CliError};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Write to the file when one was given, otherwise print the table.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            write_text(path, text)?;
            println!("table written to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// `model.json` keeps its training log next to it as `model.history.tsv`.
fn history_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("history.tsv")
}

fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn run_fit(plan: FitPlan) -> Result<(), CliError> {
    let data = ingest_csv(&plan.data, Some(&plan.target), &plan.log10)?;
    log::info!(
        "loaded {} rows x {} features from {}",
        data.n(),
        data.num_features(),
        plan.data.display()
    );
    let out = ahofm::fit(&data, &plan.model, &plan.train).map_err(model_error)?;
    model::save(&out.model, &plan.out)?;
    let log_path = history_path(&plan.out);
    write_text(&log_path, &out.report.history_table())?;

    let meta = &out.model.meta;
    println!("model written to {}", plan.out.display());
    println!("history written to {}", log_path.display());
    println!(
        "trained on {} rows for {} epochs; best validation loss {:.6e} at epoch {}",
        meta.n_train, meta.epochs_run, meta.best_val_loss, meta.best_epoch
    );
    if meta.early_stopped {
        log::info!("stopped early: validation loss plateaued");
    }
    Ok(())
}

pub fn run_predict(args: PredictArgs) -> Result<(), CliError> {
    let model = model::load(&args.model)?;
    let data = ingest_csv(&args.data, None, &model.log10_features)?;
    let preds = model.predict_dataset(&data).map_err(model_error)?;
    if preds.clamped_cells > 0 {
        log::warn!(
            "{} feature values fell outside the training range and were clamped to the domain edge",
            preds.clamped_cells
        );
    }
    let mut text = String::from("eta\tresponse\n");
    for (eta, response) in preds.eta.iter().zip(&preds.response) {
        text.push_str(&format!("{eta}\t{response}\n"));
    }
    write_text(&args.out, &text)?;
    println!(
        "predictions written to {} ({} rows)",
        args.out.display(),
        preds.eta.len()
    );
    Ok(())
}

/// The persisted half of a simulation: enough to rescore any fit against
/// the generating truth later.
#[derive(Serialize)]
struct TruthFile<'a> {
    spec: &'a SimSpec,
    noise_sd: f64,
    surfaces: &'a [TruthSurface],
}

pub fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut spec = SimSpec::new(args.n, args.p, args.snr, args.seed);
    spec.interaction_degree = args.interaction_degree;
    let sim = simulate(&spec)?;

    let data_path = suffixed(&args.out, ".csv");
    let truth_path = suffixed(&args.out, ".truth.json");

    let ds = &sim.dataset;
    let mut csv = ds.feature_names.join(",");
    csv.push(',');
    csv.push_str(ds.target_name.as_deref().unwrap_or("y"));
    csv.push('\n');
    for i in 0..ds.n() {
        for j in 0..ds.num_features() {
            csv.push_str(&format!("{},", ds.x[(i, j)]));
        }
        csv.push_str(&format!("{}\n", ds.y[i]));
    }
    write_text(&data_path, &csv)?;

    let truth = TruthFile {
        spec: &spec,
        noise_sd: sim.noise_sd,
        surfaces: &sim.truth,
    };
    let json = serde_json::to_string_pretty(&truth)
        .map_err(|e| CliError::Usage(format!("cannot encode truth file: {e}")))?;
    write_text(&truth_path, &json)?;

    println!("data written to {} ({} rows)", data_path.display(), ds.n());
    println!(
        "truth written to {} ({} surfaces, noise sd {:.6})",
        truth_path.display(),
        sim.truth.len(),
        sim.noise_sd
    );
    Ok(())
}

fn feature_index(model: &FittedModel, name: &str) -> Result<usize, CliError> {
    model
        .feature_names
        .iter()
        .position(|f| f == name)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "unknown feature {name:?}; model features are {}",
                model.feature_names.join(", ")
            ))
        })
}

pub fn run_effects(args: EffectsArgs) -> Result<(), CliError> {
    let model = model::load(&args.model)?;
    let names = parse_names(&args.features);
    if names.is_empty() {
        return Err(CliError::Usage(
            "--features needs at least one feature name".into(),
        ));
    }
    let indices: Vec<usize> = names
        .iter()
        .map(|n| feature_index(&model, n))
        .collect::<Result<_, _>>()?;

    let text = match &args.marginal {
        Some(axis) => {
            let axis_index = feature_index(&model, axis)?;
            model
                .marginal_effect(&indices, axis_index, args.grid)
                .map_err(model_error)?
                .table()
        }
        None => {
            let surface = model
                .effect_surface(&indices, args.grid)
                .map_err(model_error)?;
            if surface.level_caveat {
                log::warn!(
                    "interaction surfaces are identified only up to additive level shifts; compare shapes, not absolute values"
                );
            }
            surface.long_format()
        }
    };
    write_text(&args.out, &text)?;
    println!("effect table written to {}", args.out.display());
    Ok(())
}

pub fn run_benchmark(args: BenchmarkArgs) -> Result<(), CliError> {
    let p_list: Vec<usize> = parse_list(&args.p_list, "--p-list")?;
    let n_list: Vec<usize> = parse_list(&args.n_list, "--n-list")?;
    let table = benchmark_scaling(
        &p_list,
        &n_list,
        args.repetitions,
        args.factors,
        args.epochs,
        args.seed,
    )?;
    emit(args.out.as_deref(), &table.to_tsv())
}

pub fn run_study(args: StudyArgs) -> Result<(), CliError> {
    let f_list: Vec<usize> = parse_list(&args.f_list, "--f-list")?;
    let spec = SimSpec::new(args.n, args.p, args.snr, args.seed);
    let train = TrainConfig {
        optimizer: crate::args::parse_optimizer(&args.optimizer)?,
        max_epochs: args.epochs,
        init_scale: args.init_scale,
        // Offset so the fit never shares a stream with the simulator.
        seed: args.seed.wrapping_add(10_000),
        ..TrainConfig::default()
    };
    let table = run_estimation_study(&spec, &f_list, args.replications, args.df, &train)?;
    for &f in &f_list {
        log::info!(
            "median centered surface mse at {f} factors: {:.6e}",
            table.median_centered_mse(f)
        );
    }
    emit(args.out.as_deref(), &table.to_tsv())
}
