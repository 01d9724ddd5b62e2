//! Config-driven experiments: single runs, grid sweeps, numerical
//! self-checks and imputation from a checkpoint.

mod config;
mod experiment;
mod modelio;
pub mod selfcheck;

use std::path::{Path, PathBuf};

pub use config::{
    CsvSource, DataConfig, ExperimentConfig, ImputeConfig, ModelConfig, OutputConfig, SweepConfig, TrainSection, Variant,
};
pub use experiment::{
    checkpoint_path, column_mean_nmse, load_base_dataset, mean_std, metrics_csv, prepare_splits, run_cells,
    run_experiment, run_seed, summarize_metrics, summary_csv, sweep_cells, sweep_summary_csv, test_metrics_csv,
    worker_pool, write_run_artifacts, Cell, PreparedSplits, SeedOutcome, SummaryRow, METRICS_HEADER, THREADS_ENV,
};
pub use modelio::{load_model, model_from_store, save_model};
pub use selfcheck::{CheckResult, SelfcheckOptions};

use crate::datakit::{read_matrix_csv, write_matrix_csv};
use crate::diffcore::atomic_write;
use crate::error::{Error, Result};
use crate::genmodels::{impute, ModelKind};

/// Environment variable naming a gradient estimator whose analytic
/// gradient `selfcheck` should corrupt (fault-injection hook).
pub const CORRUPT_ENV: &str = "MVFUSION_SELFCHECK_CORRUPT";

/// Process exit status for an error: 2 for configuration problems, 1 for
/// everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

/// Command-line overrides of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &overrides.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seeds) = &overrides.seeds {
        cfg.output.seeds = seeds.clone();
    }
    Ok(cfg)
}

fn archive_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    atomic_write(&dir.join("config.toml"), text.as_bytes())
}

/// Train one model per seed; writes `metrics.csv`, `summary.csv`,
/// `test_metrics.csv` and checkpoints into the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    let mut outcomes = run_experiment(cfg)?;
    archive_config(dir, cfg)?;
    write_run_artifacts(dir, &mut outcomes, cfg.output.checkpoints)?;
    Ok(outcomes)
}

/// Run the labeled × missing × variant grid. Each cell gets its own
/// subdirectory of run artifacts; `sweep_summary.csv` has one row per cell.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate_sweep()?;
    let dir = &cfg.output.dir;
    let base = load_base_dataset(cfg)?;
    let cells = sweep_cells(cfg);
    let mut results = run_cells(cfg, &base, &cells)?;
    archive_config(dir, cfg)?;
    for (c, outs) in cells.iter().zip(results.iter_mut()) {
        write_run_artifacts(&dir.join("cells").join(c.dir_name()), outs, cfg.output.checkpoints)?;
    }
    let path = dir.join("sweep_summary.csv");
    atomic_write(&path, sweep_summary_csv(&cells, &results).as_bytes())?;
    Ok(path)
}

/// Options for `selfcheck`, honoring [`CORRUPT_ENV`].
pub fn selfcheck_options(quick: bool) -> Result<SelfcheckOptions> {
    let mut opts = if quick {
        SelfcheckOptions::quick()
    } else {
        SelfcheckOptions::default()
    };
    if let Ok(name) = std::env::var(CORRUPT_ENV) {
        if !selfcheck::ESTIMATORS.contains(&name.as_str()) {
            return Err(Error::Config(format!(
                "{CORRUPT_ENV}={name:?} is not one of {:?}",
                selfcheck::ESTIMATORS
            )));
        }
        opts.corrupt = Some(name);
    }
    Ok(opts)
}

pub fn cmd_selfcheck(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    selfcheck::run_selfcheck(opts)
}

/// Conditional-mean imputation of the missing view for every row of the
/// `[impute]` input file, written row-aligned in original feature units.
pub fn cmd_impute(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let ic = cfg
        .impute
        .as_ref()
        .ok_or_else(|| Error::Config("impute needs an [impute] section with checkpoint and input".into()))?;
    let (model, standardizer) = load_model(&ic.checkpoint)?;
    if model.kind() != ModelKind::Simvae {
        return Err(Error::Config(format!(
            "{} holds a {} model; imputation needs a simvae checkpoint",
            ic.checkpoint.display(),
            model.kind().name()
        )));
    }
    let (obs, mis) = (model.arch.observed_view(), model.arch.missing_view());
    let mut x = read_matrix_csv(&ic.input)?;
    if let Some(s) = &standardizer {
        x = s.transform_view(obs, &x);
    }
    let mut hat = impute(&model, &x)?;
    if let Some(s) = &standardizer {
        hat = s.inverse_view(mis, &hat);
    }
    let out = ic.output.clone().unwrap_or_else(|| cfg.output.dir.join("imputed.csv"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_matrix_csv(&out, &hat)?;
    Ok(out)
}
