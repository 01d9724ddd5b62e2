//! Data preparation, per-seed runs and the CSV artifacts they produce.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, Variant};
use super::modelio::save_model;
use crate::datakit::{
    apply_label_mask, apply_view_mask, generate_synthetic, load_csv_views, metric_nmse, split, MultiViewDataset,
    Standardizer,
};
use crate::diffcore::{atomic_write, Tensor};
use crate::error::{Error, Result};
use crate::genmodels::{ModelKind, MultiViewModel};
use crate::trainer::{classification_accuracy, heldout_nmse, train, RunRecord};

pub const METRICS_HEADER: &str = "seed,epoch,objective,val_acc,val_nmse,lambda_1,lambda_2,seconds";
const METRIC_COLUMNS: [&str; 6] = ["objective", "val_acc", "val_nmse", "lambda_1", "lambda_2", "seconds"];

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MVFUSION_THREADS";

/// The dataset named by `[data]`, before splitting and masking.
pub fn load_base_dataset(cfg: &ExperimentConfig) -> Result<MultiViewDataset> {
    match (&cfg.data.synthetic, &cfg.data.csv) {
        (Some(spec), None) => Ok(generate_synthetic(spec)?.0),
        (None, Some(csv)) => load_csv_views(&csv.paths(), csv.num_classes),
        _ => Err(Error::Config("set exactly one of [data.synthetic] and [data.csv]".into())),
    }
}

/// Train/validation/test splits for one seed, standardized.
#[derive(Debug, Clone)]
pub struct PreparedSplits {
    pub train: MultiViewDataset,
    pub validation: MultiViewDataset,
    pub test: MultiViewDataset,
    pub standardizer: Option<Standardizer>,
}

/// Split, then hide labels and views in the training part only; validation
/// and test keep every label and view.
pub fn prepare_splits(
    cfg: &ExperimentConfig,
    base: &MultiViewDataset,
    seed: u64,
    fraction_labeled: f64,
    fraction_missing: f64,
    variant: Variant,
) -> Result<PreparedSplits> {
    let mut parts = split(base, &cfg.data.split, seed)?;
    let test = parts.pop().expect("three parts");
    let validation = parts.pop().expect("three parts");
    let mut train = parts.pop().expect("three parts");
    if fraction_labeled < 1.0 {
        train = apply_label_mask(&train, fraction_labeled, seed)?;
    }
    if fraction_missing > 0.0 {
        train = apply_view_mask(&train, fraction_missing, cfg.data.which_view_missing - 1, seed)?;
    }
    train = match variant {
        Variant::Simvae => train,
        Variant::Fulldata => train.unmask(),
        Variant::Partialdata => train.complete_only(),
    };
    if cfg.train.labeled_only {
        let idx: Vec<usize> = (0..train.len()).filter(|&i| train.is_labeled(i)).collect();
        train = train.subset(&idx);
    }
    if !cfg.data.standardize {
        return Ok(PreparedSplits {
            train,
            validation,
            test,
            standardizer: None,
        });
    }
    let s = Standardizer::fit(&train);
    Ok(PreparedSplits {
        train: s.apply(&train),
        validation: s.apply(&validation),
        test: s.apply(&test),
        standardizer: Some(s),
    })
}

/// NMSE of predicting the training split's observed column means on the rows
/// [`heldout_nmse`] scores.
pub fn column_mean_nmse(train: &MultiViewDataset, test: &MultiViewDataset) -> Result<Option<f64>> {
    let m = train.missing_view();
    let rows: Vec<&[f64]> = (0..train.len()).filter_map(|i| train.view_row(m, i)).collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let d = train.view(m).cols();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
    let truth = match test.withheld_rows() {
        Some((idx, t)) if !idx.is_empty() => t,
        _ => test.view(m).clone(),
    };
    let hat = Tensor::matrix(truth.rows(), d, mean.repeat(truth.rows()))?;
    Ok(Some(metric_nmse(&truth, &hat)?))
}

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub record: RunRecord,
    pub test_accuracy: Option<f64>,
    pub test_nmse: Option<f64>,
    pub baseline_nmse: Option<f64>,
    pub model: MultiViewModel,
    pub standardizer: Option<Standardizer>,
}

/// One grid cell: the fractions and the training-set variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub fraction_labeled: f64,
    pub fraction_missing: f64,
    pub variant: Variant,
}

impl Cell {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            fraction_labeled: cfg.data.fraction_labeled,
            fraction_missing: cfg.data.fraction_missing,
            variant: Variant::Simvae,
        }
    }

    pub fn dir_name(&self) -> String {
        format!(
            "labeled_{}_missing_{}_{}",
            self.fraction_labeled,
            self.fraction_missing,
            self.variant.name()
        )
    }
}

pub fn run_seed(cfg: &ExperimentConfig, base: &MultiViewDataset, cell: Cell, seed: u64) -> Result<SeedOutcome> {
    let splits = prepare_splits(cfg, base, seed, cell.fraction_labeled, cell.fraction_missing, cell.variant)?;
    let tc = cfg.train_config(seed);
    let (model, mut record) = train(&splits.train, Some(&splits.validation), &tc)?;
    if !cfg.output.wall_clock {
        for e in &mut record.epochs {
            e.seconds = 0.0;
        }
    }
    let test_accuracy = classification_accuracy(&model, &splits.test.unmask())?.0;
    let test_nmse = heldout_nmse(&model, &splits.test)?;
    let baseline_nmse = if model.kind() == ModelKind::Simvae {
        column_mean_nmse(&splits.train, &splits.test)?
    } else {
        None
    };
    Ok(SeedOutcome {
        seed,
        record,
        test_accuracy,
        test_nmse,
        baseline_nmse,
        model,
        standardizer: splits.standardizer,
    })
}

/// Thread pool honoring [`THREADS_ENV`].
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run every (cell, seed) pair, in parallel; results come back in input
/// order regardless of scheduling.
pub fn run_cells(cfg: &ExperimentConfig, base: &MultiViewDataset, cells: &[Cell]) -> Result<Vec<Vec<SeedOutcome>>> {
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.output.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = worker_pool()?;
    let results: Vec<Result<SeedOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, s)| {
                log::info!("{} seed {s}", cells[c].dir_name());
                run_seed(cfg, base, cells[c], s)
            })
            .collect()
    });
    let mut out: Vec<Vec<SeedOutcome>> = cells.iter().map(|_| Vec::new()).collect();
    for ((c, _), r) in jobs.into_iter().zip(results) {
        out[c].push(r?);
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedOutcome>> {
    let base = load_base_dataset(cfg)?;
    Ok(run_cells(cfg, &base, &[Cell::from_config(cfg)])?.pop().expect("one cell"))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `metrics.csv`: one row per epoch per seed.
pub fn metrics_csv(outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for o in outcomes {
        for e in &o.record.epochs {
            let lam = |i: usize| cell(e.lambda.get(i).copied());
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                o.seed,
                e.epoch,
                e.objective,
                cell(e.val_acc),
                cell(e.val_nmse),
                lam(0),
                lam(1),
                e.seconds
            )
            .expect("string write");
        }
    }
    s
}

/// Mean and sample standard deviation over seeds of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

/// Final-epoch statistics over seeds, computed from the text of a
/// `metrics.csv`.
pub fn summarize_metrics(metrics: &str) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(metrics.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::Config(format!("unexpected metrics header {header:?}")));
    }
    // last row per seed, in first-appearance order
    let mut finals: Vec<(String, csv::StringRecord)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
        let seed = rec.get(0).unwrap_or_default().to_string();
        match finals.iter_mut().find(|(s, _)| *s == seed) {
            Some(slot) => slot.1 = rec,
            None => finals.push((seed, rec)),
        }
    }
    let mut rows = Vec::new();
    for (j, name) in METRIC_COLUMNS.iter().enumerate() {
        let mut values = Vec::new();
        for (_, rec) in &finals {
            let raw = rec.get(j + 2).unwrap_or_default();
            if !raw.is_empty() {
                values.push(
                    raw.parse::<f64>()
                        .map_err(|_| Error::Config(format!("non-numeric {name} value {raw:?}")))?,
                );
            }
        }
        let (mean, std) = mean_std(&values);
        rows.push(SummaryRow {
            metric: name.to_string(),
            n: values.len(),
            mean,
            std,
        });
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("metric,n,mean,std\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.metric, r.n, cell(r.mean), cell(r.std)).expect("string write");
    }
    s
}

/// `test_metrics.csv`: per-seed held-out scores.
pub fn test_metrics_csv(outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from("seed,test_acc,test_nmse,baseline_nmse\n");
    for o in outcomes {
        writeln!(
            s,
            "{},{},{},{}",
            o.seed,
            cell(o.test_accuracy),
            cell(o.test_nmse),
            cell(o.baseline_nmse)
        )
        .expect("string write");
    }
    s
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("model_seed{seed}.ckpt"))
}

/// Write `metrics.csv`, `summary.csv`, `test_metrics.csv` and one
/// checkpoint per seed into `dir`.
pub fn write_run_artifacts(dir: &Path, outcomes: &mut [SeedOutcome], checkpoints: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let metrics = metrics_csv(outcomes);
    atomic_write(&dir.join("metrics.csv"), metrics.as_bytes())?;
    atomic_write(&dir.join("summary.csv"), summary_csv(&summarize_metrics(&metrics)?).as_bytes())?;
    atomic_write(&dir.join("test_metrics.csv"), test_metrics_csv(outcomes).as_bytes())?;
    if checkpoints {
        for o in outcomes.iter_mut() {
            let p = checkpoint_path(dir, o.seed);
            save_model(&p, &o.model, o.standardizer.as_ref())?;
            o.record.checkpoint = Some(p);
        }
    }
    Ok(())
}

/// The sweep's grid cells in row order.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let s = &cfg.sweep;
    let mut cells = Vec::new();
    for &fl in &s.fraction_labeled {
        for &fm in &s.fraction_missing {
            for &variant in &s.variants {
                cells.push(Cell {
                    fraction_labeled: fl,
                    fraction_missing: fm,
                    variant,
                });
            }
        }
    }
    cells
}

/// One row per grid cell: test-split mean and std over seeds.
pub fn sweep_summary_csv(cells: &[Cell], results: &[Vec<SeedOutcome>]) -> String {
    let mut s = String::from(
        "fraction_labeled,fraction_missing,variant,seeds,test_acc_mean,test_acc_std,test_nmse_mean,test_nmse_std,baseline_nmse_mean,lambda_1_mean,lambda_2_mean\n",
    );
    for (c, outs) in cells.iter().zip(results) {
        let collect = |f: &dyn Fn(&SeedOutcome) -> Option<f64>| -> Vec<f64> { outs.iter().filter_map(f).collect() };
        let (acc_m, acc_s) = mean_std(&collect(&|o| o.test_accuracy));
        let (nmse_m, nmse_s) = mean_std(&collect(&|o| o.test_nmse));
        let (base_m, _) = mean_std(&collect(&|o| o.baseline_nmse));
        let lam = |i: usize| mean_std(&collect(&|o| o.record.epochs.last().and_then(|e| e.lambda.get(i).copied()))).0;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.fraction_labeled,
            c.fraction_missing,
            c.variant.name(),
            outs.len(),
            cell(acc_m),
            cell(acc_s),
            cell(nmse_m),
            cell(nmse_s),
            cell(base_m),
            cell(lam(0)),
            cell(lam(1))
        )
        .expect("string write");
    }
    s
}
