//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datakit::{CsvPaths, SyntheticSpec};
use crate::error::{Error, Result};
use crate::genmodels::ModelKind;
use crate::trainer::TrainConfig;

/// A whole experiment: data, model, optimizer, sweeps and outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub sweep: SweepConfig,
    pub impute: Option<ImputeConfig>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub csv: Option<CsvSource>,
    /// Fraction of training rows that keep their label.
    pub fraction_labeled: f64,
    /// Fraction of training rows whose `which_view_missing` view is withheld.
    pub fraction_missing: f64,
    /// 1-based.
    pub which_view_missing: usize,
    /// Train / validation / test proportions.
    pub split: Vec<f64>,
    /// Standardize features with training-split statistics.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: None,
            csv: None,
            fraction_labeled: 1.0,
            fraction_missing: 0.0,
            which_view_missing: 2,
            split: vec![0.8, 0.1, 0.1],
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub view1: PathBuf,
    pub view2: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl CsvSource {
    pub fn paths(&self) -> CsvPaths {
        CsvPaths {
            view1: self.view1.clone(),
            view2: self.view2.clone(),
            labels: self.labels.clone(),
            mask: self.mask.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub variance_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: t.kind,
            latent_dim: t.latent_dim,
            hidden_widths: t.hidden_widths,
            variance_floor: t.variance_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub t: usize,
    pub t_m: usize,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub grad_clip: Option<f64>,
    pub fixed_noise: bool,
    /// Ablation: train on the labeled rows only.
    pub labeled_only: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            t: t.t,
            t_m: t.t_m,
            c: t.c,
            c1: t.c1,
            c2: t.c2,
            grad_clip: t.grad_clip,
            fixed_noise: t.fixed_noise,
            labeled_only: false,
        }
    }
}

/// How the training split is presented to the incomplete-data model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Masked rows kept as incomplete samples.
    Simvae,
    /// No view withheld: the upper reference.
    Fulldata,
    /// Masked rows discarded: the lower reference.
    Partialdata,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Simvae => "simvae",
            Variant::Fulldata => "fulldata",
            Variant::Partialdata => "partialdata",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fraction_labeled: Vec<f64>,
    pub fraction_missing: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fraction_labeled: vec![0.01, 0.02, 0.03],
            fraction_missing: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            variants: vec![Variant::Simvae, Variant::Fulldata, Variant::Partialdata],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeConfig {
    pub checkpoint: PathBuf,
    /// Observed-view matrix with an `f0,f1,...` header.
    pub input: PathBuf,
    /// Defaults to `imputed.csv` in the output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Record wall-clock seconds per epoch; when off the column is 0 and
    /// reruns are byte-identical.
    pub wall_clock: bool,
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            seeds: (0..5).collect(),
            wall_clock: false,
            checkpoints: true,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl ExperimentConfig {
    /// Parse a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = &mut self.data.csv {
            fix(&mut c.view1);
            fix(&mut c.view2);
            fix(&mut c.labels);
            if let Some(m) = &mut c.mask {
                fix(m);
            }
        }
        if let Some(i) = &mut self.impute {
            fix(&mut i.checkpoint);
            fix(&mut i.input);
            if let Some(o) = &mut i.output {
                fix(o);
            }
        }
        fix(&mut self.output.dir);
    }

    /// Trainer settings for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let (m, t) = (&self.model, &self.train);
        TrainConfig {
            kind: m.kind,
            latent_dim: m.latent_dim,
            hidden_widths: m.hidden_widths.clone(),
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            t: t.t,
            t_m: t.t_m,
            c: t.c,
            c1: t.c1,
            c2: t.c2,
            variance_floor: m.variance_floor,
            seed,
            grad_clip: t.grad_clip,
            fixed_noise: t.fixed_noise,
        }
    }

    /// Checks shared by `train` and `sweep`.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.synthetic, &d.csv) {
            (Some(_), Some(_)) => return Err(Error::Config("set exactly one of [data.synthetic] and [data.csv], not both".into())),
            (None, None) => return Err(Error::Config("no data source: add [data.synthetic] or [data.csv]".into())),
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {}
        }
        check(d.fraction_labeled > 0.0 && d.fraction_labeled <= 1.0, || {
            format!("data.fraction_labeled must be in (0, 1], got {}", d.fraction_labeled)
        })?;
        check((0.0..1.0).contains(&d.fraction_missing), || {
            format!("data.fraction_missing must be in [0, 1), got {}", d.fraction_missing)
        })?;
        check(matches!(d.which_view_missing, 1 | 2), || {
            format!("data.which_view_missing must be 1 or 2, got {}", d.which_view_missing)
        })?;
        check(
            d.split.len() == 3 && d.split.iter().all(|&r| r > 0.0) && (d.split.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            || format!("data.split must be three positive proportions summing to 1, got {:?}", d.split),
        )?;
        check(
            d.fraction_missing == 0.0 || self.model.kind == ModelKind::Simvae,
            || format!("data.fraction_missing > 0 needs model.kind = \"simvae\", got {:?}", self.model.kind.name()),
        )?;
        check(
            !(self.train.labeled_only && self.model.kind == ModelKind::Mvae),
            || "train.labeled_only needs a supervised model".into(),
        )?;
        check(!self.output.seeds.is_empty(), || "output.seeds must not be empty".into())?;
        let mut seeds = self.output.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        check(seeds.len() == self.output.seeds.len(), || "output.seeds has duplicates".into())?;
        self.train_config(0).validate()
    }

    pub fn validate_sweep(&self) -> Result<()> {
        self.validate()?;
        let s = &self.sweep;
        check(
            !s.fraction_labeled.is_empty() && s.fraction_labeled.iter().all(|&f| f > 0.0 && f <= 1.0),
            || format!("sweep.fraction_labeled must be nonempty within (0, 1], got {:?}", s.fraction_labeled),
        )?;
        check(
            !s.fraction_missing.is_empty() && s.fraction_missing.iter().all(|f| (0.0..1.0).contains(f)),
            || format!("sweep.fraction_missing must be nonempty within [0, 1), got {:?}", s.fraction_missing),
        )?;
        check(!s.variants.is_empty(), || "sweep.variants must not be empty".into())?;
        check(self.model.kind == ModelKind::Simvae, || "sweeps compare incomplete-data variants; set model.kind = \"simvae\"".into())
    }
}
