//! Stratified minibatch training and evaluation.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datakit::{accuracy, metric_nmse, per_class_accuracy, MultiViewDataset};
use crate::diffcore::{clip_global_norm, AdamState, ParamStore, Tensor, DEFAULT_VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::genmodels::{
    classify, impute, negative_bound, negative_bound_with_grads, objective_with_grads, Architecture, ModelDims,
    ModelKind, MonteCarlo, MultiViewModel, NoiseSource, NoiseStream, ObjectiveValue, Strata, Stratum, Weighting,
};

const PLAN_STREAM: u64 = 11;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Latent draws per mixture component.
    pub t: usize,
    /// Draws of the missing view.
    pub t_m: usize,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub variance_floor: f64,
    pub seed: u64,
    /// Global-norm gradient clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Reuse the same noise every epoch (a frozen stochastic objective).
    pub fixed_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Smvae,
            latent_dim: 30,
            hidden_widths: vec![100, 50],
            lr: 3e-4,
            batch_size: 64,
            epochs: 100,
            t: 1,
            t_m: 1,
            c: 1.0,
            c1: 1.0,
            c2: 1.0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            seed: 0,
            grad_clip: None,
            fixed_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.t == 0 || self.t_m == 0 {
            return bad("t and t_m must be >= 1".into());
        }
        for (name, c) in [("c", self.c), ("c1", self.c1), ("c2", self.c2)] {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("{name} must be > 0, got {c}"));
            }
        }
        if !(self.variance_floor > 0.0) {
            return bad("variance_floor must be > 0".into());
        }
        if self.latent_dim == 0 || self.hidden_widths.contains(&0) {
            return bad("layer widths must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        Ok(())
    }

    pub fn weighting(&self) -> Weighting {
        Weighting {
            c: self.c,
            c1: self.c1,
            c2: self.c2,
        }
    }

    /// Architecture matching `ds` under this configuration.
    pub fn architecture(&self, ds: &MultiViewDataset) -> Result<Architecture> {
        let mut dims = ModelDims::new(&ds.view_dims(), ds.num_classes(), self.latent_dim, &self.hidden_widths);
        dims.variance_floor = self.variance_floor;
        dims.missing_view = ds.missing_view();
        Architecture::new(self.kind, dims)
    }
}

/// Row indices of one minibatch, by stratum.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MinibatchPlan {
    pub labeled_complete: Vec<usize>,
    pub labeled_incomplete: Vec<usize>,
    pub unlabeled_complete: Vec<usize>,
    pub unlabeled_incomplete: Vec<usize>,
}

impl MinibatchPlan {
    pub fn n_labeled(&self) -> usize {
        self.labeled_complete.len() + self.labeled_incomplete.len()
    }
    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_complete.len() + self.unlabeled_incomplete.len()
    }
    pub fn n_complete(&self) -> usize {
        self.labeled_complete.len() + self.unlabeled_complete.len()
    }
    pub fn n_incomplete(&self) -> usize {
        self.labeled_incomplete.len() + self.unlabeled_incomplete.len()
    }
    pub fn len(&self) -> usize {
        self.n_labeled() + self.n_unlabeled()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn indices(&self) -> Vec<usize> {
        [
            &self.labeled_complete,
            &self.labeled_incomplete,
            &self.unlabeled_complete,
            &self.unlabeled_incomplete,
        ]
        .into_iter()
        .flatten()
        .copied()
        .collect()
    }
}

fn check_dataset(ds: &MultiViewDataset, kind: ModelKind) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if kind != ModelKind::Simvae && ds.num_complete() < ds.len() {
        return Err(Error::Config(format!("the {} model needs every view present", kind.name())));
    }
    if kind.is_supervised() && ds.num_labeled() == 0 {
        return Err(Error::Config("training set has no labeled samples".into()));
    }
    if kind == ModelKind::Simvae && ds.num_complete() == 0 {
        return Err(Error::Config("training set has no complete samples".into()));
    }
    Ok(())
}

/// Partition one epoch into minibatches.
///
/// There are `ceil(n / batch_size)` batches, reduced if necessary so that
/// each gets at least one labeled sample (and one complete sample for the
/// incomplete-data model). Strata are shuffled and dealt round-robin.
pub fn plan_minibatches(ds: &MultiViewDataset, cfg: &TrainConfig, epoch: usize) -> Result<Vec<MinibatchPlan>> {
    check_dataset(ds, cfg.kind)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(PLAN_STREAM);
    // one independent generator per epoch
    let mut rng = ChaCha12Rng::seed_from_u64(rng.random::<u64>() ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

    let s = ds.strata();
    let (mut lc, mut li, mut uc, mut ui) = if cfg.kind.is_supervised() {
        (s.labeled_complete, s.labeled_incomplete, s.unlabeled_complete, s.unlabeled_incomplete)
    } else {
        // labels play no role: everything is an unlabeled complete sample
        let mut all = s.labeled_complete;
        all.extend(s.unlabeled_complete);
        all.sort_unstable();
        (Vec::new(), Vec::new(), all, Vec::new())
    };
    for v in [&mut lc, &mut li, &mut uc, &mut ui] {
        v.shuffle(&mut rng);
    }

    let n = ds.len();
    let mut nb = n.div_ceil(cfg.batch_size);
    if cfg.kind.is_supervised() {
        nb = nb.min(lc.len() + li.len());
    }
    if cfg.kind == ModelKind::Simvae {
        nb = nb.min(lc.len() + uc.len());
    }
    let nb = nb.max(1);
    let mut plans = vec![MinibatchPlan::default(); nb];

    let mut counter = 0;
    for &i in &lc {
        plans[counter % nb].labeled_complete.push(i);
        counter += 1;
    }
    for &i in &uc {
        plans[counter % nb].unlabeled_complete.push(i);
        counter += 1;
    }
    let mut counter = lc.len() % nb;
    for &i in &li {
        plans[counter % nb].labeled_incomplete.push(i);
        counter += 1;
    }
    for &i in &ui {
        let b = (0..nb).min_by_key(|&b| (plans[b].len(), b)).expect("nb >= 1");
        plans[b].unlabeled_incomplete.push(i);
    }
    Ok(plans)
}

/// Gather the rows of `plan` into model-ready strata. Row indices double as
/// noise keys.
pub fn strata_for(ds: &MultiViewDataset, plan: &MinibatchPlan, kind: ModelKind) -> Strata {
    let obs = 1 - ds.missing_view().min(1);
    let labels = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| ds.labels()[i].expect("labeled stratum")).collect() };
    let complete = |idx: &[usize], labeled: bool| Stratum {
        views: ds.views().iter().map(|t| t.select_rows(idx)).collect(),
        labels: labeled.then(|| labels(idx)),
        ids: idx.to_vec(),
    };
    let incomplete = |idx: &[usize], labeled: bool| Stratum {
        views: vec![ds.view(obs).select_rows(idx)],
        labels: labeled.then(|| labels(idx)),
        ids: idx.to_vec(),
    };
    let sup = kind.is_supervised();
    Strata {
        labeled_complete: complete(&plan.labeled_complete, sup),
        labeled_incomplete: incomplete(&plan.labeled_incomplete, true),
        unlabeled_complete: complete(&plan.unlabeled_complete, false),
        unlabeled_incomplete: incomplete(&plan.unlabeled_incomplete, false),
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    // splitmix64 finalizer over a running state
    h ^= v.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// Counter-based standard-normal noise keyed by
/// `(seed, epoch, batch, sample, stream)`: any evaluation order yields the
/// same draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterNoise {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl CounterNoise {
    pub fn new(seed: u64, epoch: usize, batch: usize) -> Self {
        Self {
            seed,
            epoch: epoch as u64,
            batch: batch as u64,
        }
    }
}

impl NoiseSource for CounterNoise {
    fn fill(&self, sample: usize, stream: NoiseStream, out: &mut [f64]) {
        let key = [self.seed, self.epoch, self.batch].into_iter().fold(0x5EED, mix);
        let (tag, a, b, c) = match stream {
            NoiseStream::Latent { component, t, draw } => (1, component, t, draw),
            NoiseStream::Missing { draw } => (2, draw, 0, 0),
        };
        let sub = [sample as u64, tag, a as u64, b as u64, c as u64].into_iter().fold(0xD1CE, mix);
        let mut rng = ChaCha12Rng::seed_from_u64(key);
        rng.set_stream(sub);
        for o in out {
            *o = rng.sample(StandardNormal);
        }
    }
}

/// Wraps a noise source and records every draw handed out.
pub struct NoiseLedger<'a> {
    inner: &'a dyn NoiseSource,
    entries: Mutex<Vec<(usize, NoiseStream, Vec<f64>)>>,
}

impl<'a> NoiseLedger<'a> {
    pub fn new(inner: &'a dyn NoiseSource) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<(usize, NoiseStream, Vec<f64>)> {
        self.entries.lock().expect("ledger lock").clone()
    }
}

impl NoiseSource for NoiseLedger<'_> {
    fn fill(&self, sample: usize, stream: NoiseStream, out: &mut [f64]) {
        self.inner.fill(sample, stream, out);
        self.entries.lock().expect("ledger lock").push((sample, stream, out.to_vec()));
    }
}

fn first_nonfinite_block(grads: &ParamStore) -> Option<String> {
    grads.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n.to_string())
}

/// Minibatch objective and its gradients with the reparameterized
/// estimators. Each `ε` is drawn once per (sample, component, draw) and feeds
/// the decoder, encoder and mixture-weight gradients alike.
pub fn estimate_gradients(
    model: &MultiViewModel,
    ds: &MultiViewDataset,
    plan: &MinibatchPlan,
    cfg: &TrainConfig,
    noise: &dyn NoiseSource,
) -> Result<(ObjectiveValue, ParamStore)> {
    if plan.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let strata = strata_for(ds, plan, cfg.kind);
    let mc = MonteCarlo::new(noise).with_samples(cfg.t, cfg.t_m);
    let (value, grads) = objective_with_grads(model, &strata, &cfg.weighting(), mc)?;
    if let Some(block) = first_nonfinite_block(&grads) {
        // find the sample responsible
        for i in plan.indices() {
            let single = MinibatchPlan {
                labeled_complete: plan.labeled_complete.iter().copied().filter(|&j| j == i).collect(),
                labeled_incomplete: plan.labeled_incomplete.iter().copied().filter(|&j| j == i).collect(),
                unlabeled_complete: plan.unlabeled_complete.iter().copied().filter(|&j| j == i).collect(),
                unlabeled_incomplete: plan.unlabeled_incomplete.iter().copied().filter(|&j| j == i).collect(),
            };
            let s = strata_for(ds, &single, cfg.kind);
            let bad = match negative_bound_with_grads(model, &s, mc) {
                Ok((_, g)) => first_nonfinite_block(&g).is_some(),
                Err(_) => true,
            };
            if bad {
                return Err(Error::Numeric(format!("non-finite gradient in {block} from sample {i}")));
            }
        }
        return Err(Error::Numeric(format!(
            "non-finite gradient in {block} from the weighted losses of batch with samples {:?}",
            plan.indices()
        )));
    }
    Ok((value, grads))
}

/// One epoch's entry in a [`RunRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample training objective over the epoch's minibatches.
    pub objective: f64,
    /// Accuracy on the validation split with every view present.
    pub val_acc: Option<f64>,
    /// See [`heldout_nmse`].
    pub val_nmse: Option<f64>,
    pub lambda: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: ModelKind,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

/// Evaluation metrics on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    /// Over rows with a true label; `None` for the unsupervised model.
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Over rows whose missing view has withheld ground truth.
    pub nmse: Option<f64>,
    /// Mean per-row lower bound (labels used where the split has them).
    pub mean_bound: f64,
}

/// Views with every masked row filled by conditional-mean imputation.
pub fn filled_views(model: &MultiViewModel, ds: &MultiViewDataset) -> Result<Vec<Tensor>> {
    let mut views = ds.views().to_vec();
    let missing: Vec<usize> = (0..ds.len()).filter(|&i| !ds.is_complete(i)).collect();
    if missing.is_empty() {
        return Ok(views);
    }
    if model.kind() != ModelKind::Simvae {
        return Err(Error::Contract(format!("the {} model cannot fill missing views", model.kind().name())));
    }
    let obs = model.arch.observed_view();
    let mis = model.arch.missing_view();
    let fill = impute(model, &ds.view(obs).select_rows(&missing))?;
    for (r, &i) in missing.iter().enumerate() {
        views[mis].row_slice_mut(i).copy_from_slice(fill.row_slice(r));
    }
    Ok(views)
}

/// Classification accuracy over rows with a true label, overall and per
/// class. Masked views are filled by imputation first.
pub fn classification_accuracy(model: &MultiViewModel, ds: &MultiViewDataset) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    let k = ds.num_classes();
    if !model.kind().is_supervised() {
        return Ok((None, vec![None; k]));
    }
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.true_labels()[i].is_some()).collect();
    if rows.is_empty() {
        return Ok((None, vec![None; k]));
    }
    let views = filled_views(model, ds)?;
    let sel: Vec<Tensor> = views.iter().map(|t| t.select_rows(&rows)).collect();
    let pred: Vec<usize> = classify(model, &sel)?.iter().map(|p| p.argmax()).collect();
    let truth: Vec<usize> = rows.iter().map(|&i| ds.true_labels()[i].expect("filtered")).collect();
    Ok((Some(accuracy(&pred, &truth)?), per_class_accuracy(&pred, &truth, k)))
}

/// Imputation NMSE over the rows whose missing view was withheld by masking.
pub fn masked_nmse(model: &MultiViewModel, ds: &MultiViewDataset) -> Result<Option<f64>> {
    match (model.kind(), ds.withheld_rows()) {
        (ModelKind::Simvae, Some((idx, truth))) if !idx.is_empty() => {
            let obs = model.arch.observed_view();
            let hat = impute(model, &ds.view(obs).select_rows(&idx))?;
            Ok(Some(metric_nmse(&truth, &hat)?))
        }
        _ => Ok(None),
    }
}

/// Imputation NMSE on a held-out split: over the masked rows if there are
/// any, otherwise over every row, predicting the missing view from the
/// observed one.
pub fn heldout_nmse(model: &MultiViewModel, ds: &MultiViewDataset) -> Result<Option<f64>> {
    if model.kind() != ModelKind::Simvae || ds.is_empty() {
        return Ok(None);
    }
    if ds.num_complete() < ds.len() {
        return masked_nmse(model, ds);
    }
    let hat = impute(model, ds.view(model.arch.observed_view()))?;
    Ok(Some(metric_nmse(ds.view(model.arch.missing_view()), &hat)?))
}

/// Accuracy, imputation NMSE and mean bound of `model` on `ds`.
pub fn evaluate(model: &MultiViewModel, ds: &MultiViewDataset) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::UndefinedMetric("evaluation split is empty".into()));
    }
    let kind = model.kind();
    let (acc, per_class) = classification_accuracy(model, ds)?;
    let nmse = masked_nmse(model, ds)?;

    // Bound under a fixed evaluation noise key; labels as the split has them.
    let plan = MinibatchPlan {
        labeled_complete: (0..ds.len()).filter(|&i| ds.is_complete(i) && (kind.is_supervised() && ds.is_labeled(i))).collect(),
        labeled_incomplete: (0..ds.len()).filter(|&i| !ds.is_complete(i) && ds.is_labeled(i)).collect(),
        unlabeled_complete: (0..ds.len()).filter(|&i| ds.is_complete(i) && !(kind.is_supervised() && ds.is_labeled(i))).collect(),
        unlabeled_incomplete: (0..ds.len()).filter(|&i| !ds.is_complete(i) && !ds.is_labeled(i)).collect(),
    };
    let strata = strata_for(ds, &plan, kind);
    let noise = CounterNoise::new(0x00E7_A1, usize::MAX, 0);
    let bound = negative_bound(model, &strata, MonteCarlo::new(&noise))?;
    Ok(EvalMetrics {
        accuracy: acc,
        per_class_accuracy: per_class,
        nmse,
        mean_bound: -bound.value / ds.len() as f64,
    })
}

/// Optimize a fresh model on `train`, evaluating on `validation` after every
/// epoch. Deterministic given `cfg.seed`.
pub fn train(
    train: &MultiViewDataset,
    validation: Option<&MultiViewDataset>,
    cfg: &TrainConfig,
) -> Result<(MultiViewModel, RunRecord)> {
    cfg.validate()?;
    check_dataset(train, cfg.kind)?;
    let arch = cfg.architecture(train)?;
    let mut model = MultiViewModel::new(arch, cfg.seed)?;
    let mut adam = AdamState::new(&model.params, cfg.lr)?;
    let mut record = RunRecord {
        kind: cfg.kind,
        seed: cfg.seed,
        epochs: Vec::with_capacity(cfg.epochs),
        checkpoint: None,
    };
    // accuracy on complete views; masked validation rows only serve imputation
    let val_complete = validation.map(MultiViewDataset::unmask);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let plans = plan_minibatches(train, cfg, epoch)?;
        let mut total = 0.0;
        for (b, plan) in plans.iter().enumerate() {
            let noise = CounterNoise::new(cfg.seed, if cfg.fixed_noise { 0 } else { epoch }, b);
            let (value, mut grads) = estimate_gradients(&model, train, plan, cfg, &noise)?;
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut grads, max);
            }
            adam.step(&mut model.params, &grads)?;
            total += value.value;
        }
        let (val_acc, val_nmse) = match (validation, &val_complete) {
            (Some(v), Some(full)) => (classification_accuracy(&model, full)?.0, heldout_nmse(&model, v)?),
            _ => (None, None),
        };
        let rec = EpochRecord {
            epoch: epoch + 1,
            objective: total / train.len() as f64,
            val_acc,
            val_nmse,
            lambda: model.mixture_weights(),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {} objective {:.4} val_acc {:?} val_nmse {:?} lambda {:?}",
            rec.epoch,
            rec.objective,
            rec.val_acc,
            rec.val_nmse,
            rec.lambda
        );
        record.epochs.push(rec);
    }
    Ok((model, record))
}

#[cfg(test)]
mod tests;
