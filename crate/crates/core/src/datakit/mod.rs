//! Multi-view datasets: synthetic generation, CSV ingestion, masking into
//! the four training strata, splits and evaluation metrics.

mod csvio;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::diffcore::Tensor;
use crate::error::{dim_err, Error, Result};

pub use csvio::{load_csv_views, read_matrix_csv, write_csv_views, write_matrix_csv, CsvPaths};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTruth};

// Independent ChaCha streams per random operation, so the masks commute.
const LABEL_MASK_STREAM: u64 = 1;
const VIEW_MASK_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
pub(crate) const GENERATOR_STREAM: u64 = 4;

pub(crate) fn keyed_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-view feature matrices, labels and the presence mask of the one view
/// that may be missing.
///
/// Rows whose designated view is masked hold zeros in the working matrix;
/// values withheld by [`apply_view_mask`] are kept aside for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<Tensor>,
    labels: Vec<Option<usize>>,
    true_labels: Vec<Option<usize>>,
    present: Vec<bool>,
    missing_view: usize,
    withheld: Option<Tensor>,
    num_classes: usize,
}

/// Row indices of the four strata.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StratumIndices {
    pub labeled_complete: Vec<usize>,
    pub labeled_incomplete: Vec<usize>,
    pub unlabeled_complete: Vec<usize>,
    pub unlabeled_incomplete: Vec<usize>,
}

impl MultiViewDataset {
    /// A fully complete dataset; `None` labels are unlabeled.
    pub fn new(views: Vec<Tensor>, labels: Vec<Option<usize>>, num_classes: usize) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::Config(format!("need at least two views, got {}", views.len())));
        }
        let n = labels.len();
        for (v, t) in views.iter().enumerate() {
            if t.rows() != n {
                return Err(dim_err(format!("view {} rows", v + 1), n, t.rows()));
            }
        }
        if let Some(&y) = labels.iter().flatten().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabel { label: y, classes: num_classes });
        }
        Ok(Self {
            views,
            true_labels: labels.clone(),
            labels,
            present: vec![true; n],
            missing_view: 1,
            withheld: None,
            num_classes,
        })
    }

    /// Marks rows of `view` as absent without any ground truth (as read from
    /// a presence file).
    pub fn with_presence(mut self, view: usize, present: Vec<bool>) -> Result<Self> {
        if view >= self.views.len() {
            return Err(Error::Config(format!("view index {view} out of range")));
        }
        if present.len() != self.len() {
            return Err(dim_err("presence mask", self.len(), present.len()));
        }
        for (i, &p) in present.iter().enumerate() {
            if !p {
                self.views[view].row_slice_mut(i).fill(0.0);
            }
        }
        self.missing_view = view;
        self.present = present;
        self.withheld = None;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Tensor::cols).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Working matrix of view `v`; masked rows are zero.
    pub fn view(&self, v: usize) -> &Tensor {
        &self.views[v]
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    /// Training labels (masked labels are `None`).
    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Labels before label masking; for evaluation only.
    pub fn true_labels(&self) -> &[Option<usize>] {
        &self.true_labels
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    /// Index of the view that may be missing.
    pub fn missing_view(&self) -> usize {
        self.missing_view
    }

    /// Withheld values of the missing view (rows of present samples are zero),
    /// when the mask was applied synthetically.
    pub fn ground_truth(&self) -> Option<&Tensor> {
        self.withheld.as_ref()
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labels[i].is_some()
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.present[i]
    }

    /// Row `i` of view `v`, or `None` if that view is masked for the row.
    pub fn view_row(&self, v: usize, i: usize) -> Option<&[f64]> {
        if v == self.missing_view && !self.present[i] {
            None
        } else {
            Some(self.views[v].row_slice(i))
        }
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn num_complete(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn strata(&self) -> StratumIndices {
        let mut s = StratumIndices::default();
        for i in 0..self.len() {
            match (self.is_labeled(i), self.present[i]) {
                (true, true) => s.labeled_complete.push(i),
                (true, false) => s.labeled_incomplete.push(i),
                (false, true) => s.unlabeled_complete.push(i),
                (false, false) => s.unlabeled_incomplete.push(i),
            }
        }
        s
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            views: self.views.iter().map(|t| t.select_rows(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            true_labels: idx.iter().map(|&i| self.true_labels[i]).collect(),
            present: idx.iter().map(|&i| self.present[i]).collect(),
            missing_view: self.missing_view,
            withheld: self.withheld.as_ref().map(|t| t.select_rows(idx)),
            num_classes: self.num_classes,
        }
    }

    /// Only the rows with every view present.
    pub fn complete_only(&self) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.present[i]).collect();
        self.subset(&idx)
    }

    /// Restore withheld view values. Rows masked without ground truth stay masked.
    pub fn unmask(&self) -> Self {
        let mut out = self.clone();
        if let Some(w) = out.withheld.take() {
            for i in 0..out.len() {
                if !out.present[i] {
                    out.views[out.missing_view].row_slice_mut(i).copy_from_slice(w.row_slice(i));
                    out.present[i] = true;
                }
            }
        }
        out
    }

    /// Observed view of rows whose missing view has withheld ground truth,
    /// together with that ground truth.
    pub fn withheld_rows(&self) -> Option<(Vec<usize>, Tensor)> {
        let w = self.withheld.as_ref()?;
        let idx: Vec<usize> = (0..self.len()).filter(|&i| !self.present[i]).collect();
        Some((idx.clone(), w.select_rows(&idx)))
    }
}

/// Largest-remainder allocation of `total` items proportionally to `sizes`.
fn proportional(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if out[c] < sizes[c] {
            out[c] += 1;
            left -= 1;
        }
    }
    out
}

fn by_class(labels: &[Option<usize>], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (i, y) in labels.iter().enumerate() {
        if let Some(y) = y {
            out[*y].push(i);
        }
    }
    out
}

/// Keep labels on `round(fraction·n)` samples, allocated proportionally to
/// the class sizes with at least one label per class; the rest become
/// unlabeled. True labels are retained for evaluation.
pub fn apply_label_mask(ds: &MultiViewDataset, fraction: f64, seed: u64) -> Result<MultiViewDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("labeled fraction must be in (0, 1], got {fraction}")));
    }
    let classes = by_class(&ds.true_labels, ds.num_classes);
    let sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
    let pool: usize = sizes.iter().sum();
    let target = ((fraction * ds.len() as f64).round() as usize).min(pool);
    let mut quota = proportional(target, &sizes);
    for (c, q) in quota.iter_mut().enumerate() {
        if *q == 0 && sizes[c] > 0 {
            log::warn!("labeled fraction {fraction} leaves class {c} without labels; keeping one");
            *q = 1;
        }
    }
    let mut rng = keyed_rng(seed, LABEL_MASK_STREAM);
    let mut keep = vec![false; ds.len()];
    for (members, &q) in classes.iter().zip(&quota) {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        for &i in &m[..q] {
            keep[i] = true;
        }
    }
    let mut out = ds.clone();
    out.labels = ds.true_labels.iter().zip(&keep).map(|(y, &k)| if k { *y } else { None }).collect();
    Ok(out)
}

/// Withhold view `which_view` on exactly `round(fraction·n)` rows chosen
/// independently of the labels.
pub fn apply_view_mask(ds: &MultiViewDataset, fraction: f64, which_view: usize, seed: u64) -> Result<MultiViewDataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("missing fraction must be in [0, 1), got {fraction}")));
    }
    if which_view >= ds.num_views() {
        return Err(Error::Config(format!("view index {which_view} out of range")));
    }
    let already_masked = ds.present.iter().any(|p| !p);
    if already_masked && which_view != ds.missing_view {
        return Err(Error::Contract("a different view is already masked".into()));
    }
    let n = ds.len();
    let count = (fraction * n as f64).round() as usize;
    let mut out = ds.clone();
    if count == 0 {
        return Ok(out);
    }
    let mut rng = keyed_rng(seed, VIEW_MASK_STREAM);
    let chosen = rand::seq::index::sample(&mut rng, n, count);
    let d = ds.views[which_view].cols();
    let mut withheld = out.withheld.take().unwrap_or_else(|| Tensor::zeros(&[n, d]));
    out.missing_view = which_view;
    for i in chosen.iter() {
        if !out.present[i] {
            continue;
        }
        withheld.row_slice_mut(i).copy_from_slice(ds.views[which_view].row_slice(i));
        out.views[which_view].row_slice_mut(i).fill(0.0);
        out.present[i] = false;
    }
    out.withheld = Some(withheld);
    Ok(out)
}

/// Class-stratified partition into `ratios.len()` disjoint parts.
pub fn split(ds: &MultiViewDataset, ratios: &[f64], seed: u64) -> Result<Vec<MultiViewDataset>> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let n = ds.len();
    // unlabeled rows form their own bucket
    let k = ds.num_classes;
    let mut buckets = by_class(&ds.true_labels, k);
    buckets.push((0..n).filter(|&i| ds.true_labels[i].is_none()).collect());
    let mut rng = keyed_rng(seed, SPLIT_STREAM);
    // interleave by fractional rank so every prefix is close to proportional
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (b, members) in buckets.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        for (r, &i) in members.iter().enumerate() {
            keyed.push(((r as f64 + 0.5) / m, b, i));
        }
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();

    let mut parts = Vec::with_capacity(ratios.len());
    let mut start = 0;
    let mut cum = 0.0;
    for (p, &r) in ratios.iter().enumerate() {
        cum += r;
        let end = if p + 1 == ratios.len() { n } else { (cum * n as f64).round() as usize };
        if end <= start {
            return Err(Error::Config(format!("split part {p} would be empty")));
        }
        let mut idx = order[start..end].to_vec();
        idx.sort_unstable();
        parts.push(ds.subset(&idx));
        start = end;
    }
    Ok(parts)
}

/// `‖X − X̂‖_F / ‖X‖_F`.
pub fn metric_nmse(x_true: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x_true.shape() != x_hat.shape() {
        return Err(dim_err("imputation", format!("{:?}", x_true.shape()), format!("{:?}", x_hat.shape())));
    }
    let denom = x_true.norm();
    if !(denom > 0.0) {
        return Err(Error::UndefinedMetric("NMSE of an all-zero reference".into()));
    }
    let num: f64 = x_true.values().iter().zip(x_hat.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num.sqrt() / denom)
}

/// Fraction of `pred` equal to `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(dim_err("predictions", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// Accuracy within each true class; `None` for classes absent from `truth`.
pub fn per_class_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Vec<Option<f64>> {
    (0..k)
        .map(|c| {
            let (hit, tot) = pred
                .iter()
                .zip(truth)
                .filter(|(_, &t)| t == c)
                .fold((0usize, 0usize), |(h, n), (p, t)| (h + usize::from(p == t), n + 1));
            (tot > 0).then(|| hit as f64 / tot as f64)
        })
        .collect()
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<Vec<f64>>,
    pub scale: Vec<Vec<f64>>,
}

impl Standardizer {
    /// Statistics from the observed rows of `ds` only.
    pub fn fit(ds: &MultiViewDataset) -> Self {
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        for v in 0..ds.num_views() {
            let d = ds.views[v].cols();
            let rows: Vec<&[f64]> = (0..ds.len()).filter_map(|i| ds.view_row(v, i)).collect();
            let n = rows.len().max(1) as f64;
            let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let sd: Vec<f64> = (0..d)
                .map(|j| {
                    let var = rows.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n;
                    if var > 1e-24 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            mean.push(mu);
            scale.push(sd);
        }
        Self { mean, scale }
    }

    pub fn transform_view(&self, v: usize, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, val) in out.row_slice_mut(i).iter_mut().enumerate() {
                *val = (*val - self.mean[v][j]) / self.scale[v][j];
            }
        }
        out
    }

    pub fn inverse_view(&self, v: usize, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, val) in out.row_slice_mut(i).iter_mut().enumerate() {
                *val = *val * self.scale[v][j] + self.mean[v][j];
            }
        }
        out
    }

    /// Standardized copy of `ds`; masked rows stay zero and withheld values
    /// are transformed alongside.
    pub fn apply(&self, ds: &MultiViewDataset) -> MultiViewDataset {
        let mut out = ds.clone();
        for v in 0..ds.num_views() {
            out.views[v] = self.transform_view(v, &ds.views[v]);
        }
        let m = ds.missing_view;
        for i in 0..ds.len() {
            if !ds.present[i] {
                out.views[m].row_slice_mut(i).fill(0.0);
            }
        }
        if let Some(w) = &ds.withheld {
            let mut t = self.transform_view(m, w);
            for i in 0..ds.len() {
                if ds.present[i] {
                    t.row_slice_mut(i).fill(0.0);
                }
            }
            out.withheld = Some(t);
        }
        out
    }
}

#[cfg(test)]
mod tests;
