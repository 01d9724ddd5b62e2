use super::engine::{row_ids, terms_rows, Engine, Terms};
use super::model::{ModelKind, MultiViewModel};
use super::noise::NoiseSource;
use crate::diffcore::{backprop_grads, Graph, ParamStore, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::probdist::{CategoricalDist, DiagGaussian, GaussianMixture};

/// Per-sample decomposition of a variational lower bound.
///
/// All fields are contributions to the *bound*; the corresponding loss
/// (`L`, `U`, `LC`, ...) is [`BoundBreakdown::loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundBreakdown {
    /// Expected reconstruction log-likelihood per view.
    pub recon: Vec<f64>,
    pub prior_z: f64,
    pub prior_y: f64,
    pub mixture_entropy: f64,
    pub classifier_entropy: f64,
    pub imputer_entropy: f64,
    pub total: f64,
}

impl BoundBreakdown {
    pub fn zero(num_views: usize) -> Self {
        Self::from_parts(vec![0.0; num_views], 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_parts(
        recon: Vec<f64>,
        prior_z: f64,
        prior_y: f64,
        mixture_entropy: f64,
        classifier_entropy: f64,
        imputer_entropy: f64,
    ) -> Self {
        let total = recon.iter().sum::<f64>() + prior_z + prior_y + mixture_entropy + classifier_entropy + imputer_entropy;
        Self {
            recon,
            prior_z,
            prior_y,
            mixture_entropy,
            classifier_entropy,
            imputer_entropy,
            total,
        }
    }

    /// Negated bound, the quantity minimized during training.
    pub fn loss(&self) -> f64 {
        -self.total
    }

    /// Sum of the parts; equals `total` up to rounding.
    pub fn parts_sum(&self) -> f64 {
        self.recon.iter().sum::<f64>()
            + self.prior_z
            + self.prior_y
            + self.mixture_entropy
            + self.classifier_entropy
            + self.imputer_entropy
    }

    pub fn accumulate(&mut self, other: &BoundBreakdown) {
        for (a, b) in self.recon.iter_mut().zip(&other.recon) {
            *a += b;
        }
        self.prior_z += other.prior_z;
        self.prior_y += other.prior_y;
        self.mixture_entropy += other.mixture_entropy;
        self.classifier_entropy += other.classifier_entropy;
        self.imputer_entropy += other.imputer_entropy;
        self.total += other.total;
    }
}

/// Monte-Carlo settings shared by every bound.
#[derive(Clone, Copy)]
pub struct MonteCarlo<'a> {
    pub noise: &'a dyn NoiseSource,
    /// Latent draws per mixture component.
    pub t: usize,
    /// Draws of the missing view.
    pub t_m: usize,
}

impl<'a> MonteCarlo<'a> {
    pub fn new(noise: &'a dyn NoiseSource) -> Self {
        Self { noise, t: 1, t_m: 1 }
    }

    pub fn with_samples(mut self, t: usize, t_m: usize) -> Self {
        self.t = t;
        self.t_m = t_m;
        self
    }
}

/// Rows of one training stratum. Complete strata carry every view; incomplete
/// strata carry only the observed view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stratum {
    pub views: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
    /// Noise keys, one per row.
    pub ids: Vec<usize>,
}

impl Stratum {
    pub fn new(views: Vec<Tensor>, labels: Option<Vec<usize>>, ids: Vec<usize>) -> Result<Self> {
        let n = ids.len();
        for (v, t) in views.iter().enumerate() {
            if t.rows() != n {
                return Err(dim_err(format!("stratum view {} rows", v + 1), n, t.rows()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(dim_err("stratum labels", n, l.len()));
            }
        }
        Ok(Self { views, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The four data strata of one minibatch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Strata {
    pub labeled_complete: Stratum,
    pub labeled_incomplete: Stratum,
    pub unlabeled_complete: Stratum,
    pub unlabeled_incomplete: Stratum,
}

impl Strata {
    pub fn counts(&self) -> StratumCounts {
        StratumCounts {
            labeled_complete: self.labeled_complete.len(),
            labeled_incomplete: self.labeled_incomplete.len(),
            unlabeled_complete: self.unlabeled_complete.len(),
            unlabeled_incomplete: self.unlabeled_incomplete.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StratumCounts {
    pub labeled_complete: usize,
    pub labeled_incomplete: usize,
    pub unlabeled_complete: usize,
    pub unlabeled_incomplete: usize,
}

impl StratumCounts {
    pub fn labeled(&self) -> usize {
        self.labeled_complete + self.labeled_incomplete
    }
    pub fn unlabeled(&self) -> usize {
        self.unlabeled_complete + self.unlabeled_incomplete
    }
    pub fn complete(&self) -> usize {
        self.labeled_complete + self.unlabeled_complete
    }
    pub fn incomplete(&self) -> usize {
        self.labeled_incomplete + self.unlabeled_incomplete
    }
    pub fn total(&self) -> usize {
        self.labeled() + self.unlabeled()
    }
}

/// Scaling constants of the discriminative and imputation losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weighting {
    /// Classification weight of the complete-data semi-supervised model.
    pub c: f64,
    /// Imputation weight of the incomplete-data model.
    pub c1: f64,
    /// Classification weight of the incomplete-data model.
    pub c2: f64,
}

impl Default for Weighting {
    fn default() -> Self {
        Self { c: 1.0, c1: 1.0, c2: 1.0 }
    }
}

/// Value of a minibatch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Classification-loss weight α (α₂ for the incomplete-data model).
    pub alpha: f64,
    /// Imputation-loss weight α₁.
    pub alpha_imputation: f64,
    pub counts: StratumCounts,
    /// Bound terms summed over every sample.
    pub bound: BoundBreakdown,
    pub classification_loss: f64,
    pub imputation_loss: f64,
}

/// `c·(N_a + N_b)/N_a`; errors when the weighted stratum is empty.
pub fn alpha_weight(c: f64, n_a: usize, n_b: usize, what: &str) -> Result<f64> {
    if n_a == 0 {
        return Err(Error::Weighting(format!("minibatch has no {what} samples")));
    }
    if !(c > 0.0) {
        return Err(Error::Weighting(format!("scaling constant for {what} samples must be > 0, got {c}")));
    }
    Ok(c * (n_a + n_b) as f64 / n_a as f64)
}

fn require_kind(model: &MultiViewModel, kind: ModelKind, op: &str) -> Result<()> {
    if model.kind() != kind {
        return Err(Error::Contract(format!("{op} needs a {} model, got {}", kind.name(), model.kind().name())));
    }
    Ok(())
}

fn require_complete(model: &MultiViewModel, views: &[Tensor]) -> Result<()> {
    let v = model.arch.num_views();
    if views.len() != v {
        return Err(Error::Contract(format!("expected {v} views, got {} (missing view)", views.len())));
    }
    Ok(())
}

fn constants(e: &mut Engine, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| e.constant(t.clone())).collect()
}

fn rows_of(e: &Engine, terms: &Terms) -> Result<Vec<BoundBreakdown>> {
    let rows = terms_rows(&e.g, terms);
    if let Some(i) = rows.iter().position(|r| !r.total.is_finite()) {
        return Err(Error::Numeric(format!("non-finite bound at row {i}")));
    }
    Ok(rows)
}

fn default_ids(n: usize, ids: Option<&[usize]>) -> Result<Vec<usize>> {
    match ids {
        Some(ids) if ids.len() != n => Err(dim_err("noise keys", n, ids.len())),
        Some(ids) => Ok(ids.to_vec()),
        None => Ok((0..n).collect()),
    }
}

fn batch_rows(views: &[Tensor]) -> usize {
    views.first().map_or(0, Tensor::rows)
}

/// Evidence lower bound of the unsupervised model, one breakdown per row.
/// Rows are keyed `0..B` for the noise source.
pub fn mvae_elbo(model: &MultiViewModel, views: &[Tensor], mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Mvae, "mvae_elbo")?;
    require_complete(model, views)?;
    labeled_rows(model, views, None, None, mc)
}

fn labeled_rows(
    model: &MultiViewModel,
    views: &[Tensor],
    labels: Option<&[usize]>,
    ids: Option<&[usize]>,
    mc: MonteCarlo,
) -> Result<Vec<BoundBreakdown>> {
    let ids = default_ids(batch_rows(views), ids)?;
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    let xs = constants(&mut e, views);
    let terms = e.labeled_terms(&xs, labels, &row_ids(&ids))?;
    rows_of(&e, &terms)
}

fn unlabeled_rows(model: &MultiViewModel, views: &[Tensor], ids: Option<&[usize]>, mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    let ids = default_ids(batch_rows(views), ids)?;
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    let xs = constants(&mut e, views);
    let terms = e.unlabeled_terms(&xs, &row_ids(&ids))?;
    rows_of(&e, &terms)
}

fn imputed_rows(
    model: &MultiViewModel,
    x_obs: &Tensor,
    labels: Option<&[usize]>,
    ids: Option<&[usize]>,
    mc: MonteCarlo,
) -> Result<Vec<BoundBreakdown>> {
    let ids = default_ids(x_obs.rows(), ids)?;
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    let xo = e.constant(x_obs.clone());
    let terms = e.imputed_terms(xo, labels, &row_ids(&ids))?;
    rows_of(&e, &terms)
}

/// Labeled bound `−L(X, y)` of the complete-data semi-supervised model.
pub fn smvae_labeled_bound(
    model: &MultiViewModel,
    views: &[Tensor],
    labels: &[usize],
    mc: MonteCarlo,
) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Smvae, "smvae_labeled_bound")?;
    require_complete(model, views)?;
    labeled_rows(model, views, Some(labels), None, mc)
}

/// Unlabeled bound `−U(X)`, enumerating every class.
pub fn smvae_unlabeled_bound(model: &MultiViewModel, views: &[Tensor], mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Smvae, "smvae_unlabeled_bound")?;
    require_complete(model, views)?;
    unlabeled_rows(model, views, None, mc)
}

/// `−LC(X, y)`: labeled, complete rows of the incomplete-data model.
pub fn simvae_bound_lc(model: &MultiViewModel, views: &[Tensor], labels: &[usize], mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Simvae, "simvae_bound_lc")?;
    require_complete(model, views)?;
    labeled_rows(model, views, Some(labels), None, mc)
}

/// `−LI(x^o, y)`: labeled rows whose missing view is integrated out.
pub fn simvae_bound_li(model: &MultiViewModel, x_obs: &Tensor, labels: &[usize], mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Simvae, "simvae_bound_li")?;
    imputed_rows(model, x_obs, Some(labels), None, mc)
}

/// `−UC(X)`: unlabeled, complete rows.
pub fn simvae_bound_uc(model: &MultiViewModel, views: &[Tensor], mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Simvae, "simvae_bound_uc")?;
    require_complete(model, views)?;
    unlabeled_rows(model, views, None, mc)
}

/// `−UI(x^o)`: unlabeled rows with the missing view integrated out.
pub fn simvae_bound_ui(model: &MultiViewModel, x_obs: &Tensor, mc: MonteCarlo) -> Result<Vec<BoundBreakdown>> {
    require_kind(model, ModelKind::Simvae, "simvae_bound_ui")?;
    imputed_rows(model, x_obs, None, None, mc)
}

/// Encoder mixture `q(z | X, y)` of each row. `labels` is required for the
/// supervised models and ignored otherwise.
pub fn posterior(model: &MultiViewModel, views: &[Tensor], labels: Option<&[usize]>) -> Result<Vec<GaussianMixture>> {
    require_complete(model, views)?;
    let noise = super::noise::ZeroNoise;
    let mut e = Engine::new(&model.arch, &model.params, &noise, 1, 1)?;
    let xs = constants(&mut e, views);
    let y = match (model.kind().is_supervised(), labels) {
        (true, Some(l)) => {
            let k = model.arch.dims.num_classes;
            let mut t = Tensor::zeros(&[l.len(), k]);
            for (i, &y) in l.iter().enumerate() {
                if y >= k {
                    return Err(Error::InvalidLabel { label: y, classes: k });
                }
                t.set(i, y, 1.0);
            }
            Some(e.constant(t))
        }
        (true, None) => return Err(Error::Contract("labels required for the supervised posterior".into())),
        (false, _) => None,
    };
    let (means, vars) = e.encode(&xs, y)?;
    let lambda = model.mixture_weights();
    let b = batch_rows(views);
    (0..b)
        .map(|i| {
            let comps = means
                .iter()
                .zip(&vars)
                .map(|(&m, &v)| DiagGaussian::new(e.g.value(m).row_slice(i).to_vec(), e.g.value(v).row_slice(i).to_vec()))
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(comps, lambda.clone())
        })
        .collect()
}

/// Class posterior `q(y | X)` for every row. Any missing view must be filled
/// in (see [`impute`]) beforehand.
pub fn classify(model: &MultiViewModel, views: &[Tensor]) -> Result<Vec<CategoricalDist>> {
    if !model.kind().is_supervised() {
        return Err(Error::Contract("the unsupervised model has no classifier".into()));
    }
    if views.len() != model.arch.num_views() {
        return Err(Error::Contract(format!(
            "classify needs all {} views filled, got {}",
            model.arch.num_views(),
            views.len()
        )));
    }
    let noise = super::noise::ZeroNoise;
    let mut e = Engine::new(&model.arch, &model.params, &noise, 1, 1)?;
    let xs = constants(&mut e, views);
    for (v, &x) in xs.iter().enumerate() {
        let t = e.g.value(x);
        if t.cols() != model.arch.dims.view_dims[v] {
            return Err(dim_err(format!("view {} width", v + 1), model.arch.dims.view_dims[v], t.cols()));
        }
    }
    let lp = e.class_log_probs(&xs)?;
    e.g.check_finite()?;
    let t = e.g.value(lp);
    (0..t.rows())
        .map(|i| {
            let p: Vec<f64> = t.row_slice(i).iter().map(|v| v.exp()).collect();
            CategoricalDist::new(p)
        })
        .collect()
}

/// Conditional-mean imputation `E[q(x^m | x^o)]`, one row per input row.
pub fn impute(model: &MultiViewModel, x_obs: &Tensor) -> Result<Tensor> {
    require_kind(model, ModelKind::Simvae, "impute")?;
    let d = model.arch.dims.view_dims[model.arch.observed_view()];
    if x_obs.cols() != d {
        return Err(dim_err("observed view width", d, x_obs.cols()));
    }
    let noise = super::noise::ZeroNoise;
    let mut e = Engine::new(&model.arch, &model.params, &noise, 1, 1)?;
    let xo = e.constant(x_obs.clone());
    let (mean, _) = e.impute_dist(xo)?;
    e.g.check_finite()?;
    Ok(e.g.value(mean).clone())
}

struct Built {
    loss: Var,
    value: ObjectiveValue,
}

fn add_opt(g: &mut Graph, acc: Option<Var>, v: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        Some(a) => g.add(a, v)?,
        None => v,
    }))
}

fn check_stratum(model: &MultiViewModel, s: &Stratum, complete: bool, labeled: bool, name: &str) -> Result<()> {
    if s.is_empty() {
        return Ok(());
    }
    let want = if complete { model.arch.num_views() } else { 1 };
    if s.views.len() != want {
        return Err(Error::Contract(format!("{name} stratum needs {want} view block(s), got {}", s.views.len())));
    }
    if labeled && s.labels.is_none() {
        return Err(Error::Contract(format!("{name} stratum has no labels")));
    }
    for t in &s.views {
        if t.rows() != s.len() {
            return Err(dim_err(format!("{name} stratum rows"), s.len(), t.rows()));
        }
    }
    Ok(())
}

/// Accumulates `−Σ bound` for a stratum and its per-sample breakdown.
struct Acc {
    loss: Option<Var>,
    bound: BoundBreakdown,
}

impl Acc {
    fn push(&mut self, e: &mut Engine, terms: &Terms, ids: &[usize]) -> Result<()> {
        let rows = terms_rows(&e.g, terms);
        for (r, id) in rows.iter().zip(ids) {
            if !r.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite bound for sample {id}")));
            }
            self.bound.accumulate(r);
        }
        let col = terms.total(&mut e.g)?;
        let s = e.sum(col);
        let neg = e.g.scale(s, -1.0);
        self.loss = add_opt(&mut e.g, self.loss, neg)?;
        Ok(())
    }
}

/// `w = None` builds only `−Σ bound`, without the discriminative and
/// imputation losses or their stratum requirements.
fn build(e: &mut Engine, model: &MultiViewModel, strata: &Strata, w: Option<&Weighting>) -> Result<Built> {
    let counts = strata.counts();
    let kind = model.kind();
    let (lc, li, uc, ui) = (
        &strata.labeled_complete,
        &strata.labeled_incomplete,
        &strata.unlabeled_complete,
        &strata.unlabeled_incomplete,
    );
    if kind != ModelKind::Simvae && counts.incomplete() > 0 {
        return Err(Error::Contract(format!("the {} model requires complete views", kind.name())));
    }
    check_stratum(model, lc, true, kind.is_supervised(), "labeled-complete")?;
    check_stratum(model, li, false, true, "labeled-incomplete")?;
    check_stratum(model, uc, true, false, "unlabeled-complete")?;
    check_stratum(model, ui, false, false, "unlabeled-incomplete")?;
    if counts.total() == 0 {
        return Err(Error::Weighting("empty minibatch".into()));
    }

    let mut acc = Acc {
        loss: None,
        bound: BoundBreakdown::zero(model.arch.num_views()),
    };
    let mut alpha = 0.0;
    let mut alpha_imputation = 0.0;
    let mut class_loss = None;
    let mut imp_loss = None;

    match kind {
        ModelKind::Mvae => {
            for s in [lc, uc] {
                if s.is_empty() {
                    continue;
                }
                let xs = constants(e, &s.views);
                let t = e.labeled_terms(&xs, None, &row_ids(&s.ids))?;
                acc.push(e, &t, &s.ids)?;
            }
        }
        ModelKind::Smvae | ModelKind::Simvae => {
            if let Some(w) = w {
                let c_cls = if kind == ModelKind::Smvae { w.c } else { w.c2 };
                alpha = alpha_weight(c_cls, counts.labeled(), counts.unlabeled(), "labeled")?;
                if kind == ModelKind::Simvae {
                    alpha_imputation = alpha_weight(w.c1, counts.complete(), counts.incomplete(), "complete")?;
                }
            }
            let weighted = w.is_some();

            if !lc.is_empty() {
                let labels = lc.labels.as_deref().expect("checked");
                let xs = constants(e, &lc.views);
                let t = e.labeled_terms(&xs, Some(labels), &row_ids(&lc.ids))?;
                acc.push(e, &t, &lc.ids)?;
                if weighted {
                    let nll = e.class_nll(&xs, labels)?;
                    let s = e.sum(nll);
                    class_loss = add_opt(&mut e.g, class_loss, s)?;
                }
            }
            if !uc.is_empty() {
                let xs = constants(e, &uc.views);
                let t = e.unlabeled_terms(&xs, &row_ids(&uc.ids))?;
                acc.push(e, &t, &uc.ids)?;
            }
            if !li.is_empty() {
                let labels = li.labels.as_deref().expect("checked");
                let xo = e.constant(li.views[0].clone());
                let t = e.imputed_terms(xo, Some(labels), &row_ids(&li.ids))?;
                acc.push(e, &t, &li.ids)?;
                if weighted {
                    let filled = e.mean_filled_views(xo)?;
                    let nll = e.class_nll(&filled, labels)?;
                    let s = e.sum(nll);
                    class_loss = add_opt(&mut e.g, class_loss, s)?;
                }
            }
            if !ui.is_empty() {
                let xo = e.constant(ui.views[0].clone());
                let t = e.imputed_terms(xo, None, &row_ids(&ui.ids))?;
                acc.push(e, &t, &ui.ids)?;
            }
            if weighted && kind == ModelKind::Simvae {
                let (obs, mis) = (model.arch.observed_view(), model.arch.missing_view());
                for s in [lc, uc] {
                    if s.is_empty() {
                        continue;
                    }
                    let xo = e.constant(s.views[obs].clone());
                    let xm = e.constant(s.views[mis].clone());
                    let nll = e.imputation_nll(xo, xm)?;
                    let sum = e.sum(nll);
                    imp_loss = add_opt(&mut e.g, imp_loss, sum)?;
                }
            }
        }
    }

    let mut loss = acc.loss.expect("non-empty minibatch");
    let mut classification_loss = 0.0;
    let mut imputation_loss = 0.0;
    if let Some(c) = class_loss {
        classification_loss = e.g.value(c).values()[0];
        let scaled = e.g.scale(c, alpha);
        loss = e.g.add(loss, scaled)?;
    }
    if let Some(m) = imp_loss {
        imputation_loss = e.g.value(m).values()[0];
        let scaled = e.g.scale(m, alpha_imputation);
        loss = e.g.add(loss, scaled)?;
    }
    let value = e.g.value(loss).values()[0];
    if !value.is_finite() {
        e.g.check_finite()?;
        return Err(Error::Numeric("non-finite objective".into()));
    }
    Ok(Built {
        loss,
        value: ObjectiveValue {
            value,
            alpha,
            alpha_imputation,
            counts,
            bound: acc.bound,
            classification_loss,
            imputation_loss,
        },
    })
}

/// Minibatch objective to minimize, dispatching on the model kind:
/// `−Σ ELBO` for the unsupervised model, `ΣL + ΣU + α Σ(−log q(y|X))` for
/// the complete-data model and the four-stratum objective with imputation
/// and classification losses for the incomplete-data model.
pub fn objective(model: &MultiViewModel, strata: &Strata, w: &Weighting, mc: MonteCarlo) -> Result<ObjectiveValue> {
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    Ok(build(&mut e, model, strata, Some(w))?.value)
}

/// [`objective`] together with its gradient with respect to every parameter block.
pub fn objective_with_grads(
    model: &MultiViewModel,
    strata: &Strata,
    w: &Weighting,
    mc: MonteCarlo,
) -> Result<(ObjectiveValue, ParamStore)> {
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    let built = build(&mut e, model, strata, Some(w))?;
    let grads = backprop_grads(&e.g, built.loss, &e.p, &model.params)?;
    Ok((built.value, grads))
}

/// `−Σ bound` over every row of `strata` and its gradient, without the
/// weighted classification and imputation losses.
pub fn negative_bound_with_grads(model: &MultiViewModel, strata: &Strata, mc: MonteCarlo) -> Result<(ObjectiveValue, ParamStore)> {
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    let built = build(&mut e, model, strata, None)?;
    let grads = backprop_grads(&e.g, built.loss, &e.p, &model.params)?;
    Ok((built.value, grads))
}

/// `−Σ bound` over every row of `strata`.
pub fn negative_bound(model: &MultiViewModel, strata: &Strata, mc: MonteCarlo) -> Result<ObjectiveValue> {
    let mut e = Engine::new(&model.arch, &model.params, mc.noise, mc.t, mc.t_m)?;
    Ok(build(&mut e, model, strata, None)?.value)
}

/// Complete-data semi-supervised objective over a labeled and an unlabeled batch.
pub fn smvae_objective(
    model: &MultiViewModel,
    labeled: &Stratum,
    unlabeled: &Stratum,
    c: f64,
    mc: MonteCarlo,
) -> Result<ObjectiveValue> {
    require_kind(model, ModelKind::Smvae, "smvae_objective")?;
    let strata = Strata {
        labeled_complete: labeled.clone(),
        unlabeled_complete: unlabeled.clone(),
        ..Default::default()
    };
    objective(model, &strata, &Weighting { c, ..Default::default() }, mc)
}

/// Four-stratum objective of the incomplete-data model.
pub fn simvae_objective(model: &MultiViewModel, strata: &Strata, c1: f64, c2: f64, mc: MonteCarlo) -> Result<ObjectiveValue> {
    require_kind(model, ModelKind::Simvae, "simvae_objective")?;
    objective(model, strata, &Weighting { c: 1.0, c1, c2 }, mc)
}
