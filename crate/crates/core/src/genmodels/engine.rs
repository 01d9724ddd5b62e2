//! Batched construction of the variational bounds on a [`Graph`].
//!
//! Every term is a `[B,1]` column with one row per sample. Expectations over
//! the latent mixture are Monte-Carlo estimates with frozen noise; the
//! expectation over an unknown label enumerates every class.

use super::model::{Architecture, ModelKind, MIX_LOGITS};
use super::noise::{NoiseSource, NoiseStream};
use crate::diffcore::{Bindings, Graph, ParamStore, Tensor, Var};
use crate::error::{dim_err, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Noise key of one row: the caller's sample id and the imputation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct RowId {
    pub sample: usize,
    pub draw: usize,
}

pub(crate) fn row_ids(samples: &[usize]) -> Vec<RowId> {
    samples.iter().map(|&sample| RowId { sample, draw: 0 }).collect()
}

/// Bound contributions, each a `[B,1]` column. Their sum is the lower bound.
#[derive(Debug, Clone)]
pub(crate) struct Terms {
    pub recon: Vec<Var>,
    pub prior_z: Var,
    pub prior_y: Option<Var>,
    pub mix_entropy: Var,
    pub class_entropy: Option<Var>,
    pub imp_entropy: Option<Var>,
}

impl Terms {
    fn vars(&self) -> Vec<Var> {
        let mut v = self.recon.clone();
        v.push(self.prior_z);
        v.extend(self.prior_y);
        v.push(self.mix_entropy);
        v.extend(self.class_entropy);
        v.extend(self.imp_entropy);
        v
    }

    fn map(&self, g: &mut Graph, mut f: impl FnMut(&mut Graph, Var) -> Result<Var>) -> Result<Terms> {
        Ok(Terms {
            recon: self.recon.iter().map(|&v| f(g, v)).collect::<Result<_>>()?,
            prior_z: f(g, self.prior_z)?,
            prior_y: self.prior_y.map(|v| f(g, v)).transpose()?,
            mix_entropy: f(g, self.mix_entropy)?,
            class_entropy: self.class_entropy.map(|v| f(g, v)).transpose()?,
            imp_entropy: self.imp_entropy.map(|v| f(g, v)).transpose()?,
        })
    }

    /// Per-row lower bound.
    pub fn total(&self, g: &mut Graph) -> Result<Var> {
        let vars = self.vars();
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = g.add(acc, v)?;
        }
        Ok(acc)
    }
}

pub(crate) struct Engine<'a> {
    pub arch: &'a Architecture,
    pub g: Graph,
    pub p: Bindings,
    noise: &'a dyn NoiseSource,
    t: usize,
    t_m: usize,
    log_lambda: Var,
    lambda: Var,
}

impl<'a> Engine<'a> {
    pub fn new(
        arch: &'a Architecture,
        params: &ParamStore,
        noise: &'a dyn NoiseSource,
        t: usize,
        t_m: usize,
    ) -> Result<Self> {
        if t == 0 || t_m == 0 {
            return Err(Error::Contract("Monte-Carlo sample counts must be >= 1".into()));
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        g.set_scope("mixture");
        let free = p.var(MIX_LOGITS)?;
        let zero = g.constant(Tensor::scalar(0.0));
        let logits = g.concat_cols(&[zero, free])?;
        let log_lambda = g.log_softmax(logits);
        let lambda = g.exp(log_lambda);
        g.set_scope("<root>");
        Ok(Self {
            arch,
            g,
            p,
            noise,
            t,
            t_m,
            log_lambda,
            lambda,
        })
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.g.constant(t)
    }

    fn onehot(&mut self, labels: &[usize]) -> Result<Var> {
        let k = self.arch.dims.num_classes;
        let mut t = Tensor::zeros(&[labels.len(), k]);
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::InvalidLabel { label: y, classes: k });
            }
            t.set(i, y, 1.0);
        }
        Ok(self.g.constant(t))
    }

    fn noise(&mut self, ids: &[RowId], dim: usize, stream: impl Fn(usize) -> NoiseStream) -> Var {
        let mut t = Tensor::zeros(&[ids.len(), dim]);
        for (i, id) in ids.iter().enumerate() {
            self.noise.fill(id.sample, stream(id.draw), t.row_slice_mut(i));
        }
        self.g.constant(t)
    }

    fn check_rows(&self, xs: &[Var], b: usize) -> Result<()> {
        for (v, &x) in xs.iter().enumerate() {
            let t = self.g.value(x);
            if t.rows() != b {
                return Err(dim_err(format!("view {} rows", v + 1), b, t.rows()));
            }
            if t.cols() != self.arch.dims.view_dims[v] {
                return Err(dim_err(format!("view {} width", v + 1), self.arch.dims.view_dims[v], t.cols()));
            }
        }
        Ok(())
    }

    /// Mean and variance of each encoder component given complete views.
    pub fn encode(&mut self, xs: &[Var], y: Option<Var>) -> Result<(Vec<Var>, Vec<Var>)> {
        let arch = self.arch;
        let mut means = Vec::with_capacity(xs.len());
        let mut vars = Vec::with_capacity(xs.len());
        for (v, &x) in xs.iter().enumerate() {
            let input = match y {
                Some(y) => self.g.concat_cols(&[x, y])?,
                None => x,
            };
            let out = arch.encoders[v].forward(&mut self.g, &self.p, input)?;
            means.push(out[0]);
            vars.push(out[1]);
        }
        Ok((means, vars))
    }

    /// `-Σ_v λ_v log Σ_l λ_l N(μ_v | μ_l, Σ_v + Σ_l)`, row-wise.
    pub fn mixture_entropy_bound(&mut self, means: &[Var], vars: &[Var]) -> Result<Var> {
        let g = &mut self.g;
        let n = means.len();
        let mut acc: Option<Var> = None;
        for v in 0..n {
            let mut cols = Vec::with_capacity(n);
            for l in 0..n {
                let s = g.add(vars[v], vars[l])?;
                let log_omega = g.gauss_log_pdf(means[v], means[l], s)?;
                let log_w = g.slice_cols(self.log_lambda, l, 1)?;
                cols.push(g.add(log_omega, log_w)?);
            }
            let c = g.concat_cols(&cols)?;
            let lse = g.log_sum_exp(c);
            let w = g.slice_cols(self.lambda, v, 1)?;
            let term = g.mul(lse, w)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        Ok(g.scale(acc.expect("at least one component"), -1.0))
    }

    /// Bound terms for rows with known labels (or no labels for the
    /// unsupervised model). For the incomplete-view model the observed view's
    /// decoder also receives the missing view's row.
    pub fn labeled_terms(&mut self, xs: &[Var], labels: Option<&[usize]>, ids: &[RowId]) -> Result<Terms> {
        let arch = self.arch;
        let b = ids.len();
        self.check_rows(xs, b)?;
        let nv = arch.num_views();
        let dz = arch.dims.latent_dim;
        let t_count = self.t;

        let y = match (arch.kind.is_supervised(), labels) {
            (true, Some(l)) => Some(self.onehot(l)?),
            (true, None) => return Err(Error::Contract("labels required for the supervised bound".into())),
            (false, _) => None,
        };

        let (means, vars) = self.encode(xs, y)?;

        // z^(l,t) = μ_l + σ_l ⊙ ε^(l,t), stacked group-major: row = (l*T + t)*B + i
        let mut zs = Vec::with_capacity(nv * t_count);
        for l in 0..nv {
            let sd = self.g.sqrt(vars[l]);
            for t in 0..t_count {
                let eps = self.noise(ids, dz, |draw| NoiseStream::Latent { component: l, t, draw });
                let scaled = self.g.mul(sd, eps)?;
                zs.push(self.g.add(means[l], scaled)?);
            }
        }
        let groups = nv * t_count;
        let g = &mut self.g;
        let z_all = g.concat_rows(&zs)?;
        let tile: Vec<usize> = (0..groups).flat_map(|_| 0..b).collect();
        let y_all = y.map(|y| g.gather_rows(y, &tile)).transpose()?;
        let xm_all = if arch.kind == ModelKind::Simvae {
            Some(g.gather_rows(xs[arch.missing_view()], &tile)?)
        } else {
            None
        };

        let mut recon_stacked = Vec::with_capacity(nv);
        for v in 0..nv {
            let x_all = g.gather_rows(xs[v], &tile)?;
            let mut parts = Vec::with_capacity(3);
            parts.extend(y_all);
            parts.push(z_all);
            if arch.kind == ModelKind::Simvae && v == arch.observed_view() {
                parts.push(xm_all.expect("simvae"));
            }
            let input = g.concat_cols(&parts)?;
            let out = arch.decoders[v].forward(g, &self.p, input)?;
            recon_stacked.push(g.gauss_log_pdf(x_all, out[0], out[1])?);
        }

        let zeros = g.constant(Tensor::zeros(&[groups * b, dz]));
        let ones = g.constant(Tensor::filled(&[groups * b, dz], 1.0));
        let prior_stacked = g.gauss_log_pdf(z_all, zeros, ones)?;

        // Σ_l λ_l (1/T) Σ_t f(z^(l,t)) as a [1,G] x [G,B] product
        let lam_col = g.reshape(self.lambda, nv, 1)?;
        let group_of: Vec<usize> = (0..nv).flat_map(|l| std::iter::repeat_n(l, t_count)).collect();
        let w = g.gather_rows(lam_col, &group_of)?;
        let w = g.scale(w, 1.0 / t_count as f64);
        let w_row = g.reshape(w, 1, groups)?;
        let reduce = |g: &mut Graph, q: Var| -> Result<Var> {
            let q2 = g.reshape(q, groups, b)?;
            let r = g.matmul(w_row, q2)?;
            g.reshape(r, b, 1)
        };
        let recon = recon_stacked
            .into_iter()
            .map(|q| reduce(g, q))
            .collect::<Result<Vec<_>>>()?;
        let prior_z = reduce(g, prior_stacked)?;

        let prior_y = match (labels, &arch.prior_y) {
            (Some(l), Some(prior)) if arch.kind.is_supervised() => {
                let col: Vec<f64> = l.iter().map(|&y| prior.probs()[y].ln()).collect();
                Some(self.g.constant(Tensor::column(&col)))
            }
            _ => None,
        };

        let mix_entropy = self.mixture_entropy_bound(&means, &vars)?;
        Ok(Terms {
            recon,
            prior_z,
            prior_y,
            mix_entropy,
            class_entropy: None,
            imp_entropy: None,
        })
    }

    /// `log q(y | X)` for every class, `[B,K]`.
    pub fn class_log_probs(&mut self, xs: &[Var]) -> Result<Var> {
        let cls = self
            .arch
            .classifier
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no classifier".into()))?;
        let input = self.g.concat_cols(xs)?;
        let logits = cls.forward(&mut self.g, &self.p, input)?[0];
        Ok(self.g.log_softmax(logits))
    }

    /// `E_{q(y|X)}[bound(X, y) - log q(y|X)]`, enumerating all classes.
    pub fn unlabeled_terms(&mut self, xs: &[Var], ids: &[RowId]) -> Result<Terms> {
        let b = ids.len();
        self.check_rows(xs, b)?;
        let k = self.arch.dims.num_classes;
        let log_pi = self.class_log_probs(xs)?;
        let pi = self.g.exp(log_pi);

        // sample-major expansion: row = i*K + y
        let expand: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let xs_e = xs
            .iter()
            .map(|&x| self.g.gather_rows(x, &expand))
            .collect::<Result<Vec<_>>>()?;
        let labels_e: Vec<usize> = (0..b).flat_map(|_| 0..k).collect();
        let ids_e: Vec<RowId> = expand.iter().map(|&i| ids[i]).collect();
        let inner = self.labeled_terms(&xs_e, Some(&labels_e), &ids_e)?;

        let mut weighted = inner.map(&mut self.g, |g, q| {
            let q = g.reshape(q, b, k)?;
            let wq = g.mul(q, pi)?;
            Ok(g.sum_cols(wq))
        })?;
        let plogp = self.g.mul(pi, log_pi)?;
        let s = self.g.sum_cols(plogp);
        weighted.class_entropy = Some(self.g.scale(s, -1.0));
        Ok(weighted)
    }

    /// Mean and variance of `q(x^m | x^o)`.
    pub fn impute_dist(&mut self, x_obs: Var) -> Result<(Var, Var)> {
        let imp = self
            .arch
            .imputer
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no imputer".into()))?;
        let out = imp.forward(&mut self.g, &self.p, x_obs)?;
        Ok((out[0], out[1]))
    }

    /// Views in model order from an observed and a missing block.
    fn arrange(&self, x_obs: Var, x_mis: Var) -> Vec<Var> {
        if self.arch.observed_view() == 0 {
            vec![x_obs, x_mis]
        } else {
            vec![x_mis, x_obs]
        }
    }

    /// Bound for rows whose missing view is integrated out with `q(x^m|x^o)`:
    /// `E_{x^m}[inner] + H(q(x^m|x^o))`, where `inner` is the labeled bound
    /// when `labels` is given and the label-enumerated bound otherwise.
    pub fn imputed_terms(&mut self, x_obs: Var, labels: Option<&[usize]>, ids: &[RowId]) -> Result<Terms> {
        let b = ids.len();
        let obs = self.arch.observed_view();
        let d_obs = self.arch.dims.view_dims[obs];
        let d_mis = self.arch.dims.view_dims[self.arch.missing_view()];
        let xo_t = self.g.value(x_obs);
        if xo_t.rows() != b || xo_t.cols() != d_obs {
            return Err(dim_err("observed view", format!("{b}x{d_obs}"), format!("{}x{}", xo_t.rows(), xo_t.cols())));
        }
        let t_m = self.t_m;
        let (mean, var) = self.impute_dist(x_obs)?;
        let sd = self.g.sqrt(var);

        // draw-major stacking: row = d*B + i
        let mut draws = Vec::with_capacity(t_m);
        for d in 0..t_m {
            let ids_d: Vec<RowId> = ids.iter().map(|id| RowId { sample: id.sample, draw: d }).collect();
            let eps = self.noise(&ids_d, d_mis, |draw| NoiseStream::Missing { draw });
            let scaled = self.g.mul(sd, eps)?;
            draws.push(self.g.add(mean, scaled)?);
        }
        let xm = self.g.concat_rows(&draws)?;
        let tile: Vec<usize> = (0..t_m).flat_map(|_| 0..b).collect();
        let xo = self.g.gather_rows(x_obs, &tile)?;
        let ids_s: Vec<RowId> = (0..t_m)
            .flat_map(|d| ids.iter().map(move |id| RowId { sample: id.sample, draw: d }))
            .collect();
        let xs = self.arrange(xo, xm);
        let inner = match labels {
            Some(l) => {
                let labels_s: Vec<usize> = tile.iter().map(|&i| l[i]).collect();
                self.labeled_terms(&xs, Some(&labels_s), &ids_s)?
            }
            None => self.unlabeled_terms(&xs, &ids_s)?,
        };

        let avg = self.g.constant(Tensor::filled(&[1, t_m], 1.0 / t_m as f64));
        let mut terms = inner.map(&mut self.g, |g, q| {
            let q2 = g.reshape(q, t_m, b)?;
            let r = g.matmul(avg, q2)?;
            g.reshape(r, b, 1)
        })?;

        let lv = self.g.log(var);
        let s = self.g.sum_cols(lv);
        let half = self.g.scale(s, 0.5);
        let c = self.g.constant(Tensor::scalar(0.5 * d_mis as f64 * (LN_2PI + 1.0)));
        terms.imp_entropy = Some(self.g.add(half, c)?);
        Ok(terms)
    }

    /// `-log q(y|X)` at the given labels, `[B,1]`.
    pub fn class_nll(&mut self, xs: &[Var], labels: &[usize]) -> Result<Var> {
        let log_pi = self.class_log_probs(xs)?;
        let y = self.onehot(labels)?;
        let picked = self.g.mul(log_pi, y)?;
        let s = self.g.sum_cols(picked);
        Ok(self.g.scale(s, -1.0))
    }

    /// `-log q(x^m | x^o)` at the true missing view, `[B,1]`.
    pub fn imputation_nll(&mut self, x_obs: Var, x_mis: Var) -> Result<Var> {
        let (mean, var) = self.impute_dist(x_obs)?;
        let lp = self.g.gauss_log_pdf(x_mis, mean, var)?;
        Ok(self.g.scale(lp, -1.0))
    }

    /// Complete views for rows whose missing view is filled with `E[q(x^m|x^o)]`.
    pub fn mean_filled_views(&mut self, x_obs: Var) -> Result<Vec<Var>> {
        let (mean, _) = self.impute_dist(x_obs)?;
        Ok(self.arrange(x_obs, mean))
    }

    pub fn sum(&mut self, v: Var) -> Var {
        self.g.sum_all(v)
    }
}

/// Per-row values of a [`Terms`] bundle.
pub(crate) fn terms_rows(g: &Graph, terms: &Terms) -> Vec<super::BoundBreakdown> {
    let b = g.value(terms.prior_z).rows();
    let col = |v: Var, i: usize| g.value(v).values()[i];
    (0..b)
        .map(|i| {
            let recon: Vec<f64> = terms.recon.iter().map(|&v| col(v, i)).collect();
            let prior_z = col(terms.prior_z, i);
            let prior_y = terms.prior_y.map_or(0.0, |v| col(v, i));
            let mixture_entropy = col(terms.mix_entropy, i);
            let classifier_entropy = terms.class_entropy.map_or(0.0, |v| col(v, i));
            let imputer_entropy = terms.imp_entropy.map_or(0.0, |v| col(v, i));
            super::BoundBreakdown::from_parts(recon, prior_z, prior_y, mixture_entropy, classifier_entropy, imputer_entropy)
        })
        .collect()
}
