//! Built-in numerical self-checks: gradients against finite differences,
//! the mixture-entropy bound against Monte Carlo, degenerate-classifier
//! identities, and bounds against quadrature on a one-dimensional latent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::diffcore::{finite_diff_gradient, max_relative_error, mlp_forward, ParamStore, Tensor};
use crate::error::Result;
use crate::genmodels::{
    mvae_elbo, negative_bound, negative_bound_with_grads, simvae_bound_lc, simvae_bound_li, simvae_bound_uc, simvae_bound_ui,
    smvae_labeled_bound, smvae_unlabeled_bound, Architecture, BoundBreakdown, FnNoise, ModelDims, ModelKind,
    MonteCarlo, MultiViewModel, NoiseSource, NoiseStream, Strata, Stratum, MIX_LOGITS,
};
use crate::probdist::{gauss_log_pdf, mog_entropy_lower_bound, DiagGaussian, GaussianMixture};

pub const GRADIENT: &str = "gradient";
pub const ENTROPY: &str = "entropy-bound";
pub const IDENTITY: &str = "degenerate-identity";
pub const QUADRATURE: &str = "quadrature";

/// Gradient estimators covered by the finite-difference family.
pub const ESTIMATORS: [&str; 7] = ["ELBO", "L", "U", "LC", "LI", "UC", "UI"];

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub family: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Sizes and fault injection for [`run_selfcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelfcheckOptions {
    /// Perturb the analytic gradient of this estimator (testing hook).
    pub corrupt: Option<String>,
    pub mixtures: usize,
    pub mc_samples: usize,
    pub quadrature_draws: usize,
    /// Draws for which the doubly integrated incomplete-sample bounds are checked.
    pub incomplete_quadrature_draws: usize,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        Self {
            corrupt: None,
            mixtures: 200,
            mc_samples: 100_000,
            quadrature_draws: 20,
            incomplete_quadrature_draws: 20,
        }
    }
}

impl SelfcheckOptions {
    /// Reduced sizes for a quick run.
    pub fn quick() -> Self {
        Self {
            mixtures: 40,
            mc_samples: 20_000,
            quadrature_draws: 4,
            incomplete_quadrature_draws: 1,
            ..Self::default()
        }
    }
}

fn pass(family: &'static str, name: impl Into<String>, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        family,
        name: name.into(),
        passed,
        detail,
    }
}

// ---------- fixtures ----------

/// Glorot weights plus random biases and mixture logits.
pub fn random_model(kind: ModelKind, view_dims: &[usize], k: usize, dz: usize, hidden: &[usize], seed: u64) -> Result<MultiViewModel> {
    let arch = Architecture::new(kind, ModelDims::new(view_dims, k, dz, hidden))?;
    let mut m = MultiViewModel::new(arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    for (name, t) in m.params.iter_mut() {
        if name.ends_with(".b") || name == MIX_LOGITS {
            for v in t.values_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    Ok(m)
}

pub fn random_views(b: usize, dims: &[usize], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.iter()
        .map(|&d| {
            let v: Vec<f64> = (0..b * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::matrix(b, d, v).expect("shape")
        })
        .collect()
}

/// Gaussian noise that is a pure function of `(seed, sample, stream)`.
pub fn keyed_noise(seed: u64) -> impl NoiseSource {
    FnNoise(move |sample: usize, stream: NoiseStream, out: &mut [f64]| {
        let (tag, a, b, c) = match stream {
            NoiseStream::Latent { component, t, draw } => (1u64, component, t, draw),
            NoiseStream::Missing { draw } => (2, draw, 0, 0),
        };
        let key = [sample as u64, tag, a as u64, b as u64, c as u64]
            .iter()
            .fold(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15), |h, &v| {
                (h ^ v).wrapping_mul(0x100_0000_01B3).rotate_left(17)
            });
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        for o in out {
            *o = rng.sample(StandardNormal);
        }
    })
}

/// Midpoint quantiles of N(0,1): with many draws the Monte-Carlo average
/// becomes a quadrature over each one-dimensional latent.
pub fn quantile_noise(t: usize, t_m: usize) -> impl NoiseSource {
    let n = Normal::standard();
    FnNoise(move |_sample: usize, stream: NoiseStream, out: &mut [f64]| {
        let (i, count) = match stream {
            NoiseStream::Latent { t: ti, .. } => (ti, t),
            NoiseStream::Missing { draw } => (draw, t_m),
        };
        out.fill(n.inverse_cdf((i as f64 + 0.5) / count as f64));
    })
}

// ---------- gradients ----------

/// The stratum layout exercised by one estimator name.
pub fn estimator_strata(name: &str, views: &[Tensor], labels: &[usize]) -> Result<(ModelKind, Strata)> {
    let n = views[0].rows();
    let ids: Vec<usize> = (0..n).collect();
    let complete = |labeled: bool| Stratum::new(views.to_vec(), labeled.then(|| labels.to_vec()), ids.clone());
    let incomplete = |labeled: bool| Stratum::new(vec![views[0].clone()], labeled.then(|| labels.to_vec()), ids.clone());
    let mut s = Strata::default();
    let kind = match name {
        "ELBO" => {
            s.unlabeled_complete = complete(false)?;
            ModelKind::Mvae
        }
        "L" => {
            s.labeled_complete = complete(true)?;
            ModelKind::Smvae
        }
        "U" => {
            s.unlabeled_complete = complete(false)?;
            ModelKind::Smvae
        }
        "LC" => {
            s.labeled_complete = complete(true)?;
            ModelKind::Simvae
        }
        "LI" => {
            s.labeled_incomplete = incomplete(true)?;
            ModelKind::Simvae
        }
        "UC" => {
            s.unlabeled_complete = complete(false)?;
            ModelKind::Simvae
        }
        "UI" => {
            s.unlabeled_incomplete = incomplete(false)?;
            ModelKind::Simvae
        }
        other => return Err(crate::error::Error::Config(format!("unknown estimator {other:?}"))),
    };
    Ok((kind, s))
}

/// Analytic gradients of one estimator against central differences
/// (`h = 1e-5`) on a small model with frozen noise. Returns the relative
/// error, the worst parameter block and the parameter count.
pub fn gradient_error(name: &str, corrupt: bool, seed: u64) -> Result<(f64, String, usize)> {
    let (dims, k) = ([3usize, 2usize], 2);
    let views = random_views(3, &dims, seed + 1);
    let labels = [0, 1, 1];
    let (kind, strata) = estimator_strata(name, &views, &labels)?;
    let model = random_model(kind, &dims, k, 2, &[4], seed)?;
    let noise = keyed_noise(seed + 2);
    let mc = MonteCarlo::new(&noise);
    let (_, mut grads) = negative_bound_with_grads(&model, &strata, mc)?;
    if corrupt {
        for (_, t) in grads.iter_mut() {
            for v in t.values_mut() {
                *v *= 1.01;
            }
        }
    }
    let fd = finite_diff_gradient(
        |p| Ok(negative_bound(&model.with_params(p.clone())?, &strata, mc)?.value),
        &model.params,
        1e-5,
    )?;
    let mut worst = (0.0, String::new());
    for (name, t) in grads.iter() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        a.insert(name, t.clone())?;
        b.insert(name, fd.get(name)?.clone())?;
        let e = max_relative_error(&a, &b, 1e-6);
        if e >= worst.0 {
            worst = (e, name.to_string());
        }
    }
    Ok((worst.0, worst.1, model.params.num_params()))
}

pub fn gradient_checks(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, name) in ESTIMATORS.iter().enumerate() {
        let corrupt = opts.corrupt.as_deref() == Some(name);
        let (err, block, n) = gradient_error(name, corrupt, 100 + i as u64)?;
        out.push(pass(
            GRADIENT,
            *name,
            err <= 1e-4,
            format!("max relative error {err:.2e} (worst block {block}, {n} parameters; limit 1e-4)"),
        ));
    }
    Ok(out)
}

// ---------- entropy bound ----------

/// Monte-Carlo entropy of a mixture and its standard error.
pub fn mc_entropy(m: &GaussianMixture, samples: usize, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let d = m.dim();
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut x = vec![0.0; d];
    for _ in 0..samples {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = m.components().len() - 1;
        for (l, w) in m.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                comp = l;
                break;
            }
        }
        let g = &m.components()[comp];
        for j in 0..d {
            x[j] = g.mean()[j] + g.var()[j].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let v = -m.log_pdf(&x)?;
        sum += v;
        sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

pub fn random_mixture(rng: &mut impl Rng) -> Result<GaussianMixture> {
    let d = rng.random_range(1..=8);
    let comps = (0..2)
        .map(|_| {
            let mean = (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let var = (0..d).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
            DiagGaussian::new(mean, var)
        })
        .collect::<Result<Vec<_>>>()?;
    let w: f64 = rng.random_range(0.05..0.95);
    GaussianMixture::new(comps, vec![w, 1.0 - w])
}

pub fn entropy_checks(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    let closed = GaussianMixture::new(vec![DiagGaussian::standard(1), DiagGaussian::standard(1)], vec![0.5, 0.5])?;
    let h = mog_entropy_lower_bound(&closed);
    // −log N(0 | 0, 2) = ½·ln(4π) ≈ 1.2655121
    let exact = 0.5 * (4.0 * std::f64::consts::PI).ln();
    let mut out = vec![pass(
        ENTROPY,
        "closed form",
        (h - exact).abs() <= 1e-9 && format!("{h:.7}") == "1.2655121",
        format!("identical N(0,1) halves: {h:.10} (expected ½·ln 4π = {exact:.10})"),
    )];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..opts.mixtures {
        let m = random_mixture(&mut rng)?;
        let lb = mog_entropy_lower_bound(&m);
        let (mc, se) = mc_entropy(&m, opts.mc_samples, &mut rng)?;
        let excess = (lb - mc) / se.max(1e-300);
        worst = worst.max(excess);
        if lb > mc + 3.0 * se {
            violations += 1;
        }
    }
    out.push(pass(
        ENTROPY,
        "random mixtures",
        violations == 0,
        format!(
            "{violations} of {} mixtures above MC + 3 SE ({} samples; max excess {worst:.2} SE)",
            opts.mixtures, opts.mc_samples
        ),
    ));
    Ok(out)
}

// ---------- degenerate identities ----------

fn zero_prefix(m: &mut MultiViewModel, prefix: &str) {
    for (name, t) in m.params.iter_mut() {
        if name.starts_with(prefix) {
            t.values_mut().fill(0.0);
        }
    }
}

fn max_gap(a: &[BoundBreakdown], b: &[BoundBreakdown], shift: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.loss() - (y.loss() + shift)).abs()).fold(0.0, f64::max)
}

pub fn identity_checks() -> Result<Vec<CheckResult>> {
    let noise = keyed_noise(7);
    let mc = MonteCarlo::new(&noise);
    let dims = [3usize, 2usize];
    let views = random_views(4, &dims, 8);
    let mut out = Vec::new();

    // one-hot classifier on y*
    let y = 1;
    for kind in [ModelKind::Smvae, ModelKind::Simvae] {
        let mut m = random_model(kind, &dims, 3, 2, &[5], 9)?;
        zero_prefix(&mut m, "cls.logits");
        m.params.get_mut("cls.logits.b")?.values_mut()[y] = 1000.0;
        let (u, l, name) = if kind == ModelKind::Smvae {
            (smvae_unlabeled_bound(&m, &views, mc)?, smvae_labeled_bound(&m, &views, &[y; 4], mc)?, "U = L(y*)")
        } else {
            (simvae_bound_uc(&m, &views, mc)?, simvae_bound_lc(&m, &views, &[y; 4], mc)?, "UC = LC(y*)")
        };
        let gap = max_gap(&u, &l, 0.0);
        out.push(pass(IDENTITY, name, gap <= 1e-10, format!("one-hot classifier: max gap {gap:.2e}")));
    }

    // uniform classifier, label-blind networks: U = L − log K in loss terms
    let k = 4;
    let mut m = random_model(ModelKind::Smvae, &dims, k, 2, &[5], 10)?;
    zero_prefix(&mut m, "cls.");
    for (enc, d) in [("enc1", dims[0]), ("enc2", dims[1])] {
        let w = m.params.get_mut(&format!("{enc}.h0.w"))?;
        for r in d..d + k {
            w.row_slice_mut(r).fill(0.0);
        }
    }
    for dec in ["dec1", "dec2"] {
        let w = m.params.get_mut(&format!("{dec}.h0.w"))?;
        for r in 0..k {
            w.row_slice_mut(r).fill(0.0);
        }
    }
    let u = smvae_unlabeled_bound(&m, &views, mc)?;
    let l = smvae_labeled_bound(&m, &views, &[2; 4], mc)?;
    let gap = max_gap(&u, &l, -(k as f64).ln());
    out.push(pass(
        IDENTITY,
        "U = L - log K",
        gap <= 1e-10,
        format!("uniform classifier, K = {k}: max gap {gap:.2e}"),
    ));
    Ok(out)
}

// ---------- quadrature ----------

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

const Z_LO: f64 = -10.0;
const Z_HI: f64 = 10.0;

/// Trapezoid nodes on `[Z_LO, Z_HI]` with log weights including the N(0,1) prior.
fn z_grid(nz: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (Z_HI - Z_LO) / (nz - 1) as f64;
    let z: Vec<f64> = (0..nz).map(|i| Z_LO + h * i as f64).collect();
    let lw = z
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let t: f64 = if i == 0 || i == nz - 1 { 0.5 } else { 1.0 };
            (t * h).ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .collect();
    (z, lw)
}

fn decoder_log_lik(m: &MultiViewModel, v: usize, inputs: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let out = mlp_forward(&m.arch.decoders[v], &m.params, inputs)?;
    (0..inputs.rows())
        .map(|i| {
            let g = DiagGaussian::new(out[0].1.row_slice(i).to_vec(), out[1].1.row_slice(i).to_vec())?;
            gauss_log_pdf(x, &g)
        })
        .collect()
}

fn log_prior_y(m: &MultiViewModel, y: Option<usize>) -> f64 {
    match (y, &m.arch.prior_y) {
        (Some(y), Some(p)) => p.probs()[y].ln(),
        _ => 0.0,
    }
}

/// `log p(X, y)` (or `log p(X)` without a label) by quadrature over a
/// one-dimensional latent.
pub fn log_joint_complete(m: &MultiViewModel, xs: &[Vec<f64>], y: Option<usize>) -> Result<f64> {
    let (z, lw) = z_grid(4001);
    let k = m.arch.label_dim();
    let mut acc = lw;
    for v in 0..m.arch.num_views() {
        let extra = if m.arch.kind == ModelKind::Simvae && v == m.arch.observed_view() {
            xs[m.arch.missing_view()].clone()
        } else {
            vec![]
        };
        let rows: Vec<Vec<f64>> = z
            .iter()
            .map(|&zi| {
                let mut r: Vec<f64> = (0..k).map(|j| if Some(j) == y { 1.0 } else { 0.0 }).collect();
                r.push(zi);
                r.extend(&extra);
                r
            })
            .collect();
        let ll = decoder_log_lik(m, v, &Tensor::from_rows(&rows)?, &xs[v])?;
        for (a, b) in acc.iter_mut().zip(ll) {
            *a += b;
        }
    }
    Ok(log_sum_exp(&acc) + log_prior_y(m, y))
}

/// `log p(x^o, y)` for the incomplete-data model with a scalar missing view,
/// integrating the latent by quadrature and the missing view at quantiles of
/// its decoder.
pub fn log_joint_incomplete(m: &MultiViewModel, x_o: &[f64], y: usize) -> Result<f64> {
    let (obs, mis) = (m.arch.observed_view(), m.arch.missing_view());
    let k = m.arch.label_dim();
    let (zs, lw) = z_grid(801);
    let oh: Vec<f64> = (0..k).map(|j| if j == y { 1.0 } else { 0.0 }).collect();
    let zin: Vec<Vec<f64>> = zs.iter().map(|&z| [oh.clone(), vec![z]].concat()).collect();
    let pm = mlp_forward(&m.arch.decoders[mis], &m.params, &Tensor::from_rows(&zin)?)?;
    let nq = 400;
    let std_n = Normal::standard();
    let qs: Vec<f64> = (0..nq).map(|j| std_n.inverse_cdf((j as f64 + 0.5) / nq as f64)).collect();
    let mut rows = Vec::with_capacity(zs.len() * nq);
    for (i, &z) in zs.iter().enumerate() {
        let (mu, sd) = (pm[0].1.get(i, 0), pm[1].1.get(i, 0).sqrt());
        for &q in &qs {
            rows.push([oh.clone(), vec![z, mu + sd * q]].concat());
        }
    }
    let ll = decoder_log_lik(m, obs, &Tensor::from_rows(&rows)?, x_o)?;
    let per_z: Vec<f64> = (0..zs.len())
        .map(|i| log_sum_exp(&ll[i * nq..(i + 1) * nq]) - (nq as f64).ln() + lw[i])
        .collect();
    Ok(log_sum_exp(&per_z) + log_prior_y(m, Some(y)))
}

/// Smallest `log p − bound` per bound family over random toy models with
/// `d_z = 1`, `K = 2`, views of width 2 and 1.
pub fn quadrature_margins(draws: usize, incomplete_draws: usize) -> Result<Vec<(String, f64)>> {
    let t = 400;
    let noise = quantile_noise(t, 100);
    let mc = MonteCarlo::new(&noise).with_samples(t, 100);
    let names = ["ELBO", "L", "U", "LC", "UC", "LI", "UI"];
    let mut margin = vec![f64::INFINITY; names.len()];
    let mut note = |i: usize, v: f64| margin[i] = margin[i].min(v);
    for draw in 0..draws as u64 {
        let seed = 1000 + draw;
        let xs_t = random_views(1, &[2, 1], seed + 7);
        let xs = [xs_t[0].row_slice(0).to_vec(), xs_t[1].row_slice(0).to_vec()];

        let mvae = random_model(ModelKind::Mvae, &[2, 1], 0, 1, &[4], seed)?;
        note(0, log_joint_complete(&mvae, &xs, None)? - mvae_elbo(&mvae, &xs_t, mc)?[0].total);

        for (kind, li, ui) in [(ModelKind::Smvae, 1, 2), (ModelKind::Simvae, 3, 4)] {
            let m = random_model(kind, &[2, 1], 2, 1, &[4], seed)?;
            let joint = (0..2).map(|y| log_joint_complete(&m, &xs, Some(y))).collect::<Result<Vec<_>>>()?;
            for (y, &j) in joint.iter().enumerate() {
                let b = if kind == ModelKind::Smvae {
                    smvae_labeled_bound(&m, &xs_t, &[y], mc)?
                } else {
                    simvae_bound_lc(&m, &xs_t, &[y], mc)?
                };
                note(li, j - b[0].total);
            }
            let u = if kind == ModelKind::Smvae {
                smvae_unlabeled_bound(&m, &xs_t, mc)?
            } else {
                simvae_bound_uc(&m, &xs_t, mc)?
            };
            note(ui, log_sum_exp(&joint) - u[0].total);
        }

        if (draw as usize) < incomplete_draws {
            let m = random_model(ModelKind::Simvae, &[2, 1], 2, 1, &[4], seed)?;
            let xo = Tensor::row(&xs[0]);
            let joint = (0..2).map(|y| log_joint_incomplete(&m, &xs[0], y)).collect::<Result<Vec<_>>>()?;
            for (y, &j) in joint.iter().enumerate() {
                note(5, j - simvae_bound_li(&m, &xo, &[y], mc)?[0].total);
            }
            note(6, log_sum_exp(&joint) - simvae_bound_ui(&m, &xo, mc)?[0].total);
        }
    }
    Ok(names.iter().map(|s| s.to_string()).zip(margin).collect())
}

pub fn quadrature_checks(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    Ok(quadrature_margins(opts.quadrature_draws, opts.incomplete_quadrature_draws)?
        .into_iter()
        .filter(|(_, m)| m.is_finite())
        .map(|(name, m)| {
            let draws = if name == "LI" || name == "UI" {
                opts.incomplete_quadrature_draws
            } else {
                opts.quadrature_draws
            };
            pass(
                QUADRATURE,
                name,
                m >= -1e-6,
                format!("min log p - bound {m:.3e} over {draws} draws (limit -1e-6)"),
            )
        })
        .collect())
}

/// Every family, in order.
pub fn run_selfcheck(opts: &SelfcheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = gradient_checks(opts)?;
    out.extend(entropy_checks(opts)?);
    out.extend(identity_checks()?);
    out.extend(quadrature_checks(opts)?);
    Ok(out)
}

/// One line per check plus a final tally.
pub fn format_report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{} [{}] {}: {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.family,
            r.name,
            r.detail
        ));
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let mut families: Vec<&str> = results.iter().map(|r| r.family).collect();
    families.dedup();
    if failed.is_empty() {
        s.push_str(&format!("all {} checks passed across {} families\n", results.len(), families.len()));
    } else {
        s.push_str(&format!("{} of {} checks failed: {}\n", failed.len(), results.len(), failed.join(", ")));
    }
    s
}
