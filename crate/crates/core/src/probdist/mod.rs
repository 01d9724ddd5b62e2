//! Diagonal Gaussians, categoricals, and the weighted Gaussian mixture used
//! as the latent posterior, including its Jensen lower bound on entropy.

use crate::diffcore::log_sum_exp;
use crate::error::{dim_err, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Simplex violations up to this size are renormalized; larger ones rejected.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(dim_err("DiagGaussian", mean.len(), var.len()));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Contract(format!("Gaussian variance must be positive and finite, got {v}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric("Gaussian mean".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Ok(Self {
            probs: onto_simplex(probs, "categorical probabilities")?,
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        crate::diffcore::argmax(&self.probs)
    }
}

/// Weighted mixture of diagonal Gaussians with strictly positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<DiagGaussian>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<DiagGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Contract("mixture needs at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(dim_err("mixture weights", components.len(), weights.len()));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(dim_err("mixture component", d, c.dim()));
        }
        let weights = onto_simplex(weights, "mixture weights")?;
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Contract("mixture weights must be strictly positive".into()));
        }
        Ok(Self { components, weights })
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Mixture log-density, evaluated with log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| gauss_log_pdf(x, c).map(|lp| lp + w.ln()))
            .collect::<Result<Vec<_>>>()?;
        Ok(log_sum_exp(&terms))
    }
}

fn onto_simplex(mut p: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::Contract(format!("{what}: empty")));
    }
    if p.iter().any(|&v| !v.is_finite() || v < -SIMPLEX_TOLERANCE) {
        return Err(Error::Contract(format!("{what}: entries must be finite and non-negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Contract(format!("{what}: sum {s} is not 1")));
    }
    for v in &mut p {
        *v = v.max(0.0);
    }
    let s: f64 = p.iter().sum();
    if s != 1.0 {
        for v in &mut p {
            *v /= s;
        }
    }
    Ok(p)
}

pub fn gauss_log_pdf(x: &[f64], g: &DiagGaussian) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(dim_err("gauss_log_pdf", g.dim(), x.len()));
    }
    Ok(x.iter()
        .zip(g.mean())
        .zip(g.var())
        .map(|((x, m), s2)| -0.5 * (LN_2PI + s2.ln()) - (x - m) * (x - m) / (2.0 * s2))
        .sum())
}

/// `μ + σ ⊙ ε`.
pub fn gauss_reparam_sample(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(dim_err("gauss_reparam_sample", g.dim(), eps.len()));
    }
    Ok(g.mean()
        .iter()
        .zip(g.var())
        .zip(eps)
        .map(|((m, s2), e)| m + s2.sqrt() * e)
        .collect())
}

/// `log N(μ_a | μ_b, diag(σ²_a + σ²_b))`, the log of the overlap integral
/// `∫ N(z|a) N(z|b) dz`.
pub fn pair_convolution_logpdf(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(dim_err("pair_convolution_logpdf", a.dim(), b.dim()));
    }
    Ok(a.mean()
        .iter()
        .zip(b.mean())
        .zip(a.var().iter().zip(b.var()))
        .map(|((ma, mb), (va, vb))| {
            let s2 = va + vb;
            let r = ma - mb;
            -0.5 * (LN_2PI + s2.ln()) - r * r / (2.0 * s2)
        })
        .sum())
}

/// `-Σ_v λ_v log Σ_l λ_l ω_{v,l}` with `ω_{v,l}` the pairwise overlap integrals.
pub fn mog_entropy_lower_bound(m: &GaussianMixture) -> f64 {
    let comps = m.components();
    let log_w: Vec<f64> = m.weights().iter().map(|w| w.ln()).collect();
    let mut h = 0.0;
    for (v, cv) in comps.iter().enumerate() {
        let terms: Vec<f64> = comps
            .iter()
            .enumerate()
            .map(|(l, cl)| log_w[l] + pair_convolution_logpdf(cv, cl).expect("validated dims"))
            .collect();
        h -= m.weights()[v] * log_sum_exp(&terms);
    }
    h
}

pub fn categorical_log_pmf(y: usize, c: &CategoricalDist) -> Result<f64> {
    c.probs()
        .get(y)
        .map(|p| p.ln())
        .ok_or(Error::InvalidLabel {
            label: y,
            classes: c.num_classes(),
        })
}

/// Differential entropy `Σ ½ log(2πe σ²_i)`.
pub fn gauss_entropy(g: &DiagGaussian) -> f64 {
    g.var().iter().map(|s2| 0.5 * (LN_2PI + 1.0 + s2.ln())).sum()
}

/// Softmax of `[0, free_logits...]`, the mixture-weight parameterization.
pub fn weights_from_logits(free_logits: &[f64]) -> Vec<f64> {
    let mut logits = Vec::with_capacity(free_logits.len() + 1);
    logits.push(0.0);
    logits.extend_from_slice(free_logits);
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn g1(m: f64, v: f64) -> DiagGaussian {
        DiagGaussian::new(vec![m], vec![v]).unwrap()
    }

    #[test]
    fn standard_normal_log_density() {
        assert!((gauss_log_pdf(&[0.0], &g1(0.0, 1.0)).unwrap() + 0.918_938_5).abs() < 1e-7);
        let g2 = DiagGaussian::standard(2);
        assert!((gauss_log_pdf(&[0.0, 0.0], &g2).unwrap() + 1.837_877_1).abs() < 1e-7);
        assert!(gauss_log_pdf(&[0.0], &g2).is_err());
    }

    #[test]
    fn log_density_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..3.0)).collect();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = DiagGaussian::new(mean.clone(), var.clone()).unwrap();
        let mut direct = 0.0;
        for i in 0..5 {
            let z = (x[i] - mean[i]) / var[i].sqrt();
            direct += (1.0 / (2.0 * std::f64::consts::PI * var[i]).sqrt() * (-0.5 * z * z).exp()).ln();
        }
        assert!((gauss_log_pdf(&x, &g).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let (mu, s2) = (0.7, 2.3);
        let g = g1(mu, s2);
        let s = s2.sqrt();
        let n = 10_000;
        let (a, b) = (mu - 10.0 * s, mu + 10.0 * s);
        let h = (b - a) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = a + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * gauss_log_pdf(&[x], &g).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reparameterized_samples() {
        let g = g1(0.0, 4.0);
        assert_eq!(gauss_reparam_sample(&g, &[1.0]).unwrap(), vec![2.0]);
        let g = DiagGaussian::new(vec![1.5, -0.5], vec![0.3, 2.0]).unwrap();
        assert_eq!(gauss_reparam_sample(&g, &[0.0, 0.0]).unwrap(), g.mean());
    }

    #[test]
    fn reparameterized_moments() {
        let (mu, s2) = (1.3, 0.6);
        let g = g1(mu, s2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| gauss_reparam_sample(&g, &[rng.sample(StandardNormal)]).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (s2 / n as f64).sqrt();
        let se_var = s2 * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - mu).abs() < 4.0 * se_mean);
        assert!((var - s2).abs() < 4.0 * se_var);
    }

    #[test]
    fn convolution_closed_forms() {
        let a = g1(0.0, 1.0);
        let lp = pair_convolution_logpdf(&a, &a).unwrap();
        assert!((lp - (1.0 / (4.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-15);
        assert!((lp + 1.265_512_1).abs() < 1e-7);
        let far = g1(100.0, 1.0);
        assert!(pair_convolution_logpdf(&a, &far).unwrap() <= -2500.0);
    }

    #[test]
    fn entropy_bound_closed_forms() {
        let same = GaussianMixture::new(vec![g1(0.0, 1.0), g1(0.0, 1.0)], vec![0.5, 0.5]).unwrap();
        assert!((mog_entropy_lower_bound(&same) - 1.265_512_123_484_645).abs() < 1e-9);
        let apart = GaussianMixture::new(vec![g1(0.0, 1.0), g1(100.0, 1.0)], vec![0.5, 0.5]).unwrap();
        let expected = -(0.5 * 0.282_094_791_773_878_14f64).ln();
        assert!((mog_entropy_lower_bound(&apart) - expected).abs() < 1e-12);
        assert!((expected - 1.958_659_3).abs() < 1e-7);
    }

    #[test]
    fn gaussian_entropy_closed_forms() {
        assert!((gauss_entropy(&g1(0.0, 1.0)) - 1.418_938_5).abs() < 1e-7);
        assert!((gauss_entropy(&DiagGaussian::standard(2)) - 2.837_877_1).abs() < 1e-7);
        let g = DiagGaussian::new(vec![0.0; 33], vec![1.0; 33]).unwrap();
        assert!((gauss_entropy(&g) - 46.824_971).abs() < 1e-5);
    }

    #[test]
    fn categorical_lookup() {
        let u = CategoricalDist::uniform(3);
        assert!((categorical_log_pmf(2, &u).unwrap() + 1.098_612_3).abs() < 1e-7);
        let peaked = CategoricalDist::new(vec![1.0 - 2e-12, 1e-12, 1e-12]).unwrap();
        assert!(categorical_log_pmf(0, &peaked).unwrap().abs() < 1e-11);
        assert!(matches!(categorical_log_pmf(3, &u), Err(Error::InvalidLabel { .. })));
        let c = CategoricalDist::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert!((categorical_log_pmf(1, &c).unwrap() - c.probs()[1].ln()).abs() <= 1e-15);
    }

    #[test]
    fn simplex_constructors() {
        assert!(CategoricalDist::new(vec![0.5, 0.6]).is_err());
        let c = CategoricalDist::new(vec![0.5, 0.5 + 1e-11]).unwrap();
        assert!((c.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(GaussianMixture::new(vec![g1(0.0, 1.0), g1(1.0, 1.0)], vec![1.0, 0.0]).is_err());
        assert!(GaussianMixture::new(vec![g1(0.0, 1.0)], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn logits_parameterization_stays_on_simplex() {
        let w = weights_from_logits(&[0.0]);
        assert_eq!(w, vec![0.5, 0.5]);
        let w = weights_from_logits(&[40.0]);
        assert!(w[0] > 0.0 && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn arb_gauss(d: usize) -> impl Strategy<Value = DiagGaussian> {
        (
            proptest::collection::vec(-3.0f64..3.0, d),
            proptest::collection::vec(0.05f64..4.0, d),
        )
            .prop_map(|(m, v)| DiagGaussian::new(m, v).unwrap())
    }

    proptest! {
        #[test]
        fn bound_is_permutation_invariant(a in arb_gauss(3), b in arb_gauss(3), w in 0.01f64..0.99) {
            let m1 = GaussianMixture::new(vec![a.clone(), b.clone()], vec![w, 1.0 - w]).unwrap();
            let m2 = GaussianMixture::new(vec![b, a], vec![1.0 - w, w]).unwrap();
            prop_assert!((mog_entropy_lower_bound(&m1) - mog_entropy_lower_bound(&m2)).abs() < 1e-12);
        }

        #[test]
        fn convolution_is_symmetric(a in arb_gauss(4), b in arb_gauss(4)) {
            prop_assert_eq!(pair_convolution_logpdf(&a, &b).unwrap(), pair_convolution_logpdf(&b, &a).unwrap());
        }

        #[test]
        fn single_gaussian_entropy_dominates_bound(g in arb_gauss(3)) {
            let m = GaussianMixture::new(vec![g.clone(), g.clone()], vec![1.0 - 1e-9, 1e-9]).unwrap();
            prop_assert!(gauss_entropy(&g) >= mog_entropy_lower_bound(&m));
        }
    }
}
