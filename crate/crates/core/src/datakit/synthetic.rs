use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{keyed_rng, MultiViewDataset, GENERATOR_STREAM};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Parameters of the two-view synthetic generator.
///
/// With `u = [separation·e_y ; z]`, `y` uniform and `z ~ N(0, I)`:
/// `x2 = A2·u + σ2·ε2` and `x1 = A1·u + C·x2 + σ1·ε1`, so view 1 depends on
/// view 2 the same way the incomplete-data model's observed view depends on
/// its missing view. With `informative_view2 = false`, `x2 = σ2·ε2` is pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub view_dims: [usize; 2],
    pub n: usize,
    pub separation: f64,
    pub coupling: f64,
    pub noise_sd: [f64; 2],
    pub informative_view2: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            latent_dim: 8,
            view_dims: [20, 8],
            n: 5000,
            separation: 0.8,
            coupling: 0.5,
            noise_sd: [1.0, 1.0],
            informative_view2: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic data needs at least two classes".into()));
        }
        if self.latent_dim == 0 || self.view_dims.contains(&0) || self.n == 0 {
            return Err(Error::Config("synthetic dimensions and n must be >= 1".into()));
        }
        if self.noise_sd.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("synthetic noise sd must be > 0".into()));
        }
        if !self.separation.is_finite() || !self.coupling.is_finite() {
            return Err(Error::Config("synthetic separation and coupling must be finite".into()));
        }
        Ok(())
    }
}

/// The generator's parameters, for oracle use.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    /// `[d1, K + latent]`
    pub a1: Tensor,
    /// `[d2, K + latent]`; zero when view 2 is uninformative.
    pub a2: Tensor,
    /// `[d1, d2]`
    pub c: Tensor,
}

impl SyntheticTruth {
    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = &self.spec;
        (s.view_dims[0], s.view_dims[1], s.num_classes, s.latent_dim)
    }

    /// Mean of `[x1 ; x2]` given class `y`.
    pub fn class_mean(&self, y: usize) -> Vec<f64> {
        let (d1, d2, _, _) = self.dims();
        let sep = self.spec.separation;
        let m2: Vec<f64> = (0..d2).map(|i| sep * self.a2.get(i, y)).collect();
        let m1: Vec<f64> = (0..d1)
            .map(|i| sep * self.a1.get(i, y) + (0..d2).map(|j| self.c.get(i, j) * m2[j]).sum::<f64>())
            .collect();
        [m1, m2].concat()
    }

    /// Class-independent covariance of `[x1 ; x2]`, `[d1+d2, d1+d2]`.
    pub fn covariance(&self) -> Tensor {
        let (d1, d2, k, dz) = self.dims();
        let d = d1 + d2;
        let [s1, s2] = self.spec.noise_sd;
        // x = M z + N ε with M = [B1 + C B2 ; B2], N = [[σ1 I, σ2 C], [0, σ2 I]]
        let mut m = Tensor::zeros(&[d, dz]);
        for a in 0..dz {
            for i in 0..d2 {
                m.set(d1 + i, a, self.a2.get(i, k + a));
            }
            for i in 0..d1 {
                let cb: f64 = (0..d2).map(|j| self.c.get(i, j) * self.a2.get(j, k + a)).sum();
                m.set(i, a, self.a1.get(i, k + a) + cb);
            }
        }
        let mut nm = Tensor::zeros(&[d, d]);
        for i in 0..d1 {
            nm.set(i, i, s1);
            for j in 0..d2 {
                nm.set(i, d1 + j, s2 * self.c.get(i, j));
            }
        }
        for j in 0..d2 {
            nm.set(d1 + j, d1 + j, s2);
        }
        let mut cov = Tensor::zeros(&[d, d]);
        for r in 0..d {
            for c in 0..d {
                let mm: f64 = (0..dz).map(|a| m.get(r, a) * m.get(c, a)).sum();
                let nn: f64 = (0..d).map(|a| nm.get(r, a) * nm.get(c, a)).sum();
                cov.set(r, c, mm + nn);
            }
        }
        cov
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, v).expect("shape")
}

/// Draw a fully labeled, complete dataset. Deterministic per `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(MultiViewDataset, SyntheticTruth)> {
    spec.validate()?;
    let mut rng = keyed_rng(spec.seed, GENERATOR_STREAM);
    let (k, dz) = (spec.num_classes, spec.latent_dim);
    let [d1, d2] = spec.view_dims;
    let a1 = gaussian_matrix(&mut rng, d1, k + dz, 1.0);
    let a2 = if spec.informative_view2 {
        gaussian_matrix(&mut rng, d2, k + dz, 1.0)
    } else {
        Tensor::zeros(&[d2, k + dz])
    };
    let c = gaussian_matrix(&mut rng, d1, d2, spec.coupling / (d2 as f64).sqrt());
    let truth = SyntheticTruth {
        spec: spec.clone(),
        a1,
        a2,
        c,
    };

    let [s1, s2] = spec.noise_sd;
    let mut x1 = Tensor::zeros(&[spec.n, d1]);
    let mut x2 = Tensor::zeros(&[spec.n, d2]);
    let mut labels = Vec::with_capacity(spec.n);
    let mut u = vec![0.0; k + dz];
    for i in 0..spec.n {
        let y = rng.random_range(0..k);
        labels.push(Some(y));
        u.fill(0.0);
        u[y] = spec.separation;
        for ua in &mut u[k..] {
            *ua = rng.sample(StandardNormal);
        }
        let r2 = x2.row_slice_mut(i);
        for (j, r) in r2.iter_mut().enumerate() {
            let mean: f64 = (0..k + dz).map(|a| truth.a2.get(j, a) * u[a]).sum();
            *r = mean + s2 * rng.sample::<f64, _>(StandardNormal);
        }
        let row2 = x2.row_slice(i).to_vec();
        let r1 = x1.row_slice_mut(i);
        for (j, r) in r1.iter_mut().enumerate() {
            let mean: f64 = (0..k + dz).map(|a| truth.a1.get(j, a) * u[a]).sum::<f64>()
                + (0..d2).map(|b| truth.c.get(j, b) * row2[b]).sum::<f64>();
            *r = mean + s1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let ds = MultiViewDataset::new(vec![x1, x2], labels, k)?;
    Ok((ds, truth))
}
