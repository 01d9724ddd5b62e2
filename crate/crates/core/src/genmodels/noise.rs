/// Which standard-normal draw a caller is asking for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseStream {
    /// `ε^(l,t)` for mixture component `l`, Monte-Carlo index `t`, under
    /// imputation draw `draw` (0 when no view is imputed).
    Latent { component: usize, t: usize, draw: usize },
    /// Reparameterization noise for the imputed view, draw `draw`.
    Missing { draw: usize },
}

/// Source of the frozen standard-normal vectors consumed by the bounds.
///
/// Implementations must be deterministic in `(sample, stream)`: asking twice
/// for the same key gives the same vector.
pub trait NoiseSource: Sync {
    fn fill(&self, sample: usize, stream: NoiseStream, out: &mut [f64]);
}

/// All-zero noise: every reparameterized draw sits at its mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&self, _sample: usize, _stream: NoiseStream, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Noise given by a closure, for fixed or quadrature-style draws.
pub struct FnNoise<F>(pub F);

impl<F> NoiseSource for FnNoise<F>
where
    F: Fn(usize, NoiseStream, &mut [f64]) + Sync,
{
    fn fill(&self, sample: usize, stream: NoiseStream, out: &mut [f64]) {
        (self.0)(sample, stream, out)
    }
}
