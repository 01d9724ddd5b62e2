use super::params::ParamStore;
use crate::error::{Error, Result};

/// Central-difference gradient of a deterministic scalar function of `params`.
///
/// All stochastic inputs of `loss` must be frozen by the caller.
pub fn finite_diff_gradient<F>(mut loss: F, params: &ParamStore, h: f64) -> Result<ParamStore>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut out = params.zeros_like();
    let mut work = params.clone();
    let total = params.num_params();
    for k in 0..total {
        let (b, i) = params.locate(k).expect("coordinate in range");
        let orig = work.block_at_mut(b).values()[i];

        work.block_at_mut(b).values_mut()[i] = orig + h;
        let fp = loss(&work)?;
        work.block_at_mut(b).values_mut()[i] = orig - h;
        let fm = loss(&work)?;
        work.block_at_mut(b).values_mut()[i] = orig;

        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "finite difference at coordinate {k} ({}[{i}])",
                params.name_at(b)
            )));
        }
        out.block_at_mut(b).values_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

/// Largest `|a-b| / max(|a|, |b|, floor)` over all coordinates.
pub fn max_relative_error(a: &ParamStore, b: &ParamStore, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|((_, x), (_, y))| x.values().iter().zip(y.values()).map(|(&p, &q)| (p, q)))
        .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(floor))
        .fold(0.0, f64::max)
}
