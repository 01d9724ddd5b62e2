//! The three multi-view generative models and their variational bounds.

mod bounds;
mod engine;
mod model;
mod noise;

pub use bounds::{
    alpha_weight, classify, impute, mvae_elbo, negative_bound, negative_bound_with_grads, objective, objective_with_grads, posterior, simvae_bound_lc,
    simvae_bound_li, simvae_bound_ui, simvae_bound_uc, simvae_objective, smvae_labeled_bound,
    smvae_objective, smvae_unlabeled_bound, BoundBreakdown, MonteCarlo, ObjectiveValue, Strata, Stratum,
    StratumCounts, Weighting,
};
pub use model::{Architecture, ModelDims, ModelKind, MultiViewModel, MIX_LOGITS};
pub use noise::{FnNoise, NoiseSource, NoiseStream, ZeroNoise};
