use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::diffcore::{HeadSpec, MlpSpec, ParamStore, Tensor, DEFAULT_VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::probdist::{weights_from_logits, CategoricalDist};

/// Name of the free mixture-weight logits block. The first logit is pinned to 0.
pub const MIX_LOGITS: &str = "mix.logits";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Unsupervised, complete views.
    Mvae,
    /// Semi-supervised, complete views.
    Smvae,
    /// Semi-supervised with one view that may be missing.
    Simvae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mvae => "mvae",
            ModelKind::Smvae => "smvae",
            ModelKind::Simvae => "simvae",
        }
    }

    pub fn code(self) -> f64 {
        match self {
            ModelKind::Mvae => 0.0,
            ModelKind::Smvae => 1.0,
            ModelKind::Simvae => 2.0,
        }
    }

    pub fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(ModelKind::Mvae),
            1 => Ok(ModelKind::Smvae),
            2 => Ok(ModelKind::Simvae),
            _ => Err(Error::Checkpoint(format!("unknown model kind code {c}"))),
        }
    }

    pub fn is_supervised(self) -> bool {
        !matches!(self, ModelKind::Mvae)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvae" => Ok(ModelKind::Mvae),
            "smvae" => Ok(ModelKind::Smvae),
            "simvae" => Ok(ModelKind::Simvae),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Shape hyperparameters of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub view_dims: Vec<usize>,
    /// Ignored for [`ModelKind::Mvae`].
    pub num_classes: usize,
    pub latent_dim: usize,
    /// Encoder, classifier and imputer trunks; decoders use the reverse.
    pub hidden_widths: Vec<usize>,
    pub variance_floor: f64,
    /// Index of the view that may be missing ([`ModelKind::Simvae`] only).
    pub missing_view: usize,
}

impl ModelDims {
    pub fn new(view_dims: &[usize], num_classes: usize, latent_dim: usize, hidden_widths: &[usize]) -> Self {
        Self {
            view_dims: view_dims.to_vec(),
            num_classes,
            latent_dim,
            hidden_widths: hidden_widths.to_vec(),
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            missing_view: 1,
        }
    }
}

/// Network wiring of a model; parameters live separately in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub encoders: Vec<MlpSpec>,
    pub decoders: Vec<MlpSpec>,
    pub classifier: Option<MlpSpec>,
    pub imputer: Option<MlpSpec>,
    pub prior_y: Option<CategoricalDist>,
}

impl Architecture {
    pub fn new(kind: ModelKind, dims: ModelDims) -> Result<Self> {
        let v = dims.view_dims.len();
        if v < 2 {
            return Err(Error::Config(format!("need at least two views, got {v}")));
        }
        if dims.latent_dim == 0 || dims.view_dims.contains(&0) {
            return Err(Error::Config("view and latent dimensions must be >= 1".into()));
        }
        if kind.is_supervised() && dims.num_classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {}", dims.num_classes)));
        }
        if kind == ModelKind::Simvae {
            if v != 2 {
                return Err(Error::Config("the incomplete-view model supports exactly two views".into()));
            }
            if dims.missing_view >= v {
                return Err(Error::Config(format!("missing view index {} out of range", dims.missing_view)));
            }
        }
        let k = if kind.is_supervised() { dims.num_classes } else { 0 };
        let dz = dims.latent_dim;
        let floor = dims.variance_floor;
        let rev: Vec<usize> = dims.hidden_widths.iter().rev().copied().collect();

        let encoders = dims
            .view_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                MlpSpec::new(
                    &format!("enc{}", i + 1),
                    d + k,
                    &dims.hidden_widths,
                    vec![HeadSpec::linear("mean", dz), HeadSpec::variance("var", dz)],
                )
                .with_variance_floor(floor)
            })
            .collect();

        let observed = 1 - dims.missing_view.min(1);
        let decoders = dims
            .view_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let extra = if kind == ModelKind::Simvae && i == observed {
                    dims.view_dims[dims.missing_view]
                } else {
                    0
                };
                MlpSpec::new(
                    &format!("dec{}", i + 1),
                    k + dz + extra,
                    &rev,
                    vec![HeadSpec::linear("mean", d), HeadSpec::variance("var", d)],
                )
                .with_variance_floor(floor)
            })
            .collect();

        let classifier = kind.is_supervised().then(|| {
            MlpSpec::new(
                "cls",
                dims.view_dims.iter().sum(),
                &dims.hidden_widths,
                vec![HeadSpec::linear("logits", dims.num_classes)],
            )
        });

        let imputer = (kind == ModelKind::Simvae).then(|| {
            MlpSpec::new(
                "imp",
                dims.view_dims[observed],
                &dims.hidden_widths,
                vec![
                    HeadSpec::linear("mean", dims.view_dims[dims.missing_view]),
                    HeadSpec::variance("var", dims.view_dims[dims.missing_view]),
                ],
            )
            .with_variance_floor(floor)
        });

        let prior_y = kind.is_supervised().then(|| CategoricalDist::uniform(dims.num_classes));

        Ok(Self {
            kind,
            dims,
            encoders,
            decoders,
            classifier,
            imputer,
            prior_y,
        })
    }

    pub fn with_prior_y(mut self, prior: CategoricalDist) -> Result<Self> {
        if !self.kind.is_supervised() || prior.num_classes() != self.dims.num_classes {
            return Err(Error::Config("label prior does not match the class count".into()));
        }
        self.prior_y = Some(prior);
        Ok(self)
    }

    pub fn num_views(&self) -> usize {
        self.dims.view_dims.len()
    }

    /// Classes seen by the networks; 0 for the unsupervised model.
    pub fn label_dim(&self) -> usize {
        if self.kind.is_supervised() {
            self.dims.num_classes
        } else {
            0
        }
    }

    pub fn observed_view(&self) -> usize {
        1 - self.dims.missing_view.min(1)
    }

    pub fn missing_view(&self) -> usize {
        self.dims.missing_view
    }

    fn networks(&self) -> impl Iterator<Item = &MlpSpec> {
        self.encoders
            .iter()
            .chain(&self.decoders)
            .chain(self.classifier.iter())
            .chain(self.imputer.iter())
    }

    /// Glorot-uniform networks, zero biases, equal mixture weights.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for net in self.networks() {
            net.init(&mut rng, &mut p)?;
        }
        p.insert(MIX_LOGITS, Tensor::zeros(&[1, self.num_views() - 1]))?;
        Ok(p)
    }

    /// Every weight and bias zero.
    pub fn zero_params(&self) -> Result<ParamStore> {
        let mut p = ParamStore::new();
        for net in self.networks() {
            net.init_zeros(&mut p)?;
        }
        p.insert(MIX_LOGITS, Tensor::zeros(&[1, self.num_views() - 1]))?;
        Ok(p)
    }

    /// Mixture weights λ implied by `params`.
    pub fn mixture_weights(&self, params: &ParamStore) -> Result<Vec<f64>> {
        Ok(weights_from_logits(params.get(MIX_LOGITS)?.values()))
    }
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewModel {
    pub arch: Architecture,
    pub params: ParamStore,
}

impl MultiViewModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let params = arch.init_params(seed)?;
        Ok(Self { arch, params })
    }

    pub fn zeroed(arch: Architecture) -> Result<Self> {
        let params = arch.zero_params()?;
        Ok(Self { arch, params })
    }

    pub fn with_params(&self, params: ParamStore) -> Result<Self> {
        params.check_aligned(&self.params)?;
        Ok(Self {
            arch: self.arch.clone(),
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn mixture_weights(&self) -> Vec<f64> {
        self.arch.mixture_weights(&self.params).expect("mixture logits present")
    }
}
