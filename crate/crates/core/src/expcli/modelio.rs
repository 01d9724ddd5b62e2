//! Self-describing model checkpoints.
//!
//! Parameters are stored with a few `__meta.*` blocks recording the model
//! kind, the architecture and, optionally, the feature standardizer, so a
//! checkpoint can be reloaded without its training config.

use std::path::Path;

use crate::datakit::Standardizer;
use crate::diffcore::{load_checkpoint, save_checkpoint, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::genmodels::{Architecture, ModelDims, ModelKind, MultiViewModel};

const META_KIND: &str = "__meta.kind";
const META_DIMS: &str = "__meta.dims";
const META_PREFIX: &str = "__meta.";

fn std_key(what: &str, v: usize) -> String {
    format!("__meta.std.{what}.{v}")
}

/// Write `model` (and the standardizer its inputs went through) to `path`.
pub fn save_model(path: &Path, model: &MultiViewModel, standardizer: Option<&Standardizer>) -> Result<()> {
    let mut store = model.params.clone();
    let d = &model.arch.dims;
    if d.view_dims.len() != 2 {
        return Err(Error::Checkpoint("only two-view models can be saved".into()));
    }
    store.insert(META_KIND, Tensor::scalar(model.kind().code()))?;
    let mut dims = vec![
        d.view_dims[0] as f64,
        d.view_dims[1] as f64,
        d.num_classes as f64,
        d.latent_dim as f64,
        d.missing_view as f64,
        d.variance_floor,
    ];
    dims.extend(d.hidden_widths.iter().map(|&h| h as f64));
    store.insert(META_DIMS, Tensor::row(&dims))?;
    if let Some(s) = standardizer {
        for v in 0..s.mean.len() {
            store.insert(std_key("mean", v), Tensor::row(&s.mean[v]))?;
            store.insert(std_key("scale", v), Tensor::row(&s.scale[v]))?;
        }
    }
    save_checkpoint(path, &store)
}

fn as_count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e9 {
        Ok(x as usize)
    } else {
        Err(Error::Checkpoint(format!("bad {what} {x} in checkpoint metadata")))
    }
}

/// Inverse of [`save_model`].
pub fn load_model(path: &Path) -> Result<(MultiViewModel, Option<Standardizer>)> {
    let store = load_checkpoint(path)?;
    model_from_store(&store)
}

pub fn model_from_store(store: &ParamStore) -> Result<(MultiViewModel, Option<Standardizer>)> {
    let missing = |b: &str| Error::Checkpoint(format!("checkpoint lacks the {b} block"));
    let kind = ModelKind::from_code(store.get(META_KIND).map_err(|_| missing(META_KIND))?.values()[0])?;
    let m = store.get(META_DIMS).map_err(|_| missing(META_DIMS))?.values();
    if m.len() < 6 {
        return Err(Error::Checkpoint(format!("{META_DIMS} has {} entries, expected at least 6", m.len())));
    }
    let hidden = m[6..].iter().map(|&h| as_count(h, "hidden width")).collect::<Result<Vec<_>>>()?;
    let mut dims = ModelDims::new(
        &[as_count(m[0], "view width")?, as_count(m[1], "view width")?],
        as_count(m[2], "class count")?,
        as_count(m[3], "latent width")?,
        &hidden,
    );
    dims.missing_view = as_count(m[4], "missing view")?;
    dims.variance_floor = m[5];
    let arch = Architecture::new(kind, dims).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut params = ParamStore::new();
    for (name, t) in store.iter() {
        if !name.starts_with(META_PREFIX) {
            params.insert(name, t.clone())?;
        }
    }
    let model = MultiViewModel::zeroed(arch)?.with_params(params)?;

    let standardizer = if store.contains(&std_key("mean", 0)) {
        let mut s = Standardizer {
            mean: Vec::new(),
            scale: Vec::new(),
        };
        for v in 0..2 {
            s.mean.push(store.get(&std_key("mean", v))?.values().to_vec());
            s.scale.push(store.get(&std_key("scale", v))?.values().to_vec());
        }
        Some(s)
    } else {
        None
    };
    Ok((model, standardizer))
}
