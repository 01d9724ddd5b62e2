//! Python bindings: synthetic data, models loaded from checkpoints (or built
//! at random), classification, imputation, training runs and self-checks.

use std::path::PathBuf;

use mvfusion_core::datakit::{generate_synthetic, Standardizer, SyntheticSpec};
use mvfusion_core::diffcore::Tensor;
use mvfusion_core::expcli::{self, load_model, save_model, selfcheck, Overrides};
use mvfusion_core::genmodels::{classify, impute, ModelKind, MultiViewModel};
use mvfusion_core::probdist::{mog_entropy_lower_bound, DiagGaussian, GaussianMixture};
use mvfusion_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Matrix = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Contract(_) => PyValueError::new_err(e.to_string()),
        Error::Io(_) | Error::Checkpoint(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn tensor(rows: &Matrix) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(to_py)
}

fn matrix(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    match kind {
        "mvae" => Ok(ModelKind::Mvae),
        "smvae" => Ok(ModelKind::Smvae),
        "simvae" => Ok(ModelKind::Simvae),
        other => Err(PyValueError::new_err(format!("unknown model kind {other:?}"))),
    }
}

/// A trained (or randomly initialized) multi-view model.
#[pyclass(name = "Model", module = "mvfusion")]
struct PyModel {
    inner: MultiViewModel,
    standardizer: Option<Standardizer>,
}

#[pymethods]
impl PyModel {
    /// Load a checkpoint written by `mvfusion train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, standardizer) = load_model(&path).map_err(to_py)?;
        Ok(Self { inner, standardizer })
    }

    /// A freshly initialized model.
    #[staticmethod]
    #[pyo3(signature = (kind, view_dims, num_classes, latent_dim, hidden_widths, seed=0))]
    fn random(
        kind: &str,
        view_dims: Vec<usize>,
        num_classes: usize,
        latent_dim: usize,
        hidden_widths: Vec<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = selfcheck::random_model(parse_kind(kind)?, &view_dims, num_classes, latent_dim, &hidden_widths, seed)
            .map_err(to_py)?;
        Ok(Self {
            inner,
            standardizer: None,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.inner, self.standardizer.as_ref()).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.num_params()
    }

    /// Posterior mixture weights, one per view.
    #[getter]
    fn mixture_weights(&self) -> Vec<f64> {
        self.inner.mixture_weights()
    }

    /// Class probabilities for complete rows (inputs in model units).
    fn classify(&self, views: Vec<Matrix>) -> PyResult<Matrix> {
        let ts = views.iter().map(tensor).collect::<PyResult<Vec<_>>>()?;
        let probs = classify(&self.inner, &ts).map_err(to_py)?;
        Ok(probs.iter().map(|p| p.probs().to_vec()).collect())
    }

    /// Conditional-mean imputation of the missing view from the observed one.
    /// Inputs and outputs are in original units when the checkpoint carries a
    /// standardizer.
    fn impute(&self, observed: Matrix) -> PyResult<Matrix> {
        let (obs, mis) = (self.inner.arch.observed_view(), self.inner.arch.missing_view());
        let mut x = tensor(&observed)?;
        if let Some(s) = &self.standardizer {
            x = s.transform_view(obs, &x);
        }
        let mut hat = impute(&self.inner, &x).map_err(to_py)?;
        if let Some(s) = &self.standardizer {
            hat = s.inverse_view(mis, &hat);
        }
        Ok(matrix(&hat))
    }

    fn __repr__(&self) -> String {
        let d = &self.inner.arch.dims;
        format!(
            "Model(kind={:?}, view_dims={:?}, num_classes={}, latent_dim={})",
            self.kind(),
            d.view_dims,
            d.num_classes,
            d.latent_dim
        )
    }
}

/// Sample the synthetic two-view generator; returns `(view1, view2, labels)`.
#[pyfunction]
#[pyo3(signature = (n=5000, seed=0, informative_view2=true))]
fn synthetic(n: usize, seed: u64, informative_view2: bool) -> PyResult<(Matrix, Matrix, Vec<usize>)> {
    let spec = SyntheticSpec {
        n,
        seed,
        informative_view2,
        ..SyntheticSpec::default()
    };
    let (ds, _) = generate_synthetic(&spec).map_err(to_py)?;
    let labels = ds.true_labels().iter().map(|y| y.expect("generated rows are labeled")).collect();
    Ok((matrix(&ds.views()[0]), matrix(&ds.views()[1]), labels))
}

/// Lower bound on the entropy of a diagonal Gaussian mixture.
#[pyfunction]
fn entropy_lower_bound(means: Matrix, variances: Matrix, weights: Vec<f64>) -> PyResult<f64> {
    let comps = means
        .into_iter()
        .zip(variances)
        .map(|(m, v)| DiagGaussian::new(m, v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let mix = GaussianMixture::new(comps, weights).map_err(to_py)?;
    Ok(mog_entropy_lower_bound(&mix))
}

/// Run `mvfusion train` on a config file; returns one dict per seed.
#[pyfunction]
#[pyo3(signature = (config, out=None, seeds=None))]
fn train<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let cfg = expcli::load_config(&config, &Overrides { out, seeds }).map_err(to_py)?;
    let outcomes = py.detach(|| expcli::cmd_train(&cfg)).map_err(to_py)?;
    outcomes
        .iter()
        .map(|o| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("seed", o.seed)?;
            d.set_item("test_accuracy", o.test_accuracy)?;
            d.set_item("test_nmse", o.test_nmse)?;
            d.set_item("baseline_nmse", o.baseline_nmse)?;
            d.set_item("mixture_weights", o.model.mixture_weights())?;
            d.set_item("checkpoint", o.record.checkpoint.clone())?;
            Ok(d)
        })
        .collect()
}

/// Numerical self-checks; returns `(family, name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (quick=true))]
fn selfcheck_report(py: Python<'_>, quick: bool) -> PyResult<Vec<(String, String, bool, String)>> {
    let opts = if quick {
        selfcheck::SelfcheckOptions::quick()
    } else {
        selfcheck::SelfcheckOptions::default()
    };
    let results = py.detach(|| selfcheck::run_selfcheck(&opts)).map_err(to_py)?;
    Ok(results
        .into_iter()
        .map(|r| (r.family.to_string(), r.name, r.passed, r.detail))
        .collect())
}

#[pymodule]
fn mvfusion(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck_report, m)?)?;
    Ok(())
}
