//! Python bindings for the certificate library: measures and their
//! divergences, the gap evaluators, Monte-Carlo factors, datasets, and the
//! train-and-certify pipeline. Everything raises `ValueError` on the same
//! conditions the Rust API reports as errors.

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

use pacbound::bounds::{self, BoundFamily, BoundReport};
use pacbound::data::{self, Dataset};
use pacbound::lipschitz::{lipschitz_constant, maximize_surrogate, sample_rademacher, AscentConfig, AscentInit};
use pacbound::measures::{DiracMeasure, GaussianMeasure, PosteriorKind, PosteriorMeasure};
use pacbound::models::{self, ModelParams, ModelShape};
use pacbound::trainer::{self, TrainConfig};

fn err(e: pacbound::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_posterior(s: &str) -> PyResult<PosteriorKind> {
    match s.to_ascii_lowercase().as_str() {
        "dirac" => Ok(PosteriorKind::Dirac),
        "gaussian" => Ok(PosteriorKind::Gaussian),
        other => Err(PyValueError::new_err(format!(
            "unknown posterior {other:?}; expected dirac or gaussian"
        ))),
    }
}

fn parse_family(s: &str) -> PyResult<BoundFamily> {
    s.parse::<BoundFamily>().map_err(err)
}

fn build_shape(
    input_dim: usize,
    class_count: usize,
    margin_scale: f64,
    hidden_width: usize,
    hidden_depth: usize,
) -> PyResult<ModelShape> {
    if hidden_width == 0 {
        ModelShape::linear(input_dim, class_count, margin_scale).map_err(err)
    } else {
        ModelShape::mlp(input_dim, class_count, hidden_width, hidden_depth, margin_scale)
            .map_err(err)
    }
}

/// Isotropic Gaussian measure on R^d.
#[pyclass(name = "Gaussian", frozen)]
struct PyGaussian {
    inner: GaussianMeasure,
}

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: Vec<f64>, std: f64) -> PyResult<Self> {
        Ok(Self { inner: GaussianMeasure::new(mean, std).map_err(err)? })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().to_vec()
    }

    #[getter]
    fn std(&self) -> f64 {
        self.inner.std()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("Gaussian(dim={}, std={})", self.inner.dim(), self.inner.std())
    }
}

/// Point mass on R^d.
#[pyclass(name = "Dirac", frozen)]
struct PyDirac {
    inner: DiracMeasure,
}

#[pymethods]
impl PyDirac {
    #[new]
    fn new(point: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: DiracMeasure::new(point).map_err(err)? })
    }

    #[getter]
    fn point(&self) -> Vec<f64> {
        self.inner.point().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("Dirac(dim={})", self.inner.dim())
    }
}

/// Dense classification dataset with unit-ball rows.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic blobs task: one Gaussian cluster per class.
    #[staticmethod]
    fn blobs(
        m: usize,
        n: usize,
        class_count: usize,
        separation: f64,
        seed: u64,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: data::synth_gaussian_blobs(m, n, class_count, separation, seed).map_err(err)?,
        })
    }

    /// Loads the sparse `label idx:val` text format with 1-based indices.
    #[staticmethod]
    fn load_sparse(path: &str, n_features: usize) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_sparse_text(std::path::Path::new(path), n_features).map_err(err)?,
        })
    }

    /// Per-feature min-max scaling to [0, 1] followed by row projection.
    fn minmax_scale(&self) -> PyResult<Self> {
        Ok(Self { inner: self.inner.minmax_scale().map_err(err)? })
    }

    /// Seeded 50%/50% split into (train, test); odd rows go to train.
    fn split_half(&self, seed: u64) -> PyResult<(Self, Self)> {
        let (train, test) = data::split_half(&self.inner, seed).map_err(err)?;
        Ok((Self { inner: train }, Self { inner: test }))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint().to_string()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn label(&self, i: usize) -> PyResult<usize> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.label(i))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(rows={}, features={}, classes={})",
            self.inner.len(),
            self.inner.feature_dim(),
            self.inner.class_count()
        )
    }
}

/// A numerical certificate: family, ingredient terms, confidence ledger,
/// and the final value.
#[pyclass(name = "BoundReport", frozen)]
struct PyBoundReport {
    inner: BoundReport,
}

#[pymethods]
impl PyBoundReport {
    /// Parses a report from the JSON the CLI and library emit.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: BoundReport::from_json(text).map_err(err)? })
    }

    #[getter]
    fn value(&self) -> f64 {
        self.inner.value
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family.name().to_string()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn terms(&self) -> std::collections::BTreeMap<String, f64> {
        self.inner.terms.clone()
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.inner.notes.clone()
    }

    #[getter]
    fn delta_ledger(&self) -> Vec<(String, f64)> {
        self.inner
            .delta_ledger
            .entries()
            .iter()
            .map(|e| (format!("{:?}", e.purpose).to_ascii_lowercase(), e.share))
            .collect()
    }

    /// Re-evaluates the family formula from the stored terms.
    fn recompute(&self) -> PyResult<f64> {
        self.inner.recompute().map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("BoundReport(family={}, value={})", self.inner.family.name(), self.inner.value)
    }
}

/// Result of the train-and-certify pipeline.
#[pyclass(name = "TrainResult", frozen)]
struct PyTrainResult {
    #[pyo3(get)]
    center: Vec<f64>,
    #[pyo3(get)]
    posterior_std: Option<f64>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    epochs: usize,
    report: BoundReport,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn report(&self) -> PyBoundReport {
        PyBoundReport { inner: self.report.clone() }
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainResult(bound={}, iterations={})",
            self.report.value, self.iterations
        )
    }
}

// Divergences and transport costs.

/// KL divergence between isotropic Gaussians, in nats.
#[pyfunction]
fn kl_gaussian(q: PyRef<'_, PyGaussian>, p: PyRef<'_, PyGaussian>) -> PyResult<f64> {
    pacbound::measures::kl_gaussian(&q.inner, &p.inner).map_err(err)
}

/// Squared Hellinger distance between isotropic Gaussians.
#[pyfunction]
fn squared_hellinger(q: PyRef<'_, PyGaussian>, p: PyRef<'_, PyGaussian>) -> PyResult<f64> {
    pacbound::measures::squared_hellinger(&q.inner, &p.inner).map_err(err)
}

/// Total-variation upper bound (exact for equal stds, Pinsker otherwise).
#[pyfunction]
fn tv_upper(q: PyRef<'_, PyGaussian>, p: PyRef<'_, PyGaussian>) -> PyResult<f64> {
    pacbound::measures::tv_upper(&q.inner, &p.inner).map_err(err)
}

/// W1 upper bound from a point mass to an isotropic Gaussian.
#[pyfunction]
fn w1_dirac_to_gaussian(rho: PyRef<'_, PyDirac>, eta: PyRef<'_, PyGaussian>) -> PyResult<f64> {
    pacbound::measures::w1_dirac_to_gaussian(&rho.inner, &eta.inner).map_err(err)
}

/// Exact W2 distance between isotropic Gaussians.
#[pyfunction]
fn w2_gaussian(a: PyRef<'_, PyGaussian>, b: PyRef<'_, PyGaussian>) -> PyResult<f64> {
    pacbound::measures::w2_gaussian(&a.inner, &b.inner).map_err(err)
}

// Gap evaluators, one per empirical bound family.

/// Divergence-only gap.
#[pyfunction]
fn mcallester_gap(kl: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::mcallester_gap(kl, m, delta).map_err(err)
}

/// Interpolated transport/KL gap.
#[pyfunction]
fn kl_wass_gap(lip: f64, w1: f64, kl: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::kl_wass_gap(lip, w1, kl, m, delta).map_err(err)
}

/// Reverse-KL gap.
#[pyfunction]
fn reverse_kl_gap(w_gamma: f64, rkl: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::reverse_kl_gap(w_gamma, rkl, m, delta).map_err(err)
}

/// Squared-Hellinger gap.
#[pyfunction]
fn hellinger_gap(w_gamma: f64, h2: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::hellinger_gap(w_gamma, h2, m, delta).map_err(err)
}

/// Total-variation gap.
#[pyfunction]
fn tv_gap(w_gamma: f64, tv: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::tv_gap(w_gamma, tv, m, delta).map_err(err)
}

/// Catoni-style gap at a fixed temperature.
#[pyfunction]
fn catoni_gap(lip: f64, w1: f64, kl: f64, lam: f64, m: usize, delta: f64) -> PyResult<f64> {
    bounds::catoni_gap(lip, w1, kl, lam, m, delta).map_err(err)
}

/// Supermartingale gap with a second-moment term.
#[pyfunction]
fn supermartingale_gap(
    lip: f64,
    w1: f64,
    kl: f64,
    lam: f64,
    m: usize,
    delta: f64,
    second_moment: f64,
) -> PyResult<f64> {
    bounds::supermartingale_gap(lip, w1, kl, lam, m, delta, second_moment).map_err(err)
}

/// Fast-rate bound on the full risk (not a gap: includes the empirical term).
#[pyfunction]
fn catoni_fast_rate(
    emp_risk: f64,
    lip: f64,
    w1: f64,
    kl: f64,
    lam: f64,
    m: usize,
    delta: f64,
) -> PyResult<f64> {
    bounds::catoni_fast_rate(emp_risk, lip, w1, kl, lam, m, delta).map_err(err)
}

/// Heavy-tail (Student) risk bound from scalar ingredients.
#[pyfunction]
fn student_bound(
    lip: f64,
    sigma: f64,
    f_pd: f64,
    mean_dist_sq: f64,
    m: usize,
    delta: f64,
) -> PyResult<f64> {
    bounds::student_bound(lip, sigma, f_pd, mean_dist_sq, m, delta).map_err(err)
}

// Monte-Carlo and closed-form factors.

/// Monte-Carlo estimate of `sqrt(d) E|sqrt(p/u) - 1|`, `u ~ chi^2_p`.
/// Returns `(value, std_error)`.
#[pyfunction]
fn mc_f_factor(p: f64, d: usize, n_samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let f = bounds::mc_f_factor(p, d, n_samples, seed).map_err(err)?;
    Ok((f.value, f.std_error))
}

/// Heavy-tail interpolation factor `d ln(d) (2 - alpha) ln(1/(2 - alpha))`.
#[pyfunction]
fn heavy_tail_factor(alpha: f64, d: usize) -> PyResult<f64> {
    bounds::heavy_tail_factor(alpha, d).map_err(err)
}

/// Student degrees of freedom for a tail index in (1, 2).
#[pyfunction]
fn student_p_from_tail_index(alpha: f64) -> PyResult<f64> {
    bounds::student_p_from_tail_index(alpha).map_err(err)
}

// Models and training.

/// Average margin loss of the model with flat parameters `weights` on `data`.
#[pyfunction]
#[pyo3(signature = (data, weights, margin_scale, hidden_width = 0, hidden_depth = 0))]
fn empirical_risk(
    data: PyRef<'_, PyDataset>,
    weights: Vec<f64>,
    margin_scale: f64,
    hidden_width: usize,
    hidden_depth: usize,
) -> PyResult<f64> {
    let shape = build_shape(
        data.inner.feature_dim(),
        data.inner.class_count(),
        margin_scale,
        hidden_width,
        hidden_depth,
    )?;
    let params = ModelParams::new(shape.clone(), weights).map_err(err)?;
    models::empirical_risk(&params, &data.inner, shape.margin_scale()).map_err(err)
}

/// Trains a posterior by minimising the chosen certificate and certifies it
/// on the training set. Trainable objectives: `kl-wasserstein` (both
/// posterior kinds, estimates the gap constant first) and `mcallester`
/// (Gaussian posteriors).
#[pyfunction]
#[pyo3(signature = (
    data,
    posterior = "dirac",
    bound = "kl-wasserstein",
    delta = 0.05,
    seed = 0,
    margin_scale = 25.0,
    min_iterations = 2000,
    batch_size = 256,
    prior_std = 1.0,
    sigma_init = 0.05,
    hidden_width = 0,
    hidden_depth = 0,
    lip_iterations = 500,
    lip_batch = 256,
    lip_restarts = 1,
))]
#[allow(clippy::too_many_arguments)]
fn train_classifier(
    data: PyRef<'_, PyDataset>,
    posterior: &str,
    bound: &str,
    delta: f64,
    seed: u64,
    margin_scale: f64,
    min_iterations: usize,
    batch_size: usize,
    prior_std: f64,
    sigma_init: f64,
    hidden_width: usize,
    hidden_depth: usize,
    lip_iterations: usize,
    lip_batch: usize,
    lip_restarts: usize,
) -> PyResult<PyTrainResult> {
    let kind = parse_posterior(posterior)?;
    let family = parse_family(bound)?;
    let dataset = &data.inner;
    let shape = build_shape(
        dataset.feature_dim(),
        dataset.class_count(),
        margin_scale,
        hidden_width,
        hidden_depth,
    )?;
    let prior =
        GaussianMeasure::isotropic(shape.param_count(), 0.0, prior_std).map_err(err)?;
    let mut cfg = TrainConfig::new(kind, family, shape.clone(), delta, seed, prior);
    cfg.min_iterations = min_iterations;
    cfg.batch_size = batch_size;
    cfg.sigma_init = sigma_init;
    if family == BoundFamily::KlWasserstein {
        let eps = sample_rademacher(dataset.len(), seed.wrapping_add(101)).map_err(err)?;
        let ascent = AscentConfig { restarts: lip_restarts, ..AscentConfig::default() };
        let run = maximize_surrogate(
            dataset,
            &eps,
            &shape,
            &ascent,
            lip_iterations,
            lip_batch.min(dataset.len()),
            seed.wrapping_add(211),
            AscentInit::Random,
        )
        .map_err(err)?;
        cfg.lipschitz = Some(
            lipschitz_constant(
                run.value,
                models::loss_lipschitz_const(&shape),
                dataset.len(),
                delta / 2.0,
            )
            .map_err(err)?,
        );
    }
    let outcome = trainer::train(dataset, &cfg).map_err(err)?;
    let posterior_std = match &outcome.posterior {
        PosteriorMeasure::Gaussian(g) => Some(g.std()),
        PosteriorMeasure::Dirac(_) => None,
    };
    Ok(PyTrainResult {
        center: outcome.posterior.center().to_vec(),
        posterior_std,
        iterations: outcome.iterations,
        epochs: outcome.epochs,
        report: outcome.report,
    })
}

#[pymodule]
fn pacbound_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyDirac>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBoundReport>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(squared_hellinger, m)?)?;
    m.add_function(wrap_pyfunction!(tv_upper, m)?)?;
    m.add_function(wrap_pyfunction!(w1_dirac_to_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(w2_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(mcallester_gap, m)?)?;
    m.add_function(wrap_pyfunction!(kl_wass_gap, m)?)?;
    m.add_function(wrap_pyfunction!(reverse_kl_gap, m)?)?;
    m.add_function(wrap_pyfunction!(hellinger_gap, m)?)?;
    m.add_function(wrap_pyfunction!(tv_gap, m)?)?;
    m.add_function(wrap_pyfunction!(catoni_gap, m)?)?;
    m.add_function(wrap_pyfunction!(supermartingale_gap, m)?)?;
    m.add_function(wrap_pyfunction!(catoni_fast_rate, m)?)?;
    m.add_function(wrap_pyfunction!(student_bound, m)?)?;
    m.add_function(wrap_pyfunction!(mc_f_factor, m)?)?;
    m.add_function(wrap_pyfunction!(heavy_tail_factor, m)?)?;
    m.add_function(wrap_pyfunction!(student_p_from_tail_index, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_risk, m)?)?;
    m.add_function(wrap_pyfunction!(train_classifier, m)?)?;
    Ok(())
}
