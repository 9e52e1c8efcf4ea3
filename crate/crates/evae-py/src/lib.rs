//! Python bindings: the sprites dataset, a trainable VAE, the genetic
//! operators and the full experiment runner.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use evae::adam::AdamConfig;
use evae::config::ExperimentConfig;
use evae::error::EvaeError;
use evae::nn::ParamStore;
use evae::rng::Rng;
use evae::sprites::{DatasetConfig, SpritesDataset};
use evae::tensor::Tensor;
use evae::trainer::run_to_dir;
use evae::vae::{elbo_loss, kl_per_dim, Likelihood, VaeModel};
use evae::vga::VgaConfig;

fn to_py_err(err: EvaeError) -> PyErr {
    match err {
        EvaeError::Config(_) | EvaeError::Usage(_) => PyValueError::new_err(err.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Procedurally generated binary sprites (shape x scale x orientation x
/// position grids).
#[pyclass(name = "SpritesData")]
struct PySpritesData {
    inner: SpritesDataset,
}

#[pymethods]
impl PySpritesData {
    #[new]
    #[pyo3(signature = (canvas=32, shapes=3, scales=4, orientations=8, positions=8, seed=1))]
    fn new(
        canvas: usize,
        shapes: usize,
        scales: usize,
        orientations: usize,
        positions: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = DatasetConfig {
            canvas,
            shapes,
            scales,
            orientations,
            positions,
            seed,
        };
        Ok(PySpritesData {
            inner: SpritesDataset::generate(&cfg).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySpritesData {
            inner: SpritesDataset::load(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn canvas(&self) -> usize {
        self.inner.canvas()
    }

    /// One image as a flat list of 0.0/1.0 pixel values.
    fn image(&self, index: usize) -> PyResult<Vec<f64>> {
        if index >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {index} out of range")));
        }
        Ok(self.inner.row(index))
    }

    /// Ground-truth factor indices (shape, scale, orientation, pos_x, pos_y).
    fn label(&self, index: usize) -> PyResult<(u16, u16, u16, u16, u16)> {
        let l = self
            .inner
            .labels
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok((l.shape, l.scale, l.orientation, l.pos_x, l.pos_y))
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }
}

/// A dense VAE with its own parameters, optimizer state and noise stream.
#[pyclass(name = "Vae")]
struct PyVae {
    model: VaeModel,
    store: ParamStore,
    rng: Rng,
    adam: AdamConfig,
    iteration: u64,
}

#[pymethods]
impl PyVae {
    #[new]
    #[pyo3(signature = (input_dim, encoder_hidden, decoder_hidden, latent_dim, seed=0, likelihood="bernoulli", lr=1e-4))]
    fn new(
        input_dim: usize,
        encoder_hidden: Vec<usize>,
        decoder_hidden: Vec<usize>,
        latent_dim: usize,
        seed: u64,
        likelihood: &str,
        lr: f64,
    ) -> PyResult<Self> {
        let likelihood = match likelihood {
            "bernoulli" => Likelihood::Bernoulli,
            "gaussian" => Likelihood::Gaussian,
            other => {
                return Err(PyValueError::new_err(format!(
                    "likelihood must be bernoulli or gaussian, got {other}"
                )))
            }
        };
        let mut master = Rng::seeded(seed);
        let mut init_rng = master.fork();
        let rng = master.fork();
        let mut store = ParamStore::new();
        let model = VaeModel::new(
            &mut store,
            input_dim,
            &encoder_hidden,
            &decoder_hidden,
            latent_dim,
            likelihood,
            &mut init_rng,
        )
        .map_err(to_py_err)?;
        Ok(PyVae {
            model,
            store,
            rng,
            adam: AdamConfig::with_lr(lr),
            iteration: 0,
        })
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.model.latent_dim
    }

    /// Posterior statistics for a batch given as a flat row-major list.
    fn encode(&self, x: Vec<f64>, batch: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let x = batch_tensor(x, batch, self.model.input_dim)?;
        let stats = self.model.encode(&self.store, &x).map_err(to_py_err)?;
        Ok((stats.mu.values().to_vec(), stats.log_var.values().to_vec()))
    }

    /// Decode latent codes to pixel intensities in [0, 1].
    fn decode(&self, z: Vec<f64>, batch: usize) -> PyResult<Vec<f64>> {
        let z = batch_tensor(z, batch, self.model.latent_dim)?;
        Ok(self
            .model
            .decode_mean(&self.store, &z)
            .map_err(to_py_err)?
            .into_values())
    }

    /// Evaluate the beta-weighted loss without updating parameters.
    fn elbo<'py>(
        &mut self,
        py: Python<'py>,
        x: Vec<f64>,
        batch: usize,
        beta: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let x = batch_tensor(x, batch, self.model.input_dim)?;
        let eval = elbo_loss(
            &self.model,
            &self.store,
            &x,
            beta,
            self.iteration,
            &mut self.rng,
        )
        .map_err(to_py_err)?;
        report_dict(py, &eval.report)
    }

    /// One forward/backward/Adam step; returns the loss report.
    fn train_step<'py>(
        &mut self,
        py: Python<'py>,
        x: Vec<f64>,
        batch: usize,
        beta: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let x = batch_tensor(x, batch, self.model.input_dim)?;
        let report = evae::trainer::inner_step(
            &self.model,
            &mut self.store,
            &x,
            beta,
            self.iteration,
            &mut self.rng,
            &self.adam,
        )
        .map_err(to_py_err)?;
        self.iteration += 1;
        report_dict(py, &report)
    }

    /// Closed-form per-dimension KL for explicit posterior statistics.
    #[staticmethod]
    fn kl_per_dim(mu: Vec<f64>, log_var: Vec<f64>, batch: usize) -> PyResult<Vec<f64>> {
        if mu.len() != log_var.len() {
            return Err(PyValueError::new_err(
                "mu and log_var must have equal length",
            ));
        }
        let k = mu
            .len()
            .checked_div(batch)
            .filter(|k| k * batch == mu.len() && *k > 0)
            .ok_or_else(|| PyValueError::new_err("length must be batch * latent_dim"))?;
        let stats = evae::vae::LatentStats {
            mu: Tensor::matrix(batch, k, mu).map_err(to_py_err)?,
            log_var: Tensor::matrix(batch, k, log_var).map_err(to_py_err)?,
        };
        kl_per_dim(&stats).map_err(to_py_err)
    }
}

fn batch_tensor(data: Vec<f64>, batch: usize, width: usize) -> PyResult<Tensor> {
    if data.len() != batch * width {
        return Err(PyValueError::new_err(format!(
            "expected {batch} x {width} = {} values, got {}",
            batch * width,
            data.len()
        )));
    }
    Tensor::matrix(batch, width, data).map_err(to_py_err)
}

fn report_dict<'py>(
    py: Python<'py>,
    report: &evae::vae::ElboReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("recon_loss", report.recon_loss)?;
    d.set_item("kl_total", report.kl_total)?;
    d.set_item("kl_per_dim", report.kl_per_dim.clone())?;
    d.set_item("beta", report.beta)?;
    d.set_item("total_loss", report.total_loss)?;
    d.set_item("iteration", report.iteration)?;
    Ok(d)
}

/// SBX spread factor from a uniform draw.
#[pyfunction]
fn sample_rc(u: f64, eta: f64) -> PyResult<f64> {
    evae::vga::sample_rc(u, eta).map_err(to_py_err)
}

/// Raw SBX children of two parents (before clamping).
#[pyfunction]
fn sbx_children(parent_prev: f64, parent_cur: f64, r_c: f64) -> (f64, f64) {
    evae::vga::sbx_children(parent_prev, parent_cur, r_c)
}

/// Cauchy mutation `clamp(beta + scale * r_m)`.
#[pyfunction]
#[pyo3(signature = (beta, r_m, scale=1.0, beta_min=1e-4, beta_max=100.0))]
fn apply_mutation(beta: f64, r_m: f64, scale: f64, beta_min: f64, beta_max: f64) -> f64 {
    let cfg = VgaConfig {
        mutation_scale: scale,
        beta_min,
        beta_max,
        ..VgaConfig::default()
    };
    evae::vga::apply_mutation(beta, r_m, &cfg)
}

/// Trial fitness: ELBO change plus distance of the KL from the set point.
#[pyfunction]
fn fitness(elbo_next: f64, elbo_cur: f64, kl_next: f64, set_point: f64) -> f64 {
    let cfg = VgaConfig {
        set_point,
        ..VgaConfig::default()
    };
    evae::vga::fitness(elbo_next, elbo_cur, kl_next, &cfg)
}

/// Sigmoid cost-annealing weight at iteration `t` of `horizon`.
#[pyfunction]
fn cost_weight(t: u64, horizon: u64) -> f64 {
    evae::schedulers::cost_weight(t, horizon)
}

/// Cyclical annealing weight at iteration `t`.
#[pyfunction]
fn cyclical_weight(t: u64, horizon: u64, cycles: u64, ramp_fraction: f64) -> f64 {
    evae::schedulers::cyclical_weight(t, horizon, cycles, ramp_fraction)
}

/// Run a full experiment from a config file, writing the usual artifacts.
/// Returns a summary dict with the output paths and the final metrics row.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seed=None, controller=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    controller: Option<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::load(Path::new(&config_path)).map_err(to_py_err)?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
    }
    if let Some(kind) = controller {
        cfg.override_controller(&kind).map_err(to_py_err)?;
    }
    if let Some(dir) = out_dir {
        cfg.run.out_dir = dir.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(to_py_err)?;
    let artifacts = run_to_dir(&cfg).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("out_dir", artifacts.out_dir.to_string_lossy().into_owned())?;
    d.set_item("dataset_hash", artifacts.dataset_hash)?;
    d.set_item(
        "metrics_csv",
        artifacts
            .out_dir
            .join("metrics.csv")
            .to_string_lossy()
            .into_owned(),
    )?;
    if let Some(last) = artifacts.last_row {
        d.set_item("final_iteration", last.iteration)?;
        d.set_item("final_beta", last.beta)?;
        d.set_item("final_recon_loss", last.recon_loss)?;
        d.set_item("final_kl_total", last.kl_total)?;
    }
    Ok(d)
}

#[pymodule]
fn evae_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpritesData>()?;
    m.add_class::<PyVae>()?;
    m.add_function(wrap_pyfunction!(sample_rc, m)?)?;
    m.add_function(wrap_pyfunction!(sbx_children, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mutation, m)?)?;
    m.add_function(wrap_pyfunction!(fitness, m)?)?;
    m.add_function(wrap_pyfunction!(cost_weight, m)?)?;
    m.add_function(wrap_pyfunction!(cyclical_weight, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
