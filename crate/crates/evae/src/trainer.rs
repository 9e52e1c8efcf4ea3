//! The inner-outer joint training loop.
//!
//! Inner: one SGVB step (forward, backward, Adam) per iteration on the
//! beta-weighted loss. Outer: every `outer_interval` iterations the active
//! controller runs — the VGA draws its evolve gate and may spawn candidate
//! trials, schedules simply emit the next beta.
//!
//! Candidate trials are side-effect-free by construction: each trial clones
//! the parameter store, the noise stream and the batch stream, so every
//! candidate at an event sees the identical upcoming data and noise the main
//! trajectory would see, and the main state is never touched.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adam::{adam_step, AdamConfig};
use crate::checkpoint::{Checkpoint, ControllerState};
use crate::config::{ControllerChoice, ExperimentConfig};
use crate::error::{EvaeError, Result};
use crate::log_info;
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::schedulers::ScheduleState;
use crate::sprites::{BatchStream, SpritesDataset};
use crate::tensor::Tensor;
use crate::vae::{elbo_loss, ElboReport, VaeModel};
use crate::vga::{
    CandidateEvaluator, FitnessElbo, Population, TrialOutcome, VgaController, VgaEvent,
};

/// One logged row of training metrics. `wall_clock_ms` is informational and
/// is written to a separate timing file so the metrics CSV stays
/// byte-reproducible across reruns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub beta: f64,
    pub recon_loss: f64,
    pub kl_total: f64,
    pub total_loss: f64,
    pub fitness: Option<f64>,
    pub kl_per_dim: Vec<f64>,
    pub wall_clock_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleTraceRow {
    pub iteration: u64,
    pub beta: f64,
    pub kl_observed: Option<f64>,
    pub error: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum ControllerRuntime {
    Vga(VgaController),
    Schedule(ScheduleState),
}

/// Full mutable state of a run.
#[derive(Debug)]
pub struct TrainerState {
    pub model: VaeModel,
    pub store: ParamStore,
    pub model_rng: Rng,
    pub stream: BatchStream,
    pub iteration: u64,
    pub applied_beta: f64,
    pub controller: ControllerRuntime,
}

impl TrainerState {
    /// Initialize from a config. Sub-streams for parameter init, noise, data
    /// order and the controller are forked deterministically from the seed.
    pub fn init(cfg: &ExperimentConfig, dataset: &SpritesDataset) -> Result<Self> {
        let mut master = Rng::seeded(cfg.run.seed);
        let mut init_rng = master.fork();
        let model_rng = master.fork();
        let data_rng = master.fork();
        let vga_rng = master.fork();

        let mut store = ParamStore::new();
        let model = VaeModel::new(
            &mut store,
            dataset.pixels_per_image(),
            &cfg.model.encoder_hidden,
            &cfg.model.decoder_hidden,
            cfg.model.latent_dim,
            cfg.model.likelihood,
            &mut init_rng,
        )?;
        let stream = BatchStream::new(
            dataset.len(),
            cfg.run.batch_size,
            cfg.data.shuffle,
            data_rng,
        )?;
        let controller = match &cfg.controller {
            ControllerChoice::Vga(v) => ControllerRuntime::Vga(VgaController::new(
                v.clone(),
                cfg.run.initial_beta,
                vga_rng,
            )?),
            other => {
                let sched = other
                    .schedule(cfg.run.total_iters)?
                    .expect("non-vga controller has a schedule");
                ControllerRuntime::Schedule(sched)
            }
        };
        let applied_beta = match &controller {
            ControllerRuntime::Vga(c) => c.applied_beta,
            ControllerRuntime::Schedule(s) => s.current_beta(),
        };
        Ok(TrainerState {
            model,
            store,
            model_rng,
            stream,
            iteration: 0,
            applied_beta,
            controller,
        })
    }

    fn hidden_dims(layers: &[crate::nn::LayerSpec]) -> Vec<usize> {
        layers[..layers.len().saturating_sub(1)]
            .iter()
            .map(|l| l.out_dim)
            .collect()
    }

    /// Snapshot the complete state.
    pub fn checkpoint(&self) -> Checkpoint {
        let controller = match &self.controller {
            ControllerRuntime::Vga(c) => ControllerState::Vga {
                cfg: c.cfg.clone(),
                members: c.pop.members.clone(),
                previous_beta: c.pop.previous_beta,
                applied_index: c.pop.applied_index,
                status_quo: c.status_quo,
                rng: c.rng.state(),
            },
            ControllerRuntime::Schedule(s) => ControllerState::Schedule(s.clone()),
        };
        Checkpoint {
            iteration: self.iteration,
            applied_beta: self.applied_beta,
            input_dim: self.model.input_dim,
            latent_dim: self.model.latent_dim,
            encoder_hidden: Self::hidden_dims(&self.model.encoder.layers),
            decoder_hidden: Self::hidden_dims(&self.model.decoder.layers),
            likelihood: self.model.likelihood,
            store: self.store.clone(),
            model_rng: self.model_rng.state(),
            stream: self.stream.clone(),
            controller,
        }
    }

    /// Rebuild a state from a snapshot; continuing from it reproduces the
    /// original trajectory bit-exactly.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model = VaeModel::attach(
            &ckpt.store,
            ckpt.input_dim,
            &ckpt.encoder_hidden,
            &ckpt.decoder_hidden,
            ckpt.latent_dim,
            ckpt.likelihood,
        )?;
        let controller = match ckpt.controller {
            ControllerState::Vga {
                cfg,
                members,
                previous_beta,
                applied_index,
                status_quo,
                rng,
            } => {
                let mut pop = Population {
                    members,
                    best_pair: None,
                    previous_beta,
                    applied_index,
                };
                pop.refresh_best();
                ControllerRuntime::Vga(VgaController {
                    cfg,
                    pop,
                    rng: Rng::from_state(rng),
                    applied_beta: ckpt.applied_beta,
                    status_quo,
                    events: Vec::new(),
                    adopt_candidate: None,
                })
            }
            ControllerState::Schedule(s) => ControllerRuntime::Schedule(s),
        };
        Ok(TrainerState {
            model,
            store: ckpt.store,
            model_rng: Rng::from_state(ckpt.model_rng),
            stream: ckpt.stream,
            iteration: ckpt.iteration,
            applied_beta: ckpt.applied_beta,
            controller,
        })
    }
}

/// One forward/backward/Adam update on the beta-weighted loss.
pub fn inner_step(
    model: &VaeModel,
    store: &mut ParamStore,
    batch: &Tensor,
    beta: f64,
    iteration: u64,
    rng: &mut Rng,
    adam: &AdamConfig,
) -> Result<ElboReport> {
    let eval = elbo_loss(model, store, batch, beta, iteration, rng)?;
    store.zero_grads();
    eval.graph.backward(eval.loss, store)?;
    adam_step(store, adam)?;
    Ok(eval.report)
}

/// Measurements from one candidate trial.
#[derive(Clone, Debug)]
pub struct TrialReadings {
    /// First trial step's report values (the checkpoint's own forward pass).
    pub first_recon: f64,
    pub first_kl: f64,
    /// Means over the final `min(window, 10)` trial steps.
    pub tail_recon: f64,
    pub tail_kl: f64,
    /// Trial-end parameters, captured on request.
    pub end_store: Option<ParamStore>,
}

impl TrialReadings {
    pub fn elbo_end(&self, mode: FitnessElbo, beta: f64) -> f64 {
        match mode {
            FitnessElbo::Unweighted => self.tail_recon + self.tail_kl,
            FitnessElbo::AppliedBeta => self.tail_recon + beta * self.tail_kl,
        }
    }

    pub fn elbo_start(&self, mode: FitnessElbo, beta: f64) -> f64 {
        match mode {
            FitnessElbo::Unweighted => self.first_recon + self.first_kl,
            FitnessElbo::AppliedBeta => self.first_recon + beta * self.first_kl,
        }
    }
}

/// Train `window` steps with `beta` on clones of the given state. The clones
/// see exactly the batches and noise the main trajectory would see next.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    model: &VaeModel,
    store: &ParamStore,
    model_rng: &Rng,
    stream: &BatchStream,
    dataset: &SpritesDataset,
    beta: f64,
    window: usize,
    adam: &AdamConfig,
    capture: bool,
) -> Result<TrialReadings> {
    if window == 0 {
        return Err(EvaeError::Usage("trial window must be at least 1".into()));
    }
    let mut store = store.clone();
    let mut rng = model_rng.clone();
    let mut stream = stream.clone();
    let tail_len = window.min(10);
    let mut first = (0.0, 0.0);
    let mut tail_recon = 0.0;
    let mut tail_kl = 0.0;
    for w in 0..window {
        let idx = stream.next_indices();
        let batch = dataset.batch(&idx)?;
        let report = inner_step(model, &mut store, &batch, beta, w as u64, &mut rng, adam)?;
        if w == 0 {
            first = (report.recon_loss, report.kl_total);
        }
        if window - w <= tail_len {
            tail_recon += report.recon_loss;
            tail_kl += report.kl_total;
        }
    }
    Ok(TrialReadings {
        first_recon: first.0,
        first_kl: first.1,
        tail_recon: tail_recon / tail_len as f64,
        tail_kl: tail_kl / tail_len as f64,
        end_store: capture.then_some(store),
    })
}

/// Evaluate one candidate beta against the state's own checkpoint, exactly as
/// specified for the public trial contract: restores nothing because nothing
/// is mutated, and returns `(fitness, kl_end, elbo_end)` where the fitness
/// compares the trial-end ELBO with the checkpoint's ELBO plus the distance
/// of the trial-end KL from the set point.
pub fn evaluate_candidate(
    state: &TrainerState,
    dataset: &SpritesDataset,
    adam: &AdamConfig,
    vga_cfg: &crate::vga::VgaConfig,
    candidate_beta: f64,
) -> Result<(f64, f64, f64)> {
    let readings = run_trial(
        &state.model,
        &state.store,
        &state.model_rng,
        &state.stream,
        dataset,
        candidate_beta,
        vga_cfg.trial_window,
        adam,
        false,
    )?;
    let elbo_end = readings.elbo_end(vga_cfg.fitness_elbo, candidate_beta);
    // The checkpoint's own ELBO reading (first forward pass, pre-update) is
    // weighted by the currently applied beta when the mode asks for it.
    let elbo_cur = readings.elbo_start(vga_cfg.fitness_elbo, state.applied_beta);
    let f = crate::vga::fitness(elbo_end, elbo_cur, readings.tail_kl, vga_cfg);
    Ok((f, readings.tail_kl, elbo_end))
}

/// Adapter giving the VGA controller trial access to immutable borrows of
/// the main state.
pub struct TrialEvaluator<'a> {
    pub model: &'a VaeModel,
    pub store: &'a ParamStore,
    pub model_rng: &'a Rng,
    pub stream: &'a BatchStream,
    pub dataset: &'a SpritesDataset,
    pub adam: AdamConfig,
    pub window: usize,
    pub fitness_elbo: FitnessElbo,
}

impl TrialEvaluator<'_> {
    /// Hash of everything a trial touches through clones (parameters, noise
    /// stream, batch stream); used to audit trial isolation.
    pub fn state_hash(&self) -> String {
        let mut bytes = self.store.to_bytes();
        for w in self.model_rng.state() {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for i in &self.stream.order {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        bytes.extend_from_slice(&(self.stream.pos as u64).to_le_bytes());
        bytes.extend_from_slice(&self.stream.epoch.to_le_bytes());
        for w in self.stream.rng.state() {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        crate::hash::sha1_hex(&bytes)
    }
}

impl CandidateEvaluator for TrialEvaluator<'_> {
    fn evaluate(&mut self, beta: f64) -> Result<TrialOutcome> {
        let readings = run_trial(
            self.model,
            self.store,
            self.model_rng,
            self.stream,
            self.dataset,
            beta,
            self.window,
            &self.adam,
            false,
        )?;
        Ok(TrialOutcome {
            elbo_end: readings.elbo_end(self.fitness_elbo, beta),
            kl_end: readings.tail_kl,
        })
    }
}

/// Trial-isolation audit record: state hashes around one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialAudit {
    pub before: String,
    pub after: String,
}

struct AuditingEvaluator<'a, 'b> {
    inner: TrialEvaluator<'a>,
    log: &'b mut Vec<TrialAudit>,
}

impl CandidateEvaluator for AuditingEvaluator<'_, '_> {
    fn evaluate(&mut self, beta: f64) -> Result<TrialOutcome> {
        let before = self.inner.state_hash();
        let out = self.inner.evaluate(beta)?;
        let after = self.inner.state_hash();
        self.log.push(TrialAudit { before, after });
        Ok(out)
    }
}

pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub events: Vec<VgaEvent>,
    pub trace: Vec<ScheduleTraceRow>,
    pub final_state: TrainerState,
}

/// Run the full experiment; see [`run_experiment_audited`] for the variant
/// that records trial-isolation hashes.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &SpritesDataset) -> Result<RunResult> {
    run_experiment_audited(cfg, dataset, None)
}

pub fn run_experiment_audited(
    cfg: &ExperimentConfig,
    dataset: &SpritesDataset,
    mut audit: Option<&mut Vec<TrialAudit>>,
) -> Result<RunResult> {
    cfg.validate()?;
    let adam = AdamConfig::with_lr(cfg.model.adam_lr);
    adam.validate()?;
    let mut state = TrainerState::init(cfg, dataset)?;
    let start = Instant::now();

    let mut metrics = Vec::new();
    let mut trace = Vec::new();
    let mut last_kl: Option<f64> = None;

    for t in 0..cfg.run.total_iters {
        state.iteration = t;

        if t > 0 && t % cfg.run.outer_interval == 0 {
            if let ControllerRuntime::Vga(ctl) = &mut state.controller {
                let inner_eval = TrialEvaluator {
                    model: &state.model,
                    store: &state.store,
                    model_rng: &state.model_rng,
                    stream: &state.stream,
                    dataset,
                    adam,
                    window: ctl.cfg.trial_window,
                    fitness_elbo: ctl.cfg.fitness_elbo,
                };
                let beta = match audit.as_deref_mut() {
                    Some(log) => {
                        let mut auditing = AuditingEvaluator {
                            inner: inner_eval,
                            log,
                        };
                        ctl.outer_event(&mut auditing, t)?
                    }
                    None => {
                        let mut plain = inner_eval;
                        ctl.outer_event(&mut plain, t)?
                    }
                };
                state.applied_beta = beta;
                if let Some(cand) = ctl.adopt_candidate.take() {
                    // keep-winner-weights ablation: rerun the winning trial
                    // and adopt its end parameters into the main trajectory.
                    let readings = run_trial(
                        &state.model,
                        &state.store,
                        &state.model_rng,
                        &state.stream,
                        dataset,
                        cand,
                        ctl.cfg.trial_window,
                        &adam,
                        true,
                    )?;
                    state.store = readings.end_store.expect("captured trial store");
                    ctl.pop.previous_beta = ctl.applied_beta;
                    ctl.applied_beta = cand;
                    ctl.pop.applied_index = None;
                    state.applied_beta = cand;
                }
            }
        }

        let mut trace_obs: Option<(Option<f64>, Option<f64>)> = None;
        let beta = match &mut state.controller {
            ControllerRuntime::Vga(_) => state.applied_beta,
            ControllerRuntime::Schedule(s) => {
                let fed = last_kl;
                let b = s.step(fed)?;
                trace_obs = Some((fed, s.last_error()));
                b
            }
        };
        state.applied_beta = beta;

        let idx = state.stream.next_indices();
        let batch = dataset.batch(&idx)?;
        let report = inner_step(
            &state.model,
            &mut state.store,
            &batch,
            beta,
            t,
            &mut state.model_rng,
            &adam,
        )?;
        last_kl = Some(report.kl_total);

        if t % cfg.run.log_interval == 0 {
            let fitness = match &state.controller {
                ControllerRuntime::Vga(c) => c.applied_fitness(),
                _ => None,
            };
            metrics.push(MetricsRow {
                iteration: t,
                beta,
                recon_loss: report.recon_loss,
                kl_total: report.kl_total,
                total_loss: report.total_loss,
                fitness,
                kl_per_dim: report.kl_per_dim.clone(),
                wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if let Some((obs, err)) = trace_obs {
                trace.push(ScheduleTraceRow {
                    iteration: t,
                    beta,
                    kl_observed: obs,
                    error: err,
                });
            }
        }
    }
    state.iteration = cfg.run.total_iters;

    let events = match &mut state.controller {
        ControllerRuntime::Vga(c) => std::mem::take(&mut c.events),
        _ => Vec::new(),
    };
    Ok(RunResult {
        metrics,
        events,
        trace,
        final_state: state,
    })
}

/// Load the dataset named by the config: from its cache if present (verified
/// against the pinned hash when one is set), generating and caching
/// otherwise.
pub fn obtain_dataset(cfg: &ExperimentConfig) -> Result<SpritesDataset> {
    let dataset = match &cfg.data.cache {
        Some(path) if Path::new(path).exists() => {
            log_info!("loading dataset cache {path}");
            let ds = SpritesDataset::load(Path::new(path))?;
            if ds.config != cfg.data.dataset {
                return Err(EvaeError::Integrity(format!(
                    "dataset cache {path} was generated with different factor grids"
                )));
            }
            ds
        }
        other => {
            log_info!(
                "generating sprites dataset ({} images)",
                cfg.data.dataset.total_images()
            );
            let ds = SpritesDataset::generate(&cfg.data.dataset)?;
            if let Some(path) = other {
                if let Some(parent) = Path::new(path).parent() {
                    std::fs::create_dir_all(parent)?;
                }
                ds.save(Path::new(path))?;
                log_info!("wrote dataset cache {path}");
            }
            ds
        }
    };
    if let Some(expected) = &cfg.data.expected_hash {
        let actual = dataset.content_hash();
        if &actual != expected {
            return Err(EvaeError::Integrity(format!(
                "dataset hash mismatch: expected {expected}, got {actual}"
            )));
        }
    }
    Ok(dataset)
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub dataset_hash: String,
    pub last_row: Option<MetricsRow>,
}

/// Run the configured experiment and write all artifacts (metrics, timing,
/// the controller log, the final checkpoint and the resolved manifest)
/// into the config's output directory.
pub fn run_to_dir(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dataset = obtain_dataset(cfg)?;
    let dataset_hash = dataset.content_hash();
    log_info!(
        "running {} iterations with controller {} (seed {})",
        cfg.run.total_iters,
        cfg.controller.kind_name(),
        cfg.run.seed
    );
    let result = run_experiment(cfg, &dataset)?;

    let out_dir = PathBuf::from(&cfg.run.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    crate::export::write_text(
        &out_dir.join("metrics.csv"),
        &crate::export::metrics_csv(&result.metrics, cfg.model.latent_dim),
    )?;
    crate::export::write_text(
        &out_dir.join("timing.csv"),
        &crate::export::timing_csv(&result.metrics),
    )?;
    match &cfg.controller {
        ControllerChoice::Vga(_) => {
            crate::export::write_text(
                &out_dir.join("vga_events.csv"),
                &crate::export::events_csv(&result.events),
            )?;
        }
        _ => {
            crate::export::write_text(
                &out_dir.join("schedule_trace.csv"),
                &crate::export::trace_csv(&result.trace),
            )?;
        }
    }
    result
        .final_state
        .checkpoint()
        .save(&out_dir.join("final.ckpt"))?;
    crate::export::write_text(
        &out_dir.join("manifest.cfg"),
        &cfg.to_manifest(Some(&dataset_hash)),
    )?;
    Ok(RunArtifacts {
        out_dir,
        dataset_hash,
        last_row: result.metrics.last().cloned(),
    })
}
