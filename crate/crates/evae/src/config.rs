//! Experiment configuration: a flat, typed key-value file with one section
//! per subsystem.
//!
//! Unknown sections or keys are rejected with the offending line number.
//! Missing optional keys fall back to defaults and log a notice; the two
//! required keys (`run.total_iters`, `controller.kind`) have no defaults.
//! [`ExperimentConfig::to_manifest`] re-emits the fully resolved
//! configuration in the same format, so a manifest is itself a valid config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EvaeError, Result};
use crate::log_info;
use crate::schedulers::ScheduleState;
use crate::sprites::DatasetConfig;
use crate::vae::Likelihood;
use crate::vga::{FitnessElbo, GateOrder, SelectionMode, VgaConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub total_iters: u64,
    pub batch_size: usize,
    pub log_interval: u64,
    pub outer_interval: u64,
    pub initial_beta: f64,
    pub out_dir: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub adam_lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub dataset: DatasetConfig,
    /// Optional cache path: load when present, else generate (and save).
    pub cache: Option<String>,
    /// Optional content-hash pin verified against the dataset.
    pub expected_hash: Option<String>,
    pub shuffle: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControllerChoice {
    Vga(VgaConfig),
    Constant {
        beta: f64,
    },
    Cost {
        horizon: u64,
        target: f64,
    },
    Cyclical {
        cycles: u64,
        ramp_fraction: f64,
        target: f64,
    },
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        set_point: f64,
        beta_base: f64,
        beta_max: f64,
    },
}

impl ControllerChoice {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ControllerChoice::Vga(_) => "vga",
            ControllerChoice::Constant { .. } => "constant",
            ControllerChoice::Cost { .. } => "cost",
            ControllerChoice::Cyclical { .. } => "cyclical",
            ControllerChoice::Pid { .. } => "pid",
        }
    }

    /// Build the schedule state for non-VGA controllers.
    pub fn schedule(&self, total_iters: u64) -> Result<Option<ScheduleState>> {
        Ok(match self {
            ControllerChoice::Vga(_) => None,
            ControllerChoice::Constant { beta } => Some(ScheduleState::constant(*beta)?),
            ControllerChoice::Cost { horizon, target } => {
                Some(ScheduleState::cost(*horizon, *target)?)
            }
            ControllerChoice::Cyclical {
                cycles,
                ramp_fraction,
                target,
            } => Some(ScheduleState::cyclical(
                total_iters,
                *cycles,
                *ramp_fraction,
                *target,
            )?),
            ControllerChoice::Pid {
                kp,
                ki,
                kd,
                set_point,
                beta_base,
                beta_max,
            } => Some(ScheduleState::pid(
                *kp, *ki, *kd, *set_point, *beta_base, *beta_max,
            )?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub controller: ControllerChoice,
}

struct RawValue {
    value: String,
    line: usize,
    used: std::cell::Cell<bool>,
}

struct Sections {
    map: BTreeMap<String, BTreeMap<String, RawValue>>,
}

impl Sections {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeMap<String, RawValue>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        EvaeError::Config(format!("line {line_no}: malformed section header"))
                    })?
                    .trim();
                current = name.to_string();
                map.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(EvaeError::Config(format!(
                    "line {line_no}: expected `key = value`"
                )));
            };
            if current.is_empty() {
                return Err(EvaeError::Config(format!(
                    "line {line_no}: key outside any section"
                )));
            }
            let key = key.trim().to_string();
            let section = map.get_mut(&current).unwrap();
            if section.contains_key(&key) {
                return Err(EvaeError::Config(format!(
                    "line {line_no}: duplicate key {key}"
                )));
            }
            section.insert(
                key,
                RawValue {
                    value: value.trim().to_string(),
                    line: line_no,
                    used: std::cell::Cell::new(false),
                },
            );
        }
        Ok(Sections { map })
    }

    fn get(&self, section: &str, key: &str) -> Option<&RawValue> {
        self.map
            .get(section)
            .and_then(|s| s.get(key))
            .inspect(|v| v.used.set(true))
    }

    fn known_sections(&self, allowed: &[&str]) -> Result<()> {
        for name in self.map.keys() {
            if !allowed.contains(&name.as_str()) {
                return Err(EvaeError::Config(format!("unknown section [{name}]")));
            }
        }
        Ok(())
    }

    fn unused_keys(&self) -> Vec<(String, String, usize)> {
        let mut out = Vec::new();
        for (sec, keys) in &self.map {
            for (key, v) in keys {
                if !v.used.get() {
                    out.push((sec.clone(), key.clone(), v.line));
                }
            }
        }
        out
    }
}

fn parse_typed<T: std::str::FromStr>(raw: &RawValue, what: &str) -> Result<T> {
    raw.value.parse::<T>().map_err(|_| {
        EvaeError::Config(format!(
            "line {}: cannot parse `{}` as {what}",
            raw.line, raw.value
        ))
    })
}

fn parse_bool(raw: &RawValue) -> Result<bool> {
    match raw.value.as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(EvaeError::Config(format!(
            "line {}: cannot parse `{other}` as bool",
            raw.line
        ))),
    }
}

fn parse_usize_list(raw: &RawValue) -> Result<Vec<usize>> {
    if raw.value.is_empty() {
        return Ok(Vec::new());
    }
    raw.value
        .split(',')
        .map(|part| {
            part.trim().parse::<usize>().map_err(|_| {
                EvaeError::Config(format!(
                    "line {}: cannot parse `{}` as list of sizes",
                    raw.line, raw.value
                ))
            })
        })
        .collect()
}

macro_rules! opt_key {
    ($sections:expr, $sec:literal, $key:literal, $default:expr, $parse:expr) => {
        match $sections.get($sec, $key) {
            Some(raw) => $parse(raw)?,
            None => {
                let d = $default;
                log_info!("config: [{}] {} defaulted to {:?}", $sec, $key, d);
                d
            }
        }
    };
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let sections = Sections::parse(text)?;
        sections.known_sections(&[
            "run",
            "model",
            "data",
            "controller",
            "vga",
            "constant",
            "cost",
            "cyclical",
            "pid",
        ])?;

        let total_iters: u64 = match sections.get("run", "total_iters") {
            Some(raw) => parse_typed(raw, "u64")?,
            None => {
                return Err(EvaeError::Config(
                    "missing required key [run] total_iters".into(),
                ))
            }
        };
        let run = RunSection {
            seed: opt_key!(sections, "run", "seed", 7u64, |r| parse_typed::<u64>(
                r, "u64"
            )),
            total_iters,
            batch_size: opt_key!(sections, "run", "batch_size", 32usize, |r| parse_typed::<
                usize,
            >(
                r, "usize"
            )),
            log_interval: opt_key!(
                sections,
                "run",
                "log_interval",
                10u64,
                |r| parse_typed::<u64>(r, "u64")
            ),
            outer_interval: opt_key!(sections, "run", "outer_interval", 10u64, |r| parse_typed::<
                u64,
            >(
                r, "u64"
            )),
            initial_beta: opt_key!(sections, "run", "initial_beta", 1.0f64, |r| parse_typed::<
                f64,
            >(
                r, "f64"
            )),
            out_dir: opt_key!(
                sections,
                "run",
                "out_dir",
                "runs/out".to_string(),
                |r: &RawValue| { Ok::<_, EvaeError>(r.value.clone()) }
            ),
        };

        let model = ModelSection {
            latent_dim: opt_key!(sections, "model", "latent_dim", 10usize, |r| parse_typed::<
                usize,
            >(
                r, "usize"
            )),
            encoder_hidden: opt_key!(
                sections,
                "model",
                "encoder_hidden",
                vec![256, 256],
                parse_usize_list
            ),
            decoder_hidden: opt_key!(
                sections,
                "model",
                "decoder_hidden",
                vec![256, 256],
                parse_usize_list
            ),
            likelihood: opt_key!(
                sections,
                "model",
                "likelihood",
                Likelihood::Bernoulli,
                |r: &RawValue| {
                    match r.value.as_str() {
                        "bernoulli" => Ok(Likelihood::Bernoulli),
                        "gaussian" => Ok(Likelihood::Gaussian),
                        other => Err(EvaeError::Config(format!(
                            "line {}: likelihood must be bernoulli or gaussian, got {other}",
                            r.line
                        ))),
                    }
                }
            ),
            adam_lr: opt_key!(
                sections,
                "model",
                "adam_lr",
                1e-4f64,
                |r| parse_typed::<f64>(r, "f64")
            ),
        };

        let defaults = DatasetConfig::default();
        let dataset = DatasetConfig {
            canvas: opt_key!(
                sections,
                "data",
                "canvas",
                defaults.canvas,
                |r| parse_typed::<usize>(r, "usize")
            ),
            shapes: opt_key!(
                sections,
                "data",
                "shapes",
                defaults.shapes,
                |r| parse_typed::<usize>(r, "usize")
            ),
            scales: opt_key!(
                sections,
                "data",
                "scales",
                defaults.scales,
                |r| parse_typed::<usize>(r, "usize")
            ),
            orientations: opt_key!(
                sections,
                "data",
                "orientations",
                defaults.orientations,
                |r| { parse_typed::<usize>(r, "usize") }
            ),
            positions: opt_key!(sections, "data", "positions", defaults.positions, |r| {
                parse_typed::<usize>(r, "usize")
            }),
            seed: opt_key!(sections, "data", "seed", defaults.seed, |r| parse_typed::<
                u64,
            >(
                r, "u64"
            )),
        };
        let data = DataSection {
            dataset,
            cache: sections
                .get("data", "cache")
                .map(|r| r.value.clone())
                .filter(|v| !v.is_empty()),
            expected_hash: sections
                .get("data", "expected_hash")
                .map(|r| r.value.clone())
                .filter(|v| !v.is_empty()),
            shuffle: opt_key!(sections, "data", "shuffle", true, parse_bool),
        };

        let kind = match sections.get("controller", "kind") {
            Some(raw) => raw.value.clone(),
            None => {
                return Err(EvaeError::Config(
                    "missing required key [controller] kind".into(),
                ))
            }
        };
        let controller = Self::parse_controller(&kind, &sections)?;

        // Reject anything the schema did not consume, except the sections of
        // controllers that were not selected (a manifest carries them all).
        let selected = controller.kind_name();
        for (sec, key, line) in sections.unused_keys() {
            let is_other_controller = ["vga", "constant", "cost", "cyclical", "pid"]
                .contains(&sec.as_str())
                && sec != selected;
            if !is_other_controller {
                return Err(EvaeError::Config(format!(
                    "line {line}: unknown key [{sec}] {key}"
                )));
            }
        }

        let cfg = ExperimentConfig {
            run,
            model,
            data,
            controller,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_controller(kind: &str, sections: &Sections) -> Result<ControllerChoice> {
        let d = VgaConfig::default();
        Ok(match kind {
            "vga" => ControllerChoice::Vga(VgaConfig {
                pr_m: opt_key!(sections, "vga", "pr_m", d.pr_m, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                pr_c: opt_key!(sections, "vga", "pr_c", d.pr_c, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                eta: opt_key!(sections, "vga", "eta", d.eta, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                population: opt_key!(sections, "vga", "population", d.population, |r| {
                    parse_typed::<usize>(r, "usize")
                }),
                set_point: opt_key!(
                    sections,
                    "vga",
                    "set_point",
                    d.set_point,
                    |r| parse_typed::<f64>(r, "f64")
                ),
                beta_min: opt_key!(sections, "vga", "beta_min", d.beta_min, |r| parse_typed::<
                    f64,
                >(
                    r, "f64"
                )),
                beta_max: opt_key!(sections, "vga", "beta_max", d.beta_max, |r| parse_typed::<
                    f64,
                >(
                    r, "f64"
                )),
                tau: opt_key!(sections, "vga", "tau", d.tau, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                trial_window: opt_key!(sections, "vga", "trial_window", d.trial_window, |r| {
                    parse_typed::<usize>(r, "usize")
                }),
                gate_order: opt_key!(
                    sections,
                    "vga",
                    "gate_order",
                    d.gate_order,
                    |r: &RawValue| {
                        match r.value.as_str() {
                        "crossover-first" => Ok(GateOrder::CrossoverFirst),
                        "mutation-first" => Ok(GateOrder::MutationFirst),
                        other => Err(EvaeError::Config(format!(
                            "line {}: gate_order must be crossover-first or mutation-first, got {other}",
                            r.line
                        ))),
                    }
                    }
                ),
                selection: opt_key!(sections, "vga", "selection", d.selection, |r: &RawValue| {
                    match r.value.as_str() {
                        "greedy" => Ok(SelectionMode::Greedy),
                        "softmax" => Ok(SelectionMode::Softmax),
                        other => Err(EvaeError::Config(format!(
                            "line {}: selection must be greedy or softmax, got {other}",
                            r.line
                        ))),
                    }
                }),
                fitness_elbo: opt_key!(
                    sections,
                    "vga",
                    "fitness_elbo",
                    d.fitness_elbo,
                    |r: &RawValue| {
                        match r.value.as_str() {
                            "unweighted" => Ok(FitnessElbo::Unweighted),
                            "applied-beta" => Ok(FitnessElbo::AppliedBeta),
                            other => Err(EvaeError::Config(format!(
                            "line {}: fitness_elbo must be unweighted or applied-beta, got {other}",
                            r.line
                        ))),
                        }
                    }
                ),
                mutation_scale: opt_key!(
                    sections,
                    "vga",
                    "mutation_scale",
                    d.mutation_scale,
                    |r| { parse_typed::<f64>(r, "f64") }
                ),
                negate_fitness: opt_key!(
                    sections,
                    "vga",
                    "negate_fitness",
                    d.negate_fitness,
                    parse_bool
                ),
                init_lo: opt_key!(
                    sections,
                    "vga",
                    "init_lo",
                    d.init_lo,
                    |r| parse_typed::<f64>(r, "f64")
                ),
                init_hi: opt_key!(
                    sections,
                    "vga",
                    "init_hi",
                    d.init_hi,
                    |r| parse_typed::<f64>(r, "f64")
                ),
                keep_winner_weights: opt_key!(
                    sections,
                    "vga",
                    "keep_winner_weights",
                    d.keep_winner_weights,
                    parse_bool
                ),
            }),
            "constant" => ControllerChoice::Constant {
                beta: opt_key!(
                    sections,
                    "constant",
                    "beta",
                    1.0f64,
                    |r| parse_typed::<f64>(r, "f64")
                ),
            },
            "cost" => ControllerChoice::Cost {
                horizon: opt_key!(
                    sections,
                    "cost",
                    "horizon",
                    10_000u64,
                    |r| parse_typed::<u64>(r, "u64")
                ),
                target: opt_key!(sections, "cost", "target", 1.0f64, |r| parse_typed::<f64>(
                    r, "f64"
                )),
            },
            "cyclical" => ControllerChoice::Cyclical {
                cycles: opt_key!(
                    sections,
                    "cyclical",
                    "cycles",
                    8u64,
                    |r| parse_typed::<u64>(r, "u64")
                ),
                ramp_fraction: opt_key!(sections, "cyclical", "ramp_fraction", 0.5f64, |r| {
                    parse_typed::<f64>(r, "f64")
                }),
                target: opt_key!(
                    sections,
                    "cyclical",
                    "target",
                    1.0f64,
                    |r| parse_typed::<f64>(r, "f64")
                ),
            },
            "pid" => ControllerChoice::Pid {
                kp: opt_key!(sections, "pid", "kp", 0.01f64, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                ki: opt_key!(sections, "pid", "ki", 1e-4f64, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                kd: opt_key!(sections, "pid", "kd", 0.0f64, |r| parse_typed::<f64>(
                    r, "f64"
                )),
                set_point: opt_key!(
                    sections,
                    "pid",
                    "set_point",
                    3.0f64,
                    |r| parse_typed::<f64>(r, "f64")
                ),
                beta_base: opt_key!(
                    sections,
                    "pid",
                    "beta_base",
                    1.0f64,
                    |r| parse_typed::<f64>(r, "f64")
                ),
                beta_max: opt_key!(
                    sections,
                    "pid",
                    "beta_max",
                    100.0f64,
                    |r| parse_typed::<f64>(r, "f64")
                ),
            },
            other => {
                return Err(EvaeError::Config(format!(
                    "controller kind must be one of vga, constant, cost, cyclical, pid; got {other}"
                )))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EvaeError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.total_iters == 0 {
            return Err(EvaeError::Config("total_iters must be positive".into()));
        }
        if self.run.outer_interval == 0 || self.run.log_interval == 0 {
            return Err(EvaeError::Config("intervals must be at least 1".into()));
        }
        if self.run.total_iters < self.run.outer_interval {
            return Err(EvaeError::Config(
                "total_iters must be at least outer_interval".into(),
            ));
        }
        if self.run.batch_size == 0 {
            return Err(EvaeError::Config("batch_size must be at least 1".into()));
        }
        if !(self.run.initial_beta >= 0.0) {
            return Err(EvaeError::Config(
                "initial_beta must be non-negative".into(),
            ));
        }
        if self.model.latent_dim == 0 {
            return Err(EvaeError::Config("latent_dim must be positive".into()));
        }
        self.data.dataset.validate()?;
        if let ControllerChoice::Vga(v) = &self.controller {
            v.validate()?;
        }
        Ok(())
    }

    /// Replace the controller by kind name, keeping that kind's defaults.
    pub fn override_controller(&mut self, kind: &str) -> Result<()> {
        let sections = Sections::parse("")?;
        self.controller = Self::parse_controller(kind, &sections)?;
        Ok(())
    }

    /// Flip the VGA gate order (the `--swap-gates` switch).
    pub fn swap_gates(&mut self) -> Result<()> {
        match &mut self.controller {
            ControllerChoice::Vga(v) => {
                v.gate_order = match v.gate_order {
                    GateOrder::CrossoverFirst => GateOrder::MutationFirst,
                    GateOrder::MutationFirst => GateOrder::CrossoverFirst,
                };
                Ok(())
            }
            _ => Err(EvaeError::Config(
                "--swap-gates requires the vga controller".into(),
            )),
        }
    }

    /// Emit the fully resolved config, optionally pinning the dataset hash.
    pub fn to_manifest(&self, dataset_hash: Option<&str>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[run]");
        let _ = writeln!(out, "seed = {}", self.run.seed);
        let _ = writeln!(out, "total_iters = {}", self.run.total_iters);
        let _ = writeln!(out, "batch_size = {}", self.run.batch_size);
        let _ = writeln!(out, "log_interval = {}", self.run.log_interval);
        let _ = writeln!(out, "outer_interval = {}", self.run.outer_interval);
        let _ = writeln!(out, "initial_beta = {}", self.run.initial_beta);
        let _ = writeln!(out, "out_dir = {}", self.run.out_dir);
        let _ = writeln!(out);
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "latent_dim = {}", self.model.latent_dim);
        let _ = writeln!(
            out,
            "encoder_hidden = {}",
            join_sizes(&self.model.encoder_hidden)
        );
        let _ = writeln!(
            out,
            "decoder_hidden = {}",
            join_sizes(&self.model.decoder_hidden)
        );
        let _ = writeln!(
            out,
            "likelihood = {}",
            match self.model.likelihood {
                Likelihood::Bernoulli => "bernoulli",
                Likelihood::Gaussian => "gaussian",
            }
        );
        let _ = writeln!(out, "adam_lr = {}", self.model.adam_lr);
        let _ = writeln!(out);
        let _ = writeln!(out, "[data]");
        let d = &self.data.dataset;
        let _ = writeln!(out, "canvas = {}", d.canvas);
        let _ = writeln!(out, "shapes = {}", d.shapes);
        let _ = writeln!(out, "scales = {}", d.scales);
        let _ = writeln!(out, "orientations = {}", d.orientations);
        let _ = writeln!(out, "positions = {}", d.positions);
        let _ = writeln!(out, "seed = {}", d.seed);
        if let Some(cache) = &self.data.cache {
            let _ = writeln!(out, "cache = {cache}");
        }
        if let Some(hash) = dataset_hash.or(self.data.expected_hash.as_deref()) {
            let _ = writeln!(out, "expected_hash = {hash}");
        }
        let _ = writeln!(out, "shuffle = {}", self.data.shuffle);
        let _ = writeln!(out);
        let _ = writeln!(out, "[controller]");
        let _ = writeln!(out, "kind = {}", self.controller.kind_name());
        let _ = writeln!(out);
        match &self.controller {
            ControllerChoice::Vga(v) => {
                let _ = writeln!(out, "[vga]");
                let _ = writeln!(out, "pr_m = {}", v.pr_m);
                let _ = writeln!(out, "pr_c = {}", v.pr_c);
                let _ = writeln!(out, "eta = {}", v.eta);
                let _ = writeln!(out, "population = {}", v.population);
                let _ = writeln!(out, "set_point = {}", v.set_point);
                let _ = writeln!(out, "beta_min = {}", v.beta_min);
                let _ = writeln!(out, "beta_max = {}", v.beta_max);
                let _ = writeln!(out, "tau = {}", v.tau);
                let _ = writeln!(out, "trial_window = {}", v.trial_window);
                let _ = writeln!(
                    out,
                    "gate_order = {}",
                    match v.gate_order {
                        GateOrder::CrossoverFirst => "crossover-first",
                        GateOrder::MutationFirst => "mutation-first",
                    }
                );
                let _ = writeln!(
                    out,
                    "selection = {}",
                    match v.selection {
                        SelectionMode::Greedy => "greedy",
                        SelectionMode::Softmax => "softmax",
                    }
                );
                let _ = writeln!(
                    out,
                    "fitness_elbo = {}",
                    match v.fitness_elbo {
                        FitnessElbo::Unweighted => "unweighted",
                        FitnessElbo::AppliedBeta => "applied-beta",
                    }
                );
                let _ = writeln!(out, "mutation_scale = {}", v.mutation_scale);
                let _ = writeln!(out, "negate_fitness = {}", v.negate_fitness);
                let _ = writeln!(out, "init_lo = {}", v.init_lo);
                let _ = writeln!(out, "init_hi = {}", v.init_hi);
                let _ = writeln!(out, "keep_winner_weights = {}", v.keep_winner_weights);
            }
            ControllerChoice::Constant { beta } => {
                let _ = writeln!(out, "[constant]");
                let _ = writeln!(out, "beta = {beta}");
            }
            ControllerChoice::Cost { horizon, target } => {
                let _ = writeln!(out, "[cost]");
                let _ = writeln!(out, "horizon = {horizon}");
                let _ = writeln!(out, "target = {target}");
            }
            ControllerChoice::Cyclical {
                cycles,
                ramp_fraction,
                target,
            } => {
                let _ = writeln!(out, "[cyclical]");
                let _ = writeln!(out, "cycles = {cycles}");
                let _ = writeln!(out, "ramp_fraction = {ramp_fraction}");
                let _ = writeln!(out, "target = {target}");
            }
            ControllerChoice::Pid {
                kp,
                ki,
                kd,
                set_point,
                beta_base,
                beta_max,
            } => {
                let _ = writeln!(out, "[pid]");
                let _ = writeln!(out, "kp = {kp}");
                let _ = writeln!(out, "ki = {ki}");
                let _ = writeln!(out, "kd = {kd}");
                let _ = writeln!(out, "set_point = {set_point}");
                let _ = writeln!(out, "beta_base = {beta_base}");
                let _ = writeln!(out, "beta_max = {beta_max}");
            }
        }
        out
    }
}

fn join_sizes(v: &[usize]) -> String {
    v.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
