//! Versioned binary checkpoints of the full training state.
//!
//! Everything needed to continue a run bit-exactly is captured: model
//! architecture and parameters, Adam moments, the noise and data stream
//! positions, the iteration counter, the applied beta and the controller's
//! own state. All floats are stored as raw little-endian bits, so
//! `restore(save(s)) == s` exactly.

use std::path::Path;

use crate::error::{EvaeError, Result};
use crate::nn::{Cursor, ParamStore};
use crate::rng::Rng;
use crate::schedulers::ScheduleState;
use crate::sprites::BatchStream;
use crate::vae::Likelihood;
use crate::vga::{Chromosome, FitnessElbo, GateOrder, SelectionMode, TrialOutcome, VgaConfig};

const MAGIC: &[u8; 8] = b"EVAECKP1";
const VERSION: u32 = 1;

/// Serializable controller state.
#[derive(Clone, Debug, PartialEq)]
pub enum ControllerState {
    Vga {
        cfg: VgaConfig,
        members: Vec<Chromosome>,
        previous_beta: f64,
        applied_index: Option<usize>,
        status_quo: Option<TrialOutcome>,
        rng: [u64; 4],
    },
    Schedule(ScheduleState),
}

/// A point-in-time snapshot of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub applied_beta: f64,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub store: ParamStore,
    pub model_rng: [u64; 4],
    pub stream: BatchStream,
    pub controller: ControllerState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.applied_beta.to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.latent_dim as u64).to_le_bytes());
        write_usize_list(&mut out, &self.encoder_hidden);
        write_usize_list(&mut out, &self.decoder_hidden);
        out.push(match self.likelihood {
            Likelihood::Bernoulli => 0,
            Likelihood::Gaussian => 1,
        });
        let store_bytes = self.store.to_bytes();
        out.extend_from_slice(&(store_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&store_bytes);
        for w in self.model_rng {
            out.extend_from_slice(&w.to_le_bytes());
        }
        write_stream(&mut out, &self.stream);
        write_controller(&mut out, &self.controller);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(8)? != MAGIC {
            return Err(EvaeError::Integrity("not a checkpoint file".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(EvaeError::Integrity(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let iteration = cur.u64()?;
        let applied_beta = cur.f64()?;
        let input_dim = cur.u64()? as usize;
        let latent_dim = cur.u64()? as usize;
        let encoder_hidden = read_usize_list(&mut cur)?;
        let decoder_hidden = read_usize_list(&mut cur)?;
        let likelihood = match cur.take(1)?[0] {
            0 => Likelihood::Bernoulli,
            1 => Likelihood::Gaussian,
            other => return Err(EvaeError::Integrity(format!("bad likelihood tag {other}"))),
        };
        let store_len = cur.u64()? as usize;
        let store_bytes = cur.take(store_len)?;
        let (store, used) = ParamStore::from_bytes(store_bytes)?;
        if used != store_len {
            return Err(EvaeError::Integrity(
                "trailing bytes in parameter store".into(),
            ));
        }
        let mut model_rng = [0u64; 4];
        for w in &mut model_rng {
            *w = cur.u64()?;
        }
        let stream = read_stream(&mut cur)?;
        let controller = read_controller(&mut cur)?;
        if cur.pos != bytes.len() {
            return Err(EvaeError::Integrity("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint {
            iteration,
            applied_beta,
            input_dim,
            latent_dim,
            encoder_hidden,
            decoder_hidden,
            likelihood,
            store,
            model_rng,
            stream,
            controller,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    pub fn sha1_hex(&self) -> String {
        crate::hash::sha1_hex(&self.to_bytes())
    }
}

fn write_usize_list(out: &mut Vec<u8>, v: &[usize]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&(*x as u64).to_le_bytes());
    }
}

fn read_usize_list(cur: &mut Cursor<'_>) -> Result<Vec<usize>> {
    let n = cur.u64()? as usize;
    (0..n).map(|_| Ok(cur.u64()? as usize)).collect()
}

fn write_stream(out: &mut Vec<u8>, s: &BatchStream) {
    out.extend_from_slice(&(s.batch_size as u64).to_le_bytes());
    out.push(s.shuffle as u8);
    out.extend_from_slice(&(s.order.len() as u64).to_le_bytes());
    for i in &s.order {
        out.extend_from_slice(&i.to_le_bytes());
    }
    out.extend_from_slice(&(s.pos as u64).to_le_bytes());
    out.extend_from_slice(&s.epoch.to_le_bytes());
    for w in s.rng.state() {
        out.extend_from_slice(&w.to_le_bytes());
    }
}

fn read_stream(cur: &mut Cursor<'_>) -> Result<BatchStream> {
    let batch_size = cur.u64()? as usize;
    let shuffle = cur.take(1)?[0] != 0;
    let n = cur.u64()? as usize;
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        order.push(cur.u32()?);
    }
    let pos = cur.u64()? as usize;
    let epoch = cur.u64()?;
    let mut state = [0u64; 4];
    for w in &mut state {
        *w = cur.u64()?;
    }
    Ok(BatchStream {
        batch_size,
        shuffle,
        order,
        pos,
        epoch,
        rng: Rng::from_state(state),
    })
}

fn write_f64_opt(out: &mut Vec<u8>, v: Option<f64>) {
    match v {
        Some(x) => {
            out.push(1);
            out.extend_from_slice(&x.to_le_bytes());
        }
        None => out.push(0),
    }
}

fn read_f64_opt(cur: &mut Cursor<'_>) -> Result<Option<f64>> {
    Ok(match cur.take(1)?[0] {
        0 => None,
        _ => Some(cur.f64()?),
    })
}

fn write_controller(out: &mut Vec<u8>, c: &ControllerState) {
    match c {
        ControllerState::Vga {
            cfg,
            members,
            previous_beta,
            applied_index,
            status_quo,
            rng,
        } => {
            out.push(0);
            write_vga_config(out, cfg);
            out.extend_from_slice(&(members.len() as u64).to_le_bytes());
            for m in members {
                out.extend_from_slice(&m.beta.to_le_bytes());
                write_f64_opt(out, m.fitness);
                match m.readings {
                    Some((e, k)) => {
                        out.push(1);
                        out.extend_from_slice(&e.to_le_bytes());
                        out.extend_from_slice(&k.to_le_bytes());
                    }
                    None => out.push(0),
                }
                out.extend_from_slice(&m.age.to_le_bytes());
            }
            out.extend_from_slice(&previous_beta.to_le_bytes());
            match applied_index {
                Some(i) => {
                    out.push(1);
                    out.extend_from_slice(&(*i as u64).to_le_bytes());
                }
                None => out.push(0),
            }
            match status_quo {
                Some(sq) => {
                    out.push(1);
                    out.extend_from_slice(&sq.elbo_end.to_le_bytes());
                    out.extend_from_slice(&sq.kl_end.to_le_bytes());
                }
                None => out.push(0),
            }
            for w in rng {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        ControllerState::Schedule(s) => {
            out.push(1);
            write_schedule(out, s);
        }
    }
}

fn read_controller(cur: &mut Cursor<'_>) -> Result<ControllerState> {
    match cur.take(1)?[0] {
        0 => {
            let cfg = read_vga_config(cur)?;
            let n = cur.u64()? as usize;
            let mut members = Vec::with_capacity(n);
            for _ in 0..n {
                let beta = cur.f64()?;
                let fitness = read_f64_opt(cur)?;
                let readings = match cur.take(1)?[0] {
                    0 => None,
                    _ => Some((cur.f64()?, cur.f64()?)),
                };
                let age = cur.u64()?;
                members.push(Chromosome {
                    beta,
                    fitness,
                    readings,
                    age,
                });
            }
            let previous_beta = cur.f64()?;
            let applied_index = match cur.take(1)?[0] {
                0 => None,
                _ => Some(cur.u64()? as usize),
            };
            let status_quo = match cur.take(1)?[0] {
                0 => None,
                _ => Some(TrialOutcome {
                    elbo_end: cur.f64()?,
                    kl_end: cur.f64()?,
                }),
            };
            let mut rng = [0u64; 4];
            for w in &mut rng {
                *w = cur.u64()?;
            }
            Ok(ControllerState::Vga {
                cfg,
                members,
                previous_beta,
                applied_index,
                status_quo,
                rng,
            })
        }
        1 => Ok(ControllerState::Schedule(read_schedule(cur)?)),
        other => Err(EvaeError::Integrity(format!("bad controller tag {other}"))),
    }
}

fn write_vga_config(out: &mut Vec<u8>, cfg: &VgaConfig) {
    for v in [
        cfg.pr_m,
        cfg.pr_c,
        cfg.eta,
        cfg.set_point,
        cfg.beta_min,
        cfg.beta_max,
        cfg.tau,
        cfg.mutation_scale,
        cfg.init_lo,
        cfg.init_hi,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(cfg.population as u64).to_le_bytes());
    out.extend_from_slice(&(cfg.trial_window as u64).to_le_bytes());
    out.push(match cfg.gate_order {
        GateOrder::CrossoverFirst => 0,
        GateOrder::MutationFirst => 1,
    });
    out.push(match cfg.selection {
        SelectionMode::Greedy => 0,
        SelectionMode::Softmax => 1,
    });
    out.push(match cfg.fitness_elbo {
        FitnessElbo::Unweighted => 0,
        FitnessElbo::AppliedBeta => 1,
    });
    out.push(cfg.negate_fitness as u8);
    out.push(cfg.keep_winner_weights as u8);
}

fn read_vga_config(cur: &mut Cursor<'_>) -> Result<VgaConfig> {
    let pr_m = cur.f64()?;
    let pr_c = cur.f64()?;
    let eta = cur.f64()?;
    let set_point = cur.f64()?;
    let beta_min = cur.f64()?;
    let beta_max = cur.f64()?;
    let tau = cur.f64()?;
    let mutation_scale = cur.f64()?;
    let init_lo = cur.f64()?;
    let init_hi = cur.f64()?;
    let population = cur.u64()? as usize;
    let trial_window = cur.u64()? as usize;
    let gate_order = match cur.take(1)?[0] {
        0 => GateOrder::CrossoverFirst,
        _ => GateOrder::MutationFirst,
    };
    let selection = match cur.take(1)?[0] {
        0 => SelectionMode::Greedy,
        _ => SelectionMode::Softmax,
    };
    let fitness_elbo = match cur.take(1)?[0] {
        0 => FitnessElbo::Unweighted,
        _ => FitnessElbo::AppliedBeta,
    };
    let negate_fitness = cur.take(1)?[0] != 0;
    let keep_winner_weights = cur.take(1)?[0] != 0;
    Ok(VgaConfig {
        pr_m,
        pr_c,
        eta,
        population,
        set_point,
        beta_min,
        beta_max,
        tau,
        trial_window,
        gate_order,
        selection,
        fitness_elbo,
        mutation_scale,
        negate_fitness,
        init_lo,
        init_hi,
        keep_winner_weights,
    })
}

fn write_schedule(out: &mut Vec<u8>, s: &ScheduleState) {
    match s {
        ScheduleState::Constant { beta } => {
            out.push(0);
            out.extend_from_slice(&beta.to_le_bytes());
        }
        ScheduleState::Cost { horizon, target, t } => {
            out.push(1);
            out.extend_from_slice(&horizon.to_le_bytes());
            out.extend_from_slice(&target.to_le_bytes());
            out.extend_from_slice(&t.to_le_bytes());
        }
        ScheduleState::Cyclical {
            horizon,
            cycles,
            ramp_fraction,
            target,
            t,
        } => {
            out.push(2);
            out.extend_from_slice(&horizon.to_le_bytes());
            out.extend_from_slice(&cycles.to_le_bytes());
            out.extend_from_slice(&ramp_fraction.to_le_bytes());
            out.extend_from_slice(&target.to_le_bytes());
            out.extend_from_slice(&t.to_le_bytes());
        }
        ScheduleState::Pid {
            kp,
            ki,
            kd,
            set_point,
            beta_base,
            beta_max,
            integral,
            prev_error,
            beta,
            t,
        } => {
            out.push(3);
            for v in [kp, ki, kd, set_point, beta_base, beta_max, integral, beta] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            write_f64_opt(out, *prev_error);
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
}

fn read_schedule(cur: &mut Cursor<'_>) -> Result<ScheduleState> {
    Ok(match cur.take(1)?[0] {
        0 => ScheduleState::Constant { beta: cur.f64()? },
        1 => ScheduleState::Cost {
            horizon: cur.u64()?,
            target: cur.f64()?,
            t: cur.u64()?,
        },
        2 => ScheduleState::Cyclical {
            horizon: cur.u64()?,
            cycles: cur.u64()?,
            ramp_fraction: cur.f64()?,
            target: cur.f64()?,
            t: cur.u64()?,
        },
        3 => {
            let kp = cur.f64()?;
            let ki = cur.f64()?;
            let kd = cur.f64()?;
            let set_point = cur.f64()?;
            let beta_base = cur.f64()?;
            let beta_max = cur.f64()?;
            let integral = cur.f64()?;
            let beta = cur.f64()?;
            let prev_error = read_f64_opt(cur)?;
            let t = cur.u64()?;
            ScheduleState::Pid {
                kp,
                ki,
                kd,
                set_point,
                beta_base,
                beta_max,
                integral,
                prev_error,
                beta,
                t,
            }
        }
        other => return Err(EvaeError::Integrity(format!("bad schedule tag {other}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};

    fn sample_checkpoint() -> Checkpoint {
        let mut store = ParamStore::new();
        let mut rng = Rng::seeded(3);
        let _enc = Mlp::new(&mut store, "enc", &[8, 4, 4], Activation::Relu, &mut rng).unwrap();
        let _dec = Mlp::new(&mut store, "dec", &[2, 4, 8], Activation::Relu, &mut rng).unwrap();
        store.adam_step = 41;
        let stream = BatchStream::new(12, 4, true, Rng::seeded(8)).unwrap();
        Checkpoint {
            iteration: 99,
            applied_beta: 2.25,
            input_dim: 8,
            latent_dim: 2,
            encoder_hidden: vec![4],
            decoder_hidden: vec![4],
            likelihood: Likelihood::Bernoulli,
            store,
            model_rng: Rng::seeded(5).state(),
            stream,
            controller: ControllerState::Vga {
                cfg: VgaConfig::default(),
                members: vec![
                    Chromosome {
                        beta: 1.0,
                        fitness: Some(-0.5),
                        readings: Some((12.0, 3.5)),
                        age: 3,
                    },
                    Chromosome {
                        beta: 4.0,
                        fitness: None,
                        readings: None,
                        age: 0,
                    },
                ],
                previous_beta: 1.5,
                applied_index: Some(0),
                status_quo: Some(TrialOutcome {
                    elbo_end: 12.5,
                    kl_end: 4.0,
                }),
                rng: Rng::seeded(11).state(),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.sha1_hex(), ckpt.sha1_hex());
    }

    #[test]
    fn schedule_variants_round_trip() {
        for sched in [
            ScheduleState::constant(4.0).unwrap(),
            ScheduleState::cost(1000, 1.0).unwrap(),
            ScheduleState::cyclical(800, 8, 0.5, 1.0).unwrap(),
            ScheduleState::pid(0.01, 1e-4, 0.0, 3.0, 1.0, 100.0).unwrap(),
        ] {
            let mut c = sample_checkpoint();
            c.controller = ControllerState::Schedule(sched);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] ^= 0xff;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(EvaeError::Integrity(_))
        ));
    }

    #[test]
    fn truncated_data_rejected() {
        let bytes = sample_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
