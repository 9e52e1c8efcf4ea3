//! Variational genetic algorithm over the KL weight beta.
//!
//! A population of candidate weights evolves alongside training: SBX-style
//! crossover between the previously applied weight and a member of the group,
//! heavy-tailed Cauchy mutation, trial-based fitness (ELBO change plus
//! distance of the resulting KL from a set point), and greedy or softmax
//! selection of the weight used for the next stretch of training.
//!
//! [`VgaController`] packages the whole outer loop against an abstract
//! [`CandidateEvaluator`], so the same controller code drives both real VAE
//! training (checkpointed trials) and the closed-form synthetic plant.

use crate::error::{EvaeError, Result};
use crate::rng::Rng;

/// One candidate KL weight with its most recent fitness (lower is better).
///
/// `readings` keeps the raw trial measurements the fitness was computed
/// from, so the cached fitness can be re-anchored when the status-quo
/// baseline moves (see [`VgaController`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Chromosome {
    pub beta: f64,
    pub fitness: Option<f64>,
    /// (elbo_end, kl_end) of this chromosome's most recent trial.
    pub readings: Option<(f64, f64)>,
    /// Outer events survived since this chromosome entered the group.
    pub age: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub members: Vec<Chromosome>,
    /// Best evaluated (beta, fitness) pair.
    pub best_pair: Option<(f64, f64)>,
    /// The beta most recently used for actual training.
    pub previous_beta: f64,
    /// Index of the member whose beta is currently applied, if any.
    pub applied_index: Option<usize>,
}

impl Population {
    /// Log-uniform initial group over `[lo, hi]`.
    pub fn init_log_uniform(
        size: usize,
        lo: f64,
        hi: f64,
        previous_beta: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if size < 2 {
            return Err(EvaeError::Config(
                "population size must be at least 2".into(),
            ));
        }
        if !(lo > 0.0 && hi > lo) {
            return Err(EvaeError::Config(
                "init range must satisfy 0 < lo < hi".into(),
            ));
        }
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
        let members = (0..size)
            .map(|_| Chromosome {
                beta: (ln_lo + rng.uniform() * (ln_hi - ln_lo)).exp(),
                fitness: None,
                readings: None,
                age: 0,
            })
            .collect();
        Ok(Population {
            members,
            best_pair: None,
            previous_beta,
            applied_index: None,
        })
    }

    pub fn all_evaluated(&self) -> bool {
        self.members.iter().all(|m| m.fitness.is_some())
    }

    pub fn refresh_best(&mut self) {
        self.best_pair = self
            .members
            .iter()
            .filter_map(|m| m.fitness.map(|f| (m.beta, f)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
    }

    /// Record a new evaluation for member `idx` and update the best pair.
    pub fn set_evaluation(&mut self, idx: usize, fitness: f64, readings: (f64, f64)) {
        self.members[idx].fitness = Some(fitness);
        self.members[idx].readings = Some(readings);
        self.refresh_best();
    }

    /// Replace the worst evaluated member if the candidate is fitter.
    /// Returns the index it landed in, or `None` if discarded.
    pub fn insert_if_fitter(
        &mut self,
        beta: f64,
        fitness: f64,
        readings: (f64, f64),
    ) -> Option<usize> {
        let worst = self
            .members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.fitness.map(|f| (i, f)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((worst_idx, worst_fit)) = worst else {
            return None;
        };
        if fitness < worst_fit {
            self.members[worst_idx] = Chromosome {
                beta,
                fitness: Some(fitness),
                readings: Some(readings),
                age: 0,
            };
            if self.applied_index == Some(worst_idx) {
                self.applied_index = None;
            }
            self.refresh_best();
            Some(worst_idx)
        } else {
            None
        }
    }

    pub fn tick_ages(&mut self) {
        for m in &mut self.members {
            m.age += 1;
        }
    }
}

/// Which branch the low/high thresholds of the evolve gate select.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateOrder {
    /// `u < pr_m` triggers crossover, `pr_m <= u < pr_c` mutation.
    CrossoverFirst,
    /// `u < pr_m` triggers mutation, `pr_m <= u < pr_c` crossover.
    MutationFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    /// argmin fitness, ties broken by lower index.
    Greedy,
    /// Member i drawn with probability proportional to exp(-f_i / tau).
    Softmax,
}

/// Which ELBO scale candidate trials are compared on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitnessElbo {
    /// The beta-independent bound `D + R`; candidates with different weights
    /// stay comparable. Default.
    Unweighted,
    /// Each trial's own training loss `D + beta * R`.
    AppliedBeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VgaConfig {
    /// Low gate threshold ("mutation rate" in the gate draw).
    pub pr_m: f64,
    /// High gate threshold ("crossover rate"); events above it select.
    pub pr_c: f64,
    /// SBX distribution index.
    pub eta: f64,
    /// Population size L.
    pub population: usize,
    /// KL set point c in nats.
    pub set_point: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Softmax selection temperature.
    pub tau: f64,
    /// Inner steps per candidate trial.
    pub trial_window: usize,
    pub gate_order: GateOrder,
    pub selection: SelectionMode,
    pub fitness_elbo: FitnessElbo,
    /// Multiplier on the Cauchy mutation draw.
    pub mutation_scale: f64,
    /// Negate the fitness sign (ablation switch).
    pub negate_fitness: bool,
    /// Initial population range (log-uniform).
    pub init_lo: f64,
    pub init_hi: f64,
    /// Adopt the winning candidate's trial-end weights (ablation switch);
    /// by default trials are discarded.
    pub keep_winner_weights: bool,
}

impl Default for VgaConfig {
    fn default() -> Self {
        VgaConfig {
            pr_m: 0.2,
            pr_c: 0.4,
            eta: 2.0,
            population: 20,
            set_point: 10.0,
            beta_min: 1e-4,
            beta_max: 100.0,
            tau: 1.0,
            trial_window: 50,
            gate_order: GateOrder::CrossoverFirst,
            selection: SelectionMode::Greedy,
            fitness_elbo: FitnessElbo::Unweighted,
            mutation_scale: 1.0,
            negate_fitness: false,
            init_lo: 0.1,
            init_hi: 10.0,
            keep_winner_weights: false,
        }
    }
}

impl VgaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pr_m) || !(0.0..=1.0).contains(&self.pr_c) {
            return Err(EvaeError::Config(
                "gate probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.pr_m > self.pr_c {
            return Err(EvaeError::Config(format!(
                "gate thresholds unreachable: pr_m {} > pr_c {}",
                self.pr_m, self.pr_c
            )));
        }
        if !(self.eta > 0.0) {
            return Err(EvaeError::Config("eta must be positive".into()));
        }
        if self.population < 2 {
            return Err(EvaeError::Config("population must be at least 2".into()));
        }
        if !(self.set_point > 0.0) {
            return Err(EvaeError::Config("set point must be positive".into()));
        }
        if !(self.beta_min > 0.0 && self.beta_max > self.beta_min) {
            return Err(EvaeError::Config(
                "bounds must satisfy 0 < beta_min < beta_max".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(EvaeError::Config("tau must be positive".into()));
        }
        if self.trial_window < 1 {
            return Err(EvaeError::Config("trial window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn clamp_beta(&self, beta: f64) -> f64 {
        beta.clamp(self.beta_min, self.beta_max)
    }
}

/// Inverse-CDF sample of the SBX spread factor:
/// `r_c = (2u)^(1/(eta+1))` for `u <= 0.5`, else `(1/(2(1-u)))^(1/(eta+1))`.
pub fn sample_rc(u: f64, eta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&u) {
        return Err(EvaeError::Usage(format!(
            "sample_rc: u must lie in [0, 1), got {u}"
        )));
    }
    if !(eta > 0.0) {
        return Err(EvaeError::Usage(format!(
            "sample_rc: eta must be positive, got {eta}"
        )));
    }
    let exponent = 1.0 / (eta + 1.0);
    if u <= 0.5 {
        Ok((2.0 * u).powf(exponent))
    } else {
        Ok((1.0 / (2.0 * (1.0 - u))).powf(exponent))
    }
}

/// Raw crossover children before clamping:
/// `a = ((1 + r_c) * cur + (1 - r_c) * prev) / 2` and the mirror image.
/// The pair sum equals `prev + cur` exactly for every `r_c`.
pub fn sbx_children(parent_prev: f64, parent_cur: f64, r_c: f64) -> (f64, f64) {
    let a = 0.5 * ((1.0 + r_c) * parent_cur + (1.0 - r_c) * parent_prev);
    let b = 0.5 * ((1.0 - r_c) * parent_cur + (1.0 + r_c) * parent_prev);
    (a, b)
}

/// Crossover with the children clamped to the configured bounds.
pub fn crossover(parent_prev: f64, parent_cur: f64, r_c: f64, cfg: &VgaConfig) -> (f64, f64) {
    let (a, b) = sbx_children(parent_prev, parent_cur, r_c);
    (cfg.clamp_beta(a), cfg.clamp_beta(b))
}

/// Additive Cauchy mutation, clamped to bounds. Returns the mutated beta and
/// the raw draw.
pub fn mutate(beta: f64, rng: &mut Rng, cfg: &VgaConfig) -> (f64, f64) {
    let r_m = rng.cauchy();
    (apply_mutation(beta, r_m, cfg), r_m)
}

/// Deterministic core of [`mutate`].
pub fn apply_mutation(beta: f64, r_m: f64, cfg: &VgaConfig) -> f64 {
    cfg.clamp_beta(beta + cfg.mutation_scale * r_m)
}

/// Fitness of a trial: ELBO change plus distance of the trial-end KL from
/// the set point. Lower is fitter (unless `negate_fitness`).
pub fn fitness(elbo_next: f64, elbo_cur: f64, kl_next: f64, cfg: &VgaConfig) -> f64 {
    let f = (elbo_next - elbo_cur) + (kl_next - cfg.set_point).abs();
    if cfg.negate_fitness {
        -f
    } else {
        f
    }
}

/// Selection probabilities under the softmax mode (stable shift by the min).
pub fn selection_probabilities(pop: &Population, tau: f64) -> Result<Vec<f64>> {
    let fits: Vec<f64> = pop
        .members
        .iter()
        .map(|m| {
            m.fitness
                .ok_or_else(|| EvaeError::Usage("selection over unevaluated member".into()))
        })
        .collect::<Result<_>>()?;
    let min = fits.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = fits.iter().map(|f| (-(f - min) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Pick a member index. Greedy takes the argmin (lowest index on ties);
/// softmax draws with probability proportional to `exp(-f / tau)`.
pub fn select(pop: &Population, tau: f64, rng: &mut Rng, mode: SelectionMode) -> Result<usize> {
    if pop.members.is_empty() {
        return Err(EvaeError::Usage("selection over empty population".into()));
    }
    match mode {
        SelectionMode::Greedy => {
            let mut best: Option<(usize, f64)> = None;
            for (i, m) in pop.members.iter().enumerate() {
                let f = m.fitness.ok_or_else(|| {
                    EvaeError::Usage("greedy selection over unevaluated member".into())
                })?;
                match best {
                    Some((_, bf)) if f >= bf => {}
                    _ => best = Some((i, f)),
                }
            }
            Ok(best.unwrap().0)
        }
        SelectionMode::Softmax => {
            let probs = selection_probabilities(pop, tau)?;
            let draw = rng.uniform();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    return Ok(i);
                }
            }
            Ok(probs.len() - 1)
        }
    }
}

/// The branch an outer event takes.
#[derive(Clone, Debug, PartialEq)]
pub enum EvolveAction {
    /// Evaluate both SBX children of (previous beta, selected member).
    Crossover {
        parent_prev: f64,
        parent_cur: f64,
        r_c: f64,
        child_a: f64,
        child_b: f64,
    },
    /// Evaluate one Cauchy-perturbed candidate.
    Mutation { parent: f64, r_m: f64, child: f64 },
    /// Commit to the strongest member for the next training interval.
    SelectAndTrain { index: usize, beta: f64 },
}

/// Dispatch one outer event given the gate draw `u in [0, 1)`.
///
/// Requires every member to be evaluated (selection and parent choice read
/// fitnesses). Gate semantics follow `cfg.gate_order`.
pub fn evolve_step(
    pop: &Population,
    u: f64,
    cfg: &VgaConfig,
    rng: &mut Rng,
) -> Result<EvolveAction> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&u) {
        return Err(EvaeError::Usage(format!(
            "evolve gate u must lie in [0, 1), got {u}"
        )));
    }
    if !pop.all_evaluated() {
        return Err(EvaeError::Usage(
            "evolve_step requires a fully evaluated population".into(),
        ));
    }
    let low_branch = u < cfg.pr_m;
    let mid_branch = !low_branch && u < cfg.pr_c;
    let do_crossover = match cfg.gate_order {
        GateOrder::CrossoverFirst => low_branch,
        GateOrder::MutationFirst => mid_branch,
    };
    let do_mutation = match cfg.gate_order {
        GateOrder::CrossoverFirst => mid_branch,
        GateOrder::MutationFirst => low_branch,
    };

    if do_crossover {
        let idx = select(pop, cfg.tau, rng, cfg.selection)?;
        let parent_cur = pop.members[idx].beta;
        let parent_prev = pop.previous_beta;
        let r_c = sample_rc(rng.uniform(), cfg.eta)?;
        let (child_a, child_b) = crossover(parent_prev, parent_cur, r_c, cfg);
        Ok(EvolveAction::Crossover {
            parent_prev,
            parent_cur,
            r_c,
            child_a,
            child_b,
        })
    } else if do_mutation {
        let idx = select(pop, cfg.tau, rng, cfg.selection)?;
        let parent = pop.members[idx].beta;
        let (child, r_m) = mutate(parent, rng, cfg);
        Ok(EvolveAction::Mutation { parent, r_m, child })
    } else {
        let index = select(pop, cfg.tau, rng, cfg.selection)?;
        Ok(EvolveAction::SelectAndTrain {
            index,
            beta: pop.members[index].beta,
        })
    }
}

/// Trial-end readings for one candidate evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    /// ELBO reading at the end of the trial, on the scale selected by
    /// [`FitnessElbo`].
    pub elbo_end: f64,
    /// KL (rate) reading at the end of the trial, in nats.
    pub kl_end: f64,
}

/// Anything that can measure a candidate beta from the current state without
/// disturbing it: the real trainer via checkpointed trials, or the synthetic
/// plant in closed form.
pub trait CandidateEvaluator {
    fn evaluate(&mut self, beta: f64) -> Result<TrialOutcome>;
}

/// One row of the VGA event log.
#[derive(Clone, Debug, PartialEq)]
pub struct VgaEvent {
    pub iteration: u64,
    pub action: &'static str,
    pub parent_prev: Option<f64>,
    pub parent_cur: Option<f64>,
    pub r_value: Option<f64>,
    pub candidate_beta: f64,
    pub fitness: f64,
    pub accepted: bool,
}

/// The full outer-loop controller: population, gate draws, candidate
/// evaluation and bookkeeping.
///
/// Candidate fitnesses compare a candidate trial against a status-quo trial
/// (the same window trained with the currently applied beta), not against
/// the raw checkpoint loss: both arms of one window stay comparable no
/// matter how far training has progressed. Whenever a fresh status-quo
/// reading lands, every member's cached fitness is recomputed from its
/// stored readings against that one anchor, so selection always ranks the
/// whole group on a single scale.
#[derive(Clone, Debug)]
pub struct VgaController {
    pub cfg: VgaConfig,
    pub pop: Population,
    pub rng: Rng,
    pub applied_beta: f64,
    /// Latest status-quo trial result (the fitness anchor).
    pub status_quo: Option<TrialOutcome>,
    pub events: Vec<VgaEvent>,
    /// Set when a candidate just won with `keep_winner_weights` enabled.
    pub adopt_candidate: Option<f64>,
}

impl VgaController {
    pub fn new(cfg: VgaConfig, initial_beta: f64, rng: Rng) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng;
        let applied_beta = cfg.clamp_beta(initial_beta);
        let pop = Population::init_log_uniform(
            cfg.population,
            cfg.init_lo.max(cfg.beta_min),
            cfg.init_hi.min(cfg.beta_max),
            applied_beta,
            &mut rng,
        )?;
        Ok(VgaController {
            cfg,
            pop,
            rng,
            applied_beta,
            status_quo: None,
            events: Vec::new(),
            adopt_candidate: None,
        })
    }

    /// Fitness of the currently applied chromosome, if tracked.
    pub fn applied_fitness(&self) -> Option<f64> {
        self.pop
            .applied_index
            .and_then(|i| self.pop.members[i].fitness)
    }

    fn anchored_fitness(&self, outcome: TrialOutcome) -> f64 {
        let anchor = self.status_quo.expect("anchor set before fitness use");
        fitness(outcome.elbo_end, anchor.elbo_end, outcome.kl_end, &self.cfg)
    }

    /// Run a fresh status-quo trial, move the anchor, and re-derive every
    /// member's cached fitness from its stored readings. The applied member
    /// itself takes the fresh reading.
    fn refresh_anchor(&mut self, eval: &mut dyn CandidateEvaluator) -> Result<()> {
        let sq = eval.evaluate(self.applied_beta)?;
        self.status_quo = Some(sq);
        if let Some(idx) = self.pop.applied_index {
            self.pop.members[idx].readings = Some((sq.elbo_end, sq.kl_end));
        }
        for m in &mut self.pop.members {
            if let Some((elbo_end, kl_end)) = m.readings {
                m.fitness = Some(fitness(elbo_end, sq.elbo_end, kl_end, &self.cfg));
            }
        }
        self.pop.refresh_best();
        Ok(())
    }

    /// Evaluate all unevaluated members against a fresh anchor.
    /// A no-op once the population is fully evaluated.
    pub fn ensure_evaluated(&mut self, eval: &mut dyn CandidateEvaluator) -> Result<()> {
        if self.pop.all_evaluated() {
            return Ok(());
        }
        self.refresh_anchor(eval)?;
        for i in 0..self.pop.members.len() {
            if self.pop.members[i].fitness.is_none() {
                let outcome = eval.evaluate(self.pop.members[i].beta)?;
                let f = self.anchored_fitness(outcome);
                self.pop
                    .set_evaluation(i, f, (outcome.elbo_end, outcome.kl_end));
            }
        }
        Ok(())
    }

    fn evaluate_candidate_event(
        &mut self,
        eval: &mut dyn CandidateEvaluator,
        iteration: u64,
        action: &'static str,
        parent_prev: Option<f64>,
        parent_cur: Option<f64>,
        r_value: Option<f64>,
        child: f64,
    ) -> Result<f64> {
        let outcome = eval.evaluate(child)?;
        let f = self.anchored_fitness(outcome);
        let accepted = self
            .pop
            .insert_if_fitter(child, f, (outcome.elbo_end, outcome.kl_end))
            .is_some();
        self.events.push(VgaEvent {
            iteration,
            action,
            parent_prev,
            parent_cur,
            r_value,
            candidate_beta: child,
            fitness: f,
            accepted,
        });
        Ok(f)
    }

    /// Run one outer event: draw the gate, dispatch, update the population,
    /// and return the beta to apply for the next interval.
    pub fn outer_event(
        &mut self,
        eval: &mut dyn CandidateEvaluator,
        iteration: u64,
    ) -> Result<f64> {
        self.adopt_candidate = None;
        self.ensure_evaluated(eval)?;
        self.pop.tick_ages();
        let u = self.rng.uniform();
        let action = evolve_step(&self.pop, u, &self.cfg, &mut self.rng)?;
        match action {
            EvolveAction::Crossover {
                parent_prev,
                parent_cur,
                r_c,
                child_a,
                child_b,
            } => {
                self.refresh_anchor(eval)?;
                let mut best: Option<(f64, f64)> = None;
                for child in [child_a, child_b] {
                    let f = self.evaluate_candidate_event(
                        eval,
                        iteration,
                        "crossover",
                        Some(parent_prev),
                        Some(parent_cur),
                        Some(r_c),
                        child,
                    )?;
                    if best.map_or(true, |(bf, _)| f < bf) {
                        best = Some((f, child));
                    }
                }
                self.maybe_adopt(best);
            }
            EvolveAction::Mutation { parent, r_m, child } => {
                self.refresh_anchor(eval)?;
                let f = self.evaluate_candidate_event(
                    eval,
                    iteration,
                    "mutation",
                    None,
                    Some(parent),
                    Some(r_m),
                    child,
                )?;
                self.maybe_adopt(Some((f, child)));
            }
            EvolveAction::SelectAndTrain { index, beta } => {
                if beta != self.applied_beta {
                    self.pop.previous_beta = self.applied_beta;
                    self.applied_beta = self.cfg.clamp_beta(beta);
                }
                self.pop.applied_index = Some(index);
                self.events.push(VgaEvent {
                    iteration,
                    action: "select",
                    parent_prev: None,
                    parent_cur: None,
                    r_value: None,
                    candidate_beta: beta,
                    fitness: self.pop.members[index].fitness.unwrap_or(f64::NAN),
                    accepted: true,
                });
            }
        }
        Ok(self.applied_beta)
    }

    fn maybe_adopt(&mut self, best: Option<(f64, f64)>) {
        if !self.cfg.keep_winner_weights {
            return;
        }
        let Some((f, child)) = best else { return };
        let incumbent = self.applied_fitness().unwrap_or(f64::INFINITY);
        if f < incumbent {
            self.adopt_candidate = Some(child);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> VgaConfig {
        VgaConfig::default()
    }

    fn pop_with_fitness(pairs: &[(f64, f64)]) -> Population {
        let members = pairs
            .iter()
            .map(|&(beta, f)| Chromosome {
                beta,
                fitness: Some(f),
                readings: Some((f, 0.0)),
                age: 0,
            })
            .collect();
        let mut p = Population {
            members,
            best_pair: None,
            previous_beta: 1.0,
            applied_index: None,
        };
        p.refresh_best();
        p
    }

    #[test]
    fn sample_rc_branch_boundary_is_one() {
        for eta in [0.5, 2.0, 15.0] {
            assert_eq!(sample_rc(0.5, eta).unwrap(), 1.0);
        }
    }

    #[test]
    fn sample_rc_known_points() {
        // (2*0.2)^(1/3) and (1/(2*0.1))^(1/3) at eta = 2.
        let low = sample_rc(0.2, 2.0).unwrap();
        assert!((low - 0.4f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((low - 0.73681).abs() < 1e-5);
        let high = sample_rc(0.9, 2.0).unwrap();
        assert!((high - 5.0f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((high - 1.70998).abs() < 1e-5);
    }

    #[test]
    fn sample_rc_rejects_bad_u() {
        assert!(matches!(sample_rc(1.0, 2.0), Err(EvaeError::Usage(_))));
        assert!(matches!(sample_rc(-0.1, 2.0), Err(EvaeError::Usage(_))));
    }

    #[test]
    fn crossover_unit_spread_returns_parents() {
        let (a, b) = sbx_children(2.0, 4.0, 1.0);
        assert_eq!((a, b), (4.0, 2.0));
    }

    #[test]
    fn crossover_zero_spread_is_midpoint() {
        let (a, b) = sbx_children(2.0, 4.0, 0.0);
        assert_eq!((a, b), (3.0, 3.0));
    }

    #[test]
    fn crossover_half_spread_known_children() {
        let (a, b) = sbx_children(2.0, 4.0, 0.5);
        assert!((a - 3.5).abs() < 1e-15);
        assert!((b - 2.5).abs() < 1e-15);
    }

    #[test]
    fn crossover_clamps_to_bounds() {
        let c = VgaConfig {
            beta_min: 1.0,
            beta_max: 3.0,
            ..cfg()
        };
        let (a, b) = crossover(1.0, 3.0, 10.0, &c);
        assert!(a >= 1.0 && a <= 3.0 && b >= 1.0 && b <= 3.0);
    }

    #[test]
    fn mutation_zero_draw_is_identity() {
        assert_eq!(apply_mutation(1.5, 0.0, &cfg()), 1.5);
    }

    #[test]
    fn mutation_clamps_at_lower_bound() {
        let got = apply_mutation(1.0, -2.0, &cfg());
        assert_eq!(got, cfg().beta_min);
    }

    #[test]
    fn fitness_zero_at_set_point_with_no_change() {
        let c = VgaConfig {
            set_point: 10.0,
            ..cfg()
        };
        assert_eq!(fitness(5.0, 5.0, 10.0, &c), 0.0);
    }

    #[test]
    fn fitness_arithmetic() {
        let c = VgaConfig {
            set_point: 3.0,
            ..cfg()
        };
        // delta = -2, |kl - c| = 1 -> f = -1.
        assert_eq!(fitness(8.0, 10.0, 4.0, &c), -1.0);
    }

    #[test]
    fn greedy_prefers_lower_fitness() {
        let pop = pop_with_fitness(&[(2.0, -1.0), (5.0, 0.5)]);
        let mut rng = Rng::seeded(0);
        let idx = select(&pop, 1.0, &mut rng, SelectionMode::Greedy).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn greedy_tie_breaks_by_lower_index() {
        let pop = pop_with_fitness(&[(2.0, 0.5), (5.0, 0.5)]);
        let mut rng = Rng::seeded(0);
        assert_eq!(
            select(&pop, 1.0, &mut rng, SelectionMode::Greedy).unwrap(),
            0
        );
    }

    #[test]
    fn greedy_rejects_unevaluated() {
        let mut pop = pop_with_fitness(&[(2.0, 0.5), (5.0, 0.5)]);
        pop.members[1].fitness = None;
        let mut rng = Rng::seeded(0);
        assert!(matches!(
            select(&pop, 1.0, &mut rng, SelectionMode::Greedy),
            Err(EvaeError::Usage(_))
        ));
    }

    #[test]
    fn single_member_always_selected() {
        let members = vec![Chromosome {
            beta: 2.0,
            fitness: Some(0.3),
            readings: Some((0.3, 0.0)),
            age: 0,
        }];
        let pop = Population {
            members,
            best_pair: Some((2.0, 0.3)),
            previous_beta: 1.0,
            applied_index: None,
        };
        for seed in 0..20 {
            let mut rng = Rng::seeded(seed);
            assert_eq!(
                select(&pop, 1.0, &mut rng, SelectionMode::Softmax).unwrap(),
                0
            );
        }
    }

    #[test]
    fn softmax_probabilities_hand_computed() {
        // Fitnesses {0, ln 3} at tau = 1 -> probabilities {0.75, 0.25}.
        let pop = pop_with_fitness(&[(1.0, 0.0), (2.0, 3.0f64.ln())]);
        let probs = selection_probabilities(&pop, 1.0).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-12);
        assert!((probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_equal_fitness_is_symmetric() {
        let pop = pop_with_fitness(&[(1.0, 0.7), (2.0, 0.7)]);
        let probs = selection_probabilities(&pop, 0.5).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_invariant_under_constant_shift() {
        let base = pop_with_fitness(&[(2.0, 0.4), (3.0, -0.2), (4.0, 1.1)]);
        let shifted = pop_with_fitness(&[(2.0, 5.4), (3.0, 4.8), (4.0, 6.1)]);
        let mut rng = Rng::seeded(0);
        let a = select(&base, 1.0, &mut rng, SelectionMode::Greedy).unwrap();
        let b = select(&shifted, 1.0, &mut rng, SelectionMode::Greedy).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gate_dispatch_follows_thresholds() {
        let c = VgaConfig {
            pr_m: 0.001,
            pr_c: 0.04,
            ..cfg()
        };
        let pop = pop_with_fitness(&[(1.0, 0.0), (2.0, 1.0)]);
        let mut rng = Rng::seeded(0);
        let a = evolve_step(&pop, 0.0005, &c, &mut rng).unwrap();
        assert!(matches!(a, EvolveAction::Crossover { .. }), "{a:?}");
        let b = evolve_step(&pop, 0.02, &c, &mut rng).unwrap();
        assert!(matches!(b, EvolveAction::Mutation { .. }), "{b:?}");
        let s = evolve_step(&pop, 0.5, &c, &mut rng).unwrap();
        assert!(matches!(s, EvolveAction::SelectAndTrain { .. }), "{s:?}");
    }

    #[test]
    fn swapped_gate_order_flips_branches() {
        let c = VgaConfig {
            pr_m: 0.001,
            pr_c: 0.04,
            gate_order: GateOrder::MutationFirst,
            ..cfg()
        };
        let pop = pop_with_fitness(&[(1.0, 0.0), (2.0, 1.0)]);
        let mut rng = Rng::seeded(0);
        let a = evolve_step(&pop, 0.0005, &c, &mut rng).unwrap();
        assert!(matches!(a, EvolveAction::Mutation { .. }), "{a:?}");
        let b = evolve_step(&pop, 0.02, &c, &mut rng).unwrap();
        assert!(matches!(b, EvolveAction::Crossover { .. }), "{b:?}");
    }

    #[test]
    fn unreachable_gates_rejected() {
        let c = VgaConfig {
            pr_m: 0.5,
            pr_c: 0.1,
            ..cfg()
        };
        assert!(matches!(c.validate(), Err(EvaeError::Config(_))));
    }

    #[test]
    fn gate_draw_outside_unit_interval_rejected() {
        let pop = pop_with_fitness(&[(1.0, 0.0), (2.0, 1.0)]);
        let mut rng = Rng::seeded(0);
        for u in [1.0, 1.5, -0.1] {
            assert!(matches!(
                evolve_step(&pop, u, &cfg(), &mut rng),
                Err(EvaeError::Usage(_))
            ));
        }
    }

    #[test]
    fn insert_replaces_worst_only_when_fitter() {
        let mut pop = pop_with_fitness(&[(1.0, 0.0), (2.0, 5.0), (3.0, 2.0)]);
        assert_eq!(pop.insert_if_fitter(9.0, 6.0, (6.0, 0.0)), None);
        let idx = pop.insert_if_fitter(9.0, 1.0, (1.0, 0.0)).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(pop.members[1].beta, 9.0);
        assert_eq!(pop.best_pair, Some((1.0, 0.0)));
    }

    #[test]
    fn best_pair_tracks_minimum() {
        let pop = pop_with_fitness(&[(1.0, 0.3), (2.0, -0.7), (3.0, 0.1)]);
        assert_eq!(pop.best_pair, Some((2.0, -0.7)));
    }

    #[test]
    fn equal_elbo_candidates_ranked_by_set_point_distance() {
        // Two candidates with identical trial-end ELBO differ only in how
        // close their KL landed to the set point; the closer one is fitter.
        let c = VgaConfig {
            set_point: 10.0,
            ..cfg()
        };
        let anchor = 50.0;
        let close = fitness(42.0, anchor, 9.7, &c);
        let far = fitness(42.0, anchor, 6.0, &c);
        assert!(close < far);
        // And with the plant's own numbers: KL(3) = 10 beats KL(5) = 6.667
        // when both candidates report the same bound.
        let plant_kl = |beta: f64| 40.0 / (1.0 + beta);
        let f3 = fitness(42.0, anchor, plant_kl(3.0), &c);
        let f5 = fitness(42.0, anchor, plant_kl(5.0), &c);
        assert!(f3 < f5);
    }
}
