//! Closed-form stand-in for VAE training dynamics.
//!
//! The plant responds to an applied KL weight `beta` instantaneously with
//! `KL(beta) = a / (1 + beta)` and `D(beta) = d0 + kappa * beta`, a monotone
//! rate-distortion tradeoff. Controllers can be exercised against it in
//! microseconds, and its optima are available in closed form for oracles.

use crate::error::Result;
use crate::vga::{CandidateEvaluator, FitnessElbo, TrialOutcome};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticPlant {
    /// KL scale: `KL(beta) = a / (1 + beta)`.
    pub a: f64,
    /// Distortion offset.
    pub d0: f64,
    /// Distortion slope in beta.
    pub kappa: f64,
    /// Which ELBO scale trial outcomes report.
    pub fitness_elbo: FitnessElbo,
}

impl SyntheticPlant {
    pub fn new(a: f64, d0: f64, kappa: f64, fitness_elbo: FitnessElbo) -> Self {
        SyntheticPlant {
            a,
            d0,
            kappa,
            fitness_elbo,
        }
    }

    pub fn kl(&self, beta: f64) -> f64 {
        self.a / (1.0 + beta)
    }

    pub fn distortion(&self, beta: f64) -> f64 {
        self.d0 + self.kappa * beta
    }

    pub fn elbo(&self, beta: f64) -> f64 {
        match self.fitness_elbo {
            FitnessElbo::Unweighted => self.distortion(beta) + self.kl(beta),
            FitnessElbo::AppliedBeta => self.distortion(beta) + beta * self.kl(beta),
        }
    }

    /// The beta at which the plant's KL hits `set_point` exactly.
    pub fn beta_for_kl(&self, set_point: f64) -> f64 {
        self.a / set_point - 1.0
    }
}

impl CandidateEvaluator for SyntheticPlant {
    fn evaluate(&mut self, beta: f64) -> Result<TrialOutcome> {
        Ok(TrialOutcome {
            elbo_end: self.elbo(beta),
            kl_end: self.kl(beta),
        })
    }
}
