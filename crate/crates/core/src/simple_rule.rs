//! Robbins's oracle simple rule: each coordinate is decided from its own
//! observation alone, as the Bayes rule under the empirical distribution of
//! the entries of `theta`.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OracleError, Result};
use crate::model::{label_free_sum, ParamVector, HALF_LN_2PI};
use crate::numeric::logsumexp;
use crate::oracles::{CalibrationConfig, OracleRule, Problem};
use crate::permutation::{EnsembleMode, DEFAULT_EXACT_CAP};
use crate::posterior::{JointLaw, NullSet, OrbitSupport, PosteriorModel, PosteriorSummary};
use crate::risk::{paired_difference, report, simulate, BoundDirection, LossSpec, RiskReport};
use crate::rule::DecisionRule;

/// The uniform distribution on the entries of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPrior {
    atoms: Vec<f64>,
    sigma: f64,
    null_set: NullSet,
}

/// Posterior of one coordinate under the empirical prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplePosterior {
    pub q_null: f64,
    pub p_pos: f64,
    pub p_neg: f64,
    pub post_mean: f64,
    pub post_var: f64,
}

impl EmpiricalPrior {
    pub fn new(theta: &ParamVector, null_set: NullSet) -> Self {
        Self { atoms: theta.values().to_vec(), sigma: theta.sigma(), null_set }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    fn log_weights(&self, z: f64) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|&a| {
                let r = (z - a) / self.sigma;
                -0.5 * r * r
            })
            .collect()
    }
}

/// Posterior of `xi` given `W = z` when `xi` is a uniformly drawn atom and
/// `W ~ N(xi, sigma^2)`.
pub fn simple_posterior(prior: &EmpiricalPrior, z: f64, null_set: NullSet) -> SimplePosterior {
    let lw = prior.log_weights(z);
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut total, mut q, mut pos, mut neg, mut mean, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, l) in prior.atoms.iter().zip(&lw) {
        let w = (l - max).exp();
        total += w;
        if null_set.contains(a) {
            q += w;
        }
        if a > 0.0 {
            pos += w;
        } else if a < 0.0 {
            neg += w;
        }
        mean += w * a;
        sq += w * a * a;
    }
    let post_mean = mean / total;
    SimplePosterior {
        q_null: (q / total).clamp(0.0, 1.0),
        p_pos: (pos / total).clamp(0.0, 1.0),
        p_neg: (neg / total).clamp(0.0, 1.0),
        post_mean,
        post_var: (sq / total - post_mean * post_mean).max(0.0),
    }
}

/// Coordinatewise posterior summary, usable by every oracle rule.
pub fn simple_summary(prior: &EmpiricalPrior, z: &[f64], null_set: NullSet) -> PosteriorSummary {
    let parts: Vec<SimplePosterior> = z.iter().map(|&zi| simple_posterior(prior, zi, null_set)).collect();
    PosteriorSummary {
        q_null: parts.iter().map(|p| p.q_null).collect(),
        p_pos: parts.iter().map(|p| p.p_pos).collect(),
        p_neg: parts.iter().map(|p| p.p_neg).collect(),
        post_mean: parts.iter().map(|p| p.post_mean).collect(),
        post_var: parts.iter().map(|p| p.post_var).collect(),
        null_set,
    }
}

impl PosteriorModel for EmpiricalPrior {
    fn n(&self) -> usize {
        self.atoms.len()
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn null_set(&self) -> NullSet {
        self.null_set
    }

    fn summarize(&self, z: &[f64]) -> PosteriorSummary {
        simple_summary(self, z, self.null_set)
    }

    /// `Σ_i log[(1/n) Σ_j φ_sigma(z_i − theta_j)]`.
    fn log_marginal(&self, z: &[f64]) -> f64 {
        let n = self.atoms.len() as f64;
        let per: Vec<f64> = z
            .iter()
            .map(|&zi| logsumexp(&self.log_weights(zi)) - n.ln() - HALF_LN_2PI - self.sigma.ln())
            .collect();
        label_free_sum(per)
    }

    fn describe(&self) -> String {
        format!("empirical prior over {} atoms", self.atoms.len())
    }
}

/// Independent coordinates: `xi_i` a uniformly drawn atom, `W_i ~ N(xi_i, sigma^2)`.
impl JointLaw for EmpiricalPrior {
    fn n(&self) -> usize {
        self.atoms.len()
    }

    fn sample_joint(&self, rng: &mut ChaCha8Rng, xi: &mut Vec<f64>, w: &mut Vec<f64>) {
        let n = self.atoms.len();
        xi.clear();
        xi.extend((0..n).map(|_| self.atoms[rng.random_range(0..n)]));
        crate::model::draw_gaussian_into(rng, xi, self.sigma, w);
    }
}

/// Which joint law calibrates the simple rule's constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimpleCalibrationLaw {
    /// Coordinates drawn independently from the empirical prior.
    Iid,
    /// The permutation mixture of `theta`, under which the constraint equals
    /// the frequentist constraint at `theta` for any relabeling-equivariant rule.
    #[default]
    PermutationMixture,
}

/// Build the simple-rule analogue of the oracle for `problem`.
pub fn simple_oracle(
    theta: &ParamVector,
    problem: Problem,
    alpha: f64,
    null_set: NullSet,
    law: SimpleCalibrationLaw,
    config: &CalibrationConfig,
) -> Result<OracleRule> {
    let prior = Arc::new(EmpiricalPrior::new(theta, null_set));
    match law {
        SimpleCalibrationLaw::Iid => OracleRule::build(problem, prior.clone(), prior.as_ref(), alpha, config),
        SimpleCalibrationLaw::PermutationMixture => {
            let mixture = OrbitSupport::exact(theta, null_set)?;
            OracleRule::build(problem, prior, &mixture, alpha, config)
        }
    }
}

/// Risks of the simple and exact oracles on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub risk_simple: RiskReport,
    pub risk_pi: RiskReport,
    /// `R(theta, simple) − R(theta, exact)`.
    pub gap: f64,
    pub gap_std_error: f64,
    pub calibration_law: SimpleCalibrationLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub alpha: f64,
    pub null_set: NullSet,
    pub draws: usize,
    pub seed: u64,
    pub calibration: CalibrationConfig,
    pub law: SimpleCalibrationLaw,
}

/// Price of deciding coordinatewise: the risk gap between the simple oracle
/// and the exact permutation-invariant oracle at `theta`.
pub fn gap_estimate(theta: &ParamVector, problem: Problem, cfg: &GapConfig) -> Result<GapReport> {
    let n = theta.len();
    if n > DEFAULT_EXACT_CAP {
        return Err(OracleError::Capacity { n, max: DEFAULT_EXACT_CAP });
    }
    let loss = LossSpec { problem, null_set: cfg.null_set };
    let support = Arc::new(OrbitSupport::exact(theta, cfg.null_set)?);
    let pi = OracleRule::build(problem, support.clone(), support.as_ref(), cfg.alpha, &cfg.calibration)?;
    let simple = simple_oracle(theta, problem, cfg.alpha, cfg.null_set, cfg.law, &cfg.calibration)?;

    let a = simulate(theta, &simple, &loss, cfg.draws, cfg.seed)?;
    let b = simulate(theta, &pi, &loss, cfg.draws, cfg.seed)?;
    let (gap, gap_std_error) = paired_difference(&a, &b);
    Ok(GapReport {
        risk_simple: report(&format!("simple_{}", pi.name()), &loss, &a, cfg.seed, BoundDirection::Point),
        risk_pi: report(&pi.name(), &loss, &b, cfg.seed, BoundDirection::Point).with_ensemble(EnsembleMode::Exact),
        gap,
        gap_std_error,
        calibration_law: cfg.law,
    })
}
