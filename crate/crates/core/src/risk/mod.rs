//! Monte Carlo risk `R(theta, δ) = E_theta[L(Z, theta, δ(Z))]`, Bayes risk
//! under a joint law of `(xi, W)`, paired comparisons on common random
//! numbers, the sampled-subset bounds and a catalog of competitor rules.

pub mod baselines;
pub mod bounds;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OracleError, Result};
use crate::losses::{
    dir_fdp, dir_fnp, fdp, fnp, global_loss, selective_sq_loss, ConfusionCounts, DecisionAction, SignLabel, Selector,
};
use crate::model::{draw_gaussian_into, stream_rng, ParamVector};
use crate::numeric::mean_and_se;
use crate::oracles::Problem;
use crate::permutation::EnsembleMode;
use crate::posterior::{JointLaw, NullSet};
use crate::rule::DecisionRule;

pub use baselines::{baseline_rules, BenjaminiHochberg, ChiSquareTest, IdentityEstimator, JamesStein, NaiveSign};
pub use bounds::{exact_oracle_risk, mc_upper_approx, subset_lower_bound, BoundConfig, OracleSpec};

/// What a reported number is relative to the exact oracle risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundDirection {
    Point,
    LowerBound,
    UpperApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideChannel {
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub rule: String,
    pub loss: String,
    pub estimate: f64,
    pub std_error: f64,
    pub draws: usize,
    pub seed: u64,
    pub side_channels: BTreeMap<String, SideChannel>,
    /// `None` for rules that do not use a permutation ensemble.
    pub ensemble_mode: Option<EnsembleMode>,
    pub bound_direction: BoundDirection,
}

impl RiskReport {
    pub fn with_ensemble(mut self, mode: EnsembleMode) -> Self {
        self.ensemble_mode = Some(mode);
        self
    }

    pub fn side(&self, name: &str) -> Option<SideChannel> {
        self.side_channels.get(name).copied()
    }
}

/// The loss family used to score actions, with the null region for testing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub problem: Problem,
    #[serde(default)]
    pub null_set: NullSet,
}

/// Loss and auxiliary quantities of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawOutcome {
    pub loss: f64,
    pub side: Vec<f64>,
}

impl LossSpec {
    pub fn new(problem: Problem) -> Self {
        Self { problem, null_set: NullSet::Zero }
    }

    pub fn label(&self) -> String {
        match self.problem {
            Problem::Global => "type_ii".into(),
            Problem::Fdr => "fnp".into(),
            Problem::Sign => "dir_fnp".into(),
            Problem::Estimate(s) => format!("selective_sq[{}]", s.label()),
        }
    }

    pub fn side_names(&self) -> &'static [&'static str] {
        match self.problem {
            Problem::Global => &["reject"],
            Problem::Fdr => &["fdr", "power", "avg_rejections"],
            Problem::Sign => &["dir_fdr", "avg_calls"],
            Problem::Estimate(_) => &["avg_selected"],
        }
    }

    /// Score `action` taken on data `z` when the parameter is `truth`.
    pub fn evaluate(&self, truth: &[f64], z: &[f64], action: &DecisionAction) -> Result<DrawOutcome> {
        let mismatch = || {
            OracleError::Incompatible(format!(
                "{} action cannot be scored by the {} loss",
                action.kind(),
                self.problem.label()
            ))
        };
        let null = self.null_set;
        Ok(match (self.problem, action) {
            (Problem::Global, DecisionAction::GlobalTest(reject)) => DrawOutcome {
                loss: global_loss(truth, *reject, null),
                side: vec![*reject as u8 as f64],
            },
            (Problem::Fdr, DecisionAction::MultiTest(reject)) => {
                let c = ConfusionCounts::tally(truth, reject, null);
                let power = if c.n11 + c.n01 == 0 { 0.0 } else { c.n11 as f64 / (c.n11 + c.n01) as f64 };
                DrawOutcome {
                    loss: fnp(truth, reject, null),
                    side: vec![fdp(truth, reject, null), power, (c.n10 + c.n11) as f64],
                }
            }
            (Problem::Sign, DecisionAction::SignClassify(labels)) => DrawOutcome {
                loss: dir_fnp(truth, labels),
                side: vec![
                    dir_fdp(truth, labels),
                    labels.iter().filter(|&&l| l != SignLabel::NotAssigned).count() as f64,
                ],
            },
            (Problem::Estimate(s), DecisionAction::Estimate(a)) => DrawOutcome {
                loss: selective_sq_loss(z, truth, a, &s),
                side: vec![s.select(z).count() as f64],
            },
            _ => return Err(mismatch()),
        })
    }
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < 2 {
        return Err(OracleError::InvalidParameter(format!("need at least 2 draws, got {draws}")));
    }
    Ok(())
}

/// Per-draw outcomes of `rule` at fixed `theta`; draw `j` uses stream `j` of `seed`.
pub fn simulate(
    theta: &ParamVector,
    rule: &dyn DecisionRule,
    loss: &LossSpec,
    draws: usize,
    seed: u64,
) -> Result<Vec<DrawOutcome>> {
    check_draws(draws)?;
    (0..draws as u64)
        .into_par_iter()
        .map_init(Vec::new, |z, j| {
            let mut rng = stream_rng(seed, j);
            draw_gaussian_into(&mut rng, theta.values(), theta.sigma(), z);
            loss.evaluate(theta.values(), z, &rule.decide(z))
        })
        .collect()
}

/// Per-draw outcomes with `(xi, W)` drawn from `law`, scored against `xi`.
pub fn simulate_joint(
    law: &dyn JointLaw,
    rule: &dyn DecisionRule,
    loss: &LossSpec,
    draws: usize,
    seed: u64,
) -> Result<Vec<DrawOutcome>> {
    check_draws(draws)?;
    (0..draws as u64)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(xi, w), j| {
                let mut rng = stream_rng(seed, j);
                law.sample_joint(&mut rng, xi, w);
                loss.evaluate(xi, w, &rule.decide(w))
            },
        )
        .collect()
}

/// Summarize outcomes into a report.
pub fn report(
    rule: &str,
    loss: &LossSpec,
    outcomes: &[DrawOutcome],
    seed: u64,
    bound_direction: BoundDirection,
) -> RiskReport {
    let losses: Vec<f64> = outcomes.iter().map(|o| o.loss).collect();
    let (estimate, std_error) = mean_and_se(&losses);
    let side_channels = loss
        .side_names()
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let v: Vec<f64> = outcomes.iter().map(|o| o.side[k]).collect();
            let (estimate, std_error) = mean_and_se(&v);
            (name.to_string(), SideChannel { estimate, std_error })
        })
        .collect();
    RiskReport {
        rule: rule.to_string(),
        loss: loss.label(),
        estimate,
        std_error,
        draws: outcomes.len(),
        seed,
        side_channels,
        ensemble_mode: None,
        bound_direction,
    }
}

/// Frequentist risk of `rule` at `theta`.
pub fn estimate_risk(
    theta: &ParamVector,
    rule: &dyn DecisionRule,
    loss: &LossSpec,
    draws: usize,
    seed: u64,
) -> Result<RiskReport> {
    let outcomes = simulate(theta, rule, loss, draws, seed)?;
    Ok(report(&rule.name(), loss, &outcomes, seed, BoundDirection::Point))
}

/// Bayes risk of `rule` under the joint law.
pub fn bayes_risk(
    law: &dyn JointLaw,
    rule: &dyn DecisionRule,
    loss: &LossSpec,
    draws: usize,
    seed: u64,
) -> Result<RiskReport> {
    let outcomes = simulate_joint(law, rule, loss, draws, seed)?;
    Ok(report(&rule.name(), loss, &outcomes, seed, BoundDirection::Point))
}

/// Two rules scored on the same draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub first: RiskReport,
    pub second: RiskReport,
    /// Mean of `loss(first) − loss(second)`.
    pub difference: f64,
    /// Standard error of the paired difference.
    pub difference_std_error: f64,
}

pub fn paired_difference(a: &[DrawOutcome], b: &[DrawOutcome]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "paired outcomes differ in length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.loss - y.loss).collect();
    mean_and_se(&d)
}

/// Risks of two rules at `theta` on common random numbers.
pub fn compare_paired(
    theta: &ParamVector,
    first: &dyn DecisionRule,
    second: &dyn DecisionRule,
    loss: &LossSpec,
    draws: usize,
    seed: u64,
) -> Result<PairedComparison> {
    let a = simulate(theta, first, loss, draws, seed)?;
    let b = simulate(theta, second, loss, draws, seed)?;
    let (difference, difference_std_error) = paired_difference(&a, &b);
    Ok(PairedComparison {
        first: report(&first.name(), loss, &a, seed, BoundDirection::Point),
        second: report(&second.name(), loss, &b, seed, BoundDirection::Point),
        difference,
        difference_std_error,
    })
}
