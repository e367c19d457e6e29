//! Oracle permutation-invariant rules for the four problems, each built from
//! the posterior of `xi` given `W = z` under the permutation mixture of a
//! known `theta`.

pub mod estimate;
pub mod global;
pub mod lagrangian;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{DecisionAction, SelectionRule};
use crate::posterior::{JointLaw, PosteriorModel};
use crate::rule::DecisionRule;

pub use estimate::{posterior_selective_loss, selective_estimate, EstimationOracle};
pub use global::{calibrate_global, log_lr, lr_statistic, GlobalCalibration, GlobalTestOracle};
pub use lagrangian::{
    calibrate_lambda, lagrangian_scan, mt_rule_at_lambda, rho_profile, sign_label, sign_rule_at_lambda, sign_ties,
    BisectionConfig, CalibrationConfig, CalibrationStatus, Constraint, LagrangianCalibration, LagrangianOracle,
    ScanInput, TracePoint,
};

/// The decision problem being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "problem", content = "selection")]
pub enum Problem {
    /// Test `theta = 0`; loss is the Type II indicator.
    Global,
    /// Minimize FNR subject to FDR <= alpha.
    Fdr,
    /// Minimize dir-FNR subject to dir-FDR <= alpha.
    Sign,
    /// Squared error on the selected coordinates.
    Estimate(SelectionRule),
}

impl Problem {
    pub fn label(&self) -> String {
        match self {
            Problem::Global => "global".into(),
            Problem::Fdr => "fdr".into(),
            Problem::Sign => "sign".into(),
            Problem::Estimate(s) => format!("estimate[{}]", s.label()),
        }
    }
}

/// Any of the oracle rules.
#[derive(Debug, Clone)]
pub enum OracleRule {
    Global(GlobalTestOracle),
    Lagrangian(LagrangianOracle),
    Estimate(EstimationOracle),
}

impl OracleRule {
    /// Build and calibrate the oracle for `problem`. Decisions come from
    /// `model`; constrained problems are calibrated over draws from `law`.
    pub fn build(
        problem: Problem,
        model: Arc<dyn PosteriorModel>,
        law: &dyn JointLaw,
        alpha: f64,
        config: &CalibrationConfig,
    ) -> Result<Self> {
        Ok(match problem {
            Problem::Global => OracleRule::Global(GlobalTestOracle::calibrate(model, alpha, config.draws, config.seed)?),
            Problem::Fdr => OracleRule::Lagrangian(LagrangianOracle::calibrate(model, law, alpha, Constraint::Fdr, config)?),
            Problem::Sign => {
                OracleRule::Lagrangian(LagrangianOracle::calibrate(model, law, alpha, Constraint::DirFdr, config)?)
            }
            Problem::Estimate(s) => OracleRule::Estimate(EstimationOracle::new(model, s)),
        })
    }

    /// True when calibration could not meet the constraint and the rule
    /// falls back to never calling anything.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, OracleRule::Lagrangian(o) if o.calibration().status == CalibrationStatus::Infeasible)
    }

    /// Calibration facts worth reporting, as JSON.
    pub fn diagnostics(&self) -> serde_json::Value {
        match self {
            OracleRule::Global(o) => serde_json::to_value(o.calibration()).unwrap_or_default(),
            OracleRule::Lagrangian(o) => {
                let c = o.calibration();
                serde_json::json!({
                    "constraint": c.constraint,
                    "alpha": c.alpha,
                    "lambda_star": if c.lambda_star.is_finite() { serde_json::json!(c.lambda_star) } else { serde_json::json!("inf") },
                    "status": c.status,
                    "constraint_at_star": c.constraint_at_star,
                    "constraint_std_error": c.constraint_std_error,
                    "bisection_steps": c.trace.len(),
                    "trace_monotone": c.trace_is_monotone(),
                    "draws": c.draws,
                    "seed": c.seed,
                })
            }
            OracleRule::Estimate(o) => serde_json::json!({ "selection": o.selection() }),
        }
    }
}

impl DecisionRule for OracleRule {
    fn name(&self) -> String {
        match self {
            OracleRule::Global(o) => o.name(),
            OracleRule::Lagrangian(o) => o.name(),
            OracleRule::Estimate(o) => o.name(),
        }
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        match self {
            OracleRule::Global(o) => o.decide(z),
            OracleRule::Lagrangian(o) => o.decide(z),
            OracleRule::Estimate(o) => o.decide(z),
        }
    }
}
