//! Bounds on the exact oracle risk from a sampled set `S` of `m`
//! permutations. The optimal rule for the prior uniform on `S` has Bayes
//! risk below the exact oracle risk; applying rules built from random `S`
//! at the true `theta` gives an approximation from above.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OracleError, Result};
use crate::model::{draw_gaussian_into, stream_rng, ParamVector};
use crate::numeric::{derive_seed, mean_and_se, splitmix64};
use crate::oracles::{CalibrationConfig, OracleRule, Problem};
use crate::permutation::{enumerate_exact, sample_ensemble, PermutationEnsemble, DEFAULT_EXACT_CAP};
use crate::posterior::{JointLaw, NullSet, OrbitSupport, RelabelingLaw};
use crate::risk::{report, simulate, simulate_joint, BoundDirection, DrawOutcome, LossSpec, RiskReport};
use crate::rule::DecisionRule;

/// Everything needed to build an oracle for a problem from a support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub problem: Problem,
    pub alpha: f64,
    #[serde(default)]
    pub null_set: NullSet,
    pub calibration: CalibrationConfig,
}

impl OracleSpec {
    pub fn loss(&self) -> LossSpec {
        LossSpec { problem: self.problem, null_set: self.null_set }
    }

    /// Calibrate the oracle whose prior and calibration law are both `support`.
    pub fn build(&self, support: Arc<OrbitSupport>) -> Result<OracleRule> {
        OracleRule::build(self.problem, support.clone(), support.as_ref(), self.alpha, &self.calibration)
    }

    /// Calibrate the oracle with prior `support` under a different joint law.
    pub fn build_under(&self, support: Arc<OrbitSupport>, law: &dyn JointLaw) -> Result<OracleRule> {
        OracleRule::build(self.problem, support, law, self.alpha, &self.calibration)
    }
}

/// Size and replication of the sampled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub m: usize,
    pub draws: usize,
    pub seed: u64,
    /// Independent sets `S` averaged by the upper approximation of the
    /// calibrated problems. Estimation draws a fresh `S` for every draw.
    pub replicates: usize,
}

impl BoundConfig {
    pub fn new(m: usize, draws: usize, seed: u64) -> Self {
        Self { m, draws, seed, replicates: 10 }
    }
}

fn factorial_at_least(n: usize, m: usize) -> bool {
    let mut f: usize = 1;
    for k in 2..=n {
        f = f.saturating_mul(k);
        if f > m {
            return false;
        }
    }
    f <= m
}

/// `m` sampled permutations, or all of `S_n` when `m >= n!` and enumeration is feasible.
fn subset_ensemble(n: usize, m: usize, seed: u64) -> Result<PermutationEnsemble> {
    if m == 0 {
        return Err(OracleError::InvalidParameter("m must be >= 1".into()));
    }
    if n <= DEFAULT_EXACT_CAP && factorial_at_least(n, m) {
        enumerate_exact(n)
    } else {
        sample_ensemble(n, m, seed)
    }
}

/// Frequentist risk of the exact oracle at `theta`.
pub fn exact_oracle_risk(theta: &ParamVector, spec: &OracleSpec, draws: usize, seed: u64) -> Result<RiskReport> {
    let support = Arc::new(OrbitSupport::exact(theta, spec.null_set)?);
    let mode = support.mode();
    let rule = spec.build(support)?;
    let outcomes = simulate(theta, &rule, &spec.loss(), draws, seed)?;
    Ok(report(&rule.name(), &spec.loss(), &outcomes, seed, BoundDirection::Point).with_ensemble(mode))
}

/// Bayes risk of the optimal rule for the prior uniform on one sampled `S`.
pub fn subset_lower_bound(theta: &ParamVector, spec: &OracleSpec, cfg: &BoundConfig) -> Result<RiskReport> {
    let ensemble = subset_ensemble(theta.len(), cfg.m, derive_seed(cfg.seed, "subset"))?;
    let support = Arc::new(OrbitSupport::from_ensemble(theta, &ensemble, spec.null_set)?);
    let rule = spec.build(support.clone())?;
    let outcomes = simulate_joint(support.as_ref(), &rule, &spec.loss(), cfg.draws, cfg.seed)?;
    let name = format!("{}_subset", rule.name());
    Ok(report(&name, &spec.loss(), &outcomes, cfg.seed, BoundDirection::LowerBound).with_ensemble(support.mode()))
}

/// Frequentist risk at `theta` of oracles built from randomly drawn `S`.
///
/// For estimation every draw gets its own `S`. Otherwise `cfg.replicates`
/// sets are drawn and each rule is scored on an equal share of the draws;
/// the standard error then comes from the spread of the replicate means.
/// Constraints are calibrated under the full permutation mixture (sampled
/// by relabeling), so that averaged over `S` the rule meets the constraint
/// at `theta`. Calibrating under the mixture on `S` alone would not.
pub fn mc_upper_approx(theta: &ParamVector, spec: &OracleSpec, cfg: &BoundConfig) -> Result<RiskReport> {
    let n = theta.len();
    let loss = spec.loss();
    let base = derive_seed(cfg.seed, "upper");
    let exact = n <= DEFAULT_EXACT_CAP && factorial_at_least(n, cfg.m);
    if exact {
        let mut r = exact_oracle_risk(theta, spec, cfg.draws, cfg.seed)?;
        r.rule = format!("{}_upper", r.rule);
        r.bound_direction = BoundDirection::UpperApprox;
        return Ok(r);
    }

    if let Problem::Estimate(_) = spec.problem {
        if cfg.draws < 2 {
            return Err(OracleError::InvalidParameter("need at least 2 draws".into()));
        }
        let outcomes: Vec<DrawOutcome> = (0..cfg.draws as u64)
            .into_par_iter()
            .map_init(Vec::new, |z, j| {
                let mut rng = stream_rng(cfg.seed, j);
                draw_gaussian_into(&mut rng, theta.values(), theta.sigma(), z);
                let ensemble = sample_ensemble(n, cfg.m, splitmix64(base ^ j))?;
                let support = Arc::new(OrbitSupport::from_ensemble(theta, &ensemble, spec.null_set)?);
                let rule = spec.build(support)?;
                loss.evaluate(theta.values(), z, &rule.decide(z))
            })
            .collect::<Result<_>>()?;
        let mode = crate::permutation::EnsembleMode::Sampled { m: cfg.m, seed: base };
        return Ok(report("oracle_estimate_upper", &loss, &outcomes, cfg.seed, BoundDirection::UpperApprox)
            .with_ensemble(mode));
    }

    let k = cfg.replicates.max(1);
    let per = cfg.draws / k;
    if per < 2 {
        return Err(OracleError::InvalidParameter(format!("{} draws cannot be split over {k} replicates", cfg.draws)));
    }
    let mut all = Vec::with_capacity(per * k);
    let mut means = Vec::with_capacity(k);
    let mut name = String::new();
    let law = RelabelingLaw::new(theta);
    for rep in 0..k as u64 {
        let ensemble = sample_ensemble(n, cfg.m, splitmix64(base ^ rep))?;
        let support = Arc::new(OrbitSupport::from_ensemble(theta, &ensemble, spec.null_set)?);
        let rule = spec.build_under(support, &law)?;
        name = format!("{}_upper", rule.name());
        let outcomes = simulate(theta, &rule, &loss, per, cfg.seed.wrapping_add(rep))?;
        means.push(outcomes.iter().map(|o| o.loss).sum::<f64>() / per as f64);
        all.extend(outcomes);
    }
    let mut r = report(&name, &loss, &all, cfg.seed, BoundDirection::UpperApprox)
        .with_ensemble(crate::permutation::EnsembleMode::Sampled { m: cfg.m, seed: base });
    if k >= 2 {
        let (mean, se) = mean_and_se(&means);
        r.estimate = mean;
        r.std_error = se;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::SelectionRule;

    fn spec(problem: Problem) -> OracleSpec {
        OracleSpec { problem, alpha: 0.1, null_set: NullSet::Zero, calibration: CalibrationConfig::new(2_000, 9) }
    }

    #[test]
    fn factorial_threshold() {
        assert!(factorial_at_least(3, 6));
        assert!(!factorial_at_least(3, 5));
        assert!(factorial_at_least(1, 1));
        assert!(!factorial_at_least(21, usize::MAX - 1));
    }

    #[test]
    fn full_subset_recovers_exact_risk() {
        let theta = ParamVector::unit(vec![0.0, 1.0, 3.0]).unwrap();
        let s = spec(Problem::Estimate(SelectionRule::All));
        let exact = exact_oracle_risk(&theta, &s, 4_000, 2).unwrap();
        let upper = mc_upper_approx(&theta, &s, &BoundConfig::new(6, 4_000, 2)).unwrap();
        assert_eq!(exact.estimate, upper.estimate);
        assert_eq!(upper.bound_direction, BoundDirection::UpperApprox);
        let lower = subset_lower_bound(&theta, &s, &BoundConfig::new(6, 20_000, 2)).unwrap();
        assert_eq!(lower.bound_direction, BoundDirection::LowerBound);
        assert!((lower.estimate - exact.estimate).abs() < 2.0 * (lower.std_error.hypot(exact.std_error)));
    }

    #[test]
    fn small_subset_sandwich() {
        let theta = ParamVector::unit(vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let s = spec(Problem::Estimate(SelectionRule::All));
        let exact = exact_oracle_risk(&theta, &s, 4_000, 3).unwrap();
        let lower = subset_lower_bound(&theta, &s, &BoundConfig::new(2, 4_000, 3)).unwrap();
        let upper = mc_upper_approx(&theta, &s, &BoundConfig::new(2, 4_000, 3)).unwrap();
        assert!(lower.estimate <= exact.estimate + 2.0 * lower.std_error.hypot(exact.std_error));
        assert!(exact.estimate <= upper.estimate + 2.0 * upper.std_error.hypot(exact.std_error));
    }
}
