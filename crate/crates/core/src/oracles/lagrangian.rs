//! Constrained oracles for FDR-controlled multiple testing and dir-FDR
//! controlled sign classification.
//!
//! For a fixed multiplier `λ` both rules minimize the posterior expected
//! value of `non-discovery proportion + λ · discovery-error proportion`.
//! Writing `c_i` for the posterior probability that a call on coordinate
//! `i` is wrong and `t_i` for the posterior probability that leaving it
//! uncalled is a miss, the expected loss of calling the set `C` with
//! `|C| = r` is
//!
//! ```text
//! ρ(C) = (λ / r) Σ_{i∈C} c_i + (1 / (n − r)) Σ_{i∉C} t_i
//! ```
//!
//! with the empty-sum terms taken as zero at `r = 0` and `r = n`. For testing,
//! `c_i = q_i` and `t_i = 1 − q_i`, so the best `C` of each size is the set of
//! the `r` smallest `q_i` and the search reduces to the sorted scan
//! `ρ_λ(r)`. `λ*` is then tuned so that the constraint's expectation under the
//! calibration law equals `alpha`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OracleError, Result};
use crate::losses::{DecisionAction, SignLabel};
use crate::model::{stream_rng, ParamVector};
use crate::numeric::mean_and_se;
use crate::permutation::PermutationEnsemble;
use crate::posterior::{JointLaw, NullSet, OrbitSupport, PosteriorModel, PosteriorSummary};
use crate::rule::DecisionRule;

use super::global::MIN_CALIBRATION_DRAWS;

/// Which error rate is held at `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Fdr,
    DirFdr,
}

/// Per-coordinate inputs of the scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanInput {
    /// Probability that calling the coordinate is an error.
    pub call_error: Vec<f64>,
    /// Probability that not calling the coordinate is a miss.
    pub miss: Vec<f64>,
}

impl ScanInput {
    pub fn testing(summary: &PosteriorSummary) -> Self {
        Self {
            call_error: summary.q_null.clone(),
            miss: summary.q_null.iter().map(|q| 1.0 - q).collect(),
        }
    }

    pub fn sign(summary: &PosteriorSummary) -> Self {
        Self {
            call_error: (0..summary.len()).map(|i| summary.sign_q(i)).collect(),
            miss: summary.p_pos.iter().zip(&summary.p_neg).map(|(p, m)| p + m).collect(),
        }
    }

    fn len(&self) -> usize {
        self.call_error.len()
    }

    /// Ordering by `call_error` ascending that is valid for every `r`, if
    /// one exists: it does when `miss` is nonincreasing along it.
    fn uniform_order(&self) -> Option<Vec<usize>> {
        let c = &self.call_error;
        let t = &self.miss;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(t[b].total_cmp(&t[a])).then(a.cmp(&b)));
        order.windows(2).all(|w| t[w[0]] >= t[w[1]]).then_some(order)
    }
}

#[inline]
fn key(lambda: f64, c: f64, t: f64, n: usize, r: usize) -> f64 {
    lambda * c * (n - r) as f64 - t * r as f64
}

fn rho(lambda: f64, input: &ScanInput, chosen: &[usize], r: usize) -> f64 {
    let n = input.len();
    let mut called = vec![false; n];
    for &i in &chosen[..r] {
        called[i] = true;
    }
    let mut err = 0.0;
    let mut miss = 0.0;
    for i in 0..n {
        if called[i] {
            err += input.call_error[i];
        } else {
            miss += input.miss[i];
        }
    }
    let a = if r == 0 { 0.0 } else { lambda * err / r as f64 };
    let b = if r == n { 0.0 } else { miss / (n - r) as f64 };
    a + b
}

/// Minimizer of `ρ` over all call sets, returned as a mask.
///
/// Among sizes with equal minimal `ρ` the smallest is taken. A size whose
/// best set is not unique (tied keys straddle the cut) is skipped, which
/// keeps the rule exactly equivariant; `r = 0` and `r = n` are always
/// admissible.
pub fn lagrangian_scan(input: &ScanInput, lambda: f64) -> Vec<bool> {
    let n = input.len();
    let uniform = input.uniform_order();
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    for r in 0..=n {
        let order = match &uniform {
            Some(o) => o.clone(),
            None => {
                let mut o: Vec<usize> = (0..n).collect();
                let k = |i: usize| key(lambda, input.call_error[i], input.miss[i], n, r);
                o.sort_by(|&a, &b| k(a).total_cmp(&k(b)).then(a.cmp(&b)));
                o
            }
        };
        if r > 0 && r < n {
            let (a, b) = (order[r - 1], order[r]);
            let ka = key(lambda, input.call_error[a], input.miss[a], n, r);
            let kb = key(lambda, input.call_error[b], input.miss[b], n, r);
            if ka == kb {
                continue;
            }
        }
        let value = rho(lambda, input, &order, r);
        if best.as_ref().is_none_or(|(v, _, _)| value < *v) {
            best = Some((value, order, r));
        }
    }
    let (_, order, r) = best.expect("r = 0 is always admissible");
    let mut mask = vec![false; n];
    for &i in &order[..r] {
        mask[i] = true;
    }
    mask
}

/// The sorted-scan objective `ρ_λ(r)`, `r = 0..=n`, for testing.
pub fn rho_profile(q: &[f64], lambda: f64) -> Vec<f64> {
    let n = q.len();
    let mut sorted = q.to_vec();
    sorted.sort_by(f64::total_cmp);
    (0..=n)
        .map(|r| {
            let a = if r == 0 { 0.0 } else { lambda * sorted[..r].iter().sum::<f64>() / r as f64 };
            let b = if r == n { 0.0 } else { sorted[r..].iter().map(|q| 1.0 - q).sum::<f64>() / (n - r) as f64 };
            a + b
        })
        .collect()
}

/// Reject the `r*_λ` coordinates with the smallest `q_i`.
pub fn mt_rule_at_lambda(summary: &PosteriorSummary, lambda: f64) -> Vec<bool> {
    lagrangian_scan(&ScanInput::testing(summary), lambda)
}

/// Label for a called coordinate: `+` when `P(xi <= 0) < P(xi >= 0)`, `-`
/// when greater, `+` on an exact tie.
pub fn sign_label(summary: &PosteriorSummary, i: usize) -> SignLabel {
    if summary.p_neg[i] > summary.p_pos[i] {
        SignLabel::Minus
    } else {
        SignLabel::Plus
    }
}

/// Coordinates whose sign posteriors tie exactly.
pub fn sign_ties(summary: &PosteriorSummary) -> Vec<usize> {
    (0..summary.len()).filter(|&i| summary.p_neg[i] == summary.p_pos[i]).collect()
}

pub fn sign_rule_at_lambda(summary: &PosteriorSummary, lambda: f64) -> Vec<SignLabel> {
    let mask = lagrangian_scan(&ScanInput::sign(summary), lambda);
    mask.iter()
        .enumerate()
        .map(|(i, &called)| if called { sign_label(summary, i) } else { SignLabel::NotAssigned })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Stop when `ln(hi / lo)` drops below this.
    pub log_tolerance: f64,
    pub max_iter: usize,
    /// Points of the log-spaced fallback grid.
    pub grid_points: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self { lambda_lo: 1e-4, lambda_hi: 1e4, log_tolerance: 1e-6, max_iter: 200, grid_points: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub draws: usize,
    pub seed: u64,
    pub bisection: BisectionConfig,
}

impl CalibrationConfig {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self { draws, seed, bisection: BisectionConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatus {
    /// The constraint crosses alpha inside the bracket.
    Interior,
    /// The constraint is already below alpha at the low bracket edge.
    BracketEdge,
    /// The bisection trace was not monotone; `λ*` came from a grid search.
    GridFallback,
    /// Above alpha even at the high edge; the rule never calls anything.
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lambda: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianCalibration {
    pub constraint: Constraint,
    pub alpha: f64,
    /// `+inf` when infeasible.
    pub lambda_star: f64,
    pub status: CalibrationStatus,
    /// Constraint estimate at `λ*` under the calibration law.
    pub constraint_at_star: f64,
    pub constraint_std_error: f64,
    pub trace: Vec<TracePoint>,
    pub draws: usize,
    pub seed: u64,
}

impl LagrangianCalibration {
    /// True when the bisection trace is nonincreasing in λ within two
    /// standard errors.
    pub fn trace_is_monotone(&self) -> bool {
        let mut pts = self.trace.clone();
        pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        pts.windows(2)
            .all(|w| w[1].estimate <= w[0].estimate + 2.0 * w[0].std_error.max(w[1].std_error))
    }
}

/// One pre-simulated calibration draw.
struct CalibrationCase {
    input: ScanInput,
    /// Whether calling coordinate `i` would count against the constraint.
    bad: Vec<bool>,
}

impl CalibrationCase {
    fn constraint_value(&self, lambda: f64) -> f64 {
        let mask = lagrangian_scan(&self.input, lambda);
        let called = mask.iter().filter(|&&m| m).count();
        if called == 0 {
            return 0.0;
        }
        let bad = mask.iter().zip(&self.bad).filter(|(m, b)| **m && **b).count();
        bad as f64 / called as f64
    }
}

#[derive(Clone)]
pub struct LagrangianOracle {
    model: Arc<dyn PosteriorModel>,
    calibration: LagrangianCalibration,
}

impl std::fmt::Debug for LagrangianOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LagrangianOracle")
            .field("model", &self.model.describe())
            .field("calibration", &self.calibration)
            .finish()
    }
}

/// Calibrate `λ*` for the exact or sampled permutation mixture of `theta`.
pub fn calibrate_lambda(
    theta: &ParamVector,
    ensemble: &PermutationEnsemble,
    alpha: f64,
    constraint: Constraint,
    null_set: NullSet,
    config: &CalibrationConfig,
) -> Result<LagrangianOracle> {
    let support = Arc::new(OrbitSupport::from_ensemble(theta, ensemble, null_set)?);
    LagrangianOracle::calibrate(support.clone(), support.as_ref(), alpha, constraint, config)
}

impl LagrangianOracle {
    /// Calibrate `λ*` so that the constraint's expectation over draws
    /// `(xi, W)` from `law` equals alpha, with decisions made from `model`.
    pub fn calibrate(
        model: Arc<dyn PosteriorModel>,
        law: &dyn JointLaw,
        alpha: f64,
        constraint: Constraint,
        config: &CalibrationConfig,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(OracleError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if config.draws < MIN_CALIBRATION_DRAWS {
            return Err(OracleError::InvalidParameter(format!(
                "calibration needs at least {MIN_CALIBRATION_DRAWS} draws, got {}",
                config.draws
            )));
        }
        let b = config.bisection;
        if !(b.lambda_lo > 0.0 && b.lambda_lo < b.lambda_hi && b.lambda_hi.is_finite()) {
            return Err(OracleError::InvalidParameter("lambda bracket must satisfy 0 < lo < hi < inf".into()));
        }
        if model.n() != law.n() {
            return Err(OracleError::Dimension { expected: model.n(), found: law.n() });
        }

        let null_set = model.null_set();
        let cases: Vec<CalibrationCase> = (0..config.draws as u64)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream_rng(config.seed, j);
                let (mut xi, mut w) = (Vec::new(), Vec::new());
                law.sample_joint(&mut rng, &mut xi, &mut w);
                let summary = model.summarize(&w);
                match constraint {
                    Constraint::Fdr => CalibrationCase {
                        input: ScanInput::testing(&summary),
                        bad: xi.iter().map(|&x| null_set.contains(x)).collect(),
                    },
                    Constraint::DirFdr => CalibrationCase {
                        input: ScanInput::sign(&summary),
                        bad: xi
                            .iter()
                            .enumerate()
                            .map(|(i, &x)| match sign_label(&summary, i) {
                                SignLabel::Plus => x < 0.0,
                                _ => x > 0.0,
                            })
                            .collect(),
                    },
                }
            })
            .collect();

        let evaluate = |lambda: f64| -> TracePoint {
            let values: Vec<f64> = cases.par_iter().map(|c| c.constraint_value(lambda)).collect();
            let (estimate, std_error) = mean_and_se(&values);
            TracePoint { lambda, estimate, std_error }
        };

        let mut trace = Vec::new();
        let lo_pt = evaluate(b.lambda_lo);
        trace.push(lo_pt);
        let (lambda_star, status, at_star) = if lo_pt.estimate <= alpha {
            (b.lambda_lo, CalibrationStatus::BracketEdge, lo_pt)
        } else {
            let hi_pt = evaluate(b.lambda_hi);
            trace.push(hi_pt);
            if hi_pt.estimate > alpha {
                let none = TracePoint { lambda: f64::INFINITY, estimate: 0.0, std_error: 0.0 };
                (f64::INFINITY, CalibrationStatus::Infeasible, none)
            } else {
                let (mut lo, mut hi) = (b.lambda_lo, b.lambda_hi);
                let mut hi_pt = hi_pt;
                for _ in 0..b.max_iter {
                    if (hi / lo).ln() < b.log_tolerance {
                        break;
                    }
                    let mid = (lo * hi).sqrt();
                    let pt = evaluate(mid);
                    trace.push(pt);
                    if pt.estimate <= alpha {
                        hi = mid;
                        hi_pt = pt;
                    } else {
                        lo = mid;
                    }
                }
                (hi, CalibrationStatus::Interior, hi_pt)
            }
        };

        let mut calibration = LagrangianCalibration {
            constraint,
            alpha,
            lambda_star,
            status,
            constraint_at_star: at_star.estimate,
            constraint_std_error: at_star.std_error,
            trace,
            draws: config.draws,
            seed: config.seed,
        };

        if status == CalibrationStatus::Interior && !calibration.trace_is_monotone() {
            let steps = b.grid_points.max(2);
            let ratio = (b.lambda_hi / b.lambda_lo).ln();
            let grid = (0..steps).map(|k| b.lambda_lo * (ratio * k as f64 / (steps - 1) as f64).exp());
            for lambda in grid {
                let pt = evaluate(lambda);
                if pt.estimate <= alpha {
                    calibration.lambda_star = lambda;
                    calibration.constraint_at_star = pt.estimate;
                    calibration.constraint_std_error = pt.std_error;
                    calibration.status = CalibrationStatus::GridFallback;
                    break;
                }
            }
        }

        Ok(Self { model, calibration })
    }

    /// An oracle at a fixed multiplier, skipping calibration.
    pub fn at_lambda(model: Arc<dyn PosteriorModel>, constraint: Constraint, alpha: f64, lambda: f64) -> Self {
        Self {
            model,
            calibration: LagrangianCalibration {
                constraint,
                alpha,
                lambda_star: lambda,
                status: CalibrationStatus::Interior,
                constraint_at_star: f64::NAN,
                constraint_std_error: f64::NAN,
                trace: Vec::new(),
                draws: 0,
                seed: 0,
            },
        }
    }

    pub fn calibration(&self) -> &LagrangianCalibration {
        &self.calibration
    }

    pub fn model(&self) -> &dyn PosteriorModel {
        self.model.as_ref()
    }

    pub fn lambda_star(&self) -> f64 {
        self.calibration.lambda_star
    }

    pub fn decide_from_summary(&self, summary: &PosteriorSummary) -> DecisionAction {
        let n = summary.len();
        let infeasible = self.calibration.status == CalibrationStatus::Infeasible;
        let lambda = self.calibration.lambda_star;
        match self.calibration.constraint {
            Constraint::Fdr if infeasible => DecisionAction::MultiTest(vec![false; n]),
            Constraint::Fdr => DecisionAction::MultiTest(mt_rule_at_lambda(summary, lambda)),
            Constraint::DirFdr if infeasible => DecisionAction::SignClassify(vec![SignLabel::NotAssigned; n]),
            Constraint::DirFdr => DecisionAction::SignClassify(sign_rule_at_lambda(summary, lambda)),
        }
    }
}

impl DecisionRule for LagrangianOracle {
    fn name(&self) -> String {
        match self.calibration.constraint {
            Constraint::Fdr => "oracle_fdr".into(),
            Constraint::DirFdr => "oracle_sign".into(),
        }
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        self.decide_from_summary(&self.model.summarize(z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn summary_from_q(q: &[f64]) -> PosteriorSummary {
        let n = q.len();
        PosteriorSummary {
            q_null: q.to_vec(),
            p_pos: q.iter().map(|v| 1.0 - v).collect(),
            p_neg: vec![0.0; n],
            post_mean: vec![0.0; n],
            post_var: vec![0.0; n],
            null_set: NullSet::Zero,
        }
    }

    #[test]
    fn two_coordinate_scan() {
        let rho = rho_profile(&[0.01, 0.99], 1.0);
        assert_abs_diff_eq!(rho[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rho[1], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(rho[2], 0.5, epsilon = 1e-15);
        assert_eq!(mt_rule_at_lambda(&summary_from_q(&[0.99, 0.01]), 1.0), vec![false, true]);
    }

    #[test]
    fn all_null_rejects_nothing() {
        for lambda in [1e-3, 0.1, 1.0, 50.0] {
            let rho = rho_profile(&[1.0; 4], lambda);
            let best = rho.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(rho[0], best);
            assert_eq!(mt_rule_at_lambda(&summary_from_q(&[1.0; 4]), lambda), vec![false; 4]);
        }
    }

    #[test]
    fn rejections_shrink_with_lambda_and_form_prefix() {
        let q = [0.3, 0.05, 0.8, 0.5, 0.12, 0.95];
        let s = summary_from_q(&q);
        let mut sorted: Vec<usize> = (0..q.len()).collect();
        sorted.sort_by(|&a, &b| q[a].total_cmp(&q[b]));
        let mut prev = usize::MAX;
        for k in 0..60 {
            let lambda = 10f64.powf(-3.0 + 0.1 * k as f64);
            let mask = mt_rule_at_lambda(&s, lambda);
            let r = mask.iter().filter(|&&m| m).count();
            assert!(r <= prev);
            prev = r;
            for (pos, &i) in sorted.iter().enumerate() {
                assert_eq!(mask[i], pos < r);
            }
        }
    }

    #[test]
    fn sign_rule_certain_signs() {
        let s = PosteriorSummary {
            q_null: vec![0.0, 0.0],
            p_pos: vec![1.0, 0.0],
            p_neg: vec![0.0, 1.0],
            post_mean: vec![5.0, -5.0],
            post_var: vec![0.0, 0.0],
            null_set: NullSet::Zero,
        };
        assert_eq!(sign_rule_at_lambda(&s, 1.0), vec![SignLabel::Plus, SignLabel::Minus]);
    }

    #[test]
    fn sign_rule_all_zero_theta_abstains() {
        let s = PosteriorSummary {
            q_null: vec![1.0; 3],
            p_pos: vec![0.0; 3],
            p_neg: vec![0.0; 3],
            post_mean: vec![0.0; 3],
            post_var: vec![0.0; 3],
            null_set: NullSet::Zero,
        };
        assert_eq!(sign_rule_at_lambda(&s, 0.7), vec![SignLabel::NotAssigned; 3]);
        assert_eq!(sign_ties(&s), vec![0, 1, 2]);
    }

    /// Brute-force minimum of `ρ` over every call set.
    fn brute_min(input: &ScanInput, lambda: f64) -> f64 {
        let n = input.call_error.len();
        (0u32..1 << n)
            .map(|bits| {
                let chosen: Vec<usize> = (0..n).filter(|i| bits >> i & 1 == 1).collect();
                let mut order = chosen.clone();
                order.extend((0..n).filter(|i| bits >> i & 1 == 0));
                rho(lambda, input, &order, chosen.len())
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn scan_is_optimal_when_null_mass_breaks_q_order() {
        // coordinate 0 is surely zero: a call is never wrong and leaving it
        // out is never a miss, so sorting by call error alone is not enough
        let input = ScanInput { call_error: vec![0.0, 0.05, 0.4], miss: vec![0.0, 1.0, 1.0] };
        for lambda in [0.2, 1.0, 3.0, 10.0] {
            let mask = lagrangian_scan(&input, lambda);
            let mut order: Vec<usize> = (0..3).filter(|&i| mask[i]).collect();
            let r = order.len();
            order.extend((0..3).filter(|&i| !mask[i]));
            assert_abs_diff_eq!(rho(lambda, &input, &order, r), brute_min(&input, lambda), epsilon = 1e-12);
        }
    }

    #[test]
    fn calibration_rejects_bad_config() {
        let theta = ParamVector::unit(vec![0.0, 3.0]).unwrap();
        let e = crate::permutation::enumerate_exact(2).unwrap();
        let cfg = CalibrationConfig::new(10, 1);
        assert!(calibrate_lambda(&theta, &e, 0.1, Constraint::Fdr, NullSet::Zero, &cfg).is_err());
        let cfg = CalibrationConfig::new(1000, 1);
        assert!(calibrate_lambda(&theta, &e, 0.0, Constraint::Fdr, NullSet::Zero, &cfg).is_err());
    }

    #[test]
    fn zero_theta_fdr_is_edge() {
        let theta = ParamVector::unit(vec![0.0; 3]).unwrap();
        let e = crate::permutation::enumerate_exact(3).unwrap();
        let o = calibrate_lambda(&theta, &e, 0.1, Constraint::Fdr, NullSet::Zero, &CalibrationConfig::new(2_000, 3))
            .unwrap();
        assert_eq!(o.calibration().status, CalibrationStatus::BracketEdge);
        assert_eq!(o.calibration().constraint_at_star, 0.0);
    }
}
