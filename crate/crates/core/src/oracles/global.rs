//! The most powerful level-alpha test of the point null `theta = 0` against
//! the permutation mixture of `theta`: reject when
//! `Λ(z) = φ(z) / [(1/m) Σ_g φ(z − g(theta))]` is at most `c(alpha)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OracleError, Result};
use crate::losses::DecisionAction;
use crate::model::{draw_gaussian_into, null_log_density, stream_rng, DataVector, ParamVector};
use crate::numeric::splitmix64;
use crate::permutation::PermutationEnsemble;
use crate::posterior::{NullSet, OrbitSupport, PosteriorModel};
use crate::rule::DecisionRule;

pub const MIN_CALIBRATION_DRAWS: usize = 1_000;

/// `log Λ(z)` for an arbitrary alternative model.
pub fn log_lr(model: &dyn PosteriorModel, z: &[f64]) -> f64 {
    null_log_density(z, model.sigma()) - model.log_marginal(z)
}

/// `Λ(z)` against the permutation mixture over `ensemble`.
pub fn lr_statistic(theta: &ParamVector, ensemble: &PermutationEnsemble, z: &DataVector) -> Result<f64> {
    check_len(theta.len(), z.len())?;
    let support = OrbitSupport::from_ensemble(theta, ensemble, NullSet::Zero)?;
    Ok(log_lr(&support, z.values()).exp())
}

/// Calibration outcome of the global test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GlobalCalibration {
    pub alpha: f64,
    /// `log c`; rejection region is `log Λ <= log_c`.
    pub log_c: f64,
    /// Order-statistic band on `log c` of about one binomial standard error.
    pub log_c_band: (f64, f64),
    /// Standard error of the attained level, `sqrt(alpha (1 - alpha) / draws)`.
    pub level_std_error: f64,
    /// Set when `Λ` is constant under the null, i.e. the alternative equals
    /// the null; the test then rejects by an external alpha-coin.
    pub degenerate: bool,
    pub draws: usize,
    pub seed: u64,
}

#[derive(Clone)]
pub struct GlobalTestOracle {
    model: Arc<dyn PosteriorModel>,
    calibration: GlobalCalibration,
}

impl std::fmt::Debug for GlobalTestOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalTestOracle")
            .field("model", &self.model.describe())
            .field("calibration", &self.calibration)
            .finish()
    }
}

/// Calibrate `c(alpha)` as the empirical alpha-quantile of `Λ(Z)`, `Z ~ N(0, sigma^2 I)`.
pub fn calibrate_global(
    theta: &ParamVector,
    ensemble: &PermutationEnsemble,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<GlobalTestOracle> {
    check_len(theta.len(), ensemble.n())?;
    let support = OrbitSupport::from_ensemble(theta, ensemble, NullSet::Zero)?;
    GlobalTestOracle::calibrate(Arc::new(support), alpha, draws, seed)
}

impl GlobalTestOracle {
    pub fn calibrate(model: Arc<dyn PosteriorModel>, alpha: f64, draws: usize, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(OracleError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if draws < MIN_CALIBRATION_DRAWS {
            return Err(OracleError::InvalidParameter(format!(
                "calibration needs at least {MIN_CALIBRATION_DRAWS} draws, got {draws}"
            )));
        }
        let n = model.n();
        let sigma = model.sigma();
        let zeros = vec![0.0; n];
        let mut stats: Vec<f64> = (0..draws as u64)
            .into_par_iter()
            .map_init(Vec::new, |z, j| {
                let mut rng = stream_rng(seed, j);
                draw_gaussian_into(&mut rng, &zeros, sigma, z);
                log_lr(model.as_ref(), z)
            })
            .collect();
        stats.sort_by(f64::total_cmp);
        let degenerate = stats[0] == stats[draws - 1];
        let k = ((alpha * draws as f64).floor() as usize).max(1);
        let spread = ((draws as f64) * alpha * (1.0 - alpha)).sqrt().ceil() as usize;
        let lo = k.saturating_sub(spread).max(1);
        let hi = (k + spread).min(draws);
        let calibration = GlobalCalibration {
            alpha,
            log_c: stats[k - 1],
            log_c_band: (stats[lo - 1], stats[hi - 1]),
            level_std_error: (alpha * (1.0 - alpha) / draws as f64).sqrt(),
            degenerate,
            draws,
            seed,
        };
        Ok(Self { model, calibration })
    }

    pub fn calibration(&self) -> &GlobalCalibration {
        &self.calibration
    }

    pub fn model(&self) -> &dyn PosteriorModel {
        self.model.as_ref()
    }

    /// Threshold `c` on the `Λ` scale.
    pub fn threshold(&self) -> f64 {
        self.calibration.log_c.exp()
    }

    /// Decision for a precomputed statistic `log Λ(z)`.
    pub fn decide_log_lr(&self, log_lr: f64) -> bool {
        log_lr <= self.calibration.log_c
    }

    /// 1 iff `Λ(z) <= c`; in the degenerate case an alpha-coin keyed on the
    /// sorted data and the calibration seed, so the decision stays
    /// invariant to relabeling.
    pub fn global_decide(&self, z: &[f64]) -> bool {
        if self.calibration.degenerate {
            return label_free_uniform(z, self.calibration.seed) < self.calibration.alpha;
        }
        self.decide_log_lr(log_lr(self.model.as_ref(), z))
    }
}

impl DecisionRule for GlobalTestOracle {
    fn name(&self) -> String {
        "oracle_global".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        DecisionAction::GlobalTest(self.global_decide(z))
    }
}

/// Uniform on [0, 1) derived from the multiset of `z` and a seed.
fn label_free_uniform(z: &[f64], seed: u64) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = sorted.iter().fold(splitmix64(seed), |h, v| splitmix64(h ^ v.to_bits()));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permutation::enumerate_exact;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lr_is_one_at_zero_theta() {
        let theta = ParamVector::unit(vec![0.0; 3]).unwrap();
        let e = enumerate_exact(3).unwrap();
        for z in [[0.3, -1.0, 2.0], [5.0, 5.0, -7.0]] {
            let z = DataVector::new(z.to_vec()).unwrap();
            assert_eq!(lr_statistic(&theta, &e, &z).unwrap(), 1.0);
        }
    }

    #[test]
    fn lr_two_point_closed_form() {
        let theta = ParamVector::unit(vec![0.0, 2.0]).unwrap();
        let z = DataVector::new(vec![0.0, 2.0]).unwrap();
        let e = enumerate_exact(2).unwrap();
        let lr = lr_statistic(&theta, &e, &z).unwrap();
        assert_abs_diff_eq!(lr, (-2f64).exp() / (0.5 * (1.0 + (-4f64).exp())), epsilon = 1e-14);
        assert_abs_diff_eq!(lr, 0.265802, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_at_zero_theta() {
        let theta = ParamVector::unit(vec![0.0; 4]).unwrap();
        let e = enumerate_exact(4).unwrap();
        let oracle = calibrate_global(&theta, &e, 0.05, 2_000, 1).unwrap();
        assert!(oracle.calibration().degenerate);
        let rate = (0..20_000)
            .filter(|&j| oracle.global_decide(&[j as f64 * 0.37, 1.0, -2.0, 0.5]))
            .count() as f64
            / 20_000.0;
        assert!((rate - 0.05).abs() < 0.01, "coin rate {rate}");
    }

    #[test]
    fn threshold_monotone_in_alpha() {
        let theta = ParamVector::unit(vec![3.0, 0.0, 0.0]).unwrap();
        let e = enumerate_exact(3).unwrap();
        let c05 = calibrate_global(&theta, &e, 0.05, 5_000, 9).unwrap().threshold();
        let c10 = calibrate_global(&theta, &e, 0.10, 5_000, 9).unwrap().threshold();
        assert!(c10 >= c05);
    }

    #[test]
    fn decision_regions() {
        let theta = ParamVector::unit(vec![3.0, 0.0, 0.0]).unwrap();
        let e = enumerate_exact(3).unwrap();
        let oracle = calibrate_global(&theta, &e, 0.05, 5_000, 9).unwrap();
        let log_c = oracle.calibration().log_c;
        assert!(oracle.decide_log_lr(log_c + 0.5f64.ln()));
        assert!(!oracle.decide_log_lr(log_c + 2f64.ln()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let theta = ParamVector::unit(vec![1.0, 0.0]).unwrap();
        let e = enumerate_exact(2).unwrap();
        assert!(calibrate_global(&theta, &e, 0.05, 999, 1).is_err());
        assert!(calibrate_global(&theta, &e, 1.0, 1_000, 1).is_err());
    }
}
