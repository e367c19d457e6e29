//! Competitor rules: Benjamini–Hochberg, the chi-square global test, the
//! identity and James–Stein estimators and a thresholded sign rule. All are
//! relabeling-equivariant.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{OracleError, Result};
use crate::losses::{DecisionAction, SignLabel};
use crate::model::label_free_sum;
use crate::oracles::Problem;
use crate::rule::DecisionRule;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(OracleError::InvalidParameter(format!("sigma must be positive, got {sigma}")))
    }
}

/// Two-sided normal p-value `2 (1 − Φ(|z| / sigma))`.
pub fn two_sided_p(z: f64, sigma: f64) -> f64 {
    erfc(z.abs() / (sigma * std::f64::consts::SQRT_2))
}

/// Step-up rejections for p-values at level alpha.
pub fn bh_reject(p: &[f64], alpha: f64) -> Vec<bool> {
    let n = p.len();
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=n).rev().find(|&k| sorted[k - 1] <= alpha * k as f64 / n as f64).map(|k| sorted[k - 1]);
    match cutoff {
        Some(c) => p.iter().map(|&pi| pi <= c).collect(),
        None => vec![false; n],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenjaminiHochberg {
    alpha: f64,
    sigma: f64,
}

impl BenjaminiHochberg {
    pub fn new(alpha: f64, sigma: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_sigma(sigma)?;
        Ok(Self { alpha, sigma })
    }
}

impl DecisionRule for BenjaminiHochberg {
    fn name(&self) -> String {
        "bh".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        let p: Vec<f64> = z.iter().map(|&x| two_sided_p(x, self.sigma)).collect();
        DecisionAction::MultiTest(bh_reject(&p, self.alpha))
    }
}

/// Reject `theta = 0` when `Σ z_i^2 / sigma^2` exceeds the chi-square `1 − alpha` quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    critical: f64,
    sigma: f64,
}

impl ChiSquareTest {
    pub fn new(n: usize, alpha: f64, sigma: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_sigma(sigma)?;
        let dist = ChiSquared::new(n as f64).map_err(|e| OracleError::InvalidParameter(e.to_string()))?;
        Ok(Self { critical: dist.inverse_cdf(1.0 - alpha), sigma })
    }

    pub fn critical_value(&self) -> f64 {
        self.critical
    }
}

impl DecisionRule for ChiSquareTest {
    fn name(&self) -> String {
        "chi_square".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        let stat = label_free_sum(z.iter().map(|x| (x / self.sigma).powi(2)).collect());
        DecisionAction::GlobalTest(stat > self.critical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityEstimator;

impl DecisionRule for IdentityEstimator {
    fn name(&self) -> String {
        "identity".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        DecisionAction::Estimate(z.to_vec())
    }
}

/// `(1 − (n − 2) sigma^2 / |z|^2) z`, shrinking toward the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JamesStein {
    n: usize,
    sigma: f64,
}

impl JamesStein {
    pub fn new(n: usize, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if n < 3 {
            return Err(OracleError::Domain(format!("James-Stein needs n >= 3, got n = {n}")));
        }
        Ok(Self { n, sigma })
    }
}

impl DecisionRule for JamesStein {
    fn name(&self) -> String {
        "james_stein".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        let norm2 = label_free_sum(z.iter().map(|x| x * x).collect());
        let factor = if norm2 > 0.0 { 1.0 - (self.n as f64 - 2.0) * self.sigma * self.sigma / norm2 } else { 0.0 };
        DecisionAction::Estimate(z.iter().map(|x| factor * x).collect())
    }
}

/// Label `sign(z_i)` when `|z_i| > threshold`, otherwise abstain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveSign {
    threshold: f64,
}

impl NaiveSign {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(OracleError::InvalidParameter(format!("threshold must be >= 0, got {threshold}")));
        }
        Ok(Self { threshold })
    }
}

impl DecisionRule for NaiveSign {
    fn name(&self) -> String {
        "naive_sign".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        DecisionAction::SignClassify(
            z.iter()
                .map(|&x| match x {
                    x if x > self.threshold => SignLabel::Plus,
                    x if x < -self.threshold => SignLabel::Minus,
                    _ => SignLabel::NotAssigned,
                })
                .collect(),
        )
    }
}

/// The competitors applicable to `problem` at dimension `n`. The sign rule
/// calls `|z_i|` beyond the two-sided normal `alpha` quantile.
pub fn baseline_rules(problem: Problem, n: usize, alpha: f64, sigma: f64) -> Result<Vec<Box<dyn DecisionRule>>> {
    Ok(match problem {
        Problem::Global => vec![Box::new(ChiSquareTest::new(n, alpha, sigma)?)],
        Problem::Fdr => vec![Box::new(BenjaminiHochberg::new(alpha, sigma)?)],
        Problem::Sign => {
            check_alpha(alpha)?;
            let normal = statrs::distribution::Normal::new(0.0, sigma)
                .map_err(|e| OracleError::InvalidParameter(e.to_string()))?;
            vec![Box::new(NaiveSign::new(normal.inverse_cdf(1.0 - alpha / 2.0))?)]
        }
        Problem::Estimate(_) => {
            let mut rules: Vec<Box<dyn DecisionRule>> = vec![Box::new(IdentityEstimator)];
            if n >= 3 {
                rules.push(Box::new(JamesStein::new(n, sigma)?));
            }
            rules
        }
    })
}
