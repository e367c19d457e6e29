//! The exchangeable Gaussian sequence model `Z_i ~ N(theta_i, sigma^2)`,
//! independent across coordinates, together with permutations acting on
//! coordinate labels.
//!
//! A permutation `g` is stored as a 0-based index array and acts on a vector
//! by `g(u)[i] = u[g[i]]`. Composition follows `(g ∘ h)(u) = g(h(u))`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OracleError, Result};

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// The nonrandom parameter vector together with the common noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    sigma: f64,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, sigma: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(OracleError::InvalidParameter("theta must have n >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidParameter("theta entries must be finite".into()));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(OracleError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { values, sigma })
    }

    /// Unit noise scale.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `g(theta)`, keeping the noise scale.
    pub fn permuted(&self, g: &Permutation) -> Result<Self> {
        Ok(Self { values: apply_permutation(g, &self.values)?, sigma: self.sigma })
    }

    /// True when every entry is equal.
    pub fn is_fully_tied(&self) -> bool {
        self.values.iter().all(|v| *v == self.values[0])
    }
}

/// A realization of `Z` (or of the mixed observation `W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataVector {
    values: Vec<f64>,
}

impl DataVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(OracleError::InvalidParameter("data must have n >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::InvalidParameter("data entries must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn permuted(&self, g: &Permutation) -> Result<Self> {
        Ok(Self { values: apply_permutation(g, &self.values)? })
    }
}

/// A bijection on `{0, …, n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        if n == 0 {
            return Err(OracleError::InvalidParameter("empty permutation".into()));
        }
        let mut seen = vec![false; n];
        for &i in &map {
            if i >= n || seen[i] {
                return Err(OracleError::InvalidParameter(format!(
                    "{map:?} is not a bijection on 0..{n}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { map })
    }

    /// Build from 1-based indices, as written by hand.
    pub fn from_one_based(map: &[usize]) -> Result<Self> {
        if map.contains(&0) {
            return Err(OracleError::InvalidParameter("1-based permutation contains 0".into()));
        }
        Self::new(map.iter().map(|i| i - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub(crate) fn from_raw_unchecked(map: Vec<usize>) -> Self {
        debug_assert!(Self::new(map.clone()).is_ok());
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `self ∘ other`, i.e. the permutation whose action is `self(other(u))`.
    pub fn compose(&self, other: &Permutation) -> Result<Permutation> {
        check_len(self.len(), other.len())?;
        Ok(Self { map: self.map.iter().map(|&i| other.map[i]).collect() })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Self { map: inv }
    }

    /// Apply to any slice: `out[i] = u[g[i]]`.
    pub fn apply<T: Clone>(&self, u: &[T]) -> Result<Vec<T>> {
        check_len(self.len(), u.len())?;
        Ok(self.map.iter().map(|&i| u[i].clone()).collect())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = OracleError;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(g: Permutation) -> Self {
        g.map
    }
}

/// `g(u) = (u_{g(1)}, …, u_{g(n)})`.
pub fn apply_permutation(g: &Permutation, u: &[f64]) -> Result<Vec<f64>> {
    g.apply(u)
}

/// Sum of the terms in ascending order, so the result depends only on the
/// multiset of terms and not on their labels.
pub fn label_free_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// `Σ_i log φ((z_i − θ_i)/σ) − n log σ`.
pub fn log_likelihood(theta: &ParamVector, z: &DataVector) -> Result<f64> {
    check_len(theta.len(), z.len())?;
    let sigma = theta.sigma();
    let terms = theta
        .values()
        .iter()
        .zip(z.values())
        .map(|(t, x)| {
            let r = (x - t) / sigma;
            -0.5 * r * r
        })
        .collect();
    let n = theta.len() as f64;
    Ok(label_free_sum(terms) - n * (HALF_LN_2PI + sigma.ln()))
}

/// Normal log density of a whole vector at mean zero, `log φ_σ(z)`.
pub fn null_log_density(z: &[f64], sigma: f64) -> f64 {
    let terms = z
        .iter()
        .map(|x| {
            let r = x / sigma;
            -0.5 * r * r
        })
        .collect();
    label_free_sum(terms) - z.len() as f64 * (HALF_LN_2PI + sigma.ln())
}

/// Deterministic RNG for stream `stream` under master seed `seed`.
///
/// Monte Carlo draw `j` always uses stream `j`, so results do not depend on
/// how draws are scheduled across threads.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fill `out` with `theta_i + sigma * eps_i`.
pub(crate) fn draw_gaussian_into<R: rand::Rng + ?Sized>(
    rng: &mut R,
    mean: &[f64],
    sigma: f64,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.extend(mean.iter().map(|m| {
        let e: f64 = StandardNormal.sample(rng);
        m + sigma * e
    }));
}

/// `count` independent draws of `Z ~ N(theta, sigma^2 I)`, reproducible from `seed`.
pub fn sample_data(theta: &ParamVector, seed: u64, count: usize) -> Result<Vec<DataVector>> {
    if count == 0 {
        return Err(OracleError::InvalidParameter("count must be >= 1".into()));
    }
    Ok((0..count as u64)
        .map(|j| {
            let mut rng = stream_rng(seed, j);
            let mut v = Vec::with_capacity(theta.len());
            draw_gaussian_into(&mut rng, theta.values(), theta.sigma(), &mut v);
            DataVector { values: v }
        })
        .collect())
}

/// `ln(2π)`, exposed for closed-form checks.
pub fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(v: &[usize]) -> Permutation {
        Permutation::from_one_based(v).unwrap()
    }

    #[test]
    fn apply_examples() {
        let u = [1.5, -2.0];
        assert_eq!(apply_permutation(&Permutation::identity(2), &u).unwrap(), vec![1.5, -2.0]);
        assert_eq!(apply_permutation(&p(&[2, 1]), &u).unwrap(), vec![-2.0, 1.5]);
        let abc = ["a", "b", "c"];
        assert_eq!(p(&[3, 1, 2]).apply(&abc).unwrap(), vec!["c", "a", "b"]);
    }

    #[test]
    fn apply_length_mismatch() {
        let err = apply_permutation(&Permutation::identity(3), &[1.0]).unwrap_err();
        assert_eq!(err, OracleError::Dimension { expected: 3, found: 1 });
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        assert!(Permutation::new(vec![]).is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let g = p(&[3, 1, 4, 2]);
        assert!(g.compose(&g.inverse()).unwrap().is_identity());
        assert!(g.inverse().compose(&g).unwrap().is_identity());
    }

    #[test]
    fn log_likelihood_examples() {
        let ll = |t: &[f64], z: &[f64]| {
            log_likelihood(
                &ParamVector::unit(t.to_vec()).unwrap(),
                &DataVector::new(z.to_vec()).unwrap(),
            )
            .unwrap()
        };
        assert_abs_diff_eq!(ll(&[0.0], &[0.0]), -0.918939, epsilon = 1e-6);
        assert_abs_diff_eq!(ll(&[0.0, 0.0], &[1.0, -1.0]), -2.837877, epsilon = 1e-6);
        assert_abs_diff_eq!(ll(&[0.0, 2.0], &[0.0, 2.0]), -1.837877, epsilon = 1e-6);
    }

    #[test]
    fn log_likelihood_scales_with_sigma() {
        let theta = ParamVector::new(vec![1.0], 2.0).unwrap();
        let z = DataVector::new(vec![3.0]).unwrap();
        // N(1, 4) density at 3: r = 1
        let expected = -0.5 - HALF_LN_2PI - 2f64.ln();
        assert_abs_diff_eq!(log_likelihood(&theta, &z).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn invalid_params() {
        assert!(ParamVector::new(vec![], 1.0).is_err());
        assert!(ParamVector::new(vec![f64::NAN], 1.0).is_err());
        assert!(ParamVector::new(vec![0.0], 0.0).is_err());
        assert!(DataVector::new(vec![f64::INFINITY]).is_err());
        let theta = ParamVector::unit(vec![0.0]).unwrap();
        assert!(sample_data(&theta, 1, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let theta = ParamVector::unit(vec![0.0, 1.0, -2.0]).unwrap();
        assert_eq!(sample_data(&theta, 11, 50).unwrap(), sample_data(&theta, 11, 50).unwrap());
        assert_ne!(sample_data(&theta, 11, 5).unwrap(), sample_data(&theta, 12, 5).unwrap());
    }

    #[test]
    fn sampling_moments() {
        let count = 100_000;
        let theta = ParamVector::unit(vec![0.0; 3]).unwrap();
        let draws = sample_data(&theta, 3, count).unwrap();
        for i in 0..3 {
            let mean = draws.iter().map(|d| d.values()[i]).sum::<f64>() / count as f64;
            assert!(mean.abs() < 4.0 / (count as f64).sqrt(), "coordinate {i} mean {mean}");
        }

        let theta = ParamVector::unit(vec![3.0]).unwrap();
        let draws = sample_data(&theta, 4, count).unwrap();
        let xs: Vec<f64> = draws.iter().map(|d| d.values()[0]).collect();
        let mean = xs.iter().sum::<f64>() / count as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }
}
