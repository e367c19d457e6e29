//! The uniform "prior" over permutations: either all of `S_n`, enumerated
//! lexicographically, or `m` uniform draws with replacement. Given `theta`
//! and data `z`, each member `g` receives posterior weight proportional to
//! the likelihood of `z` under mean `g(theta)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OracleError, Result};
use crate::model::{log_likelihood, DataVector, ParamVector, Permutation};
use crate::numeric::logsumexp;

/// Default cap on `n` for exact enumeration (`10! = 3_628_800`).
pub const DEFAULT_EXACT_CAP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EnsembleMode {
    Exact,
    Sampled { m: usize, seed: u64 },
}

impl EnsembleMode {
    pub fn label(&self) -> String {
        match self {
            EnsembleMode::Exact => "exact".to_string(),
            EnsembleMode::Sampled { m, .. } => format!("sampled({m})"),
        }
    }
}

/// A list of permutations of `{0, …, n-1}` stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationEnsemble {
    mode: EnsembleMode,
    n: usize,
    flat: Vec<u16>,
}

impl PermutationEnsemble {
    pub fn mode(&self) -> EnsembleMode {
        self.mode
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of members `m`.
    pub fn len(&self) -> usize {
        self.flat.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn indices(&self, k: usize) -> &[u16] {
        &self.flat[k * self.n..(k + 1) * self.n]
    }

    pub fn member(&self, k: usize) -> Permutation {
        Permutation::from_raw_unchecked(self.indices(k).iter().map(|&i| i as usize).collect())
    }

    pub fn members(&self) -> impl Iterator<Item = Permutation> + '_ {
        (0..self.len()).map(move |k| self.member(k))
    }

    /// Build an ensemble from explicit members.
    pub fn from_members(members: &[Permutation], mode: EnsembleMode) -> Result<Self> {
        let n = members
            .first()
            .map(Permutation::len)
            .ok_or_else(|| OracleError::InvalidParameter("ensemble needs at least one member".into()))?;
        let mut flat = Vec::with_capacity(n * members.len());
        for g in members {
            check_len(n, g.len())?;
            flat.extend(g.as_slice().iter().map(|&i| i as u16));
        }
        Ok(Self { mode, n, flat })
    }
}

/// All `n!` permutations in lexicographic order, subject to the default cap.
pub fn enumerate_exact(n: usize) -> Result<PermutationEnsemble> {
    enumerate_exact_with_cap(n, DEFAULT_EXACT_CAP)
}

pub fn enumerate_exact_with_cap(n: usize, cap: usize) -> Result<PermutationEnsemble> {
    if n == 0 {
        return Err(OracleError::InvalidParameter("n must be >= 1".into()));
    }
    if n > cap {
        return Err(OracleError::Capacity { n, max: cap });
    }
    let total: usize = (1..=n).product();
    let mut flat = Vec::with_capacity(total * n);
    let mut cur: Vec<u16> = (0..n as u16).collect();
    loop {
        flat.extend_from_slice(&cur);
        if !next_permutation(&mut cur) {
            break;
        }
    }
    debug_assert_eq!(flat.len(), total * n);
    Ok(PermutationEnsemble { mode: EnsembleMode::Exact, n, flat })
}

/// Advance to the next lexicographic arrangement; false when `v` was the last.
pub(crate) fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// `m` independent uniform draws from `S_n` (with replacement), each a
/// Fisher–Yates shuffle driven by a ChaCha stream seeded from `seed`.
pub fn sample_ensemble(n: usize, m: usize, seed: u64) -> Result<PermutationEnsemble> {
    if n == 0 || m == 0 {
        return Err(OracleError::InvalidParameter("sampled ensemble needs n >= 1 and m >= 1".into()));
    }
    if n > u16::MAX as usize {
        return Err(OracleError::InvalidParameter(format!("n = {n} too large for a sampled ensemble")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(n * m);
    let mut cur: Vec<u16> = (0..n as u16).collect();
    for _ in 0..m {
        cur.shuffle(&mut rng);
        flat.extend_from_slice(&cur);
    }
    Ok(PermutationEnsemble { mode: EnsembleMode::Sampled { m, seed }, n, flat })
}

/// Posterior over the members of an ensemble given data.
#[derive(Debug, Clone)]
pub struct WeightedPosterior<'a> {
    pub ensemble: &'a PermutationEnsemble,
    /// Normalized so that `logsumexp(log_weights) = 0`.
    pub log_weights: Vec<f64>,
    pub data: DataVector,
    pub theta: ParamVector,
}

impl WeightedPosterior<'_> {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }
}

/// `log_weights[g] = log_likelihood(g(theta), z) − logsumexp_g(...)`. The
/// uniform prior over members cancels in the normalization.
pub fn posterior_weights<'a>(
    ensemble: &'a PermutationEnsemble,
    theta: &ParamVector,
    z: &DataVector,
) -> Result<WeightedPosterior<'a>> {
    check_len(ensemble.n(), theta.len())?;
    check_len(ensemble.n(), z.len())?;
    let raw: Vec<f64> = (0..ensemble.len())
        .into_par_iter()
        .map(|k| {
            let g = ensemble.member(k);
            let shifted = theta.permuted(&g).expect("lengths checked");
            log_likelihood(&shifted, z).expect("lengths checked")
        })
        .collect();
    let lse = logsumexp(&raw);
    Ok(WeightedPosterior {
        ensemble,
        log_weights: raw.into_iter().map(|l| l - lse).collect(),
        data: z.clone(),
        theta: theta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn exact_sizes() {
        assert_eq!(enumerate_exact(1).unwrap().len(), 1);
        assert!(enumerate_exact(1).unwrap().member(0).is_identity());
        let e3 = enumerate_exact(3).unwrap();
        assert_eq!(e3.len(), 6);
        let set: HashSet<Permutation> = e3.members().collect();
        assert_eq!(set.len(), 6);
        assert_eq!(enumerate_exact(8).unwrap().len(), 40320);
    }

    #[test]
    fn exact_is_lexicographic() {
        let e = enumerate_exact(4).unwrap();
        for k in 1..e.len() {
            assert!(e.indices(k - 1) < e.indices(k));
        }
    }

    #[test]
    fn exact_cap() {
        assert_eq!(enumerate_exact(11).unwrap_err(), OracleError::Capacity { n: 11, max: 10 });
        assert!(enumerate_exact_with_cap(5, 4).is_err());
        assert!(enumerate_exact(0).is_err());
    }

    #[test]
    fn sampled_determinism_and_validity() {
        let a = sample_ensemble(6, 50, 9).unwrap();
        let b = sample_ensemble(6, 50, 9).unwrap();
        assert_eq!(a, b);
        let one = sample_ensemble(5, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert!(Permutation::new(one.member(0).as_slice().to_vec()).is_ok());
        assert!(sample_ensemble(3, 0, 1).is_err());
    }

    #[test]
    fn sampled_identity_frequency_n2() {
        let e = sample_ensemble(2, 10_000, 42).unwrap();
        let ident = e.members().filter(Permutation::is_identity).count() as f64 / 10_000.0;
        assert!((ident - 0.5).abs() < 0.02, "identity frequency {ident}");
    }

    #[test]
    fn tied_theta_gives_uniform_weights() {
        let e = enumerate_exact(4).unwrap();
        let theta = ParamVector::unit(vec![1.3; 4]).unwrap();
        let z = DataVector::new(vec![0.1, -2.0, 3.0, 0.4]).unwrap();
        let wp = posterior_weights(&e, &theta, &z).unwrap();
        for w in wp.weights() {
            assert!((w - 1.0 / 24.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_point_weights() {
        let e = enumerate_exact(2).unwrap();
        let theta = ParamVector::unit(vec![0.0, 2.0]).unwrap();
        let z = DataVector::new(vec![0.0, 2.0]).unwrap();
        let w = posterior_weights(&e, &theta, &z).unwrap().weights();
        // members in lexicographic order: identity, swap
        assert!((w[0] - 0.982014).abs() < 1e-6);
        assert!((w[1] - 0.017986).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        let e = enumerate_exact(3).unwrap();
        let theta = ParamVector::unit(vec![0.0, 1.0]).unwrap();
        let z = DataVector::new(vec![0.0, 1.0]).unwrap();
        assert!(posterior_weights(&e, &theta, &z).is_err());
    }
}
