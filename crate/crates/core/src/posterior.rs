//! Per-coordinate posterior marginals of `xi = G(theta)` given `W = z` under
//! the permutation mixture: `G` uniform on an ensemble, `W | G = g ~ N(g(theta), sigma^2 I)`.
//!
//! Two routes compute the same quantities:
//! * [`summarize`] walks a [`WeightedPosterior`] member by member, counting
//!   duplicate arrangements of tied `theta` separately;
//! * [`OrbitSupport`] collapses members that produce the same arrangement
//!   `g(theta)` into one support point carrying the summed prior mass. This
//!   is the path every oracle uses, since a sparse `theta` has far fewer
//!   distinct arrangements than permutations.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, OracleError, Result};
use crate::model::{draw_gaussian_into, log_likelihood, DataVector, ParamVector, HALF_LN_2PI};
use crate::numeric::logsumexp;
use crate::permutation::{next_permutation, EnsembleMode, PermutationEnsemble, WeightedPosterior, DEFAULT_EXACT_CAP};

/// The null region `T_0` for a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NullSet {
    /// The point null `{0}`.
    #[default]
    Zero,
    /// The closed interval `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
}

impl NullSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(OracleError::InvalidParameter(format!("invalid null interval [{lo}, {hi}]")));
        }
        Ok(NullSet::Interval { lo, hi })
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            NullSet::Zero => x == 0.0,
            NullSet::Interval { lo, hi } => lo <= x && x <= hi,
        }
    }
}

/// Marginal posterior quantities for each coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// `P(xi_i ∈ T_0 | W = z)`.
    pub q_null: Vec<f64>,
    /// `P(xi_i > 0 | W = z)`.
    pub p_pos: Vec<f64>,
    /// `P(xi_i < 0 | W = z)`.
    pub p_neg: Vec<f64>,
    /// `E[xi_i | W = z]`.
    pub post_mean: Vec<f64>,
    /// `Var[xi_i | W = z]`.
    pub post_var: Vec<f64>,
    pub null_set: NullSet,
}

impl PosteriorSummary {
    pub fn len(&self) -> usize {
        self.q_null.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_null.is_empty()
    }

    /// `P(xi_i = 0 | W = z)`.
    pub fn p_zero(&self, i: usize) -> f64 {
        (1.0 - self.p_pos[i] - self.p_neg[i]).clamp(0.0, 1.0)
    }

    /// Sign-classification error probability `min(P(xi_i > 0), P(xi_i < 0))`.
    pub fn sign_q(&self, i: usize) -> f64 {
        self.p_pos[i].min(self.p_neg[i])
    }

    /// Rearrange the coordinates by `g`.
    pub fn permuted(&self, g: &crate::model::Permutation) -> Result<Self> {
        Ok(Self {
            q_null: g.apply(&self.q_null)?,
            p_pos: g.apply(&self.p_pos)?,
            p_neg: g.apply(&self.p_neg)?,
            post_mean: g.apply(&self.post_mean)?,
            post_var: g.apply(&self.post_var)?,
            null_set: self.null_set,
        })
    }
}

/// Streaming accumulator over weighted arrangements.
struct Accumulator {
    null_set: NullSet,
    total: f64,
    q: Vec<f64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
    mean: Vec<f64>,
    sq: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize, null_set: NullSet) -> Self {
        Self {
            null_set,
            total: 0.0,
            q: vec![0.0; n],
            pos: vec![0.0; n],
            neg: vec![0.0; n],
            mean: vec![0.0; n],
            sq: vec![0.0; n],
        }
    }

    #[inline]
    fn add(&mut self, w: f64, xi: impl Iterator<Item = f64>) {
        if w == 0.0 {
            return;
        }
        self.total += w;
        for (i, x) in xi.enumerate() {
            if self.null_set.contains(x) {
                self.q[i] += w;
            }
            if x > 0.0 {
                self.pos[i] += w;
            } else if x < 0.0 {
                self.neg[i] += w;
            }
            self.mean[i] += w * x;
            self.sq[i] += w * x * x;
        }
    }

    fn finish(self) -> PosteriorSummary {
        let t = self.total;
        let clamp01 = |v: f64| (v / t).clamp(0.0, 1.0);
        let post_mean: Vec<f64> = self.mean.iter().map(|m| m / t).collect();
        let post_var = self
            .sq
            .iter()
            .zip(&post_mean)
            .map(|(s, m)| (s / t - m * m).max(0.0))
            .collect();
        PosteriorSummary {
            q_null: self.q.into_iter().map(clamp01).collect(),
            p_pos: self.pos.into_iter().map(clamp01).collect(),
            p_neg: self.neg.into_iter().map(clamp01).collect(),
            post_mean,
            post_var,
            null_set: self.null_set,
        }
    }
}

/// Posterior marginals from member-level weights:
/// `q_null[i] = Σ_g w(g) 1{theta_{g(i)} ∈ T_0}` and likewise for the others.
pub fn summarize(wp: &WeightedPosterior<'_>, null_set: NullSet) -> PosteriorSummary {
    let n = wp.theta.len();
    let theta = wp.theta.values();
    let mut acc = Accumulator::new(n, null_set);
    let max = wp.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (k, lw) in wp.log_weights.iter().enumerate() {
        let idx = wp.ensemble.indices(k);
        acc.add((lw - max).exp(), idx.iter().map(|&j| theta[j as usize]));
    }
    acc.finish()
}

/// Something that can produce posterior marginals and the marginal density
/// of an observation vector.
pub trait PosteriorModel: Send + Sync {
    fn n(&self) -> usize;
    fn sigma(&self) -> f64;
    fn null_set(&self) -> NullSet;
    fn summarize(&self, z: &[f64]) -> PosteriorSummary;
    /// Log density of `W` at `z`.
    fn log_marginal(&self, z: &[f64]) -> f64;
    /// Short description for reports.
    fn describe(&self) -> String;
}

/// A joint law of `(xi, W)` from which calibration draws are taken.
pub trait JointLaw: Send + Sync {
    fn n(&self) -> usize;
    fn sample_joint(&self, rng: &mut ChaCha8Rng, xi: &mut Vec<f64>, w: &mut Vec<f64>);
}

/// The distinct arrangements `g(theta)` reachable from an ensemble, each
/// with the prior mass of the members that produce it.
#[derive(Debug, Clone)]
pub struct OrbitSupport {
    n: usize,
    sigma: f64,
    null_set: NullSet,
    mode: EnsembleMode,
    /// `points[k*n..(k+1)*n]` is arrangement `k`.
    points: Vec<f64>,
    counts: Vec<u64>,
    cumulative: Vec<u64>,
    log_prior: Vec<f64>,
    /// True when the arrangement set is closed under relabeling (exact mode).
    closed: bool,
}

impl OrbitSupport {
    /// The full orbit of `theta` under `S_n`, uniform over distinct arrangements.
    pub fn exact(theta: &ParamVector, null_set: NullSet) -> Result<Self> {
        Self::exact_with_cap(theta, null_set, DEFAULT_EXACT_CAP)
    }

    pub fn exact_with_cap(theta: &ParamVector, null_set: NullSet, cap: usize) -> Result<Self> {
        let n = theta.len();
        if n > cap {
            return Err(OracleError::Capacity { n, max: cap });
        }
        let (distinct, mut ids) = value_ids(theta.values());
        ids.sort_unstable();
        let mut points = Vec::new();
        loop {
            points.extend(ids.iter().map(|&i| distinct[i as usize]));
            if !next_permutation(&mut ids) {
                break;
            }
        }
        let k = points.len() / n;
        Ok(Self::assemble(theta, null_set, EnsembleMode::Exact, points, vec![1; k], true))
    }

    /// Collapse an arbitrary ensemble. Exact ensembles give the same support
    /// as [`OrbitSupport::exact`], since every arrangement of `theta` is hit
    /// by the same number of permutations.
    pub fn from_ensemble(theta: &ParamVector, ensemble: &PermutationEnsemble, null_set: NullSet) -> Result<Self> {
        check_len(ensemble.n(), theta.len())?;
        if ensemble.mode() == EnsembleMode::Exact {
            return Self::exact_with_cap(theta, null_set, usize::MAX);
        }
        let n = theta.len();
        let (distinct, ids) = value_ids(theta.values());
        let mut index: HashMap<Vec<u16>, usize> = HashMap::new();
        let mut arrangements: Vec<Vec<u16>> = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        for k in 0..ensemble.len() {
            let arr: Vec<u16> = ensemble.indices(k).iter().map(|&j| ids[j as usize]).collect();
            match index.get(&arr) {
                Some(&slot) => counts[slot] += 1,
                None => {
                    index.insert(arr.clone(), arrangements.len());
                    arrangements.push(arr);
                    counts.push(1);
                }
            }
        }
        let mut points = Vec::with_capacity(arrangements.len() * n);
        for arr in &arrangements {
            points.extend(arr.iter().map(|&i| distinct[i as usize]));
        }
        Ok(Self::assemble(theta, null_set, ensemble.mode(), points, counts, false))
    }

    fn assemble(
        theta: &ParamVector,
        null_set: NullSet,
        mode: EnsembleMode,
        points: Vec<f64>,
        counts: Vec<u64>,
        closed: bool,
    ) -> Self {
        let total: u64 = counts.iter().sum();
        let log_total = (total as f64).ln();
        let log_prior = counts.iter().map(|&c| (c as f64).ln() - log_total).collect();
        let cumulative = counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        Self {
            n: theta.len(),
            sigma: theta.sigma(),
            null_set,
            mode,
            points,
            counts,
            cumulative,
            log_prior,
            closed,
        }
    }

    pub fn mode(&self) -> EnsembleMode {
        self.mode
    }

    /// Number of distinct arrangements.
    pub fn support_size(&self) -> usize {
        self.counts.len()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.n..(k + 1) * self.n]
    }

    /// Unnormalized log posterior weights `log prior_k − |z − a_k|² / (2σ²)`.
    fn log_weights(&self, z: &[f64]) -> Vec<f64> {
        let inv = 0.5 / (self.sigma * self.sigma);
        self.points
            .chunks_exact(self.n)
            .zip(&self.log_prior)
            .map(|(a, lp)| {
                let ssr: f64 = a.iter().zip(z).map(|(x, y)| (y - x) * (y - x)).sum();
                lp - inv * ssr
            })
            .collect()
    }

    /// Order of coordinates used for computation. Closed supports work on
    /// ascending `z`, which makes results exactly equivariant.
    fn canonical_order(&self, z: &[f64]) -> Option<Vec<usize>> {
        if !self.closed {
            return None;
        }
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
        Some(order)
    }

    fn summarize_raw(&self, z: &[f64]) -> PosteriorSummary {
        let lw = self.log_weights(z);
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = Accumulator::new(self.n, self.null_set);
        for (a, l) in self.points.chunks_exact(self.n).zip(&lw) {
            acc.add((l - max).exp(), a.iter().copied());
        }
        acc.finish()
    }
}

impl PosteriorModel for OrbitSupport {
    fn n(&self) -> usize {
        self.n
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn null_set(&self) -> NullSet {
        self.null_set
    }

    fn summarize(&self, z: &[f64]) -> PosteriorSummary {
        match self.canonical_order(z) {
            None => self.summarize_raw(z),
            Some(order) => {
                let sorted: Vec<f64> = order.iter().map(|&i| z[i]).collect();
                let s = self.summarize_raw(&sorted);
                let mut out = PosteriorSummary {
                    q_null: vec![0.0; self.n],
                    p_pos: vec![0.0; self.n],
                    p_neg: vec![0.0; self.n],
                    post_mean: vec![0.0; self.n],
                    post_var: vec![0.0; self.n],
                    null_set: self.null_set,
                };
                for (pos, &i) in order.iter().enumerate() {
                    out.q_null[i] = s.q_null[pos];
                    out.p_pos[i] = s.p_pos[pos];
                    out.p_neg[i] = s.p_neg[pos];
                    out.post_mean[i] = s.post_mean[pos];
                    out.post_var[i] = s.post_var[pos];
                }
                out
            }
        }
    }

    fn log_marginal(&self, z: &[f64]) -> f64 {
        if self.support_size() == 1 {
            // degenerate mixture: a single arrangement with prior mass one
            let theta = ParamVector::new(self.point(0).to_vec(), self.sigma).expect("valid support point");
            let data = DataVector::new(z.to_vec()).expect("finite data");
            return log_likelihood(&theta, &data).expect("lengths agree");
        }
        let lw = match self.canonical_order(z) {
            None => self.log_weights(z),
            Some(order) => {
                let sorted: Vec<f64> = order.iter().map(|&i| z[i]).collect();
                self.log_weights(&sorted)
            }
        };
        logsumexp(&lw) - self.n as f64 * (HALF_LN_2PI + self.sigma.ln())
    }

    fn describe(&self) -> String {
        format!("permutation mixture, {} ({} arrangements)", self.mode.label(), self.support_size())
    }
}

impl JointLaw for OrbitSupport {
    fn n(&self) -> usize {
        self.n
    }

    fn sample_joint(&self, rng: &mut ChaCha8Rng, xi: &mut Vec<f64>, w: &mut Vec<f64>) {
        let total = *self.cumulative.last().expect("non-empty support");
        let u = rng.random_range(0..total);
        let k = self.cumulative.partition_point(|&c| c <= u);
        xi.clear();
        xi.extend_from_slice(self.point(k));
        draw_gaussian_into(rng, xi, self.sigma, w);
    }
}

/// The full permutation mixture sampled by uniform relabeling, without
/// enumerating `S_n`: `xi` is a random shuffle of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabelingLaw {
    theta: Vec<f64>,
    sigma: f64,
}

impl RelabelingLaw {
    pub fn new(theta: &ParamVector) -> Self {
        Self { theta: theta.values().to_vec(), sigma: theta.sigma() }
    }
}

impl JointLaw for RelabelingLaw {
    fn n(&self) -> usize {
        self.theta.len()
    }

    fn sample_joint(&self, rng: &mut ChaCha8Rng, xi: &mut Vec<f64>, w: &mut Vec<f64>) {
        xi.clear();
        xi.extend_from_slice(&self.theta);
        xi.shuffle(rng);
        draw_gaussian_into(rng, xi, self.sigma, w);
    }
}

/// Map values to ids of their rank among distinct values.
fn value_ids(values: &[f64]) -> (Vec<f64>, Vec<u16>) {
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let ids = values
        .iter()
        .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).expect("present") as u16)
        .collect();
    (distinct, ids)
}

/// `log[(1/m) Σ_g exp(log_likelihood(g(theta), z))]` over the ensemble.
pub fn marginal_log_density(theta: &ParamVector, ensemble: &PermutationEnsemble, z: &DataVector) -> Result<f64> {
    check_len(theta.len(), z.len())?;
    let support = OrbitSupport::from_ensemble(theta, ensemble, NullSet::Zero)?;
    Ok(support.log_marginal(z.values()))
}
