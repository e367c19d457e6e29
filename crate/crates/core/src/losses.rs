//! Loss and constraint functionals for the four problems: global testing,
//! FDR-type multiple testing, directional sign classification and
//! estimation of data-selected coordinates.
//!
//! Every ratio uses the convention `0/0 = 0`. Vector arguments must have the
//! same length; mismatches are programming errors and panic.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{label_free_sum, Permutation};
use crate::posterior::NullSet;

/// A sign call: `+` claims `theta_i >= 0`, `-` claims `theta_i <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignLabel {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "NA")]
    NotAssigned,
}

/// The action returned by a decision rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum DecisionAction {
    GlobalTest(bool),
    MultiTest(Vec<bool>),
    SignClassify(Vec<SignLabel>),
    Estimate(Vec<f64>),
}

impl DecisionAction {
    /// The induced action permutation: rearranges vector actions by `g` and
    /// leaves the global bit alone.
    pub fn permuted(&self, g: &Permutation) -> Result<Self> {
        Ok(match self {
            DecisionAction::GlobalTest(b) => DecisionAction::GlobalTest(*b),
            DecisionAction::MultiTest(v) => DecisionAction::MultiTest(g.apply(v)?),
            DecisionAction::SignClassify(v) => DecisionAction::SignClassify(g.apply(v)?),
            DecisionAction::Estimate(v) => DecisionAction::Estimate(g.apply(v)?),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DecisionAction::GlobalTest(_) => "global_test",
            DecisionAction::MultiTest(_) => "multi_test",
            DecisionAction::SignClassify(_) => "sign_classify",
            DecisionAction::Estimate(_) => "estimate",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n10: usize,
    pub n11: usize,
    pub n00: usize,
    pub n01: usize,
}

impl ConfusionCounts {
    pub fn tally(truth: &[f64], reject: &[bool], null_set: NullSet) -> Self {
        assert_eq!(truth.len(), reject.len(), "truth and action lengths differ");
        let mut c = Self::default();
        for (&t, &r) in truth.iter().zip(reject) {
            match (r, null_set.contains(t)) {
                (true, true) => c.n10 += 1,
                (true, false) => c.n11 += 1,
                (false, true) => c.n00 += 1,
                (false, false) => c.n01 += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.n10 + self.n11 + self.n00 + self.n01
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignCounts {
    /// `+` called on a negative parameter.
    pub n_plus_minus: usize,
    /// `-` called on a positive parameter.
    pub n_minus_plus: usize,
    pub n_na_plus: usize,
    pub n_na_minus: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub n_na: usize,
}

impl SignCounts {
    pub fn tally(truth: &[f64], labels: &[SignLabel]) -> Self {
        assert_eq!(truth.len(), labels.len(), "truth and action lengths differ");
        let mut c = Self::default();
        for (&t, &l) in truth.iter().zip(labels) {
            match l {
                SignLabel::Plus => {
                    c.n_plus += 1;
                    if t < 0.0 {
                        c.n_plus_minus += 1;
                    }
                }
                SignLabel::Minus => {
                    c.n_minus += 1;
                    if t > 0.0 {
                        c.n_minus_plus += 1;
                    }
                }
                SignLabel::NotAssigned => {
                    c.n_na += 1;
                    if t > 0.0 {
                        c.n_na_plus += 1;
                    } else if t < 0.0 {
                        c.n_na_minus += 1;
                    }
                }
            }
        }
        c
    }
}

#[inline]
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `N10 / (N10 + N11)`.
pub fn fdp(truth: &[f64], reject: &[bool], null_set: NullSet) -> f64 {
    let c = ConfusionCounts::tally(truth, reject, null_set);
    ratio(c.n10, c.n10 + c.n11)
}

/// `N01 / (N00 + N01)`.
pub fn fnp(truth: &[f64], reject: &[bool], null_set: NullSet) -> f64 {
    let c = ConfusionCounts::tally(truth, reject, null_set);
    ratio(c.n01, c.n00 + c.n01)
}

/// `(N+- + N-+) / (N+ + N-)`.
pub fn dir_fdp(truth: &[f64], labels: &[SignLabel]) -> f64 {
    let c = SignCounts::tally(truth, labels);
    ratio(c.n_plus_minus + c.n_minus_plus, c.n_plus + c.n_minus)
}

/// `(N_NA,+ + N_NA,-) / N_NA`.
pub fn dir_fnp(truth: &[f64], labels: &[SignLabel]) -> f64 {
    let c = SignCounts::tally(truth, labels);
    ratio(c.n_na_plus + c.n_na_minus, c.n_na)
}

/// Type II indicator: one when the global null is false and was not rejected.
pub fn global_loss(truth: &[f64], reject: bool, null_set: NullSet) -> f64 {
    let null_true = truth.iter().all(|&t| null_set.contains(t));
    if !null_true && !reject {
        1.0
    } else {
        0.0
    }
}

/// Outcome of applying a selection rule to data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub mask: Vec<bool>,
    /// Set when tied observations straddled the cut and were all left out.
    pub degenerate: bool,
}

impl Selection {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&s| s).count()
    }
}

/// A data-dependent choice of coordinates to estimate. Implementations must
/// be relabeling-equivariant: `s(g(z)) = g(s(z))`.
pub trait Selector: Send + Sync {
    fn select(&self, z: &[f64]) -> Selection;
}

/// Built-in selection rules. Serialized as `all`, `argmax` or `topk:K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionRule {
    All,
    ArgMax,
    /// The `k` largest observations.
    TopK(usize),
}

impl SelectionRule {
    pub fn label(&self) -> String {
        match self {
            SelectionRule::All => "all".into(),
            SelectionRule::ArgMax => "argmax".into(),
            SelectionRule::TopK(k) => format!("topk:{k}"),
        }
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "all" => Ok(SelectionRule::All),
            "argmax" => Ok(SelectionRule::ArgMax),
            _ => s
                .strip_prefix("topk:")
                .and_then(|k| k.parse().ok())
                .map(SelectionRule::TopK)
                .ok_or_else(|| format!("unknown selection '{s}' (expected all, argmax or topk:K)")),
        }
    }
}

impl TryFrom<String> for SelectionRule {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SelectionRule> for String {
    fn from(s: SelectionRule) -> Self {
        s.label()
    }
}

fn top_k(z: &[f64], k: usize) -> Selection {
    let n = z.len();
    if k >= n {
        return Selection { mask: vec![true; n], degenerate: false };
    }
    if k == 0 {
        return Selection { mask: vec![false; n], degenerate: false };
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cut = sorted[k - 1];
    let above = z.iter().filter(|&&v| v > cut).count();
    let at = z.iter().filter(|&&v| v == cut).count();
    if above + at <= k {
        Selection { mask: z.iter().map(|&v| v >= cut).collect(), degenerate: false }
    } else {
        Selection { mask: z.iter().map(|&v| v > cut).collect(), degenerate: true }
    }
}

impl Selector for SelectionRule {
    fn select(&self, z: &[f64]) -> Selection {
        match *self {
            SelectionRule::All => Selection { mask: vec![true; z.len()], degenerate: false },
            SelectionRule::ArgMax => top_k(z, 1),
            SelectionRule::TopK(k) => top_k(z, k),
        }
    }
}

/// `Σ_i s_i(z) (a_i − theta_i)^2`.
pub fn selective_sq_loss(z: &[f64], truth: &[f64], estimate: &[f64], s: &dyn Selector) -> f64 {
    assert_eq!(truth.len(), estimate.len(), "truth and action lengths differ");
    assert_eq!(truth.len(), z.len(), "truth and data lengths differ");
    let sel = s.select(z);
    let terms = sel
        .mask
        .iter()
        .zip(truth.iter().zip(estimate))
        .filter(|(s, _)| **s)
        .map(|(_, (t, a))| (a - t) * (a - t))
        .collect();
    label_free_sum(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SignLabel::{Minus as M, NotAssigned as NA, Plus as P};

    const Z: NullSet = NullSet::Zero;

    #[test]
    fn fdp_examples() {
        assert_eq!(fdp(&[0.0, 1.0, 2.0], &[false; 3], Z), 0.0);
        assert_eq!(fdp(&[0.0, 0.0, 3.0], &[true, false, true], Z), 0.5);
        assert_eq!(fdp(&[0.0; 3], &[true; 3], Z), 1.0);
    }

    #[test]
    fn fnp_examples() {
        assert_eq!(fnp(&[0.0, 3.0, 1.0], &[true; 3], Z), 0.0);
        assert_eq!(fnp(&[0.0, 3.0], &[false, false], Z), 0.5);
        assert_eq!(fnp(&[0.0, 0.0], &[false, false], Z), 0.0);
    }

    #[test]
    fn directional_examples() {
        assert_eq!(dir_fdp(&[-1.0, 2.0], &[P, P]), 0.5);
        assert_eq!(dir_fdp(&[-1.0, 2.0, 0.0], &[NA, NA, NA]), 0.0);
        assert!((dir_fnp(&[-1.0, 2.0, 0.0], &[NA, NA, NA]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dir_fdp(&[1.0, 1.0], &[P, P]), 0.0);
        assert_eq!(dir_fnp(&[1.0, 1.0], &[P, P]), 0.0);
        // weak classification: zero parameters are never sign errors
        assert_eq!(dir_fdp(&[0.0, 0.0], &[P, M]), 0.0);
    }

    #[test]
    fn global_examples() {
        assert_eq!(global_loss(&[0.0, 0.0], false, Z), 0.0);
        assert_eq!(global_loss(&[0.0, 1.0], false, Z), 1.0);
        assert_eq!(global_loss(&[0.0, 1.0], true, Z), 0.0);
    }

    #[test]
    fn counts_reconcile() {
        let c = ConfusionCounts::tally(&[0.0, 1.0, 0.0, 2.0, 0.0], &[true, true, false, false, false], Z);
        assert_eq!(c.total(), 5);
        assert_eq!((c.n10, c.n11, c.n00, c.n01), (1, 1, 2, 1));
        let s = SignCounts::tally(&[1.0, -1.0, 0.0, 2.0], &[M, P, NA, NA]);
        assert_eq!(s.n_plus + s.n_minus + s.n_na, 4);
        assert_eq!((s.n_minus_plus, s.n_plus_minus, s.n_na_plus), (1, 1, 1));
    }

    #[test]
    fn selective_loss_examples() {
        let l = selective_sq_loss(&[0.0, 5.0], &[0.0, 3.0], &[99.0, 4.0], &SelectionRule::ArgMax);
        assert_eq!(l, 1.0);
        assert_eq!(selective_sq_loss(&[1.0, 2.0], &[0.5, 0.7], &[0.5, 0.7], &SelectionRule::All), 0.0);
        assert_eq!(selective_sq_loss(&[1.0, 2.0], &[0.5, 0.7], &[3.0, 3.0], &SelectionRule::TopK(0)), 0.0);
    }

    #[test]
    fn selective_loss_topk_by_hand() {
        let z = [0.3, 2.1, -1.0, 1.7];
        let theta = [0.0, 2.0, -1.5, 0.5];
        let a = [1.0, 1.5, 0.0, 1.0];
        // top two observations are coordinates 2 and 4 (1-based)
        let by_hand = (1.5f64 - 2.0).powi(2) + (1.0f64 - 0.5).powi(2);
        assert!((selective_sq_loss(&z, &theta, &a, &SelectionRule::TopK(2)) - by_hand).abs() < 1e-15);
    }

    #[test]
    fn topk_ties_are_flagged() {
        let s = SelectionRule::TopK(2).select(&[1.0, 3.0, 1.0, 0.0]);
        assert!(s.degenerate);
        assert_eq!(s.mask, vec![false, true, false, false]);
        let s = SelectionRule::TopK(3).select(&[1.0, 3.0, 1.0, 0.0]);
        assert!(!s.degenerate);
        assert_eq!(s.mask, vec![true, true, true, false]);
        assert_eq!(SelectionRule::ArgMax.select(&[2.0, 2.0]).count(), 0);
    }

    #[test]
    fn parse_selection() {
        assert_eq!("topk:3".parse::<SelectionRule>().unwrap(), SelectionRule::TopK(3));
        assert_eq!("argmax".parse::<SelectionRule>().unwrap(), SelectionRule::ArgMax);
        assert!("top".parse::<SelectionRule>().is_err());
    }

    #[test]
    fn action_permutation() {
        let g = Permutation::from_one_based(&[2, 1]).unwrap();
        let a = DecisionAction::SignClassify(vec![P, NA]);
        assert_eq!(a.permuted(&g).unwrap(), DecisionAction::SignClassify(vec![NA, P]));
        assert_eq!(
            DecisionAction::GlobalTest(true).permuted(&g).unwrap(),
            DecisionAction::GlobalTest(true)
        );
    }
}
