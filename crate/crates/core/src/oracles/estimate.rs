//! Squared-error estimation of data-selected coordinates: the oracle
//! reports the posterior mean `E[xi_i | W = z]` for every coordinate.
//! Unselected entries do not enter the loss, so filling them with the
//! posterior mean too is harmless.

use std::sync::Arc;

use crate::losses::{DecisionAction, SelectionRule, Selector};
use crate::posterior::{PosteriorModel, PosteriorSummary};
use crate::rule::DecisionRule;

pub fn selective_estimate(summary: &PosteriorSummary, s: &dyn Selector, z: &[f64]) -> Vec<f64> {
    debug_assert_eq!(s.select(z).mask.len(), summary.len());
    summary.post_mean.clone()
}

/// Posterior expected selective squared loss of the estimate `a`:
/// `Σ_i s_i(z) [(a_i − m_i)^2 + v_i]`.
pub fn posterior_selective_loss(summary: &PosteriorSummary, s: &dyn Selector, z: &[f64], a: &[f64]) -> f64 {
    let sel = s.select(z);
    (0..summary.len())
        .filter(|&i| sel.mask[i])
        .map(|i| (a[i] - summary.post_mean[i]).powi(2) + summary.post_var[i])
        .sum()
}

#[derive(Clone)]
pub struct EstimationOracle {
    model: Arc<dyn PosteriorModel>,
    selection: SelectionRule,
}

impl std::fmt::Debug for EstimationOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EstimationOracle")
            .field("model", &self.model.describe())
            .field("selection", &self.selection)
            .finish()
    }
}

impl EstimationOracle {
    pub fn new(model: Arc<dyn PosteriorModel>, selection: SelectionRule) -> Self {
        Self { model, selection }
    }

    pub fn selection(&self) -> SelectionRule {
        self.selection
    }

    pub fn model(&self) -> &dyn PosteriorModel {
        self.model.as_ref()
    }
}

impl DecisionRule for EstimationOracle {
    fn name(&self) -> String {
        "oracle_estimate".into()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        let summary = self.model.summarize(z);
        DecisionAction::Estimate(selective_estimate(&summary, &self.selection, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamVector;
    use crate::posterior::{NullSet, OrbitSupport};

    #[test]
    fn single_coordinate_knows_theta() {
        let theta = ParamVector::unit(vec![2.5]).unwrap();
        let oracle = EstimationOracle::new(Arc::new(OrbitSupport::exact(&theta, NullSet::Zero).unwrap()), SelectionRule::All);
        assert_eq!(oracle.decide(&[-3.0]), DecisionAction::Estimate(vec![2.5]));
    }

    #[test]
    fn two_point_argmax() {
        let theta = ParamVector::unit(vec![0.0, 2.0]).unwrap();
        let support = OrbitSupport::exact(&theta, NullSet::Zero).unwrap();
        let z = [0.0, 2.0];
        let s = support.summarize(&z);
        let sel = SelectionRule::ArgMax.select(&z);
        assert_eq!(sel.mask, vec![false, true]);
        let a = selective_estimate(&s, &SelectionRule::ArgMax, &z);
        assert!((a[1] - 1.964028).abs() < 1e-6);
    }
}
