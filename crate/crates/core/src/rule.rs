use crate::losses::DecisionAction;

/// A decision rule `delta: R^n -> A`.
pub trait DecisionRule: Send + Sync {
    fn name(&self) -> String;
    fn decide(&self, z: &[f64]) -> DecisionAction;
}

impl<T: DecisionRule + ?Sized> DecisionRule for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        (**self).decide(z)
    }
}

impl<T: DecisionRule + ?Sized> DecisionRule for &T {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&self, z: &[f64]) -> DecisionAction {
        (**self).decide(z)
    }
}
