use crate::error::{Error, Result};

use super::{ChoiceModel, Model};

/// A base family with errors multiplied by a positive scale.
#[derive(Clone, Debug)]
pub struct ScaledModel {
    base: Box<Model>,
    scale: f64,
}

impl ScaledModel {
    pub fn new(base: Model, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("scale", format!("{scale} is not positive")));
        }
        Ok(Self {
            base: Box::new(base),
            scale,
        })
    }

    pub fn base(&self) -> &Model {
        &self.base
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn shrink(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|v| v / self.scale).collect()
    }
}

impl ChoiceModel for ScaledModel {
    fn n_alternatives(&self) -> Option<usize> {
        self.base.n_alternatives()
    }

    fn emax(&self, u: &[f64]) -> Result<f64> {
        Ok(self.scale * self.base.emax(&self.shrink(u))?)
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.base.probs(&self.shrink(u))
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        Ok(self.scale * self.base.conj_masked(mu, allowed)?)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        let u = self.base.invert_masked(mu, allowed)?;
        Ok(u.into_iter().map(|v| v * self.scale).collect())
    }

    fn emax_masked(&self, u: &[f64], allowed: &[bool]) -> Result<f64> {
        Ok(self.scale * self.base.emax_masked(&self.shrink(u), allowed)?)
    }

    fn probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        self.base.probs_masked(&self.shrink(u), allowed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_probs_are_exact() {
        let s = ScaledModel::new(Model::logit(), 2.5).unwrap();
        let u = [0.4, -0.7];
        let scaled: Vec<f64> = u.iter().map(|v| v * 2.5).collect();
        assert_eq!(s.probs(&scaled).unwrap(), Model::logit().probs(&u).unwrap());
        assert!(ScaledModel::new(Model::logit(), 0.0).is_err());
    }
}
