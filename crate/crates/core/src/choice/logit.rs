use crate::error::Result;
use crate::numerics::{logsumexp_with_zero, xlogx};

use super::{check_interior, check_mask_len, check_shares, check_utilities, finite, ChoiceModel};

/// Standard type-I extreme value errors, independent across alternatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Logit;

impl ChoiceModel for Logit {
    fn emax(&self, u: &[f64]) -> Result<f64> {
        check_utilities(u)?;
        finite("logit emax", logsumexp_with_zero(u))
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_utilities(u)?;
        let g = logsumexp_with_zero(u);
        Ok(u.iter().map(|v| (v - g).exp()).collect())
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        let mu0 = check_shares(mu, allowed)?;
        Ok(xlogx(mu0) + mu.iter().map(|m| xlogx(*m)).sum::<f64>())
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        check_mask_len(mu.len(), allowed)?;
        let mu0 = check_shares(mu, allowed)?;
        check_interior(mu, mu0, allowed)?;
        let l0 = mu0.ln();
        Ok(mu
            .iter()
            .zip(allowed)
            .map(|(m, a)| if *a { m.ln() - l0 } else { 0.0 })
            .collect())
    }

    // Restricting the choice set is exact in closed form.
    fn emax_masked(&self, u: &[f64], allowed: &[bool]) -> Result<f64> {
        check_mask_len(u.len(), allowed)?;
        let v: Vec<f64> = u.iter().zip(allowed).filter(|(_, a)| **a).map(|(x, _)| *x).collect();
        self.emax(&v)
    }

    fn probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        Ok(self.emax_probs_masked(u, allowed)?.1)
    }

    fn emax_probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<(f64, Vec<f64>)> {
        check_mask_len(u.len(), allowed)?;
        check_utilities(u)?;
        let v: Vec<f64> = u.iter().zip(allowed).filter(|(_, a)| **a).map(|(x, _)| *x).collect();
        let g = finite("logit emax", logsumexp_with_zero(&v))?;
        let p = u
            .iter()
            .zip(allowed)
            .map(|(x, a)| if *a { (x - g).exp() } else { 0.0 })
            .collect();
        Ok((g, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn closed_forms() {
        assert!((Logit.emax(&[0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert!((Logit.emax(&[3f64.ln()]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((Logit.probs(&[0.0]).unwrap()[0] - 0.5).abs() < 1e-15);
        assert!((Logit.probs(&[3f64.ln()]).unwrap()[0] - 0.75).abs() < 1e-15);
        assert!((Logit.conj(&[0.5]).unwrap() + LN_2).abs() < 1e-15);
        assert!((Logit.conj(&[1.0 / 3.0, 1.0 / 3.0]).unwrap() + 3f64.ln()).abs() < 1e-15);
        let u = Logit.invert(&[0.25, 0.25]).unwrap();
        assert!((u[0] + LN_2).abs() < 1e-15 && (u[1] + LN_2).abs() < 1e-15);
    }

    #[test]
    fn boundary_inversion_fails() {
        assert!(Logit.invert(&[0.5, 0.5]).is_err());
        assert!(Logit.invert(&[0.0, 0.5]).is_err());
    }
}
