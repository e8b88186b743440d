use crate::error::{Error, Result};
use crate::numerics::{logsumexp, logsumexp_with_zero, xlogx};

use super::{check_interior, check_mask_len, check_shares, check_utilities, finite, ChoiceModel};

/// Two-layer nested logit. The outside option sits alone in its own nest.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedLogit {
    nest_of: Vec<usize>,
    lambda: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl NestedLogit {
    /// `nest_of[y]` is the nest of inside alternative `y`; `lambda[n]` the
    /// parameter of nest `n`. Every nest must be non-empty.
    pub fn new(nest_of: Vec<usize>, lambda: Vec<f64>) -> Result<Self> {
        if let Some(l) = lambda.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return Err(Error::invalid("nested logit", format!("lambda {l} outside (0, 1]")));
        }
        let mut members = vec![Vec::new(); lambda.len()];
        for (y, n) in nest_of.iter().enumerate() {
            match members.get_mut(*n) {
                Some(v) => v.push(y),
                None => {
                    return Err(Error::invalid(
                        "nested logit",
                        format!("alternative {y} assigned to unknown nest {n}"),
                    ))
                }
            }
        }
        if let Some(n) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::invalid("nested logit", format!("nest {n} is empty")));
        }
        Ok(Self {
            nest_of,
            lambda,
            members,
        })
    }

    /// Every alternative in a single nest with parameter `lambda`.
    pub fn single_nest(n_alt: usize, lambda: f64) -> Result<Self> {
        Self::new(vec![0; n_alt], vec![lambda])
    }

    pub fn nest_of(&self) -> &[usize] {
        &self.nest_of
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn n_nests(&self) -> usize {
        self.lambda.len()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.nest_of.len() {
            return Err(Error::dims("nested logit alternatives", self.nest_of.len(), n));
        }
        Ok(())
    }

    /// Inclusive values `I_n = lambda_n log sum_{y in n} exp(u_y / lambda_n)`.
    pub fn inclusive_values(&self, u: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .zip(&self.lambda)
            .map(|(ys, l)| {
                let v: Vec<f64> = ys.iter().map(|y| u[*y] / l).collect();
                l * logsumexp(&v)
            })
            .collect()
    }

    /// Nest shares `mu_n = sum_{y in n} mu_y`.
    pub fn nest_shares(&self, mu: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .map(|ys| ys.iter().map(|y| mu[*y]).sum())
            .collect()
    }
}

impl ChoiceModel for NestedLogit {
    fn n_alternatives(&self) -> Option<usize> {
        Some(self.nest_of.len())
    }

    fn emax(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u.len())?;
        check_utilities(u)?;
        finite("nested logit emax", logsumexp_with_zero(&self.inclusive_values(u)))
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        check_utilities(u)?;
        let iv = self.inclusive_values(u);
        let g = logsumexp_with_zero(&iv);
        Ok(u.iter()
            .enumerate()
            .map(|(y, v)| {
                let n = self.nest_of[y];
                let l = self.lambda[n];
                (iv[n] - g + (v - iv[n]) / l).exp()
            })
            .collect())
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        self.check_len(mu.len())?;
        let mu0 = check_shares(mu, allowed)?;
        let mut s = xlogx(mu0);
        for ((ys, l), mn) in self.members.iter().zip(&self.lambda).zip(self.nest_shares(mu)) {
            let inner: f64 = ys.iter().map(|y| xlogx(mu[*y])).sum();
            s += l * inner + (1.0 - l) * xlogx(mn);
        }
        Ok(s)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        self.check_len(mu.len())?;
        check_mask_len(mu.len(), allowed)?;
        let mu0 = check_shares(mu, allowed)?;
        check_interior(mu, mu0, allowed)?;
        let nests = self.nest_shares(mu);
        let l0 = mu0.ln();
        Ok(mu
            .iter()
            .enumerate()
            .map(|(y, m)| {
                if !allowed[y] {
                    return 0.0;
                }
                let n = self.nest_of[y];
                let l = self.lambda[n];
                l * (m.ln() - l0) + (1.0 - l) * (nests[n].ln() - l0)
            })
            .collect())
    }

    // A nest with every member unavailable simply drops out.
    fn emax_masked(&self, u: &[f64], allowed: &[bool]) -> Result<f64> {
        self.check_len(u.len())?;
        check_mask_len(u.len(), allowed)?;
        check_utilities(u)?;
        Ok(logsumexp_with_zero(&self.masked_iv(u, allowed)))
    }

    fn probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        check_mask_len(u.len(), allowed)?;
        check_utilities(u)?;
        let iv = self.masked_iv(u, allowed);
        let g = logsumexp_with_zero(&iv);
        Ok(u.iter()
            .enumerate()
            .map(|(y, v)| {
                if !allowed[y] {
                    return 0.0;
                }
                let n = self.nest_of[y];
                (iv[n] - g + (v - iv[n]) / self.lambda[n]).exp()
            })
            .collect())
    }
}

impl NestedLogit {
    fn masked_iv(&self, u: &[f64], allowed: &[bool]) -> Vec<f64> {
        self.members
            .iter()
            .zip(&self.lambda)
            .map(|(ys, l)| {
                let v: Vec<f64> = ys.iter().filter(|y| allowed[**y]).map(|y| u[*y] / l).collect();
                l * logsumexp(&v)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::Logit;

    #[test]
    fn unit_lambda_is_logit() {
        let m = NestedLogit::new(vec![0, 1, 0], vec![1.0, 1.0]).unwrap();
        let u = [0.3, -1.2, 0.8];
        assert!((m.emax(&u).unwrap() - Logit.emax(&u).unwrap()).abs() < 1e-14);
        let mu = [0.2, 0.1, 0.3];
        assert!((m.conj(&mu).unwrap() - Logit.conj(&mu).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn round_trip() {
        let m = NestedLogit::new(vec![0, 0, 1, 1], vec![0.4, 0.7]).unwrap();
        let u = [0.3, -1.2, 0.8, 0.1];
        let p = m.probs(&u).unwrap();
        let back = m.invert(&p).unwrap();
        for y in 0..4 {
            assert!((back[y] - u[y]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_nests() {
        assert!(NestedLogit::new(vec![0, 2], vec![0.5, 0.5]).is_err());
        assert!(NestedLogit::new(vec![0, 0], vec![0.5, 0.5]).is_err());
        assert!(NestedLogit::new(vec![0], vec![1.5]).is_err());
    }
}
