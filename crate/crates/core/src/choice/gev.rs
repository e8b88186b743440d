//! Generalized extreme value families defined through a generator `g`.
//!
//! A generator works on the full choice set with the outside option at
//! index 0. The Emax is `log g(e^w) / h` where `h` is the homogeneity degree
//! of `g`; the Euler constant is omitted.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{log_add_exp, logsumexp};

use super::{
    check_mask_len, check_shares, check_utilities, finite, legendre_value, newton_invert,
    zero_masked, ChoiceModel, Logit,
};

/// Aggregation function of a GEV family, evaluated in log form at `w = log t`.
pub trait GevGenerator: Debug + Send + Sync {
    /// Size of the full choice set, outside option included.
    fn dim(&self) -> usize;

    /// Degree of homogeneity of `g`.
    fn homogeneity(&self) -> f64 {
        1.0
    }

    /// `log g(e^w)`.
    fn log_g(&self, w: &[f64]) -> f64;

    /// Gradient of `log g(e^w)` with respect to `w`.
    fn grad_log_g(&self, w: &[f64]) -> Vec<f64>;
}

fn full_choice_set(u: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(u.len() + 1);
    w.push(0.0);
    w.extend_from_slice(u);
    w
}

fn gev_emax(gen: &dyn GevGenerator, u: &[f64]) -> Result<f64> {
    if u.len() + 1 != gen.dim() {
        return Err(Error::dims("GEV alternatives", gen.dim() - 1, u.len()));
    }
    check_utilities(u)?;
    finite("GEV emax", gen.log_g(&full_choice_set(u)) / gen.homogeneity())
}

fn gev_probs(gen: &dyn GevGenerator, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() + 1 != gen.dim() {
        return Err(Error::dims("GEV alternatives", gen.dim() - 1, u.len()));
    }
    check_utilities(u)?;
    let h = gen.homogeneity();
    Ok(gen.grad_log_g(&full_choice_set(u))[1..]
        .iter()
        .map(|d| d / h)
        .collect())
}

fn gev_invert<M: ChoiceModel>(m: &M, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    check_mask_len(mu.len(), allowed)?;
    let start = Logit.invert_masked(mu, allowed)?;
    newton_invert(m, mu, allowed, start)
}

fn gev_conj<M: ChoiceModel>(m: &M, mu: &[f64], allowed: &[bool]) -> Result<f64> {
    check_shares(mu, allowed)?;
    let u = gev_invert(m, mu, allowed)?;
    legendre_value(m, mu, &u)
}

/// `g(t) = sum_y t_y`, the multinomial logit generator.
#[derive(Clone, Debug)]
pub struct MultinomialGenerator {
    pub dim: usize,
}

impl GevGenerator for MultinomialGenerator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_g(&self, w: &[f64]) -> f64 {
        logsumexp(w)
    }

    fn grad_log_g(&self, w: &[f64]) -> Vec<f64> {
        let l = logsumexp(w);
        w.iter().map(|v| (v - l).exp()).collect()
    }
}

/// Nested generator `t_0 + sum_n (sum_{y in n} t_y^{1/lambda_n})^{lambda_n}`
/// over inside alternatives `1..dim`.
#[derive(Clone, Debug)]
pub struct NestedGenerator {
    pub nest_of: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl NestedGenerator {
    fn inclusive(&self, w: &[f64]) -> Vec<f64> {
        let mut parts = vec![Vec::new(); self.lambda.len()];
        for (y, n) in self.nest_of.iter().enumerate() {
            parts[*n].push(w[y + 1] / self.lambda[*n]);
        }
        parts
            .iter()
            .zip(&self.lambda)
            .map(|(v, l)| l * logsumexp(v))
            .collect()
    }
}

impl GevGenerator for NestedGenerator {
    fn dim(&self) -> usize {
        self.nest_of.len() + 1
    }

    fn log_g(&self, w: &[f64]) -> f64 {
        let mut iv = self.inclusive(w);
        iv.push(w[0]);
        logsumexp(&iv)
    }

    fn grad_log_g(&self, w: &[f64]) -> Vec<f64> {
        let iv = self.inclusive(w);
        let lg = self.log_g(w);
        let mut d = vec![(w[0] - lg).exp()];
        for (y, n) in self.nest_of.iter().enumerate() {
            let l = self.lambda[*n];
            d.push((iv[*n] - lg + (w[y + 1] - iv[*n]) / l).exp());
        }
        d
    }
}

/// A GEV family with a user-supplied generator.
#[derive(Clone, Debug)]
pub struct GevModel {
    generator: Arc<dyn GevGenerator>,
}

impl GevModel {
    pub fn new(generator: Arc<dyn GevGenerator>) -> Result<Self> {
        if generator.dim() < 1 {
            return Err(Error::invalid("GEV generator", "empty choice set"));
        }
        let h = generator.homogeneity();
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid("GEV generator", format!("homogeneity {h}")));
        }
        Ok(Self { generator })
    }

    pub fn generator(&self) -> &Arc<dyn GevGenerator> {
        &self.generator
    }
}

impl ChoiceModel for GevModel {
    fn n_alternatives(&self) -> Option<usize> {
        Some(self.generator.dim() - 1)
    }

    fn emax(&self, u: &[f64]) -> Result<f64> {
        gev_emax(self.generator.as_ref(), u)
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        gev_probs(self.generator.as_ref(), u)
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        gev_conj(self, mu, allowed)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        Ok(zero_masked(gev_invert(self, mu, allowed)?, allowed))
    }
}

/// Flexible-coefficient multinomial logit.
///
/// `g(t) = sum_{y, y'} b_{yy'} ((t_y^{1/sigma} + t_{y'}^{1/sigma}) / 2)^{tau sigma}`
/// over the full choice set. `g` is `tau`-homogeneous.
#[derive(Clone, Debug, PartialEq)]
pub struct FcMnl {
    b: DMatrix<f64>,
    log_b: DMatrix<f64>,
    sigma: f64,
    tau: f64,
}

impl FcMnl {
    /// `b` is indexed over the full choice set with the outside option first.
    pub fn new(b: DMatrix<f64>, sigma: f64, tau: f64) -> Result<Self> {
        if !b.is_square() || b.nrows() < 1 {
            return Err(Error::invalid("FC-MNL", "b must be square"));
        }
        let k = b.nrows();
        for i in 0..k {
            if (b[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("FC-MNL", format!("b[{i},{i}] must be 1")));
            }
            for j in 0..k {
                let v = b[(i, j)];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid("FC-MNL", format!("b[{i},{j}] = {v}")));
                }
                if (v - b[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("FC-MNL", "b must be symmetric"));
                }
            }
        }
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::invalid("FC-MNL", format!("sigma {sigma} outside (0, 1]")));
        }
        if !(tau >= 1.0 && tau * sigma <= 1.0 + 1e-12) {
            return Err(Error::invalid(
                "FC-MNL",
                format!("need tau >= 1 and tau * sigma <= 1, got tau {tau}, sigma {sigma}"),
            ));
        }
        let log_b = b.map(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        Ok(Self { b, log_b, sigma, tau })
    }

    /// `b` with a constant off-diagonal `rho` over `n_alt + 1` alternatives.
    pub fn uniform(n_alt: usize, rho: f64, sigma: f64, tau: f64) -> Result<Self> {
        let k = n_alt + 1;
        let b = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho });
        Self::new(b, sigma, tau)
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn log_pair(&self, w: &[f64], y: usize, z: usize) -> f64 {
        log_add_exp(w[y] / self.sigma, w[z] / self.sigma) - std::f64::consts::LN_2
    }
}

impl GevGenerator for FcMnl {
    fn dim(&self) -> usize {
        self.b.nrows()
    }

    fn homogeneity(&self) -> f64 {
        self.tau
    }

    fn log_g(&self, w: &[f64]) -> f64 {
        let k = self.dim();
        let ts = self.tau * self.sigma;
        let mut terms = Vec::with_capacity(k * k);
        for y in 0..k {
            for z in 0..k {
                let lb = self.log_b[(y, z)];
                if lb > f64::NEG_INFINITY {
                    terms.push(lb + ts * self.log_pair(w, y, z));
                }
            }
        }
        logsumexp(&terms)
    }

    fn grad_log_g(&self, w: &[f64]) -> Vec<f64> {
        let k = self.dim();
        let ts = self.tau * self.sigma;
        let lg = self.log_g(w);
        let mut row = Vec::with_capacity(k);
        (0..k)
            .map(|y| {
                row.clear();
                for z in 0..k {
                    let lb = self.log_b[(y, z)];
                    if lb > f64::NEG_INFINITY {
                        row.push(lb + w[y] / self.sigma + (ts - 1.0) * self.log_pair(w, y, z));
                    }
                }
                self.tau * (logsumexp(&row) - lg).exp()
            })
            .collect()
    }
}

impl ChoiceModel for FcMnl {
    fn n_alternatives(&self) -> Option<usize> {
        Some(self.dim() - 1)
    }

    fn emax(&self, u: &[f64]) -> Result<f64> {
        gev_emax(self, u)
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        gev_probs(self, u)
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        gev_conj(self, mu, allowed)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        Ok(zero_masked(gev_invert(self, mu, allowed)?, allowed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_b_unit_scale_is_logit() {
        let f = FcMnl::uniform(1, 0.0, 1.0, 1.0).unwrap();
        assert!((f.emax(&[0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let u = [0.3, -0.4];
        let f = FcMnl::uniform(2, 0.0, 1.0, 1.0).unwrap();
        let p = f.probs(&u).unwrap();
        let q = Logit.probs(&u).unwrap();
        assert!((p[0] - q[0]).abs() < 1e-14 && (p[1] - q[1]).abs() < 1e-14);
    }

    #[test]
    fn shares_sum_to_one_with_outside() {
        let f = FcMnl::uniform(3, 0.4, 0.5, 1.5).unwrap();
        let w = [0.0, 0.2, -1.0, 0.7];
        let d = f.grad_log_g(&w);
        let total: f64 = d.iter().sum::<f64>() / f.tau();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FcMnl::uniform(2, 0.2, 0.8, 2.0).is_err());
        assert!(FcMnl::uniform(2, -0.2, 0.5, 1.0).is_err());
        assert!(FcMnl::uniform(2, 0.2, 1.2, 1.0).is_err());
    }

    #[test]
    fn nested_generator_matches_closed_form() {
        let g = GevModel::new(Arc::new(NestedGenerator {
            nest_of: vec![0, 0, 1],
            lambda: vec![0.5, 0.8],
        }))
        .unwrap();
        let n = crate::choice::NestedLogit::new(vec![0, 0, 1], vec![0.5, 0.8]).unwrap();
        let u = [0.1, -0.3, 0.6];
        assert!((g.emax(&u).unwrap() - n.emax(&u).unwrap()).abs() < 1e-14);
        let pg = g.probs(&u).unwrap();
        let pn = n.probs(&u).unwrap();
        for y in 0..3 {
            assert!((pg[y] - pn[y]).abs() < 1e-14);
        }
    }
}
