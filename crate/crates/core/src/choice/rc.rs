//! Random-coefficients logit, `eps = Z e + T eta`, and its zero-temperature
//! limit, the pure characteristics model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{logsumexp, max_abs};

use super::discretized::{conj_ot, DiscretizedDistribution};
use super::{
    check_interior, check_mask_len, check_shares, check_utilities, finite, large_for, zero_masked,
    ChoiceModel, Logit,
};

#[derive(Clone, Debug)]
pub struct RcLogit {
    z: DMatrix<f64>,
    draws: DiscretizedDistribution,
    temperature: f64,
    // Row k holds Z e_k over the full choice set.
    offsets: DMatrix<f64>,
}

impl RcLogit {
    /// `z` has one row per alternative, outside option first, and one column
    /// per coefficient; `draws` are the quadrature nodes of `e`.
    pub fn new(z: DMatrix<f64>, draws: DiscretizedDistribution, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(Error::invalid("random coefficients logit", format!("temperature {temperature} < 0")));
        }
        if z.ncols() != draws.dim() {
            return Err(Error::dims("coefficient dimensions", z.ncols(), draws.dim()));
        }
        if z.nrows() == 0 {
            return Err(Error::invalid("random coefficients logit", "empty loading matrix"));
        }
        let offsets = draws.support() * z.transpose();
        Ok(Self {
            z,
            draws,
            temperature,
            offsets,
        })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn draws(&self) -> &DiscretizedDistribution {
        &self.draws
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// The law of `Z e` as a discretized error distribution.
    pub fn offset_distribution(&self) -> Result<DiscretizedDistribution> {
        DiscretizedDistribution::new(self.offsets.clone(), self.draws.weights().to_vec())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n + 1 != self.z.nrows() {
            return Err(Error::dims("random coefficients alternatives", self.z.nrows() - 1, n));
        }
        Ok(())
    }

    fn row(&self, k: usize, u: &[f64]) -> Vec<f64> {
        let t = self.temperature;
        let mut r = Vec::with_capacity(u.len() + 1);
        r.push(self.offsets[(k, 0)] / t);
        for (y, v) in u.iter().enumerate() {
            r.push((v + self.offsets[(k, y + 1)]) / t);
        }
        r
    }

    /// Shares and the inside block of their Jacobian.
    fn probs_and_jacobian(&self, u: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let n = u.len();
        let mut p = vec![0.0; n];
        let mut h = DMatrix::zeros(n, n);
        let t = self.temperature;
        for (k, w) in self.draws.weights().iter().enumerate() {
            let r = self.row(k, u);
            let l = logsumexp(&r);
            let pk: Vec<f64> = r[1..].iter().map(|v| (v - l).exp()).collect();
            for a in 0..n {
                p[a] += w * pk[a];
                h[(a, a)] += w * pk[a] / t;
                for b in 0..n {
                    h[(a, b)] -= w * pk[a] * pk[b] / t;
                }
            }
        }
        (p, h)
    }
}

/// Minimize `emax(U) - mu . U` over the inside utilities. The minimum is
/// `-G*(mu)`; the minimizer rationalizes `mu`. At zero temperature this is
/// the transport problem against the support of `Z e`.
pub fn conj_rc(spec: &RcLogit, mu: &[f64]) -> Result<(f64, Vec<f64>)> {
    conj_rc_masked(spec, mu, &vec![true; mu.len()])
}

fn conj_rc_masked(spec: &RcLogit, mu: &[f64], allowed: &[bool]) -> Result<(f64, Vec<f64>)> {
    spec.check_len(mu.len())?;
    check_mask_len(mu.len(), allowed)?;
    let mu0 = check_shares(mu, allowed)?;
    check_interior(mu, mu0, allowed)?;
    if spec.temperature == 0.0 {
        let dist = spec.offset_distribution()?;
        let (v, dual) = conj_ot(&dist, mu)?;
        return Ok((v, zero_masked(dual.u, allowed)));
    }
    let t = spec.temperature;
    let idx: Vec<usize> = (0..mu.len()).filter(|y| allowed[*y]).collect();
    // Logit start shifted by the mean offsets.
    let mut u = Logit.invert_masked(mu, allowed)?;
    let mean: Vec<f64> = (0..spec.z.nrows())
        .map(|c| {
            spec.draws
                .weights()
                .iter()
                .enumerate()
                .map(|(k, w)| w * spec.offsets[(k, c)])
                .sum()
        })
        .collect();
    for y in 0..mu.len() {
        u[y] = t * u[y] - (mean[y + 1] - mean[0]);
    }
    let pin = -large_for(&u, allowed) - 50.0 * (1.0 + t);
    for y in 0..mu.len() {
        if !allowed[y] {
            u[y] = pin;
        }
    }
    let objective = |u: &[f64]| -> Result<f64> {
        let dot: f64 = idx.iter().map(|y| mu[*y] * u[*y]).sum();
        Ok(spec.emax(u)? - dot)
    };
    let mut f = objective(&u)?;
    for _ in 0..500 {
        let (p, h) = spec.probs_and_jacobian(&u);
        let grad: Vec<f64> = idx.iter().map(|y| p[*y] - mu[*y]).collect();
        let rel: Vec<f64> = idx.iter().zip(&grad).map(|(y, g)| g / mu[*y]).collect();
        if max_abs(&rel) <= 1e-12 {
            break;
        }
        let k = idx.len();
        let hs = DMatrix::from_fn(k, k, |a, b| h[(idx[a], idx[b])]);
        let rhs = DVector::from_iterator(k, grad.iter().map(|g| -g));
        let step = match hs.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => rhs.clone() * t,
        };
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = u.clone();
            for (c, y) in idx.iter().enumerate() {
                trial[*y] += alpha * step[c];
            }
            let ft = objective(&trial)?;
            // Near the optimum the decrease is below the rounding of f.
            let noise = 4.0 * f64::EPSILON * f.abs().max(1.0);
            if ft <= f + 1e-4 * alpha * slope + noise {
                u = trial;
                f = ft;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (p, _) = spec.probs_and_jacobian(&u);
    let worst = idx
        .iter()
        .map(|y| ((p[*y] - mu[*y]) / mu[*y]).abs())
        .fold(0.0, f64::max);
    if worst > 1e-8 {
        return Err(Error::NoConvergence {
            what: "random coefficients inversion".into(),
            iterations: 500,
            residual: worst,
        });
    }
    Ok((f, zero_masked(u, allowed)))
}

impl ChoiceModel for RcLogit {
    fn n_alternatives(&self) -> Option<usize> {
        Some(self.z.nrows() - 1)
    }

    fn emax(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u.len())?;
        check_utilities(u)?;
        if self.temperature == 0.0 {
            return self.offset_distribution()?.emax(u);
        }
        let t = self.temperature;
        let total: f64 = self
            .draws
            .weights()
            .iter()
            .enumerate()
            .map(|(k, w)| w * t * logsumexp(&self.row(k, u)))
            .sum();
        finite("random coefficients emax", total)
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        check_utilities(u)?;
        if self.temperature == 0.0 {
            return self.offset_distribution()?.probs(u);
        }
        Ok(self.probs_and_jacobian(u).0)
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        Ok(-conj_rc_masked(self, mu, allowed)?.0)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        Ok(conj_rc_masked(self, mu, allowed)?.1)
    }
}
