//! Maximum likelihood over surplus coefficients and distribution
//! parameters, with finite-difference gradients through the equilibrium.

use std::cell::RefCell;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::solvers::WarmStart;

use super::{
    finish, loglik_at, moment_match_with, Estimator, EstimationResult, MomentOptions, ParamModelSpec, PinnedDirection,
    Sample, INNER_TOL,
};

#[derive(Clone, Debug)]
pub struct MleOptions {
    /// Starting `(lambda, theta)`; moment matching at the reference family
    /// when absent.
    pub init: Option<Vec<f64>>,
    /// Threshold on the largest gradient entry of the mean log-likelihood.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub compute_se: bool,
    /// Eigenvalues of the information below this fraction of the largest
    /// are pinned.
    pub pin_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            init: None,
            grad_tol: 1e-7,
            max_iter: 500,
            compute_se: true,
            pin_tol: 1e-8,
        }
    }
}

/// Largest gradient entry at which the finite-difference noise floor is
/// reached.
const NOISE_FLOOR: f64 = 1e-5;

/// Log-likelihood at `p = (lambda, theta)` with warm-started inner solves.
struct Likelihood<'a> {
    spec: &'a ParamModelSpec,
    data: &'a Sample,
    k: usize,
    warm: RefCell<Option<WarmStart>>,
}

impl<'a> Likelihood<'a> {
    fn new(spec: &'a ParamModelSpec, data: &'a Sample) -> Self {
        Self {
            spec,
            data,
            k: spec.basis.len(),
            warm: RefCell::new(None),
        }
    }

    fn eval(&self, p: &[f64], keep: bool) -> Result<f64> {
        let (lambda, theta) = p.split_at(self.k);
        let sol = self
            .spec
            .equilibrium(lambda, theta, &self.data.margins, INNER_TOL, self.warm.borrow().clone())?;
        if keep {
            *self.warm.borrow_mut() = Some(WarmStart::from_solution(&sol));
        }
        Ok(loglik_at(&sol.matching, &self.data.masses))
    }

    /// Mean negative log-likelihood and its central-difference gradient.
    fn objective(&self, p: &[f64], g: &mut [f64], free: &[usize]) -> Result<f64> {
        let scale = self.data.households;
        let f = -self.eval(p, true)? / scale;
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut q = p.to_vec();
        for &i in free {
            let h = 1e-5 * (1.0 + p[i].abs());
            q[i] = p[i] + h;
            let fp = -self.eval(&q, false)? / scale;
            q[i] = p[i] - h;
            let fm = -self.eval(&q, false)? / scale;
            q[i] = p[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(f)
    }

    /// Finite-difference Hessian of the negative log-likelihood.
    fn information(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let d = p.len();
        let h: Vec<f64> = p.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
        let f0 = -self.eval(p, false)?;
        let at = |shifts: &[(usize, f64)]| -> Result<f64> {
            let mut q = p.to_vec();
            for (i, s) in shifts {
                q[*i] += s * h[*i];
            }
            Ok(-self.eval(&q, false)?)
        };
        let mut info = DMatrix::zeros(d, d);
        for i in 0..d {
            let fp = at(&[(i, 1.0)])?;
            let fm = at(&[(i, -1.0)])?;
            info[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for j in 0..i {
                let fpp = at(&[(i, 1.0), (j, 1.0)])?;
                let fpm = at(&[(i, 1.0), (j, -1.0)])?;
                let fmp = at(&[(i, -1.0), (j, 1.0)])?;
                let fmm = at(&[(i, -1.0), (j, -1.0)])?;
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
                info[(i, j)] = v;
                info[(j, i)] = v;
            }
        }
        Ok(info)
    }
}

struct Fit {
    p: Vec<f64>,
    loglik: f64,
    iterations: usize,
    converged: bool,
}

/// Maximize over the coordinates in `free`, holding the others at `p0`.
fn maximize(lik: &Likelihood, p0: Vec<f64>, free: &[usize], opts: &MleOptions) -> Result<Fit> {
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let full = p0.clone();
    let obj = |z: &[f64], g: &mut [f64]| -> f64 {
        let mut p = full.clone();
        for (j, &i) in free.iter().enumerate() {
            p[i] = z[j];
        }
        let mut gp = vec![0.0; p.len()];
        match lik.objective(&p, &mut gp, free) {
            Ok(f) => {
                for (j, &i) in free.iter().enumerate() {
                    g[j] = gp[i];
                }
                f
            }
            Err(e) => {
                log::debug!("likelihood failed at {p:?}: {e}");
                *failure.borrow_mut() = Some(e);
                f64::INFINITY
            }
        }
    };
    let z0: Vec<f64> = free.iter().map(|i| p0[*i]).collect();
    let lopts = LbfgsOptions::default().with_grad_tol(opts.grad_tol).with_max_iter(opts.max_iter);
    let rep = if free.is_empty() {
        None
    } else {
        Some(lbfgs(obj, z0, None, &lopts).map_err(|e| failure.take().unwrap_or(e))?)
    };
    let mut p = p0;
    let (iterations, converged) = match &rep {
        Some(r) => {
            for (j, &i) in free.iter().enumerate() {
                p[i] = r.x[j];
            }
            (r.iterations, r.converged || r.grad_norm() <= NOISE_FLOOR)
        }
        None => (0, true),
    };
    let loglik = lik.eval(&p, true)?;
    Ok(Fit {
        p,
        loglik,
        iterations,
        converged,
    })
}

fn starting_point(spec: &ParamModelSpec, data: &Sample, opts: &MleOptions) -> Result<Vec<f64>> {
    if let Some(p) = &opts.init {
        if p.len() != spec.dim() {
            return Err(Error::dims("initial parameters", spec.dim(), p.len()));
        }
        return Ok(p.clone());
    }
    let theta = spec.dist.reference();
    let lambda = match moment_match_with(spec, data, &theta, &MomentOptions::default()) {
        Ok(r) => r.lambda,
        Err(e) => {
            log::warn!("moment matching start failed ({e}); starting from zero");
            vec![0.0; spec.basis.len()]
        }
    };
    let mut p = lambda;
    p.extend(theta);
    Ok(p)
}

/// Inverse of the information with negligible directions held fixed.
fn guarded_inverse(info: &DMatrix<f64>, pin_tol: f64) -> (DMatrix<f64>, Vec<PinnedDirection>) {
    let d = info.nrows();
    let sym = (info + info.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut inv = DMatrix::zeros(d, d);
    let mut pinned = Vec::new();
    for i in 0..d {
        let ev = eig.eigenvalues[i];
        let vec = eig.eigenvectors.column(i);
        if ev <= pin_tol * top || ev <= 0.0 {
            pinned.push(PinnedDirection {
                eigenvalue: ev,
                vector: vec.iter().copied().collect(),
            });
            continue;
        }
        inv += vec * vec.transpose() / ev;
    }
    (inv, pinned)
}

pub fn mle(spec: &ParamModelSpec, data: &Sample, opts: &MleOptions) -> Result<EstimationResult> {
    spec.check_shape(data.shape())?;
    let lik = Likelihood::new(spec, data);
    let p0 = starting_point(spec, data, opts)?;
    let free: Vec<usize> = (0..spec.dim()).collect();
    let fit = maximize(&lik, p0, &free, opts)?;
    if !fit.converged {
        log::warn!("likelihood maximization stopped after {} iterations", fit.iterations);
    }
    let k = spec.basis.len();
    let (lambda, theta) = fit.p.split_at(k);
    let sol = spec.equilibrium(lambda, theta, &data.margins, INNER_TOL, lik.warm.borrow().clone())?;
    let mut out = finish(
        spec,
        Estimator::Mle,
        lambda.to_vec(),
        theta.to_vec(),
        sol.matching,
        data,
        fit.converged,
        fit.iterations,
    );
    debug_assert!((out.loglik - fit.loglik).abs() <= 1e-6 * (1.0 + fit.loglik.abs()));
    if opts.compute_se {
        let info = lik.information(&fit.p)?;
        let (cov, pinned) = guarded_inverse(&info, opts.pin_tol);
        if !pinned.is_empty() {
            log::warn!("{} near-singular directions of the information were held fixed", pinned.len());
        }
        out.se = Some((0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect());
        out.pinned = pinned;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfilePoint {
    pub value: f64,
    pub loglik: f64,
    pub converged: bool,
}

/// Log-likelihood maximized over all parameters but `index`, which is held
/// at each of `values`.
pub fn profile_loglik(
    spec: &ParamModelSpec,
    data: &Sample,
    index: usize,
    values: &[f64],
    opts: &MleOptions,
) -> Result<Vec<ProfilePoint>> {
    spec.check_shape(data.shape())?;
    if index >= spec.dim() {
        return Err(Error::invalid("profile parameter", format!("index {index} beyond {} parameters", spec.dim())));
    }
    let lik = Likelihood::new(spec, data);
    let mut start = starting_point(spec, data, opts)?;
    let free: Vec<usize> = (0..spec.dim()).filter(|i| *i != index).collect();
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        start[index] = *v;
        let fit = maximize(&lik, start.clone(), &free, opts)?;
        out.push(ProfilePoint {
            value: *v,
            loglik: fit.loglik,
            converged: fit.converged,
        });
        start = fit.p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_pins_flat_directions() {
        let info = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1e-14]);
        let (inv, pinned) = guarded_inverse(&info, 1e-8);
        assert_eq!(pinned.len(), 1);
        assert!((inv[(0, 0)] - 0.25).abs() < 1e-15);
        assert_eq!(inv[(1, 1)], 0.0);
    }
}
