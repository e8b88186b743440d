//! Moment matching for surplus functions linear in the coefficients.

use std::cell::RefCell;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::identify::{identify, IdentifyOptions};
use crate::market::{Margins, Matching};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::solvers::{Solution, WarmStart};

use super::{finish, Estimator, EstimationResult, ParamModelSpec, Sample, SampleCounts, INNER_TOL};

#[derive(Clone, Debug)]
pub struct MomentOptions {
    /// Threshold on the largest gap between predicted and observed
    /// comoments (share units).
    pub tol: f64,
    pub max_iter: usize,
    /// Starting coefficients; zeros when absent.
    pub init: Option<Vec<f64>>,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            init: None,
        }
    }
}

/// `W(Phi^lambda, r) - sum mu_hat Phi^lambda` (the negated concave
/// objective) with its gradient `C(mu^lambda) - C(mu_hat)` and the
/// equilibrium at `lambda`.
pub fn moment_objective(
    spec: &ParamModelSpec,
    lambda: &[f64],
    theta: &[f64],
    shares: &Matching,
    r: &Margins,
    warm: Option<WarmStart>,
) -> Result<(f64, Vec<f64>, Solution)> {
    let sol = spec.equilibrium(lambda, theta, r, INNER_TOL, warm)?;
    let phi = spec.basis.surplus(lambda)?;
    let observed = spec.basis.comoments(&shares.mu);
    let predicted = spec.basis.comoments(&sol.matching.mu);
    let value = sol.report.social_welfare - shares.mu.component_mul(&phi).sum();
    let grad = predicted.iter().zip(&observed).map(|(p, o)| p - o).collect();
    Ok((value, grad, sol))
}

pub fn moment_match(spec: &ParamModelSpec, data: &SampleCounts, theta: &[f64]) -> Result<EstimationResult> {
    moment_match_with(spec, &Sample::from_counts(data)?, theta, &MomentOptions::default())
}

/// With a basis spanning every cell and interior data the estimate is the
/// identified surplus written in the basis.
fn exact_fit(spec: &ParamModelSpec, data: &Sample, theta: &[f64]) -> Result<Option<(Vec<f64>, Matching)>> {
    if !spec.basis.spans_all() || !data.is_interior() {
        return Ok(None);
    }
    let (nx, ny) = spec.shape();
    let (men, women) = spec.dist.build(theta, nx, ny)?;
    let id = identify(&men, &women, &data.shares, &data.margins, &IdentifyOptions::default())?;
    let cells: Vec<(usize, usize)> = (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).collect();
    let design = spec.basis.design(&cells);
    let target = DVector::from_iterator(cells.len(), cells.iter().map(|c| id.phi.values()[*c]));
    let Some(lambda) = design.lu().solve(&target) else {
        return Ok(None);
    };
    let lambda: Vec<f64> = lambda.iter().copied().collect();
    let sol = spec.equilibrium(&lambda, theta, &data.margins, INNER_TOL, None)?;
    if sol.matching.max_abs_diff(&data.shares) > 1e-9 {
        log::warn!("identified surplus does not reproduce the data; falling back on the iterative fit");
        return Ok(None);
    }
    // The identified surplus reproduces the data exactly.
    Ok(Some((lambda, data.shares.clone())))
}

pub fn moment_match_with(
    spec: &ParamModelSpec,
    data: &Sample,
    theta: &[f64],
    opts: &MomentOptions,
) -> Result<EstimationResult> {
    spec.check_shape(data.shape())?;
    if theta.len() != spec.dist.dim() {
        return Err(Error::dims("distribution parameters", spec.dist.dim(), theta.len()));
    }
    if let Some((lambda, fitted)) = exact_fit(spec, data, theta)? {
        return Ok(finish(spec, Estimator::MomentMatch, lambda, theta.to_vec(), fitted, data, true, 0));
    }
    let k = spec.basis.len();
    let x0 = match &opts.init {
        Some(v) if v.len() == k => v.clone(),
        Some(v) => return Err(Error::dims("initial coefficients", k, v.len())),
        None => vec![0.0; k],
    };
    let warm: RefCell<Option<WarmStart>> = RefCell::new(None);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let obj = |lambda: &[f64], g: &mut [f64]| -> f64 {
        let start = warm.borrow().clone();
        match moment_objective(spec, lambda, theta, &data.shares, &data.margins, start) {
            Ok((v, grad, sol)) => {
                g.copy_from_slice(&grad);
                *warm.borrow_mut() = Some(WarmStart::from_solution(&sol));
                v
            }
            Err(e) => {
                log::debug!("inner solve failed at lambda = {lambda:?}: {e}");
                *failure.borrow_mut() = Some(e);
                f64::INFINITY
            }
        }
    };
    let lopts = LbfgsOptions::default().with_grad_tol(opts.tol).with_max_iter(opts.max_iter);
    let rep = match lbfgs(obj, x0.clone(), None, &lopts) {
        Ok(r) => r,
        Err(_) => {
            return Err(failure.into_inner().unwrap_or_else(|| {
                Error::NonFinite(format!("moment objective at lambda = {x0:?}"))
            }))
        }
    };
    let sol = spec.equilibrium(&rep.x, theta, &data.margins, INNER_TOL, warm.into_inner())?;
    let converged = rep.converged || rep.grad_norm() <= 10.0 * opts.tol;
    if !converged {
        log::warn!(
            "moment matching stopped after {} iterations with comoment gap {:e}",
            rep.iterations,
            rep.grad_norm()
        );
    }
    Ok(finish(
        spec,
        Estimator::MomentMatch,
        rep.x,
        theta.to_vec(),
        sol.matching,
        data,
        converged,
        rep.iterations,
    ))
}
