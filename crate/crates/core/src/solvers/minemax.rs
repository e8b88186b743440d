//! Direct minimization of the total expected utility over the men's
//! systematic utilities, with the women's utilities set to `Phi - U`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::choice::{ChoiceModel, ModelSet};
use crate::error::{Error, Result};
use crate::market::{Margins, SurplusMatrix};
use crate::optim::{lbfgs, LbfgsOptions};

use super::ipfp::men_side_matching;
use super::{check_market, residual, social_welfare, utilities_from_u, Clock, Method, Solution, SolveOptions, SolveReport};

struct Layout {
    cells: Vec<(usize, usize)>,
}

impl Layout {
    fn new(phi: &SurplusMatrix) -> Self {
        // Column-major, matching the matrix storage.
        let mut cells = Vec::new();
        for y in 0..phi.ny() {
            for x in 0..phi.nx() {
                if phi.allowed(x, y) {
                    cells.push((x, y));
                }
            }
        }
        Self { cells }
    }

    fn expand(&self, z: &[f64], nx: usize, ny: usize) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(nx, ny);
        for (k, (x, y)) in self.cells.iter().enumerate() {
            u[(*x, *y)] = z[k];
        }
        u
    }
}

/// Per-group values and choice probabilities at `U`.
struct Evaluation {
    value: f64,
    /// `n_x P_x(U)` and `m_y Q_y(Phi - U)`, as `|X| x |Y|` matrices.
    men: DMatrix<f64>,
    women: DMatrix<f64>,
}

fn evaluate(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, r: &Margins, u: &DMatrix<f64>, parallel: bool) -> Result<Evaluation> {
    let (nx, ny) = (r.nx(), r.ny());
    let pv = phi.values();
    // Rows of U are columns of its transpose, which keeps reads contiguous.
    let ut = u.transpose();
    let row = |x: usize| -> Result<(f64, Vec<f64>)> {
        let ux = ut.column(x);
        let allowed = phi.row_allowed(x);
        let model = men.get(x);
        model.emax_probs_masked(ux.as_slice(), &allowed)
    };
    let col = |y: usize| -> Result<(f64, Vec<f64>)> {
        let vy: Vec<f64> = (0..nx)
            .map(|x| if phi.allowed(x, y) { pv[(x, y)] - u[(x, y)] } else { 0.0 })
            .collect();
        let allowed = phi.col_allowed(y);
        let model = women.get(y);
        model.emax_probs_masked(&vy, &allowed)
    };
    let (rows, cols): (Vec<_>, Vec<_>) = if parallel {
        ((0..nx).into_par_iter().map(row).collect(), (0..ny).into_par_iter().map(col).collect())
    } else {
        ((0..nx).map(row).collect(), (0..ny).map(col).collect())
    };
    let mut value = 0.0;
    let mut pm_t = DMatrix::zeros(ny, nx);
    let mut pw = DMatrix::zeros(nx, ny);
    for (x, rw) in rows.into_iter().enumerate() {
        let (g, p) = rw?;
        value += r.n()[x] * g;
        for (dst, p) in pm_t.column_mut(x).iter_mut().zip(&p) {
            *dst = r.n()[x] * p;
        }
    }
    for (y, cl) in cols.into_iter().enumerate() {
        let (h, q) = cl?;
        value += r.m()[y] * h;
        for (dst, q) in pw.column_mut(y).iter_mut().zip(&q) {
            *dst = r.m()[y] * q;
        }
    }
    let pm = pm_t.transpose();
    Ok(Evaluation { value, men: pm, women: pw })
}

/// `sum_x n_x G_x(U_x.) + sum_y m_y H_y(Phi_.y - U_.y)`.
pub fn minemax_objective(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, r: &Margins, u: &DMatrix<f64>) -> Result<f64> {
    check_market(men, women, phi, r)?;
    Ok(evaluate(men, women, phi, r, u, false)?.value)
}

pub fn solve_minemax(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, r: &Margins, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    check_market(men, women, phi, r)?;
    if let Some(m) = men.iter().chain(women.iter()).find(|m| !m.has_full_support()) {
        return Err(Error::Unsupported(format!(
            "min-Emax needs smooth heterogeneity, got {}",
            m.family()
        )));
    }
    let clock = Clock::start();
    let (nx, ny) = (r.nx(), r.ny());
    let layout = Layout::new(phi);
    let parallel = opts.parallel && nx * ny >= 4096;
    let start = match opts.warm_start.as_ref().and_then(|w| w.u.as_ref()) {
        Some(u) if u.nrows() == nx && u.ncols() == ny => u.clone(),
        _ => phi.values() / 2.0,
    };
    let z0: Vec<f64> = layout.cells.iter().map(|c| start[*c]).collect();
    let mut failure: Option<Error> = None;
    let diag_cell = std::cell::RefCell::new(vec![1.0; layout.cells.len()]);
    let obj = |z: &[f64], g: &mut [f64]| -> f64 {
        let u = layout.expand(z, nx, ny);
        match evaluate(men, women, phi, r, &u, parallel) {
            Ok(e) => {
                let mut d = diag_cell.borrow_mut();
                for (k, c) in layout.cells.iter().enumerate() {
                    g[k] = e.men[*c] - e.women[*c];
                    let p = e.men[*c] / r.n()[c.0];
                    let q = e.women[*c] / r.m()[c.1];
                    d[k] = (r.n()[c.0] * p * (1.0 - p) + r.m()[c.1] * q * (1.0 - q)).max(1e-12);
                }
                e.value
            }
            Err(err) => {
                failure.get_or_insert(err);
                f64::NAN
            }
        }
    };
    // The preconditioner reuses the last evaluated curvature.
    let diag = |_: &[f64]| diag_cell.borrow().clone();
    let scale = nx.max(ny).max(1) as f64;
    let lopts = LbfgsOptions::default()
        .with_grad_tol(opts.tol / scale)
        .with_max_iter(opts.max_iter)
        .with_max_step(1.0);
    let rep = lbfgs(obj, z0, Some(&diag), &lopts);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let rep = rep?;
    log::debug!("min-Emax: {} iterations, {} evaluations", rep.iterations, rep.evaluations);
    let u = layout.expand(&rep.x, nx, ny);
    let (matching, gap) = men_side_matching(men, women, phi, r, &u)?;
    let res = residual(&matching, r).max(gap);
    let (systematic, utilities) = utilities_from_u(men, women, phi, &u)?;
    let social_welfare = social_welfare(men, women, phi, &matching, r).unwrap_or(f64::NAN);
    Ok(Solution {
        report: SolveReport {
            method: Method::Minemax,
            converged: res <= opts.tol,
            iterations: rep.iterations,
            final_residual: res,
            social_welfare,
            wall_time: clock.elapsed(),
            objective_trace: Vec::new(),
        },
        matching,
        utilities,
        systematic: Some(systematic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{FcMnl, Model};
    use crate::solvers::solve_ipfp_logit;

    #[test]
    fn agrees_with_ipfp_on_logit() {
        let phi = SurplusMatrix::new(DMatrix::from_row_slice(2, 3, &[0.5, 1.0, -0.2, 0.1, 0.4, 0.9])).unwrap();
        let r = Margins::new(vec![1.0, 1.5], vec![0.8, 0.9, 1.1]).unwrap();
        let a = solve_ipfp_logit(&phi, &r, &SolveOptions::default().with_tol(1e-12)).unwrap();
        let b = solve_minemax(&ModelSet::logit(2), &ModelSet::logit(3), &phi, &r, &SolveOptions::default()).unwrap();
        assert!(b.report.converged, "{:?}", b.report);
        assert!(a.matching.max_abs_diff(&b.matching) < 1e-8);
        assert!((a.report.social_welfare - b.report.social_welfare).abs() < 1e-8);
    }

    #[test]
    fn rejects_discrete_models() {
        let phi = SurplusMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let d = crate::choice::DiscretizedDistribution::point(vec![0.0, 0.0]).unwrap();
        let men = ModelSet::uniform(Model::Discretized(d), 1);
        assert!(matches!(
            solve_minemax(&men, &ModelSet::logit(1), &phi, &r, &SolveOptions::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fcmnl_market_clears() {
        let phi = SurplusMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.2, 0.1])).unwrap();
        let r = Margins::new(vec![1.0, 1.5], vec![0.8, 1.1]).unwrap();
        let f = FcMnl::uniform(2, 0.5, 0.8, 1.1).unwrap();
        let men = ModelSet::uniform(Model::FcMnl(f), 2);
        let sol = solve_minemax(&men, &ModelSet::logit(2), &phi, &r, &SolveOptions::default()).unwrap();
        assert!(sol.report.converged);
    }
}
