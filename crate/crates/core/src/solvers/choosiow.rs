//! Logit markets through the smooth convex dual in the group utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market::{GroupUtilities, Margins, Matching, SurplusMatrix, SystematicUtilities};
use crate::optim::{lbfgs, LbfgsOptions};

use super::{residual, social_welfare, Clock, Method, Solution, SolveOptions, SolveReport};

/// `F(u, v) = sum_x n_x (u_x + e^{-u_x} - 1) + sum_y m_y (v_y + e^{-v_y} - 1) +
///  2 sum_xy sqrt(n_x m_y) exp((Phi_xy - u_x - v_y) / 2)`, with the
/// gradient written into `grad` (men first). The gradient is the vector of
/// margin residuals and the minimum value is the social welfare.
pub fn choosiow_objective(phi: &SurplusMatrix, r: &Margins, u: &[f64], v: &[f64], grad: &mut [f64]) -> f64 {
    let (nx, ny) = (r.nx(), r.ny());
    let (n, m) = (r.n(), r.m());
    let mut f = 0.0;
    for x in 0..nx {
        let e = (-u[x]).exp();
        f += n[x] * (u[x] + e - 1.0);
        grad[x] = n[x] * (1.0 - e);
    }
    for y in 0..ny {
        let e = (-v[y]).exp();
        f += m[y] * (v[y] + e - 1.0);
        grad[nx + y] = m[y] * (1.0 - e);
    }
    for x in 0..nx {
        for y in 0..ny {
            if phi.allowed(x, y) {
                let c = (n[x] * m[y]).sqrt() * ((phi.values()[(x, y)] - u[x] - v[y]) / 2.0).exp();
                f += 2.0 * c;
                grad[x] -= c;
                grad[nx + y] -= c;
            }
        }
    }
    f
}

fn matching_at(phi: &SurplusMatrix, r: &Margins, u: &[f64], v: &[f64]) -> Result<Matching> {
    let (n, m) = (r.n(), r.m());
    let mu = DMatrix::from_fn(r.nx(), r.ny(), |x, y| {
        if phi.allowed(x, y) {
            (n[x] * m[y]).sqrt() * ((phi.values()[(x, y)] - u[x] - v[y]) / 2.0).exp()
        } else {
            0.0
        }
    });
    let mu_x0 = DVector::from_fn(r.nx(), |x, _| n[x] * (-u[x]).exp());
    let mu_0y = DVector::from_fn(r.ny(), |y, _| m[y] * (-v[y]).exp());
    Matching::new(mu, mu_x0, mu_0y)
}

pub fn solve_f_choosiow(phi: &SurplusMatrix, r: &Margins, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    phi.check_margins(r)?;
    r.require_positive()?;
    let clock = Clock::start();
    let (nx, ny) = (r.nx(), r.ny());
    let mut z0 = vec![0.0; nx + ny];
    if let Some(g) = opts.warm_start.as_ref().and_then(|w| w.groups.as_ref()) {
        if g.u.len() == nx && g.v.len() == ny {
            z0[..nx].copy_from_slice(g.u.as_slice());
            z0[nx..].copy_from_slice(g.v.as_slice());
        }
    }
    let obj = |z: &[f64], g: &mut [f64]| choosiow_objective(phi, r, &z[..nx], &z[nx..], g);
    // Hessian diagonal: n e^{-u} + (1/2) sum_y mu_xy.
    let diag = |z: &[f64]| -> Vec<f64> {
        let (u, v) = z.split_at(nx);
        let mut d = vec![0.0; nx + ny];
        for x in 0..nx {
            d[x] = r.n()[x] * (-u[x]).exp();
        }
        for y in 0..ny {
            d[nx + y] = r.m()[y] * (-v[y]).exp();
        }
        for x in 0..nx {
            for y in 0..ny {
                if phi.allowed(x, y) {
                    let c = (r.n()[x] * r.m()[y]).sqrt() * ((phi.values()[(x, y)] - u[x] - v[y]) / 2.0).exp();
                    d[x] += 0.5 * c;
                    d[nx + y] += 0.5 * c;
                }
            }
        }
        d
    };
    let lopts = LbfgsOptions::default()
        .with_grad_tol(opts.tol)
        .with_max_iter(opts.max_iter)
        .with_max_step(1.0);
    let rep = lbfgs(obj, z0, Some(&diag), &lopts)?;
    if rep.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dual iterate".into()));
    }
    let (u, v) = rep.x.split_at(nx);
    let matching = matching_at(phi, r, u, v)?;
    let res = residual(&matching, r);
    let su = DMatrix::from_fn(nx, ny, |x, y| {
        if phi.allowed(x, y) {
            (matching.mu[(x, y)] / matching.mu_x0[x]).ln()
        } else {
            0.0
        }
    });
    let sv = DMatrix::from_fn(nx, ny, |x, y| if phi.allowed(x, y) { phi.values()[(x, y)] - su[(x, y)] } else { 0.0 });
    let men = crate::choice::ModelSet::logit(nx);
    let women = crate::choice::ModelSet::logit(ny);
    let social_welfare = social_welfare(&men, &women, phi, &matching, r).unwrap_or(rep.value);
    Ok(Solution {
        report: SolveReport {
            method: Method::ChoosiowF,
            converged: res <= opts.tol,
            iterations: rep.iterations,
            final_residual: res,
            social_welfare,
            wall_time: clock.elapsed(),
            objective_trace: Vec::new(),
        },
        matching,
        utilities: GroupUtilities {
            u: DVector::from_column_slice(u),
            v: DVector::from_column_slice(v),
        },
        systematic: Some(SystematicUtilities { u: su, v: sv }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let phi = SurplusMatrix::new(DMatrix::from_row_slice(2, 2, &[0.3, -0.4, 1.2, 0.0])).unwrap();
        let r = Margins::new(vec![1.0, 2.0], vec![1.5, 0.5]).unwrap();
        let z = [0.2, -0.1, 0.4, 0.3];
        let mut g = vec![0.0; 4];
        choosiow_objective(&phi, &r, &z[..2], &z[2..], &mut g);
        for i in 0..4 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let mut tmp = vec![0.0; 4];
            let fp = choosiow_objective(&phi, &r, &zp[..2], &zp[2..], &mut tmp);
            let fm = choosiow_objective(&phi, &r, &zm[..2], &zm[2..], &mut tmp);
            assert!(((fp - fm) / (2.0 * h) - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn minimum_is_welfare() {
        let phi = SurplusMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let sol = solve_f_choosiow(&phi, &r, &SolveOptions::default().with_tol(1e-12)).unwrap();
        assert!((sol.matching.mu[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((sol.utilities.u[0] - 2f64.ln()).abs() < 1e-11);
        let mut g = vec![0.0; 2];
        let f = choosiow_objective(&phi, &r, &[sol.utilities.u[0]], &[sol.utilities.v[0]], &mut g);
        assert!((f - sol.report.social_welfare).abs() < 1e-11);
    }
}
