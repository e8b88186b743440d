//! Markets with finitely supported errors on both sides, solved as one
//! transport problem between individual types.

use nalgebra::{DMatrix, DVector};

use crate::choice::DiscretizedDistribution;
use crate::error::{Error, Result};
use crate::market::{GroupUtilities, Margins, Matching, SurplusMatrix};
use crate::transport::{self, TransportProblem};

use super::{residual, Clock, Method, Solution, SolveOptions, SolveReport};

/// Men of group `x` with error draw `k` supply `n_x w_k` and a dummy
/// supplies the women's total; symmetrically for women and a dummy that
/// absorbs single men. A man of type `(x, k)` and a woman of type `(y, l)`
/// create `eps^k_{xy} + eta^l_{xy} + Phi_xy`.
pub fn solve_lp_discrete(
    men: &[DiscretizedDistribution],
    women: &[DiscretizedDistribution],
    phi: &SurplusMatrix,
    r: &Margins,
    opts: &SolveOptions,
) -> Result<Solution> {
    opts.validate()?;
    phi.check_margins(r)?;
    let (nx, ny) = (r.nx(), r.ny());
    if men.len() != nx {
        return Err(Error::dims("men's distributions", nx, men.len()));
    }
    if women.len() != ny {
        return Err(Error::dims("women's distributions", ny, women.len()));
    }
    for (x, d) in men.iter().enumerate() {
        if d.dim() != ny + 1 {
            return Err(Error::dims(format!("support dimension of man group {x}"), ny + 1, d.dim()));
        }
    }
    for (y, d) in women.iter().enumerate() {
        if d.dim() != nx + 1 {
            return Err(Error::dims(format!("support dimension of woman group {y}"), nx + 1, d.dim()));
        }
    }
    let clock = Clock::start();
    let (n, m) = (r.n(), r.m());
    let mut row_of = Vec::new();
    let mut supply = Vec::new();
    for (x, d) in men.iter().enumerate() {
        for (k, w) in d.weights().iter().enumerate() {
            row_of.push((x, k));
            supply.push(n[x] * w);
        }
    }
    let dummy_s = supply.len();
    supply.push(m.sum());
    let mut col_of = Vec::new();
    let mut demand = Vec::new();
    for (y, d) in women.iter().enumerate() {
        for (l, w) in d.weights().iter().enumerate() {
            col_of.push((y, l));
            demand.push(m[y] * w);
        }
    }
    let dummy_d = demand.len();
    demand.push(n.sum());
    let (p, q) = (supply.len(), demand.len());
    let pv = phi.values();
    let surplus = DMatrix::from_fn(p, q, |i, j| match (i == dummy_s, j == dummy_d) {
        (true, true) => 0.0,
        (false, true) => {
            let (x, k) = row_of[i];
            men[x].support()[(k, 0)]
        }
        (true, false) => {
            let (y, l) = col_of[j];
            women[y].support()[(l, 0)]
        }
        (false, false) => {
            let (x, k) = row_of[i];
            let (y, l) = col_of[j];
            if phi.allowed(x, y) {
                men[x].support()[(k, y + 1)] + women[y].support()[(l, x + 1)] + pv[(x, y)]
            } else {
                0.0
            }
        }
    });
    let mut problem = TransportProblem::new(supply, demand, surplus)?;
    if phi.has_forbidden() {
        let allowed = DMatrix::from_fn(p, q, |i, j| {
            if i == dummy_s || j == dummy_d {
                true
            } else {
                phi.allowed(row_of[i].0, col_of[j].0)
            }
        });
        problem = problem.with_allowed(allowed)?;
    }
    let sol = transport::solve(&problem)?;
    let mut mu = DMatrix::zeros(nx, ny);
    let mut mu_x0 = DVector::zeros(nx);
    let mut mu_0y = DVector::zeros(ny);
    for i in 0..p {
        for j in 0..q {
            let f = sol.plan[(i, j)];
            if f == 0.0 {
                continue;
            }
            match (i == dummy_s, j == dummy_d) {
                (true, true) => {}
                (false, true) => mu_x0[row_of[i].0] += f,
                (true, false) => mu_0y[col_of[j].0] += f,
                (false, false) => mu[(row_of[i].0, col_of[j].0)] += f,
            }
        }
    }
    let matching = Matching::new(mu, mu_x0, mu_0y)?;
    let mut u = DVector::zeros(nx);
    for (i, (x, k)) in row_of.iter().enumerate() {
        u[*x] += men[*x].weights()[*k] * (sol.f[i] + sol.g[dummy_d]);
    }
    let mut v = DVector::zeros(ny);
    for (j, (y, l)) in col_of.iter().enumerate() {
        v[*y] += women[*y].weights()[*l] * (sol.g[j] + sol.f[dummy_s]);
    }
    let res = residual(&matching, r);
    Ok(Solution {
        report: SolveReport {
            method: Method::LpDiscrete,
            converged: res <= opts.tol.max(1e-12 * (1.0 + r.total())),
            iterations: sol.iterations,
            final_residual: res,
            social_welfare: sol.value,
            wall_time: clock.elapsed(),
            objective_trace: Vec::new(),
        },
        matching,
        utilities: GroupUtilities { u, v },
        systematic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_heterogeneity_matches_everyone_on_positive_surplus() {
        let phi = SurplusMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let r = Margins::new(vec![2.0], vec![1.0]).unwrap();
        let men = vec![DiscretizedDistribution::point(vec![0.0, 0.0]).unwrap()];
        let women = vec![DiscretizedDistribution::point(vec![0.0, 0.0]).unwrap()];
        let sol = solve_lp_discrete(&men, &women, &phi, &r, &SolveOptions::default()).unwrap();
        assert!((sol.matching.mu[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.matching.mu_x0[0] - 1.0).abs() < 1e-12);
        assert!((sol.report.social_welfare - 1.0).abs() < 1e-12);
        assert!((sol.utilities.dual_value(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forbidden_pairs_stay_single() {
        let phi = SurplusMatrix::with_mask(
            DMatrix::from_element(2, 2, 3.0),
            DMatrix::from_row_slice(2, 2, &[false, true, true, false]),
        )
        .unwrap();
        let r = Margins::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let men = vec![DiscretizedDistribution::gumbel_quantiles(20, 3, 1).unwrap(); 2];
        let women = vec![DiscretizedDistribution::gumbel_quantiles(20, 3, 2).unwrap(); 2];
        let sol = solve_lp_discrete(&men, &women, &phi, &r, &SolveOptions::default()).unwrap();
        assert_eq!(sol.matching.mu[(0, 1)], 0.0);
        assert_eq!(sol.matching.mu[(1, 0)], 0.0);
        assert!(sol.report.converged);
    }
}
