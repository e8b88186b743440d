//! Entropic approximation of the transport problem in the log domain.
//!
//! The regularization is annealed geometrically down to `epsilon`; the final
//! plan is rounded onto the feasible set, and a feasible dual is obtained by
//! alternating c-transforms, so that the reported gap bounds the error.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::logsumexp;

use super::{TransportBackend, TransportProblem, TransportSolution};

#[derive(Clone, Debug)]
pub struct Sinkhorn {
    /// Final regularization relative to the surplus range.
    pub epsilon: f64,
    /// Initial regularization relative to the surplus range.
    pub epsilon_start: f64,
    /// Multiplicative annealing factor per stage.
    pub decay: f64,
    /// Marginal violation (in mass units) ending each stage.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Sinkhorn {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            epsilon_start: 1.0,
            decay: 0.5,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl TransportBackend for Sinkhorn {
    fn solve(&self, problem: &TransportProblem) -> Result<TransportSolution> {
        let (p, q) = problem.surplus.shape();
        if problem.allowed.as_ref().is_some_and(|m| m.iter().any(|a| !a)) {
            return Err(Error::Unsupported(
                "entropic transport backend does not take arc masks".into(),
            ));
        }
        let s = &problem.surplus;
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for i in 0..p {
            for j in 0..q {
                if problem.is_allowed(i, j) {
                    hi = hi.max(s[(i, j)]);
                    lo = lo.min(s[(i, j)]);
                }
            }
        }
        if !hi.is_finite() {
            return Err(Error::Lp("every arc is masked".into()));
        }
        let range = (hi - lo).max(1e-12);
        let la: Vec<f64> = problem.supply.iter().map(|v| v.ln()).collect();
        let lb: Vec<f64> = problem.demand.iter().map(|v| v.ln()).collect();
        let cost = |i: usize, j: usize| -> f64 {
            if problem.is_allowed(i, j) {
                s[(i, j)]
            } else {
                f64::NEG_INFINITY
            }
        };
        // log plan = (S_ij - f_i - g_j) / eps
        let mut f = vec![0.0; p];
        let mut g = vec![0.0; q];
        let mut eps = self.epsilon_start * range;
        let target = self.epsilon * range;
        let mut iterations = 0;
        let mut buf = Vec::new();
        loop {
            for _ in 0..self.max_iter {
                iterations += 1;
                for i in 0..p {
                    if problem.supply[i] == 0.0 {
                        continue;
                    }
                    buf.clear();
                    buf.extend((0..q).filter(|j| problem.demand[*j] > 0.0).map(|j| (cost(i, j) - g[j]) / eps));
                    f[i] = eps * (logsumexp(&buf) - la[i]);
                }
                let mut err: f64 = 0.0;
                for j in 0..q {
                    if problem.demand[j] == 0.0 {
                        continue;
                    }
                    buf.clear();
                    buf.extend((0..p).filter(|i| problem.supply[*i] > 0.0).map(|i| (cost(i, j) - f[i]) / eps));
                    g[j] = eps * (logsumexp(&buf) - lb[j]);
                }
                for i in 0..p {
                    if problem.supply[i] == 0.0 {
                        continue;
                    }
                    let row: f64 = (0..q)
                        .filter(|j| problem.demand[*j] > 0.0)
                        .map(|j| ((cost(i, j) - f[i] - g[j]) / eps).exp())
                        .sum();
                    err += (row - problem.supply[i]).abs();
                }
                if err <= self.tol {
                    break;
                }
            }
            if eps <= target {
                break;
            }
            eps = (eps * self.decay).max(target);
        }
        let mut plan = DMatrix::from_fn(p, q, |i, j| {
            if problem.supply[i] == 0.0 || problem.demand[j] == 0.0 {
                0.0
            } else {
                ((cost(i, j) - f[i] - g[j]) / eps).exp()
            }
        });
        round_to_margins(&mut plan, &problem.supply, &problem.demand);
        let value: f64 = (0..p)
            .flat_map(|i| (0..q).map(move |j| (i, j)))
            .filter(|(i, j)| plan[(*i, *j)] > 0.0)
            .map(|(i, j)| plan[(i, j)] * s[(i, j)])
            .sum();
        // Feasible dual by c-transforms: g_j = max_i S_ij - f_i, then f_i.
        let mut gd = vec![0.0; q];
        for (j, gj) in gd.iter_mut().enumerate() {
            *gj = (0..p).map(|i| cost(i, j) - f[i]).fold(f64::NEG_INFINITY, f64::max);
            if !gj.is_finite() {
                *gj = 0.0;
            }
        }
        let fd: Vec<f64> = (0..p)
            .map(|i| {
                let v = (0..q).map(|j| cost(i, j) - gd[j]).fold(f64::NEG_INFINITY, f64::max);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        let mut sol = TransportSolution {
            plan,
            value,
            f: fd,
            g: gd,
            dual_unique: false,
            duality_gap: 0.0,
            iterations,
        };
        sol.duality_gap = sol.dual_value(problem) - value;
        Ok(sol)
    }
}

/// Project a nonnegative plan onto the transport polytope: scale down rows
/// and columns that exceed their margin, then fill the deficit with a rank
/// one correction.
fn round_to_margins(plan: &mut DMatrix<f64>, a: &[f64], b: &[f64]) {
    let (p, q) = plan.shape();
    for i in 0..p {
        let r = plan.row(i).sum();
        if r > a[i] && r > 0.0 {
            let c = a[i] / r;
            plan.row_mut(i).scale_mut(c);
        }
    }
    for j in 0..q {
        let c = plan.column(j).sum();
        if c > b[j] && c > 0.0 {
            let k = b[j] / c;
            plan.column_mut(j).scale_mut(k);
        }
    }
    let da: Vec<f64> = (0..p).map(|i| (a[i] - plan.row(i).sum()).max(0.0)).collect();
    let db: Vec<f64> = (0..q).map(|j| (b[j] - plan.column(j).sum()).max(0.0)).collect();
    let total: f64 = da.iter().sum();
    if total > 0.0 {
        for i in 0..p {
            for j in 0..q {
                plan[(i, j)] += da[i] * db[j] / total;
            }
        }
    }
}
