//! Unconstrained minimization and scalar root finding.

use crate::error::{Error, Result};
use crate::numerics::max_abs;

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the max-norm of the gradient falls below this value.
    pub grad_tol: f64,
    pub max_line_search: usize,
    /// Largest max-norm of a trial displacement.
    pub max_step: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 10_000,
            grad_tol: 1e-9,
            max_line_search: 40,
            max_step: None,
        }
    }
}

impl LbfgsOptions {
    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }

    pub fn with_max_step(mut self, s: f64) -> Self {
        self.max_step = Some(s);
        self
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl LbfgsReport {
    pub fn grad_norm(&self) -> f64 {
        max_abs(&self.grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with backtracking line search.
///
/// `objective(x, grad)` returns the value and writes the gradient. The
/// optional `diag(x)` returns a positive estimate of the Hessian diagonal,
/// used as the initial inverse Hessian in the two-loop recursion.
pub fn lbfgs<F>(
    mut objective: F,
    x0: Vec<f64>,
    diag: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    opts: &LbfgsOptions,
) -> Result<LbfgsReport>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut evaluations = 1;
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the starting point".into()));
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = max_abs(&g) <= opts.grad_tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        // Two-loop recursion.
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        match diag {
            Some(d) => {
                let h = d(&x);
                for (qj, hj) in q.iter_mut().zip(&h) {
                    *qj /= hj.max(1e-300);
                }
            }
            None => {
                let gamma = if m > 0 {
                    dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1])
                } else {
                    1.0 / max_abs(&g).max(1.0)
                };
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // Not a descent direction: restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = g.iter().map(|v| -v / max_abs(&g).max(1.0)).collect();
            slope = dot(&dir, &g);
        }
        let gnorm = max_abs(&g);
        let mut step = match opts.max_step {
            Some(cap) => (cap / max_abs(&dir).max(1e-300)).min(1.0),
            None => 1.0,
        };
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..opts.max_line_search {
            for i in 0..n {
                xt[i] = x[i] + step * dir[i];
            }
            let ft = objective(&xt, &mut gt);
            evaluations += 1;
            if ft.is_finite() {
                let armijo = ft <= f + 1e-4 * step * slope;
                // Near the optimum value differences drown in rounding; fall
                // back on the gradient norm.
                let flat = (ft - f).abs() <= 1e-13 * (1.0 + f.abs()) && max_abs(&gt) < gnorm;
                if armijo || flat {
                    accepted = true;
                    f_new = ft;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = f_new;
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        converged = max_abs(&g) <= opts.grad_tol;
    }
    Ok(LbfgsReport {
        x,
        value: f,
        grad: g,
        iterations,
        evaluations,
        converged,
    })
}

/// Root of a continuous increasing function on `[lo, hi]` by Newton steps
/// safeguarded with bisection. `f` returns the value and derivative.
pub fn increasing_root<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (flo, _) = f(lo);
    let (fhi, _) = f(hi);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::invalid(
            "root bracket",
            format!("f({lo}) = {flo}, f({hi}) = {fhi} do not bracket a root"),
        ));
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= xtol * (1.0 + x.abs()) || hi - lo <= xtol * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let obj = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = lbfgs(obj, vec![-1.2, 1.0], None, &LbfgsOptions::default().with_grad_tol(1e-10)).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn preconditioned_quadratic() {
        let d = [1.0, 1e4, 1e-2];
        let obj = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..3 {
                g[i] = d[i] * (x[i] - 1.0);
                f += 0.5 * d[i] * (x[i] - 1.0).powi(2);
            }
            f
        };
        let diag = |_: &[f64]| d.to_vec();
        let r = lbfgs(obj, vec![0.0; 3], Some(&diag), &LbfgsOptions::default()).unwrap();
        assert!(r.converged && r.iterations <= 2);
    }

    #[test]
    fn root_of_cubic() {
        let r = increasing_root(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 2.0, 1e-15, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
        assert!(increasing_root(|x| (x + 5.0, 1.0), 0.0, 1.0, 1e-12, 10).is_err());
    }
}
