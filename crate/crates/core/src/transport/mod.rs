//! Discrete optimal transport with pluggable backends.
//!
//! Problems are stated as surplus maximization between a supply vector and
//! a demand vector of equal total mass.

mod simplex;
mod sinkhorn;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use simplex::NetworkSimplex;
pub use sinkhorn::Sinkhorn;

/// A balanced transport problem. `allowed[(i, j)] == false` removes the arc.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
    pub surplus: DMatrix<f64>,
    pub allowed: Option<DMatrix<bool>>,
}

impl TransportProblem {
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, surplus: DMatrix<f64>) -> Result<Self> {
        let p = Self {
            supply,
            demand,
            surplus,
            allowed: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_allowed(mut self, allowed: DMatrix<bool>) -> Result<Self> {
        self.allowed = Some(allowed);
        self.validate()?;
        Ok(self)
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed.as_ref().is_none_or(|a| a[(i, j)])
    }

    fn validate(&self) -> Result<()> {
        let (p, q) = self.surplus.shape();
        if self.supply.len() != p {
            return Err(Error::dims("transport supply", p, self.supply.len()));
        }
        if self.demand.len() != q {
            return Err(Error::dims("transport demand", q, self.demand.len()));
        }
        if let Some(a) = &self.allowed {
            if a.shape() != (p, q) {
                return Err(Error::dims("transport mask rows", p, a.nrows()));
            }
        }
        let bad = self
            .supply
            .iter()
            .chain(&self.demand)
            .any(|v| !v.is_finite() || *v < 0.0);
        if bad {
            return Err(Error::invalid("transport margins", "must be finite and nonnegative"));
        }
        for i in 0..p {
            for j in 0..q {
                if self.is_allowed(i, j) && !self.surplus[(i, j)].is_finite() {
                    return Err(Error::NonFinite("transport surplus".into()));
                }
            }
        }
        let a: f64 = self.supply.iter().sum();
        let b: f64 = self.demand.iter().sum();
        if (a - b).abs() > 1e-9 * (1.0 + a.max(b)) {
            return Err(Error::invalid(
                "transport margins",
                format!("supply {a} and demand {b} differ"),
            ));
        }
        Ok(())
    }
}

/// Optimal plan, primal value, and dual potentials with
/// `f_i + g_j >= surplus_ij` on allowed arcs.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub plan: DMatrix<f64>,
    pub value: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// False when the optimal basis is degenerate, so that the duals are
    /// one choice among several.
    pub dual_unique: bool,
    /// Dual objective minus primal value; zero up to rounding for exact
    /// backends.
    pub duality_gap: f64,
    pub iterations: usize,
}

impl TransportSolution {
    pub fn dual_value(&self, problem: &TransportProblem) -> f64 {
        let a: f64 = problem.supply.iter().zip(&self.f).map(|(s, f)| s * f).sum();
        let b: f64 = problem.demand.iter().zip(&self.g).map(|(d, g)| d * g).sum();
        a + b
    }
}

pub trait TransportBackend: Send + Sync {
    fn solve(&self, problem: &TransportProblem) -> Result<TransportSolution>;
}

/// Problems with at most this many arcs go to the exact simplex by default.
pub const DENSE_LIMIT: usize = 1_000_000;

/// Exact simplex for moderate sizes, entropic approximation beyond.
pub fn default_backend(arcs: usize) -> Box<dyn TransportBackend> {
    if arcs <= DENSE_LIMIT {
        Box::new(NetworkSimplex::default())
    } else {
        Box::new(Sinkhorn::default())
    }
}

pub fn solve(problem: &TransportProblem) -> Result<TransportSolution> {
    if problem.allowed.is_some() {
        return NetworkSimplex::default().solve(problem);
    }
    default_backend(problem.supply.len() * problem.demand.len()).solve(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_3x3(s: &DMatrix<f64>) -> f64 {
        // Uniform margins on 3 x 3: the optimum is a permutation.
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        perms
            .iter()
            .map(|p| (0..3).map(|i| s[(i, p[i])]).sum::<f64>() / 3.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn both_backends_solve_assignment() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, 0.3, 0.1, 2.5, 1.7, 0.2, 0.9]);
        let p = TransportProblem::new(vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3], s.clone()).unwrap();
        let best = brute_force_3x3(&s);
        let exact = NetworkSimplex::default().solve(&p).unwrap();
        assert!((exact.value - best).abs() < 1e-12);
        assert!((exact.dual_value(&p) - best).abs() < 1e-12);
        let approx = Sinkhorn::default().solve(&p).unwrap();
        assert!((approx.value - best).abs() < 1e-3, "{} vs {}", approx.value, best);
        assert!(approx.duality_gap >= -1e-12);
    }

    #[test]
    fn unbalanced_is_rejected() {
        assert!(TransportProblem::new(vec![1.0], vec![2.0], DMatrix::zeros(1, 1)).is_err());
    }
}
