//! Equilibrium computation: given the surplus, the margins and the
//! heterogeneity families of both sides, find the stable matching.

mod choosiow;
mod ipfp;
mod lp;
mod minemax;

use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::choice::{ChoiceModel, Model, ModelSet};
use crate::error::{Error, Result};
use crate::market::{max_margin_residual, GroupUtilities, Margins, Matching, SurplusMatrix, SystematicUtilities};

pub use choosiow::{choosiow_objective, solve_f_choosiow};
pub use ipfp::{ipfp_objective, solve_ipfp_general, solve_ipfp_logit};
pub use lp::solve_lp_discrete;
pub use minemax::{minemax_objective, solve_minemax};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ipfp,
    Minemax,
    ChoosiowF,
    LpDiscrete,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ipfp, Method::Minemax, Method::ChoosiowF, Method::LpDiscrete];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ipfp => "ipfp",
            Method::Minemax => "minemax",
            Method::ChoosiowF => "choosiow_f",
            Method::LpDiscrete => "lp_discrete",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown method {s:?}")))
    }
}

/// Starting values carried over from a previous solve.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    /// Single women, used by IPFP.
    pub mu_0y: Option<DVector<f64>>,
    /// Men's systematic utilities, used by min-Emax.
    pub u: Option<DMatrix<f64>>,
    /// Group utilities, used by the convex dual.
    pub groups: Option<GroupUtilities>,
}

impl WarmStart {
    pub fn from_solution(sol: &Solution) -> Self {
        Self {
            mu_0y: Some(sol.matching.mu_0y.clone()),
            u: sol.systematic.as_ref().map(|s| s.u.clone()),
            groups: Some(sol.utilities.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Threshold on the largest absolute margin residual.
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    /// Geometric damping of IPFP half-steps; 1 means undamped.
    pub damping: f64,
    /// Run per-group IPFP projections on the rayon pool.
    pub parallel: bool,
    /// Keep the value of the convex dual after every half-step.
    pub record_objective: bool,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: crate::market::FEASIBILITY_TOL,
            max_iter: 100_000,
            method: Method::Ipfp,
            damping: 1.0,
            parallel: true,
            record_objective: false,
            warm_start: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }

    pub fn with_method(mut self, m: Method) -> Self {
        self.method = m;
        self
    }

    pub fn with_damping(mut self, d: f64) -> Self {
        self.damping = d;
        self
    }

    pub fn with_warm_start(mut self, w: WarmStart) -> Self {
        self.warm_start = Some(w);
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_objective = true;
        self
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("solver options", format!("tol {} must be positive", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("solver options", "max_iter must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("solver options", format!("damping {} outside (0, 1]", self.damping)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub social_welfare: f64,
    #[serde(serialize_with = "serialize_secs")]
    pub wall_time: Duration,
    /// Convex dual value after each half-step when recorded.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

fn serialize_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub matching: Matching,
    pub utilities: GroupUtilities,
    pub systematic: Option<SystematicUtilities>,
    pub report: SolveReport,
}

impl Solution {
    /// Error out unless the solver met its tolerance.
    pub fn require_converged(self) -> Result<Self> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                what: format!("{} solver", self.report.method),
                iterations: self.report.iterations,
                residual: self.report.final_residual,
            })
        }
    }
}

pub(crate) fn check_market(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, r: &Margins) -> Result<()> {
    phi.check_margins(r)?;
    if men.len() != r.nx() {
        return Err(Error::dims("men's models", r.nx(), men.len()));
    }
    if women.len() != r.ny() {
        return Err(Error::dims("women's models", r.ny(), women.len()));
    }
    for (x, m) in men.iter().enumerate() {
        if let Some(k) = m.n_alternatives() {
            if k != r.ny() {
                return Err(Error::dims(format!("alternatives of man group {x}"), r.ny(), k));
            }
        }
    }
    for (y, m) in women.iter().enumerate() {
        if let Some(k) = m.n_alternatives() {
            if k != r.nx() {
                return Err(Error::dims(format!("alternatives of woman group {y}"), r.nx(), k));
            }
        }
    }
    Ok(())
}

/// Generalized entropy of matching `-sum_x n_x G*_x(mu_x./n_x) - sum_y m_y H*_y(mu_.y/m_y)`.
pub fn matching_entropy(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, mu: &Matching, r: &Margins) -> Result<f64> {
    let mut e = 0.0;
    for x in 0..r.nx() {
        let n = r.n()[x];
        if n == 0.0 {
            continue;
        }
        let shares: Vec<f64> = mu.mu.row(x).iter().map(|v| v / n).collect();
        e -= n * men.get(x).conj_masked(&shares, &phi.row_allowed(x))?;
    }
    for y in 0..r.ny() {
        let m = r.m()[y];
        if m == 0.0 {
            continue;
        }
        let shares: Vec<f64> = mu.mu.column(y).iter().map(|v| v / m).collect();
        e -= m * women.get(y).conj_masked(&shares, &phi.col_allowed(y))?;
    }
    Ok(e)
}

/// Social welfare `sum mu_xy Phi_xy + E(mu, r)` of a feasible matching.
pub fn social_welfare(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, mu: &Matching, r: &Margins) -> Result<f64> {
    social_welfare_tol(men, women, phi, mu, r, 1e-6)
}

pub fn social_welfare_tol(
    men: &ModelSet,
    women: &ModelSet,
    phi: &SurplusMatrix,
    mu: &Matching,
    r: &Margins,
    tol: f64,
) -> Result<f64> {
    check_market(men, women, phi, r)?;
    let res = max_margin_residual(mu, r)?;
    if res > tol * (1.0 + r.total()) {
        return Err(Error::invalid("matching", format!("infeasible: margin residual {res:e}")));
    }
    for x in 0..r.nx() {
        for y in 0..r.ny() {
            if phi.is_forbidden(x, y) && mu.mu[(x, y)] > 0.0 {
                return Err(Error::invalid("matching", format!("positive mass on forbidden cell ({x}, {y})")));
            }
        }
    }
    let mut gain = 0.0;
    for x in 0..r.nx() {
        for y in 0..r.ny() {
            if phi.allowed(x, y) {
                gain += mu.mu[(x, y)] * phi.values()[(x, y)];
            }
        }
    }
    Ok(gain + matching_entropy(men, women, phi, mu, r)?)
}

/// IPFP for logit-type families, min-Emax for other smooth families, and
/// the linear program when both sides are discretized.
pub fn auto_method(men: &ModelSet, women: &ModelSet) -> Method {
    let discrete = |s: &ModelSet| s.iter().all(|m| matches!(m, Model::Discretized(_)));
    let loglinear = |m: &Model| -> bool {
        let mut m = m;
        while let Model::Scaled(s) = m {
            m = s.base();
        }
        matches!(m, Model::Logit(_) | Model::NestedLogit(_))
    };
    if discrete(men) && discrete(women) {
        Method::LpDiscrete
    } else if men.iter().chain(women.iter()).all(loglinear) {
        Method::Ipfp
    } else {
        Method::Minemax
    }
}

/// Solve with the method named in `opts`.
pub fn solve(men: &ModelSet, women: &ModelSet, phi: &SurplusMatrix, r: &Margins, opts: &SolveOptions) -> Result<Solution> {
    match opts.method {
        Method::Ipfp => {
            if men.all_logit() && women.all_logit() {
                solve_ipfp_logit(phi, r, opts)
            } else {
                solve_ipfp_general(men, women, phi, r, opts)
            }
        }
        Method::Minemax => solve_minemax(men, women, phi, r, opts),
        Method::ChoosiowF => {
            if !(men.all_logit() && women.all_logit()) {
                return Err(Error::Unsupported("the convex dual solver needs logit on both sides".into()));
            }
            solve_f_choosiow(phi, r, opts)
        }
        Method::LpDiscrete => {
            let dists = |set: &ModelSet, side: &str| -> Result<Vec<crate::choice::DiscretizedDistribution>> {
                set.iter()
                    .map(|m| match m {
                        Model::Discretized(d) => Ok(d.clone()),
                        other => Err(Error::Unsupported(format!(
                            "linear programming solver needs discretized {side} models, got {}",
                            other.family()
                        ))),
                    })
                    .collect()
            };
            solve_lp_discrete(&dists(men, "men's")?, &dists(women, "women's")?, phi, r, opts)
        }
    }
}

/// Largest absolute margin residual.
pub(crate) fn residual(mu: &Matching, r: &Margins) -> f64 {
    max_margin_residual(mu, r).unwrap_or(f64::INFINITY)
}

pub(crate) struct Clock(Instant);

impl Clock {
    pub fn start() -> Self {
        Clock(Instant::now())
    }

    pub fn elapsed(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Men's systematic utilities and group utilities from the men's shares.
pub(crate) fn utilities_from_u(
    men: &ModelSet,
    women: &ModelSet,
    phi: &SurplusMatrix,
    u: &DMatrix<f64>,
) -> Result<(SystematicUtilities, GroupUtilities)> {
    let v = DMatrix::from_fn(phi.nx(), phi.ny(), |x, y| {
        if phi.allowed(x, y) {
            phi.values()[(x, y)] - u[(x, y)]
        } else {
            0.0
        }
    });
    let gu = DVector::from_iterator(
        phi.nx(),
        (0..phi.nx())
            .map(|x| men.get(x).emax_masked(u.row(x).iter().cloned().collect::<Vec<_>>().as_slice(), &phi.row_allowed(x)))
            .collect::<Result<Vec<_>>>()?,
    );
    let gv = DVector::from_iterator(
        phi.ny(),
        (0..phi.ny())
            .map(|y| women.get(y).emax_masked(v.column(y).iter().cloned().collect::<Vec<_>>().as_slice(), &phi.col_allowed(y)))
            .collect::<Result<Vec<_>>>()?,
    );
    let mut u = u.clone();
    for x in 0..phi.nx() {
        for y in 0..phi.ny() {
            if phi.is_forbidden(x, y) {
                u[(x, y)] = 0.0;
            }
        }
    }
    Ok((SystematicUtilities { u, v }, GroupUtilities { u: gu, v: gv }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("simplex".parse::<Method>().is_err());
    }

    #[test]
    fn options_validate() {
        assert!(SolveOptions::default().with_tol(0.0).validate().is_err());
        assert!(SolveOptions::default().with_max_iter(0).validate().is_err());
        assert!(SolveOptions::default().with_damping(1.5).validate().is_err());
        assert!(SolveOptions::default().validate().is_ok());
    }
}
