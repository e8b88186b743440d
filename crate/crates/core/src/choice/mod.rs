//! Per-group heterogeneity families.
//!
//! Every family works on the inside alternatives only: a utility vector
//! `u` has one entry per potential partner group and the outside option is
//! pinned at zero. Shares `mu` are sub-probability vectors whose complement
//! is the outside share.

pub mod discretized;
pub mod gev;
pub mod logit;
pub mod nested;
pub mod rc;
pub mod scaled;
pub mod spec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::max_abs;

pub use discretized::{conj_ot, DiscretizedDistribution, OtDual};
pub use gev::{FcMnl, GevGenerator, GevModel};
pub use logit::Logit;
pub use nested::NestedLogit;
pub use rc::{conj_rc, RcLogit};
pub use scaled::ScaledModel;
pub use spec::{ModelSet, ModelSpec};

/// Tolerance on `sum(mu) - 1` before shares are declared infeasible.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// The four evaluations every heterogeneity family provides.
///
/// `emax` and `probs` accept any finite utility vector. `conj_masked` and
/// `invert_masked` take a mask of available alternatives; unavailable ones
/// must carry zero share and receive a zero utility in the output.
pub trait ChoiceModel {
    fn emax(&self, u: &[f64]) -> Result<f64>;

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>>;

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64>;

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>>;

    /// Number of inside alternatives when the family fixes it.
    fn n_alternatives(&self) -> Option<usize> {
        None
    }

    fn conj(&self, mu: &[f64]) -> Result<f64> {
        self.conj_masked(mu, &vec![true; mu.len()])
    }

    fn invert(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.invert_masked(mu, &vec![true; mu.len()])
    }

    fn emax_masked(&self, u: &[f64], allowed: &[bool]) -> Result<f64> {
        match pinned(u, allowed) {
            Some(w) => self.emax(&w),
            None => self.emax(u),
        }
    }

    fn probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        let mut p = match pinned(u, allowed) {
            Some(w) => self.probs(&w)?,
            None => self.probs(u)?,
        };
        for (pi, a) in p.iter_mut().zip(allowed) {
            if !a {
                *pi = 0.0;
            }
        }
        Ok(p)
    }

    /// `emax_masked` and `probs_masked` together.
    fn emax_probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<(f64, Vec<f64>)> {
        Ok((self.emax_masked(u, allowed)?, self.probs_masked(u, allowed)?))
    }
}

/// Value substituted for unavailable alternatives: `-100 (1 + max |u|)`
/// over the available entries.
pub fn large_for(u: &[f64], allowed: &[bool]) -> f64 {
    let m = u
        .iter()
        .zip(allowed)
        .filter(|(_, a)| **a)
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    100.0 * (1.0 + m)
}

fn pinned(u: &[f64], allowed: &[bool]) -> Option<Vec<f64>> {
    if allowed.iter().all(|a| *a) {
        return None;
    }
    let large = large_for(u, allowed);
    Some(
        u.iter()
            .zip(allowed)
            .map(|(v, a)| if *a { *v } else { -large })
            .collect(),
    )
}

pub(crate) fn check_utilities(u: &[f64]) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("utility vector".into()));
    }
    Ok(())
}

pub(crate) fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Validate shares against the mask and return the outside share.
pub(crate) fn check_shares(mu: &[f64], allowed: &[bool]) -> Result<f64> {
    if mu.len() != allowed.len() {
        return Err(Error::dims("availability mask", mu.len(), allowed.len()));
    }
    let mut sum = 0.0;
    for (y, (m, a)) in mu.iter().zip(allowed).enumerate() {
        if !m.is_finite() || *m < 0.0 {
            return Err(Error::invalid("choice probabilities", format!("entry {y} is {m}")));
        }
        if !a && *m > 0.0 {
            return Err(Error::invalid(
                "choice probabilities",
                format!("unavailable alternative {y} has share {m}"),
            ));
        }
        sum += m;
    }
    if sum > 1.0 + SIMPLEX_TOL {
        return Err(Error::InfeasibleProbabilities { sum });
    }
    Ok((1.0 - sum).max(0.0))
}

pub(crate) fn check_interior(mu: &[f64], mu0: f64, allowed: &[bool]) -> Result<()> {
    let mut bad: Vec<String> = mu
        .iter()
        .zip(allowed)
        .enumerate()
        .filter(|(_, (m, a))| **a && **m <= 0.0)
        .map(|(y, _)| y.to_string())
        .collect();
    if mu0 <= 0.0 {
        bad.push("outside".into());
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(
            "choice probabilities",
            format!("boundary shares at alternatives [{}]", bad.join(", ")),
        ))
    }
}

pub(crate) fn check_mask_len(n: usize, allowed: &[bool]) -> Result<()> {
    if n != allowed.len() {
        return Err(Error::dims("availability mask", n, allowed.len()));
    }
    Ok(())
}

/// Solve `probs(u) = mu` by damped Newton on `log probs(u) - log mu` over the
/// available alternatives, with a finite-difference Jacobian. Unavailable
/// alternatives are pinned at a large negative utility, and the returned
/// vector keeps that pinned value.
pub(crate) fn newton_invert<M: ChoiceModel + ?Sized>(
    model: &M,
    mu: &[f64],
    allowed: &[bool],
    start: Vec<f64>,
) -> Result<Vec<f64>> {
    let mu0 = check_shares(mu, allowed)?;
    check_interior(mu, mu0, allowed)?;
    let idx: Vec<usize> = (0..mu.len()).filter(|y| allowed[*y]).collect();
    let mut u = start;
    if idx.is_empty() {
        return Ok(u);
    }
    let pin = -large_for(&u, allowed) - 50.0;
    for (y, a) in allowed.iter().enumerate() {
        if !a {
            u[y] = pin;
        }
    }
    let target: Vec<f64> = idx.iter().map(|y| mu[*y].ln()).collect();
    let resid = |u: &[f64]| -> Result<Vec<f64>> {
        let p = model.probs(u)?;
        Ok(idx
            .iter()
            .zip(&target)
            .map(|(y, t)| p[*y].max(f64::MIN_POSITIVE).ln() - t)
            .collect())
    };
    let mut r = resid(&u)?;
    let mut norm = max_abs(&r);
    let k = idx.len();
    let mut alpha: f64 = 1.0;
    for _ in 0..200 {
        if norm <= 1e-13 {
            return Ok(u);
        }
        let mut jac = DMatrix::zeros(k, k);
        for (c, y) in idx.iter().enumerate() {
            let h = 1e-6 * (1.0 + u[*y].abs());
            let mut up = u.clone();
            up[*y] += h;
            let mut dn = u.clone();
            dn[*y] -= h;
            let rp = resid(&up)?;
            let rd = resid(&dn)?;
            for row in 0..k {
                jac[(row, c)] = (rp[row] - rd[row]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(k, r.iter().map(|v| -v));
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) => s,
            None => jac
                .pseudo_inverse(1e-14)
                .map_err(|e| Error::invalid("newton step", e))?
                * rhs,
        };
        alpha = (alpha * 2.0).min(1.0);
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = u.clone();
            for (c, y) in idx.iter().enumerate() {
                trial[*y] += alpha * step[c];
            }
            let rt = resid(&trial)?;
            let nt = max_abs(&rt);
            if nt < norm {
                u = trial;
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm <= 1e-10 {
        return Ok(u);
    }
    Err(Error::NoConvergence {
        what: "choice probability inversion".into(),
        iterations: 200,
        residual: norm,
    })
}

/// Legendre value `mu . u - emax(u)` at a pinned inversion output.
pub(crate) fn legendre_value<M: ChoiceModel + ?Sized>(model: &M, mu: &[f64], u: &[f64]) -> Result<f64> {
    let dot: f64 = mu.iter().zip(u).map(|(m, v)| if *m > 0.0 { m * v } else { 0.0 }).sum();
    Ok(dot - model.emax(u)?)
}

pub(crate) fn zero_masked(mut u: Vec<f64>, allowed: &[bool]) -> Vec<f64> {
    for (v, a) in u.iter_mut().zip(allowed) {
        if !a {
            *v = 0.0;
        }
    }
    u
}

/// A heterogeneity family chosen at run time.
#[derive(Clone, Debug)]
pub enum Model {
    Logit(Logit),
    NestedLogit(NestedLogit),
    Scaled(ScaledModel),
    Gev(GevModel),
    FcMnl(FcMnl),
    Discretized(DiscretizedDistribution),
    RcLogit(RcLogit),
}

impl Model {
    pub fn logit() -> Self {
        Model::Logit(Logit)
    }

    /// Logit with errors scaled by `sigma`.
    pub fn scaled_logit(sigma: f64) -> Result<Self> {
        Ok(Model::Scaled(ScaledModel::new(Model::logit(), sigma)?))
    }

    /// Scale of a logit or scaled-logit model.
    pub fn logit_scale(&self) -> Option<f64> {
        match self {
            Model::Logit(_) => Some(1.0),
            Model::Scaled(s) => s.base().logit_scale().map(|b| b * s.scale()),
            _ => None,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Model::Logit(_) => "logit",
            Model::NestedLogit(_) => "nested_logit",
            Model::Scaled(_) => "scaled",
            Model::Gev(_) => "gev",
            Model::FcMnl(_) => "fcmnl",
            Model::Discretized(_) => "discretized",
            Model::RcLogit(_) => "rc_logit",
        }
    }

    /// True when every share vector in the open simplex is attained.
    pub fn has_full_support(&self) -> bool {
        match self {
            Model::Discretized(_) => false,
            Model::RcLogit(r) => r.temperature() > 0.0,
            Model::Scaled(s) => s.base().has_full_support(),
            _ => true,
        }
    }

    fn inner(&self) -> &dyn ChoiceModel {
        match self {
            Model::Logit(m) => m,
            Model::NestedLogit(m) => m,
            Model::Scaled(m) => m,
            Model::Gev(m) => m,
            Model::FcMnl(m) => m,
            Model::Discretized(m) => m,
            Model::RcLogit(m) => m,
        }
    }
}

impl ChoiceModel for Model {
    fn emax(&self, u: &[f64]) -> Result<f64> {
        self.inner().emax(u)
    }

    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.inner().probs(u)
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        self.inner().conj_masked(mu, allowed)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        self.inner().invert_masked(mu, allowed)
    }

    fn n_alternatives(&self) -> Option<usize> {
        self.inner().n_alternatives()
    }

    fn emax_masked(&self, u: &[f64], allowed: &[bool]) -> Result<f64> {
        self.inner().emax_masked(u, allowed)
    }

    fn probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        self.inner().probs_masked(u, allowed)
    }

    fn emax_probs_masked(&self, u: &[f64], allowed: &[bool]) -> Result<(f64, Vec<f64>)> {
        self.inner().emax_probs_masked(u, allowed)
    }
}
