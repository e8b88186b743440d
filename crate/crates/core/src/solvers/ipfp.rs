//! Iterative proportional fitting: alternate projections onto the margins
//! of each side.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::choice::{ChoiceModel, Model, ModelSet};
use crate::error::{Error, Result};
use crate::market::{Margins, Matching, SurplusMatrix};
use crate::numerics::logsumexp;
use crate::optim::{increasing_root, lbfgs, LbfgsOptions};

use super::{check_market, residual, social_welfare, utilities_from_u, Clock, Method, Solution, SolveOptions, SolveReport};

const PAR_CELLS: usize = 4096;

fn rows_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, parallel: bool, f: F) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// `2 n / (sqrt(s^2 + 4 n) + s)`, the positive root of `a^2 + s a = n`.
fn half_root(s: f64, n: f64) -> f64 {
    2.0 * n / ((s * s + 4.0 * n).sqrt() + s)
}

/// Convex dual of the heteroskedastic logit model,
/// `sum_x n_x (u_x + s_x e^{-u_x/s_x}) + sum_y m_y (v_y + t_y e^{-v_y/t_y}) +
///  sum_xy (s_x + t_y) exp((Phi_xy - u_x - v_y + s_x log n_x + t_y log m_y) / (s_x + t_y))`.
/// Its gradient is the vector of margin residuals.
pub fn ipfp_objective(
    sigma: &[f64],
    tau: &[f64],
    phi: &SurplusMatrix,
    r: &Margins,
    u: &[f64],
    v: &[f64],
) -> f64 {
    let (n, m) = (r.n(), r.m());
    let mut f = 0.0;
    for x in 0..r.nx() {
        f += n[x] * (u[x] + sigma[x] * (-u[x] / sigma[x]).exp());
    }
    for y in 0..r.ny() {
        f += m[y] * (v[y] + tau[y] * (-v[y] / tau[y]).exp());
    }
    for x in 0..r.nx() {
        for y in 0..r.ny() {
            if phi.allowed(x, y) {
                let s = sigma[x] + tau[y];
                let e = phi.values()[(x, y)] - u[x] - v[y] + sigma[x] * n[x].ln() + tau[y] * m[y].ln();
                f += s * (e / s).exp();
            }
        }
    }
    f
}

fn logit_welfare(phi: &SurplusMatrix, mu: &Matching, r: &Margins) -> f64 {
    let men = ModelSet::logit(r.nx());
    let women = ModelSet::logit(r.ny());
    social_welfare(&men, &women, phi, mu, r).unwrap_or(f64::NAN)
}

/// Closed-form half-steps for logit heterogeneity on both sides.
pub fn solve_ipfp_logit(phi: &SurplusMatrix, r: &Margins, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    phi.check_margins(r)?;
    r.require_positive()?;
    let clock = Clock::start();
    let (nx, ny) = (r.nx(), r.ny());
    let k = DMatrix::from_fn(nx, ny, |x, y| {
        if phi.allowed(x, y) {
            (phi.values()[(x, y)] / 2.0).exp()
        } else {
            0.0
        }
    });
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("exp(Phi / 2) overflows; rescale the surplus".into()));
    }
    let kt = k.transpose();
    let parallel = opts.parallel && nx * ny >= PAR_CELLS;
    let (n, m) = (r.n(), r.m());
    // a = sqrt(mu_x0), b = sqrt(mu_0y).
    let mut b: Vec<f64> = match opts.warm_start.as_ref().and_then(|w| w.mu_0y.as_ref()) {
        Some(s) if s.len() == ny && s.iter().all(|v| *v > 0.0 && v.is_finite()) => s.iter().map(|v| v.sqrt()).collect(),
        _ => m.iter().map(|v| v.sqrt()).collect(),
    };
    let mut a = vec![0.0; nx];
    let ones_x = vec![1.0; nx];
    let ones_y = vec![1.0; ny];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut res = f64::INFINITY;
    let log_uv = |a: &[f64], b: &[f64]| {
        let u: Vec<f64> = (0..nx).map(|x| -(a[x] * a[x] / n[x]).ln()).collect();
        let v: Vec<f64> = (0..ny).map(|y| -(b[y] * b[y] / m[y]).ln()).collect();
        (u, v)
    };
    while iterations < opts.max_iter {
        iterations += 1;
        let ks = rows_map(nx, parallel, |x| k.row(x).iter().zip(&b).map(|(kv, bv)| kv * bv).sum::<f64>());
        a = (0..nx).map(|x| half_root(ks[x], n[x])).collect();
        if opts.record_objective {
            let (u, v) = log_uv(&a, &b);
            trace.push(ipfp_objective(&ones_x, &ones_y, phi, r, &u, &v));
        }
        let kts = rows_map(ny, parallel, |y| kt.row(y).iter().zip(&a).map(|(kv, av)| kv * av).sum::<f64>());
        res = (0..ny)
            .map(|y| (m[y] - b[y] * b[y] - b[y] * kts[y]).abs())
            .fold(0.0, f64::max);
        if !res.is_finite() {
            return Err(Error::NonFinite("IPFP iterate".into()));
        }
        if res <= opts.tol {
            break;
        }
        for y in 0..ny {
            let new = half_root(kts[y], m[y]);
            b[y] = if opts.damping < 1.0 { b[y].powf(1.0 - opts.damping) * new.powf(opts.damping) } else { new };
        }
        if opts.record_objective {
            let (u, v) = log_uv(&a, &b);
            trace.push(ipfp_objective(&ones_x, &ones_y, phi, r, &u, &v));
        }
    }
    let mu = DMatrix::from_fn(nx, ny, |x, y| k[(x, y)] * a[x] * b[y]);
    let mu_x0 = DVector::from_iterator(nx, a.iter().map(|v| v * v));
    let mu_0y = DVector::from_iterator(ny, b.iter().map(|v| v * v));
    let matching = Matching::new(mu, mu_x0, mu_0y)?;
    let u = DMatrix::from_fn(nx, ny, |x, y| {
        if phi.allowed(x, y) {
            (matching.mu[(x, y)] / matching.mu_x0[x]).ln()
        } else {
            0.0
        }
    });
    let v = DMatrix::from_fn(nx, ny, |x, y| {
        if phi.allowed(x, y) {
            phi.values()[(x, y)] - u[(x, y)]
        } else {
            0.0
        }
    });
    let (gu, gv) = log_uv(&a, &b);
    let social_welfare = logit_welfare(phi, &matching, r);
    let converged = res <= opts.tol;
    log::debug!("ipfp logit: {iterations} iterations, residual {res:e}");
    Ok(Solution {
        report: SolveReport {
            method: Method::Ipfp,
            converged,
            iterations,
            final_residual: res,
            social_welfare,
            wall_time: clock.elapsed(),
            objective_trace: trace,
        },
        matching,
        utilities: crate::market::GroupUtilities {
            u: DVector::from_vec(gu),
            v: DVector::from_vec(gv),
        },
        systematic: Some(crate::market::SystematicUtilities { u, v }),
    })
}

/// A family whose inversion is linear in the logs of shares, nest shares,
/// and the outside share: scaled logit and scaled nested logit.
#[derive(Clone, Debug)]
struct LogLinear {
    scale: f64,
    /// Nest of each alternative and the nest parameters. Plain logit puts
    /// every alternative alone in a nest with parameter 1.
    nest_of: Vec<usize>,
    lambda: Vec<f64>,
    members: Vec<Vec<usize>>,
}

impl LogLinear {
    fn of(model: &Model, n_alt: usize) -> Option<Self> {
        match model {
            Model::Logit(_) => Some(Self {
                scale: 1.0,
                nest_of: (0..n_alt).collect(),
                lambda: vec![1.0; n_alt],
                members: (0..n_alt).map(|y| vec![y]).collect(),
            }),
            Model::NestedLogit(nl) => Some(Self {
                scale: 1.0,
                nest_of: nl.nest_of().to_vec(),
                lambda: nl.lambda().to_vec(),
                members: nl.members().to_vec(),
            }),
            Model::Scaled(s) => Self::of(s.base(), n_alt).map(|mut l| {
                l.scale *= s.scale();
                l
            }),
            _ => None,
        }
    }

    /// Coefficient on the log of the cell's own share.
    fn own(&self, j: usize) -> f64 {
        self.scale * self.lambda[self.nest_of[j]]
    }

    /// Coefficient on the log of the nest share.
    fn nest(&self, j: usize) -> f64 {
        self.scale * (1.0 - self.lambda[self.nest_of[j]])
    }

    fn is_nested(&self) -> bool {
        self.lambda.iter().any(|l| *l < 1.0)
    }
}

/// Solve the row problem of one group: with `sigma t` the scaled log of
/// its singles, alternative `j` in nest `k` gets
/// `log mu_j = (c_j + sigma t - b_k w_k) / d_j`, where `w_k` is the log nest
/// share, and the group mass is `mass`. Returns `t` and the log shares
/// (`-inf` where unavailable).
fn project_group(
    c: &[f64],
    d: &[f64],
    allowed: &[bool],
    fam: &LogLinear,
    mass: f64,
) -> Result<(f64, Vec<f64>)> {
    let sigma = fam.scale;
    let nests: Vec<(Vec<usize>, f64)> = fam
        .members
        .iter()
        .zip(&fam.lambda)
        .map(|(ys, l)| (ys.iter().copied().filter(|j| allowed[*j]).collect::<Vec<_>>(), sigma * (1.0 - l)))
        .filter(|(ys, _)| !ys.is_empty())
        .collect();
    // Log nest share and its derivative in t.
    let nest_root = |ys: &[usize], b: f64, t: f64| -> Result<(f64, f64)> {
        let z = |w: f64| -> Vec<f64> { ys.iter().map(|j| (c[*j] + sigma * t - b * w) / d[*j]).collect() };
        let slope = |w: f64| -> f64 {
            let zs = z(w);
            let l = logsumexp(&zs);
            ys.iter().zip(&zs).map(|(j, zj)| (zj - l).exp() / d[*j]).sum()
        };
        if b == 0.0 {
            return Ok((logsumexp(&z(0.0)), sigma * slope(0.0)));
        }
        // h(w) = LSE(z(w)) - w is convex and decreasing, so Newton
        // converges monotonically after the first step.
        let mut w = logsumexp(&z(0.0)) / (1.0 + b / d[ys[0]]);
        for _ in 0..200 {
            let zs = z(w);
            let l = logsumexp(&zs);
            let s: f64 = ys.iter().zip(&zs).map(|(j, zj)| (zj - l).exp() / d[*j]).sum();
            let h = l - w;
            let step = h / (1.0 + b * s);
            w += step;
            if step.abs() <= 1e-15 * (1.0 + w.abs()) {
                break;
            }
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("nest share".into()));
        }
        let s = slope(w);
        Ok((w, sigma * s / (1.0 + b * s)))
    };
    let mut failure = None;
    let log_mass = mass.ln();
    let mut g = |t: f64| -> (f64, f64) {
        let mut terms = vec![t];
        let mut derivs = vec![1.0];
        for (ys, b) in &nests {
            match nest_root(ys, *b, t) {
                Ok((w, dw)) => {
                    terms.push(w);
                    derivs.push(dw);
                }
                Err(e) => {
                    failure = Some(e);
                    return (f64::NAN, f64::NAN);
                }
            }
        }
        let l = logsumexp(&terms);
        let dl: f64 = terms.iter().zip(&derivs).map(|(w, dw)| (w - l).exp() * dw).sum();
        (l - log_mass, dl)
    };
    let hi = log_mass;
    let mut lo = hi - 1.0;
    let mut width = 1.0;
    loop {
        let (v, _) = g(lo);
        if v.is_nan() {
            break;
        }
        if v < 0.0 {
            break;
        }
        width *= 2.0;
        lo = hi - width;
        if width > 1e6 {
            return Err(Error::NonFinite("singles root bracket".into()));
        }
    }
    let t = increasing_root(&mut g, lo, hi, 1e-15, 500)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut logmu = vec![f64::NEG_INFINITY; c.len()];
    for (ys, b) in &nests {
        let (w, _) = nest_root(ys, *b, t)?;
        for j in ys {
            logmu[*j] = (c[*j] + sigma * t - b * w) / d[*j];
        }
    }
    Ok((t, logmu))
}

/// Logs of nest aggregates of each cell: entry `(x, y)` holds the log of
/// the total of row `x` over the nest containing `y`.
fn row_nest_logs(mu: &DMatrix<f64>, fams: &[LogLinear]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(mu.nrows(), mu.ncols());
    for (x, fam) in fams.iter().enumerate() {
        for ys in &fam.members {
            let s: f64 = ys.iter().map(|y| mu[(x, *y)]).sum();
            for y in ys {
                out[(x, *y)] = s.ln();
            }
        }
    }
    out
}

/// Projections for scaled logit and scaled nested logit families, and a
/// block coordinate descent on the min-Emax objective for other smooth
/// families.
pub fn solve_ipfp_general(
    men: &ModelSet,
    women: &ModelSet,
    phi: &SurplusMatrix,
    r: &Margins,
    opts: &SolveOptions,
) -> Result<Solution> {
    opts.validate()?;
    check_market(men, women, phi, r)?;
    r.require_positive()?;
    let fm: Option<Vec<LogLinear>> = men.iter().map(|m| LogLinear::of(m, r.ny())).collect();
    let fw: Option<Vec<LogLinear>> = women.iter().map(|m| LogLinear::of(m, r.nx())).collect();
    match (fm, fw) {
        (Some(fm), Some(fw)) => ipfp_loglinear(men, women, &fm, &fw, phi, r, opts),
        _ => {
            if let Some(m) = men.iter().chain(women.iter()).find(|m| !m.has_full_support()) {
                return Err(Error::Unsupported(format!(
                    "IPFP needs smooth heterogeneity, got {}",
                    m.family()
                )));
            }
            ipfp_block_descent(men, women, phi, r, opts)
        }
    }
}

fn ipfp_loglinear(
    men: &ModelSet,
    women: &ModelSet,
    fm: &[LogLinear],
    fw: &[LogLinear],
    phi: &SurplusMatrix,
    r: &Margins,
    opts: &SolveOptions,
) -> Result<Solution> {
    let clock = Clock::start();
    let (nx, ny) = (r.nx(), r.ny());
    let (n, m) = (r.n(), r.m());
    let pv = phi.values();
    let own_m = DMatrix::from_fn(nx, ny, |x, y| fm[x].own(y));
    let own_w = DMatrix::from_fn(nx, ny, |x, y| fw[y].own(x));
    let nest_m = DMatrix::from_fn(nx, ny, |x, y| fm[x].nest(y));
    let nest_w = DMatrix::from_fn(nx, ny, |x, y| fw[y].nest(x));
    let d = &own_m + &own_w;
    let sigma: Vec<f64> = fm.iter().map(|f| f.scale).collect();
    let tau: Vec<f64> = fw.iter().map(|f| f.scale).collect();
    let nested = fm.iter().chain(fw).any(|f| f.is_nested());
    let parallel = opts.parallel && nx * ny >= PAR_CELLS;

    let mut l0y: Vec<f64> = match opts.warm_start.as_ref().and_then(|w| w.mu_0y.as_ref()) {
        Some(s) if s.len() == ny && s.iter().all(|v| *v > 0.0 && v.is_finite()) => s.iter().map(|v| v.ln()).collect(),
        _ => m.iter().map(|v| v.ln()).collect(),
    };
    let mut l0x = vec![0.0; nx];
    // Women's log nest aggregates, transposed: (y, x) for the nest of x.
    let mut lw = DMatrix::from_fn(ny, nx, |y, x| {
        let size = fw[y].members[fw[y].nest_of[x]].len() as f64;
        (m[y] * size / (nx as f64 + 1.0)).ln()
    });
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut res = f64::INFINITY;
    let mut mu = DMatrix::zeros(nx, ny);
    let uv = |l0x: &[f64], l0y: &[f64]| {
        let u: Vec<f64> = (0..nx).map(|x| -sigma[x] * (l0x[x] - n[x].ln())).collect();
        let v: Vec<f64> = (0..ny).map(|y| -tau[y] * (l0y[y] - m[y].ln())).collect();
        (u, v)
    };
    while iterations < opts.max_iter {
        iterations += 1;
        let rows = rows_map(nx, parallel, |x| -> Result<(f64, Vec<f64>)> {
            let allowed = phi.row_allowed(x);
            let c: Vec<f64> = (0..ny)
                .map(|y| {
                    let mut c = pv[(x, y)] + tau[y] * l0y[y];
                    if nest_w[(x, y)] != 0.0 {
                        c -= nest_w[(x, y)] * lw[(y, x)];
                    }
                    c
                })
                .collect();
            let dr: Vec<f64> = d.row(x).iter().copied().collect();
            project_group(&c, &dr, &allowed, &fm[x], n[x])
        });
        for (x, row) in rows.into_iter().enumerate() {
            let (t, logmu) = row?;
            l0x[x] = t;
            for y in 0..ny {
                mu[(x, y)] = logmu[y].exp();
            }
        }
        if opts.record_objective && !nested {
            let (u, v) = uv(&l0x, &l0y);
            trace.push(ipfp_objective(&sigma, &tau, phi, r, &u, &v));
        }
        // Check the women's side against the men's projection.
        let lw_now = row_nest_logs(&mu.transpose(), fw);
        res = 0.0;
        for y in 0..ny {
            let s0 = l0y[y].exp();
            res = f64::max(res, (m[y] - s0 - mu.column(y).sum()).abs());
        }
        if nested {
            for y in 0..ny {
                for x in 0..nx {
                    if nest_w[(x, y)] != 0.0 && phi.allowed(x, y) {
                        res = res.max((lw_now[(y, x)].exp() - lw[(y, x)].exp()).abs());
                    }
                }
            }
        }
        if !res.is_finite() {
            return Err(Error::NonFinite("IPFP iterate".into()));
        }
        if res <= opts.tol {
            break;
        }
        let lm = row_nest_logs(&mu, fm);
        let cols = rows_map(ny, parallel, |y| -> Result<(f64, Vec<f64>)> {
            let allowed = phi.col_allowed(y);
            let c: Vec<f64> = (0..nx)
                .map(|x| {
                    let mut c = pv[(x, y)] + sigma[x] * l0x[x];
                    if nest_m[(x, y)] != 0.0 {
                        c -= nest_m[(x, y)] * lm[(x, y)];
                    }
                    c
                })
                .collect();
            let dc: Vec<f64> = d.column(y).iter().copied().collect();
            project_group(&c, &dc, &allowed, &fw[y], m[y])
        });
        let mut muw = DMatrix::zeros(nx, ny);
        for (y, col) in cols.into_iter().enumerate() {
            let (t, logmu) = col?;
            l0y[y] = if opts.damping < 1.0 { (1.0 - opts.damping) * l0y[y] + opts.damping * t } else { t };
            for x in 0..nx {
                muw[(x, y)] = logmu[x].exp();
            }
        }
        lw = row_nest_logs(&muw.transpose(), fw);
        if opts.record_objective && !nested {
            let (u, v) = uv(&l0x, &l0y);
            trace.push(ipfp_objective(&sigma, &tau, phi, r, &u, &v));
        }
    }
    let mu_x0 = DVector::from_iterator(nx, l0x.iter().map(|t| t.exp()));
    let mu_0y = DVector::from_iterator(ny, l0y.iter().map(|t| t.exp()));
    let matching = Matching::new(mu, mu_x0, mu_0y)?;
    // Men's systematic utilities from their own inversion formula.
    let lm = row_nest_logs(&matching.mu, fm);
    let u = DMatrix::from_fn(nx, ny, |x, y| {
        if phi.allowed(x, y) {
            own_m[(x, y)] * matching.mu[(x, y)].ln()
                + if nest_m[(x, y)] != 0.0 { nest_m[(x, y)] * lm[(x, y)] } else { 0.0 }
                - sigma[x] * l0x[x]
        } else {
            0.0
        }
    });
    let (systematic, utilities) = utilities_from_u(men, women, phi, &u)?;
    let social_welfare = social_welfare(men, women, phi, &matching, r).unwrap_or(f64::NAN);
    log::debug!("ipfp: {iterations} iterations, residual {res:e}");
    Ok(Solution {
        report: SolveReport {
            method: Method::Ipfp,
            converged: res <= opts.tol,
            iterations,
            final_residual: res,
            social_welfare,
            wall_time: clock.elapsed(),
            objective_trace: trace,
        },
        matching,
        utilities,
        systematic: Some(systematic),
    })
}

/// Gauss-Seidel over groups: each man group, then each woman group,
/// minimizes the min-Emax objective in its own utilities.
fn ipfp_block_descent(
    men: &ModelSet,
    women: &ModelSet,
    phi: &SurplusMatrix,
    r: &Margins,
    opts: &SolveOptions,
) -> Result<Solution> {
    let clock = Clock::start();
    let (nx, ny) = (r.nx(), r.ny());
    let (n, m) = (r.n(), r.m());
    let pv = phi.values();
    let mut u = match opts.warm_start.as_ref().and_then(|w| w.u.as_ref()) {
        Some(u) if u.nrows() == nx && u.ncols() == ny => u.clone(),
        _ => pv / 2.0,
    };
    let row_allowed: Vec<Vec<bool>> = (0..nx).map(|x| phi.row_allowed(x)).collect();
    let col_allowed: Vec<Vec<bool>> = (0..ny).map(|y| phi.col_allowed(y)).collect();
    let sub = LbfgsOptions::default().with_grad_tol(0.1 * opts.tol).with_max_iter(2000);
    let mut iterations = 0;
    let mut res = f64::INFINITY;
    let mut matching = Matching::all_single(r);
    let mut error: Option<Error> = None;
    while iterations < opts.max_iter {
        iterations += 1;
        for x in 0..nx {
            let cols: Vec<usize> = (0..ny).filter(|y| row_allowed[x][*y]).collect();
            if cols.is_empty() {
                continue;
            }
            let base = u.clone();
            let obj = |z: &[f64], g: &mut [f64]| -> f64 {
                let mut row: Vec<f64> = base.row(x).iter().copied().collect();
                for (k, y) in cols.iter().enumerate() {
                    row[*y] = z[k];
                }
                let mut eval = || -> Result<f64> {
                    let p = men.get(x).probs_masked(&row, &row_allowed[x])?;
                    let mut f = n[x] * men.get(x).emax_masked(&row, &row_allowed[x])?;
                    for (k, y) in cols.iter().enumerate() {
                        let mut col: Vec<f64> = (0..nx).map(|xx| pv[(xx, *y)] - base[(xx, *y)]).collect();
                        col[x] = pv[(x, *y)] - z[k];
                        f += m[*y] * women.get(*y).emax_masked(&col, &col_allowed[*y])?;
                        let q = women.get(*y).probs_masked(&col, &col_allowed[*y])?;
                        g[k] = n[x] * p[*y] - m[*y] * q[x];
                    }
                    Ok(f)
                };
                eval().unwrap_or(f64::NAN)
            };
            let z0: Vec<f64> = cols.iter().map(|y| u[(x, *y)]).collect();
            let rep = lbfgs(obj, z0, None, &sub)?;
            for (k, y) in cols.iter().enumerate() {
                u[(x, *y)] = rep.x[k];
            }
        }
        for y in 0..ny {
            let rows: Vec<usize> = (0..nx).filter(|x| col_allowed[y][*x]).collect();
            if rows.is_empty() {
                continue;
            }
            let base = u.clone();
            let obj = |z: &[f64], g: &mut [f64]| -> f64 {
                let mut col: Vec<f64> = (0..nx).map(|xx| pv[(xx, y)] - base[(xx, y)]).collect();
                for (k, x) in rows.iter().enumerate() {
                    col[*x] = pv[(*x, y)] - z[k];
                }
                let mut eval = || -> Result<f64> {
                    let q = women.get(y).probs_masked(&col, &col_allowed[y])?;
                    let mut f = m[y] * women.get(y).emax_masked(&col, &col_allowed[y])?;
                    for (k, x) in rows.iter().enumerate() {
                        let mut row: Vec<f64> = base.row(*x).iter().copied().collect();
                        row[y] = z[k];
                        f += n[*x] * men.get(*x).emax_masked(&row, &row_allowed[*x])?;
                        let p = men.get(*x).probs_masked(&row, &row_allowed[*x])?;
                        g[k] = n[*x] * p[y] - m[y] * q[*x];
                    }
                    Ok(f)
                };
                eval().unwrap_or(f64::NAN)
            };
            let z0: Vec<f64> = rows.iter().map(|x| u[(*x, y)]).collect();
            let rep = lbfgs(obj, z0, None, &sub)?;
            for (k, x) in rows.iter().enumerate() {
                u[(*x, y)] = rep.x[k];
            }
        }
        match men_side_matching(men, women, phi, r, &u) {
            Ok((mt, grad)) => {
                res = residual(&mt, r).max(grad);
                matching = mt;
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
        if res <= opts.tol {
            break;
        }
    }
    if let Some(e) = error {
        return Err(e);
    }
    let (systematic, utilities) = utilities_from_u(men, women, phi, &u)?;
    let social_welfare = social_welfare(men, women, phi, &matching, r).unwrap_or(f64::NAN);
    Ok(Solution {
        report: SolveReport {
            method: Method::Ipfp,
            converged: res <= opts.tol,
            iterations,
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

/// Matching implied by the men's choices at `u`, with the women's singles
/// from their own choices, and the largest gap between the two sides' masses.
pub(crate) fn men_side_matching(
    men: &ModelSet,
    women: &ModelSet,
    phi: &SurplusMatrix,
    r: &Margins,
    u: &DMatrix<f64>,
) -> Result<(Matching, f64)> {
    let (nx, ny) = (r.nx(), r.ny());
    let (n, m) = (r.n(), r.m());
    let pv = phi.values();
    let mut mu = DMatrix::zeros(nx, ny);
    let mut mu_x0 = DVector::zeros(nx);
    let mut gap = 0.0f64;
    for x in 0..nx {
        let row: Vec<f64> = u.row(x).iter().copied().collect();
        let p = men.get(x).probs_masked(&row, &phi.row_allowed(x))?;
        for y in 0..ny {
            mu[(x, y)] = n[x] * p[y];
        }
        mu_x0[x] = (n[x] * (1.0 - p.iter().sum::<f64>())).max(0.0);
    }
    let mut mu_0y = DVector::zeros(ny);
    for y in 0..ny {
        let col: Vec<f64> = (0..nx).map(|x| pv[(x, y)] - u[(x, y)]).collect();
        let q = women.get(y).probs_masked(&col, &phi.col_allowed(y))?;
        for x in 0..nx {
            gap = gap.max((mu[(x, y)] - m[y] * q[x]).abs());
        }
        mu_0y[y] = (m[y] * (1.0 - q.iter().sum::<f64>())).max(0.0);
    }
    Ok((Matching::new(mu, mu_x0, mu_0y)?, gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::NestedLogit;

    fn market() -> (SurplusMatrix, Margins) {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.2, 0.8, -1.0, 0.3]);
        (SurplusMatrix::new(phi).unwrap(), Margins::new(vec![1.0, 2.0, 0.5], vec![1.5, 1.2]).unwrap())
    }

    #[test]
    fn one_by_one_zero_surplus() {
        let phi = SurplusMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let sol = solve_ipfp_logit(&phi, &r, &SolveOptions::default().with_tol(1e-13)).unwrap();
        assert!((sol.matching.mu[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((sol.utilities.u[0] - 2f64.ln()).abs() < 1e-12);
        assert!((sol.utilities.v[0] - 2f64.ln()).abs() < 1e-12);
        assert!((sol.report.social_welfare - 2.0 * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn forbidden_cell_gets_no_mass() {
        let (phi, r) = market();
        let mut mask = DMatrix::from_element(3, 2, false);
        mask[(1, 0)] = true;
        let phi = SurplusMatrix::with_mask(phi.values().clone(), mask).unwrap();
        let sol = solve_ipfp_logit(&phi, &r, &SolveOptions::default()).unwrap();
        assert_eq!(sol.matching.mu[(1, 0)], 0.0);
        assert!(sol.report.converged);
    }

    #[test]
    fn general_reduces_to_logit() {
        let (phi, r) = market();
        let a = solve_ipfp_logit(&phi, &r, &SolveOptions::default().with_tol(1e-12)).unwrap();
        let men = ModelSet::scaled_logit(&[1.0; 3]).unwrap();
        let women = ModelSet::scaled_logit(&[1.0; 2]).unwrap();
        let b = solve_ipfp_general(&men, &women, &phi, &r, &SolveOptions::default().with_tol(1e-12)).unwrap();
        assert!(a.matching.max_abs_diff(&b.matching) < 1e-10);
        let nest = ModelSet::uniform(Model::NestedLogit(NestedLogit::single_nest(2, 1.0).unwrap()), 3);
        let c = solve_ipfp_general(&nest, &ModelSet::logit(2), &phi, &r, &SolveOptions::default().with_tol(1e-12)).unwrap();
        assert!(a.matching.max_abs_diff(&c.matching) < 1e-10);
    }

    #[test]
    fn hetero_objective_decreases() {
        let (phi, r) = market();
        let men = ModelSet::scaled_logit(&[0.5, 1.0, 2.0]).unwrap();
        let women = ModelSet::scaled_logit(&[1.5, 0.7]).unwrap();
        let sol = solve_ipfp_general(&men, &women, &phi, &r, &SolveOptions::default().recording()).unwrap();
        assert!(sol.report.converged);
        let t = &sol.report.objective_trace;
        assert!(t.len() > 2);
        for w in t.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn nested_solution_satisfies_identification() {
        let (phi, r) = market();
        let nl = NestedLogit::new(vec![0, 0], vec![0.6]).unwrap();
        let men = ModelSet::uniform(Model::NestedLogit(nl), 3);
        let nw = NestedLogit::new(vec![0, 0, 1], vec![0.5, 1.0]).unwrap();
        let women = ModelSet::uniform(Model::NestedLogit(nw), 2);
        let sol = solve_ipfp_general(&men, &women, &phi, &r, &SolveOptions::default().with_tol(1e-11)).unwrap();
        assert!(sol.report.converged);
        let mu = &sol.matching;
        for x in 0..3 {
            let men_nest: f64 = mu.mu.row(x).sum();
            for y in 0..2 {
                let women_nest: f64 = if x < 2 { mu.mu[(0, y)] + mu.mu[(1, y)] } else { mu.mu[(2, y)] };
                let nu = if x < 2 { 0.5 } else { 1.0 };
                let lhs = (0.6 + nu) * mu.mu[(x, y)].ln() - mu.mu_x0[x].ln() - mu.mu_0y[y].ln()
                    + 0.4 * men_nest.ln()
                    + (1.0 - nu) * women_nest.ln();
                assert!((lhs - phi.values()[(x, y)]).abs() < 1e-8, "{x} {y}: {lhs}");
            }
        }
    }
}
