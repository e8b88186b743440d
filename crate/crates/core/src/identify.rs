//! Recovering utilities and the joint surplus from an observed matching.

use nalgebra::{DMatrix, DVector};

use crate::choice::{ChoiceModel, Model, ModelSet};
use crate::error::{Error, Result};
use crate::market::{max_margin_residual, GroupUtilities, Margins, Matching, SurplusMatrix, SystematicUtilities};

#[derive(Clone, Debug, Default)]
pub struct IdentifyOptions {
    /// Pseudo-count added to every cell and to singles before inversion.
    /// Zero keeps empty cells as forbidden pairs.
    pub smoothing: f64,
}

/// Everything identified from one matching.
#[derive(Clone, Debug)]
pub struct Identified {
    pub phi: SurplusMatrix,
    pub systematic: SystematicUtilities,
    pub groups: GroupUtilities,
}

fn check_inputs(men: &ModelSet, women: &ModelSet, mu: &Matching, r: &Margins) -> Result<()> {
    let res = max_margin_residual(mu, r)?;
    if res > 1e-9 * (1.0 + r.total()) {
        return Err(Error::invalid(
            "matching",
            format!("inconsistent with margins: residual {res:e}"),
        ));
    }
    if men.len() != r.nx() {
        return Err(Error::dims("men's models", r.nx(), men.len()));
    }
    if women.len() != r.ny() {
        return Err(Error::dims("women's models", r.ny(), women.len()));
    }
    Ok(())
}

fn smoothed(mu: &Matching, s: f64) -> Result<(Matching, Margins)> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid("smoothing", format!("pseudo-count {s} must be nonnegative")));
    }
    let m = Matching {
        mu: mu.mu.add_scalar(s),
        mu_x0: mu.mu_x0.add_scalar(s),
        mu_0y: mu.mu_0y.add_scalar(s),
    };
    let r = m.implied_margins()?;
    Ok((m, r))
}

fn boundary_singles(mu: &Matching) -> Vec<(isize, isize)> {
    let mut cells = Vec::new();
    for (x, v) in mu.mu_x0.iter().enumerate() {
        if *v <= 0.0 {
            cells.push((x as isize, -1));
        }
    }
    for (y, v) in mu.mu_0y.iter().enumerate() {
        if *v <= 0.0 {
            cells.push((-1, y as isize));
        }
    }
    cells
}

/// Invert both sides on the cells with positive mass.
fn invert_sides(men: &ModelSet, women: &ModelSet, mu: &Matching, r: &Margins) -> Result<(SystematicUtilities, GroupUtilities, DMatrix<bool>)> {
    let singles = boundary_singles(mu);
    if !singles.is_empty() {
        return Err(Error::Boundary { cells: singles });
    }
    let (nx, ny) = (r.nx(), r.ny());
    let allowed = DMatrix::from_fn(nx, ny, |x, y| mu.mu[(x, y)] > 0.0);
    let mut u = DMatrix::zeros(nx, ny);
    let mut v = DMatrix::zeros(nx, ny);
    let mut gu = DVector::zeros(nx);
    let mut gv = DVector::zeros(ny);
    for x in 0..nx {
        let n = r.n()[x];
        let shares: Vec<f64> = mu.mu.row(x).iter().map(|m| m / n).collect();
        let mask: Vec<bool> = allowed.row(x).iter().copied().collect();
        let model = men.get(x);
        let ux = model.invert_masked(&shares, &mask)?;
        gu[x] = model.emax_masked(&ux, &mask)?;
        for y in 0..ny {
            u[(x, y)] = ux[y];
        }
    }
    for y in 0..ny {
        let m = r.m()[y];
        let shares: Vec<f64> = mu.mu.column(y).iter().map(|v| v / m).collect();
        let mask: Vec<bool> = allowed.column(y).iter().copied().collect();
        let model = women.get(y);
        let vy = model.invert_masked(&shares, &mask)?;
        gv[y] = model.emax_masked(&vy, &mask)?;
        for x in 0..nx {
            v[(x, y)] = vy[x];
        }
    }
    Ok((SystematicUtilities { u, v }, GroupUtilities { u: gu, v: gv }, allowed))
}

/// Systematic and group utilities of a strictly interior matching.
pub fn identify_utilities(
    men: &ModelSet,
    women: &ModelSet,
    mu: &Matching,
    r: &Margins,
) -> Result<(SystematicUtilities, GroupUtilities)> {
    check_inputs(men, women, mu, r)?;
    let mut cells = boundary_singles(mu);
    for x in 0..r.nx() {
        for y in 0..r.ny() {
            if mu.mu[(x, y)] <= 0.0 {
                cells.push((x as isize, y as isize));
            }
        }
    }
    if !cells.is_empty() {
        return Err(Error::Boundary { cells });
    }
    let (s, g, _) = invert_sides(men, women, mu, r)?;
    Ok((s, g))
}

/// Surplus, utilities, and the forbidden mask identified from `mu`. Cells
/// without mass become forbidden pairs unless smoothing is on.
pub fn identify(men: &ModelSet, women: &ModelSet, mu: &Matching, r: &Margins, opts: &IdentifyOptions) -> Result<Identified> {
    check_inputs(men, women, mu, r)?;
    let (mu, r) = if opts.smoothing > 0.0 {
        smoothed(mu, opts.smoothing)?
    } else {
        (mu.clone(), r.clone())
    };
    let (systematic, groups, allowed) = invert_sides(men, women, &mu, &r)?;
    let sum = &systematic.u + &systematic.v;
    let forbidden = allowed.map(|a| !a);
    let phi = SurplusMatrix::with_mask(sum, forbidden)?;
    Ok(Identified { phi, systematic, groups })
}

/// `Phi = U + V` on cells with mass; empty cells are forbidden.
pub fn identify_surplus(men: &ModelSet, women: &ModelSet, mu: &Matching, r: &Margins) -> Result<SurplusMatrix> {
    Ok(identify(men, women, mu, r, &IdentifyOptions::default())?.phi)
}

/// Men's shares of the surplus of each match with cells where the total
/// utility vanishes listed separately (and set to NaN).
#[derive(Clone, Debug)]
pub struct SurplusShares {
    pub share: DMatrix<f64>,
    pub flagged: Vec<(usize, usize)>,
}

/// `u_x / (u_x + v_y)` for logit and scaled-logit families, computed as
/// `sigma_x log mu_{0|x} / (sigma_x log mu_{0|x} + tau_y log mu_{0|y})`.
pub fn surplus_share(men: &ModelSet, women: &ModelSet, mu: &Matching, r: &Margins) -> Result<SurplusShares> {
    check_inputs(men, women, mu, r)?;
    let sigma = men
        .logit_scales()
        .ok_or_else(|| Error::Unsupported("surplus shares need logit or scaled-logit men".into()))?;
    let tau = women
        .logit_scales()
        .ok_or_else(|| Error::Unsupported("surplus shares need logit or scaled-logit women".into()))?;
    let singles = boundary_singles(mu);
    if !singles.is_empty() {
        return Err(Error::Boundary { cells: singles });
    }
    let a: Vec<f64> = (0..r.nx()).map(|x| sigma[x] * (mu.mu_x0[x] / r.n()[x]).ln()).collect();
    let b: Vec<f64> = (0..r.ny()).map(|y| tau[y] * (mu.mu_0y[y] / r.m()[y]).ln()).collect();
    let mut flagged = Vec::new();
    let share = DMatrix::from_fn(r.nx(), r.ny(), |x, y| {
        let d = a[x] + b[y];
        if d == 0.0 {
            flagged.push((x, y));
            f64::NAN
        } else {
            a[x] / d
        }
    });
    Ok(SurplusShares { share, flagged })
}

/// Semi-elasticities of every choice probability with respect to one
/// mean utility, with alternatives whose probability is zero flagged (NaN).
#[derive(Clone, Debug)]
pub struct SemiElasticities {
    pub values: Vec<f64>,
    pub flagged: Vec<usize>,
}

/// `d log mu_t / d U_y` for every inside alternative `t`.
pub fn semi_elasticities(model: &Model, u: &[f64], y: usize) -> Result<SemiElasticities> {
    if y >= u.len() {
        return Err(Error::invalid("alternative index", format!("{y} out of range for {} alternatives", u.len())));
    }
    let p = model.probs(u)?;
    let flagged: Vec<usize> = (0..p.len()).filter(|t| p[*t] <= 0.0).collect();
    let mut values = if let Some(s) = model.logit_scale() {
        (0..p.len()).map(|t| (if t == y { 1.0 } else { 0.0 } - p[y]) / s).collect::<Vec<_>>()
    } else {
        let h = 1e-5 * (1.0 + u[y].abs());
        let mut up = u.to_vec();
        let mut dn = u.to_vec();
        up[y] += h;
        dn[y] -= h;
        let pp = model.probs(&up)?;
        let pm = model.probs(&dn)?;
        (0..p.len())
            .map(|t| {
                if pp[t] > 0.0 && pm[t] > 0.0 {
                    (pp[t].ln() - pm[t].ln()) / (2.0 * h)
                } else {
                    f64::NAN
                }
            })
            .collect()
    };
    for t in &flagged {
        values[*t] = f64::NAN;
    }
    Ok(SemiElasticities { values, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_one(m: f64, s: f64) -> (Matching, Margins) {
        let mu = Matching::new(DMatrix::from_element(1, 1, m), DVector::from_element(1, s), DVector::from_element(1, s)).unwrap();
        (mu, Margins::new(vec![m + s], vec![m + s]).unwrap())
    }

    #[test]
    fn symmetric_one_by_one() {
        let (mu, r) = one_by_one(0.5, 0.5);
        let (s, g) = identify_utilities(&ModelSet::logit(1), &ModelSet::logit(1), &mu, &r).unwrap();
        assert!(s.u[(0, 0)].abs() < 1e-15 && s.v[(0, 0)].abs() < 1e-15);
        assert!((g.u[0] - 2f64.ln()).abs() < 1e-15);
        let (mu, r) = one_by_one(0.25, 0.25);
        let phi = identify_surplus(&ModelSet::logit(1), &ModelSet::logit(1), &mu, &r).unwrap();
        assert!(phi.values()[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn boundary_cells_are_listed() {
        let mu = Matching::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 0.5]),
            DVector::from_element(1, 0.5),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let r = mu.implied_margins().unwrap();
        match identify_utilities(&ModelSet::logit(1), &ModelSet::logit(2), &mu, &r) {
            Err(Error::Boundary { cells }) => assert_eq!(cells, vec![(-1, 1), (0, 0)]),
            other => panic!("{other:?}"),
        }
        match identify_surplus(&ModelSet::logit(1), &ModelSet::logit(2), &mu, &r) {
            Err(Error::Boundary { cells }) => assert_eq!(cells, vec![(-1, 1)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_cells_become_forbidden() {
        let mu = Matching::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 0.5]),
            DVector::from_element(1, 0.5),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let r = mu.implied_margins().unwrap();
        let phi = identify_surplus(&ModelSet::logit(1), &ModelSet::logit(2), &mu, &r).unwrap();
        assert!(phi.is_forbidden(0, 0) && phi.allowed(0, 1));
        let smooth = identify(&ModelSet::logit(1), &ModelSet::logit(2), &mu, &r, &IdentifyOptions { smoothing: 0.01 }).unwrap();
        assert!(!smooth.phi.has_forbidden());
    }

    #[test]
    fn share_formula() {
        let e = (-1f64).exp();
        let mu = Matching::new(DMatrix::from_element(1, 1, 1.0 - e), DVector::from_element(1, e), DVector::from_element(1, e)).unwrap();
        let r = Margins::new(vec![1.0], vec![1.0]).unwrap();
        let s = surplus_share(&ModelSet::scaled_logit(&[2.0]).unwrap(), &ModelSet::logit(1), &mu, &r).unwrap();
        assert!((s.share[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn logit_semi_elasticities() {
        let s = semi_elasticities(&Model::logit(), &[0.0, 0.0], 0).unwrap();
        assert!((s.values[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.values[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!(s.flagged.is_empty());
    }
}
