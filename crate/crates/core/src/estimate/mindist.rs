//! Minimum distance between the parametric surplus and the surplus
//! identified from the data.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::identify::{identify, IdentifyOptions};
use crate::market::Matching;
use crate::simulate::matching_cells;

use super::{finish, DistanceStats, Estimator, EstimationResult, ParamModelSpec, Sample, INNER_TOL};

#[derive(Clone, Debug)]
pub enum Weighting {
    Identity,
    /// Inverse of the sampling variance of the identified surplus.
    Efficient,
    /// Weights over the retained cells, x-major.
    Matrix(DMatrix<f64>),
}

/// Identified surplus on `cells` from household masses.
fn identified(spec: &ParamModelSpec, theta: &[f64], masses: &Matching, cells: &[(usize, usize)]) -> Result<DVector<f64>> {
    let sample = Sample::from_masses(masses.clone())?;
    let (nx, ny) = spec.shape();
    let (men, women) = spec.dist.build(theta, nx, ny)?;
    let id = identify(&men, &women, &sample.shares, &sample.margins, &IdentifyOptions::default())?;
    Ok(DVector::from_iterator(cells.len(), cells.iter().map(|c| id.phi.values()[*c])))
}

fn with_cells(masses: &Matching, cells: &[f64]) -> Matching {
    let (nx, ny) = (masses.nx(), masses.ny());
    let mut m = masses.clone();
    for x in 0..nx {
        for y in 0..ny {
            m.mu[(x, y)] = cells[x * ny + y];
        }
        m.mu_x0[x] = cells[nx * ny + x];
    }
    for y in 0..ny {
        m.mu_0y[y] = cells[nx * ny + nx + y];
    }
    m
}

/// Delta-method variance of the identified surplus under multinomial
/// sampling of households.
fn surplus_variance(spec: &ParamModelSpec, theta: &[f64], data: &Sample, cells: &[(usize, usize)]) -> Result<DMatrix<f64>> {
    let counts = matching_cells(&data.masses);
    let h_total = data.households;
    let p: Vec<f64> = counts.iter().map(|c| c / h_total).collect();
    let mut jac = DMatrix::zeros(cells.len(), counts.len());
    for (j, c) in counts.iter().enumerate() {
        if *c <= 0.0 {
            continue;
        }
        let h = 1e-5 * c;
        let mut up = counts.clone();
        let mut dn = counts.clone();
        up[j] += h;
        dn[j] -= h;
        let fp = identified(spec, theta, &with_cells(&data.masses, &up), cells)?;
        let fm = identified(spec, theta, &with_cells(&data.masses, &dn), cells)?;
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    let pv = DVector::from_column_slice(&p);
    let sigma = (DMatrix::from_diagonal(&pv) - &pv * pv.transpose()) * h_total;
    Ok(&jac * sigma * jac.transpose())
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::invalid(what.to_string(), "not positive definite"))?;
    Ok(chol.inverse())
}

/// Weighted least squares of the identified surplus on the basis over the
/// cells with couples.
pub fn min_distance(spec: &ParamModelSpec, data: &Sample, theta: &[f64], weighting: &Weighting) -> Result<EstimationResult> {
    spec.check_shape(data.shape())?;
    if theta.len() != spec.dist.dim() {
        return Err(Error::dims("distribution parameters", spec.dist.dim(), theta.len()));
    }
    let (nx, ny) = spec.shape();
    let mut cells = Vec::new();
    let mut excluded = Vec::new();
    for x in 0..nx {
        for y in 0..ny {
            if data.masses.mu[(x, y)] > 0.0 {
                cells.push((x, y));
            } else {
                excluded.push((x, y));
            }
        }
    }
    if !excluded.is_empty() {
        log::warn!("minimum distance leaves out {} cells without couples: {excluded:?}", excluded.len());
    }
    let k = spec.basis.len();
    if cells.len() < k {
        return Err(Error::invalid(
            "minimum distance",
            format!("{} usable cells for {k} coefficients", cells.len()),
        ));
    }
    let target = identified(spec, theta, &data.masses, &cells)?;
    let design = spec.basis.design(&cells);
    let variance = surplus_variance(spec, theta, data, &cells)?;
    let omega = match weighting {
        Weighting::Identity => DMatrix::identity(cells.len(), cells.len()),
        Weighting::Efficient => spd_inverse(&variance, "surplus variance")?,
        Weighting::Matrix(w) => {
            if w.shape() != (cells.len(), cells.len()) {
                return Err(Error::dims("weighting matrix rows", cells.len(), w.nrows()));
            }
            spd_inverse(w, "weighting matrix")?;
            w.clone()
        }
    };
    let a = design.transpose() * &omega * &design;
    let a_inv = spd_inverse(&a, "weighted basis cross-product")?;
    let lambda = &a_inv * design.transpose() * &omega * &target;
    let resid = &design * &lambda - &target;
    let j_statistic = (resid.transpose() * &omega * &resid)[(0, 0)];
    let dof = cells.len() - k;
    let efficient = matches!(weighting, Weighting::Efficient);
    let p_value = (efficient && dof > 0)
        .then(|| ChiSquared::new(dof as f64).ok().map(|c| 1.0 - c.cdf(j_statistic.max(0.0))))
        .flatten();
    let bread = &a_inv * design.transpose() * &omega;
    let cov = &bread * &variance * bread.transpose();
    let mut se: Vec<f64> = (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    // Distribution parameters are held fixed.
    se.extend(std::iter::repeat_n(0.0, theta.len()));
    let lambda: Vec<f64> = lambda.iter().copied().collect();
    let sol = spec.equilibrium(&lambda, theta, &data.margins, INNER_TOL, None)?;
    let mut out = finish(spec, Estimator::MinDistance, lambda, theta.to_vec(), sol.matching, data, true, 0);
    out.se = Some(se);
    out.distance = Some(DistanceStats {
        j_statistic,
        dof,
        p_value,
        excluded,
    });
    Ok(out)
}
