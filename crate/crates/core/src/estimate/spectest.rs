//! Specification test comparing the entropy of the fitted and observed
//! matchings.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{Matching, SurplusMatrix};
use crate::solvers::matching_entropy;

use super::{bootstrap, moment_match_with, resample, MomentOptions, ParamModelSpec, Sample};

#[derive(Clone, Debug, Serialize)]
pub struct SpecTest {
    pub statistic: f64,
    pub p_value: f64,
    pub lambda: Vec<f64>,
    /// Statistic on each successful replication.
    pub replicates: Vec<f64>,
    pub failed: usize,
    pub n_boot: usize,
}

/// Rounding slack below zero that is reported as zero.
const NEGATIVE_SLACK: f64 = 1e-10;

/// `E(mu_fit, r) - E(mu_hat, r)` in share units.
pub fn entropy_statistic(spec: &ParamModelSpec, theta: &[f64], data: &Sample, fitted: &Matching) -> Result<f64> {
    let (nx, ny) = spec.shape();
    let (men, women) = spec.dist.build(theta, nx, ny)?;
    let open = SurplusMatrix::new(DMatrix::zeros(nx, ny))?;
    let e_fit = matching_entropy(&men, &women, &open, fitted, &data.margins)?;
    let e_obs = matching_entropy(&men, &women, &open, &data.shares, &data.margins)?;
    let stat = e_fit - e_obs;
    let slack = NEGATIVE_SLACK * (1.0 + e_fit.abs());
    if stat < -slack {
        return Err(Error::invalid(
            "specification statistic",
            format!("negative value {stat:e}: the moment-matching fit is not optimal"),
        ));
    }
    Ok(stat.max(0.0))
}

/// Statistic at the moment-matching estimate and its parametric bootstrap
/// p-value `(1 + #{stat_b >= stat}) / (1 + B)`.
pub fn entropy_spec_test(spec: &ParamModelSpec, data: &Sample, theta: &[f64], n_boot: usize, seed: u64) -> Result<SpecTest> {
    let fit = moment_match_with(spec, data, theta, &MomentOptions::default())?;
    if !fit.converged {
        return Err(Error::NoConvergence {
            what: "moment matching".into(),
            iterations: fit.iterations,
            residual: f64::NAN,
        });
    }
    let statistic = entropy_statistic(spec, theta, data, &fit.fitted)?;
    let h = data.household_count();
    let mopts = MomentOptions {
        init: Some(fit.lambda.clone()),
        ..MomentOptions::default()
    };
    let reps = bootstrap(n_boot, seed, |_, s| {
        let sample = resample(&fit.fitted, h, s)?;
        let refit = moment_match_with(spec, &sample, theta, &mopts)?;
        if !refit.converged {
            return Err(Error::NoConvergence {
                what: "bootstrap moment matching".into(),
                iterations: refit.iterations,
                residual: f64::NAN,
            });
        }
        entropy_statistic(spec, theta, &sample, &refit.fitted)
    })?;
    let exceed = reps.values.iter().filter(|v| **v >= statistic).count();
    let p_value = (1 + exceed) as f64 / (1 + reps.values.len()) as f64;
    Ok(SpecTest {
        statistic,
        p_value,
        lambda: fit.lambda,
        replicates: reps.values,
        failed: reps.failed,
        n_boot,
    })
}
