//! Parametric and nonparametric bootstrap over household resamples.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::Matching;
use crate::numerics::mix_seed;
use crate::simulate::sample_households;

use super::{estimate, EstimateOptions, ParamModelSpec, Sample};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct Replicates<T> {
    /// Successful replications in replication order.
    pub values: Vec<T>,
    pub failed: usize,
    pub total: usize,
}

/// Run `job(b, seed_b)` for `b` in `0..n_boot` with seeds derived from
/// `seed`. Jobs run in parallel; the output order is deterministic.
pub fn bootstrap<T, F>(n_boot: usize, seed: u64, job: F) -> Result<Replicates<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    if n_boot == 0 {
        return Err(Error::invalid("bootstrap", "needs at least one replication"));
    }
    let results: Vec<Result<T>> = (0..n_boot)
        .into_par_iter()
        .map(|b| job(b, mix_seed(seed, b as u64)))
        .collect();
    let mut values = Vec::with_capacity(n_boot);
    let mut failed = 0;
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                log::debug!("bootstrap replication {b} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed as f64 > MAX_FAILURE_RATE * n_boot as f64 {
        return Err(Error::Bootstrap { failed, total: n_boot });
    }
    if failed > 0 {
        log::warn!("{failed} of {n_boot} bootstrap replications failed");
    }
    Ok(Replicates {
        values,
        failed,
        total: n_boot,
    })
}

/// Multinomial resample of `households` households from the cells of `mu`.
pub fn resample(mu: &Matching, households: u64, seed: u64) -> Result<Sample> {
    Sample::from_counts(&sample_households(mu, households, seed)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct BootstrapSe {
    pub names: Vec<String>,
    /// One row per successful replication, columns `(lambda, theta)`.
    #[serde(skip)]
    pub replicates: DMatrix<f64>,
    pub se: Vec<f64>,
    pub failed: usize,
    pub total: usize,
}

/// Re-estimate on resamples of the observed households.
pub fn bootstrap_se(
    spec: &ParamModelSpec,
    data: &Sample,
    opts: &EstimateOptions,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapSe> {
    let h = data.household_count();
    let mut opts = opts.clone();
    opts.mle.compute_se = false;
    let reps = bootstrap(n_boot, seed, |_, s| {
        let sample = resample(&data.masses, h, s)?;
        let fit = estimate(spec, &sample, &opts)?;
        if !fit.converged {
            return Err(Error::NoConvergence {
                what: "bootstrap estimate".into(),
                iterations: fit.iterations,
                residual: f64::NAN,
            });
        }
        Ok(fit.params())
    })?;
    let d = spec.dim();
    let rows = reps.values.len();
    let replicates = DMatrix::from_fn(rows, d, |b, j| reps.values[b][j]);
    let se = (0..d)
        .map(|j| {
            if rows < 2 {
                return 0.0;
            }
            let col = replicates.column(j);
            let mean = col.mean();
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows - 1) as f64).sqrt()
        })
        .collect();
    Ok(BootstrapSe {
        names: spec.names(),
        replicates,
        se,
        failed: reps.failed,
        total: reps.total,
    })
}
