//! Solver comparison on random logit markets.

use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::choice::ModelSet;
use crate::error::{Error, Result};
use crate::market::Matching;
use crate::simulate::gen_benchmark;
use crate::solvers::{solve, Method, SolveOptions};

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Timed solves per cell; the median is reported.
    pub repeats: usize,
    pub tol: f64,
    /// Largest tolerated gap between the matchings of two methods.
    pub agreement: f64,
    /// Parallel cells; timings are only recorded when this is 1.
    pub jobs: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            sizes: vec![100],
            seeds: vec![0],
            methods: vec![Method::Ipfp, Method::Minemax, Method::ChoosiowF],
            repeats: 5,
            tol: 1e-6,
            agreement: 1e-5,
            jobs: 1,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("bench", "method list is empty"));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::invalid("bench", "sizes must be a nonempty list of positive integers"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("bench", "seed list is empty"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("bench", "repeats must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("bench", "jobs must be at least 1"));
        }
        if let Some(m) = self.methods.iter().find(|m| **m == Method::LpDiscrete) {
            return Err(Error::invalid("bench", format!("method {m} does not apply to logit markets")));
        }
        Ok(())
    }
}

/// Outcome of one method on one instance.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRecord {
    pub size: usize,
    pub seed: u64,
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    /// Median wall time over the timed repeats, in seconds.
    pub median_secs: Option<f64>,
    /// Largest gap to the reference matching of the instance.
    pub max_gap: Option<f64>,
    /// Converged and within the agreement tolerance.
    pub agrees: bool,
    pub error: Option<String>,
}

/// Per size and method, over seeds.
#[derive(Clone, Debug, Serialize)]
pub struct BenchSummary {
    pub size: usize,
    pub method: Method,
    pub runs: usize,
    pub converged: usize,
    pub agreeing: usize,
    /// Median of the per-seed medians among agreeing runs.
    pub median_secs: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub summary: Vec<BenchSummary>,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

struct Run {
    record: BenchRecord,
    matching: Option<Matching>,
}

fn run_cell(size: usize, seed: u64, method: Method, opts: &BenchOptions, timed: bool) -> Run {
    let mut record = BenchRecord {
        size,
        seed,
        method,
        converged: false,
        iterations: 0,
        final_residual: f64::NAN,
        median_secs: None,
        max_gap: None,
        agrees: false,
        error: None,
    };
    let inst = match gen_benchmark(size, seed) {
        Ok(i) => i,
        Err(e) => {
            record.error = Some(e.to_string());
            return Run { record, matching: None };
        }
    };
    let men = ModelSet::logit(size);
    let women = ModelSet::logit(size);
    let sopts = SolveOptions::default().with_tol(opts.tol).with_method(method);
    let sopts = if timed { sopts } else { sopts.sequential() };
    let mut times: Vec<f64> = Vec::with_capacity(opts.repeats);
    let mut matching = None;
    for _ in 0..opts.repeats {
        match solve(&men, &women, &inst.phi, &inst.margins, &sopts) {
            Ok(sol) => {
                times.push(sol.report.wall_time.as_secs_f64());
                record.converged = sol.report.converged;
                record.iterations = sol.report.iterations;
                record.final_residual = sol.report.final_residual;
                matching = Some(sol.matching);
            }
            Err(e) => {
                record.error = Some(e.to_string());
                return Run { record, matching: None };
            }
        }
    }
    if timed {
        record.median_secs = median(&mut times);
    }
    Run { record, matching }
}

/// Time every method on every `(size, seed)` instance. Failures are kept
/// as records and do not stop the sweep.
pub fn bench(opts: &BenchOptions) -> Result<BenchReport> {
    opts.validate()?;
    let timed = opts.jobs == 1;
    let cells: Vec<(usize, u64, Method)> = opts
        .sizes
        .iter()
        .flat_map(|s| opts.seeds.iter().flat_map(move |seed| opts.methods.iter().map(move |m| (*s, *seed, *m))))
        .collect();
    let runs: Vec<Run> = if timed {
        cells.iter().map(|(s, seed, m)| run_cell(*s, *seed, *m, opts, true)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::invalid("bench", e.to_string()))?;
        pool.install(|| cells.par_iter().map(|(s, seed, m)| run_cell(*s, *seed, *m, opts, false)).collect())
    };
    let mut records = Vec::with_capacity(runs.len());
    for chunk in runs.chunks(opts.methods.len()) {
        let reference = chunk
            .iter()
            .find(|r| r.record.converged)
            .and_then(|r| r.matching.clone());
        for run in chunk {
            let mut rec = run.record.clone();
            if let (Some(reference), Some(mu)) = (&reference, &run.matching) {
                let gap = reference.max_abs_diff(mu);
                rec.max_gap = Some(gap);
                rec.agrees = rec.converged && gap <= opts.agreement;
            }
            if !rec.agrees {
                if rec.error.is_none() {
                    log::warn!(
                        "{} on size {} seed {} does not agree with the reference",
                        rec.method,
                        rec.size,
                        rec.seed
                    );
                }
                rec.median_secs = None;
            }
            records.push(rec);
        }
    }
    let summary = summarize(&records, opts);
    Ok(BenchReport { records, summary })
}

fn summarize(records: &[BenchRecord], opts: &BenchOptions) -> Vec<BenchSummary> {
    let mut out = Vec::new();
    for size in &opts.sizes {
        for method in &opts.methods {
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.size == *size && r.method == *method).collect();
            let mut times: Vec<f64> = rows.iter().filter_map(|r| r.median_secs).collect();
            out.push(BenchSummary {
                size: *size,
                method: *method,
                runs: rows.len(),
                converged: rows.iter().filter(|r| r.converged).count(),
                agreeing: rows.iter().filter(|r| r.agrees).count(),
                median_secs: median(&mut times),
            });
        }
    }
    out
}

impl BenchReport {
    pub fn records_csv(&self) -> Result<String> {
        to_csv(&self.records)
    }

    /// Plot-ready table: one row per size and method.
    pub fn summary_csv(&self) -> Result<String> {
        to_csv(&self.summary)
    }

    pub fn median_time(&self, size: usize, method: Method) -> Option<Duration> {
        self.summary
            .iter()
            .find(|s| s.size == size && s.method == method)
            .and_then(|s| s.median_secs)
            .map(Duration::from_secs_f64)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid("csv", e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("csv", e.to_string()))
}
