//! One function per subcommand. Each writes its outputs through the report.

use std::path::Path;

use serde::Serialize;

use cupid_core::bench::{self as harness, BenchOptions};
use cupid_core::estimate::{
    bootstrap_se, entropy_spec_test, estimate as fit, rank_by_bic, BootstrapSe, EstimateOptions, Estimator,
    SpecDocument, Weighting,
};
use cupid_core::identify::{surplus_share, IdentifyOptions};
use cupid_core::io::{
    counts_to_csv, margins_to_csv, matching_to_csv, matrix_to_csv, read_counts, read_margins, read_matching,
    read_surplus, surplus_to_csv, utilities_to_csv,
};
use cupid_core::market::margin_residuals;
use cupid_core::numerics::mix_seed;
use cupid_core::simulate::{gen_benchmark, sample_households};
use cupid_core::solvers::auto_method;
use cupid_core::{identify as identify_market, solve as solve_market, Error, EstimationResult, Method, ModelSet};
use cupid_core::{ParamModelSpec, Sample, SampleCounts, SolveOptions};

use crate::report::{CliResult, Failure, Report, SCHEMA_VERSION};
use crate::{BenchArgs, EstimateArgs, IdentifyArgs, SimulateArgs, SolveArgs, TestArgs};

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Models for `groups` groups facing `n_alt` alternatives; logit when no
/// document is given.
fn load_models(path: Option<&Path>, groups: usize, n_alt: usize) -> CliResult<ModelSet> {
    match path {
        None => Ok(ModelSet::logit(groups)),
        Some(p) => Ok(ModelSet::from_json(&read_text(p)?, groups, n_alt)?),
    }
}

fn parse_method(name: &str, men: &ModelSet, women: &ModelSet) -> CliResult<Method> {
    if name == "auto" {
        Ok(auto_method(men, women))
    } else {
        Ok(name.parse()?)
    }
}

pub fn solve(a: &SolveArgs, rep: &mut Report) -> CliResult<()> {
    let phi = read_surplus(&a.phi)?;
    let margins = read_margins(&a.margins)?;
    if (phi.nx(), phi.ny()) != (margins.nx(), margins.ny()) {
        let what = if phi.nx() != margins.nx() { "men groups in the surplus" } else { "women groups in the surplus" };
        let (e, f) = if phi.nx() != margins.nx() { (margins.nx(), phi.nx()) } else { (margins.ny(), phi.ny()) };
        return Err(Error::dims(what, e, f).into());
    }
    let men = load_models(a.model_men.as_deref(), margins.nx(), margins.ny())?;
    let women = load_models(a.model_women.as_deref(), margins.ny(), margins.nx())?;
    let method = parse_method(&a.method, &men, &women)?;
    let opts = SolveOptions::default().with_tol(a.tol).with_max_iter(a.max_iter).with_method(method);
    let sol = solve_market(&men, &women, &phi, &margins, &opts)?;
    rep.write("matching.csv", &matching_to_csv(&sol.matching))?;
    rep.write("utilities.csv", &utilities_to_csv(sol.systematic.as_ref(), &sol.utilities, Some(phi.mask())))?;
    let (rn, rm) = margin_residuals(&sol.matching, &margins)?;
    rep.detail("solve", &sol.report)?;
    rep.detail("max_margin_residual", rn.amax().max(rm.amax()))?;
    if !sol.report.converged {
        return Err(Failure::NoConvergence(format!(
            "{} stopped after {} iterations with margin residual {:e}",
            sol.report.method, sol.report.iterations, sol.report.final_residual
        )));
    }
    Ok(())
}

pub fn identify(a: &IdentifyArgs, rep: &mut Report) -> CliResult<()> {
    let margins = read_margins(&a.margins)?;
    let mu = read_matching(&a.matching, Some((margins.nx(), margins.ny())))?;
    let men = load_models(a.model_men.as_deref(), margins.nx(), margins.ny())?;
    let women = load_models(a.model_women.as_deref(), margins.ny(), margins.nx())?;
    let opts = IdentifyOptions { smoothing: a.smoothing };
    let id = identify_market(&men, &women, &mu, &margins, &opts)?;
    rep.write("phi.csv", &surplus_to_csv(&id.phi))?;
    rep.write("utilities.csv", &utilities_to_csv(Some(&id.systematic), &id.groups, Some(id.phi.mask())))?;
    match surplus_share(&men, &women, &mu, &margins) {
        Ok(s) => {
            rep.write("shares.csv", &matrix_to_csv("men_share", &s.share, Some(id.phi.mask())))?;
            rep.detail("flagged_shares", &s.flagged)?;
        }
        Err(e @ (Error::Unsupported(_) | Error::Boundary { .. })) => {
            log::warn!("surplus shares not written: {e}");
            rep.detail("shares_unavailable", e.to_string())?;
        }
        Err(e) => return Err(e.into()),
    }
    let forbidden: Vec<(usize, usize)> = (0..margins.nx())
        .flat_map(|x| (0..margins.ny()).map(move |y| (x, y)))
        .filter(|(x, y)| id.phi.is_forbidden(*x, *y))
        .collect();
    rep.detail("forbidden_cells", forbidden)?;
    Ok(())
}

/// Counts with optional margins that must share their shape.
fn load_sample(data: &Path, margins: Option<&Path>) -> CliResult<(SampleCounts, Sample)> {
    let counts = read_counts(data, None)?;
    let (nx, ny) = counts.shape();
    if let Some(p) = margins {
        let r = read_margins(p)?;
        if r.nx() != nx {
            return Err(Error::dims("men groups in the counts", r.nx(), nx).into());
        }
        if r.ny() != ny {
            return Err(Error::dims("women groups in the counts", r.ny(), ny).into());
        }
        let implied = counts.margins()?;
        let scale = implied.total() / r.total();
        let gap = (r.n() * scale - implied.n()).amax().max((r.m() * scale - implied.m()).amax());
        if gap > 1e-9 * implied.total() {
            log::warn!("margins file differs from the margins implied by the counts; the counts are used");
        }
    }
    let sample = Sample::from_counts(&counts)?;
    Ok((counts, sample))
}

fn parse_weighting(name: &str) -> CliResult<Weighting> {
    match name {
        "efficient" => Ok(Weighting::Efficient),
        "identity" => Ok(Weighting::Identity),
        other => Err(Failure::Validation(format!("unknown weighting {other:?}; use efficient or identity"))),
    }
}

#[derive(Serialize)]
struct GridRow<'a> {
    rank: Option<usize>,
    model: &'a str,
    dim: Option<usize>,
    loglik: Option<f64>,
    aic: Option<f64>,
    bic: Option<f64>,
    converged: Option<bool>,
    error: Option<String>,
}

#[derive(Serialize)]
struct EstimatesDocument<'a> {
    schema_version: u32,
    model: &'a str,
    #[serde(flatten)]
    estimate: &'a EstimationResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<&'a BootstrapSe>,
}

fn rows_csv<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Validation(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::Validation(e.to_string()))
}

fn comoments_csv(spec: &ParamModelSpec, res: &EstimationResult) -> CliResult<Vec<u8>> {
    #[derive(Serialize)]
    struct Row<'a> {
        basis: &'a str,
        observed: f64,
        predicted: f64,
    }
    let rows: Vec<Row> = spec
        .basis
        .names()
        .iter()
        .zip(res.comoments.iter().zip(&res.predicted_comoments))
        .map(|(n, (o, p))| Row {
            basis: n,
            observed: *o,
            predicted: *p,
        })
        .collect();
    rows_csv(&rows)
}

pub fn estimate(a: &EstimateArgs, rep: &mut Report) -> CliResult<()> {
    let (counts, data) = load_sample(&a.data, a.margins.as_deref())?;
    let (nx, ny) = counts.shape();
    let doc = SpecDocument::from_json(&read_text(&a.spec)?)?;
    let estimator: Estimator = a.estimator.parse()?;
    let mut opts = EstimateOptions::new(estimator);
    opts.weighting = parse_weighting(&a.weighting)?;
    opts.theta = doc.theta.clone();
    let specs = doc.grid_specs(nx, ny)?;
    let mut fits: Vec<(usize, EstimationResult)> = Vec::new();
    let mut failures: Vec<(usize, String)> = Vec::new();
    for (i, (label, spec)) in specs.iter().enumerate() {
        match fit(spec, &data, &opts) {
            Ok(r) => {
                log::info!("{label}: loglik {:.3}, bic {:.3}", r.loglik, r.bic);
                fits.push((i, r));
            }
            // A lone model reports its own error.
            Err(e) if doc.grid.is_none() => return Err(e.into()),
            Err(e) => {
                log::warn!("{label}: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    if fits.is_empty() {
        return Err(Failure::Validation("no model of the grid could be fitted".into()));
    }
    let results: Vec<EstimationResult> = fits.iter().map(|(_, r)| r.clone()).collect();
    let order = rank_by_bic(&results);
    if doc.grid.is_some() {
        let mut rows = Vec::new();
        for (rank, k) in order.iter().enumerate() {
            let (i, r) = &fits[*k];
            rows.push(GridRow {
                rank: Some(rank + 1),
                model: &specs[*i].0,
                dim: Some(r.dim()),
                loglik: Some(r.loglik),
                aic: Some(r.aic),
                bic: Some(r.bic),
                converged: Some(r.converged),
                error: None,
            });
        }
        for (i, e) in &failures {
            rows.push(GridRow {
                rank: None,
                model: &specs[*i].0,
                dim: None,
                loglik: None,
                aic: None,
                bic: None,
                converged: None,
                error: Some(e.clone()),
            });
        }
        rep.write("grid.csv", &rows_csv(&rows)?)?;
    }
    let (best, result) = &fits[order[0]];
    let (label, best_spec) = (specs[*best].0.as_str(), &specs[*best].1);
    let boot = if a.boot > 0 {
        Some(bootstrap_se(best_spec, &data, &opts, a.boot, a.seed)?)
    } else {
        None
    };
    rep.write_json(
        "estimates.json",
        &EstimatesDocument {
            schema_version: SCHEMA_VERSION,
            model: label,
            estimate: result,
            bootstrap: boot.as_ref(),
        },
    )?;
    rep.write("comoments.csv", &comoments_csv(best_spec, result)?)?;
    rep.detail("model", label)?;
    rep.detail("estimator", estimator)?;
    rep.detail("households", counts.households())?;
    rep.detail("converged", result.converged)?;
    if !result.converged {
        return Err(Failure::NoConvergence(format!(
            "{label}: estimator stopped after {} iterations",
            result.iterations
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TestDocument<'a> {
    schema_version: u32,
    statistic: f64,
    p_value: f64,
    n_boot: usize,
    failed: usize,
    names: Vec<String>,
    lambda: &'a [f64],
}

pub fn test(a: &TestArgs, rep: &mut Report) -> CliResult<()> {
    let (counts, data) = load_sample(&a.data, a.margins.as_deref())?;
    let (nx, ny) = counts.shape();
    let doc = SpecDocument::from_json(&read_text(&a.spec)?)?;
    if doc.grid.is_some() {
        return Err(Failure::Validation("the specification test takes a single model, not a grid".into()));
    }
    let spec = doc.build(nx, ny)?;
    let theta = doc.theta.clone().unwrap_or_else(|| spec.dist.reference());
    if theta.len() != spec.dist.dim() {
        return Err(Error::dims("distribution parameters", spec.dist.dim(), theta.len()).into());
    }
    let t = entropy_spec_test(&spec, &data, &theta, a.boot, a.seed)?;
    rep.write_json(
        "test.json",
        &TestDocument {
            schema_version: SCHEMA_VERSION,
            statistic: t.statistic,
            p_value: t.p_value,
            n_boot: t.n_boot,
            failed: t.failed,
            names: spec.basis.names().to_vec(),
            lambda: &t.lambda,
        },
    )?;
    #[derive(Serialize)]
    struct Row {
        replicate: usize,
        statistic: f64,
    }
    let rows: Vec<Row> = t
        .replicates
        .iter()
        .enumerate()
        .map(|(replicate, s)| Row {
            replicate,
            statistic: *s,
        })
        .collect();
    rep.write("replicates.csv", &rows_csv(&rows)?)?;
    rep.detail("statistic", t.statistic)?;
    rep.detail("p_value", t.p_value)?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs, rep: &mut Report) -> CliResult<()> {
    let inst = gen_benchmark(a.size, a.seed)?;
    let (men, women) = match &a.model {
        None => (ModelSet::logit(a.size), ModelSet::logit(a.size)),
        Some(p) => {
            let text = read_text(p)?;
            (ModelSet::from_json(&text, a.size, a.size)?, ModelSet::from_json(&text, a.size, a.size)?)
        }
    };
    let opts = SolveOptions::default().with_tol(1e-10).with_method(auto_method(&men, &women));
    let sol = solve_market(&men, &women, &inst.phi, &inst.margins, &opts)?;
    if !sol.report.converged {
        return Err(Failure::NoConvergence(format!(
            "equilibrium of the simulated market: residual {:e}",
            sol.report.final_residual
        )));
    }
    let counts = sample_households(&sol.matching, a.households, mix_seed(a.seed, 1))?;
    rep.write("margins.csv", &margins_to_csv(&inst.margins))?;
    rep.write("phi.csv", &surplus_to_csv(&inst.phi))?;
    rep.write("matching.csv", &matching_to_csv(&sol.matching))?;
    rep.write("counts.csv", &counts_to_csv(&counts))?;
    rep.detail("size", a.size)?;
    rep.detail("seed", a.seed)?;
    rep.detail("households", a.households)?;
    rep.detail("solve", &sol.report)?;
    Ok(())
}

pub fn bench(a: &BenchArgs, rep: &mut Report) -> CliResult<()> {
    let methods = a.methods.iter().map(|m| m.parse()).collect::<cupid_core::Result<Vec<Method>>>()?;
    let opts = BenchOptions {
        sizes: a.sizes.clone(),
        seeds: a.seeds.clone(),
        methods,
        repeats: a.repeats,
        tol: a.tol,
        agreement: a.agreement,
        jobs: a.jobs,
    };
    let mut report = harness::bench(&opts)?;
    if rep.no_timings() {
        report.records.iter_mut().for_each(|r| r.median_secs = None);
        report.summary.iter_mut().for_each(|s| s.median_secs = None);
    }
    rep.write("bench.csv", report.records_csv()?.as_bytes())?;
    rep.write("summary.csv", report.summary_csv()?.as_bytes())?;
    rep.detail("summary", &report.summary)?;
    let failed: Vec<String> = report
        .records
        .iter()
        .filter(|r| !r.agrees)
        .map(|r| format!("{} size {} seed {}", r.method, r.size, r.seed))
        .collect();
    if !failed.is_empty() {
        return Err(Failure::NoConvergence(format!(
            "{} cells did not converge or agree: {}",
            failed.len(),
            failed.join(", ")
        )));
    }
    Ok(())
}
