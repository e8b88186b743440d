//! Parametric estimation of the joint surplus and of the heterogeneity
//! parameters from household counts.

mod bootstrap;
mod criteria;
mod mindist;
mod mle;
mod moment;
mod spectest;

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::choice::{Model, ModelSet, ModelSpec};
use crate::error::{Error, Result};
use crate::market::{Margins, Matching, SurplusMatrix};
use crate::solvers::{self, auto_method, Solution, SolveOptions, WarmStart};

pub use crate::io::SampleCounts;
pub use bootstrap::{bootstrap, bootstrap_se, resample, BootstrapSe, Replicates};
pub use criteria::{information_criteria, rank_by_bic};
pub use mindist::{min_distance, Weighting};
pub use mle::{mle, profile_loglik, MleOptions, ProfilePoint};
pub use moment::{moment_match, moment_match_with, moment_objective, MomentOptions};
pub use spectest::{entropy_spec_test, entropy_statistic, SpecTest};

impl SampleCounts {
    pub fn new(couples: DMatrix<u64>, single_men: Vec<u64>, single_women: Vec<u64>) -> Result<Self> {
        if single_men.len() != couples.nrows() {
            return Err(Error::dims("single men counts", couples.nrows(), single_men.len()));
        }
        if single_women.len() != couples.ncols() {
            return Err(Error::dims("single women counts", couples.ncols(), single_women.len()));
        }
        Ok(Self {
            couples,
            single_men,
            single_women,
        })
    }

    /// Rebuild from counts in sampling order (couples x-major, single men,
    /// single women).
    pub fn from_cells(nx: usize, ny: usize, cells: &[u64]) -> Self {
        Self {
            couples: DMatrix::from_fn(nx, ny, |x, y| cells[x * ny + y]),
            single_men: cells[nx * ny..nx * ny + nx].to_vec(),
            single_women: cells[nx * ny + nx..].to_vec(),
        }
    }

    pub fn cells(&self) -> Vec<u64> {
        let (nx, ny) = self.shape();
        let mut out = Vec::with_capacity(nx * ny + nx + ny);
        for x in 0..nx {
            for y in 0..ny {
                out.push(self.couples[(x, y)]);
            }
        }
        out.extend(&self.single_men);
        out.extend(&self.single_women);
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        self.couples.shape()
    }

    pub fn households(&self) -> u64 {
        self.couples.sum() + self.single_men.iter().sum::<u64>() + self.single_women.iter().sum::<u64>()
    }

    /// Number of individuals, `2 * couples + singles`.
    pub fn individuals(&self) -> u64 {
        2 * self.couples.sum() + self.single_men.iter().sum::<u64>() + self.single_women.iter().sum::<u64>()
    }

    /// Counts as a matching of masses, without normalization.
    pub fn as_matching(&self) -> Matching {
        Matching {
            mu: self.couples.map(|c| c as f64),
            mu_x0: DVector::from_iterator(self.single_men.len(), self.single_men.iter().map(|c| *c as f64)),
            mu_0y: DVector::from_iterator(self.single_women.len(), self.single_women.iter().map(|c| *c as f64)),
        }
    }

    /// Empirical matching `mu_hat / S_hat`, with `S_hat` the number of
    /// individuals.
    pub fn shares(&self) -> Result<Matching> {
        let s = self.individuals();
        if s == 0 {
            return Err(Error::invalid("sample counts", "no households"));
        }
        Ok(self.as_matching().scaled(1.0 / s as f64))
    }

    /// Margins `n_x = N_x / S_hat`, `m_y = M_y / S_hat`.
    pub fn margins(&self) -> Result<Margins> {
        self.shares()?.implied_margins()
    }
}

/// Linearly independent basis surplus matrices, `Phi = sum_k lambda_k phi^k`.
#[derive(Clone, Debug)]
pub struct BasisSet {
    bases: Vec<DMatrix<f64>>,
    names: Vec<String>,
}

/// Group labels mapped affinely onto `[-1, 1]`.
fn scaled_label(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

impl BasisSet {
    pub fn new(bases: Vec<DMatrix<f64>>) -> Result<Self> {
        let names = (0..bases.len()).map(|k| format!("phi{k}")).collect();
        Self::named(bases, names)
    }

    pub fn named(bases: Vec<DMatrix<f64>>, names: Vec<String>) -> Result<Self> {
        let first = bases.first().ok_or_else(|| Error::invalid("basis", "needs at least one matrix"))?;
        let shape = first.shape();
        for (k, b) in bases.iter().enumerate() {
            if b.shape() != shape {
                return Err(Error::dims(format!("rows of basis matrix {k}"), shape.0, b.nrows()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("basis matrix {k}")));
            }
        }
        if names.len() != bases.len() {
            return Err(Error::dims("basis names", bases.len(), names.len()));
        }
        let cells = shape.0 * shape.1;
        if bases.len() > cells {
            return Err(Error::invalid(
                "basis",
                format!("{} matrices cannot be independent in {cells} cells", bases.len()),
            ));
        }
        let flat = DMatrix::from_fn(bases.len(), cells, |k, c| bases[k][(c / shape.1, c % shape.1)]);
        let sv = flat.singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|s| **s > 1e-10 * top.max(1e-300) * cells as f64).count();
        if top == 0.0 || rank < bases.len() {
            return Err(Error::invalid(
                "basis",
                format!("rank {rank} below the number of matrices {}", bases.len()),
            ));
        }
        Ok(Self { bases, names })
    }

    /// One indicator per cell.
    pub fn indicators(nx: usize, ny: usize) -> Result<Self> {
        let mut bases = Vec::new();
        let mut names = Vec::new();
        for x in 0..nx {
            for y in 0..ny {
                let mut b = DMatrix::zeros(nx, ny);
                b[(x, y)] = 1.0;
                bases.push(b);
                names.push(format!("cell_{x}_{y}"));
            }
        }
        Self::named(bases, names)
    }

    pub fn constant(nx: usize, ny: usize) -> Result<Self> {
        Self::named(vec![DMatrix::from_element(nx, ny, 1.0)], vec!["const".into()])
    }

    /// Monomials `x^a y^b` for `a <= degree_x`, `b <= degree_y` in the
    /// rescaled labels.
    pub fn polynomial(nx: usize, ny: usize, degree_x: usize, degree_y: usize) -> Result<Self> {
        let mut bases = Vec::new();
        let mut names = Vec::new();
        for a in 0..=degree_x {
            for b in 0..=degree_y {
                bases.push(DMatrix::from_fn(nx, ny, |x, y| {
                    scaled_label(x, nx).powi(a as i32) * scaled_label(y, ny).powi(b as i32)
                }));
                names.push(format!("x{a}y{b}"));
            }
        }
        Self::named(bases, names)
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bases[0].shape()
    }

    pub fn get(&self, k: usize) -> &DMatrix<f64> {
        &self.bases[k]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// True when the bases span every surplus matrix.
    pub fn spans_all(&self) -> bool {
        let (nx, ny) = self.shape();
        self.len() == nx * ny
    }

    pub fn surplus(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        if lambda.len() != self.len() {
            return Err(Error::dims("surplus coefficients", self.len(), lambda.len()));
        }
        let (nx, ny) = self.shape();
        let mut phi = DMatrix::zeros(nx, ny);
        for (b, l) in self.bases.iter().zip(lambda) {
            phi += b * *l;
        }
        Ok(phi)
    }

    /// `C^k(mu) = sum_xy mu_xy phi^k_xy`.
    pub fn comoments(&self, mu: &DMatrix<f64>) -> Vec<f64> {
        self.bases.iter().map(|b| b.component_mul(mu).sum()).collect()
    }

    /// Rows are the listed cells, columns the bases.
    pub fn design(&self, cells: &[(usize, usize)]) -> DMatrix<f64> {
        DMatrix::from_fn(cells.len(), self.len(), |i, k| self.bases[k][cells[i]])
    }
}

/// Maps distributional parameters to the heterogeneity of every group.
#[derive(Clone, Debug)]
pub enum DistParamMap {
    /// Parameter-free families.
    Fixed { men: ModelSet, women: ModelSet },
    /// Logit on both sides.
    Logit,
    /// Scaled logit with `sigma_x = exp(sum_{k=1..} theta_k x^k)` (no
    /// constant, which pins the scale) and
    /// `tau_y = exp(tau_0 + sum_{k=1..} theta_k y^k)`, labels in `[-1, 1]`.
    HeteroLogit {
        sigma_degree: usize,
        tau_degree: usize,
        tau_constant: bool,
    },
}

impl DistParamMap {
    pub fn dim(&self) -> usize {
        match self {
            DistParamMap::Fixed { .. } | DistParamMap::Logit => 0,
            DistParamMap::HeteroLogit {
                sigma_degree,
                tau_degree,
                tau_constant,
            } => sigma_degree + tau_degree + usize::from(*tau_constant),
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            DistParamMap::HeteroLogit {
                sigma_degree,
                tau_degree,
                tau_constant,
            } => {
                let mut v: Vec<String> = (1..=*sigma_degree).map(|k| format!("sigma{k}")).collect();
                if *tau_constant {
                    v.push("tau0".into());
                }
                v.extend((1..=*tau_degree).map(|k| format!("tau{k}")));
                v
            }
            _ => Vec::new(),
        }
    }

    /// Parameters of the reference family; all zeros is homoskedastic logit.
    pub fn reference(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    pub fn build(&self, theta: &[f64], nx: usize, ny: usize) -> Result<(ModelSet, ModelSet)> {
        if theta.len() != self.dim() {
            return Err(Error::dims("distribution parameters", self.dim(), theta.len()));
        }
        match self {
            DistParamMap::Fixed { men, women } => {
                if men.len() != nx {
                    return Err(Error::dims("men's models", nx, men.len()));
                }
                if women.len() != ny {
                    return Err(Error::dims("women's models", ny, women.len()));
                }
                Ok((men.clone(), women.clone()))
            }
            DistParamMap::Logit => Ok((ModelSet::logit(nx), ModelSet::logit(ny))),
            DistParamMap::HeteroLogit {
                sigma_degree,
                tau_constant,
                ..
            } => {
                let (ts, tt) = theta.split_at(*sigma_degree);
                let sigma: Vec<f64> = (0..nx)
                    .map(|x| {
                        let l = scaled_label(x, nx);
                        ts.iter().enumerate().map(|(k, t)| t * l.powi(k as i32 + 1)).sum::<f64>().exp()
                    })
                    .collect();
                let (c, tk) = if *tau_constant { (tt[0], &tt[1..]) } else { (0.0, tt) };
                let tau: Vec<f64> = (0..ny)
                    .map(|y| {
                        let l = scaled_label(y, ny);
                        (c + tk.iter().enumerate().map(|(k, t)| t * l.powi(k as i32 + 1)).sum::<f64>()).exp()
                    })
                    .collect();
                Ok((ModelSet::scaled_logit(&sigma)?, ModelSet::scaled_logit(&tau)?))
            }
        }
    }
}

/// Surplus basis together with the heterogeneity parameterization.
#[derive(Clone, Debug)]
pub struct ParamModelSpec {
    pub basis: BasisSet,
    pub dist: DistParamMap,
}

impl ParamModelSpec {
    pub fn new(basis: BasisSet, dist: DistParamMap) -> Self {
        Self { basis, dist }
    }

    pub fn logit(basis: BasisSet) -> Self {
        Self::new(basis, DistParamMap::Logit)
    }

    pub fn dim(&self) -> usize {
        self.basis.len() + self.dist.dim()
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = self.basis.names().to_vec();
        v.extend(self.dist.names());
        v
    }

    pub fn shape(&self) -> (usize, usize) {
        self.basis.shape()
    }

    pub(crate) fn check_shape(&self, (dx, dy): (usize, usize)) -> Result<()> {
        let (nx, ny) = self.shape();
        if dx != nx {
            return Err(Error::dims("men groups in the data", nx, dx));
        }
        if dy != ny {
            return Err(Error::dims("women groups in the data", ny, dy));
        }
        Ok(())
    }

    /// Stable matching at `(lambda, theta)` for margins `r`.
    pub fn equilibrium(
        &self,
        lambda: &[f64],
        theta: &[f64],
        r: &Margins,
        tol: f64,
        warm: Option<WarmStart>,
    ) -> Result<Solution> {
        let (nx, ny) = self.shape();
        let phi = SurplusMatrix::new(self.basis.surplus(lambda)?)?;
        let (men, women) = self.dist.build(theta, nx, ny)?;
        let mut opts = SolveOptions::default().with_tol(tol).with_method(auto_method(&men, &women));
        opts.warm_start = warm;
        let sol = solvers::solve(&men, &women, &phi, r, &opts)?;
        if !sol.report.converged {
            return Err(Error::NoConvergence {
                what: format!("equilibrium at lambda = {lambda:?}, theta = {theta:?}"),
                iterations: sol.report.iterations,
                residual: sol.report.final_residual,
            });
        }
        Ok(sol)
    }
}

/// JSON description of a parametric model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub basis: BasisDocument,
    #[serde(default = "logit_doc")]
    pub heterogeneity: HeterogeneityDocument,
    /// Optional model-selection grid over polynomial degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDocument>,
    /// Distribution parameters held fixed by moment matching and minimum
    /// distance; defaults to the reference family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

fn logit_doc() -> HeterogeneityDocument {
    HeterogeneityDocument::Logit
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisDocument {
    Constant,
    Indicators,
    Polynomial { degree_x: usize, degree_y: usize },
    Explicit { matrices: Vec<Vec<Vec<f64>>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeterogeneityDocument {
    Logit,
    HeteroLogit {
        #[serde(default)]
        sigma_degree: usize,
        #[serde(default)]
        tau_degree: usize,
        #[serde(default)]
        tau_constant: bool,
    },
    Fixed { men: ModelSpec, women: ModelSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDocument {
    pub degree_x: Vec<usize>,
    pub degree_y: Vec<usize>,
    #[serde(default)]
    pub sigma_degree: Vec<usize>,
}

impl BasisDocument {
    pub fn build(&self, nx: usize, ny: usize) -> Result<BasisSet> {
        match self {
            BasisDocument::Constant => BasisSet::constant(nx, ny),
            BasisDocument::Indicators => BasisSet::indicators(nx, ny),
            BasisDocument::Polynomial { degree_x, degree_y } => BasisSet::polynomial(nx, ny, *degree_x, *degree_y),
            BasisDocument::Explicit { matrices } => {
                let mats = matrices
                    .iter()
                    .enumerate()
                    .map(|(k, rows)| {
                        if rows.len() != nx || rows.iter().any(|r| r.len() != ny) {
                            return Err(Error::dims(format!("rows of basis matrix {k}"), nx, rows.len()));
                        }
                        Ok(DMatrix::from_fn(nx, ny, |x, y| rows[x][y]))
                    })
                    .collect::<Result<Vec<_>>>()?;
                BasisSet::new(mats)
            }
        }
    }
}

impl HeterogeneityDocument {
    pub fn build(&self, nx: usize, ny: usize) -> Result<DistParamMap> {
        Ok(match self {
            HeterogeneityDocument::Logit => DistParamMap::Logit,
            HeterogeneityDocument::HeteroLogit {
                sigma_degree,
                tau_degree,
                tau_constant,
            } => DistParamMap::HeteroLogit {
                sigma_degree: *sigma_degree,
                tau_degree: *tau_degree,
                tau_constant: *tau_constant,
            },
            HeterogeneityDocument::Fixed { men, women } => {
                let m: Vec<Model> = (0..nx).map(|x| men.build(ny, x)).collect::<Result<_>>()?;
                let w: Vec<Model> = (0..ny).map(|y| women.build(nx, y)).collect::<Result<_>>()?;
                DistParamMap::Fixed {
                    men: ModelSet(m),
                    women: ModelSet(w),
                }
            }
        })
    }
}

impl SpecDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self, nx: usize, ny: usize) -> Result<ParamModelSpec> {
        Ok(ParamModelSpec::new(self.basis.build(nx, ny)?, self.heterogeneity.build(nx, ny)?))
    }

    /// Every model of the grid, or just this one when no grid is given.
    pub fn grid_specs(&self, nx: usize, ny: usize) -> Result<Vec<(String, ParamModelSpec)>> {
        let Some(g) = &self.grid else {
            return Ok(vec![("model".into(), self.build(nx, ny)?)]);
        };
        let sigmas = if g.sigma_degree.is_empty() { vec![None] } else { g.sigma_degree.iter().map(|s| Some(*s)).collect() };
        let mut out = Vec::new();
        for dx in &g.degree_x {
            for dy in &g.degree_y {
                for s in &sigmas {
                    let basis = BasisSet::polynomial(nx, ny, *dx, *dy)?;
                    let (dist, label) = match s {
                        None => (self.heterogeneity.build(nx, ny)?, format!("poly_{dx}_{dy}")),
                        Some(s) => (
                            DistParamMap::HeteroLogit {
                                sigma_degree: *s,
                                tau_degree: 0,
                                tau_constant: false,
                            },
                            format!("poly_{dx}_{dy}_sigma_{s}"),
                        ),
                    };
                    out.push((label, ParamModelSpec::new(basis, dist)));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(rename = "mm")]
    MomentMatch,
    #[serde(rename = "mle")]
    Mle,
    #[serde(rename = "md")]
    MinDistance,
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mm" => Ok(Estimator::MomentMatch),
            "mle" => Ok(Estimator::Mle),
            "md" => Ok(Estimator::MinDistance),
            other => Err(Error::invalid("estimator", format!("unknown estimator {other:?}"))),
        }
    }
}

/// A direction of the information matrix held fixed because its
/// eigenvalue is negligible.
#[derive(Clone, Debug, Serialize)]
pub struct PinnedDirection {
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceStats {
    pub j_statistic: f64,
    pub dof: usize,
    /// Chi-squared p-value; only meaningful under efficient weighting.
    pub p_value: Option<f64>,
    /// Cells left out because they hold no couples.
    pub excluded: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimationResult {
    pub estimator: Estimator,
    pub names: Vec<String>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    /// Standard errors of `(lambda, theta)`, when computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: u64,
    /// Observed comoments in share units.
    pub comoments: Vec<f64>,
    pub predicted_comoments: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pinned: Vec<PinnedDirection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceStats>,
    /// Fitted matching at the estimate, in share units.
    #[serde(skip)]
    pub fitted: Matching,
}

impl EstimationResult {
    pub fn dim(&self) -> usize {
        self.lambda.len() + self.theta.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.lambda.clone();
        p.extend(&self.theta);
        p
    }
}

/// Observed household masses with the normalizations used throughout.
/// Masses are counts, possibly non-integer for expected-count data.
#[derive(Clone, Debug)]
pub struct Sample {
    pub masses: Matching,
    /// `masses / S_hat` with `S_hat` the number of individuals.
    pub shares: Matching,
    /// Margins of the shares.
    pub margins: Margins,
    pub households: f64,
    pub individuals: f64,
}

impl Sample {
    pub fn from_masses(masses: Matching) -> Result<Self> {
        let all = masses.implied_margins()?;
        let individuals = all.total();
        if individuals <= 0.0 {
            return Err(Error::invalid("sample", "no households"));
        }
        let shares = masses.scaled(1.0 / individuals);
        let margins = shares.implied_margins()?;
        let households = masses.households();
        Ok(Self {
            masses,
            shares,
            margins,
            households,
            individuals,
        })
    }

    pub fn from_counts(counts: &SampleCounts) -> Result<Self> {
        Self::from_masses(counts.as_matching())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.masses.nx(), self.masses.ny())
    }

    /// Household count used to resample, rounded for expected-count data.
    pub fn household_count(&self) -> u64 {
        self.households.round().max(1.0) as u64
    }

    /// True when every couple cell and every singles cell has mass.
    pub fn is_interior(&self) -> bool {
        self.masses.mu.iter().chain(self.masses.mu_x0.iter()).chain(self.masses.mu_0y.iter()).all(|v| *v > 0.0)
    }
}

/// `sum_cells mass * log(mu_cell / H)` with `H = sum n + sum m - sum mu_xy`
/// the number of households implied by the model. Returns `-inf` when the
/// model puts no mass on an observed cell.
pub fn loglik_at(model: &Matching, data: &Matching) -> f64 {
    let h = model.households();
    let cells = crate::simulate::matching_cells(model);
    let observed = crate::simulate::matching_cells(data);
    let mut ll = 0.0;
    for (i, (c, m)) in observed.iter().zip(&cells).enumerate() {
        if *c == 0.0 {
            continue;
        }
        if *m <= 0.0 {
            log::warn!("model predicts no mass on observed cell {i}");
            return f64::NEG_INFINITY;
        }
        ll += c * (m / h).ln();
    }
    ll
}

pub fn log_likelihood(spec: &ParamModelSpec, lambda: &[f64], theta: &[f64], data: &Sample) -> Result<f64> {
    spec.check_shape(data.shape())?;
    let sol = spec.equilibrium(lambda, theta, &data.margins, INNER_TOL, None)?;
    Ok(loglik_at(&sol.matching, &data.masses))
}

/// Margin tolerance of equilibrium solves inside the estimators.
pub(crate) const INNER_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct EstimateOptions {
    pub estimator: Estimator,
    /// Distribution parameters held fixed by moment matching and minimum
    /// distance; the reference family when absent.
    pub theta: Option<Vec<f64>>,
    pub weighting: Weighting,
    pub moment: MomentOptions,
    pub mle: MleOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            estimator: Estimator::MomentMatch,
            theta: None,
            weighting: Weighting::Efficient,
            moment: MomentOptions::default(),
            mle: MleOptions::default(),
        }
    }
}

impl EstimateOptions {
    pub fn new(estimator: Estimator) -> Self {
        Self {
            estimator,
            ..Self::default()
        }
    }

    pub fn fixed_theta(&self, spec: &ParamModelSpec) -> Result<Vec<f64>> {
        let theta = self.theta.clone().unwrap_or_else(|| spec.dist.reference());
        if theta.len() != spec.dist.dim() {
            return Err(Error::dims("distribution parameters", spec.dist.dim(), theta.len()));
        }
        Ok(theta)
    }
}

pub fn estimate(spec: &ParamModelSpec, data: &Sample, opts: &EstimateOptions) -> Result<EstimationResult> {
    match opts.estimator {
        Estimator::MomentMatch => moment_match_with(spec, data, &opts.fixed_theta(spec)?, &opts.moment),
        Estimator::Mle => mle(spec, data, &opts.mle),
        Estimator::MinDistance => min_distance(spec, data, &opts.fixed_theta(spec)?, &opts.weighting),
    }
}

/// Fill in the likelihood, criteria and comoments of an estimate.
pub(crate) fn finish(
    spec: &ParamModelSpec,
    estimator: Estimator,
    lambda: Vec<f64>,
    theta: Vec<f64>,
    fitted: Matching,
    data: &Sample,
    converged: bool,
    iterations: usize,
) -> EstimationResult {
    let loglik = loglik_at(&fitted, &data.masses);
    let dim = lambda.len() + theta.len();
    let (aic, bic) = information_criteria(loglik, dim, data.households);
    EstimationResult {
        estimator,
        names: spec.names(),
        comoments: spec.basis.comoments(&data.shares.mu),
        predicted_comoments: spec.basis.comoments(&fitted.mu),
        lambda,
        theta,
        se: None,
        loglik,
        aic,
        bic,
        n_obs: data.household_count(),
        converged,
        iterations,
        pinned: Vec::new(),
        distance: None,
        fitted,
    }
}
