//! JSON documents describing heterogeneity families.
//!
//! A document is instantiated for a given number of inside alternatives,
//! which lets one document serve every group on a side of the market.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::mix_seed;

use super::gev::{MultinomialGenerator, NestedGenerator};
use super::{DiscretizedDistribution, FcMnl, GevModel, Logit, Model, NestedLogit, RcLogit, ScaledModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Logit,
    NestedLogit {
        /// Nest of each inside alternative.
        nests: Vec<usize>,
        lambda: Vec<f64>,
    },
    Scaled {
        scale: f64,
        base: Box<ModelSpec>,
    },
    Gev {
        generator: GeneratorSpec,
    },
    Fcmnl {
        sigma: f64,
        tau: f64,
        /// Full matrix over the choice set, outside option first.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<Vec<f64>>>,
        /// Constant off-diagonal entry when `b` is absent.
        #[serde(default)]
        rho: f64,
    },
    Discretized {
        #[serde(flatten)]
        source: SupportSpec,
    },
    RcLogit {
        /// One row per alternative of the full choice set.
        z: Vec<Vec<f64>>,
        draws: SupportSpec,
        temperature: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Multinomial,
    Nested { nests: Vec<usize>, lambda: Vec<f64> },
    Fcmnl {
        sigma: f64,
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        rho: f64,
    },
}

/// Where support points come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupportSpec {
    Explicit {
        support: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Csv {
        csv: PathBuf,
    },
    /// Random or quantile Gumbel nodes; the dimension is the full choice set
    /// unless `dim` is given.
    Gumbel {
        gumbel: GumbelSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GumbelSpec {
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub quantiles: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |v| v.len());
    if rows.iter().any(|v| v.len() != c) {
        return Err(Error::invalid(what, "rows have different lengths"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn fcmnl(n_alt: usize, sigma: f64, tau: f64, b: &Option<Vec<Vec<f64>>>, rho: f64) -> Result<FcMnl> {
    match b {
        Some(rows) => {
            let m = matrix(rows, "FC-MNL b")?;
            if m.nrows() != n_alt + 1 {
                return Err(Error::dims("FC-MNL b rows", n_alt + 1, m.nrows()));
            }
            FcMnl::new(m, sigma, tau)
        }
        None => FcMnl::uniform(n_alt, rho, sigma, tau),
    }
}

impl SupportSpec {
    fn build(&self, dim: usize, group: usize) -> Result<DiscretizedDistribution> {
        match self {
            SupportSpec::Explicit { support, weights } => {
                DiscretizedDistribution::new(matrix(support, "support")?, weights.clone())
            }
            SupportSpec::Csv { csv } => crate::io::read_distribution(csv),
            SupportSpec::Gumbel { gumbel } => {
                let d = gumbel.dim.unwrap_or(dim);
                let seed = mix_seed(gumbel.seed, group as u64);
                if gumbel.quantiles {
                    DiscretizedDistribution::gumbel_quantiles(gumbel.points, d, seed)
                } else {
                    DiscretizedDistribution::gumbel_draws(gumbel.points, d, seed)
                }
            }
        }
    }
}

impl ModelSpec {
    /// Build the model of group `group` facing `n_alt` inside alternatives.
    pub fn build(&self, n_alt: usize, group: usize) -> Result<Model> {
        let model = match self {
            ModelSpec::Logit => Model::Logit(Logit),
            ModelSpec::NestedLogit { nests, lambda } => {
                if nests.len() != n_alt {
                    return Err(Error::dims("nested logit alternatives", n_alt, nests.len()));
                }
                Model::NestedLogit(NestedLogit::new(nests.clone(), lambda.clone())?)
            }
            ModelSpec::Scaled { scale, base } => {
                Model::Scaled(ScaledModel::new(base.build(n_alt, group)?, *scale)?)
            }
            ModelSpec::Gev { generator } => {
                let g: Arc<dyn super::GevGenerator> = match generator {
                    GeneratorSpec::Multinomial => Arc::new(MultinomialGenerator { dim: n_alt + 1 }),
                    GeneratorSpec::Nested { nests, lambda } => {
                        // Reuse the nested-logit validation.
                        NestedLogit::new(nests.clone(), lambda.clone())?;
                        if nests.len() != n_alt {
                            return Err(Error::dims("nested generator alternatives", n_alt, nests.len()));
                        }
                        Arc::new(NestedGenerator {
                            nest_of: nests.clone(),
                            lambda: lambda.clone(),
                        })
                    }
                    GeneratorSpec::Fcmnl { sigma, tau, b, rho } => Arc::new(fcmnl(n_alt, *sigma, *tau, b, *rho)?),
                };
                Model::Gev(GevModel::new(g)?)
            }
            ModelSpec::Fcmnl { sigma, tau, b, rho } => Model::FcMnl(fcmnl(n_alt, *sigma, *tau, b, *rho)?),
            ModelSpec::Discretized { source } => {
                let d = source.build(n_alt + 1, group)?;
                if d.dim() != n_alt + 1 {
                    return Err(Error::dims("support columns", n_alt + 1, d.dim()));
                }
                Model::Discretized(d)
            }
            ModelSpec::RcLogit { z, draws, temperature } => {
                let z = matrix(z, "loading matrix")?;
                if z.nrows() != n_alt + 1 {
                    return Err(Error::dims("loading matrix rows", n_alt + 1, z.nrows()));
                }
                let d = draws.build(z.ncols(), group)?;
                Model::RcLogit(RcLogit::new(z, d, *temperature)?)
            }
        };
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Models for every group on one side of the market.
#[derive(Clone, Debug)]
pub struct ModelSet(pub Vec<Model>);

impl ModelSet {
    pub fn uniform(model: Model, groups: usize) -> Self {
        ModelSet(vec![model; groups])
    }

    pub fn logit(groups: usize) -> Self {
        Self::uniform(Model::logit(), groups)
    }

    /// Heteroskedastic logit with one scale per group.
    pub fn scaled_logit(scales: &[f64]) -> Result<Self> {
        scales.iter().map(|s| Model::scaled_logit(*s)).collect::<Result<Vec<_>>>().map(ModelSet)
    }

    /// A JSON object applies to every group; an array lists one document per
    /// group.
    pub fn from_json(text: &str, groups: usize, n_alt: usize) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let specs: Vec<ModelSpec> = match value {
            serde_json::Value::Array(items) => {
                if items.len() != groups {
                    return Err(Error::dims("model documents", groups, items.len()));
                }
                items
                    .into_iter()
                    .map(serde_json::from_value)
                    .collect::<std::result::Result<_, _>>()?
            }
            other => vec![serde_json::from_value(other)?; groups],
        };
        specs
            .iter()
            .enumerate()
            .map(|(g, s)| s.build(n_alt, g))
            .collect::<Result<Vec<_>>>()
            .map(ModelSet)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &Model {
        &self.0[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Model> {
        self.0.iter()
    }

    pub fn all_logit(&self) -> bool {
        self.0.iter().all(|m| matches!(m, Model::Logit(_)))
    }

    /// Scales when every group is logit or scaled logit.
    pub fn logit_scales(&self) -> Option<Vec<f64>> {
        self.0.iter().map(|m| m.logit_scale()).collect()
    }
}
