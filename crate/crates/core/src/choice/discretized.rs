//! Error laws with finite support, and the transport characterization of
//! their conjugate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transport::{self, TransportProblem};

use super::{check_interior, check_mask_len, check_shares, check_utilities, finite, ChoiceModel};

/// Euler-Mascheroni constant; Gumbel draws are centered with it so that
/// discretized Emax values follow the same convention as the closed forms.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `K` support points (rows) with probability weights.
///
/// As a choice model the columns are the full choice set with the outside
/// option first; as a mixing law for random coefficients they are the
/// coefficient dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedDistribution {
    support: DMatrix<f64>,
    weights: Vec<f64>,
}

impl DiscretizedDistribution {
    pub fn new(support: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = support.nrows();
        if k == 0 || support.ncols() == 0 {
            return Err(Error::invalid("discretized distribution", "empty support"));
        }
        if weights.len() != k {
            return Err(Error::dims("support weights", k, weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("discretized distribution", "negative weight"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "discretized distribution",
                format!("weights sum to {total}"),
            ));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("support points".into()));
        }
        Ok(Self { support, weights })
    }

    /// Equal weights on the rows of `support`.
    pub fn uniform(support: DMatrix<f64>) -> Result<Self> {
        let k = support.nrows();
        Self::new(support, vec![1.0 / k.max(1) as f64; k])
    }

    /// A single support point.
    pub fn point(eps: Vec<f64>) -> Result<Self> {
        let n = eps.len();
        Self::new(DMatrix::from_vec(1, n, eps), vec![1.0])
    }

    /// `k` i.i.d. centered Gumbel draws over `dim` alternatives. Draws are
    /// generated row by row, so the first rows are shared across `k` for a
    /// given seed.
    pub fn gumbel_draws(k: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; k * dim];
        for r in 0..k {
            for c in 0..dim {
                let u: f64 = rng.random();
                data[c * k + r] = gumbel_quantile(u.max(f64::MIN_POSITIVE));
            }
        }
        Self::uniform(DMatrix::from_vec(k, dim, data))
    }

    /// Latin-hypercube Gumbel nodes: each column holds the `k` quantiles at
    /// `(i + 1/2) / k`, independently permuted across columns.
    pub fn gumbel_quantiles(k: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<f64> = (0..k)
            .map(|i| gumbel_quantile((i as f64 + 0.5) / k as f64))
            .collect();
        let mut support = DMatrix::zeros(k, dim);
        for c in 0..dim {
            let mut col = nodes.clone();
            col.shuffle(&mut rng);
            for (r, v) in col.into_iter().enumerate() {
                support[(r, c)] = v;
            }
        }
        Self::uniform(support)
    }

    pub fn support(&self) -> &DMatrix<f64> {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_points(&self) -> usize {
        self.support.nrows()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n + 1 != self.dim() {
            return Err(Error::dims("discretized alternatives", self.dim() - 1, n));
        }
        Ok(())
    }
}

/// Centered Gumbel quantile `-log(-log p) - gamma`.
pub fn gumbel_quantile(p: f64) -> f64 {
    -(-p.ln()).ln() - EULER_GAMMA
}

/// Dual output of the transport characterization.
#[derive(Clone, Debug)]
pub struct OtDual {
    /// Mean utilities of the inside alternatives; the outside is at zero.
    pub u: Vec<f64>,
    /// False when ties in the optimal basis make `u` one of several duals.
    pub unique: bool,
    pub duality_gap: f64,
}

/// Value of the transport problem between the support points of `dist` and
/// the choice shares `(mu_0, mu)` with surplus `eps_y`, which is `-G*(mu)`,
/// together with the mean utilities rationalizing `mu`.
pub fn conj_ot(dist: &DiscretizedDistribution, mu: &[f64]) -> Result<(f64, OtDual)> {
    dist.check_len(mu.len())?;
    let mu0 = check_shares(mu, &vec![true; mu.len()])?;
    let mut demand = Vec::with_capacity(mu.len() + 1);
    demand.push(mu0);
    demand.extend_from_slice(mu);
    let total: f64 = demand.iter().sum();
    demand.iter_mut().for_each(|d| *d /= total);
    let problem = TransportProblem::new(dist.weights.clone(), demand, dist.support.clone())?;
    let sol = transport::solve(&problem)?;
    // f_k + g_y >= eps_ky, so type k picks argmax_y eps_ky - g_y.
    let g0 = sol.g[0];
    let u = sol.g[1..].iter().map(|g| g0 - g).collect();
    Ok((
        sol.value,
        OtDual {
            u,
            unique: sol.dual_unique,
            duality_gap: sol.duality_gap,
        },
    ))
}

impl ChoiceModel for DiscretizedDistribution {
    fn n_alternatives(&self) -> Option<usize> {
        Some(self.dim() - 1)
    }

    fn emax(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u.len())?;
        check_utilities(u)?;
        let mut total = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let mut best = self.support[(k, 0)];
            for (y, v) in u.iter().enumerate() {
                best = best.max(v + self.support[(k, y + 1)]);
            }
            total += w * best;
        }
        finite("discretized emax", total)
    }

    /// Ties go to the lowest index, the outside option first.
    fn probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        check_utilities(u)?;
        let mut p = vec![0.0; u.len()];
        for (k, w) in self.weights.iter().enumerate() {
            let mut best = self.support[(k, 0)];
            let mut arg = None;
            for (y, v) in u.iter().enumerate() {
                let val = v + self.support[(k, y + 1)];
                if val > best {
                    best = val;
                    arg = Some(y);
                }
            }
            if let Some(y) = arg {
                p[y] += w;
            }
        }
        Ok(p)
    }

    fn conj_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<f64> {
        check_mask_len(mu.len(), allowed)?;
        check_shares(mu, allowed)?;
        Ok(-conj_ot(self, mu)?.0)
    }

    fn invert_masked(&self, mu: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
        check_mask_len(mu.len(), allowed)?;
        let mu0 = check_shares(mu, allowed)?;
        check_interior(mu, mu0, allowed)?;
        let (_, dual) = conj_ot(self, mu)?;
        Ok(super::zero_masked(dual.u, allowed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_value() {
        let d = DiscretizedDistribution::point(vec![0.3, -0.2, 1.1]).unwrap();
        let mu = [0.25, 0.35];
        let (v, _) = conj_ot(&d, &mu).unwrap();
        let expect = 0.4 * 0.3 + 0.25 * -0.2 + 0.35 * 1.1;
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn dual_rationalizes_shares() {
        let d = DiscretizedDistribution::gumbel_draws(500, 3, 11).unwrap();
        let mu = [0.3, 0.2];
        let (_, dual) = conj_ot(&d, &mu).unwrap();
        // Every support point is indifferent or prefers its assigned option;
        // the implied shares bracket the target.
        let p = d.probs(&dual.u).unwrap();
        assert!((p[0] - 0.3).abs() <= 4.0 / 500.0 + 1e-9);
        assert!((p[1] - 0.2).abs() <= 4.0 / 500.0 + 1e-9);
    }

    #[test]
    fn nested_draws_share_prefix() {
        let a = DiscretizedDistribution::gumbel_draws(10, 2, 3).unwrap();
        let b = DiscretizedDistribution::gumbel_draws(20, 2, 3).unwrap();
        for r in 0..10 {
            assert_eq!(a.support()[(r, 1)], b.support()[(r, 1)]);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscretizedDistribution::new(DMatrix::zeros(2, 2), vec![0.5, 0.6]).is_err());
        assert!(DiscretizedDistribution::new(DMatrix::zeros(2, 2), vec![1.5, -0.5]).is_err());
    }
}
