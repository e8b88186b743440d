#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cupid_core::choice::{DiscretizedDistribution, FcMnl, GevModel, NestedLogit, RcLogit, ScaledModel};
use cupid_core::choice::gev::{MultinomialGenerator, NestedGenerator};
use cupid_core::estimate::BasisSet;
use cupid_core::{Margins, Model, ModelSet, SurplusMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Label of group `i` of `n` mapped to `[-1, 1]`.
pub fn label(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Every family shipped with the crate, by name.
pub const FAMILIES: [&str; 7] = ["logit", "nested", "scaled", "gev_multinomial", "gev_nested", "fcmnl", "rc_logit"];

/// Two nests splitting the alternatives in half.
fn halves(n_alt: usize) -> Vec<usize> {
    (0..n_alt).map(|y| usize::from(2 * y >= n_alt)).collect()
}

/// A model of `family` for a group facing `n_alt` alternatives, with
/// parameters drawn from `rng`.
pub fn family_model(family: &str, n_alt: usize, rng: &mut ChaCha8Rng) -> Model {
    match family {
        "logit" => Model::logit(),
        "nested" => {
            let nests = halves(n_alt);
            let k = nests.iter().max().unwrap() + 1;
            Model::NestedLogit(NestedLogit::new(nests, uniform_vec(rng, k, 0.4, 1.0)).unwrap())
        }
        "scaled" => Model::scaled_logit(rng.random_range(0.5..2.0)).unwrap(),
        "gev_multinomial" => Model::Gev(GevModel::new(std::sync::Arc::new(MultinomialGenerator { dim: n_alt + 1 })).unwrap()),
        "gev_nested" => {
            let nest_of = halves(n_alt);
            let k = nest_of.iter().max().unwrap() + 1;
            let lambda = uniform_vec(rng, k, 0.4, 1.0);
            Model::Gev(GevModel::new(std::sync::Arc::new(NestedGenerator { nest_of, lambda })).unwrap())
        }
        "fcmnl" => Model::FcMnl(FcMnl::uniform(n_alt, rng.random_range(0.1..0.9), rng.random_range(0.4..1.0), 1.0).unwrap()),
        "rc_logit" => {
            let z = DMatrix::from_fn(n_alt + 1, 1, |i, _| if i == 0 { 0.0 } else { rng.random_range(-1.0..1.0) });
            let nodes = DMatrix::from_column_slice(3, 1, &[-1.2247, 0.0, 1.2247]);
            let draws = DiscretizedDistribution::new(nodes, vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]).unwrap();
            Model::RcLogit(RcLogit::new(z, draws, 1.0).unwrap())
        }
        other => panic!("unknown family {other}"),
    }
}

pub fn family_sets(family: &str, nx: usize, ny: usize, seed: u64) -> (ModelSet, ModelSet) {
    let mut r = rng(seed ^ 0x5eed);
    let men = ModelSet((0..nx).map(|_| family_model(family, ny, &mut r)).collect());
    let women = ModelSet((0..ny).map(|_| family_model(family, nx, &mut r)).collect());
    (men, women)
}

pub fn scaled_sets(sigma: &[f64], tau: &[f64]) -> (ModelSet, ModelSet) {
    let mk = |s: &[f64]| ModelSet(s.iter().map(|v| Model::Scaled(ScaledModel::new(Model::logit(), *v).unwrap())).collect());
    (mk(sigma), mk(tau))
}

/// Random market with `Phi / 2` standard normal-ish and margins in `[1, 3]`.
pub fn random_market(nx: usize, ny: usize, seed: u64) -> (SurplusMatrix, Margins) {
    let mut r = rng(seed);
    let phi = DMatrix::from_fn(nx, ny, |_, _| r.random_range(-1.5..1.5));
    let n = uniform_vec(&mut r, nx, 1.0, 3.0);
    let m = uniform_vec(&mut r, ny, 1.0, 3.0);
    (SurplusMatrix::new(phi).unwrap(), Margins::new(n, m).unwrap())
}

/// 5x5 market used by the estimation checks.
pub fn estimation_margins() -> Margins {
    Margins::new(vec![1.0, 1.2, 0.8, 1.1, 0.9], vec![0.9, 1.0, 1.3, 0.7, 1.1]).unwrap()
}

/// Constant, interaction and squared-distance bases over labels in `[-1, 1]`.
pub fn three_bases(nx: usize, ny: usize) -> BasisSet {
    let c = DMatrix::from_element(nx, ny, 1.0);
    let xy = DMatrix::from_fn(nx, ny, |x, y| label(x, nx) * label(y, ny));
    let d2 = DMatrix::from_fn(nx, ny, |x, y| (label(x, nx) - label(y, ny)).powi(2));
    BasisSet::named(vec![c, xy, d2], vec!["const".into(), "xy".into(), "dist2".into()]).unwrap()
}

pub const LAMBDA0: [f64; 3] = [-1.0, 1.0, -0.5];
