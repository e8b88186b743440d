//! Synthetic markets and household samples.
//!
//! All draws come from ChaCha8 seeded with a 64-bit integer, so artifacts
//! are identical across platforms.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::io::SampleCounts;
use crate::market::{Margins, Matching, SurplusMatrix};

pub type SimRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normals by the Box-Muller transform, two per pair of uniforms.
pub fn standard_normals(rng: &mut SimRng, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let rad = (-2.0 * u1.ln()).sqrt();
        let ang = 2.0 * std::f64::consts::PI * u2;
        out.push(rad * ang.cos());
        out.push(rad * ang.sin());
    }
    out.truncate(count);
    out
}

#[derive(Clone, Debug)]
pub struct BenchmarkInstance {
    pub size: usize,
    pub seed: u64,
    pub margins: Margins,
    pub phi: SurplusMatrix,
}

/// Square market with margins uniform on `{1, ..., 100}` and `Phi / 2`
/// standard normal. Draw order: men's margins, women's margins, then the
/// surplus row by row.
pub fn gen_benchmark(size: usize, seed: u64) -> Result<BenchmarkInstance> {
    if size == 0 {
        return Err(Error::invalid("benchmark size", "must be at least 1"));
    }
    let mut rng = rng(seed);
    let n: Vec<f64> = (0..size).map(|_| rng.random_range(1..=100u32) as f64).collect();
    let m: Vec<f64> = (0..size).map(|_| rng.random_range(1..=100u32) as f64).collect();
    let z = standard_normals(&mut rng, size * size);
    let phi = DMatrix::from_fn(size, size, |x, y| 2.0 * z[x * size + y]);
    Ok(BenchmarkInstance {
        size,
        seed,
        margins: Margins::new(n, m)?,
        phi: SurplusMatrix::new(phi)?,
    })
}

/// Multinomial draw of `total` items over cells with weights `probs`,
/// as a sequence of conditional binomials.
pub fn multinomial(rng: &mut SimRng, total: u64, probs: &[f64]) -> Result<Vec<u64>> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("cell probabilities", "must be finite and nonnegative"));
    }
    let sum: f64 = probs.iter().sum();
    if sum <= 0.0 {
        return Err(Error::invalid("cell probabilities", "all cells are empty"));
    }
    let mut left = total;
    let mut mass = sum;
    let mut out = vec![0; probs.len()];
    for (i, p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if *p <= 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            left
        } else {
            Binomial::new(left, q)
                .map_err(|e| Error::invalid("binomial draw", e.to_string()))?
                .sample(rng)
        };
        out[i] = k;
        left -= k;
        mass -= p;
    }
    // Rounding can leave mass on the last positive cell.
    if left > 0 {
        if let Some(i) = probs.iter().rposition(|p| *p > 0.0) {
            out[i] += left;
        }
    }
    Ok(out)
}

/// Cells of a matching in sampling order: couples x-major, then single
/// men, then single women.
pub fn matching_cells(mu: &Matching) -> Vec<f64> {
    let (nx, ny) = (mu.nx(), mu.ny());
    let mut cells = Vec::with_capacity(nx * ny + nx + ny);
    for x in 0..nx {
        for y in 0..ny {
            cells.push(mu.mu[(x, y)]);
        }
    }
    cells.extend(mu.mu_x0.iter());
    cells.extend(mu.mu_0y.iter());
    cells
}

/// Draw `households` households with probabilities proportional to the
/// cell masses of `mu`.
pub fn sample_households(mu: &Matching, households: u64, seed: u64) -> Result<SampleCounts> {
    if households == 0 {
        return Err(Error::invalid("households", "must be at least 1"));
    }
    let mut r = rng(seed);
    let counts = multinomial(&mut r, households, &matching_cells(mu))
        .map_err(|_| Error::invalid("matching", "all cells are empty"))?;
    Ok(SampleCounts::from_cells(mu.nx(), mu.ny(), &counts))
}
