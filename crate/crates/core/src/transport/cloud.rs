//! Equal-weight point clouds, rejection sampling and the exact empirical W1 distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nets::VectorField;
use crate::ode::{integrate, TimeGrid};
use crate::systems::InitialDensity;

/// Largest cloud accepted by [`w1_empirical`].
pub const W1_MAX_POINTS: usize = 512;

/// `n` points in `R^dim`, each of weight `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not form a non-empty cloud in R^{dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Shape("point cloud has non-finite coordinates".into()));
        }
        Ok(PointCloud { dim, coords })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("points of mixed dimension".into()));
        }
        Self::new(dim, points.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Applies `f` to every point.
    pub fn map(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync) -> Result<Self> {
        let moved = self
            .coords
            .par_chunks_exact(self.dim)
            .map(&f)
            .collect::<Result<Vec<_>>>()?;
        Self::from_points(&moved)
    }
}

/// Draws from a nonnegative profile restricted to a box by rejection against
/// a uniform envelope.
#[derive(Debug, Clone)]
pub struct RejectionSampler {
    rho0: InitialDensity,
    lo: [f64; 2],
    hi: [f64; 2],
    bound: f64,
}

impl RejectionSampler {
    /// Rejections allowed per requested point before giving up.
    pub const MAX_TRIES_PER_POINT: usize = 10_000;

    /// The envelope is 1.05 times the largest value on a 201 × 201 node grid of the box.
    pub fn new(rho0: InitialDensity, lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::Config(format!("empty sampling box {lo:?}..{hi:?}")));
        }
        let n = 201;
        let mut max = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64;
                let v = rho0.eval(&[x, y])?;
                if v < 0.0 {
                    return Err(Error::Config(format!(
                        "cannot sample `{rho0}`: it is negative at ({x}, {y})"
                    )));
                }
                max = max.max(v);
            }
        }
        if !(max > 0.0 && max.is_finite()) {
            return Err(Error::Config(format!("`{rho0}` has no mass on the sampling box")));
        }
        Ok(RejectionSampler { rho0, lo, hi, bound: 1.05 * max })
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(2 * n);
        let mut tries = 0usize;
        while coords.len() < 2 * n {
            if tries >= Self::MAX_TRIES_PER_POINT * n.max(1) {
                return Err(Error::Config(format!(
                    "rejection sampler accepted {} of {n} points in {tries} tries",
                    coords.len() / 2
                )));
            }
            tries += 1;
            let x = rng.gen_range(self.lo[0]..self.hi[0]);
            let y = rng.gen_range(self.lo[1]..self.hi[1]);
            let u: f64 = rng.gen_range(0.0..self.bound);
            if u < self.rho0.eval(&[x, y])? {
                coords.extend([x, y]);
            }
        }
        PointCloud::new(2, coords)
    }
}

/// Moves every point along `field` from 0 to `t` with RK4 steps of at most `dt`.
pub fn push_forward<F: VectorField + ?Sized>(field: &F, cloud: &PointCloud, t: f64, dt: f64) -> Result<PointCloud> {
    if t == 0.0 {
        return Ok(cloud.clone());
    }
    let grid = TimeGrid::new(0.0, t, steps_for(t, dt)?)?;
    cloud.map(|p| Ok(integrate(field, p, grid)?.terminal().to_vec()))
}

/// `n` samples of ρ0 pushed to time `t`.
pub fn sample_pushforward<F: VectorField + ?Sized>(
    field: &F,
    sampler: &RejectionSampler,
    n: usize,
    t: f64,
    dt: f64,
    seed: u64,
) -> Result<PointCloud> {
    push_forward(field, &sampler.sample(n, seed)?, t, dt)
}

pub(crate) fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && t >= 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("need t ≥ 0 and dt > 0, got t={t}, dt={dt}")));
    }
    Ok((t / dt).ceil().max(1.0) as usize)
}

/// Exact `W1` between equal-weight clouds of the same size: the minimum-cost
/// perfect matching under Euclidean cost, divided by `n`.
pub fn w1_empirical(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() || a.dim != b.dim {
        return Err(Error::Shape(format!(
            "W1 needs clouds of equal size and dimension, got {}×{} and {}×{}",
            a.len(),
            a.dim,
            b.len(),
            b.dim
        )));
    }
    let n = a.len();
    if n > W1_MAX_POINTS {
        return Err(Error::Config(format!("W1 is limited to {W1_MAX_POINTS} points, got {n}")));
    }
    let cost = |i: usize, j: usize| -> f64 {
        a.point(i)
            .iter()
            .zip(b.point(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let matrix: Vec<f64> = (0..n * n).map(|k| cost(k / n, k % n)).collect();
    let assignment = min_cost_assignment(&matrix, n);
    // Summed in sorted order so that swapping the clouds gives the same bits.
    let mut matched: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| matrix[i * n + j]).collect();
    matched.sort_unstable_by(f64::total_cmp);
    Ok(matched.iter().sum::<f64>() / n as f64)
}

/// Hungarian algorithm with potentials on a square cost matrix (row-major);
/// returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = none).
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0; n];
    for j in 1..=n {
        rows[p[j] - 1] = j - 1;
    }
    rows
}
