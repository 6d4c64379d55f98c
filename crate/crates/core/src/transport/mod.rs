//! Transport equations solved along characteristics of a (learned or exact) field.

mod cloud;
mod grid;

pub use cloud::{
    min_cost_assignment, push_forward, sample_pushforward, w1_empirical, PointCloud, RejectionSampler,
    W1_MAX_POINTS,
};
pub use grid::{l1_error, DensityGrid, GridDensity};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nets::VectorField;
use crate::ode::{integrate_backward_with_mass, TimeGrid};
use crate::systems::{exact_transport_density, BenchmarkSystem, InitialDensity};

/// Default RK4 step for characteristics.
pub const DEFAULT_DT: f64 = 0.01;

/// `ρ(·, t)` on `grid`: each node is traced back to time 0, where `ρ0` is read
/// off and scaled by `exp(−∫ div f)` along the same path.
pub fn reconstruct_density<F: VectorField + ?Sized>(
    field: &F,
    rho0: &InitialDensity,
    grid: &DensityGrid,
    t: f64,
    dt: f64,
) -> Result<GridDensity> {
    if field.dim() != 2 {
        return Err(Error::Shape(format!("transport needs a 2-D field, got d={}", field.dim())));
    }
    if !field.has_divergence() {
        return Err(Error::UnsupportedField(field.name()));
    }
    if t == 0.0 {
        return GridDensity::sample(*grid, 0.0, |x| rho0.eval(&x));
    }
    let tgrid = TimeGrid::new(0.0, t, cloud::steps_for(t, dt)?)?;
    let values = grid
        .nodes()
        .par_iter()
        .map(|x| {
            let path = integrate_backward_with_mass(field, x, tgrid)?;
            let logmass = path.logmass.as_ref().expect("backward mass integration records log-mass");
            Ok(rho0.eval(path.initial())? * (-logmass[0]).exp())
        })
        .collect::<Result<Vec<_>>>()?;
    GridDensity::new(*grid, t, values)
}

/// Closed-form density of a transport scenario on `grid`.
pub fn exact_density(sys: &BenchmarkSystem, rho0: &InitialDensity, grid: &DensityGrid, t: f64) -> Result<GridDensity> {
    let values = grid
        .nodes()
        .par_iter()
        .map(|x| exact_transport_density(sys, rho0, x, t))
        .collect::<Result<Vec<_>>>()?;
    GridDensity::new(*grid, t, values)
}

/// One point of an L1 error curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Point {
    pub t: f64,
    pub error: f64,
}

/// Normalized L1 error of the density transported by `field` against the exact
/// solution of `sys`, at each of `times`. The normalization is `‖ρ0‖_{L¹}` on `grid`.
pub fn l1_curve<F: VectorField + ?Sized>(
    field: &F,
    sys: &BenchmarkSystem,
    rho0: &InitialDensity,
    grid: &DensityGrid,
    times: &[f64],
    dt: f64,
) -> Result<Vec<L1Point>> {
    let norm = exact_density(sys, rho0, grid, 0.0)?.l1_norm();
    times
        .iter()
        .map(|&t| {
            let approx = reconstruct_density(field, rho0, grid, t, dt)?;
            let exact = exact_density(sys, rho0, grid, t)?;
            Ok(L1Point {
                t,
                error: l1_error(&approx, &exact, norm)?,
            })
        })
        .collect()
}

/// `count` evenly spaced times on `[0, t1]`, both ends included.
pub fn time_samples(t1: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![t1],
        _ => (0..count).map(|i| t1 * i as f64 / (count - 1) as f64).collect(),
    }
}
