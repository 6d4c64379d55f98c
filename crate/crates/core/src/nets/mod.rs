//! Shallow-network vector fields and their analytic derivatives.

mod activation;
mod field;
mod sa;
mod vanilla;

pub use activation::Activation;
use activation::{Act, Relu, Sig};
pub use field::{FieldHandle, VectorField};
pub use sa::SaParams;
pub use vanilla::VanillaParams;

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Units processed per stack-buffered block in the hot loops.
pub(crate) const CHUNK: usize = 64;

/// Trajectories advanced together by the batched kernels.
pub const LANES: usize = 8;

/// One state coordinate (or cotangent coordinate) across a batch of trajectories.
pub type Lanes = [f64; LANES];

/// Whether the batched kernels may use their AVX2 builds. Rust never contracts
/// `a * b + c`, so both builds produce identical bits.
#[inline]
pub(crate) fn use_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline]
fn lane_sum(v: &Lanes) -> f64 {
    ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]))
}

/// Dot product with four interleaved accumulators (fixed order, so deterministic).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Sa,
    Vanilla,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sa => "sa",
            ModelKind::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sa" | "sa-node" => Ok(ModelKind::Sa),
            "vanilla" => Ok(ModelKind::Vanilla),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Degree-of-freedom accounting for a model family.
///
/// `paper_formula` is the published count (`2Pd(d+1)` for SA, `(2d+1)MP`
/// for vanilla); `literal_count` is the number of stored parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofReport {
    pub paper_formula: usize,
    pub literal_count: usize,
}

pub fn dof_report(kind: ModelKind, width: usize, dim: usize, steps: usize) -> DofReport {
    match kind {
        ModelKind::Sa => DofReport {
            paper_formula: 2 * width * dim * (dim + 1),
            literal_count: width * (dim * dim + 3 * dim),
        },
        ModelKind::Vanilla => {
            let n = (2 * dim + 1) * steps * width;
            DofReport {
                paper_formula: n,
                literal_count: n,
            }
        }
    }
}

/// A trainable network field.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Sa(SaParams),
    Vanilla(VanillaParams),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Sa(_) => ModelKind::Sa,
            Model::Vanilla(_) => ModelKind::Vanilla,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Sa(p) => p.dim(),
            Model::Vanilla(p) => p.dim(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Model::Sa(p) => p.width(),
            Model::Vanilla(p) => p.width(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Model::Sa(p) => p.activation(),
            Model::Vanilla(p) => p.activation(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.raw().len()
    }

    pub fn raw(&self) -> &[f64] {
        match self {
            Model::Sa(p) => p.raw(),
            Model::Vanilla(p) => p.raw(),
        }
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Sa(p) => p.raw_mut(),
            Model::Vanilla(p) => p.raw_mut(),
        }
    }

    pub fn to_canonical(&self) -> Vec<f64> {
        match self {
            Model::Sa(p) => p.to_canonical(),
            Model::Vanilla(p) => p.to_canonical(),
        }
    }

    pub fn internal_to_canonical(&self, internal: &[f64]) -> Vec<f64> {
        match self {
            Model::Sa(p) => p.internal_to_canonical(internal),
            Model::Vanilla(p) => p.internal_to_canonical(internal),
        }
    }

    pub fn dof(&self) -> DofReport {
        match self {
            Model::Sa(p) => dof_report(ModelKind::Sa, p.width(), p.dim(), 0),
            Model::Vanilla(p) => dof_report(ModelKind::Vanilla, p.width(), p.dim(), p.steps()),
        }
    }

    /// Field value inside the integrator step that starts at `t_start`.
    /// Vanilla fields use the parameter block of that step for every stage.
    #[inline]
    pub fn eval_in_step(&self, x: &[f64], t: f64, step: usize, out: &mut [f64]) {
        match self {
            Model::Sa(p) => p.eval_into(x, t, out),
            Model::Vanilla(p) => p.eval_step_into(x, step, out),
        }
    }

    #[inline]
    pub fn vjp_in_step(
        &self,
        x: &[f64],
        t: f64,
        step: usize,
        cot: &[f64],
        x_bar: &mut [f64],
        theta_bar: &mut [f64],
    ) {
        match self {
            Model::Sa(p) => p.vjp_into(x, t, cot, x_bar, theta_bar),
            Model::Vanilla(p) => p.vjp_step_into(x, step, cot, x_bar, theta_bar),
        }
    }

    /// Batched [`Model::eval_in_step`]: `xt[k][n]` is coordinate `k` of trajectory `n`
    /// and `out[j][n]` receives `f_j`. All lanes are evaluated.
    #[inline]
    pub fn eval_batch(&self, xt: &[Lanes], t: f64, step: usize, out: &mut [Lanes]) {
        match self {
            Model::Sa(p) => p.eval_batch(xt, t, out),
            Model::Vanilla(p) => p.eval_batch(xt, step, out),
        }
    }

    /// Batched [`Model::vjp_in_step`]; lanes with zero cotangent contribute nothing.
    #[inline]
    pub fn vjp_batch(
        &self,
        xt: &[Lanes],
        t: f64,
        step: usize,
        cot: &[Lanes],
        x_bar: &mut [Lanes],
        theta_bar: &mut [f64],
    ) {
        match self {
            Model::Sa(p) => p.vjp_batch(xt, t, cot, x_bar, theta_bar),
            Model::Vanilla(p) => p.vjp_batch(xt, step, cot, x_bar, theta_bar),
        }
    }

    /// Tikhonov term: the Lipschitz bound (per-step average for vanilla fields).
    pub fn regularizer(&self) -> f64 {
        match self {
            Model::Sa(p) => p.lipschitz_bound(),
            Model::Vanilla(p) => p.lipschitz_bound(),
        }
    }

    pub fn regularizer_grad_into(&self, scale: f64, out: &mut [f64]) {
        match self {
            Model::Sa(p) => p.lipschitz_grad_into(scale, out),
            Model::Vanilla(p) => p.lipschitz_grad_into(scale, out),
        }
    }

    pub fn to_field(&self) -> FieldHandle {
        match self {
            Model::Sa(p) => FieldHandle::Sa(p.clone()),
            Model::Vanilla(p) => FieldHandle::Vanilla(p.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dof_table_values() {
        let sa = dof_report(ModelKind::Sa, 100, 2, 0);
        assert_eq!((sa.paper_formula, sa.literal_count), (1200, 1000));
        assert_eq!(dof_report(ModelKind::Sa, 500, 2, 0).paper_formula, 6000);
        assert_eq!(dof_report(ModelKind::Sa, 1000, 2, 0).paper_formula, 12000);
        let v = dof_report(ModelKind::Vanilla, 100, 2, 100);
        assert_eq!((v.paper_formula, v.literal_count), (50000, 50000));
        assert_eq!(dof_report(ModelKind::Vanilla, 1000, 2, 100).paper_formula, 500000);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|v| v as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|v| 1.0 - v as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
        assert_eq!(dot(&[], &[]), 0.0);
    }

    fn batched_matches_pointwise(model: &Model, d: usize) {
        let pts: Vec<Vec<f64>> = (0..LANES)
            .map(|n| (0..d).map(|k| ((n * 7 + k * 3) as f64 * 0.37).sin() * 1.5).collect())
            .collect();
        let cots: Vec<Vec<f64>> = (0..LANES)
            .map(|n| (0..d).map(|k| ((n * 5 + k) as f64 * 0.91).cos()).collect())
            .collect();
        let xt: Vec<Lanes> = (0..d).map(|k| std::array::from_fn(|n| pts[n][k])).collect();
        let ct: Vec<Lanes> = (0..d).map(|k| std::array::from_fn(|n| cots[n][k])).collect();
        let (t, step) = (0.3, 1);
        let mut out = vec![[0.0; LANES]; d];
        model.eval_batch(&xt, t, step, &mut out);
        let mut xb = vec![[0.0; LANES]; d];
        let mut gb = vec![0.0; model.num_params()];
        model.vjp_batch(&xt, t, step, &ct, &mut xb, &mut gb);
        let mut gp = vec![0.0; model.num_params()];
        for n in 0..LANES {
            let mut f = vec![0.0; d];
            model.eval_in_step(&pts[n], t, step, &mut f);
            let mut xbar = vec![0.0; d];
            model.vjp_in_step(&pts[n], t, step, &cots[n], &mut xbar, &mut gp);
            for k in 0..d {
                assert!((f[k] - out[k][n]).abs() < 1e-12, "{} d={d}", model.kind());
                assert!((xbar[k] - xb[k][n]).abs() < 1e-12, "{} d={d}", model.kind());
            }
        }
        for (a, b) in gp.iter().zip(&gb) {
            assert!((a - b).abs() < 1e-11, "{} d={d}: {a} vs {b}", model.kind());
        }
    }

    #[test]
    fn batched_kernels_match_pointwise_kernels() {
        let grid = crate::ode::TimeGrid::new(0.0, 1.0, 3).unwrap();
        for act in [Activation::ReLU, Activation::Sigmoid] {
            for d in 1..=4 {
                for width in [1, 8, 13] {
                    batched_matches_pointwise(&Model::Sa(SaParams::init(width, d, act, 3).unwrap()), d);
                    let mut auto = SaParams::init(width, d, act, 4).unwrap();
                    auto.set_autonomous(true);
                    batched_matches_pointwise(&Model::Sa(auto), d);
                    let v = VanillaParams::init(width, d, grid, act, 5).unwrap();
                    batched_matches_pointwise(&Model::Vanilla(v), d);
                }
            }
        }
    }
}
