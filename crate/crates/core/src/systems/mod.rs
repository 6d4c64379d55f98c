//! Built-in benchmark systems, their reference solutions, and trajectory datasets.

mod dataset;
mod density;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

pub use dataset::{generate_dataset, GridSpec, TrajectoryDataset};
pub use density::{exact_transport_density, InitialDensity};

use crate::error::{Error, Result};
use crate::nets::{FieldHandle, VectorField};
use crate::ode::{integrate, TimeGrid};

/// Step used when a system has no closed-form flow.
pub const REFERENCE_DT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemId {
    Dissipative,
    Pendulum,
    LinearNonAut,
    Duffing,
    TransportSinField,
    Doswell,
}

impl SystemId {
    pub const ALL: [SystemId; 6] = [
        SystemId::Dissipative,
        SystemId::Pendulum,
        SystemId::LinearNonAut,
        SystemId::Duffing,
        SystemId::TransportSinField,
        SystemId::Doswell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemId::Dissipative => "dissipative",
            SystemId::Pendulum => "pendulum",
            SystemId::LinearNonAut => "linear-nonaut",
            SystemId::Duffing => "duffing",
            SystemId::TransportSinField => "transport-sin",
            SystemId::Doswell => "doswell",
        }
    }

    pub fn is_transport(self) -> bool {
        matches!(self, SystemId::TransportSinField | SystemId::Doswell)
    }

    /// Default horizon: 4 for Doswell, 5 otherwise.
    pub fn default_horizon(self) -> f64 {
        match self {
            SystemId::Doswell => 4.0,
            _ => 5.0,
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = SystemId::ALL.iter().map(|id| id.name()).collect();
                Error::Config(format!("unknown system `{s}` (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Duffing forcing amplitude.
    pub delta: f64,
    /// Duffing forcing frequency.
    pub omega: f64,
    /// Doswell peak speed.
    pub vbar: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            delta: 0.1,
            omega: PI,
            vbar: 2.59807,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSystem {
    pub id: SystemId,
    pub params: SystemParams,
}

pub fn make_system(id: SystemId, params: SystemParams) -> Result<BenchmarkSystem> {
    if ![params.delta, params.omega, params.vbar].iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!("non-finite system parameters {params:?}")));
    }
    Ok(BenchmarkSystem { id, params })
}

/// Doswell angular speed `g(r) = v̄ sech²(r) tanh(r) / r`, with `g(0) = v̄`.
pub fn doswell_speed(r: f64, vbar: f64) -> f64 {
    let sech = 1.0 / r.cosh();
    let tanh_over_r = if r < 1e-8 { 1.0 - r * r / 3.0 } else { r.tanh() / r };
    vbar * sech * sech * tanh_over_r
}

impl BenchmarkSystem {
    pub fn new(id: SystemId) -> Self {
        BenchmarkSystem {
            id,
            params: SystemParams::default(),
        }
    }

    pub fn rhs(&self) -> FieldHandle {
        FieldHandle::Analytic(Arc::new(*self))
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self.id, SystemId::Pendulum | SystemId::Duffing)
    }

    /// Reference solution `φ_t(x0)`: closed form where one exists, otherwise
    /// RK4 with step at most [`REFERENCE_DT`].
    pub fn exact_flow(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        if x0.len() != 2 {
            return Err(Error::Shape(format!("{} is two-dimensional, got d={}", self.id, x0.len())));
        }
        if t == 0.0 {
            return Ok(x0.to_vec());
        }
        let (x, y) = (x0[0], x0[1]);
        Ok(match self.id {
            SystemId::Dissipative => {
                let c1 = 2.0 * x + y;
                let c2 = -(x + y);
                let (e1, e2) = ((-t).exp(), (-2.0 * t).exp());
                vec![c1 * e1 + c2 * e2, -c1 * e1 - 2.0 * c2 * e2]
            }
            SystemId::LinearNonAut => {
                // z = (1+t, t-1) + R(t)(z0 - (1, -1)), R the rotation by t.
                let (u, v) = (x - 1.0, y + 1.0);
                let (s, c) = t.sin_cos();
                vec![1.0 + t + c * u - s * v, t - 1.0 + s * u + c * v]
            }
            SystemId::TransportSinField => {
                let s = t.atan();
                vec![sin_flow(x, s), sin_flow(y, s)]
            }
            SystemId::Doswell => {
                let angle = doswell_speed(x.hypot(y), self.params.vbar) * t;
                rotate(x, y, angle)
            }
            SystemId::Pendulum | SystemId::Duffing => {
                let steps = (t.abs() / REFERENCE_DT).ceil().max(1.0) as usize;
                if t > 0.0 {
                    let traj = integrate(self, x0, TimeGrid::new(0.0, t, steps)?)?;
                    traj.terminal().to_vec()
                } else {
                    let traj = crate::ode::integrate_backward(self, x0, TimeGrid::new(t, 0.0, steps)?)?;
                    traj.initial().to_vec()
                }
            }
        })
    }
}

pub(crate) fn rotate(x: f64, y: f64, angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![c * x - s * y, s * x + c * y]
}

/// Solution of `ẋ = sin(x) ṡ` after parameter time `s`: `tan(x/2)` grows by `e^s`.
pub(crate) fn sin_flow(x0: f64, s: f64) -> f64 {
    let k = (x0 / (2.0 * PI)).round();
    let base = x0 - 2.0 * PI * k;
    let (sn, cs) = (0.5 * base).sin_cos();
    2.0 * (sn * s.exp()).atan2(cs) + 2.0 * PI * k
}

/// `∂ sin_flow(x0, s) / ∂x0`.
pub(crate) fn sin_flow_jacobian(x0: f64, s: f64) -> f64 {
    let (sn, cs) = (0.5 * x0).sin_cos();
    s.exp() / (cs * cs + sn * sn * (2.0 * s).exp())
}

impl VectorField for BenchmarkSystem {
    fn dim(&self) -> usize {
        2
    }

    fn name(&self) -> String {
        self.id.name().to_string()
    }

    fn eval_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let (x, y) = (z[0], z[1]);
        let p = &self.params;
        let (a, b) = match self.id {
            SystemId::Dissipative => (y, -2.0 * x - 3.0 * y),
            SystemId::Pendulum => (y, -x.sin()),
            SystemId::LinearNonAut => (t - y, x - t),
            SystemId::Duffing => (y, x - x * x * x + p.delta * (p.omega * t).cos()),
            SystemId::TransportSinField => {
                let q = 1.0 / (1.0 + t * t);
                (x.sin() * q, y.sin() * q)
            }
            SystemId::Doswell => {
                let g = doswell_speed(x.hypot(y), p.vbar);
                (-y * g, x * g)
            }
        };
        out[0] = a;
        out[1] = b;
        Ok(())
    }

    fn has_divergence(&self) -> bool {
        true
    }

    fn divergence(&self, z: &[f64], t: f64) -> Result<f64> {
        Ok(match self.id {
            SystemId::Dissipative => -3.0,
            SystemId::Pendulum | SystemId::LinearNonAut | SystemId::Duffing | SystemId::Doswell => 0.0,
            SystemId::TransportSinField => (z[0].cos() + z[1].cos()) / (1.0 + t * t),
        })
    }
}
