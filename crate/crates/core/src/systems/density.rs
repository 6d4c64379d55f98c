use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{doswell_speed, rotate, sin_flow, sin_flow_jacobian, BenchmarkSystem, SystemId};
use crate::error::{Error, Result};
use crate::exprlang::{parse, Expr};

/// Initial profiles for the transport scenarios.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDensity {
    /// `exp(-(x² + y²) / width)`.
    Gaussian { width: f64 },
    /// `tanh(k·y)`.
    Tanh { k: f64 },
    /// Any expression in `x1`, `x2` (evaluated at `t = 0`).
    Expr { source: String, expr: Arc<Expr> },
}

impl InitialDensity {
    pub fn gaussian(width: f64) -> Self {
        InitialDensity::Gaussian { width }
    }

    pub fn tanh(k: f64) -> Self {
        InitialDensity::Tanh { k }
    }

    pub fn expr(source: &str) -> Result<Self> {
        let expr = parse(source, 2)?;
        Ok(InitialDensity::Expr {
            source: source.to_string(),
            expr: Arc::new(expr),
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            InitialDensity::Gaussian { width } => (-(x[0] * x[0] + x[1] * x[1]) / width).exp(),
            InitialDensity::Tanh { k } => (k * x[1]).tanh(),
            InitialDensity::Expr { expr, .. } => expr.eval(x, 0.0)?,
        })
    }

    /// True when the profile is known to be nonnegative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        matches!(self, InitialDensity::Gaussian { .. })
    }
}

impl fmt::Display for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDensity::Gaussian { width } => write!(f, "gaussian:{width}"),
            InitialDensity::Tanh { k } => write!(f, "tanh:{k}"),
            InitialDensity::Expr { source, .. } => write!(f, "expr:{source}"),
        }
    }
}

/// Accepts `gaussian[:width]`, `tanh[:k]` and `expr:<expression in x1, x2>`.
impl FromStr for InitialDensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let number = |default: f64| -> Result<f64> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v > 0.0)
                    .ok_or_else(|| Error::Config(format!("bad parameter in initial density `{s}`"))),
            }
        };
        match kind {
            "gaussian" => Ok(InitialDensity::gaussian(number(1.0)?)),
            "tanh" => Ok(InitialDensity::tanh(number(1.0)?)),
            "expr" => InitialDensity::expr(arg.unwrap_or("")),
            _ => Err(Error::Config(format!(
                "unknown initial density `{s}` (use gaussian[:w], tanh[:k] or expr:<src>)"
            ))),
        }
    }
}

/// Exact solution `ρ(x, t)` of the transport problem driven by `sys`.
pub fn exact_transport_density(
    sys: &BenchmarkSystem,
    rho0: &InitialDensity,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::Shape(format!("transport scenarios are 2-D, got d={}", x.len())));
    }
    if t == 0.0 {
        return rho0.eval(x);
    }
    match sys.id {
        SystemId::TransportSinField => {
            let s = -t.atan();
            let foot = [sin_flow(x[0], s), sin_flow(x[1], s)];
            let weight = sin_flow_jacobian(x[0], s) * sin_flow_jacobian(x[1], s);
            Ok(rho0.eval(&foot)? * weight)
        }
        SystemId::Doswell => {
            let angle = doswell_speed(x[0].hypot(x[1]), sys.params.vbar) * t;
            rho0.eval(&rotate(x[0], x[1], -angle))
        }
        other => Err(Error::Config(format!("`{other}` is not a transport scenario"))),
    }
}
