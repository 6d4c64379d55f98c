use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::{Activation, Model, ModelKind, SaParams, VanillaParams};
use crate::ode::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradMode {
    /// Reverse sweep through the RK4 recursion: the exact gradient of the discrete loss.
    DiscreteBackprop,
    /// Backward adjoint ODE plus trapezoidal parameter integral.
    ContinuousAdjoint,
}

impl GradMode {
    pub fn name(self) -> &'static str {
        match self {
            GradMode::DiscreteBackprop => "discrete",
            GradMode::ContinuousAdjoint => "adjoint",
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(GradMode::DiscreteBackprop),
            "adjoint" => Ok(GradMode::ContinuousAdjoint),
            _ => Err(Error::Config(format!("unknown gradient mode `{s}` (discrete|adjoint)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub width: usize,
    pub activation: Activation,
    /// Fix the time weights `A2` at zero (SA only).
    pub autonomous: bool,
    pub lr: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_mode: GradMode,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Sa,
            width: 100,
            activation: Activation::ReLU,
            autonomous: false,
            lr: 1e-3,
            epochs: 3000,
            lambda: 1e-5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_mode: GradMode::DiscreteBackprop,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// 1000 neurons, learning rate 1e-4, 5000 epochs.
    pub fn paper_scale() -> Self {
        TrainConfig {
            width: 1000,
            lr: 1e-4,
            epochs: 5000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 {
            return bad("width must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.autonomous && self.model != ModelKind::Sa {
            return bad("the autonomous restriction applies to SA models only".into());
        }
        if self.grad_mode == GradMode::ContinuousAdjoint && self.model != ModelKind::Sa {
            return bad("the continuous adjoint is implemented for SA models only".into());
        }
        Ok(())
    }

    /// Fresh network for data of dimension `dim` on `grid`.
    pub fn init_model(&self, dim: usize, grid: TimeGrid) -> Result<Model> {
        self.validate()?;
        Ok(match self.model {
            ModelKind::Sa => {
                let mut p = SaParams::init(self.width, dim, self.activation, self.seed)?;
                p.set_autonomous(self.autonomous);
                Model::Sa(p)
            }
            ModelKind::Vanilla => Model::Vanilla(VanillaParams::init(self.width, dim, grid, self.activation, self.seed)?),
        })
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.model.to_string()),
            ("width", self.width.to_string()),
            ("activation", self.activation.to_string()),
            ("autonomous", self.autonomous.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lambda", self.lambda.to_string()),
            ("seed", self.seed.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("grad_mode", self.grad_mode.to_string()),
            ("log_every", self.log_every.to_string()),
        ]
    }

    /// Reads the keys written by [`TrainConfig::to_pairs`]; missing keys keep their defaults.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        fn field<T: FromStr>(map: &BTreeMap<String, String>, key: &str, into: &mut T) -> Result<()> {
            if let Some(v) = map.get(key) {
                *into = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))?;
            }
            Ok(())
        }
        let mut c = TrainConfig::default();
        field(map, "model", &mut c.model)?;
        field(map, "width", &mut c.width)?;
        field(map, "activation", &mut c.activation)?;
        field(map, "autonomous", &mut c.autonomous)?;
        field(map, "lr", &mut c.lr)?;
        field(map, "epochs", &mut c.epochs)?;
        field(map, "lambda", &mut c.lambda)?;
        field(map, "seed", &mut c.seed)?;
        field(map, "beta1", &mut c.beta1)?;
        field(map, "beta2", &mut c.beta2)?;
        field(map, "eps", &mut c.eps)?;
        field(map, "grad_mode", &mut c.grad_mode)?;
        field(map, "log_every", &mut c.log_every)?;
        c.validate()?;
        Ok(c)
    }
}
