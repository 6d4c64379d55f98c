use std::fmt;
use std::sync::Arc;

use super::{SaParams, VanillaParams};
use crate::error::{Error, Result};

/// A right-hand side `f(x, t)` that the integrators can drive.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Evaluation inside an integrator step covering `[t_lo, t_lo + |dt|]`. Fields whose
    /// parameters are piecewise constant in time hold the block that contains `t_lo`
    /// for every stage of the step.
    fn eval_in_step(&self, x: &[f64], t: f64, _t_lo: f64, out: &mut [f64]) -> Result<()> {
        self.eval_into(x, t, out)
    }

    fn has_divergence(&self) -> bool {
        false
    }

    fn divergence(&self, _x: &[f64], _t: f64) -> Result<f64> {
        Err(Error::UnsupportedField(self.name()))
    }
}

#[derive(Clone)]
pub enum FieldHandle {
    Sa(SaParams),
    Vanilla(VanillaParams),
    Analytic(Arc<dyn VectorField>),
}

impl FieldHandle {
    pub fn analytic(field: impl VectorField + 'static) -> Self {
        FieldHandle::Analytic(Arc::new(field))
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.check(x)?;
        self.eval_into(x, t, &mut out)?;
        Ok(out)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state has {} components, field `{}` has d={}",
                x.len(),
                self.name(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for FieldHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldHandle::Sa(p) => f.debug_tuple("Sa").field(&p.width()).field(&p.dim()).finish(),
            FieldHandle::Vanilla(p) => f
                .debug_tuple("Vanilla")
                .field(&p.width())
                .field(&p.dim())
                .field(&p.steps())
                .finish(),
            FieldHandle::Analytic(a) => f.debug_tuple("Analytic").field(&a.name()).finish(),
        }
    }
}

impl VectorField for FieldHandle {
    fn dim(&self) -> usize {
        match self {
            FieldHandle::Sa(p) => p.dim(),
            FieldHandle::Vanilla(p) => p.dim(),
            FieldHandle::Analytic(a) => a.dim(),
        }
    }

    fn name(&self) -> String {
        match self {
            FieldHandle::Sa(_) => "sa".into(),
            FieldHandle::Vanilla(_) => "vanilla".into(),
            FieldHandle::Analytic(a) => a.name(),
        }
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            FieldHandle::Sa(p) => {
                p.eval_into(x, t, out);
                Ok(())
            }
            FieldHandle::Vanilla(p) => {
                let step = p.step_at(t)?;
                p.eval_step_into(x, step, out);
                Ok(())
            }
            FieldHandle::Analytic(a) => a.eval_into(x, t, out),
        }
    }

    fn eval_in_step(&self, x: &[f64], t: f64, t_lo: f64, out: &mut [f64]) -> Result<()> {
        match self {
            FieldHandle::Vanilla(p) => {
                let step = p.step_at(t_lo)?;
                p.eval_step_into(x, step, out);
                Ok(())
            }
            FieldHandle::Analytic(a) => a.eval_in_step(x, t, t_lo, out),
            FieldHandle::Sa(_) => self.eval_into(x, t, out),
        }
    }

    fn has_divergence(&self) -> bool {
        match self {
            FieldHandle::Sa(_) => true,
            FieldHandle::Vanilla(_) => false,
            FieldHandle::Analytic(a) => a.has_divergence(),
        }
    }

    fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        match self {
            FieldHandle::Sa(p) => Ok(p.divergence_unchecked(x, t)),
            FieldHandle::Vanilla(_) => Err(Error::UnsupportedField("vanilla".into())),
            FieldHandle::Analytic(a) => a.divergence(x, t),
        }
    }
}
