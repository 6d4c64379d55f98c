//! Fitting network fields to trajectory data.

mod adam;
mod checkpoint;
mod config;
mod grad;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFormat, CHECKPOINT_VERSION};
pub use config::{GradMode, TrainConfig};
pub use grad::{grad_continuous_adjoint, grad_discrete, loss, solve_adjoint, AdjointPath, LossReport};

use crate::error::{Error, Result};
use crate::nets::Model;
use crate::systems::TrajectoryDataset;

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// A trained (or initial) model together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    /// Fingerprint of the dataset the model was fitted to.
    pub fingerprint: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Training loss at the start of each completed epoch.
    pub history: Vec<f64>,
}

impl Checkpoint {
    /// Logs a warning and returns false when `ds` is not the training dataset.
    pub fn check_dataset(&self, ds: &TrajectoryDataset) -> bool {
        let fp = ds.fingerprint();
        if fp != self.fingerprint {
            log::warn!(
                "checkpoint was trained on dataset {} but is being used with {}",
                short(&self.fingerprint),
                short(&fp)
            );
            return false;
        }
        true
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

/// Full-batch Adam on the training trajectories of `ds`, starting from the
/// seeded initialization described by `config`.
pub fn fit(ds: &TrajectoryDataset, config: &TrainConfig) -> Result<Checkpoint> {
    let model = config.init_model(ds.dim, ds.grid)?;
    fit_from(model, ds, config)
}

/// As [`fit`], starting from the given parameters.
pub fn fit_from(model: Model, ds: &TrajectoryDataset, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut ckpt = Checkpoint {
        config: config.clone(),
        model,
        fingerprint: ds.fingerprint(),
        epoch: 0,
        history: Vec::with_capacity(config.epochs),
    };
    let mut adam = AdamState::new(ckpt.model.num_params());
    for epoch in 0..config.epochs {
        let step = match config.grad_mode {
            GradMode::DiscreteBackprop => grad_discrete(&ckpt.model, ds, config.lambda),
            GradMode::ContinuousAdjoint => grad_continuous_adjoint(&ckpt.model, ds, config.lambda),
        };
        let (report, grad) = match step {
            Ok(v) => v,
            Err(Error::Blowup { .. }) => return Err(diverged(ckpt, f64::INFINITY)),
            Err(e) => return Err(e),
        };
        let bad_grad = grad.iter().any(|g| !g.is_finite());
        if !report.total.is_finite() || report.total > DIVERGENCE_LOSS || bad_grad {
            return Err(diverged(ckpt, report.total));
        }
        ckpt.history.push(report.total);
        if config.log_every > 0 && (epoch % config.log_every == 0 || epoch + 1 == config.epochs) {
            log::info!(
                "epoch {epoch:>6}  loss {:.6e}  data {:.6e}  reg {:.4e}",
                report.total,
                report.data_term,
                report.reg_term
            );
        }
        adam_step(
            &mut adam,
            ckpt.model.raw_mut(),
            &grad,
            config.lr,
            config.beta1,
            config.beta2,
            config.eps,
        );
        ckpt.epoch = epoch + 1;
    }
    Ok(ckpt)
}

fn diverged(ckpt: Checkpoint, loss: f64) -> Error {
    Error::Diverged {
        epoch: ckpt.epoch,
        loss,
        last_good: Box::new(ckpt),
    }
}
