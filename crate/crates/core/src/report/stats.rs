use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nets::{Model, ModelKind};
use crate::ode::integrate;
use crate::systems::TrajectoryDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-trajectory errors `‖z_k(t_l) − x_k(t_l)‖` at every knot.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    /// `errors[k][l]` for trajectory `k` at knot `l`.
    pub errors: Vec<Vec<f64>>,
    pub splits: Vec<Split>,
}

/// Mean and (population) standard deviation per knot.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub train: SplitStats,
    pub test: SplitStats,
    /// Largest mean test error over the knots.
    pub e_max: f64,
    /// Mean test error at the final knot.
    pub e_t: f64,
}

impl ErrorSeries {
    fn stats(&self, split: Split) -> SplitStats {
        let knots = self.times.len();
        let rows: Vec<&Vec<f64>> = self
            .errors
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(e, _)| e)
            .collect();
        let n = rows.len();
        let mut mean = vec![0.0; knots];
        let mut std = vec![0.0; knots];
        if n > 0 {
            for l in 0..knots {
                let m = rows.iter().map(|r| r[l]).sum::<f64>() / n as f64;
                let v = rows.iter().map(|r| (r[l] - m).powi(2)).sum::<f64>() / n as f64;
                mean[l] = m;
                std[l] = v.sqrt();
            }
        }
        SplitStats { count: n, mean, std }
    }

    /// Statistics per split. With an empty test split, `e_max` and `e_T` are
    /// taken from the training curve instead.
    pub fn summary(&self) -> ErrorSummary {
        let train = self.stats(Split::Train);
        let test = self.stats(Split::Test);
        let curve = if test.count > 0 { &test.mean } else { &train.mean };
        ErrorSummary {
            e_max: curve.iter().copied().fold(0.0, f64::max),
            e_t: curve.last().copied().unwrap_or(0.0),
            train,
            test,
        }
    }
}

/// Integrates `model` from every initial point of `ds` on the dataset grid and
/// measures the distance to the recorded states.
pub fn error_stats(model: &Model, ds: &TrajectoryDataset) -> Result<(ErrorSeries, ErrorSummary)> {
    if model.dim() != ds.dim {
        return Err(Error::Shape(format!("model has d={}, dataset has d={}", model.dim(), ds.dim)));
    }
    let field = model.to_field();
    let errors = ds
        .trajectories
        .par_iter()
        .map(|data| {
            let z = integrate(&field, data.initial(), ds.grid)?;
            Ok((0..data.knots())
                .map(|l| {
                    z.state(l)
                        .iter()
                        .zip(data.state(l))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut splits = vec![Split::Train; ds.len()];
    for &i in &ds.test {
        splits[i] = Split::Test;
    }
    let series = ErrorSeries {
        times: ds.grid.knots(),
        errors,
        splits,
    };
    let summary = series.summary();
    Ok((series, summary))
}

/// One line of the error/DoF comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub width: usize,
    pub kind: ModelKind,
    pub e_max: f64,
    pub e_t: f64,
    pub dof_paper: usize,
    pub dof_literal: usize,
}

pub fn build_comparison(models: &[Model], ds: &TrajectoryDataset) -> Result<Vec<ComparisonRow>> {
    models
        .iter()
        .map(|m| {
            let (_, s) = error_stats(m, ds)?;
            let dof = m.dof();
            Ok(ComparisonRow {
                width: m.width(),
                kind: m.kind(),
                e_max: s.e_max,
                e_t: s.e_t,
                dof_paper: dof.paper_formula,
                dof_literal: dof.literal_count,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_arithmetic() {
        let s = ErrorSeries {
            times: vec![0.0, 1.0, 2.0],
            errors: vec![vec![0.0, 1.0, 0.5], vec![0.0, 3.0, 1.5], vec![0.0, 2.0, 2.0]],
            splits: vec![Split::Test, Split::Test, Split::Train],
        };
        let r = s.summary();
        assert_eq!(r.test.mean, vec![0.0, 2.0, 1.0]);
        assert_eq!(r.test.std, vec![0.0, 1.0, 0.5]);
        assert_eq!(r.train.mean, vec![0.0, 2.0, 2.0]);
        assert_eq!((r.e_max, r.e_t), (2.0, 1.0));
    }

    #[test]
    fn empty_test_split_uses_training_curve() {
        let s = ErrorSeries {
            times: vec![0.0, 1.0],
            errors: vec![vec![0.0, 4.0]],
            splits: vec![Split::Train],
        };
        let r = s.summary();
        assert_eq!(r.test.count, 0);
        assert_eq!((r.e_max, r.e_t), (4.0, 4.0));
    }
}
