use std::path::{Path, PathBuf};

use sanode::exprlang::ExprField;
use sanode::nets::{Activation, FieldHandle, Model, ModelKind, VectorField};
use sanode::ode::TimeGrid;
use sanode::report::{build_comparison, emit, error_stats, Artifact};
use sanode::systems::{generate_dataset, BenchmarkSystem, GridSpec, InitialDensity, SystemId, TrajectoryDataset};
use sanode::train::{fit, fit_from, load_checkpoint, save_checkpoint, Checkpoint, CheckpointFormat, GradMode, TrainConfig};
use sanode::transport::{
    exact_density, l1_curve, reconstruct_density, sample_pushforward, time_samples, w1_empirical, DensityGrid,
    L1Point, RejectionSampler, W1_MAX_POINTS,
};
use sanode::Error;

use crate::settings::Settings;
use crate::{CliError, CompareArgs, EvalArgs, GenerateArgs, TrainArgs, TransportArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// The true velocity of a run: a built-in system or a field file.
enum Truth {
    System(BenchmarkSystem),
    File(ExprField),
}

impl Truth {
    fn resolve(s: &mut Settings, system: Option<String>, field: Option<PathBuf>, fallback: SystemId) -> Result<Self, CliError> {
        let field: Option<String> = s.get_opt("field", field.map(|p| p.display().to_string()))?;
        let system: String = s.get("system", system, fallback.name().to_string())?;
        match field {
            Some(path) => Ok(Truth::File(ExprField::load(Path::new(&path))?)),
            None => Ok(Truth::System(BenchmarkSystem::new(system.parse()?))),
        }
    }

    fn field(&self) -> &dyn VectorField {
        match self {
            Truth::System(s) => s,
            Truth::File(f) => f,
        }
    }

    fn id(&self) -> Option<SystemId> {
        match self {
            Truth::System(s) => Some(s.id),
            Truth::File(_) => None,
        }
    }
}

fn time_grid(t0: f64, t1: f64, dt: f64) -> Result<TimeGrid, CliError> {
    if !(dt > 0.0) || !(t1 > t0) {
        return Err(usage(format!("need t1 > t0 and dt > 0, got [{t0}, {t1}] with dt={dt}")));
    }
    Ok(TimeGrid::new(t0, t1, ((t1 - t0) / dt).round().max(1.0) as usize)?)
}

pub fn generate(a: GenerateArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut s = Settings::load("generate", cfg)?;
    let truth = Truth::resolve(&mut s, a.system, a.field, SystemId::Dissipative)?;
    let horizon = truth.id().map_or(5.0, SystemId::default_horizon);
    let lo = s.get("lo", a.lo, -2.0)?;
    let hi = s.get("hi", a.hi, 2.0)?;
    let count = s.get("count", a.count, 9usize)?;
    let t0 = s.get("t0", a.t0, 0.0)?;
    let t1 = s.get("t1", a.t1, horizon)?;
    let dt = s.get("dt", a.dt, 0.05)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let out = PathBuf::from(s.get("out", a.out.map(|p| p.display().to_string()), "data".to_string())?);

    let field = truth.field();
    let points = GridSpec::new(lo, hi, count, field.dim())?.points();
    let ds = generate_dataset(field, &points, time_grid(t0, t1, dt)?, seed)?;
    ds.save(&out)?;
    let echo_dir = if out.is_dir() { out.clone() } else { out.with_extension("run") };
    s.write_echo(&echo_dir)?;
    println!(
        "{}: N={} M={} train={} test={} -> {}",
        ds.system,
        ds.len(),
        ds.grid.steps(),
        ds.train.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn train_config(s: &mut Settings, a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let model: ModelKind = s.get("model", a.model.as_deref().map(str::parse).transpose()?, d.model)?;
    Ok(TrainConfig {
        model,
        width: s.get("P", a.width, d.width)?,
        activation: s.get("activation", a.activation.as_deref().map(str::parse).transpose()?, d.activation)?,
        autonomous: s.get("autonomous", a.autonomous.then_some(true), d.autonomous)?,
        lr: s.get("lr", a.lr, d.lr)?,
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        lambda: s.get("lambda", a.lambda, d.lambda)?,
        seed: s.get("seed", a.seed, d.seed)?,
        beta1: s.get("beta1", None, d.beta1)?,
        beta2: s.get("beta2", None, d.beta2)?,
        eps: s.get("eps", None, d.eps)?,
        grad_mode: s.get("grad", a.grad.as_deref().map(str::parse::<GradMode>).transpose()?, d.grad_mode)?,
        log_every: s.get("log_every", None, d.log_every)?,
    })
}

fn checkpoint_format(name: &str) -> Result<CheckpointFormat, CliError> {
    match name {
        "binary" => Ok(CheckpointFormat::Binary),
        "text" => Ok(CheckpointFormat::Text),
        other => Err(usage(format!("unknown checkpoint format `{other}` (binary|text)"))),
    }
}

fn checkpoint_name(format: CheckpointFormat) -> &'static str {
    match format {
        CheckpointFormat::Binary => "checkpoint.bin",
        CheckpointFormat::Text => "checkpoint.txt",
    }
}

/// Runs `fit`; on divergence saves the last good parameters before failing.
fn fit_or_save(result: sanode::Result<Checkpoint>, out: &Path, format: CheckpointFormat) -> Result<Checkpoint, CliError> {
    match result {
        Ok(c) => Ok(c),
        Err(Error::Diverged { epoch, loss, last_good }) => {
            let path = out.join(format!("last_good.{}", checkpoint_name(format).rsplit('.').next().unwrap()));
            save_checkpoint(&last_good, &path, format)?;
            Err(CliError::Numeric(format!(
                "training diverged at epoch {epoch} (loss {loss:e}); last good parameters saved to {}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn loss_artifact(c: &Checkpoint) -> Artifact {
    Artifact::Loss {
        name: "loss".into(),
        history: c.history.clone(),
    }
}

pub fn train(a: TrainArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut s = Settings::load("train", cfg)?;
    s.get("dataset", Some(a.dataset.display().to_string()), String::new())?;
    let config = train_config(&mut s, &a)?;
    let format = checkpoint_format(&s.get("format", a.format.clone(), "binary".to_string())?)?;
    let resume: Option<String> = s.get_opt("resume", a.resume.as_ref().map(|p| p.display().to_string()))?;
    let out = PathBuf::from(s.get("out", a.out.as_ref().map(|p| p.display().to_string()), "run".to_string())?);
    config.validate()?;
    s.write_echo(&out)?;

    let ds = TrajectoryDataset::load(&a.dataset)?;
    let init = match resume {
        Some(p) => {
            let c = load_checkpoint(Path::new(&p))?;
            c.check_dataset(&ds);
            c.model
        }
        None => config.init_model(ds.dim, ds.grid)?,
    };
    let dof = sanode::nets::dof_report(config.model, config.width, ds.dim, ds.grid.steps());
    println!(
        "{} P={} d={}: dof_paper {} dof_literal {}",
        config.model, config.width, ds.dim, dof.paper_formula, dof.literal_count
    );
    let ckpt = fit_or_save(fit_from(init, &ds, &config), &out, format)?;
    save_checkpoint(&ckpt, &out.join(checkpoint_name(format)), format)?;
    emit(&[loss_artifact(&ckpt)], &out)?;
    match ckpt.history.last() {
        Some(l) => println!("trained {} epochs, final loss {l:e}", ckpt.epoch),
        None => println!("0 epochs: checkpoint holds the initialization"),
    }
    Ok(())
}

pub fn eval(a: EvalArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut s = Settings::load("eval", cfg)?;
    s.get("checkpoint", Some(a.checkpoint.display().to_string()), String::new())?;
    s.get("dataset", Some(a.dataset.display().to_string()), String::new())?;
    let out = PathBuf::from(s.get("out", a.out.map(|p| p.display().to_string()), "eval".to_string())?);
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let ds = TrajectoryDataset::load(&a.dataset)?;
    ckpt.check_dataset(&ds);
    let (series, summary) = error_stats(&ckpt.model, &ds)?;
    println!("e_max {:e}  e_T {:e}", summary.e_max, summary.e_t);
    s.write_echo(&out)?;
    emit(
        &[Artifact::Errors {
            name: "errors".into(),
            series,
            summary,
        }],
        &out,
    )?;
    Ok(())
}

pub fn compare(a: CompareArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut s = Settings::load("compare", cfg)?;
    s.get("data", Some(a.data.display().to_string()), String::new())?;
    let list: Vec<String> = a.checkpoints.iter().map(|p| p.display().to_string()).collect();
    s.get("checkpoints", Some(list.join(" ")), String::new())?;
    let out = PathBuf::from(s.get("out", a.out.map(|p| p.display().to_string()), "compare".to_string())?);
    let ds = TrajectoryDataset::load(&a.data)?;
    let models = a
        .checkpoints
        .iter()
        .map(|p| {
            let c = load_checkpoint(p)?;
            c.check_dataset(&ds);
            Ok(c.model)
        })
        .collect::<Result<Vec<Model>, CliError>>()?;
    let rows = build_comparison(&models, &ds)?;
    println!("{:>6} {:>8} {:>12} {:>12} {:>10} {:>11}", "P", "kind", "e_max", "e_T", "dof_paper", "dof_literal");
    for r in &rows {
        println!(
            "{:>6} {:>8} {:>12.4e} {:>12.4e} {:>10} {:>11}",
            r.width, r.kind, r.e_max, r.e_t, r.dof_paper, r.dof_literal
        );
    }
    s.write_echo(&out)?;
    emit(&[Artifact::Comparison { name: "comparison".into(), rows }], &out)?;
    Ok(())
}

/// Density of the true problem: closed form for the built-in scenarios,
/// otherwise characteristics of the true field itself.
fn reference_density(
    truth: &Truth,
    rho0: &InitialDensity,
    grid: &DensityGrid,
    t: f64,
    dt: f64,
) -> sanode::Result<sanode::transport::GridDensity> {
    match truth {
        Truth::System(sys) => exact_density(sys, rho0, grid, t),
        Truth::File(f) => reconstruct_density(f, rho0, grid, t, dt),
    }
}

fn reference_l1(
    learned: &FieldHandle,
    truth: &Truth,
    rho0: &InitialDensity,
    grid: &DensityGrid,
    times: &[f64],
    dt: f64,
) -> sanode::Result<Vec<L1Point>> {
    match truth {
        Truth::System(sys) => l1_curve(learned, sys, rho0, grid, times, dt),
        Truth::File(_) => {
            let norm = reference_density(truth, rho0, grid, 0.0, dt)?.l1_norm();
            times
                .iter()
                .map(|&t| {
                    let approx = reconstruct_density(learned, rho0, grid, t, dt)?;
                    let exact = reference_density(truth, rho0, grid, t, dt)?;
                    Ok(L1Point {
                        t,
                        error: sanode::transport::l1_error(&approx, &exact, norm)?,
                    })
                })
                .collect()
        }
    }
}

/// Transport fits need far more epochs than trajectory fits to resolve the divergence.
const TRANSPORT_EPOCHS: usize = 10_000;

pub fn transport(a: TransportArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let mut s = Settings::load("transport", cfg)?;
    let truth = Truth::resolve(&mut s, a.system, a.field, SystemId::TransportSinField)?;
    if truth.field().dim() != 2 {
        return Err(usage("transport runs need a two-dimensional field"));
    }
    if !truth.field().has_divergence() {
        return Err(usage(format!("field `{}` has no analytic divergence", truth.field().name())));
    }
    let doswell = truth.id() == Some(SystemId::Doswell);
    let horizon = truth.id().map_or(5.0, SystemId::default_horizon);
    let (train_default, test_default) = if doswell { ("tanh:1", "tanh:10") } else { ("gaussian:1", "gaussian:4") };
    let checkpoint: Option<String> = s.get_opt("checkpoint", a.checkpoint.map(|p| p.display().to_string()))?;
    let train_rho: InitialDensity = s
        .get("train_rho", a.train_rho, train_default.to_string())?
        .parse()?;
    let test_rho: InitialDensity = s.get("test_rho", a.test_rho, test_default.to_string())?.parse()?;
    let data_lo = s.get("data_lo", a.data_lo, -4.0)?;
    let data_hi = s.get("data_hi", a.data_hi, 4.0)?;
    let data_count = s.get("data_count", a.data_count, 11usize)?;
    let t1 = s.get("t1", a.t1, horizon)?;
    let dt = s.get("dt", a.dt, 0.1)?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        width: s.get("P", a.width, d.width)?,
        activation: s.get("activation", a.activation.as_deref().map(str::parse).transpose()?, Activation::Sigmoid)?,
        epochs: s.get("epochs", a.epochs, TRANSPORT_EPOCHS)?,
        lr: s.get("lr", a.lr, d.lr)?,
        lambda: s.get("lambda", a.lambda, d.lambda)?,
        seed: s.get("seed", a.seed, d.seed)?,
        ..d
    };
    let half = s.get("grid_half_width", a.grid_half_width, 4.0)?;
    let grid_n = s.get("grid_n", a.grid_n, 81usize)?;
    let n_times = s.get("times", a.times, 11usize)?;
    let char_dt = s.get("char_dt", a.char_dt, 0.05)?;
    let w1_n = s.get("w1", a.w1, 0usize)?;
    let out = PathBuf::from(s.get("out", a.out.map(|p| p.display().to_string()), "transport".to_string())?);
    if w1_n > W1_MAX_POINTS {
        return Err(usage(format!("--w1 is limited to {W1_MAX_POINTS} points")));
    }
    if w1_n > 0 && !train_rho.is_nonnegative() {
        return Err(usage(format!("W1 needs a nonnegative profile, `{train_rho}` is not")));
    }
    config.validate()?;
    s.write_echo(&out)?;

    let ckpt = match checkpoint {
        Some(p) => {
            let c = load_checkpoint(Path::new(&p))?;
            if c.model.kind() != ModelKind::Sa {
                return Err(Error::UnsupportedField(c.model.kind().to_string()).into());
            }
            c
        }
        None => {
            let points = GridSpec::new(data_lo, data_hi, data_count, 2)?.points();
            let ds = generate_dataset(truth.field(), &points, time_grid(0.0, t1, dt)?, config.seed)?.all_for_training();
            log::info!("training on {} characteristics", ds.len());
            let c = fit_or_save(fit(&ds, &config), &out, CheckpointFormat::Binary)?;
            save_checkpoint(&c, &out.join("checkpoint.bin"), CheckpointFormat::Binary)?;
            c
        }
    };
    let learned = ckpt.model.to_field();
    let grid = DensityGrid::square(-half, half, grid_n)?;
    let times = time_samples(t1, n_times);
    let train_curve = reference_l1(&learned, &truth, &train_rho, &grid, &times, char_dt)?;
    let test_curve = reference_l1(&learned, &truth, &test_rho, &grid, &times, char_dt)?;
    for (label, c) in [("train", &train_curve), ("test", &test_curve)] {
        let worst = c.iter().map(|p| p.error).fold(0.0, f64::max);
        println!("{label}: max normalized L1 error {worst:.4e} over {} times", c.len());
    }

    let mut artifacts = vec![
        loss_artifact(&ckpt),
        Artifact::L1 {
            name: "l1".into(),
            curves: vec![("train".into(), train_curve), ("test".into(), test_curve)],
        },
    ];
    artifacts.push(Artifact::Density {
        name: "rho_learned".into(),
        density: reconstruct_density(&learned, &test_rho, &grid, t1, char_dt)?,
    });
    artifacts.push(Artifact::Density {
        name: "rho_exact".into(),
        density: reference_density(&truth, &test_rho, &grid, t1, char_dt)?,
    });
    if w1_n > 0 {
        let sampler = RejectionSampler::new(train_rho.clone(), [-half, -half], [half, half])?;
        let points = times
            .iter()
            .map(|&t| {
                let a = sample_pushforward(&learned, &sampler, w1_n, t, char_dt, config.seed)?;
                let b = sample_pushforward(truth.field(), &sampler, w1_n, t, char_dt, config.seed)?;
                Ok((t, w1_empirical(&a, &b)?))
            })
            .collect::<sanode::Result<Vec<_>>>()?;
        let worst = points.iter().map(|p| p.1).fold(0.0, f64::max);
        println!("W1 (n={w1_n}): max {worst:.4e}");
        artifacts.push(Artifact::W1 { name: "w1".into(), points });
    }
    emit(&artifacts, &out)?;
    Ok(())
}
