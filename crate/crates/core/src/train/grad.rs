//! The trajectory-matching loss and its gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nets::{Lanes, Model, LANES};
use crate::ode::{integrate, rk4_combine, stage_input, Trajectory, BLOWUP_THRESHOLD};
use crate::systems::TrajectoryDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub data_term: f64,
    /// Unweighted regularizer; `total = data_term + λ·reg_term`.
    pub reg_term: f64,
    pub total: f64,
    /// Mean over knots `1..=M` of the squared error, per training trajectory.
    pub per_trajectory: Vec<f64>,
}

fn check(model: &Model, ds: &TrajectoryDataset) -> Result<()> {
    if model.dim() != ds.dim {
        return Err(Error::Shape(format!(
            "model has d={}, dataset has d={}",
            model.dim(),
            ds.dim
        )));
    }
    if let Model::Vanilla(p) = model {
        if p.grid() != &ds.grid {
            return Err(Error::Shape("vanilla parameter grid differs from the dataset grid".into()));
        }
    }
    if ds.train.is_empty() {
        return Err(Error::Shape("dataset has no training trajectories".into()));
    }
    Ok(())
}

/// Forward RK4 pass of the model along the data grid for up to [`LANES`]
/// trajectories at once, keeping every stage input for the reverse sweep.
/// Unused lanes replay lane 0 and are never read back.
struct Tape {
    d: usize,
    lanes: usize,
    /// `(M+1)·d` states, coordinate-major within a knot.
    states: Vec<Lanes>,
    /// `M·4·d` stage inputs `u1..u4` per step.
    stages: Vec<Lanes>,
    k: [Vec<Lanes>; 4],
}

fn axpy_lanes(x: &[Lanes], k: &[Lanes], h: f64, out: &mut [Lanes]) {
    for ((o, xv), kv) in out.iter_mut().zip(x).zip(k) {
        for n in 0..LANES {
            o[n] = xv[n] + h * kv[n];
        }
    }
}

impl Tape {
    fn new(d: usize, m: usize) -> Self {
        Tape {
            d,
            lanes: 0,
            states: vec![[0.0; LANES]; (m + 1) * d],
            stages: vec![[0.0; LANES]; m * 4 * d],
            k: std::array::from_fn(|_| vec![[0.0; LANES]; d]),
        }
    }

    fn forward(&mut self, model: &Model, group: &[&Trajectory]) -> Result<()> {
        let d = self.d;
        self.lanes = group.len();
        let grid = group[0].grid;
        let dt = grid.dt();
        for k in 0..d {
            for n in 0..LANES {
                let src = if n < group.len() { group[n] } else { group[0] };
                self.states[k][n] = src.initial()[k];
            }
        }
        let w = dt / 6.0;
        for l in 0..grid.steps() {
            let (t, t_next) = (grid.knot(l), grid.knot(l + 1));
            let t_mid = 0.5 * (t + t_next);
            let (done, rest) = self.states.split_at_mut((l + 1) * d);
            let x = &done[l * d..];
            let u = &mut self.stages[l * 4 * d..(l + 1) * 4 * d];
            let [k1, k2, k3, k4] = &mut self.k;
            u[..d].copy_from_slice(x);
            model.eval_batch(&u[..d], t, l, k1);
            axpy_lanes(x, k1, 0.5 * dt, &mut u[d..2 * d]);
            model.eval_batch(&u[d..2 * d], t_mid, l, k2);
            axpy_lanes(x, k2, 0.5 * dt, &mut u[2 * d..3 * d]);
            model.eval_batch(&u[2 * d..3 * d], t_mid, l, k3);
            axpy_lanes(x, k3, dt, &mut u[3 * d..]);
            model.eval_batch(&u[3 * d..], t_next, l, k4);
            let next = &mut rest[..d];
            for j in 0..d {
                for n in 0..LANES {
                    next[j][n] = x[j][n] + w * (k1[j][n] + 2.0 * k2[j][n] + 2.0 * k3[j][n] + k4[j][n]);
                }
            }
            let bad = next
                .iter()
                .any(|v| v[..self.lanes].iter().any(|x| !x.is_finite() || x.abs() > BLOWUP_THRESHOLD));
            if bad {
                return Err(Error::Blowup { t: t_next, step: l });
            }
        }
        Ok(())
    }

    fn state(&self, l: usize) -> &[Lanes] {
        &self.states[l * self.d..(l + 1) * self.d]
    }

    /// Per lane, the sum over knots `1..=M` of `‖x_l − z_l‖²`.
    fn squared_errors(&self, group: &[&Trajectory]) -> Vec<f64> {
        group
            .iter()
            .enumerate()
            .map(|(n, data)| {
                (1..data.knots())
                    .map(|l| {
                        self.state(l)
                            .iter()
                            .zip(data.state(l))
                            .map(|(x, z)| (x[n] - z) * (x[n] - z))
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    }
}

fn report(model: &Model, lambda: f64, sq_errors: &[f64], n: usize, m: usize) -> LossReport {
    let data_term = sq_errors.iter().sum::<f64>() / (n * m) as f64;
    let reg_term = model.regularizer();
    LossReport {
        data_term,
        reg_term,
        total: data_term + lambda * reg_term,
        per_trajectory: sq_errors.iter().map(|e| e / m as f64).collect(),
    }
}

fn groups(ds: &TrajectoryDataset) -> Vec<Vec<&Trajectory>> {
    ds.train
        .chunks(LANES)
        .map(|c| c.iter().map(|&k| &ds.trajectories[k]).collect())
        .collect()
}

/// `(1/(N·M)) Σ_k Σ_{l=1..M} ‖z_k(t_l) − x_k(t_l)‖² + λ·reg` over the training set.
pub fn loss(model: &Model, ds: &TrajectoryDataset, lambda: f64) -> Result<LossReport> {
    check(model, ds)?;
    let m = ds.grid.steps();
    let parts = groups(ds)
        .par_iter()
        .map_init(
            || Tape::new(ds.dim, m),
            |tape, group| {
                tape.forward(model, group)?;
                Ok(tape.squared_errors(group))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let sq: Vec<f64> = parts.into_iter().flatten().collect();
    Ok(report(model, lambda, &sq, ds.train.len(), m))
}

struct Sweep {
    tape: Tape,
    g: Vec<Lanes>,
    kbar: [Vec<Lanes>; 4],
    ubar: Vec<Lanes>,
}

impl Sweep {
    fn new(d: usize, m: usize) -> Self {
        Sweep {
            tape: Tape::new(d, m),
            g: vec![[0.0; LANES]; d],
            kbar: std::array::from_fn(|_| vec![[0.0; LANES]; d]),
            ubar: vec![[0.0; LANES]; d],
        }
    }

    /// Adds `scale · ∂(Σ_l ‖x_l − z_l‖²)/∂Θ` for a group of trajectories into
    /// `theta_bar`; returns the unscaled squared errors.
    fn run(&mut self, model: &Model, group: &[&Trajectory], scale: f64, theta_bar: &mut [f64]) -> Result<Vec<f64>> {
        self.tape.forward(model, group)?;
        let d = self.tape.d;
        let grid = group[0].grid;
        let m = grid.steps();
        let dt = grid.dt();
        self.g.iter_mut().for_each(|v| *v = [0.0; LANES]);
        let coupling = [0.0, 0.5 * dt, 0.5 * dt, dt];
        let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        for l in (0..m).rev() {
            // ∂/∂x_{l+1} of the loss term at knot l+1; padding lanes stay at zero.
            for (n, data) in group.iter().enumerate() {
                for (j, (g, &z)) in self.g.iter_mut().zip(data.state(l + 1)).enumerate() {
                    g[n] += 2.0 * scale * (self.tape.state(l + 1)[j][n] - z);
                }
            }
            let (t, t_next) = (grid.knot(l), grid.knot(l + 1));
            let t_mid = 0.5 * (t + t_next);
            let u = &self.tape.stages[l * 4 * d..(l + 1) * 4 * d];
            for (kb, w) in self.kbar.iter_mut().zip(weights) {
                for (kv, gv) in kb.iter_mut().zip(&self.g) {
                    for n in 0..LANES {
                        kv[n] = w * gv[n];
                    }
                }
            }
            // Stage s was evaluated at u_s = x_l + c_s·k_{s-1}; walk them in reverse.
            let times = [t, t_mid, t_mid, t_next];
            for s in (0..4).rev() {
                self.ubar.iter_mut().for_each(|v| *v = [0.0; LANES]);
                model.vjp_batch(&u[s * d..(s + 1) * d], times[s], l, &self.kbar[s], &mut self.ubar, theta_bar);
                for j in 0..d {
                    for n in 0..LANES {
                        self.g[j][n] += self.ubar[j][n];
                    }
                    if s > 0 {
                        for n in 0..LANES {
                            self.kbar[s - 1][j][n] += coupling[s] * self.ubar[j][n];
                        }
                    }
                }
            }
        }
        Ok(self.tape.squared_errors(group))
    }
}

fn add_into(acc: &mut [f64], part: &[f64]) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a += p;
    }
}

/// Loss and its exact gradient (internal parameter layout) by reverse-mode
/// differentiation through every RK4 stage. Trajectories are swept in groups of
/// [`LANES`]; the per-group buffers are summed in index order, so the result does
/// not depend on how rayon schedules them.
pub fn grad_discrete(model: &Model, ds: &TrajectoryDataset, lambda: f64) -> Result<(LossReport, Vec<f64>)> {
    check(model, ds)?;
    let m = ds.grid.steps();
    let n = ds.train.len();
    let scale = 1.0 / (n * m) as f64;
    let np = model.num_params();
    let parts = groups(ds)
        .par_iter()
        .map(|group| {
            let mut sweep = Sweep::new(ds.dim, m);
            let mut theta_bar = vec![0.0; np];
            let sq = sweep.run(model, group, scale, &mut theta_bar)?;
            Ok((sq, theta_bar))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; np];
    let mut sq = Vec::with_capacity(n);
    for (s, g) in parts {
        sq.extend(s);
        add_into(&mut grad, &g);
    }
    model.regularizer_grad_into(lambda, &mut grad);
    Ok((report(model, lambda, &sq, n, m), grad))
}

/// States and adjoint of one trajectory, both sampled at the grid knots.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub states: Vec<f64>,
    pub adjoint: Vec<f64>,
}

/// Solves `−ȧ = (∂f/∂x)ᵀ a + c·2(x − z)`, `a(T) = 0` backward with RK4 on the data grid.
/// Between knots `x` comes from cubic Hermite interpolation of the model trajectory
/// and `z` from linear interpolation of the data.
pub fn solve_adjoint(model: &Model, data: &Trajectory, c: f64) -> Result<AdjointPath> {
    let Model::Sa(p) = model else {
        return Err(Error::UnsupportedField("vanilla".into()));
    };
    let d = data.dim;
    let grid = data.grid;
    let m = grid.steps();
    let dt = grid.dt();
    let traj = integrate(&model.to_field(), data.initial(), grid)?;
    let mut slopes = vec![0.0; (m + 1) * d];
    for l in 0..=m {
        p.eval_into(traj.state(l), grid.knot(l), &mut slopes[l * d..(l + 1) * d]);
    }
    let mut adjoint = vec![0.0; (m + 1) * d];
    let mut theta_scratch = vec![0.0; p.num_params()];
    let mut a_in = vec![0.0; d];
    let mut k: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; d]);
    let mut x_mid = vec![0.0; d];
    let mut z_mid = vec![0.0; d];
    let mut rhs = |x: &[f64], z: &[f64], t: f64, a: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        p.vjp_into(x, t, a, out, &mut theta_scratch);
        for j in 0..d {
            out[j] = -out[j] - 2.0 * c * (x[j] - z[j]);
        }
    };
    for l in (0..m).rev() {
        let (t, t_next) = (grid.knot(l), grid.knot(l + 1));
        let t_mid = 0.5 * (t + t_next);
        let (x0, x1) = (traj.state(l), traj.state(l + 1));
        let (f0, f1) = (&slopes[l * d..(l + 1) * d], &slopes[(l + 1) * d..(l + 2) * d]);
        for j in 0..d {
            x_mid[j] = 0.5 * (x0[j] + x1[j]) + dt / 8.0 * (f0[j] - f1[j]);
            z_mid[j] = 0.5 * (data.state(l)[j] + data.state(l + 1)[j]);
        }
        let (lo, hi) = adjoint.split_at_mut((l + 1) * d);
        let a = &hi[..d];
        let h = -dt;
        rhs(x1, data.state(l + 1), t_next, a, &mut k[0]);
        stage_input(a, &k[0], 0.5 * h, &mut a_in);
        rhs(&x_mid, &z_mid, t_mid, &a_in, &mut k[1]);
        stage_input(a, &k[1], 0.5 * h, &mut a_in);
        rhs(&x_mid, &z_mid, t_mid, &a_in, &mut k[2]);
        stage_input(a, &k[2], h, &mut a_in);
        rhs(x0, data.state(l), t, &a_in, &mut k[3]);
        rk4_combine(a, [&k[0], &k[1], &k[2], &k[3]], h, &mut lo[l * d..]);
    }
    Ok(AdjointPath {
        states: traj.states,
        adjoint,
    })
}

/// Gradient of the continuous-time loss through the adjoint equation: the adjoint
/// is forced by `2(x − z)/(N·T)` so that its scale matches the discrete loss, and
/// `∫ (∂f/∂Θ)ᵀ a dt` is taken by the trapezoidal rule on the knots. The returned
/// report is the discrete loss at the same parameters.
pub fn grad_continuous_adjoint(model: &Model, ds: &TrajectoryDataset, lambda: f64) -> Result<(LossReport, Vec<f64>)> {
    check(model, ds)?;
    let Model::Sa(p) = model else {
        return Err(Error::UnsupportedField("vanilla".into()));
    };
    let grid = ds.grid;
    let m = grid.steps();
    let n = ds.train.len();
    let c = 1.0 / (n as f64 * (grid.t1() - grid.t0()));
    let np = model.num_params();
    let d = ds.dim;
    let parts = ds
        .train
        .par_chunks(LANES)
        .map(|group| {
            let mut theta_bar = vec![0.0; np];
            let mut x_scratch = vec![0.0; d];
            let mut sq = Vec::with_capacity(group.len());
            for &k in group {
                let data = &ds.trajectories[k];
                let path = solve_adjoint(model, data, c)?;
                for l in 0..=m {
                    let w = if l == 0 || l == m { 0.5 * grid.dt() } else { grid.dt() };
                    let a: Vec<f64> = path.adjoint[l * d..(l + 1) * d].iter().map(|v| w * v).collect();
                    p.vjp_into(&path.states[l * d..(l + 1) * d], grid.knot(l), &a, &mut x_scratch, &mut theta_bar);
                }
                let err: f64 = (1..=m)
                    .map(|l| {
                        path.states[l * d..(l + 1) * d]
                            .iter()
                            .zip(data.state(l))
                            .map(|(x, z)| (x - z) * (x - z))
                            .sum::<f64>()
                    })
                    .sum();
                sq.push(err);
            }
            Ok((sq, theta_bar))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; np];
    let mut sq = Vec::with_capacity(n);
    for (s, g) in parts {
        sq.extend(s);
        add_into(&mut grad, &g);
    }
    model.regularizer_grad_into(lambda, &mut grad);
    Ok((report(model, lambda, &sq, n, m), grad))
}

