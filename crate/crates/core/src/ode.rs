//! Fixed-step classical Runge–Kutta integration.
//!
//! States are stored row-major: knot `l` occupies `states[l*d .. (l+1)*d]`.
//! Mass-carrying integrations also track `logmass`, the integral of `-div f`
//! along the path, so that a density transported along the characteristic is
//! `ρ(t_l) = ρ(t_ref) · exp(logmass[l])`.

use crate::error::{Error, Result};
use crate::nets::VectorField;

/// Any state component beyond this magnitude aborts the integration.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Uniform grid `t0 < t0 + dt < … < t1` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::Config(format!("invalid time interval [{t0}, {t1}]")));
        }
        Ok(TimeGrid { t0, t1, steps })
    }

    /// Grid with step `dt`; `(t1 - t0)/dt` must be an integer up to rounding.
    pub fn with_step(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let ratio = (t1 - t0) / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * steps {
            return Err(Error::Config(format!(
                "step {dt} does not divide [{t0}, {t1}] into whole steps"
            )));
        }
        Self::new(t0, t1, steps as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    /// Knot `l`, computed from the integer index; the last knot is `t1` exactly.
    pub fn knot(&self, l: usize) -> f64 {
        if l >= self.steps {
            self.t1
        } else {
            self.t0 + l as f64 * self.dt()
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.steps).map(|l| self.knot(l)).collect()
    }

    /// Index `l` with `t_l <= t < t_{l+1}`; `t1` belongs to the last step.
    pub fn step_containing(&self, t: f64) -> Option<usize> {
        if !(t >= self.t0 && t <= self.t1) {
            return None;
        }
        let last = self.steps - 1;
        let mut l = (((t - self.t0) / self.dt()).floor() as usize).min(last);
        while l > 0 && t < self.knot(l) {
            l -= 1;
        }
        while l < last && t >= self.knot(l + 1) {
            l += 1;
        }
        Some(l)
    }
}

/// One solution path sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub dim: usize,
    pub states: Vec<f64>,
    /// `log ρ(t_l) − log ρ(t_ref)` where `t_ref` is the starting knot of the integration.
    pub logmass: Option<Vec<f64>>,
    /// Density at the starting knot; `ρ(t_l) = rho_ref · exp(logmass[l])`.
    pub rho_ref: Option<f64>,
}

impl Trajectory {
    pub fn from_states(grid: TimeGrid, dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.len() != (grid.steps() + 1) * dim {
            return Err(Error::Shape(format!(
                "trajectory with {} knots and d={dim} needs {} values, got {}",
                grid.steps() + 1,
                (grid.steps() + 1) * dim,
                states.len()
            )));
        }
        Ok(Trajectory {
            grid,
            dim,
            states,
            logmass: None,
            rho_ref: None,
        })
    }

    pub fn knots(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn state(&self, l: usize) -> &[f64] {
        &self.states[l * self.dim..(l + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.steps())
    }

    /// Density carried along the path at knot `l`, when mass was integrated.
    pub fn density(&self, l: usize) -> Option<f64> {
        match (&self.logmass, self.rho_ref) {
            (Some(_), Some(r)) if r == 0.0 => Some(0.0),
            (Some(lm), Some(r)) => Some(r * lm[l].exp()),
            _ => None,
        }
    }
}

/// `out = x + h·k`: the state at which an RK4 stage is evaluated.
#[inline]
pub(crate) fn stage_input(x: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    for ((o, &xv), &kv) in out.iter_mut().zip(x).zip(k) {
        *o = xv + h * kv;
    }
}

/// `out = x + dt/6 · (k1 + 2 k2 + 2 k3 + k4)`.
#[inline]
pub(crate) fn rk4_combine(x: &[f64], k: [&[f64]; 4], dt: f64, out: &mut [f64]) {
    let w = dt / 6.0;
    for (i, o) in out.iter_mut().enumerate() {
        *o = x[i] + w * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// Stage times for step `n` of `grid`, walking forward or backward.
/// Returns `(t, t_mid, t_next, h, t_lo)`.
#[inline]
pub(crate) fn step_times(grid: &TimeGrid, n: usize, backward: bool) -> (f64, f64, f64, f64, f64) {
    let m = grid.steps();
    let (from, to) = if backward { (m - n, m - n - 1) } else { (n, n + 1) };
    let t = grid.knot(from);
    let t_next = grid.knot(to);
    let h = if backward { -grid.dt() } else { grid.dt() };
    (t, 0.5 * (t + t_next), t_next, h, t.min(t_next))
}

struct Stepper {
    k: [Vec<f64>; 4],
    lk: [f64; 4],
    u: Vec<f64>,
}

impl Stepper {
    fn new(d: usize) -> Self {
        Stepper {
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            lk: [0.0; 4],
            u: vec![0.0; d],
        }
    }

    fn stage<F: VectorField + ?Sized>(
        &mut self,
        f: &F,
        idx: usize,
        t: f64,
        t_lo: f64,
        with_mass: bool,
    ) -> Result<()> {
        f.eval_in_step(&self.u, t, t_lo, &mut self.k[idx])?;
        if self.k[idx].iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { t, step: 0 });
        }
        if with_mass {
            let div = f.divergence(&self.u, t)?;
            if !div.is_finite() {
                return Err(Error::Blowup { t, step: 0 });
            }
            self.lk[idx] = -div;
        }
        Ok(())
    }

    /// One RK4 step from `x` to `out`; returns the log-mass increment when requested.
    fn step<F: VectorField + ?Sized>(
        &mut self,
        f: &F,
        x: &[f64],
        times: (f64, f64, f64, f64, f64),
        with_mass: bool,
        out: &mut [f64],
    ) -> Result<f64> {
        let (t, t_mid, t_next, h, t_lo) = times;
        self.u.copy_from_slice(x);
        self.stage(f, 0, t, t_lo, with_mass)?;
        stage_input(x, &self.k[0], 0.5 * h, &mut self.u);
        self.stage(f, 1, t_mid, t_lo, with_mass)?;
        stage_input(x, &self.k[1], 0.5 * h, &mut self.u);
        self.stage(f, 2, t_mid, t_lo, with_mass)?;
        stage_input(x, &self.k[2], h, &mut self.u);
        self.stage(f, 3, t_next, t_lo, with_mass)?;
        rk4_combine(
            x,
            [&self.k[0], &self.k[1], &self.k[2], &self.k[3]],
            h,
            out,
        );
        if out.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
            return Err(Error::Blowup { t: t_next, step: 0 });
        }
        let l = &self.lk;
        Ok(h / 6.0 * (l[0] + 2.0 * l[1] + 2.0 * l[2] + l[3]))
    }
}

/// A single classical RK4 step of size `dt > 0` from `(x, t)`.
pub fn rk4_step<F: VectorField + ?Sized>(f: &F, x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("RK4 step must be positive, got {dt}")));
    }
    check_dim(f, x)?;
    let mut stepper = Stepper::new(x.len());
    let mut out = vec![0.0; x.len()];
    let t_next = t + dt;
    stepper.step(f, x, (t, t + 0.5 * dt, t_next, dt, t), false, &mut out)?;
    Ok(out)
}

fn check_dim<F: VectorField + ?Sized>(f: &F, x: &[f64]) -> Result<()> {
    if x.len() != f.dim() {
        return Err(Error::Shape(format!(
            "initial state has {} components, field `{}` has d={}",
            x.len(),
            f.name(),
            f.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial state is not finite".into()));
    }
    Ok(())
}

fn run<F: VectorField + ?Sized>(
    f: &F,
    start: &[f64],
    grid: TimeGrid,
    backward: bool,
    with_mass: bool,
) -> Result<Trajectory> {
    check_dim(f, start)?;
    if with_mass && !f.has_divergence() {
        return Err(Error::UnsupportedField(f.name()));
    }
    let d = start.len();
    let m = grid.steps();
    let mut states = vec![0.0; (m + 1) * d];
    let mut logmass = vec![0.0; m + 1];
    let first = if backward { m } else { 0 };
    states[first * d..(first + 1) * d].copy_from_slice(start);
    let mut stepper = Stepper::new(d);
    let mut next = vec![0.0; d];
    for n in 0..m {
        let (from, to) = if backward { (m - n, m - n - 1) } else { (n, n + 1) };
        let times = step_times(&grid, n, backward);
        let x = &states[from * d..(from + 1) * d];
        let dl = stepper
            .step(f, x, times, with_mass, &mut next)
            .map_err(|e| match e {
                Error::Blowup { t, .. } => Error::Blowup { t, step: n },
                other => other,
            })?;
        states[to * d..(to + 1) * d].copy_from_slice(&next);
        logmass[to] = logmass[from] + dl;
    }
    Ok(Trajectory {
        grid,
        dim: d,
        states,
        logmass: with_mass.then_some(logmass),
        rho_ref: None,
    })
}

/// Integrates `ẋ = f(x, t)` from `x0` at `t0` across `grid`.
pub fn integrate<F: VectorField + ?Sized>(f: &F, x0: &[f64], grid: TimeGrid) -> Result<Trajectory> {
    run(f, x0, grid, false, false)
}

/// Integrates from `x_t1` at the last knot down to `t0`; states are stored in forward time order.
pub fn integrate_backward<F: VectorField + ?Sized>(
    f: &F,
    x_t1: &[f64],
    grid: TimeGrid,
) -> Result<Trajectory> {
    run(f, x_t1, grid, true, false)
}

/// Integrates the characteristic system `ẋ = f`, `d(log ρ)/dt = −div f` forward from
/// `(x0, rho0)`. A zero initial density stays exactly zero.
pub fn integrate_with_mass<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    rho0: f64,
    grid: TimeGrid,
) -> Result<Trajectory> {
    if !(rho0 >= 0.0 && rho0.is_finite()) {
        return Err(Error::Config(format!("initial density must be finite and ≥ 0, got {rho0}")));
    }
    if !f.has_divergence() {
        return Err(Error::UnsupportedField(f.name()));
    }
    let mut traj = run(f, x0, grid, false, rho0 > 0.0)?;
    if traj.logmass.is_none() {
        traj.logmass = Some(vec![0.0; grid.steps() + 1]);
    }
    traj.rho_ref = Some(rho0);
    Ok(traj)
}

/// Backward counterpart of [`integrate_with_mass`]: starts from `x_t1` at the last knot;
/// `logmass[l] = log ρ(t_l) − log ρ(t1)` along the characteristic.
pub fn integrate_backward_with_mass<F: VectorField + ?Sized>(
    f: &F,
    x_t1: &[f64],
    grid: TimeGrid,
) -> Result<Trajectory> {
    run(f, x_t1, grid, true, true)
}
