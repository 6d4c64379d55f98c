//! Time-stepped shallow field: on `[t_l, t_{l+1})` the field is
//! `Σ_i w_{l,i} σ(⟨a_{l,i}, x⟩ + b_{l,i})` with its own parameter block per step.
//!
//! Block layout for step `l` (internal): `[ w (d×P, by output) | a (d×P, by input) | b (P) ]`.
//! Canonical order used in files: per step, per neuron `w_{l,i}, a_{l,i}, b_{l,i}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sa::{norm2, sign};
use super::{dot, lane_sum, Act, Activation, Lanes, Relu, Sig, CHUNK, LANES};
use crate::error::{Error, Result};
use crate::ode::TimeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaParams {
    width: usize,
    dim: usize,
    grid: TimeGrid,
    activation: Activation,
    data: Vec<f64>,
}

impl VanillaParams {
    pub fn zeros(width: usize, dim: usize, grid: TimeGrid, activation: Activation) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "vanilla field needs positive width and dimension, got P={width}, d={dim}"
            )));
        }
        let len = grid.steps() * width * (2 * dim + 1);
        Ok(VanillaParams {
            width,
            dim,
            grid,
            activation,
            data: vec![0.0; len],
        })
    }

    pub fn init(
        width: usize,
        dim: usize,
        grid: TimeGrid,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(width, dim, grid, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = 1.0 / ((dim + 1) as f64).sqrt();
        let outer = 1.0 / (width as f64).sqrt();
        let mut canonical = Vec::with_capacity(params.num_params());
        for _ in 0..grid.steps() * width {
            canonical.extend((0..dim).map(|_| rng.gen_range(-outer..=outer)));
            canonical.extend((0..=dim).map(|_| rng.gen_range(-inner..=inner)));
        }
        params.load_canonical(&canonical);
        Ok(params)
    }

    pub fn from_canonical(
        width: usize,
        dim: usize,
        grid: TimeGrid,
        activation: Activation,
        values: &[f64],
    ) -> Result<Self> {
        let mut params = Self::zeros(width, dim, grid, activation)?;
        if values.len() != params.num_params() {
            return Err(Error::Shape(format!(
                "expected {} vanilla parameters, got {}",
                params.num_params(),
                values.len()
            )));
        }
        params.load_canonical(values);
        Ok(params)
    }

    fn load_canonical(&mut self, values: &[f64]) {
        let d = self.dim;
        let per_neuron = 2 * d + 1;
        for (n, chunk) in values.chunks_exact(per_neuron).enumerate() {
            let (l, i) = (n / self.width, n % self.width);
            for j in 0..d {
                self.set_w(l, i, j, chunk[j]);
                self.set_a(l, i, j, chunk[d + j]);
            }
            self.set_b(l, i, chunk[2 * d]);
        }
    }

    pub fn to_canonical(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in 0..self.grid.steps() {
            for i in 0..self.width {
                out.extend((0..self.dim).map(|j| self.w(l, i, j)));
                out.extend((0..self.dim).map(|k| self.a(l, i, k)));
                out.push(self.b(l, i));
            }
        }
        out
    }

    pub fn internal_to_canonical(&self, internal: &[f64]) -> Vec<f64> {
        let mut scratch = self.clone();
        scratch.data.copy_from_slice(internal);
        scratch.to_canonical()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn block_len(&self) -> usize {
        self.width * (2 * self.dim + 1)
    }

    pub fn w_index(&self, l: usize, i: usize, j: usize) -> usize {
        l * self.block_len() + j * self.width + i
    }

    pub fn a_index(&self, l: usize, i: usize, k: usize) -> usize {
        l * self.block_len() + (self.dim + k) * self.width + i
    }

    pub fn b_index(&self, l: usize, i: usize) -> usize {
        l * self.block_len() + 2 * self.dim * self.width + i
    }

    pub fn w(&self, l: usize, i: usize, j: usize) -> f64 {
        self.data[self.w_index(l, i, j)]
    }

    pub fn a(&self, l: usize, i: usize, k: usize) -> f64 {
        self.data[self.a_index(l, i, k)]
    }

    pub fn b(&self, l: usize, i: usize) -> f64 {
        self.data[self.b_index(l, i)]
    }

    pub fn set_w(&mut self, l: usize, i: usize, j: usize, v: f64) {
        let idx = self.w_index(l, i, j);
        self.data[idx] = v;
    }

    pub fn set_a(&mut self, l: usize, i: usize, k: usize, v: f64) {
        let idx = self.a_index(l, i, k);
        self.data[idx] = v;
    }

    pub fn set_b(&mut self, l: usize, i: usize, v: f64) {
        let idx = self.b_index(l, i);
        self.data[idx] = v;
    }

    /// Step whose parameter block governs time `t` (right-continuous; `t_M` maps to `M-1`).
    pub fn step_at(&self, t: f64) -> Result<usize> {
        self.grid.step_containing(t).ok_or(Error::TimeOutOfGrid {
            t,
            t0: self.grid.t0(),
            t1: self.grid.t1(),
        })
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "state has {} components, vanilla field has d={}",
                x.len(),
                self.dim
            )));
        }
        let step = self.step_at(t)?;
        let mut out = vec![0.0; self.dim];
        self.eval_step_into(x, step, &mut out);
        Ok(out)
    }

    #[inline]
    fn preact(&self, step: usize, start: usize, len: usize, x: &[f64], z: &mut [f64]) {
        let base = step * self.block_len();
        let z = &mut z[..len];
        z.copy_from_slice(&self.data[base + 2 * self.dim * self.width + start..][..len]);
        for (k, &xk) in x.iter().enumerate() {
            let col = &self.data[base + (self.dim + k) * self.width + start..][..len];
            for (z, &a) in z.iter_mut().zip(col) {
                *z += a * xk;
            }
        }
    }

    /// Evaluation with the parameter block of `step`, regardless of the time value.
    pub fn eval_step_into(&self, x: &[f64], step: usize, out: &mut [f64]) {
        let base = step * self.block_len();
        let mut z = [0.0; CHUNK];
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut start = 0;
        while start < self.width {
            let len = CHUNK.min(self.width - start);
            self.preact(step, start, len, x, &mut z);
            self.activation.apply_slice(&mut z[..len]);
            for (j, o) in out.iter_mut().enumerate() {
                *o += dot(&self.data[base + j * self.width + start..][..len], &z[..len]);
            }
            start += len;
        }
    }

    /// Accumulates `x_bar += Jₓᵀ cot` and `theta_bar += J_θᵀ cot` for the block of `step`.
    pub fn vjp_step_into(
        &self,
        x: &[f64],
        step: usize,
        cot: &[f64],
        x_bar: &mut [f64],
        theta_bar: &mut [f64],
    ) {
        let base = step * self.block_len();
        let (p, d) = (self.width, self.dim);
        let mut z = [0.0; CHUNK];
        let mut delta = [0.0; CHUNK];
        let mut start = 0;
        while start < p {
            let len = CHUNK.min(p - start);
            self.preact(step, start, len, x, &mut z);
            delta[..len].iter_mut().for_each(|v| *v = 0.0);
            for c in 0..len {
                let (s, ds) = self.activation.value_and_derivative(z[c]);
                z[c] = s;
                delta[c] = ds;
            }
            // delta_i = σ'(z_i) · Σ_j cot_j w_{j,i}
            let mut back = [0.0; CHUNK];
            for (j, &cj) in cot.iter().enumerate() {
                let off = base + j * p + start;
                for (g, &s) in theta_bar[off..][..len].iter_mut().zip(&z[..len]) {
                    *g += cj * s;
                }
                for (bv, &w) in back[..len].iter_mut().zip(&self.data[off..][..len]) {
                    *bv += cj * w;
                }
            }
            for (dv, &bv) in delta[..len].iter_mut().zip(&back[..len]) {
                *dv *= bv;
            }
            let b_off = base + 2 * d * p + start;
            for (g, &dv) in theta_bar[b_off..][..len].iter_mut().zip(&delta[..len]) {
                *g += dv;
            }
            for (k, &xk) in x.iter().enumerate() {
                let off = base + (d + k) * p + start;
                for (g, &dv) in theta_bar[off..][..len].iter_mut().zip(&delta[..len]) {
                    *g += dv * xk;
                }
                x_bar[k] += dot(&delta[..len], &self.data[off..][..len]);
            }
            start += len;
        }
    }

    pub(crate) fn eval_batch(&self, xt: &[Lanes], step: usize, out: &mut [Lanes]) {
        match self.activation {
            Activation::ReLU => self.eval_batch_with::<Relu>(xt, step, out),
            Activation::Sigmoid => self.eval_batch_with::<Sig>(xt, step, out),
        }
    }

    fn eval_batch_with<A: Act>(&self, xt: &[Lanes], step: usize, out: &mut [Lanes]) {
        let base = step * self.block_len();
        let (p, d) = (self.width, self.dim);
        out.iter_mut().for_each(|o| *o = [0.0; LANES]);
        for i in 0..p {
            let mut z = [self.data[base + 2 * d * p + i]; LANES];
            for (k, xk) in xt.iter().enumerate().take(d) {
                let a = self.data[base + (d + k) * p + i];
                for n in 0..LANES {
                    z[n] += a * xk[n];
                }
            }
            for v in z.iter_mut() {
                *v = A::value(*v);
            }
            for (j, o) in out.iter_mut().enumerate() {
                let w = self.data[base + j * p + i];
                for n in 0..LANES {
                    o[n] += w * z[n];
                }
            }
        }
    }

    pub(crate) fn vjp_batch(&self, xt: &[Lanes], step: usize, cot: &[Lanes], x_bar: &mut [Lanes], theta_bar: &mut [f64]) {
        match self.activation {
            Activation::ReLU => self.vjp_batch_with::<Relu>(xt, step, cot, x_bar, theta_bar),
            Activation::Sigmoid => self.vjp_batch_with::<Sig>(xt, step, cot, x_bar, theta_bar),
        }
    }

    fn vjp_batch_with<A: Act>(&self, xt: &[Lanes], step: usize, cot: &[Lanes], x_bar: &mut [Lanes], theta_bar: &mut [f64]) {
        let base = step * self.block_len();
        let (p, d) = (self.width, self.dim);
        for i in 0..p {
            let mut z = [self.data[base + 2 * d * p + i]; LANES];
            for (k, xk) in xt.iter().enumerate().take(d) {
                let a = self.data[base + (d + k) * p + i];
                for n in 0..LANES {
                    z[n] += a * xk[n];
                }
            }
            let mut s = [0.0; LANES];
            let mut ds = [0.0; LANES];
            for n in 0..LANES {
                (s[n], ds[n]) = A::value_and_derivative(z[n]);
            }
            let mut back = [0.0; LANES];
            for (j, cj) in cot.iter().enumerate() {
                let off = base + j * p + i;
                let w = self.data[off];
                let mut g = [0.0; LANES];
                for n in 0..LANES {
                    g[n] = cj[n] * s[n];
                    back[n] += cj[n] * w;
                }
                theta_bar[off] += lane_sum(&g);
            }
            let mut delta = [0.0; LANES];
            for n in 0..LANES {
                delta[n] = ds[n] * back[n];
            }
            theta_bar[base + 2 * d * p + i] += lane_sum(&delta);
            for (k, (xk, xb)) in xt.iter().zip(x_bar.iter_mut()).enumerate().take(d) {
                let off = base + (d + k) * p + i;
                let a = self.data[off];
                let mut g = [0.0; LANES];
                for n in 0..LANES {
                    g[n] = delta[n] * xk[n];
                    xb[n] += delta[n] * a;
                }
                theta_bar[off] += lane_sum(&g);
            }
        }
    }

    fn step_lipschitz(&self, l: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                (0..self.width)
                    .map(|i| self.w(l, i, j).abs() * self.a_norm(l, i))
                    .sum()
            })
            .collect()
    }

    fn a_norm(&self, l: usize, i: usize) -> f64 {
        (0..self.dim)
            .map(|k| self.a(l, i, k).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Per-step Lipschitz bound `‖Σ_i |w_{l,i}| ‖a_{l,i}‖‖`, averaged over steps.
    pub fn lipschitz_bound(&self) -> f64 {
        let m = self.steps();
        (0..m).map(|l| norm2(&self.step_lipschitz(l))).sum::<f64>() / m as f64
    }

    pub fn lipschitz_grad_into(&self, scale: f64, out: &mut [f64]) {
        let m = self.steps() as f64;
        for l in 0..self.steps() {
            let v = self.step_lipschitz(l);
            let g = norm2(&v);
            if g == 0.0 {
                continue;
            }
            for i in 0..self.width {
                let r = self.a_norm(l, i);
                let mut a_weight = 0.0;
                for (j, &vj) in v.iter().enumerate() {
                    let outer = scale * vj / (g * m);
                    let w = self.w(l, i, j);
                    out[self.w_index(l, i, j)] += outer * sign(w) * r;
                    a_weight += outer * w.abs();
                }
                if r > 0.0 {
                    for k in 0..self.dim {
                        out[self.a_index(l, i, k)] += a_weight * self.a(l, i, k) / r;
                    }
                }
            }
        }
    }
}
