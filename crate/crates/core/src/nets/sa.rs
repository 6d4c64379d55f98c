//! Semi-autonomous shallow field
//! `f(x, t) = Σ_i W_i ∘ σ(A1_i x + A2_i t + B_i)`.
//!
//! Every neuron `i` contributes one scalar "unit" per output coordinate `j`:
//! unit `(i, j)` has outer weight `W_ij`, input row `A1_i[j, :]`, time weight
//! `A2_ij` and bias `B_ij`. Parameters are stored unit-major by output
//! coordinate (`u = j·P + i`), one contiguous segment per parameter family,
//! so that the hot loops run over contiguous memory:
//!
//! ```text
//! [ W | A1[:, :, 0] | … | A1[:, :, d-1] | A2 | B ]   each segment P·d long
//! ```
//!
//! The canonical order used in files is per neuron: `W_i, A1_i (row-major), A2_i, B_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dot, lane_sum, use_avx2, Act, Activation, Lanes, Relu, Sig, CHUNK, LANES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaParams {
    width: usize,
    dim: usize,
    activation: Activation,
    autonomous: bool,
    data: Vec<f64>,
}

impl SaParams {
    pub fn zeros(width: usize, dim: usize, activation: Activation) -> Result<Self> {
        if width == 0 || dim == 0 {
            return Err(Error::Shape(format!(
                "SA field needs positive width and dimension, got P={width}, d={dim}"
            )));
        }
        Ok(SaParams {
            width,
            dim,
            activation,
            autonomous: false,
            data: vec![0.0; width * dim * (dim + 3)],
        })
    }

    /// Uniform initialization on `[-1/√fan_in, 1/√fan_in]`, with fan-in `d+1`
    /// for the input rows and biases and `P` for the outer weights. Draws are
    /// taken neuron by neuron in canonical order.
    pub fn init(width: usize, dim: usize, activation: Activation, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(width, dim, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = 1.0 / ((dim + 1) as f64).sqrt();
        let outer = 1.0 / (width as f64).sqrt();
        let mut canonical = Vec::with_capacity(params.num_params());
        for _ in 0..width {
            canonical.extend((0..dim).map(|_| rng.gen_range(-outer..=outer)));
            canonical.extend((0..dim * dim + 2 * dim).map(|_| rng.gen_range(-inner..=inner)));
        }
        params.load_canonical(&canonical);
        Ok(params)
    }

    pub fn from_canonical(
        width: usize,
        dim: usize,
        activation: Activation,
        values: &[f64],
    ) -> Result<Self> {
        let mut params = Self::zeros(width, dim, activation)?;
        if values.len() != params.num_params() {
            return Err(Error::Shape(format!(
                "expected {} SA parameters, got {}",
                params.num_params(),
                values.len()
            )));
        }
        params.load_canonical(values);
        Ok(params)
    }

    fn load_canonical(&mut self, values: &[f64]) {
        let d = self.dim;
        let block = d * d + 3 * d;
        for (i, chunk) in values.chunks_exact(block).enumerate() {
            for j in 0..d {
                self.set_w(i, j, chunk[j]);
                for k in 0..d {
                    self.set_a1(i, j, k, chunk[d + j * d + k]);
                }
                self.set_a2(i, j, chunk[d + d * d + j]);
                self.set_b(i, j, chunk[2 * d + d * d + j]);
            }
        }
        if self.autonomous {
            self.zero_time_weights();
        }
    }

    pub fn to_canonical(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.num_params());
        for i in 0..self.width {
            out.extend((0..d).map(|j| self.w(i, j)));
            for j in 0..d {
                out.extend((0..d).map(|k| self.a1(i, j, k)));
            }
            out.extend((0..d).map(|j| self.a2(i, j)));
            out.extend((0..d).map(|j| self.b(i, j)));
        }
        out
    }

    /// Convert a vector in the internal layout (e.g. a gradient) to canonical order.
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

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    /// Pin every time weight `A2_i` to zero, making the field autonomous.
    /// The time weights then receive no gradient.
    pub fn set_autonomous(&mut self, autonomous: bool) {
        self.autonomous = autonomous;
        if autonomous {
            self.zero_time_weights();
        }
    }

    fn zero_time_weights(&mut self) {
        let pd = self.units();
        let off = self.a2_offset();
        self.data[off..off + pd].iter_mut().for_each(|v| *v = 0.0);
    }

    /// Parameters in the internal unit-major layout.
    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn units(&self) -> usize {
        self.width * self.dim
    }

    #[inline]
    fn a1_offset(&self, k: usize) -> usize {
        (1 + k) * self.units()
    }

    #[inline]
    fn a2_offset(&self) -> usize {
        (1 + self.dim) * self.units()
    }

    #[inline]
    fn b_offset(&self) -> usize {
        (2 + self.dim) * self.units()
    }

    pub fn w_index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn a1_index(&self, i: usize, j: usize, k: usize) -> usize {
        self.a1_offset(k) + j * self.width + i
    }

    pub fn a2_index(&self, i: usize, j: usize) -> usize {
        self.a2_offset() + j * self.width + i
    }

    pub fn b_index(&self, i: usize, j: usize) -> usize {
        self.b_offset() + j * self.width + i
    }

    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.data[self.w_index(i, j)]
    }

    pub fn a1(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.a1_index(i, j, k)]
    }

    pub fn a2(&self, i: usize, j: usize) -> f64 {
        self.data[self.a2_index(i, j)]
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.data[self.b_index(i, j)]
    }

    pub fn set_w(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.w_index(i, j);
        self.data[idx] = v;
    }

    pub fn set_a1(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.a1_index(i, j, k);
        self.data[idx] = v;
    }

    pub fn set_a2(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.a2_index(i, j);
        self.data[idx] = if self.autonomous { 0.0 } else { v };
    }

    pub fn set_b(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.b_index(i, j);
        self.data[idx] = v;
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "state has {} components, SA field has d={}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Pre-activations of units `j·P + start .. j·P + start + len` into `z[..len]`.
    #[inline]
    fn preact(&self, j: usize, start: usize, len: usize, x: &[f64], t: f64, z: &mut [f64]) {
        let base = j * self.width + start;
        let z = &mut z[..len];
        let b = &self.data[self.b_offset() + base..][..len];
        let a2 = &self.data[self.a2_offset() + base..][..len];
        for ((z, &b), &a2) in z.iter_mut().zip(b).zip(a2) {
            *z = b + a2 * t;
        }
        for (k, &xk) in x.iter().enumerate() {
            let col = &self.data[self.a1_offset(k) + base..][..len];
            for (z, &a) in z.iter_mut().zip(col) {
                *z += a * xk;
            }
        }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, t, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation: `x` and `out` must have length `d`.
    pub fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let mut z = [0.0; CHUNK];
        let w = &self.data[..self.units()];
        for (j, out_j) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut start = 0;
            while start < self.width {
                let len = CHUNK.min(self.width - start);
                self.preact(j, start, len, x, t, &mut z);
                self.activation.apply_slice(&mut z[..len]);
                acc += dot(&w[j * self.width + start..][..len], &z[..len]);
                start += len;
            }
            *out_j = acc;
        }
    }

    /// Accumulates `x_bar += (∂f/∂x)ᵀ cot` and `theta_bar += (∂f/∂Θ)ᵀ cot`,
    /// with `theta_bar` in the internal layout.
    pub fn vjp_into(
        &self,
        x: &[f64],
        t: f64,
        cot: &[f64],
        x_bar: &mut [f64],
        theta_bar: &mut [f64],
    ) {
        debug_assert_eq!(theta_bar.len(), self.data.len());
        let pd = self.units();
        let mut z = [0.0; CHUNK];
        let mut s = [0.0; CHUNK];
        let mut delta = [0.0; CHUNK];
        for (j, &cj) in cot.iter().enumerate() {
            let mut start = 0;
            while start < self.width {
                let len = CHUNK.min(self.width - start);
                let base = j * self.width + start;
                self.preact(j, start, len, x, t, &mut z);
                let w = &self.data[base..][..len];
                for (((zv, sv), dv), &wv) in z[..len]
                    .iter()
                    .zip(&mut s[..len])
                    .zip(&mut delta[..len])
                    .zip(w)
                {
                    let (a, da) = self.activation.value_and_derivative(*zv);
                    *sv = a;
                    *dv = cj * wv * da;
                }
                for (g, &sv) in theta_bar[base..][..len].iter_mut().zip(&s[..len]) {
                    *g += cj * sv;
                }
                let b_off = self.b_offset() + base;
                for (g, &dv) in theta_bar[b_off..][..len].iter_mut().zip(&delta[..len]) {
                    *g += dv;
                }
                if !self.autonomous {
                    let a2_off = self.a2_offset() + base;
                    for (g, &dv) in theta_bar[a2_off..][..len].iter_mut().zip(&delta[..len]) {
                        *g += dv * t;
                    }
                }
                for (k, &xk) in x.iter().enumerate() {
                    let off = (1 + k) * pd + base;
                    for (g, &dv) in theta_bar[off..][..len].iter_mut().zip(&delta[..len]) {
                        *g += dv * xk;
                    }
                    x_bar[k] += dot(&delta[..len], &self.data[off..][..len]);
                }
                start += len;
            }
        }
    }

    pub(crate) fn eval_batch(&self, xt: &[Lanes], t: f64, out: &mut [Lanes]) {
        match (self.activation, self.dim) {
            (Activation::ReLU, 1) => self.eval_dispatch::<Relu, 1>(xt, t, out),
            (Activation::ReLU, 2) => self.eval_dispatch::<Relu, 2>(xt, t, out),
            (Activation::ReLU, 3) => self.eval_dispatch::<Relu, 3>(xt, t, out),
            (Activation::Sigmoid, 1) => self.eval_dispatch::<Sig, 1>(xt, t, out),
            (Activation::Sigmoid, 2) => self.eval_dispatch::<Sig, 2>(xt, t, out),
            (Activation::Sigmoid, 3) => self.eval_dispatch::<Sig, 3>(xt, t, out),
            (Activation::ReLU, _) => self.eval_batch_with::<Relu>(xt, t, out),
            (Activation::Sigmoid, _) => self.eval_batch_with::<Sig>(xt, t, out),
        }
    }

    fn eval_batch_with<A: Act>(&self, xt: &[Lanes], t: f64, out: &mut [Lanes]) {
        let (p, d, units) = (self.width, self.dim, self.units());
        let (a2_off, b_off) = (self.a2_offset(), self.b_offset());
        for (j, out_j) in out.iter_mut().enumerate() {
            let mut acc = [0.0; LANES];
            for u in j * p..(j + 1) * p {
                let c = self.data[b_off + u] + self.data[a2_off + u] * t;
                let mut z = [c; LANES];
                for (k, xk) in xt.iter().enumerate().take(d) {
                    let a = self.data[(1 + k) * units + u];
                    for n in 0..LANES {
                        z[n] += a * xk[n];
                    }
                }
                let w = self.data[u];
                for n in 0..LANES {
                    acc[n] += w * A::value(z[n]);
                }
            }
            *out_j = acc;
        }
    }

    pub(crate) fn vjp_batch(&self, xt: &[Lanes], t: f64, cot: &[Lanes], x_bar: &mut [Lanes], theta_bar: &mut [f64]) {
        match (self.activation, self.dim) {
            (Activation::ReLU, 1) => self.vjp_dispatch::<Relu, 1>(xt, t, cot, x_bar, theta_bar),
            (Activation::ReLU, 2) => self.vjp_dispatch::<Relu, 2>(xt, t, cot, x_bar, theta_bar),
            (Activation::ReLU, 3) => self.vjp_dispatch::<Relu, 3>(xt, t, cot, x_bar, theta_bar),
            (Activation::Sigmoid, 1) => self.vjp_dispatch::<Sig, 1>(xt, t, cot, x_bar, theta_bar),
            (Activation::Sigmoid, 2) => self.vjp_dispatch::<Sig, 2>(xt, t, cot, x_bar, theta_bar),
            (Activation::Sigmoid, 3) => self.vjp_dispatch::<Sig, 3>(xt, t, cot, x_bar, theta_bar),
            (Activation::ReLU, _) => self.vjp_batch_with::<Relu>(xt, t, cot, x_bar, theta_bar),
            (Activation::Sigmoid, _) => self.vjp_batch_with::<Sig>(xt, t, cot, x_bar, theta_bar),
        }
    }

    fn vjp_dispatch<A: Act, const D: usize>(
        &self,
        xt: &[Lanes],
        t: f64,
        cot: &[Lanes],
        x_bar: &mut [Lanes],
        theta_bar: &mut [f64],
    ) {
        #[cfg(target_arch = "x86_64")]
        if use_avx2() {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { self.vjp_fixed_avx2::<A, D>(xt, t, cot, x_bar, theta_bar) };
            return;
        }
        self.vjp_fixed::<A, D>(xt, t, cot, x_bar, theta_bar)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn vjp_fixed_avx2<A: Act, const D: usize>(
        &self,
        xt: &[Lanes],
        t: f64,
        cot: &[Lanes],
        x_bar: &mut [Lanes],
        theta_bar: &mut [f64],
    ) {
        self.vjp_fixed::<A, D>(xt, t, cot, x_bar, theta_bar)
    }

    fn eval_dispatch<A: Act, const D: usize>(&self, xt: &[Lanes], t: f64, out: &mut [Lanes]) {
        #[cfg(target_arch = "x86_64")]
        if use_avx2() {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { self.eval_fixed_avx2::<A, D>(xt, t, out) };
            return;
        }
        self.eval_fixed::<A, D>(xt, t, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn eval_fixed_avx2<A: Act, const D: usize>(&self, xt: &[Lanes], t: f64, out: &mut [Lanes]) {
        self.eval_fixed::<A, D>(xt, t, out)
    }

    /// Small-dimension variant of [`SaParams::vjp_batch_with`]. Units are taken
    /// eight at a time (zero-padded past the row end) and the lanes are walked
    /// inside, so gradient sums stay in registers and the state cotangent is
    /// reduced once per row.
    #[inline(always)]
    fn vjp_fixed<A: Act, const D: usize>(
        &self,
        xt: &[Lanes],
        t: f64,
        cot: &[Lanes],
        x_bar: &mut [Lanes],
        theta_bar: &mut [f64],
    ) {
        const U: usize = 8;
        let (p, units) = (self.width, self.units());
        let x: [Lanes; D] = std::array::from_fn(|k| xt[k]);
        let mut xb = [[[0.0; U]; LANES]; D];
        for (j, cj) in cot.iter().enumerate().take(D) {
            let mut start = j * p;
            while start < (j + 1) * p {
                let len = U.min((j + 1) * p - start);
                let load = |off: usize| {
                    let mut v = [0.0; U];
                    v[..len].copy_from_slice(&self.data[off + start..][..len]);
                    v
                };
                let w = load(0);
                let a: [[f64; U]; D] = std::array::from_fn(|k| load((1 + k) * units));
                let a2 = load((1 + D) * units);
                let b = load((2 + D) * units);
                let mut c = [0.0; U];
                for q in 0..U {
                    c[q] = b[q] + a2[q] * t;
                }
                let mut gw = [0.0; U];
                let mut gb = [0.0; U];
                let mut ga = [[0.0; U]; D];
                for n in 0..LANES {
                    let mut z = c;
                    for k in 0..D {
                        for q in 0..U {
                            z[q] += a[k][q] * x[k][n];
                        }
                    }
                    let cn = cj[n];
                    let mut delta = [0.0; U];
                    for q in 0..U {
                        let (sv, ds) = A::value_and_derivative(z[q]);
                        gw[q] += cn * sv;
                        delta[q] = cn * w[q] * ds;
                        gb[q] += delta[q];
                    }
                    for k in 0..D {
                        for q in 0..U {
                            ga[k][q] += delta[q] * x[k][n];
                            xb[k][n][q] += delta[q] * a[k][q];
                        }
                    }
                }
                let mut store = |off: usize, v: &[f64; U]| {
                    for (g, dv) in theta_bar[off + start..][..len].iter_mut().zip(v) {
                        *g += dv;
                    }
                };
                store(0, &gw);
                for (k, gk) in ga.iter().enumerate() {
                    store((1 + k) * units, gk);
                }
                if !self.autonomous {
                    let mut gt = [0.0; U];
                    for q in 0..U {
                        gt[q] = gb[q] * t;
                    }
                    store((1 + D) * units, &gt);
                }
                store((2 + D) * units, &gb);
                start += len;
            }
        }
        for (acc, part) in x_bar.iter_mut().zip(&xb) {
            for n in 0..LANES {
                acc[n] += lane_sum(&part[n]);
            }
        }
    }

    /// Small-dimension variant of [`SaParams::eval_batch_with`], blocked like
    /// [`SaParams::vjp_fixed`].
    #[inline(always)]
    fn eval_fixed<A: Act, const D: usize>(&self, xt: &[Lanes], t: f64, out: &mut [Lanes]) {
        const U: usize = 8;
        let (p, units) = (self.width, self.units());
        let x: [Lanes; D] = std::array::from_fn(|k| xt[k]);
        for (j, out_j) in out.iter_mut().enumerate().take(D) {
            let mut acc = [[0.0; U]; LANES];
            let mut start = j * p;
            while start < (j + 1) * p {
                let len = U.min((j + 1) * p - start);
                let load = |off: usize| {
                    let mut v = [0.0; U];
                    v[..len].copy_from_slice(&self.data[off + start..][..len]);
                    v
                };
                let w = load(0);
                let a: [[f64; U]; D] = std::array::from_fn(|k| load((1 + k) * units));
                let a2 = load((1 + D) * units);
                let b = load((2 + D) * units);
                let mut c = [0.0; U];
                for q in 0..U {
                    c[q] = b[q] + a2[q] * t;
                }
                for n in 0..LANES {
                    let mut z = c;
                    for k in 0..D {
                        for q in 0..U {
                            z[q] += a[k][q] * x[k][n];
                        }
                    }
                    for q in 0..U {
                        acc[n][q] += w[q] * A::value(z[q]);
                    }
                }
                start += len;
            }
            for n in 0..LANES {
                out_j[n] = lane_sum(&acc[n]);
            }
        }
    }

    fn vjp_batch_with<A: Act>(&self, xt: &[Lanes], t: f64, cot: &[Lanes], x_bar: &mut [Lanes], theta_bar: &mut [f64]) {
        let (p, d, units) = (self.width, self.dim, self.units());
        let (a2_off, b_off) = (self.a2_offset(), self.b_offset());
        for (j, cj) in cot.iter().enumerate() {
            for u in j * p..(j + 1) * p {
                let c = self.data[b_off + u] + self.data[a2_off + u] * t;
                let mut z = [c; LANES];
                for (k, xk) in xt.iter().enumerate().take(d) {
                    let a = self.data[(1 + k) * units + u];
                    for n in 0..LANES {
                        z[n] += a * xk[n];
                    }
                }
                let w = self.data[u];
                let mut ws = [0.0; LANES];
                let mut delta = [0.0; LANES];
                for n in 0..LANES {
                    let (s, ds) = A::value_and_derivative(z[n]);
                    ws[n] = cj[n] * s;
                    delta[n] = cj[n] * w * ds;
                }
                theta_bar[u] += lane_sum(&ws);
                let db = lane_sum(&delta);
                theta_bar[b_off + u] += db;
                if !self.autonomous {
                    theta_bar[a2_off + u] += db * t;
                }
                for (k, (xk, xb)) in xt.iter().zip(x_bar.iter_mut()).enumerate().take(d) {
                    let off = (1 + k) * units + u;
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
    }

    /// State Jacobian, row-major `d × d`: entry `(j, k)` is `∂f_j/∂x_k`.
    pub fn jacobian_x(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let d = self.dim;
        let mut jac = vec![0.0; d * d];
        let mut z = [0.0; CHUNK];
        let mut g = [0.0; CHUNK];
        for j in 0..d {
            let mut start = 0;
            while start < self.width {
                let len = CHUNK.min(self.width - start);
                let base = j * self.width + start;
                self.preact(j, start, len, x, t, &mut z);
                for ((gv, &zv), &wv) in g[..len].iter_mut().zip(&z[..len]).zip(&self.data[base..][..len]) {
                    *gv = wv * self.activation.derivative(zv);
                }
                for k in 0..d {
                    jac[j * d + k] += dot(&g[..len], &self.data[self.a1_offset(k) + base..][..len]);
                }
                start += len;
            }
        }
        Ok(jac)
    }

    /// `(∂f/∂Θ)ᵀ cot` in the internal layout (matrix-free).
    pub fn param_vjp(&self, x: &[f64], t: f64, cot: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_point(cot)?;
        let mut x_bar = vec![0.0; self.dim];
        let mut theta_bar = vec![0.0; self.data.len()];
        self.vjp_into(x, t, cot, &mut x_bar, &mut theta_bar);
        Ok(theta_bar)
    }

    /// `(∂f/∂Θ) v` for a parameter direction `v` in the internal layout.
    pub fn param_jvp(&self, x: &[f64], t: f64, v: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if v.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "direction has {} entries, field has {} parameters",
                v.len(),
                self.data.len()
            )));
        }
        let pd = self.units();
        let mut out = vec![0.0; self.dim];
        for (j, out_j) in out.iter_mut().enumerate() {
            for i in 0..self.width {
                let u = j * self.width + i;
                let mut z = self.data[self.b_offset() + u] + self.data[self.a2_offset() + u] * t;
                let mut dz = v[self.b_offset() + u];
                if !self.autonomous {
                    dz += v[self.a2_offset() + u] * t;
                }
                for (k, &xk) in x.iter().enumerate() {
                    z += self.data[(1 + k) * pd + u] * xk;
                    dz += v[(1 + k) * pd + u] * xk;
                }
                let (s, ds) = self.activation.value_and_derivative(z);
                *out_j += v[u] * s + self.data[u] * ds * dz;
            }
        }
        Ok(out)
    }

    /// Materialized parameter Jacobian, row-major `d × #params` (internal layout columns).
    pub fn param_jacobian(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let n = self.data.len();
        let mut jac = Vec::with_capacity(self.dim * n);
        let mut cot = vec![0.0; self.dim];
        for j in 0..self.dim {
            cot.iter_mut().for_each(|c| *c = 0.0);
            cot[j] = 1.0;
            jac.extend(self.param_vjp(x, t, &cot)?);
        }
        Ok(jac)
    }

    /// `div_x f = Σ_i ⟨W_i, diag(A1_i) ∘ σ'(A1_i x + A2_i t + B_i)⟩`.
    pub fn divergence(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.divergence_unchecked(x, t))
    }

    pub(crate) fn divergence_unchecked(&self, x: &[f64], t: f64) -> f64 {
        let mut z = [0.0; CHUNK];
        let mut acc = 0.0;
        for j in 0..self.dim {
            let mut start = 0;
            while start < self.width {
                let len = CHUNK.min(self.width - start);
                let base = j * self.width + start;
                self.preact(j, start, len, x, t, &mut z);
                let w = &self.data[base..][..len];
                let diag = &self.data[self.a1_offset(j) + base..][..len];
                for ((&zv, &wv), &av) in z[..len].iter().zip(w).zip(diag) {
                    acc += wv * self.activation.derivative(zv) * av;
                }
                start += len;
            }
        }
        acc
    }

    /// Row-norm weighted outer weights: entry `j` is `Σ_i |W_ij| ‖A1_i[j, :]‖₂`.
    fn lipschitz_vector(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                (0..self.width)
                    .map(|i| self.w(i, j).abs() * self.a1_row_norm(i, j))
                    .sum()
            })
            .collect()
    }

    fn a1_row_norm(&self, i: usize, j: usize) -> f64 {
        (0..self.dim)
            .map(|k| self.a1(i, j, k).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Upper bound on the Lipschitz constant of `f(·, t)`, uniform in `t`.
    pub fn lipschitz_bound(&self) -> f64 {
        norm2(&self.lipschitz_vector())
    }

    /// Accumulates `scale · ∇ lipschitz_bound` into `out` (internal layout),
    /// using 0 as the subgradient of `|·|` at 0 and of a zero row norm.
    pub fn lipschitz_grad_into(&self, scale: f64, out: &mut [f64]) {
        let v = self.lipschitz_vector();
        let g = norm2(&v);
        if g == 0.0 {
            return;
        }
        for (j, &vj) in v.iter().enumerate() {
            let outer = scale * vj / g;
            for i in 0..self.width {
                let w = self.w(i, j);
                let r = self.a1_row_norm(i, j);
                out[self.w_index(i, j)] += outer * sign(w) * r;
                if r > 0.0 {
                    for k in 0..self.dim {
                        out[self.a1_index(i, j, k)] += outer * w.abs() * self.a1(i, j, k) / r;
                    }
                }
            }
        }
    }

    /// `‖ Σ_i |W_i| ∘ (‖A1_i‖_{ℓ¹} + |A2_i| + |B_i|) ‖` with rows of `A1_i` in ℓ¹.
    pub fn barron_diagnostic(&self) -> f64 {
        let v: Vec<f64> = (0..self.dim)
            .map(|j| {
                (0..self.width)
                    .map(|i| {
                        let row: f64 = (0..self.dim).map(|k| self.a1(i, j, k).abs()).sum();
                        self.w(i, j).abs() * (row + self.a2(i, j).abs() + self.b(i, j).abs())
                    })
                    .sum()
            })
            .collect();
        norm2(&v)
    }
}

#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(width: usize, dim: usize, act: Activation, seed: u64) -> SaParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = width * dim * (dim + 3);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        SaParams::from_canonical(width, dim, act, &values).unwrap()
    }

    /// Scalar reference evaluation straight from the canonical parameter vector.
    fn brute_force_eval(width: usize, dim: usize, act: Activation, canon: &[f64], x: &[f64], t: f64) -> Vec<f64> {
        let block = dim * dim + 3 * dim;
        let mut out = vec![0.0; dim];
        for i in 0..width {
            let p = &canon[i * block..(i + 1) * block];
            for j in 0..dim {
                let mut z = p[dim + dim * dim + j] * t + p[2 * dim + dim * dim + j];
                for k in 0..dim {
                    z += p[dim + j * dim + k] * x[k];
                }
                out[j] += p[j] * act.apply(z);
            }
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn zero_network_is_zero() {
        let p = SaParams::zeros(5, 3, Activation::Sigmoid).unwrap();
        assert_eq!(p.eval(&[1.0, -2.0, 0.5], 3.0).unwrap(), vec![0.0; 3]);
        assert_eq!(p.jacobian_x(&[1.0, -2.0, 0.5], 3.0).unwrap(), vec![0.0; 9]);
        assert_eq!(p.divergence(&[1.0, -2.0, 0.5], 3.0).unwrap(), 0.0);
        assert_eq!(p.lipschitz_bound(), 0.0);
        assert_eq!(p.barron_diagnostic(), 0.0);
    }

    #[test]
    fn relu_identity_on_positives() {
        let p = SaParams::from_canonical(1, 1, Activation::ReLU, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.eval(&[-2.0], 0.0).unwrap(), vec![0.0]);
        assert_eq!(p.eval(&[3.0], 0.0).unwrap(), vec![3.0]);
    }

    #[test]
    fn matches_scalar_loop() {
        for &act in &[Activation::ReLU, Activation::Sigmoid] {
            let p = random_params(2, 2, act, 7);
            let canon = p.to_canonical();
            for &(x, t) in &[([0.3, -0.5], 1.0), ([1.7, 2.2], 0.0), ([-3.0, 0.1], 4.5)] {
                let fast = p.eval(&x, t).unwrap();
                let slow = brute_force_eval(2, 2, act, &canon, &x, t);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()), "{a} vs {b}");
                }
            }
        }
        // widths spanning several chunks
        let p = random_params(150, 3, Activation::Sigmoid, 11);
        let canon = p.to_canonical();
        let x = [0.2, -0.1, 0.9];
        let fast = p.eval(&x, 0.7).unwrap();
        let slow = brute_force_eval(150, 3, Activation::Sigmoid, &canon, &x, 0.7);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn canonical_round_trip() {
        let p = random_params(4, 3, Activation::ReLU, 3);
        let q = SaParams::from_canonical(4, 3, Activation::ReLU, &p.to_canonical()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.num_params(), 4 * (9 + 9));
    }

    #[test]
    fn shape_errors() {
        let p = SaParams::zeros(2, 2, Activation::ReLU).unwrap();
        assert!(matches!(p.eval(&[1.0], 0.0), Err(Error::Shape(_))));
        assert!(matches!(p.jacobian_x(&[1.0, 2.0, 3.0], 0.0), Err(Error::Shape(_))));
        assert!(SaParams::zeros(0, 2, Activation::ReLU).is_err());
        assert!(SaParams::from_canonical(2, 2, Activation::ReLU, &[0.0; 3]).is_err());
    }

    #[test]
    fn state_jacobian_matches_finite_differences() {
        let p = random_params(2, 2, Activation::Sigmoid, 7);
        let x = [0.3, -0.5];
        let t = 1.0;
        let jac = p.jacobian_x(&x, t).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = p.eval(&xp, t).unwrap();
            let fm = p.eval(&xm, t).unwrap();
            for j in 0..2 {
                let fd = (fp[j] - fm[j]) / (2.0 * h);
                assert!(rel_err(jac[j * 2 + k], fd) <= 1e-6, "({j},{k}) {} vs {fd}", jac[j * 2 + k]);
            }
        }
    }

    #[test]
    fn relu_jacobian_away_from_kinks() {
        let p = random_params(6, 2, Activation::ReLU, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 20 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(0.0..5.0);
            let kink_free = (0..6).all(|i| {
                (0..2).all(|j| {
                    let z = p.b(i, j) + p.a2(i, j) * t + p.a1(i, j, 0) * x[0] + p.a1(i, j, 1) * x[1];
                    z.abs() > 1e-3
                })
            });
            if !kink_free {
                continue;
            }
            checked += 1;
            let jac = p.jacobian_x(&x, t).unwrap();
            let h = 1e-5;
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fp = p.eval(&xp, t).unwrap();
                let fm = p.eval(&xm, t).unwrap();
                for j in 0..2 {
                    let fd = (fp[j] - fm[j]) / (2.0 * h);
                    assert!(rel_err(jac[j * 2 + k], fd) <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let p = random_params(2, 2, Activation::Sigmoid, 7);
        let x = [0.3, -0.5];
        let t = 1.0;
        let c = [0.8, -1.3];
        let grad = p.param_vjp(&x, t, &c).unwrap();
        let h = 1e-6;
        for idx in 0..p.num_params() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.raw_mut()[idx] += h;
            minus.raw_mut()[idx] -= h;
            let fp = plus.eval(&x, t).unwrap();
            let fm = minus.eval(&x, t).unwrap();
            let fd = (c[0] * (fp[0] - fm[0]) + c[1] * (fp[1] - fm[1])) / (2.0 * h);
            assert!(rel_err(grad[idx], fd) <= 1e-6, "param {idx}: {} vs {fd}", grad[idx]);
        }
    }

    #[test]
    fn single_bias_perturbation_follows_chain_rule() {
        let p = random_params(3, 2, Activation::Sigmoid, 9);
        let x = [0.4, 0.1];
        let t = 0.5;
        let h = 1e-7;
        let mut q = p.clone();
        q.set_b(0, 0, p.b(0, 0) + h);
        let z = p.b(0, 0) + p.a2(0, 0) * t + p.a1(0, 0, 0) * x[0] + p.a1(0, 0, 1) * x[1];
        let predicted = p.w(0, 0) * Activation::Sigmoid.derivative(z) * h;
        let diff = q.eval(&x, t).unwrap()[0] - p.eval(&x, t).unwrap()[0];
        assert!((diff - predicted).abs() <= 1e-12);
        assert_eq!(q.eval(&x, t).unwrap()[1], p.eval(&x, t).unwrap()[1]);
    }

    #[test]
    fn zero_outer_weights_kill_inner_partials() {
        let mut p = random_params(3, 2, Activation::Sigmoid, 1);
        for i in 0..3 {
            for j in 0..2 {
                p.set_w(i, j, 0.0);
            }
        }
        let g = p.param_vjp(&[0.2, 0.3], 0.4, &[1.0, -2.0]).unwrap();
        assert!(g[p.units()..].iter().all(|&v| v == 0.0));
        assert!(g[..p.units()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn jvp_is_adjoint_of_vjp() {
        let p = random_params(5, 2, Activation::Sigmoid, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..p.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = [0.7, -0.2];
        let jv = p.param_jvp(&[0.1, 0.9], 2.0, &v).unwrap();
        let jtc = p.param_vjp(&[0.1, 0.9], 2.0, &c).unwrap();
        let lhs = c[0] * jv[0] + c[1] * jv[1];
        let rhs: f64 = jtc.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        let full = p.param_jacobian(&[0.1, 0.9], 2.0).unwrap();
        assert_eq!(full.len(), 2 * p.num_params());
    }

    #[test]
    fn divergence_is_jacobian_trace() {
        let p = random_params(40, 3, Activation::Sigmoid, 2);
        let x = [0.5, -1.0, 0.25];
        let jac = p.jacobian_x(&x, 1.5).unwrap();
        let trace = jac[0] + jac[4] + jac[8];
        let div = p.divergence(&x, 1.5).unwrap();
        assert!((trace - div).abs() <= 1e-13 * (1.0 + div.abs()));
    }

    #[test]
    fn lipschitz_scalar_case() {
        let p = SaParams::from_canonical(1, 1, Activation::ReLU, &[2.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.lipschitz_bound(), 6.0);
    }

    #[test]
    fn barron_scalar_case() {
        let p = SaParams::from_canonical(1, 1, Activation::ReLU, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.barron_diagnostic(), 9.0);
    }

    #[test]
    fn lipschitz_gradient_matches_finite_differences() {
        let p = random_params(3, 2, Activation::ReLU, 12);
        let mut grad = vec![0.0; p.num_params()];
        p.lipschitz_grad_into(1.0, &mut grad);
        let h = 1e-7;
        for idx in 0..p.num_params() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.raw_mut()[idx] += h;
            minus.raw_mut()[idx] -= h;
            let fd = (plus.lipschitz_bound() - minus.lipschitz_bound()) / (2.0 * h);
            assert!((grad[idx] - fd).abs() <= 1e-6, "param {idx}");
        }
    }

    #[test]
    fn autonomous_fields_ignore_time() {
        let mut p = random_params(4, 2, Activation::Sigmoid, 6);
        p.set_autonomous(true);
        assert_eq!(p.eval(&[0.1, 0.2], 0.0).unwrap(), p.eval(&[0.1, 0.2], 7.0).unwrap());
        let g = p.param_vjp(&[0.1, 0.2], 3.0, &[1.0, 1.0]).unwrap();
        assert!(g[p.a2_offset()..p.b_offset()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = SaParams::init(10, 2, Activation::ReLU, 3).unwrap();
        let b = SaParams::init(10, 2, Activation::ReLU, 3).unwrap();
        let c = SaParams::init(10, 2, Activation::ReLU, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let inner = 1.0 / 3f64.sqrt();
        let outer = 1.0 / 10f64.sqrt();
        assert!(a.raw()[..20].iter().all(|v| v.abs() <= outer));
        assert!(a.raw()[20..].iter().all(|v| v.abs() <= inner));
    }
}
