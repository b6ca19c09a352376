//! Forward dynamics of the action generation network.
//!
//! Layers, bottom to top: input buffer (I), fast (F), middle (M), slow (S),
//! plus a softmax output layer (O). F, M and S are leaky-integrator tanh
//! layers with their own time constants; each is recurrent, bidirectionally
//! wired to its neighbours and driven by the static PB activation.
//! I feeds F only and O reads F only.
//!
//! One call to [`NetworkParams::step`] consumes the current proprioceptive
//! frame and predicts the next one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::SoftmaxSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Joint count (D).
    pub joints: usize,
    /// Softmax units per joint (J).
    pub units: usize,
    pub fast: usize,
    pub middle: usize,
    pub slow: usize,
    pub pb_dim: usize,
    pub tau_fast: f64,
    pub tau_middle: f64,
    pub tau_slow: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            joints: 8,
            units: 10,
            fast: 40,
            middle: 20,
            slow: 10,
            pb_dim: 2,
            tau_fast: 2.0,
            tau_middle: 4.0,
            tau_slow: 8.0,
        }
    }
}

impl NetworkSpec {
    /// Width of the input and output layers, `joints × units`.
    pub fn io_width(&self) -> usize {
        self.joints * self.units
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("network spec: {msg}")));
        if self.joints == 0 || self.units < 2 {
            return bad("need at least one joint and two units per joint");
        }
        if self.fast == 0 || self.middle == 0 || self.slow == 0 {
            return bad("layer sizes must be positive");
        }
        if self.pb_dim == 0 {
            return bad("PB dimension must be at least 1");
        }
        if !(self.tau_fast >= 1.0 && self.tau_fast <= self.tau_middle && self.tau_middle <= self.tau_slow) {
            return bad("time constants must satisfy 1 <= tau_fast <= tau_middle <= tau_slow");
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out += self · x`
    #[inline]
    pub fn mul_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · d`
    #[inline]
    pub fn mul_t_acc(&self, d: &[f64], out: &mut [f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&di, row) in d.iter().zip(self.data.chunks_exact(self.cols)) {
            if di != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += di * w;
                }
            }
        }
    }

    /// `self += d · xᵀ`
    #[inline]
    pub fn add_outer(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(d.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (&di, row) in d.iter().zip(self.data.chunks_exact_mut(cols)) {
            if di != 0.0 {
                for (w, xv) in row.iter_mut().zip(x) {
                    *w += di * xv;
                }
            }
        }
    }

    fn shape_ok(&self, rows: usize, cols: usize) -> bool {
        self.rows == rows && self.cols == cols && self.data.len() == rows * cols
    }
}

/// Four-lane dot product; fixed summation order keeps results reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Weights and biases shared by all training patterns.
///
/// Naming is `<target>_<source>`: `fast_mid` carries middle-layer activity into the fast layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub fast_in: Matrix,
    pub fast_fast: Matrix,
    pub fast_mid: Matrix,
    pub fast_pb: Matrix,
    pub fast_bias: Vec<f64>,
    pub mid_fast: Matrix,
    pub mid_mid: Matrix,
    pub mid_slow: Matrix,
    pub mid_pb: Matrix,
    pub mid_bias: Vec<f64>,
    pub slow_mid: Matrix,
    pub slow_slow: Matrix,
    pub slow_pb: Matrix,
    pub slow_bias: Vec<f64>,
    pub out_fast: Matrix,
    pub out_bias: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 16] = [
    "fast_in",
    "fast_fast",
    "fast_mid",
    "fast_pb",
    "fast_bias",
    "mid_fast",
    "mid_mid",
    "mid_slow",
    "mid_pb",
    "mid_bias",
    "slow_mid",
    "slow_slow",
    "slow_pb",
    "slow_bias",
    "out_fast",
    "out_bias",
];

impl Weights {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let (io, f, m, s, p) = (spec.io_width(), spec.fast, spec.middle, spec.slow, spec.pb_dim);
        Self {
            fast_in: Matrix::zeros(f, io),
            fast_fast: Matrix::zeros(f, f),
            fast_mid: Matrix::zeros(f, m),
            fast_pb: Matrix::zeros(f, p),
            fast_bias: vec![0.0; f],
            mid_fast: Matrix::zeros(m, f),
            mid_mid: Matrix::zeros(m, m),
            mid_slow: Matrix::zeros(m, s),
            mid_pb: Matrix::zeros(m, p),
            mid_bias: vec![0.0; m],
            slow_mid: Matrix::zeros(s, m),
            slow_slow: Matrix::zeros(s, s),
            slow_pb: Matrix::zeros(s, p),
            slow_bias: vec![0.0; s],
            out_fast: Matrix::zeros(io, f),
            out_bias: vec![0.0; io],
        }
    }

    /// Uniform in `±scale/√fan_in` per target layer, biases zero.
    pub fn random<R: Rng>(spec: &NetworkSpec, scale: f64, rng: &mut R) -> Self {
        let (io, f, m, s, p) = (spec.io_width(), spec.fast, spec.middle, spec.slow, spec.pb_dim);
        let bound = |fan_in: usize| scale / (fan_in as f64).sqrt();
        let bf = bound(io + f + m + p);
        let bm = bound(f + m + s + p);
        let bs = bound(m + s + p);
        let bo = bound(f);
        Self {
            fast_in: Matrix::uniform(f, io, bf, rng),
            fast_fast: Matrix::uniform(f, f, bf, rng),
            fast_mid: Matrix::uniform(f, m, bf, rng),
            fast_pb: Matrix::uniform(f, p, bf, rng),
            fast_bias: vec![0.0; f],
            mid_fast: Matrix::uniform(m, f, bm, rng),
            mid_mid: Matrix::uniform(m, m, bm, rng),
            mid_slow: Matrix::uniform(m, s, bm, rng),
            mid_pb: Matrix::uniform(m, p, bm, rng),
            mid_bias: vec![0.0; m],
            slow_mid: Matrix::uniform(s, m, bs, rng),
            slow_slow: Matrix::uniform(s, s, bs, rng),
            slow_pb: Matrix::uniform(s, p, bs, rng),
            slow_bias: vec![0.0; s],
            out_fast: Matrix::uniform(io, f, bo, rng),
            out_bias: vec![0.0; io],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 16] {
        [
            &self.fast_in.data,
            &self.fast_fast.data,
            &self.fast_mid.data,
            &self.fast_pb.data,
            &self.fast_bias,
            &self.mid_fast.data,
            &self.mid_mid.data,
            &self.mid_slow.data,
            &self.mid_pb.data,
            &self.mid_bias,
            &self.slow_mid.data,
            &self.slow_slow.data,
            &self.slow_pb.data,
            &self.slow_bias,
            &self.out_fast.data,
            &self.out_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            &mut self.fast_in.data,
            &mut self.fast_fast.data,
            &mut self.fast_mid.data,
            &mut self.fast_pb.data,
            &mut self.fast_bias,
            &mut self.mid_fast.data,
            &mut self.mid_mid.data,
            &mut self.mid_slow.data,
            &mut self.mid_pb.data,
            &mut self.mid_bias,
            &mut self.slow_mid.data,
            &mut self.slow_slow.data,
            &mut self.slow_pb.data,
            &mut self.slow_bias,
            &mut self.out_fast.data,
            &mut self.out_bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, tensor by tensor in a fixed order.
    pub fn add_assign(&mut self, other: &Weights) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let (io, f, m, s, p) = (spec.io_width(), spec.fast, spec.middle, spec.slow, spec.pb_dim);
        let ok = self.fast_in.shape_ok(f, io)
            && self.fast_fast.shape_ok(f, f)
            && self.fast_mid.shape_ok(f, m)
            && self.fast_pb.shape_ok(f, p)
            && self.fast_bias.len() == f
            && self.mid_fast.shape_ok(m, f)
            && self.mid_mid.shape_ok(m, m)
            && self.mid_slow.shape_ok(m, s)
            && self.mid_pb.shape_ok(m, p)
            && self.mid_bias.len() == m
            && self.slow_mid.shape_ok(s, m)
            && self.slow_slow.shape_ok(s, s)
            && self.slow_pb.shape_ok(s, p)
            && self.slow_bias.len() == s
            && self.out_fast.shape_ok(io, f)
            && self.out_bias.len() == io;
        if !ok {
            return Err(Error::ShapeMismatch(
                "weight shapes do not match the network spec".into(),
            ));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite weight".into()));
        }
        Ok(())
    }
}

/// Learned PB internal states, one vector per training pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbTable {
    pub labels: Vec<String>,
    pub rho: Vec<Vec<f64>>,
}

impl PbTable {
    pub fn zeros(labels: Vec<String>, pb_dim: usize) -> Self {
        let rho = vec![vec![0.0; pb_dim]; labels.len()];
        Self { labels, rho }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn point(&self, pattern: usize) -> PbPoint {
        pb_activation(&self.rho[pattern])
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// PB activation vector; every component lies in `[-1, 1]`.
///
/// `tanh` keeps learned points strictly inside; the closed bounds admit the
/// endpoints of the exploration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PbPoint(Vec<f64>);

impl PbPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "PB components must lie in [-1, 1], got {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Component-wise `tanh(rho)`.
pub fn pb_activation(rho: &[f64]) -> PbPoint {
    PbPoint(rho.iter().map(|r| r.tanh()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub weights: Weights,
    pub pb: PbTable,
}

impl NetworkParams {
    pub fn new(spec: NetworkSpec, weights: Weights, pb: PbTable) -> Result<Self> {
        spec.validate()?;
        weights.check(&spec)?;
        if pb.labels.len() != pb.rho.len()
            || pb
                .rho
                .iter()
                .any(|r| r.len() != spec.pb_dim || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::ShapeMismatch(
                "PB table does not match the network spec".into(),
            ));
        }
        Ok(Self { spec, weights, pb })
    }

    /// Cheap structural check for parameters that came from disk.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.weights.check(&self.spec)?;
        if self.pb.labels.len() != self.pb.rho.len()
            || self.pb.rho.iter().any(|r| r.len() != self.spec.pb_dim)
        {
            return Err(Error::ShapeMismatch(
                "PB table does not match the network spec".into(),
            ));
        }
        Ok(())
    }

    pub fn init_state(&self) -> NetworkState {
        NetworkState::new(&self.spec)
    }

    /// Advance one time step from `prev`, writing into `next`.
    ///
    /// `input` is the proprioceptive frame held by the input buffer; the output
    /// layer reads the freshly updated fast layer, so `next.out_y` predicts the
    /// frame after `input`.
    pub fn step_into(
        &self,
        prev: &NetworkState,
        input: &[f64],
        pb: &PbPoint,
        next: &mut NetworkState,
    ) -> Result<()> {
        let spec = &self.spec;
        if input.len() != spec.io_width() || pb.dim() != spec.pb_dim {
            return Err(Error::ShapeMismatch(format!(
                "input width {} (expected {}), PB dim {} (expected {})",
                input.len(),
                spec.io_width(),
                pb.dim(),
                spec.pb_dim
            )));
        }
        if prev.fast_u.len() != spec.fast
            || prev.mid_u.len() != spec.middle
            || prev.slow_u.len() != spec.slow
            || prev.out_u.len() != spec.io_width()
        {
            return Err(Error::ShapeMismatch(
                "state does not match the network spec".into(),
            ));
        }
        next.resize_like(prev);
        self.step_unchecked(prev, input, pb.as_slice(), next);
        Ok(())
    }

    pub(crate) fn step_unchecked(
        &self,
        prev: &NetworkState,
        input: &[f64],
        pb: &[f64],
        next: &mut NetworkState,
    ) {
        let w = &self.weights;
        let spec = &self.spec;

        next.input.copy_from_slice(input);

        let net = &mut next.fast_u;
        net.copy_from_slice(&w.fast_bias);
        w.fast_in.mul_acc(input, net);
        w.fast_fast.mul_acc(&prev.fast_y, net);
        w.fast_mid.mul_acc(&prev.mid_y, net);
        w.fast_pb.mul_acc(pb, net);
        integrate(&prev.fast_u, net, spec.tau_fast);

        let net = &mut next.mid_u;
        net.copy_from_slice(&w.mid_bias);
        w.mid_fast.mul_acc(&prev.fast_y, net);
        w.mid_mid.mul_acc(&prev.mid_y, net);
        w.mid_slow.mul_acc(&prev.slow_y, net);
        w.mid_pb.mul_acc(pb, net);
        integrate(&prev.mid_u, net, spec.tau_middle);

        let net = &mut next.slow_u;
        net.copy_from_slice(&w.slow_bias);
        w.slow_mid.mul_acc(&prev.mid_y, net);
        w.slow_slow.mul_acc(&prev.slow_y, net);
        w.slow_pb.mul_acc(pb, net);
        integrate(&prev.slow_u, net, spec.tau_slow);

        for (y, u) in next.fast_y.iter_mut().zip(&next.fast_u) {
            *y = u.tanh();
        }
        for (y, u) in next.mid_y.iter_mut().zip(&next.mid_u) {
            *y = u.tanh();
        }
        for (y, u) in next.slow_y.iter_mut().zip(&next.slow_u) {
            *y = u.tanh();
        }

        // Output layer has tau = 1: its internal state is the net input.
        next.out_u.copy_from_slice(&w.out_bias);
        w.out_fast.mul_acc(&next.fast_y, &mut next.out_u);
        softmax_groups(&next.out_u, spec.units, &mut next.out_y);

        next.t = prev.t + 1;
    }

    pub fn step(&self, state: &NetworkState, input: &[f64], pb: &PbPoint) -> Result<NetworkState> {
        let mut next = state.clone();
        self.step_into(state, input, pb, &mut next)?;
        Ok(next)
    }

    /// Run `steps` steps. The first step consumes `initial_input`; step `t > 0`
    /// consumes `gamma · prediction[t-1] + (1 - gamma) · teacher[t]`.
    pub fn generate(
        &self,
        pb: &PbPoint,
        steps: usize,
        gamma: f64,
        initial_input: &[f64],
        teacher: Option<&SoftmaxSequence>,
    ) -> Result<(SoftmaxSequence, NetworkState)> {
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "generation needs at least one step".into(),
            ));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "closed-loop ratio {gamma} outside [0, 1]"
            )));
        }
        let width = self.spec.io_width();
        if initial_input.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "initial input width {} != {width}",
                initial_input.len()
            )));
        }
        if let Some(t) = teacher {
            if t.width() != width || t.len() < steps {
                return Err(Error::ShapeMismatch(format!(
                    "teacher of {} × {} cannot drive {steps} steps of width {width}",
                    t.len(),
                    t.width()
                )));
            }
        } else if gamma < 1.0 {
            return Err(Error::MissingTeacher(gamma));
        }

        let mut out = SoftmaxSequence::with_capacity(self.spec.units, width, steps);
        let mut state = self.init_state();
        let mut next = state.clone();
        let mut input = initial_input.to_vec();
        for t in 0..steps {
            if t > 0 {
                mix_into(teacher.map(|s| s.frame(t)), &state.out_y, gamma, &mut input)?;
            }
            self.step_into(&state, &input, pb, &mut next)?;
            std::mem::swap(&mut state, &mut next);
            out.push_frame(&state.out_y);
        }
        Ok((out, state))
    }
}

/// Per-layer internal states `u` and activations `y` at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub input: Vec<f64>,
    pub fast_u: Vec<f64>,
    pub fast_y: Vec<f64>,
    pub mid_u: Vec<f64>,
    pub mid_y: Vec<f64>,
    pub slow_u: Vec<f64>,
    pub slow_y: Vec<f64>,
    pub out_u: Vec<f64>,
    pub out_y: Vec<f64>,
    pub t: usize,
}

impl NetworkState {
    /// All internal states zero; output blocks uniform.
    pub fn new(spec: &NetworkSpec) -> Self {
        let io = spec.io_width();
        Self {
            input: vec![0.0; io],
            fast_u: vec![0.0; spec.fast],
            fast_y: vec![0.0; spec.fast],
            mid_u: vec![0.0; spec.middle],
            mid_y: vec![0.0; spec.middle],
            slow_u: vec![0.0; spec.slow],
            slow_y: vec![0.0; spec.slow],
            out_u: vec![0.0; io],
            out_y: vec![1.0 / spec.units as f64; io],
            t: 0,
        }
    }

    fn resize_like(&mut self, other: &NetworkState) {
        self.input.resize(other.input.len(), 0.0);
        self.fast_u.resize(other.fast_u.len(), 0.0);
        self.fast_y.resize(other.fast_y.len(), 0.0);
        self.mid_u.resize(other.mid_u.len(), 0.0);
        self.mid_y.resize(other.mid_y.len(), 0.0);
        self.slow_u.resize(other.slow_u.len(), 0.0);
        self.slow_y.resize(other.slow_y.len(), 0.0);
        self.out_u.resize(other.out_u.len(), 0.0);
        self.out_y.resize(other.out_y.len(), 0.0);
    }
}

/// `(1 - 1/tau) · prev + (1/tau) · net`
#[inline]
pub fn leaky_update(prev: f64, net: f64, tau: f64) -> f64 {
    (1.0 - 1.0 / tau) * prev + (1.0 / tau) * net
}

/// Overwrite `net` with the leaky-integrated internal state.
#[inline]
fn integrate(prev: &[f64], net: &mut [f64], tau: f64) {
    let keep = 1.0 - 1.0 / tau;
    let gain = 1.0 / tau;
    for (n, p) in net.iter_mut().zip(prev) {
        *n = keep * p + gain * *n;
    }
}

/// Softmax over each contiguous block of `units` entries.
pub fn softmax_groups(u: &[f64], units: usize, y: &mut [f64]) {
    for (ub, yb) in u.chunks_exact(units).zip(y.chunks_exact_mut(units)) {
        let top = ub.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (yv, uv) in yb.iter_mut().zip(ub) {
            *yv = (uv - top).exp();
            sum += *yv;
        }
        for yv in yb.iter_mut() {
            *yv /= sum;
        }
    }
}

/// `gamma · prediction + (1 - gamma) · teacher`; the teacher may be omitted only when `gamma == 1`.
pub fn mix_input(teacher: Option<&[f64]>, prediction: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; prediction.len()];
    mix_into(teacher, prediction, gamma, &mut out)?;
    Ok(out)
}

fn mix_into(teacher: Option<&[f64]>, prediction: &[f64], gamma: f64, out: &mut [f64]) -> Result<()> {
    match teacher {
        Some(teacher) => {
            if teacher.len() != prediction.len() || out.len() != prediction.len() {
                return Err(Error::ShapeMismatch(format!(
                    "teacher width {} != prediction width {}",
                    teacher.len(),
                    prediction.len()
                )));
            }
            let keep = 1.0 - gamma;
            for ((o, p), x) in out.iter_mut().zip(prediction).zip(teacher) {
                *o = gamma * p + keep * x;
            }
        }
        None if gamma >= 1.0 => out.copy_from_slice(prediction),
        None => return Err(Error::MissingTeacher(gamma)),
    }
    Ok(())
}
