//! Supervised training: KL prediction error, BPTT and Adam.
//!
//! All patterns share weights and biases; each pattern owns its PB internal
//! state `rho`. Every epoch is one full-batch step: per-pattern gradients are
//! computed independently (possibly in parallel) and summed in pattern order.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, FORMAT};
use crate::codec::{CodecSpec, DEFAULT_SIGMA};
use crate::dataset::{training_stats, TrainingSet};
use crate::error::{Error, Result};
use crate::network::{pb_activation, NetworkParams, NetworkSpec, NetworkState, PbTable, Weights};
use crate::parallel::Exec;
use crate::trajectory::SoftmaxSequence;

/// Predictions are floored here inside the logarithm.
pub const PREDICTION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Closed-loop ratio: weight of the network's own prediction in the next input.
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Epochs between progress callbacks that carry the best-so-far checkpoint.
    pub checkpoint_interval: usize,
    /// Weight init bound is `init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    /// Softmax codec shape parameter.
    pub sigma: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            epochs: 100_000,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_interval: 1000,
            init_scale: 1.0,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1]", self.gamma));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        if !(self.sigma > 0.0) || !(self.init_scale >= 0.0) {
            return bad("sigma must be positive and init_scale non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.loss)
    }

    /// `epoch,loss,seconds` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,seconds\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.epoch, p.loss, p.seconds));
        }
        s
    }
}

/// Sum over steps and output neurons of `target · ln(target / prediction)`.
pub fn kl_loss(prediction: &SoftmaxSequence, target: &SoftmaxSequence) -> Result<f64> {
    if prediction.len() != target.len() || prediction.width() != target.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {} × {} vs target {} × {}",
            prediction.len(),
            prediction.width(),
            target.len(),
            target.width()
        )));
    }
    Ok(prediction
        .frames()
        .zip(target.frames())
        .map(|(y, x)| kl_frame(x, y))
        .sum())
}

#[inline]
fn kl_frame(target: &[f64], prediction: &[f64]) -> f64 {
    target
        .iter()
        .zip(prediction)
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, &y)| x * (x / y.max(PREDICTION_FLOOR)).ln())
        .sum()
}

/// Gradient of one pattern's loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternGradients {
    pub loss: f64,
    pub weights: Weights,
    pub rho: Vec<f64>,
}

/// Gradient of the summed loss over all patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Weights,
    pub rho: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &NetworkParams) -> Self {
        Self {
            weights: Weights::zeros(&params.spec),
            rho: vec![vec![0.0; params.spec.pb_dim]; params.pb.len()],
        }
    }
}

/// Forward pass over `target` with closed-loop ratio `gamma`, returning the
/// recorded states (index 0 is the initial state) and the loss.
///
/// Step `t` consumes `target[0]` when `t = 0`, otherwise
/// `gamma · prediction[t-1] + (1 - gamma) · target[t]`, and predicts `target[t+1]`.
fn forward_trace(
    params: &NetworkParams,
    pb: &[f64],
    target: &SoftmaxSequence,
    gamma: f64,
) -> (Vec<NetworkState>, f64) {
    let steps = target.len() - 1;
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(params.init_state());
    let mut input = target.frame(0).to_vec();
    let keep = 1.0 - gamma;
    let mut loss = 0.0;
    for t in 0..steps {
        let prev = &trace[t];
        if t > 0 {
            for ((i, p), x) in input.iter_mut().zip(&prev.out_y).zip(target.frame(t)) {
                *i = gamma * p + keep * x;
            }
        }
        let mut next = prev.clone();
        params.step_unchecked(prev, &input, pb, &mut next);
        loss += kl_frame(target.frame(t + 1), &next.out_y);
        trace.push(next);
    }
    (trace, loss)
}

/// Loss of one pattern under `gamma`, without gradients.
pub fn pattern_loss(
    params: &NetworkParams,
    pattern: usize,
    target: &SoftmaxSequence,
    gamma: f64,
) -> Result<f64> {
    check_pattern(params, pattern, target)?;
    let pb = pb_activation(&params.pb.rho[pattern]);
    Ok(forward_trace(params, pb.as_slice(), target, gamma).1)
}

fn check_pattern(params: &NetworkParams, pattern: usize, target: &SoftmaxSequence) -> Result<()> {
    if pattern >= params.pb.len() {
        return Err(Error::ShapeMismatch(format!(
            "pattern {pattern} out of range ({} PB vectors)",
            params.pb.len()
        )));
    }
    if target.width() != params.spec.io_width() || target.units() != params.spec.units {
        return Err(Error::ShapeMismatch(format!(
            "target width {} != network I/O width {}",
            target.width(),
            params.spec.io_width()
        )));
    }
    if target.len() < 2 {
        return Err(Error::ShapeMismatch("pattern needs at least two frames".into()));
    }
    Ok(())
}

/// Exact gradient of one pattern's KL loss with respect to all shared
/// weights and biases and that pattern's `rho`, by backpropagation through
/// time. With `gamma > 0` the error also flows back through the fed-back
/// predictions.
pub fn bptt_gradients(
    params: &NetworkParams,
    pattern: usize,
    target: &SoftmaxSequence,
    gamma: f64,
) -> Result<PatternGradients> {
    check_pattern(params, pattern, target)?;
    let spec = &params.spec;
    let w = &params.weights;
    let pb = pb_activation(&params.pb.rho[pattern]);
    let pb = pb.as_slice();
    let (trace, loss) = forward_trace(params, pb, target, gamma);
    let steps = trace.len() - 1;

    let mut g = Weights::zeros(spec);
    let mut g_pb = vec![0.0; spec.pb_dim];

    let (io, nf, nm, ns) = (spec.io_width(), spec.fast, spec.middle, spec.slow);
    let leak = |tau: f64| (1.0 - 1.0 / tau, 1.0 / tau);
    let (keep_f, gain_f) = leak(spec.tau_fast);
    let (keep_m, gain_m) = leak(spec.tau_middle);
    let (keep_s, gain_s) = leak(spec.tau_slow);

    // Error signals from step t+1, carried backwards.
    let mut du_f_next = vec![0.0; nf];
    let mut du_m_next = vec![0.0; nm];
    let mut du_s_next = vec![0.0; ns];
    let mut dnet_f_next = vec![0.0; nf];
    let mut dnet_m_next = vec![0.0; nm];
    let mut dnet_s_next = vec![0.0; ns];
    let mut g_in_next = vec![0.0; io];

    let mut g_out = vec![0.0; io];
    let mut du_o = vec![0.0; io];
    let mut gy_f = vec![0.0; nf];
    let mut gy_m = vec![0.0; nm];
    let mut gy_s = vec![0.0; ns];
    let mut dnet_f = vec![0.0; nf];
    let mut dnet_m = vec![0.0; nm];
    let mut dnet_s = vec![0.0; ns];
    let mut du_f = vec![0.0; nf];
    let mut du_m = vec![0.0; nm];
    let mut du_s = vec![0.0; ns];

    for k in (1..=steps).rev() {
        let cur = &trace[k];
        let prev = &trace[k - 1];
        let x = target.frame(k);

        // dE/dy at the output, plus the fed-back path into the next input.
        for j in 0..io {
            let y = cur.out_y[j];
            let direct = if x[j] > 0.0 && y >= PREDICTION_FLOOR {
                -x[j] / y
            } else {
                0.0
            };
            g_out[j] = direct + gamma * g_in_next[j];
        }
        for ((gb, yb), db) in g_out
            .chunks_exact(spec.units)
            .zip(cur.out_y.chunks_exact(spec.units))
            .zip(du_o.chunks_exact_mut(spec.units))
        {
            let inner: f64 = gb.iter().zip(yb).map(|(g, y)| g * y).sum();
            for ((d, g), y) in db.iter_mut().zip(gb).zip(yb) {
                *d = y * (g - inner);
            }
        }
        g.out_fast.add_outer(&du_o, &cur.fast_y);
        add(&mut g.out_bias, &du_o);

        gy_f.iter_mut().for_each(|v| *v = 0.0);
        w.out_fast.mul_t_acc(&du_o, &mut gy_f);
        w.fast_fast.mul_t_acc(&dnet_f_next, &mut gy_f);
        w.mid_fast.mul_t_acc(&dnet_m_next, &mut gy_f);

        gy_m.iter_mut().for_each(|v| *v = 0.0);
        w.fast_mid.mul_t_acc(&dnet_f_next, &mut gy_m);
        w.mid_mid.mul_t_acc(&dnet_m_next, &mut gy_m);
        w.slow_mid.mul_t_acc(&dnet_s_next, &mut gy_m);

        gy_s.iter_mut().for_each(|v| *v = 0.0);
        w.mid_slow.mul_t_acc(&dnet_m_next, &mut gy_s);
        w.slow_slow.mul_t_acc(&dnet_s_next, &mut gy_s);

        tanh_backward(
            &cur.fast_y,
            &gy_f,
            &du_f_next,
            keep_f,
            gain_f,
            &mut du_f,
            &mut dnet_f,
        );
        tanh_backward(
            &cur.mid_y,
            &gy_m,
            &du_m_next,
            keep_m,
            gain_m,
            &mut du_m,
            &mut dnet_m,
        );
        tanh_backward(
            &cur.slow_y,
            &gy_s,
            &du_s_next,
            keep_s,
            gain_s,
            &mut du_s,
            &mut dnet_s,
        );

        g.fast_in.add_outer(&dnet_f, &cur.input);
        g.fast_fast.add_outer(&dnet_f, &prev.fast_y);
        g.fast_mid.add_outer(&dnet_f, &prev.mid_y);
        g.fast_pb.add_outer(&dnet_f, pb);
        add(&mut g.fast_bias, &dnet_f);

        g.mid_fast.add_outer(&dnet_m, &prev.fast_y);
        g.mid_mid.add_outer(&dnet_m, &prev.mid_y);
        g.mid_slow.add_outer(&dnet_m, &prev.slow_y);
        g.mid_pb.add_outer(&dnet_m, pb);
        add(&mut g.mid_bias, &dnet_m);

        g.slow_mid.add_outer(&dnet_s, &prev.mid_y);
        g.slow_slow.add_outer(&dnet_s, &prev.slow_y);
        g.slow_pb.add_outer(&dnet_s, pb);
        add(&mut g.slow_bias, &dnet_s);

        w.fast_pb.mul_t_acc(&dnet_f, &mut g_pb);
        w.mid_pb.mul_t_acc(&dnet_m, &mut g_pb);
        w.slow_pb.mul_t_acc(&dnet_s, &mut g_pb);

        // The first input is the teacher frame alone; later inputs carry
        // gamma times the previous prediction.
        g_in_next.iter_mut().for_each(|v| *v = 0.0);
        if gamma != 0.0 && k > 1 {
            w.fast_in.mul_t_acc(&dnet_f, &mut g_in_next);
        }

        std::mem::swap(&mut du_f, &mut du_f_next);
        std::mem::swap(&mut du_m, &mut du_m_next);
        std::mem::swap(&mut du_s, &mut du_s_next);
        std::mem::swap(&mut dnet_f, &mut dnet_f_next);
        std::mem::swap(&mut dnet_m, &mut dnet_m_next);
        std::mem::swap(&mut dnet_s, &mut dnet_s_next);
    }

    let rho = g_pb.iter().zip(pb).map(|(g, p)| g * (1.0 - p * p)).collect();
    Ok(PatternGradients {
        loss,
        weights: g,
        rho,
    })
}

#[inline]
fn add(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `du = (1 - y²)·gy + keep·du_next`, `dnet = gain·du`.
#[inline]
fn tanh_backward(
    y: &[f64],
    gy: &[f64],
    du_next: &[f64],
    keep: f64,
    gain: f64,
    du: &mut [f64],
    dnet: &mut [f64],
) {
    for i in 0..y.len() {
        du[i] = (1.0 - y[i] * y[i]) * gy[i] + keep * du_next[i];
        dnet[i] = gain * du[i];
    }
}

/// Per-parameter Adam moments and step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

/// One Adam step with bias correction. Each pattern's `rho` receives only its own gradient.
pub fn adam_update(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    config: &TrainingConfig,
) -> Result<()> {
    if grads.rho.len() != params.pb.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rho gradients for {} patterns",
            grads.rho.len(),
            params.pb.len()
        )));
    }
    let mut targets: Vec<&mut [f64]> = params.weights.tensors_mut().into_iter().collect();
    targets.extend(params.pb.rho.iter_mut().map(Vec::as_mut_slice));
    let mut sources: Vec<&[f64]> = grads.weights.tensors().into_iter().collect();
    sources.extend(grads.rho.iter().map(Vec::as_slice));
    if targets.iter().zip(&sources).any(|(t, s)| t.len() != s.len()) {
        return Err(Error::ShapeMismatch(
            "gradient shapes do not match parameters".into(),
        ));
    }

    if state.first.is_empty() {
        state.first = targets.iter().map(|t| vec![0.0; t.len()]).collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let correct1 = 1.0 - b1.powi(state.step as i32);
    let correct2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in targets
        .into_iter()
        .zip(sources)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Loss and gradient summed over all patterns, reduced in pattern order.
pub fn batch_gradients(
    params: &NetworkParams,
    targets: &[SoftmaxSequence],
    gamma: f64,
    exec: Exec,
) -> Result<(f64, Gradients)> {
    let per_pattern = exec.map_indexed(targets.len(), |k| bptt_gradients(params, k, &targets[k], gamma));
    let mut total = Gradients::zeros(params);
    let mut loss = 0.0;
    for (k, pg) in per_pattern.into_iter().enumerate() {
        let pg = pg?;
        loss += pg.loss;
        total.weights.add_assign(&pg.weights);
        total.rho[k] = pg.rho;
    }
    Ok((loss, total))
}

/// Progress snapshot handed to the training callback.
pub struct Progress<'a> {
    pub epoch: usize,
    pub loss: f64,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Best-so-far checkpoint, present every `checkpoint_interval` epochs and on the last epoch.
    pub checkpoint: Option<&'a Checkpoint>,
}

pub fn train(
    set: &TrainingSet,
    spec: &NetworkSpec,
    config: &TrainingConfig,
) -> Result<(Checkpoint, LearningCurve)> {
    train_with(set, spec, config, Exec::default(), |_| {})
}

/// Full-batch training from a seeded initialisation. Returns the checkpoint
/// of the lowest-loss epoch and the complete learning curve.
pub fn train_with<F>(
    set: &TrainingSet,
    spec: &NetworkSpec,
    config: &TrainingConfig,
    exec: Exec,
    mut on_progress: F,
) -> Result<(Checkpoint, LearningCurve)>
where
    F: FnMut(&Progress<'_>),
{
    config.validate()?;
    spec.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if set.dims() != spec.joints {
        return Err(Error::DimensionMismatch(format!(
            "training data has {} joints, network expects {}",
            set.dims(),
            spec.joints
        )));
    }
    let codec = CodecSpec::from_training(set.trajectories(), spec.units, config.sigma)?;
    let stats = training_stats(set);
    let targets = set
        .trajectories()
        .map(|t| codec.encode_trajectory(t))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights = Weights::random(spec, config.init_scale, &mut rng);
    let pb = PbTable::zeros(set.labels().map(str::to_string).collect(), spec.pb_dim);
    let mut params = NetworkParams::new(spec.clone(), weights, pb)?;

    let mut checkpoint = Checkpoint {
        format: FORMAT.to_string(),
        params: params.clone(),
        codec,
        stats,
        config: config.clone(),
        epoch: 0,
        loss: f64::INFINITY,
        training: set.clone(),
    };
    let mut curve = LearningCurve::default();
    let mut adam = AdamState::default();
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        let (loss, grads) = batch_gradients(&params, &targets, config.gamma, exec)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        curve.points.push(CurvePoint {
            epoch,
            loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        // The loss was measured on the parameters before this epoch's update.
        if loss < checkpoint.loss {
            checkpoint.params.clone_from(&params);
            checkpoint.epoch = epoch;
            checkpoint.loss = loss;
        }
        adam_update(&mut params, &grads, &mut adam, config)?;

        let report = epoch % config.checkpoint_interval.max(1) == 0 || epoch == config.epochs;
        on_progress(&Progress {
            epoch,
            loss,
            best_epoch: checkpoint.epoch,
            best_loss: checkpoint.loss,
            checkpoint: report.then_some(&checkpoint),
        });
    }
    Ok((checkpoint, curve))
}

/// Mean KL per prediction step and joint group: the loss normalised by
/// `Σ_patterns (len - 1) × joints`.
pub fn mean_group_kl(loss: f64, set: &TrainingSet) -> f64 {
    let steps: usize = set.trajectories().map(|t| t.len() - 1).sum();
    loss / (steps * set.dims()) as f64
}
