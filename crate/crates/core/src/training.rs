//! Loss, exact backpropagation through spike times, Adam, and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Example;
use crate::network::{self, ForwardTrace, ModelSpec, NetworkModel, PulseTopology};
use crate::par::{self, Execution};
use crate::solver::clip;
use crate::SpikeTime;

/// Loss reported for an example whose target neuron never fires.
pub const SILENT_TARGET_LOSS: f64 = 20.0;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid training config: {0}")]
pub struct ConfigError(pub String);

/// Model and optimisation hyperparameters plus run control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub clip_derivative: f64,
    pub decay_constant: f64,
    pub fire_threshold: f64,
    pub learning_rate: f64,
    pub learning_rate_pulses: f64,
    pub n_hidden: Vec<usize>,
    pub n_pulses: usize,
    pub nonpulse_init_multiplier: f64,
    pub penalty_no_spike: f64,
    pub pulse_init_multiplier: f64,
    pub epochs: usize,
    pub seed: u64,
    pub update_only_on_error: bool,
    pub pulse_topology: PulseTopology,
}

impl TrainConfig {
    /// Defaults for the Boolean and circles tasks: a 2-neuron hidden layer and
    /// one pulse shared by every non-input neuron.
    pub fn boolean_default() -> Self {
        TrainConfig {
            batch_size: 1,
            clip_derivative: 100.0,
            decay_constant: 1.0,
            fire_threshold: 1.0,
            learning_rate: 0.001,
            learning_rate_pulses: 0.001,
            n_hidden: vec![2],
            n_pulses: 1,
            nonpulse_init_multiplier: 0.0,
            penalty_no_spike: 1.0,
            pulse_init_multiplier: 0.0,
            epochs: 100,
            seed: 0,
            update_only_on_error: true,
            pulse_topology: PulseTopology::Shared,
        }
    }

    /// The hyperparameters selected by search for MNIST.
    pub fn mnist_chosen() -> Self {
        TrainConfig {
            batch_size: 5,
            clip_derivative: 539.7,
            decay_constant: 0.181769,
            fire_threshold: 1.16732,
            learning_rate: 2.01864e-4,
            learning_rate_pulses: 5.95375e-2,
            n_hidden: vec![340],
            n_pulses: 10,
            nonpulse_init_multiplier: -0.275419,
            penalty_no_spike: 48.3748,
            pulse_init_multiplier: 7.83912,
            epochs: 20,
            seed: 0,
            update_only_on_error: false,
            pulse_topology: PulseTopology::PerLayer,
        }
    }

    pub fn model_spec(&self, n_inputs: usize, n_outputs: usize) -> ModelSpec {
        let mut layer_sizes = vec![n_inputs];
        layer_sizes.extend(&self.n_hidden);
        layer_sizes.push(n_outputs);
        ModelSpec {
            layer_sizes,
            n_pulses: self.n_pulses,
            topology: self.pulse_topology,
            nonpulse_init_multiplier: self.nonpulse_init_multiplier,
            pulse_init_multiplier: self.pulse_init_multiplier,
            tau: self.decay_constant,
            theta: self.fire_threshold,
            seed: self.seed,
        }
    }

    /// Basic sanity: positive sizes, rates, and constants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        for (name, v) in [
            ("clip_derivative", self.clip_derivative),
            ("decay_constant", self.decay_constant),
            ("fire_threshold", self.fire_threshold),
            ("learning_rate", self.learning_rate),
            ("learning_rate_pulses", self.learning_rate_pulses),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.penalty_no_spike >= 0.0 && self.penalty_no_spike.is_finite()) {
            return err(format!("penalty_no_spike must be >= 0, got {}", self.penalty_no_spike));
        }
        for (name, v) in [
            ("nonpulse_init_multiplier", self.nonpulse_init_multiplier),
            ("pulse_init_multiplier", self.pulse_init_multiplier),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        if let Some(i) = self.n_hidden.iter().position(|&n| n == 0) {
            return err(format!("hidden layer {i} has size 0"));
        }
        Ok(())
    }

    /// Names of parameters that fall outside the hyperparameter search ranges.
    pub fn out_of_search_range(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let within = |v: f64, lo: f64, hi: f64| (lo..=hi).contains(&v);
        if !(1..=1000).contains(&self.batch_size) {
            out.push("batch_size");
        }
        for (name, v, lo, hi) in [
            ("clip_derivative", self.clip_derivative, 1.0, 1000.0),
            ("decay_constant", self.decay_constant, 0.1, 2.0),
            ("fire_threshold", self.fire_threshold, 0.1, 1.5),
            ("learning_rate", self.learning_rate, 1e-5, 1.0),
            ("learning_rate_pulses", self.learning_rate_pulses, 1e-5, 1.0),
            ("nonpulse_init_multiplier", self.nonpulse_init_multiplier, -10.0, 10.0),
            ("penalty_no_spike", self.penalty_no_spike, 0.0, 100.0),
            ("pulse_init_multiplier", self.pulse_init_multiplier, -10.0, 10.0),
        ] {
            if !within(v, lo, hi) {
                out.push(name);
            }
        }
        if self.n_hidden.len() > 4 || self.n_hidden.iter().any(|n| !(2..=1000).contains(n)) {
            out.push("n_hidden");
        }
        if self.n_pulses > 10 {
            out.push("n_pulses");
        }
        out
    }
}

/// Softmax over negated output times and the cross-entropy against `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Zero for silent outputs.
    pub probabilities: Vec<f64>,
    pub target_silent: bool,
}

pub fn loss(outputs: &[SpikeTime], target: usize) -> LossReport {
    assert!(target < outputs.len(), "target {target} out of range");
    let t_min = outputs.iter().filter_map(|t| t.time()).fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = outputs
        .iter()
        .map(|t| t.time().map_or(0.0, |t| (t_min - t).exp()))
        .collect();
    let total: f64 = exps.iter().sum();
    let probabilities: Vec<f64> = if total > 0.0 {
        exps.iter().map(|e| e / total).collect()
    } else {
        exps
    };
    let target_silent = outputs[target].is_never();
    let loss = if target_silent {
        SILENT_TARGET_LOSS
    } else {
        // -ln p_target, computed without forming p.
        (outputs[target].as_f64() - t_min) + total.ln()
    };
    LossReport {
        loss,
        probabilities,
        target_silent,
    }
}

/// `dL/do_k`: `1 - p_k` for the target, `-p_k` otherwise, zero for silent
/// outputs. All zero when the target itself is silent.
pub fn loss_gradient(outputs: &[SpikeTime], target: usize) -> Vec<f64> {
    let report = loss(outputs, target);
    if report.target_silent {
        return vec![0.0; outputs.len()];
    }
    report
        .probabilities
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == target { 1.0 - p } else { -p })
        .collect()
}

/// Per-example loss gradients with the model's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    /// Same layout as each layer's weight matrix.
    pub d_weights: Vec<Vec<f64>>,
    /// One vector per pulse set.
    pub d_pulse_times: Vec<Vec<f64>>,
    pub d_input_times: Vec<f64>,
}

impl GradientTape {
    pub fn zeros(model: &NetworkModel) -> Self {
        GradientTape {
            d_weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            d_pulse_times: model.pulse_sets.iter().map(|p| vec![0.0; p.times.len()]).collect(),
            d_input_times: vec![0.0; model.n_inputs()],
        }
    }

    fn add_sparse(&mut self, model: &NetworkModel, g: &SparseGradient) {
        for (l, layer) in model.layers.iter().enumerate() {
            let dw = &mut self.d_weights[l];
            for &(idx, v) in &g.weights[l] {
                dw[idx] += v;
            }
            for &(col, penalty) in &g.silent[l] {
                for row in 0..layer.rows() {
                    dw[row * layer.n_out + col] -= penalty;
                }
            }
        }
        for (acc, d) in self.d_pulse_times.iter_mut().zip(&g.pulses) {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        for (a, v) in self.d_input_times.iter_mut().zip(&g.inputs) {
            *a += v;
        }
    }

    fn scale(&mut self, s: f64) {
        for v in self
            .d_weights
            .iter_mut()
            .chain(self.d_pulse_times.iter_mut())
            .flatten()
            .chain(self.d_input_times.iter_mut())
        {
            *v *= s;
        }
    }

    fn clear(&mut self) {
        self.scale(0.0);
    }
}

/// Gradient of one example. Weight entries are sparse; silent neurons are
/// recorded once per column and expanded when accumulated.
#[derive(Debug, Clone)]
struct SparseGradient {
    weights: Vec<Vec<(usize, f64)>>,
    silent: Vec<Vec<(usize, f64)>>,
    pulses: Vec<Vec<f64>>,
    inputs: Vec<f64>,
}

fn backward_sparse(
    model: &NetworkModel,
    trace: &ForwardTrace,
    d_outputs: Vec<f64>,
    clip_derivative: f64,
    penalty: f64,
) -> SparseGradient {
    let n_layers = model.layers.len();
    let mut weights = vec![Vec::new(); n_layers];
    let mut silent = vec![Vec::new(); n_layers];
    let mut pulses: Vec<Vec<f64>> = model.pulse_sets.iter().map(|p| vec![0.0; p.times.len()]).collect();
    let mut upstream = d_outputs;
    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let lt = &trace.layers[l];
        let set = model.pulse_set_of(l);
        let mut g_prev = vec![0.0; layer.n_in];
        for (col, rec) in lt.neurons.iter().enumerate() {
            if rec.t_out.is_never() {
                if penalty != 0.0 {
                    silent[l].push((col, penalty));
                }
                continue;
            }
            let g = upstream[col];
            if g == 0.0 {
                continue;
            }
            for arr in &lt.arrivals[..rec.n_causal] {
                let (d_w, d_t) = rec.partials(arr, layer.weight(arr.row, col), model.tau);
                weights[l].push((arr.row * layer.n_out + col, g * clip(d_w, clip_derivative)));
                let d_t = g * clip(d_t, clip_derivative);
                if arr.row < layer.n_in {
                    g_prev[arr.row] += d_t;
                } else {
                    pulses[set][arr.row - layer.n_in] += d_t;
                }
            }
        }
        upstream = g_prev;
    }
    SparseGradient {
        weights,
        silent,
        pulses,
        inputs: upstream,
    }
}

/// Exact loss gradient for one example: the softmax cross-entropy gradient
/// composed with clipped spike-time partials, plus `-penalty_no_spike` on
/// every incoming weight of each neuron that did not fire.
pub fn backward(model: &NetworkModel, trace: &ForwardTrace, target: usize, cfg: &TrainConfig) -> GradientTape {
    let d_out = loss_gradient(trace.outputs(), target);
    let sparse = backward_sparse(model, trace, d_out, cfg.clip_derivative, cfg.penalty_no_spike);
    let mut tape = GradientTape::zeros(model);
    tape.add_sparse(model, &sparse);
    tape
}

/// Gradient of the loss with respect to the input spike times only.
pub fn input_gradient(model: &NetworkModel, trace: &ForwardTrace, target: usize, clip_derivative: f64) -> Vec<f64> {
    let d_out = loss_gradient(trace.outputs(), target);
    backward_sparse(model, trace, d_out, clip_derivative, 0.0).inputs
}

/// Adam moments for every weight and pulse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m_weights: Vec<Vec<f64>>,
    pub v_weights: Vec<Vec<f64>>,
    pub m_pulses: Vec<Vec<f64>>,
    pub v_pulses: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &NetworkModel) -> Self {
        let w: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let p: Vec<Vec<f64>> = model.pulse_sets.iter().map(|s| vec![0.0; s.times.len()]).collect();
        AdamState {
            step: 0,
            m_weights: w.clone(),
            v_weights: w,
            m_pulses: p.clone(),
            v_pulses: p,
        }
    }

    pub fn matches(&self, model: &NetworkModel) -> bool {
        let shape = |v: &[Vec<f64>]| v.iter().map(Vec::len).collect::<Vec<_>>();
        let ws: Vec<usize> = model.layers.iter().map(|l| l.weights.len()).collect();
        let ps: Vec<usize> = model.pulse_sets.iter().map(|p| p.times.len()).collect();
        shape(&self.m_weights) == ws
            && shape(&self.v_weights) == ws
            && shape(&self.m_pulses) == ps
            && shape(&self.v_pulses) == ps
    }
}

#[inline]
fn adam_update(param: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    *param -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}

/// One Adam step. Weights use `learning_rate`, pulse times
/// `learning_rate_pulses`; pulse times are clamped to be non-negative.
pub fn adam_step(model: &mut NetworkModel, grad: &GradientTape, state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let c1 = 1.0 - BETA1.powf(state.step as f64);
    let c2 = 1.0 - BETA2.powf(state.step as f64);
    for (l, layer) in model.layers.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m_weights[l], &mut state.v_weights[l], &grad.d_weights[l]);
        for i in 0..layer.weights.len() {
            adam_update(&mut layer.weights[i], &mut m[i], &mut v[i], g[i], cfg.learning_rate, c1, c2);
        }
    }
    for (s, set) in model.pulse_sets.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m_pulses[s], &mut state.v_pulses[s], &grad.d_pulse_times[s]);
        for i in 0..set.times.len() {
            adam_update(&mut set.times[i], &mut m[i], &mut v[i], g[i], cfg.learning_rate_pulses, c1, c2);
            set.times[i] = set.times[i].max(0.0);
        }
    }
}

/// Per-epoch summary; one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub mean_hidden_spike_time: f64,
    pub mean_first_output_time: f64,
    pub fraction_output_before_mean_hidden: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,split,accuracy,mean_loss,mean_hidden_spike_time,mean_first_output_time,fraction_output_before_mean_hidden";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.accuracy,
            self.mean_loss,
            self.mean_hidden_spike_time,
            self.mean_first_output_time,
            self.fraction_output_before_mean_hidden
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(EpochMetrics {
            epoch: f[0].parse().ok()?,
            split: f[1].to_string(),
            accuracy: f[2].parse().ok()?,
            mean_loss: f[3].parse().ok()?,
            mean_hidden_spike_time: f[4].parse().ok()?,
            mean_first_output_time: f[5].parse().ok()?,
            fraction_output_before_mean_hidden: f[6].parse().ok()?,
        })
    }
}

/// Summary of one forward pass, used for accuracy and regime statistics.
#[derive(Debug, Clone, Copy, Default)]
struct ExampleStats {
    correct: bool,
    loss: f64,
    hidden_sum: f64,
    hidden_count: usize,
    first_output: Option<f64>,
}

fn example_stats(trace: &ForwardTrace, label: usize) -> ExampleStats {
    let report = loss(trace.outputs(), label);
    let n = trace.spike_times.len();
    let (mut hidden_sum, mut hidden_count) = (0.0, 0);
    for t in trace.spike_times[1..n - 1].iter().flatten().filter_map(|t| t.time()) {
        hidden_sum += t;
        hidden_count += 1;
    }
    ExampleStats {
        correct: network::predict(trace.outputs()) == Ok(label),
        loss: report.loss,
        hidden_sum,
        hidden_count,
        first_output: trace.outputs().iter().filter_map(|t| t.time()).reduce(f64::min),
    }
}

#[derive(Default)]
struct StatsAccumulator {
    n: usize,
    correct: usize,
    loss: f64,
    hidden_sum: f64,
    hidden_count: usize,
    first_sum: f64,
    first_count: usize,
    before: usize,
}

impl StatsAccumulator {
    fn push(&mut self, s: &ExampleStats) {
        self.n += 1;
        self.correct += s.correct as usize;
        self.loss += s.loss;
        self.hidden_sum += s.hidden_sum;
        self.hidden_count += s.hidden_count;
        if let Some(t) = s.first_output {
            self.first_sum += t;
            self.first_count += 1;
            if s.hidden_count > 0 && t < s.hidden_sum / s.hidden_count as f64 {
                self.before += 1;
            }
        }
    }

    fn finish(&self, epoch: usize, split: &str) -> EpochMetrics {
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        EpochMetrics {
            epoch,
            split: split.to_string(),
            accuracy: mean(self.correct as f64, self.n),
            mean_loss: mean(self.loss, self.n),
            mean_hidden_spike_time: mean(self.hidden_sum, self.hidden_count),
            mean_first_output_time: mean(self.first_sum, self.first_count),
            fraction_output_before_mean_hidden: mean(self.before as f64, self.n),
        }
    }
}

/// Shuffled visiting order for `epoch`. Depends only on the seed and epoch
/// number, so resumed runs see the same order.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass over `data` in shuffled mini-batches. Metrics are collected from
/// the forward passes made before each batch's update.
pub fn train_epoch(
    model: &mut NetworkModel,
    data: &[Example],
    cfg: &TrainConfig,
    state: &mut AdamState,
    epoch: usize,
    exec: Execution,
) -> EpochMetrics {
    assert!(!data.is_empty(), "empty training set");
    let order = epoch_order(data.len(), cfg.seed, epoch);
    let mut acc = StatsAccumulator::default();
    let mut batch_grad = GradientTape::zeros(model);
    for batch in order.chunks(cfg.batch_size.max(1)) {
        let frozen = &*model;
        let results = par::map(exec, batch, |&i| {
            let ex = &data[i];
            let trace = network::forward(frozen, &ex.input_times);
            let stats = example_stats(&trace, ex.label);
            let grad = if cfg.update_only_on_error && stats.correct {
                None
            } else {
                let d_out = loss_gradient(trace.outputs(), ex.label);
                Some(backward_sparse(frozen, &trace, d_out, cfg.clip_derivative, cfg.penalty_no_spike))
            };
            (stats, grad)
        });
        let mut any = false;
        for (stats, grad) in &results {
            acc.push(stats);
            if let Some(g) = grad {
                batch_grad.add_sparse(model, g);
                any = true;
            }
        }
        if any {
            batch_grad.scale(1.0 / batch.len() as f64);
            adam_step(model, &batch_grad, state, cfg);
            batch_grad.clear();
        }
    }
    acc.finish(epoch, "train")
}

/// Forward-only pass over `data`.
pub fn evaluate(model: &NetworkModel, data: &[Example], epoch: usize, split: &str, exec: Execution) -> EpochMetrics {
    let stats = par::map(exec, data, |ex| {
        example_stats(&network::forward(model, &ex.input_times), ex.label)
    });
    let mut acc = StatsAccumulator::default();
    stats.iter().for_each(|s| acc.push(s));
    acc.finish(epoch, split)
}

/// A model with its config and optimiser, advancing one epoch at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: NetworkModel,
    pub config: TrainConfig,
    pub optimizer: AdamState,
    pub epochs_completed: usize,
    pub execution: Execution,
}

impl Trainer {
    pub fn new(config: TrainConfig, n_inputs: usize, n_outputs: usize) -> Result<Self, crate::network::ModelError> {
        let model = network::init_model(&config.model_spec(n_inputs, n_outputs))?;
        Ok(Self::from_parts(model, config, None, 0))
    }

    pub fn from_parts(model: NetworkModel, config: TrainConfig, optimizer: Option<AdamState>, epochs_completed: usize) -> Self {
        let optimizer = optimizer
            .filter(|s| s.matches(&model))
            .unwrap_or_else(|| AdamState::new(&model));
        Trainer {
            model,
            config,
            optimizer,
            epochs_completed,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Train one epoch; epochs are numbered from 1.
    pub fn run_epoch(&mut self, data: &[Example]) -> EpochMetrics {
        let epoch = self.epochs_completed + 1;
        let m = train_epoch(&mut self.model, data, &self.config, &mut self.optimizer, epoch, self.execution);
        self.epochs_completed = epoch;
        m
    }

    pub fn evaluate(&self, data: &[Example], split: &str) -> EpochMetrics {
        evaluate(&self.model, data, self.epochs_completed, split, self.execution)
    }
}
