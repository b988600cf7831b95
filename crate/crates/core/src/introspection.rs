//! Diagnostics: dense membrane traces, spike rasters, the slow/fast regime
//! label, and input optimisation ("dreaming") towards a target class.

use std::fmt::Write as _;

use crate::network::{self, NetworkModel};
use crate::solver::SpikeEvent;
use crate::training::{self, EpochMetrics};
use crate::SpikeTime;

/// Sampling grid `t_start, t_start + dt, ...` up to and including the first
/// sample at or past `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl GridSpec {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Self {
        assert!(dt > 0.0 && t_end >= t_start, "bad grid [{t_start}, {t_end}] / {dt}");
        GridSpec { t_start, t_end, dt }
    }

    pub fn len(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).ceil() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceGrid {
    pub grid: GridSpec,
    pub potential: Vec<f64>,
}

/// Re-anchor each event's decay factor exactly this often; in between it is
/// advanced by multiplication.
const REANCHOR: usize = 1024;

/// Evaluates the summed alpha kernels sample by sample, keeping one running
/// decay factor per active event.
fn for_each_sample(events: &[SpikeEvent], tau: f64, grid: GridSpec, mut f: impl FnMut(usize, f64) -> bool) {
    let mut evs: Vec<(f64, f64)> = events
        .iter()
        .filter_map(|e| e.time.time().map(|t| (t, e.weight)))
        .collect();
    evs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let step = (-tau * grid.dt).exp();
    let mut decay: Vec<f64> = Vec::with_capacity(evs.len());
    let mut active = 0;
    for k in 0..grid.len() {
        let t = grid.time(k);
        if k % REANCHOR == 0 {
            for (d, &(ti, _)) in decay.iter_mut().zip(&evs) {
                *d = (-tau * (t - ti)).exp();
            }
        } else {
            decay.iter_mut().for_each(|d| *d *= step);
        }
        while active < evs.len() && evs[active].0 <= t {
            decay.push((-tau * (t - evs[active].0)).exp());
            active += 1;
        }
        let v: f64 = evs[..active]
            .iter()
            .zip(&decay)
            .map(|(&(ti, w), d)| w * (t - ti) * d)
            .sum();
        if !f(k, v) {
            return;
        }
    }
}

/// Membrane potential on a grid and the first sample where it goes from
/// below `theta` to at least `theta`.
pub fn simulate_dense(events: &[SpikeEvent], tau: f64, theta: f64, grid: GridSpec) -> (TraceGrid, SpikeTime) {
    let mut potential = Vec::with_capacity(grid.len());
    let mut crossing = SpikeTime::NEVER;
    let mut prev_below = true;
    for_each_sample(events, tau, grid, |k, v| {
        if crossing.is_never() && prev_below && v >= theta {
            crossing = SpikeTime::at(grid.time(k));
        }
        prev_below = v < theta;
        potential.push(v);
        true
    });
    (TraceGrid { grid, potential }, crossing)
}

/// First up-crossing only, stopping at it without storing samples.
pub fn first_crossing_dense(events: &[SpikeEvent], tau: f64, theta: f64, grid: GridSpec) -> SpikeTime {
    let mut crossing = SpikeTime::NEVER;
    for_each_sample(events, tau, grid, |k, v| {
        if v >= theta {
            crossing = SpikeTime::at(grid.time(k));
            false
        } else {
            true
        }
    });
    crossing
}

/// All presynaptic events (neurons and pulses) reaching `neuron` of non-input
/// layer `layer` in a forward pass.
pub fn neuron_inputs(model: &NetworkModel, trace: &network::ForwardTrace, layer: usize, neuron: usize) -> Vec<SpikeEvent> {
    let l = &model.layers[layer];
    trace.layers[layer]
        .arrivals
        .iter()
        .map(|a| SpikeEvent::new(a.time, l.weight(a.row, neuron), a.row))
        .collect()
}

/// CSV with a time column and one potential column per named trace. All
/// traces must share a grid.
pub fn traces_csv(traces: &[(String, TraceGrid)]) -> String {
    let mut out = String::from("time");
    for (name, _) in traces {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let Some((_, first)) = traces.first() else {
        return out;
    };
    for k in 0..first.potential.len() {
        let _ = write!(out, "{}", first.grid.time(k));
        for (_, tr) in traces {
            let _ = write!(out, ",{}", tr.potential[k]);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterRecord {
    pub layer: usize,
    pub neuron: usize,
    pub is_pulse: bool,
    pub time: f64,
}

/// Every spike of a forward pass, sorted by time. Layer 0 is the input.
/// Pulses are listed with the layer whose neurons they accompany as
/// presynaptic sources: a per-layer set feeding the `l`-th weight layer
/// appears at layer `l`; a shared set appears once, at layer 0.
pub fn export_raster(model: &NetworkModel, trace: &network::ForwardTrace) -> Vec<RasterRecord> {
    let mut out = Vec::new();
    for (layer, times) in trace.spike_times.iter().enumerate() {
        for (neuron, t) in times.iter().enumerate() {
            if let Some(time) = t.time() {
                out.push(RasterRecord {
                    layer,
                    neuron,
                    is_pulse: false,
                    time,
                });
            }
        }
    }
    for (set, pulses) in model.pulse_sets.iter().enumerate() {
        for (neuron, &time) in pulses.times.iter().enumerate() {
            out.push(RasterRecord {
                layer: set,
                neuron,
                is_pulse: true,
                time,
            });
        }
    }
    out.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.layer.cmp(&b.layer))
            .then(a.is_pulse.cmp(&b.is_pulse))
            .then(a.neuron.cmp(&b.neuron))
    });
    out
}

pub fn raster_csv(records: &[RasterRecord]) -> String {
    let mut out = String::from("layer,neuron,is_pulse,time\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.layer, r.neuron, r.is_pulse as u8, r.time);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Slow,
    Fast,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Slow => "slow",
            Regime::Fast => "fast",
        })
    }
}

/// Fast when the first output spike comes strictly before the mean hidden
/// spike. Missing statistics (NaN) read as slow.
pub fn regime(mean_first_output: f64, mean_hidden: f64) -> Regime {
    if mean_first_output < mean_hidden {
        Regime::Fast
    } else {
        Regime::Slow
    }
}

pub fn regime_indicator(metrics: &[EpochMetrics]) -> Vec<Regime> {
    metrics
        .iter()
        .map(|m| regime(m.mean_first_output_time, m.mean_hidden_spike_time))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DreamConfig {
    pub target_class: usize,
    pub learning_rate: f64,
    pub stop_streak: usize,
    pub max_iterations: usize,
    pub clip_derivative: f64,
}

impl DreamConfig {
    pub fn new(target_class: usize) -> Self {
        DreamConfig {
            target_class,
            learning_rate: 0.1,
            stop_streak: 10,
            max_iterations: 10_000,
            clip_derivative: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dream {
    pub image: Vec<SpikeTime>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DreamError {
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("target class {target} out of range for {outputs} outputs")]
    BadTarget { target: usize, outputs: usize },
}

/// Gradient descent on the input spike times, from an all-zero image, until
/// the model predicts the target `stop_streak` times in a row. Times stay
/// non-negative.
pub fn dream(model: &NetworkModel, cfg: &DreamConfig) -> Result<Dream, DreamError> {
    if cfg.target_class >= model.n_outputs() {
        return Err(DreamError::BadTarget {
            target: cfg.target_class,
            outputs: model.n_outputs(),
        });
    }
    let mut image = vec![0.0f64; model.n_inputs()];
    let mut streak = 0;
    for it in 0..cfg.max_iterations {
        let input: Vec<SpikeTime> = image.iter().map(|&t| SpikeTime::at(t)).collect();
        let trace = network::forward(model, &input);
        if network::predict(trace.outputs()) == Ok(cfg.target_class) {
            streak += 1;
            if streak >= cfg.stop_streak {
                return Ok(Dream {
                    image: input,
                    iterations: it + 1,
                });
            }
        } else {
            streak = 0;
        }
        let grad = training::input_gradient(model, &trace, cfg.target_class, cfg.clip_derivative);
        for (t, g) in image.iter_mut().zip(grad) {
            *t = (*t - cfg.learning_rate * g).max(0.0);
        }
    }
    Err(DreamError::NoConvergence(cfg.max_iterations))
}

/// Binary PGM (P5) of a square image; early spikes are bright.
pub fn pgm(image: &[SpikeTime]) -> Vec<u8> {
    let side = (image.len() as f64).sqrt() as usize;
    assert_eq!(side * side, image.len(), "image is not square");
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(image.iter().map(|t| {
        let t = if t.is_never() { 1.0 } else { t.as_f64().clamp(0.0, 1.0) };
        (255.0 * (1.0 - t)).round() as u8
    }));
    out
}

/// Spike times as text, one row per image row.
pub fn times_text(image: &[SpikeTime], row_len: usize) -> String {
    let mut out = String::new();
    for row in image.chunks(row_len.max(1)) {
        let cells: Vec<String> = row.iter().map(SpikeTime::to_string).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}
