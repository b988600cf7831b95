//! Layered feedforward spiking networks with synchronisation pulses.
//!
//! Each non-input layer is fully connected to the previous layer's neurons and
//! to a set of pulses: input-independent spikes at trainable times. Pulse
//! weights live in the layer's weight matrix as extra rows after the neuron
//! rows, so a single gradient path serves both.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::solver::{self, Arrival, CausalSet, Crossing, SpikeEvent};
use crate::SpikeTime;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} spike times, network expects {expected}")]
    InputSize { expected: usize, got: usize },
}

/// How pulse sets are wired to layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseTopology {
    /// Each non-input layer has its own pulse set.
    #[default]
    PerLayer,
    /// One pulse set feeds every non-input neuron.
    Shared,
}

/// Trainable pulse spike times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSet {
    pub times: Vec<f64>,
}

impl PulseSet {
    /// `n` pulses evenly spread over the open interval (0, 1): `k / (n + 1)`.
    pub fn evenly_spaced(n: usize) -> Self {
        PulseSet {
            times: (1..=n).map(|k| k as f64 / (n + 1) as f64).collect(),
        }
    }
}

/// One fully connected layer. `weights` is row-major with
/// `n_in + n_pulses` rows (presynaptic neurons, then pulses) and `n_out`
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    pub n_in: usize,
    pub n_pulses: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_pulses: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_pulses,
            n_out,
            weights: vec![0.0; (n_in + n_pulses) * n_out],
        }
    }

    pub fn rows(&self) -> usize {
        self.n_in + self.n_pulses
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_out + col]
    }

    #[inline]
    pub fn weight_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.weights[row * self.n_out + col]
    }
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    n_in: usize,
    n_pulses: usize,
    n_out: usize,
    weights: Vec<Vec<f64>>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        let weights = l.weights.chunks(l.n_out.max(1)).map(<[f64]>::to_vec).collect();
        LayerRepr {
            n_in: l.n_in,
            n_pulses: l.n_pulses,
            n_out: l.n_out,
            weights,
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> Result<Self, String> {
        if r.weights.len() != r.n_in + r.n_pulses {
            return Err(format!(
                "layer has {} weight rows, expected {}",
                r.weights.len(),
                r.n_in + r.n_pulses
            ));
        }
        if let Some(bad) = r.weights.iter().find(|row| row.len() != r.n_out) {
            return Err(format!("weight row of length {}, expected {}", bad.len(), r.n_out));
        }
        Ok(Layer {
            n_in: r.n_in,
            n_pulses: r.n_pulses,
            n_out: r.n_out,
            weights: r.weights.into_iter().flatten().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    pub topology: PulseTopology,
    pub pulse_sets: Vec<PulseSet>,
    pub tau: f64,
    pub theta: f64,
}

/// Everything needed to initialise a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Input size, hidden sizes..., output size.
    pub layer_sizes: Vec<usize>,
    pub n_pulses: usize,
    pub topology: PulseTopology,
    pub nonpulse_init_multiplier: f64,
    pub pulse_init_multiplier: f64,
    pub tau: f64,
    pub theta: f64,
    pub seed: u64,
}

/// Glorot-style normal initialisation with a shifted mean:
/// `sigma = sqrt(2 / (fan_in + fan_out))`, `mu = multiplier * sigma`, with
/// separate multipliers for neuron and pulse rows. `fan_in` counts pulse rows.
pub fn init_model(spec: &ModelSpec) -> Result<NetworkModel, ModelError> {
    if spec.layer_sizes.len() < 2 {
        return Err(ModelError::InvalidSpec(
            "need at least an input and an output layer".into(),
        ));
    }
    if let Some(pos) = spec.layer_sizes.iter().position(|&s| s == 0) {
        return Err(ModelError::InvalidSpec(format!("layer {pos} has size 0")));
    }
    if !(spec.tau > 0.0) || !(spec.theta > 0.0) {
        return Err(ModelError::InvalidSpec(format!(
            "tau and theta must be positive (tau = {}, theta = {})",
            spec.tau, spec.theta
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layers = spec
        .layer_sizes
        .windows(2)
        .map(|pair| {
            let (n_in, n_out) = (pair[0], pair[1]);
            let mut layer = Layer::zeros(n_in, spec.n_pulses, n_out);
            let sigma = (2.0 / (layer.rows() + n_out) as f64).sqrt();
            let neuron = Normal::new(spec.nonpulse_init_multiplier * sigma, sigma).unwrap();
            let pulse = Normal::new(spec.pulse_init_multiplier * sigma, sigma).unwrap();
            for row in 0..layer.rows() {
                let dist = if row < n_in { &neuron } else { &pulse };
                for col in 0..n_out {
                    *layer.weight_mut(row, col) = dist.sample(&mut rng);
                }
            }
            layer
        })
        .collect::<Vec<_>>();
    let n_sets = match spec.topology {
        PulseTopology::PerLayer => layers.len(),
        PulseTopology::Shared => 1,
    };
    let model = NetworkModel {
        layers,
        topology: spec.topology,
        pulse_sets: vec![PulseSet::evenly_spaced(spec.n_pulses); n_sets],
        tau: spec.tau,
        theta: spec.theta,
    };
    model.validate()?;
    Ok(model)
}

impl NetworkModel {
    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Index into `pulse_sets` of the set feeding `layer`.
    pub fn pulse_set_of(&self, layer: usize) -> usize {
        match self.topology {
            PulseTopology::PerLayer => layer,
            PulseTopology::Shared => 0,
        }
    }

    pub fn pulses_of(&self, layer: usize) -> &[f64] {
        &self.pulse_sets[self.pulse_set_of(layer)].times
    }

    /// Number of trainable parameters (weights plus pulse times).
    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum::<usize>()
            + self.pulse_sets.iter().map(|p| p.times.len()).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.theta > 0.0 && self.theta.is_finite()) {
            return bad(format!("tau = {}, theta = {}", self.tau, self.theta));
        }
        let expected_sets = match self.topology {
            PulseTopology::PerLayer => self.layers.len(),
            PulseTopology::Shared => 1,
        };
        if self.pulse_sets.len() != expected_sets {
            return bad(format!(
                "{} pulse sets for {:?} topology over {} layers",
                self.pulse_sets.len(),
                self.topology,
                self.layers.len()
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.n_in == 0 || layer.n_out == 0 {
                return bad(format!("layer {i} has an empty side"));
            }
            if layer.weights.len() != layer.rows() * layer.n_out {
                return bad(format!("layer {i} weight matrix has wrong size"));
            }
            if i > 0 && layer.n_in != self.layers[i - 1].n_out {
                return bad(format!(
                    "layer {i} expects {} inputs, previous layer has {} neurons",
                    layer.n_in,
                    self.layers[i - 1].n_out
                ));
            }
            if self.pulses_of(i).len() != layer.n_pulses {
                return bad(format!("layer {i} pulse count mismatch"));
            }
            if layer.weights.iter().any(|w| !w.is_finite()) {
                return bad(format!("layer {i} has non-finite weights"));
            }
        }
        if self.pulse_sets.iter().flat_map(|p| &p.times).any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return bad("pulse times must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Solver state of one layer during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Presynaptic spikes (neurons and pulses), sorted by time. Rows index
    /// the layer's weight matrix.
    pub arrivals: Vec<Arrival>,
    /// One record per neuron; its causal set is `arrivals[..n_causal]`.
    pub neurons: Vec<Crossing>,
}

/// All spike times of one forward pass, plus the causal records needed for
/// backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `spike_times[0]` is the input; `spike_times[l + 1]` is layer `l`'s output.
    pub spike_times: Vec<Vec<SpikeTime>>,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    pub fn outputs(&self) -> &[SpikeTime] {
        self.spike_times.last().map_or(&[], Vec::as_slice)
    }

    /// Causal set of `neuron` in non-input layer `layer`, with sources named
    /// by weight-matrix row. Empty if the neuron did not fire.
    pub fn causal_set(&self, model: &NetworkModel, layer: usize, neuron: usize) -> CausalSet {
        let lt = &self.layers[layer];
        let rec = &lt.neurons[neuron];
        let events = if rec.t_out.is_never() {
            Vec::new()
        } else {
            lt.arrivals[..rec.n_causal]
                .iter()
                .map(|arr| SpikeEvent {
                    time: SpikeTime::at(arr.time),
                    weight: model.layers[layer].weight(arr.row, neuron),
                    source: arr.row,
                })
                .collect()
        };
        CausalSet {
            events,
            a: rec.a,
            b: rec.b,
        }
    }
}

/// Propagate input spike times through the network, layer by layer.
///
/// # Panics
/// If the input length does not match the model.
pub fn forward(model: &NetworkModel, input: &[SpikeTime]) -> ForwardTrace {
    assert_eq!(
        input.len(),
        model.n_inputs(),
        "input has {} spike times, network expects {}",
        input.len(),
        model.n_inputs()
    );
    let mut spike_times = Vec::with_capacity(model.layers.len() + 1);
    spike_times.push(input.to_vec());
    let mut layers = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let prev = &spike_times[l];
        let pulses = model.pulses_of(l);
        let mut arrivals: Vec<Arrival> = prev
            .iter()
            .enumerate()
            .filter_map(|(row, t)| t.time().map(|t| Arrival::new(t, row, model.tau)))
            .chain(
                pulses
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| Arrival::new(t, layer.n_in + k, model.tau)),
            )
            .collect();
        solver::sort_arrivals(&mut arrivals);
        let neurons: Vec<Crossing> = (0..layer.n_out)
            .map(|col| {
                solver::solve_sorted(&arrivals, |row| layer.weight(row, col), model.tau, model.theta)
            })
            .collect();
        spike_times.push(neurons.iter().map(|c| c.t_out).collect());
        layers.push(LayerTrace { arrivals, neurons });
    }
    ForwardTrace { spike_times, layers }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no output neuron fired")]
pub struct AllSilent;

/// Index of the first output neuron to fire; ties go to the lowest index.
pub fn predict(outputs: &[SpikeTime]) -> Result<usize, AllSilent> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in outputs.iter().enumerate() {
        if let Some(t) = t.time() {
            if best.is_none_or(|(_, b)| t < b) {
                best = Some((i, t));
            }
        }
    }
    best.map(|(i, _)| i).ok_or(AllSilent)
}
