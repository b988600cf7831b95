//! Spiking neural networks with alpha synaptic transfer and time-to-first-spike
//! coding.
//!
//! Every neuron fires at most once. Its spike time is the first rising crossing
//! of the firing threshold by a sum of alpha kernels `w (t - t_i) e^{-tau (t - t_i)}`,
//! which has a closed form through the principal branch of the Lambert W
//! function. Because the spike time is a differentiable function of the
//! presynaptic weights and spike times (for a fixed causal set), networks can
//! be trained end to end by backpropagation.
//!
//! ## Layout
//!
//! - [`math`]: Lambert W (principal branch) and the alpha kernel
//! - [`solver`]: single-neuron spike time, causal sets, exact partial derivatives
//! - [`network`]: layered model with synchronisation pulses, forward pass, prediction
//! - [`training`]: softmax/cross-entropy on negated spike times, backprop, Adam
//! - [`datasets`]: Boolean and circles generators, MNIST IDX loader
//! - [`approximator`]: constructive threshold gadgets, box detectors and
//!   piecewise-constant function approximators
//! - [`introspection`]: dense membrane traces, rasters, regime labels, input
//!   optimisation ("dreaming")
//! - [`checkpoint`]: JSON checkpoints of models, configs and optimizer state
//! - [`par`]: data-parallel helpers (rayon behind the `parallel` feature)

pub mod approximator;
pub mod checkpoint;
pub mod datasets;
pub mod introspection;
pub mod math;
pub mod network;
pub mod par;
pub mod solver;
mod spike;
pub mod training;

pub use checkpoint::Checkpoint;
pub use datasets::{Example, Task};
pub use network::{ForwardTrace, NetworkModel, PulseTopology};
pub use par::Execution;
pub use solver::{solve_spike_time, SpikeEvent, SpikeResult};
pub use spike::SpikeTime;
pub use training::{TrainConfig, Trainer};
