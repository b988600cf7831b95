//! Hand-built networks that decide interval membership through spike timing
//! and approximate Lipschitz functions as an output spike time.
//!
//! Building blocks:
//!
//! * a threshold gadget: one neuron that fires shortly after a nominal time
//!   iff its input spike is below (or above) a threshold time;
//! * a box detector: `2n` gadgets feeding a merge neuron that fires iff every
//!   input lies in its interval;
//! * an approximator: one box detector per grid cell, each timed to the
//!   target's minimum over its cell, all feeding a final neuron.
//!
//! A gadget combines an input/threshold spike pair of opposite weights `±w`
//! with a strong excitatory spike `v` at the nominal time and an inhibitory
//! spike `u` placed so that `v` and `u` alone peak just below threshold. The
//! pair's residual potential decides whether the neuron crosses.

use std::f64::consts::E;

use crate::math::lambert_w0;
use crate::network::{self, Layer, NetworkModel, PulseSet, PulseTopology};
use crate::SpikeTime;

/// Fraction of `theta tau e` used for the input pair weight.
const PAIR_WEIGHT: f64 = 0.9;
/// How far below threshold the unassisted `v`/`u` potential peaks, relative
/// to `theta`.
const PEAK_MARGIN: f64 = 1e-9;
/// Bounds on the threshold spike offset that makes boundary inputs count as
/// inside.
const MIN_OFFSET: f64 = 1e-8;
const MAX_OFFSET: f64 = 5e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("infeasible configuration: {0}")]
pub struct InfeasibleConfig(pub String);

fn infeasible<T>(msg: String) -> Result<T, InfeasibleConfig> {
    Err(InfeasibleConfig(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Fire iff `t_i <= t0`.
    Below,
    /// Fire iff `t_i >= t0`.
    Above,
}

/// Input weight, threshold spike (time, weight), `v` spike and `u` spike of
/// one gadget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GadgetWeights {
    pub input_weight: f64,
    pub threshold_spike: (f64, f64),
    pub v_spike: (f64, f64),
    pub u_spike: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGadget {
    pub direction: Direction,
    pub t0: f64,
    pub t_out: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub theta: f64,
    pub weights: GadgetWeights,
    /// One input, one neuron, three pulses (threshold, `v`, `u`).
    pub model: NetworkModel,
}

/// Weights of a gadget firing in `(t_out, t_out + epsilon)`.
fn gadget_weights(direction: Direction, t0: f64, t_out: f64, epsilon: f64, tau: f64, theta: f64) -> GadgetWeights {
    let w = PAIR_WEIGHT * theta * tau * E;
    let m = PEAK_MARGIN * theta;
    let delta = (epsilon / 2.0).min(0.5 / tau);
    let t_c = t_out + delta;
    let v = (theta - m) / (delta * (-tau * delta).exp());
    // Zero slope at t_c: the v/u potential peaks there at theta - m.
    let u = -v * (-tau * delta).exp() * (1.0 - tau * delta);
    // Pair residual per unit time offset near t_c; the offset puts boundary
    // inputs safely on the firing side.
    let slope = w * (-tau * t_c).exp() * (tau * t_c - 1.0);
    let eta = (4.0 * m / slope).clamp(MIN_OFFSET, MAX_OFFSET);
    let (input_weight, threshold_spike) = match direction {
        Direction::Below => (-w, (t0 + eta, w)),
        Direction::Above if t0 >= eta => (w, (t0 - eta, -w)),
        // Every admissible input is above: an excitatory spike at 0 alone
        // tips the neuron over.
        Direction::Above => (0.0, (0.0, w)),
    };
    GadgetWeights {
        input_weight,
        threshold_spike,
        v_spike: (t_out, v),
        u_spike: (t_c, u),
    }
}

fn check_gadget_inputs(t0: f64, t_out: f64, epsilon: f64, tau: f64, theta: f64) -> Result<(), InfeasibleConfig> {
    if !(tau > 0.0 && theta > 0.0) {
        return infeasible(format!("tau and theta must be positive (tau = {tau}, theta = {theta})"));
    }
    if !(epsilon > 0.0) {
        return infeasible(format!("epsilon must be positive, got {epsilon}"));
    }
    if !(0.0..=1.0).contains(&t0) {
        return infeasible(format!("threshold t0 = {t0} outside [0, 1]"));
    }
    let bound = 2.0 + 1.0 / tau;
    if !(t_out > bound) {
        return infeasible(format!("t_out = {t_out} must exceed 2 + 1/tau = {bound}"));
    }
    Ok(())
}

pub fn build_threshold_gadget(
    direction: Direction,
    t0: f64,
    t_out: f64,
    epsilon: f64,
    tau: f64,
    theta: f64,
) -> Result<ThresholdGadget, InfeasibleConfig> {
    check_gadget_inputs(t0, t_out, epsilon, tau, theta)?;
    let gw = gadget_weights(direction, t0, t_out, epsilon, tau, theta);
    let mut layer = Layer::zeros(1, 3, 1);
    layer.weights = vec![gw.input_weight, gw.threshold_spike.1, gw.v_spike.1, gw.u_spike.1];
    let model = NetworkModel {
        layers: vec![layer],
        topology: PulseTopology::PerLayer,
        pulse_sets: vec![PulseSet {
            times: vec![gw.threshold_spike.0, gw.v_spike.0, gw.u_spike.0],
        }],
        tau,
        theta,
    };
    Ok(ThresholdGadget {
        direction,
        t0,
        t_out,
        epsilon,
        tau,
        theta,
        weights: gw,
        model,
    })
}

impl ThresholdGadget {
    pub fn respond(&self, t_i: f64) -> SpikeTime {
        network::forward(&self.model, &[SpikeTime::at(t_i)]).outputs()[0]
    }

    pub fn predicate(&self, t_i: f64) -> bool {
        match self.direction {
            Direction::Below => t_i <= self.t0,
            Direction::Above => t_i >= self.t0,
        }
    }
}

/// Timing of a box detector's two layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxTiming {
    /// Nominal gadget time.
    pub gadget_t_out: f64,
    /// Gadget output window.
    pub gadget_epsilon: f64,
    /// Weight of each gadget-to-merge connection.
    pub merge_weight: f64,
    /// Merge crossing delay when all gadget spikes arrive together.
    pub merge_delay: f64,
}

fn box_timing(n: usize, t: f64, epsilon: f64, tau: f64, theta: f64) -> Result<BoxTiming, InfeasibleConfig> {
    let k = 2 * n;
    let merge_weight = theta * tau * E / (k - 1) as f64 * (1.0 - 1.0 / (4.0 * n as f64));
    let z = -tau * theta / (k as f64 * merge_weight);
    let merge_delay = -lambert_w0(z).map_err(|e| InfeasibleConfig(format!("merge neuron cannot fire: {e}")))? / tau;
    // Arrivals spread over the gadget window still cross while the whole
    // spread plus delay stays on the rising side of the kernel.
    let mut gadget_epsilon = epsilon / 2.0;
    while gadget_epsilon > 0.5 * (1.0 / tau - merge_delay) {
        gadget_epsilon /= 2.0;
    }
    Ok(BoxTiming {
        gadget_t_out: t - merge_delay + epsilon / 4.0,
        gadget_epsilon,
        merge_weight,
        merge_delay,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxDetector {
    pub intervals: Vec<(f64, f64)>,
    pub t: f64,
    pub epsilon: f64,
    pub timing: BoxTiming,
    /// `n` inputs, a gadget layer and a single merge neuron.
    pub model: NetworkModel,
}

fn check_box_inputs(intervals: &[(f64, f64)], t: f64, epsilon: f64, tau: f64, theta: f64) -> Result<(), InfeasibleConfig> {
    if intervals.is_empty() {
        return infeasible("at least one interval is required".into());
    }
    if !(tau > 0.0 && theta > 0.0) {
        return infeasible(format!("tau and theta must be positive (tau = {tau}, theta = {theta})"));
    }
    if !(epsilon > 0.0) {
        return infeasible(format!("epsilon must be positive, got {epsilon}"));
    }
    for (i, &(lo, hi)) in intervals.iter().enumerate() {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return infeasible(format!("interval {i} = [{lo}, {hi}] is not a sub-interval of [0, 1]"));
        }
    }
    let bound = 2.0 + 2.0 / tau;
    if !(t >= bound) {
        return infeasible(format!("t = {t} must be at least 2 + 2/tau = {bound}"));
    }
    Ok(())
}

/// Writes one box detector into a gadget layer and a merge layer.
///
/// Gadgets occupy columns `gadget0..gadget0 + 2n` of `l0`, pulses
/// `pulse0..pulse0 + 2n + 2` of its pulse rows (times into `pulses`), and the
/// merge neuron is column `merge` of `l1`.
#[allow(clippy::too_many_arguments)]
fn write_box(
    intervals: &[(f64, f64)],
    timing: &BoxTiming,
    tau: f64,
    theta: f64,
    l0: &mut Layer,
    pulses: &mut [f64],
    gadget0: usize,
    pulse0: usize,
    l1: &mut Layer,
    merge: usize,
) {
    let n = intervals.len();
    let n_in = l0.n_in;
    for (i, &(lo, hi)) in intervals.iter().enumerate() {
        for (j, (dir, t0)) in [(Direction::Below, hi), (Direction::Above, lo)].into_iter().enumerate() {
            let g = gadget0 + 2 * i + j;
            let p = pulse0 + 2 * i + j;
            let gw = gadget_weights(dir, t0, timing.gadget_t_out, timing.gadget_epsilon, tau, theta);
            *l0.weight_mut(i, g) = gw.input_weight;
            *l0.weight_mut(n_in + p, g) = gw.threshold_spike.1;
            *l0.weight_mut(n_in + pulse0 + 2 * n, g) = gw.v_spike.1;
            *l0.weight_mut(n_in + pulse0 + 2 * n + 1, g) = gw.u_spike.1;
            pulses[p] = gw.threshold_spike.0;
            pulses[pulse0 + 2 * n] = gw.v_spike.0;
            pulses[pulse0 + 2 * n + 1] = gw.u_spike.0;
            *l1.weight_mut(g, merge) = timing.merge_weight;
        }
    }
}

/// A network that fires in `(t, t + epsilon)` iff `lo_i <= x_i <= hi_i` for
/// every input, and stays silent otherwise.
pub fn build_box_detector(
    intervals: &[(f64, f64)],
    t: f64,
    epsilon: f64,
    tau: f64,
    theta: f64,
) -> Result<BoxDetector, InfeasibleConfig> {
    check_box_inputs(intervals, t, epsilon, tau, theta)?;
    let n = intervals.len();
    let timing = box_timing(n, t, epsilon, tau, theta)?;
    let mut l0 = Layer::zeros(n, 2 * n + 2, 2 * n);
    let mut l1 = Layer::zeros(2 * n, 0, 1);
    let mut pulses = vec![0.0; 2 * n + 2];
    write_box(intervals, &timing, tau, theta, &mut l0, &mut pulses, 0, 0, &mut l1, 0);
    let model = NetworkModel {
        layers: vec![l0, l1],
        topology: PulseTopology::PerLayer,
        pulse_sets: vec![PulseSet { times: pulses }, PulseSet { times: vec![] }],
        tau,
        theta,
    };
    Ok(BoxDetector {
        intervals: intervals.to_vec(),
        t,
        epsilon,
        timing,
        model,
    })
}

impl BoxDetector {
    pub fn dims(&self) -> usize {
        self.intervals.len()
    }

    pub fn respond(&self, x: &[f64]) -> SpikeTime {
        let input: Vec<SpikeTime> = x.iter().map(|&v| SpikeTime::at(v)).collect();
        network::forward(&self.model, &input).outputs()[0]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.intervals.iter().zip(x).all(|(&(lo, hi), &v)| lo <= v && v <= hi)
    }

    /// Computing neurons plus the `v` and `u` pulses shared by all gadgets:
    /// `2n + 3`.
    pub fn shared_size(&self) -> usize {
        2 * self.dims() + 3
    }

    /// Every neuron including the per-gadget threshold pulses: `4n + 3`.
    pub fn neuron_count(&self) -> usize {
        4 * self.dims() + 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxBox {
    pub intervals: Vec<(f64, f64)>,
    /// Start of the box detector's output window.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximatorNet {
    pub dims: usize,
    pub epsilon: f64,
    pub lipschitz: f64,
    pub cells_per_dim: usize,
    pub boxes: Vec<ApproxBox>,
    pub timing: Vec<BoxTiming>,
    pub final_weight: f64,
    /// Gadget layer, one merge neuron per box, one final neuron.
    pub model: NetworkModel,
}

impl ApproximatorNet {
    pub fn evaluate(&self, x: &[f64]) -> SpikeTime {
        let input: Vec<SpikeTime> = x.iter().map(|&v| SpikeTime::at(v)).collect();
        network::forward(&self.model, &input).outputs()[0]
    }

    pub fn neuron_count(&self) -> usize {
        self.boxes.len() * (4 * self.dims + 3) + 1
    }

    /// `(3 K sqrt(n) / epsilon)^n (4n + 3) + 1`.
    pub fn theorem_bound(&self) -> f64 {
        let n = self.dims as f64;
        (3.0 * self.lipschitz * n.sqrt() / self.epsilon).powi(self.dims as i32) * (4.0 * n + 3.0) + 1.0
    }
}

/// Approximate `f: [0, 1]^n -> (2 + 2/tau, inf)` with Lipschitz constant
/// `lipschitz` to within `epsilon`: the network's output spike time `g(x)`
/// satisfies `|g(x) - f(x)| < epsilon`.
pub fn build_approximator<F>(
    f: F,
    dims: usize,
    lipschitz: f64,
    epsilon: f64,
    tau: f64,
    theta: f64,
) -> Result<ApproximatorNet, InfeasibleConfig>
where
    F: Fn(&[f64]) -> f64,
{
    if dims == 0 {
        return infeasible("at least one input dimension is required".into());
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return infeasible(format!("Lipschitz constant must be finite and >= 0, got {lipschitz}"));
    }
    if !(epsilon > 0.0) {
        return infeasible(format!("epsilon must be positive, got {epsilon}"));
    }
    let floor = 2.0 + 2.0 / tau;
    let ratio = 3.0 * lipschitz * (dims as f64).sqrt() / epsilon;
    // Tolerate rounding when the ratio is meant to be an integer.
    let cells = ((ratio - 1e-9).ceil() as usize).max(1);
    let h = 1.0 / cells as f64;
    let half_diag = lipschitz * h * (dims as f64).sqrt() / 2.0;
    let n_boxes = cells.pow(dims as u32);

    let mut boxes = Vec::with_capacity(n_boxes);
    for idx in 0..n_boxes {
        let mut rem = idx;
        let mut intervals = Vec::with_capacity(dims);
        let mut center = Vec::with_capacity(dims);
        for _ in 0..dims {
            let c = rem % cells;
            rem /= cells;
            let (lo, hi) = (c as f64 * h, if c + 1 == cells { 1.0 } else { (c + 1) as f64 * h });
            intervals.push((lo, hi));
            center.push(0.5 * (lo + hi));
        }
        let fc = f(&center);
        if !(fc > floor) {
            return infeasible(format!(
                "target value {fc} at {center:?} is not above 2 + 2/tau = {floor}"
            ));
        }
        boxes.push(ApproxBox {
            intervals,
            t: (fc - half_diag).max(floor),
        });
    }

    let box_eps = epsilon / 3.0;
    let timing = boxes
        .iter()
        .map(|b| box_timing(dims, b.t, box_eps, tau, theta))
        .collect::<Result<Vec<_>, _>>()?;
    let per_box_pulses = 2 * dims + 2;
    let mut l0 = Layer::zeros(dims, per_box_pulses * n_boxes, 2 * dims * n_boxes);
    let mut l1 = Layer::zeros(2 * dims * n_boxes, 0, n_boxes);
    let mut pulses = vec![0.0; per_box_pulses * n_boxes];
    for (b, (bx, tm)) in boxes.iter().zip(&timing).enumerate() {
        write_box(
            &bx.intervals,
            tm,
            tau,
            theta,
            &mut l0,
            &mut pulses,
            2 * dims * b,
            per_box_pulses * b,
            &mut l1,
            b,
        );
    }
    // A single box spike alone drives the final neuron over threshold after
    // `s_final`.
    let s_final = (epsilon / 6.0).min(0.5 / tau);
    let final_weight = theta / (s_final * (-tau * s_final).exp());
    let mut l2 = Layer::zeros(n_boxes, 0, 1);
    l2.weights.iter_mut().for_each(|w| *w = final_weight);
    let model = NetworkModel {
        layers: vec![l0, l1, l2],
        topology: PulseTopology::PerLayer,
        pulse_sets: vec![
            PulseSet { times: pulses },
            PulseSet { times: vec![] },
            PulseSet { times: vec![] },
        ],
        tau,
        theta,
    };
    Ok(ApproximatorNet {
        dims,
        epsilon,
        lipschitz,
        cells_per_dim: cells,
        boxes,
        timing,
        final_weight,
        model,
    })
}
