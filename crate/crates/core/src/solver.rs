//! Single-neuron spike time and its exact partial derivatives.
//!
//! For a set `I` of presynaptic spikes the membrane potential after the last
//! of them is `V(t) = e^{-tau t} (A t - B)` with
//! `A = sum_i w_i e^{tau t_i}` and `B = sum_i w_i e^{tau t_i} t_i`.
//! Its first rising crossing of `theta` is
//!
//! ```text
//! t_out = B/A - W0(-tau theta / A * e^{tau B/A}) / tau
//! ```
//!
//! Inputs are added in time order. A crossing predicted by a prefix is only
//! accepted if it happens before the next input arrives; otherwise that input
//! joins the causal set and the crossing is recomputed.

use crate::math::{lambert_w0, BRANCH_POINT, BRANCH_TOLERANCE};
use crate::SpikeTime;

/// `1 + W` below this is reported as near-singular.
pub const NEAR_SINGULAR: f64 = 1e-10;

/// Relative slack on the cheap pre-check that decides whether the exact
/// Lambert W test is worth running. Only affects speed, never results.
const FILTER_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeEvent {
    pub time: SpikeTime,
    pub weight: f64,
    pub source: usize,
}

impl SpikeEvent {
    pub fn new(time: f64, weight: f64, source: usize) -> Self {
        SpikeEvent {
            time: SpikeTime::at(time),
            weight,
            source,
        }
    }
}

/// Presynaptic events that determine a spike, with their accumulators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CausalSet {
    /// Sorted by time ascending.
    pub events: Vec<SpikeEvent>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeResult {
    pub t_out: SpikeTime,
    pub causal_set: CausalSet,
    /// Lambert W value at the solution; NaN when the neuron never fires.
    pub w_arg: f64,
}

/// A partial derivative of the spike time, flagged when the solution is close
/// to tangency (`1 + W` near zero) and the value is unreliable or infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub value: f64,
    pub near_singular: bool,
}

impl Derivative {
    /// Clamp to `[-limit, limit]`; NaN (0/0 at exact tangency) becomes zero.
    pub fn clipped(self, limit: f64) -> f64 {
        clip(self.value, limit)
    }
}

#[inline]
pub(crate) fn clip(x: f64, limit: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-limit, limit)
    }
}

/// A presynaptic spike prepared for the solver. `row` indexes the weight
/// matrix row of the source neuron (or pulse).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    /// `e^{tau t}`
    pub exp_pos: f64,
    /// `e^{-tau t}`
    pub exp_neg: f64,
    pub row: usize,
}

impl Arrival {
    pub fn new(time: f64, row: usize, tau: f64) -> Self {
        Arrival {
            time,
            exp_pos: (tau * time).exp(),
            exp_neg: (-tau * time).exp(),
            row,
        }
    }
}

/// Sort arrivals by time, breaking ties by row for determinism.
pub fn sort_arrivals(arrivals: &mut [Arrival]) {
    arrivals.sort_unstable_by(|x, y| x.time.total_cmp(&y.time).then(x.row.cmp(&y.row)));
}

/// Outcome of the solver over a sorted arrival list. The causal set is the
/// prefix `arrivals[..n_causal]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub t_out: SpikeTime,
    pub n_causal: usize,
    pub a: f64,
    pub b: f64,
    pub lambert: f64,
}

impl Crossing {
    fn silent(n: usize, a: f64, b: f64) -> Self {
        Crossing {
            t_out: SpikeTime::NEVER,
            n_causal: n,
            a,
            b,
            lambert: f64::NAN,
        }
    }

    /// `(dt_out/dw_j, dt_out/dt_j)` for a causal input with weight `weight`.
    #[inline]
    pub fn partials(&self, arrival: &Arrival, weight: f64, tau: f64) -> (f64, f64) {
        let (t_j, e_j) = (arrival.time, arrival.exp_pos);
        let (a, b, w) = (self.a, self.b, self.lambert);
        let denom = a * (1.0 + w);
        let d_w = e_j * (t_j - b / a + w / tau) / denom;
        let d_t = tau * weight * e_j * (t_j - b / a + w / tau + 1.0 / tau) / denom;
        (d_w, d_t)
    }

    pub fn near_singular(&self) -> bool {
        1.0 + self.lambert < NEAR_SINGULAR
    }
}

/// Spike time for arrivals already sorted by [`sort_arrivals`]; `weight` maps
/// an arrival's row to its synaptic weight.
pub fn solve_sorted<F>(arrivals: &[Arrival], weight: F, tau: f64, theta: f64) -> Crossing
where
    F: Fn(usize) -> f64,
{
    let (mut a, mut b) = (0.0f64, 0.0f64);
    let n = arrivals.len();
    for k in 0..n {
        let ev = &arrivals[k];
        let w = weight(ev.row);
        let we = w * ev.exp_pos;
        a += we;
        b += we * ev.time;
        if a <= 0.0 {
            // No rising crossing is possible while A <= 0.
            continue;
        }
        let next = arrivals.get(k + 1);
        if !may_cross(a, b, ev.time, next, tau, theta) {
            continue;
        }
        let ratio = b / a;
        let z = -tau * theta / a * (tau * ratio).exp();
        if !(z >= BRANCH_POINT - BRANCH_TOLERANCE) {
            continue;
        }
        let Ok(lambert) = lambert_w0(z) else {
            continue;
        };
        let mut t = ratio - lambert / tau;
        let tol = 1e-12 * ev.time.abs().max(1.0);
        if t < ev.time - tol || t.is_nan() {
            continue;
        }
        t = t.max(ev.time);
        if let Some(nx) = next {
            // Ties go to the arriving event: include it and recompute.
            if t >= nx.time {
                continue;
            }
        }
        return Crossing {
            t_out: SpikeTime::at(t),
            n_causal: k + 1,
            a,
            b,
            lambert,
        };
    }
    Crossing::silent(n, a, b)
}

/// Cheap necessary condition for a threshold crossing in `[t_k, next)`.
///
/// `V` is unimodal with its peak at `B/A + 1/tau`. Given `V(t_k) < theta`, a
/// crossing before `next` requires either `V(next) >= theta` or a peak inside
/// the interval that reaches `theta`.
#[inline]
fn may_cross(a: f64, b: f64, t_k: f64, next: Option<&Arrival>, tau: f64, theta: f64) -> bool {
    let floor = theta * (1.0 - FILTER_SLACK);
    let t_peak = b / a + 1.0 / tau;
    if t_peak < t_k {
        // Decaying over the whole interval; allow for rounding right at t_k.
        return (-tau * t_k).exp() * (a * t_k - b) >= floor;
    }
    if let Some(nx) = next {
        if nx.exp_neg * (a * nx.time - b) >= floor {
            return true;
        }
        if t_peak >= nx.time {
            return false;
        }
    }
    a / tau * (-tau * t_peak).exp() >= floor
}

/// Membrane potential at `t` from events that have arrived by then. Silent
/// events and post-spike reset are ignored.
pub fn membrane_potential(events: &[SpikeEvent], t: f64, tau: f64) -> f64 {
    events
        .iter()
        .filter_map(|e| e.time.time().map(|ti| (ti, e.weight)))
        .filter(|&(ti, _)| ti <= t)
        .map(|(ti, w)| crate::math::alpha_kernel(t, ti, w, tau))
        .sum()
}

/// Earliest rising threshold crossing caused by `events`.
///
/// Events with time `NEVER` are ignored.
pub fn solve_spike_time(events: &[SpikeEvent], tau: f64, theta: f64) -> SpikeResult {
    let mut arrivals: Vec<Arrival> = events
        .iter()
        .enumerate()
        .filter_map(|(idx, e)| e.time.time().map(|t| Arrival::new(t, idx, tau)))
        .collect();
    sort_arrivals(&mut arrivals);
    let crossing = solve_sorted(&arrivals, |idx| events[idx].weight, tau, theta);
    let causal: Vec<SpikeEvent> = if crossing.t_out.is_never() {
        Vec::new()
    } else {
        arrivals[..crossing.n_causal]
            .iter()
            .map(|arr| events[arr.row])
            .collect()
    };
    SpikeResult {
        t_out: crossing.t_out,
        causal_set: CausalSet {
            events: causal,
            a: crossing.a,
            b: crossing.b,
        },
        w_arg: crossing.lambert,
    }
}

fn causal_event(result: &SpikeResult, source: usize) -> Option<&SpikeEvent> {
    if result.t_out.is_never() {
        return None;
    }
    result.causal_set.events.iter().find(|e| e.source == source)
}

fn derivative(result: &SpikeResult, source: usize, tau: f64, time_partial: bool) -> Derivative {
    let Some(ev) = causal_event(result, source) else {
        return Derivative {
            value: 0.0,
            near_singular: false,
        };
    };
    let t = ev.time.as_f64();
    let crossing = Crossing {
        t_out: result.t_out,
        n_causal: result.causal_set.events.len(),
        a: result.causal_set.a,
        b: result.causal_set.b,
        lambert: result.w_arg,
    };
    let (d_w, d_t) = crossing.partials(&Arrival::new(t, source, tau), ev.weight, tau);
    Derivative {
        value: if time_partial { d_t } else { d_w },
        near_singular: crossing.near_singular(),
    }
}

/// `dt_out/dw_j` for the event with source index `source`; zero if it is not
/// in the causal set.
pub fn d_tout_d_weight(result: &SpikeResult, source: usize, tau: f64) -> Derivative {
    derivative(result, source, tau, false)
}

/// `dt_out/dt_j` for the event with source index `source`; zero if it is not
/// in the causal set.
pub fn d_tout_d_time(result: &SpikeResult, source: usize, tau: f64) -> Derivative {
    derivative(result, source, tau, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    pub(crate) fn fig1b() -> Vec<SpikeEvent> {
        let w = [0.3, -0.4, 0.5, 0.7, 0.5, 0.8];
        let t = [1.0, 8.0, 12.0, 15.0, 17.0, 18.0];
        (0..6).map(|i| SpikeEvent::new(t[i], w[i], i)).collect()
    }

    fn fd_weight(events: &[SpikeEvent], j: usize, tau: f64, theta: f64, h: f64) -> f64 {
        let mut up = events.to_vec();
        let mut dn = events.to_vec();
        up[j].weight += h;
        dn[j].weight -= h;
        let tu = solve_spike_time(&up, tau, theta).t_out.as_f64();
        let td = solve_spike_time(&dn, tau, theta).t_out.as_f64();
        (tu - td) / (2.0 * h)
    }

    fn fd_time(events: &[SpikeEvent], j: usize, tau: f64, theta: f64, h: f64) -> f64 {
        let mut up = events.to_vec();
        let mut dn = events.to_vec();
        up[j].time = SpikeTime::at(up[j].time.as_f64() + h);
        dn[j].time = SpikeTime::at(dn[j].time.as_f64() - h);
        let tu = solve_spike_time(&up, tau, theta).t_out.as_f64();
        let td = solve_spike_time(&dn, tau, theta).t_out.as_f64();
        (tu - td) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn potential_basics() {
        assert_eq!(membrane_potential(&[], 5.0, 1.0), 0.0);
        let single = [SpikeEvent::new(0.0, E, 0)];
        assert!((membrane_potential(&single, 1.0, 1.0) - 1.0).abs() < 1e-15);
        // The figure's crossing corresponds to a threshold of 0.5.
        let v = membrane_potential(&fig1b(), 18.64, 1.0);
        assert!((v - 0.5).abs() < 0.01, "V(18.64) = {v}");
    }

    #[test]
    fn single_input_cases() {
        let r = solve_spike_time(&[SpikeEvent::new(0.0, E, 0)], 1.0, 1.0);
        assert!((r.t_out.as_f64() - 1.0).abs() < 1e-7, "{:?}", r.t_out);
        assert!(r.w_arg >= -1.0);

        let r = solve_spike_time(&[SpikeEvent::new(0.0, 4.0, 0)], 1.0, 1.0);
        assert!((r.t_out.as_f64() - 0.357403).abs() < 1e-5);

        let r = solve_spike_time(&[SpikeEvent::new(0.0, 1.0, 0)], 1.0, 1.0);
        assert!(r.t_out.is_never());
    }

    #[test]
    fn single_input_oracle_bisection() {
        // 4 t e^{-t} = 1 on (0, 1).
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if 4.0 * mid * (-mid).exp() < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = solve_spike_time(&[SpikeEvent::new(0.0, 4.0, 0)], 1.0, 1.0);
        assert!((r.t_out.as_f64() - lo).abs() < 1e-12);
    }

    #[test]
    fn fig1b_spike_time() {
        let r = solve_spike_time(&fig1b(), 1.0, 0.5);
        let t = r.t_out.as_f64();
        assert!((t - 18.64).abs() <= 0.01, "t_out = {t}");
        assert_eq!(r.causal_set.events.len(), 6);
        let v = membrane_potential(&fig1b(), t, 1.0);
        assert!((v - 0.5).abs() < 1e-9);
        // The potential peaks at about 0.5015, so a unit threshold is never reached.
        assert!(solve_spike_time(&fig1b(), 1.0, 1.0).t_out.is_never());
    }

    #[test]
    fn late_input_excluded_and_inhibition_included() {
        // Strong input fires at ~0.36; an event at 5.0 is not causal.
        let ev = vec![SpikeEvent::new(0.0, 4.0, 0), SpikeEvent::new(5.0, -10.0, 1)];
        let r = solve_spike_time(&ev, 1.0, 1.0);
        assert_eq!(r.causal_set.events.len(), 1);
        // Inhibition arriving before the predicted crossing must be included.
        let ev = vec![SpikeEvent::new(0.0, 4.0, 0), SpikeEvent::new(0.1, -10.0, 1)];
        let r = solve_spike_time(&ev, 1.0, 1.0);
        assert!(r.t_out.is_never());
    }

    #[test]
    fn never_events_ignored() {
        let ev = vec![
            SpikeEvent {
                time: SpikeTime::NEVER,
                weight: 100.0,
                source: 0,
            },
            SpikeEvent::new(0.0, 4.0, 1),
        ];
        let r = solve_spike_time(&ev, 1.0, 1.0);
        assert!((r.t_out.as_f64() - 0.357403).abs() < 1e-5);
    }

    #[test]
    fn tangency_is_flagged() {
        let r = solve_spike_time(&[SpikeEvent::new(0.0, E, 0)], 1.0, 1.0);
        let d = d_tout_d_weight(&r, 0, 1.0);
        assert!(d.near_singular || d.value.abs() > 1e6, "{d:?}");
        assert_eq!(d.clipped(100.0).abs(), 100.0);
    }

    #[test]
    fn derivative_of_absent_event_is_zero() {
        let ev = vec![SpikeEvent::new(0.0, 4.0, 0), SpikeEvent::new(5.0, 1.0, 1)];
        let r = solve_spike_time(&ev, 1.0, 1.0);
        assert_eq!(d_tout_d_weight(&r, 1, 1.0).value, 0.0);
        assert_eq!(d_tout_d_time(&r, 1, 1.0).value, 0.0);
        assert_eq!(d_tout_d_time(&r, 17, 1.0).value, 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let single = vec![SpikeEvent::new(0.0, 4.0, 0)];
        let r = solve_spike_time(&single, 1.0, 1.0);
        let dw = d_tout_d_weight(&r, 0, 1.0).value;
        let dt = d_tout_d_time(&r, 0, 1.0).value;
        assert!(rel(dw, fd_weight(&single, 0, 1.0, 1.0, 1e-6)) < 1e-5);
        assert!(rel(dt, fd_time(&single, 0, 1.0, 1.0, 1e-6)) < 1e-5);
        // A single input shifts the output one for one.
        assert!((dt - 1.0).abs() < 1e-9);

        let ev = fig1b();
        let r = solve_spike_time(&ev, 1.0, 0.5);
        let dw = d_tout_d_weight(&r, 3, 1.0).value;
        assert!(rel(dw, fd_weight(&ev, 3, 1.0, 0.5, 1e-6)) < 1e-5);
        let dt = d_tout_d_time(&r, 4, 1.0).value;
        assert!(rel(dt, fd_time(&ev, 4, 1.0, 0.5, 1e-6)) < 1e-5);
    }

    #[test]
    fn identical_inputs_share_time_derivative() {
        let ev = vec![SpikeEvent::new(0.0, 2.0, 0), SpikeEvent::new(0.0, 2.0, 1)];
        let r = solve_spike_time(&ev, 1.0, 1.0);
        let d0 = d_tout_d_time(&r, 0, 1.0).value;
        let d1 = d_tout_d_time(&r, 1, 1.0).value;
        let h = 1e-6;
        let shift = |s: f64| {
            let e: Vec<SpikeEvent> = ev
                .iter()
                .map(|e| SpikeEvent::new(e.time.as_f64() + s, e.weight, e.source))
                .collect();
            solve_spike_time(&e, 1.0, 1.0).t_out.as_f64()
        };
        let both = (shift(h) - shift(-h)) / (2.0 * h);
        assert!((d0 - both / 2.0).abs() < 1e-6);
        assert!((d1 - both / 2.0).abs() < 1e-6);
    }

    #[test]
    fn general_tau_reduces_bitwise_at_unit_tau() {
        let ev = fig1b();
        let r = solve_spike_time(&ev, 1.0, 0.5);
        let (a, b, w) = (r.causal_set.a, r.causal_set.b, r.w_arg);
        for e in &r.causal_set.events {
            let t_j = e.time.as_f64();
            let w_j = e.weight;
            let eq6 = t_j.exp() * (t_j - b / a + w) / (a * (1.0 + w));
            let eq5 = w_j * t_j.exp() * (t_j - b / a + w + 1.0) / (a * (1.0 + w));
            assert_eq!(d_tout_d_weight(&r, e.source, 1.0).value.to_bits(), eq6.to_bits());
            assert_eq!(d_tout_d_time(&r, e.source, 1.0).value.to_bits(), eq5.to_bits());
        }
    }
}
