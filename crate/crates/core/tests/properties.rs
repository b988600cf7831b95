use proptest::collection::vec;
use proptest::prelude::*;

use alphasnn::introspection::{self, GridSpec};
use alphasnn::network::{self, ModelSpec};
use alphasnn::solver::{self, membrane_potential, SpikeEvent};
use alphasnn::training;
use alphasnn::{datasets, Checkpoint, Example, Execution, PulseTopology, SpikeTime, Task, TrainConfig, Trainer};

fn events_strategy() -> impl Strategy<Value = Vec<SpikeEvent>> {
    vec((0.0f64..1.0, -2.0f64..3.0), 1..8).prop_map(|pairs| {
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, (t, w))| SpikeEvent::new(t, w, i))
            .collect()
    })
}

fn small_spec(seed: u64, tau: f64) -> ModelSpec {
    ModelSpec {
        layer_sizes: vec![3, 4, 2],
        n_pulses: 2,
        topology: PulseTopology::PerLayer,
        nonpulse_init_multiplier: 2.0,
        pulse_init_multiplier: 1.0,
        tau,
        theta: 1.0,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn spike_sits_on_threshold_after_its_causes(
        events in events_strategy(),
        tau in prop_oneof![Just(0.2), Just(1.0), Just(2.0)],
        theta in 0.3f64..1.5,
    ) {
        let r = solver::solve_spike_time(&events, tau, theta);
        if let Some(t) = r.t_out.time() {
            let v = membrane_potential(&events, t, tau);
            prop_assert!((v - theta).abs() <= 1e-9 * theta.max(1.0), "v({t}) = {v}");
            let last_cause = r.causal_set.events.iter().map(|e| e.time.as_f64()).fold(0.0, f64::max);
            prop_assert!(t >= last_cause);
            // Every event inside the causal set precedes the spike; every
            // event outside it does not.
            for e in &events {
                let inside = r.causal_set.events.iter().any(|c| c.source == e.source);
                prop_assert_eq!(inside, e.time.as_f64() < t);
            }
        }
    }

    #[test]
    fn no_earlier_crossing_on_a_coarse_grid(events in events_strategy(), theta in 0.3f64..1.5) {
        let r = solver::solve_spike_time(&events, 1.0, theta);
        let end = r.t_out.time().unwrap_or(70.0);
        let n = 2000;
        for k in 0..n {
            let t = end * k as f64 / n as f64;
            prop_assert!(membrane_potential(&events, t, 1.0) < theta + 1e-9);
        }
    }

    #[test]
    fn spike_time_ignores_event_order(events in events_strategy(), theta in 0.3f64..1.5) {
        let mut reversed = events.clone();
        reversed.reverse();
        let a = solver::solve_spike_time(&events, 1.0, theta).t_out;
        let b = solver::solve_spike_time(&reversed, 1.0, theta).t_out;
        match (a.time(), b.time()) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0)),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn local_partials_match_central_differences(events in events_strategy(), theta in 0.3f64..1.5) {
        let r = solver::solve_spike_time(&events, 1.0, theta);
        prop_assume!(r.t_out.time().is_some());
        let h = 1e-7;
        let t0 = r.t_out.as_f64();
        for e in r.causal_set.events.clone() {
            let shifted = |dw: f64, dt: f64| {
                let moved: Vec<SpikeEvent> = events
                    .iter()
                    .map(|x| if x.source == e.source {
                        SpikeEvent::new(x.time.as_f64() + dt, x.weight + dw, x.source)
                    } else {
                        *x
                    })
                    .collect();
                let s = solver::solve_spike_time(&moved, 1.0, theta);
                (s.t_out, s.causal_set.events.len())
            };
            let n = r.causal_set.events.len();
            let d = solver::d_tout_d_weight(&r, e.source, 1.0);
            prop_assume!(!d.near_singular);
            let (up, nu) = shifted(h, 0.0);
            let (down, nd) = shifted(-h, 0.0);
            if nu == n && nd == n && up.time().is_some() && down.time().is_some() {
                let fd = (up.as_f64() - down.as_f64()) / (2.0 * h);
                prop_assert!((fd - d.value).abs() <= 1e-4 * fd.abs().max(1.0), "dw fd {fd} analytic {} at t {t0}", d.value);
            }
            let d = solver::d_tout_d_time(&r, e.source, 1.0);
            let (up, nu) = shifted(0.0, h);
            let (down, nd) = shifted(0.0, -h);
            if nu == n && nd == n && up.time().is_some() && down.time().is_some() {
                let fd = (up.as_f64() - down.as_f64()) / (2.0 * h);
                prop_assert!((fd - d.value).abs() <= 1e-4 * fd.abs().max(1.0), "dt fd {fd} analytic {}", d.value);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>(), tau in 0.1f64..3.0) {
        let model = network::init_model(&small_spec(seed, tau)).unwrap();
        let ck = Checkpoint::new(model);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn raster_is_sorted_and_matches_forward(seed in 0u64..1000, x in vec(0.0f64..1.0, 3)) {
        let model = network::init_model(&small_spec(seed, 1.0)).unwrap();
        let input: Vec<SpikeTime> = x.iter().map(|&t| SpikeTime::at(t)).collect();
        let trace = network::forward(&model, &input);
        let records = introspection::export_raster(&model, &trace);
        prop_assert!(records.windows(2).all(|w| w[0].time <= w[1].time));
        let neurons = records.iter().filter(|r| !r.is_pulse).count();
        let spiking = trace.spike_times.iter().flatten().filter(|t| !t.is_never()).count();
        prop_assert_eq!(neurons, spiking);
    }
}

#[test]
fn solver_agrees_with_dense_grid_on_a_known_case() {
    let events = vec![SpikeEvent::new(0.1, 2.5, 0), SpikeEvent::new(0.4, 2.0, 1), SpikeEvent::new(0.6, -0.5, 2)];
    let exact = solver::solve_spike_time(&events, 1.0, 1.0).t_out.as_f64();
    let dense = introspection::first_crossing_dense(&events, 1.0, 1.0, GridSpec::new(0.0, 5.0, 1e-5)).as_f64();
    assert!(exact.is_finite());
    assert!((exact - dense).abs() <= 1e-5, "{exact} vs {dense}");
}

#[test]
fn sequential_and_parallel_training_are_bit_identical() {
    let data = datasets::generate(Task::Xor, 300, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::boolean_default()
    };
    let mut seq = Trainer::new(cfg.clone(), 2, 2).unwrap().with_execution(Execution::Sequential);
    let mut par = Trainer::new(cfg, 2, 2).unwrap().with_execution(Execution::Parallel);
    for _ in 0..3 {
        let a = seq.run_epoch(&data);
        let b = par.run_epoch(&data);
        assert_eq!(a.csv_row(), b.csv_row());
    }
    assert_eq!(Checkpoint::new(seq.model).to_json(), Checkpoint::new(par.model).to_json());
}

#[test]
fn evaluation_matches_per_example_forward() {
    let model = network::init_model(&small_spec(3, 1.0)).unwrap();
    let data: Vec<Example> = (0..40)
        .map(|i| Example {
            input_times: (0..3).map(|j| SpikeTime::at(((i * 7 + j * 3) % 11) as f64 / 10.0)).collect(),
            label: i % 2,
        })
        .collect();
    let m = training::evaluate(&model, &data, 0, "test", Execution::Parallel);
    let correct = data
        .iter()
        .filter(|e| network::predict(network::forward(&model, &e.input_times).outputs()) == Ok(e.label))
        .count();
    assert_eq!(m.accuracy, correct as f64 / data.len() as f64);
}

#[test]
fn training_lowers_the_loss_on_or() {
    let data = datasets::generate(Task::Or, 500, 9).unwrap();
    let mut t = Trainer::new(TrainConfig::boolean_default(), 2, 2).unwrap();
    let before = t.evaluate(&data, "train").mean_loss;
    for _ in 0..15 {
        t.run_epoch(&data);
    }
    let after = t.evaluate(&data, "train").mean_loss;
    assert!(after < before, "{before} -> {after}");
}
