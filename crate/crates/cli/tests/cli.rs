use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use alphasnn::Checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alphasnn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn has_mnist() -> bool {
    mnist_dir().join("t10k-images-idx3-ubyte").exists()
}

fn train_xor(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, PathBuf, Output) {
    let ck = dir.join(format!("{name}.json"));
    let metrics = dir.join(format!("{name}.csv"));
    let mut args = vec![
        "train",
        "--task",
        "xor",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    (ck, metrics, out)
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, metrics, out) = train_xor(dir.path(), "m", &["--epochs", "3", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.split(',').count() == 7));
    assert!(lines[1].starts_with("1,train,"));
    let ck = Checkpoint::load(&ck).unwrap();
    assert_eq!(ck.epochs_completed, 3);
    assert_eq!(ck.model.n_inputs(), 2);
    assert!(stdout(&out).contains("test acc"));
}

#[test]
fn table_flags_reach_the_checkpoint_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, _, out) = train_xor(
        dir.path(),
        "flags",
        &[
            "--epochs",
            "1",
            "--batch_size",
            "4",
            "--learning_rate",
            "0.0123",
            "--learning_rate_pulses",
            "0.0456",
            "--n_hidden",
            "3,2",
            "--n_pulses",
            "2",
            "--nonpulse_init_multiplier",
            "-0.5",
            "--pulse_init_multiplier",
            "1.25",
            "--penalty_no_spike",
            "2.5",
            "--clip_derivative",
            "50",
            "--decay_constant",
            "0.75",
            "--fire_threshold",
            "1.1",
            "--update-only-on-error",
            "false",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = Checkpoint::load(&ck).unwrap().config.unwrap();
    assert_eq!(cfg.batch_size, 4);
    assert_eq!(cfg.learning_rate, 0.0123);
    assert_eq!(cfg.learning_rate_pulses, 0.0456);
    assert_eq!(cfg.n_hidden, vec![3, 2]);
    assert_eq!(cfg.n_pulses, 2);
    assert_eq!(cfg.nonpulse_init_multiplier, -0.5);
    assert_eq!(cfg.pulse_init_multiplier, 1.25);
    assert_eq!(cfg.penalty_no_spike, 2.5);
    assert_eq!(cfg.clip_derivative, 50.0);
    assert_eq!(cfg.decay_constant, 0.75);
    assert_eq!(cfg.fire_threshold, 1.1);
    assert!(!cfg.update_only_on_error);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, am, _) = train_xor(dir.path(), "a", &["--epochs", "5", "--seed", "7"]);
    let (b, bm, _) = train_xor(dir.path(), "b", &["--epochs", "5", "--seed", "7", "--workers", "1"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(&am).unwrap(), std::fs::read(&bm).unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let (full, full_m, out) = train_xor(dir.path(), "full", &["--epochs", "6", "--seed", "3"]);
    assert!(out.status.success());
    let (half, half_m, out) = train_xor(dir.path(), "half", &["--epochs", "3", "--seed", "3"]);
    assert!(out.status.success());
    let (_, _, out) = train_xor(dir.path(), "half", &["--epochs", "6", "--resume", half.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&half).unwrap());
    assert_eq!(std::fs::read(&full_m).unwrap(), std::fs::read(&half_m).unwrap());
}

#[test]
fn validation_split_adds_rows_and_picks_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, metrics, out) = train_xor(dir.path(), "v", &["--epochs", "4", "--valid-fraction", "0.2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",valid,")).count(), 4);
    let epochs = Checkpoint::load(&ck).unwrap().epochs_completed;
    assert!((1..=4).contains(&epochs));
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--task", "mnist", "--data-dir", dir.path().to_str().unwrap(), "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("train-images-idx3-ubyte"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);

    let (_, _, out) = train_xor(dir.path(), "neg", &["--learning_rate=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"));

    let out = run(&["eval", "--task", "xor", "--checkpoint", dir.path().join("none.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("none.json"));
}

#[test]
fn foreign_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.json");
    std::fs::write(&bogus, "{\"format\": \"something\", \"version\": 1}").unwrap();
    let out = run(&["eval", "--task", "xor", "--checkpoint", bogus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let (ck, _, _) = train_xor(dir.path(), "x", &["--epochs", "1"]);
    let out = run(&["eval", "--task", "mnist", "--checkpoint", ck.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_is_deterministic_and_formatted() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, _, _) = train_xor(dir.path(), "e", &["--epochs", "2"]);
    let args = ["eval", "--task", "xor", "--split", "train", "--checkpoint", ck.to_str().unwrap()];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let acc = text.lines().find(|l| l.starts_with("accuracy ")).unwrap();
    assert_eq!(acc.split_once('.').unwrap().1.len(), 4);
    let loss = text.lines().find(|l| l.starts_with("mean_loss ")).unwrap();
    assert_eq!(loss.split_once('.').unwrap().1.len(), 6);
}

#[test]
fn approx_demo_box_has_no_violations() {
    let out = run(&["approx-demo", "box", "--interval", "0.2:0.6", "--probes", "1000"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("violations 0"), "{text}");
    assert!(text.contains("neurons 7"));

    let out = run(&["approx-demo", "box", "--interval", "0.1:0.5", "--interval", "0.3:0.9", "--probes", "2000"]);
    assert!(stdout(&out).contains("violations 0"));
}

#[test]
fn approx_demo_gadget_and_function() {
    let out = run(&["approx-demo", "gadget", "--direction", "above", "--t0", "0.35"]);
    assert!(stdout(&out).contains("violations 0"), "{}", stdout(&out));

    let out = run(&["approx-demo", "function", "--target", "vee", "--epsilon", "0.6"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let field = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(name)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!(field("neurons") <= field("bound"));
    assert!(field("max_error") < 0.6);
}

#[test]
fn approx_demo_rejects_early_output() {
    let out = run(&["approx-demo", "gadget", "--t0", "0.5", "--t-out", "2.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("2 + 1/tau"));
}

#[test]
fn raster_lists_every_spike_and_pulse() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, _, _) = train_xor(dir.path(), "r", &["--epochs", "2"]);
    let out = run(&["raster", "--task", "xor", "--checkpoint", ck.to_str().unwrap(), "--index", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,neuron,is_pulse,time"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 4));
    // Both inputs and the shared pulse always spike; silent neurons have no row.
    assert!((3..=7).contains(&rows.len()));
    assert_eq!(rows.iter().filter(|r| r[0] == "0" && r[2] == "0").count(), 2);
    assert_eq!(rows.iter().filter(|r| r[2] == "1").count(), 1);
}

#[test]
fn dream_writes_an_input() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, _, _) = train_xor(dir.path(), "d", &["--epochs", "20"]);
    let img = dir.path().join("dream.txt");
    let out = run(&["dream", "--checkpoint", ck.to_str().unwrap(), "--class", "1", "--output", img.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&img).unwrap();
    let times: Vec<f64> = text.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(times.len(), 2);
    assert!(times.iter().all(|&t| t >= 0.0));

    let out = run(&["dream", "--checkpoint", ck.to_str().unwrap(), "--class", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn untrained_mnist_model_is_at_chance() {
    if !has_mnist() {
        eprintln!("MNIST files not present; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("init.json");
    let data = mnist_dir();
    let out = run(&[
        "train",
        "--task",
        "mnist",
        "--data-dir",
        data.to_str().unwrap(),
        "--epochs",
        "0",
        "--test-limit",
        "10",
        "--train-limit",
        "10",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--metrics",
        dir.path().join("m.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "eval",
        "--task",
        "mnist",
        "--data-dir",
        data.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--limit",
        "3000",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("accuracy "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
}
