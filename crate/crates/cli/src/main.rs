//! `alphasnn`: train, evaluate and inspect alpha-synapse spiking networks.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use alphasnn::approximator::{self, Direction};
use alphasnn::checkpoint::CheckpointError;
use alphasnn::datasets::{self, MnistSplit};
use alphasnn::introspection::{self, DreamConfig};
use alphasnn::network;
use alphasnn::training::{self, EpochMetrics};
use alphasnn::{Checkpoint, Example, Execution, PulseTopology, SpikeTime, Task, TrainConfig, Trainer};

/// Offset between the train and test data seeds of the synthetic tasks.
const TEST_SEED_OFFSET: u64 = 1 << 32;
const BOOLEAN_TRAIN: usize = 1000;
const BOOLEAN_TEST: usize = 150;

#[derive(Parser)]
#[command(name = "alphasnn", version, about = "Spiking networks with alpha synapses and time-to-first-spike coding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write a checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Accuracy and mean loss of a checkpoint on a data split.
    Eval(EvalArgs),
    /// Optimise an input until the network classifies it as a given class.
    Dream(DreamArgs),
    /// Build and verify the constructive gadget, box and approximator networks.
    ApproxDemo(ApproxArgs),
    /// Spike raster (every neuron and pulse) for one example.
    Raster(RasterArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "model.json")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, alias = "update_only_on_error")]
    update_only_on_error: Option<bool>,
    /// Fraction of the training data held out for checkpoint selection.
    #[arg(long, default_value_t = 0.0)]
    valid_fraction: f64,
    /// Use at most this many training examples (MNIST).
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use at most this many test examples (MNIST).
    #[arg(long)]
    test_limit: Option<usize>,
    /// Continue from a checkpoint, keeping its config and optimiser state.
    #[arg(long, conflicts_with = "seed")]
    resume: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

/// Hyperparameter overrides; unset values come from the task's defaults.
#[derive(Args, Default)]
struct HyperArgs {
    #[arg(long = "batch_size", alias = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "clip_derivative", alias = "clip-derivative")]
    clip_derivative: Option<f64>,
    #[arg(long = "decay_constant", alias = "decay-constant")]
    decay_constant: Option<f64>,
    #[arg(long = "fire_threshold", alias = "fire-threshold")]
    fire_threshold: Option<f64>,
    #[arg(long = "learning_rate", alias = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long = "learning_rate_pulses", alias = "learning-rate-pulses")]
    learning_rate_pulses: Option<f64>,
    /// Hidden layer sizes, comma separated.
    #[arg(long = "n_hidden", alias = "n-hidden", value_delimiter = ',')]
    n_hidden: Option<Vec<usize>>,
    #[arg(long = "n_pulses", alias = "n-pulses")]
    n_pulses: Option<usize>,
    #[arg(long = "nonpulse_init_multiplier", alias = "nonpulse-init-multiplier", allow_hyphen_values = true)]
    nonpulse_init_multiplier: Option<f64>,
    #[arg(long = "penalty_no_spike", alias = "penalty-no-spike")]
    penalty_no_spike: Option<f64>,
    #[arg(long = "pulse_init_multiplier", alias = "pulse-init-multiplier", allow_hyphen_values = true)]
    pulse_init_multiplier: Option<f64>,
    #[arg(long = "pulse_topology", alias = "pulse-topology", value_enum)]
    pulse_topology: Option<TopologyArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    PerLayer,
    Shared,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Data seed for the synthetic tasks; defaults to the checkpoint's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct DreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,
    /// Write the input here: PGM for square inputs, text otherwise.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RasterArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ApproxArgs {
    #[command(subcommand)]
    kind: ApproxKind,
    #[arg(long, global = true, default_value_t = 1.0)]
    decay_constant: f64,
    #[arg(long, global = true, default_value_t = 1.0)]
    fire_threshold: f64,
    #[arg(long, global = true, default_value_t = 1000)]
    probes: usize,
}

#[derive(Subcommand)]
enum ApproxKind {
    /// One-input gadget firing iff the input is below (or above) t0.
    Gadget {
        #[arg(long, value_enum, default_value = "below")]
        direction: DirectionArg,
        #[arg(long)]
        t0: f64,
        #[arg(long, default_value_t = 4.0)]
        t_out: f64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
    },
    /// Detector firing iff every input lies in its interval.
    Box {
        /// `lo:hi`, one per input dimension.
        #[arg(long = "interval", value_parser = parse_interval, required = true)]
        intervals: Vec<(f64, f64)>,
        #[arg(long, default_value_t = 5.0)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
    },
    /// Piecewise-constant approximation of a 1-D Lipschitz target.
    Function {
        #[arg(long, value_enum, default_value = "ramp")]
        target: TargetArg,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Below,
    Above,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    /// 4 + x
    Ramp,
    /// 4 + 2|x - 0.5|
    Vee,
    /// 5 + sin(2 pi x) / 2
    Wave,
}

impl TargetArg {
    fn eval(self, x: f64) -> f64 {
        match self {
            TargetArg::Ramp => 4.0 + x,
            TargetArg::Vee => 4.0 + 2.0 * (x - 0.5).abs(),
            TargetArg::Wave => 5.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin(),
        }
    }

    fn lipschitz(self) -> f64 {
        match self {
            TargetArg::Ramp => 1.0,
            TargetArg::Vee => 2.0,
            TargetArg::Wave => std::f64::consts::PI,
        }
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse().map_err(|e: datasets::DatasetError| e.to_string())
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(lo)?, p(hi)?))
}

/// A failure with its exit status.
#[derive(Debug)]
enum Failure {
    /// Bad configuration or unreadable data.
    Input(String),
    /// A checkpoint in the wrong format.
    Checkpoint(String),
    /// Anything else that stops the run.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Input(_) => 2,
            Failure::Checkpoint(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Checkpoint(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<datasets::DatasetError> for Failure {
    fn from(e: datasets::DatasetError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Failure::Input(e.to_string()),
            _ => Failure::Checkpoint(e.to_string()),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn task_defaults(task: Task) -> TrainConfig {
    if task.is_synthetic() {
        TrainConfig::boolean_default()
    } else {
        TrainConfig::mnist_chosen()
    }
}

fn apply_overrides(cfg: &mut TrainConfig, h: &HyperArgs) {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = h.$f.clone() { cfg.$f = v; })* };
    }
    set!(
        batch_size,
        clip_derivative,
        decay_constant,
        fire_threshold,
        learning_rate,
        learning_rate_pulses,
        n_hidden,
        n_pulses,
        nonpulse_init_multiplier,
        penalty_no_spike,
        pulse_init_multiplier
    );
    if let Some(t) = h.pulse_topology {
        cfg.pulse_topology = match t {
            TopologyArg::PerLayer => PulseTopology::PerLayer,
            TopologyArg::Shared => PulseTopology::Shared,
        };
    }
}

/// Training or test split of `task`. Synthetic tasks are regenerated from
/// `seed`; MNIST is read from `data_dir`.
fn load_split(data: &DataArgs, split: SplitArg, seed: u64, limit: Option<usize>) -> Result<Vec<Example>, Failure> {
    let task = data.task;
    if task.is_synthetic() {
        let (n, data_seed) = match split {
            SplitArg::Train => (BOOLEAN_TRAIN, seed),
            SplitArg::Test => (BOOLEAN_TEST, seed.wrapping_add(TEST_SEED_OFFSET)),
        };
        let n = limit.map_or(n, |l| l.min(n));
        Ok(datasets::generate(task, n, data_seed)?)
    } else {
        let split = match split {
            SplitArg::Train => MnistSplit::Train,
            SplitArg::Test => MnistSplit::Test,
        };
        Ok(datasets::load_mnist(&data.data_dir, split, limit)?)
    }
}

fn execution(workers: usize) -> Execution {
    if workers == 1 {
        return Execution::Sequential;
    }
    if workers > 1 {
        alphasnn::par::configure_workers(workers);
    }
    Execution::Parallel
}

fn open_metrics(path: &Path, append: bool) -> Result<fs::File, Failure> {
    let fresh = !append || !path.exists();
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(path)
        .map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", path.display())))?;
    if fresh {
        writeln!(file, "{}", EpochMetrics::CSV_HEADER).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(file)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let task = args.data.task;
    let (mut trainer, resumed) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let cfg = ck
                .config
                .clone()
                .ok_or_else(|| Failure::Checkpoint(format!("{} has no training config", path.display())))?;
            if ck.model.n_inputs() != task.n_inputs() || ck.model.n_outputs() != task.n_classes() {
                return Err(Failure::Checkpoint(format!("{} does not fit task {task}", path.display())));
            }
            (Trainer::from_parts(ck.model, cfg, ck.optimizer, ck.epochs_completed), true)
        }
        None => {
            let mut cfg = task_defaults(task);
            apply_overrides(&mut cfg, &args.hyper);
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(u) = args.update_only_on_error {
                cfg.update_only_on_error = u;
            }
            cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
            let trainer = Trainer::new(cfg, task.n_inputs(), task.n_classes())
                .map_err(|e| Failure::Input(e.to_string()))?;
            (trainer, false)
        }
    };
    if let Some(e) = args.epochs {
        trainer.config.epochs = e;
    }
    for name in trainer.config.out_of_search_range() {
        eprintln!("note: {name} is outside the usual search range");
    }
    if !(0.0..1.0).contains(&args.valid_fraction) {
        return Err(Failure::Input(format!("--valid-fraction must be in [0, 1), got {}", args.valid_fraction)));
    }
    trainer = trainer.with_execution(execution(args.workers));
    let seed = trainer.config.seed;

    let all_train = load_split(&args.data, SplitArg::Train, seed, args.train_limit)?;
    let test = load_split(&args.data, SplitArg::Test, seed, args.test_limit)?;
    let (train, valid) = if args.valid_fraction > 0.0 {
        datasets::split_train_valid(all_train, 1.0 - args.valid_fraction, seed)
    } else {
        (all_train, Vec::new())
    };
    if train.is_empty() {
        return Err(Failure::Input("training set is empty".into()));
    }

    let mut metrics = open_metrics(&args.metrics, resumed)?;
    let mut best: Option<(f64, Checkpoint)> = None;
    let snapshot = |t: &Trainer| {
        let mut ck = Checkpoint::new(t.model.clone());
        ck.config = Some(t.config.clone());
        ck.optimizer = Some(t.optimizer.clone());
        ck.epochs_completed = t.epochs_completed;
        ck
    };
    while trainer.epochs_completed < trainer.config.epochs {
        let m = trainer.run_epoch(&train);
        let mut rows = vec![m.clone()];
        let regime = introspection::regime(m.mean_first_output_time, m.mean_hidden_spike_time);
        let mut line = format!(
            "epoch {:>4}  train acc {:.4}  loss {:.6}  {regime:?}",
            m.epoch, m.accuracy, m.mean_loss
        );
        if !valid.is_empty() {
            let v = trainer.evaluate(&valid, "valid");
            line.push_str(&format!("  valid acc {:.4}", v.accuracy));
            if best.as_ref().is_none_or(|(acc, _)| v.accuracy > *acc) {
                best = Some((v.accuracy, snapshot(&trainer)));
            }
            rows.push(v);
        }
        for r in &rows {
            writeln!(metrics, "{}", r.csv_row()).map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        println!("{line}");
    }
    let ck = match best {
        Some((_, ck)) => ck,
        None => snapshot(&trainer),
    };
    ck.save(&args.checkpoint).map_err(|e| Failure::Runtime(e.to_string()))?;

    let model_trainer = Trainer::from_parts(ck.model.clone(), trainer.config.clone(), None, ck.epochs_completed)
        .with_execution(trainer.execution);
    let tr = model_trainer.evaluate(&train, "train");
    let te = model_trainer.evaluate(&test, "test");
    println!(
        "checkpoint {} (epoch {})  train acc {:.4}  test acc {:.4}  test loss {:.6}",
        args.checkpoint.display(),
        ck.epochs_completed,
        tr.accuracy,
        te.accuracy,
        te.mean_loss
    );
    Ok(())
}

fn load_checkpoint_for(path: &Path, task: Task) -> Result<Checkpoint, Failure> {
    let ck = Checkpoint::load(path)?;
    if ck.model.n_inputs() != task.n_inputs() || ck.model.n_outputs() != task.n_classes() {
        return Err(Failure::Checkpoint(format!(
            "{} has {} inputs and {} outputs; task {task} needs {} and {}",
            path.display(),
            ck.model.n_inputs(),
            ck.model.n_outputs(),
            task.n_inputs(),
            task.n_classes()
        )));
    }
    Ok(ck)
}

fn data_seed(ck: &Checkpoint, seed: Option<u64>) -> u64 {
    seed.or(ck.config.as_ref().map(|c| c.seed)).unwrap_or(0)
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let ck = load_checkpoint_for(&args.checkpoint, args.data.task)?;
    let data = load_split(&args.data, args.split, data_seed(&ck, args.seed), args.limit)?;
    if data.is_empty() {
        return Err(Failure::Input("evaluation set is empty".into()));
    }
    let m = training::evaluate(&ck.model, &data, ck.epochs_completed, "eval", Execution::Parallel);
    println!("examples {}", data.len());
    println!("accuracy {:.4}", m.accuracy);
    println!("mean_loss {:.6}", m.mean_loss);
    Ok(())
}

fn cmd_dream(args: DreamArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = DreamConfig {
        learning_rate: args.learning_rate,
        max_iterations: args.max_iterations,
        clip_derivative: ck.config.as_ref().map_or(100.0, |c| c.clip_derivative),
        ..DreamConfig::new(args.class)
    };
    let d = introspection::dream(&ck.model, &cfg).map_err(|e| match e {
        introspection::DreamError::BadTarget { .. } => Failure::Input(e.to_string()),
        introspection::DreamError::NoConvergence(_) => Failure::Runtime(e.to_string()),
    })?;
    let n = d.image.len();
    let side = (n as f64).sqrt() as usize;
    let square = side * side == n && n > 4;
    println!("class {} reached after {} iterations", args.class, d.iterations);
    match &args.output {
        Some(path) if square => write_file(path, &introspection::pgm(&d.image))?,
        Some(path) => write_file(path, introspection::times_text(&d.image, n).as_bytes())?,
        None => print!("{}", introspection::times_text(&d.image, if square { side } else { n })),
    }
    Ok(())
}

fn cmd_raster(args: RasterArgs) -> Result<(), Failure> {
    let ck = load_checkpoint_for(&args.checkpoint, args.data.task)?;
    let data = load_split(&args.data, args.split, data_seed(&ck, args.seed), Some(args.index + 1))?;
    let ex = data
        .get(args.index)
        .ok_or_else(|| Failure::Input(format!("example {} out of range ({} available)", args.index, data.len())))?;
    let trace = network::forward(&ck.model, &ex.input_times);
    let csv = introspection::raster_csv(&introspection::export_raster(&ck.model, &trace));
    match &args.output {
        Some(path) => write_file(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let pred = network::predict(trace.outputs()).map_or("none".to_string(), |c| c.to_string());
    eprintln!("label {}  predicted {pred}", ex.label);
    Ok(())
}

/// Probes closer than this to an interval boundary are not scored.
const BOUNDARY_MARGIN: f64 = 1e-6;

fn in_window(t: SpikeTime, lo: f64, eps: f64) -> bool {
    t.time().is_some_and(|t| t > lo && t < lo + eps)
}

fn cmd_approx(args: ApproxArgs) -> Result<(), Failure> {
    let (tau, theta, probes) = (args.decay_constant, args.fire_threshold, args.probes.max(2));
    let infeasible = |e: approximator::InfeasibleConfig| Failure::Input(e.to_string());
    let grid = |k: usize| k as f64 / (probes - 1) as f64;
    match args.kind {
        ApproxKind::Gadget { direction, t0, t_out, epsilon } => {
            let dir = match direction {
                DirectionArg::Below => Direction::Below,
                DirectionArg::Above => Direction::Above,
            };
            let g = approximator::build_threshold_gadget(dir, t0, t_out, epsilon, tau, theta).map_err(infeasible)?;
            let (mut scored, mut violations) = (0, 0);
            for x in (0..probes).map(grid) {
                if (x - t0).abs() < BOUNDARY_MARGIN {
                    continue;
                }
                scored += 1;
                let out = g.respond(x);
                let ok = if g.predicate(x) { in_window(out, t_out, epsilon) } else { out.is_never() };
                if !ok {
                    violations += 1;
                }
            }
            println!("gadget {direction:?} t0 {t0} window ({t_out}, {})", t_out + epsilon, direction = dir);
            println!("probes {scored}");
            println!("violations {violations}");
        }
        ApproxKind::Box { intervals, t, epsilon } => {
            let b = approximator::build_box_detector(&intervals, t, epsilon, tau, theta).map_err(infeasible)?;
            let n = intervals.len();
            let (mut scored, mut violations) = (0, 0);
            for k in 0..probes {
                // Low-discrepancy points; the plain grid in one dimension.
                let x: Vec<f64> = if n == 1 {
                    vec![grid(k)]
                } else {
                    (0..n)
                        .map(|d| ((k as f64 + 0.5) * (2.0f64 + d as f64).sqrt()).fract())
                        .collect()
                };
                let near = intervals
                    .iter()
                    .zip(&x)
                    .any(|(&(lo, hi), &v)| (v - lo).abs() < BOUNDARY_MARGIN || (v - hi).abs() < BOUNDARY_MARGIN);
                if near {
                    continue;
                }
                scored += 1;
                let out = b.respond(&x);
                let ok = if b.contains(&x) { in_window(out, t, epsilon) } else { out.is_never() };
                if !ok {
                    violations += 1;
                }
            }
            println!("box {intervals:?} window ({t}, {})", t + epsilon);
            println!("neurons {} (computing {})", b.neuron_count(), b.shared_size());
            println!("probes {scored}");
            println!("violations {violations}");
        }
        ApproxKind::Function { target, epsilon } => {
            let net = approximator::build_approximator(|x: &[f64]| target.eval(x[0]), 1, target.lipschitz(), epsilon, tau, theta)
                .map_err(infeasible)?;
            let mut max_err: f64 = 0.0;
            for x in (0..probes).map(grid) {
                let err = match net.evaluate(&[x]).time() {
                    Some(g) => (g - target.eval(x)).abs(),
                    None => f64::INFINITY,
                };
                max_err = max_err.max(err);
            }
            println!("cells {}", net.cells_per_dim);
            println!("neurons {}", net.neuron_count());
            println!("bound {}", net.theorem_bound());
            println!("probes {probes}");
            println!("max_error {max_err:.6} (epsilon {epsilon})");
            if !(max_err < epsilon) {
                return Err(Failure::Runtime(format!("max error {max_err} is not below epsilon {epsilon}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dream(a) => cmd_dream(a),
        Command::ApproxDemo(a) => cmd_approx(a),
        Command::Raster(a) => cmd_raster(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
