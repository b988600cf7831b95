//! Temporally encoded datasets: Boolean gates, concentric circles, and MNIST.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::SpikeTime;

/// Interval a True input is drawn from; False inputs use `FALSE_BAND`.
pub const TRUE_BAND: (f64, f64) = (0.0, 0.45);
pub const FALSE_BAND: (f64, f64) = (0.55, 1.0);

pub const CIRCLE_CENTER: (f64, f64) = (0.5, 0.5);
pub const INNER_RADIUS: f64 = 0.3;
pub const ANNULUS: (f64, f64) = (0.4, 0.5);

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const SIDE: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input_times: Vec<SpikeTime>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    And,
    Or,
    Xor,
    Circles,
    Mnist,
}

impl Task {
    pub fn n_inputs(self) -> usize {
        match self {
            Task::Mnist => SIDE * SIDE,
            _ => 2,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Mnist => 10,
            _ => 2,
        }
    }

    pub fn is_synthetic(self) -> bool {
        self != Task::Mnist
    }

    fn gate(self, a: bool, b: bool) -> Option<bool> {
        match self {
            Task::And => Some(a && b),
            Task::Or => Some(a || b),
            Task::Xor => Some(a ^ b),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::And => "and",
            Task::Or => "or",
            Task::Xor => "xor",
            Task::Circles => "circles",
            Task::Mnist => "mnist",
        })
    }
}

impl FromStr for Task {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Ok(Task::And),
            "or" => Ok(Task::Or),
            "xor" => Ok(Task::Xor),
            "circles" => Ok(Task::Circles),
            "mnist" => Ok(Task::Mnist),
            other => Err(DatasetError::UnknownTask(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("{0} is not a Boolean gate")]
    NotBoolean(Task),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX data: {0}")]
    Format(String),
    #[error("{images} images but {labels} labels")]
    Length { images: usize, labels: usize },
    #[error("bad example line {line}: {reason}")]
    Text { line: usize, reason: String },
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

/// `n` examples of a two-input gate. Each input is True with probability
/// one half; label 0 is True.
pub fn gen_boolean(task: Task, n: usize, seed: u64) -> Result<Vec<Example>, DatasetError> {
    task.gate(false, false).ok_or(DatasetError::NotBoolean(task))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let a: bool = rng.random();
            let b: bool = rng.random();
            let mut draw = |v: bool| SpikeTime::at(uniform(&mut rng, if v { TRUE_BAND } else { FALSE_BAND }));
            let input_times = vec![draw(a), draw(b)];
            Example {
                input_times,
                label: boolean_label(task.gate(a, b).unwrap()),
            }
        })
        .collect())
}

pub fn boolean_label(truth: bool) -> usize {
    if truth {
        0
    } else {
        1
    }
}

/// Truth value an input time encodes; `None` in the gap between bands.
pub fn decode_boolean(t: f64) -> Option<bool> {
    if (TRUE_BAND.0..=TRUE_BAND.1).contains(&t) {
        Some(true)
    } else if (FALSE_BAND.0..=FALSE_BAND.1).contains(&t) {
        Some(false)
    } else {
        None
    }
}

/// Label a Boolean example from its input times.
pub fn boolean_truth(task: Task, times: [f64; 2]) -> Option<usize> {
    let a = decode_boolean(times[0])?;
    let b = decode_boolean(times[1])?;
    task.gate(a, b).map(boolean_label)
}

/// Points uniform by area in the inner disk (class 0) or the annulus
/// (class 1), each class with probability one half. Coordinates are the two
/// input spike times.
pub fn gen_circles(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let inner: bool = rng.random();
            let (r0, r1) = if inner { (0.0, INNER_RADIUS) } else { ANNULUS };
            let r = (r0 * r0 + rng.random::<f64>() * (r1 * r1 - r0 * r0)).sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let x = CIRCLE_CENTER.0 + r * phi.cos();
            let y = CIRCLE_CENTER.1 + r * phi.sin();
            Example {
                input_times: vec![SpikeTime::at(x), SpikeTime::at(y)],
                label: if inner { 0 } else { 1 },
            }
        })
        .collect()
}

/// Class of a point by its distance from the center; `None` in the gap.
pub fn circle_class(x: f64, y: f64) -> Option<usize> {
    let r = (x - CIRCLE_CENTER.0).hypot(y - CIRCLE_CENTER.1);
    if r <= INNER_RADIUS {
        Some(0)
    } else if (ANNULUS.0..=ANNULUS.1).contains(&r) {
        Some(1)
    } else {
        None
    }
}

/// Any synthetic task.
pub fn generate(task: Task, n: usize, seed: u64) -> Result<Vec<Example>, DatasetError> {
    match task {
        Task::Circles => Ok(gen_circles(n, seed)),
        Task::Mnist => Err(DatasetError::NotBoolean(task)),
        _ => gen_boolean(task, n, seed),
    }
}

/// Pixel intensity to spike time: full ink at 0, linear to 1, blank never.
pub fn encode_pixel(raw: u8) -> SpikeTime {
    if raw == 0 {
        SpikeTime::NEVER
    } else {
        SpikeTime::at(1.0 - raw as f64 / 255.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, image after image.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DatasetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DatasetError::Format("truncated header".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DatasetError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DatasetError::Format(format!("image magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(DatasetError::Format(format!("images are {rows}x{cols}, expected {SIDE}x{SIDE}")));
    }
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(DatasetError::Format(format!(
            "header declares {n} images but body has {} bytes",
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DatasetError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DatasetError::Format(format!("label magic {magic}, expected {LABEL_MAGIC}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DatasetError::Format(format!(
            "header declares {n} labels but body has {} bytes",
            body.len()
        )));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(DatasetError::Format(format!("label {bad} out of range")));
    }
    Ok(body.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            MnistSplit::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            MnistSplit::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load and encode an MNIST split from the standard IDX files in `dir`,
/// keeping at most `limit` examples (in file order).
pub fn load_mnist(dir: &Path, split: MnistSplit, limit: Option<usize>) -> Result<Vec<Example>, DatasetError> {
    let (img_name, lbl_name) = split.file_names();
    let images = parse_idx_images(&read(&dir.join(img_name))?)?;
    let labels = parse_idx_labels(&read(&dir.join(lbl_name))?)?;
    if images.len() != labels.len() {
        return Err(DatasetError::Length {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let n = limit.map_or(labels.len(), |l| l.min(labels.len()));
    Ok((0..n)
        .map(|i| Example {
            input_times: images.image(i).iter().map(|&p| encode_pixel(p)).collect(),
            label: labels[i] as usize,
        })
        .collect())
}

/// Seeded shuffle, then the first `round(fraction * n)` go to the first part.
pub fn split_train_valid(mut examples: Vec<Example>, fraction: f64, seed: u64) -> (Vec<Example>, Vec<Example>) {
    assert!(fraction > 0.0 && fraction < 1.0, "fraction must be in (0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    let n_train = (fraction * examples.len() as f64).round() as usize;
    let valid = examples.split_off(n_train);
    (examples, valid)
}

/// One example per line: comma-separated spike times, `;`, label.
pub fn to_text(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        let times: Vec<String> = ex.input_times.iter().map(SpikeTime::to_string).collect();
        out.push_str(&times.join(","));
        out.push(';');
        out.push_str(&ex.label.to_string());
        out.push('\n');
    }
    out
}

pub fn from_text(text: &str) -> Result<Vec<Example>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let err = |reason: String| DatasetError::Text { line: i + 1, reason };
            let (times, label) = line.split_once(';').ok_or_else(|| err("missing ';'".into()))?;
            let input_times = times
                .split(',')
                .map(|t| t.trim().parse::<SpikeTime>().map_err(|e| err(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let label = label.trim().parse().map_err(|_| err(format!("bad label '{label}'")))?;
            Ok(Example { input_times, label })
        })
        .collect()
}
