//! CIFAR-10 binary batches: 3073-byte records, a label byte followed by
//! 1024 red, 1024 green and 1024 blue pixels in row-major order.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::trainer::Dataset;

pub const RECORD_LEN: usize = 3073;
pub const PIXELS: usize = 3072;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub dir: PathBuf,
    pub train_files: Vec<String>,
    pub test_files: Vec<String>,
    /// Training examples to keep; `None` keeps everything.
    pub subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Seeds the subset draw.
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            dir: PathBuf::from("data/cifar-10-batches-bin"),
            train_files: (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            test_files: vec!["test_batch.bin".into()],
            subset: None,
            test_subset: None,
            seed: 0,
        }
    }
}

/// Per-channel statistics of the loaded training subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

struct Raw {
    labels: Vec<u8>,
    pixels: Vec<u8>,
}

fn read_files(dir: &Path, files: &[String]) -> Result<Raw> {
    let mut raw = Raw {
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    for name in files {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % RECORD_LEN != 0 {
            return Err(Error::MalformedRecord {
                path,
                reason: format!("length {} is not a multiple of {RECORD_LEN}", bytes.len()),
            });
        }
        for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
            if rec[0] as usize >= CLASSES {
                return Err(Error::MalformedRecord {
                    path,
                    reason: format!("record {i} has label {}", rec[0]),
                });
            }
            raw.labels.push(rec[0]);
            raw.pixels.extend_from_slice(&rec[1..]);
        }
    }
    Ok(raw)
}

/// Keeps `k` records chosen by `seed`, in their original file order.
fn take_subset(raw: Raw, k: Option<usize>, seed: u64) -> Raw {
    let n = raw.labels.len();
    let Some(k) = k.filter(|&k| k < n) else {
        return raw;
    };
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, k).into_vec();
    idx.sort_unstable();
    Raw {
        labels: idx.iter().map(|&i| raw.labels[i]).collect(),
        pixels: idx
            .iter()
            .flat_map(|&i| raw.pixels[i * PIXELS..(i + 1) * PIXELS].iter().copied())
            .collect(),
    }
}

fn stats(raw: &Raw) -> Normalization {
    let mut norm = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
    let n = raw.labels.len();
    if n == 0 {
        return norm;
    }
    for c in 0..3 {
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for img in raw.pixels.chunks_exact(PIXELS) {
            for &p in &img[c * 1024..(c + 1) * 1024] {
                let v = p as f64 / 255.0;
                s += v;
                s2 += v * v;
            }
        }
        let count = (n * 1024) as f64;
        let mean = s / count;
        let var = (s2 / count - mean * mean).max(0.0);
        norm.mean[c] = mean;
        norm.std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    norm
}

fn to_dataset(raw: Raw, norm: &Normalization) -> Dataset {
    let images = raw
        .pixels
        .chunks_exact(1024)
        .enumerate()
        .flat_map(|(plane, px)| {
            let c = plane % 3;
            px.iter()
                .map(move |&p| ((p as f64 / 255.0 - norm.mean[c]) / norm.std[c]) as f32)
        })
        .collect();
    Dataset {
        channels: 3,
        height: 32,
        width: 32,
        images,
        labels: raw.labels,
    }
}

/// Loads train and test splits, normalising both with statistics of the
/// (possibly subsetted) training split.
pub fn load_cifar10(spec: &DatasetSpec) -> Result<(Dataset, Dataset, Normalization)> {
    let train = take_subset(read_files(&spec.dir, &spec.train_files)?, spec.subset, spec.seed);
    let test = take_subset(
        read_files(&spec.dir, &spec.test_files)?,
        spec.test_subset,
        spec.seed.wrapping_add(1),
    );
    let norm = stats(&train);
    Ok((to_dataset(train, &norm), to_dataset(test, &norm), norm))
}

/// Shape of a generated stand-in dataset in CIFAR-10 binary format.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_files: usize,
    pub per_file: usize,
    pub test: usize,
    /// Pixel noise standard deviation, in 0–255 units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_files: 5,
            per_file: 200,
            test: 400,
            noise: 48.0,
            seed: 0,
        }
    }
}

struct ClassPattern {
    colour: [f64; 3],
    freq: f64,
    angle: f64,
    blob: (f64, f64),
}

fn synth_record(p: &ClassPattern, label: u8, noise: f64, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
    let gauss = Normal::new(0.0, noise).expect("finite noise");
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let contrast = rng.random_range(0.5..1.0);
    let (dx, dy) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
    let (s, c) = p.angle.sin_cos();
    out.push(label);
    for ch in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                let (fx, fy) = (x as f64, y as f64);
                let wave = ((fx * c + fy * s) * p.freq + phase).sin();
                let (bx, by) = (fx - p.blob.0 - dx, fy - p.blob.1 - dy);
                let blob = (-(bx * bx + by * by) / 40.0).exp();
                let v = 128.0 + contrast * (60.0 * wave * p.colour[ch] + 70.0 * blob * (1.0 - p.colour[ch]))
                    + gauss.sample(rng);
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

/// Writes `data_batch_{1..}.bin` and `test_batch.bin` holding a learnable
/// 10-class problem (oriented colour gratings plus a class-placed blob).
pub fn write_synthetic_cifar(dir: &Path, spec: &SyntheticSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let patterns: Vec<ClassPattern> = (0..CLASSES)
        .map(|k| ClassPattern {
            colour: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            freq: 0.35 + 0.08 * (k % 5) as f64,
            angle: std::f64::consts::PI * k as f64 / CLASSES as f64,
            blob: (rng.random_range(8.0..24.0), rng.random_range(8.0..24.0)),
        })
        .collect();
    let write = |name: String, n: usize, rng: &mut ChaCha8Rng| -> Result<()> {
        let mut buf = Vec::with_capacity(n * RECORD_LEN);
        for i in 0..n {
            let label = (i % CLASSES) as u8;
            synth_record(&patterns[label as usize], label, spec.noise, rng, &mut buf);
        }
        let path = dir.join(name);
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    };
    for f in 1..=spec.train_files {
        write(format!("data_batch_{f}.bin"), spec.per_file, &mut rng)?;
    }
    write("test_batch.bin".into(), spec.test, &mut rng)
}
