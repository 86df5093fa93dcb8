//! Synthetic spoof-dataset generator: a desk-scale stand-in for the real
//! anti-spoofing corpora, written in the standard directory layout.
//!
//! Each client gets a smooth random blob pattern. Real captures are the
//! pattern plus small sensor noise; fakes run the pattern through a spoof
//! transform (3x3 box blur, additive horizontal sinusoidal moire of
//! amplitude 16/255, contrast compression x0.8) before the same noise.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pnm::encode_pgm;

const NOISE_AMPLITUDE: f64 = 4.0 / 255.0;
const MOIRE_AMPLITUDE: f64 = 16.0 / 255.0;
const MOIRE_PERIOD: f64 = 6.0;
const CONTRAST_FACTOR: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub clients: usize,
    pub reals_per_client: usize,
    pub fakes_per_client: usize,
    pub image_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub images_written: usize,
    /// Image counts per split: train, dev, test.
    pub per_split: [usize; 3],
}

/// Smooth per-client base pattern: a handful of Gaussian blobs normalized
/// into [0.15, 0.85].
fn base_pattern(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let blob_count = rng.gen_range(4..=7);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..blob_count)
        .map(|_| {
            (
                rng.gen_range(0.0..size as f64),
                rng.gen_range(0.0..size as f64),
                rng.gen_range(size as f64 / 8.0..size as f64 / 3.0),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let mut values = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for &(cx, cy, sigma, amp) in &blobs {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                v += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
            values[y * size + x] = v;
        }
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for v in &mut values {
        *v = 0.15 + 0.7 * (*v - min) / span;
    }
    values
}

fn box_blur3(src: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut sum = 0.0;
            let mut n = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = y as i64 + dy;
                    let xx = x as i64 + dx;
                    if yy >= 0 && xx >= 0 && yy < size as i64 && xx < size as i64 {
                        sum += src[yy as usize * size + xx as usize];
                        n += 1.0;
                    }
                }
            }
            out[y * size + x] = sum / n;
        }
    }
    out
}

/// The spoof transform applied to a client's base pattern: blur, horizontal
/// moire stripes, then contrast compression toward mid-gray.
pub fn spoof_transform(base: &[f64], size: usize, moire_phase: f64) -> Vec<f64> {
    let mut out = box_blur3(base, size);
    for y in 0..size {
        let stripe =
            MOIRE_AMPLITUDE * (2.0 * std::f64::consts::PI * y as f64 / MOIRE_PERIOD + moire_phase).sin();
        for x in 0..size {
            out[y * size + x] += stripe;
        }
    }
    for v in &mut out {
        *v = 0.5 + CONTRAST_FACTOR * (*v - 0.5);
    }
    out
}

fn quantize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn add_noise(values: &mut [f64], rng: &mut ChaCha8Rng) {
    for v in values.iter_mut() {
        *v += rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
    }
}

/// 60/20/20 split of `n` images by count: train gets floor(0.6 n), dev gets
/// floor(0.2 n), test takes the remainder.
fn split_counts(n: usize) -> [usize; 3] {
    let train = n * 6 / 10;
    let dev = n * 2 / 10;
    [train, dev, n - train - dev]
}

fn split_of(index: usize, counts: &[usize; 3]) -> &'static str {
    if index < counts[0] {
        "train"
    } else if index < counts[0] + counts[1] {
        "dev"
    } else {
        "test"
    }
}

/// Writes the synthetic dataset tree. Identical configs produce
/// byte-identical trees.
pub fn synth_dataset(out_root: &Path, config: &SynthConfig) -> Result<SynthSummary> {
    if config.clients == 0
        || config.reals_per_client == 0
        || config.fakes_per_client == 0
        || config.image_size == 0
    {
        return Err(Error::BadLayer(
            "synth counts and image size must be >= 1".into(),
        ));
    }
    let size = config.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let real_counts = split_counts(config.reals_per_client);
    let fake_counts = split_counts(config.fakes_per_client);

    let mut summary = SynthSummary {
        images_written: 0,
        per_split: [0; 3],
    };
    for c in 0..config.clients {
        let client_id = format!("client_{c:02}");
        let base = base_pattern(size, &mut rng);

        for i in 0..config.reals_per_client {
            let mut img = base.clone();
            add_noise(&mut img, &mut rng);
            let split = split_of(i, &real_counts);
            write_image(out_root, split, &client_id, "real", i, size, &img)?;
            bump(&mut summary, split);
        }
        for i in 0..config.fakes_per_client {
            let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let mut img = spoof_transform(&base, size, phase);
            add_noise(&mut img, &mut rng);
            let split = split_of(i, &fake_counts);
            write_image(out_root, split, &client_id, "fake", i, size, &img)?;
            bump(&mut summary, split);
        }
    }
    Ok(summary)
}

fn bump(summary: &mut SynthSummary, split: &str) {
    summary.images_written += 1;
    let idx = match split {
        "train" => 0,
        "dev" => 1,
        _ => 2,
    };
    summary.per_split[idx] += 1;
}

fn write_image(
    out_root: &Path,
    split: &str,
    client_id: &str,
    kind: &str,
    index: usize,
    size: usize,
    values: &[f64],
) -> Result<()> {
    let dir = out_root.join(split).join(client_id).join(kind);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{kind}_{index:04}.pgm"));
    fs::write(&path, encode_pgm(size, size, &quantize(values)))
        .map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;
    use std::collections::BTreeMap;

    fn tree_digest(root: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn same_seed_produces_byte_identical_trees() {
        let cfg = SynthConfig {
            clients: 2,
            reals_per_client: 5,
            fakes_per_client: 5,
            image_size: 8,
            seed: 77,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_dataset(d1.path(), &cfg).unwrap();
        synth_dataset(d2.path(), &cfg).unwrap();
        assert_eq!(tree_digest(d1.path()), tree_digest(d2.path()));

        let d3 = tempfile::tempdir().unwrap();
        synth_dataset(d3.path(), &SynthConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(tree_digest(d1.path()), tree_digest(d3.path()));
    }

    #[test]
    fn split_arithmetic_matches_60_20_20() {
        let cfg = SynthConfig {
            clients: 10,
            reals_per_client: 40,
            fakes_per_client: 40,
            image_size: 8,
            seed: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let summary = synth_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(summary.images_written, 800);
        assert_eq!(summary.per_split, [480, 160, 160]);

        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.train.total_real() + ds.train.total_fake(), 480);
        assert_eq!(ds.dev.total_real() + ds.dev.total_fake(), 160);
        assert_eq!(ds.test.total_real() + ds.test.total_fake(), 160);
        assert_eq!(ds.train.clients.len(), 10);
    }

    #[test]
    fn spoof_transform_changes_the_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = base_pattern(16, &mut rng);
        let fake = spoof_transform(&base, 16, 0.3);
        let mad: f64 =
            base.iter().zip(&fake).map(|(a, b)| (a - b).abs()).sum::<f64>() / base.len() as f64;
        assert!(mad > 0.0);
    }

    #[test]
    fn base_pattern_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = base_pattern(12, &mut rng);
        assert!(base.iter().all(|&v| (0.15..=0.85).contains(&v)));
    }
}
