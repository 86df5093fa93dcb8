//! On-disk dataset convention, preprocessing, and the pair-construction
//! protocol.
//!
//! Layout: `<root>/<split>/<client_id>/{real,fake}/*.pgm` with
//! `split in {train, dev, test}`. File lists are sorted lexicographically
//! before any seeded sampling so pair construction is platform-independent.
//!
//! For each real image of a client, `build_pairs` emits one positive pair
//! (with a randomly chosen *other* real image of the same client) and one
//! negative pair (with a randomly chosen fake image of the same client).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pnm::{decode_image, RawImage};
use crate::siamese::{LabeledPair, PairLabel};
use crate::tensor::Tensor;

/// Ground-truth liveness of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Liveness {
    Real,
    Fake,
}

/// One enrolled identity's image files.
#[derive(Debug, Clone, Default)]
pub struct ClientRecord {
    pub client_id: String,
    pub real_images: Vec<PathBuf>,
    pub fake_images: Vec<PathBuf>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

/// All clients of one split, sorted by client id.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: String,
    pub clients: Vec<ClientRecord>,
}

impl DatasetSplit {
    pub fn total_real(&self) -> usize {
        self.clients.iter().map(|c| c.real_images.len()).sum()
    }

    pub fn total_fake(&self) -> usize {
        self.clients.iter().map(|c| c.fake_images.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    /// Every image of the split as `(path, client_id, liveness)`, in
    /// deterministic client-then-file order.
    pub fn images(&self) -> Vec<(PathBuf, String, Liveness)> {
        let mut out = Vec::new();
        for client in &self.clients {
            for p in &client.real_images {
                out.push((p.clone(), client.client_id.clone(), Liveness::Real));
            }
            for p in &client.fake_images {
                out.push((p.clone(), client.client_id.clone(), Liveness::Fake));
            }
        }
        out
    }
}

/// The three splits of a dataset root.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
}

/// A decoded, preprocessed image with its provenance.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub pixels: Tensor,
    pub source: PathBuf,
    pub client_id: String,
    pub label: Liveness,
}

/// Nearest-neighbor resize to `target_h x target_w`, then scale into [0,1].
/// Source index for output row `i` is `floor(i * height / target_h)`.
pub fn preprocess(raw: &RawImage, target_h: usize, target_w: usize) -> Tensor {
    let mut values = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let sy = y * raw.height / target_h;
        for x in 0..target_w {
            let sx = x * raw.width / target_w;
            values.push(raw.samples[sy * raw.width + sx] as f64 / 255.0);
        }
    }
    Tensor::new(vec![1, target_h, target_w], values).expect("shape matches construction")
}

/// Reads, decodes, and preprocesses one image file.
pub fn load_image(
    path: &Path,
    client_id: &str,
    label: Liveness,
    target_h: usize,
    target_w: usize,
) -> Result<ImageRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_image(&bytes)?;
    Ok(ImageRecord {
        pixels: preprocess(&raw, target_h, target_w),
        source: path.to_path_buf(),
        client_id: client_id.to_string(),
        label,
    })
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") | Some("ppm") => files.push(path),
            _ => warn!("skipping non-image file {}", path.display()),
        }
    }
    files.sort();
    Ok(files)
}

fn load_split(root: &Path, name: &str) -> Result<DatasetSplit> {
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(Error::MissingSplit(dir));
    }
    let mut clients = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let client_id = entry.file_name().to_string_lossy().into_owned();
        let real_images = list_images(&path.join("real"))?;
        let fake_images = list_images(&path.join("fake"))?;
        if real_images.is_empty() {
            warn!("client {client_id} in split {name} has no real images; it cannot be enrolled or pair-sampled");
        }
        clients.push(ClientRecord {
            client_id,
            real_images,
            fake_images,
        });
    }
    clients.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    Ok(DatasetSplit {
        name: name.to_string(),
        clients,
    })
}

/// Indexes all three splits under `root`. The train split must contain at
/// least one client; empty dev/test splits only warn.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let train = load_split(root, "train")?;
    let dev = load_split(root, "dev")?;
    let test = load_split(root, "test")?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    for split in [&train, &dev, &test] {
        if split.is_empty() {
            warn!("split {} has no clients", split.name);
        }
        info!(
            "split {}: {} clients, {} real / {} fake images",
            split.name,
            split.clients.len(),
            split.total_real(),
            split.total_fake()
        );
        for client in &split.clients {
            info!(
                "  {}: {} real / {} fake",
                client.client_id,
                client.real_images.len(),
                client.fake_images.len()
            );
        }
    }
    Ok(Dataset { train, dev, test })
}

/// A pair chosen by the protocol, referencing image files rather than pixel
/// data; materialize with [`materialize_pairs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub a: PathBuf,
    pub b: PathBuf,
    pub label: PairLabel,
    pub client_id: String,
}

/// Runs the pair-construction protocol over one split.
///
/// Sampling is with replacement across the counterpart pool, a real image is
/// never paired with itself, and reals lacking a partner or a fake are
/// skipped with a warning.
pub fn build_pairs(split: &DatasetSplit, seed: u64) -> Result<Vec<PairSample>> {
    if split.is_empty() {
        return Err(Error::EmptySplit(split.name.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clients: Vec<&ClientRecord> = split.clients.iter().collect();
    clients.sort_by(|a, b| a.client_id.cmp(&b.client_id));

    let mut pairs = Vec::new();
    for client in clients {
        let reals = &client.real_images;
        let fakes = &client.fake_images;
        for (i, real) in reals.iter().enumerate() {
            if reals.len() >= 2 {
                // Uniform over the other reals: skip index i.
                let mut j = rng.gen_range(0..reals.len() - 1);
                if j >= i {
                    j += 1;
                }
                pairs.push(PairSample {
                    a: real.clone(),
                    b: reals[j].clone(),
                    label: PairLabel::Positive,
                    client_id: client.client_id.clone(),
                });
            } else {
                warn!(
                    "client {}: no distinct real partner for {}; skipping positive pair",
                    client.client_id,
                    real.display()
                );
            }
            if !fakes.is_empty() {
                let j = rng.gen_range(0..fakes.len());
                pairs.push(PairSample {
                    a: real.clone(),
                    b: fakes[j].clone(),
                    label: PairLabel::Negative,
                    client_id: client.client_id.clone(),
                });
            } else {
                warn!(
                    "client {}: no fake counterpart for {}; skipping negative pair",
                    client.client_id,
                    real.display()
                );
            }
        }
    }
    Ok(pairs)
}

/// Loads and preprocesses the images behind a list of pair samples. Each
/// distinct file is decoded once.
pub fn materialize_pairs(
    samples: &[PairSample],
    target_h: usize,
    target_w: usize,
) -> Result<Vec<LabeledPair>> {
    let mut cache: HashMap<PathBuf, Tensor> = HashMap::new();
    let mut fetch = |path: &PathBuf| -> Result<Tensor> {
        if let Some(t) = cache.get(path) {
            return Ok(t.clone());
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensor = preprocess(&decode_image(&bytes)?, target_h, target_w);
        cache.insert(path.clone(), tensor.clone());
        Ok(tensor)
    };
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        out.push(LabeledPair {
            a: fetch(&s.a)?,
            b: fetch(&s.b)?,
            label: s.label,
            client_id: s.client_id.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pnm::encode_pgm;

    fn client(id: &str, reals: usize, fakes: usize) -> ClientRecord {
        ClientRecord {
            client_id: id.to_string(),
            real_images: (0..reals).map(|i| PathBuf::from(format!("{id}/real/r{i:03}.pgm"))).collect(),
            fake_images: (0..fakes).map(|i| PathBuf::from(format!("{id}/fake/f{i:03}.pgm"))).collect(),
        }
    }

    fn split_of(clients: Vec<ClientRecord>) -> DatasetSplit {
        DatasetSplit {
            name: "train".into(),
            clients,
        }
    }

    #[test]
    fn preprocess_identity_size_scales_by_255() {
        let raw = RawImage {
            width: 2,
            height: 2,
            source_channels: 1,
            samples: vec![0, 128, 255, 51],
        };
        let t = preprocess(&raw, 2, 2);
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(
            t.values(),
            &[0.0, 128.0 / 255.0, 1.0, 51.0 / 255.0]
        );
    }

    #[test]
    fn preprocess_constant_255_gives_all_ones() {
        let raw = RawImage {
            width: 3,
            height: 5,
            source_channels: 1,
            samples: vec![255; 15],
        };
        let t = preprocess(&raw, 4, 4);
        assert!(t.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn nearest_neighbor_upscale_replicates_blocks() {
        let raw = RawImage {
            width: 2,
            height: 2,
            source_channels: 1,
            samples: vec![10, 20, 30, 40],
        };
        let t = preprocess(&raw, 4, 4);
        let v = t.values();
        let px = |s: u8| s as f64 / 255.0;
        for y in 0..4 {
            for x in 0..4 {
                let expect = match (y / 2, x / 2) {
                    (0, 0) => px(10),
                    (0, 1) => px(20),
                    (1, 0) => px(30),
                    _ => px(40),
                };
                assert_eq!(v[y * 4 + x], expect, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn build_pairs_nuaa_shape_emits_equal_counts() {
        // 15 clients, 1743 reals / 1748 fakes in total, everyone has >= 2
        // reals and >= 1 fake: one positive and one negative per real image.
        let mut clients = Vec::new();
        let mut reals_left = 1743usize;
        let mut fakes_left = 1748usize;
        for i in 0..15 {
            let r = if i == 14 { reals_left } else { 116 };
            let f = if i == 14 { fakes_left } else { 116 };
            clients.push(client(&format!("client_{i:02}"), r, f));
            reals_left -= r;
            fakes_left -= f;
        }
        let split = split_of(clients);
        assert_eq!(split.total_real(), 1743);
        assert_eq!(split.total_fake(), 1748);

        let pairs = build_pairs(&split, 11).unwrap();
        let positives = pairs.iter().filter(|p| p.label == PairLabel::Positive).count();
        let negatives = pairs.iter().filter(|p| p.label == PairLabel::Negative).count();
        assert_eq!(positives, 1743);
        assert_eq!(negatives, 1743);
    }

    #[test]
    fn degenerate_clients_skip_missing_counterparts() {
        let split = split_of(vec![client("lonely", 1, 1)]);
        let pairs = build_pairs(&split, 0).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].label, PairLabel::Negative);

        let split = split_of(vec![client("nofakes", 2, 0)]);
        let pairs = build_pairs(&split, 0).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.label == PairLabel::Positive));
    }

    #[test]
    fn pairs_never_self_pair_and_stay_within_client() {
        let split = split_of(vec![client("a", 5, 3), client("b", 4, 2)]);
        let pairs = build_pairs(&split, 123).unwrap();
        for p in &pairs {
            assert_ne!(p.a, p.b, "self-pair emitted");
            assert!(p.a.starts_with(&p.client_id));
            assert!(p.b.starts_with(&p.client_id));
            match p.label {
                PairLabel::Positive => assert!(p.b.to_str().unwrap().contains("/real/")),
                PairLabel::Negative => assert!(p.b.to_str().unwrap().contains("/fake/")),
            }
            assert!(p.a.to_str().unwrap().contains("/real/"));
        }
    }

    #[test]
    fn build_pairs_is_seed_deterministic() {
        let split = split_of(vec![client("a", 6, 4), client("b", 3, 5)]);
        assert_eq!(build_pairs(&split, 7).unwrap(), build_pairs(&split, 7).unwrap());
        assert_ne!(build_pairs(&split, 7).unwrap(), build_pairs(&split, 8).unwrap());
    }

    #[test]
    fn load_dataset_round_trip_with_counts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for split in SPLIT_NAMES {
            for c in ["c0", "c1"] {
                for (kind, n) in [("real", 3), ("fake", 2)] {
                    let d = root.join(split).join(c).join(kind);
                    fs::create_dir_all(&d).unwrap();
                    for i in 0..n {
                        fs::write(
                            d.join(format!("img_{i:02}.pgm")),
                            encode_pgm(2, 2, &[i as u8; 4]),
                        )
                        .unwrap();
                    }
                }
            }
        }
        // A stray non-image file is skipped, not fatal.
        fs::write(root.join("train/c0/real/notes.txt"), b"hello").unwrap();

        let ds = load_dataset(root).unwrap();
        assert_eq!(ds.train.clients.len(), 2);
        assert_eq!(ds.train.total_real(), 6);
        assert_eq!(ds.train.total_fake(), 4);
        assert_eq!(ds.dev.total_real(), 6);
        assert_eq!(ds.test.total_fake(), 4);

        let pairs = build_pairs(&ds.train, 3).unwrap();
        let labeled = materialize_pairs(&pairs, 4, 4).unwrap();
        assert_eq!(labeled.len(), pairs.len());
        assert!(labeled.iter().all(|p| p.a.shape() == [1, 4, 4]));
    }

    #[test]
    fn missing_split_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("train/c0/real")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingSplit(_)));
    }

    #[test]
    fn empty_train_split_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        for split in SPLIT_NAMES {
            fs::create_dir_all(dir.path().join(split)).unwrap();
        }
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::EmptySplit(s) if s == "train"));
    }
}
