//! The online testing stage: enroll reference embeddings into a gallery,
//! pair the claimed identity's reference with the probe image, and decide
//! real vs fake by thresholded embedding distance.
//!
//! The decision rule is `REAL iff distance < threshold`; a distance exactly
//! at the threshold fails closed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{ImageRecord, Liveness};
use crate::error::{Error, Result};
use crate::eval::{threshold_sweep, ConfusionCounts, MetricsReport};
use crate::siamese::{pair_distance, SiameseModel};
use crate::tensor::Tensor;

const GALLERY_MAGIC: &[u8; 8] = b"IDLV-GAL";
const GALLERY_VERSION: u32 = 1;

/// SHA-256 over the architecture descriptor and the canonical flat parameter
/// vector; identifies which trained model produced a gallery's embeddings.
pub fn model_digest(model: &SiameseModel) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(model.arch().to_string().as_bytes());
    for v in model.network().store().to_flat() {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Default decision threshold when no calibration has been run: half the
/// training margin, the midpoint of where the loss pushes the two classes.
pub fn default_threshold(margin: f64) -> f64 {
    margin / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Real,
    Fake,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Real => write!(f, "REAL"),
            Verdict::Fake => write!(f, "FAKE"),
        }
    }
}

/// Outcome of one verification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub distance: f64,
    pub threshold: f64,
    pub client_id: String,
}

/// One client's enrolled reference embedding plus its source path for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub embedding: Tensor,
    pub source: String,
}

/// Reference embeddings keyed by client, tied to one model via its digest.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    model_digest: [u8; 32],
    embedding_dim: usize,
    entries: BTreeMap<String, GalleryEntry>,
}

impl Gallery {
    pub fn new(model: &SiameseModel) -> Gallery {
        Gallery {
            model_digest: model_digest(model),
            embedding_dim: model.embedding_dim(),
            entries: BTreeMap::new(),
        }
    }

    pub fn model_digest(&self) -> [u8; 32] {
        self.model_digest
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reference(&self, client_id: &str) -> Option<&GalleryEntry> {
        self.entries.get(client_id)
    }

    pub fn clients(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Stores the embedding of a real-labeled reference image for a client,
    /// replacing any previous entry. Fake-labeled images are rejected.
    pub fn enroll(
        &mut self,
        client_id: &str,
        image: &ImageRecord,
        model: &SiameseModel,
    ) -> Result<()> {
        if image.label != Liveness::Real {
            return Err(Error::FakeReference {
                client_id: client_id.to_string(),
            });
        }
        let embedding = model.embed(&image.pixels)?;
        self.entries.insert(
            client_id.to_string(),
            GalleryEntry {
                embedding,
                source: image.source.to_string_lossy().into_owned(),
            },
        );
        Ok(())
    }

    /// Serializes the gallery: magic, version, model digest, embedding dim,
    /// then per-client records in client order. Deterministic bytes.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(GALLERY_MAGIC)?;
        w.write_all(&GALLERY_VERSION.to_le_bytes())?;
        w.write_all(&self.model_digest)?;
        w.write_all(&(self.embedding_dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (client_id, entry) in &self.entries {
            write_str(w, client_id)?;
            write_str(w, &entry.source)?;
            for v in entry.embedding.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes).expect("in-memory write cannot fail");
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Gallery> {
        let file = "gallery";
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, file, "magic")?;
        if &magic != GALLERY_MAGIC {
            return Err(Error::BadMagic {
                file: file.into(),
                expected: String::from_utf8_lossy(GALLERY_MAGIC).into_owned(),
            });
        }
        let version = read_u32(r, file, "version")?;
        if version != GALLERY_VERSION {
            return Err(Error::BadVersion {
                file: file.into(),
                found: version,
                expected: GALLERY_VERSION,
            });
        }
        let mut model_digest = [0u8; 32];
        read_exact(r, &mut model_digest, file, "model digest")?;
        let embedding_dim = read_u32(r, file, "embedding dim")? as usize;
        let count = read_u32(r, file, "entry count")? as usize;
        let mut entries = BTreeMap::new();
        for i in 0..count {
            let client_id = read_str(r, file, "client id")?;
            let source = read_str(r, file, "source path")?;
            let mut values = vec![0.0; embedding_dim];
            for v in values.iter_mut() {
                let mut buf = [0u8; 8];
                read_exact(r, &mut buf, file, "embedding values")?;
                *v = f64::from_le_bytes(buf);
            }
            entries.insert(
                client_id,
                GalleryEntry {
                    embedding: Tensor::from_vec(values),
                    source,
                },
            );
            if entries.len() != i + 1 {
                return Err(Error::CorruptFile {
                    file: file.into(),
                    detail: "duplicate client record".into(),
                });
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(file, e))? != 0 {
            return Err(Error::CorruptFile {
                file: file.into(),
                detail: "trailing bytes after last record".into(),
            });
        }
        Ok(Gallery {
            model_digest,
            embedding_dim,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Gallery> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Gallery::read_from(&mut bytes.as_slice())
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], file: &str, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::TruncatedFile {
        file: file.into(),
        detail: format!("while reading {what}"),
    })
}

fn read_u32(r: &mut impl Read, file: &str, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, file, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read, file: &str, what: &str) -> Result<String> {
    let len = read_u32(r, file, what)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf, file, what)?;
    String::from_utf8(buf).map_err(|_| Error::CorruptFile {
        file: file.into(),
        detail: format!("{what} is not valid UTF-8"),
    })
}

/// Verifies a probe image against the claimed client's enrolled reference.
pub fn verify(
    model: &SiameseModel,
    gallery: &Gallery,
    client_id: &str,
    image: &Tensor,
    threshold: f64,
) -> Result<Decision> {
    if !(threshold > 0.0) {
        return Err(Error::BadThreshold(threshold));
    }
    let entry = gallery
        .reference(client_id)
        .ok_or_else(|| Error::UnknownClient(client_id.to_string()))?;
    let probe = model.embed(image)?;
    let distance = pair_distance(&entry.embedding, &probe)?;
    Ok(Decision {
        verdict: if distance < threshold {
            Verdict::Real
        } else {
            Verdict::Fake
        },
        distance,
        threshold,
        client_id: client_id.to_string(),
    })
}

/// Picks the candidate threshold minimizing HTER on a labeled dev set; ties
/// break toward lower FRR, then smaller threshold. Returns the winning
/// threshold and the metrics at that threshold.
pub fn calibrate_threshold(
    model: &SiameseModel,
    gallery: &Gallery,
    dev_samples: &[ImageRecord],
) -> Result<(f64, MetricsReport)> {
    let mut distances = Vec::with_capacity(dev_samples.len());
    let mut truths = Vec::with_capacity(dev_samples.len());
    for sample in dev_samples {
        let entry = gallery
            .reference(&sample.client_id)
            .ok_or_else(|| Error::UnknownClient(sample.client_id.clone()))?;
        let probe = model.embed(&sample.pixels)?;
        distances.push(pair_distance(&entry.embedding, &probe)?);
        truths.push(sample.label);
    }
    if !truths.contains(&Liveness::Real) || !truths.contains(&Liveness::Fake) {
        return Err(Error::MissingClass {
            context: "calibrate_threshold",
        });
    }

    let sweep = threshold_sweep(&distances, &truths)?;
    let best = sweep
        .iter()
        .copied()
        .reduce(|best, p| {
            let better = (p.hter, p.frr, p.tau) < (best.hter, best.frr, best.tau);
            if better {
                p
            } else {
                best
            }
        })
        .expect("sweep has at least one candidate");

    let mut counts = ConfusionCounts::default();
    for (&d, &truth) in distances.iter().zip(&truths) {
        let accepted = d < best.tau;
        match (truth, accepted) {
            (Liveness::Real, true) => counts.real_accepted += 1,
            (Liveness::Real, false) => counts.real_rejected += 1,
            (Liveness::Fake, true) => counts.fake_accepted += 1,
            (Liveness::Fake, false) => counts.fake_rejected += 1,
        }
    }
    Ok((best.tau, MetricsReport::from_counts(best.tau, counts)?))
}
