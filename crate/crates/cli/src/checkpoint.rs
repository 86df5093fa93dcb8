//! Model checkpoint persistence.
//!
//! Layout (all integers and floats little-endian):
//! magic `IDLV-CKPT`, format version u32, architecture descriptor
//! (u32 length + UTF-8), margin f64, calibrated-threshold flag u8 (+ f64 when
//! set), training seed u64, epoch count u32, parameter count u64, then the
//! parameters in canonical store order as f64. Saving the same model twice
//! produces identical bytes.

use std::fs;
use std::path::Path;

use idlive_core::{Architecture, Error, Network, ParamStore, SiameseModel};

use crate::CliError;

const CKPT_MAGIC: &[u8; 9] = b"IDLV-CKPT";
const CKPT_VERSION: u32 = 1;

/// Training metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub margin: f64,
    pub calibrated_tau: Option<f64>,
    pub seed: u64,
    pub epochs: u32,
}

pub fn checkpoint_bytes(model: &SiameseModel, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let descriptor = model.arch().to_string();
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.extend_from_slice(&meta.margin.to_le_bytes());
    match meta.calibrated_tau {
        Some(tau) => {
            out.push(1);
            out.extend_from_slice(&tau.to_le_bytes());
        }
        None => out.push(0),
    }
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.epochs.to_le_bytes());
    let params = model.network().store().to_flat();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(
    model: &SiameseModel,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CliError> {
    fs::write(path, checkpoint_bytes(model, meta))
        .map_err(|e| CliError::File { path: path.to_path_buf(), source: e })?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], Error> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile {
                file: "checkpoint".into(),
                detail: format!("while reading {what}"),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, Error> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(SiameseModel, CheckpointMeta), Error> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(CKPT_MAGIC.len(), "magic")?;
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            file: "checkpoint".into(),
            expected: String::from_utf8_lossy(CKPT_MAGIC).into_owned(),
        });
    }
    let version = cur.u32("version")?;
    if version != CKPT_VERSION {
        return Err(Error::BadVersion {
            file: "checkpoint".into(),
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let desc_len = cur.u32("descriptor length")? as usize;
    let descriptor = std::str::from_utf8(cur.take(desc_len, "architecture descriptor")?)
        .map_err(|_| Error::CorruptFile {
            file: "checkpoint".into(),
            detail: "architecture descriptor is not valid UTF-8".into(),
        })?;
    let arch = Architecture::parse(descriptor)?;
    let margin = cur.f64("margin")?;
    let calibrated_tau = match cur.take(1, "threshold flag")?[0] {
        0 => None,
        1 => Some(cur.f64("calibrated threshold")?),
        other => {
            return Err(Error::CorruptFile {
                file: "checkpoint".into(),
                detail: format!("invalid threshold flag {other}"),
            })
        }
    };
    let seed = cur.u64("seed")?;
    let epochs = cur.u32("epochs")?;
    let count = cur.u64("parameter count")? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(cur.f64("parameters")?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptFile {
            file: "checkpoint".into(),
            detail: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    let store = ParamStore::from_flat(&arch, &params)?;
    let model = SiameseModel::from_network(Network::from_parts(arch, store)?);
    Ok((
        model,
        CheckpointMeta {
            margin,
            calibrated_tau,
            seed,
            epochs,
        },
    ))
}

pub fn load_checkpoint(path: &Path) -> Result<(SiameseModel, CheckpointMeta), CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::File { path: path.to_path_buf(), source: e })?;
    Ok(parse_checkpoint(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use idlive_core::Tensor;

    fn model_and_meta() -> (SiameseModel, CheckpointMeta) {
        let arch = Architecture::default_desk(8).unwrap();
        let model = SiameseModel::new(arch, 31).unwrap();
        let meta = CheckpointMeta {
            margin: 1.0,
            calibrated_tau: Some(0.375),
            seed: 31,
            epochs: 4,
        };
        (model, meta)
    }

    #[test]
    fn saving_twice_is_byte_identical() {
        let (model, meta) = model_and_meta();
        assert_eq!(checkpoint_bytes(&model, &meta), checkpoint_bytes(&model, &meta));
    }

    #[test]
    fn round_trip_preserves_embeddings_bit_exactly() {
        let (model, meta) = model_and_meta();
        let bytes = checkpoint_bytes(&model, &meta);
        let (loaded, loaded_meta) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.arch(), model.arch());
        assert_eq!(loaded.embedding_dim(), 32);

        let x = Tensor::new(vec![1, 8, 8], (0..64).map(|i| (i as f64 * 0.17).fract()).collect())
            .unwrap();
        assert_eq!(model.embed(&x).unwrap(), loaded.embed(&x).unwrap());
    }

    #[test]
    fn tau_flag_round_trips_when_absent() {
        let (model, mut meta) = model_and_meta();
        meta.calibrated_tau = None;
        let (_, loaded_meta) = parse_checkpoint(&checkpoint_bytes(&model, &meta)).unwrap();
        assert_eq!(loaded_meta.calibrated_tau, None);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let (model, meta) = model_and_meta();
        let mut bytes = checkpoint_bytes(&model, &meta);
        bytes[0] = b'Z';
        assert!(matches!(
            parse_checkpoint(&bytes).unwrap_err(),
            Error::BadMagic { .. }
        ));
    }

    #[test]
    fn truncation_is_rejected() {
        let (model, meta) = model_and_meta();
        let bytes = checkpoint_bytes(&model, &meta);
        for cut in [5, 20, bytes.len() - 3] {
            assert!(matches!(
                parse_checkpoint(&bytes[..cut]).unwrap_err(),
                Error::TruncatedFile { .. }
            ));
        }
    }

    #[test]
    fn parameter_count_must_match_architecture() {
        let (model, meta) = model_and_meta();
        let mut bytes = checkpoint_bytes(&model, &meta);
        // Append one extra parameter value and patch the count.
        let count_off = bytes.len() - model.network().store().param_count() * 8 - 8;
        let new_count = (model.network().store().param_count() + 1) as u64;
        bytes[count_off..count_off + 8].copy_from_slice(&new_count.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(
            parse_checkpoint(&bytes).unwrap_err(),
            Error::ParamCountMismatch { .. }
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let (model, meta) = model_and_meta();
        let mut bytes = checkpoint_bytes(&model, &meta);
        bytes.push(0xAB);
        assert!(matches!(
            parse_checkpoint(&bytes).unwrap_err(),
            Error::CorruptFile { .. }
        ));
    }
}
