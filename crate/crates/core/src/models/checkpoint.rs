//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `PDCK`, `u16` version, `u32` descriptor
//! length, descriptor JSON, `u64` parameter count, parameters as `f64`,
//! 32-byte fingerprint, then an 8-byte truncated SHA-256 of everything
//! before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassifierNet, ConvAutoencoder, Fingerprint, UNetDenoiser};
use crate::config::ClassifierArch;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PDCK";
const VERSION: u16 = 1;

/// Architecture descriptor; together with the parameters it fully
/// determines a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelDescriptor {
    Classifier {
        arch: ClassifierArch,
        height: usize,
        width: usize,
        classes: usize,
    },
    Autoencoder {
        height: usize,
        width: usize,
        hidden: usize,
        latent_channels: usize,
        latent_scale: f64,
    },
    Denoiser {
        latent_shape: [usize; 3],
        width: usize,
        classes: usize,
    },
}

impl ModelDescriptor {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelDescriptor::Classifier { .. } => "classifier",
            ModelDescriptor::Autoencoder { .. } => "autoencoder",
            ModelDescriptor::Denoiser { .. } => "denoiser",
        }
    }

    fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("descriptor serialises")
    }

    pub fn fingerprint(&self, params: &[f64]) -> Fingerprint {
        Fingerprint::of_parts(self.kind(), &self.canonical_json(), params)
    }
}

/// A descriptor plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: ModelDescriptor,
    pub params: Vec<f64>,
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

impl Checkpoint {
    pub fn fingerprint(&self) -> Fingerprint {
        self.descriptor.fingerprint(&self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = self.descriptor.canonical_json();
        let mut out = Vec::with_capacity(64 + json.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&self.fingerprint().0);
        let sum = checksum(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 8 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 8);
        let mut cur = &body[4..];
        let version = u16::from_le_bytes(take(&mut cur, 2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        if checksum(body) != sum {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let json_len = u32::from_le_bytes(take(&mut cur, 4)?.try_into().unwrap()) as usize;
        let descriptor: ModelDescriptor = serde_json::from_slice(take(&mut cur, json_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad descriptor: {e}")))?;
        let count = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        let raw = take(
            &mut cur,
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("bad length".into()))?,
        )?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let stored = take(&mut cur, 32)?;
        if !cur.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let ckpt = Checkpoint { descriptor, params };
        if ckpt.fingerprint().0 != stored {
            return Err(Error::Checkpoint("fingerprint does not match parameters".into()));
        }
        Ok(ckpt)
    }

    pub fn into_classifier(self) -> Result<ClassifierNet> {
        ClassifierNet::from_parts(&self.descriptor, self.params)
    }

    pub fn into_autoencoder(self) -> Result<ConvAutoencoder> {
        ConvAutoencoder::from_parts(&self.descriptor, self.params)
    }

    pub fn into_denoiser(self) -> Result<UNetDenoiser> {
        UNetDenoiser::from_parts(&self.descriptor, self.params)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Autoencoder, Classifier};

    fn sample() -> Checkpoint {
        let net = ClassifierNet::init(ClassifierArch::Mlp { hidden: 4 }, (4, 4), 3, 7).unwrap();
        net.checkpoint()
    }

    #[test]
    fn round_trip_preserves_model() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
        let fp = ckpt.fingerprint();
        assert_eq!(back.into_classifier().unwrap().fingerprint(), fp);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample();
        save_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let short = &sample().to_bytes()[..20];
        assert!(Checkpoint::from_bytes(short).is_err());
    }

    #[test]
    fn awkward_float_in_descriptor_survives() {
        let desc = ModelDescriptor::Autoencoder {
            height: 8,
            width: 8,
            hidden: 2,
            latent_channels: 1,
            latent_scale: 1.0 / 0.123_456_789_012_345_67,
        };
        let params = ConvAutoencoder::init((8, 8), 2, 1, 3).unwrap().params().to_vec();
        let ckpt = Checkpoint {
            descriptor: desc,
            params,
        };
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back.into_autoencoder().unwrap().fingerprint(), ckpt.fingerprint());
    }

    #[test]
    fn wrong_kind_rejected() {
        assert!(sample().into_denoiser().is_err());
    }

    #[test]
    fn fingerprint_depends_on_descriptor_and_params() {
        let a = sample();
        let mut b = a.clone();
        b.params[0] += 1e-12;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let c = ModelDescriptor::Denoiser {
            latent_shape: [1, 2, 2],
            width: 2,
            classes: 2,
        };
        assert_ne!(c.fingerprint(&a.params), a.fingerprint());
    }
}
