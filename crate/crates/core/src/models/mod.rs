//! The three model roles of the pipeline and their desk-scale
//! implementations: a classifier (teacher and student), an autoencoder
//! between pixel and latent space, and a class-conditional noise predictor.

mod autoencoder;
mod checkpoint;
mod classifier;
mod denoiser;
mod train;

use std::fmt;

use sha2::{Digest, Sha256};

pub use autoencoder::{
    train_autoencoder, AutoencoderReport, ConvAutoencoder, IdentityAutoencoder, ReconstructionStatus,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelDescriptor};
pub use classifier::{predict_soft_label, train_classifier, ClassifierNet};
pub use denoiser::{encode_dataset, ldm_probe_loss, train_denoiser, ProbeBatch, UNetDenoiser, ZeroDenoiser};
pub use train::TrainLog;

use crate::error::Result;
use crate::image::ImageTensor;
use crate::schedule::LatentCode;

/// SHA-256 content hash identifying a model's architecture and parameters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of_parts(kind: &str, descriptor: &[u8], params: &[f64]) -> Self {
        let mut h = Sha256::new();
        h.update(b"patchdiff/model/v1\0");
        h.update(kind.as_bytes());
        h.update([0]);
        h.update((descriptor.len() as u64).to_le_bytes());
        h.update(descriptor);
        h.update((params.len() as u64).to_le_bytes());
        for p in params {
            h.update(p.to_le_bytes());
        }
        Fingerprint(h.finalize().into())
    }

    /// The all-zero value stands for "no fingerprint".
    pub fn is_empty(&self) -> bool {
        self.0 == [0; 32]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// `f_θ`: image → logits over `K` classes.
pub trait Classifier: Send + Sync {
    fn input_shape(&self) -> (usize, usize);
    fn num_classes(&self) -> usize;
    fn logits_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>>;
    fn fingerprint(&self) -> Fingerprint;

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.logits_batch(&[image])?.remove(0))
    }
}

pub trait Autoencoder: Send + Sync {
    fn image_shape(&self) -> (usize, usize);
    fn latent_shape(&self) -> [usize; 3];
    fn encode(&self, image: &ImageTensor) -> Result<LatentCode>;
    /// Decoded pixels, clamped into `[0, 1]`.
    fn decode(&self, latent: &LatentCode) -> Result<ImageTensor>;
    fn fingerprint(&self) -> Fingerprint;
}

/// Conditioning signal `c` for the noise predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Conditioning {
    Class(usize),
    Unconditional,
}

/// `ε_θ(z_t, t, c)`.
pub trait Denoiser: Send + Sync {
    fn latent_shape(&self) -> [usize; 3];
    fn predict_noise(&self, z_t: &LatentCode, t: usize, cond: Conditioning) -> Result<LatentCode>;
    fn fingerprint(&self) -> Fingerprint;
}

/// The trained models a distillation run needs.
pub struct ModelBundle {
    pub teacher: ClassifierNet,
    pub autoencoder: ConvAutoencoder,
    pub denoiser: UNetDenoiser,
}

impl ModelBundle {
    pub fn fingerprints(&self) -> [Fingerprint; 3] {
        [
            self.teacher.fingerprint(),
            self.autoencoder.fingerprint(),
            self.denoiser.fingerprint(),
        ]
    }
}
