use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, ModelDescriptor};
use super::classifier::images_to_tensor;
use super::train::{minibatch_loop, TrainLog};
use super::{Autoencoder, Fingerprint};
use crate::config::OptimizerSettings;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::loss::mse;
use crate::nn::{Conv2d, Layer, ParamAllocator, Sequential, Tensor};
use crate::schedule::LatentCode;

/// Pixels are their own latent: `Encode` and `Decode` are the identity on
/// the CHW layout. Useful as a test double and for pixel-space diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityAutoencoder {
    height: usize,
    width: usize,
}

impl IdentityAutoencoder {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

impl Autoencoder for IdentityAutoencoder {
    fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn latent_shape(&self) -> [usize; 3] {
        [3, self.height, self.width]
    }

    fn encode(&self, image: &ImageTensor) -> Result<LatentCode> {
        if image.shape() != (self.height, self.width) {
            return Err(Error::shape(
                "identity encode",
                (self.height, self.width),
                image.shape(),
            ));
        }
        LatentCode::new(self.latent_shape(), image.to_chw())
    }

    fn decode(&self, latent: &LatentCode) -> Result<ImageTensor> {
        if latent.shape() != self.latent_shape() {
            return Err(Error::shape("identity decode", self.latent_shape(), latent.shape()));
        }
        ImageTensor::from_chw(
            self.height,
            self.width,
            &latent.values().iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>(),
        )
    }

    fn fingerprint(&self) -> Fingerprint {
        let desc = format!("identity:{}x{}", self.height, self.width);
        Fingerprint::of_parts("identity-autoencoder", desc.as_bytes(), &[])
    }
}

/// Convolutional autoencoder with 4× spatial downsampling.
///
/// Encoder: conv(3→w) SiLU pool conv(w→w) SiLU pool conv(w→c).
/// Decoder: conv(c→w) SiLU up conv(w→w) SiLU up conv(w→3) sigmoid.
/// Latents are multiplied by `latent_scale` (1/std of the training latents)
/// so the diffusion prior sees roughly unit-variance codes.
#[derive(Debug, Clone)]
pub struct ConvAutoencoder {
    height: usize,
    width: usize,
    hidden: usize,
    latent_channels: usize,
    latent_scale: f64,
    encoder: Sequential,
    decoder: Sequential,
    params: Vec<f64>,
    fingerprint: Fingerprint,
}

impl ConvAutoencoder {
    pub fn init(shape: (usize, usize), hidden: usize, latent_channels: usize, seed: u64) -> Result<Self> {
        let (height, width) = shape;
        if height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "autoencoder needs image sides divisible by 4, got {height}x{width}"
            )));
        }
        if hidden == 0 || latent_channels == 0 {
            return Err(Error::InvalidInput("autoencoder widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alloc = ParamAllocator::new();
        let encoder = Sequential::new(vec![
            Layer::Conv(Conv2d::new(&mut alloc, 3, hidden, 3, &mut rng)),
            Layer::Silu,
            Layer::AvgPool2,
            Layer::Conv(Conv2d::new(&mut alloc, hidden, hidden, 3, &mut rng)),
            Layer::Silu,
            Layer::AvgPool2,
            Layer::Conv(Conv2d::new(&mut alloc, hidden, latent_channels, 3, &mut rng)),
        ]);
        let decoder = Sequential::new(vec![
            Layer::Conv(Conv2d::new(&mut alloc, latent_channels, hidden, 3, &mut rng)),
            Layer::Silu,
            Layer::Upsample2,
            Layer::Conv(Conv2d::new(&mut alloc, hidden, hidden, 3, &mut rng)),
            Layer::Silu,
            Layer::Upsample2,
            Layer::Conv(Conv2d::new(&mut alloc, hidden, 3, 3, &mut rng)),
            Layer::Sigmoid,
        ]);
        let mut ae = Self {
            height,
            width,
            hidden,
            latent_channels,
            latent_scale: 1.0,
            encoder,
            decoder,
            params: alloc.finish(),
            fingerprint: Fingerprint::default(),
        };
        ae.refresh_fingerprint();
        Ok(ae)
    }

    pub(crate) fn from_parts(descriptor: &ModelDescriptor, params: Vec<f64>) -> Result<Self> {
        let ModelDescriptor::Autoencoder {
            height,
            width,
            hidden,
            latent_channels,
            latent_scale,
        } = *descriptor
        else {
            return Err(Error::Checkpoint("descriptor is not an autoencoder".into()));
        };
        let mut ae = Self::init((height, width), hidden, latent_channels, 0)?;
        if params.len() != ae.params.len() {
            return Err(Error::Checkpoint(format!(
                "autoencoder expects {} parameters, checkpoint has {}",
                ae.params.len(),
                params.len()
            )));
        }
        if !(latent_scale.is_finite() && latent_scale > 0.0) {
            return Err(Error::Checkpoint(format!("bad latent scale {latent_scale}")));
        }
        ae.params = params;
        ae.latent_scale = latent_scale;
        ae.refresh_fingerprint();
        Ok(ae)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Autoencoder {
            height: self.height,
            width: self.width,
            hidden: self.hidden,
            latent_channels: self.latent_channels,
            latent_scale: self.latent_scale,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            descriptor: self.descriptor(),
            params: self.params.clone(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn latent_scale(&self) -> f64 {
        self.latent_scale
    }

    fn refresh_fingerprint(&mut self) {
        self.fingerprint = self.descriptor().fingerprint(&self.params);
    }

    /// Unscaled encoder output for a batch.
    fn encode_raw(&self, params: &[f64], images: &[&ImageTensor]) -> Tensor {
        self.encoder.forward(params, &images_to_tensor(images))
    }

    /// Reconstruction MSE and gradient for a batch.
    pub fn loss_grad(&self, params: &[f64], images: &[&ImageTensor]) -> (f64, Vec<f64>) {
        let x = images_to_tensor(images);
        let target: Vec<f64> = images.iter().flat_map(|i| i.to_chw()).collect();
        let enc_tape = self.encoder.forward_tape(params, &x);
        let z = enc_tape.last().expect("tape").clone();
        let dec_tape = self.decoder.forward_tape(params, &z);
        let (loss, dy) = mse(dec_tape.last().expect("tape"), &target);
        let mut g = vec![0.0; params.len()];
        let dz = self.decoder.backward(params, &dec_tape, dy, &mut g);
        self.encoder.backward(params, &enc_tape, dz, &mut g);
        (loss, g)
    }

    /// Pixel MSE between images and their reconstructions.
    pub fn reconstruction_mse(&self, images: &[&ImageTensor]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for img in images {
            let rec = self.decode(&self.encode(img)?)?;
            for (a, b) in img.pixels().iter().zip(rec.pixels()) {
                total += (f64::from(*a) - f64::from(*b)).powi(2);
            }
            count += img.pixels().len();
        }
        Ok(total / count.max(1) as f64)
    }
}

impl Autoencoder for ConvAutoencoder {
    fn image_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.height / 4, self.width / 4]
    }

    fn encode(&self, image: &ImageTensor) -> Result<LatentCode> {
        if image.shape() != (self.height, self.width) {
            return Err(Error::shape(
                "autoencoder encode",
                (self.height, self.width),
                image.shape(),
            ));
        }
        let z = self.encode_raw(&self.params, &[image]);
        let scale = self.latent_scale;
        LatentCode::new(
            self.latent_shape(),
            z.into_data().into_iter().map(|v| v * scale).collect(),
        )?
        .ensure_finite()
    }

    fn decode(&self, latent: &LatentCode) -> Result<ImageTensor> {
        let shape = self.latent_shape();
        if latent.shape() != shape {
            return Err(Error::shape("autoencoder decode", shape, latent.shape()));
        }
        let inv = 1.0 / self.latent_scale;
        let z = Tensor::new(
            [1, shape[0], shape[1], shape[2]],
            latent.values().iter().map(|v| v * inv).collect(),
        );
        let out = self.decoder.forward(&self.params, &z);
        ImageTensor::from_chw(
            self.height,
            self.width,
            &out.into_data()
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect::<Vec<_>>(),
        )
    }

    fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

/// Whether the held-out reconstruction target was met.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionStatus {
    Ok,
    /// Threshold not reached within the epoch budget; the model is still usable.
    Warning,
}

#[derive(Debug, Clone)]
pub struct AutoencoderReport {
    pub model: ConvAutoencoder,
    pub heldout_mse: f64,
    pub threshold: f64,
    pub status: ReconstructionStatus,
    pub log: TrainLog,
}

/// Every tenth image of each class is held out for the reconstruction check.
fn split_heldout(data: &LabeledDataset) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for idx in data.indices_by_class() {
        for (j, i) in idx.into_iter().enumerate() {
            if j % 10 == 9 {
                held.push(i);
            } else {
                train.push(i);
            }
        }
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Train a [`ConvAutoencoder`] with latent shape `latent_shape`
/// (`[c, H/4, W/4]`). Deterministic given `seed`.
pub fn train_autoencoder(
    data: &LabeledDataset,
    latent_shape: [usize; 3],
    hidden: usize,
    opt: &OptimizerSettings,
    seed: u64,
    threshold: f64,
) -> Result<AutoencoderReport> {
    let (h, w) = data
        .image_shape()
        .ok_or_else(|| Error::InvalidInput("cannot train an autoencoder on an empty dataset".into()))?;
    if latent_shape[1] * 4 != h || latent_shape[2] * 4 != w {
        return Err(Error::shape(
            "autoencoder latent",
            [latent_shape[0], h / 4, w / 4],
            latent_shape,
        ));
    }
    if latent_shape.iter().product::<usize>() >= 3 * h * w {
        return Err(Error::InvalidInput(format!(
            "latent {latent_shape:?} is not smaller than the {h}x{w}x3 image"
        )));
    }
    let mut ae = ConvAutoencoder::init((h, w), hidden, latent_shape[0], seed)?;
    let (train_idx, held_idx) = split_heldout(data);
    let images = data.images();
    let mut params = std::mem::take(&mut ae.params);
    let log = {
        let net = &ae;
        minibatch_loop(
            "autoencoder",
            &mut params,
            opt,
            train_idx.len(),
            seed.wrapping_add(1),
            |p, batch, _| {
                let imgs: Vec<&ImageTensor> = batch.iter().map(|&i| &images[train_idx[i]]).collect();
                net.loss_grad(p, &imgs)
            },
        )?
    };
    ae.params = params;

    // latent scale from the training latents
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut count = 0usize;
    for chunk in train_idx.chunks(64) {
        let imgs: Vec<&ImageTensor> = chunk.iter().map(|&i| &images[i]).collect();
        for v in ae.encode_raw(&ae.params, &imgs).into_data() {
            sum += v;
            sum2 += v * v;
            count += 1;
        }
    }
    let mean = sum / count.max(1) as f64;
    let std = (sum2 / count.max(1) as f64 - mean * mean).max(0.0).sqrt();
    ae.latent_scale = if std > 1e-8 { 1.0 / std } else { 1.0 };
    ae.refresh_fingerprint();

    let eval_idx = if held_idx.is_empty() { &train_idx } else { &held_idx };
    let held: Vec<&ImageTensor> = eval_idx.iter().map(|&i| &images[i]).collect();
    let heldout_mse = ae.reconstruction_mse(&held)?;
    let status = if heldout_mse < threshold {
        info!("autoencoder held-out MSE {heldout_mse:.5} (threshold {threshold})");
        ReconstructionStatus::Ok
    } else {
        warn!("autoencoder held-out MSE {heldout_mse:.5} did not reach threshold {threshold}");
        ReconstructionStatus::Warning
    };
    Ok(AutoencoderReport {
        model: ae,
        heldout_mse,
        threshold,
        status,
        log,
    })
}
