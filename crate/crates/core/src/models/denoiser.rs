use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::{Checkpoint, ModelDescriptor};
use super::train::minibatch_loop;
use super::{Autoencoder, Conditioning, Denoiser, Fingerprint};
use crate::config::OptimizerSettings;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::layers::{avg_pool2, avg_pool2_backward, silu, silu_grad, upsample2, upsample2_backward};
use crate::nn::loss::mse;
use crate::nn::{Conv2d, Linear, ParamAllocator, Tensor};
use crate::schedule::{forward_noise, LatentCode, NoiseSchedule};

const TEMB_DIM: usize = 16;

fn timestep_embedding(t: usize) -> [f64; TEMB_DIM] {
    let half = TEMB_DIM / 2;
    let mut out = [0.0; TEMB_DIM];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

fn silu_t(x: &Tensor) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| silu(v)).collect())
}

fn silu_back(pre: &Tensor, dy: &Tensor) -> Tensor {
    Tensor::new(
        pre.shape(),
        pre.data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &d)| d * silu_grad(v))
            .collect(),
    )
}

/// Always predicts zero noise. With it every reverse step reduces to a
/// deterministic rescaling, which makes it a convenient test double.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroDenoiser {
    shape: [usize; 3],
}

impl ZeroDenoiser {
    pub fn new(shape: [usize; 3]) -> Self {
        Self { shape }
    }
}

impl Denoiser for ZeroDenoiser {
    fn latent_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn predict_noise(&self, z_t: &LatentCode, _t: usize, _cond: Conditioning) -> Result<LatentCode> {
        if z_t.shape() != self.shape {
            return Err(Error::shape("zero denoiser", self.shape, z_t.shape()));
        }
        Ok(LatentCode::zeros(self.shape))
    }

    fn fingerprint(&self) -> Fingerprint {
        let desc = format!("zero:{:?}", self.shape);
        Fingerprint::of_parts("zero-denoiser", desc.as_bytes(), &[])
    }
}

/// Small U-Net-style noise predictor.
///
/// A sinusoidal timestep embedding goes through a two-layer MLP and is added
/// to a learned class embedding (index `K` is "unconditional"); the sum is a
/// per-channel bias after the input convolution. The body is one 2× down
/// and up level with an additive skip:
///
/// ```text
/// h0 = conv_in(z)        h1 = silu(h0 + e)      h2 = silu(conv1(h1))
/// h3 = silu(conv2(pool(h2)))                    h4 = silu(conv3(up(h3) + h2))
/// out = conv_out(h4)
/// ```
#[derive(Debug, Clone)]
pub struct UNetDenoiser {
    latent_shape: [usize; 3],
    width: usize,
    classes: usize,
    fc1: Linear,
    fc2: Linear,
    class_embed: std::ops::Range<usize>,
    conv_in: Conv2d,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    conv_out: Conv2d,
    params: Vec<f64>,
    fingerprint: Fingerprint,
}

struct Tape {
    temb: Tensor,
    b1: Tensor,
    m1: Tensor,
    h0: Tensor,
    a1: Tensor,
    h1: Tensor,
    a2: Tensor,
    h2: Tensor,
    d: Tensor,
    a3: Tensor,
    h3: Tensor,
    s: Tensor,
    a4: Tensor,
    h4: Tensor,
}

impl UNetDenoiser {
    pub fn init(latent_shape: [usize; 3], width: usize, classes: usize, seed: u64) -> Result<Self> {
        let [c, h, w] = latent_shape;
        if c == 0 || h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "denoiser needs an even spatial latent, got {latent_shape:?}"
            )));
        }
        if width == 0 || classes == 0 {
            return Err(Error::InvalidInput(
                "denoiser width and class count must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alloc = ParamAllocator::new();
        let fc1 = Linear::new(&mut alloc, TEMB_DIM, width, &mut rng);
        let fc2 = Linear::new(&mut alloc, width, width, &mut rng);
        let class_embed = alloc.scaled((classes + 1) * width, 0.1, &mut rng);
        let conv_in = Conv2d::new(&mut alloc, c, width, 3, &mut rng);
        let conv1 = Conv2d::new(&mut alloc, width, width, 3, &mut rng);
        let conv2 = Conv2d::new(&mut alloc, width, width, 3, &mut rng);
        let conv3 = Conv2d::new(&mut alloc, width, width, 3, &mut rng);
        let conv_out = Conv2d::new(&mut alloc, width, c, 3, &mut rng);
        let mut den = Self {
            latent_shape,
            width,
            classes,
            fc1,
            fc2,
            class_embed,
            conv_in,
            conv1,
            conv2,
            conv3,
            conv_out,
            params: alloc.finish(),
            fingerprint: Fingerprint::default(),
        };
        den.refresh_fingerprint();
        Ok(den)
    }

    pub(crate) fn from_parts(descriptor: &ModelDescriptor, params: Vec<f64>) -> Result<Self> {
        let ModelDescriptor::Denoiser {
            latent_shape,
            width,
            classes,
        } = *descriptor
        else {
            return Err(Error::Checkpoint("descriptor is not a denoiser".into()));
        };
        let mut den = Self::init(latent_shape, width, classes, 0)?;
        if params.len() != den.params.len() {
            return Err(Error::Checkpoint(format!(
                "denoiser expects {} parameters, checkpoint has {}",
                den.params.len(),
                params.len()
            )));
        }
        den.params = params;
        den.refresh_fingerprint();
        Ok(den)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Denoiser {
            latent_shape: self.latent_shape,
            width: self.width,
            classes: self.classes,
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

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    fn refresh_fingerprint(&mut self) {
        self.fingerprint = self.descriptor().fingerprint(&self.params);
    }

    fn cond_index(&self, cond: Conditioning) -> Result<usize> {
        match cond {
            Conditioning::Class(k) if k < self.classes => Ok(k),
            Conditioning::Class(k) => Err(Error::OutOfRange {
                what: "conditioning class",
                detail: format!("{k} ≥ K = {}", self.classes),
            }),
            Conditioning::Unconditional => Ok(self.classes),
        }
    }

    fn forward_tape(&self, p: &[f64], z: &Tensor, ts: &[usize], conds: &[usize]) -> (Tensor, Tape) {
        let n = z.batch();
        let wd = self.width;
        let temb = Tensor::from_rows(n, TEMB_DIM, ts.iter().flat_map(|&t| timestep_embedding(t)).collect());
        let b1 = self.fc1.forward(p, &temb);
        let m1 = silu_t(&b1);
        let mut e = self.fc2.forward(p, &m1).into_data();
        let table = &p[self.class_embed.clone()];
        for (row, &c) in e.chunks_exact_mut(wd).zip(conds) {
            for (v, t) in row.iter_mut().zip(&table[c * wd..(c + 1) * wd]) {
                *v += t;
            }
        }
        let h0 = self.conv_in.forward(p, z);
        let mut a1 = h0.clone();
        let hw = self.latent_shape[1] * self.latent_shape[2];
        for (plane, &bias) in a1.data_mut().chunks_exact_mut(hw).zip(&e) {
            for v in plane {
                *v += bias;
            }
        }
        let h1 = silu_t(&a1);
        let a2 = self.conv1.forward(p, &h1);
        let h2 = silu_t(&a2);
        let d = avg_pool2(&h2);
        let a3 = self.conv2.forward(p, &d);
        let h3 = silu_t(&a3);
        let mut s = upsample2(&h3);
        s.add_assign(&h2);
        let a4 = self.conv3.forward(p, &s);
        let h4 = silu_t(&a4);
        let out = self.conv_out.forward(p, &h4);
        (
            out,
            Tape {
                temb,
                b1,
                m1,
                h0,
                a1,
                h1,
                a2,
                h2,
                d,
                a3,
                h3,
                s,
                a4,
                h4,
            },
        )
    }

    /// Accumulates parameter gradients of `Σ dout ⊙ out` into `g`.
    fn backward(&self, p: &[f64], z: &Tensor, conds: &[usize], tape: &Tape, dout: &Tensor, g: &mut [f64]) {
        let wd = self.width;
        let hw = self.latent_shape[1] * self.latent_shape[2];
        let dh4 = self.conv_out.backward(p, &tape.h4, dout, g);
        let da4 = silu_back(&tape.a4, &dh4);
        let ds = self.conv3.backward(p, &tape.s, &da4, g);
        let dh3 = upsample2_backward(tape.h3.shape(), &ds);
        let da3 = silu_back(&tape.a3, &dh3);
        let dd = self.conv2.backward(p, &tape.d, &da3, g);
        let mut dh2 = avg_pool2_backward(tape.h2.shape(), &dd);
        dh2.add_assign(&ds);
        let da2 = silu_back(&tape.a2, &dh2);
        let dh1 = self.conv1.backward(p, &tape.h1, &da2, g);
        let da1 = silu_back(&tape.a1, &dh1);
        let de: Vec<f64> = da1.data().chunks_exact(hw).map(|plane| plane.iter().sum()).collect();
        self.conv_in.backward(p, z, &da1, g);
        let start = self.class_embed.start;
        for (row, &c) in de.chunks_exact(wd).zip(conds) {
            for (j, v) in row.iter().enumerate() {
                g[start + c * wd + j] += v;
            }
        }
        let de = Tensor::from_rows(de.len() / wd, wd, de);
        let dm1 = self.fc2.backward(p, &tape.m1, &de, g);
        let db1 = silu_back(&tape.b1, &dm1);
        self.fc1.backward(p, &tape.temb, &db1, g);
        debug_assert_eq!(tape.h0.shape(), tape.a1.shape());
    }

    /// Noise prediction for a batch of latents.
    pub fn predict_batch(
        &self,
        latents: &[&LatentCode],
        ts: &[usize],
        conds: &[Conditioning],
    ) -> Result<Vec<LatentCode>> {
        if latents.len() != ts.len() || latents.len() != conds.len() {
            return Err(Error::InvalidInput("denoiser batch lengths differ".into()));
        }
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        for z in latents {
            if z.shape() != self.latent_shape {
                return Err(Error::shape("denoiser input", self.latent_shape, z.shape()));
            }
        }
        let idx: Vec<usize> = conds.iter().map(|&c| self.cond_index(c)).collect::<Result<_>>()?;
        let samples: Vec<&[f64]> = latents.iter().map(|z| z.values()).collect();
        let x = Tensor::stack(&samples, self.latent_shape);
        let (out, _) = self.forward_tape(&self.params, &x, ts, &idx);
        out.data()
            .chunks_exact(out.sample_len())
            .map(|c| LatentCode::new(self.latent_shape, c.to_vec()))
            .collect()
    }

    /// Mean-squared noise-prediction loss and gradient on a prepared batch.
    /// `conds[i]` is a class id, or the class count for "unconditional".
    pub fn loss_grad(&self, p: &[f64], z_t: &Tensor, ts: &[usize], conds: &[usize], eps: &[f64]) -> (f64, Vec<f64>) {
        let (out, tape) = self.forward_tape(p, z_t, ts, conds);
        let (loss, dout) = mse(&out, eps);
        let mut g = vec![0.0; p.len()];
        self.backward(p, z_t, conds, &tape, &dout, &mut g);
        (loss, g)
    }
}

impl Denoiser for UNetDenoiser {
    fn latent_shape(&self) -> [usize; 3] {
        self.latent_shape
    }

    fn predict_noise(&self, z_t: &LatentCode, t: usize, cond: Conditioning) -> Result<LatentCode> {
        Ok(self.predict_batch(&[z_t], &[t], &[cond])?.remove(0))
    }

    fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

/// Fixed `(z_t, t, c, ε)` quadruples for measuring the noise-prediction loss.
#[derive(Debug, Clone)]
pub struct ProbeBatch {
    pub z_t: Vec<LatentCode>,
    pub t: Vec<usize>,
    pub cond: Vec<Conditioning>,
    pub eps: Vec<LatentCode>,
}

impl ProbeBatch {
    /// `size` probes cycling over `(latents, labels)`, with `t` and `ε`
    /// drawn from `seed`.
    pub fn new(
        latents: &[LatentCode],
        labels: &[usize],
        schedule: &NoiseSchedule,
        size: usize,
        seed: u64,
    ) -> Result<Self> {
        if latents.is_empty() || latents.len() != labels.len() {
            return Err(Error::InvalidInput(
                "probe batch needs matching, non-empty latents and labels".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probe = ProbeBatch {
            z_t: Vec::with_capacity(size),
            t: Vec::with_capacity(size),
            cond: Vec::with_capacity(size),
            eps: Vec::with_capacity(size),
        };
        for i in 0..size {
            let z0 = &latents[i % latents.len()];
            let t = rng.random_range(1..=schedule.timesteps());
            let eps = LatentCode::new(z0.shape(), (0..z0.len()).map(|_| rng.sample(StandardNormal)).collect())?;
            probe.z_t.push(forward_noise(z0, t, &eps, schedule)?);
            probe.t.push(t);
            probe.cond.push(Conditioning::Class(labels[i % labels.len()]));
            probe.eps.push(eps);
        }
        Ok(probe)
    }
}

/// Mean over probes of `‖ε_θ(z_t, t, c) − ε‖²` (summed over latent dims).
/// A zero predictor scores about the latent dimension.
pub fn ldm_probe_loss(den: &dyn Denoiser, probe: &ProbeBatch) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..probe.z_t.len() {
        let pred = den.predict_noise(&probe.z_t[i], probe.t[i], probe.cond[i])?;
        total += pred
            .values()
            .iter()
            .zip(probe.eps[i].values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total / probe.z_t.len().max(1) as f64)
}

/// Encode every image of `data` with `ae`.
pub fn encode_dataset(data: &LabeledDataset, ae: &dyn Autoencoder) -> Result<Vec<LatentCode>> {
    data.images().iter().map(|img| ae.encode(img)).collect()
}

/// Train a [`UNetDenoiser`] on the latents of `data` with uniformly drawn
/// timesteps and `cond_dropout` of the labels replaced by "unconditional".
pub fn train_denoiser(
    data: &LabeledDataset,
    ae: &dyn Autoencoder,
    schedule: &NoiseSchedule,
    width: usize,
    cond_dropout: f64,
    opt: &OptimizerSettings,
    seed: u64,
) -> Result<UNetDenoiser> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train a denoiser on an empty dataset".into(),
        ));
    }
    let latents = encode_dataset(data, ae)?;
    train_denoiser_on_latents(
        &latents,
        data.labels(),
        data.num_classes(),
        schedule,
        width,
        cond_dropout,
        opt,
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn train_denoiser_on_latents(
    latents: &[LatentCode],
    labels: &[usize],
    classes: usize,
    schedule: &NoiseSchedule,
    width: usize,
    cond_dropout: f64,
    opt: &OptimizerSettings,
    seed: u64,
) -> Result<UNetDenoiser> {
    if !(0.0..=1.0).contains(&cond_dropout) {
        return Err(Error::OutOfRange {
            what: "cond_dropout",
            detail: format!("{cond_dropout} not in [0,1]"),
        });
    }
    let shape = latents[0].shape();
    let mut den = UNetDenoiser::init(shape, width, classes, seed)?;
    let mut params = std::mem::take(&mut den.params);
    let big_t = schedule.timesteps();
    {
        let net = &den;
        minibatch_loop(
            "denoiser",
            &mut params,
            opt,
            latents.len(),
            seed.wrapping_add(1),
            |p, batch, rng| {
                let mut zt = Vec::with_capacity(batch.len() * latents[0].len());
                let mut eps_all = Vec::with_capacity(zt.capacity());
                let mut ts = Vec::with_capacity(batch.len());
                let mut conds = Vec::with_capacity(batch.len());
                for &i in batch {
                    let z0 = &latents[i];
                    let t = rng.random_range(1..=big_t);
                    let ab = schedule.alpha_bar(t);
                    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                    for &v in z0.values() {
                        let e: f64 = rng.sample(StandardNormal);
                        zt.push(a * v + b * e);
                        eps_all.push(e);
                    }
                    ts.push(t);
                    let drop = rng.random::<f64>() < cond_dropout;
                    conds.push(if drop { classes } else { labels[i] });
                }
                let x = Tensor::new([batch.len(), shape[0], shape[1], shape[2]], zt);
                net.loss_grad(p, &x, &ts, &conds, &eps_all)
            },
        )?;
    }
    den.params = params;
    den.refresh_fingerprint();
    Ok(den)
}
