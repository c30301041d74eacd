//! Turning anchor patches into high-resolution variants.

use std::thread;

use crate::config::{ExecMode, GenerationMode, RunConfig};
use crate::coreset::{Coreset, PatchRecord};
use crate::error::{Error, Result};
use crate::image::{resize, ImageTensor, Interpolation};
use crate::models::{Autoencoder, Conditioning, Denoiser, Fingerprint};
use crate::schedule::{
    forward_noise, make_step_sequence, rescale_step, reverse_step, rho_to_step, LatentCode, NoiseSchedule,
};
use crate::seed::{PurposeTag, SeedStream};

/// Latent mixup with a same-class partner patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixup {
    /// Global coreset index of the partner.
    pub partner: usize,
    /// Weight of the anchor latent.
    pub gamma: f64,
}

/// Recipe for one variant. Together with the master seed it determines the
/// generated image completely.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub patch_index: usize,
    pub variant_index: usize,
    /// Conditioning class; always the anchor's class.
    pub class_id: usize,
    pub rho: f64,
    pub n_steps: usize,
    pub mixup: Option<Mixup>,
    /// Mixup was requested but the class has a single patch.
    pub mixup_suppressed: bool,
}

/// Resize a patch to `H×W`. Equal sizes copy the patch unchanged.
pub fn upsample(patch: &PatchRecord, height: usize, width: usize, interp: Interpolation) -> Result<ImageTensor> {
    let (ph, pw) = patch.pixels.shape();
    if height < ph || width < pw {
        return Err(Error::InvalidInput(format!(
            "cannot upsample a {ph}x{pw} patch to the smaller {height}x{width}"
        )));
    }
    resize(&patch.pixels, height, width, interp)
}

/// `γ·z1 + (1−γ)·z2`, exact at the endpoints.
pub fn mixup_latents(z1: &LatentCode, z2: &LatentCode, gamma: f64) -> Result<LatentCode> {
    z1.ensure_same_shape(z2, "mixup")?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::OutOfRange {
            what: "γ",
            detail: format!("{gamma} not in [0,1]"),
        });
    }
    if gamma == 1.0 {
        return Ok(z1.clone());
    }
    if gamma == 0.0 {
        return Ok(z2.clone());
    }
    Ok(z1.axpby(gamma, z2, 1.0 - gamma))
}

/// Mean absolute pixel difference between a variant and its anchor.
pub fn divergence(variant: &ImageTensor, anchor: &ImageTensor) -> Result<f64> {
    variant.mean_abs_diff(anchor)
}

/// `m` specs per coreset patch, patch-major.
///
/// Partners are drawn uniformly from the other patches of the same class via
/// the `mixup_partner` substream and `γ ~ U[γ_lo, γ_hi]` via `mixup_gamma`.
/// Mixup only applies to anchored generation.
pub fn plan_variants(coreset: &Coreset, cfg: &RunConfig, seeds: &SeedStream) -> Vec<VariantSpec> {
    let m = cfg.variants_per_patch();
    let mixup_wanted = cfg.mixup_enabled && cfg.generation_mode == GenerationMode::Anchored;
    let mut specs = Vec::with_capacity(coreset.len() * m);
    for k in 0..coreset.num_classes() {
        let range = coreset.class_range(k);
        for p in range.clone() {
            for v in 0..m {
                let mut mixup = None;
                let mut mixup_suppressed = false;
                if mixup_wanted {
                    if range.len() > 1 {
                        let mut ps = seeds.substream(p as u64, v as u64, PurposeTag::MixupPartner);
                        let mut pick = range.start + ps.below(range.len() - 1);
                        if pick >= p {
                            pick += 1;
                        }
                        let mut gs = seeds.substream(p as u64, v as u64, PurposeTag::MixupGamma);
                        let gamma = gs.uniform_range(cfg.gamma_lo, cfg.gamma_hi).clamp(0.0, 1.0);
                        mixup = Some(Mixup { partner: pick, gamma });
                    } else {
                        mixup_suppressed = true;
                    }
                }
                specs.push(VariantSpec {
                    patch_index: p,
                    variant_index: v,
                    class_id: k,
                    rho: cfg.rho,
                    n_steps: cfg.n_steps,
                    mixup,
                    mixup_suppressed,
                });
            }
        }
    }
    specs
}

/// Everything a variant generation needs besides its spec.
pub struct Generator<'a> {
    pub coreset: &'a Coreset,
    pub autoencoder: &'a dyn Autoencoder,
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub seeds: SeedStream,
    pub interpolation: Interpolation,
    pub mode: GenerationMode,
}

impl<'a> Generator<'a> {
    /// Checks that the models fit the coreset and each other.
    pub fn new(
        coreset: &'a Coreset,
        autoencoder: &'a dyn Autoencoder,
        denoiser: &'a dyn Denoiser,
        schedule: &'a NoiseSchedule,
        seeds: SeedStream,
        interpolation: Interpolation,
        mode: GenerationMode,
    ) -> Result<Self> {
        if autoencoder.latent_shape() != denoiser.latent_shape() {
            return Err(Error::shape(
                "denoiser latent",
                autoencoder.latent_shape(),
                denoiser.latent_shape(),
            ));
        }
        if autoencoder.image_shape() != coreset.image_shape() {
            return Err(Error::shape(
                "autoencoder image",
                coreset.image_shape(),
                autoencoder.image_shape(),
            ));
        }
        Ok(Self {
            coreset,
            autoencoder,
            denoiser,
            schedule,
            seeds,
            interpolation,
            mode,
        })
    }

    /// Refuses models whose fingerprints differ from the expected ones.
    pub fn expect_fingerprints(self, autoencoder: Fingerprint, denoiser: Fingerprint) -> Result<Self> {
        if self.autoencoder.fingerprint() != autoencoder {
            return Err(Error::Reproducibility(format!(
                "autoencoder fingerprint {} does not match expected {autoencoder}",
                self.autoencoder.fingerprint()
            )));
        }
        if self.denoiser.fingerprint() != denoiser {
            return Err(Error::Reproducibility(format!(
                "denoiser fingerprint {} does not match expected {denoiser}",
                self.denoiser.fingerprint()
            )));
        }
        Ok(self)
    }

    fn patch(&self, index: usize) -> Result<&PatchRecord> {
        self.coreset.patch(index).ok_or_else(|| Error::OutOfRange {
            what: "patch index",
            detail: format!("{index} ≥ {}", self.coreset.len()),
        })
    }

    /// The upsampled anchor of a patch.
    pub fn anchor(&self, patch_index: usize) -> Result<ImageTensor> {
        let (h, w) = self.coreset.image_shape();
        upsample(self.patch(patch_index)?, h, w, self.interpolation)
    }

    /// Generate one variant. The result depends only on the coreset, the
    /// spec, the model parameters, the schedule and the master seed.
    pub fn generate(&self, spec: &VariantSpec) -> Result<ImageTensor> {
        let anchor_patch = self.patch(spec.patch_index)?;
        if anchor_patch.class_id != spec.class_id {
            return Err(Error::InvalidInput(format!(
                "spec class {} differs from patch class {}",
                spec.class_id, anchor_patch.class_id
            )));
        }
        let big_t = self.schedule.timesteps();
        let (t_start, anchored) = match self.mode {
            GenerationMode::Patches => return self.anchor(spec.patch_index),
            GenerationMode::Anchored => (rho_to_step(spec.rho, big_t), true),
            GenerationMode::CondOnly => (big_t, false),
        };
        if t_start == 0 {
            return self.anchor(spec.patch_index);
        }
        let (p, v) = (spec.patch_index as u64, spec.variant_index as u64);
        let shape = self.autoencoder.latent_shape();
        let len: usize = shape.iter().product();
        let mut noise = self.seeds.substream(p, v, PurposeTag::NoiseEps);
        let eps = LatentCode::new(shape, noise.normal_vec(len))?;
        let mut z = if anchored {
            let mut z0 = self.autoencoder.encode(&self.anchor(spec.patch_index)?)?;
            if let Some(mx) = spec.mixup {
                let partner = self.patch(mx.partner)?;
                if partner.class_id != spec.class_id {
                    return Err(Error::InvalidInput("mixup partner belongs to another class".into()));
                }
                let zp = self.autoencoder.encode(&self.anchor(mx.partner)?)?;
                z0 = mixup_latents(&z0, &zp, mx.gamma)?;
            }
            forward_noise(&z0, t_start, &eps, self.schedule)?
        } else {
            eps
        };
        let cond = Conditioning::Class(spec.class_id);
        let steps = make_step_sequence(t_start, spec.n_steps)?;
        let mut ancestral = self.seeds.substream(p, v, PurposeTag::AncestralEps);
        for (i, &t) in steps.iter().enumerate() {
            let next = steps.get(i + 1).copied().unwrap_or(0);
            let eps_pred = self.denoiser.predict_noise(&z, t, cond)?;
            z = if next + 1 == t {
                let sigma = if t == 1 { 0.0 } else { self.schedule.sigma(t) };
                let fresh = if sigma > 0.0 {
                    Some(LatentCode::new(shape, ancestral.normal_vec(len))?)
                } else {
                    None
                };
                reverse_step(&z, t, &eps_pred, self.schedule, fresh.as_ref())
            } else {
                rescale_step(&z, t, next, &eps_pred, self.schedule)
            }
            .map_err(|e| Error::Generation(format!("patch {p} variant {v} at t={t}: {e}")))?;
        }
        self.autoencoder.decode(&z)
    }

    /// Generate many variants. `Fast` splits the work across threads; the
    /// per-variant math is unchanged, so the output is the same either way.
    pub fn generate_all(&self, specs: &[&VariantSpec], exec: ExecMode) -> Result<Vec<ImageTensor>> {
        let workers = match exec {
            ExecMode::Deterministic => 1,
            ExecMode::Fast => thread::available_parallelism().map_or(1, |n| n.get()),
        };
        if workers <= 1 || specs.len() < 2 {
            return specs.iter().map(|s| self.generate(s)).collect();
        }
        let chunk = specs.len().div_ceil(workers);
        thread::scope(|scope| {
            let handles: Vec<_> = specs
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| self.generate(s)).collect::<Result<Vec<_>>>()))
                .collect();
            let mut out = Vec::with_capacity(specs.len());
            for h in handles {
                out.extend(h.join().map_err(|_| Error::Generation("worker panicked".into()))??);
            }
            Ok(out)
        })
    }
}

/// Convenience wrapper around [`Generator::generate`].
#[allow(clippy::too_many_arguments)]
pub fn generate_variant(
    coreset: &Coreset,
    spec: &VariantSpec,
    ae: &dyn Autoencoder,
    den: &dyn Denoiser,
    sched: &NoiseSchedule,
    seeds: &SeedStream,
    interpolation: Interpolation,
    mode: GenerationMode,
) -> Result<ImageTensor> {
    Generator::new(coreset, ae, den, sched, *seeds, interpolation, mode)?.generate(spec)
}
