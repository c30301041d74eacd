//! Run configuration and its validation.
//!
//! Configuration files are flat TOML key/value documents whose keys are the
//! field names of [`RunConfig`]; unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result, Violation};
use crate::image::Interpolation;
use crate::schedule::{rho_to_step, SigmaMode};

/// How variants are produced from coreset patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationMode {
    /// Upsample, encode, optionally mix, corrupt to `t'`, denoise, decode.
    #[default]
    Anchored,
    /// Upsampled real patches only; the latent models are never called.
    Patches,
    /// Class-conditioned generation from pure noise at `t' = T`, ignoring
    /// the stored patch content.
    CondOnly,
}

impl GenerationMode {
    pub fn code(self) -> u8 {
        match self {
            GenerationMode::Anchored => 0,
            GenerationMode::Patches => 1,
            GenerationMode::CondOnly => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GenerationMode::Anchored),
            1 => Some(GenerationMode::Patches),
            2 => Some(GenerationMode::CondOnly),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Anchored => "anchored",
            GenerationMode::Patches => "patches",
            GenerationMode::CondOnly => "cond-only",
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    /// Sequential per-variant math; required for payload builds.
    #[default]
    Deterministic,
    /// Parallel generation for exploratory runs. Refused by payload builders.
    Fast,
}

/// Classifier architecture descriptor, written `conv:<width>` or
/// `mlp:<hidden>` in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ClassifierArch {
    Conv { width: usize },
    Mlp { hidden: usize },
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch::Conv { width: 8 }
    }
}

impl fmt::Display for ClassifierArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierArch::Conv { width } => write!(f, "conv:{width}"),
            ClassifierArch::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

impl FromStr for ClassifierArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("arch", format!("expected conv:<width> or mlp:<hidden>, got {s:?}"));
        let (kind, size) = s.split_once(':').ok_or_else(bad)?;
        let size: usize = size.trim().parse().map_err(|_| bad())?;
        if size == 0 {
            return Err(bad());
        }
        match kind.trim() {
            "conv" => Ok(ClassifierArch::Conv { width: size }),
            "mlp" => Ok(ClassifierArch::Mlp { hidden: size }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ClassifierArch {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ClassifierArch> for String {
    fn from(a: ClassifierArch) -> String {
        a.to_string()
    }
}

/// Optimizer settings for one training procedure (AdamW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            epochs: 300,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // budget
    #[serde(alias = "IPC")]
    pub ipc: usize,
    pub r: usize,
    /// Candidate crops mined per image.
    #[serde(alias = "P")]
    pub p: usize,
    pub crop_scale_lo: f64,
    pub crop_scale_hi: f64,
    pub crop_interpolation: Interpolation,

    // expansion
    /// Variants per patch; defaults to `epochs`.
    pub m: Option<usize>,
    pub rho: f64,
    #[serde(alias = "T")]
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,
    pub n_steps: usize,
    pub mixup_enabled: bool,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub interpolation: Interpolation,
    pub generation_mode: GenerationMode,
    pub exec_mode: ExecMode,
    pub master_seed: u64,

    // student
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub student_arch: ClassifierArch,
    pub student_seed: u64,

    // models
    pub model_seed: u64,
    pub teacher_arch: ClassifierArch,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub ae_width: usize,
    pub latent_channels: usize,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub ae_mse_threshold: f64,
    pub denoiser_width: usize,
    pub denoiser_epochs: usize,
    pub denoiser_lr: f64,
    pub cond_dropout: f64,
    pub model_batch_size: usize,
    pub model_weight_decay: f64,

    // data
    pub dataset_name: String,
    /// Directory of `<class>/*.png` training images; the synthetic
    /// benchmark is used when empty.
    pub train_dir: String,
    pub test_dir: String,
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub data_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        let opt = OptimizerSettings::default();
        Self {
            ipc: 1,
            r: 2,
            p: 16,
            crop_scale_lo: 0.3,
            crop_scale_hi: 1.0,
            crop_interpolation: Interpolation::Bilinear,
            m: None,
            rho: 0.8,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_mode: SigmaMode::Posterior,
            n_steps: 5,
            mixup_enabled: true,
            gamma_lo: 0.5,
            gamma_hi: 1.0,
            interpolation: Interpolation::Bicubic,
            generation_mode: GenerationMode::Anchored,
            exec_mode: ExecMode::Deterministic,
            master_seed: 0,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            epochs: opt.epochs,
            batch_size: opt.batch_size,
            temperature: 1.0,
            student_arch: ClassifierArch::default(),
            student_seed: 0,
            model_seed: 0,
            teacher_arch: ClassifierArch::default(),
            teacher_epochs: 8,
            teacher_lr: 3e-3,
            ae_width: 16,
            latent_channels: 4,
            ae_epochs: 8,
            ae_lr: 3e-3,
            ae_mse_threshold: 0.01,
            denoiser_width: 32,
            denoiser_epochs: 20,
            denoiser_lr: 2e-3,
            cond_dropout: 0.1,
            model_batch_size: 32,
            model_weight_decay: 1e-4,
            dataset_name: "synthetic".into(),
            train_dir: String::new(),
            test_dir: String::new(),
            classes: synth.classes,
            image_size: synth.image_size,
            train_per_class: synth.train_per_class,
            test_per_class: synth.test_per_class,
            data_seed: synth.seed,
        }
    }
}

impl RunConfig {
    /// Defaults shrunk for the synthetic CPU benchmark: 30 student epochs
    /// (so `m = 30`) with small batches so each epoch takes several steps.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 2e-3,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes")
    }

    /// Variants generated per patch.
    pub fn variants_per_patch(&self) -> usize {
        self.m.unwrap_or(self.epochs)
    }

    /// Patches kept per class: `IPC × r²`.
    pub fn patches_per_class(&self) -> usize {
        self.ipc * self.r * self.r
    }

    /// The corruption step `t'` implied by the generation mode.
    pub fn start_step(&self) -> usize {
        match self.generation_mode {
            GenerationMode::Anchored => rho_to_step(self.rho, self.timesteps),
            GenerationMode::Patches => 0,
            GenerationMode::CondOnly => self.timesteps,
        }
    }

    pub fn student_optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    pub fn teacher_optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.teacher_lr,
            weight_decay: self.model_weight_decay,
            epochs: self.teacher_epochs,
            batch_size: self.model_batch_size,
        }
    }

    pub fn ae_optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.ae_lr,
            weight_decay: self.model_weight_decay,
            epochs: self.ae_epochs,
            batch_size: self.model_batch_size,
        }
    }

    pub fn denoiser_optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.denoiser_lr,
            weight_decay: self.model_weight_decay,
            epochs: self.denoiser_epochs,
            batch_size: self.model_batch_size,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            image_size: self.image_size,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            seed: self.data_seed,
        }
    }

    /// Every violated constraint, or `Ok(())`.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let mut check = |ok: bool, field: &'static str, msg: &str| {
            if !ok {
                v.push(Violation::new(field, msg));
            }
        };
        check(self.ipc >= 1, "ipc", "IPC ≥ 1 required");
        check(self.r >= 1, "r", "r ≥ 1 required");
        check(self.p >= 1, "p", "P ≥ 1 required");
        check(self.m.is_none_or(|m| m >= 1), "m", "m ≥ 1 required");
        check((0.0..=1.0).contains(&self.rho), "rho", "ρ out of [0,1]");
        check(self.timesteps >= 1, "timesteps", "T ≥ 1 required");
        check(
            self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0,
            "beta_start",
            "0 < beta_start ≤ beta_end < 1 required",
        );
        check(self.n_steps >= 1, "n_steps", "n_steps ≥ 1 required");
        if (0.0..=1.0).contains(&self.rho) && self.timesteps >= 1 {
            let t_start = self.start_step();
            check(
                t_start == 0 || self.n_steps <= t_start,
                "n_steps",
                &format!("n_steps ≤ round(ρ·T) = {t_start} required"),
            );
        }
        check(
            0.0 <= self.gamma_lo && self.gamma_lo <= self.gamma_hi && self.gamma_hi <= 1.0,
            "gamma_lo",
            "0 ≤ gamma_lo ≤ gamma_hi ≤ 1 required",
        );
        check(
            0.0 < self.crop_scale_lo && self.crop_scale_lo <= self.crop_scale_hi && self.crop_scale_hi <= 1.0,
            "crop_scale_lo",
            "0 < crop_scale_lo ≤ crop_scale_hi ≤ 1 required",
        );
        check(self.lr > 0.0, "lr", "learning rate must be positive");
        check(self.weight_decay >= 0.0, "weight_decay", "must be non-negative");
        check(self.batch_size >= 1, "batch_size", "must be ≥ 1");
        check(self.temperature > 0.0, "temperature", "must be positive");
        check(self.teacher_lr > 0.0, "teacher_lr", "must be positive");
        check(self.ae_lr > 0.0, "ae_lr", "must be positive");
        check(self.denoiser_lr > 0.0, "denoiser_lr", "must be positive");
        check(self.model_batch_size >= 1, "model_batch_size", "must be ≥ 1");
        check(
            self.model_weight_decay >= 0.0,
            "model_weight_decay",
            "must be non-negative",
        );
        check(self.ae_width >= 1, "ae_width", "must be ≥ 1");
        check(self.latent_channels >= 1, "latent_channels", "must be ≥ 1");
        check(self.denoiser_width >= 1, "denoiser_width", "must be ≥ 1");
        check(
            (0.0..1.0).contains(&self.cond_dropout),
            "cond_dropout",
            "must be in [0, 1)",
        );
        check(self.image_size >= 4, "image_size", "must be ≥ 4");
        check(
            self.image_size / self.r.max(1) >= 1,
            "r",
            "r must not exceed the image size",
        );
        check((2..=10).contains(&self.classes), "classes", "must be in 2..=10");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Return the configuration unchanged if it is valid.
pub fn validate_config(config: RunConfig) -> Result<RunConfig> {
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(err: Error) -> Vec<(&'static str, String)> {
        match err {
            Error::Config(v) => v.into_iter().map(|v| (v.field, v.message)).collect(),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig {
            rho: 0.8,
            timesteps: 1000,
            n_steps: 5,
            ..RunConfig::default()
        };
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.weight_decay, 0.01);
        assert_eq!(cfg.epochs, 300);
    }

    #[test]
    fn rho_out_of_range() {
        let cfg = RunConfig {
            rho: 1.5,
            ..RunConfig::default()
        };
        let errs = fields(validate_config(cfg).unwrap_err());
        assert!(errs.contains(&("rho", "ρ out of [0,1]".to_string())));
    }

    #[test]
    fn r_zero() {
        let cfg = RunConfig {
            r: 0,
            ..RunConfig::default()
        };
        let errs = fields(validate_config(cfg).unwrap_err());
        assert!(errs.contains(&("r", "r ≥ 1 required".to_string())));
    }

    #[test]
    fn reports_every_violation() {
        let cfg = RunConfig {
            ipc: 0,
            r: 0,
            m: Some(0),
            ..RunConfig::default()
        };
        let errs = fields(validate_config(cfg).unwrap_err());
        let names: Vec<_> = errs.iter().map(|e| e.0).collect();
        for f in ["ipc", "r", "m"] {
            assert!(names.contains(&f), "{f} missing from {names:?}");
        }
    }

    #[test]
    fn too_many_steps_for_rho() {
        let cfg = RunConfig {
            rho: 0.003,
            timesteps: 1000,
            n_steps: 5,
            ..RunConfig::default()
        };
        let errs = fields(validate_config(cfg).unwrap_err());
        assert_eq!(errs[0].0, "n_steps");
    }

    #[test]
    fn rho_zero_waives_step_bound() {
        let cfg = RunConfig {
            rho: 0.0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn toml_keys_and_aliases() {
        let cfg = RunConfig::from_toml_str(
            "IPC = 2\nr = 4\nP = 8\nT = 500\nrho = 0.4\nsigma_mode = \"deterministic\"\nstudent_arch = \"mlp:32\"\n",
        )
        .unwrap();
        assert_eq!(cfg.ipc, 2);
        assert_eq!(cfg.r, 4);
        assert_eq!(cfg.p, 8);
        assert_eq!(cfg.timesteps, 500);
        assert_eq!(cfg.sigma_mode, SigmaMode::Deterministic);
        assert_eq!(cfg.student_arch, ClassifierArch::Mlp { hidden: 32 });
        assert_eq!(cfg.variants_per_patch(), cfg.epochs);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("ipc = 1\nbogus = 3\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig {
            m: Some(7),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn arch_parsing() {
        assert_eq!(
            "conv:16".parse::<ClassifierArch>().unwrap(),
            ClassifierArch::Conv { width: 16 }
        );
        assert!("resnet:18".parse::<ClassifierArch>().is_err());
        assert!("conv:0".parse::<ClassifierArch>().is_err());
    }
}
