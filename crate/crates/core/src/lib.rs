//! Budgeted patch coresets expanded by a latent denoiser.
//!
//! The teacher side mines low-resolution patches from a labelled dataset,
//! keeps the `IPC·r²` most confidently classified ones per class, and turns
//! each into `m` high-resolution variants by partially noising its latent and
//! denoising it again. Only the patches, the variant recipes and the
//! teacher's soft labels are shipped; the student regenerates every variant
//! bit-for-bit from them.

pub mod config;
pub mod coreset;
pub mod data;
pub mod distill;
pub mod error;
pub mod expand;
pub mod harness;
pub mod image;
pub mod models;
pub mod nn;
pub mod payload;
pub mod schedule;
pub mod seed;

pub use config::{validate_config, ClassifierArch, ExecMode, GenerationMode, OptimizerSettings, RunConfig};
pub use coreset::{build_coreset, mine_candidates, select_best_patch, Coreset, PatchRecord};
pub use data::{LabeledDataset, Split};
pub use distill::{
    distill_with_models, evaluate, student_reconstruct, teacher_distill, train_models, train_student, StudentStream,
};
pub use error::{Error, Result};
pub use expand::{generate_variant, mixup_latents, plan_variants, upsample, Generator, VariantSpec};
pub use harness::{AblationKind, Bench, ComponentMode, MetricsRow, SweepSettings};
pub use image::{ImageTensor, Interpolation};
pub use payload::{build_payload, deserialize, serialize, verify_budget, DistilledPayload, PayloadError, SoftLabel};
pub use schedule::{
    build_schedule, forward_noise, make_step_sequence, reverse_step, rho_to_step, LatentCode, NoiseSchedule, SigmaMode,
};
pub use seed::{derive_substream, PurposeTag, SeedStream};
