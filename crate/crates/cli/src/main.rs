use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use patchdiff::data::{save_png_dir, synthetic, LabeledDataset};
use patchdiff::distill::{distill_with_models, evaluate, train_models, train_student_report};
use patchdiff::harness::{load_data, median, write_outputs, AblationKind, Bench, SweepSettings};
use patchdiff::models::{load_checkpoint, save_checkpoint, ConvAutoencoder, ModelBundle, UNetDenoiser};
use patchdiff::payload::{deserialize, serialize, verify_budget};
use patchdiff::{ClassifierArch, RunConfig, Split};

const TEACHER: &str = "teacher.ckpt";
const AUTOENCODER: &str = "autoencoder.ckpt";
const DENOISER: &str = "denoiser.ckpt";

#[derive(Parser)]
#[command(name = "patchdiff", version, about = "Patch coresets expanded by latent diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or load) the models and write a payload.
    Distill {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Model checkpoint directory; reused when it already holds all three
        /// checkpoints, otherwise written. Defaults to `<out dir>/models`.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regenerate the variants of a payload and train a student on them.
    TrainStudent {
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory with the autoencoder and denoiser checkpoints.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Config supplying the student optimizer, architecture and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        arch: Option<ClassifierArch>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also report accuracy on this PNG directory.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Top-1 accuracy of a classifier checkpoint on a PNG directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Decode a payload and print its header, budget table and score summary.
    Verify {
        #[arg(long)]
        payload: PathBuf,
    },
    /// Write the configured dataset as `train/` and `test/` PNG directories.
    ExportData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation sweep and write metrics.csv, plots and manifest.toml.
    Ablate {
        #[arg(long, value_parser = parse_kind)]
        kind: AblationKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Run repeats concurrently (accuracy only; timings become unreliable).
        #[arg(long)]
        parallel: bool,
        #[arg(long, value_delimiter = ',')]
        r_values: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        rho_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        archs: Option<Vec<ClassifierArch>>,
    },
}

fn parse_kind(s: &str) -> Result<AblationKind, String> {
    s.parse().map_err(|e: patchdiff::Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::desk(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn models_dir(explicit: Option<PathBuf>, beside: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| beside.parent().unwrap_or(Path::new(".")).join("models"))
}

fn load_bundle(dir: &Path) -> Result<Option<ModelBundle>> {
    let paths = [TEACHER, AUTOENCODER, DENOISER].map(|n| dir.join(n));
    if !paths.iter().all(|p| p.exists()) {
        return Ok(None);
    }
    Ok(Some(ModelBundle {
        teacher: load_checkpoint(&paths[0])?.into_classifier()?,
        autoencoder: load_checkpoint(&paths[1])?.into_autoencoder()?,
        denoiser: load_checkpoint(&paths[2])?.into_denoiser()?,
    }))
}

fn save_bundle(dir: &Path, b: &ModelBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&dir.join(TEACHER), &b.teacher.checkpoint())?;
    save_checkpoint(&dir.join(AUTOENCODER), &b.autoencoder.checkpoint())?;
    save_checkpoint(&dir.join(DENOISER), &b.denoiser.checkpoint())?;
    Ok(())
}

fn load_latent_models(dir: &Path) -> Result<(ConvAutoencoder, UNetDenoiser)> {
    let ae = load_checkpoint(&dir.join(AUTOENCODER))
        .with_context(|| format!("loading autoencoder from {}", dir.display()))?
        .into_autoencoder()?;
    let den = load_checkpoint(&dir.join(DENOISER))
        .with_context(|| format!("loading denoiser from {}", dir.display()))?
        .into_denoiser()?;
    Ok((ae, den))
}

fn distill(config: Option<PathBuf>, out: PathBuf, models: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let (train, _) = load_data(&cfg)?;
    let dir = models_dir(models, &out);
    let bundle = match load_bundle(&dir)? {
        Some(b) => {
            info!("reusing models from {}", dir.display());
            b
        }
        None => {
            let trained = train_models(&train, &cfg)?;
            println!(
                "autoencoder held-out MSE {:.5} ({:?})",
                trained.ae_heldout_mse, trained.ae_status
            );
            save_bundle(&dir, &trained.bundle)?;
            trained.bundle
        }
    };
    let payload = distill_with_models(&train, &cfg, &bundle.teacher, &bundle.autoencoder, &bundle.denoiser)?;
    let bytes = serialize(&payload);
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, &bytes)?;
    println!(
        "wrote {} ({} bytes, {} patches, {} variants); models in {}",
        out.display(),
        bytes.len(),
        payload.patches.len(),
        payload.specs.len(),
        dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_student_cmd(
    payload_path: PathBuf,
    out: PathBuf,
    models: Option<PathBuf>,
    config: Option<PathBuf>,
    arch: Option<ClassifierArch>,
    seed: Option<u64>,
    test: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let payload = deserialize(&fs::read(&payload_path)?)?;
    let (ae, den) = load_latent_models(&models_dir(models, &payload_path))?;
    let opt = cfg.student_optimizer();
    if opt.epochs > payload.header.m {
        info!("payload holds {} variants per patch; they will cycle", payload.header.m);
    }
    let report = train_student_report(
        &payload,
        &ae,
        &den,
        arch.unwrap_or(cfg.student_arch),
        &opt,
        cfg.temperature,
        seed.unwrap_or(cfg.student_seed),
    )?;
    save_checkpoint(&out, &report.model.checkpoint())?;
    println!(
        "trained {} epochs, final loss {:.4}, median epoch {:.3}s; wrote {}",
        report.epoch_losses.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        median(&report.epoch_seconds),
        out.display()
    );
    if let Some(dir) = test {
        let data = patchdiff::data::load_png_dir(&dir, Split::Test)?;
        println!("test accuracy {:.4}", evaluate(&report.model, &data)?);
    }
    Ok(())
}

fn eval(model: PathBuf, data: PathBuf) -> Result<()> {
    let clf = load_checkpoint(&model)?.into_classifier()?;
    let test = patchdiff::data::load_png_dir(&data, Split::Test)?;
    println!("accuracy {:.4} on {} images", evaluate(&clf, &test)?, test.len());
    Ok(())
}

fn verify(path: PathBuf) -> Result<()> {
    let payload = match deserialize(&fs::read(&path)?) {
        Ok(p) => p,
        Err(e) => bail!("[{}] {e}", e.code()),
    };
    payload.validate()?;
    let h = &payload.header;
    println!("checksums ok");
    println!(
        "dataset {}  K={}  image {}x{}  patch {}x{}",
        h.dataset_name, h.num_classes, h.height, h.width, h.patch_height, h.patch_width
    );
    println!(
        "IPC={} r={} P={} m={} rho={} T={} n_steps={} sigma={:?} mixup={} gamma=[{}, {}] mode={} seed={}",
        h.ipc,
        h.r,
        h.candidates,
        h.m,
        h.rho,
        h.timesteps,
        h.n_steps,
        h.sigma_mode,
        h.mixup_enabled,
        h.gamma_lo,
        h.gamma_hi,
        h.generation_mode,
        h.master_seed
    );
    println!("teacher     {}", h.teacher);
    println!("autoencoder {}", h.autoencoder);
    println!("denoiser    {}", h.denoiser);
    let budget = verify_budget(&payload);
    println!("{budget}");
    println!("class  ce min    ce median  ce max");
    for k in 0..h.num_classes {
        let scores: Vec<f64> = payload
            .patches
            .iter()
            .filter(|p| p.class_id == k)
            .map(|p| f64::from(p.ce_score))
            .collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("{k:>5}  {lo:<8.4}  {:<9.4}  {hi:.4}", median(&scores));
    }
    if !budget.ok() {
        bail!("budget violated for classes {:?}", budget.violations());
    }
    Ok(())
}

fn export_data(config: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let (train, test): (LabeledDataset, LabeledDataset) = synthetic(&cfg.synthetic_spec())?;
    save_png_dir(&train, &out.join("train"))?;
    save_png_dir(&test, &out.join("test"))?;
    println!(
        "wrote {} train and {} test images under {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ablate(
    kind: AblationKind,
    config: Option<PathBuf>,
    out: PathBuf,
    repeats: usize,
    parallel: bool,
    r_values: Option<Vec<usize>>,
    rho_values: Option<Vec<f64>>,
    archs: Option<Vec<ClassifierArch>>,
) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let defaults = SweepSettings::default();
    let sweep = SweepSettings {
        repeats,
        parallel,
        r_values: r_values.unwrap_or(defaults.r_values),
        rho_values: rho_values.unwrap_or(defaults.rho_values),
        archs: archs.unwrap_or(defaults.archs),
        ..defaults
    };
    let bench = Bench::prepare(&cfg)?;
    let rows = bench.ablate(kind, &cfg, &sweep)?;
    let outputs = write_outputs(&out, kind, &cfg, &sweep, bench.ae_heldout_mse, &rows)?;
    for r in rows
        .iter()
        .filter(|r| r.is_aggregate() || kind == AblationKind::CrossArch)
    {
        println!(
            "{:<22} {:<8} accuracy {:.4} ± {:.4}  epoch {:.3}s{}",
            r.series,
            r.x,
            r.accuracy,
            r.accuracy_std.unwrap_or(0.0),
            r.epoch_seconds,
            r.divergence.map(|d| format!("  divergence {d:.4}")).unwrap_or_default()
        );
    }
    println!("wrote {} and {}", outputs.csv.display(), outputs.manifest.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Distill {
            config,
            out,
            models,
            seed,
        } => distill(config, out, models, seed),
        Command::TrainStudent {
            payload,
            out,
            models,
            config,
            arch,
            seed,
            test,
        } => train_student_cmd(payload, out, models, config, arch, seed, test),
        Command::Eval { model, data } => eval(model, data),
        Command::Verify { payload } => verify(payload),
        Command::ExportData { config, out } => export_data(config, out),
        Command::Ablate {
            kind,
            config,
            out,
            repeats,
            parallel,
            r_values,
            rho_values,
            archs,
        } => ablate(kind, config, out, repeats, parallel, r_values, rho_values, archs),
    }
}
