//! Ablation sweeps on a shared set of trained models, with CSV, SVG and
//! manifest output.

mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use plot::render_svg;

use crate::config::{ClassifierArch, GenerationMode, RunConfig};
use crate::data::{load_png_dir, synthetic, LabeledDataset, Split};
use crate::distill::{distill_detailed, evaluate, train_models, train_student_report, DistillOutput};
use crate::error::{Error, Result};
use crate::expand::{divergence, Generator};
use crate::models::{ModelBundle, ReconstructionStatus};
use crate::payload::DistilledPayload;
use crate::seed::SeedStream;

/// Student epochs whose wall time enters the per-epoch median.
const TIMED_EPOCHS: usize = 5;

/// Train and test split named by the config: PNG directories when
/// `train_dir` is set, the synthetic benchmark otherwise.
pub fn load_data(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.train_dir.is_empty() {
        return synthetic(&cfg.synthetic_spec());
    }
    if cfg.test_dir.is_empty() {
        return Err(Error::config("test_dir", "required when train_dir is set"));
    }
    Ok((
        load_png_dir(Path::new(&cfg.train_dir), Split::Train)?,
        load_png_dir(Path::new(&cfg.test_dir), Split::Test)?,
    ))
}

/// One CSV row. Per-repeat rows carry the repeat number; the aggregate row
/// of a group has `repeat = "mean"` and fills `accuracy_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub series: String,
    pub x: String,
    pub repeat: String,
    pub master_seed: u64,
    pub accuracy: f64,
    pub accuracy_std: Option<f64>,
    pub divergence: Option<f64>,
    pub epoch_seconds: f64,
}

impl MetricsRow {
    pub fn is_aggregate(&self) -> bool {
        self.repeat == "mean"
    }
}

/// The four sweep kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Components,
    PatchSize,
    Rho,
    CrossArch,
}

impl AblationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::Components => "components",
            AblationKind::PatchSize => "patchsize",
            AblationKind::Rho => "rho",
            AblationKind::CrossArch => "crossarch",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "components" => Ok(AblationKind::Components),
            "patchsize" => Ok(AblationKind::PatchSize),
            "rho" => Ok(AblationKind::Rho),
            "crossarch" => Ok(AblationKind::CrossArch),
            _ => Err(Error::InvalidInput(format!(
                "unknown ablation {s:?}; expected components, patchsize, rho or crossarch"
            ))),
        }
    }
}

/// The five generation settings compared by [`Bench::ablate_components`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentMode {
    BaselinePatches,
    CondOnly,
    Superres,
    SuperresAug,
    SuperresAugMixup,
}

impl ComponentMode {
    pub const ALL: [ComponentMode; 5] = [
        ComponentMode::BaselinePatches,
        ComponentMode::CondOnly,
        ComponentMode::Superres,
        ComponentMode::SuperresAug,
        ComponentMode::SuperresAugMixup,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ComponentMode::BaselinePatches => "baseline-patches",
            ComponentMode::CondOnly => "cond-only",
            ComponentMode::Superres => "superres",
            ComponentMode::SuperresAug => "superres+aug",
            ComponentMode::SuperresAugMixup => "superres+aug+mixup",
        }
    }

    /// `cfg` with this mode's generation settings.
    pub fn apply(self, cfg: &RunConfig, rho_low: f64, rho_high: f64) -> RunConfig {
        let (mode, rho, mixup) = match self {
            ComponentMode::BaselinePatches => (GenerationMode::Patches, 0.0, false),
            ComponentMode::CondOnly => (GenerationMode::CondOnly, 1.0, false),
            ComponentMode::Superres => (GenerationMode::Anchored, rho_low, false),
            ComponentMode::SuperresAug => (GenerationMode::Anchored, rho_high, false),
            ComponentMode::SuperresAugMixup => (GenerationMode::Anchored, rho_high, true),
        };
        RunConfig {
            generation_mode: mode,
            rho,
            mixup_enabled: mixup,
            ..cfg.clone()
        }
    }
}

/// Sweep-wide knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub repeats: usize,
    /// Run repeats on separate threads. Timing columns are then unreliable.
    pub parallel: bool,
    pub rho_low: f64,
    pub rho_high: f64,
    pub r_values: Vec<usize>,
    pub rho_values: Vec<f64>,
    pub archs: Vec<ClassifierArch>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            repeats: 3,
            parallel: false,
            rho_low: 0.4,
            rho_high: 0.8,
            r_values: vec![1, 2, 4],
            rho_values: vec![0.0, 0.4, 0.8],
            archs: vec![ClassifierArch::Conv { width: 8 }, ClassifierArch::Mlp { hidden: 64 }],
        }
    }
}

/// Result of one distill-then-train run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub master_seed: u64,
    pub accuracy: f64,
    /// Median wall time over the last few student epochs, regeneration included.
    pub epoch_seconds: f64,
    /// Mean pixel distance between variants and their anchors.
    pub divergence: f64,
}

/// Data plus the teacher, autoencoder and denoiser, trained once and shared
/// by every run of a sweep.
pub struct Bench {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub models: ModelBundle,
    pub ae_heldout_mse: f64,
}

impl Bench {
    /// Load the data named by `cfg` and train the models.
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        let (train, test) = load_data(cfg)?;
        Self::from_data(train, test, cfg)
    }

    pub fn from_data(train: LabeledDataset, test: LabeledDataset, cfg: &RunConfig) -> Result<Self> {
        let trained = train_models(&train, cfg)?;
        if trained.ae_status == ReconstructionStatus::Warning {
            warn!(
                "autoencoder held-out MSE {:.4} is above the {:.4} target",
                trained.ae_heldout_mse, cfg.ae_mse_threshold
            );
        }
        Ok(Self::with_models(train, test, trained.bundle, trained.ae_heldout_mse))
    }

    pub fn with_models(train: LabeledDataset, test: LabeledDataset, models: ModelBundle, ae_heldout_mse: f64) -> Self {
        Self {
            train,
            test,
            models,
            ae_heldout_mse,
        }
    }

    /// Distill with `cfg` as given.
    pub fn distill(&self, cfg: &RunConfig) -> Result<DistillOutput> {
        let m = &self.models;
        distill_detailed(&self.train, cfg, &m.teacher, &m.autoencoder, &m.denoiser)
    }

    /// Distill and train one student; repeat `i` uses seeds offset by `i`.
    pub fn run_once(&self, cfg: &RunConfig, repeat: usize) -> Result<RunOutcome> {
        let cfg = RunConfig {
            master_seed: cfg.master_seed.wrapping_add(repeat as u64),
            student_seed: cfg.student_seed.wrapping_add(repeat as u64),
            ..cfg.clone()
        };
        let out = self.distill(&cfg)?;
        let divergence = self.mean_divergence(&cfg, &out)?;
        let (accuracy, epoch_seconds) = self.train_and_score(&out.payload, &cfg, cfg.student_arch)?;
        info!(
            "mode {:?} rho {} r {} seed {}: accuracy {:.4}",
            cfg.generation_mode, cfg.rho, cfg.r, cfg.master_seed, accuracy
        );
        Ok(RunOutcome {
            master_seed: cfg.master_seed,
            accuracy,
            epoch_seconds,
            divergence,
        })
    }

    fn train_and_score(&self, payload: &DistilledPayload, cfg: &RunConfig, arch: ClassifierArch) -> Result<(f64, f64)> {
        let m = &self.models;
        let report = train_student_report(
            payload,
            &m.autoencoder,
            &m.denoiser,
            arch,
            &cfg.student_optimizer(),
            cfg.temperature,
            cfg.student_seed,
        )?;
        let tail = report.epoch_seconds.len().saturating_sub(TIMED_EPOCHS);
        Ok((
            evaluate(&report.model, &self.test)?,
            median(&report.epoch_seconds[tail..]),
        ))
    }

    fn mean_divergence(&self, cfg: &RunConfig, out: &DistillOutput) -> Result<f64> {
        let m = &self.models;
        let sched = crate::distill::schedule_for(cfg)?;
        let gen = Generator::new(
            &out.coreset,
            &m.autoencoder,
            &m.denoiser,
            &sched,
            SeedStream::new(cfg.master_seed),
            cfg.interpolation,
            cfg.generation_mode,
        )?;
        let mut total = 0.0;
        for (spec, img) in out.payload.specs.iter().zip(&out.images) {
            total += divergence(img, &gen.anchor(spec.patch_index)?)?;
        }
        Ok(total / out.images.len().max(1) as f64)
    }

    fn repeats(&self, cfg: &RunConfig, sweep: &SweepSettings) -> Result<Vec<RunOutcome>> {
        if sweep.repeats == 0 {
            return Err(Error::InvalidInput("repeats must be at least 1".into()));
        }
        if !sweep.parallel {
            return (0..sweep.repeats).map(|i| self.run_once(cfg, i)).collect();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..sweep.repeats)
                .map(|i| s.spawn(move || self.run_once(cfg, i)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::InvalidInput("sweep worker panicked".into())))
                })
                .collect()
        })
    }

    /// `repeats` runs with seeds `master_seed + i`, one row each, plus the
    /// aggregate row.
    pub fn run_experiment(&self, cfg: &RunConfig, repeats: usize) -> Result<Vec<MetricsRow>> {
        let sweep = SweepSettings {
            repeats,
            ..SweepSettings::default()
        };
        let runs = self.repeats(cfg, &sweep)?;
        Ok(rows_for("run", "run", &cfg.generation_mode.to_string(), &runs, false))
    }

    /// The five generation settings on identical models and seeds.
    pub fn ablate_components(&self, cfg: &RunConfig, sweep: &SweepSettings) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        for mode in ComponentMode::ALL {
            let runs = self.repeats(&mode.apply(cfg, sweep.rho_low, sweep.rho_high), sweep)?;
            rows.extend(rows_for("components", "accuracy", mode.label(), &runs, false));
        }
        Ok(rows)
    }

    /// Accuracy against `r` at fixed IPC for the configured mode and for
    /// plain patches.
    pub fn ablate_patch_size(&self, cfg: &RunConfig, sweep: &SweepSettings) -> Result<Vec<MetricsRow>> {
        if sweep.r_values.is_empty() || sweep.r_values.contains(&0) {
            return Err(Error::config("r_values", "need at least one value, all ≥ 1"));
        }
        let mut rows = Vec::new();
        for &r in &sweep.r_values {
            let ours = RunConfig { r, ..cfg.clone() };
            let runs = self.repeats(&ours, sweep)?;
            rows.extend(rows_for("patchsize", "ours", &r.to_string(), &runs, false));
            let base = ComponentMode::BaselinePatches.apply(&ours, sweep.rho_low, sweep.rho_high);
            let runs = self.repeats(&base, sweep)?;
            rows.extend(rows_for("patchsize", "baseline-patches", &r.to_string(), &runs, false));
        }
        Ok(rows)
    }

    /// Accuracy and anchor divergence against `ρ`.
    pub fn ablate_rho(&self, cfg: &RunConfig, sweep: &SweepSettings) -> Result<Vec<MetricsRow>> {
        if sweep.rho_values.is_empty() || sweep.rho_values.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("rho_values", "need at least one value, all in [0, 1]"));
        }
        let mut rows = Vec::new();
        for &rho in &sweep.rho_values {
            let c = RunConfig {
                rho,
                generation_mode: GenerationMode::Anchored,
                ..cfg.clone()
            };
            let runs = self.repeats(&c, sweep)?;
            rows.extend(rows_for("rho", "ours", &rho.to_string(), &runs, true));
        }
        Ok(rows)
    }

    /// One student per architecture from the same payload, plus the mean.
    pub fn cross_arch_eval(
        &self,
        payload: &DistilledPayload,
        cfg: &RunConfig,
        archs: &[ClassifierArch],
    ) -> Result<Vec<MetricsRow>> {
        if archs.is_empty() {
            return Err(Error::InvalidInput(
                "cross-architecture evaluation needs an architecture".into(),
            ));
        }
        let mut rows = Vec::new();
        for &arch in archs {
            let (accuracy, epoch_seconds) = self.train_and_score(payload, cfg, arch)?;
            rows.push(MetricsRow {
                experiment: "crossarch".into(),
                series: "accuracy".into(),
                x: arch.to_string(),
                repeat: "0".into(),
                master_seed: payload.header.master_seed,
                accuracy,
                accuracy_std: None,
                divergence: None,
                epoch_seconds,
            });
        }
        let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
        let secs: Vec<f64> = rows.iter().map(|r| r.epoch_seconds).collect();
        rows.push(MetricsRow {
            experiment: "crossarch".into(),
            series: "accuracy".into(),
            x: "all".into(),
            repeat: "mean".into(),
            master_seed: payload.header.master_seed,
            accuracy: mean(&accs),
            accuracy_std: Some(sample_std(&accs)),
            divergence: None,
            epoch_seconds: median(&secs),
        });
        Ok(rows)
    }

    /// Run the sweep `kind`.
    pub fn ablate(&self, kind: AblationKind, cfg: &RunConfig, sweep: &SweepSettings) -> Result<Vec<MetricsRow>> {
        match kind {
            AblationKind::Components => self.ablate_components(cfg, sweep),
            AblationKind::PatchSize => self.ablate_patch_size(cfg, sweep),
            AblationKind::Rho => self.ablate_rho(cfg, sweep),
            AblationKind::CrossArch => {
                let out = self.distill(cfg)?;
                self.cross_arch_eval(&out.payload, cfg, &sweep.archs)
            }
        }
    }
}

fn rows_for(experiment: &str, series: &str, x: &str, runs: &[RunOutcome], with_divergence: bool) -> Vec<MetricsRow> {
    let row = |repeat: String, seed: u64, acc: f64, std: Option<f64>, div: f64, secs: f64| MetricsRow {
        experiment: experiment.into(),
        series: series.into(),
        x: x.into(),
        repeat,
        master_seed: seed,
        accuracy: acc,
        accuracy_std: std,
        divergence: with_divergence.then_some(div),
        epoch_seconds: secs,
    };
    let mut rows: Vec<MetricsRow> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            row(
                i.to_string(),
                r.master_seed,
                r.accuracy,
                None,
                r.divergence,
                r.epoch_seconds,
            )
        })
        .collect();
    let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let divs: Vec<f64> = runs.iter().map(|r| r.divergence).collect();
    let secs: Vec<f64> = runs.iter().map(|r| r.epoch_seconds).collect();
    rows.push(row(
        "mean".into(),
        runs.first().map_or(0, |r| r.master_seed),
        mean(&accs),
        Some(sample_std(&accs)),
        mean(&divs),
        median(&secs),
    ));
    rows
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the `n − 1` denominator; 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// CSV text with the timing column blanked, for reproducibility checks.
pub fn csv_without_timing(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(MetricsRow {
            epoch_seconds: 0.0,
            ..row.clone()
        })
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    kind: &'a str,
    repeats: usize,
    parallel: bool,
    rho_low: f64,
    rho_high: f64,
    r_values: &'a [usize],
    rho_values: &'a [f64],
    archs: Vec<String>,
    ae_heldout_mse: f64,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct SweepOutputs {
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Write `metrics.csv`, the plots (rendered from the CSV just written) and
/// `manifest.toml` into `dir`.
pub fn write_outputs(
    dir: &Path,
    kind: AblationKind,
    cfg: &RunConfig,
    sweep: &SweepSettings,
    ae_heldout_mse: f64,
    rows: &[MetricsRow],
) -> Result<SweepOutputs> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("metrics.csv");
    write_csv(rows, &csv_path)?;
    let plots = regenerate_plots(&csv_path, dir)?;
    let mut outputs = vec!["metrics.csv".to_string()];
    outputs.extend(
        plots
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned()),
    );
    let manifest = Manifest {
        kind: kind.as_str(),
        repeats: sweep.repeats,
        parallel: sweep.parallel,
        rho_low: sweep.rho_low,
        rho_high: sweep.rho_high,
        r_values: &sweep.r_values,
        rho_values: &sweep.rho_values,
        archs: sweep.archs.iter().map(ToString::to_string).collect(),
        ae_heldout_mse,
        outputs,
        config: cfg,
    };
    let manifest_path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
    fs::write(&manifest_path, text)?;
    Ok(SweepOutputs {
        csv: csv_path,
        plots,
        manifest: manifest_path,
    })
}

/// Render plots for a metrics CSV into `dir`: `accuracy.svg` always,
/// `divergence.svg` when the rows carry divergence.
pub fn regenerate_plots(csv_path: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_csv(csv_path)?;
    let title = rows.first().map_or("metrics", |r| r.experiment.as_str()).to_string();
    let mut written = Vec::new();
    let acc = dir.join("accuracy.svg");
    fs::write(
        &acc,
        render_svg(&rows, &format!("{title}: accuracy"), |r| Some(r.accuracy), true),
    )?;
    written.push(acc);
    if rows.iter().any(|r| r.divergence.is_some()) {
        let div = dir.join("divergence.svg");
        fs::write(
            &div,
            render_svg(&rows, &format!("{title}: anchor divergence"), |r| r.divergence, false),
        )?;
        written.push(div);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(acc: f64) -> RunOutcome {
        RunOutcome {
            master_seed: 7,
            accuracy: acc,
            epoch_seconds: acc * 2.0,
            divergence: 0.1,
        }
    }

    #[test]
    fn three_repeats_give_four_rows() {
        let rows = rows_for(
            "run",
            "run",
            "anchored",
            &[outcome(0.5), outcome(0.7), outcome(0.9)],
            false,
        );
        assert_eq!(rows.len(), 4);
        let agg = &rows[3];
        assert!(agg.is_aggregate());
        assert!((agg.accuracy - 0.7).abs() < 1e-12);
        // sample std of {0.5, 0.7, 0.9} is 0.2
        assert!((agg.accuracy_std.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(agg.epoch_seconds, 1.4);
        assert!(rows.iter().all(|r| r.divergence.is_none()));
    }

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(sample_std(&[1.0]), 0.0);
        assert!((sample_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn component_modes() {
        let cfg = RunConfig::desk();
        let base = ComponentMode::BaselinePatches.apply(&cfg, 0.4, 0.8);
        assert_eq!(base.generation_mode, GenerationMode::Patches);
        assert_eq!(base.start_step(), 0);
        assert_eq!(
            ComponentMode::CondOnly.apply(&cfg, 0.4, 0.8).start_step(),
            cfg.timesteps
        );
        let low = ComponentMode::Superres.apply(&cfg, 0.4, 0.8);
        assert_eq!((low.rho, low.mixup_enabled), (0.4, false));
        let full = ComponentMode::SuperresAugMixup.apply(&cfg, 0.4, 0.8);
        assert_eq!((full.rho, full.mixup_enabled), (0.8, true));
        for mode in ComponentMode::ALL {
            mode.apply(&cfg, 0.4, 0.8).validate().unwrap();
        }
    }

    #[test]
    fn csv_round_trip_and_plots() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = rows_for("rho", "ours", "0", &[outcome(0.4), outcome(0.6)], true);
        rows.extend(rows_for("rho", "ours", "0.8", &[outcome(0.5), outcome(0.5)], true));
        let path = dir.path().join("m.csv");
        write_csv(&rows, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), rows);
        let plots = regenerate_plots(&path, dir.path()).unwrap();
        assert_eq!(plots.len(), 2);
        let first = fs::read(&plots[0]).unwrap();
        regenerate_plots(&path, dir.path()).unwrap();
        assert_eq!(fs::read(&plots[0]).unwrap(), first);
        assert!(String::from_utf8(first).unwrap().starts_with("<svg"));
    }

    #[test]
    fn outputs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let rows = rows_for("components", "accuracy", "cond-only", &[outcome(0.3)], false);
        let cfg = RunConfig::desk();
        let out = write_outputs(
            dir.path(),
            AblationKind::Components,
            &cfg,
            &SweepSettings::default(),
            0.007,
            &rows,
        )
        .unwrap();
        assert_eq!(out.plots.len(), 1);
        let manifest: toml::Value = toml::from_str(&fs::read_to_string(&out.manifest).unwrap()).unwrap();
        assert_eq!(manifest["kind"].as_str(), Some("components"));
        let echoed: RunConfig = manifest["config"].clone().try_into().unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn timing_is_excluded_from_the_reproducible_view() {
        let a = rows_for("run", "run", "x", &[outcome(0.5)], false);
        let mut b = a.clone();
        b[0].epoch_seconds = 99.0;
        assert_eq!(csv_without_timing(&a).unwrap(), csv_without_timing(&b).unwrap());
    }

    #[test]
    fn kind_parsing() {
        for kind in [
            AblationKind::Components,
            AblationKind::PatchSize,
            AblationKind::Rho,
            AblationKind::CrossArch,
        ] {
            assert_eq!(kind.as_str().parse::<AblationKind>().unwrap(), kind);
        }
        assert!("size".parse::<AblationKind>().is_err());
    }
}
