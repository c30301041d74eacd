use std::path::Path;

use patchdiff::data::{load_png_dir, save_png_dir, synthetic};
use patchdiff::distill::{distill_with_models, evaluate, student_reconstruct, train_models, train_student};
use patchdiff::harness::{csv_without_timing, Bench, SweepSettings};
use patchdiff::image::resize;
use patchdiff::payload::{deserialize, serialize, verify_budget};
use patchdiff::{AblationKind, GenerationMode, RunConfig, Split};

fn smoke() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    RunConfig::load(&path).unwrap()
}

#[test]
fn smoke_student_beats_chance() {
    let cfg = RunConfig { epochs: 12, ..smoke() };
    let (train, test) = synthetic(&cfg.synthetic_spec()).unwrap();
    let models = train_models(&train, &cfg).unwrap().bundle;
    let payload = distill_with_models(&train, &cfg, &models.teacher, &models.autoencoder, &models.denoiser).unwrap();
    assert!(verify_budget(&payload).ok());
    let payload = deserialize(&serialize(&payload)).unwrap();
    let student = train_student(
        &payload,
        &models.autoencoder,
        &models.denoiser,
        cfg.student_arch,
        &cfg.student_optimizer(),
        cfg.temperature,
        cfg.student_seed,
    )
    .unwrap();
    let acc = evaluate(&student, &test).unwrap();
    assert!(acc > 0.5, "student accuracy {acc}");
}

#[test]
fn rho_zero_variants_are_upsampled_patches() {
    let cfg = RunConfig {
        rho: 0.0,
        mixup_enabled: false,
        generation_mode: GenerationMode::Anchored,
        ..smoke()
    };
    let (train, _) = synthetic(&cfg.synthetic_spec()).unwrap();
    let models = train_models(&train, &cfg).unwrap().bundle;
    let payload = distill_with_models(&train, &cfg, &models.teacher, &models.autoencoder, &models.denoiser).unwrap();
    let coreset = payload.coreset().unwrap();
    let stream = student_reconstruct(&payload, &models.autoencoder, &models.denoiser).unwrap();
    for epoch in stream {
        for (p, (img, _)) in epoch.unwrap().iter().enumerate() {
            let patch = &coreset.patch(p).unwrap().pixels;
            let up = resize(patch, cfg.image_size, cfg.image_size, cfg.interpolation).unwrap();
            assert_eq!(img.quantized(), up.quantized(), "patch {p}");
        }
    }
}

#[test]
fn sweep_rows_are_deterministic_apart_from_timing() {
    let cfg = RunConfig { epochs: 2, ..smoke() };
    let bench = Bench::prepare(&cfg).unwrap();
    let sweep = SweepSettings {
        repeats: 2,
        rho_values: vec![0.0, 0.5],
        ..SweepSettings::default()
    };
    let a = bench.ablate(AblationKind::Rho, &cfg, &sweep).unwrap();
    let b = bench
        .ablate(
            AblationKind::Rho,
            &cfg,
            &SweepSettings {
                parallel: true,
                ..sweep
            },
        )
        .unwrap();
    assert_eq!(a.len(), 2 * 3);
    assert_eq!(csv_without_timing(&a).unwrap(), csv_without_timing(&b).unwrap());
}

#[test]
fn png_directories_round_trip() {
    let (train, _) = synthetic(&smoke().synthetic_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_png_dir(&train, dir.path()).unwrap();
    let back = load_png_dir(dir.path(), Split::Train).unwrap();
    assert_eq!(back.len(), train.len());
    let mut original: Vec<_> = train
        .images()
        .iter()
        .zip(train.labels())
        .map(|(i, &y)| (y, i.content_hash()))
        .collect();
    let mut loaded: Vec<_> = back
        .images()
        .iter()
        .zip(back.labels())
        .map(|(i, &y)| (y, i.content_hash()))
        .collect();
    original.sort();
    loaded.sort();
    assert_eq!(original, loaded);
}
