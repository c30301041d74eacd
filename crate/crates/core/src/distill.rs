//! End-to-end drivers: building a payload on the teacher side and training
//! a student from one.

use std::time::Instant;

use log::{debug, info, warn};

use crate::config::{ClassifierArch, ExecMode, OptimizerSettings, RunConfig};
use crate::coreset::{build_coreset, Coreset};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::expand::{plan_variants, Generator, VariantSpec};
use crate::image::ImageTensor;
use crate::models::{
    predict_soft_label, train_autoencoder, train_classifier, train_denoiser, Autoencoder, Classifier, ClassifierNet,
    Denoiser, ModelBundle, ReconstructionStatus,
};
use crate::nn::AdamW;
use crate::payload::{build_payload, DistilledPayload, SoftLabel};
use crate::schedule::NoiseSchedule;
use crate::seed::{PurposeTag, SeedStream};

/// The diffusion schedule described by a config.
pub fn schedule_for(cfg: &RunConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end, cfg.sigma_mode)
}

/// Trained models plus the autoencoder's held-out reconstruction error.
pub struct TrainedModels {
    pub bundle: ModelBundle,
    pub ae_heldout_mse: f64,
    pub ae_status: ReconstructionStatus,
}

/// Train teacher, autoencoder and denoiser on `train`, all seeded from
/// `cfg.model_seed`.
pub fn train_models(train: &LabeledDataset, cfg: &RunConfig) -> Result<TrainedModels> {
    cfg.validate()?;
    let (h, w) = train
        .image_shape()
        .ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
    let seed = cfg.model_seed;
    info!("training teacher {} on {} images", cfg.teacher_arch, train.len());
    let teacher = train_classifier(train, cfg.teacher_arch, &cfg.teacher_optimizer(), seed)?;
    info!("training autoencoder");
    let ae = train_autoencoder(
        train,
        [cfg.latent_channels, h / 4, w / 4],
        cfg.ae_width,
        &cfg.ae_optimizer(),
        seed.wrapping_add(1),
        cfg.ae_mse_threshold,
    )?;
    info!("training denoiser");
    let sched = schedule_for(cfg)?;
    let denoiser = train_denoiser(
        train,
        &ae.model,
        &sched,
        cfg.denoiser_width,
        cfg.cond_dropout,
        &cfg.denoiser_optimizer(),
        seed.wrapping_add(2),
    )?;
    Ok(TrainedModels {
        bundle: ModelBundle {
            teacher,
            autoencoder: ae.model,
            denoiser,
        },
        ae_heldout_mse: ae.heldout_mse,
        ae_status: ae.status,
    })
}

/// Train the models, then distill `data` with `master_seed`.
pub fn teacher_distill(data: &LabeledDataset, cfg: &RunConfig, master_seed: u64) -> Result<DistilledPayload> {
    let models = train_models(data, cfg)?;
    let cfg = RunConfig {
        master_seed,
        ..cfg.clone()
    };
    let b = &models.bundle;
    distill_with_models(data, &cfg, &b.teacher, &b.autoencoder, &b.denoiser)
}

/// Teacher-side pipeline with given models: coreset, variant plan, one
/// generated image and soft label per spec, then the payload.
pub fn distill_with_models(
    data: &LabeledDataset,
    cfg: &RunConfig,
    teacher: &dyn Classifier,
    ae: &dyn Autoencoder,
    den: &dyn Denoiser,
) -> Result<DistilledPayload> {
    Ok(distill_detailed(data, cfg, teacher, ae, den)?.payload)
}

/// Payload plus the intermediate coreset and the variant images.
pub struct DistillOutput {
    pub payload: DistilledPayload,
    pub coreset: Coreset,
    pub images: Vec<ImageTensor>,
}

pub fn distill_detailed(
    data: &LabeledDataset,
    cfg: &RunConfig,
    teacher: &dyn Classifier,
    ae: &dyn Autoencoder,
    den: &dyn Denoiser,
) -> Result<DistillOutput> {
    cfg.validate()?;
    if cfg.exec_mode != ExecMode::Deterministic {
        return Err(Error::Reproducibility(
            "payloads must be generated in deterministic execution mode".into(),
        ));
    }
    if teacher.num_classes() != data.num_classes() {
        return Err(Error::InvalidInput(format!(
            "teacher has {} classes, data has {}",
            teacher.num_classes(),
            data.num_classes()
        )));
    }
    let seeds = SeedStream::new(cfg.master_seed);
    let sched = schedule_for(cfg)?;
    let coreset = build_coreset(data, teacher, cfg, &seeds)?;
    let specs = plan_variants(&coreset, cfg, &seeds);
    let gen = Generator::new(&coreset, ae, den, &sched, seeds, cfg.interpolation, cfg.generation_mode)?;
    let mut images = Vec::with_capacity(specs.len());
    let mut soft = Vec::with_capacity(specs.len());
    let mut hashes = Vec::with_capacity(specs.len());
    for spec in &specs {
        let img = gen.generate(spec)?;
        soft.push(predict_soft_label(teacher, &img)?);
        hashes.push(img.content_hash());
        images.push(img);
    }
    let payload = build_payload(
        &coreset,
        &specs,
        soft,
        hashes,
        [teacher.fingerprint(), ae.fingerprint(), den.fingerprint()],
        cfg,
    )?;
    Ok(DistillOutput {
        payload,
        coreset,
        images,
    })
}

/// Student-side regeneration. Each call to [`variants`](Self::variants)
/// rebuilds one variant of every patch and checks it against the hash the
/// teacher stored.
pub struct StudentStream<'a> {
    payload: &'a DistilledPayload,
    coreset: Coreset,
    schedule: NoiseSchedule,
    ae: &'a dyn Autoencoder,
    den: &'a dyn Denoiser,
    next_epoch: usize,
}

pub fn student_reconstruct<'a>(
    payload: &'a DistilledPayload,
    ae: &'a dyn Autoencoder,
    den: &'a dyn Denoiser,
) -> Result<StudentStream<'a>> {
    payload.validate()?;
    let h = &payload.header;
    if ae.fingerprint() != h.autoencoder {
        return Err(Error::Reproducibility(format!(
            "autoencoder fingerprint {} does not match payload {}",
            ae.fingerprint(),
            h.autoencoder
        )));
    }
    if den.fingerprint() != h.denoiser {
        return Err(Error::Reproducibility(format!(
            "denoiser fingerprint {} does not match payload {}",
            den.fingerprint(),
            h.denoiser
        )));
    }
    Ok(StudentStream {
        payload,
        coreset: payload.coreset()?,
        schedule: h.schedule()?,
        ae,
        den,
        next_epoch: 0,
    })
}

impl StudentStream<'_> {
    pub fn variants_per_patch(&self) -> usize {
        self.payload.header.m
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Variant `variant_index` of every patch with its stored soft label.
    pub fn variants(&self, variant_index: usize) -> Result<Vec<(ImageTensor, SoftLabel)>> {
        let h = &self.payload.header;
        if variant_index >= h.m {
            return Err(Error::Exhausted {
                requested: variant_index,
                available: h.m,
            });
        }
        let gen = Generator::new(
            &self.coreset,
            self.ae,
            self.den,
            &self.schedule,
            SeedStream::new(h.master_seed),
            h.interpolation,
            h.generation_mode,
        )?
        .expect_fingerprints(h.autoencoder, h.denoiser)?;
        let mut out = Vec::with_capacity(self.payload.patches.len());
        for p in 0..self.payload.patches.len() {
            let i = self.payload.spec_index(p, variant_index);
            let spec: &VariantSpec = &self.payload.specs[i];
            let img = gen.generate(spec)?;
            if img.content_hash() != self.payload.content_hashes[i] {
                return Err(Error::Reproducibility(format!(
                    "regenerated variant {variant_index} of patch {p} differs from the teacher's image"
                )));
            }
            out.push((img, self.payload.soft_labels[i].clone()));
        }
        Ok(out)
    }
}

impl Iterator for StudentStream<'_> {
    type Item = Result<Vec<(ImageTensor, SoftLabel)>>;

    /// One epoch per variant index, `0..m`.
    fn next(&mut self) -> Option<Self::Item> {
        if self.next_epoch >= self.payload.header.m {
            return None;
        }
        let e = self.next_epoch;
        self.next_epoch += 1;
        Some(self.variants(e))
    }
}

/// Trained student with per-epoch loss and wall time (regeneration included).
#[derive(Debug, Clone)]
pub struct StudentReport {
    pub model: ClassifierNet,
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Train a student on regenerated variants, one variant set per epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_student(
    payload: &DistilledPayload,
    ae: &dyn Autoencoder,
    den: &dyn Denoiser,
    arch: ClassifierArch,
    opt: &OptimizerSettings,
    temperature: f64,
    seed: u64,
) -> Result<ClassifierNet> {
    Ok(train_student_report(payload, ae, den, arch, opt, temperature, seed)?.model)
}

/// [`train_student`] with diagnostics. Epoch `e` uses variant `e mod m`;
/// batch order comes from substream `(e, 0, batch_order)` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_student_report(
    payload: &DistilledPayload,
    ae: &dyn Autoencoder,
    den: &dyn Denoiser,
    arch: ClassifierArch,
    opt: &OptimizerSettings,
    temperature: f64,
    seed: u64,
) -> Result<StudentReport> {
    let stream = student_reconstruct(payload, ae, den)?;
    let h = &payload.header;
    if opt.epochs > h.m {
        warn!("{} epochs over {} variants: variants will repeat", opt.epochs, h.m);
    }
    let mut net = ClassifierNet::init(arch, (h.height, h.width), h.num_classes, seed)?;
    let mut params = net.params().to_vec();
    let mut adam = AdamW::new(params.len(), opt.lr, opt.weight_decay);
    let order_seeds = SeedStream::new(seed);
    let k = h.num_classes;
    let mut report = StudentReport {
        model: net.clone(),
        epoch_losses: Vec::with_capacity(opt.epochs),
        epoch_seconds: Vec::with_capacity(opt.epochs),
    };
    for epoch in 0..opt.epochs {
        let start = Instant::now();
        let pairs = stream.variants(epoch % h.m)?;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order_seeds
            .substream(epoch as u64, 0, PurposeTag::BatchOrder)
            .shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(opt.batch_size.max(1)).enumerate() {
            let imgs: Vec<&ImageTensor> = batch.iter().map(|&i| &pairs[i].0).collect();
            let mut targets = Vec::with_capacity(batch.len() * k);
            for &i in batch {
                targets.extend(pairs[i].1.to_f64());
            }
            let (loss, grads) = net.soft_loss_grad(&params, &imgs, &targets, temperature);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, step, loss });
            }
            adam.step(&mut params, &grads);
            total += loss;
            batches += 1;
        }
        report.epoch_losses.push(total / batches.max(1) as f64);
        report.epoch_seconds.push(start.elapsed().as_secs_f64());
        debug!("student epoch {epoch}: loss {:.4}", total / batches.max(1) as f64);
    }
    net.set_params(params);
    report.model = net;
    Ok(report)
}

/// Top-1 accuracy; ties in the logits go to the lowest class index.
pub fn evaluate(clf: &dyn Classifier, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty test set".into()));
    }
    if clf.num_classes() != test.num_classes() {
        return Err(Error::InvalidInput(format!(
            "classifier has {} classes, test set has {}",
            clf.num_classes(),
            test.num_classes()
        )));
    }
    let mut correct = 0usize;
    for (imgs, labels) in test.images().chunks(128).zip(test.labels().chunks(128)) {
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        for (logits, &y) in clf.logits_batch(&refs)?.iter().zip(labels) {
            let mut best = 0;
            for (j, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = j;
                }
            }
            correct += usize::from(best == y);
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::models::{Fingerprint, IdentityAutoencoder, ZeroDenoiser};
    use crate::nn::loss::{cross_entropy, soft_cross_entropy};
    use crate::nn::Tensor;

    /// Predicts the class written into the red channel as `k/10`.
    struct LabelReader {
        classes: usize,
        constant: Option<usize>,
    }

    impl Classifier for LabelReader {
        fn input_shape(&self) -> (usize, usize) {
            (2, 2)
        }
        fn num_classes(&self) -> usize {
            self.classes
        }
        fn logits_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>> {
            Ok(images
                .iter()
                .map(|img| {
                    let k = self.constant.unwrap_or((img.get(0, 0, 0) * 10.0).round() as usize);
                    (0..self.classes).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
                })
                .collect())
        }
        fn fingerprint(&self) -> Fingerprint {
            Fingerprint([4; 32])
        }
    }

    fn labelled(labels: &[usize], classes: usize) -> LabeledDataset {
        let images = labels
            .iter()
            .map(|&k| ImageTensor::filled(2, 2, [k as f32 / 10.0, 0.0, 0.0]).unwrap())
            .collect();
        LabeledDataset::new(images, labels.to_vec(), classes, Split::Test).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let data = labelled(&[0, 1, 2, 3, 0, 1, 2, 3], 4);
        let perfect = LabelReader {
            classes: 4,
            constant: None,
        };
        assert_eq!(evaluate(&perfect, &data).unwrap(), 1.0);
        let constant = LabelReader {
            classes: 4,
            constant: Some(2),
        };
        assert_eq!(evaluate(&constant, &data).unwrap(), 0.25);
        // hand count: the reader sees labels written as [0,1,1,2,2,0,1,2,0,1]
        // while the true labels are [0,1,2,2,1,0,1,2,2,1] → 7 agree
        let written = [0, 1, 1, 2, 2, 0, 1, 2, 0, 1];
        let truth = vec![0, 1, 2, 2, 1, 0, 1, 2, 2, 1];
        let images = written
            .iter()
            .map(|&k| ImageTensor::filled(2, 2, [k as f32 / 10.0, 0.0, 0.0]).unwrap())
            .collect();
        let data = LabeledDataset::new(images, truth, 3, Split::Test).unwrap();
        let reader = LabelReader {
            classes: 3,
            constant: None,
        };
        assert!((evaluate(&reader, &data).unwrap() - 0.7).abs() < 1e-12);
        let empty = LabeledDataset::new(Vec::new(), Vec::new(), 3, Split::Test).unwrap();
        assert!(evaluate(&reader, &empty).is_err());
    }

    #[test]
    fn one_hot_soft_loss_is_cross_entropy() {
        let logits = Tensor::from_rows(3, 4, (0..12).map(|i| (i as f64 * 0.77).sin() * 3.0).collect());
        let labels = [2, 0, 3];
        let mut targets = Vec::new();
        for &y in &labels {
            targets.extend(SoftLabel::one_hot(4, y).unwrap().to_f64());
        }
        let (soft, gs) = soft_cross_entropy(&logits, &targets, 1.0);
        // oracle: −mean log softmax at the label
        let mut oracle = 0.0;
        for (row, &y) in logits.data().chunks(4).zip(&labels) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            oracle -= (row[y].exp() / z).ln();
        }
        oracle /= 3.0;
        assert!((soft - oracle).abs() < 1e-12);
        let (hard, gh) = cross_entropy(&logits, &labels);
        assert!((soft - hard).abs() < 1e-12);
        for (a, b) in gs.data().iter().zip(gh.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn tiny_setup() -> (LabeledDataset, RunConfig) {
        let spec = crate::data::SyntheticSpec {
            classes: 2,
            image_size: 8,
            train_per_class: 5,
            test_per_class: 1,
            seed: 3,
        };
        let (train, _) = crate::data::synthetic(&spec).unwrap();
        let cfg = RunConfig {
            ipc: 1,
            r: 2,
            p: 3,
            m: Some(2),
            epochs: 2,
            timesteps: 20,
            n_steps: 2,
            rho: 0.5,
            classes: 2,
            image_size: 8,
            ..RunConfig::default()
        };
        (train, cfg)
    }

    #[test]
    fn payload_shape_and_student_contract() {
        let (train, cfg) = tiny_setup();
        let teacher = ClassifierNet::init(ClassifierArch::Mlp { hidden: 4 }, (8, 8), 2, 0).unwrap();
        let ae = IdentityAutoencoder::new(8, 8);
        let den = ZeroDenoiser::new([3, 8, 8]);
        let out = distill_detailed(&train, &cfg, &teacher, &ae, &den).unwrap();
        let p = &out.payload;
        assert_eq!(p.patches.len(), 8);
        assert_eq!(p.soft_labels.len(), 16);
        for (img, label) in out.images.iter().zip(&p.soft_labels) {
            let again = predict_soft_label(&teacher, img).unwrap();
            assert!(again.max_abs_diff(label) <= 1e-6);
        }
        let stream = student_reconstruct(p, &ae, &den).unwrap();
        let epochs: Vec<_> = stream.collect::<Result<_>>().unwrap();
        assert_eq!(epochs.len(), 2);
        for (e, pairs) in epochs.iter().enumerate() {
            assert_eq!(pairs.len(), 8);
            for (pi, (img, _)) in pairs.iter().enumerate() {
                assert_eq!(img, &out.images[pi * 2 + e]);
            }
        }
        let stream = student_reconstruct(p, &ae, &den).unwrap();
        assert!(matches!(
            stream.variants(2),
            Err(Error::Exhausted {
                requested: 2,
                available: 2
            })
        ));
        let mut tampered = p.clone();
        tampered.header.autoencoder = Fingerprint([8; 32]);
        assert!(matches!(
            student_reconstruct(&tampered, &ae, &den),
            Err(Error::Reproducibility(_))
        ));
    }

    #[test]
    fn fast_mode_refused_for_payloads() {
        let (train, cfg) = tiny_setup();
        let cfg = RunConfig {
            exec_mode: ExecMode::Fast,
            ..cfg
        };
        let teacher = ClassifierNet::init(ClassifierArch::Mlp { hidden: 4 }, (8, 8), 2, 0).unwrap();
        let err = distill_with_models(
            &train,
            &cfg,
            &teacher,
            &IdentityAutoencoder::new(8, 8),
            &ZeroDenoiser::new([3, 8, 8]),
        );
        assert!(matches!(err, Err(Error::Reproducibility(_))));
    }

    #[test]
    fn zero_epochs_keeps_initialisation() {
        let (train, cfg) = tiny_setup();
        let teacher = ClassifierNet::init(ClassifierArch::Mlp { hidden: 4 }, (8, 8), 2, 0).unwrap();
        let ae = IdentityAutoencoder::new(8, 8);
        let den = ZeroDenoiser::new([3, 8, 8]);
        let payload = distill_with_models(&train, &cfg, &teacher, &ae, &den).unwrap();
        let arch = ClassifierArch::Conv { width: 2 };
        let opt = OptimizerSettings {
            epochs: 0,
            ..OptimizerSettings::default()
        };
        let student = train_student(&payload, &ae, &den, arch, &opt, 1.0, 5).unwrap();
        let init = ClassifierNet::init(arch, (8, 8), 2, 5).unwrap();
        assert_eq!(student.fingerprint(), init.fingerprint());
        let opt = OptimizerSettings {
            epochs: 3,
            batch_size: 4,
            ..OptimizerSettings::default()
        };
        let a = train_student(&payload, &ae, &den, arch, &opt, 1.0, 5).unwrap();
        let b = train_student(&payload, &ae, &den, arch, &opt, 1.0, 5).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), init.fingerprint());
    }
}
