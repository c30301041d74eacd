use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::ModelDescriptor;
use super::train::minibatch_loop;
use super::{Classifier, Fingerprint};
use crate::config::{ClassifierArch, OptimizerSettings};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::loss::{cross_entropy, soft_cross_entropy, softmax};
use crate::nn::{Conv2d, Layer, Linear, ParamAllocator, Sequential, Tensor};
use crate::payload::SoftLabel;

/// Pixels enter the networks rescaled to `[-1, 1]`.
pub(crate) fn images_to_tensor(images: &[&ImageTensor]) -> Tensor {
    let (h, w) = images[0].shape();
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend(img.to_chw().into_iter().map(|v| 2.0 * v - 1.0));
    }
    Tensor::new([images.len(), 3, h, w], data)
}

/// Feed-forward classifier built from a [`ClassifierArch`].
///
/// * `conv:w`: three 3×3 conv/SiLU stages (`w`, `2w`, `2w` channels) with
///   2×2 average pooling after the first two, global average pooling and a
///   linear head.
/// * `mlp:h`: flatten, one hidden SiLU layer of width `h`, linear head.
#[derive(Debug, Clone)]
pub struct ClassifierNet {
    arch: ClassifierArch,
    height: usize,
    width: usize,
    classes: usize,
    net: Sequential,
    params: Vec<f64>,
    fingerprint: Fingerprint,
}

impl ClassifierNet {
    pub fn init(arch: ClassifierArch, shape: (usize, usize), classes: usize, seed: u64) -> Result<Self> {
        let (height, width) = shape;
        if classes < 2 {
            return Err(Error::InvalidInput(format!("classifier needs K ≥ 2, got {classes}")));
        }
        if height < 4 || width < 4 {
            return Err(Error::InvalidInput(format!(
                "classifier input {height}x{width} too small"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alloc = ParamAllocator::new();
        let layers = match arch {
            ClassifierArch::Conv { width: w } => vec![
                Layer::Conv(Conv2d::new(&mut alloc, 3, w, 3, &mut rng)),
                Layer::Silu,
                Layer::AvgPool2,
                Layer::Conv(Conv2d::new(&mut alloc, w, 2 * w, 3, &mut rng)),
                Layer::Silu,
                Layer::AvgPool2,
                Layer::Conv(Conv2d::new(&mut alloc, 2 * w, 2 * w, 3, &mut rng)),
                Layer::Silu,
                Layer::GlobalAvgPool,
                Layer::Linear(Linear::new(&mut alloc, 2 * w, classes, &mut rng)),
            ],
            ClassifierArch::Mlp { hidden } => vec![
                Layer::Flatten,
                Layer::Linear(Linear::new(&mut alloc, 3 * height * width, hidden, &mut rng)),
                Layer::Silu,
                Layer::Linear(Linear::new(&mut alloc, hidden, classes, &mut rng)),
            ],
        };
        let mut net = Self {
            arch,
            height,
            width,
            classes,
            net: Sequential::new(layers),
            params: alloc.finish(),
            fingerprint: Fingerprint::default(),
        };
        net.refresh_fingerprint();
        Ok(net)
    }

    pub(crate) fn from_parts(descriptor: &ModelDescriptor, params: Vec<f64>) -> Result<Self> {
        let ModelDescriptor::Classifier {
            arch,
            height,
            width,
            classes,
        } = *descriptor
        else {
            return Err(Error::Checkpoint("descriptor is not a classifier".into()));
        };
        let mut net = Self::init(arch, (height, width), classes, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "classifier expects {} parameters, checkpoint has {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        net.refresh_fingerprint();
        Ok(net)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::Classifier {
            arch: self.arch,
            height: self.height,
            width: self.width,
            classes: self.classes,
        }
    }

    pub fn checkpoint(&self) -> super::Checkpoint {
        super::Checkpoint {
            descriptor: self.descriptor(),
            params: self.params.clone(),
        }
    }

    pub fn arch(&self) -> ClassifierArch {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.params.len());
        self.params = params;
        self.refresh_fingerprint();
    }

    fn refresh_fingerprint(&mut self) {
        self.fingerprint = self.descriptor().fingerprint(&self.params);
    }

    fn check_shapes(&self, images: &[&ImageTensor]) -> Result<()> {
        if let Some(bad) = images.iter().find(|i| i.shape() != (self.height, self.width)) {
            return Err(Error::shape("classifier input", (self.height, self.width), bad.shape()));
        }
        Ok(())
    }

    pub fn logits_with(&self, params: &[f64], x: &Tensor) -> Tensor {
        self.net.forward(params, x)
    }

    /// Mean hard-label cross-entropy and its parameter gradient.
    pub fn hard_loss_grad(&self, params: &[f64], images: &[&ImageTensor], labels: &[usize]) -> (f64, Vec<f64>) {
        let x = images_to_tensor(images);
        let tape = self.net.forward_tape(params, &x);
        let (loss, dlogits) = cross_entropy(tape.last().expect("tape"), labels);
        let mut g = vec![0.0; params.len()];
        self.net.backward(params, &tape, dlogits, &mut g);
        (loss, g)
    }

    /// Mean soft cross-entropy against `targets` (row-major `N×K`).
    pub fn soft_loss_grad(
        &self,
        params: &[f64],
        images: &[&ImageTensor],
        targets: &[f64],
        temperature: f64,
    ) -> (f64, Vec<f64>) {
        let x = images_to_tensor(images);
        let tape = self.net.forward_tape(params, &x);
        let (loss, dlogits) = soft_cross_entropy(tape.last().expect("tape"), targets, temperature);
        let mut g = vec![0.0; params.len()];
        self.net.backward(params, &tape, dlogits, &mut g);
        (loss, g)
    }

    /// Mean cross-entropy of the current parameters over a dataset.
    pub fn mean_cross_entropy(&self, data: &LabeledDataset) -> Result<f64> {
        let mut total = 0.0;
        for (chunk, labels) in data.images().chunks(64).zip(data.labels().chunks(64)) {
            let refs: Vec<&ImageTensor> = chunk.iter().collect();
            self.check_shapes(&refs)?;
            total += self.hard_loss_grad_value(&refs, labels) * refs.len() as f64;
        }
        Ok(total / data.len().max(1) as f64)
    }

    fn hard_loss_grad_value(&self, images: &[&ImageTensor], labels: &[usize]) -> f64 {
        let logits = self.net.forward(&self.params, &images_to_tensor(images));
        cross_entropy(&logits, labels).0
    }

    /// Train `params` in place with AdamW, taking loss and gradient from `step`.
    pub(crate) fn train_params_with<F>(
        &mut self,
        opt: &OptimizerSettings,
        num_items: usize,
        seed: u64,
        step: F,
    ) -> Result<()>
    where
        F: FnMut(&Self, &[f64], &[usize]) -> (f64, Vec<f64>),
    {
        let mut step = step;
        let mut params = std::mem::take(&mut self.params);
        let this = &*self;
        let result = minibatch_loop("classifier", &mut params, opt, num_items, seed, |p, batch, _| {
            step(this, p, batch)
        });
        self.params = params;
        self.refresh_fingerprint();
        result.map(|_| ())
    }
}

impl Classifier for ClassifierNet {
    fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        self.check_shapes(images)?;
        let logits = self.net.forward(&self.params, &images_to_tensor(images));
        Ok(logits.data().chunks_exact(self.classes).map(<[f64]>::to_vec).collect())
    }

    fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }
}

/// Train a classifier on hard labels. Fully determined by `seed`.
pub fn train_classifier(
    data: &LabeledDataset,
    arch: ClassifierArch,
    opt: &OptimizerSettings,
    seed: u64,
) -> Result<ClassifierNet> {
    let shape = data
        .image_shape()
        .ok_or_else(|| Error::InvalidInput("cannot train a classifier on an empty dataset".into()))?;
    let mut net = ClassifierNet::init(arch, shape, data.num_classes(), seed)?;
    let images = data.images();
    let labels = data.labels();
    net.train_params_with(opt, data.len(), seed.wrapping_add(1), |net, p, batch| {
        let imgs: Vec<&ImageTensor> = batch.iter().map(|&i| &images[i]).collect();
        let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        net.hard_loss_grad(p, &imgs, &ys)
    })?;
    Ok(net)
}

/// Teacher softmax output for one image.
pub fn predict_soft_label(clf: &dyn Classifier, x: &ImageTensor) -> Result<SoftLabel> {
    if x.shape() != clf.input_shape() {
        return Err(Error::shape("predict_soft_label", clf.input_shape(), x.shape()));
    }
    SoftLabel::from_probabilities(&softmax(&clf.logits(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::gradcheck;

    /// Class 0 is dark on the left half, class 1 dark on the right half.
    fn separable(n_per_class: usize) -> LabeledDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            for class in 0..2 {
                let jitter = (i as f32 * 0.37).sin() * 0.05;
                let px = (0..64)
                    .flat_map(|p| {
                        let x = p % 8;
                        let dark = (x < 4) == (class == 0);
                        let v = if dark { 0.2 + jitter } else { 0.8 - jitter };
                        [v, v, v]
                    })
                    .collect();
                images.push(ImageTensor::new(8, 8, px).unwrap());
                labels.push(class);
            }
        }
        LabeledDataset::new(images, labels, 2, Split::Train).unwrap()
    }

    fn accuracy(net: &ClassifierNet, data: &LabeledDataset) -> f64 {
        let hits = data
            .images()
            .iter()
            .zip(data.labels())
            .filter(|(img, &y)| {
                let l = net.logits(img).unwrap();
                let pred = (0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
                pred == y
            })
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn linear_probe_oracle_separates_toy_set() {
        // oracle: mean(left half) − mean(right half) has opposite signs per class
        let data = separable(20);
        for (img, &y) in data.images().iter().zip(data.labels()) {
            let mut left = 0.0;
            let mut right = 0.0;
            for yy in 0..8 {
                for x in 0..8 {
                    if x < 4 {
                        left += img.get(yy, x, 0);
                    } else {
                        right += img.get(yy, x, 0);
                    }
                }
            }
            assert_eq!(left < right, y == 0);
        }
    }

    #[test]
    fn learns_separable_classes() {
        let data = separable(20);
        let opt = OptimizerSettings {
            lr: 1e-2,
            weight_decay: 0.0,
            epochs: 30,
            batch_size: 8,
        };
        let before = ClassifierNet::init(ClassifierArch::Conv { width: 4 }, (8, 8), 2, 3)
            .unwrap()
            .mean_cross_entropy(&data)
            .unwrap();
        let net = train_classifier(&data, ClassifierArch::Conv { width: 4 }, &opt, 3).unwrap();
        assert!(net.mean_cross_entropy(&data).unwrap() < before);
        assert!(accuracy(&net, &data) >= 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(6);
        let opt = OptimizerSettings {
            lr: 1e-2,
            weight_decay: 1e-2,
            epochs: 2,
            batch_size: 4,
        };
        let a = train_classifier(&data, ClassifierArch::Mlp { hidden: 8 }, &opt, 11).unwrap();
        let b = train_classifier(&data, ClassifierArch::Mlp { hidden: 8 }, &opt, 11).unwrap();
        let c = train_classifier(&data, ClassifierArch::Mlp { hidden: 8 }, &opt, 12).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn soft_labels_are_distributions() {
        let net = ClassifierNet::init(ClassifierArch::Conv { width: 4 }, (8, 8), 5, 1).unwrap();
        let img = ImageTensor::filled(8, 8, [0.3, 0.6, 0.9]).unwrap();
        let q = predict_soft_label(&net, &img).unwrap();
        let sum: f64 = q.probabilities().iter().map(|&p| f64::from(p)).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(q.probabilities().iter().all(|&p| p >= 0.0));
        let wrong = ImageTensor::filled(9, 8, [0.0; 3]).unwrap();
        assert!(predict_soft_label(&net, &wrong).is_err());
    }

    #[test]
    fn soft_label_matches_direct_softmax() {
        let net = ClassifierNet::init(ClassifierArch::Mlp { hidden: 6 }, (4, 4), 4, 9).unwrap();
        let img = ImageTensor::new(4, 4, (0..48).map(|i| (i as f32 * 0.13).fract()).collect()).unwrap();
        let logits = net.logits(&img).unwrap();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let q = predict_soft_label(&net, &img).unwrap();
        for (l, p) in logits.iter().zip(q.probabilities()) {
            assert!((l.exp() / z - f64::from(*p)).abs() < 1e-6);
        }
    }

    fn check_net_gradient(arch: ClassifierArch) {
        let net = ClassifierNet::init(arch, (4, 4), 3, 5).unwrap();
        assert!(net.num_params() <= 1000, "{} params", net.num_params());
        let imgs: Vec<ImageTensor> = (0..2)
            .map(|s| ImageTensor::new(4, 4, (0..48).map(|i| ((i + 17 * s) as f32 * 0.29).fract()).collect()).unwrap())
            .collect();
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        let targets = [0.2, 0.5, 0.3, 0.7, 0.1, 0.2];
        let (_, g) = net.soft_loss_grad(net.params(), &refs, &targets, 1.5);
        let report = gradcheck::check(
            |p| net.soft_loss_grad(p, &refs, &targets, 1.5).0,
            net.params(),
            &g,
            1e-5,
        );
        assert!(report.passes(1e-4), "{arch}: {report:?}");
    }

    #[test]
    fn conv_classifier_gradient() {
        check_net_gradient(ClassifierArch::Conv { width: 3 });
    }

    #[test]
    fn mlp_classifier_gradient() {
        check_net_gradient(ClassifierArch::Mlp { hidden: 5 });
    }
}
