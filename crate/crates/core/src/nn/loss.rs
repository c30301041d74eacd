//! Losses returning `(mean loss, gradient w.r.t. the prediction)`.

use super::Tensor;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Cross-entropy of one logit vector against a class index.
pub fn cross_entropy_single(logits: &[f64], label: usize) -> f64 {
    -log_softmax(logits)[label]
}

/// Mean hard-label cross-entropy over an `N×K` batch.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.batch();
    let k = logits.sample_len();
    assert_eq!(labels.len(), n);
    let mut grad = Vec::with_capacity(n * k);
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let p = softmax(row);
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        grad.extend(p.iter().enumerate().map(|(j, &pj)| {
            let target = if j == y { 1.0 } else { 0.0 };
            (pj - target) / n as f64
        }));
    }
    (loss / n as f64, Tensor::new(logits.shape(), grad))
}

/// Mean soft cross-entropy `−Σ q_k log softmax(z/τ)_k` over an `N×K` batch.
pub fn soft_cross_entropy(logits: &Tensor, targets: &[f64], temperature: f64) -> (f64, Tensor) {
    let n = logits.batch();
    let k = logits.sample_len();
    assert_eq!(targets.len(), n * k);
    let mut grad = Vec::with_capacity(n * k);
    let mut loss = 0.0;
    for (row, q) in logits.data().chunks_exact(k).zip(targets.chunks_exact(k)) {
        let scaled: Vec<f64> = row.iter().map(|z| z / temperature).collect();
        let logp = log_softmax(&scaled);
        loss -= q.iter().zip(&logp).map(|(qi, lp)| qi * lp).sum::<f64>();
        let qsum: f64 = q.iter().sum();
        grad.extend(
            logp.iter()
                .zip(q)
                .map(|(lp, qi)| (qsum * lp.exp() - qi) / (temperature * n as f64)),
        );
    }
    (loss / n as f64, Tensor::new(logits.shape(), grad))
}

/// Mean squared error per element.
pub fn mse(pred: &Tensor, target: &[f64]) -> (f64, Tensor) {
    assert_eq!(pred.data().len(), target.len());
    let len = target.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / len
        })
        .collect();
    (loss / len, Tensor::new(pred.shape(), grad))
}
