//! Candidate mining, teacher scoring and budgeted per-class selection.

use std::cmp::Ordering;

use log::debug;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::{resize, CropRect, ImageTensor, Interpolation};
use crate::models::{Classifier, Fingerprint};
use crate::nn::loss::cross_entropy_single;
use crate::seed::{PurposeTag, SeedStream, Substream};

/// How candidate crops are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSettings {
    /// Crop side as a fraction of the image side, drawn from `[lo, hi]`.
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Filter used to shrink a crop to the patch size.
    pub interpolation: Interpolation,
}

impl Default for CropSettings {
    fn default() -> Self {
        Self {
            scale_lo: 0.3,
            scale_hi: 1.0,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl CropSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            scale_lo: cfg.crop_scale_lo,
            scale_hi: cfg.crop_scale_hi,
            interpolation: cfg.crop_interpolation,
        }
    }
}

/// A mined crop, already resized to patch size and quantized to 8 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub pixels: ImageTensor,
    pub rect: CropRect,
}

/// A coreset member.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub pixels: ImageTensor,
    pub class_id: usize,
    pub source_id: usize,
    pub rect: CropRect,
    /// Teacher cross-entropy of the (upsampled) patch against `class_id`.
    pub ce_score: f64,
}

/// `⌊H/r⌋ × ⌊W/r⌋`.
pub fn patch_shape(height: usize, width: usize, r: usize) -> (usize, usize) {
    (height / r.max(1), width / r.max(1))
}

/// Draw `p` random crops of `x` and resize each to `⌊H/r⌋×⌊W/r⌋`.
///
/// Crop sides are `scale·H` and `scale·W` (at least the patch size) with
/// one uniform `scale` per crop, and the top-left corner is uniform over
/// valid positions. Patches are quantized so that the pixels scored here
/// are exactly the ones stored in a payload.
pub fn mine_candidates(
    x: &ImageTensor,
    p: usize,
    r: usize,
    crop: &CropSettings,
    stream: &mut Substream,
) -> Result<Vec<Candidate>> {
    if p == 0 {
        return Err(Error::InvalidInput("P must be at least 1".into()));
    }
    if r == 0 {
        return Err(Error::Config(vec![crate::error::Violation::new("r", "r ≥ 1 required")]));
    }
    let (h, w) = x.shape();
    let (ph, pw) = patch_shape(h, w, r);
    if ph == 0 || pw == 0 {
        return Err(Error::InvalidInput(format!(
            "{h}x{w} image is smaller than the minimum crop for r={r}"
        )));
    }
    let mut out = Vec::with_capacity(p);
    for _ in 0..p {
        let scale = stream.uniform_range(crop.scale_lo, crop.scale_hi);
        let ch = ((scale * h as f64).round() as usize).clamp(ph, h);
        let cw = ((scale * w as f64).round() as usize).clamp(pw, w);
        let top = stream.below(h - ch + 1);
        let left = stream.below(w - cw + 1);
        let rect = CropRect {
            top,
            left,
            height: ch,
            width: cw,
        };
        let pixels = resize(&x.crop(rect)?, ph, pw, crop.interpolation)?.quantized();
        out.push(Candidate { pixels, rect });
    }
    Ok(out)
}

/// Teacher cross-entropy of each candidate against `label`. Patches smaller
/// than the teacher input are upsampled with `interp` first.
pub fn score_candidates(
    candidates: &[Candidate],
    label: usize,
    teacher: &dyn Classifier,
    interp: Interpolation,
) -> Result<Vec<f64>> {
    let (h, w) = teacher.input_shape();
    let inputs: Vec<ImageTensor> = candidates
        .iter()
        .map(|c| {
            if c.pixels.shape() == (h, w) {
                Ok(c.pixels.clone())
            } else {
                resize(&c.pixels, h, w, interp)
            }
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&ImageTensor> = inputs.iter().collect();
    Ok(teacher
        .logits_batch(&refs)?
        .iter()
        .map(|l| cross_entropy_single(l, label).max(0.0))
        .collect())
}

/// Index of the smallest score; ties go to the lowest index.
pub fn argmin_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// The candidate with the lowest teacher cross-entropy.
pub fn select_best_patch(
    candidates: &[Candidate],
    label: usize,
    source_id: usize,
    teacher: &dyn Classifier,
    interp: Interpolation,
) -> Result<PatchRecord> {
    let scores = score_candidates(candidates, label, teacher, interp)?;
    let best = argmin_lowest(&scores).ok_or_else(|| Error::InvalidInput("no candidates to select from".into()))?;
    Ok(PatchRecord {
        pixels: candidates[best].pixels.clone(),
        class_id: label,
        source_id,
        rect: candidates[best].rect,
        ce_score: scores[best],
    })
}

/// Per-class budgeted patch collection. Global patch indices run
/// class-major: all of class 0, then class 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    classes: Vec<Vec<PatchRecord>>,
    image_shape: (usize, usize),
    ipc: usize,
    r: usize,
    candidates: usize,
    teacher: Fingerprint,
}

fn by_score(a: &PatchRecord, b: &PatchRecord) -> Ordering {
    a.ce_score
        .total_cmp(&b.ce_score)
        .then(a.source_id.cmp(&b.source_id))
        .then((a.rect.top, a.rect.left, a.rect.height, a.rect.width).cmp(&(
            b.rect.top,
            b.rect.left,
            b.rect.height,
            b.rect.width,
        )))
}

impl Coreset {
    pub fn from_parts(
        classes: Vec<Vec<PatchRecord>>,
        image_shape: (usize, usize),
        ipc: usize,
        r: usize,
        candidates: usize,
        teacher: Fingerprint,
    ) -> Result<Self> {
        let (ph, pw) = patch_shape(image_shape.0, image_shape.1, r);
        for (k, class) in classes.iter().enumerate() {
            for p in class {
                if p.class_id != k {
                    return Err(Error::InvalidInput(format!(
                        "patch of class {} stored under class {k}",
                        p.class_id
                    )));
                }
                if p.pixels.shape() != (ph, pw) {
                    return Err(Error::shape("coreset patch", (ph, pw), p.pixels.shape()));
                }
                if p.ce_score.is_nan() || p.ce_score < 0.0 {
                    return Err(Error::InvalidInput(format!("negative CE score {}", p.ce_score)));
                }
            }
        }
        Ok(Self {
            classes,
            image_shape,
            ipc,
            r,
            candidates,
            teacher,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, k: usize) -> &[PatchRecord] {
        &self.classes[k]
    }

    /// All patches in global order.
    pub fn patches(&self) -> impl Iterator<Item = &PatchRecord> {
        self.classes.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, index: usize) -> Option<&PatchRecord> {
        let mut i = index;
        for class in &self.classes {
            if i < class.len() {
                return Some(&class[i]);
            }
            i -= class.len();
        }
        None
    }

    /// Global indices of the patches of class `k`.
    pub fn class_range(&self, k: usize) -> std::ops::Range<usize> {
        let start: usize = self.classes[..k].iter().map(Vec::len).sum();
        start..start + self.classes[k].len()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        patch_shape(self.image_shape.0, self.image_shape.1, self.r)
    }

    pub fn ipc(&self) -> usize {
        self.ipc
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn teacher_fingerprint(&self) -> Fingerprint {
        self.teacher
    }

    /// Canonical byte form (8-bit pixels, metadata, scores as `f64` bits).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [
            self.image_shape.0,
            self.image_shape.1,
            self.ipc,
            self.r,
            self.candidates,
            self.classes.len(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.teacher.0);
        for p in self.patches() {
            for v in [
                p.class_id,
                p.source_id,
                p.rect.top,
                p.rect.left,
                p.rect.height,
                p.rect.width,
            ] {
                out.extend_from_slice(&(v as u64).to_le_bytes());
            }
            out.extend_from_slice(&p.ce_score.to_le_bytes());
            out.extend_from_slice(&p.pixels.to_u8());
        }
        out
    }

    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    /// `(min, median, max)` CE score of class `k`.
    pub fn score_summary(&self, k: usize) -> Option<(f64, f64, f64)> {
        let c = &self.classes[k];
        if c.is_empty() {
            return None;
        }
        // classes are kept sorted by score
        Some((c[0].ce_score, c[c.len() / 2].ce_score, c[c.len() - 1].ce_score))
    }
}

/// Rank-tagged candidate used during budget selection.
struct Ranked {
    rank: usize,
    record: PatchRecord,
}

/// Build the coreset: score `P` crops per image, keep each image's best, and
/// take the `IPC·r²` lowest-scoring ones per class.
///
/// Ranking is by `(score, image index)`. A class with fewer images than the
/// budget also draws each image's 2nd-best, 3rd-best, … patches, rank by
/// rank. Image `i` mines its crops from substream `(i, 0, crop)`.
pub fn build_coreset(
    data: &LabeledDataset,
    teacher: &dyn Classifier,
    cfg: &RunConfig,
    seeds: &SeedStream,
) -> Result<Coreset> {
    let shape = data
        .image_shape()
        .ok_or_else(|| Error::InvalidInput("cannot build a coreset from an empty dataset".into()))?;
    if teacher.input_shape() != shape {
        return Err(Error::shape("teacher input", shape, teacher.input_shape()));
    }
    let budget = cfg.patches_per_class();
    let crop = CropSettings::from_config(cfg);
    let mut classes = Vec::with_capacity(data.num_classes());
    for (k, members) in data.indices_by_class().into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidInput(format!("class {k} has no images")));
        }
        let ranks_needed = budget.div_ceil(members.len());
        if ranks_needed > cfg.p {
            return Err(Error::InvalidInput(format!(
                "class {k}: {} images × P={} candidates cannot fill a budget of {budget}",
                members.len(),
                cfg.p
            )));
        }
        let mut pool = Vec::with_capacity(members.len() * ranks_needed);
        for &i in &members {
            let mut stream = seeds.substream(i as u64, 0, PurposeTag::Crop);
            let cands = mine_candidates(&data.images()[i], cfg.p, cfg.r, &crop, &mut stream)?;
            let scores = score_candidates(&cands, k, teacher, cfg.interpolation)?;
            let mut order: Vec<usize> = (0..cands.len()).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            for (rank, &j) in order.iter().take(ranks_needed).enumerate() {
                pool.push(Ranked {
                    rank,
                    record: PatchRecord {
                        pixels: cands[j].pixels.clone(),
                        class_id: k,
                        source_id: i,
                        rect: cands[j].rect,
                        ce_score: scores[j],
                    },
                });
            }
        }
        pool.sort_by(|a, b| a.rank.cmp(&b.rank).then_with(|| by_score(&a.record, &b.record)));
        let mut chosen: Vec<PatchRecord> = pool.into_iter().take(budget).map(|r| r.record).collect();
        chosen.sort_by(by_score);
        debug!("class {k}: kept {} of {} images' patches", chosen.len(), members.len());
        classes.push(chosen);
    }
    Coreset::from_parts(classes, shape, cfg.ipc, cfg.r, cfg.p, teacher.fingerprint())
}
