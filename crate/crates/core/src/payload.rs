//! The teacher→student transfer container and its wire format.
//!
//! ```text
//! "DPAY" | u16 version | u16 endianness tag (0xFEFF) | u32 section count
//! per section: [u8; 4] tag | u64 length | body | u64 checksum
//! ```
//!
//! Everything is little-endian. The checksum is the first eight bytes of
//! SHA-256 over the tag and body. Sections appear in the fixed order
//! `HEAD`, `PTCH`, `SPEC`, `SOFT`.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::config::{GenerationMode, RunConfig};
use crate::coreset::{Coreset, PatchRecord};
use crate::error::{Error, Result};
use crate::expand::{Mixup, VariantSpec};
use crate::image::{CropRect, ImageTensor, Interpolation};
use crate::models::Fingerprint;
use crate::schedule::{NoiseSchedule, SigmaMode};

pub const MAGIC: &[u8; 4] = b"DPAY";
pub const FORMAT_VERSION: u16 = 1;
const ENDIAN_TAG: u16 = 0xFEFF;
const SECTIONS: [&[u8; 4]; 4] = [b"HEAD", b"PTCH", b"SPEC", b"SOFT"];

/// Decoding failures. Each variant has a stable [`code`](PayloadError::code).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("not a payload (bad magic)")]
    BadMagic,
    #[error("unsupported payload version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("unsupported endianness tag {0:#06x}")]
    BadEndianness(u16),
    #[error("payload truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch in section {0}")]
    ChecksumMismatch(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

impl PayloadError {
    pub fn code(&self) -> &'static str {
        match self {
            PayloadError::BadMagic => "E_MAGIC",
            PayloadError::UnsupportedVersion { .. } => "E_VERSION",
            PayloadError::BadEndianness(_) => "E_ENDIAN",
            PayloadError::Truncated(_) => "E_TRUNCATED",
            PayloadError::ChecksumMismatch(_) => "E_CHECKSUM",
            PayloadError::Malformed(_) => "E_MALFORMED",
        }
    }
}

/// Teacher class distribution for one variant, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probs: Vec<f32>,
}

impl SoftLabel {
    const SUM_TOL: f64 = 1e-6;

    fn check(probs: &[f32]) -> Result<()> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("soft label is empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "soft label has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = probs.iter().map(|&p| f64::from(p)).sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidInput(format!("soft label sums to {sum}")));
        }
        Ok(())
    }

    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        let probs: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
        Self::new(probs)
    }

    pub fn new(probs: Vec<f32>) -> Result<Self> {
        Self::check(&probs)?;
        Ok(Self { probs })
    }

    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        let mut probs = vec![0.0; classes];
        *probs
            .get_mut(class)
            .ok_or_else(|| Error::InvalidInput(format!("class {class} ≥ K = {classes}")))? = 1.0;
        Self::new(probs)
    }

    pub fn probabilities(&self) -> &[f32] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|&p| f64::from(p)).collect()
    }

    /// Largest elementwise difference to another distribution.
    pub fn max_abs_diff(&self, other: &SoftLabel) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(
                if self.probs.len() == other.probs.len() {
                    0.0
                } else {
                    f64::INFINITY
                },
                f64::max,
            )
    }
}

/// Everything needed to rebuild the schedule, coreset and variant recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadHeader {
    pub dataset_name: String,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub ipc: usize,
    pub r: usize,
    pub candidates: usize,
    pub m: usize,
    pub rho: f64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub n_steps: usize,
    pub sigma_mode: SigmaMode,
    pub mixup_enabled: bool,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub interpolation: Interpolation,
    pub generation_mode: GenerationMode,
    pub master_seed: u64,
    pub teacher: Fingerprint,
    pub autoencoder: Fingerprint,
    pub denoiser: Fingerprint,
}

impl PayloadHeader {
    pub fn patches_per_class(&self) -> usize {
        self.ipc * self.r * self.r
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end, self.sigma_mode)
    }
}

/// One coreset patch as stored: 8-bit RGB plus provenance metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPatch {
    pub class_id: usize,
    pub source_id: usize,
    pub rect: CropRect,
    pub ce_score: f32,
    pub pixels: Vec<u8>,
}

/// Patches, variant recipes, per-variant image hashes and soft labels.
///
/// `specs`, `content_hashes` and `soft_labels` are parallel and ordered
/// patch-major: entry `p·m + v` belongs to patch `p`, variant `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledPayload {
    pub header: PayloadHeader,
    pub patches: Vec<StoredPatch>,
    pub specs: Vec<VariantSpec>,
    pub content_hashes: Vec<[u8; 32]>,
    pub soft_labels: Vec<SoftLabel>,
}

impl DistilledPayload {
    pub fn spec_index(&self, patch_index: usize, variant_index: usize) -> usize {
        patch_index * self.header.m + variant_index
    }

    /// Rebuild the (dequantized) coreset the teacher generated from.
    pub fn coreset(&self) -> Result<Coreset> {
        let h = &self.header;
        let mut classes = vec![Vec::new(); h.num_classes];
        for p in &self.patches {
            let pixels = ImageTensor::from_u8(h.patch_height, h.patch_width, &p.pixels)?;
            let bucket = classes
                .get_mut(p.class_id)
                .ok_or_else(|| PayloadError::Malformed(format!("patch class {} ≥ K", p.class_id)))?;
            bucket.push(PatchRecord {
                pixels,
                class_id: p.class_id,
                source_id: p.source_id,
                rect: p.rect,
                ce_score: f64::from(p.ce_score),
            });
        }
        Coreset::from_parts(classes, (h.height, h.width), h.ipc, h.r, h.candidates, h.teacher)
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        for (what, fp) in [
            ("teacher", h.teacher),
            ("autoencoder", h.autoencoder),
            ("denoiser", h.denoiser),
        ] {
            if fp.is_empty() {
                return Err(Error::InvalidInput(format!("payload {what} fingerprint is empty")));
            }
        }
        let per_class = h.patches_per_class();
        let mut counts = vec![0usize; h.num_classes];
        for p in &self.patches {
            if p.class_id >= h.num_classes {
                return Err(PayloadError::Malformed(format!("patch class {} ≥ K", p.class_id)).into());
            }
            counts[p.class_id] += 1;
        }
        for (class, &n) in counts.iter().enumerate() {
            if n != per_class {
                return Err(Error::CountMismatch {
                    class,
                    what: "patches",
                    expected: per_class,
                    actual: n,
                });
            }
        }
        let expected = self.patches.len() * h.m;
        if self.specs.len() != expected || self.soft_labels.len() != expected || self.content_hashes.len() != expected {
            return Err(PayloadError::Malformed(format!(
                "expected {expected} variants, found {} specs, {} soft labels, {} hashes",
                self.specs.len(),
                self.soft_labels.len(),
                self.content_hashes.len()
            ))
            .into());
        }
        for (i, spec) in self.specs.iter().enumerate() {
            if spec.patch_index != i / h.m || spec.variant_index != i % h.m {
                return Err(PayloadError::Malformed(format!("spec {i} is out of order")).into());
            }
            if spec.class_id != self.patches[spec.patch_index].class_id {
                return Err(PayloadError::Malformed(format!("spec {i} class disagrees with its patch")).into());
            }
            if let Some(mx) = spec.mixup {
                if self.patches.get(mx.partner).map(|p| p.class_id) != Some(spec.class_id) {
                    return Err(PayloadError::Malformed(format!("spec {i} mixup partner is not same-class")).into());
                }
            }
        }
        if let Some(bad) = self.soft_labels.iter().position(|s| s.num_classes() != h.num_classes) {
            return Err(PayloadError::Malformed(format!("soft label {bad} has the wrong length")).into());
        }
        Ok(())
    }
}

/// Assemble a payload from a coreset, its variant plan and the teacher's
/// outputs. `soft_labels` and `content_hashes` run parallel to `specs`.
pub fn build_payload(
    coreset: &Coreset,
    specs: &[VariantSpec],
    soft_labels: Vec<SoftLabel>,
    content_hashes: Vec<[u8; 32]>,
    fingerprints: [Fingerprint; 3],
    cfg: &RunConfig,
) -> Result<DistilledPayload> {
    let k = coreset.num_classes();
    let per_class = cfg.patches_per_class();
    let m = cfg.variants_per_patch();
    let (height, width) = coreset.image_shape();
    for class in 0..k {
        let n = coreset.class(class).len();
        if n != per_class {
            return Err(Error::CountMismatch {
                class,
                what: "patches",
                expected: per_class,
                actual: n,
            });
        }
    }
    if let Some(s) = specs.iter().find(|s| s.class_id >= k) {
        return Err(Error::InvalidInput(format!("spec class {} ≥ K = {k}", s.class_id)));
    }
    // a label or hash list is attributed to classes through the parallel spec list
    for (what, len) in [
        ("variant specs", specs.len()),
        ("soft labels", soft_labels.len()),
        ("content hashes", content_hashes.len()),
    ] {
        let mut counts = vec![0usize; k];
        for s in &specs[..len.min(specs.len())] {
            counts[s.class_id] += 1;
        }
        for (class, &n) in counts.iter().enumerate() {
            if n != m * per_class {
                return Err(Error::CountMismatch {
                    class,
                    what,
                    expected: m * per_class,
                    actual: n,
                });
            }
        }
        if len != specs.len() {
            return Err(Error::InvalidInput(format!("{len} {what} for {} specs", specs.len())));
        }
    }
    let patches = coreset
        .patches()
        .map(|p| StoredPatch {
            class_id: p.class_id,
            source_id: p.source_id,
            rect: p.rect,
            ce_score: p.ce_score as f32,
            pixels: p.pixels.to_u8(),
        })
        .collect();
    let (patch_height, patch_width) = coreset.patch_shape();
    let [teacher, autoencoder, denoiser] = fingerprints;
    let payload = DistilledPayload {
        header: PayloadHeader {
            dataset_name: cfg.dataset_name.clone(),
            num_classes: k,
            height,
            width,
            patch_height,
            patch_width,
            ipc: cfg.ipc,
            r: cfg.r,
            candidates: cfg.p,
            m,
            rho: cfg.rho,
            timesteps: cfg.timesteps,
            beta_start: cfg.beta_start,
            beta_end: cfg.beta_end,
            n_steps: cfg.n_steps,
            sigma_mode: cfg.sigma_mode,
            mixup_enabled: cfg.mixup_enabled,
            gamma_lo: cfg.gamma_lo,
            gamma_hi: cfg.gamma_hi,
            interpolation: cfg.interpolation,
            generation_mode: cfg.generation_mode,
            master_seed: cfg.master_seed,
            teacher,
            autoencoder,
            denoiser,
        },
        patches,
        specs: specs.to_vec(),
        content_hashes,
        soft_labels,
    };
    payload.validate()?;
    Ok(payload)
}

// ---------------------------------------------------------------------------
// wire format

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    context: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], context: &'static str) -> Self {
        Self { buf, context }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        if self.buf.len() < n {
            return Err(PayloadError::Truncated(self.context));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], PayloadError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.arr::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<usize, PayloadError> {
        Ok(u32::from_le_bytes(self.arr()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, PayloadError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn f32(&mut self) -> Result<f32, PayloadError> {
        Ok(f32::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64, PayloadError> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    fn bool(&mut self) -> Result<bool, PayloadError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(PayloadError::Malformed(format!("bad flag byte {b}"))),
        }
    }
    fn str(&mut self) -> Result<String, PayloadError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| PayloadError::Malformed("invalid UTF-8 string".into()))
    }
    fn fingerprint(&mut self) -> Result<Fingerprint, PayloadError> {
        Ok(Fingerprint(self.arr()?))
    }
    fn finish(self) -> Result<(), PayloadError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(PayloadError::Malformed(format!(
                "{} trailing bytes in {}",
                self.buf.len(),
                self.context
            )))
        }
    }
}

fn section_checksum(tag: &[u8; 4], body: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(tag);
    h.update(body);
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest is 32 bytes"))
}

fn encode_header(h: &PayloadHeader) -> Vec<u8> {
    let mut w = Writer::default();
    w.str(&h.dataset_name);
    for v in [
        h.num_classes,
        h.height,
        h.width,
        h.patch_height,
        h.patch_width,
        h.ipc,
        h.r,
        h.candidates,
        h.m,
    ] {
        w.u32(v);
    }
    w.f64(h.rho);
    w.u32(h.timesteps);
    w.f64(h.beta_start);
    w.f64(h.beta_end);
    w.u32(h.n_steps);
    w.u8(h.sigma_mode.code());
    w.u8(u8::from(h.mixup_enabled));
    w.f64(h.gamma_lo);
    w.f64(h.gamma_hi);
    w.u8(h.interpolation.code());
    w.u8(h.generation_mode.code());
    w.u64(h.master_seed);
    for fp in [h.teacher, h.autoencoder, h.denoiser] {
        w.bytes(&fp.0);
    }
    w.0
}

fn decode_header(body: &[u8]) -> Result<PayloadHeader, PayloadError> {
    let mut r = Reader::new(body, "HEAD");
    let dataset_name = r.str()?;
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let [num_classes, height, width, patch_height, patch_width, ipc, rr, candidates, m] = dims;
    let rho = r.f64()?;
    let timesteps = r.u32()?;
    let beta_start = r.f64()?;
    let beta_end = r.f64()?;
    let n_steps = r.u32()?;
    let sigma_code = r.u8()?;
    let sigma_mode = SigmaMode::from_code(sigma_code)
        .ok_or_else(|| PayloadError::Malformed(format!("unknown σ mode {sigma_code}")))?;
    let mixup_enabled = r.bool()?;
    let gamma_lo = r.f64()?;
    let gamma_hi = r.f64()?;
    let icode = r.u8()?;
    let interpolation = Interpolation::from_code(icode)
        .ok_or_else(|| PayloadError::Malformed(format!("unknown interpolation {icode}")))?;
    let gcode = r.u8()?;
    let generation_mode = GenerationMode::from_code(gcode)
        .ok_or_else(|| PayloadError::Malformed(format!("unknown generation mode {gcode}")))?;
    let master_seed = r.u64()?;
    let teacher = r.fingerprint()?;
    let autoencoder = r.fingerprint()?;
    let denoiser = r.fingerprint()?;
    r.finish()?;
    if num_classes == 0 || patch_height == 0 || patch_width == 0 || m == 0 || rr == 0 {
        return Err(PayloadError::Malformed("zero-sized header field".into()));
    }
    Ok(PayloadHeader {
        dataset_name,
        num_classes,
        height,
        width,
        patch_height,
        patch_width,
        ipc,
        r: rr,
        candidates,
        m,
        rho,
        timesteps,
        beta_start,
        beta_end,
        n_steps,
        sigma_mode,
        mixup_enabled,
        gamma_lo,
        gamma_hi,
        interpolation,
        generation_mode,
        master_seed,
        teacher,
        autoencoder,
        denoiser,
    })
}

fn encode_patches(patches: &[StoredPatch]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(patches.len());
    for p in patches {
        w.u32(p.class_id);
        w.u32(p.source_id);
        for v in [p.rect.top, p.rect.left, p.rect.height, p.rect.width] {
            w.u32(v);
        }
        w.f32(p.ce_score);
        w.bytes(&p.pixels);
    }
    w.0
}

fn decode_patches(body: &[u8], h: &PayloadHeader) -> Result<Vec<StoredPatch>, PayloadError> {
    let mut r = Reader::new(body, "PTCH");
    let n = r.u32()?;
    let px = h.patch_height * h.patch_width * 3;
    let mut out = Vec::with_capacity(n.min(body.len()));
    for _ in 0..n {
        let class_id = r.u32()?;
        let source_id = r.u32()?;
        let rect = CropRect {
            top: r.u32()?,
            left: r.u32()?,
            height: r.u32()?,
            width: r.u32()?,
        };
        let ce_score = r.f32()?;
        let pixels = r.take(px)?.to_vec();
        out.push(StoredPatch {
            class_id,
            source_id,
            rect,
            ce_score,
            pixels,
        });
    }
    r.finish()?;
    Ok(out)
}

fn encode_specs(specs: &[VariantSpec], hashes: &[[u8; 32]]) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(specs.len());
    for (s, hash) in specs.iter().zip(hashes) {
        w.u32(s.patch_index);
        w.u32(s.variant_index);
        w.u32(s.class_id);
        w.f64(s.rho);
        w.u32(s.n_steps);
        match s.mixup {
            None => {
                w.u8(0);
                w.u32(0);
                w.f64(0.0);
            }
            Some(m) => {
                w.u8(1);
                w.u32(m.partner);
                w.f64(m.gamma);
            }
        }
        w.u8(u8::from(s.mixup_suppressed));
        w.bytes(hash);
    }
    w.0
}

fn decode_specs(body: &[u8]) -> Result<(Vec<VariantSpec>, Vec<[u8; 32]>), PayloadError> {
    let mut r = Reader::new(body, "SPEC");
    let n = r.u32()?;
    let mut specs = Vec::with_capacity(n.min(body.len()));
    let mut hashes = Vec::with_capacity(n.min(body.len()));
    for _ in 0..n {
        let patch_index = r.u32()?;
        let variant_index = r.u32()?;
        let class_id = r.u32()?;
        let rho = r.f64()?;
        let n_steps = r.u32()?;
        let has_mixup = r.bool()?;
        let partner = r.u32()?;
        let gamma = r.f64()?;
        let mixup_suppressed = r.bool()?;
        let mixup = has_mixup.then_some(Mixup { partner, gamma });
        specs.push(VariantSpec {
            patch_index,
            variant_index,
            class_id,
            rho,
            n_steps,
            mixup,
            mixup_suppressed,
        });
        hashes.push(r.arr::<32>()?);
    }
    r.finish()?;
    Ok((specs, hashes))
}

fn encode_soft(labels: &[SoftLabel], k: usize) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(labels.len());
    w.u32(k);
    for l in labels {
        for &p in l.probabilities() {
            w.f32(p);
        }
    }
    w.0
}

fn decode_soft(body: &[u8]) -> Result<Vec<SoftLabel>, PayloadError> {
    let mut r = Reader::new(body, "SOFT");
    let n = r.u32()?;
    let k = r.u32()?;
    let mut out = Vec::with_capacity(n.min(body.len()));
    for i in 0..n {
        let probs = (0..k).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        out.push(SoftLabel::new(probs).map_err(|e| PayloadError::Malformed(format!("soft label {i}: {e}")))?);
    }
    r.finish()?;
    Ok(out)
}

/// Canonical byte encoding: equal payloads always give equal bytes.
pub fn serialize(payload: &DistilledPayload) -> Vec<u8> {
    let bodies = [
        encode_header(&payload.header),
        encode_patches(&payload.patches),
        encode_specs(&payload.specs, &payload.content_hashes),
        encode_soft(&payload.soft_labels, payload.header.num_classes),
    ];
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u16(ENDIAN_TAG);
    w.u32(SECTIONS.len());
    for (tag, body) in SECTIONS.iter().zip(&bodies) {
        w.bytes(*tag);
        w.u64(body.len() as u64);
        w.bytes(body);
        w.u64(section_checksum(tag, body));
    }
    w.0
}

/// Parse and integrity-check a payload. Structural consistency (counts,
/// ordering) is checked too; the per-class budget is left to
/// [`verify_budget`].
pub fn deserialize(bytes: &[u8]) -> Result<DistilledPayload, PayloadError> {
    let mut r = Reader::new(bytes, "preamble");
    if r.take(4).map_err(|_| PayloadError::BadMagic)? != MAGIC {
        return Err(PayloadError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(PayloadError::UnsupportedVersion { found: version });
    }
    let endian = r.u16()?;
    if endian != ENDIAN_TAG {
        return Err(PayloadError::BadEndianness(endian));
    }
    let count = r.u32()?;
    if count != SECTIONS.len() {
        return Err(PayloadError::Malformed(format!(
            "expected {} sections, found {count}",
            SECTIONS.len()
        )));
    }
    let mut bodies: Vec<&[u8]> = Vec::with_capacity(SECTIONS.len());
    for tag in SECTIONS {
        r.context = "section";
        let found: [u8; 4] = r.arr()?;
        if &found != tag {
            return Err(PayloadError::Malformed(format!(
                "expected section {}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(&found)
            )));
        }
        let len = usize::try_from(r.u64()?).map_err(|_| PayloadError::Malformed("section too large".into()))?;
        let body = r.take(len)?;
        let sum = r.u64()?;
        if sum != section_checksum(tag, body) {
            return Err(PayloadError::ChecksumMismatch(
                String::from_utf8_lossy(tag).into_owned(),
            ));
        }
        bodies.push(body);
    }
    r.finish()?;
    let header = decode_header(bodies[0])?;
    let patches = decode_patches(bodies[1], &header)?;
    let (specs, content_hashes) = decode_specs(bodies[2])?;
    let soft_labels = decode_soft(bodies[3])?;
    let payload = DistilledPayload {
        header,
        patches,
        specs,
        content_hashes,
        soft_labels,
    };
    check_structure(&payload)?;
    Ok(payload)
}

fn check_structure(p: &DistilledPayload) -> Result<(), PayloadError> {
    let m = p.header.m;
    let n = p.patches.len() * m;
    if p.specs.len() != n || p.soft_labels.len() != n {
        return Err(PayloadError::Malformed(format!(
            "{} patches × m={m} needs {n} specs and soft labels, found {} and {}",
            p.patches.len(),
            p.specs.len(),
            p.soft_labels.len()
        )));
    }
    for (i, s) in p.specs.iter().enumerate() {
        if s.patch_index != i / m || s.variant_index != i % m {
            return Err(PayloadError::Malformed(format!("spec {i} is out of order")));
        }
        if s.mixup.is_some_and(|mx| mx.partner >= p.patches.len()) {
            return Err(PayloadError::Malformed(format!("spec {i} mixup partner out of range")));
        }
    }
    if p.patches.iter().any(|x| x.class_id >= p.header.num_classes) {
        return Err(PayloadError::Malformed("patch class id ≥ K".into()));
    }
    if p.soft_labels.iter().any(|s| s.num_classes() != p.header.num_classes) {
        return Err(PayloadError::Malformed("soft label length differs from K".into()));
    }
    Ok(())
}

/// Per-class storage accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassBudget {
    pub class: usize,
    pub patches: usize,
    pub expected_patches: usize,
    pub stored_pixels: usize,
    pub pixel_limit: usize,
    pub soft_labels: usize,
    pub soft_label_bytes: usize,
}

impl ClassBudget {
    pub fn within_budget(&self) -> bool {
        self.stored_pixels <= self.pixel_limit && self.patches == self.expected_patches
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetReport {
    pub classes: Vec<ClassBudget>,
    /// Bytes of stored patch pixels (all classes).
    pub patch_bytes: usize,
    /// Bytes of stored soft labels (all classes), reported separately.
    pub soft_label_bytes: usize,
}

impl BudgetReport {
    pub fn ok(&self) -> bool {
        self.classes.iter().all(ClassBudget::within_budget)
    }

    pub fn violations(&self) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|c| !c.within_budget())
            .map(|c| c.class)
            .collect()
    }
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "class  patches  pixels/limit       soft labels (bytes)  status")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:>5}  {:>3}/{:<3}  {:>8}/{:<8}  {:>6} ({:>8})     {}",
                c.class,
                c.patches,
                c.expected_patches,
                c.stored_pixels,
                c.pixel_limit,
                c.soft_labels,
                c.soft_label_bytes,
                if c.within_budget() { "ok" } else { "VIOLATION" }
            )?;
        }
        write!(
            f,
            "patch bytes {}, soft-label bytes {}",
            self.patch_bytes, self.soft_label_bytes
        )
    }
}

/// Check the pixel budget `IPC·H·W` per class and tally soft-label overhead.
pub fn verify_budget(payload: &DistilledPayload) -> BudgetReport {
    let h = &payload.header;
    let patch_px = h.patch_height * h.patch_width;
    let mut classes: Vec<ClassBudget> = (0..h.num_classes)
        .map(|class| ClassBudget {
            class,
            patches: 0,
            expected_patches: h.patches_per_class(),
            stored_pixels: 0,
            pixel_limit: h.ipc * h.height * h.width,
            soft_labels: 0,
            soft_label_bytes: 0,
        })
        .collect();
    for p in &payload.patches {
        if let Some(c) = classes.get_mut(p.class_id) {
            c.patches += 1;
            c.stored_pixels += patch_px;
        }
    }
    for (spec, label) in payload.specs.iter().zip(&payload.soft_labels) {
        if let Some(c) = classes.get_mut(spec.class_id) {
            c.soft_labels += 1;
            c.soft_label_bytes += 4 * label.num_classes();
        }
    }
    BudgetReport {
        patch_bytes: payload.patches.len() * patch_px * 3,
        soft_label_bytes: classes.iter().map(|c| c.soft_label_bytes).sum(),
        classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(b: u8) -> Fingerprint {
        Fingerprint([b; 32])
    }

    /// A hand-assembled payload: `k` classes, `per_class` patches, `m` variants.
    fn toy(k: usize, per_class: usize, m: usize, side: usize, r: usize) -> DistilledPayload {
        let ph = side / r;
        let mut patches = Vec::new();
        for c in 0..k {
            for j in 0..per_class {
                patches.push(StoredPatch {
                    class_id: c,
                    source_id: c * 100 + j,
                    rect: CropRect {
                        top: j,
                        left: 1,
                        height: ph,
                        width: ph,
                    },
                    ce_score: 0.1 * j as f32,
                    pixels: (0..ph * ph * 3).map(|i| (i * 7 + c) as u8).collect(),
                });
            }
        }
        let mut specs = Vec::new();
        let mut soft = Vec::new();
        let mut hashes = Vec::new();
        for (pi, p) in patches.iter().enumerate() {
            for v in 0..m {
                specs.push(VariantSpec {
                    patch_index: pi,
                    variant_index: v,
                    class_id: p.class_id,
                    rho: 0.8,
                    n_steps: 5,
                    mixup: (v % 2 == 1).then_some(Mixup {
                        partner: pi,
                        gamma: 0.75,
                    }),
                    mixup_suppressed: false,
                });
                let mut probs = vec![0.0f32; k];
                probs[p.class_id] = 0.75;
                probs[(p.class_id + 1) % k] += 0.25;
                soft.push(SoftLabel::new(probs).unwrap());
                hashes.push([v as u8; 32]);
            }
        }
        DistilledPayload {
            header: PayloadHeader {
                dataset_name: "toy".into(),
                num_classes: k,
                height: side,
                width: side,
                patch_height: ph,
                patch_width: ph,
                ipc: 1,
                r,
                candidates: 16,
                m,
                rho: 0.8,
                timesteps: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                n_steps: 5,
                sigma_mode: SigmaMode::Posterior,
                mixup_enabled: true,
                gamma_lo: 0.5,
                gamma_hi: 1.0,
                interpolation: Interpolation::Bicubic,
                generation_mode: GenerationMode::Anchored,
                master_seed: 42,
                teacher: fp(1),
                autoencoder: fp(2),
                denoiser: fp(3),
            },
            patches,
            specs,
            content_hashes: hashes,
            soft_labels: soft,
        }
    }

    #[test]
    fn round_trip_is_canonical() {
        let p = toy(1, 1, 1, 8, 1);
        let bytes = serialize(&p);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(serialize(&back), bytes);
        let q = toy(2, 4, 3, 8, 2);
        let bytes = serialize(&q);
        assert_eq!(serialize(&deserialize(&bytes).unwrap()), bytes);
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = serialize(&toy(2, 4, 2, 8, 2));
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(deserialize(&bad).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn body_flip_is_a_checksum_failure() {
        let mut bytes = serialize(&toy(2, 4, 2, 8, 2));
        let last_body = bytes.len() - 20;
        bytes[last_body] ^= 1;
        let err = deserialize(&bytes).unwrap_err();
        assert_eq!(err.code(), "E_CHECKSUM");
    }

    #[test]
    fn version_bump_and_magic() {
        let bytes = serialize(&toy(1, 1, 1, 8, 1));
        let mut bumped = bytes.clone();
        bumped[4] = bumped[4].wrapping_add(1);
        assert_eq!(
            deserialize(&bumped).unwrap_err(),
            PayloadError::UnsupportedVersion {
                found: FORMAT_VERSION + 1
            }
        );
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(deserialize(&magic).unwrap_err().code(), "E_MAGIC");
        assert_eq!(
            deserialize(&bytes[..bytes.len() - 3]).unwrap_err().code(),
            "E_TRUNCATED"
        );
        assert_eq!(deserialize(&bytes[..2]).unwrap_err().code(), "E_MAGIC");
    }

    #[test]
    fn error_codes_are_distinct() {
        let codes = [
            PayloadError::BadMagic.code(),
            PayloadError::UnsupportedVersion { found: 9 }.code(),
            PayloadError::BadEndianness(0).code(),
            PayloadError::Truncated("x").code(),
            PayloadError::ChecksumMismatch("x".into()).code(),
            PayloadError::Malformed("x".into()).code(),
        ];
        let set: std::collections::HashSet<_> = codes.iter().collect();
        assert_eq!(set.len(), codes.len());
    }

    #[test]
    fn budget_examples() {
        // 16 patches of 56×56 fill a 224×224 image exactly
        let mut big = toy(1, 16, 1, 224, 4);
        big.header.ipc = 1;
        let report = verify_budget(&big);
        assert_eq!(report.classes[0].stored_pixels, 50176);
        assert_eq!(report.classes[0].pixel_limit, 224 * 224);
        assert!(report.ok());

        let r3 = toy(1, 9, 1, 32, 3);
        let report = verify_budget(&r3);
        assert_eq!(report.classes[0].stored_pixels, 900);
        assert!(report.ok());
        assert_eq!(report.soft_label_bytes, 9 * 4);

        let mut tampered = toy(2, 4, 1, 8, 2);
        let extra = tampered.patches[0].clone();
        tampered.patches.push(extra);
        let report = verify_budget(&tampered);
        assert_eq!(report.violations(), vec![0]);
    }

    #[test]
    fn soft_label_invariants() {
        assert!(SoftLabel::new(vec![0.5, 0.5]).is_ok());
        assert!(SoftLabel::new(vec![0.6, 0.5]).is_err());
        assert!(SoftLabel::new(vec![1.5, -0.5]).is_err());
        assert!(SoftLabel::from_probabilities(&[0.2, 0.3, 0.5]).is_ok());
        assert_eq!(SoftLabel::one_hot(3, 1).unwrap().probabilities(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn validate_catches_missing_fingerprint() {
        let mut p = toy(1, 1, 1, 8, 1);
        assert!(p.validate().is_ok());
        p.header.denoiser = Fingerprint::default();
        assert!(p.validate().is_err());
    }

    #[test]
    fn deserialize_rejects_inconsistent_counts() {
        let mut p = toy(2, 4, 2, 8, 2);
        p.soft_labels.pop();
        p.content_hashes.pop();
        p.specs.pop();
        let bytes = serialize(&p);
        assert_eq!(deserialize(&bytes).unwrap_err().code(), "E_MALFORMED");
    }
}
