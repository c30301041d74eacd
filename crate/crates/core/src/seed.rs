//! Deterministic random substreams.
//!
//! All randomness used while mining crops, planning variants, corrupting
//! latents and ordering batches is drawn from a substream keyed by
//! `(master_seed, patch_id, variant_index, purpose)`. Derivation hashes the
//! tuple with SHA-256 and uses the digest as the key of a ChaCha20 stream
//! cipher, so substreams are stateless to create, independent of the order in
//! which they are requested, and safe to build from any thread.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::Error;

const DOMAIN: &[u8] = b"patchdiff/substream/v1";

/// What a substream is used for. Each purpose gets a disjoint stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PurposeTag {
    Crop,
    NoiseEps,
    AncestralEps,
    MixupPartner,
    MixupGamma,
    BatchOrder,
}

impl PurposeTag {
    pub const ALL: [PurposeTag; 6] = [
        PurposeTag::Crop,
        PurposeTag::NoiseEps,
        PurposeTag::AncestralEps,
        PurposeTag::MixupPartner,
        PurposeTag::MixupGamma,
        PurposeTag::BatchOrder,
    ];

    fn code(self) -> u8 {
        match self {
            PurposeTag::Crop => 1,
            PurposeTag::NoiseEps => 2,
            PurposeTag::AncestralEps => 3,
            PurposeTag::MixupPartner => 4,
            PurposeTag::MixupGamma => 5,
            PurposeTag::BatchOrder => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PurposeTag::Crop => "crop",
            PurposeTag::NoiseEps => "noise_eps",
            PurposeTag::AncestralEps => "ancestral_eps",
            PurposeTag::MixupPartner => "mixup_partner",
            PurposeTag::MixupGamma => "mixup_gamma",
            PurposeTag::BatchOrder => "batch_order",
        }
    }
}

impl fmt::Display for PurposeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PurposeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PurposeTag::ALL
            .into_iter()
            .find(|tag| tag.as_str() == s)
            .ok_or_else(|| Error::config("purpose_tag", format!("unknown purpose tag {s:?}")))
    }
}

/// The master seed from which every substream is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    master_seed: u64,
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn substream(&self, patch_id: u64, variant_index: u64, purpose: PurposeTag) -> Substream {
        derive_substream(self.master_seed, patch_id, variant_index, purpose)
    }
}

/// Derive the substream for one `(master_seed, patch_id, variant_index, purpose)` tuple.
pub fn derive_substream(master_seed: u64, patch_id: u64, variant_index: u64, purpose: PurposeTag) -> Substream {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(master_seed.to_le_bytes());
    hasher.update(patch_id.to_le_bytes());
    hasher.update(variant_index.to_le_bytes());
    hasher.update([purpose.code()]);
    let key: [u8; 32] = hasher.finalize().into();
    Substream {
        rng: ChaCha20Rng::from_seed(key),
    }
}

/// A single deterministic random stream.
#[derive(Debug, Clone)]
pub struct Substream {
    rng: ChaCha20Rng,
}

impl Substream {
    pub fn next_u64(&mut self) -> u64 {
        rand::RngCore::next_u64(&mut self.rng)
    }

    pub fn fill_bytes(&mut self, dest: &mut [u8]) {
        rand::RngCore::fill_bytes(&mut self.rng, dest)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi]`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        rand::Rng::random_range(&mut self.rng, 0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.standard_normal()).collect()
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        rand::seq::SliceRandom::shuffle(items, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}
