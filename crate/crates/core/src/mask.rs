//! Instances, per-modality bit sets and multimodal masks.
//!
//! A set bit means the feature keeps its original value; a clear bit means it
//! is replaced by the modality's zero-state. The all-ones mask is therefore the
//! unperturbed input and the all-zeros mask is the joint zero-state.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// The two input modalities of a vision-language instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Visual => Modality::Textual,
            Modality::Textual => Modality::Visual,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An image-text pair reduced to its feature counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultimodalInstance {
    id: String,
    patches: usize,
    tokens: usize,
}

impl MultimodalInstance {
    pub fn new(id: impl Into<String>, patches: usize, tokens: usize) -> Result<Self> {
        let id = id.into();
        if patches == 0 || tokens == 0 {
            return Err(Error::InvalidInstance {
                id,
                reason: "both modalities need at least one feature",
            });
        }
        Ok(Self { id, patches, tokens })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of visual patches.
    pub fn patches(&self) -> usize {
        self.patches
    }

    /// Number of text tokens.
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn len(&self, modality: Modality) -> usize {
        match modality {
            Modality::Visual => self.patches,
            Modality::Textual => self.tokens,
        }
    }

    pub fn total_features(&self) -> usize {
        self.patches + self.tokens
    }
}

/// Fixed-length bit set for one modality.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureBits {
    len: usize,
    words: Vec<u64>,
}

impl FeatureBits {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut bits = Self::zeros(len);
        for (w, word) in bits.words.iter_mut().enumerate() {
            let remaining = len - w * 64;
            *word = if remaining >= 64 {
                u64::MAX
            } else {
                (1u64 << remaining) - 1
            };
        }
        bits
    }

    /// Bit set with exactly `indices` set. Panics on an out-of-range index.
    pub fn from_indices<I: IntoIterator<Item = usize>>(len: usize, indices: I) -> Self {
        let mut bits = Self::zeros(len);
        for i in indices {
            bits.set(i, true);
        }
        bits
    }

    /// Parses a 0/1 sequence. Any other value is rejected.
    pub fn from_flags(flags: &[u8]) -> Option<Self> {
        let mut bits = Self::zeros(flags.len());
        for (i, &f) in flags.iter().enumerate() {
            match f {
                0 => {}
                1 => bits.set(i, true),
                _ => return None,
            }
        }
        Some(bits)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn all(&self) -> bool {
        self.count_ones() == self.len
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn to_flags(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    /// Raw 64-bit words, least significant bit first.
    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

impl fmt::Debug for FeatureBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A coalition over both modalities.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultimodalMask {
    pub visual: FeatureBits,
    pub textual: FeatureBits,
}

impl MultimodalMask {
    /// The unperturbed input `(I, T)`.
    pub fn full(instance: &MultimodalInstance) -> Self {
        Self {
            visual: FeatureBits::ones(instance.patches),
            textual: FeatureBits::ones(instance.tokens),
        }
    }

    /// The joint zero-state `(I_empty, T_empty)`.
    pub fn empty(instance: &MultimodalInstance) -> Self {
        Self {
            visual: FeatureBits::zeros(instance.patches),
            textual: FeatureBits::zeros(instance.tokens),
        }
    }

    pub fn bits(&self, modality: Modality) -> &FeatureBits {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Textual => &self.textual,
        }
    }

    pub fn bits_mut(&mut self, modality: Modality) -> &mut FeatureBits {
        match modality {
            Modality::Visual => &mut self.visual,
            Modality::Textual => &mut self.textual,
        }
    }

    pub fn check_bound(&self, instance: &MultimodalInstance) -> Result<()> {
        for modality in Modality::BOTH {
            let found = self.bits(modality).len();
            let expected = instance.len(modality);
            if found != expected {
                return Err(Error::MaskMismatch {
                    instance: instance.id().into(),
                    modality,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}
