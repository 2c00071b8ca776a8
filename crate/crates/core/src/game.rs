//! The black-box value-function contract, synthetic model families, memoized
//! evaluation with distinct-call accounting, and exhaustive tabular oracles.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, EvalError, Result};
use crate::mask::{FeatureBits, Modality, MultimodalInstance, MultimodalMask};

/// Whether a value function tolerates calls from several workers at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serialized,
}

/// A deterministic confidence score `f(instance, mask) -> [0, 1]`.
///
/// Implementations must return bit-identical scores for identical inputs.
pub trait ValueFunction {
    fn evaluate(
        &self,
        instance: &MultimodalInstance,
        mask: &MultimodalMask,
    ) -> Result<f64, EvalError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for &V {
    fn evaluate(&self, i: &MultimodalInstance, m: &MultimodalMask) -> Result<f64, EvalError> {
        (**self).evaluate(i, m)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for Box<V> {
    fn evaluate(&self, i: &MultimodalInstance, m: &MultimodalMask) -> Result<f64, EvalError> {
        (**self).evaluate(i, m)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<V: ValueFunction + ?Sized> ValueFunction for Arc<V> {
    fn evaluate(&self, i: &MultimodalInstance, m: &MultimodalMask) -> Result<f64, EvalError> {
        (**self).evaluate(i, m)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Rejects non-finite and out-of-range scores. Never clamps.
pub fn check_score(score: f64) -> Result<f64, EvalError> {
    if !score.is_finite() {
        Err(EvalError::NonFinite)
    } else if !(0.0..=1.0).contains(&score) {
        Err(EvalError::OutOfRange(score))
    } else {
        Ok(score)
    }
}

/// Per-run memo over a value function.
///
/// Keys are `(instance id, visual bits, textual bits)` compared exactly. The
/// number of distinct underlying evaluations is what the `6K + 2` call bound
/// is asserted against.
pub struct MemoEvaluator<V> {
    inner: V,
    cache: BTreeMap<(String, MultimodalMask), f64>,
    lookups: usize,
}

impl<V: ValueFunction> MemoEvaluator<V> {
    pub fn new(inner: V) -> Self {
        Self {
            inner,
            cache: BTreeMap::new(),
            lookups: 0,
        }
    }

    /// Cached score; validates range on every underlying evaluation.
    pub fn score(
        &mut self,
        instance: &MultimodalInstance,
        mask: &MultimodalMask,
    ) -> Result<f64, EvalError> {
        self.lookups += 1;
        let key = (instance.id().to_string(), mask.clone());
        if let Some(&hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let score = check_score(self.inner.evaluate(instance, mask)?)?;
        self.cache.insert(key, score);
        Ok(score)
    }

    /// Like [`score`](Self::score) but also checks the mask is bound to the instance.
    pub fn evaluate_cached(
        &mut self,
        instance: &MultimodalInstance,
        mask: &MultimodalMask,
    ) -> Result<f64> {
        mask.check_bound(instance)?;
        self.score(instance, mask).map_err(|source| Error::Evaluation {
            context: "cached evaluation".into(),
            source,
        })
    }

    /// Number of distinct masks forwarded to the wrapped value function.
    pub fn distinct_calls(&self) -> usize {
        self.cache.len()
    }

    pub fn lookups(&self) -> usize {
        self.lookups
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }

    pub fn into_inner(self) -> V {
        self.inner
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    /// Either modality's keys alone sustain full confidence.
    OrRedundant,
    /// Confidence requires both modalities' keys together.
    AndSynergy,
    /// Equal-weight sum of the key fractions per modality; zero interaction.
    Additive,
    /// Clamped weighted sum plus a product interaction term.
    WeightedMixed,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 4] = [
        SyntheticKind::OrRedundant,
        SyntheticKind::AndSynergy,
        SyntheticKind::Additive,
        SyntheticKind::WeightedMixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticKind::OrRedundant => "or-redundant",
            SyntheticKind::AndSynergy => "and-synergy",
            SyntheticKind::Additive => "additive",
            SyntheticKind::WeightedMixed => "weighted-mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Weights of the weighted-mixed family. Per-key vectors are aligned with the
/// spec's `key_visual` / `key_text` order.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedWeights {
    pub bias: f64,
    pub visual: Vec<f64>,
    pub textual: Vec<f64>,
    pub interaction: f64,
}

impl MixedWeights {
    /// Draws weights deterministically from `seed`. The unclamped maximum is
    /// at most 1.1, so clamping only bites near the full coalition.
    pub fn from_seed(seed: u64, key_visual: usize, key_text: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = rng.random_range(0.0..0.1);
        let visual = (0..key_visual)
            .map(|_| rng.random_range(0.0..0.2) / key_visual as f64)
            .collect();
        let textual = (0..key_text)
            .map(|_| rng.random_range(0.0..0.2) / key_text as f64)
            .collect();
        let interaction = rng.random_range(0.05..0.6);
        Self {
            bias,
            visual,
            textual,
            interaction,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticModelSpec {
    pub kind: SyntheticKind,
    pub key_visual: Vec<usize>,
    pub key_text: Vec<usize>,
    /// Only meaningful for [`SyntheticKind::WeightedMixed`]; drawn from `seed` when absent.
    pub weights: Option<MixedWeights>,
    pub seed: u64,
}

impl SyntheticModelSpec {
    pub fn new(kind: SyntheticKind, key_visual: Vec<usize>, key_text: Vec<usize>, seed: u64) -> Self {
        Self {
            kind,
            key_visual,
            key_text,
            weights: None,
            seed,
        }
    }

    /// Keys covering every feature of the instance.
    pub fn full_keys(kind: SyntheticKind, instance: &MultimodalInstance, seed: u64) -> Self {
        Self::new(
            kind,
            (0..instance.patches()).collect(),
            (0..instance.tokens()).collect(),
            seed,
        )
    }
}

/// A synthetic value function bound to one instance shape.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    kind: SyntheticKind,
    patches: usize,
    tokens: usize,
    key_visual: Vec<usize>,
    key_text: Vec<usize>,
    weights: Option<MixedWeights>,
}

/// Validates `spec` against the instance shape and builds the value function.
pub fn make_synthetic(spec: &SyntheticModelSpec, instance: &MultimodalInstance) -> Result<SyntheticModel> {
    let check = |keys: &[usize], modality: Modality| -> Result<()> {
        let len = instance.len(modality);
        if keys.is_empty() {
            return Err(Error::InvalidModel("key sets must be nonempty"));
        }
        if let Some(&index) = keys.iter().find(|&&i| i >= len) {
            return Err(Error::KeyOutOfRange { modality, index, len });
        }
        let mut sorted = keys.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != keys.len() {
            return Err(Error::InvalidModel("duplicate key index"));
        }
        Ok(())
    };
    check(&spec.key_visual, Modality::Visual)?;
    check(&spec.key_text, Modality::Textual)?;

    let weights = match (spec.kind, &spec.weights) {
        (SyntheticKind::WeightedMixed, Some(w)) => {
            if w.visual.len() != spec.key_visual.len() || w.textual.len() != spec.key_text.len() {
                return Err(Error::InvalidModel("weight vectors must align with key sets"));
            }
            let all = [w.bias, w.interaction].into_iter().chain(w.visual.iter().copied()).chain(w.textual.iter().copied());
            if all.into_iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel("weights must be finite"));
            }
            Some(w.clone())
        }
        (SyntheticKind::WeightedMixed, None) => Some(MixedWeights::from_seed(
            spec.seed,
            spec.key_visual.len(),
            spec.key_text.len(),
        )),
        (_, Some(_)) => return Err(Error::InvalidModel("weights only apply to weighted-mixed")),
        (_, None) => None,
    };

    Ok(SyntheticModel {
        kind: spec.kind,
        patches: instance.patches(),
        tokens: instance.tokens(),
        key_visual: spec.key_visual.clone(),
        key_text: spec.key_text.clone(),
        weights,
    })
}

impl SyntheticModel {
    pub fn kind(&self) -> SyntheticKind {
        self.kind
    }

    pub fn weights(&self) -> Option<&MixedWeights> {
        self.weights.as_ref()
    }

    fn fraction(bits: &FeatureBits, keys: &[usize]) -> f64 {
        keys.iter().filter(|&&i| bits.get(i)).count() as f64 / keys.len() as f64
    }

    fn all_present(bits: &FeatureBits, keys: &[usize]) -> bool {
        keys.iter().all(|&i| bits.get(i))
    }

    fn score(&self, mask: &MultimodalMask) -> f64 {
        let (v, t) = (&mask.visual, &mask.textual);
        match self.kind {
            SyntheticKind::OrRedundant => {
                let hit = Self::all_present(v, &self.key_visual) || Self::all_present(t, &self.key_text);
                hit as u8 as f64
            }
            SyntheticKind::AndSynergy => {
                let hit = Self::all_present(v, &self.key_visual) && Self::all_present(t, &self.key_text);
                hit as u8 as f64
            }
            SyntheticKind::Additive => {
                0.5 * Self::fraction(v, &self.key_visual) + 0.5 * Self::fraction(t, &self.key_text)
            }
            SyntheticKind::WeightedMixed => {
                let w = self.weights.as_ref().expect("weighted-mixed always carries weights");
                let linear_v: f64 = self
                    .key_visual
                    .iter()
                    .zip(&w.visual)
                    .filter(|(&i, _)| v.get(i))
                    .map(|(_, wi)| wi)
                    .sum();
                let linear_t: f64 = self
                    .key_text
                    .iter()
                    .zip(&w.textual)
                    .filter(|(&j, _)| t.get(j))
                    .map(|(_, wj)| wj)
                    .sum();
                let product = Self::fraction(v, &self.key_visual) * Self::fraction(t, &self.key_text);
                (w.bias + linear_v + linear_t + w.interaction * product).clamp(0.0, 1.0)
            }
        }
    }
}

impl ValueFunction for SyntheticModel {
    fn evaluate(&self, instance: &MultimodalInstance, mask: &MultimodalMask) -> Result<f64, EvalError> {
        if mask.visual.len() != self.patches || mask.textual.len() != self.tokens {
            return Err(EvalError::Backend(alloc::format!(
                "model bound to ({}, {}) features, instance {} has ({}, {})",
                self.patches,
                self.tokens,
                instance.id(),
                mask.visual.len(),
                mask.textual.len()
            )));
        }
        Ok(self.score(mask))
    }
}

/// Largest `m + n` for which a full table is built.
pub const TABLE_FEATURE_LIMIT: usize = 20;

/// Every coalition of a small instance mapped to its score.
///
/// Coalition index: bit `i < m` is visual patch `i`, bit `m + j` is token `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularGame {
    instance: MultimodalInstance,
    table: Vec<f64>,
}

impl TabularGame {
    /// Builds a game from raw values, one per coalition index.
    pub fn from_values(instance: MultimodalInstance, table: Vec<f64>) -> Result<Self> {
        let features = instance.total_features();
        if features > TABLE_FEATURE_LIMIT {
            return Err(Error::TooLarge { features, limit: TABLE_FEATURE_LIMIT });
        }
        if table.len() != 1 << features {
            return Err(Error::InvalidModel("table must hold one value per coalition"));
        }
        if let Some(&bad) = table.iter().find(|s| check_score(**s).is_err()) {
            return Err(Error::Evaluation {
                context: "tabular value".into(),
                source: check_score(bad).unwrap_err(),
            });
        }
        Ok(Self { instance, table })
    }

    pub fn instance(&self) -> &MultimodalInstance {
        &self.instance
    }

    pub fn values(&self) -> &[f64] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn index_of(&self, mask: &MultimodalMask) -> usize {
        let m = self.instance.patches();
        let v = mask.visual.iter_ones().fold(0usize, |acc, i| acc | 1 << i);
        mask.textual.iter_ones().fold(v, |acc, j| acc | 1 << (m + j))
    }

    pub fn mask_of(&self, index: usize) -> MultimodalMask {
        let m = self.instance.patches();
        let n = self.instance.tokens();
        MultimodalMask {
            visual: FeatureBits::from_indices(m, (0..m).filter(|i| index >> i & 1 == 1)),
            textual: FeatureBits::from_indices(n, (0..n).filter(|j| index >> (m + j) & 1 == 1)),
        }
    }

    pub fn lookup(&self, mask: &MultimodalMask) -> f64 {
        self.table[self.index_of(mask)]
    }
}

impl ValueFunction for TabularGame {
    fn evaluate(&self, instance: &MultimodalInstance, mask: &MultimodalMask) -> Result<f64, EvalError> {
        if mask.check_bound(&self.instance).is_err() {
            return Err(EvalError::Backend(alloc::format!(
                "table for {} does not cover instance {}",
                self.instance.id(),
                instance.id()
            )));
        }
        Ok(self.lookup(mask))
    }
}

/// Evaluates `vf` on all `2^(m+n)` coalitions of `instance`.
pub fn brute_force_table<V: ValueFunction + ?Sized>(vf: &V, instance: &MultimodalInstance) -> Result<TabularGame> {
    let features = instance.total_features();
    if features > TABLE_FEATURE_LIMIT {
        return Err(Error::TooLarge { features, limit: TABLE_FEATURE_LIMIT });
    }
    let shape = TabularGame {
        instance: instance.clone(),
        table: Vec::new(),
    };
    let table = (0..1usize << features)
        .map(|index| {
            let mask = shape.mask_of(index);
            vf.evaluate(instance, &mask)
                .and_then(check_score)
                .map_err(|source| Error::Evaluation {
                    context: alloc::format!("coalition {index:#x}"),
                    source,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TabularGame { table, ..shape })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::cell::Cell;

    fn inst(m: usize, n: usize) -> MultimodalInstance {
        MultimodalInstance::new("t", m, n).unwrap()
    }

    fn with_bits(i: &MultimodalInstance, visual: &[usize], text: &[usize]) -> MultimodalMask {
        MultimodalMask {
            visual: FeatureBits::from_indices(i.patches(), visual.iter().copied()),
            textual: FeatureBits::from_indices(i.tokens(), text.iter().copied()),
        }
    }

    #[test]
    fn or_redundant_boundary_behaviour() {
        let i = inst(4, 3);
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::OrRedundant, &i, 0), &i).unwrap();
        assert_eq!(vf.evaluate(&i, &MultimodalMask::full(&i)).unwrap(), 1.0);
        assert_eq!(vf.evaluate(&i, &with_bits(&i, &[], &[0, 1, 2])).unwrap(), 1.0);
        assert_eq!(vf.evaluate(&i, &with_bits(&i, &[0, 1, 2], &[0, 1])).unwrap(), 0.0);
    }

    #[test]
    fn and_synergy_needs_both() {
        let i = inst(4, 3);
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::AndSynergy, &i, 0), &i).unwrap();
        assert_eq!(vf.evaluate(&i, &with_bits(&i, &[], &[0, 1, 2])).unwrap(), 0.0);
        assert_eq!(vf.evaluate(&i, &MultimodalMask::full(&i)).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_key_is_rejected() {
        let i = inst(2, 2);
        let spec = SyntheticModelSpec::new(SyntheticKind::AndSynergy, vec![2], vec![0], 0);
        assert_eq!(
            make_synthetic(&spec, &i).unwrap_err(),
            Error::KeyOutOfRange { modality: Modality::Visual, index: 2, len: 2 }
        );
        let spec = SyntheticModelSpec::new(SyntheticKind::Additive, vec![0], vec![], 0);
        assert!(make_synthetic(&spec, &i).is_err());
    }

    #[test]
    fn weights_rejected_for_other_kinds() {
        let i = inst(2, 2);
        let mut spec = SyntheticModelSpec::new(SyntheticKind::Additive, vec![0], vec![0], 0);
        spec.weights = Some(MixedWeights { bias: 0.0, visual: vec![0.1], textual: vec![0.1], interaction: 0.2 });
        assert!(make_synthetic(&spec, &i).is_err());
    }

    #[test]
    fn weighted_mixed_is_seeded_and_in_range() {
        let i = inst(3, 3);
        let spec = SyntheticModelSpec::full_keys(SyntheticKind::WeightedMixed, &i, 42);
        let a = make_synthetic(&spec, &i).unwrap();
        let b = make_synthetic(&spec, &i).unwrap();
        assert_eq!(a.weights(), b.weights());
        let other = make_synthetic(&SyntheticModelSpec { seed: 43, ..spec }, &i).unwrap();
        assert_ne!(a.weights(), other.weights());
        let table = brute_force_table(&a, &i).unwrap();
        assert!(table.values().iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn explicit_weights_are_clamped() {
        let i = inst(1, 1);
        let mut spec = SyntheticModelSpec::new(SyntheticKind::WeightedMixed, vec![0], vec![0], 0);
        spec.weights = Some(MixedWeights { bias: 0.5, visual: vec![0.5], textual: vec![0.5], interaction: 1.0 });
        let vf = make_synthetic(&spec, &i).unwrap();
        assert_eq!(vf.evaluate(&i, &MultimodalMask::full(&i)).unwrap(), 1.0);
        assert_eq!(vf.evaluate(&i, &MultimodalMask::empty(&i)).unwrap(), 0.5);
    }

    #[test]
    fn memo_counts_distinct_masks() {
        let i = inst(3, 2);
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::Additive, &i, 0), &i).unwrap();
        let mut memo = MemoEvaluator::new(&vf);
        let full = MultimodalMask::full(&i);
        memo.evaluate_cached(&i, &full).unwrap();
        memo.evaluate_cached(&i, &full).unwrap();
        assert_eq!(memo.distinct_calls(), 1);
        let mut one_off = full.clone();
        one_off.visual.set(0, false);
        memo.evaluate_cached(&i, &one_off).unwrap();
        assert_eq!(memo.distinct_calls(), 2);
        assert_eq!(memo.lookups(), 3);
    }

    struct Counting<'a> {
        calls: &'a Cell<usize>,
        score: f64,
    }

    impl ValueFunction for Counting<'_> {
        fn evaluate(&self, _: &MultimodalInstance, _: &MultimodalMask) -> Result<f64, EvalError> {
            self.calls.set(self.calls.get() + 1);
            Ok(self.score)
        }
    }

    #[test]
    fn memo_hits_do_not_reach_backend() {
        let i = inst(2, 2);
        let calls = Cell::new(0);
        let mut memo = MemoEvaluator::new(Counting { calls: &calls, score: 0.3 });
        for _ in 0..5 {
            memo.score(&i, &MultimodalMask::empty(&i)).unwrap();
        }
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn memo_rejects_bad_scores() {
        let i = inst(1, 1);
        let calls = Cell::new(0);
        for (score, expected) in [
            (1.2, EvalError::OutOfRange(1.2)),
            (-0.1, EvalError::OutOfRange(-0.1)),
            (f64::NAN, EvalError::NonFinite),
        ] {
            let mut memo = MemoEvaluator::new(Counting { calls: &calls, score });
            assert_eq!(memo.score(&i, &MultimodalMask::full(&i)).unwrap_err(), expected);
            assert_eq!(memo.distinct_calls(), 0);
        }
    }

    #[test]
    fn memo_rejects_unbound_mask() {
        let i = inst(2, 2);
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::Additive, &i, 0), &i).unwrap();
        let other = inst(3, 2);
        let mut memo = MemoEvaluator::new(&vf);
        assert!(matches!(
            memo.evaluate_cached(&i, &MultimodalMask::full(&other)),
            Err(Error::MaskMismatch { .. })
        ));
    }

    #[test]
    fn one_by_one_tables() {
        let i = inst(1, 1);
        let and = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::AndSynergy, &i, 0), &i).unwrap();
        // Index order: {}, {p}, {t}, {p, t}.
        assert_eq!(brute_force_table(&and, &i).unwrap().values(), [0.0, 0.0, 0.0, 1.0]);
        let add = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::Additive, &i, 0), &i).unwrap();
        assert_eq!(brute_force_table(&add, &i).unwrap().values(), [0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn weighted_mixed_table_matches_direct_evaluation() {
        let i = inst(2, 2);
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::WeightedMixed, &i, 7), &i).unwrap();
        let table = brute_force_table(&vf, &i).unwrap();
        assert_eq!(table.len(), 16);
        for index in 0..16 {
            let mask = table.mask_of(index);
            assert_eq!(table.index_of(&mask), index);
            assert_eq!(table.lookup(&mask).to_bits(), vf.evaluate(&i, &mask).unwrap().to_bits());
        }
    }

    #[test]
    fn table_refuses_large_instances() {
        let i = inst(12, 9);
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::Additive, &i, 0), &i).unwrap();
        assert_eq!(
            brute_force_table(&vf, &i).unwrap_err(),
            Error::TooLarge { features: 21, limit: 20 }
        );
    }
}
