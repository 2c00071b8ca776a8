//! Seeded synthetic corpora: instances, bound synthetic models and the
//! attribution maps of four reference explainers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::game::{MixedWeights, SyntheticKind, SyntheticModelSpec};
use crate::mask::MultimodalInstance;
use crate::perturb::AttributionMap;

/// Reference explainers with known quality on a synthetic model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SyntheticExplainer {
    /// Scores each feature by its true marginal relevance.
    Oracle,
    /// Oracle scores plus Gaussian noise.
    NoisyOracle,
    /// Uniform scores independent of the model.
    Random,
    /// Negated oracle scores.
    AntiOracle,
}

impl SyntheticExplainer {
    pub const ALL: [SyntheticExplainer; 4] = [Self::Oracle, Self::NoisyOracle, Self::Random, Self::AntiOracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::NoisyOracle => "noisy-oracle",
            Self::Random => "random",
            Self::AntiOracle => "anti-oracle",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub instances: usize,
    pub seed: u64,
    pub kind: SyntheticKind,
    /// Inclusive range of visual patch counts.
    pub patches: (usize, usize),
    /// Inclusive range of text token counts.
    pub tokens: (usize, usize),
    /// Share of each modality that is key, at least one feature.
    pub key_fraction: f64,
    /// Noise standard deviation relative to the mean key relevance.
    pub noise: f64,
    pub explainers: Vec<SyntheticExplainer>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            instances: 200,
            seed: 11,
            kind: SyntheticKind::WeightedMixed,
            patches: (12, 40),
            tokens: (11, 30),
            key_fraction: 0.25,
            noise: 1.0,
            explainers: SyntheticExplainer::ALL.to_vec(),
        }
    }
}

/// One corpus instance with its model and explainer outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticItem {
    pub instance: MultimodalInstance,
    /// Weighted-mixed models carry their drawn weights explicitly.
    pub model: SyntheticModelSpec,
    pub attributions: Vec<(String, AttributionMap)>,
}

/// Generates the corpus; instance `i` depends only on `(seed, i)`.
pub fn synthetic_corpus(spec: &CorpusSpec) -> Result<Vec<SyntheticItem>> {
    let valid_range = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi;
    if !valid_range(spec.patches) || !valid_range(spec.tokens) {
        return Err(Error::InvalidCorpus("feature count ranges must satisfy 1 <= min <= max"));
    }
    if !(spec.key_fraction > 0.0 && spec.key_fraction <= 1.0) || spec.noise.is_nan() || spec.noise < 0.0 {
        return Err(Error::InvalidCorpus("key fraction must lie in (0, 1] and noise must be nonnegative"));
    }
    let width = format!("{}", spec.instances.saturating_sub(1)).len().max(3);
    (0..spec.instances)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let m = rng.random_range(spec.patches.0..=spec.patches.1);
            let n = rng.random_range(spec.tokens.0..=spec.tokens.1);
            let instance = MultimodalInstance::new(format!("syn{i:0width$}"), m, n)?;
            let keys = |rng: &mut ChaCha8Rng, len: usize| {
                let count = (libm::round(spec.key_fraction * len as f64) as usize).clamp(1, len);
                let mut k = sample(rng, len, count).into_vec();
                k.sort_unstable();
                k
            };
            let key_visual = keys(&mut rng, m);
            let key_text = keys(&mut rng, n);
            let model_seed = rng.random::<u64>();
            let mut model = SyntheticModelSpec::new(spec.kind, key_visual, key_text, model_seed);
            if spec.kind == SyntheticKind::WeightedMixed {
                model.weights = Some(MixedWeights::from_seed(model_seed, model.key_visual.len(), model.key_text.len()));
            }
            let (rel_v, rel_t) = relevance(&model, m, n);
            let attributions = spec
                .explainers
                .iter()
                .map(|e| {
                    let (v, t) = match e {
                        SyntheticExplainer::Oracle => (rel_v.clone(), rel_t.clone()),
                        SyntheticExplainer::AntiOracle => {
                            (rel_v.iter().map(|r| -r).collect(), rel_t.iter().map(|r| -r).collect())
                        }
                        SyntheticExplainer::Random => (
                            (0..m).map(|_| rng.random::<f64>()).collect(),
                            (0..n).map(|_| rng.random::<f64>()).collect(),
                        ),
                        SyntheticExplainer::NoisyOracle => {
                            let mut noisy = |rel: &[f64]| {
                                let keyed: Vec<f64> = rel.iter().copied().filter(|r| *r > 0.0).collect();
                                let scale = keyed.iter().sum::<f64>() / keyed.len().max(1) as f64;
                                let normal = Normal::new(0.0, spec.noise * scale).expect("finite noise scale");
                                rel.iter().map(|r| r + normal.sample(&mut rng)).collect::<Vec<f64>>()
                            };
                            (noisy(&rel_v), noisy(&rel_t))
                        }
                    };
                    Ok((String::from(e.as_str()), AttributionMap::new(v, t)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SyntheticItem { instance, model, attributions })
        })
        .collect()
}

// Marginal relevance of each feature: its own weight plus its share of the
// interaction for weighted-mixed models, a unit score on keys otherwise.
fn relevance(model: &SyntheticModelSpec, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = alloc::vec![0.0; m];
    let mut t = alloc::vec![0.0; n];
    match &model.weights {
        Some(w) => {
            let share_v = w.interaction / model.key_visual.len() as f64;
            let share_t = w.interaction / model.key_text.len() as f64;
            for (&i, wi) in model.key_visual.iter().zip(&w.visual) {
                v[i] = wi + share_v;
            }
            for (&j, wj) in model.key_text.iter().zip(&w.textual) {
                t[j] = wj + share_t;
            }
        }
        None => {
            model.key_visual.iter().for_each(|&i| v[i] = 1.0);
            model.key_text.iter().for_each(|&j| t[j] = 1.0);
        }
    }
    (v, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::make_synthetic;
    use crate::mask::Modality;
    use crate::perturb::PerturbationSchedule;
    use crate::synergy::synergy_curves;

    #[test]
    fn deterministic_and_prefix_stable() {
        let spec = CorpusSpec { instances: 5, ..CorpusSpec::default() };
        let a = synthetic_corpus(&spec).unwrap();
        assert_eq!(a, synthetic_corpus(&spec).unwrap());
        let b = synthetic_corpus(&CorpusSpec { instances: 3, ..spec.clone() }).unwrap();
        assert_eq!(&a[..3], &b[..]);
        let c = synthetic_corpus(&CorpusSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_keys_within_bounds() {
        for item in synthetic_corpus(&CorpusSpec { instances: 30, ..CorpusSpec::default() }).unwrap() {
            let (m, n) = (item.instance.patches(), item.instance.tokens());
            assert!((12..=40).contains(&m) && (11..=30).contains(&n));
            assert!(make_synthetic(&item.model, &item.instance).is_ok());
            assert_eq!(item.attributions.len(), 4);
            for (_, a) in &item.attributions {
                assert!(a.check_bound(&item.instance).is_ok());
            }
        }
    }

    #[test]
    fn oracle_ranks_keys_first_and_beats_random() {
        let items = synthetic_corpus(&CorpusSpec { instances: 50, ..CorpusSpec::default() }).unwrap();
        let sched = PerturbationSchedule::default();
        let mut means = [0.0; 4];
        for item in &items {
            let vf = make_synthetic(&item.model, &item.instance).unwrap();
            let oracle = &item.attributions[0].1;
            let top: Vec<usize> = oracle.ranking(Modality::Visual)[..item.model.key_visual.len()].to_vec();
            let mut sorted = top.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, item.model.key_visual);
            for (slot, (_, attr)) in item.attributions.iter().enumerate() {
                means[slot] += synergy_curves(&vf, &item.instance, attr, &sched).unwrap().f_syn / items.len() as f64;
            }
        }
        assert!(means[0] > means[2], "{means:?}");
        assert!(means[2] > means[3], "{means:?}");
    }
}
