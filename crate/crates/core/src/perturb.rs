//! Top-k selection from attribution maps, unimodal deletion/insertion curves,
//! trapezoidal AUC and SRG.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::game::{MemoEvaluator, ValueFunction};
use crate::mask::{FeatureBits, Modality, MultimodalInstance, MultimodalMask};

/// Per-patch and per-token explainer scores.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    visual: Vec<f64>,
    textual: Vec<f64>,
}

impl AttributionMap {
    pub fn new(visual: Vec<f64>, textual: Vec<f64>) -> Result<Self> {
        for (modality, scores) in [(Modality::Visual, &visual), (Modality::Textual, &textual)] {
            if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
                return Err(Error::NonFiniteAttribution { modality, index });
            }
        }
        Ok(Self { visual, textual })
    }

    pub fn scores(&self, modality: Modality) -> &[f64] {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Textual => &self.textual,
        }
    }

    pub fn check_bound(&self, instance: &MultimodalInstance) -> Result<()> {
        for modality in Modality::BOTH {
            let found = self.scores(modality).len();
            let expected = instance.len(modality);
            if found != expected {
                return Err(Error::AttributionLength {
                    instance: instance.id().into(),
                    modality,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Feature indices by descending score, ties by ascending index.
    pub fn ranking(&self, modality: Modality) -> Vec<usize> {
        let scores = self.scores(modality);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
            Ordering::Equal => a.cmp(&b),
            other => other,
        });
        order
    }
}

/// Slack absorbing representation error in `k * len` (e.g. `0.7 * 10`).
const COUNT_SLACK: f64 = 1e-9;

/// Number of features in the top-k proportion: 0 at `k = 0`, otherwise
/// `ceil(k * len)`, so every positive `k` selects at least one feature.
pub fn top_k_count(k: f64, len: usize) -> usize {
    if k <= 0.0 {
        return 0;
    }
    let raw = libm::ceil(k * len as f64 - COUNT_SLACK);
    (raw.max(1.0) as usize).min(len)
}

fn check_threshold(k: f64) -> Result<()> {
    if (0.0..=1.0).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(k))
    }
}

/// The top `k`-proportion of one modality's features, in rank order.
pub fn top_k_subset(attr: &AttributionMap, modality: Modality, k: f64) -> Result<Vec<usize>> {
    check_threshold(k)?;
    let mut ranking = attr.ranking(modality);
    ranking.truncate(top_k_count(k, ranking.len()));
    Ok(ranking)
}

/// Sorted thresholds `0 = k_0 < ... < k_K = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSchedule {
    thresholds: Vec<f64>,
    // Set when thresholds are exactly i / K, enabling the exact uniform rule.
    uniform: Option<usize>,
}

impl PerturbationSchedule {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(Error::InvalidSchedule("need at least 2 thresholds"));
        }
        if thresholds[0] != 0.0 || *thresholds.last().unwrap() != 1.0 {
            return Err(Error::InvalidSchedule("thresholds must start at 0 and end at 1"));
        }
        if thresholds.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(core::cmp::Ordering::Less)) {
            return Err(Error::InvalidSchedule("thresholds must be strictly increasing"));
        }
        let intervals = thresholds.len() - 1;
        let uniform = thresholds
            .iter()
            .enumerate()
            .all(|(i, &k)| k == i as f64 / intervals as f64)
            .then_some(intervals);
        Ok(Self { thresholds, uniform })
    }

    /// `points` evenly spaced thresholds from 0 to 1.
    pub fn uniform(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidSchedule("need at least 2 thresholds"));
        }
        let intervals = points - 1;
        Self::new((0..points).map(|i| i as f64 / intervals as f64).collect())
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn points(&self) -> usize {
        self.thresholds.len()
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.thresholds.len() - 1
    }

    pub fn interior(&self) -> &[f64] {
        &self.thresholds[1..self.thresholds.len() - 1]
    }

    /// Trapezoidal integral of `values` sampled at the thresholds.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.thresholds.len(), "curve not aligned to schedule");
        match self.uniform {
            Some(intervals) => {
                let interior: f64 = values[1..intervals].iter().sum();
                (interior + (values[0] + values[intervals]) / 2.0) / intervals as f64
            }
            None => trapezoid(&self.thresholds, values),
        }
    }
}

impl Default for PerturbationSchedule {
    /// The 11-point grid `{0.0, 0.1, ..., 1.0}`.
    fn default() -> Self {
        Self::uniform(11).expect("11 points is a valid schedule")
    }
}

/// Trapezoidal rule over paired samples.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    assert!(x.len() == y.len() && x.len() >= 2, "inputs must align");
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

/// `(k, score)` samples aligned with a schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(_, s)| s)
    }
}

/// Area under a curve. Uniform grids use the exact `i / K` trapezoid form, so
/// a constant curve `c` integrates to `c` without drift.
pub fn auc(curve: &Curve) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = curve.points.iter().copied().unzip();
    match PerturbationSchedule::new(x.clone()) {
        Ok(schedule) => schedule.integrate(&y),
        Err(_) => trapezoid(&x, &y),
    }
}

/// Insertion AUC minus deletion AUC, in `[-1, 1]`.
pub fn srg(insertion_auc: f64, deletion_auc: f64) -> f64 {
    insertion_auc - deletion_auc
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnimodalResult {
    pub modality: Modality,
    pub deletion: Curve,
    pub insertion: Curve,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
    pub srg: f64,
}

/// Mask with `modality` restricted to `keep` and the other modality untouched.
pub(crate) fn mask_with(
    instance: &MultimodalInstance,
    modality: Modality,
    keep: FeatureBits,
    other_present: bool,
) -> MultimodalMask {
    let other_len = instance.len(modality.other());
    let other = if other_present {
        FeatureBits::ones(other_len)
    } else {
        FeatureBits::zeros(other_len)
    };
    match modality {
        Modality::Visual => MultimodalMask { visual: keep, textual: other },
        Modality::Textual => MultimodalMask { visual: other, textual: keep },
    }
}

/// Deletion `f(I \ I_k, T)` and insertion `f(I_empty ∪ I_k, T)` curves for one
/// modality, the other modality held at its original value.
pub fn unimodal_curves<V: ValueFunction>(
    memo: &mut MemoEvaluator<V>,
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    schedule: &PerturbationSchedule,
    modality: Modality,
) -> Result<UnimodalResult> {
    attr.check_bound(instance)?;
    let len = instance.len(modality);
    let ranking = attr.ranking(modality);
    let mut deletion = Vec::with_capacity(schedule.points());
    let mut insertion = Vec::with_capacity(schedule.points());
    for &k in schedule.thresholds() {
        let top = &ranking[..top_k_count(k, len)];
        let mut removed = FeatureBits::ones(len);
        top.iter().for_each(|&i| removed.set(i, false));
        let revealed = FeatureBits::from_indices(len, top.iter().copied());

        let del_mask = mask_with(instance, modality, removed, true);
        let ins_mask = mask_with(instance, modality, revealed, true);
        let del = memo.score(instance, &del_mask).map_err(|source| Error::Evaluation {
            context: format!("{modality} deletion at k = {k}"),
            source,
        })?;
        let ins = memo.score(instance, &ins_mask).map_err(|source| Error::Evaluation {
            context: format!("{modality} insertion at k = {k}"),
            source,
        })?;
        deletion.push((k, del));
        insertion.push((k, ins));
    }
    let deletion = Curve { points: deletion };
    let insertion = Curve { points: insertion };
    let deletion_auc = schedule.integrate(&deletion.scores().collect::<Vec<_>>());
    let insertion_auc = schedule.integrate(&insertion.scores().collect::<Vec<_>>());
    Ok(UnimodalResult {
        modality,
        deletion,
        insertion,
        deletion_auc,
        insertion_auc,
        srg: srg(insertion_auc, deletion_auc),
    })
}
