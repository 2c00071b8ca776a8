//! Joint and marginal perturbation bounds, Harsanyi-structured synergy curves
//! and the synergistic faithfulness scalar.
//!
//! At each threshold `k` the top-k visual set `I_k` and textual set `T_k` are
//! taken at the same proportion. Deletion bounds remove them from the full
//! input, insertion bounds reveal them from the joint zero-state:
//!
//! ```text
//! syn_del(k) = f(I\I_k, T\T_k) - f(I\I_k, T) - f(I, T\T_k) + f(I, T)
//! syn_ins(k) = f(I_k, T_k)     - f(I_k, ∅)   - f(∅, T_k)   + f(∅, ∅)
//! F_syn      = (∫ syn_ins dk + ∫ syn_del dk) / 2
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::game::{MemoEvaluator, ValueFunction};
use crate::mask::{FeatureBits, Modality, MultimodalInstance, MultimodalMask};
use crate::perturb::{top_k_count, unimodal_curves, AttributionMap, PerturbationSchedule, UnimodalResult};
use crate::stats::EvaluationRecord;

/// The six scores evaluated at one threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SixBounds {
    pub del_joint: f64,
    pub del_img: f64,
    pub del_txt: f64,
    pub ins_joint: f64,
    pub ins_img: f64,
    pub ins_txt: f64,
}

impl SixBounds {
    pub fn syn_del(&self, f_full: f64) -> f64 {
        self.del_joint - self.del_img - self.del_txt + f_full
    }

    pub fn syn_ins(&self, f_empty: f64) -> f64 {
        self.ins_joint - self.ins_img - self.ins_txt + f_empty
    }
}

struct TopK {
    visual_removed: FeatureBits,
    textual_removed: FeatureBits,
    visual_only: FeatureBits,
    textual_only: FeatureBits,
}

fn top_k_masks(instance: &MultimodalInstance, rankings: &[Vec<usize>; 2], k: f64) -> TopK {
    let build = |modality: Modality, ranking: &[usize]| {
        let len = instance.len(modality);
        let top = &ranking[..top_k_count(k, len)];
        let mut removed = FeatureBits::ones(len);
        top.iter().for_each(|&i| removed.set(i, false));
        (removed, FeatureBits::from_indices(len, top.iter().copied()))
    };
    let (visual_removed, visual_only) = build(Modality::Visual, &rankings[0]);
    let (textual_removed, textual_only) = build(Modality::Textual, &rankings[1]);
    TopK {
        visual_removed,
        textual_removed,
        visual_only,
        textual_only,
    }
}

fn bounds_at<V: ValueFunction>(
    memo: &mut MemoEvaluator<V>,
    instance: &MultimodalInstance,
    rankings: &[Vec<usize>; 2],
    k: f64,
) -> Result<SixBounds> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::InvalidThreshold(k));
    }
    let top = top_k_masks(instance, rankings, k);
    let full_v = FeatureBits::ones(instance.patches());
    let full_t = FeatureBits::ones(instance.tokens());
    let zero_v = FeatureBits::zeros(instance.patches());
    let zero_t = FeatureBits::zeros(instance.tokens());

    let mut eval = |name: &str, visual: &FeatureBits, textual: &FeatureBits| {
        let mask = MultimodalMask {
            visual: visual.clone(),
            textual: textual.clone(),
        };
        memo.score(instance, &mask).map_err(|source| Error::Evaluation {
            context: format!("{name} at k = {k}"),
            source,
        })
    };
    Ok(SixBounds {
        del_joint: eval("del_joint", &top.visual_removed, &top.textual_removed)?,
        del_img: eval("del_img", &top.visual_removed, &full_t)?,
        del_txt: eval("del_txt", &full_v, &top.textual_removed)?,
        ins_joint: eval("ins_joint", &top.visual_only, &top.textual_only)?,
        ins_img: eval("ins_img", &top.visual_only, &zero_t)?,
        ins_txt: eval("ins_txt", &zero_v, &top.textual_only)?,
    })
}

fn rankings(attr: &AttributionMap) -> [Vec<usize>; 2] {
    [attr.ranking(Modality::Visual), attr.ranking(Modality::Textual)]
}

/// The six joint and marginal bounds at threshold `k`.
///
/// Marginal insertions run against the other modality's zero-state.
pub fn six_bounds<V: ValueFunction>(
    memo: &mut MemoEvaluator<V>,
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    k: f64,
) -> Result<SixBounds> {
    attr.check_bound(instance)?;
    bounds_at(memo, instance, &rankings(attr), k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynergyTrace {
    pub thresholds: Vec<f64>,
    pub bounds: Vec<SixBounds>,
    pub syn_del: Vec<f64>,
    pub syn_ins: Vec<f64>,
    /// `f(I, T)`
    pub f_full: f64,
    /// `f(I_empty, T_empty)`
    pub f_empty: f64,
    pub auc_ins: f64,
    pub auc_del: f64,
    pub f_syn: f64,
    /// Distinct value-function evaluations spent on this trace.
    pub distinct_calls: usize,
}

impl SynergyTrace {
    /// Upper bound `6K + 2` on distinct calls for a `K`-interval schedule.
    pub fn call_bound(intervals: usize) -> usize {
        6 * intervals + 2
    }
}

/// Full synergy trace on an existing memo. `f(I,T)` and `f(∅,∅)` are the
/// `k = 0` bounds, so the trace costs at most `6K + 2` distinct calls.
pub fn synergy_trace<V: ValueFunction>(
    memo: &mut MemoEvaluator<V>,
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    schedule: &PerturbationSchedule,
) -> Result<SynergyTrace> {
    attr.check_bound(instance)?;
    let before = memo.distinct_calls();
    let ranks = rankings(attr);
    let bounds = schedule
        .thresholds()
        .iter()
        .map(|&k| bounds_at(memo, instance, &ranks, k))
        .collect::<Result<Vec<_>>>()?;

    let f_full = bounds[0].del_joint;
    let f_empty = bounds[0].ins_joint;
    let syn_del: Vec<f64> = bounds.iter().map(|b| b.syn_del(f_full)).collect();
    let syn_ins: Vec<f64> = bounds.iter().map(|b| b.syn_ins(f_empty)).collect();
    let auc_del = schedule.integrate(&syn_del);
    let auc_ins = schedule.integrate(&syn_ins);
    Ok(SynergyTrace {
        thresholds: schedule.thresholds().to_vec(),
        bounds,
        syn_del,
        syn_ins,
        f_full,
        f_empty,
        auc_ins,
        auc_del,
        f_syn: (auc_ins + auc_del) / 2.0,
        distinct_calls: memo.distinct_calls() - before,
    })
}

/// [`synergy_trace`] with a fresh memo.
pub fn synergy_curves<V: ValueFunction + ?Sized>(
    vf: &V,
    instance: &MultimodalInstance,
    attr: &AttributionMap,
    schedule: &PerturbationSchedule,
) -> Result<SynergyTrace> {
    synergy_trace(&mut MemoEvaluator::new(vf), instance, attr, schedule)
}

/// Everything computed for one (instance, explainer) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceEvaluation {
    pub record: EvaluationRecord,
    pub trace: SynergyTrace,
    pub visual: UnimodalResult,
    pub textual: UnimodalResult,
}

/// Dataset and model labels attached to a record.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordLabels {
    pub dataset: String,
    pub model: String,
}

/// Synergy trace plus both unimodal metric sets for one explainer.
pub fn evaluate_instance<V: ValueFunction + ?Sized>(
    vf: &V,
    labels: &RecordLabels,
    instance: &MultimodalInstance,
    explainer: &str,
    attr: &AttributionMap,
    schedule: &PerturbationSchedule,
) -> Result<InstanceEvaluation> {
    let mut memo = MemoEvaluator::new(vf);
    let trace = synergy_trace(&mut memo, instance, attr, schedule)?;
    let visual = unimodal_curves(&mut memo, instance, attr, schedule, Modality::Visual)?;
    let textual = unimodal_curves(&mut memo, instance, attr, schedule, Modality::Textual)?;
    let record = EvaluationRecord {
        dataset: labels.dataset.clone(),
        model: labels.model.clone(),
        instance_id: instance.id().to_string(),
        explainer: explainer.to_string(),
        f_syn: trace.f_syn,
        auc_syn_ins: trace.auc_ins,
        auc_syn_del: trace.auc_del,
        srg_visual: visual.srg,
        srg_textual: textual.srg,
        ins_visual: visual.insertion_auc,
        del_visual: visual.deletion_auc,
        ins_textual: textual.insertion_auc,
        del_textual: textual.deletion_auc,
        fsyn_calls: trace.distinct_calls,
        call_count: memo.distinct_calls(),
    };
    Ok(InstanceEvaluation {
        record,
        trace,
        visual,
        textual,
    })
}

/// One instance of a corpus together with its value function.
pub struct CorpusEntry<V> {
    pub instance: MultimodalInstance,
    pub labels: RecordLabels,
    pub vf: V,
}

/// A pair that produced no record, with the reason.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub instance_id: String,
    pub explainer: String,
    pub reason: String,
    /// The value function broke the scoring contract.
    pub protocol: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusOutcome {
    pub evaluations: Vec<InstanceEvaluation>,
    pub skipped: Vec<Skipped>,
}

/// Attribution maps keyed by `(instance id, explainer)`.
pub type AttributionIndex = BTreeMap<(String, String), AttributionMap>;

/// Evaluates one (entry, explainer) pair, turning failures into a skip.
pub fn evaluate_pair<V: ValueFunction>(
    entry: &CorpusEntry<V>,
    explainer: &str,
    attributions: &AttributionIndex,
    schedule: &PerturbationSchedule,
) -> core::result::Result<InstanceEvaluation, Skipped> {
    let id = entry.instance.id();
    let skip = |reason: String, protocol: bool| Skipped {
        instance_id: id.to_string(),
        explainer: explainer.to_string(),
        reason,
        protocol,
    };
    let attr = attributions
        .get(&(id.to_string(), explainer.to_string()))
        .ok_or_else(|| skip("missing attribution".into(), false))?;
    evaluate_instance(&entry.vf, &entry.labels, &entry.instance, explainer, attr, schedule).map_err(|e| {
        let protocol = matches!(&e, Error::Evaluation { source, .. } if source.is_protocol());
        skip(e.to_string(), protocol)
    })
}

/// Sequential corpus run. Output is ordered by `(instance id, explainer)`
/// regardless of input order.
pub fn fsyn_corpus<V: ValueFunction>(
    entries: &[CorpusEntry<V>],
    explainers: &[String],
    attributions: &AttributionIndex,
    schedule: &PerturbationSchedule,
) -> CorpusOutcome {
    let mut outcome = CorpusOutcome::default();
    for entry in entries {
        for explainer in explainers {
            match evaluate_pair(entry, explainer, attributions, schedule) {
                Ok(e) => outcome.evaluations.push(e),
                Err(s) => outcome.skipped.push(s),
            }
        }
    }
    outcome.sort();
    outcome
}

impl CorpusOutcome {
    pub fn sort(&mut self) {
        self.evaluations.sort_by(|a, b| {
            (&a.record.instance_id, &a.record.explainer).cmp(&(&b.record.instance_id, &b.record.explainer))
        });
        self.skipped
            .sort_by(|a, b| (&a.instance_id, &a.explainer).cmp(&(&b.instance_id, &b.explainer)));
    }

    pub fn records(&self) -> Vec<EvaluationRecord> {
        self.evaluations.iter().map(|e| e.record.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_synthetic, SyntheticKind, SyntheticModelSpec};
    use alloc::vec;

    fn oracle(m: usize, n: usize, kv: &[usize], kt: &[usize]) -> AttributionMap {
        AttributionMap::new(
            (0..m).map(|i| if kv.contains(&i) { 1.0 } else { 0.0 }).collect(),
            (0..n).map(|j| if kt.contains(&j) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn k_zero_collapses_to_anchors() {
        let i = MultimodalInstance::new("a", 5, 4).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::WeightedMixed, &i, 9), &i).unwrap();
        let attr = oracle(5, 4, &[1], &[2]);
        let mut memo = MemoEvaluator::new(&vf);
        let b = six_bounds(&mut memo, &i, &attr, 0.0).unwrap();
        let full = vf.evaluate(&i, &MultimodalMask::full(&i)).unwrap();
        let empty = vf.evaluate(&i, &MultimodalMask::empty(&i)).unwrap();
        assert_eq!([b.del_joint, b.del_img, b.del_txt], [full; 3]);
        assert_eq!([b.ins_joint, b.ins_img, b.ins_txt], [empty; 3]);
        assert_eq!(memo.distinct_calls(), 2);
        assert_eq!(b.syn_del(full), 0.0);
        assert_eq!(b.syn_ins(empty), 0.0);
    }

    #[test]
    fn and_synergy_bounds_at_half() {
        let i = MultimodalInstance::new("a", 4, 4).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::new(SyntheticKind::AndSynergy, vec![2], vec![1], 0), &i).unwrap();
        let mut memo = MemoEvaluator::new(&vf);
        let b = six_bounds(&mut memo, &i, &oracle(4, 4, &[2], &[1]), 0.5).unwrap();
        assert_eq!(
            [b.del_joint, b.del_img, b.del_txt, b.ins_joint, b.ins_img, b.ins_txt],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn or_redundant_bounds_at_one() {
        let i = MultimodalInstance::new("a", 3, 2).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::OrRedundant, &i, 0), &i).unwrap();
        let mut memo = MemoEvaluator::new(&vf);
        let b = six_bounds(&mut memo, &i, &oracle(3, 2, &[0, 1, 2], &[0, 1]), 1.0).unwrap();
        assert_eq!(
            [b.del_joint, b.del_img, b.del_txt, b.ins_joint, b.ins_img, b.ins_txt],
            [0.0, 1.0, 1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn invalid_threshold_rejected() {
        let i = MultimodalInstance::new("a", 1, 1).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::Additive, &i, 0), &i).unwrap();
        let mut memo = MemoEvaluator::new(&vf);
        assert_eq!(
            six_bounds(&mut memo, &i, &oracle(1, 1, &[0], &[0]), -0.1).unwrap_err(),
            Error::InvalidThreshold(-0.1)
        );
    }

    #[test]
    fn and_synergy_fsyn() {
        let i = MultimodalInstance::new("a", 8, 6).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::new(SyntheticKind::AndSynergy, vec![5], vec![0], 0), &i).unwrap();
        let t = synergy_curves(&vf, &i, &oracle(8, 6, &[5], &[0]), &PerturbationSchedule::default()).unwrap();
        assert_eq!(t.syn_del[0], 0.0);
        assert_eq!(t.syn_ins[0], 0.0);
        assert!(t.syn_del[1..].iter().chain(&t.syn_ins[1..]).all(|&s| s == 1.0));
        assert_eq!(t.auc_del, 0.95);
        assert_eq!(t.auc_ins, 0.95);
        assert_eq!(t.f_syn, 0.95);
        assert!(t.distinct_calls <= 62);
    }

    #[test]
    fn or_redundant_fsyn_single_feature() {
        let i = MultimodalInstance::new("a", 1, 1).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::OrRedundant, &i, 0), &i).unwrap();
        let t = synergy_curves(&vf, &i, &oracle(1, 1, &[0], &[0]), &PerturbationSchedule::default()).unwrap();
        assert!(t.syn_del[1..].iter().chain(&t.syn_ins[1..]).all(|&s| s == -1.0));
        assert_eq!(t.f_syn, -0.95);
        // Only four masks exist.
        assert_eq!(t.distinct_calls, 4);
    }

    #[test]
    fn or_redundant_full_keys_on_larger_instance() {
        // Insertion synergy only appears at k = 1, when both modalities are complete.
        let i = MultimodalInstance::new("a", 10, 10).unwrap();
        let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::OrRedundant, &i, 0), &i).unwrap();
        let keys: Vec<usize> = (0..10).collect();
        let t = synergy_curves(&vf, &i, &oracle(10, 10, &keys, &keys), &PerturbationSchedule::default()).unwrap();
        assert_eq!(t.auc_del, -0.95);
        assert_eq!(t.auc_ins, -0.05);
        assert_eq!(t.f_syn, -0.5);
    }

    #[test]
    fn failing_bound_is_named() {
        struct Failing;
        impl ValueFunction for Failing {
            fn evaluate(&self, _: &MultimodalInstance, m: &MultimodalMask) -> Result<f64, crate::EvalError> {
                if m.visual.count_ones() == 0 && m.textual.count_ones() > 0 {
                    Err(crate::EvalError::Backend("boom".into()))
                } else {
                    Ok(0.5)
                }
            }
        }
        let i = MultimodalInstance::new("a", 2, 2).unwrap();
        let err = synergy_curves(&Failing, &i, &oracle(2, 2, &[0], &[0]), &PerturbationSchedule::default()).unwrap_err();
        match err {
            Error::Evaluation { context, .. } => assert_eq!(context, "ins_txt at k = 0.1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corpus_orders_and_skips() {
        let mk = |id: &str| {
            let instance = MultimodalInstance::new(id, 3, 3).unwrap();
            let vf = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::Additive, &instance, 0), &instance).unwrap();
            CorpusEntry { instance, labels: RecordLabels::default(), vf }
        };
        let entries = vec![mk("b"), mk("a")];
        let mut attrs = AttributionIndex::new();
        for id in ["a", "b"] {
            attrs.insert((id.into(), "x".into()), oracle(3, 3, &[0], &[0]));
        }
        attrs.insert(("a".into(), "y".into()), oracle(3, 3, &[1], &[1]));
        let explainers = vec!["y".to_string(), "x".to_string()];
        let out = fsyn_corpus(&entries, &explainers, &attrs, &PerturbationSchedule::default());
        let keys: Vec<_> = out.evaluations.iter().map(|e| (e.record.instance_id.as_str(), e.record.explainer.as_str())).collect();
        assert_eq!(keys, [("a", "x"), ("a", "y"), ("b", "x")]);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].instance_id, "b");
        assert_eq!(out.skipped[0].reason, "missing attribution");
        assert!(fsyn_corpus::<crate::game::SyntheticModel>(&[], &explainers, &attrs, &PerturbationSchedule::default())
            .evaluations
            .is_empty());
    }
}
