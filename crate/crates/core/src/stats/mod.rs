//! Rank correlations, paired significance tests, mean-rank analysis and the
//! crossed random-intercept linear mixed model.

mod dist;
mod lmm;
mod rank;
mod simulate;
mod wilcoxon;

pub use dist::{normal_cdf, normal_two_sided, regularized_beta, student_t_two_sided};
pub use lmm::{
    fit_lmm, lmm_fit, FixedEffect, LmmFit, LmmOptions, LmmProblem, RandomFactor, RandomFactorKind,
    VarianceComponent, INTERCEPT,
};
pub use rank::{
    explainer_means, kendall_tau, mean_ranks, midranks, rank_agreement, spearman_rho, KendallResult,
    MeanRanks, SpearmanResult, EXACT_KENDALL_MAX,
};
pub use simulate::{simulate_planted, PlantedDesign};
pub use wilcoxon::{bonferroni, compare_against_best, wilcoxon_signed_rank, PairwiseComparison, WilcoxonResult, EXACT_WILCOXON_MAX};

use alloc::string::String;

/// One (dataset, model, instance, explainer) row of metric scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationRecord {
    pub dataset: String,
    pub model: String,
    pub instance_id: String,
    pub explainer: String,
    pub f_syn: f64,
    pub auc_syn_ins: f64,
    pub auc_syn_del: f64,
    pub srg_visual: f64,
    pub srg_textual: f64,
    pub ins_visual: f64,
    pub del_visual: f64,
    pub ins_textual: f64,
    pub del_textual: f64,
    /// Distinct value-function calls spent on the synergy trace.
    pub fsyn_calls: usize,
    /// Distinct value-function calls for the whole record.
    pub call_count: usize,
}

/// Scalar columns of an [`EvaluationRecord`], named as in long-format files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    FSyn,
    AucSynIns,
    AucSynDel,
    SrgVisual,
    SrgTextual,
    InsVisual,
    DelVisual,
    InsTextual,
    DelTextual,
    FsynCalls,
    CallCount,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::FSyn,
        Metric::AucSynIns,
        Metric::AucSynDel,
        Metric::SrgVisual,
        Metric::SrgTextual,
        Metric::InsVisual,
        Metric::DelVisual,
        Metric::InsTextual,
        Metric::DelTextual,
        Metric::FsynCalls,
        Metric::CallCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FSyn => "f_syn",
            Metric::AucSynIns => "auc_syn_ins",
            Metric::AucSynDel => "auc_syn_del",
            Metric::SrgVisual => "srg_visual",
            Metric::SrgTextual => "srg_textual",
            Metric::InsVisual => "ins_auc_visual",
            Metric::DelVisual => "del_auc_visual",
            Metric::InsTextual => "ins_auc_textual",
            Metric::DelTextual => "del_auc_textual",
            Metric::FsynCalls => "fsyn_calls",
            Metric::CallCount => "call_count",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn is_count(self) -> bool {
        matches!(self, Metric::FsynCalls | Metric::CallCount)
    }
}

impl EvaluationRecord {
    /// Record with every metric zeroed.
    pub fn empty(dataset: &str, model: &str, instance_id: &str, explainer: &str) -> Self {
        Self {
            dataset: dataset.into(),
            model: model.into(),
            instance_id: instance_id.into(),
            explainer: explainer.into(),
            f_syn: 0.0,
            auc_syn_ins: 0.0,
            auc_syn_del: 0.0,
            srg_visual: 0.0,
            srg_textual: 0.0,
            ins_visual: 0.0,
            del_visual: 0.0,
            ins_textual: 0.0,
            del_textual: 0.0,
            fsyn_calls: 0,
            call_count: 0,
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::FSyn => self.f_syn,
            Metric::AucSynIns => self.auc_syn_ins,
            Metric::AucSynDel => self.auc_syn_del,
            Metric::SrgVisual => self.srg_visual,
            Metric::SrgTextual => self.srg_textual,
            Metric::InsVisual => self.ins_visual,
            Metric::DelVisual => self.del_visual,
            Metric::InsTextual => self.ins_textual,
            Metric::DelTextual => self.del_textual,
            Metric::FsynCalls => self.fsyn_calls as f64,
            Metric::CallCount => self.call_count as f64,
        }
    }

    /// Sets a metric; counts are truncated to integers.
    pub fn set(&mut self, metric: Metric, value: f64) {
        match metric {
            Metric::FSyn => self.f_syn = value,
            Metric::AucSynIns => self.auc_syn_ins = value,
            Metric::AucSynDel => self.auc_syn_del = value,
            Metric::SrgVisual => self.srg_visual = value,
            Metric::SrgTextual => self.srg_textual = value,
            Metric::InsVisual => self.ins_visual = value,
            Metric::DelVisual => self.del_visual = value,
            Metric::InsTextual => self.ins_textual = value,
            Metric::DelTextual => self.del_textual = value,
            Metric::FsynCalls => self.fsyn_calls = value as usize,
            Metric::CallCount => self.call_count = value as usize,
        }
    }

    /// The unit within which explainers are ranked against each other.
    pub fn unit(&self) -> (&str, &str, &str) {
        (&self.dataset, &self.model, &self.instance_id)
    }
}
