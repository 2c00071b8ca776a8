use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::dist::normal_two_sided;
use super::rank::{complete_units, mean_ranks, midranks};
use super::{EvaluationRecord, Metric};
use crate::error::{Error, Result};

/// Largest effective sample with an exact null distribution.
pub const EXACT_WILCOXON_MAX: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    /// Pairs left after dropping zero differences.
    pub effective_n: usize,
    pub exact: bool,
    /// Every difference was zero; `p = 1` by convention.
    pub degenerate: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped before ranking. The null distribution is
/// enumerated exactly up to [`EXACT_WILCOXON_MAX`] pairs; beyond that a
/// tie-corrected normal approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], comparisons: usize) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite difference"));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            p_raw: 1.0,
            p_bonferroni: 1.0,
            effective_n: 0,
            exact: true,
            degenerate: true,
        });
    }

    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    let (p_raw, exact) = if n <= EXACT_WILCOXON_MAX {
        (exact_p(&ranks, statistic), true)
    } else {
        let nf = n as f64;
        let tie_term: f64 = tie_sizes(&ranks).map(|t| t * t * t - t).sum::<f64>() / 48.0;
        let sd = libm::sqrt(nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term);
        let z = ((w_plus - total / 2.0).abs() - 0.5).max(0.0) / sd;
        (normal_two_sided(z), false)
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        p_raw,
        p_bonferroni: bonferroni(p_raw, comparisons),
        effective_n: n,
        exact,
        degenerate: false,
    })
}

/// `min(1, p * comparisons)`.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons.max(1) as f64).min(1.0)
}

fn tie_sizes(ranks: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let len = sorted[start..].iter().take_while(|&&r| r == sorted[start]).count();
        groups.push(len as f64);
        start += len;
    }
    groups.into_iter()
}

// Distribution of W+ over all 2^n sign assignments, on doubled ranks so that
// half-integer mid-ranks stay integral.
fn exact_p(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
    let top: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; top + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for w in (0..=reach).rev() {
            let c = counts[w];
            if c != 0.0 {
                counts[w + r] += c;
            }
        }
        reach += r;
    }
    let assignments = libm::ldexp(1.0, ranks.len() as i32);
    let sum: f64 = counts.iter().sum();
    assert_eq!(sum, assignments, "null distribution must cover every sign assignment");
    let limit = libm::round(2.0 * statistic) as usize;
    let tail: f64 = counts[..=limit].iter().sum();
    (2.0 * tail / assignments).min(1.0)
}

/// Wilcoxon test of one explainer against the best-ranked one.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseComparison {
    pub best: String,
    pub other: String,
    pub result: WilcoxonResult,
}

/// Pairs every other explainer with the best mean-ranked one over complete
/// units, Bonferroni-corrected for the number of comparisons.
pub fn compare_against_best(records: &[EvaluationRecord], metric: Metric) -> Result<Vec<PairwiseComparison>> {
    let ranks = mean_ranks(records, metric);
    let best = match ranks.best() {
        Some(b) => String::from(b),
        None => return Ok(Vec::new()),
    };
    let (explainers, units, _) = complete_units(records, metric);
    let comparisons = explainers.len().saturating_sub(1);
    let best_scores: Vec<f64> = units.iter().map(|(_, s)| s[best.as_str()]).collect();
    explainers
        .iter()
        .filter(|e| **e != best)
        .map(|other| {
            let scores: Vec<f64> = units.iter().map(|(_, s)| s[other.as_str()]).collect();
            Ok(PairwiseComparison {
                best: best.clone(),
                other: other.clone(),
                result: wilcoxon_signed_rank(&best_scores, &scores, comparisons)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_are_degenerate() {
        let r = wilcoxon_signed_rank(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], 3).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_raw, 1.0);
        assert_eq!(r.p_bonferroni, 1.0);
    }

    #[test]
    fn all_positive_five() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 5], 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.p_raw, 2.0 / 32.0);
        assert!(r.exact);
    }

    #[test]
    fn bonferroni_scaling() {
        // Eight pairs, one negative with rank 2. Sign subsets with W <= 2 are
        // {}, {1} and {2}, so P(W <= 2) = 3 / 256.
        let a = [1.0, -2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 8], 8).unwrap();
        assert_eq!(r.statistic, 2.0);
        assert_eq!(r.p_raw, 6.0 / 256.0);
        assert_eq!(r.p_bonferroni, 48.0 / 256.0);
        assert!((bonferroni(0.02, 8) - 0.16).abs() < 1e-15);
        assert_eq!(bonferroni(0.2, 8), 1.0);
        let r = wilcoxon_signed_rank(&a, &[0.0; 8], 100).unwrap();
        assert_eq!(r.p_bonferroni, 1.0);
    }

    #[test]
    fn zeros_dropped() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 0.0], &[0.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(r.effective_n, 2);
        assert_eq!(r.p_raw, 0.5);
    }

    #[test]
    fn large_sample_normal_approximation() {
        let a: Vec<f64> = (1..=40).map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let r = wilcoxon_signed_rank(&a, &[0.0; 40], 1).unwrap();
        assert!(!r.exact);
        // W- = 3 + 6 + ... + 39 = 273, mu = 410, sd = sqrt(40*41*81/24).
        assert_eq!(r.statistic, 273.0);
        let z = (410.0f64 - 273.0 - 0.5) / (40.0f64 * 41.0 * 81.0 / 24.0).sqrt();
        assert!((r.p_raw - libm::erfc(z / core::f64::consts::SQRT_2)).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn best_explainer_comparisons() {
        let mut records = Vec::new();
        for i in 0..6 {
            for (e, base) in [("attn", 0.3), ("grad", 0.2), ("random", 0.0)] {
                let mut r = EvaluationRecord::empty("d", "m", &alloc::format!("i{i}"), e);
                r.f_syn = base + i as f64 * 0.01;
                records.push(r);
            }
        }
        let cmp = compare_against_best(&records, Metric::FSyn).unwrap();
        assert_eq!(cmp.len(), 2);
        assert!(cmp.iter().all(|c| c.best == "attn"));
        assert_eq!(cmp[0].other, "grad");
        assert_eq!(cmp[0].result.p_raw, 2.0 / 64.0);
        assert_eq!(cmp[0].result.p_bonferroni, 4.0 / 64.0);
    }
}
