use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::dist::{normal_two_sided, student_t_two_sided};
use super::{EvaluationRecord, Metric};
use crate::error::{Error, Result};

/// Largest sample for which Kendall's p-value is found by enumerating every
/// permutation of `y`.
pub const EXACT_KENDALL_MAX: usize = 10;

/// 1-based ranks, ties sharing the average of the positions they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, found: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite input"));
    }
    Ok(())
}

fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

// Concordant minus discordant pairs; pairs tied in either variable count zero.
fn kendall_s(x: &[f64], y: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += sign(x[j] - x[i]) * sign(y[j] - y[i]);
        }
    }
    s
}

// Tie group sizes.
fn ties(values: &[f64]) -> Vec<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let end = start + sorted[start..].iter().take_while(|&&v| v == sorted[start]).count();
        if end - start > 1 {
            groups.push((end - start) as u64);
        }
        start = end;
    }
    groups
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KendallResult {
    /// Tau-b, corrected for ties.
    pub tau: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Whether the p-value came from full permutation enumeration.
    pub exact: bool,
}

/// Kendall's tau-b with a two-sided p-value, exact for `n <= 10`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<KendallResult> {
    check_paired(x, y)?;
    let n = x.len() as u64;
    let pairs = n * (n - 1) / 2;
    let tie_pairs = |t: &[u64]| t.iter().map(|t| t * (t - 1) / 2).sum::<u64>();
    let (tx, ty) = (ties(x), ties(y));
    let denom = libm::sqrt((pairs - tie_pairs(&tx)) as f64 * (pairs - tie_pairs(&ty)) as f64);
    if denom == 0.0 {
        return Err(Error::ConstantInput);
    }
    let s = kendall_s(x, y);
    let tau = s as f64 / denom;

    if x.len() <= EXACT_KENDALL_MAX {
        let p_value = exact_kendall_p(x, y, s.abs());
        return Ok(KendallResult { tau, p_value, exact: true });
    }

    let nf = n as f64;
    let sum = |t: &[u64], f: &dyn Fn(f64) -> f64| t.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(&tx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&ty, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&tx, &|t| t * (t - 1.0)) * sum(&ty, &|t| t * (t - 1.0)) / (2.0 * nf * (nf - 1.0));
    let v2 = sum(&tx, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&ty, &|t| t * (t - 1.0) * (t - 2.0))
        / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let p_value = normal_two_sided(s as f64 / libm::sqrt(var));
    Ok(KendallResult { tau, p_value, exact: false })
}

// Fraction of the n! orderings of y whose |S| reaches the observed |S|.
fn exact_kendall_p(x: &[f64], y: &[f64], observed: i64) -> f64 {
    let n = y.len();
    let mut perm = y.to_vec();
    let mut c = alloc::vec![0usize; n];
    let (mut hits, mut total) = (0u64, 0u64);
    let mut visit = |p: &[f64]| {
        total += 1;
        if kendall_s(x, p).abs() >= observed {
            hits += 1;
        }
    };
    // Heap's algorithm.
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided, from the t approximation with `n - 2` degrees of freedom.
    pub p_value: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    check_paired(x, y)?;
    let rho = pearson(&midranks(x), &midranks(y))?;
    let df = (x.len() - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        student_t_two_sided(rho * libm::sqrt(df / (1.0 - rho * rho)), df)
    };
    Ok(SpearmanResult { rho, p_value })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanRanks {
    /// `(explainer, mean rank)` sorted by explainer; rank 1 is best.
    pub ranks: Vec<(String, f64)>,
    pub instances_used: usize,
    /// Units lacking at least one explainer.
    pub instances_excluded: usize,
}

impl MeanRanks {
    /// Explainer with the lowest mean rank; ties go to the first name.
    pub fn best(&self) -> Option<&str> {
        self.ranks
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(e, _)| e.as_str())
    }
}

type Unit<'a> = (&'a str, &'a str, &'a str);
type UnitScores<'a> = (Unit<'a>, BTreeMap<&'a str, f64>);

/// Per-unit scores of complete units: `(unit, explainer -> score)`.
pub(crate) fn complete_units<'a>(
    records: &'a [EvaluationRecord],
    metric: Metric,
) -> (Vec<String>, Vec<UnitScores<'a>>, usize) {
    let explainers: BTreeSet<&str> = records.iter().map(|r| r.explainer.as_str()).collect();
    let mut units: BTreeMap<Unit<'a>, BTreeMap<&'a str, f64>> = BTreeMap::new();
    for r in records {
        units.entry(r.unit()).or_default().insert(&r.explainer, r.get(metric));
    }
    let total = units.len();
    let complete: Vec<_> = units.into_iter().filter(|(_, s)| s.len() == explainers.len()).collect();
    let excluded = total - complete.len();
    (explainers.into_iter().map(String::from).collect(), complete, excluded)
}

/// Mean within-unit rank of every explainer, scores ranked descending.
///
/// A unit is a `(dataset, model, instance)` triple; units missing any
/// explainer are excluded and counted.
pub fn mean_ranks(records: &[EvaluationRecord], metric: Metric) -> MeanRanks {
    let (explainers, units, excluded) = complete_units(records, metric);
    let mut sums = alloc::vec![0.0; explainers.len()];
    for (_, scores) in &units {
        // Negate so the highest score gets rank 1.
        let negated: Vec<f64> = scores.values().map(|s| -s).collect();
        for (sum, rank) in sums.iter_mut().zip(midranks(&negated)) {
            *sum += rank;
        }
    }
    let used = units.len();
    MeanRanks {
        ranks: explainers
            .into_iter()
            .zip(sums)
            .map(|(e, s)| (e, if used == 0 { f64::NAN } else { s / used as f64 }))
            .collect(),
        instances_used: used,
        instances_excluded: excluded,
    }
}

/// Mean metric per explainer, sorted by explainer.
pub fn explainer_means(records: &[EvaluationRecord], metric: Metric) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(&r.explainer).or_default();
        e.0 += r.get(metric);
        e.1 += 1;
    }
    acc.into_iter().map(|(e, (s, n))| (e.into(), s / n as f64)).collect()
}

/// Kendall agreement between the explainer orderings induced by two metrics.
pub fn rank_agreement(records: &[EvaluationRecord], a: Metric, b: Metric) -> Result<KendallResult> {
    let x: Vec<f64> = explainer_means(records, a).into_iter().map(|(_, v)| v).collect();
    let y: Vec<f64> = explainer_means(records, b).into_iter().map(|(_, v)| v).collect();
    kendall_tau(&x, &y)
}
