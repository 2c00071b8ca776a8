//! The workflows behind each subcommand. Every command reads its inputs,
//! writes deterministic files under the configured output directory and
//! prints a short summary to the supplied writer.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use synfaith_core::corpus::{synthetic_corpus, CorpusSpec};
use synfaith_core::game::SyntheticKind;
use synfaith_core::perturb::PerturbationSchedule;
use synfaith_core::shapley::{sii_ground_truth, validate_surrogate, GroundTruth, SurrogatePair, SurrogateValidation};
use synfaith_core::stats::{
    compare_against_best, explainer_means, lmm_fit, mean_ranks, rank_agreement, simulate_planted, EvaluationRecord,
    LmmFit, LmmOptions, Metric, PlantedDesign, RandomFactorKind,
};
use synfaith_core::synergy::{evaluate_pair, synergy_curves, CorpusEntry, InstanceEvaluation, RecordLabels, Skipped};

use crate::attributions::{load_attributions, AttributionFile, Attributions};
use crate::config::Config;
use crate::error::{AppError, Result};
use crate::manifest::{Binding, BoundModel, CorpusManifest, ManifestEntry, SyntheticJson};
use crate::protocol::ClientOptions;
use crate::records::{fmt_f64, load_records, write_records};

fn io_write(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text).map_err(AppError::io("<stdout>"))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { io_write($out, format_args!("{}\n", format_args!($($arg)*))) };
}

fn output_dir(config: &Config) -> Result<PathBuf> {
    fs::create_dir_all(&config.output_dir).map_err(AppError::io(&config.output_dir))?;
    Ok(config.output_dir.clone())
}

/// Writes an RFC-4180 CSV file.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = fs::File::create(path).map_err(AppError::io(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(header).map_err(AppError::csv(path))?;
    for row in rows {
        w.write_record(&row).map_err(AppError::csv(path))?;
    }
    w.flush().map_err(AppError::io(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(AppError::io(path))
}

fn pool(config: &Config) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| AppError::Validation(format!("cannot build worker pool: {e}")))
}

fn client_options(config: &Config) -> ClientOptions {
    ClientOptions {
        timeout: config.timeout(),
        retries: config.retries,
        max_in_flight: config.max_in_flight,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub instances: usize,
    pub seed: Option<u64>,
    pub kind: SyntheticKind,
    pub dataset: String,
    /// Model label; defaults to the kind name.
    pub model: Option<String>,
    /// Bind entries to the configured remote endpoint instead of inline models.
    pub remote: bool,
    /// Also write a records file drawn from the mixed model with planted effects.
    pub planted: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            instances: 10,
            seed: None,
            kind: SyntheticKind::WeightedMixed,
            dataset: "synthetic".into(),
            model: None,
            remote: false,
            planted: false,
        }
    }
}

/// Generates `manifest.json` and `attributions.json` (and optionally
/// `planted_records.csv`).
pub fn synth(opts: &SynthOptions, config: &Config, out: &mut dyn Write) -> Result<()> {
    let dir = output_dir(config)?;
    let seed = opts.seed.unwrap_or(config.seed);
    let spec = CorpusSpec {
        instances: opts.instances,
        seed,
        kind: opts.kind,
        ..CorpusSpec::default()
    };
    let items = synthetic_corpus(&spec)?;
    let model = opts.model.clone().unwrap_or_else(|| opts.kind.as_str().into());
    let manifest = CorpusManifest {
        entries: items
            .iter()
            .map(|item| ManifestEntry {
                id: item.instance.id().into(),
                m: item.instance.patches(),
                n: item.instance.tokens(),
                dataset: opts.dataset.clone(),
                model: model.clone(),
                binding: if opts.remote {
                    Binding::Remote { endpoint: None }
                } else {
                    Binding::Synthetic(SyntheticJson::from_spec(&item.model))
                },
            })
            .collect(),
    };
    let attributions = AttributionFile::from_maps(
        items
            .iter()
            .flat_map(|item| item.attributions.iter().map(move |(e, a)| (item.instance.id(), e.as_str(), a))),
    );
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("attributions.json"), &attributions)?;
    say!(out, "wrote {} instances x {} explainers to {}", items.len(), spec.explainers.len(), dir.display())?;
    if opts.planted {
        let design = PlantedDesign { seed, ..PlantedDesign::default() };
        let records = simulate_planted(&design);
        let path = dir.join("planted_records.csv");
        let file = fs::File::create(&path).map_err(AppError::io(&path))?;
        write_records(std::io::BufWriter::new(file), &records).map_err(AppError::csv(&path))?;
        say!(out, "wrote {} planted records to {}", records.len(), path.display())?;
    }
    Ok(())
}

struct Corpus {
    entries: Vec<CorpusEntry<BoundModel>>,
    attributions: Attributions,
    schedule: PerturbationSchedule,
}

fn load_corpus(manifest: &Path, attributions: &Path, config: &Config) -> Result<Corpus> {
    let schedule = config.schedule()?;
    let manifest = CorpusManifest::load(manifest)?;
    let attributions = load_attributions(attributions, &manifest)?;
    let models = manifest.resolve(config.endpoint.as_ref(), client_options(config))?;
    let entries = manifest
        .entries
        .iter()
        .zip(models)
        .map(|(e, vf)| {
            Ok(CorpusEntry {
                instance: e.instance()?,
                labels: RecordLabels { dataset: e.dataset.clone(), model: e.model.clone() },
                vf,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { entries, attributions, schedule })
}

impl Corpus {
    /// `(entry index, explainer)` for every attribution, ordered by instance id then explainer.
    fn pairs(&self) -> Vec<(usize, String)> {
        let position: BTreeMap<&str, usize> =
            self.entries.iter().enumerate().map(|(i, e)| (e.instance.id(), i)).collect();
        self.attributions
            .index
            .keys()
            .map(|(id, explainer)| (position[id.as_str()], explainer.clone()))
            .collect()
    }
}

/// Counts reported by `evaluate`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateSummary {
    pub records: Vec<EvaluationRecord>,
    pub skipped: Vec<Skipped>,
    pub max_fsyn_calls: usize,
    pub call_bound: usize,
}

/// Runs all metrics and writes `records.csv`, `curves.csv`, `trace.csv` and `skipped.csv`.
pub fn evaluate(manifest: &Path, attributions: &Path, config: &Config, out: &mut dyn Write) -> Result<EvaluateSummary> {
    let corpus = load_corpus(manifest, attributions, config)?;
    let dir = output_dir(config)?;
    let pairs = corpus.pairs();
    let results: Vec<std::result::Result<InstanceEvaluation, Skipped>> = pool(config)?.install(|| {
        pairs
            .par_iter()
            .map(|(i, explainer)| {
                evaluate_pair(&corpus.entries[*i], explainer, &corpus.attributions.index, &corpus.schedule)
            })
            .collect()
    });
    let mut evaluations = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(e) => evaluations.push(e),
            Err(s) => skipped.push(s),
        }
    }
    let records: Vec<EvaluationRecord> = evaluations.iter().map(|e| e.record.clone()).collect();

    let path = dir.join("records.csv");
    let file = fs::File::create(&path).map_err(AppError::io(&path))?;
    write_records(std::io::BufWriter::new(file), &records).map_err(AppError::csv(&path))?;
    write_curves(&dir.join("curves.csv"), &evaluations)?;
    write_trace(&dir.join("trace.csv"), &evaluations)?;
    write_csv(
        &dir.join("skipped.csv"),
        &["instance_id", "explainer", "protocol", "reason"],
        skipped
            .iter()
            .map(|s| vec![s.instance_id.clone(), s.explainer.clone(), s.protocol.to_string(), s.reason.clone()]),
    )?;

    let max_fsyn_calls = records.iter().map(|r| r.fsyn_calls).max().unwrap_or(0);
    let call_bound = synfaith_core::synergy::SynergyTrace::call_bound(corpus.schedule.intervals());
    say!(
        out,
        "evaluated {} pairs, skipped {}; max F_syn calls {} (bound {}); outputs in {}",
        records.len(),
        skipped.len(),
        max_fsyn_calls,
        call_bound,
        dir.display()
    )?;
    for s in &skipped {
        log::warn!("skipped {} / {}: {}", s.instance_id, s.explainer, s.reason);
    }
    let summary = EvaluateSummary { records, skipped, max_fsyn_calls, call_bound };
    if let Some(s) = summary.skipped.iter().find(|s| s.protocol) {
        return Err(AppError::Protocol(format!(
            "{} pair(s) failed on protocol violations, first {} / {}: {}",
            summary.skipped.iter().filter(|s| s.protocol).count(),
            s.instance_id,
            s.explainer,
            s.reason
        )));
    }
    if let Some(s) = summary.skipped.first() {
        return Err(AppError::Validation(format!(
            "{} pair(s) could not be evaluated, first {} / {}: {}",
            summary.skipped.len(),
            s.instance_id,
            s.explainer,
            s.reason
        )));
    }
    Ok(summary)
}

fn write_curves(path: &Path, evaluations: &[InstanceEvaluation]) -> Result<()> {
    let mut rows = Vec::new();
    for e in evaluations {
        let r = &e.record;
        for result in [&e.visual, &e.textual] {
            for (name, curve) in [("deletion", &result.deletion), ("insertion", &result.insertion)] {
                for (k, score) in &curve.points {
                    rows.push(vec![
                        r.dataset.clone(),
                        r.model.clone(),
                        r.instance_id.clone(),
                        r.explainer.clone(),
                        result.modality.as_str().into(),
                        name.into(),
                        fmt_f64(*k),
                        fmt_f64(*score),
                    ]);
                }
            }
        }
    }
    write_csv(
        path,
        &["dataset", "model", "instance_id", "explainer", "modality", "curve", "k", "score"],
        rows,
    )
}

fn write_trace(path: &Path, evaluations: &[InstanceEvaluation]) -> Result<()> {
    let mut rows = Vec::new();
    for e in evaluations {
        let t = &e.trace;
        let id = &e.record.instance_id;
        let ex = &e.record.explainer;
        for (i, k) in t.thresholds.iter().enumerate() {
            let b = &t.bounds[i];
            rows.push(
                [
                    id.clone(),
                    ex.clone(),
                    fmt_f64(*k),
                    fmt_f64(b.del_joint),
                    fmt_f64(b.del_img),
                    fmt_f64(b.del_txt),
                    fmt_f64(b.ins_joint),
                    fmt_f64(b.ins_img),
                    fmt_f64(b.ins_txt),
                    fmt_f64(t.syn_del[i]),
                    fmt_f64(t.syn_ins[i]),
                ]
                .into(),
            );
        }
        // Summary row: the synergy columns carry the two AUCs.
        let mut summary = vec![id.clone(), ex.clone(), "auc".into()];
        summary.extend(std::iter::repeat_n(String::new(), 6));
        summary.push(fmt_f64(t.auc_del));
        summary.push(fmt_f64(t.auc_ins));
        rows.push(summary);
    }
    write_csv(
        path,
        &[
            "instance_id",
            "explainer",
            "k",
            "del_joint",
            "del_img",
            "del_txt",
            "ins_joint",
            "ins_img",
            "ins_txt",
            "syn_del",
            "syn_ins",
        ],
        rows,
    )
}

/// Result of a surrogate validation run.
#[derive(Clone, Debug)]
pub struct SiiSummary {
    pub pairs: Vec<SurrogatePair>,
    pub validation: SurrogateValidation,
    pub fsyn_time: Duration,
    pub sii_time: Duration,
}

impl SiiSummary {
    /// F_syn wall-clock as a fraction of the exhaustive ground-truth path.
    pub fn time_ratio(&self) -> f64 {
        self.fsyn_time.as_secs_f64() / self.sii_time.as_secs_f64().max(f64::MIN_POSITIVE)
    }
}

/// Correlates F_syn with the exact macro-game SII; writes `sii.csv`,
/// `sii_thresholds.csv` and `sii_summary.csv`. Timings go to `out` only.
pub fn validate_sii(manifest: &Path, attributions: &Path, config: &Config, out: &mut dyn Write) -> Result<SiiSummary> {
    let corpus = load_corpus(manifest, attributions, config)?;
    let dir = output_dir(config)?;
    let pairs = corpus.pairs();
    type Row = (SurrogatePair, GroundTruth, Duration, Duration);
    let rows: Vec<Result<Row>> = pool(config)?.install(|| {
        pairs
            .par_iter()
            .map(|(i, explainer)| {
                let entry = &corpus.entries[*i];
                let attr = &corpus.attributions.index[&(entry.instance.id().to_string(), explainer.clone())];
                let start = Instant::now();
                let trace = synergy_curves(&entry.vf, &entry.instance, attr, &corpus.schedule)?;
                let fsyn_time = start.elapsed();
                let start = Instant::now();
                let truth = sii_ground_truth(
                    &entry.vf,
                    &entry.instance,
                    attr,
                    &corpus.schedule,
                    config.background_players,
                    config.seed,
                )?;
                let sii_time = start.elapsed();
                let pair = SurrogatePair {
                    instance_id: entry.instance.id().into(),
                    explainer: explainer.clone(),
                    f_syn: trace.f_syn,
                    sii: truth.value,
                };
                Ok((pair, truth, fsyn_time, sii_time))
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<Row>>>()?;
    let validation = validate_surrogate(&rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>())?;

    write_csv(
        &dir.join("sii.csv"),
        &["instance_id", "explainer", "f_syn", "sii"],
        rows.iter()
            .map(|(p, ..)| vec![p.instance_id.clone(), p.explainer.clone(), fmt_f64(p.f_syn), fmt_f64(p.sii)]),
    )?;
    write_csv(
        &dir.join("sii_thresholds.csv"),
        &["instance_id", "explainer", "k", "phi", "coalitions"],
        rows.iter().flat_map(|(p, truth, ..)| {
            truth.per_threshold.iter().map(move |t| {
                vec![p.instance_id.clone(), p.explainer.clone(), fmt_f64(t.k), fmt_f64(t.phi), t.coalitions_evaluated.to_string()]
            })
        }),
    )?;
    let mut summary_rows = vec![correlation_row("pooled", Some(&validation.pooled))];
    summary_rows.extend(validation.per_explainer.iter().map(|(e, c)| correlation_row(e, c.as_ref())));
    write_csv(&dir.join("sii_summary.csv"), &["scope", "pairs", "spearman", "kendall"], summary_rows)?;

    let fsyn_time: Duration = rows.iter().map(|r| r.2).sum();
    let sii_time: Duration = rows.iter().map(|r| r.3).sum();
    let summary = SiiSummary { pairs: rows.into_iter().map(|r| r.0).collect(), validation, fsyn_time, sii_time };
    say!(
        out,
        "pooled over {} pairs: spearman {:.4}, kendall {:.4}",
        summary.validation.pooled.pairs,
        summary.validation.pooled.spearman,
        summary.validation.pooled.kendall
    )?;
    for (e, c) in &summary.validation.per_explainer {
        match c {
            Some(c) => say!(out, "  {e}: spearman {:.4}, kendall {:.4} over {} pairs", c.spearman, c.kendall, c.pairs)?,
            None => say!(out, "  {e}: undefined (constant or too few pairs)")?,
        }
    }
    say!(
        out,
        "time: F_syn {:.3} s, exhaustive SII {:.3} s, ratio {:.4}",
        summary.fsyn_time.as_secs_f64(),
        summary.sii_time.as_secs_f64(),
        summary.time_ratio()
    )?;
    Ok(summary)
}

fn correlation_row(scope: &str, c: Option<&synfaith_core::shapley::Correlation>) -> Vec<String> {
    match c {
        Some(c) => vec![scope.into(), c.pairs.to_string(), fmt_f64(c.spearman), fmt_f64(c.kendall)],
        None => vec![scope.into(), String::new(), String::new(), String::new()],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsOptions {
    pub metric: Metric,
    pub lmm: bool,
    pub reference: String,
    pub random: Vec<RandomFactorKind>,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            metric: Metric::FSyn,
            lmm: false,
            reference: "random".into(),
            random: RandomFactorKind::ALL.to_vec(),
        }
    }
}

/// Everything `stats` computed, for callers that want the numbers.
#[derive(Clone, Debug, Default)]
pub struct StatsReport {
    /// `(scope, fit)`; the global fit comes first.
    pub lmm: Vec<(String, LmmFit)>,
    pub text: String,
}

/// Rank instability, mean ranks, Wilcoxon tests against the best explainer,
/// optionally the mixed model, and a leaderboard.
pub fn stats(records_path: &Path, opts: &StatsOptions, config: &Config, out: &mut dyn Write) -> Result<StatsReport> {
    let records = load_records(records_path)?;
    if records.is_empty() {
        return Err(AppError::Validation(format!("{}: no records", records_path.display())));
    }
    if let Some(r) = records.iter().find(|r| !r.get(opts.metric).is_finite()) {
        return Err(AppError::Validation(format!(
            "metric {} is missing or non-finite for {}/{}/{}/{}",
            opts.metric.name(),
            r.dataset,
            r.model,
            r.instance_id,
            r.explainer
        )));
    }
    let dir = output_dir(config)?;
    let datasets: BTreeSet<&str> = records.iter().map(|r| r.dataset.as_str()).collect();
    let scopes: Vec<(String, Vec<EvaluationRecord>)> = std::iter::once(("global".to_string(), records.clone()))
        .chain(datasets.iter().filter(|_| datasets.len() > 1).map(|d| {
            (d.to_string(), records.iter().filter(|r| r.dataset == *d).cloned().collect())
        }))
        .collect();
    let mut text = String::new();
    use std::fmt::Write as _;

    // Rank instability between the two unimodal metrics.
    let mut instability = Vec::new();
    let _ = writeln!(text, "rank agreement, srg_visual vs srg_textual (Kendall tau over explainer means)");
    for (scope, recs) in &scopes {
        let finite = recs.iter().all(|r| r.srg_visual.is_finite() && r.srg_textual.is_finite());
        let result = if finite { rank_agreement(recs, Metric::SrgVisual, Metric::SrgTextual).ok() } else { None };
        match result {
            Some(k) => {
                let _ = writeln!(text, "  {scope:<16} tau {:>7.4}  p {:.4}{}", k.tau, k.p_value, if k.exact { " (exact)" } else { "" });
                instability.push(vec![scope.clone(), explainer_count(recs).to_string(), fmt_f64(k.tau), fmt_f64(k.p_value), k.exact.to_string()]);
            }
            None => {
                let _ = writeln!(text, "  {scope:<16} undefined");
                instability.push(vec![scope.clone(), explainer_count(recs).to_string(), String::new(), String::new(), String::new()]);
            }
        }
    }
    write_csv(&dir.join("stats_rank_instability.csv"), &["scope", "explainers", "tau", "p_value", "exact"], instability)?;

    // Mean ranks per scope for the chosen metric and both unimodal metrics.
    let mut rank_rows = Vec::new();
    let mut rank_metrics = vec![opts.metric];
    rank_metrics.extend([Metric::SrgVisual, Metric::SrgTextual].into_iter().filter(|m| *m != opts.metric));
    for (scope, recs) in &scopes {
        for &metric in &rank_metrics {
            if !recs.iter().all(|r| r.get(metric).is_finite()) {
                continue;
            }
            let mr = mean_ranks(recs, metric);
            for (e, rank) in &mr.ranks {
                rank_rows.push(vec![
                    scope.clone(),
                    metric.name().into(),
                    e.clone(),
                    fmt_f64(*rank),
                    mr.instances_used.to_string(),
                    mr.instances_excluded.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &dir.join("stats_mean_ranks.csv"),
        &["scope", "metric", "explainer", "mean_rank", "units_used", "units_excluded"],
        rank_rows,
    )?;

    // Wilcoxon against the best explainer.
    let comparisons = compare_against_best(&records, opts.metric)?;
    let _ = writeln!(text, "\nWilcoxon signed-rank vs best ({}), Bonferroni over {} comparisons", opts.metric.name(), comparisons.len());
    let mut wilcoxon_rows = Vec::new();
    for c in &comparisons {
        let r = &c.result;
        let _ = writeln!(
            text,
            "  {} vs {:<16} n {:>5}  W {:>10}  p {:.4e}  p_bonf {:.4e}{}",
            c.best,
            c.other,
            r.effective_n,
            fmt_f64(r.statistic),
            r.p_raw,
            r.p_bonferroni,
            if r.degenerate { " (all differences zero)" } else { "" }
        );
        wilcoxon_rows.push(vec![
            opts.metric.name().into(),
            c.best.clone(),
            c.other.clone(),
            r.effective_n.to_string(),
            fmt_f64(r.statistic),
            fmt_f64(r.w_plus),
            fmt_f64(r.p_raw),
            fmt_f64(r.p_bonferroni),
            r.exact.to_string(),
            r.degenerate.to_string(),
        ]);
    }
    write_csv(
        &dir.join("stats_wilcoxon.csv"),
        &["metric", "best", "other", "n_effective", "statistic", "w_plus", "p_raw", "p_bonferroni", "exact", "degenerate"],
        wilcoxon_rows,
    )?;

    // Mixed model.
    let mut report = StatsReport::default();
    if opts.lmm {
        let mut lmm_rows = Vec::new();
        text.push('\n');
        for (scope, recs) in &scopes {
            let mut random: Vec<RandomFactorKind> = opts.random.clone();
            if scope != "global" {
                random.retain(|k| *k != RandomFactorKind::Dataset);
            }
            let (kept, dropped): (Vec<_>, Vec<_>) = random.into_iter().partition(|k| level_count(recs, *k) >= 2);
            for k in &dropped {
                let _ = writeln!(text, "note: {scope}: random factor {} has a single level and is omitted", k.as_str());
            }
            let lmm_opts = LmmOptions {
                reference: opts.reference.clone(),
                random: kept,
                metric: opts.metric,
                ..LmmOptions::default()
            };
            let fit = lmm_fit(recs, &lmm_opts)?;
            let _ = writeln!(text, "mixed model ({scope}, {})\n{fit}", opts.metric.name());
            for e in &fit.fixed {
                lmm_rows.push(if e.reference {
                    vec![scope.clone(), "fixed".into(), e.name.clone(), fmt_f64(0.0), String::new(), String::new(), String::new()]
                } else {
                    vec![scope.clone(), "fixed".into(), e.name.clone(), fmt_f64(e.beta), fmt_f64(e.std_err), fmt_f64(e.z), fmt_f64(e.p_value)]
                });
            }
            for c in &fit.random {
                lmm_rows.push(vec![scope.clone(), "variance".into(), c.factor.clone(), fmt_f64(c.variance), String::new(), String::new(), String::new()]);
            }
            lmm_rows.push(vec![scope.clone(), "variance".into(), "residual".into(), fmt_f64(fit.sigma2_resid), String::new(), String::new(), String::new()]);
            lmm_rows.push(vec![scope.clone(), "fit".into(), "log_likelihood".into(), fmt_f64(fit.log_likelihood), String::new(), String::new(), String::new()]);
            lmm_rows.push(vec![scope.clone(), "fit".into(), "converged".into(), (fit.converged as u8).to_string(), String::new(), String::new(), String::new()]);
            report.lmm.push((scope.clone(), fit));
        }
        write_csv(&dir.join("stats_lmm.csv"), &["scope", "kind", "term", "estimate", "std_err", "z", "p_value"], lmm_rows)?;
    }

    // Leaderboard.
    let means = explainer_means(&records, opts.metric);
    let ranks = mean_ranks(&records, opts.metric);
    let global_fit = report.lmm.first().map(|(_, f)| f);
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| ranks.ranks[a].1.total_cmp(&ranks.ranks[b].1).then(means[a].0.cmp(&means[b].0)));
    let _ = writeln!(text, "\nleaderboard ({})", opts.metric.name());
    let _ = writeln!(text, "  {:<20} {:>12} {:>10} {:>10} {:>10} {:>11}", "explainer", "mean", "mean rank", "beta", "se", "p");
    let mut board = Vec::new();
    for i in order {
        let (e, mean) = &means[i];
        let rank = ranks.ranks[i].1;
        let effect = global_fit.and_then(|f| f.effect(e));
        let (beta, se, p) = match effect {
            Some(x) if x.reference => (fmt_f64(0.0), String::new(), String::new()),
            Some(x) => (fmt_f64(x.beta), fmt_f64(x.std_err), fmt_f64(x.p_value)),
            None => (String::new(), String::new(), String::new()),
        };
        let shown = match effect {
            Some(x) if x.reference => format!("{:>10.4} {:>10} {:>11}", 0.0, "ref", ""),
            Some(x) => format!("{:>10.4} {:>10.4} {:>11.3e}", x.beta, x.std_err, x.p_value),
            None => String::new(),
        };
        let _ = writeln!(text, "  {e:<20} {mean:>12.6} {rank:>10.3} {shown}");
        board.push(vec![e.clone(), fmt_f64(*mean), fmt_f64(rank), beta, se, p]);
    }
    let mean_col = format!("mean_{}", opts.metric.name());
    write_csv(
        &dir.join("stats_leaderboard.csv"),
        &["explainer", &mean_col, "mean_rank", "beta", "std_err", "p_value"],
        board,
    )?;
    let report_path = dir.join("stats_report.txt");
    fs::write(&report_path, &text).map_err(AppError::io(&report_path))?;
    io_write(out, format_args!("{text}"))?;
    report.text = text;
    Ok(report)
}

fn explainer_count(records: &[EvaluationRecord]) -> usize {
    records.iter().map(|r| r.explainer.as_str()).collect::<BTreeSet<_>>().len()
}

fn level_count(records: &[EvaluationRecord], kind: RandomFactorKind) -> usize {
    let levels: BTreeSet<(&str, &str)> = records
        .iter()
        .map(|r| match kind {
            RandomFactorKind::Instance => (r.dataset.as_str(), r.instance_id.as_str()),
            RandomFactorKind::Model => (r.model.as_str(), ""),
            RandomFactorKind::Dataset => (r.dataset.as_str(), ""),
        })
        .collect();
    levels.len()
}
