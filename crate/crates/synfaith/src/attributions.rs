//! Attribution file: per (instance, explainer) visual and text scores.
//!
//! ```json
//! {"attributions": [
//!   {"instance": "img7", "explainer": "attnlrp", "visual_scores": [0.1, 0.9], "text_scores": [0.3]}
//! ]}
//! ```
//!
//! Scores are JSON numbers or decimal strings; strings make non-finite
//! values such as `"NaN"` representable so they can be rejected by position.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use synfaith_core::mask::Modality;
use synfaith_core::perturb::AttributionMap;
use synfaith_core::synergy::AttributionIndex;

use crate::error::{AppError, Result};
use crate::manifest::CorpusManifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Score {
    Number(f64),
    Text(String),
}

impl Score {
    fn value(&self) -> Option<f64> {
        match self {
            Score::Number(v) => Some(*v),
            Score::Text(s) => s.trim().parse().ok(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionEntry {
    pub instance: String,
    pub explainer: String,
    pub visual_scores: Vec<Score>,
    pub text_scores: Vec<Score>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionFile {
    pub attributions: Vec<AttributionEntry>,
}

/// Validated attributions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attributions {
    pub index: AttributionIndex,
    /// Explainers in sorted order.
    pub explainers: Vec<String>,
}

impl AttributionFile {
    pub fn from_maps<'a>(maps: impl IntoIterator<Item = (&'a str, &'a str, &'a AttributionMap)>) -> Self {
        let attributions = maps
            .into_iter()
            .map(|(instance, explainer, map)| AttributionEntry {
                instance: instance.into(),
                explainer: explainer.into(),
                visual_scores: map.scores(Modality::Visual).iter().map(|v| Score::Number(*v)).collect(),
                text_scores: map.scores(Modality::Textual).iter().map(|v| Score::Number(*v)).collect(),
            })
            .collect();
        Self { attributions }
    }
}

pub fn parse_attributions(text: &str, path: &Path, manifest: &CorpusManifest) -> Result<Attributions> {
    let file: AttributionFile = serde_json::from_str(text).map_err(AppError::json(path))?;
    let mut out = Attributions::default();
    let mut explainers = BTreeSet::new();
    for entry in &file.attributions {
        let spec = manifest.get(&entry.instance).ok_or_else(|| {
            AppError::Validation(format!("attributions reference unknown instance {:?}", entry.instance))
        })?;
        let field_names = [(Modality::Visual, "visual_scores", &entry.visual_scores, spec.m), (Modality::Textual, "text_scores", &entry.text_scores, spec.n)];
        let mut decoded = Vec::with_capacity(2);
        for (modality, field, scores, expected) in field_names {
            if scores.len() != expected {
                return Err(AppError::Validation(format!(
                    "instance {} explainer {}: {modality} attribution has length {}, expected {expected}",
                    entry.instance,
                    entry.explainer,
                    scores.len()
                )));
            }
            let values = scores
                .iter()
                .enumerate()
                .map(|(i, s)| match s.value() {
                    Some(v) if v.is_finite() => Ok(v),
                    _ => Err(AppError::Validation(format!(
                        "instance {} explainer {}: {field}[{i}] is not a finite number",
                        entry.instance, entry.explainer
                    ))),
                })
                .collect::<Result<Vec<f64>>>()?;
            decoded.push(values);
        }
        let textual = decoded.pop().expect("two modalities");
        let visual = decoded.pop().expect("two modalities");
        let key = (entry.instance.clone(), entry.explainer.clone());
        if out.index.contains_key(&key) {
            return Err(AppError::Validation(format!(
                "duplicate attribution for instance {} explainer {}",
                entry.instance, entry.explainer
            )));
        }
        out.index.insert(key, AttributionMap::new(visual, textual)?);
        explainers.insert(entry.explainer.clone());
    }
    out.explainers = explainers.into_iter().collect();
    Ok(out)
}

pub fn load_attributions(path: &Path, manifest: &CorpusManifest) -> Result<Attributions> {
    let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
    parse_attributions(&text, path, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> CorpusManifest {
        CorpusManifest::from_json(
            r#"{"entries": [{"id": "a", "m": 3, "n": 4, "binding": {"remote": {}}}]}"#,
            Path::new("m.json"),
        )
        .unwrap()
    }

    fn parse(text: &str) -> Result<Attributions> {
        parse_attributions(text, Path::new("a.json"), &manifest())
    }

    #[test]
    fn matching_arrays_accepted() {
        let a = parse(r#"{"attributions": [{"instance": "a", "explainer": "e",
            "visual_scores": [1, 2, "3.5"], "text_scores": [0, 0, 0, 1]}]}"#)
        .unwrap();
        assert_eq!(a.explainers, vec!["e".to_string()]);
        assert_eq!(a.index[&("a".into(), "e".into())].scores(Modality::Visual), &[1.0, 2.0, 3.5]);
    }

    #[test]
    fn short_visual_array_rejected() {
        let err = parse(r#"{"attributions": [{"instance": "a", "explainer": "e",
            "visual_scores": [1, 2], "text_scores": [0, 0, 0, 1]}]}"#)
        .unwrap_err()
        .to_string();
        assert!(err.contains("instance a") && err.contains("visual") && err.contains("length 2"), "{err}");
    }

    #[test]
    fn nan_rejected_by_index() {
        let err = parse(r#"{"attributions": [{"instance": "a", "explainer": "e",
            "visual_scores": [1, 2, 3], "text_scores": [0, 0, 0, "NaN"]}]}"#)
        .unwrap_err()
        .to_string();
        assert!(err.contains("text_scores[3]"), "{err}");
    }

    #[test]
    fn unknown_instance_and_duplicates_rejected() {
        assert!(parse(r#"{"attributions": [{"instance": "z", "explainer": "e", "visual_scores": [], "text_scores": []}]}"#).is_err());
        let one = r#"{"instance": "a", "explainer": "e", "visual_scores": [1, 2, 3], "text_scores": [0, 0, 0, 1]}"#;
        assert!(parse(&format!(r#"{{"attributions": [{one}, {one}]}}"#)).is_err());
    }
}
