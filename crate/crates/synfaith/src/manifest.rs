//! Corpus manifest: instance shapes, labels and model bindings.
//!
//! ```json
//! {"entries": [
//!   {"id": "img7", "m": 576, "n": 24, "dataset": "mmstar", "model": "vlm-a",
//!    "binding": {"synthetic": {"kind": "and-synergy", "key_visual": [3], "key_text": [1], "seed": 7}}},
//!   {"id": "img8", "m": 576, "n": 30, "binding": {"remote": {"endpoint": "localhost:9000"}}},
//!   {"id": "img9", "m": 576, "n": 12, "binding": {"remote": {}}}
//! ]}
//! ```
//!
//! A remote binding without an endpoint uses the configured default.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use synfaith_core::game::{make_synthetic, MixedWeights, SyntheticKind, SyntheticModel, SyntheticModelSpec, ValueFunction};
use synfaith_core::mask::{MultimodalInstance, MultimodalMask};
use synfaith_core::EvalError;

use crate::error::{AppError, Result};
use crate::protocol::{ClientOptions, Endpoint, RemoteValueFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsJson {
    pub bias: f64,
    pub visual: Vec<f64>,
    pub textual: Vec<f64>,
    pub interaction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticJson {
    pub kind: String,
    pub key_visual: Vec<usize>,
    pub key_text: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsJson>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticJson {
    pub fn from_spec(spec: &SyntheticModelSpec) -> Self {
        Self {
            kind: spec.kind.as_str().into(),
            key_visual: spec.key_visual.clone(),
            key_text: spec.key_text.clone(),
            weights: spec.weights.as_ref().map(|w| WeightsJson {
                bias: w.bias,
                visual: w.visual.clone(),
                textual: w.textual.clone(),
                interaction: w.interaction,
            }),
            seed: spec.seed,
        }
    }

    pub fn to_spec(&self) -> Result<SyntheticModelSpec> {
        let kind = SyntheticKind::parse(&self.kind)
            .ok_or_else(|| AppError::Validation(format!("unknown synthetic model kind {:?}", self.kind)))?;
        let mut spec = SyntheticModelSpec::new(kind, self.key_visual.clone(), self.key_text.clone(), self.seed);
        spec.weights = self.weights.as_ref().map(|w| MixedWeights {
            bias: w.bias,
            visual: w.visual.clone(),
            textual: w.textual.clone(),
            interaction: w.interaction,
        });
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Binding {
    Synthetic(SyntheticJson),
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<Endpoint>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub m: usize,
    pub n: usize,
    #[serde(default = "default_label")]
    pub dataset: String,
    #[serde(default = "default_label")]
    pub model: String,
    pub binding: Binding,
}

fn default_label() -> String {
    "default".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let manifest: CorpusManifest = serde_json::from_str(text).map_err(AppError::json(path))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
        Self::from_json(&text, path)
    }

    /// Checks id uniqueness, shapes and synthetic bindings.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(AppError::Validation(format!("duplicate instance id {:?} in manifest", e.id)));
            }
            let instance = e.instance()?;
            if let Binding::Synthetic(s) = &e.binding {
                make_synthetic(&s.to_spec()?, &instance)
                    .map_err(|err| AppError::Validation(format!("instance {}: {err}", e.id)))?;
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> HashMap<String, (usize, usize)> {
        self.entries.iter().map(|e| (e.id.clone(), (e.m, e.n))).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Builds one value function per entry. Entries sharing an endpoint share
    /// a single connection.
    pub fn resolve(&self, default_endpoint: Option<&Endpoint>, options: ClientOptions) -> Result<Vec<BoundModel>> {
        let mut connections: BTreeMap<Endpoint, Arc<RemoteValueFunction>> = BTreeMap::new();
        self.entries
            .iter()
            .map(|e| {
                let instance = e.instance()?;
                match &e.binding {
                    Binding::Synthetic(s) => Ok(BoundModel::Synthetic(
                        make_synthetic(&s.to_spec()?, &instance).map_err(AppError::from)?,
                    )),
                    Binding::Remote { endpoint } => {
                        let endpoint = endpoint.as_ref().or(default_endpoint).ok_or_else(|| {
                            AppError::Validation(format!("instance {} is bound to a remote model but no endpoint is configured", e.id))
                        })?;
                        let client = match connections.get(endpoint) {
                            Some(c) => Arc::clone(c),
                            None => {
                                let c = Arc::new(RemoteValueFunction::connect(endpoint, options)?);
                                connections.insert(endpoint.clone(), Arc::clone(&c));
                                c
                            }
                        };
                        Ok(BoundModel::Remote(client))
                    }
                }
            })
            .collect()
    }
}

impl ManifestEntry {
    pub fn instance(&self) -> Result<MultimodalInstance> {
        MultimodalInstance::new(self.id.clone(), self.m, self.n).map_err(AppError::from)
    }
}

/// The value function behind one manifest entry.
#[derive(Debug, Clone)]
pub enum BoundModel {
    Synthetic(SyntheticModel),
    Remote(Arc<RemoteValueFunction>),
}

impl ValueFunction for BoundModel {
    fn evaluate(&self, instance: &MultimodalInstance, mask: &MultimodalMask) -> std::result::Result<f64, EvalError> {
        match self {
            BoundModel::Synthetic(s) => s.evaluate(instance, mask),
            BoundModel::Remote(r) => r.evaluate(instance, mask),
        }
    }

    fn concurrency(&self) -> synfaith_core::game::Concurrency {
        match self {
            BoundModel::Synthetic(s) => s.concurrency(),
            BoundModel::Remote(r) => r.concurrency(),
        }
    }
}
