//! A trained regressor together with what it was trained on, its on-disk
//! format, and risk scoring for a cohort.
//!
//! File layout (UTF-8 text):
//!
//! ```text
//! fedrank-model v1
//! input_dim=100
//! hidden=50,10
//! dropout_rate=0.2
//! differential=true
//! featurizer=<fingerprint>
//! feature_spec=<json or empty>
//! params=5571
//! <one parameter per line, canonical order>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::nn::{predict_batch, Layout, ModelParams};
use crate::pairs::{individual_scores, score_all_pairs};

const MAGIC: &str = "fedrank-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub dropout_rate: f64,
    /// Trained on pairwise differences; scoring then sums pairwise outputs.
    pub differential: bool,
    /// Identifies the feature space the model expects.
    pub featurizer: String,
    /// Present when features came from the built-in featurizer.
    pub feature_spec: Option<FeatureSpec>,
}

/// Fingerprint used for feature tables supplied from outside.
pub fn external_fingerprint(dim: usize) -> String {
    format!("external-d{dim}")
}

impl TrainedModel {
    pub fn new(params: ModelParams, dropout_rate: f64, differential: bool, feature_spec: Option<FeatureSpec>) -> Self {
        let featurizer = match &feature_spec {
            Some(s) => s.fingerprint(),
            None => external_fingerprint(params.input_dim()),
        };
        TrainedModel {
            params,
            dropout_rate,
            differential,
            featurizer,
            feature_spec,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Refuses features whose dimension differs from the model's.
    pub fn check_dimension(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::IncompatibleModel(format!(
                "model expects {}-dimensional features (featurizer {}), input has {dim}",
                self.input_dim(),
                self.featurizer
            )));
        }
        Ok(())
    }

    pub fn check_feature_spec(&self, spec: &FeatureSpec) -> Result<()> {
        if spec.fingerprint() != self.featurizer {
            return Err(Error::IncompatibleModel(format!(
                "model was trained with featurizer {}, input uses {}",
                self.featurizer,
                spec.fingerprint()
            )));
        }
        self.check_dimension(spec.dimension())
    }

    /// Per-student risk scores; lower means higher risk.
    ///
    /// Differential models score every ordered pair and sum each student's
    /// row; plain models predict each student directly.
    pub fn score_students(&self, students: &[String], features: &[Vec<f64>]) -> Result<BTreeMap<String, f64>> {
        if students.len() != features.len() {
            return Err(Error::invalid("one feature row per student required"));
        }
        for row in features {
            self.check_dimension(row.len())?;
        }
        if self.differential {
            let matrix = score_all_pairs(students, features, |d| predict_batch(&self.params, d))?;
            individual_scores(&matrix, students)
        } else {
            let predicted = predict_batch(&self.params, features)?;
            Ok(students.iter().cloned().zip(predicted).collect())
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let layout = self.params.layout();
        let mut out = String::new();
        let spec = match &self.feature_spec {
            Some(s) => serde_json::to_string(s)?,
            None => String::new(),
        };
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "input_dim={}", layout.input_dim);
        let _ = writeln!(out, "hidden={},{}", layout.hidden[0], layout.hidden[1]);
        let _ = writeln!(out, "dropout_rate={}", self.dropout_rate);
        let _ = writeln!(out, "differential={}", self.differential);
        let _ = writeln!(out, "featurizer={}", self.featurizer);
        let _ = writeln!(out, "feature_spec={spec}");
        let _ = writeln!(out, "params={}", self.params.values().len());
        for v in self.params.values() {
            let _ = writeln!(out, "{v:e}");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::ModelFormat(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing header line"));
        }
        let mut header = BTreeMap::new();
        for line in lines.by_ref() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            header.insert(k.to_string(), v.to_string());
            if k == "params" {
                break;
            }
        }
        let get = |k: &str| header.get(k).ok_or_else(|| bad(&format!("missing `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(&format!("bad `{k}`"))) };
        let hidden: Vec<usize> = get("hidden")?
            .split(',')
            .map(|h| h.parse().map_err(|_| bad("bad `hidden`")))
            .collect::<Result<_>>()?;
        let hidden: [usize; 2] = hidden.try_into().map_err(|_| bad("`hidden` needs two sizes"))?;
        let layout = Layout {
            input_dim: num("input_dim")?,
            hidden,
        };
        let count = num("params")?;
        if count != layout.param_count() {
            return Err(bad("parameter count does not match layer sizes"));
        }
        let values: Vec<f64> = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad("bad parameter value")))
            .collect::<Result<_>>()?;
        let params = ModelParams::from_values(layout, values)?;
        let spec = get("feature_spec")?;
        let feature_spec = if spec.is_empty() {
            None
        } else {
            Some(serde_json::from_str(spec)?)
        };
        Ok(TrainedModel {
            params,
            dropout_rate: get("dropout_rate")?.parse().map_err(|_| bad("bad `dropout_rate`"))?,
            differential: get("differential")?.parse().map_err(|_| bad("bad `differential`"))?,
            featurizer: get("featurizer")?.clone(),
            feature_spec,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
