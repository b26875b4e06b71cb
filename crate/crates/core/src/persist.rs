//! Model files: one JSON document with a format tag, a version and a method-tagged model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{OrdinalModel, StandardModel};
use crate::data::{FeatureSchema, Features};
use crate::error::{Error, Result};
use crate::model::{Method, ModelParams};

pub const FORMAT: &str = "mmrs-model";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "lowercase")]
pub enum TrainedModel {
    Proposed(ModelParams),
    Standard(StandardModel),
    Ordinal(OrdinalModel),
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Proposed(_) => Method::Proposed,
            TrainedModel::Standard(_) => Method::Standard,
            TrainedModel::Ordinal(_) => Method::Ordinal,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        match self {
            TrainedModel::Proposed(m) => &m.schema,
            TrainedModel::Standard(m) => &m.schema,
            TrainedModel::Ordinal(m) => &m.schema,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrainedModel::Proposed(m) => m.validate(),
            TrainedModel::Standard(m) => m.validate(),
            TrainedModel::Ordinal(m) => m.validate(),
        }
    }

    /// Decision values of every stage pair, in pair order.
    pub fn decision_values_for(&self, user: &Features, item: &Features) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Proposed(m) => m.decision_values_for(user, item),
            TrainedModel::Standard(m) => Ok(m.decision_values_for(user, item)),
            TrainedModel::Ordinal(m) => Ok(m.decision_values_for(user, item)),
        }
    }

    /// Errors with [`Error::SchemaMismatch`] unless the model was fit on `schema`.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if self.schema() == schema {
            Ok(())
        } else {
            Err(Error::SchemaMismatch)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: TrainedModel,
}

pub fn to_json(model: &TrainedModel) -> Result<String> {
    let envelope = Envelope {
        format: FORMAT.into(),
        version: VERSION,
        model: model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize model: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
    let format = value.get("format").and_then(|v| v.as_str());
    if format != Some(FORMAT) {
        return Err(Error::CorruptModel(format!("not a model file (format {format:?})")));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(VERSION)) {
        return Err(Error::CorruptModel(format!(
            "unsupported model file version {version:?}, expected {VERSION}"
        )));
    }
    let envelope: Envelope =
        serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
    envelope
        .model
        .validate()
        .map_err(|e| Error::CorruptModel(e.to_string()))?;
    Ok(envelope.model)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
