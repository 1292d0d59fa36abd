//! Self-describing model files.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use emhrnn::autodiff::Tensor;
use emhrnn::model::{ModelConfig, ModelParams};

pub const ARCHIVE_FORMAT: &str = "emhrnn-model";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub strategy: String,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub m_step_passes: usize,
    #[serde(rename = "K")]
    pub outer_k: usize,
    #[serde(rename = "M")]
    pub inner_m: usize,
    pub documents: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub metadata: TrainingMetadata,
    pub tensors: Vec<NamedTensor>,
}

impl ModelArchive {
    pub fn new(params: &ModelParams, metadata: TrainingMetadata) -> Self {
        let tensors = ModelParams::<Tensor>::names()
            .into_iter()
            .zip(params.items())
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        ModelArchive {
            format: ARCHIVE_FORMAT.to_string(),
            version: ARCHIVE_VERSION,
            config: params.config(),
            metadata,
            tensors,
        }
    }

    /// Rebuilds parameters, checking names and shapes against the config.
    pub fn params(&self) -> Result<ModelParams> {
        let mut params = ModelParams::zeros(&self.config);
        let names = ModelParams::<Tensor>::names();
        ensure!(
            self.tensors.len() == names.len(),
            "archive holds {} tensors, expected {}",
            self.tensors.len(),
            names.len()
        );
        for ((slot, name), saved) in params.items_mut().into_iter().zip(&names).zip(&self.tensors) {
            ensure!(
                &saved.name == name,
                "archive tensor {} found where {} expected",
                saved.name,
                name
            );
            ensure!(
                saved.shape == slot.shape(),
                "tensor {name} has shape {:?}, config implies {:?}",
                saved.shape,
                slot.shape()
            );
            *slot = Tensor::new(saved.shape.clone(), saved.data.clone())?;
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("archive serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("archive is not valid JSON")?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(ARCHIVE_FORMAT) => {}
            other => bail!("not a model archive (format {other:?})"),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(ARCHIVE_VERSION) => {}
            other => bail!("unsupported archive version {other:?}; this build reads version {ARCHIVE_VERSION}"),
        }
        let archive: ModelArchive = serde_json::from_value(value).context("archive schema mismatch")?;
        archive.params()?;
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).with_context(|| format!("{}: cannot write archive", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read archive", path.display()))?;
        Self::from_json(&text).with_context(|| format!("{}: invalid archive", path.display()))
    }
}
