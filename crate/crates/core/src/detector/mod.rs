//! The detector boundary: a trait the experiment loop drives, a built-in
//! synthetic implementation, and a client for external detector processes.

pub mod protocol;
pub mod subprocess;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetCOCO, ImageId, ImageRecord};
use crate::eval::Detection;
pub use protocol::ProtocolError;
pub use subprocess::SubprocessDetector;
pub use synthetic::SyntheticParams;

pub const DEFAULT_TIMEOUT_SECS: u64 = 24 * 60 * 60;
pub const DEFAULT_PREDICT_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    ConfigFile { path: String, message: String },
    #[error("failed to start detector {command:?}: {source}")]
    Spawn {
        command: Vec<String>,
        #[source]
        source: std::io::Error,
    },
    #[error("detector exited while {0}")]
    Exited(&'static str),
    #[error("detector did not answer within {0:?}")]
    Timeout(Duration),
    #[error("detector i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("image {0} is not in the ground truth")]
    UnknownImage(ImageId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Synthetic,
    Subprocess,
}

/// Detector configuration as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_params: Option<SyntheticParams>,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Directory that image file names are resolved against for the adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    #[serde(default = "default_predict_batch")]
    pub predict_batch: usize,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_predict_batch() -> usize {
    DEFAULT_PREDICT_BATCH
}

impl DetectorSpec {
    pub fn synthetic(params: SyntheticParams) -> Self {
        Self {
            kind: DetectorKind::Synthetic,
            command: None,
            synthetic_params: Some(params),
            warm_start: false,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            image_root: None,
            predict_batch: DEFAULT_PREDICT_BATCH,
        }
    }

    pub fn subprocess(command: Vec<String>) -> Self {
        Self {
            kind: DetectorKind::Subprocess,
            command: Some(command),
            synthetic_params: None,
            ..Self::synthetic(SyntheticParams::default())
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let cfg = |m: &str| Err(DetectorError::Config(m.to_string()));
        match self.kind {
            DetectorKind::Synthetic => {
                if self.command.is_some() {
                    return cfg("a synthetic detector takes no `command`");
                }
                let Some(p) = &self.synthetic_params else {
                    return cfg("a synthetic detector needs `synthetic_params`");
                };
                p.validate().map_err(DetectorError::Config)?;
            }
            DetectorKind::Subprocess => {
                if self.synthetic_params.is_some() {
                    return cfg("a subprocess detector takes no `synthetic_params`");
                }
                match &self.command {
                    Some(c) if !c.is_empty() && !c[0].is_empty() => {}
                    _ => return cfg("a subprocess detector needs a non-empty `command`"),
                }
            }
        }
        if self.timeout_secs == 0 {
            return cfg("`timeout_secs` must be positive");
        }
        if self.predict_batch == 0 {
            return cfg("`predict_batch` must be positive");
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, DetectorError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| DetectorError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DetectorError::ConfigFile { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json_str(&text)
            .map_err(|e| DetectorError::ConfigFile { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn build(&self) -> Result<Box<dyn Detector>, DetectorError> {
        self.validate()?;
        Ok(match self.kind {
            DetectorKind::Synthetic => Box::new(SyntheticDetector::new(self.synthetic_params.unwrap_or_default())),
            DetectorKind::Subprocess => Box::new(SubprocessDetector::spawn(self)?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainRequest<'a> {
    pub images: &'a [ImageRecord],
    pub labels_dir: &'a Path,
    pub workdir: &'a Path,
    pub warm_start: bool,
}

/// What a finished training call leaves behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelHandle {
    pub training_size: usize,
}

pub type Predictions = BTreeMap<ImageId, Vec<Detection>>;

pub trait Detector: Send {
    fn train(&mut self, request: &TrainRequest<'_>) -> Result<ModelHandle, DetectorError>;

    /// Detections for every requested image. `gt` is only consulted by
    /// simulated detectors.
    fn predict(
        &mut self,
        handle: &ModelHandle,
        images: &[ImageRecord],
        gt: &DatasetCOCO,
    ) -> Result<Predictions, DetectorError>;
}

#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    params: SyntheticParams,
}

impl SyntheticDetector {
    pub fn new(params: SyntheticParams) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &SyntheticParams {
        &self.params
    }
}

impl Detector for SyntheticDetector {
    fn train(&mut self, request: &TrainRequest<'_>) -> Result<ModelHandle, DetectorError> {
        Ok(ModelHandle { training_size: request.images.len() })
    }

    fn predict(
        &mut self,
        handle: &ModelHandle,
        images: &[ImageRecord],
        gt: &DatasetCOCO,
    ) -> Result<Predictions, DetectorError> {
        for img in images {
            if gt.image(img.id).is_none() {
                return Err(DetectorError::UnknownImage(img.id));
            }
        }
        let n = handle.training_size;
        Ok(images.par_iter().map(|img| (img.id, self.params.predict_image(n, img, gt))).collect())
    }
}
