//! Newline-delimited JSON messages exchanged with an external detector
//! process. The harness writes [`Request`]s to the child's stdin; the child
//! answers each with one [`Response`] line on stdout, after first greeting with
//! `{"ok":true,"batch":<bool>}`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::categories::CategoryTable;
use crate::dataset::ImageId;
use crate::eval::Detection;
use crate::geometry::BBox;

/// An image as named on the wire: its dataset id and a path the adapter can open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub image_id: ImageId,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Train { images: Vec<WireImage>, labels_dir: String, workdir: String, warm_start: bool },
    Predict { images: Vec<WireImage> },
    Shutdown {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionItem {
    pub image_id: ImageId,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Hello { batch: bool },
    Trained,
    Predictions { items: Vec<PredictionItem> },
    Error { error: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message {line:?}: {message}")]
    Malformed { line: String, message: String },
    #[error("expected {expected}, got {got:?}")]
    Unexpected { expected: &'static str, got: String },
    #[error("detector reported an error: {0}")]
    Remote(String),
    #[error("image {image_id}, detection {index}: {message}")]
    InvalidDetection { image_id: ImageId, index: usize, message: String },
    #[error("predictions for image {0}, which was not requested")]
    UnrequestedImage(ImageId),
    #[error("image {0} listed twice in one predictions message")]
    DuplicateImage(ImageId),
    #[error("no predictions returned for image {0}")]
    MissingImage(ImageId),
}

impl Request {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests serialize")
    }

    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(line).map_err(|e| malformed(line, e))
    }
}

fn malformed(line: &str, e: impl ToString) -> ProtocolError {
    ProtocolError::Malformed { line: line.to_string(), message: e.to_string() }
}

impl Response {
    pub fn to_line(&self) -> String {
        let v = match self {
            Response::Hello { batch } => json!({"ok": true, "batch": batch}),
            Response::Trained => json!({"ok": true, "cmd": "trained"}),
            Response::Predictions { items } => json!({"ok": true, "cmd": "predictions", "items": items}),
            Response::Error { error } => json!({"ok": false, "error": error}),
        };
        v.to_string()
    }

    pub fn parse(line: &str) -> Result<Self, ProtocolError> {
        let v: Map<String, Value> = serde_json::from_str(line).map_err(|e| malformed(line, e))?;
        let field = |k: &str| v.get(k).ok_or_else(|| malformed(line, format!("missing field `{k}`")));
        let ok = field("ok")?.as_bool().ok_or_else(|| malformed(line, "`ok` is not a boolean"))?;
        if !ok {
            check_keys(line, &v, &["ok", "error"])?;
            let error = field("error")?.as_str().ok_or_else(|| malformed(line, "`error` is not a string"))?;
            return Ok(Response::Error { error: error.to_string() });
        }
        if let Some(batch) = v.get("batch") {
            check_keys(line, &v, &["ok", "batch"])?;
            let batch = batch.as_bool().ok_or_else(|| malformed(line, "`batch` is not a boolean"))?;
            return Ok(Response::Hello { batch });
        }
        match field("cmd")?.as_str() {
            Some("trained") => {
                check_keys(line, &v, &["ok", "cmd"])?;
                Ok(Response::Trained)
            }
            Some("predictions") => {
                check_keys(line, &v, &["ok", "cmd", "items"])?;
                let items = serde_json::from_value(field("items")?.clone()).map_err(|e| malformed(line, e))?;
                Ok(Response::Predictions { items })
            }
            _ => Err(malformed(line, "unknown `cmd`")),
        }
    }
}

fn check_keys(line: &str, v: &Map<String, Value>, allowed: &[&str]) -> Result<(), ProtocolError> {
    match v.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(malformed(line, format!("unexpected field `{k}`"))),
        None => Ok(()),
    }
}

/// Checks every returned record against the requested images and the
/// category table, converting to harness detections in request order.
pub fn validate_predictions(
    items: Vec<PredictionItem>,
    requested: &[ImageId],
    categories: &CategoryTable,
) -> Result<Vec<(ImageId, Vec<Detection>)>, ProtocolError> {
    let mut by_id: std::collections::BTreeMap<ImageId, Vec<WireDetection>> = Default::default();
    for item in items {
        if !requested.contains(&item.image_id) {
            return Err(ProtocolError::UnrequestedImage(item.image_id));
        }
        if by_id.insert(item.image_id, item.detections).is_some() {
            return Err(ProtocolError::DuplicateImage(item.image_id));
        }
    }
    let mut out = Vec::with_capacity(requested.len());
    for &image_id in requested {
        let dets = by_id.remove(&image_id).ok_or(ProtocolError::MissingImage(image_id))?;
        let mut converted = Vec::with_capacity(dets.len());
        for (index, d) in dets.into_iter().enumerate() {
            let bad = |message: String| ProtocolError::InvalidDetection { image_id, index, message };
            if !categories.contains(d.category_id) {
                return Err(bad(format!("unknown category {}", d.category_id)));
            }
            if !(0.0..=1.0).contains(&d.score) {
                return Err(bad(format!("score {} outside [0, 1]", d.score)));
            }
            let [x, y, w, h] = d.bbox;
            let bbox = BBox::new(x, y, w, h).map_err(|e| bad(e.to_string()))?;
            converted.push(Detection { image_id, category_id: d.category_id, bbox, score: d.score });
        }
        out.push((image_id, converted));
    }
    Ok(out)
}
