//! YOLO label files: `<class> <cx> <cy> <w> <h>` per line, normalized to the image size.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::categories::CategoryId;
use crate::dataset::{Annotation, DatasetCOCO, ImageId, ImageRecord};

#[derive(Debug, Error)]
pub enum YoloError {
    #[error("annotation {annotation} belongs to image {expected}, not {actual}")]
    WrongImage { annotation: u64, expected: u64, actual: u64 },
    #[error("annotation {annotation}: normalized {field} = {value} is outside [0, 1]")]
    OutOfRange { annotation: u64, field: &'static str, value: f64 },
    #[error("annotation {0}: box has no area inside the image")]
    Empty(u64),
    #[error("malformed label line {0:?}")]
    Malformed(String),
    #[error("image {0} is not in the dataset")]
    UnknownImage(ImageId),
    #[error("writing labels to {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// One normalized label line, already parsed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoloLabel {
    pub category_id: CategoryId,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

pub fn yolo_line(ann: &Annotation, img: &ImageRecord) -> Result<String, YoloError> {
    if ann.image_id != img.id {
        return Err(YoloError::WrongImage { annotation: ann.id, expected: ann.image_id, actual: img.id });
    }
    let (iw, ih) = (img.width as f64, img.height as f64);
    let b = ann.bbox.clamp_to(iw, ih).ok_or(YoloError::Empty(ann.id))?;
    let (cx, cy) = b.center();
    let fields = [("x_center", cx / iw), ("y_center", cy / ih), ("width", b.w() / iw), ("height", b.h() / ih)];
    for (field, value) in fields {
        if !(0.0..=1.0).contains(&value) {
            return Err(YoloError::OutOfRange { annotation: ann.id, field, value });
        }
    }
    Ok(format!("{} {:.6} {:.6} {:.6} {:.6}", ann.category_id, fields[0].1, fields[1].1, fields[2].1, fields[3].1))
}

pub fn parse_yolo_line(line: &str) -> Result<YoloLabel, YoloError> {
    let bad = || YoloError::Malformed(line.to_string());
    let mut parts = line.split(' ');
    let category_id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let mut vals = [0.0; 4];
    for v in vals.iter_mut() {
        *v = parts.next().and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad)?;
    }
    if parts.next().is_some() {
        return Err(bad());
    }
    let [cx, cy, w, h] = vals;
    Ok(YoloLabel { category_id, cx, cy, w, h })
}

/// Writes `<stem>.txt` for every requested image, one line per annotation in
/// ascending annotation id. Images without annotations get an empty file.
pub fn write_labels(ds: &DatasetCOCO, ids: &[ImageId], dir: &Path) -> Result<usize, YoloError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| YoloError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for &id in ids {
        let img = ds.image(id).ok_or(YoloError::UnknownImage(id))?;
        let mut text = String::new();
        for ann in ds.annotations_for(id) {
            text.push_str(&yolo_line(ann, img)?);
            text.push('\n');
        }
        let path = dir.join(format!("{}.txt", img.stem()));
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(ids.len())
}
