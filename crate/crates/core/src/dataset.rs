//! COCO-style ground-truth store: images, box annotations and the category table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::categories::{Category, CategoryId, CategoryTable};
use crate::geometry::BBox;

pub type ImageId = u64;
pub type AnnotationId = u64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Which annotation tool an object came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Pagexml,
    Mei,
    Svg,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// Position of the page in manuscript order.
    pub page_index: u32,
    /// Keys read from disk that this schema does not know. Never written.
    #[serde(skip)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    /// File name without directory and extension; names label files.
    pub fn stem(&self) -> &str {
        Path::new(&self.file_name).file_stem().and_then(|s| s.to_str()).unwrap_or(&self.file_name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub source: Source,
    #[serde(skip)]
    pub extra: Map<String, Value>,
}

/// Counters collected while loading a dataset from disk.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    /// Boxes that overshot the image and were clamped.
    pub clamped: usize,
    /// Boxes with no area left after clamping; dropped.
    pub rejected: Vec<AnnotationId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCOCO {
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    categories: CategoryTable,
    extra: Map<String, Value>,
    by_image: BTreeMap<ImageId, Vec<usize>>,
    image_index: BTreeMap<ImageId, usize>,
}

// On-disk shapes. Unknown keys are accepted and kept in `extra` but never written back.
#[derive(Deserialize)]
struct RawDataset {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawImage {
    id: ImageId,
    file_name: String,
    width: u32,
    height: u32,
    page_index: Option<u32>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: AnnotationId,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: [f64; 4],
    #[serde(default)]
    source: Option<Source>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    images: &'a [ImageRecord],
    annotations: &'a [Annotation],
    categories: &'a [Category],
}

impl DatasetCOCO {
    /// Validates referential integrity, id uniqueness, page-index uniqueness
    /// and that every box lies inside its image.
    pub fn new(images: Vec<ImageRecord>, annotations: Vec<Annotation>) -> Result<Self, DatasetError> {
        let categories = CategoryTable::standard();
        let mut image_index = BTreeMap::new();
        let mut pages = BTreeSet::new();
        for (i, img) in images.iter().enumerate() {
            if img.width == 0 || img.height == 0 {
                return Err(DatasetError::Invalid(format!("image {} has zero size", img.id)));
            }
            if image_index.insert(img.id, i).is_some() {
                return Err(DatasetError::Invalid(format!("duplicate image id {}", img.id)));
            }
            if !pages.insert(img.page_index) {
                return Err(DatasetError::Invalid(format!("duplicate page_index {}", img.page_index)));
            }
        }
        let mut ann_ids = BTreeSet::new();
        let mut by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        for (i, ann) in annotations.iter().enumerate() {
            if !ann_ids.insert(ann.id) {
                return Err(DatasetError::Invalid(format!("duplicate annotation id {}", ann.id)));
            }
            let Some(&img_pos) = image_index.get(&ann.image_id) else {
                return Err(DatasetError::Invalid(format!(
                    "annotation {} references unknown image {}",
                    ann.id, ann.image_id
                )));
            };
            if !categories.contains(ann.category_id) {
                return Err(DatasetError::Invalid(format!(
                    "annotation {} has unknown category {}",
                    ann.id, ann.category_id
                )));
            }
            let img = &images[img_pos];
            if !ann.bbox.fits_within(img.width as f64, img.height as f64) {
                return Err(DatasetError::Invalid(format!(
                    "annotation {} bbox {} exceeds image {} ({}x{})",
                    ann.id, ann.bbox, img.id, img.width, img.height
                )));
            }
            by_image.entry(ann.image_id).or_default().push(i);
        }
        for idxs in by_image.values_mut() {
            idxs.sort_by_key(|&i| annotations[i].id);
        }
        Ok(Self { images, annotations, categories, extra: Map::new(), by_image, image_index })
    }

    pub fn from_json_str(text: &str) -> Result<(Self, LoadReport), DatasetError> {
        let raw: RawDataset = serde_json::from_str(text)?;
        if !raw.categories.is_empty() {
            CategoryTable::from_entries(raw.categories).map_err(DatasetError::Invalid)?;
        }
        let has_pages = raw.images.iter().filter(|i| i.page_index.is_some()).count();
        if has_pages != 0 && has_pages != raw.images.len() {
            return Err(DatasetError::Invalid("page_index present on some images but not all".into()));
        }
        let images: Vec<ImageRecord> = raw
            .images
            .into_iter()
            .enumerate()
            .map(|(pos, r)| ImageRecord {
                id: r.id,
                file_name: r.file_name,
                width: r.width,
                height: r.height,
                page_index: r.page_index.unwrap_or(pos as u32),
                extra: r.extra,
            })
            .collect();
        let dims: BTreeMap<ImageId, (f64, f64)> =
            images.iter().map(|i| (i.id, (i.width as f64, i.height as f64))).collect();

        let mut report = LoadReport::default();
        let mut annotations = Vec::with_capacity(raw.annotations.len());
        for r in raw.annotations {
            let [x, y, w, h] = r.bbox;
            if !(w > 0.0 && h > 0.0) {
                report.rejected.push(r.id);
                continue;
            }
            let Some(&(iw, ih)) = dims.get(&r.image_id) else {
                return Err(DatasetError::Invalid(format!(
                    "annotation {} references unknown image {}",
                    r.id, r.image_id
                )));
            };
            let Some(bbox) = BBox::clamped(x, y, w, h, iw, ih) else {
                report.rejected.push(r.id);
                continue;
            };
            if bbox.to_array() != [x, y, w, h] {
                report.clamped += 1;
            }
            annotations.push(Annotation {
                id: r.id,
                image_id: r.image_id,
                category_id: r.category_id,
                bbox,
                source: r.source.unwrap_or(Source::Merged),
                extra: r.extra,
            });
        }
        if report.clamped > 0 || !report.rejected.is_empty() {
            tracing::warn!(clamped = report.clamped, rejected = report.rejected.len(), "annotations adjusted at load");
        }
        let mut ds = Self::new(images, annotations)?;
        ds.extra = raw.extra;
        Ok((ds, report))
    }

    pub fn load(path: &Path) -> Result<(Self, LoadReport), DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text)
    }

    /// Pretty-printed COCO JSON with a trailing newline. Images keep their
    /// stored order; annotations are written in stored order.
    pub fn to_json_string(&self) -> String {
        let out =
            DatasetOut { images: &self.images, annotations: &self.annotations, categories: self.categories.entries() };
        let mut s = serde_json::to_string_pretty(&out).expect("dataset serialization is infallible");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        fs::write(path, self.to_json_string()).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Top-level keys read from disk outside the known schema.
    pub fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }

    pub fn categories(&self) -> &CategoryTable {
        &self.categories
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn contains_image(&self, id: ImageId) -> bool {
        self.image_index.contains_key(&id)
    }

    pub fn image_ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.images.iter().map(|i| i.id)
    }

    /// Annotations of one image in ascending annotation id.
    pub fn annotations_for(&self, image_id: ImageId) -> impl Iterator<Item = &Annotation> + '_ {
        self.by_image.get(&image_id).into_iter().flatten().map(move |&i| &self.annotations[i])
    }

    /// Sub-dataset holding only the given images and their annotations.
    pub fn restrict(&self, ids: &BTreeSet<ImageId>) -> Result<Self, DatasetError> {
        if let Some(missing) = ids.iter().find(|id| !self.contains_image(**id)) {
            return Err(DatasetError::Invalid(format!("image {missing} is not in the dataset")));
        }
        let images = self.images.iter().filter(|i| ids.contains(&i.id)).cloned().collect();
        let annotations = self.annotations.iter().filter(|a| ids.contains(&a.image_id)).cloned().collect();
        Self::new(images, annotations)
    }
}
