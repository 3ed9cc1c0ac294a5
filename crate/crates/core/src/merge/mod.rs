//! Fusion of PAGE XML, MEI and SVG annotations into one COCO dataset.
//!
//! Per page, SVG rectangles are aligned with MEI zones and PAGE XML staff
//! regions with MEI staff zones. Every aligned group becomes one annotation;
//! everything left over becomes an annotation on its own. The geometry of a
//! group comes from SVG when present, then PAGE XML, then MEI, and its class
//! from the MEI element kind.

mod matching;
mod sources;

pub use matching::{match_boxes, MatchReport, MatchedPair};
pub use sources::{
    parse_mei, parse_pagexml, parse_svg_rects, ParseOutput, SourceError, SourceKind, SourceObject,
    MEI_REFERENCING_ELEMENTS,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use crate::categories::{CategoryId, CategoryTable, DISCARD, STAFF};
use crate::dataset::{Annotation, AnnotationId, DatasetCOCO, DatasetError, ImageId, ImageRecord, Source};
use crate::geometry::BBox;

pub const DEFAULT_MIN_IOU: f64 = 0.25;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("{path}: {source}")]
    Source {
        path: PathBuf,
        #[source]
        source: SourceError,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid merge config: {0}")]
    Config(String),
    #[error("no image record for page input {0}")]
    UnknownPage(ImageId),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Maps source-native kinds and label hints to category names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KindMapping(BTreeMap<String, String>);

impl Default for KindMapping {
    fn default() -> Self {
        let pairs = [
            ("zone/neume", "neume"),
            ("TextLine", "line"),
            ("zone/clef", "clef"),
            ("zone/staff", "staff"),
            ("tetragram", "staff"),
            ("zone/divLine", "musicDelimiter"),
            ("TextRegion", "text"),
            ("zone/custos", "custos"),
            ("MusicTextRegion", "musicText"),
        ];
        Self(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }
}

impl KindMapping {
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.0
    }

    pub fn insert(&mut self, key: impl Into<String>, category: impl Into<String>) {
        self.0.insert(key.into(), category.into());
    }

    fn validate(&self, table: &CategoryTable) -> Result<(), MergeError> {
        for (k, v) in &self.0 {
            if table.id_of(v).is_none() {
                return Err(MergeError::Config(format!("mapping {k:?} -> {v:?}: unknown category")));
            }
        }
        Ok(())
    }

    /// Resolution order: label hint in the mapping, label hint naming a
    /// category, kind in the mapping, else `discard`.
    pub fn resolve(&self, table: &CategoryTable, kind: &str, label_hint: &str) -> CategoryId {
        let lookup = |key: &str| self.0.get(key).and_then(|name| table.id_of(name));
        if !label_hint.is_empty() {
            if let Some(id) = lookup(label_hint).or_else(|| table.id_of(label_hint)) {
                return id;
            }
        }
        lookup(kind).unwrap_or(DISCARD)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub min_iou: f64,
    /// Entries layered over the default mapping.
    pub mapping: KindMapping,
    /// Start from an empty mapping instead of the default one.
    pub replace_default_mapping: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { min_iou: DEFAULT_MIN_IOU, mapping: KindMapping::default(), replace_default_mapping: false }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeConfigFile {
    #[serde(default)]
    min_iou: Option<f64>,
    #[serde(default)]
    mapping: BTreeMap<String, String>,
    #[serde(default)]
    replace_default_mapping: bool,
}

impl MergeConfig {
    pub fn from_json_str(text: &str) -> Result<Self, MergeError> {
        let file: MergeConfigFile = serde_json::from_str(text).map_err(|e| MergeError::Config(e.to_string()))?;
        let mut mapping =
            if file.replace_default_mapping { KindMapping(BTreeMap::new()) } else { KindMapping::default() };
        for (k, v) in file.mapping {
            mapping.insert(k, v);
        }
        let cfg = Self {
            min_iou: file.min_iou.unwrap_or(DEFAULT_MIN_IOU),
            mapping,
            replace_default_mapping: file.replace_default_mapping,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MergeError> {
        let text = fs::read_to_string(path).map_err(|source| MergeError::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), MergeError> {
        if !(self.min_iou > 0.0 && self.min_iou <= 1.0) {
            return Err(MergeError::Config(format!("min_iou must be in (0, 1], got {}", self.min_iou)));
        }
        self.mapping.validate(&CategoryTable::standard())
    }
}

/// Everything read for one page, already parsed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PageSources {
    pub pagexml: Vec<SourceObject>,
    pub mei: Vec<SourceObject>,
    pub svg: Vec<SourceObject>,
    /// Parse-time warnings, one entry per skipped object.
    pub warnings: Vec<String>,
}

impl PageSources {
    pub fn object_count(&self) -> usize {
        self.pagexml.len() + self.mei.len() + self.svg.len()
    }
}

/// What became of one source object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Disposition {
    /// Produced the annotation (and supplied its class).
    Emitted { annotation_id: AnnotationId },
    /// Folded into an annotation emitted for a matched partner.
    Absorbed { annotation_id: AnnotationId },
    /// Dropped: no area left inside the image.
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFate {
    pub source: SourceKind,
    pub native_id: String,
    #[serde(flatten)]
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageReport {
    pub image_id: ImageId,
    pub file_name: String,
    /// SVG rectangles (left) against MEI zones (right).
    pub svg_mei: MatchReport,
    /// PAGE XML staff regions (left) against MEI staff zones (right).
    pub staff: MatchReport,
    pub annotations: usize,
    pub warnings: Vec<String>,
    pub objects: Vec<ObjectFate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub pages: Vec<PageReport>,
    pub warning_count: usize,
    pub annotation_count: usize,
}

impl MergeReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }
}

struct Pending {
    category_id: CategoryId,
    bbox: BBox,
    source: Source,
    members: Vec<(SourceKind, String)>,
}

fn merge_page(
    page: &PageSources,
    image: &ImageRecord,
    config: &MergeConfig,
    table: &CategoryTable,
    next_id: &mut AnnotationId,
) -> (Vec<Annotation>, PageReport) {
    let resolve = |o: &SourceObject| config.mapping.resolve(table, &o.kind, &o.label_hint);
    let svg_mei = match_boxes(&page.svg, &page.mei, config.min_iou);

    let pagexml_staff: Vec<SourceObject> = page.pagexml.iter().filter(|o| resolve(o) == STAFF).cloned().collect();
    let mei_staff: Vec<SourceObject> = page.mei.iter().filter(|o| resolve(o) == STAFF).cloned().collect();
    let staff = match_boxes(&pagexml_staff, &mei_staff, config.min_iou);

    let svg_by_id: BTreeMap<&str, &SourceObject> = page.svg.iter().map(|o| (o.native_id.as_str(), o)).collect();
    let pagexml_by_id: BTreeMap<&str, &SourceObject> = page.pagexml.iter().map(|o| (o.native_id.as_str(), o)).collect();

    let mut pending = Vec::new();
    let mut absorbed_svg = BTreeSet::new();
    let mut absorbed_pagexml = BTreeSet::new();
    for m in &page.mei {
        let mut members = vec![(SourceKind::Mei, m.native_id.clone())];
        let mut bbox = m.bbox;
        let svg_partner = svg_mei.partner_of_right(&m.native_id).map(|p| svg_by_id[p.left.as_str()]);
        let page_partner = staff.partner_of_right(&m.native_id).map(|p| pagexml_by_id[p.left.as_str()]);
        if let Some(p) = page_partner {
            bbox = p.bbox;
            members.push((SourceKind::Pagexml, p.native_id.clone()));
            absorbed_pagexml.insert(p.native_id.as_str());
        }
        if let Some(s) = svg_partner {
            bbox = s.bbox;
            members.push((SourceKind::Svg, s.native_id.clone()));
            absorbed_svg.insert(s.native_id.as_str());
        }
        let source = if members.len() > 1 { Source::Merged } else { Source::Mei };
        pending.push(Pending { category_id: resolve(m), bbox, source, members });
    }
    for s in page.svg.iter().filter(|s| !absorbed_svg.contains(s.native_id.as_str())) {
        pending.push(Pending {
            category_id: resolve(s),
            bbox: s.bbox,
            source: Source::Svg,
            members: vec![(SourceKind::Svg, s.native_id.clone())],
        });
    }
    for p in page.pagexml.iter().filter(|p| !absorbed_pagexml.contains(p.native_id.as_str())) {
        pending.push(Pending {
            category_id: resolve(p),
            bbox: p.bbox,
            source: Source::Pagexml,
            members: vec![(SourceKind::Pagexml, p.native_id.clone())],
        });
    }

    let (iw, ih) = (image.width as f64, image.height as f64);
    let mut warnings = page.warnings.clone();
    let mut annotations = Vec::new();
    let mut objects = Vec::new();
    for item in pending {
        match item.bbox.clamp_to(iw, ih) {
            Some(bbox) => {
                if bbox != item.bbox {
                    warnings.push(format!("{:?} {}: clamped to the image", item.members[0].0, item.members[0].1));
                }
                let id = *next_id;
                *next_id += 1;
                annotations.push(Annotation {
                    id,
                    image_id: image.id,
                    category_id: item.category_id,
                    bbox,
                    source: item.source,
                    extra: Map::new(),
                });
                for (i, (source, native_id)) in item.members.into_iter().enumerate() {
                    let disposition = if i == 0 {
                        Disposition::Emitted { annotation_id: id }
                    } else {
                        Disposition::Absorbed { annotation_id: id }
                    };
                    objects.push(ObjectFate { source, native_id, disposition });
                }
            }
            None => {
                let reason = format!("box {} lies outside the {}x{} image", item.bbox, image.width, image.height);
                warnings.push(format!("{:?} {}: {reason}", item.members[0].0, item.members[0].1));
                for (source, native_id) in item.members {
                    objects.push(ObjectFate {
                        source,
                        native_id,
                        disposition: Disposition::Rejected { reason: reason.clone() },
                    });
                }
            }
        }
    }
    if page.object_count() == 0 {
        warnings.push("page has no objects in any source".to_string());
        tracing::warn!(image = image.id, file = %image.file_name, "page has no annotations");
    }
    let report = PageReport {
        image_id: image.id,
        file_name: image.file_name.clone(),
        svg_mei,
        staff,
        annotations: annotations.len(),
        warnings,
        objects,
    };
    (annotations, report)
}

/// Fuses per-page sources into a dataset. Pages are visited in page order and
/// annotation ids are assigned sequentially from 1, so identical inputs give
/// identical output.
pub fn merge_sources(
    pages: &BTreeMap<ImageId, PageSources>,
    images: Vec<ImageRecord>,
    config: &MergeConfig,
) -> Result<(DatasetCOCO, MergeReport), MergeError> {
    config.validate()?;
    if let Some(id) = pages.keys().find(|id| !images.iter().any(|i| i.id == **id)) {
        return Err(MergeError::UnknownPage(*id));
    }
    let table = CategoryTable::standard();
    let mut order: Vec<&ImageRecord> = images.iter().collect();
    order.sort_by_key(|i| (i.page_index, i.id));

    let empty = PageSources::default();
    let mut next_id: AnnotationId = 1;
    let mut annotations = Vec::new();
    let mut report = MergeReport::default();
    for image in order {
        let page = pages.get(&image.id).unwrap_or(&empty);
        let (anns, page_report) = merge_page(page, image, config, &table, &mut next_id);
        annotations.extend(anns);
        report.warning_count += page_report.warnings.len();
        report.pages.push(page_report);
    }
    report.annotation_count = annotations.len();
    let dataset = DatasetCOCO::new(images, annotations)?;
    Ok((dataset, report))
}

/// Directories holding the per-page source documents, associated with images
/// by file-name stem: `<stem>.xml` (PAGE), `<stem>.mei` or `<stem>.xml` (MEI),
/// `<stem>.svg`. A missing file means the source has nothing for that page.
#[derive(Debug, Clone, Default)]
pub struct SourceDirs {
    pub pagexml: Option<PathBuf>,
    pub mei: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>, MergeError> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(MergeError::Io { path: path.to_path_buf(), source }),
    }
}

fn first_existing(dir: &Path, stem: &str, exts: &[&str]) -> Result<Option<(PathBuf, Vec<u8>)>, MergeError> {
    for ext in exts {
        let path = dir.join(format!("{stem}.{ext}"));
        if let Some(bytes) = read_optional(&path)? {
            return Ok(Some((path, bytes)));
        }
    }
    Ok(None)
}

pub fn load_page_sources(dirs: &SourceDirs, stem: &str) -> Result<PageSources, MergeError> {
    type Parser = fn(&[u8]) -> Result<ParseOutput, SourceError>;
    let mut page = PageSources::default();
    let specs: [(&Option<PathBuf>, &[&str], Parser, SourceKind); 3] = [
        (&dirs.pagexml, &["xml"], parse_pagexml, SourceKind::Pagexml),
        (&dirs.mei, &["mei", "xml"], parse_mei, SourceKind::Mei),
        (&dirs.svg, &["svg"], parse_svg_rects, SourceKind::Svg),
    ];
    for (dir, exts, parse, kind) in specs {
        let Some(dir) = dir else { continue };
        let Some((path, bytes)) = first_existing(dir, stem, exts)? else { continue };
        let parsed = parse(&bytes).map_err(|source| MergeError::Source { path: path.clone(), source })?;
        page.warnings.extend(parsed.warnings.into_iter().map(|w| format!("{}: {w}", path.display())));
        match kind {
            SourceKind::Pagexml => page.pagexml = parsed.objects,
            SourceKind::Mei => page.mei = parsed.objects,
            SourceKind::Svg => page.svg = parsed.objects,
        }
    }
    Ok(page)
}

/// Reads an image manifest: a JSON array of image records.
pub fn load_image_manifest(path: &Path) -> Result<Vec<ImageRecord>, MergeError> {
    let text = fs::read_to_string(path).map_err(|source| MergeError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| MergeError::Config(format!("image manifest {}: {e}", path.display())))
}

/// Per-class annotation counts and the mean number of annotations per image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    /// Keyed by category name, in category-id order.
    pub counts: Vec<(String, u64)>,
    pub total: u64,
    pub images: usize,
    pub mean_per_image: f64,
}

impl DatasetStats {
    pub fn count(&self, name: &str) -> u64 {
        self.counts.iter().find(|(n, _)| n == name).map_or(0, |(_, c)| *c)
    }

    /// Classes with at least one annotation.
    pub fn nonzero(&self) -> BTreeMap<&str, u64> {
        self.counts.iter().filter(|(_, c)| *c > 0).map(|(n, c)| (n.as_str(), *c)).collect()
    }
}

pub fn dataset_stats(ds: &DatasetCOCO) -> DatasetStats {
    let table = ds.categories();
    let mut per_id = vec![0u64; table.len()];
    for a in ds.annotations() {
        per_id[a.category_id as usize] += 1;
    }
    let total: u64 = per_id.iter().sum();
    let images = ds.images().len();
    let counts = table.entries().iter().map(|c| (c.name.clone(), per_id[c.id as usize])).collect();
    let mean_per_image = if images == 0 { 0.0 } else { total as f64 / images as f64 };
    DatasetStats { counts, total, images, mean_per_image }
}
