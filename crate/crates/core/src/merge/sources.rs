//! Readers for the three annotation sources. Each returns the rectangles it
//! found plus a list of warnings for objects it had to skip.

use std::collections::{BTreeMap, BTreeSet};

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Pagexml,
    Mei,
    Svg,
}

/// A rectangle as read from one annotation tool, before fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceObject {
    pub source: SourceKind,
    /// Source-native element kind, e.g. `TextLine`, `zone/neume`, `rect`.
    pub kind: String,
    pub bbox: BBox,
    pub native_id: String,
    /// Source-native class attribute; empty when absent.
    pub label_hint: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutput {
    pub objects: Vec<SourceObject>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("{format:?} document is not valid UTF-8")]
    Encoding { format: SourceKind },
    #[error("{format:?} XML error at line {line}, column {column}: {message}")]
    Xml { format: SourceKind, line: u32, column: u32, message: String },
    #[error("{format:?} document has duplicate id {id:?}")]
    DuplicateId { format: SourceKind, id: String },
    #[error("SVG rect {id:?} carries a transform ({transform:?}); flatten transforms before export")]
    Transform { id: String, transform: String },
}

fn parse_xml(format: SourceKind, document: &[u8]) -> Result<Document<'_>, SourceError> {
    let text = std::str::from_utf8(document).map_err(|_| SourceError::Encoding { format })?;
    Document::parse(text).map_err(|e| {
        let pos = e.pos();
        SourceError::Xml { format, line: pos.row, column: pos.col, message: e.to_string() }
    })
}

fn element_id<'a>(node: Node<'a, '_>) -> Option<&'a str> {
    node.attribute((roxmltree::NS_XML_URI, "id")).or_else(|| node.attribute("id"))
}

fn claim_id(seen: &mut BTreeSet<String>, format: SourceKind, id: String) -> Result<String, SourceError> {
    if seen.insert(id.clone()) {
        Ok(id)
    } else {
        Err(SourceError::DuplicateId { format, id })
    }
}

fn parse_points(points: &str) -> Option<Vec<(f64, f64)>> {
    points
        .split_whitespace()
        .map(|pair| {
            let (x, y) = pair.split_once(',')?;
            Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
        })
        .collect()
}

const PAGE_ELEMENTS: [&str; 3] = ["TextRegion", "MusicRegion", "TextLine"];

/// PAGE XML: one object per `TextRegion`, `MusicRegion` and `TextLine` below
/// a `Page`, with the box taken as the min/max hull of its `Coords` polygon.
pub fn parse_pagexml(document: &[u8]) -> Result<ParseOutput, SourceError> {
    let doc = parse_xml(SourceKind::Pagexml, document)?;
    let mut out = ParseOutput::default();
    let mut seen = BTreeSet::new();
    let mut ordinal = 0usize;
    for page in doc.descendants().filter(|n| n.tag_name().name() == "Page") {
        for node in page.descendants().filter(|n| n.is_element()) {
            let kind = node.tag_name().name();
            if !PAGE_ELEMENTS.contains(&kind) {
                continue;
            }
            ordinal += 1;
            let id = element_id(node).map(str::to_string).unwrap_or_else(|| format!("{kind}#{ordinal}"));
            let id = claim_id(&mut seen, SourceKind::Pagexml, id)?;
            let coords = node
                .children()
                .find(|c| c.is_element() && c.tag_name().name() == "Coords")
                .and_then(|c| c.attribute("points"));
            let Some(coords) = coords else {
                out.warnings.push(format!("{kind} {id}: no Coords points, skipped"));
                continue;
            };
            let Some(points) = parse_points(coords) else {
                out.warnings.push(format!("{kind} {id}: unparsable points {coords:?}, skipped"));
                continue;
            };
            if points.len() < 3 {
                out.warnings.push(format!("{kind} {id}: polygon has {} points, skipped", points.len()));
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (x, y) in points {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            match BBox::from_corners(x0, y0, x1, y1) {
                Ok(bbox) => out.objects.push(SourceObject {
                    source: SourceKind::Pagexml,
                    kind: kind.to_string(),
                    bbox,
                    native_id: id,
                    label_hint: node.attribute("type").unwrap_or_default().to_string(),
                }),
                Err(e) => out.warnings.push(format!("{kind} {id}: {e}, skipped")),
            }
        }
    }
    Ok(out)
}

/// Elements whose `facs` reference turns a zone into an object.
pub const MEI_REFERENCING_ELEMENTS: [&str; 5] = ["neume", "clef", "custos", "divLine", "staff"];

struct Zone {
    id: String,
    bbox: Result<BBox, String>,
}

/// MEI: zones of the facsimile referenced by music elements through
/// `facs="#id"`. Each reference yields an object `zone/<element>`; zones nobody
/// references yield `zone/orphan`.
pub fn parse_mei(document: &[u8]) -> Result<ParseOutput, SourceError> {
    let doc = parse_xml(SourceKind::Mei, document)?;
    let mut out = ParseOutput::default();
    let mut seen = BTreeSet::new();

    let mut zones: Vec<Zone> = Vec::new();
    let mut zone_pos: BTreeMap<String, usize> = BTreeMap::new();
    for (n, node) in doc.descendants().filter(|n| n.tag_name().name() == "zone").enumerate() {
        let id = element_id(node).map(str::to_string).unwrap_or_else(|| format!("zone#{}", n + 1));
        let id = claim_id(&mut seen, SourceKind::Mei, id)?;
        let coord = |name: &str| node.attribute(name).and_then(|v| v.trim().parse::<i64>().ok());
        let bbox = match (coord("ulx"), coord("uly"), coord("lrx"), coord("lry")) {
            (Some(ulx), Some(uly), Some(lrx), Some(lry)) => {
                if lrx <= ulx || lry <= uly {
                    Err(format!("degenerate corners ({ulx},{uly})-({lrx},{lry})"))
                } else {
                    BBox::from_corners(ulx as f64, uly as f64, lrx as f64, lry as f64).map_err(|e| e.to_string())
                }
            }
            _ => Err("missing or non-integer ulx/uly/lrx/lry".to_string()),
        };
        zone_pos.insert(id.clone(), zones.len());
        zones.push(Zone { id, bbox });
    }

    let mut referenced = vec![false; zones.len()];
    let mut ordinal = 0usize;
    for node in doc.descendants().filter(|n| n.is_element()) {
        let Some(facs) = node.attribute("facs") else { continue };
        let name = node.tag_name().name();
        let target = facs.trim().trim_start_matches('#');
        let Some(&zi) = zone_pos.get(target) else {
            out.warnings.push(format!("{name} references missing zone {facs:?}, skipped"));
            continue;
        };
        referenced[zi] = true;
        if !MEI_REFERENCING_ELEMENTS.contains(&name) {
            continue;
        }
        ordinal += 1;
        let zone = &zones[zi];
        let id = element_id(node).map(str::to_string).unwrap_or_else(|| format!("{}@{name}#{ordinal}", zone.id));
        let id = claim_id(&mut seen, SourceKind::Mei, id)?;
        match &zone.bbox {
            Ok(bbox) => out.objects.push(SourceObject {
                source: SourceKind::Mei,
                kind: format!("zone/{name}"),
                bbox: *bbox,
                native_id: id,
                label_hint: node.attribute("type").unwrap_or_default().to_string(),
            }),
            Err(why) => out.warnings.push(format!("{name} {id} on zone {}: {why}, skipped", zone.id)),
        }
    }
    for (zone, _) in zones.iter().zip(&referenced).filter(|(_, r)| !**r) {
        match &zone.bbox {
            Ok(bbox) => out.objects.push(SourceObject {
                source: SourceKind::Mei,
                kind: "zone/orphan".to_string(),
                bbox: *bbox,
                native_id: zone.id.clone(),
                label_hint: String::new(),
            }),
            Err(why) => out.warnings.push(format!("orphan zone {}: {why}, skipped", zone.id)),
        }
    }
    Ok(out)
}

fn svg_length(v: &str) -> Option<f64> {
    v.trim().trim_end_matches("px").parse().ok()
}

/// SVG: every `rect` with `x`, `y`, `width`, `height`. Any transform on the
/// rect or one of its ancestors is refused.
pub fn parse_svg_rects(document: &[u8]) -> Result<ParseOutput, SourceError> {
    let doc = parse_xml(SourceKind::Svg, document)?;
    let mut out = ParseOutput::default();
    let mut seen = BTreeSet::new();
    for (n, node) in doc.descendants().filter(|n| n.tag_name().name() == "rect").enumerate() {
        let id = element_id(node).map(str::to_string).unwrap_or_else(|| format!("rect#{}", n + 1));
        if let Some(t) = node.ancestors().find_map(|a| a.attribute("transform")) {
            return Err(SourceError::Transform { id, transform: t.to_string() });
        }
        let id = claim_id(&mut seen, SourceKind::Svg, id)?;
        let x = node.attribute("x").map_or(Some(0.0), svg_length);
        let y = node.attribute("y").map_or(Some(0.0), svg_length);
        let w = node.attribute("width").and_then(svg_length);
        let h = node.attribute("height").and_then(svg_length);
        let (Some(x), Some(y), Some(w), Some(h)) = (x, y, w, h) else {
            out.warnings.push(format!("rect {id}: missing or unparsable geometry, skipped"));
            continue;
        };
        match BBox::new(x, y, w, h) {
            Ok(bbox) => {
                let label = node
                    .attribute("class")
                    .or_else(|| node.attributes().find(|a| a.name() == "label").map(|a| a.value()))
                    .unwrap_or_default();
                out.objects.push(SourceObject {
                    source: SourceKind::Svg,
                    kind: "rect".to_string(),
                    bbox,
                    native_id: id,
                    label_hint: label.to_string(),
                });
            }
            Err(e) => out.warnings.push(format!("rect {id}: {e}, skipped")),
        }
    }
    Ok(out)
}
