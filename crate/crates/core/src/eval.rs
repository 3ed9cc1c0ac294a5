//! Detection metrics: greedy matching, interpolated AP, mAP over IoU
//! thresholds, and precision/recall/F1 at a single confidence operating point.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::categories::CategoryId;
use crate::dataset::{Annotation, AnnotationId, DatasetCOCO, ImageId};
use crate::geometry::{iou, BBox};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// A predicted box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("detection {index} references image {image_id}, which is not in the evaluated set")]
    ForeignImage { index: usize, image_id: ImageId },
    #[error("detection {index} has unknown category {category_id}")]
    UnknownCategory { index: usize, category_id: CategoryId },
    #[error("detection {index} has score {score} outside [0, 1]")]
    BadScore { index: usize, score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Mean of the precision envelope sampled at recall 0, 0.01, ..., 1.
    Points101,
    /// Area under the precision envelope at every recall change.
    AllPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "threshold")]
pub enum OperatingPoint {
    /// Confidence threshold that maximizes micro-averaged F1 at IoU 0.5.
    MaxF1,
    /// Detections scoring at least this value count.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub interpolation: Interpolation,
    pub operating_point: OperatingPoint,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { interpolation: Interpolation::Points101, operating_point: OperatingPoint::MaxF1 }
    }
}

/// Matching result for one detection, in score-descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMatch {
    /// Position of the detection in the caller's list.
    pub index: usize,
    pub score: f64,
    pub tp: bool,
    pub matched_gt: Option<AnnotationId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub detections: Vec<DetectionMatch>,
    pub gt_count: usize,
    pub fn_count: usize,
}

impl MatchOutcome {
    pub fn tp_count(&self) -> usize {
        self.detections.iter().filter(|d| d.tp).count()
    }
}

fn by_score_desc(dets: &[Detection], a: usize, b: usize) -> Ordering {
    dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b))
}

/// Greedy matching of one class. Detections are visited by descending score
/// (ties in input order); each claims the still-free ground-truth box of the
/// same image with the highest IoU, provided it reaches `iou_thr`.
pub fn match_detections(dets: &[Detection], gts: &[Annotation], class_id: CategoryId, iou_thr: f64) -> MatchOutcome {
    let mut by_image: BTreeMap<ImageId, Vec<&Annotation>> = BTreeMap::new();
    for g in gts.iter().filter(|g| g.category_id == class_id) {
        by_image.entry(g.image_id).or_default().push(g);
    }
    for group in by_image.values_mut() {
        group.sort_by_key(|g| g.id);
    }
    let gt_count: usize = by_image.values().map(Vec::len).sum();
    let mut used: BTreeSet<AnnotationId> = BTreeSet::new();

    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].category_id == class_id).collect();
    order.sort_by(|&a, &b| by_score_desc(dets, a, b));

    let mut detections = Vec::with_capacity(order.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(f64, AnnotationId)> = None;
        for g in by_image.get(&d.image_id).into_iter().flatten() {
            if used.contains(&g.id) {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v > 0.0 && v >= iou_thr && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, g.id));
            }
        }
        if let Some((_, gid)) = best {
            used.insert(gid);
        }
        detections.push(DetectionMatch { index: i, score: d.score, tp: best.is_some(), matched_gt: best.map(|b| b.1) });
    }
    MatchOutcome { gt_count, fn_count: gt_count - used.len(), detections }
}

/// AP of a matched, score-ordered detection list. `None` without ground truth.
pub fn interpolated_ap(outcome: &MatchOutcome, interpolation: Interpolation) -> Option<f64> {
    let n_gt = outcome.gt_count;
    if n_gt == 0 {
        return None;
    }
    let mut tp_cum = Vec::with_capacity(outcome.detections.len());
    let mut precision = Vec::with_capacity(outcome.detections.len());
    let mut tp = 0usize;
    for (k, d) in outcome.detections.iter().enumerate() {
        tp += d.tp as usize;
        tp_cum.push(tp);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // envelope: best precision at this or any later (higher-recall) point
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    match interpolation {
        Interpolation::Points101 => {
            let mut sum = 0.0;
            let mut j = 0;
            for level in 0..=100usize {
                // recall >= level/100  <=>  100 * tp >= level * n_gt
                while j < tp_cum.len() && 100 * tp_cum[j] < level * n_gt {
                    j += 1;
                }
                if j == tp_cum.len() {
                    break;
                }
                sum += precision[j];
            }
            Some(sum / 101.0)
        }
        Interpolation::AllPoints => {
            let mut area = 0.0;
            let mut prev_tp = 0;
            for (k, &t) in tp_cum.iter().enumerate() {
                if t > prev_tp {
                    area += (t - prev_tp) as f64 / n_gt as f64 * precision[k];
                    prev_tp = t;
                }
            }
            Some(area)
        }
    }
}

/// 101-point interpolated AP of one class at one IoU threshold.
pub fn average_precision(dets: &[Detection], gts: &[Annotation], class_id: CategoryId, iou_thr: f64) -> Option<f64> {
    interpolated_ap(&match_detections(dets, gts, class_id, iou_thr), Interpolation::Points101)
}

/// Harmonic mean of precision and recall; NaN when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        f64::NAN
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

mod nan_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map50: f64,
    pub map5095: f64,
    pub precision: f64,
    pub recall: f64,
    /// NaN exactly when precision + recall is zero; stored as `null` in JSON.
    #[serde(with = "nan_as_null")]
    pub f1: f64,
    /// AP at IoU 0.5 for every class that has ground truth.
    pub per_class_ap50: BTreeMap<CategoryId, f64>,
    /// Confidence threshold at which precision and recall were taken.
    pub confidence_threshold: Option<f64>,
}

impl MetricsReport {
    /// Same values, NaN-aware: two NaN F1 scores compare equal.
    pub fn same_as(&self, other: &Self) -> bool {
        let f1_eq = (self.f1.is_nan() && other.f1.is_nan()) || self.f1 == other.f1;
        f1_eq
            && self.map50 == other.map50
            && self.map5095 == other.map5095
            && self.precision == other.precision
            && self.recall == other.recall
            && self.per_class_ap50 == other.per_class_ap50
            && self.confidence_threshold == other.confidence_threshold
    }
}

fn validate(dets: &[Detection], gt: &DatasetCOCO) -> Result<(), EvalError> {
    for (index, d) in dets.iter().enumerate() {
        if !gt.contains_image(d.image_id) {
            return Err(EvalError::ForeignImage { index, image_id: d.image_id });
        }
        if !gt.categories().contains(d.category_id) {
            return Err(EvalError::UnknownCategory { index, category_id: d.category_id });
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::BadScore { index, score: d.score });
        }
    }
    Ok(())
}

fn operating_point(outcomes: &[MatchOutcome], total_gt: usize, op: OperatingPoint) -> (f64, f64, f64, Option<f64>) {
    let mut scored: Vec<(f64, bool)> =
        outcomes.iter().flat_map(|o| o.detections.iter().map(|d| (d.score, d.tp))).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pr = |tp: usize, n: usize| {
        let p = if n == 0 { 0.0 } else { tp as f64 / n as f64 };
        let r = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
        (p, r)
    };
    match op {
        OperatingPoint::Fixed(threshold) => {
            let kept: Vec<_> = scored.iter().filter(|(s, _)| *s >= threshold).collect();
            let tp = kept.iter().filter(|(_, t)| *t).count();
            let (p, r) = pr(tp, kept.len());
            (p, r, f1_score(p, r), Some(threshold))
        }
        OperatingPoint::MaxF1 => {
            // F1 = 2 tp / (kept + total_gt); compared exactly on integers so
            // that equal F1 values really tie
            let mut best: Option<(usize, usize, f64)> = None;
            let mut tp = 0;
            let mut k = 0;
            while k < scored.len() {
                let s = scored[k].0;
                while k < scored.len() && scored[k].0 == s {
                    tp += scored[k].1 as usize;
                    k += 1;
                }
                let better = match best {
                    None => true,
                    Some((btp, bn, _)) => tp * (bn + total_gt) > btp * (k + total_gt),
                };
                if better {
                    best = Some((tp, k, s));
                }
            }
            match best {
                Some((tp, n, s)) => {
                    let (p, r) = pr(tp, n);
                    (p, r, f1_score(p, r), Some(s))
                }
                None => (0.0, 0.0, f64::NAN, None),
            }
        }
    }
}

/// Full report over a ground-truth set restricted to the evaluated images.
pub fn evaluate(dets: &[Detection], gt: &DatasetCOCO) -> Result<MetricsReport, EvalError> {
    evaluate_with(dets, gt, &EvalConfig::default())
}

pub fn evaluate_with(dets: &[Detection], gt: &DatasetCOCO, config: &EvalConfig) -> Result<MetricsReport, EvalError> {
    validate(dets, gt)?;
    let gts = gt.annotations();
    let classes: Vec<CategoryId> = gt.categories().ids().collect();
    let with_gt: Vec<CategoryId> =
        classes.iter().copied().filter(|c| gts.iter().any(|g| g.category_id == *c)).collect();

    let thresholds = coco_iou_thresholds();
    let per_threshold: Vec<Vec<(CategoryId, f64)>> = thresholds
        .par_iter()
        .map(|&t| {
            with_gt
                .iter()
                .filter_map(|&c| {
                    interpolated_ap(&match_detections(dets, gts, c, t), config.interpolation).map(|ap| (c, ap))
                })
                .collect()
        })
        .collect();
    let mean = |aps: &[(CategoryId, f64)]| {
        if aps.is_empty() {
            0.0
        } else {
            aps.iter().map(|(_, a)| a).sum::<f64>() / aps.len() as f64
        }
    };
    let map50 = mean(&per_threshold[0]);
    let map5095 = per_threshold.iter().map(|aps| mean(aps)).sum::<f64>() / thresholds.len() as f64;
    let per_class_ap50 = per_threshold[0].iter().copied().collect();

    let outcomes: Vec<MatchOutcome> = classes.iter().map(|&c| match_detections(dets, gts, c, 0.5)).collect();
    let (precision, recall, f1, confidence_threshold) = operating_point(&outcomes, gts.len(), config.operating_point);
    Ok(MetricsReport { map50, map5095, precision, recall, f1, per_class_ap50, confidence_threshold })
}
