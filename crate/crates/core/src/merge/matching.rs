use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::sources::SourceObject;
use crate::geometry::iou;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub left: String,
    pub right: String,
    pub iou: f64,
}

/// Outcome of a one-to-one box alignment between two object lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Accepted pairs, in acceptance order.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_left: Vec<String>,
    pub unmatched_right: Vec<String>,
}

impl MatchReport {
    pub fn partner_of_left(&self, left: &str) -> Option<&MatchedPair> {
        self.pairs.iter().find(|p| p.left == left)
    }

    pub fn partner_of_right(&self, right: &str) -> Option<&MatchedPair> {
        self.pairs.iter().find(|p| p.right == right)
    }
}

/// Greedy one-to-one matching: every cross pair with IoU at or above
/// `min_iou` is ranked by IoU (descending), then left id, then right id, and
/// accepted when neither side is taken yet.
pub fn match_boxes(left: &[SourceObject], right: &[SourceObject], min_iou: f64) -> MatchReport {
    let mut candidates = Vec::new();
    for (li, l) in left.iter().enumerate() {
        for (ri, r) in right.iter().enumerate() {
            let v = iou(&l.bbox, &r.bbox);
            if v >= min_iou && v > 0.0 {
                candidates.push((v, li, ri));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| left[a.1].native_id.cmp(&left[b.1].native_id))
            .then_with(|| right[a.2].native_id.cmp(&right[b.2].native_id))
    });

    let mut left_taken = vec![false; left.len()];
    let mut right_taken = vec![false; right.len()];
    let mut report = MatchReport::default();
    for (v, li, ri) in candidates {
        if left_taken[li] || right_taken[ri] {
            continue;
        }
        left_taken[li] = true;
        right_taken[ri] = true;
        report.pairs.push(MatchedPair { left: left[li].native_id.clone(), right: right[ri].native_id.clone(), iou: v });
    }
    report.unmatched_left =
        left.iter().zip(&left_taken).filter(|(_, t)| !**t).map(|(o, _)| o.native_id.clone()).collect();
    report.unmatched_right =
        right.iter().zip(&right_taken).filter(|(_, t)| !**t).map(|(o, _)| o.native_id.clone()).collect();
    report
}
