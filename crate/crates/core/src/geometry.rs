//! Axis-aligned boxes in absolute pixel space.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BBoxError {
    #[error("bbox has non-finite component: [{0}, {1}, {2}, {3}]")]
    NonFinite(f64, f64, f64, f64),
    #[error("bbox origin must be non-negative, got ({0}, {1})")]
    NegativeOrigin(f64, f64),
    #[error("bbox must have positive area, got {0}x{1}")]
    Degenerate(f64, f64),
}

/// Rectangle stored as top-left corner plus size, COCO style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, BBoxError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(BBoxError::NonFinite(x, y, w, h));
        }
        if x < 0.0 || y < 0.0 {
            return Err(BBoxError::NegativeOrigin(x, y));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(BBoxError::Degenerate(w, h));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from corner coordinates `(x0, y0)`-`(x1, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, BBoxError> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Intersects a raw `[x, y, w, h]` rectangle with the image frame
    /// `[0, width] x [0, height]`. Returns `None` when nothing of positive
    /// area is left or the input is not finite.
    pub fn clamped(x: f64, y: f64, w: f64, h: f64, width: f64, height: f64) -> Option<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return None;
        }
        let x0 = x.clamp(0.0, width);
        let y0 = y.clamp(0.0, height);
        let x1 = (x + w).clamp(0.0, width);
        let y1 = (y + h).clamp(0.0, height);
        Self::from_corners(x0, y0, x1, y1).ok()
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn fits_within(&self, width: f64, height: f64) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// Clamps this box to an image frame.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<Self> {
        Self::clamped(self.x, self.y, self.w, self.h, width, height)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(x, y, w, h).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union. Zero for disjoint or edge-touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = a.right().min(b.right()) - a.x.max(b.x);
    let iy = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 5., 5.)), 0.0);
        // overlap 1x2 = 2, union 4 + 4 - 2 = 6
        assert!((iou(&b(0., 0., 2., 2.), &b(1., 0., 2., 2.)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_boxes() {
        assert!(matches!(BBox::new(0., 0., 0., 1.), Err(BBoxError::Degenerate(..))));
        assert!(matches!(BBox::new(0., 0., 1., -1.), Err(BBoxError::Degenerate(..))));
        assert!(matches!(BBox::new(f64::NAN, 0., 1., 1.), Err(BBoxError::NonFinite(..))));
        assert!(matches!(BBox::new(-1., 0., 1., 1.), Err(BBoxError::NegativeOrigin(..))));
    }

    #[test]
    fn clamping() {
        let c = BBox::clamped(-5., 630., 20., 20., 640., 640.).unwrap();
        assert_eq!(c.to_array(), [0., 630., 15., 10.]);
        assert!(BBox::clamped(700., 0., 10., 10., 640., 640.).is_none());
        assert!(BBox::clamped(0., 0., f64::INFINITY, 10., 640., 640.).is_none());
    }

    #[test]
    fn serde_as_array() {
        let bx = b(1., 2., 3., 4.);
        let s = serde_json::to_string(&bx).unwrap();
        assert_eq!(s, "[1.0,2.0,3.0,4.0]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), bx);
        assert!(serde_json::from_str::<BBox>("[1,2,0,4]").is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..500.0f64, 0.0..500.0f64, 0.5..200.0f64, 0.5..200.0f64).prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_translation_invariant(a in arb_box(), c in arb_box(), tx in 0.0..300.0f64, ty in 0.0..300.0f64) {
            let shift = |bx: &BBox| b(bx.x() + tx, bx.y() + ty, bx.w(), bx.h());
            let before = iou(&a, &c);
            let after = iou(&shift(&a), &shift(&c));
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
