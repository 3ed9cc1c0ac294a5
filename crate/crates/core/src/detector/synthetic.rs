//! A deterministic stand-in detector whose skill grows with the number of
//! labeled training images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::categories::CategoryId;
use crate::dataset::{DatasetCOCO, ImageRecord};
use crate::eval::Detection;
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    /// Skill time constant, in training images.
    pub tau: f64,
    /// Box jitter at n = 0, as a fraction of the box dimension.
    pub jitter0: f64,
    pub jitter_floor: f64,
    /// Expected false positives per image at n = 0.
    pub fp_rate0: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { tau: 60.0, jitter0: 0.30, jitter_floor: 0.03, fp_rate0: 3.0, rng_seed: 0 }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(format!("tau must be positive, got {}", self.tau));
        }
        for (name, v) in [("jitter0", self.jitter0), ("jitter_floor", self.jitter_floor), ("fp_rate0", self.fp_rate0)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Probability that a ground-truth box is detected after training on `n` images.
    pub fn detect_probability(&self, n: usize) -> f64 {
        1.0 - (-(n as f64) / self.tau).exp()
    }

    pub fn jitter(&self, n: usize) -> f64 {
        self.jitter_floor.max(self.jitter0 * (-(n as f64) / self.tau).exp())
    }

    pub fn false_positive_rate(&self, n: usize) -> f64 {
        self.fp_rate0 * (-(n as f64) / self.tau).exp()
    }

    /// Detections for one image: a pure function of the parameters, `n`, the
    /// image and its ground truth. Each image draws from its own ChaCha
    /// stream, and every ground-truth box consumes exactly eight values, so
    /// results never depend on which other images share a request.
    pub fn predict_image(&self, n: usize, image: &ImageRecord, gt: &DatasetCOCO) -> Vec<Detection> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(image.id);
        let p = self.detect_probability(n);
        let jitter = self.jitter(n);
        let (iw, ih) = (image.width as f64, image.height as f64);
        let n_classes = gt.categories().len() as CategoryId;
        let mut out = Vec::new();

        for ann in gt.annotations_for(image.id) {
            let u: [f64; 8] = std::array::from_fn(|_| rng.gen::<f64>());
            if u[0] >= p {
                continue;
            }
            let category_id = if u[1] < p || n_classes < 2 {
                ann.category_id
            } else {
                // uniform over the other classes
                let k = ((u[2] * (n_classes - 1) as f64) as CategoryId).min(n_classes - 2);
                if k >= ann.category_id {
                    k + 1
                } else {
                    k
                }
            };
            let b = &ann.bbox;
            let shift = |v: f64| (2.0 * v - 1.0) * jitter;
            let x = b.x() + shift(u[3]) * b.w();
            let y = b.y() + shift(u[4]) * b.h();
            let w = b.w() * (1.0 + shift(u[5]));
            let h = b.h() * (1.0 + shift(u[6]));
            let Some(bbox) = BBox::clamped(x, y, w, h, iw, ih) else {
                continue;
            };
            let score = (p + (u[7] - 0.5) * 0.3).clamp(0.0, 1.0);
            out.push(Detection { image_id: image.id, category_id, bbox, score });
        }

        let rate = self.false_positive_rate(n);
        if rate > 0.0 {
            let count = Poisson::new(rate).expect("positive finite rate").sample(&mut rng) as usize;
            for _ in 0..count {
                let category_id = rng.gen_range(0..n_classes.max(1));
                let w = iw * rng.gen_range(0.02..0.2);
                let h = ih * rng.gen_range(0.02..0.2);
                let x = rng.gen_range(0.0..(iw - w));
                let y = rng.gen_range(0.0..(ih - h));
                let score = rng.gen_range(0.0..0.5);
                if let Ok(bbox) = BBox::new(x, y, w, h) {
                    out.push(Detection { image_id: image.id, category_id, bbox, score });
                }
            }
        }
        out
    }
}
