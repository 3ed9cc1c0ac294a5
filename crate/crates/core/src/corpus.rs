//! Generated manuscript-like corpora for exercising the pipeline without the
//! real page images: ground truth with the reference class mix, and feature
//! vectors that cluster by simulated scribal style.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde_json::Map;

use crate::categories::{self, CategoryId, REFERENCE_COUNTS, REFERENCE_IMAGES, REFERENCE_TOTAL};
use crate::dataset::{Annotation, DatasetCOCO, ImageId, ImageRecord, Source};
use crate::geometry::BBox;
use crate::split::FeatureVector;

pub const PAGE_WIDTH: u32 = 1000;
pub const PAGE_HEIGHT: u32 = 1400;

/// Typical (width, height) of each class, in pixels on a 1000x1400 page.
fn typical_size(cat: CategoryId) -> (f64, f64) {
    match cat {
        categories::NEUME => (28.0, 24.0),
        categories::LINE => (620.0, 45.0),
        categories::DISCARD => (60.0, 60.0),
        categories::STAFF => (700.0, 90.0),
        categories::CLEF => (22.0, 50.0),
        categories::MUSIC_DELIMITER => (8.0, 80.0),
        categories::TEXT => (650.0, 300.0),
        categories::CUSTOS => (14.0, 30.0),
        _ => (120.0, 40.0),
    }
}

/// A corpus of `n_images` pages whose per-class annotation frequencies follow
/// the reference table, with about the same number of objects per page.
pub fn generate_dataset(n_images: usize, seed: u64) -> DatasetCOCO {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = WeightedIndex::new(REFERENCE_COUNTS).expect("reference counts are positive");
    let per_page = Poisson::new(REFERENCE_TOTAL as f64 / REFERENCE_IMAGES as f64).expect("positive rate");
    let (pw, ph) = (PAGE_WIDTH as f64, PAGE_HEIGHT as f64);

    let mut images = Vec::with_capacity(n_images);
    let mut annotations = Vec::new();
    for i in 0..n_images {
        let id = i as ImageId + 1;
        images.push(ImageRecord {
            id,
            file_name: format!("page_{id:03}.png"),
            width: PAGE_WIDTH,
            height: PAGE_HEIGHT,
            page_index: i as u32,
            extra: Map::new(),
        });
        let count = (per_page.sample(&mut rng) as usize).max(1);
        for _ in 0..count {
            let cat = classes.sample(&mut rng) as CategoryId;
            let (tw, th) = typical_size(cat);
            let w = (tw * rng.gen_range(0.7..1.3)).min(pw - 1.0);
            let h = (th * rng.gen_range(0.7..1.3)).min(ph - 1.0);
            let x = rng.gen_range(0.0..pw - w);
            let y = rng.gen_range(0.0..ph - h);
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id: id,
                category_id: cat,
                bbox: BBox::new(x, y, w, h).expect("sizes are positive"),
                source: Source::Merged,
                extra: Map::new(),
            });
        }
    }
    DatasetCOCO::new(images, annotations).expect("generated corpus is consistent")
}

/// Feature vectors for images `1..=n_images`. Consecutive pages share one of
/// `styles` random directions (as a scribe's hand would), plus noise.
pub fn generate_features(n_images: usize, dim: usize, styles: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::<f64>::new(0.0, 1.0).expect("valid normal");
    let centers: Vec<Vec<f64>> =
        (0..styles.max(1)).map(|_| (0..dim).map(|_| unit.sample(&mut rng).abs() + 0.1).collect()).collect();
    let run = n_images.div_ceil(centers.len()).max(1);
    (0..n_images)
        .map(|i| {
            let c = &centers[(i / run).min(centers.len() - 1)];
            let vector = c.iter().map(|v| (v + 0.35 * unit.sample(&mut rng)).abs() + 1e-3).collect();
            FeatureVector { image_id: i as ImageId + 1, vector }
        })
        .collect()
}
