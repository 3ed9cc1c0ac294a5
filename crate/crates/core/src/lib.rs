//! Machinery for detection experiments on historical music manuscripts.

pub mod categories;
pub mod corpus;
pub mod dataset;
pub mod detector;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod merge;
pub mod split;
pub mod yolo;

pub use categories::{CategoryId, CategoryTable};
pub use dataset::{Annotation, DatasetCOCO, ImageId, ImageRecord, Source};
pub use geometry::{iou, BBox};
