//! Leaf-width driven adaptive tiling for object-detection corpora.
//!
//! The pipeline: parse polygon annotations, measure a representative leaf
//! width per image, optionally swap in externally predicted widths, split the
//! corpus by leaf size, tile each image into overlapping squares sized by
//! its leaf width, emit detector-ready datasets, and score detections.

pub mod annotations;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod leafwidth;
pub mod partition;
pub mod tiler;
pub mod width;

pub use annotations::{BBox, DiseaseClass, ImageRecord, LabeledRegion, Point, Polygon};
pub use error::{Error, Result};
pub use leafwidth::LeafWidthRecord;
pub use tiler::{Detection, Tile, TileSpec};
