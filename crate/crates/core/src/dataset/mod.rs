//! On-disk formats, dataset statistics, training augmentation and tile
//! geometry for patch-wise inference.

mod annotation;
mod augment;
mod image_io;
mod layout;
mod stats;
mod tiling;

pub use annotation::{
    parse_annotations, parse_json, read_annotations, read_predictions, write_annotations, write_atomic,
    write_json_atomic, write_predictions, AnnotatedPoint, AnnotationDoc, PredictedPoint, PredictionDoc,
};
pub use augment::{augment, resize_bilinear, AugmentParams, SCALE_RANGE};
pub use image_io::{encode_png, image_dimensions, read_image, rgb_to_tensor, tensor_to_rgb, write_png, write_ppm};
pub use layout::{read_manifest, stem, write_manifest, DatasetLayout, LabeledImage, SplitManifest, SPLIT_NAMES};
pub use stats::{dataset_stats, DatasetStats};
pub use tiling::{
    extract_tile, merge_tile_predictions, pad_reflect, plan_tiles, reflect_index, MergedPredictions, TilePlan,
    TilePredictions,
};
