//! Dataset I/O, the synthetic generator and injected features.

pub mod features;
pub mod image;
pub mod labels;
pub mod manifest;
pub mod synth;

pub use features::{extract_features, load_feature_file, standin_features, FeatureMatrix, Standardizer};
pub use image::load_image;
pub use labels::{LabelVector, ShapeClass};
pub use manifest::{load_manifest, DatasetManifest, ManifestRecord};
pub use synth::{gen_synthetic, SynthParams};
