//! Dataset ingestion, grayscale conversion, standardization and
//! deterministic augmentation.

mod augment;
mod dataset;
mod preprocess;
pub mod synthetic;

pub use augment::{augment, AugmentationPolicy};
pub use dataset::{
    data_root, load_dataset, write_dataset, LabeledImageSet, Manifest, ManifestEntry, Split,
    DATA_ROOT_ENV, MANIFEST_FILE,
};
pub use preprocess::{
    destandardize, standardize, standardize_set, to_grayscale, StandardizationStats, GRAY_WEIGHTS,
};
