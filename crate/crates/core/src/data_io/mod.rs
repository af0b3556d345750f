//! Cubes, labels and splits on disk, zero-centering, and synthetic data.

mod centering;
mod cube;
pub mod labels;
pub mod synthetic;

pub use centering::{center, compute_band_means, uncenter, BandMeans};
pub use cube::{cube_header, encode_payload, load_cube, payload_path, write_cube, CubeHeader, SpectralCube};
pub use labels::{
    load_class_labels, load_patch_split, load_patches, load_pixel_split, load_targets, write_class_labels,
    write_patch_split, write_patches, write_pixel_split, write_rows, write_targets, ClassLabels, PatchMembership,
    PatchSplit, PatchTargets, PixelSplit, SplitRole, UNLABELED,
};
pub use synthetic::{
    generate_classification, generate_regression, generate_shared_shapes, generate_synthetic, random_partition,
    SyntheticClassification, SyntheticRegression, SyntheticTruth,
};
