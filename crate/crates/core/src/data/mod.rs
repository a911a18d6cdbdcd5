//! Image pairs, tiling, dataset schemes, stitching and synthetic data.

mod images;
pub mod io;
mod scheme;
pub mod synth;
mod tiling;

pub use images::{average_images, average_pair, binarize_mask, BinaryMask, ImagePair, ProbMap, MASK_THRESHOLD};
pub use scheme::{build_dataset, build_dataset_with_tile, prepare_dataset, scheme_views, DatasetScheme, PreparedDataset, View, DEFAULT_TILE};
pub use synth::{generate_synthetic, Ellipse, SynthConfig, SyntheticPair};
pub use tiling::{extract_image_tiles, extract_tiles, stitch, tile_plan, Sample, TilePlan};
