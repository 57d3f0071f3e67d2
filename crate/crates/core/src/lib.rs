//! Volumetric lesion segmentation toolkit.
//!
//! PET/CT pre-processing, foreground-oversampled patch sampling, training
//! objective evaluators, connected-component post-processing and the three
//! lesion metrics (Dice, false-positive volume, false-negative volume).

pub mod augment;
pub mod ccl;
pub mod error;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod postproc;
pub mod preproc;
pub mod rng;
pub mod sampler;

pub use ccl::{component_stats, label_components, size_histogram, ComponentStats, Connectivity};
pub use error::{Error, NiftiError, Result};
pub use grid::{overlap_count, voxel_volume_ml, Grid3, LabelMap, Mask, Volume};
