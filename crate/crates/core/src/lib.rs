//! Poisson-blending data augmentation for lesion classification datasets.
//!
//! The crate curates a labeled image dataset in embedding space, pairs each
//! lesion with the most similar healthy-tissue images from other patients,
//! places the lesion where its box border best matches the target colours,
//! composites it by seamless cloning, and assembles class-balanced training
//! manifests that mix blended and externally inpainted samples.
//!
//! Modules:
//! - [`image`], [`manifest`], [`embeddings`]: domain types and file formats
//! - [`poisson`]: guided Poisson solver and seamless cloning
//! - [`curation`]: deduplication and pair selection
//! - [`roi`]: blending-location search
//! - [`balance`]: augmentation plans and rebalancing baselines
//! - [`pipeline`], [`stats`]: batch orchestration used by the `pbda` binary

pub mod balance;
pub mod curation;
pub mod embeddings;
pub mod error;
pub mod image;
pub mod manifest;
pub mod pipeline;
pub mod poisson;
pub mod roi;
pub mod seed;
pub mod stats;

pub use balance::{
    class_weights, plan_augmentation, resample, AugmentationPlan, ClassPlan, SamplingStrategy,
};
pub use curation::{deduplicate, distance, select_pairs, DedupConfig, PairAssignment, PairTarget};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use error::{Error, Result};
pub use image::{BBox, ImageBuffer};
pub use manifest::{load_manifest, Manifest, Origin, Sample};
pub use pipeline::{run_pipeline, PipelineConfig, RunOutput, RunReport};
pub use poisson::{
    assemble_system, seamless_clone, seamless_clone_via_correction, solve_system, GuidanceField,
    PoissonSystem, SolverConfig,
};
pub use roi::{border_pixels, roi_score, select_roi, RoiResult, RoiSearchConfig, ValidMask};
pub use stats::{stats, Stats};
