//! Attention-guided refinement of class activation maps.
//!
//! The pipeline turns a backbone's features, classifier weights and
//! transformer attention into per-class seed maps:
//!
//! 1. [`compute_cam`] extracts the vanilla CAM of each labeled class.
//! 2. [`aggregate_attention`] averages raw attention over heads and layers.
//! 3. [`similarity`] scores how strongly two tokens share attention
//!    neighborhoods, and [`refine`] keeps only attention toward each token's
//!    top-k co-neighbors.
//! 4. [`diffuse`] spreads activation along the refined attention.
//!
//! [`eval`] thresholds the resulting maps into seed masks and scores them;
//! [`random_walk`] optionally refines maps with a boundary-gated walk.

pub mod array_io;
pub mod cam;
pub mod coneighbor;
pub mod diffusion;
pub mod error;
pub mod eval;
mod gemm;
pub mod grid;
pub mod manifest;
pub mod random_walk;
pub mod sparse;
pub mod synth;

pub use array_io::{read_array, write_array, ArrayData, ArrayFile, Dtype};
pub use cam::{
    aggregate_attention, compute_cam, upsample_bilinear, ActivationMap, AttentionMatrix, AttentionStack,
    ClassifierWeights, FeatureMap,
};
pub use coneighbor::{refine, similarity, RefinedAttention, SimilarityMatrix};
pub use diffusion::{ad_cam, diffuse, DiffusionConfig, PreparedAttention, DEFAULT_STEPS, DEFAULT_TOP_K};
pub use error::{Error, Result};
pub use eval::{
    confusion, miou, seed_mask, sensitivity_sweep, sweep_threshold, ConfusionStats, EvalImage, EvalReport, SeedMask,
    SensitivityRow,
};
pub use grid::Grid;
pub use manifest::Instance;
pub use random_walk::{build_transition, rw_refine, BoundaryMap, TransitionMatrix};
pub use sparse::CsrMatrix;
