//! Clustering-based low-rank MIMO channel estimation for vehicles that pass
//! the same base station again and again.
//!
//! Training bursts from recurrent passages are estimated without
//! constraints (U-ML), whitened, grouped by an algebraic subspace
//! dissimilarity, and each group yields separable space-time eigenbases
//! that denoise later estimates by projection. No vehicle positions are
//! needed at any step.
//!
//! Pipeline: [`scenario::build_cell`] → [`scenario::generate_dataset`] →
//! [`clustering::dissimilarity_matrix`] → [`clustering::pam`] →
//! [`clustering::train_models`] → [`eval::run_trajectory`].

pub mod airlink;
pub mod channel;
pub mod clustering;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod numerics;
pub mod scenario;

pub use airlink::{NoiseConfig, NoiseModel, TrainingBurst};
pub use channel::{ArrayConfig, ChannelTaps, Dims, Direction, FadingDraw, Path, PathSet, PilotKind, Waveform};
pub use clustering::{
    ClaraOptions, ClusterModel, ClusteringResult, DissimilarityMatrix, KSelection, LinkConfig, PositionGrouping,
    Silhouette, TrainOptions,
};
pub use error::{Error, Result};
pub use estimator::{CFactors, Projector, RankRule, Ranks, SubspaceBases, UmlEstimate, WhitenedSeq};
pub use eval::{MseReport, SweepOptions, SweepRow, TrajectoryOptions};
pub use numerics::{CMatrix, CVector, C64};
pub use scenario::{Dataset, DatasetManifest, GeometryMode, Location, RegionLayout, Scenario, ScenarioConfig};
