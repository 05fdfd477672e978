//! The online calibrators and their building blocks.

mod alpha;
mod calibrator;
mod ibp;
mod quantile;
mod relax;

pub use alpha::{AlphaStep, AlphaTracker, CoverageBound};
pub use calibrator::{
    Calibrator, CalibratorConfig, EventRecord, FeatureScore, Method, StepOutcome, WindowEntry,
};
pub use ibp::{interval_ibp, PredictionInterval};
pub use quantile::WeightedScoreDistribution;
pub use relax::{band_radius, interval_linear_relaxation, BandEstimator};
