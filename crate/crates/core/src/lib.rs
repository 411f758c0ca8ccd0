//! Gesture meta features from 2-D pose keypoint time series, and the
//! classifiers and evaluation protocol built on them.

pub mod error;
pub mod eval;
pub mod features;
pub mod gestures;
pub mod ingest;
pub mod learn;
pub mod pipeline;
pub mod pose;
pub mod prepare;
pub mod synth;

pub use error::{Error, Result};
pub use features::{FeatureMask, FeatureMatrix, FeatureVector};
pub use gestures::{DetectorConfig, GestureSpan, MovementThreshold};
pub use ingest::{LabelSchema, SampleRecord};
pub use learn::{ClassifierConfig, ClassifierKind, Matrix, TrainedModel};
pub use pipeline::PipelineConfig;
pub use pose::{DetectionUnit, LocalisationKind, PoseFrame, PoseTrack, UnitKind};
pub use prepare::SmoothingConfig;
