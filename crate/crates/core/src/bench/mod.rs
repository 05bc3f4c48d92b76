//! Synthetic continual segmentation benchmark.

pub mod features;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod render;
pub mod runner;
pub mod store;

pub use features::Featurizer;
pub use metrics::{evaluate, total_drop, ClassScore, MetricsReport, SessionMetrics};
pub use model::{epoch_order, train_session, EpochLog, PixelClassifierModel, SessionOutcome, TrainConfig, TrainingLog};
pub use protocol::{ContinualProtocol, DomainTransform, SessionSpec, TransitionCase};
pub use render::{generate_protocol_data, generate_protocol_data_styled, LabeledImage, RenderStyle, SessionData, Shape};
pub use runner::{run_protocol, BenchSettings, ComparisonReport, ConfigKind};
