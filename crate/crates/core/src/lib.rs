//! Event-camera sequence classification with an input-filtering neural ODE
//! and LSTM baselines, trained by back-propagation through explicit Euler
//! steps.

pub mod checkpoint;
pub mod error;
pub mod events;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod report;
pub mod stream;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use error::{Error, Result};
pub use events::{Dataset, Event, EventSequence, SensorDims, Split, SynthTask};
pub use model::{InodeConfig, LstmConfig, Model, ModelSpec, OnlineClassifier, Prediction};
pub use preprocess::{compute_dq, Batch, Features, TimeStats};
pub use train::{evaluate, train, Evaluation, MetricsLog, MetricsRecord, RunConfig, TrainOutcome, Trainer};
