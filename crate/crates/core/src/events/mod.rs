//! Event data model, AER codecs, dataset loading and synthetic recordings.

pub mod aer;
pub mod dataset;
pub mod event;
pub mod synth;

pub use aer::{parse_aer, parse_aer16, write_aer, write_aer16, AerFormat};
pub use dataset::{
    load_dataset, restrict_classes, select_fraction, split_holdout, take_random, write_dataset, LoadOptions, Manifest,
};
pub use event::{Dataset, Event, EventSequence, SensorDims, Split};
pub use synth::{synth_moving_dot, upsample, SynthTask};
