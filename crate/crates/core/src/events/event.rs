use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One DVS event: pixel column `x`, pixel row `y`, polarity `p` in {0, 1}
/// and timestamp `t` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub p: u8,
    pub t: u64,
}

impl Event {
    pub fn new(x: u16, y: u16, p: u8, t: u64) -> Self {
        Event { x, y, p, t }
    }
}

/// Sensor resolution as `(width, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorDims {
    pub width: u16,
    pub height: u16,
}

impl SensorDims {
    pub const NMNIST: SensorDims = SensorDims { width: 34, height: 34 };
    pub const ASL: SensorDims = SensorDims { width: 240, height: 180 };
    pub const NCALTECH: SensorDims = SensorDims { width: 232, height: 172 };

    pub fn new(width: u16, height: u16) -> Self {
        SensorDims { width, height }
    }

    pub fn contains(&self, e: &Event) -> bool {
        e.x < self.width && e.y < self.height
    }
}

/// A labelled, time-ordered event list for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub events: Vec<Event>,
    pub label: usize,
    pub sensor: SensorDims,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, label: usize, sensor: SensorDims) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::Input("event sequence must hold at least one event".into()));
        }
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Input("event timestamps must be non-decreasing".into()));
        }
        Ok(EventSequence { events, label, sensor })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Consecutive timestamp differences.
    pub fn deltas(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.windows(2).map(|w| w[1].t - w[0].t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl Dataset {
    pub fn new(sequences: Vec<EventSequence>, class_count: usize, split: Split) -> Result<Self> {
        let names = (0..class_count).map(|c| c.to_string()).collect();
        Dataset::with_names(sequences, names, split)
    }

    pub fn with_names(sequences: Vec<EventSequence>, class_names: Vec<String>, split: Split) -> Result<Self> {
        let class_count = class_names.len();
        if let Some(first) = sequences.first() {
            if sequences.iter().any(|s| s.sensor != first.sensor) {
                return Err(Error::Dataset("sequences disagree on sensor dimensions".into()));
            }
        }
        if let Some(bad) = sequences.iter().find(|s| s.label >= class_count) {
            return Err(Error::Dataset(format!(
                "label {} out of range for {class_count} classes",
                bad.label
            )));
        }
        Ok(Dataset {
            sequences,
            class_count,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sensor(&self) -> Option<SensorDims> {
        self.sequences.first().map(|s| s.sensor)
    }

    /// Number of sequences per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.sequences {
            counts[s.label] += 1;
        }
        counts
    }
}
