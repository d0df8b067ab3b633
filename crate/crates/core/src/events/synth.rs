//! Deterministic synthetic DVS recordings of a bright dot moving across the
//! sensor. Each class is one motion pattern; the dot emits ON events along
//! its leading edge and OFF events along its trailing edge.

use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::event::{Dataset, Event, EventSequence, SensorDims, Split};

pub const MOTION_CLASSES: usize = 10;
/// Mean inter-event time in microseconds.
pub const MEAN_INTER_EVENT_US: f64 = 100.0;
const DOT_RADIUS: f64 = 0.08;
const LANE_JITTER: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    LeftToRight,
    RightToLeft,
    Down,
    Up,
    DiagonalDown,
    DiagonalUp,
    AntiDiagonalDown,
    AntiDiagonalUp,
    Clockwise,
    CounterClockwise,
}

impl Motion {
    pub fn from_class(class_id: usize) -> Result<Self> {
        use Motion::*;
        Ok(match class_id {
            0 => LeftToRight,
            1 => RightToLeft,
            2 => Down,
            3 => Up,
            4 => DiagonalDown,
            5 => DiagonalUp,
            6 => AntiDiagonalDown,
            7 => AntiDiagonalUp,
            8 => Clockwise,
            9 => CounterClockwise,
            _ => return Err(Error::Input(format!("unknown motion class {class_id}"))),
        })
    }

    /// Dot centre and unit heading at progress `s` in [0, 1], in unit-square
    /// coordinates with y growing downwards. `lane` shifts the path sideways.
    fn pose(self, s: f64, lane: f64) -> ((f64, f64), (f64, f64)) {
        use Motion::*;
        let lerp = |a: f64, b: f64| a + (b - a) * s;
        let straight = |from: (f64, f64), to: (f64, f64)| {
            let (dx, dy) = (to.0 - from.0, to.1 - from.1);
            let norm = (dx * dx + dy * dy).sqrt();
            let (hx, hy) = (dx / norm, dy / norm);
            // Perpendicular offset for the lane.
            let centre = (lerp(from.0, to.0) - hy * lane, lerp(from.1, to.1) + hx * lane);
            (centre, (hx, hy))
        };
        match self {
            LeftToRight => straight((0.1, 0.5), (0.9, 0.5)),
            RightToLeft => straight((0.9, 0.5), (0.1, 0.5)),
            Down => straight((0.5, 0.1), (0.5, 0.9)),
            Up => straight((0.5, 0.9), (0.5, 0.1)),
            DiagonalDown => straight((0.15, 0.15), (0.85, 0.85)),
            DiagonalUp => straight((0.85, 0.85), (0.15, 0.15)),
            AntiDiagonalDown => straight((0.85, 0.15), (0.15, 0.85)),
            AntiDiagonalUp => straight((0.15, 0.85), (0.85, 0.15)),
            Clockwise | CounterClockwise => {
                let sign = if self == Clockwise { 1.0 } else { -1.0 };
                let angle = sign * TAU * 0.75 * s;
                let radius = 0.3 + 0.5 * lane;
                let centre = (0.5 + radius * angle.cos(), 0.5 + radius * angle.sin());
                (centre, (-sign * angle.sin(), sign * angle.cos()))
            }
        }
    }
}

/// One synthetic recording. A pure function of its arguments.
pub fn synth_moving_dot(
    class_id: usize,
    seed: u64,
    n_events: usize,
    sensor: SensorDims,
    noise_rate: f64,
) -> Result<EventSequence> {
    let motion = Motion::from_class(class_id)?;
    if n_events == 0 {
        return Err(Error::Input("n_events must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Input(format!("noise rate {noise_rate} outside [0, 1]")));
    }
    if sensor.width < 2 || sensor.height < 2 {
        return Err(Error::Input("sensor must be at least 2x2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_id as u64);
    let gaps = Exp::new(1.0 / MEAN_INTER_EVENT_US).expect("positive rate");
    let lane = rng.random_range(-LANE_JITTER..=LANE_JITTER) * 0.5;
    let quantize = |v: f64, extent: u16| {
        let max = f64::from(extent - 1);
        (v.clamp(0.0, 1.0) * max).round() as u16
    };

    let mut clock = 0.0;
    let mut events = Vec::with_capacity(n_events);
    for i in 0..n_events {
        clock += gaps.sample(&mut rng);
        let t = clock.round() as u64;
        if rng.random_bool(noise_rate) {
            events.push(Event {
                x: rng.random_range(0..sensor.width),
                y: rng.random_range(0..sensor.height),
                p: rng.random_range(0..=1),
                t,
            });
            continue;
        }
        let s = if n_events > 1 { i as f64 / (n_events - 1) as f64 } else { 0.5 };
        let ((cx, cy), (hx, hy)) = motion.pose(s, lane);
        let leading = rng.random_bool(0.5);
        let edge = if leading { DOT_RADIUS } else { -DOT_RADIUS };
        let across = rng.random_range(-DOT_RADIUS..=DOT_RADIUS);
        let along = edge + rng.random_range(-DOT_RADIUS / 3.0..=DOT_RADIUS / 3.0);
        let x = cx + hx * along - hy * across;
        let y = cy + hy * along + hx * across;
        events.push(Event {
            x: quantize(x, sensor.width),
            y: quantize(y, sensor.height),
            p: u8::from(leading),
            t,
        });
    }
    EventSequence::new(events, class_id, sensor)
}

/// The same recording on a sensor whose pixel pitch is `factor` times finer:
/// every coordinate is multiplied by `factor` and the sensor becomes
/// `(w - 1) * factor + 1` wide, so normalized coordinates are unchanged.
pub fn upsample(seq: &EventSequence, factor: u16) -> Result<EventSequence> {
    let grow = |extent: u16| {
        (extent - 1)
            .checked_mul(factor)
            .and_then(|v| v.checked_add(1))
            .ok_or_else(|| Error::Input(format!("sensor extent {extent} x{factor} overflows")))
    };
    let sensor = SensorDims::new(grow(seq.sensor.width)?, grow(seq.sensor.height)?);
    let events = seq
        .events
        .iter()
        .map(|e| Event {
            x: e.x * factor,
            y: e.y * factor,
            ..*e
        })
        .collect();
    EventSequence::new(events, seq.label, sensor)
}

/// A named synthetic classification task, e.g. `movedot2` or `movedot10`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub classes: usize,
    pub events_per_sample: usize,
    pub noise_rate: f64,
    pub sensor: SensorDims,
}

impl SynthTask {
    pub fn moving_dot(classes: usize) -> Result<Self> {
        if !(2..=MOTION_CLASSES).contains(&classes) {
            return Err(Error::Input(format!(
                "moving-dot task supports 2..={MOTION_CLASSES} classes, got {classes}"
            )));
        }
        Ok(SynthTask {
            classes,
            events_per_sample: 300,
            noise_rate: 0.05,
            sensor: SensorDims::NMNIST,
        })
    }

    pub fn name(&self) -> String {
        format!("movedot{}", self.classes)
    }

    /// `count` samples with classes assigned round-robin. Sample seeds are
    /// drawn from `seed`, so distinct seeds give disjoint-looking splits.
    pub fn generate(&self, count: usize, seed: u64, split: Split) -> Result<Dataset> {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..count)
            .map(|i| {
                let sample_seed = master.next_u64();
                synth_moving_dot(
                    i % self.classes,
                    sample_seed,
                    self.events_per_sample,
                    self.sensor,
                    self.noise_rate,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let names = (0..self.classes)
            .map(|c| format!("{:?}", Motion::from_class(c).expect("class in range")).to_lowercase())
            .collect();
        Dataset::with_names(sequences, names, split)
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let classes = s
            .strip_prefix("movedot")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Input(format!("unknown synthetic task {s:?} (expected movedot<N>)")))?;
        SynthTask::moving_dot(classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synth_moving_dot(1, 42, 200, SensorDims::NMNIST, 0.1).unwrap();
        let b = synth_moving_dot(1, 42, 200, SensorDims::NMNIST, 0.1).unwrap();
        assert_eq!(a, b);
        let c = synth_moving_dot(1, 43, 200, SensorDims::NMNIST, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn left_to_right_drifts_right() {
        for seed in 0..20 {
            let s = synth_moving_dot(0, seed, 500, SensorDims::NMNIST, 0.0).unwrap();
            let tenth = s.len() / 10;
            let mean_x = |evs: &[Event]| evs.iter().map(|e| f64::from(e.x)).sum::<f64>() / evs.len() as f64;
            let first = mean_x(&s.events[..tenth]);
            let last = mean_x(&s.events[s.len() - tenth..]);
            assert!(last > first, "seed {seed}: {first} -> {last}");
        }
    }

    #[test]
    fn single_event() {
        let s = synth_moving_dot(3, 0, 1, SensorDims::NMNIST, 0.0).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn unknown_class() {
        assert!(matches!(
            synth_moving_dot(10, 0, 5, SensorDims::NMNIST, 0.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn events_stay_on_sensor_and_in_order() {
        for class in 0..MOTION_CLASSES {
            let s = synth_moving_dot(class, 9, 400, SensorDims::new(20, 12), 0.2).unwrap();
            assert!(s.events.iter().all(|e| s.sensor.contains(e) && e.p <= 1));
            assert!(s.events.windows(2).all(|w| w[0].t <= w[1].t));
        }
    }

    #[test]
    fn mean_gap_near_100us() {
        let s = synth_moving_dot(0, 5, 20_000, SensorDims::NMNIST, 0.0).unwrap();
        let mean = s.events.last().unwrap().t as f64 / s.len() as f64;
        assert!((mean - MEAN_INTER_EVENT_US).abs() < 3.0, "{mean}");
    }

    #[test]
    fn task_names() {
        let t: SynthTask = "movedot10".parse().unwrap();
        assert_eq!(t.classes, 10);
        assert_eq!(t.name(), "movedot10");
        assert!("movedot1".parse::<SynthTask>().is_err());
        assert!("digits".parse::<SynthTask>().is_err());
        let ds = t.generate(25, 1, Split::Test).unwrap();
        assert_eq!(ds.class_histogram(), vec![3, 3, 3, 3, 3, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn upsample_scales_coordinates() {
        let s = synth_moving_dot(4, 2, 50, SensorDims::NMNIST, 0.1).unwrap();
        let up = upsample(&s, 2).unwrap();
        assert_eq!(up.sensor, SensorDims::new(67, 67));
        assert!(up.events.iter().zip(&s.events).all(|(u, e)| u.x == 2 * e.x && u.t == e.t));
    }
}
