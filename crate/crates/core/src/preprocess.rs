//! Time-step statistics, input normalization, sub-sequence sampling and
//! batch assembly.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Dataset, Event, EventSequence, SensorDims};
use crate::numerics::Matrix;

pub const DEFAULT_D_MAX: f64 = 1.0;

/// Fixed normalizer for raw microsecond steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    /// 98th percentile of training inter-event deltas, microseconds.
    pub d_q: f64,
    /// Cap on the normalized step.
    pub d_max: f64,
}

impl TimeStats {
    pub fn new(d_q: f64, d_max: f64) -> Result<Self> {
        if !(d_q > 0.0 && d_q.is_finite() && d_max > 0.0 && d_max.is_finite()) {
            return Err(Error::Input(format!("invalid time statistics d_q={d_q}, d_max={d_max}")));
        }
        Ok(TimeStats { d_q, d_max })
    }
}

/// Nearest-rank 98th percentile of all consecutive deltas pooled over the
/// dataset.
pub fn compute_dq(train: &Dataset) -> Result<TimeStats> {
    let mut pool: Vec<u64> = train.sequences.iter().flat_map(EventSequence::deltas).collect();
    if pool.is_empty() {
        return Err(Error::Dataset("no consecutive events to take time deltas from".into()));
    }
    pool.sort_unstable();
    let rank = (98 * pool.len()).div_ceil(100);
    let mut d_q = pool[rank - 1];
    if d_q == 0 {
        d_q = pool
            .iter()
            .copied()
            .find(|&d| d > 0)
            .ok_or_else(|| Error::Dataset("all time deltas are zero".into()))?;
    }
    TimeStats::new(d_q as f64, DEFAULT_D_MAX)
}

/// `min(dt / d_q, d_max)`
pub fn normalize_dt(dt: u64, stats: &TimeStats) -> f64 {
    (dt as f64 / stats.d_q).min(stats.d_max)
}

/// Which per-event features a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    /// `(x, y, p)`
    Event,
    /// `(x, y, p, dtau)`
    EventAndStep,
}

impl Features {
    pub fn width(self) -> usize {
        match self {
            Features::Event => 3,
            Features::EventAndStep => 4,
        }
    }
}

/// Normalized event: coordinates in [-1, 1], polarity in {-1, +1}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputVector {
    pub x: f64,
    pub y: f64,
    pub p: f64,
}

impl InputVector {
    pub fn write_features(&self, features: Features, dtau: f64, out: &mut Vec<f64>) {
        out.extend_from_slice(&[self.x, self.y, self.p]);
        if features == Features::EventAndStep {
            out.push(dtau);
        }
    }
}

pub fn normalize_input(e: &Event, sensor: SensorDims) -> InputVector {
    if !sensor.contains(e) {
        warn!(
            "event ({}, {}) outside {}x{} sensor; clamping",
            e.x, e.y, sensor.width, sensor.height
        );
    }
    let axis = |v: u16, extent: u16| {
        if extent < 2 {
            return 0.0;
        }
        let v = v.min(extent - 1);
        2.0 * f64::from(v) / f64::from(extent - 1) - 1.0
    };
    InputVector {
        x: axis(e.x, sensor.width),
        y: axis(e.y, sensor.height),
        p: if e.p > 0 { 1.0 } else { -1.0 },
    }
}

/// `steps` model inputs and normalized steps cut from one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    /// `steps x width`, row `i` is the input held during step `i`.
    pub inputs: Vec<f64>,
    pub dtaus: Vec<f64>,
    pub width: usize,
}

impl Subsequence {
    pub fn steps(&self) -> usize {
        self.dtaus.len()
    }

    pub fn input(&self, step: usize) -> &[f64] {
        &self.inputs[step * self.width..(step + 1) * self.width]
    }
}

/// Uniform offset in `[0, M - steps - 1]`; zero when the sequence is too
/// short to hold `steps + 1` events.
pub fn sample_offset<R: Rng + ?Sized>(len: usize, steps: usize, rng: &mut R) -> usize {
    if len < steps + 1 {
        0
    } else {
        rng.random_range(0..=len - steps - 1)
    }
}

/// Inputs `u(t_s .. t_{s+steps-1})` with steps taken from consecutive
/// timestamp pairs. Past the end of the sequence the last event is held
/// with a zero step.
pub fn window(
    seq: &EventSequence,
    offset: usize,
    steps: usize,
    stats: &TimeStats,
    features: Features,
) -> Subsequence {
    let last = seq.events.len() - 1;
    let at = |i: usize| &seq.events[(offset + i).min(last)];
    let mut inputs = Vec::with_capacity(steps * features.width());
    let mut dtaus = Vec::with_capacity(steps);
    for i in 0..steps {
        let (cur, next) = (at(i), at(i + 1));
        let dtau = normalize_dt(next.t - cur.t, stats);
        normalize_input(cur, seq.sensor).write_features(features, dtau, &mut inputs);
        dtaus.push(dtau);
    }
    Subsequence {
        inputs,
        dtaus,
        width: features.width(),
    }
}

pub fn sample_subsequence<R: Rng + ?Sized>(
    seq: &EventSequence,
    steps: usize,
    rng: &mut R,
    stats: &TimeStats,
    features: Features,
) -> Subsequence {
    let offset = sample_offset(seq.len(), steps, rng);
    window(seq, offset, steps, stats, features)
}

/// Step-major batch: `inputs[i]` is `B x F`, `dtaus[i]` has `B` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Matrix>,
    pub dtaus: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_subsequences(subs: &[Subsequence], labels: Vec<usize>) -> Result<Self> {
        let Some(first) = subs.first() else {
            return Err(Error::Input("empty batch".into()));
        };
        let (steps, width) = (first.steps(), first.width);
        if subs.iter().any(|s| s.steps() != steps || s.width != width) || labels.len() != subs.len() {
            return Err(Error::Input("ragged batch".into()));
        }
        let mut inputs = Vec::with_capacity(steps);
        let mut dtaus = Vec::with_capacity(steps);
        for i in 0..steps {
            let data = subs.iter().flat_map(|s| s.input(i).iter().copied()).collect();
            inputs.push(Matrix::from_vec(subs.len(), width, data)?);
            dtaus.push(subs.iter().map(|s| s.dtaus[i]).collect());
        }
        Ok(Batch { inputs, dtaus, labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::cols)
    }

    /// The first `steps` steps.
    pub fn prefix(&self, steps: usize) -> Batch {
        Batch {
            inputs: self.inputs[..steps].to_vec(),
            dtaus: self.dtaus[..steps].to_vec(),
            labels: self.labels.clone(),
        }
    }
}

/// Samples one random window per sequence.
pub fn assemble_batch<R: Rng + ?Sized>(
    sequences: &[&EventSequence],
    steps: usize,
    rng: &mut R,
    stats: &TimeStats,
    features: Features,
) -> Result<Batch> {
    let subs: Vec<Subsequence> = sequences
        .iter()
        .map(|s| sample_subsequence(s, steps, rng, stats, features))
        .collect();
    Batch::from_subsequences(&subs, sequences.iter().map(|s| s.label).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{synth_moving_dot, Split};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq_with_times(times: &[u64]) -> EventSequence {
        let events = times.iter().enumerate().map(|(i, &t)| Event::new(i as u16 % 34, 0, 1, t)).collect();
        EventSequence::new(events, 0, SensorDims::NMNIST).unwrap()
    }

    /// Nearest-rank percentile straight from the definition: the smallest
    /// pool value with at least 98% of the pool at or below it.
    fn nearest_rank_oracle(pool: &[u64]) -> u64 {
        let n = pool.len() as f64;
        let mut values = pool.to_vec();
        values.sort_unstable();
        values.dedup();
        *values
            .iter()
            .find(|&&v| pool.iter().filter(|&&d| d <= v).count() as f64 >= 0.98 * n - 1e-9)
            .unwrap()
    }

    #[test]
    fn dq_of_one_to_hundred() {
        let mut times = vec![0u64];
        let mut deltas: Vec<u64> = (1..=100).collect();
        deltas.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        for d in &deltas {
            times.push(times.last().unwrap() + d);
        }
        let ds = Dataset::new(vec![seq_with_times(&times)], 1, Split::Train).unwrap();
        assert_eq!(nearest_rank_oracle(&deltas), 98);
        assert_eq!(compute_dq(&ds).unwrap().d_q, 98.0);
    }

    #[test]
    fn dq_matches_oracle_on_random_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 7, 49, 50, 51, 99, 101, 333] {
            let deltas: Vec<u64> = (0..n).map(|_| rng.random_range(1..500)).collect();
            let mut times = vec![0u64];
            for d in &deltas {
                times.push(times.last().unwrap() + d);
            }
            let ds = Dataset::new(vec![seq_with_times(&times)], 1, Split::Train).unwrap();
            assert_eq!(compute_dq(&ds).unwrap().d_q, nearest_rank_oracle(&deltas) as f64, "n={n}");
        }
    }

    #[test]
    fn dq_constant_pool() {
        let times: Vec<u64> = (0..20).map(|i| i * 50).collect();
        let ds = Dataset::new(vec![seq_with_times(&times)], 1, Split::Train).unwrap();
        assert_eq!(compute_dq(&ds).unwrap().d_q, 50.0);
    }

    #[test]
    fn dq_ignores_sequence_order() {
        let seqs: Vec<EventSequence> = (0..5)
            .map(|i| synth_moving_dot(i % 2, i as u64, 50, SensorDims::NMNIST, 0.0).unwrap())
            .collect();
        let a = compute_dq(&Dataset::new(seqs.clone(), 2, Split::Train).unwrap()).unwrap();
        let mut rev = seqs;
        rev.reverse();
        let b = compute_dq(&Dataset::new(rev, 2, Split::Train).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dq_degenerate_pools() {
        let mostly_zero: Vec<u64> = std::iter::repeat_n(5, 100).chain([5 + 7]).collect();
        let ds = Dataset::new(vec![seq_with_times(&mostly_zero)], 1, Split::Train).unwrap();
        assert_eq!(compute_dq(&ds).unwrap().d_q, 7.0);
        let single = Dataset::new(vec![seq_with_times(&[3])], 1, Split::Train).unwrap();
        assert!(matches!(compute_dq(&single), Err(Error::Dataset(_))));
    }

    #[test]
    fn dt_normalization() {
        let stats = TimeStats::new(80.0, 1.0).unwrap();
        assert_eq!(normalize_dt(80, &stats), 1.0);
        assert_eq!(normalize_dt(400, &stats), 1.0);
        assert_eq!(normalize_dt(0, &stats), 0.0);
        assert_eq!(normalize_dt(20, &stats), 0.25);
    }

    #[test]
    fn input_normalization() {
        let dims = SensorDims::NMNIST;
        let v = normalize_input(&Event::new(0, 33, 0, 0), dims);
        assert_eq!((v.x, v.y, v.p), (-1.0, 1.0, -1.0));
        let v = normalize_input(&Event::new(33, 0, 1, 0), dims);
        assert_eq!((v.x, v.y, v.p), (1.0, -1.0, 1.0));
        // Out of bounds clamps to the edge.
        let v = normalize_input(&Event::new(40, 2, 1, 0), dims);
        assert_eq!(v.x, 1.0);
    }

    #[test]
    fn offset_forced_to_zero() {
        let s = synth_moving_dot(0, 1, 11, SensorDims::NMNIST, 0.0).unwrap();
        let stats = TimeStats::new(100.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_offset(s.len(), 10, &mut rng), 0);
        }
        let sub = sample_subsequence(&s, 10, &mut rng, &stats, Features::Event);
        assert_eq!(sub, window(&s, 0, 10, &stats, Features::Event));
    }

    #[test]
    fn short_sequences_hold_last_event() {
        let s = seq_with_times(&[0, 10, 30]);
        let stats = TimeStats::new(20.0, 1.0).unwrap();
        let sub = window(&s, 0, 5, &stats, Features::EventAndStep);
        assert_eq!(sub.dtaus, vec![0.5, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(sub.input(2), sub.input(4));
        assert_eq!(sub.input(1)[3], 1.0);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let s = synth_moving_dot(1, 4, 300, SensorDims::NMNIST, 0.1).unwrap();
        let stats = TimeStats::new(150.0, 1.0).unwrap();
        let a = sample_subsequence(&s, 100, &mut ChaCha8Rng::seed_from_u64(5), &stats, Features::Event);
        let b = sample_subsequence(&s, 100, &mut ChaCha8Rng::seed_from_u64(5), &stats, Features::Event);
        assert_eq!(a, b);
        assert!(a.dtaus.iter().all(|&d| (0.0..=1.0).contains(&d)));
    }

    #[test]
    fn batch_layout() {
        let seqs: Vec<EventSequence> = (0..3)
            .map(|i| synth_moving_dot(i % 2, i as u64, 40, SensorDims::NMNIST, 0.0).unwrap())
            .collect();
        let refs: Vec<&EventSequence> = seqs.iter().collect();
        let stats = TimeStats::new(100.0, 1.0).unwrap();
        let batch = assemble_batch(&refs, 7, &mut ChaCha8Rng::seed_from_u64(1), &stats, Features::EventAndStep).unwrap();
        assert_eq!(batch.steps(), 7);
        assert_eq!(batch.size(), 3);
        assert_eq!(batch.width(), 4);
        assert_eq!(batch.labels, vec![0, 1, 0]);
        for i in 0..7 {
            for b in 0..3 {
                assert_eq!(batch.inputs[i].get(b, 3), batch.dtaus[i][b]);
            }
        }
    }
}
