//! Event-by-event inference with sample-and-hold inputs.
//!
//! Each arriving event closes the step opened by its predecessor: the held
//! input is integrated over the elapsed (normalized, capped) time, then the
//! new event becomes the held input. Gaps longer than `d_max * d_q` are
//! capped at `d_max`, so a quiet sensor leaves the prediction unchanged
//! until the next event.

use std::borrow::Cow;
use std::collections::HashMap;

use log::warn;

use crate::error::{Error, Result};
use crate::events::{Event, SensorDims};
use crate::model::backend::{Backend, Eager};
use crate::model::Model;
use crate::numerics::matrix::{argmax, softmax_in_place};
use crate::numerics::Matrix;
use crate::preprocess::{normalize_dt, normalize_input, Features, InputVector, TimeStats};

/// Most input branches memoized per classifier; covers every pixel and
/// polarity of sensors up to 128 x 128.
const BRANCH_CACHE_LIMIT: usize = 1 << 15;

/// Clamped pixel and polarity; equal keys give equal normalized inputs.
type PixelKey = (u16, u16, bool);

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub t: u64,
    /// Most probable class; ties go to the lowest index.
    pub class: usize,
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OnlineClassifier<'m> {
    model: &'m Model,
    stats: TimeStats,
    sensor: SensorDims,
    /// `[h]` for the ODE, `[h, c]` for the LSTM.
    state: Vec<Matrix>,
    held: Option<(InputVector, u64, PixelKey)>,
    /// `tanh(FCu(u))` per pixel for the ODE model, which depends only on
    /// the event and not on the state.
    branches: HashMap<PixelKey, Matrix>,
}

impl<'m> OnlineClassifier<'m> {
    pub fn new(model: &'m Model, stats: TimeStats, sensor: SensorDims) -> Result<Self> {
        if model.is_bidirectional() {
            return Err(Error::Usage(
                "a bidirectional model needs the whole sequence and cannot run online".into(),
            ));
        }
        let mut me = OnlineClassifier {
            model,
            stats,
            sensor,
            state: Vec::new(),
            held: None,
            branches: HashMap::new(),
        };
        me.reset()?;
        Ok(me)
    }

    /// Back to the initial state with no held input.
    pub fn reset(&mut self) -> Result<()> {
        let mut bk = Eager::new(self.model.params());
        self.state = match self.model {
            Model::Inode(m) => vec![m.initial_state(&mut bk, 1)?.into_owned()],
            Model::Lstm(m) => {
                let (h, c) = m.zero_state(&mut bk, 1);
                vec![h.into_owned(), c.into_owned()]
            }
        };
        self.held = None;
        Ok(())
    }

    pub fn state(&self) -> &[Matrix] {
        &self.state
    }

    pub fn logits(&self) -> Result<Matrix> {
        let mut bk = Eager::new(self.model.params());
        let h = Cow::Borrowed(&self.state[0]);
        let z = match self.model {
            Model::Inode(m) => m.logits(&mut bk, &h)?,
            Model::Lstm(m) => m.logits(&mut bk, &h)?,
        };
        Ok(z.into_owned())
    }

    /// Integrates up to `event`, makes it the held input and classifies.
    pub fn push(&mut self, event: &Event) -> Result<Prediction> {
        if let Some((input, t_prev, key)) = self.held {
            let dt = if event.t < t_prev {
                warn!("timestamp {} precedes {t_prev}; using a zero step", event.t);
                0
            } else {
                event.t - t_prev
            };
            let dtau = normalize_dt(dt, &self.stats);
            self.advance(&input, key, dtau)?;
        }
        let key = (
            event.x.min(self.sensor.width.saturating_sub(1)),
            event.y.min(self.sensor.height.saturating_sub(1)),
            event.p > 0,
        );
        self.held = Some((normalize_input(event, self.sensor), event.t, key));
        let logits = self.logits()?;
        let mut probs = logits.as_slice().to_vec();
        softmax_in_place(&mut probs);
        Ok(Prediction {
            t: event.t,
            class: argmax(logits.as_slice()),
            probs,
            logits: logits.into_vec(),
        })
    }

    fn advance(&mut self, input: &InputVector, key: PixelKey, dtau: f64) -> Result<()> {
        if let Model::Inode(m) = self.model {
            if self.model.features() == Features::Event {
                let h = match self.branches.get(&key) {
                    Some(branch) => m.step_with_branch(&self.state[0], branch, &[dtau])?,
                    None => {
                        let branch = m.input_branch(&Matrix::row_vector(&[input.x, input.y, input.p]))?;
                        let h = m.step_with_branch(&self.state[0], &branch, &[dtau])?;
                        if self.branches.len() < BRANCH_CACHE_LIMIT {
                            self.branches.insert(key, branch);
                        }
                        h
                    }
                };
                self.state = vec![h];
                return Ok(());
            }
        }
        let mut row = Vec::with_capacity(4);
        input.write_features(self.model.features(), dtau, &mut row);
        let u = Matrix::row_vector(&row);
        let mut bk = Eager::new(self.model.params());
        let u = bk.constant(u);
        self.state = match self.model {
            Model::Inode(m) => {
                let h = m.step(&mut bk, &Cow::Borrowed(&self.state[0]), &u, &[dtau])?;
                vec![h.into_owned()]
            }
            Model::Lstm(m) => {
                let (h, c) = m.step(
                    &mut bk,
                    0,
                    &Cow::Borrowed(&self.state[0]),
                    &Cow::Borrowed(&self.state[1]),
                    &u,
                )?;
                vec![h.into_owned(), c.into_owned()]
            }
        };
        Ok(())
    }
}

/// Runs a classifier over a whole event list, one prediction per event.
pub fn predict_stream<'e>(
    classifier: &mut OnlineClassifier<'_>,
    events: impl IntoIterator<Item = &'e Event>,
) -> Result<Vec<Prediction>> {
    events.into_iter().map(|e| classifier.push(e)).collect()
}
