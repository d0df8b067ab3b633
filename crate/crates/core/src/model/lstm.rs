//! LSTM and bidirectional LSTM sequence classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::backend::Backend;
use crate::numerics::{init_linear, Matrix, ParamStore};

/// Gate order within a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

const GATES: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];
const SLOTS_PER_GATE: usize = 3;
const SLOTS_PER_DIRECTION: usize = 4 * SLOTS_PER_GATE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub hidden: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub bidirectional: bool,
}

impl LstmConfig {
    pub fn new(hidden: usize, classes: usize, bidirectional: bool) -> Self {
        LstmConfig {
            hidden,
            input_dim: 4,
            classes,
            bidirectional,
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// `4 * (H * (F + H) + H)` per direction.
    pub fn recurrent_param_count(&self) -> usize {
        let (h, f) = (self.hidden, self.input_dim);
        self.directions() * 4 * (h * (f + h) + h)
    }

    pub fn param_count(&self) -> usize {
        let features = self.directions() * self.hidden;
        self.recurrent_param_count() + features * self.classes + self.classes
    }

    fn expected_shapes(&self) -> Vec<(usize, usize)> {
        let (h, f) = (self.hidden, self.input_dim);
        let mut shapes = Vec::new();
        for _ in 0..self.directions() {
            for _ in GATES {
                shapes.extend([(f, h), (h, h), (1, h)]);
            }
        }
        shapes.push((self.directions() * h, self.classes));
        shapes.push((1, self.classes));
        shapes
    }
}

/// Parameter slot of the input weight, recurrent weight or bias of `gate`.
pub fn gate_slot(direction: usize, gate: Gate, part: usize) -> usize {
    direction * SLOTS_PER_DIRECTION + gate as usize * SLOTS_PER_GATE + part
}

const INPUT_WEIGHT: usize = 0;
const RECURRENT_WEIGHT: usize = 1;
const BIAS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub config: LstmConfig,
    pub params: ParamStore,
}

impl Lstm {
    pub fn new<R: Rng>(config: LstmConfig, rng: &mut R) -> Self {
        let (h, f) = (config.hidden, config.input_dim);
        let mut params = ParamStore::new();
        for d in 0..config.directions() {
            for gate in GATES {
                let (w, b) = init_linear(rng, f, h);
                let (u, _) = init_linear(rng, h, h);
                let tag = format!("dir{d}.{gate:?}").to_lowercase();
                params.push(format!("{tag}.w"), w);
                params.push(format!("{tag}.u"), u);
                params.push(format!("{tag}.bias"), b);
            }
        }
        let (w, b) = init_linear(rng, config.directions() * h, config.classes);
        params.push("classifier.weight", w);
        params.push("classifier.bias", b);
        Lstm { config, params }
    }

    pub fn from_params(config: LstmConfig, params: ParamStore) -> Result<Self> {
        let expected = config.expected_shapes();
        if params.shapes() != expected {
            return Err(Error::Format(format!(
                "parameter shapes {:?} do not match the LSTM layout {expected:?}",
                params.shapes()
            )));
        }
        Ok(Lstm { config, params })
    }

    fn classifier_slots(&self) -> (usize, usize) {
        let base = self.config.directions() * SLOTS_PER_DIRECTION;
        (base, base + 1)
    }

    pub fn zero_state<B: Backend>(&self, bk: &mut B, batch: usize) -> (B::Value, B::Value) {
        let h = bk.constant(Matrix::zeros(batch, self.config.hidden));
        let c = bk.constant(Matrix::zeros(batch, self.config.hidden));
        (h, c)
    }

    fn gate<B: Backend>(&self, bk: &mut B, direction: usize, gate: Gate, x: &B::Value, h: &B::Value) -> Result<B::Value> {
        let from_input = bk.linear(
            x,
            gate_slot(direction, gate, INPUT_WEIGHT),
            gate_slot(direction, gate, BIAS),
        )?;
        let u = bk.param(gate_slot(direction, gate, RECURRENT_WEIGHT));
        let from_state = bk.matmul(h, &u)?;
        let pre = bk.add(&from_input, &from_state)?;
        Ok(match gate {
            Gate::Cell => bk.tanh(&pre),
            _ => bk.sigmoid(&pre),
        })
    }

    /// One cell update: returns `(h', c')`.
    pub fn step<B: Backend>(
        &self,
        bk: &mut B,
        direction: usize,
        h: &B::Value,
        c: &B::Value,
        x: &B::Value,
    ) -> Result<(B::Value, B::Value)> {
        let i = self.gate(bk, direction, Gate::Input, x, h)?;
        let f = self.gate(bk, direction, Gate::Forget, x, h)?;
        let g = self.gate(bk, direction, Gate::Cell, x, h)?;
        let o = self.gate(bk, direction, Gate::Output, x, h)?;
        let kept = bk.mul(&f, c)?;
        let written = bk.mul(&i, &g)?;
        let c_next = bk.add(&kept, &written)?;
        let squashed = bk.tanh(&c_next);
        let h_next = bk.mul(&o, &squashed)?;
        Ok((h_next, c_next))
    }

    /// Logits from the hidden state (concatenated states when bidirectional).
    pub fn logits<B: Backend>(&self, bk: &mut B, features: &B::Value) -> Result<B::Value> {
        let (w, b) = self.classifier_slots();
        bk.linear(features, w, b)
    }

    /// Runs one direction over `inputs` (reversed for the backward
    /// direction) and returns every hidden state in processing order.
    pub fn run_direction<B: Backend>(
        &self,
        bk: &mut B,
        direction: usize,
        inputs: &[B::Value],
        batch: usize,
    ) -> Result<Vec<B::Value>> {
        let (mut h, mut c) = self.zero_state(bk, batch);
        let mut states = Vec::with_capacity(inputs.len());
        let order: Box<dyn Iterator<Item = &B::Value>> = if direction == 0 {
            Box::new(inputs.iter())
        } else {
            Box::new(inputs.iter().rev())
        };
        for x in order {
            let (h_next, c_next) = self.step(bk, direction, &h, &c, x)?;
            states.push(h_next.clone());
            h = h_next;
            c = c_next;
        }
        Ok(states)
    }
}
