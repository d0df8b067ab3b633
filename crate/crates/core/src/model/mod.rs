//! Sequence classifiers: the input-filtering neural ODE and LSTM baselines.

pub mod backend;
pub mod inode;
pub mod lstm;
pub mod online;
pub mod solver;

use std::borrow::Cow;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_cross_entropy, Matrix, ParamStore, Tape, Var};
use crate::preprocess::{Batch, Features};

pub use backend::{Backend, Eager, Recorder};
pub use inode::{Inode, InodeConfig};
pub use lstm::{Lstm, LstmConfig};
pub use online::{OnlineClassifier, Prediction};
pub use solver::{solve_euler, VectorField};

/// Architecture description, stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Inode(InodeConfig),
    Lstm(LstmConfig),
}

impl ModelSpec {
    pub fn classes(&self) -> usize {
        match self {
            ModelSpec::Inode(c) => c.classes,
            ModelSpec::Lstm(c) => c.classes,
        }
    }

    pub fn features(&self) -> Features {
        match self {
            ModelSpec::Inode(c) if c.input_dim == 3 => Features::Event,
            _ => Features::EventAndStep,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Inode(c) => c.param_count(),
            ModelSpec::Lstm(c) => c.param_count(),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Inode(c) => write!(f, "inode_{}", c.state_dim),
            ModelSpec::Lstm(c) if c.bidirectional => write!(f, "bi-lstm_{}", c.hidden),
            ModelSpec::Lstm(c) => write!(f, "lstm_{}", c.hidden),
        }
    }
}

/// Eager outputs of a batch: logits after each step and the mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// One `B x C` matrix per step; a single entry for bidirectional models.
    pub step_logits: Vec<Matrix>,
    pub loss: f64,
}

impl ForwardOutput {
    pub fn final_logits(&self) -> &Matrix {
        self.step_logits.last().expect("at least one step")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Inode(Inode),
    Lstm(Lstm),
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match spec {
            ModelSpec::Inode(c) => Model::Inode(Inode::new(c, &mut rng)),
            ModelSpec::Lstm(c) => Model::Lstm(Lstm::new(c, &mut rng)),
        }
    }

    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Inode(c) => Model::Inode(Inode::from_params(c, params)?),
            ModelSpec::Lstm(c) => Model::Lstm(Lstm::from_params(c, params)?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Inode(m) => ModelSpec::Inode(m.config),
            Model::Lstm(m) => ModelSpec::Lstm(m.config),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Inode(m) => &m.params,
            Model::Lstm(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Inode(m) => &mut m.params,
            Model::Lstm(m) => &mut m.params,
        }
    }

    pub fn classes(&self) -> usize {
        self.spec().classes()
    }

    pub fn features(&self) -> Features {
        self.spec().features()
    }

    pub fn param_count(&self) -> usize {
        self.params().scalar_count()
    }

    pub fn is_bidirectional(&self) -> bool {
        matches!(self, Model::Lstm(m) if m.config.bidirectional)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.steps() == 0 {
            return Err(Error::Input("batch has no steps".into()));
        }
        let width = self.features().width();
        if batch.width() != width {
            return Err(Error::shape("batch features", (batch.size(), batch.width()), (batch.size(), width)));
        }
        Ok(())
    }

    /// Logits after every step (`per_step`) or only after the last one.
    /// Bidirectional models always produce only final logits.
    pub fn run<B: Backend>(&self, bk: &mut B, batch: &Batch, per_step: bool) -> Result<Vec<B::Value>> {
        self.check_batch(batch)?;
        let size = batch.size();
        let steps = batch.steps();
        let mut out = Vec::new();
        match self {
            Model::Inode(m) => {
                let mut h = m.initial_state(bk, size)?;
                for (i, (u, dtaus)) in batch.inputs.iter().zip(&batch.dtaus).enumerate() {
                    let u = bk.constant(u.clone());
                    h = m.step(bk, &h, &u, dtaus)?;
                    if per_step || i + 1 == steps {
                        out.push(m.logits(bk, &h)?);
                    }
                }
            }
            Model::Lstm(m) => {
                let inputs: Vec<B::Value> = batch.inputs.iter().map(|u| bk.constant(u.clone())).collect();
                let forward = m.run_direction(bk, 0, &inputs, size)?;
                if m.config.bidirectional {
                    let backward = m.run_direction(bk, 1, &inputs, size)?;
                    let joined = bk.concat(&forward[steps - 1], &backward[steps - 1])?;
                    out.push(m.logits(bk, &joined)?);
                } else if per_step {
                    for h in &forward {
                        out.push(m.logits(bk, h)?);
                    }
                } else {
                    out.push(m.logits(bk, &forward[steps - 1])?);
                }
            }
        }
        Ok(out)
    }

    /// Mean cross-entropy over steps and batch, recorded on `rec`.
    pub fn loss_on_tape(&self, rec: &mut Recorder<'_>, batch: &Batch) -> Result<Var> {
        let logits = self.run(rec, batch, true)?;
        let losses = logits
            .iter()
            .map(|&z| rec.tape.softmax_cross_entropy(z, &batch.labels))
            .collect::<Result<Vec<_>>>()?;
        rec.tape.mean(&losses)
    }

    /// Mean loss and its gradient for every parameter slot, by
    /// back-propagation through the unrolled steps.
    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<(f64, Vec<Matrix>)> {
        let params = self.params();
        let mut tape = Tape::new();
        let loss = {
            let mut rec = Recorder::new(&mut tape, params);
            self.loss_on_tape(&mut rec, batch)?
        };
        let value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss)?.dense(params.shapes());
        Ok((value, grads))
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardOutput> {
        let mut bk = Eager::new(self.params());
        let step_logits: Vec<Matrix> = self
            .run(&mut bk, batch, true)?
            .into_iter()
            .map(Cow::into_owned)
            .collect();
        let mut total = 0.0;
        for z in &step_logits {
            total += softmax_cross_entropy(z, &batch.labels)?.0;
        }
        let loss = total / step_logits.len() as f64;
        Ok(ForwardOutput { step_logits, loss })
    }

    /// Logits after the last step only.
    pub fn final_logits(&self, batch: &Batch) -> Result<Matrix> {
        let mut bk = Eager::new(self.params());
        let mut out = self.run(&mut bk, batch, false)?;
        Ok(out.pop().expect("one output").into_owned())
    }
}
