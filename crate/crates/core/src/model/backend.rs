//! Evaluation backends shared by all models.
//!
//! Model code is written once against [`Backend`]. [`Recorder`] records onto
//! a [`Tape`] for training; [`Eager`] computes values directly and keeps
//! nothing. Both call the same [`Matrix`] routines in the same order, so
//! their forward values agree bit for bit.

use std::borrow::Cow;

use crate::error::Result;
use crate::numerics::{Matrix, ParamStore, Tape, Var};

pub trait Backend {
    type Value: Clone;

    fn constant(&mut self, m: Matrix) -> Self::Value;
    fn param(&mut self, slot: usize) -> Self::Value;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add_bias(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, a: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale_rows(&mut self, a: &Self::Value, factors: &[f64]) -> Result<Self::Value>;

    /// `x * W[w] + b[b]`
    fn linear(&mut self, x: &Self::Value, w: usize, b: usize) -> Result<Self::Value> {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, &w)?;
        self.add_bias(&xw, &b)
    }
}

/// Direct evaluation borrowing the parameters.
pub struct Eager<'p> {
    params: &'p ParamStore,
}

impl<'p> Eager<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Eager { params }
    }
}

impl<'p> Backend for Eager<'p> {
    type Value = Cow<'p, Matrix>;

    fn constant(&mut self, m: Matrix) -> Self::Value {
        Cow::Owned(m)
    }

    fn param(&mut self, slot: usize) -> Self::Value {
        Cow::Borrowed(self.params.get(slot))
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.matmul(b).map(Cow::Owned)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.add(b).map(Cow::Owned)
    }

    fn add_bias(&mut self, x: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        x.add_row_bias(bias).map(Cow::Owned)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.hadamard(b).map(Cow::Owned)
    }

    fn tanh(&mut self, a: &Self::Value) -> Self::Value {
        Cow::Owned(a.tanh())
    }

    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value {
        Cow::Owned(a.sigmoid())
    }

    fn concat(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.concat_cols(b).map(Cow::Owned)
    }

    fn scale_rows(&mut self, a: &Self::Value, factors: &[f64]) -> Result<Self::Value> {
        a.scale_rows(factors).map(Cow::Owned)
    }
}

/// Records onto a tape; each parameter slot is bound once per tape.
pub struct Recorder<'a> {
    pub tape: &'a mut Tape,
    params: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Recorder<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a ParamStore) -> Self {
        Recorder {
            tape,
            params,
            bound: vec![None; params.len()],
        }
    }
}

impl Backend for Recorder<'_> {
    type Value = Var;

    fn constant(&mut self, m: Matrix) -> Var {
        self.tape.constant(m)
    }

    fn param(&mut self, slot: usize) -> Var {
        if let Some(v) = self.bound[slot] {
            return v;
        }
        let v = self.tape.param(slot, self.params.get(slot));
        self.bound[slot] = Some(v);
        v
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.matmul(*a, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn add_bias(&mut self, x: &Var, bias: &Var) -> Result<Var> {
        self.tape.add_bias(*x, *bias)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }

    fn tanh(&mut self, a: &Var) -> Var {
        self.tape.tanh(*a)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        self.tape.sigmoid(*a)
    }

    fn concat(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.concat(*a, *b)
    }

    fn scale_rows(&mut self, a: &Var, factors: &[f64]) -> Result<Var> {
        self.tape.scale_rows(*a, factors)
    }
}
