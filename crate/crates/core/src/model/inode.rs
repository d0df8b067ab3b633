//! Input-filtering neural ODE.
//!
//! The latent state follows `dh/dt = f(h, u)` with
//!
//! ```text
//! f(h, u) = FC3(tanh(FC2(tanh([FC1(h), FCu(u)]))))
//! ```
//!
//! integrated by one forward Euler step per event, and a linear read-out
//! `z = FCc(h)` gives class logits after every step.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::backend::{Backend, Eager};
use crate::model::solver::{euler_update, VectorField};
use crate::numerics::{init_linear, Matrix, ParamStore};

pub const FC1_W: usize = 0;
pub const FC1_B: usize = 1;
pub const FCU_W: usize = 2;
pub const FCU_B: usize = 3;
pub const FC2_W: usize = 4;
pub const FC2_B: usize = 5;
pub const FC3_W: usize = 6;
pub const FC3_B: usize = 7;
pub const FCC_W: usize = 8;
pub const FCC_B: usize = 9;
pub const H0: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InodeConfig {
    pub state_dim: usize,
    /// Width of FC1, FCu and FC2 outputs.
    pub hidden: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// Learn the initial state instead of starting from zero.
    #[serde(default)]
    pub learn_h0: bool,
}

impl InodeConfig {
    /// The 30-state configuration.
    pub fn standard(classes: usize) -> Self {
        InodeConfig {
            state_dim: 30,
            hidden: 128,
            input_dim: 3,
            classes,
            learn_h0: false,
        }
    }

    fn layer_shapes(&self) -> Vec<(&'static str, usize, usize)> {
        let (s, h, f, c) = (self.state_dim, self.hidden, self.input_dim, self.classes);
        vec![
            ("fc1", s, h),
            ("fc_u", f, h),
            ("fc2", 2 * h, h),
            ("fc3", h, s),
            ("fc_c", s, c),
        ]
    }

    /// Scalars in FC1, FCu, FC2 and FC3 (weights and biases).
    pub fn dynamics_param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .filter(|(name, _, _)| *name != "fc_c")
            .map(|(_, i, o)| i * o + o)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        let classifier = self.state_dim * self.classes + self.classes;
        let h0 = if self.learn_h0 { self.state_dim } else { 0 };
        self.dynamics_param_count() + classifier + h0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inode {
    pub config: InodeConfig,
    pub params: ParamStore,
}

impl Inode {
    pub fn new<R: Rng>(config: InodeConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        for (name, fan_in, fan_out) in config.layer_shapes() {
            let (w, b) = init_linear(rng, fan_in, fan_out);
            params.push(format!("{name}.weight"), w);
            params.push(format!("{name}.bias"), b);
        }
        if config.learn_h0 {
            params.push("h0", Matrix::zeros(1, config.state_dim));
        }
        Inode { config, params }
    }

    pub fn from_params(config: InodeConfig, params: ParamStore) -> Result<Self> {
        let mut expected: Vec<(usize, usize)> = config
            .layer_shapes()
            .into_iter()
            .flat_map(|(_, i, o)| [(i, o), (1, o)])
            .collect();
        if config.learn_h0 {
            expected.push((1, config.state_dim));
        }
        if params.shapes() != expected {
            return Err(Error::Format(format!(
                "parameter shapes {:?} do not match the model layout {expected:?}",
                params.shapes()
            )));
        }
        Ok(Inode { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn initial_state<B: Backend>(&self, bk: &mut B, batch: usize) -> Result<B::Value> {
        let zeros = bk.constant(Matrix::zeros(batch, self.config.state_dim));
        if self.config.learn_h0 {
            let h0 = bk.param(H0);
            bk.add_bias(&zeros, &h0)
        } else {
            Ok(zeros)
        }
    }

    /// The vector field `f(h, u)`.
    pub fn dynamics<B: Backend>(&self, bk: &mut B, h: &B::Value, u: &B::Value) -> Result<B::Value> {
        let a = bk.linear(h, FC1_W, FC1_B)?;
        let b = bk.linear(u, FCU_W, FCU_B)?;
        let joined = bk.concat(&a, &b)?;
        let joined = bk.tanh(&joined);
        let hidden = bk.linear(&joined, FC2_W, FC2_B)?;
        let hidden = bk.tanh(&hidden);
        bk.linear(&hidden, FC3_W, FC3_B)
    }

    /// `h + dtau * f(h, u)`
    pub fn step<B: Backend>(&self, bk: &mut B, h: &B::Value, u: &B::Value, dtaus: &[f64]) -> Result<B::Value> {
        let dh = self.dynamics(bk, h, u)?;
        euler_update(bk, h, &dh, dtaus)
    }

    pub fn logits<B: Backend>(&self, bk: &mut B, h: &B::Value) -> Result<B::Value> {
        bk.linear(h, FCC_W, FCC_B)
    }

    /// `tanh(FCu(u))`: the part of the first hidden layer that depends only
    /// on the input.
    pub fn input_branch(&self, u: &Matrix) -> Result<Matrix> {
        Ok(u
            .matmul(self.params.get(FCU_W))?
            .add_row_bias(self.params.get(FCU_B))?
            .tanh())
    }

    /// [`Inode::euler_step`] with the input branch supplied precomputed.
    /// The result is bitwise identical.
    pub fn step_with_branch(&self, h: &Matrix, branch: &Matrix, dtaus: &[f64]) -> Result<Matrix> {
        let p = &self.params;
        let a = h.matmul(p.get(FC1_W))?.add_row_bias(p.get(FC1_B))?.tanh();
        let hidden = a
            .concat_cols(branch)?
            .matmul(p.get(FC2_W))?
            .add_row_bias(p.get(FC2_B))?
            .tanh();
        let dh = hidden.matmul(p.get(FC3_W))?.add_row_bias(p.get(FC3_B))?;
        h.add(&dh.scale_rows(dtaus)?)
    }

    pub fn f_eval(&self, h: &Matrix, u: &Matrix) -> Result<Matrix> {
        let mut bk = Eager::new(&self.params);
        Ok(self
            .dynamics(&mut bk, &Cow::Borrowed(h), &Cow::Borrowed(u))?
            .into_owned())
    }

    pub fn euler_step(&self, h: &Matrix, u: &Matrix, dtaus: &[f64]) -> Result<Matrix> {
        let mut bk = Eager::new(&self.params);
        Ok(self
            .step(&mut bk, &Cow::Borrowed(h), &Cow::Borrowed(u), dtaus)?
            .into_owned())
    }
}

impl VectorField for Inode {
    fn eval(&self, h: &Matrix, u: &Matrix) -> Result<Matrix> {
        self.f_eval(h, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> Inode {
        let config = InodeConfig {
            state_dim: 4,
            hidden: 6,
            input_dim: 3,
            classes: 3,
            learn_h0: false,
        };
        let mut model = Inode::new(config, &mut ChaCha8Rng::seed_from_u64(seed));
        // Non-zero biases so the scalar oracle exercises them.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for slot in [FC1_B, FCU_B, FC2_B, FC3_B] {
            for v in model.params.get_mut(slot).as_mut_slice() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        model
    }

    /// Straight-line scalar evaluation of f for one sample.
    fn scalar_f(model: &Inode, h: &[f64], u: &[f64]) -> Vec<f64> {
        let p = &model.params;
        let dense = |x: &[f64], w: usize, b: usize| -> Vec<f64> {
            let (wm, bm) = (p.get(w), p.get(b));
            (0..wm.cols())
                .map(|o| {
                    let mut s = bm.get(0, o);
                    for (i, xi) in x.iter().enumerate() {
                        s += xi * wm.get(i, o);
                    }
                    s
                })
                .collect()
        };
        let mut joined = dense(h, FC1_W, FC1_B);
        joined.extend(dense(u, FCU_W, FCU_B));
        let joined: Vec<f64> = joined.iter().map(|v| v.tanh()).collect();
        let hidden: Vec<f64> = dense(&joined, FC2_W, FC2_B).iter().map(|v| v.tanh()).collect();
        dense(&hidden, FC3_W, FC3_B)
    }

    #[test]
    fn matches_scalar_reimplementation() {
        let model = small(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = model.f_eval(&Matrix::row_vector(&h), &Matrix::row_vector(&u)).unwrap();
            let want = scalar_f(&model, &h, &u);
            for (g, w) in got.as_slice().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_field() {
        let mut model = small(3);
        for slot in 0..model.params.len() {
            let m = model.params.get_mut(slot);
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        let h = Matrix::filled(5, 4, 0.3);
        let u = Matrix::filled(5, 3, -1.0);
        assert_eq!(model.f_eval(&h, &u).unwrap(), Matrix::zeros(5, 4));
        assert_eq!(model.euler_step(&h, &u, &[0.5; 5]).unwrap(), h);
    }

    #[test]
    fn bias_only_field_is_constant() {
        let mut model = small(4);
        for slot in [FC1_W, FCU_W, FC2_W, FC3_W] {
            let m = model.params.get_mut(slot);
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        let fc3_bias = model.params.get(FC3_B).clone();
        let out = model.f_eval(&Matrix::filled(2, 4, 9.0), &Matrix::filled(2, 3, 1.0)).unwrap();
        assert_eq!(out.row(0), fc3_bias.as_slice());
        assert_eq!(out.row(1), fc3_bias.as_slice());
    }

    #[test]
    fn output_shape_for_any_batch() {
        let model = Inode::new(InodeConfig::standard(10), &mut ChaCha8Rng::seed_from_u64(0));
        for b in [1, 3, 17] {
            let out = model.f_eval(&Matrix::zeros(b, 30), &Matrix::zeros(b, 3)).unwrap();
            assert_eq!(out.shape(), (b, 30));
        }
        assert!(matches!(
            model.f_eval(&Matrix::zeros(2, 29), &Matrix::zeros(2, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_step_keeps_state() {
        let model = small(5);
        let h = Matrix::filled(2, 4, 0.7);
        let u = Matrix::filled(2, 3, 0.1);
        assert_eq!(model.euler_step(&h, &u, &[0.0, 0.0]).unwrap(), h);
    }

    #[test]
    fn parameter_counts() {
        let config = InodeConfig::standard(10);
        assert_eq!(30 * 128 + 128, 3968);
        assert_eq!(config.dynamics_param_count(), 41_246);
        let model = Inode::new(config, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(model.param_count(), 41_246 + 30 * 10 + 10);
        assert_eq!(model.param_count(), config.param_count());
        assert!((41_000..=43_000).contains(&model.param_count()));
    }

    #[test]
    fn from_params_checks_layout() {
        let model = small(6);
        assert!(Inode::from_params(model.config, model.params.clone()).is_ok());
        let mut wrong = model.config;
        wrong.classes = 4;
        assert!(Inode::from_params(wrong, model.params).is_err());
    }

    #[test]
    fn precomputed_branch_step_is_bitwise_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Inode::new(InodeConfig::standard(4), &mut rng);
        let h = Matrix::from_vec(2, 30, (0..60).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let u = Matrix::from_rows(&[&[0.2, -0.6, 1.0], &[-1.0, 0.5, -1.0]]).unwrap();
        let dtaus = [0.3, 1.0];
        let branch = m.input_branch(&u).unwrap();
        assert_eq!(m.step_with_branch(&h, &branch, &dtaus).unwrap(), m.euler_step(&h, &u, &dtaus).unwrap());
    }
}
