//! Parameterized layers. Each layer owns only its name prefix and sizes;
//! weights live in a [`ParamSet`] under `<prefix>/<weight>`.
//!
//! GRU convention (fixed so checkpoints are unambiguous): gates are packed
//! along the last axis in the order update `z`, reset `r`, candidate `h`.
//! `kernel: [in, 3u]` and `recurrent_kernel: [u, 3u]` carry separate biases
//! `input_bias: [3u]` and `recurrent_bias: [3u]`, and the reset gate is
//! applied after the recurrent product:
//!
//! ```text
//! z  = sigmoid(x Wz + bz + h Uz + cz)
//! r  = sigmoid(x Wr + br + h Ur + cr)
//! h~ = tanh(x Wh + bh + r * (h Uh + ch))
//! h' = z * h + (1 - z) * h~
//! ```

use crate::error::Result;
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::init::{fans, glorot_uniform, orthogonal, Rng};
use crate::ops::Padding;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Batch-norm running average momentum.
pub const BN_MOMENTUM: f64 = 0.99;
/// Batch-norm variance epsilon.
pub const BN_EPSILON: f64 = 1e-3;

fn path(prefix: &str, leaf: &str) -> String {
    format!("{prefix}/{leaf}")
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn init<T: Float>(&self, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        params.insert(
            path(&self.name, "kernel"),
            glorot_uniform(&[self.input, self.output], self.input, self.output, rng),
            true,
        )?;
        params.insert(path(&self.name, "bias"), Tensor::zeros(&[self.output]), true)
    }

    /// Acts on the last axis of `x`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w = g.param(&path(&self.name, "kernel"), params)?;
        let b = g.param(&path(&self.name, "bias"), params)?;
        let y = g.matmul(x, w)?;
        let mut bshape = vec![1; g.shape(y).len()];
        *bshape.last_mut().unwrap() = self.output;
        let b = g.reshape(b, &bshape)?;
        g.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub kernel: usize,
    pub input: usize,
    pub output: usize,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, kernel: usize, input: usize, output: usize) -> Self {
        Self {
            name: name.into(),
            kernel,
            input,
            output,
            padding: Padding::Same,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.kernel, self.kernel, self.input, self.output]
    }

    pub fn init<T: Float>(&self, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        let shape = self.shape();
        let (fi, fo) = fans(&shape);
        params.insert(path(&self.name, "kernel"), glorot_uniform(&shape, fi, fo, rng), true)?;
        params.insert(path(&self.name, "bias"), Tensor::zeros(&[self.output]), true)
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w = g.param(&path(&self.name, "kernel"), params)?;
        let b = g.param(&path(&self.name, "bias"), params)?;
        g.conv2d(x, w, b, self.padding)
    }
}

/// Batch normalization over the last (channel) axis with trainable scale
/// and shift and running statistics stored as non-trainable entries.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn init<T: Float>(&self, params: &mut ParamSet<T>) -> Result<()> {
        params.insert(path(&self.name, "gamma"), Tensor::ones(&[self.channels]), true)?;
        params.insert(path(&self.name, "beta"), Tensor::zeros(&[self.channels]), true)?;
        params.insert_statistic(path(&self.name, "moving_mean"), Tensor::zeros(&[self.channels]))?;
        params.insert_statistic(path(&self.name, "moving_variance"), Tensor::ones(&[self.channels]))
    }

    /// In training mode normalizes with batch statistics and queues the
    /// running-average update on the graph; otherwise uses the stored
    /// running statistics.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&path(&self.name, "gamma"), params)?;
        let beta = g.param(&path(&self.name, "beta"), params)?;
        let mean_path = path(&self.name, "moving_mean");
        let var_path = path(&self.name, "moving_variance");
        if g.is_training() {
            let (y, stats) = g.batch_norm_train(x, gamma, beta, BN_EPSILON)?;
            let m = T::from_f64c(BN_MOMENTUM);
            let one_m = T::one() - m;
            let n = stats.count;
            let bessel = if n > 1 {
                T::from_f64c(n as f64 / (n as f64 - 1.0))
            } else {
                T::one()
            };
            let new_mean = params
                .tensor(&mean_path)?
                .zip_map(&stats.mean, |old, b| m * old + one_m * b);
            let new_var = params
                .tensor(&var_path)?
                .zip_map(&stats.variance, |old, b| m * old + one_m * b * bessel);
            g.push_state_update(mean_path, new_mean);
            g.push_state_update(var_path, new_var);
            Ok(y)
        } else {
            let mean = g.param(&mean_path, params)?;
            let var = g.param(&var_path, params)?;
            g.batch_norm_infer(x, gamma, beta, mean, var, BN_EPSILON)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub name: String,
    pub input: usize,
    pub units: usize,
}

impl Gru {
    pub fn new(name: impl Into<String>, input: usize, units: usize) -> Self {
        Self {
            name: name.into(),
            input,
            units,
        }
    }

    pub fn init<T: Float>(&self, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        let (d, u) = (self.input, self.units);
        params.insert(path(&self.name, "kernel"), glorot_uniform(&[d, 3 * u], d, 3 * u, rng), true)?;
        params.insert(path(&self.name, "recurrent_kernel"), orthogonal(u, 3 * u, rng), true)?;
        params.insert(path(&self.name, "input_bias"), Tensor::zeros(&[3 * u]), true)?;
        params.insert(path(&self.name, "recurrent_bias"), Tensor::zeros(&[3 * u]), true)
    }

    /// `x: [B, T, in] -> [B, T, units]`. A backward layer reads the
    /// sequence right to left; output step `t` is still aligned with input
    /// step `t`. The initial state is zero.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var, direction: Direction) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(crate::Error::invalid(
                "gru",
                format!("expected [B, T >= 1, {}], got {shape:?}", self.input),
            ));
        }
        let (batch, steps, u) = (shape[0], shape[1], self.units);
        let w = g.param(&path(&self.name, "kernel"), params)?;
        let uk = g.param(&path(&self.name, "recurrent_kernel"), params)?;
        let bi = g.param(&path(&self.name, "input_bias"), params)?;
        let br = g.param(&path(&self.name, "recurrent_bias"), params)?;
        let bi = g.reshape(bi, &[1, 1, 3 * u])?;
        let br = g.reshape(br, &[1, 3 * u])?;
        let xp = g.matmul(x, w)?;
        let xp = g.add(xp, bi)?;
        let mut h = g.input(Tensor::zeros(&[batch, u]));
        let mut outputs = vec![None; steps];
        let order: Vec<usize> = match direction {
            Direction::Forward => (0..steps).collect(),
            Direction::Backward => (0..steps).rev().collect(),
        };
        for t in order {
            let xt = g.select(xp, 1, t)?;
            let hp = g.matmul(h, uk)?;
            let hp = g.add(hp, br)?;
            let xz = g.slice(xt, 1, 0, u)?;
            let xr = g.slice(xt, 1, u, u)?;
            let xh = g.slice(xt, 1, 2 * u, u)?;
            let hz = g.slice(hp, 1, 0, u)?;
            let hr = g.slice(hp, 1, u, u)?;
            let hh = g.slice(hp, 1, 2 * u, u)?;
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let rh = g.mul(r, hh)?;
            let cand = g.add(xh, rh)?;
            let cand = g.tanh(cand);
            // h' = cand + z * (h - cand)
            let diff = g.sub(h, cand)?;
            let gated = g.mul(z, diff)?;
            h = g.add(cand, gated)?;
            outputs[t] = Some(h);
        }
        let outputs: Vec<Var> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        g.stack(&outputs, 1)
    }
}

/// Two GRUs over the same sequence, outputs concatenated per step as
/// `[forward, backward]`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

impl BiGru {
    pub fn new(name: &str, input: usize, units: usize) -> Self {
        Self {
            forward: Gru::new(path(name, "forward"), input, units),
            backward: Gru::new(path(name, "backward"), input, units),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn init<T: Float>(&self, params: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        self.forward.init(params, rng)?;
        self.backward.init(params, rng)
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let f = self.forward.forward(g, params, x, Direction::Forward)?;
        let b = self.backward.forward(g, params, x, Direction::Backward)?;
        g.concat(&[f, b], 2)
    }
}
