use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{unflatten, ContextSchema, ContextVector, TipTrajectory, TrainingSet};
use super::{serde_rows, serde_vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// out x in
    #[serde(with = "serde_rows")]
    pub weights: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub bias: DVector<f64>,
}

/// Fully connected network: ReLU on hidden layers, affine output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// He-uniform hidden weights, zero output weights, zero biases.
    pub fn new(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let last = layer_sizes.len() - 2;
        let layers = layer_sizes
            .windows(2)
            .enumerate()
            .map(|(j, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = if j == last { 0.0 } else { (6.0 / fan_in as f64).sqrt() };
                DenseLayer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| if limit > 0.0 { rng.gen_range(-limit..limit) } else { 0.0 }),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weights.nrows()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat parameter vector: per layer, weights in column-major order, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&params[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Forward pass on a batch stored column-wise (in x n).
    pub fn forward(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(inputs).pop().unwrap()
    }

    fn forward_cached(&self, inputs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * &acts[i];
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error over all output entries and its gradient with
    /// respect to `params()`.
    pub fn loss_and_gradient(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let acts = self.forward_cached(inputs);
        let out = &acts[acts.len() - 1];
        let diff = out - targets;
        let scale = 1.0 / diff.len() as f64;
        let loss = diff.norm_squared() * scale;
        let mut delta = diff * (2.0 * scale);
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = &delta * acts[i].transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let mut prev = self.layers[i].weights.tr_mul(&delta);
                prev.zip_apply(&acts[i], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in &grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        (loss, flat)
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for NetHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-3, epochs: 5000, batch_size: None, seed: 0 }
    }
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Rows of `data` are samples. Dimensions constant up to rounding get std 1.
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let n = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.column_iter() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            let constant = !(sd > 1e-12 * mu.abs().max(1.0)) || !sd.is_finite();
            std.push(if constant { 1.0 } else { sd });
        }
        Self { mean, std }
    }

    pub fn apply(&self, v: f64, i: usize) -> f64 {
        (v - self.mean[i]) / self.std[i]
    }

    pub fn invert(&self, v: f64, i: usize) -> f64 {
        v * self.std[i] + self.mean[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryNetModel {
    pub schema: ContextSchema,
    pub waypoints: usize,
    pub layer_sizes: Vec<usize>,
    pub hyper: NetHyper,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
    pub network: Mlp,
    /// Standardized-space MSE after the last update.
    pub final_loss: f64,
}

impl TrajectoryNetModel {
    pub fn predict_flat(&self, context: &[f64]) -> Result<Vec<f64>> {
        let k = self.network.input_dim();
        if context.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: context.len() });
        }
        let x = DMatrix::from_fn(k, 1, |i, _| self.input_norm.apply(context[i], i));
        let y = self.network.forward(&x);
        Ok(y.iter().enumerate().map(|(i, &v)| self.output_norm.invert(v, i)).collect())
    }

    pub fn predict(&self, context: &ContextVector) -> Result<TipTrajectory> {
        if context.schema() != self.schema {
            return Err(Error::SchemaMismatch { expected: self.schema.to_string(), got: context.schema().to_string() });
        }
        unflatten(&self.predict_flat(context.values())?, self.waypoints)
    }
}

/// Parses `"2x128"` into `[128, 128]`.
pub fn parse_arch(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidConfig(format!("architecture must look like 2x128, got {text:?}"));
    let (depth, width) = text.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let depth: usize = depth.trim().parse().map_err(|_| bad())?;
    let width: usize = width.trim().parse().map_err(|_| bad())?;
    if width == 0 {
        return Err(bad());
    }
    Ok(vec![width; depth])
}

pub fn train_trajectory_net(data: &TrainingSet, layer_sizes: &[usize], hyper: &NetHyper) -> Result<TrajectoryNetModel> {
    let k = data.context_dim();
    let out = 3 * data.waypoints();
    if layer_sizes.first() != Some(&k) {
        return Err(Error::DimensionMismatch { expected: k, got: layer_sizes.first().copied().unwrap_or(0) });
    }
    if layer_sizes.last() != Some(&out) {
        return Err(Error::DimensionMismatch { expected: out, got: layer_sizes.last().copied().unwrap_or(0) });
    }
    if !(hyper.learning_rate > 0.0) || hyper.batch_size == Some(0) {
        return Err(Error::InvalidConfig(format!("invalid network hyperparameters: {hyper:?}")));
    }
    let raw_x = data.context_matrix();
    let raw_y = data.target_matrix();
    let input_norm = Standardizer::fit(&raw_x);
    let output_norm = Standardizer::fit(&raw_y);
    let x = DMatrix::from_fn(k, data.len(), |i, n| input_norm.apply(raw_x[(n, i)], i));
    let y = DMatrix::from_fn(out, data.len(), |i, n| output_norm.apply(raw_y[(n, i)], i));

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut network = Mlp::new(layer_sizes, &mut rng)?;
    let mut params = network.params();
    let mut adam = Adam::new(params.len(), hyper.learning_rate);
    let batch = hyper.batch_size.unwrap_or(data.len()).min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..hyper.epochs {
        if batch == data.len() {
            let (_, grad) = network.loss_and_gradient(&x, &y);
            adam.step(&mut params, &grad);
            network.set_params(&params)?;
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let bx = x.select_columns(chunk);
                let by = y.select_columns(chunk);
                let (_, grad) = network.loss_and_gradient(&bx, &by);
                adam.step(&mut params, &grad);
                network.set_params(&params)?;
            }
        }
    }
    let final_loss = (network.forward(&x) - &y).norm_squared() / (out * data.len()) as f64;
    if !final_loss.is_finite() {
        return Err(Error::DegenerateData("network training diverged".into()));
    }
    Ok(TrajectoryNetModel {
        schema: data.schema(),
        waypoints: data.waypoints(),
        layer_sizes: layer_sizes.to_vec(),
        hyper: hyper.clone(),
        input_norm,
        output_norm,
        network,
        final_loss,
    })
}
