//! One-hidden-layer regression network with analytic gradients.
//!
//! All weights and biases live in a single flat [`ParamVector`] laid out as
//! `[W1 (hidden x input, row-major) | b1 (hidden) | W2 (hidden) | b2]`, so the
//! federated layers can treat models as plain vectors.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpShape {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim", "must be at least 1"));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim: 1,
            activation: Activation::Relu,
        })
    }

    pub fn param_count(&self) -> usize {
        (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.output_dim
    }

    fn w1_len(&self) -> usize {
        self.input_dim * self.hidden_dim
    }

    fn b1_offset(&self) -> usize {
        self.w1_len()
    }

    fn w2_offset(&self) -> usize {
        self.w1_len() + self.hidden_dim
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.hidden_dim
    }

    /// Indices of every bias entry in the flat layout.
    pub fn bias_indices(&self) -> impl Iterator<Item = usize> {
        let b1 = self.b1_offset()..self.b1_offset() + self.hidden_dim;
        b1.chain(std::iter::once(self.b2_offset()))
    }
}

/// Flat parameter storage for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

/// Gradient with the same layout as [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self.len(), other.len())?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * scale).collect())
    }

    fn check_shape(&self, shape: &MlpShape) -> Result<()> {
        check_len(shape.param_count(), self.len())
    }
}

impl GradVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// One labelled reading: `[net_load, irradiance, temperature, humidity,
/// wind_speed]` and the community PV output in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, target: f64) -> Self {
        Self { features, target }
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights per layer, zero biases.
pub fn init_params<R: Rng + ?Sized>(shape: &MlpShape, rng: &mut R) -> ParamVector {
    let mut values = vec![0.0; shape.param_count()];
    let hidden_bound = 1.0 / (shape.input_dim as f64).sqrt();
    for w in &mut values[..shape.w1_len()] {
        *w = rng.gen_range(-hidden_bound..hidden_bound);
    }
    let out_bound = 1.0 / (shape.hidden_dim as f64).sqrt();
    let w2 = shape.w2_offset();
    for w in &mut values[w2..w2 + shape.hidden_dim] {
        *w = rng.gen_range(-out_bound..out_bound);
    }
    ParamVector(values)
}

// Writes post-ReLU hidden activations into `hidden` and returns the output.
#[inline]
fn forward_into(p: &[f64], shape: &MlpShape, x: &[f64], hidden: &mut [f64]) -> f64 {
    let n_in = shape.input_dim;
    let b1 = &p[shape.b1_offset()..shape.b1_offset() + shape.hidden_dim];
    let w2 = &p[shape.w2_offset()..shape.w2_offset() + shape.hidden_dim];
    let mut out = p[shape.b2_offset()];
    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &p[j * n_in..(j + 1) * n_in];
        let z = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[j];
        *h = if z > 0.0 { z } else { 0.0 };
        out += w2[j] * *h;
    }
    out
}

pub fn forward(params: &ParamVector, shape: &MlpShape, x: &[f64]) -> Result<f64> {
    params.check_shape(shape)?;
    check_len(shape.input_dim, x.len())?;
    let mut hidden = vec![0.0; shape.hidden_dim];
    Ok(forward_into(params.as_slice(), shape, x, &mut hidden))
}

/// Predictions for a batch of feature vectors.
pub fn predict<'a, I>(params: &ParamVector, shape: &MlpShape, samples: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Sample>,
{
    params.check_shape(shape)?;
    let mut hidden = vec![0.0; shape.hidden_dim];
    samples
        .into_iter()
        .map(|s| {
            check_len(shape.input_dim, s.features.len())?;
            Ok(forward_into(
                params.as_slice(),
                shape,
                &s.features,
                &mut hidden,
            ))
        })
        .collect()
}

/// Mean squared error over `data`.
pub fn mse_loss<'a, I>(params: &ParamVector, shape: &MlpShape, data: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Sample>,
{
    params.check_shape(shape)?;
    let mut hidden = vec![0.0; shape.hidden_dim];
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in data {
        check_len(shape.input_dim, s.features.len())?;
        let r = forward_into(params.as_slice(), shape, &s.features, &mut hidden) - s.target;
        sum += r * r;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("data"));
    }
    Ok(sum / n as f64)
}

/// Exact gradient of [`mse_loss`] by backpropagation.
pub fn grad_mse<'a, I>(params: &ParamVector, shape: &MlpShape, batch: I) -> Result<GradVector>
where
    I: IntoIterator<Item = &'a Sample>,
{
    params.check_shape(shape)?;
    let p = params.as_slice();
    let n_in = shape.input_dim;
    let n_hidden = shape.hidden_dim;
    let (b1_off, w2_off, b2_off) = (shape.b1_offset(), shape.w2_offset(), shape.b2_offset());

    let mut grad = vec![0.0; p.len()];
    let mut hidden = vec![0.0; n_hidden];
    let mut n = 0usize;
    for s in batch {
        check_len(n_in, s.features.len())?;
        let x = &s.features;
        let residual = forward_into(p, shape, x, &mut hidden) - s.target;
        // d(r^2)/d(out); the 1/n factor is applied at the end.
        let d_out = 2.0 * residual;
        grad[b2_off] += d_out;
        for j in 0..n_hidden {
            let h = hidden[j];
            grad[w2_off + j] += d_out * h;
            if h > 0.0 {
                let d_z = d_out * p[w2_off + j];
                grad[b1_off + j] += d_z;
                let row = &mut grad[j * n_in..(j + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d_z * xi;
                }
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(GradVector(grad))
}

/// Gradient of the proximal personalized objective
/// `F(v) + (mu / 2) * ||v - w_global||^2`.
pub fn grad_ditto<'a, I>(
    v: &ParamVector,
    w_global: &ParamVector,
    shape: &MlpShape,
    batch: I,
    mu: f64,
) -> Result<GradVector>
where
    I: IntoIterator<Item = &'a Sample>,
{
    check_len(v.len(), w_global.len())?;
    if !(mu >= 0.0) {
        return Err(Error::invalid("mu", format!("must be >= 0, got {mu}")));
    }
    let mut grad = grad_mse(v, shape, batch)?;
    if mu != 0.0 {
        for ((g, vi), wi) in grad.0.iter_mut().zip(v.as_slice()).zip(w_global.as_slice()) {
            *g += mu * (vi - wi);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// Mini-batch SGD: reshuffle each epoch, step once per batch (the last batch
/// may be short).
pub fn sgd_epochs<R, G>(
    start: &ParamVector,
    data: &[Sample],
    settings: SgdSettings,
    mut grad_fn: G,
    rng: &mut R,
) -> Result<ParamVector>
where
    R: Rng + ?Sized,
    G: FnMut(&ParamVector, &[&Sample]) -> Result<GradVector>,
{
    if settings.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if !(settings.lr >= 0.0) || !settings.lr.is_finite() {
        return Err(Error::invalid(
            "lr",
            format!("must be finite and >= 0, got {}", settings.lr),
        ));
    }
    let mut params = start.clone();
    if settings.epochs == 0 || data.is_empty() {
        return Ok(params);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<&Sample> = Vec::with_capacity(settings.batch_size);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(settings.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &data[i]));
            let grad = grad_fn(&params, &batch)?;
            check_len(params.len(), grad.len())?;
            for (p, g) in params.0.iter_mut().zip(&grad.0) {
                *p -= settings.lr * g;
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("sgd"));
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use approx::assert_relative_eq;

    fn shape(i: usize, h: usize) -> MlpShape {
        MlpShape::new(i, h).unwrap()
    }

    #[test]
    fn default_network_has_281_params() {
        assert_eq!(shape(5, 40).param_count(), 281);
        let p = init_params(&shape(5, 40), &mut rng_for(0, &[]));
        assert_eq!(p.len(), 281);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let s = shape(5, 40);
        let a = init_params(&s, &mut rng_for(0, &[]));
        let b = init_params(&s, &mut rng_for(0, &[]));
        assert_eq!(a, b);
        for i in s.bias_indices() {
            assert_eq!(a.as_slice()[i], 0.0);
        }
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.as_slice()[..200].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(MlpShape::new(0, 4).is_err());
        assert!(MlpShape::new(4, 0).is_err());
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let s = shape(3, 4);
        let mut p = ParamVector::zeros(s.param_count());
        p.as_mut_slice()[s.b2_offset()] = 1.75;
        assert_eq!(forward(&p, &s, &[3.0, -2.0, 9.0]).unwrap(), 1.75);
    }

    #[test]
    fn identity_passthrough_sums_inputs() {
        let s = shape(3, 3);
        let mut p = ParamVector::zeros(s.param_count());
        for j in 0..3 {
            p.as_mut_slice()[j * 3 + j] = 1.0;
            p.as_mut_slice()[s.w2_offset() + j] = 1.0;
        }
        assert_eq!(forward(&p, &s, &[0.5, 2.0, 4.0]).unwrap(), 6.5);
        // Negative inputs are clamped by the hidden ReLU.
        assert_eq!(forward(&p, &s, &[-1.0, 2.0, -4.0]).unwrap(), 2.0);
    }

    #[test]
    fn forward_rejects_bad_dimensions() {
        let s = shape(3, 2);
        let p = ParamVector::zeros(s.param_count());
        assert!(matches!(
            forward(&p, &s, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let short = ParamVector::zeros(3);
        assert!(forward(&short, &s, &[1.0, 2.0, 3.0]).is_err());
    }

    fn constant_model(s: &MlpShape, out: f64) -> ParamVector {
        let mut p = ParamVector::zeros(s.param_count());
        p.as_mut_slice()[s.b2_offset()] = out;
        p
    }

    #[test]
    fn mse_hand_values() {
        let s = shape(1, 2);
        let p = constant_model(&s, 2.0);
        assert_eq!(
            mse_loss(&p, &s, &[Sample::new(vec![0.3], 0.0)]).unwrap(),
            4.0
        );
        let data = [Sample::new(vec![0.0], 1.0), Sample::new(vec![1.0], -1.0)];
        assert_eq!(mse_loss(&p, &s, &data).unwrap(), 5.0);
        let exact = [Sample::new(vec![7.0], 2.0)];
        assert_eq!(mse_loss(&p, &s, &exact).unwrap(), 0.0);
        assert!(matches!(mse_loss(&p, &s, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn gradient_vanishes_on_perfect_fit_and_ignores_duplication() {
        let s = shape(2, 3);
        let p = constant_model(&s, 1.0);
        let batch = [
            Sample::new(vec![0.1, 0.2], 1.0),
            Sample::new(vec![0.4, 0.0], 1.0),
        ];
        let g = grad_mse(&p, &s, &batch).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));

        let p = init_params(&s, &mut rng_for(3, &[]));
        let batch = [
            Sample::new(vec![0.1, 0.9], 0.3),
            Sample::new(vec![0.7, 0.2], -0.4),
        ];
        let doubled: Vec<Sample> = batch.iter().chain(batch.iter()).cloned().collect();
        let g1 = grad_mse(&p, &s, &batch).unwrap();
        let g2 = grad_mse(&p, &s, &doubled).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        assert!(grad_mse(&p, &s, &[]).is_err());
    }

    #[test]
    fn ditto_gradient_reductions() {
        let s = shape(2, 3);
        let v = init_params(&s, &mut rng_for(1, &[]));
        let w = init_params(&s, &mut rng_for(2, &[]));
        let batch = [Sample::new(vec![0.5, 0.1], 0.8)];
        let plain = grad_mse(&v, &s, &batch).unwrap();
        assert_eq!(grad_ditto(&v, &w, &s, &batch, 0.0).unwrap(), plain);
        assert_eq!(grad_ditto(&v, &v, &s, &batch, 3.0).unwrap(), plain);
        assert!(grad_ditto(&v, &ParamVector::zeros(2), &s, &batch, 1.0).is_err());
        assert!(grad_ditto(&v, &w, &s, &batch, -1.0).is_err());
    }

    #[test]
    fn sgd_zero_epochs_is_noop_and_single_step_matches_gradient() {
        let s = shape(2, 3);
        let start = init_params(&s, &mut rng_for(5, &[]));
        let data = vec![Sample::new(vec![0.2, 0.6], 1.5)];
        let mut rng = rng_for(9, &[]);
        let settings = SgdSettings {
            epochs: 0,
            batch_size: 1,
            lr: 0.1,
        };
        let out = sgd_epochs(
            &start,
            &data,
            settings,
            |p, b| grad_mse(p, &s, b.iter().copied()),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, start);

        let settings = SgdSettings {
            epochs: 1,
            ..settings
        };
        let out = sgd_epochs(
            &start,
            &data,
            settings,
            |p, b| grad_mse(p, &s, b.iter().copied()),
            &mut rng,
        )
        .unwrap();
        let g = grad_mse(&start, &s, &data).unwrap();
        let mut expected = start.clone();
        for (e, gi) in expected.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *e -= 0.1 * gi;
        }
        assert_eq!(out, expected);
    }

    #[test]
    fn sgd_is_deterministic_per_seed() {
        let s = shape(2, 4);
        let start = init_params(&s, &mut rng_for(5, &[]));
        let data: Vec<Sample> = (0..37)
            .map(|i| {
                let x = i as f64 / 37.0;
                Sample::new(vec![x, 1.0 - x], 2.0 * x)
            })
            .collect();
        let settings = SgdSettings {
            epochs: 3,
            batch_size: 8,
            lr: 0.05,
        };
        let run = |seed| {
            sgd_epochs(
                &start,
                &data,
                settings,
                |p, b| grad_mse(p, &s, b.iter().copied()),
                &mut rng_for(seed, &[]),
            )
            .unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn sgd_rejects_bad_settings() {
        let s = shape(1, 1);
        let start = ParamVector::zeros(s.param_count());
        let data = vec![Sample::new(vec![0.0], 0.0)];
        let mut rng = rng_for(0, &[]);
        let g = |p: &ParamVector, b: &[&Sample]| grad_mse(p, &s, b.iter().copied());
        let bad_batch = SgdSettings {
            epochs: 1,
            batch_size: 0,
            lr: 0.1,
        };
        assert!(sgd_epochs(&start, &data, bad_batch, g, &mut rng).is_err());
        let bad_lr = SgdSettings {
            epochs: 1,
            batch_size: 1,
            lr: -0.1,
        };
        assert!(sgd_epochs(&start, &data, bad_lr, g, &mut rng).is_err());
    }
}
