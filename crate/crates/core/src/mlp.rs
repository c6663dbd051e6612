//! Fully-connected superpixel classifier: ReLU hidden layers, one sigmoid
//! output, trained with mean binary crossentropy.
//!
//! Input layout is `[mask prior | pooled features]`, so `input_dim = 1 + D`.
//! Weights are generic over the float type: `f32` is what gets trained and
//! stored, `f64` is used for gradient checking.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 3] = [512, 512, 512];

/// One dense layer, `weights` is `outputs × inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    #[inline]
    fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn apply(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend((0..self.outputs).map(|o| dot(self.row(o), input) + self.bias[o]));
    }
}

#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary crossentropy of a logit, computed without overflow.
#[inline]
fn bce_from_logit<T: Float>(z: T, label: bool) -> T {
    let y = if label { T::one() } else { T::zero() };
    z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights<T = f32> {
    layers: Vec<Layer<T>>,
}

impl<T: Float> MlpWeights<T> {
    /// Checks that layer shapes chain, the output is a single unit and all
    /// values are finite.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        };
        if last.outputs != 1 {
            return Err(Error::InvalidParameter(alloc::format!("final layer must have 1 output, has {}", last.outputs)));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::InvalidParameter(alloc::format!("layer {i} has inconsistent shape")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::InvalidParameter(alloc::format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.inputs,
                    i - 1,
                    layers[i - 1].outputs
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!("layer {i} holds non-finite values")));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero network with the given hidden widths.
    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        let dims = layer_dims(input_dim, hidden);
        Self { layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect() }
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot<R: Rng>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let dims = layer_dims(input_dim, hidden);
        let layers = dims
            .windows(2)
            .map(|d| {
                let limit = libm::sqrt(6.0 / (d[0] + d[1]) as f64);
                let mut l = Layer::zeros(d[0], d[1]);
                for w in &mut l.weights {
                    *w = T::from(rng.gen_range(-limit..=limit)).unwrap();
                }
                l
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.parameter_count());
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
    }

    pub fn cast<U: Float>(&self) -> MlpWeights<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from(*x).unwrap()).collect();
        MlpWeights {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { inputs: l.inputs, outputs: l.outputs, weights: conv(&l.weights), bias: conv(&l.bias) })
                .collect(),
        }
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::LengthMismatch { what: "classifier input", expected: self.input_dim(), found: input.len() });
        }
        Ok(())
    }

    /// Pre-sigmoid output for one input.
    pub fn logit(&self, input: &[T]) -> Result<T> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Object probability per input.
    pub fn forward<I: AsRef<[T]>>(&self, batch: &[I]) -> Result<Vec<T>> {
        batch.iter().map(|x| self.logit(x.as_ref()).map(sigmoid)).collect()
    }

    /// `true` (object) iff the probability is strictly above `threshold`.
    pub fn classify<I: AsRef<[T]>>(&self, batch: &[I], threshold: T) -> Result<Vec<bool>> {
        Ok(self.forward(batch)?.into_iter().map(|p| p > threshold).collect())
    }

    /// Mean binary crossentropy over the batch and its gradient, flattened in
    /// [`parameters`](Self::parameters) order.
    pub fn loss_and_gradient<I: AsRef<[T]>>(&self, inputs: &[I], labels: &[bool]) -> Result<(T, Vec<T>)> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(Error::LengthMismatch { what: "labels", expected: inputs.len(), found: labels.len() });
        }
        let mut grads: Vec<Layer<T>> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let mut total = T::zero();
        let mut acts: Vec<Vec<T>> = vec![Vec::new(); self.layers.len() + 1];
        let last = self.layers.len() - 1;
        for (x, &label) in inputs.iter().zip(labels) {
            let x = x.as_ref();
            self.check_input(x)?;
            acts[0].clear();
            acts[0].extend_from_slice(x);
            for (i, layer) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(i + 1);
                layer.apply(&head[i], &mut tail[0]);
                if i < last {
                    tail[0].iter_mut().for_each(|v| *v = v.max(T::zero()));
                }
            }
            let z = acts[last + 1][0];
            total = total + bce_from_logit(z, label);
            let y = if label { T::one() } else { T::zero() };
            let mut delta = vec![sigmoid(z) - y];
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let g = &mut grads[i];
                let mut prev = vec![T::zero(); layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    g.bias[o] = g.bias[o] + d;
                    let grow = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, &a) in grow.iter_mut().zip(input) {
                        *gw = *gw + d * a;
                    }
                    if i > 0 {
                        for (p, &w) in prev.iter_mut().zip(layer.row(o)) {
                            *p = *p + d * w;
                        }
                    }
                }
                if i > 0 {
                    // ReLU derivative, the stored activation is post-ReLU
                    for (p, &a) in prev.iter_mut().zip(input) {
                        if a <= T::zero() {
                            *p = T::zero();
                        }
                    }
                }
                delta = prev;
            }
        }
        let n = T::from(inputs.len()).unwrap();
        let flat = grads.iter().flat_map(|l| l.weights.iter().chain(&l.bias).map(move |v| *v / n)).collect();
        Ok((total / n, flat))
    }
}

fn layer_dims(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(1);
    dims
}

/// One training example: `[prior | pooled features]` and its object label.
#[derive(Debug, Clone, PartialEq)]
pub struct SpxSample {
    pub input: Vec<f32>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.9, epochs: 30, batch_size: 64, hidden: DEFAULT_HIDDEN.to_vec(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: MlpWeights<f32>,
    /// Mean minibatch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Minibatch SGD (with optional momentum) on mean binary crossentropy.
/// Deterministic for a fixed seed and sample order.
pub fn train(samples: &[SpxSample], config: &TrainConfig) -> Result<TrainOutcome> {
    let positives = samples.iter().filter(|s| s.label).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::DegenerateTrainingSet);
    }
    let input_dim = samples[0].input.len();
    if input_dim == 0 {
        return Err(Error::InvalidParameter("empty sample input".into()));
    }
    for s in samples {
        if s.input.len() != input_dim {
            return Err(Error::LengthMismatch { what: "sample input", expected: input_dim, found: s.input.len() });
        }
        if !(0.0..=1.0).contains(&s.input[0]) {
            return Err(Error::InvalidParameter(alloc::format!("mask prior {} outside [0, 1]", s.input[0])));
        }
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("batch size and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: MlpWeights<f32> = MlpWeights::glorot(input_dim, &config.hidden, &mut rng);
    let mut params = weights.parameters();
    let mut velocity = vec![0.0f32; params.len()];
    let lr = config.learning_rate as f32;
    let mu = config.momentum as f32;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut inputs: Vec<&[f32]> = Vec::with_capacity(config.batch_size);
    let mut labels = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            inputs.clear();
            labels.clear();
            for &i in chunk {
                inputs.push(&samples[i].input);
                labels.push(samples[i].label);
            }
            let (loss, grad) = weights.loss_and_gradient(&inputs, &labels)?;
            epoch_loss += loss as f64;
            batches += 1;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mu * *v - lr * g;
                *p += *v;
            }
            weights.set_parameters(&params);
        }
        loss_curve.push(epoch_loss / batches as f64);
    }
    Ok(TrainOutcome { weights, loss_curve })
}
