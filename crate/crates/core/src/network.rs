//! Surrogate embedding network `M: image → ℝᵐ`.
//!
//! A plain stack of conv / pooling / activation / flatten / linear layers with
//! analytic input and parameter gradients. The default desk architecture is
//! four stride-2 3×3 conv blocks (8/16/32/64 channels, ReLU) followed by a
//! linear projection to 128 features.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{ImageTensor, InputSpec};
use crate::tensor_math::{
    activation_backward, activation_forward, avg_pool_backward, avg_pool_forward, conv2d_backward,
    conv2d_backward_input, conv2d_forward, linear_backward, linear_backward_input, linear_forward, Activation,
    AdamConfig, AdamState, Tensor,
};
use crate::transforms::{apply_transform, TransformSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PHNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const DESK_INPUT: InputSpec = InputSpec::new(64, 64, 3);
pub const DESK_CHANNELS: [usize; 4] = [8, 16, 32, 64];
pub const EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    AvgPool2d {
        size: usize,
    },
    Activation(Activation),
    Flatten,
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
}

impl Layer {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(match self {
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => {
                let g = crate::tensor_math::ConvGeometry::new(input, kernel.shape(), *stride, *padding)?;
                bias.expect_shape(&[g.filters])?;
                g.output_shape().to_vec()
            }
            Layer::AvgPool2d { size } => {
                ensure!(
                    input.len() == 3 && *size >= 1 && *size <= input[0] && *size <= input[1],
                    Dimension,
                    "pool window {size} does not fit {input:?}"
                );
                vec![input[0] / size, input[1] / size, input[2]]
            }
            Layer::Activation(kind) => {
                kind.validate()?;
                input.to_vec()
            }
            Layer::Flatten => vec![input.iter().product()],
            Layer::Linear { weight, bias } => {
                ensure!(
                    input.len() == 1 && weight.rank() == 2 && weight.shape()[0] == input[0],
                    Dimension,
                    "linear layer {:?} cannot take input {input:?}",
                    weight.shape()
                );
                bias.expect_shape(&[weight.shape()[1]])?;
                vec![weight.shape()[1]]
            }
        })
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                padding,
            } => conv2d_forward(input, kernel, Some(bias), *stride, *padding),
            Layer::AvgPool2d { size } => avg_pool_forward(input, *size),
            Layer::Activation(kind) => activation_forward(input, *kind),
            Layer::Flatten => input.clone().reshape(&[input.len()]),
            Layer::Linear { weight, bias } => linear_forward(input, weight, Some(bias)),
        }
    }

    fn backward_input(&self, input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => conv2d_backward_input(input.shape(), kernel, *stride, *padding, upstream),
            Layer::AvgPool2d { size } => avg_pool_backward(input.shape(), *size, upstream),
            Layer::Activation(kind) => activation_backward(input, *kind, upstream),
            Layer::Flatten => upstream.clone().reshape(input.shape()),
            Layer::Linear { weight, .. } => linear_backward_input(input.shape(), weight, upstream),
        }
    }

    /// Input gradient plus `(weight, bias)` gradients for parameterized layers.
    fn backward_full(&self, input: &Tensor, upstream: &Tensor) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        match self {
            Layer::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let g = conv2d_backward(input, kernel, *stride, *padding, upstream)?;
                Ok((g.input, Some((g.kernel, g.bias))))
            }
            Layer::Linear { weight, .. } => {
                let g = linear_backward(input, weight, upstream)?;
                Ok((g.input, Some((g.weight, g.bias))))
            }
            _ => Ok((self.backward_input(input, upstream)?, None)),
        }
    }

    fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv2d { kernel, bias, .. } => Some((kernel, bias)),
            Layer::Linear { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv2d { kernel, bias, .. } => Some((kernel, bias)),
            Layer::Linear { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }
}

/// Cached per-layer inputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Tensor>,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork {
    input_spec: InputSpec,
    layers: Vec<Layer>,
    output_dim: usize,
}

impl EmbeddingNetwork {
    pub fn from_layers(input_spec: InputSpec, layers: Vec<Layer>) -> Result<Self> {
        input_spec.validate()?;
        let mut shape = input_spec.shape().to_vec();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
            if let Some((w, b)) = layer.params() {
                ensure!(w.is_finite() && b.is_finite(), Input, "non-finite network parameter");
            }
        }
        ensure!(
            shape.len() == 1,
            Dimension,
            "network must end in a vector, ends in {shape:?}"
        );
        Ok(Self {
            input_spec,
            layers,
            output_dim: shape[0],
        })
    }

    /// Stride-2 3×3 conv blocks with ReLU, then flatten and a linear map to
    /// `output_dim`. Weights are seeded Glorot-uniform, biases zero.
    pub fn conv_stack(input_spec: InputSpec, channels: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        input_spec.validate()?;
        ensure!(output_dim >= 1, Config, "output dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let (mut h, mut w, mut c) = (input_spec.height, input_spec.width, input_spec.channels);
        for &f in channels {
            ensure!(f >= 1, Config, "conv channel count must be positive");
            let kernel = glorot(&mut rng, &[3, 3, c, f], 9 * c, 9 * f);
            layers.push(Layer::Conv2d {
                kernel,
                bias: Tensor::zeros(&[f]),
                stride: 2,
                padding: 1,
            });
            layers.push(Layer::Activation(Activation::Relu));
            h = (h + 2 - 3) / 2 + 1;
            w = (w + 2 - 3) / 2 + 1;
            c = f;
        }
        layers.push(Layer::Flatten);
        let flat = h * w * c;
        layers.push(Layer::Linear {
            weight: glorot(&mut rng, &[flat, output_dim], flat, output_dim),
            bias: Tensor::zeros(&[output_dim]),
        });
        Self::from_layers(input_spec, layers)
    }

    /// Default desk-scale network: 64×64×3 input, m = 128.
    pub fn desk(seed: u64) -> Self {
        Self::conv_stack(DESK_INPUT, &DESK_CHANNELS, EMBEDDING_DIM, seed).expect("desk architecture is valid")
    }

    pub fn input_spec(&self) -> InputSpec {
        self.input_spec
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        ensure!(
            image.spec() == self.input_spec,
            Input,
            "image is {:?}, network expects {:?}",
            image.spec(),
            self.input_spec
        );
        Ok(())
    }

    pub fn embed(&self, image: &ImageTensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut x = image.as_tensor().clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, image: &ImageTensor) -> Result<ForwardTrace> {
        self.check_image(image)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = image.as_tensor().clone();
        for layer in &self.layers {
            let next = layer.forward(&x)?;
            inputs.push(x);
            x = next;
        }
        Ok(ForwardTrace { inputs, output: x })
    }

    /// Gradient of `⟨embed(image), upstream⟩` with respect to the image.
    pub fn backward_input(&self, trace: &ForwardTrace, upstream: &Tensor) -> Result<Tensor> {
        ensure!(
            upstream.len() == self.output_dim,
            Dimension,
            "upstream gradient has length {}, expected {}",
            upstream.len(),
            self.output_dim
        );
        let mut grad = upstream.clone().reshape(&[self.output_dim])?;
        for (layer, input) in self.layers.iter().zip(&trace.inputs).rev() {
            grad = layer.backward_input(input, &grad)?;
        }
        Ok(grad)
    }

    pub fn embed_input_gradient(&self, image: &ImageTensor, upstream: &Tensor) -> Result<Tensor> {
        let trace = self.forward_trace(image)?;
        self.backward_input(&trace, upstream)
    }

    /// Gradients of `⟨embed(image), upstream⟩` with respect to all parameters,
    /// flattened in [`Self::parameters`] order.
    pub fn backward_params(&self, trace: &ForwardTrace, upstream: &Tensor) -> Result<Vec<f64>> {
        let mut grad = upstream.clone().reshape(&[self.output_dim])?;
        let mut per_layer: Vec<Option<(Tensor, Tensor)>> = Vec::with_capacity(self.layers.len());
        for (layer, input) in self.layers.iter().zip(&trace.inputs).rev() {
            let (g, params) = layer.backward_full(input, &grad)?;
            per_layer.push(params);
            grad = g;
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.parameter_count());
        for (w, b) in per_layer.into_iter().flatten() {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b.data());
        }
        Ok(flat)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b.data());
        }
        flat
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(
            flat.len() == self.parameter_count(),
            Dimension,
            "expected {} parameters, got {}",
            self.parameter_count(),
            flat.len()
        );
        ensure!(flat.iter().all(|v| v.is_finite()), Input, "non-finite parameter");
        let mut offset = 0;
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            for t in [w, b] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for d in self.input_spec.shape() {
            put_u32(&mut out, d as u32);
        }
        put_u32(&mut out, self.layers.len() as u32);
        for layer in &self.layers {
            match layer {
                Layer::Conv2d {
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    out.push(0);
                    put_u32(&mut out, *stride as u32);
                    put_u32(&mut out, *padding as u32);
                    put_dims(&mut out, kernel.shape());
                    put_f64s(&mut out, kernel.data());
                    put_f64s(&mut out, bias.data());
                }
                Layer::AvgPool2d { size } => {
                    out.push(1);
                    put_u32(&mut out, *size as u32);
                }
                Layer::Activation(Activation::Relu) => out.push(2),
                Layer::Activation(Activation::SigmoidScaled(c)) => {
                    out.push(3);
                    put_f64s(&mut out, &[*c]);
                }
                Layer::Activation(Activation::Tanh) => out.push(4),
                Layer::Flatten => out.push(5),
                Layer::Linear { weight, bias } => {
                    out.push(6);
                    put_dims(&mut out, weight.shape());
                    put_f64s(&mut out, weight.data());
                    put_f64s(&mut out, bias.data());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        ensure!(
            r.take(4)? == CHECKPOINT_MAGIC,
            Format,
            "not a network checkpoint (bad magic)"
        );
        let version = r.u32()?;
        ensure!(
            version == CHECKPOINT_VERSION,
            Format,
            "unsupported checkpoint version {version}"
        );
        let spec = InputSpec::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let layer = match r.take(1)?[0] {
                0 => {
                    let stride = r.u32()? as usize;
                    let padding = r.u32()? as usize;
                    let dims = r.dims(4)?;
                    let kernel = r.tensor(dims.clone())?;
                    let bias = r.tensor(vec![dims[3]])?;
                    Layer::Conv2d {
                        kernel,
                        bias,
                        stride,
                        padding,
                    }
                }
                1 => Layer::AvgPool2d {
                    size: r.u32()? as usize,
                },
                2 => Layer::Activation(Activation::Relu),
                3 => Layer::Activation(Activation::SigmoidScaled(r.f64()?)),
                4 => Layer::Activation(Activation::Tanh),
                5 => Layer::Flatten,
                6 => {
                    let dims = r.dims(2)?;
                    let weight = r.tensor(dims.clone())?;
                    let bias = r.tensor(vec![dims[1]])?;
                    Layer::Linear { weight, bias }
                }
                tag => return Err(Error::Format(format!("unknown layer tag {tag}"))),
            };
            layers.push(layer);
        }
        ensure!(r.pos == bytes.len(), Format, "trailing bytes after checkpoint");
        Self::from_layers(spec, layers).map_err(|e| Error::Format(format!("invalid checkpoint: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-a..a))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    for &d in dims {
        put_u32(out, d as u32);
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dims(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn tensor(&mut self, shape: Vec<usize>) -> Result<Tensor> {
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| Error::Format("tensor larger than remaining data".into()))?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            margin: 0.5,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveHistory {
    /// Mean triplet loss over a fixed held triplet set; entry 0 is before training.
    pub eval_loss: Vec<f64>,
    /// Mean triplet loss over the batches of each epoch.
    pub train_loss: Vec<f64>,
}

/// Triplet of an image, a perceptually similar variant, and a different image.
#[derive(Debug, Clone)]
pub struct ContrastivePair {
    pub anchor: ImageTensor,
    pub positive: ImageTensor,
    pub negative: ImageTensor,
}

fn random_augmentation(rng: &mut ChaCha8Rng, spec: InputSpec) -> TransformSpec {
    match rng.random_range(0..3) {
        0 => TransformSpec::FlipHorizontal,
        1 => {
            let side = spec.height.min(spec.width);
            let lo = (side * 3 / 4).max(1);
            TransformSpec::CenterCrop {
                window: rng.random_range(lo..=side),
            }
        }
        _ => TransformSpec::BrightnessScale {
            factor: rng.random_range(0.7..1.3),
        },
    }
}

fn make_triplet(corpus: &[ImageTensor], anchor: usize, rng: &mut ChaCha8Rng) -> Result<ContrastivePair> {
    let spec = corpus[anchor].spec();
    let positive = apply_transform(&corpus[anchor], &random_augmentation(rng, spec))?;
    let mut neg = rng.random_range(0..corpus.len() - 1);
    if neg >= anchor {
        neg += 1;
    }
    Ok(ContrastivePair {
        anchor: corpus[anchor].clone(),
        positive,
        negative: corpus[neg].clone(),
    })
}

/// Cosine similarity and its gradients with respect to both arguments.
fn cosine_with_grads(a: &Tensor, b: &Tensor) -> (f64, Vec<f64>, Vec<f64>) {
    let na = a.norm_l2().max(1e-12);
    let nb = b.norm_l2().max(1e-12);
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let ga = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let gb = b
        .data()
        .iter()
        .zip(a.data())
        .map(|(y, x)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    (cos, ga, gb)
}

/// `max(0, margin − cos(zₐ, z₊) + cos(zₐ, z₋))`, accumulating parameter
/// gradients scaled by `weight` into `grads` when provided.
fn triplet_loss(
    net: &EmbeddingNetwork,
    t: &ContrastivePair,
    margin: f64,
    grads: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    let ta = net.forward_trace(&t.anchor)?;
    let tp = net.forward_trace(&t.positive)?;
    let tn = net.forward_trace(&t.negative)?;
    let (cos_p, ga_p, gp) = cosine_with_grads(ta.output(), tp.output());
    let (cos_n, ga_n, gn) = cosine_with_grads(ta.output(), tn.output());
    let loss = (margin - cos_p + cos_n).max(0.0);
    if let Some((acc, weight)) = grads {
        if loss > 0.0 {
            let m = net.output_dim();
            let up_a = Tensor::from_fn(&[m], |i| weight * (ga_n[i] - ga_p[i]));
            let up_p = Tensor::from_fn(&[m], |i| -weight * gp[i]);
            let up_n = Tensor::from_fn(&[m], |i| weight * gn[i]);
            for (trace, up) in [(&ta, up_a), (&tp, up_p), (&tn, up_n)] {
                let g = net.backward_params(trace, &up)?;
                for (s, v) in acc.iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
    }
    Ok(loss)
}

/// Self-supervised triplet training with augmentation positives. Returns a
/// trained copy of `net` and its loss history; fully determined by `config.seed`.
pub fn pretrain_contrastive(
    net: &EmbeddingNetwork,
    corpus: &[ImageTensor],
    config: &ContrastiveConfig,
) -> Result<(EmbeddingNetwork, ContrastiveHistory)> {
    ensure!(
        corpus.len() >= 2,
        Config,
        "contrastive training needs at least 2 images"
    );
    ensure!(config.batch_size >= 1, Config, "batch size must be positive");
    ensure!(config.margin >= 0.0, Config, "margin must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xE7A1_0000);
    let held: Vec<ContrastivePair> = (0..corpus.len())
        .map(|i| make_triplet(corpus, i, &mut eval_rng))
        .collect::<Result<_>>()?;
    let evaluate = |net: &EmbeddingNetwork| -> Result<f64> {
        let mut total = 0.0;
        for t in &held {
            total += triplet_loss(net, t, config.margin, None)?;
        }
        Ok(total / held.len() as f64)
    };

    let mut net = net.clone();
    let mut params = net.parameters();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_learning_rate(config.learning_rate))?;
    let mut history = ContrastiveHistory {
        eval_loss: vec![evaluate(&net)?],
        train_loss: Vec::new(),
    };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let triplet = make_triplet(corpus, i, &mut rng)?;
                batch_loss += triplet_loss(&net, &triplet, config.margin, Some((&mut grads, weight)))?;
            }
            batch_loss *= weight;
            ensure!(
                batch_loss.is_finite(),
                Training,
                "non-finite contrastive loss in epoch {epoch}"
            );
            adam.step(&mut params, &grads)?;
            net.set_parameters(&params)?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);
        history.eval_loss.push(evaluate(&net)?);
        log::debug!(
            "contrastive epoch {epoch}: train {:.5} eval {:.5}",
            history.train_loss[epoch],
            history.eval_loss[epoch + 1]
        );
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_math::finite_diff_check;

    fn tiny(seed: u64) -> EmbeddingNetwork {
        EmbeddingNetwork::conv_stack(InputSpec::new(8, 8, 1), &[4, 6], 5, seed).unwrap()
    }

    fn tiny_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(8, 8, 1, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn desk_network_shape() {
        let net = EmbeddingNetwork::desk(1);
        assert_eq!(net.output_dim(), 128);
        assert_eq!(net.input_spec(), DESK_INPUT);
        let z = net.embed(&crate::synthetic::scene(DESK_INPUT, 3)).unwrap();
        assert_eq!(z.shape(), &[128]);
        assert!(z.is_finite());
    }

    #[test]
    fn embed_is_deterministic_and_checks_shape() {
        let net = tiny(3);
        let img = tiny_image(1);
        assert_eq!(net.embed(&img).unwrap(), net.embed(&img.clone()).unwrap());
        let wrong = ImageTensor::filled(InputSpec::new(8, 8, 3), 0.0).unwrap();
        assert!(matches!(net.embed(&wrong), Err(Error::Input(_))));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let net = tiny(seed);
            let img = tiny_image(100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let up = Tensor::from_fn(&[5], |_| rng.random_range(-1.0..1.0));
            let grad = net.embed_input_gradient(&img, &up).unwrap();
            let err = finite_diff_check(
                |t| {
                    let mut x = t.clone();
                    for layer in net.layers() {
                        x = layer.forward(&x).unwrap();
                    }
                    x.dot(&up).unwrap()
                },
                img.as_tensor(),
                &grad,
                1e-6,
            );
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn input_gradient_is_linear_in_upstream() {
        let net = tiny(4);
        let img = tiny_image(5);
        let a = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let b = Tensor::from_fn(&[5], |i| (i as f64).sin());
        let ga = net.embed_input_gradient(&img, &a).unwrap();
        let gb = net.embed_input_gradient(&img, &b).unwrap();
        let gab = net.embed_input_gradient(&img, &a.add(&b).unwrap()).unwrap();
        for ((x, y), s) in ga.data().iter().zip(gb.data()).zip(gab.data()) {
            assert!((x + y - s).abs() < 1e-12);
        }
        let zero = net.embed_input_gradient(&img, &Tensor::zeros(&[5])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let net = EmbeddingNetwork::from_layers(
            InputSpec::new(6, 6, 2),
            vec![
                Layer::Conv2d {
                    kernel: Tensor::from_fn(&[3, 3, 2, 3], |i| ((i * 7) % 11) as f64 / 11.0 - 0.5),
                    bias: Tensor::from_vec(vec![0.1, -0.2, 0.05]),
                    stride: 1,
                    padding: 1,
                },
                Layer::Activation(Activation::Tanh),
                Layer::AvgPool2d { size: 2 },
                Layer::Flatten,
                Layer::Linear {
                    weight: Tensor::from_fn(&[27, 4], |i| ((i * 5) % 13) as f64 / 13.0 - 0.5),
                    bias: Tensor::from_vec(vec![0.0, 0.1, 0.2, 0.3]),
                },
            ],
        )
        .unwrap();
        let img = ImageTensor::new(6, 6, 2, (0..72).map(|i| ((i * 3) % 17) as f64 / 17.0 - 0.5).collect()).unwrap();
        let up = Tensor::from_vec(vec![0.3, -1.0, 0.7, 0.2]);
        let trace = net.forward_trace(&img).unwrap();
        let analytic = Tensor::from_vec(net.backward_params(&trace, &up).unwrap());
        let err = finite_diff_check(
            |p| {
                let mut n = net.clone();
                n.set_parameters(p.data()).unwrap();
                n.embed(&img).unwrap().dot(&up).unwrap()
            },
            &Tensor::from_vec(net.parameters()),
            &analytic,
            1e-6,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let net = EmbeddingNetwork::from_layers(
            InputSpec::new(4, 4, 1),
            vec![
                Layer::AvgPool2d { size: 2 },
                Layer::Activation(Activation::SigmoidScaled(5.0)),
                Layer::Activation(Activation::Tanh),
                Layer::Flatten,
                Layer::Linear {
                    weight: Tensor::from_fn(&[4, 2], |i| i as f64 * 0.1),
                    bias: Tensor::from_vec(vec![1.0, -1.0]),
                },
            ],
        )
        .unwrap();
        for n in [net, EmbeddingNetwork::desk(9)] {
            let bytes = n.to_bytes();
            let back = EmbeddingNetwork::from_bytes(&bytes).unwrap();
            assert_eq!(back, n);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let bytes = tiny(1).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingNetwork::from_bytes(&bad), Err(Error::Format(_))));
        assert!(EmbeddingNetwork::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(EmbeddingNetwork::from_bytes(&trailing).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(EmbeddingNetwork::from_bytes(&version).is_err());
    }

    #[test]
    fn contrastive_rejects_tiny_corpus() {
        let net = tiny(0);
        let cfg = ContrastiveConfig::default();
        assert!(matches!(
            pretrain_contrastive(&net, &[tiny_image(0)], &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn contrastive_is_reproducible() {
        let net = tiny(2);
        let corpus = vec![tiny_image(1), tiny_image(2)];
        let cfg = ContrastiveConfig {
            epochs: 1,
            seed: 11,
            ..ContrastiveConfig::default()
        };
        let (a, ha) = pretrain_contrastive(&net, &corpus, &cfg).unwrap();
        let (b, hb) = pretrain_contrastive(&net, &corpus, &cfg).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_eq!(ha, hb);
    }

    #[test]
    fn contrastive_margin_zero_keeps_loss_non_negative() {
        let spec = InputSpec::new(16, 16, 3);
        let net = EmbeddingNetwork::conv_stack(spec, &[4, 8], 16, 3).unwrap();
        let corpus = crate::synthetic::corpus(spec, 6, 40);
        let cfg = ContrastiveConfig {
            epochs: 3,
            margin: 0.0,
            seed: 1,
            ..ContrastiveConfig::default()
        };
        let (_, h) = pretrain_contrastive(&net, &corpus, &cfg).unwrap();
        assert!(h.eval_loss.iter().chain(&h.train_loss).all(|&l| l >= 0.0));
        assert!(h.eval_loss.last().unwrap() <= &h.eval_loss[0]);
    }
}
