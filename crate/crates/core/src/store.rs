//! The single shared parameter store behind both Siamese branches.
//!
//! Exactly one store exists per model; every forward pass reads it and every
//! backward pass accumulates into the same gradient buffers, which is what
//! makes the two branches genuinely share weights.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{Architecture, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of one layer. Layers without parameters have no entry.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv { kernel: Tensor, bias: Tensor },
    Dense { weights: Tensor, bias: Tensor },
}

impl LayerParams {
    fn zeros_like(&self) -> LayerParams {
        match self {
            LayerParams::Conv { kernel, bias } => LayerParams::Conv {
                kernel: Tensor::zeros(kernel.shape().to_vec()),
                bias: Tensor::zeros(bias.shape().to_vec()),
            },
            LayerParams::Dense { weights, bias } => LayerParams::Dense {
                weights: Tensor::zeros(weights.shape().to_vec()),
                bias: Tensor::zeros(bias.shape().to_vec()),
            },
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 2] {
        match self {
            LayerParams::Conv { kernel, bias } => [("kernel", kernel), ("bias", bias)],
            LayerParams::Dense { weights, bias } => [("weights", weights), ("bias", bias)],
        }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        match self {
            LayerParams::Conv { kernel, bias } => [kernel, bias],
            LayerParams::Dense { weights, bias } => [weights, bias],
        }
    }
}

/// Per-layer parameter tensors plus matching gradient accumulators, indexed
/// by layer position in the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Option<LayerParams>>,
    grads: Vec<Option<LayerParams>>,
}

impl ParamStore {
    /// Glorot-uniform initialization: weights drawn from `[-s, s]` with
    /// `s = sqrt(6 / (fan_in + fan_out))` from a seeded generator; biases
    /// start at zero.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.layers().len());
        for layer in arch.layers() {
            let p = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => {
                    let fan_in = in_channels * kernel_h * kernel_w;
                    let fan_out = out_channels * kernel_h * kernel_w;
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = out_channels * in_channels * kernel_h * kernel_w;
                    let kernel = Tensor::new(
                        vec![out_channels, in_channels, kernel_h, kernel_w],
                        (0..n).map(|_| rng.gen_range(-s..s)).collect(),
                    )?;
                    Some(LayerParams::Conv {
                        kernel,
                        bias: Tensor::zeros(vec![out_channels]),
                    })
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let s = (6.0 / (inputs + outputs) as f64).sqrt();
                    let weights = Tensor::new(
                        vec![outputs, inputs],
                        (0..outputs * inputs).map(|_| rng.gen_range(-s..s)).collect(),
                    )?;
                    Some(LayerParams::Dense {
                        weights,
                        bias: Tensor::zeros(vec![outputs]),
                    })
                }
                LayerSpec::MaxPool2d { .. } | LayerSpec::Relu | LayerSpec::Flatten => None,
            };
            params.push(p);
        }
        let grads = params
            .iter()
            .map(|p| p.as_ref().map(LayerParams::zeros_like))
            .collect();
        Ok(ParamStore { params, grads })
    }

    pub fn layer(&self, idx: usize) -> Option<&LayerParams> {
        self.params[idx].as_ref()
    }

    pub fn layer_count(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            for t in g.tensors_mut() {
                t.values_mut().fill(0.0);
            }
        }
    }

    /// Adds gradient contributions for one layer. Both branches of the
    /// Siamese network land in the same accumulators here.
    pub fn accumulate_grad(&mut self, idx: usize, contributions: &LayerParams) {
        let grad = self.grads[idx]
            .as_mut()
            .expect("gradient accumulator exists for parameterized layer");
        match (grad, contributions) {
            (
                LayerParams::Conv { kernel, bias },
                LayerParams::Conv { kernel: dk, bias: db },
            ) => {
                add_into(kernel, dk);
                add_into(bias, db);
            }
            (
                LayerParams::Dense { weights, bias },
                LayerParams::Dense { weights: dw, bias: db },
            ) => {
                add_into(weights, dw);
                add_into(bias, db);
            }
            _ => panic!("gradient contribution kind does not match layer kind"),
        }
    }

    /// `p <- p - lr * grad(p)` for every parameter, then zeroes the
    /// gradients. A non-finite gradient aborts the step before any
    /// parameter is touched.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        for (idx, grad) in self.grads.iter().enumerate() {
            if let Some(g) = grad {
                for (name, t) in g.tensors() {
                    if !t.is_all_finite() {
                        return Err(Error::NonFiniteGradient { layer: idx, param: name });
                    }
                }
            }
        }
        for (p, g) in self.params.iter_mut().zip(&self.grads) {
            if let (Some(p), Some(g)) = (p, g) {
                for (pt, gt) in p.tensors_mut().into_iter().zip(g.tensors()) {
                    for (pv, gv) in pt.values_mut().iter_mut().zip(gt.1.values()) {
                        *pv -= learning_rate * gv;
                    }
                }
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// Canonical flat parameter order: ascending layer index, kernel/weights
    /// before bias. Checkpoints and the gradient checker rely on this order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for p in self.params.iter().flatten() {
            for (_, t) in p.tensors() {
                flat.extend_from_slice(t.values());
            }
        }
        flat
    }

    /// Gradients in the same canonical order as [`ParamStore::to_flat`].
    pub fn grads_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for g in self.grads.iter().flatten() {
            for (_, t) in g.tensors() {
                flat.extend_from_slice(t.values());
            }
        }
        flat
    }

    /// Overwrites all parameters from a canonical flat vector.
    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        let mut store = ParamStore::init(arch, 0)?;
        let expected = store.to_flat().len();
        if flat.len() != expected {
            return Err(Error::ParamCountMismatch {
                expected,
                got: flat.len(),
            });
        }
        store.set_flat(flat);
        Ok(store)
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.params.iter_mut().flatten() {
            for t in p.tensors_mut() {
                let n = t.numel();
                t.values_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        debug_assert_eq!(off, flat.len());
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.tensors().iter().map(|(_, t)| t.numel()).sum::<usize>())
            .sum()
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
        *d += s;
    }
}
