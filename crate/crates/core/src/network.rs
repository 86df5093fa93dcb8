//! Forward and reverse passes through a layer chain.
//!
//! The computation graph is a fixed chain, so the "tape" is simply the input
//! recorded at each layer plus pooling winner routes. Forward passes are pure;
//! `backward` accumulates parameter gradients into the shared store and
//! returns the gradient with respect to the network input.

use crate::arch::{Architecture, LayerSpec};
use crate::error::{Error, Result};
use crate::ops;
use crate::store::{LayerParams, ParamStore};
use crate::tensor::Tensor;

/// What one layer recorded during a traced forward pass.
#[derive(Debug, Clone)]
struct StageTrace {
    input: Tensor,
    routes: Option<ops::PoolRoutes>,
}

/// Recorded intermediates of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stages: Vec<StageTrace>,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Layer chain plus its single parameter store.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    store: ParamStore,
    recorded: Option<ForwardTrace>,
}

impl Network {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let store = ParamStore::init(&arch, seed)?;
        Ok(Network {
            arch,
            store,
            recorded: None,
        })
    }

    pub fn from_parts(arch: Architecture, store: ParamStore) -> Result<Self> {
        let expected = ParamStore::init(&arch, 0)?.param_count();
        if store.param_count() != expected {
            return Err(Error::ParamCountMismatch {
                expected,
                got: store.param_count(),
            });
        }
        Ok(Network {
            arch,
            store,
            recorded: None,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let expected = self.arch.input_shape();
        if input.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "network expects input {:?}, got {:?}",
                    expected,
                    input.shape()
                ),
            });
        }
        Ok(())
    }

    fn run_layer(&self, idx: usize, layer: &LayerSpec, x: Tensor) -> Result<(Tensor, Option<ops::PoolRoutes>)> {
        Ok(match layer {
            LayerSpec::Conv2d { stride, pad, .. } => {
                let Some(LayerParams::Conv { kernel, bias }) = self.store.layer(idx) else {
                    unreachable!("conv layer has conv params");
                };
                (ops::conv2d_forward(&x, kernel, bias, *stride, *pad)?, None)
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let (out, routes) = ops::maxpool2d_forward(&x, *window, *stride)?;
                (out, Some(routes))
            }
            LayerSpec::Relu => (ops::relu_forward(&x), None),
            LayerSpec::Flatten => (x.flattened(), None),
            LayerSpec::Dense { .. } => {
                let Some(LayerParams::Dense { weights, bias }) = self.store.layer(idx) else {
                    unreachable!("dense layer has dense params");
                };
                (ops::dense_forward(&x, weights, bias)?, None)
            }
        })
    }

    /// Pure forward pass; no intermediates are kept.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for (idx, layer) in self.arch.layers().iter().enumerate() {
            x = self.run_layer(idx, layer, x)?.0;
        }
        Ok(x)
    }

    /// Forward pass that records per-layer inputs and pooling routes.
    pub fn forward_traced(&self, input: &Tensor) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut stages = Vec::with_capacity(self.arch.layers().len());
        for (idx, layer) in self.arch.layers().iter().enumerate() {
            let (out, routes) = self.run_layer(idx, layer, x.clone())?;
            stages.push(StageTrace { input: x, routes });
            x = out;
        }
        Ok(ForwardTrace { stages, output: x })
    }

    /// Walks the trace in reverse, accumulating parameter gradients into the
    /// shared store, and returns the gradient with respect to the input.
    /// A zero upstream gradient therefore contributes nothing.
    pub fn backward(&mut self, trace: &ForwardTrace, grad_output: &Tensor) -> Result<Tensor> {
        if trace.stages.len() != self.arch.layers().len() {
            return Err(Error::BackwardBeforeForward);
        }
        if grad_output.shape() != trace.output.shape() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!(
                    "upstream gradient {:?} does not match output {:?}",
                    grad_output.shape(),
                    trace.output.shape()
                ),
            });
        }
        let mut grad = grad_output.clone();
        for (idx, layer) in self.arch.layers().iter().enumerate().rev() {
            let stage = &trace.stages[idx];
            grad = match layer {
                LayerSpec::Conv2d { stride, pad, .. } => {
                    let Some(LayerParams::Conv { kernel, .. }) = self.store.layer(idx) else {
                        unreachable!("conv layer has conv params");
                    };
                    let (gi, gk, gb) =
                        ops::conv2d_backward(&stage.input, kernel, *stride, *pad, &grad)?;
                    self.store
                        .accumulate_grad(idx, &LayerParams::Conv { kernel: gk, bias: gb });
                    gi
                }
                LayerSpec::MaxPool2d { .. } => {
                    let routes = stage.routes.as_ref().expect("pool stage recorded routes");
                    ops::maxpool2d_backward(stage.input.shape(), routes, &grad)
                }
                LayerSpec::Relu => ops::relu_backward(&stage.input, &grad),
                LayerSpec::Flatten => {
                    Tensor::new(stage.input.shape().to_vec(), grad.into_values())?
                }
                LayerSpec::Dense { .. } => {
                    let Some(LayerParams::Dense { weights, .. }) = self.store.layer(idx) else {
                        unreachable!("dense layer has dense params");
                    };
                    let (gi, gw, gb) = ops::dense_backward(&stage.input, weights, &grad);
                    self.store
                        .accumulate_grad(idx, &LayerParams::Dense { weights: gw, bias: gb });
                    gi
                }
            };
        }
        Ok(grad)
    }

    /// Traced forward pass that keeps the trace on the network for a later
    /// [`Network::backward_recorded`].
    pub fn forward_recorded(&mut self, input: &Tensor) -> Result<Tensor> {
        let trace = self.forward_traced(input)?;
        let out = trace.output.clone();
        self.recorded = Some(trace);
        Ok(out)
    }

    /// Backward through the most recently recorded forward pass. Calling this
    /// without a recorded pass is an error.
    pub fn backward_recorded(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let trace = self.recorded.take().ok_or(Error::BackwardBeforeForward)?;
        self.backward(&trace, grad_output)
    }

    pub fn zero_grads(&mut self) {
        self.store.zero_grads();
    }

    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        self.store.sgd_step(learning_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(seed: u64) -> Network {
        let arch =
            Architecture::parse("in:1x6x6 conv:2x3x3:s1:p1 relu pool:2:s2 flatten dense:4")
                .unwrap();
        Network::new(arch, seed).unwrap()
    }

    fn ramp_input() -> Tensor {
        Tensor::new(vec![1, 6, 6], (0..36).map(|i| (i as f64) / 36.0 - 0.5).collect()).unwrap()
    }

    #[test]
    fn forward_is_pure_and_bit_reproducible() {
        let net = tiny_net(4);
        let x = ramp_input();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.shape(), &[4]);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let net = tiny_net(4);
        let x = Tensor::zeros(vec![1, 5, 5]);
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn zero_upstream_gradient_produces_zero_param_gradients() {
        let mut net = tiny_net(4);
        let x = ramp_input();
        let trace = net.forward_traced(&x).unwrap();
        let zero = Tensor::zeros(vec![4]);
        let gi = net.backward(&trace, &zero).unwrap();
        assert!(gi.values().iter().all(|&v| v == 0.0));
        assert!(net.store().grads_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut net = tiny_net(4);
        let err = net.backward_recorded(&Tensor::zeros(vec![4])).unwrap_err();
        assert!(matches!(err, Error::BackwardBeforeForward));

        net.forward_recorded(&ramp_input()).unwrap();
        net.backward_recorded(&Tensor::zeros(vec![4])).unwrap();
        // The trace is consumed; a second backward has nothing to walk.
        let err = net.backward_recorded(&Tensor::zeros(vec![4])).unwrap_err();
        assert!(matches!(err, Error::BackwardBeforeForward));
    }

    #[test]
    fn outputs_stay_finite_through_forward_and_backward() {
        let mut net = tiny_net(11);
        let x = ramp_input();
        let trace = net.forward_traced(&x).unwrap();
        assert!(trace.output().is_all_finite());
        let g = Tensor::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let gi = net.backward(&trace, &g).unwrap();
        assert!(gi.is_all_finite());
        assert!(net.store().grads_flat().iter().all(|v| v.is_finite()));
    }
}
