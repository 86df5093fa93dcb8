//! Finite-difference verification of the analytic gradients.
//!
//! The check compares every parameter gradient and both input-image gradients
//! of the single-pair contrastive loss against central differences. Layers
//! without parameters (relu, pool, flatten) are still covered through the
//! input-image gradients.

use crate::arch::Architecture;
use crate::error::Result;
use crate::network::Network;
use crate::siamese::{contrastive_loss, embedding_grads, pair_distance, PairLabel};
use crate::store::ParamStore;
use crate::tensor::Tensor;

/// Outcome of one finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst error over all checked scalars: relative where the analytic
    /// gradient exceeds 1e-8 in magnitude, absolute below that.
    pub max_error: f64,
    /// Which scalar was worst, e.g. `param[17]` or `input_a[3]`.
    pub worst: String,
    pub tolerance: f64,
    pub pass: bool,
    /// Number of scalar gradients compared.
    pub checked: usize,
}

/// Single-pair contrastive loss for fixed parameters.
fn pair_loss(
    net: &Network,
    a: &Tensor,
    b: &Tensor,
    label: PairLabel,
    margin: f64,
) -> Result<f64> {
    let ea = net.forward(a)?.flattened();
    let eb = net.forward(b)?.flattened();
    let d = pair_distance(&ea, &eb)?;
    contrastive_loss(&[d], &[label], margin)
}

fn grad_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < 1e-8 {
        diff
    } else {
        diff / analytic.abs()
    }
}

/// Compares analytic gradients of the two-branch loss against central
/// differences with the given step. Failures are reported, not thrown.
pub fn finite_diff_check(
    arch: &Architecture,
    store: &ParamStore,
    a: &Tensor,
    b: &Tensor,
    label: PairLabel,
    margin: f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut net = Network::from_parts(arch.clone(), store.clone())?;

    // Analytic gradients: parameters plus both input images.
    net.zero_grads();
    let trace_a = net.forward_traced(a)?;
    let trace_b = net.forward_traced(b)?;
    let ea = trace_a.output().clone().flattened();
    let eb = trace_b.output().clone().flattened();
    let d = pair_distance(&ea, &eb)?;
    let (ga, gb) = embedding_grads(&ea, &eb, d, label, margin, 1);
    let ga = Tensor::new(trace_a.output().shape().to_vec(), ga.into_values())?;
    let gb = Tensor::new(trace_b.output().shape().to_vec(), gb.into_values())?;
    let grad_a = net.backward(&trace_a, &ga)?;
    let grad_b = net.backward(&trace_b, &gb)?;
    let param_grads = net.store().grads_flat();

    let mut max_error = 0.0;
    let mut worst = String::from("none");
    let mut checked = 0usize;
    let note = |err: f64, name: String, max_error: &mut f64, worst: &mut String| {
        if err > *max_error {
            *max_error = err;
            *worst = name;
        }
    };

    // Central differences over parameters.
    let mut params = net.store().to_flat();
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        net.store_mut().set_flat(&params);
        let up = pair_loss(&net, a, b, label, margin)?;
        params[i] = orig - step;
        net.store_mut().set_flat(&params);
        let down = pair_loss(&net, a, b, label, margin)?;
        params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        note(
            grad_error(param_grads[i], numeric),
            format!("param[{i}]"),
            &mut max_error,
            &mut worst,
        );
        checked += 1;
    }
    net.store_mut().set_flat(&params);

    // Central differences over both input images.
    for (branch, image, analytic) in [("input_a", a, &grad_a), ("input_b", b, &grad_b)] {
        let mut probe = image.clone();
        for i in 0..probe.numel() {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + step;
            let up = if branch == "input_a" {
                pair_loss(&net, &probe, b, label, margin)?
            } else {
                pair_loss(&net, a, &probe, label, margin)?
            };
            probe.values_mut()[i] = orig - step;
            let down = if branch == "input_a" {
                pair_loss(&net, &probe, b, label, margin)?
            } else {
                pair_loss(&net, a, &probe, label, margin)?
            };
            probe.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            note(
                grad_error(analytic.values()[i], numeric),
                format!("{branch}[{i}]"),
                &mut max_error,
                &mut worst,
            );
            checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_error,
        worst,
        tolerance,
        pass: max_error < tolerance,
        checked,
    })
}

/// Smallest distance of the pair's forward pass to a gradient kink: a ReLU
/// input near zero, a near-tied pooling window, the pair distance near the
/// margin, or near zero. Finite-difference checks are only meaningful away
/// from these, so samplers use this to reject kink-adjacent draws.
pub fn kink_margin(
    arch: &Architecture,
    store: &ParamStore,
    a: &Tensor,
    b: &Tensor,
    margin: f64,
) -> Result<f64> {
    use crate::arch::LayerSpec;
    use crate::ops;

    let net = Network::from_parts(arch.clone(), store.clone())?;
    let mut min_gap = f64::INFINITY;

    for image in [a, b] {
        let mut x = image.clone();
        for (idx, layer) in arch.layers().iter().enumerate() {
            match layer {
                LayerSpec::Relu => {
                    for v in x.values() {
                        min_gap = min_gap.min(v.abs());
                    }
                    x = ops::relu_forward(&x);
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                    let oh = (h - window) / stride + 1;
                    let ow = (w - window) / stride + 1;
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut second = f64::NEG_INFINITY;
                                for ky in 0..*window {
                                    for kx in 0..*window {
                                        let v = x.values()
                                            [ci * h * w + (oy * stride + ky) * w + ox * stride + kx];
                                        if v > best {
                                            second = best;
                                            best = v;
                                        } else if v > second {
                                            second = v;
                                        }
                                    }
                                }
                                if second.is_finite() {
                                    min_gap = min_gap.min(best - second);
                                }
                            }
                        }
                    }
                    x = ops::maxpool2d_forward(&x, *window, *stride)?.0;
                }
                LayerSpec::Conv2d { stride, pad, .. } => {
                    let Some(crate::store::LayerParams::Conv { kernel, bias }) = store.layer(idx)
                    else {
                        unreachable!("conv layer has conv params")
                    };
                    x = ops::conv2d_forward(&x, kernel, bias, *stride, *pad)?;
                }
                LayerSpec::Flatten => x = x.flattened(),
                LayerSpec::Dense { .. } => {
                    let Some(crate::store::LayerParams::Dense { weights, bias }) = store.layer(idx)
                    else {
                        unreachable!("dense layer has dense params")
                    };
                    x = ops::dense_forward(&x, weights, bias)?;
                }
            }
        }
    }

    let ea = net.forward(a)?.flattened();
    let eb = net.forward(b)?.flattened();
    let d = pair_distance(&ea, &eb)?;
    min_gap = min_gap.min((d - margin).abs());
    min_gap = min_gap.min(d);
    Ok(min_gap)
}
