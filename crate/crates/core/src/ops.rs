//! Forward and backward kernels for the layer kinds the embedding network
//! is built from: 2-d cross-correlation, max pooling, ReLU, and dense layers.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding.
//! Pooling ties route to the first maximal element in row-major order, and
//! the ReLU derivative at exactly zero is taken as zero, so backward passes
//! are deterministic everywhere.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch {
        op,
        detail,
    }
}

/// Dot product with four accumulators; a plain sequential fold is
/// latency-bound on the FP add chain.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n4 = a.len() & !3;
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[n4..].iter().zip(&b[n4..]) {
        sum += x * y;
    }
    sum
}

/// Copies a `[C,H,W]` tensor into a zero-padded `[C, H+2p, W+2p]` buffer.
fn pad_input(input: &Tensor, pad: usize) -> (Vec<f64>, usize, usize) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; c * ph * pw];
    let src = input.values();
    for ci in 0..c {
        for y in 0..h {
            let dst_off = ci * ph * pw + (y + pad) * pw + pad;
            let src_off = ci * h * w + y * w;
            padded[dst_off..dst_off + w].copy_from_slice(&src[src_off..src_off + w]);
        }
    }
    (padded, ph, pw)
}

/// 2-d cross-correlation of `input [C_in,H,W]` with `kernel [C_out,C_in,kH,kW]`
/// plus a per-output-channel bias. Output extent is
/// `floor((H + 2*pad - kH) / stride) + 1` (same for width).
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    if input.shape().len() != 3 {
        return Err(shape_err(
            "conv2d",
            format!("input must be [C,H,W], got {:?}", input.shape()),
        ));
    }
    if kernel.shape().len() != 4 {
        return Err(shape_err(
            "conv2d",
            format!("kernel must be [C_out,C_in,kH,kW], got {:?}", kernel.shape()),
        ));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kc, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kc != c_in {
        return Err(shape_err(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {c_in}"),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(shape_err(
            "conv2d",
            format!("bias must be [{c_out}], got {:?}", bias.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::BadLayer("conv2d stride must be >= 1".into()));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * pad, w + 2 * pad),
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;

    let (padded, _ph, pw) = pad_input(input, pad);
    let kv = kernel.values();
    let bv = bias.values();
    let mut out = vec![0.0; c_out * oh * ow];

    for co in 0..c_out {
        for oy in 0..oh {
            let orow = &mut out[co * oh * ow + oy * ow..co * oh * ow + (oy + 1) * ow];
            orow.fill(bv[co]);
            for ci in 0..c_in {
                for ky in 0..kh {
                    let irow_off = ci * (h + 2 * pad) * pw + (oy * stride + ky) * pw;
                    let krow_off = ((co * c_in + ci) * kh + ky) * kw;
                    for kx in 0..kw {
                        let kval = kv[krow_off + kx];
                        if stride == 1 {
                            let irow = &padded[irow_off + kx..irow_off + kx + ow];
                            for (o, iv) in orow.iter_mut().zip(irow) {
                                *o += kval * iv;
                            }
                        } else {
                            let irow =
                                &padded[irow_off + kx..irow_off + kx + (ow - 1) * stride + 1];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += kval * irow[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Gradients of `conv2d_forward` with respect to input, kernel, and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, _, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let (go_c, oh, ow) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    if go_c != c_out {
        return Err(shape_err(
            "conv2d backward",
            format!("upstream gradient has {go_c} channels, kernel produces {c_out}"),
        ));
    }

    let (padded, ph, pw) = pad_input(input, pad);
    let kv = kernel.values();
    let go = grad_out.values();

    let mut grad_padded = vec![0.0; padded.len()];
    let mut grad_kernel = vec![0.0; kv.len()];
    let mut grad_bias = vec![0.0; c_out];

    for co in 0..c_out {
        for oy in 0..oh {
            let grow = &go[co * oh * ow + oy * ow..co * oh * ow + (oy + 1) * ow];
            grad_bias[co] += grow.iter().sum::<f64>();
            for ci in 0..c_in {
                for ky in 0..kh {
                    let irow_off = ci * ph * pw + (oy * stride + ky) * pw;
                    let krow_off = ((co * c_in + ci) * kh + ky) * kw;
                    for kx in 0..kw {
                        let kval = kv[krow_off + kx];
                        if stride == 1 {
                            let irow = &padded[irow_off + kx..irow_off + kx + ow];
                            grad_kernel[krow_off + kx] += dot(grow, irow);
                            let gprow =
                                &mut grad_padded[irow_off + kx..irow_off + kx + ow];
                            for (gp, g) in gprow.iter_mut().zip(grow) {
                                *gp += g * kval;
                            }
                        } else {
                            let mut kgrad = 0.0;
                            for (ox, g) in grow.iter().enumerate() {
                                let ii = irow_off + ox * stride + kx;
                                kgrad += g * padded[ii];
                                grad_padded[ii] += g * kval;
                            }
                            grad_kernel[krow_off + kx] += kgrad;
                        }
                    }
                }
            }
        }
    }

    // Crop the padding border back off the input gradient.
    let mut grad_input = vec![0.0; c_in * h * w];
    for ci in 0..c_in {
        for y in 0..h {
            let src_off = ci * ph * pw + (y + pad) * pw + pad;
            let dst_off = ci * h * w + y * w;
            grad_input[dst_off..dst_off + w].copy_from_slice(&grad_padded[src_off..src_off + w]);
        }
    }

    Ok((
        Tensor::new(vec![c_in, h, w], grad_input)?,
        Tensor::new(kernel.shape().to_vec(), grad_kernel)?,
        Tensor::new(vec![c_out], grad_bias)?,
    ))
}

/// Flat input indices of each pooling window's winner; needed to route
/// gradients back through `maxpool2d_backward`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRoutes(pub Vec<usize>);

/// Max pooling over `window x window` patches. Ties go to the first maximal
/// element in row-major order.
pub fn maxpool2d_forward(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, PoolRoutes)> {
    if input.shape().len() != 3 {
        return Err(shape_err(
            "maxpool2d",
            format!("input must be [C,H,W], got {:?}", input.shape()),
        ));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if window == 0 || stride == 0 {
        return Err(Error::BadLayer("maxpool2d window and stride must be >= 1".into()));
    }
    if h < window || w < window {
        return Err(shape_err(
            "maxpool2d",
            format!("window {window} exceeds spatial extent {h}x{w}"),
        ));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let src = input.values();
    let mut out = vec![0.0; c * oh * ow];
    let mut routes = vec![0usize; c * oh * ow];

    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..window {
                    let row = ci * h * w + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = src[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                let o = ci * oh * ow + oy * ow + ox;
                out[o] = best;
                routes[o] = best_idx;
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, PoolRoutes(routes)))
}

/// Routes the upstream gradient to each window's winning input element.
pub fn maxpool2d_backward(input_shape: &[usize], routes: &PoolRoutes, grad_out: &Tensor) -> Tensor {
    let mut grad_input = Tensor::zeros(input_shape.to_vec());
    let gi = grad_input.values_mut();
    for (&idx, &g) in routes.0.iter().zip(grad_out.values()) {
        gi[idx] += g;
    }
    grad_input
}

/// Elementwise `max(x, 0)`.
pub fn relu_forward(input: &Tensor) -> Tensor {
    let values = input.values().iter().map(|&x| x.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), values).expect("shape preserved")
}

/// ReLU gradient; the subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let values = input
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), values).expect("shape preserved")
}

/// `weights [m,n] * input [n] + bias [m]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weights.shape().len() != 2 {
        return Err(shape_err(
            "dense",
            format!("weights must be [m,n], got {:?}", weights.shape()),
        ));
    }
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.numel() != n || input.shape().len() != 1 {
        return Err(shape_err(
            "dense",
            format!("weights expect input [{n}], got {:?}", input.shape()),
        ));
    }
    if bias.shape() != [m] {
        return Err(shape_err(
            "dense",
            format!("bias must be [{m}], got {:?}", bias.shape()),
        ));
    }
    let x = input.values();
    let wv = weights.values();
    let mut out = bias.values().to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        *o += dot(&wv[i * n..(i + 1) * n], x);
    }
    Tensor::new(vec![m], out)
}

/// Gradients of `dense_forward` with respect to input, weights, and bias.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    let x = input.values();
    let wv = weights.values();
    let go = grad_out.values();

    let mut grad_input = vec![0.0; n];
    let mut grad_weights = vec![0.0; m * n];
    for i in 0..m {
        let g = go[i];
        let row = &wv[i * n..(i + 1) * n];
        let wrow = &mut grad_weights[i * n..(i + 1) * n];
        for j in 0..n {
            grad_input[j] += g * row[j];
            wrow[j] = g * x[j];
        }
    }
    (
        Tensor::from_vec(grad_input),
        Tensor::new(vec![m, n], grad_weights).expect("shape preserved"),
        Tensor::from_vec(go.to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct quadruple-loop cross-correlation, kept deliberately naive so it
    /// can serve as an oracle for the strided/padded implementation.
    fn conv_oracle(
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, _, kh, kw) = (
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        );
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.values()[co];
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input.values()
                                    [ci * h * w + iy as usize * w + ix as usize];
                                let kv = kernel.values()
                                    [((co * c_in + ci) * kh + ky) * kw + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[co * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        Tensor::new(vec![c_out, oh, ow], out).unwrap()
    }

    fn lcg_values(seed: u64, n: usize) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let input = Tensor::new(vec![1, 3, 3], lcg_values(1, 9)).unwrap();
        let kernel = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::from_vec(vec![0.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.values(), input.values());
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let input = Tensor::zeros(vec![2, 4, 4]);
        let kernel = Tensor::new(vec![3, 2, 3, 3], lcg_values(2, 54)).unwrap();
        let bias = Tensor::from_vec(vec![0.5, -1.25, 2.0]);
        let out = conv2d_forward(&input, &kernel, &bias, 1, 1).unwrap();
        for co in 0..3 {
            for v in &out.values()[co * 16..(co + 1) * 16] {
                assert_eq!(*v, bias.values()[co]);
            }
        }
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let input = Tensor::new(vec![1, 5, 5], lcg_values(3, 25)).unwrap();
        let kernel = Tensor::new(vec![1, 1, 3, 3], lcg_values(4, 9)).unwrap();
        let bias = Tensor::from_vec(vec![0.0]);
        let got = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap();
        let want = conv_oracle(&input, &kernel, &bias, 1, 0);
        assert_eq!(got.shape(), want.shape());
        assert!(max_rel_err(got.values(), want.values()) < 1e-12);
    }

    #[test]
    fn conv_matches_oracle_with_stride_and_padding() {
        for (seed, stride, pad) in [(10u64, 1, 1), (11, 2, 0), (12, 2, 2), (13, 3, 1)] {
            let input = Tensor::new(vec![2, 7, 6], lcg_values(seed, 84)).unwrap();
            let kernel = Tensor::new(vec![3, 2, 3, 3], lcg_values(seed + 100, 54)).unwrap();
            let bias = Tensor::new(vec![3], lcg_values(seed + 200, 3)).unwrap();
            let got = conv2d_forward(&input, &kernel, &bias, stride, pad).unwrap();
            let want = conv_oracle(&input, &kernel, &bias, stride, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(max_rel_err(got.values(), want.values()) < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros(vec![2, 4, 4]);
        let kernel = Tensor::zeros(vec![1, 3, 3, 3]);
        let bias = Tensor::zeros(vec![1]);
        let err = conv2d_forward(&input, &kernel, &bias, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn pool_constant_input_stays_constant() {
        let input = Tensor::filled(vec![2, 4, 4], 3.25);
        let (out, _) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert!(out.values().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn pool_two_by_two_hand_case() {
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, routes) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.values(), &[4.0]);
        assert_eq!(routes.0, vec![3]);
    }

    #[test]
    fn pool_tie_routes_to_first_row_major_element() {
        let input = Tensor::new(vec![1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, routes) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(routes.0, vec![0]);
    }

    #[test]
    fn pool_window_too_large_is_an_error() {
        let input = Tensor::zeros(vec![1, 2, 2]);
        assert!(maxpool2d_forward(&input, 3, 1).is_err());
    }

    #[test]
    fn relu_hand_cases() {
        let neg = Tensor::from_vec(vec![-3.0, -0.5, -1e-9]);
        assert!(relu_forward(&neg).values().iter().all(|&v| v == 0.0));

        let pos = Tensor::from_vec(vec![0.25, 7.0]);
        assert_eq!(relu_forward(&pos).values(), pos.values());

        let mixed = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&mixed).values(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let input = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        let upstream = Tensor::from_vec(vec![5.0, 5.0, 5.0]);
        let g = relu_backward(&input, &upstream);
        assert_eq!(g.values(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn dense_hand_cases() {
        let identity = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_bias = Tensor::zeros(vec![2]);
        let x = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(
            dense_forward(&x, &identity, &zero_bias).unwrap().values(),
            &[3.0, 4.0]
        );

        let zero_w = Tensor::zeros(vec![2, 2]);
        let bias = Tensor::from_vec(vec![0.5, -0.5]);
        assert_eq!(
            dense_forward(&x, &zero_w, &bias).unwrap().values(),
            &[0.5, -0.5]
        );

        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::from_vec(vec![1.0, 1.0]);
        assert_eq!(
            dense_forward(&ones, &w, &zero_bias).unwrap().values(),
            &[3.0, 7.0]
        );
    }

    #[test]
    fn dense_rejects_length_mismatch() {
        let w = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2]);
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(dense_forward(&x, &w, &b).is_err());
    }
}
