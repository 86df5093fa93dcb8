//! Layer descriptors and the embedding-network architecture.
//!
//! An [`Architecture`] is an input shape plus a chain of layers whose shapes
//! are validated end to end at construction. It has a canonical one-line text
//! form (see [`Architecture::parse`]) used by config files and checkpoints,
//! e.g. `in:1x64x64 conv:8x3x3:s1:p1 relu pool:2:s2 flatten dense:32`.

use std::fmt;

use crate::error::{Error, Result};

/// One layer of the embedding network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

/// Validated layer chain with a fixed `[C,H,W]` input shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

/// Raw layer description as written in a descriptor; channel/width bookkeeping
/// that depends on the preceding layers is filled in by `Architecture::new`.
#[derive(Debug, Clone)]
pub enum LayerDesc {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        outputs: usize,
    },
}

impl Architecture {
    /// Validates that the layer shapes chain and resolves each layer's input
    /// extents. Errors name the first layer whose shape does not fit.
    pub fn new(input_shape: [usize; 3], descs: Vec<LayerDesc>) -> Result<Self> {
        if input_shape.iter().any(|&d| d == 0) {
            return Err(Error::BadLayer(format!(
                "input shape extents must be positive, got {input_shape:?}"
            )));
        }
        let mut shape: Vec<usize> = input_shape.to_vec();
        let mut layers = Vec::with_capacity(descs.len());
        for (i, desc) in descs.into_iter().enumerate() {
            let layer = match desc {
                LayerDesc::Conv2d {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                } => {
                    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: conv extents and stride must be >= 1"
                        )));
                    }
                    if shape.len() != 3 {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: conv needs a [C,H,W] input, got {shape:?}"
                        )));
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    if h + 2 * pad < kernel_h || w + 2 * pad < kernel_w {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: kernel {kernel_h}x{kernel_w} exceeds padded input {}x{}",
                            h + 2 * pad,
                            w + 2 * pad
                        )));
                    }
                    let oh = (h + 2 * pad - kernel_h) / stride + 1;
                    let ow = (w + 2 * pad - kernel_w) / stride + 1;
                    shape = vec![out_channels, oh, ow];
                    LayerSpec::Conv2d {
                        in_channels: c,
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        pad,
                    }
                }
                LayerDesc::MaxPool2d { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: pool window and stride must be >= 1"
                        )));
                    }
                    if shape.len() != 3 {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: pool needs a [C,H,W] input, got {shape:?}"
                        )));
                    }
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    if h < window || w < window {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: pool window {window} exceeds input {h}x{w}"
                        )));
                    }
                    shape = vec![
                        c,
                        (h - window) / stride + 1,
                        (w - window) / stride + 1,
                    ];
                    LayerSpec::MaxPool2d { window, stride }
                }
                LayerDesc::Relu => LayerSpec::Relu,
                LayerDesc::Flatten => {
                    shape = vec![shape.iter().product()];
                    LayerSpec::Flatten
                }
                LayerDesc::Dense { outputs } => {
                    if outputs == 0 {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: dense output width must be >= 1"
                        )));
                    }
                    if shape.len() != 1 {
                        return Err(Error::BadLayer(format!(
                            "layer {i}: dense needs a flat input, got {shape:?} (insert flatten)"
                        )));
                    }
                    let inputs = shape[0];
                    shape = vec![outputs];
                    LayerSpec::Dense { inputs, outputs }
                }
            };
            layers.push(layer);
        }
        Ok(Architecture {
            input_shape,
            layers,
        })
    }

    /// The scaled-down two-conv default: trains in minutes on a CPU while
    /// exercising every layer kind.
    pub fn default_desk(image_size: usize) -> Result<Self> {
        Architecture::new(
            [1, image_size, image_size],
            vec![
                LayerDesc::Conv2d {
                    out_channels: 8,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerDesc::Relu,
                LayerDesc::MaxPool2d { window: 2, stride: 2 },
                LayerDesc::Conv2d {
                    out_channels: 16,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerDesc::Relu,
                LayerDesc::MaxPool2d { window: 2, stride: 2 },
                LayerDesc::Flatten,
                LayerDesc::Dense { outputs: 32 },
            ],
        )
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = match layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                    ..
                } => vec![
                    *out_channels,
                    (shape[1] + 2 * pad - kernel_h) / stride + 1,
                    (shape[2] + 2 * pad - kernel_w) / stride + 1,
                ],
                LayerSpec::MaxPool2d { window, stride } => vec![
                    shape[0],
                    (shape[1] - window) / stride + 1,
                    (shape[2] - window) / stride + 1,
                ],
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { outputs, .. } => vec![*outputs],
            };
            shapes.push(shape.clone());
        }
        shapes
    }

    /// Length of the embedding the network produces.
    pub fn embedding_dim(&self) -> usize {
        self.layer_shapes()
            .last()
            .map(|s| s.iter().product())
            .unwrap_or_else(|| self.input_shape.iter().product())
    }

    /// Parses the canonical descriptor form produced by `Display`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        let bad = |msg: String| Error::BadArchitecture(msg);
        let mut tokens = descriptor.split_whitespace();
        let first = tokens
            .next()
            .ok_or_else(|| bad("empty descriptor".into()))?;
        let input_shape = first
            .strip_prefix("in:")
            .ok_or_else(|| bad(format!("descriptor must start with in:CxHxW, got {first:?}")))
            .and_then(|dims| {
                let parts: Vec<usize> = dims
                    .split('x')
                    .map(|p| p.parse().map_err(|_| bad(format!("bad input extent {p:?}"))))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad(format!("input shape must be CxHxW, got {dims:?}")));
                }
                Ok([parts[0], parts[1], parts[2]])
            })?;

        let mut descs = Vec::new();
        for token in tokens {
            let (kind, rest) = match token.split_once(':') {
                Some((k, r)) => (k, r),
                None => (token, ""),
            };
            let desc = match kind {
                "conv" => {
                    let parts: Vec<&str> = rest.split(':').collect();
                    if parts.len() != 3 {
                        return Err(bad(format!("conv token must be conv:CxKHxKW:sS:pP, got {token:?}")));
                    }
                    let dims: Vec<usize> = parts[0]
                        .split('x')
                        .map(|p| p.parse().map_err(|_| bad(format!("bad conv extent {p:?}"))))
                        .collect::<Result<_>>()?;
                    if dims.len() != 3 {
                        return Err(bad(format!("conv extents must be CxKHxKW, got {:?}", parts[0])));
                    }
                    let stride = parse_tagged(parts[1], 's', token)?;
                    let pad = parse_tagged(parts[2], 'p', token)?;
                    LayerDesc::Conv2d {
                        out_channels: dims[0],
                        kernel_h: dims[1],
                        kernel_w: dims[2],
                        stride,
                        pad,
                    }
                }
                "pool" => {
                    let (win, stride) = rest
                        .split_once(':')
                        .ok_or_else(|| bad(format!("pool token must be pool:W:sS, got {token:?}")))?;
                    LayerDesc::MaxPool2d {
                        window: win
                            .parse()
                            .map_err(|_| bad(format!("bad pool window {win:?}")))?,
                        stride: parse_tagged(stride, 's', token)?,
                    }
                }
                "relu" if rest.is_empty() => LayerDesc::Relu,
                "flatten" if rest.is_empty() => LayerDesc::Flatten,
                "dense" => LayerDesc::Dense {
                    outputs: rest
                        .parse()
                        .map_err(|_| bad(format!("bad dense width {rest:?}")))?,
                },
                _ => return Err(bad(format!("unknown layer token {token:?}"))),
            };
            descs.push(desc);
        }
        Architecture::new(input_shape, descs)
    }
}

fn parse_tagged(part: &str, tag: char, token: &str) -> Result<usize> {
    part.strip_prefix(tag)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| {
            Error::BadArchitecture(format!("expected {tag}<int> in {token:?}, got {part:?}"))
        })
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "in:{}x{}x{}",
            self.input_shape[0], self.input_shape[1], self.input_shape[2]
        )?;
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                    ..
                } => write!(f, " conv:{out_channels}x{kernel_h}x{kernel_w}:s{stride}:p{pad}")?,
                LayerSpec::MaxPool2d { window, stride } => write!(f, " pool:{window}:s{stride}")?,
                LayerSpec::Relu => write!(f, " relu")?,
                LayerSpec::Flatten => write!(f, " flatten")?,
                LayerSpec::Dense { outputs, .. } => write!(f, " dense:{outputs}")?,
            }
        }
        Ok(())
    }
}
