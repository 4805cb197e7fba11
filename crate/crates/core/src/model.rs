//! The detector network: a small convolutional backbone, a dense layer
//! producing the `S²(5B+C)` grid, and the squashing head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{decode_predictions, nms, Detection, GridSpec};
use crate::tensor::{conv_output_extent, Activation, CustomOp, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("layer {index} ({kind}): {detail}")]
    Layer {
        index: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2,
    Activation(Activation),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Activation(_) => "activation",
        }
    }

    /// 3×3 same-padded convolution.
    pub fn conv3(out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub channels: usize,
    pub backbone: Vec<LayerSpec>,
    pub grid: GridSpec,
}

/// `[conv3×3(width), leaky_relu(0.1), maxpool2]` per width.
pub fn conv_blocks(widths: &[usize]) -> Vec<LayerSpec> {
    widths
        .iter()
        .flat_map(|&w| {
            [
                LayerSpec::conv3(w),
                LayerSpec::Activation(Activation::LeakyRelu(0.1)),
                LayerSpec::MaxPool2,
            ]
        })
        .collect()
}

impl Default for NetworkConfig {
    /// 112 px RGB input, four conv blocks of width 16/32/64/64, 7×7 grid with
    /// two boxes per cell and three severities.
    fn default() -> Self {
        NetworkConfig {
            input_size: 112,
            channels: 3,
            backbone: conv_blocks(&[16, 32, 64, 64]),
            grid: GridSpec { s: 7, b: 2, c: 3 },
        }
    }
}

/// Shape bookkeeping derived from a validated config.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    /// Shapes of every parameter tensor, in storage order.
    pub param_shapes: Vec<Vec<usize>>,
    /// Fan-in of every parameter tensor (used for initialisation).
    pub fan_in: Vec<usize>,
    /// Flattened backbone output length.
    pub feature_len: usize,
}

impl LayerPlan {
    pub fn param_count(&self) -> usize {
        self.param_shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

impl NetworkConfig {
    pub fn output_len(&self) -> usize {
        self.grid.output_len()
    }

    /// Walks the layer chain and derives every parameter shape.
    pub fn plan(&self) -> Result<LayerPlan, ModelError> {
        if self.input_size == 0 || self.channels == 0 {
            return Err(ModelError::Config(format!(
                "input {}×{}×{} is empty",
                self.channels, self.input_size, self.input_size
            )));
        }
        GridSpec::new(self.grid.s, self.grid.b, self.grid.c)
            .map_err(|e| ModelError::Config(e.to_string()))?;

        let (mut c, mut h, mut w) = (self.channels, self.input_size, self.input_size);
        let mut param_shapes = Vec::new();
        let mut fan_in = Vec::new();
        for (index, layer) in self.backbone.iter().enumerate() {
            let fail = |detail: String| ModelError::Layer {
                index,
                kind: layer.kind(),
                detail,
            };
            match *layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(fail("channels, kernel and stride must be positive".into()));
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(fail(format!(
                            "kernel {kernel} does not fit {h}×{w} input with padding {padding}"
                        )));
                    }
                    param_shapes.push(vec![out_channels, c, kernel, kernel]);
                    param_shapes.push(vec![out_channels]);
                    let fan = c * kernel * kernel;
                    fan_in.extend([fan, fan]);
                    c = out_channels;
                    h = conv_output_extent(h, kernel, stride, padding);
                    w = conv_output_extent(w, kernel, stride, padding);
                }
                LayerSpec::MaxPool2 => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(fail(format!("input {h}×{w} is not evenly poolable")));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Activation(Activation::LeakyRelu(alpha)) => {
                    if !(alpha > 0.0 && alpha < 1.0) {
                        return Err(fail(format!("leaky_relu slope {alpha} outside (0,1)")));
                    }
                }
                LayerSpec::Activation(_) => {}
            }
        }
        let feature_len = c * h * w;
        let out = self.output_len();
        param_shapes.push(vec![out, feature_len]);
        param_shapes.push(vec![out]);
        fan_in.extend([feature_len, feature_len]);
        Ok(LayerPlan {
            param_shapes,
            fan_in,
            feature_len,
        })
    }
}

/// Sigmoid on every box field, softmax over each cell's categories.
#[derive(Debug, Clone, Copy)]
pub struct DetectionHead {
    pub grid: GridSpec,
}

impl DetectionHead {
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let mut out = vec![0.0; raw.len()];
        for cell in 0..g.cells() {
            let start = cell * g.cell_len();
            let cat = g.category_offset(cell);
            for i in start..cat {
                out[i] = Activation::Sigmoid.apply(raw[i]);
            }
            let logits = &raw[cat..cat + g.c];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &z) in out[cat..cat + g.c].iter_mut().zip(logits) {
                *o = (z - max).exp();
                total += *o;
            }
            for o in &mut out[cat..cat + g.c] {
                *o /= total;
            }
        }
        out
    }
}

impl CustomOp for DetectionHead {
    fn name(&self) -> &'static str {
        "detection_head"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor> {
        let g = self.grid;
        let y = output.data();
        let gy = grad_out.data();
        let mut dx = vec![0.0; y.len()];
        for cell in 0..g.cells() {
            let start = cell * g.cell_len();
            let cat = g.category_offset(cell);
            for i in start..cat {
                dx[i] = gy[i] * y[i] * (1.0 - y[i]);
            }
            let p = &y[cat..cat + g.c];
            let gp = &gy[cat..cat + g.c];
            let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
            for l in 0..g.c {
                dx[cat + l] = p[l] * (gp[l] - dot);
            }
        }
        vec![Tensor::new(inputs[0].shape(), dx).expect("head preserves shape")]
    }
}

/// A detector: configuration plus its flat list of parameter tensors
/// (conv kernel/bias pairs in layer order, then the dense weights and bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: NetworkConfig,
    params: Vec<Tensor>,
}

/// Deterministically initialised network: kernels and dense weights drawn
/// from `U(-√(6/fan_in), √(6/fan_in))`, biases zero.
pub fn build_network(config: NetworkConfig, seed: u64) -> Result<Model, ModelError> {
    let plan = config.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = plan
        .param_shapes
        .iter()
        .zip(&plan.fan_in)
        .map(|(shape, &fan)| {
            if shape.len() == 1 {
                return Tensor::zeros(shape);
            }
            let bound = (6.0 / fan as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::new(shape, data).expect("planned shape")
        })
        .collect();
    Ok(Model { config, params })
}

impl Model {
    /// Wraps existing parameters, checking them against the config's plan.
    pub fn from_parts(config: NetworkConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        let plan = config.plan()?;
        if plan.param_shapes.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                plan.param_shapes.len(),
                params.len()
            )));
        }
        for (i, (shape, p)) in plan.param_shapes.iter().zip(&params).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "parameter {i} has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn grid(&self) -> GridSpec {
        self.config.grid
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_image(&self, image: &Tensor) -> Result<(), ModelError> {
        let n = self.config.input_size;
        let expected = [self.config.channels, n, n];
        if image.shape() != expected {
            return Err(TensorError::Shape {
                op: "forward",
                detail: format!("image must be {expected:?}, got {:?}", image.shape()),
            }
            .into());
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Returns the parameter handles (in
    /// storage order) and the squashed head output.
    ///
    /// With `trainable == false` the parameters are recorded as constants and
    /// no gradient bookkeeping is kept.
    pub fn record(
        &self,
        tape: &mut Tape,
        image: &Tensor,
        trainable: bool,
    ) -> Result<(Vec<Var>, Var), ModelError> {
        self.check_image(image)?;
        let handles: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let mut x = tape.constant(image.clone());
        let mut next = 0;
        for layer in &self.config.backbone {
            x = match *layer {
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let v = tape.conv2d(x, handles[next], handles[next + 1], stride, padding)?;
                    next += 2;
                    v
                }
                LayerSpec::MaxPool2 => tape.maxpool2(x)?,
                LayerSpec::Activation(kind) => tape.activation(x, kind)?,
            };
        }
        let flat_len = tape.value(x).len();
        let flat = tape.reshape(x, &[flat_len])?;
        let raw = tape.dense(flat, handles[next], handles[next + 1])?;
        let head = DetectionHead {
            grid: self.config.grid,
        };
        let squashed = head.apply(tape.value(raw).data());
        let out = tape.custom(&[raw], Tensor::from_vec(squashed), Box::new(head));
        Ok((handles, out))
    }

    /// Single pass over one `[channels, N, N]` image with values in `[0, 1]`.
    pub fn forward(&self, image: &Tensor) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let (_, out) = self.record(&mut tape, image, false)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Forward pass, decode at `conf_threshold`, then per-category NMS.
    pub fn detect(&self, image: &Tensor, conf_threshold: f64, nms_iou: f64) -> Result<Vec<Detection>, ModelError> {
        let out = self.forward(image)?;
        let dets = decode_predictions(&out, self.grid(), conf_threshold)
            .map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(nms(&dets, nms_iou))
    }
}
