use std::fmt;

use super::kernels::{
    check_dense, conv2d_backward, conv2d_with_cols, gemm, maxpool2_with_argmax, ConvGeometry,
};
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Sigmoid,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
        }
    }

    /// Derivative expressed through the input `x` and output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A differentiable primitive defined outside the tensor core.
///
/// `backward` receives the input values, the recorded output and the
/// upstream gradient, and returns one gradient per input (same shapes).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Constant,
    Param,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        geometry: ConvGeometry,
        cols: Vec<f64>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so its adjoint can be replayed.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Param, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape(), data)?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::shape(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.grad_flag(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshaped(shape)?;
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (x, k, b) = (self.value(input), self.value(kernels), self.value(bias));
        let geometry = ConvGeometry::check(x, k, b, stride, padding)?;
        let (out, cols) = conv2d_with_cols(x, k, b, &geometry);
        let rg = self.grad_flag(&[input, kernels, bias]);
        // Only the kernel gradient needs the unfolded patches.
        let cols = if self.nodes[kernels.0].requires_grad {
            cols
        } else {
            Vec::new()
        };
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                cols,
            },
            rg,
        ))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let (out, argmax) = maxpool2_with_argmax(self.value(input))?;
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var, TensorError> {
        let (x, w, b) = (self.value(input), self.value(weights), self.value(bias));
        let (m, n) = check_dense(x, w, b)?;
        let mut out = b.data().to_vec();
        gemm(m, n, 1, w.data(), (n as isize, 1), x.data(), (1, 1), 1.0, &mut out);
        let rg = self.grad_flag(&[input, weights, bias]);
        Ok(self.push(
            Tensor::from_vec(out),
            Op::Dense {
                input,
                weights,
                bias,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var, TensorError> {
        if let Activation::LeakyRelu(alpha) = kind {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(TensorError::InvalidArgument {
                    op: "leaky_relu",
                    detail: format!("alpha must lie in (0,1), got {alpha}"),
                });
            }
        }
        let x = self.value(input);
        if !x.all_finite() {
            return Err(TensorError::NonFinite { op: "activation" });
        }
        let data = x.data().iter().map(|&v| kind.apply(v)).collect();
        let out = Tensor::new(x.shape(), data)?;
        let rg = self.grad_flag(&[input]);
        Ok(self.push(out, Op::Activation { input, kind }, rg))
    }

    /// Records the result of an externally computed op.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.grad_flag(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Replays adjoints from `loss` back to the leaves.
    ///
    /// The tape is not modified, so calling this twice gives identical
    /// results. Parameters the loss does not depend on get no entry and
    /// read back as zero through [`Gradients::get`].
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("loss must be a single value, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        let mut visited = 0;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited += 1;
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut accumulate = |var: Var, delta: Tensor| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Add(a, b) => {
                accumulate(*a, g.clone());
                accumulate(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                accumulate(*a, Tensor::new(va.shape(), da).expect("shape preserved"));
                accumulate(*b, Tensor::new(vb.shape(), db).expect("shape preserved"));
            }
            Op::Sum(a) => {
                accumulate(*a, Tensor::filled(self.value(*a).shape(), g.data()[0]));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape();
                accumulate(*a, g.clone().reshaped(shape).expect("reshape preserves length"));
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
                cols,
            } => {
                let kv = self.value(*kernels);
                let need_input = self.nodes[input.0].requires_grad;
                let need_kernel = self.nodes[kernels.0].requires_grad;
                let (dx, dk, db) =
                    conv2d_backward(g.data(), kv, cols, geometry, need_input, need_kernel);
                if let Some(dx) = dx {
                    accumulate(*input, tensor(self.value(*input).shape(), dx));
                }
                if let Some(dk) = dk {
                    accumulate(*kernels, tensor(kv.shape(), dk));
                }
                accumulate(*bias, tensor(self.value(*bias).shape(), db));
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dx[src] += gv;
                }
                accumulate(*input, tensor(self.value(*input).shape(), dx));
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weights));
                let (m, n) = (w.shape()[0], w.shape()[1]);
                if self.nodes[weights.0].requires_grad {
                    let mut dw = vec![0.0; m * n];
                    gemm(m, 1, n, g.data(), (1, 1), x.data(), (1, 1), 0.0, &mut dw);
                    accumulate(*weights, tensor(w.shape(), dw));
                }
                if self.nodes[input.0].requires_grad {
                    let mut dx = vec![0.0; n];
                    gemm(n, m, 1, w.data(), (1, n as isize), g.data(), (1, 1), 0.0, &mut dx);
                    accumulate(*input, tensor(x.shape(), dx));
                }
                accumulate(*bias, g.clone());
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let dx = x
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv))
                    .collect();
                accumulate(*input, tensor(x.shape(), dx));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let deltas = op.backward(&values, &node.value, g);
                assert_eq!(
                    deltas.len(),
                    inputs.len(),
                    "custom op {} returned the wrong number of gradients",
                    op.name()
                );
                for (var, delta) in inputs.iter().zip(deltas) {
                    assert_eq!(delta.shape(), self.value(*var).shape(), "custom op {}", op.name());
                    accumulate(*var, delta);
                }
            }
        }
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("adjoint has the shape of its primal")
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros if unconnected.
    pub fn get(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn try_get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Number of nodes whose adjoint was propagated.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}
