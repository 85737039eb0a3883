//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into every node that (transitively) depends on a leaf created with
//! `requires_grad`. Gradients from multiple uses of a node add up.
//!
//! ```
//! use gammaquant::autograd::Graph;
//! use gammaquant::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::from_vec(vec![-1.0, 0.5, 2.0]));
//! let y = g.relu(x);
//! let s = g.sum(y);
//! g.backward(s).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 1.0]);
//! ```
//!
//! Quantization enters the tape through [`Graph::quantize`], a
//! straight-through node: its forward value is the discrete dequantized
//! signal, its backward pass differentiates the continuous surrogate.

mod ops;
pub mod ste;

use crate::error::{Error, Result};
use crate::quant::QuantizerSpec;
use crate::tensor::Tensor;

pub use ste::{grad_gamma_mu, ste_forward, surrogate_partials, Partials};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Softmax(Var),
    Sum(Var),
    Softplus(Var),
    Tanh(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
        sample_weights: Vec<f64>,
    },
    Quantize {
        x: Var,
        gamma: Option<Var>,
        mu: Option<Var>,
        units: Vec<QuantizerSpec>,
        unit_len: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).unwrap(),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Seeds `output` with ones and propagates.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let seed = Tensor::full(self.shape(output), 1.0);
        self.backward_with(output, &seed)
    }

    /// Propagates an explicit upstream gradient from `output`.
    pub fn backward_with(&mut self, output: Var, upstream: &Tensor) -> Result<()> {
        if upstream.shape() != self.shape(output) {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(output).to_vec(),
                rhs: upstream.shape().to_vec(),
            });
        }
        accumulate(&mut self.nodes[output.0], upstream.data());
        for i in (0..=output.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.as_deref() else {
                continue;
            };
            ops::backward_node(&node.op, &node.value, grad, before);
        }
        Ok(())
    }

    /// Drops all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }
}

fn accumulate(node: &mut Node, g: &[f64]) {
    if !node.requires_grad {
        return;
    }
    match &mut node.grad {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => node.grad = Some(g.to_vec()),
    }
}

/// Mutable gradient buffer of an input node, allocating zeros on first use.
fn grad_buf(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f64>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![0.0; n]))
}
