//! Layer graph with cached activations and a reverse-mode pass.
//!
//! Activation `0` is the graph input; node `i` writes activation `i + 1`.
//! Every node reads one earlier activation, and `Concat` nodes additionally
//! read a recorded skip source. Gradients flowing into an activation that is
//! consumed more than once are summed in reverse node order, so repeated runs
//! accumulate in the same order.

use std::hash::{Hash, Hasher};

use super::layers::{
    concat_backward, concat_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward, upsample2_backward, upsample2_forward, Conv2d, Param,
};
use super::{Scalar, Tensor4};
use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Op<S> {
    Conv(Conv2d<S>),
    Relu,
    MaxPool2,
    Upsample2,
    /// Output channels are `[skip, input]`.
    Concat { skip: usize },
}

impl<S> Op<S> {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Conv(c) if c.kernel == 1 => "conv1x1",
            Op::Conv(_) => "conv3x3",
            Op::Relu => "relu",
            Op::MaxPool2 => "maxpool2",
            Op::Upsample2 => "upsample2_nearest",
            Op::Concat { .. } => "concat_skip",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<S> {
    pub name: String,
    pub input: usize,
    pub op: Op<S>,
}

#[derive(Debug, Clone, Default)]
struct Trace<S> {
    acts: Vec<Tensor4<S>>,
    argmax: Vec<Option<Vec<u32>>>,
}

#[derive(Debug, Clone)]
pub struct ModelGraph<S> {
    nodes: Vec<Node<S>>,
    trace: Option<Trace<S>>,
}

impl<S: Scalar> Default for ModelGraph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ModelGraph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            trace: None,
        }
    }

    /// Appends a node reading the previous activation; returns the index of its output.
    pub fn push(&mut self, name: impl Into<String>, op: Op<S>) -> usize {
        let input = self.nodes.len();
        if let Op::Concat { skip } = op {
            assert!(skip <= input, "skip source {skip} is not an earlier activation");
        }
        self.nodes.push(Node {
            name: name.into(),
            input,
            op,
        });
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node<S>] {
        &mut self.nodes
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d<S>> {
        self.nodes.iter().filter_map(|n| match &n.op {
            Op::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<S>> {
        self.nodes.iter_mut().filter_map(|n| match &mut n.op {
            Op::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Parameters in graph order (weight before bias).
    pub fn params(&self) -> Vec<&Param<S>> {
        self.convs().flat_map(|c| [&c.weight, &c.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.convs_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }

    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn run(&self, x: &Tensor4<S>) -> Result<Trace<S>> {
        let mut acts = Vec::with_capacity(self.nodes.len() + 1);
        let mut argmax = Vec::with_capacity(self.nodes.len());
        acts.push(x.clone());
        for node in &self.nodes {
            let input = &acts[node.input];
            let (out, arg) = match &node.op {
                Op::Conv(c) => (c.forward(input)?, None),
                Op::Relu => (relu_forward(input), None),
                Op::MaxPool2 => {
                    let (y, a) = maxpool2_forward(input)?;
                    (y, Some(a))
                }
                Op::Upsample2 => (upsample2_forward(input), None),
                Op::Concat { skip } => (concat_forward(&acts[*skip], input)?, None),
            };
            acts.push(out);
            argmax.push(arg);
        }
        Ok(Trace { acts, argmax })
    }

    /// Forward pass without retaining activations.
    pub fn infer(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        let mut trace = self.run(x)?;
        Ok(trace.acts.pop().expect("input activation"))
    }

    /// Output of every node for input `x`; index `i + 1` is node `i`'s output.
    pub fn activations(&self, x: &Tensor4<S>) -> Result<Vec<Tensor4<S>>> {
        Ok(self.run(x)?.acts)
    }

    /// Forward pass retaining activations for [`ModelGraph::backward`].
    pub fn forward(&mut self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        let trace = self.run(x)?;
        let out = trace.acts.last().expect("input activation").clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Accumulates (`+=`) parameter gradients for the retained forward pass and
    /// returns the gradient with respect to the graph input.
    pub fn backward(&mut self, loss_grad: &Tensor4<S>) -> Result<Tensor4<S>> {
        let Some(trace) = self.trace.take() else {
            bail!(State, "backward called without a preceding forward pass");
        };
        let out_shape = trace.acts.last().expect("input activation").shape();
        if loss_grad.shape() != out_shape {
            bail!(
                Shape,
                "loss gradient {:?} does not match output {out_shape:?}",
                loss_grad.shape()
            );
        }
        let mut grads: Vec<Option<Tensor4<S>>> = vec![None; trace.acts.len()];
        grads[self.nodes.len()] = Some(loss_grad.clone());

        fn accumulate<S: Scalar>(slot: &mut Option<Tensor4<S>>, g: Tensor4<S>) {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[i + 1].take() else {
                continue;
            };
            let node = &mut self.nodes[i];
            let input = &trace.acts[node.input];
            match &mut node.op {
                Op::Conv(c) => {
                    let dx = c.backward(input, &dy)?;
                    accumulate(&mut grads[node.input], dx);
                }
                Op::Relu => {
                    let dx = relu_backward(&trace.acts[i + 1], &dy);
                    accumulate(&mut grads[node.input], dx);
                }
                Op::MaxPool2 => {
                    let arg = trace.argmax[i].as_ref().expect("pool argmax retained");
                    let dx = maxpool2_backward(input.shape(), arg, &dy);
                    accumulate(&mut grads[node.input], dx);
                }
                Op::Upsample2 => {
                    accumulate(&mut grads[node.input], upsample2_backward(&dy));
                }
                Op::Concat { skip } => {
                    let skip = *skip;
                    let (dskip, dx) = concat_backward(trace.acts[skip].channels(), &dy);
                    accumulate(&mut grads[node.input], dx);
                    accumulate(&mut grads[skip], dskip);
                }
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| Tensor4::zeros(trace.acts[0].shape())))
    }

    /// Hash of every relu on/off state and pool argmax for input `x`.
    ///
    /// Two inputs with equal signatures lie in the same piecewise-linear region.
    pub fn kink_signature(&self, x: &Tensor4<S>) -> Result<u64> {
        Ok(self.infer_with_signature(x)?.1)
    }

    /// [`ModelGraph::infer`] and [`ModelGraph::kink_signature`] from one pass.
    pub fn infer_with_signature(&self, x: &Tensor4<S>) -> Result<(Tensor4<S>, u64)> {
        let mut trace = self.run(x)?;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Relu => {
                    for v in trace.acts[i + 1].data() {
                        (*v > S::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 => trace.argmax[i].hash(&mut h),
                _ => {}
            }
        }
        Ok((trace.acts.pop().expect("input activation"), h.finish()))
    }
}
