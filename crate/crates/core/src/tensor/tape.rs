//! Record/replay autograd tape.
//!
//! Every executed op appends one node holding its output value and the
//! input var ids; the backward sweep walks nodes in exact reverse execution
//! order and accumulates gradients into every reachable var, leaves
//! included. Parameters enter the graph as leaves via [`GradTape::leaf`].

use super::{ops, Scalar, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// inputs: [x, weight] or [x, weight, bias]; bias vars have dims (c,1,1,1).
    Conv2d {
        pad: usize,
    },
    Relu,
    /// inputs: [a, b]; records a's channel count for the backward split.
    ConcatChannels {
        c_a: usize,
    },
    DepthToSpace {
        r: usize,
    },
    NearestUpsample {
        r: usize,
    },
    Add,
    Reshape {
        from: [usize; 4],
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    inputs: Vec<VarId>,
    value: Tensor4<T>,
}

#[derive(Debug, Default)]
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
}

/// Per-var gradients produced by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: VarId) -> Option<&Tensor4<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor4<T>> {
        self.grads[id.0].take()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, inputs: Vec<VarId>, value: Tensor4<T>) -> VarId {
        self.nodes.push(Node { op, inputs, value });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor4<T>) -> VarId {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn value(&self, id: VarId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: VarId, weight: VarId, bias: Option<VarId>, pad: usize) -> Result<VarId> {
        let b_vec = bias.map(|b| self.nodes[b.0].value.data().to_vec());
        let out = ops::conv2d_raw(
            &self.nodes[x.0].value,
            &self.nodes[weight.0].value,
            b_vec.as_deref(),
            pad,
        )?;
        let mut inputs = vec![x, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push(Op::Conv2d { pad }, inputs, out))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let out = ops::relu(&self.nodes[x.0].value);
        self.push(Op::Relu, vec![x], out)
    }

    pub fn concat_channels(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let c_a = self.nodes[a.0].value.c();
        let out = ops::concat_channels(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(Op::ConcatChannels { c_a }, vec![a, b], out))
    }

    pub fn depth_to_space(&mut self, x: VarId, r: usize) -> Result<VarId> {
        let out = ops::depth_to_space(&self.nodes[x.0].value, r)?;
        Ok(self.push(Op::DepthToSpace { r }, vec![x], out))
    }

    pub fn nearest_upsample(&mut self, x: VarId, r: usize) -> Result<VarId> {
        let out = ops::nearest_upsample(&self.nodes[x.0].value, r)?;
        Ok(self.push(Op::NearestUpsample { r }, vec![x], out))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let out = ops::add(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(Op::Add, vec![a, b], out))
    }

    pub fn reshape(&mut self, x: VarId, dims: [usize; 4]) -> Result<VarId> {
        let from = self.nodes[x.0].value.dims();
        let out = self.nodes[x.0].value.clone().reshape(dims)?;
        Ok(self.push(Op::Reshape { from }, vec![x], out))
    }

    /// Backward sweep from `root`, seeded with `grad_root`. Returns the
    /// gradient of `sum(output * grad_root)` for every var on the tape.
    pub fn backward(&self, root: VarId, grad_root: Tensor4<T>) -> Result<Gradients<T>> {
        if grad_root.dims() != self.nodes[root.0].value.dims() {
            return Err(Error::Shape(format!(
                "backward seed dims {:?} do not match root value {:?}",
                grad_root.dims(),
                self.nodes[root.0].value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(grad_root);

        for idx in (0..=root.0).rev() {
            let Some(g_out) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g_out);
                    continue;
                }
                Op::Conv2d { pad } => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    let w = &self.nodes[node.inputs[1].0].value;
                    let has_bias = node.inputs.len() == 3;
                    let (gi, gw, gb) = ops::conv2d_backward_raw(x, w, has_bias, pad, &g_out)?;
                    accumulate(&mut grads, node.inputs[0], gi)?;
                    accumulate(&mut grads, node.inputs[1], gw)?;
                    if let Some(gb) = gb {
                        let c = gb.len();
                        accumulate(&mut grads, node.inputs[2], Tensor4::new([c, 1, 1, 1], gb)?)?;
                    }
                }
                Op::Relu => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    let gi = ops::relu_backward(x, &g_out)?;
                    accumulate(&mut grads, node.inputs[0], gi)?;
                }
                Op::ConcatChannels { c_a } => {
                    let (ga, gb) = ops::concat_channels_backward(&g_out, c_a)?;
                    accumulate(&mut grads, node.inputs[0], ga)?;
                    accumulate(&mut grads, node.inputs[1], gb)?;
                }
                Op::DepthToSpace { r } => {
                    let in_dims = self.nodes[node.inputs[0].0].value.dims();
                    let gi = ops::depth_to_space_backward(in_dims, r, &g_out)?;
                    accumulate(&mut grads, node.inputs[0], gi)?;
                }
                Op::NearestUpsample { r } => {
                    let in_dims = self.nodes[node.inputs[0].0].value.dims();
                    let gi = ops::nearest_upsample_backward(in_dims, r, &g_out)?;
                    accumulate(&mut grads, node.inputs[0], gi)?;
                }
                Op::Add => {
                    accumulate(&mut grads, node.inputs[0], g_out.clone())?;
                    accumulate(&mut grads, node.inputs[1], g_out)?;
                }
                Op::Reshape { from } => {
                    let gi = g_out.reshape(from)?;
                    accumulate(&mut grads, node.inputs[0], gi)?;
                }
            }
        }

        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor4<T>>],
    id: VarId,
    g: Tensor4<T>,
) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => {
            *existing = ops::add(existing, &g)?;
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}
