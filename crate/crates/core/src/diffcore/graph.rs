use super::kernels::{self, ConvDims};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Graph input; `shape` excludes the leading batch dimension.
    Input { shape: Vec<usize> },
    Conv2d { weight: ParamId, bias: ParamId },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Dense { weight: ParamId, bias: ParamId },
    Sigmoid,
    Softmax,
    ResidualAdd,
    Flatten,
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    op: OpKind,
    inputs: Vec<NodeId>,
    output: Option<Tensor>,
    grad: Option<Vec<f64>>,
    argmax: Vec<usize>,
}

/// A static computation graph over a [`ParamStore`].
///
/// Nodes are appended in topological order (every input id is smaller than
/// the node's own id), so the graph is acyclic by construction and forward
/// simply walks the node list. Backward walks it in reverse.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    root: Option<NodeId>,
    forward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, op: OpKind, inputs: Vec<NodeId>) -> NodeId {
        debug_assert!(inputs.iter().all(|&i| i < self.nodes.len()));
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
            output: None,
            grad: None,
            argmax: Vec::new(),
        });
        self.forward_done = false;
        let id = self.nodes.len() - 1;
        self.root = Some(id);
        id
    }

    pub fn input(&mut self, name: &str, sample_shape: &[usize]) -> NodeId {
        assert!(self.nodes.is_empty(), "the input node must be the first node");
        self.push(name, OpKind::Input { shape: sample_shape.to_vec() }, vec![])
    }

    pub fn conv2d(&mut self, name: &str, x: NodeId, weight: ParamId, bias: ParamId) -> NodeId {
        self.push(name, OpKind::Conv2d { weight, bias }, vec![x])
    }

    pub fn dense(&mut self, name: &str, x: NodeId, weight: ParamId, bias: ParamId) -> NodeId {
        self.push(name, OpKind::Dense { weight, bias }, vec![x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, OpKind::Relu, vec![x])
    }

    pub fn maxpool2x2(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, OpKind::MaxPool2x2, vec![x])
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, OpKind::GlobalAvgPool, vec![x])
    }

    pub fn sigmoid(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, OpKind::Sigmoid, vec![x])
    }

    pub fn softmax(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, OpKind::Softmax, vec![x])
    }

    pub fn residual_add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        self.push(name, OpKind::ResidualAdd, vec![a, b])
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> NodeId {
        self.push(name, OpKind::Flatten, vec![x])
    }

    /// The most recently added node is the root unless overridden here.
    pub fn set_root(&mut self, id: NodeId) {
        assert!(id < self.nodes.len());
        self.root = Some(id);
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id].op
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id].name
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Parameters referenced by any node, in node order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for n in &self.nodes {
            if let OpKind::Conv2d { weight, bias } | OpKind::Dense { weight, bias } = n.op {
                ids.push(weight);
                ids.push(bias);
            }
        }
        ids
    }

    /// Cached output of a node from the last forward pass.
    pub fn output(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes[id].output.as_ref().ok_or(Error::BackwardBeforeForward)
    }

    /// Gradient of the backward seed(s) with respect to a node's output, as
    /// left by the last backward pass.
    pub fn node_grad(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id];
        let out = node.output.as_ref()?;
        let g = node.grad.as_ref()?;
        Some(Tensor::from_parts(out.shape().to_vec(), g.clone()))
    }

    /// Runs every node and returns a copy of the root's output.
    pub fn forward(&mut self, params: &ParamStore, input: &Tensor) -> Result<Tensor> {
        self.run_forward(params, input)?;
        let root = self.root.ok_or_else(|| Error::invalid("empty graph"))?;
        Ok(self.output(root)?.clone())
    }

    /// Runs every node, caching outputs for [`Graph::backward`].
    pub fn run_forward(&mut self, params: &ParamStore, input: &Tensor) -> Result<()> {
        self.forward_done = false;
        for id in 0..self.nodes.len() {
            let (out, argmax) = self.eval_node(id, params, input)?;
            debug_assert!(out.is_finite(), "non-finite output at node `{}`", self.nodes[id].name);
            self.nodes[id].output = Some(out);
            self.nodes[id].argmax = argmax;
            self.nodes[id].grad = None;
        }
        self.forward_done = true;
        Ok(())
    }

    fn shape_err(&self, id: NodeId, expected: impl Into<String>, actual: &[usize]) -> Error {
        Error::Shape {
            node: self.nodes[id].name.clone(),
            expected: expected.into(),
            actual: actual.to_vec(),
        }
    }

    fn eval_node(&self, id: NodeId, params: &ParamStore, input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let node = &self.nodes[id];
        let arg = |k: usize| -> &Tensor {
            self.nodes[node.inputs[k]].output.as_ref().expect("inputs precede node")
        };
        let out: Result<Tensor> = match &node.op {
            OpKind::Input { shape } => {
                let s = input.shape();
                if s.len() != shape.len() + 1 || &s[1..] != shape.as_slice() {
                    return Err(self.shape_err(id, format!("[N, {}]", join(shape)), s));
                }
                Ok(input.clone())
            }
            OpKind::Conv2d { weight, bias } => {
                let x = arg(0);
                let w = params.get(*weight);
                let b = params.get(*bias);
                let ws = w.shape();
                let s = x.shape();
                if s.len() != 4 || ws.len() != 4 || s[1] != ws[1] {
                    return Err(self.shape_err(id, format!("[N, {}, H, W]", ws.get(1).copied().unwrap_or(0)), s));
                }
                let d = ConvDims {
                    batch: s[0],
                    c_in: s[1],
                    c_out: ws[0],
                    height: s[2],
                    width: s[3],
                    kernel: ws[2],
                };
                debug_assert!(ws[2] == ws[3] && ws[2] % 2 == 1 && b.numel() == ws[0]);
                let mut out = vec![0.0; d.batch * d.c_out * d.height * d.width];
                kernels::conv2d_forward(d, x.data(), w.data(), b.data(), &mut out);
                Ok(Tensor::from_parts(vec![d.batch, d.c_out, d.height, d.width], out))
            }
            OpKind::Dense { weight, bias } => {
                let x = arg(0);
                let w = params.get(*weight);
                let s = x.shape();
                let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
                if s.len() != 2 || s[1] != d_in {
                    return Err(self.shape_err(id, format!("[N, {d_in}]"), s));
                }
                let mut y = vec![0.0; s[0] * d_out];
                kernels::dense_forward(s[0], d_in, d_out, x.data(), w.data(), params.get(*bias).data(), &mut y);
                Ok(Tensor::from_parts(vec![s[0], d_out], y))
            }
            OpKind::Relu => {
                let x = arg(0);
                let y = x.data().iter().map(|&v| v.max(0.0)).collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), y))
            }
            OpKind::MaxPool2x2 => {
                let x = arg(0);
                let s = x.shape();
                if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
                    return Err(self.shape_err(id, "[N, C, even H, even W]", s));
                }
                let (oh, ow) = (s[2] / 2, s[3] / 2);
                let mut y = vec![0.0; s[0] * s[1] * oh * ow];
                let argmax = kernels::maxpool_forward(s[0] * s[1], s[2], s[3], x.data(), &mut y);
                return Ok((Tensor::from_parts(vec![s[0], s[1], oh, ow], y), argmax));
            }
            OpKind::GlobalAvgPool => {
                let x = arg(0);
                let s = x.shape();
                if s.len() != 4 {
                    return Err(self.shape_err(id, "[N, C, H, W]", s));
                }
                let plane = s[2] * s[3];
                let y = x.data().chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
                Ok(Tensor::from_parts(vec![s[0], s[1]], y))
            }
            OpKind::Sigmoid => {
                let x = arg(0);
                let y = x.data().iter().map(|&v| kernels::sigmoid(v)).collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), y))
            }
            OpKind::Softmax => {
                let x = arg(0);
                let s = x.shape();
                if s.len() != 2 {
                    return Err(self.shape_err(id, "[N, C]", s));
                }
                let mut y = vec![0.0; x.numel()];
                kernels::softmax_rows(s[1], x.data(), &mut y);
                Ok(Tensor::from_parts(s.to_vec(), y))
            }
            OpKind::ResidualAdd => {
                let (a, b) = (arg(0), arg(1));
                if a.shape() != b.shape() {
                    return Err(self.shape_err(id, format!("{:?}", a.shape()), b.shape()));
                }
                let y = a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect();
                Ok(Tensor::from_parts(a.shape().to_vec(), y))
            }
            OpKind::Flatten => {
                let x = arg(0);
                let n = x.shape()[0];
                Ok(Tensor::from_parts(vec![n, x.numel() / n], x.data().to_vec()))
            }
        };
        Ok((out?, Vec::new()))
    }

    /// Backpropagates `output_grad` from the root.
    pub fn backward(&mut self, params: &mut ParamStore, output_grad: &Tensor) -> Result<()> {
        let root = self.root.ok_or_else(|| Error::invalid("empty graph"))?;
        self.backward_from(params, &[(root, output_grad)])
    }

    /// Backpropagates several seeds at once (e.g. one per task head).
    ///
    /// Node gradients are reset; parameter gradients accumulate into the
    /// store until explicitly zeroed.
    pub fn backward_from(&mut self, params: &mut ParamStore, seeds: &[(NodeId, &Tensor)]) -> Result<()> {
        if !self.forward_done {
            return Err(Error::BackwardBeforeForward);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        for (id, g) in seeds {
            let out_shape = self.output(*id)?.shape().to_vec();
            if g.shape() != out_shape.as_slice() {
                return Err(self.shape_err(*id, format!("gradient of shape {out_shape:?}"), g.shape()));
            }
            let buf = self.nodes[*id].grad.get_or_insert_with(|| vec![0.0; g.numel()]);
            buf.iter_mut().zip(g.data()).for_each(|(b, v)| *b += v);
        }
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = self.nodes[id].grad.take() else { continue };
            self.backprop_node(id, &g, params);
            debug_assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient at `{}`", self.nodes[id].name);
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        let n = self.nodes[id].output.as_ref().map_or(0, Tensor::numel);
        let buf = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }

    fn backprop_node(&mut self, id: NodeId, g: &[f64], params: &mut ParamStore) {
        let inputs = self.nodes[id].inputs.clone();
        let op = self.nodes[id].op.clone();
        match op {
            OpKind::Input { .. } => {}
            OpKind::Conv2d { weight, bias } => {
                let x = self.nodes[inputs[0]].output.take().expect("forward ran");
                let s = x.shape();
                let w = params.get(weight);
                let ws = w.shape();
                let d = ConvDims {
                    batch: s[0],
                    c_in: s[1],
                    c_out: ws[0],
                    height: s[2],
                    width: s[3],
                    kernel: ws[2],
                };
                let mut gw = vec![0.0; w.numel()];
                let mut gb = vec![0.0; ws[0]];
                let mut gx = vec![0.0; x.numel()];
                kernels::conv2d_backward(d, x.data(), w.data(), g, &mut gx, &mut gw, &mut gb);
                self.nodes[inputs[0]].output = Some(x);
                add_into(params.get_mut(weight).grad_mut(), &gw);
                add_into(params.get_mut(bias).grad_mut(), &gb);
                self.accumulate(inputs[0], |buf| add_into(buf, &gx));
            }
            OpKind::Dense { weight, bias } => {
                let x = self.nodes[inputs[0]].output.take().expect("forward ran");
                let w = params.get(weight);
                let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
                let n = x.shape()[0];
                let mut gw = vec![0.0; w.numel()];
                let mut gb = vec![0.0; d_out];
                let mut gx = vec![0.0; x.numel()];
                kernels::dense_backward(n, d_in, d_out, x.data(), w.data(), g, &mut gx, &mut gw, &mut gb);
                self.nodes[inputs[0]].output = Some(x);
                add_into(params.get_mut(weight).grad_mut(), &gw);
                add_into(params.get_mut(bias).grad_mut(), &gb);
                self.accumulate(inputs[0], |buf| add_into(buf, &gx));
            }
            OpKind::Relu => {
                let y = self.nodes[id].output.take().expect("forward ran");
                self.accumulate(inputs[0], |buf| {
                    for ((b, yv), gv) in buf.iter_mut().zip(y.data()).zip(g) {
                        if *yv > 0.0 {
                            *b += gv;
                        }
                    }
                });
                self.nodes[id].output = Some(y);
            }
            OpKind::MaxPool2x2 => {
                let argmax = std::mem::take(&mut self.nodes[id].argmax);
                self.accumulate(inputs[0], |buf| {
                    for (&src, gv) in argmax.iter().zip(g) {
                        buf[src] += gv;
                    }
                });
                self.nodes[id].argmax = argmax;
            }
            OpKind::GlobalAvgPool => {
                let s = self.nodes[inputs[0]].output.as_ref().expect("forward ran").shape().to_vec();
                let plane = s[2] * s[3];
                let scale = 1.0 / plane as f64;
                self.accumulate(inputs[0], |buf| {
                    for (chunk, gv) in buf.chunks_exact_mut(plane).zip(g) {
                        chunk.iter_mut().for_each(|b| *b += gv * scale);
                    }
                });
            }
            OpKind::Sigmoid => {
                let y = self.nodes[id].output.take().expect("forward ran");
                self.accumulate(inputs[0], |buf| {
                    for ((b, yv), gv) in buf.iter_mut().zip(y.data()).zip(g) {
                        *b += gv * yv * (1.0 - yv);
                    }
                });
                self.nodes[id].output = Some(y);
            }
            OpKind::Softmax => {
                let y = self.nodes[id].output.take().expect("forward ran");
                let cols = y.shape()[1];
                self.accumulate(inputs[0], |buf| {
                    for ((br, yr), gr) in buf.chunks_exact_mut(cols).zip(y.data().chunks_exact(cols)).zip(g.chunks_exact(cols)) {
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((b, yv), gv) in br.iter_mut().zip(yr).zip(gr) {
                            *b += yv * (gv - inner);
                        }
                    }
                });
                self.nodes[id].output = Some(y);
            }
            OpKind::ResidualAdd => {
                self.accumulate(inputs[0], |buf| add_into(buf, g));
                self.accumulate(inputs[1], |buf| add_into(buf, g));
            }
            OpKind::Flatten => {
                self.accumulate(inputs[0], |buf| add_into(buf, g));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
}
