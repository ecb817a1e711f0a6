//! Reverse-mode differentiation over a fixed set of primitive ops.
//!
//! Nodes can only reference nodes created before them, so insertion order is
//! a topological order and every graph is acyclic by construction.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeometry};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input(String),
    /// Elementwise; either side may be a single-element tensor (broadcast).
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[m,k] · [k,n]`.
    MatMul(NodeId, NodeId),
    /// `[N,Cin,H,W] ⊛ [Cout,Cin,kh,kw]`, zero padding, no bias.
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Per-channel slopes `[C]` applied to `[N,C,...]`.
    Prelu { input: NodeId, slopes: NodeId },
    Abs(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    /// Row-wise along the last axis.
    L2Normalize(NodeId),
    /// `[N,C,H,W] -> [N,C]`.
    GlobalAvgPool(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Prelu { .. } => "prelu",
            Op::Abs(_) => "abs",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::L2Normalize(_) => "l2_normalize",
            Op::GlobalAvgPool(_) => "global_avg_pool",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Conv2d { input, kernel, .. } => vec![input, kernel],
            Op::Prelu { input, slopes } => vec![input, slopes],
            Op::Scale(a, _)
            | Op::Abs(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::L2Normalize(a)
            | Op::GlobalAvgPool(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpGraph {
    id: u64,
    nodes: Vec<Op>,
    output: Option<NodeId>,
}

impl Default for OpGraph {
    fn default() -> Self {
        Self::new()
    }
}

macro_rules! unary {
    ($($fn_name:ident => $variant:ident),* $(,)?) => {
        $(pub fn $fn_name(&mut self, a: NodeId) -> NodeId {
            self.push(Op::$variant(a))
        })*
    };
}

macro_rules! binary {
    ($($fn_name:ident => $variant:ident),* $(,)?) => {
        $(pub fn $fn_name(&mut self, a: NodeId, b: NodeId) -> NodeId {
            self.push(Op::$variant(a, b))
        })*
    };
}

impl OpGraph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            output: None,
        }
    }

    fn push(&mut self, op: Op) -> NodeId {
        for o in op.operands() {
            assert!(o < self.nodes.len(), "operand {o} does not exist yet");
        }
        self.nodes.push(op);
        let id = self.nodes.len() - 1;
        self.output = Some(id);
        id
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()))
    }

    unary! {
        abs => Abs, exp => Exp, log => Log, sum => Sum, mean => Mean,
        square => Square, sqrt => Sqrt, l2_normalize => L2Normalize,
        global_avg_pool => GlobalAvgPool,
    }

    binary! { add => Add, sub => Sub, mul => Mul, matmul => MatMul }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize, pad: usize) -> NodeId {
        self.push(Op::Conv2d {
            input,
            kernel,
            stride,
            pad,
        })
    }

    pub fn prelu(&mut self, input: NodeId, slopes: NodeId) -> NodeId {
        self.push(Op::Prelu { input, slopes })
    }

    /// Mark the graph output. Defaults to the most recently added node.
    pub fn set_output(&mut self, node: NodeId) {
        assert!(node < self.nodes.len());
        self.output = Some(node);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn nodes(&self) -> &[Op] {
        &self.nodes
    }

    pub fn leaf_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|op| match op {
                Op::Input(n) => Some(n.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Values of every node from one `evaluate` call.
#[derive(Clone, Debug)]
pub struct Forward {
    graph_id: u64,
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
}

impl Forward {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("non-empty graph")
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node]
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

fn broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    let (ad, bd) = (a.data(), b.data());
    (0..n)
        .map(|i| f(ad[if ad.len() == 1 { 0 } else { i }], bd[if bd.len() == 1 { 0 } else { i }]))
        .collect()
}

fn conv_geometry(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<ConvGeometry> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs:?} kernel {ks:?}"),
        ));
    }
    ConvGeometry::new(xs[1], xs[2], xs[3], ks[0], (ks[2], ks[3]), stride, pad)
}

/// Run the graph forward. Every leaf must be supplied by name.
pub fn evaluate(graph: &OpGraph, inputs: &HashMap<String, Tensor>) -> Result<Forward> {
    if graph.nodes.is_empty() {
        return Err(Error::invalid("empty graph"));
    }
    let mut values: Vec<Tensor> = Vec::with_capacity(graph.nodes.len());
    let mut requires_grad = Vec::with_capacity(graph.nodes.len());
    for (id, op) in graph.nodes.iter().enumerate() {
        let v = |n: NodeId| &values[n];
        let out = match op {
            Op::Input(name) => {
                let t = inputs
                    .get(name)
                    .ok_or_else(|| Error::MissingInput(name.clone()))?;
                requires_grad.push(t.requires_grad);
                values.push(t.clone());
                continue;
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (v(*a), v(*b));
                let shape = same_or_scalar(op.name(), ta, tb)?;
                let data = match op {
                    Op::Add(..) => broadcast(ta, tb, |x, y| x + y),
                    Op::Sub(..) => broadcast(ta, tb, |x, y| x - y),
                    _ => broadcast(ta, tb, |x, y| x * y),
                };
                Tensor::new(shape, data)?
            }
            Op::Scale(a, f) => v(*a).map(|x| x * f),
            Op::MatMul(a, b) => {
                let (ta, tb) = (v(*a), v(*b));
                let (sa, sb) = (ta.shape(), tb.shape());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
                }
                let mut out = vec![0.0; sa[0] * sb[1]];
                gemm(sa[0], sa[1], sb[1], 1.0, ta.data(), false, tb.data(), false, 0.0, &mut out);
                Tensor::new(vec![sa[0], sb[1]], out)?
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let (x, k) = (v(*input), v(*kernel));
                let g = conv_geometry(x, k, *stride, *pad)?;
                let n = x.shape()[0];
                let mut out = vec![0.0; n * g.output_len()];
                let mut cols = vec![0.0; g.patch_len() * g.positions()];
                for i in 0..n {
                    kernels::conv2d_forward(
                        &g,
                        &x.data()[i * g.input_len()..(i + 1) * g.input_len()],
                        k.data(),
                        None,
                        &mut out[i * g.output_len()..(i + 1) * g.output_len()],
                        &mut cols,
                    );
                }
                Tensor::new(vec![n, g.out_channels, g.out_h(), g.out_w()], out)?
            }
            Op::Prelu { input, slopes } => {
                let (x, a) = (v(*input), v(*slopes));
                let xs = x.shape();
                if xs.len() < 2 || a.shape() != [xs[1]] {
                    return Err(Error::shape(
                        "prelu",
                        format!("input {xs:?} slopes {:?}", a.shape()),
                    ));
                }
                let per = x.len() / xs[0];
                let mut out = vec![0.0; x.len()];
                for (src, dst) in x.data().chunks_exact(per).zip(out.chunks_exact_mut(per)) {
                    kernels::prelu_forward(src, a.data(), dst);
                }
                Tensor::new(xs.to_vec(), out)?
            }
            Op::Abs(a) => v(*a).map(f64::abs),
            Op::Exp(a) => v(*a).map(f64::exp),
            Op::Log(a) => v(*a).map(f64::ln),
            Op::Square(a) => v(*a).map(|x| x * x),
            Op::Sqrt(a) => v(*a).map(f64::sqrt),
            Op::Sum(a) => Tensor::scalar(v(*a).data().iter().sum()),
            Op::Mean(a) => {
                let t = v(*a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::L2Normalize(a) => {
                let t = v(*a);
                let w = *t.shape().last().unwrap();
                let data = t
                    .data()
                    .chunks_exact(w)
                    .flat_map(|row| kernels::l2_normalize(row).0)
                    .collect();
                Tensor::new(t.shape().to_vec(), data)?
            }
            Op::GlobalAvgPool(a) => {
                let t = v(*a);
                let s = t.shape();
                if s.len() != 4 {
                    return Err(Error::shape("global_avg_pool", format!("{s:?}")));
                }
                let hw = s[2] * s[3];
                let data = t
                    .data()
                    .chunks_exact(hw)
                    .map(|p| p.iter().sum::<f64>() / hw as f64)
                    .collect();
                Tensor::new(vec![s[0], s[1]], data)?
            }
        };
        if !out.is_finite() {
            return Err(Error::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        let rg = op.operands().iter().any(|&o| requires_grad[o]);
        requires_grad.push(rg);
        values.push(out);
    }
    // Only the prefix up to the output matters; later nodes are evaluated but
    // the output is reported separately.
    let out = graph.output.unwrap();
    values.truncate(out + 1);
    requires_grad.truncate(out + 1);
    Ok(Forward {
        graph_id: graph.id,
        values,
        requires_grad,
    })
}

fn reduce_to(shape: &[usize], len: usize, grad: Vec<f64>) -> Tensor {
    if len == 1 && grad.len() != 1 {
        Tensor::new(shape.to_vec(), vec![grad.iter().sum()]).unwrap()
    } else {
        Tensor::new(shape.to_vec(), grad).unwrap()
    }
}

/// Reverse pass. Returns gradients for every `requires_grad` leaf, keyed by
/// leaf name.
pub fn backprop(graph: &OpGraph, fwd: &Forward, seed: &Tensor) -> Result<BTreeMap<String, Tensor>> {
    if fwd.graph_id != graph.id || fwd.values.len() != graph.output.map_or(0, |o| o + 1) {
        return Err(Error::MissingForward);
    }
    let out_id = fwd.values.len() - 1;
    if seed.shape() != fwd.values[out_id].shape() {
        return Err(Error::shape(
            "backprop",
            format!(
                "seed {:?} vs output {:?}",
                seed.shape(),
                fwd.values[out_id].shape()
            ),
        ));
    }
    let mut grads: Vec<Option<Tensor>> = vec![None; out_id + 1];
    grads[out_id] = Some(seed.clone());
    let vals = &fwd.values;

    let accumulate = |grads: &mut Vec<Option<Tensor>>, node: NodeId, g: Tensor| {
        if !fwd.requires_grad[node] {
            return;
        }
        match &mut grads[node] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    };

    for id in (0..=out_id).rev() {
        let Some(g) = grads[id].take() else { continue };
        let op = &graph.nodes[id];
        let gd = g.data();
        match *op {
            Op::Input(_) => {
                grads[id] = Some(g);
                continue;
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let ga = reduce_to(vals[a].shape(), vals[a].len(), gd.to_vec());
                let gb = reduce_to(vals[b].shape(), vals[b].len(), gd.iter().map(|x| sign * x).collect());
                accumulate(&mut grads, a, ga);
                accumulate(&mut grads, b, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&vals[a], &vals[b]);
                let ga_full: Vec<f64> = broadcast(&g, tb, |x, y| x * y);
                let gb_full: Vec<f64> = broadcast(&g, ta, |x, y| x * y);
                accumulate(&mut grads, a, reduce_to(ta.shape(), ta.len(), ga_full));
                accumulate(&mut grads, b, reduce_to(tb.shape(), tb.len(), gb_full));
            }
            Op::Scale(a, f) => accumulate(&mut grads, a, g.map(|x| x * f)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&vals[a], &vals[b]);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, 1.0, gd, false, tb.data(), true, 0.0, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, 1.0, ta.data(), true, gd, false, 0.0, &mut gb);
                accumulate(&mut grads, a, Tensor::new(vec![m, k], ga)?);
                accumulate(&mut grads, b, Tensor::new(vec![k, n], gb)?);
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let (x, k) = (&vals[input], &vals[kernel]);
                let geo = conv_geometry(x, k, stride, pad)?;
                let n = x.shape()[0];
                let mut gx = vec![0.0; x.len()];
                let mut gk = vec![0.0; k.len()];
                let mut cols = vec![0.0; geo.patch_len() * geo.positions()];
                let mut scratch = Vec::new();
                for i in 0..n {
                    let xi = &x.data()[i * geo.input_len()..(i + 1) * geo.input_len()];
                    kernels::im2col(&geo, xi, &mut cols);
                    kernels::conv2d_backward(
                        &geo,
                        &cols,
                        k.data(),
                        &gd[i * geo.output_len()..(i + 1) * geo.output_len()],
                        &mut gk,
                        None,
                        Some(&mut gx[i * geo.input_len()..(i + 1) * geo.input_len()]),
                        &mut scratch,
                    );
                }
                accumulate(&mut grads, input, Tensor::new(x.shape().to_vec(), gx)?);
                accumulate(&mut grads, kernel, Tensor::new(k.shape().to_vec(), gk)?);
            }
            Op::Prelu { input, slopes } => {
                let (x, a) = (&vals[input], &vals[slopes]);
                let per = x.len() / x.shape()[0];
                let mut gx = vec![0.0; x.len()];
                let mut ga = vec![0.0; a.len()];
                for ((xi, gi), go) in x
                    .data()
                    .chunks_exact(per)
                    .zip(gx.chunks_exact_mut(per))
                    .zip(gd.chunks_exact(per))
                {
                    kernels::prelu_backward(xi, a.data(), go, gi, &mut ga);
                }
                accumulate(&mut grads, input, Tensor::new(x.shape().to_vec(), gx)?);
                accumulate(&mut grads, slopes, Tensor::new(a.shape().to_vec(), ga)?);
            }
            Op::Abs(a) => {
                // sign(0) = 0
                let data = vals[a]
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&x, &g)| if x > 0.0 { g } else if x < 0.0 { -g } else { 0.0 })
                    .collect();
                accumulate(&mut grads, a, Tensor::new(vals[a].shape().to_vec(), data)?);
            }
            Op::Exp(a) => {
                let data = vals[id].data().iter().zip(gd).map(|(y, g)| y * g).collect();
                accumulate(&mut grads, a, Tensor::new(vals[a].shape().to_vec(), data)?);
            }
            Op::Log(a) => {
                let data = vals[a].data().iter().zip(gd).map(|(x, g)| g / x).collect();
                accumulate(&mut grads, a, Tensor::new(vals[a].shape().to_vec(), data)?);
            }
            Op::Square(a) => {
                let data = vals[a].data().iter().zip(gd).map(|(x, g)| 2.0 * x * g).collect();
                accumulate(&mut grads, a, Tensor::new(vals[a].shape().to_vec(), data)?);
            }
            Op::Sqrt(a) => {
                let data = vals[id].data().iter().zip(gd).map(|(y, g)| 0.5 * g / y).collect();
                accumulate(&mut grads, a, Tensor::new(vals[a].shape().to_vec(), data)?);
            }
            Op::Sum(a) => accumulate(&mut grads, a, Tensor::full(vals[a].shape(), gd[0])),
            Op::Mean(a) => {
                let n = vals[a].len() as f64;
                accumulate(&mut grads, a, Tensor::full(vals[a].shape(), gd[0] / n));
            }
            Op::L2Normalize(a) => {
                let t = &vals[a];
                let w = *t.shape().last().unwrap();
                let data = t
                    .data()
                    .chunks_exact(w)
                    .zip(gd.chunks_exact(w))
                    .flat_map(|(row, go)| {
                        let (n, r) = kernels::l2_normalize(row);
                        kernels::l2_normalize_backward(&n, r, go)
                    })
                    .collect();
                accumulate(&mut grads, a, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::GlobalAvgPool(a) => {
                let s = vals[a].shape();
                let hw = s[2] * s[3];
                let data = gd
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw))
                    .collect();
                accumulate(&mut grads, a, Tensor::new(s.to_vec(), data)?);
            }
        }
    }

    let mut out = BTreeMap::new();
    for (id, op) in graph.nodes.iter().enumerate().take(out_id + 1) {
        if let Op::Input(name) = op {
            if vals[id].requires_grad {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| vals[id].zeros_like());
                out.insert(name.clone(), g);
            }
        }
    }
    Ok(out)
}
