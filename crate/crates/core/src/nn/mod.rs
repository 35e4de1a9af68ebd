//! A static layer graph with explicit forward traces and reverse-mode gradients.
//!
//! A [`Graph`] is a topologically ordered list of nodes; node 0 is the input
//! and the last node is the output. Parameters live outside the graph in a
//! flat slice indexed by [`ParamDecl`] position, which lets one graph serve
//! any number of parameter snapshots.

pub mod conv;
pub mod norm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use conv::{ConvDesc, PadMode};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub shape: [usize; 4],
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Conv {
        desc: ConvDesc,
        weight: usize,
        bias: usize,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
    },
    LeakyRelu(f64),
    Relu,
    Add,
    PixelShuffle(usize),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are updated.
    Train,
    /// Running statistics; parameters are untouched.
    Eval,
}

enum ParamAccess<'a, T> {
    Train(&'a mut [Tensor<T>]),
    Eval(&'a [Tensor<T>]),
}

impl<T> ParamAccess<'_, T> {
    fn get(&self) -> &[Tensor<T>] {
        match self {
            ParamAccess::Train(p) => p,
            ParamAccess::Eval(p) => p,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Activations recorded by a forward pass, consumed by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Trace<T> {
    acts: Vec<Tensor<T>>,
    norm: Vec<Option<norm::NormCache<T>>>,
    mode: Mode,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("trace has an output")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.acts.pop().expect("trace has an output")
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.acts[0]
    }
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamDecl>,
}

impl GraphBuilder {
    /// Starts a graph; the returned id is the input node.
    pub fn new() -> (Self, NodeId) {
        let b = GraphBuilder {
            nodes: vec![Node {
                op: Op::Input,
                inputs: vec![],
            }],
            params: Vec::new(),
        };
        (b, 0)
    }

    fn param(&mut self, name: String, shape: [usize; 4], kind: ParamKind) -> usize {
        self.params.push(ParamDecl { name, shape, kind });
        self.params.len() - 1
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(Node { op, inputs });
        self.nodes.len() - 1
    }

    pub fn conv(&mut self, name: &str, src: NodeId, desc: ConvDesc) -> NodeId {
        let weight = self.param(format!("{name}.weight"), desc.weight_shape(), ParamKind::Weight);
        let bias = self.param(format!("{name}.bias"), desc.bias_shape(), ParamKind::Bias);
        self.push(Op::Conv { desc, weight, bias }, vec![src])
    }

    pub fn batch_norm(&mut self, name: &str, src: NodeId, channels: usize) -> NodeId {
        let shape = [channels, 1, 1, 1];
        let gamma = self.param(format!("{name}.gamma"), shape, ParamKind::NormScale);
        let beta = self.param(format!("{name}.beta"), shape, ParamKind::NormShift);
        let mean = self.param(format!("{name}.running_mean"), shape, ParamKind::RunningMean);
        let var = self.param(format!("{name}.running_var"), shape, ParamKind::RunningVar);
        self.push(
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
            },
            vec![src],
        )
    }

    pub fn leaky_relu(&mut self, src: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(slope), vec![src])
    }

    pub fn relu(&mut self, src: NodeId) -> NodeId {
        self.push(Op::Relu, vec![src])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, vec![a, b])
    }

    pub fn pixel_shuffle(&mut self, src: NodeId, factor: usize) -> NodeId {
        self.push(Op::PixelShuffle(factor), vec![src])
    }

    /// Finalises the graph. `output` must be the most recently added node.
    pub fn finish(self, output: NodeId) -> (Graph, Vec<ParamDecl>) {
        assert_eq!(output, self.nodes.len() - 1, "output must be the last node");
        (Graph { nodes: self.nodes }, self.params)
    }
}

fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if c % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {c}",
            r * r
        )));
    }
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    let (ow, oh) = (w * r, h * r);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ic = ch * r * r + i * r + j;
                    for y in 0..h {
                        let s = ((b * c + ic) * h + y) * w;
                        let d = ((b * oc + ch) * oh + y * r + i) * ow + j;
                        for xx in 0..w {
                            dst[d + xx * r] = src[s + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn pixel_unshuffle<T: Real>(g: &Tensor<T>, r: usize) -> Tensor<T> {
    let [n, oc, oh, ow] = g.shape();
    let (h, w, c) = (oh / r, ow / r, oc * r * r);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = g.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ic = ch * r * r + i * r + j;
                    for y in 0..h {
                        let d = ((b * c + ic) * h + y) * w;
                        let s = ((b * oc + ch) * oh + y * r + i) * ow + j;
                        for xx in 0..w {
                            dst[d + xx] = src[s + xx * r];
                        }
                    }
                }
            }
        }
    }
    out
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_scaled(&g, T::one()),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl Graph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn eval_node<T: Real>(
        &self,
        i: usize,
        acts: &[Option<Tensor<T>>],
        params: &mut ParamAccess<'_, T>,
    ) -> Result<(Tensor<T>, Option<norm::NormCache<T>>)> {
        let node = &self.nodes[i];
        let arg = |k: usize| -> &Tensor<T> {
            acts[node.inputs[k]]
                .as_ref()
                .expect("activation released before last use")
        };
        Ok(match &node.op {
            Op::Input => unreachable!("input is not evaluated"),
            Op::Conv { desc, weight, bias } => {
                let p = params.get();
                (conv::forward(desc, arg(0), &p[*weight], &p[*bias])?, None)
            }
            Op::BatchNorm { gamma, .. } => match params {
                ParamAccess::Train(p) => {
                    let [g, b, m, v] = &mut p[*gamma..*gamma + 4] else {
                        unreachable!("norm slots are contiguous")
                    };
                    let (y, cache) =
                        norm::forward_train(arg(0), norm::NormParams { gamma: g, beta: b }, m, v)?;
                    (y, Some(cache))
                }
                ParamAccess::Eval(p) => {
                    let [g, b, m, v] = &p[*gamma..*gamma + 4] else {
                        unreachable!("norm slots are contiguous")
                    };
                    let y = norm::forward_eval(arg(0), norm::NormParams { gamma: g, beta: b }, m, v)?;
                    (y, None)
                }
            },
            Op::LeakyRelu(slope) => {
                let s = T::of(*slope);
                (arg(0).map(|v| if v > T::zero() { v } else { v * s }), None)
            }
            Op::Relu => (arg(0).map(|v| if v > T::zero() { v } else { T::zero() }), None),
            Op::Add => {
                let mut out = arg(0).clone();
                out.add_scaled(arg(1), T::one())?;
                (out, None)
            }
            Op::PixelShuffle(r) => (pixel_shuffle(arg(0), *r)?, None),
        })
    }

    fn check_params<T: Real>(&self, params: &[Tensor<T>]) -> Result<()> {
        let needed = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Conv { bias, .. } => Some(bias),
                Op::BatchNorm { var, .. } => Some(var),
                _ => None,
            })
            .max()
            .map_or(0, |m| m + 1);
        if params.len() < needed {
            return Err(Error::Shape(format!(
                "graph needs {needed} parameter tensors, got {}",
                params.len()
            )));
        }
        Ok(())
    }

    /// Runs the graph keeping every activation for a later backward pass.
    pub fn forward<T: Real>(
        &self,
        params: &mut [Tensor<T>],
        input: Tensor<T>,
        mode: Mode,
    ) -> Result<Trace<T>> {
        self.check_params(params)?;
        let mut acts: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        acts.push(Some(input));
        caches.push(None);
        for i in 1..self.nodes.len() {
            let mut access = match mode {
                Mode::Train => ParamAccess::Train(&mut *params),
                Mode::Eval => ParamAccess::Eval(&*params),
            };
            let (y, cache) = self.eval_node(i, &acts, &mut access)?;
            acts.push(Some(y));
            caches.push(cache);
        }
        Ok(Trace {
            acts: acts.into_iter().map(|a| a.expect("activation")).collect(),
            norm: caches,
            mode,
        })
    }

    /// Evaluation-mode pass that frees activations after their last use.
    pub fn infer<T: Real>(&self, params: &[Tensor<T>], input: Tensor<T>) -> Result<Tensor<T>> {
        self.check_params(params)?;
        let mut last_use = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for &src in &node.inputs {
                last_use[src] = i;
            }
        }
        let mut acts: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        acts[0] = Some(input);
        for i in 1..self.nodes.len() {
            let (y, _) = self.eval_node(i, &acts, &mut ParamAccess::Eval(params))?;
            acts[i] = Some(y);
            for &src in &self.nodes[i].inputs {
                if last_use[src] == i {
                    acts[src] = None;
                }
            }
        }
        Ok(acts.pop().flatten().expect("graph output"))
    }

    /// Back-propagates `grad_out` through a recorded trace.
    ///
    /// Returns the gradient with respect to the graph input when `input_grad`
    /// is set. Parameter
    /// gradients are accumulated into `param_grads` when it is given; passing
    /// `None` skips the weight-gradient products entirely.
    pub fn backward<T: Real>(
        &self,
        params: &[Tensor<T>],
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        mut param_grads: Option<&mut [Tensor<T>]>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let out = trace.output();
        out.check_same_shape(grad_out)?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[self.nodes.len() - 1] = Some(grad_out.clone());
        for i in (1..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let x = &trace.acts[node.inputs[0]];
            match &node.op {
                Op::Input => unreachable!(),
                Op::Conv { desc, weight, bias } => {
                    let pg = match param_grads.as_deref_mut() {
                        Some(pg) => {
                            let (lo, hi) = pg.split_at_mut(*bias);
                            Some((&mut lo[*weight], &mut hi[0]))
                        }
                        None => None,
                    };
                    let need_input = node.inputs[0] != 0 || input_grad;
                    if let Some(gx) =
                        conv::backward(desc, x, &params[*weight], &g, pg, need_input)?
                    {
                        accumulate(&mut grads[node.inputs[0]], gx)?;
                    }
                }
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let pg = match param_grads.as_deref_mut() {
                        Some(pg) => {
                            let (lo, hi) = pg.split_at_mut(*beta);
                            Some((&mut lo[*gamma], &mut hi[0]))
                        }
                        None => None,
                    };
                    let gx = match trace.mode {
                        Mode::Train => {
                            let cache = trace.norm[i].as_ref().expect("norm cache");
                            norm::backward_train(cache, &params[*gamma], &g, pg)
                        }
                        Mode::Eval => norm::backward_eval(
                            x,
                            norm::NormParams {
                                gamma: &params[*gamma],
                                beta: &params[*beta],
                            },
                            &params[*mean],
                            &params[*var],
                            &g,
                            pg,
                        ),
                    };
                    accumulate(&mut grads[node.inputs[0]], gx)?;
                }
                Op::LeakyRelu(slope) => {
                    let s = T::of(*slope);
                    let mut gx = g;
                    for (d, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::zero() {
                            *d *= s;
                        }
                    }
                    accumulate(&mut grads[node.inputs[0]], gx)?;
                }
                Op::Relu => {
                    let mut gx = g;
                    for (d, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads[node.inputs[0]], gx)?;
                }
                Op::Add => {
                    accumulate(&mut grads[node.inputs[1]], g.clone())?;
                    accumulate(&mut grads[node.inputs[0]], g)?;
                }
                Op::PixelShuffle(r) => {
                    accumulate(&mut grads[node.inputs[0]], pixel_unshuffle(&g, *r))?;
                }
            }
        }
        if !input_grad {
            return Ok(None);
        }
        Ok(Some(grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(trace.input().shape()))))
    }

    /// Spatial output size for a given input size, or `None` when some layer
    /// would receive an empty input.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let mut sizes: Vec<(usize, usize)> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = match &node.op {
                Op::Input => (height, width),
                Op::Conv { desc, .. } => {
                    let (h, w) = sizes[node.inputs[0]];
                    let (h, w) = (desc.out_len(h)?, desc.out_len(w)?);
                    if h == 0 || w == 0 {
                        return None;
                    }
                    (h, w)
                }
                Op::PixelShuffle(r) => {
                    let (h, w) = sizes[node.inputs[0]];
                    (h * r, w * r)
                }
                _ => sizes[node.inputs[0]],
            };
            sizes.push(s);
        }
        sizes.last().copied()
    }

    /// Receptive-field extent of one output cell, in input pixels along one
    /// axis, together with the cumulative stride (input pixels per output
    /// step). Only meaningful for chain-shaped downsampling graphs.
    pub fn receptive_field(&self) -> (usize, usize) {
        let mut rf = 1usize;
        let mut jump = 1usize;
        for node in &self.nodes {
            if let Op::Conv { desc, .. } = &node.op {
                rf += (desc.kernel - 1) * jump;
                jump *= desc.stride;
            }
        }
        (rf, jump)
    }

    /// Number of input pixels an output pixel can depend on beyond its own
    /// position, in input units (upper bound, rounded up).
    pub fn context_radius(&self) -> usize {
        // Resolution of each node relative to the input, as a ratio num/den.
        let mut res: Vec<(usize, usize)> = Vec::with_capacity(self.nodes.len());
        let mut radius = vec![0f64; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Input => res.push((1, 1)),
                Op::Conv { desc, .. } => {
                    let (num, den) = res[node.inputs[0]];
                    let reach = desc.kernel.saturating_sub(1).max(desc.pad) as f64;
                    radius[i] = radius[node.inputs[0]] + reach * den as f64 / num as f64;
                    res.push((num, den * desc.stride));
                }
                Op::PixelShuffle(r) => {
                    let (num, den) = res[node.inputs[0]];
                    radius[i] = radius[node.inputs[0]];
                    res.push((num * r, den));
                }
                _ => {
                    radius[i] = node
                        .inputs
                        .iter()
                        .map(|&s| radius[s])
                        .fold(0.0, f64::max);
                    res.push(res[node.inputs[0]]);
                }
            }
        }
        radius.last().copied().unwrap_or(0.0).ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_shuffle_places_channels_on_the_subgrid() {
        let x = Tensor::<f64>::from_fn([1, 4, 1, 1], |i| i as f64);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
        let x = Tensor::<f64>::from_fn([2, 8, 3, 2], |i| i as f64);
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&x, 2).unwrap(), 2), x);
    }

    #[test]
    fn infer_matches_eval_forward() {
        let (mut b, x) = GraphBuilder::new();
        let desc = ConvDesc {
            in_channels: 1,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            pad: 1,
            pad_mode: PadMode::Reflect,
        };
        let c = b.conv("c", x, desc);
        let n = b.batch_norm("n", c, 2);
        let a = b.leaky_relu(n, 0.2);
        let (g, decls) = b.finish(a);
        let mut params: Vec<Tensor<f64>> = decls
            .iter()
            .enumerate()
            .map(|(i, d)| Tensor::from_fn(d.shape, |j| ((i + j) % 5) as f64 * 0.3 + 0.1))
            .collect();
        let input = Tensor::from_fn([1, 1, 5, 5], |i| (i as f64).sin());
        let a = g.forward(&mut params, input.clone(), Mode::Eval).unwrap();
        let b = g.infer(&params, input).unwrap();
        assert_eq!(a.output(), &b);
    }
}
