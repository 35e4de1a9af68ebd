//! The five adversarial-cycle networks and the super-resolution backbone.
//!
//! | kind                     | role    | layout                                             |
//! |--------------------------|---------|----------------------------------------------------|
//! | `generator-same-size`    | G1, G2  | 7x7 head, two 3x3, residual body, 3x3, 3x3, 7x7     |
//! | `generator-downscale`    | G3      | as above with layers 2-3 as 4x4 stride-2 convs      |
//! | `discriminator-patch70`  | D2      | k4 s2 x3, k4 s1, k4 s1 to one channel               |
//! | `discriminator-patch16`  | D1      | as D2 with the first three strides set to 1         |
//! | `sr-backbone`            | SR      | EDSR-style residual body, global skip, pixel shuffle |
//!
//! Generators use reflection padding; discriminators and SR use zeros.
//! All outputs are linear.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::error::{Error, Result};
use crate::imaging::CHANNELS;
use crate::nn::{ConvDesc, Graph, GraphBuilder, Mode, NodeId, PadMode, ParamDecl, ParamKind, Trace};
use crate::tensor::{Real, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    GeneratorSameSize,
    GeneratorDownscale,
    DiscriminatorPatch16,
    DiscriminatorPatch70,
    SrBackbone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    BatchNorm,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub n_resblocks: usize,
    pub base_channels: usize,
    pub leaky_slope: f64,
    pub norm: NormKind,
    /// Upscaling factor; read by the SR backbone only.
    pub scale: usize,
    /// Adds the input to the output; same-size generators only.
    #[serde(default)]
    pub global_skip: bool,
}

impl NetworkSpec {
    pub fn generator_same() -> Self {
        NetworkSpec {
            kind: NetworkKind::GeneratorSameSize,
            n_resblocks: 6,
            base_channels: 64,
            leaky_slope: 0.2,
            norm: NormKind::BatchNorm,
            scale: 1,
            global_skip: false,
        }
    }

    pub fn generator_down() -> Self {
        NetworkSpec {
            kind: NetworkKind::GeneratorDownscale,
            ..Self::generator_same()
        }
    }

    pub fn discriminator(kind: NetworkKind) -> Self {
        NetworkSpec {
            kind,
            n_resblocks: 0,
            ..Self::generator_same()
        }
    }

    pub fn sr() -> Self {
        NetworkSpec {
            kind: NetworkKind::SrBackbone,
            n_resblocks: 8,
            base_channels: 64,
            leaky_slope: 0.2,
            norm: NormKind::None,
            scale: 4,
            global_skip: false,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.base_channels = channels;
        self
    }

    pub fn with_resblocks(mut self, n: usize) -> Self {
        self.n_resblocks = n;
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_global_skip(mut self, on: bool) -> Self {
        self.global_skip = on;
        self
    }

    /// Every violated constraint, prefixed with `prefix`.
    pub fn validate(&self, prefix: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if self.base_channels == 0 {
            errs.push(format!("{prefix}.base_channels must be > 0"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            errs.push(format!("{prefix}.leaky_slope {} outside (0, 1)", self.leaky_slope));
        }
        if self.global_skip && self.kind != NetworkKind::GeneratorSameSize {
            errs.push(format!("{prefix}.global_skip applies to same-size generators only"));
        }
        if self.kind == NetworkKind::SrBackbone {
            if self.scale < 2 || !self.scale.is_power_of_two() {
                errs.push(format!("{prefix}.scale {} must be a power of two >= 2", self.scale));
            }
            if self.norm != NormKind::None {
                errs.push(format!("{prefix}.norm must be none for the SR backbone"));
            }
        }
        errs
    }
}

/// Architecture plus parameter layout; holds no weights.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    graph: Graph,
    decls: Vec<ParamDecl>,
}

/// Weights for one network, ordered as its [`ParamDecl`]s.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub spec: NetworkSpec,
    pub tensors: Vec<Tensor<T>>,
}

struct Layers<'a> {
    b: &'a mut GraphBuilder,
    spec: &'a NetworkSpec,
    n: usize,
}

impl Layers<'_> {
    fn conv(&mut self, src: NodeId, cin: usize, cout: usize, k: usize, s: usize, pad: usize, mode: PadMode) -> NodeId {
        self.n += 1;
        let name = format!("conv{}", self.n);
        self.b.conv(
            &name,
            src,
            ConvDesc {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride: s,
                pad,
                pad_mode: mode,
            },
        )
    }

    fn norm(&mut self, src: NodeId, c: usize) -> NodeId {
        match self.spec.norm {
            NormKind::BatchNorm => self.b.batch_norm(&format!("norm{}", self.n), src, c),
            NormKind::None => src,
        }
    }

    fn act(&mut self, src: NodeId) -> NodeId {
        self.b.leaky_relu(src, self.spec.leaky_slope)
    }

    /// conv, norm, activation.
    fn block(&mut self, src: NodeId, cin: usize, cout: usize, k: usize, s: usize, pad: usize, mode: PadMode) -> NodeId {
        let h = self.conv(src, cin, cout, k, s, pad, mode);
        let h = self.norm(h, cout);
        self.act(h)
    }
}

fn build_generator(spec: &NetworkSpec, downscale: bool) -> (Graph, Vec<ParamDecl>) {
    let c = spec.base_channels;
    let (mut b, input) = GraphBuilder::new();
    let mut l = Layers { b: &mut b, spec, n: 0 };
    let r = PadMode::Reflect;
    let mut h = l.block(input, CHANNELS, c, 7, 1, 3, r);
    for _ in 0..2 {
        h = if downscale {
            l.block(h, c, c, 4, 2, 1, PadMode::Zero)
        } else {
            l.block(h, c, c, 3, 1, 1, r)
        };
    }
    for _ in 0..spec.n_resblocks {
        let t = l.block(h, c, c, 3, 1, 1, r);
        let t = l.conv(t, c, c, 3, 1, 1, r);
        let t = l.norm(t, c);
        h = l.b.add(h, t);
    }
    h = l.block(h, c, c, 3, 1, 1, r);
    h = l.block(h, c, c, 3, 1, 1, r);
    let mut out = l.conv(h, c, CHANNELS, 7, 1, 3, r);
    if spec.global_skip {
        out = b.add(input, out);
    }
    b.finish(out)
}

fn build_patch_discriminator(spec: &NetworkSpec, first_strides: usize) -> (Graph, Vec<ParamDecl>) {
    let c = spec.base_channels;
    let (mut b, input) = GraphBuilder::new();
    let mut l = Layers { b: &mut b, spec, n: 0 };
    let z = PadMode::Zero;
    let h = l.conv(input, CHANNELS, c, 4, first_strides, 1, z);
    let h = l.act(h);
    let h = l.block(h, c, 2 * c, 4, first_strides, 1, z);
    let h = l.block(h, 2 * c, 4 * c, 4, first_strides, 1, z);
    let h = l.block(h, 4 * c, 8 * c, 4, 1, 1, z);
    let out = l.conv(h, 8 * c, 1, 4, 1, 1, z);
    b.finish(out)
}

fn build_sr_graph(spec: &NetworkSpec) -> (Graph, Vec<ParamDecl>) {
    let c = spec.base_channels;
    let (mut b, input) = GraphBuilder::new();
    let mut l = Layers { b: &mut b, spec, n: 0 };
    let z = PadMode::Zero;
    let head = l.conv(input, CHANNELS, c, 3, 1, 1, z);
    let mut h = head;
    for _ in 0..spec.n_resblocks {
        let t = l.conv(h, c, c, 3, 1, 1, z);
        let t = l.b.relu(t);
        let t = l.conv(t, c, c, 3, 1, 1, z);
        h = l.b.add(h, t);
    }
    let body = l.conv(h, c, c, 3, 1, 1, z);
    let mut h = l.b.add(head, body);
    for _ in 0..spec.scale.trailing_zeros() {
        let t = l.conv(h, c, 4 * c, 3, 1, 1, z);
        h = l.b.pixel_shuffle(t, 2);
    }
    let out = l.conv(h, c, CHANNELS, 3, 1, 1, z);
    b.finish(out)
}

impl Network {
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        let errs = spec.validate("network");
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let (graph, decls) = match spec.kind {
            NetworkKind::GeneratorSameSize => build_generator(&spec, false),
            NetworkKind::GeneratorDownscale => build_generator(&spec, true),
            NetworkKind::DiscriminatorPatch16 => build_patch_discriminator(&spec, 1),
            NetworkKind::DiscriminatorPatch70 => build_patch_discriminator(&spec, 2),
            NetworkKind::SrBackbone => build_sr_graph(&spec),
        };
        Ok(Network { spec, graph, decls })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.decls
            .iter()
            .filter(|d| d.kind.trainable())
            .map(|d| d.shape.iter().product::<usize>())
            .sum()
    }

    pub fn is_discriminator(&self) -> bool {
        matches!(
            self.spec.kind,
            NetworkKind::DiscriminatorPatch16 | NetworkKind::DiscriminatorPatch70
        )
    }

    /// Receptive field of one discriminator output cell, input pixels.
    pub fn receptive_field(&self) -> usize {
        self.graph.receptive_field().0
    }

    /// Checks an input size against the network's constraints.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let err = |why: String| Err(Error::Shape(format!("{:?} input {height}x{width}: {why}", self.spec.kind)));
        if height == 0 || width == 0 {
            return err("empty input".into());
        }
        if self.spec.kind == NetworkKind::GeneratorDownscale && (height % 4 != 0 || width % 4 != 0) {
            return err("dimensions must be divisible by 4".into());
        }
        if self.is_discriminator() {
            let rf = self.receptive_field();
            if height < rf || width < rf {
                return err(format!("smaller than the {rf}x{rf} receptive field"));
            }
        }
        match self.graph.output_size(height, width) {
            Some(s) => Ok(s),
            None => err("too small for the layer stack".into()),
        }
    }

    fn check<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != CHANNELS {
            return Err(Error::Shape(format!("expected 3 input channels, got {:?}", x.shape())));
        }
        self.output_size(x.height(), x.width()).map(|_| ())
    }

    pub fn forward<T: Real>(&self, params: &mut NetworkParams<T>, x: Tensor<T>, mode: Mode) -> Result<Trace<T>> {
        self.check(&x)?;
        self.graph.forward(&mut params.tensors, x, mode)
    }

    /// Evaluation-mode output without keeping activations.
    pub fn infer<T: Real>(&self, params: &NetworkParams<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        self.check(&x)?;
        self.graph.infer(&params.tensors, x)
    }

    pub fn backward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        param_grads: Option<&mut [Tensor<T>]>,
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.graph
            .backward(&params.tensors, trace, grad_out, param_grads, input_grad)
    }

    /// Zero tensors shaped like the parameters.
    pub fn zero_grads<T: Real>(&self) -> Vec<Tensor<T>> {
        self.decls.iter().map(|d| Tensor::zeros(d.shape)).collect()
    }

    /// Deterministic initial weights for `seed`.
    pub fn init_weights<T: Real>(&self, seed: u64) -> NetworkParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = self
            .decls
            .iter()
            .map(|d| match d.kind {
                ParamKind::Weight => Tensor::from_fn(d.shape, |_| T::of(normal.sample(&mut rng))),
                ParamKind::NormScale | ParamKind::RunningVar => Tensor::full(d.shape, T::one()),
                ParamKind::Bias | ParamKind::NormShift | ParamKind::RunningMean => Tensor::zeros(d.shape),
            })
            .collect();
        NetworkParams {
            spec: self.spec,
            tensors,
        }
    }

    /// Zeroes the last convolution so the output is identically zero.
    pub fn zero_output_layer<T: Real>(&self, params: &mut NetworkParams<T>) {
        let last = self
            .decls
            .iter()
            .rposition(|d| d.kind == ParamKind::Weight)
            .expect("every network has a convolution");
        params.tensors[last].fill(T::zero());
        params.tensors[last + 1].fill(T::zero());
    }

    pub fn check_params<T: Real>(&self, params: &NetworkParams<T>) -> Result<()> {
        if params.spec != self.spec || params.tensors.len() != self.decls.len() {
            return Err(Error::Checkpoint(format!(
                "parameters for {:?} do not match this network",
                params.spec.kind
            )));
        }
        for (d, t) in self.decls.iter().zip(&params.tensors) {
            if t.shape() != d.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    d.name,
                    t.shape(),
                    d.shape
                )));
            }
        }
        Ok(())
    }
}

pub fn build_generator_same(spec: NetworkSpec) -> Result<Network> {
    expect_kind(&spec, &[NetworkKind::GeneratorSameSize])?;
    Network::build(spec)
}

pub fn build_generator_down(spec: NetworkSpec) -> Result<Network> {
    expect_kind(&spec, &[NetworkKind::GeneratorDownscale])?;
    Network::build(spec)
}

pub fn build_discriminator(spec: NetworkSpec) -> Result<Network> {
    expect_kind(
        &spec,
        &[NetworkKind::DiscriminatorPatch16, NetworkKind::DiscriminatorPatch70],
    )?;
    Network::build(spec)
}

pub fn build_sr(spec: NetworkSpec) -> Result<Network> {
    expect_kind(&spec, &[NetworkKind::SrBackbone])?;
    Network::build(spec)
}

fn expect_kind(spec: &NetworkSpec, kinds: &[NetworkKind]) -> Result<()> {
    if kinds.contains(&spec.kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "spec kind {:?} is not one of {kinds:?}",
            spec.kind
        )))
    }
}

impl<T: Real> NetworkParams<T> {
    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Digest of every value, for change detection.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for t in &self.tensors {
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize().into()
    }

    pub fn named<'a>(&'a self, net: &'a Network, prefix: &str) -> Vec<(String, &'a Tensor<T>)> {
        net.decls
            .iter()
            .zip(&self.tensors)
            .map(|(d, t)| (format!("{prefix}{}", d.name), t))
            .collect()
    }
}

/// Writes a single-network archive with the spec echoed in the header.
pub fn save_params<T: Real>(path: &Path, net: &Network, params: &NetworkParams<T>) -> Result<()> {
    net.check_params(params)?;
    let meta = serde_json::json!({ "content": "network", "spec": params.spec });
    archive::save(path, &meta, &params.named(net, ""))
}

pub fn load_params<T: Real>(path: &Path) -> Result<(Network, NetworkParams<T>)> {
    let (meta, tensors) = archive::load::<T>(path)?;
    if meta["content"] != "network" {
        return Err(Error::Checkpoint(format!("{} is not a network archive", path.display())));
    }
    let spec: NetworkSpec = serde_json::from_value(meta["spec"].clone())?;
    let net = Network::build(spec)?;
    let params = NetworkParams {
        spec,
        tensors: tensors.into_iter().map(|(_, t)| t).collect(),
    };
    net.check_params(&params)?;
    Ok((net, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(spec: NetworkSpec) -> Network {
        Network::build(spec.with_channels(4).with_resblocks(1)).unwrap()
    }

    #[test]
    fn discriminator_output_dims() {
        let d2 = toy(NetworkSpec::discriminator(NetworkKind::DiscriminatorPatch70));
        let d1 = toy(NetworkSpec::discriminator(NetworkKind::DiscriminatorPatch16));
        assert_eq!(d2.receptive_field(), 70);
        assert_eq!(d1.receptive_field(), 16);
        assert_eq!(d2.output_size(128, 128).unwrap(), (14, 14));
        assert_eq!(d1.output_size(32, 32).unwrap(), (27, 27));
        assert!(d2.output_size(69, 128).is_err());
        assert!(d1.output_size(15, 32).is_err());
    }

    #[test]
    fn generator_down_sizes() {
        let g3 = toy(NetworkSpec::generator_down());
        assert_eq!(g3.output_size(128, 128).unwrap(), (32, 32));
        assert_eq!(g3.output_size(4, 4).unwrap(), (1, 1));
        assert!(g3.output_size(126, 126).is_err());
    }

    #[test]
    fn sr_param_count_closed_form() {
        let c = 8;
        let net = Network::build(NetworkSpec::sr().with_channels(c)).unwrap();
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let want = conv(3, c, 3) + 8 * 2 * conv(c, c, 3) + conv(c, c, 3) + 2 * conv(c, 4 * c, 3) + conv(c, 3, 3);
        assert_eq!(net.param_count(), want);
        assert_eq!(want, 27 * c + c + 8 * 2 * (9 * c * c + c) + (9 * c * c + c) + 2 * (36 * c * c + 4 * c) + 27 * c + 3);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let net = toy(NetworkSpec::generator_same());
        let a = net.init_weights::<f32>(5);
        assert_eq!(a, net.init_weights::<f32>(5));
        assert_ne!(a, net.init_weights::<f32>(6));
        for (d, t) in net.decls().iter().zip(&a.tensors) {
            match d.kind {
                ParamKind::Bias | ParamKind::NormShift => assert!(t.data().iter().all(|&v| v == 0.0)),
                ParamKind::NormScale => assert!(t.data().iter().all(|&v| v == 1.0)),
                _ => {}
            }
        }
    }

    #[test]
    fn weight_sample_mean_is_near_zero() {
        let net = Network::build(NetworkSpec::sr().with_channels(64).with_resblocks(8)).unwrap();
        let p = net.init_weights::<f64>(0);
        let w: Vec<f64> = net
            .decls()
            .iter()
            .zip(&p.tensors)
            .filter(|(d, _)| d.kind == ParamKind::Weight)
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect();
        assert!(w.len() > 1_000_000 / 2);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        assert!(mean.abs() <= 4.0 * INIT_STD / n.sqrt());
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - INIT_STD).abs() < 1e-3 * INIT_STD * 10.0);
    }

    #[test]
    fn zeroed_output_layer_gives_zero_output() {
        let net = toy(NetworkSpec::generator_same());
        let mut p = net.init_weights::<f64>(1);
        net.zero_output_layer(&mut p);
        let x = Tensor::from_fn([2, 3, 9, 7], |i| (i as f64 * 0.37).sin());
        let y = net.forward(&mut p, x, Mode::Train).unwrap().into_output();
        assert_eq!(y.shape(), [2, 3, 9, 7]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn archive_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let net = toy(NetworkSpec::sr());
        let p = net.init_weights::<f32>(2);
        let path = dir.path().join("sr.bin");
        save_params(&path, &net, &p).unwrap();
        let (net2, q) = load_params::<f32>(&path).unwrap();
        assert_eq!(net2.spec(), net.spec());
        assert_eq!(p.fingerprint(), q.fingerprint());
    }

    #[test]
    fn wrong_kind_rejected() {
        assert!(build_sr(NetworkSpec::generator_same()).is_err());
        assert!(build_discriminator(NetworkSpec::sr()).is_err());
        let bad = NetworkSpec::generator_same().with_channels(0);
        assert!(Network::build(bad).is_err());
    }
}
