//! QAP-Net: an encoder-decoder backbone with four optional augmented
//! pyramid networks.
//!
//! * Two atrous pyramids (`[1,2,4]` and `[1,3,9]`, three serial 3x3 layers
//!   each) run in parallel inside an augmented atrous module; `depth+1-L`
//!   such modules replace the plain skip connection at encoder level `L`.
//! * Max and average pooling pyramids (windows 4/6/8/10) take the pre-pool
//!   encoder outputs of levels `1..depth`, shrink them 4x and feed the
//!   decoder stage at the matching resolution.
//!
//! With every flag off the network is the plain backbone.

mod checkpoint;
mod config;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{AblationFlags, ModelConfig};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Shape, Tensor, Var};

pub const RATES_124: [usize; 3] = [1, 2, 4];
pub const RATES_139: [usize; 3] = [1, 3, 9];
pub const PYRAMID_WINDOWS: [usize; 4] = [4, 6, 8, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `(Cout, Cin, f, f)` kernel.
    Conv { cin: usize, cout: usize, f: usize },
    /// `(Cin, Cout, 2, 2)` kernel, stride 2.
    TransposeConv { cin: usize, cout: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    fn conv(name: String, cin: usize, cout: usize, f: usize) -> Self {
        LayerSpec {
            name,
            kind: LayerKind::Conv { cin, cout, f },
        }
    }

    pub fn weight_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Conv { cin, cout, f } => Shape::new(cout, cin, f, f),
            LayerKind::TransposeConv { cin, cout } => Shape::new(cin, cout, 2, 2),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv { cout, .. } | LayerKind::TransposeConv { cout, .. } => cout,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { cin, f, .. } => cin * f * f,
            // each output pixel of a stride-2, 2x2 transpose conv sees one tap per input channel
            LayerKind::TransposeConv { cin, .. } => cin,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels()
    }
}

/// Resolution index of a pyramid's destination: `Some(L)` for decoder
/// level `L`, `None` for the bottleneck output.
fn pyramid_target(config: &ModelConfig, level: usize) -> Option<usize> {
    let l = level + 2;
    (l <= config.depth).then_some(l)
}

fn pool_kinds(flags: AblationFlags) -> Vec<PoolKind> {
    let mut v = Vec::new();
    if flags.pool_max {
        v.push(PoolKind::Max);
    }
    if flags.pool_avg {
        v.push(PoolKind::Avg);
    }
    v
}

fn branches(flags: AblationFlags) -> Vec<(&'static str, [usize; 3])> {
    let mut v = Vec::new();
    if flags.atrous_124 {
        v.push(("branch124", RATES_124));
    }
    if flags.atrous_139 {
        v.push(("branch139", RATES_139));
    }
    v
}

/// Extra channels the pooling pyramids add at a decoder input.
fn pyramid_channels(config: &ModelConfig, target: Option<usize>) -> usize {
    let kinds = pool_kinds(config.flags).len();
    config
        .pyramid_levels()
        .filter(|&k| pyramid_target(config, k) == target)
        .map(|k| kinds * config.width(k))
        .sum()
}

/// Every parameterised layer of the network, in construction order.
pub fn layer_specs(config: &ModelConfig) -> Vec<LayerSpec> {
    let mut v = Vec::new();
    let d = config.depth;
    for l in 1..=d {
        let cin = if l == 1 {
            config.in_channels
        } else {
            config.width(l - 1)
        };
        v.push(LayerSpec::conv(
            format!("enc{l}.conv1"),
            cin,
            config.width(l),
            3,
        ));
        v.push(LayerSpec::conv(
            format!("enc{l}.conv2"),
            config.width(l),
            config.width(l),
            3,
        ));
    }
    let b = config.bottleneck_width();
    v.push(LayerSpec::conv(
        "bottleneck.conv1".into(),
        config.width(d),
        b,
        3,
    ));
    v.push(LayerSpec::conv("bottleneck.conv2".into(), b, b, 3));

    let br = branches(config.flags);
    if !br.is_empty() {
        for l in 1..=d {
            let c = config.width(l);
            for j in 1..=config.skip_modules(l) {
                for (name, _) in &br {
                    for i in 1..=3 {
                        v.push(LayerSpec::conv(
                            format!("skip{l}.mod{j}.{name}.conv{i}"),
                            c,
                            c,
                            3,
                        ));
                    }
                }
                v.push(LayerSpec::conv(
                    format!("skip{l}.mod{j}.fuse"),
                    br.len() * c,
                    c,
                    1,
                ));
            }
        }
    }
    for kind in pool_kinds(config.flags) {
        for k in config.pyramid_levels() {
            let c = config.width(k);
            v.push(LayerSpec::conv(
                format!("pyr{}{k}.fuse", kind.name()),
                4 * c,
                c,
                1,
            ));
        }
    }
    for l in (1..=d).rev() {
        let c = config.width(l);
        let up_in = if l == d {
            b + pyramid_channels(config, None)
        } else {
            config.width(l + 1)
        };
        v.push(LayerSpec {
            name: format!("dec{l}.tconv"),
            kind: LayerKind::TransposeConv {
                cin: up_in,
                cout: c,
            },
        });
        let cat = 2 * c + pyramid_channels(config, Some(l));
        v.push(LayerSpec::conv(format!("dec{l}.conv1"), cat, c, 3));
        v.push(LayerSpec::conv(format!("dec{l}.conv2"), c, c, 3));
    }
    v.push(LayerSpec::conv(
        "head".into(),
        config.width(1),
        config.num_classes,
        1,
    ));
    v
}

/// Closed-form parameter count of a configuration.
pub fn config_parameter_count(config: &ModelConfig) -> usize {
    layer_specs(config)
        .iter()
        .map(LayerSpec::parameter_count)
        .sum()
}

/// 64-bit FNV-1a, used to derive per-layer seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Fan-in scaled uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and
/// zero bias. Depends only on `seed` and the layer's name and shape.
pub fn init_layer(spec: &LayerSpec, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(spec.name.as_bytes()));
    let bound = (6.0 / spec.fan_in() as f64).sqrt();
    let w = Tensor::uniform(spec.weight_shape(), -bound, bound, &mut rng);
    let b = Tensor::zeros(Shape::new(1, spec.out_channels(), 1, 1));
    (w, b)
}

pub type ParamVars = BTreeMap<String, Var>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<T>>,
}

impl Model<f32> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for spec in layer_specs(&config) {
            let (w, b) = init_layer(&spec, seed);
            params.insert(format!("{}.weight", spec.name), w);
            params.insert(format!("{}.bias", spec.name), b);
        }
        Ok(Model { config, params })
    }
}

impl<T: Scalar> Model<T> {
    /// Assemble a model from named tensors, checking them against the layer
    /// plan of `config`.
    pub fn from_params(config: ModelConfig, params: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = layer_specs(&config);
        if params.len() != 2 * specs.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                2 * specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let expect = [
                (format!("{}.weight", spec.name), spec.weight_shape()),
                (
                    format!("{}.bias", spec.name),
                    Shape::new(1, spec.out_channels(), 1, 1),
                ),
            ];
            for (name, shape) in expect {
                match params.get(&name) {
                    Some(t) if t.shape() == shape => {}
                    Some(t) => {
                        return Err(Error::Data(format!(
                            "parameter {name} has shape {}, expected {shape}",
                            t.shape()
                        )))
                    }
                    None => return Err(Error::Data(format!("missing parameter {name}"))),
                }
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.shape().numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Add every parameter to `g` as a leaf.
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> ParamVars {
        self.params
            .iter()
            .map(|(k, v)| {
                let mut t = v.clone();
                t.requires_grad = trainable;
                (k.clone(), g.leaf(t))
            })
            .collect()
    }

    /// Build the full forward pass into `g`; returns per-pixel class
    /// probabilities `(N, num_classes, H, W)`.
    pub fn forward_graph(&self, g: &mut Graph<T>, pv: &ParamVars, input: Var) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(input);
        if (s.c, s.h, s.w) != (c.in_channels, c.input_size.0, c.input_size.1) {
            return Err(Error::dim(format!(
                "model expects (N, {}, {}, {}), got {s}",
                c.in_channels, c.input_size.0, c.input_size.1
            )));
        }
        let d = c.depth;
        let mut x = input;
        let mut enc = Vec::with_capacity(d);
        for l in 1..=d {
            x = conv_relu(g, pv, &format!("enc{l}.conv1"), x, 1)?;
            x = conv_relu(g, pv, &format!("enc{l}.conv2"), x, 1)?;
            enc.push(x);
            x = g.max_pool2d(x, 2, 2)?;
        }
        x = conv_relu(g, pv, "bottleneck.conv1", x, 1)?;
        x = conv_relu(g, pv, "bottleneck.conv2", x, 1)?;

        let mut routed: BTreeMap<Option<usize>, Vec<Var>> = BTreeMap::new();
        for kind in pool_kinds(c.flags) {
            for k in c.pyramid_levels() {
                let p = pooling_pyramid(g, enc[k - 1], kind)?;
                let p = conv_relu(g, pv, &format!("pyr{}{k}.fuse", kind.name()), p, 0)?;
                routed.entry(pyramid_target(c, k)).or_default().push(p);
            }
        }
        if let Some(extra) = routed.get(&None) {
            let mut parts = vec![x];
            parts.extend(extra);
            x = g.concat_channels(&parts)?;
        }
        for l in (1..=d).rev() {
            let up = tconv(g, pv, &format!("dec{l}.tconv"), x)?;
            let skip = atrous_skip_path(g, pv, c, l, enc[l - 1])?;
            let mut parts = vec![up, skip];
            if let Some(extra) = routed.get(&Some(l)) {
                parts.extend(extra);
            }
            x = g.concat_channels(&parts)?;
            x = conv_relu(g, pv, &format!("dec{l}.conv1"), x, 1)?;
            x = conv_relu(g, pv, &format!("dec{l}.conv2"), x, 1)?;
        }
        let logits = conv(g, pv, "head", x, 0)?;
        Ok(g.softmax_channels(logits))
    }

    /// Inference: class probabilities for a `(N, in_channels, H, W)` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let pv = self.register(&mut g, false);
        let x = g.leaf(batch.clone());
        let y = self.forward_graph(&mut g, &pv, x)?;
        Ok(g.take(y))
    }

    /// Arg-max class per pixel, `(N, H, W)` row-major.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<u8>> {
        Ok(argmax_channels(&self.forward(batch)?))
    }
}

/// Arg-max over channels; ties resolve to the lower class id.
pub fn argmax_channels<T: Scalar>(probs: &Tensor<T>) -> Vec<u8> {
    let s = probs.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        for p in 0..plane {
            let mut best = 0;
            let mut bv = probs.data()[n * s.c * plane + p];
            for c in 1..s.c {
                let v = probs.data()[(n * s.c + c) * plane + p];
                if v > bv {
                    bv = v;
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

fn param(pv: &ParamVars, name: &str) -> Result<Var> {
    pv.get(name)
        .copied()
        .ok_or_else(|| Error::Data(format!("missing parameter {name}")))
}

fn conv<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    layer: &str,
    x: Var,
    padding: usize,
) -> Result<Var> {
    let w = param(pv, &format!("{layer}.weight"))?;
    let b = param(pv, &format!("{layer}.bias"))?;
    g.conv2d(x, w, Some(b), 1, padding, 1)
}

fn conv_relu<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    layer: &str,
    x: Var,
    padding: usize,
) -> Result<Var> {
    let y = conv(g, pv, layer, x, padding)?;
    Ok(g.relu(y))
}

fn tconv<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, layer: &str, x: Var) -> Result<Var> {
    let w = param(pv, &format!("{layer}.weight"))?;
    let b = param(pv, &format!("{layer}.bias"))?;
    g.conv2d_transpose(x, w, Some(b), 2)
}

/// Three serial 3x3 atrous convs (`{prefix}.conv1..3`) with the given
/// rates, each followed by ReLU. Padding equals the rate, so extents are kept.
pub fn atrous_branch<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    prefix: &str,
    x: Var,
    rates: [usize; 3],
) -> Result<Var> {
    let mut y = x;
    for (i, &r) in rates.iter().enumerate() {
        let w = param(pv, &format!("{prefix}.conv{}.weight", i + 1))?;
        let b = param(pv, &format!("{prefix}.conv{}.bias", i + 1))?;
        y = g.conv2d(y, w, Some(b), 1, r, r)?;
        y = g.relu(y);
    }
    Ok(y)
}

/// Parallel atrous branches, concatenated, fused back to the input width by
/// a 1x1 conv and added to the input. Identity when both atrous flags are off.
pub fn augmented_atrous_module<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    prefix: &str,
    x: Var,
    flags: AblationFlags,
) -> Result<Var> {
    let br = branches(flags);
    if br.is_empty() {
        return Ok(x);
    }
    let outs = br
        .iter()
        .map(|(name, rates)| atrous_branch(g, pv, &format!("{prefix}.{name}"), x, *rates))
        .collect::<Result<Vec<_>>>()?;
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_channels(&outs)?
    };
    let fused = conv(g, pv, &format!("{prefix}.fuse"), cat, 0)?;
    g.add(x, fused)
}

/// The skip connection of encoder level `level`: `depth+1-level` serial
/// augmented atrous modules.
pub fn atrous_skip_path<T: Scalar>(
    g: &mut Graph<T>,
    pv: &ParamVars,
    config: &ModelConfig,
    level: usize,
    x: Var,
) -> Result<Var> {
    let mut y = x;
    for j in 1..=config.skip_modules(level) {
        y = augmented_atrous_module(g, pv, &format!("skip{level}.mod{j}"), y, config.flags)?;
    }
    Ok(y)
}

/// Pools with windows 4, 6, 8, 10 (stride = window). The 4x4 output is used
/// as is, the others are bilinearly resized to `(H/4, W/4)`; all four are
/// concatenated on channels.
pub fn pooling_pyramid<T: Scalar>(g: &mut Graph<T>, x: Var, kind: PoolKind) -> Result<Var> {
    let s = g.shape(x);
    if s.h < 10 || s.w < 10 {
        return Err(Error::config(format!(
            "pooling pyramid needs at least 10x10 input, got {s}"
        )));
    }
    let (oh, ow) = (s.h / 4, s.w / 4);
    let mut parts = Vec::with_capacity(PYRAMID_WINDOWS.len());
    for &w in &PYRAMID_WINDOWS {
        let p = match kind {
            PoolKind::Max => g.max_pool2d(x, w, w)?,
            PoolKind::Avg => g.avg_pool2d(x, w, w)?,
        };
        let p = if w == 4 {
            p
        } else {
            g.resize_bilinear(p, oh, ow)?
        };
        parts.push(p);
    }
    if g.shape(parts[0]).h != oh || g.shape(parts[0]).w != ow {
        return Err(Error::dim(format!(
            "pooling pyramid input {s} is not divisible by 4"
        )));
    }
    g.concat_channels(&parts)
}
