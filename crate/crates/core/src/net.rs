//! The depth/variance network: disjoint convolutional encoders for the RGB
//! and sensor-depth inputs, feature pyramids merged by elementwise
//! addition, a transpose-convolution decoder with lateral 1x1 projections,
//! and two linear 1x1 output heads producing a dense depth map (mm) and a
//! dense variance map (mm^2, strictly positive via an exp head).

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::rng::{stream, StreamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance head clamp range, in mm^2, applied in log space before the exp.
pub const VARIANCE_FLOOR_MM2: f64 = 1e-4;
pub const VARIANCE_CEIL_MM2: f64 = 1e8;

/// Architecture and initialization configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Channels of the strided encoder stages, shallow to deep.
    pub encoder_channels: Vec<usize>,
    /// Channels of the decoder stages, deep to shallow. Must have the same
    /// length as `encoder_channels` so the output regains the input size.
    pub decoder_channels: Vec<usize>,
    /// Channels of the full-resolution stem convolution that feeds the
    /// first strided stage and the finest lateral connection.
    pub stem_channels: usize,
    /// Drop the depth encoder entirely; the output becomes a function of
    /// the RGB image alone.
    pub rgb_only: bool,
    pub seed: u64,
    /// The sensor-depth input is divided by this scale before its encoder
    /// and the depth head output is multiplied by it.
    pub depth_scale_mm: f64,
    /// Initial bias of the depth head, in mm. Training code sets this to
    /// the training-set mean label so early predictions start in range.
    pub depth_bias_mm: f64,
    /// Initial bias of the log-variance head.
    pub logvar_bias: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_height: 64,
            input_width: 64,
            encoder_channels: vec![16, 32, 64],
            decoder_channels: vec![32, 16, 8],
            stem_channels: 8,
            rgb_only: false,
            seed: 0,
            depth_scale_mm: 1000.0,
            depth_bias_mm: 0.0,
            logvar_bias: 6.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let levels = self.encoder_channels.len();
        if levels == 0 {
            return Err(Error::config("encoder_channels must be nonempty"));
        }
        if self.decoder_channels.len() != levels {
            return Err(Error::config(format!(
                "decoder depth {} must equal encoder depth {}",
                self.decoder_channels.len(),
                levels
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0)
            || self.decoder_channels.iter().any(|&c| c == 0)
            || self.stem_channels == 0
        {
            return Err(Error::config("channel counts must be positive"));
        }
        let div = 1usize << levels;
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("input dims must be positive"));
        }
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(Error::config(format!(
                "input dims {}x{} must be divisible by 2^{levels}",
                self.input_height, self.input_width
            )));
        }
        if !(self.depth_scale_mm > 0.0) {
            return Err(Error::config("depth_scale_mm must be positive"));
        }
        Ok(())
    }

    fn levels(&self) -> usize {
        self.encoder_channels.len()
    }
}

/// Paired dense predictions: depth in mm and variance in mm^2, both with
/// exactly the input's spatial dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction<S> {
    pub depth_mm: Tensor<S>,
    pub variance_mm2: Tensor<S>,
}

/// Graph handles of one forward pass: `[H,W]` depth and variance maps.
#[derive(Debug, Clone, Copy)]
pub struct NetOutput {
    pub depth: TensorId,
    pub variance: TensorId,
}

/// A parameter collection plus the configuration it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    config: NetConfig,
    params: Vec<(String, Tensor<S>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    FanInUniform,
    /// Fan-in uniform shrunk well below the trunk scale, for the output
    /// heads: early predictions stay near the configured biases while
    /// pixels remain distinguishable and gradients reach the trunk.
    HeadUniform,
    Zero,
    Constant(f64),
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    init: Init,
}

fn conv_spec(name: String, cout: usize, cin: usize, k: usize) -> [ParamSpec; 2] {
    [
        ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            fan_in: cin * k * k,
            init: Init::FanInUniform,
        },
        ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            fan_in: 0,
            init: Init::Zero,
        },
    ]
}

fn convt_spec(name: String, cin: usize, cout: usize, k: usize, stride: usize) -> [ParamSpec; 2] {
    [
        ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![cin, cout, k, k],
            fan_in: cin * (k / stride) * (k / stride),
            init: Init::FanInUniform,
        },
        ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            fan_in: 0,
            init: Init::Zero,
        },
    ]
}

/// Parameter layout, in a fixed deterministic order shared by the builder,
/// the binder, and the checkpoint format.
fn param_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let levels = cfg.levels();
    let enc = &cfg.encoder_channels;
    let dec = &cfg.decoder_channels;
    let mut specs = Vec::new();

    let branch = |prefix: &str, input: usize, specs: &mut Vec<ParamSpec>| {
        specs.extend(conv_spec(
            format!("enc.{prefix}.stem"),
            cfg.stem_channels,
            input,
            3,
        ));
        let mut cin = cfg.stem_channels;
        for (i, &cout) in enc.iter().enumerate() {
            specs.extend(conv_spec(format!("enc.{prefix}.{i}"), cout, cin, 3));
            cin = cout;
        }
    };
    branch("rgb", 3, &mut specs);
    if !cfg.rgb_only {
        branch("depth", 1, &mut specs);
    }

    // Lateral 1x1 projections from each merged pyramid level into the
    // decoder channel count active at that scale.
    for i in 0..levels {
        let cout = if i == levels - 1 { dec[0] } else { dec[levels - 1 - i] };
        specs.extend(conv_spec(format!("lat.{i}"), cout, enc[i], 1));
    }
    // Finest lateral, from the full-resolution stem features.
    specs.extend(conv_spec(
        String::from("lat.stem"),
        dec[levels - 1],
        cfg.stem_channels,
        1,
    ));

    for t in 0..levels {
        let cin = dec[t];
        let cout = if t + 1 < levels { dec[t + 1] } else { dec[levels - 1] };
        specs.extend(convt_spec(format!("dec.{t}.up"), cin, cout, 4, 2));
        specs.extend(conv_spec(format!("dec.{t}.conv"), cout, cout, 3));
    }

    let top = dec[levels - 1];
    let mut head = conv_spec(String::from("head.depth"), 1, top, 1);
    head[0].init = Init::HeadUniform;
    head[1].init = Init::Constant(cfg.depth_bias_mm / cfg.depth_scale_mm);
    specs.extend(head);
    let mut head = conv_spec(String::from("head.logvar"), 1, top, 1);
    head[0].init = Init::HeadUniform;
    head[1].init = Init::Constant(cfg.logvar_bias);
    specs.extend(head);
    specs
}

/// Builds a freshly initialized model: fan-in-scaled uniform kernels and
/// zero biases, except the head biases which start at the configured
/// values. Deterministic for a given `config.seed`.
pub fn build_model<S: Scalar>(config: &NetConfig) -> Result<Model<S>> {
    config.validate()?;
    let mut rng = stream(config.seed, StreamId::Init);
    let mut params = Vec::new();
    for spec in param_specs(config) {
        let numel: usize = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zero => vec![S::zero(); numel],
            Init::Constant(v) => vec![S::from_f64_lossy(v); numel],
            Init::FanInUniform | Init::HeadUniform => {
                // He-style bound for the trunk: preserves activation
                // variance through the relu stack. Heads use 2% of it.
                let mut bound = (6.0 / spec.fan_in.max(1) as f64).sqrt();
                if spec.init == Init::HeadUniform {
                    bound *= 0.02;
                }
                (0..numel)
                    .map(|_| S::from_f64_lossy(rng.random_range(-bound..bound)))
                    .collect()
            }
        };
        params.push((spec.name, Tensor::new(spec.shape, data)?));
    }
    Ok(Model {
        config: config.clone(),
        params,
    })
}

impl<S: Scalar> Model<S> {
    /// Reassembles a model from named tensors, e.g. a checkpoint. The
    /// tensors must match the configuration's layout exactly.
    pub fn from_parts(config: NetConfig, params: Vec<(String, Tensor<S>)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, tensor)) in specs.iter().zip(&params) {
            if &spec.name != name || spec.shape != tensor.shape() {
                return Err(Error::config(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    spec.name,
                    spec.shape,
                    name,
                    tensor.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor<S>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<S>)] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Inserts every parameter into a graph as a leaf. With `trainable`
    /// set, gradients are collected for all of them.
    pub fn bind(&self, graph: &mut Graph<S>) -> BoundModel {
        self.bind_with(graph, true)
    }

    pub fn bind_with(&self, graph: &mut Graph<S>, trainable: bool) -> BoundModel {
        let ids = self
            .params
            .iter()
            .map(|(_, t)| graph.leaf(t.clone(), trainable))
            .collect();
        BoundModel {
            config: self.config.clone(),
            names: self.params.iter().map(|(n, _)| n.clone()).collect(),
            ids,
        }
    }

    /// Single-pixel prediction: equivalent to a full forward pass followed
    /// by indexing both maps at `g = (row, col)`.
    pub fn predict_at(
        &self,
        image: &Tensor<S>,
        depth_in: &Tensor<S>,
        row: usize,
        col: usize,
    ) -> Result<(S, S)> {
        let mut g = Graph::new();
        let bound = self.bind_with(&mut g, false);
        let i = g.constant(image.clone());
        let d = g.constant(depth_in.clone());
        let out = bound.forward(&mut g, i, d)?;
        let z = g.gather_pixel(out.depth, row, col)?;
        let v = g.gather_pixel(out.variance, row, col)?;
        Ok((g.value(z).item(), g.value(v).item()))
    }

    /// Dense prediction over the full frame.
    pub fn forward_maps(&self, image: &Tensor<S>, depth_in: &Tensor<S>) -> Result<ScenePrediction<S>> {
        let mut g = Graph::new();
        let bound = self.bind_with(&mut g, false);
        let i = g.constant(image.clone());
        let d = g.constant(depth_in.clone());
        let out = bound.forward(&mut g, i, d)?;
        Ok(ScenePrediction {
            depth_mm: g.value(out.depth).clone(),
            variance_mm2: g.value(out.variance).clone(),
        })
    }
}

/// A model whose parameters live in some graph as leaves.
#[derive(Debug, Clone)]
pub struct BoundModel {
    config: NetConfig,
    names: Vec<String>,
    ids: Vec<TensorId>,
}

impl BoundModel {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_ids(&self) -> &[TensorId] {
        &self.ids
    }

    fn id(&self, name: &str) -> TensorId {
        let at = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.ids[at]
    }

    fn conv_block<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        x: TensorId,
        name: &str,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let c = g.conv2d(x, self.id(&format!("{name}.weight")), stride, padding)?;
        g.bias_add(c, self.id(&format!("{name}.bias")))
    }

    /// Returns the full-resolution stem features followed by one feature
    /// map per strided stage.
    fn encode<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        input: TensorId,
        prefix: &str,
    ) -> Result<Vec<TensorId>> {
        let mut feats = Vec::with_capacity(self.config.levels() + 1);
        let stem = self.conv_block(g, input, &format!("enc.{prefix}.stem"), 1, 1)?;
        let mut x = g.relu(stem);
        feats.push(x);
        for i in 0..self.config.levels() {
            let c = self.conv_block(g, x, &format!("enc.{prefix}.{i}"), 2, 1)?;
            x = g.relu(c);
            feats.push(x);
        }
        Ok(feats)
    }

    /// Full forward pass. `image` must be `[3,H,W]` in `[0,1]`, `depth_in`
    /// `[1,H,W]` in mm. For RGB-only models `depth_in` is ignored.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        image: TensorId,
        depth_in: TensorId,
    ) -> Result<NetOutput> {
        let cfg = &self.config;
        let (h, w) = (cfg.input_height, cfg.input_width);
        let expect_img = [3usize, h, w];
        if g.value(image).shape() != expect_img {
            return Err(Error::ShapeMismatch {
                op: "forward",
                expected: expect_img.to_vec(),
                got: g.value(image).shape().to_vec(),
            });
        }
        let levels = cfg.levels();

        let rgb_feats = self.encode(g, image, "rgb")?;
        let merged: Vec<TensorId> = if cfg.rgb_only {
            rgb_feats
        } else {
            let expect_d = [1usize, h, w];
            if g.value(depth_in).shape() != expect_d {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    expected: expect_d.to_vec(),
                    got: g.value(depth_in).shape().to_vec(),
                });
            }
            let d_norm = g.scale(depth_in, S::from_f64_lossy(1.0 / cfg.depth_scale_mm));
            let d_feats = self.encode(g, d_norm, "depth")?;
            rgb_feats
                .iter()
                .zip(&d_feats)
                .map(|(&a, &b)| g.add(a, b))
                .collect::<Result<_>>()?
        };

        // merged[0] is the stem level; merged[1 + i] is strided stage i.
        let mut y = self.conv_block(g, merged[levels], &format!("lat.{}", levels - 1), 1, 0)?;
        for t in 0..levels {
            let up_w = self.id(&format!("dec.{t}.up.weight"));
            let up = g.conv_transpose2d(y, up_w, 2)?;
            let up = g.bias_add(up, self.id(&format!("dec.{t}.up.bias")))?;
            let fused = if t + 1 < levels {
                let lvl = levels - 2 - t;
                let lateral = self.conv_block(g, merged[lvl + 1], &format!("lat.{lvl}"), 1, 0)?;
                g.add(up, lateral)?
            } else {
                let lateral = self.conv_block(g, merged[0], "lat.stem", 1, 0)?;
                g.add(up, lateral)?
            };
            let c = self.conv_block(g, fused, &format!("dec.{t}.conv"), 1, 1)?;
            y = g.relu(c);
        }

        let z_raw = self.conv_block(g, y, "head.depth", 1, 0)?;
        let z_mm = g.scale(z_raw, S::from_f64_lossy(cfg.depth_scale_mm));
        let depth = g.view(z_mm, vec![h, w])?;

        let logvar = self.conv_block(g, y, "head.logvar", 1, 0)?;
        let logvar = g.clamp(
            logvar,
            S::from_f64_lossy(VARIANCE_FLOOR_MM2.ln()),
            S::from_f64_lossy(VARIANCE_CEIL_MM2.ln()),
        );
        let var = g.exp(logvar);
        let variance = g.view(var, vec![h, w])?;

        Ok(NetOutput { depth, variance })
    }
}
