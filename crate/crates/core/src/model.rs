//! The model zoo: seven classifier variants over paired visual and
//! seismic windows, plus the two post-hoc late-fusion rules.
//!
//! Every variant shares the same two ingredients: a small CNN stream per
//! modality ending in a sparse index-wise reduction, and a classifier
//! head. The variants differ only in how the two streams are combined
//! and which head consumes the result:
//!
//!   op-bilinear         fuse -> 3D conv stack -> global avg pool -> dense
//!   op-concat           concatenate -> same 3D conv head
//!   bilinear-fc         fuse -> flatten -> fully connected head
//!   concat-fc           concatenate -> flatten -> fully connected head
//!   orderless-bilinear  pooled outer product -> fully connected head
//!   visual-only         visual stream -> flatten -> fully connected head
//!   seismic-only        seismic stream -> flatten -> fully connected head
//!
//! Parameters are held in declaration order; checkpoints serialize the
//! same order, so the layout here is a file-format commitment.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_check, FD_EPSILON};
use crate::tape::{self, NodeId, Padding, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    VisualOnly,
    SeismicOnly,
    OpBilinear,
    OpConcat,
    BilinearFc,
    ConcatFc,
    OrderlessBilinear,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::VisualOnly,
        Variant::SeismicOnly,
        Variant::OpBilinear,
        Variant::OpConcat,
        Variant::BilinearFc,
        Variant::ConcatFc,
        Variant::OrderlessBilinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VisualOnly => "visual-only",
            Variant::SeismicOnly => "seismic-only",
            Variant::OpBilinear => "op-bilinear",
            Variant::OpConcat => "op-concat",
            Variant::BilinearFc => "bilinear-fc",
            Variant::ConcatFc => "concat-fc",
            Variant::OrderlessBilinear => "orderless-bilinear",
        }
    }

    pub fn uses_visual(self) -> bool {
        self != Variant::SeismicOnly
    }

    pub fn uses_seismic(self) -> bool {
        self != Variant::VisualOnly
    }

    /// Variants whose head is the 3D convolutional stack rather than
    /// fully connected layers.
    pub fn uses_conv_head(self) -> bool {
        matches!(self, Variant::OpBilinear | Variant::OpConcat)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::precondition(
                    "variant",
                    format!(
                        "unknown model variant {s:?}; expected one of {}",
                        Variant::ALL.map(|v| v.as_str()).join(", ")
                    ),
                )
            })
    }
}

/// One convolution layer of a modality stream. Stream convolutions use
/// Same padding; the stride applies to every spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerCfg {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCfg {
    pub layers: Vec<ConvLayerCfg>,
    /// Output dimension of the index-wise sparse reduction (N for the
    /// visual stream, M for the seismic stream). Must be smaller than
    /// the final layer's channel count.
    pub reduce_to: usize,
}

/// Classifier head configuration. The conv head is two 3D convolutions
/// (kernel 3, stride 1 then 2, Valid padding) followed by global average
/// pooling and a dense layer to 2 logits; the fully connected head is
/// dense(hidden) + ReLU + dense(2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadCfg {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub fc_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub visual_h: usize,
    pub visual_w: usize,
    pub seismic_len: usize,
    pub visual: StreamCfg,
    pub seismic: StreamCfg,
    pub head: HeadCfg,
    /// L1 coefficient on the two reduction weight matrices.
    pub lambda: f64,
    /// Seed that fully determines parameter initialization.
    pub seed: u64,
}

impl ModelSpec {
    /// The desk-scale default: 32x32 visual crops reduced to an 8x8 grid
    /// of 8 features, 256-sample seismic traces reduced to a length-16
    /// sequence of 8 features, fused tensor 8x8x16x64.
    pub fn standard(variant: Variant) -> Self {
        ModelSpec {
            variant,
            visual_h: 32,
            visual_w: 32,
            seismic_len: 256,
            visual: StreamCfg {
                layers: vec![
                    ConvLayerCfg { kernel: 3, stride: 2, channels: 8 },
                    ConvLayerCfg { kernel: 3, stride: 2, channels: 16 },
                    ConvLayerCfg { kernel: 3, stride: 1, channels: 32 },
                ],
                reduce_to: 8,
            },
            seismic: StreamCfg {
                layers: vec![
                    ConvLayerCfg { kernel: 7, stride: 4, channels: 8 },
                    ConvLayerCfg { kernel: 5, stride: 2, channels: 16 },
                    ConvLayerCfg { kernel: 5, stride: 2, channels: 32 },
                ],
                reduce_to: 8,
            },
            head: HeadCfg {
                conv1_filters: 6,
                conv2_filters: 8,
                fc_hidden: 32,
            },
            lambda: 1e-3,
            seed: 7,
        }
    }

    /// A shrunken spec for exhaustive per-coordinate gradient checks,
    /// where every parameter of every variant is finite-differenced.
    pub fn tiny(variant: Variant) -> Self {
        ModelSpec {
            variant,
            visual_h: 20,
            visual_w: 20,
            seismic_len: 128,
            visual: StreamCfg {
                layers: vec![
                    ConvLayerCfg { kernel: 3, stride: 2, channels: 3 },
                    ConvLayerCfg { kernel: 3, stride: 2, channels: 4 },
                    ConvLayerCfg { kernel: 3, stride: 1, channels: 6 },
                ],
                reduce_to: 3,
            },
            seismic: StreamCfg {
                layers: vec![
                    ConvLayerCfg { kernel: 5, stride: 4, channels: 3 },
                    ConvLayerCfg { kernel: 3, stride: 2, channels: 4 },
                    ConvLayerCfg { kernel: 3, stride: 2, channels: 6 },
                ],
                reduce_to: 3,
            },
            head: HeadCfg {
                conv1_filters: 3,
                conv2_filters: 4,
                fc_hidden: 8,
            },
            lambda: 1e-3,
            seed: 7,
        }
    }

    /// Walks the shape chain for this spec, rejecting inconsistent
    /// configurations with the first failing layer named.
    pub fn dims(&self) -> Result<SpecDims> {
        let (vu, vv, vc) = stream_dims_2d("visual", &self.visual, self.visual_h, self.visual_w)?;
        let (st, sc) = stream_dims_1d("seismic", &self.seismic, self.seismic_len)?;
        let n = self.visual.reduce_to;
        let m = self.seismic.reduce_to;
        if n == 0 || n >= vc {
            return Err(Error::shape(
                "build_model",
                format!("visual reduce: output dim {n} must be in 1..{vc} (final channel count)"),
            ));
        }
        if m == 0 || m >= sc {
            return Err(Error::shape(
                "build_model",
                format!("seismic reduce: output dim {m} must be in 1..{sc} (final channel count)"),
            ));
        }
        let mut dims = SpecDims {
            visual_feat: (vu, vv, vc),
            seismic_feat: (st, sc),
            grid: (vu, vv, n),
            seq: (st, m),
            head_conv: None,
            fc_in: None,
        };
        match self.variant {
            Variant::OpBilinear | Variant::OpConcat => {
                let c = if self.variant == Variant::OpBilinear {
                    n * m
                } else {
                    n + m
                };
                let d0 = (vu, vv, st, c);
                let d1 = (
                    head_valid_axis("head conv1", "height", vu, 3, 1)?,
                    head_valid_axis("head conv1", "width", vv, 3, 1)?,
                    head_valid_axis("head conv1", "length", st, 3, 1)?,
                    self.head.conv1_filters,
                );
                let d2 = (
                    head_valid_axis("head conv2", "height", d1.0, 3, 2)?,
                    head_valid_axis("head conv2", "width", d1.1, 3, 2)?,
                    head_valid_axis("head conv2", "length", d1.2, 3, 2)?,
                    self.head.conv2_filters,
                );
                dims.head_conv = Some(HeadConvDims {
                    input: d0,
                    after_conv1: d1,
                    after_conv2: d2,
                });
            }
            Variant::BilinearFc => dims.fc_in = Some(vu * vv * st * n * m),
            Variant::ConcatFc => dims.fc_in = Some(vu * vv * st * (n + m)),
            Variant::OrderlessBilinear => dims.fc_in = Some(n * m),
            Variant::VisualOnly => dims.fc_in = Some(vu * vv * n),
            Variant::SeismicOnly => dims.fc_in = Some(st * m),
        }
        Ok(dims)
    }
}

/// All intermediate shapes implied by a `ModelSpec`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecDims {
    /// Visual stream output before reduction: (U, V, channels).
    pub visual_feat: (usize, usize, usize),
    /// Seismic stream output before reduction: (T, channels).
    pub seismic_feat: (usize, usize),
    /// Reduced visual grid (U, V, N).
    pub grid: (usize, usize, usize),
    /// Reduced seismic sequence (T, M).
    pub seq: (usize, usize),
    /// Conv-head shapes, for the two conv-head variants.
    pub head_conv: Option<HeadConvDims>,
    /// Flattened input length, for the fully-connected-head variants.
    pub fc_in: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConvDims {
    pub input: (usize, usize, usize, usize),
    pub after_conv1: (usize, usize, usize, usize),
    pub after_conv2: (usize, usize, usize, usize),
}

fn same_out(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

fn head_valid_axis(
    layer: &str,
    axis: &str,
    len: usize,
    kernel: usize,
    stride: usize,
) -> Result<usize> {
    if len < kernel {
        return Err(Error::shape(
            "build_model",
            format!("{layer}: kernel {kernel} exceeds {axis} {len}"),
        ));
    }
    Ok((len - kernel) / stride + 1)
}

fn stream_dims_2d(
    name: &str,
    cfg: &StreamCfg,
    h: usize,
    w: usize,
) -> Result<(usize, usize, usize)> {
    if cfg.layers.is_empty() {
        return Err(Error::shape(
            "build_model",
            format!("{name} stream has no layers"),
        ));
    }
    let (mut h, mut w) = (h, w);
    let mut c = 1;
    for (i, layer) in cfg.layers.iter().enumerate() {
        check_layer(name, i, layer, h.min(w))?;
        h = same_out(h, layer.stride);
        w = same_out(w, layer.stride);
        c = layer.channels;
    }
    Ok((h, w, c))
}

fn stream_dims_1d(name: &str, cfg: &StreamCfg, len: usize) -> Result<(usize, usize)> {
    if cfg.layers.is_empty() {
        return Err(Error::shape(
            "build_model",
            format!("{name} stream has no layers"),
        ));
    }
    let mut l = len;
    let mut c = 1;
    for (i, layer) in cfg.layers.iter().enumerate() {
        check_layer(name, i, layer, l)?;
        l = same_out(l, layer.stride);
        c = layer.channels;
    }
    Ok((l, c))
}

fn check_layer(name: &str, i: usize, layer: &ConvLayerCfg, extent: usize) -> Result<()> {
    if layer.kernel == 0 || layer.stride == 0 || layer.channels == 0 {
        return Err(Error::shape(
            "build_model",
            format!("{name} conv{}: kernel, stride and channels must be positive", i + 1),
        ));
    }
    if extent == 0 {
        return Err(Error::shape(
            "build_model",
            format!("{name} conv{}: input already reduced to zero extent", i + 1),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    /// Declaration order is the checkpoint blob order.
    pub params: Vec<Parameter>,
}

impl Model {
    /// Builds and initializes a model. The spec's seed fully determines
    /// the parameters: He-style normal draws for convolution kernels and
    /// dense weights, constant 0.05 for biases, and a small uniform range
    /// for the reduction weights.
    pub fn build(spec: ModelSpec) -> Result<Model> {
        let dims = spec.dims()?;
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        let mut params = Vec::new();

        let push_conv = |params: &mut Vec<Parameter>,
                             rng: &mut ChaCha20Rng,
                             prefix: &str,
                             i: usize,
                             kernel_shape: Vec<usize>,
                             filters: usize| {
            let fan_in = kernel_shape.iter().product::<usize>() / filters;
            params.push(Parameter {
                name: format!("{prefix}.conv{}.kernel", i + 1),
                value: he_normal(rng, kernel_shape, fan_in),
            });
            params.push(Parameter {
                name: format!("{prefix}.conv{}.bias", i + 1),
                value: Tensor::full(&[filters], 0.05),
            });
        };

        if spec.variant.uses_visual() {
            let mut c_in = 1;
            for (i, layer) in spec.visual.layers.iter().enumerate() {
                push_conv(
                    &mut params,
                    &mut rng,
                    "visual",
                    i,
                    vec![layer.kernel, layer.kernel, c_in, layer.channels],
                    layer.channels,
                );
                c_in = layer.channels;
            }
            params.push(Parameter {
                name: "visual.reduce.weight".into(),
                value: reduce_uniform(&mut rng, spec.visual.reduce_to, c_in),
            });
        }
        if spec.variant.uses_seismic() {
            let mut c_in = 1;
            for (i, layer) in spec.seismic.layers.iter().enumerate() {
                push_conv(
                    &mut params,
                    &mut rng,
                    "seismic",
                    i,
                    vec![layer.kernel, c_in, layer.channels],
                    layer.channels,
                );
                c_in = layer.channels;
            }
            params.push(Parameter {
                name: "seismic.reduce.weight".into(),
                value: reduce_uniform(&mut rng, spec.seismic.reduce_to, c_in),
            });
        }
        if spec.variant.uses_conv_head() {
            let hd = dims.head_conv.as_ref().expect("conv head dims");
            let (f1, f2) = (spec.head.conv1_filters, spec.head.conv2_filters);
            push_conv(&mut params, &mut rng, "head", 0, vec![3, 3, 3, hd.input.3, f1], f1);
            push_conv(&mut params, &mut rng, "head", 1, vec![3, 3, 3, f1, f2], f2);
            params.push(Parameter {
                name: "head.out.weight".into(),
                value: he_normal(&mut rng, vec![2, f2], f2),
            });
        } else {
            let fc_in = dims.fc_in.expect("fc head dims");
            let hidden = spec.head.fc_hidden;
            params.push(Parameter {
                name: "head.fc1.weight".into(),
                value: he_normal(&mut rng, vec![hidden, fc_in], fc_in),
            });
            params.push(Parameter {
                name: "head.fc1.bias".into(),
                value: Tensor::full(&[hidden], 0.05),
            });
            params.push(Parameter {
                name: "head.out.weight".into(),
                value: he_normal(&mut rng, vec![2, hidden], hidden),
            });
        }
        params.push(Parameter {
            name: "head.out.bias".into(),
            value: Tensor::full(&[2], 0.05),
        });

        Ok(Model { spec, params })
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Copies every stream parameter (names under `visual.` or
    /// `seismic.`) whose name and shape match from `donor`, leaving head
    /// parameters at their own initialization. Returns the number of
    /// tensors copied. Used to initialize a fusion model's streams from
    /// trained single-modality checkpoints.
    pub fn adopt_params(&mut self, donor: &Model) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if p.name.starts_with("head.") {
                continue;
            }
            if let Some(d) = donor.params.iter().find(|d| d.name == p.name) {
                if d.value.shape == p.value.shape {
                    p.value = d.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Human-readable parameter table and intermediate shapes.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "variant: {}", self.spec.variant);
        if let Ok(d) = self.spec.dims() {
            if self.spec.variant.uses_visual() {
                let _ = writeln!(
                    out,
                    "visual stream: {}x{}x1 -> {:?} -> reduced {:?}",
                    self.spec.visual_h, self.spec.visual_w, d.visual_feat, d.grid
                );
            }
            if self.spec.variant.uses_seismic() {
                let _ = writeln!(
                    out,
                    "seismic stream: {}x1 -> {:?} -> reduced {:?}",
                    self.spec.seismic_len, d.seismic_feat, d.seq
                );
            }
            if let Some(h) = &d.head_conv {
                let _ = writeln!(
                    out,
                    "head: fused {:?} -> conv {:?} -> conv {:?} -> pooled [{}] -> dense 2",
                    h.input, h.after_conv1, h.after_conv2, h.after_conv2.3
                );
            }
            if let Some(n) = d.fc_in {
                let _ = writeln!(
                    out,
                    "head: flat [{n}] -> dense {} -> dense 2",
                    self.spec.head.fc_hidden
                );
            }
        }
        for p in &self.params {
            let _ = writeln!(out, "  {:<24} {:?} = {}", p.name, p.value.shape, p.value.numel());
        }
        let _ = writeln!(out, "total parameters: {}", self.n_params());
        out
    }

    fn wire<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        visual: &Tensor,
        seismic: &Tensor,
        over: Option<(usize, &'p Tensor)>,
    ) -> Result<Wired> {
        let mut w = ParamWiring {
            model: self,
            over,
            nodes: vec![None; self.params.len()],
        };
        let grid = if self.spec.variant.uses_visual() {
            Some(self.wire_visual(tape, &mut w, visual)?)
        } else {
            None
        };
        let seq = if self.spec.variant.uses_seismic() {
            Some(self.wire_seismic(tape, &mut w, seismic)?)
        } else {
            None
        };
        let logits = match self.spec.variant {
            Variant::VisualOnly => {
                let flat = tape.flatten(grid.unwrap());
                self.wire_fc_head(tape, &mut w, flat)?
            }
            Variant::SeismicOnly => {
                let flat = tape.flatten(seq.unwrap());
                self.wire_fc_head(tape, &mut w, flat)?
            }
            Variant::OpBilinear => {
                let fused = tape.bilinear_fuse(grid.unwrap(), seq.unwrap())?;
                self.wire_conv_head(tape, &mut w, fused)?
            }
            Variant::OpConcat => {
                let fused = tape.concat_index(grid.unwrap(), seq.unwrap())?;
                self.wire_conv_head(tape, &mut w, fused)?
            }
            Variant::BilinearFc => {
                let fused = tape.bilinear_fuse(grid.unwrap(), seq.unwrap())?;
                let flat = tape.flatten(fused);
                self.wire_fc_head(tape, &mut w, flat)?
            }
            Variant::ConcatFc => {
                let fused = tape.concat_index(grid.unwrap(), seq.unwrap())?;
                let flat = tape.flatten(fused);
                self.wire_fc_head(tape, &mut w, flat)?
            }
            Variant::OrderlessBilinear => {
                let pooled = tape.orderless_pool(grid.unwrap(), seq.unwrap())?;
                self.wire_fc_head(tape, &mut w, pooled)?
            }
        };
        let mut param_nodes = Vec::with_capacity(self.params.len());
        for (i, n) in w.nodes.into_iter().enumerate() {
            param_nodes.push(n.ok_or_else(|| {
                Error::precondition(
                    "forward",
                    format!("parameter {} was never wired", self.params[i].name),
                )
            })?);
        }
        Ok(Wired { logits, param_nodes })
    }

    fn wire_visual<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        w: &mut ParamWiring<'p>,
        visual: &Tensor,
    ) -> Result<NodeId> {
        if visual.shape != [self.spec.visual_h, self.spec.visual_w, 1] {
            return Err(Error::shape(
                "forward",
                format!(
                    "visual input {:?}, spec expects [{}, {}, 1]",
                    visual.shape, self.spec.visual_h, self.spec.visual_w
                ),
            ));
        }
        let mut x = tape.leaf(visual.clone());
        for (i, layer) in self.spec.visual.layers.iter().enumerate() {
            let k = w.node(tape, &format!("visual.conv{}.kernel", i + 1))?;
            let b = w.node(tape, &format!("visual.conv{}.bias", i + 1))?;
            x = tape.conv2d(x, k, layer.stride, Padding::Same)?;
            x = tape.bias_add(x, b)?;
            x = tape.relu(x);
        }
        let rw = w.node(tape, "visual.reduce.weight")?;
        let reduced = tape.index_linear(x, rw)?;
        Ok(tape.relu(reduced))
    }

    fn wire_seismic<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        w: &mut ParamWiring<'p>,
        seismic: &Tensor,
    ) -> Result<NodeId> {
        if seismic.shape != [self.spec.seismic_len, 1] {
            return Err(Error::shape(
                "forward",
                format!(
                    "seismic input {:?}, spec expects [{}, 1]",
                    seismic.shape, self.spec.seismic_len
                ),
            ));
        }
        let mut x = tape.leaf(seismic.clone());
        for (i, layer) in self.spec.seismic.layers.iter().enumerate() {
            let k = w.node(tape, &format!("seismic.conv{}.kernel", i + 1))?;
            let b = w.node(tape, &format!("seismic.conv{}.bias", i + 1))?;
            x = tape.conv1d(x, k, layer.stride, Padding::Same)?;
            x = tape.bias_add(x, b)?;
            x = tape.relu(x);
        }
        let rw = w.node(tape, "seismic.reduce.weight")?;
        let reduced = tape.index_linear(x, rw)?;
        Ok(tape.relu(reduced))
    }

    fn wire_conv_head<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        w: &mut ParamWiring<'p>,
        fused: NodeId,
    ) -> Result<NodeId> {
        let k1 = w.node(tape, "head.conv1.kernel")?;
        let b1 = w.node(tape, "head.conv1.bias")?;
        let mut x = tape.conv3d(fused, k1, 1, Padding::Valid)?;
        x = tape.bias_add(x, b1)?;
        x = tape.relu(x);
        let k2 = w.node(tape, "head.conv2.kernel")?;
        let b2 = w.node(tape, "head.conv2.bias")?;
        x = tape.conv3d(x, k2, 2, Padding::Valid)?;
        x = tape.bias_add(x, b2)?;
        x = tape.relu(x);
        let pooled = tape.global_avg_pool(x)?;
        let ow = w.node(tape, "head.out.weight")?;
        let ob = w.node(tape, "head.out.bias")?;
        tape.dense(pooled, ow, ob)
    }

    fn wire_fc_head<'p>(
        &'p self,
        tape: &mut Tape<'p>,
        w: &mut ParamWiring<'p>,
        flat: NodeId,
    ) -> Result<NodeId> {
        let w1 = w.node(tape, "head.fc1.weight")?;
        let b1 = w.node(tape, "head.fc1.bias")?;
        let mut x = tape.dense(flat, w1, b1)?;
        x = tape.relu(x);
        let ow = w.node(tape, "head.out.weight")?;
        let ob = w.node(tape, "head.out.bias")?;
        tape.dense(x, ow, ob)
    }

    /// Forward pass to logits.
    pub fn logits(&self, visual: &Tensor, seismic: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let wired = self.wire(&mut tape, visual, seismic, None)?;
        Ok(tape.value(wired.logits).clone())
    }

    /// Positive-class confidence: softmax(logits)[1].
    pub fn confidence(&self, visual: &Tensor, seismic: &Tensor) -> Result<f64> {
        let l = self.logits(visual, seismic)?;
        Ok(tape::softmax(&l.data)[1])
    }

    /// Cross-entropy loss of one sample.
    pub fn ce_loss(&self, visual: &Tensor, seismic: &Tensor, label: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let wired = self.wire(&mut tape, visual, seismic, None)?;
        let loss = tape.softmax_cross_entropy(wired.logits, label)?;
        Ok(tape.value(loss).item())
    }

    /// Cross-entropy loss and its gradient with respect to every
    /// parameter, in declaration order. The L1 term is not part of this
    /// tape; the trainer adds its subgradient analytically.
    pub fn loss_and_grads(
        &self,
        visual: &Tensor,
        seismic: &Tensor,
        label: usize,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let wired = self.wire(&mut tape, visual, seismic, None)?;
        let loss = tape.softmax_cross_entropy(wired.logits, label)?;
        let grads = tape.backward(loss)?;
        let out = wired
            .param_nodes
            .iter()
            .map(|&n| grads.get(n).clone())
            .collect();
        Ok((tape.value(loss).item(), out))
    }

    /// Cross-entropy loss with parameter `idx` replaced by `probe`;
    /// the finite-difference probe used by `gradcheck_model`.
    fn loss_with_override(
        &self,
        idx: usize,
        probe: &Tensor,
        visual: &Tensor,
        seismic: &Tensor,
        label: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let wired = self.wire(&mut tape, visual, seismic, Some((idx, probe)))?;
        let loss = tape.softmax_cross_entropy(wired.logits, label)?;
        Ok(tape.value(loss).item())
    }
}

struct Wired {
    logits: NodeId,
    param_nodes: Vec<NodeId>,
}

struct ParamWiring<'p> {
    model: &'p Model,
    over: Option<(usize, &'p Tensor)>,
    nodes: Vec<Option<NodeId>>,
}

impl<'p> ParamWiring<'p> {
    fn node(&mut self, tape: &mut Tape<'p>, name: &str) -> Result<NodeId> {
        let i = self.model.param_index(name).ok_or_else(|| {
            Error::precondition("forward", format!("model has no parameter named {name}"))
        })?;
        if let Some(n) = self.nodes[i] {
            return Ok(n);
        }
        let tensor = match self.over {
            Some((oi, probe)) if oi == i => probe,
            _ => &self.model.params[i].value,
        };
        let n = tape.param(tensor);
        self.nodes[i] = Some(n);
        Ok(n)
    }
}

fn he_normal(rng: &mut ChaCha20Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    Tensor {
        shape,
        data: (0..n).map(|_| dist.sample(rng)).collect(),
    }
}

fn reduce_uniform(rng: &mut ChaCha20Rng, n_out: usize, n_in: usize) -> Tensor {
    let bound = 1.0 / (n_in as f64).sqrt();
    Tensor {
        shape: vec![n_out, n_in],
        data: (0..n_out * n_in)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    }
}

// ── late fusion ──────────────────────────────────────────────────────

fn check_unit(op: &'static str, what: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::precondition(
            op,
            format!("{what} must lie in [0, 1], got {v}"),
        ));
    }
    Ok(())
}

/// Arithmetic mean of the two confidences.
pub fn average_fusion(conf_visual: f64, conf_seismic: f64) -> Result<f64> {
    check_unit("average_fusion", "visual confidence", conf_visual)?;
    check_unit("average_fusion", "seismic confidence", conf_seismic)?;
    Ok((conf_visual + conf_seismic) / 2.0)
}

/// Result of combining two modality opinions with Dempster's rule over
/// the frame {person present, person absent}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsFusion {
    pub m_positive: f64,
    pub m_negative: f64,
    pub m_ignorance: f64,
    /// Mass assigned to contradictory pairs before renormalization.
    pub conflict: f64,
    /// Pignistic probability of the positive class: m(P) + m(ignorance)/2.
    pub score: f64,
    /// Set when the two opinions contradict each other completely
    /// (conflict mass 1); the score is then defined as 0.5.
    pub total_conflict: bool,
}

/// Combines per-modality confidences under fixed per-modality
/// uncertainty. Each modality contributes masses m({P}) = c(1-u),
/// m({N}) = (1-c)(1-u), m(ignorance) = u; Dempster's rule multiplies and
/// renormalizes by 1-K where K is the conflict mass.
pub fn dempster_shafer_fuse(
    conf_visual: f64,
    u_visual: f64,
    conf_seismic: f64,
    u_seismic: f64,
) -> Result<DsFusion> {
    check_unit("dempster_shafer_fuse", "visual confidence", conf_visual)?;
    check_unit("dempster_shafer_fuse", "visual uncertainty", u_visual)?;
    check_unit("dempster_shafer_fuse", "seismic confidence", conf_seismic)?;
    check_unit("dempster_shafer_fuse", "seismic uncertainty", u_seismic)?;
    let (p1, n1, t1) = (
        conf_visual * (1.0 - u_visual),
        (1.0 - conf_visual) * (1.0 - u_visual),
        u_visual,
    );
    let (p2, n2, t2) = (
        conf_seismic * (1.0 - u_seismic),
        (1.0 - conf_seismic) * (1.0 - u_seismic),
        u_seismic,
    );
    let k = p1 * n2 + n1 * p2;
    let denom = 1.0 - k;
    if denom <= 0.0 {
        // only reachable at c in {0,1} with u = 0 on opposite classes;
        // report the vacuous belief, whose pignistic probability is 0.5
        return Ok(DsFusion {
            m_positive: 0.0,
            m_negative: 0.0,
            m_ignorance: 1.0,
            conflict: k,
            score: 0.5,
            total_conflict: true,
        });
    }
    let m_positive = (p1 * p2 + p1 * t2 + t1 * p2) / denom;
    let m_negative = (n1 * n2 + n1 * t2 + t1 * n2) / denom;
    let m_ignorance = (t1 * t2) / denom;
    Ok(DsFusion {
        m_positive,
        m_negative,
        m_ignorance,
        conflict: k,
        score: m_positive + m_ignorance / 2.0,
        total_conflict: false,
    })
}

// ── model-level gradient check ───────────────────────────────────────

/// Worst finite-difference relative error per parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Central-difference check of the analytic gradient for every
/// coordinate of every parameter, over `n_samples` well-conditioned
/// random samples.
///
/// A sample is used only when (a) no ReLU pre-activation sits within
/// 1e-3 of its kink, so the epsilon-ball around the evaluation point is
/// smooth, and (b) no parameter coordinate has a nonzero gradient below
/// 2e-6, whose finite difference would drown in cancellation noise
/// against the fixed denominator floor. Checks run on the cross-entropy
/// loss; the L1 term's subgradient is exercised separately.
pub fn gradcheck_model(spec: &ModelSpec, n_samples: usize, seed: u64) -> Result<Vec<ParamCheck>> {
    const RELU_MARGIN: f64 = 1e-3;
    const GRAD_FLOOR: f64 = 2e-6;
    const MAX_CANDIDATES: usize = 64;

    let model = Model::build(spec.clone())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let mut accepted: Vec<(Tensor, Tensor, usize)> = Vec::new();
    for attempt in 0..MAX_CANDIDATES {
        if accepted.len() == n_samples {
            break;
        }
        let visual = Tensor {
            shape: vec![spec.visual_h, spec.visual_w, 1],
            data: (0..spec.visual_h * spec.visual_w)
                .map(|_| rng.random_range(0.05..0.9))
                .collect(),
        };
        let seismic = Tensor {
            shape: vec![spec.seismic_len, 1],
            data: (0..spec.seismic_len)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        };
        let label = attempt % 2;

        let mut tape = Tape::new();
        let wired = model.wire(&mut tape, &visual, &seismic, None)?;
        let loss = tape.softmax_cross_entropy(wired.logits, label)?;
        if tape.min_relu_input_abs() < RELU_MARGIN {
            continue;
        }
        let grads = tape.backward(loss)?;
        let conditioned = wired.param_nodes.iter().all(|&n| {
            grads
                .get(n)
                .data
                .iter()
                .all(|&g| g == 0.0 || g.abs() >= GRAD_FLOOR)
        });
        if conditioned {
            accepted.push((visual, seismic, label));
        }
    }
    if accepted.len() < n_samples {
        return Err(Error::precondition(
            "gradcheck",
            format!(
                "found only {} of {} well-conditioned samples in {} draws",
                accepted.len(),
                n_samples,
                MAX_CANDIDATES
            ),
        ));
    }

    let mut checks: Vec<ParamCheck> = model
        .params
        .iter()
        .map(|p| ParamCheck {
            name: p.name.clone(),
            max_rel_err: 0.0,
            coords: p.value.numel(),
        })
        .collect();
    for (visual, seismic, label) in &accepted {
        let (_, analytic) = model.loss_and_grads(visual, seismic, *label)?;
        for (i, check) in checks.iter_mut().enumerate() {
            let err = finite_difference_check(
                |probe| model.loss_with_override(i, probe, visual, seismic, *label),
                &model.params[i].value,
                &analytic[i],
                FD_EPSILON,
            )?;
            if err > check.max_rel_err {
                check.max_rel_err = err;
            }
        }
    }
    Ok(checks)
}
