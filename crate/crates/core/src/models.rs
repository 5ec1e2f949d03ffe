//! The three spatio-temporal architectures, all ending in per-node 2-class logits.
//!
//! * STGCN: `blocks ×` (temporal conv → graph conv per step → temporal conv → LN).
//! * ASTGCN: ASPP → LN → `gcn_layers ×` (graph conv → LN).
//! * ASTGAT: as ASTGCN with `x + GAT(x)` residual stages.
//!
//! Every model finishes with the same head: a temporal conv whose kernel spans
//! the remaining window (collapsing time to 1), ReLU, and a linear map to 2.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    aspp_forward, gat_forward, gcn_forward, glorot_uniform, layer_norm, temporal_conv, Activation, AsppBlock,
    Bound, ConvMode, GatHead, GatLayer, GcnLayer, GraphContext, NnError, ParamStore, Tape, TemporalConv, Tensor,
    Var, ASPP_DILATIONS,
};
use crate::waveform::FeatureTensor;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("window too small: need at least {required} time steps, got {got}")]
    WindowTooSmall { required: usize, got: usize },
    #[error("invalid model spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Stgcn,
    Astgcn,
    Astgat,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Stgcn, Arch::Astgcn, Arch::Astgat];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Stgcn => "stgcn",
            Arch::Astgcn => "astgcn",
            Arch::Astgat => "astgat",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stgcn" => Ok(Arch::Stgcn),
            "astgcn" => Ok(Arch::Astgcn),
            "astgat" => Ok(Arch::Astgat),
            other => Err(ModelError::SpecInvalid(format!("unknown architecture `{other}`"))),
        }
    }
}

fn default_hidden() -> usize {
    16
}

/// Architecture hyperparameters. Everything except `arch`, `time_win_size`
/// and `edge_dim` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub time_win_size: usize,
    /// Width `c` of the graph's edge vectors.
    pub edge_dim: usize,
    #[serde(default = "ModelSpec::default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "ModelSpec::default_blocks")]
    pub stgcn_blocks: usize,
    #[serde(default = "ModelSpec::default_graph_layers")]
    pub graph_layers: usize,
    #[serde(default = "ModelSpec::default_dilations")]
    pub aspp_dilations: Vec<usize>,
    /// `false` replaces the ASPP block (and its norms) by the identity.
    #[serde(default = "ModelSpec::yes")]
    pub aspp: bool,
    /// Layer norm between the ASPP concatenation and its output conv.
    #[serde(default = "ModelSpec::yes")]
    pub aspp_inner_norm: bool,
    /// Layer norm after the ASPP output conv.
    #[serde(default = "ModelSpec::yes")]
    pub aspp_output_norm: bool,
    #[serde(default = "ModelSpec::default_heads")]
    pub heads: usize,
    /// Width of the projected GAT edge vectors.
    #[serde(default = "ModelSpec::default_gat_edge_dim")]
    pub gat_edge_dim: usize,
    #[serde(default = "ModelSpec::default_slope")]
    pub gat_slope: f64,
    #[serde(default = "ModelSpec::yes")]
    pub residual: bool,
}

impl ModelSpec {
    fn default_in_channels() -> usize {
        1
    }
    fn default_blocks() -> usize {
        2
    }
    fn default_graph_layers() -> usize {
        3
    }
    fn default_dilations() -> Vec<usize> {
        ASPP_DILATIONS.to_vec()
    }
    fn yes() -> bool {
        true
    }
    fn default_heads() -> usize {
        1
    }
    fn default_gat_edge_dim() -> usize {
        8
    }
    fn default_slope() -> f64 {
        0.2
    }

    pub fn new(arch: Arch, time_win_size: usize, edge_dim: usize) -> Self {
        ModelSpec {
            arch,
            time_win_size,
            edge_dim,
            in_channels: Self::default_in_channels(),
            hidden: default_hidden(),
            stgcn_blocks: Self::default_blocks(),
            graph_layers: Self::default_graph_layers(),
            aspp_dilations: Self::default_dilations(),
            aspp: true,
            aspp_inner_norm: true,
            aspp_output_norm: true,
            heads: Self::default_heads(),
            gat_edge_dim: Self::default_gat_edge_dim(),
            gat_slope: Self::default_slope(),
            residual: true,
        }
    }

    /// Smallest window the architecture accepts.
    pub fn min_window(&self) -> usize {
        match self.arch {
            Arch::Stgcn => 2 * self.stgcn_blocks + 1,
            Arch::Astgcn | Arch::Astgat => 1,
        }
    }

    /// Time steps left for the head's kernel.
    pub fn head_kernel(&self) -> usize {
        match self.arch {
            Arch::Stgcn => self.time_win_size.saturating_sub(2 * self.stgcn_blocks),
            Arch::Astgcn | Arch::Astgat => self.time_win_size,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |m: &str| Err(ModelError::SpecInvalid(m.to_string()));
        if self.time_win_size < self.min_window() {
            return Err(ModelError::WindowTooSmall {
                required: self.min_window(),
                got: self.time_win_size,
            });
        }
        if self.hidden == 0 || self.in_channels == 0 || self.edge_dim == 0 {
            return invalid("widths must be positive");
        }
        if self.arch == Arch::Astgat && (self.heads == 0 || self.gat_edge_dim == 0) {
            return invalid("GAT needs at least one head and a positive edge width");
        }
        if self.aspp_dilations.contains(&0) {
            return invalid("ASPP dilations must be positive");
        }
        if self.arch == Arch::Astgat && self.residual && !self.aspp && self.in_channels != self.hidden && self.graph_layers > 0 {
            return invalid("residual GAT stage needs equal input and output widths; enable ASPP or set in_channels = hidden");
        }
        Ok(())
    }

    /// Width feeding the first graph layer of the ASPP-based models.
    fn graph_input_width(&self) -> usize {
        if self.aspp {
            self.hidden
        } else {
            self.in_channels
        }
    }
}

/// Glorot-initialized parameters for `spec`, deterministic in `seed`.
pub fn init_params<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ParamStore<T>, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let mut dense = |p: &mut ParamStore<T>, name: String, rows: usize, cols: usize| {
        p.insert(name, glorot_uniform(&mut rng, &[rows, cols], rows, cols));
    };
    let (h, c) = (spec.hidden, spec.edge_dim);
    match spec.arch {
        Arch::Stgcn => {
            let mut width = spec.in_channels;
            for b in 0..spec.stgcn_blocks {
                dense(&mut p, format!("block{b}.tc1.theta"), 2 * width, h);
                dense(&mut p, format!("block{b}.gcn.theta"), h, h);
                dense(&mut p, format!("block{b}.gcn.theta_e"), c, 1);
                dense(&mut p, format!("block{b}.tc2.theta"), 2 * h, h);
                width = h;
            }
        }
        Arch::Astgcn | Arch::Astgat => {
            if spec.aspp {
                let k = spec.in_channels;
                dense(&mut p, "aspp.pointwise.theta".into(), k, h);
                for &r in &spec.aspp_dilations {
                    dense(&mut p, format!("aspp.atrous{r}.theta"), 2 * k, h);
                }
                let cat = h * (1 + spec.aspp_dilations.len());
                dense(&mut p, "aspp.output.theta".into(), cat, h);
            }
            let mut width = spec.graph_input_width();
            for l in 0..spec.graph_layers {
                if spec.arch == Arch::Astgcn {
                    dense(&mut p, format!("gcn{l}.theta"), width, h);
                    dense(&mut p, format!("gcn{l}.theta_e"), c, 1);
                } else {
                    for k in 0..spec.heads {
                        let e = spec.gat_edge_dim;
                        dense(&mut p, format!("gat{l}.h{k}.theta"), width, h);
                        dense(&mut p, format!("gat{l}.h{k}.theta_e"), c, e);
                        dense(&mut p, format!("gat{l}.h{k}.a_s"), h, 1);
                        dense(&mut p, format!("gat{l}.h{k}.a_t"), h, 1);
                        dense(&mut p, format!("gat{l}.h{k}.a_e"), e, 1);
                    }
                }
                width = h;
            }
        }
    }
    let head_in = match spec.arch {
        Arch::Stgcn if spec.stgcn_blocks == 0 => spec.in_channels,
        Arch::Stgcn => h,
        _ if spec.graph_layers == 0 => spec.graph_input_width(),
        _ => h,
    };
    dense(&mut p, "head.tc.theta".into(), spec.head_kernel() * head_in, h);
    dense(&mut p, "head.linear.weight".into(), h, 2);
    p.insert("head.linear.bias", Tensor::zeros(&[2]));
    Ok(p)
}

/// Feature window as a time-major `[t·n × 1]` constant.
pub fn feature_input<'t, T: Scalar>(tape: &'t Tape<T>, x: &FeatureTensor<T>) -> Var<'t, T> {
    let rows = x.time_win_size * x.num_nodes;
    tape.constant(Tensor::matrix(rows, 1, x.data.clone()).expect("feature tensor is [t·n × 1]"))
}

fn conv<'t, T: Scalar>(p: &Bound<'t, T>, name: &str, kernel: usize, dilation: usize) -> Result<TemporalConv<'t, T>, NnError> {
    Ok(TemporalConv {
        theta: p.get(&format!("{name}.theta"))?,
        kernel,
        dilation,
        bias: None,
    })
}

fn gcn<'t, T: Scalar>(p: &Bound<'t, T>, name: &str) -> Result<GcnLayer<'t, T>, NnError> {
    Ok(GcnLayer {
        theta: p.get(&format!("{name}.theta"))?,
        theta_e: p.get(&format!("{name}.theta_e"))?,
        activation: Activation::Relu,
    })
}

fn gat<'t, T: Scalar>(spec: &ModelSpec, p: &Bound<'t, T>, l: usize) -> Result<GatLayer<'t, T>, NnError> {
    let heads = (0..spec.heads)
        .map(|k| {
            let g = |s: &str| p.get(&format!("gat{l}.h{k}.{s}"));
            Ok(GatHead {
                theta: g("theta")?,
                theta_e: g("theta_e")?,
                a_s: g("a_s")?,
                a_t: g("a_t")?,
                a_e: g("a_e")?,
            })
        })
        .collect::<Result<_, NnError>>()?;
    Ok(GatLayer {
        heads,
        slope: spec.gat_slope,
        activation: Activation::Relu,
    })
}

fn check_input<T: Scalar>(spec: &ModelSpec, x: &Var<'_, T>, ctx: &GraphContext<T>) -> Result<(), ModelError> {
    spec.validate()?;
    let v = x.value();
    let n = ctx.num_nodes();
    if ctx.edge_dim() != spec.edge_dim {
        return Err(NnError::ShapeMismatch(format!(
            "graph edge width {} but spec expects {}",
            ctx.edge_dim(),
            spec.edge_dim
        ))
        .into());
    }
    if v.cols() != spec.in_channels || n == 0 || !v.rows().is_multiple_of(n) {
        return Err(NnError::ShapeMismatch(format!("input {:?} for {n} nodes", v.shape())).into());
    }
    let t = v.rows() / n;
    if t < spec.min_window() {
        return Err(ModelError::WindowTooSmall {
            required: spec.min_window(),
            got: t,
        });
    }
    if t != spec.time_win_size {
        return Err(NnError::ShapeMismatch(format!("input has {t} time steps, spec {}", spec.time_win_size)).into());
    }
    Ok(())
}

fn head<'t, T: Scalar>(p: &Bound<'t, T>, x: Var<'t, T>, n: usize) -> Result<Var<'t, T>, ModelError> {
    let k = x.value().rows() / n;
    let collapsed = temporal_conv(&conv(p, "head.tc", k, 1)?, x, n, ConvMode::Valid)?.relu();
    Ok(collapsed
        .matmul(p.get("head.linear.weight")?)?
        .add_row(p.get("head.linear.bias")?)?)
}

/// Two sandwich blocks, each shrinking time by 2, then the head.
pub fn stgcn_forward<'t, T: Scalar>(
    spec: &ModelSpec,
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Var<'t, T>, ModelError> {
    check_input(spec, &x, ctx)?;
    let n = ctx.num_nodes();
    let mut h = x;
    for b in 0..spec.stgcn_blocks {
        h = temporal_conv(&conv(p, &format!("block{b}.tc1"), 2, 1)?, h, n, ConvMode::Valid)?;
        h = gcn_forward(&gcn(p, &format!("block{b}.gcn"))?, h, ctx)?;
        h = temporal_conv(&conv(p, &format!("block{b}.tc2"), 2, 1)?, h, n, ConvMode::Valid)?;
        h = layer_norm(h);
    }
    head(p, h, n)
}

fn aspp_stage<'t, T: Scalar>(spec: &ModelSpec, p: &Bound<'t, T>, x: Var<'t, T>, n: usize) -> Result<Var<'t, T>, ModelError> {
    if !spec.aspp {
        return Ok(x);
    }
    let block = AsppBlock {
        pointwise: conv(p, "aspp.pointwise", 1, 1)?,
        atrous: spec
            .aspp_dilations
            .iter()
            .map(|&r| conv(p, &format!("aspp.atrous{r}"), 2, r))
            .collect::<Result<_, _>>()?,
        output: conv(p, "aspp.output", 1, 1)?,
        inner_norm: spec.aspp_inner_norm,
    };
    let y = aspp_forward(&block, x, n)?;
    Ok(if spec.aspp_output_norm { layer_norm(y) } else { y })
}

/// ASPP, stacked graph convolutions with layer norm, head.
pub fn astgcn_forward<'t, T: Scalar>(
    spec: &ModelSpec,
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Var<'t, T>, ModelError> {
    check_input(spec, &x, ctx)?;
    let n = ctx.num_nodes();
    let mut h = aspp_stage(spec, p, x, n)?;
    for l in 0..spec.graph_layers {
        h = layer_norm(gcn_forward(&gcn(p, &format!("gcn{l}"))?, h, ctx)?);
    }
    head(p, h, n)
}

/// ASPP, residual graph-attention stages with layer norm, head.
pub fn astgat_forward<'t, T: Scalar>(
    spec: &ModelSpec,
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Var<'t, T>, ModelError> {
    check_input(spec, &x, ctx)?;
    let n = ctx.num_nodes();
    let mut h = aspp_stage(spec, p, x, n)?;
    for l in 0..spec.graph_layers {
        let g = gat_forward(&gat(spec, p, l)?, h, ctx)?;
        h = layer_norm(if spec.residual { h.add(g)? } else { g });
    }
    head(p, h, n)
}

/// Dispatches on `spec.arch`; returns `[n × 2]` logits.
pub fn forward<'t, T: Scalar>(
    spec: &ModelSpec,
    p: &Bound<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Var<'t, T>, ModelError> {
    match spec.arch {
        Arch::Stgcn => stgcn_forward(spec, p, x, ctx),
        Arch::Astgcn => astgcn_forward(spec, p, x, ctx),
        Arch::Astgat => astgat_forward(spec, p, x, ctx),
    }
}

/// A spec with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&spec, seed)?;
        Ok(Model { spec, params })
    }

    /// Inference-only forward pass; returns `[n × 2]` logits.
    pub fn logits(&self, x: &FeatureTensor<T>, ctx: &GraphContext<T>) -> Result<Tensor<T>, ModelError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let out = forward(&self.spec, &p, feature_input(&tape, x), ctx)?;
        let v = out.value();
        Ok((*v).clone())
    }

    /// Per-node class: `true` = detected.
    pub fn predict(&self, x: &FeatureTensor<T>, ctx: &GraphContext<T>) -> Result<Vec<bool>, ModelError> {
        let l = self.logits(x, ctx)?;
        Ok((0..l.rows()).map(|i| l.at(i, 1) > l.at(i, 0)).collect())
    }

    /// Checkpoint directory: `spec.json` plus the parameter files.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        self.params.save(dir)?;
        let json = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        fs::write(dir.join("spec.json"), json).map_err(|e| NnError::Io(format!("{}: {e}", dir.display())))?;
        Ok(())
    }

    /// Loads a checkpoint and checks its tensors against the spec's layout.
    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let path = dir.join("spec.json");
        let text = fs::read_to_string(&path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
        let spec: ModelSpec =
            serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(format!("spec.json: {e}")))?;
        let params = ParamStore::<T>::load(dir)?;
        let layout = init_params::<T>(&spec, 0)?;
        let shapes = |s: &ParamStore<T>| -> Vec<(String, Vec<usize>)> {
            s.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect()
        };
        if shapes(&params) != shapes(&layout) {
            return Err(NnError::Checkpoint("parameters do not match spec.json".into()).into());
        }
        Ok(Model { spec, params })
    }
}
