//! Graph convolution, graph attention, dilated temporal convolution and ASPP.
//!
//! Every layer consumes a time-major stack `[t·n × ch]`: rows `τ·n .. (τ+1)·n`
//! hold the `n` node vectors of time step `τ`. Graph layers act on each time
//! step independently with the same weights.

use std::rc::Rc;

use crate::graphgen::SpatialGraph;
use crate::Scalar;

use super::{NnError, Tensor, Var};

/// `(src, dst, base edge id)` per replicated edge.
type EdgeLists = (Rc<[usize]>, Rc<[usize]>, Rc<[usize]>);

pub const LN_EPS: f64 = 1e-5;
pub const ASPP_DILATIONS: [usize; 3] = [1, 2, 4];

/// Nonlinearity applied at the end of a graph layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Identity => x,
        }
    }
}

/// Static per-graph data shared by all graph layers: edge lists, edge
/// feature rows, and the degree normalization constants.
#[derive(Debug, Clone)]
pub struct GraphContext<T> {
    num_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    /// `[E × c]`
    edge_features: Tensor<T>,
    /// `1 / (√(deg(i)+1) · √(deg(j)+1))` per edge `j → i`.
    edge_norm: Vec<T>,
    /// `1 / (deg(i)+1)`
    self_norm: Vec<T>,
}

impl<T: Scalar> GraphContext<T> {
    pub fn new(graph: &SpatialGraph) -> Self {
        let edges: Vec<(usize, usize)> = graph.edges.iter().map(|&(s, d)| (s as usize, d as usize)).collect();
        let feats = Tensor::new(
            vec![edges.len(), graph.edge_dim()],
            graph.edge_features.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("graph edge features are [E × c]");
        Self::from_parts(graph.num_nodes, &edges, feats).expect("graph is consistent")
    }

    /// `edges` are `(src, dst)`; `edge_features` is `[E × c]`.
    pub fn from_parts(num_nodes: usize, edges: &[(usize, usize)], edge_features: Tensor<T>) -> Result<Self, NnError> {
        if edge_features.shape().len() != 2 || edge_features.shape()[0] != edges.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} edges with edge features {:?}",
                edges.len(),
                edge_features.shape()
            )));
        }
        if edges.iter().any(|&(s, d)| s >= num_nodes || d >= num_nodes) {
            return Err(NnError::ShapeMismatch(format!("edge endpoint outside {num_nodes} nodes")));
        }
        let mut deg = vec![0usize; num_nodes];
        for &(_, d) in edges {
            deg[d] += 1;
        }
        let edge_norm = edges
            .iter()
            .map(|&(s, d)| T::of(1.0 / (((deg[d] + 1) as f64).sqrt() * ((deg[s] + 1) as f64).sqrt())))
            .collect();
        let self_norm = deg.iter().map(|&k| T::of(1.0 / (k + 1) as f64)).collect();
        Ok(GraphContext {
            num_nodes,
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
            edge_features,
            edge_norm,
            self_norm,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    pub fn edge_features(&self) -> &Tensor<T> {
        &self.edge_features
    }

    fn steps(&self, x: &Var<'_, T>) -> Result<usize, NnError> {
        let rows = x.value().rows();
        if self.num_nodes == 0 || !rows.is_multiple_of(self.num_nodes) {
            return Err(NnError::ShapeMismatch(format!(
                "{rows} rows is not a whole number of {}-node time steps",
                self.num_nodes
            )));
        }
        Ok(rows / self.num_nodes)
    }

    /// Edge lists repeated over `t` time steps: `(src, dst, base edge id)`.
    fn replicated(&self, t: usize) -> EdgeLists {
        let (n, e) = (self.num_nodes, self.num_edges());
        let mut src = Vec::with_capacity(t * e);
        let mut dst = Vec::with_capacity(t * e);
        let mut base = Vec::with_capacity(t * e);
        for tau in 0..t {
            for k in 0..e {
                src.push(tau * n + self.src[k]);
                dst.push(tau * n + self.dst[k]);
                base.push(k);
            }
        }
        (src.into(), dst.into(), base.into())
    }
}

fn check_rows<T: Scalar>(w: &Var<'_, T>, rows: usize, cols: Option<usize>, what: &str) -> Result<(), NnError> {
    let v = w.value();
    if v.rows() != rows || cols.is_some_and(|c| v.cols() != c) {
        return Err(NnError::ShapeMismatch(format!("{what} has shape {:?}", v.shape())));
    }
    Ok(())
}

/// Degree-normalized graph convolution with learned scalar edge weights.
#[derive(Debug, Clone, Copy)]
pub struct GcnLayer<'t, T> {
    /// `[in × out]`
    pub theta: Var<'t, T>,
    /// `[c × 1]`
    pub theta_e: Var<'t, T>,
    pub activation: Activation,
}

/// `x'_i = σ(Σ_{j ∈ N(i) ∪ {i}} s_ji / c_ji · x_j Θ)` with `s_ji = y_ji Θ_e`,
/// `s_ii = 1` and `c_ji = √(deg(i)+1) · √(deg(j)+1)`.
pub fn gcn_forward<'t, T: Scalar>(
    layer: &GcnLayer<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Var<'t, T>, NnError> {
    let t = ctx.steps(&x)?;
    let rows = t * ctx.num_nodes;
    check_rows(&layer.theta_e, ctx.edge_dim(), Some(1), "GCN Θ_e")?;
    let tape = x.tape();

    let h = x.matmul(layer.theta)?;
    let self_w: Vec<T> = (0..t).flat_map(|_| ctx.self_norm.iter().copied()).collect();
    let own = h.mul_col(tape.constant(Tensor::matrix(rows, 1, self_w)?))?;

    let y = tape.constant(ctx.edge_features.clone());
    let norm = tape.constant(Tensor::matrix(ctx.num_edges(), 1, ctx.edge_norm.clone())?);
    let coef = y.matmul(layer.theta_e)?.mul(norm)?;
    let (src, dst, base) = ctx.replicated(t);
    let msgs = h.gather_rows(src)?.mul_col(coef.gather_rows(base)?)?;
    let agg = msgs.scatter_add_rows(dst, rows)?;

    Ok(layer.activation.apply(own.add(agg)?))
}

/// Edge-aware graph attention; multiple heads are averaged.
#[derive(Debug, Clone)]
pub struct GatLayer<'t, T> {
    pub heads: Vec<GatHead<'t, T>>,
    /// LeakyReLU slope of the attention score.
    pub slope: f64,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
pub struct GatHead<'t, T> {
    /// `[in × out]`
    pub theta: Var<'t, T>,
    /// `[c × e_dim]`
    pub theta_e: Var<'t, T>,
    /// `[out × 1]`, applied to the receiving node `i`.
    pub a_s: Var<'t, T>,
    /// `[out × 1]`, applied to the neighbor `j`.
    pub a_t: Var<'t, T>,
    /// `[e_dim × 1]`
    pub a_e: Var<'t, T>,
}

/// Attention edges over `t` time steps: every graph edge plus one self-loop
/// per node. `(src, dst, edge-term row)` where row 0 is the zero self-loop term.
fn attention_edges<T: Scalar>(ctx: &GraphContext<T>, t: usize) -> EdgeLists {
    let (n, e) = (ctx.num_nodes, ctx.num_edges());
    let cap = t * (e + n);
    let (mut src, mut dst, mut row) = (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
    for tau in 0..t {
        for k in 0..e {
            src.push(tau * n + ctx.src[k]);
            dst.push(tau * n + ctx.dst[k]);
            row.push(k + 1);
        }
        for i in 0..n {
            src.push(tau * n + i);
            dst.push(tau * n + i);
            row.push(0);
        }
    }
    (src.into(), dst.into(), row.into())
}

struct HeadPass<'t, T> {
    h: Var<'t, T>,
    alpha: Var<'t, T>,
}

fn gat_head<'t, T: Scalar>(
    head: &GatHead<'t, T>,
    slope: f64,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
    edges: &EdgeLists,
) -> Result<HeadPass<'t, T>, NnError> {
    let tape = x.tape();
    let h = x.matmul(head.theta)?;
    let out = h.value().cols();
    check_rows(&head.a_s, out, Some(1), "GAT a_s")?;
    check_rows(&head.a_t, out, Some(1), "GAT a_t")?;
    check_rows(&head.theta_e, ctx.edge_dim(), None, "GAT Θ_e")?;

    let score_i = h.matmul(head.a_s)?;
    let score_j = h.matmul(head.a_t)?;
    let y = tape.constant(ctx.edge_features.clone());
    let edge_term = y.matmul(head.theta_e)?.matmul(head.a_e)?.pad_rows(1);

    let (src, dst, row) = edges;
    let score = score_i
        .gather_rows(dst.clone())?
        .add(score_j.gather_rows(src.clone())?)?
        .add(edge_term.gather_rows(row.clone())?)?
        .leaky_relu(T::of(slope));
    let alpha = score.segment_softmax(dst.clone())?;
    Ok(HeadPass { h, alpha })
}

/// `α_ij = softmax_j LeakyReLU(a_s·Θx_i + a_t·Θx_j + a_e·e_ij)` with
/// `e_ij = y_ij Θ_e`, and `x'_i = σ(Σ_j α_ij Θx_j)`.
pub fn gat_forward<'t, T: Scalar>(
    layer: &GatLayer<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Var<'t, T>, NnError> {
    if layer.heads.is_empty() {
        return Err(NnError::ShapeMismatch("GAT layer without heads".into()));
    }
    let t = ctx.steps(&x)?;
    let rows = t * ctx.num_nodes;
    let edges = attention_edges(ctx, t);
    let mut sum: Option<Var<'t, T>> = None;
    for head in &layer.heads {
        let pass = gat_head(head, layer.slope, x, ctx, &edges)?;
        let msgs = pass.h.gather_rows(edges.0.clone())?.mul_col(pass.alpha)?;
        let agg = msgs.scatter_add_rows(edges.1.clone(), rows)?;
        sum = Some(match sum {
            None => agg,
            Some(s) => s.add(agg)?,
        });
    }
    let mut out = sum.expect("at least one head");
    if layer.heads.len() > 1 {
        out = out.scale(T::of(1.0 / layer.heads.len() as f64));
    }
    Ok(layer.activation.apply(out))
}

/// Attention coefficients of the first head as `(src, dst, α)` triples,
/// self-loops included, for the first time step of `x`.
pub fn gat_attention<'t, T: Scalar>(
    layer: &GatLayer<'t, T>,
    x: Var<'t, T>,
    ctx: &GraphContext<T>,
) -> Result<Vec<(usize, usize, T)>, NnError> {
    let head = layer
        .heads
        .first()
        .ok_or_else(|| NnError::ShapeMismatch("GAT layer without heads".into()))?;
    let t = ctx.steps(&x)?;
    let edges = attention_edges(ctx, t);
    let pass = gat_head(head, layer.slope, x, ctx, &edges)?;
    let alpha = pass.alpha.value();
    let per_step = ctx.num_edges() + ctx.num_nodes;
    Ok((0..per_step)
        .map(|k| (edges.0[k], edges.1[k], alpha.data()[k]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// No padding; the output loses `r·(K−1)` time steps.
    Valid,
    /// `r·(K−1)` zero steps are prepended so the length is preserved.
    Causal,
}

/// Dilated convolution along time, shared across nodes.
#[derive(Debug, Clone, Copy)]
pub struct TemporalConv<'t, T> {
    /// `[K·in × out]`: block `k` (rows `k·in .. (k+1)·in`) is the tap `Θ[k]`.
    pub theta: Var<'t, T>,
    pub kernel: usize,
    pub dilation: usize,
    /// Optional `[out]` bias.
    pub bias: Option<Var<'t, T>>,
}

/// `y[τ] = Σ_k x[τ + r·k] Θ[k]` over an `n`-node time-major stack.
pub fn temporal_conv<'t, T: Scalar>(
    conv: &TemporalConv<'t, T>,
    x: Var<'t, T>,
    num_nodes: usize,
    mode: ConvMode,
) -> Result<Var<'t, T>, NnError> {
    let xv = x.value();
    let (rows, ch) = (xv.rows(), xv.cols());
    if num_nodes == 0 || rows % num_nodes != 0 {
        return Err(NnError::ShapeMismatch(format!("{rows} rows for {num_nodes} nodes")));
    }
    if conv.kernel == 0 || conv.dilation == 0 {
        return Err(NnError::ShapeMismatch("kernel and dilation must be positive".into()));
    }
    check_rows(&conv.theta, conv.kernel * ch, None, "temporal conv Θ")?;
    let t = rows / num_nodes;
    let span = conv.dilation * (conv.kernel - 1);
    let (input, out_t) = match mode {
        ConvMode::Valid => {
            if t <= span {
                return Err(NnError::WindowTooSmall {
                    required: span + 1,
                    got: t,
                });
            }
            (x, t - span)
        }
        ConvMode::Causal => (if span > 0 { x.pad_rows(span * num_nodes) } else { x }, t),
    };
    let mut acc: Option<Var<'t, T>> = None;
    for k in 0..conv.kernel {
        let tap = input
            .slice_rows(conv.dilation * k * num_nodes, out_t * num_nodes)?
            .matmul(conv.theta.slice_rows(k * ch, ch)?)?;
        acc = Some(match acc {
            None => tap,
            Some(a) => a.add(tap)?,
        });
    }
    let y = acc.expect("kernel ≥ 1");
    match conv.bias {
        Some(b) => y.add_row(b),
        None => Ok(y),
    }
}

/// Parallel 1×1 and dilated K=2 branches, concatenated and projected.
#[derive(Debug, Clone)]
pub struct AsppBlock<'t, T> {
    pub pointwise: TemporalConv<'t, T>,
    pub atrous: Vec<TemporalConv<'t, T>>,
    pub output: TemporalConv<'t, T>,
    /// Layer-normalize the concatenation before the output projection.
    pub inner_norm: bool,
}

/// Length-preserving multi-scale temporal block.
pub fn aspp_forward<'t, T: Scalar>(
    block: &AsppBlock<'t, T>,
    x: Var<'t, T>,
    num_nodes: usize,
) -> Result<Var<'t, T>, NnError> {
    let mut branches = vec![temporal_conv(&block.pointwise, x, num_nodes, ConvMode::Causal)?];
    for conv in &block.atrous {
        branches.push(temporal_conv(conv, x, num_nodes, ConvMode::Causal)?);
    }
    let mut cat = Var::concat_cols(&branches)?;
    if block.inner_norm {
        cat = layer_norm(cat);
    }
    temporal_conv(&block.output, cat, num_nodes, ConvMode::Causal)
}

/// Per-row normalization over the feature axis.
pub fn layer_norm<T: Scalar>(x: Var<'_, T>) -> Var<'_, T> {
    x.layer_norm(LN_EPS)
}
