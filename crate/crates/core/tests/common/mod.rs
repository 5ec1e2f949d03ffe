//! Independent reference implementations shared by the integration tests.
//!
//! Everything here works on plain `Vec`s in `f64` and deliberately avoids the
//! library's tape, kernels and simulator so the tests compare two separate
//! derivations of the same definition.

#![allow(dead_code)]

use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seugnn_core::faultsim::{run_campaign, simulate_golden, FaultLabelSet, FaultSite, Outcome, Stimulus};
use seugnn_core::models::{feature_input, forward, Arch, Model, ModelSpec};
use seugnn_core::netlist::{GateType, Netlist};
use seugnn_core::nn::{
    aspp_forward, gat_forward, gcn_forward, temporal_conv, Activation, AsppBlock, ConvMode, GatHead, GatLayer,
    GcnLayer, GraphContext, NnError, Tape, TemporalConv, Tensor, Var,
};
use seugnn_core::waveform::{FeatureTensor, WaveMatrix};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    Tensor::matrix(rows, cols, m.concat()).unwrap()
}

pub fn from_tensor(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let k = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), k);
            (0..cols).map(|c| (0..k).map(|i| row[i] * b[i][c]).sum()).collect()
        })
        .collect()
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column `c` of `m`.
pub fn col(m: &Mat, c: usize) -> Vec<f64> {
    m.iter().map(|r| r[c]).collect()
}

/// A small random directed graph without self-loops or duplicates.
pub struct Graph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    /// `[E × c]`
    pub feats: Mat,
    pub c: usize,
}

impl Graph {
    pub fn random(rng: &mut impl Rng, n: usize, density: f64, c: usize) -> Self {
        let mut edges = Vec::new();
        for s in 0..n {
            for d in 0..n {
                if s != d && rng.gen_bool(density) {
                    edges.push((s, d));
                }
            }
        }
        let feats = (0..edges.len())
            .map(|_| (0..c).map(|_| rng.gen_range(0..2) as f64).collect())
            .collect();
        Graph { n, edges, feats, c }
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == i).count()
    }

    pub fn ctx(&self) -> seugnn_core::nn::GraphContext<f64> {
        let feats = Tensor::matrix(self.edges.len(), self.c, self.feats.concat()).unwrap();
        seugnn_core::nn::GraphContext::from_parts(self.n, &self.edges, feats).unwrap()
    }
}

/// Graph convolution on one time step, written straight from its definition:
/// `x'_i = relu(Σ_{j∈N(i)∪i} s_ji/c_ji · Θᵀx_j)`.
pub fn gcn_dense(x: &Mat, theta: &Mat, theta_e: &[f64], g: &Graph) -> Mat {
    let out = theta[0].len();
    let mut y = vec![vec![0.0; out]; g.n];
    for i in 0..g.n {
        let mut acc = vec![0.0; theta.len()];
        let di = g.in_degree(i) as f64;
        // self loop: s_ii = 1, c_ii = deg(i) + 1
        for (a, v) in acc.iter_mut().zip(&x[i]) {
            *a += v / (di + 1.0);
        }
        for (e, &(j, dst)) in g.edges.iter().enumerate() {
            if dst != i {
                continue;
            }
            let s = dot(&g.feats[e], theta_e);
            let c = (di + 1.0).sqrt() * (g.in_degree(j) as f64 + 1.0).sqrt();
            for (a, v) in acc.iter_mut().zip(&x[j]) {
                *a += s / c * v;
            }
        }
        for (o, yo) in y[i].iter_mut().enumerate() {
            *yo = relu((0..acc.len()).map(|k| acc[k] * theta[k][o]).sum());
        }
    }
    y
}

pub struct GatParams {
    pub theta: Mat,
    /// `[c × e_dim]`
    pub theta_e: Mat,
    pub a_s: Vec<f64>,
    pub a_t: Vec<f64>,
    pub a_e: Vec<f64>,
}

impl GatParams {
    pub fn random(rng: &mut impl Rng, input: usize, out: usize, c: usize, e_dim: usize) -> Self {
        GatParams {
            theta: rand_mat(rng, input, out),
            theta_e: rand_mat(rng, c, e_dim),
            a_s: rand_mat(rng, 1, out).remove(0),
            a_t: rand_mat(rng, 1, out).remove(0),
            a_e: rand_mat(rng, 1, e_dim).remove(0),
        }
    }
}

/// Attention matrix `alpha[i][j]` (zero where `j ∉ N(i) ∪ i`).
pub fn gat_alpha_dense(x: &Mat, p: &GatParams, g: &Graph, slope: f64) -> Mat {
    let h = matmul(x, &p.theta);
    let e_dim = p.a_e.len();
    let mut alpha = vec![vec![0.0; g.n]; g.n];
    for i in 0..g.n {
        // (neighbor, edge vector)
        let mut nbrs: Vec<(usize, Vec<f64>)> = vec![(i, vec![0.0; e_dim])];
        for (e, &(j, dst)) in g.edges.iter().enumerate() {
            if dst == i {
                let ev = (0..e_dim).map(|k| dot(&g.feats[e], &col(&p.theta_e, k))).collect();
                nbrs.push((j, ev));
            }
        }
        let scores: Vec<f64> = nbrs
            .iter()
            .map(|(j, ev)| leaky(dot(&p.a_s, &h[i]) + dot(&p.a_t, &h[*j]) + dot(&p.a_e, ev), slope))
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for ((j, _), s) in nbrs.iter().zip(&scores) {
            alpha[i][*j] += (s - m).exp() / z;
        }
    }
    alpha
}

pub fn gat_dense(x: &Mat, p: &GatParams, g: &Graph, slope: f64) -> Mat {
    let h = matmul(x, &p.theta);
    let alpha = gat_alpha_dense(x, p, g, slope);
    let out = h[0].len();
    (0..g.n)
        .map(|i| {
            (0..out)
                .map(|o| relu((0..g.n).map(|j| alpha[i][j] * h[j][o]).sum()))
                .collect()
        })
        .collect()
}

/// `x[τ][node][ch]` → `y[τ'][node][out]` with taps `theta[k][ch][out]`.
pub fn tconv_dense(x: &[Mat], taps: &[Mat], r: usize, causal: bool) -> Vec<Mat> {
    let k_len = taps.len();
    let span = r * (k_len - 1);
    let n = x[0].len();
    let ch = x[0][0].len();
    let out = taps[0][0].len();
    let padded: Vec<Mat> = if causal {
        let mut p = vec![vec![vec![0.0; ch]; n]; span];
        p.extend(x.iter().cloned());
        p
    } else {
        x.to_vec()
    };
    let t_out = padded.len() - span;
    (0..t_out)
        .map(|tau| {
            (0..n)
                .map(|node| {
                    (0..out)
                        .map(|o| {
                            let mut s = 0.0;
                            for (k, tap) in taps.iter().enumerate() {
                                for c in 0..ch {
                                    s += padded[tau + r * k][node][c] * tap[c][o];
                                }
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm_dense(x: &Mat, eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter().map(|v| (v - mean) / (var + eps).sqrt()).collect()
        })
        .collect()
}

/// Multi-scale block: 1×1 branch + K=2 causal branches at `dilations`,
/// concatenated, optionally normalized, projected by `output[ch_cat][out]`.
pub fn aspp_dense(x: &[Mat], pointwise: &Mat, atrous: &[(usize, Vec<Mat>)], output: &Mat, inner_norm: bool) -> Vec<Mat> {
    let mut branches = vec![tconv_dense(x, std::slice::from_ref(pointwise), 1, true)];
    for (r, taps) in atrous {
        branches.push(tconv_dense(x, taps, *r, true));
    }
    (0..x.len())
        .map(|tau| {
            let mut cat: Mat = (0..x[0].len())
                .map(|node| branches.iter().flat_map(|b| b[tau][node].iter().copied()).collect())
                .collect();
            if inner_norm {
                cat = layer_norm_dense(&cat, 1e-5);
            }
            matmul(&cat, output)
        })
        .collect()
}

/// Time-major `[t·n × ch]` stack ↔ nested `[t][n][ch]`.
pub fn stack(x: &[Mat]) -> Mat {
    x.iter().flat_map(|m| m.iter().cloned()).collect()
}

pub fn unstack(x: &Mat, n: usize) -> Vec<Mat> {
    x.chunks(n).map(|c| c.to_vec()).collect()
}

/// Splits a `[K·in × out]` filter into `K` taps of `[in × out]`.
pub fn taps(theta: &Mat, k: usize) -> Vec<Mat> {
    let inp = theta.len() / k;
    theta.chunks(inp).map(|c| c.to_vec()).collect()
}

/// Central finite-difference check of `f` (a scalar function built on a tape)
/// with respect to every tensor in `params`. Returns the worst norm-wise
/// relative error `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖)` over the tensors.
pub fn grad_check<F>(params: &[Tensor<f64>], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    const H: f64 = 1e-3;
    let eval = |ps: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = ps.iter().map(|p| tape.param(p.clone())).collect();
        f(&tape, &vars).value().data()[0]
    };
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let ad = grads.get(*v);
        let mut num = 0.0;
        let mut den_ad = 0.0;
        let mut den_fd = 0.0;
        for i in 0..params[k].len() {
            let mut plus = params.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = params.to_vec();
            minus[k].data_mut()[i] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = ad.data()[i];
            num += (a - fd).powi(2);
            den_ad += a * a;
            den_fd += fd * fd;
        }
        let scale = den_ad.sqrt().max(den_fd.sqrt());
        if scale > 1e-12 {
            worst = worst.max(num.sqrt() / scale);
        }
    }
    worst
}

/// Weighted sum of all entries: a generic scalar probe for gradient checks.
pub fn probe<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let shape = y.shape();
    let (rows, cols) = (shape[0], shape.get(1).copied().unwrap_or(1));
    let w = rand_mat(&mut rng(seed), rows, cols);
    y.mul(tape.constant(Tensor::new(shape, w.concat()).unwrap())).unwrap().sum_all()
}

fn eval_gate(kind: GateType, ins: &[bool]) -> bool {
    let a = ins[0];
    let b = ins.get(1).copied().unwrap_or(false);
    match kind {
        GateType::Inv => !a,
        GateType::Buf => a,
        GateType::And2 => a && b,
        GateType::Or2 => a || b,
        GateType::Nand2 => !(a && b),
        GateType::Nor2 => !(a || b),
        GateType::Xor2 => a != b,
        GateType::Xnor2 => a == b,
        GateType::Dff => unreachable!("sequential"),
    }
}

/// Naive cycle simulator: every cycle, sweeps all combinational cells in
/// declaration order until nothing changes. Optionally flips `(ff, cycle)`
/// right after latching. Returns `(ff trace, po trace)` as row vectors.
pub fn fixpoint_sim(net: &Netlist, pi: &[Vec<bool>], flip: Option<(usize, usize)>) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let cells = net.cells();
    let ffs = net.flip_flops();
    let mut values = vec![false; net.num_nets()];
    let mut state: Vec<bool> = ffs.iter().map(|&c| cells[c].init).collect();
    let (mut ff_rows, mut po_rows) = (Vec::new(), Vec::new());
    for (cycle, inputs) in pi.iter().enumerate() {
        if cycle > 0 {
            state = ffs.iter().map(|&c| values[cells[c].inputs[0]]).collect();
        }
        if let Some((ff, t)) = flip {
            if t == cycle {
                state[ff] = !state[ff];
            }
        }
        for (k, &c) in ffs.iter().enumerate() {
            values[cells[c].output] = state[k];
        }
        for (&net_id, &b) in net.inputs().iter().zip(inputs) {
            values[net_id] = b;
        }
        loop {
            let mut changed = false;
            for cell in cells.iter().filter(|c| !c.kind.is_sequential()) {
                let ins: Vec<bool> = cell.inputs.iter().map(|&i| values[i]).collect();
                let v = eval_gate(cell.kind, &ins);
                if values[cell.output] != v {
                    values[cell.output] = v;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        ff_rows.push(state.clone());
        po_rows.push(net.outputs().iter().map(|&o| values[o]).collect());
    }
    (ff_rows, po_rows)
}

/// Three DFFs chained through buffers: `pi0 → b0 → ff0 → b1 → ff1 → b2 → ff2 → po0`.
pub const SHIFT_REGISTER: &str = r#"{
  "name": "shift3",
  "clock": "clk",
  "inputs": ["pi0"],
  "outputs": ["q2"],
  "cells": [
    {"name": "b0",  "type": "BUF", "inputs": ["pi0"], "output": "d0"},
    {"name": "ff0", "type": "DFF", "inputs": ["d0"],  "output": "q0"},
    {"name": "b1",  "type": "BUF", "inputs": ["q0"],  "output": "d1"},
    {"name": "ff1", "type": "DFF", "inputs": ["d1"],  "output": "q1"},
    {"name": "b2",  "type": "BUF", "inputs": ["q1"],  "output": "d2"},
    {"name": "ff2", "type": "DFF", "inputs": ["d2"],  "output": "q2"}
  ]
}"#;

/// Synthetic circuit, its golden waveform, and an exhaustive campaign over `times`.
pub fn pipeline(seed: u64, n_ff: usize, cycles: usize, times: &[usize]) -> (Netlist, WaveMatrix, FaultLabelSet) {
    let net = seugnn_core::netlist::gen_synthetic_circuit(seed, n_ff, 1..=4);
    let stim = Stimulus::random(&net, cycles, seed);
    let golden = simulate_golden(&net, &stim).unwrap();
    let wave = WaveMatrix {
        ff_names: net.flip_flop_names(),
        values: golden.ff,
        clock_name: net.clock().to_string(),
    };
    let labels = run_campaign(&net, &stim, times, None).unwrap();
    (net, wave, labels)
}

/// Random waveform over `n` flip-flops whose label at `(ff, t)` is the value of
/// `ff` at cycle `t − 1 + lag`: only windows longer than `lag` can see it.
pub fn lagged_label_case(n: usize, times: &[usize], lag: usize, seed: u64) -> (WaveMatrix, FaultLabelSet) {
    let mut r = rng(seed);
    let cycles = times.iter().max().copied().unwrap_or(1) + lag + 8;
    let mut values = seugnn_core::bits::BitMatrix::zeros(cycles, n);
    for c in 0..cycles {
        for j in 0..n {
            values.set(c, j, r.gen_bool(0.5));
        }
    }
    let mut labels = std::collections::BTreeMap::new();
    for &t in times {
        for ff in 0..n {
            let o = if values.get(t - 1 + lag, ff) { Outcome::Detected } else { Outcome::Undetected };
            labels.insert(FaultSite { ff_index: ff, t_seu: t }, o);
        }
    }
    let wave = WaveMatrix {
        ff_names: (0..n).map(|i| format!("ff{i}")).collect(),
        values,
        clock_name: "clk".into(),
    };
    (wave, FaultLabelSet { n_ff: n, injection_times: times.to_vec(), labels })
}

// ---- tape-side wrappers of the library layers ----

pub fn col_tensor(v: &[f64]) -> Tensor<f64> {
    Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
}

pub fn gcn_tape(x: &[Mat], theta: &Mat, theta_e: &[f64], g: &Graph) -> Mat {
    let tape = Tape::new();
    let layer = GcnLayer {
        theta: tape.param(to_tensor(theta)),
        theta_e: tape.param(col_tensor(theta_e)),
        activation: Activation::Relu,
    };
    let y = gcn_forward(&layer, tape.constant(to_tensor(&stack(x))), &g.ctx()).unwrap();
    from_tensor(&y.value())
}

pub fn gat_tape(x: &[Mat], heads: &[GatParams], g: &Graph, slope: f64) -> Mat {
    let tape = Tape::new();
    let layer = GatLayer {
        heads: heads
            .iter()
            .map(|p| GatHead {
                theta: tape.param(to_tensor(&p.theta)),
                theta_e: tape.param(to_tensor(&p.theta_e)),
                a_s: tape.param(col_tensor(&p.a_s)),
                a_t: tape.param(col_tensor(&p.a_t)),
                a_e: tape.param(col_tensor(&p.a_e)),
            })
            .collect(),
        slope,
        activation: Activation::Relu,
    };
    let y = gat_forward(&layer, tape.constant(to_tensor(&stack(x))), &g.ctx()).unwrap();
    from_tensor(&y.value())
}

pub fn tconv_tape(x: &[Mat], theta: &Mat, k: usize, r: usize, mode: ConvMode) -> Result<Mat, NnError> {
    let tape = Tape::new();
    let conv = TemporalConv {
        theta: tape.param(to_tensor(theta)),
        kernel: k,
        dilation: r,
        bias: None,
    };
    let y = temporal_conv(&conv, tape.constant(to_tensor(&stack(x))), x[0].len(), mode)?;
    Ok(from_tensor(&y.value()))
}

pub struct AsppFixture {
    pub pointwise: Mat,
    pub atrous: Vec<(usize, Mat)>,
    pub output: Mat,
}

impl AsppFixture {
    pub fn random(r: &mut impl Rng, ch: usize, hidden: usize, out: usize, dilations: &[usize]) -> Self {
        AsppFixture {
            pointwise: rand_mat(r, ch, hidden),
            atrous: dilations.iter().map(|&d| (d, rand_mat(r, 2 * ch, hidden))).collect(),
            output: rand_mat(r, hidden * (1 + dilations.len()), out),
        }
    }

    pub fn run(&self, x: &[Mat], inner_norm: bool, bias: Option<&[f64]>) -> Mat {
        let tape = Tape::new();
        let conv = |theta: &Mat, kernel, dilation| TemporalConv {
            theta: tape.param(to_tensor(theta)),
            kernel,
            dilation,
            bias: None,
        };
        let mut output = conv(&self.output, 1, 1);
        output.bias = bias.map(|b| tape.param(Tensor::from_f64(&[b.len()], b).unwrap()));
        let block = AsppBlock {
            pointwise: conv(&self.pointwise, 1, 1),
            atrous: self.atrous.iter().map(|(d, th)| conv(th, 2, *d)).collect(),
            output,
            inner_norm,
        };
        let y = aspp_forward(&block, tape.constant(to_tensor(&stack(x))), x[0].len()).unwrap();
        from_tensor(&y.value())
    }

    pub fn dense(&self, x: &[Mat], inner_norm: bool) -> Mat {
        let atrous: Vec<(usize, Vec<Mat>)> = self.atrous.iter().map(|(d, th)| (*d, taps(th, 2))).collect();
        stack(&aspp_dense(x, &self.pointwise, &atrous, &self.output, inner_norm))
    }
}


// ---- end-to-end gradient check ----

pub fn loss_and_grads(
    model: &Model<f64>,
    x: &FeatureTensor<f64>,
    ctx: &GraphContext<f64>,
    targets: &[usize],
) -> (f64, Vec<Tensor<f64>>) {
    let tape = Tape::new();
    let b = model.params.bind(&tape);
    let logits = forward(&model.spec, &b, feature_input(&tape, x), ctx).unwrap();
    let rows: Vec<usize> = (0..targets.len()).collect();
    let loss = logits.cross_entropy(Rc::from(targets), Rc::from(rows)).unwrap();
    let lv = loss.value().data()[0];
    let grads = tape.backward(loss).unwrap();
    (lv, b.gradients(&grads))
}

/// Worst per-tensor relative error between the tape gradient of the full
/// model loss and central differences (h = 1e-3) on a 4-node, 8-cycle
/// instance. Fails if more than 5% of coordinates straddle a ReLU kink.
pub fn end_to_end_gradient_error(arch: Arch) -> Result<f64, String> {
    const H: f64 = 1e-3;
    const C: usize = 16;
    let mut r = rng(13);
    let (n, t) = (4, 8);
    let g = Graph {
        n,
        edges: vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)],
        feats: (0..5).map(|_| (0..C).map(|_| r.gen_range(0..2) as f64).collect()).collect(),
        c: C,
    };
    let ctx = g.ctx();
    let mut spec = ModelSpec::new(arch, t, C);
    spec.hidden = 4;
    let mut model = Model::<f64>::new(spec, 17).map_err(|e| e.to_string())?;
    for v in model.params.get_mut("head.linear.bias").unwrap().data_mut() {
        *v = r.gen_range(-0.5..0.5);
    }
    // Continuous inputs keep most pre-activations away from ReLU kinks.
    let x = FeatureTensor {
        t_seu: 1,
        time_win_size: t,
        num_nodes: n,
        data: (0..t * n).map(|_| r.gen_range(0.0..1.0)).collect(),
    };
    let targets = [1, 0, 0, 1];
    let (_, grads) = loss_and_grads(&model, &x, &ctx, &targets);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let (mut coords, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for (name, ad) in names.iter().zip(&grads) {
        let (mut num, mut den_a, mut den_f) = (0.0, 0.0, 0.0);
        for i in 0..ad.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params.get_mut(name).unwrap().data_mut()[i] += delta;
                loss_and_grads(&m, &x, &ctx, &targets).0
            };
            let central = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
            let fd = central(H);
            coords += 1;
            // A kink inside [θ−h, θ+h] makes the central difference
            // meaningless; such coordinates disagree with a 10× finer step.
            if (fd - central(H / 10.0)).abs() > 1e-3 * fd.abs().max(1e-2) {
                skipped += 1;
                continue;
            }
            let a = ad.data()[i];
            num += (a - fd).powi(2);
            den_a += a * a;
            den_f += fd * fd;
        }
        let scale = f64::max(den_a.sqrt(), den_f.sqrt());
        if scale > 1e-12 {
            worst = worst.max(num.sqrt() / scale);
        }
    }
    if skipped * 20 > coords {
        return Err(format!("{skipped} of {coords} coordinates are non-smooth"));
    }
    Ok(worst)
}

// ---- layer gradient checks ----

pub fn rand_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    to_tensor(&rand_mat(r, rows, cols))
}

/// Worst relative gradient error of each layer on a 5-node, 3-cycle fixture.
pub fn layer_gradient_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut r = rng(21);
    let g = Graph::random(&mut r, 5, 0.4, 8);
    let ctx = g.ctx();
    let t = 3;
    // x [t·n × 3]
    let x = rand_tensor(&mut r, t * 5, 3);

    let gcn_err = grad_check(&[x.clone(), rand_tensor(&mut r, 3, 4), rand_tensor(&mut r, 8, 1)], |tape, v| {
        let layer = GcnLayer {
            theta: v[1],
            theta_e: v[2],
            activation: Activation::Relu,
        };
        probe(tape, gcn_forward(&layer, v[0], &ctx).unwrap(), 31)
    });
    out.push(("gcn".to_string(), gcn_err));

    let gat_params = [
        x.clone(),
        rand_tensor(&mut r, 3, 4),
        rand_tensor(&mut r, 8, 2),
        rand_tensor(&mut r, 4, 1),
        rand_tensor(&mut r, 4, 1),
        rand_tensor(&mut r, 2, 1),
    ];
    let gat_err = grad_check(&gat_params, |tape, v| {
        let layer = GatLayer {
            heads: vec![GatHead {
                theta: v[1],
                theta_e: v[2],
                a_s: v[3],
                a_t: v[4],
                a_e: v[5],
            }],
            slope: 0.2,
            activation: Activation::Relu,
        };
        probe(tape, gat_forward(&layer, v[0], &ctx).unwrap(), 32)
    });
    out.push(("gat".to_string(), gat_err));

    for (mode, seed) in [(ConvMode::Valid, 33), (ConvMode::Causal, 34)] {
        let err = grad_check(&[x.clone(), rand_tensor(&mut r, 6, 2), rand_tensor(&mut r, 1, 2)], |tape, v| {
            let conv = TemporalConv {
                theta: v[1],
                kernel: 2,
                dilation: 2,
                bias: Some(v[2].slice_rows(0, 1).unwrap()),
            };
            probe(tape, temporal_conv(&conv, v[0], 5, mode).unwrap(), seed)
        });
        out.push((format!("temporal conv {mode:?}"), err));
    }

    let aspp_params = [
        x.clone(),
        rand_tensor(&mut r, 3, 2),
        rand_tensor(&mut r, 6, 2),
        rand_tensor(&mut r, 6, 2),
        rand_tensor(&mut r, 6, 2),
        rand_tensor(&mut r, 8, 3),
    ];
    let aspp_err = grad_check(&aspp_params, |tape, v| {
        let conv = |theta, kernel, dilation| TemporalConv {
            theta,
            kernel,
            dilation,
            bias: None,
        };
        let block = AsppBlock {
            pointwise: conv(v[1], 1, 1),
            atrous: vec![conv(v[2], 2, 1), conv(v[3], 2, 2), conv(v[4], 2, 4)],
            output: conv(v[5], 1, 1),
            inner_norm: true,
        };
        probe(tape, aspp_forward(&block, v[0], 5).unwrap(), 35)
    });
    out.push(("aspp".to_string(), aspp_err));
    out
}
