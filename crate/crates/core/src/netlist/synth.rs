use std::ops::RangeInclusive;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CellDoc, GateType, Netlist, NetlistDoc};

/// Flip-flops a cone may draw from, counted backwards from the cone's own FF.
const LOCAL_WINDOW: usize = 6;
/// Probability that a cone leaf is a primary input.
const PI_LEAF_PROB: f64 = 0.15;
/// Probability that a cone leaf is an arbitrary flip-flop (feedback, long wires).
const FAR_LEAF_PROB: f64 = 0.1;

/// Generates a random sequential circuit with `n_ff` flip-flops.
///
/// Flip-flop `i` is fed by a chain-shaped combinational cone whose gate count
/// is drawn from `gates_per_cone`. Leaves come mostly from the few preceding
/// flip-flops, sometimes from primary inputs or any flip-flop. The first leaf
/// of every cone is a primary input or a lower-indexed flip-flop, so every
/// flip-flop is reachable from a primary input. Primary outputs observe a
/// spread of flip-flops, always including the last one.
///
/// Parameters are clamped: `n_ff >= 2`, cone sizes `>= 1`.
pub fn gen_synthetic_circuit(seed: u64, n_ff: usize, gates_per_cone: RangeInclusive<usize>) -> Netlist {
    let n_ff = n_ff.max(2);
    let lo = (*gates_per_cone.start()).max(1);
    let hi = (*gates_per_cone.end()).max(lo);
    let n_pi = (n_ff / 8).max(1);
    let n_po = (n_ff / 8).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pi = |k: usize| format!("pi{k}");
    let q = |i: usize| format!("q{i}");

    let mut cells = Vec::new();
    for i in 0..n_ff {
        cells.push(CellDoc {
            name: format!("ff{i}"),
            kind: "DFF".into(),
            inputs: vec![format!("d{i}")],
            output: q(i),
            init: Some(rng.gen_bool(0.5) as u8),
        });
    }

    let leaf = |rng: &mut ChaCha8Rng, i: usize, first: bool| -> String {
        let near_lo = i.saturating_sub(LOCAL_WINDOW);
        if first {
            if i == 0 || rng.gen_bool(PI_LEAF_PROB) {
                return pi(rng.gen_range(0..n_pi));
            }
            return q(rng.gen_range(near_lo..i));
        }
        let roll: f64 = rng.gen();
        if roll < PI_LEAF_PROB || (i == 0 && roll < 1.0 - FAR_LEAF_PROB) {
            pi(rng.gen_range(0..n_pi))
        } else if roll < PI_LEAF_PROB + FAR_LEAF_PROB {
            q(rng.gen_range(0..n_ff))
        } else {
            q(rng.gen_range(near_lo..i.max(1)))
        }
    };

    for i in 0..n_ff {
        let gates = rng.gen_range(lo..=hi);
        let mut prev: Option<String> = None;
        for g in 0..gates {
            let kind = GateType::COMBINATIONAL[rng.gen_range(0..GateType::NUM_COMBINATIONAL)];
            let first_in = match prev.take() {
                Some(p) => p,
                None => leaf(&mut rng, i, true),
            };
            let mut inputs = vec![first_in];
            if kind.arity() == 2 {
                inputs.push(leaf(&mut rng, i, false));
            }
            let output = if g + 1 == gates {
                format!("d{i}")
            } else {
                format!("n{i}_{g}")
            };
            cells.push(CellDoc {
                name: format!("g{i}_{g}"),
                kind: kind.as_str().into(),
                inputs,
                output: output.clone(),
                init: None,
            });
            prev = Some(output);
        }
    }

    let stride = n_ff / n_po;
    let outputs: Vec<String> = (0..n_po).map(|k| q(n_ff - 1 - k * stride)).collect();

    let doc = NetlistDoc {
        name: format!("synth{n_ff}_s{seed}"),
        clock: "clk".into(),
        inputs: (0..n_pi).map(pi).collect(),
        outputs,
        cells,
    };
    Netlist::from_doc(&doc).expect("generator emits valid netlists")
}
