//! Two-valued, cycle-based gate-level simulation with single-event-upset
//! injection, fault classification and exhaustive fault campaigns.
//!
//! Cycle semantics: cycle 0 starts from the DFF init bits; at every later
//! cycle all DFFs latch the D values settled in the previous cycle. An SEU at
//! cycle `t` inverts one DFF right after that latch, before combinational
//! logic settles, so the flipped value is observable in cycle `t` itself.

mod vcd;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitMatrix;
use crate::netlist::{GateType, NetId, Netlist};

pub use vcd::{default_vcd_name, write_vcd, write_vcd_file};

#[derive(Debug, Error)]
pub enum FaultSimError {
    #[error("stimulus error: {0}")]
    Stimulus(String),
    #[error("fault site (ff {ff_index}, cycle {t_seu}) out of range ({n_ff} flip-flops, {cycles} cycles)")]
    SiteOutOfRange {
        ff_index: usize,
        t_seu: usize,
        n_ff: usize,
        cycles: usize,
    },
    #[error("trace shape mismatch: golden {golden:?} vs faulty {faulty:?}")]
    ShapeMismatch {
        golden: (usize, usize),
        faulty: (usize, usize),
    },
    #[error("labels file error: {0}")]
    Labels(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Primary-input values for every simulated cycle, columns in netlist input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stimulus {
    bits: BitMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
struct StimulusDoc {
    cycles: usize,
    inputs: BTreeMap<String, Vec<u8>>,
}

impl Stimulus {
    pub fn new(bits: BitMatrix) -> Result<Self, FaultSimError> {
        if bits.rows() == 0 {
            return Err(FaultSimError::Stimulus("stimulus needs at least one cycle".into()));
        }
        Ok(Stimulus { bits })
    }

    /// Uniformly random input bits, deterministic in `seed`.
    pub fn random(netlist: &Netlist, cycles: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = netlist.inputs().len();
        let mut bits = BitMatrix::zeros(cycles.max(1), width);
        for c in 0..bits.rows() {
            for i in 0..width {
                bits.set(c, i, rng.gen_bool(0.5));
            }
        }
        Stimulus { bits }
    }

    pub fn cycles(&self) -> usize {
        self.bits.rows()
    }

    pub fn bits(&self) -> &BitMatrix {
        &self.bits
    }

    pub fn from_json(netlist: &Netlist, text: &str) -> Result<Self, FaultSimError> {
        let doc: StimulusDoc =
            serde_json::from_str(text).map_err(|e| FaultSimError::Stimulus(e.to_string()))?;
        if doc.cycles == 0 {
            return Err(FaultSimError::Stimulus("cycles must be >= 1".into()));
        }
        for name in doc.inputs.keys() {
            let known = netlist
                .net_id(name)
                .is_some_and(|id| netlist.inputs().contains(&id));
            if !known {
                return Err(FaultSimError::Stimulus(format!("`{name}` is not a primary input")));
            }
        }
        let mut bits = BitMatrix::zeros(doc.cycles, netlist.inputs().len());
        for (col, &net) in netlist.inputs().iter().enumerate() {
            let name = netlist.net_name(net);
            let values = doc
                .inputs
                .get(name)
                .ok_or_else(|| FaultSimError::Stimulus(format!("primary input `{name}` unassigned")))?;
            if values.len() != doc.cycles {
                return Err(FaultSimError::Stimulus(format!(
                    "input `{name}` has {} values, expected {}",
                    values.len(),
                    doc.cycles
                )));
            }
            for (c, &v) in values.iter().enumerate() {
                match v {
                    0 | 1 => bits.set(c, col, v == 1),
                    _ => {
                        return Err(FaultSimError::Stimulus(format!(
                            "input `{name}` cycle {c}: value {v} is not a bit"
                        )))
                    }
                }
            }
        }
        Ok(Stimulus { bits })
    }

    pub fn to_json(&self, netlist: &Netlist) -> String {
        let inputs = netlist
            .inputs()
            .iter()
            .enumerate()
            .map(|(col, &net)| {
                let column = (0..self.cycles()).map(|c| self.bits.get(c, col) as u8).collect();
                (netlist.net_name(net).to_string(), column)
            })
            .collect();
        serde_json::to_string(&StimulusDoc {
            cycles: self.cycles(),
            inputs,
        })
        .expect("stimulus serializes")
    }
}

/// One SEU: flip-flop `ff_index` is inverted at cycle `t_seu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaultSite {
    pub ff_index: usize,
    pub t_seu: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Undetected,
    Detected,
}

impl Outcome {
    pub fn is_detected(self) -> bool {
        self == Outcome::Detected
    }
}

/// Fault-free simulation record. Rows are cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenTrace {
    /// `[cycles × n_ff]` flip-flop values after latching.
    pub ff: BitMatrix,
    /// `[cycles × |PO|]` settled primary output values.
    pub po: BitMatrix,
    /// `[cycles × |PI|]` applied primary inputs.
    pub pi: BitMatrix,
}

/// Levelized evaluator compiled from a netlist.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    netlist: &'a Netlist,
    ff_d: Vec<NetId>,
    ff_q: Vec<NetId>,
    init: Vec<bool>,
    ops: Vec<(GateType, NetId, NetId, NetId)>,
}

impl<'a> Simulator<'a> {
    pub fn new(netlist: &'a Netlist) -> Self {
        let cells = netlist.cells();
        let ffs = netlist.flip_flops();
        let ops = netlist
            .comb_order()
            .iter()
            .map(|&c| {
                let cell = &cells[c];
                let a = cell.inputs[0];
                let b = *cell.inputs.get(1).unwrap_or(&a);
                (cell.kind, a, b, cell.output)
            })
            .collect();
        Simulator {
            netlist,
            ff_d: ffs.iter().map(|&c| cells[c].inputs[0]).collect(),
            ff_q: ffs.iter().map(|&c| cells[c].output).collect(),
            init: ffs.iter().map(|&c| cells[c].init).collect(),
            ops,
        }
    }

    pub fn netlist(&self) -> &Netlist {
        self.netlist
    }

    fn check_site(&self, stimulus: &Stimulus, site: FaultSite) -> Result<(), FaultSimError> {
        if site.ff_index >= self.ff_q.len() || site.t_seu >= stimulus.cycles() {
            return Err(FaultSimError::SiteOutOfRange {
                ff_index: site.ff_index,
                t_seu: site.t_seu,
                n_ff: self.ff_q.len(),
                cycles: stimulus.cycles(),
            });
        }
        Ok(())
    }

    fn check_stimulus(&self, stimulus: &Stimulus) -> Result<(), FaultSimError> {
        if stimulus.bits.cols() != self.netlist.inputs().len() {
            return Err(FaultSimError::Stimulus(format!(
                "stimulus has {} input columns, netlist has {} primary inputs",
                stimulus.bits.cols(),
                self.netlist.inputs().len()
            )));
        }
        Ok(())
    }

    /// Runs the whole stimulus, optionally with one upset. Invokes `record`
    /// with (cycle, ff state, settled net values) after each cycle settles.
    fn run<F: FnMut(usize, &[bool], &[bool])>(&self, stimulus: &Stimulus, flip: Option<FaultSite>, mut record: F) {
        let mut values = vec![false; self.netlist.num_nets()];
        let mut state = self.init.clone();
        for cycle in 0..stimulus.cycles() {
            if cycle > 0 {
                for (s, &d) in state.iter_mut().zip(&self.ff_d) {
                    *s = values[d];
                }
            }
            if let Some(site) = flip {
                if site.t_seu == cycle {
                    state[site.ff_index] = !state[site.ff_index];
                }
            }
            for (&q, &s) in self.ff_q.iter().zip(&state) {
                values[q] = s;
            }
            for (&net, &b) in self.netlist.inputs().iter().zip(stimulus.bits.row(cycle)) {
                values[net] = b;
            }
            for &(kind, a, b, out) in &self.ops {
                values[out] = kind.eval(values[a], values[b]);
            }
            record(cycle, &state, &values);
        }
    }

    fn po_row(&self, values: &[bool]) -> Vec<bool> {
        self.netlist.outputs().iter().map(|&o| values[o]).collect()
    }

    pub fn golden(&self, stimulus: &Stimulus) -> Result<GoldenTrace, FaultSimError> {
        self.check_stimulus(stimulus)?;
        let n_po = self.netlist.outputs().len();
        let mut ff = BitMatrix::zeros(stimulus.cycles(), self.ff_q.len());
        let mut po = BitMatrix::zeros(stimulus.cycles(), n_po);
        self.run(stimulus, None, |c, state, values| {
            ff.row_mut(c).copy_from_slice(state);
            po.row_mut(c).copy_from_slice(&self.po_row(values));
        });
        Ok(GoldenTrace {
            ff,
            po,
            pi: stimulus.bits.clone(),
        })
    }

    pub fn with_seu(&self, stimulus: &Stimulus, site: FaultSite) -> Result<BitMatrix, FaultSimError> {
        self.check_stimulus(stimulus)?;
        self.check_site(stimulus, site)?;
        let mut po = BitMatrix::zeros(stimulus.cycles(), self.netlist.outputs().len());
        self.run(stimulus, Some(site), |c, _, values| {
            po.row_mut(c).copy_from_slice(&self.po_row(values));
        });
        Ok(po)
    }
}

pub fn simulate_golden(netlist: &Netlist, stimulus: &Stimulus) -> Result<GoldenTrace, FaultSimError> {
    Simulator::new(netlist).golden(stimulus)
}

/// Primary-output trace of a run with a single upset at `site`.
pub fn simulate_with_seu(netlist: &Netlist, stimulus: &Stimulus, site: FaultSite) -> Result<BitMatrix, FaultSimError> {
    Simulator::new(netlist).with_seu(stimulus, site)
}

/// Detected iff some primary output differs at some cycle `>= t_seu`.
pub fn classify_fault(golden_po: &BitMatrix, faulty_po: &BitMatrix, t_seu: usize) -> Result<Outcome, FaultSimError> {
    if golden_po.rows() != faulty_po.rows() || golden_po.cols() != faulty_po.cols() {
        return Err(FaultSimError::ShapeMismatch {
            golden: (golden_po.rows(), golden_po.cols()),
            faulty: (faulty_po.rows(), faulty_po.cols()),
        });
    }
    let differs = (t_seu..golden_po.rows()).any(|c| golden_po.row(c) != faulty_po.row(c));
    Ok(if differs {
        Outcome::Detected
    } else {
        Outcome::Undetected
    })
}

/// Size of an exhaustive campaign grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignPlan {
    pub n_ff: usize,
    pub num_times: usize,
}

impl CampaignPlan {
    pub fn new(n_ff: usize, num_times: usize) -> Self {
        CampaignPlan { n_ff, num_times }
    }

    pub fn total_samples(&self) -> usize {
        self.n_ff * self.num_times
    }
}

/// Ground-truth outcome per (flip-flop, injection cycle).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultLabelSet {
    pub n_ff: usize,
    pub injection_times: Vec<usize>,
    pub labels: BTreeMap<FaultSite, Outcome>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsDoc {
    injection_times: Vec<usize>,
    labels: Vec<[usize; 3]>,
}

impl FaultLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, ff_index: usize, t_seu: usize) -> Option<Outcome> {
        self.labels.get(&FaultSite { ff_index, t_seu }).copied()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.values().filter(|o| o.is_detected()).count() as f64 / self.labels.len() as f64
    }

    /// Serializes as `{"injection_times": [...], "labels": [[ff, t, 0|1], ...]}`.
    pub fn to_json(&self) -> String {
        let doc = LabelsDoc {
            injection_times: self.injection_times.clone(),
            labels: self
                .labels
                .iter()
                .map(|(s, o)| [s.ff_index, s.t_seu, o.is_detected() as usize])
                .collect(),
        };
        serde_json::to_string(&doc).expect("labels serialize")
    }

    pub fn from_json(text: &str, n_ff: usize) -> Result<Self, FaultSimError> {
        let doc: LabelsDoc = serde_json::from_str(text).map_err(|e| FaultSimError::Labels(e.to_string()))?;
        let mut injection_times = doc.injection_times;
        injection_times.sort_unstable();
        injection_times.dedup();
        let mut labels = BTreeMap::new();
        for [ff, t, v] in doc.labels {
            if ff >= n_ff {
                return Err(FaultSimError::Labels(format!("flip-flop index {ff} >= {n_ff}")));
            }
            if injection_times.binary_search(&t).is_err() {
                return Err(FaultSimError::Labels(format!("label time {t} not among injection_times")));
            }
            let outcome = match v {
                0 => Outcome::Undetected,
                1 => Outcome::Detected,
                _ => return Err(FaultSimError::Labels(format!("label value {v} is not 0/1"))),
            };
            if labels.insert(FaultSite { ff_index: ff, t_seu: t }, outcome).is_some() {
                return Err(FaultSimError::Labels(format!("duplicate label for ({ff}, {t})")));
            }
        }
        Ok(FaultLabelSet {
            n_ff,
            injection_times,
            labels,
        })
    }
}

/// Injects every (flip-flop, time) pair of the grid individually and labels it.
///
/// Sites run in parallel on the current rayon pool; the result does not depend
/// on scheduling.
pub fn run_campaign(
    netlist: &Netlist,
    stimulus: &Stimulus,
    injection_times: &[usize],
    ff_subset: Option<&[usize]>,
) -> Result<FaultLabelSet, FaultSimError> {
    let sim = Simulator::new(netlist);
    let golden = sim.golden(stimulus)?;
    let n_ff = netlist.num_flip_flops();
    let mut times = injection_times.to_vec();
    times.sort_unstable();
    times.dedup();
    let mut ffs: Vec<usize> = match ff_subset {
        Some(s) => s.to_vec(),
        None => (0..n_ff).collect(),
    };
    ffs.sort_unstable();
    ffs.dedup();

    let sites: Vec<FaultSite> = ffs
        .iter()
        .flat_map(|&ff_index| times.iter().map(move |&t_seu| FaultSite { ff_index, t_seu }))
        .collect();
    log::debug!("campaign: {} sites over {} cycles", sites.len(), stimulus.cycles());
    let outcomes = sites
        .par_iter()
        .map(|&site| {
            let faulty = sim.with_seu(stimulus, site)?;
            classify_fault(&golden.po, &faulty, site.t_seu)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(FaultLabelSet {
        n_ff,
        injection_times: times,
        labels: sites.into_iter().zip(outcomes).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{gen_synthetic_circuit, Driver};

    pub(crate) const SHIFT3: &str = r#"{
        "name": "shift3", "clock": "clk",
        "inputs": ["din"], "outputs": ["q2"],
        "cells": [
            {"name": "ff0", "type": "DFF", "inputs": ["d0"], "output": "q0"},
            {"name": "ff1", "type": "DFF", "inputs": ["d1"], "output": "q1"},
            {"name": "ff2", "type": "DFF", "inputs": ["d2"], "output": "q2"},
            {"name": "b0", "type": "BUF", "inputs": ["din"], "output": "d0"},
            {"name": "b1", "type": "BUF", "inputs": ["q0"], "output": "d1"},
            {"name": "b2", "type": "BUF", "inputs": ["q1"], "output": "d2"}
        ]
    }"#;

    fn stim(col: &[u8]) -> Stimulus {
        let rows: Vec<Vec<bool>> = col.iter().map(|&b| vec![b == 1]).collect();
        Stimulus::new(BitMatrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn shift_register_shifts() {
        let nl = Netlist::parse(SHIFT3).unwrap();
        let g = simulate_golden(&nl, &stim(&[1, 0, 0, 0])).unwrap();
        let rows: Vec<Vec<bool>> = (0..4).map(|c| g.ff.row(c).to_vec()).collect();
        assert_eq!(
            rows,
            vec![
                vec![false, false, false],
                vec![true, false, false],
                vec![false, true, false],
                vec![false, false, true],
            ]
        );
        assert_eq!(g.po.row(3), &[true]);
    }

    #[test]
    fn single_cycle_is_init_state() {
        let nl = gen_synthetic_circuit(5, 8, 1..=3);
        let g = simulate_golden(&nl, &Stimulus::random(&nl, 1, 0)).unwrap();
        let init: Vec<bool> = nl.flip_flops().iter().map(|&c| nl.cells()[c].init).collect();
        assert_eq!(g.ff.row(0), init.as_slice());
    }

    #[test]
    fn flip_of_last_stage_shows_once() {
        let nl = Netlist::parse(SHIFT3).unwrap();
        let s = stim(&[0, 0, 0, 0, 0, 0]);
        let g = simulate_golden(&nl, &s).unwrap();
        let f = simulate_with_seu(&nl, &s, FaultSite { ff_index: 2, t_seu: 2 }).unwrap();
        let diff: Vec<usize> = (0..6).filter(|&c| g.po.row(c) != f.row(c)).collect();
        assert_eq!(diff, [2]);
    }

    #[test]
    fn flip_at_last_cycle_through_gate() {
        let text = r#"{"name":"t","clock":"clk","inputs":["a"],"outputs":["o"],
            "cells":[{"name":"ff","type":"DFF","inputs":["d"],"output":"q"},
                     {"name":"g","type":"BUF","inputs":["a"],"output":"d"},
                     {"name":"o","type":"INV","inputs":["q"],"output":"o"}]}"#;
        let nl = Netlist::parse(text).unwrap();
        let s = stim(&[1, 0, 1, 1]);
        let g = simulate_golden(&nl, &s).unwrap();
        let f = simulate_with_seu(&nl, &s, FaultSite { ff_index: 0, t_seu: 3 }).unwrap();
        let diff: Vec<usize> = (0..4).filter(|&c| g.po.row(c) != f.row(c)).collect();
        assert_eq!(diff, [3]);
    }

    #[test]
    fn unobservable_flip_is_masked() {
        let text = r#"{"name":"t","clock":"clk","inputs":["a"],"outputs":["q0"],
            "cells":[{"name":"ff0","type":"DFF","inputs":["d0"],"output":"q0"},
                     {"name":"ff1","type":"DFF","inputs":["d1"],"output":"q1"},
                     {"name":"g0","type":"BUF","inputs":["a"],"output":"d0"},
                     {"name":"g1","type":"INV","inputs":["q1"],"output":"d1"}]}"#;
        let nl = Netlist::parse(text).unwrap();
        let s = stim(&[1, 0, 1, 1, 0]);
        let g = simulate_golden(&nl, &s).unwrap();
        for t in 0..5 {
            let f = simulate_with_seu(&nl, &s, FaultSite { ff_index: 1, t_seu: t }).unwrap();
            assert_eq!(f, g.po);
        }
    }

    #[test]
    fn site_out_of_range() {
        let nl = Netlist::parse(SHIFT3).unwrap();
        let s = stim(&[0, 0]);
        assert!(matches!(
            simulate_with_seu(&nl, &s, FaultSite { ff_index: 3, t_seu: 0 }),
            Err(FaultSimError::SiteOutOfRange { .. })
        ));
        assert!(matches!(
            simulate_with_seu(&nl, &s, FaultSite { ff_index: 0, t_seu: 2 }),
            Err(FaultSimError::SiteOutOfRange { .. })
        ));
    }

    #[test]
    fn classification_rules() {
        let a = BitMatrix::from_rows(&[[false, false], [true, false], [false, true]]);
        assert_eq!(classify_fault(&a, &a, 0).unwrap(), Outcome::Undetected);
        let mut b = a.clone();
        b.set(2, 1, false);
        assert_eq!(classify_fault(&a, &b, 1).unwrap(), Outcome::Detected);
        let mut early = a.clone();
        early.set(0, 0, true);
        assert_eq!(classify_fault(&a, &early, 1).unwrap(), Outcome::Undetected);
        let short = BitMatrix::from_rows(&[[false, false]]);
        assert!(matches!(classify_fault(&a, &short, 0), Err(FaultSimError::ShapeMismatch { .. })));
    }

    #[test]
    fn shift_register_campaign_truth_table() {
        // din held at 0 for 6 cycles. A flip of ffk at t reaches q2 at cycle
        // t + (2 - k), which is observable iff that cycle is < 6.
        let nl = Netlist::parse(SHIFT3).unwrap();
        let s = stim(&[0; 6]);
        let labels = run_campaign(&nl, &s, &[1, 3, 4, 5], None).unwrap();
        assert_eq!(labels.len(), 12);
        for ff in 0..3 {
            for t in [1, 3, 4, 5] {
                let expect = t + (2 - ff) < 6;
                assert_eq!(labels.get(ff, t).unwrap().is_detected(), expect, "ff{ff} t{t}");
            }
        }
    }

    #[test]
    fn campaign_edge_cases() {
        let nl = Netlist::parse(SHIFT3).unwrap();
        let s = stim(&[0; 4]);
        assert!(run_campaign(&nl, &s, &[], None).unwrap().is_empty());
        let sub = run_campaign(&nl, &s, &[0, 1], Some(&[2])).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(CampaignPlan::new(3041, 40).total_samples(), 121_640);
    }

    #[test]
    fn labels_json_round_trip() {
        let nl = gen_synthetic_circuit(2, 8, 1..=3);
        let s = Stimulus::random(&nl, 20, 1);
        let labels = run_campaign(&nl, &s, &[2, 5, 9], None).unwrap();
        let back = FaultLabelSet::from_json(&labels.to_json(), 8).unwrap();
        assert_eq!(labels, back);
    }

    #[test]
    fn stimulus_json() {
        let nl = Netlist::parse(SHIFT3).unwrap();
        let s = Stimulus::from_json(&nl, r#"{"cycles": 3, "inputs": {"din": [1, 0, 1]}}"#).unwrap();
        assert_eq!(s.cycles(), 3);
        assert_eq!(Stimulus::from_json(&nl, &s.to_json(&nl)).unwrap(), s);
        assert!(Stimulus::from_json(&nl, r#"{"cycles": 3, "inputs": {}}"#).is_err());
        assert!(Stimulus::from_json(&nl, r#"{"cycles": 2, "inputs": {"din": [1]}}"#).is_err());
        assert!(Stimulus::from_json(&nl, r#"{"cycles": 1, "inputs": {"din": [2]}}"#).is_err());
    }

    #[test]
    fn detected_faults_first_differ_after_injection() {
        let nl = gen_synthetic_circuit(9, 16, 1..=4);
        let s = Stimulus::random(&nl, 30, 4);
        let sim = Simulator::new(&nl);
        let g = sim.golden(&s).unwrap();
        for ff_index in 0..16 {
            for t_seu in [1, 7, 20] {
                let f = sim.with_seu(&s, FaultSite { ff_index, t_seu }).unwrap();
                if let Some(first) = (0..30).find(|&c| g.po.row(c) != f.row(c)) {
                    assert!(first >= t_seu);
                }
            }
        }
        // POs of the generator are DFF outputs.
        assert!(nl.outputs().iter().all(|&o| matches!(nl.driver(o), Driver::Cell(_))));
    }
}
