//! Gate-level netlists: the canonical JSON interchange format, validation and
//! levelization, plus a seeded generator for synthetic benchmark circuits.

mod synth;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use synth::gen_synthetic_circuit;

/// Index of a net inside a [`Netlist`].
pub type NetId = usize;
/// Index of a cell inside a [`Netlist`].
pub type CellId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetlistError {
    #[error("netlist syntax error: {0}")]
    Syntax(String),
    #[error("net `{0}` has multiple drivers")]
    MultipleDrivers(String),
    #[error("combinational loop through cells: {}", .0.join(" -> "))]
    CombinationalLoop(Vec<String>),
    #[error("unknown gate type `{0}`")]
    UnknownGateType(String),
    #[error("cell `{cell}` of type {kind} expects {expected} input(s), got {got}")]
    ArityMismatch {
        cell: String,
        kind: GateType,
        expected: usize,
        got: usize,
    },
    #[error("net `{0}` is referenced but never driven")]
    UndrivenNet(String),
    #[error("duplicate cell name `{0}`")]
    DuplicateCell(String),
    #[error("clock net `{0}` cannot be used as a data net")]
    ClockAsData(String),
    #[error("netlist must contain at least one flip-flop")]
    NoFlipFlops,
    #[error("netlist must declare at least one primary output")]
    NoOutputs,
}

/// Cell library. Every combinational type has a fixed arity of one or two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateType {
    Inv,
    Buf,
    And2,
    Or2,
    Nand2,
    Nor2,
    Xor2,
    Xnor2,
    Dff,
}

impl GateType {
    /// The combinational alphabet, in edge-encoding order.
    pub const COMBINATIONAL: [GateType; 8] = [
        GateType::Inv,
        GateType::Buf,
        GateType::And2,
        GateType::Or2,
        GateType::Nand2,
        GateType::Nor2,
        GateType::Xor2,
        GateType::Xnor2,
    ];

    /// Number of combinational gate types, the block width of an edge vector.
    pub const NUM_COMBINATIONAL: usize = 8;

    pub fn arity(self) -> usize {
        match self {
            GateType::Inv | GateType::Buf | GateType::Dff => 1,
            _ => 2,
        }
    }

    pub fn is_sequential(self) -> bool {
        self == GateType::Dff
    }

    /// Position inside [`GateType::COMBINATIONAL`]; `None` for DFF.
    pub fn code(self) -> Option<usize> {
        GateType::COMBINATIONAL.iter().position(|&g| g == self)
    }

    pub fn from_code(code: usize) -> Option<GateType> {
        GateType::COMBINATIONAL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateType::Inv => "INV",
            GateType::Buf => "BUF",
            GateType::And2 => "AND2",
            GateType::Or2 => "OR2",
            GateType::Nand2 => "NAND2",
            GateType::Nor2 => "NOR2",
            GateType::Xor2 => "XOR2",
            GateType::Xnor2 => "XNOR2",
            GateType::Dff => "DFF",
        }
    }

    /// Evaluates a combinational gate. `b` is ignored for one-input gates.
    /// A DFF evaluates as a buffer of its D input.
    #[inline]
    pub fn eval(self, a: bool, b: bool) -> bool {
        match self {
            GateType::Inv => !a,
            GateType::Buf | GateType::Dff => a,
            GateType::And2 => a & b,
            GateType::Or2 => a | b,
            GateType::Nand2 => !(a & b),
            GateType::Nor2 => !(a | b),
            GateType::Xor2 => a ^ b,
            GateType::Xnor2 => !(a ^ b),
        }
    }
}

impl fmt::Display for GateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateType {
    type Err = NetlistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "INV" => GateType::Inv,
            "BUF" => GateType::Buf,
            "AND2" => GateType::And2,
            "OR2" => GateType::Or2,
            "NAND2" => GateType::Nand2,
            "NOR2" => GateType::Nor2,
            "XOR2" => GateType::Xor2,
            "XNOR2" => GateType::Xnor2,
            "DFF" => GateType::Dff,
            other => return Err(NetlistError::UnknownGateType(other.to_string())),
        })
    }
}

/// Serialized form of a netlist, field-for-field the JSON schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistDoc {
    pub name: String,
    pub clock: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub cells: Vec<CellDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellDoc {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub name: String,
    pub kind: GateType,
    pub inputs: Vec<NetId>,
    pub output: NetId,
    /// Power-up value; only meaningful for DFFs.
    pub init: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    PrimaryInput(usize),
    Cell(CellId),
}

/// A validated gate-level circuit.
///
/// Nets are interned in a fixed order (primary inputs, then cell outputs in
/// declaration order), so two netlists built from the same document compare
/// equal. Flip-flops are numbered by declaration order; that numbering is the
/// node order of every graph and matrix derived from the circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netlist {
    name: String,
    clock: String,
    net_names: Vec<String>,
    net_index: HashMap<String, NetId>,
    inputs: Vec<NetId>,
    outputs: Vec<NetId>,
    cells: Vec<Cell>,
    drivers: Vec<Driver>,
    readers: Vec<Vec<CellId>>,
    flip_flops: Vec<CellId>,
    comb_order: Vec<CellId>,
}

impl Netlist {
    pub fn from_doc(doc: &NetlistDoc) -> Result<Self, NetlistError> {
        let mut net_names: Vec<String> = Vec::new();
        let mut net_index: HashMap<String, NetId> = HashMap::new();
        let mut drivers: Vec<Driver> = Vec::new();

        let mut declare = |name: &str, driver: Driver| -> Result<NetId, NetlistError> {
            if name == doc.clock {
                return Err(NetlistError::ClockAsData(name.to_string()));
            }
            if net_index.contains_key(name) {
                return Err(NetlistError::MultipleDrivers(name.to_string()));
            }
            let id = net_names.len();
            net_names.push(name.to_string());
            net_index.insert(name.to_string(), id);
            drivers.push(driver);
            Ok(id)
        };

        let mut inputs = Vec::with_capacity(doc.inputs.len());
        for (i, name) in doc.inputs.iter().enumerate() {
            inputs.push(declare(name, Driver::PrimaryInput(i))?);
        }

        let mut kinds = Vec::with_capacity(doc.cells.len());
        let mut outputs_of_cells = Vec::with_capacity(doc.cells.len());
        let mut cell_names: HashMap<&str, CellId> = HashMap::new();
        for (ci, cell) in doc.cells.iter().enumerate() {
            if cell_names.insert(cell.name.as_str(), ci).is_some() {
                return Err(NetlistError::DuplicateCell(cell.name.clone()));
            }
            let kind: GateType = cell.kind.parse()?;
            if cell.inputs.len() != kind.arity() {
                return Err(NetlistError::ArityMismatch {
                    cell: cell.name.clone(),
                    kind,
                    expected: kind.arity(),
                    got: cell.inputs.len(),
                });
            }
            match cell.init {
                None | Some(0) => {}
                Some(1) if kind == GateType::Dff => {}
                Some(1) => {
                    return Err(NetlistError::Syntax(format!(
                        "`init` given on combinational cell `{}`",
                        cell.name
                    )))
                }
                Some(v) => {
                    return Err(NetlistError::Syntax(format!(
                        "cell `{}` has init {v}, expected 0 or 1",
                        cell.name
                    )))
                }
            }
            kinds.push(kind);
            outputs_of_cells.push(declare(&cell.output, Driver::Cell(ci))?);
        }

        let lookup = |name: &str| -> Result<NetId, NetlistError> {
            if name == doc.clock {
                return Err(NetlistError::ClockAsData(name.to_string()));
            }
            net_index
                .get(name)
                .copied()
                .ok_or_else(|| NetlistError::UndrivenNet(name.to_string()))
        };

        let mut cells = Vec::with_capacity(doc.cells.len());
        let mut readers = vec![Vec::new(); net_names.len()];
        for (ci, cell) in doc.cells.iter().enumerate() {
            let ins = cell
                .inputs
                .iter()
                .map(|n| lookup(n))
                .collect::<Result<Vec<_>, _>>()?;
            for &n in &ins {
                // A two-input gate may read the same net twice; list it once.
                if readers[n].last() != Some(&ci) {
                    readers[n].push(ci);
                }
            }
            cells.push(Cell {
                name: cell.name.clone(),
                kind: kinds[ci],
                inputs: ins,
                output: outputs_of_cells[ci],
                init: cell.init == Some(1),
            });
        }
        let outputs = doc
            .outputs
            .iter()
            .map(|n| lookup(n))
            .collect::<Result<Vec<_>, _>>()?;

        let flip_flops: Vec<CellId> = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind.is_sequential())
            .map(|(i, _)| i)
            .collect();
        if flip_flops.is_empty() {
            return Err(NetlistError::NoFlipFlops);
        }
        if outputs.is_empty() {
            return Err(NetlistError::NoOutputs);
        }

        let mut netlist = Netlist {
            name: doc.name.clone(),
            clock: doc.clock.clone(),
            net_names,
            net_index,
            inputs,
            outputs,
            cells,
            drivers,
            readers,
            flip_flops,
            comb_order: Vec::new(),
        };
        netlist.comb_order = levelize(&netlist)?;
        Ok(netlist)
    }

    pub fn parse(text: &str) -> Result<Self, NetlistError> {
        let doc: NetlistDoc =
            serde_json::from_str(text).map_err(|e| NetlistError::Syntax(e.to_string()))?;
        Self::from_doc(&doc)
    }

    pub fn to_doc(&self) -> NetlistDoc {
        NetlistDoc {
            name: self.name.clone(),
            clock: self.clock.clone(),
            inputs: self.inputs.iter().map(|&n| self.net_names[n].clone()).collect(),
            outputs: self.outputs.iter().map(|&n| self.net_names[n].clone()).collect(),
            cells: self
                .cells
                .iter()
                .map(|c| CellDoc {
                    name: c.name.clone(),
                    kind: c.kind.as_str().to_string(),
                    inputs: c.inputs.iter().map(|&n| self.net_names[n].clone()).collect(),
                    output: self.net_names[c.output].clone(),
                    init: c.kind.is_sequential().then_some(c.init as u8),
                })
                .collect(),
        }
    }

    /// Canonical pretty-printed JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("netlist serializes")
    }

    /// SHA-256 of the canonical serialization; identifies the circuit structure.
    pub fn structure_hash(&self) -> String {
        let compact = serde_json::to_vec(&self.to_doc()).expect("netlist serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn clock(&self) -> &str {
        &self.clock
    }

    pub fn num_nets(&self) -> usize {
        self.net_names.len()
    }

    pub fn net_name(&self, net: NetId) -> &str {
        &self.net_names[net]
    }

    pub fn net_id(&self, name: &str) -> Option<NetId> {
        self.net_index.get(name).copied()
    }

    pub fn inputs(&self) -> &[NetId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NetId] {
        &self.outputs
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn driver(&self, net: NetId) -> Driver {
        self.drivers[net]
    }

    /// Cells reading `net`, in declaration order.
    pub fn readers(&self, net: NetId) -> &[CellId] {
        &self.readers[net]
    }

    /// Cell ids of the flip-flops; position in this slice is the node index.
    pub fn flip_flops(&self) -> &[CellId] {
        &self.flip_flops
    }

    pub fn num_flip_flops(&self) -> usize {
        self.flip_flops.len()
    }

    pub fn flip_flop_names(&self) -> Vec<String> {
        self.flip_flops
            .iter()
            .map(|&c| self.cells[c].name.clone())
            .collect()
    }

    /// Node index of a flip-flop cell, if `cell` is one.
    pub fn ff_index_of_cell(&self, cell: CellId) -> Option<usize> {
        self.flip_flops.binary_search(&cell).ok()
    }

    pub fn num_combinational(&self) -> usize {
        self.cells.len() - self.flip_flops.len()
    }

    /// Combinational cells in evaluation order.
    pub fn comb_order(&self) -> &[CellId] {
        &self.comb_order
    }
}

impl FromStr for Netlist {
    type Err = NetlistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Netlist::parse(s)
    }
}

/// Topologically orders the combinational cells. Primary inputs and DFF
/// outputs are sources; ties keep declaration order.
pub fn levelize(netlist: &Netlist) -> Result<Vec<CellId>, NetlistError> {
    let cells = &netlist.cells;
    let comb_driver = |net: NetId| match netlist.drivers[net] {
        Driver::Cell(c) if !cells[c].kind.is_sequential() => Some(c),
        _ => None,
    };

    let mut pending = vec![0usize; cells.len()];
    for (ci, cell) in cells.iter().enumerate() {
        if cell.kind.is_sequential() {
            continue;
        }
        pending[ci] = cell.inputs.iter().filter(|&&n| comb_driver(n).is_some()).count();
    }

    let mut order = Vec::with_capacity(netlist.num_combinational());
    let mut ready: std::collections::VecDeque<CellId> = cells
        .iter()
        .enumerate()
        .filter(|(ci, c)| !c.kind.is_sequential() && pending[*ci] == 0)
        .map(|(ci, _)| ci)
        .collect();
    while let Some(ci) = ready.pop_front() {
        order.push(ci);
        let out = cells[ci].output;
        for &reader in &netlist.readers[out] {
            if cells[reader].kind.is_sequential() {
                continue;
            }
            let uses = cells[reader].inputs.iter().filter(|&&n| n == out).count();
            pending[reader] -= uses;
            if pending[reader] == 0 {
                ready.push_back(reader);
            }
        }
    }

    if order.len() == netlist.num_combinational() {
        return Ok(order);
    }

    // Walk back through unresolved drivers until a cell repeats.
    let start = (0..cells.len())
        .find(|&ci| !cells[ci].kind.is_sequential() && pending[ci] > 0)
        .expect("unresolved cell exists");
    let mut path = vec![start];
    let mut seen: HashMap<CellId, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let next = cells[cur]
            .inputs
            .iter()
            .filter_map(|&n| comb_driver(n))
            .find(|&d| pending[d] > 0)
            .expect("unresolved cell has an unresolved driver");
        if let Some(&pos) = seen.get(&next) {
            let mut cycle: Vec<String> = path[pos..]
                .iter()
                .rev()
                .map(|&c| cells[c].name.clone())
                .collect();
            cycle.push(cycle[0].clone());
            return Err(NetlistError::CombinationalLoop(cycle));
        }
        seen.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}
