//! VCD parsing into per-cycle flip-flop matrices, and the windowed feature
//! tensors built from them.

mod vcd;

use indexmap::IndexMap;
use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitMatrix;
use crate::netlist::Netlist;
use crate::Scalar;

pub use vcd::{parse_vcd, parse_vcd_file, parse_vcd_str};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WaveformError {
    #[error("VCD syntax error at line {line}: {msg}")]
    VcdSyntax { line: usize, msg: String },
    #[error("signal `{0}` not found in VCD")]
    MissingSignal(String),
    #[error("signal `{name}` is {width} bits wide, expected a single bit")]
    NotScalar { name: String, width: usize },
    #[error("signal `{signal}` has non-binary value at time {time}")]
    NonBinaryValue { signal: String, time: u64 },
    #[error("window of {time_win_size} cycles at t_seu={t_seu} does not fit a {cycles}-cycle trace")]
    WindowOutOfRange {
        t_seu: usize,
        time_win_size: usize,
        cycles: usize,
    },
    #[error("name map error: {0}")]
    NameMap(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Flip-flop values sampled at each rising clock edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaveMatrix {
    pub ff_names: Vec<String>,
    /// `[cycles × n]`
    pub values: BitMatrix,
    pub clock_name: String,
}

impl WaveMatrix {
    pub fn cycles(&self) -> usize {
        self.values.rows()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.cols()
    }
}

/// Maps netlist flip-flop names (in node order) to hierarchical VCD names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameMap {
    entries: Vec<(String, String)>,
}

impl NameMap {
    /// The names used by [`crate::faultsim::write_vcd`].
    pub fn default_for(netlist: &Netlist) -> Self {
        NameMap {
            entries: netlist
                .flip_flop_names()
                .into_iter()
                .map(|n| {
                    let v = crate::faultsim::default_vcd_name(netlist, &n);
                    (n, v)
                })
                .collect(),
        }
    }

    /// Parses `{"<netlist_ff>": "<vcd.hier.name>"}`; every flip-flop must be mapped.
    pub fn from_json(text: &str, netlist: &Netlist) -> Result<Self, WaveformError> {
        let map: IndexMap<String, String> =
            serde_json::from_str(text).map_err(|e| WaveformError::NameMap(e.to_string()))?;
        let names = netlist.flip_flop_names();
        for key in map.keys() {
            if !names.contains(key) {
                return Err(WaveformError::NameMap(format!("`{key}` is not a flip-flop of the netlist")));
            }
        }
        let entries = names
            .into_iter()
            .map(|n| match map.get(&n) {
                Some(v) => Ok((n, v.clone())),
                None => Err(WaveformError::MissingSignal(n)),
            })
            .collect::<Result<_, _>>()?;
        Ok(NameMap { entries })
    }

    pub fn from_pairs(entries: Vec<(String, String)>) -> Self {
        NameMap { entries }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

/// Node-feature window `[t × n × m]` (m = 1) for one injection time. Slice 0
/// holds the values of cycle `t_seu - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor<T> {
    pub t_seu: usize,
    pub time_win_size: usize,
    pub num_nodes: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureTensor<T> {
    pub const FEATURE_DIM: usize = 1;

    #[inline]
    pub fn get(&self, time: usize, node: usize) -> T {
        self.data[time * self.num_nodes + node]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.time_win_size, self.num_nodes, Self::FEATURE_DIM]
    }

    pub fn cast<U: Scalar>(&self) -> FeatureTensor<U> {
        FeatureTensor {
            t_seu: self.t_seu,
            time_win_size: self.time_win_size,
            num_nodes: self.num_nodes,
            data: self.data.iter().map(|v| U::of(v.wide())).collect(),
        }
    }
}

/// Window of `time_win_size` cycles starting at `t_seu - 1`.
pub fn build_feature_tensor<T: Scalar>(
    wave: &WaveMatrix,
    t_seu: usize,
    time_win_size: usize,
) -> Result<FeatureTensor<T>, WaveformError> {
    let cycles = wave.cycles();
    if t_seu < 1 || time_win_size < 2 || t_seu - 1 + time_win_size > cycles {
        return Err(WaveformError::WindowOutOfRange {
            t_seu,
            time_win_size,
            cycles,
        });
    }
    let n = wave.num_nodes();
    let mut data = Vec::with_capacity(time_win_size * n);
    for i in 0..time_win_size {
        data.extend(
            wave.values
                .row(t_seu - 1 + i)
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() }),
        );
    }
    Ok(FeatureTensor {
        t_seu,
        time_win_size,
        num_nodes: n,
        data,
    })
}

#[derive(Debug, Clone)]
pub struct FeatureBatch<T> {
    pub tensors: Vec<FeatureTensor<T>>,
    /// Injection times whose window did not fit, with the reason.
    pub skipped: Vec<(usize, WaveformError)>,
}

pub fn batch_feature_tensors<T: Scalar>(
    wave: &WaveMatrix,
    injection_times: &[usize],
    time_win_size: usize,
) -> FeatureBatch<T> {
    let results: Vec<_> = injection_times
        .par_iter()
        .map(|&t| (t, build_feature_tensor::<T>(wave, t, time_win_size)))
        .collect();
    let mut batch = FeatureBatch {
        tensors: Vec::new(),
        skipped: Vec::new(),
    };
    for (t, r) in results {
        match r {
            Ok(x) => batch.tensors.push(x),
            Err(e) => batch.skipped.push((t, e)),
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(rows: &[&[u8]]) -> WaveMatrix {
        let rows: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect();
        WaveMatrix {
            ff_names: (0..rows[0].len()).map(|i| format!("FF{}", i + 1)).collect(),
            values: BitMatrix::from_rows(&rows),
            clock_name: "clk".into(),
        }
    }

    #[test]
    fn first_slice_is_cycle_before_injection() {
        // FF4 is 1 at t_seu - 1, every other flip-flop is 0.
        let w = wave(&[&[1, 1, 0, 0], &[0, 0, 0, 1], &[1, 0, 1, 1], &[0, 1, 1, 0]]);
        let x = build_feature_tensor::<f32>(&w, 2, 3).unwrap();
        assert_eq!(x.shape(), [3, 4, 1]);
        assert_eq!(&x.data[0..4], &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&x.data[4..8], &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn minimal_window() {
        let w = wave(&[&[0], &[1], &[0]]);
        let x = build_feature_tensor::<f64>(&w, 1, 2).unwrap();
        assert_eq!(x.data, vec![0.0, 1.0]);
    }

    #[test]
    fn window_errors() {
        let w = wave(&[&[0], &[1], &[0]]);
        assert!(matches!(build_feature_tensor::<f32>(&w, 2, 3), Err(WaveformError::WindowOutOfRange { .. })));
        assert!(build_feature_tensor::<f32>(&w, 0, 2).is_err());
        assert!(build_feature_tensor::<f32>(&w, 1, 1).is_err());
    }

    #[test]
    fn batch_reports_skips() {
        let rows: Vec<Vec<u8>> = (0..50).map(|c| vec![(c % 2) as u8, 1]).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        let w = wave(&refs);
        let times: Vec<usize> = (1..=40).collect();
        assert_eq!(batch_feature_tensors::<f32>(&w, &times, 10).tensors.len(), 40);
        assert!(batch_feature_tensors::<f32>(&w, &[], 10).tensors.is_empty());
        let b = batch_feature_tensors::<f32>(&w, &[1, 49], 30);
        assert_eq!(b.tensors.len(), 1);
        assert_eq!(b.skipped.len(), 1);
        assert_eq!(b.skipped[0].0, 49);
    }
}
