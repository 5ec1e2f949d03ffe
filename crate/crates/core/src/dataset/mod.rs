//! Graph pairs (one feature window per injection time, sharing one spatial
//! graph), their labels, and train/val/test masks over the `(time, ff)` grid.

mod split;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitMatrix;
use crate::faultsim::{FaultLabelSet, Outcome};
use crate::graphgen::{build_spatial_graph, SpatialGraph};
use crate::netlist::Netlist;
use crate::waveform::{build_feature_tensor, FeatureTensor, WaveMatrix, WaveformError};

pub use split::{split_hybrid, split_spatial, split_temporal, SplitSpec};
pub use store::{load, save};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{file}: expected {expected} bytes, found {actual}")]
    ManifestMismatch {
        file: String,
        expected: usize,
        actual: usize,
    },
    #[error("{0}: content hash does not match the manifest")]
    IntegrityMismatch(String),
    #[error("no labels for injection time {0}")]
    MissingLabels(usize),
    #[error("node count mismatch: expected {expected}, got {got}")]
    NodeCountMismatch { expected: usize, got: usize },
    #[error("netlist structure hash {got} differs from the dataset's {expected}")]
    GraphHashMismatch { expected: String, got: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Undetected,
    Detected,
    Unlabeled,
}

impl Label {
    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }

    /// Class index: 1 = detected (the positive class).
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Undetected => Some(0),
            Label::Detected => Some(1),
            Label::Unlabeled => None,
        }
    }
}

impl From<Outcome> for Label {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Detected => Label::Detected,
            Outcome::Undetected => Label::Undetected,
        }
    }
}

/// One injection time: features plus per-node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t_seu: usize,
    pub x: FeatureTensor<f32>,
    pub labels: Vec<Label>,
}

/// Train/val/test selections over `[num_times × n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masks {
    pub train: BitMatrix,
    pub val: BitMatrix,
    pub test: BitMatrix,
}

impl Masks {
    pub fn empty(num_times: usize, n: usize) -> Self {
        Masks {
            train: BitMatrix::zeros(num_times, n),
            val: BitMatrix::zeros(num_times, n),
            test: BitMatrix::zeros(num_times, n),
        }
    }

    pub fn count(m: &BitMatrix) -> usize {
        (0..m.rows()).map(|r| m.row(r).iter().filter(|&&b| b).count()).sum()
    }

    pub fn any(m: &BitMatrix) -> bool {
        (0..m.rows()).any(|r| m.row(r).iter().any(|&b| b))
    }

    pub fn is_disjoint(&self) -> bool {
        (0..self.train.rows()).all(|r| {
            (0..self.train.cols())
                .all(|c| self.train.get(r, c) as u8 + self.val.get(r, c) as u8 + self.test.get(r, c) as u8 <= 1)
        })
    }
}

/// Provenance and hyperparameters carried with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub circuit: String,
    pub structure_hash: String,
    pub max_distance: usize,
    pub time_win_size: usize,
    /// Seed of the split that produced the masks.
    pub seed: u64,
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeuDataset {
    pub graph: SpatialGraph,
    pub samples: Vec<Sample>,
    pub masks: Masks,
    pub meta: DatasetMeta,
}

impl SeuDataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes
    }

    pub fn num_times(&self) -> usize {
        self.samples.len()
    }

    pub fn injection_times(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.t_seu).collect()
    }

    /// `n × num_times`
    pub fn grid_size(&self) -> usize {
        self.num_nodes() * self.num_times()
    }

    pub fn num_labeled(&self) -> usize {
        self.samples.iter().flat_map(|s| &s.labels).filter(|l| l.is_labeled()).count()
    }

    /// Fraction of labeled cells that are detected.
    pub fn positive_rate(&self) -> f64 {
        let labeled = self.num_labeled();
        if labeled == 0 {
            return 0.0;
        }
        let pos = self
            .samples
            .iter()
            .flat_map(|s| &s.labels)
            .filter(|&&l| l == Label::Detected)
            .count();
        pos as f64 / labeled as f64
    }

    pub fn with_masks(mut self, masks: Masks) -> Self {
        self.masks = masks;
        self
    }

    /// Every cell selected by a mask is labeled and masks are disjoint.
    pub fn masks_valid(&self) -> bool {
        let m = &self.masks;
        let shape_ok = [&m.train, &m.val, &m.test]
            .iter()
            .all(|b| b.rows() == self.num_times() && b.cols() == self.num_nodes());
        shape_ok
            && m.is_disjoint()
            && self.samples.iter().enumerate().all(|(r, s)| {
                s.labels
                    .iter()
                    .enumerate()
                    .all(|(c, l)| l.is_labeled() || !(m.train.get(r, c) || m.val.get(r, c) || m.test.get(r, c)))
            })
    }
}

/// Pairs each feature window with the labels of its injection time. Cells
/// absent from `labels` are [`Label::Unlabeled`]; masks start empty.
pub fn assemble(
    graph: SpatialGraph,
    tensors: Vec<FeatureTensor<f32>>,
    labels: &FaultLabelSet,
    meta: DatasetMeta,
) -> Result<SeuDataset, DatasetError> {
    let n = graph.num_nodes;
    if labels.n_ff != n {
        return Err(DatasetError::NodeCountMismatch {
            expected: n,
            got: labels.n_ff,
        });
    }
    let mut samples = Vec::with_capacity(tensors.len());
    for x in tensors {
        if x.num_nodes != n {
            return Err(DatasetError::NodeCountMismatch {
                expected: n,
                got: x.num_nodes,
            });
        }
        if labels.injection_times.binary_search(&x.t_seu).is_err() {
            return Err(DatasetError::MissingLabels(x.t_seu));
        }
        if let Some(first) = samples.first().map(|s: &Sample| s.x.shape()) {
            if x.shape() != first {
                return Err(DatasetError::Format(format!(
                    "feature window {:?} differs from {:?}",
                    x.shape(),
                    first
                )));
            }
        }
        let row = (0..n)
            .map(|ff| labels.get(ff, x.t_seu).map_or(Label::Unlabeled, Label::from))
            .collect();
        samples.push(Sample {
            t_seu: x.t_seu,
            x,
            labels: row,
        });
    }
    samples.sort_by_key(|s| s.t_seu);
    let masks = Masks::empty(samples.len(), n);
    Ok(SeuDataset {
        graph,
        samples,
        masks,
        meta,
    })
}

/// Graph + windows + labels for every injection time of `labels`.
pub fn build_dataset(
    netlist: &Netlist,
    wave: &WaveMatrix,
    labels: &FaultLabelSet,
    max_distance: usize,
    time_win_size: usize,
    undirected: bool,
) -> Result<SeuDataset, DatasetError> {
    let graph = build_spatial_graph(netlist, max_distance, undirected);
    if wave.num_nodes() != graph.num_nodes {
        return Err(DatasetError::NodeCountMismatch {
            expected: graph.num_nodes,
            got: wave.num_nodes(),
        });
    }
    let tensors = labels
        .injection_times
        .iter()
        .map(|&t| build_feature_tensor::<f32>(wave, t, time_win_size))
        .collect::<Result<Vec<_>, _>>()?;
    let meta = DatasetMeta {
        circuit: netlist.name().to_string(),
        structure_hash: netlist.structure_hash(),
        max_distance,
        time_win_size,
        seed: 0,
        split: None,
    };
    assemble(graph, tensors, labels, meta)
}

/// Re-targets a trained-on dataset to another test case of the same circuit:
/// same graph, new windows and labels, every labeled cell in the test mask.
pub fn cross_testcase_view(
    train: &SeuDataset,
    netlist: &Netlist,
    new_wave: &WaveMatrix,
    new_labels: &FaultLabelSet,
) -> Result<SeuDataset, DatasetError> {
    let got = netlist.structure_hash();
    if got != train.meta.structure_hash {
        return Err(DatasetError::GraphHashMismatch {
            expected: train.meta.structure_hash.clone(),
            got,
        });
    }
    if new_wave.num_nodes() != train.num_nodes() {
        return Err(DatasetError::NodeCountMismatch {
            expected: train.num_nodes(),
            got: new_wave.num_nodes(),
        });
    }
    let tensors = new_labels
        .injection_times
        .iter()
        .map(|&t| build_feature_tensor::<f32>(new_wave, t, train.meta.time_win_size))
        .collect::<Result<Vec<_>, _>>()?;
    let meta = DatasetMeta {
        split: Some("cross-testcase".into()),
        ..train.meta.clone()
    };
    let mut ds = assemble(train.graph.clone(), tensors, new_labels, meta)?;
    for (r, s) in ds.samples.iter().enumerate() {
        for (c, l) in s.labels.iter().enumerate() {
            ds.masks.test.set(r, c, l.is_labeled());
        }
    }
    Ok(ds)
}

/// Keeps only the labels (and injection times) in `times`.
pub fn restrict_times(labels: &FaultLabelSet, times: &[usize]) -> FaultLabelSet {
    FaultLabelSet {
        n_ff: labels.n_ff,
        injection_times: labels
            .injection_times
            .iter()
            .copied()
            .filter(|t| times.contains(t))
            .collect(),
        labels: labels
            .labels
            .iter()
            .filter(|(s, _)| times.contains(&s.t_seu))
            .map(|(s, o)| (*s, *o))
            .collect(),
    }
}
