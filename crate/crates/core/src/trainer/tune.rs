//! Grid search over `(max_distance, time_win_size)`.
//!
//! Each grid point rebuilds graph and windows, splits with the run seed,
//! trains, and is scored on validation accuracy only. Test masks are handed
//! out sealed and can be opened only with a [`Selection`], which exists once
//! the winner is fixed; every seal/open is written to an [`AuditLog`].

use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::dataset::{build_dataset, restrict_times, Masks, SeuDataset, SplitSpec};
use crate::faultsim::FaultLabelSet;
use crate::models::{Arch, Model, ModelSpec};
use crate::netlist::Netlist;
use crate::waveform::WaveMatrix;
use crate::Scalar;

use super::{evaluate, train, Metrics, TrainError, TrainOptions};

pub const MAX_DISTANCE_GRID: [usize; 5] = [6, 7, 8, 9, 10];
pub const TIME_WIN_GRID: [usize; 5] = [20, 30, 40, 50, 60];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub max_distance: usize,
    pub time_win_size: usize,
}

/// All 25 combinations of the default ranges, `max_distance`-major.
pub fn default_grid() -> Vec<GridPoint> {
    grid(&MAX_DISTANCE_GRID, &TIME_WIN_GRID)
}

fn grid(mds: &[usize], tws: &[usize]) -> Vec<GridPoint> {
    let mut g: Vec<GridPoint> = mds
        .iter()
        .flat_map(|&max_distance| {
            tws.iter().map(move |&time_win_size| GridPoint {
                max_distance,
                time_win_size,
            })
        })
        .collect();
    g.sort();
    g.dedup();
    g
}

/// Injection times whose `time_win_size` window fits a `cycles`-long trace.
pub fn feasible_times(times: &[usize], cycles: usize, time_win_size: usize) -> Vec<usize> {
    times
        .iter()
        .copied()
        .filter(|&t| t >= 1 && t - 1 + time_win_size <= cycles)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub arch: Arch,
    pub max_distances: Vec<usize>,
    pub time_wins: Vec<usize>,
    pub split: SplitSpec,
    pub train: TrainOptions,
    pub hidden: usize,
    pub undirected: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            arch: Arch::Astgcn,
            max_distances: MAX_DISTANCE_GRID.to_vec(),
            time_wins: TIME_WIN_GRID.to_vec(),
            split: SplitSpec::default(),
            train: TrainOptions::default(),
            hidden: 16,
            undirected: false,
        }
    }
}

impl TuneConfig {
    pub fn grid(&self) -> Vec<GridPoint> {
        grid(&self.max_distances, &self.time_wins)
    }

    pub fn model_spec(&self, point: GridPoint, edge_dim: usize) -> ModelSpec {
        let mut spec = ModelSpec::new(self.arch, point.time_win_size, edge_dim);
        spec.hidden = self.hidden;
        spec
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TuneInputs<'a> {
    pub netlist: &'a Netlist,
    pub wave: &'a WaveMatrix,
    pub labels: &'a FaultLabelSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditEvent {
    Sealed(GridPoint),
    Trained(GridPoint),
    SelectionFixed(GridPoint),
    TestOpened(GridPoint),
}

/// Shared, append-only record of test-mask handling.
#[derive(Debug, Clone, Default)]
pub struct AuditLog(Arc<Mutex<Vec<AuditEvent>>>);

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, e: AuditEvent) {
        self.0.lock().expect("audit log poisoned").push(e);
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.0.lock().expect("audit log poisoned").clone()
    }

    /// No test mask was opened before the selection, and the selection
    /// happened after every grid point finished training.
    pub fn isolation_holds(&self) -> bool {
        let ev = self.events();
        let Some(sel) = ev.iter().position(|e| matches!(e, AuditEvent::SelectionFixed(_))) else {
            return !ev.iter().any(|e| matches!(e, AuditEvent::TestOpened(_)));
        };
        let opened_early = ev[..sel].iter().any(|e| matches!(e, AuditEvent::TestOpened(_)));
        let trained_late = ev[sel..].iter().any(|e| matches!(e, AuditEvent::Trained(_)));
        !opened_early && !trained_late
    }
}

/// Proof that hyperparameter selection is final.
#[derive(Debug)]
pub struct Selection {
    point: GridPoint,
}

impl Selection {
    pub(crate) fn fix(log: &AuditLog, point: GridPoint) -> Self {
        log.push(AuditEvent::SelectionFixed(point));
        Selection { point }
    }

    pub fn point(&self) -> GridPoint {
        self.point
    }
}

/// A test mask withheld from training and selection.
#[derive(Debug)]
pub struct SealedTest {
    point: GridPoint,
    mask: BitMatrix,
    log: AuditLog,
}

impl SealedTest {
    /// Moves the test mask out of `ds` (which keeps an all-false test mask).
    pub fn seal(mut ds: SeuDataset, point: GridPoint, log: &AuditLog) -> (SeuDataset, SealedTest) {
        let empty = BitMatrix::zeros(ds.num_times(), ds.num_nodes());
        let mask = std::mem::replace(&mut ds.masks.test, empty);
        log.push(AuditEvent::Sealed(point));
        (
            ds,
            SealedTest {
                point,
                mask,
                log: log.clone(),
            },
        )
    }

    pub fn open(self, _selection: &Selection) -> BitMatrix {
        self.log.push(AuditEvent::TestOpened(self.point));
        self.mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub point: GridPoint,
    pub val: Metrics,
    /// Validation minus test accuracy, computed after selection.
    pub gap: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub arch: Arch,
    pub seed: u64,
    pub injection_times: Vec<usize>,
    pub grid: Vec<GridResult>,
    pub selected: GridPoint,
    pub val: Metrics,
    /// Test metrics of the selected point only.
    pub test: Metrics,
}

struct Candidate<T> {
    point: GridPoint,
    model: Model<T>,
    visible: SeuDataset,
    sealed: SealedTest,
    val: Metrics,
    epochs: usize,
}

/// Full grid search for one seed. Returns the report, the selected model,
/// and the selected dataset with its test mask restored.
pub fn tune<T: Scalar>(
    inputs: TuneInputs<'_>,
    cfg: &TuneConfig,
    seed: u64,
    log: &AuditLog,
) -> Result<(TuneReport, Model<T>, SeuDataset), TrainError> {
    let points = cfg.grid();
    let widest = points.iter().map(|p| p.time_win_size).max().ok_or(TrainError::EmptyGrid)?;
    let times = feasible_times(&inputs.labels.injection_times, inputs.wave.cycles(), widest);
    if times.is_empty() {
        return Err(TrainError::NoFeasibleTimes(widest));
    }
    let labels = restrict_times(inputs.labels, &times);

    let candidates: Vec<Candidate<T>> = points
        .par_iter()
        .map(|&point| -> Result<Candidate<T>, TrainError> {
            let ds = build_dataset(
                inputs.netlist,
                inputs.wave,
                &labels,
                point.max_distance,
                point.time_win_size,
                cfg.undirected,
            )?;
            let masks = cfg.split.apply(&ds, seed)?;
            let mut ds = ds.with_masks(masks);
            ds.meta.seed = seed;
            ds.meta.split = Some(cfg.split.to_string());
            let (visible, sealed) = SealedTest::seal(ds, point, log);
            let spec = cfg.model_spec(point, visible.graph.edge_dim());
            let out = train::<T>(&spec, &visible, &cfg.train, seed)?;
            let val = evaluate(&out.model, &visible, &visible.masks.val)?;
            log.push(AuditEvent::Trained(point));
            log::info!(
                "seed {seed}: md={} tw={} val {:.2}% after {} epochs",
                point.max_distance,
                point.time_win_size,
                val.accuracy,
                out.history.len()
            );
            Ok(Candidate {
                point,
                model: out.model,
                visible,
                sealed,
                val,
                epochs: out.history.len(),
            })
        })
        .collect::<Result<_, _>>()?;

    // Candidates are in grid order, so strict improvement keeps the smaller
    // max_distance, then the smaller window, on ties.
    let mut best = 0;
    for (k, c) in candidates.iter().enumerate() {
        if c.val.accuracy > candidates[best].val.accuracy {
            best = k;
        }
    }
    let selection = Selection::fix(log, candidates[best].point);
    log::info!("seed {seed}: selected {:?}", selection.point());

    let mut grid_results = Vec::with_capacity(candidates.len());
    let mut chosen = None;
    for (k, c) in candidates.into_iter().enumerate() {
        let test_mask = c.sealed.open(&selection);
        let test = evaluate(&c.model, &c.visible, &test_mask)?;
        grid_results.push(GridResult {
            point: c.point,
            val: c.val,
            gap: c.val.accuracy - test.accuracy,
            epochs: c.epochs,
        });
        if k == best {
            let mut ds = c.visible;
            ds.masks = Masks {
                test: test_mask,
                ..ds.masks
            };
            chosen = Some((c.model, ds, c.val, test));
        }
    }
    let (model, ds, val, test) = chosen.expect("selected candidate exists");
    let report = TuneReport {
        arch: cfg.arch,
        seed,
        injection_times: times,
        grid: grid_results,
        selected: selection.point(),
        val,
        test,
    };
    Ok((report, model, ds))
}
