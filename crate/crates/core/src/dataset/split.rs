use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Label, Masks, SeuDataset};

/// How labeled cells are assigned to train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitSpec {
    /// Uniform over the whole `(time, ff)` grid.
    Hybrid {
        train: f64,
        val: f64,
        test: f64,
        #[serde(default)]
        stratified: bool,
    },
    /// Per time, a random `⌊frac·n⌋` flip-flops train.
    Spatial { frac: f64 },
    /// A random `⌊frac·T⌋` injection times train.
    Temporal { frac: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Hybrid {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            stratified: false,
        }
    }
}

impl SplitSpec {
    pub fn apply(&self, ds: &SeuDataset, seed: u64) -> Result<Masks, DatasetError> {
        match *self {
            SplitSpec::Hybrid {
                train,
                val,
                test,
                stratified,
            } => split_hybrid(ds, (train, val, test), seed, stratified),
            SplitSpec::Spatial { frac } => split_spatial(ds, frac, seed),
            SplitSpec::Temporal { frac } => split_temporal(ds, frac, seed),
        }
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitSpec::Hybrid {
                train,
                val,
                test,
                stratified,
            } => {
                write!(f, "hybrid:{train},{val},{test}")?;
                if *stratified {
                    f.write_str(",stratified")?;
                }
                Ok(())
            }
            SplitSpec::Spatial { frac } => write!(f, "spatial:{frac}"),
            SplitSpec::Temporal { frac } => write!(f, "temporal:{frac}"),
        }
    }
}

impl FromStr for SplitSpec {
    type Err = DatasetError;

    /// `hybrid:0.6,0.2,0.2[,stratified]`, `spatial:0.5`, `temporal:0.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidSplit(format!("cannot parse `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let mut parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        let stratified = parts.last() == Some(&"stratified");
        if stratified {
            parts.pop();
        }
        let nums: Vec<f64> = parts.iter().map(|p| p.parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let spec = match (kind, nums.as_slice()) {
            ("hybrid", &[train, val, test]) => SplitSpec::Hybrid {
                train,
                val,
                test,
                stratified,
            },
            ("spatial", &[frac]) if !stratified => SplitSpec::Spatial { frac },
            ("temporal", &[frac]) if !stratified => SplitSpec::Temporal { frac },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        match *self {
            SplitSpec::Hybrid { train, val, test, .. } => {
                let ok = [train, val, test].iter().all(|f| (0.0..=1.0).contains(f)) && train + val + test <= 1.0 + 1e-9;
                if !ok {
                    return Err(DatasetError::InvalidSplit(format!(
                        "fractions ({train}, {val}, {test}) must be in [0, 1] and sum to at most 1"
                    )));
                }
            }
            SplitSpec::Spatial { frac } | SplitSpec::Temporal { frac } => {
                if !(frac > 0.0 && frac < 1.0) {
                    return Err(DatasetError::InvalidSplit(format!("fraction {frac} must be in (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

fn labeled_cells(ds: &SeuDataset, keep: impl Fn(Label) -> bool) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for (r, s) in ds.samples.iter().enumerate() {
        for (c, &l) in s.labels.iter().enumerate() {
            if l.is_labeled() && keep(l) {
                cells.push((r, c));
            }
        }
    }
    cells
}

fn round_count(frac: f64, n: usize) -> usize {
    ((frac * n as f64).round() as usize).min(n)
}

fn assign(masks: &mut Masks, cells: &[(usize, usize)], fractions: (f64, f64, f64)) {
    let n = cells.len();
    let (train, val, test) = fractions;
    let n_train = round_count(train, n);
    let n_val = round_count(val, n).min(n - n_train);
    let n_test = if (train + val + test - 1.0).abs() < 1e-9 {
        n - n_train - n_val
    } else {
        round_count(test, n).min(n - n_train - n_val)
    };
    for (k, &(r, c)) in cells.iter().enumerate() {
        if k < n_train {
            masks.train.set(r, c, true);
        } else if k < n_train + n_val {
            masks.val.set(r, c, true);
        } else if k < n_train + n_val + n_test {
            masks.test.set(r, c, true);
        }
    }
}

/// Uniform random partition of all labeled cells. Counts are
/// `round(frac · N)`; when the fractions sum to 1 the test set takes the
/// remainder. With `stratified`, each class is partitioned separately.
pub fn split_hybrid(
    ds: &SeuDataset,
    fractions: (f64, f64, f64),
    seed: u64,
    stratified: bool,
) -> Result<Masks, DatasetError> {
    SplitSpec::Hybrid {
        train: fractions.0,
        val: fractions.1,
        test: fractions.2,
        stratified,
    }
    .validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Masks::empty(ds.num_times(), ds.num_nodes());
    if stratified {
        for class in [Label::Undetected, Label::Detected] {
            let mut cells = labeled_cells(ds, |l| l == class);
            cells.shuffle(&mut rng);
            assign(&mut masks, &cells, fractions);
        }
    } else {
        let mut cells = labeled_cells(ds, |_| true);
        cells.shuffle(&mut rng);
        assign(&mut masks, &cells, fractions);
    }
    Ok(masks)
}

/// Per injection time, an independent random `⌊frac·n⌋` of the labeled
/// flip-flops train; the rest split evenly between val and test (val gets
/// the smaller half).
pub fn split_spatial(ds: &SeuDataset, frac: f64, seed: u64) -> Result<Masks, DatasetError> {
    SplitSpec::Spatial { frac }.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Masks::empty(ds.num_times(), ds.num_nodes());
    for (r, s) in ds.samples.iter().enumerate() {
        let mut ffs: Vec<usize> = (0..s.labels.len()).filter(|&c| s.labels[c].is_labeled()).collect();
        ffs.shuffle(&mut rng);
        let n_train = (frac * ffs.len() as f64).floor() as usize;
        let n_val = (ffs.len() - n_train) / 2;
        for (k, &c) in ffs.iter().enumerate() {
            let m = if k < n_train {
                &mut masks.train
            } else if k < n_train + n_val {
                &mut masks.val
            } else {
                &mut masks.test
            };
            m.set(r, c, true);
        }
    }
    Ok(masks)
}

/// A random `⌊frac·T⌋` of the injection times are fully train; the remaining
/// times split evenly between val and test.
pub fn split_temporal(ds: &SeuDataset, frac: f64, seed: u64) -> Result<Masks, DatasetError> {
    SplitSpec::Temporal { frac }.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Masks::empty(ds.num_times(), ds.num_nodes());
    let mut rows: Vec<usize> = (0..ds.num_times()).collect();
    rows.shuffle(&mut rng);
    let n_train = (frac * rows.len() as f64).floor() as usize;
    let n_val = (rows.len() - n_train) / 2;
    for (k, &r) in rows.iter().enumerate() {
        let m = if k < n_train {
            &mut masks.train
        } else if k < n_train + n_val {
            &mut masks.val
        } else {
            &mut masks.test
        };
        for (c, l) in ds.samples[r].labels.iter().enumerate() {
            m.set(r, c, l.is_labeled());
        }
    }
    Ok(masks)
}
