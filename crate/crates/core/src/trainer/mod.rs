//! Training loop, metrics, grid search, and experiment aggregation.

mod report;
mod tune;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitMatrix;
use crate::dataset::{DatasetError, Masks, SeuDataset};
use crate::models::{feature_input, forward, Model, ModelError, ModelSpec};
use crate::nn::{Adam, AdamConfig, GraphContext, NnError, Tape};
use crate::waveform::WaveformError;
use crate::Scalar;

pub use report::{
    format_mean_std, generalization_report, percentile, repeat_experiments, BoxStats, MeanStd, MetricSummary,
    RepeatReport, RunRecord,
};
pub use tune::{
    feasible_times, default_grid, tune, AuditEvent, AuditLog, GridPoint, GridResult, SealedTest, Selection, TuneConfig,
    TuneInputs, TuneReport, MAX_DISTANCE_GRID, TIME_WIN_GRID,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("mask selects no cells")]
    EmptyMask,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no injection time leaves room for a {0}-cycle window")]
    NoFeasibleTimes(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::EmptyMask => TrainError::EmptyMask,
            other => TrainError::Model(ModelError::Nn(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            adam: AdamConfig::default(),
            max_epochs: 200,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's steps of the masked cross-entropy.
    pub train_loss: f64,
    /// Percent; `None` when the validation mask is empty.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters of the best-validation epoch (the last epoch without validation cells).
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Confusion counts and derived percentages; detected is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
    /// `None` when the mask holds no positives.
    pub recall: Option<f64>,
    pub accuracy: f64,
}

impl Metrics {
    /// From `(predicted, actual)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Result<Self, TrainError> {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (p, a) in pairs {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(TrainError::EmptyMask);
        }
        let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
        Ok(Metrics {
            tp,
            fp,
            tn,
            fn_,
            precision: pct(tp, tp + fp),
            recall: pct(tp, tp + fn_),
            accuracy: 100.0 * (tp + tn) as f64 / total as f64,
        })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Labeled cells of row `r` selected by `mask`, as `(node, class)`.
fn masked_row(ds: &SeuDataset, mask: &BitMatrix, r: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (c, l) in ds.samples[r].labels.iter().enumerate() {
        if let (true, Some(class)) = (mask.get(r, c), l.class()) {
            rows.push(c);
            targets.push(class);
        }
    }
    (rows, targets)
}

/// Per injection time, the predicted class of every node (`true` = detected).
pub fn predict_all<T: Scalar>(model: &Model<T>, ds: &SeuDataset) -> Result<Vec<Vec<bool>>, TrainError> {
    let ctx = GraphContext::<T>::new(&ds.graph);
    ds.samples
        .iter()
        .map(|s| Ok(model.predict(&s.x.cast(), &ctx)?))
        .collect()
}

fn metrics_from_predictions(preds: &[Vec<bool>], ds: &SeuDataset, mask: &BitMatrix) -> Result<Metrics, TrainError> {
    let mut pairs = Vec::new();
    for (r, row) in preds.iter().enumerate() {
        let (nodes, targets) = masked_row(ds, mask, r);
        pairs.extend(nodes.iter().zip(targets).map(|(&c, t)| (row[c], t == 1)));
    }
    Metrics::from_pairs(pairs)
}

/// Precision, recall and accuracy over the labeled cells of `mask`.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &SeuDataset, mask: &BitMatrix) -> Result<Metrics, TrainError> {
    if !Masks::any(mask) {
        return Err(TrainError::EmptyMask);
    }
    metrics_from_predictions(&predict_all(model, ds)?, ds, mask)
}

/// Accuracy (percent) on `eval` of always predicting the majority class of `fit`.
pub fn majority_baseline(ds: &SeuDataset, fit: &BitMatrix, eval: &BitMatrix) -> Result<f64, TrainError> {
    let count = |mask: &BitMatrix| {
        let (mut pos, mut all) = (0usize, 0usize);
        for r in 0..ds.num_times() {
            let (_, t) = masked_row(ds, mask, r);
            pos += t.iter().filter(|&&c| c == 1).count();
            all += t.len();
        }
        (pos, all)
    };
    let (pos, all) = count(fit);
    if all == 0 {
        return Err(TrainError::EmptyMask);
    }
    let majority_positive = 2 * pos > all;
    let (epos, eall) = count(eval);
    if eall == 0 {
        return Err(TrainError::EmptyMask);
    }
    let correct = if majority_positive { epos } else { eall - epos };
    Ok(100.0 * correct as f64 / eall as f64)
}

/// Trains `spec` on the train mask, one full-batch step per injection time,
/// epochs visiting the times in a seeded random order. Keeps the parameters
/// of the best validation accuracy and stops after `patience` epochs without
/// improvement.
pub fn train<T: Scalar>(
    spec: &ModelSpec,
    ds: &SeuDataset,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome<T>, TrainError> {
    let mut model = Model::<T>::new(spec.clone(), seed)?;
    let ctx = GraphContext::<T>::new(&ds.graph);
    let inputs: Vec<_> = ds.samples.iter().map(|s| s.x.cast::<T>()).collect();
    let train_rows: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..ds.num_times())
        .map(|r| {
            let (rows, targets) = masked_row(ds, &ds.masks.train, r);
            (r, rows, targets)
        })
        .filter(|(_, rows, _)| !rows.is_empty())
        .collect();
    let has_val = Masks::any(&ds.masks.val);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_e90c);
    let mut adam = Adam::new(opts.adam, &model.params);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::nn::ParamStore<T>)> = None;
    let mut order: Vec<usize> = (0..train_rows.len()).collect();

    for epoch in 0..opts.max_epochs {
        if train_rows.is_empty() {
            return Err(TrainError::EmptyMask);
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &k in &order {
            let (r, rows, targets) = &train_rows[k];
            let tape = Tape::new();
            let p = model.params.bind(&tape);
            let logits = forward(spec, &p, feature_input(&tape, &inputs[*r]), &ctx)?;
            let loss = logits.cross_entropy(targets.as_slice().into(), rows.as_slice().into())?;
            let lv = loss.value().data()[0].wide();
            if !lv.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            loss_sum += lv;
            let grads = tape.backward(loss)?;
            adam.step(&mut model.params, &p.gradients(&grads));
        }
        if !model.params.all_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        let val_accuracy = if has_val {
            Some(evaluate(&model, ds, &ds.masks.val)?.accuracy)
        } else {
            None
        };
        log::debug!(
            "epoch {epoch}: loss {:.5}, val {}",
            loss_sum / order.len() as f64,
            val_accuracy.map_or("-".to_string(), |a| format!("{a:.2}%"))
        );
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy,
        });
        if let Some(acc) = val_accuracy {
            match &best {
                Some((b, _, _)) if acc <= *b => {}
                _ => best = Some((acc, epoch, model.params.clone())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= opts.patience {
                log::debug!("early stop at epoch {epoch}; best was epoch {best_epoch}");
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
