use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridPoint, Metrics, TrainError};

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, n })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_mean_std(self.mean, self.std))
    }
}

/// `96.15 ± 1.27`
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Metrics aggregated across runs. Undefined precision/recall values are
/// left out of the mean and counted separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: Option<MeanStd>,
    pub precision_undefined: usize,
    pub recall: Option<MeanStd>,
    pub recall_undefined: usize,
    pub accuracy: MeanStd,
}

impl MetricSummary {
    fn of(metrics: &[Metrics]) -> Option<Self> {
        let defined = |f: fn(&Metrics) -> Option<f64>| -> (Vec<f64>, usize) {
            let v: Vec<f64> = metrics.iter().filter_map(f).collect();
            let missing = metrics.len() - v.len();
            (v, missing)
        };
        let (p, pu) = defined(|m| m.precision);
        let (r, ru) = defined(|m| m.recall);
        let acc: Vec<f64> = metrics.iter().map(|m| m.accuracy).collect();
        Some(MetricSummary {
            precision: MeanStd::of(&p),
            precision_undefined: pu,
            recall: MeanStd::of(&r),
            recall_undefined: ru,
            accuracy: MeanStd::of(&acc)?,
        })
    }
}

/// One end-to-end run of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub val: Metrics,
    pub test: Metrics,
    /// Validation minus test accuracy of every experiment in the run,
    /// tuning runs included.
    pub gaps: Vec<f64>,
    pub selected: Option<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub runs: Vec<RunRecord>,
    /// Seeds whose run failed, with the error.
    pub failures: Vec<(u64, String)>,
    pub val: MetricSummary,
    pub test: MetricSummary,
    pub gap_stats: Option<BoxStats>,
}

impl RepeatReport {
    pub fn gaps(&self) -> Vec<f64> {
        self.runs.iter().flat_map(|r| r.gaps.iter().copied()).collect()
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let cell = |m: Option<MeanStd>, undefined: usize| match (m, undefined) {
            (Some(m), 0) => m.to_string(),
            (Some(m), u) => format!("{m} ({u} undefined)"),
            (None, _) => "undefined".to_string(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:<28} {:<28}", "metric", "validation", "test");
        let rows = [
            ("precision", cell(self.val.precision, self.val.precision_undefined), cell(self.test.precision, self.test.precision_undefined)),
            ("recall", cell(self.val.recall, self.val.recall_undefined), cell(self.test.recall, self.test.recall_undefined)),
            ("accuracy", self.val.accuracy.to_string(), self.test.accuracy.to_string()),
        ];
        for (name, v, t) in rows {
            let _ = writeln!(s, "{name:<10} {v:<28} {t:<28}");
        }
        let _ = writeln!(s, "runs: {} ok, {} failed", self.runs.len(), self.failures.len());
        if let Some(b) = &self.gap_stats {
            let _ = writeln!(
                s,
                "generalization gap: min {:.2}  p25 {:.2}  median {:.2}  p75 {:.2}  max {:.2}",
                b.min, b.p25, b.median, b.p75, b.max
            );
        }
        s
    }
}

/// Runs `pipeline` once per seed (in parallel) and aggregates. Fails only if
/// every seed fails.
pub fn repeat_experiments<F>(seeds: &[u64], pipeline: F) -> Result<RepeatReport, TrainError>
where
    F: Fn(u64) -> Result<RunRecord, TrainError> + Sync,
{
    if seeds.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let results: Vec<(u64, Result<RunRecord, TrainError>)> = seeds.par_iter().map(|&s| (s, pipeline(s))).collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for (seed, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                failures.push((seed, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    match RepeatReport::from_runs(runs, failures) {
        Some(r) => Ok(r),
        None => Err(first_err.expect("at least one seed ran")),
    }
}

impl RepeatReport {
    /// Aggregates finished runs; `None` when there are none.
    pub fn from_runs(runs: Vec<RunRecord>, failures: Vec<(u64, String)>) -> Option<Self> {
        let val: Vec<Metrics> = runs.iter().map(|r| r.val).collect();
        let test: Vec<Metrics> = runs.iter().map(|r| r.test).collect();
        let gaps: Vec<f64> = runs.iter().flat_map(|r| r.gaps.iter().copied()).collect();
        Some(RepeatReport {
            val: MetricSummary::of(&val)?,
            test: MetricSummary::of(&test)?,
            gap_stats: generalization_report(&gaps),
            runs,
            failures,
        })
    }
}

/// Five-number summary of a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

/// Percentile `p ∈ [0, 100]` of ascending `sorted` by linear interpolation
/// between closest ranks (position `p/100 · (n − 1)`).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box statistics of validation-minus-test accuracy gaps; `None` for no gaps.
pub fn generalization_report(gaps: &[f64]) -> Option<BoxStats> {
    if gaps.is_empty() {
        return None;
    }
    let mut s = gaps.to_vec();
    s.sort_by(f64::total_cmp);
    Some(BoxStats {
        min: s[0],
        p25: percentile(&s, 25.0),
        median: percentile(&s, 50.0),
        p75: percentile(&s, 75.0),
        max: s[s.len() - 1],
    })
}
