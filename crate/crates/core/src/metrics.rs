//! Detection-quality accounting against simulator ground truth:
//! precision, recall, F1, PR series, average precision and optimal F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{DetectionFilter, SyncStatus};
use crate::seed::derive_index_seed;
use crate::simulator::{simulate_run, RunRecord, SimulationConfig};
use crate::types::{NominalTrajectory, PrCurveModel, Truth};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Counts for `run` after a filter kept the detections flagged in `kept`.
/// A discarded true positive becomes a false negative.
pub fn confusion_from_run(run: &RunRecord, kept: &[bool]) -> Result<ConfusionCounts> {
    if kept.len() != run.detections.len() {
        return Err(Error::InvalidParameter(format!(
            "{} decisions for {} detections",
            kept.len(),
            run.detections.len()
        )));
    }
    let emitted_tp = run.count(Truth::TruePositive);
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: run.n_obj.saturating_sub(emitted_tp),
    };
    for (d, &keep) in run.detections.iter().zip(kept) {
        match (d.truth, keep) {
            (Truth::TruePositive, true) => c.tp += 1,
            (Truth::TruePositive, false) => c.fn_ += 1,
            (Truth::FalsePositive, true) => c.fp += 1,
            (Truth::FalsePositive, false) => {}
        }
    }
    Ok(c)
}

/// `(precision, recall)`; precision is 1 with no predictions and recall is 1
/// with nothing to find.
pub fn precision_recall(c: &ConfusionCounts) -> (f64, f64) {
    let precision = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let recall = if c.tp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    (precision, recall)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Reference,
    PostFilterAuto,
    PostFilterManual,
}

impl SeriesKind {
    pub fn token(self) -> &'static str {
        match self {
            SeriesKind::Reference => "reference",
            SeriesKind::PostFilterAuto => "post_filter_auto",
            SeriesKind::PostFilterManual => "post_filter_manual",
        }
    }
}

impl std::str::FromStr for SeriesKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(SeriesKind::Reference),
            "post_filter_auto" => Ok(SeriesKind::PostFilterAuto),
            "post_filter_manual" => Ok(SeriesKind::PostFilterManual),
            other => Err(Error::UnknownToken {
                kind: "series",
                token: other.to_string(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// PR operating points sorted by strictly increasing recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrSeries {
    points: Vec<PrPoint>,
    pub kind: SeriesKind,
}

impl PrSeries {
    /// Sorts by recall and merges points sharing a recall, keeping the best
    /// precision.
    pub fn new(points: impl IntoIterator<Item = PrPoint>, kind: SeriesKind) -> Result<PrSeries> {
        let mut pts: Vec<PrPoint> = points.into_iter().collect();
        for p in &pts {
            if !(0.0..=1.0).contains(&p.recall) || !(0.0..=1.0).contains(&p.precision) {
                return Err(Error::InvalidParameter(format!(
                    "PR point out of [0, 1]^2: ({}, {})",
                    p.recall, p.precision
                )));
            }
        }
        pts.sort_by(|a, b| a.recall.total_cmp(&b.recall).then(b.precision.total_cmp(&a.precision)));
        pts.dedup_by(|later, kept| later.recall == kept.recall);
        Ok(PrSeries { points: pts, kind })
    }

    pub fn from_pairs(pairs: &[(f64, f64)], kind: SeriesKind) -> Result<PrSeries> {
        Self::new(
            pairs.iter().map(|&(recall, precision)| PrPoint { recall, precision }),
            kind,
        )
    }

    pub fn points(&self) -> &[PrPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_recall(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.recall)
    }
}

/// Area under the monotone precision envelope, trapezoidal from recall 0
/// to the largest observed recall.
pub fn average_precision(s: &PrSeries) -> f64 {
    let pts = s.points();
    if pts.is_empty() {
        return 0.0;
    }
    // envelope: best precision at any recall >= r
    let mut env: Vec<f64> = pts.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut area = 0.0;
    let (mut r_prev, mut p_prev) = (0.0, env[0]);
    for (p, &e) in pts.iter().zip(&env) {
        area += (p.recall - r_prev) * 0.5 * (e + p_prev);
        r_prev = p.recall;
        p_prev = e;
    }
    area
}

/// Best F1 over the series and the recall where it is reached; ties go to
/// the higher recall.
pub fn optimal_f1(s: &PrSeries) -> (f64, f64) {
    s.points()
        .iter()
        .map(|p| (f1(p.precision, p.recall), p.recall))
        .fold((0.0, 0.0), |best, cur| if cur.0 >= best.0 { cur } else { best })
}

/// Default recall grid: 0.05, 0.10, ..., 0.95.
///
/// Recall 1 is left out because every curve of the `1 - r^beta` family has
/// zero precision there.
pub fn default_recall_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// One validation run of [`post_filter_pr`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub grid_recall: f64,
    pub seed: u64,
    pub reference: ConfusionCounts,
    pub post: ConfusionCounts,
    pub sync: SyncStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostFilterEvaluation {
    pub reference: PrSeries,
    pub post: PrSeries,
    pub outcomes: Vec<GridOutcome>,
}

/// Simulates one validation run per grid recall, filters it, and returns the
/// reference (unfiltered) and post-filter PR series.
///
/// Run `i` uses the seed `derive_index_seed(validation_cfg.seed, i)`.
pub fn post_filter_pr<F: DetectionFilter + ?Sized>(
    traj: &NominalTrajectory,
    pr_model: &PrCurveModel,
    filter: &F,
    recall_grid: &[f64],
    validation_cfg: &SimulationConfig,
    post_kind: SeriesKind,
) -> Result<PostFilterEvaluation> {
    let mut outcomes = Vec::with_capacity(recall_grid.len());
    for (i, &recall) in recall_grid.iter().enumerate() {
        if !(recall > 0.0 && recall <= 1.0) {
            return Err(Error::InvalidParameter(format!("grid recall {recall} outside (0, 1]")));
        }
        let cfg = SimulationConfig {
            seed: derive_index_seed(validation_cfg.seed, i as u64),
            ..*validation_cfg
        };
        let run = simulate_run(traj, pr_model, recall, &cfg)?;
        let decisions = filter.filter_run(&run.observations());
        let reference = confusion_from_run(&run, &vec![true; run.detections.len()])?;
        let post = confusion_from_run(&run, &decisions.keep)?;
        outcomes.push(GridOutcome {
            grid_recall: recall,
            seed: cfg.seed,
            reference,
            post,
            sync: decisions.sync,
        });
    }
    let series = |pick: fn(&GridOutcome) -> &ConfusionCounts, kind| {
        PrSeries::new(
            outcomes.iter().map(|o| {
                let (precision, recall) = precision_recall(pick(o));
                PrPoint { recall, precision }
            }),
            kind,
        )
    };
    Ok(PostFilterEvaluation {
        reference: series(|o| &o.reference, SeriesKind::Reference)?,
        post: series(|o| &o.post, post_kind)?,
        outcomes,
    })
}
