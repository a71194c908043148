//! Turns a raw detection run into a clean, phase-aligned training set.
//!
//! 1. [`estimate_period`]: DBSCAN on timestamps separates the trajectory
//!    instances; the period is the median spacing of their first and last
//!    timestamps.
//! 2. [`align`]: timestamps are folded modulo the period, with the origin
//!    placed in the largest empty stretch of phase so no instance is split.
//! 3. [`auto_clean`]: DBSCAN on `(x, y, phase)` drops what does not repeat
//!    across instances.
//!
//! [`manual_clean`] models an annotator removing every false positive before
//! step 1.

use serde::{Deserialize, Serialize};

use crate::clustering::{dbscan, elbow_eps, ClusterLabeling, MIN_EPS};
use crate::error::{Error, Result};
use crate::simulator::RunRecord;
use crate::types::{Point2, Truth};

/// DBSCAN radius on the time axis, seconds.
pub const TIME_EPS: f64 = 0.5;
/// DBSCAN density threshold on the time axis.
pub const TIME_MIN_SAMPLES: usize = 5;
/// Fraction of the instance count required as neighbors when cleaning.
pub const CLEAN_NEIGHBOR_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedPoint {
    pub pos: Point2,
    /// Original timestamp, seconds.
    pub t: f64,
    /// `(t - phase_origin) mod period`.
    pub phase: f64,
    /// Carried for reporting only.
    pub truth: Truth,
}

impl AlignedPoint {
    pub fn as_xyp(&self) -> [f64; 3] {
        [self.pos.x, self.pos.y, self.phase]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedDataset {
    pub points: Vec<AlignedPoint>,
    pub period: f64,
    pub phase_origin: f64,
    /// Number of trajectory instances seen in training.
    pub n_training_periods: usize,
}

impl AlignedDataset {
    pub fn inputs(&self) -> Vec<Point2> {
        self.points.iter().map(|p| p.pos).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.phase).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodEstimate {
    pub period: f64,
    pub clusters: ClusterLabeling,
}

impl PeriodEstimate {
    /// Instance count implied by the time clustering.
    pub fn n_instances(&self) -> usize {
        self.clusters.n_clusters
    }
}

/// Median with the even-count convention (mean of the two middle values).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Period from the time extents `(t_min, t_max)` of consecutive clusters.
pub fn period_from_extents(extents: &[(f64, f64)]) -> Result<f64> {
    if extents.len() < 2 {
        return Err(Error::PeriodNotIdentifiable {
            clusters: extents.len(),
        });
    }
    let mut sorted = extents.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaps: Vec<f64> = sorted
        .windows(2)
        .flat_map(|w| [w[1].0 - w[0].0, w[1].1 - w[0].1])
        .collect();
    // gaps is non-empty because there are at least two extents
    Ok(median(&gaps).unwrap_or(f64::NAN))
}

pub fn estimate_period(run: &RunRecord) -> Result<PeriodEstimate> {
    estimate_period_with(run, TIME_EPS, TIME_MIN_SAMPLES)
}

/// [`estimate_period`] with explicit time-axis DBSCAN parameters.
pub fn estimate_period_with(run: &RunRecord, eps: f64, min_samples: usize) -> Result<PeriodEstimate> {
    let times: Vec<[f64; 1]> = run.detections.iter().map(|d| [d.t]).collect();
    let clusters = dbscan(&times, eps, min_samples)?;
    let extents: Vec<(f64, f64)> = clusters
        .members()
        .iter()
        .map(|m| {
            m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(times[i][0]), hi.max(times[i][0]))
            })
        })
        .collect();
    let period = period_from_extents(&extents)?;
    Ok(PeriodEstimate { period, clusters })
}

/// Phase origin placing the wrap-around boundary at the end of the largest
/// circular gap between the folded timestamps, so the first phase after the
/// gap becomes 0.
pub fn phase_origin(times: &[f64], period: f64) -> f64 {
    if times.is_empty() {
        return 0.0;
    }
    let mut phases: Vec<f64> = times.iter().map(|t| t.rem_euclid(period)).collect();
    phases.sort_unstable_by(f64::total_cmp);
    let n = phases.len();
    // gap i runs from phases[i] to phases[i + 1] (wrapping for the last one)
    let (best, gap) = (0..n)
        .map(|i| {
            let next = if i + 1 < n { phases[i + 1] } else { phases[0] + period };
            (i, next - phases[i])
        })
        .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    (phases[best] + gap).rem_euclid(period)
}

/// Folds `t` to a phase in `[0, period)`.
pub fn fold(t: f64, origin: f64, period: f64) -> f64 {
    let p = (t - origin).rem_euclid(period);
    // rem_euclid may round up to exactly `period` for tiny negative inputs
    if p >= period {
        0.0
    } else {
        p
    }
}

pub fn align(run: &RunRecord, period: f64) -> Result<AlignedDataset> {
    let times: Vec<f64> = run.detections.iter().map(|d| d.t).collect();
    let origin = phase_origin(&times, period);
    align_with_origin(run, period, origin)
}

/// Alignment with a caller-chosen phase origin.
pub fn align_with_origin(run: &RunRecord, period: f64, origin: f64) -> Result<AlignedDataset> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidParameter(format!("period must be > 0, got {period}")));
    }
    let points = run
        .detections
        .iter()
        .map(|d| AlignedPoint {
            pos: d.pos,
            t: d.t,
            phase: fold(d.t, origin, period),
            truth: d.truth,
        })
        .collect();
    Ok(AlignedDataset {
        points,
        period,
        phase_origin: origin.rem_euclid(period),
        n_training_periods: 0,
    })
}

/// Neighbor threshold used when cleaning a dataset with `n_instances` instances.
pub fn clean_min_samples(n_instances: usize) -> usize {
    ((CLEAN_NEIGHBOR_FRACTION * n_instances as f64).ceil() as usize).max(1)
}

/// Outcome of [`auto_clean`] with the parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct CleaningOutcome {
    pub dataset: AlignedDataset,
    pub eps: f64,
    pub min_samples: usize,
    pub removed: usize,
}

pub fn auto_clean(aligned: &AlignedDataset) -> Result<AlignedDataset> {
    auto_clean_detailed(aligned).map(|o| o.dataset)
}

/// [`auto_clean`] that also reports the DBSCAN parameters it chose.
pub fn auto_clean_detailed(aligned: &AlignedDataset) -> Result<CleaningOutcome> {
    let min_samples = clean_min_samples(aligned.n_training_periods);
    if aligned.is_empty() {
        return auto_clean_with(aligned, MIN_EPS, min_samples);
    }
    let xyp: Vec<[f64; 3]> = aligned.points.iter().map(AlignedPoint::as_xyp).collect();
    let eps = match elbow_eps(&xyp, min_samples) {
        Ok(eps) => eps,
        Err(Error::DegenerateGeometry(msg)) => {
            log::warn!("{msg}; cleaning with eps {MIN_EPS:e}");
            MIN_EPS
        }
        Err(e) => return Err(e),
    };
    auto_clean_with(aligned, eps, min_samples)
}

/// Cleaning pass with fixed DBSCAN parameters.
pub fn auto_clean_with(aligned: &AlignedDataset, eps: f64, min_samples: usize) -> Result<CleaningOutcome> {
    let xyp: Vec<[f64; 3]> = aligned.points.iter().map(AlignedPoint::as_xyp).collect();
    let labels = dbscan(&xyp, eps, min_samples)?;
    let points: Vec<AlignedPoint> = aligned
        .points
        .iter()
        .zip(&labels.labels)
        .filter(|(_, l)| !l.is_noise())
        .map(|(p, _)| *p)
        .collect();
    let removed = aligned.len() - points.len();
    Ok(CleaningOutcome {
        dataset: AlignedDataset {
            points,
            ..aligned.clone()
        },
        eps,
        min_samples,
        removed,
    })
}

/// Keeps only the true detections, as a human annotator would.
pub fn manual_clean(run: &RunRecord) -> RunRecord {
    run.retain(|d| d.truth.is_true_positive())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CleaningMode {
    Auto,
    Manual,
}

impl CleaningMode {
    pub const ALL: [CleaningMode; 2] = [CleaningMode::Auto, CleaningMode::Manual];

    pub fn token(self) -> &'static str {
        match self {
            CleaningMode::Auto => "auto",
            CleaningMode::Manual => "manual",
        }
    }
}

impl std::fmt::Display for CleaningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for CleaningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(CleaningMode::Auto),
            "manual" => Ok(CleaningMode::Manual),
            other => Err(Error::UnknownToken {
                kind: "cleaning mode",
                token: other.to_string(),
            }),
        }
    }
}

/// Everything the training pipeline learned from one run before GP fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTrainingSet {
    pub dataset: AlignedDataset,
    pub period_estimate: PeriodEstimate,
    pub cleaning: CleaningOutcome,
}

/// Full preprocessing chain: optional manual cleaning, period estimation,
/// alignment and automatic cleaning.
pub fn prepare_training_set(run: &RunRecord, mode: CleaningMode) -> Result<PreparedTrainingSet> {
    let cleaned;
    let source = match mode {
        CleaningMode::Manual => {
            cleaned = manual_clean(run);
            &cleaned
        }
        CleaningMode::Auto => run,
    };
    let estimate = estimate_period(source)?;
    let mut aligned = align(source, estimate.period)?;
    aligned.n_training_periods = estimate.n_instances();
    let cleaning = auto_clean_detailed(&aligned)?;
    Ok(PreparedTrainingSet {
        dataset: cleaning.dataset.clone(),
        period_estimate: estimate,
        cleaning,
    })
}
