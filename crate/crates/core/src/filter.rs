//! Online box filter built from a trained GP.
//!
//! A detection at `(pos, t)` is kept when the GP is confident about `pos`
//! (`sigma_hat < sigma_max`) and the predicted phase agrees with the run's
//! clock (`d_circ(t_hat, (t - phase_offset) mod period) < sigma_max`), where
//! `sigma_max` is the largest predictive std over the training inputs.
//!
//! The filter only ever sees `(pos, t)`; ground-truth tags never reach it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, GpModelFile, GpPrediction};
use crate::preprocess::fold;
use crate::types::Point2;

/// Most detections used for phase synchronization.
pub const SYNC_PREFIX_DETECTIONS: usize = 20;

/// Circular distance between two phases on a circle of circumference `period`.
pub fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Candidate minimizing the summed circular distance to all values
/// (first such candidate in input order on ties).
pub fn circular_median(values: &[f64], period: f64) -> Option<f64> {
    values
        .iter()
        .map(|&c| (c, values.iter().map(|&v| circular_distance(c, v, period)).sum::<f64>()))
        .fold(None, |best: Option<(f64, f64)>, (c, cost)| match best {
            Some((_, b)) if b <= cost => best,
            _ => Some((c, cost)),
        })
        .map(|(c, _)| c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiscardReason {
    /// The position is too far from anything seen in training.
    UncertaintyTooHigh,
    /// The position fits the trajectory, but at another time.
    TimeMismatch,
}

impl DiscardReason {
    pub fn token(self) -> &'static str {
        match self {
            DiscardReason::UncertaintyTooHigh => "uncertainty_too_high",
            DiscardReason::TimeMismatch => "time_mismatch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Keep,
    Discard(DiscardReason),
}

impl Decision {
    pub fn is_keep(self) -> bool {
        matches!(self, Decision::Keep)
    }
}

/// A decision together with the GP output that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub prediction: GpPrediction,
    /// Run time folded to the training phase.
    pub run_phase: f64,
    pub decision: Decision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncStatus {
    Synced { used: usize },
    NotSynced,
}

impl SyncStatus {
    pub fn is_synced(self) -> bool {
        matches!(self, SyncStatus::Synced { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel {
    gp: GpModel,
    period: f64,
    sigma_max: f64,
    phase_offset: f64,
}

/// Largest predictive std of `gp` over `inputs`.
pub fn max_training_sigma(gp: &GpModel, inputs: &[Point2]) -> Option<f64> {
    inputs
        .iter()
        .map(|p| gp.predict(*p).sigma_hat)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
}

impl FilterModel {
    /// Builds an unsynchronized filter (`phase_offset = 0`).
    pub fn build(gp: GpModel, training_inputs: &[Point2], period: f64) -> Result<FilterModel> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidParameter(format!("period must be > 0, got {period}")));
        }
        let sigma_max = max_training_sigma(&gp, training_inputs).ok_or(Error::EmptyTrainingSet)?;
        Ok(FilterModel {
            gp,
            period,
            sigma_max,
            phase_offset: 0.0,
        })
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn phase_offset(&self) -> f64 {
        self.phase_offset
    }

    pub fn with_phase_offset(&self, offset: f64) -> FilterModel {
        FilterModel {
            phase_offset: offset.rem_euclid(self.period).min(self.period.next_down()),
            ..self.clone()
        }
    }

    /// Aligns run time with training phase using the detections of `prefix`
    /// that pass the uncertainty test.
    pub fn sync_phase(&self, prefix: &[(Point2, f64)]) -> (FilterModel, SyncStatus) {
        let residuals: Vec<f64> = prefix
            .iter()
            .filter_map(|&(pos, t)| {
                let pred = self.gp.predict(pos);
                (pred.sigma_hat < self.sigma_max).then(|| (t - pred.t_hat).rem_euclid(self.period))
            })
            .collect();
        match circular_median(&residuals, self.period) {
            Some(offset) => (
                self.with_phase_offset(offset),
                SyncStatus::Synced { used: residuals.len() },
            ),
            None => (self.clone(), SyncStatus::NotSynced),
        }
    }

    pub fn evaluate(&self, pos: Point2, t: f64) -> Evaluation {
        let prediction = self.gp.predict(pos);
        let run_phase = fold(t, self.phase_offset, self.period);
        let decision = if !(prediction.sigma_hat < self.sigma_max) {
            Decision::Discard(DiscardReason::UncertaintyTooHigh)
        } else if !(circular_distance(prediction.t_hat, run_phase, self.period) < self.sigma_max) {
            Decision::Discard(DiscardReason::TimeMismatch)
        } else {
            Decision::Keep
        };
        Evaluation {
            prediction,
            run_phase,
            decision,
        }
    }

    pub fn apply(&self, pos: Point2, t: f64) -> Decision {
        self.evaluate(pos, t).decision
    }

    pub fn to_file(&self) -> FilterModelFile {
        FilterModelFile {
            gp: self.gp.to_file(),
            period: self.period,
            sigma_max: self.sigma_max,
            phase_offset: self.phase_offset,
        }
    }

    pub fn from_file(file: FilterModelFile) -> Result<FilterModel> {
        let gp = GpModel::from_file(file.gp)?;
        if !(file.period > 0.0) || !(0.0..file.period).contains(&file.phase_offset) || !(file.sigma_max > 0.0) {
            return Err(Error::Malformed("filter period, offset or sigma_max out of range".into()));
        }
        Ok(FilterModel {
            gp,
            period: file.period,
            sigma_max: file.sigma_max,
            phase_offset: file.phase_offset,
        })
    }
}

/// Free-function form of [`FilterModel::build`].
pub fn build_filter(gp: GpModel, training_inputs: &[Point2], period: f64) -> Result<FilterModel> {
    FilterModel::build(gp, training_inputs, period)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterModelFile {
    pub gp: GpModelFile,
    pub period: f64,
    pub sigma_max: f64,
    pub phase_offset: f64,
}

/// Start of a run used for phase synchronization: the first
/// [`SYNC_PREFIX_DETECTIONS`] detections or one period of wall time,
/// whichever ends first.
pub fn sync_prefix(observations: &[(Point2, f64)], period: f64) -> &[(Point2, f64)] {
    let Some(&(_, t0)) = observations.first() else {
        return observations;
    };
    let by_time = observations.iter().take_while(|(_, t)| *t < t0 + period).count();
    &observations[..by_time.min(SYNC_PREFIX_DETECTIONS)]
}

/// Keep/discard decisions for a whole run, plus the sync outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RunDecisions {
    pub keep: Vec<bool>,
    pub sync: SyncStatus,
}

/// Anything that can filter a run of observations. Implementations only see
/// positions and timestamps.
pub trait DetectionFilter: Sync {
    fn filter_run(&self, observations: &[(Point2, f64)]) -> RunDecisions;
}

impl FilterModel {
    /// Synchronizes on the run prefix, then evaluates every observation.
    pub fn evaluate_run(&self, observations: &[(Point2, f64)]) -> (Vec<Evaluation>, SyncStatus) {
        let (synced, sync) = self.sync_phase(sync_prefix(observations, self.period));
        (observations.iter().map(|&(p, t)| synced.evaluate(p, t)).collect(), sync)
    }
}

impl DetectionFilter for FilterModel {
    fn filter_run(&self, observations: &[(Point2, f64)]) -> RunDecisions {
        let (evaluations, sync) = self.evaluate_run(observations);
        RunDecisions {
            keep: evaluations.iter().map(|e| e.decision.is_keep()).collect(),
            sync,
        }
    }
}

/// Spatial-only filter for runs without a usable period: keeps a detection
/// iff its predictive std is below the training maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyOnlyFilter {
    gp: GpModel,
    sigma_max: f64,
}

impl UncertaintyOnlyFilter {
    pub fn build(gp: GpModel, training_inputs: &[Point2]) -> Result<UncertaintyOnlyFilter> {
        let sigma_max = max_training_sigma(&gp, training_inputs).ok_or(Error::EmptyTrainingSet)?;
        Ok(UncertaintyOnlyFilter { gp, sigma_max })
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }
}

impl DetectionFilter for UncertaintyOnlyFilter {
    fn filter_run(&self, observations: &[(Point2, f64)]) -> RunDecisions {
        RunDecisions {
            keep: observations
                .iter()
                .map(|&(p, _)| self.gp.predict(p).sigma_hat < self.sigma_max)
                .collect(),
            sync: SyncStatus::NotSynced,
        }
    }
}

/// Keeps every detection.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeepAll;

impl DetectionFilter for KeepAll {
    fn filter_run(&self, observations: &[(Point2, f64)]) -> RunDecisions {
        RunDecisions {
            keep: vec![true; observations.len()],
            sync: SyncStatus::Synced { used: 0 },
        }
    }
}

/// Discards every detection.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiscardAll;

impl DetectionFilter for DiscardAll {
    fn filter_run(&self, observations: &[(Point2, f64)]) -> RunDecisions {
        RunDecisions {
            keep: vec![false; observations.len()],
            sync: SyncStatus::NotSynced,
        }
    }
}
