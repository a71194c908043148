//! Value types shared by every stage: frame points, detections, the three
//! nominal periodic trajectories and the analytic precision-recall family
//! that stands in for a detector.
//!
//! Frame coordinates live in `[0, 10] x [0, 10]`; times are in seconds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square frame, in frame units.
pub const FRAME_SIZE: f64 = 10.0;

/// Default period of every nominal trajectory, seconds.
pub const DEFAULT_PERIOD: f64 = 8.0;

/// Default time the object spends inside the frame per period, seconds.
pub const DEFAULT_TRAVERSAL: f64 = 5.2;

/// Slack on the in-frame test so that frame times such as `52 * 0.1`
/// (which round to `5.2000000000000002`) still count as present.
const PRESENCE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Simulation-only ground-truth tag of a detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Truth {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
}

impl Truth {
    pub fn is_true_positive(self) -> bool {
        matches!(self, Truth::TruePositive)
    }

    pub fn token(self) -> &'static str {
        match self {
            Truth::TruePositive => "TP",
            Truth::FalsePositive => "FP",
        }
    }
}

impl FromStr for Truth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TP" => Ok(Truth::TruePositive),
            "FP" => Ok(Truth::FalsePositive),
            other => Err(Error::UnknownToken {
                kind: "truth",
                token: other.to_string(),
            }),
        }
    }
}

/// One predicted box center with its timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub pos: Point2,
    /// Seconds since the start of the run.
    pub t: f64,
    pub truth: Truth,
}

impl Detection {
    /// The part of a detection a filter is allowed to see.
    pub fn observation(&self) -> (Point2, f64) {
        (self.pos, self.t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrajectoryId {
    #[serde(rename = "gamma1")]
    Gamma1,
    #[serde(rename = "gamma2")]
    Gamma2,
    #[serde(rename = "gamma3")]
    Gamma3,
}

impl TrajectoryId {
    pub const ALL: [TrajectoryId; 3] = [TrajectoryId::Gamma1, TrajectoryId::Gamma2, TrajectoryId::Gamma3];

    pub fn token(self) -> &'static str {
        match self {
            TrajectoryId::Gamma1 => "gamma1",
            TrajectoryId::Gamma2 => "gamma2",
            TrajectoryId::Gamma3 => "gamma3",
        }
    }
}

impl fmt::Display for TrajectoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TrajectoryId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma1" => Ok(TrajectoryId::Gamma1),
            "gamma2" => Ok(TrajectoryId::Gamma2),
            "gamma3" => Ok(TrajectoryId::Gamma3),
            other => Err(Error::UnknownToken {
                kind: "trajectory",
                token: other.to_string(),
            }),
        }
    }
}

/// A periodic trajectory: the object crosses the frame along `shape` during
/// the first `traversal` seconds of every `period`, and is off-frame for the
/// remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalTrajectory {
    pub id: TrajectoryId,
    pub period: f64,
    pub traversal: f64,
}

impl NominalTrajectory {
    /// Trajectory with the default 8 s period and 5.2 s traversal.
    pub fn new(id: TrajectoryId) -> Self {
        Self {
            id,
            period: DEFAULT_PERIOD,
            traversal: DEFAULT_TRAVERSAL,
        }
    }

    pub fn with_timing(id: TrajectoryId, period: f64, traversal: f64) -> Result<Self> {
        if !(traversal > 0.0 && traversal < period) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < traversal < period, got traversal={traversal}, period={period}"
            )));
        }
        Ok(Self { id, period, traversal })
    }

    /// Parametric support curve, `u` in `[0, 1]`.
    pub fn shape(&self, u: f64) -> Point2 {
        let x = FRAME_SIZE * u;
        let y = match self.id {
            TrajectoryId::Gamma1 => 2.0 + 6.0 * u,
            TrajectoryId::Gamma2 => {
                let v = 2.0 * u - 1.0;
                1.0 + 8.0 * (1.0 - v * v)
            }
            TrajectoryId::Gamma3 => 5.0 + 2.0 * (4.0 * std::f64::consts::PI * u).sin(),
        };
        Point2::new(x, y)
    }

    /// Position at time `t` (seconds), or `None` while the object is off-frame.
    pub fn position(&self, t: f64) -> Option<Point2> {
        let phase = t.rem_euclid(self.period);
        if phase > self.traversal + PRESENCE_SLACK {
            return None;
        }
        let u = (phase / self.traversal).min(1.0);
        Some(self.shape(u))
    }

    pub fn is_present(&self, t: f64) -> bool {
        self.position(t).is_some()
    }
}

/// Free-function form of [`NominalTrajectory::position`].
pub fn nominal_position(traj: &NominalTrajectory, t: f64) -> Option<Point2> {
    traj.position(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrLabel {
    PR1,
    PR2,
    PR3,
    PR4,
}

impl PrLabel {
    pub const ALL: [PrLabel; 4] = [PrLabel::PR1, PrLabel::PR2, PrLabel::PR3, PrLabel::PR4];

    pub fn token(self) -> &'static str {
        match self {
            PrLabel::PR1 => "PR1",
            PrLabel::PR2 => "PR2",
            PrLabel::PR3 => "PR3",
            PrLabel::PR4 => "PR4",
        }
    }

    pub fn from_index(i: usize) -> Option<PrLabel> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for PrLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for PrLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PR1" => Ok(PrLabel::PR1),
            "PR2" => Ok(PrLabel::PR2),
            "PR3" => Ok(PrLabel::PR3),
            "PR4" => Ok(PrLabel::PR4),
            _ => Err(Error::UnknownToken {
                kind: "PR model",
                token: s.to_string(),
            }),
        }
    }
}

/// Analytic precision-recall curve `precision(r) = 1 - r^beta`.
///
/// Its area is `beta / (beta + 1)`, so a target average precision fixes
/// `beta` in closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurveModel {
    pub beta: f64,
    pub label: PrLabel,
}

impl PrCurveModel {
    pub fn new(beta: f64, label: PrLabel) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be finite and > 0, got {beta}")));
        }
        Ok(Self { beta, label })
    }

    /// Curve whose analytic AP equals `ap`.
    pub fn from_average_precision(ap: f64, label: PrLabel) -> Result<Self> {
        if !(ap > 0.0 && ap < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target AP must lie in (0, 1), got {ap}"
            )));
        }
        Self::new(ap / (1.0 - ap), label)
    }

    pub fn precision(&self, recall: f64) -> f64 {
        1.0 - recall.clamp(0.0, 1.0).powf(self.beta)
    }

    pub fn average_precision(&self) -> f64 {
        self.beta / (self.beta + 1.0)
    }
}
