//! Frame-by-frame simulation of an imperfect detector watching an object on a
//! periodic trajectory.
//!
//! For a recall operating point the PR curve gives the precision, which fixes
//! the per-frame probability of missing the object and of emitting a spurious
//! box. True boxes are jittered around the nominal position; spurious boxes are
//! uniform over the frame. Timestamps of both carry Gaussian jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Detection, NominalTrajectory, Point2, PrCurveModel, TrajectoryId, Truth, FRAME_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Seconds between frames.
    pub dt: f64,
    /// Standard deviation of the box-center jitter, frame units.
    pub pos_noise_sigma: f64,
    /// Standard deviation of the timestamp jitter, seconds.
    pub time_noise_sigma: f64,
    pub n_periods: usize,
    pub seed: u64,
    /// The object lags the run clock by this many seconds: at run time `t`
    /// it sits where the nominal trajectory puts it at `t - delay`.
    #[serde(default)]
    pub delay: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            pos_noise_sigma: 0.1,
            time_noise_sigma: 5e-3,
            n_periods: 5,
            seed: 0,
            delay: 0.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.n_periods < 1 {
            return Err(Error::InvalidParameter("n_periods must be at least 1".into()));
        }
        if !(self.pos_noise_sigma >= 0.0 && self.time_noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise sigmas must be non-negative".into()));
        }
        if !self.delay.is_finite() {
            return Err(Error::InvalidParameter("delay must be finite".into()));
        }
        Ok(())
    }

    /// Number of frames covering `n_periods` periods of `traj`.
    pub fn n_frames(&self, traj: &NominalTrajectory) -> usize {
        (self.n_periods as f64 * traj.period / self.dt).round() as usize
    }
}

/// Output of one simulated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub detections: Vec<Detection>,
    pub n_frames: usize,
    /// Frames in which the object is truly in view.
    pub n_obj: usize,
    pub config: SimulationConfig,
    pub trajectory: TrajectoryId,
}

impl RunRecord {
    pub fn count(&self, truth: Truth) -> usize {
        self.detections.iter().filter(|d| d.truth == truth).count()
    }

    pub fn observations(&self) -> Vec<(Point2, f64)> {
        self.detections.iter().map(Detection::observation).collect()
    }

    /// Same run restricted to the detections accepted by `keep`.
    pub fn retain(&self, keep: impl Fn(&Detection) -> bool) -> RunRecord {
        RunRecord {
            detections: self.detections.iter().filter(|d| keep(d)).copied().collect(),
            ..self.clone()
        }
    }
}

/// Per-frame probabilities of a missed object and of a spurious box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FailureProbabilities {
    pub p_fn: f64,
    /// Expected false positives per frame; may exceed 1 for weak detectors.
    pub p_fp: f64,
}

impl FailureProbabilities {
    /// `p_fp` as a Bernoulli probability.
    pub fn p_fp_clamped(&self) -> f64 {
        self.p_fp.clamp(0.0, 1.0)
    }
}

pub fn failure_probabilities(
    recall: f64,
    precision: f64,
    n_frames: usize,
    n_obj: usize,
) -> Result<FailureProbabilities> {
    if !(0.0..=1.0).contains(&recall) {
        return Err(Error::InvalidParameter(format!("recall must lie in [0, 1], got {recall}")));
    }
    if !(precision <= 1.0) {
        return Err(Error::InvalidParameter(format!("precision must be <= 1, got {precision}")));
    }
    if !(precision > 0.0) {
        return Err(Error::ZeroPrecision(precision));
    }
    if n_frames == 0 {
        return Err(Error::InvalidParameter("n_frames must be at least 1".into()));
    }
    let p_fn = 1.0 - recall;
    let p_fp = (n_obj as f64 * (1.0 - p_fn) / n_frames as f64) * ((1.0 - precision) / precision);
    Ok(FailureProbabilities { p_fn, p_fp })
}

/// Simulates one run of `cfg.n_periods` periods at the given recall, reading
/// the matching precision off `pr`.
pub fn simulate_run(
    traj: &NominalTrajectory,
    pr: &PrCurveModel,
    recall: f64,
    cfg: &SimulationConfig,
) -> Result<RunRecord> {
    if !(0.0..=1.0).contains(&recall) {
        return Err(Error::InvalidParameter(format!("recall must lie in [0, 1], got {recall}")));
    }
    simulate_operating_point(traj, recall, pr.precision(recall), cfg)
}

/// Simulates one run at an explicit `(recall, precision)` operating point.
pub fn simulate_operating_point(
    traj: &NominalTrajectory,
    recall: f64,
    precision: f64,
    cfg: &SimulationConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    let n_frames = cfg.n_frames(traj);
    let frame_time = |k: usize| k as f64 * cfg.dt;
    let object_at = |t: f64| traj.position(t - cfg.delay);
    let n_obj = (0..n_frames).filter(|&k| object_at(frame_time(k)).is_some()).count();
    let probs = failure_probabilities(recall, precision, n_frames, n_obj)?;
    let p_fp = probs.p_fp_clamped();
    if probs.p_fp > 1.0 {
        log::debug!("false-positive rate {:.3} per frame clamped to 1 at recall {recall}", probs.p_fp);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Normal::new only fails on a negative or NaN sigma, which validate() excludes.
    let pos_noise = Normal::new(0.0, cfg.pos_noise_sigma).expect("validated sigma");
    let time_noise = Normal::new(0.0, cfg.time_noise_sigma).expect("validated sigma");

    let mut detections = Vec::new();
    for k in 0..n_frames {
        let t = frame_time(k);
        if let Some(nominal) = object_at(t) {
            if rng.random::<f64>() >= probs.p_fn {
                let pos = Point2::new(
                    nominal.x + pos_noise.sample(&mut rng),
                    nominal.y + pos_noise.sample(&mut rng),
                );
                detections.push(Detection {
                    pos,
                    t: (t + time_noise.sample(&mut rng)).max(0.0),
                    truth: Truth::TruePositive,
                });
            }
        }
        if p_fp > 0.0 && rng.random::<f64>() < p_fp {
            let pos = Point2::new(
                rng.random_range(0.0..FRAME_SIZE),
                rng.random_range(0.0..FRAME_SIZE),
            );
            detections.push(Detection {
                pos,
                t: (t + time_noise.sample(&mut rng)).max(0.0),
                truth: Truth::FalsePositive,
            });
        }
    }

    Ok(RunRecord {
        detections,
        n_frames,
        n_obj,
        config: *cfg,
        trajectory: traj.id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PrLabel;

    fn pr3() -> PrCurveModel {
        PrCurveModel::from_average_precision(0.942, PrLabel::PR3).unwrap()
    }

    /// Exact binomial CDF by direct summation in log space.
    fn binomial_cdf(n: u64, p: f64, k: u64) -> f64 {
        let mut log_fact = vec![0.0f64; n as usize + 1];
        for i in 1..=n as usize {
            log_fact[i] = log_fact[i - 1] + (i as f64).ln();
        }
        (0..=k)
            .map(|i| {
                let i = i as usize;
                let n = n as usize;
                (log_fact[n] - log_fact[i] - log_fact[n - i]
                    + i as f64 * p.ln()
                    + (n - i) as f64 * (1.0 - p).ln())
                .exp()
            })
            .sum()
    }

    #[test]
    fn perfect_detector_never_fails() {
        let p = failure_probabilities(1.0, 1.0, 240, 156).unwrap();
        assert_eq!((p.p_fn, p.p_fp), (0.0, 0.0));
    }

    #[test]
    fn failure_probabilities_arithmetic() {
        let p = failure_probabilities(0.9, 0.9, 240, 156).unwrap();
        assert!((p.p_fn - 0.1).abs() < 1e-12);
        let oracle = (156.0 * 0.9 / 240.0) * (0.1 / 0.9);
        assert!((p.p_fp - oracle).abs() < 1e-12);
        assert!((p.p_fp - 0.065).abs() < 1e-12);

        let p = failure_probabilities(0.5, 1.0, 240, 156).unwrap();
        assert_eq!((p.p_fn, p.p_fp), (0.5, 0.0));
    }

    #[test]
    fn zero_precision_is_a_domain_error() {
        assert!(matches!(
            failure_probabilities(0.5, 0.0, 240, 156),
            Err(Error::ZeroPrecision(_))
        ));
    }

    #[test]
    fn recall_zero_gives_no_true_positives() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma1);
        let run = simulate_run(&traj, &pr3(), 0.0, &SimulationConfig::default()).unwrap();
        assert_eq!(run.count(Truth::TruePositive), 0);
    }

    #[test]
    fn noiseless_perfect_run_lies_on_the_trajectory() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma2);
        let cfg = SimulationConfig {
            pos_noise_sigma: 0.0,
            time_noise_sigma: 0.0,
            ..SimulationConfig::default()
        };
        let run = simulate_operating_point(&traj, 1.0, 1.0, &cfg).unwrap();
        assert_eq!(run.count(Truth::FalsePositive), 0);
        assert_eq!(run.count(Truth::TruePositive), run.n_obj);
        for d in &run.detections {
            let k = (d.t / cfg.dt).round();
            assert_eq!(d.t, k * cfg.dt);
            assert_eq!(Some(d.pos), traj.position(d.t));
        }
    }

    #[test]
    fn true_positive_count_is_binomial() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma3);
        let cfg = SimulationConfig {
            n_periods: 3,
            seed: 11,
            ..SimulationConfig::default()
        };
        let run = simulate_run(&traj, &pr3(), 0.9, &cfg).unwrap();
        let n = run.n_obj as u64;
        let tp = run.count(Truth::TruePositive) as u64;
        let lo = (0..=n).find(|&k| binomial_cdf(n, 0.9, k) >= 0.0005).unwrap();
        let hi = (0..=n).find(|&k| binomial_cdf(n, 0.9, k) >= 0.9995).unwrap();
        assert!(lo <= tp && tp <= hi, "tp={tp} outside [{lo}, {hi}] for n={n}");
    }

    #[test]
    fn n_obj_counts_present_frames() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma1);
        let cfg = SimulationConfig {
            n_periods: 3,
            ..SimulationConfig::default()
        };
        let run = simulate_run(&traj, &pr3(), 0.5, &cfg).unwrap();
        assert_eq!(run.n_frames, 240);
        // phases 0.0, 0.1, ..., 5.2 inclusive
        assert_eq!(run.n_obj, 3 * 53);
        assert!(run.n_obj <= run.n_frames);
    }

    #[test]
    fn same_seed_same_run() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma3);
        let cfg = SimulationConfig {
            seed: 99,
            ..SimulationConfig::default()
        };
        let a = simulate_run(&traj, &pr3(), 0.7, &cfg).unwrap();
        let b = simulate_run(&traj, &pr3(), 0.7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_run(&traj, &pr3(), 0.7, &SimulationConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn detections_sorted_and_non_negative() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma1);
        let run = simulate_run(&traj, &pr3(), 0.9, &SimulationConfig::default()).unwrap();
        for d in &run.detections {
            assert!(d.t >= 0.0);
            assert!(d.pos.is_finite());
        }
        let frames: Vec<i64> = run
            .detections
            .iter()
            .map(|d| (d.t / 0.1).round() as i64)
            .collect();
        assert!(frames.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn true_positives_stay_near_their_nominal_position() {
        // P(radius > 6 sigma) = exp(-18) ~ 1.5e-8 per detection.
        let traj = NominalTrajectory::new(TrajectoryId::Gamma2);
        let cfg = SimulationConfig {
            n_periods: 50,
            seed: 5,
            ..SimulationConfig::default()
        };
        let run = simulate_run(&traj, &pr3(), 0.9, &cfg).unwrap();
        for d in run.detections.iter().filter(|d| d.truth.is_true_positive()) {
            let k = (d.t / cfg.dt).round();
            let nominal = traj.position(k * cfg.dt).unwrap();
            assert!(d.pos.distance(&nominal) < 6.0 * cfg.pos_noise_sigma);
        }
    }

    #[test]
    fn long_run_matches_operating_point() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma1);
        let pr = pr3();
        let recall = 0.8;
        let cfg = SimulationConfig {
            n_periods: 200,
            seed: 3,
            ..SimulationConfig::default()
        };
        let run = simulate_run(&traj, &pr, recall, &cfg).unwrap();
        let tp = run.count(Truth::TruePositive) as f64;
        let fp = run.count(Truth::FalsePositive) as f64;
        assert!((tp / run.n_obj as f64 - recall).abs() < 0.02);
        assert!((tp / (tp + fp) - pr.precision(recall)).abs() < 0.02);
    }

    #[test]
    fn delay_shifts_the_object() {
        let traj = NominalTrajectory::new(TrajectoryId::Gamma1);
        let cfg = SimulationConfig {
            pos_noise_sigma: 0.0,
            time_noise_sigma: 0.0,
            delay: 3.0,
            ..SimulationConfig::default()
        };
        let run = simulate_operating_point(&traj, 1.0, 1.0, &cfg).unwrap();
        // the object is mid-traversal at t = 0 and re-enters at t = 3
        assert!(run.detections.iter().all(|d| !(0.25..2.95).contains(&d.t)));
        let entry = run.detections.iter().find(|d| d.t > 2.95).unwrap();
        assert!((entry.t - 3.0).abs() < 1e-9);
        assert_eq!(entry.pos, Point2::new(0.0, 2.0));
        assert!(run.detections[0].t < 1e-9);
    }
}
