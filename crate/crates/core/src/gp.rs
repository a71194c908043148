//! Exact Gaussian-process regression from frame position `(x, y)` to phase.
//!
//! Squared-exponential kernel, isotropic over per-axis standardized inputs:
//!
//! ```text
//! k(a, b) = signal_std^2 * exp(-|a - b|^2 / (2 * length_scale^2))
//! ```
//!
//! plus `noise_std^2` on the diagonal. Hyperparameters maximize the log
//! marginal likelihood over a log-spaced grid, followed by a coordinate-wise
//! refinement in log space steered by the analytic gradient.
//!
//! Predictive standard deviations include the observation noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Point2;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal jitter ladder tried when a covariance matrix fails to factor.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    /// Kernel length scale, in standardized input units.
    pub length_scale: f64,
    /// Prior standard deviation of the latent function, seconds.
    pub signal_std: f64,
    /// Observation noise standard deviation, seconds.
    pub noise_std: f64,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if ok(self.length_scale) && ok(self.signal_std) && ok(self.noise_std) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "hyperparameters must be finite and > 0: {self:?}"
            )))
        }
    }

    fn to_log(self) -> [f64; 3] {
        [self.length_scale.ln(), self.signal_std.ln(), self.noise_std.ln()]
    }

    fn from_log(v: [f64; 3]) -> Self {
        Self {
            length_scale: v[0].exp(),
            signal_std: v[1].exp(),
            noise_std: v[2].exp(),
        }
    }

    /// Prior predictive standard deviation, `sqrt(signal^2 + noise^2)`.
    pub fn prior_std(&self) -> f64 {
        self.signal_std.hypot(self.noise_std)
    }
}

pub fn se_kernel(a: Point2, b: Point2, hyper: &GpHyperparams) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    hyper.signal_std.powi(2) * (-0.5 * d2 / hyper.length_scale.powi(2)).exp()
}

/// Dense lower-triangular Cholesky factor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors a symmetric row-major `n x n` matrix; `None` if not positive definite.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j = &l[j * n..j * n + j];
            let d = a[j * n + j] - row_j.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                l[i * n + j] = (a[i * n + j] - s) / djj;
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, x)| l * x).sum();
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        x
    }

    /// Solves `L^T x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| self.l[k * n + i] * x[k]).sum();
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        x
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Full inverse of `L L^T`, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }

    /// `L L^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.l[i * n + k] * self.l[j * n + k]).sum();
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

/// `K + noise^2 I`, row-major.
pub fn covariance_matrix(inputs: &[Point2], hyper: &GpHyperparams) -> Vec<f64> {
    let n = inputs.len();
    let noise_var = hyper.noise_std.powi(2);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = hyper.signal_std.powi(2) + noise_var;
        for j in 0..i {
            let v = se_kernel(inputs[i], inputs[j], hyper);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Factors `a`, escalating diagonal jitter along [`JITTER_LADDER`].
pub fn factor_with_jitter(a: &[f64], n: usize) -> Result<(Cholesky, f64)> {
    let mut work = a.to_vec();
    for &jitter in &JITTER_LADDER {
        for i in 0..n {
            work[i * n + i] = a[i * n + i] + jitter;
        }
        if let Some(c) = Cholesky::factor(&work, n) {
            return Ok((c, jitter));
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

fn check_inputs(inputs: &[Point2], targets: &[f64]) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::InvalidParameter(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if inputs.iter().any(|p| !p.is_finite()) || targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::DegenerateData("non-finite training value".into()));
    }
    Ok(())
}

/// Exact log marginal likelihood of `targets` under a zero-mean GP on the
/// given inputs (no standardization or centering applied).
pub fn log_marginal_likelihood(inputs: &[Point2], targets: &[f64], hyper: &GpHyperparams) -> Result<f64> {
    check_inputs(inputs, targets)?;
    hyper.validate()?;
    let n = inputs.len();
    let (chol, _) = factor_with_jitter(&covariance_matrix(inputs, hyper), n)?;
    Ok(lml_from_factor(&chol, targets))
}

fn lml_from_factor(chol: &Cholesky, targets: &[f64]) -> f64 {
    let z = chol.solve_lower(targets);
    let fit: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * fit - 0.5 * chol.log_det() - 0.5 * targets.len() as f64 * LN_2PI
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln length_scale, ln signal_std, ln noise_std)`.
pub fn lml_with_gradient(inputs: &[Point2], targets: &[f64], hyper: &GpHyperparams) -> Result<(f64, [f64; 3])> {
    check_inputs(inputs, targets)?;
    hyper.validate()?;
    let n = inputs.len();
    let (chol, _) = factor_with_jitter(&covariance_matrix(inputs, hyper), n)?;
    let lml = lml_from_factor(&chol, targets);
    let alpha = chol.solve(targets);
    let inv = chol.inverse();

    let ell2 = hyper.length_scale.powi(2);
    let noise_var = hyper.noise_std.powi(2);
    let mut grad = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            // W = alpha alpha^T - K^{-1}; dL/dtheta = 0.5 * sum_ij W_ij dK_ij
            let w = alpha[i] * alpha[j] - inv[i * n + j];
            let kse = if i == j {
                hyper.signal_std.powi(2)
            } else {
                se_kernel(inputs[i], inputs[j], hyper)
            };
            let d2 = (inputs[i].x - inputs[j].x).powi(2) + (inputs[i].y - inputs[j].y).powi(2);
            grad[0] += w * kse * d2 / ell2;
            grad[1] += w * 2.0 * kse;
            if i == j {
                grad[2] += w * 2.0 * noise_var;
            }
        }
    }
    for g in &mut grad {
        *g *= 0.5;
    }
    Ok((lml, grad))
}

/// Log-spaced grid `min ..= max` with `steps` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl LogGrid {
    pub fn values(&self) -> Vec<f64> {
        match self.steps {
            0 => Vec::new(),
            1 => vec![(self.min * self.max).sqrt()],
            s => {
                let (a, b) = (self.min.ln(), self.max.ln());
                (0..s)
                    .map(|i| (a + (b - a) * i as f64 / (s - 1) as f64).exp())
                    .collect()
            }
        }
    }

    /// Spacing between neighbours in log space.
    pub fn log_step(&self) -> f64 {
        if self.steps < 2 {
            1.0
        } else {
            (self.max.ln() - self.min.ln()) / (self.steps - 1) as f64
        }
    }
}

/// Hyperparameter search settings. Signal and noise grids are multiples of
/// the target standard deviation; the length-scale grid is in standardized
/// input units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSearch {
    pub enabled: bool,
    pub length_scale: LogGrid,
    pub signal_std: LogGrid,
    pub noise_std: LogGrid,
    /// Maximum coordinate sweeps of local refinement; 0 disables it.
    pub refine_sweeps: usize,
    /// Refinement stops once every log-space step is below this.
    pub refine_tol: f64,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            enabled: true,
            length_scale: LogGrid { min: 0.03, max: 3.0, steps: 9 },
            signal_std: LogGrid { min: 0.3, max: 3.0, steps: 3 },
            noise_std: LogGrid { min: 1e-3, max: 0.3, steps: 6 },
            refine_sweeps: 40,
            refine_tol: 1e-3,
        }
    }
}

impl HyperSearch {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Per-axis input standardization and target centering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean_x: f64,
    pub mean_y: f64,
    pub scale_x: f64,
    pub scale_y: f64,
    pub target_mean: f64,
}

impl Standardization {
    pub fn from_data(inputs: &[Point2], targets: &[f64]) -> Self {
        let n = inputs.len().max(1) as f64;
        let mean_x = inputs.iter().map(|p| p.x).sum::<f64>() / n;
        let mean_y = inputs.iter().map(|p| p.y).sum::<f64>() / n;
        let sd = |f: &dyn Fn(&Point2) -> f64, m: f64| {
            let v = (inputs.iter().map(|p| (f(p) - m).powi(2)).sum::<f64>() / n).sqrt();
            if v > 1e-12 {
                v
            } else {
                1.0
            }
        };
        Self {
            mean_x,
            mean_y,
            scale_x: sd(&|p| p.x, mean_x),
            scale_y: sd(&|p| p.y, mean_y),
            target_mean: targets.iter().sum::<f64>() / targets.len().max(1) as f64,
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.mean_x) / self.scale_x, (p.y - self.mean_y) / self.scale_y)
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Hyperparameters used when the search is disabled.
pub fn default_hyperparams(std_inputs: &[Point2], centered: &[f64]) -> GpHyperparams {
    let sx = std_dev(&std_inputs.iter().map(|p| p.x).collect::<Vec<_>>());
    let sy = std_dev(&std_inputs.iter().map(|p| p.y).collect::<Vec<_>>());
    let input_norm = sx.hypot(sy);
    let target_std = match std_dev(centered) {
        s if s > 1e-12 => s,
        _ => 1.0,
    };
    GpHyperparams {
        length_scale: if input_norm > 0.0 { 0.2 * input_norm } else { 1.0 },
        signal_std: target_std,
        noise_std: 0.1 * target_std,
    }
}

/// Grid search followed by coordinate refinement; inputs already standardized
/// and targets centered.
pub fn select_hyperparams(std_inputs: &[Point2], centered: &[f64], search: &HyperSearch) -> Result<GpHyperparams> {
    let target_std = match std_dev(centered) {
        s if s > 1e-12 => s,
        _ => 1.0,
    };
    let mut best: Option<(f64, GpHyperparams)> = None;
    for &ell in &search.length_scale.values() {
        for &sig in &search.signal_std.values() {
            for &noise in &search.noise_std.values() {
                let h = GpHyperparams {
                    length_scale: ell,
                    signal_std: sig * target_std,
                    noise_std: noise * target_std,
                };
                if let Ok(lml) = log_marginal_likelihood(std_inputs, centered, &h) {
                    if best.is_none_or(|(b, _)| lml > b) {
                        best = Some((lml, h));
                    }
                }
            }
        }
    }
    let (mut best_lml, best_h) = best.ok_or(Error::NotPositiveDefinite {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })?;
    if search.refine_sweeps == 0 {
        return Ok(best_h);
    }

    let mut theta = best_h.to_log();
    let mut steps = [
        0.5 * search.length_scale.log_step(),
        0.5 * search.signal_std.log_step(),
        0.5 * search.noise_std.log_step(),
    ];
    // refinement may leave the grid, but not by more than a decade on each side
    let bounds = [
        (search.length_scale.min.ln() - 2.3, search.length_scale.max.ln() + 2.3),
        ((search.signal_std.min * target_std).ln() - 2.3, (search.signal_std.max * target_std).ln() + 2.3),
        ((search.noise_std.min * target_std).ln() - 2.3, (search.noise_std.max * target_std).ln() + 2.3),
    ];
    for _ in 0..search.refine_sweeps {
        if steps.iter().all(|s| *s < search.refine_tol) {
            break;
        }
        let (_, grad) = lml_with_gradient(std_inputs, centered, &GpHyperparams::from_log(theta))?;
        for c in 0..3 {
            if steps[c] < search.refine_tol {
                continue;
            }
            let dir = if grad[c] >= 0.0 { 1.0 } else { -1.0 };
            let mut improved = false;
            for sign in [dir, -dir] {
                let mut cand = theta;
                cand[c] = (cand[c] + sign * steps[c]).clamp(bounds[c].0, bounds[c].1);
                if cand[c] == theta[c] {
                    continue;
                }
                if let Ok(lml) = log_marginal_likelihood(std_inputs, centered, &GpHyperparams::from_log(cand)) {
                    if lml > best_lml {
                        best_lml = lml;
                        theta = cand;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                steps[c] *= 0.5;
            }
        }
    }
    Ok(GpHyperparams::from_log(theta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpPrediction {
    /// Predicted phase, seconds.
    pub t_hat: f64,
    /// Predictive standard deviation (latent plus noise), seconds.
    pub sigma_hat: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpModel {
    hyper: GpHyperparams,
    standardization: Standardization,
    train_inputs: Vec<Point2>,
    std_inputs: Vec<Point2>,
    train_targets: Vec<f64>,
    factor: Cholesky,
    alpha: Vec<f64>,
    jitter: f64,
}

impl GpModel {
    /// Fits on `(position, phase)` pairs, selecting hyperparameters per `search`.
    pub fn fit(points: &[(Point2, f64)], search: &HyperSearch) -> Result<GpModel> {
        let (inputs, targets): (Vec<Point2>, Vec<f64>) = points.iter().copied().unzip();
        check_inputs(&inputs, &targets)?;
        if inputs.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "need at least 2 training points, got {}",
                inputs.len()
            )));
        }
        if inputs.iter().all(|p| p.distance(&inputs[0]) == 0.0) {
            return Err(Error::DegenerateData("all training inputs coincide".into()));
        }
        let st = Standardization::from_data(&inputs, &targets);
        let std_inputs: Vec<Point2> = inputs.iter().map(|p| st.apply(*p)).collect();
        let centered: Vec<f64> = targets.iter().map(|t| t - st.target_mean).collect();
        let hyper = if search.enabled {
            select_hyperparams(&std_inputs, &centered, search)?
        } else {
            default_hyperparams(&std_inputs, &centered)
        };
        Self::assemble(hyper, st, inputs, targets)
    }

    /// Fits with fixed hyperparameters (length scale in standardized units).
    pub fn fit_with_hyperparams(points: &[(Point2, f64)], hyper: GpHyperparams) -> Result<GpModel> {
        let (inputs, targets): (Vec<Point2>, Vec<f64>) = points.iter().copied().unzip();
        check_inputs(&inputs, &targets)?;
        hyper.validate()?;
        let st = Standardization::from_data(&inputs, &targets);
        Self::assemble(hyper, st, inputs, targets)
    }

    fn assemble(
        hyper: GpHyperparams,
        standardization: Standardization,
        train_inputs: Vec<Point2>,
        train_targets: Vec<f64>,
    ) -> Result<GpModel> {
        let std_inputs: Vec<Point2> = train_inputs.iter().map(|p| standardization.apply(*p)).collect();
        let centered: Vec<f64> = train_targets.iter().map(|t| t - standardization.target_mean).collect();
        let n = std_inputs.len();
        let (factor, jitter) = factor_with_jitter(&covariance_matrix(&std_inputs, &hyper), n)?;
        let alpha = factor.solve(&centered);
        Ok(GpModel {
            hyper,
            standardization,
            train_inputs,
            std_inputs,
            train_targets,
            factor,
            alpha,
            jitter,
        })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn train_inputs(&self) -> &[Point2] {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.train_targets
    }

    /// Inputs in the standardized space the kernel operates in.
    pub fn standardized_inputs(&self) -> &[Point2] {
        &self.std_inputs
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_inputs.is_empty()
    }

    /// Log marginal likelihood of the centered targets on the standardized inputs.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let centered: Vec<f64> = self
            .train_targets
            .iter()
            .map(|t| t - self.standardization.target_mean)
            .collect();
        lml_from_factor(&self.factor, &centered)
    }

    pub fn predict(&self, p: Point2) -> GpPrediction {
        let q = self.standardization.apply(p);
        let kstar: Vec<f64> = self.std_inputs.iter().map(|x| se_kernel(q, *x, &self.hyper)).collect();
        let mean: f64 = kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = self.factor.solve_lower(&kstar);
        let latent = (self.hyper.signal_std.powi(2) - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        GpPrediction {
            t_hat: mean + self.standardization.target_mean,
            sigma_hat: (latent + self.hyper.noise_std.powi(2)).sqrt(),
        }
    }

    /// Smallest distance, in kernel length scales, from `p` to a training input.
    pub fn length_scales_to_data(&self, p: Point2) -> f64 {
        let q = self.standardization.apply(p);
        self.std_inputs
            .iter()
            .map(|x| x.distance(&q))
            .fold(f64::INFINITY, f64::min)
            / self.hyper.length_scale
    }

    pub fn to_file(&self) -> GpModelFile {
        GpModelFile {
            kernel: "squared_exponential".into(),
            hyperparams: self.hyper,
            standardization: self.standardization,
            train_inputs: self.train_inputs.clone(),
            train_targets: self.train_targets.clone(),
            alpha: self.alpha.clone(),
            jitter: self.jitter,
        }
    }

    /// Rebuilds a model from its serialized form, refactoring the covariance
    /// and checking the stored weights against the recomputed ones.
    pub fn from_file(file: GpModelFile) -> Result<GpModel> {
        if file.kernel != "squared_exponential" {
            return Err(Error::Malformed(format!("unsupported kernel `{}`", file.kernel)));
        }
        check_inputs(&file.train_inputs, &file.train_targets)?;
        file.hyperparams.validate()?;
        let st = file.standardization;
        let std_inputs: Vec<Point2> = file.train_inputs.iter().map(|p| st.apply(*p)).collect();
        let centered: Vec<f64> = file.train_targets.iter().map(|t| t - st.target_mean).collect();
        let n = std_inputs.len();
        let mut cov = covariance_matrix(&std_inputs, &file.hyperparams);
        for i in 0..n {
            cov[i * n + i] += file.jitter;
        }
        let factor = Cholesky::factor(&cov, n).ok_or(Error::NotPositiveDefinite { jitter: file.jitter })?;
        let alpha = factor.solve(&centered);
        if file.alpha.len() != n {
            return Err(Error::Malformed("alpha length does not match the training set".into()));
        }
        let scale = alpha.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        if alpha.iter().zip(&file.alpha).any(|(a, b)| (a - b).abs() > 1e-6 * scale) {
            return Err(Error::Malformed("stored alpha disagrees with the training data".into()));
        }
        Ok(GpModel {
            hyper: file.hyperparams,
            standardization: st,
            train_inputs: file.train_inputs,
            std_inputs,
            train_targets: file.train_targets,
            factor,
            alpha,
            jitter: file.jitter,
        })
    }
}

/// Serialized GP model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpModelFile {
    pub kernel: String,
    pub hyperparams: GpHyperparams,
    pub standardization: Standardization,
    pub train_inputs: Vec<Point2>,
    pub train_targets: Vec<f64>,
    pub alpha: Vec<f64>,
    pub jitter: f64,
}
