//! Exit criteria of the artifact. Each test prints one `PASS`/`FAIL` line
//! straight to stderr, so the verdicts show up even when output is captured.
//!
//! Run with `cargo test -p periodic-od --test acceptance`.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use periodic_od::clustering::{dbscan, Label};
use periodic_od::experiment::{run_experiment, CellStatus, ExperimentConfig, ExperimentOutcome};
use periodic_od::filter::FilterModel;
use periodic_od::gp::{GpHyperparams, GpModel, HyperSearch};
use periodic_od::metrics::{average_precision, precision_recall, PrSeries, SeriesKind};
use periodic_od::preprocess::CleaningMode;
use periodic_od::types::{Point2, PrLabel, TrajectoryId};

const MASTER_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TRUE_PERIOD: f64 = 8.0;

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "[criterion {id:>2}] {} {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Default-scale experiment for every master seed, computed once.
fn experiments() -> &'static [ExperimentOutcome] {
    static RUNS: OnceLock<Vec<ExperimentOutcome>> = OnceLock::new();
    RUNS.get_or_init(|| {
        MASTER_SEEDS
            .iter()
            .map(|&seed| {
                run_experiment(&ExperimentConfig {
                    master_seed: seed,
                    ..ExperimentConfig::default()
                })
                .expect("experiment runs")
            })
            .collect()
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct CellMedians {
    ref_ap: f64,
    ref_of1: f64,
    post_ap: f64,
    post_of1: f64,
}

fn cell_medians(pr: PrLabel, traj: TrajectoryId, mode: CleaningMode) -> CellMedians {
    let cells: Vec<_> = experiments()
        .iter()
        .map(|o| o.report.cell(pr, traj, mode).expect("cell present").clone())
        .collect();
    CellMedians {
        ref_ap: median(cells.iter().map(|c| c.reference_ap).collect()),
        ref_of1: median(cells.iter().map(|c| c.reference_of1).collect()),
        post_ap: median(cells.iter().map(|c| c.post_ap).collect()),
        post_of1: median(cells.iter().map(|c| c.post_of1).collect()),
    }
}

#[test]
fn criterion_01_manual_cleaning_dominance() {
    let mut failures = Vec::new();
    let mut worst_pr1 = f64::INFINITY;
    for pr in PrLabel::ALL {
        for traj in TrajectoryId::ALL {
            let m = cell_medians(pr, traj, CleaningMode::Manual);
            if !(m.post_of1 > m.ref_of1) {
                failures.push(format!("{pr}/{traj} oF1 {:.3} <= {:.3}", m.post_of1, m.ref_of1));
            }
            if !(m.post_ap > m.ref_ap) {
                failures.push(format!("{pr}/{traj} AP {:.3} <= {:.3}", m.post_ap, m.ref_ap));
            }
            if pr == PrLabel::PR1 {
                worst_pr1 = worst_pr1.min(m.post_of1);
                if !(m.post_of1 >= 0.90) {
                    failures.push(format!("{pr}/{traj} oF1 {:.3} < 0.90", m.post_of1));
                }
            }
        }
    }
    let detail = format!(
        "{} violation(s), lowest PR1 post oF1 {worst_pr1:.3}; {}",
        failures.len(),
        failures.join("; ")
    );
    verdict(1, "manual-cleaning dominance", failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{detail}");
}

#[test]
fn criterion_02_auto_cleaning_strong_models() {
    let mut failures = Vec::new();
    for pr in [PrLabel::PR3, PrLabel::PR4] {
        for traj in TrajectoryId::ALL {
            let m = cell_medians(pr, traj, CleaningMode::Auto);
            if !(m.post_of1 >= 0.90) {
                failures.push(format!("{pr}/{traj} oF1 {:.3}", m.post_of1));
            }
        }
    }
    let detail = format!("{} of 6 cells below oF1 0.90: {}", failures.len(), failures.join("; "));
    verdict(2, "auto cleaning on PR3/PR4", failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{detail}");
}

#[test]
fn criterion_03_auto_cleaning_weak_model() {
    let mut failures = Vec::new();
    let mut unidentified = 0;
    for o in experiments() {
        for traj in TrajectoryId::ALL {
            let c = o.report.cell(PrLabel::PR1, traj, CleaningMode::Auto).unwrap();
            let period_failure =
                c.status == CellStatus::Failed && c.failure.as_deref() == Some("period_not_identifiable");
            unidentified += usize::from(period_failure);
            if !(period_failure || c.post_ap < c.reference_ap) {
                failures.push(format!("seed {} {traj}: AP {:.3} vs {:.3}", o.report.master_seed, c.post_ap, c.reference_ap));
            }
        }
    }
    let detail = format!(
        "{unidentified} of 15 runs report an unidentifiable period; {} violation(s) {}",
        failures.len(),
        failures.join("; ")
    );
    verdict(3, "auto cleaning fails on PR1", failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{detail}");
}

#[test]
fn criterion_04_period_accuracy() {
    let mut pipelines = Vec::new();
    for pr in PrLabel::ALL {
        for traj in TrajectoryId::ALL {
            pipelines.push((pr, traj, CleaningMode::Manual));
            if matches!(pr, PrLabel::PR3 | PrLabel::PR4) {
                pipelines.push((pr, traj, CleaningMode::Auto));
            }
        }
    }
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for &(pr, traj, mode) in &pipelines {
        let errors: Vec<Option<f64>> = experiments()
            .iter()
            .map(|o| o.report.cell(pr, traj, mode).unwrap().period_estimate.map(|t| (t - TRUE_PERIOD).abs()))
            .collect();
        let good = errors.iter().filter(|e| e.is_some_and(|e| e <= 0.1)).count();
        worst = errors.iter().flatten().fold(worst, |w, &e| w.max(e));
        if (good as f64) < 0.9 * errors.len() as f64 {
            failures.push(format!("{pr}/{traj}/{mode}: {good}/{}", errors.len()));
        }
    }
    let detail = format!(
        "{} of {} pipelines miss the 90% rate, largest |T-8| {worst:.4} s; {}",
        failures.len(),
        pipelines.len(),
        failures.join("; ")
    );
    verdict(4, "period estimation accuracy", failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{detail}");
}

fn toy_index() -> usize {
    let o = &experiments()[0];
    o.report
        .cells
        .iter()
        .position(|c| {
            c.pr_label == PrLabel::PR3 && c.trajectory == TrajectoryId::Gamma3 && c.cleaning_mode == CleaningMode::Manual
        })
        .expect("toy cell present")
}

#[test]
fn criterion_05_pr_curve_dominance() {
    let idx = toy_index();
    let fractions: Vec<f64> = experiments()
        .iter()
        .map(|o| {
            let grid = &o.artifacts[idx].grid;
            let above = grid
                .iter()
                .filter(|g| precision_recall(&g.post).0 >= precision_recall(&g.reference).0)
                .count();
            above as f64 / grid.len() as f64
        })
        .collect();
    let m = median(fractions.clone());
    let pass = m >= 0.9;
    let detail = format!("median fraction of grid points with post precision >= reference {m:.3} (per seed {fractions:.3?})");
    verdict(5, "PR-curve dominance on the toy configuration", pass, &detail);
    assert!(pass, "{detail}");
}

/// Dense-formula GP: explicit inverse and determinant, no factorization.
struct DenseGp {
    k_inv: DMatrix<f64>,
    y: DVector<f64>,
    x: Vec<(f64, f64)>,
    hyper: GpHyperparams,
    lml: f64,
}

fn sq_exp(a: (f64, f64), b: (f64, f64), h: &GpHyperparams) -> f64 {
    let d2 = (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    h.signal_std.powi(2) * (-0.5 * d2 / h.length_scale.powi(2)).exp()
}

impl DenseGp {
    fn new(x: Vec<(f64, f64)>, y: Vec<f64>, hyper: GpHyperparams, jitter: f64) -> DenseGp {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            sq_exp(x[i], x[j], &hyper) + if i == j { hyper.noise_std.powi(2) + jitter } else { 0.0 }
        });
        let y = DVector::from_vec(y);
        let k_inv = k.clone().try_inverse().expect("invertible");
        let quad = (y.transpose() * &k_inv * &y)[(0, 0)];
        let lml = -0.5 * quad - 0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        DenseGp { k_inv, y, x, hyper, lml }
    }

    fn predict(&self, q: (f64, f64)) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|&p| sq_exp(q, p, &self.hyper)));
        let mean = (ks.transpose() * &self.k_inv * &self.y)[(0, 0)];
        let var = self.hyper.signal_std.powi(2) - (ks.transpose() * &self.k_inv * &ks)[(0, 0)] + self.hyper.noise_std.powi(2);
        (mean, var.max(0.0).sqrt())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn criterion_06_gp_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let search = HyperSearch::default();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let instances = 24;
    for inst in 0..instances {
        let n = 2 + inst % 9;
        let pts: Vec<(Point2, f64)> = (0..n)
            .map(|_| {
                let p = Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
                (p, 0.5 * p.x + (0.7 * p.y).sin() + rng.random_range(-0.1..0.1))
            })
            .collect();
        let model = GpModel::fit(&pts, &search).expect("fit");

        // independent standardization: population std per axis, centered targets
        let nf = n as f64;
        let (mx, my) = (pts.iter().map(|p| p.0.x).sum::<f64>() / nf, pts.iter().map(|p| p.0.y).sum::<f64>() / nf);
        let sx = (pts.iter().map(|p| (p.0.x - mx).powi(2)).sum::<f64>() / nf).sqrt();
        let sy = (pts.iter().map(|p| (p.0.y - my).powi(2)).sum::<f64>() / nf).sqrt();
        let tm = pts.iter().map(|p| p.1).sum::<f64>() / nf;
        let xs: Vec<(f64, f64)> = pts.iter().map(|p| ((p.0.x - mx) / sx, (p.0.y - my) / sy)).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1 - tm).collect();

        let oracle = DenseGp::new(xs.clone(), ys.clone(), *model.hyperparams(), model.jitter());
        let mut errs = vec![rel_err(model.log_marginal_likelihood(), oracle.lml)];
        for _ in 0..5 {
            let q = Point2::new(rng.random_range(-2.0..12.0), rng.random_range(-2.0..12.0));
            let (m, s) = oracle.predict(((q.x - mx) / sx, (q.y - my) / sy));
            let got = model.predict(q);
            errs.push(rel_err(got.t_hat, m + tm));
            errs.push(rel_err(got.sigma_hat, s));
        }
        // the fitted hyperparameters are at least as good as every grid point
        let target_sd = (ys.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
        let mut grid_best = f64::NEG_INFINITY;
        for l in search.length_scale.values() {
            for s in search.signal_std.values() {
                for e in search.noise_std.values() {
                    let h = GpHyperparams {
                        length_scale: l,
                        signal_std: s * target_sd,
                        noise_std: e * target_sd,
                    };
                    grid_best = grid_best.max(DenseGp::new(xs.clone(), ys.clone(), h, 0.0).lml);
                }
            }
        }
        let inst_worst = errs.iter().fold(0.0f64, |a, &b| a.max(b));
        worst = worst.max(inst_worst);
        if inst_worst > 1e-6 {
            failures.push(format!("instance {inst} (n={n}): rel err {inst_worst:.2e}"));
        }
        if model.log_marginal_likelihood() < grid_best - 1e-6 * grid_best.abs() {
            failures.push(format!("instance {inst}: fitted LML {} below grid optimum {grid_best}", model.log_marginal_likelihood()));
        }
    }
    let detail = format!("{instances} instances, worst relative error {worst:.2e}; {}", failures.join("; "));
    verdict(6, "GP oracle equivalence", failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{detail}");
}

/// O(n^3) closure oracle: cores are grouped by reachability; a border point
/// joins the adjacent component with the smallest core index.
fn reference_dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |i: usize, j: usize| -> f64 {
        points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| dist(i, j) <= eps).count() >= min_samples).collect();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| core[i] && core[j] && dist(i, j) <= eps).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let rep: Vec<Option<usize>> = (0..n).map(|i| if core[i] { (0..n).find(|&j| reach[i][j]) } else { None }).collect();
    (0..n)
        .map(|i| {
            if core[i] {
                rep[i]
            } else {
                (0..n).filter(|&j| core[j] && dist(i, j) <= eps).filter_map(|j| rep[j]).min()
            }
        })
        .collect()
}

/// True iff the two labelings induce the same partition and noise set.
fn same_up_to_relabeling(a: &[Label], b: &[Option<usize>]) -> bool {
    let mut fwd = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter().zip(b).all(|(x, y)| match (x.cluster(), y) {
        (None, None) => true,
        (Some(p), Some(q)) => *fwd.entry(p).or_insert(*q) == *q && *back.entry(*q).or_insert(p) == p,
        _ => false,
    })
}

#[test]
fn criterion_07_dbscan_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut mismatches = 0;
    let instances = 100;
    for _ in 0..instances {
        let n = rng.random_range(1..=50);
        let dim = if rng.random_bool(0.5) { 1 } else { 3 };
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..4.0)).collect()).collect();
        let eps = rng.random_range(0.1..1.2);
        let min_samples = rng.random_range(1..=6);
        let got = dbscan(&points, eps, min_samples).expect("valid parameters");
        if !same_up_to_relabeling(&got.labels, &reference_dbscan(&points, eps, min_samples)) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    verdict(7, "DBSCAN oracle equivalence", pass, &format!("{mismatches} mismatching instances of {instances}"));
    assert!(pass);
}

#[test]
fn criterion_08_ap_analytic() {
    let mut worst: f64 = 0.0;
    for beta in [1.0, 4.291, 39.0] {
        let n = 10_000;
        let pairs: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let r = i as f64 / n as f64;
                (r, 1.0 - r.powf(beta))
            })
            .collect();
        let s = PrSeries::from_pairs(&pairs, SeriesKind::Reference).unwrap();
        worst = worst.max((average_precision(&s) - beta / (beta + 1.0)).abs());
    }
    let pass = worst <= 1e-3;
    verdict(8, "AP analytic check", pass, &format!("largest |AP - beta/(beta+1)| {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_09_uncertainty_geometry() {
    let idx = toy_index();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for o in experiments() {
        let file = o.artifacts[idx].model.clone().expect("toy cell trained");
        let filter = FilterModel::from_file(file).unwrap();
        let gp = filter.gp();
        let st = *gp.standardization();
        let ell = gp.hyperparams().length_scale;
        let train = gp.standardized_inputs();
        // sample uniformly from the training bounding box grown by four
        // length scales; keep points farther than three from all inputs
        let (lo_x, hi_x, lo_y, hi_y) = gp.train_inputs().iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x), b.max(p.x), c.min(p.y), d.max(p.y)),
        );
        let (mx, my) = (4.0 * ell * st.scale_x, 4.0 * ell * st.scale_y);
        let mut sigmas = Vec::with_capacity(1000);
        while sigmas.len() < 1000 {
            let q = Point2::new(rng.random_range(lo_x - mx..hi_x + mx), rng.random_range(lo_y - my..hi_y + my));
            let qs = st.apply(q);
            if train.iter().all(|p| qs.distance(p) > 3.0 * ell) {
                sigmas.push(gp.predict(q).sigma_hat);
            }
        }
        let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        summary.push(format!("{mean:.3} vs {:.3}", filter.sigma_max()));
        if !(mean > filter.sigma_max()) {
            failures.push(o.report.master_seed);
        }
    }
    let pass = failures.is_empty();
    verdict(
        9,
        "uncertainty grows away from the data",
        pass,
        &format!("mean far-field sigma vs sigma_max per seed: {}", summary.join(", ")),
    );
    assert!(pass, "failing seeds {failures:?}");
}

fn run_all(out: &Path, serial: bool) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_periodic-od"));
    cmd.args(["run-all", "--seed", "11", "--out"]).arg(out);
    if serial {
        cmd.arg("--serial");
    } else {
        cmd.env("RAYON_NUM_THREADS", "4");
    }
    let status = cmd.output().expect("binary runs");
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    run_all(&a, false);
    run_all(&b, false);
    run_all(&c, true);
    let read = |p: &Path| std::fs::read(p.join("report.csv")).unwrap();
    let (ra, rb, rc) = (read(&a), read(&b), read(&c));
    let repeat = ra == rb;
    let serial = ra == rc;
    let pass = repeat && serial && !ra.is_empty();
    verdict(
        10,
        "determinism of run-all",
        pass,
        &format!("repeat identical: {repeat}, serial vs parallel identical: {serial}"),
    );
    assert!(pass);
}
