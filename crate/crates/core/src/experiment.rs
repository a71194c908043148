//! End-to-end protocol: calibrate the PR models, run every
//! (PR model, trajectory, cleaning mode) cell and emit the report.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{build_filter, FilterModelFile, UncertaintyOnlyFilter};
use crate::gp::{GpModel, HyperSearch};
use crate::io::{self, DecisionRow};
use crate::metrics::{
    average_precision, default_recall_grid, optimal_f1, post_filter_pr, GridOutcome, PostFilterEvaluation, PrSeries,
    SeriesKind,
};
use crate::preprocess::{prepare_training_set, CleaningMode};
use crate::seed::{derive_index_seed, derive_seed};
use crate::simulator::{simulate_run, RunRecord, SimulationConfig};
use crate::types::{NominalTrajectory, PrCurveModel, PrLabel, TrajectoryId};

pub const DEFAULT_AP_TARGETS: [f64; 4] = [0.811, 0.883, 0.942, 0.975];

/// What to do with a cell whose pipeline cannot identify the period.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Report the cell as failed, with the reference metrics as its result.
    #[default]
    RecordFailed,
    /// Fit the GP on raw timestamps and filter on uncertainty alone.
    UnalignedFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_train_periods: usize,
    pub train_recall: f64,
    pub n_validation_periods: usize,
    pub recall_grid: Vec<f64>,
    pub trajectories: Vec<TrajectoryId>,
    pub ap_targets: Vec<f64>,
    pub cleaning_modes: Vec<CleaningMode>,
    pub dt: f64,
    pub pos_noise_sigma: f64,
    pub time_noise_sigma: f64,
    pub failure_policy: FailurePolicy,
    pub parallel: bool,
    pub output_dir: PathBuf,
    pub search: HyperSearch,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sim = SimulationConfig::default();
        Self {
            master_seed: 1,
            n_train_periods: 5,
            train_recall: 0.9,
            n_validation_periods: 10,
            recall_grid: default_recall_grid(),
            trajectories: TrajectoryId::ALL.to_vec(),
            ap_targets: DEFAULT_AP_TARGETS.to_vec(),
            cleaning_modes: CleaningMode::ALL.to_vec(),
            dt: sim.dt,
            pos_noise_sigma: sim.pos_noise_sigma,
            time_noise_sigma: sim.time_noise_sigma,
            failure_policy: FailurePolicy::default(),
            parallel: true,
            output_dir: PathBuf::from("out"),
            search: HyperSearch::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_train_periods == 0 || self.n_validation_periods == 0 {
            return bad("period counts must be positive".into());
        }
        if !(self.train_recall > 0.0 && self.train_recall <= 1.0) {
            return bad(format!("train_recall {} outside (0, 1]", self.train_recall));
        }
        if self.recall_grid.is_empty() || self.recall_grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return bad("recall_grid must be a non-empty subset of (0, 1]".into());
        }
        if self.trajectories.is_empty() || self.cleaning_modes.is_empty() || self.ap_targets.is_empty() {
            return bad("trajectories, ap_targets and cleaning_modes must be non-empty".into());
        }
        if self.ap_targets.len() > PrLabel::ALL.len() {
            return bad(format!("at most {} AP targets", PrLabel::ALL.len()));
        }
        self.sim_config(1, 0).validate()
    }

    pub fn sim_config(&self, n_periods: usize, seed: u64) -> SimulationConfig {
        SimulationConfig {
            dt: self.dt,
            pos_noise_sigma: self.pos_noise_sigma,
            time_noise_sigma: self.time_noise_sigma,
            n_periods,
            seed,
            delay: 0.0,
        }
    }

    /// Grid index closest to the training recall.
    pub fn operating_index(&self) -> usize {
        self.recall_grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - self.train_recall).abs().total_cmp(&(b.1 - self.train_recall).abs()))
            .map_or(0, |(i, _)| i)
    }
}

/// PR models for `targets`, labeled PR1, PR2, ... in ascending AP.
pub fn calibrate_pr_models(targets: &[f64]) -> Result<Vec<PrCurveModel>> {
    if targets.len() > PrLabel::ALL.len() {
        return Err(Error::InvalidParameter(format!("at most {} AP targets", PrLabel::ALL.len())));
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .zip(PrLabel::ALL)
        .map(|(&ap, label)| PrCurveModel::from_average_precision(ap, label))
        .collect()
}

/// Seed of one cell, independent of execution order.
pub fn cell_seed(master: u64, pr: PrLabel, traj: TrajectoryId, mode: CleaningMode) -> u64 {
    derive_seed(master, &[pr.token(), traj.token(), mode.token()])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
    Fallback,
}

impl CellStatus {
    pub fn token(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
            CellStatus::Fallback => "fallback",
        }
    }
}

/// One row of the result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub pr_label: PrLabel,
    pub trajectory: TrajectoryId,
    pub cleaning_mode: CleaningMode,
    pub status: CellStatus,
    /// Error token when the pipeline did not complete.
    pub failure: Option<String>,
    pub reference_ap: f64,
    pub reference_of1: f64,
    pub post_ap: f64,
    pub post_of1: f64,
    pub period_estimate: Option<f64>,
    pub sigma_max: Option<f64>,
    pub synced_runs: usize,
    pub validation_runs: usize,
    pub training_points: usize,
    pub seed: u64,
}

/// Reference detector quality of one PR model, averaged over its cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub pr_label: PrLabel,
    pub beta: f64,
    pub ap: f64,
    pub of1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub reference_rows: Vec<ReferenceRow>,
    pub cells: Vec<CellRecord>,
}

impl ExperimentReport {
    pub fn cell(&self, pr: PrLabel, traj: TrajectoryId, mode: CleaningMode) -> Option<&CellRecord> {
        self.cells
            .iter()
            .find(|c| c.pr_label == pr && c.trajectory == traj && c.cleaning_mode == mode)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status != CellStatus::Ok).count()
    }
}

/// Files written for one cell besides its report row.
#[derive(Clone, Debug, PartialEq)]
pub struct CellArtifacts {
    pub reference: PrSeries,
    pub post: PrSeries,
    /// Decisions on the validation run at the operating recall.
    pub decisions: Vec<DecisionRow>,
    pub model: Option<FilterModelFile>,
    /// Per-grid-point confusion counts of the validation runs.
    pub grid: Vec<GridOutcome>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub artifacts: Vec<CellArtifacts>,
}

pub fn cell_dir_name(c: &CellRecord) -> String {
    format!("{}_{}_{}", c.pr_label.token(), c.trajectory.token(), c.cleaning_mode.token())
}

fn post_kind(mode: CleaningMode) -> SeriesKind {
    match mode {
        CleaningMode::Auto => SeriesKind::PostFilterAuto,
        CleaningMode::Manual => SeriesKind::PostFilterManual,
    }
}

fn failure_token(e: &Error) -> String {
    match e {
        Error::PeriodNotIdentifiable { .. } => "period_not_identifiable".into(),
        Error::EmptyTrainingSet => "empty_training_set".into(),
        Error::TooFewPoints { .. } => "too_few_points".into(),
        Error::DegenerateData(_) | Error::DegenerateGeometry(_) => "degenerate_data".into(),
        Error::NotPositiveDefinite { .. } => "not_positive_definite".into(),
        other => other.to_string(),
    }
}

/// Trains the filter for one cell and evaluates it on fresh validation runs.
pub fn run_cell(
    cfg: &ExperimentConfig,
    pr: &PrCurveModel,
    traj_id: TrajectoryId,
    mode: CleaningMode,
) -> Result<(CellRecord, CellArtifacts)> {
    let traj = NominalTrajectory::new(traj_id);
    let seed = cell_seed(cfg.master_seed, pr.label, traj_id, mode);
    let train_cfg = cfg.sim_config(cfg.n_train_periods, derive_seed(seed, &["train"]));
    let val_cfg = cfg.sim_config(cfg.n_validation_periods, derive_seed(seed, &["validation"]));
    let training = simulate_run(&traj, pr, cfg.train_recall, &train_cfg)?;

    let mut record = CellRecord {
        pr_label: pr.label,
        trajectory: traj_id,
        cleaning_mode: mode,
        status: CellStatus::Ok,
        failure: None,
        reference_ap: 0.0,
        reference_of1: 0.0,
        post_ap: 0.0,
        post_of1: 0.0,
        period_estimate: None,
        sigma_max: None,
        synced_runs: 0,
        validation_runs: cfg.recall_grid.len(),
        training_points: 0,
        seed,
    };

    let trained = prepare_training_set(&training, mode).and_then(|prepared| {
        let points: Vec<_> = prepared.dataset.points.iter().map(|p| (p.pos, p.phase)).collect();
        let gp = GpModel::fit(&points, &cfg.search)?;
        let filter = build_filter(gp, &prepared.dataset.inputs(), prepared.period_estimate.period)?;
        Ok((prepared, filter))
    });

    match trained {
        Ok((prepared, filter)) => {
            record.period_estimate = Some(prepared.period_estimate.period);
            record.sigma_max = Some(filter.sigma_max());
            record.training_points = prepared.dataset.len();
            let eval = post_filter_pr(&traj, pr, &filter, &cfg.recall_grid, &val_cfg, post_kind(mode))?;
            record.synced_runs = eval.outcomes.iter().filter(|o| o.sync.is_synced()).count();
            let op = cfg.operating_index();
            let op_run = simulate_run(&traj, pr, cfg.recall_grid[op], &SimulationConfig {
                seed: derive_index_seed(val_cfg.seed, op as u64),
                ..val_cfg
            })?;
            let decisions = decision_rows(&filter, &op_run);
            finish(&mut record, eval, decisions, Some(filter.to_file()))
        }
        Err(e @ (Error::Io(_) | Error::InvalidParameter(_))) => Err(e),
        Err(e) => {
            log::warn!(
                "{} {} {}: pipeline failed: {e}",
                pr.label,
                traj_id,
                mode
            );
            record.failure = Some(failure_token(&e));
            let fallback = matches!(e, Error::PeriodNotIdentifiable { .. })
                && cfg.failure_policy == FailurePolicy::UnalignedFallback;
            if fallback {
                if let Some(result) = unaligned_fallback(cfg, pr, &traj, mode, &training, &val_cfg, &mut record)? {
                    return Ok(result);
                }
            }
            record.status = CellStatus::Failed;
            let eval = post_filter_pr(
                &traj,
                pr,
                &crate::filter::KeepAll,
                &cfg.recall_grid,
                &val_cfg,
                post_kind(mode),
            )?;
            let eval = PostFilterEvaluation {
                post: eval.reference.clone(),
                ..eval
            };
            finish(&mut record, eval, Vec::new(), None)
        }
    }
}

fn finish(
    record: &mut CellRecord,
    eval: PostFilterEvaluation,
    decisions: Vec<DecisionRow>,
    model: Option<FilterModelFile>,
) -> Result<(CellRecord, CellArtifacts)> {
    let PostFilterEvaluation {
        reference,
        mut post,
        outcomes,
    } = eval;
    post.kind = post_kind(record.cleaning_mode);
    record.reference_ap = average_precision(&reference);
    record.reference_of1 = optimal_f1(&reference).0;
    record.post_ap = average_precision(&post);
    record.post_of1 = optimal_f1(&post).0;
    Ok((
        record.clone(),
        CellArtifacts {
            reference,
            post,
            decisions,
            model,
            grid: outcomes,
        },
    ))
}

fn unaligned_fallback(
    cfg: &ExperimentConfig,
    pr: &PrCurveModel,
    traj: &NominalTrajectory,
    mode: CleaningMode,
    training: &RunRecord,
    val_cfg: &SimulationConfig,
    record: &mut CellRecord,
) -> Result<Option<(CellRecord, CellArtifacts)>> {
    let source = match mode {
        CleaningMode::Manual => crate::preprocess::manual_clean(training),
        CleaningMode::Auto => training.clone(),
    };
    let observations = source.observations();
    let filter = match GpModel::fit(&observations, &cfg.search).and_then(|gp| {
        let inputs: Vec<_> = observations.iter().map(|o| o.0).collect();
        UncertaintyOnlyFilter::build(gp, &inputs)
    }) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("fallback fit failed: {e}");
            return Ok(None);
        }
    };
    record.status = CellStatus::Fallback;
    record.sigma_max = Some(filter.sigma_max());
    record.training_points = observations.len();
    let eval = post_filter_pr(traj, pr, &filter, &cfg.recall_grid, val_cfg, post_kind(mode))?;
    finish(record, eval, Vec::new(), None).map(Some)
}

fn decision_rows(filter: &crate::filter::FilterModel, run: &RunRecord) -> Vec<DecisionRow> {
    let (evaluations, _) = filter.evaluate_run(&run.observations());
    run.detections
        .iter()
        .zip(&evaluations)
        .map(|(d, e)| DecisionRow::new(d.pos, d.t, Some(d.truth), e))
        .collect()
}

/// Runs every cell of `cfg` and aggregates the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let models = calibrate_pr_models(&cfg.ap_targets)?;
    let mut jobs = Vec::new();
    for pr in &models {
        for &traj in &cfg.trajectories {
            for &mode in &cfg.cleaning_modes {
                jobs.push((pr, traj, mode));
            }
        }
    }
    let results: Vec<Result<(CellRecord, CellArtifacts)>> = if cfg.parallel {
        jobs.par_iter().map(|&(pr, t, m)| run_cell(cfg, pr, t, m)).collect()
    } else {
        jobs.iter().map(|&(pr, t, m)| run_cell(cfg, pr, t, m)).collect()
    };
    let (cells, artifacts): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let reference_rows = models
        .iter()
        .map(|m| {
            let own: Vec<&CellRecord> = cells.iter().filter(|c| c.pr_label == m.label).collect();
            let n = own.len() as f64;
            ReferenceRow {
                pr_label: m.label,
                beta: m.beta,
                ap: own.iter().map(|c| c.reference_ap).sum::<f64>() / n,
                of1: own.iter().map(|c| c.reference_of1).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ExperimentOutcome {
        report: ExperimentReport {
            master_seed: cfg.master_seed,
            reference_rows,
            cells,
        },
        artifacts,
    })
}

/// Flat CSV row shared by reference and cell rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReportCsvRow {
    row: String,
    pr: PrLabel,
    trajectory: Option<TrajectoryId>,
    mode: Option<CleaningMode>,
    status: Option<CellStatus>,
    failure: Option<String>,
    beta: Option<f64>,
    ap: f64,
    of1: f64,
    reference_ap: Option<f64>,
    reference_of1: Option<f64>,
    period: Option<f64>,
    sigma_max: Option<f64>,
    synced_runs: Option<usize>,
    validation_runs: Option<usize>,
    training_points: Option<usize>,
    seed: u64,
}

fn csv_rows(report: &ExperimentReport) -> Vec<ReportCsvRow> {
    let reference = report.reference_rows.iter().map(|r| ReportCsvRow {
        row: "reference".into(),
        pr: r.pr_label,
        trajectory: None,
        mode: None,
        status: None,
        failure: None,
        beta: Some(r.beta),
        ap: r.ap,
        of1: r.of1,
        reference_ap: None,
        reference_of1: None,
        period: None,
        sigma_max: None,
        synced_runs: None,
        validation_runs: None,
        training_points: None,
        seed: report.master_seed,
    });
    let cells = report.cells.iter().map(|c| ReportCsvRow {
        row: "cell".into(),
        pr: c.pr_label,
        trajectory: Some(c.trajectory),
        mode: Some(c.cleaning_mode),
        status: Some(c.status),
        failure: c.failure.clone(),
        beta: None,
        ap: c.post_ap,
        of1: c.post_of1,
        reference_ap: Some(c.reference_ap),
        reference_of1: Some(c.reference_of1),
        period: c.period_estimate,
        sigma_max: c.sigma_max,
        synced_runs: Some(c.synced_runs),
        validation_runs: Some(c.validation_runs),
        training_points: Some(c.training_points),
        seed: c.seed,
    });
    reference.chain(cells).collect()
}

pub fn write_report_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    io::write_csv(path, csv_rows(report))
}

pub fn read_report_csv(path: &Path) -> Result<ExperimentReport> {
    let rows: Vec<ReportCsvRow> = io::read_csv(path)?;
    let missing = |what: &str| Error::Malformed(format!("report row without {what}"));
    let mut master_seed = None;
    let mut reference_rows = Vec::new();
    let mut cells = Vec::new();
    for r in rows {
        match r.row.as_str() {
            "reference" => {
                master_seed = Some(r.seed);
                reference_rows.push(ReferenceRow {
                    pr_label: r.pr,
                    beta: r.beta.ok_or_else(|| missing("beta"))?,
                    ap: r.ap,
                    of1: r.of1,
                });
            }
            "cell" => cells.push(CellRecord {
                pr_label: r.pr,
                trajectory: r.trajectory.ok_or_else(|| missing("trajectory"))?,
                cleaning_mode: r.mode.ok_or_else(|| missing("mode"))?,
                status: r.status.ok_or_else(|| missing("status"))?,
                failure: r.failure,
                reference_ap: r.reference_ap.ok_or_else(|| missing("reference_ap"))?,
                reference_of1: r.reference_of1.ok_or_else(|| missing("reference_of1"))?,
                post_ap: r.ap,
                post_of1: r.of1,
                period_estimate: r.period,
                sigma_max: r.sigma_max,
                synced_runs: r.synced_runs.ok_or_else(|| missing("synced_runs"))?,
                validation_runs: r.validation_runs.ok_or_else(|| missing("validation_runs"))?,
                training_points: r.training_points.ok_or_else(|| missing("training_points"))?,
                seed: r.seed,
            }),
            other => return Err(Error::Malformed(format!("unknown report row kind `{other}`"))),
        }
    }
    Ok(ExperimentReport {
        master_seed: master_seed.ok_or_else(|| Error::Malformed("report has no reference rows".into()))?,
        reference_rows,
        cells,
    })
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub config: ExperimentConfig,
    pub report: ExperimentReport,
    pub notes: Vec<String>,
}

pub fn report_notes() -> Vec<String> {
    vec![
        "PR models follow precision(r) = 1 - r^beta calibrated to the reference AP targets; reference oF1 values are a consequence of that family.".into(),
        "Matching uses simulator truth labels; no IoU threshold is involved.".into(),
        "AP integrates the monotone precision envelope with the trapezoid rule from recall 0 to the largest observed recall.".into(),
        "Cleaning clusters (x, y, phase) with the phase in raw seconds, so results are sensitive to the ratio of frame units to seconds.".into(),
        "Failed cells carry the reference metrics as their result and a failure token.".into(),
    ]
}

/// Writes `report.csv`, `report.json` and the per-cell directories.
pub fn emit_report(outcome: &ExperimentOutcome, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_report_csv(&out.join("report.csv"), &outcome.report)?;
    io::write_json(
        &out.join("report.json"),
        &ReportDocument {
            config: cfg.clone(),
            report: outcome.report.clone(),
            notes: report_notes(),
        },
    )?;
    for (cell, art) in outcome.report.cells.iter().zip(&outcome.artifacts) {
        let dir = out.join("cells").join(cell_dir_name(cell));
        fs::create_dir_all(&dir)?;
        io::write_series_csv(&dir.join("pr_series.csv"), &[&art.reference, &art.post])?;
        io::write_csv(&dir.join("decisions.csv"), art.decisions.iter())?;
        let model = dir.join("model.json");
        match &art.model {
            Some(m) => io::write_json(&model, m)?,
            None if model.exists() => fs::remove_file(&model)?,
            None => {}
        }
    }
    Ok(())
}

/// A report value that disagrees with its per-cell PR series.
#[derive(Clone, Debug, PartialEq)]
pub struct Inconsistency {
    pub cell: String,
    pub field: &'static str,
    pub reported: f64,
    pub recomputed: f64,
}

/// Recomputes every cell's AP and oF1 from `cells/*/pr_series.csv` and
/// compares them with `report.csv`.
pub fn check_report(out: &Path, tol: f64) -> Result<Vec<Inconsistency>> {
    let report = read_report_csv(&out.join("report.csv"))?;
    let mut issues = Vec::new();
    for c in &report.cells {
        let name = cell_dir_name(c);
        let series = io::read_series_csv(&out.join("cells").join(&name).join("pr_series.csv"))?;
        let find = |k: SeriesKind| {
            series
                .iter()
                .find(|s| s.kind == k)
                .ok_or_else(|| Error::Malformed(format!("{name}: no {} series", k.token())))
        };
        let reference = find(SeriesKind::Reference)?;
        let post = find(post_kind(c.cleaning_mode))?;
        let checks = [
            ("reference_ap", c.reference_ap, average_precision(reference)),
            ("reference_of1", c.reference_of1, optimal_f1(reference).0),
            ("post_ap", c.post_ap, average_precision(post)),
            ("post_of1", c.post_of1, optimal_f1(post).0),
        ];
        for (field, reported, recomputed) in checks {
            if (reported - recomputed).abs() > tol {
                issues.push(Inconsistency {
                    cell: name.clone(),
                    field,
                    reported,
                    recomputed,
                });
            }
        }
    }
    Ok(issues)
}

/// Plain-text rendering of the report in the layout of the result table.
pub fn render_table(report: &ExperimentReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "", "G1 AP", "G1 oF1", "G2 AP", "G2 oF1", "G3 AP", "G3 oF1");
    for r in &report.reference_rows {
        let _ = writeln!(s, "{:<18} {:>6.3} {:>6.3}", format!("{} reference", r.pr_label), r.ap, r.of1);
    }
    for mode in CleaningMode::ALL {
        for r in &report.reference_rows {
            let mut line = format!("{:<18}", format!("{} {}", r.pr_label, mode));
            for traj in TrajectoryId::ALL {
                match report.cell(r.pr_label, traj, mode) {
                    Some(c) => {
                        let mark = if c.status == CellStatus::Ok { ' ' } else { '*' };
                        let _ = write!(line, " {:>6.3} {:>5.3}{mark}", c.post_ap, c.post_of1);
                    }
                    None => line.push_str("      -      -"),
                }
            }
            if report.cells.iter().any(|c| c.pr_label == r.pr_label && c.cleaning_mode == mode) {
                let _ = writeln!(s, "{line}");
            }
        }
    }
    let _ = writeln!(s, "* pipeline failed; reference metrics shown");
    s
}
