use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use periodic_od::experiment::{self, check_report, emit_report, read_report_csv, render_table, ExperimentConfig};
use periodic_od::filter::{FilterModel, FilterModelFile};
use periodic_od::io::{self, DecisionRow};
use periodic_od::metrics::{average_precision, optimal_f1, post_filter_pr, SeriesKind};
use periodic_od::preprocess::{prepare_training_set, CleaningMode};
use periodic_od::simulator::{simulate_run, RunRecord, SimulationConfig};
use periodic_od::types::{NominalTrajectory, Point2, PrCurveModel, PrLabel, TrajectoryId};
use periodic_od::{Error, GpModel};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_STRICT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "periodic-od", version, about = "Filter object detections using a learned periodic trajectory")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master or run seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a detector on one trajectory.
    Simulate {
        #[arg(long, default_value = "gamma1")]
        trajectory: TrajectoryId,
        /// PR model label, calibrated from the configured AP targets.
        #[arg(long, default_value = "PR3", conflicts_with = "ap")]
        pr: PrLabel,
        /// Explicit AP of the PR model instead of a label.
        #[arg(long)]
        ap: Option<f64>,
        #[arg(long, default_value_t = 0.9)]
        recall: f64,
        #[arg(long, default_value_t = 5)]
        periods: usize,
        /// Lag of the object behind the clock, in seconds.
        #[arg(long, default_value_t = 0.0)]
        delay: f64,
    },
    /// Learn a filter from a simulated training run (JSON).
    Train {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "auto")]
        mode: CleaningMode,
        /// Also write the aligned, cleaned training set as CSV.
        #[arg(long)]
        aligned: Option<PathBuf>,
    },
    /// Apply a trained filter to detections (CSV `t,x,y[,truth]` or run JSON).
    Filter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        detections: PathBuf,
    },
    /// Post-filter PR series of a trained filter on fresh validation runs.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "gamma1")]
        trajectory: TrajectoryId,
        #[arg(long, default_value = "PR3")]
        pr: PrLabel,
        #[arg(long, default_value_t = 10)]
        periods: usize,
    },
    /// Print an emitted report; `--check` recomputes it from the PR series.
    Report {
        #[arg(long)]
        check: bool,
    },
    /// Run the whole experiment matrix and emit the report.
    RunAll {
        /// Run cells one after another.
        #[arg(long)]
        serial: bool,
        /// Exit with status 3 if any cell's pipeline failed.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Strict(usize),
    Other(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::UnknownToken { .. } | Error::ZeroPrecision(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => io::read_json::<ExperimentConfig>(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pr_model(cfg: &ExperimentConfig, label: PrLabel) -> Result<PrCurveModel, CliError> {
    experiment::calibrate_pr_models(&cfg.ap_targets)?
        .into_iter()
        .find(|m| m.label == label)
        .ok_or_else(|| CliError::Config(format!("no AP target configured for {label}")))
}

fn require_out(cli: &Cli) -> Result<&Path, CliError> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Config("--out is required for this command".into()))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn load_model(path: &Path) -> Result<FilterModel, CliError> {
    Ok(FilterModel::from_file(io::read_json::<FilterModelFile>(path)?)?)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate {
            trajectory,
            pr,
            ap,
            recall,
            periods,
            delay,
        } => {
            let model = match ap {
                Some(ap) => PrCurveModel::from_average_precision(*ap, *pr)?,
                None => pr_model(&cfg, *pr)?,
            };
            let sim = SimulationConfig {
                delay: *delay,
                ..cfg.sim_config(*periods, cfg.master_seed)
            };
            let run = simulate_run(&NominalTrajectory::new(*trajectory), &model, *recall, &sim)?;
            let out = require_out(cli)?;
            if is_json(out) {
                io::write_json(out, &run)?;
            } else {
                io::write_run_csv(out, &run)?;
            }
            println!(
                "{} detections over {} frames ({} with the object in view)",
                run.detections.len(),
                run.n_frames,
                run.n_obj
            );
        }
        Command::Train { run, mode, aligned } => {
            let record: RunRecord = io::read_json(run)?;
            let prepared = prepare_training_set(&record, *mode)?;
            let points: Vec<_> = prepared.dataset.points.iter().map(|p| (p.pos, p.phase)).collect();
            let gp = GpModel::fit(&points, &cfg.search)?;
            let filter = FilterModel::build(gp, &prepared.dataset.inputs(), prepared.period_estimate.period)?;
            io::write_json(require_out(cli)?, &filter.to_file())?;
            if let Some(path) = aligned {
                io::write_aligned_csv(path, &prepared.dataset)?;
            }
            let h = filter.gp().hyperparams();
            println!(
                "period {:.4} s, {} training points ({} removed), sigma_max {:.4}, length scale {:.4}, noise {:.4}",
                filter.period(),
                prepared.dataset.len(),
                prepared.cleaning.removed,
                filter.sigma_max(),
                h.length_scale,
                h.noise_std
            );
        }
        Command::Filter { model, detections } => {
            let filter = load_model(model)?;
            let rows: Vec<(Point2, f64, Option<periodic_od::types::Truth>)> = if is_json(detections) {
                let run: RunRecord = io::read_json(detections)?;
                run.detections.iter().map(|d| (d.pos, d.t, Some(d.truth))).collect()
            } else {
                io::read_detections_csv(detections)?
                    .into_iter()
                    .map(|r| (Point2::new(r.x, r.y), r.t, r.truth))
                    .collect()
            };
            let obs: Vec<(Point2, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
            let (evaluations, sync) = filter.evaluate_run(&obs);
            let out: Vec<DecisionRow> = rows
                .iter()
                .zip(&evaluations)
                .map(|(r, e)| DecisionRow::new(r.0, r.1, r.2, e))
                .collect();
            let kept = out.iter().filter(|r| r.is_keep()).count();
            io::write_csv(require_out(cli)?, out.iter())?;
            println!("kept {kept} of {} detections ({sync:?})", out.len());
        }
        Command::Evaluate {
            model,
            trajectory,
            pr,
            periods,
        } => {
            let filter = load_model(model)?;
            let pr = pr_model(&cfg, *pr)?;
            let val = cfg.sim_config(*periods, cfg.master_seed);
            let eval = post_filter_pr(
                &NominalTrajectory::new(*trajectory),
                &pr,
                &filter,
                &cfg.recall_grid,
                &val,
                SeriesKind::PostFilterAuto,
            )?;
            if let Some(out) = &cli.out {
                io::write_series_csv(out, &[&eval.reference, &eval.post])?;
            }
            println!(
                "reference AP {:.4} oF1 {:.4}; post-filter AP {:.4} oF1 {:.4}",
                average_precision(&eval.reference),
                optimal_f1(&eval.reference).0,
                average_precision(&eval.post),
                optimal_f1(&eval.post).0
            );
        }
        Command::Report { check } => {
            let dir = cli.out.clone().unwrap_or(cfg.output_dir.clone());
            let report = read_report_csv(&dir.join("report.csv"))?;
            print!("{}", render_table(&report));
            if *check {
                let issues = check_report(&dir, 1e-9)?;
                for i in &issues {
                    eprintln!(
                        "{} {}: reported {} but series gives {}",
                        i.cell, i.field, i.reported, i.recomputed
                    );
                }
                if !issues.is_empty() {
                    return Err(CliError::Other(Error::Malformed(format!(
                        "{} inconsistent values",
                        issues.len()
                    ))));
                }
                println!("all {} cells consistent with their PR series", report.cells.len());
            }
        }
        Command::RunAll { serial, strict } => {
            let cfg = ExperimentConfig {
                parallel: cfg.parallel && !serial,
                ..cfg
            };
            let outcome = experiment::run_experiment(&cfg)?;
            emit_report(&outcome, &cfg, &cfg.output_dir)?;
            print!("{}", render_table(&outcome.report));
            println!("report written to {}", cfg.output_dir.display());
            let failed = outcome.report.failed_cells();
            if *strict && failed > 0 {
                return Err(CliError::Strict(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Strict(n)) => {
            eprintln!("{n} cell(s) failed");
            ExitCode::from(EXIT_STRICT)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
