//! CSV and JSON readers/writers for runs, aligned datasets, PR series and
//! per-detection filter decisions.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Decision, Evaluation};
use crate::metrics::{PrPoint, PrSeries, SeriesKind};
use crate::preprocess::AlignedDataset;
use crate::simulator::RunRecord;
use crate::types::{Point2, Truth};

/// One detection; `truth` is empty for unlabeled detector output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub truth: Option<Truth>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phase: f64,
    pub truth: Truth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub series: SeriesKind,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub truth: Option<Truth>,
    pub t_hat: f64,
    pub sigma_hat: f64,
    pub run_phase: f64,
    pub decision: String,
    pub reason: Option<String>,
}

impl DecisionRow {
    pub fn new(pos: Point2, t: f64, truth: Option<Truth>, e: &Evaluation) -> DecisionRow {
        let (decision, reason) = match e.decision {
            Decision::Keep => ("keep", None),
            Decision::Discard(r) => ("discard", Some(r.token().to_string())),
        };
        DecisionRow {
            t,
            x: pos.x,
            y: pos.y,
            truth,
            t_hat: e.prediction.t_hat,
            sigma_hat: e.prediction.sigma_hat,
            run_phase: e.run_phase,
            decision: decision.to_string(),
            reason,
        }
    }

    pub fn is_keep(&self) -> bool {
        self.decision == "keep"
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn run_rows(run: &RunRecord) -> impl Iterator<Item = DetectionRow> + '_ {
    run.detections.iter().map(|d| DetectionRow {
        t: d.t,
        x: d.pos.x,
        y: d.pos.y,
        truth: Some(d.truth),
    })
}

pub fn write_run_csv(path: &Path, run: &RunRecord) -> Result<()> {
    write_csv(path, run_rows(run))
}

/// Reads detections from CSV (`t,x,y[,truth]`), sorted by time.
pub fn read_detections_csv(path: &Path) -> Result<Vec<DetectionRow>> {
    let mut rows: Vec<DetectionRow> = read_csv(path)?;
    if let Some(bad) = rows.iter().find(|r| !(r.t.is_finite() && r.x.is_finite() && r.y.is_finite())) {
        return Err(Error::Malformed(format!("non-finite detection at t = {}", bad.t)));
    }
    rows.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(rows)
}

pub fn write_aligned_csv(path: &Path, data: &AlignedDataset) -> Result<()> {
    write_csv(
        path,
        data.points.iter().map(|p| AlignedRow {
            t: p.t,
            x: p.pos.x,
            y: p.pos.y,
            phase: p.phase,
            truth: p.truth,
        }),
    )
}

pub fn series_rows(series: &[&PrSeries]) -> Vec<SeriesRow> {
    series
        .iter()
        .flat_map(|s| {
            s.points().iter().map(|p| SeriesRow {
                series: s.kind,
                recall: p.recall,
                precision: p.precision,
            })
        })
        .collect()
}

pub fn write_series_csv(path: &Path, series: &[&PrSeries]) -> Result<()> {
    write_csv(path, series_rows(series))
}

/// Reads every series of a PR CSV, in order of first appearance.
pub fn read_series_csv(path: &Path) -> Result<Vec<PrSeries>> {
    let rows: Vec<SeriesRow> = read_csv(path)?;
    let mut kinds: Vec<SeriesKind> = Vec::new();
    for r in &rows {
        if !kinds.contains(&r.series) {
            kinds.push(r.series);
        }
    }
    kinds
        .into_iter()
        .map(|k| {
            PrSeries::new(
                rows.iter().filter(|r| r.series == k).map(|r| PrPoint {
                    recall: r.recall,
                    precision: r.precision,
                }),
                k,
            )
        })
        .collect()
}
