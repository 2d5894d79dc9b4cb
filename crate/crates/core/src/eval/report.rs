use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{DominanceReport, MethodScore};
use crate::error::{Error, Result};

pub const SCORES_CSV: &str = "scores.csv";
pub const SCORES_JSON: &str = "scores.json";
pub const FIGURE_CSV: &str = "figure1_data.csv";
pub const DOMINANCE_JSON: &str = "dominance_report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub scores_csv: PathBuf,
    pub scores_json: PathBuf,
    pub figure_csv: PathBuf,
}

#[derive(Serialize)]
struct ScoreRow {
    method: &'static str,
    q: Option<usize>,
    rho: Option<f64>,
    #[serde(rename = "M0")]
    m0: Option<usize>,
    mse: f64,
    reduction_pct: f64,
    win_rate_pct: f64,
    ci_low: f64,
    ci_high: f64,
    experiments: usize,
}

impl From<&MethodScore> for ScoreRow {
    fn from(s: &MethodScore) -> Self {
        ScoreRow {
            method: s.config.method.name(),
            q: s.config.q,
            rho: s.config.rho,
            m0: s.config.m0,
            mse: s.mse,
            reduction_pct: s.reduction_pct,
            win_rate_pct: s.win_rate_pct,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            experiments: s.experiments,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_scores_csv(scores: &[MethodScore], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for s in scores {
        w.serialize(ScoreRow::from(s))?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

#[derive(Serialize)]
struct FigureRow {
    series: &'static str,
    q: Option<usize>,
    mse: f64,
    reduction_pct: f64,
    win_rate_pct: f64,
    ci_low: f64,
    ci_high: f64,
}

/// One series per method across `q`. Methods without a neighborhood size
/// are repeated at every `q` so they plot as reference lines; methods with
/// several `(rho, M0)` settings contribute only their first setting.
fn figure_rows(scores: &[MethodScore]) -> Vec<FigureRow> {
    let mut qs: Vec<usize> = scores.iter().filter_map(|s| s.config.q).collect();
    qs.sort_unstable();
    qs.dedup();
    let row = |s: &MethodScore, q: Option<usize>| FigureRow {
        series: s.config.method.name(),
        q,
        mse: s.mse,
        reduction_pct: s.reduction_pct,
        win_rate_pct: s.win_rate_pct,
        ci_low: s.ci_low,
        ci_high: s.ci_high,
    };
    let mut methods: Vec<_> = scores.iter().map(|s| s.config.method).collect();
    methods.dedup();
    let mut seen = Vec::new();
    let mut rows = Vec::new();
    for m in methods {
        if seen.contains(&m) {
            continue;
        }
        seen.push(m);
        let of_method: Vec<&MethodScore> = scores.iter().filter(|s| s.config.method == m).collect();
        let first = of_method[0];
        if first.config.q.is_none() {
            if qs.is_empty() {
                rows.push(row(first, None));
            }
            for &q in &qs {
                rows.push(row(first, Some(q)));
            }
        } else {
            let mut series: Vec<&MethodScore> = of_method
                .into_iter()
                .filter(|s| s.config.rho == first.config.rho && s.config.m0 == first.config.m0)
                .collect();
            series.sort_by_key(|s| s.config.q);
            series.dedup_by_key(|s| s.config.q);
            rows.extend(series.into_iter().map(|s| row(s, s.config.q)));
        }
    }
    rows
}

/// Writes `scores.csv`, `scores.json` and `figure1_data.csv` into `dir`.
pub fn emit_report(scores: &[MethodScore], dir: &Path) -> Result<ReportFiles> {
    if scores.is_empty() {
        return Err(Error::Validation("no scores to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        scores_csv: dir.join(SCORES_CSV),
        scores_json: dir.join(SCORES_JSON),
        figure_csv: dir.join(FIGURE_CSV),
    };
    write_scores_csv(scores, create(&files.scores_csv)?)?;

    let rows: Vec<ScoreRow> = scores.iter().map(ScoreRow::from).collect();
    let mut json = create(&files.scores_json)?;
    serde_json::to_writer_pretty(&mut json, &rows)?;
    writeln!(json).map_err(|e| Error::io(&files.scores_json, e))?;
    json.flush().map_err(|e| Error::io(&files.scores_json, e))?;

    let mut w = csv::Writer::from_writer(create(&files.figure_csv)?);
    for r in figure_rows(scores) {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&files.figure_csv, e))?;
    Ok(files)
}

pub fn write_dominance_report(report: &DominanceReport, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, report)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
