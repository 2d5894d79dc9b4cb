use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArmPair, ArmSnapshot, ExperimentSeries, Snapshot};
use crate::error::{Error, Result};

pub const CANONICAL_COLUMNS: [&str; 7] = [
    "experiment_id",
    "metric_id",
    "time_days",
    "arm",
    "count_cum",
    "mean_cum",
    "variance_cum",
];

/// Column layout of the public ASOS Digital Experiments release. One row
/// carries both arms of one (experiment, variant, metric, time) snapshot.
pub const ASOS_COLUMNS: [&str; 10] = [
    "experiment_id",
    "variant_id",
    "metric_id",
    "time_since_start",
    "count_c",
    "count_t",
    "mean_c",
    "mean_t",
    "variance_c",
    "variance_t",
];

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalRow {
    experiment_id: String,
    metric_id: String,
    time_days: f64,
    arm: String,
    count_cum: u64,
    mean_cum: f64,
    variance_cum: f64,
}

#[derive(Debug, Deserialize)]
struct AsosRow {
    experiment_id: String,
    variant_id: String,
    metric_id: String,
    time_since_start: f64,
    count_c: f64,
    count_t: f64,
    mean_c: f64,
    mean_t: f64,
    variance_c: f64,
    variance_t: f64,
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    let missing: Vec<&&str> = expected.iter().filter(|c| !got.contains(c)).collect();
    if !missing.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: format!("header is missing column(s) {missing:?}; expected {expected:?}"),
        });
    }
    Ok(())
}

fn row_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: match err.kind() {
            csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
            _ => err.to_string(),
        },
    }
}

// Non-negative finite floats order like their bit patterns.
type TimeKey = u64;

#[derive(Default)]
struct PendingSnapshot {
    control: Option<ArmSnapshot>,
    treatment: Option<ArmSnapshot>,
}

/// Parses a canonical snapshot CSV. Returns one series per
/// `(experiment_id, metric_id)`, ordered by that key.
pub fn parse_snapshot_reader(source: impl Read) -> Result<Vec<ExperimentSeries>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    check_header(&mut reader, &CANONICAL_COLUMNS)?;

    let mut groups: BTreeMap<(String, String), BTreeMap<TimeKey, PendingSnapshot>> =
        BTreeMap::new();
    for record in reader.deserialize::<CanonicalRow>() {
        let row = record.map_err(row_error)?;
        if !row.time_days.is_finite() || row.time_days < 0.0 {
            return Err(Error::Validation(format!(
                "experiment {}: time_days {} must be a non-negative number",
                row.experiment_id, row.time_days
            )));
        }
        let time = row.time_days + 0.0; // folds -0.0 into 0.0
        let arm = ArmSnapshot {
            count_cum: row.count_cum,
            mean_cum: row.mean_cum,
            variance_cum: row.variance_cum,
        };
        let pending = groups
            .entry((row.experiment_id.clone(), row.metric_id.clone()))
            .or_default()
            .entry(time.to_bits())
            .or_default();
        let slot = match row.arm.as_str() {
            "c" => &mut pending.control,
            "t" => &mut pending.treatment,
            other => {
                return Err(Error::Validation(format!(
                    "experiment {}: unknown arm {other:?} (expected \"t\" or \"c\")",
                    row.experiment_id
                )))
            }
        };
        if slot.replace(arm).is_some() {
            return Err(Error::Validation(format!(
                "experiment {}, metric {}: duplicate arm {} at t = {time}",
                row.experiment_id, row.metric_id, row.arm
            )));
        }
    }

    let mut out = Vec::with_capacity(groups.len());
    for ((experiment_id, metric_id), snaps) in groups {
        let mut snapshots = Vec::with_capacity(snaps.len());
        for (key, pending) in snaps {
            let time_days = f64::from_bits(key);
            match (pending.control, pending.treatment) {
                (Some(control), Some(treatment)) => snapshots.push(Snapshot {
                    time_days,
                    arms: ArmPair::new(control, treatment),
                }),
                (c, _) => {
                    let missing = if c.is_none() { "c" } else { "t" };
                    return Err(Error::Validation(format!(
                        "experiment {experiment_id}, metric {metric_id}: arm {missing} missing at t = {time_days}"
                    )));
                }
            }
        }
        out.push(ExperimentSeries::new(experiment_id, metric_id, snapshots)?);
    }
    Ok(out)
}

pub fn parse_snapshot_file(path: &Path) -> Result<Vec<ExperimentSeries>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            message: "dataset not found".into(),
        },
        _ => Error::io(path, e),
    })?;
    parse_snapshot_reader(std::io::BufReader::new(file))
}

/// Writes series in the canonical schema, one row per snapshot and arm.
pub fn write_snapshot_csv(series: &[ExperimentSeries], sink: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    for s in series {
        for snap in s.snapshots() {
            for (code, arm) in [("t", &snap.arms.treatment), ("c", &snap.arms.control)] {
                writer.serialize(CanonicalRow {
                    experiment_id: s.experiment_id().to_string(),
                    metric_id: s.metric_id().to_string(),
                    time_days: snap.time_days,
                    arm: code.to_string(),
                    count_cum: arm.count_cum,
                    mean_cum: arm.mean_cum,
                    variance_cum: arm.variance_cum,
                })?;
            }
        }
    }
    writer.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

/// Converts an ASOS-format file into canonical rows.
///
/// Mapping: `experiment_id` becomes `"{experiment_id}:{variant_id}"` so that
/// multi-variant tests yield one series per treatment variant;
/// `time_since_start` (days) maps to `time_days`; `*_c`/`*_t` columns map to
/// the control/treatment rows. Counts must be whole numbers. When
/// `metric` is given, only rows for that metric are kept.
pub fn asos_to_canonical(source: impl Read, sink: impl Write, metric: Option<&str>) -> Result<usize> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    check_header(&mut reader, &ASOS_COLUMNS)?;
    let mut writer = csv::Writer::from_writer(sink);
    let mut rows = 0;
    for record in reader.deserialize::<AsosRow>() {
        let row = record.map_err(row_error)?;
        if metric.is_some_and(|m| m != row.metric_id) {
            continue;
        }
        let experiment_id = format!("{}:{}", row.experiment_id, row.variant_id);
        for (code, count, mean, var) in [
            ("t", row.count_t, row.mean_t, row.variance_t),
            ("c", row.count_c, row.mean_c, row.variance_c),
        ] {
            if !(count >= 0.0 && count.fract() == 0.0) {
                return Err(Error::Validation(format!(
                    "experiment {experiment_id}: count {count} is not a whole number"
                )));
            }
            writer.serialize(CanonicalRow {
                experiment_id: experiment_id.clone(),
                metric_id: row.metric_id.clone(),
                time_days: row.time_since_start,
                arm: code.to_string(),
                count_cum: count as u64,
                mean_cum: mean,
                variance_cum: var,
            })?;
            rows += 1;
        }
    }
    writer.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(rows)
}
