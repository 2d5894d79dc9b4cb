//! On-disk result store: a JSON manifest plus CSV shards of estimates.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimulationConfig;
use crate::error::{Error, Result};
use crate::neighbors::{LocalOptions, MethodConfig};

pub const MANIFEST_FILE: &str = "store.json";
pub const FAILURES_FILE: &str = "failures.csv";
const SHARD_PREFIX: &str = "estimates-";
const REPLICATES_PER_SHARD: u64 = 100;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub replicates: u64,
    /// Population order; estimates are indexed by position here.
    pub experiment_ids: Vec<String>,
    pub references: Vec<f64>,
    pub configs: Vec<MethodConfig>,
    pub simulation: SimulationConfig,
    pub local: LocalOptions,
    pub dataset_sha256: Option<String>,
    /// Free-form run configuration recorded by the caller.
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: u64,
    /// Empty when the whole replicate failed.
    pub experiment_id: String,
    /// Method configuration label; empty when the whole replicate failed.
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultStore {
    pub manifest: StoreManifest,
    /// `estimates[config][(replicate - 1) * experiments + experiment]`,
    /// NaN where the experiment was excluded or estimation failed.
    estimates: Vec<Vec<f64>>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    replicate: u64,
    experiment_id: String,
    method: String,
    q: String,
    rho: String,
    #[serde(rename = "M0")]
    m0: String,
    estimate: f64,
}

impl ResultStore {
    pub fn new(manifest: StoreManifest) -> Self {
        let size = (manifest.replicates as usize) * manifest.experiment_ids.len();
        let estimates = vec![vec![f64::NAN; size]; manifest.configs.len()];
        ResultStore {
            manifest,
            estimates,
            failures: Vec::new(),
        }
    }

    pub fn experiments(&self) -> usize {
        self.manifest.experiment_ids.len()
    }

    pub fn replicates(&self) -> u64 {
        self.manifest.replicates
    }

    pub fn configs(&self) -> &[MethodConfig] {
        &self.manifest.configs
    }

    pub fn config_index(&self, config: &MethodConfig) -> Option<usize> {
        self.manifest.configs.iter().position(|c| c == config)
    }

    fn slot(&self, replicate: u64, experiment: usize) -> usize {
        (replicate as usize - 1) * self.experiments() + experiment
    }

    pub fn set(&mut self, config: usize, replicate: u64, experiment: usize, value: f64) {
        let s = self.slot(replicate, experiment);
        self.estimates[config][s] = value;
    }

    pub fn get(&self, config: usize, replicate: u64, experiment: usize) -> Option<f64> {
        let v = self.estimates[config][self.slot(replicate, experiment)];
        (!v.is_nan()).then_some(v)
    }

    /// Number of stored (non-missing) estimates.
    pub fn count(&self) -> usize {
        self.estimates
            .iter()
            .map(|c| c.iter().filter(|v| !v.is_nan()).count())
            .sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        // Stale shards from an earlier, longer run would otherwise be loaded.
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if is_shard(&path) {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let file = File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &self.manifest)?;

        let n_exp = self.experiments();
        let columns: Vec<[String; 3]> = self.manifest.configs.iter().map(|c| c.columns()).collect();
        let mut first = 1;
        while first <= self.replicates() {
            let last = (first + REPLICATES_PER_SHARD - 1).min(self.replicates());
            let path = dir.join(format!("{SHARD_PREFIX}{first:06}.csv"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record(["replicate", "experiment_id", "method", "q", "rho", "M0", "estimate"])?;
            for b in first..=last {
                for (c, config) in self.manifest.configs.iter().enumerate() {
                    for e in 0..n_exp {
                        if let Some(value) = self.get(c, b, e) {
                            let [q, rho, m0] = &columns[c];
                            w.write_record([
                                b.to_string().as_str(),
                                &self.manifest.experiment_ids[e],
                                config.method.name(),
                                q,
                                rho,
                                m0,
                                &value.to_string(),
                            ])?;
                        }
                    }
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            first = last + 1;
        }

        let path = dir.join(FAILURES_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["replicate", "experiment_id", "method", "message"])?;
        for f in &self.failures {
            w.write_record([f.replicate.to_string().as_str(), &f.experiment_id, &f.method, &f.message])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let file = File::open(&manifest_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput {
                path: manifest_path.clone(),
                message: "no result store here; run `simulate` first".into(),
            },
            _ => Error::io(&manifest_path, e),
        })?;
        let manifest: StoreManifest = serde_json::from_reader(BufReader::new(file))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "result store format {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let mut store = ResultStore::new(manifest);
        let exp_index: HashMap<&str, usize> = store
            .manifest
            .experiment_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let config_index: HashMap<(String, [String; 3]), usize> = store
            .manifest
            .configs
            .iter()
            .enumerate()
            .map(|(i, c)| ((c.method.name().to_string(), c.columns()), i))
            .collect();

        let mut shards: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_shard(p))
            .collect();
        shards.sort();
        let mut updates = Vec::new();
        for path in &shards {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut reader = csv::Reader::from_reader(BufReader::new(file));
            for (line, row) in reader.deserialize::<Row>().enumerate() {
                let row = row.map_err(|e| Error::Parse {
                    line: line as u64 + 2,
                    message: format!("{}: {e}", path.display()),
                })?;
                let bad = |what: &str| Error::Validation(format!("{}: {what} in row {}", path.display(), line + 2));
                let e = *exp_index
                    .get(row.experiment_id.as_str())
                    .ok_or_else(|| bad("unknown experiment"))?;
                let c = *config_index
                    .get(&(row.method.clone(), [row.q, row.rho, row.m0]))
                    .ok_or_else(|| bad("unknown method configuration"))?;
                if row.replicate == 0 || row.replicate > store.replicates() {
                    return Err(bad("replicate out of range"));
                }
                updates.push((c, row.replicate, e, row.estimate));
            }
        }
        for (c, b, e, v) in updates {
            store.set(c, b, e, v);
        }

        let path = dir.join(FAILURES_FILE);
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut reader = csv::Reader::from_reader(BufReader::new(file));
            for rec in reader.deserialize::<Failure>() {
                store.failures.push(rec?);
            }
        }
        Ok(store)
    }
}

fn is_shard(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with(SHARD_PREFIX) && n.ends_with(".csv"))
}
