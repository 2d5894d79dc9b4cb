//! End-to-end orchestration shared by the command-line front end and tests.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{effect_estimate, parse_snapshot_reader, ExperimentSeries};
use crate::error::{Error, Result};
use crate::eval::{score_methods, MethodScore, ScoreOptions, DEFAULT_CI_RESAMPLES};
use crate::exec::Exec;
use crate::neighbors::{CrossFit, LocalOptions, Method, MethodConfig};
use crate::semisynth::{fit_nhpp, run_bootstrap, BootstrapConfig, NhppModel, ResultStore, SimulationConfig};
use crate::similarity::{normalized_shape, DistanceMatrix, ProcessDistances, ProcessFeatures, SimilarityConfig, Smoothing};

pub const DEFAULT_OUT_DIR: &str = "localeb-out";
pub const STORE_DIR: &str = "store";

/// Every tunable of a pipeline run. Serialized verbatim into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub metric: Option<String>,
    pub folds: usize,
    pub replicates: u64,
    pub q_grid: Vec<usize>,
    pub rho: f64,
    pub m0: usize,
    pub bins: usize,
    pub bandwidth: f64,
    pub band_fraction: f64,
    pub smoothing: Smoothing,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    pub noise_scale: f64,
    pub cross_fit: CrossFit,
    pub include_target: bool,
    pub ci_resamples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            metric: None,
            folds: 5,
            replicates: 1000,
            q_grid: (6..=20).step_by(2).collect(),
            rho: 0.75,
            m0: 30,
            bins: 500,
            bandwidth: 0.04,
            band_fraction: 0.1,
            smoothing: Smoothing::Gaussian,
            seed: 42,
            methods: Method::ALL.to_vec(),
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            noise_scale: 1.0,
            cross_fit: CrossFit::Rotated,
            include_target: false,
            ci_resamples: DEFAULT_CI_RESAMPLES,
        }
    }
}

impl RunConfig {
    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            rho: self.rho,
            bins: self.bins,
            bandwidth: self.bandwidth,
            band_fraction: self.band_fraction,
            smoothing: self.smoothing,
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            folds: self.folds,
            noise_scale: self.noise_scale,
        }
    }

    pub fn local(&self) -> LocalOptions {
        LocalOptions {
            cross_fit: self.cross_fit,
            include_target: self.include_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity().validate()?;
        self.simulation().validate()?;
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.methods.iter().any(|m| m.uses_q()) && self.q_grid.is_empty() {
            return Err(Error::Config("q grid is empty".into()));
        }
        if self.q_grid.contains(&0) || self.m0 == 0 {
            return Err(Error::Config("q and M0 must be positive".into()));
        }
        Ok(())
    }

    /// Method configurations in canonical order: raw first (always present,
    /// as the scoring baseline), then classical EB, then every local method
    /// at each `q` of the grid.
    pub fn method_configs(&self) -> Vec<MethodConfig> {
        let mut out = vec![MethodConfig::raw()];
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        for m in methods {
            match m {
                Method::Raw => {}
                Method::ClassicalEb => out.push(MethodConfig::new(m, 0, 0.0, 0)),
                _ => {
                    for &q in &self.q_grid {
                        out.push(MethodConfig::new(m, q, self.rho, self.m0));
                    }
                }
            }
        }
        out
    }

    pub fn score_options(&self, exec: Exec) -> ScoreOptions {
        ScoreOptions {
            ci_resamples: self.ci_resamples,
            seed: self.seed,
            exec,
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.out_dir.join(STORE_DIR)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<ExperimentSeries>,
    pub sha256: String,
}

/// Parses snapshot CSV bytes and keeps one metric, sorted by experiment id.
pub fn dataset_from_bytes(bytes: &[u8], metric: Option<&str>) -> Result<Dataset> {
    let mut series = parse_snapshot_reader(bytes)?;
    let mut metrics: Vec<&str> = series.iter().map(|s| s.metric_id()).collect();
    metrics.sort_unstable();
    metrics.dedup();
    let chosen = match metric {
        Some(m) => {
            if !metrics.contains(&m) {
                return Err(Error::Validation(format!(
                    "metric '{m}' not in dataset (found: {})",
                    metrics.join(", ")
                )));
            }
            m.to_string()
        }
        None if metrics.len() == 1 => metrics[0].to_string(),
        None => {
            return Err(Error::Config(format!(
                "dataset has several metrics ({}); choose one with --metric",
                metrics.join(", ")
            )))
        }
    };
    series.retain(|s| s.metric_id() == chosen);
    series.sort_by(|a, b| a.experiment_id().cmp(b.experiment_id()));
    Ok(Dataset {
        series,
        sha256: sha256_hex(bytes),
    })
}

pub fn load_dataset(path: &Path, metric: Option<&str>) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput {
                path: path.to_path_buf(),
                message: "dataset not found".into(),
            },
            _ => Error::io(path, e),
        })?;
    dataset_from_bytes(&bytes, metric)
}

/// Traffic models, process features and raw distances of the experiments
/// that can be modeled. Everything is in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub models: Vec<NhppModel>,
    pub features: Vec<ProcessFeatures>,
    pub distances: ProcessDistances,
    /// Experiments dropped because they could not be modeled, with reasons.
    pub skipped: Vec<(String, String)>,
}

pub fn prepare(series: &[ExperimentSeries], config: &RunConfig, exec: Exec) -> Result<Prepared> {
    let similarity = config.similarity();
    similarity.validate()?;
    let mut models = Vec::new();
    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for s in series {
        match fit_nhpp(s).and_then(|m| Ok((m, normalized_shape(s, &similarity)?))) {
            Ok((m, f)) => {
                models.push(m);
                features.push(f);
            }
            Err(e) => {
                log::warn!("skipping experiment {}: {e}", s.experiment_id());
                skipped.push((s.experiment_id().to_string(), e.to_string()));
            }
        }
    }
    if models.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "only {} usable experiments; need at least 3",
            models.len()
        )));
    }
    let distances = ProcessDistances::compute(&features, similarity.band_fraction, exec)?;
    Ok(Prepared {
        models,
        features,
        distances,
        skipped,
    })
}

/// One composite distance matrix per distinct `rho` among `configs`.
pub fn composites_for(distances: &ProcessDistances, configs: &[MethodConfig]) -> Vec<(f64, DistanceMatrix)> {
    let mut rhos: Vec<f64> = configs.iter().filter_map(|c| c.rho).collect();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    rhos.into_iter().map(|r| (r, distances.composite(r))).collect()
}

pub fn simulate(
    prepared: &Prepared,
    config: &RunConfig,
    configs: &[MethodConfig],
    dataset_sha256: Option<String>,
    exec: Exec,
) -> Result<ResultStore> {
    let composites = composites_for(&prepared.distances, configs);
    let boot = BootstrapConfig {
        replicates: config.replicates,
        master_seed: config.seed,
        simulation: config.simulation(),
        local: config.local(),
        exec,
    };
    run_bootstrap(
        &prepared.models,
        &composites,
        configs,
        &boot,
        dataset_sha256,
        serde_json::to_value(config)?,
    )
}

pub fn evaluate(store: &ResultStore, config: &RunConfig, exec: Exec) -> Result<Vec<MethodScore>> {
    score_methods(store, &config.score_options(exec))
}

/// Summary row per experiment for `experiments.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment_id: String,
    pub metric_id: String,
    pub snapshots: usize,
    pub horizon_days: f64,
    pub total_count: u64,
    pub y: Option<f64>,
    pub v: Option<f64>,
}

pub fn summarize(series: &[ExperimentSeries]) -> Vec<ExperimentSummary> {
    series
        .iter()
        .map(|s| {
            let est = effect_estimate(s, s.last_index()).ok();
            ExperimentSummary {
                experiment_id: s.experiment_id().to_string(),
                metric_id: s.metric_id().to_string(),
                snapshots: s.snapshots().len(),
                horizon_days: s.horizon_days(),
                total_count: s.total_count(),
                y: est.map(|e| e.y),
                v: est.map(|e| e.v),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to the outputs of every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    /// Extra command-specific settings (dominance spec, sweep grid, ...).
    pub extra: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub skipped_experiments: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            extra: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            skipped_experiments: Vec::new(),
        }
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("manifest-{}.json", self.command))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = self.path_in(dir);
        let mut out = create_file(&path)?;
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out).map_err(|e| Error::io(&path, e))?;
        out.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Creates `path` (and its parent directories) for buffered writing.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a run configuration from TOML, or from the `config` field of a
/// JSON run manifest.
pub fn read_config_file(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            message: "config file not found".into(),
        },
        _ => Error::io(path, e),
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(manifest.config)
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
