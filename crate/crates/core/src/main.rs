use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use localeb::corpus::{generate_corpus, write_latents_csv, CorpusConfig};
use localeb::data::{asos_to_canonical, write_snapshot_csv};
use localeb::eb::{LatentType, MixturePriorSpec};
use localeb::error::ErrorCategory;
use localeb::eval::{
    emit_report, mixture_dominance_check, sensitivity_sweep, write_dominance_report, write_scores_csv,
    DominanceConfig, SweepGrid, DOMINANCE_JSON,
};
use localeb::exec::{with_worker_pool, Exec};
use localeb::neighbors::{diagnostics, write_diagnostics_csv, CrossFit, Method, MethodConfig};
use localeb::pipeline::{
    create_file, dataset_from_bytes, evaluate, load_dataset, prepare, read_config_file, sha256_hex, simulate,
    summarize, Dataset, InputHash, Prepared, RunConfig, RunManifest,
};
use localeb::semisynth::{simulate_population, ResultStore};
use localeb::similarity::{write_shapes_csv, Smoothing};
use localeb::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "localeb", version, about = "Local empirical Bayes shrinkage for A/B-test effects", long_about = None)]
struct Cli {
    /// Worker threads; 0 uses one per core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a snapshot CSV; write its canonical form and a per-experiment summary.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Convert an ASOS-format CSV into the canonical snapshot schema.
    ConvertAsos {
        #[command(flatten)]
        common: CommonArgs,
        /// ASOS-format input CSV.
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        /// Canonical output CSV.
        #[arg(long, value_name = "CSV")]
        output: PathBuf,
        /// Keep only this metric.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Generate the synthetic two-cluster snapshot corpus.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Compute process shapes and the pairwise distance matrix.
    Features {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Fit traffic models and run the bootstrap, storing every estimate.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        methods: MethodArgs,
    },
    /// Score a stored bootstrap run and write the report files.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Result store directory [default: <out>/store].
        #[arg(long, value_name = "DIR")]
        store: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Sensitivity sweep of CF-SHN over q, rho and M0.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Monte Carlo check of local versus global shrinkage under a mixture prior.
    TheoryCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        theory: TheoryArgs,
    },
    /// Full pipeline: features, bootstrap, scores and report.
    Reproduce {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Generate the synthetic corpus instead of reading --dataset.
        #[arg(long, conflicts_with = "dataset")]
        synthetic: bool,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        methods: MethodArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML run configuration, or a JSON run manifest to rerun; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: localeb-out].
    #[arg(long, env = "LOCALEB_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed [default: 42].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Snapshot CSV in the canonical schema.
    #[arg(long, value_name = "CSV")]
    dataset: Option<PathBuf>,
    /// Metric to analyse; required when the dataset has several.
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    /// Shape weight in the composite distance [default: 0.75].
    #[arg(long)]
    rho: Option<f64>,
    /// Shape grid bins L [default: 500].
    #[arg(long, value_name = "L")]
    bins: Option<usize>,
    /// Gaussian smoothing bandwidth h in normalized time [default: 0.04].
    #[arg(long, value_name = "H")]
    bandwidth: Option<f64>,
    /// Sakoe-Chiba band as a fraction of L [default: 0.1].
    #[arg(long, value_name = "ALPHA")]
    band_fraction: Option<f64>,
    /// gaussian, none or moving-average:<bins> [default: gaussian].
    #[arg(long, value_parser = parse_smoothing)]
    smoothing: Option<Smoothing>,
}

#[derive(Args, Debug)]
struct SimArgs {
    /// Cross-fitting folds K [default: 5].
    #[arg(long, value_name = "K")]
    folds: Option<usize>,
    /// Bootstrap replicates B [default: 1000].
    #[arg(long, value_name = "B")]
    replicates: Option<u64>,
    /// Multiplier on the simulated outcome noise variance [default: 1].
    #[arg(long)]
    noise_scale: Option<f64>,
    /// rotated, fold-shrink or pilot-split [default: rotated].
    #[arg(long, value_parser = parse_cross_fit)]
    cross_fit: Option<CrossFit>,
    /// Include the target in its own neighborhood fit (ablation).
    #[arg(long)]
    include_target: bool,
}

#[derive(Args, Debug)]
struct MethodArgs {
    /// Neighborhood sizes, "6,8,10" or "6..20:2" [default: 6..20:2].
    #[arg(long, value_name = "GRID", value_parser = parse_q_grid)]
    q_grid: Option<QGrid>,
    /// Stage-1 candidate set size M0 [default: 30].
    #[arg(long, value_name = "M0")]
    m0: Option<usize>,
    /// Comma-separated methods [default: raw,classical-eb,outcome-only,process-only,cf-shn].
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Bootstrap resamples for the reduction intervals [default: 2000].
    #[arg(long)]
    ci_resamples: Option<usize>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// q values of the sweep [default: 6..20:2].
    #[arg(long, value_name = "GRID", value_parser = parse_q_grid)]
    q_values: Option<QGrid>,
    /// rho values of the sweep [default: 0.5,0.6,0.75,0.9].
    #[arg(long, value_delimiter = ',')]
    rho_values: Option<Vec<f64>>,
    /// M0 values of the sweep [default: 20,30,40].
    #[arg(long, value_delimiter = ',')]
    m0_values: Option<Vec<usize>>,
    /// q held fixed while rho or M0 varies [default: 10].
    #[arg(long)]
    base_q: Option<usize>,
    /// Every combination instead of one-at-a-time sweeps.
    #[arg(long)]
    full_product: bool,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Experiments in the synthetic corpus [default: 40].
    #[arg(long)]
    experiments: Option<usize>,
    /// Daily snapshots per experiment [default: 14].
    #[arg(long)]
    days: Option<usize>,
    /// Seed of the synthetic corpus [default: 7].
    #[arg(long)]
    corpus_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    /// two-type-exact, two-type or single-type [default: two-type-exact].
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// JSON mixture spec: {"types":[{"weight","mean","variance"}],"feature_informativeness"}.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Sampling variance v of every draw.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 1_000_000)]
    draws: u64,
    /// Also run the plug-in variant with centers fitted on this many draws.
    #[arg(long, value_name = "N")]
    plug_in: Option<usize>,
}

#[derive(Debug, Clone)]
struct QGrid(Vec<usize>);

fn parse_q_grid(s: &str) -> std::result::Result<QGrid, String> {
    let bad = || format!("invalid grid '{s}': use \"6,8,10\" or \"6..20:2\"");
    let values: Vec<usize> = if let Some((range, step)) = s.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        let step: usize = step.trim().parse().map_err(|_| bad())?;
        if step == 0 || hi < lo {
            return Err(bad());
        }
        (lo..=hi).step_by(step).collect()
    } else if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<std::result::Result<_, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(QGrid(values))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_cross_fit(s: &str) -> std::result::Result<CrossFit, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown cross-fit mode '{s}' (rotated, fold-shrink, pilot-split)"))
}

fn parse_smoothing(s: &str) -> std::result::Result<Smoothing, String> {
    match s.split_once(':') {
        None if s == "gaussian" => Ok(Smoothing::Gaussian),
        None if s == "none" => Ok(Smoothing::None),
        Some(("moving-average", w)) => w
            .parse()
            .map(|window| Smoothing::MovingAverage { window })
            .map_err(|_| format!("invalid window in '{s}'")),
        _ => Err(format!("unknown smoothing '{s}' (gaussian, none, moving-average:<bins>)")),
    }
}

impl CommonArgs {
    /// Defaults, then `base` (if any), then the config file, then flags.
    fn config(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => read_config_file(path)?,
            None => base.unwrap_or_default(),
        };
        if let Some(out) = &self.out {
            c.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        Ok(c)
    }
}

impl DataArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(d) = &self.dataset {
            c.dataset = Some(d.clone());
        }
        if let Some(m) = &self.metric {
            c.metric = Some(m.clone());
        }
    }
}

impl FeatureArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.rho, self.rho);
        set(&mut c.bins, self.bins);
        set(&mut c.bandwidth, self.bandwidth);
        set(&mut c.band_fraction, self.band_fraction);
        set(&mut c.smoothing, self.smoothing);
    }
}

impl SimArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.folds, self.folds);
        set(&mut c.replicates, self.replicates);
        set(&mut c.noise_scale, self.noise_scale);
        set(&mut c.cross_fit, self.cross_fit);
        c.include_target |= self.include_target;
    }
}

impl MethodArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.q_grid, self.q_grid.clone().map(|g| g.0));
        set(&mut c.m0, self.m0);
        set(&mut c.methods, self.methods.clone());
    }
}

impl EvalArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.ci_resamples, self.ci_resamples);
    }
}

impl CorpusArgs {
    fn corpus(&self) -> CorpusConfig {
        let mut c = CorpusConfig::default();
        set(&mut c.experiments, self.experiments);
        set(&mut c.days, self.days);
        set(&mut c.seed, self.corpus_seed);
        c
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_csv_file(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
    let mut out = create_file(path)?;
    write(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(path.to_path_buf())
}

fn read_dataset(config: &RunConfig) -> Result<(Dataset, InputHash)> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset given (use --dataset or a config file)".into()))?;
    let data = load_dataset(path, config.metric.as_deref())?;
    info!("loaded {} experiments from {}", data.series.len(), path.display());
    let hash = InputHash {
        path: path.clone(),
        sha256: data.sha256.clone(),
    };
    Ok((data, hash))
}

fn finish(mut manifest: RunManifest, outputs: Vec<PathBuf>, dir: &Path) -> Result<()> {
    manifest.outputs = outputs;
    let path = manifest.write(dir)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn prepare_logged(data: &Dataset, config: &RunConfig, manifest: &mut RunManifest) -> Result<Prepared> {
    let start = Instant::now();
    let prepared = prepare(&data.series, config, Exec::default())?;
    info!(
        "modeled {} experiments ({} skipped) in {:.1?}",
        prepared.models.len(),
        prepared.skipped.len(),
        start.elapsed()
    );
    manifest.skipped_experiments = prepared.skipped.clone();
    Ok(prepared)
}

fn write_features(prepared: &Prepared, config: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let dir = &config.out_dir;
    outputs.push(write_csv_file(&dir.join("shapes.csv"), |w| {
        write_shapes_csv(&prepared.features, w)
    })?);
    outputs.push(write_csv_file(&dir.join("dtw.csv"), |w| prepared.distances.dtw.write_csv(w))?);
    outputs.push(write_csv_file(&dir.join("distances.csv"), |w| {
        prepared.distances.composite(config.rho).write_csv(w)
    })?);
    Ok(())
}

/// Runs the bootstrap and saves the store under `<out>/store`.
fn run_simulation(
    prepared: &Prepared,
    config: &RunConfig,
    configs: &[MethodConfig],
    sha: &str,
    store_dir: &Path,
    outputs: &mut Vec<PathBuf>,
) -> Result<ResultStore> {
    let start = Instant::now();
    let store = simulate(prepared, config, configs, Some(sha.to_string()), Exec::default())?;
    info!(
        "{} replicates x {} configurations in {:.1?}",
        config.replicates,
        configs.len(),
        start.elapsed()
    );
    if !store.failures.is_empty() {
        warn!("{} estimation failures recorded in the store", store.failures.len());
    }
    store.save(store_dir)?;
    info!("wrote result store {}", store_dir.display());
    outputs.push(store_dir.to_path_buf());
    Ok(store)
}

/// Neighborhood diagnostics of CF-SHN on replicate 1, at q = 10 when the
/// grid has it and at the first grid value otherwise.
fn write_replicate_diagnostics(prepared: &Prepared, config: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<()> {
    if !config.methods.contains(&Method::CfShn) {
        return Ok(());
    }
    let q = if config.q_grid.contains(&10) { 10 } else { config.q_grid[0] };
    let method = MethodConfig::new(Method::CfShn, q, config.rho, config.m0);
    let replicate = simulate_population(&prepared.models, config.seed, 1, &config.simulation())?;
    let composites = [(config.rho, prepared.distances.composite(config.rho))];
    let ids: Vec<String> = prepared.models.iter().map(|m| m.experiment_id.clone()).collect();
    let rows = diagnostics(&replicate, &composites, &method, &config.local(), &ids)?;
    outputs.push(write_csv_file(&config.out_dir.join("diagnostics.csv"), |w| {
        write_diagnostics_csv(&rows, w)
    })?);
    Ok(())
}

fn score_and_report(store: &ResultStore, config: &RunConfig, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let scores = evaluate(store, config, Exec::default())?;
    for s in &scores {
        info!(
            "{:<36} mse {:.4e}  reduction {:6.2}%  win {:6.2}%",
            s.config.to_string(),
            s.mse,
            s.reduction_pct,
            s.win_rate_pct
        );
    }
    let files = emit_report(&scores, &config.out_dir)?;
    outputs.extend([files.scores_csv, files.scores_json, files.figure_csv]);
    Ok(())
}

fn preset_spec(name: &str) -> Result<MixturePriorSpec> {
    let two = |variance| {
        vec![
            LatentType { weight: 0.5, mean: -1.0, variance },
            LatentType { weight: 0.5, mean: 1.0, variance },
        ]
    };
    match name {
        "two-type-exact" => MixturePriorSpec::new(two(0.0), 1.0),
        "two-type" => MixturePriorSpec::new(two(1.0), 1.0),
        "single-type" => MixturePriorSpec::new(vec![LatentType { weight: 1.0, mean: 0.0, variance: 1.0 }], 1.0),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (two-type-exact, two-type, single-type)"
        ))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { common, data } => {
            let mut config = common.config(None)?;
            data.apply(&mut config);
            config.validate()?;
            let mut manifest = RunManifest::new("ingest", &config);
            let (dataset, hash) = read_dataset(&config)?;
            manifest.inputs.push(hash);
            let dir = config.out_dir.clone();
            make_dir(&dir)?;
            let mut outputs = vec![write_csv_file(&dir.join("snapshots.csv"), |w| {
                write_snapshot_csv(&dataset.series, w)
            })?];
            let summary = summarize(&dataset.series);
            outputs.push(write_csv_file(&dir.join("experiments.csv"), |w| {
                let mut csv = csv::Writer::from_writer(w);
                for row in &summary {
                    csv.serialize(row)?;
                }
                csv.flush().map_err(|e| Error::io("experiments.csv", e))
            })?);
            finish(manifest, outputs, &dir)
        }
        Command::ConvertAsos {
            common,
            input,
            output,
            metric,
        } => {
            let config = common.config(None)?;
            let mut manifest = RunManifest::new("convert-asos", &config);
            let bytes = fs::read(&input).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingInput {
                    path: input.clone(),
                    message: "ASOS file not found".into(),
                },
                _ => Error::io(&input, e),
            })?;
            manifest.inputs.push(InputHash {
                path: input.clone(),
                sha256: sha256_hex(&bytes),
            });
            manifest.extra = serde_json::json!({ "metric": metric });
            let mut rows = 0;
            let out = write_csv_file(&output, |w| {
                rows = asos_to_canonical(bytes.as_slice(), w, metric.as_deref())?;
                Ok(())
            })?;
            info!("converted {rows} rows");
            make_dir(&config.out_dir)?;
            finish(manifest, vec![out], &config.out_dir)
        }
        Command::Generate { common, corpus } => {
            let config = common.config(None)?;
            let corpus = corpus.corpus();
            let mut manifest = RunManifest::new("generate", &config);
            manifest.extra = serde_json::to_value(&corpus)?;
            let (series, latents) = generate_corpus(&corpus)?;
            let dir = config.out_dir.clone();
            make_dir(&dir)?;
            let outputs = vec![
                write_csv_file(&dir.join("corpus.csv"), |w| write_snapshot_csv(&series, w))?,
                write_csv_file(&dir.join("latents.csv"), |w| write_latents_csv(&latents, w))?,
            ];
            finish(manifest, outputs, &dir)
        }
        Command::Features { common, data, features } => {
            let mut config = common.config(None)?;
            data.apply(&mut config);
            features.apply(&mut config);
            config.validate()?;
            let mut manifest = RunManifest::new("features", &config);
            let (dataset, hash) = read_dataset(&config)?;
            manifest.inputs.push(hash);
            let prepared = prepare_logged(&dataset, &config, &mut manifest)?;
            make_dir(&config.out_dir)?;
            let mut outputs = Vec::new();
            write_features(&prepared, &config, &mut outputs)?;
            finish(manifest, outputs, &config.out_dir)
        }
        Command::Simulate {
            common,
            data,
            features,
            sim,
            methods,
        } => {
            let mut config = common.config(None)?;
            data.apply(&mut config);
            features.apply(&mut config);
            sim.apply(&mut config);
            methods.apply(&mut config);
            config.validate()?;
            let mut manifest = RunManifest::new("simulate", &config);
            let (dataset, hash) = read_dataset(&config)?;
            manifest.inputs.push(hash);
            let prepared = prepare_logged(&dataset, &config, &mut manifest)?;
            make_dir(&config.out_dir)?;
            let mut outputs = Vec::new();
            run_simulation(
                &prepared,
                &config,
                &config.method_configs(),
                &dataset.sha256,
                &config.store_dir(),
                &mut outputs,
            )?;
            write_replicate_diagnostics(&prepared, &config, &mut outputs)?;
            finish(manifest, outputs, &config.out_dir)
        }
        Command::Evaluate { common, store, eval } => {
            let base = common.config(None)?;
            let store_dir = store.unwrap_or_else(|| base.store_dir());
            let store = ResultStore::load(&store_dir)?;
            // The run that produced the store supplies the defaults.
            let recorded: Option<RunConfig> = serde_json::from_value(store.manifest.run.clone()).ok();
            let mut config = common.config(recorded)?;
            config.out_dir = base.out_dir;
            eval.apply(&mut config);
            let mut manifest = RunManifest::new("evaluate", &config);
            manifest.inputs.push(InputHash {
                path: store_dir.join("store.json"),
                sha256: sha256_hex(&fs::read(store_dir.join("store.json")).map_err(|e| Error::io(&store_dir, e))?),
            });
            let mut outputs = Vec::new();
            score_and_report(&store, &config, &mut outputs)?;
            finish(manifest, outputs, &config.out_dir)
        }
        Command::Sweep {
            common,
            data,
            features,
            sim,
            eval,
            grid,
        } => {
            let mut config = common.config(None)?;
            data.apply(&mut config);
            features.apply(&mut config);
            sim.apply(&mut config);
            eval.apply(&mut config);
            let mut sweep = SweepGrid {
                base_rho: config.rho,
                base_m0: config.m0,
                full_product: grid.full_product,
                ..SweepGrid::default()
            };
            set(&mut sweep.q, grid.q_values.map(|g| g.0));
            set(&mut sweep.rho, grid.rho_values);
            set(&mut sweep.m0, grid.m0_values);
            set(&mut sweep.base_q, grid.base_q);
            let mut configs = vec![MethodConfig::raw()];
            configs.extend(sweep.configs());
            for c in &configs {
                c.validate()?;
            }
            config.methods = vec![Method::Raw, Method::CfShn];
            config.validate()?;
            let mut manifest = RunManifest::new("sweep", &config);
            manifest.extra = serde_json::to_value(&sweep)?;
            let (dataset, hash) = read_dataset(&config)?;
            manifest.inputs.push(hash);
            let prepared = prepare_logged(&dataset, &config, &mut manifest)?;
            make_dir(&config.out_dir)?;
            let mut outputs = Vec::new();
            let store = run_simulation(
                &prepared,
                &config,
                &configs,
                &dataset.sha256,
                &config.out_dir.join("sweep_store"),
                &mut outputs,
            )?;
            let scores = sensitivity_sweep(&store, &sweep, &config.score_options(Exec::default()))?;
            outputs.push(write_csv_file(&config.out_dir.join("sweep_scores.csv"), |w| {
                write_scores_csv(&scores, w)
            })?);
            finish(manifest, outputs, &config.out_dir)
        }
        Command::TheoryCheck { common, theory } => {
            let config = common.config(None)?;
            let spec = match (&theory.spec, &theory.preset) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                        std::io::ErrorKind::NotFound => Error::MissingInput {
                            path: path.clone(),
                            message: "mixture spec not found".into(),
                        },
                        _ => Error::io(path, e),
                    })?;
                    let spec: MixturePriorSpec = serde_json::from_str(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    spec.validate()?;
                    spec
                }
                (None, preset) => preset_spec(preset.as_deref().unwrap_or("two-type-exact"))?,
            };
            let dominance = DominanceConfig {
                v: theory.v,
                draws: theory.draws,
                seed: config.seed,
                plug_in_train: theory.plug_in,
                exec: Exec::default(),
            };
            let mut manifest = RunManifest::new("theory-check", &config);
            manifest.extra = serde_json::json!({ "spec": spec, "dominance": dominance });
            if let Some(path) = &theory.spec {
                manifest.inputs.push(InputHash {
                    path: path.clone(),
                    sha256: sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?),
                });
            }
            let start = Instant::now();
            let report = mixture_dominance_check(&spec, &dominance)?;
            info!(
                "gap {:.6} (mcse {:.2e}, bound {:.6}) in {:.1?}: {}",
                report.gap,
                report.gap_mcse,
                report.theoretical_gap_lower_bound,
                start.elapsed(),
                if report.pass { "pass" } else { "FAIL" }
            );
            if !report.pass {
                warn!("the Monte Carlo gap is below the theoretical bound");
            }
            make_dir(&config.out_dir)?;
            let path = config.out_dir.join(DOMINANCE_JSON);
            write_dominance_report(&report, &path)?;
            info!("wrote {}", path.display());
            finish(manifest, vec![path], &config.out_dir)
        }
        Command::Reproduce {
            common,
            data,
            synthetic,
            corpus,
            features,
            sim,
            methods,
            eval,
        } => {
            let mut config = common.config(None)?;
            data.apply(&mut config);
            features.apply(&mut config);
            sim.apply(&mut config);
            methods.apply(&mut config);
            eval.apply(&mut config);
            let dir = config.out_dir.clone();
            make_dir(&dir)?;
            let mut outputs = Vec::new();
            let (dataset, input) = if synthetic {
                let corpus = corpus.corpus();
                let (series, latents) = generate_corpus(&corpus)?;
                let path = dir.join("corpus.csv");
                let mut bytes = Vec::new();
                write_snapshot_csv(&series, &mut bytes)?;
                fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
                outputs.push(path.clone());
                outputs.push(write_csv_file(&dir.join("latents.csv"), |w| write_latents_csv(&latents, w))?);
                config.dataset = Some(path.clone());
                let dataset = dataset_from_bytes(&bytes, config.metric.as_deref())?;
                let hash = InputHash {
                    path,
                    sha256: dataset.sha256.clone(),
                };
                (dataset, (hash, Some(corpus)))
            } else {
                let (dataset, hash) = read_dataset(&config)?;
                (dataset, (hash, None))
            };
            config.validate()?;
            let mut manifest = RunManifest::new("reproduce", &config);
            let (hash, corpus) = input;
            manifest.extra = serde_json::json!({ "synthetic_corpus": corpus });
            if corpus.is_none() {
                manifest.inputs.push(hash);
            }
            let prepared = prepare_logged(&dataset, &config, &mut manifest)?;
            write_features(&prepared, &config, &mut outputs)?;
            let store = run_simulation(
                &prepared,
                &config,
                &config.method_configs(),
                &dataset.sha256,
                &config.store_dir(),
                &mut outputs,
            )?;
            write_replicate_diagnostics(&prepared, &config, &mut outputs)?;
            score_and_report(&store, &config, &mut outputs)?;
            finish(manifest, outputs, &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        (false, _) => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    match with_worker_pool(cli.threads, || run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::DataValidation => 3,
                ErrorCategory::Runtime => 4,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_q_grid("6..20:2").unwrap().0, vec![6, 8, 10, 12, 14, 16, 18, 20]);
        assert_eq!(parse_q_grid("6,8, 10").unwrap().0, vec![6, 8, 10]);
        assert_eq!(parse_q_grid("3..5").unwrap().0, vec![3, 4, 5]);
        assert!(parse_q_grid("0,4").is_err());
        assert!(parse_q_grid("8..6:1").is_err());
        assert!(parse_q_grid("x").is_err());
    }

    #[test]
    fn enum_flags() {
        assert_eq!(parse_cross_fit("fold-shrink").unwrap(), CrossFit::FoldShrink);
        assert!(parse_cross_fit("bogus").is_err());
        assert_eq!(
            parse_smoothing("moving-average:5").unwrap(),
            Smoothing::MovingAverage { window: 5 }
        );
        assert_eq!(parse_method("cf-shn").unwrap(), Method::CfShn);
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_defaults() {
        let defaults = RunConfig::default();
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("reproduce")
            .unwrap()
            .render_long_help()
            .to_string();
        for needle in [
            format!("[default: {}]", defaults.folds),
            format!("[default: {}]", defaults.replicates),
            format!("[default: {}]", defaults.m0),
            format!("[default: {}]", defaults.bins),
            format!("[default: {}]", defaults.bandwidth),
            format!("[default: {}]", defaults.band_fraction),
            format!("[default: {}]", defaults.rho),
            format!("[default: {}]", defaults.seed),
        ] {
            assert!(help.contains(&needle), "missing {needle}");
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "replicates = 7\nseed = 3\n").unwrap();
        let common = CommonArgs {
            config: Some(path),
            out: None,
            seed: Some(9),
        };
        let c = common.config(None).unwrap();
        assert_eq!((c.replicates, c.seed), (7, 9));
    }
}
