use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{simulate_population, Failure, NhppModel, ResultStore, SimulationConfig, StoreManifest};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::neighbors::{estimate_replicate, LocalOptions, MethodConfig};
use crate::similarity::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: u64,
    pub master_seed: u64,
    pub simulation: SimulationConfig,
    pub local: LocalOptions,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            master_seed: 0,
            simulation: SimulationConfig::default(),
            local: LocalOptions::default(),
            exec: Exec::default(),
        }
    }
}

type ReplicateResult = Result<(Vec<usize>, Vec<crate::neighbors::ConfigEstimates>)>;

/// Simulates `replicates` replicates and records every method
/// configuration's estimate for every retained experiment.
///
/// `models` must be in ascending id order. `composites` holds one composite
/// distance matrix, indexed like `models`, for each `rho` used by `configs`.
/// A replicate that fails as a whole is recorded in the store's failure list.
pub fn run_bootstrap(
    models: &[NhppModel],
    composites: &[(f64, DistanceMatrix)],
    configs: &[MethodConfig],
    config: &BootstrapConfig,
    dataset_sha256: Option<String>,
    run: serde_json::Value,
) -> Result<ResultStore> {
    if config.replicates < 1 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    if configs.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    for c in configs {
        c.validate()?;
    }
    config.simulation.validate()?;
    if models.windows(2).any(|w| w[0].experiment_id >= w[1].experiment_id) {
        return Err(Error::Validation("models must be sorted by unique experiment id".into()));
    }
    for (_, d) in composites {
        let matches = d.len() == models.len()
            && d.ids().iter().zip(models).all(|(id, m)| *id == m.experiment_id);
        if !matches {
            return Err(Error::Validation("distance matrix does not match the models".into()));
        }
    }

    let done = AtomicU64::new(0);
    let tick = (config.replicates / 10).max(1);
    let results: Vec<ReplicateResult> = config.exec.map_indexed(config.replicates as usize, |i| {
        let b = i as u64 + 1;
        let out = simulate_population(models, config.master_seed, b, &config.simulation)?;
        let est = estimate_replicate(&out, composites, configs, &config.local)?;
        let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
        if finished % tick == 0 || finished == config.replicates {
            log::info!("bootstrap: {finished}/{} replicates", config.replicates);
        }
        Ok((out.experiments.iter().map(|e| e.model).collect(), est))
    });

    let manifest = StoreManifest {
        format_version: 1,
        master_seed: config.master_seed,
        replicates: config.replicates,
        experiment_ids: models.iter().map(|m| m.experiment_id.clone()).collect(),
        references: models.iter().map(|m| m.reference_effect).collect(),
        configs: configs.to_vec(),
        simulation: config.simulation,
        local: config.local,
        dataset_sha256,
        run,
    };
    let mut store = ResultStore::new(manifest);
    for (i, result) in results.into_iter().enumerate() {
        let b = i as u64 + 1;
        match result {
            Ok((positions, per_config)) => {
                for (c, est) in per_config.into_iter().enumerate() {
                    for (pos, &value) in est.estimates.iter().enumerate() {
                        store.set(c, b, positions[pos], value);
                    }
                    for (pos, message) in est.errors {
                        store.failures.push(Failure {
                            replicate: b,
                            experiment_id: models[positions[pos]].experiment_id.clone(),
                            method: configs[c].to_string(),
                            message,
                        });
                    }
                }
            }
            Err(e) => store.failures.push(Failure {
                replicate: b,
                experiment_id: String::new(),
                method: String::new(),
                message: e.to_string(),
            }),
        }
    }
    if !store.failures.is_empty() {
        log::warn!("bootstrap: {} estimation failures recorded", store.failures.len());
    }
    Ok(store)
}
