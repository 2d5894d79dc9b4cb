use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{classical_estimates, local_target_estimate, pilot_estimates, LocalOptions, Strategy};
use crate::error::{Error, Result};
use crate::semisynth::ReplicateOutput;
use crate::similarity::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Raw,
    ClassicalEb,
    OutcomeOnly,
    ProcessOnly,
    CfShn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Raw,
        Method::ClassicalEb,
        Method::OutcomeOnly,
        Method::ProcessOnly,
        Method::CfShn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::ClassicalEb => "classical-eb",
            Method::OutcomeOnly => "outcome-only",
            Method::ProcessOnly => "process-only",
            Method::CfShn => "cf-shn",
        }
    }

    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Method::OutcomeOnly => Some(Strategy::OutcomeOnly),
            Method::ProcessOnly => Some(Strategy::ProcessOnly),
            Method::CfShn => Some(Strategy::CfShn),
            _ => None,
        }
    }

    pub fn uses_q(self) -> bool {
        self.strategy().is_some()
    }

    pub fn uses_rho(self) -> bool {
        matches!(self, Method::ProcessOnly | Method::CfShn)
    }

    pub fn uses_m0(self) -> bool {
        self == Method::CfShn
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}' (expected one of raw, classical-eb, outcome-only, process-only, cf-shn)"
                ))
            })
    }
}

/// A method with the tuning parameters it uses; unused ones are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub q: Option<usize>,
    pub rho: Option<f64>,
    pub m0: Option<usize>,
}

impl MethodConfig {
    /// Keeps only the parameters `method` uses.
    pub fn new(method: Method, q: usize, rho: f64, m0: usize) -> Self {
        MethodConfig {
            method,
            q: method.uses_q().then_some(q),
            rho: method.uses_rho().then_some(rho),
            m0: method.uses_m0().then_some(m0),
        }
    }

    pub fn raw() -> Self {
        MethodConfig::new(Method::Raw, 0, 0.0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.method;
        let shape_ok = self.q.is_some() == m.uses_q()
            && self.rho.is_some() == m.uses_rho()
            && self.m0.is_some() == m.uses_m0();
        if !shape_ok {
            return Err(Error::Config(format!("parameters do not match method {m}: {self}")));
        }
        if self.q == Some(0) || self.m0 == Some(0) {
            return Err(Error::Config(format!("q and M0 must be positive: {self}")));
        }
        if let Some(rho) = self.rho {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("rho {rho} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Values for the `q`, `rho` and `M0` CSV columns (empty when unused).
    pub fn columns(&self) -> [String; 3] {
        [
            self.q.map(|q| q.to_string()).unwrap_or_default(),
            self.rho.map(|r| r.to_string()).unwrap_or_default(),
            self.m0.map(|m| m.to_string()).unwrap_or_default(),
        ]
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.method)?;
        if let Some(q) = self.q {
            write!(f, " q={q}")?;
        }
        if let Some(r) = self.rho {
            write!(f, " rho={r}")?;
        }
        if let Some(m) = self.m0 {
            write!(f, " M0={m}")?;
        }
        Ok(())
    }
}

fn distances_for(composites: &[(f64, DistanceMatrix)], rho: Option<f64>) -> Result<Option<&DistanceMatrix>> {
    match rho {
        None => Ok(None),
        Some(rho) => composites
            .iter()
            .find(|(r, _)| r.to_bits() == rho.to_bits())
            .map(|(_, d)| Some(d))
            .ok_or_else(|| Error::Config(format!("no distance matrix for rho = {rho}"))),
    }
}

/// Estimates of one method configuration for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEstimates {
    /// Per replicate position; NaN where estimation failed.
    pub estimates: Vec<f64>,
    pub errors: Vec<(usize, String)>,
}

/// Runs every configuration on a replicate. Failures are per target (or per
/// configuration for classical EB) and never abort the other estimates.
pub fn estimate_replicate(
    replicate: &ReplicateOutput,
    composites: &[(f64, DistanceMatrix)],
    configs: &[MethodConfig],
    options: &LocalOptions,
) -> Result<Vec<ConfigEstimates>> {
    let n = replicate.experiments.len();
    let needs_pilots = configs.iter().any(|c| c.method.uses_q());
    let pilots = if needs_pilots {
        Some(pilot_estimates(replicate)?)
    } else {
        None
    };
    let failed_all = |msg: String| ConfigEstimates {
        estimates: vec![f64::NAN; n],
        errors: (0..n).map(|p| (p, msg.clone())).collect(),
    };
    let mut classical: Option<std::result::Result<Vec<f64>, String>> = None;
    let mut out = Vec::with_capacity(configs.len());
    for config in configs {
        config.validate()?;
        let result = match config.method {
            Method::Raw => ConfigEstimates {
                estimates: replicate.experiments.iter().map(|e| e.y).collect(),
                errors: Vec::new(),
            },
            Method::ClassicalEb => {
                let cached = classical.get_or_insert_with(|| {
                    classical_estimates(replicate)
                        .map(|rs| rs.into_iter().map(|r| r.theta_tilde).collect())
                        .map_err(|e| e.to_string())
                });
                match cached {
                    Ok(est) => ConfigEstimates {
                        estimates: est.clone(),
                        errors: Vec::new(),
                    },
                    Err(msg) => failed_all(msg.clone()),
                }
            }
            method => {
                let strategy = method.strategy().expect("local method");
                let matrix = distances_for(composites, config.rho)?;
                let pilots = pilots.as_ref().expect("pilots computed for local methods");
                let mut estimates = Vec::with_capacity(n);
                let mut errors = Vec::new();
                for pos in 0..n {
                    let row = matrix.map(|d| d.row(replicate.experiments[pos].model));
                    let est = local_target_estimate(
                        replicate,
                        pilots,
                        pos,
                        strategy,
                        row,
                        config.m0.unwrap_or(usize::MAX),
                        config.q.expect("validated"),
                        options,
                    );
                    match est {
                        Ok(t) => estimates.push(t.theta_tilde),
                        Err(e) => {
                            estimates.push(f64::NAN);
                            errors.push((pos, e.to_string()));
                        }
                    }
                }
                ConfigEstimates { estimates, errors }
            }
        };
        out.push(result);
    }
    Ok(out)
}

/// One line of the per-target neighborhood diagnostics export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub experiment_id: String,
    /// 1-based held-out fold, `all` for a prior fitted on full-replicate
    /// estimates, or `combined` for the estimate actually reported.
    pub fold: String,
    pub strategy: String,
    /// Neighbor ids separated by `;`.
    pub neighbors: String,
    pub mu_hat: f64,
    pub tau2_hat: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub theta_tilde: f64,
    pub fallback_flag: bool,
}

/// Per-fold and combined diagnostics of a local method on one replicate.
pub fn diagnostics(
    replicate: &ReplicateOutput,
    composites: &[(f64, DistanceMatrix)],
    config: &MethodConfig,
    options: &LocalOptions,
    ids: &[String],
) -> Result<Vec<DiagnosticRow>> {
    config.validate()?;
    let strategy = config
        .method
        .strategy()
        .ok_or_else(|| Error::Config(format!("{} has no neighborhoods", config.method)))?;
    let matrix = distances_for(composites, config.rho)?;
    let pilots = pilot_estimates(replicate)?;
    let mut rows = Vec::new();
    for (pos, exp) in replicate.experiments.iter().enumerate() {
        let est = local_target_estimate(
            replicate,
            &pilots,
            pos,
            strategy,
            matrix.map(|d| d.row(exp.model)),
            config.m0.unwrap_or(usize::MAX),
            config.q.expect("validated"),
            options,
        )?;
        let id = &ids[exp.model];
        let label = |fold: Option<usize>| fold.map_or_else(|| "all".to_string(), |f| (f + 1).to_string());
        for rec in &est.folds {
            let mut names = Vec::new();
            super::write_ids(ids, &mut names, &rec.neighborhood.neighbors).expect("in-memory write");
            let r = &rec.local.result;
            rows.push(DiagnosticRow {
                experiment_id: id.clone(),
                fold: label(rec.fold),
                strategy: strategy.name().into(),
                neighbors: String::from_utf8(names).expect("ids are utf-8"),
                mu_hat: r.center,
                tau2_hat: r.tau2,
                b: r.b,
                theta_tilde: r.theta_tilde,
                fallback_flag: rec.local.fallback,
            });
        }
        let c = &est.combined;
        rows.push(DiagnosticRow {
            experiment_id: id.clone(),
            fold: "combined".into(),
            strategy: strategy.name().into(),
            neighbors: String::new(),
            mu_hat: c.center,
            tau2_hat: c.tau2,
            b: c.b,
            theta_tilde: c.theta_tilde,
            fallback_flag: est.fallback,
        });
    }
    Ok(rows)
}

pub fn write_diagnostics_csv(rows: &[DiagnosticRow], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "experiment_id",
            "fold",
            "strategy",
            "neighbors",
            "mu_hat",
            "tau2_hat",
            "B",
            "theta_tilde",
            "fallback_flag",
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}
