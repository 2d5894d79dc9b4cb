//! Sequential against rayon-parallel execution of the three heavy loops:
//! pairwise DTW, bootstrap replicates and the dominance Monte Carlo.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use localeb::corpus::{generate_corpus, CorpusConfig};
use localeb::eb::{LatentType, MixturePriorSpec};
use localeb::eval::{mixture_dominance_check, DominanceConfig};
use localeb::exec::Exec;
use localeb::pipeline::{prepare, simulate, RunConfig};
use localeb::similarity::ProcessDistances;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> (localeb::pipeline::Prepared, RunConfig) {
    let (series, _) = generate_corpus(&CorpusConfig::default()).expect("corpus");
    let config = RunConfig {
        replicates: 20,
        q_grid: vec![10],
        ..RunConfig::default()
    };
    let prepared = prepare(&series, &config, Exec::Parallel).expect("prepare");
    (prepared, config)
}

fn pairwise_dtw(c: &mut Criterion) {
    let (prepared, config) = setup();
    let mut group = c.benchmark_group("pairwise_dtw");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ProcessDistances::compute(&prepared.features, config.band_fraction, exec).expect("dtw"))
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let (prepared, config) = setup();
    let configs = config.method_configs();
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate(&prepared, &config, &configs, None, exec).expect("simulate"))
        });
    }
    group.finish();
}

fn dominance(c: &mut Criterion) {
    let t = |mean| LatentType {
        weight: 0.5,
        mean,
        variance: 1.0,
    };
    let spec = MixturePriorSpec::new(vec![t(1.0), t(-1.0)], 1.0).expect("spec");
    let mut group = c.benchmark_group("dominance_mc");
    group.sample_size(10);
    for (name, exec) in MODES {
        let config = DominanceConfig {
            draws: 1_000_000,
            exec,
            ..DominanceConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mixture_dominance_check(&spec, &config).expect("dominance"))
        });
    }
    group.finish();
}

criterion_group!(benches, pairwise_dtw, bootstrap, dominance);
criterion_main!(benches);
