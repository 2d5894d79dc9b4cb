use localeb::corpus::{generate_corpus, CorpusConfig};
use localeb::data::ArmPair;
use localeb::exec::Exec;
use localeb::moments::Moments;
use localeb::neighbors::{Method, MethodConfig};
use localeb::pipeline::{prepare, simulate, Prepared, RunConfig};
use localeb::rng::stream;
use localeb::semisynth::{
    simulate_arrivals, simulate_population, simulate_replicate, NhppModel, ResultStore, SegmentOutcome,
    SimulationConfig,
};

/// Three segments with different rates and different arm means, so the
/// arrival-weighted aggregate differs from the plain average of segments.
fn uneven_model() -> NhppModel {
    let rates = vec![300.0, 100.0, 600.0];
    let widths = vec![1.0, 2.0, 0.5];
    let n: f64 = rates.iter().zip(&widths).map(|(r, w)| r * w).sum();
    let seg = |c: f64, t: f64, var: f64| {
        ArmPair::new(
            SegmentOutcome { mean: c, variance: var },
            SegmentOutcome { mean: t, variance: var },
        )
    };
    NhppModel {
        experiment_id: "uneven".into(),
        n,
        shape: rates.iter().map(|r| r / n).collect(),
        rates,
        widths,
        outcomes: vec![seg(1.0, 1.4, 2.0), seg(0.5, 0.6, 1.0), seg(2.0, 1.9, 3.0)],
        reference_effect: 0.0,
    }
}

#[test]
fn mean_simulated_effect_matches_aggregate() {
    let model = uneven_model();
    // Expected arrivals are 300, 200 and 300, so the weighted aggregate is
    // (300 * 0.4 + 200 * 0.1 + 300 * -0.1) / 800.
    let want = (300.0 * 0.4 + 200.0 * 0.1 + 300.0 * -0.1) / 800.0;
    assert!((model.aggregate_effect() - want).abs() < 1e-12);

    let config = SimulationConfig::default();
    let mut acc = Moments::EMPTY;
    for seed in 0..100_000u64 {
        let rep = simulate_replicate(&model, seed, &config).unwrap();
        acc = acc.merge(&Moments { count: 1.0, mean: rep.y, m2: 0.0 });
    }
    let mcse = (acc.variance().unwrap() / acc.count).sqrt();
    assert!((acc.mean - want).abs() <= 3.0 * mcse, "{} vs {want} (mcse {mcse})", acc.mean);
}

#[test]
fn expected_total_arrivals_match_scale() {
    let model = uneven_model();
    let b = 2000.0;
    let mut rng = stream(3, &[]);
    let total: u64 = (0..b as u64)
        .map(|_| simulate_arrivals(&model, &mut rng).iter().map(|a| a.control + a.treatment).sum::<u64>())
        .sum();
    let mean = total as f64 / b;
    assert!((mean - model.n).abs() <= 4.0 * (model.n * b).sqrt() / b, "{mean} vs {}", model.n);
}

#[test]
fn folds_pool_to_replicate_estimate() {
    let model = uneven_model();
    for seed in 0..50 {
        let rep = simulate_replicate(&model, seed, &SimulationConfig::default()).unwrap();
        let c = Moments::merge_all(rep.folds.iter().map(|f| &f.control));
        let t = Moments::merge_all(rep.folds.iter().map(|f| &f.treatment));
        let y = t.mean - c.mean;
        let v = t.variance().unwrap() / t.count + c.variance().unwrap() / c.count;
        assert!((y - rep.y).abs() <= 1e-10 * rep.y.abs().max(1e-3));
        assert!((v - rep.v).abs() <= 1e-10 * rep.v);
    }
}

fn small_run(replicates: u64) -> (Prepared, RunConfig) {
    let corpus = CorpusConfig {
        experiments: 12,
        ..CorpusConfig::default()
    };
    let (series, _) = generate_corpus(&corpus).unwrap();
    let config = RunConfig {
        replicates,
        q_grid: vec![4, 6],
        m0: 8,
        bins: 60,
        ..RunConfig::default()
    };
    let prepared = prepare(&series, &config, Exec::Sequential).unwrap();
    (prepared, config)
}

#[test]
fn store_cardinality_and_identity_method() {
    let (prepared, config) = small_run(2);
    let configs = config.method_configs();
    let store = simulate(&prepared, &config, &configs, None, Exec::default()).unwrap();
    assert_eq!(configs.len(), 2 + 3 * 2);
    assert_eq!(store.count(), 2 * prepared.models.len() * configs.len());

    let raw = store.config_index(&MethodConfig::raw()).unwrap();
    let rep = simulate_population(&prepared.models, config.seed, 1, &config.simulation()).unwrap();
    for e in &rep.experiments {
        assert_eq!(store.get(raw, 1, e.model), Some(e.y));
    }
}

#[test]
fn store_is_deterministic_and_round_trips() {
    let (prepared, config) = small_run(3);
    let configs = config.method_configs();
    let a = simulate(&prepared, &config, &configs, Some("abc".into()), Exec::Sequential).unwrap();
    let b = simulate(&prepared, &config, &configs, Some("abc".into()), Exec::Parallel).unwrap();
    assert!(a == b);

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let loaded = ResultStore::load(dir.path()).unwrap();
    assert!(loaded == a);

    let other = RunConfig { seed: 43, ..config.clone() };
    let c = simulate(&prepared, &other, &configs, Some("abc".into()), Exec::Sequential).unwrap();
    let cf = c.config_index(&MethodConfig::new(Method::CfShn, 4, config.rho, config.m0)).unwrap();
    assert_ne!(a.get(cf, 1, 0), c.get(cf, 1, 0));
}
