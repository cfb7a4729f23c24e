use std::collections::BTreeMap;
use std::fs;

use collabscore::config::{generative_to_value, set_path, ExperimentConfig, PipelineConfig};
use collabscore::experiment::{correlation, run_experiment, run_once};
use collabscore::generative::{generate, GenerativeConfig};
use collabscore::{run_pipeline, Comparison, Dataset, EntityId, Error, Privacy, Stage, UserId};
use serde_json::{json, Value};

fn small_world(seed: u64) -> collabscore::Generated {
    generate(&GenerativeConfig {
        n_users: 20,
        n_entities: 30,
        seed,
        ..GenerativeConfig::default()
    })
    .unwrap()
}

fn experiment(n_seeds: usize) -> ExperimentConfig {
    ExperimentConfig::from_value(&json!({
        "xparameter": "generative_model.user_model.p_trustworthy",
        "xvalues": [0.5, 1.0],
        "zparameter": "pipeline.aggregation.lipschitz",
        "zvalues": [0.1, 1.0],
        "n_users": 15,
        "n_entities": 20,
        "n_seeds": n_seeds,
        "generative_model": generative_to_value(&GenerativeConfig::default()),
        "pipeline": PipelineConfig::default().to_value(),
    }))
    .unwrap()
}

fn files_of(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn rerun_is_byte_stable() {
    let data = small_world(11).dataset;
    let config = PipelineConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(&data, &config).unwrap().write_dir(d.path()).unwrap();
    }
    let (a, b) = (files_of(dirs[0].path()), files_of(dirs[1].path()));
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
}

#[test]
fn dataset_round_trip_preserves_results() {
    let generated = small_world(12);
    let dir = tempfile::tempdir().unwrap();
    generated.write_dir(dir.path()).unwrap();
    let read = Dataset::read_dir(dir.path(), 10.0).unwrap();
    assert_eq!(read, generated.dataset);
    let config = PipelineConfig::default();
    assert_eq!(
        run_pipeline(&read, &config).unwrap().scores,
        run_pipeline(&generated.dataset, &config).unwrap().scores
    );
}

#[test]
fn null_scaling_leaves_other_stages_untouched() {
    let data = small_world(13).dataset;
    let full = run_pipeline(&data, &PipelineConfig::default()).unwrap();
    let null = PipelineConfig {
        scaling: vec![],
        ..PipelineConfig::default()
    };
    let bare = run_pipeline(&data, &null).unwrap();
    assert_eq!(bare.trust, full.trust);
    assert_eq!(bare.voting_rights, full.voting_rights);
    assert_eq!(bare.raw_models, full.raw_models);
    assert_eq!(bare.scaled_models, bare.raw_models);
    assert!(bare.scaling_reports.is_empty());
    assert_eq!(bare.scores.entities.len(), full.scores.entities.len());
}

#[test]
fn scores_follow_pipeline_invariants() {
    let data = small_world(14).dataset;
    let out = run_pipeline(&data, &PipelineConfig::default()).unwrap();
    assert_eq!(out.scores.entities.keys().copied().collect::<Vec<_>>(), data.entities().into_iter().collect::<Vec<_>>());
    for s in out.scores.entities.values() {
        assert!(s.rho_display.abs() < 100.0);
        assert!(s.n_raters >= 1);
    }
    for ((u, e), w) in &out.voting_rights.rights {
        assert!(*w >= 0.0 && *w <= 1.0, "right of {u} on {e} is {w}");
    }
    for t in &out.trust.trust {
        assert!((0.0..=1.0).contains(t));
    }
    assert!(out.sigma > 0.0);
}

#[test]
fn stage_errors_are_attributed() {
    let data = small_world(15).dataset;
    type Breaker = fn(&mut PipelineConfig);
    let cases: [(Breaker, Stage); 4] = [
        (|c| c.trust_propagation.decay = 1.5, Stage::TrustPropagation),
        (|c| c.voting_rights.privacy_penalty = -1.0, Stage::VotingRights),
        (|c| c.aggregation.dev_quantile = 2.0, Stage::Aggregation),
        (|c| c.post_process.score_max = 0.0, Stage::PostProcess),
    ];
    for (breaks, expected) in cases {
        let mut config = PipelineConfig::default();
        breaks(&mut config);
        match run_pipeline(&data, &config) {
            Err(e @ Error::Stage { stage, .. }) => {
                assert_eq!(stage, expected);
                assert!(e.is_config());
                assert!(e.to_string().contains(&expected.to_string()));
            }
            other => panic!("expected a {expected} error, got {other:?}"),
        }
    }
}

#[test]
fn unanimous_users_rank_entities_in_order() {
    let users: Vec<UserId> = (0..6).map(UserId).collect();
    let mut comparisons = Vec::new();
    for &u in &users {
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            comparisons.push(Comparison {
                user: u,
                entity_a: EntityId(a),
                entity_b: EntityId(b),
                value: -6.0,
                privacy: Privacy::Public,
            });
        }
    }
    let data = Dataset::new(users.clone(), users, [], comparisons, 10.0).unwrap();
    let rho = run_pipeline(&data, &PipelineConfig::default()).unwrap().scores.rho();
    assert!(rho[&EntityId(0)] > rho[&EntityId(1)]);
    assert!(rho[&EntityId(1)] > rho[&EntityId(2)]);
}

#[test]
fn config_round_trip() {
    let config = PipelineConfig::default();
    let value = config.to_value();
    let again = PipelineConfig::from_value(&value).unwrap();
    assert_eq!(again, config);
    assert_eq!(again.to_value(), value);

    let exp = experiment(2);
    let reparsed = ExperimentConfig::from_value(&exp.to_value()).unwrap();
    assert_eq!(reparsed, exp);
}

#[test]
fn shipped_configs_parse() {
    for name in ["resilience.json", "engagement_bias.json"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        let text = fs::read_to_string(path).unwrap();
        let exp = text.parse::<ExperimentConfig>().unwrap();
        assert_eq!(exp.n_seeds, 100);
        assert!(!exp.zvalues.is_empty());
    }
}

#[test]
fn unknown_algorithm_and_path_are_rejected() {
    let mut value = PipelineConfig::default().to_value();
    value["trust_propagation"][0] = json!("EigenTrust");
    assert!(PipelineConfig::from_value(&value).unwrap_err().is_config());

    let mut exp = experiment(1).to_value();
    exp["xparameter"] = Value::from("generative_model.user_model.no_such_field");
    assert!(ExperimentConfig::from_value(&exp).unwrap_err().is_config());

    let mut doc = json!({"pipeline": PipelineConfig::default().to_value()});
    assert!(set_path(&mut doc, "pipeline.scaling.scalings.5.lipschitz", json!(3.0)).is_err());
}

#[test]
fn single_cell_equals_direct_run() {
    let mut exp = experiment(1);
    exp.xvalues = vec![1.0];
    exp.zparameter = None;
    exp.zvalues.clear();
    let result = run_experiment(&exp).unwrap();
    assert_eq!(result.cells.len(), 1);

    let resolved = exp.resolve(1.0, None, 0).unwrap();
    let generated = generate(&resolved.generative).unwrap();
    let out = run_pipeline(&generated.dataset, &resolved.pipeline).unwrap();
    let direct = correlation(&out.scores.rho(), &generated.truth.global_scores());
    assert_eq!(result.cells[0].correlations, vec![direct]);
}

#[test]
fn cells_do_not_depend_on_execution_order() {
    let exp = experiment(2);
    let result = run_experiment(&exp).unwrap();
    // recompute cells one at a time in reverse order
    for cell in result.cells.iter().rev() {
        let again: Vec<f64> = (0..2).rev().map(|s| run_once(&exp, cell.x, cell.z, s).unwrap()).rev().collect();
        assert_eq!(again, cell.correlations);
    }
}

#[test]
fn results_csv_layout() {
    let exp = experiment(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    run_experiment(&exp).unwrap().write_csv(&path).unwrap();
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "xvalue,zvalue,mean_correlation,std_correlation,n_seeds");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",2")));
}
