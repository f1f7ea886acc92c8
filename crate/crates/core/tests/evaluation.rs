use fsml_core::corpus::{generate_synthetic, Domain, SynthSpec};
use fsml_core::embeddings::embed_corpus_toy;
use fsml_core::episodes::build_split;
use fsml_core::evaluation::{ablate, cross_validate, evaluate_split, CrossValConfig, Strategy, ABLATION_ROWS};
use fsml_core::rng::rng_from;
use fsml_core::thresholding::{Mode, ScorerKind};
use fsml_core::training::{train_on_domains, TrainConfig};
use fsml_core::Lexicons;

fn domains(n: usize) -> Vec<Domain> {
    (0..n)
        .map(|i| {
            let spec = SynthSpec {
                name: format!("d{i}"),
                n_labels: 5,
                pool_size: 150,
                ..SynthSpec::default()
            };
            generate_synthetic(&spec, 40 + i as u64).unwrap()
        })
        .collect()
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        kernel_epochs: 1,
        episodes_per_domain: 5,
        query_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn split_report_structure_and_determinism() {
    let ds = domains(2);
    let table = embed_corpus_toy(&ds, 16, 1).unwrap();
    let lex = Lexicons::builtin();
    let (model, _) = train_on_domains(&[&ds[0]], None, &table, &lex, &quick()).unwrap();
    let eps = build_split(&ds[1], 1, 50, 8, &mut rng_from(1, "e")).unwrap();
    let a = evaluate_split(&eps, &ds[1], &table, &lex, &model, Mode::Calibrated, ScorerKind::Prototype).unwrap();
    let b = evaluate_split(&eps, &ds[1], &table, &lex, &model, Mode::Calibrated, ScorerKind::Prototype).unwrap();
    assert_eq!(a.episode_f1.len(), 50);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let mean = a.episode_f1.iter().sum::<f64>() / 50.0;
    assert!((a.mean_f1 - mean).abs() < 1e-12);
    assert_eq!(a.to_tsv().lines().count(), 51);

    let one = evaluate_split(&eps[..1], &ds[1], &table, &lex, &model, Mode::MetaOnly, ScorerKind::Prototype).unwrap();
    assert_eq!(one.mean_f1, one.episode_f1[0]);
    assert_eq!(one.mode, "meta_only");
    assert_eq!(a.mode, "calibrated");
}

#[test]
fn cross_validation_rotates_and_averages_seeds() {
    let ds = domains(3);
    let table = embed_corpus_toy(&ds, 16, 2).unwrap();
    let cfg = CrossValConfig {
        train: quick(),
        seeds: vec![1, 2, 3, 4, 5],
        eval_episodes: 3,
        eval_query_size: 8,
        strategy: Strategy::Fixed,
        scorer: ScorerKind::Prototype,
    };
    let rep = cross_validate(&ds, &table, &Lexicons::builtin(), &cfg).unwrap();
    assert_eq!(rep.rotations.len(), 15);
    assert!(rep.rotations.iter().all(|r| r.sources.len() == 1 && r.report.fixed_threshold.is_some()));
    assert_eq!(rep.per_seed.len(), 5);
    let mean = rep.per_seed.iter().map(|s| s.mean_f1).sum::<f64>() / 5.0;
    assert!((rep.mean_f1 - mean).abs() < 1e-12);
    assert!(cross_validate(&ds[..2], &table, &Lexicons::builtin(), &cfg).is_err());
}

#[test]
fn ablation_has_four_rows_per_target() {
    let ds = domains(3);
    let table = embed_corpus_toy(&ds, 16, 3).unwrap();
    let cfg = CrossValConfig {
        train: quick(),
        seeds: vec![1],
        eval_episodes: 3,
        eval_query_size: 8,
        ..CrossValConfig::default()
    };
    let rep = ablate(&ds, &table, &Lexicons::builtin(), &cfg).unwrap();
    assert_eq!(rep.targets.len(), 3);
    for t in &rep.targets {
        let names: Vec<&str> = t.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(names, ABLATION_ROWS);
        // The matching scorer agrees with the plain prototype scorer.
        assert!((t.rows[0].mean_f1 - t.rows[1].mean_f1).abs() < 1e-9);
    }
}
