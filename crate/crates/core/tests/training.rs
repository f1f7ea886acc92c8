use fsml_core::corpus::{generate_synthetic, Domain, SynthSpec};
use fsml_core::embeddings::{embed_corpus_toy, EmbeddingTable};
use fsml_core::model::ModelParams;
use fsml_core::prepared::PreparedEpisode;
use fsml_core::rng::rng_from;
use fsml_core::thresholding::features::N_FEATURES;
use fsml_core::thresholding::mlp::Mlp;
use fsml_core::training::{
    label_count_mse, prepare_training_episodes, pretrain_kernel, train_on_domains, train_scorer, TrainConfig,
};
use fsml_core::Lexicons;

fn synth(n: usize, seed: u64, spec: SynthSpec) -> (Vec<Domain>, EmbeddingTable) {
    let ds: Vec<Domain> = (0..n)
        .map(|i| {
            generate_synthetic(
                &SynthSpec {
                    name: format!("d{i}"),
                    ..spec.clone()
                },
                seed + i as u64,
            )
            .unwrap()
        })
        .collect();
    let t = embed_corpus_toy(&ds, 32, seed).unwrap();
    (ds, t)
}

fn episodes(ds: &[Domain], t: &EmbeddingTable, cfg: &TrainConfig) -> Vec<Vec<PreparedEpisode>> {
    let refs: Vec<&Domain> = ds.iter().collect();
    prepare_training_episodes(&refs, t, &Lexicons::builtin(), cfg, "train").unwrap()
}

#[test]
fn scorer_loss_decreases() {
    let spec = SynthSpec {
        p_multi: 0.0,
        p_private: 0.9,
        ..SynthSpec::default()
    };
    let (ds, t) = synth(1, 3, spec);
    let cfg = TrainConfig {
        epochs: 30,
        episodes_per_domain: 10,
        ..TrainConfig::default()
    };
    let eps = episodes(&ds, &t, &cfg);
    let m = ModelParams::init(32, 0.5, 0.3, Mlp::random(N_FEATURES, 10, 1, &mut rng_from(0, "m"))).unwrap();
    let (_, losses) = train_scorer(&eps, &m, &cfg).unwrap();
    assert_eq!(losses.len(), 30);
    assert!(losses[29] < losses[0], "{losses:?}");
}

#[test]
fn kernel_pretraining_beats_mean_baseline() {
    let spec = SynthSpec {
        p_multi: 0.35,
        ..SynthSpec::default()
    };
    let (ds, t) = synth(2, 11, spec);
    let cfg = TrainConfig {
        kernel_epochs: 20,
        episodes_per_domain: 20,
        ..TrainConfig::default()
    };
    let eps = episodes(&ds, &t, &cfg);
    let m = ModelParams::init(32, 0.5, 0.3, Mlp::random(N_FEATURES, 10, 1, &mut rng_from(0, "m"))).unwrap();
    let (th, _) = pretrain_kernel(&eps, &m.threshold, &cfg).unwrap();
    let golds: Vec<f64> = eps
        .iter()
        .flatten()
        .flat_map(|e| e.queries.iter().map(|q| q.gold.len() as f64))
        .collect();
    let mean = golds.iter().sum::<f64>() / golds.len() as f64;
    let baseline = golds.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / golds.len() as f64;
    let mse = label_count_mse(&eps, &th).unwrap();
    assert!(mse < baseline, "mse {mse} vs baseline {baseline}");
}

#[test]
fn anchoring_changes_the_learned_projection() {
    // A high multi-label rate makes many labels share support items.
    let spec = SynthSpec {
        n_labels: 6,
        p_multi: 0.6,
        pool_size: 200,
        ..SynthSpec::default()
    };
    let (ds, t) = synth(1, 8, spec);
    let refs: Vec<&Domain> = ds.iter().collect();
    let base = TrainConfig {
        epochs: 2,
        kernel_epochs: 1,
        episodes_per_domain: 8,
        ..TrainConfig::default()
    };
    let lex = Lexicons::builtin();
    let (plain, _) = train_on_domains(&refs, None, &t, &lex, &TrainConfig { beta: 0.0, ..base.clone() }).unwrap();
    let (anchored, _) = train_on_domains(&refs, None, &t, &lex, &base).unwrap();
    assert_ne!(plain.proj.data, anchored.proj.data);
}

#[test]
fn beta_sweep_keeps_a_sweep_value() {
    let (ds, t) = synth(1, 4, SynthSpec::default());
    let refs: Vec<&Domain> = ds.iter().collect();
    let cfg = TrainConfig {
        epochs: 1,
        kernel_epochs: 1,
        episodes_per_domain: 4,
        beta_sweep: true,
        ..TrainConfig::default()
    };
    let (m, rep) = train_on_domains(&refs, None, &t, &Lexicons::builtin(), &cfg).unwrap();
    assert_eq!(rep.beta_sweep.len(), 3);
    assert!([0.1f32, 0.5, 0.9].iter().any(|&b| m.beta == b as f64));
}

#[test]
fn config_rejects_out_of_range_values() {
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { mlp_layers: 4, ..TrainConfig::default() },
        TrainConfig { mlp_hidden: 7, ..TrainConfig::default() },
        TrainConfig { lr_proj: -1.0, ..TrainConfig::default() },
        TrainConfig { beta: 1.2, ..TrainConfig::default() },
    ] {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(TrainConfig::default().validate().is_ok());
}
