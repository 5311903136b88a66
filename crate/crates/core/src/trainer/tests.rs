use super::*;
use crate::model::{ModelConfig, ParamGroup};
use crate::prompt::{builtin_antonyms, Vocab};

fn tiny() -> ModelConfig {
    ModelConfig::transformer(2, 32, 2, 96, 40)
}

fn small_corpus(lines: usize) -> TokenCorpus {
    let text = antonym_lines(&builtin_antonyms(), lines, 9).unwrap();
    TokenCorpus::from_lines("small", &text, &Vocab::Char).unwrap()
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        seq_len: 32,
        steps,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_follow_reference_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!(c.learning_rate, 3e-5);
    assert_eq!(c.betas, (0.9, 0.95));
    assert_eq!(c.weight_decay, 0.01);
    assert_eq!(c.warmup_ratio, 0.1);
    assert_eq!(c.grad_clip, None);
    c.validate().unwrap();
}

#[test]
fn warmup_is_linear_then_constant() {
    let c = TrainConfig {
        learning_rate: 0.3,
        steps: 200,
        warmup_ratio: 0.1,
        ..TrainConfig::default()
    };
    assert_eq!(c.warmup_steps(), 20);
    for s in 1..20 {
        assert_eq!(c.lr_at(s), 0.3 * s as f64 / 20.0);
    }
    for s in 20..=200 {
        assert_eq!(c.lr_at(s), 0.3);
    }
    let none = TrainConfig {
        warmup_ratio: 0.0,
        ..c
    };
    assert_eq!(none.lr_at(1), 0.3);
}

#[test]
fn invalid_configs_rejected() {
    for c in [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { warmup_ratio: 1.5, ..TrainConfig::default() },
        TrainConfig { betas: (1.0, 0.9), ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { grad_clip: Some(0.0), ..TrainConfig::default() },
    ] {
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let mut m = Model::new(tiny(), 1).unwrap();
    let before = m.digest();
    let rec = pretrain(&mut m, &small_corpus(30), &quick(0), &[]).unwrap();
    assert!(rec.loss_curve.is_empty());
    assert_eq!(m.digest(), before);
}

#[test]
fn short_corpus_rejected() {
    let mut m = Model::new(tiny(), 1).unwrap();
    let c = TokenCorpus {
        name: "short".into(),
        tokens: vec![1; 20],
    };
    assert!(matches!(pretrain(&mut m, &c, &quick(1), &[]), Err(Error::InvalidInput(_))));
}

#[test]
fn same_seed_same_loss_curve() {
    let corpus = small_corpus(30);
    let run = || {
        let mut m = Model::new(tiny(), 2).unwrap();
        pretrain(&mut m, &corpus, &quick(5), &[]).unwrap().loss_curve
    };
    let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

/// About 2k tokens cycling through twelve distinct lines.
fn repetitive_corpus() -> TokenCorpus {
    let text = antonym_lines(&builtin_antonyms(), 12, 9).unwrap();
    let lines: Vec<String> = (0..45).map(|i| text[i % 12].clone()).collect();
    TokenCorpus::from_lines("small", &lines, &Vocab::Char).unwrap()
}

#[test]
fn overfits_a_small_corpus() {
    let corpus = repetitive_corpus();
    assert!((1900..=2300).contains(&corpus.len()), "{}", corpus.len());
    let mut m = Model::new(ModelConfig::transformer(2, 32, 4, 96, 40), 4).unwrap();
    let fresh = m.clone();
    let cfg = TrainConfig {
        batch_size: 8,
        weight_decay: 0.0,
        ..quick(200)
    };
    let rec = pretrain(&mut m, &corpus, &cfg, &[&corpus]).unwrap();
    let first = rec.loss_curve[0];
    let last = rec.loss_curve[199];
    assert!(rec.loss_curve.iter().all(|l| l.is_finite()));
    assert!(last < 0.2 * first, "loss {first} -> {last}");
    let trained = evaluate_lm(&m, &corpus, 32).unwrap();
    assert!(trained < evaluate_lm(&fresh, &corpus, 32).unwrap());
    assert_eq!(rec.eval_losses["small"], trained);
}

#[test]
fn uniform_model_scores_log_vocab() {
    let mut m = Model::new(tiny(), 0).unwrap();
    for p in m.params_mut() {
        if p.name == "tok_emb" || p.name == "lm_bias" {
            p.tensor.data_mut().fill(0.0);
        }
    }
    let loss = evaluate_lm(&m, &small_corpus(5), 16).unwrap();
    assert!((loss - (96f64).ln()).abs() < 1e-12);
    let again: Vec<u64> = (0..5).map(|_| evaluate_lm(&m, &small_corpus(5), 16).unwrap().to_bits()).collect();
    assert!(again.iter().all(|b| *b == loss.to_bits()));
}

#[test]
fn nan_parameters_abort_with_divergence() {
    let mut m = Model::new(tiny(), 0).unwrap();
    m.params_mut()[3].tensor.data_mut()[0] = f64::NAN;
    let err = pretrain(&mut m, &small_corpus(30), &quick(3), &[]).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 1, .. }));
}

fn census(model: &Model, plan: &FreezePlan) -> usize {
    model
        .params()
        .iter()
        .filter(|p| match p.group {
            ParamGroup::Embedding => plan.embeddings_trainable,
            ParamGroup::Head => plan.lm_head_trainable,
            ParamGroup::Layer(l) => plan.trainable[l],
        })
        .map(|p| p.tensor.len())
        .sum()
}

#[test]
fn strategies_freeze_the_expected_layers() {
    let cfg = ModelConfig::transformer(8, 16, 2, 96, 40);
    let corpus = small_corpus(30);
    let base = Model::new(cfg, 5).unwrap();
    for kind in StrategyKind::ALL {
        let mut m = base.clone();
        let strategy = Strategy::new(kind);
        let plan = strategy.freeze_plan(8);
        let rec = continued_pretrain(&mut m, &corpus, &strategy, &quick(3), &[]).unwrap();
        assert_eq!(rec.trainable_params, census(&m, &plan));
        assert!(rec.frozen_unchanged());
        let expect_frozen: Vec<usize> = match kind {
            StrategyKind::FullParameter => vec![],
            StrategyKind::TrainShallowFreezeDeep => (5..=8).collect(),
            StrategyKind::FreezeShallowTrainDeep => (1..=4).collect(),
        };
        assert_eq!(rec.frozen_layers, expect_frozen);
        for l in 1..=8 {
            let same = rec.layer_digests_before[l - 1] == rec.layer_digests_after[l - 1];
            assert_eq!(same, expect_frozen.contains(&l), "{kind:?} layer {l}");
        }
    }
    assert_eq!(
        Strategy::new(StrategyKind::FullParameter).freeze_plan(8),
        FreezePlan::all_trainable(8)
    );
}

#[test]
fn embedding_overrides_apply() {
    let s = Strategy {
        embeddings_trainable: Some(false),
        head_trainable: Some(false),
        ..Strategy::new(StrategyKind::TrainShallowFreezeDeep)
    };
    let plan = s.freeze_plan(6);
    assert!(!plan.embeddings_trainable && !plan.lm_head_trainable);
    assert_eq!(plan.frozen_layers(), vec![4, 5, 6]);
}

#[test]
fn donor_deep_hybrid_keeps_donor_blocks_frozen() {
    let donor = Model::new(ModelConfig::transformer(4, 16, 2, 96, 40), 8).unwrap();
    let runs = hybrid_placement_run(&donor, &small_corpus(30), &quick(3), &[]).unwrap();
    let (deep_model, deep) = &runs[0];
    assert_eq!(deep.label, Placement::DonorDeep.label());
    assert_eq!(deep_model.config().layout_string(), "LA-LA-FA-FA");
    assert_eq!(deep.frozen_layers, vec![3, 4]);
    assert!(deep.frozen_unchanged());
    for l in [3, 4] {
        assert_eq!(deep.layer_digests_after[l - 1], donor.layer_digests()[l - 1]);
    }
    let (shallow_model, shallow) = &runs[1];
    assert_eq!(shallow_model.config().layout_string(), "FA-FA-LA-LA");
    assert!(shallow.frozen_layers.is_empty());
    assert_eq!(shallow.layer_digests_before[0], donor.layer_digests()[0]);
    assert_ne!(shallow.layer_digests_after[0], donor.layer_digests()[0]);

    let hybrid_donor = Model::new(ModelConfig::alternating_hybrid(4, 16, 2, 96, 40), 8).unwrap();
    assert!(matches!(
        build_hybrid(&hybrid_donor, Placement::DonorDeep, 0),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn comparison_tables_have_one_row_per_run() {
    let (_, report) = DeskReport::run(&DeskSettings::smoke(1), true, true).unwrap();
    assert_eq!(report.strategies.len(), 3);
    assert_eq!(report.hybrids.len(), 2);
    let csv = table_csv(&report.strategies).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "run,trainable_params,final_train_loss,eval_A-heldout,eval_B-heldout");
    assert_eq!(format_table(&report.hybrids).lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let run_dir = write_run_artifacts(dir.path(), &report).unwrap();
    assert!(run_dir.file_name().unwrap().to_str().unwrap().ends_with("-seed1"));
    for f in ["config.json", "strategies.csv", "hybrid.csv", "pretrain/loss.csv", "pretrain/eval.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
}
