use taskaug::data::{
    generate_synthetic, load_dataset, save_dataset, split, Normalizer, NormalizeMode, SplitConfig, Splits,
    SynthTask, SynthTaskConfig,
};
use taskaug::hypergrad::{score_split, train, AugStrategy, TrainConfig};
use taskaug::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};

fn splits(seed: u64) -> Splits {
    let cfg = SynthTaskConfig {
        length: 128,
        seed,
        ..SynthTaskConfig::new(SynthTask::RrIrregularity)
    };
    let ds = generate_synthetic(&cfg, 100).unwrap();
    let s = split(&ds, &SplitConfig::default()).unwrap();
    let norm = Normalizer::fit(NormalizeMode::ZscorePerLead, &s.train).unwrap();
    Splits {
        train: norm.apply(&s.train),
        val: norm.apply(&s.val),
        test: norm.apply(&s.test),
    }
}

fn config(aug: AugStrategy) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelConfig::desk(2, 128), aug, 3);
    cfg.epochs = 2;
    cfg
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SynthTaskConfig::new(SynthTask::AmplitudeRatio), 40).unwrap();
    let path = dir.path().join("ds.json");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn checkpoint_reproduces_scores() {
    let s = splits(0);
    let report = train(&s, &config(AugStrategy::None)).unwrap();
    let cfg = ModelConfig::desk(2, 128);
    let best = report.best_params.clone().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&path, &cfg, report.seed, &best).unwrap();
    let (ck, loaded) = load_checkpoint(&path).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(loaded.to_flat(), best.to_flat());
    let (loss, auc, _) = score_split(&cfg, &loaded.to_flat(), &s.val).unwrap();
    assert!((loss - report.best_val_loss).abs() < 1e-12);
    assert!((auc - report.best_val_auroc).abs() < 1e-12);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let cfg = ModelConfig::desk(1, 64);
    let params = ModelParams::from_flat(&cfg, &vec![0.1; cfg.num_params()]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&path, &cfg, 0, &params).unwrap();
    let bin = path.with_extension("bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn taskaug_learns_and_records_every_outer_step() {
    let s = splits(1);
    let report = train(&s, &config(AugStrategy::TaskAug)).unwrap();
    assert_eq!(report.trajectory.len(), report.outer_steps + 1);
    let first = &report.trajectory[0].policy;
    let last = &report.trajectory.last().unwrap().policy;
    assert_ne!(first, last);
    for rec in &report.trajectory {
        for st in &rec.policy.stages {
            assert!((st.pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    assert!(report.test_auroc.is_some());
}

#[test]
fn baselines_train_to_finite_losses() {
    let s = splits(2);
    for aug in [
        AugStrategy::TimeMask { frac: 0.1 },
        AugStrategy::SpecAug { frac: 0.1 },
        AugStrategy::Dgw,
        AugStrategy::Smote,
    ] {
        let r = train(&s, &config(aug)).unwrap();
        assert!(r.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
        assert!(r.trajectory.is_empty());
    }
}
