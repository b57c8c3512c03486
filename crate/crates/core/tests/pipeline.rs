use hybridhash::config::RunConfig;
use hybridhash::data::{generate_splits, DatasetSplits};
use hybridhash::loss::WeightScope;
use hybridhash::model::ModelConfig;
use hybridhash::pipeline::{encode_checkpoint, evaluate, Trainer};
use hybridhash::retrieval::{CodeDatabase, HashCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_run() -> (RunConfig, DatasetSplits) {
    let mut cfg = RunConfig {
        model: ModelConfig {
            init_std: 0.02,
            ..ModelConfig::reduced()
        },
        ..RunConfig::default()
    };
    cfg.training.batch_size = 8;
    cfg.training.crop_to = 8;
    cfg.training.resize_to = 9;
    cfg.optimizer.learning_rate = 1e-3;
    cfg.validate().unwrap();
    (cfg, generate_splits(3, 12, 8, 5).unwrap())
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let (mut cfg, data) = small_run();
    cfg.optimizer.learning_rate = 0.0;
    let mut trainer = Trainer::new(&cfg, &data.train).unwrap();
    let before = trainer.model().params.clone();
    for _ in 0..3 {
        let record = trainer.step().unwrap();
        assert!(record.grad_norm > 0.0);
    }
    for ((name, a), (_, b)) in before.iter().zip(trainer.model().params.iter()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} moved");
    }
}

#[test]
fn trained_codes_use_both_signs_on_every_bit() {
    let (cfg, data) = small_run();
    let mut trainer = Trainer::new(&cfg, &data.train).unwrap();
    for _ in 0..10 {
        assert!(trainer.step().unwrap().loss.is_finite());
    }
    let ckpt = trainer.checkpoint();
    let db = encode_checkpoint(&ckpt, &data.database, cfg.training.resize_to, None).unwrap();
    let entropy_bits = (0..db.bits())
        .filter(|&j| {
            let ones = (0..db.len()).filter(|&i| db.code(i).bit(j)).count();
            ones > 0 && ones < db.len()
        })
        .count();
    assert!(entropy_bits > 0, "every bit is constant over the database");
}

#[test]
fn global_weighting_trains() {
    let (mut cfg, data) = small_run();
    cfg.loss.scope = WeightScope::Global;
    let mut trainer = Trainer::new(&cfg, &data.train).unwrap();
    for _ in 0..3 {
        let r = trainer.step().unwrap();
        assert!(r.loss.is_finite() && r.loss > 0.0);
        assert_eq!(r.similar + r.dissimilar, 8 * 7 / 2);
    }
    assert_eq!(trainer.steps_done(), 3);
}

#[test]
fn random_codes_score_near_class_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut random_db = |n: usize| {
        let labels: Vec<u64> = (0..n).map(|i| 1 << (i % 3)).collect();
        let codes = (0..n)
            .map(|_| HashCode::from_bits(&(0..32).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>()))
            .collect();
        CodeDatabase::sequential(32, labels, codes).unwrap()
    };
    let (queries, db) = (random_db(300), random_db(3000));
    let report = evaluate(&queries, &db, 1500).unwrap();
    assert!((report.map - 1.0 / 3.0).abs() < 0.05, "map {}", report.map);
}
