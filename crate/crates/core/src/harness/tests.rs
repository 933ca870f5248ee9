use super::*;
use crate::diffcore::Tensor;
use crate::error::Error;
use crate::graphmodel::{GraphModel, ModelConfig};
use crate::scenegen::{generate_samples, WorldConfig};

/// A run small enough to train in well under a second per step.
fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        features: 8,
        embedding_dim: 4,
        hourglass_depth: 2,
        ..ModelConfig::default()
    };
    cfg.world = WorldConfig {
        max_objects: 3,
        ..WorldConfig::default()
    };
    cfg.train.steps = 4;
    cfg.train.batch_size = 2;
    cfg.train.checkpoint_every = 2;
    cfg.data.train_scenes = 3;
    cfg.data.eval_scenes = 2;
    cfg
}

#[test]
fn config_roundtrips_and_rejects_unknown_fields() {
    let cfg = tiny();
    let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let partial: RunConfig = serde_json::from_str(r#"{"train": {"steps": 7}, "model": {"features": 16}}"#).unwrap();
    assert_eq!(partial.train.steps, 7);
    assert_eq!(partial.model.features, 16);
    assert_eq!(partial.model.embedding_dim, ModelConfig::default().embedding_dim);
    assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
    assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"stpes": 1}}"#).is_err());
}

#[test]
fn config_validation_catches_inconsistencies() {
    let mut cfg = tiny();
    cfg.world.stride = 8;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = tiny();
    cfg.world.relation_slots = cfg.model.relation_slots + 1;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny();
    cfg.train.prior_dropout = 1.5;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny();
    cfg.optimizer = crate::diffcore::OptimizerConfig::adam(f64::NAN);
    assert!(cfg.validate().is_err());
    assert!(tiny().validate().is_ok());
}

#[test]
fn learning_rate_decays_linearly_at_the_end() {
    let mut cfg = tiny();
    cfg.train.steps = 100;
    cfg.train.decay_fraction = 0.2;
    cfg.train.final_lr_fraction = 0.1;
    assert_eq!(cfg.lr_scale(0), 1.0);
    assert_eq!(cfg.lr_scale(79), 1.0);
    assert_eq!(cfg.lr_scale(80), 1.0);
    assert!((cfg.lr_scale(90) - 0.55).abs() < 1e-12);
    assert!((cfg.lr_scale(100) - 0.1).abs() < 1e-12);
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let cfg = tiny().model;
    let model = GraphModel::<f32>::build(&cfg, 9).unwrap();
    let bytes = encode_checkpoint(&model, 17).unwrap();
    let (back, index) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(index.step, 17);
    assert_eq!(index.config, cfg);
    for ((_, a), (_, b)) in model.params().iter().zip(back.params().iter()) {
        assert_eq!(a.name, b.name);
        let (x, y): (Vec<u32>, Vec<u32>) = (
            a.value.data().iter().map(|v| v.to_bits()).collect(),
            b.value.data().iter().map(|v| v.to_bits()).collect(),
        );
        assert_eq!(x, y, "{}", a.name);
    }
    assert_eq!(encode_checkpoint(&back, 17).unwrap(), bytes);

    let x = Tensor::<f32>::full(&[3, cfg.input_size, cfg.input_size], 0.3);
    let (o1, o2) = (model.forward(&x, None).unwrap(), back.forward(&x, None).unwrap());
    assert_eq!(o1.vertex_heatmap, o2.vertex_heatmap);
    assert_eq!(o1.relations[0].source_embedding, o2.relations[0].source_embedding);
}

#[test]
fn corrupt_or_mismatched_checkpoints_are_rejected() {
    let cfg = tiny().model;
    let model = GraphModel::<f32>::build(&cfg, 1).unwrap();
    let bytes = encode_checkpoint(&model, 0).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad_magic), Err(Error::Checkpoint(_))));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    assert!(decode_checkpoint(&bytes[..20]).is_err());

    // Index claims a different shape than the model has.
    let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let mut index: CheckpointIndex = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
    index.config.features = 12;
    let json = serde_json::to_vec(&index).unwrap();
    let mut forged = CHECKPOINT_MAGIC.to_vec();
    forged.extend_from_slice(&(json.len() as u64).to_le_bytes());
    forged.extend_from_slice(&json);
    forged.extend_from_slice(&bytes[12 + len..]);
    assert!(matches!(decode_checkpoint(&forged), Err(Error::Checkpoint(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pxgc");
    save_checkpoint(&model, 0, &path).unwrap();
    assert!(load_checkpoint_for(&path, &cfg).is_ok());
    let other = ModelConfig {
        embedding_dim: 6,
        ..cfg.clone()
    };
    assert!(matches!(load_checkpoint_for(&path, &other), Err(Error::Checkpoint(_))));
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let cfg = tiny();
    let data = generate_samples(cfg.data.train_scenes, cfg.seeds.data, &cfg.world).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut seen = 0;
    let out_a = train(&cfg, &data, a.path(), |_| seen += 1).unwrap();
    let out_b = train(&cfg, &data, b.path(), |_| {}).unwrap();
    assert_eq!(seen, cfg.train.steps);
    assert_eq!(std::fs::read(&out_a.checkpoint).unwrap(), std::fs::read(&out_b.checkpoint).unwrap());
    let log = read_log(&out_a.log).unwrap();
    assert_eq!(log, read_log(&out_b.log).unwrap());
    assert_eq!(log.len(), cfg.train.steps);
    assert!(log.iter().enumerate().all(|(i, l)| l.step == i + 1 && l.images == 2));
    assert!(log.iter().all(|l| l.loss.total.is_finite()));
    let comp: f64 = log[0].loss.components().iter().sum();
    assert!((comp - log[0].loss.total).abs() < 1e-6 * log[0].loss.total.abs().max(1.0));

    let mut other = cfg.clone();
    other.seeds.train += 1;
    let c = tempfile::tempdir().unwrap();
    let out_c = train(&other, &data, c.path(), |_| {}).unwrap();
    assert_ne!(std::fs::read(&out_a.checkpoint).unwrap(), std::fs::read(&out_c.checkpoint).unwrap());
}

#[test]
fn non_finite_loss_aborts_and_keeps_the_last_checkpoint() {
    let cfg = tiny();
    let data = generate_samples(cfg.data.train_scenes, cfg.seeds.data, &cfg.world).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(&cfg, &data).unwrap();
    let first = trainer.run(2, dir.path(), |_| {}).unwrap();
    let saved = std::fs::read(&first.checkpoint).unwrap();

    let id = trainer.model.params().id("object.0.class.out.bias").unwrap();
    trainer.model.params_mut().get_mut(id).value.data_mut()[0] = f32::NAN;
    match trainer.run(4, dir.path(), |_| {}) {
        Err(Error::NonFiniteLoss { step }) => assert_eq!(step, 2),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
    assert_eq!(std::fs::read(&first.checkpoint).unwrap(), saved);
    let (_, index) = load_checkpoint(&first.checkpoint).unwrap();
    assert_eq!(index.step, 2);
    assert_eq!(read_log(&first.log).unwrap().len(), 2);
}

#[test]
fn commands_run_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.paths.train_dir = root.path().join("train");
    cfg.paths.eval_dir = root.path().join("eval");
    cfg.paths.out_dir = root.path().join("run");
    cfg.train.steps = 2;
    cmd_gen(&cfg).unwrap();
    let outcome = cmd_train(&cfg, |_| {}).unwrap();
    assert!(outcome.checkpoint.exists());

    let eval_dir = root.path().join("eval_out");
    let (report, files) = cmd_eval(&cfg, &outcome.checkpoint, crate::evalkit::TaskSetting::SgCls, &[5, 10], &eval_dir).unwrap();
    assert_eq!(report.counts.images, 2);
    for f in [&files.json, &files.text, &files.histogram, &files.matches] {
        assert!(f.exists(), "{}", f.display());
    }
    assert_eq!(std::fs::read_to_string(&files.matches).unwrap().lines().count(), 2);

    let reports = cmd_report(&cfg, &outcome.checkpoint, &eval_dir).unwrap();
    assert_eq!(reports.len(), 3);
    assert!(eval_dir.join("summary.txt").exists());

    let image = cfg.paths.eval_dir.join("scene_00000.ppm");
    let dec_dir = root.path().join("decoded");
    cmd_decode(&cfg, &outcome.checkpoint, &image, &dec_dir).unwrap();
    assert!(dec_dir.join("scene_00000.graph.json").exists());
    assert!(dec_dir.join("scene_00000.decoded.ppm").exists());

    let mut wrong = cfg.clone();
    wrong.model.features = 16;
    assert!(matches!(cmd_eval(&wrong, &outcome.checkpoint, crate::evalkit::TaskSetting::SgGen, &[5], &eval_dir), Err(Error::Checkpoint(_))));
}
