use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use keypose::data::{generate_dataset, sample_episode, Dataset, GeneratorConfig, OcclusionMode, Split};
use keypose::pipeline::{
    evaluate, infer_pose, load_checkpoint, save_checkpoint, train, Checkpoint, DecoderKind, EvalOptions, SegMode,
    TrainConfig,
};
use keypose::Error;

fn small_data(occlusion: OcclusionMode) -> Dataset {
    let cfg = GeneratorConfig {
        objects_per_family: 2,
        intra_objects: 2,
        cross_objects: 2,
        scenes_per_object: 6,
        occlusion,
        ..GeneratorConfig::default()
    };
    generate_dataset(&cfg, 3).unwrap()
}

fn small_checkpoint(data: &Dataset, decoder: DecoderKind, iterations: usize) -> Checkpoint {
    let cfg = TrainConfig {
        decoder,
        iterations,
        hidden: 16,
        scenes_per_object: 6,
        context_seeds: 8,
        ..TrainConfig::default()
    };
    train(&cfg, data, |_| {}).unwrap().checkpoint
}

#[test]
fn reloaded_checkpoint_infers_identically() {
    let data = small_data(OcclusionMode::None);
    let ckpt = small_checkpoint(&data, DecoderKind::Gnn, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let episode = sample_episode(&data, &mut rng).unwrap();
        let object = data.object(episode.object_id).unwrap();
        for target in &episode.targets {
            let before = infer_pose(&ckpt.networks, &episode, object, target, SegMode::GroundTruth, 0.05);
            let after = infer_pose(&loaded.networks, &episode, object, target, SegMode::GroundTruth, 0.05);
            assert_eq!(before.unwrap(), after.unwrap());
        }
    }
}

#[test]
fn training_objects_are_rejected() {
    let data = small_data(OcclusionMode::None);
    let ckpt = small_checkpoint(&data, DecoderKind::Mlp, 1);
    let options = EvalOptions {
        splits: vec![Split::Train, Split::Intra],
        ..EvalOptions::default()
    };
    assert!(matches!(
        evaluate(&ckpt, &data, &options),
        Err(Error::InvalidArgument(_))
    ));
    let smoke = EvalOptions {
        allow_train_objects: true,
        ..options
    };
    assert!(evaluate(&ckpt, &data, &smoke).is_ok());
}

#[test]
fn empty_segmentation_counts_as_failure() {
    let data = small_data(OcclusionMode::None);
    let mut ckpt = small_checkpoint(&data, DecoderKind::Mlp, 1);
    // Zero the last segmenter layer so every seed ties and is read as background.
    let last = ckpt.networks.segmenter.layers_mut().last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(0.0);
    let report = evaluate(&ckpt, &data, &EvalOptions::default()).unwrap();
    assert_eq!(report.all.failures, report.all.targets);
    assert_eq!(report.all.add_01d, 0.0);
    assert!(report.objects.iter().all(|r| r.add.is_nan() && r.l1.is_finite()));

    let gt = EvalOptions {
        seg_mode: SegMode::GroundTruth,
        ..EvalOptions::default()
    };
    assert_eq!(evaluate(&ckpt, &data, &gt).unwrap().all.failures, 0);
}

#[test]
fn report_rows_aggregate_consistently() {
    let data = small_data(OcclusionMode::Range);
    let ckpt = small_checkpoint(&data, DecoderKind::Gnn, 2);
    for occluded in [false, true] {
        let options = EvalOptions {
            occluded,
            ..EvalOptions::default()
        };
        let report = evaluate(&ckpt, &data, &options).unwrap();
        let targets: usize = report.objects.iter().map(|r| r.targets).sum();
        let passes: f64 = report.objects.iter().map(|r| r.add_01d * r.targets as f64).sum();
        assert_eq!(report.all.targets, targets);
        assert!((report.all.add_01d - passes / targets as f64).abs() < 1e-15);
        assert!(report.objects.iter().all(|r| (0.0..=1.0).contains(&r.add_01d)));
        let split_targets: usize = report.splits.iter().map(|r| r.targets).sum();
        assert_eq!(split_targets, targets);
    }
}

#[test]
fn untrained_networks_rarely_succeed() {
    let data = generate_dataset(
        &GeneratorConfig {
            scenes_per_object: 6,
            occlusion: OcclusionMode::None,
            ..GeneratorConfig::default()
        },
        11,
    )
    .unwrap();
    let ckpt = small_checkpoint(&data, DecoderKind::Gnn, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut pass, mut total) = (0, 0);
    for _ in 0..100 {
        let episode = sample_episode(&data, &mut rng).unwrap();
        let object = data.object(episode.object_id).unwrap();
        let target = &episode.targets[0];
        total += 1;
        if let Ok(inf) = infer_pose(&ckpt.networks, &episode, object, target, SegMode::Predicted, 0.05) {
            pass += usize::from(inf.metrics.add_01d_pass);
        }
    }
    assert_eq!(total, 100);
    assert!(pass <= 2, "untrained network passed {pass} of 100 episodes");
}
