use ief_core::data::skeleton::PELVIS;
use ief_core::data::{generate_dataset, Dataset, GeneratorConfig};
use ief_core::infer::{infer, predict_dataset};
use ief_core::model::Regime;
use ief_core::pose::apply_correction;
use ief_core::train::{
    direct_train, fpc_train, iterative_direct_train, joint_train, stage_examples, step_example, training_path, variants, LossMask,
    TrainConfig,
};
use ief_core::Point;

fn tiny() -> (Dataset, TrainConfig) {
    let ds = generate_dataset(10, 2, 0, &GeneratorConfig::square(32), 1).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-4,
        batch_size: 4,
        epochs_per_stage: 2,
        steps: 3,
        test_steps: 3,
        bound: 3.0,
        ..TrainConfig::default()
    };
    (ds, config)
}

#[test]
fn stage_sets_contain_every_earlier_step() {
    for t in 1..=4 {
        let e = stage_examples(100, t);
        assert_eq!(e.len(), 100 * t);
        let previous = stage_examples(100, t - 1);
        assert!(previous.iter().all(|p| e.contains(p)));
        for s in 1..=t {
            assert_eq!(e.iter().filter(|&&(_, step)| step == s).count(), 100);
        }
    }
}

#[test]
fn fpc_log_has_n_epochs_per_stage_and_matches_the_budget() {
    let (ds, config) = tiny();
    let out = fpc_train(&ds, &config).unwrap();
    assert_eq!(out.log.len(), config.steps * config.epochs_per_stage);
    for (i, r) in out.log.iter().enumerate() {
        assert_eq!(r.stage, i / config.epochs_per_stage + 1);
        assert_eq!(r.examples, r.stage * ds.len());
    }
    // 2 * (ceil(10/4) + ceil(20/4) + ceil(30/4)) = 2 * (3 + 5 + 8)
    assert_eq!(out.updates, 32);
    assert_eq!(config.update_budget(ds.len()), 32);
    assert_eq!(out.log.last().unwrap().updates, 32);
}

#[test]
fn every_regime_is_held_to_the_same_update_count() {
    let (ds, config) = tiny();
    let budget = config.update_budget(ds.len());
    assert_eq!(joint_train(&ds, &config).unwrap().updates, budget);
    assert_eq!(direct_train(&ds, &config).unwrap().updates, budget);
    assert_eq!(iterative_direct_train(&ds, &config).unwrap().updates, budget);
}

#[test]
fn single_step_joint_training_is_fpc() {
    let (ds, config) = tiny();
    let config = TrainConfig { steps: 1, ..config };
    let fpc = fpc_train(&ds, &config).unwrap();
    let joint = joint_train(&ds, &config).unwrap();
    assert_eq!(fpc.model.params, joint.model.params);
    assert_eq!(fpc.updates, joint.updates);
}

#[test]
fn joint_and_fpc_differ_with_several_steps() {
    let (ds, config) = tiny();
    assert_ne!(fpc_train(&ds, &config).unwrap().model.params, joint_train(&ds, &config).unwrap().model.params);
}

#[test]
fn training_is_reproducible() {
    let (ds, config) = tiny();
    let a = fpc_train(&ds, &config).unwrap();
    let b = fpc_train(&ds, &config).unwrap();
    assert_eq!(a.model, b.model);
    let strip = |log: &[ief_core::train::EpochRecord]| {
        log.iter().map(|r| (r.stage, r.epoch, r.examples, r.mean_loss.to_bits(), r.updates)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.log), strip(&b.log));
}

#[test]
fn direct_targets_are_unbounded_displacements() {
    let (ds, config) = tiny();
    let model = direct_train(&ds, &config).unwrap().model;
    assert_eq!(model.test_steps, 1);
    let ex = variants(&ds.examples[0], 32, false)[0].apply(&ds.examples[0]);
    let path = training_path(Regime::Direct, &model.mean_pose, &ex, config.bound, 1).unwrap();
    let y0 = model.initial_pose(&ex.given).unwrap();
    for k in 0..7 {
        assert_eq!(path.targets[0].delta(k), ex.pose.point(k) - y0.point(k));
    }
    assert_eq!(path.targets[0].delta(PELVIS), Point::ZERO);
}

#[test]
fn step_one_training_input_is_the_inference_input() {
    let (ds, config) = tiny();
    let model = fpc_train(&ds, &config).unwrap().model;
    let ex = variants(&ds.examples[3], 32, false)[0].apply(&ds.examples[3]);
    let path = training_path(Regime::Ief, &model.mean_pose, &ex, config.bound, config.steps).unwrap();
    let (train_input, _, _) = step_example(&model, &path, &ex, 1, LossMask::Annotated).unwrap();
    let y0 = model.initial_pose(&ex.given).unwrap();
    assert_eq!(train_input, model.input(&ex.image, &y0).unwrap());
}

#[test]
fn trajectories_add_up_and_keep_the_given_point() {
    let (ds, config) = tiny();
    let model = fpc_train(&ds, &config).unwrap().model;
    for ex in &ds.examples {
        let ex = variants(ex, 32, false)[0].apply(ex);
        let y0 = model.initial_pose(&ex.given).unwrap();
        assert_eq!(y0.point(PELVIS), ex.given[0].1);
        let t = infer(&model, &ex.image, &y0, 4, None).unwrap();
        assert_eq!(t.poses.len(), 5);
        for s in 0..4 {
            assert_eq!(apply_correction(&t.poses[s], &t.corrections[s]).unwrap(), t.poses[s + 1]);
            assert_eq!(t.poses[s + 1].point(PELVIS), ex.given[0].1);
        }
    }
}

#[test]
fn mirrored_prediction_returns_to_the_original_frame() {
    let (ds, config) = tiny();
    let model = fpc_train(&ds, &config).unwrap().model;
    let plain = predict_dataset(&model, &ds, 2, false, 1).unwrap();
    let flipped = predict_dataset(&model, &ds, 2, true, 2).unwrap();
    for (a, b) in plain.iter().zip(&flipped) {
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.trajectory.poses[0].point(PELVIS), b.trajectory.poses[0].point(PELVIS));
    }
}
