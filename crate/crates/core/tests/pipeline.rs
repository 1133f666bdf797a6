use std::sync::Arc;

use ucbgrasp::agent::Ensemble;
use ucbgrasp::critic::CriticKind;
use ucbgrasp::explore::{select_pixel, FailureGuard, UcbConfig, UncertaintyKind};
use ucbgrasp::net::extract_patch;
use ucbgrasp::pipeline::{
    critic_sample_grad, learner_update, online_step, pretrain, run_async, run_sync, MemberTrainer, OfflineSample,
    OnlineConfig, ReplayBuffer, SceneSource, TrainConfig, Transition,
};
use ucbgrasp::sim::{BinSim, Difficulty, GraspAction, Material, ObjectSpec, Scene, Shape};

fn flat_box_scene(seed: u64) -> Scene {
    let mut s = Scene::empty((32, 32), 2, seed).unwrap();
    s.objects.push(ObjectSpec {
        id: 0,
        shape: Shape::Box,
        pose: (15.0, 15.0, 0.0),
        extent: (12.0, 12.0, 3.0),
        material: Material::Opaque,
        base_graspability: 1.0,
    });
    s
}

fn small_online(seed: u64, budget: u64) -> OnlineConfig {
    let mut cfg = OnlineConfig::new(seed, budget);
    cfg.scenes = SceneSource::Random {
        seed,
        objects: 3..=5,
        difficulty: Difficulty::Mixed,
    };
    cfg.checkpoint_every = 30;
    cfg
}

#[test]
fn pretrain_zero_steps_is_identity() {
    let sim = BinSim::default();
    let data = vec![OfflineSample::from_scene(&sim, flat_box_scene(1), &Default::default())];
    let e = Ensemble::init(3, CriticKind::Mv, 5, 2).unwrap();
    let out = pretrain(&data, &e, 0, &TrainConfig::default(), 1).unwrap();
    assert_eq!(out.checksum(), e.checksum());
}

#[test]
fn pretrain_fits_flat_box_labels_and_is_deterministic() {
    let sim = BinSim::default();
    let sample = OfflineSample::from_scene(&sim, flat_box_scene(1), &Default::default());
    let data = vec![sample.clone()];
    let e = Ensemble::init(3, CriticKind::Qr { heads: 20 }, 5, 3).unwrap();
    let a = pretrain(&data, &e, 1500, &TrainConfig::default(), 7).unwrap();
    let b = pretrain(&data, &e, 1500, &TrainConfig::default(), 7).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let pred = a.predict(&sample.observation).unwrap();
    let (mut err, mut n) = (0.0, 0.0);
    for ((r, c), &v) in sample.valid_mask.indexed_iter() {
        if v {
            err += (pred.stats.q_mean[[r, c]] - sample.target_q[[r, c]]).abs();
            n += 1.0;
        }
    }
    assert!(err / n < 0.1, "mean |q - target| = {}", err / n);
}

#[test]
fn greedy_step_is_deterministic_and_matches_argmax() {
    let sim = BinSim::default();
    let ens = Ensemble::standard(5, CriticKind::Mv).unwrap();
    let scene = sim.generate_scene(11, 8, Difficulty::Mixed).unwrap();
    let ucb = UcbConfig {
        delta: 0.0,
        kind: UncertaintyKind::None,
        ..UcbConfig::default()
    };
    let guard = FailureGuard::new(3);
    let a = online_step(&sim, &scene, &ens, &ucb, 4, &guard, 2).unwrap();
    let b = online_step(&sim, &scene, &ens, &ucb, 4, &guard, 2).unwrap();
    assert_eq!((a.selection.row, a.selection.col), (b.selection.row, b.selection.col));
    assert_eq!(a.outcome, b.outcome);

    let obs = sim.render(&scene);
    let pred = ens.predict(&obs).unwrap();
    let greedy = select_pixel(&pred.stats.q_mean, &scene.bin_mask, &pred.action_mean, &obs).unwrap();
    assert_eq!((a.selection.row, a.selection.col), (greedy.row, greedy.col));

    // replay the logged action through the simulator with the same counter
    let action = GraspAction::new(a.selection.row, a.selection.col, a.selection.action.alpha, a.selection.action.beta);
    let p = sim.true_success_prob(&scene, &action);
    assert_eq!(p, a.outcome.true_success_prob);
    let (again, _) = sim.execute_grasp(&scene, &action, 2).unwrap();
    assert_eq!(again.reward, a.outcome.reward);
    assert_eq!(a.patch, extract_patch(&obs, a.selection.row, a.selection.col, 5).unwrap());
}

fn success_transition(scene: &Scene, sim: &BinSim) -> Transition {
    let obs = sim.render(scene);
    Transition {
        patch: extract_patch(&obs, 15, 15, 5).unwrap(),
        row: 15,
        col: 15,
        action: [0.0, 0.0],
        reward: 1,
        step_index: 0,
        scene_id: 0,
    }
}

#[test]
fn empty_replay_update_is_a_noop() {
    let ens = Ensemble::standard(1, CriticKind::Mv).unwrap();
    let mut tr = MemberTrainer::new(0, ens.members[0].clone(), 1);
    let replay = ReplayBuffer::new(10);
    let out = learner_update(&mut tr, &replay, CriticKind::Mv, &TrainConfig::default()).unwrap();
    assert!(out.is_none());
    assert_eq!(tr.updates, 0);
    assert_eq!(tr.member.checksum(), ens.members[0].checksum());
}

#[test]
fn repeated_success_drives_q_up() {
    let sim = BinSim::default();
    let scene = flat_box_scene(2);
    let t = success_transition(&scene, &sim);
    for kind in [CriticKind::Mv, CriticKind::Qr { heads: 20 }] {
        let ens = Ensemble::init(9, kind, 5, 1).unwrap();
        let mut tr = MemberTrainer::new(0, ens.members[0].clone(), 3);
        let replay = ReplayBuffer::new(100);
        for _ in 0..20 {
            replay.push(t.clone());
        }
        let cfg = TrainConfig {
            train_actor: false,
            ..TrainConfig::default()
        };
        for _ in 0..2000 {
            learner_update(&mut tr, &replay, kind, &cfg).unwrap();
        }
        let x = t.patch.with_suffix(&t.action);
        let (q, _) = kind.expected_reward(&tr.member.critic.forward(&x).unwrap());
        assert!(q > 0.9, "{kind}: q = {q}");
    }
}

#[test]
fn update_depends_only_on_the_selected_patch() {
    let sim = BinSim::default();
    let a = flat_box_scene(2);
    let mut b = a.clone();
    b.objects.push(ObjectSpec {
        id: 1,
        shape: Shape::Dome,
        pose: (5.0, 26.0, 0.0),
        extent: (4.0, 4.0, 3.0),
        material: Material::CurvedGlossy,
        base_graspability: 0.9,
    });
    let ta = success_transition(&a, &sim);
    let tb = success_transition(&b, &sim);
    assert_eq!(ta.patch, tb.patch);
    let ens = Ensemble::standard(4, CriticKind::Mv).unwrap();
    let critic = &ens.members[0].critic;
    let mut ga = critic.zero_gradients();
    let mut gb = critic.zero_gradients();
    critic_sample_grad(CriticKind::Mv, critic, ta.patch.as_slice(), ta.action, 1.0, 1.0, &mut ga).unwrap();
    critic_sample_grad(CriticKind::Mv, critic, tb.patch.as_slice(), tb.action, 1.0, 1.0, &mut gb).unwrap();
    assert_eq!(ga, gb);
    // a different pixel does change the gradient
    let other = extract_patch(&sim.render(&b), 5, 26, 5).unwrap();
    let mut gc = critic.zero_gradients();
    critic_sample_grad(CriticKind::Mv, critic, other.as_slice(), ta.action, 1.0, 1.0, &mut gc).unwrap();
    assert_ne!(ga, gc);
}

#[test]
fn zero_budget_runs_are_empty() {
    let sim = BinSim::default();
    let ens = Ensemble::standard(1, CriticKind::Mv).unwrap();
    for run in [
        run_sync(&sim, &ens, &OnlineConfig::new(1, 0)).unwrap(),
        run_async(&sim, &ens, &OnlineConfig::new(1, 0)).unwrap(),
    ] {
        assert!(run.records.is_empty());
        assert_eq!(run.updates, 0);
        assert!(run.failure.is_none());
        assert_eq!(run.ensemble.checksum(), ens.checksum());
    }
}

#[test]
fn sync_runs_are_bit_deterministic() {
    let sim = BinSim::default();
    let ens = Ensemble::standard(2, CriticKind::Qr { heads: 5 }).unwrap();
    let cfg = small_online(3, 20);
    let a = run_sync(&sim, &ens, &cfg).unwrap();
    let b = run_sync(&sim, &ens, &cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.ensemble.checksum(), b.ensemble.checksum());
    assert_eq!(a.updates, 120);
    assert_eq!(a.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![30, 60, 90, 120]);
    assert!(a.records.iter().all(|r| r.staleness <= 10));
}

#[test]
fn async_run_keeps_the_ratio_and_freshness() {
    let sim = BinSim::default();
    let ens = Ensemble::standard(2, CriticKind::Mv).unwrap();
    let cfg = small_online(4, 60);
    let run = run_async(&sim, &ens, &cfg).unwrap();
    assert!(run.failure.is_none());
    assert_eq!(run.records.len(), 60);
    assert_eq!(run.updates, 360);
    for r in run.window_ratios(50) {
        assert!((5.0..=7.0).contains(&r), "window ratio {r}");
    }
    assert!(run.records.iter().skip(5).all(|r| r.staleness <= 10));
    assert_eq!(run.checkpoints.len(), 12);
}

#[test]
fn async_learner_failure_is_recorded() {
    let sim = BinSim::default();
    let ens = Ensemble::standard(2, CriticKind::Mv).unwrap();
    let mut cfg = small_online(5, 30);
    cfg.train.lr = f64::NAN;
    let run = run_async(&sim, &ens, &cfg).unwrap();
    assert!(run.failure.is_some());
    assert!(run.records.len() < 30);
}

#[test]
fn cleared_bins_advance_to_the_next_custom_scene() {
    let sim = BinSim::default();
    let ens = Ensemble::standard(2, CriticKind::Mv).unwrap();
    let mut cfg = small_online(6, 12);
    cfg.scenes = SceneSource::Custom(Arc::new(|k| Ok(flat_box_scene(k))));
    let run = run_sync(&sim, &ens, &cfg).unwrap();
    for w in run.records.windows(2) {
        if w[0].reward == 1 {
            // the single box is gone, so the bin is clear
            assert_eq!((w[1].scene_id, w[1].attempt), (w[0].scene_id + 1, 0));
        } else {
            assert_eq!((w[1].scene_id, w[1].attempt), (w[0].scene_id, w[0].attempt + 1));
        }
    }
}
