use selfverify::acceptance::{advantage_invariants, reproducibility_config};
use selfverify::config::Regime;
use selfverify::grpo::{RewardedGroup, TaskKind};
use selfverify::scheduler::{schedule, Checkpoint, Phase, TrainObserver, Trainer};
use selfverify::{StepRecord, TrainConfig};

fn small(regime: Regime, steps: usize) -> TrainConfig {
    TrainConfig {
        regime,
        total_steps: steps,
        verify_init_steps: 2,
        ..reproducibility_config()
    }
}

#[derive(Default)]
struct Recorder {
    batches: Vec<(usize, Phase, usize, usize)>,
}

impl TrainObserver for Recorder {
    fn before_update(&mut self, step: usize, phase: Phase, groups: &[RewardedGroup]) {
        let gen = groups.iter().filter(|g| g.task_kind == TaskKind::Generation).count();
        self.batches.push((step, phase, gen, groups.len() - gen));
    }
}

fn run(config: &TrainConfig) -> (Vec<StepRecord>, Recorder, Trainer) {
    let mut trainer = Trainer::new(config.clone()).unwrap();
    let mut recorder = Recorder::default();
    let steps = trainer.plan().len();
    let records = trainer.run_steps(steps, &mut recorder).unwrap();
    (records, recorder, trainer)
}

#[test]
fn every_regime_logs_one_record_per_step_within_budget() {
    for regime in [Regime::Generate, Regime::SelfVerify, Regime::Mixed, Regime::VerifyInit, Regime::VerifyAlter] {
        let config = small(regime, 4);
        let (records, recorder, _) = run(&config);
        assert_eq!(records.len(), schedule(&config).len(), "{regime:?}");
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.step, i + 1, "{regime:?}");
        }
        for &(_, _, gen, verify) in &recorder.batches {
            assert!(gen + verify <= config.batch_b, "{regime:?}: {gen}+{verify} groups");
        }
    }
}

#[test]
fn self_verify_never_updates_on_generation_rewards() {
    let (_, recorder, _) = run(&small(Regime::SelfVerify, 6));
    assert!(!recorder.batches.is_empty());
    for &(step, phase, gen, verify) in &recorder.batches {
        assert_eq!(phase, Phase::SelfVerify);
        assert_eq!(gen, 0, "step {step}");
        assert!(verify > 0);
    }
}

#[test]
fn generate_never_updates_on_verification_rewards() {
    let (_, recorder, _) = run(&small(Regime::Generate, 4));
    assert!(recorder.batches.iter().all(|&(_, _, _, verify)| verify == 0));
}

#[test]
fn identical_configs_give_bit_identical_metrics() {
    let config = small(Regime::Mixed, 4);
    let (a, _, ta) = run(&config);
    let (b, _, tb) = run(&config);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(ta.params(), tb.params());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let base = small(Regime::VerifyAlter, 4);
    let one = TrainConfig { workers: Some(1), ..base.clone() };
    let three = TrainConfig { workers: Some(3), ..base };
    let (a, _, ta) = run(&one);
    let (b, _, tb) = run(&three);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(ta.params(), tb.params());
    assert_eq!(
        serde_json::to_string(&ta.evaluate().unwrap()).unwrap(),
        serde_json::to_string(&tb.evaluate().unwrap()).unwrap()
    );
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let config = small(Regime::VerifyAlter, 6);
    let (full, _, full_trainer) = run(&config);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut first = Trainer::new(config.clone()).unwrap();
    let mut records = first.run_steps(3, &mut ()).unwrap();
    first.checkpoint().unwrap().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.learner, first.checkpoint().unwrap().learner);
    let mut second = Trainer::from_checkpoint(loaded).unwrap();
    records.extend(second.run_steps(usize::MAX, &mut ()).unwrap());

    assert_eq!(serde_json::to_string(&records).unwrap(), serde_json::to_string(&full).unwrap());
    assert_eq!(second.params(), full_trainer.params());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (_, _, trainer) = run(&small(Regime::Generate, 2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let ckpt = trainer.checkpoint().unwrap();
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let bits = |c: &Checkpoint| c.learner.params.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&loaded), bits(&ckpt));
    assert_eq!(loaded.config_hash, ckpt.config_hash);
}

#[test]
fn tampered_checkpoint_config_is_rejected() {
    let (_, _, trainer) = run(&small(Regime::Generate, 1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut ckpt = trainer.checkpoint().unwrap();
    ckpt.config.seed += 1;
    ckpt.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn removing_the_normalization_constant_breaks_the_advantage_check() {
    let (healthy, _) = advantage_invariants(1e-6).unwrap();
    assert!(healthy);
    let (planted, detail) = advantage_invariants(0.0).unwrap();
    assert!(!planted, "{detail}");
}
