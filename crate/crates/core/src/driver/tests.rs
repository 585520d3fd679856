use super::*;
use crate::corpus::{gen_synthetic, SynthConfig};
use crate::eval::summarize_run;
use crate::runlog::LogRecord;
use crate::tagger::TaggerConfig;

struct Fixture {
    teacher: Tagger<f64>,
    base: Tagger<f64>,
    policy: PolicyNetwork<f64>,
    unlabeled: Corpus,
    dev: Corpus,
}

fn fixture() -> Fixture {
    let synth = SynthConfig { vocab_size: 600, lexicon_size: 40, source_sentences: 60, target_sentences: 50, ..SynthConfig::default() };
    let (source, target) = gen_synthetic(&synth, 7).unwrap();
    let c = synth.scheme().num_tags();
    let tcfg = TaggerConfig { d_emb: 6, window: 1, d_h: 10, num_classes: c, vocab_buckets: 509, freeze_embeddings: false, seed: 0 };
    let teacher = Tagger::init_base(&tcfg, 1).unwrap();
    let base = Tagger::init_base(&tcfg, 2).unwrap();
    let pcfg = PolicyConfig { d_u: 4, d_z: 6, d_hidden: 8, lr: 0.05, ..PolicyConfig::default() };
    let policy = PolicyNetwork::init(&pcfg, c, 10).unwrap();
    Fixture { teacher, base, policy, unlabeled: target.strip_labels().unwrap(), dev: source }
}

fn cfg(warmup: usize, reinforced: usize) -> RikdConfig {
    RikdConfig {
        iterations: 1,
        warmup_steps: warmup,
        reinforced_steps: reinforced,
        batch_size: 8,
        student_lr: 1.0,
        policy: PolicyConfig { d_u: 4, d_z: 6, d_hidden: 8, lr: 0.05, ..PolicyConfig::default() },
        eval_every: 5,
        ..RikdConfig::default()
    }
}

fn run(f: &Fixture, c: &RikdConfig) -> IterationOutput<f64> {
    reinforced_distill_iteration(&f.teacher, &f.base, &f.policy, &f.unlabeled, c, 1, HeldOut::default()).unwrap()
}

#[test]
fn config_invariants() {
    assert!(cfg(0, 0).validate().is_err());
    assert!(RikdConfig { iterations: 0, ..cfg(1, 1) }.validate().is_err());
    assert!(RikdConfig { recalibrate_every: 0, ..cfg(1, 1) }.validate().is_err());
    assert!(RikdConfig { strategy: Strategy::Confidence { keep_ratio: 1.0 }, ..cfg(1, 1) }.validate().is_err());
    assert!(cfg(1, 0).validate().is_ok());
    assert!(cfg(0, 1).validate().is_ok());
}

#[test]
fn no_reinforced_steps_reduces_to_plain_distillation() {
    let f = fixture();
    let rl = run(&f, &cfg(12, 0));
    let full = run(&f, &RikdConfig { strategy: Strategy::Full, ..cfg(12, 0) });
    assert_eq!(rl.student, full.student);
    assert_eq!(rl.policy, f.policy);
    assert!(rl.log.steps().all(|s| s.phase == Phase::Warmup && s.kept == s.batch));
}

#[test]
fn zero_policy_rate_keeps_the_policy() {
    let f = fixture();
    let mut c = cfg(2, 10);
    c.policy.lr = 0.0;
    let out = run(&f, &c);
    assert_eq!(out.policy, f.policy);
    assert_eq!(out.log.steps().filter(|s| s.phase == Phase::Reinforced).count(), 10);
}

#[test]
fn policy_learns_and_rewards_are_logged() {
    let f = fixture();
    let out = run(&f, &cfg(3, 10));
    assert_ne!(out.policy, f.policy);
    for s in out.log.steps().filter(|s| s.phase == Phase::Reinforced && s.kept > 0) {
        assert!(s.kept <= s.batch);
        assert!(s.reward.is_some() && s.kd_loss.is_some() && s.policy_loss.is_some());
    }
}

#[test]
fn empty_selection_modes() {
    let mut f = fixture();
    f.policy.b2 = -40.0;
    let skip = run(&f, &cfg(0, 6));
    assert_eq!(skip.student.tensors(), f.base.tensors());
    assert_eq!(skip.policy, f.policy);
    assert!(skip.log.steps().all(|s| s.kept == 0 && s.reward.is_none() && s.kd_loss.is_none()));
    let summary = skip.log.iterations().next().unwrap();
    assert_eq!(summary.skipped_steps, 6);
    assert_eq!(summary.discard_ratio, Some(1.0));

    let keep = run(&f, &RikdConfig { empty_selection: EmptySelection::KeepAll, ..cfg(0, 6) });
    assert!(keep.log.steps().all(|s| s.kept == s.batch && s.reward.is_some()));
    assert_ne!(keep.student, f.base);
}

#[test]
fn paper_literal_first_reward_is_zero_without_warmup() {
    let f = fixture();
    let out = run(&f, &RikdConfig { reward_mode: RewardMode::PaperLiteral, ..cfg(0, 5) });
    let rewards: Vec<f64> = out.log.steps().filter_map(|s| s.reward).collect();
    assert_eq!(rewards[0], 0.0);
    let losses: Vec<f64> = out.log.steps().filter_map(|s| s.kd_loss).collect();
    for w in 1..losses.len().min(rewards.len()) {
        assert!((rewards[w] - (losses[w - 1] - losses[w])).abs() < 1e-15);
    }
}

#[test]
fn same_batch_reward_is_the_loss_drop_on_the_sub_batch() {
    let f = fixture();
    let out = run(&f, &cfg(0, 4));
    for s in out.log.steps().filter(|s| s.kept > 0) {
        // A small SGD step on the distillation loss should not raise it much.
        assert!(s.reward.unwrap() > -1e-3, "{s:?}");
    }
}

#[test]
fn discard_summary_matches_recomputation() {
    let f = fixture();
    let out = run(&f, &cfg(3, 15));
    let logged = out.log.iterations().next().unwrap();
    let recomputed = &summarize_run(&out.log).iterations[0];
    assert_eq!(logged.discard_ratio, recomputed.discard_ratio);
    assert_eq!(logged.pooled_discard_ratio, recomputed.pooled_discard_ratio);
    let d = logged.discard_ratio.unwrap();
    assert!((0.0..=1.0).contains(&d));
}

#[test]
fn threshold_baselines_log_selection_steps() {
    let f = fixture();
    for strategy in [Strategy::Confidence { keep_ratio: 0.6 }, Strategy::Agreement { keep_ratio: 0.6 }] {
        let out = run(&f, &RikdConfig { strategy, ..cfg(3, 12) });
        let sel: Vec<_> = out.log.steps().filter(|s| s.phase == Phase::Select).collect();
        assert_eq!(sel.len(), 12);
        assert!(sel.iter().all(|s| s.reward.is_none()));
        let d = out.log.iterations().next().unwrap().pooled_discard_ratio.unwrap();
        assert!(d > 0.1 && d < 0.7, "{strategy:?} {d}");
    }
}

#[test]
fn checkpoint_selection_prefers_best_dev_f1() {
    let f = fixture();
    let c = cfg(10, 0);
    let held = HeldOut { select: Some(&f.dev), report: Some(&f.dev) };
    let out = reinforced_distill_iteration(&f.teacher, &f.base, &f.policy, &f.unlabeled, &c, 1, held).unwrap();
    let summary = out.log.iterations().next().unwrap();
    assert!(summary.selected_step.is_multiple_of(5));
    let f1 = summary.eval_f1.unwrap();
    assert_eq!(f1, entity_f1(&f.dev, &out.student.predict_corpus(&f.dev)).unwrap().f1);
}

#[test]
fn single_iteration_rikd_matches_one_iteration() {
    let f = fixture();
    let c = cfg(4, 6);
    let one = run(&f, &c);
    let full = rikd(&f.teacher, &f.base, &f.policy, &f.unlabeled, &c, HeldOut::default(), &RikdOptions::default()).unwrap();
    assert_eq!(full.model, one.student);
    assert_eq!(full.log.to_jsonl(), one.log.to_jsonl());
}

#[test]
fn rikd_is_deterministic_and_chains_teachers() {
    let f = fixture();
    let c = RikdConfig { iterations: 2, ..cfg(3, 5) };
    let dir_a = std::env::temp_dir().join(format!("rikd-driver-a-{}", std::process::id()));
    let dir_b = std::env::temp_dir().join(format!("rikd-driver-b-{}", std::process::id()));
    let go = |dir: &std::path::Path| {
        let opts = RikdOptions { checkpoint_dir: Some(dir.to_path_buf()), ..RikdOptions::default() };
        rikd(&f.teacher, &f.base, &f.policy, &f.unlabeled, &c, HeldOut::default(), &opts).unwrap()
    };
    let (a, b) = (go(&dir_a), go(&dir_b));
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    for name in ["model_k1.ckpt", "model_k2.ckpt", "policy_k2.ckpt"] {
        assert_eq!(std::fs::read(dir_a.join(name)).unwrap(), std::fs::read(dir_b.join(name)).unwrap());
    }
    assert!(a.log.records.iter().any(|r| matches!(r, LogRecord::Iteration(s) if s.checkpoint.as_deref() == Some("model_k2.ckpt"))));

    // Iteration 2 distills from M_1; resuming from its checkpoint reproduces M_2.
    let m1 = Tagger::from_checkpoint(&crate::checkpoint::Checkpoint::load(&dir_a.join("model_k1.ckpt")).unwrap()).unwrap();
    let p1 = PolicyNetwork::from_checkpoint(&crate::checkpoint::Checkpoint::load(&dir_a.join("policy_k1.ckpt")).unwrap(), None).unwrap();
    let resumed = rikd(&m1, &f.base, &p1, &f.unlabeled, &c, HeldOut::default(), &RikdOptions { start_iteration: 2, checkpoint_dir: None }).unwrap();
    assert_eq!(resumed.model.tensors(), a.model.tensors());
    assert_eq!(resumed.models.len(), 1);
    let _ = std::fs::remove_dir_all(dir_a);
    let _ = std::fs::remove_dir_all(dir_b);
}

#[test]
fn policy_reset_uses_the_initial_policy_each_iteration() {
    let f = fixture();
    let c = RikdConfig { iterations: 2, policy_reset_per_iteration: true, ..cfg(2, 4) };
    let out = rikd(&f.teacher, &f.base, &f.policy, &f.unlabeled, &c, HeldOut::default(), &RikdOptions::default()).unwrap();
    let m1 = &out.models[0];
    let second = reinforced_distill_iteration(m1, &f.base, &f.policy, &f.unlabeled, &c, 2, HeldOut::default()).unwrap();
    assert_eq!(second.student, out.model);
}
