//! Iterative distillation with reinforced instance selection.
//!
//! Each outer iteration distills a fresh copy of the base initialization from
//! the previous iteration's model: `J_w` plain warm-up steps, then `J_r` steps
//! whose batches are filtered by the selection strategy before the student
//! update.

mod select;

pub use select::{
    agreement_score, agreement_select, calibrate_threshold, confidence_score, confidence_select, quantile_threshold,
    selection_scores, CorruptedTeacher, SelectionScore,
};

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{batch_iter, Batch, Corpus};
use crate::distill::{kd_batch_loss, kd_step, Teacher};
use crate::error::{Error, Result};
use crate::eval::entity_f1;
use crate::rng::derive_seed;
use crate::runlog::{IterationSummary, Phase, RunLog, StepRecord};
use crate::selector::{compute_reward, featurize, policy_update, sample_actions, PolicyConfig, PolicyNetwork, StateVector};
use crate::tagger::{LrSchedule, Tagger};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// Loss on the selected sub-batch before and after the student update.
    SameBatch,
    /// Previous step's training loss against this step's, seeded by the last
    /// warm-up step.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptySelection {
    /// No student or policy update; the step is logged with `kept = 0`.
    Skip,
    /// Distill on the whole batch and reinforce the all-keep action.
    KeepAll,
}

/// What happens to batches after warm-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Plain distillation on every batch.
    Full,
    /// Policy-sampled sub-batches.
    Reinforced,
    /// Confidence threshold calibrated to keep `keep_ratio` of the corpus.
    Confidence { keep_ratio: f64 },
    /// Agreement threshold calibrated to keep `keep_ratio` of the corpus,
    /// recalibrated against the current student every `recalibrate_every` steps.
    Agreement { keep_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RikdConfig {
    /// Outer iterations `K`.
    pub iterations: usize,
    pub warmup_steps: usize,
    pub reinforced_steps: usize,
    pub batch_size: usize,
    pub student_lr: f64,
    pub student_schedule: LrSchedule,
    pub policy: PolicyConfig,
    /// Checkpoint-selection period in steps (the final step is always a candidate).
    pub eval_every: usize,
    /// Period in steps for refreshing the agreement threshold, whose scores
    /// move with the student.
    pub recalibrate_every: usize,
    pub reward_mode: RewardMode,
    pub empty_selection: EmptySelection,
    pub policy_reset_per_iteration: bool,
    pub strategy: Strategy,
    /// Batching and action-sampling streams derive from this seed.
    pub seed: u64,
}

impl Default for RikdConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            warmup_steps: 200,
            reinforced_steps: 800,
            batch_size: 32,
            student_lr: 2.0,
            student_schedule: LrSchedule::Constant,
            policy: PolicyConfig::default(),
            eval_every: 100,
            recalibrate_every: 20,
            reward_mode: RewardMode::SameBatch,
            empty_selection: EmptySelection::Skip,
            policy_reset_per_iteration: false,
            strategy: Strategy::Reinforced,
            seed: 0,
        }
    }
}

impl RikdConfig {
    pub fn total_steps(&self) -> usize {
        self.warmup_steps + self.reinforced_steps
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if self.total_steps() == 0 {
            return Err(Error::Config("warm-up plus reinforced steps must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.recalibrate_every == 0 {
            return Err(Error::Config("batch_size, eval_every and recalibrate_every must be at least 1".into()));
        }
        if !(self.student_lr.is_finite() && self.student_lr >= 0.0) {
            return Err(Error::Config(format!("student learning rate {}", self.student_lr)));
        }
        if let Strategy::Confidence { keep_ratio } | Strategy::Agreement { keep_ratio } = self.strategy {
            if !(keep_ratio > 0.0 && keep_ratio < 1.0) {
                return Err(Error::Config(format!("keep ratio {keep_ratio} is outside (0, 1)")));
            }
        }
        self.policy.validate()
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.student_schedule {
            LrSchedule::Constant => self.student_lr,
            LrSchedule::Linear => self.student_lr * (1.0 - step as f64 / self.total_steps() as f64),
        }
    }
}

/// Labeled corpora consulted during distillation. Neither guides training.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeldOut<'a> {
    /// Picks the best intermediate student of each iteration (entity F1,
    /// earliest on ties). Without it the final student is kept.
    pub select: Option<&'a Corpus>,
    /// Scored once per iteration on the kept student, for reporting only.
    pub report: Option<&'a Corpus>,
}

#[derive(Debug, Clone)]
pub struct IterationOutput<T> {
    pub student: Tagger<T>,
    pub policy: PolicyNetwork<T>,
    pub log: RunLog,
}

/// Running two-stage and pooled discard statistics.
#[derive(Debug, Default)]
struct DiscardTally {
    fraction_sum: f64,
    steps: usize,
    kept: usize,
    seen: usize,
}

impl DiscardTally {
    fn push(&mut self, batch: usize, kept: usize) {
        if batch == 0 {
            return;
        }
        self.fraction_sum += (batch - kept) as f64 / batch as f64;
        self.steps += 1;
        self.kept += kept;
        self.seen += batch;
    }

    fn two_stage(&self) -> Option<f64> {
        (self.steps > 0).then(|| self.fraction_sum / self.steps as f64)
    }

    fn pooled(&self) -> Option<f64> {
        (self.steps > 0).then(|| 1.0 - self.kept as f64 / self.seen as f64)
    }
}

struct Candidate<T> {
    step: usize,
    f1: f64,
    model: Tagger<T>,
}

fn non_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, loss })
    }
}

/// One outer iteration: distills a copy of `base` from `teacher`.
///
/// `k` labels the log records and seeds this iteration's batch order and
/// action sampling. The teacher is never modified.
pub fn reinforced_distill_iteration<T: Scalar>(
    teacher: &dyn Teacher<T>,
    base: &Tagger<T>,
    policy: &PolicyNetwork<T>,
    unlabeled: &Corpus,
    cfg: &RikdConfig,
    k: usize,
    held_out: HeldOut<'_>,
) -> Result<IterationOutput<T>> {
    cfg.validate()?;
    if teacher.num_classes() != base.num_classes() || unlabeled.scheme().num_tags() != base.num_classes() {
        return Err(Error::SchemeMismatch(format!(
            "teacher {} classes, student {}, corpus {} tags",
            teacher.num_classes(),
            base.num_classes(),
            unlabeled.scheme().num_tags()
        )));
    }
    let mut batches = batch_iter(unlabeled, cfg.batch_size, derive_seed(cfg.seed, 1000 + k as u64))?;
    let mut action_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2000 + k as u64));
    let mut student = base.clone();
    student.role = "student".into();
    let mut policy = policy.clone();
    let mut log = RunLog::default();
    let mut tally = DiscardTally::default();
    let mut skipped = 0;
    let mut best: Option<Candidate<T>> = None;
    let mut last_loss: Option<T> = None;
    let mut threshold: Option<(SelectionScore, T)> = None;
    let total = cfg.total_steps();

    for step in 1..=total {
        let batch = batches.next().expect("batch stream is endless");
        let lr = T::lit(cfg.lr_at(step - 1));
        let warm = step <= cfg.warmup_steps;
        let stale = match (cfg.strategy, threshold) {
            (_, None) => true,
            (Strategy::Agreement { .. }, Some(_)) => (step - cfg.warmup_steps - 1).is_multiple_of(cfg.recalibrate_every),
            _ => false,
        };
        if !warm && stale {
            threshold = match cfg.strategy {
                Strategy::Confidence { keep_ratio } => Some((
                    SelectionScore::Confidence,
                    calibrate_threshold(SelectionScore::Confidence, teacher, &student, unlabeled, keep_ratio)?,
                )),
                Strategy::Agreement { keep_ratio } => Some((
                    SelectionScore::Agreement,
                    calibrate_threshold(SelectionScore::Agreement, teacher, &student, unlabeled, keep_ratio)?,
                )),
                _ => None,
            };
        }
        let record = |phase, kept, reward: Option<T>, kd: Option<T>, pl: Option<T>| StepRecord {
            step,
            k,
            phase,
            batch: batch.len(),
            kept,
            reward: reward.map(T::as_f64),
            kd_loss: kd.map(T::as_f64),
            policy_loss: pl.map(T::as_f64),
        };

        let strategy = if warm { Strategy::Full } else { cfg.strategy };
        match strategy {
            Strategy::Full => {
                let (loss, next) = kd_step(teacher, &student, &batch, lr)?;
                non_finite(step, loss.as_f64())?;
                student = next;
                last_loss = Some(loss);
                let phase = if warm { Phase::Warmup } else { Phase::Full };
                log.push_step(record(phase, batch.len(), None, Some(loss), None));
            }
            Strategy::Confidence { .. } | Strategy::Agreement { .. } => {
                let (which, thr) = threshold.expect("calibrated after warm-up");
                let sub = match which {
                    SelectionScore::Confidence => confidence_select(teacher, &batch, thr),
                    SelectionScore::Agreement => agreement_select(teacher, &student, &batch, thr),
                };
                let sub = match (sub.is_empty(), cfg.empty_selection) {
                    (true, EmptySelection::Skip) => {
                        tally.push(batch.len(), 0);
                        skipped += 1;
                        log.push_step(record(Phase::Select, 0, None, None, None));
                        continue_eval(&mut best, &student, step, cfg, held_out)?;
                        continue;
                    }
                    (true, EmptySelection::KeepAll) => batch.clone(),
                    (false, _) => sub,
                };
                let (loss, next) = kd_step(teacher, &student, &sub, lr)?;
                non_finite(step, loss.as_f64())?;
                student = next;
                last_loss = Some(loss);
                tally.push(batch.len(), sub.len());
                log.push_step(record(Phase::Select, sub.len(), None, Some(loss), None));
            }
            Strategy::Reinforced => {
                let states = batch
                    .sentences
                    .par_iter()
                    .map(|x| featurize(teacher, &student, &policy, x))
                    .collect::<Result<Vec<StateVector<T>>>>()?;
                if policy.config.standardize_scalars {
                    policy.observe(&states);
                }
                let mut actions = sample_actions(&policy, &states, &mut action_rng)?.actions;
                let mut kept = actions.iter().filter(|&&a| a).count();
                if kept == 0 {
                    match cfg.empty_selection {
                        EmptySelection::Skip => {
                            tally.push(batch.len(), 0);
                            skipped += 1;
                            log.push_step(record(Phase::Reinforced, 0, None, None, None));
                            continue_eval(&mut best, &student, step, cfg, held_out)?;
                            continue;
                        }
                        EmptySelection::KeepAll => {
                            actions.iter_mut().for_each(|a| *a = true);
                            kept = batch.len();
                        }
                    }
                }
                let sub: Batch<'_> = batch.select(&actions);
                let (loss_before, next) = kd_step(teacher, &student, &sub, lr)?;
                non_finite(step, loss_before.as_f64())?;
                let (prev, curr) = match cfg.reward_mode {
                    RewardMode::SameBatch => (loss_before, kd_batch_loss(teacher, &next, &sub)?.mean),
                    RewardMode::PaperLiteral => (last_loss.unwrap_or(loss_before), loss_before),
                };
                last_loss = Some(loss_before);
                let reward = compute_reward(prev, curr);
                let (updated, policy_loss) = policy_update(&policy, &states, &actions, reward, T::lit(cfg.policy.lr))?;
                policy = updated;
                student = next;
                tally.push(batch.len(), kept);
                log.push_step(record(Phase::Reinforced, kept, Some(reward), Some(loss_before), Some(policy_loss)));
            }
        }
        continue_eval(&mut best, &student, step, cfg, held_out)?;
    }

    let (selected_step, mut student) = match best {
        Some(c) => (c.step, c.model),
        None => (total, student),
    };
    student.role = "student".into();
    let eval_f1 = match held_out.report {
        Some(c) => Some(entity_f1(c, &student.predict_corpus(c))?.f1),
        None => None,
    };
    log.push_iteration(IterationSummary {
        summary: "iteration".into(),
        k,
        discard_ratio: tally.two_stage(),
        pooled_discard_ratio: tally.pooled(),
        skipped_steps: skipped,
        selected_step,
        checkpoint: None,
        eval_f1,
    });
    Ok(IterationOutput { student, policy, log })
}

fn continue_eval<T: Scalar>(
    best: &mut Option<Candidate<T>>,
    student: &Tagger<T>,
    step: usize,
    cfg: &RikdConfig,
    held_out: HeldOut<'_>,
) -> Result<()> {
    let Some(dev) = held_out.select else { return Ok(()) };
    if !step.is_multiple_of(cfg.eval_every) && step != cfg.total_steps() {
        return Ok(());
    }
    let f1 = entity_f1(dev, &student.predict_corpus(dev))?.f1;
    if best.as_ref().is_none_or(|b| f1 > b.f1) {
        *best = Some(Candidate { step, f1, model: student.clone() });
    }
    Ok(())
}

/// Where [`rikd`] starts and what it writes.
#[derive(Debug, Clone, Default)]
pub struct RikdOptions {
    /// First iteration to run (1-based); the `teacher` passed in is then
    /// `M_{start − 1}`. Zero is treated as 1.
    pub start_iteration: usize,
    /// When set, `model_k{k}.ckpt` and `policy_k{k}.ckpt` are written here.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RikdOutput<T> {
    /// `M_K`.
    pub model: Tagger<T>,
    pub policy: PolicyNetwork<T>,
    /// `M_start ..= M_K`.
    pub models: Vec<Tagger<T>>,
    pub log: RunLog,
}

/// Runs iterations `start ..= K`, each distilling a fresh copy of `base` from
/// the previous iteration's kept model. `teacher` serves only the first of
/// them.
pub fn rikd<T: Scalar>(
    teacher: &dyn Teacher<T>,
    base: &Tagger<T>,
    policy: &PolicyNetwork<T>,
    unlabeled: &Corpus,
    cfg: &RikdConfig,
    held_out: HeldOut<'_>,
    options: &RikdOptions,
) -> Result<RikdOutput<T>> {
    cfg.validate()?;
    let start = options.start_iteration.max(1);
    if start > cfg.iterations {
        return Err(Error::Config(format!("start iteration {start} exceeds K = {}", cfg.iterations)));
    }
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut current: Option<Tagger<T>> = None;
    let mut current_policy = policy.clone();
    let mut models = Vec::new();
    let mut log = RunLog::default();
    for k in start..=cfg.iterations {
        let input_policy = if cfg.policy_reset_per_iteration { policy } else { &current_policy };
        let t: &dyn Teacher<T> = match &current {
            Some(m) => m,
            None => teacher,
        };
        let mut out = reinforced_distill_iteration(t, base, input_policy, unlabeled, cfg, k, held_out)?;
        if let Some(dir) = &options.checkpoint_dir {
            let name = format!("model_k{k}.ckpt");
            let mut ckpt = out.student.to_checkpoint();
            ckpt.set_meta("iteration", k);
            ckpt.save(&dir.join(&name))?;
            let mut pckpt = out.policy.to_checkpoint();
            pckpt.set_meta("iteration", k);
            pckpt.save(&dir.join(format!("policy_k{k}.ckpt")))?;
            for rec in out.log.records.iter_mut() {
                if let crate::runlog::LogRecord::Iteration(s) = rec {
                    s.checkpoint = Some(name.clone());
                }
            }
        }
        log.extend(out.log);
        models.push(out.student.clone());
        current = Some(out.student);
        current_policy = out.policy;
    }
    let model = current.expect("at least one iteration ran");
    Ok(RikdOutput { model, policy: current_policy, models, log })
}

#[cfg(test)]
mod tests;
