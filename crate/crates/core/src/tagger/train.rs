use super::grad::cross_entropy_dlogits;
use super::{Tagger, TaggerGrads};
use crate::corpus::{batch_iter, Corpus, CorpusKind};
use crate::error::{Error, Result};
use crate::eval::entity_f1;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Decays linearly from the base rate to zero over the run.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Dev evaluation period in steps; the final step is always evaluated.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 0.5, schedule: LrSchedule::Constant, epochs: 5, batch_size: 32, eval_every: 100, seed: 0 }
    }
}

impl OptimizerConfig {
    /// Learning rate for the 0-based `step` of a `total`-step run.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Linear => self.lr * (1.0 - step as f64 / total.max(1) as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: usize,
    /// Mean token cross-entropy per step.
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub best_step: Option<usize>,
    pub best_f1: Option<f64>,
}

/// Supervised training on source-language gold labels with minibatch SGD on
/// mean token cross-entropy.
///
/// Dev entity F1 is measured every `eval_every` steps and after the last one;
/// the best checkpoint wins, ties going to the earliest. With zero epochs the
/// input model is returned unchanged.
pub fn train_source<T: Scalar>(
    model: &Tagger<T>,
    train: &Corpus,
    dev: &Corpus,
    opt: &OptimizerConfig,
) -> Result<(Tagger<T>, TrainLog)> {
    for c in [train, dev] {
        if c.kind() != CorpusKind::Labeled {
            return Err(Error::Config("source training needs labeled corpora".into()));
        }
        if c.scheme().num_tags() != model.num_classes() {
            return Err(Error::SchemeMismatch(format!(
                "corpus has {} tags, model has {} classes",
                c.scheme().num_tags(),
                model.num_classes()
            )));
        }
    }
    let mut log = TrainLog::default();
    if opt.epochs == 0 {
        return Ok((model.clone(), log));
    }
    if opt.eval_every == 0 {
        return Err(Error::Config("eval_every must be at least 1".into()));
    }
    let mut batches = batch_iter(train, opt.batch_size, opt.seed)?;
    let total = opt.epochs * batches.batches_per_epoch();
    let mut current = model.clone();
    let mut best: Option<(f64, Tagger<T>)> = None;

    for step in 0..total {
        let batch = batches.next().expect("batch stream is endless");
        let tokens: usize = batch.sentences.iter().map(|s| s.len()).sum();
        let scale = T::one() / T::lit(tokens as f64);
        let mut grads = TaggerGrads::zeros_like(&current);
        let mut nll = T::zero();
        for s in &batch.sentences {
            let fwd = current.forward(s);
            let labels = s.labels.as_ref().expect("labeled corpus");
            let (sum, dlogits) = cross_entropy_dlogits(&fwd.probs, labels, scale);
            nll += sum;
            current.backward(&fwd, &dlogits, &mut grads);
        }
        let loss = (nll * scale).as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        log.losses.push(loss);
        current.apply_gradients(&grads, T::lit(opt.lr_at(step, total)))?;

        let done = step + 1;
        if done % opt.eval_every == 0 || done == total {
            let f1 = entity_f1(dev, &current.predict_corpus(dev))?.f1;
            log.evals.push(EvalPoint { step: done, f1 });
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                log.best_step = Some(done);
                log.best_f1 = Some(f1);
                best = Some((f1, current.clone()));
            }
        }
    }
    log.steps = total;
    let (_, mut model) = best.expect("at least one evaluation");
    model.role = "source".into();
    Ok((model, log))
}
