//! Entity-level evaluation over BIO label sequences.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusKind, LabelScheme, Tag};
use crate::error::{Error, Result};
use crate::runlog::RunLog;

/// Inclusive token range with an entity type index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: usize,
}

/// Maximal `B-t I-t*` runs. An `I-t` that does not continue a `t` span opens
/// a new one, as conlleval does.
pub fn extract_spans(labels: &[usize], scheme: &LabelScheme) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &l) in labels.iter().enumerate() {
        let continues = match (scheme.tag(l), open) {
            (Tag::Inside(t), Some((_, ty))) => t == ty,
            _ => false,
        };
        if continues {
            continue;
        }
        if let Some((start, ty)) = open.take() {
            spans.push(Span { start, end: i - 1, entity_type: ty });
        }
        match scheme.tag(l) {
            Tag::Begin(t) | Tag::Inside(t) => open = Some((i, t)),
            Tag::Outside => {}
        }
    }
    if let Some((start, ty)) = open {
        spans.push(Span { start, end: labels.len() - 1, entity_type: ty });
    }
    spans
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    fn finish(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Micro-averaged entity scores with a per-type breakdown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(flatten)]
    pub overall: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl std::ops::Deref for EvalResult {
    type Target = Counts;
    fn deref(&self) -> &Counts {
        &self.overall
    }
}

/// Scores predicted label sequences against a labeled corpus. A span counts as
/// a true positive only on an exact `(start, end, type)` match.
pub fn entity_f1(gold: &Corpus, predicted: &[Vec<usize>]) -> Result<EvalResult> {
    if gold.kind() != CorpusKind::Labeled {
        return Err(Error::Config("evaluation needs a labeled corpus".into()));
    }
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch {
            id: predicted.len().min(gold.len()),
            message: format!("{} predictions for {} sentences", predicted.len(), gold.len()),
        });
    }
    let scheme = gold.scheme();
    let types = scheme.entity_types().len();
    let (mut tp, mut fp, mut fn_) = (vec![0; types], vec![0; types], vec![0; types]);
    for (s, pred) in gold.sentences().iter().zip(predicted) {
        let labels = s.labels.as_ref().expect("labeled corpus");
        if pred.len() != labels.len() {
            return Err(Error::LengthMismatch {
                id: s.id,
                message: format!("{} predicted labels for {} tokens", pred.len(), labels.len()),
            });
        }
        let g: BTreeSet<Span> = extract_spans(labels, scheme).into_iter().collect();
        let p: BTreeSet<Span> = extract_spans(pred, scheme).into_iter().collect();
        for span in &p {
            if g.contains(span) {
                tp[span.entity_type] += 1;
            } else {
                fp[span.entity_type] += 1;
            }
        }
        for span in g.difference(&p) {
            fn_[span.entity_type] += 1;
        }
    }
    let per_type = scheme
        .entity_types()
        .iter()
        .enumerate()
        .map(|(t, name)| (name.clone(), Counts::finish(tp[t], fp[t], fn_[t])))
        .collect();
    let sum = |v: &[usize]| v.iter().sum::<usize>();
    Ok(EvalResult { overall: Counts::finish(sum(&tp), sum(&fp), sum(&fn_)), per_type })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub k: usize,
    /// Two-stage average: discard fraction per selection batch, then the mean
    /// over batches. Absent when the iteration had no selection steps.
    pub discard_ratio: Option<f64>,
    pub pooled_discard_ratio: Option<f64>,
    pub selection_steps: usize,
    pub eval_f1: Option<f64>,
    pub reward: Option<RewardStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: Vec<IterationStats>,
}

impl RunSummary {
    pub fn f1_series(&self) -> Vec<Option<f64>> {
        self.iterations.iter().map(|i| i.eval_f1).collect()
    }
}

/// Recomputes per-iteration statistics from the raw step records.
pub fn summarize_run(log: &RunLog) -> RunSummary {
    let mut ks: Vec<usize> = log.steps().map(|s| s.k).chain(log.iterations().map(|i| i.k)).collect();
    ks.sort_unstable();
    ks.dedup();
    let iterations = ks
        .into_iter()
        .map(|k| {
            let selection: Vec<_> = log.steps().filter(|s| s.k == k && s.phase.is_selection() && s.batch > 0).collect();
            let discard_ratio = (!selection.is_empty()).then(|| {
                let total: f64 = selection.iter().map(|s| (s.batch - s.kept) as f64 / s.batch as f64).sum();
                total / selection.len() as f64
            });
            let pooled_discard_ratio = (!selection.is_empty()).then(|| {
                let kept: usize = selection.iter().map(|s| s.kept).sum();
                let batch: usize = selection.iter().map(|s| s.batch).sum();
                1.0 - kept as f64 / batch as f64
            });
            let rewards: Vec<f64> = log.steps().filter(|s| s.k == k).filter_map(|s| s.reward).collect();
            let reward = (!rewards.is_empty()).then(|| {
                let n = rewards.len() as f64;
                let mean = rewards.iter().sum::<f64>() / n;
                let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
                RewardStats {
                    count: rewards.len(),
                    mean,
                    std: var.sqrt(),
                    min: rewards.iter().copied().fold(f64::INFINITY, f64::min),
                    max: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            });
            let eval_f1 = log.iterations().filter(|i| i.k == k).find_map(|i| i.eval_f1);
            IterationStats { k, discard_ratio, pooled_discard_ratio, selection_steps: selection.len(), eval_f1, reward }
        })
        .collect();
    RunSummary { iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::runlog::{Phase, StepRecord};

    fn scheme() -> LabelScheme {
        LabelScheme::conll()
    }

    fn tags(names: &[&str]) -> Vec<usize> {
        names.iter().map(|n| scheme().index_of(n).unwrap()).collect()
    }

    fn span(start: usize, end: usize, ty: &str) -> Span {
        let entity_type = scheme().entity_types().iter().position(|t| t == ty).unwrap();
        Span { start, end, entity_type }
    }

    #[test]
    fn basic_spans() {
        let s = scheme();
        assert_eq!(extract_spans(&tags(&["B-PER", "I-PER", "O", "B-LOC"]), &s), vec![span(0, 1, "PER"), span(3, 3, "LOC")]);
        assert!(extract_spans(&tags(&["O", "O", "O"]), &s).is_empty());
        assert_eq!(extract_spans(&tags(&["I-PER", "I-PER"]), &s), vec![span(0, 1, "PER")]);
        assert_eq!(extract_spans(&tags(&["B-PER", "I-LOC", "I-LOC"]), &s), vec![span(0, 0, "PER"), span(1, 2, "LOC")]);
        assert_eq!(extract_spans(&tags(&["B-PER", "B-PER"]), &s), vec![span(0, 0, "PER"), span(1, 1, "PER")]);
    }

    fn corpus(labels: Vec<Vec<usize>>) -> Corpus {
        let sentences = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| Sentence::new(i, (0..l.len()).map(|j| format!("t{j}")).collect(), Some(l)))
            .collect();
        Corpus::new(scheme(), sentences, CorpusKind::Labeled).unwrap()
    }

    #[test]
    fn perfect_empty_and_half() {
        let gold = corpus(vec![tags(&["B-PER", "I-PER", "O", "B-LOC", "O", "O"])]);
        let r = entity_f1(&gold, &gold.gold_labels()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        let r = entity_f1(&gold, &[vec![0; 6]]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));

        let pred = tags(&["B-PER", "I-PER", "O", "O", "O", "B-ORG"]);
        let r = entity_f1(&gold, &[pred]).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.per_type["PER"].f1, 1.0);
        assert_eq!(r.per_type["ORG"].fp, 1);
    }

    #[test]
    fn length_mismatch_names_the_sentence() {
        let gold = corpus(vec![tags(&["O"]), tags(&["O", "O"])]);
        let err = entity_f1(&gold, &[vec![0], vec![0]]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { id: 1, .. }));
    }

    fn step(k: usize, phase: Phase, batch: usize, kept: usize) -> StepRecord {
        StepRecord { step: 0, k, phase, batch, kept, reward: None, kd_loss: None, policy_loss: None }
    }

    #[test]
    fn discard_ratio_is_a_two_stage_average() {
        let mut log = RunLog::default();
        log.push_step(step(1, Phase::Reinforced, 4, 2));
        log.push_step(step(1, Phase::Reinforced, 4, 4));
        log.push_step(step(2, Phase::Reinforced, 4, 1));
        log.push_step(step(2, Phase::Reinforced, 8, 4));
        let s = summarize_run(&log);
        assert_eq!(s.iterations[0].discard_ratio, Some(0.25));
        assert_eq!(s.iterations[1].discard_ratio, Some(0.625));
        assert!((s.iterations[1].pooled_discard_ratio.unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn warmup_only_has_no_discard_ratio() {
        let mut log = RunLog::default();
        log.push_step(step(1, Phase::Warmup, 4, 4));
        let s = summarize_run(&log);
        assert_eq!(s.iterations[0].discard_ratio, None);
        assert_eq!(s.iterations[0].selection_steps, 0);
    }
}
