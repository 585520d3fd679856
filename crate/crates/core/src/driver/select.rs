//! Threshold baselines and a noise-injecting teacher wrapper.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Batch, Corpus, Sentence};
use crate::distill::{kd_loss_from_probs, Teacher};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, fnv1a64, unit_interval};
use crate::tagger::{ProbSeq, Tagger};
use crate::Scalar;

/// Per-sentence score a threshold baseline filters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionScore {
    /// Mean over tokens of the teacher's top probability.
    Confidence,
    /// Negative teacher–student distillation loss.
    Agreement,
}

pub fn confidence_score<T: Scalar>(teacher: &dyn Teacher<T>, x: &Sentence) -> T {
    let p = teacher.probs(x);
    let total: T = (0..p.rows()).map(|i| p.row(i).iter().copied().fold(T::zero(), T::max)).sum();
    total / T::lit(p.rows() as f64)
}

pub fn agreement_score<T: Scalar>(teacher: &dyn Teacher<T>, student: &Tagger<T>, x: &Sentence) -> T {
    -kd_loss_from_probs(&teacher.probs(x), &student.predict_probs(x))
}

fn score<T: Scalar>(which: SelectionScore, teacher: &dyn Teacher<T>, student: &Tagger<T>, x: &Sentence) -> T {
    match which {
        SelectionScore::Confidence => confidence_score(teacher, x),
        SelectionScore::Agreement => agreement_score(teacher, student, x),
    }
}

/// Keeps sentences whose confidence is strictly above `threshold`.
pub fn confidence_select<'a, T: Scalar>(teacher: &dyn Teacher<T>, batch: &Batch<'a>, threshold: T) -> Batch<'a> {
    let keep: Vec<bool> = batch.sentences.iter().map(|s| confidence_score(teacher, s) > threshold).collect();
    batch.select(&keep)
}

/// Keeps sentences whose agreement is strictly above `threshold`.
pub fn agreement_select<'a, T: Scalar>(
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    batch: &Batch<'a>,
    threshold: T,
) -> Batch<'a> {
    let keep: Vec<bool> = batch.sentences.iter().map(|s| agreement_score(teacher, student, s) > threshold).collect();
    batch.select(&keep)
}

/// Threshold below which a `1 − keep_ratio` share of `scores` falls, for use
/// with a strict `>` filter.
///
/// With `m = n − round(keep_ratio · n)` sentences to drop, the threshold is
/// the midpoint of the `m`-th and `(m+1)`-th smallest scores; with nothing to
/// drop it sits below the minimum, and with everything to drop it is the
/// maximum.
pub fn quantile_threshold<T: Scalar>(scores: &[T], keep_ratio: f64) -> Result<T> {
    if !(keep_ratio > 0.0 && keep_ratio < 1.0) {
        return Err(Error::Config(format!("keep ratio {keep_ratio} is outside (0, 1)")));
    }
    if scores.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Config(format!("non-finite selection score {bad}")));
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = s.len();
    let (lo, hi) = (s[0], s[n - 1]);
    if lo == hi {
        return Err(Error::DegenerateScores { value: lo.as_f64() });
    }
    let drop = n - (keep_ratio * n as f64).round() as usize;
    let half = T::lit(0.5);
    Ok(match drop {
        0 => {
            let next = s.iter().copied().find(|&v| v > lo).expect("not degenerate");
            lo - half * (next - lo)
        }
        m if m == n => hi,
        m => half * (s[m - 1] + s[m]),
    })
}

pub fn selection_scores<T: Scalar>(
    which: SelectionScore,
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    corpus: &Corpus,
) -> Vec<T> {
    use rayon::prelude::*;
    corpus.sentences().par_iter().map(|x| score(which, teacher, student, x)).collect()
}

/// Threshold keeping about `keep_ratio` of `corpus` under the given score.
/// The student is only consulted for [`SelectionScore::Agreement`].
pub fn calibrate_threshold<T: Scalar>(
    which: SelectionScore,
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    corpus: &Corpus,
    keep_ratio: f64,
) -> Result<T> {
    quantile_threshold(&selection_scores(which, teacher, student, corpus), keep_ratio)
}

/// Teacher whose output is replaced by random noise on a fixed, seeded subset
/// of sentences.
///
/// Whether a sentence is corrupted depends only on its tokens and the seed, so
/// the same sentence is always corrupted the same way. On a corrupted sentence
/// every token distribution is drawn uniformly from the probability simplex.
pub struct CorruptedTeacher<'a, T: Scalar> {
    pub inner: &'a dyn Teacher<T>,
    pub fraction: f64,
    pub seed: u64,
}

impl<'a, T: Scalar> CorruptedTeacher<'a, T> {
    pub fn new(inner: &'a dyn Teacher<T>, fraction: f64, seed: u64) -> Self {
        Self { inner, fraction, seed }
    }

    fn sentence_hash(x: &Sentence) -> u64 {
        fnv1a64(x.tokens.join("\u{1f}").as_bytes())
    }

    pub fn is_corrupted(&self, x: &Sentence) -> bool {
        unit_interval(derive_seed(self.seed, Self::sentence_hash(x))) < self.fraction
    }
}

impl<T: Scalar> Teacher<T> for CorruptedTeacher<'_, T> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn probs(&self, x: &Sentence) -> ProbSeq<T> {
        if !self.is_corrupted(x) {
            return self.inner.probs(x);
        }
        let c = self.num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed ^ 0x5eed, Self::sentence_hash(x)));
        let mut m = Matrix::zeros(x.len(), c);
        for i in 0..x.len() {
            // Normalized Exp(1) draws are Dirichlet(1, .., 1).
            let draws: Vec<f64> = (0..c).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = draws.iter().sum();
            for (v, d) in m.row_mut(i).iter_mut().zip(&draws) {
                *v = T::lit(d / total);
            }
        }
        ProbSeq(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusKind, LabelScheme};
    use crate::tagger::TaggerConfig;

    struct Fixed(Vec<Vec<f64>>);

    impl Teacher<f64> for Fixed {
        fn num_classes(&self) -> usize {
            self.0[0].len()
        }
        fn probs(&self, x: &Sentence) -> ProbSeq<f64> {
            ProbSeq(Matrix::from_rows(&self.0[..x.len()]))
        }
    }

    fn sent(id: usize, n: usize) -> Sentence {
        Sentence::new(id, (0..n).map(|i| format!("w{id}_{i}")).collect(), None)
    }

    fn tagger(seed: u64) -> Tagger<f64> {
        let cfg = TaggerConfig { d_emb: 4, window: 1, d_h: 6, num_classes: 9, vocab_buckets: 97, freeze_embeddings: false, seed };
        Tagger::init_base(&cfg, seed).unwrap()
    }

    #[test]
    fn confidence_hand_case_and_bounds() {
        let t = Fixed(vec![vec![0.9, 0.1, 0.0], vec![0.3, 0.7, 0.0]]);
        let x = sent(0, 2);
        assert!((confidence_score(&t, &x) - 0.8).abs() < 1e-15);
        let b = Batch::new(vec![&x]);
        assert_eq!(confidence_select(&t, &b, 0.75).len(), 1);
        assert_eq!(confidence_select(&t, &b, 1.0).len(), 0);

        let sharp = Fixed(vec![vec![0.0, 1.0, 0.0]; 3]);
        let y = sent(1, 3);
        assert_eq!(confidence_select(&sharp, &Batch::new(vec![&y]), 0.999).len(), 1);
        let real = tagger(3);
        let xs: Vec<Sentence> = (0..5).map(|i| sent(i, 4)).collect();
        let b = Batch::new(xs.iter().collect());
        assert_eq!(confidence_select(&real, &b, 0.0).len(), 5);
    }

    #[test]
    fn agreement_boundaries_and_brute_force() {
        let t = tagger(1);
        let xs: Vec<Sentence> = (0..12).map(|i| sent(i, 2 + i % 5)).collect();
        let b = Batch::new(xs.iter().collect());
        assert_eq!(agreement_select(&t, &t, &b, -1e-9).len(), 12);
        assert_eq!(agreement_select(&t, &t, &b, 0.0).len(), 0);

        let s = tagger(2);
        let threshold = -0.0025;
        let kept: Vec<usize> = agreement_select(&t, &s, &b, threshold).sentences.iter().map(|x| x.id).collect();
        let expected: Vec<usize> = xs
            .iter()
            .filter(|x| {
                let (pt, ps) = (t.predict_probs(x), s.predict_probs(x));
                let mut total = 0.0;
                for i in 0..x.len() {
                    total += (0..9).map(|j| (pt.get(i, j) - ps.get(i, j)).powi(2)).sum::<f64>() / 9.0;
                }
                -(total / x.len() as f64) > threshold
            })
            .map(|x| x.id)
            .collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn quantile_threshold_cases() {
        let t = quantile_threshold(&[0.3, 0.1, 0.4, 0.2], 0.5).unwrap();
        assert!(t > 0.2 && t < 0.3);
        let scores = [0.3, 0.1, 0.4, 0.2];
        assert_eq!(scores.iter().filter(|&&s| s > t).count(), 2);
        assert!(quantile_threshold(&scores, 1.0 - 1e-9).unwrap() < 0.1);
        assert!(quantile_threshold(&scores, 1e-9).unwrap() >= 0.4);
        assert!(matches!(quantile_threshold(&[0.5; 4], 0.5), Err(Error::DegenerateScores { .. })));
        assert!(quantile_threshold(&scores, 1.0).is_err());
        assert!(quantile_threshold(&scores, 0.0).is_err());
    }

    #[test]
    fn calibration_hits_target_keep_ratio() {
        let scheme = LabelScheme::conll();
        let xs: Vec<Sentence> = (0..400).map(|i| sent(i, 2 + i % 9)).collect();
        let corpus = Corpus::new(scheme, xs, CorpusKind::Unlabeled).unwrap();
        let (t, s) = (tagger(5), tagger(6));
        for which in [SelectionScore::Confidence, SelectionScore::Agreement] {
            for keep in [0.2, 0.614, 0.9] {
                let thr = calibrate_threshold(which, &t, &s, &corpus, keep).unwrap();
                let kept = selection_scores(which, &t, &s, &corpus).iter().filter(|&&v| v > thr).count();
                assert!((kept as f64 / 400.0 - keep).abs() <= 0.02, "{which:?} {keep} {kept}");
            }
        }
    }

    #[test]
    fn corruption_is_seeded_and_sentence_level() {
        let base = tagger(4);
        let noisy = CorruptedTeacher::new(&base, 0.2, 11);
        let xs: Vec<Sentence> = (0..2000).map(|i| sent(i, 3)).collect();
        let hit = xs.iter().filter(|x| noisy.is_corrupted(x)).count();
        assert!((hit as f64 / 2000.0 - 0.2).abs() < 0.03, "{hit}");
        for x in xs.iter().take(50) {
            let p = noisy.probs(x);
            assert_eq!(p, noisy.probs(x));
            if noisy.is_corrupted(x) {
                assert_ne!(p, base.predict_probs(x));
                for i in 0..p.rows() {
                    assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(p.row(i).iter().all(|&v| v > 0.0));
                }
            } else {
                assert_eq!(p, base.predict_probs(x));
            }
        }
    }
}
