use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grad::cross_entropy_dlogits;
use super::{Tagger, TaggerGrads};
use crate::corpus::Sentence;
use crate::distill::{check_classes, kd_dlogits, kd_loss_from_probs, Teacher};
use crate::error::{Error, Result};
use crate::Scalar;

/// Tensors larger than this are checked on a seeded sample of coordinates.
const FULL_CHECK_LIMIT: usize = 4096;
const SAMPLED_COORDS: usize = 256;

/// Which sentence loss to differentiate.
#[derive(Clone, Copy)]
pub enum LossSelector<'a, T: Scalar> {
    /// Mean token cross-entropy against the sentence's gold labels.
    CrossEntropy,
    /// Distillation loss against a fixed teacher.
    Kd(&'a dyn Teacher<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorCheck>,
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("finite-difference epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

/// Sentence loss and its analytic gradient.
pub fn loss_and_grads<T: Scalar>(
    model: &Tagger<T>,
    sentence: &Sentence,
    loss: LossSelector<'_, T>,
) -> Result<(T, TaggerGrads<T>)> {
    let fwd = model.forward(sentence);
    let len = T::lit(sentence.len() as f64);
    let (value, dlogits) = match loss {
        LossSelector::CrossEntropy => {
            let labels = sentence
                .labels
                .as_ref()
                .ok_or_else(|| Error::Config("cross-entropy needs a labeled sentence".into()))?;
            let (nll, d) = cross_entropy_dlogits(&fwd.probs, labels, T::one() / len);
            (nll / len, d)
        }
        LossSelector::Kd(teacher) => {
            check_classes(teacher, model)?;
            let target = teacher.probs(sentence);
            (kd_loss_from_probs(&target, &fwd.probs), kd_dlogits(&target, &fwd.probs, T::one()))
        }
    };
    let mut grads = TaggerGrads::zeros_like(model);
    model.backward(&fwd, &dlogits, &mut grads);
    Ok((value, grads))
}

fn loss_value<T: Scalar>(model: &Tagger<T>, sentence: &Sentence, loss: LossSelector<'_, T>) -> T {
    let probs = model.predict_probs(sentence);
    match loss {
        LossSelector::CrossEntropy => {
            let labels = sentence.labels.as_ref().expect("checked in loss_and_grads");
            let nll: T = labels.iter().enumerate().map(|(i, &y)| -probs.get(i, y).ln()).sum();
            nll / T::lit(sentence.len() as f64)
        }
        LossSelector::Kd(teacher) => kd_loss_from_probs(&teacher.probs(sentence), &probs),
    }
}

/// Compares analytic gradients with central finite differences.
///
/// Small tensors are checked on every coordinate. Large tensors are checked on
/// a seeded sample; for the embedding table every coordinate of the rows the
/// sentence touches is checked as well.
pub fn grad_check<T: Scalar>(
    model: &Tagger<T>,
    sentence: &Sentence,
    loss: LossSelector<'_, T>,
    epsilon: f64,
) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let (_, grads) = loss_and_grads(model, sentence, loss)?;
    let eps = T::lit(epsilon);
    let mut probe = model.clone();
    let active_rows: BTreeSet<usize> = model.window_ids(sentence).into_iter().collect();
    let mut tensors = Vec::new();
    for (t, (name, values)) in model.tensors().into_iter().enumerate() {
        let analytic = grads.dense(name, model);
        let coords: Vec<usize> = if values.len() <= FULL_CHECK_LIMIT {
            (0..values.len()).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ t as u64);
            let mut set: BTreeSet<usize> = sample(&mut rng, values.len(), SAMPLED_COORDS).into_iter().collect();
            if name == "embedding" {
                let d = model.config.d_emb;
                set.extend(active_rows.iter().flat_map(|&r| r * d..(r + 1) * d));
            }
            set.into_iter().collect()
        };
        let mut worst = 0.0f64;
        for &k in &coords {
            let original = values[k];
            let set = |probe: &mut Tagger<T>, v: T| probe.tensors_mut()[t].1[k] = v;
            set(&mut probe, original + eps);
            let up = loss_value(&probe, sentence, loss);
            set(&mut probe, original - eps);
            let down = loss_value(&probe, sentence, loss);
            set(&mut probe, original);
            let numeric = (up - down).as_f64() / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[k].as_f64(), numeric));
        }
        tensors.push(TensorCheck { name: name.into(), coords: coords.len(), max_rel_error: worst });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::TaggerConfig;

    fn cfg() -> TaggerConfig {
        TaggerConfig { d_emb: 8, window: 1, d_h: 16, num_classes: 9, vocab_buckets: 512, freeze_embeddings: false, seed: 0 }
    }

    fn sentence() -> Sentence {
        let tokens: Vec<String> = "the EU rejects German call to boycott British lamb".split(' ').map(String::from).collect();
        Sentence::new(0, tokens, Some(vec![0, 5, 0, 7, 0, 0, 0, 7, 0]))
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn epsilon_out_of_range_is_rejected() {
        let m = Tagger::<f64>::init_base(&cfg(), 1).unwrap();
        assert!(grad_check(&m, &sentence(), LossSelector::CrossEntropy, 1e-2).is_err());
        assert!(grad_check(&m, &sentence(), LossSelector::CrossEntropy, 1e-9).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let m = Tagger::<f64>::init_base(&cfg(), 1).unwrap();
        let report = grad_check(&m, &sentence(), LossSelector::CrossEntropy, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn kd_gradient_matches_finite_differences() {
        let teacher = Tagger::<f64>::init_base(&cfg(), 2).unwrap();
        let student = Tagger::<f64>::init_base(&cfg(), 3).unwrap();
        let report = grad_check(&student, &sentence(), LossSelector::Kd(&teacher), 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn frozen_embedding_coordinates_have_zero_gradient_and_zero_error() {
        let mut m = Tagger::<f64>::init_base(&cfg(), 1).unwrap();
        m.config.freeze_embeddings = true;
        let (_, grads) = loss_and_grads(&m, &sentence(), LossSelector::CrossEntropy).unwrap();
        assert!(grads.embedding.is_empty());
        // rows outside the sentence window never influence the loss
        let report = grad_check(&Tagger::<f64>::init_base(&cfg(), 1).unwrap(), &sentence(), LossSelector::CrossEntropy, 1e-5).unwrap();
        let emb = report.tensors.iter().find(|t| t.name == "embedding").unwrap();
        assert!(emb.coords > 200);
    }
}
