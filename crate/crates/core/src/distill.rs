//! Token-level MSE distillation between a frozen teacher and a student.
//!
//! The per-token error is the mean over the `c` classes of squared
//! probability differences; a sentence averages its tokens and a batch
//! averages its sentences.

use crate::corpus::{Batch, Sentence};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tagger::grad::softmax_backward;
use crate::tagger::{ProbSeq, Tagger, TaggerGrads};
use crate::Scalar;

/// Anything that produces per-token label distributions for a sentence.
/// Teachers are read-only during distillation.
pub trait Teacher<T: Scalar>: Sync {
    fn num_classes(&self) -> usize;
    fn probs(&self, sentence: &Sentence) -> ProbSeq<T>;
}

impl<T: Scalar> Teacher<T> for Tagger<T> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn probs(&self, sentence: &Sentence) -> ProbSeq<T> {
        self.predict_probs(sentence)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdLossBreakdown<T> {
    pub per_sentence: Vec<T>,
    pub mean: T,
    pub tokens: usize,
}

pub fn token_mse<T: Scalar>(a: &[T], b: &[T]) -> T {
    let sq: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    sq / T::lit(a.len() as f64)
}

/// `(1/L) Σ_i MSE(teacher_i, student_i)` over two probability matrices.
pub fn kd_loss_from_probs<T: Scalar>(teacher: &Matrix<T>, student: &Matrix<T>) -> T {
    let total: T = (0..teacher.rows()).map(|i| token_mse(teacher.row(i), student.row(i))).sum();
    total / T::lit(teacher.rows() as f64)
}

pub(crate) fn check_classes<T: Scalar>(teacher: &dyn Teacher<T>, student: &Tagger<T>) -> Result<()> {
    if teacher.num_classes() != student.num_classes() {
        return Err(Error::SchemeMismatch(format!(
            "teacher has {} classes, student has {}",
            teacher.num_classes(),
            student.num_classes()
        )));
    }
    Ok(())
}

pub fn kd_sentence_loss<T: Scalar>(teacher: &dyn Teacher<T>, student: &Tagger<T>, x: &Sentence) -> Result<T> {
    check_classes(teacher, student)?;
    Ok(kd_loss_from_probs(&teacher.probs(x), &student.predict_probs(x)))
}

pub fn kd_batch_loss<T: Scalar>(
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    batch: &Batch<'_>,
) -> Result<KdLossBreakdown<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_sentence = batch
        .sentences
        .iter()
        .map(|s| kd_sentence_loss(teacher, student, s))
        .collect::<Result<Vec<T>>>()?;
    Ok(breakdown(per_sentence, batch))
}

fn breakdown<T: Scalar>(per_sentence: Vec<T>, batch: &Batch<'_>) -> KdLossBreakdown<T> {
    let mean = per_sentence.iter().copied().sum::<T>() / T::lit(per_sentence.len() as f64);
    KdLossBreakdown { per_sentence, mean, tokens: batch.sentences.iter().map(|s| s.len()).sum() }
}

/// `∂/∂logits` of `scale · (1/L) Σ_i MSE(teacher_i, student_i)` for one sentence.
pub fn kd_dlogits<T: Scalar>(teacher: &Matrix<T>, student: &Matrix<T>, scale: T) -> Matrix<T> {
    let c = T::lit(student.cols() as f64);
    let coef = scale * T::lit(2.0) / (c * T::lit(student.rows() as f64));
    let mut dprobs = student.clone();
    for (d, &t) in dprobs.as_mut_slice().iter_mut().zip(teacher.as_slice()) {
        *d = coef * (*d - t);
    }
    softmax_backward(student, &dprobs)
}

/// Loss breakdown and student gradients of the batch-mean distillation loss.
pub fn kd_gradients<T: Scalar>(
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    batch: &Batch<'_>,
) -> Result<(KdLossBreakdown<T>, TaggerGrads<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_classes(teacher, student)?;
    let scale = T::one() / T::lit(batch.len() as f64);
    let mut grads = TaggerGrads::zeros_like(student);
    let mut per_sentence = Vec::with_capacity(batch.len());
    for s in &batch.sentences {
        let target = teacher.probs(s);
        let fwd = student.forward(s);
        per_sentence.push(kd_loss_from_probs(&target, &fwd.probs));
        let dlogits = kd_dlogits(&target, &fwd.probs, scale);
        student.backward(&fwd, &dlogits, &mut grads);
    }
    Ok((breakdown(per_sentence, batch), grads))
}

/// One SGD step of the student on the batch. Returns the pre-update batch loss
/// and the updated student; the teacher is only read.
pub fn kd_step<T: Scalar>(
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    batch: &Batch<'_>,
    lr: T,
) -> Result<(T, Tagger<T>)> {
    let (loss, grads) = kd_gradients(teacher, student, batch)?;
    let mut next = student.clone();
    next.apply_gradients(&grads, lr)?;
    Ok((loss.mean, next))
}
