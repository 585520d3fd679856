use super::{PolicyNetwork, SCALAR_FEATURES};
use crate::corpus::Sentence;
use crate::distill::{kd_loss_from_probs, Teacher};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::tagger::Tagger;
use crate::Scalar;

/// What `f_semantic` was computed from, kept so the policy update can
/// backpropagate into the label embedding and projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTrace<T> {
    /// Student hidden states, `L × d_h`.
    pub hidden: Matrix<T>,
    /// Teacher pseudo-labels.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    /// Tokens the teacher tags as non-`O`.
    pub entities: T,
    /// Teacher's mean negative log-probability of its own predictions.
    pub conf: T,
    /// Teacher–student distillation loss on the sentence.
    pub agree: T,
    pub length: T,
    /// Max-pooled label-aware projection of the student's hidden states.
    pub semantic: Vec<T>,
    pub trace: Option<SemanticTrace<T>>,
}

impl<T: Scalar> StateVector<T> {
    /// A state without a semantic trace (gradients stop at `f_semantic`).
    pub fn from_parts(scalars: [T; SCALAR_FEATURES], semantic: Vec<T>) -> Self {
        let [entities, conf, agree, length] = scalars;
        Self { entities, conf, agree, length, semantic, trace: None }
    }

    pub fn scalars(&self) -> [T; SCALAR_FEATURES] {
        [self.entities, self.conf, self.agree, self.length]
    }

    /// Concatenated state `s` in the fixed layout.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.scalars().to_vec();
        v.extend_from_slice(&self.semantic);
        v
    }

    pub fn width(&self) -> usize {
        SCALAR_FEATURES + self.semantic.len()
    }
}

impl<T: Scalar> PolicyNetwork<T> {
    /// Per-token `z_i = W_u [h_i ; U[ŷ_i]] + b_u`.
    pub fn label_aware(&self, trace: &SemanticTrace<T>) -> Matrix<T> {
        let mut z = Matrix::zeros(trace.labels.len(), self.config.d_z);
        let mut input = Vec::with_capacity(self.d_h + self.config.d_u);
        for (i, &y) in trace.labels.iter().enumerate() {
            input.clear();
            input.extend_from_slice(trace.hidden.row(i));
            input.extend_from_slice(self.label_emb.row(y));
            z.row_mut(i).copy_from_slice(&self.proj_w.affine(&input, &self.proj_b));
        }
        z
    }

    /// Coordinatewise max over tokens of `z_i`, plus the winning token per
    /// coordinate (lowest index on ties).
    pub fn semantic_feature(&self, trace: &SemanticTrace<T>) -> (Vec<T>, Vec<usize>) {
        let z = self.label_aware(trace);
        let mut best = vec![0usize; self.config.d_z];
        let mut value = z.row(0).to_vec();
        for i in 1..z.rows() {
            for (k, &v) in z.row(i).iter().enumerate() {
                if v > value[k] {
                    value[k] = v;
                    best[k] = i;
                }
            }
        }
        (value, best)
    }
}

/// Builds the state of one unlabeled sentence.
///
/// Pseudo-labels come from the teacher's argmax; `f_semantic` uses the
/// student's hidden states.
pub fn featurize<T: Scalar>(
    teacher: &dyn Teacher<T>,
    student: &Tagger<T>,
    policy: &PolicyNetwork<T>,
    x: &Sentence,
) -> Result<StateVector<T>> {
    let c = policy.num_classes;
    if teacher.num_classes() != c || student.num_classes() != c {
        return Err(Error::SchemeMismatch(format!(
            "teacher {}, student {}, policy {} classes",
            teacher.num_classes(),
            student.num_classes(),
            c
        )));
    }
    if student.config.d_h != policy.d_h {
        return Err(Error::Config(format!("student hidden width {} but policy expects {}", student.config.d_h, policy.d_h)));
    }
    let target = teacher.probs(x);
    let labels: Vec<usize> = (0..target.rows()).map(|i| argmax(target.row(i))).collect();
    let len = T::lit(x.len() as f64);
    let entities = T::lit(labels.iter().filter(|&&y| y != 0).count() as f64);
    let nll: T = labels.iter().enumerate().map(|(i, &y)| -target.get(i, y).ln()).sum();
    let fwd = student.forward(x);
    let agree = kd_loss_from_probs(&target, &fwd.probs);
    let trace = SemanticTrace { hidden: fwd.hidden, labels };
    let (semantic, _) = policy.semantic_feature(&trace);
    Ok(StateVector { entities, conf: nll / len, agree, length: len, semantic, trace: Some(trace) })
}
