use std::collections::BTreeMap;

use super::{Forward, Tagger};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Parameter gradients. Embedding rows are sparse: only rows that appeared in
/// a window carry entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerGrads<T> {
    pub embedding: BTreeMap<usize, Vec<T>>,
    pub encoder_w: Matrix<T>,
    pub encoder_b: Vec<T>,
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> TaggerGrads<T> {
    pub fn zeros_like(model: &Tagger<T>) -> Self {
        let c = &model.config;
        Self {
            embedding: BTreeMap::new(),
            encoder_w: Matrix::zeros(c.d_h, c.input_width()),
            encoder_b: vec![T::zero(); c.d_h],
            head_w: Matrix::zeros(c.num_classes, c.d_h),
            head_b: vec![T::zero(); c.num_classes],
        }
    }

    /// Dense copy of one named tensor's gradient.
    pub fn dense(&self, name: &str, model: &Tagger<T>) -> Vec<T> {
        match name {
            "embedding" => {
                let d = model.config.d_emb;
                let mut out = vec![T::zero(); model.embedding.as_slice().len()];
                for (&row, g) in &self.embedding {
                    out[row * d..(row + 1) * d].copy_from_slice(g);
                }
                out
            }
            "encoder.weight" => self.encoder_w.as_slice().to_vec(),
            "encoder.bias" => self.encoder_b.clone(),
            "head.weight" => self.head_w.as_slice().to_vec(),
            "head.bias" => self.head_b.clone(),
            other => panic!("unknown tensor {other}"),
        }
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !self.embedding.values().all(|r| finite(r)) {
            Some("embedding")
        } else if !finite(self.encoder_w.as_slice()) {
            Some("encoder.weight")
        } else if !finite(&self.encoder_b) {
            Some("encoder.bias")
        } else if !finite(self.head_w.as_slice()) {
            Some("head.weight")
        } else if !finite(&self.head_b) {
            Some("head.bias")
        } else {
            None
        }
    }
}

/// Gradient of mean token cross-entropy w.r.t. the logits: `scale · (p − onehot(y))`.
/// Returns the summed (unscaled) negative log-likelihood as well.
pub fn cross_entropy_dlogits<T: Scalar>(probs: &Matrix<T>, labels: &[usize], scale: T) -> (T, Matrix<T>) {
    let mut dlogits = probs.clone();
    let mut nll = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        nll -= probs.get(i, y).ln();
        let row = dlogits.row_mut(i);
        row[y] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    (nll, dlogits)
}

/// Pulls a gradient w.r.t. probabilities back through the softmax:
/// `dz_j = p_j (dp_j − Σ_k dp_k p_k)`.
pub fn softmax_backward<T: Scalar>(probs: &Matrix<T>, dprobs: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = dprobs.row(i);
        let inner = crate::linalg::dot(p, dp);
        for (o, (&pj, &dpj)) in out.row_mut(i).iter_mut().zip(p.iter().zip(dp)) {
            *o = pj * (dpj - inner);
        }
    }
    out
}

impl<T: Scalar> Tagger<T> {
    /// Accumulates parameter gradients given `∂loss/∂logits` for one sentence.
    pub fn backward(&self, fwd: &Forward<T>, dlogits: &Matrix<T>, grads: &mut TaggerGrads<T>) {
        let slots = 2 * self.config.window + 1;
        let d_emb = self.config.d_emb;
        let mut dh = vec![T::zero(); self.config.d_h];
        let mut dx = vec![T::zero(); self.config.input_width()];
        for i in 0..fwd.hidden.rows() {
            let dz = dlogits.row(i);
            let h = fwd.hidden.row(i);
            grads.head_w.add_outer(dz, h);
            for (g, &v) in grads.head_b.iter_mut().zip(dz) {
                *g += v;
            }
            dh.iter_mut().for_each(|v| *v = T::zero());
            self.head_w.add_transpose_mul(dz, &mut dh);
            for (d, &hv) in dh.iter_mut().zip(h) {
                *d *= T::one() - hv * hv;
            }
            grads.encoder_w.add_outer(&dh, fwd.inputs.row(i));
            for (g, &v) in grads.encoder_b.iter_mut().zip(&dh) {
                *g += v;
            }
            if self.config.freeze_embeddings {
                continue;
            }
            dx.iter_mut().for_each(|v| *v = T::zero());
            self.encoder_w.add_transpose_mul(&dh, &mut dx);
            for (slot, &id) in fwd.ids[i * slots..(i + 1) * slots].iter().enumerate() {
                let row = grads.embedding.entry(id).or_insert_with(|| vec![T::zero(); d_emb]);
                for (g, &v) in row.iter_mut().zip(&dx[slot * d_emb..(slot + 1) * d_emb]) {
                    *g += v;
                }
            }
        }
    }

    /// One SGD step. Frozen embeddings are left untouched.
    pub fn apply_gradients(&mut self, grads: &TaggerGrads<T>, lr: T) -> Result<()> {
        if let Some(tensor) = grads.first_non_finite() {
            return Err(Error::NonFinite { what: "gradient", tensor: tensor.into() });
        }
        if lr == T::zero() {
            return Ok(());
        }
        let step = |p: &mut [T], g: &[T]| p.iter_mut().zip(g).for_each(|(p, &g)| *p -= lr * g);
        if !self.config.freeze_embeddings {
            for (&row, g) in &grads.embedding {
                step(self.embedding.row_mut(row), g);
            }
        }
        step(self.encoder_w.as_mut_slice(), grads.encoder_w.as_slice());
        step(&mut self.encoder_b, &grads.encoder_b);
        step(self.head_w.as_mut_slice(), grads.head_w.as_slice());
        step(&mut self.head_b, &grads.head_b);
        Ok(())
    }
}
