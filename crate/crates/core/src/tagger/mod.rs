//! Window-encoder sequence tagger with a softmax head.
//!
//! Token `i` is encoded from the hashed embeddings of tokens `i-w ..= i+w`
//! (positions off either end use a dedicated padding row), followed by an
//! affine map and `tanh`. The head is `softmax(W h_i + b)`.

pub(crate) mod grad;
pub(crate) mod gradcheck;
mod train;

pub use grad::TaggerGrads;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, LossSelector, TensorCheck};
pub use train::{train_source, EvalPoint, LrSchedule, OptimizerConfig, TrainLog};

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::linalg::{argmax, softmax, Matrix};
use crate::rng::{derive_seed, fnv1a64};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggerConfig {
    pub d_emb: usize,
    /// Context half-width.
    pub window: usize,
    pub d_h: usize,
    pub num_classes: usize,
    pub vocab_buckets: usize,
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl TaggerConfig {
    pub fn desk_scale(num_classes: usize) -> Self {
        Self { d_emb: 16, window: 1, d_h: 64, num_classes, vocab_buckets: 8192, freeze_embeddings: false, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_h == 0 || self.num_classes == 0 || self.vocab_buckets == 0 {
            return Err(Error::Config("tagger dimensions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        (2 * self.window + 1) * self.d_emb
    }

    /// Row of the embedding table used for out-of-sentence positions.
    pub fn pad_bucket(&self) -> usize {
        self.vocab_buckets
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.vocab_buckets as u64) as usize
    }
}

/// Encoder output, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<T>(pub Matrix<T>);

impl<T> Deref for HiddenStates<T> {
    type Target = Matrix<T>;
    fn deref(&self) -> &Matrix<T> {
        &self.0
    }
}

/// Per-token label distributions, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeq<T>(pub Matrix<T>);

impl<T> Deref for ProbSeq<T> {
    type Target = Matrix<T>;
    fn deref(&self) -> &Matrix<T> {
        &self.0
    }
}

impl<T: Scalar> ProbSeq<T> {
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub ids: Vec<usize>,
    pub inputs: Matrix<T>,
    pub hidden: Matrix<T>,
    pub probs: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tagger<T> {
    pub config: TaggerConfig,
    /// Free-form role tag (base, source, student-k, ...), stored in checkpoints.
    pub role: String,
    /// `(vocab_buckets + 1) × d_emb`; the last row is padding.
    pub embedding: Matrix<T>,
    /// `d_h × (2w+1)·d_emb`
    pub encoder_w: Matrix<T>,
    pub encoder_b: Vec<T>,
    /// `c × d_h`
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| T::lit(rng.gen_range(-a..a))).collect())
}

impl<T: Scalar> Tagger<T> {
    /// Deterministic Glorot-uniform weights and zero biases.
    pub fn init_base(config: &TaggerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let config = TaggerConfig { seed, ..config.clone() };
        Ok(Self {
            embedding: glorot(config.vocab_buckets + 1, config.d_emb, derive_seed(seed, 10)),
            encoder_w: glorot(config.d_h, config.input_width(), derive_seed(seed, 11)),
            encoder_b: vec![T::zero(); config.d_h],
            head_w: glorot(config.num_classes, config.d_h, derive_seed(seed, 12)),
            head_b: vec![T::zero(); config.num_classes],
            role: "base".into(),
            config,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Embedding rows for every window slot of every token, row-major `L × (2w+1)`.
    pub fn window_ids(&self, sentence: &Sentence) -> Vec<usize> {
        let w = self.config.window as isize;
        let buckets: Vec<usize> = sentence.tokens.iter().map(|t| self.config.bucket(t)).collect();
        let len = buckets.len() as isize;
        let mut ids = Vec::with_capacity(buckets.len() * (2 * self.config.window + 1));
        for i in 0..len {
            for j in i - w..=i + w {
                ids.push(if (0..len).contains(&j) { buckets[j as usize] } else { self.config.pad_bucket() });
            }
        }
        ids
    }

    pub fn forward(&self, sentence: &Sentence) -> Forward<T> {
        let len = sentence.len();
        let slots = 2 * self.config.window + 1;
        let ids = self.window_ids(sentence);
        let mut inputs = Matrix::zeros(len, self.config.input_width());
        let mut hidden = Matrix::zeros(len, self.config.d_h);
        let mut probs = Matrix::zeros(len, self.config.num_classes);
        for i in 0..len {
            let x = inputs.row_mut(i);
            for (slot, &id) in ids[i * slots..(i + 1) * slots].iter().enumerate() {
                x[slot * self.config.d_emb..(slot + 1) * self.config.d_emb].copy_from_slice(self.embedding.row(id));
            }
            let h: Vec<T> = self.encoder_w.affine(inputs.row(i), &self.encoder_b).into_iter().map(T::tanh).collect();
            let logits = self.head_w.affine(&h, &self.head_b);
            probs.row_mut(i).copy_from_slice(&softmax(&logits));
            hidden.row_mut(i).copy_from_slice(&h);
        }
        Forward { ids, inputs, hidden, probs }
    }

    pub fn encode(&self, sentence: &Sentence) -> HiddenStates<T> {
        HiddenStates(self.forward(sentence).hidden)
    }

    pub fn predict_probs(&self, sentence: &Sentence) -> ProbSeq<T> {
        ProbSeq(self.forward(sentence).probs)
    }

    /// Per-token argmax; ties go to the lowest tag index (so `O` wins a uniform row).
    pub fn predict_labels(&self, sentence: &Sentence) -> Vec<usize> {
        self.predict_probs(sentence).argmax_labels()
    }

    /// Predicted labels for every sentence, in corpus order.
    pub fn predict_corpus(&self, corpus: &Corpus) -> Vec<Vec<usize>> {
        corpus.sentences().par_iter().map(|s| self.predict_labels(s)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.is_finite()
            && self.encoder_w.is_finite()
            && self.head_w.is_finite()
            && self.encoder_b.iter().chain(&self.head_b).all(|v| v.is_finite())
    }

    /// Flat views of every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("embedding", self.embedding.as_slice()),
            ("encoder.weight", self.encoder_w.as_slice()),
            ("encoder.bias", &self.encoder_b),
            ("head.weight", self.head_w.as_slice()),
            ("head.bias", &self.head_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("embedding", self.embedding.as_mut_slice()),
            ("encoder.weight", self.encoder_w.as_mut_slice()),
            ("encoder.bias", &mut self.encoder_b),
            ("head.weight", self.head_w.as_mut_slice()),
            ("head.bias", &mut self.head_b),
        ]
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let c = &self.config;
        let mut ckpt = Checkpoint::new("tagger");
        ckpt.set_meta("name", &self.role);
        ckpt.set_meta("seed", c.seed);
        ckpt.set_meta("d_emb", c.d_emb);
        ckpt.set_meta("window", c.window);
        ckpt.set_meta("d_h", c.d_h);
        ckpt.set_meta("num_classes", c.num_classes);
        ckpt.set_meta("vocab_buckets", c.vocab_buckets);
        ckpt.set_meta("freeze_embeddings", c.freeze_embeddings);
        ckpt.push_matrix("embedding", &self.embedding);
        ckpt.push_matrix("encoder.weight", &self.encoder_w);
        ckpt.push_vector("encoder.bias", &self.encoder_b);
        ckpt.push_matrix("head.weight", &self.head_w);
        ckpt.push_vector("head.bias", &self.head_b);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        ckpt.expect_role("tagger")?;
        let config = TaggerConfig {
            d_emb: ckpt.parse_meta("d_emb")?,
            window: ckpt.parse_meta("window")?,
            d_h: ckpt.parse_meta("d_h")?,
            num_classes: ckpt.parse_meta("num_classes")?,
            vocab_buckets: ckpt.parse_meta("vocab_buckets")?,
            freeze_embeddings: ckpt.parse_meta("freeze_embeddings")?,
            seed: ckpt.parse_meta("seed")?,
        };
        config.validate()?;
        let model = Self {
            embedding: ckpt.matrix("embedding", config.vocab_buckets + 1, config.d_emb)?,
            encoder_w: ckpt.matrix("encoder.weight", config.d_h, config.input_width())?,
            encoder_b: ckpt.vector("encoder.bias", config.d_h)?,
            head_w: ckpt.matrix("head.weight", config.num_classes, config.d_h)?,
            head_b: ckpt.vector("head.bias", config.num_classes)?,
            role: ckpt.meta("name").unwrap_or("").to_owned(),
            config,
        };
        if !model.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(model)
    }
}
