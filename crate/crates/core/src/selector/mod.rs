//! Reinforced instance selector.
//!
//! Each unlabeled sentence is summarized as a state vector laid out as
//! `[f_entities, f_conf, f_agree, f_length, f_semantic..]`. A two-layer
//! network (ReLU hidden layer, sigmoid output) turns the state into a keep
//! probability, and the whole selector, including the label embedding and the
//! label-aware projection behind `f_semantic`, is trained by REINFORCE on a
//! delayed batch reward.

mod state;
mod update;

pub use state::{featurize, SemanticTrace, StateVector};
pub use update::{
    compute_reward, policy_grad_check, policy_gradients, policy_loss, policy_update, sample_actions, ActionBatch,
    PolicyGrads,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::rng::derive_seed;
use crate::Scalar;

/// Number of scalar features ahead of `f_semantic` in the state vector.
pub const SCALAR_FEATURES: usize = 4;
pub const STATE_LAYOUT: &str = "entities,conf,agree,length,semantic";

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    /// Label embedding width.
    pub d_u: usize,
    /// Width of the label-aware projection, i.e. of `f_semantic`.
    pub d_z: usize,
    pub d_hidden: usize,
    pub lr: f64,
    pub seed: u64,
    /// Standardize the four scalar features with running statistics.
    pub standardize_scalars: bool,
    /// Stop policy gradients at `f_semantic` (label embedding and projection stay fixed).
    pub freeze_semantic: bool,
    /// Keep probability of the freshly initialized policy.
    pub init_keep_prob: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_u: 16,
            d_z: 60,
            d_hidden: 64,
            lr: 0.01,
            seed: 0,
            standardize_scalars: false,
            freeze_semantic: false,
            init_keep_prob: 0.5,
        }
    }
}

impl PolicyConfig {
    pub fn d_s(&self) -> usize {
        self.d_z + SCALAR_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_u == 0 || self.d_z == 0 || self.d_hidden == 0 {
            return Err(Error::Config("policy dimensions must be at least 1".into()));
        }
        if !(self.init_keep_prob > 0.0 && self.init_keep_prob < 1.0) {
            return Err(Error::Config("init_keep_prob must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Welford running mean/variance of the scalar features.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarStats<T> {
    pub count: T,
    pub mean: [T; SCALAR_FEATURES],
    pub m2: [T; SCALAR_FEATURES],
}

impl<T: Scalar> ScalarStats<T> {
    fn new() -> Self {
        Self { count: T::zero(), mean: [T::zero(); SCALAR_FEATURES], m2: [T::zero(); SCALAR_FEATURES] }
    }

    fn observe(&mut self, x: &[T; SCALAR_FEATURES]) {
        self.count += T::one();
        for j in 0..SCALAR_FEATURES {
            let delta = x[j] - self.mean[j];
            self.mean[j] += delta / self.count;
            self.m2[j] += delta * (x[j] - self.mean[j]);
        }
    }

    fn standardize(&self, j: usize, v: T) -> T {
        if self.count < T::lit(2.0) {
            return v;
        }
        let var = self.m2[j] / (self.count - T::one());
        (v - self.mean[j]) / (var + T::lit(1e-8)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork<T> {
    pub config: PolicyConfig,
    pub num_classes: usize,
    /// Hidden width of the tagger whose states feed `f_semantic`.
    pub d_h: usize,
    /// `d_hidden × d_s`
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// Output layer, `1 × d_hidden`.
    pub w2: Vec<T>,
    pub b2: T,
    /// `c × d_u`
    pub label_emb: Matrix<T>,
    /// `d_z × (d_h + d_u)`
    pub proj_w: Matrix<T>,
    pub proj_b: Vec<T>,
    pub stats: ScalarStats<T>,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| T::lit(rng.gen_range(-a..a))).collect())
}

impl<T: Scalar> PolicyNetwork<T> {
    /// Glorot-uniform hidden layer, label embedding and projection; the output
    /// layer starts at zero with a bias giving `init_keep_prob` everywhere.
    pub fn init(config: &PolicyConfig, num_classes: usize, d_h: usize) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let p = config.init_keep_prob;
        Ok(Self {
            w1: glorot(config.d_hidden, config.d_s(), derive_seed(seed, 20)),
            b1: vec![T::zero(); config.d_hidden],
            w2: vec![T::zero(); config.d_hidden],
            b2: T::lit((p / (1.0 - p)).ln()),
            label_emb: glorot(num_classes, config.d_u, derive_seed(seed, 21)),
            proj_w: glorot(config.d_z, d_h + config.d_u, derive_seed(seed, 22)),
            proj_b: vec![T::zero(); config.d_z],
            stats: ScalarStats::new(),
            config: config.clone(),
            num_classes,
            d_h,
        })
    }

    /// Folds a batch of states into the running scalar statistics. Only
    /// consulted when `standardize_scalars` is set.
    pub fn observe(&mut self, states: &[StateVector<T>]) {
        for s in states {
            self.stats.observe(&s.scalars());
        }
    }

    /// Network input for a state whose semantic part is `semantic`.
    pub(crate) fn input(&self, state: &StateVector<T>, semantic: &[T]) -> Vec<T> {
        let mut x: Vec<T> = state.scalars().to_vec();
        if self.config.standardize_scalars {
            for (j, v) in x.iter_mut().enumerate() {
                *v = self.stats.standardize(j, *v);
            }
        }
        x.extend_from_slice(semantic);
        x
    }

    /// Hidden pre-activations, ReLU activations and output logit.
    pub(crate) fn layers(&self, x: &[T]) -> (Vec<T>, Vec<T>, T) {
        let pre = self.w1.affine(x, &self.b1);
        let act: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        let logit = dot(&self.w2, &act) + self.b2;
        (pre, act, logit)
    }

    pub fn logit(&self, state: &StateVector<T>) -> T {
        self.layers(&self.input(state, &state.semantic)).2
    }

    /// Keep probability `sigmoid(W2 · relu(W1 s + b1) + b2)`.
    pub fn policy_forward(&self, state: &StateVector<T>) -> Result<T> {
        if state.semantic.len() != self.config.d_z {
            return Err(Error::Config(format!(
                "state has width {}, policy expects {}",
                state.semantic.len() + SCALAR_FEATURES,
                self.config.d_s()
            )));
        }
        Ok(sigmoid(self.logit(state)))
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("policy.w1", self.w1.as_slice()),
            ("policy.b1", &self.b1),
            ("policy.w2", &self.w2),
            ("policy.b2", std::slice::from_ref(&self.b2)),
            ("label_embedding", self.label_emb.as_slice()),
            ("projection.weight", self.proj_w.as_slice()),
            ("projection.bias", &self.proj_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("policy.w1", self.w1.as_mut_slice()),
            ("policy.b1", &mut self.b1),
            ("policy.w2", &mut self.w2),
            ("policy.b2", std::slice::from_mut(&mut self.b2)),
            ("label_embedding", self.label_emb.as_mut_slice()),
            ("projection.weight", self.proj_w.as_mut_slice()),
            ("projection.bias", &mut self.proj_b),
        ]
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let c = &self.config;
        let mut ckpt = Checkpoint::new("policy");
        ckpt.set_meta("state_layout", STATE_LAYOUT);
        ckpt.set_meta("d_s", c.d_s());
        ckpt.set_meta("d_u", c.d_u);
        ckpt.set_meta("d_z", c.d_z);
        ckpt.set_meta("d_hidden", c.d_hidden);
        ckpt.set_meta("num_classes", self.num_classes);
        ckpt.set_meta("d_h", self.d_h);
        ckpt.set_meta("lr", c.lr);
        ckpt.set_meta("seed", c.seed);
        ckpt.set_meta("standardize_scalars", c.standardize_scalars);
        ckpt.set_meta("freeze_semantic", c.freeze_semantic);
        ckpt.set_meta("init_keep_prob", c.init_keep_prob);
        ckpt.push_matrix("policy.w1", &self.w1);
        ckpt.push_vector("policy.b1", &self.b1);
        ckpt.push_vector("policy.w2", &self.w2);
        ckpt.push_vector("policy.b2", &[self.b2]);
        ckpt.push_matrix("label_embedding", &self.label_emb);
        ckpt.push_matrix("projection.weight", &self.proj_w);
        ckpt.push_vector("projection.bias", &self.proj_b);
        let mut stats = vec![self.stats.count];
        stats.extend_from_slice(&self.stats.mean);
        stats.extend_from_slice(&self.stats.m2);
        ckpt.push_vector("scalar_stats", &stats);
        ckpt
    }

    /// Loads a policy; when `expected_d_s` is given, a checkpoint with a
    /// different state width is rejected.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>, expected_d_s: Option<usize>) -> Result<Self> {
        ckpt.expect_role("policy")?;
        if ckpt.meta("state_layout") != Some(STATE_LAYOUT) {
            return Err(Error::Checkpoint(format!("unsupported state layout {:?}", ckpt.meta("state_layout"))));
        }
        let config = PolicyConfig {
            d_u: ckpt.parse_meta("d_u")?,
            d_z: ckpt.parse_meta("d_z")?,
            d_hidden: ckpt.parse_meta("d_hidden")?,
            lr: ckpt.parse_meta("lr")?,
            seed: ckpt.parse_meta("seed")?,
            standardize_scalars: ckpt.parse_meta("standardize_scalars")?,
            freeze_semantic: ckpt.parse_meta("freeze_semantic")?,
            init_keep_prob: ckpt.parse_meta("init_keep_prob")?,
        };
        let d_s: usize = ckpt.parse_meta("d_s")?;
        if d_s != config.d_s() || expected_d_s.is_some_and(|e| e != d_s) {
            return Err(Error::Checkpoint(format!(
                "state width {d_s} does not match the expected {}",
                expected_d_s.unwrap_or(config.d_s())
            )));
        }
        let num_classes: usize = ckpt.parse_meta("num_classes")?;
        let d_h: usize = ckpt.parse_meta("d_h")?;
        let stats = ckpt.vector("scalar_stats", 1 + 2 * SCALAR_FEATURES)?;
        let mut mean = [T::zero(); SCALAR_FEATURES];
        let mut m2 = [T::zero(); SCALAR_FEATURES];
        mean.copy_from_slice(&stats[1..1 + SCALAR_FEATURES]);
        m2.copy_from_slice(&stats[1 + SCALAR_FEATURES..]);
        Ok(Self {
            w1: ckpt.matrix("policy.w1", config.d_hidden, d_s)?,
            b1: ckpt.vector("policy.b1", config.d_hidden)?,
            w2: ckpt.vector("policy.w2", config.d_hidden)?,
            b2: ckpt.vector("policy.b2", 1)?[0],
            label_emb: ckpt.matrix("label_embedding", num_classes, config.d_u)?,
            proj_w: ckpt.matrix("projection.weight", config.d_z, d_h + config.d_u)?,
            proj_b: ckpt.vector("projection.bias", config.d_z)?,
            stats: ScalarStats { count: stats[0], mean, m2 },
            config,
            num_classes,
            d_h,
        })
    }
}
