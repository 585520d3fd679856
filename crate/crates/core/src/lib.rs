//! Reinforced iterative knowledge distillation for cross-lingual sequence
//! labeling.
//!
//! A source-language tagger is trained on gold labels, then repeatedly
//! distilled into fresh students on unlabeled target-language text. A
//! REINFORCE-trained selector decides which unlabeled sentences each
//! distillation step learns from.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision instantiation used by the CLI.

pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod driver;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod rng;
pub mod runlog;
mod scalar;
pub mod selector;
pub mod tagger;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TaggerModel = tagger::Tagger<f64>;
pub type PolicyNet = selector::PolicyNetwork<f64>;
pub type State = selector::StateVector<f64>;
pub type Probs = tagger::ProbSeq<f64>;
pub type Hidden = tagger::HiddenStates<f64>;
pub type TaggerModel32 = tagger::Tagger<f32>;
pub type PolicyNet32 = selector::PolicyNetwork<f32>;
