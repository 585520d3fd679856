use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{PolicyNetwork, StateVector, SCALAR_FEATURES};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus, Matrix};
use crate::tagger::gradcheck::check_epsilon;
use crate::tagger::relative_error;
use crate::tagger::{GradCheckReport, TensorCheck};
use crate::Scalar;

/// Sampled keep/drop decisions for one batch (`true` keeps the instance).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBatch<T> {
    pub actions: Vec<bool>,
    pub probs: Vec<T>,
    /// Word position of the sampling stream before the draws.
    pub rng_stamp: u128,
}

impl<T> ActionBatch<T> {
    pub fn kept(&self) -> usize {
        self.actions.iter().filter(|&&a| a).count()
    }
}

/// Draws `a_i ~ Bernoulli(π(s_i))` independently.
pub fn sample_actions<T: Scalar>(
    policy: &PolicyNetwork<T>,
    states: &[StateVector<T>],
    rng: &mut ChaCha8Rng,
) -> Result<ActionBatch<T>> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rng_stamp = rng.get_word_pos();
    let probs = states.iter().map(|s| policy.policy_forward(s)).collect::<Result<Vec<T>>>()?;
    let actions = probs.iter().map(|p| rng.gen::<f64>() < p.as_f64()).collect();
    Ok(ActionBatch { actions, probs, rng_stamp })
}

/// Delayed reward: the drop in distillation loss.
pub fn compute_reward<T: Scalar>(loss_prev: T, loss_curr: T) -> T {
    loss_prev - loss_curr
}

fn check_batch<T>(states: &[StateVector<T>], actions: &[bool]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if states.len() != actions.len() {
        return Err(Error::Config(format!("{} states but {} actions", states.len(), actions.len())));
    }
    Ok(())
}

impl<T: Scalar> PolicyNetwork<T> {
    /// Semantic part of the network input, replayed from the trace when present.
    fn replay(&self, state: &StateVector<T>) -> (Vec<T>, Option<Vec<usize>>) {
        match &state.trace {
            Some(trace) if !self.config.freeze_semantic => {
                let (v, best) = self.semantic_feature(trace);
                (v, Some(best))
            }
            _ => (state.semantic.clone(), None),
        }
    }
}

/// `log[(1−a)(1−π) + aπ]` computed from the logit.
fn log_action_prob<T: Scalar>(logit: T, keep: bool) -> T {
    if keep {
        -softplus(-logit)
    } else {
        -softplus(logit)
    }
}

/// REINFORCE objective `(1/|S|) Σ_i (−r) log[(1−a_i)(1−π(s_i)) + a_i π(s_i)]`.
pub fn policy_loss<T: Scalar>(policy: &PolicyNetwork<T>, states: &[StateVector<T>], actions: &[bool], reward: T) -> Result<T> {
    check_batch(states, actions)?;
    let total: T = states
        .iter()
        .zip(actions)
        .map(|(s, &a)| {
            let (semantic, _) = policy.replay(s);
            let (_, _, logit) = policy.layers(&policy.input(s, &semantic));
            -reward * log_action_prob(logit, a)
        })
        .sum();
    Ok(total / T::lit(states.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
    pub label_emb: Matrix<T>,
    pub proj_w: Matrix<T>,
    pub proj_b: Vec<T>,
}

impl<T: Scalar> PolicyGrads<T> {
    fn zeros_like(p: &PolicyNetwork<T>) -> Self {
        Self {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            b1: vec![T::zero(); p.b1.len()],
            w2: vec![T::zero(); p.w2.len()],
            b2: T::zero(),
            label_emb: Matrix::zeros(p.label_emb.rows(), p.label_emb.cols()),
            proj_w: Matrix::zeros(p.proj_w.rows(), p.proj_w.cols()),
            proj_b: vec![T::zero(); p.proj_b.len()],
        }
    }

    fn slices(&self) -> Vec<(&'static str, &[T])> {
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
}

/// Objective value and its gradient. Scalar features and tagger states are
/// constants; the gradient reaches the label embedding and projection through
/// the max-pooled `f_semantic` unless `freeze_semantic` is set.
pub fn policy_gradients<T: Scalar>(
    policy: &PolicyNetwork<T>,
    states: &[StateVector<T>],
    actions: &[bool],
    reward: T,
) -> Result<(T, PolicyGrads<T>)> {
    check_batch(states, actions)?;
    let n = T::lit(states.len() as f64);
    let d_h = policy.d_h;
    let mut g = PolicyGrads::zeros_like(policy);
    let mut loss = T::zero();
    let mut dx = vec![T::zero(); policy.config.d_s()];
    for (s, &a) in states.iter().zip(actions) {
        let (semantic, winners) = policy.replay(s);
        let x = policy.input(s, &semantic);
        let (pre, act, logit) = policy.layers(&x);
        loss -= reward * log_action_prob(logit, a);
        let target = if a { T::one() } else { T::zero() };
        let dlogit = reward * (sigmoid(logit) - target) / n;
        if dlogit == T::zero() {
            continue;
        }
        g.b2 += dlogit;
        let mut dpre = vec![T::zero(); pre.len()];
        for (r, (&h, &p)) in act.iter().zip(&pre).enumerate() {
            g.w2[r] += dlogit * h;
            if p > T::zero() {
                dpre[r] = dlogit * policy.w2[r];
            }
        }
        g.w1.add_outer(&dpre, &x);
        for (b, &d) in g.b1.iter_mut().zip(&dpre) {
            *b += d;
        }
        let (Some(winners), Some(trace)) = (winners, &s.trace) else {
            continue;
        };
        dx.iter_mut().for_each(|v| *v = T::zero());
        policy.w1.add_transpose_mul(&dpre, &mut dx);
        for (k, &dz) in dx[SCALAR_FEATURES..].iter().enumerate() {
            if dz == T::zero() {
                continue;
            }
            let i = winners[k];
            let y = trace.labels[i];
            g.proj_b[k] += dz;
            let row = g.proj_w.row_mut(k);
            for (gw, &h) in row[..d_h].iter_mut().zip(trace.hidden.row(i)) {
                *gw += dz * h;
            }
            for (gw, &u) in row[d_h..].iter_mut().zip(policy.label_emb.row(y)) {
                *gw += dz * u;
            }
            let w_u = &policy.proj_w.row(k)[d_h..];
            for (gu, &w) in g.label_emb.row_mut(y).iter_mut().zip(w_u) {
                *gu += dz * w;
            }
        }
    }
    Ok((loss / n, g))
}

/// One SGD step on the REINFORCE objective. Returns the updated policy and
/// the objective value before the step.
pub fn policy_update<T: Scalar>(
    policy: &PolicyNetwork<T>,
    states: &[StateVector<T>],
    actions: &[bool],
    reward: T,
    lr: T,
) -> Result<(PolicyNetwork<T>, T)> {
    let (loss, grads) = policy_gradients(policy, states, actions, reward)?;
    if let Some((name, _)) = grads.slices().into_iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite { what: "gradient", tensor: name.into() });
    }
    let mut next = policy.clone();
    for ((_, p), (_, g)) in next.tensors_mut().into_iter().zip(grads.slices()) {
        for (p, &g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
    Ok((next, loss))
}

/// Central finite-difference check of [`policy_gradients`] on every parameter.
pub fn policy_grad_check<T: Scalar>(
    policy: &PolicyNetwork<T>,
    states: &[StateVector<T>],
    actions: &[bool],
    reward: T,
    epsilon: f64,
) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let (_, grads) = policy_gradients(policy, states, actions, reward)?;
    let eps = T::lit(epsilon);
    let mut probe = policy.clone();
    let mut tensors = Vec::new();
    for (t, (name, analytic)) in grads.slices().into_iter().enumerate() {
        let mut worst = 0.0f64;
        for (k, &ga) in analytic.iter().enumerate() {
            let original = probe.tensors()[t].1[k];
            probe.tensors_mut()[t].1[k] = original + eps;
            let up = policy_loss(&probe, states, actions, reward)?;
            probe.tensors_mut()[t].1[k] = original - eps;
            let down = policy_loss(&probe, states, actions, reward)?;
            probe.tensors_mut()[t].1[k] = original;
            let numeric = (up - down).as_f64() / (2.0 * epsilon);
            worst = worst.max(relative_error(ga.as_f64(), numeric));
        }
        tensors.push(TensorCheck { name: name.into(), coords: analytic.len(), max_rel_error: worst });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, tensors })
}
