//! Value-function fitting against Monte-Carlo returns, advantage
//! computation, per-perturbation policy-gradient estimates, the aggregated
//! perturbed gradient, and the trace-of-covariance diagnostic.

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Vector};
use crate::nn::{Mlp, MlpShape};
use crate::policy::GaussianMlpPolicy;
use crate::scalar::Scalar;
use rand::Rng;

/// MLP state-value function, same shape family as the policy mean net.
#[derive(Debug, Clone)]
pub struct ValueFunction<T> {
    pub net: Mlp<T>,
}

impl<T: Scalar> ValueFunction<T> {
    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: Vec<usize>,
        layer_norm: bool,
        rng: &mut R,
    ) -> Self {
        let shape = MlpShape { input_dim: state_dim, hidden, output_dim: 1, layer_norm };
        Self { net: Mlp::init(shape, 1.0, rng) }
    }

    pub fn value(&self, state: &[T]) -> Result<T> {
        Ok(self.net.forward(state)?[0])
    }
}

/// Discounted return-to-go at every step of a trajectory.
pub fn returns_to_go<T: Scalar>(traj: &Trajectory<T>, gamma: T) -> Vector<T> {
    let mut out = vec![T::zero(); traj.len()];
    let mut acc = T::zero();
    for t in (0..traj.len()).rev() {
        acc = traj.rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Fit V toward Monte-Carlo discounted returns over all trajectories by
/// full-batch gradient descent. Returns the final mean-squared error.
pub fn fit_value_td1<T: Scalar>(
    value_fn: &mut ValueFunction<T>,
    trajectories: &[Trajectory<T>],
    gamma: T,
    epochs: usize,
    learning_rate: T,
) -> Result<T> {
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyInput("fit_value_td1 trajectories"));
    }
    let mut samples: Vec<(&[T], T)> = Vec::new();
    for traj in trajectories {
        let targets = returns_to_go(traj, gamma);
        for (t, &y) in targets.iter().enumerate() {
            samples.push((&traj.states[t], y));
        }
    }
    let m = T::lit(samples.len() as f64);
    let n = value_fn.net.n_params();
    let mut mse = T::zero();
    for _ in 0..epochs {
        let mut grad = vec![T::zero(); n];
        mse = T::zero();
        for (s, y) in &samples {
            let cache = value_fn.net.forward_cached(s)?;
            let err = cache.output[0] - *y;
            mse += err * err / m;
            // d mse / d params = (2/m) err dV
            value_fn.net.backward(&cache, &[T::lit(2.0) * err / m], &mut grad);
        }
        axpy(-learning_rate, &grad, &mut value_fn.net.params);
    }
    Ok(mse)
}

/// Per-step advantage estimates: discounted return-to-go minus the value
/// baseline, not yet standardized.
pub fn advantages<T: Scalar>(
    traj: &Trajectory<T>,
    value_fn: &ValueFunction<T>,
    gamma: T,
) -> Result<Vector<T>> {
    let rtg = returns_to_go(traj, gamma);
    let mut out = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        out.push(rtg[t] - value_fn.value(&traj.states[t])?);
    }
    Ok(out)
}

/// Standardize in place to zero mean and unit variance across the whole
/// batch (all tags of one iteration). No-op on constant input.
pub fn standardize<T: Scalar>(groups: &mut [Vector<T>]) {
    let count: usize = groups.iter().map(|g| g.len()).sum();
    if count == 0 {
        return;
    }
    let m = T::lit(count as f64);
    let mean = groups.iter().flat_map(|g| g.iter().copied()).sum::<T>() / m;
    let var = groups
        .iter()
        .flat_map(|g| g.iter().map(|&v| (v - mean) * (v - mean)))
        .sum::<T>()
        / m;
    let std = var.sqrt();
    if std <= T::lit(1e-12) {
        for g in groups.iter_mut() {
            for v in g.iter_mut() {
                *v = T::zero();
            }
        }
        return;
    }
    for g in groups.iter_mut() {
        for v in g.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
}

/// Policy-gradient estimate from the trajectories of one perturbed policy.
#[derive(Debug, Clone)]
pub struct PerPolicyGradient<T> {
    pub tag: i32,
    pub gradient: Vector<T>,
    pub sample_count: usize,
}

/// G = (1/N_traj) sum_traj sum_t score(phi + eps; s_t, a_t) * advantage,
/// with scores taken at the generating (perturbed) parameterization.
pub fn per_policy_gradient<T: Scalar>(
    trajectories: &[Trajectory<T>],
    generating_policy: &GaussianMlpPolicy<T>,
    advantages: &[Vector<T>],
) -> Result<PerPolicyGradient<T>> {
    if trajectories.is_empty() {
        return Err(Error::EmptyInput("per_policy_gradient trajectories"));
    }
    assert_eq!(trajectories.len(), advantages.len());
    let tag = trajectories[0].policy_tag;
    let mut grad = vec![T::zero(); generating_policy.n_params()];
    let mut sample_count = 0;
    let weight = T::one() / T::lit(trajectories.len() as f64);
    for (traj, advs) in trajectories.iter().zip(advantages) {
        if traj.policy_tag != tag {
            return Err(Error::TagMismatch { expected: tag, got: traj.policy_tag });
        }
        assert_eq!(traj.len(), advs.len());
        for t in 0..traj.len() {
            generating_policy.score_into(
                &traj.states[t],
                &traj.actions[t],
                weight * advs[t],
                &mut grad,
            )?;
        }
        sample_count += traj.len();
    }
    Ok(PerPolicyGradient { tag, gradient: grad, sample_count })
}

/// Unweighted mean over contributors, reduced in fixed tag order so the
/// result is bitwise reproducible regardless of input order.
pub fn perturbed_gradient<T: Scalar>(per_policy: &[PerPolicyGradient<T>]) -> Result<Vector<T>> {
    if per_policy.is_empty() {
        return Err(Error::EmptyInput("perturbed_gradient"));
    }
    let mut order: Vec<usize> = (0..per_policy.len()).collect();
    order.sort_by_key(|&i| per_policy[i].tag);
    let n = per_policy[0].gradient.len();
    let k = T::lit(per_policy.len() as f64);
    let mut out = vec![T::zero(); n];
    for &i in &order {
        axpy(T::one() / k, &per_policy[i].gradient, &mut out);
    }
    Ok(out)
}

/// Trace of the empirical covariance of the per-policy gradients:
/// (1/(k-1)) sum_i ||G_i - mean||^2.
pub fn cov_trace<T: Scalar>(per_policy: &[PerPolicyGradient<T>]) -> Result<T> {
    if per_policy.len() < 2 {
        return Err(Error::EmptyInput("cov_trace needs >= 2 entries"));
    }
    let mean = perturbed_gradient(per_policy)?;
    let mut acc = T::zero();
    for g in per_policy {
        let d = crate::linalg::sub(&g.gradient, &mean);
        acc += dot(&d, &d);
    }
    Ok(acc / T::lit((per_policy.len() - 1) as f64))
}
