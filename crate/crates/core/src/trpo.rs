//! The KL-constrained natural-gradient update (TRPO) and the diverse-
//! exploration outer loop: sample under the main and perturbed policies,
//! aggregate per-policy gradients, take a trust-region step, and regenerate
//! the perturbation set from the conjugate-gradient runoff.

use crate::env::{collect_steps, EnvKind, Trajectory};
use crate::error::{Error, Result};
use crate::estimation::{
    advantages, cov_trace, fit_value_td1, per_policy_gradient, perturbed_gradient, standardize,
    PerPolicyGradient, ValueFunction,
};
use crate::linalg::{cg_solve, dot, norm2, scaled, LinOp, Vector};

use crate::perturbation::{
    conjugate_set, pairwise_kl_total, random_set, PerturbationKind, PerturbationSet,
    RadiusSchedule,
};
use crate::policy::{EmpiricalFisher, GaussianMlpPolicy, PolicyConfig};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOG_RATIO_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy)]
pub struct TrpoConfig<T> {
    /// Step KL bound (nats).
    pub delta: T,
    pub cg_iterations: usize,
    pub cg_tol: T,
    pub damping: T,
    pub backtrack_coeff: T,
    pub max_backtracks: usize,
    /// Cap on states used for the empirical Fisher (deterministic stride
    /// subsample of the batch). The default is high enough that desk-scale
    /// batches are never truncated: a subsampled Fisher under-covers the
    /// visited-state mixture and mis-scales perturbation directions whose
    /// curvature lives in the uncovered states.
    pub fim_max_states: usize,
}

impl<T: Scalar> Default for TrpoConfig<T> {
    fn default() -> Self {
        Self {
            delta: T::lit(0.01),
            cg_iterations: 20,
            cg_tol: T::lit(1e-6),
            damping: T::lit(1e-3),
            backtrack_coeff: T::lit(0.5),
            max_backtracks: 10,
            fim_max_states: 1_000_000,
        }
    }
}

impl<T: Scalar> TrpoConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.delta <= T::zero() {
            return Err(Error::Config("trpo.delta must be positive".into()));
        }
        if self.cg_iterations == 0 || self.max_backtracks == 0 || self.fim_max_states == 0 {
            return Err(Error::Config("trpo counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    De,
    Rp,
    Trpo,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::De => "DE",
            Strategy::Rp => "RP",
            Strategy::Trpo => "TRPO",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DeConfig<T> {
    pub strategy: Strategy,
    /// Even number of perturbed policies deployed alongside the main one.
    pub k: usize,
    /// Env steps sampled from the main policy per iteration.
    pub beta: usize,
    /// Env steps sampled from each perturbed policy per iteration.
    pub beta_k: usize,
    pub schedule: RadiusSchedule<T>,
    pub gamma: T,
    pub value_epochs: usize,
    pub value_lr: T,
}

impl<T: Scalar> DeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k % 2 != 0 {
            return Err(Error::OddPerturbationCount(self.k));
        }
        if self.strategy == Strategy::Trpo && self.k != 0 {
            return Err(Error::Config("strategy TRPO requires k = 0".into()));
        }
        if self.beta == 0 {
            return Err(Error::Config("de.beta must be positive".into()));
        }
        if self.k > 0 && self.beta_k == 0 {
            return Err(Error::Config("de.beta_k must be positive when k > 0".into()));
        }
        Ok(())
    }
}

/// Flattened per-step data for the surrogate objective. `logp_gen` is the
/// log-probability under the policy that generated each step.
#[derive(Debug, Clone)]
pub struct SurrogateData<T> {
    pub states: Vec<Vector<T>>,
    pub actions: Vec<Vector<T>>,
    pub advantages: Vec<T>,
    pub logp_gen: Vec<T>,
    pub n_trajectories: usize,
}

/// Importance-ratio-weighted advantage objective, normalized per
/// trajectory so its gradient at the generating policy matches the
/// per-policy gradient estimate. Returns (value, any-ratio-clamped).
pub fn surrogate<T: Scalar>(
    policy: &GaussianMlpPolicy<T>,
    data: &SurrogateData<T>,
) -> Result<(T, bool)> {
    if data.states.is_empty() {
        return Err(Error::EmptyInput("surrogate data"));
    }
    let mut acc = T::zero();
    let mut clamped = false;
    let cap = T::lit(LOG_RATIO_CLAMP);
    for i in 0..data.states.len() {
        let mut log_ratio =
            policy.log_prob(&data.states[i], &data.actions[i])? - data.logp_gen[i];
        if log_ratio > cap {
            log_ratio = cap;
            clamped = true;
        }
        acc += log_ratio.exp() * data.advantages[i];
    }
    Ok((acc / T::lit(data.n_trajectories as f64), clamped))
}

#[derive(Debug, Clone)]
pub struct TrpoStepRecord<T> {
    pub accepted: bool,
    pub surrogate_improvement: T,
    /// Undamped quadratic KL of the accepted step (0 when rejected).
    pub step_kl: T,
    pub backtracks: usize,
    pub ratio_clamped: bool,
    /// CG search directions captured during the solve, for perturbation-set
    /// regeneration.
    pub directions: Vec<Vector<T>>,
}

/// One KL-constrained natural-gradient update: solve F x = g by CG, scale
/// to the trust-region boundary, then backtrack until the surrogate
/// improves and the quadratic KL stays within the bound. On rejection the
/// policy is left unchanged.
pub fn trpo_step<T: Scalar>(
    policy: &mut GaussianMlpPolicy<T>,
    gradient: &[T],
    fisher: &EmpiricalFisher<T>,
    data: &SurrogateData<T>,
    config: &TrpoConfig<T>,
) -> Result<TrpoStepRecord<T>> {
    if norm2(gradient) == T::zero() {
        return Ok(TrpoStepRecord {
            accepted: true,
            surrogate_improvement: T::zero(),
            step_kl: T::zero(),
            backtracks: 0,
            ratio_clamped: false,
            directions: Vec::new(),
        });
    }
    let cg = cg_solve(fisher, gradient, config.cg_iterations, config.cg_tol)?;
    let x = cg.solution;
    let xfx = dot(&x, &fisher.apply(&x));
    let mut record = TrpoStepRecord {
        accepted: false,
        surrogate_improvement: T::zero(),
        step_kl: T::zero(),
        backtracks: 0,
        ratio_clamped: false,
        directions: cg.directions,
    };
    if !(xfx > T::zero()) {
        return Ok(record);
    }
    let full_step = scaled((T::lit(2.0) * config.delta / xfx).sqrt(), &x);
    let (surr_old, clamped_old) = surrogate(policy, data)?;
    record.ratio_clamped = clamped_old;
    let mut frac = T::one();
    for backtrack in 0..=config.max_backtracks {
        let step = scaled(frac, &full_step);
        let kl = fisher.kl_quadratic(&step)?;
        if kl <= config.delta {
            let trial = policy.perturbed(&step)?;
            let (surr_new, clamped_new) = surrogate(&trial, data)?;
            if surr_new > surr_old {
                *policy = trial;
                record.accepted = true;
                record.surrogate_improvement = surr_new - surr_old;
                record.step_kl = kl;
                record.backtracks = backtrack;
                record.ratio_clamped = clamped_old || clamped_new;
                return Ok(record);
            }
        }
        frac *= config.backtrack_coeff;
    }
    record.backtracks = config.max_backtracks;
    Ok(record)
}

/// Per-iteration diagnostics, in reporting precision.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean undiscounted return per deployed policy tag.
    pub per_tag_return: Vec<(i32, f64)>,
    /// Mean of the per-tag mean returns (all deployed policies).
    pub aggregate_return: f64,
    pub main_return: f64,
    /// Total pairwise divergence of the deployed set under this iteration's
    /// Fisher; NaN when the set has no measurable pairs (zero set).
    pub pairwise_kl: f64,
    /// Trace of the covariance of per-policy gradient estimates; NaN when
    /// fewer than two contributors.
    pub cov_trace: f64,
    /// Radius of the deployed set.
    pub delta_p: f64,
    pub step_kl: f64,
    pub surrogate_improvement: f64,
    pub step_accepted: bool,
    pub ratio_clamped: bool,
    pub env_steps: usize,
}

impl PartialEq for IterationRecord {
    /// Bitwise float comparison so NaN sentinels compare equal — equality
    /// here means "the same recorded bytes", as used by determinism checks.
    fn eq(&self, other: &Self) -> bool {
        let f = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.iteration == other.iteration
            && self.per_tag_return.len() == other.per_tag_return.len()
            && self
                .per_tag_return
                .iter()
                .zip(&other.per_tag_return)
                .all(|((ta, ra), (tb, rb))| ta == tb && f(*ra, *rb))
            && f(self.aggregate_return, other.aggregate_return)
            && f(self.main_return, other.main_return)
            && f(self.pairwise_kl, other.pairwise_kl)
            && f(self.cov_trace, other.cov_trace)
            && f(self.delta_p, other.delta_p)
            && f(self.step_kl, other.step_kl)
            && f(self.surrogate_improvement, other.surrogate_improvement)
            && self.step_accepted == other.step_accepted
            && self.ratio_clamped == other.ratio_clamped
            && self.env_steps == other.env_steps
    }
}

struct Undamped<'a, T>(&'a EmpiricalFisher<T>);

impl<T: Scalar> LinOp<T> for Undamped<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, v: &[T]) -> Vector<T> {
        self.0.apply_undamped(v)
    }
}

fn tag_for(index: usize) -> i32 {
    let pair = (index / 2 + 1) as i32;
    if index % 2 == 0 {
        pair
    } else {
        -pair
    }
}

fn mean_return<T: Scalar>(trajs: &[Trajectory<T>]) -> f64 {
    let total: f64 = trajs
        .iter()
        .map(|t| t.rewards.iter().map(|r| r.to_f64_lossy()).sum::<f64>())
        .sum();
    total / trajs.len() as f64
}

/// One outer-loop iteration: deploy the main policy plus the perturbation
/// set, fit the value baseline on everything, aggregate per-policy
/// gradients, take a TRPO step, and regenerate the set from the CG runoff
/// at the scheduled radius (even when the step was rejected).
#[allow(clippy::too_many_arguments)]
pub fn de_iteration<T: Scalar, R: Rng + ?Sized>(
    policy: &mut GaussianMlpPolicy<T>,
    value_fn: &mut ValueFunction<T>,
    set: &PerturbationSet<T>,
    env: &EnvKind<T>,
    de: &DeConfig<T>,
    trpo: &TrpoConfig<T>,
    iteration: usize,
    rng: &mut R,
) -> Result<(PerturbationSet<T>, IterationRecord)> {
    let n = policy.n_params();
    for eps in &set.directions {
        if eps.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: eps.len() });
        }
    }
    // 1. collect: main policy (tag 0) then each perturbed policy in order
    let mut batches: Vec<(i32, GaussianMlpPolicy<T>, Vec<Trajectory<T>>)> = Vec::new();
    let main_trajs = collect_steps(env, policy, 0, rng, de.beta)?;
    batches.push((0, policy.clone(), main_trajs));
    for (idx, eps) in set.directions.iter().enumerate() {
        let tag = tag_for(idx);
        let perturbed = policy.perturbed(eps)?;
        let trajs = collect_steps(env, &perturbed, tag, rng, de.beta_k)?;
        batches.push((tag, perturbed, trajs));
    }
    let env_steps: usize =
        batches.iter().map(|(_, _, ts)| ts.iter().map(|t| t.len()).sum::<usize>()).sum();

    // 2. value baseline over all trajectories
    let all_trajs: Vec<Trajectory<T>> =
        batches.iter().flat_map(|(_, _, ts)| ts.iter().cloned()).collect();
    fit_value_td1(value_fn, &all_trajs, de.gamma, de.value_epochs, de.value_lr)?;

    // 3. advantages, standardized across the whole iteration batch
    let mut advs: Vec<Vec<Vector<T>>> = Vec::new();
    for (_, _, trajs) in &batches {
        let mut per_batch = Vec::new();
        for t in trajs {
            per_batch.push(advantages(t, value_fn, de.gamma)?);
        }
        advs.push(per_batch);
    }
    {
        let mut flat: Vec<Vector<T>> = advs.iter().flatten().cloned().collect();
        standardize(&mut flat);
        let mut it = flat.into_iter();
        for per_batch in advs.iter_mut() {
            for a in per_batch.iter_mut() {
                *a = it.next().expect("advantage group count");
            }
        }
    }

    // 4. per-tag gradients at the generating parameterizations, aggregated
    let mut per_policy: Vec<PerPolicyGradient<T>> = Vec::new();
    for ((_, gen_policy, trajs), adv) in batches.iter().zip(&advs) {
        per_policy.push(per_policy_gradient(trajs, gen_policy, adv)?);
    }
    let gradient = perturbed_gradient(&per_policy)?;
    let trace = if per_policy.len() >= 2 {
        cov_trace(&per_policy)?.to_f64_lossy()
    } else {
        f64::NAN
    };

    // 5. Fisher at the main policy over the visited state mixture, with
    // actions resampled from the main policy
    let all_states: Vec<&Vector<T>> =
        batches.iter().flat_map(|(_, _, ts)| ts.iter().flat_map(|t| t.states.iter())).collect();
    let stride = all_states.len().div_ceil(trpo.fim_max_states);
    let mut fim_samples: Vec<(Vector<T>, Vector<T>)> = Vec::new();
    for s in all_states.iter().step_by(stride) {
        let a = policy.act(s, rng)?;
        fim_samples.push(((*s).clone(), a));
    }
    let fisher = EmpiricalFisher::new(policy, &fim_samples, trpo.damping)?;

    // deployed-set divergence under this iteration's Fisher
    let pairwise_kl = if set.kind != PerturbationKind::Zero && set.len() >= 2 {
        pairwise_kl_total(set, &Undamped(&fisher))?.to_f64_lossy()
    } else {
        f64::NAN
    };

    // 6. surrogate data and the trust-region step
    let mut data = SurrogateData {
        states: Vec::new(),
        actions: Vec::new(),
        advantages: Vec::new(),
        logp_gen: Vec::new(),
        n_trajectories: all_trajs.len(),
    };
    for ((_, gen_policy, trajs), adv) in batches.iter().zip(&advs) {
        for (t, a) in trajs.iter().zip(adv) {
            for step in 0..t.len() {
                data.states.push(t.states[step].clone());
                data.actions.push(t.actions[step].clone());
                data.advantages.push(a[step]);
                data.logp_gen.push(gen_policy.log_prob(&t.states[step], &t.actions[step])?);
            }
        }
    }
    let step_record = trpo_step(policy, &gradient, &fisher, &data, trpo)?;
    assert!(
        step_record.step_kl <= trpo.delta + T::lit(1e-8),
        "accepted step exceeded the KL bound"
    );

    // 7. next perturbation set from this solve's CG runoff
    let next_radius = de.schedule.radius_at(iteration + 1);
    let undamped = Undamped(&fisher);
    let new_set = if de.k == 0 {
        PerturbationSet::zero(0, n)
    } else {
        match de.strategy {
            Strategy::De => conjugate_set(&step_record.directions, de.k, &undamped, next_radius)?,
            Strategy::Rp => random_set(n, de.k, &undamped, next_radius, rng)?,
            Strategy::Trpo => PerturbationSet::zero(0, n),
        }
    };
    // radius exactness, checked online against the construction-time Fisher
    if new_set.kind != PerturbationKind::Zero {
        for eps in &new_set.directions {
            let kl = fisher.kl_quadratic(eps)?;
            assert!(
                (kl - next_radius).abs() <= T::lit(1e-6) * next_radius,
                "perturbation radius drifted: {} vs {}",
                kl.to_f64_lossy(),
                next_radius.to_f64_lossy()
            );
        }
    }

    let per_tag_return: Vec<(i32, f64)> =
        batches.iter().map(|(tag, _, trajs)| (*tag, mean_return(trajs))).collect();
    let aggregate_return =
        per_tag_return.iter().map(|(_, r)| r).sum::<f64>() / per_tag_return.len() as f64;
    let record = IterationRecord {
        iteration,
        main_return: per_tag_return[0].1,
        aggregate_return,
        per_tag_return,
        pairwise_kl,
        cov_trace: trace,
        delta_p: set.radius.to_f64_lossy(),
        step_kl: step_record.step_kl.to_f64_lossy(),
        surrogate_improvement: step_record.surrogate_improvement.to_f64_lossy(),
        step_accepted: step_record.accepted,
        ratio_clamped: step_record.ratio_clamped,
        env_steps,
    };
    Ok((new_set, record))
}

/// Full training-run description for one seed.
#[derive(Debug, Clone)]
pub struct RunConfig<T> {
    pub env: EnvKind<T>,
    pub policy: PolicyConfig,
    pub de: DeConfig<T>,
    pub trpo: TrpoConfig<T>,
    pub iterations: usize,
    pub seed: u64,
}

/// Run the outer loop for `iterations` iterations from a fresh seed. The
/// initial perturbation set is k exact copies of the main policy (zero
/// offsets).
pub fn run<T: Scalar>(config: &RunConfig<T>) -> Result<Vec<IterationRecord>> {
    config.de.validate()?;
    config.trpo.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy: GaussianMlpPolicy<T> = GaussianMlpPolicy::init(&config.policy, &mut rng);
    let mut value_fn: ValueFunction<T> = ValueFunction::init(
        config.policy.state_dim,
        config.policy.hidden.clone(),
        config.policy.layer_norm,
        &mut rng,
    );
    let mut set = PerturbationSet::zero(config.de.k, policy.n_params());
    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let (next_set, record) = de_iteration(
            &mut policy,
            &mut value_fn,
            &set,
            &config.env,
            &config.de,
            &config.trpo,
            iteration,
            &mut rng,
        )?;
        set = next_set;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, Lqr};

    fn schedule() -> RadiusSchedule<f64> {
        RadiusSchedule::new(0.01, 50, 0.0001)
    }

    fn de_config(strategy: Strategy, k: usize) -> DeConfig<f64> {
        DeConfig {
            strategy,
            k,
            beta: 300,
            beta_k: 300,
            schedule: schedule(),
            gamma: 0.99,
            value_epochs: 5,
            value_lr: 0.01,
        }
    }

    fn bandit_policy(rng: &mut ChaCha8Rng) -> GaussianMlpPolicy<f64> {
        let mut cfg = PolicyConfig::new(1, 1);
        cfg.hidden = vec![8];
        cfg.layer_norm = false;
        GaussianMlpPolicy::init(&cfg, rng)
    }

    fn bandit_batch(
        policy: &GaussianMlpPolicy<f64>,
        target: f64,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> SurrogateData<f64> {
        let state = vec![0.0];
        let mut data = SurrogateData {
            states: Vec::new(),
            actions: Vec::new(),
            advantages: Vec::new(),
            logp_gen: Vec::new(),
            n_trajectories: m,
        };
        for _ in 0..m {
            let a = policy.act(&state, rng).unwrap();
            let r = -(a[0] - target) * (a[0] - target);
            data.logp_gen.push(policy.log_prob(&state, &a).unwrap());
            data.states.push(state.clone());
            data.actions.push(a);
            data.advantages.push(r);
        }
        let mut groups = vec![std::mem::take(&mut data.advantages)];
        standardize(&mut groups);
        data.advantages = groups.pop().unwrap();
        data
    }

    #[test]
    fn surrogate_unit_ratio_is_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let p = bandit_policy(&mut rng);
        let data = bandit_batch(&p, 0.3, 40, &mut rng);
        let (s, clamped) = surrogate(&p, &data).unwrap();
        let want: f64 = data.advantages.iter().sum::<f64>() / data.n_trajectories as f64;
        assert!((s - want).abs() < 1e-12);
        assert!(!clamped);
    }

    #[test]
    fn surrogate_linear_in_advantages() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = bandit_policy(&mut rng);
        let q = p.perturbed(&vec![0.01; p.n_params()]).unwrap();
        let mut data = bandit_batch(&p, 0.3, 40, &mut rng);
        let (s1, _) = surrogate(&q, &data).unwrap();
        for a in data.advantages.iter_mut() {
            *a *= 2.0;
        }
        let (s2, _) = surrogate(&q, &data).unwrap();
        assert!((s2 - 2.0 * s1).abs() < 1e-10);
    }

    #[test]
    fn surrogate_gradient_matches_pg_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let p = bandit_policy(&mut rng);
        let data = bandit_batch(&p, 0.5, 25, &mut rng);
        // one step per trajectory here, so the PG estimate is
        // (1/m) sum score * adv
        let trajs: Vec<Trajectory<f64>> = (0..data.states.len())
            .map(|i| Trajectory {
                states: vec![data.states[i].clone()],
                actions: vec![data.actions[i].clone()],
                rewards: vec![0.0],
                policy_tag: 0,
            })
            .collect();
        let advs: Vec<Vector<f64>> = data.advantages.iter().map(|&a| vec![a]).collect();
        let g = per_policy_gradient(&trajs, &p, &advs).unwrap();
        let h = 1e-6;
        for i in (0..p.n_params()).step_by(3) {
            let mut dp = vec![0.0; p.n_params()];
            dp[i] = h;
            let (up, _) = surrogate(&p.perturbed(&dp).unwrap(), &data).unwrap();
            dp[i] = -h;
            let (dn, _) = surrogate(&p.perturbed(&dp).unwrap(), &data).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - g.gradient[i]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "param {i}: fd {fd} analytic {}",
                g.gradient[i]
            );
        }
    }

    #[test]
    fn trpo_step_zero_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut p = bandit_policy(&mut rng);
        let before = p.get_flat();
        let data = bandit_batch(&p, 0.2, 10, &mut rng);
        let samples: Vec<(Vector<f64>, Vector<f64>)> = data
            .states
            .iter()
            .zip(&data.actions)
            .map(|(s, a)| (s.clone(), a.clone()))
            .collect();
        let fisher = EmpiricalFisher::new(&p, &samples, 1e-3).unwrap();
        let zero = vec![0.0; p.n_params()];
        let rec = trpo_step(&mut p, &zero, &fisher, &data, &TrpoConfig::default()).unwrap();
        assert!(rec.accepted);
        assert_eq!(rec.step_kl, 0.0);
        assert_eq!(p.get_flat(), before);
    }

    #[test]
    fn trpo_step_respects_kl_bound_and_improves() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut p = bandit_policy(&mut rng);
        let cfg = TrpoConfig::default();
        for _ in 0..5 {
            let data = bandit_batch(&p, 0.5, 400, &mut rng);
            let samples: Vec<(Vector<f64>, Vector<f64>)> = data
                .states
                .iter()
                .zip(&data.actions)
                .map(|(s, a)| (s.clone(), a.clone()))
                .collect();
            let fisher = EmpiricalFisher::new(&p, &samples, cfg.damping).unwrap();
            let mut g = vec![0.0; p.n_params()];
            for i in 0..data.states.len() {
                p.score_into(
                    &data.states[i],
                    &data.actions[i],
                    data.advantages[i] / data.n_trajectories as f64,
                    &mut g,
                )
                .unwrap();
            }
            let rec = trpo_step(&mut p, &g, &fisher, &data, &cfg).unwrap();
            if rec.accepted {
                assert!(rec.step_kl <= cfg.delta + 1e-8);
                assert!(rec.surrogate_improvement > 0.0);
            }
            assert!(!rec.directions.is_empty());
        }
    }

    #[test]
    fn trpo_steps_solve_quadratic_bandit() {
        let target = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mut p = bandit_policy(&mut rng);
        let cfg = TrpoConfig::default();
        let mut ok = false;
        for _ in 0..200 {
            let data = bandit_batch(&p, target, 200, &mut rng);
            let samples: Vec<(Vector<f64>, Vector<f64>)> = data
                .states
                .iter()
                .zip(&data.actions)
                .map(|(s, a)| (s.clone(), a.clone()))
                .collect();
            let fisher = EmpiricalFisher::new(&p, &samples, cfg.damping).unwrap();
            let mut g = vec![0.0; p.n_params()];
            for i in 0..data.states.len() {
                p.score_into(
                    &data.states[i],
                    &data.actions[i],
                    data.advantages[i] / data.n_trajectories as f64,
                    &mut g,
                )
                .unwrap();
            }
            trpo_step(&mut p, &g, &fisher, &data, &cfg).unwrap();
            let mu = p.mean(&[0.0]).unwrap()[0];
            if (mu - target).abs() <= 0.05 {
                ok = true;
                break;
            }
        }
        let mu = p.mean(&[0.0]).unwrap()[0];
        assert!(ok, "bandit mean {mu} did not reach {target}");
    }

    fn lqr_env() -> EnvKind<f64> {
        EnvKind::Lqr(Lqr::double_integrator())
    }

    fn run_config(strategy: Strategy, k: usize, seed: u64) -> RunConfig<f64> {
        let mut policy = PolicyConfig::new(2, 1);
        policy.hidden = vec![16];
        RunConfig {
            env: lqr_env(),
            policy,
            de: de_config(strategy, k),
            trpo: TrpoConfig::default(),
            iterations: 3,
            seed,
        }
    }

    #[test]
    fn run_zero_iterations_is_empty() {
        let mut cfg = run_config(Strategy::Trpo, 0, 1);
        cfg.iterations = 0;
        assert!(run(&cfg).unwrap().is_empty());
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = run_config(Strategy::De, 4, 7);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn de_with_k0_matches_trpo() {
        let a = run(&run_config(Strategy::Trpo, 0, 9)).unwrap();
        let b = run(&run_config(Strategy::De, 0, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_accounting_within_bounds() {
        for strategy in [Strategy::De, Strategy::Rp] {
            let cfg = run_config(strategy, 4, 11);
            let records = run(&cfg).unwrap();
            let horizon = cfg.env.horizon();
            let k = cfg.de.k;
            let lo = cfg.de.beta + k * cfg.de.beta_k;
            let hi = lo + (k + 1) * horizon;
            for r in &records {
                assert!(r.env_steps >= lo && r.env_steps < hi, "steps {}", r.env_steps);
                assert_eq!(r.per_tag_return.len(), k + 1);
                assert!(r.step_kl <= 0.01 + 1e-8);
            }
            // deployed radius follows the schedule (first set is zero)
            assert_eq!(records[0].delta_p, 0.0);
            assert!((records[1].delta_p - cfg.de.schedule.radius_at(1)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut de = de_config(Strategy::Trpo, 2);
        assert!(de.validate().is_err()); // TRPO with k != 0
        de = de_config(Strategy::De, 3);
        assert!(de.validate().is_err()); // odd k
        de = de_config(Strategy::De, 4);
        de.beta = 0;
        assert!(de.validate().is_err());
        let mut trpo: TrpoConfig<f64> = TrpoConfig::default();
        trpo.delta = 0.0;
        assert!(trpo.validate().is_err());
    }

    #[test]
    fn perturbed_tags_are_symmetric() {
        assert_eq!(tag_for(0), 1);
        assert_eq!(tag_for(1), -1);
        assert_eq!(tag_for(4), 3);
        assert_eq!(tag_for(5), -3);
    }

    #[test]
    fn gradient_aggregation_includes_all_tags() {
        // a run with k = 2 must deploy tags 0, 1, -1 every iteration
        let cfg = run_config(Strategy::De, 2, 13);
        let records = run(&cfg).unwrap();
        for r in &records {
            let mut tags: Vec<i32> = r.per_tag_return.iter().map(|(t, _)| *t).collect();
            tags.sort_unstable();
            assert_eq!(tags, vec![-1, 0, 1]);
        }
    }
}
