//! Desk-scale continuous-control environments with a uniform interface,
//! trajectory rollout, and an analytic LQR performance oracle.
//!
//! Actions are clipped to [-1, 1] per dimension before dynamics in every
//! environment, so perturbed policies cannot destabilize integration.
//! Episodes end at the horizon; Pendulum and PointMass have no terminal
//! predicate, LQR ends early only on state blow-up (reported as an error).

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::policy::GaussianMlpPolicy;
use crate::scalar::Scalar;
use rand::Rng;

/// Trajectory of (state, action, reward) transitions; `rewards[t]` is the
/// reward following `actions[t]`. `policy_tag` identifies the generating
/// policy: 0 = main, +i / -i = the i-th conjugate pair.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub states: Vec<Vector<T>>,
    pub actions: Vec<Vector<T>>,
    pub rewards: Vec<T>,
    pub policy_tag: i32,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> T {
        self.rewards.iter().copied().sum()
    }
}

pub trait Environment<T: Scalar> {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T>;
    /// One transition; the action is clipped internally. `done` marks a
    /// terminal predicate, not the horizon (rollout enforces the horizon).
    fn step(&self, state: &[T], action: &[T]) -> Result<(Vector<T>, T, bool)>;
}

fn clip_action<T: Scalar>(action: &[T]) -> Vector<T> {
    action.iter().map(|&a| a.max(-T::one()).min(T::one())).collect()
}

/// Linear-quadratic regulator: s' = A s + B a, r = -scale (s'Q s + a'R a),
/// Gaussian start.
#[derive(Debug, Clone)]
pub struct Lqr<T> {
    pub a: DenseMatrix<T>,
    pub b: DenseMatrix<T>,
    pub q: DenseMatrix<T>,
    pub r: DenseMatrix<T>,
    pub start_mean: Vector<T>,
    pub start_std: T,
    pub horizon: usize,
    pub reward_scale: T,
}

impl<T: Scalar> Lqr<T> {
    /// Discrete double integrator with one force input.
    pub fn double_integrator() -> Self {
        let dt = T::lit(0.1);
        let a = DenseMatrix::from_rows(&[&[T::one(), dt], &[T::zero(), T::one()]]);
        let b = DenseMatrix::from_rows(&[&[T::zero()], &[dt]]);
        let q = DenseMatrix::identity(2);
        let r = DenseMatrix::identity(1).scale(T::lit(0.1));
        Self {
            a,
            b,
            q,
            r,
            start_mean: vec![T::one(), T::zero()],
            start_std: T::lit(0.3),
            horizon: 50,
            reward_scale: T::lit(0.5),
        }
    }
}

impl<T: Scalar> Environment<T> for Lqr<T> {
    fn state_dim(&self) -> usize {
        self.a.n_rows
    }
    fn action_dim(&self) -> usize {
        self.b.n_cols
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T> {
        self.start_mean
            .iter()
            .map(|&m| m + self.start_std * T::sample_standard_normal(rng))
            .collect()
    }
    fn step(&self, state: &[T], action: &[T]) -> Result<(Vector<T>, T, bool)> {
        if state.len() != self.state_dim() {
            return Err(Error::DimensionMismatch { expected: self.state_dim(), got: state.len() });
        }
        let a = clip_action(action);
        let mut next = self.a.matvec(state);
        crate::linalg::axpy(T::one(), &self.b.matvec(&a), &mut next);
        let state_cost = crate::linalg::dot(state, &self.q.matvec(state));
        let action_cost = crate::linalg::dot(&a, &self.r.matvec(&a));
        let reward = -self.reward_scale * (state_cost + action_cost);
        if !crate::linalg::all_finite(&next) || !reward.is_finite() {
            return Err(Error::NonFinite("lqr step"));
        }
        Ok((next, reward, false))
    }
}

/// Expected discounted return of the optimal linear controller, via
/// discounted Riccati iteration to a fixed point (includes the env's
/// reward scale). Ignores action clipping, so it is an upper-bound oracle
/// for starts near the origin.
pub fn lqr_optimal_return<T: Scalar>(env: &Lqr<T>, gamma: T) -> Result<T> {
    let p = riccati_fixed_point(env, gamma)?;
    let mu_cost = crate::linalg::dot(&env.start_mean, &p.matvec(&env.start_mean));
    let mut trace = T::zero();
    for i in 0..p.n_rows {
        trace += p[(i, i)];
    }
    Ok(-env.reward_scale * (mu_cost + env.start_std * env.start_std * trace))
}

fn riccati_fixed_point<T: Scalar>(env: &Lqr<T>, gamma: T) -> Result<DenseMatrix<T>> {
    let mut p = env.q.clone();
    let at = env.a.transpose();
    let bt = env.b.transpose();
    let m = env.b.n_cols;
    for _ in 0..100_000 {
        // P' = Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA
        let pa = p.matmul(&env.a);
        let pb = p.matmul(&env.b);
        let inner = env.r.add(&bt.matmul(&pb).scale(gamma));
        let btpa = bt.matmul(&pa);
        // columns of (R + g B'PB)^-1 B'PA
        let mut solved = DenseMatrix::zeros(m, btpa.n_cols);
        for c in 0..btpa.n_cols {
            let col: Vector<T> = (0..m).map(|r| btpa[(r, c)]).collect();
            let x = inner.solve(&col)?;
            for r in 0..m {
                solved[(r, c)] = x[r];
            }
        }
        let next = env
            .q
            .add(&at.matmul(&pa).scale(gamma))
            .add(&at.matmul(&pb.matmul(&solved)).scale(-gamma * gamma));
        let mut diff = T::zero();
        for i in 0..next.data.len() {
            diff = diff.max((next.data[i] - p.data[i]).abs());
        }
        p = next;
        if p.max_abs() > T::lit(1e12) {
            return Err(Error::RiccatiDiverged);
        }
        if diff < T::lit(1e-10) {
            return Ok(p);
        }
    }
    Err(Error::RiccatiDiverged)
}

/// Optimal linear gain K (a = -K s) for the discounted problem.
pub fn lqr_optimal_gain<T: Scalar>(env: &Lqr<T>, gamma: T) -> Result<DenseMatrix<T>> {
    let p = riccati_fixed_point(env, gamma)?;
    let bt = env.b.transpose();
    let inner = env.r.add(&bt.matmul(&p.matmul(&env.b)).scale(gamma));
    let btpa = bt.matmul(&p.matmul(&env.a)).scale(gamma);
    let m = env.b.n_cols;
    let mut k = DenseMatrix::zeros(m, env.a.n_cols);
    for c in 0..env.a.n_cols {
        let col: Vector<T> = (0..m).map(|r| btpa[(r, c)]).collect();
        let x = inner.solve(&col)?;
        for r in 0..m {
            k[(r, c)] = x[r];
        }
    }
    Ok(k)
}

/// 2-D point mass pushed by a force action toward a goal.
#[derive(Debug, Clone)]
pub struct PointMass<T> {
    pub goal: Vector<T>,
    pub dt: T,
    pub drag: T,
    pub start_box: T,
    pub horizon: usize,
    pub reward_scale: T,
}

impl<T: Scalar> Default for PointMass<T> {
    fn default() -> Self {
        Self {
            goal: vec![T::lit(1.0), T::lit(1.0)],
            dt: T::lit(0.1),
            drag: T::lit(0.95),
            start_box: T::one(),
            horizon: 100,
            reward_scale: T::lit(0.05),
        }
    }
}

impl<T: Scalar> Environment<T> for PointMass<T> {
    fn state_dim(&self) -> usize {
        4
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T> {
        // position uniform in [-start_box, start_box]^2, zero velocity
        let b = self.start_box.to_f64_lossy();
        vec![
            T::lit(rng.gen_range(-b..b)),
            T::lit(rng.gen_range(-b..b)),
            T::zero(),
            T::zero(),
        ]
    }
    fn step(&self, state: &[T], action: &[T]) -> Result<(Vector<T>, T, bool)> {
        if state.len() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: state.len() });
        }
        let a = clip_action(action);
        let vx = self.drag * state[2] + self.dt * a[0];
        let vy = self.drag * state[3] + self.dt * a[1];
        let px = state[0] + self.dt * vx;
        let py = state[1] + self.dt * vy;
        let dx = state[0] - self.goal[0];
        let dy = state[1] - self.goal[1];
        let reward = -self.reward_scale * (dx * dx + dy * dy)
            - T::lit(0.01) * (a[0] * a[0] + a[1] * a[1]);
        let next = vec![px, py, vx, vy];
        if !crate::linalg::all_finite(&next) {
            return Err(Error::NonFinite("point mass step"));
        }
        Ok((next, reward, false))
    }
}

/// Torque-limited pendulum swing-up; state (angle from upright, angular
/// velocity), semi-implicit Euler integration.
#[derive(Debug, Clone)]
pub struct Pendulum<T> {
    pub dt: T,
    pub gravity: T,
    pub max_torque: T,
    pub max_speed: T,
    pub horizon: usize,
    pub reward_scale: T,
}

impl<T: Scalar> Default for Pendulum<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(0.05),
            gravity: T::lit(10.0),
            max_torque: T::lit(2.0),
            max_speed: T::lit(8.0),
            horizon: 200,
            reward_scale: T::lit(0.025),
        }
    }
}

fn wrap_angle<T: Scalar>(theta: T) -> T {
    let pi = T::lit(std::f64::consts::PI);
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let mut t = theta;
    while t > pi {
        t -= two_pi;
    }
    while t < -pi {
        t += two_pi;
    }
    t
}

impl<T: Scalar> Environment<T> for Pendulum<T> {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T> {
        vec![
            T::lit(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)),
            T::lit(rng.gen_range(-1.0..1.0)),
        ]
    }
    fn step(&self, state: &[T], action: &[T]) -> Result<(Vector<T>, T, bool)> {
        if state.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: state.len() });
        }
        let a = clip_action(action);
        let torque = self.max_torque * a[0];
        let theta = state[0];
        let thdot = state[1];
        let three = T::lit(3.0);
        let two = T::lit(2.0);
        let accel = three * self.gravity / two * theta.sin() + three * torque;
        let thdot_new = (thdot + self.dt * accel).max(-self.max_speed).min(self.max_speed);
        let theta_new = wrap_angle(theta + self.dt * thdot_new);
        let cost = theta * theta + T::lit(0.1) * thdot * thdot
            + T::lit(0.001) * torque * torque;
        let reward = -self.reward_scale * cost;
        let next = vec![theta_new, thdot_new];
        if !crate::linalg::all_finite(&next) {
            return Err(Error::NonFinite("pendulum step"));
        }
        Ok((next, reward, false))
    }
}

/// Provided environments, selectable from config.
#[derive(Debug, Clone)]
pub enum EnvKind<T> {
    Lqr(Lqr<T>),
    PointMass(PointMass<T>),
    Pendulum(Pendulum<T>),
}

impl<T: Scalar> Environment<T> for EnvKind<T> {
    fn state_dim(&self) -> usize {
        match self {
            EnvKind::Lqr(e) => e.state_dim(),
            EnvKind::PointMass(e) => e.state_dim(),
            EnvKind::Pendulum(e) => e.state_dim(),
        }
    }
    fn action_dim(&self) -> usize {
        match self {
            EnvKind::Lqr(e) => e.action_dim(),
            EnvKind::PointMass(e) => e.action_dim(),
            EnvKind::Pendulum(e) => e.action_dim(),
        }
    }
    fn horizon(&self) -> usize {
        match self {
            EnvKind::Lqr(e) => e.horizon(),
            EnvKind::PointMass(e) => e.horizon(),
            EnvKind::Pendulum(e) => e.horizon(),
        }
    }
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T> {
        match self {
            EnvKind::Lqr(e) => e.reset(rng),
            EnvKind::PointMass(e) => e.reset(rng),
            EnvKind::Pendulum(e) => e.reset(rng),
        }
    }
    fn step(&self, state: &[T], action: &[T]) -> Result<(Vector<T>, T, bool)> {
        match self {
            EnvKind::Lqr(e) => e.step(state, action),
            EnvKind::PointMass(e) => e.step(state, action),
            EnvKind::Pendulum(e) => e.step(state, action),
        }
    }
}

/// Run the policy in the environment until the horizon, a terminal state,
/// or `max_steps`, whichever comes first.
pub fn rollout<T: Scalar, E: Environment<T>, R: Rng + ?Sized>(
    env: &E,
    policy: &GaussianMlpPolicy<T>,
    tag: i32,
    rng: &mut R,
    max_steps: usize,
) -> Result<Trajectory<T>> {
    let mut traj = Trajectory {
        states: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        policy_tag: tag,
    };
    if max_steps == 0 {
        return Ok(traj);
    }
    let mut state = env.reset(rng);
    let limit = max_steps.min(env.horizon());
    for _ in 0..limit {
        let action = policy.act(&state, rng)?;
        let (next, reward, done) = env.step(&state, &action)?;
        traj.states.push(state);
        traj.actions.push(action);
        traj.rewards.push(reward);
        state = next;
        if done {
            break;
        }
    }
    Ok(traj)
}

/// Collect whole trajectories until at least `min_steps` env steps are
/// gathered (overshoot bounded by one horizon).
pub fn collect_steps<T: Scalar, E: Environment<T>, R: Rng + ?Sized>(
    env: &E,
    policy: &GaussianMlpPolicy<T>,
    tag: i32,
    rng: &mut R,
    min_steps: usize,
) -> Result<Vec<Trajectory<T>>> {
    let mut out = Vec::new();
    let mut steps = 0;
    while steps < min_steps {
        let traj = rollout(env, policy, tag, rng, usize::MAX)?;
        steps += traj.len();
        out.push(traj);
        if out.last().map(|t| t.is_empty()).unwrap_or(false) {
            return Err(Error::EmptyInput("collect_steps produced empty trajectory"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lqr_zero_variance_start_is_mean() {
        let mut env: Lqr<f64> = Lqr::double_integrator();
        env.start_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(env.reset(&mut rng), vec![1.0, 0.0]);
    }

    #[test]
    fn reset_deterministic_under_seed() {
        let env: Lqr<f64> = Lqr::double_integrator();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(env.reset(&mut r1), env.reset(&mut r2));
    }

    #[test]
    fn lqr_step_direct_arithmetic() {
        // A = I, B = I, Q = I, R = I: s'=s+a, r = -(s's + a'a)
        let env: Lqr<f64> = Lqr {
            a: DenseMatrix::identity(2),
            b: DenseMatrix::identity(2),
            q: DenseMatrix::identity(2),
            r: DenseMatrix::identity(2),
            start_mean: vec![0.0, 0.0],
            start_std: 0.0,
            horizon: 10,
            reward_scale: 1.0,
        };
        let (next, r, done) = env.step(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(next, vec![0.0, 0.0]);
        assert_eq!(r, -2.0);
        assert!(!done);
    }

    #[test]
    fn point_mass_zero_action_zero_velocity() {
        let env: PointMass<f64> = PointMass::default();
        let (next, _, _) = env.step(&[0.3, -0.4, 0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(next[0], 0.3);
        assert_eq!(next[1], -0.4);
    }

    #[test]
    fn point_mass_start_within_box() {
        let env: PointMass<f64> = PointMass::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s = env.reset(&mut rng);
            assert!(s[0].abs() <= 1.0 && s[1].abs() <= 1.0);
            assert_eq!(s[2], 0.0);
            assert_eq!(s[3], 0.0);
        }
    }

    #[test]
    fn pendulum_energy_bounded_without_torque() {
        let env: Pendulum<f64> = Pendulum::default();
        let energy = |th: f64, thdot: f64| 0.5 * thdot * thdot + 1.5 * env.gravity * th.cos();
        let mut state = vec![2.0, 0.0];
        let e0 = energy(state[0], state[1]);
        let mut max_drift: f64 = 0.0;
        for _ in 0..env.horizon {
            let (next, _, _) = env.step(&state, &[0.0]).unwrap();
            max_drift = max_drift.max((energy(next[0], next[1]) - e0).abs());
            state = next;
        }
        // semi-implicit Euler: bounded oscillation, no secular growth
        assert!(max_drift <= 0.05 * (e0.abs() + 1.5 * env.gravity), "drift {max_drift}");
    }

    #[test]
    fn rollout_zero_steps_empty() {
        let env: Lqr<f64> = Lqr::double_integrator();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GaussianMlpPolicy::init(&PolicyConfig::new(2, 1), &mut rng);
        let t = rollout(&env, &p, 0, &mut rng, 0).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn rollout_seeded_reproducible() {
        let env: Pendulum<f64> = Pendulum::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GaussianMlpPolicy::init(&PolicyConfig::new(2, 1), &mut rng);
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        let t1 = rollout(&env, &p, 0, &mut r1, usize::MAX).unwrap();
        let t2 = rollout(&env, &p, 0, &mut r2, usize::MAX).unwrap();
        assert_eq!(t1.states, t2.states);
        assert_eq!(t1.actions, t2.actions);
        assert_eq!(t1.rewards, t2.rewards);
        assert_eq!(t1.len(), env.horizon());
    }

    #[test]
    fn riccati_scalar_fixed_point() {
        // scalar a=1, b=1, q=1, r=1, gamma=0.9
        let env: Lqr<f64> = Lqr {
            a: DenseMatrix::from_rows(&[&[1.0]]),
            b: DenseMatrix::from_rows(&[&[1.0]]),
            q: DenseMatrix::from_rows(&[&[1.0]]),
            r: DenseMatrix::from_rows(&[&[1.0]]),
            start_mean: vec![1.0],
            start_std: 0.0,
            horizon: 10,
            reward_scale: 1.0,
        };
        let p = riccati_fixed_point(&env, 0.9).unwrap()[(0, 0)];
        // p = 1 + 0.9 p - 0.81 p^2/(1 + 0.9 p)
        let resid = 1.0 + 0.9 * p - 0.81 * p * p / (1.0 + 0.9 * p) - p;
        assert!(resid.abs() < 1e-8, "p {p} resid {resid}");
        let j = lqr_optimal_return(&env, 0.9).unwrap();
        assert!((j + p).abs() < 1e-8);
    }

    #[test]
    fn riccati_degenerate_dynamics() {
        // A = 0: state dies immediately; optimal a = 0; J = -E[s0' Q s0]
        let env: Lqr<f64> = Lqr {
            a: DenseMatrix::zeros(2, 2),
            b: DenseMatrix::identity(2),
            q: DenseMatrix::identity(2),
            r: DenseMatrix::identity(2),
            start_mean: vec![1.0, 2.0],
            start_std: 0.5,
            horizon: 10,
            reward_scale: 1.0,
        };
        let j = lqr_optimal_return(&env, 0.9).unwrap();
        let want = -(1.0 + 4.0 + 2.0 * 0.25);
        assert!((j - want).abs() < 1e-8, "j {j} want {want}");
    }

    #[test]
    fn optimal_gain_beats_scalar_grid() {
        let env: Lqr<f64> = Lqr {
            a: DenseMatrix::from_rows(&[&[1.0]]),
            b: DenseMatrix::from_rows(&[&[1.0]]),
            q: DenseMatrix::from_rows(&[&[1.0]]),
            r: DenseMatrix::from_rows(&[&[1.0]]),
            start_mean: vec![0.5],
            start_std: 0.0,
            horizon: 200,
            reward_scale: 1.0,
        };
        let gamma = 0.95;
        let k_opt = lqr_optimal_gain(&env, gamma).unwrap()[(0, 0)];
        let eval = |k: f64| -> f64 {
            let mut s = 0.5;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..env.horizon {
                let a = (-k * s).clamp(-1.0, 1.0);
                ret += disc * -(s * s + a * a);
                s += a;
                disc *= gamma;
            }
            ret
        };
        let opt_ret = eval(k_opt);
        for i in 0..=40 {
            let k = i as f64 * 0.05;
            assert!(opt_ret >= eval(k) - 1e-9, "gain {k} beats optimal {k_opt}");
        }
    }
}
