//! Gaussian MLP policy with analytic log-probability gradients, flat
//! parameter access, Fisher-vector products from sampled data, and both
//! quadratic-approximate and exact-Gaussian KL divergence.

use crate::error::{Error, Result};
use crate::linalg::{dot, LinOp, Vector};
use crate::nn::{Mlp, MlpShape};
use crate::scalar::Scalar;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const LOG_STD_MIN: f64 = -2.5;
pub const LOG_STD_MAX: f64 = -0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl PolicyConfig {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            hidden: vec![32, 32],
            layer_norm: true,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        }
    }
}

/// Policy mapping a state to the mean of a diagonal Gaussian; the log
/// standard deviation is a state-independent parameter per action dimension,
/// smoothly squashed into `[log_std_min, log_std_max]`.
///
/// Flat layout: MLP block (see `nn`), then the raw log-std parameters.
#[derive(Debug, Clone)]
pub struct GaussianMlpPolicy<T> {
    pub mean_net: Mlp<T>,
    pub raw_log_std: Vec<T>,
    pub log_std_min: T,
    pub log_std_max: T,
}

impl<T: Scalar> GaussianMlpPolicy<T> {
    pub fn init<R: Rng + ?Sized>(config: &PolicyConfig, rng: &mut R) -> Self {
        let shape = MlpShape {
            input_dim: config.state_dim,
            hidden: config.hidden.clone(),
            output_dim: config.action_dim,
            layer_norm: config.layer_norm,
        };
        // final layer scaled so the initial policy is near zero-mean
        let mean_net = Mlp::init(shape, 0.01, rng);
        Self {
            mean_net,
            raw_log_std: vec![T::zero(); config.action_dim],
            log_std_min: T::lit(config.log_std_min),
            log_std_max: T::lit(config.log_std_max),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.shape.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.shape.output_dim
    }

    pub fn n_params(&self) -> usize {
        self.mean_net.n_params() + self.raw_log_std.len()
    }

    fn sigmoid(x: T) -> T {
        T::one() / (T::one() + (-x).exp())
    }

    /// Squashed log-std for action dimension `d`.
    pub fn log_std(&self, d: usize) -> T {
        self.log_std_min + (self.log_std_max - self.log_std_min) * Self::sigmoid(self.raw_log_std[d])
    }

    /// d(log_std)/d(raw) for action dimension `d`.
    pub fn log_std_grad(&self, d: usize) -> T {
        let s = Self::sigmoid(self.raw_log_std[d]);
        (self.log_std_max - self.log_std_min) * s * (T::one() - s)
    }

    pub fn std(&self, d: usize) -> T {
        self.log_std(d).exp()
    }

    pub fn mean(&self, state: &[T]) -> Result<Vector<T>> {
        self.mean_net.forward(state)
    }

    pub fn get_flat(&self) -> Vector<T> {
        let mut flat = self.mean_net.params.clone();
        flat.extend_from_slice(&self.raw_log_std);
        flat
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: flat.len() });
        }
        if !crate::linalg::all_finite(flat) {
            return Err(Error::NonFinite("set_flat"));
        }
        let nm = self.mean_net.n_params();
        self.mean_net.params.copy_from_slice(&flat[..nm]);
        self.raw_log_std.copy_from_slice(&flat[nm..]);
        Ok(())
    }

    pub fn perturbed(&self, delta: &[T]) -> Result<Self> {
        let mut flat = self.get_flat();
        if delta.len() != flat.len() {
            return Err(Error::DimensionMismatch { expected: flat.len(), got: delta.len() });
        }
        for i in 0..flat.len() {
            flat[i] += delta[i];
        }
        let mut p = self.clone();
        p.set_flat(&flat)?;
        Ok(p)
    }

    /// Sample an action: mean(state) + exp(log_std) .* z, z ~ N(0, I).
    pub fn act<R: Rng + ?Sized>(&self, state: &[T], rng: &mut R) -> Result<Vector<T>> {
        let mean = self.mean(state)?;
        let mut action = mean;
        for d in 0..action.len() {
            let z = T::sample_standard_normal(rng);
            action[d] += self.std(d) * z;
        }
        if !crate::linalg::all_finite(&action) {
            return Err(Error::NonFinite("act"));
        }
        Ok(action)
    }

    /// Exact diagonal-Gaussian log-density of `action` given the state.
    pub fn log_prob(&self, state: &[T], action: &[T]) -> Result<T> {
        if action.len() != self.action_dim() {
            return Err(Error::DimensionMismatch { expected: self.action_dim(), got: action.len() });
        }
        let mean = self.mean(state)?;
        let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let mut lp = T::zero();
        for d in 0..action.len() {
            let ls = self.log_std(d);
            let z = (action[d] - mean[d]) / ls.exp();
            lp = lp - ls - T::lit(0.5) * z * z - half_log_2pi;
        }
        if !lp.is_finite() {
            return Err(Error::NonFinite("log_prob"));
        }
        Ok(lp)
    }

    /// Gradient of `log_prob` with respect to the flat parameters,
    /// accumulated into `grad` with weight `scale`.
    pub fn score_into(&self, state: &[T], action: &[T], scale: T, grad: &mut [T]) -> Result<()> {
        debug_assert_eq!(grad.len(), self.n_params());
        let cache = self.mean_net.forward_cached(state)?;
        let mean = &cache.output;
        if action.len() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: action.len() });
        }
        let nm = self.mean_net.n_params();
        let mut dmean = vec![T::zero(); mean.len()];
        for d in 0..mean.len() {
            let sigma = self.std(d);
            let z = (action[d] - mean[d]) / sigma;
            dmean[d] = scale * z / sigma;
            // d logp / d log_std = z^2 - 1, chained through the squash
            grad[nm + d] += scale * (z * z - T::one()) * self.log_std_grad(d);
        }
        self.mean_net.backward(&cache, &dmean, &mut grad[..nm]);
        if !crate::linalg::all_finite(grad) {
            return Err(Error::NonFinite("score"));
        }
        Ok(())
    }

    pub fn score(&self, state: &[T], action: &[T]) -> Result<Vector<T>> {
        let mut grad = vec![T::zero(); self.n_params()];
        self.score_into(state, action, T::one(), &mut grad)?;
        Ok(grad)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        write_checkpoint(self, &mut f)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        read_checkpoint(&mut f)
    }
}

/// Mean over `states` of the closed-form KL between the two policies'
/// per-state diagonal Gaussians. Oracle for `kl_quadratic`.
pub fn exact_gaussian_kl<T: Scalar>(
    policy_a: &GaussianMlpPolicy<T>,
    policy_b: &GaussianMlpPolicy<T>,
    states: &[Vector<T>],
) -> Result<T> {
    if states.is_empty() {
        return Err(Error::EmptyInput("exact_gaussian_kl states"));
    }
    if policy_a.action_dim() != policy_b.action_dim() {
        return Err(Error::DimensionMismatch {
            expected: policy_a.action_dim(),
            got: policy_b.action_dim(),
        });
    }
    let half = T::lit(0.5);
    let mut total = T::zero();
    for s in states {
        let ma = policy_a.mean(s)?;
        let mb = policy_b.mean(s)?;
        for d in 0..ma.len() {
            let lsa = policy_a.log_std(d);
            let lsb = policy_b.log_std(d);
            let va = (T::lit(2.0) * lsa).exp();
            let vb = (T::lit(2.0) * lsb).exp();
            let dm = ma[d] - mb[d];
            total = total + (lsb - lsa) + (va + dm * dm) / (T::lit(2.0) * vb) - half;
        }
    }
    Ok(total / T::lit(states.len() as f64))
}

/// Empirical Fisher: mean of score outer products over a batch of
/// (state, action) samples, plus damping. `apply` is the damped operator
/// used inside CG; KL measurement uses the undamped form.
pub struct EmpiricalFisher<T> {
    scores: Vec<Vector<T>>,
    pub damping: T,
    dim: usize,
}

impl<T: Scalar> EmpiricalFisher<T> {
    pub fn new(
        policy: &GaussianMlpPolicy<T>,
        samples: &[(Vector<T>, Vector<T>)],
        damping: T,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("EmpiricalFisher samples"));
        }
        let mut scores = Vec::with_capacity(samples.len());
        for (s, a) in samples {
            scores.push(policy.score(s, a)?);
        }
        Ok(Self { scores, damping, dim: policy.n_params() })
    }

    pub fn apply_undamped(&self, v: &[T]) -> Vector<T> {
        let m = T::lit(self.scores.len() as f64);
        let mut out = vec![T::zero(); self.dim];
        for g in &self.scores {
            let c = dot(g, v) / m;
            crate::linalg::axpy(c, g, &mut out);
        }
        out
    }

    /// (1/2) d^T F d with damping excluded.
    pub fn kl_quadratic(&self, delta: &[T]) -> Result<T> {
        if delta.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: delta.len() });
        }
        Ok(T::lit(0.5) * dot(delta, &self.apply_undamped(delta)))
    }
}

impl<T: Scalar> LinOp<T> for EmpiricalFisher<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, v: &[T]) -> Vector<T> {
        let mut out = self.apply_undamped(v);
        crate::linalg::axpy(self.damping, v, &mut out);
        out
    }
}

/// Exact per-state Fisher of the Gaussian policy (expectation over actions
/// taken in closed form): mean block J^T diag(1/sigma^2) J via JVP+VJP,
/// log-std block diag(2 * squash'^2). Used by the KL-order oracle and
/// available as an alternative curvature source.
pub struct ExactFisher<'a, T> {
    policy: &'a GaussianMlpPolicy<T>,
    states: Vec<Vector<T>>,
    pub damping: T,
}

impl<'a, T: Scalar> ExactFisher<'a, T> {
    pub fn new(
        policy: &'a GaussianMlpPolicy<T>,
        states: &[Vector<T>],
        damping: T,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput("ExactFisher states"));
        }
        Ok(Self { policy, states: states.to_vec(), damping })
    }

    pub fn apply_undamped(&self, v: &[T]) -> Vector<T> {
        let nm = self.policy.mean_net.n_params();
        let n = self.policy.n_params();
        let a_dim = self.policy.action_dim();
        let m = T::lit(self.states.len() as f64);
        let mut out = vec![T::zero(); n];
        let v_mlp = &v[..nm];
        for s in &self.states {
            let jv = self.policy.mean_net.jvp(s, v_mlp).expect("jvp");
            let cache = self.policy.mean_net.forward_cached(s).expect("forward");
            let mut weighted = vec![T::zero(); a_dim];
            for d in 0..a_dim {
                let sigma = self.policy.std(d);
                weighted[d] = jv[d] / (sigma * sigma * m);
            }
            self.policy.mean_net.backward(&cache, &weighted, &mut out[..nm]);
        }
        for d in 0..a_dim {
            let g = self.policy.log_std_grad(d);
            out[nm + d] = T::lit(2.0) * g * g * v[nm + d];
        }
        out
    }

    pub fn kl_quadratic(&self, delta: &[T]) -> Result<T> {
        if delta.len() != self.policy.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.policy.n_params(),
                got: delta.len(),
            });
        }
        Ok(T::lit(0.5) * dot(delta, &self.apply_undamped(delta)))
    }
}

impl<T: Scalar> LinOp<T> for ExactFisher<'_, T> {
    fn dim(&self) -> usize {
        self.policy.n_params()
    }
    fn apply(&self, v: &[T]) -> Vector<T> {
        let mut out = self.apply_undamped(v);
        crate::linalg::axpy(self.damping, v, &mut out);
        out
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GMP1";

/// Binary checkpoint: magic, architecture header, then little-endian f64
/// bit patterns of the flat parameters. Round-trips floats bit-exactly.
pub fn write_checkpoint<T: Scalar, W: Write>(
    policy: &GaussianMlpPolicy<T>,
    w: &mut W,
) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let shape = &policy.mean_net.shape;
    let mut header: Vec<u32> = vec![shape.input_dim as u32, shape.hidden.len() as u32];
    header.extend(shape.hidden.iter().map(|&h| h as u32));
    header.push(shape.output_dim as u32);
    header.push(if shape.layer_norm { 1 } else { 0 });
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [policy.log_std_min, policy.log_std_max] {
        w.write_all(&v.to_f64_lossy().to_bits().to_le_bytes())?;
    }
    let flat = policy.get_flat();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        w.write_all(&v.to_f64_lossy().to_bits().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<GaussianMlpPolicy<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let read_u32 = |r: &mut R| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    };
    let input_dim = read_u32(r)? as usize;
    let n_hidden = read_u32(r)? as usize;
    if n_hidden > 16 {
        return Err(Error::Checkpoint("implausible hidden layer count".into()));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(read_u32(r)? as usize);
    }
    let output_dim = read_u32(r)? as usize;
    let layer_norm = read_u32(r)? != 0;
    let read_f64 = |r: &mut R| -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_bits(u64::from_le_bytes(b)))
    };
    let log_std_min = read_f64(r)?;
    let log_std_max = read_f64(r)?;
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let n = u64::from_le_bytes(b) as usize;
    let shape = MlpShape { input_dim, hidden, output_dim, layer_norm };
    let mut policy = GaussianMlpPolicy {
        mean_net: Mlp::new(shape),
        raw_log_std: vec![T::zero(); output_dim],
        log_std_min: T::lit(log_std_min),
        log_std_max: T::lit(log_std_max),
    };
    if n != policy.n_params() {
        return Err(Error::Checkpoint(format!(
            "parameter count {n} does not match architecture ({})",
            policy.n_params()
        )));
    }
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        flat.push(T::lit(f64::from_bits(u64::from_le_bytes(b))));
    }
    policy.set_flat(&flat)?;
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_policy(rng: &mut ChaCha8Rng) -> GaussianMlpPolicy<f64> {
        let mut cfg = PolicyConfig::new(2, 1);
        cfg.hidden = vec![4, 4];
        GaussianMlpPolicy::init(&cfg, rng)
    }

    #[test]
    fn act_deterministic_under_cloned_rng() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = small_policy(&mut rng);
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a1 = p.act(&[0.3, -0.2], &mut r1).unwrap();
        let a2 = p.act(&[0.3, -0.2], &mut r2).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn zero_network_zero_noise_gives_zero_action() {
        let mut cfg = PolicyConfig::new(2, 2);
        cfg.hidden = vec![4];
        cfg.layer_norm = false;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p: GaussianMlpPolicy<f64> = GaussianMlpPolicy::init(&cfg, &mut rng);
        p.set_flat(&vec![0.0; p.n_params()]).unwrap();
        let mean = p.mean(&[0.7, 0.1]).unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
    }

    #[test]
    fn log_prob_standard_normal_mode() {
        // 1-D, mean 0, std 1: log p(0) = -0.5 ln(2 pi)
        let mut cfg = PolicyConfig::new(1, 1);
        cfg.hidden = vec![2];
        cfg.layer_norm = false;
        cfg.log_std_min = -1.0;
        cfg.log_std_max = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p: GaussianMlpPolicy<f64> = GaussianMlpPolicy::init(&cfg, &mut rng);
        p.set_flat(&vec![0.0; p.n_params()]).unwrap(); // raw 0 -> log_std 0 -> std 1
        let lp = p.log_prob(&[0.0], &[0.0]).unwrap();
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_normalizes_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = small_policy(&mut rng);
        let state = [0.4, -0.9];
        // 1-D action; integrate exp(log_prob) over a wide grid
        let lo = -5.0;
        let hi = 5.0;
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let a = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * p.log_prob(&state, &[a]).unwrap().exp() * h;
        }
        assert!((integral - 1.0).abs() <= 1e-3, "integral {integral}");
    }

    #[test]
    fn score_log_std_component_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = small_policy(&mut rng);
        let state = [0.2, 0.1];
        let mean = p.mean(&state).unwrap();
        let g = p.score(&state, &mean).unwrap();
        let nm = p.mean_net.n_params();
        // at action = mean, d logp / d log_std = -1, chained through squash
        let want = -p.log_std_grad(0);
        assert!((g[nm] - want).abs() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let mut cfg = PolicyConfig::new(3, 2);
            cfg.hidden = vec![6, 6];
            let p: GaussianMlpPolicy<f64> = GaussianMlpPolicy::init(&cfg, &mut rng);
            let state = [0.3, -0.5, 0.8];
            let action = p.act(&state, &mut rng).unwrap();
            let g = p.score(&state, &action).unwrap();
            let flat = p.get_flat();
            let h = 1e-5;
            let scale = crate::linalg::norm2(&g).max(1.0);
            for i in (0..p.n_params()).step_by(7) {
                let mut up = flat.clone();
                up[i] += h;
                let mut dn = flat.clone();
                dn[i] -= h;
                let mut pu = p.clone();
                pu.set_flat(&up).unwrap();
                let mut pd = p.clone();
                pd.set_flat(&dn).unwrap();
                let num = (pu.log_prob(&state, &action).unwrap()
                    - pd.log_prob(&state, &action).unwrap())
                    / (2.0 * h);
                assert!(
                    (g[i] - num).abs() / scale < 1e-5,
                    "coord {i}: {} vs {num}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = small_policy(&mut rng);
        let flat = p.get_flat();
        p.set_flat(&flat).unwrap();
        assert_eq!(p.get_flat(), flat);
        assert!(p.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn fisher_rank_one_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = small_policy(&mut rng);
        let state = vec![0.1, 0.6];
        let action = p.act(&state, &mut rng).unwrap();
        let g = p.score(&state, &action).unwrap();
        let damping = 1e-3;
        let f = EmpiricalFisher::new(&p, &[(state, action)], damping).unwrap();
        let v: Vec<f64> = (0..p.n_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        let fv = f.apply(&v);
        let gv = dot(&g, &v);
        for i in 0..v.len() {
            let want = g[i] * gv + damping * v[i];
            assert!((fv[i] - want).abs() < 1e-12);
        }
        // v = 0 -> 0
        assert!(crate::linalg::norm2(&f.apply(&vec![0.0; p.n_params()])) == 0.0);
    }

    #[test]
    fn fisher_matches_dense_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cfg = PolicyConfig::new(2, 1);
        cfg.hidden = vec![3];
        cfg.layer_norm = false;
        let p: GaussianMlpPolicy<f64> = GaussianMlpPolicy::init(&cfg, &mut rng);
        let n = p.n_params();
        assert!(n <= 30);
        let mut samples = Vec::new();
        for _ in 0..200 {
            let s = vec![
                f64::sample_standard_normal(&mut rng),
                f64::sample_standard_normal(&mut rng),
            ];
            let a = p.act(&s, &mut rng).unwrap();
            samples.push((s, a));
        }
        let mut dense = DenseMatrix::zeros(n, n);
        for (s, a) in &samples {
            let g = p.score(s, a).unwrap();
            for i in 0..n {
                for j in 0..n {
                    dense[(i, j)] += g[i] * g[j] / samples.len() as f64;
                }
            }
        }
        let f = EmpiricalFisher::new(&p, &samples, 0.0).unwrap();
        for probe in 0..10 {
            let v: Vec<f64> = (0..n).map(|i| ((i + probe) as f64 * 0.61).cos()).collect();
            let fv = f.apply(&v);
            let dv = dense.matvec(&v);
            let scale = crate::linalg::norm2(&dv);
            assert!(crate::linalg::norm2(&crate::linalg::sub(&fv, &dv)) <= 1e-10 * scale);
        }
    }

    #[test]
    fn fisher_symmetric_and_psd_on_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = small_policy(&mut rng);
        let mut samples = Vec::new();
        for _ in 0..50 {
            let s = vec![
                f64::sample_standard_normal(&mut rng),
                f64::sample_standard_normal(&mut rng),
            ];
            let a = p.act(&s, &mut rng).unwrap();
            samples.push((s, a));
        }
        let f = EmpiricalFisher::new(&p, &samples, 1e-3).unwrap();
        let n = p.n_params();
        for k in 0..5 {
            let u: Vec<f64> = (0..n).map(|i| ((i * (k + 2)) as f64 * 0.17).sin()).collect();
            let v: Vec<f64> = (0..n).map(|i| ((i * (k + 3)) as f64 * 0.29).cos()).collect();
            let ufv = dot(&u, &f.apply(&v));
            let vfu = dot(&v, &f.apply(&u));
            assert!((ufv - vfu).abs() <= 1e-10 * ufv.abs().max(1.0));
            assert!(dot(&u, &f.apply(&u)) > 0.0);
        }
    }

    #[test]
    fn kl_quadratic_scaling_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = small_policy(&mut rng);
        let s = vec![0.2, -0.3];
        let a = p.act(&s, &mut rng).unwrap();
        let f = EmpiricalFisher::new(&p, &[(s, a)], 1e-3).unwrap();
        let n = p.n_params();
        assert_eq!(f.kl_quadratic(&vec![0.0; n]).unwrap(), 0.0);
        let d: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).sin() * 0.01).collect();
        let d2: Vec<f64> = d.iter().map(|&v| 2.0 * v).collect();
        let k1 = f.kl_quadratic(&d).unwrap();
        let k4 = f.kl_quadratic(&d2).unwrap();
        assert!((k4 - 4.0 * k1).abs() <= 1e-12 * k4.abs().max(1e-300));
    }

    #[test]
    fn kl_quadratic_log_std_direction_matches_closed_form() {
        // perturb only the raw log-std of a 1-D policy; use the exact Fisher
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = small_policy(&mut rng);
        let states: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                vec![
                    f64::sample_standard_normal(&mut rng),
                    f64::sample_standard_normal(&mut rng),
                ]
            })
            .collect();
        let f = ExactFisher::new(&p, &states, 0.0).unwrap();
        let n = p.n_params();
        let nm = p.mean_net.n_params();
        let t = 1e-2;
        // raw delta such that log_std moves by ~t
        let mut d = vec![0.0; n];
        d[nm] = t / p.log_std_grad(0);
        let quad = f.kl_quadratic(&d).unwrap();
        let pb = p.perturbed(&d).unwrap();
        let exact = exact_gaussian_kl(&p, &pb, &states).unwrap();
        let rel = (quad - exact).abs() / exact;
        assert!(rel <= 2e-2, "relative gap {rel}");
        // quadratic value is t^2 to leading order
        assert!((quad - t * t).abs() <= 0.05 * t * t, "quad {quad} vs {}", t * t);
    }

    #[test]
    fn exact_gaussian_kl_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut cfg = PolicyConfig::new(2, 1);
        cfg.hidden = vec![4, 4];
        cfg.log_std_min = -3.0;
        cfg.log_std_max = 1.0;
        let p: GaussianMlpPolicy<f64> = GaussianMlpPolicy::init(&cfg, &mut rng);
        let states = vec![vec![0.1, 0.2], vec![-0.4, 0.5]];
        assert_eq!(exact_gaussian_kl(&p, &p, &states).unwrap(), 0.0);
        // same mean, sigma_b = e * sigma_a -> KL = 1/2 + e^{-2}/2
        let mut pb = p.clone();
        // shift raw log-std so log_std_b = log_std_a + 1; invert the squash
        let target = p.log_std(0) + 1.0;
        assert!(target < pb.log_std_max);
        let frac: f64 = (target - pb.log_std_min) / (pb.log_std_max - pb.log_std_min);
        pb.raw_log_std[0] = (frac / (1.0 - frac)).ln();
        assert!((pb.log_std(0) - target).abs() < 1e-12);
        let kl = exact_gaussian_kl(&p, &pb, &states).unwrap();
        let want = 0.5 + (-2.0f64).exp() / 2.0;
        assert!((kl - want).abs() < 1e-12, "kl {kl} want {want}");
    }

    #[test]
    fn exact_gaussian_kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pa = small_policy(&mut rng);
        let pb = small_policy(&mut rng);
        let states = vec![vec![0.3, -0.1]];
        let exact = exact_gaussian_kl(&pa, &pb, &states).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let a = pa.act(&states[0], &mut rng).unwrap();
            let d = pa.log_prob(&states[0], &a).unwrap() - pb.log_prob(&states[0], &a).unwrap();
            sum += d;
            sumsq += d * d;
        }
        let mc = sum / n as f64;
        let se = ((sumsq / n as f64 - mc * mc) / n as f64).sqrt();
        assert!((exact - mc).abs() <= 3.0 * se + 1e-6, "exact {exact} mc {mc} se {se}");
    }

    #[test]
    fn exact_fisher_matches_sampled_fisher_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut cfg = PolicyConfig::new(2, 1);
        cfg.hidden = vec![3];
        cfg.layer_norm = false;
        let p: GaussianMlpPolicy<f64> = GaussianMlpPolicy::init(&cfg, &mut rng);
        let states = vec![vec![0.5, -0.2]];
        let exact = ExactFisher::new(&p, &states, 0.0).unwrap();
        // many sampled actions at the same state approximate the expectation
        let mut samples = Vec::new();
        for _ in 0..200_000 {
            let a = p.act(&states[0], &mut rng).unwrap();
            samples.push((states[0].clone(), a));
        }
        let emp = EmpiricalFisher::new(&p, &samples, 0.0).unwrap();
        let n = p.n_params();
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.41).sin()).collect();
        let fe = exact.apply(&v);
        let fs = emp.apply(&v);
        let rel = crate::linalg::norm2(&crate::linalg::sub(&fe, &fs))
            / crate::linalg::norm2(&fe);
        assert!(rel < 0.05, "relative deviation {rel}");
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = small_policy(&mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q: GaussianMlpPolicy<f64> = read_checkpoint(&mut buf.as_slice()).unwrap();
        let fa = p.get_flat();
        let fb = q.get_flat();
        assert_eq!(fa.len(), fb.len());
        for i in 0..fa.len() {
            assert_eq!(fa[i].to_bits(), fb[i].to_bits());
        }
        assert_eq!(p.mean_net.shape, q.mean_net.shape);
    }

    #[test]
    fn perturbation_moves_log_prob_along_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = small_policy(&mut rng);
        let state = [0.2, 0.9];
        let action = p.act(&state, &mut rng).unwrap();
        let g = p.score(&state, &action).unwrap();
        let h = 1e-6;
        for i in [0usize, 3, 10] {
            let mut d = vec![0.0; p.n_params()];
            d[i] = h;
            let pp = p.perturbed(&d).unwrap();
            let delta = pp.log_prob(&state, &action).unwrap() - p.log_prob(&state, &action).unwrap();
            assert!((delta - h * g[i]).abs() <= 1e-9 * (1.0 + g[i].abs()));
        }
    }
}
