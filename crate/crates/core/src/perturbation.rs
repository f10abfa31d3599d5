//! Perturbation-set construction: conjugate (DE), random (RP), and zero
//! (plain TRPO) sets scaled to a KL radius with symmetric sampling, the
//! total pairwise-divergence measurement, the linear radius schedule, and
//! two brute-force oracles for the optimality properties the conjugate
//! construction is supposed to have.

use crate::error::{Error, Result};
use crate::linalg::{dot, quad_form, scaled, sub, sym_eig, DenseMatrix, LinOp, Vector};
use crate::scalar::Scalar;
use rand::Rng;

const NULL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    Conjugate,
    Random,
    Zero,
}

/// A symmetric set of parameter offsets, ordered so each direction is
/// immediately followed by its negation. `radius` is the approximate KL
/// (nats) each non-zero member induces under the quadratic model.
#[derive(Debug, Clone)]
pub struct PerturbationSet<T> {
    pub directions: Vec<Vector<T>>,
    pub radius: T,
    pub kind: PerturbationKind,
}

impl<T: Scalar> PerturbationSet<T> {
    /// k zero offsets: plain TRPO expressed as a degenerate set.
    pub fn zero(k: usize, dim: usize) -> Self {
        Self {
            directions: vec![vec![T::zero(); dim]; k],
            radius: T::zero(),
            kind: PerturbationKind::Zero,
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Scale `eps` along its own direction so that 1/2 (c eps)' F (c eps)
/// equals `delta_p` exactly: c = sqrt(2 delta_p / eps'F eps). Closed form
/// for the radius line search under the quadratic KL model.
pub fn scale_to_radius<T: Scalar, F: LinOp<T>>(
    eps: &[T],
    fisher: &F,
    delta_p: T,
) -> Result<Vector<T>> {
    assert!(delta_p > T::zero());
    let q = quad_form(fisher, eps)?;
    if q <= T::lit(NULL_FLOOR) {
        return Err(Error::NearNullDirection(q.to_f64_lossy()));
    }
    let c = (T::lit(2.0) * delta_p / q).sqrt();
    Ok(scaled(c, eps))
}

/// Build a conjugate set from captured CG directions: take the first k/2
/// in CG order, scale each to the radius, and emit each with its negation.
pub fn conjugate_set<T: Scalar, F: LinOp<T>>(
    cg_directions: &[Vector<T>],
    k: usize,
    fisher: &F,
    delta_p: T,
) -> Result<PerturbationSet<T>> {
    if k % 2 != 0 {
        return Err(Error::OddPerturbationCount(k));
    }
    if cg_directions.len() < k / 2 {
        return Err(Error::TooFewDirections { needed: k / 2, available: cg_directions.len() });
    }
    let mut directions = Vec::with_capacity(k);
    for d in &cg_directions[..k / 2] {
        let eps = scale_to_radius(d, fisher, delta_p)?;
        let neg = scaled(-T::one(), &eps);
        directions.push(eps);
        directions.push(neg);
    }
    Ok(PerturbationSet { directions, radius: delta_p, kind: PerturbationKind::Conjugate })
}

/// Symmetric random baseline: k/2 independent standard-normal directions,
/// each scaled to the radius, plus negations. Near-null draws are
/// resampled (at most 10 attempts each).
pub fn random_set<T: Scalar, F: LinOp<T>, R: Rng + ?Sized>(
    n: usize,
    k: usize,
    fisher: &F,
    delta_p: T,
    rng: &mut R,
) -> Result<PerturbationSet<T>> {
    if k % 2 != 0 {
        return Err(Error::OddPerturbationCount(k));
    }
    let mut directions = Vec::with_capacity(k);
    for _ in 0..k / 2 {
        let mut scaled_eps = None;
        for _ in 0..10 {
            let draw: Vector<T> = (0..n).map(|_| T::sample_standard_normal(rng)).collect();
            match scale_to_radius(&draw, fisher, delta_p) {
                Ok(e) => {
                    scaled_eps = Some(e);
                    break;
                }
                Err(Error::NearNullDirection(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        let eps = scaled_eps.ok_or(Error::NearNullDirection(0.0))?;
        let neg = scaled(-T::one(), &eps);
        directions.push(eps);
        directions.push(neg);
    }
    Ok(PerturbationSet { directions, radius: delta_p, kind: PerturbationKind::Random })
}

/// Total divergence between all unordered pairs of perturbed policies
/// under the quadratic model: sum_{i<j} 1/2 (eps_i - eps_j)' F (eps_i - eps_j).
pub fn pairwise_kl_total<T: Scalar, F: LinOp<T>>(
    set: &PerturbationSet<T>,
    fisher: &F,
) -> Result<T> {
    if set.len() < 2 {
        return Err(Error::EmptyInput("pairwise_kl_total needs >= 2 members"));
    }
    let half = T::lit(0.5);
    let mut total = T::zero();
    for i in 0..set.len() {
        for j in (i + 1)..set.len() {
            let d = sub(&set.directions[i], &set.directions[j]);
            total += half * quad_form(fisher, &d)?;
        }
    }
    Ok(total)
}

/// Linearly decaying perturbation radius with a floor.
#[derive(Debug, Clone, Copy)]
pub struct RadiusSchedule<T> {
    pub initial: T,
    pub total_iterations: usize,
    pub floor: T,
}

impl<T: Scalar> RadiusSchedule<T> {
    pub fn new(initial: T, total_iterations: usize, floor: T) -> Self {
        assert!(floor >= T::zero() && floor <= initial);
        assert!(total_iterations > 0);
        Self { initial, total_iterations, floor }
    }

    /// max(floor, initial * (1 - iter/I)).
    pub fn radius_at(&self, iteration: usize) -> T {
        let frac = T::lit(iteration as f64) / T::lit(self.total_iterations as f64);
        (self.initial * (T::one() - frac)).max(self.floor)
    }
}

fn pool_objective<T: Scalar>(gram: &DenseMatrix<T>, subset: &[usize]) -> T {
    // sum_{i<j} 1/2 (e_i - e_j)' F (e_i - e_j)
    //   = 1/2 [ (k-1) sum_i q_ii - 2 sum_{i<j} q_ij ]
    let k = subset.len();
    let mut diag = T::zero();
    let mut cross = T::zero();
    for (a, &i) in subset.iter().enumerate() {
        diag += gram[(i, i)];
        for &j in &subset[a + 1..] {
            cross += gram[(i, j)];
        }
    }
    T::lit(0.5) * (T::lit((k - 1) as f64) * diag - T::lit(2.0) * cross)
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Exhaustive maximizer of the total-pairwise-divergence objective over a
/// coarse candidate pool built from the given conjugate basis: every pure
/// basis direction, every equal-weight two-direction mixture (all unit
/// coefficient norm), and their negations. Test oracle only.
pub fn brute_force_best_set<T: Scalar>(
    fisher: &DenseMatrix<T>,
    basis: &[Vector<T>],
    k: usize,
) -> Result<(Vec<Vector<T>>, T)> {
    let n = basis.len();
    assert!(n <= 8 && n >= 1);
    assert!(k >= 2 && k <= 2 * n);
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut pool: Vec<Vector<T>> = Vec::new();
    for b in basis {
        pool.push(b.clone());
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut v = scaled(inv_sqrt2, &basis[i]);
            crate::linalg::axpy(inv_sqrt2, &basis[j], &mut v);
            pool.push(v);
        }
    }
    for i in 0..pool.len() {
        pool.push(scaled(-T::one(), &pool[i]));
    }
    let subsets = binomial(pool.len() as u128, k as u128);
    if subsets > 1_000_000 {
        return Err(Error::PoolTooLarge { subsets });
    }
    let mut gram = DenseMatrix::zeros(pool.len(), pool.len());
    let applied: Vec<Vector<T>> = pool.iter().map(|v| fisher.matvec(v)).collect();
    for i in 0..pool.len() {
        for j in 0..pool.len() {
            gram[(i, j)] = dot(&pool[i], &applied[j]);
        }
    }
    let mut best_val = T::neg_infinity();
    let mut best: Vec<usize> = Vec::new();
    let mut subset: Vec<usize> = (0..k).collect();
    loop {
        let val = pool_objective(&gram, &subset);
        // near-ties resolve to the earliest candidate, so pure basis
        // members (listed before the mixtures) win exact ties
        if val > best_val + T::lit(1e-9) * (T::one() + val.abs()) {
            best_val = val;
            best = subset.clone();
        }
        // next k-combination of 0..pool.len() in lexicographic order
        let m = pool.len();
        let mut idx = k;
        loop {
            if idx == 0 {
                return Ok((best.iter().map(|&i| pool[i].clone()).collect(), best_val));
            }
            idx -= 1;
            if subset[idx] < m - (k - idx) {
                subset[idx] += 1;
                for l in (idx + 1)..k {
                    subset[l] = subset[l - 1] + 1;
                }
                break;
            }
        }
    }
}

/// The Theorem 1 pair: +/- delta_eps times the top eigenvector of F. The
/// returned pair maximizes d' F^3 d over equal-norm pairs (d the member
/// difference); callers cross-check with `theorem1_objective`.
pub fn theorem1_oracle<T: Scalar>(
    fisher: &DenseMatrix<T>,
    delta_eps: T,
) -> Result<(Vector<T>, Vector<T>)> {
    assert!(delta_eps > T::zero());
    assert!(fisher.n_rows <= 200);
    let (_, vecs) = sym_eig(fisher)?;
    let u1: Vector<T> = (0..fisher.n_rows).map(|r| vecs[(r, 0)]).collect();
    let e = scaled(delta_eps, &u1);
    Ok((scaled(-T::one(), &e), e))
}

/// The objective from the Theorem 1 analysis, up to shared constants:
/// (eps_j - eps_i)' F^3 (eps_j - eps_i).
pub fn theorem1_objective<T: Scalar>(
    fisher: &DenseMatrix<T>,
    eps_i: &[T],
    eps_j: &[T],
) -> T {
    let d = sub(eps_j, eps_i);
    let fd = fisher.matvec(&fisher.matvec(&fisher.matvec(&d)));
    dot(&d, &fd)
}
