//! SQ estimation of mean vectors and nearly-low-rank mean matrices.
//!
//! Two estimators live here. [`estimate_mean_vector`] recovers a bounded mean
//! vector E[F(x)] ∈ R^k from exactly 2k statistical queries with Euclidean
//! error O(τ): every value F(x) is re-expressed in a redundant tight frame
//! with uniformly small (Kashin-style) coefficients, each bounded coefficient
//! is queried once, and linear reconstruction keeps the adversary's
//! per-query perturbations from accumulating like √k.
//!
//! [`estimate_mean_matrix`] recovers a nearly-rank-d mean matrix: the matrix
//! is measured against a random subset of a Pauli (tensor-product) basis —
//! an incoherent orthonormal Hermitian family with operator norm 1/√k — the
//! measurement vector is estimated with the mean-vector estimator, and the
//! matrix is reconstructed by nuclear-norm minimization under a measurement
//! ball constraint (Douglas–Rachford splitting with a duality-gap
//! certificate).

use crate::geom::Vector;
use crate::oracle::{OracleError, OracleSession, Query};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("pauli level {0} too large (max 6)")]
    LevelTooLarge(usize),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("F(x) exceeded its declared bound (max observed {0})")]
    UnboundedF(f64),
    #[error("kashin decomposition failed to converge (residual {0})")]
    KashinDivergence(f64),
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
}

/// Orthonormal Hermitian tensor-product basis of C^{k×k}, k = 2^level.
///
/// Level 1 is the four matrices σ_i/√2; higher levels are all ℓ-fold tensor
/// products. Every element has operator norm exactly 1/√k, which is the
/// incoherence that makes uniform index sampling informative for low-rank
/// recovery.
#[derive(Debug, Clone)]
pub struct PauliFrame {
    pub level: usize,
    pub k: usize,
    /// Real parts (symmetric) and imaginary parts (antisymmetric) of the k²
    /// basis elements.
    pub re: Vec<DMatrix<f64>>,
    pub im: Vec<DMatrix<f64>>,
}

pub fn pauli_basis(level: usize) -> Result<PauliFrame, MatrixError> {
    if level == 0 || level > 6 {
        return Err(MatrixError::LevelTooLarge(level));
    }
    let s = 1.0 / 2.0_f64.sqrt();
    // σ_0..σ_3 scaled by 1/√2, as (re, im) pairs.
    let base_re = [
        DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, s]),
        DMatrix::from_row_slice(2, 2, &[0.0, s, s, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[s, 0.0, 0.0, -s]),
    ];
    let base_im = [
        DMatrix::zeros(2, 2),
        DMatrix::zeros(2, 2),
        DMatrix::from_row_slice(2, 2, &[0.0, -s, s, 0.0]),
        DMatrix::zeros(2, 2),
    ];
    let mut re: Vec<DMatrix<f64>> = base_re.to_vec();
    let mut im: Vec<DMatrix<f64>> = base_im.to_vec();
    for _ in 1..level {
        let mut nre = Vec::with_capacity(re.len() * 4);
        let mut nim = Vec::with_capacity(im.len() * 4);
        for (ar, ai) in re.iter().zip(&im) {
            for (br, bi) in base_re.iter().zip(&base_im) {
                // (A ⊗ B) for complex A, B in real/imag parts.
                nre.push(ar.kronecker(br) - ai.kronecker(bi));
                nim.push(ar.kronecker(bi) + ai.kronecker(br));
            }
        }
        re = nre;
        im = nim;
    }
    Ok(PauliFrame { level, k: 1 << level, re, im })
}

impl PauliFrame {
    pub fn len(&self) -> usize {
        self.k * self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Hilbert–Schmidt inner product ⟨W_i, W_j⟩ (real for Hermitian pairs).
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.re[i].dot(&self.re[j]) + self.im[i].dot(&self.im[j])
    }

    /// Operator norm of element i, via the real 2k×2k embedding.
    pub fn op_norm(&self, i: usize) -> f64 {
        let k = self.k;
        let mut m = DMatrix::<f64>::zeros(2 * k, 2 * k);
        m.view_mut((0, 0), (k, k)).copy_from(&self.re[i]);
        m.view_mut((k, k), (k, k)).copy_from(&self.re[i]);
        m.view_mut((0, k), (k, k)).copy_from(&(-&self.im[i]));
        m.view_mut((k, 0), (k, k)).copy_from(&self.im[i]);
        m.singular_values()[0]
    }
}

/// Random Pauli measurement operator on real k×k matrices.
///
/// L(X) stacks real and imaginary parts of (k/√q)·tr(W_{I_i} X) into R^{2q};
/// indices are sampled uniformly without replacement over the k² basis
/// elements (seeded). Each marginal is still uniform, so the k/√q scaling
/// gives E‖L(X)‖² = ‖X‖_F², while the finite-population correction keeps the
/// empirical restricted-isometry constant in the δ < 1/10 regime at q = 6dk.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    pub frame: Arc<PauliFrame>,
    pub q: usize,
    pub indices: Vec<usize>,
    pub scale: f64,
    /// Dense 2q × k² matrix of the operator acting on vec(X).
    a: DMatrix<f64>,
}

impl SamplingOperator {
    pub fn sample(frame: Arc<PauliFrame>, q: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = q.min(frame.len());
        // Partial Fisher–Yates: q distinct indices, uniform marginals.
        let mut pool: Vec<usize> = (0..frame.len()).collect();
        for i in 0..q {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(q);
        Self::from_indices(frame, pool)
    }

    /// Deterministic full-basis operator (q = k², exact isometry).
    pub fn full(frame: Arc<PauliFrame>) -> Self {
        let indices: Vec<usize> = (0..frame.len()).collect();
        Self::from_indices(frame, indices)
    }

    pub fn from_indices(frame: Arc<PauliFrame>, indices: Vec<usize>) -> Self {
        let q = indices.len();
        let k = frame.k;
        let scale = k as f64 / (q as f64).sqrt();
        // Row i (real part):  scale·vec(re W)   since tr(re(W)·X) with re(W) symmetric.
        // Row q+i (imag part): scale·vec(im(W)ᵀ) = −scale·vec(im W).
        let mut a = DMatrix::<f64>::zeros(2 * q, k * k);
        for (i, &idx) in indices.iter().enumerate() {
            let wre = &frame.re[idx];
            let wim = &frame.im[idx];
            for c in 0..k {
                for r in 0..k {
                    a[(i, c * k + r)] = scale * wre[(r, c)];
                    a[(q + i, c * k + r)] = -scale * wim[(r, c)];
                }
            }
        }
        SamplingOperator { frame, q, indices, scale, a }
    }

    pub fn matrix_a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let v = DVector::from_column_slice(x.as_slice());
        &self.a * v
    }

    pub fn adjoint(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let k = self.frame.k;
        let v = self.a.transpose() * u;
        DMatrix::from_column_slice(k, k, v.as_slice())
    }
}

/// Empirical restricted-isometry certificate: max over seeded random
/// rank-≤d unit-Frobenius matrices of |‖L(X)‖ − 1| (a lower bound on δ_d).
pub fn rip_certificate(op: &SamplingOperator, d: usize, trials: usize, seed: u64) -> f64 {
    assert!(trials >= 100, "trials must be ≥ 100");
    let k = op.frame.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let g1 = DMatrix::from_fn(k, d, |_, _| gaussian(&mut rng));
        let g2 = DMatrix::from_fn(k, d, |_, _| gaussian(&mut rng));
        let mut x = g1 * g2.transpose();
        let nf = x.norm();
        if nf < 1e-12 {
            continue;
        }
        x /= nf;
        worst = worst.max((op.apply(&x).norm() - 1.0).abs());
    }
    worst
}

/// Redundancy-2 tight frame with the flat-coefficient (Kashin) property,
/// built from two seeded random orthogonal bases stacked over √2.
///
/// `decompose` returns b with Uᵀb = v exactly and ‖b‖_∞ ≤ c_frame·‖v‖/√(2k);
/// `c_frame` is measured at construction over random probes (plus margin),
/// not assumed.
#[derive(Debug, Clone)]
pub struct KashinFrame {
    pub dim: usize,
    pub rows: usize,
    u: DMatrix<f64>,
    pub c_frame: f64,
}

impl KashinFrame {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q1 = random_orthogonal(dim, &mut rng);
        let q2 = random_orthogonal(dim, &mut rng);
        let rows = 2 * dim;
        let s = 1.0 / 2.0_f64.sqrt();
        let mut u = DMatrix::<f64>::zeros(rows, dim);
        u.view_mut((0, 0), (dim, dim)).copy_from(&(q1 * s));
        u.view_mut((dim, 0), (dim, dim)).copy_from(&(q2 * s));
        let mut f = KashinFrame { dim, rows, u, c_frame: 0.0 };
        // Measure the flatness constant on random unit probes.
        let mut c: f64 = 0.0;
        for _ in 0..200 {
            let mut v = DVector::from_fn(dim, |_, _| gaussian(&mut rng));
            v /= v.norm();
            let b = f.decompose_raw(&v);
            c = c.max(b.amax() * (rows as f64).sqrt());
        }
        f.c_frame = c * 1.05;
        f
    }

    /// Iterative truncation: analysis coefficients are clamped at a level
    /// proportional to the residual norm; the tight-frame property makes the
    /// residual contract geometrically, and a final uncapped round restores
    /// exactness.
    fn decompose_raw(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut b = DVector::<f64>::zeros(self.rows);
        let mut r = v.clone();
        let kappa = 3.0;
        for _ in 0..40 {
            let rn = r.norm();
            if rn < 1e-14 * v.norm().max(1e-300) {
                break;
            }
            let level = kappa * rn / (self.rows as f64).sqrt();
            let c = &self.u * &r;
            let ct = c.map(|x| x.clamp(-level, level));
            b += &ct;
            r -= self.u.transpose() * ct;
        }
        // Exact correction (residual is tiny, so the flatness is preserved).
        b += &self.u * &r;
        b
    }

    pub fn decompose(&self, v: &DVector<f64>) -> DVector<f64> {
        self.decompose_raw(v)
    }

    pub fn reconstruct(&self, b: &DVector<f64>) -> DVector<f64> {
        self.u.transpose() * b
    }
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    g.qr().q()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>();
        if u > 1e-300 {
            let v: f64 = rng.gen::<f64>();
            return (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
        }
    }
}

/// Estimates E[F(x)] ∈ R^k from exactly 2k queries.
///
/// F must satisfy ‖F(x)‖ ≤ 1 (runtime-checked on every evaluation point).
/// Each query reports one Kashin coefficient of F(x) rescaled to [−1, 1];
/// since the coefficient map reconstructs every F(x) exactly, linearity of
/// expectation turns coefficient means back into the mean vector with
/// Euclidean error ≤ c_frame·τ.
pub fn estimate_mean_vector(
    session: &mut OracleSession,
    frame: &KashinFrame,
    f: &dyn Fn(&Vector) -> DVector<f64>,
    support: Option<(Vector, f64)>,
    label: &str,
) -> Result<DVector<f64>, MatrixError> {
    let scale = frame.c_frame / (frame.rows as f64).sqrt();
    let memo: RefCell<HashMap<u64, Rc<DVector<f64>>>> = RefCell::new(HashMap::new());
    let max_norm = std::cell::Cell::new(0.0f64);
    let coeffs = |x: &Vector| -> Rc<DVector<f64>> {
        let key = hash_point(x);
        if let Some(b) = memo.borrow().get(&key) {
            return b.clone();
        }
        let v = f(x);
        let nv = v.norm();
        if nv > max_norm.get() {
            max_norm.set(nv);
        }
        let b = Rc::new(frame.decompose(&v));
        memo.borrow_mut().insert(key, b.clone());
        b
    };
    let mut answers = DVector::<f64>::zeros(frame.rows);
    for j in 0..frame.rows {
        let mut q = Query::new(format!("{label}/coef{j}"), |x: &Vector| coeffs(x)[j] / scale);
        if let Some((c, h)) = &support {
            q = q.with_support(c.clone(), *h);
        }
        answers[j] = session.answer(&q)?;
    }
    if max_norm.get() > 1.0 + 1e-9 {
        return Err(MatrixError::UnboundedF(max_norm.get()));
    }
    Ok(frame.reconstruct(&(answers * scale)))
}

/// Result of a constrained nuclear-norm minimization.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub nuclear_norm: f64,
    pub duality_gap: f64,
    pub converged: bool,
}

/// Solves  min ‖X‖_*  subject to  ‖y − L(X)‖ ≤ ξ  over real k×k matrices.
///
/// Douglas–Rachford splitting alternates singular-value soft-thresholding
/// with exact projection onto the measurement ball (via a precomputed
/// eigendecomposition of L Lᵀ and a secular-equation solve); termination is
/// by a duality-gap certificate (≤ 1e-6 relative) or 5000 iterations.
pub fn nuclear_min(y: &DVector<f64>, op: &SamplingOperator, xi: f64) -> Result<RecoveryResult, MatrixError> {
    if xi < 0.0 {
        return Err(MatrixError::Invalid(format!("xi = {xi} < 0")));
    }
    let k = op.frame.k;
    let a = op.matrix_a();
    let m = a.nrows();
    // If X = 0 is feasible it is optimal (minimal nuclear norm).
    if y.norm() <= xi {
        return Ok(RecoveryResult {
            matrix: DMatrix::zeros(k, k),
            iterations: 0,
            residual: y.norm(),
            nuclear_norm: 0.0,
            duality_gap: 0.0,
            converged: true,
        });
    }
    let gram = a * a.transpose();
    let eig = gram.clone().symmetric_eigen();
    // eigvecs: columns; eigenvalues ≥ 0.
    let evals = eig.eigenvalues.clone();
    let evecs = eig.eigenvectors.clone();

    // Projection of w onto {v : ‖y − v-measurement‖ ≤ ξ} in matrix space:
    // returns (projected matrix, multiplier u with proj = w + mat(Aᵀu)).
    let project = |w: &DMatrix<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let r = y - op.apply(w);
        if r.norm() <= xi {
            return (w.clone(), DVector::zeros(m));
        }
        let rt = evecs.transpose() * &r;
        let u = if xi == 0.0 {
            // Affine projection via the pseudoinverse of the Gram matrix.
            let mut ut = DVector::<f64>::zeros(m);
            for i in 0..m {
                if evals[i] > 1e-12 * evals.amax().max(1e-300) {
                    ut[i] = rt[i] / evals[i];
                }
            }
            &evecs * ut
        } else {
            // Solve Σ r̃_i²/(1+μλ_i)² = ξ² for μ ≥ 0 by bisection.
            let phi = |mu: f64| -> f64 {
                let mut s = 0.0;
                for i in 0..m {
                    let t = rt[i] / (1.0 + mu * evals[i]);
                    s += t * t;
                }
                s
            };
            let mut lo = 0.0;
            let mut hi = 1.0;
            while phi(hi) > xi * xi && hi < 1e18 {
                hi *= 4.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if phi(mid) > xi * xi {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mu = 0.5 * (lo + hi);
            let mut ut = DVector::<f64>::zeros(m);
            for i in 0..m {
                ut[i] = mu * rt[i] / (1.0 + mu * evals[i]);
            }
            &evecs * ut
        };
        (w + op.adjoint(&u), u)
    };

    let svt = |w: &DMatrix<f64>, t: f64| -> DMatrix<f64> {
        let svd = w.clone().svd(true, true);
        let us = svd.u.as_ref().expect("svd u");
        let vt = svd.v_t.as_ref().expect("svd vt");
        let mut s = svd.singular_values.clone();
        for i in 0..s.len() {
            s[i] = (s[i] - t).max(0.0);
        }
        us * DMatrix::from_diagonal(&s) * vt
    };

    let gamma = 0.1 * y.amax().max(1e-12);
    let mut z = DMatrix::<f64>::zeros(k, k);
    let mut x = DMatrix::<f64>::zeros(k, k);
    let mut gap = f64::INFINITY;
    let mut iters = 0usize;
    for it in 0..5000 {
        iters = it + 1;
        let (xf, u) = project(&z);
        x = xf;
        let yd = svt(&(&x * 2.0 - &z), gamma);
        z += &yd - &x;
        if it % 10 == 9 {
            // Duality-gap certificate on the feasible iterate x with dual
            // candidate built from the projection multiplier.
            let nn = nuclear_norm(&x);
            let mut best_dual = f64::NEG_INFINITY;
            for sgn in [-1.0, 1.0] {
                let uc = &u * (sgn / gamma);
                let w = op.adjoint(&uc);
                let opn = w.singular_values()[0].max(1e-300);
                let uf = uc / opn.max(1.0);
                let dual = -y.dot(&uf) - xi * uf.norm();
                best_dual = best_dual.max(dual);
            }
            gap = nn - best_dual;
            if gap.abs() <= 1e-6 * nn.max(1.0) {
                break;
            }
        }
    }
    let residual = (y - op.apply(&x)).norm();
    let nn = nuclear_norm(&x);
    Ok(RecoveryResult {
        converged: gap.abs() <= 1e-6 * nn.max(1.0) && residual <= xi * (1.0 + 1e-6) + 1e-9,
        matrix: x,
        iterations: iters,
        residual,
        nuclear_norm: nn,
        duality_gap: gap,
    })
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    x.clone().svd(false, false).singular_values.iter().sum()
}

/// Parameters for mean-matrix estimation.
#[derive(Debug, Clone)]
pub struct MatrixEstimateParams {
    /// Rank budget d.
    pub d: usize,
    /// Measurement-count constants: q = min(⌈c₀·d·k·ln⁶k·ln(c₁/α)⌉, k²).
    pub c0: f64,
    pub c1: f64,
    pub alpha: f64,
    /// Overrides the formula count entirely when set.
    pub q_override: Option<usize>,
    /// Declared nuclear-to-Frobenius ratio bound of F(x) (1 for rank-1 F).
    pub nu: f64,
    /// Project the output onto the symmetric subspace (X + Xᵀ)/2.
    pub symmetric: bool,
    /// Constraint radius override; defaults to √k·ν·c_frame·τ.
    pub xi_override: Option<f64>,
    /// Seed for the sampling operator and the coefficient frame.
    pub op_seed: u64,
}

impl MatrixEstimateParams {
    pub fn new(d: usize) -> Self {
        MatrixEstimateParams {
            d,
            c0: 6.0,
            c1: 2.0,
            alpha: 0.5,
            q_override: None,
            nu: 1.0,
            symmetric: true,
            xi_override: None,
            op_seed: 0x9a71,
        }
    }

    pub fn query_count(&self, k: usize) -> usize {
        match self.q_override {
            Some(q) => q.min(k * k),
            None => {
                let lk = (k as f64).ln();
                let q = (self.c0 * self.d as f64 * k as f64 * lk.powi(6)
                    * (self.c1 / self.alpha).ln())
                .ceil() as usize;
                q.clamp(1, k * k)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatrixEstimate {
    /// m×m estimate (unpadded).
    pub matrix: DMatrix<f64>,
    pub k_padded: usize,
    pub q: usize,
    pub queries_used: u64,
    pub xi: f64,
    pub recovery: RecoveryResult,
}

/// Estimates the mean matrix E[F(x)] ∈ R^{m×m} with ‖F(x)‖_F ≤ 1 and
/// ‖F(x)‖_* ≤ ν‖F(x)‖_F, consuming exactly 4q queries.
///
/// m is zero-padded to the next power of two k, the padded mean is measured
/// against 2q Pauli components (real + imaginary parts) through the
/// mean-vector estimator, and the estimate is the nuclear-norm-minimal
/// matrix within the measurement ball of radius ξ = √k·ν·c_frame·τ.
pub fn estimate_mean_matrix(
    session: &mut OracleSession,
    params: &MatrixEstimateParams,
    m_dim: usize,
    f: &dyn Fn(&Vector) -> DMatrix<f64>,
    support: Option<(Vector, f64)>,
    label: &str,
) -> Result<MatrixEstimate, MatrixError> {
    let k = m_dim.next_power_of_two().max(2);
    let level = k.trailing_zeros() as usize;
    let frame = Arc::new(pauli_basis(level)?);
    let q = params.query_count(k);
    let op = SamplingOperator::sample(frame, q, params.op_seed);
    // ‖L(F)‖ ≤ √k·ν deterministically (operator-norm incoherence), so the
    // stacked measurement normalized by √k·ν is a bounded vector target.
    let s_norm = (k as f64).sqrt() * params.nu;
    let kashin = KashinFrame::new(2 * q, params.op_seed ^ 0x4a5_17);
    let budget_before = session.budget_used;
    let g = |x: &Vector| -> DVector<f64> {
        let fx = f(x);
        let mut padded = DMatrix::<f64>::zeros(k, k);
        padded.view_mut((0, 0), (m_dim, m_dim)).copy_from(&fx);
        op.apply(&padded) / s_norm
    };
    let y_hat = estimate_mean_vector(session, &kashin, &g, support, label)?;
    let queries_used = session.budget_used - budget_before;
    debug_assert_eq!(queries_used, 4 * q as u64);
    let y_meas = y_hat * s_norm;
    let xi = params
        .xi_override
        .unwrap_or(s_norm * kashin.c_frame * session.tau);
    let rec = nuclear_min(&y_meas, &op, xi)?;
    let mut xk = rec.matrix.clone();
    if params.symmetric {
        xk = (&xk + xk.transpose()) * 0.5;
    }
    let matrix = xk.view((0, 0), (m_dim, m_dim)).into_owned();
    Ok(MatrixEstimate { matrix, k_padded: k, q, queries_used, xi, recovery: rec })
}

fn hash_point(x: &Vector) -> u64 {
    use std::hash::Hasher;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in x.iter() {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DensitySpec, ManifoldModel};
    use crate::oracle::AdversaryPolicy;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pauli_level_one_matches_sigma_list() {
        let f = pauli_basis(1).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert_eq!(f.len(), 4);
        assert_abs_diff_eq!(f.re[0][(0, 0)], s, epsilon = 1e-15); // I/√2
        assert_abs_diff_eq!(f.re[1][(0, 1)], s, epsilon = 1e-15); // X/√2
        assert_abs_diff_eq!(f.im[2][(1, 0)], s, epsilon = 1e-15); // Y/√2
        assert_abs_diff_eq!(f.re[3][(1, 1)], -s, epsilon = 1e-15); // Z/√2
    }

    #[test]
    fn pauli_orthonormal_and_incoherent() {
        for level in 1..=3usize {
            let f = pauli_basis(level).unwrap();
            let k = f.k;
            for i in 0..f.len() {
                // Hermitian: re symmetric, im antisymmetric.
                assert!((&f.re[i] - f.re[i].transpose()).norm() < 1e-12);
                assert!((&f.im[i] + f.im[i].transpose()).norm() < 1e-12);
                assert_abs_diff_eq!(f.op_norm(i), 1.0 / (k as f64).sqrt(), epsilon = 1e-12);
                for j in 0..f.len() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(f.inner(i, j), expect, epsilon = 1e-12);
                }
            }
        }
        assert!(pauli_basis(7).is_err());
    }

    #[test]
    fn sampling_isometry_in_expectation() {
        let frame = Arc::new(pauli_basis(2).unwrap());
        let k = frame.k;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(k, k, |_, _| gaussian(&mut rng));
        let nf2 = x.norm_squared();
        let mut acc = 0.0;
        let resamples = 10_000;
        for s in 0..resamples {
            let op = SamplingOperator::sample(frame.clone(), 8, s as u64);
            acc += op.apply(&x).norm_squared();
        }
        let mean = acc / resamples as f64;
        assert!((mean - nf2).abs() / nf2 < 0.02, "E‖L(X)‖² = {mean} vs {nf2}");
    }

    #[test]
    fn rip_certificate_extremes() {
        let frame = Arc::new(pauli_basis(2).unwrap());
        let full = SamplingOperator::full(frame.clone());
        assert!(rip_certificate(&full, 2, 200, 1) <= 1e-10);
        let tiny = SamplingOperator::sample(frame, 1, 3);
        assert!(rip_certificate(&tiny, 2, 200, 1) > 0.5);
    }

    #[test]
    fn rip_certificate_desk_scale_regime() {
        // k=16, d=2, q=6dk: certificate < 1/10 on ≥ 9/10 seeds.
        let frame = Arc::new(pauli_basis(4).unwrap());
        let mut ok = 0;
        for seed in 0..10u64 {
            let op = SamplingOperator::sample(frame.clone(), 6 * 2 * 16, seed);
            if rip_certificate(&op, 2, 100, seed) < 0.1 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "only {ok}/10 seeds in the RIP regime");
    }

    #[test]
    fn kashin_exactness_and_flatness() {
        for dim in [4usize, 16, 64] {
            let f = KashinFrame::new(dim, 5);
            assert!(f.c_frame <= 4.0, "c_frame {} at dim {dim}", f.c_frame);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..20 {
                let v = DVector::from_fn(dim, |_, _| gaussian(&mut rng));
                let b = f.decompose(&v);
                assert!((f.reconstruct(&b) - &v).norm() < 1e-10 * v.norm());
                assert!(b.amax() <= f.c_frame * v.norm() / (f.rows as f64).sqrt() + 1e-12);
            }
        }
    }

    fn circle_session(tau: f64, policy: AdversaryPolicy) -> OracleSession {
        let m = ManifoldModel::make_sphere(1, 2, 1.0, DVector::zeros(2), DensitySpec::Uniform)
            .unwrap();
        OracleSession::new(Arc::new(m), tau, policy, 7)
    }

    #[test]
    fn mean_vector_constant_exact() {
        let mut s = circle_session(0.1, AdversaryPolicy::Exact);
        let k = 4;
        let frame = KashinFrame::new(k, 1);
        let v = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.4]);
        let vc = v.clone();
        let est = estimate_mean_vector(&mut s, &frame, &move |_| vc.clone(), None, "const").unwrap();
        assert!((est - &v).norm() < 1e-9);
        assert_eq!(s.budget_used, 2 * k as u64);
    }

    #[test]
    fn mean_vector_beats_naive_under_worst_sign() {
        // The frame estimator stays O(τ) while per-coordinate queries pay √k.
        let tau = 0.05;
        for k in [4usize, 16, 64] {
            let truth = DVector::from_fn(k, |i, _| if i == 0 { 0.5 } else { 0.0 });
            // Naive: k coordinate queries, each off by τ in the worst sign.
            let naive_err = (k as f64).sqrt() * tau;
            let mut s = circle_session(tau, AdversaryPolicy::WorstSign);
            let frame = KashinFrame::new(k, 2);
            let t2 = truth.clone();
            let est = estimate_mean_vector(&mut s, &frame, &move |_| t2.clone(), None, "ws")
                .unwrap();
            let frame_err = (est - &truth).norm();
            assert!(frame_err <= frame.c_frame * tau + 1e-9, "frame err {frame_err} at k={k}");
            let ratio = naive_err / frame_err.max(1e-12);
            assert!(ratio >= 0.8 * (k as f64).sqrt() / frame.c_frame, "ratio {ratio} at k={k}");
        }
    }

    #[test]
    fn mean_vector_unbounded_detected() {
        let mut s = circle_session(0.1, AdversaryPolicy::Exact);
        let frame = KashinFrame::new(2, 1);
        let res = estimate_mean_vector(
            &mut s,
            &frame,
            &|_| DVector::from_vec(vec![3.0, 0.0]),
            None,
            "big",
        );
        assert!(matches!(res, Err(MatrixError::UnboundedF(_))));
    }

    #[test]
    fn nuclear_min_rank_one_exact() {
        let frame = Arc::new(pauli_basis(3).unwrap());
        let k = frame.k;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v = DVector::from_fn(k, |_, _| gaussian(&mut rng));
        v /= v.norm();
        let sigma = &v * v.transpose();
        let op = SamplingOperator::sample(frame, 6 * k, 11);
        let y = op.apply(&sigma);
        let rec = nuclear_min(&y, &op, 0.0).unwrap();
        assert!((rec.matrix.clone() - &sigma).norm() < 1e-4, "err {}", (rec.matrix - sigma).norm());
    }

    #[test]
    fn nuclear_min_zero_when_feasible() {
        let frame = Arc::new(pauli_basis(2).unwrap());
        let op = SamplingOperator::sample(frame, 8, 3);
        let y = DVector::from_fn(16, |i, _| if i == 0 { 0.1 } else { 0.0 });
        let rec = nuclear_min(&y, &op, 1.0).unwrap();
        assert_eq!(rec.matrix.norm(), 0.0);
        assert!(rec.converged);
    }

    #[test]
    fn nuclear_min_monotone_in_xi() {
        let frame = Arc::new(pauli_basis(2).unwrap());
        let k = frame.k;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut v = DVector::from_fn(k, |_, _| gaussian(&mut rng));
        v /= v.norm();
        let sigma = &v * v.transpose();
        let op = SamplingOperator::sample(frame, 12, 5);
        let y = op.apply(&sigma);
        let mut last = f64::INFINITY;
        for xi in [0.0, 0.05, 0.2, 0.5] {
            let rec = nuclear_min(&y, &op, xi).unwrap();
            assert!(rec.nuclear_norm <= last + 1e-7, "not monotone at xi={xi}");
            last = rec.nuclear_norm;
        }
    }

    #[test]
    fn mean_matrix_rank_one_recovery_and_budget() {
        // F constant rank-1 on an 8-dim target (k already a power of two).
        let mut s = circle_session(0.01, AdversaryPolicy::Exact);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let kdim = 8usize;
        let mut v = DVector::from_fn(kdim, |_, _| gaussian(&mut rng));
        v /= v.norm();
        let sigma = (&v * v.transpose()) * 0.9;
        let sc = sigma.clone();
        let mut params = MatrixEstimateParams::new(1);
        params.q_override = Some(6 * kdim);
        params.xi_override = Some(1e-9);
        let before = s.budget_used;
        let est = estimate_mean_matrix(&mut s, &params, kdim, &move |_| sc.clone(), None, "sig")
            .unwrap();
        assert_eq!(s.budget_used - before, 4 * est.q as u64);
        assert!((est.matrix.clone() - &sigma).norm() < 1e-4, "err {}", (est.matrix - &sigma).norm());
    }

    #[test]
    fn mean_matrix_padding_block_small() {
        // m=3 pads to k=4; the padded rows/cols of the estimate stay ≈ 0.
        let mut s = circle_session(0.01, AdversaryPolicy::Exact);
        let m_dim = 3usize;
        let mut v = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        v /= v.norm();
        let sigma = (&v * v.transpose()) * 0.8;
        let sc = sigma.clone();
        let mut params = MatrixEstimateParams::new(1);
        params.xi_override = Some(1e-9);
        let est = estimate_mean_matrix(&mut s, &params, m_dim, &move |_| sc.clone(), None, "pad")
            .unwrap();
        assert_eq!(est.k_padded, 4);
        assert!((est.matrix.clone() - &sigma).norm() < 1e-4);
    }
}
