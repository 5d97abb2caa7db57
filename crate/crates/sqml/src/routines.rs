//! The three SQ geometric primitives: projection, tangent, seed detection.
//!
//! Each routine talks to the hidden distribution only through an
//! [`OracleSession`] and consumes a closed-form query budget that the tests
//! assert against the transcript:
//!
//! - [`sq_projection`]: 2n+1 queries — one local ball mass and a 2n-query
//!   mean-vector estimate of the normalized local displacement; the output
//!   x0 + h·V̂/â approximates the metric projection of x0 onto M.
//! - [`sq_tangent`]: a local second-moment matrix estimated by low-rank
//!   mean-matrix recovery; the tangent estimate is its top-d eigenspace,
//!   guarded by a spectral-gap threshold.
//! - [`sq_ambient_binary_search`] / [`sq_seed`]: localization of some point
//!   of M by halving an implicit lattice cover of the search ball with
//!   union-of-balls mass queries, then quadratic polishing by repeated
//!   SQ projections.

use crate::geom::{Subspace, Vector};
use crate::matrix::{
    estimate_mean_matrix, estimate_mean_vector, KashinFrame, MatrixError, MatrixEstimateParams,
};
use crate::models::{omega, ManifoldModel, ModelError};
use crate::oracle::{OracleError, OracleSession, Query};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RoutineError {
    #[error("estimated ball mass {mass} ≤ τ = {tau}: bandwidth/Λ hypothesis violated")]
    MassTooSmall { mass: f64, tau: f64 },
    #[error("spectral gap too small: μ_d = {gap} below threshold {threshold}")]
    DegenerateSpectrum { gap: f64, threshold: f64 },
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),
    #[error("zero mass in ball")]
    ZeroMass,
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error("matrix estimation error: {0}")]
    Matrix(#[from] MatrixError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
}

/// Shared routine parameterization: model class constants plus tuned knobs.
///
/// The theory's absolute constants enter only through the `c_*` knobs
/// (default 1); Γ = f_min/(f_max + L·rch_min).
#[derive(Debug, Clone)]
pub struct RoutineParams {
    pub d: usize,
    pub n: usize,
    pub rch_min: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub lipschitz: f64,
    pub tau: f64,
    /// Multiplier on the τ-floor bandwidth term of sq_projection.
    pub c_proj: f64,
    /// Multiplier on the bandwidth of sq_tangent.
    pub c_tan: f64,
    /// Seed-radius knob: Λ0 = max{η, min(1/16, Γ/(2·c_seed^d))·rch}.
    pub c_seed: f64,
    /// Override for the tangent measurement count (default min(formula, k²)).
    pub tangent_q_override: Option<usize>,
    /// Seed for deterministic internal frames/operators.
    pub seed: u64,
}

impl RoutineParams {
    pub fn from_model(model: &ManifoldModel, tau: f64) -> Self {
        RoutineParams {
            d: model.d,
            n: model.n,
            rch_min: model.reach,
            f_min: model.density.f_min,
            f_max: model.density.f_max,
            lipschitz: model.density.lipschitz,
            tau,
            c_proj: 1.0,
            c_tan: 1.0,
            c_seed: 1.0,
            tangent_q_override: None,
            seed: 0x50_11d1,
        }
    }

    /// Γ = f_min/(f_max + L·rch_min) ∈ (0, 1].
    pub fn gamma(&self) -> f64 {
        self.f_min / (self.f_max + self.lipschitz * self.rch_min)
    }

    /// τ normalized by the f_min ball-mass scale.
    pub fn tau_tilde_min(&self) -> f64 {
        self.tau / (omega(self.d) * self.f_min * self.rch_min.powi(self.d as i32))
    }

    /// τ normalized by the f_max ball-mass scale.
    pub fn tau_tilde_max(&self) -> f64 {
        self.tau / (omega(self.d) * self.f_max * self.rch_min.powi(self.d as i32))
    }

    /// Joint validity bound: when one experiment drives several routines the
    /// stricter (f_min-normalized) bound is enforced.
    pub fn check_validity(&self) -> Result<(), RoutineError> {
        let g = self.gamma();
        if !(g > 0.0 && g <= 1.0) {
            return Err(RoutineError::Hypothesis(format!("Γ = {g} outside (0,1]")));
        }
        let bound = g.powi(self.d as i32);
        if self.tau_tilde_min() > bound {
            return Err(RoutineError::Hypothesis(format!(
                "normalized τ {} exceeds Γ^d = {bound}",
                self.tau_tilde_min()
            )));
        }
        Ok(())
    }

    /// Projection bandwidth h = max{2Λ, rch·Γ^{1/(d+1)}·τ̃^{1/(d+1)}·c_proj}.
    pub fn projection_bandwidth(&self, lambda: f64) -> f64 {
        let e = 1.0 / (self.d as f64 + 1.0);
        let floor = self.rch_min * self.gamma().powf(e) * self.tau_tilde_min().powf(e);
        (2.0 * lambda).max(self.c_proj * floor)
    }

    /// Tangent bandwidth h = rch·max{√(η/rch), τ̃_max^{1/(d+1)}}·c_tan.
    pub fn tangent_bandwidth(&self, eta: f64) -> f64 {
        let e = 1.0 / (self.d as f64 + 1.0);
        let t = (eta / self.rch_min).sqrt().max(self.tau_tilde_max().powf(e));
        self.c_tan * self.rch_min * t
    }

    /// Dynamic radius increment of the ambient binary search.
    pub fn search_delta(&self) -> f64 {
        6.0 * self.rch_min * self.tau_tilde_min().powf(1.0 / self.d as f64)
    }

    /// Raw localization radius Λ0 used by sq_seed.
    pub fn seed_lambda0(&self, eta: f64) -> f64 {
        let cap = (1.0_f64 / 16.0).min(self.gamma() / (2.0 * self.c_seed.powi(self.d as i32)));
        eta.max(cap * self.rch_min)
    }
}

/// Trace of one sq_projection call.
#[derive(Debug, Clone)]
pub struct ProjectionTrace {
    pub bandwidth: f64,
    pub mass_estimate: f64,
    pub queries_used: u64,
}

/// SQ metric projection: refines a point x0 with d(x0, M) ≤ Λ towards M
/// using exactly 2n+1 queries.
pub fn sq_projection(
    session: &mut OracleSession,
    params: &RoutineParams,
    x0: &Vector,
    lambda: f64,
) -> Result<(Vector, ProjectionTrace), RoutineError> {
    let h = params.projection_bandwidth(lambda);
    let before = session.budget_used;
    let idx = before;
    // Query 1: local mass â of B(x0, h).
    let x0c = x0.clone();
    let mass_q = Query::new(format!("proj-mass#{idx}"), {
        let x0 = x0c.clone();
        move |x: &Vector| if (x - &x0).norm() <= h { 1.0 } else { 0.0 }
    })
    .with_support(x0c.clone(), h);
    let a_hat = session.answer(&mass_q)?;
    if a_hat <= params.tau {
        return Err(RoutineError::MassTooSmall { mass: a_hat, tau: params.tau });
    }
    // Queries 2..2n+1: mean of F(x) = ((x−x0)/h)·1_ball via the tight frame.
    let frame = KashinFrame::new(params.n, params.seed ^ 0x9e37_79b9);
    let x0f = x0.clone();
    let v_hat = estimate_mean_vector(
        session,
        &frame,
        &move |x: &Vector| {
            let dlt = x - &x0f;
            if dlt.norm() <= h {
                dlt / h
            } else {
                DVector::zeros(x0f.len())
            }
        },
        Some((x0.clone(), h)),
        &format!("proj-mean#{idx}"),
    )?;
    let queries_used = session.budget_used - before;
    debug_assert_eq!(queries_used, 2 * params.n as u64 + 1);
    let out = x0 + v_hat * (h / a_hat);
    Ok((out, ProjectionTrace { bandwidth: h, mass_estimate: a_hat, queries_used }))
}

/// Ground-truth local conditional mean E[x | B(x0, h)] for bias testing.
pub fn local_conditional_mean(
    model: &ManifoldModel,
    x0: &Vector,
    h: f64,
) -> Result<Vector, RoutineError> {
    let (mass, _) = model.ball_mass(x0, h);
    if mass <= 0.0 {
        return Err(RoutineError::ZeroMass);
    }
    if model.d == 1 {
        let mut out = DVector::<f64>::zeros(model.n);
        for j in 0..model.n {
            let x0c = x0.clone();
            let num = model.expect_d1(
                |x: &Vector| if (x - &x0c).norm() <= h { x[j] } else { 0.0 },
                Some((x0, h)),
            );
            out[j] = num / mass;
        }
        Ok(out)
    } else {
        let bank = model.sample(0x10ca1, 400_000);
        let mut acc = DVector::<f64>::zeros(model.n);
        let mut hits = 0usize;
        for p in &bank.points {
            if (p - x0).norm() <= h {
                acc += p;
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(RoutineError::ZeroMass);
        }
        Ok(acc / hits as f64)
    }
}

/// Output of sq_tangent.
#[derive(Debug, Clone)]
pub struct TangentEstimate {
    pub subspace: Subspace,
    pub covariance: DMatrix<f64>,
    pub bandwidth: f64,
    pub queries_used: u64,
}

/// SQ tangent estimation at x0 with d(x0, M) ≤ η: estimates the normalized
/// local second moment Σ(x0,h) = E[(x−x0)(x−x0)ᵀ/h²·1_ball] by low-rank
/// matrix recovery and returns its top-d eigenspace.
pub fn sq_tangent(
    session: &mut OracleSession,
    params: &RoutineParams,
    x0: &Vector,
    eta: f64,
) -> Result<TangentEstimate, RoutineError> {
    let h = params.tangent_bandwidth(eta);
    let before = session.budget_used;
    let mut mp = MatrixEstimateParams::new(params.d);
    mp.q_override = params.tangent_q_override;
    mp.nu = 1.0; // F(x) has rank ≤ 1.
    mp.symmetric = true;
    mp.op_seed = params.seed ^ 0x7a4_6e7;
    let x0c = x0.clone();
    let n = params.n;
    let est = estimate_mean_matrix(
        session,
        &mp,
        n,
        &move |x: &Vector| {
            let dlt = x - &x0c;
            if dlt.norm() <= h {
                let v = dlt / h;
                &v * v.transpose()
            } else {
                DMatrix::zeros(n, n)
            }
        },
        Some((x0.clone(), h)),
        &format!("tan#{before}"),
    )?;
    let queries_used = session.budget_used - before;
    let eig = est.matrix.clone().symmetric_eigen();
    // Sort eigenpairs by decreasing eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mu_d = eig.eigenvalues[order[params.d - 1]];
    let threshold =
        omega(params.d) * params.f_min * (h / 8.0).powi(params.d as i32) / 2.0;
    if mu_d < threshold {
        return Err(RoutineError::DegenerateSpectrum { gap: mu_d, threshold });
    }
    let mut cols = DMatrix::<f64>::zeros(n, params.d);
    for (j, &i) in order.iter().take(params.d).enumerate() {
        cols.set_column(j, &eig.eigenvectors.column(i));
    }
    let subspace = Subspace::from_columns(&cols)
        .map_err(|e| RoutineError::Hypothesis(format!("eigenvector frame: {e}")))?;
    Ok(TangentEstimate { subspace, covariance: est.matrix, bandwidth: h, queries_used })
}

/// One round of the ambient binary search, for instrumentation.
#[derive(Debug, Clone)]
pub struct SearchRound {
    pub axis: usize,
    pub kept_low: bool,
    pub radius: f64,
    pub answer: f64,
    /// Ground-truth invariant "active cells still meet M", when instrumented.
    pub invariant_ok: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct SearchTrace {
    pub rounds: Vec<SearchRound>,
    pub queries_used: u64,
    pub lattice_log2_cells: f64,
}

/// Localizes a point of M inside B(0, R) to within Λ0 by binary search over
/// an implicit lattice cover.
///
/// The cover is the pitch-Λ0/√n integer lattice over the cube [−R, R]^n,
/// kept as an index box; each round splits the widest axis at its median and
/// queries the mass of the union of radius-h balls over the lower half,
/// growing h ← √(h² + Δ²) to absorb the τ-sized mass the adversary can hide.
pub fn sq_ambient_binary_search(
    session: &mut OracleSession,
    params: &RoutineParams,
    r_ball: f64,
    lambda0: f64,
    instrument: Option<&ManifoldModel>,
) -> Result<(Vector, SearchTrace), RoutineError> {
    if lambda0 > params.rch_min / 8.0 {
        return Err(RoutineError::Hypothesis(format!(
            "Λ0 = {lambda0} exceeds rch_min/8 = {}",
            params.rch_min / 8.0
        )));
    }
    let n = params.n;
    let pitch = lambda0 / (n as f64).sqrt();
    let half = (r_ball / pitch).ceil() as i64;
    let mut lo = vec![-half; n];
    let mut hi = vec![half; n];
    let mut h = lambda0 / 2.0;
    let delta = params.search_delta();
    let before = session.budget_used;
    let mut rounds = Vec::new();
    let reference = instrument.map(|m| m.reference_cloud(pitch / 2.0));

    let covered = |lo: &[i64], hi: &[i64], h: f64, x: &Vector| -> bool {
        // Nearest in-box lattice point by componentwise clamp-round.
        let mut d2 = 0.0;
        for j in 0..n {
            let zj = (x[j] / pitch).round().clamp(lo[j] as f64, hi[j] as f64);
            let dj = x[j] - zj * pitch;
            d2 += dj * dj;
        }
        d2 <= h * h
    };

    loop {
        // Widest axis.
        let axis = (0..n).max_by_key(|&j| hi[j] - lo[j]).unwrap();
        if hi[axis] == lo[axis] {
            break;
        }
        h = (h * h + delta * delta).sqrt();
        let mid = (lo[axis] + hi[axis]).div_euclid(2);
        let (mut llo, mut lhi) = (lo.clone(), hi.clone());
        llo.clone_from(&lo);
        lhi[axis] = mid;
        // Support hint: box circumball.
        let mut center = DVector::<f64>::zeros(n);
        let mut rad2 = 0.0;
        for j in 0..n {
            center[j] = (llo[j] + lhi[j]) as f64 / 2.0 * pitch;
            let half_j = (lhi[j] - llo[j]) as f64 / 2.0 * pitch;
            rad2 += half_j * half_j;
        }
        let hint_r = rad2.sqrt() + h;
        let (qlo, qhi, qh) = (llo.clone(), lhi.clone(), h);
        let q = Query::new(format!("search#{}", session.budget_used), {
            let covered = &covered;
            move |x: &Vector| if covered(&qlo, &qhi, qh, x) { 1.0 } else { 0.0 }
        })
        .with_support(center, hint_r);
        let a = session.answer(&q)?;
        let keep_low = a > params.tau;
        if keep_low {
            hi = lhi;
        } else {
            lo[axis] = mid + 1;
        }
        let invariant_ok = reference.as_ref().map(|rc| {
            rc.cloud.points.iter().any(|p| covered(&lo, &hi, h, p))
        });
        rounds.push(SearchRound { axis, kept_low: keep_low, radius: h, answer: a, invariant_ok });
    }
    let out = DVector::from_fn(n, |j, _| lo[j] as f64 * pitch);
    let log2_cells = (0..n).map(|_| ((2 * half + 1) as f64).log2()).sum();
    Ok((
        out,
        SearchTrace {
            rounds,
            queries_used: session.budget_used - before,
            lattice_log2_cells: log2_cells,
        },
    ))
}

/// Trace of sq_seed: raw localization plus projection refinements.
#[derive(Debug, Clone)]
pub struct SeedTrace {
    pub lambda0: f64,
    pub refinements: usize,
    pub search: SearchTrace,
    pub queries_used: u64,
    /// Ground-truth distances after each stage, when instrumented.
    pub distances: Vec<f64>,
}

/// Finds a point within η of M inside B(0, R): raw binary search at radius
/// Λ0, then k₀ = ⌈log₂(Λ0/η)⌉ SQ-projection refinements that (at least)
/// halve the distance per step down to the quadratic floor.
pub fn sq_seed(
    session: &mut OracleSession,
    params: &RoutineParams,
    r_ball: f64,
    eta: f64,
    instrument: Option<&ManifoldModel>,
) -> Result<(Vector, SeedTrace), RoutineError> {
    let before = session.budget_used;
    let lambda0 = params.seed_lambda0(eta);
    let (mut x, search) = sq_ambient_binary_search(session, params, r_ball, lambda0, instrument)?;
    let mut distances = Vec::new();
    if let Some(m) = instrument {
        distances.push(m.distance(&x));
    }
    let refinements = if lambda0 <= eta {
        0
    } else {
        (lambda0 / eta).log2().ceil() as usize
    };
    let mut lambda = lambda0;
    for _ in 0..refinements {
        let (xn, _) = sq_projection(session, params, &x, lambda)?;
        x = xn;
        lambda = (lambda / 2.0).max(eta);
        if let Some(m) = instrument {
            distances.push(m.distance(&x));
        }
    }
    Ok((
        x,
        SeedTrace {
            lambda0,
            refinements,
            search,
            queries_used: session.budget_used - before,
            distances,
        },
    ))
}
