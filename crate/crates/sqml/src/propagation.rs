//! Manifold Propagation and the end-to-end estimators.
//!
//! [`propagate`] is the breadth-first exploration loop: starting from a seed
//! near M, it repeatedly estimates the local tangent space, steps distance Δ
//! along a maximal (sin α)-packing of tangent directions, keeps candidates
//! that are δ-far from everything seen, and projects them back near M. The
//! output cloud is η-close to M, (Δ+η)-covers it, and stays δ-separated up
//! to curvature terms.
//!
//! [`estimate_fixed_point`] and [`estimate_bounding_ball`] wire the SQ
//! routines into this loop with the bandwidth/step ledger derived from the
//! target precision ε, and [`evaluate`] scores any estimate against a dense
//! reference sample of the hidden manifold.

use crate::geom::{direction_packing, farthest_point_sample, principal_angle, PointCloud, Subspace, Vector};
use crate::models::ManifoldModel;
use crate::oracle::OracleSession;
use crate::routines::{sq_projection, sq_seed, sq_tangent, RoutineError, RoutineParams};
use nalgebra::DVector;
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("propagation exceeded max_loops = {max_loops} (|O| = {cloud}, |Q| = {queue})")]
    MaxLoops { max_loops: usize, cloud: usize, queue: usize },
    #[error("routine failure: {0}")]
    Routine(#[from] RoutineError),
}

/// Geometry of one propagation run.
#[derive(Debug, Clone, Serialize)]
pub struct PropagationConfig {
    /// Step length Δ.
    pub step: f64,
    /// Proximity radius δ.
    pub proximity: f64,
    pub sin_alpha: f64,
    /// Projection validity radius Λ.
    pub lambda: f64,
    /// Point precision η.
    pub eta: f64,
    /// Tangent accuracy sin θ (used by the separation ledger).
    pub sin_theta: f64,
    pub rch_min: f64,
    pub max_loops: usize,
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let e = |m: String| Err(PropagationError::Config(m));
        if !(self.proximity >= 0.3 * self.step && self.proximity <= 0.7 * self.step) {
            return e(format!("δ = {} outside [3Δ/10, 7Δ/10], Δ = {}", self.proximity, self.step));
        }
        if self.sin_alpha > 1.0 / 64.0 || self.sin_theta > 1.0 / 64.0 {
            return e(format!("sin α = {} or sin θ = {} above 1/64", self.sin_alpha, self.sin_theta));
        }
        if !(64.0 * self.eta <= self.step && self.step <= self.rch_min / 24.0) {
            return e(format!("Δ = {} outside [64η, rch/24], η = {}", self.step, self.eta));
        }
        let lambda_floor =
            5.0 * self.step * self.step / (8.0 * self.rch_min) + self.eta + self.step * self.sin_theta;
        if self.lambda < lambda_floor {
            return e(format!("Λ = {} below the validity floor {lambda_floor}", self.lambda));
        }
        Ok(())
    }

    /// Volumetric loop budget H^d/(ω_d (δ/32)^d).
    pub fn loop_bound(&self, volume: f64, d: usize) -> f64 {
        volume / (crate::models::omega(d) * (self.proximity / 32.0).powi(d as i32))
    }

    /// Guaranteed residual pairwise separation.
    pub fn separation_floor(&self) -> f64 {
        self.proximity
            - 5.0 / 8.0 * self.step * self.step / self.rch_min
            - 2.0 * self.eta
            - self.step * self.sin_theta
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PropagationDiagnostics {
    /// Max ground-truth distance to M over Q∪O at loop boundaries
    /// (instrumented runs only).
    pub max_dist_to_m: Option<f64>,
    /// Min pairwise distance ever observed among kept points.
    pub min_separation: f64,
}

#[derive(Debug, Clone)]
pub struct PointCloudEstimate {
    pub o: PointCloud,
    pub t_o: Vec<Subspace>,
    pub loops_used: usize,
    pub queries_used: u64,
    pub config: PropagationConfig,
    pub diagnostics: PropagationDiagnostics,
    /// Δ-sparsified reconstruction subset (indices into `o`).
    pub reconstruction: Vec<usize>,
}

/// Runs Manifold Propagation from `seed` with pluggable routines.
///
/// `proj` refines a point with d(·, M) ≤ Λ; `tan` returns a d-dimensional
/// tangent estimate at an η-close point. FIFO queue discipline; candidate
/// proximity is tested against the unprojected step point, as in the
/// breadth-first formulation.
pub fn propagate<P, T>(
    seed: &Vector,
    mut proj: P,
    mut tan: T,
    d: usize,
    config: &PropagationConfig,
    instrument: Option<&ManifoldModel>,
) -> Result<PointCloudEstimate, PropagationError>
where
    P: FnMut(&Vector) -> Result<Vector, RoutineError>,
    T: FnMut(&Vector) -> Result<Subspace, RoutineError>,
{
    config.validate()?;
    let mut queue: VecDeque<Vector> = VecDeque::new();
    let mut o: Vec<Vector> = Vec::new();
    let mut t_o: Vec<Subspace> = Vec::new();
    let mut min_sep = f64::INFINITY;
    let mut max_dist: Option<f64> = instrument.map(|m| m.distance(seed));
    queue.push_back(seed.clone());
    while let Some(x) = queue.pop_front() {
        if o.len() >= config.max_loops {
            return Err(PropagationError::MaxLoops {
                max_loops: config.max_loops,
                cloud: o.len(),
                queue: queue.len(),
            });
        }
        let t = tan(&x)?;
        let dirs = direction_packing(&t, config.sin_alpha);
        for v in &dirs {
            let cand = &x + v * config.step;
            // Proximity against everything seen (queue, cloud, and current x).
            let mut near = (&cand - &x).norm() < config.proximity;
            if !near {
                for p in o.iter().chain(queue.iter()) {
                    if (&cand - p).norm() < config.proximity {
                        near = true;
                        break;
                    }
                }
            }
            if near {
                continue;
            }
            let refined = proj(&cand)?;
            // Separation bookkeeping: distance of the kept point to all others.
            for p in o.iter().chain(queue.iter()).chain(std::iter::once(&x)) {
                min_sep = min_sep.min((&refined - p).norm());
            }
            if let (Some(m), Some(md)) = (instrument, max_dist.as_mut()) {
                *md = md.max(m.distance(&refined));
            }
            queue.push_back(refined);
        }
        o.push(x);
        t_o.push(t);
        if d == 0 {
            break;
        }
    }
    let cloud = PointCloud::new(o);
    let reconstruction = sparsify_indices(&cloud, config.step);
    Ok(PointCloudEstimate {
        loops_used: cloud.len(),
        o: cloud,
        t_o,
        queries_used: 0,
        config: config.clone(),
        diagnostics: PropagationDiagnostics { max_dist_to_m: max_dist, min_separation: min_sep },
        reconstruction,
    })
}

fn sparsify_indices(cloud: &PointCloud, radius: f64) -> Vec<usize> {
    let sub = farthest_point_sample(cloud, radius);
    // Map sampled points back to indices.
    let mut idx = Vec::with_capacity(sub.len());
    for p in &sub.points {
        for (i, q) in cloud.points.iter().enumerate() {
            if (p - q).norm() == 0.0 {
                idx.push(i);
                break;
            }
        }
    }
    idx
}

/// End-to-end parameter knobs with calibrated defaults.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorKnobs {
    /// Δ = rch·√(ε/(rch·cbar_d)) in the ε-dominated regime.
    pub cbar_d: f64,
    /// 𝐂 of the τ-floor terms.
    pub bold_c: f64,
    pub max_loops: usize,
}

impl Default for EstimatorKnobs {
    fn default() -> Self {
        EstimatorKnobs { cbar_d: 32.0, bold_c: 2.0, max_loops: 200_000 }
    }
}

/// The derived propagation ledger for precision ε.
pub fn derive_config(
    params: &RoutineParams,
    eps: f64,
    knobs: &EstimatorKnobs,
) -> PropagationConfig {
    let rch = params.rch_min;
    let tt = params.tau_tilde_min();
    let e1 = 1.0 / (params.d as f64 + 1.0);
    let step = rch * (eps / (rch * knobs.cbar_d)).sqrt().max(knobs.bold_c.powf(1.5) * tt.powf(e1));
    let eta = rch
        * ((step / rch).powi(2) / knobs.bold_c.powi(2)).max(knobs.bold_c * tt.powf(2.0 * e1));
    let lambda = 3.0 * rch * (step / rch).powi(2).max(knobs.bold_c.powi(3) * tt.powf(2.0 * e1));
    PropagationConfig {
        step,
        proximity: step / 2.0,
        sin_alpha: 1.0 / 64.0,
        lambda,
        eta,
        sin_theta: 1.0 / 64.0,
        rch_min: rch,
        max_loops: knobs.max_loops,
    }
}

/// Evaluation metrics against the hidden model.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateMetrics {
    pub hausdorff_to_m: f64,
    pub max_dist_to_m: f64,
    /// Covering radius of M by the estimate.
    pub covering_radius: f64,
    pub min_separation: f64,
    pub max_tangent_angle: f64,
    pub r_ref: f64,
    pub resolution_warning: bool,
}

/// Scores an estimate against a dense reference sample at resolution r_ref.
pub fn evaluate(
    est: &PointCloudEstimate,
    model: &ManifoldModel,
    r_ref: f64,
    target_eps: Option<f64>,
) -> EstimateMetrics {
    let rc = model.reference_cloud(r_ref);
    let haus = crate::geom::hausdorff(&est.o, &rc.cloud).unwrap_or(f64::INFINITY);
    let max_dist = est.o.points.iter().map(|p| model.distance(p)).fold(0.0f64, f64::max);
    let covering = crate::geom::directed_hausdorff(&rc.cloud, &est.o);
    let mut min_sep = f64::INFINITY;
    for i in 0..est.o.len() {
        for j in 0..i {
            min_sep = min_sep.min((&est.o.points[i] - &est.o.points[j]).norm());
        }
    }
    let mut max_angle = 0.0f64;
    for (p, t) in est.o.points.iter().zip(&est.t_o) {
        if let Ok(proj) = model.project(p) {
            if let Ok(truth) = model.tangent(&proj) {
                if let Ok(a) = principal_angle(t, &truth) {
                    max_angle = max_angle.max(a);
                }
            }
        }
    }
    let resolution_warning = target_eps.map(|e| r_ref > e / 10.0).unwrap_or(false);
    EstimateMetrics {
        hausdorff_to_m: haus,
        max_dist_to_m: max_dist,
        covering_radius: covering,
        min_separation: min_sep,
        max_tangent_angle: max_angle,
        r_ref,
        resolution_warning,
    }
}

/// Budget split of an end-to-end run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BudgetBreakdown {
    pub seed_queries: u64,
    pub propagation_queries: u64,
    pub total_queries: u64,
}

/// End-to-end fixed-point estimator: assumes 0 ∈ M and runs propagation
/// from the origin with the ε-derived ledger.
pub fn estimate_fixed_point(
    session: &mut OracleSession,
    params: &RoutineParams,
    eps: f64,
    knobs: &EstimatorKnobs,
) -> Result<(PointCloudEstimate, BudgetBreakdown), PropagationError> {
    params.check_validity().map_err(PropagationError::Routine)?;
    let config = derive_config(params, eps, knobs);
    config.validate()?;
    let mut p = params.clone();
    if p.tangent_q_override.is_none() {
        let k = p.n.next_power_of_two().max(2);
        p.tangent_q_override = Some((6 * p.d * k).min(k * k));
    }
    let seed = DVector::<f64>::zeros(params.n);
    let before = session.budget_used;
    let est = run_propagation(session, &p, &seed, &config)?;
    let total = session.budget_used - before;
    Ok((
        est,
        BudgetBreakdown { seed_queries: 0, propagation_queries: total, total_queries: total },
    ))
}

/// End-to-end bounding-ball estimator: M ⊆ B(0, R); localizes a seed with
/// the SQ search at precision ε/2, polishes it to the propagation precision
/// η, then runs the identical pipeline.
pub fn estimate_bounding_ball(
    session: &mut OracleSession,
    params: &RoutineParams,
    eps: f64,
    r_ball: f64,
    knobs: &EstimatorKnobs,
) -> Result<(PointCloudEstimate, BudgetBreakdown), PropagationError> {
    params.check_validity().map_err(PropagationError::Routine)?;
    if r_ball < params.rch_min / 2.0_f64.sqrt() {
        return Err(PropagationError::Config(format!(
            "R = {r_ball} below the feasibility floor rch/√2 = {}",
            params.rch_min / 2.0_f64.sqrt()
        )));
    }
    let config = derive_config(params, eps, knobs);
    config.validate()?;
    let mut p = params.clone();
    if p.tangent_q_override.is_none() {
        let k = p.n.next_power_of_two().max(2);
        p.tangent_q_override = Some((6 * p.d * k).min(k * k));
    }
    let before = session.budget_used;
    let (mut seed, seed_trace) = sq_seed(session, &p, r_ball, eps / 2.0, None)?;
    let seed_queries = seed_trace.queries_used;
    // Polish the seed down to the propagation precision η.
    let mut lambda = eps / 2.0;
    while lambda > config.eta {
        let (s2, _) = sq_projection(session, &p, &seed, lambda)?;
        seed = s2;
        lambda /= 2.0;
    }
    let est = run_propagation(session, &p, &seed, &config)?;
    let total = session.budget_used - before;
    Ok((
        est,
        BudgetBreakdown {
            seed_queries,
            propagation_queries: total - seed_queries,
            total_queries: total,
        },
    ))
}

fn run_propagation(
    session: &mut OracleSession,
    params: &RoutineParams,
    seed: &Vector,
    config: &PropagationConfig,
) -> Result<PointCloudEstimate, PropagationError> {
    let before = session.budget_used;
    let cell = std::cell::RefCell::new(session);
    let mut est = propagate(
        seed,
        |x| {
            let mut s = cell.borrow_mut();
            sq_projection(&mut s, params, x, config.lambda).map(|(p, _)| p)
        },
        |x| {
            let mut s = cell.borrow_mut();
            sq_tangent(&mut s, params, x, config.eta).map(|t| t.subspace)
        },
        params.d,
        config,
        None,
    )?;
    est.queries_used = cell.borrow().budget_used - before;
    Ok(est)
}

/// Serializable estimate report (the external JSON surface).
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    /// Row-major points.
    pub o: Vec<Vec<f64>>,
    /// Per-point tangent frames, each row-major n×d.
    pub t_o: Vec<Vec<Vec<f64>>>,
    pub loops_used: usize,
    pub queries_used: u64,
    pub config: PropagationConfig,
    pub metrics: Option<EstimateMetrics>,
    pub budget: BudgetBreakdown,
    pub transcript_count: usize,
    pub transcript_digest: String,
}

impl EstimateReport {
    pub fn build(
        est: &PointCloudEstimate,
        metrics: Option<EstimateMetrics>,
        budget: &BudgetBreakdown,
        session: &OracleSession,
    ) -> Self {
        EstimateReport {
            o: est.o.points.iter().map(|p| p.iter().cloned().collect()).collect(),
            t_o: est
                .t_o
                .iter()
                .map(|t| {
                    let f = t.frame();
                    (0..f.nrows())
                        .map(|r| (0..f.ncols()).map(|c| f[(r, c)]).collect())
                        .collect()
                })
                .collect(),
            loops_used: est.loops_used,
            queries_used: est.queries_used,
            config: est.config.clone(),
            metrics,
            budget: budget.clone(),
            transcript_count: session.transcript.len(),
            transcript_digest: session.transcript_digest(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DensitySpec, ManifoldModel};
    use crate::oracle::AdversaryPolicy;
    use std::sync::Arc;

    fn circle(n: usize) -> Arc<ManifoldModel> {
        let mut c = DVector::zeros(n);
        c[0] = 1.0; // passes through the origin
        Arc::new(ManifoldModel::make_sphere(1, n, 1.0, c, DensitySpec::Uniform).unwrap())
    }

    fn perfect_routines_config(m: &ManifoldModel, step: f64) -> PropagationConfig {
        PropagationConfig {
            step,
            proximity: step / 2.0,
            sin_alpha: 1.0 / 64.0,
            lambda: step,
            eta: step / 64.0,
            sin_theta: 0.0,
            rch_min: m.reach,
            max_loops: 100_000,
        }
    }

    #[test]
    fn config_validation() {
        let m = circle(2);
        let mut c = perfect_routines_config(&m, m.reach / 24.0);
        c.validate().unwrap();
        c.proximity = c.step; // δ > 7Δ/10
        assert!(c.validate().is_err());
        let mut c2 = perfect_routines_config(&m, m.reach / 10.0); // Δ > rch/24
        c2.lambda = 1.0;
        assert!(c2.validate().is_err());
    }

    #[test]
    fn propagate_perfect_routines_covers_circle() {
        let m = circle(2);
        let config = perfect_routines_config(&m, m.reach / 24.0);
        let seed = DVector::zeros(2);
        let est = propagate(
            &seed,
            |x| Ok(m.project(x).unwrap()),
            |x| {
                let p = m.project(x).unwrap();
                Ok(m.tangent(&p).unwrap())
            },
            1,
            &config,
            Some(&m),
        )
        .unwrap();
        assert_eq!(est.loops_used, est.o.len());
        assert!(est.loops_used as f64 <= config.loop_bound(m.volume, 1));
        // η-closeness (seed exactly on M, perfect projection).
        assert!(est.diagnostics.max_dist_to_m.unwrap() <= config.eta + 1e-12);
        // (Δ+η)-covering of M.
        let metrics = evaluate(&est, &m, config.step / 20.0, None);
        assert!(
            metrics.covering_radius <= config.step + config.eta,
            "covering {} > Δ+η",
            metrics.covering_radius
        );
        // Separation floor.
        assert!(
            est.diagnostics.min_separation >= config.separation_floor() - 1e-12,
            "separation {} below floor {}",
            est.diagnostics.min_separation,
            config.separation_floor()
        );
    }

    #[test]
    fn propagate_first_loop_adds_at_most_packing() {
        let m = circle(2);
        let config = perfect_routines_config(&m, m.reach / 24.0);
        let seed = DVector::zeros(2);
        let mut first_additions = None;
        let mut calls = 0usize;
        let _ = propagate(
            &seed,
            |x| Ok(m.project(x).unwrap()),
            |x| {
                calls += 1;
                if calls == 2 && first_additions.is_none() {
                    first_additions = Some(());
                }
                let p = m.project(x).unwrap();
                Ok(m.tangent(&p).unwrap())
            },
            1,
            &config,
            None,
        )
        .unwrap();
        // d = 1 packing has exactly 2 directions: first loop adds ≤ 2.
        let t = m.tangent(&m.project(&seed).unwrap()).unwrap();
        assert_eq!(direction_packing(&t, config.sin_alpha).len(), 2);
    }

    #[test]
    fn max_loops_diagnostic() {
        let m = circle(2);
        let mut config = perfect_routines_config(&m, m.reach / 24.0);
        config.max_loops = 3;
        let seed = DVector::zeros(2);
        let res = propagate(
            &seed,
            |x| Ok(m.project(x).unwrap()),
            |x| {
                let p = m.project(x).unwrap();
                Ok(m.tangent(&p).unwrap())
            },
            1,
            &config,
            None,
        );
        assert!(matches!(res, Err(PropagationError::MaxLoops { max_loops: 3, .. })));
    }

    #[test]
    fn fixed_point_end_to_end_small() {
        let m = circle(3);
        let mut session = OracleSession::new(m.clone(), 1e-9, AdversaryPolicy::Exact, 1);
        let params = RoutineParams::from_model(&m, 1e-9);
        let eps = m.reach / 25.0;
        let (est, budget) =
            estimate_fixed_point(&mut session, &params, eps, &EstimatorKnobs::default()).unwrap();
        assert_eq!(budget.total_queries, est.queries_used);
        let metrics = evaluate(&est, &m, eps / 10.0, Some(eps));
        assert!(metrics.hausdorff_to_m <= 4.0 * eps, "hausdorff {} > 4ε", metrics.hausdorff_to_m);
        assert!(metrics.max_dist_to_m <= est.config.eta * 1.5 + 1e-9);
        assert!(!metrics.resolution_warning);
    }

    #[test]
    fn fixed_point_deterministic() {
        let m = circle(3);
        let params = RoutineParams::from_model(&m, 1e-9);
        let eps = m.reach / 25.0;
        let run = || {
            let mut s = OracleSession::new(m.clone(), 1e-9, AdversaryPolicy::Exact, 9);
            let (est, _) =
                estimate_fixed_point(&mut s, &params, eps, &EstimatorKnobs::default()).unwrap();
            (est, s.transcript_digest())
        };
        let (a, da) = run();
        let (b, db) = run();
        assert_eq!(da, db);
        assert_eq!(a.o.len(), b.o.len());
        for (p, q) in a.o.points.iter().zip(&b.o.points) {
            assert_eq!(p, q, "non-deterministic output");
        }
    }

    #[test]
    fn bounding_ball_translated_circle() {
        // Circle far from the origin: fixed-point seeding would start off-M,
        // the search-based pipeline still succeeds.
        let mut c = DVector::zeros(3);
        c[0] = 3.0;
        let m = Arc::new(
            ManifoldModel::make_sphere(1, 3, 1.0, c, DensitySpec::Uniform).unwrap(),
        );
        let mut session = OracleSession::new(m.clone(), 1e-9, AdversaryPolicy::Exact, 2);
        let params = RoutineParams::from_model(&m, 1e-9);
        let eps = m.reach / 25.0;
        let r_ball = 5.0;
        let (est, budget) =
            estimate_bounding_ball(&mut session, &params, eps, r_ball, &EstimatorKnobs::default())
                .unwrap();
        let metrics = evaluate(&est, &m, eps / 10.0, Some(eps));
        assert!(metrics.hausdorff_to_m <= 4.0 * eps, "hausdorff {}", metrics.hausdorff_to_m);
        // Seed-phase budget ≤ 6n·log2(12R/ε).
        let bound = 6.0 * params.n as f64 * (12.0 * r_ball / eps).log2();
        assert!(budget.seed_queries as f64 <= bound);
        assert!(budget.seed_queries + budget.propagation_queries == budget.total_queries);
        // R below rch/√2 is rejected.
        let mut s2 = OracleSession::new(m.clone(), 1e-9, AdversaryPolicy::Exact, 2);
        assert!(matches!(
            estimate_bounding_ball(&mut s2, &params, eps, 0.5, &EstimatorKnobs::default()),
            Err(PropagationError::Config(_))
        ));
    }

    #[test]
    fn evaluate_metric_sanity() {
        let m = circle(2);
        let rc = m.reference_cloud(0.01);
        let est = PointCloudEstimate {
            o: rc.cloud.clone(),
            t_o: rc
                .cloud
                .points
                .iter()
                .map(|p| m.tangent(&m.project(p).unwrap()).unwrap())
                .collect(),
            loops_used: rc.cloud.len(),
            queries_used: 0,
            config: perfect_routines_config(&m, m.reach / 24.0),
            diagnostics: Default::default(),
            reconstruction: vec![],
        };
        let metrics = evaluate(&est, &m, 0.01, None);
        assert!(metrics.hausdorff_to_m <= 0.01);
        assert!(metrics.max_tangent_angle <= 1e-8);
        // Adding an outlier drives max_dist accordingly.
        let mut o2 = est.o.clone();
        let far = DVector::from_vec(vec![10.0, 0.0]);
        let far_dist = m.distance(&far);
        o2.points.push(far);
        let mut est2 = est.clone();
        est2.o = o2;
        est2.t_o.push(est2.t_o[0].clone());
        let m2 = evaluate(&est2, &m, 0.01, None);
        assert!((m2.max_dist_to_m - far_dist).abs() < 1e-12);
        // Covering radius is monotone under adding points.
        assert!(m2.covering_radius <= metrics.covering_radius + 1e-12);
    }

    #[test]
    fn report_serializes() {
        let m = circle(2);
        let mut session = OracleSession::new(m.clone(), 1e-6, AdversaryPolicy::Exact, 3);
        let params = RoutineParams::from_model(&m, 1e-6);
        let eps = m.reach / 25.0;
        let (est, budget) =
            estimate_fixed_point(&mut session, &params, eps, &EstimatorKnobs::default()).unwrap();
        let metrics = evaluate(&est, &m, eps / 10.0, Some(eps));
        let report = EstimateReport::build(&est, Some(metrics), &budget, &session);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("transcript_digest"));
        assert!(json.contains("\"o\""));
    }
}
