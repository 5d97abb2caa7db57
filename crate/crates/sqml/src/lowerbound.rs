//! Constructive lower-bound machinery.
//!
//! The hardness side of the library: smooth bump diffeomorphisms and the
//! Le Cam indistinguishable pairs they generate, Hamiltonian snake paths on
//! discrete grids, widget manifolds of prescribed volume glued along those
//! paths, ambient translation packings, and the final query-count
//! arithmetic turning a packing cardinality into a lower bound on the
//! number of τ-accurate statistical queries.

use crate::geom::{PointCloud, Vector};
use crate::models::{omega, sigma, ManifoldModel, ModelError, ReferenceCloud, Shape};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LowerBoundError {
    #[error("invalid construction: {0}")]
    Config(String),
    #[error("differential bound violated: {0}")]
    DifferentialBound(String),
    #[error("infeasible prescription: {0}")]
    Infeasible(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Bump maps
// ---------------------------------------------------------------------------

/// The smooth compactly supported profile φ(y) = exp(−‖y‖²/(1−‖y‖²)) on the
/// open unit ball, zero outside. φ(0) = 1.
pub fn bump_profile(y: &Vector) -> f64 {
    let s = y.norm_squared();
    if s >= 1.0 {
        0.0
    } else {
        (-s / (1.0 - s)).exp()
    }
}

/// A finite family of disjoint normal bumps
/// Φ(x) = x + η_b · Σ_i φ((x − p_i)/δ) w_i.
#[derive(Debug, Clone)]
pub struct BumpMap {
    pub centers: Vec<Vector>,
    pub directions: Vec<Vector>,
    pub delta: f64,
    pub eta_b: f64,
}

impl BumpMap {
    /// Constructor verifies: unit directions, pairwise center distance > 2δ,
    /// and the differential bounds sup‖I − dΦ‖ ≤ 5η_b/(2δ) and
    /// sup‖d²Φ‖ ≤ 23η_b/δ² by finite differences on a probe grid.
    pub fn new(
        centers: Vec<Vector>,
        directions: Vec<Vector>,
        delta: f64,
        eta_b: f64,
    ) -> Result<Self, LowerBoundError> {
        if centers.len() != directions.len() {
            return Err(LowerBoundError::Config("centers/directions length mismatch".into()));
        }
        if delta <= 0.0 || eta_b < 0.0 {
            return Err(LowerBoundError::Config(format!("delta = {delta}, eta_b = {eta_b}")));
        }
        for w in &directions {
            if (w.norm() - 1.0).abs() > 1e-12 {
                return Err(LowerBoundError::Config("direction not unit".into()));
            }
        }
        for i in 0..centers.len() {
            for j in 0..i {
                let dist = (&centers[i] - &centers[j]).norm();
                if dist <= 2.0 * delta {
                    return Err(LowerBoundError::Config(format!(
                        "bump balls overlap: centers {j},{i} at distance {dist} ≤ 2δ"
                    )));
                }
            }
        }
        let map = BumpMap { centers, directions, delta, eta_b };
        let (jac_dev, second) = map.probe_differentials(100, 0x1eca);
        let jac_bound = 5.0 * eta_b / (2.0 * delta) * (1.0 + 1e-3);
        let sec_bound = 23.0 * eta_b / (delta * delta) * (1.0 + 1e-2);
        if jac_dev > jac_bound {
            return Err(LowerBoundError::DifferentialBound(format!(
                "sup‖I − dΦ‖ probe {jac_dev} > {jac_bound}"
            )));
        }
        if second > sec_bound {
            return Err(LowerBoundError::DifferentialBound(format!(
                "sup‖d²Φ‖ probe {second} > {sec_bound}"
            )));
        }
        Ok(map)
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        x + self.displacement(x)
    }

    /// The perturbation field Φ(x) − x, computed directly so its tiny
    /// magnitude is not lost to cancellation against x.
    pub fn displacement(&self, x: &Vector) -> Vector {
        let mut out = DVector::zeros(x.len());
        for (p, w) in self.centers.iter().zip(&self.directions) {
            let y = (x - p) / self.delta;
            let f = bump_profile(&y);
            if f > 0.0 {
                out += w * (self.eta_b * f);
            }
        }
        out
    }

    /// Analytic differential dΦ(x) = I + (η_b/δ)·w ∇φ((x−p)/δ)ᵀ with
    /// ∇φ(y) = −2 φ(y) y/(1−‖y‖²)².
    pub fn jacobian(&self, x: &Vector) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::<f64>::identity(n, n);
        for (p, w) in self.centers.iter().zip(&self.directions) {
            let y = (x - p) / self.delta;
            let s = y.norm_squared();
            if s >= 1.0 {
                continue;
            }
            let f = bump_profile(&y);
            let grad = &y * (-2.0 * f / ((1.0 - s) * (1.0 - s)));
            j += w * grad.transpose() * (self.eta_b / self.delta);
        }
        j
    }

    /// Finite-difference probe of the two differential bounds: returns
    /// (max ‖I − dΦ‖, max directional second difference) over seeded probe
    /// points inside the bump balls.
    pub fn probe_differentials(&self, probes_per_bump: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_jac = 0.0f64;
        let mut max_sec = 0.0f64;
        let h1 = 1e-6 * self.delta;
        let h2 = 1e-4 * self.delta;
        for p in &self.centers {
            let n = p.len();
            for _ in 0..probes_per_bump {
                // Uniform-in-ball probe point (rejection from the cube).
                let x = loop {
                    let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..1.0));
                    if v.norm() < 1.0 {
                        break p + v * self.delta;
                    }
                };
                // dΦ − I = d(displacement): finite-difference the small
                // field to avoid cancellation against the identity part.
                let mut jac = DMatrix::<f64>::zeros(n, n);
                for c in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += h1;
                    xm[c] -= h1;
                    let col = (self.displacement(&xp) - self.displacement(&xm)) / (2.0 * h1);
                    jac.set_column(c, &col);
                }
                let dev = jac.svd(false, false).singular_values[0];
                max_jac = max_jac.max(dev);
                // Directional second difference along a random unit vector.
                let mut u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0f64..1.0));
                if u.norm() < 1e-12 {
                    u[0] = 1.0;
                }
                u /= u.norm();
                let sec = (self.displacement(&(&x + &u * h2)) - self.displacement(&x) * 2.0
                    + self.displacement(&(&x - &u * h2)))
                    / (h2 * h2);
                max_sec = max_sec.max(sec.norm());
            }
        }
        (max_jac, max_sec)
    }
}

// ---------------------------------------------------------------------------
// Le Cam pairs
// ---------------------------------------------------------------------------

/// A two-point indistinguishability instance: the base model D0 and its
/// single-bump perturbation D1 = Φ#D0, with measured and predicted TV and
/// Hausdorff quantities.
#[derive(Debug, Clone)]
pub struct LeCamPair {
    pub d0: Arc<ManifoldModel>,
    pub d1: Arc<ManifoldModel>,
    pub bump: Option<BumpMap>,
    /// Bump radius δ (after the small-τ clamp, if active).
    pub delta: f64,
    /// Bump height η_b = δ²/(92·rch_min); equals d_H(M0, M1) exactly.
    pub eta_b: f64,
    pub clamped: bool,
    pub rch_min: f64,
    /// τ/2, the TV level the pair is built for.
    pub predicted_tv: f64,
    /// Envelope 12·2^d ω_d δ^d / H^d(M0) ≥ TV from the construction.
    pub tv_envelope: f64,
    /// Exact support-region TV (arc mass of the bump ball under D0).
    pub measured_tv: f64,
    /// Dense-cloud Hausdorff between M0 and M1 (matched parameter grids).
    pub measured_hausdorff: f64,
    /// Minimax separation rate the pair certifies (two-point bound):
    /// rch/2²⁰ · min{1/(2²⁰ d²), (τ/(ω_d f_min rch^d))^{2/d}}.
    pub predicted_separation: f64,
}

/// The two-point separation rate certified at noise level τ.
pub fn lecam_rate_bound(d: usize, rch_min: f64, f_min: f64, tau: f64) -> f64 {
    let t = tau / (omega(d) * f_min * rch_min.powi(d as i32));
    let dd = d as f64;
    rch_min / (1u64 << 20) as f64
        * (1.0 / ((1u64 << 20) as f64 * dd * dd)).min(t.powf(2.0 / dd))
}

/// Builds the single-bump Le Cam pair over a circle base model.
///
/// δ solves τ/2 = 12·2^d ω_d δ^d / H^d(M0), clamped at rch_min/(2¹²d) (the
/// large-τ branch reuses the clamp value, which only lowers the TV).
/// `resolution` controls the density of the exported clouds.
pub fn lecam_pair(
    base: &Arc<ManifoldModel>,
    tau: f64,
    rch_min: f64,
    resolution: f64,
) -> Result<LeCamPair, LowerBoundError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(LowerBoundError::Config(format!("tau = {tau} outside [0, 1]")));
    }
    let d = base.d;
    if rch_min <= 0.0 || rch_min > base.reach {
        return Err(LowerBoundError::Config(format!(
            "rch_min = {rch_min} outside (0, reach = {}]",
            base.reach
        )));
    }
    // Model-consistency: 2^{d+1} σ_d f_min rch_min^d ≤ 1.
    let consistency =
        (1u64 << (d + 1)) as f64 * sigma(d) * base.density.f_min * rch_min.powi(d as i32);
    if consistency > 1.0 + 1e-12 {
        return Err(LowerBoundError::Config(format!(
            "consistency 2^(d+1) σ_d f_min rch_min^d = {consistency} > 1"
        )));
    }
    let rate = lecam_rate_bound(d, rch_min, base.density.f_min, tau);
    if tau == 0.0 {
        return Ok(LeCamPair {
            d0: base.clone(),
            d1: base.clone(),
            bump: None,
            delta: 0.0,
            eta_b: 0.0,
            clamped: false,
            rch_min,
            predicted_tv: 0.0,
            tv_envelope: 0.0,
            measured_tv: 0.0,
            measured_hausdorff: 0.0,
            predicted_separation: rate,
        });
    }
    let (center, radius, frame) = match &base.shape {
        Shape::Sphere { center, radius, frame } => (center.clone(), *radius, frame.clone()),
        _ => return Err(LowerBoundError::Config("base model must be a sphere".into())),
    };
    if d != 1 {
        return Err(LowerBoundError::Config(
            "pair construction is implemented for d = 1 circles".into(),
        ));
    }
    // δ from τ/2 = 12·2^d ω_d δ^d / H^d(M0), clamped at rch_min/(2^12 d).
    let raw = (tau / 2.0 * base.volume / (12.0 * (1u64 << d) as f64 * omega(d)))
        .powf(1.0 / d as f64);
    let clamp = rch_min / ((1u64 << 12) as f64 * d as f64);
    let (delta, clamped) = if raw > clamp { (clamp, true) } else { (raw, false) };
    let eta_b = delta * delta / (92.0 * rch_min);
    // Bump at p0 on the circle, pushed along the outward normal.
    let e0 = frame.column(0).into_owned();
    let e1 = frame.column(1).into_owned();
    let p0 = &center + &e0 * radius;
    let w0 = e0.clone();
    let bump = BumpMap::new(vec![p0.clone()], vec![w0], delta, eta_b)?;
    // Matched parameter grids for M0 and M1 = Φ(M0); t = 0 hits p0 so the
    // max displacement η_b is realized exactly on the sampled clouds.
    let count = ((2.0 * std::f64::consts::PI * radius / resolution).ceil() as usize).max(16);
    let mut angles = Vec::with_capacity(count);
    let mut pts0 = Vec::with_capacity(count);
    let mut pts1 = Vec::with_capacity(count);
    for i in 0..count {
        let t = i as f64 / count as f64 * 2.0 * std::f64::consts::PI;
        let q = &center + (&e0 * t.cos() + &e1 * t.sin()) * radius;
        pts1.push(bump.apply(&q));
        pts0.push(q);
        angles.push(DVector::from_vec(vec![t]));
    }
    let cloud0 = PointCloud::new(pts0);
    let cloud1 = PointCloud::new(pts1.clone());
    let measured_hausdorff =
        crate::geom::hausdorff(&cloud0, &cloud1).map_err(|e| LowerBoundError::Config(e.to_string()))?;
    // Exact support-region TV: both singular parts have the mass of the bump
    // ball under the base distribution.
    let measured_tv = base.ball_mass(&p0, delta).0;
    let tv_envelope = 12.0 * (1u64 << d) as f64 * omega(d) * delta.powi(d as i32) / base.volume;
    // M1 as a chart-backed cloud model; the pushforward density deviates
    // from uniform-in-arc-length by at most sup‖I − dΦ‖ ≤ 5η_b/(2δ) ≪ 1.
    let m1_volume = polyline_length_closed(&pts1);
    let chart_bump = bump.clone();
    let (cc, rr) = (center.clone(), radius);
    let (ce0, ce1) = (e0.clone(), e1.clone());
    let chart: crate::models::ChartFn = Arc::new(move |t: &DVector<f64>| {
        let q = &cc + (&ce0 * t[0].cos() + &ce1 * t[0].sin()) * rr;
        chart_bump.apply(&q)
    });
    let reference = Arc::new(ReferenceCloud {
        n: base.n,
        d: 1,
        resolution,
        cloud: cloud1,
    });
    let distortion = 1.0 + 5.0 * eta_b / (2.0 * delta);
    let d1 = Arc::new(ManifoldModel::make_cloud(
        1,
        base.n,
        rch_min,
        m1_volume,
        base.bounding_radius + eta_b,
        base.fixed_point,
        (
            base.density.f_min / distortion,
            base.density.f_max * distortion,
            base.density.lipschitz * distortion,
        ),
        reference,
        Arc::new(angles),
        chart,
        2.0 * std::f64::consts::PI,
    )?);
    Ok(LeCamPair {
        d0: base.clone(),
        d1,
        bump: Some(bump),
        delta,
        eta_b,
        clamped,
        rch_min,
        predicted_tv: tau / 2.0,
        tv_envelope,
        measured_tv,
        measured_hausdorff,
        predicted_separation: rate,
    })
}

fn polyline_length_closed(pts: &[Vector]) -> f64 {
    let mut l = 0.0;
    for i in 0..pts.len() {
        l += (&pts[(i + 1) % pts.len()] - &pts[i]).norm();
    }
    l
}

/// Serializable manifest of a constructed pair.
#[derive(Debug, Clone, Serialize)]
pub struct LeCamManifest {
    pub tau: f64,
    pub d: usize,
    pub n: usize,
    pub rch_min: f64,
    pub delta: f64,
    pub eta_b: f64,
    pub clamped: bool,
    pub predicted_tv: f64,
    pub tv_envelope: f64,
    pub measured_tv: f64,
    pub measured_hausdorff: f64,
    pub predicted_separation: f64,
}

impl LeCamPair {
    pub fn manifest(&self) -> LeCamManifest {
        LeCamManifest {
            tau: self.predicted_tv * 2.0,
            d: self.d0.d,
            n: self.d0.n,
            rch_min: self.rch_min,
            delta: self.delta,
            eta_b: self.eta_b,
            clamped: self.clamped,
            predicted_tv: self.predicted_tv,
            tv_envelope: self.tv_envelope,
            measured_tv: self.measured_tv,
            measured_hausdorff: self.measured_hausdorff,
            predicted_separation: self.predicted_separation,
        }
    }
}

// ---------------------------------------------------------------------------
// Grid snake paths
// ---------------------------------------------------------------------------

/// A simple connected path on the κ^n integer grid (coordinates 1..κ).
#[derive(Debug, Clone, Serialize)]
pub struct GridPath {
    pub kappa: usize,
    pub n: usize,
    pub vertices: Vec<Vec<i64>>,
}

impl GridPath {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Checks the path invariants: consecutive vertices grid-adjacent
    /// (L1 distance 1), all vertices distinct and in range.
    pub fn validate(&self) -> Result<(), LowerBoundError> {
        let mut seen = std::collections::HashSet::new();
        for v in &self.vertices {
            if v.len() != self.n {
                return Err(LowerBoundError::Config("vertex dimension".into()));
            }
            if v.iter().any(|&c| c < 1 || c > self.kappa as i64) {
                return Err(LowerBoundError::Config("vertex out of grid".into()));
            }
            if !seen.insert(v.clone()) {
                return Err(LowerBoundError::Config("repeated vertex".into()));
            }
        }
        for w in self.vertices.windows(2) {
            let l1: i64 = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum();
            if l1 != 1 {
                return Err(LowerBoundError::Config("non-adjacent consecutive vertices".into()));
            }
        }
        Ok(())
    }
}

/// The first ℓ vertices of the inductively defined Hamiltonian snake of
/// the κ^n grid: the (n+1)-dimensional snake traverses the n-dimensional
/// one layer by layer, reversing direction on every other layer.
pub fn grid_path(kappa: usize, n: usize, ell: usize) -> Result<GridPath, LowerBoundError> {
    if kappa == 0 || n == 0 {
        return Err(LowerBoundError::Config("kappa and n must be positive".into()));
    }
    let total = (kappa as u128).pow(n as u32);
    if ell < 1 || (ell as u128) > total {
        return Err(LowerBoundError::Config(format!("ell = {ell} outside [1, κ^n = {total}]")));
    }
    let mut vertices: Vec<Vec<i64>> = Vec::with_capacity(ell);
    snake_prefix(kappa, n, ell, &mut vertices);
    Ok(GridPath { kappa, n, vertices })
}

fn snake_prefix(kappa: usize, n: usize, ell: usize, out: &mut Vec<Vec<i64>>) {
    if n == 1 {
        for i in 1..=kappa.min(ell) {
            out.push(vec![i as i64]);
        }
        return;
    }
    let layer = (kappa as usize).pow((n - 1) as u32);
    let mut base: Vec<Vec<i64>> = Vec::with_capacity(layer);
    snake_prefix(kappa, n - 1, layer, &mut base);
    'outer: for j in 1..=kappa {
        let iter: Box<dyn Iterator<Item = &Vec<i64>>> = if j % 2 == 1 {
            Box::new(base.iter())
        } else {
            Box::new(base.iter().rev())
        };
        for v in iter {
            let mut w = v.clone();
            w.push(j as i64);
            out.push(w);
            if out.len() == ell {
                break 'outer;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Widget manifolds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WidgetKind {
    End,
    Straight,
    TangentBend,
    NormalBend,
}

/// Closed-form d-measure of one widget in unit-block coordinates (block
/// [−1,1]^{d+1}, cylinder radius 1/3). Scale by (6·rch)^d for a chain at
/// reach parameter rch.
pub fn widget_unit_measure(kind: WidgetKind, d: usize) -> f64 {
    let third = 1.0f64 / 3.0;
    let ring = sigma(d.saturating_sub(1).max(0)) * third.powi(d as i32 - 1);
    match kind {
        WidgetKind::End => sigma(d) / 2.0 * third.powi(d as i32) + ring,
        WidgetKind::Straight => 2.0 * ring,
        // Two half cylinders plus the quarter sweep of mean plane-radius 1/2.
        WidgetKind::TangentBend | WidgetKind::NormalBend => {
            ring * (1.0 + std::f64::consts::FRAC_PI_4)
        }
    }
}

/// C_d = 9·2^d·σ_{d−1}: the per-widget volume ceiling in units of rch^d.
pub fn widget_volume_constant(d: usize) -> f64 {
    9.0 * (1u64 << d) as f64 * sigma(d - 1)
}

/// C_d' = 9·2^{2d+1}·σ_{d−1}: the prescribed-volume unit.
pub fn chain_volume_constant(d: usize) -> f64 {
    9.0 * (1u64 << (2 * d + 1)) as f64 * sigma(d - 1)
}

/// A widget-chain manifold realized as a structured point cloud.
#[derive(Debug, Clone)]
pub struct WidgetManifold {
    pub cloud: ReferenceCloud,
    pub widgets: Vec<WidgetKind>,
    pub d: usize,
    pub rch: f64,
    /// Closed-form d-volume of the chain.
    pub volume: f64,
    /// Volume sandwich [|L|·C_d/3·rch^d, |L|·C_d·rch^d] (|L| ≥ 2 chains).
    pub volume_lo: f64,
    pub volume_hi: f64,
    /// Max discrete curvature measured along probe curves (≤ 1/rch·1.05).
    pub max_curvature_probe: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WidgetManifest {
    pub widgets: Vec<WidgetKind>,
    pub d: usize,
    pub n: usize,
    pub rch: f64,
    pub volume: f64,
    pub volume_lo: f64,
    pub volume_hi: f64,
    pub max_curvature_probe: f64,
    pub points: usize,
}

impl WidgetManifold {
    pub fn manifest(&self) -> WidgetManifest {
        WidgetManifest {
            widgets: self.widgets.clone(),
            d: self.d,
            n: self.cloud.n,
            rch: self.rch,
            volume: self.volume,
            volume_lo: self.volume_lo,
            volume_hi: self.volume_hi,
            max_curvature_probe: self.max_curvature_probe,
            points: self.cloud.cloud.len(),
        }
    }
}

fn axis_unit(n: usize, idx: usize, sign: f64) -> Vector {
    let mut v = DVector::zeros(n);
    v[idx] = sign;
    v
}

/// Unit directions spanning the (d−1)-sphere of the cylinder section.
fn ring_dirs(w: &[Vector], m: usize) -> Vec<Vector> {
    match w.len() {
        1 => vec![w[0].clone(), -&w[0]],
        2 => (0..m)
            .map(|i| {
                let t = i as f64 / m as f64 * 2.0 * std::f64::consts::PI;
                &w[0] * t.cos() + &w[1] * t.sin()
            })
            .collect(),
        k => panic!("ring sampling implemented for d ≤ 2 (got d = {k})"),
    }
}

struct ChainSampler {
    points: Vec<Vector>,
    r: f64,
    s: f64,
    axial: usize,
    ring_m: usize,
}

impl ChainSampler {
    fn ring(&mut self, center: &Vector, w: &[Vector]) {
        for u in ring_dirs(w, self.ring_m) {
            self.points.push(center + u * self.r);
        }
    }

    fn cylinder(&mut self, from: &Vector, to: &Vector, w: &[Vector]) {
        for j in 0..=self.axial {
            let t = j as f64 / self.axial as f64;
            let c = from * (1.0 - t) + to * t;
            self.ring(&c, w);
        }
    }

    /// Half d-sphere cap: center + r(cos ψ · out + sin ψ · u), ψ ∈ [0, π/2].
    fn cap(&mut self, center: &Vector, out: &Vector, w: &[Vector]) {
        for j in 0..=self.axial {
            let psi = j as f64 / self.axial as f64 * std::f64::consts::FRAC_PI_2;
            if j == 0 {
                self.points.push(center + out * self.r);
                continue;
            }
            for u in ring_dirs(w, self.ring_m) {
                self.points.push(center + (out * psi.cos() + u * psi.sin()) * self.r);
            }
        }
    }

    /// Quarter sweep gluing the ring at p − (s/2)v_in to the ring at
    /// p + (s/2)v_out, rotating in the (v_in, v_out) plane around
    /// x_c = p − (s/2)v_in + (s/2)v_out.
    fn torus(&mut self, p: &Vector, v_in: &Vector, v_out: &Vector, w: &[Vector]) {
        let xc = p - v_in * (self.s / 2.0) + v_out * (self.s / 2.0);
        let start = p - v_in * (self.s / 2.0);
        for u in ring_dirs(w, self.ring_m) {
            let q0 = &start + &u * self.r;
            let wv = &q0 - &xc;
            let a = wv.dot(v_in);
            let b = wv.dot(v_out);
            let perp = &wv - v_in * a - v_out * b;
            for j in 0..=self.axial {
                let th = j as f64 / self.axial as f64 * std::f64::consts::FRAC_PI_2;
                let (ct, st) = (th.cos(), th.sin());
                self.points
                    .push(&xc + v_in * (a * ct - b * st) + v_out * (a * st + b * ct) + &perp);
            }
        }
    }
}

/// Max discrete curvature of a parametrized curve via central differences.
fn curve_curvature_max<F: Fn(f64) -> Vector>(f: F, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let mut max_k = 0.0f64;
    for j in 1..steps {
        let t = a + j as f64 * h;
        let (pm, p0, pp) = (f(t - h), f(t), f(t + h));
        let vel = (&pp - &pm) / (2.0 * h);
        let acc = (&pp - &p0 * 2.0 + &pm) / (h * h);
        let speed2 = vel.norm_squared();
        if speed2 < 1e-20 {
            continue;
        }
        let tang = &vel / speed2.sqrt();
        let normal_acc = &acc - &tang * acc.dot(&tang);
        max_k = max_k.max(normal_acc.norm() / speed2);
    }
    max_k
}

/// Builds the chain manifold M(L) for a grid path, as a structured point
/// cloud with per-widget closed-form measures. Grid pitch is 12·rch and
/// each widget lives in a block of half-side 6·rch around its vertex; the
/// grid is centered so the chain lies around the origin.
pub fn widget_manifold(
    path: &GridPath,
    d: usize,
    n: usize,
    rch: f64,
    samples_per_widget: usize,
) -> Result<WidgetManifold, LowerBoundError> {
    path.validate()?;
    if d > 2 {
        return Err(LowerBoundError::Config("sampling implemented for d ≤ 2".into()));
    }
    if n < d + 1 || path.n > n {
        return Err(LowerBoundError::Config(format!(
            "ambient n = {n} too small for d = {d}, grid dim {}",
            path.n
        )));
    }
    if rch <= 0.0 {
        return Err(LowerBoundError::Config("rch must be positive".into()));
    }
    let s = 6.0 * rch;
    let pitch = 12.0 * rch;
    let r = s / 3.0;
    let ell = path.len();
    let offset = (path.kappa as f64 + 1.0) / 2.0;
    let pos = |v: &Vec<i64>| -> Vector {
        let mut p = DVector::zeros(n);
        for (i, &c) in v.iter().enumerate() {
            p[i] = (c as f64 - offset) * pitch;
        }
        p
    };
    let axial = samples_per_widget.max(4);
    let ring_m = samples_per_widget.max(8);
    let mut sampler = ChainSampler { points: Vec::new(), r, s, axial, ring_m };
    let mut widgets = Vec::with_capacity(ell);
    let mut max_curv = 0.0f64;

    if ell == 1 {
        // Single vertex: a d-sphere of radius 2·rch.
        let c = pos(&path.vertices[0]);
        let rad = 2.0 * rch;
        match d {
            1 => {
                for i in 0..(8 * ring_m) {
                    let t = i as f64 / (8 * ring_m) as f64 * 2.0 * std::f64::consts::PI;
                    let mut p = c.clone();
                    p[0] += rad * t.cos();
                    p[1] += rad * t.sin();
                    sampler.points.push(p);
                }
            }
            _ => {
                // Fibonacci sphere.
                let m = 16 * ring_m;
                let ga = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
                for i in 0..m {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = ga * i as f64;
                    let mut p = c.clone();
                    p[0] += rad * rho * t.cos();
                    p[1] += rad * rho * t.sin();
                    p[2] += rad * z;
                    sampler.points.push(p);
                }
            }
        }
        widgets.push(WidgetKind::End);
        let volume = sigma(d) * rad.powi(d as i32);
        let cc = c.clone();
        max_curv = curve_curvature_max(
            |t| {
                let mut p = cc.clone();
                p[0] += rad * t.cos();
                p[1] += rad * t.sin();
                p
            },
            0.0,
            std::f64::consts::PI,
            64,
        );
        let cloud =
            ReferenceCloud { n, d, resolution: rch, cloud: PointCloud::new(sampler.points) };
        return Ok(WidgetManifold {
            cloud,
            widgets,
            d,
            rch,
            volume,
            volume_lo: volume,
            volume_hi: volume,
            max_curvature_probe: max_curv,
        });
    }

    let axis_of = |from: &Vec<i64>, to: &Vec<i64>| -> (usize, f64) {
        for i in 0..from.len() {
            match to[i] - from[i] {
                0 => continue,
                1 => return (i, 1.0),
                -1 => return (i, -1.0),
                _ => unreachable!("validated path"),
            }
        }
        unreachable!("validated path")
    };

    // Sphere span: d signed coordinate axes orthogonal to the cylinder axis.
    let (first_axis, first_sign) = axis_of(&path.vertices[0], &path.vertices[1]);
    let mut w: Vec<Vector> = (0..n)
        .filter(|&i| i != first_axis)
        .take(d)
        .map(|i| axis_unit(n, i, 1.0))
        .collect();

    for k in 0..ell {
        let p = pos(&path.vertices[k]);
        if k == 0 {
            let v_out = axis_unit(n, first_axis, first_sign);
            sampler.cap(&p, &(-&v_out), &w);
            sampler.cylinder(&p, &(&p + &v_out * s), &w);
            widgets.push(WidgetKind::End);
            let (pc, vc, w0) = (p.clone(), v_out.clone(), w[0].clone());
            max_curv = max_curv.max(curve_curvature_max(
                |t| &pc + (&w0 * t.cos() - &vc * t.sin()) * r,
                0.0,
                std::f64::consts::PI,
                64,
            ));
            continue;
        }
        let (in_axis, in_sign) = axis_of(&path.vertices[k - 1], &path.vertices[k]);
        let v_in = axis_unit(n, in_axis, in_sign);
        if k == ell - 1 {
            sampler.cylinder(&(&p - &v_in * s), &p, &w);
            sampler.cap(&p, &v_in, &w);
            widgets.push(WidgetKind::End);
            continue;
        }
        let (out_axis, out_sign) = axis_of(&path.vertices[k], &path.vertices[k + 1]);
        let v_out = axis_unit(n, out_axis, out_sign);
        if out_axis == in_axis {
            // Straight (grid paths never backtrack: signs must agree).
            sampler.cylinder(&(&p - &v_in * s), &(&p + &v_in * s), &w);
            widgets.push(WidgetKind::Straight);
            continue;
        }
        let tangent_turn = w.iter().any(|u| u[out_axis].abs() > 0.5);
        if !tangent_turn && n < d + 2 {
            return Err(LowerBoundError::Config(
                "normal bend requires ambient dimension n ≥ d + 2".into(),
            ));
        }
        sampler.cylinder(&(&p - &v_in * s), &(&p - &v_in * (s / 2.0)), &w);
        sampler.torus(&p, &v_in, &v_out, &w);
        // Inner-arc curvature probe: the tightest swept circle has radius
        // s/2 − r = s/6 = rch.
        {
            let xc = &p - &v_in * (s / 2.0) + &v_out * (s / 2.0);
            let start = &p - &v_in * (s / 2.0) + &v_out * r;
            let wv = &start - &xc;
            let (a0, b0) = (wv.dot(&v_in), wv.dot(&v_out));
            let perp = &wv - &v_in * a0 - &v_out * b0;
            let (vi, vo) = (v_in.clone(), v_out.clone());
            max_curv = max_curv.max(curve_curvature_max(
                |th| {
                    &xc + &vi * (a0 * th.cos() - b0 * th.sin())
                        + &vo * (a0 * th.sin() + b0 * th.cos())
                        + &perp
                },
                0.0,
                std::f64::consts::FRAC_PI_2,
                64,
            ));
        }
        if tangent_turn {
            // New sphere span: drop the axis consumed by v_out, add v_in.
            w.retain(|u| u[out_axis].abs() < 0.5);
            w.push(v_in.clone());
            widgets.push(WidgetKind::TangentBend);
        } else {
            widgets.push(WidgetKind::NormalBend);
        }
        sampler.cylinder(&(&p + &v_out * (s / 2.0)), &(&p + &v_out * s), &w);
    }

    let scale = (6.0 * rch).powi(d as i32);
    let volume: f64 = widgets.iter().map(|&k| widget_unit_measure(k, d) * scale).sum();
    let cd = widget_volume_constant(d);
    let volume_lo = ell as f64 * cd / 3.0 * rch.powi(d as i32);
    let volume_hi = ell as f64 * cd * rch.powi(d as i32);
    let cloud = ReferenceCloud { n, d, resolution: rch, cloud: PointCloud::new(sampler.points) };
    Ok(WidgetManifold {
        cloud,
        widgets,
        d,
        rch,
        volume,
        volume_lo,
        volume_hi,
        max_curvature_probe: max_curv,
    })
}

// ---------------------------------------------------------------------------
// Prescribed-volume manifolds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PrescribedVolumeReport {
    pub target_volume: f64,
    pub achieved_volume: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub ell: usize,
    pub sub_dim: usize,
    pub kappa: usize,
}

/// Largest centered square sub-grid (pitch 24·rch) of dimension k fitting
/// inside B(0, R/2).
fn grid_side(r_big: f64, rch: f64, k: usize) -> usize {
    let pitch = 24.0 * rch;
    let mut kappa = 1usize;
    loop {
        let next = kappa + 1;
        let half_diag = (next - 1) as f64 / 2.0 * pitch * (k as f64).sqrt();
        if half_diag <= r_big / 2.0 {
            kappa = next;
        } else {
            return kappa;
        }
    }
}

/// Builds a widget chain of d-volume within [V/24, V] inside B(0, R),
/// following the grid-snake construction at reach parameter 2·rch.
pub fn prescribed_volume_manifold(
    v_target: f64,
    rch: f64,
    r_big: f64,
    n: usize,
    d: usize,
    samples_per_widget: usize,
) -> Result<(WidgetManifold, PrescribedVolumeReport), LowerBoundError> {
    if rch > r_big / 36.0 {
        return Err(LowerBoundError::Infeasible(format!(
            "rch = {rch} exceeds R/36 = {}",
            r_big / 36.0
        )));
    }
    let cdp = chain_volume_constant(d);
    let ell_target = (v_target / (cdp * rch.powi(d as i32))).floor() as usize;
    if ell_target < 1 {
        return Err(LowerBoundError::Infeasible(format!(
            "target volume {v_target} below C_d'·rch^d = {}",
            cdp * rch.powi(d as i32)
        )));
    }
    // Sub-grid dimension maximizing realizable capacity κ(k)^k.
    let mut best = (1usize, grid_side(r_big, rch, 1));
    for k in 2..=n {
        let kap = grid_side(r_big, rch, k);
        if (kap as f64).powi(k as i32) > (best.1 as f64).powi(best.0 as i32) {
            best = (k, kap);
        }
    }
    let (k0, kappa) = best;
    let capacity = (kappa as u128).pow(k0 as u32);
    let ell = ell_target.min(capacity.min(usize::MAX as u128) as usize);
    let path = grid_path(kappa, k0, ell)?;
    let chain = widget_manifold(&path, d, n, 2.0 * rch, samples_per_widget)?;
    let report = PrescribedVolumeReport {
        target_volume: v_target,
        achieved_volume: chain.volume,
        bracket_lo: v_target / 24.0,
        bracket_hi: v_target,
        ell,
        sub_dim: k0,
        kappa,
    };
    if chain.volume < report.bracket_lo || chain.volume > report.bracket_hi {
        return Err(LowerBoundError::Infeasible(format!(
            "achieved volume {} outside [{}, {}] (capacity {capacity}, ℓ {ell})",
            chain.volume, report.bracket_lo, report.bracket_hi
        )));
    }
    Ok((chain, report))
}

// ---------------------------------------------------------------------------
// Translation packings and query-count arithmetic
// ---------------------------------------------------------------------------

/// An r-packing of B(0, R/2) by translated copies of a base model.
/// Translating a compact set by v moves it by exactly ‖v‖ in Hausdorff
/// distance, so center separation transfers to model separation.
#[derive(Debug, Clone)]
pub struct TranslationPacking {
    pub r: f64,
    pub r_big: f64,
    pub n: usize,
    /// ln of the guaranteed cardinality (R/(4r))^n.
    pub guaranteed_log: f64,
    /// Explicit lattice sample of centers (capped).
    pub centers: Vec<Vector>,
}

pub fn translation_packing(
    n: usize,
    r_big: f64,
    r: f64,
    cap: usize,
) -> Result<TranslationPacking, LowerBoundError> {
    if r <= 0.0 || r > r_big / 2.0 {
        return Err(LowerBoundError::Config(format!("r = {r} outside (0, R/2]")));
    }
    let guaranteed_log = n as f64 * (r_big / (4.0 * r)).ln();
    // Explicit centered lattice with spacing just above 2r.
    let spacing = 2.0 * r * (1.0 + 1e-9);
    let per_axis = ((r_big / 2.0) / (spacing * (n as f64).sqrt())).floor() as usize * 2;
    let per_axis = per_axis.max(1);
    let mut centers = Vec::new();
    let mut idx = vec![0usize; n];
    'fill: loop {
        let c = DVector::from_fn(n, |i, _| {
            (idx[i] as f64 - (per_axis as f64 - 1.0) / 2.0) * spacing
        });
        if c.norm() <= r_big / 2.0 {
            centers.push(c);
            if centers.len() >= cap {
                break 'fill;
            }
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            idx[i] += 1;
            if idx[i] < per_axis {
                break;
            }
            idx[i] = 0;
            i += 1;
            if i == n {
                break 'fill;
            }
        }
    }
    Ok(TranslationPacking { r, r_big, n, guaranteed_log, centers })
}

/// Minimum number of τ-accurate statistical queries needed to distinguish
/// a packing of log-cardinality `pack_log` with failure probability α:
/// q ≥ (pack_log + ln(1−α)) / ln(1 + ⌊1/τ⌋).
pub fn query_lower_bound(pack_log: f64, alpha: f64, tau: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&alpha) && tau > 0.0);
    (pack_log + (1.0 - alpha).ln()) / (1.0 + (1.0 / tau).floor()).ln()
}

/// Packing log-cardinality of the ambient translation family: n·ln(R/(4ε)).
pub fn ambient_pack_log(n: usize, r_big: f64, eps: f64) -> f64 {
    n as f64 * (r_big / (4.0 * eps)).ln()
}

/// Packing log-cardinality of the local-variation family:
/// n·(1/(ω_d f_min rch^d))·(rch/(2²¹ ε))^{d/2}.
pub fn volume_pack_log(n: usize, d: usize, f_min: f64, rch: f64, eps: f64) -> f64 {
    n as f64 / (omega(d) * f_min * rch.powi(d as i32))
        * (rch / ((1u64 << 21) as f64 * eps)).powf(d as f64 / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::hausdorff;
    use crate::models::DensitySpec;

    fn unit(n: usize, i: usize) -> Vector {
        axis_unit(n, i, 1.0)
    }

    fn circle_base() -> Arc<ManifoldModel> {
        let c = DVector::zeros(3);
        Arc::new(ManifoldModel::make_sphere(1, 3, 1.0, c, DensitySpec::Uniform).unwrap())
    }

    #[test]
    fn bump_center_and_identity() {
        let p = DVector::from_vec(vec![1.0, 0.0]);
        let w = DVector::from_vec(vec![0.0, 1.0]);
        let map = BumpMap::new(vec![p.clone()], vec![w.clone()], 0.5, 1e-4).unwrap();
        // φ(0) = 1: the center moves by exactly η_b·w.
        let img = map.apply(&p);
        assert!((img - (&p + &w * 1e-4)).norm() < 1e-18);
        // Identity outside the ball.
        let far = DVector::from_vec(vec![3.0, 3.0]);
        assert_eq!(map.apply(&far), far);
        let edge = &p + DVector::from_vec(vec![0.5, 0.0]);
        assert_eq!(map.apply(&edge), edge);
    }

    #[test]
    fn bump_differential_probes() {
        let p = DVector::zeros(3);
        let w = unit(3, 2);
        let (delta, eta_b) = (0.3, 2e-3);
        let map = BumpMap::new(vec![p], vec![w], delta, eta_b).unwrap();
        let (jac, sec) = map.probe_differentials(100, 7);
        assert!(jac <= 5.0 * eta_b / (2.0 * delta) * (1.0 + 1e-3), "jac probe {jac}");
        assert!(sec <= 23.0 * eta_b / (delta * delta) * (1.0 + 1e-2), "second probe {sec}");
        // Analytic Jacobian matches finite differences at a probe point.
        let x = DVector::from_vec(vec![0.1, -0.05, 0.02]);
        let ja = map.jacobian(&x);
        let h = 1e-7;
        for c in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (map.apply(&xp) - map.apply(&xm)) / (2.0 * h);
            assert!((ja.column(c) - col).norm() < 1e-7);
        }
    }

    #[test]
    fn bump_overlap_rejected() {
        let p1 = DVector::zeros(2);
        let p2 = DVector::from_vec(vec![0.9, 0.0]);
        let w = unit(2, 1);
        assert!(BumpMap::new(vec![p1, p2], vec![w.clone(), w], 0.5, 1e-5).is_err());
    }

    #[test]
    fn bump_injective_on_samples() {
        let base = circle_base();
        let p0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let map = BumpMap::new(vec![p0], vec![unit(3, 0)], 0.2, 1e-4).unwrap();
        let cloud = base.reference_cloud(0.01);
        let imgs: Vec<Vector> = cloud.cloud.points.iter().map(|q| map.apply(q)).collect();
        for i in 0..imgs.len() {
            for j in 0..i {
                assert!((&imgs[i] - &imgs[j]).norm() > 1e-9);
            }
        }
    }

    #[test]
    fn grid_path_hand_example() {
        let p = grid_path(2, 2, 4).unwrap();
        assert_eq!(
            p.vertices,
            vec![vec![1, 1], vec![2, 1], vec![2, 2], vec![1, 2]],
        );
    }

    #[test]
    fn grid_path_invariants_exhaustive() {
        for (kappa, n) in [(2, 2), (3, 2), (2, 3), (3, 3), (10, 2), (4, 3)] {
            let total = (kappa as usize).pow(n as u32);
            assert!(total <= 10_000);
            for ell in 1..=total {
                let p = grid_path(kappa, n, ell).unwrap();
                assert_eq!(p.len(), ell);
                p.validate().unwrap();
            }
        }
        // Hamiltonian for κ, n ≤ 3: the full snake visits every vertex once.
        for kappa in 1..=3usize {
            for n in 1..=3usize {
                let total = kappa.pow(n as u32);
                let p = grid_path(kappa, n, total).unwrap();
                let set: std::collections::HashSet<_> = p.vertices.iter().cloned().collect();
                assert_eq!(set.len(), total);
            }
        }
    }

    #[test]
    fn grid_path_bad_ell() {
        assert!(grid_path(2, 2, 0).is_err());
        assert!(grid_path(2, 2, 5).is_err());
        let single = grid_path(5, 3, 1).unwrap();
        assert_eq!(single.len(), 1);
        single.validate().unwrap();
    }

    #[test]
    fn lecam_pair_circle() {
        let base = circle_base();
        let rch_min = 0.25;
        for tau in [0.2, 0.1, 0.05] {
            let pair = lecam_pair(&base, tau, rch_min, 1e-3).unwrap();
            assert!(pair.clamped, "τ = {tau} should hit the clamp branch");
            assert!((pair.delta - rch_min / 4096.0).abs() < 1e-15);
            let eta_expected = pair.delta * pair.delta / (92.0 * rch_min);
            assert!((pair.eta_b - eta_expected).abs() < 1e-20);
            // Measured Hausdorff equals the bump height (up to the ~1e-6
            // relative noise of differencing unit-magnitude coordinates).
            assert!(
                (pair.measured_hausdorff - pair.eta_b).abs() <= 1e-4 * pair.eta_b,
                "measured {} vs η_b {}",
                pair.measured_hausdorff,
                pair.eta_b
            );
            // TV: measured ≤ envelope ≤ τ/2 (with tolerance).
            assert!(pair.measured_tv <= pair.predicted_tv * 1.05);
            assert!(pair.measured_tv <= pair.tv_envelope * 1.05);
            // Certified separation is achieved by the pair.
            assert!(pair.eta_b >= pair.predicted_separation);
            // Closed-form arc mass cross-check.
            let theta0 = 2.0 * (pair.delta / 2.0).asin();
            let arc_mass = theta0 / std::f64::consts::PI;
            assert!((pair.measured_tv - arc_mass).abs() < 1e-6 * arc_mass.max(1e-12));
        }
    }

    #[test]
    fn lecam_tau_zero() {
        let base = circle_base();
        let pair = lecam_pair(&base, 0.0, 0.25, 1e-2).unwrap();
        assert_eq!(pair.delta, 0.0);
        assert_eq!(pair.measured_tv, 0.0);
        assert!(Arc::ptr_eq(&pair.d0, &pair.d1));
    }

    #[test]
    fn lecam_tv_monte_carlo() {
        let base = circle_base();
        let pair = lecam_pair(&base, 0.05, 0.25, 1e-3).unwrap();
        let samples = base.sample(42, 1_000_000);
        let p0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let inside = samples
            .points
            .iter()
            .filter(|q| (*q - &p0).norm() <= pair.delta)
            .count();
        let mc = inside as f64 / samples.len() as f64;
        assert!(mc <= pair.predicted_tv * 1.05);
        // Within 6σ of the closed form (tiny mass: σ ≈ √(m/N)).
        let sd = (pair.measured_tv / 1_000_000.0).sqrt();
        assert!((mc - pair.measured_tv).abs() <= 6.0 * sd + 1e-9);
    }

    #[test]
    fn lecam_bumped_model_projects() {
        let base = circle_base();
        let pair = lecam_pair(&base, 0.1, 0.25, 1e-3).unwrap();
        // Projection onto M1 agrees with the dense-cloud argmin to 1e-6.
        let x = DVector::from_vec(vec![0.6, 0.7, 0.1]);
        let proj = pair.d1.project(&x).unwrap();
        let brute = pair
            .d1
            .reference_cloud(1e-3)
            .cloud
            .points
            .iter()
            .map(|q| (q - &x).norm())
            .fold(f64::INFINITY, f64::min);
        assert!((x - proj).norm() <= brute + 1e-6);
    }

    #[test]
    fn widget_straight_path_d1() {
        let path = grid_path(3, 1, 3).unwrap();
        let m = widget_manifold(&path, 1, 2, 0.5, 12).unwrap();
        assert_eq!(
            m.widgets,
            vec![WidgetKind::End, WidgetKind::Straight, WidgetKind::End]
        );
        // Volume sandwich [|L|·C_d/3, |L|·C_d]·rch^d.
        assert!(m.volume >= m.volume_lo && m.volume <= m.volume_hi);
        // Closed form: 2 ends + 1 straight at unit scale, scaled by 6·rch.
        let expected = (2.0 * (std::f64::consts::PI / 3.0 + 2.0) + 4.0) * 6.0 * 0.5;
        assert!((m.volume - expected).abs() < 1e-12);
        // Curvature probes: caps have radius 2·rch.
        assert!(m.max_curvature_probe <= 1.0 / 0.5 * 1.05);
        // Cloud is sane: all points within the grid offset.
        assert!(!m.cloud.cloud.points.is_empty());
    }

    #[test]
    fn widget_single_vertex_sphere() {
        let path = grid_path(1, 1, 1).unwrap();
        let m = widget_manifold(&path, 1, 2, 1.0, 8).unwrap();
        assert_eq!(m.widgets, vec![WidgetKind::End]);
        assert!((m.volume - sigma(1) * 2.0).abs() < 1e-12);
        // All sampled points at distance 2·rch from the vertex (origin).
        for p in &m.cloud.cloud.points {
            assert!((p.norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn widget_bend_paths_and_separation() {
        // Square path with two tangent bends vs the straight path.
        let bent = grid_path(2, 2, 4).unwrap();
        let mb = widget_manifold(&bent, 1, 2, 0.5, 12).unwrap();
        assert_eq!(
            mb.widgets,
            vec![
                WidgetKind::End,
                WidgetKind::TangentBend,
                WidgetKind::TangentBend,
                WidgetKind::End
            ]
        );
        assert!(mb.volume >= mb.volume_lo && mb.volume <= mb.volume_hi);
        // Tightest bend arc has radius exactly rch: probe ≈ 1/rch.
        assert!(mb.max_curvature_probe <= 1.0 / 0.5 * 1.05);
        assert!(mb.max_curvature_probe >= 1.0 / 0.5 * 0.95);
        // A different path through the same grid stays > 2·rch away.
        let other = {
            let mut p = grid_path(2, 2, 4).unwrap();
            p.vertices = vec![vec![1, 1], vec![1, 2], vec![2, 2], vec![2, 1]];
            p.validate().unwrap();
            p
        };
        let mo = widget_manifold(&other, 1, 2, 0.5, 12).unwrap();
        let dh = hausdorff(&mb.cloud.cloud, &mo.cloud.cloud).unwrap();
        assert!(dh > 2.0 * 0.5, "separation {dh} ≤ 2·rch");
    }

    #[test]
    fn widget_normal_bend_d1_n3() {
        // d = 1 path turning out of the initial widget plane: x then z while
        // the ring span is y.
        let path = GridPath {
            kappa: 2,
            n: 3,
            vertices: vec![vec![1, 1, 1], vec![2, 1, 1], vec![2, 1, 2]],
        };
        path.validate().unwrap();
        let m = widget_manifold(&path, 1, 3, 0.5, 10).unwrap();
        assert_eq!(
            m.widgets,
            vec![WidgetKind::End, WidgetKind::NormalBend, WidgetKind::End]
        );
        assert!(m.volume >= m.volume_lo && m.volume <= m.volume_hi);
        // Same path with ambient n = 2 is impossible to embed.
        assert!(widget_manifold(&path, 1, 2, 0.5, 10).is_err());
    }

    #[test]
    fn widget_d2_chain() {
        let path = grid_path(2, 1, 2).unwrap();
        let m = widget_manifold(&path, 2, 3, 0.4, 10).unwrap();
        assert_eq!(m.widgets, vec![WidgetKind::End, WidgetKind::End]);
        assert!(m.volume >= m.volume_lo && m.volume <= m.volume_hi);
        assert!(m.max_curvature_probe <= 1.0 / 0.4 * 1.05);
    }

    #[test]
    fn prescribed_volume_d1() {
        let rch = 1.0;
        let r_big = 72.0 * rch;
        let v = 20.0 * chain_volume_constant(1) * rch;
        let (chain, report) = prescribed_volume_manifold(v, rch, r_big, 3, 1, 8).unwrap();
        assert!(report.achieved_volume >= v / 24.0 && report.achieved_volume <= v);
        assert_eq!(report.achieved_volume, chain.volume);
        // Chain stays inside B(0, R).
        for p in &chain.cloud.cloud.points {
            assert!(p.norm() <= r_big);
        }
        // Minimum prescription: a single sphere.
        let v_min = chain_volume_constant(1) * rch * 1.2;
        let (single, rep) = prescribed_volume_manifold(v_min, rch, r_big, 3, 1, 8).unwrap();
        assert_eq!(rep.ell, 1);
        assert_eq!(single.widgets, vec![WidgetKind::End]);
        assert!(rep.achieved_volume >= v_min / 24.0 && rep.achieved_volume <= v_min);
        // Hypothesis rejection.
        assert!(prescribed_volume_manifold(v, 3.0, r_big, 3, 1, 8).is_err());
    }

    #[test]
    fn translation_packing_lattice() {
        let pack = translation_packing(2, 8.0, 1.0, 4096).unwrap();
        assert!(pack.centers.len() >= 4, "only {} centers", pack.centers.len());
        assert!((pack.guaranteed_log - 2.0 * (2.0f64).ln()).abs() < 1e-12);
        for c in &pack.centers {
            assert!(c.norm() <= 4.0 + 1e-9);
        }
        for i in 0..pack.centers.len() {
            for j in 0..i {
                assert!((&pack.centers[i] - &pack.centers[j]).norm() > 2.0);
            }
        }
        // Translating a model cloud moves it by exactly the center distance.
        let base = circle_base();
        let cloud = base.reference_cloud(0.05).cloud;
        let v2 = &pack.centers[1] - &pack.centers[0];
        let v = DVector::from_vec(vec![v2[0], v2[1], 0.0]);
        let moved = PointCloud::new(cloud.points.iter().map(|p| p + &v).collect());
        let dh = hausdorff(&cloud, &moved).unwrap();
        assert!((dh - v.norm()).abs() < 1e-9);
        // r = R/2 still yields at least one center.
        let tiny = translation_packing(2, 8.0, 4.0, 16).unwrap();
        assert!(!tiny.centers.is_empty());
    }

    #[test]
    fn query_bound_arithmetic() {
        // τ = 1 → denominator ln 2.
        assert!((query_lower_bound(3.0, 0.0, 1.0) - 3.0 / 2.0f64.ln()).abs() < 1e-12);
        // Ambient term assembly.
        let (n, r_big, eps) = (5, 10.0, 0.1);
        let pl = ambient_pack_log(n, r_big, eps);
        assert!((pl - 5.0 * (25.0f64).ln()).abs() < 1e-12);
        let q = query_lower_bound(pl, 0.0, 0.05);
        assert!((q - pl / (21.0f64).ln()).abs() < 1e-12);
        // Monotonicity: nondecreasing in pack_log, nonincreasing in α, and
        // nonincreasing in the oracle fan-out ⌊1/τ⌋ (a noisier oracle —
        // larger τ — forces more queries).
        assert!(query_lower_bound(4.0, 0.0, 0.1) >= query_lower_bound(3.0, 0.0, 0.1));
        assert!(query_lower_bound(3.0, 0.0, 0.1) >= query_lower_bound(3.0, 0.0, 0.05));
        assert!(query_lower_bound(3.0, 0.0, 0.1) >= query_lower_bound(3.0, 0.5, 0.1));
        // Local-variation pack log is positive and scales with n.
        let v1 = volume_pack_log(5, 1, 0.2, 1.0, 0.01);
        let v2 = volume_pack_log(10, 1, 0.2, 1.0, 0.01);
        assert!(v1 > 0.0 && (v2 - 2.0 * v1).abs() < 1e-9);
    }

    #[test]
    fn manifests_serialize() {
        let base = circle_base();
        let pair = lecam_pair(&base, 0.1, 0.25, 1e-2).unwrap();
        let j = serde_json::to_string(&pair.manifest()).unwrap();
        assert!(j.contains("measured_tv"));
        let path = grid_path(3, 1, 3).unwrap();
        let m = widget_manifold(&path, 1, 2, 0.5, 8).unwrap();
        let j2 = serde_json::to_string(&m.manifest()).unwrap();
        assert!(j2.contains("volume"));
        // Cloud exports in the reference format.
        let mut buf = Vec::new();
        m.cloud.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"2,1,"));
    }
}
