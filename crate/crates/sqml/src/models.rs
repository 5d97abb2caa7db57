//! Ground-truth manifold distributions.
//!
//! A [`ManifoldModel`] is the hidden distribution D: an embedded d-manifold
//! in R^n with exact metric projection, tangent spaces, reach, volume, a
//! density with respect to the volume measure, and a seeded sampler. The
//! estimator never touches these objects directly — only the oracle (to
//! answer queries) and the evaluator (to score estimates) do.
//!
//! Two shapes are supported: spheres/circles with closed forms (the canonical
//! test models) and chart-backed point-cloud models (bumped spheres and
//! widget chains from the lower-bound lab), whose projection is an argmin
//! over a dense reference cloud refined by Gauss–Newton on the local chart.

use crate::geom::{PointCloud, Subspace, Vector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate parameter: {0}")]
    Degenerate(String),
    #[error("density violates the model bound sigma_d * f_min * reach^d <= 1 (got {0})")]
    DensityBound(f64),
    #[error("point lies on or beyond the medial axis (distance {dist} >= reach {reach})")]
    MedialAxis { dist: f64, reach: f64 },
    #[error("point is not on the manifold (distance {0})")]
    OffManifold(f64),
    #[error("ball has zero mass")]
    ZeroMass,
    #[error("chart refinement failed to converge (residual {0})")]
    ChartDivergence(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed reference cloud: {0}")]
    Malformed(String),
}

/// Volume of the unit d-ball.
pub fn omega(d: usize) -> f64 {
    std::f64::consts::PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0 + 1.0)
}

/// Surface measure of the unit d-sphere S^d ⊂ R^{d+1}.
pub fn sigma(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf((d as f64 + 1.0) / 2.0) / gamma((d as f64 + 1.0) / 2.0)
}

/// Lanczos approximation of the Gamma function (positive arguments).
fn gamma(x: f64) -> f64 {
    // g = 7, n = 9 Lanczos coefficients.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + G + 0.5;
        for (i, &c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Density specification relative to the volume measure of the manifold.
///
/// `Uniform` is f ≡ 1/H^d(M). `LinearTilt` is f(p) ∝ 1 + a·⟨u, p−c⟩/radius
/// with |a| < 1, which has analytic f_min, f_max and Lipschitz constant and
/// exercises the L-dependent bias terms.
#[derive(Debug, Clone)]
pub enum DensitySpec {
    Uniform,
    LinearTilt { a: f64, u: Vector },
}

/// Resolved density: bounds, Lipschitz constant, and a pointwise evaluator.
#[derive(Debug, Clone)]
pub struct Density {
    pub spec: DensitySpec,
    pub f_min: f64,
    pub f_max: f64,
    pub lipschitz: f64,
    /// 1/H^d(M), the normalization constant.
    norm: f64,
    center: Vector,
    radius: f64,
}

impl Density {
    pub fn evaluate(&self, p: &Vector) -> f64 {
        match &self.spec {
            DensitySpec::Uniform => self.norm,
            DensitySpec::LinearTilt { a, u } => {
                self.norm * (1.0 + a * u.dot(&(p - &self.center)) / self.radius)
            }
        }
    }
}

/// Dense deterministic sample of M used only for evaluation.
#[derive(Debug, Clone)]
pub struct ReferenceCloud {
    pub n: usize,
    pub d: usize,
    pub resolution: f64,
    pub cloud: PointCloud,
}

impl ReferenceCloud {
    /// CSV export: a `n,d,count` header row then one point per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        writeln!(w, "{},{},{}", self.n, self.d, self.cloud.len())?;
        for p in &self.cloud.points {
            let row: Vec<String> = p.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, resolution: f64) -> Result<Self, ModelError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ModelError::Malformed("empty file".into()))??;
        let hs: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::Malformed(format!("bad header: {e}")))?;
        if hs.len() != 3 {
            return Err(ModelError::Malformed("header must be n,d,count".into()));
        }
        let (n, d, count) = (hs[0], hs[1], hs[2]);
        let mut points = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let xs: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ModelError::Malformed(format!("bad row: {e}")))?;
            if xs.len() != n {
                return Err(ModelError::Malformed("row width != n".into()));
            }
            points.push(DVector::from_vec(xs));
        }
        if points.len() != count {
            return Err(ModelError::Malformed("count mismatch".into()));
        }
        Ok(ReferenceCloud { n, d, resolution, cloud: PointCloud::new(points) })
    }

    /// Flat binary export: u64 LE header (n, d, count) then f64 LE coords.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        for v in [self.n as u64, self.d as u64, self.cloud.len() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for p in &self.cloud.points {
            for x in p.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Chart map for cloud-backed shapes: local parameters (dim d) to ambient.
pub type ChartFn = Arc<dyn Fn(&DVector<f64>) -> Vector + Send + Sync>;

#[derive(Clone)]
pub enum Shape {
    /// d-sphere of the given radius centered at `center`, living in the
    /// affine subspace center + span(frame) with frame an n×(d+1)
    /// orthonormal basis.
    Sphere { center: Vector, radius: f64, frame: DMatrix<f64> },
    /// Chart-backed sampled shape: reference points with their chart
    /// parameters, plus the chart map used for projection refinement and
    /// (for d = 1) quadrature. `chart_speed_max` bounds ‖chart'‖ for
    /// sampling weights.
    Cloud {
        reference: Arc<ReferenceCloud>,
        params: Arc<Vec<DVector<f64>>>,
        chart: ChartFn,
        /// Closed 1-D chart domain length (d = 1 only; 2π-like period).
        period: f64,
    },
}

impl std::fmt::Debug for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Sphere { radius, .. } => write!(f, "Sphere(radius={radius})"),
            Shape::Cloud { reference, .. } => write!(f, "Cloud({} pts)", reference.cloud.len()),
        }
    }
}

/// The hidden distribution D: manifold + density + sampler.
#[derive(Debug, Clone)]
pub struct ManifoldModel {
    pub n: usize,
    pub d: usize,
    pub reach: f64,
    pub volume: f64,
    pub bounding_radius: f64,
    pub fixed_point: bool,
    pub density: Density,
    pub shape: Shape,
}

impl ManifoldModel {
    /// Builds a d-sphere model in the first d+1 coordinates of R^n.
    pub fn make_sphere(
        d: usize,
        n: usize,
        radius: f64,
        center: Vector,
        spec: DensitySpec,
    ) -> Result<Self, ModelError> {
        if d >= n || radius <= 0.0 {
            return Err(ModelError::Degenerate(format!("d={d}, n={n}, radius={radius}")));
        }
        if center.len() != n {
            return Err(ModelError::Degenerate("center dimension".into()));
        }
        let frame = DMatrix::<f64>::identity(n, n).columns(0, d + 1).into_owned();
        let volume = sigma(d) * radius.powi(d as i32);
        let density = resolve_density(spec, &center, radius, volume)?;
        // Model bound: f_min ≤ 1/(σ_d reach^d).
        let bound = sigma(d) * density.f_min * radius.powi(d as i32);
        if bound > 1.0 + 1e-9 {
            return Err(ModelError::DensityBound(bound));
        }
        let bounding_radius = center.norm() + radius;
        let fixed_point = {
            // 0 ∈ M iff ‖center‖ = radius and center lies in the embedding plane.
            (center.norm() - radius).abs() < 1e-9
                && center.rows(d + 1, n - d - 1).norm() < 1e-12
        };
        Ok(ManifoldModel {
            n,
            d,
            reach: radius,
            volume,
            bounding_radius,
            fixed_point,
            density,
            shape: Shape::Sphere { center, radius, frame },
        })
    }

    /// Exact distance from `x` to the manifold.
    /// Builds a chart-backed cloud model from externally constructed data
    /// (bumped spheres, widget chains). The density is treated as uniform
    /// with the supplied bounds; callers are responsible for `volume` being
    /// the d-measure of the realized shape.
    #[allow(clippy::too_many_arguments)]
    pub fn make_cloud(
        d: usize,
        n: usize,
        reach: f64,
        volume: f64,
        bounding_radius: f64,
        fixed_point: bool,
        (f_min, f_max, lipschitz): (f64, f64, f64),
        reference: Arc<ReferenceCloud>,
        params: Arc<Vec<DVector<f64>>>,
        chart: ChartFn,
        period: f64,
    ) -> Result<Self, ModelError> {
        if d >= n || reach <= 0.0 || volume <= 0.0 {
            return Err(ModelError::Degenerate(format!("d={d}, n={n}, reach={reach}")));
        }
        if reference.n != n || reference.d != d || reference.cloud.len() != params.len() {
            return Err(ModelError::Degenerate("reference/params mismatch".into()));
        }
        let density = Density {
            spec: DensitySpec::Uniform,
            f_min,
            f_max,
            lipschitz,
            norm: 1.0 / volume,
            center: DVector::zeros(n),
            radius: reach,
        };
        Ok(ManifoldModel {
            n,
            d,
            reach,
            volume,
            bounding_radius,
            fixed_point,
            density,
            shape: Shape::Cloud { reference, params, chart, period },
        })
    }

    pub fn distance(&self, x: &Vector) -> f64 {
        match &self.shape {
            Shape::Sphere { center, radius, frame } => {
                let rel = x - center;
                let inplane = frame.transpose() * &rel;
                let out2 = rel.norm_squared() - inplane.norm_squared();
                let dr = inplane.norm() - radius;
                (dr * dr + out2.max(0.0)).sqrt()
            }
            Shape::Cloud { .. } => match self.project_impl(x) {
                Ok(p) => (x - &p).norm(),
                Err(_) => self.cloud_ref().cloud.distance_to(x),
            },
        }
    }

    /// Metric projection onto M; errors on the medial axis (where the
    /// nearest point is not unique).
    pub fn project(&self, x: &Vector) -> Result<Vector, ModelError> {
        if let Shape::Cloud { .. } = self.shape {
            // No closed-form medial axis; fall back to the reach criterion.
            let dist = self.distance(x);
            if dist >= self.reach {
                return Err(ModelError::MedialAxis { dist, reach: self.reach });
            }
        }
        self.project_impl(x)
    }

    fn project_impl(&self, x: &Vector) -> Result<Vector, ModelError> {
        match &self.shape {
            Shape::Sphere { center, radius, frame } => {
                let rel = x - center;
                let inplane = frame.transpose() * &rel;
                let nrm = inplane.norm();
                if nrm < 1e-14 {
                    return Err(ModelError::MedialAxis { dist: self.distance(x), reach: self.reach });
                }
                Ok(center + frame * (inplane * (*radius / nrm)))
            }
            Shape::Cloud { reference, params, chart, .. } => {
                // Argmin over the reference cloud, then Gauss–Newton on the chart.
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, p) in reference.cloud.points.iter().enumerate() {
                    let dd = (p - x).norm();
                    if dd < best_d {
                        best_d = dd;
                        best = i;
                    }
                }
                let mut t = params[best].clone();
                let k = t.len();
                let fd = (self.reach * 1e-7).max(1e-10);
                let mut last_res = f64::INFINITY;
                for _ in 0..20 {
                    let y = chart(&t);
                    let r = &y - x;
                    last_res = r.norm();
                    // Finite-difference Jacobian of the chart.
                    let mut jac = DMatrix::<f64>::zeros(self.n, k);
                    for j in 0..k {
                        let mut tp = t.clone();
                        tp[j] += fd;
                        let mut tm = t.clone();
                        tm[j] -= fd;
                        let col = (chart(&tp) - chart(&tm)) / (2.0 * fd);
                        jac.set_column(j, &col);
                    }
                    let jt = jac.transpose();
                    let g = &jt * &r;
                    let h = &jt * &jac;
                    match h.clone().cholesky() {
                        Some(ch) => {
                            let step = ch.solve(&g);
                            t -= step;
                        }
                        None => break,
                    }
                }
                let y = chart(&t);
                let res = (&y - x).norm();
                if res > best_d + 1e-12 && res > last_res + 1e-12 {
                    return Err(ModelError::ChartDivergence(res));
                }
                Ok(y)
            }
        }
    }

    /// Tangent space at an on-manifold point.
    pub fn tangent(&self, p: &Vector) -> Result<Subspace, ModelError> {
        let dist = self.distance(p);
        if dist > 1e-8 * self.reach.max(1.0) {
            return Err(ModelError::OffManifold(dist));
        }
        match &self.shape {
            Shape::Sphere { center, radius: _, frame } => {
                // Tangent = orthogonal complement of the radial direction
                // within the embedding subspace.
                let rel = p - center;
                let radial0 = frame.transpose() * &rel;
                let radial = &radial0 / radial0.norm();
                // Build d vectors of the (d+1)-dim coordinates ⊥ radial.
                let dd = self.d;
                let mut cols = DMatrix::<f64>::zeros(dd + 1, dd);
                let mut have = 0usize;
                for j in 0..=dd {
                    if have == dd {
                        break;
                    }
                    let mut e = DVector::<f64>::zeros(dd + 1);
                    e[j] = 1.0;
                    let r = radial.dot(&e);
                    let cand = e - &radial * r;
                    if cand.norm() > 1e-6 {
                        cols.set_column(have, &cand);
                        have += 1;
                    }
                }
                let ambient_cols = frame * cols;
                Subspace::from_columns(&ambient_cols)
                    .map_err(|e| ModelError::Degenerate(format!("tangent frame: {e}")))
            }
            Shape::Cloud { reference, params, chart, .. } => {
                // Finite-difference chart Jacobian at the nearest parameter.
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, q) in reference.cloud.points.iter().enumerate() {
                    let dd = (q - p).norm();
                    if dd < best_d {
                        best_d = dd;
                        best = i;
                    }
                }
                let t = &params[best];
                let k = t.len();
                let fd = (self.reach * 1e-6).max(1e-9);
                let mut jac = DMatrix::<f64>::zeros(self.n, k);
                for j in 0..k {
                    let mut tp = t.clone();
                    tp[j] += fd;
                    let mut tm = t.clone();
                    tm[j] -= fd;
                    let col = (chart(&tp) - chart(&tm)) / (2.0 * fd);
                    jac.set_column(j, &col);
                }
                Subspace::from_columns(&jac)
                    .map_err(|e| ModelError::Degenerate(format!("tangent frame: {e}")))
            }
        }
    }

    /// Seeded sampler drawing `count` points from D.
    pub fn sample(&self, seed: u64, count: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        match &self.shape {
            Shape::Sphere { center, radius, frame } => {
                let dd = self.d;
                while points.len() < count {
                    // Uniform direction on S^d via normalized Gaussians.
                    let mut v = DVector::<f64>::zeros(dd + 1);
                    loop {
                        for i in 0..=dd {
                            v[i] = gaussian(&mut rng);
                        }
                        if v.norm() > 1e-9 {
                            break;
                        }
                    }
                    v /= v.norm();
                    let p = center + frame * (v * *radius);
                    // Rejection step for non-uniform densities.
                    let acc = match &self.density.spec {
                        DensitySpec::Uniform => true,
                        DensitySpec::LinearTilt { .. } => {
                            let f = self.density.evaluate(&p);
                            rng.gen::<f64>() < f / self.density.f_max
                        }
                    };
                    if acc {
                        points.push(p);
                    }
                }
            }
            Shape::Cloud { chart, period, .. } => {
                // d = 1 pushforward sampling with speed reweighting.
                let speed_max = self.chart_speed_max();
                while points.len() < count {
                    let t = DVector::from_vec(vec![rng.gen::<f64>() * period]);
                    let sp = self.chart_speed(chart, &t);
                    if rng.gen::<f64>() < sp / speed_max {
                        points.push(chart(&t));
                    }
                }
            }
        }
        PointCloud::new(points)
    }

    fn cloud_ref(&self) -> &ReferenceCloud {
        match &self.shape {
            Shape::Cloud { reference, .. } => reference,
            _ => unreachable!(),
        }
    }

    fn chart_speed(&self, chart: &ChartFn, t: &DVector<f64>) -> f64 {
        let fd = 1e-6;
        let mut tp = t.clone();
        tp[0] += fd;
        let mut tm = t.clone();
        tm[0] -= fd;
        ((chart(&tp) - chart(&tm)) / (2.0 * fd)).norm()
    }

    fn chart_speed_max(&self) -> f64 {
        match &self.shape {
            Shape::Cloud { chart, period, .. } => {
                let mut mx: f64 = 0.0;
                for i in 0..512 {
                    let t = DVector::from_vec(vec![i as f64 / 512.0 * period]);
                    mx = mx.max(self.chart_speed(chart, &t));
                }
                mx * 1.05
            }
            _ => 0.0,
        }
    }

    /// Exact mass D(B(x0, h)).
    ///
    /// d = 1 uses interval quadrature (error ≤ 1e-12-ish); d ≥ 2 uniform
    /// spheres use the closed-form cap measure; otherwise seeded Monte Carlo
    /// with the returned standard error.
    pub fn ball_mass(&self, x0: &Vector, h: f64) -> (f64, Option<f64>) {
        assert!(h > 0.0);
        if self.distance(x0) >= h {
            return (0.0, None);
        }
        match (&self.shape, self.d) {
            (Shape::Sphere { .. }, 1) => {
                let m = self.expect_d1(|x| if (x - x0).norm() <= h { 1.0 } else { 0.0 }, Some((x0, h)));
                (m, None)
            }
            (Shape::Sphere { center, radius, frame }, d) => {
                if let DensitySpec::Uniform = self.density.spec {
                    // Cap {v ∈ S^d : ⟨v, u⟩ ≥ s} with u the in-plane direction of x0−c.
                    let rel = x0 - center;
                    let inplane = frame.transpose() * &rel;
                    let out2 = rel.norm_squared() - inplane.norm_squared();
                    let unorm = inplane.norm();
                    let rhs = rel.norm_squared() + radius * radius - h * h;
                    if unorm < 1e-14 {
                        let all = rhs <= 0.0 || out2 + radius * radius <= h * h;
                        return (if all { 1.0 } else { 0.0 }, None);
                    }
                    let s = rhs / (2.0 * radius * unorm);
                    if s <= -1.0 {
                        return (1.0, None);
                    }
                    if s >= 1.0 {
                        return (0.0, None);
                    }
                    (cap_fraction(d, s), None)
                } else {
                    let bank = self.sample(0xba11, 200_000);
                    let mut hits = 0usize;
                    for p in &bank.points {
                        if (p - x0).norm() <= h {
                            hits += 1;
                        }
                    }
                    let m = hits as f64 / bank.len() as f64;
                    let se = (m * (1.0 - m) / bank.len() as f64).sqrt();
                    (m, Some(se))
                }
            }
            (Shape::Cloud { .. }, _) => {
                let m = self.expect_d1(|x| if (x - x0).norm() <= h { 1.0 } else { 0.0 }, None);
                (m, None)
            }
        }
    }

    /// Geodesic distance between two on-manifold points (spheres only).
    pub fn geodesic_distance(&self, p: &Vector, q: &Vector) -> Option<f64> {
        match &self.shape {
            Shape::Sphere { center, radius, .. } => {
                let a = (p - center) / *radius;
                let b = (q - center) / *radius;
                let c = a.dot(&b).clamp(-1.0, 1.0);
                Some(radius * c.acos())
            }
            _ => None,
        }
    }

    /// Expectation E_D[g] for intrinsic dimension 1 via quadrature.
    ///
    /// A support hint (center, radius) declares that g vanishes outside the
    /// ball, letting the integrator restrict to the closed-form angular
    /// intervals where the curve meets the ball; the smooth restriction is
    /// then integrated by fixed-order Gauss–Legendre panels.
    pub fn expect_d1<G: Fn(&Vector) -> f64>(&self, g: G, hint: Option<(&Vector, f64)>) -> f64 {
        assert_eq!(self.d, 1, "expect_d1 requires d = 1");
        match &self.shape {
            Shape::Sphere { center, radius, frame } => {
                let e0 = frame.column(0).clone_owned();
                let e1 = frame.column(1).clone_owned();
                let point_at = |theta: f64| -> Vector {
                    center + &e0 * (radius * theta.cos()) + &e1 * (radius * theta.sin())
                };
                let weight = |theta: f64| -> f64 {
                    let p = point_at(theta);
                    g(&p) * self.density.evaluate(&p) * radius
                };
                if let Some((x0, h)) = hint {
                    // ‖x(θ)−x0‖² = ‖c−x0‖² + r² + 2r⟨c−x0, e0 cosθ + e1 sinθ⟩ ≤ h².
                    let rel = center - x0;
                    let a = rel.dot(&e0) * 2.0 * radius;
                    let b = rel.dot(&e1) * 2.0 * radius;
                    let c0 = rel.norm_squared() + radius * radius - h * h;
                    // Need a cosθ + b sinθ ≤ −c0, i.e. ρ cos(θ−φ) ≤ −c0.
                    let rho = (a * a + b * b).sqrt();
                    let phi = b.atan2(a);
                    if rho < 1e-300 {
                        if c0 <= 0.0 {
                            return gauss_panels(&weight, 0.0, std::f64::consts::TAU, 64);
                        }
                        return 0.0;
                    }
                    let t = -c0 / rho;
                    if t >= 1.0 {
                        return gauss_panels(&weight, 0.0, std::f64::consts::TAU, 64);
                    }
                    if t <= -1.0 {
                        return 0.0;
                    }
                    // cos(θ−φ) ≤ t on [φ+γ, φ+2π−γ] with γ = acos(t).
                    let gma = t.acos();
                    let lo = phi + gma;
                    let hi = phi + std::f64::consts::TAU - gma;
                    let len = hi - lo;
                    let panels = ((len / 0.2).ceil() as usize).clamp(2, 64);
                    gauss_panels(&weight, lo, hi, panels)
                } else {
                    adaptive_simpson_periodic(&weight, 1e-11)
                }
            }
            Shape::Cloud { chart, period, .. } => {
                // Pushforward of the uniform base measure with speed weight,
                // normalized by the curve length.
                let speed = |t: f64| -> f64 {
                    let tv = DVector::from_vec(vec![t]);
                    self.chart_speed(chart, &tv)
                };
                let num = |t: f64| -> f64 {
                    let tv = DVector::from_vec(vec![t]);
                    g(&chart(&tv)) * speed(t)
                };
                let total_len = adaptive_simpson(&speed, 0.0, *period, 1e-10);
                adaptive_simpson(&num, 0.0, *period, 1e-10) / total_len
            }
        }
    }

    /// Generates a deterministic dense reference sample at the given
    /// resolution (covering radius of M by the cloud ≤ r_ref).
    pub fn reference_cloud(&self, r_ref: f64) -> ReferenceCloud {
        match &self.shape {
            Shape::Sphere { center, radius, frame } => {
                let points = match self.d {
                    1 => {
                        let count = ((std::f64::consts::TAU * radius / r_ref).ceil() as usize * 2).max(8);
                        (0..count)
                            .map(|i| {
                                let th = i as f64 / count as f64 * std::f64::consts::TAU;
                                center
                                    + frame.column(0) * (radius * th.cos())
                                    + frame.column(1) * (radius * th.sin())
                            })
                            .collect()
                    }
                    _ => {
                        // Fibonacci-style spiral for d = 2; seeded dense sample
                        // with a covering check otherwise.
                        let count = ((self.volume / (r_ref * r_ref) * 8.0).ceil() as usize).max(64);
                        if self.d == 2 {
                            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
                            (0..count)
                                .map(|i| {
                                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                                    let rr = (1.0 - z * z).sqrt();
                                    let th = golden * i as f64;
                                    let v = DVector::from_vec(vec![rr * th.cos(), rr * th.sin(), z]);
                                    center + frame * (v * *radius)
                                })
                                .collect()
                        } else {
                            self.sample(0xc10d, count).points
                        }
                    }
                };
                ReferenceCloud { n: self.n, d: self.d, resolution: r_ref, cloud: PointCloud::new(points) }
            }
            Shape::Cloud { reference, .. } => (**reference).clone(),
        }
    }
}

fn resolve_density(
    spec: DensitySpec,
    center: &Vector,
    radius: f64,
    volume: f64,
) -> Result<Density, ModelError> {
    let norm = 1.0 / volume;
    match &spec {
        DensitySpec::Uniform => Ok(Density {
            spec,
            f_min: norm,
            f_max: norm,
            lipschitz: 0.0,
            norm,
            center: center.clone(),
            radius,
        }),
        DensitySpec::LinearTilt { a, u } => {
            if a.abs() >= 1.0 {
                return Err(ModelError::Degenerate("tilt |a| must be < 1".into()));
            }
            if (u.norm() - 1.0).abs() > 1e-9 {
                return Err(ModelError::Degenerate("tilt direction must be unit".into()));
            }
            Ok(Density {
                f_min: norm * (1.0 - a.abs()),
                f_max: norm * (1.0 + a.abs()),
                lipschitz: norm * a.abs() / radius,
                spec,
                norm,
                center: center.clone(),
                radius,
            })
        }
    }
}

/// Fraction of S^d with ⟨v, u⟩ ≥ s (normalized cap measure).
fn cap_fraction(d: usize, s: f64) -> f64 {
    // Slice measure of S^d at height t is ∝ (1−t²)^{(d−2)/2}.
    let f = |t: f64| (1.0 - t * t).powf((d as f64 - 2.0) / 2.0);
    let num = adaptive_simpson(&f, s, 1.0, 1e-12);
    let den = adaptive_simpson(&f, -1.0, 1.0, 1e-12);
    num / den
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller.
    loop {
        let u: f64 = rng.gen::<f64>();
        if u > 1e-300 {
            let v: f64 = rng.gen::<f64>();
            return (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
        }
    }
}

/// Fixed-order composite Gauss–Legendre quadrature (10 nodes per panel).
pub fn gauss_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    // 10-point Gauss–Legendre nodes/weights on [−1, 1].
    const X: [f64; 5] = [
        0.148_874_338_981_631_2,
        0.433_395_394_129_247_2,
        0.679_409_568_299_024_4,
        0.865_063_366_688_984_5,
        0.973_906_528_517_171_7,
    ];
    const W: [f64; 5] = [
        0.295_524_224_714_752_9,
        0.269_266_719_309_996_4,
        0.219_086_362_515_982_04,
        0.149_451_349_150_580_6,
        0.066_671_344_308_688_14,
    ];
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = h / 2.0;
        let mut s = 0.0;
        for i in 0..5 {
            s += W[i] * (f(mid + half * X[i]) + f(mid - half * X[i]));
        }
        total += s * half;
    }
    total
}

/// Adaptive Simpson quadrature with absolute tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    // Seed with 32 panels so discontinuities are localized early.
    let panels = 32usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let x0 = a + i as f64 * h;
        let x1 = x0 + h;
        let m = 0.5 * (x0 + x1);
        let (fa, fm, fb) = (f(x0), f(m), f(x1));
        let whole = (x1 - x0) / 6.0 * (fa + 4.0 * fm + fb);
        total += rec(f, x0, x1, fa, fm, fb, whole, tol / panels as f64, 40);
    }
    total
}

fn adaptive_simpson_periodic<F: Fn(f64) -> f64>(f: &F, tol: f64) -> f64 {
    adaptive_simpson(f, 0.0, std::f64::consts::TAU, tol)
}
