//! Euclidean and Grassmannian primitives shared by every other module.
//!
//! All operations here are pure: values are freely shareable across threads
//! and nothing mutates after construction. Point sets are small enough
//! (≤ 10⁵) that brute force is the right tool; there is deliberately no
//! spatial index beyond what the propagation loop builds for itself.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Ambient vectors are dynamically sized columns over f64.
pub type Vector = DVector<f64>;

/// Tolerance for orthonormality checks on subspace frames.
pub const FRAME_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty point cloud passed to a distance operation")]
    EmptyCloud,
    #[error("frame columns are linearly dependent (rank < {dim})")]
    DegenerateFrame { dim: usize },
}

/// A d-dimensional linear subspace of R^n stored as an orthonormal frame.
#[derive(Debug, Clone)]
pub struct Subspace {
    /// n×d matrix with orthonormal columns spanning the subspace.
    frame: DMatrix<f64>,
}

impl Subspace {
    /// Builds a subspace from (possibly non-orthonormal) spanning columns.
    ///
    /// Columns are orthonormalized by modified Gram–Schmidt with one
    /// re-orthogonalization pass; near-dependent columns are rejected.
    pub fn from_columns(columns: &DMatrix<f64>) -> Result<Self, GeomError> {
        let n = columns.nrows();
        let d = columns.ncols();
        if d == 0 || d >= n {
            return Err(GeomError::DimensionMismatch { expected: n, got: d });
        }
        let mut q = columns.clone();
        for j in 0..d {
            // Two MGS sweeps: the second pass scrubs the rounding left by the first.
            for _ in 0..2 {
                for i in 0..j {
                    let qi = q.column(i).clone_owned();
                    let r = qi.dot(&q.column(j).clone_owned());
                    let mut col = q.column_mut(j);
                    col.axpy(-r, &qi, 1.0);
                }
            }
            let norm = q.column(j).norm();
            if norm < 1e-12 {
                return Err(GeomError::DegenerateFrame { dim: d });
            }
            q.column_mut(j).scale_mut(1.0 / norm);
        }
        Ok(Subspace { frame: q })
    }

    /// Frame already known to be orthonormal (checked to `FRAME_TOL`).
    pub fn from_orthonormal(frame: DMatrix<f64>) -> Result<Self, GeomError> {
        let d = frame.ncols();
        let gram = frame.transpose() * &frame;
        let eye = DMatrix::<f64>::identity(d, d);
        if (gram - eye).norm() > FRAME_TOL * (d as f64).sqrt() * 10.0 {
            return Self::from_columns(&frame);
        }
        Ok(Subspace { frame })
    }

    /// Axis-aligned subspace spanned by the given coordinate axes.
    pub fn axis_aligned(n: usize, axes: &[usize]) -> Self {
        let mut frame = DMatrix::<f64>::zeros(n, axes.len());
        for (j, &a) in axes.iter().enumerate() {
            frame[(a, j)] = 1.0;
        }
        Subspace { frame }
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    /// The n×n orthogonal projector onto the subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.frame * self.frame.transpose()
    }

    /// Coordinates of `v` in the frame basis (length d).
    pub fn coords(&self, v: &Vector) -> Vector {
        self.frame.transpose() * v
    }

    /// Embeds frame coordinates back into R^n.
    pub fn embed(&self, c: &Vector) -> Vector {
        &self.frame * c
    }
}

/// A finite set of ambient points, optionally tagged.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vector>,
    pub tags: Vec<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector>) -> Self {
        PointCloud { points, tags: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `x` to the nearest cloud point (∞ when empty).
    pub fn distance_to(&self, x: &Vector) -> f64 {
        self.points
            .iter()
            .map(|p| (p - x).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Translates every point by `v`.
    pub fn translate(&self, v: &Vector) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + v).collect(),
            tags: self.tags.clone(),
        }
    }
}

/// Orthogonal projection of `v` onto the subspace `t`.
pub fn project_onto(v: &Vector, t: &Subspace) -> Result<Vector, GeomError> {
    if v.len() != t.ambient_dim() {
        return Err(GeomError::DimensionMismatch { expected: t.ambient_dim(), got: v.len() });
    }
    Ok(t.embed(&t.coords(v)))
}

/// Operator-norm distance between the projectors of two equi-dimensional
/// subspaces: ‖π_{T1} − π_{T2}‖_op = sin of the largest principal angle.
pub fn principal_angle(t1: &Subspace, t2: &Subspace) -> Result<f64, GeomError> {
    if t1.ambient_dim() != t2.ambient_dim() {
        return Err(GeomError::DimensionMismatch { expected: t1.ambient_dim(), got: t2.ambient_dim() });
    }
    if t1.dim() != t2.dim() {
        return Err(GeomError::DimensionMismatch { expected: t1.dim(), got: t2.dim() });
    }
    let diff = t1.projector() - t2.projector();
    let sv = diff.singular_values();
    Ok(sv.iter().cloned().fold(0.0, f64::max).min(1.0))
}

/// Hausdorff distance between two finite point sets
/// (max of the two directed nearest-neighbor maxima).
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// One-sided Hausdorff distance sup_{x∈a} d(x, b).
pub fn directed_hausdorff(a: &PointCloud, b: &PointCloud) -> f64 {
    a.points
        .iter()
        .map(|p| b.distance_to(p))
        .fold(0.0, f64::max)
}

/// Maximal (sin α)-packing of the unit sphere of the subspace `t`.
///
/// Returns unit vectors in span(t) with pairwise distance > 2 sin α; the
/// greedy construction over a deterministic low-discrepancy candidate stream
/// makes the output maximal in practice (and therefore a 2 sin α-covering),
/// which is all the propagation loop needs.
pub fn direction_packing(t: &Subspace, sin_alpha: f64) -> Vec<Vector> {
    assert!(sin_alpha > 0.0 && sin_alpha < 1.0, "sin_alpha must lie in (0,1)");
    let d = t.dim();
    let sep = 2.0 * sin_alpha;
    if d == 1 {
        let u = t.frame.column(0).clone_owned();
        if sep <= 2.0 {
            return vec![u.clone(), -u];
        }
        return vec![u];
    }

    // Expected maximal cardinality of a (sin α)-packing of S^{d−1}, used only
    // to size the rejection-based stopping rule.
    let expected_max = (4.0 / sin_alpha).powi(d as i32 - 1).ceil() as usize * 2;
    let stop_after = 10 * expected_max.max(16);

    let mut accepted: Vec<Vector> = Vec::new();
    let mut accepted_coords: Vec<Vector> = Vec::new();
    let mut rejections = 0usize;

    // Candidate stream in frame coordinates: golden-angle sequence for d = 2,
    // a fixed-seed uniform stream for d ≥ 3.
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5111_d1ae);
    let mut j = 0usize;
    while rejections < stop_after {
        let c: Vector = if d == 2 {
            let theta = j as f64 * golden;
            DVector::from_vec(vec![theta.cos(), theta.sin()])
        } else {
            loop {
                let v: Vector = DVector::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                let n = v.norm();
                if n > 1e-6 && n <= 1.0 {
                    break v / n;
                }
            }
        };
        j += 1;
        let ok = accepted_coords.iter().all(|a| (a - &c).norm() > sep);
        if ok {
            accepted.push(t.embed(&c));
            accepted_coords.push(c);
            rejections = 0;
        } else {
            rejections += 1;
        }
    }
    accepted
}

/// Greedy farthest-point subsampling at scale `delta`.
///
/// The output is a subset with min pairwise distance ≥ delta that covers the
/// input within delta. Ties break toward the lowest index.
pub fn farthest_point_sample(x: &PointCloud, delta: f64) -> PointCloud {
    assert!(delta > 0.0, "delta must be positive");
    if x.is_empty() {
        return PointCloud::default();
    }
    let m = x.len();
    let mut selected = vec![0usize];
    // dist[i] = distance from x[i] to the selected set.
    let mut dist: Vec<f64> = x.points.iter().map(|p| (p - &x.points[0]).norm()).collect();
    loop {
        let mut best = 0usize;
        let mut best_d = -1.0;
        for i in 0..m {
            if dist[i] > best_d {
                best_d = dist[i];
                best = i;
            }
        }
        if best_d <= delta {
            break;
        }
        selected.push(best);
        for i in 0..m {
            let nd = (&x.points[i] - &x.points[best]).norm();
            if nd < dist[i] {
                dist[i] = nd;
            }
        }
    }
    PointCloud::new(selected.iter().map(|&i| x.points[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(parts: &[f64]) -> Vector {
        DVector::from_vec(parts.to_vec())
    }

    #[test]
    fn project_axis_aligned() {
        let t = Subspace::axis_aligned(3, &[0, 1]);
        let p = project_onto(&v(&[1.0, 2.0, 3.0]), &t).unwrap();
        assert_abs_diff_eq!(p, v(&[1.0, 2.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn project_is_idempotent_and_residual_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let cols = DMatrix::<f64>::from_fn(6, 2, |_, _| rng.gen::<f64>() - 0.5);
            let t = Subspace::from_columns(&cols).unwrap();
            let x: Vector = DVector::from_fn(6, |_, _| rng.gen::<f64>() - 0.5);
            let p = project_onto(&x, &t).unwrap();
            let p2 = project_onto(&p, &t).unwrap();
            assert!((&p - &p2).norm() < 1e-10);
            assert!(p.norm() <= x.norm() + 1e-12);
            let r = &x - &p;
            for j in 0..t.dim() {
                let tj = t.frame().column(j).clone_owned();
                assert!(r.dot(&tj).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn principal_angle_basics() {
        let t1 = Subspace::axis_aligned(2, &[0]);
        assert_abs_diff_eq!(principal_angle(&t1, &t1).unwrap(), 0.0, epsilon = 1e-12);
        let t2 = Subspace::axis_aligned(2, &[1]);
        assert_abs_diff_eq!(principal_angle(&t1, &t2).unwrap(), 1.0, epsilon = 1e-12);
        // Lines at π/6 differ by sin(π/6) = 1/2.
        let theta = std::f64::consts::PI / 6.0;
        let t3 = Subspace::from_columns(&DMatrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()])).unwrap();
        assert_abs_diff_eq!(principal_angle(&t1, &t3).unwrap(), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn principal_angle_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng| {
                let cols = DMatrix::<f64>::from_fn(5, 2, |_, _| rng.gen::<f64>() - 0.5);
                Subspace::from_columns(&cols).unwrap()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let ab = principal_angle(&a, &b).unwrap();
            let bc = principal_angle(&b, &c).unwrap();
            let ac = principal_angle(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-10);
        }
    }

    #[test]
    fn hausdorff_basics() {
        let a = PointCloud::new(vec![v(&[0.0, 0.0])]);
        assert_abs_diff_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        let b = PointCloud::new(vec![v(&[3.0, 4.0])]);
        assert_abs_diff_eq!(hausdorff(&a, &b).unwrap(), 5.0, epsilon = 1e-12);
        // A = {0,(1,0)}, B = {(0,1)}: max(1, √2) = √2.
        let a2 = PointCloud::new(vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])]);
        let b2 = PointCloud::new(vec![v(&[0.0, 1.0])]);
        assert_abs_diff_eq!(hausdorff(&a2, &b2).unwrap(), 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn hausdorff_translation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cloud = PointCloud::new(
                (0..15)
                    .map(|_| DVector::from_fn(3, |_, _| rng.gen::<f64>() * 4.0 - 2.0))
                    .collect(),
            );
            let shift: Vector = DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5);
            let moved = cloud.translate(&shift);
            let d = hausdorff(&cloud, &moved).unwrap();
            assert_abs_diff_eq!(d, shift.norm(), epsilon = 1e-9);
        }
    }

    #[test]
    fn direction_packing_d1_antipodes() {
        let t = Subspace::axis_aligned(4, &[2]);
        let pack = direction_packing(&t, 0.4);
        assert_eq!(pack.len(), 2);
        assert!((&pack[0] + &pack[1]).norm() < 1e-12);
    }

    #[test]
    fn direction_packing_d2_cardinality_and_covering() {
        let t = Subspace::axis_aligned(4, &[0, 1]);
        let sin_alpha = 1.0 / 64.0;
        let pack = direction_packing(&t, sin_alpha);
        // Packing lower bound on the circle: ≥ 2·(1/(4 sin α))^1 = 32.
        assert!(pack.len() >= 32, "got {}", pack.len());
        // Separation.
        for i in 0..pack.len() {
            for j in 0..i {
                assert!((&pack[i] - &pack[j]).norm() > 2.0 * sin_alpha);
            }
            assert_abs_diff_eq!(pack[i].norm(), 1.0, epsilon = 1e-10);
        }
        // Covering radius ≤ 2 sin α via a dense angular scan.
        for s in 0..10_000 {
            let th = s as f64 / 10_000.0 * std::f64::consts::TAU;
            let probe = t.embed(&DVector::from_vec(vec![th.cos(), th.sin()]));
            let d = pack.iter().map(|p| (p - &probe).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 2.0 * sin_alpha + 1e-9, "uncovered direction at {th}: {d}");
        }
    }

    #[test]
    fn direction_packing_d3_separation_and_covering() {
        let t = Subspace::axis_aligned(5, &[0, 2, 4]);
        let sin_alpha = 0.25;
        let pack = direction_packing(&t, sin_alpha);
        for i in 0..pack.len() {
            for j in 0..i {
                assert!((&pack[i] - &pack[j]).norm() > 2.0 * sin_alpha);
            }
        }
        // Random probes must be within 2 sin α of the packing (maximality).
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..2000 {
            let mut c: Vector = DVector::from_fn(3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            if c.norm() < 1e-3 {
                continue;
            }
            c /= c.norm();
            let probe = t.embed(&c);
            let d = pack.iter().map(|p| (p - &probe).norm()).fold(f64::INFINITY, f64::min);
            assert!(d <= 2.0 * sin_alpha + 1e-9);
        }
    }

    #[test]
    fn fps_single_point() {
        let x = PointCloud::new(vec![v(&[0.0, 0.0])]);
        let s = farthest_point_sample(&x, 1.0);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn fps_grid_line() {
        let x = PointCloud::new((0..=10).map(|i| v(&[i as f64 * 0.1])).collect());
        let s = farthest_point_sample(&x, 0.35);
        // Separation ≥ Δ.
        for i in 0..s.len() {
            for j in 0..i {
                assert!((&s.points[i] - &s.points[j]).norm() >= 0.35);
            }
        }
        // Covering ≤ Δ.
        for p in &x.points {
            assert!(s.distance_to(p) <= 0.35 + 1e-12);
        }
        // Re-running on an already Δ-separated set is the identity.
        let s2 = farthest_point_sample(&s, 0.35);
        assert_eq!(s2.len(), s.len());
    }
}
