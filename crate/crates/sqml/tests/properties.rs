//! Randomized property tests of the library's core invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sqml::geom::{direction_packing, hausdorff, PointCloud, Subspace};
use sqml::lowerbound::{grid_path, query_lower_bound};
use sqml::models::{DensitySpec, ManifoldModel};
use sqml::oracle::{AdversaryPolicy, OracleSession, Query};
use std::sync::Arc;

fn circle() -> Arc<ManifoldModel> {
    Arc::new(
        ManifoldModel::make_sphere(1, 2, 1.0, DVector::zeros(2), DensitySpec::Uniform).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every adversary policy answers constant queries within the validity
    /// band |answer − E[φ]| ≤ τ, and the whole transcript audits clean.
    #[test]
    fn oracle_validity_band(
        c in -1.0f64..1.0,
        tau in 0.01f64..0.5,
        which in 0usize..3,
        reps in 1usize..4,
    ) {
        let policy = match which {
            0 => AdversaryPolicy::Exact,
            1 => AdversaryPolicy::Rounding,
            _ => AdversaryPolicy::WorstSign,
        };
        let mut s = OracleSession::new(circle(), tau, policy, 7);
        for _ in 0..reps {
            let a = s.answer(&Query::new("const", move |_x| c)).unwrap();
            prop_assert!((a - c).abs() <= tau + 1e-9, "answer {a} vs mean {c} at tau {tau}");
            prop_assert!(a.abs() <= 1.0 + tau + 1e-12);
        }
        prop_assert!(s.audit_validity());
        prop_assert_eq!(s.budget_used, reps as u64);
    }

    /// Hausdorff distance is symmetric and translation moves a cloud by at
    /// most the translation norm.
    #[test]
    fn hausdorff_symmetry_and_translation(
        pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..12),
        v in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let a = PointCloud::new(pts.iter().map(|p| DVector::from_row_slice(p)).collect());
        let shift = DVector::from_row_slice(&v);
        let b = a.translate(&shift);
        let dab = hausdorff(&a, &b).unwrap();
        let dba = hausdorff(&b, &a).unwrap();
        prop_assert!((dab - dba).abs() <= 1e-12);
        prop_assert!(dab <= shift.norm() + 1e-12);
    }

    /// Direction packings consist of unit vectors inside the subspace, and
    /// the d = 1 packing is exactly the two antipodal directions.
    #[test]
    fn direction_packing_unit_vectors(
        seed in 0u64..1000,
        d in 1usize..3,
        sin_alpha in 0.01f64..0.3,
    ) {
        let n = 4usize;
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let m = DMatrix::from_fn(n, d, |_, _| next());
        prop_assume!(m.column(0).norm() > 1e-3);
        let t = match Subspace::from_columns(&m) {
            Ok(t) => t,
            Err(_) => return Ok(()),
        };
        let dirs = direction_packing(&t, sin_alpha);
        prop_assert!(!dirs.is_empty());
        if d == 1 {
            prop_assert_eq!(dirs.len(), 2);
            prop_assert!((&dirs[0] + &dirs[1]).norm() <= 1e-9, "not antipodal");
        }
        let proj = t.projector();
        for v in &dirs {
            prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
            prop_assert!((&proj * v - v).norm() <= 1e-9, "direction leaves the subspace");
        }
    }

    /// Snake prefixes of any feasible length are valid grid paths of that
    /// exact length.
    #[test]
    fn grid_path_prefixes_valid(kappa in 2usize..6, n in 1usize..4, num in 0.0f64..1.0) {
        let total = kappa.pow(n as u32);
        let ell = 1 + ((total - 1) as f64 * num) as usize;
        let p = grid_path(kappa, n, ell).unwrap();
        prop_assert_eq!(p.len(), ell);
        p.validate().unwrap();
    }

    /// The query lower bound is nondecreasing in the packing log-cardinality
    /// and in the per-query information ln(1 + ⌊1/τ⌋)⁻¹ (i.e. in τ).
    #[test]
    fn query_lower_bound_monotone(
        pack in 0.5f64..200.0,
        extra in 0.0f64..50.0,
        alpha in 0.0f64..0.9,
        tau in 1e-4f64..0.4,
    ) {
        let q = query_lower_bound(pack, alpha, tau);
        prop_assert!(query_lower_bound(pack + extra, alpha, tau) >= q - 1e-12);
        prop_assert!(query_lower_bound(pack, alpha, (tau * 2.0).min(0.99)) >= q - 1e-12);
    }
}
