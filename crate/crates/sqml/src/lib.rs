//! Manifold estimation from statistical queries.
//!
//! This crate simulates the full statistical-query (SQ) manifold-estimation
//! pipeline over synthetic embedded manifolds:
//!
//! - [`geom`]: dimension-generic Euclidean/Grassmannian primitives (subspaces,
//!   principal angles, Hausdorff distances, direction packings, farthest-point
//!   sampling);
//! - [`models`]: ground-truth manifold distributions with exact projection,
//!   tangent spaces, densities and samplers — hidden from the estimator,
//!   visible to the oracle and the evaluator;
//! - [`oracle`]: the adversarial STAT(τ) answering channel with budget
//!   accounting, adversary policies and the clutter-noise lift;
//! - [`matrix`]: SQ mean-vector estimation via tight frames and low-rank mean
//!   matrix recovery via Pauli sampling + nuclear-norm minimization;
//! - [`routines`]: the three SQ geometric primitives (projection, tangent,
//!   seed detection via ambient binary search + refinement);
//! - [`propagation`]: the Manifold Propagation loop and the end-to-end
//!   fixed-point / bounding-ball estimators with evaluation metrics;
//! - [`lowerbound`]: constructive lower-bound machinery (bump maps, Le Cam
//!   pairs, grid paths, widget manifolds, translation packings, query-count
//!   arithmetic).

pub mod geom;
pub mod lowerbound;
pub mod matrix;
pub mod models;
pub mod oracle;
pub mod propagation;
pub mod routines;

pub use geom::{PointCloud, Subspace, Vector};
