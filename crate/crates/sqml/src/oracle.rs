//! The adversarial STAT(τ) answering channel.
//!
//! The estimator sees the hidden distribution D only through an
//! [`OracleSession`]: it submits bounded queries r: R^n → [−1, 1] and
//! receives answers a with |a − E_D[r]| ≤ τ, where the adversary policy
//! chooses the perturbation (possibly adaptively, from the full prior
//! transcript). Sessions account for every answer against a hard budget cap
//! and record an ordered transcript for validity auditing and export.
//!
//! The clutter-noise correspondence is also implemented here: sessions may be
//! opened over a mixture βD + (1−β)Q₀ with Q₀ a known ambient-ball clutter
//! distribution, and [`clutter_answer_lift`] turns mixture answers back into
//! STAT(τ/β)-valid answers for D.

use crate::geom::Vector;
use crate::models::{ManifoldModel, ModelError};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("query budget exhausted (cap {0})")]
    BudgetExhausted(u64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A bounded statistical query.
///
/// The evaluator must map into [−1, 1]; out-of-range values are clipped and
/// counted (a violation beyond 1e-12 raises the session's clip-warning
/// counter). `support_hint` is an optional declaration by the *query author*
/// that the evaluator vanishes outside the closed ball (center, radius); it
/// never changes query semantics, only lets the integrator skip regions the
/// author already promised are zero.
pub struct Query<'q> {
    pub evaluator: Box<dyn Fn(&Vector) -> f64 + 'q>,
    pub label: String,
    pub support_hint: Option<(Vector, f64)>,
}

impl<'q> Query<'q> {
    pub fn new(label: impl Into<String>, evaluator: impl Fn(&Vector) -> f64 + 'q) -> Self {
        Query { evaluator: Box::new(evaluator), label: label.into(), support_hint: None }
    }

    pub fn with_support(mut self, center: Vector, radius: f64) -> Self {
        self.support_hint = Some((center, radius));
        self
    }
}

/// How the adversary perturbs true means within the τ band.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryPolicy {
    /// Answers the true mean exactly.
    Exact,
    /// Deterministic grid rounding: answers lie on L_i = min{−1+(2i+1)τ, 1}
    /// and f(t) is the smallest grid value with |L_i − t| ≤ τ, so any
    /// transcript contains at most 1 + ⌊1/τ⌋ distinct answers.
    Rounding,
    /// true_mean + τ·s with s ∈ {−1, +1}; the default rule flips the sign
    /// each time a query from the same label class arrives (the class is the
    /// label up to the first `#`).
    WorstSign,
}

/// One transcript row. `true_mean` is ground truth and must only be exported
/// under an explicit reveal flag.
#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub index: u64,
    pub label: String,
    pub tau: f64,
    pub true_mean: f64,
    pub answer: f64,
}

/// Known ambient clutter distribution Q₀: uniform on a Euclidean ball.
#[derive(Debug, Clone)]
pub struct ClutterSpec {
    pub beta: f64,
    pub center: Vector,
    pub radius: f64,
}

pub const DEFAULT_BUDGET_CAP: u64 = 10_000_000;

/// A budget-accounted STAT(τ) session over a hidden model.
pub struct OracleSession {
    model: Arc<ManifoldModel>,
    pub tau: f64,
    pub policy: AdversaryPolicy,
    pub seed: u64,
    pub budget_cap: u64,
    pub budget_used: u64,
    pub transcript: Vec<TranscriptEntry>,
    pub clip_warnings: u64,
    clutter: Option<ClutterSpec>,
    /// When set (clutter active), answers are lifted back to the clean D:
    /// a' = (a − (1−β)·E_Q0)/β, valid at tolerance τ/β, and the transcript
    /// records the lifted quantities at that tolerance.
    lift_clutter: bool,
    /// Per-session fixed Monte Carlo bank for d ≥ 2 expectations, so
    /// adaptively chosen queries are answered on a common measure.
    bank: Option<Vec<Vector>>,
    /// Clutter sample bank (uniform in the Q₀ ball), when clutter is active.
    clutter_bank: Option<Vec<Vector>>,
    sign_state: HashMap<String, bool>,
}

impl OracleSession {
    pub fn new(model: Arc<ManifoldModel>, tau: f64, policy: AdversaryPolicy, seed: u64) -> Self {
        assert!(tau > 0.0 && tau <= 1.0, "tau must be in (0, 1]");
        OracleSession {
            model,
            tau,
            policy,
            seed,
            budget_cap: DEFAULT_BUDGET_CAP,
            budget_used: 0,
            transcript: Vec::new(),
            clip_warnings: 0,
            clutter: None,
            lift_clutter: false,
            bank: None,
            clutter_bank: None,
            sign_state: HashMap::new(),
        }
    }

    pub fn with_budget_cap(mut self, cap: u64) -> Self {
        self.budget_cap = cap;
        self
    }

    /// Opens the session over the mixture β·D + (1−β)·Q₀ instead of D.
    pub fn with_clutter(mut self, spec: ClutterSpec) -> Self {
        assert!(spec.beta > 0.0 && spec.beta <= 1.0);
        self.clutter = Some(spec);
        self
    }

    /// Applies the clutter lift transparently inside [`Self::answer`]: every
    /// answer comes back lifted to the clean distribution D at the effective
    /// tolerance τ/β, so callers can run the standard routines unchanged
    /// with their tolerance parameter set to τ/β.
    pub fn with_clutter_lift(mut self) -> Self {
        assert!(self.clutter.is_some(), "clutter lift requires a clutter spec");
        self.lift_clutter = true;
        self
    }

    pub fn model(&self) -> &ManifoldModel {
        &self.model
    }

    pub fn clutter(&self) -> Option<&ClutterSpec> {
        self.clutter.as_ref()
    }

    /// Bank size from the 3σ ≤ τ/20 rule (σ ≤ 1 for bounded queries),
    /// clamped to keep desk-scale runs tractable; the residual Monte Carlo
    /// error is documented to live inside the τ slack.
    fn bank_size(&self) -> usize {
        let ideal = (60.0 / self.tau).powi(2).ceil();
        (ideal as usize).clamp(10_000, 2_000_000)
    }

    fn ensure_banks(&mut self) {
        if self.model.d >= 2 && self.bank.is_none() {
            let cloud = self.model.sample(self.seed ^ BANK_SEED_MASK, self.bank_size());
            self.bank = Some(cloud.points);
        }
        if self.clutter.is_some() && self.clutter_bank.is_none() {
            let spec = self.clutter.clone().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ CLUTTER_SEED_MASK);
            let size = self.bank_size();
            let n = self.model.n;
            let mut pts = Vec::with_capacity(size);
            while pts.len() < size {
                // Rejection sampling of the uniform ball from the cube.
                let v = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                if v.norm() <= 1.0 {
                    pts.push(&spec.center + v * spec.radius);
                }
            }
            // Sorted by the first coordinate so hinted queries can scan only
            // the slab that meets the support ball.
            pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
            self.clutter_bank = Some(pts);
        }
    }

    fn eval_clipped(
        evaluator: &dyn Fn(&Vector) -> f64,
        x: &Vector,
        clip_warnings: &mut u64,
    ) -> f64 {
        let v = evaluator(x);
        if v.abs() > 1.0 {
            if v.abs() > 1.0 + 1e-12 {
                *clip_warnings += 1;
            }
            v.clamp(-1.0, 1.0)
        } else {
            v
        }
    }

    /// E over the manifold part D.
    fn manifold_mean(&mut self, q: &Query) -> f64 {
        self.ensure_banks();
        let mut clips = 0u64;
        let val = if self.model.d == 1 {
            let ev = &q.evaluator;
            let hint = q.support_hint.as_ref().map(|(c, h)| (c, *h));
            let clip_cell = std::cell::Cell::new(0u64);
            let v = self.model.expect_d1(
                |x| {
                    let mut c = clip_cell.get();
                    let y = Self::eval_clipped(ev.as_ref(), x, &mut c);
                    clip_cell.set(c);
                    y
                },
                hint,
            );
            clips += clip_cell.get();
            v
        } else {
            let bank = self.bank.as_ref().expect("bank initialized");
            let mut sum = 0.0;
            match &q.support_hint {
                Some((c, h)) => {
                    for p in bank {
                        if (p - c).norm() <= *h {
                            sum += Self::eval_clipped(q.evaluator.as_ref(), p, &mut clips);
                        }
                    }
                }
                None => {
                    for p in bank {
                        sum += Self::eval_clipped(q.evaluator.as_ref(), p, &mut clips);
                    }
                }
            }
            sum / bank.len() as f64
        };
        self.clip_warnings += clips;
        val
    }

    /// E over the clutter part Q₀ (available to the estimator: Q₀ is known).
    pub fn q0_mean(&mut self, q: &Query) -> f64 {
        self.ensure_banks();
        let bank = self.clutter_bank.as_ref().expect("clutter session");
        let mut clips = 0u64;
        let mut sum = 0.0;
        match &q.support_hint {
            Some((c, h)) => {
                // Bank is sorted by coordinate 0: restrict to the slab
                // [c₀ − h, c₀ + h] before the full radius check.
                let lo = bank.partition_point(|p| p[0] < c[0] - *h);
                let hi = bank.partition_point(|p| p[0] <= c[0] + *h);
                for p in &bank[lo..hi] {
                    if (p - c).norm() <= *h {
                        sum += Self::eval_clipped(q.evaluator.as_ref(), p, &mut clips);
                    }
                }
            }
            None => {
                for p in bank {
                    sum += Self::eval_clipped(q.evaluator.as_ref(), p, &mut clips);
                }
            }
        }
        self.clip_warnings += clips;
        sum / bank.len() as f64
    }


    /// Answers a query: adversary applied, transcript appended, budget spent.
    pub fn answer(&mut self, q: &Query) -> Result<f64, OracleError> {
        if self.budget_used >= self.budget_cap {
            return Err(OracleError::BudgetExhausted(self.budget_cap));
        }
        let m = self.manifold_mean(q);
        let q0 = if self.clutter.is_some() { Some(self.q0_mean(q)) } else { None };
        let t = match self.clutter.clone() {
            None => m,
            Some(spec) => spec.beta * m + (1.0 - spec.beta) * q0.unwrap_or(0.0),
        };
        let a = match &self.policy {
            AdversaryPolicy::Exact => t,
            AdversaryPolicy::Rounding => round_to_grid(t, self.tau),
            AdversaryPolicy::WorstSign => {
                let class = q.label.split('#').next().unwrap_or("").to_string();
                let flip = self.sign_state.entry(class).or_insert(false);
                let s = if *flip { -1.0 } else { 1.0 };
                *flip = !*flip;
                (t + self.tau * s).clamp(t - self.tau, t + self.tau)
            }
        };
        debug_assert!((a - t).abs() <= self.tau + 1e-12, "adversary left the validity band");
        // Lift mixture answers back to the clean D when requested:
        // |(a − (1−β)E_Q0)/β − E_D| = |a − t|/β ≤ τ/β.
        let (tau_eff, true_eff, ans_eff) = match (&self.clutter, self.lift_clutter) {
            (Some(spec), true) => {
                let beta = spec.beta;
                (self.tau / beta, m, clutter_answer_lift(a, beta, q0.unwrap_or(0.0))?)
            }
            _ => (self.tau, t, a),
        };
        self.budget_used += 1;
        self.transcript.push(TranscriptEntry {
            index: self.budget_used - 1,
            label: q.label.clone(),
            tau: tau_eff,
            true_mean: true_eff,
            answer: ans_eff,
        });
        Ok(ans_eff)
    }

    /// Audits validity of the whole stored transcript.
    pub fn audit_validity(&self) -> bool {
        self.transcript
            .iter()
            .all(|e| (e.answer - e.true_mean).abs() <= e.tau + 1e-9)
    }

    /// JSON-lines transcript export; `reveal` additionally includes the
    /// ground-truth means.
    pub fn export_transcript<W: Write>(&self, mut w: W, reveal: bool) -> Result<(), OracleError> {
        #[derive(Serialize)]
        struct Public<'a> {
            index: u64,
            label: &'a str,
            tau: f64,
            answer: f64,
        }
        for e in &self.transcript {
            if reveal {
                writeln!(w, "{}", serde_json::to_string(e).expect("serialize"))?;
            } else {
                let p = Public { index: e.index, label: &e.label, tau: e.tau, answer: e.answer };
                writeln!(w, "{}", serde_json::to_string(&p).expect("serialize"))?;
            }
        }
        Ok(())
    }

    /// SHA-256 digest of the public transcript (labels + answers), used as a
    /// reproducibility fingerprint in estimate reports.
    pub fn transcript_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.transcript {
            hasher.update(e.label.as_bytes());
            hasher.update(e.tau.to_le_bytes());
            hasher.update(e.answer.to_le_bytes());
        }
        format!("{:x}", hasher.finalize())
    }
}

// Seed-derivation masks so the banks are decorrelated from caller seeds.
const BANK_SEED_MASK: u64 = 0x6a9c_0ba2_517e_11d1;
const CLUTTER_SEED_MASK: u64 = 0xc1a7_7e85_0000_beef;

/// Deterministic rounding to the grid L_i = min{−1 + (2i+1)τ, 1}: the
/// smallest grid value within τ of t.
pub fn round_to_grid(t: f64, tau: f64) -> f64 {
    let mut i = 0usize;
    loop {
        let l = (-1.0 + (2.0 * i as f64 + 1.0) * tau).min(1.0);
        if (l - t).abs() <= tau + 1e-15 {
            return l;
        }
        if l >= 1.0 {
            // Numerical guard: t slightly above the last grid point.
            return 1.0;
        }
        i += 1;
    }
}

/// Standalone exact expectation E_D[r] (no session, no adversary).
pub fn true_mean(model: &ManifoldModel, q: &Query) -> f64 {
    if model.d == 1 {
        let hint = q.support_hint.as_ref().map(|(c, h)| (c, *h));
        model.expect_d1(|x| (q.evaluator)(x).clamp(-1.0, 1.0), hint)
    } else {
        let bank = model.sample(0x0bac_5eed, 400_000);
        let mut sum = 0.0;
        for p in &bank.points {
            if let Some((c, h)) = &q.support_hint {
                if (p - c).norm() > *h {
                    continue;
                }
            }
            sum += (q.evaluator)(p).clamp(-1.0, 1.0);
        }
        sum / bank.len() as f64
    }
}

/// Lifts a mixture answer to a STAT(τ/β)-valid answer for the clean D:
/// (a − (1−β)·Q₀_mean)/β.
pub fn clutter_answer_lift(a: f64, beta: f64, q0_mean: f64) -> Result<f64, OracleError> {
    if beta <= 0.0 || beta > 1.0 {
        return Err(OracleError::Invalid(format!("beta = {beta} out of (0, 1]")));
    }
    Ok((a - (1.0 - beta) * q0_mean) / beta)
}
