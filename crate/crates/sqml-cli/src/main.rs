//! `sqml` — batch experiment runner for the SQ manifold-estimation library.
//!
//! Subcommands:
//!   sqml run <config.json> [--reveal]   execute an experiment sweep
//!   sqml report <dir>                   summarize a result directory
//!   sqml calibrate <config.json>        run the constants-calibration sweeps
//!
//! Exit codes: 0 ok, 1 configuration error, 2 runtime failure.
//! `SQML_THREADS` bounds the number of concurrent (config × seed) runs.
//!
//! Outputs (all deterministic given the config; wall times are isolated in
//! `timings.csv` so every other file is byte-reproducible):
//!   config_echo.json   verbatim copy of the input config (hash source)
//!   results.jsonl      one `ResultRecord` JSON object per line
//!   summary.csv        wide per-run table
//!   long.csv           plot-ready long format (one metric per row)
//!   timings.csv        wall-clock seconds per run (the only timestamped file)
//!   estimates/ transcripts/ lecam/ packing/ per-kind artifacts

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sqml::geom::{direction_packing, principal_angle, Subspace};
use sqml::lowerbound::{
    ambient_pack_log, lecam_pair, query_lower_bound, translation_packing, volume_pack_log,
};
use sqml::matrix::{
    estimate_mean_matrix, pauli_basis, rip_certificate, KashinFrame, MatrixEstimateParams,
    SamplingOperator,
};
use sqml::models::{DensitySpec, ManifoldModel};
use sqml::oracle::{AdversaryPolicy, ClutterSpec, OracleSession};
use sqml::propagation::{
    derive_config, estimate_bounding_ball, estimate_fixed_point, evaluate, EstimateReport,
    EstimatorKnobs,
};
use sqml::routines::{sq_ambient_binary_search, sq_projection, sq_seed, sq_tangent, RoutineParams};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// CLI surface and error/exit-code mapping
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "sqml", version, about = "SQ manifold-estimation experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment sweep described by a JSON config.
    Run {
        config: PathBuf,
        /// Include ground-truth means in exported transcripts.
        #[arg(long)]
        reveal: bool,
    },
    /// Summarize a directory produced by `run`.
    Report { dir: PathBuf },
    /// Run the constants-calibration sweeps (ignores the config `kind`).
    Calibrate { config: PathBuf },
}

#[derive(Debug)]
enum AppError {
    /// Bad config / violated hypothesis detected before work starts → exit 1.
    Config(String),
    /// Failure during execution or I/O → exit 2.
    Runtime(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

fn io_err(e: std::io::Error) -> AppError {
    AppError::Runtime(format!("i/o: {e}"))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    let result = match cli.cmd {
        Cmd::Run { config, reveal } => run_cmd(&config, reveal, None),
        Cmd::Calibrate { config } => run_cmd(&config, false, Some("calibrate")),
        Cmd::Report { dir } => report_cmd(&dir),
    };
    match result {
        Ok(()) => {}
        Err(e @ AppError::Config(_)) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
        Err(e @ AppError::Runtime(_)) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    }
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    /// estimate-fixed | estimate-ball | routine-bench | matrix-recovery |
    /// lecam | packing-bound | calibrate
    kind: String,
    /// Output directory (created if absent).
    output: String,
    #[serde(default)]
    model: Option<ModelSpec>,
    /// Oracle tolerance grid.
    #[serde(default)]
    tau: Vec<f64>,
    /// Target precision grid (estimate kinds; also packing-bound radii).
    #[serde(default)]
    eps: Vec<f64>,
    /// exact | rounding | worst-sign
    #[serde(default = "default_adversary")]
    adversary: String,
    #[serde(default)]
    seeds: Vec<u64>,
    /// Bounding-ball radius (estimate-ball).
    #[serde(default)]
    r_ball: Option<f64>,
    #[serde(default)]
    clutter: Option<ClutterCfg>,
    #[serde(default)]
    matrix: Option<MatrixCfg>,
    #[serde(default)]
    lecam: Option<LecamCfg>,
    #[serde(default)]
    packing: Option<PackingCfg>,
    #[serde(default)]
    knobs: Option<KnobsCfg>,
}

fn default_adversary() -> String {
    "exact".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    /// "sphere" (d-sphere in the first d+1 coordinates) or "circle" (d = 1).
    shape: String,
    d: Option<usize>,
    n: usize,
    radius: f64,
    /// Defaults to radius·e1, which places the model through the origin.
    center: Option<Vec<f64>>,
    density: Option<DensityCfg>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityCfg {
    /// "uniform" | "linear-tilt"
    kind: String,
    a: Option<f64>,
    u: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClutterCfg {
    beta: f64,
    radius: f64,
    center: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixCfg {
    #[serde(default = "default_m_dim")]
    m_dim: usize,
    #[serde(default = "default_rank")]
    rank: usize,
    nu: Option<f64>,
    /// Measurement-ball radius override (defaults to the τ-derived ξ).
    xi: Option<f64>,
}

fn default_m_dim() -> usize {
    16
}
fn default_rank() -> usize {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LecamCfg {
    rch_min: f64,
    resolution: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PackingCfg {
    n: usize,
    r_big: f64,
    /// Translation-packing radius.
    r: f64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_cap")]
    cap: usize,
    d: Option<usize>,
    f_min: Option<f64>,
    rch: Option<f64>,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_cap() -> usize {
    256
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnobsCfg {
    cbar_d: Option<f64>,
    bold_c: Option<f64>,
    max_loops: Option<usize>,
}

fn knobs_from(cfg: &ExperimentConfig) -> EstimatorKnobs {
    let mut k = EstimatorKnobs::default();
    if let Some(kc) = &cfg.knobs {
        if let Some(v) = kc.cbar_d {
            k.cbar_d = v;
        }
        if let Some(v) = kc.bold_c {
            k.bold_c = v;
        }
        if let Some(v) = kc.max_loops {
            k.max_loops = v;
        }
    }
    k
}

fn parse_adversary(s: &str) -> Result<AdversaryPolicy, AppError> {
    match s {
        "exact" => Ok(AdversaryPolicy::Exact),
        "rounding" => Ok(AdversaryPolicy::Rounding),
        "worst-sign" => Ok(AdversaryPolicy::WorstSign),
        other => Err(AppError::Config(format!(
            "unknown adversary '{other}' (expected exact | rounding | worst-sign)"
        ))),
    }
}

fn build_model(spec: &ModelSpec) -> Result<Arc<ManifoldModel>, AppError> {
    let d = match spec.shape.as_str() {
        "circle" => 1,
        "sphere" => spec
            .d
            .ok_or_else(|| AppError::Config("sphere model requires 'd'".into()))?,
        other => {
            return Err(AppError::Config(format!(
                "unknown shape '{other}' (expected circle | sphere)"
            )))
        }
    };
    let n = spec.n;
    let center = match &spec.center {
        Some(c) => {
            if c.len() != n {
                return Err(AppError::Config(format!(
                    "center has {} entries, model dimension is {n}",
                    c.len()
                )));
            }
            DVector::from_vec(c.clone())
        }
        None => {
            let mut c = DVector::zeros(n);
            c[0] = spec.radius;
            c
        }
    };
    let density = match &spec.density {
        None => DensitySpec::Uniform,
        Some(dc) => match dc.kind.as_str() {
            "uniform" => DensitySpec::Uniform,
            "linear-tilt" => {
                let a = dc
                    .a
                    .ok_or_else(|| AppError::Config("linear-tilt density requires 'a'".into()))?;
                let u = dc
                    .u
                    .as_ref()
                    .ok_or_else(|| AppError::Config("linear-tilt density requires 'u'".into()))?;
                DensitySpec::LinearTilt { a, u: DVector::from_vec(u.clone()) }
            }
            other => {
                return Err(AppError::Config(format!(
                    "unknown density '{other}' (expected uniform | linear-tilt)"
                )))
            }
        },
    };
    ManifoldModel::make_sphere(d, n, spec.radius, center, density)
        .map(Arc::new)
        .map_err(|e| AppError::Config(format!("model hypothesis violated: {e}")))
}

// ---------------------------------------------------------------------------
// Result records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResultRecord {
    schema_version: u32,
    code_version: String,
    kind: String,
    /// SHA-256 of the verbatim config file bytes; ties every record to the
    /// echoed config.
    config_sha256: String,
    seed: u64,
    tau: f64,
    eps: Option<f64>,
    metrics: BTreeMap<String, f64>,
}

impl ResultRecord {
    fn new(kind: &str, hash: &str, seed: u64, tau: f64, eps: Option<f64>) -> Self {
        ResultRecord {
            schema_version: SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            config_sha256: hash.to_string(),
            seed,
            tau,
            eps,
            metrics: BTreeMap::new(),
        }
    }

    fn put(&mut self, key: &str, value: f64) -> Result<(), AppError> {
        if !value.is_finite() {
            return Err(AppError::Runtime(format!(
                "non-finite metric '{key}' = {value} (kind {}, seed {}, tau {})",
                self.kind, self.seed, self.tau
            )));
        }
        self.metrics.insert(key.to_string(), value);
        Ok(())
    }
}

/// One run's outputs: the record plus any artifact files (path relative to
/// the output directory, bytes).
struct JobOutput {
    record: ResultRecord,
    files: Vec<(String, Vec<u8>)>,
    wall_s: f64,
}

// ---------------------------------------------------------------------------
// Parallel job execution (deterministic collection order)
// ---------------------------------------------------------------------------

fn thread_count() -> usize {
    std::env::var("SQML_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(4)
        .min(64)
}

fn run_jobs<J, F>(jobs: &[J], f: F) -> Result<Vec<JobOutput>, AppError>
where
    J: Sync,
    F: Fn(usize, &J) -> Result<JobOutput, AppError> + Sync,
{
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let slots: Vec<Mutex<Option<Result<JobOutput, AppError>>>> =
        (0..jobs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = thread_count().min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let t0 = Instant::now();
                let r = f(i, &jobs[i]).map(|mut out| {
                    out.wall_s = t0.elapsed().as_secs_f64();
                    out
                });
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("job executed"))
        .collect()
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn run_cmd(config_path: &Path, reveal: bool, force_kind: Option<&str>) -> Result<(), AppError> {
    let raw = std::fs::read(config_path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_slice(&raw)
        .map_err(|e| AppError::Config(format!("config schema violation: {e}")))?;
    if let Some(k) = force_kind {
        cfg.kind = k.to_string();
    }
    let hash = hex(&Sha256::digest(&raw));
    validate(&cfg)?;

    let out_dir = PathBuf::from(&cfg.output);
    std::fs::create_dir_all(&out_dir).map_err(io_err)?;
    std::fs::write(out_dir.join("config_echo.json"), &raw).map_err(io_err)?;

    let outputs = match cfg.kind.as_str() {
        "estimate-fixed" | "estimate-ball" => run_estimate(&cfg, &hash, reveal)?,
        "routine-bench" => run_routine_bench(&cfg, &hash, reveal)?,
        "matrix-recovery" => run_matrix(&cfg, &hash)?,
        "lecam" => run_lecam(&cfg, &hash)?,
        "packing-bound" => run_packing(&cfg, &hash)?,
        "calibrate" => run_calibrate(&cfg, &hash)?,
        other => return Err(AppError::Config(format!("unknown kind '{other}'"))),
    };

    write_outputs(&out_dir, &cfg.kind, &hash, &outputs)?;
    println!(
        "wrote {} records for kind '{}' to {}",
        outputs.len(),
        cfg.kind,
        out_dir.display()
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pre-flight validation: schema-level checks plus the named model/routine
/// hypotheses, so infeasible sweeps are rejected before any work runs.
fn validate(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let kinds = [
        "estimate-fixed",
        "estimate-ball",
        "routine-bench",
        "matrix-recovery",
        "lecam",
        "packing-bound",
        "calibrate",
    ];
    if !kinds.contains(&cfg.kind.as_str()) {
        return Err(AppError::Config(format!("unknown kind '{}'", cfg.kind)));
    }
    parse_adversary(&cfg.adversary)?;
    for &t in &cfg.tau {
        if !(t > 0.0 && t <= 1.0) {
            return Err(AppError::Config(format!("tau = {t} outside (0, 1]")));
        }
    }
    for &e in &cfg.eps {
        if !(e > 0.0) {
            return Err(AppError::Config(format!("eps = {e} must be positive")));
        }
    }
    let needs_model = matches!(
        cfg.kind.as_str(),
        "estimate-fixed" | "estimate-ball" | "routine-bench" | "matrix-recovery" | "lecam"
    );
    let model = match (&cfg.model, needs_model) {
        (Some(m), _) => Some(build_model(m)?),
        (None, true) => {
            return Err(AppError::Config(format!("kind '{}' requires a model", cfg.kind)))
        }
        (None, false) => None,
    };
    match cfg.kind.as_str() {
        "estimate-fixed" | "estimate-ball" => {
            let m = model.as_ref().unwrap();
            if cfg.tau.is_empty() || cfg.eps.is_empty() || cfg.seeds.is_empty() {
                return Err(AppError::Config(
                    "estimate kinds require non-empty tau, eps, and seeds grids".into(),
                ));
            }
            if cfg.kind == "estimate-fixed" && !m.fixed_point {
                return Err(AppError::Config(
                    "hypothesis violated: fixed-point prior requires 0 ∈ M \
                     (center the model so it passes through the origin)"
                        .into(),
                ));
            }
            if cfg.kind == "estimate-ball" {
                let r = cfg
                    .r_ball
                    .ok_or_else(|| AppError::Config("estimate-ball requires r_ball".into()))?;
                if r < m.reach / 2.0f64.sqrt() {
                    return Err(AppError::Config(format!(
                        "hypothesis violated: bounding-ball feasibility needs R ≥ rch/√2 \
                         (R = {r}, rch/√2 = {})",
                        m.reach / 2.0f64.sqrt()
                    )));
                }
            }
            if let Some(cl) = &cfg.clutter {
                if !(cl.beta > 0.0 && cl.beta <= 1.0) {
                    return Err(AppError::Config(format!(
                        "clutter beta = {} outside (0, 1]",
                        cl.beta
                    )));
                }
            }
            let beta = cfg.clutter.as_ref().map(|c| c.beta).unwrap_or(1.0);
            for &t in &cfg.tau {
                let params = RoutineParams::from_model(m, t / beta);
                params.check_validity().map_err(|e| {
                    AppError::Config(format!("hypothesis violated at tau = {t}: {e}"))
                })?;
            }
        }
        "routine-bench" => {
            if cfg.tau.is_empty() || cfg.seeds.is_empty() {
                return Err(AppError::Config(
                    "routine-bench requires non-empty tau and seeds grids".into(),
                ));
            }
            let m = model.as_ref().unwrap();
            for &t in &cfg.tau {
                RoutineParams::from_model(m, t).check_validity().map_err(|e| {
                    AppError::Config(format!("hypothesis violated at tau = {t}: {e}"))
                })?;
            }
        }
        "matrix-recovery" => {
            if cfg.tau.is_empty() || cfg.seeds.is_empty() {
                return Err(AppError::Config(
                    "matrix-recovery requires non-empty tau and seeds grids".into(),
                ));
            }
            let mc = cfg
                .matrix
                .as_ref()
                .ok_or_else(|| AppError::Config("matrix-recovery requires 'matrix'".into()))?;
            if mc.m_dim < 2 || mc.rank == 0 || mc.rank > mc.m_dim {
                return Err(AppError::Config(format!(
                    "matrix block infeasible: m_dim = {}, rank = {}",
                    mc.m_dim, mc.rank
                )));
            }
        }
        "lecam" => {
            let m = model.as_ref().unwrap();
            if m.d != 1 {
                return Err(AppError::Config(
                    "lecam kind supports d = 1 circle bases only".into(),
                ));
            }
            let lc = cfg
                .lecam
                .as_ref()
                .ok_or_else(|| AppError::Config("lecam kind requires 'lecam'".into()))?;
            if !(lc.rch_min > 0.0 && lc.resolution > 0.0) {
                return Err(AppError::Config("lecam rch_min/resolution must be positive".into()));
            }
            if cfg.tau.is_empty() {
                return Err(AppError::Config("lecam requires a non-empty tau grid".into()));
            }
        }
        "packing-bound" => {
            let pc = cfg
                .packing
                .as_ref()
                .ok_or_else(|| AppError::Config("packing-bound requires 'packing'".into()))?;
            if !(pc.r > 0.0 && pc.r <= pc.r_big / 2.0) {
                return Err(AppError::Config(format!(
                    "hypothesis violated: packing radius r = {} outside (0, R/2 = {}]",
                    pc.r,
                    pc.r_big / 2.0
                )));
            }
            if !(0.0..1.0).contains(&pc.alpha) {
                return Err(AppError::Config(format!("alpha = {} outside [0, 1)", pc.alpha)));
            }
            if cfg.tau.is_empty() {
                return Err(AppError::Config("packing-bound requires a non-empty tau grid".into()));
            }
        }
        "calibrate" => {}
        _ => unreachable!(),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate-fixed / estimate-ball
// ---------------------------------------------------------------------------

struct EstimateJob {
    tau: f64,
    eps: f64,
    seed: u64,
}

fn run_estimate(
    cfg: &ExperimentConfig,
    hash: &str,
    reveal: bool,
) -> Result<Vec<JobOutput>, AppError> {
    let model = build_model(cfg.model.as_ref().unwrap())?;
    let policy = parse_adversary(&cfg.adversary)?;
    let knobs = knobs_from(cfg);
    let ball = cfg.kind == "estimate-ball";
    let mut jobs = Vec::new();
    for &tau in &cfg.tau {
        for &eps in &cfg.eps {
            for &seed in &cfg.seeds {
                jobs.push(EstimateJob { tau, eps, seed });
            }
        }
    }
    run_jobs(&jobs, |idx, job| {
        let mut session = OracleSession::new(model.clone(), job.tau, policy.clone(), job.seed);
        let beta = cfg.clutter.as_ref().map(|c| c.beta).unwrap_or(1.0);
        if let Some(cl) = &cfg.clutter {
            let center = match &cl.center {
                Some(c) => DVector::from_vec(c.clone()),
                None => DVector::zeros(model.n),
            };
            session = session
                .with_clutter(ClutterSpec { beta: cl.beta, center, radius: cl.radius })
                .with_clutter_lift();
        }
        // With clutter active every lifted answer is STAT(τ/β)-valid, so the
        // routines run at the effective tolerance τ/β.
        let mut params = RoutineParams::from_model(&model, job.tau / beta);
        params.seed = job.seed.wrapping_mul(0x9e37_79b9).wrapping_add(0x50_11d1);
        let (est, budget) = if ball {
            estimate_bounding_ball(&mut session, &params, job.eps, cfg.r_ball.unwrap(), &knobs)
        } else {
            estimate_fixed_point(&mut session, &params, job.eps, &knobs)
        }
        .map_err(|e| AppError::Runtime(format!("estimation failed (seed {}): {e}", job.seed)))?;
        let metrics = evaluate(&est, &model, job.eps / 10.0, Some(job.eps));
        let report = EstimateReport::build(&est, Some(metrics.clone()), &budget, &session);

        let mut rec = ResultRecord::new(&cfg.kind, hash, job.seed, job.tau, Some(job.eps));
        rec.put("queries_used", est.queries_used as f64)?;
        rec.put("seed_queries", budget.seed_queries as f64)?;
        rec.put("propagation_queries", budget.propagation_queries as f64)?;
        rec.put("loops_used", est.loops_used as f64)?;
        rec.put("points", est.o.len() as f64)?;
        rec.put("hausdorff", metrics.hausdorff_to_m)?;
        rec.put("hausdorff_over_eps", metrics.hausdorff_to_m / job.eps)?;
        rec.put("max_dist_to_m", metrics.max_dist_to_m)?;
        rec.put("covering_radius", metrics.covering_radius)?;
        rec.put("min_separation", metrics.min_separation)?;
        rec.put("max_tangent_angle", metrics.max_tangent_angle)?;
        let cf = closed_form_budget(&params, job.eps, &knobs, &model, ball, cfg.r_ball);
        rec.put("closed_form_budget", cf)?;
        rec.put("budget_ratio", est.queries_used as f64 / cf)?;
        rec.put("transcript_count", session.transcript.len() as f64)?;

        let mut files = Vec::new();
        let wrapper = serde_json::json!({
            "config_sha256": hash,
            "seed": job.seed,
            "tau": job.tau,
            "eps": job.eps,
            "report": report,
        });
        files.push((
            format!("estimates/est_{idx:04}.json"),
            serde_json::to_vec_pretty(&wrapper).map_err(|e| AppError::Runtime(e.to_string()))?,
        ));
        let mut tr = Vec::new();
        session
            .export_transcript(&mut tr, reveal)
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        files.push((format!("transcripts/transcript_{idx:04}.jsonl"), tr));
        Ok(JobOutput { record: rec, files, wall_s: 0.0 })
    })
}

/// Closed-form query budget for an end-to-end run: the propagation loop
/// bound times the per-loop query cost, plus (ball prior) the seed and
/// polishing budgets.
fn closed_form_budget(
    params: &RoutineParams,
    eps: f64,
    knobs: &EstimatorKnobs,
    model: &ManifoldModel,
    ball: bool,
    r_ball: Option<f64>,
) -> f64 {
    let config = derive_config(params, eps, knobs);
    let n = params.n;
    let k = n.next_power_of_two().max(2);
    let q = (6 * params.d * k).min(k * k);
    let axes: Vec<usize> = (0..params.d).collect();
    let dirs = direction_packing(&Subspace::axis_aligned(n, &axes), config.sin_alpha).len();
    let per_loop = (4 * q + dirs * (2 * n + 1)) as f64;
    let loops = config.loop_bound(model.volume, params.d);
    let mut total = loops * per_loop;
    if ball {
        let r = r_ball.unwrap_or(model.bounding_radius);
        let seed_eta = eps / 2.0;
        total += 6.0 * n as f64 * (6.0 * r / seed_eta).log2().max(1.0);
        let polish = ((eps / 2.0) / config.eta).log2().ceil().max(0.0);
        total += polish * (2 * n + 1) as f64;
    }
    total
}

// ---------------------------------------------------------------------------
// routine-bench
// ---------------------------------------------------------------------------

fn run_routine_bench(
    cfg: &ExperimentConfig,
    hash: &str,
    reveal: bool,
) -> Result<Vec<JobOutput>, AppError> {
    let model = build_model(cfg.model.as_ref().unwrap())?;
    let policy = parse_adversary(&cfg.adversary)?;
    let mut jobs = Vec::new();
    for &tau in &cfg.tau {
        for &seed in &cfg.seeds {
            jobs.push((tau, seed));
        }
    }
    run_jobs(&jobs, |idx, &(tau, seed)| {
        let mut session = OracleSession::new(model.clone(), tau, policy.clone(), seed);
        let mut params = RoutineParams::from_model(&model, tau);
        params.seed = seed.wrapping_mul(0x9e37_79b9).wrapping_add(0x50_11d1);
        let rch = params.rch_min;
        let n = params.n;
        let p = model.sample(seed, 1).points[0].clone();
        let mut rec = ResultRecord::new(&cfg.kind, hash, seed, tau, None);

        // Projection: start from a point within Λ of M.
        let lambda = rch / 8.0;
        let x0 = offset_point(&model, &p, 0.9 * lambda);
        let before = model.distance(&x0);
        let (px, ptrace) = sq_projection(&mut session, &params, &x0, lambda)
            .map_err(|e| AppError::Runtime(format!("sq_projection: {e}")))?;
        rec.put("proj_queries", ptrace.queries_used as f64)?;
        rec.put("proj_budget_exact", (2 * n + 1) as f64)?;
        rec.put("proj_dist_before", before)?;
        rec.put("proj_dist_after", model.distance(&px))?;

        // Tangent at an on-manifold point.
        let eta = rch / 64.0;
        let te = sq_tangent(&mut session, &params, &p, eta)
            .map_err(|e| AppError::Runtime(format!("sq_tangent: {e}")))?;
        let truth = model
            .tangent(&p)
            .map_err(|e| AppError::Runtime(format!("true tangent: {e}")))?;
        let angle = principal_angle(&te.subspace, &truth)
            .map_err(|e| AppError::Runtime(format!("principal angle: {e}")))?;
        rec.put("tan_queries", te.queries_used as f64)?;
        rec.put("tan_bandwidth", te.bandwidth)?;
        rec.put("tan_angle", angle)?;

        // Localization: raw binary search, then the full seed routine.
        let r_ball = model.bounding_radius;
        let lambda0 = params.seed_lambda0(eta);
        let (xs, strace) =
            sq_ambient_binary_search(&mut session, &params, r_ball, lambda0, Some(&model))
                .map_err(|e| AppError::Runtime(format!("sq_ambient_binary_search: {e}")))?;
        rec.put("search_queries", strace.queries_used as f64)?;
        rec.put(
            "search_budget_bound",
            3.0 * n as f64 * (6.0 * r_ball / lambda0).log2().max(1.0),
        )?;
        rec.put("search_dist", model.distance(&xs))?;
        let (xseed, seed_trace) = sq_seed(&mut session, &params, r_ball, eta, Some(&model))
            .map_err(|e| AppError::Runtime(format!("sq_seed: {e}")))?;
        rec.put("seed_queries", seed_trace.queries_used as f64)?;
        rec.put(
            "seed_budget_bound",
            6.0 * n as f64 * (6.0 * r_ball / eta).log2().max(1.0),
        )?;
        rec.put("seed_dist", model.distance(&xseed))?;
        rec.put("transcript_count", session.transcript.len() as f64)?;

        let mut files = Vec::new();
        let mut tr = Vec::new();
        session
            .export_transcript(&mut tr, reveal)
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        files.push((format!("transcripts/transcript_{idx:04}.jsonl"), tr));
        Ok(JobOutput { record: rec, files, wall_s: 0.0 })
    })
}

/// Returns a point at distance ≈ `dist` from M near the model point `p`,
/// preferring a pure normal direction.
fn offset_point(model: &ManifoldModel, p: &DVector<f64>, dist: f64) -> DVector<f64> {
    let n = model.n;
    if n > model.d + 1 {
        // Coordinates d+1..n are normal to the embedding plane of the
        // sphere models.
        let mut x = p.clone();
        x[n - 1] += dist;
        return x;
    }
    // Codimension-1 sphere: move radially outward from the center.
    if let sqml::models::Shape::Sphere { center, .. } = &model.shape {
        let u = (p - center).normalize();
        return p + u * dist;
    }
    p.clone()
}

// ---------------------------------------------------------------------------
// matrix-recovery
// ---------------------------------------------------------------------------

fn run_matrix(cfg: &ExperimentConfig, hash: &str) -> Result<Vec<JobOutput>, AppError> {
    let model = build_model(cfg.model.as_ref().unwrap())?;
    let policy = parse_adversary(&cfg.adversary)?;
    let mc = cfg.matrix.as_ref().unwrap();
    let mut jobs = Vec::new();
    for &tau in &cfg.tau {
        for &seed in &cfg.seeds {
            jobs.push((tau, seed));
        }
    }
    run_jobs(&jobs, |_idx, &(tau, seed)| {
        let mut session = OracleSession::new(model.clone(), tau, policy.clone(), seed);
        let target = random_low_rank(mc.m_dim, mc.rank, seed);
        let mut params = MatrixEstimateParams::new(model.d.max(2));
        params.op_seed = seed;
        params.symmetric = true;
        params.nu = mc.nu.unwrap_or((mc.rank as f64).sqrt());
        params.xi_override = mc.xi;
        let t = target.clone();
        let est = estimate_mean_matrix(
            &mut session,
            &params,
            mc.m_dim,
            &move |_x| t.clone(),
            None,
            "matrix-recovery",
        )
        .map_err(|e| AppError::Runtime(format!("matrix recovery: {e}")))?;
        let mut rec = ResultRecord::new(&cfg.kind, hash, seed, tau, None);
        rec.put("fro_error", (&est.matrix - &target).norm())?;
        rec.put("xi", est.xi)?;
        rec.put("q", est.q as f64)?;
        rec.put("queries_used", est.queries_used as f64)?;
        rec.put("budget_exact", 4.0 * est.q as f64)?;
        rec.put("iterations", est.recovery.iterations as f64)?;
        rec.put("residual", est.recovery.residual)?;
        rec.put("duality_gap", est.recovery.duality_gap)?;
        rec.put("converged", if est.recovery.converged { 1.0 } else { 0.0 })?;
        Ok(JobOutput { record: rec, files: Vec::new(), wall_s: 0.0 })
    })
}

/// Deterministic random rank-r symmetric m×m target with unit Frobenius norm.
fn random_low_rank(m: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491).wrapping_add(11));
    let mut x = DMatrix::<f64>::zeros(m, m);
    for j in 0..rank {
        let mut v = DVector::from_fn(m, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let nv = v.norm();
        if nv > 0.0 {
            v /= nv;
        }
        let w = 1.0 / (j as f64 + 1.0);
        x += &v * v.transpose() * w;
    }
    let f = x.norm();
    if f > 0.0 {
        x /= f;
    }
    x
}

// ---------------------------------------------------------------------------
// lecam
// ---------------------------------------------------------------------------

fn run_lecam(cfg: &ExperimentConfig, hash: &str) -> Result<Vec<JobOutput>, AppError> {
    let base = build_model(cfg.model.as_ref().unwrap())?;
    let lc = cfg.lecam.as_ref().unwrap();
    let jobs: Vec<f64> = cfg.tau.clone();
    run_jobs(&jobs, |idx, &tau| {
        let pair = lecam_pair(&base, tau, lc.rch_min, lc.resolution)
            .map_err(|e| AppError::Runtime(format!("lecam pair at tau {tau}: {e}")))?;
        let man = pair.manifest();
        let mut rec = ResultRecord::new(&cfg.kind, hash, 0, tau, None);
        rec.put("delta", man.delta)?;
        rec.put("eta_b", man.eta_b)?;
        rec.put("clamped", if man.clamped { 1.0 } else { 0.0 })?;
        rec.put("predicted_tv", man.predicted_tv)?;
        rec.put("tv_envelope", man.tv_envelope)?;
        rec.put("measured_tv", man.measured_tv)?;
        rec.put("measured_hausdorff", man.measured_hausdorff)?;
        rec.put("predicted_separation", man.predicted_separation)?;
        let mut files = Vec::new();
        let wrapper = serde_json::json!({ "config_sha256": hash, "manifest": man });
        files.push((
            format!("lecam/pair_{idx:02}.json"),
            serde_json::to_vec_pretty(&wrapper).map_err(|e| AppError::Runtime(e.to_string()))?,
        ));
        for (tag, m) in [("m0", &pair.d0), ("m1", &pair.d1)] {
            let rc = m.reference_cloud(lc.resolution);
            let mut buf = Vec::new();
            rc.write_csv(&mut buf).map_err(|e| AppError::Runtime(e.to_string()))?;
            files.push((format!("lecam/{tag}_{idx:02}.csv"), buf));
        }
        Ok(JobOutput { record: rec, files, wall_s: 0.0 })
    })
}

// ---------------------------------------------------------------------------
// packing-bound
// ---------------------------------------------------------------------------

fn run_packing(cfg: &ExperimentConfig, hash: &str) -> Result<Vec<JobOutput>, AppError> {
    let pc = cfg.packing.as_ref().unwrap();
    let mut outputs = Vec::new();
    // Query-count lower bounds over the (tau, eps) grid.
    for &tau in &cfg.tau {
        for &eps in &cfg.eps {
            let mut rec = ResultRecord::new(&cfg.kind, hash, 0, tau, Some(eps));
            let apl = ambient_pack_log(pc.n, pc.r_big, eps);
            rec.put("ambient_pack_log", apl)?;
            rec.put("ambient_query_lb", query_lower_bound(apl, pc.alpha, tau))?;
            if let (Some(d), Some(f_min), Some(rch)) = (pc.d, pc.f_min, pc.rch) {
                let vpl = volume_pack_log(pc.n, d, f_min, rch, eps);
                rec.put("volume_pack_log", vpl)?;
                rec.put("volume_query_lb", query_lower_bound(vpl, pc.alpha, tau))?;
            }
            outputs.push(JobOutput { record: rec, files: Vec::new(), wall_s: 0.0 });
        }
    }
    // One explicit translation packing.
    let tp = translation_packing(pc.n, pc.r_big, pc.r, pc.cap)
        .map_err(|e| AppError::Config(format!("translation packing: {e}")))?;
    let mut rec = ResultRecord::new(&cfg.kind, hash, 0, cfg.tau[0], None);
    rec.put("packing_centers", tp.centers.len() as f64)?;
    rec.put("packing_guaranteed_log", tp.guaranteed_log)?;
    rec.put("packing_r", tp.r)?;
    rec.put("packing_r_big", tp.r_big)?;
    let mut buf = Vec::new();
    for c in &tp.centers {
        let row: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
        writeln!(buf, "{}", row.join(",")).map_err(io_err)?;
    }
    outputs.push(JobOutput {
        record: rec,
        files: vec![("packing/centers.csv".to_string(), buf)],
        wall_s: 0.0,
    });
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

fn run_calibrate(cfg: &ExperimentConfig, hash: &str) -> Result<Vec<JobOutput>, AppError> {
    let seed = cfg.seeds.first().copied().unwrap_or(7);
    let tau = cfg.tau.first().copied().unwrap_or(1e-7);
    let mut constants = BTreeMap::<String, f64>::new();

    // Kashin-frame decomposition constants.
    for dim in [8usize, 16, 32, 64] {
        let kf = KashinFrame::new(dim, seed);
        constants.insert(format!("c_frame_dim{dim}"), kf.c_frame);
    }

    // RIP certificate for the default Pauli sampling at k = 16, q = 6·2·16.
    let frame = Arc::new(pauli_basis(4).map_err(|e| AppError::Runtime(e.to_string()))?);
    let op = SamplingOperator::sample(frame, 6 * 2 * 16, seed);
    constants.insert("rip_certificate_k16_q192".into(), rip_certificate(&op, 2, 100, seed));

    // Routine constants on the unit circle in R^5 with an exact oracle.
    let mut c = DVector::zeros(5);
    c[0] = 1.0;
    let model = Arc::new(
        ManifoldModel::make_sphere(1, 5, 1.0, c, DensitySpec::Uniform)
            .map_err(|e| AppError::Runtime(e.to_string()))?,
    );
    let params = RoutineParams::from_model(&model, tau);
    let mut session = OracleSession::new(model.clone(), tau, AdversaryPolicy::Exact, seed);
    let p = model.sample(seed, 1).points[0].clone();

    // Projection contraction factor at Λ = rch/8.
    let lambda = model.reach / 8.0;
    let x0 = offset_point(&model, &p, 0.9 * lambda);
    let before = model.distance(&x0);
    let (px, _) = sq_projection(&mut session, &params, &x0, lambda)
        .map_err(|e| AppError::Runtime(format!("sq_projection: {e}")))?;
    constants.insert("c1_projection_contraction".into(), model.distance(&px) / before);

    // Tangent constant: fit angle = C·√(h/rch) over a bandwidth grid by
    // overriding the bandwidth through the η knob (h = c_tan·rch·√(η/rch)).
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..5 {
        let eta = model.reach / (128.0 / (1 << i) as f64).max(8.0);
        let te = sq_tangent(&mut session, &params, &p, eta)
            .map_err(|e| AppError::Runtime(format!("sq_tangent: {e}")))?;
        let truth = model.tangent(&p).map_err(|e| AppError::Runtime(e.to_string()))?;
        let angle = principal_angle(&te.subspace, &truth)
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        let x = (te.bandwidth / model.reach).sqrt();
        num += angle * x;
        den += x * x;
    }
    constants.insert("c_tangent_sqrt_h".into(), num / den.max(1e-300));

    let mut rec = ResultRecord::new("calibrate", hash, seed, tau, None);
    for (k, v) in &constants {
        rec.put(k, *v)?;
    }
    let ledger = serde_json::json!({ "config_sha256": hash, "constants": constants });
    let files = vec![(
        "constants.json".to_string(),
        serde_json::to_vec_pretty(&ledger).map_err(|e| AppError::Runtime(e.to_string()))?,
    )];
    Ok(vec![JobOutput { record: rec, files, wall_s: 0.0 }])
}

// ---------------------------------------------------------------------------
// Output writing
// ---------------------------------------------------------------------------

fn write_outputs(
    out_dir: &Path,
    kind: &str,
    hash: &str,
    outputs: &[JobOutput],
) -> Result<(), AppError> {
    // results.jsonl
    let mut jsonl = Vec::new();
    for out in outputs {
        serde_json::to_writer(&mut jsonl, &out.record)
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        jsonl.push(b'\n');
    }
    std::fs::write(out_dir.join("results.jsonl"), jsonl).map_err(io_err)?;

    // summary.csv: wide table over the union of metric keys.
    let keys: BTreeSet<&str> = outputs
        .iter()
        .flat_map(|o| o.record.metrics.keys().map(|k| k.as_str()))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["kind", "config_sha256", "seed", "tau", "eps"];
    header.extend(keys.iter().copied());
    w.write_record(&header).map_err(|e| AppError::Runtime(e.to_string()))?;
    for out in outputs {
        let r = &out.record;
        let mut row = vec![
            r.kind.clone(),
            r.config_sha256.clone(),
            r.seed.to_string(),
            format!("{}", r.tau),
            r.eps.map(|e| format!("{e}")).unwrap_or_default(),
        ];
        for k in &keys {
            row.push(r.metrics.get(*k).map(|v| format!("{v}")).unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(out_dir.join("summary.csv"), bytes).map_err(io_err)?;

    // long.csv: one metric per row, plot-ready.
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "config_sha256", "seed", "tau", "eps", "metric", "value"])
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    for out in outputs {
        let r = &out.record;
        for (k, v) in &r.metrics {
            w.write_record([
                r.kind.as_str(),
                r.config_sha256.as_str(),
                &r.seed.to_string(),
                &format!("{}", r.tau),
                &r.eps.map(|e| format!("{e}")).unwrap_or_default(),
                k,
                &format!("{v}"),
            ])
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(out_dir.join("long.csv"), bytes).map_err(io_err)?;

    // timings.csv: the only non-reproducible file (wall clock), isolated here.
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "kind", "seed", "tau", "eps", "wall_s"])
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    for (i, out) in outputs.iter().enumerate() {
        let r = &out.record;
        w.write_record([
            &i.to_string(),
            kind,
            &r.seed.to_string(),
            &format!("{}", r.tau),
            &r.eps.map(|e| format!("{e}")).unwrap_or_default(),
            &format!("{:.6}", out.wall_s),
        ])
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(out_dir.join("timings.csv"), bytes).map_err(io_err)?;

    // Per-job artifact files.
    for out in outputs {
        for (rel, data) in &out.files {
            let path = out_dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
            std::fs::write(path, data).map_err(io_err)?;
        }
    }
    let _ = hash; // embedded per record; kept in the signature for clarity
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn report_cmd(dir: &Path) -> Result<(), AppError> {
    let path = dir.join("results.jsonl");
    let file = std::fs::File::open(&path)
        .map_err(|e| AppError::Config(format!("cannot open {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultRecord = serde_json::from_str(&line).map_err(|e| {
            AppError::Config(format!("results.jsonl line {}: {e}", lineno + 1))
        })?;
        records.push(rec);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "tau", "statistic", "value", "stderr"])
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    if records.is_empty() {
        println!("EMPTY: no result records in {}", path.display());
        let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
        std::fs::write(dir.join("report.csv"), bytes).map_err(io_err)?;
        return Ok(());
    }

    let kind = records[0].kind.clone();
    println!("kind: {kind}  records: {}", records.len());
    let mut taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let mut emit = |tau: f64, stat: &str, value: f64, stderr: Option<f64>| -> Result<(), AppError> {
        println!(
            "  tau={tau:<12} {stat:<28} {value:>14.6e}{}",
            stderr.map(|s| format!("  ± {s:.3e}")).unwrap_or_default()
        );
        w.write_record([
            kind.as_str(),
            &format!("{tau}"),
            stat,
            &format!("{value}"),
            &stderr.map(|s| format!("{s}")).unwrap_or_default(),
        ])
        .map_err(|e| AppError::Runtime(e.to_string()))
    };

    for &tau in &taus {
        let group: Vec<&ResultRecord> =
            records.iter().filter(|r| r.tau == tau).collect();
        // Query-scaling slope fit: log(queries_used) vs log(1/eps).
        let pts: Vec<(f64, f64)> = group
            .iter()
            .filter_map(|r| {
                let e = r.eps?;
                let q = r.metrics.get("queries_used")?;
                Some(((1.0 / e).ln(), q.ln()))
            })
            .collect();
        let distinct_x: BTreeSet<u64> = pts.iter().map(|(x, _)| x.to_bits()).collect();
        if distinct_x.len() >= 2 {
            let (slope, _icpt, se, r2) = linfit(&pts);
            emit(tau, "query_slope_vs_inv_eps", slope, Some(se))?;
            emit(tau, "query_slope_r2", r2, None)?;
        }
        // Mean over the group for the headline metrics.
        for stat in [
            "budget_ratio",
            "hausdorff_over_eps",
            "hausdorff",
            "measured_tv",
            "measured_hausdorff",
            "fro_error",
            "tan_angle",
            "seed_dist",
            "ambient_query_lb",
            "volume_query_lb",
        ] {
            let vals: Vec<f64> =
                group.iter().filter_map(|r| r.metrics.get(stat)).copied().collect();
            if !vals.is_empty() {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / vals.len().max(1) as f64;
                let se = (var / vals.len() as f64).sqrt();
                emit(tau, &format!("mean_{stat}"), mean, Some(se))?;
            }
        }
        // Budget-vs-formula ratios for the routine bench.
        for (used, bound, name) in [
            ("search_queries", "search_budget_bound", "search_budget_ratio"),
            ("seed_queries", "seed_budget_bound", "seed_budget_ratio"),
            ("proj_queries", "proj_budget_exact", "proj_budget_ratio"),
        ] {
            let ratios: Vec<f64> = group
                .iter()
                .filter_map(|r| Some(r.metrics.get(used)? / r.metrics.get(bound)?))
                .collect();
            if !ratios.is_empty() {
                let worst = ratios.iter().copied().fold(f64::MIN, f64::max);
                emit(tau, &format!("max_{name}"), worst, None)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| AppError::Runtime(e.to_string()))?;
    std::fs::write(dir.join("report.csv"), bytes).map_err(io_err)?;
    println!("report written to {}", dir.join("report.csv").display());
    Ok(())
}

/// Ordinary least squares y = a + b·x: returns (slope, intercept,
/// stderr(slope), R²).
fn linfit(pts: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let dof = (pts.len().max(3) - 2) as f64;
    let sse = (syy - slope * sxy).max(0.0);
    let se = (sse / dof / sxx).sqrt();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, icpt, se, r2)
}
