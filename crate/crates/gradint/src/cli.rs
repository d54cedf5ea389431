//! Command-line front end: a declarative run configuration and the four
//! subcommands `exponents`, `staircase`, `realize`, `verify`.
//!
//! Configuration is layered. Compiled-in defaults are overridden per-field
//! by an optional TOML file (`--config run.toml`), which is overridden by
//! individual command-line flags. The output directory additionally honors
//! the `GRADINT_OUT` environment variable (applied between file and flags).
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 structurally
//! valid but unsupported coefficient pair (mean diagonal deviation s = 0),
//! 4 invariant violation found by an audit, 5 cell budget exhausted.
//!
//! Config file schema (TOML; every key optional, defaults in parentheses):
//!
//! ```toml
//! big_k = 2.0          # normal-form distortion K > 1          (2.0)
//! big_s1 = 2.0         # S₁ ∈ [1/K, K]                         (2.0)
//! big_s2 = 2.0         # S₂ ∈ [1/K, K]                         (2.0)
//! # sigma1 = [[0.5, 0.0], [0.0, 0.5]]   # full matrices override the
//! # sigma2 = [[2.0, 0.0], [0.0, 2.0]]   # scalars when both are present
//! depth = 8            # staircase levels N ≥ 1                (8)
//! delta0 = 0.1         # exponent oscillation target δ₀        (0.1)
//! gamma = 0.05         # retirement radius γ                   (0.05)
//! epsilon = 1e-9       # verify's hanging-node continuity gate (1e-9)
//! alpha = 0.5          # Hölder exponent recorded in manifests (0.5)
//! # theta = 0.0        # single angle instead of the grid      (unset)
//! theta_points = 64    # grid points over [0, π/2] inclusive   (64)
//! seed = 1             # RNG seed                              (1)
//! out_dir = "out"      # artifact directory                    ("out")
//! budget = 1000000     # mesh cell cap                         (1000000)
//! ```
//!
//! Every emitted file carries a schema tag: JSON artifacts in a `schema`
//! field, CSV artifacts as a leading `# schema: …` comment row. Identical
//! configuration and seed reproduce CSV artifacts byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    distribution_curve, log_log_slope, threshold_grid, weak_residual, write_distribution_csv,
    WeakResidualReport,
};
use crate::coefficients::{
    beltrami_from_sigma, critical_exponents, CoefficientPair, DiagonalPairParams,
};
use crate::conformal::ConformalMatrix;
use crate::realize::{
    audit_map, build_staircase_map, CellStatus, MapAudit, RealizeConfig, StaircaseMap,
};
use crate::staircase::{
    beta_residual_max, default_tolerances, fmt_float, iterate, StepTolerances, C_GROWTH,
};
use crate::targets::TargetSpec;
use crate::{Error, Result};

pub const EXPONENTS_SCHEMA: &str = "gradint-exponents/1";
pub const THETA_TABLE_SCHEMA: &str = "gradint-theta-table/1";
pub const GRID_LEVELS_SCHEMA: &str = "gradint-grid-levels/1";
pub const MOMENTS_SCHEMA: &str = "gradint-moments/1";
pub const CELLS_SCHEMA: &str = "gradint-cells/1";
pub const RUN_MANIFEST_SCHEMA: &str = "gradint-run-manifest/1";
pub const STAIRCASE_MANIFEST_SCHEMA: &str = "gradint-staircase-manifest/1";
pub const VERIFY_SCHEMA: &str = "gradint-verify-report/1";

/// Weak-residual test grid: g = 6 resolves (g−1)² = 25 interior hat
/// functions, a 5×5 array over the unit square.
pub const TEST_GRID: u32 = 6;

/// Map an error onto the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Io(_) => 2,
        Error::Unsupported(_) => 3,
        Error::Invariant(_) => 4,
        Error::BudgetExhausted(_) => 5,
    }
}

/// One run, declaratively. Field semantics and defaults are documented in
/// the module header; `validate` re-checks every range before dispatch.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Normal-form distortion K (σ₁ = diag(1/K, 1/S₁), σ₂ = diag(K, S₂)).
    pub big_k: f64,
    pub big_s1: f64,
    pub big_s2: f64,
    /// Full-matrix coefficient pair, row-major. Overrides the scalars when
    /// both are present; `exponents` accepts any elliptic pair, the other
    /// commands require diagonal normal form.
    pub sigma1: Option<[[f64; 2]; 2]>,
    pub sigma2: Option<[[f64; 2]; 2]>,
    /// Staircase depth N (iteration levels).
    pub depth: u32,
    /// Target oscillation δ₀ of the exponent over the working sector; sets
    /// the sector half-width of the recorded tolerance schedule.
    pub delta0: f64,
    /// Retirement radius γ.
    pub gamma: f64,
    /// Hanging-node continuity budget used by `verify` (tighten below the
    /// built-in 1e-9 audit gate to make verification stricter).
    pub epsilon: f64,
    /// Hölder exponent α at which manifests record the measured per-cell
    /// C^α seminorm bound max |∇f|·diam^{1−α}.
    pub alpha: f64,
    /// Single evaluation angle; when set, the θ-grid is just this angle.
    pub theta: Option<f64>,
    /// Number of grid angles, evenly spaced over [0, π/2] inclusive (the
    /// θ-functions are even and π-periodic, so a quarter period sees every
    /// value they take).
    pub theta_points: u32,
    pub seed: u64,
    /// Artifact directory (override with GRADINT_OUT or --out).
    pub out_dir: PathBuf,
    /// Hard cap on the number of mesh cells.
    pub budget: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            big_k: 2.0,
            big_s1: 2.0,
            big_s2: 2.0,
            sigma1: None,
            sigma2: None,
            depth: 8,
            delta0: 0.1,
            gamma: 0.05,
            epsilon: 1e-9,
            alpha: 0.5,
            theta: None,
            theta_points: 64,
            seed: 1,
            out_dir: PathBuf::from("out"),
            budget: 1_000_000,
        }
    }
}

impl RunConfig {
    /// Range-check every numeric field; the pair itself is validated when
    /// it is resolved.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.depth == 0 {
            return bad("depth must be ≥ 1".into());
        }
        if !(self.delta0 > 0.0 && self.delta0 <= 1.0) {
            return bad(format!("delta0 must lie in (0, 1], got {}", self.delta0));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let Some(t) = self.theta {
            if !t.is_finite() {
                return bad(format!("theta must be finite, got {t}"));
            }
        }
        if self.theta_points == 0 {
            return bad("theta_points must be ≥ 1".into());
        }
        if self.budget == 0 {
            return bad("budget must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Staircase laminates and their piecewise-affine realizations for
/// two-phase elliptic coefficient pairs.
#[derive(Parser, Debug)]
#[command(name = "gradint", version)]
pub struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, value_name = "FILE", global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Report the critical integrability exponents of the pair (JSON on stdout).
    Exponents(PairArgs),
    /// Iterate the staircase measure over the θ-grid; write level and moment tables.
    Staircase(StaircaseArgs),
    /// Build the piecewise-affine staircase map; write mesh, cell table,
    /// gradient distribution and run manifest.
    Realize(RealizeArgs),
    /// Re-load a mesh artifact and re-measure every invariant; exit 4 on violation.
    Verify(VerifyArgs),
}

/// Coefficient-pair flags shared by the computing subcommands.
#[derive(Args, Clone, Debug, Default)]
pub struct PairArgs {
    /// Normal-form distortion K.
    #[arg(long, value_name = "K")]
    pub big_k: Option<f64>,
    /// Normal-form S₁.
    #[arg(long, value_name = "S1")]
    pub big_s1: Option<f64>,
    /// Normal-form S₂.
    #[arg(long, value_name = "S2")]
    pub big_s2: Option<f64>,
    /// σ₁ as four comma-separated row-major entries (use with --sigma2).
    #[arg(long, value_name = "A,B,C,D", allow_hyphen_values = true)]
    pub sigma1: Option<String>,
    /// σ₂ as four comma-separated row-major entries (use with --sigma1).
    #[arg(long, value_name = "A,B,C,D", allow_hyphen_values = true)]
    pub sigma2: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct StaircaseArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Iteration depth N.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Evaluate a single angle θ instead of the grid.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Number of grid angles over [0, π/2].
    #[arg(long)]
    pub theta_points: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Exponent oscillation target δ₀.
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Retirement radius γ.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct RealizeArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Mesh depth N.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Retirement radius γ.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Mesh cell budget.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Exponent oscillation target δ₀.
    #[arg(long)]
    pub delta0: Option<f64>,
    /// Hölder exponent recorded in the manifest.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Report gradient magnitudes in the operator norm instead of the
    /// Hilbert–Schmidt norm (cells.csv, distribution.csv, fitted slope).
    #[arg(long)]
    pub op_norm: bool,
}

#[derive(Args, Debug, Default)]
pub struct VerifyArgs {
    /// Mesh artifact (defaults to <out_dir>/mesh.json).
    #[arg(long, value_name = "FILE")]
    pub mesh: Option<PathBuf>,
    /// Output directory to look for mesh.json in.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override the retirement gate γ (defaults to the mesh's own γ).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Weak-residual test grid g ((g−1)² interior hats).
    #[arg(long)]
    pub grid: Option<u32>,
    /// Hanging-node continuity budget ε.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

/// Defaults ← TOML file ← GRADINT_OUT. Flags are applied by the dispatcher.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::InvalidInput(format!("config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var("GRADINT_OUT") {
        if !dir.is_empty() {
            cfg.out_dir = PathBuf::from(dir);
        }
    }
    Ok(cfg)
}

fn parse_matrix(text: &str) -> Result<[[f64; 2]; 2]> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::InvalidInput(format!(
            "matrix flag needs 4 comma-separated entries, got {}",
            parts.len()
        )));
    }
    let mut v = [0.0f64; 4];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|e| Error::InvalidInput(format!("matrix entry {part:?}: {e}")))?;
    }
    Ok([[v[0], v[1]], [v[2], v[3]]])
}

fn apply_pair_flags(cfg: &mut RunConfig, args: &PairArgs) -> Result<()> {
    if let Some(v) = args.big_k {
        cfg.big_k = v;
    }
    if let Some(v) = args.big_s1 {
        cfg.big_s1 = v;
    }
    if let Some(v) = args.big_s2 {
        cfg.big_s2 = v;
    }
    if let Some(text) = &args.sigma1 {
        cfg.sigma1 = Some(parse_matrix(text)?);
    }
    if let Some(text) = &args.sigma2 {
        cfg.sigma2 = Some(parse_matrix(text)?);
    }
    Ok(())
}

/// The coefficient pair a run works on: full matrices when given, otherwise
/// the (K, S₁, S₂) normal form.
enum PairSpec {
    Normal(DiagonalPairParams),
    General(CoefficientPair),
}

fn resolve_pair(cfg: &RunConfig) -> Result<PairSpec> {
    match (cfg.sigma1, cfg.sigma2) {
        (Some(s1), Some(s2)) => Ok(PairSpec::General(CoefficientPair::new(s1, s2)?)),
        (None, None) => Ok(PairSpec::Normal(DiagonalPairParams::new(
            cfg.big_k, cfg.big_s1, cfg.big_s2,
        )?)),
        _ => Err(Error::InvalidInput(
            "sigma1 and sigma2 must be given together".into(),
        )),
    }
}

/// Normal-form parameters, required by everything except `exponents`.
fn normal_params(cfg: &RunConfig) -> Result<DiagonalPairParams> {
    match resolve_pair(cfg)? {
        PairSpec::Normal(p) => Ok(p),
        PairSpec::General(pair) => DiagonalPairParams::from_pair(&pair),
    }
}

/// JSON report of `exponents`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentsReport {
    pub schema: String,
    /// "two-phase-normal-form", "two-phase-general", or "single-phase"
    /// (σ₁ = σ₂ entrywise: no two-phase oscillation, p unbounded).
    pub case: String,
    pub sigma1: [[f64; 2]; 2],
    pub sigma2: [[f64; 2]; 2],
    /// Pair invariants m, n (both ≥ 2; 2 exactly in degenerate directions).
    pub invariant_m: f64,
    pub invariant_n: f64,
    /// Critical distortion K* of the pair.
    pub k_star: f64,
    /// Lower critical exponent q = 2K*/(K*+1).
    pub q: f64,
    /// Upper critical exponent p = 2K*/(K*−1); absent (null) when K* = 1.
    pub p: Option<f64>,
    /// Quasiconformal distortions of the individual matrices.
    pub sigma1_distortion: f64,
    pub sigma2_distortion: f64,
    /// Reduced normal-form scalars, when the pair is in (or was given as)
    /// diagonal normal form: k = (K−1)/(K+1), s_j = (S_j−1)/(S_j+1),
    /// s = (s₁+s₂)/2, S = (1+s)/(1−s).
    pub k: Option<f64>,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    pub s: Option<f64>,
    pub big_s: Option<f64>,
}

/// Quasiconformal distortion of a single coefficient matrix,
/// K(σ) = (1 + |μ| + |ν|)/(1 − |μ| − |ν|) with (μ, ν) its dilatations.
fn matrix_distortion(sigma: [[f64; 2]; 2]) -> Result<f64> {
    let (mu, nu) = beltrami_from_sigma(sigma)?;
    let ell = mu.norm() + nu.norm();
    Ok((1.0 + ell) / (1.0 - ell))
}

pub fn cmd_exponents(cfg: &RunConfig) -> Result<ExponentsReport> {
    cfg.validate()?;
    let (pair, normal) = match resolve_pair(cfg)? {
        PairSpec::Normal(p) => (p.pair(), Some(p)),
        PairSpec::General(pair) => {
            // A normal-form pair given as matrices still gets its reduced
            // scalars and the s = 0 rejection; σ₁ = σ₂ is the single-phase
            // case, never a normal form.
            let normal = if pair.sigma1 == pair.sigma2 {
                None
            } else {
                match DiagonalPairParams::from_pair(&pair) {
                    Ok(p) => Some(p),
                    Err(e @ Error::Unsupported(_)) => return Err(e),
                    Err(_) => None,
                }
            };
            (pair, normal)
        }
    };
    let e = critical_exponents(&pair)?;
    let case = if pair.sigma1 == pair.sigma2 {
        "single-phase"
    } else if normal.is_some() {
        "two-phase-normal-form"
    } else {
        "two-phase-general"
    };
    Ok(ExponentsReport {
        schema: EXPONENTS_SCHEMA.into(),
        case: case.into(),
        sigma1: pair.sigma1,
        sigma2: pair.sigma2,
        invariant_m: e.m,
        invariant_n: e.n,
        k_star: e.k,
        q: e.q,
        p: e.p.is_finite().then_some(e.p),
        sigma1_distortion: matrix_distortion(pair.sigma1)?,
        sigma2_distortion: matrix_distortion(pair.sigma2)?,
        k: normal.map(|p| p.k()),
        s1: normal.map(|p| p.s1()),
        s2: normal.map(|p| p.s2()),
        s: normal.map(|p| p.s()),
        big_s: normal.map(|p| p.big_s()),
    })
}

/// The evaluation grid: the single configured angle, or `theta_points`
/// angles evenly spaced over [0, π/2] inclusive.
pub fn theta_grid(cfg: &RunConfig) -> Vec<f64> {
    if let Some(t) = cfg.theta {
        return vec![t];
    }
    let n = cfg.theta_points.max(1);
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64)
        .collect()
}

/// Measure the norm-growth constant ĉ of the through-infinity rank-one
/// decomposition, max(|Q|, |P|)/|A|, over a seeded random sample of
/// matrices. Matrices on T₁ admit no decomposition and are skipped.
pub fn measure_c_hat(spec: &TargetSpec, seed: u64, samples: u32) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4a7);
    let mut worst = 0.0f64;
    let mut done = 0u32;
    let mut attempts = 0u32;
    while done < samples && attempts < 10 * samples {
        attempts += 1;
        let m = ConformalMatrix::new(
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        );
        let norm = m.hs_norm();
        if norm < 1e-6 {
            continue;
        }
        if let Ok(d) = spec.decompose_through_infinity(m) {
            worst = worst.max(d.q.hs_norm().max(d.p.hs_norm()) / norm);
            done += 1;
        }
    }
    worst
}

/// Summary of one `staircase` run; also the staircase manifest contents.
#[derive(Clone, Debug, Serialize)]
pub struct StaircaseSummary {
    pub schema: String,
    pub config: RunConfig,
    pub theta_grid: Vec<f64>,
    pub depth: u32,
    /// Distribution exponent p(θ) per grid angle.
    pub p_of_theta: Vec<f64>,
    /// Largest |log Π β_j + p·log n| over grid and levels (bounded in n).
    pub beta_residual_worst: f64,
    /// Tolerance schedule of the pair at the configured γ, δ₀.
    pub tolerances: StepTolerances,
    /// Measured through-infinity norm-growth constant ĉ (its reciprocal
    /// caps the base proximity radius of the tolerance schedule).
    pub c_hat_measured: f64,
    pub files: Vec<String>,
}

pub fn cmd_staircase(cfg: &RunConfig) -> Result<StaircaseSummary> {
    cfg.validate()?;
    let params = normal_params(cfg)?;
    let spec = TargetSpec::new(params);
    let grid = theta_grid(cfg);
    fs::create_dir_all(&cfg.out_dir)?;

    let mut theta_buf = Vec::new();
    writeln!(theta_buf, "# schema: {THETA_TABLE_SCHEMA}")?;
    writeln!(
        theta_buf,
        "theta,lambda1,lambda2,m1,m2,l,big_l,p,final_climb_mass,beta_residual_max"
    )?;
    let mut levels_buf = Vec::new();
    writeln!(levels_buf, "# schema: {GRID_LEVELS_SCHEMA}")?;
    writeln!(
        levels_buf,
        "theta,n,mass_at_level,mu2,mu3,retired_t1,retired_t2,norm_t1,norm_t2,norm_climb"
    )?;
    let mut moments_buf = Vec::new();
    writeln!(moments_buf, "# schema: {MOMENTS_SCHEMA}")?;
    writeln!(moments_buf, "theta,n,moment_at_p,moment_below_p")?;

    let mut p_of_theta = Vec::with_capacity(grid.len());
    let mut beta_worst = 0.0f64;
    for &theta in &grid {
        let seq = iterate(&spec, theta, cfg.depth)?;
        let tf = &seq.tf;
        let resid = beta_residual_max(tf, cfg.depth);
        beta_worst = beta_worst.max(resid);
        p_of_theta.push(tf.p);
        writeln!(
            theta_buf,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_float(theta),
            fmt_float(tf.lambda1),
            fmt_float(tf.lambda2),
            fmt_float(tf.m1),
            fmt_float(tf.m2),
            fmt_float(tf.l),
            fmt_float(tf.big_l),
            fmt_float(tf.p),
            fmt_float(seq.final_climb_mass),
            fmt_float(resid),
        )?;
        let at_p = seq.retired_moment_partial_sums(tf.p);
        let below_p = seq.retired_moment_partial_sums(tf.p - 0.1);
        for (row, (mp, mb)) in seq.levels.iter().zip(at_p.iter().zip(&below_p)) {
            writeln!(
                levels_buf,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_float(theta),
                row.n,
                fmt_float(row.mass_at_level),
                fmt_float(row.mu2),
                fmt_float(row.mu3),
                fmt_float(row.retired_t1),
                fmt_float(row.retired_t2),
                fmt_float(row.norm_t1),
                fmt_float(row.norm_t2),
                fmt_float(row.norm_climb),
            )?;
            writeln!(
                moments_buf,
                "{},{},{},{}",
                fmt_float(theta),
                row.n,
                fmt_float(*mp),
                fmt_float(*mb),
            )?;
        }
    }
    fs::write(cfg.out_dir.join("theta_table.csv"), &theta_buf)?;
    fs::write(cfg.out_dir.join("levels.csv"), &levels_buf)?;
    fs::write(cfg.out_dir.join("moments.csv"), &moments_buf)?;

    let c_hat = measure_c_hat(&spec, cfg.seed, 256);
    let tolerances = default_tolerances(&spec, cfg.gamma, cfg.delta0, c_hat.max(1.0))?;
    let summary = StaircaseSummary {
        schema: STAIRCASE_MANIFEST_SCHEMA.into(),
        config: cfg.clone(),
        theta_grid: grid,
        depth: cfg.depth,
        p_of_theta,
        beta_residual_worst: beta_worst,
        tolerances,
        c_hat_measured: c_hat,
        files: vec![
            "theta_table.csv".into(),
            "levels.csv".into(),
            "moments.csv".into(),
            "staircase_manifest.json".into(),
        ],
    };
    write_json_pretty(&cfg.out_dir.join("staircase_manifest.json"), &summary)?;
    Ok(summary)
}

/// Write the flat cell table: schema row, then one row per mesh cell with
/// `cell_id, area, grad_norm (|∇f|_HS), phase (1/2 for retired cells, 0
/// otherwise), level`.
pub fn write_cells_csv(mut w: impl Write, map: &StaircaseMap, op_norm: bool) -> Result<()> {
    writeln!(w, "# schema: {CELLS_SCHEMA}")?;
    writeln!(w, "cell_id,area,grad_norm,phase,level")?;
    for cell in &map.cells {
        let g: ConformalMatrix = cell.grad.into();
        let norm = if op_norm { g.op_norm() } else { g.hs_norm() };
        writeln!(
            w,
            "{},{},{},{},{}",
            cell.id,
            fmt_float(cell.poly.area()),
            fmt_float(norm),
            cell.retired_on,
            cell.level,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Measured per-cell C^α seminorm bound max |∇f|·diam^{1−α}: within one
/// affine cell, |f(x) − f(y)| ≤ |∇f|·|x−y| ≤ (|∇f|·diam^{1−α})·|x−y|^α.
pub fn holder_bound(map: &StaircaseMap, alpha: f64) -> f64 {
    map.cells
        .iter()
        .map(|c| {
            let g: ConformalMatrix = c.grad.into();
            g.op_norm() * c.poly.diameter_bound().powf(1.0 - alpha)
        })
        .fold(0.0, f64::max)
}

/// The run manifest of `realize`: every parameter, the re-measured
/// invariants and empirical constants, and the artifact list.
#[derive(Clone, Debug, Serialize)]
pub struct RealizeManifest {
    pub schema: String,
    pub tool_version: String,
    pub config: RunConfig,
    /// Mesh-layer parameters actually used (sawtooth tilt, frame fraction,
    /// stripe and freeze thresholds).
    pub mesh_config: RealizeConfig,
    pub big_k: f64,
    pub big_s1: f64,
    pub big_s2: f64,
    pub seed: u64,
    pub depth_requested: u32,
    /// Deepest level that retired cells onto the targets.
    pub depth_achieved: u32,
    pub cells_total: u64,
    pub cells_retired: u64,
    pub cells_frozen: u64,
    pub cells_climbing: u64,
    pub retired_area: f64,
    pub frozen_area: f64,
    pub climbing_area: f64,
    /// Invariants re-measured from the mesh as written.
    pub audit: MapAudit,
    pub audit_passes: bool,
    /// Gradient magnitude convention of cells.csv and distribution.csv:
    /// "hilbert-schmidt" (default) or "operator" (--op-norm).
    pub grad_norm: String,
    /// Fitted log-log slope of λ_{∇f} over t ∈ [2, 8] (null for tiny runs).
    pub distribution_slope: Option<f64>,
    /// Weak-form residual over the (TEST_GRID−1)² interior hat functions.
    pub weak_residual: WeakResidualReport,
    /// Achieved residual constant c = worst residual / (γ·‖∇φ‖_L¹).
    pub residual_constant: f64,
    pub holder_alpha: f64,
    /// Measured per-cell C^α seminorm bound at α = holder_alpha.
    pub holder_bound: f64,
    /// Tolerance schedule of the pair at the configured γ, δ₀.
    pub tolerances: StepTolerances,
    /// Measured through-infinity norm-growth constant ĉ.
    pub c_hat_measured: f64,
    /// Pinned envelope constant of the per-level growth sandwich.
    pub c_growth: f64,
    pub files: Vec<String>,
}

pub fn cmd_realize(cfg: &RunConfig, op_norm: bool) -> Result<RealizeManifest> {
    cfg.validate()?;
    let params = normal_params(cfg)?;
    let spec = TargetSpec::new(params);
    let mesh_cfg = RealizeConfig {
        n_levels: cfg.depth,
        gamma: cfg.gamma,
        budget: cfg.budget,
        seed: cfg.seed,
        ..RealizeConfig::default()
    };
    let map = build_staircase_map(&spec, &mesh_cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;

    let mut mesh_buf = Vec::new();
    map.write_json(&mut mesh_buf)?;
    fs::write(cfg.out_dir.join("mesh.json"), &mesh_buf)?;

    let mut cells_buf = Vec::new();
    write_cells_csv(&mut cells_buf, &map, op_norm)?;
    fs::write(cfg.out_dir.join("cells.csv"), &cells_buf)?;

    let samples: Vec<(f64, f64)> = if op_norm {
        map.cells
            .iter()
            .map(|c| {
                let g: ConformalMatrix = c.grad.into();
                (c.poly.area(), g.op_norm())
            })
            .collect()
    } else {
        map.gradient_samples()
    };
    let ts = threshold_grid(0.5, 512.0, 121)?;
    let curve = distribution_curve(&samples, &ts);
    let mut dist_buf = Vec::new();
    write_distribution_csv(&mut dist_buf, &curve)?;
    fs::write(cfg.out_dir.join("distribution.csv"), &dist_buf)?;

    let audit = audit_map(&map, &spec);
    let weak = weak_residual(&map, &spec, TEST_GRID)?;
    let mut counts = [0u64; 3];
    for cell in &map.cells {
        counts[match cell.status {
            CellStatus::Retired => 0,
            CellStatus::Frozen => 1,
            CellStatus::Climbing => 2,
        }] += 1;
    }
    let depth_achieved = map
        .levels
        .iter()
        .filter(|l| l.retired_t1_area + l.retired_t2_area > 0.0)
        .map(|l| l.n)
        .max()
        .unwrap_or(0);
    let c_hat = measure_c_hat(&spec, cfg.seed, 256);
    let manifest = RealizeManifest {
        schema: RUN_MANIFEST_SCHEMA.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        mesh_config: mesh_cfg,
        big_k: map.big_k,
        big_s1: map.big_s1,
        big_s2: map.big_s2,
        seed: cfg.seed,
        depth_requested: cfg.depth,
        depth_achieved,
        cells_total: map.cells.len() as u64,
        cells_retired: counts[0],
        cells_frozen: counts[1],
        cells_climbing: counts[2],
        retired_area: map.retired_area,
        frozen_area: map.frozen_area,
        climbing_area: map.climbing_area,
        audit_passes: audit.passes(cfg.gamma),
        grad_norm: if op_norm { "operator" } else { "hilbert-schmidt" }.into(),
        distribution_slope: log_log_slope(&curve, 2.0, 8.0).ok(),
        residual_constant: weak.worst_ratio,
        weak_residual: weak,
        holder_alpha: cfg.alpha,
        holder_bound: holder_bound(&map, cfg.alpha),
        tolerances: default_tolerances(&spec, cfg.gamma, cfg.delta0, c_hat.max(1.0))?,
        c_hat_measured: c_hat,
        c_growth: C_GROWTH,
        audit,
        files: vec![
            "mesh.json".into(),
            "cells.csv".into(),
            "distribution.csv".into(),
            "manifest.json".into(),
        ],
    };
    write_json_pretty(&cfg.out_dir.join("manifest.json"), &manifest)?;
    if !manifest.audit_passes {
        return Err(Error::Invariant(format!(
            "freshly built mesh failed its own audit: {}",
            manifest.audit.failures(cfg.gamma).join("; ")
        )));
    }
    Ok(manifest)
}

/// JSON report of `verify`.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub schema: String,
    pub mesh: String,
    pub mesh_schema: String,
    pub big_k: f64,
    pub big_s1: f64,
    pub big_s2: f64,
    /// Retirement gate applied (mesh's own γ unless overridden).
    pub gamma: f64,
    /// Continuity budget applied.
    pub epsilon: f64,
    pub cells: u64,
    pub audit: MapAudit,
    pub weak_residual: WeakResidualReport,
    pub residual_constant: f64,
    pub failures: Vec<String>,
    pub passes: bool,
}

pub fn cmd_verify(
    mesh_path: &Path,
    gamma_override: Option<f64>,
    grid: u32,
    epsilon: f64,
) -> Result<VerifyReport> {
    let file = fs::File::open(mesh_path)
        .map_err(|e| Error::InvalidInput(format!("mesh {}: {e}", mesh_path.display())))?;
    let map = StaircaseMap::read_json(std::io::BufReader::new(file))?;
    let params = DiagonalPairParams::new(map.big_k, map.big_s1, map.big_s2)?;
    let spec = TargetSpec::new(params);
    let gamma = gamma_override.unwrap_or(map.config.gamma);

    let audit = audit_map(&map, &spec);
    let weak = weak_residual(&map, &spec, grid)?;
    let mut failures = audit.failures(gamma);
    if !(audit.continuity_max < epsilon) && epsilon < 1e-9 {
        failures.push(format!(
            "continuity budget: max vertex jump {:.3e} ≥ ε = {epsilon:.3e}",
            audit.continuity_max
        ));
    }
    if !weak.worst_residual.is_finite() {
        failures.push("weak residual: non-finite".into());
    }
    let passes = failures.is_empty();
    Ok(VerifyReport {
        schema: VERIFY_SCHEMA.into(),
        mesh: mesh_path.display().to_string(),
        mesh_schema: map.schema.clone(),
        big_k: map.big_k,
        big_s1: map.big_s1,
        big_s2: map.big_s2,
        gamma,
        epsilon,
        cells: map.cells.len() as u64,
        audit,
        residual_constant: weak.worst_ratio,
        weak_residual: weak,
        failures,
        passes,
    })
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Entry point for the binary: parse, dispatch, map errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("gradint: {err}");
            exit_code(&err)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Exponents(args) => {
            apply_pair_flags(&mut cfg, args)?;
            println!("{}", to_pretty(&cmd_exponents(&cfg)?)?);
            Ok(0)
        }
        Command::Staircase(args) => {
            apply_pair_flags(&mut cfg, &args.pair)?;
            if let Some(v) = args.depth {
                cfg.depth = v;
            }
            if let Some(v) = args.theta {
                cfg.theta = Some(v);
            }
            if let Some(v) = args.theta_points {
                cfg.theta_points = v;
            }
            if let Some(v) = args.seed {
                cfg.seed = v;
            }
            if let Some(v) = &args.out {
                cfg.out_dir = v.clone();
            }
            if let Some(v) = args.delta0 {
                cfg.delta0 = v;
            }
            if let Some(v) = args.gamma {
                cfg.gamma = v;
            }
            println!("{}", to_pretty(&cmd_staircase(&cfg)?)?);
            Ok(0)
        }
        Command::Realize(args) => {
            apply_pair_flags(&mut cfg, &args.pair)?;
            if let Some(v) = args.depth {
                cfg.depth = v;
            }
            if let Some(v) = args.gamma {
                cfg.gamma = v;
            }
            if let Some(v) = args.budget {
                cfg.budget = v;
            }
            if let Some(v) = args.seed {
                cfg.seed = v;
            }
            if let Some(v) = &args.out {
                cfg.out_dir = v.clone();
            }
            if let Some(v) = args.delta0 {
                cfg.delta0 = v;
            }
            if let Some(v) = args.alpha {
                cfg.alpha = v;
            }
            println!("{}", to_pretty(&cmd_realize(&cfg, args.op_norm)?)?);
            Ok(0)
        }
        Command::Verify(args) => {
            if let Some(v) = &args.out {
                cfg.out_dir = v.clone();
            }
            let mesh = args
                .mesh
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("mesh.json"));
            let report = cmd_verify(
                &mesh,
                args.gamma,
                args.grid.unwrap_or(TEST_GRID),
                args.epsilon.unwrap_or(cfg.epsilon),
            )?;
            println!("{}", to_pretty(&report)?);
            if report.passes {
                Ok(0)
            } else {
                Err(Error::Invariant(format!(
                    "mesh {} failed verification: {}",
                    mesh.display(),
                    report.failures.join("; ")
                )))
            }
        }
    }
}
