//! The staircase: step measures near n·J·R_θ and their infinite iteration.
//!
//! The construction climbs the rays S_n = {n·J·R_θ}. A matrix A near n·J·R_θ
//! is split (as a laminate) into
//!
//! * a T₁ rest point Q (weight μ₁, vanishing exactly on the ray),
//! * the retirement atoms t·Q₁ ∈ T₁ and (n+1)·Q₂ ∈ T₂,
//! * the climb atom (n+1)·J·R_θ,
//!
//! through three rank-one splits whose weights μ₂, μ₃ are rational functions
//! of the θ-dependent quantities λ₁, λ₂ produced by
//! [`TargetSpec::connect_to_conjugation`]. The mass that keeps climbing per
//! level, (1−μ₁)(1−μ₂)(1−μ₃), behaves like β_n = 1 − p(θ)/n, so after n
//! levels a fraction ≍ n^{−p(θ)} survives at gradients of size ≍ n: that
//! power is the distribution exponent the whole crate exists to measure,
//!
//! ```text
//!     p(θ) = 1 + l(θ),   l = (M₁+M₂)/2 − 1,   M_j = 2λ_j/(λ₁+λ₂−2λ₁λ₂).
//! ```

use num_complex::Complex64;
use serde::Serialize;

use crate::conformal::ConformalMatrix;
use crate::laminate::{Laminate, SplitTree};
use crate::rational::{Rat, RatComplex};
use crate::targets::{Phase, RatTargetSpec, TargetSpec};
use crate::{tol, Error, Result};

/// Empirical envelope constant for the per-step growth sandwich
/// (1 − cρ/n)·β_n ≤ mass_up ≤ (1 + cρ/n)·β_{n+2}. The source material leaves
/// c unspecified; randomized sweeps in the test suite measure the worst
/// observed ratio at well under 4, and 8 is pinned here with margin.
pub const C_GROWTH: f64 = 8.0;

/// θ-dependent scalars of one staircase level.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ThetaFunctions {
    pub theta: f64,
    /// Connection direction a(R_θ) = cos θ / k + i·sin θ / s.
    #[serde(skip)]
    pub a: Complex64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub m1: f64,
    pub m2: f64,
    /// l(θ) = (M₁+M₂)/2 − 1 ∈ [s, k].
    pub l: f64,
    /// L(θ) = (1+l)/(1−l) ∈ [S, K].
    pub big_l: f64,
    /// Distribution exponent p(θ) = 1 + l = 2L/(L+1).
    pub p: f64,
}

impl ThetaFunctions {
    /// β_j(θ) = 1 − p(θ)/j, the ideal one-level mass ratio at level j.
    pub fn beta(&self, j: u32) -> f64 {
        1.0 - self.p / j as f64
    }
}

/// Compute the θ-functions at one angle.
pub fn theta_functions(spec: &TargetSpec, theta: f64) -> Result<ThetaFunctions> {
    let k = spec.k();
    let s = spec.params.s();
    debug_assert!(k > 0.0 && s > 0.0);
    let a = Complex64::new(theta.cos() / k, theta.sin() / s);
    // a(R_θ) is the unique direction with d₁(a) + d₂(a) = 2e^{iθ}, which is
    // what lets the three splits of a step close up into a measure.
    let conn = spec.connect_to_conjugation(theta, a)?;
    let (l1, l2) = (conn.lambda1, conn.lambda2);
    let denom = l1 + l2 - 2.0 * l1 * l2;
    if denom <= 0.0 {
        return Err(Error::Invariant(format!(
            "connection weights degenerate at θ = {theta}: λ₁ = {l1}, λ₂ = {l2}"
        )));
    }
    let m1 = 2.0 * l1 / denom;
    let m2 = 2.0 * l2 / denom;
    let l = 0.5 * (m1 + m2) - 1.0;
    if !(l > 0.0 && l < 1.0) {
        return Err(Error::Invariant(format!(
            "l(θ) = {l} outside (0, 1) at θ = {theta}"
        )));
    }
    Ok(ThetaFunctions {
        theta,
        a,
        lambda1: l1,
        lambda2: l2,
        m1,
        m2,
        l,
        big_l: (1.0 + l) / (1.0 - l),
        p: 1.0 + l,
    })
}

/// min over θ of M₂/(2−M₂): the radius scale below which a step is always
/// well-posed. Grid scan over a quarter period (the functions are even and
/// π-periodic) followed by golden-section refinement.
pub fn m_const(spec: &TargetSpec) -> Result<f64> {
    let f = |theta: f64| -> Result<f64> {
        let tf = theta_functions(spec, theta)?;
        Ok(tf.m2 / (2.0 - tf.m2))
    };
    let n = 10_000;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut best = (0.0f64, f64::INFINITY);
    for i in 0..=n {
        let theta = half_pi * i as f64 / n as f64;
        let v = f(theta)?;
        if v < best.1 {
            best = (theta, v);
        }
    }
    // Golden-section refinement around the grid minimum.
    let step = half_pi / n as f64;
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(half_pi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let m1p = hi - phi * (hi - lo);
        let m2p = lo + phi * (hi - lo);
        if f(m1p)? < f(m2p)? {
            hi = m2p;
        } else {
            lo = m1p;
        }
    }
    f(0.5 * (lo + hi))
}

/// One staircase step: the laminate replacing δ_A together with every scalar
/// a caller might audit.
#[derive(Clone, Debug)]
pub struct StaircaseStep {
    pub laminate: Laminate,
    pub n: u32,
    pub theta: f64,
    /// Magnitude of the anti-conformal component of A (t ≈ n).
    pub t: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub tf: ThetaFunctions,
    /// T₁ rest atom from the first split, if μ₁ > 0.
    pub atom_q: Option<ConformalMatrix>,
    /// Retirement atom t·Q₁ ∈ T₁, weight (1−μ₁)μ₂.
    pub atom_t1: ConformalMatrix,
    /// Retirement atom (n+1)·Q₂ ∈ T₂, weight (1−μ₁)(1−μ₂)μ₃.
    pub atom_t2: ConformalMatrix,
    /// Climb atom (n+1)·J·R_θ, weight `mass_up`.
    pub atom_climb: ConformalMatrix,
    /// Mass continuing to level n+1: (1−μ₁)(1−μ₂)(1−μ₃).
    pub mass_up: f64,
}

/// Distance from A to the full ray circle S_n = {n·J·R_θ : θ}.
pub fn dist_to_level(m: ConformalMatrix, n: u32) -> f64 {
    let radial = m.minus.norm() - n as f64;
    (2.0 * (m.plus.norm_sqr() + radial * radial)).sqrt()
}

/// Split A near n·J·R_θ into the step laminate.
///
/// Preconditions: n ≥ 1, 0 < δ < π/4, 0 ≤ ρ < min(m_const, 1/2) (with ρ = 0
/// only for A exactly on the ray), dist(A, S_n) ≤ ρ. `m_bound` is the
/// caller's precomputed [`m_const`] (it is θ-independent data of the pair).
pub fn step(
    spec: &TargetSpec,
    a: ConformalMatrix,
    n: u32,
    rho: f64,
    delta: f64,
    m_bound: f64,
) -> Result<StaircaseStep> {
    if n == 0 {
        return Err(Error::InvalidInput("step: level n must be ≥ 1".into()));
    }
    if !(delta > 0.0 && delta < std::f64::consts::FRAC_PI_4) {
        return Err(Error::InvalidInput(format!(
            "step: need 0 < δ < π/4, got {delta}"
        )));
    }
    if !(rho >= 0.0 && rho < m_bound.min(0.5)) {
        return Err(Error::InvalidInput(format!(
            "step: need 0 ≤ ρ < min(m_const, 1/2) = {}, got {rho}",
            m_bound.min(0.5)
        )));
    }
    let nf = n as f64;
    let d_level = dist_to_level(a, n);
    let slack = 1e-9 * nf;
    if d_level > rho + slack {
        return Err(Error::InvalidInput(format!(
            "step: dist(A, S_{n}) = {d_level:.6e} exceeds ρ = {rho:.6e}"
        )));
    }

    // First split: through the conformal line at infinity.
    let inf = spec.decompose_through_infinity(a)?;
    let theta = inf.theta;
    let t = inf.t;
    if (t - nf).abs() > 4.0 * rho + slack {
        // |t − n| tracks dist(A, S_n) up to a geometry factor ≤ 4 (measured
        // well under 2 in the sweeps; 4 pinned with margin).
        return Err(Error::Invariant(format!(
            "step: anti-conformal magnitude t = {t} strays from n = {n} beyond 4ρ"
        )));
    }
    let tf = theta_functions(spec, theta)?;

    // Second and third splits: their weights solve the 2×2 linear system
    // that recombines t·J·R_θ from {t·Q₁, (n+1)·Q₂, (n+1)·J·R_θ}.
    let excess = t - nf;
    let mu2 = (tf.m2 - excess * tf.m2) / (2.0 * nf + tf.m2 + excess * (2.0 - tf.m2));
    let mu3 = (tf.m1 - excess * tf.m1) / (2.0 * (nf + 1.0));
    for (name, mu) in [("μ₂", mu2), ("μ₃", mu3)] {
        if !(mu > 0.0 && mu < 1.0) {
            return Err(Error::Invariant(format!(
                "step: weight {name} = {mu} outside (0, 1) at n = {n}, t = {t}"
            )));
        }
    }

    let conn = spec.connect_to_conjugation(theta, tf.a)?;
    let atom_t1 = conn.q1.scale(t);
    let atom_t2 = conn.q2.scale(nf + 1.0);
    let atom_climb = ConformalMatrix::conj_rotation(theta).scale(nf + 1.0);

    let split3 = SplitTree::split(
        mu3,
        SplitTree::leaf(atom_t2),
        SplitTree::leaf(atom_climb),
        tol::RANK_ONE,
    )?;
    let split2 = SplitTree::split(mu2, SplitTree::leaf(atom_t1), split3, tol::RANK_ONE)?;

    // The recombined barycenter of splits 2+3 must be t·J·R_θ: this is the
    // definitional identity of μ₂, μ₃ and a strong end-to-end check.
    let t_jr = ConformalMatrix::conj_rotation(theta).scale(t);
    let recombine_err = (split2.matrix() - t_jr).hs_norm();
    if recombine_err > 1e-10 * t.max(1.0) {
        return Err(Error::Invariant(format!(
            "step: splits 2+3 recombine to {:.3e} away from t·J·R_θ",
            recombine_err
        )));
    }

    let (tree, mu1, atom_q) = if inf.mu1 > 0.0 {
        (
            SplitTree::split(inf.mu1, SplitTree::leaf(inf.q), split2, tol::RANK_ONE)?,
            inf.mu1,
            Some(inf.q),
        )
    } else {
        (split2, 0.0, None)
    };

    // Root must recombine to A itself.
    let root_err = (tree.matrix() - a).hs_norm();
    if root_err > 1e-10 * a.hs_norm().max(1.0) {
        return Err(Error::Invariant(format!(
            "step: laminate barycenter strays {root_err:.3e} from A"
        )));
    }

    // Angle bound propagated by the step: staying within the δ-sector only
    // costs ρ-sized angular drift.
    if theta.abs() > delta + rho + 1e-9 && rho > 0.0 {
        return Err(Error::Invariant(format!(
            "step: |θ_A| = {} exceeds δ + ρ = {}",
            theta.abs(),
            delta + rho
        )));
    }

    let mass_up = (1.0 - mu1) * (1.0 - mu2) * (1.0 - mu3);
    // Growth sandwich around the ideal ratio β.
    let lo = (1.0 - C_GROWTH * rho / nf).max(0.0) * tf.beta(n).max(0.0);
    let hi = (1.0 + C_GROWTH * rho / nf) * tf.beta(n + 2);
    if mass_up < lo - 1e-12 || mass_up > hi + 1e-12 {
        return Err(Error::Invariant(format!(
            "step: climbing mass {mass_up:.12} outside sandwich [{lo:.12}, {hi:.12}] at n = {n}"
        )));
    }

    Ok(StaircaseStep {
        laminate: Laminate::from_tree(tree, tol::RANK_ONE)?,
        n,
        theta,
        t,
        mu1,
        mu2,
        mu3,
        tf,
        atom_q,
        atom_t1,
        atom_t2,
        atom_climb,
        mass_up,
    })
}

/// One level of the exact (ρ = 0) staircase iteration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LevelRow {
    pub n: u32,
    /// Mass arriving at n·J·R_θ.
    pub mass_at_level: f64,
    pub mu2: f64,
    pub mu3: f64,
    /// Mass retired onto T₁ at this level (atom n·Q₁).
    pub retired_t1: f64,
    /// Mass retired onto T₂ at this level (atom (n+1)·Q₂).
    pub retired_t2: f64,
    pub norm_t1: f64,
    pub norm_t2: f64,
    pub norm_climb: f64,
}

/// Schema tag written as the leading comment row of level CSVs.
pub const LEVELS_SCHEMA: &str = "gradint-levels/1";

/// The exact staircase iterated to a finite depth.
#[derive(Clone, Debug)]
pub struct StaircaseSequence {
    pub theta: f64,
    pub tf: ThetaFunctions,
    pub levels: Vec<LevelRow>,
    /// Mass left on the climb atom (n_max+1)·J·R_θ.
    pub final_climb_mass: f64,
    pub laminate: Laminate,
}

/// Iterate the exact step from 1·J·R_θ up to level `n_max`, producing the
/// full laminate with 2·n_max + 1 atoms. Starting exactly on the ray keeps
/// θ frozen and μ₁ ≡ 0 at every level.
pub fn iterate(spec: &TargetSpec, theta: f64, n_max: u32) -> Result<StaircaseSequence> {
    if n_max == 0 {
        return Err(Error::InvalidInput("iterate: n_max ≥ 1 required".into()));
    }
    let tf = theta_functions(spec, theta)?;
    let conn = spec.connect_to_conjugation(theta, tf.a)?;

    let mut levels = Vec::with_capacity(n_max as usize);
    let mut mass = 1.0f64;
    for n in 1..=n_max {
        let nf = n as f64;
        let mu2 = tf.m2 / (2.0 * nf + tf.m2);
        let mu3 = tf.m1 / (2.0 * (nf + 1.0));
        let norm_t1 = conn.q1.hs_norm() * nf;
        let norm_t2 = conn.q2.hs_norm() * (nf + 1.0);
        let norm_climb = std::f64::consts::SQRT_2 * (nf + 1.0);
        levels.push(LevelRow {
            n,
            mass_at_level: mass,
            mu2,
            mu3,
            retired_t1: mass * mu2,
            retired_t2: mass * (1.0 - mu2) * mu3,
            norm_t1,
            norm_t2,
            norm_climb,
        });
        mass *= (1.0 - mu2) * (1.0 - mu3);
    }

    // Build the laminate tree bottom-up: the deepest climb atom first.
    let mut tree = SplitTree::leaf(
        ConformalMatrix::conj_rotation(theta).scale((n_max + 1) as f64),
    );
    for row in levels.iter().rev() {
        let nf = row.n as f64;
        let atom_t2 = conn.q2.scale(nf + 1.0);
        let atom_t1 = conn.q1.scale(nf);
        let split3 = SplitTree::split(row.mu3, SplitTree::leaf(atom_t2), tree, tol::RANK_ONE)?;
        tree = SplitTree::split(row.mu2, SplitTree::leaf(atom_t1), split3, tol::RANK_ONE)?;
    }
    let laminate = Laminate::from_tree(tree, tol::RANK_ONE)?;

    Ok(StaircaseSequence {
        theta,
        tf,
        levels,
        final_climb_mass: mass,
        laminate,
    })
}

impl StaircaseSequence {
    /// Cumulative p-moment of the retired atoms by level: the partial sums
    /// Σ_{m ≤ n} [w_m^{T₁}·|m·Q₁|^p + w_m^{T₂}·|(m+1)·Q₂|^p]. Diverges
    /// logarithmically at p = p(θ) and converges below it.
    pub fn retired_moment_partial_sums(&self, p: f64) -> Vec<f64> {
        let mut acc = 0.0;
        self.levels
            .iter()
            .map(|row| {
                acc += row.retired_t1 * row.norm_t1.powf(p)
                    + row.retired_t2 * row.norm_t2.powf(p);
                acc
            })
            .collect()
    }

    /// Level rows as CSV (with a `schema` comment row carrying the version).
    pub fn write_levels_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "# schema: {LEVELS_SCHEMA}")?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "n",
            "mass_at_level",
            "mu2",
            "mu3",
            "retired_t1",
            "retired_t2",
            "norm_t1",
            "norm_t2",
            "norm_climb",
        ])
        .map_err(csv_err)?;
        for row in &self.levels {
            wtr.write_record([
                row.n.to_string(),
                fmt_float(row.mass_at_level),
                fmt_float(row.mu2),
                fmt_float(row.mu3),
                fmt_float(row.retired_t1),
                fmt_float(row.retired_t2),
                fmt_float(row.norm_t1),
                fmt_float(row.norm_t2),
                fmt_float(row.norm_climb),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Deterministic float formatting for CSV artifacts: Rust's `{}` on f64 is
/// the shortest string that round-trips, which keeps outputs byte-stable.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Largest residual |log Π_{j=3}^n β_j(θ) + p(θ)·log n| over 3 ≤ n ≤ n_max.
/// Bounded uniformly in n (the product is what makes the staircase mass decay
/// like n^{−p}); the acceptance suite pins the bound.
pub fn beta_residual_max(tf: &ThetaFunctions, n_max: u32) -> f64 {
    let p = tf.p;
    let mut acc = 0.0f64;
    let mut worst = 0.0f64;
    for j in 3..=n_max {
        let beta = 1.0 - p / j as f64;
        debug_assert!(beta > 0.0, "β_j > 0 for j ≥ 3 since p < 2");
        acc += beta.ln();
        let r = acc + p * (j as f64).ln();
        worst = worst.max(r.abs());
    }
    worst
}

/// Tolerance schedule for a finite-depth realization run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepTolerances {
    /// Base proximity radius ρ₁.
    pub rho1: f64,
    /// Sector half-width δ.
    pub delta: f64,
    /// m_const of the pair.
    pub m_bound: f64,
    /// dist(S₁, T₁ ∪ T₂) of the pair.
    pub dist_s1: f64,
}

impl StepTolerances {
    /// ρ_n = min(ρ₁, 0.99·(δ/4)·2^{−n}).
    pub fn rho(&self, n: u32) -> f64 {
        self.rho1.min(0.99 * self.delta / 4.0 * 0.5f64.powi(n as i32))
    }

    /// δ_n = Σ_{j<n} ρ_j < δ/2, the accumulated angular drift budget.
    pub fn delta_drift(&self, n: u32) -> f64 {
        (1..n).map(|j| self.rho(j)).sum()
    }
}

/// Choose δ from the target oscillation δ₀ of the exponent: the largest
/// δ ≤ 0.99·π/4 with p(0) − p(δ) ≤ δ₀ (p is even and decreasing in |θ|).
pub fn delta_for_exponent_oscillation(spec: &TargetSpec, delta0: f64) -> Result<f64> {
    let cap = 0.99 * std::f64::consts::FRAC_PI_4;
    let p0 = theta_functions(spec, 0.0)?.p;
    let n = 512;
    let mut best = cap / n as f64; // always admissible for tiny δ by continuity
    for i in 1..=n {
        let d = cap * i as f64 / n as f64;
        let p = theta_functions(spec, d)?.p;
        if p0 - p <= delta0 {
            best = d;
        } else {
            break;
        }
    }
    Ok(best)
}

/// Build the default tolerance schedule: ρ₁ = 0.99·¼·min(m_const, 1/ĉ,
/// dist(S₁, T), γ) with ĉ the empirical geometry constant of the
/// through-infinity decomposition.
pub fn default_tolerances(
    spec: &TargetSpec,
    gamma: f64,
    delta0: f64,
    c_hat: f64,
) -> Result<StepTolerances> {
    let m_bound = m_const(spec)?;
    let dist_s1 = spec.dist_conj_to_targets(0.0);
    let delta = delta_for_exponent_oscillation(spec, delta0)?;
    let rho1 = 0.99 * 0.25 * m_bound.min(1.0 / c_hat).min(dist_s1).min(gamma);
    Ok(StepTolerances {
        rho1,
        delta,
        m_bound,
        dist_s1,
    })
}

/// The endpoint connection data (r, a(R_θ)) for θ = 0 or θ = π/2 in exact
/// arithmetic: a(R_0) = 1/k, a(R_{π/2}) = i/s.
fn exact_endpoint_direction(spec: &RatTargetSpec, at_zero: bool) -> (RatComplex, RatComplex) {
    let one = Rat::from_integer(1.into());
    let two = &one + &one;
    if at_zero {
        (
            RatComplex::from_i64(1, 0),
            RatComplex::new(one.clone() / spec.k.clone(), Rat::from_integer(0.into())),
        )
    } else {
        let s_mean = (&spec.s1 + &spec.s2) / &two;
        (
            RatComplex::from_i64(0, 1),
            RatComplex::new(Rat::from_integer(0.into()), one / s_mean),
        )
    }
}

/// Exact θ-function values at the rational endpoints θ = 0 (r = 1) and
/// θ = π/2 (r = i). Returns (λ₁, λ₂, l, L, p) as exact rationals, or `None`
/// when an intermediate square root is irrational (cannot happen at the
/// endpoints: λ_j(0) = k/(1+k), λ_j(π/2) = s/(1+s_j)).
pub fn exact_endpoint(spec: &RatTargetSpec, at_zero: bool) -> Option<(Rat, Rat, Rat, Rat, Rat)> {
    let one = Rat::from_integer(1.into());
    let two = &one + &one;
    let (r, a) = exact_endpoint_direction(spec, at_zero);
    let l1 = spec.connect_lambda(Phase::One, &r, &a)?;
    let l2 = spec.connect_lambda(Phase::Two, &r, &a)?;
    let denom = &l1 + &l2 - &two * &l1 * &l2;
    let m1 = &two * &l1 / &denom;
    let m2 = &two * &l2 / &denom;
    let l = (&m1 + &m2) / &two - &one;
    let big_l = (&one + &l) / (&one - &l);
    let p = &one + &l;
    Some((l1, l2, l, big_l, p))
}

/// Exact one-step weights at t = n for an endpoint angle: (μ₂, μ₃).
pub fn exact_step_weights(spec: &RatTargetSpec, at_zero: bool, n: u32) -> Option<(Rat, Rat)> {
    let one = Rat::from_integer(1.into());
    let two = &one + &one;
    let (r, a) = exact_endpoint_direction(spec, at_zero);
    let l1 = spec.connect_lambda(Phase::One, &r, &a)?;
    let l2 = spec.connect_lambda(Phase::Two, &r, &a)?;
    let denom = &l1 + &l2 - &two * &l1 * &l2;
    let m1 = &two * &l1 / &denom;
    let m2 = &two * &l2 / &denom;
    let nf = Rat::from_integer(n.into());
    let mu2 = m2.clone() / (&two * &nf + &m2);
    let mu3 = m1 / (&two * (&nf + &one));
    Some((mu2, mu3))
}
