//! The two target lines T₁, T₂ and the elementary rank-one decompositions.
//!
//! In plus/minus coordinates the two phases of the construction live on the
//! real-linear planes
//!
//! ```text
//!     T₁ = { (a,  d₁(ā)) : a ∈ ℂ },   T₂ = { (a, −d₂(ā)) : a ∈ ℂ },
//!     d_j(a) = k·Re a + i·s_j·Im a,
//! ```
//!
//! where k, s₁, s₂ are the reduced slopes of the diagonal pair. Matrices in
//! T_j are exactly the gradients compatible with phase j: both planes avoid
//! rank-one matrices (every nonzero Q ∈ T_j has det Q > 0), which is what
//! forces the staircase to climb through ever larger gradients instead of
//! settling.
//!
//! Two decompositions generate every staircase step:
//!
//! * [`TargetSpec::decompose_through_infinity`] writes any A off T₁ as a
//!   convex combination of a T₁ point and an anti-conformal matrix t·J·R_θ
//!   with rank-one difference — the "climb" direction.
//! * [`TargetSpec::connect_to_conjugation`] produces, for a conjugation point
//!   J·R_θ and a direction a, the unique scalings Q₁ ∈ T₁, Q₂ ∈ T₂ along
//!   (±a, d_j(ā)) that are rank-one connected to J·R_θ — the "rest" points.
//!
//! Both reduce to a real quadratic whose stable root is used throughout.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficients::DiagonalPairParams;
use crate::conformal::ConformalMatrix;
use crate::rational::{sqrt_exact, Rat, RatComplex, RatMatrix};
use crate::{tol, Error, Result};

/// Phase index of a target plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Target geometry of a diagonal pair: the slopes (k, s₁, s₂) plus every
/// operation that only depends on them.
#[derive(Clone, Copy, Debug)]
pub struct TargetSpec {
    pub params: DiagonalPairParams,
    k: f64,
    s1: f64,
    s2: f64,
}

/// Result of [`TargetSpec::decompose_through_infinity`]: the rank-one convex
/// split A = mu1·q + (1 − mu1)·p with q ∈ T₁ and p = t·J·R_θ anti-conformal.
#[derive(Clone, Copy, Debug)]
pub struct InfinityDecomposition {
    /// T₁ component (carries weight `mu1`).
    pub q: ConformalMatrix,
    /// Anti-conformal component t·J·R_θ (carries weight 1 − mu1).
    pub p: ConformalMatrix,
    /// Weight of `q`; 0 exactly when A is itself anti-conformal.
    pub mu1: f64,
    /// Magnitude of p as a multiple of J·R_θ (so |p|_HS = √2·t).
    pub t: f64,
    /// Angle of p: p = t·J·R_θ; equals `theta_of(A)` in the regular branch.
    pub theta: f64,
}

/// Result of [`TargetSpec::connect_to_conjugation`]: the two target points
/// rank-one connected to J·R_θ along a prescribed direction.
#[derive(Clone, Copy, Debug)]
pub struct ConjugationConnection {
    /// Q₁ = λ₁·(a, d₁(ā)) ∈ T₁ with det(Q₁ − J·R_θ) = 0.
    pub q1: ConformalMatrix,
    /// Q₂ = λ₂·(−a, d₂(ā)) ∈ T₂ with det(Q₂ − J·R_θ) = 0.
    pub q2: ConformalMatrix,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl TargetSpec {
    pub fn new(params: DiagonalPairParams) -> Self {
        Self {
            params,
            k: params.k(),
            s1: params.s1(),
            s2: params.s2(),
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn slope(&self, j: Phase) -> f64 {
        match j {
            Phase::One => self.s1,
            Phase::Two => self.s2,
        }
    }

    /// The slope operator d_j(a) = k·Re a + i·s_j·Im a.
    pub fn d_op(&self, j: Phase, a: Complex64) -> Complex64 {
        Complex64::new(self.k * a.re, self.slope(j) * a.im)
    }

    /// The point of T_j with conformal part `a`.
    pub fn target_point(&self, j: Phase, a: Complex64) -> ConformalMatrix {
        // d_j(ā) = conj(d_j(a)), and T₂ carries the opposite sign.
        let d = self.d_op(j, a).conj();
        match j {
            Phase::One => ConformalMatrix::new(a, d),
            Phase::Two => ConformalMatrix::new(a, -d),
        }
    }

    /// Orthogonal (Hilbert–Schmidt) projection of A onto T_j. The plane is
    /// axis-separable, so the projection splits into two scalar least-squares
    /// problems for Re a and Im a.
    pub fn project(&self, j: Phase, m: ConformalMatrix) -> ConformalMatrix {
        let k = self.k;
        let s = self.slope(j);
        let sign = match j {
            Phase::One => 1.0,
            Phase::Two => -1.0,
        };
        // Minimize |x − a|² + |y − sign·conj(d_j(a))|² over a = u + iv:
        // the Re-part couples (x.re, y.re) through k, the Im-part couples
        // (x.im, y.im) through s_j with opposite conjugation signs.
        let x = m.plus;
        let y = m.minus;
        let u = (x.re + sign * k * y.re) / (1.0 + k * k);
        let v = (x.im - sign * s * y.im) / (1.0 + s * s);
        self.target_point(j, Complex64::new(u, v))
    }

    /// Hilbert–Schmidt distance from A to T_j, in closed form.
    pub fn dist(&self, j: Phase, m: ConformalMatrix) -> f64 {
        let k = self.k;
        let s = self.slope(j);
        let sign = match j {
            Phase::One => 1.0,
            Phase::Two => -1.0,
        };
        let x = m.plus;
        let y = m.minus;
        let re_residual = (k * x.re - sign * y.re).powi(2) / (1.0 + k * k);
        let im_residual = (s * x.im + sign * y.im).powi(2) / (1.0 + s * s);
        (2.0 * (re_residual + im_residual)).sqrt()
    }

    /// Distance to T₁ ∪ T₂ together with the nearer phase (ties → One).
    pub fn dist_to_union(&self, m: ConformalMatrix) -> (Phase, f64) {
        let d1 = self.dist(Phase::One, m);
        let d2 = self.dist(Phase::Two, m);
        if d1 <= d2 {
            (Phase::One, d1)
        } else {
            (Phase::Two, d2)
        }
    }

    /// The staircase angle of A = (a, b): θ_A = −arg(b − d₁(ā)) ∈ [−π, π).
    /// Errors when A is degenerate — within relative distance
    /// [`tol::DEGENERATE`] of T₁ (where the angle is undefined) or zero.
    pub fn theta_of(&self, m: ConformalMatrix) -> Result<f64> {
        let scale = m.hs_norm();
        if scale == 0.0 {
            return Err(Error::InvalidInput(
                "theta_of: zero matrix has no angle".into(),
            ));
        }
        let w = self.d_op(Phase::One, m.plus).conj();
        let u = m.minus - w;
        if u.norm() <= tol::DEGENERATE * scale {
            return Err(Error::InvalidInput(format!(
                "theta_of: matrix within {:.0e} of T₁, angle undefined",
                tol::DEGENERATE
            )));
        }
        Ok(-u.arg())
    }

    /// Split A (off T₁, nonzero) as mu1·Q + (1−mu1)·P with Q ∈ T₁,
    /// P = t·J·R_θ, and Q − P rank one.
    ///
    /// Writing w = d₁(ā), u = b − w, the rank-one scaling solves
    /// t₀²|u|² − 2t₀·Re(w̄u) − (|a|²−|w|²) = 0; with τ = 1/t₀ the stable form
    /// is τ₀ = C/(√(B²+AC) + B) for A = |a|²−|w|², B = Re(w̄u), C = |u|².
    /// Then Q = (1+τ₀)(a, w), P = (1+t₀)(0, u), mu1 = 1/(1+τ₀).
    ///
    /// Anti-conformal A (a ≈ 0) returns the degenerate split mu1 = 0, P = A.
    pub fn decompose_through_infinity(&self, m: ConformalMatrix) -> Result<InfinityDecomposition> {
        let scale = m.hs_norm();
        if scale == 0.0 {
            return Err(Error::InvalidInput(
                "decompose_through_infinity: zero matrix".into(),
            ));
        }
        let a = m.plus;
        let b = m.minus;
        if a.norm() <= tol::DEGENERATE * scale {
            // Already anti-conformal: nothing to split.
            let t = b.norm();
            return Ok(InfinityDecomposition {
                q: ConformalMatrix::zero(),
                p: ConformalMatrix::new(Complex64::new(0.0, 0.0), b),
                mu1: 0.0,
                t,
                theta: -b.arg(),
            });
        }
        let w = self.d_op(Phase::One, a).conj();
        let u = b - w;
        if u.norm() <= tol::DEGENERATE * scale {
            return Err(Error::InvalidInput(
                "decompose_through_infinity: matrix on T₁ admits no anti-conformal split".into(),
            ));
        }
        let big_a = a.norm_sqr() - w.norm_sqr();
        debug_assert!(
            big_a > 0.0,
            "|d₁(ā)| ≤ k|a| < |a| forces a positive gap, got {big_a}"
        );
        let big_b = (w.conj() * u).re;
        let big_c = u.norm_sqr();
        let tau = big_c / ((big_b * big_b + big_a * big_c).sqrt() + big_b);
        let t0 = 1.0 / tau;
        let q = ConformalMatrix::new(a, w).scale(1.0 + tau);
        let p = ConformalMatrix::new(Complex64::new(0.0, 0.0), u * (1.0 + t0));
        Ok(InfinityDecomposition {
            q,
            p,
            mu1: 1.0 / (1.0 + tau),
            t: p.minus.norm(),
            theta: -u.arg(),
        })
    }

    /// For the conjugation point J·R_θ and a direction a ≠ 0, the scalings
    /// λ_j > 0 making Q₁ = λ₁(a, d₁(ā)) and Q₂ = λ₂(−a, d₂(ā)) rank-one
    /// connected to J·R_θ: λ_j solves A_jλ² + 2B_jλ − 1 = 0 with
    /// A_j = |a|² − |d_j(a)|², B_j = Re(r̄·d_j(a)), r = e^{iθ}, via the
    /// stable root λ_j = 1/(√(B_j²+A_j) + B_j).
    pub fn connect_to_conjugation(&self, theta: f64, a: Complex64) -> Result<ConjugationConnection> {
        if a.norm() == 0.0 {
            return Err(Error::InvalidInput(
                "connect_to_conjugation: zero direction".into(),
            ));
        }
        let r = Complex64::from_polar(1.0, theta);
        let mut lambda = [0.0; 2];
        for (slot, j) in [(0, Phase::One), (1, Phase::Two)] {
            let d = self.d_op(j, a);
            let big_a = a.norm_sqr() - d.norm_sqr();
            debug_assert!(big_a > 0.0, "slopes < 1 force |d_j(a)| < |a|");
            let big_b = (r.conj() * d).re;
            lambda[slot] = 1.0 / ((big_b * big_b + big_a).sqrt() + big_b);
        }
        let q1 = self.target_point(Phase::One, a * lambda[0]);
        let q2 = self.target_point(Phase::Two, -a * lambda[1]);
        Ok(ConjugationConnection {
            q1,
            q2,
            lambda1: lambda[0],
            lambda2: lambda[1],
        })
    }

    /// Distance from the ray of conjugation points {n·J·R_θ} to T₁ ∪ T₂ at
    /// n = 1, in closed form: dist²(J·R_θ, T_j) = 2[cos²θ/(1+k²) + sin²θ/(1+s_j²)],
    /// minimized over j by the larger slope. Scales linearly in n.
    pub fn dist_conj_to_targets(&self, theta: f64) -> f64 {
        let c2 = theta.cos().powi(2);
        let s2 = theta.sin().powi(2);
        let d = |slope: f64| 2.0 * (c2 / (1.0 + self.k * self.k) + s2 / (1.0 + slope * slope));
        d(self.s1).min(d(self.s2)).sqrt()
    }
}

/// Exact-rational twin of the target geometry, for oracle checks at rational
/// slopes and rational conjugation points (θ = 0 or π/2). All outputs are
/// exact; square roots must be perfect squares or the routine reports `None`.
#[derive(Clone, Debug)]
pub struct RatTargetSpec {
    pub k: Rat,
    pub s1: Rat,
    pub s2: Rat,
}

impl RatTargetSpec {
    /// From exact normal-form parameters K, S₁, S₂ (already sign-normalized).
    pub fn new(big_k: Rat, big_s1: Rat, big_s2: Rat) -> Self {
        let one = Rat::from_integer(1.into());
        let slope = |s: &Rat| (s - &one) / (s + &one);
        Self {
            k: slope(&big_k),
            s1: slope(&big_s1),
            s2: slope(&big_s2),
        }
    }

    pub fn d_op(&self, j: Phase, a: &RatComplex) -> RatComplex {
        let s = match j {
            Phase::One => &self.s1,
            Phase::Two => &self.s2,
        };
        RatComplex::new(&self.k * &a.re, s * &a.im)
    }

    pub fn target_point(&self, j: Phase, a: &RatComplex) -> RatMatrix {
        let d = self.d_op(j, a).conj();
        match j {
            Phase::One => RatMatrix::new(a.clone(), d),
            Phase::Two => RatMatrix::new(a.clone(), d.neg()),
        }
    }

    /// Exact λ_j for [`TargetSpec::connect_to_conjugation`]; `None` when the
    /// discriminant is not a perfect square.
    pub fn connect_lambda(&self, j: Phase, r: &RatComplex, a: &RatComplex) -> Option<Rat> {
        let d = self.d_op(j, a);
        let big_a = a.norm_sqr() - d.norm_sqr();
        let big_b = r.conj().mul(&d).re;
        let root = sqrt_exact(&(&big_b * &big_b + big_a))?;
        Some(Rat::from_integer(1.into()) / (root + big_b))
    }

    /// Exact connection (Q₁, Q₂, λ₁, λ₂) at a rational conjugation point.
    pub fn connect(
        &self,
        r: &RatComplex,
        a: &RatComplex,
    ) -> Option<(RatMatrix, RatMatrix, Rat, Rat)> {
        let l1 = self.connect_lambda(Phase::One, r, a)?;
        let l2 = self.connect_lambda(Phase::Two, r, a)?;
        let q1 = self.target_point(Phase::One, &a.scale(&l1));
        let q2 = self.target_point(Phase::Two, &a.scale(&l2).neg());
        Some((q1, q2, l1, l2))
    }
}
