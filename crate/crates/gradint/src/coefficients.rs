//! Elliptic coefficient pairs and their critical integrability exponents.
//!
//! For a pair (σ₁, σ₂) of uniformly elliptic 2×2 matrices, gradients of
//! solutions to the two-phase equation div(σ∇u) = 0, σ ∈ {σ₁, σ₂}, are
//! integrable up to a critical exponent p and from a dual exponent q that
//! depend only on two scalar invariants of the pair:
//!
//! ```text
//!     m = [σ₂¹¹σ₁²² + σ₁¹¹σ₂²² − ½(σ₂¹²+σ₂²¹)(σ₁¹²+σ₁²¹)] / √(d₁d₂)
//!     n = [det σ₁ + det σ₂ − ½(σ₁²¹−σ₁¹²)(σ₂²¹−σ₂¹²)] / √(d₁d₂)
//! ```
//!
//! with d_i = det((σ_i+σ_iᵀ)/2). Both are ≥ 2, and the critical distortion is
//!
//! ```text
//!     K = √[(m+√(m²−4))/2] · √[(n+√(n²−4))/2],   q = 2K/(K+1),  p = 2K/(K−1).
//! ```
//!
//! The staircase construction itself works in a diagonal normal form
//! σ₁ = diag(1/K, 1/S₁), σ₂ = diag(K, S₂) with S₁, S₂ ∈ [1/K, K], described
//! here by [`DiagonalPairParams`]. The Beltrami translation between a
//! coefficient matrix and the complex dilatations (μ, ν) of the associated
//! quasiregular map is included in both directions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{tol, Error, Result};

/// A pair of 2×2 coefficient matrices, row-major.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoefficientPair {
    pub sigma1: [[f64; 2]; 2],
    pub sigma2: [[f64; 2]; 2],
}

/// Critical exponents of a pair, with the intermediate invariants kept for
/// inspection.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CriticalExponents {
    /// Invariant m (mixed products of the two matrices), ≥ 2.
    pub m: f64,
    /// Invariant n (determinants and antisymmetric parts), ≥ 2.
    pub n: f64,
    /// Critical distortion K ≥ 1.
    pub k: f64,
    /// Lower critical exponent q = 2K/(K+1) ∈ (1, 2].
    pub q: f64,
    /// Upper critical exponent p = 2K/(K−1) ∈ [2, ∞); ∞ when K = 1.
    pub p: f64,
}

fn det2(m: [[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Smallest eigenvalue of the symmetric part of `m`.
fn sym_min_eig(m: [[f64; 2]; 2]) -> f64 {
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.5 * (a - d)).powi(2) + b * b;
    half_tr - disc.sqrt()
}

/// Check uniform ellipticity of one coefficient matrix: the symmetric part
/// must be positive definite with margin [`tol::ELLIPTICITY`].
pub fn check_elliptic(m: [[f64; 2]; 2], name: &str) -> Result<()> {
    for i in 0..2 {
        for j in 0..2 {
            if !m[i][j].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name}[{i}][{j}] is not finite"
                )));
            }
        }
    }
    let lam = sym_min_eig(m);
    if lam <= tol::ELLIPTICITY {
        return Err(Error::InvalidInput(format!(
            "{name} is not uniformly elliptic: min symmetric eigenvalue {lam:.3e} ≤ {:.0e}",
            tol::ELLIPTICITY
        )));
    }
    Ok(())
}

impl CoefficientPair {
    pub fn new(sigma1: [[f64; 2]; 2], sigma2: [[f64; 2]; 2]) -> Result<Self> {
        check_elliptic(sigma1, "sigma1")?;
        check_elliptic(sigma2, "sigma2")?;
        Ok(Self { sigma1, sigma2 })
    }
}

/// Critical exponents for a general elliptic pair.
pub fn critical_exponents(pair: &CoefficientPair) -> Result<CriticalExponents> {
    check_elliptic(pair.sigma1, "sigma1")?;
    check_elliptic(pair.sigma2, "sigma2")?;
    let s1 = pair.sigma1;
    let s2 = pair.sigma2;
    let d1 = det2([
        [s1[0][0], 0.5 * (s1[0][1] + s1[1][0])],
        [0.5 * (s1[0][1] + s1[1][0]), s1[1][1]],
    ]);
    let d2 = det2([
        [s2[0][0], 0.5 * (s2[0][1] + s2[1][0])],
        [0.5 * (s2[0][1] + s2[1][0]), s2[1][1]],
    ]);
    debug_assert!(d1 > 0.0 && d2 > 0.0, "ellipticity was checked above");
    let root = (d1 * d2).sqrt();

    let m = (s2[0][0] * s1[1][1] + s1[0][0] * s2[1][1]
        - 0.5 * (s2[0][1] + s2[1][0]) * (s1[0][1] + s1[1][0]))
        / root;
    let n = (det2(s1) + det2(s2) - 0.5 * (s1[1][0] - s1[0][1]) * (s2[1][0] - s2[0][1])) / root;

    // Both invariants are ≥ 2 for elliptic pairs; tolerate rounding at the
    // equality case (conformal pairs) but reject anything genuinely below.
    let slack = 1e-9 * (1.0 + m.abs().max(n.abs()));
    if m < 2.0 - slack || n < 2.0 - slack {
        return Err(Error::Invariant(format!(
            "invariants out of range for an elliptic pair: m = {m:.15}, n = {n:.15}"
        )));
    }
    let m_eff = m.max(2.0);
    let n_eff = n.max(2.0);
    let k = (0.5 * (m_eff + (m_eff * m_eff - 4.0).sqrt())).sqrt()
        * (0.5 * (n_eff + (n_eff * n_eff - 4.0).sqrt())).sqrt();
    let q = 2.0 * k / (k + 1.0);
    let p = if k > 1.0 {
        2.0 * k / (k - 1.0)
    } else {
        f64::INFINITY
    };
    Ok(CriticalExponents { m, n, k, q, p })
}

/// Complex dilatations (μ, ν) of the quasiregular map whose real part solves
/// div(σ∇u) = 0. The pair is admissible iff |μ| + |ν| < 1.
pub fn beltrami_from_sigma(sigma: [[f64; 2]; 2]) -> Result<(Complex64, Complex64)> {
    check_elliptic(sigma, "sigma")?;
    let s = sigma;
    let denom = 1.0 + s[0][0] + s[1][1] + det2(s);
    debug_assert!(denom > 0.0, "1 + tr σ + det σ > 0 under ellipticity");
    let mu = Complex64::new(s[1][1] - s[0][0], -(s[0][1] + s[1][0])) / denom;
    let nu = Complex64::new(1.0 - det2(s), s[0][1] - s[1][0]) / denom;
    Ok((mu, nu))
}

/// Inverse Beltrami translation: the coefficient matrix with dilatations
/// (μ, ν). Requires ellipticity |μ| + |ν| < 1.
pub fn sigma_from_beltrami(mu: Complex64, nu: Complex64) -> Result<[[f64; 2]; 2]> {
    let ell = mu.norm() + nu.norm();
    if !(ell < 1.0 - tol::ELLIPTICITY) {
        return Err(Error::InvalidInput(format!(
            "dilatations not uniformly elliptic: |mu| + |nu| = {ell:.15}"
        )));
    }
    let denom = (Complex64::new(1.0, 0.0) + nu).norm_sqr() - mu.norm_sqr();
    let one_minus = (Complex64::new(1.0, 0.0) - mu).norm_sqr() - nu.norm_sqr();
    let one_plus = (Complex64::new(1.0, 0.0) + mu).norm_sqr() - nu.norm_sqr();
    Ok([
        [one_minus / denom, 2.0 * (nu.im - mu.im) / denom],
        [-2.0 * (nu.im + mu.im) / denom, one_plus / denom],
    ])
}

/// Parameters of a pair in diagonal normal form
/// σ₁ = diag(1/K, 1/S₁), σ₂ = diag(K, S₂), K > 1, S₁, S₂ ∈ [1/K, K].
///
/// The staircase geometry only sees the reduced slopes
///
/// ```text
///     k = (K−1)/(K+1),   s_j = (S_j−1)/(S_j+1),   s = (s₁+s₂)/2,
/// ```
///
/// and is mirror-symmetric under flipping the signs of both s_j. Pairs with
/// s < 0 are therefore handled by flipping (recorded in `flipped`); pairs
/// with s ≈ 0 fall outside the supported construction and are rejected.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiagonalPairParams {
    /// Distortion parameter K of the normal form (also the critical
    /// distortion of the pair).
    pub big_k: f64,
    /// S₁ as given.
    pub big_s1: f64,
    /// S₂ as given.
    pub big_s2: f64,
    /// Whether the working slopes below were sign-flipped to make s > 0.
    pub flipped: bool,
}

impl DiagonalPairParams {
    pub fn new(big_k: f64, big_s1: f64, big_s2: f64) -> Result<Self> {
        if !(big_k.is_finite() && big_k > 1.0) {
            return Err(Error::InvalidInput(format!(
                "normal form requires K > 1, got {big_k}"
            )));
        }
        for (name, s) in [("S1", big_s1), ("S2", big_s2)] {
            if !(s.is_finite() && s >= 1.0 / big_k - 1e-12 && s <= big_k + 1e-12) {
                return Err(Error::InvalidInput(format!(
                    "normal form requires {name} ∈ [1/K, K] = [{:.6}, {:.6}], got {s}",
                    1.0 / big_k,
                    big_k
                )));
            }
        }
        let raw_s1 = (big_s1 - 1.0) / (big_s1 + 1.0);
        let raw_s2 = (big_s2 - 1.0) / (big_s2 + 1.0);
        let s = 0.5 * (raw_s1 + raw_s2);
        if s.abs() < tol::S_MEAN {
            return Err(Error::Unsupported(format!(
                "mean diagonal deviation s = {s:.3e} vanishes; the staircase \
                 construction requires s ≠ 0"
            )));
        }
        Ok(Self {
            big_k,
            big_s1,
            big_s2,
            flipped: s < 0.0,
        })
    }

    /// Validate that a pair is in diagonal normal form and extract parameters.
    pub fn from_pair(pair: &CoefficientPair) -> Result<Self> {
        let s1 = pair.sigma1;
        let s2 = pair.sigma2;
        let off = s1[0][1].abs() + s1[1][0].abs() + s2[0][1].abs() + s2[1][0].abs();
        if off > 1e-12 {
            return Err(Error::InvalidInput(
                "pair is not diagonal; bring it to normal form first".into(),
            ));
        }
        let big_k = s2[0][0];
        if big_k <= 1.0 {
            return Err(Error::InvalidInput(format!(
                "normal form requires σ₂[0][0] = K > 1, got {big_k}"
            )));
        }
        if (s1[0][0] * big_k - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "σ₁[0][0] = {} is not 1/K for K = {big_k}",
                s1[0][0]
            )));
        }
        if s1[1][1] <= 0.0 {
            return Err(Error::InvalidInput("σ₁[1][1] must be positive".into()));
        }
        Self::new(big_k, 1.0 / s1[1][1], s2[1][1])
    }

    /// k = (K−1)/(K+1) ∈ (0, 1).
    pub fn k(&self) -> f64 {
        (self.big_k - 1.0) / (self.big_k + 1.0)
    }

    /// Working slope s₁ (sign-flipped when `flipped`).
    pub fn s1(&self) -> f64 {
        let raw = (self.big_s1 - 1.0) / (self.big_s1 + 1.0);
        if self.flipped {
            -raw
        } else {
            raw
        }
    }

    /// Working slope s₂ (sign-flipped when `flipped`).
    pub fn s2(&self) -> f64 {
        let raw = (self.big_s2 - 1.0) / (self.big_s2 + 1.0);
        if self.flipped {
            -raw
        } else {
            raw
        }
    }

    /// Mean slope s = (s₁ + s₂)/2 > 0 after the flip convention.
    pub fn s(&self) -> f64 {
        0.5 * (self.s1() + self.s2())
    }

    /// S = (1+s)/(1−s) ∈ (1, K]: the staircase distribution exponent p(θ)
    /// ranges over [2S/(S+1), 2K/(K+1)], with S = K exactly when S₁ = S₂ = K.
    pub fn big_s(&self) -> f64 {
        let s = self.s();
        (1.0 + s) / (1.0 - s)
    }

    /// σ₁ = diag(1/K, 1/S₁) as given (not flipped).
    pub fn sigma1(&self) -> [[f64; 2]; 2] {
        [[1.0 / self.big_k, 0.0], [0.0, 1.0 / self.big_s1]]
    }

    /// σ₂ = diag(K, S₂) as given (not flipped).
    pub fn sigma2(&self) -> [[f64; 2]; 2] {
        [[self.big_k, 0.0], [0.0, self.big_s2]]
    }

    pub fn pair(&self) -> CoefficientPair {
        CoefficientPair {
            sigma1: self.sigma1(),
            sigma2: self.sigma2(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn isotropic_two_phase_pair_has_k2() {
        // σ₁ = I/2, σ₂ = 2I: m = 2, n = 17/4, K = 2, q = 4/3, p = 4, exactly.
        let pair = CoefficientPair::new([[0.5, 0.0], [0.0, 0.5]], [[2.0, 0.0], [0.0, 2.0]])
            .unwrap();
        let e = critical_exponents(&pair).unwrap();
        assert_abs_diff_eq!(e.m, 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e.n, 4.25, epsilon = 1e-13);
        assert_abs_diff_eq!(e.k, 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e.q, 4.0 / 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e.p, 4.0, epsilon = 1e-13);
    }

    #[test]
    fn normal_form_pair_recovers_its_k() {
        for (bk, s1, s2) in [(2.0, 2.0, 2.0), (2.0, 1.0, 2.0), (3.0, 0.5, 1.5), (1.7, 1.7, 0.9)] {
            let p = DiagonalPairParams::new(bk, s1, s2).unwrap();
            let e = critical_exponents(&p.pair()).unwrap();
            assert_abs_diff_eq!(e.k, bk, epsilon = 1e-12);
        }
    }

    #[test]
    fn conformal_pair_exponent_degenerates() {
        let pair =
            CoefficientPair::new([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let e = critical_exponents(&pair).unwrap();
        assert_abs_diff_eq!(e.k, 1.0, epsilon = 1e-9);
        assert!(e.p.is_infinite());
    }

    #[test]
    fn non_elliptic_pairs_are_rejected() {
        assert!(CoefficientPair::new([[1.0, 3.0], [3.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]).is_err());
        assert!(CoefficientPair::new([[0.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn beltrami_roundtrip() {
        let sigmas = [
            [[2.0, 0.0], [0.0, 0.5]],
            [[1.3, 0.2], [-0.4, 0.9]],
            [[0.7, -0.1], [0.3, 2.2]],
        ];
        for s in sigmas {
            let (mu, nu) = beltrami_from_sigma(s).unwrap();
            assert!(mu.norm() + nu.norm() < 1.0, "ellipticity of dilatations");
            let back = sigma_from_beltrami(mu, nu).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(back[i][j], s[i][j], epsilon = 1e-12);
                }
            }
        }
        // Symmetric σ ⟹ ν real; isotropic σ ⟹ μ = 0.
        let (mu, nu) = beltrami_from_sigma([[2.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(mu.norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nu.im, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(nu.re, -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_params_slopes_and_flip() {
        let p = DiagonalPairParams::new(2.0, 1.0, 2.0).unwrap();
        assert!(!p.flipped);
        assert_abs_diff_eq!(p.k(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.s1(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.s2(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.s(), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.big_s(), 7.0 / 5.0, epsilon = 1e-15);

        // Both S_j < 1 makes s < 0: flipped, working slopes positive.
        let f = DiagonalPairParams::new(2.0, 0.5, 0.5).unwrap();
        assert!(f.flipped);
        assert_abs_diff_eq!(f.s1(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.s(), 1.0 / 3.0, epsilon = 1e-15);

        // s = 0 exactly: unsupported.
        match DiagonalPairParams::new(2.0, 0.5, 2.0) {
            Err(Error::Unsupported(_)) => {}
            other => panic!("expected Unsupported, got {other:?}"),
        }
    }

    #[test]
    fn from_pair_validates_normal_form() {
        let p = DiagonalPairParams::new(2.0, 2.0, 2.0).unwrap();
        let back = DiagonalPairParams::from_pair(&p.pair()).unwrap();
        assert_abs_diff_eq!(back.big_k, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(back.big_s1, 2.0, epsilon = 1e-14);
        let skew = CoefficientPair {
            sigma1: [[0.5, 0.1], [0.0, 0.5]],
            sigma2: [[2.0, 0.0], [0.0, 2.0]],
        };
        assert!(DiagonalPairParams::from_pair(&skew).is_err());
    }
}
