//! Plus/minus (conformal) coordinates for real 2×2 matrices.
//!
//! Identifying ℝ² with ℂ, every real 2×2 matrix A acts as
//!
//! ```text
//!     A v = a₊ · v + a₋ · v̄
//! ```
//!
//! for a unique pair of complex numbers (a₊, a₋): a₊ is the conformal part,
//! a₋ the anti-conformal part. In these coordinates determinants, operator
//! norms, distortion and rank-one structure all become statements about the
//! two moduli |a₊|, |a₋|, which is what makes the staircase algebra tractable:
//!
//! * det A = |a₊|² − |a₋|²,  |A|²_HS = 2|a₊|² + 2|a₋|²,  ‖A‖_op = |a₊| + |a₋|;
//! * A is rank one exactly when |a₊| = |a₋|;
//! * the second complex dilatation is μ_A = a₋ / ā₊ (∞ when a₊ = 0 ≠ a₋).
//!
//! Products compose as (ab)₊ = a₊b₊ + a₋b̄₋, (ab)₋ = a₊b₋ + a₋b̄₊.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A real 2×2 matrix in plus/minus coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConformalMatrix {
    /// Conformal part a₊.
    pub plus: Complex64,
    /// Anti-conformal part a₋.
    pub minus: Complex64,
}

/// Second complex dilatation of a matrix, with the point at infinity kept
/// explicit (reached by the anti-conformal matrices a₊ = 0, a₋ ≠ 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dilatation {
    Finite(Complex64),
    Infinity,
}

impl ConformalMatrix {
    pub const fn new(plus: Complex64, minus: Complex64) -> Self {
        Self { plus, minus }
    }

    pub fn zero() -> Self {
        Self::new(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
    }

    pub fn identity() -> Self {
        Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    }

    /// The conjugation matrix J: Jv = v̄, i.e. diag(1, −1).
    pub fn conjugation() -> Self {
        Self::new(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
    }

    /// Rotation by θ: R_θ v = e^{iθ} v.
    pub fn rotation(theta: f64) -> Self {
        Self::new(Complex64::from_polar(1.0, theta), Complex64::new(0.0, 0.0))
    }

    /// The reflected rotation J·R_θ = (0, e^{−iθ}); the staircase climbs along
    /// multiples of these.
    pub fn conj_rotation(theta: f64) -> Self {
        Self::new(Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, -theta))
    }

    /// From row-major real entries [[a11, a12], [a21, a22]].
    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        let [[a11, a12], [a21, a22]] = m;
        Self::new(
            Complex64::new(0.5 * (a11 + a22), 0.5 * (a21 - a12)),
            Complex64::new(0.5 * (a11 - a22), 0.5 * (a21 + a12)),
        )
    }

    /// Back to row-major real entries.
    pub fn to_real(self) -> [[f64; 2]; 2] {
        let (p, m) = (self.plus, self.minus);
        [
            [p.re + m.re, -p.im + m.im],
            [p.im + m.im, p.re - m.re],
        ]
    }

    /// Matrix action on a vector, with ℝ² read as ℂ.
    pub fn apply(self, v: Complex64) -> Complex64 {
        self.plus * v + self.minus * v.conj()
    }

    /// Matrix product (composition of the actions).
    pub fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.plus * rhs.plus + self.minus * rhs.minus.conj(),
            self.plus * rhs.minus + self.minus * rhs.plus.conj(),
        )
    }

    pub fn add(self, rhs: Self) -> Self {
        Self::new(self.plus + rhs.plus, self.minus + rhs.minus)
    }

    pub fn sub(self, rhs: Self) -> Self {
        Self::new(self.plus - rhs.plus, self.minus - rhs.minus)
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(self.plus * c, self.minus * c)
    }

    pub fn transpose(self) -> Self {
        Self::new(self.plus.conj(), self.minus)
    }

    pub fn det(self) -> f64 {
        self.plus.norm_sqr() - self.minus.norm_sqr()
    }

    pub fn trace(self) -> f64 {
        2.0 * self.plus.re
    }

    /// Squared Hilbert–Schmidt norm, 2|a₊|² + 2|a₋|².
    pub fn hs_norm_sq(self) -> f64 {
        2.0 * (self.plus.norm_sqr() + self.minus.norm_sqr())
    }

    /// Hilbert–Schmidt norm (the |A| used throughout the estimates).
    pub fn hs_norm(self) -> f64 {
        self.hs_norm_sq().sqrt()
    }

    /// Operator norm |a₊| + |a₋| (largest singular value).
    pub fn op_norm(self) -> f64 {
        self.plus.norm() + self.minus.norm()
    }

    /// det of the symmetric part (A + Aᵀ)/2 = (Re a₊, a₋).
    pub fn sym_det(self) -> f64 {
        self.plus.re * self.plus.re - self.minus.norm_sqr()
    }

    /// Second complex dilatation μ_A = a₋ / ā₊, tagged at infinity.
    pub fn second_dilatation(self) -> Dilatation {
        if self.plus.norm_sqr() == 0.0 {
            if self.minus.norm_sqr() == 0.0 {
                Dilatation::Finite(Complex64::new(0.0, 0.0))
            } else {
                Dilatation::Infinity
            }
        } else {
            Dilatation::Finite(self.minus / self.plus.conj())
        }
    }

    /// Distortion K(A) = ‖A‖²_op / |det A| = (1+|μ|)/|1−|μ||; +∞ on the
    /// rank-one cone.
    pub fn distortion(self) -> f64 {
        let d = self.det().abs();
        let op = self.op_norm();
        if d == 0.0 {
            if op == 0.0 {
                1.0 // the zero matrix is conventionally conformal
            } else {
                f64::INFINITY
            }
        } else {
            op * op / d
        }
    }

    /// Rank-one defect |det A| / ‖A‖²_HS ∈ [0, 1/2]; zero exactly on the
    /// rank-one cone, robust to scaling.
    pub fn rank_one_defect(self) -> f64 {
        let n2 = self.hs_norm_sq();
        if n2 == 0.0 {
            0.0
        } else {
            self.det().abs() / n2
        }
    }

    /// Whether A is rank one within the relative tolerance `tol`
    /// (|det A| ≤ tol·‖A‖²_HS).
    pub fn is_rank_one(self, tol: f64) -> bool {
        self.rank_one_defect() <= tol
    }

    /// The rank-one matrix a ⊗ n, with a, n read as complex numbers:
    /// (a⊗n)v = a (n·v) = a (n̄v + nv̄)/2, so the coordinates are
    /// (a n̄/2, a n/2).
    pub fn tensor(a: Complex64, n: Complex64) -> Self {
        Self::new(0.5 * a * n.conj(), 0.5 * a * n)
    }

    /// Factor a (near-)rank-one matrix as a ⊗ n with |n| = 1, n in the upper
    /// half plane (arg n ∈ [0, π)). Returns None when the defect exceeds
    /// `tol` or the matrix vanishes.
    pub fn rank_one_factor(self, tol: f64) -> Option<(Complex64, Complex64)> {
        if self.hs_norm_sq() == 0.0 || !self.is_rank_one(tol) {
            return None;
        }
        // d₋/d₊ = n², so arg n = arg(d₋ d̄₊)/2 up to π; d₊ = 0 = d₋ was
        // excluded above (a rank-one matrix has |d₊| = |d₋|).
        let mut phi = 0.5 * (self.minus * self.plus.conj()).arg();
        if phi < 0.0 {
            phi += std::f64::consts::PI;
        }
        let n = Complex64::from_polar(1.0, phi);
        // a = 2 d₊ n reproduces both coordinates when the defect vanishes.
        let a = 2.0 * self.plus * n;
        Some((a, n))
    }
}

impl std::ops::Add for ConformalMatrix {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        ConformalMatrix::add(self, rhs)
    }
}

impl std::ops::Sub for ConformalMatrix {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        ConformalMatrix::sub(self, rhs)
    }
}

impl std::ops::Mul<f64> for ConformalMatrix {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}

impl std::fmt::Display for ConformalMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({:+.6}{:+.6}i, {:+.6}{:+.6}i)",
            self.plus.re, self.plus.im, self.minus.re, self.minus.im
        )
    }
}

/// Serialization mirror: gradients are stored in artifacts as row-major real
/// 2×2 matrices, which stay readable and keep the file format independent of
/// the internal coordinates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct RealMatrix(pub [[f64; 2]; 2]);

impl From<ConformalMatrix> for RealMatrix {
    fn from(m: ConformalMatrix) -> Self {
        RealMatrix(m.to_real())
    }
}

impl From<RealMatrix> for ConformalMatrix {
    fn from(m: RealMatrix) -> Self {
        ConformalMatrix::from_real(m.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn roundtrip_real_coordinates() {
        let m = [[1.0, 2.0], [3.0, 4.0]];
        let a = ConformalMatrix::from_real(m);
        assert_abs_diff_eq!(a.plus.re, 2.5);
        assert_abs_diff_eq!(a.plus.im, 0.5);
        assert_abs_diff_eq!(a.minus.re, -1.5);
        assert_abs_diff_eq!(a.minus.im, 2.5);
        let back = a.to_real();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[i][j], m[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn action_matches_matrix_vector_product() {
        let m = [[1.0, -2.0], [0.5, 3.0]];
        let a = ConformalMatrix::from_real(m);
        let v = c(0.7, -1.3);
        let w = a.apply(v);
        assert_abs_diff_eq!(w.re, m[0][0] * v.re + m[0][1] * v.im, epsilon = 1e-14);
        assert_abs_diff_eq!(w.im, m[1][0] * v.re + m[1][1] * v.im, epsilon = 1e-14);
    }

    #[test]
    fn product_det_trace_norms() {
        let a = ConformalMatrix::from_real([[1.0, 2.0], [-1.0, 0.5]]);
        let b = ConformalMatrix::from_real([[0.3, -0.7], [2.0, 1.1]]);
        let ab = a.mul(b);
        // Compare against the real product.
        let (ra, rb) = (a.to_real(), b.to_real());
        let mut rab = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    rab[i][j] += ra[i][k] * rb[k][j];
                }
            }
        }
        let expect = ConformalMatrix::from_real(rab);
        assert_abs_diff_eq!(ab.plus.re, expect.plus.re, epsilon = 1e-14);
        assert_abs_diff_eq!(ab.plus.im, expect.plus.im, epsilon = 1e-14);
        assert_abs_diff_eq!(ab.minus.re, expect.minus.re, epsilon = 1e-14);
        assert_abs_diff_eq!(ab.minus.im, expect.minus.im, epsilon = 1e-14);

        assert_abs_diff_eq!(a.det(), 1.0 * 0.5 - 2.0 * (-1.0), epsilon = 1e-14);
        assert_abs_diff_eq!(a.trace(), 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(
            a.hs_norm_sq(),
            1.0 + 4.0 + 1.0 + 0.25,
            epsilon = 1e-14
        );
    }

    #[test]
    fn conj_rotation_is_j_times_rotation() {
        for &theta in &[0.0, 0.3, -1.2, 2.9] {
            let jr = ConformalMatrix::conjugation().mul(ConformalMatrix::rotation(theta));
            let direct = ConformalMatrix::conj_rotation(theta);
            assert_abs_diff_eq!(jr.plus.norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!((jr.minus - direct.minus).norm(), 0.0, epsilon = 1e-15);
            // As a real matrix: [[cos θ, −sin θ], [−sin θ, −cos θ]].
            let r = direct.to_real();
            assert_abs_diff_eq!(r[0][0], theta.cos(), epsilon = 1e-15);
            assert_abs_diff_eq!(r[0][1], -theta.sin(), epsilon = 1e-15);
            assert_abs_diff_eq!(r[1][0], -theta.sin(), epsilon = 1e-15);
            assert_abs_diff_eq!(r[1][1], -theta.cos(), epsilon = 1e-15);
        }
    }

    #[test]
    fn dilatation_and_distortion() {
        // diag(2, 1/2): a₊ = 5/4, a₋ = 3/4, μ = 3/5, K = (1+3/5)/(1−3/5) = 4.
        let a = ConformalMatrix::from_real([[2.0, 0.0], [0.0, 0.5]]);
        match a.second_dilatation() {
            Dilatation::Finite(mu) => {
                assert_abs_diff_eq!(mu.re, 0.6, epsilon = 1e-15);
                assert_abs_diff_eq!(mu.im, 0.0, epsilon = 1e-15);
            }
            Dilatation::Infinity => panic!("finite dilatation expected"),
        }
        assert_abs_diff_eq!(a.distortion(), 4.0, epsilon = 1e-12);
        assert_eq!(
            ConformalMatrix::conjugation().second_dilatation(),
            Dilatation::Infinity
        );
    }

    #[test]
    fn tensor_and_factor_are_inverse() {
        let a = c(1.3, -0.4);
        let n = Complex64::from_polar(1.0, 0.77);
        let d = ConformalMatrix::tensor(a, n);
        assert!(d.is_rank_one(1e-15));
        // As a real matrix, a⊗n has rows a_i n_j.
        let r = d.to_real();
        assert_abs_diff_eq!(r[0][0], a.re * n.re, epsilon = 1e-14);
        assert_abs_diff_eq!(r[0][1], a.re * n.im, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1][0], a.im * n.re, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1][1], a.im * n.im, epsilon = 1e-14);

        let (a2, n2) = d.rank_one_factor(1e-12).unwrap();
        let d2 = ConformalMatrix::tensor(a2, n2);
        assert_abs_diff_eq!((d.sub(d2)).hs_norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n2.norm(), 1.0, epsilon = 1e-15);
        assert!(n2.arg() >= 0.0 && n2.arg() < std::f64::consts::PI);
    }

    #[test]
    fn rank_one_factor_rejects_far_from_cone() {
        assert!(ConformalMatrix::identity().rank_one_factor(1e-9).is_none());
        assert!(ConformalMatrix::zero().rank_one_factor(1e-9).is_none());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = ConformalMatrix> {
            (
                (-3.0f64..3.0, -3.0f64..3.0),
                (-3.0f64..3.0, -3.0f64..3.0),
            )
                .prop_map(|((pr, pi), (mr, mi))| ConformalMatrix::new(c(pr, pi), c(mr, mi)))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            /// Any invertible B is norm-controlled by everything it is
            /// rank-one connected to: det(B − A) = 0 ⟹ |B| ≤ √2·K(B)·|A|.
            /// (Equality shows at B = I, A = diag(1, 0).)
            #[test]
            fn rank_one_connections_bound_the_norm(
                b in matrix(),
                (ar, ai) in (-2.0f64..2.0, -2.0f64..2.0),
                (nr, ni) in (-2.0f64..2.0, -2.0f64..2.0),
            ) {
                // Keep K(B) finitely representable: reject near-singular B.
                prop_assume!(b.det().abs() > 1e-6 * b.hs_norm_sq().max(1e-12));
                let a = b - ConformalMatrix::tensor(c(ar, ai), c(nr, ni));
                let bound = std::f64::consts::SQRT_2 * b.distortion() * a.hs_norm();
                prop_assert!(
                    b.hs_norm() <= bound * (1.0 + 1e-9) + 1e-12,
                    "|B| = {}, bound = {bound}",
                    b.hs_norm()
                );
            }

            /// tensor ∘ rank_one_factor is the identity on the cone.
            #[test]
            fn tensor_factors_roundtrip(
                (ar, ai) in (-3.0f64..3.0, -3.0f64..3.0),
                (nr, ni) in (-3.0f64..3.0, -3.0f64..3.0),
            ) {
                let m = ConformalMatrix::tensor(c(ar, ai), c(nr, ni));
                prop_assume!(m.hs_norm() > 1e-6);
                let (fa, fn_) = m.rank_one_factor(1e-12).expect("tensor is rank one");
                let back = ConformalMatrix::tensor(fa, fn_);
                prop_assert!((back - m).hs_norm() <= 1e-12 * m.hs_norm());
            }
        }
    }
}
