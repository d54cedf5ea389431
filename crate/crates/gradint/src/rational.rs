//! Exact rational arithmetic mirrors of the conformal algebra.
//!
//! The acceptance-grade identities in this crate (step measures at rational
//! angles, endpoint values of the θ-functions, rank-one checks of the
//! elementary decompositions) are all rational once the inputs are, so they
//! can be verified without any floating-point error at all. This module
//! provides complex numbers and plus/minus matrices over `BigRational`,
//! together with square roots of perfect-square rationals — enough to run the
//! same formulas the f64 code runs and compare exactly.
//!
//! Every f64 is itself a rational number, so [`RatComplex::from_f64`] also
//! lets the mesh audits lift floating-point vertices into exact arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

/// Rational p/q from machine integers.
pub fn rat(p: i64, q: i64) -> Rat {
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Exact conversion of a finite f64 into a rational. Panics on NaN/∞.
pub fn rat_from_f64(x: f64) -> Rat {
    Rat::from_f64(x).expect("finite float required for exact lift")
}

/// Square root of a perfect-square rational; `None` when `r` is negative or
/// not a perfect square (numerator and denominator both must be).
pub fn sqrt_exact(r: &Rat) -> Option<Rat> {
    if r.is_negative() {
        return None;
    }
    let r = r.reduced();
    let sn = r.numer().sqrt();
    let sd = r.denom().sqrt();
    if &(&sn * &sn) == r.numer() && &(&sd * &sd) == r.denom() {
        Some(Rat::new(sn, sd))
    } else {
        None
    }
}

/// Complex number with exact rational real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatComplex {
    pub re: Rat,
    pub im: Rat,
}

impl RatComplex {
    pub fn new(re: Rat, im: Rat) -> Self {
        Self { re, im }
    }

    pub fn from_i64(re: i64, im: i64) -> Self {
        Self::new(rat(re, 1), rat(im, 1))
    }

    pub fn from_f64(re: f64, im: f64) -> Self {
        Self::new(rat_from_f64(re), rat_from_f64(im))
    }

    pub fn zero() -> Self {
        Self::new(Rat::zero(), Rat::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.re.clone(), -self.im.clone())
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(&self.re + &o.re, &self.im + &o.im)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(&self.re - &o.re, &self.im - &o.im)
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            &self.re * &o.re - &self.im * &o.im,
            &self.re * &o.im + &self.im * &o.re,
        )
    }

    pub fn scale(&self, c: &Rat) -> Self {
        Self::new(&self.re * c, &self.im * c)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.re.clone(), -self.im.clone())
    }

    pub fn norm_sqr(&self) -> Rat {
        &self.re * &self.re + &self.im * &self.im
    }

    /// |z| when it is an exact rational.
    pub fn norm_exact(&self) -> Option<Rat> {
        sqrt_exact(&self.norm_sqr())
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (
            self.re.to_f64().expect("rational fits in f64"),
            self.im.to_f64().expect("rational fits in f64"),
        )
    }
}

/// Real 2×2 matrix in plus/minus coordinates over the rationals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatMatrix {
    pub plus: RatComplex,
    pub minus: RatComplex,
}

impl RatMatrix {
    pub fn new(plus: RatComplex, minus: RatComplex) -> Self {
        Self { plus, minus }
    }

    pub fn zero() -> Self {
        Self::new(RatComplex::zero(), RatComplex::zero())
    }

    /// The conjugation J = (0, 1).
    pub fn conjugation() -> Self {
        Self::new(RatComplex::zero(), RatComplex::from_i64(1, 0))
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.plus.add(&o.plus), self.minus.add(&o.minus))
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.plus.sub(&o.plus), self.minus.sub(&o.minus))
    }

    pub fn scale(&self, c: &Rat) -> Self {
        Self::new(self.plus.scale(c), self.minus.scale(c))
    }

    /// Product in plus/minus coordinates: (ab)₊ = a₊b₊ + a₋b̄₋,
    /// (ab)₋ = a₊b₋ + a₋b̄₊.
    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.plus.mul(&o.plus).add(&self.minus.mul(&o.minus.conj())),
            self.plus.mul(&o.minus).add(&self.minus.mul(&o.plus.conj())),
        )
    }

    pub fn det(&self) -> Rat {
        self.plus.norm_sqr() - self.minus.norm_sqr()
    }

    pub fn hs_norm_sq(&self) -> Rat {
        (self.plus.norm_sqr() + self.minus.norm_sqr()) * rat(2, 1)
    }

    pub fn is_rank_one_exact(&self) -> bool {
        self.det().is_zero()
    }

    pub fn to_f64(&self) -> crate::conformal::ConformalMatrix {
        let (pr, pi) = self.plus.to_f64();
        let (mr, mi) = self.minus.to_f64();
        crate::conformal::ConformalMatrix::new(
            num_complex::Complex64::new(pr, pi),
            num_complex::Complex64::new(mr, mi),
        )
    }
}

/// Convex combination λ·B + (1−λ)·C.
pub fn combine(lambda: &Rat, b: &RatMatrix, c: &RatMatrix) -> RatMatrix {
    let one_minus = Rat::one() - lambda;
    b.scale(lambda).add(&c.scale(&one_minus))
}
