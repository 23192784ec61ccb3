//! Numeric backends.
//!
//! Every solver in this crate is generic over [`Scalar`]. Two backends are
//! provided: [`Rational`] (arbitrary precision, every comparison exact) and
//! `f64` (fast, comparisons governed by an [`EqMode`] tolerance).

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arbitrary-precision rational, the exact-mode number type.
pub type Rational = BigRational;

/// Arithmetic the solvers need from a number type.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    /// True for backends where `==` is the mathematically meaningful equality.
    const EXACT: bool;

    fn from_ratio(numer: i64, denom: i64) -> Self;

    /// Parses `"3"`, `"-0.25"`, `"1e-6"` or `"7/9"`. Decimal text is read
    /// exactly by the rational backend.
    fn parse_text(text: &str) -> Option<Self>;

    /// Square root, when it is representable. The rational backend only
    /// succeeds for perfect squares.
    fn sqrt_exact(&self) -> Option<Self>;

    fn to_f64(&self) -> f64;

    /// Text form used in reports: `p/q` for rationals, shortest round-trip
    /// decimal for floats.
    fn render(&self) -> String {
        self.to_string()
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn from_ratio(numer: i64, denom: i64) -> Self {
        BigRational::new(BigInt::from(numer), BigInt::from(denom))
    }

    fn parse_text(text: &str) -> Option<Self> {
        parse_rational(text.trim())
    }

    fn sqrt_exact(&self) -> Option<Self> {
        if self.is_negative() {
            return None;
        }
        let n = self.numer().sqrt();
        let d = self.denom().sqrt();
        if &(&n * &n) == self.numer() && &(&d * &d) == self.denom() {
            Some(BigRational::new(n, d))
        } else {
            None
        }
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_ratio(numer: i64, denom: i64) -> Self {
        numer as f64 / denom as f64
    }

    fn parse_text(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            let n: f64 = n.trim().parse().ok()?;
            let d: f64 = d.trim().parse().ok()?;
            return (d != 0.0).then(|| n / d);
        }
        text.parse().ok().filter(|v: &f64| v.is_finite())
    }

    fn sqrt_exact(&self) -> Option<Self> {
        (*self >= 0.0).then(|| self.sqrt())
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn render(&self) -> String {
        format!("{self:?}")
    }
}

fn parse_rational(text: &str) -> Option<Rational> {
    if text.is_empty() {
        return None;
    }
    if let Some((n, d)) = text.split_once('/') {
        let n = BigInt::from_str(n.trim()).ok()?;
        let d = BigInt::from_str(d.trim()).ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut value = BigRational::from_integer(BigInt::from_str(&digits).ok()?);
    let scale = exponent - frac_part.len() as i32;
    let ten = BigRational::from_integer(BigInt::from(10));
    if scale >= 0 {
        value *= num_traits::pow(ten, scale as usize);
    } else {
        value /= num_traits::pow(ten, (-scale) as usize);
    }
    Some(if negative { -value } else { value })
}

/// How equalities between computed values are decided.
///
/// Rational values always compare exactly regardless of the mode; the float
/// tolerance only affects the `f64` backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqMode {
    Exact,
    Float { rel_tol: f64 },
}

impl EqMode {
    /// Float mode with the given relative tolerance; zero or negative
    /// tolerances are refused.
    pub fn float(rel_tol: f64) -> Result<Self> {
        if rel_tol > 0.0 && rel_tol.is_finite() {
            Ok(EqMode::Float { rel_tol })
        } else {
            Err(Error::InvalidTolerance(rel_tol))
        }
    }

    pub fn default_for<S: Scalar>() -> Self {
        if S::EXACT {
            EqMode::Exact
        } else {
            EqMode::Float { rel_tol: 1e-9 }
        }
    }

    /// `a == b` under this mode. Float comparisons use
    /// `|a - b| <= rel_tol * max(1, |a|, |b|)`.
    pub fn eq<S: Scalar>(&self, a: &S, b: &S) -> bool {
        match self {
            EqMode::Float { rel_tol } if !S::EXACT => {
                let (a, b) = (a.to_f64(), b.to_f64());
                (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0)
            }
            _ => a == b,
        }
    }

    /// `a <= b` under this mode.
    pub fn le<S: Scalar>(&self, a: &S, b: &S) -> bool {
        a <= b || self.eq(a, b)
    }

    /// `a < b` under this mode (strictly less and not equal within tolerance).
    pub fn lt<S: Scalar>(&self, a: &S, b: &S) -> bool {
        a < b && !self.eq(a, b)
    }
}

/// Converts a float to the scalar type by way of its shortest decimal
/// representation, so `0.9` becomes exactly `9/10` in the rational backend.
pub fn from_f64<S: Scalar>(value: f64) -> Option<S> {
    if !value.is_finite() {
        return None;
    }
    S::parse_text(&format!("{value:?}"))
}

pub(crate) fn zero<S: Scalar>() -> S {
    S::zero()
}

pub(crate) fn one<S: Scalar>() -> S {
    S::one()
}
