//! Exact rational arithmetic helpers.
//!
//! Every value in the crate is a [`BigRational`]. Files and reports carry the
//! exact `"p/q"` form; decimals are only ever produced for human output.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Roots;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse {input:?} as a rational: {reason}")]
pub struct ParseRationalError {
    pub input: String,
    pub reason: &'static str,
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn rat(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn pow2_inv(k: u32) -> Rational {
    Rational::new(BigInt::one(), BigInt::one() << k)
}

pub fn pow10(k: u32) -> Rational {
    Rational::from_integer(BigInt::from(10u32).pow(k))
}

/// Parses `"p/q"`, `"p"` or a plain decimal such as `"-0.125"`.
pub fn parse_rational(input: &str) -> Result<Rational, ParseRationalError> {
    let s = input.trim();
    let err = |reason| ParseRationalError {
        input: input.to_string(),
        reason,
    };
    if s.is_empty() {
        return Err(err("empty string"));
    }
    if let Some((p, q)) = s.split_once('/') {
        let p = BigInt::from_str(p.trim()).map_err(|_| err("bad numerator"))?;
        let q = BigInt::from_str(q.trim()).map_err(|_| err("bad denominator"))?;
        if q.is_zero() {
            return Err(err("zero denominator"));
        }
        return Ok(Rational::new(p, q));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        let negative = whole.starts_with('-');
        let whole_digits = whole.trim_start_matches(['-', '+']);
        if !frac.chars().all(|c| c.is_ascii_digit()) || frac.is_empty() {
            return Err(err("bad decimal fraction"));
        }
        let whole_val = if whole_digits.is_empty() {
            BigInt::zero()
        } else {
            BigInt::from_str(whole_digits).map_err(|_| err("bad decimal integer part"))?
        };
        let frac_val = BigInt::from_str(frac).map_err(|_| err("bad decimal fraction"))?;
        let scale = BigInt::from(10u32).pow(frac.len() as u32);
        let mut value = Rational::new(whole_val * &scale + frac_val, scale);
        if negative {
            value = -value;
        }
        return Ok(value);
    }
    BigInt::from_str(s)
        .map(Rational::from_integer)
        .map_err(|_| err("bad integer"))
}

/// Canonical exact form; always `p/q`, reduced, with `q > 0`.
pub fn format_rational(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Huge numerators: fall back to a ratio of f64 approximations.
        let n = r.numer().to_f64().unwrap_or(f64::INFINITY);
        let d = r.denom().to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}

/// `"p/q (≈ 1.2345)"` for human-facing output.
pub fn describe(r: &Rational) -> String {
    format!("{} (~{:.9})", format_rational(r), to_f64(r))
}

/// Smallest `p / 10^digits` that is `>= 1/sqrt(radicand)`.
///
/// The error is below `10^-digits`.
pub fn inv_sqrt_upper(radicand: u64, digits: u32) -> Rational {
    assert!(radicand >= 1, "radicand must be positive");
    let scale = BigInt::from(10u32).pow(digits);
    let target = &scale * &scale;
    let d = BigInt::from(radicand);
    let mut p = (&target / &d).sqrt();
    while &p * &p * &d < target {
        p += 1;
    }
    while p > BigInt::zero() && {
        let q = &p - 1;
        &q * &q * &d >= target
    } {
        p -= 1;
    }
    Rational::new(p, scale)
}

/// Exact `sqrt` when the rational is a perfect square.
pub fn exact_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let n = r.numer().sqrt();
    let d = r.denom().sqrt();
    if &n * &n == *r.numer() && &d * &d == *r.denom() {
        Some(Rational::new(n, d))
    } else {
        None
    }
}

pub fn mid(a: &Rational, b: &Rational) -> Rational {
    (a + b) / int(2)
}

/// Rational or ±∞, used for the additive constants of affine minimizers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtRational {
    NegInf,
    Finite(Rational),
    PosInf,
}

impl ExtRational {
    pub fn zero() -> Self {
        ExtRational::Finite(Rational::zero())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ExtRational::Finite(_))
    }

    /// `self + x` for a finite `x`.
    pub fn add_finite(&self, x: &Rational) -> ExtRational {
        match self {
            ExtRational::Finite(v) => ExtRational::Finite(v + x),
            other => other.clone(),
        }
    }
}

impl From<Rational> for ExtRational {
    fn from(r: Rational) -> Self {
        ExtRational::Finite(r)
    }
}

impl fmt::Display for ExtRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtRational::NegInf => write!(f, "-inf"),
            ExtRational::PosInf => write!(f, "inf"),
            ExtRational::Finite(r) => write!(f, "{}", format_rational(r)),
        }
    }
}

impl FromStr for ExtRational {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "+inf" | "infinity" => Ok(ExtRational::PosInf),
            "-inf" | "-infinity" => Ok(ExtRational::NegInf),
            other => parse_rational(other).map(ExtRational::Finite),
        }
    }
}

impl Serialize for ExtRational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExtRational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A value `a + b·√d` with rational `a`, `b` and a square-free-agnostic
/// positive integer `d`. Used for weighted-VCG payments, which involve the
/// irrational weight `√(n-1)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Surd {
    pub rational: Rational,
    pub coeff: Rational,
    pub radicand: u64,
}

impl Surd {
    pub fn from_rational(r: Rational) -> Self {
        Surd {
            rational: r,
            coeff: Rational::zero(),
            radicand: 1,
        }
    }

    /// `b·√d`, folded into a rational when `d` is a perfect square.
    pub fn sqrt_multiple(b: Rational, radicand: u64) -> Self {
        let root = radicand.sqrt();
        if root * root == radicand {
            return Surd::from_rational(b * int(root as i64));
        }
        Surd {
            rational: Rational::zero(),
            coeff: b,
            radicand,
        }
    }

    fn common_radicand(&self, other: &Surd) -> u64 {
        if self.coeff.is_zero() {
            other.radicand
        } else if other.coeff.is_zero() || self.radicand == other.radicand {
            self.radicand
        } else {
            panic!(
                "mixed radicands {} and {} are not supported",
                self.radicand, other.radicand
            )
        }
    }

    pub fn add(&self, other: &Surd) -> Surd {
        let radicand = self.common_radicand(other);
        Surd {
            rational: &self.rational + &other.rational,
            coeff: &self.coeff + &other.coeff,
            radicand,
        }
    }

    pub fn sub(&self, other: &Surd) -> Surd {
        let radicand = self.common_radicand(other);
        Surd {
            rational: &self.rational - &other.rational,
            coeff: &self.coeff - &other.coeff,
            radicand,
        }
    }

    pub fn sub_rational(&self, r: &Rational) -> Surd {
        Surd {
            rational: &self.rational - r,
            coeff: self.coeff.clone(),
            radicand: self.radicand,
        }
    }

    /// Sign of `a + b·√d`, computed exactly.
    pub fn signum(&self) -> Ordering {
        let a = &self.rational;
        let b = &self.coeff;
        let zero = Rational::zero();
        let a_sign = a.cmp(&zero);
        let b_sign = b.cmp(&zero);
        match (a_sign, b_sign) {
            (Ordering::Equal, s) | (s, Ordering::Equal) => s,
            (sa, sb) if sa == sb => sa,
            (sa, _) => {
                // Opposite signs: compare a² with b²·d.
                let lhs = a * a;
                let rhs = b * b * int(self.radicand as i64);
                match lhs.cmp(&rhs) {
                    Ordering::Greater => sa,
                    Ordering::Less => sa.reverse(),
                    Ordering::Equal => Ordering::Equal,
                }
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.rational) + to_f64(&self.coeff) * (self.radicand as f64).sqrt()
    }
}

impl PartialOrd for Surd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Surd {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sub(other).signum()
    }
}

impl fmt::Display for Surd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeff.is_zero() {
            write!(f, "{}", format_rational(&self.rational))
        } else {
            write!(
                f,
                "{} + {}*sqrt({})",
                format_rational(&self.rational),
                format_rational(&self.coeff),
                self.radicand
            )
        }
    }
}

impl Serialize for Surd {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

/// `#[serde(with = ...)]` adapters that carry rationals as `"p/q"` strings.
pub mod serde_str {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

pub mod serde_str_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for r in v {
            seq.serialize_element(&format_rational(r))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| parse_rational(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod serde_str_opt {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&format_rational(r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        let v = Option::<String>::deserialize(d)?;
        v.map(|s| parse_rational(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Breakpoint lists `[["x","y"], ...]`.
pub mod serde_str_pairs {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[(Rational, Rational)], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for (x, y) in v {
            seq.serialize_element(&[format_rational(x), format_rational(y)])?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<(Rational, Rational)>, D::Error> {
        let v = Vec::<[String; 2]>::deserialize(d)?;
        v.iter()
            .map(|[x, y]| {
                Ok((
                    parse_rational(x).map_err(serde::de::Error::custom)?,
                    parse_rational(y).map_err(serde::de::Error::custom)?,
                ))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_forms() {
        assert_eq!(parse_rational("3/4").unwrap(), rat(3, 4));
        assert_eq!(parse_rational("-6/8").unwrap(), rat(-3, 4));
        assert_eq!(parse_rational("7").unwrap(), int(7));
        assert_eq!(parse_rational("0.125").unwrap(), rat(1, 8));
        assert_eq!(parse_rational("-.5").unwrap(), rat(-1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn canonical_format_is_reduced() {
        assert_eq!(format_rational(&rat(6, 4)), "3/2");
        assert_eq!(format_rational(&int(5)), "5/1");
        assert_eq!(format_rational(&rat(-1, 3)), "-1/3");
    }

    #[test]
    fn inverse_sqrt_rounds_up() {
        for d in [1u64, 2, 3, 4, 8, 9] {
            let a = inv_sqrt_upper(d, 10);
            // a >= 1/sqrt(d)  <=>  a^2 d >= 1
            assert!(&a * &a * int(d as i64) >= int(1));
            let below = &a - pow10(10).recip();
            assert!(&below * &below * int(d as i64) < int(1));
        }
        assert_eq!(inv_sqrt_upper(4, 10), rat(1, 2));
        assert_eq!(inv_sqrt_upper(1, 10), int(1));
    }

    #[test]
    fn ext_rational_order_and_parse() {
        let a: ExtRational = "-inf".parse().unwrap();
        let b: ExtRational = "1/2".parse().unwrap();
        let c: ExtRational = "inf".parse().unwrap();
        assert!(a < b && b < c);
        assert_eq!(b.add_finite(&rat(1, 2)), ExtRational::Finite(int(1)));
        assert_eq!(c.add_finite(&int(5)), ExtRational::PosInf);
    }

    #[test]
    fn surd_sign_and_order() {
        // 1 - 1*sqrt(2) < 0
        let s = Surd {
            rational: int(1),
            coeff: int(-1),
            radicand: 2,
        };
        assert_eq!(s.signum(), Ordering::Less);
        // 3/2 - sqrt(2) > 0
        let s = Surd {
            rational: rat(3, 2),
            coeff: int(-1),
            radicand: 2,
        };
        assert_eq!(s.signum(), Ordering::Greater);
        // 2 - sqrt(4) folds to 0
        let t = Surd::from_rational(int(2)).sub(&Surd::sqrt_multiple(int(1), 4));
        assert_eq!(t.signum(), Ordering::Equal);
        assert!(Surd::sqrt_multiple(int(1), 3) > Surd::from_rational(rat(17, 10)));
    }

    #[test]
    fn exact_sqrt_detects_squares() {
        assert_eq!(exact_sqrt(&rat(9, 4)), Some(rat(3, 2)));
        assert_eq!(exact_sqrt(&int(2)), None);
    }
}
