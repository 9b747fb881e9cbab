//! Constants profile for lower-bound searches.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{format_rational, int, inv_sqrt_upper, pow10, rat, serde_str, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConstantsError {
    #[error("n must be at least 2, got {0}")]
    TooFewPlayers(usize),
    #[error("invalid constants: {0}")]
    Invalid(String),
}

/// Digits used to approximate `1/sqrt(n-1)` from above.
pub const ALPHA_DIGITS: u32 = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantsProfile {
    pub n: usize,
    /// Rational upper approximation of `1/sqrt(n-1)`.
    #[serde(with = "serde_str")]
    pub alpha: Rational,
    #[serde(with = "serde_str")]
    pub beta: Rational,
    #[serde(with = "serde_str")]
    pub delta: Rational,
    #[serde(with = "serde_str")]
    pub delta_prime: Rational,
    /// `(1 + (n-1) alpha) / (alpha + (n-1) delta')`.
    #[serde(with = "serde_str")]
    pub rho: Rational,
    pub ell: usize,
    #[serde(rename = "B", with = "serde_str")]
    pub big_b: Rational,
    #[serde(with = "serde_str")]
    pub theta: Rational,
}

impl ConstantsProfile {
    /// Desk-scale defaults: `delta = 1/(10 n^2)`, `beta = 10^-6`,
    /// `ell + 1 = 8`, `B = 1000`, `theta = 10^6 n (ell+1) B`.
    pub fn desk(n: usize) -> Result<Self, ConstantsError> {
        if n < 2 {
            return Err(ConstantsError::TooFewPlayers(n));
        }
        let ell = 7;
        let big_b = int(1000);
        let theta = int(1_000_000) * int(n as i64) * int(ell as i64 + 1) * &big_b;
        Self::new(
            n,
            inv_sqrt_upper(n as u64 - 1, ALPHA_DIGITS),
            rat(1, 1_000_000),
            Rational::new(BigInt::one(), BigInt::from(10 * n * n)),
            ell,
            big_b,
            theta,
        )
    }

    pub fn new(
        n: usize,
        alpha: Rational,
        beta: Rational,
        delta: Rational,
        ell: usize,
        big_b: Rational,
        theta: Rational,
    ) -> Result<Self, ConstantsError> {
        if n < 2 {
            return Err(ConstantsError::TooFewPlayers(n));
        }
        let delta_prime = &delta * int(2);
        let denom = &alpha + int(n as i64 - 1) * &delta_prime;
        if !denom.is_positive() {
            return Err(ConstantsError::Invalid("alpha must be positive".into()));
        }
        let rho = (int(1) + int(n as i64 - 1) * &alpha) / denom;
        let profile = ConstantsProfile {
            n,
            alpha,
            beta,
            delta,
            delta_prime,
            rho,
            ell,
            big_b,
            theta,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ConstantsError> {
        let bad = |m: String| Err(ConstantsError::Invalid(m));
        let n = self.n;
        if n < 2 {
            return Err(ConstantsError::TooFewPlayers(n));
        }
        if !(self.beta.is_positive() && self.beta < self.delta && self.delta < int(1)) {
            return bad("need 0 < beta < delta < 1".into());
        }
        if self.delta_prime != &self.delta * int(2) {
            return bad("delta' must equal 2 delta".into());
        }
        let steps = int(2 * n as i64) / &self.delta;
        if !steps.is_integer() {
            return bad(format!(
                "2n/delta = {} is not an integer",
                format_rational(&steps)
            ));
        }
        // |alpha - 1/sqrt(n-1)| <= 1e-9, checked exactly via squares.
        let tol = pow10(9).recip();
        let m1 = int(n as i64 - 1);
        let lo = &self.alpha - &tol;
        let hi = &self.alpha + &tol;
        if lo.is_negative() || &lo * &lo * &m1 > int(1) || &hi * &hi * &m1 < int(1) {
            return bad(format!(
                "alpha = {} is not within 1e-9 of 1/sqrt({})",
                format_rational(&self.alpha),
                n - 1
            ));
        }
        let expected_rho = (int(1) + &m1 * &self.alpha) / (&self.alpha + &m1 * &self.delta_prime);
        if self.rho != expected_rho {
            return bad("rho does not match alpha and delta'".into());
        }
        if self.ell == 0 {
            return bad("clusters need at least two tasks (ell >= 1)".into());
        }
        if !self.big_b.is_positive() {
            return bad("B must be positive".into());
        }
        let k = int(self.ell as i64 + 1);
        let cluster_scale = &k * &self.big_b;
        if &self.theta / &cluster_scale <= int(n as i64 * 1000) {
            return bad("theta / ((ell+1) B) must exceed 1000 n".into());
        }
        if self.theta.is_zero() {
            return bad("theta must be positive".into());
        }
        Ok(())
    }

    /// Number of steps `2n/delta` of the grid used when probing a task's
    /// second-player cost.
    pub fn grid_steps(&self) -> usize {
        let steps = int(2 * self.n as i64) / &self.delta;
        steps
            .to_integer()
            .try_into()
            .expect("grid size fits in usize")
    }
}
