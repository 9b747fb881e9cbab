//! Allocation rules for unrelated-machine scheduling.
//!
//! Multi-machine mechanisms implement [`Mechanism`]. Two-machine/two-task
//! rules implement [`Mechanism2x2`] and are lifted to matrices with
//! [`Direct2x2`] or planted into a larger instance with [`Embedded2x2`].

mod generate;
mod payments;
mod registry;
mod two_by_two;
mod vcg;

use std::fmt;

use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, CostMatrix, ModelError};
use crate::rational::{format_rational, serde_str_pairs, Rational};
use crate::solve::SolveError;

pub use generate::{
    random_affine_minimizer, random_constant, random_one_dimensional, random_relaxed,
    random_task_independent, AffineKind,
};
pub use payments::{clarke_payments, payment_truthfulness_gain, utility};
pub use registry::{
    build_2x2, build_mechanism, default_affine_config, EmbedSpec, MechanismSpec, MECHANISM_IDS,
};
pub use two_by_two::{
    affine_minimizer_2x2, one_dimensional_2x2, relaxed_affine_minimizer_2x2,
    task_independent_2x2, AffineMinimizer2x2, AffineMinimizerConfig, AffineShape, Constant2x2,
    Direct2x2, Embedded2x2, OneDimVariant, OneDimensional2x2, PiTable,
    RelaxedAffineMinimizer2x2, RelaxedAffineMinimizerConfig, TaskIndependent2x2,
};
pub use vcg::{MaxCost, Vcg, VcgWeights, WeightedVcg};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MechanismError {
    #[error("mechanism {mechanism} expects {expected}, got a {n}x{m} matrix")]
    ShapeMismatch {
        mechanism: String,
        expected: String,
        n: usize,
        m: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown mechanism id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Matrix shapes a mechanism accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputShape {
    Any,
    Fixed { n: usize, m: usize },
    AtLeast { n: usize, m: usize },
}

impl InputShape {
    pub fn accepts(&self, n: usize, m: usize) -> bool {
        match *self {
            InputShape::Any => n >= 2 && m >= 1,
            InputShape::Fixed { n: a, m: b } => n == a && m == b,
            InputShape::AtLeast { n: a, m: b } => n >= a && m >= b,
        }
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputShape::Any => write!(f, "any n >= 2, m >= 1"),
            InputShape::Fixed { n, m } => write!(f, "exactly {n}x{m}"),
            InputShape::AtLeast { n, m } => write!(f, "at least {n}x{m}"),
        }
    }
}

pub trait Mechanism: Send + Sync {
    fn id(&self) -> String;

    /// Human-readable description of how ties are broken.
    fn tie_policy(&self) -> &'static str;

    fn input_shape(&self) -> InputShape {
        InputShape::Any
    }

    fn allocate(&self, matrix: &CostMatrix) -> Result<Allocation, MechanismError>;

    /// Weights when the rule is task-separable weighted VCG; enables payments.
    fn vcg_weights(&self, _n: usize) -> Option<VcgWeights> {
        None
    }

    /// True only for rules with a known truthfulness proof.
    fn truthful_verified(&self) -> bool {
        false
    }

    fn check_shape(&self, matrix: &CostMatrix) -> Result<(), MechanismError> {
        let (n, m) = (matrix.machines(), matrix.tasks());
        if self.input_shape().accepts(n, m) {
            Ok(())
        } else {
            Err(MechanismError::ShapeMismatch {
                mechanism: self.id(),
                expected: self.input_shape().to_string(),
                n,
                m,
            })
        }
    }
}

/// Which tasks of a 2x2 instance the first player (the "t-player") keeps;
/// the second player gets the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bundle {
    #[serde(rename = "12")]
    Both,
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "none")]
    Neither,
}

impl Bundle {
    pub const ALL: [Bundle; 4] = [Bundle::Both, Bundle::First, Bundle::Second, Bundle::Neither];

    pub fn from_tasks(first: bool, second: bool) -> Bundle {
        match (first, second) {
            (true, true) => Bundle::Both,
            (true, false) => Bundle::First,
            (false, true) => Bundle::Second,
            (false, false) => Bundle::Neither,
        }
    }

    /// Whether the t-player keeps task `k` (0 or 1).
    pub fn has(&self, k: usize) -> bool {
        match self {
            Bundle::Both => true,
            Bundle::First => k == 0,
            Bundle::Second => k == 1,
            Bundle::Neither => false,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Bundle::Both => "12",
            Bundle::First => "1",
            Bundle::Second => "2",
            Bundle::Neither => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Bundle> {
        match s {
            "12" => Some(Bundle::Both),
            "1" => Some(Bundle::First),
            "2" => Some(Bundle::Second),
            "none" | "empty" | "0" => Some(Bundle::Neither),
            _ => None,
        }
    }
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Two-player, two-task rule. `t` is the first player's bid, `s` the
/// second's.
pub trait Mechanism2x2: Send + Sync {
    fn id(&self) -> String;

    fn decide(&self, t: [&Rational; 2], s: [&Rational; 2]) -> Result<Bundle, MechanismError>;

    fn truthful_verified(&self) -> bool {
        false
    }
}

/// Piecewise-linear function through sorted breakpoints.
///
/// A repeated `x` encodes a jump; the function is right-continuous there.
/// Beyond the first and last breakpoints it is constant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear {
    #[serde(with = "serde_str_pairs")]
    points: Vec<(Rational, Rational)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(Rational, Rational)>) -> Result<Self, MechanismError> {
        if points.is_empty() {
            return Err(MechanismError::Config(
                "piecewise-linear table needs at least one point".into(),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(MechanismError::Config(format!(
                    "breakpoints must be sorted by x: {} after {}",
                    format_rational(&w[1].0),
                    format_rational(&w[0].0)
                )));
            }
        }
        Ok(PiecewiseLinear { points })
    }

    /// `f(x) = x` up to `10^12`, far beyond any value used here.
    pub fn identity() -> Self {
        use crate::rational::int;
        let far = int(1_000_000_000_000);
        PiecewiseLinear {
            points: vec![(int(0), int(0)), (far.clone(), far)],
        }
    }

    pub fn points(&self) -> &[(Rational, Rational)] {
        &self.points
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        let pts = &self.points;
        if *x < pts[0].0 {
            return pts[0].1.clone();
        }
        // Last breakpoint with x_i <= x.
        let i = pts.partition_point(|p| p.0 <= *x) - 1;
        if i + 1 == pts.len() {
            return pts[i].1.clone();
        }
        let (x0, y0) = &pts[i];
        let (x1, y1) = &pts[i + 1];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Non-decreasing everywhere, jumps included.
    pub fn is_nondecreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.points.iter().all(|p| !p.1.is_negative())
    }
}

/// VCG choice for a single task: the cheapest machine, lowest index on ties.
pub(crate) fn cheapest_machine(matrix: &CostMatrix, task: usize) -> usize {
    let mut best = 0;
    for i in 1..matrix.machines() {
        if matrix.get(i, task) < matrix.get(best, task) {
            best = i;
        }
    }
    best
}
