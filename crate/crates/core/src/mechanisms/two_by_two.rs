use std::cmp::Ordering;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::model::{Allocation, CostMatrix};
use crate::rational::{int, serde_str, ExtRational, Rational};

use super::{
    cheapest_machine, Bundle, InputShape, Mechanism, Mechanism2x2, MechanismError,
    PiecewiseLinear,
};

/// Additive constants of an affine minimizer, one per outcome.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiTable {
    #[serde(rename = "12")]
    pub both: ExtRational,
    #[serde(rename = "1")]
    pub first: ExtRational,
    #[serde(rename = "2")]
    pub second: ExtRational,
    #[serde(rename = "none")]
    pub neither: ExtRational,
}

impl PiTable {
    pub fn zero() -> Self {
        PiTable {
            both: ExtRational::zero(),
            first: ExtRational::zero(),
            second: ExtRational::zero(),
            neither: ExtRational::zero(),
        }
    }

    pub fn finite(both: Rational, first: Rational, second: Rational, neither: Rational) -> Self {
        PiTable {
            both: both.into(),
            first: first.into(),
            second: second.into(),
            neither: neither.into(),
        }
    }

    pub fn get(&self, b: Bundle) -> &ExtRational {
        match b {
            Bundle::Both => &self.both,
            Bundle::First => &self.first,
            Bundle::Second => &self.second,
            Bundle::Neither => &self.neither,
        }
    }
}

/// Shape of the allocation regions of an affine minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffineShape {
    /// `pi_12 + pi_none = pi_1 + pi_2`: each task is decided on its own.
    Separable,
    /// `pi_12 + pi_none < pi_1 + pi_2`: a diagonal boundary between 12 and none.
    QuasiBundling,
    /// `pi_12 + pi_none > pi_1 + pi_2`: a diagonal boundary between 1 and 2.
    QuasiFlipping,
    /// Some constant is infinite.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineMinimizerConfig {
    /// Weight of the first player.
    #[serde(with = "serde_str")]
    pub lambda_prime: Rational,
    /// Weight of the second player.
    #[serde(with = "serde_str")]
    pub lambda: Rational,
    pub pi: PiTable,
}

impl AffineMinimizerConfig {
    pub fn validate(&self) -> Result<(), MechanismError> {
        if !self.lambda.is_positive() || !self.lambda_prime.is_positive() {
            return Err(MechanismError::Config(
                "affine minimizer weights must be positive".into(),
            ));
        }
        if Bundle::ALL
            .iter()
            .all(|b| *self.pi.get(*b) == ExtRational::PosInf)
        {
            return Err(MechanismError::Config(
                "all four additive constants are +inf; no outcome is feasible".into(),
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> AffineShape {
        let p = &self.pi;
        match (&p.both, &p.first, &p.second, &p.neither) {
            (
                ExtRational::Finite(a),
                ExtRational::Finite(b),
                ExtRational::Finite(c),
                ExtRational::Finite(d),
            ) => match (a + d).cmp(&(b + c)) {
                Ordering::Equal => AffineShape::Separable,
                Ordering::Less => AffineShape::QuasiBundling,
                Ordering::Greater => AffineShape::QuasiFlipping,
            },
            _ => AffineShape::Degenerate,
        }
    }

    /// Slope of the boundaries in the second player's costs.
    pub fn slope(&self) -> Rational {
        &self.lambda / &self.lambda_prime
    }
}

/// Minimizes `lambda' * (first player's cost) + lambda * (second player's
/// cost) + pi[outcome]`; ties resolve in the order 12, 1, 2, none.
pub fn affine_minimizer_2x2(
    t: [&Rational; 2],
    s: [&Rational; 2],
    cfg: &AffineMinimizerConfig,
) -> Result<Bundle, MechanismError> {
    cfg.validate()?;
    let lp = &cfg.lambda_prime;
    let l = &cfg.lambda;
    let value = |b: Bundle| -> ExtRational {
        let mut base = int(0);
        for k in 0..2 {
            if b.has(k) {
                base += lp * t[k];
            } else {
                base += l * s[k];
            }
        }
        cfg.pi.get(b).add_finite(&base)
    };
    let mut best = Bundle::Both;
    let mut best_value = value(Bundle::Both);
    for b in [Bundle::First, Bundle::Second, Bundle::Neither] {
        let v = value(b);
        if v < best_value {
            best = b;
            best_value = v;
        }
    }
    if best_value == ExtRational::PosInf {
        return Err(MechanismError::Config("every outcome has value +inf".into()));
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineMinimizer2x2 {
    pub config: AffineMinimizerConfig,
}

impl AffineMinimizer2x2 {
    pub fn new(config: AffineMinimizerConfig) -> Result<Self, MechanismError> {
        config.validate()?;
        Ok(AffineMinimizer2x2 { config })
    }
}

impl Mechanism2x2 for AffineMinimizer2x2 {
    fn id(&self) -> String {
        "affmin2".into()
    }

    fn decide(&self, t: [&Rational; 2], s: [&Rational; 2]) -> Result<Bundle, MechanismError> {
        affine_minimizer_2x2(t, s, &self.config)
    }

    fn truthful_verified(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelaxedAffineMinimizerConfig {
    pub base: AffineMinimizerConfig,
    /// The tail applies while the second player's total is below `d_s`...
    #[serde(with = "serde_str")]
    pub d_s: Rational,
    /// ...and the first player's total is below `d_t`.
    #[serde(with = "serde_str")]
    pub d_t: Rational,
    /// Bundling boundary inside the tail, as a function of the second
    /// player's total.
    pub zeta: PiecewiseLinear,
}

impl RelaxedAffineMinimizerConfig {
    pub fn validate(&self) -> Result<(), MechanismError> {
        self.base.validate()?;
        if !self.d_s.is_positive() || !self.d_t.is_positive() {
            return Err(MechanismError::Config(
                "tail thresholds must be positive".into(),
            ));
        }
        if !self.zeta.is_nondecreasing() {
            return Err(MechanismError::Config(
                "tail bundling boundary must be non-decreasing".into(),
            ));
        }
        let pts = self.zeta.points();
        if pts[0].0.is_positive() || pts[pts.len() - 1].0 < self.d_s {
            return Err(MechanismError::Config(
                "tail bundling table must cover [0, d_s)".into(),
            ));
        }
        Ok(())
    }

    /// Sufficient conditions under which the rule satisfies weak
    /// monotonicity for both players, for the family with
    /// `lambda' = 1`, `pi_12 = 0`, `pi_1 = pi_2 = p`, `pi_none = -g`:
    /// `p >= d_t`, `lambda d_s <= p + g`, and
    /// `0 <= zeta <= lambda d_s - g < d_t`.
    pub fn known_monotone(&self) -> bool {
        let b = &self.base;
        let (p12, p1, p2, pn) = match (&b.pi.both, &b.pi.first, &b.pi.second, &b.pi.neither) {
            (
                ExtRational::Finite(a),
                ExtRational::Finite(c),
                ExtRational::Finite(d),
                ExtRational::Finite(e),
            ) => (a, c, d, e),
            _ => return false,
        };
        if b.lambda_prime != int(1) || !p12.is_zero() || p1 != p2 {
            return false;
        }
        let g = -pn;
        let h = &b.lambda * &self.d_s - &g;
        *p1 >= self.d_t
            && &b.lambda * &self.d_s <= p1 + &g
            && h.is_positive()
            && h < self.d_t
            && self.zeta.is_nonnegative()
            && self.zeta.points().iter().all(|(_, y)| *y <= h)
    }
}

/// Affine minimizer except on the tail `S < d_s`, `T < d_t`, where the rule
/// bundles: the first player gets both tasks iff `T <= zeta(S)`.
pub fn relaxed_affine_minimizer_2x2(
    t: [&Rational; 2],
    s: [&Rational; 2],
    cfg: &RelaxedAffineMinimizerConfig,
) -> Result<Bundle, MechanismError> {
    let big_t = t[0] + t[1];
    let big_s = s[0] + s[1];
    if big_s < cfg.d_s && big_t < cfg.d_t {
        return Ok(if big_t <= cfg.zeta.eval(&big_s) {
            Bundle::Both
        } else {
            Bundle::Neither
        });
    }
    affine_minimizer_2x2(t, s, &cfg.base)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelaxedAffineMinimizer2x2 {
    pub config: RelaxedAffineMinimizerConfig,
}

impl RelaxedAffineMinimizer2x2 {
    pub fn new(config: RelaxedAffineMinimizerConfig) -> Result<Self, MechanismError> {
        config.validate()?;
        Ok(RelaxedAffineMinimizer2x2 { config })
    }
}

impl Mechanism2x2 for RelaxedAffineMinimizer2x2 {
    fn id(&self) -> String {
        "relaxed-affmin2".into()
    }

    fn decide(&self, t: [&Rational; 2], s: [&Rational; 2]) -> Result<Bundle, MechanismError> {
        relaxed_affine_minimizer_2x2(t, s, &self.config)
    }
}

/// Task `k` goes to the first player iff `t_k <= psi_k(s_k)`.
pub fn task_independent_2x2(
    t: [&Rational; 2],
    s: [&Rational; 2],
    psi: [&PiecewiseLinear; 2],
) -> Bundle {
    Bundle::from_tasks(*t[0] <= psi[0].eval(s[0]), *t[1] <= psi[1].eval(s[1]))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskIndependent2x2 {
    pub psi1: PiecewiseLinear,
    pub psi2: PiecewiseLinear,
}

impl TaskIndependent2x2 {
    pub fn new(psi1: PiecewiseLinear, psi2: PiecewiseLinear) -> Result<Self, MechanismError> {
        for psi in [&psi1, &psi2] {
            if !psi.is_nondecreasing() || !psi.is_nonnegative() {
                return Err(MechanismError::Config(
                    "task thresholds must be non-decreasing and non-negative".into(),
                ));
            }
        }
        Ok(TaskIndependent2x2 { psi1, psi2 })
    }
}

impl Mechanism2x2 for TaskIndependent2x2 {
    fn id(&self) -> String {
        "taskind2".into()
    }

    fn decide(&self, t: [&Rational; 2], s: [&Rational; 2]) -> Result<Bundle, MechanismError> {
        Ok(task_independent_2x2(t, s, [&self.psi1, &self.psi2]))
    }

    fn truthful_verified(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OneDimVariant {
    /// Both tasks to the first player iff `T <= phi(S)`, otherwise none.
    Bundling,
    /// Task 1 to the first player iff `t_1 <= phi(s_1)`; task 2 never.
    Task1Only,
    /// Task 2 to the first player iff `t_2 <= phi(s_2)`; task 1 never.
    Task2Only,
}

pub fn one_dimensional_2x2(
    t: [&Rational; 2],
    s: [&Rational; 2],
    variant: OneDimVariant,
    phi: &PiecewiseLinear,
) -> Bundle {
    match variant {
        OneDimVariant::Bundling => {
            if t[0] + t[1] <= phi.eval(&(s[0] + s[1])) {
                Bundle::Both
            } else {
                Bundle::Neither
            }
        }
        OneDimVariant::Task1Only => Bundle::from_tasks(*t[0] <= phi.eval(s[0]), false),
        OneDimVariant::Task2Only => Bundle::from_tasks(false, *t[1] <= phi.eval(s[1])),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneDimensional2x2 {
    pub variant: OneDimVariant,
    pub boundary: PiecewiseLinear,
}

impl OneDimensional2x2 {
    pub fn new(variant: OneDimVariant, boundary: PiecewiseLinear) -> Result<Self, MechanismError> {
        if !boundary.is_nondecreasing() || !boundary.is_nonnegative() {
            return Err(MechanismError::Config(
                "one-dimensional boundary must be non-decreasing and non-negative".into(),
            ));
        }
        Ok(OneDimensional2x2 { variant, boundary })
    }
}

impl Mechanism2x2 for OneDimensional2x2 {
    fn id(&self) -> String {
        "onedim2".into()
    }

    fn decide(&self, t: [&Rational; 2], s: [&Rational; 2]) -> Result<Bundle, MechanismError> {
        Ok(one_dimensional_2x2(t, s, self.variant, &self.boundary))
    }

    fn truthful_verified(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constant2x2 {
    pub label: Bundle,
}

impl Mechanism2x2 for Constant2x2 {
    fn id(&self) -> String {
        "const2".into()
    }

    fn decide(&self, _t: [&Rational; 2], _s: [&Rational; 2]) -> Result<Bundle, MechanismError> {
        Ok(self.label)
    }

    fn truthful_verified(&self) -> bool {
        true
    }
}

fn bundle_to_allocation(b: Bundle) -> Vec<usize> {
    (0..2).map(|k| if b.has(k) { 0 } else { 1 }).collect()
}

/// Runs a 2x2 rule on a 2x2 matrix: row 0 is the first player.
pub struct Direct2x2 {
    pub inner: Box<dyn Mechanism2x2>,
}

impl Direct2x2 {
    pub fn new(inner: Box<dyn Mechanism2x2>) -> Self {
        Direct2x2 { inner }
    }
}

impl Mechanism for Direct2x2 {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn tie_policy(&self) -> &'static str {
        "rule-specific; affine minimizers resolve ties in the order 12, 1, 2, none"
    }

    fn input_shape(&self) -> InputShape {
        InputShape::Fixed { n: 2, m: 2 }
    }

    fn allocate(&self, matrix: &CostMatrix) -> Result<Allocation, MechanismError> {
        self.check_shape(matrix)?;
        let b = self.inner.decide(
            [matrix.get(0, 0), matrix.get(0, 1)],
            [matrix.get(1, 0), matrix.get(1, 1)],
        )?;
        Ok(Allocation::for_matrix(bundle_to_allocation(b), matrix)?)
    }

    fn truthful_verified(&self) -> bool {
        self.inner.truthful_verified()
    }
}

/// Plants a 2x2 rule into a larger instance: tasks `pair` are split between
/// machine 0 and machine `s_player` by the rule; every other task goes to its
/// cheapest machine.
pub struct Embedded2x2 {
    pub inner: Box<dyn Mechanism2x2>,
    pub pair: (usize, usize),
    pub s_player: usize,
}

impl Embedded2x2 {
    pub fn new(
        inner: Box<dyn Mechanism2x2>,
        pair: (usize, usize),
        s_player: usize,
    ) -> Result<Self, MechanismError> {
        if pair.0 == pair.1 {
            return Err(MechanismError::Config(
                "embedded tasks must be distinct".into(),
            ));
        }
        if s_player == 0 {
            return Err(MechanismError::Config(
                "the second player of an embedded rule cannot be machine 0".into(),
            ));
        }
        Ok(Embedded2x2 {
            inner,
            pair,
            s_player,
        })
    }
}

impl Mechanism for Embedded2x2 {
    fn id(&self) -> String {
        format!(
            "{}@({},{};{})",
            self.inner.id(),
            self.pair.0,
            self.pair.1,
            self.s_player
        )
    }

    fn tie_policy(&self) -> &'static str {
        "embedded pair: rule-specific; other tasks: lowest machine index"
    }

    fn input_shape(&self) -> InputShape {
        InputShape::AtLeast {
            n: self.s_player + 1,
            m: self.pair.0.max(self.pair.1) + 1,
        }
    }

    fn allocate(&self, matrix: &CostMatrix) -> Result<Allocation, MechanismError> {
        self.check_shape(matrix)?;
        let (p, q) = self.pair;
        let k = self.s_player;
        let b = self.inner.decide(
            [matrix.get(0, p), matrix.get(0, q)],
            [matrix.get(k, p), matrix.get(k, q)],
        )?;
        let assignment = (0..matrix.tasks())
            .map(|j| {
                if j == p {
                    if b.has(0) {
                        0
                    } else {
                        k
                    }
                } else if j == q {
                    if b.has(1) {
                        0
                    } else {
                        k
                    }
                } else {
                    cheapest_machine(matrix, j)
                }
            })
            .collect();
        Ok(Allocation::for_matrix(assignment, matrix)?)
    }

    fn truthful_verified(&self) -> bool {
        self.inner.truthful_verified()
    }
}

impl std::fmt::Debug for Direct2x2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Direct2x2({})", self.inner.id())
    }
}

impl std::fmt::Debug for Embedded2x2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Embedded2x2({})", self.id())
    }
}
