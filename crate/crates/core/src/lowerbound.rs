//! Ratio certificates for a given mechanism on clustered instances.
//!
//! Three routes lead to a certificate: a task that player 0 loses inside a
//! small perturbation box ("bad task"), a set of one task per cluster that
//! player 0 keeps throughout the box ("good set"), and a direct search over
//! a fixed probe corpus. Every certificate stores a concrete instance, the
//! mechanism's allocation and exact makespans, so it can be re-checked
//! without the mechanism.

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::consts::{ConstantsError, ConstantsProfile};
use crate::mechanisms::{Mechanism, MechanismError};
use crate::model::{Allocation, ClusterTask, ClusteredInstance, ModelError, TaskRef};
use crate::rational::{format_rational, int, mid, pow2_inv, rat, serde_str, serde_str_opt, Rational};
use crate::solve::{cluster_cost, makespan, optimal_makespan_clustered, SolveError};
use crate::wmon::{wmon_check_pair, WmonError, WmonViolation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LowerBoundError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Wmon(#[from] WmonError),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("certificate does not verify: {0}")]
    Verification(String),
}

/// Printed with every bad-fraction estimate.
pub const ELL_GAP_CAVEAT: &str = "CAVEAT (ell gap): the existence of a good set is only guaranteed \
when ell > 3n^3 (3n/delta)^(n-3); this run uses a desk-scale ell that is far smaller, so the bound \
b_k <= (3n/delta)^(k-2) * 3n^3 / ell is shown for comparison only and is neither implied nor tested.";

/// The universally quantified lower bound cannot be reproduced by running
/// code; only the checks in this crate can.
pub const NON_REPRODUCIBILITY_NOTE: &str = "The lower bound for all truthful mechanisms is an \
impossibility statement quantified over every mechanism and is not empirically reproducible. \
This tool only certifies ratios of the specific mechanisms it is given.";

/// Values of the non-special tasks of a trivial cluster and of its one
/// special task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrivialSpec {
    pub special: ClusterTask,
    pub rest: ClusterTask,
}

impl TrivialSpec {
    /// One task `(delta, 1/2)`, the rest `(beta, 1)`.
    pub fn default_for(consts: &ConstantsProfile) -> Self {
        TrivialSpec {
            special: ClusterTask::new(consts.delta.clone(), rat(1, 2)),
            rest: ClusterTask::new(consts.beta.clone(), int(1)),
        }
    }
}

fn standard_task(consts: &ConstantsProfile) -> ClusterTask {
    ClusterTask::new(consts.beta.clone(), int(1))
}

fn hat_task(consts: &ConstantsProfile) -> ClusterTask {
    ClusterTask::new(consts.alpha.clone(), int(1))
}

/// Clusters in `cluster_set` (1-based owners) get `(beta, 1)` everywhere;
/// the others are trivial per `trivial`; dummies are 0. Each trivial
/// cluster's stand-alone optimum is checked to be at most `delta'`.
pub fn make_standard_instance(
    consts: &ConstantsProfile,
    cluster_set: &[usize],
    trivial: &TrivialSpec,
) -> Result<ClusteredInstance, LowerBoundError> {
    let n = consts.n;
    if let Some(&c) = cluster_set.iter().find(|&&c| c == 0 || c >= n) {
        return Err(LowerBoundError::Contract(format!(
            "cluster {c} is outside 1..={}",
            n - 1
        )));
    }
    let k = consts.ell + 1;
    let clusters = (1..n)
        .map(|c| {
            if cluster_set.contains(&c) {
                vec![standard_task(consts); k]
            } else {
                let mut v = vec![trivial.rest.clone(); k];
                v[0] = trivial.special.clone();
                v
            }
        })
        .collect();
    let inst = ClusteredInstance::new(
        n,
        consts.ell,
        clusters,
        vec![Rational::zero(); n],
        consts.theta.clone(),
        consts.big_b.clone(),
    )?;
    for c in (1..n).filter(|c| !cluster_set.contains(c)) {
        let cost = cluster_cost(&inst, c);
        if cost > consts.delta_prime {
            return Err(LowerBoundError::Construction(format!(
                "trivial cluster {c} costs {} > delta' = {}",
                format_rational(&cost),
                format_rational(&consts.delta_prime)
            )));
        }
    }
    Ok(inst)
}

/// Standard instance with every cluster standard.
pub fn standard_instance(consts: &ConstantsProfile) -> Result<ClusteredInstance, LowerBoundError> {
    let all: Vec<usize> = (1..consts.n).collect();
    make_standard_instance(consts, &all, &TrivialSpec::default_for(consts))
}

/// Checks that `p` holds cluster tasks from pairwise different clusters,
/// each at its standard or raised value.
fn check_regular(
    t: &ClusteredInstance,
    p: &[usize],
    consts: &ConstantsProfile,
) -> Result<(), LowerBoundError> {
    let mut seen = Vec::new();
    for &col in p {
        if col >= t.task_count() {
            return Err(LowerBoundError::Contract(format!("column {col} out of range")));
        }
        match t.task_ref(col) {
            TaskRef::Cluster { cluster, .. } => {
                if seen.contains(&cluster) {
                    return Err(LowerBoundError::Contract(format!(
                        "two tasks of cluster {cluster}; a regular set has at most one per cluster"
                    )));
                }
                seen.push(cluster);
            }
            TaskRef::Dummy { .. } => {
                return Err(LowerBoundError::Contract(format!(
                    "column {col} is a dummy task"
                )))
            }
        }
        let task = t.task_at(col).expect("cluster task");
        if *task != standard_task(consts) && *task != hat_task(consts) {
            return Err(LowerBoundError::Contract(format!(
                "task {col} is ({}, {}), not standard",
                format_rational(&task.t),
                format_rational(&task.s)
            )));
        }
    }
    Ok(())
}

/// Copy of `t` with every task of `p` raised to `(alpha, 1)`. Accepts an
/// instance where some of `p` are already raised, so applying it twice is
/// the same as once.
pub fn make_hat(
    t: &ClusteredInstance,
    p: &[usize],
    consts: &ConstantsProfile,
) -> Result<ClusteredInstance, LowerBoundError> {
    check_regular(t, p, consts)?;
    let mut out = t.clone();
    for &col in p {
        out.set_task(col, hat_task(consts))?;
    }
    Ok(out)
}

/// Open intervals `(lower_j, lower_j + width_j)` for the t-values of a task
/// set, with `0 < width_j < beta`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationBox {
    pub tasks: Vec<usize>,
    #[serde(with = "crate::rational::serde_str_vec")]
    pub lower: Vec<Rational>,
    #[serde(with = "crate::rational::serde_str_vec")]
    pub width: Vec<Rational>,
}

impl PerturbationBox {
    pub fn new(
        tasks: Vec<usize>,
        lower: Vec<Rational>,
        width: Vec<Rational>,
        beta: &Rational,
    ) -> Result<Self, LowerBoundError> {
        if tasks.len() != lower.len() || tasks.len() != width.len() {
            return Err(LowerBoundError::Contract("box vectors differ in length".into()));
        }
        for w in &width {
            if !w.is_positive() || w >= beta {
                return Err(LowerBoundError::Contract(format!(
                    "box width {} is not in (0, beta)",
                    format_rational(w)
                )));
            }
        }
        Ok(PerturbationBox {
            tasks,
            lower,
            width,
        })
    }

    /// Width `beta/2` above the current t-values of `p` in `hat`.
    pub fn default_for(
        hat: &ClusteredInstance,
        p: &[usize],
        consts: &ConstantsProfile,
    ) -> Result<Self, LowerBoundError> {
        let lower = p
            .iter()
            .map(|&c| hat.task_at(c).map(|x| x.t.clone()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| LowerBoundError::Contract("box over a non-cluster task".into()))?;
        let width = vec![&consts.beta / int(2); p.len()];
        Self::new(p.to_vec(), lower, width, &consts.beta)
    }

    /// `lower + width (1 - 2^-20)`: just below the supremum.
    pub fn corner(&self, i: usize) -> Rational {
        &self.lower[i] + &self.width[i] * (int(1) - pow2_inv(20))
    }

    pub fn upper(&self, i: usize) -> Rational {
        &self.lower[i] + &self.width[i]
    }

    /// Per-task intersection of several boxes; `None` if some task's
    /// intervals do not overlap.
    pub fn intersect_all(boxes: &[PerturbationBox]) -> Option<PerturbationBox> {
        let mut tasks: Vec<usize> = boxes.iter().flat_map(|b| b.tasks.iter().copied()).collect();
        tasks.sort_unstable();
        tasks.dedup();
        let mut lower = Vec::new();
        let mut width = Vec::new();
        for &t in &tasks {
            let mut lo: Option<Rational> = None;
            let mut hi: Option<Rational> = None;
            for b in boxes {
                if let Some(i) = b.tasks.iter().position(|&x| x == t) {
                    let l = b.lower[i].clone();
                    let u = b.upper(i);
                    lo = Some(lo.map_or(l.clone(), |x| std::cmp::max(x, l)));
                    hi = Some(hi.map_or(u.clone(), |x| std::cmp::min(x, u)));
                }
            }
            let (lo, hi) = (lo?, hi?);
            if hi <= lo {
                return None;
            }
            width.push(&hi - &lo);
            lower.push(lo);
        }
        Some(PerturbationBox {
            tasks,
            lower,
            width,
        })
    }
}

/// `count` instances from the box; sample 0 is the corner, the rest have
/// every box task strictly inside its interval. Deterministic in `seed`.
pub fn sample_box(
    hat: &ClusteredInstance,
    bx: &PerturbationBox,
    count: usize,
    seed: u64,
) -> Result<Vec<ClusteredInstance>, LowerBoundError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1i64 << 20;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut inst = hat.clone();
        for (i, &col) in bx.tasks.iter().enumerate() {
            let t = if k == 0 {
                bx.corner(i)
            } else {
                let u = rat(rng.gen_range(1..scale), scale);
                &bx.lower[i] + &bx.width[i] * u
            };
            let s = inst.task_at(col).expect("cluster task").s.clone();
            inst.set_task(col, ClusterTask::new(t, s))?;
        }
        out.push(inst);
    }
    Ok(out)
}

pub const DEFAULT_BOX_SAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoodVerdict {
    /// Corner and samples pass, and the mechanism is known to be truthful:
    /// under weak monotonicity the corner implies the whole box.
    CornerCertified,
    /// Corner and samples pass; the mechanism has no truthfulness proof.
    GoodEmpirical,
    NotGood,
    /// The corner passes but a sample fails, and the pair is a weak
    /// monotonicity violation.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodSetVerdict {
    pub tasks: Vec<usize>,
    pub verdict: GoodVerdict,
    pub witness: Option<PerturbationBox>,
    /// An instance of the box where some task of the set leaves player 0.
    pub failing: Option<ClusteredInstance>,
    pub samples: usize,
    pub wmon_suspect: Option<WmonViolation>,
}

impl GoodSetVerdict {
    pub fn is_good(&self) -> bool {
        matches!(
            self.verdict,
            GoodVerdict::CornerCertified | GoodVerdict::GoodEmpirical
        )
    }
}

fn keeps_all(mech: &dyn Mechanism, inst: &ClusteredInstance, p: &[usize]) -> Result<bool, LowerBoundError> {
    let a = mech.allocate(&inst.expand())?;
    Ok(p.iter().all(|&c| a.machine_of(c) == 0))
}

/// Good-set test on an already raised instance.
fn good_set_check(
    mech: &dyn Mechanism,
    hat: &ClusteredInstance,
    p: &[usize],
    consts: &ConstantsProfile,
    sample_count: usize,
    seed: u64,
) -> Result<GoodSetVerdict, LowerBoundError> {
    let bx = PerturbationBox::default_for(hat, p, consts)?;
    let samples = sample_box(hat, &bx, sample_count + 1, seed)?;
    let verdict = |verdict, witness, failing, wmon_suspect, used| GoodSetVerdict {
        tasks: p.to_vec(),
        verdict,
        witness,
        failing,
        samples: used,
        wmon_suspect,
    };
    if !keeps_all(mech, &samples[0], p)? {
        return Ok(verdict(GoodVerdict::NotGood, None, Some(samples[0].clone()), None, 1));
    }
    let corner = samples[0].expand();
    for (k, inst) in samples.iter().enumerate().skip(1) {
        if !keeps_all(mech, inst, p)? {
            let row = inst.expand().row(0).to_vec();
            let suspect = wmon_check_pair(mech, &corner, 0, &row)?;
            let kind = if suspect.is_some() {
                GoodVerdict::Inconclusive
            } else {
                GoodVerdict::NotGood
            };
            return Ok(verdict(kind, None, Some(inst.clone()), suspect, k + 1));
        }
    }
    let kind = if mech.truthful_verified() {
        GoodVerdict::CornerCertified
    } else {
        GoodVerdict::GoodEmpirical
    };
    Ok(verdict(kind, Some(bx), None, None, samples.len()))
}

/// Whether player 0 keeps every task of `p` on the corner and
/// `sample_count` random points of the default box above `T^(p)`.
pub fn is_good_set(
    mech: &dyn Mechanism,
    t: &ClusteredInstance,
    p: &[usize],
    consts: &ConstantsProfile,
    sample_count: usize,
    seed: u64,
) -> Result<GoodSetVerdict, LowerBoundError> {
    let hat = make_hat(t, p, consts)?;
    good_set_check(mech, &hat, p, consts, sample_count, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    BadTask,
    GoodSet,
    DirectRatio,
}

/// A concrete instance with the mechanism's allocation and exact costs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub mechanism: String,
    pub description: String,
    pub consts: ConstantsProfile,
    pub instance: ClusteredInstance,
    pub allocation: Allocation,
    /// An optimal allocation, for inspection.
    pub opt_allocation: Allocation,
    #[serde(with = "serde_str")]
    pub mech_cost: Rational,
    #[serde(with = "serde_str")]
    pub opt: Rational,
    #[serde(with = "serde_str")]
    pub ratio: Rational,
    /// Ratio on the same instance before the dummy task was raised.
    #[serde(default, with = "serde_str_opt")]
    pub pre_boost_ratio: Option<Rational>,
    /// Whether the mechanism's cost reaches the value the construction
    /// guarantees (good-set route only).
    #[serde(default)]
    pub floor_met: Option<bool>,
}

impl Certificate {
    /// Recomputes makespans from the stored fields and compares the
    /// serialized forms exactly.
    pub fn verify(&self) -> Result<(), LowerBoundError> {
        let fail = |m: String| Err(LowerBoundError::Verification(m));
        let matrix = self.instance.expand();
        if self.allocation.tasks() != matrix.tasks() || self.allocation.machines() != matrix.machines() {
            return fail("allocation does not fit the instance".into());
        }
        let mech_cost = makespan(&matrix, &self.allocation)?;
        let opt = optimal_makespan_clustered(&self.instance)?.makespan;
        if opt.is_zero() {
            return fail("optimal makespan is zero".into());
        }
        let ratio = &mech_cost / &opt;
        let pairs = [
            ("mech_cost", &mech_cost, &self.mech_cost),
            ("opt", &opt, &self.opt),
            ("ratio", &ratio, &self.ratio),
        ];
        for (name, got, stored) in pairs {
            if format_rational(got) != format_rational(stored) {
                return fail(format!(
                    "{name}: recomputed {} but stored {}",
                    format_rational(got),
                    format_rational(stored)
                ));
            }
        }
        if ratio <= int(1) {
            return fail("ratio does not exceed 1".into());
        }
        Ok(())
    }

    /// [`Certificate::verify`] plus a replay of the mechanism itself.
    pub fn verify_with(&self, mech: &dyn Mechanism) -> Result<(), LowerBoundError> {
        self.verify()?;
        let a = mech.allocate(&self.instance.expand())?;
        if a != self.allocation {
            return Err(LowerBoundError::Verification(
                "mechanism allocates differently from the stored allocation".into(),
            ));
        }
        Ok(())
    }
}

fn ratio_on(
    mech: &dyn Mechanism,
    inst: &ClusteredInstance,
) -> Result<(Allocation, Rational, Allocation, Rational), LowerBoundError> {
    let a = mech.allocate(&inst.expand())?;
    let cost = makespan(&inst.expand(), &a)?;
    let opt = optimal_makespan_clustered(inst)?;
    if opt.makespan.is_zero() {
        return Err(SolveError::ZeroOptimum.into());
    }
    Ok((a, cost, opt.allocation, opt.makespan))
}

pub fn build_certificate(
    mech: &dyn Mechanism,
    inst: ClusteredInstance,
    kind: CertificateKind,
    consts: &ConstantsProfile,
    description: String,
) -> Result<Certificate, LowerBoundError> {
    let (allocation, mech_cost, opt_allocation, opt) = ratio_on(mech, &inst)?;
    let ratio = &mech_cost / &opt;
    Ok(Certificate {
        kind,
        mechanism: mech.id(),
        description,
        consts: consts.clone(),
        instance: inst,
        allocation,
        opt_allocation,
        mech_cost,
        opt,
        ratio,
        pre_boost_ratio: None,
        floor_met: None,
    })
}

fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

/// Amount by which the boosted bad task's s-value is lowered.
fn boost_epsilon() -> Rational {
    pow2_inv(30)
}

/// Scans single tasks, also with the s-value lowered to `1 - 2^-10` and
/// `1 - 2^-20`. For the first task (in column order) that player 0 loses
/// somewhere in its box, raises the owner's dummy to `alpha + (n-1) delta'`,
/// lowers the task's s-value slightly and certifies that instance.
pub fn find_bad_task(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    seed: u64,
    sample_count: usize,
) -> Result<Option<Certificate>, LowerBoundError> {
    let base = standard_instance(consts)?;
    let n = consts.n;
    let s_variants = [int(1), int(1) - pow2_inv(10), int(1) - pow2_inv(20)];
    let mut candidates = Vec::new();
    for col in 0..(n - 1) * (consts.ell + 1) {
        for s in &s_variants {
            candidates.push((col, s.clone()));
        }
    }
    let verdicts = candidates
        .par_iter()
        .enumerate()
        .map(|(idx, (col, s))| {
            let mut hat = make_hat(&base, &[*col], consts)?;
            hat.set_task(*col, ClusterTask::new(consts.alpha.clone(), s.clone()))?;
            good_set_check(mech, &hat, &[*col], consts, sample_count, stream_seed(seed, idx as u64))
        })
        .collect::<Result<Vec<_>, LowerBoundError>>()?;
    let Some((idx, v)) = verdicts
        .into_iter()
        .enumerate()
        .find(|(_, v)| !v.is_good())
    else {
        return Ok(None);
    };
    let col = candidates[idx].0;
    let failing = v.failing.expect("a failed verdict carries its instance");
    let (pre_alloc, pre_cost, _, pre_opt) = ratio_on(mech, &failing)?;
    let owner = match failing.task_ref(col) {
        TaskRef::Cluster { cluster, .. } => cluster,
        TaskRef::Dummy { .. } => unreachable!("candidates are cluster tasks"),
    };
    let lost_to = pre_alloc.machine_of(col);
    let mut boosted = failing.clone();
    let boost = &consts.alpha + int(n as i64 - 1) * &consts.delta_prime;
    boosted.set_dummy(owner, boost)?;
    let task = failing.task_at(col).expect("cluster task").clone();
    boosted.set_task(col, ClusterTask::new(task.t.clone(), &task.s - boost_epsilon()))?;
    let mut cert = build_certificate(
        mech,
        boosted,
        CertificateKind::BadTask,
        consts,
        format!(
            "task {col} (cluster {owner}) leaves player 0 for player {lost_to} at t = {}, s = {}; \
             dummy of player {owner} raised to alpha + (n-1) delta', s lowered by 2^-30",
            format_rational(&task.t),
            format_rational(&task.s)
        ),
    )?;
    cert.pre_boost_ratio = Some(pre_cost / pre_opt);
    Ok(Some(cert))
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchStep {
    pub tasks: Vec<usize>,
    pub candidate: usize,
    pub cluster: usize,
    pub verdict: GoodVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct SiblingCensus {
    pub cluster: usize,
    pub tested: usize,
    pub not_good: usize,
    /// Whether fewer than `2 n^2` siblings failed, the count a good
    /// extension argument tolerates.
    pub below_2n2: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodSetSearch {
    pub found: Option<(Vec<usize>, PerturbationBox)>,
    pub log: Vec<SearchStep>,
    pub sibling_census: Vec<SiblingCensus>,
    pub tests_used: usize,
    pub note: String,
}

/// Grows a good set one cluster at a time: a random task of an unused
/// cluster first, then its siblings, until `target_k` tasks are held or
/// `budget` good-set tests are spent.
pub fn search_good_set(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    target_k: usize,
    budget: usize,
    seed: u64,
    sample_count: usize,
) -> Result<GoodSetSearch, LowerBoundError> {
    let n = consts.n;
    if target_k == 0 || target_k > n - 1 {
        return Err(LowerBoundError::Contract(format!(
            "target size {target_k} must be in 1..={}",
            n - 1
        )));
    }
    let base = standard_instance(consts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(&mut rng);
    let mut held: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    let mut census = Vec::new();
    let mut used = 0usize;
    let k = consts.ell + 1;
    for cluster in order {
        if held.len() == target_k {
            break;
        }
        let mut positions: Vec<usize> = (0..k).collect();
        positions.shuffle(&mut rng);
        let cols: Vec<usize> = positions
            .iter()
            .map(|&pos| base.column_of(TaskRef::Cluster { cluster, pos }))
            .collect();
        let remaining = budget.saturating_sub(used);
        let cols: Vec<usize> = cols.into_iter().take(remaining).collect();
        if cols.is_empty() {
            break;
        }
        let round_seed: u64 = rng.gen();
        let verdicts = cols
            .par_iter()
            .enumerate()
            .map(|(i, &col)| {
                let mut set = held.clone();
                set.push(col);
                is_good_set(mech, &base, &set, consts, sample_count, stream_seed(round_seed, i as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        // Siblings are only consulted when the first pick fails.
        let chosen = verdicts.iter().position(|v| v.is_good());
        let consulted = chosen.map_or(verdicts.len(), |i| i + 1);
        used += consulted;
        for (v, &col) in verdicts.iter().zip(&cols).take(consulted) {
            log.push(SearchStep {
                tasks: held.clone(),
                candidate: col,
                cluster,
                verdict: v.verdict,
            });
        }
        let not_good = verdicts.iter().take(consulted).filter(|v| !v.is_good()).count();
        census.push(SiblingCensus {
            cluster,
            tested: consulted,
            not_good,
            below_2n2: not_good < 2 * n * n,
        });
        match chosen {
            Some(i) => held.push(cols[i]),
            None => {
                let note = if held.is_empty() {
                    "no single task of this cluster is good: bad tasks present".to_string()
                } else {
                    format!(
                        "no task of cluster {cluster} extends the good set of size {}",
                        held.len()
                    )
                };
                return Ok(GoodSetSearch {
                    found: None,
                    log,
                    sibling_census: census,
                    tests_used: used,
                    note,
                });
            }
        }
    }
    if held.len() < target_k {
        return Ok(GoodSetSearch {
            found: None,
            log,
            sibling_census: census,
            tests_used: used,
            note: format!("budget of {budget} good-set tests exhausted"),
        });
    }
    let hat = make_hat(&base, &held, consts)?;
    let bx = PerturbationBox::default_for(&hat, &held, consts)?;
    Ok(GoodSetSearch {
        found: Some((held, bx)),
        log,
        sibling_census: census,
        tests_used: used,
        note: "good set found".into(),
    })
}

/// Certificate for a good set: its tasks at the box corner and player 0's
/// dummy at `1 + (n-1) delta'`.
pub fn good_set_certificate(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    p: &[usize],
    bx: &PerturbationBox,
) -> Result<Certificate, LowerBoundError> {
    let n = consts.n;
    let base = standard_instance(consts)?;
    let mut inst = make_hat(&base, p, consts)?;
    for (i, &col) in bx.tasks.iter().enumerate() {
        let s = inst.task_at(col).expect("cluster task").s.clone();
        inst.set_task(col, ClusterTask::new(bx.corner(i), s))?;
    }
    let (_, pre_cost, _, pre_opt) = ratio_on(mech, &inst)?;
    let d0 = int(1) + int(n as i64 - 1) * &consts.delta_prime;
    inst.set_dummy(0, d0.clone())?;
    let mut cert = build_certificate(
        mech,
        inst,
        CertificateKind::GoodSet,
        consts,
        format!(
            "good set {p:?} at the box corner; dummy of player 0 raised to 1 + (n-1) delta' = {}",
            format_rational(&d0)
        ),
    )?;
    let floor = int(p.len() as i64) * &consts.alpha + &d0;
    cert.floor_met = Some(cert.mech_cost >= floor);
    cert.pre_boost_ratio = Some(pre_cost / pre_opt);
    Ok(cert)
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialCheck {
    /// Index into the set of the task left out.
    pub removed: usize,
    /// Grid index when the left-out task was replaced by `(delta, q delta/(2n))`.
    pub q: Option<usize>,
    pub verdict: GoodVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct PotentialGoodReport {
    pub potentially_good: bool,
    pub checks: Vec<PotentialCheck>,
    pub witness: Option<PerturbationBox>,
    pub grid_points: usize,
    pub notes: Vec<String>,
}

/// s-value of grid point `q`: `q delta / (2n)`, with `q = 0` moved to
/// `delta / (4n)` so every value stays positive.
pub fn grid_s_value(consts: &ConstantsProfile, q: usize) -> Rational {
    let n2 = int(2 * consts.n as i64);
    if q == 0 {
        &consts.delta / (n2 * int(2))
    } else {
        int(q as i64) * &consts.delta / n2
    }
}

/// Every `P` minus one task is good, also with the removed task set to
/// `(delta, s_q)` for each point of the grid; the witness box is the
/// intersection of all boxes found.
pub fn is_potentially_good(
    mech: &dyn Mechanism,
    t: &ClusteredInstance,
    p: &[usize],
    consts: &ConstantsProfile,
    sample_count: usize,
    seed: u64,
) -> Result<PotentialGoodReport, LowerBoundError> {
    if p.len() < 2 {
        return Err(LowerBoundError::Contract("need at least two tasks".into()));
    }
    check_regular(t, p, consts)?;
    let grid_points = consts.grid_steps() + 1;
    let mut checks = Vec::new();
    let mut boxes = Vec::new();
    let mut notes = vec![format!(
        "grid point q = 0 uses s = delta/(4n) = {} instead of 0",
        format_rational(&grid_s_value(consts, 0))
    )];
    let rest = |k: usize| -> Vec<usize> {
        p.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, &c)| c).collect()
    };
    let fail = |checks, notes| PotentialGoodReport {
        potentially_good: false,
        checks,
        witness: None,
        grid_points,
        notes,
    };
    for k in 0..p.len() {
        let v = is_good_set(mech, t, &rest(k), consts, sample_count, stream_seed(seed, k as u64))?;
        let good = v.is_good();
        checks.push(PotentialCheck {
            removed: k,
            q: None,
            verdict: v.verdict,
        });
        if !good {
            return Ok(fail(checks, notes));
        }
        boxes.push(v.witness.expect("good verdicts carry a box"));
    }
    for k in 0..p.len() {
        let others = rest(k);
        let results = (0..grid_points)
            .into_par_iter()
            .map(|q| {
                let mut inst = t.clone();
                inst.set_task(p[k], ClusterTask::new(consts.delta.clone(), grid_s_value(consts, q)))?;
                let idx = (p.len() + k * grid_points + q) as u64;
                is_good_set(mech, &inst, &others, consts, sample_count, stream_seed(seed, idx))
            })
            .collect::<Result<Vec<_>, LowerBoundError>>()?;
        for (q, v) in results.into_iter().enumerate() {
            let good = v.is_good();
            checks.push(PotentialCheck {
                removed: k,
                q: Some(q),
                verdict: v.verdict,
            });
            if !good {
                return Ok(fail(checks, notes));
            }
            boxes.push(v.witness.expect("good verdicts carry a box"));
        }
    }
    let witness = PerturbationBox::intersect_all(&boxes);
    if witness.is_none() {
        notes.push("witness intervals do not intersect; verdict inconclusive".into());
        return Ok(fail(checks, notes));
    }
    Ok(PotentialGoodReport {
        potentially_good: true,
        checks,
        witness,
        grid_points,
        notes,
    })
}

/// Sibling pairs set to `(K, beta)` and `(beta, K)` with `K = min(n^3, B/2)`:
/// any rule that keeps or gives away both tasks together pays `K` while the
/// optimum is tiny.
pub fn killer_pair_instances(consts: &ConstantsProfile) -> Result<Vec<(String, ClusteredInstance)>, LowerBoundError> {
    let base = standard_instance(consts)?;
    let n = consts.n as i64;
    let big = std::cmp::min(int(n * n * n), &consts.big_b / int(2));
    let mut out = Vec::new();
    for cluster in 1..consts.n {
        for a in 0..=consts.ell {
            for b in 0..=consts.ell {
                if a == b {
                    continue;
                }
                let ca = base.column_of(TaskRef::Cluster { cluster, pos: a });
                let cb = base.column_of(TaskRef::Cluster { cluster, pos: b });
                let mut inst = base.clone();
                inst.set_task(ca, ClusterTask::new(big.clone(), consts.beta.clone()))?;
                inst.set_task(cb, ClusterTask::new(consts.beta.clone(), big.clone()))?;
                out.push((
                    format!("killer pair: task {ca} = (K, beta), task {cb} = (beta, K), K = {}", format_rational(&big)),
                    inst,
                ));
            }
        }
    }
    Ok(out)
}

fn keeps_task(
    mech: &dyn Mechanism,
    base: &ClusteredInstance,
    col: usize,
    t: &Rational,
    s: &Rational,
) -> Result<bool, LowerBoundError> {
    let mut inst = base.clone();
    inst.set_task(col, ClusterTask::new(t.clone(), s.clone()))?;
    keeps_all(mech, &inst, &[col])
}

const PROBE_STEPS: usize = 48;

/// Boundary probes for one task with everything else standard.
///
/// With s fixed, the task's largest t still kept by player 0 is bisected
/// and player 0's dummy is set to s: a slope `lambda > 1` then yields a
/// ratio near `1 + lambda`. With t fixed, the largest s at which the task
/// still goes to its owner is bisected and the owner's dummy is set to t,
/// giving a ratio near `1 + 1/lambda`.
pub fn lambda_probe_instances(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    col: usize,
) -> Result<Vec<(String, ClusteredInstance)>, LowerBoundError> {
    let base = standard_instance(consts)?;
    let owner = match base.task_ref(col) {
        TaskRef::Cluster { cluster, .. } => cluster,
        TaskRef::Dummy { .. } => {
            return Err(LowerBoundError::Contract(format!("column {col} is a dummy")))
        }
    };
    let lo_bound = &consts.beta / int(2);
    let hi_bound = &consts.big_b * rat(999, 1000);
    let scales = [int(1), int(16), int(128)];
    let mut out = Vec::new();
    for s in &scales {
        let keep = |t: &Rational| keeps_task(mech, &base, col, t, s);
        if !keep(&lo_bound)? || keep(&hi_bound)? {
            continue;
        }
        let (mut lo, mut hi) = (lo_bound.clone(), hi_bound.clone());
        for _ in 0..PROBE_STEPS {
            let m = mid(&lo, &hi);
            if keep(&m)? {
                lo = m;
            } else {
                hi = m;
            }
        }
        let mut inst = base.clone();
        inst.set_task(col, ClusterTask::new(lo.clone(), s.clone()))?;
        inst.set_dummy(0, s.clone())?;
        out.push((
            format!(
                "boundary probe on task {col}: s = {}, largest kept t ~ {}, dummy of player 0 = s",
                format_rational(s),
                crate::rational::describe(&lo)
            ),
            inst,
        ));
    }
    for t in &scales {
        let keep = |s: &Rational| keeps_task(mech, &base, col, t, s);
        if keep(&lo_bound)? || !keep(&hi_bound)? {
            continue;
        }
        let (mut lo, mut hi) = (lo_bound.clone(), hi_bound.clone());
        for _ in 0..PROBE_STEPS {
            let m = mid(&lo, &hi);
            if keep(&m)? {
                hi = m;
            } else {
                lo = m;
            }
        }
        let mut inst = base.clone();
        inst.set_task(col, ClusterTask::new(t.clone(), lo.clone()))?;
        inst.set_dummy(owner, t.clone())?;
        out.push((
            format!(
                "boundary probe on task {col}: t = {}, largest lost s ~ {}, dummy of player {owner} = t",
                format_rational(t),
                crate::rational::describe(&lo)
            ),
            inst,
        ));
    }
    Ok(out)
}

/// Certificates from the killer pairs and from boundary probes on the given
/// columns (every cluster task when `columns` is `None`). Only ratios above
/// `1 + 10^-6` are kept.
pub fn direct_search(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    columns: Option<&[usize]>,
) -> Result<Vec<Certificate>, LowerBoundError> {
    let all: Vec<usize> = (0..(consts.n - 1) * (consts.ell + 1)).collect();
    let cols = columns.unwrap_or(&all);
    let mut corpus = killer_pair_instances(consts)?;
    let probes = cols
        .par_iter()
        .map(|&c| lambda_probe_instances(mech, consts, c))
        .collect::<Result<Vec<_>, _>>()?;
    corpus.extend(probes.into_iter().flatten());
    let threshold = int(1) + rat(1, 1_000_000);
    let certs = corpus
        .into_par_iter()
        .map(|(desc, inst)| {
            match build_certificate(mech, inst, CertificateKind::DirectRatio, consts, desc) {
                Ok(c) => Ok(Some(c)),
                Err(LowerBoundError::Solve(SolveError::ZeroOptimum)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, LowerBoundError>>()?;
    Ok(certs
        .into_iter()
        .flatten()
        .filter(|c| c.ratio > threshold)
        .collect())
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub samples: usize,
    pub search_budget: usize,
    pub direct: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            samples: DEFAULT_BOX_SAMPLES,
            search_budget: 256,
            direct: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateSummary {
    pub kind: CertificateKind,
    #[serde(with = "serde_str")]
    pub ratio: Rational,
    pub description: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyOutcome {
    pub best: Option<Certificate>,
    /// Certificate of the bad-task or good-set route, when one exists.
    pub branch: Option<Certificate>,
    pub candidates: Vec<CandidateSummary>,
    pub search: Option<GoodSetSearch>,
    pub message: String,
}

/// Runs the bad-task scan, the good-set search (when no bad task exists)
/// and the direct search, and returns the certificate with the largest
/// ratio. Reports "no certificate" rather than anything at or below
/// `1 + 10^-6`.
pub fn certify_lower_bound(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    seed: u64,
    opts: &CertifyOptions,
) -> Result<CertifyOutcome, LowerBoundError> {
    let mut certs = Vec::new();
    let mut search = None;
    if let Some(c) = find_bad_task(mech, consts, stream_seed(seed, 0), opts.samples)? {
        certs.push(c);
    } else {
        let s = search_good_set(
            mech,
            consts,
            consts.n - 1,
            opts.search_budget,
            stream_seed(seed, 1),
            opts.samples,
        )?;
        if let Some((p, bx)) = &s.found {
            certs.push(good_set_certificate(mech, consts, p, bx)?);
        }
        search = Some(s);
    }
    let branch = certs.first().cloned();
    if opts.direct {
        certs.extend(direct_search(mech, consts, None)?);
    }
    let threshold = int(1) + rat(1, 1_000_000);
    certs.retain(|c| c.ratio > threshold);
    let candidates = certs
        .iter()
        .map(|c| CandidateSummary {
            kind: c.kind,
            ratio: c.ratio.clone(),
            description: c.description.clone(),
        })
        .collect();
    // First maximum wins, so ties keep the bad-task/good-set certificate.
    let best = certs
        .into_iter()
        .fold(None::<Certificate>, |acc, c| match acc {
            Some(a) if a.ratio >= c.ratio => Some(a),
            _ => Some(c),
        });
    let message = match &best {
        Some(c) => format!(
            "certificate found: {:?} with ratio {}",
            c.kind,
            crate::rational::describe(&c.ratio)
        ),
        None => "no certificate above ratio 1 + 10^-6 was found".into(),
    };
    Ok(CertifyOutcome {
        best,
        branch,
        candidates,
        search,
        message,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BadFractionEstimate {
    pub mechanism: String,
    pub n: usize,
    pub k: usize,
    pub ell: usize,
    pub trials: usize,
    pub bad: usize,
    /// Trials whose failure was also a weak monotonicity violation; counted
    /// in `bad`.
    pub inconclusive: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `(3n/delta)^(k-2) * 3n^3 / ell` at this run's `ell`.
    #[serde(with = "serde_str")]
    pub comparison_bound: Rational,
    /// `3n^3 (3n/delta)^(n-3)`, the cluster size the existence argument needs.
    #[serde(with = "serde_str")]
    pub required_ell: Rational,
    pub caveat: String,
}

/// Two-sided Clopper-Pearson interval at level `1 - alpha`.
pub fn clopper_pearson(successes: usize, trials: usize, alpha: f64) -> (f64, f64) {
    let (x, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0)
            .expect("positive shape parameters")
            .inverse_cdf(alpha / 2.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        Beta::new(x + 1.0, n - x)
            .expect("positive shape parameters")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

fn rational_pow(base: &Rational, exp: i64) -> Rational {
    let mut out = Rational::one();
    for _ in 0..exp.unsigned_abs() {
        out *= base;
    }
    if exp < 0 {
        out.recip()
    } else {
        out
    }
}

/// Fraction of random regular `k`-sets that are not good, over `trials`
/// sets on the standard instance, with a 95% Clopper-Pearson interval.
pub fn estimate_bad_fraction(
    mech: &dyn Mechanism,
    consts: &ConstantsProfile,
    k: usize,
    trials: usize,
    seed: u64,
    sample_count: usize,
) -> Result<BadFractionEstimate, LowerBoundError> {
    let n = consts.n;
    if trials < 30 {
        return Err(LowerBoundError::Contract(format!(
            "at least 30 trials are needed, got {trials}"
        )));
    }
    if k == 0 || k > n - 1 {
        return Err(LowerBoundError::Contract(format!("k must be in 1..={}", n - 1)));
    }
    let base = standard_instance(consts)?;
    let verdicts = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let mut clusters: Vec<usize> = (1..n).collect();
            clusters.shuffle(&mut rng);
            let set: Vec<usize> = clusters[..k]
                .iter()
                .map(|&cluster| {
                    let pos = rng.gen_range(0..=consts.ell);
                    base.column_of(TaskRef::Cluster { cluster, pos })
                })
                .collect();
            is_good_set(mech, &base, &set, consts, sample_count, rng.gen()).map(|v| v.verdict)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bad = verdicts
        .iter()
        .filter(|v| matches!(v, GoodVerdict::NotGood | GoodVerdict::Inconclusive))
        .count();
    let inconclusive = verdicts
        .iter()
        .filter(|v| matches!(v, GoodVerdict::Inconclusive))
        .count();
    let (ci_low, ci_high) = clopper_pearson(bad, trials, 0.05);
    let three_n_over_delta = int(3 * n as i64) / &consts.delta;
    let three_n3 = int(3 * (n * n * n) as i64);
    let comparison_bound =
        rational_pow(&three_n_over_delta, k as i64 - 2) * &three_n3 / int(consts.ell as i64);
    let required_ell = &three_n3 * rational_pow(&three_n_over_delta, n as i64 - 3);
    Ok(BadFractionEstimate {
        mechanism: mech.id(),
        n,
        k,
        ell: consts.ell,
        trials,
        bad,
        inconclusive,
        estimate: bad as f64 / trials as f64,
        ci_low,
        ci_high,
        comparison_bound,
        required_ell,
        caveat: ELL_GAP_CAVEAT.to_string(),
    })
}
