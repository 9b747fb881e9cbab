//! Weak-monotonicity checks.
//!
//! A rule is weakly monotone when, for every machine `i` and every unilateral
//! change of its bids from `t_i` to `t'_i`,
//! `sum_j (a'_ij - a_ij)(t'_ij - t_ij) <= 0`. All checks here are exact; a
//! clean scan only means no violation was found.

use std::collections::BTreeSet;

use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mechanisms::{InputShape, Mechanism, MechanismError};
use crate::model::{Allocation, CostMatrix, ModelError};
use crate::rational::{format_rational, rat, serde_str, serde_str_vec, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WmonError {
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown generator {0:?}; expected uniform, single, structured or mixed")]
    UnknownGenerator(String),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("cannot build a worker pool: {0}")]
    Pool(String),
}

/// A unilateral deviation with a strictly positive monotonicity sum.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WmonViolation {
    pub machine: usize,
    pub matrix: CostMatrix,
    #[serde(with = "serde_str_vec")]
    pub original_row: Vec<Rational>,
    #[serde(with = "serde_str_vec")]
    pub deviated_row: Vec<Rational>,
    pub allocation: Allocation,
    pub deviated_allocation: Allocation,
    #[serde(with = "serde_str")]
    pub sum: Rational,
}

/// `sum_j (a'_ij - a_ij)(t'_ij - t_ij)` for machine `i`.
pub fn wmon_sum(
    row: &[Rational],
    alt_row: &[Rational],
    alloc: &Allocation,
    alt_alloc: &Allocation,
    machine: usize,
) -> Rational {
    let mut sum = Rational::zero();
    for j in 0..row.len() {
        let da = alt_alloc.indicator(machine, j) - alloc.indicator(machine, j);
        if da != 0 {
            let dt = &alt_row[j] - &row[j];
            if da > 0 {
                sum += dt;
            } else {
                sum -= dt;
            }
        }
    }
    sum
}

/// Checks machine `machine` moving from its row in `matrix` to `alt_row`.
pub fn wmon_check_pair(
    mech: &dyn Mechanism,
    matrix: &CostMatrix,
    machine: usize,
    alt_row: &[Rational],
) -> Result<Option<WmonViolation>, WmonError> {
    let alt = matrix.with_row(machine, alt_row)?;
    let a = mech.allocate(matrix)?;
    let b = mech.allocate(&alt)?;
    let sum = wmon_sum(matrix.row(machine), alt_row, &a, &b, machine);
    if sum.is_positive() {
        Ok(Some(WmonViolation {
            machine,
            matrix: matrix.clone(),
            original_row: matrix.row(machine).to_vec(),
            deviated_row: alt_row.to_vec(),
            allocation: a,
            deviated_allocation: b,
            sum,
        }))
    } else {
        Ok(None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// Fresh random matrix and a fresh random row for one machine.
    Uniform,
    /// Change a single entry of one machine's row.
    Single,
    /// Lower some of the machine's own tasks and raise some others.
    Structured,
    /// One of the three above, chosen per trial.
    Mixed,
}

impl Generator {
    pub fn parse(s: &str) -> Result<Self, WmonError> {
        match s {
            "uniform" => Ok(Generator::Uniform),
            "single" => Ok(Generator::Single),
            "structured" => Ok(Generator::Structured),
            "mixed" | "default" => Ok(Generator::Mixed),
            other => Err(WmonError::UnknownGenerator(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Generator::Uniform => "uniform",
            Generator::Single => "single",
            Generator::Structured => "structured",
            Generator::Mixed => "mixed",
        }
    }
}

/// Grid `k/16`, `k = 1..=64`.
fn grid_value<R: Rng>(rng: &mut R) -> Rational {
    rat(rng.gen_range(1..=64), 16)
}

fn pick_shape<R: Rng>(shape: InputShape, rng: &mut R) -> (usize, usize) {
    match shape {
        InputShape::Fixed { n, m } => (n, m),
        InputShape::Any => (rng.gen_range(2..=4), rng.gen_range(1..=4)),
        InputShape::AtLeast { n, m } => (
            n.max(2) + rng.gen_range(0..=1),
            m.max(1) + rng.gen_range(0..=2),
        ),
    }
}

fn random_matrix<R: Rng>(n: usize, m: usize, rng: &mut R) -> CostMatrix {
    CostMatrix::new(
        (0..n)
            .map(|_| (0..m).map(|_| grid_value(rng)).collect())
            .collect(),
    )
    .expect("grid values are positive")
}

fn deviation<R: Rng>(
    mech: &dyn Mechanism,
    matrix: &CostMatrix,
    machine: usize,
    generator: Generator,
    rng: &mut R,
) -> Result<Vec<Rational>, WmonError> {
    let m = matrix.tasks();
    let row = matrix.row(machine).to_vec();
    Ok(match generator {
        Generator::Uniform => (0..m).map(|_| grid_value(rng)).collect(),
        Generator::Single => {
            let mut alt = row;
            alt[rng.gen_range(0..m)] = grid_value(rng);
            alt
        }
        Generator::Structured => {
            let alloc = mech.allocate(matrix)?;
            let mut alt = row;
            for (j, v) in alt.iter_mut().enumerate() {
                if !rng.gen_bool(0.6) {
                    continue;
                }
                let step = rat(rng.gen_range(1..=16), 16);
                if alloc.machine_of(j) == machine {
                    // Lower, staying positive.
                    *v = &*v * rat(rng.gen_range(1..=3), 4);
                } else {
                    *v += step;
                }
            }
            alt
        }
        Generator::Mixed => {
            let g = *[Generator::Uniform, Generator::Single, Generator::Structured]
                .choose(rng)
                .unwrap();
            return deviation(mech, matrix, machine, g, rng);
        }
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WmonReport {
    pub mechanism: String,
    pub generator: String,
    pub seed: u64,
    pub trials: u64,
    pub violations: u64,
    /// Trial index and record of the first violation.
    pub first_violation: Option<(u64, WmonViolation)>,
    pub verdict: String,
}

impl WmonReport {
    pub fn clean(&self) -> bool {
        self.violations == 0
    }
}

/// Per-trial RNG: stream `trial` of the seed, so results do not depend on
/// how trials are split across workers.
fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn run_trial(
    mech: &dyn Mechanism,
    base: Option<&CostMatrix>,
    generator: Generator,
    seed: u64,
    trial: u64,
) -> Result<Option<WmonViolation>, WmonError> {
    let mut rng = trial_rng(seed, trial);
    let matrix = match base {
        Some(b) => b.clone(),
        None => {
            let (n, m) = pick_shape(mech.input_shape(), &mut rng);
            random_matrix(n, m, &mut rng)
        }
    };
    let machine = rng.gen_range(0..matrix.machines());
    let alt = deviation(mech, &matrix, machine, generator, &mut rng)?;
    wmon_check_pair(mech, &matrix, machine, &alt)
}

/// Randomized search for violations. With `base` set, every trial deviates
/// from that matrix; otherwise each trial draws a fresh matrix of a shape
/// the mechanism accepts. `workers = 0` uses the global pool.
pub fn wmon_scan(
    mech: &dyn Mechanism,
    base: Option<&CostMatrix>,
    generator: Generator,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<WmonReport, WmonError> {
    if trials == 0 {
        return Err(WmonError::NoTrials);
    }
    if let Some(b) = base {
        mech.check_shape(b)?;
    }
    let work = || -> Result<Vec<(u64, WmonViolation)>, WmonError> {
        let found: Vec<Result<Option<(u64, WmonViolation)>, WmonError>> = (0..trials)
            .into_par_iter()
            .map(|t| run_trial(mech, base, generator, seed, t).map(|v| v.map(|v| (t, v))))
            .collect();
        let mut out = Vec::new();
        for r in found {
            if let Some(v) = r? {
                out.push(v);
            }
        }
        Ok(out)
    };
    let found = if workers == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| WmonError::Pool(e.to_string()))?
            .install(work)?
    };
    let violations = found.len() as u64;
    let first_violation = found.into_iter().min_by_key(|(t, _)| *t);
    let verdict = if violations == 0 {
        format!("no violation found in {trials} trials")
    } else {
        format!("{violations} violation(s) found in {trials} trials")
    };
    Ok(WmonReport {
        mechanism: mech.id(),
        generator: generator.name().to_string(),
        seed,
        trials,
        violations,
        first_violation,
        verdict,
    })
}

/// Every unilateral deviation over a value grid for one matrix shape.
/// Returns the first violation in enumeration order.
pub fn wmon_exhaustive(
    mech: &dyn Mechanism,
    n: usize,
    m: usize,
    grid: &[Rational],
) -> Result<Option<WmonViolation>, WmonError> {
    let rows = all_rows(m, grid);
    let mut indices = vec![0usize; n];
    loop {
        let matrix = CostMatrix::new(indices.iter().map(|&r| rows[r].clone()).collect())?;
        for i in 0..n {
            for alt in &rows {
                if let Some(v) = wmon_check_pair(mech, &matrix, i, alt)? {
                    return Ok(Some(v));
                }
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(None);
            }
            indices[k] += 1;
            if indices[k] < rows.len() {
                break;
            }
            indices[k] = 0;
            k += 1;
        }
    }
}

fn all_rows(m: usize, grid: &[Rational]) -> Vec<Vec<Rational>> {
    let mut rows: Vec<Vec<Rational>> = vec![Vec::new()];
    for _ in 0..m {
        rows = rows
            .into_iter()
            .flat_map(|r| {
                grid.iter().map(move |v| {
                    let mut r2 = r.clone();
                    r2.push(v.clone());
                    r2
                })
            })
            .collect();
    }
    rows
}

/// Outcome of the single-player deviation test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum DeviationOutcome {
    Pass,
    /// Machine `i`'s allocation on `S ∪ S'` changed.
    Counterexample {
        deviated: CostMatrix,
        allocation: Allocation,
        deviated_allocation: Allocation,
        changed_tasks: Vec<usize>,
    },
}

/// Lowers machine `i`'s bids on `S ⊆ A_i` by `decrements` and raises them on
/// `S'` (disjoint from `A_i`) by `increments`; a weakly monotone rule keeps
/// every task of `S` with `i` and every task of `S'` away from it.
pub fn deviation_check(
    mech: &dyn Mechanism,
    matrix: &CostMatrix,
    machine: usize,
    s: &[usize],
    s_prime: &[usize],
    decrements: &[Rational],
    increments: &[Rational],
) -> Result<DeviationOutcome, WmonError> {
    let contract = |m: String| Err(WmonError::Contract(m));
    if machine >= matrix.machines() {
        return contract(format!("machine {machine} does not exist"));
    }
    if s.len() != decrements.len() || s_prime.len() != increments.len() {
        return contract("one decrement per task of S and one increment per task of S'".into());
    }
    let alloc = mech.allocate(matrix)?;
    let mut seen = BTreeSet::new();
    for &j in s.iter().chain(s_prime) {
        if j >= matrix.tasks() {
            return contract(format!("task {j} does not exist"));
        }
        if !seen.insert(j) {
            return contract(format!("task {j} appears twice in S and S'"));
        }
    }
    for &j in s {
        if alloc.machine_of(j) != machine {
            return contract(format!("task {j} of S is not allocated to machine {machine}"));
        }
    }
    for &j in s_prime {
        if alloc.machine_of(j) == machine {
            return contract(format!("task {j} of S' is allocated to machine {machine}"));
        }
    }
    let mut row = matrix.row(machine).to_vec();
    for (&j, d) in s.iter().zip(decrements) {
        if !d.is_positive() {
            return contract("decrements must be strictly positive".into());
        }
        row[j] = &row[j] - d;
        if row[j].is_negative() {
            return contract(format!(
                "decrement on task {j} makes the bid negative ({})",
                format_rational(&row[j])
            ));
        }
    }
    for (&j, d) in s_prime.iter().zip(increments) {
        if !d.is_positive() {
            return contract("increments must be strictly positive".into());
        }
        row[j] = &row[j] + d;
    }
    let deviated = matrix.with_row(machine, &row)?;
    let after = mech.allocate(&deviated)?;
    let changed: Vec<usize> = s
        .iter()
        .chain(s_prime)
        .copied()
        .filter(|&j| (alloc.machine_of(j) == machine) != (after.machine_of(j) == machine))
        .collect();
    if changed.is_empty() {
        Ok(DeviationOutcome::Pass)
    } else {
        Ok(DeviationOutcome::Counterexample {
            deviated,
            allocation: alloc,
            deviated_allocation: after,
            changed_tasks: changed,
        })
    }
}

/// One probe of [`restriction_check`]: machine and its new row.
#[derive(Clone, Debug)]
pub struct Probe {
    pub machine: usize,
    pub row: Vec<Rational>,
}

/// Monotonicity of the rule restricted to the tasks outside `fixed`: every
/// probe may only move bids on non-fixed tasks.
pub fn restriction_check(
    mech: &dyn Mechanism,
    matrix: &CostMatrix,
    fixed: &[usize],
    probes: &[Probe],
) -> Result<Option<WmonViolation>, WmonError> {
    for probe in probes {
        if probe.machine >= matrix.machines() || probe.row.len() != matrix.tasks() {
            return Err(WmonError::Contract(
                "probe machine or row length out of range".into(),
            ));
        }
        for &j in fixed {
            if probe.row[j] != *matrix.get(probe.machine, j) {
                return Err(WmonError::Contract(format!(
                    "probe changes fixed task {j}"
                )));
            }
        }
    }
    for probe in probes {
        if let Some(v) = wmon_check_pair(mech, matrix, probe.machine, &probe.row)? {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Random probes that leave `fixed` untouched, for use with
/// [`restriction_check`].
pub fn random_probes(matrix: &CostMatrix, fixed: &[usize], count: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let machine = rng.gen_range(0..matrix.machines());
            let mut row = matrix.row(machine).to_vec();
            for (j, v) in row.iter_mut().enumerate() {
                if !fixed.contains(&j) && rng.gen_bool(0.5) {
                    *v = grid_value(&mut rng);
                }
            }
            Probe { machine, row }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{MaxCost, Vcg, WeightedVcg};
    use crate::rational::int;

    #[test]
    fn identity_deviation_passes() {
        let m = CostMatrix::from_ints(&[&[1, 2], &[2, 1]]).unwrap();
        assert!(wmon_check_pair(&MaxCost, &m, 0, m.row(0)).unwrap().is_none());
    }

    #[test]
    fn vcg_flip_has_negative_sum() {
        let m = CostMatrix::from_ints(&[&[1], &[2]]).unwrap();
        let a = Vcg.allocate(&m).unwrap();
        let alt = m.with_row(0, &[int(3)]).unwrap();
        let b = Vcg.allocate(&alt).unwrap();
        assert_eq!(wmon_sum(m.row(0), &[int(3)], &a, &b, 0), int(-2));
        assert!(wmon_check_pair(&Vcg, &m, 0, &[int(3)]).unwrap().is_none());
    }

    #[test]
    fn maxcost_violation_example() {
        let m = CostMatrix::from_ints(&[&[1], &[2]]).unwrap();
        let v = wmon_check_pair(&MaxCost, &m, 1, &[rat(1, 2)]).unwrap().unwrap();
        assert_eq!(v.sum, rat(3, 2));
    }

    #[test]
    fn scan_rejects_zero_trials_and_unknown_generator() {
        assert_eq!(
            wmon_scan(&Vcg, None, Generator::Mixed, 0, 1, 1).unwrap_err(),
            WmonError::NoTrials
        );
        assert!(Generator::parse("bogus").is_err());
    }

    #[test]
    fn scan_is_deterministic_across_worker_counts() {
        let a = wmon_scan(&MaxCost, None, Generator::Mixed, 200, 9, 1).unwrap();
        let b = wmon_scan(&MaxCost, None, Generator::Mixed, 200, 9, 3).unwrap();
        assert_eq!(a.violations, b.violations);
        assert_eq!(a.first_violation, b.first_violation);
        assert!(a.violations > 0);
    }

    #[test]
    fn deviation_check_contracts() {
        let m = CostMatrix::from_ints(&[&[1, 5], &[3, 2]]).unwrap();
        // Task 1 is machine 1's under VCG, not machine 0's.
        let err = deviation_check(&Vcg, &m, 0, &[1], &[], &[int(1)], &[]).unwrap_err();
        assert!(matches!(err, WmonError::Contract(_)));
        let ok = deviation_check(&Vcg, &m, 0, &[0], &[1], &[rat(1, 2)], &[int(1)]).unwrap();
        assert_eq!(ok, DeviationOutcome::Pass);
        // Weighted VCG: raising machine 0 on a task it does not hold.
        let m = CostMatrix::from_ints(&[&[3, 1], &[1, 9], &[9, 9]]).unwrap();
        let ok = deviation_check(&WeightedVcg, &m, 0, &[], &[0], &[], &[int(2)]).unwrap();
        assert_eq!(ok, DeviationOutcome::Pass);
    }

    #[test]
    fn restriction_contracts() {
        let m = CostMatrix::from_ints(&[&[1, 5], &[3, 2]]).unwrap();
        let bad = Probe {
            machine: 0,
            row: vec![int(2), int(5)],
        };
        assert!(restriction_check(&Vcg, &m, &[0], &[bad]).is_err());
        let probes = random_probes(&m, &[0], 200, 4);
        assert!(restriction_check(&Vcg, &m, &[0], &probes).unwrap().is_none());
        let identity = Probe {
            machine: 1,
            row: m.row(1).to_vec(),
        };
        assert!(restriction_check(&MaxCost, &m, &[0], &[identity]).unwrap().is_none());
    }
}
