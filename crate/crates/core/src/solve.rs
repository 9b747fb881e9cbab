//! Makespan evaluation and exact optimal makespan.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

use crate::model::{Allocation, ClusteredInstance, CostMatrix, ModelError, TaskRef};
use crate::rational::Rational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("search space of {states} states exceeds the budget of {budget}")]
    BudgetExceeded { states: String, budget: u128 },
    #[error("optimal makespan is zero; the approximation ratio is undefined")]
    ZeroOptimum,
}

/// Upper bound on enumerated states for exact solvers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverBudget {
    pub max_states: u128,
}

impl Default for SolverBudget {
    fn default() -> Self {
        SolverBudget {
            max_states: 100_000_000,
        }
    }
}

pub fn loads(matrix: &CostMatrix, alloc: &Allocation) -> Result<Vec<Rational>, SolveError> {
    if alloc.tasks() != matrix.tasks() {
        return Err(ModelError::AllocationLength {
            got: alloc.tasks(),
            expected: matrix.tasks(),
        }
        .into());
    }
    if alloc.machines() != matrix.machines() {
        return Err(ModelError::OutOfRange(format!(
            "allocation is for {} machines, matrix has {}",
            alloc.machines(),
            matrix.machines()
        ))
        .into());
    }
    let mut loads = vec![Rational::zero(); matrix.machines()];
    for j in 0..matrix.tasks() {
        let i = alloc.machine_of(j);
        loads[i] += matrix.get(i, j);
    }
    Ok(loads)
}

pub fn makespan(matrix: &CostMatrix, alloc: &Allocation) -> Result<Rational, SolveError> {
    Ok(loads(matrix, alloc)?
        .into_iter()
        .max()
        .expect("at least two machines"))
}

/// Optimum together with the lexicographically smallest optimal allocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Optimum {
    pub makespan: Rational,
    pub allocation: Allocation,
}

pub fn optimal_makespan(matrix: &CostMatrix) -> Result<Optimum, SolveError> {
    optimal_makespan_with_budget(matrix, SolverBudget::default())
}

/// Exact branch and bound over all `n^m` allocations.
///
/// Entries are scaled to integers by the common denominator; machines are
/// tried in index order and only strict improvements are kept, so the
/// returned allocation is the lexicographically smallest optimum.
pub fn optimal_makespan_with_budget(
    matrix: &CostMatrix,
    budget: SolverBudget,
) -> Result<Optimum, SolveError> {
    let n = matrix.machines();
    let m = matrix.tasks();
    let states = BigInt::from(n).pow(m as u32);
    if states > BigInt::from(budget.max_states) {
        return Err(SolveError::BudgetExceeded {
            states: states.to_string(),
            budget: budget.max_states,
        });
    }
    let mut lcm = BigInt::one();
    for i in 0..n {
        for v in matrix.row(i) {
            lcm = lcm.lcm(v.denom());
        }
    }
    let scaled: Vec<BigInt> = (0..n)
        .flat_map(|i| matrix.row(i).to_vec())
        .map(|v| v.numer() * (&lcm / v.denom()))
        .collect();
    let total: BigInt = scaled.iter().sum();
    let (best, assignment) = if total.to_i128().is_some() {
        let small: Vec<i128> = scaled.iter().map(|v| v.to_i128().unwrap()).collect();
        let (b, a) = branch_and_bound(n, m, &small);
        (BigInt::from(b), a)
    } else {
        branch_and_bound(n, m, &scaled)
    };
    Ok(Optimum {
        makespan: Rational::new(best, lcm),
        allocation: Allocation::new(assignment, n)?,
    })
}

trait Load: Clone + Ord {
    fn zero() -> Self;
    fn plus(&self, other: &Self) -> Self;
}

impl Load for i128 {
    fn zero() -> Self {
        0
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
}

impl Load for BigInt {
    fn zero() -> Self {
        Zero::zero()
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
}

fn branch_and_bound<T: Load>(n: usize, m: usize, cost: &[T]) -> (T, Vec<usize>) {
    struct Search<'a, T> {
        n: usize,
        m: usize,
        cost: &'a [T],
        loads: Vec<T>,
        current: Vec<usize>,
        best: Option<T>,
        best_assignment: Vec<usize>,
    }

    impl<T: Load> Search<'_, T> {
        fn run(&mut self, j: usize) {
            if j == self.m {
                let span = self.loads.iter().max().unwrap().clone();
                // Every load is below the incumbent here, so this is a strict
                // improvement.
                self.best = Some(span);
                self.best_assignment = self.current.clone();
                return;
            }
            for i in 0..self.n {
                let new_load = self.loads[i].plus(&self.cost[i * self.m + j]);
                if let Some(best) = &self.best {
                    if new_load >= *best {
                        continue;
                    }
                }
                let old = std::mem::replace(&mut self.loads[i], new_load);
                self.current[j] = i;
                self.run(j + 1);
                self.loads[i] = old;
            }
        }
    }

    let mut s = Search {
        n,
        m,
        cost,
        loads: vec![T::zero(); n],
        current: vec![0; m],
        best: None,
        best_assignment: Vec::new(),
    };
    s.run(0);
    (s.best.expect("at least one allocation"), s.best_assignment)
}

/// Cost `min` over splits of a single cluster between player 0 and its owner,
/// ignoring every other task.
pub fn cluster_cost(inst: &ClusteredInstance, cluster: usize) -> Rational {
    frontier(inst, cluster)
        .iter()
        .map(|f| std::cmp::max(f.l.clone(), f.r.clone()))
        .min()
        .expect("non-empty cluster")
}

#[derive(Clone, Debug)]
struct FrontierPoint {
    /// Load on the owner (tasks kept by the cluster's player).
    l: Rational,
    /// Load on player 0.
    r: Rational,
    /// Bit `pos` set: task goes to player 0.
    mask: u64,
}

/// All splits of a cluster sorted by owner load, with prefix-minimum player-0
/// load folded in so a query is a single binary search.
fn frontier(inst: &ClusteredInstance, cluster: usize) -> Vec<FrontierPoint> {
    let tasks = inst.cluster(cluster);
    let k = tasks.len();
    let mut points: Vec<FrontierPoint> = (0..(1u64 << k))
        .map(|mask| {
            let mut l = Rational::zero();
            let mut r = Rational::zero();
            for (pos, task) in tasks.iter().enumerate() {
                if mask >> pos & 1 == 1 {
                    r += &task.t;
                } else {
                    l += &task.s;
                }
            }
            FrontierPoint { l, r, mask }
        })
        .collect();
    points.sort_by(|a, b| a.l.cmp(&b.l).then(a.r.cmp(&b.r)).then(a.mask.cmp(&b.mask)));
    let mut best: Option<FrontierPoint> = None;
    for p in points.iter_mut() {
        match &best {
            Some(b) if b.r <= p.r => {
                p.r = b.r.clone();
                p.mask = b.mask;
            }
            _ => best = Some(p.clone()),
        }
    }
    points
}

pub fn optimal_makespan_clustered(inst: &ClusteredInstance) -> Result<Optimum, SolveError> {
    optimal_makespan_clustered_with_budget(inst, SolverBudget::default())
}

/// Exact optimum of a clustered instance.
///
/// Cross assignments cost `theta`, so an optimum keeps every dummy with its
/// owner and every cluster task on player 0 or the cluster's owner. For a
/// candidate cap `c` on the owners' loads, player 0 takes the cheapest split
/// of each cluster respecting the cap; the answer is the best
/// `max(c, load_0(c))` over all candidate caps.
pub fn optimal_makespan_clustered_with_budget(
    inst: &ClusteredInstance,
    budget: SolverBudget,
) -> Result<Optimum, SolveError> {
    let k = inst.cluster_size();
    if k >= 63 || (inst.players() as u128 - 1) << k > budget.max_states {
        return Err(SolveError::BudgetExceeded {
            states: format!("{} * 2^{k}", inst.players() - 1),
            budget: budget.max_states,
        });
    }
    let n = inst.players();
    let frontiers: Vec<Vec<FrontierPoint>> = (1..n).map(|c| frontier(inst, c)).collect();
    let d = inst.dummies();

    let mut candidates: Vec<Rational> = frontiers
        .iter()
        .enumerate()
        .flat_map(|(c, f)| f.iter().map(move |p| &p.l + &d[c + 1]))
        .collect();
    candidates.sort();
    candidates.dedup();

    // Player 0 load under cap c, or None when some owner cannot meet it.
    let choose = |cap: &Rational| -> Option<(Rational, Vec<u64>)> {
        let mut load = d[0].clone();
        let mut masks = Vec::with_capacity(n - 1);
        for (c, f) in frontiers.iter().enumerate() {
            let room = cap - &d[c + 1];
            let idx = f.partition_point(|p| p.l <= room);
            if idx == 0 {
                return None;
            }
            load += &f[idx - 1].r;
            masks.push(f[idx - 1].mask);
        }
        Some((load, masks))
    };

    // First candidate whose cap already covers player 0's load.
    let crosses = |c: &Rational| matches!(choose(c), Some((l, _)) if l <= *c);
    let first = candidates.partition_point(|c| !crosses(c));

    let mut best: Option<(Rational, Vec<u64>)> = None;
    if first < candidates.len() {
        let (_, masks) = choose(&candidates[first]).unwrap();
        best = Some((candidates[first].clone(), masks));
    }
    if first > 0 {
        if let Some((load, masks)) = choose(&candidates[first - 1]) {
            let value = std::cmp::max(load, candidates[first - 1].clone());
            if best.as_ref().map_or(true, |(b, _)| value < *b) {
                best = Some((value, masks));
            }
        }
    }
    let (_, masks) = best.expect("all tasks on their owners is always feasible");

    let mut assignment = vec![0usize; inst.task_count()];
    for col in 0..inst.task_count() {
        assignment[col] = match inst.task_ref(col) {
            TaskRef::Cluster { cluster, pos } => {
                if masks[cluster - 1] >> pos & 1 == 1 {
                    0
                } else {
                    cluster
                }
            }
            TaskRef::Dummy { player } => player,
        };
    }
    let allocation = Allocation::new(assignment, n)?;
    // Recompute from the allocation so the reported value is exactly the
    // makespan of the returned witness.
    let span = makespan(&inst.expand(), &allocation)?;
    Ok(Optimum {
        makespan: span,
        allocation,
    })
}

pub fn approx_ratio(matrix: &CostMatrix, alloc: &Allocation) -> Result<Rational, SolveError> {
    let opt = optimal_makespan(matrix)?.makespan;
    if opt.is_zero() {
        return Err(SolveError::ZeroOptimum);
    }
    Ok(makespan(matrix, alloc)? / opt)
}

pub fn approx_ratio_clustered(
    inst: &ClusteredInstance,
    alloc: &Allocation,
) -> Result<Rational, SolveError> {
    let opt = optimal_makespan_clustered(inst)?.makespan;
    if opt.is_zero() {
        return Err(SolveError::ZeroOptimum);
    }
    Ok(makespan(&inst.expand(), alloc)? / opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClusterTask;
    use crate::rational::{int, rat};

    #[test]
    fn makespan_of_simple_allocation() {
        let m = CostMatrix::from_ints(&[&[1, 2, 3], &[4, 5, 6]]).unwrap();
        let a = Allocation::new(vec![0, 1, 0], 2).unwrap();
        assert_eq!(makespan(&m, &a).unwrap(), int(5));
    }

    #[test]
    fn optimum_prefers_lexicographically_smallest() {
        // Both tasks cost 1 everywhere: optimum 1, smallest allocation (0, 1).
        let m = CostMatrix::from_ints(&[&[1, 1], &[1, 1]]).unwrap();
        let opt = optimal_makespan(&m).unwrap();
        assert_eq!(opt.makespan, int(1));
        assert_eq!(opt.allocation.assignment(), &[0, 1]);
    }

    #[test]
    fn budget_is_enforced() {
        let m = CostMatrix::from_ints(&[&[1; 30], &[1; 30]]).unwrap();
        let err = optimal_makespan(&m).unwrap_err();
        assert!(matches!(err, SolveError::BudgetExceeded { budget: 100_000_000, .. }));
    }

    #[test]
    fn zero_optimum_is_an_error() {
        let m = CostMatrix::from_ints(&[&[0, 0], &[0, 0]]).unwrap();
        let a = Allocation::new(vec![0, 0], 2).unwrap();
        assert_eq!(approx_ratio(&m, &a), Err(SolveError::ZeroOptimum));
    }

    #[test]
    fn clustered_matches_brute_force_on_small_case() {
        let inst = ClusteredInstance::new(
            3,
            1,
            vec![
                vec![ClusterTask::new(int(2), int(1)), ClusterTask::new(int(1), int(3))],
                vec![ClusterTask::new(rat(1, 2), int(2)), ClusterTask::new(int(3), int(1))],
            ],
            vec![int(1), int(0), rat(1, 3)],
            int(1_000_000),
            int(10),
        )
        .unwrap();
        let fast = optimal_makespan_clustered(&inst).unwrap();
        let slow = optimal_makespan(&inst.expand()).unwrap();
        assert_eq!(fast.makespan, slow.makespan);
        assert_eq!(
            makespan(&inst.expand(), &fast.allocation).unwrap(),
            fast.makespan
        );
    }
}
