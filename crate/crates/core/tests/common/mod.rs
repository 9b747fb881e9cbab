//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive};
use rand::Rng;
use truthsched::model::{ClusterTask, ClusteredInstance, CostMatrix};
use truthsched::rational::{int, rat, Rational};

/// Random clustered instance with values on the grid `k/8` (`1 <= k <= 64`),
/// dummies on the same grid or 0.
pub fn random_clustered<R: Rng>(rng: &mut R, n: usize, ell: usize) -> ClusteredInstance {
    let v = |rng: &mut R| rat(rng.gen_range(1..=64), 8);
    let clusters = (1..n)
        .map(|_| {
            (0..=ell)
                .map(|_| ClusterTask::new(v(rng), v(rng)))
                .collect()
        })
        .collect();
    let dummies = (0..n)
        .map(|_| if rng.gen_bool(0.3) { int(0) } else { v(rng) })
        .collect();
    let big_b = int(1000);
    let theta = int(1_000_000) * int(n as i64) * int(ell as i64 + 1) * &big_b;
    ClusteredInstance::new(n, ell, clusters, dummies, theta, big_b).unwrap()
}

/// Exhaustive optimum over all `n^m` assignments, on integers after scaling
/// by the common denominator. Partial assignments whose load already meets
/// the best makespan are cut, which never skips a strictly better one.
pub fn brute_force_makespan(m: &CostMatrix) -> Rational {
    let mut denom = BigInt::one();
    for i in 0..m.machines() {
        for j in 0..m.tasks() {
            denom = denom.lcm(m.get(i, j).denom());
        }
    }
    let scaled: Vec<Vec<i128>> = (0..m.machines())
        .map(|i| {
            (0..m.tasks())
                .map(|j| {
                    let x = m.get(i, j) * Rational::from_integer(denom.clone());
                    x.to_integer().to_i128().expect("scaled value fits")
                })
                .collect()
        })
        .collect();
    let (n, tasks) = (m.machines(), m.tasks());
    let mut loads = vec![0i128; n];
    let mut best = i128::MAX;
    fn go(j: usize, tasks: usize, c: &[Vec<i128>], loads: &mut [i128], best: &mut i128) {
        if j == tasks {
            let span = *loads.iter().max().unwrap();
            if span < *best {
                *best = span;
            }
            return;
        }
        for i in 0..loads.len() {
            let next = loads[i] + c[i][j];
            if next >= *best {
                continue;
            }
            loads[i] = next;
            go(j + 1, tasks, c, loads, best);
            loads[i] -= c[i][j];
        }
    }
    let _ = n;
    go(0, tasks, &scaled, &mut loads, &mut best);
    Rational::new(BigInt::from(best), denom)
}

/// `x <= sqrt(r)` exactly, for integer `r >= 0`.
pub fn at_most_sqrt(x: &Rational, r: i64) -> bool {
    !x.is_positive() || x * x <= int(r)
}

/// `x >= sqrt(r)` exactly.
pub fn at_least_sqrt(x: &Rational, r: i64) -> bool {
    !x.is_negative() && x * x >= int(r)
}
