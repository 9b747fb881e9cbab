//! Seeded instance corpora.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consts::ConstantsProfile;
use crate::lowerbound::{make_hat, standard_instance, LowerBoundError};
use crate::model::{ClusterTask, ClusteredInstance, CostMatrix, ModelError, TaskRef};
use crate::rational::{int, rat, Rational};

fn grid_value<R: Rng>(rng: &mut R, denom: i64) -> Rational {
    rat(rng.gen_range(1..=8 * denom), denom)
}

/// `n x m` matrix with entries `k/denom`, `1 <= k <= 8 denom`.
pub fn random_matrix(n: usize, m: usize, denom: i64, seed: u64) -> Result<CostMatrix, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| (0..m).map(|_| grid_value(&mut rng, denom)).collect())
        .collect();
    CostMatrix::new(rows)
}

/// Clustered instance with values on the grid `k/denom` in `(0, 8]`,
/// dummies on the same grid or 0, `B = 1000` and a dominating `theta`.
pub fn random_clustered(
    n: usize,
    ell: usize,
    denom: i64,
    seed: u64,
) -> Result<ClusteredInstance, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (1..n)
        .map(|_| {
            (0..=ell)
                .map(|_| ClusterTask::new(grid_value(&mut rng, denom), grid_value(&mut rng, denom)))
                .collect()
        })
        .collect();
    let dummies = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                int(0)
            } else {
                grid_value(&mut rng, denom)
            }
        })
        .collect();
    let big_b = int(1000);
    let theta = int(1_000_000) * int(n as i64) * int(ell as i64 + 1) * &big_b;
    ClusteredInstance::new(n, ell, clusters, dummies, theta, big_b)
}

/// Standard instances with a random regular set raised to `(alpha, 1)`;
/// each entry also returns the raised columns.
pub fn standard_corpus(
    consts: &ConstantsProfile,
    count: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, ClusteredInstance)>, LowerBoundError> {
    let base = standard_instance(consts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = consts.n;
    (0..count)
        .map(|_| {
            let k = rng.gen_range(1..n);
            let mut clusters: Vec<usize> = (1..n).collect();
            clusters.shuffle(&mut rng);
            let mut set: Vec<usize> = clusters[..k]
                .iter()
                .map(|&cluster| {
                    base.column_of(TaskRef::Cluster {
                        cluster,
                        pos: rng.gen_range(0..=consts.ell),
                    })
                })
                .collect();
            set.sort_unstable();
            let inst = make_hat(&base, &set, consts)?;
            Ok((set, inst))
        })
        .collect()
}

/// `n` tasks costing 1 on machine 0 and `1 + 10^-3` elsewhere: VCG gives
/// every task to machine 0.
pub fn vcg_classic_family(n: usize) -> Result<CostMatrix, ModelError> {
    let mut rows = vec![vec![int(1); n]];
    for _ in 1..n {
        rows.push(vec![rat(1001, 1000); n]);
    }
    CostMatrix::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_deterministic() {
        assert_eq!(random_matrix(3, 4, 8, 5).unwrap(), random_matrix(3, 4, 8, 5).unwrap());
        assert_eq!(
            random_clustered(3, 2, 8, 5).unwrap(),
            random_clustered(3, 2, 8, 5).unwrap()
        );
        let c = ConstantsProfile::desk(4).unwrap();
        let a = standard_corpus(&c, 5, 9).unwrap();
        assert_eq!(a, standard_corpus(&c, 5, 9).unwrap());
        for (set, inst) in &a {
            for &col in set {
                assert_eq!(inst.task_at(col).unwrap().t, c.alpha);
            }
        }
    }

    #[test]
    fn matrix_values_stay_on_grid() {
        let m = random_matrix(2, 6, 8, 1).unwrap();
        for i in 0..2 {
            for v in m.row(i) {
                assert!(*v > int(0) && *v <= int(8));
                assert!((v * int(8)).is_integer());
            }
        }
    }
}
