mod common;

use std::cmp::Ordering;

use common::random_clustered;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use truthsched::mechanisms::{
    affine_minimizer_2x2, clarke_payments, payment_truthfulness_gain, random_relaxed,
    random_task_independent, relaxed_affine_minimizer_2x2, AffineMinimizer2x2,
    AffineMinimizerConfig, Constant2x2, Direct2x2, OneDimVariant, OneDimensional2x2, PiTable,
    PiecewiseLinear, RelaxedAffineMinimizer2x2, RelaxedAffineMinimizerConfig, TaskIndependent2x2,
    Vcg, WeightedVcg,
};
use truthsched::model::{CostMatrix, TaskRef};
use truthsched::rational::{int, rat, ExtRational, Rational, Surd};
use truthsched::{Bundle, Mechanism, Mechanism2x2};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn grid_value() -> impl Strategy<Value = Rational> {
    (1i64..=64).prop_map(|k| rat(k, 8))
}

fn grid_matrix(max_n: usize, max_m: usize) -> impl Strategy<Value = CostMatrix> {
    (2..=max_n, 1..=max_m).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::vec(grid_value(), m), n)
            .prop_map(|rows| CostMatrix::new(rows).unwrap())
    })
}

/// Smallest total cost over all assignments.
fn brute_force_welfare(m: &CostMatrix) -> Rational {
    (0..m.tasks())
        .map(|j| (0..m.machines()).map(|i| m.get(i, j).clone()).min().unwrap())
        .sum()
}

fn total_cost(m: &CostMatrix, a: &truthsched::Allocation) -> Rational {
    (0..m.tasks()).map(|j| m.get(a.machine_of(j), j).clone()).sum()
}

/// `w x <= y` with `w = sqrt(r)`, exactly.
fn sqrt_times_at_most(r: i64, x: &Rational, y: &Rational) -> bool {
    let zero = int(0);
    match (*x <= zero, *y >= zero) {
        (true, true) => true,
        (false, false) => false,
        // x <= 0 and y < 0: need sqrt(r) |x| >= |y|.
        (true, false) => int(r) * x * x >= y * y,
        // x > 0 and y >= 0: need sqrt(r) x <= y.
        (false, true) => int(r) * x * x <= y * y,
    }
}

fn vcg_2x2_affine() -> AffineMinimizerConfig {
    AffineMinimizerConfig {
        lambda_prime: int(1),
        lambda: int(1),
        pi: PiTable::zero(),
    }
}

fn two_by_two(t: [&Rational; 2], s: [&Rational; 2]) -> CostMatrix {
    CostMatrix::new(vec![
        vec![t[0].clone(), t[1].clone()],
        vec![s[0].clone(), s[1].clone()],
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn vcg_minimizes_total_cost(m in grid_matrix(3, 6)) {
        // The welfare optimum over all n^m allocations is the sum of column
        // minima; check it against exhaustive enumeration on small shapes.
        let a = Vcg.allocate(&m).unwrap();
        let n = m.machines();
        let mut best: Option<Rational> = None;
        for code in 0..n.pow(m.tasks() as u32) {
            let mut c = code;
            let mut total = int(0);
            for j in 0..m.tasks() {
                total += m.get(c % n, j);
                c /= n;
            }
            best = Some(match best { Some(b) if b <= total => b, _ => total });
        }
        prop_assert_eq!(&total_cost(&m, &a), best.as_ref().unwrap());
        prop_assert_eq!(total_cost(&m, &a), brute_force_welfare(&m));
    }

    #[test]
    fn weighted_vcg_minimizes_weighted_split_per_cluster(
        n in 2usize..=5,
        ell in 0usize..=3,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_clustered(&mut rng, n, ell);
        let a = WeightedVcg.allocate(&inst.expand()).unwrap();
        let k = ell + 1;
        for cluster in 1..n {
            let tasks = inst.cluster(cluster);
            let cols: Vec<usize> = (0..k)
                .map(|pos| inst.column_of(TaskRef::Cluster { cluster, pos }))
                .collect();
            let split = |mask: u32| -> (Rational, Rational) {
                let mut r = int(0);
                let mut l = int(0);
                for (p, task) in tasks.iter().enumerate() {
                    if mask >> p & 1 == 1 { r += &task.t } else { l += &task.s }
                }
                (r, l)
            };
            let mut chosen = 0u32;
            for (p, &c) in cols.iter().enumerate() {
                let m = a.machine_of(c);
                prop_assert!(m == 0 || m == cluster, "cluster task on a theta machine");
                if m == 0 { chosen |= 1 << p; }
            }
            let (rc, lc) = split(chosen);
            for mask in 0..(1u32 << k) {
                let (r, l) = split(mask);
                // sqrt(n-1) rc + lc <= sqrt(n-1) r + l.
                prop_assert!(
                    sqrt_times_at_most(n as i64 - 1, &(&rc - &r), &(&l - &lc)),
                    "cluster {} split {:b} beats the chosen {:b}", cluster, mask, chosen
                );
            }
        }
    }

    #[test]
    fn unit_affine_minimizer_is_vcg(t1 in grid_value(), t2 in grid_value(), s1 in grid_value(), s2 in grid_value(), ties in any::<[bool; 2]>()) {
        // Force exact ties on some tasks too.
        let s1 = if ties[0] { t1.clone() } else { s1 };
        let s2 = if ties[1] { t2.clone() } else { s2 };
        let m = two_by_two([&t1, &t2], [&s1, &s2]);
        let affine = Direct2x2::new(Box::new(AffineMinimizer2x2::new(vcg_2x2_affine()).unwrap()));
        prop_assert_eq!(affine.allocate(&m).unwrap(), Vcg.allocate(&m).unwrap());
    }

    #[test]
    fn task_independent_first_task_ignores_second_column(
        seed in any::<u64>(),
        t1 in grid_value(), s1 in grid_value(),
        t2 in grid_value(), s2 in grid_value(),
        u2 in grid_value(), v2 in grid_value(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rule = random_task_independent(&mut rng);
        let a = rule.decide([&t1, &t2], [&s1, &s2]).unwrap();
        let b = rule.decide([&t1, &u2], [&s1, &v2]).unwrap();
        prop_assert_eq!(a.has(0), b.has(0));
    }

    #[test]
    fn relaxed_rule_defers_to_base_outside_tail(
        seed in any::<u64>(),
        t in prop::array::uniform2(1i64..=96),
        s in prop::array::uniform2(1i64..=96),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_relaxed(&mut rng);
        let t = [rat(t[0], 16), rat(t[1], 16)];
        let s = [rat(s[0], 16), rat(s[1], 16)];
        let in_tail = &s[0] + &s[1] < cfg.d_s && &t[0] + &t[1] < cfg.d_t;
        let relaxed = relaxed_affine_minimizer_2x2([&t[0], &t[1]], [&s[0], &s[1]], &cfg).unwrap();
        if in_tail {
            prop_assert!(matches!(relaxed, Bundle::Both | Bundle::Neither));
        } else {
            let base = affine_minimizer_2x2([&t[0], &t[1]], [&s[0], &s[1]], &cfg.base).unwrap();
            prop_assert_eq!(relaxed, base);
        }
    }

    #[test]
    fn nonnegative_tables_evaluate_nonnegative(
        steps in prop::collection::vec((0i64..=16, 0i64..=16), 1..8),
        x in -32i64..=200,
    ) {
        let mut xs = 0i64;
        let points: Vec<(Rational, Rational)> = steps
            .iter()
            .map(|&(dx, y)| { xs += dx; (rat(xs, 4), rat(y, 4)) })
            .collect();
        let f = PiecewiseLinear::new(points).unwrap();
        prop_assert!(f.is_nonnegative());
        prop_assert!(f.eval(&rat(x, 4)) >= int(0));
    }

    #[test]
    fn vcg_family_payments_reward_truth(
        m in grid_matrix(3, 3),
        machine in 0usize..3,
        lie in prop::collection::vec(grid_value(), 3),
    ) {
        let machine = machine % m.machines();
        let row: Vec<Rational> = lie.into_iter().take(m.tasks()).collect();
        prop_assume!(row.len() == m.tasks());
        for mech in [&Vcg as &dyn Mechanism, &WeightedVcg] {
            let gain = payment_truthfulness_gain(mech, &m, machine, &row).unwrap();
            prop_assert_ne!(gain.signum(), Ordering::Greater, "{} pays for lying", mech.id());
        }
    }
}

#[test]
fn vcg_allocation_examples() {
    let m = CostMatrix::from_ints(&[&[1, 2], &[3, 4]]).unwrap();
    assert_eq!(Vcg.allocate(&m).unwrap().assignment(), &[0, 0]);
    let m = CostMatrix::from_ints(&[&[1], &[1]]).unwrap();
    assert_eq!(Vcg.allocate(&m).unwrap().assignment(), &[0]);
}

#[test]
fn weighted_vcg_examples() {
    let col = |n: usize, t: Rational, s: Rational| {
        let mut rows = vec![vec![t], vec![s]];
        rows.extend((2..n).map(|_| vec![int(1000)]));
        CostMatrix::new(rows).unwrap()
    };
    assert_eq!(WeightedVcg.allocate(&col(2, int(1), int(2))).unwrap().machine_of(0), 0);
    assert_eq!(WeightedVcg.allocate(&col(5, int(1), int(2))).unwrap().machine_of(0), 0);
    // 4 (1/2 + 1/1000)^2 > 1.
    let t = rat(501, 1000);
    assert!(int(4) * &t * &t > int(1));
    assert_eq!(WeightedVcg.allocate(&col(5, t, int(1))).unwrap().machine_of(0), 1);
}

#[test]
fn affine_minimizer_examples() {
    let (one, two, three) = (int(1), int(2), int(3));
    assert_eq!(
        affine_minimizer_2x2([&one, &one], [&two, &two], &vcg_2x2_affine()).unwrap(),
        Bundle::Both
    );
    let cfg = AffineMinimizerConfig {
        lambda_prime: int(1),
        lambda: int(2),
        pi: PiTable::zero(),
    };
    // 6, 3 + 2 = 5, 5, 4: none wins.
    assert_eq!(
        affine_minimizer_2x2([&three, &three], [&one, &one], &cfg).unwrap(),
        Bundle::Neither
    );
    let always = AffineMinimizerConfig {
        lambda_prime: int(1),
        lambda: int(1),
        pi: PiTable {
            both: ExtRational::NegInf,
            first: ExtRational::zero(),
            second: ExtRational::zero(),
            neither: ExtRational::zero(),
        },
    };
    for (t, s) in [([100, 100], [1, 1]), ([1, 9], [9, 1]), ([5, 5], [5, 5])] {
        let (t, s) = ([int(t[0]), int(t[1])], [int(s[0]), int(s[1])]);
        assert_eq!(
            affine_minimizer_2x2([&t[0], &t[1]], [&s[0], &s[1]], &always).unwrap(),
            Bundle::Both
        );
    }
}

#[test]
fn relaxed_square_root_tail_example() {
    // zeta(x) ~ sqrt(x/2) on [0, 2]; zeta(1) = 0.7 > 1/2.
    let zeta = PiecewiseLinear::new(vec![
        (int(0), int(0)),
        (rat(1, 2), rat(1, 2)),
        (int(1), rat(7, 10)),
        (int(2), int(1)),
    ])
    .unwrap();
    let cfg = RelaxedAffineMinimizerConfig {
        base: AffineMinimizerConfig {
            lambda_prime: int(1),
            lambda: int(1),
            pi: PiTable::finite(int(0), int(4), int(4), int(-1)),
        },
        d_s: int(2),
        d_t: int(4),
        zeta,
    };
    let rule = RelaxedAffineMinimizer2x2::new(cfg.clone()).unwrap();
    let (q, h) = (rat(1, 4), rat(1, 2));
    assert_eq!(rule.decide([&q, &q], [&h, &h]).unwrap(), Bundle::Both);
    // Above the tail boundary: the second player takes both.
    let big = int(1);
    assert_eq!(rule.decide([&big, &big], [&h, &h]).unwrap(), Bundle::Neither);
    // Outside the tail: the base rule decides.
    let (s3, t1) = (int(3), rat(1, 8));
    assert_eq!(
        rule.decide([&t1, &t1], [&s3, &s3]).unwrap(),
        affine_minimizer_2x2([&t1, &t1], [&s3, &s3], &cfg.base).unwrap()
    );
}

#[test]
fn task_independent_examples() {
    let vcg_like = TaskIndependent2x2::new(PiecewiseLinear::identity(), PiecewiseLinear::identity()).unwrap();
    assert_eq!(
        vcg_like.decide([&int(1), &int(3)], [&int(2), &int(2)]).unwrap(),
        Bundle::First
    );
    let zero = PiecewiseLinear::new(vec![(int(0), int(0))]).unwrap();
    let never = TaskIndependent2x2::new(zero.clone(), zero).unwrap();
    assert_eq!(
        never.decide([&rat(1, 100), &int(5)], [&int(1), &int(9)]).unwrap(),
        Bundle::Neither
    );
    let step = PiecewiseLinear::new(vec![(int(0), int(0)), (int(1), int(0)), (int(1), int(5))]).unwrap();
    let stepped = TaskIndependent2x2::new(step, PiecewiseLinear::identity()).unwrap();
    assert!(stepped.decide([&int(3), &int(9)], [&int(1), &int(1)]).unwrap().has(0));
    assert!(!stepped.decide([&int(3), &int(9)], [&rat(99, 100), &int(1)]).unwrap().has(0));
}

#[test]
fn one_dimensional_examples() {
    let bundling = OneDimensional2x2::new(OneDimVariant::Bundling, PiecewiseLinear::identity()).unwrap();
    assert_eq!(bundling.decide([&int(1), &int(1)], [&int(3), &int(3)]).unwrap(), Bundle::Both);
    // t_p = n^3 against a boundary capped below n^3 (n = 3).
    let capped = OneDimensional2x2::new(
        OneDimVariant::Bundling,
        PiecewiseLinear::new(vec![(int(0), int(0)), (int(10), int(26))]).unwrap(),
    )
    .unwrap();
    let beta = rat(1, 1_000_000);
    assert_eq!(capped.decide([&int(27), &int(1)], [&beta, &int(100)]).unwrap(), Bundle::Neither);
    let first_only = OneDimensional2x2::new(OneDimVariant::Task1Only, PiecewiseLinear::identity()).unwrap();
    for (t, s) in [([1, 1], [5, 5]), ([9, 1], [1, 9]), ([1, 0], [1, 100])] {
        let (t, s) = ([int(t[0]), int(t[1])], [int(s[0]), int(s[1])]);
        assert!(!first_only.decide([&t[0], &t[1]], [&s[0], &s[1]]).unwrap().has(1));
    }
}

#[test]
fn constant_rules_ignore_bids() {
    for label in Bundle::ALL {
        let rule = Constant2x2 { label };
        for (t, s) in [([1, 2], [3, 4]), ([9, 9], [1, 1]), ([5, 1], [1, 5])] {
            let (t, s) = ([int(t[0]), int(t[1])], [int(s[0]), int(s[1])]);
            assert_eq!(rule.decide([&t[0], &t[1]], [&s[0], &s[1]]).unwrap(), label);
        }
    }
}

#[test]
fn clarke_payment_examples() {
    let pay = |rows: &[&[i64]]| clarke_payments(&Vcg, &CostMatrix::from_ints(rows).unwrap()).unwrap();
    assert_eq!(pay(&[&[1], &[2]])[0], Surd::from_rational(int(2)));
    let m = CostMatrix::from_ints(&[&[1], &[1]]).unwrap();
    let p = clarke_payments(&Vcg, &m).unwrap();
    assert_eq!(p[0], Surd::from_rational(int(1)));
    let u = truthsched::mechanisms::utility(&Vcg, &m, &m, 0).unwrap();
    assert_eq!(u.signum(), Ordering::Equal);
    let p = pay(&[&[1, 2], &[2, 1]]);
    assert_eq!(p, vec![Surd::from_rational(int(2)), Surd::from_rational(int(2))]);
}
