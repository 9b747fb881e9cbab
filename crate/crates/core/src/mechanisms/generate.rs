//! Random configurations for each family of 2x2 rules.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rational::{int, rat, Rational};

use super::{
    AffineMinimizerConfig, Bundle, Constant2x2, OneDimVariant, OneDimensional2x2, PiTable,
    PiecewiseLinear, RelaxedAffineMinimizerConfig, TaskIndependent2x2,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffineKind {
    Separable,
    QuasiBundling,
    QuasiFlipping,
}

fn grid<R: Rng>(rng: &mut R, lo: i64, hi: i64, denom: i64) -> Rational {
    rat(rng.gen_range(lo..=hi), denom)
}

/// `lambda' = 1`, `lambda` in `[1/3, 3]`, constants of order `lambda`, and a
/// diagonal of width at least `lambda / 2` for the non-separable kinds.
pub fn random_affine_minimizer<R: Rng>(rng: &mut R, kind: AffineKind) -> AffineMinimizerConfig {
    let lambda = grid(rng, 2, 18, 6);
    let pi1 = &lambda * grid(rng, -4, 4, 8);
    let pi2 = &lambda * grid(rng, -4, 4, 8);
    let gap = &lambda * grid(rng, 4, 8, 8);
    let sum = &pi1 + &pi2;
    let pi_none = match kind {
        AffineKind::Separable => sum,
        AffineKind::QuasiBundling => sum - gap,
        AffineKind::QuasiFlipping => sum + gap,
    };
    AffineMinimizerConfig {
        lambda_prime: int(1),
        lambda,
        pi: PiTable::finite(int(0), pi1, pi2, pi_none),
    }
}

/// Member of the monotone relaxed family (see
/// [`RelaxedAffineMinimizerConfig::known_monotone`]) with a concave
/// square-root tail boundary.
pub fn random_relaxed<R: Rng>(rng: &mut R) -> RelaxedAffineMinimizerConfig {
    let lambda = grid(rng, 4, 16, 8);
    let d_s = grid(rng, 2, 6, 4);
    let d_t = grid(rng, 4, 8, 4);
    let h = &d_t * grid(rng, 2, 6, 8);
    let g = &lambda * &d_s - &h;
    let p = &d_t + grid(rng, 0, 4, 4);
    let steps = 8i64;
    let points = (0..=steps)
        .map(|k| {
            let x = &d_s * rat(k, steps);
            let frac = (k as f64 / steps as f64).sqrt();
            let y_scaled = (crate::rational::to_f64(&h) * frac * 1024.0).floor() as i64;
            let y = std::cmp::min(rat(y_scaled, 1024), h.clone());
            (x, y)
        })
        .collect::<Vec<_>>();
    RelaxedAffineMinimizerConfig {
        base: AffineMinimizerConfig {
            lambda_prime: int(1),
            lambda,
            pi: PiTable::finite(int(0), p.clone(), p, -g),
        },
        d_s,
        d_t,
        zeta: PiecewiseLinear::new(points).expect("sorted breakpoints"),
    }
}

/// Non-decreasing table starting at `y0 >= 1/8` on `[0, 8]`.
fn random_table<R: Rng>(rng: &mut R) -> PiecewiseLinear {
    let count = rng.gen_range(3..=6);
    let mut xs: Vec<i64> = (1..32).collect();
    xs.shuffle(rng);
    let mut xs: Vec<i64> = xs.into_iter().take(count - 1).collect();
    xs.sort_unstable();
    let mut y = grid(rng, 1, 8, 8);
    let mut points = vec![(int(0), y.clone())];
    for x in xs {
        y += grid(rng, 0, 8, 4);
        points.push((rat(x, 4), y.clone()));
    }
    PiecewiseLinear::new(points).expect("sorted breakpoints")
}

pub fn random_task_independent<R: Rng>(rng: &mut R) -> TaskIndependent2x2 {
    TaskIndependent2x2::new(random_table(rng), random_table(rng)).expect("monotone tables")
}

pub fn random_one_dimensional<R: Rng>(rng: &mut R) -> OneDimensional2x2 {
    let variant = *[
        OneDimVariant::Bundling,
        OneDimVariant::Task1Only,
        OneDimVariant::Task2Only,
    ]
    .choose(rng)
    .unwrap();
    OneDimensional2x2::new(variant, random_table(rng)).expect("monotone table")
}

pub fn random_constant<R: Rng>(rng: &mut R) -> Constant2x2 {
    Constant2x2 {
        label: *Bundle::ALL.choose(rng).unwrap(),
    }
}
