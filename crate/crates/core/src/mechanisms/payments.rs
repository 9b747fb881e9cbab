use num_traits::Zero;

use crate::model::CostMatrix;
use crate::rational::{Rational, Surd};

use super::{Mechanism, MechanismError};

/// Clarke pivot payments for task-separable weighted VCG rules.
///
/// Machine `i` receives, for each task it wins, the best weighted cost among
/// the other machines divided by its own weight.
pub fn clarke_payments(
    mech: &dyn Mechanism,
    matrix: &CostMatrix,
) -> Result<Vec<Surd>, MechanismError> {
    let weights = mech.vcg_weights(matrix.machines()).ok_or_else(|| {
        MechanismError::Unsupported(format!(
            "payments are only defined for VCG-family mechanisms, not {}",
            mech.id()
        ))
    })?;
    let alloc = mech.allocate(matrix)?;
    let n = matrix.machines();
    let mut pay = vec![Surd::from_rational(Rational::zero()); n];
    for j in 0..matrix.tasks() {
        let i = alloc.machine_of(j);
        let k = weights.argmin(matrix, j, Some(i));
        let best_other = weights.weighted(k, matrix.get(k, j));
        let w = weights.weight(i);
        let share = if w.coeff.is_zero() {
            Surd {
                rational: &best_other.rational / &w.rational,
                coeff: &best_other.coeff / &w.rational,
                radicand: best_other.radicand,
            }
        } else {
            // (a + b sqrt r) / sqrt r = b + (a / r) sqrt r
            let r = Rational::from_integer((w.radicand as i64).into());
            Surd::from_rational(best_other.coeff.clone())
                .add(&Surd::sqrt_multiple(&best_other.rational / &r, w.radicand))
        };
        pay[i] = pay[i].add(&share);
    }
    Ok(pay)
}

/// Quasi-linear utility of machine `i` when the mechanism runs on `reported`
/// but its true costs are `truth`.
pub fn utility(
    mech: &dyn Mechanism,
    truth: &CostMatrix,
    reported: &CostMatrix,
    machine: usize,
) -> Result<Surd, MechanismError> {
    let pay = clarke_payments(mech, reported)?;
    let alloc = mech.allocate(reported)?;
    let mut cost = Rational::zero();
    for j in alloc.tasks_of(machine) {
        cost += truth.get(machine, j);
    }
    Ok(pay[machine].sub_rational(&cost))
}

/// Gain of machine `i` from reporting `row` instead of its true row; a
/// truthful rule never yields a positive value.
pub fn payment_truthfulness_gain(
    mech: &dyn Mechanism,
    truth: &CostMatrix,
    machine: usize,
    row: &[Rational],
) -> Result<Surd, MechanismError> {
    let lie = truth.with_row(machine, row)?;
    let honest = utility(mech, truth, truth, machine)?;
    let dishonest = utility(mech, truth, &lie, machine)?;
    Ok(dishonest.sub(&honest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{MaxCost, Vcg, WeightedVcg};
    use crate::rational::{int, rat};
    use std::cmp::Ordering;

    #[test]
    fn vcg_pays_second_price() {
        let m = CostMatrix::from_ints(&[&[1, 5], &[3, 2], &[4, 4]]).unwrap();
        let p = clarke_payments(&Vcg, &m).unwrap();
        assert_eq!(p[0], Surd::from_rational(int(3)));
        assert_eq!(p[1], Surd::from_rational(int(4)));
        assert_eq!(p[2], Surd::from_rational(int(0)));
    }

    #[test]
    fn weighted_payments_are_exact_surds() {
        // n = 3, w0 = sqrt 2. Task to machine 0 (t = 1, s = 2): paid 2/sqrt2 = sqrt 2.
        let m = CostMatrix::new(vec![vec![int(1)], vec![int(2)], vec![int(9)]]).unwrap();
        let p = clarke_payments(&WeightedVcg, &m).unwrap();
        assert_eq!(p[0].to_f64(), 2f64.sqrt());
        assert!(p[0].coeff == int(1) && p[0].rational.is_zero());
        // Task to machine 1 (t = 1, s = 1): paid sqrt 2 * 1.
        let m = CostMatrix::new(vec![vec![int(1)], vec![int(1)], vec![int(9)]]).unwrap();
        let p = clarke_payments(&WeightedVcg, &m).unwrap();
        assert_eq!(p[1], Surd::sqrt_multiple(int(1), 2));
    }

    #[test]
    fn non_vcg_payments_unsupported() {
        let m = CostMatrix::from_ints(&[&[1], &[2]]).unwrap();
        assert!(matches!(
            clarke_payments(&MaxCost, &m),
            Err(MechanismError::Unsupported(_))
        ));
    }

    #[test]
    fn lying_does_not_pay() {
        let m = CostMatrix::new(vec![
            vec![int(1), rat(3, 2)],
            vec![int(2), int(1)],
            vec![int(3), int(3)],
        ])
        .unwrap();
        for row in [
            vec![int(5), int(5)],
            vec![rat(1, 2), rat(1, 2)],
            vec![int(2), int(1)],
        ] {
            for i in 0..3 {
                let g = payment_truthfulness_gain(&WeightedVcg, &m, i, &row).unwrap();
                assert_ne!(g.signum(), Ordering::Greater);
            }
        }
    }
}
