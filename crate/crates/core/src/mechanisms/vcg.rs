use crate::model::{Allocation, CostMatrix};
use crate::rational::{int, Rational, Surd};

use super::{cheapest_machine, Mechanism, MechanismError};

/// Per-machine weights of a task-separable weighted VCG rule, kept as squares
/// so that irrational weights `sqrt(r)` compare exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VcgWeights {
    squared: Vec<Rational>,
}

impl VcgWeights {
    pub fn uniform(n: usize) -> Self {
        VcgWeights {
            squared: vec![int(1); n],
        }
    }

    /// Machine 0 has weight `sqrt(n-1)`, all others weight 1.
    pub fn first_heavy(n: usize) -> Self {
        let mut squared = vec![int(1); n];
        squared[0] = int(n as i64 - 1);
        VcgWeights { squared }
    }

    pub fn squared(&self, machine: usize) -> &Rational {
        &self.squared[machine]
    }

    pub fn len(&self) -> usize {
        self.squared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squared.is_empty()
    }

    /// `w_i`, exact.
    pub fn weight(&self, machine: usize) -> Surd {
        let sq = &self.squared[machine];
        assert!(sq.is_integer(), "only integer squared weights are supported");
        let r: i64 = sq.to_integer().try_into().expect("small weight");
        Surd::sqrt_multiple(int(1), r as u64)
    }

    /// `w_i * t`, exact.
    pub fn weighted(&self, machine: usize, t: &Rational) -> Surd {
        let w = self.weight(machine);
        Surd {
            rational: &w.rational * t,
            coeff: &w.coeff * t,
            radicand: w.radicand,
        }
    }

    /// Whether `w_a * x < w_b * y` (costs are non-negative).
    pub fn less(&self, a: usize, x: &Rational, b: usize, y: &Rational) -> bool {
        &self.squared[a] * x * x < &self.squared[b] * y * y
    }

    /// Weighted argmin for one task, lowest index on ties; `skip` excludes a
    /// machine (used by payments).
    pub fn argmin(&self, matrix: &CostMatrix, task: usize, skip: Option<usize>) -> usize {
        let mut best: Option<usize> = None;
        for i in 0..matrix.machines() {
            if Some(i) == skip {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if self.less(i, matrix.get(i, task), b, matrix.get(b, task)) {
                        best = Some(i);
                    }
                }
            }
        }
        best.expect("at least one machine")
    }
}

/// Each task to its cheapest machine.
#[derive(Clone, Copy, Debug, Default)]
pub struct Vcg;

impl Mechanism for Vcg {
    fn id(&self) -> String {
        "vcg".into()
    }

    fn tie_policy(&self) -> &'static str {
        "lowest machine index"
    }

    fn allocate(&self, matrix: &CostMatrix) -> Result<Allocation, MechanismError> {
        self.check_shape(matrix)?;
        let assignment = (0..matrix.tasks())
            .map(|j| cheapest_machine(matrix, j))
            .collect();
        Ok(Allocation::for_matrix(assignment, matrix)?)
    }

    fn vcg_weights(&self, n: usize) -> Option<VcgWeights> {
        Some(VcgWeights::uniform(n))
    }

    fn truthful_verified(&self) -> bool {
        true
    }
}

/// Weighted VCG with weight `sqrt(n-1)` on machine 0: a task goes to machine 0
/// iff `sqrt(n-1) t_0j` is the smallest weighted cost. With two machines this
/// is plain VCG.
#[derive(Clone, Copy, Debug, Default)]
pub struct WeightedVcg;

impl Mechanism for WeightedVcg {
    fn id(&self) -> String {
        "wvcg".into()
    }

    fn tie_policy(&self) -> &'static str {
        "lowest machine index (machine 0 wins (n-1) t^2 = s^2)"
    }

    fn allocate(&self, matrix: &CostMatrix) -> Result<Allocation, MechanismError> {
        self.check_shape(matrix)?;
        let w = VcgWeights::first_heavy(matrix.machines());
        let assignment = (0..matrix.tasks()).map(|j| w.argmin(matrix, j, None)).collect();
        Ok(Allocation::for_matrix(assignment, matrix)?)
    }

    fn vcg_weights(&self, n: usize) -> Option<VcgWeights> {
        Some(VcgWeights::first_heavy(n))
    }

    fn truthful_verified(&self) -> bool {
        true
    }
}

/// Each task to its most expensive machine, lowest index on ties. Not
/// monotone; serves as a control for the monotonicity checker.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxCost;

impl Mechanism for MaxCost {
    fn id(&self) -> String {
        "maxcost".into()
    }

    fn tie_policy(&self) -> &'static str {
        "lowest machine index"
    }

    fn allocate(&self, matrix: &CostMatrix) -> Result<Allocation, MechanismError> {
        self.check_shape(matrix)?;
        let assignment = (0..matrix.tasks())
            .map(|j| {
                let mut best = 0;
                for i in 1..matrix.machines() {
                    if matrix.get(i, j) > matrix.get(best, j) {
                        best = i;
                    }
                }
                best
            })
            .collect();
        Ok(Allocation::for_matrix(assignment, matrix)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    #[test]
    fn vcg_breaks_ties_toward_lower_index() {
        let m = CostMatrix::from_ints(&[&[2, 1, 3], &[1, 1, 4], &[1, 5, 1]]).unwrap();
        let a = Vcg.allocate(&m).unwrap();
        assert_eq!(a.assignment(), &[1, 0, 2]);
    }

    #[test]
    fn weighted_threshold_is_exact() {
        // n = 3: machine 0 wins iff 2 t^2 <= s^2.
        let mk = |t: Rational, s: Rational| {
            CostMatrix::new(vec![
                vec![t],
                vec![s.clone()],
                vec![int(1000)],
            ])
            .unwrap()
        };
        // t = 1, s = sqrt(2) impossible exactly; test both sides.
        assert_eq!(
            WeightedVcg.allocate(&mk(int(1), rat(1415, 1000))).unwrap().machine_of(0),
            0
        );
        assert_eq!(
            WeightedVcg.allocate(&mk(int(1), rat(1414, 1000))).unwrap().machine_of(0),
            1
        );
        // Tie 2 * 1^2 == 2 goes to machine 0 when s^2 = 2 t^2 with t = 1/2, s = ... use n = 5.
        let m = CostMatrix::new(vec![
            vec![int(1)],
            vec![int(2)],
            vec![int(9)],
            vec![int(9)],
            vec![int(9)],
        ])
        .unwrap();
        assert_eq!(WeightedVcg.allocate(&m).unwrap().machine_of(0), 0);
    }

    #[test]
    fn two_machine_weighted_equals_vcg() {
        let m = CostMatrix::from_ints(&[&[3, 1, 2], &[1, 3, 2]]).unwrap();
        assert_eq!(Vcg.allocate(&m).unwrap(), WeightedVcg.allocate(&m).unwrap());
    }

    #[test]
    fn maxcost_picks_column_maximum() {
        let m = CostMatrix::from_ints(&[&[1, 2, 3], &[2, 1, 3]]).unwrap();
        assert_eq!(MaxCost.allocate(&m).unwrap().assignment(), &[1, 0, 0]);
    }

    #[test]
    fn vcg_ratio_near_n_on_near_ties() {
        let mut rows = vec![vec![int(1); 4]];
        for _ in 1..4 {
            rows.push(vec![rat(1001, 1000); 4]);
        }
        let m = CostMatrix::new(rows).unwrap();
        let a = Vcg.allocate(&m).unwrap();
        assert_eq!(a.tasks_of(0).len(), 4);
        let ratio = crate::solve::approx_ratio(&m, &a).unwrap();
        assert_eq!(ratio, int(4) / rat(1001, 1000));
    }

    #[test]
    fn weighted_examples() {
        // n = 5, lambda = 2: (t, s) = (1/2 + 1/1000, 1) goes to the s-player.
        let col = |t: Rational, s: Rational| {
            let mut rows = vec![vec![t], vec![s]];
            for _ in 2..5 {
                rows.push(vec![int(1000)]);
            }
            CostMatrix::new(rows).unwrap()
        };
        assert_eq!(
            WeightedVcg.allocate(&col(rat(501, 1000), int(1))).unwrap().machine_of(0),
            1
        );
        assert_eq!(
            WeightedVcg.allocate(&col(int(1), int(2))).unwrap().machine_of(0),
            0
        );
    }
}
