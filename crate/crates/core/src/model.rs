//! Cost matrices, allocations and clustered instances.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{format_rational, int, parse_rational, serde_str, Rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("need at least {min} machines, got {got}")]
    TooFewMachines { min: usize, got: usize },
    #[error("instance has no tasks")]
    NoTasks,
    #[error("row {row} has {got} entries, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("entry ({machine}, {task}) is negative: {value}")]
    NegativeEntry {
        machine: usize,
        task: usize,
        value: String,
    },
    #[error("allocation has {got} tasks, instance has {expected}")]
    AllocationLength { got: usize, expected: usize },
    #[error("task {task} assigned to machine {machine}, but only {machines} machines exist")]
    MachineOutOfRange {
        task: usize,
        machine: usize,
        machines: usize,
    },
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("invalid clustered instance: {0}")]
    InvalidClustered(String),
    #[error("cannot parse instance: {0}")]
    Parse(String),
}

/// Processing times `t[i][j]` of task `j` on machine `i`, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CostMatrix {
    n: usize,
    m: usize,
    values: Vec<Rational>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<Rational>>) -> Result<Self, ModelError> {
        let n = rows.len();
        if n < 2 {
            return Err(ModelError::TooFewMachines { min: 2, got: n });
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(ModelError::NoTasks);
        }
        let mut values = Vec::with_capacity(n * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(ModelError::RaggedRow {
                    row: i,
                    got: row.len(),
                    expected: m,
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                if v.is_negative() {
                    return Err(ModelError::NegativeEntry {
                        machine: i,
                        task: j,
                        value: format_rational(&v),
                    });
                }
                values.push(v);
            }
        }
        Ok(CostMatrix { n, m, values })
    }

    pub fn from_ints(rows: &[&[i64]]) -> Result<Self, ModelError> {
        Self::new(
            rows.iter()
                .map(|r| r.iter().map(|&v| int(v)).collect())
                .collect(),
        )
    }

    pub fn machines(&self) -> usize {
        self.n
    }

    pub fn tasks(&self) -> usize {
        self.m
    }

    pub fn get(&self, machine: usize, task: usize) -> &Rational {
        &self.values[machine * self.m + task]
    }

    pub fn row(&self, machine: usize) -> &[Rational] {
        &self.values[machine * self.m..(machine + 1) * self.m]
    }

    pub fn rows(&self) -> Vec<Vec<Rational>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn set(&mut self, machine: usize, task: usize, value: Rational) -> Result<(), ModelError> {
        if machine >= self.n || task >= self.m {
            return Err(ModelError::OutOfRange(format!(
                "({machine}, {task}) in a {}x{} matrix",
                self.n, self.m
            )));
        }
        if value.is_negative() {
            return Err(ModelError::NegativeEntry {
                machine,
                task,
                value: format_rational(&value),
            });
        }
        self.values[machine * self.m + task] = value;
        Ok(())
    }

    /// Copy with row `machine` replaced, as in a unilateral deviation.
    pub fn with_row(&self, machine: usize, row: &[Rational]) -> Result<CostMatrix, ModelError> {
        if row.len() != self.m {
            return Err(ModelError::RaggedRow {
                row: machine,
                got: row.len(),
                expected: self.m,
            });
        }
        let mut out = self.clone();
        for (j, v) in row.iter().enumerate() {
            out.set(machine, j, v.clone())?;
        }
        Ok(out)
    }
}

/// Task-to-machine map; `assignment[j]` is the machine that runs task `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    assignment: Vec<usize>,
    machines: usize,
}

impl Allocation {
    pub fn new(assignment: Vec<usize>, machines: usize) -> Result<Self, ModelError> {
        for (task, &machine) in assignment.iter().enumerate() {
            if machine >= machines {
                return Err(ModelError::MachineOutOfRange {
                    task,
                    machine,
                    machines,
                });
            }
        }
        Ok(Allocation {
            assignment,
            machines,
        })
    }

    pub fn for_matrix(assignment: Vec<usize>, matrix: &CostMatrix) -> Result<Self, ModelError> {
        if assignment.len() != matrix.tasks() {
            return Err(ModelError::AllocationLength {
                got: assignment.len(),
                expected: matrix.tasks(),
            });
        }
        Self::new(assignment, matrix.machines())
    }

    pub fn machine_of(&self, task: usize) -> usize {
        self.assignment[task]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn tasks(&self) -> usize {
        self.assignment.len()
    }

    /// The 0/1 indicator `a_ij`.
    pub fn indicator(&self, machine: usize, task: usize) -> i64 {
        i64::from(self.assignment[task] == machine)
    }

    pub fn tasks_of(&self, machine: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == machine)
            .map(|(j, _)| j)
            .collect()
    }
}

/// A task of a clustered instance: cost `t` on player 0 and `s` on the owner
/// of its cluster; every other player has the large constant `theta`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterTask {
    #[serde(with = "serde_str")]
    pub t: Rational,
    #[serde(with = "serde_str")]
    pub s: Rational,
}

impl ClusterTask {
    pub fn new(t: Rational, s: Rational) -> Self {
        ClusterTask { t, s }
    }
}

/// Where a column of the expanded matrix comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskRef {
    /// Task `pos` of the cluster owned by player `cluster` (1-based).
    Cluster { cluster: usize, pos: usize },
    /// Dummy task of player `player`.
    Dummy { player: usize },
}

/// Multi-player instance built from `n-1` clusters of `ell+1` two-valued tasks
/// plus one dummy task per player.
///
/// Columns of the expanded matrix are ordered cluster 1, cluster 2, ...,
/// cluster `n-1`, then dummies `d_0..d_{n-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClusteredInstance {
    n: usize,
    ell: usize,
    theta: Rational,
    big_b: Rational,
    clusters: Vec<Vec<ClusterTask>>,
    dummies: Vec<Rational>,
    safety_factor: Rational,
}

pub const DEFAULT_THETA_SAFETY: i64 = 1000;

impl ClusteredInstance {
    /// `clusters[c]` belongs to player `c + 1`. Each cluster must have
    /// `ell + 1` tasks, all values must lie in `(0, big_b)` (dummies in
    /// `[0, ...)`), and `theta` must dominate every other value.
    pub fn new(
        n: usize,
        ell: usize,
        clusters: Vec<Vec<ClusterTask>>,
        dummies: Vec<Rational>,
        theta: Rational,
        big_b: Rational,
    ) -> Result<Self, ModelError> {
        let inst = ClusteredInstance {
            n,
            ell,
            theta,
            big_b,
            clusters,
            dummies,
            safety_factor: int(DEFAULT_THETA_SAFETY),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_safety_factor(mut self, factor: Rational) -> Result<Self, ModelError> {
        self.safety_factor = factor;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidClustered(m));
        if self.n < 2 {
            return Err(ModelError::TooFewMachines {
                min: 2,
                got: self.n,
            });
        }
        if self.clusters.len() != self.n - 1 {
            return bad(format!(
                "expected {} clusters, got {}",
                self.n - 1,
                self.clusters.len()
            ));
        }
        if self.dummies.len() != self.n {
            return bad(format!(
                "expected {} dummy values, got {}",
                self.n,
                self.dummies.len()
            ));
        }
        if !self.big_b.is_positive() {
            return bad("B must be positive".into());
        }
        for (c, cluster) in self.clusters.iter().enumerate() {
            if cluster.len() != self.ell + 1 {
                return bad(format!(
                    "cluster {} has {} tasks, expected {}",
                    c + 1,
                    cluster.len(),
                    self.ell + 1
                ));
            }
            for (pos, task) in cluster.iter().enumerate() {
                for (name, v) in [("t", &task.t), ("s", &task.s)] {
                    if !v.is_positive() || *v >= self.big_b {
                        return bad(format!(
                            "cluster {} task {pos}: {name} = {} is outside (0, B)",
                            c + 1,
                            format_rational(v)
                        ));
                    }
                }
            }
        }
        for (i, d) in self.dummies.iter().enumerate() {
            if d.is_negative() {
                return bad(format!("dummy {i} is negative"));
            }
        }
        let mut largest = self.big_b.clone();
        for d in &self.dummies {
            if *d > largest {
                largest = d.clone();
            }
        }
        let total = &largest * int(((self.ell + 1) * self.n) as i64);
        if self.theta <= &total * &self.safety_factor {
            return bad(format!(
                "theta = {} is not above {} times the largest possible load {}",
                format_rational(&self.theta),
                format_rational(&self.safety_factor),
                format_rational(&total)
            ));
        }
        Ok(())
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn cluster_size(&self) -> usize {
        self.ell + 1
    }

    pub fn theta(&self) -> &Rational {
        &self.theta
    }

    pub fn big_b(&self) -> &Rational {
        &self.big_b
    }

    /// Tasks of the cluster owned by player `cluster` (1-based).
    pub fn cluster(&self, cluster: usize) -> &[ClusterTask] {
        &self.clusters[cluster - 1]
    }

    pub fn clusters(&self) -> &[Vec<ClusterTask>] {
        &self.clusters
    }

    pub fn dummies(&self) -> &[Rational] {
        &self.dummies
    }

    pub fn task_count(&self) -> usize {
        (self.n - 1) * (self.ell + 1) + self.n
    }

    pub fn column_of(&self, r: TaskRef) -> usize {
        match r {
            TaskRef::Cluster { cluster, pos } => (cluster - 1) * (self.ell + 1) + pos,
            TaskRef::Dummy { player } => (self.n - 1) * (self.ell + 1) + player,
        }
    }

    pub fn task_ref(&self, column: usize) -> TaskRef {
        let k = self.ell + 1;
        let cluster_cols = (self.n - 1) * k;
        if column < cluster_cols {
            TaskRef::Cluster {
                cluster: column / k + 1,
                pos: column % k,
            }
        } else {
            TaskRef::Dummy {
                player: column - cluster_cols,
            }
        }
    }

    /// Cluster task at an expanded column; `None` for dummy columns.
    pub fn task_at(&self, column: usize) -> Option<&ClusterTask> {
        match self.task_ref(column) {
            TaskRef::Cluster { cluster, pos } => Some(&self.clusters[cluster - 1][pos]),
            TaskRef::Dummy { .. } => None,
        }
    }

    pub fn set_task(&mut self, column: usize, task: ClusterTask) -> Result<(), ModelError> {
        match self.task_ref(column) {
            TaskRef::Cluster { cluster, pos } if cluster < self.n => {
                let old = std::mem::replace(&mut self.clusters[cluster - 1][pos], task);
                if let Err(e) = self.validate() {
                    self.clusters[cluster - 1][pos] = old;
                    return Err(e);
                }
                Ok(())
            }
            _ => Err(ModelError::OutOfRange(format!(
                "column {column} is not a cluster task"
            ))),
        }
    }

    pub fn set_dummy(&mut self, player: usize, value: Rational) -> Result<(), ModelError> {
        if player >= self.n {
            return Err(ModelError::OutOfRange(format!("dummy {player}")));
        }
        let old = std::mem::replace(&mut self.dummies[player], value);
        if let Err(e) = self.validate() {
            self.dummies[player] = old;
            return Err(e);
        }
        Ok(())
    }

    /// The full `n × ((n-1)(ell+1)+n)` cost matrix.
    pub fn expand(&self) -> CostMatrix {
        let m = self.task_count();
        let mut rows = vec![vec![self.theta.clone(); m]; self.n];
        for (c, cluster) in self.clusters.iter().enumerate() {
            let owner = c + 1;
            for (pos, task) in cluster.iter().enumerate() {
                let col = c * (self.ell + 1) + pos;
                rows[0][col] = task.t.clone();
                rows[owner][col] = task.s.clone();
            }
        }
        for (i, d) in self.dummies.iter().enumerate() {
            rows[i][self.column_of(TaskRef::Dummy { player: i })] = d.clone();
        }
        CostMatrix::new(rows).expect("validated clustered instance expands to a valid matrix")
    }
}

/// JSON instance file: either a plain matrix or a clustered description.
/// An optional `"mechanism"` block may sit beside it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InstanceDoc {
    Matrix {
        n: usize,
        values: Vec<Vec<String>>,
    },
    Clustered {
        n: usize,
        ell: usize,
        theta: String,
        #[serde(rename = "B")]
        big_b: String,
        clusters: Vec<Vec<ClusterTask>>,
        dummies: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instance {
    Matrix(CostMatrix),
    Clustered(ClusteredInstance),
}

impl Instance {
    pub fn matrix(&self) -> CostMatrix {
        match self {
            Instance::Matrix(m) => m.clone(),
            Instance::Clustered(c) => c.expand(),
        }
    }
}

fn parse_all(v: &[String]) -> Result<Vec<Rational>, ModelError> {
    v.iter()
        .map(|s| parse_rational(s).map_err(|e| ModelError::Parse(e.to_string())))
        .collect()
}

impl TryFrom<InstanceDoc> for Instance {
    type Error = ModelError;

    fn try_from(doc: InstanceDoc) -> Result<Self, ModelError> {
        match doc {
            InstanceDoc::Matrix { n, values } => {
                if values.len() != n {
                    return Err(ModelError::Parse(format!(
                        "declared n = {n} but {} rows given",
                        values.len()
                    )));
                }
                let rows = values
                    .iter()
                    .map(|r| parse_all(r))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Instance::Matrix(CostMatrix::new(rows)?))
            }
            InstanceDoc::Clustered {
                n,
                ell,
                theta,
                big_b,
                clusters,
                dummies,
            } => {
                let theta = parse_rational(&theta).map_err(|e| ModelError::Parse(e.to_string()))?;
                let big_b = parse_rational(&big_b).map_err(|e| ModelError::Parse(e.to_string()))?;
                Ok(Instance::Clustered(ClusteredInstance::new(
                    n,
                    ell,
                    clusters,
                    parse_all(&dummies)?,
                    theta,
                    big_b,
                )?))
            }
        }
    }
}

impl From<&Instance> for InstanceDoc {
    fn from(inst: &Instance) -> Self {
        match inst {
            Instance::Matrix(m) => InstanceDoc::Matrix {
                n: m.machines(),
                values: m
                    .rows()
                    .iter()
                    .map(|r| r.iter().map(format_rational).collect())
                    .collect(),
            },
            Instance::Clustered(c) => InstanceDoc::Clustered {
                n: c.players(),
                ell: c.ell(),
                theta: format_rational(c.theta()),
                big_b: format_rational(c.big_b()),
                clusters: c.clusters().to_vec(),
                dummies: c.dummies().iter().map(format_rational).collect(),
            },
        }
    }
}

impl Serialize for ClusteredInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        InstanceDoc::from(&Instance::Clustered(self.clone())).serialize(s)
    }
}

impl Serialize for CostMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        InstanceDoc::from(&Instance::Matrix(self.clone())).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClusteredInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Instance::try_from(InstanceDoc::deserialize(d)?) {
            Ok(Instance::Clustered(c)) => Ok(c),
            Ok(Instance::Matrix(_)) => Err(serde::de::Error::custom(
                "expected a clustered instance, found a matrix",
            )),
            Err(e) => Err(serde::de::Error::custom(e)),
        }
    }
}

impl<'de> Deserialize<'de> for CostMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Instance::try_from(InstanceDoc::deserialize(d)?)
            .map(|i| i.matrix())
            .map_err(serde::de::Error::custom)
    }
}

/// Reads an instance from JSON text, returning the optional sibling
/// `"mechanism"` block untouched.
pub fn parse_instance_json(
    text: &str,
) -> Result<(Instance, Option<serde_json::Value>), ModelError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let mechanism = value
        .as_object_mut()
        .and_then(|o| o.remove("mechanism"));
    let doc: InstanceDoc =
        serde_json::from_value(value).map_err(|e| ModelError::Parse(e.to_string()))?;
    Ok((Instance::try_from(doc)?, mechanism))
}

pub fn instance_to_json(inst: &Instance) -> serde_json::Value {
    serde_json::to_value(InstanceDoc::from(inst)).expect("instance serializes")
}

/// True when every entry is zero; such instances have optimum zero.
pub fn is_all_zero(m: &CostMatrix) -> bool {
    (0..m.machines()).all(|i| m.row(i).iter().all(Zero::is_zero))
}
