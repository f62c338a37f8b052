//! Minimum-cost rectangular assignment via forward auction with ε-scaling.
//!
//! Costs are integers. The solver
//!
//! 1. folds tie-break preferences into the costs (lower column ids first,
//!    then lower row ids) with weights small enough that every optimum of the
//!    perturbed problem is an optimum of the original one,
//! 2. keeps, for the smaller side, only the `k` cheapest partners of each
//!    element (`k` = size of the smaller side); some optimal assignment
//!    always lives inside this candidate set,
//! 3. pads the reduced problem to a square with zero-benefit dummies and
//!    runs a Gauss-Seidel forward auction on benefits scaled by `s + 1`, so
//!    that the final phase with integer `ε = 1` is exact.

use std::collections::VecDeque;

use thiserror::Error;

use crate::demand::{Request, RequestId};
use crate::fleet::{AgentId, FleetState};
use crate::graph::RoadGraph;

#[derive(Debug, Error, PartialEq)]
pub enum MatchingError {
    #[error("cost matrix is empty")]
    Empty,
    #[error("cost at ({row}, {col}) is {value}; costs must be non-negative")]
    NegativeCost { row: usize, col: usize, value: i64 },
    #[error("cost matrix row {row} has {found} entries, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Dense row-major matrix of non-negative integer costs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self, MatchingError> {
        assert_eq!(data.len(), rows * cols, "cost data has wrong length");
        if let Some(k) = data.iter().position(|&c| c < 0) {
            return Err(MatchingError::NegativeCost {
                row: k / cols,
                col: k % cols,
                value: data[k],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self, MatchingError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(MatchingError::Ragged {
                    row: i,
                    found: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Parses one comma-separated row of integers per line; blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, MatchingError> {
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let row = trimmed
                .split(',')
                .map(|f| {
                    let f = f.trim();
                    f.parse::<i64>().map_err(|_| MatchingError::Parse {
                        line: line_no,
                        message: format!("'{f}' is not an integer cost"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
            lines.push(line_no);
        }
        Self::from_rows(&rows).map_err(|e| match e {
            MatchingError::Ragged {
                row,
                found,
                expected,
            } => MatchingError::Parse {
                line: lines[row],
                message: format!("row has {found} entries, expected {expected}"),
            },
            MatchingError::NegativeCost { row, col, value } => MatchingError::Parse {
                line: lines[row],
                message: format!("negative cost {value} in column {col}"),
            },
            other => other,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.data[row * self.cols + col]
    }

    pub fn max_cost(&self) -> i64 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// One-to-one pairing of rows and columns of maximal cardinality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: i64,
}

/// Minimum-cost matching of cardinality `min(rows, cols)`.
pub fn solve_assignment(c: &CostMatrix) -> Result<Matching, MatchingError> {
    if c.is_empty() {
        return Err(MatchingError::Empty);
    }
    let (m, n) = (c.rows, c.cols);
    let k = m.min(n);

    // Perturbed cost: cost * a + col * b + row. Sums of the row term over any
    // matching differ by less than b, and sums of col * b + row by less than a.
    let b = (k as i128) * (m as i128) + 1;
    let a = (k as i128) * (n as i128) * b + 1;
    let weight = |i: usize, j: usize| c.get(i, j) as i128 * a + j as i128 * b + i as i128;

    // Persons are the smaller side; each keeps its k cheapest objects.
    let transpose = m > n;
    let (persons, objects) = if transpose { (n, m) } else { (m, n) };
    let w = |p: usize, o: usize| {
        if transpose {
            weight(o, p)
        } else {
            weight(p, o)
        }
    };

    let mut keep = vec![false; objects];
    let mut order: Vec<usize> = (0..objects).collect();
    for p in 0..persons {
        order.sort_by_key(|&o| (w(p, o), o));
        for &o in order.iter().take(k) {
            keep[o] = true;
        }
    }
    let candidates: Vec<usize> = (0..objects).filter(|&o| keep[o]).collect();
    let s = candidates.len();

    // Benefits = -weight * (s + 1); dummy persons value every object at 0.
    let scale = s as i128 + 1;
    let mut benefit = vec![0i128; s * s];
    for p in 0..persons {
        for (q, &o) in candidates.iter().enumerate() {
            benefit[p * s + q] = -w(p, o) * scale;
        }
    }
    let owner = auction(&benefit, s);

    let mut pairs: Vec<(usize, usize)> = (0..s)
        .filter_map(|q| {
            let p = owner[q];
            (p < persons).then(|| {
                let o = candidates[q];
                if transpose {
                    (o, p)
                } else {
                    (p, o)
                }
            })
        })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| c.get(i, j)).sum();
    Ok(Matching { pairs, total_cost })
}

/// Square forward auction maximising total benefit. Returns the owner of
/// each object. Benefits must be integers scaled so that `ε = 1` is exact.
fn auction(benefit: &[i128], s: usize) -> Vec<usize> {
    const UNASSIGNED: usize = usize::MAX;
    const THETA: i128 = 5;

    let (lo, hi) = benefit.iter().fold((i128::MAX, i128::MIN), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let mut eps = ((hi - lo) / THETA).max(1);
    let mut price = vec![0i128; s];
    let mut owner = vec![UNASSIGNED; s];
    let mut assigned = vec![UNASSIGNED; s];
    let mut queue = VecDeque::with_capacity(s);

    loop {
        owner.iter_mut().for_each(|o| *o = UNASSIGNED);
        assigned.iter_mut().for_each(|a| *a = UNASSIGNED);
        queue.clear();
        queue.extend(0..s);

        while let Some(p) = queue.pop_front() {
            let row = &benefit[p * s..(p + 1) * s];
            let mut best = 0;
            let mut best_val = row[0] - price[0];
            let mut second_val = i128::MIN;
            for (o, &v) in row.iter().enumerate().skip(1) {
                let val = v - price[o];
                if val > best_val {
                    second_val = best_val;
                    best_val = val;
                    best = o;
                } else if val > second_val {
                    second_val = val;
                }
            }
            let increment = if second_val == i128::MIN {
                eps
            } else {
                best_val - second_val + eps
            };
            price[best] += increment;
            let prev = owner[best];
            if prev != UNASSIGNED {
                assigned[prev] = UNASSIGNED;
                queue.push_back(prev);
            }
            owner[best] = p;
            assigned[p] = best;
        }

        if eps == 1 {
            return owner;
        }
        eps = (eps / THETA).max(1);
    }
}

/// Cost matrix for one dispatch step: available agents by outstanding requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentProblem {
    pub agents: Vec<AgentId>,
    pub requests: Vec<RequestId>,
    pub costs: Option<CostMatrix>,
}

impl AssignmentProblem {
    pub fn is_empty(&self) -> bool {
        self.costs.is_none()
    }
}

/// Entry `(agent, request)` is `d(agent, pickup) + d(pickup, dropoff)`.
/// `costs` is `None` when either side is empty.
pub fn build_costs(fs: &FleetState, outstanding: &[Request], g: &RoadGraph) -> AssignmentProblem {
    let agents: Vec<&_> = fs.available().collect();
    let requests: Vec<RequestId> = outstanding.iter().map(|r| r.id).collect();
    let costs = if agents.is_empty() || outstanding.is_empty() {
        None
    } else {
        let mut data = Vec::with_capacity(agents.len() * outstanding.len());
        for a in &agents {
            for r in outstanding {
                data.push((g.dist(a.location, r.pickup) + g.dist(r.pickup, r.dropoff)) as i64);
            }
        }
        Some(
            CostMatrix::new(agents.len(), outstanding.len(), data)
                .expect("distances are non-negative"),
        )
    };
    AssignmentProblem {
        agents: agents.iter().map(|a| a.id).collect(),
        requests,
        costs,
    }
}
