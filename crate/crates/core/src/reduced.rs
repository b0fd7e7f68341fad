//! Reduced matrices `D^-1 M^-` and determining vertices of weighted cycles.
//!
//! For a derangement `d`, `entry(a, b) = cost(a, d(b)) - cost(a, d(a))`: the
//! change in value when `a` is sent to `d(b)` instead of `d(a)`. The diagonal
//! is zero and cells that would read the cost diagonal (`d(b) = a`) are
//! forbidden.

use std::fmt::Write as _;

use thiserror::Error;

use crate::instance::CostMatrix;
use crate::permutation::{cycle_text, Permutation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReducedError {
    #[error("vertex {0} is a fixed point of the derangement")]
    FixedPoint(usize),
    #[error("size mismatch: matrix has {matrix} vertices, permutation {perm}")]
    Size { matrix: usize, perm: usize },
    #[error("arc ({0} {1}) is forbidden")]
    ForbiddenArc(usize, usize),
    #[error("cycle {0} is too short")]
    ShortCycle(String),
}

/// The reduced matrix of a cost matrix with respect to a derangement.
#[derive(Debug, Clone)]
pub struct ReducedMatrix {
    n: usize,
    perm: Permutation,
    entry: Vec<i64>,
    forbidden: Vec<bool>,
}

/// Builds `d^-1 M^-` for a derangement (or perfect matching) `d`.
pub fn build_reduced(m: &CostMatrix, d: &Permutation) -> Result<ReducedMatrix, ReducedError> {
    let n = m.n();
    if d.n() != n {
        return Err(ReducedError::Size {
            matrix: n,
            perm: d.n(),
        });
    }
    if let Some(a) = (0..n).find(|&a| d.at(a) == a) {
        return Err(ReducedError::FixedPoint(a + 1));
    }
    let mut entry = vec![0; n * n];
    let mut forbidden = vec![false; n * n];
    for a in 0..n {
        let base = m.cost(a, d.at(a));
        for b in 0..n {
            if a == b {
                continue;
            }
            let target = d.at(b);
            if target == a {
                forbidden[a * n + b] = true;
            } else {
                entry[a * n + b] = m.cost(a, target) - base;
            }
        }
    }
    Ok(ReducedMatrix {
        n,
        perm: d.clone(),
        entry,
        forbidden,
    })
}

impl ReducedMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// The derangement the matrix is reduced against.
    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    /// Forbids every arc `(a, b)` whose new edge `a -> d(b)` reverses an arc
    /// of `d`, i.e. `d(d(b)) = a`.
    pub fn with_symmetric_forbidden(mut self) -> Self {
        for a in 0..self.n {
            for b in 0..self.n {
                if a != b && self.perm.at(self.perm.at(b)) == a {
                    self.forbidden[a * self.n + b] = true;
                }
            }
        }
        self
    }

    /// True for the diagonal and for forbidden cells.
    #[inline]
    pub fn is_forbidden(&self, a: usize, b: usize) -> bool {
        self.forbidden[a * self.n + b]
    }

    /// Cell value, `None` when forbidden. The diagonal reads 0.
    #[inline]
    pub fn entry(&self, a: usize, b: usize) -> Option<i64> {
        if self.forbidden[a * self.n + b] {
            None
        } else {
            Some(self.entry[a * self.n + b])
        }
    }

    /// An arc usable in a path: off-diagonal and not forbidden.
    #[inline]
    pub fn arc(&self, a: usize, b: usize) -> Option<i64> {
        if a == b {
            None
        } else {
            self.entry(a, b)
        }
    }

    /// Arc values along a closed vertex cycle, in order.
    pub fn arc_weights(&self, c: &[usize]) -> Result<Vec<i64>, ReducedError> {
        if c.len() < 2 {
            return Err(ReducedError::ShortCycle(cycle_text(c)));
        }
        (0..c.len())
            .map(|i| {
                let (a, b) = (c[i], c[(i + 1) % c.len()]);
                self.arc(a, b)
                    .ok_or(ReducedError::ForbiddenArc(a + 1, b + 1))
            })
            .collect()
    }

    /// Value of a path given as a vertex sequence (no closing arc).
    pub fn path_value(&self, p: &[usize]) -> Result<i64, ReducedError> {
        p.windows(2)
            .map(|w| {
                self.arc(w[0], w[1])
                    .ok_or(ReducedError::ForbiddenArc(w[0] + 1, w[1] + 1))
            })
            .sum()
    }

    /// Table in row form: a header of permuted column labels `d(b)` and one
    /// row per vertex, `X` marking forbidden cells.
    pub fn to_table_text(&self) -> String {
        let mut out = String::from("    ");
        for b in 0..self.n {
            let _ = write!(out, "{:>5}", self.perm.at(b) + 1);
        }
        out.push('\n');
        for a in 0..self.n {
            let _ = write!(out, "{:>4}", a + 1);
            for b in 0..self.n {
                match self.entry(a, b) {
                    Some(v) => {
                        let _ = write!(out, "{v:>5}");
                    }
                    None => out.push_str("    X"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Sum of arc values around a cycle of the reduced matrix.
pub fn cycle_value(r: &ReducedMatrix, c: &[usize]) -> Result<i64, ReducedError> {
    Ok(r.arc_weights(c)?.iter().sum())
}

/// A cycle with one weight per arc `(v_i, v_{i+1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedCycle {
    pub vertices: Vec<usize>,
    pub weights: Vec<i64>,
}

impl WeightedCycle {
    pub fn new(vertices: Vec<usize>, weights: Vec<i64>) -> Self {
        assert_eq!(vertices.len(), weights.len(), "one weight per arc");
        assert!(vertices.len() >= 2, "a cycle has at least two arcs");
        Self { vertices, weights }
    }

    /// Reads the weights of a cycle off a reduced matrix.
    pub fn from_reduced(r: &ReducedMatrix, c: &[usize]) -> Result<Self, ReducedError> {
        Ok(Self::new(c.to_vec(), r.arc_weights(c)?))
    }

    pub fn total(&self) -> i64 {
        self.weights.iter().sum()
    }
}

/// Which partial-sum condition a determining vertex must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialRule {
    /// Every partial sum is at most the bound.
    AtMost(i64),
    /// Every partial sum is non-negative.
    NonNegative,
}

/// Smallest-labelled vertex from which every partial sum of arc weights
/// satisfies `rule`, found by scanning all rotations.
pub fn determining_vertex(c: &WeightedCycle, rule: PartialRule) -> Option<usize> {
    let len = c.weights.len();
    (0..len)
        .filter(|&start| {
            let mut s = 0;
            (0..len).all(|k| {
                s += c.weights[(start + k) % len];
                match rule {
                    PartialRule::AtMost(bound) => s <= bound,
                    PartialRule::NonNegative => s >= 0,
                }
            })
        })
        .map(|start| c.vertices[start])
        .min()
}
