//! Cost matrices: parsing, validation, neighbour ranking and the two input
//! transforms (odd-size padding and asymmetric-to-symmetric).
//!
//! Vertices are `0..n` internally. The text format and every human-facing
//! rendering use `1..=n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Errors raised while reading or transforming a cost matrix.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("expected {expected} rows of {expected} entries, {found}")]
    Dimension { expected: usize, found: String },
    #[error("matrix needs at least 2 vertices, got {0}")]
    TooSmall(usize),
    #[error("vertex count {0} is even; padding applies to odd sizes only")]
    AlreadyEven(usize),
}

/// An `n x n` integer cost matrix with a structurally excluded diagonal.
///
/// The diagonal is never stored as a number: [`CostMatrix::get`] returns
/// `None` there and [`CostMatrix::cost`] refuses to read it, so no sum can
/// pick up a fake "infinite" value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostMatrix {
    n: usize,
    cells: Vec<i64>,
}

/// One asymmetric pair reported by [`validate_symmetry`] (1-based vertices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Asymmetry {
    pub a: usize,
    pub b: usize,
    pub ab: i64,
    pub ba: i64,
}

impl CostMatrix {
    /// Builds a matrix from a closure over 0-based off-diagonal pairs.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> i64) -> Self {
        let mut cells = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    cells[a * n + b] = f(a, b);
                }
            }
        }
        Self { n, cells }
    }

    /// Builds a matrix from full rows; diagonal entries are ignored.
    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        Self::from_fn(rows.len(), |a, b| rows[a][b])
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cost of the arc `a -> b`; `a` and `b` must differ.
    #[inline]
    pub fn cost(&self, a: usize, b: usize) -> i64 {
        debug_assert!(a != b, "diagonal of a cost matrix is not a cost");
        self.cells[a * self.n + b]
    }

    /// Cost of `a -> b`, or `None` on the diagonal.
    pub fn get(&self, a: usize, b: usize) -> Option<i64> {
        (a != b).then(|| self.cells[a * self.n + b])
    }

    /// Largest off-diagonal entry.
    pub fn max_entry(&self) -> i64 {
        self.off_diagonal().max().unwrap_or(0)
    }

    /// Smallest off-diagonal entry.
    pub fn min_entry(&self) -> i64 {
        self.off_diagonal().min().unwrap_or(0)
    }

    fn off_diagonal(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.n).flat_map(move |a| {
            (0..self.n)
                .filter(move |&b| b != a)
                .map(move |b| self.cells[a * self.n + b])
        })
    }

    /// Renders the matrix in the instance file format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for a in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|b| match self.get(a, b) {
                    Some(c) => c.to_string(),
                    None => "INF".to_string(),
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses the instance format: a line holding `n`, then `n` rows of `n`
/// tokens, each an integer or `INF` (diagonal only). Lines starting with `#`
/// and blank lines are skipped.
pub fn load_matrix(text: &str) -> Result<CostMatrix, InstanceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        });
    let (first_no, first) = lines.next().ok_or(InstanceError::Parse {
        line: 1,
        column: 1,
        message: "missing vertex count".into(),
    })?;
    let n: usize = first.trim().parse().map_err(|_| InstanceError::Parse {
        line: first_no,
        column: 1,
        message: format!("vertex count {:?} is not a positive integer", first.trim()),
    })?;
    if n < 2 {
        return Err(InstanceError::TooSmall(n));
    }
    let mut cells = vec![0i64; n * n];
    let mut rows = 0usize;
    for (line_no, line) in lines {
        if rows == n {
            return Err(InstanceError::Dimension {
                expected: n,
                found: format!("extra row at line {line_no}"),
            });
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != n {
            return Err(InstanceError::Dimension {
                expected: n,
                found: format!("{} entries at line {line_no}", tokens.len()),
            });
        }
        for (col, tok) in tokens.iter().enumerate() {
            if col == rows {
                if !tok.eq_ignore_ascii_case("INF") && tok.parse::<i64>().is_err() {
                    return Err(InstanceError::Parse {
                        line: line_no,
                        column: col + 1,
                        message: format!("diagonal token {tok:?} is neither INF nor an integer"),
                    });
                }
                continue;
            }
            if tok.eq_ignore_ascii_case("INF") {
                return Err(InstanceError::Parse {
                    line: line_no,
                    column: col + 1,
                    message: "INF is only allowed on the diagonal".into(),
                });
            }
            cells[rows * n + col] = tok.parse().map_err(|_| InstanceError::Parse {
                line: line_no,
                column: col + 1,
                message: format!("{tok:?} is not an integer"),
            })?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(InstanceError::Dimension {
            expected: n,
            found: format!("{rows} rows"),
        });
    }
    Ok(CostMatrix { n, cells })
}

/// Lists every pair `a < b` with `cost(a,b) != cost(b,a)` (1-based).
pub fn validate_symmetry(m: &CostMatrix) -> Vec<Asymmetry> {
    let mut out = Vec::new();
    for a in 0..m.n {
        for b in a + 1..m.n {
            let (ab, ba) = (m.cost(a, b), m.cost(b, a));
            if ab != ba {
                out.push(Asymmetry {
                    a: a + 1,
                    b: b + 1,
                    ab,
                    ba,
                });
            }
        }
    }
    out
}

/// Per-row ascending order of columns by cost, ties to the smaller column.
///
/// `rank(a, t)` for `t` in `0..n-1` is the `t+1`-th cheapest neighbour of `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborRank {
    n: usize,
    order: Vec<usize>,
}

impl NeighborRank {
    /// Sorts every row of `m`.
    pub fn new(m: &CostMatrix) -> Self {
        let n = m.n();
        let width = n - 1;
        let mut order = Vec::with_capacity(n * width);
        for a in 0..n {
            let mut row: Vec<usize> = (0..n).filter(|&b| b != a).collect();
            row.sort_by_key(|&b| (m.cost(a, b), b));
            order.extend(row);
        }
        Self { n, order }
    }

    /// The neighbour of `a` at 0-based position `t`.
    #[inline]
    pub fn rank(&self, a: usize, t: usize) -> usize {
        self.order[a * (self.n - 1) + t]
    }

    /// Full ranked row of `a`.
    pub fn row(&self, a: usize) -> &[usize] {
        &self.order[a * (self.n - 1)..(a + 1) * (self.n - 1)]
    }
}

/// Adds one vertex joined to every other vertex at cost `-N`, where `N` is the
/// largest entry of `m`, turning an odd instance into an even one.
pub fn pad_odd(m: &CostMatrix) -> Result<CostMatrix, InstanceError> {
    if m.n().is_multiple_of(2) {
        return Err(InstanceError::AlreadyEven(m.n()));
    }
    let big = m.max_entry();
    let n = m.n();
    Ok(CostMatrix::from_fn(n + 1, |a, b| {
        if a == n || b == n {
            -big
        } else {
            m.cost(a, b)
        }
    }))
}

/// Result of [`symmetrize_asymmetric`]: a `2n` symmetric matrix whose optimal
/// tour value equals the directed optimum plus `offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symmetrized {
    pub matrix: CostMatrix,
    pub offset: i64,
}

impl Symmetrized {
    /// Maps a tour of the `2n` matrix back to the directed tour it encodes,
    /// or `None` if the tour does not alternate copy pairs.
    pub fn directed_order(&self, tour: &[usize]) -> Option<Vec<usize>> {
        let n = self.matrix.n() / 2;
        let len = tour.len();
        let start = tour.iter().position(|&v| v < n)?;
        let fwd = tour[(start + 1) % len] == tour[start] + n;
        let mut out = Vec::with_capacity(n);
        for i in 0..len {
            let v = if fwd {
                tour[(start + i) % len]
            } else {
                tour[(start + len - i) % len]
            };
            if i % 2 == 0 {
                if v >= n {
                    return None;
                }
                out.push(v);
            } else if v != out[out.len() - 1] + n {
                return None;
            }
        }
        Some(out)
    }
}

/// Jonker-Volgenant transform of a possibly asymmetric matrix.
///
/// City `i` becomes the pair `i` (entry copy) and `n + i` (exit copy). The
/// pair edge costs `0`, the edge from exit copy `n + i` to entry copy `j`
/// costs `c(i, j) + K`, and edges inside one side cost more than any tour
/// made of pair and cross edges. `K` exceeds any spread of `n` arc costs, so
/// an optimal tour uses every pair edge; its value is the directed optimum
/// plus `n K`.
pub fn symmetrize_asymmetric(m: &CostMatrix) -> Symmetrized {
    let n = m.n();
    let (lo_c, hi_c) = (m.min_entry(), m.max_entry());
    let nn = n as i64;
    let k = nn * (hi_c - lo_c + 1) + lo_c.abs() + 1;
    let side = nn * (hi_c.abs() + k) + 1;
    let matrix = CostMatrix::from_fn(2 * n, |a, b| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        match (lo < n, hi < n) {
            (true, true) | (false, false) => side,
            _ => {
                let entry = lo;
                let exit = hi - n;
                if entry == exit {
                    0
                } else {
                    m.cost(exit, entry) + k
                }
            }
        }
    });
    Symmetrized {
        matrix,
        offset: n as i64 * k,
    }
}

/// Uniform random symmetric instance with costs in `1..=max_cost`.
pub fn random_symmetric(n: usize, max_cost: i64, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut upper = vec![0i64; n * n];
    for a in 0..n {
        for b in a + 1..n {
            upper[a * n + b] = rng.gen_range(1..=max_cost);
        }
    }
    CostMatrix::from_fn(n, |a, b| {
        if a < b {
            upper[a * n + b]
        } else {
            upper[b * n + a]
        }
    })
}

/// Uniform random matrix without any symmetry, costs in `1..=max_cost`.
pub fn random_asymmetric(n: usize, max_cost: i64, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CostMatrix::from_fn(n, |_, _| rng.gen_range(1..=max_cost))
}
