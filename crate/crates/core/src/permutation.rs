//! Permutations, derangements, perfect matchings and tours, with the
//! conversions the pipeline needs between them.
//!
//! Composition is right-to-left: `compose(p, q)(a) = p(q(a))`. Under this
//! convention `D1 = compose(D0, s)` sends `a` to `D0(s(a))`, which is the
//! update used when a cycle `s` of the reduced matrix `D0^-1 M^-` is applied.

use std::fmt;

use thiserror::Error;

use crate::instance::CostMatrix;

/// Errors raised by permutation constructors and conversions.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PermError {
    #[error("image is not a bijection on 1..={0}")]
    NotBijection(usize),
    #[error("vertex {0} is fixed; a derangement moves every point")]
    FixedPoint(usize),
    #[error("not a perfect matching: {0}")]
    NotMatching(String),
    #[error("not a tour: {0}")]
    NotTour(String),
    #[error("cycle {0} is not acceptable for this matching")]
    NotAcceptable(String),
    #[error("odd vertex count {0} has no perfect matching")]
    OddSize(usize),
    #[error("cannot parse cycle text: {0}")]
    Syntax(String),
}

/// A bijection of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    image: Vec<usize>,
}

impl Permutation {
    /// Wraps an image vector after checking it is a bijection.
    pub fn new(image: Vec<usize>) -> Result<Self, PermError> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &b in &image {
            if b >= n || seen[b] {
                return Err(PermError::NotBijection(n));
            }
            seen[b] = true;
        }
        Ok(Self { image })
    }

    /// The identity on `0..n`.
    pub fn identity(n: usize) -> Self {
        Self {
            image: (0..n).collect(),
        }
    }

    /// Builds a permutation from disjoint cycles of 0-based vertices; points
    /// not listed are fixed.
    pub fn from_cycles(n: usize, cycles: &[Vec<usize>]) -> Result<Self, PermError> {
        let mut image: Vec<usize> = (0..n).collect();
        let mut used = vec![false; n];
        for c in cycles {
            for (i, &a) in c.iter().enumerate() {
                if a >= n || used[a] {
                    return Err(PermError::NotBijection(n));
                }
                used[a] = true;
                image[a] = c[(i + 1) % c.len()];
            }
        }
        Ok(Self { image })
    }

    /// Parses canonical text such as `(1 3 7)(2 5)` with 1-based vertices.
    pub fn parse(n: usize, text: &str) -> Result<Self, PermError> {
        Self::from_cycles(n, &parse_cycles(text)?)
    }

    /// Number of points.
    pub fn n(&self) -> usize {
        self.image.len()
    }

    /// Image of `a`.
    #[inline]
    pub fn at(&self, a: usize) -> usize {
        self.image[a]
    }

    /// The image vector.
    pub fn image(&self) -> &[usize] {
        &self.image
    }

    /// True when no point is fixed.
    pub fn is_derangement(&self) -> bool {
        self.image.iter().enumerate().all(|(a, &b)| a != b)
    }

    /// Disjoint-cycle form of the moved points.
    pub fn cycles(&self) -> CycleDecomposition {
        cycle_decompose(self)
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", cycle_decompose(self))
    }
}

/// Parses `(a b c)(d e)` into 0-based cycles.
pub fn parse_cycles(text: &str) -> Result<Vec<Vec<usize>>, PermError> {
    let mut cycles = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix('(')
            .ok_or_else(|| PermError::Syntax(text.to_string()))?;
        let close = body
            .find(')')
            .ok_or_else(|| PermError::Syntax(text.to_string()))?;
        let cycle = body[..close]
            .split_whitespace()
            .map(|t| match t.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(PermError::Syntax(text.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        cycles.push(cycle);
        rest = body[close + 1..].trim_start();
    }
    Ok(cycles)
}

/// Renders one 0-based vertex cycle as `(a b c)` in 1-based labels, in the
/// order given.
pub fn cycle_text(c: &[usize]) -> String {
    let labels: Vec<String> = c.iter().map(|v| (v + 1).to_string()).collect();
    format!("({})", labels.join(" "))
}

/// Rotates a cycle so that its smallest vertex comes first.
pub fn canonical_rotation(c: &[usize]) -> Vec<usize> {
    let start = c
        .iter()
        .enumerate()
        .min_by_key(|&(_, v)| *v)
        .map_or(0, |(i, _)| i);
    c[start..].iter().chain(&c[..start]).copied().collect()
}

/// `p` after `q`: `a -> p(q(a))`.
pub fn compose(p: &Permutation, q: &Permutation) -> Permutation {
    assert_eq!(p.n(), q.n(), "composing permutations of different sizes");
    Permutation {
        image: q.image.iter().map(|&b| p.image[b]).collect(),
    }
}

/// Inverse permutation.
pub fn inverse(p: &Permutation) -> Permutation {
    let mut image = vec![0; p.n()];
    for (a, &b) in p.image.iter().enumerate() {
        image[b] = a;
    }
    Permutation { image }
}

/// Disjoint cycles of a permutation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CycleDecomposition {
    /// Each cycle starts at its smallest point; cycles sorted by that point.
    pub cycles: Vec<Vec<usize>>,
}

impl fmt::Display for CycleDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cycles {
            write!(f, "{}", cycle_text(c))?;
        }
        Ok(())
    }
}

/// Disjoint-cycle form; fixed points are omitted.
pub fn cycle_decompose(p: &Permutation) -> CycleDecomposition {
    let n = p.n();
    let mut seen = vec![false; n];
    let mut cycles = Vec::new();
    for start in 0..n {
        if seen[start] || p.at(start) == start {
            seen[start] = true;
            continue;
        }
        let mut c = Vec::new();
        let mut a = start;
        while !seen[a] {
            seen[a] = true;
            c.push(a);
            a = p.at(a);
        }
        cycles.push(c);
    }
    CycleDecomposition { cycles }
}

/// A fixed-point-free involution: `n/2` disjoint 2-cycles.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PerfectMatching {
    partner: Vec<usize>,
}

impl PerfectMatching {
    /// Validates an involution without fixed points.
    pub fn new(partner: Vec<usize>) -> Result<Self, PermError> {
        let n = partner.len();
        if n % 2 == 1 {
            return Err(PermError::OddSize(n));
        }
        for (a, &b) in partner.iter().enumerate() {
            if b >= n {
                return Err(PermError::NotMatching(format!("{} maps outside", a + 1)));
            }
            if b == a {
                return Err(PermError::NotMatching(format!("{} is unmatched", a + 1)));
            }
            if partner[b] != a {
                return Err(PermError::NotMatching(format!(
                    "{} -> {} is not symmetric",
                    a + 1,
                    b + 1
                )));
            }
        }
        Ok(Self { partner })
    }

    /// Builds a matching from its edges.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self, PermError> {
        let mut partner = vec![usize::MAX; n];
        for &(a, b) in pairs {
            if a >= n || b >= n || partner[a] != usize::MAX || partner[b] != usize::MAX {
                return Err(PermError::NotMatching("overlapping pairs".into()));
            }
            partner[a] = b;
            partner[b] = a;
        }
        if partner.contains(&usize::MAX) {
            return Err(PermError::NotMatching("some vertex is unmatched".into()));
        }
        Self::new(partner)
    }

    /// Parses canonical text with 1-based labels, e.g. `(1 3)(2 4)`.
    pub fn parse(n: usize, text: &str) -> Result<Self, PermError> {
        Self::new(Permutation::parse(n, text)?.image)
    }

    /// Reads a permutation as a matching.
    pub fn from_permutation(p: &Permutation) -> Result<Self, PermError> {
        Self::new(p.image.clone())
    }

    /// Number of points.
    pub fn n(&self) -> usize {
        self.partner.len()
    }

    /// The matched partner of `a`.
    #[inline]
    pub fn partner(&self, a: usize) -> usize {
        self.partner[a]
    }

    /// Edges `(a, b)` with `a < b`, sorted by `a`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n())
            .filter(|&a| a < self.partner[a])
            .map(|a| (a, self.partner[a]))
            .collect()
    }

    /// Index of the 2-cycle containing `a`, numbering 2-cycles by their
    /// smaller point in increasing order.
    pub fn pair_index_table(&self) -> Vec<usize> {
        let mut idx = vec![0; self.n()];
        for (k, (a, b)) in self.pairs().into_iter().enumerate() {
            idx[a] = k;
            idx[b] = k;
        }
        idx
    }

    /// The matching as an involutive permutation.
    pub fn as_permutation(&self) -> Permutation {
        Permutation {
            image: self.partner.clone(),
        }
    }
}

impl fmt::Display for PerfectMatching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_permutation())
    }
}

/// A Hamiltonian cycle given as a cyclic vertex order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Tour {
    order: Vec<usize>,
}

impl Tour {
    /// Validates that `order` lists each of `0..n` once with `n >= 3`.
    pub fn new(order: Vec<usize>) -> Result<Self, PermError> {
        let n = order.len();
        if n < 3 {
            return Err(PermError::NotTour(format!(
                "{n} vertices cannot form a tour"
            )));
        }
        let mut seen = vec![false; n];
        for &v in &order {
            if v >= n || seen[v] {
                return Err(PermError::NotTour(format!(
                    "vertex {} repeated or out of range",
                    v + 1
                )));
            }
            seen[v] = true;
        }
        Ok(Self { order })
    }

    /// Parses 1-based labels, either `[a b c]`, `(a b c)` or a bare list.
    pub fn parse(text: &str) -> Result<Self, PermError> {
        let cleaned: String = text
            .chars()
            .map(|c| {
                if c == '[' || c == ']' || c == '(' || c == ')' || c == ',' {
                    ' '
                } else {
                    c
                }
            })
            .collect();
        let order = cleaned
            .split_whitespace()
            .map(|t| match t.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(PermError::Syntax(text.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(order)
    }

    /// Builds a tour from a single-cycle permutation.
    pub fn from_permutation(p: &Permutation) -> Result<Self, PermError> {
        let cycles = cycle_decompose(p).cycles;
        if cycles.len() != 1 || cycles[0].len() != p.n() {
            return Err(PermError::NotTour(format!("{p} is not a single n-cycle")));
        }
        Self::new(cycles.into_iter().next().unwrap_or_default())
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Vertex order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Successor map `order[i] -> order[i+1]`.
    pub fn as_permutation(&self) -> Permutation {
        let n = self.n();
        let mut image = vec![0; n];
        for i in 0..n {
            image[self.order[i]] = self.order[(i + 1) % n];
        }
        Permutation { image }
    }

    /// Consecutive vertex pairs, closing edge last.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        (0..n).map(move |i| (self.order[i], self.order[(i + 1) % n]))
    }

    /// Orientation- and rotation-free form: starts at the smallest vertex and
    /// walks towards its smaller neighbour.
    pub fn canonical(&self) -> Vec<usize> {
        let n = self.n();
        let r = canonical_rotation(&self.order);
        if r[1] <= r[n - 1] {
            r
        } else {
            std::iter::once(r[0])
                .chain(r[1..].iter().rev().copied())
                .collect()
        }
    }

    /// True when both tours use the same undirected edges.
    pub fn same_cycle(&self, other: &Tour) -> bool {
        self.canonical() == other.canonical()
    }

    /// 1-based labels in tour order.
    pub fn labels(&self) -> Vec<usize> {
        self.order.iter().map(|v| v + 1).collect()
    }
}

impl fmt::Display for Tour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.order.iter().map(|v| (v + 1).to_string()).collect();
        write!(f, "[{}]", labels.join(" "))
    }
}

/// Sum of the tour's edge costs.
pub fn tour_value(t: &Tour, m: &CostMatrix) -> i64 {
    t.edges().map(|(a, b)| m.cost(a, b)).sum()
}

/// Sum of the matching's edge costs, each edge once.
pub fn pm_value(pm: &PerfectMatching, m: &CostMatrix) -> i64 {
    pm.pairs().into_iter().map(|(a, b)| m.cost(a, b)).sum()
}

/// Sum of `cost(a, d(a))` over all points.
pub fn derangement_value(d: &Permutation, m: &CostMatrix) -> i64 {
    (0..d.n()).map(|a| m.cost(a, d.at(a))).sum()
}

/// Splits a tour into its two alternating edge sets and returns the cheaper
/// one as a matching (ties: the set holding the tour's first edge).
///
/// The returned value is the matching read as a permutation, i.e.
/// `sum over a of cost(a, sigma(a))` = twice [`pm_value`]; this is the
/// quantity compared against tour values in the sieve bound.
pub fn pm_from_tour(t: &Tour, m: &CostMatrix) -> Result<(PerfectMatching, i64), PermError> {
    let n = t.n();
    if n % 2 == 1 {
        return Err(PermError::OddSize(n));
    }
    let edges: Vec<(usize, usize)> = t.edges().collect();
    let first: Vec<(usize, usize)> = edges.iter().step_by(2).copied().collect();
    let second: Vec<(usize, usize)> = edges.iter().skip(1).step_by(2).copied().collect();
    let sum = |es: &[(usize, usize)]| es.iter().map(|&(a, b)| m.cost(a, b)).sum::<i64>();
    let chosen = if sum(&first) <= sum(&second) {
        first
    } else {
        second
    };
    let pm = PerfectMatching::from_pairs(n, &chosen)?;
    let value = 2 * pm_value(&pm, m);
    Ok((pm, value))
}

/// Checks that no two points of `c` share a 2-cycle of `pm` and that `c` has
/// at least two distinct points.
pub fn is_acceptable(pm: &PerfectMatching, c: &[usize]) -> bool {
    if c.len() < 2 {
        return false;
    }
    let mut seen = vec![false; pm.n()];
    for &a in c {
        let key = a.min(pm.partner(a));
        if seen[key] {
            return false;
        }
        seen[key] = true;
    }
    true
}

/// Applies an acceptable cycle `(a1 .. am)` of `sigma^-1 M^-`: the 2-cycles
/// touching the cycle are replaced by the edges `{a_i, sigma(a_{i+1})}`.
pub fn apply_acceptable_cycle(
    pm: &PerfectMatching,
    c: &[usize],
) -> Result<PerfectMatching, PermError> {
    if !is_acceptable(pm, c) {
        return Err(PermError::NotAcceptable(cycle_text(c)));
    }
    let mut partner = pm.partner.clone();
    let m = c.len();
    for i in 0..m {
        let a = c[i];
        let b = pm.partner(c[(i + 1) % m]);
        partner[a] = b;
        partner[b] = a;
    }
    PerfectMatching::new(partner)
}

/// Interleaves an acceptable cycle holding one point of every 2-cycle with
/// the matched partners: `(a1 sigma(a2) a2 sigma(a3) .. am sigma(a1))`.
pub fn tour_from_full_cycle(pm: &PerfectMatching, c: &[usize]) -> Result<Tour, PermError> {
    if !is_acceptable(pm, c) {
        return Err(PermError::NotAcceptable(cycle_text(c)));
    }
    if 2 * c.len() != pm.n() {
        return Err(PermError::NotTour(format!(
            "cycle has {} points, a tour needs {}",
            c.len(),
            pm.n() / 2
        )));
    }
    let m = c.len();
    let mut order = Vec::with_capacity(2 * m);
    for i in 0..m {
        order.push(c[i]);
        order.push(pm.partner(c[(i + 1) % m]));
    }
    Tour::new(order)
}
