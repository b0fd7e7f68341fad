//! Modified Floyd-Warshall search for admissible paths and cycles of a
//! reduced matrix.
//!
//! Each cell `(i, k)` keeps explicit paths, one shadow table per path class,
//! so a pivot `j` can join any stored `(i, j)` path with any stored `(j, k)`
//! path and reclassify the concatenation. A join with `i == k` closes a cycle,
//! which is recorded when it classifies and stays within the value bound.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::instance::CostMatrix;
use crate::patcher::EdgeCircuit;
use crate::permutation::derangement_value;
use crate::permutation::{canonical_rotation, compose, cycle_text, PerfectMatching, Permutation};
use crate::reduced::{
    build_reduced, cycle_value, determining_vertex, PartialRule, ReducedMatrix, WeightedCycle,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FwError {
    #[error("cycle {0} is acceptable and has a single circuit")]
    NotTwoCircuit(String),
    #[error("cycle {0} does not split into two simple circuits")]
    BadSplit(String),
}

/// Admissibility class of a path or cycle with respect to a perfect matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleClass {
    /// Every point lies in a different 2-cycle.
    Acceptable,
    /// Exactly one 2-cycle contributes both of its points.
    Unlinked,
    /// Exactly two 2-cycles contribute both points, interlaced along the path.
    Linked,
}

impl CycleClass {
    pub const ALL: [CycleClass; 3] = [
        CycleClass::Acceptable,
        CycleClass::Unlinked,
        CycleClass::Linked,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Number of 2-cycles contributing both points.
    pub fn doubled(self) -> usize {
        self as usize
    }
}

/// Stamp-based scratch marks, reset in O(1).
#[derive(Debug, Clone)]
struct Marks {
    stamp: Vec<u32>,
    value: Vec<usize>,
    gen: u32,
}

impl Marks {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            value: vec![0; n],
            gen: 0,
        }
    }

    fn reset(&mut self) {
        self.gen = self.gen.wrapping_add(1);
        if self.gen == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.gen = 1;
        }
    }

    fn get(&self, i: usize) -> Option<usize> {
        (self.stamp[i] == self.gen).then(|| self.value[i])
    }

    fn set(&mut self, i: usize, v: usize) {
        self.stamp[i] = self.gen;
        self.value[i] = v;
    }
}

/// What makes a vertex sequence admissible.
#[derive(Debug, Clone)]
pub enum PathRules {
    /// Paths over a perfect matching, classified as acceptable, unlinked or
    /// (when enabled) linked.
    Matching {
        partner: Vec<usize>,
        pair: Vec<usize>,
        linked: bool,
    },
    /// Simple paths over a derangement whose new arcs never reverse each
    /// other, so applying the cycle cannot create a 2-cycle from them.
    Derangement { image: Vec<usize> },
}

impl PathRules {
    pub fn matching(sigma: &PerfectMatching, linked: bool) -> Self {
        PathRules::Matching {
            partner: (0..sigma.n()).map(|a| sigma.partner(a)).collect(),
            pair: sigma.pair_index_table(),
            linked,
        }
    }

    pub fn derangement(d: &Permutation) -> Self {
        PathRules::Derangement {
            image: d.image().to_vec(),
        }
    }

    fn n(&self) -> usize {
        match self {
            PathRules::Matching { pair, .. } => pair.len(),
            PathRules::Derangement { image } => image.len(),
        }
    }
}

/// Per-search scratch space.
struct Checker {
    vertices: Marks,
    groups: Marks,
}

impl Checker {
    fn new(n: usize) -> Self {
        Self {
            vertices: Marks::new(n),
            groups: Marks::new(n),
        }
    }

    /// Class of a path, or `None` when it is not admissible. With `closed`
    /// the sequence is read as a cycle (closing arc included).
    fn check(&mut self, rules: &PathRules, seq: &[usize], closed: bool) -> Option<CycleClass> {
        self.vertices.reset();
        self.groups.reset();
        match rules {
            PathRules::Matching {
                pair,
                linked,
                partner,
            } => {
                let mut doubled = [(0usize, 0usize); 2];
                let mut nd = 0;
                for (pos, &v) in seq.iter().enumerate() {
                    if self.vertices.get(v).is_some() {
                        return None;
                    }
                    self.vertices.set(v, pos);
                    match self.groups.get(pair[v]) {
                        Some(first) => {
                            if nd == 2 {
                                return None;
                            }
                            doubled[nd] = (first, pos);
                            nd += 1;
                        }
                        None => self.groups.set(pair[v], pos),
                    }
                }
                let class = match nd {
                    0 => CycleClass::Acceptable,
                    1 => CycleClass::Unlinked,
                    _ if *linked && interlaced(doubled[0], doubled[1]) => CycleClass::Linked,
                    _ => return None,
                };
                if closed
                    && class != CycleClass::Acceptable
                    && split_alternating(seq, partner).is_none()
                {
                    return None;
                }
                Some(class)
            }
            PathRules::Derangement { image } => {
                // groups holds, for each tail a, the head image[next] of its new arc
                let arcs = if closed { seq.len() } else { seq.len() - 1 };
                for &v in seq {
                    if self.vertices.get(v).is_some() {
                        return None;
                    }
                    self.vertices.set(v, 0);
                }
                for i in 0..arcs {
                    let a = seq[i];
                    let h = image[seq[(i + 1) % seq.len()]];
                    self.groups.set(a, h);
                }
                for i in 0..arcs {
                    let a = seq[i];
                    let h = image[seq[(i + 1) % seq.len()]];
                    if self.groups.get(h) == Some(a) {
                        return None;
                    }
                }
                Some(CycleClass::Acceptable)
            }
        }
    }
}

fn interlaced(x: (usize, usize), y: (usize, usize)) -> bool {
    let inside = |p: usize| x.0 < p && p < x.1;
    inside(y.0) != inside(y.1)
}

/// Class of `path` extended by `next` over `sigma`, or `None` to reject.
/// When `next` is the first vertex the path closes and the cycle is
/// classified; linked cycles are accepted.
pub fn classify_extension(
    path: &[usize],
    next: usize,
    sigma: &PerfectMatching,
) -> Option<CycleClass> {
    let rules = PathRules::matching(sigma, true);
    let mut checker = Checker::new(sigma.n());
    if path.first() == Some(&next) {
        checker.check(&rules, path, true)
    } else {
        let mut seq = path.to_vec();
        seq.push(next);
        checker.check(&rules, &seq, false)
    }
}

/// Class of a closed cycle over `sigma` (linked allowed), or `None`.
pub fn classify_cycle(c: &[usize], sigma: &PerfectMatching) -> Option<CycleClass> {
    if c.len() < 2 {
        return None;
    }
    Checker::new(sigma.n()).check(&PathRules::matching(sigma, true), c, true)
}

/// The closed walk `[a1, s(a2), a2, s(a3), .., am, s(a1)]` alternating new
/// edges `{a_i, s(a_{i+1})}` with matching edges.
pub fn alternating_sequence(c: &[usize], partner: &[usize]) -> Vec<usize> {
    let m = c.len();
    (0..m)
        .flat_map(|i| [c[i], partner[c[(i + 1) % m]]])
        .collect()
}

/// Cuts the alternating walk of a cycle into simple circuits.
///
/// Without a doubled 2-cycle the walk is one circuit. Otherwise let `x` be
/// the first point (in cycle order) whose partner `x'` is also on the cycle;
/// the matching edge `{x, x'}` appears twice in the walk and both copies are
/// removed, leaving the circuit from `x` up to the slot holding `x` and the
/// circuit from `x'` up to the slot holding `x'`. Returns `None` when a
/// circuit would repeat a vertex or have fewer than three vertices.
pub fn split_alternating(c: &[usize], partner: &[usize]) -> Option<Vec<Vec<usize>>> {
    let m = c.len();
    let s = alternating_sequence(c, partner);
    let mut pos = vec![usize::MAX; partner.len()];
    for (i, &a) in c.iter().enumerate() {
        pos[a] = i;
    }
    let first = c.iter().position(|&a| pos[partner[a]] != usize::MAX);
    let circuits = match first {
        None => vec![s],
        Some(ix) => {
            let iy = pos[partner[c[ix]]];
            let len = 2 * m;
            // slot before point a_j holds partner(a_j)
            let take = |from: usize, to: usize| -> Vec<usize> {
                let count = (to + len - from) % len;
                (0..count).map(|k| s[(from + k) % len]).collect()
            };
            let x_slot = (2 * iy + len - 1) % len;
            let y_slot = (2 * ix + len - 1) % len;
            vec![take(2 * ix, x_slot), take(2 * iy, y_slot)]
        }
    };
    for circ in &circuits {
        if circ.len() < 3 {
            return None;
        }
        let mut seen = HashSet::with_capacity(circ.len());
        if !circ.iter().all(|v| seen.insert(*v)) {
            return None;
        }
    }
    Some(circuits)
}

/// A 2-cycle of the matching touched by a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CoveredPair {
    /// Index of the 2-cycle (ordered by smaller point).
    pub pair: usize,
    /// True when the cycle holds exactly one of its points.
    pub linking: bool,
}

/// A harvested cycle of the reduced matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleRecord {
    /// Canonical rotation: smallest vertex first.
    pub vertices: Vec<usize>,
    pub class: CycleClass,
    pub value: i64,
    /// Value of the arc leaving each vertex, aligned with `vertices`.
    pub arcs: Vec<i64>,
    /// Touched 2-cycles sorted by index.
    pub covered: Vec<CoveredPair>,
    pub determining_vertex: Option<usize>,
}

impl CycleRecord {
    /// Builds a record, checking the class against `sigma`.
    pub fn new(
        r: &ReducedMatrix,
        sigma: &PerfectMatching,
        c: &[usize],
        bound: i64,
    ) -> Option<Self> {
        let class = classify_cycle(c, sigma)?;
        let vertices = canonical_rotation(c);
        let weighted = WeightedCycle::from_reduced(r, &vertices).ok()?;
        let value = weighted.total();
        let pair = sigma.pair_index_table();
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &v in &vertices {
            match counts.iter_mut().find(|(p, _)| *p == pair[v]) {
                Some(e) => e.1 += 1,
                None => counts.push((pair[v], 1)),
            }
        }
        counts.sort_unstable();
        let covered = counts
            .into_iter()
            .map(|(pair, k)| CoveredPair {
                pair,
                linking: k == 1,
            })
            .collect();
        Some(Self {
            determining_vertex: determining_vertex(
                &weighted,
                PartialRule::AtMost(bound.max(value)),
            ),
            arcs: weighted.weights.clone(),
            vertices,
            class,
            value,
            covered,
        })
    }

    /// Points moved by the cycle.
    pub fn points(&self) -> usize {
        self.vertices.len()
    }

    /// Linking points: `p`, `p - 2` or `p - 4` by class.
    pub fn linking_points(&self) -> usize {
        self.covered.iter().filter(|c| c.linking).count()
    }

    /// 1-based text form.
    pub fn text(&self) -> String {
        cycle_text(&self.vertices)
    }
}

/// The companion `(s(a2) s(a1) s(am) .. s(a3))` of a cycle: it yields the
/// same circuits traversed the other way.
pub fn companion(c: &[usize], sigma: &PerfectMatching) -> Vec<usize> {
    let m = c.len();
    (0..m).map(|k| sigma.partner(c[(1 + m - k) % m])).collect()
}

/// Edge circuits of a cycle, each valued by the arcs whose new edges it
/// holds. One circuit for an acceptable cycle, two otherwise.
pub fn cycle_circuits(
    c: &CycleRecord,
    sigma: &PerfectMatching,
) -> Result<Vec<EdgeCircuit>, FwError> {
    let partner: Vec<usize> = (0..sigma.n()).map(|a| sigma.partner(a)).collect();
    let parts =
        split_alternating(&c.vertices, &partner).ok_or_else(|| FwError::BadSplit(c.text()))?;
    parts
        .into_iter()
        .map(|circ| {
            // circuits start on a point, so points sit at even offsets
            let value = circ
                .iter()
                .step_by(2)
                .map(|v| {
                    let i = c
                        .vertices
                        .iter()
                        .position(|x| x == v)
                        .expect("point of the cycle");
                    c.arcs[i]
                })
                .sum();
            EdgeCircuit::new(circ, value).map_err(|_| FwError::BadSplit(c.text()))
        })
        .collect()
}

/// Splits a 2-circuit cycle into its two edge circuits. For a linked cycle
/// the second doubled 2-cycle's edge lies on both circuits.
pub fn split_two_circuit(
    c: &CycleRecord,
    sigma: &PerfectMatching,
) -> Result<(EdgeCircuit, EdgeCircuit), FwError> {
    if c.class == CycleClass::Acceptable {
        return Err(FwError::NotTwoCircuit(c.text()));
    }
    let mut parts = cycle_circuits(c, sigma)?;
    match (parts.pop(), parts.pop()) {
        (Some(two), Some(one)) if parts.is_empty() => Ok((one, two)),
        _ => Err(FwError::BadSplit(c.text())),
    }
}

/// A stored path of a cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredPath {
    pub vertices: Vec<usize>,
    pub value: i64,
    pub class: CycleClass,
    /// Pivot that produced the path; `None` for a direct arc.
    pub via: Option<usize>,
}

/// Path tables: for each class and cell `(i, k)` the best `keep` paths.
#[derive(Debug, Clone)]
pub struct PathTable {
    n: usize,
    keep: [usize; 3],
    cells: Vec<Vec<StoredPath>>,
}

impl PathTable {
    pub fn new(n: usize, keep: usize) -> Self {
        Self::with_keep(n, [keep; 3])
    }

    /// Per-class capacities, indexed like [`CycleClass::ALL`].
    pub fn with_keep(n: usize, keep: [usize; 3]) -> Self {
        Self {
            n,
            keep: keep.map(|k| k.max(1)),
            cells: vec![Vec::new(); 3 * n * n],
        }
    }

    fn idx(&self, class: CycleClass, i: usize, k: usize) -> usize {
        (class.index() * self.n + i) * self.n + k
    }

    /// Stored paths of one class in cell `(i, k)`, best first.
    pub fn paths(&self, class: CycleClass, i: usize, k: usize) -> &[StoredPath] {
        &self.cells[self.idx(class, i, k)]
    }

    /// Best stored path of any class (ties: weaker class first).
    pub fn best(&self, i: usize, k: usize) -> Option<&StoredPath> {
        CycleClass::ALL
            .iter()
            .filter_map(|&c| self.paths(c, i, k).first())
            .min_by_key(|p| (p.value, p.class))
    }

    pub fn value(&self, i: usize, k: usize) -> Option<i64> {
        self.best(i, k).map(|p| p.value)
    }

    pub fn via(&self, i: usize, k: usize) -> Option<usize> {
        self.best(i, k).and_then(|p| p.via)
    }

    pub fn class(&self, i: usize, k: usize) -> Option<CycleClass> {
        self.best(i, k).map(|p| p.class)
    }

    /// All stored paths.
    pub fn iter(&self) -> impl Iterator<Item = &StoredPath> {
        self.cells.iter().flatten()
    }

    /// Offers a path to its cell; adopted only if strictly better than the
    /// worst kept path (or the cell has room) and not already stored.
    pub fn offer(&mut self, path: StoredPath) -> bool {
        let (i, k) = (path.vertices[0], *path.vertices.last().unwrap_or(&0));
        let idx = self.idx(path.class, i, k);
        let keep = self.keep[path.class.index()];
        let cell = &mut self.cells[idx];
        if cell.len() == keep && cell.last().is_some_and(|w| w.value <= path.value) {
            return false;
        }
        if cell.iter().any(|p| p.vertices == path.vertices) {
            return false;
        }
        let at = cell.partition_point(|p| p.value <= path.value);
        cell.insert(at, path);
        cell.truncate(keep);
        true
    }

    /// Keeps only the best cell of each row in one class table.
    fn preselect_rows(&mut self, class: CycleClass) {
        for i in 0..self.n {
            let best = (0..self.n)
                .filter_map(|k| self.paths(class, i, k).first().map(|p| (p.value, k)))
                .min();
            for k in 0..self.n {
                if Some(k) != best.map(|b| b.1) {
                    let idx = self.idx(class, i, k);
                    self.cells[idx].clear();
                } else {
                    let idx = self.idx(class, i, k);
                    self.cells[idx].truncate(1);
                }
            }
        }
    }
}

/// Settings of a path search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HarvestConfig {
    /// Maximum number of full pivot sweeps.
    pub passes: usize,
    /// Search linked 2-circuit paths as well.
    pub linked: bool,
    /// Acceptable paths kept per cell.
    pub keep: usize,
    /// 2-circuit paths kept per cell and class; above 1 is the deep mode.
    pub keep_two_circuit: usize,
    /// Keep only each row's best unlinked path after every sweep.
    pub row_preselect: bool,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            passes: 8,
            linked: true,
            keep: 1,
            keep_two_circuit: 2,
            row_preselect: false,
        }
    }
}

impl HarvestConfig {
    fn capacities(&self) -> [usize; 3] {
        [self.keep, self.keep_two_circuit, self.keep_two_circuit]
    }
}

/// Fills the table with the admissible single arcs of value at most `bound`.
pub fn init_table(r: &ReducedMatrix, rules: &PathRules, bound: i64, keep: [usize; 3]) -> PathTable {
    let n = r.n();
    let mut table = PathTable::with_keep(n, keep);
    let mut checker = Checker::new(rules.n());
    for i in 0..n {
        for k in 0..n {
            if let Some(v) = r.arc(i, k) {
                if v > bound {
                    continue;
                }
                if let Some(class) = checker.check(rules, &[i, k], false) {
                    table.offer(StoredPath {
                        vertices: vec![i, k],
                        value: v,
                        class,
                        via: None,
                    });
                }
            }
        }
    }
    table
}

/// A closed cycle produced by a pivot join.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedCycle {
    pub vertices: Vec<usize>,
    pub value: i64,
    pub class: CycleClass,
}

/// One triangle operation for pivot `j`: every stored `(i, j)` path is joined
/// with every stored `(j, k)` path. Joins within `bound` that classify are
/// offered to cell `(i, k)`; joins with `i == k`, and admissible joins closed
/// by the arc `(k, i)`, are returned as cycles.
/// Returns whether any cell changed.
pub fn triangle_update(
    table: &mut PathTable,
    r: &ReducedMatrix,
    rules: &PathRules,
    j: usize,
    bound: i64,
    cycles: &mut Vec<ClosedCycle>,
) -> bool {
    let n = table.n;
    let mut checker = Checker::new(rules.n());
    let mut changed = false;
    // raw arcs at the pivot stay joinable even when a better path displaced
    // them from their cell
    let arc = |a: usize, b: usize| {
        r.arc(a, b).filter(|&v| v <= bound).map(|value| StoredPath {
            vertices: vec![a, b],
            value,
            class: CycleClass::Acceptable,
            via: None,
        })
    };
    let mut outgoing: Vec<StoredPath> = Vec::new();
    for k in (0..n).filter(|&k| k != j) {
        for &c in CycleClass::ALL.iter() {
            outgoing.extend_from_slice(table.paths(c, j, k));
        }
        if let Some(p) =
            arc(j, k).filter(|p| !table.paths(CycleClass::Acceptable, j, k).contains(p))
        {
            outgoing.push(p);
        }
    }
    let mut seq = Vec::with_capacity(n + 1);
    for i in (0..n).filter(|&i| i != j) {
        let mut incoming: Vec<StoredPath> = CycleClass::ALL
            .iter()
            .flat_map(|&c| table.paths(c, i, j).to_vec())
            .collect();
        if let Some(p) = arc(i, j).filter(|p| !incoming.contains(p)) {
            incoming.push(p);
        }
        for p1 in &incoming {
            for p2 in &outgoing {
                let value = p1.value + p2.value;
                if value > bound {
                    continue;
                }
                let k = *p2.vertices.last().unwrap_or(&j);
                seq.clear();
                seq.extend_from_slice(&p1.vertices);
                if k == i {
                    seq.extend_from_slice(&p2.vertices[1..p2.vertices.len() - 1]);
                    if let Some(class) = checker.check(rules, &seq, true) {
                        cycles.push(ClosedCycle {
                            vertices: seq.clone(),
                            value,
                            class,
                        });
                    }
                } else {
                    seq.extend_from_slice(&p2.vertices[1..]);
                    if let Some(class) = checker.check(rules, &seq, false) {
                        if let Some(back) =
                            r.arc(k, i).filter(|&b| value.saturating_add(b) <= bound)
                        {
                            if let Some(class) = checker.check(rules, &seq, true) {
                                cycles.push(ClosedCycle {
                                    vertices: seq.clone(),
                                    value: value + back,
                                    class,
                                });
                            }
                        }
                        changed |= table.offer(StoredPath {
                            vertices: seq.clone(),
                            value,
                            class,
                            via: Some(j),
                        });
                    }
                }
            }
        }
    }
    changed
}

/// Statistics of one search.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HarvestStats {
    pub passes_run: usize,
    pub cycles_found: usize,
    /// Cycles whose companion was also recorded.
    pub companion_pairs: usize,
    pub stored_paths: usize,
}

/// Runs sweeps until `passes` are done or a sweep changes nothing, feeding
/// every closed cycle to `sink`. Returns the final table and sweep count.
fn run_search(
    r: &ReducedMatrix,
    rules: &PathRules,
    bound: i64,
    cfg: &HarvestConfig,
    mut sink: impl FnMut(ClosedCycle) -> bool,
) -> (PathTable, usize) {
    let mut table = init_table(r, rules, bound, cfg.capacities());
    let mut passes_run = 0;
    let mut buf = Vec::new();
    for _ in 0..cfg.passes {
        passes_run += 1;
        let mut changed = false;
        for j in 0..r.n() {
            changed |= triangle_update(&mut table, r, rules, j, bound, &mut buf);
            for c in buf.drain(..) {
                changed |= sink(c);
            }
        }
        if cfg.row_preselect {
            table.preselect_rows(CycleClass::Unlinked);
        }
        if !changed {
            break;
        }
    }
    (table, passes_run)
}

/// Harvests acceptable and 2-circuit cycles of `sigma^-1 M^-` with value at
/// most `bound`, in discovery order. Rotations are deduplicated; a cycle and
/// its companion describe the same exchange and may both appear.
pub fn harvest_cycles(
    r: &ReducedMatrix,
    sigma: &PerfectMatching,
    bound: i64,
    cfg: &HarvestConfig,
) -> (Vec<CycleRecord>, HarvestStats) {
    let rules = PathRules::matching(sigma, cfg.linked);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut records = Vec::new();
    let mut stats = HarvestStats::default();
    let (table, passes) = run_search(r, &rules, bound, cfg, |c| {
        let canon = canonical_rotation(&c.vertices);
        if seen.contains(&canon) {
            return false;
        }
        let comp = canonical_rotation(&companion(&canon, sigma));
        seen.insert(canon.clone());
        if comp != canon && seen.contains(&comp) {
            stats.companion_pairs += 1;
        }
        match CycleRecord::new(r, sigma, &canon, bound) {
            Some(rec) => {
                debug_assert_eq!(rec.value, c.value);
                records.push(rec);
                true
            }
            None => false,
        }
    });
    stats.passes_run = passes;
    stats.cycles_found = records.len();
    stats.stored_paths = table.iter().count();
    (records, stats)
}

/// Negative cycles of `d^-1 M^-` with symmetric arcs removed, most negative
/// first (ties: canonical form).
pub fn negative_cycles(r: &ReducedMatrix, cfg: &HarvestConfig) -> Vec<(Vec<usize>, i64)> {
    let rules = PathRules::derangement(r.perm());
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut found = Vec::new();
    run_search(r, &rules, -1, cfg, |c| {
        let canon = canonical_rotation(&c.vertices);
        if seen.insert(canon.clone()) {
            found.push((canon, c.value));
            true
        } else {
            false
        }
    });
    found.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    found
}

/// One applied improvement of the second phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Phase2Step {
    pub cycle: Vec<usize>,
    pub value: i64,
    pub derangement_value: i64,
}

/// Repeatedly applies the most negative admissible cycle of the reduced
/// matrix with symmetric arcs removed, until none is found.
pub fn phase2_improve(
    d: &Permutation,
    m: &CostMatrix,
    cfg: &HarvestConfig,
) -> (Permutation, Vec<Phase2Step>) {
    let mut current = d.clone();
    let mut steps = Vec::new();
    let mut value = derangement_value(&current, m);
    while let Ok(r) = build_reduced(m, &current) {
        let r = r.with_symmetric_forbidden();
        let Some((cycle, cv)) = negative_cycles(&r, cfg).into_iter().next() else {
            break;
        };
        debug_assert_eq!(cycle_value(&r, &cycle).ok(), Some(cv));
        let s =
            Permutation::from_cycles(m.n(), std::slice::from_ref(&cycle)).expect("simple cycle");
        let next = compose(&current, &s);
        let next_value = derangement_value(&next, m);
        if !next.is_derangement() || next_value >= value {
            break;
        }
        current = next;
        value = next_value;
        steps.push(Phase2Step {
            cycle,
            value: cv,
            derangement_value: value,
        });
    }
    (current, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::random_symmetric;
    use crate::oracle::{enumerate_cycles, enumerate_simple_paths};
    use crate::permutation::apply_acceptable_cycle;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pm(n: usize, text: &str) -> PerfectMatching {
        PerfectMatching::parse(n, text).unwrap()
    }

    fn random_pm(n: usize, rng: &mut ChaCha8Rng) -> PerfectMatching {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        let pairs: Vec<(usize, usize)> = v.chunks(2).map(|c| (c[0], c[1])).collect();
        PerfectMatching::from_pairs(n, &pairs).unwrap()
    }

    #[test]
    fn extension_classes() {
        let s = pm(4, "(1 2)(3 4)");
        assert_eq!(
            classify_extension(&[0, 2], 1, &s),
            Some(CycleClass::Unlinked)
        );
        assert_eq!(
            classify_extension(&[0], 2, &s),
            Some(CycleClass::Acceptable)
        );
        assert_eq!(classify_extension(&[0, 2], 2, &s), None);
        let s = pm(8, "(1 2)(3 4)(5 6)(7 8)");
        // a b a' b' interlaces, a a' b b' does not
        assert_eq!(
            classify_extension(&[0, 2, 4, 1], 3, &s),
            Some(CycleClass::Linked)
        );
        assert_eq!(classify_extension(&[0, 4, 1, 2], 3, &s), None);
        assert_eq!(
            classify_extension(&[0, 2, 1, 3], 4, &s),
            Some(CycleClass::Linked)
        );
        assert_eq!(classify_extension(&[0, 2, 1, 3, 4], 5, &s), None);
    }

    #[test]
    fn cycle_level_interlace_matches_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let n = 2 * rng.gen_range(3..=6);
            let s = random_pm(n, &mut rng);
            let len = rng.gen_range(2..=n);
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(&mut rng);
            let c = &v[..len];
            let adjacent_pair = (0..len).any(|i| s.partner(c[i]) == c[(i + 1) % len]);
            if adjacent_pair {
                continue;
            }
            let class = classify_cycle(c, &s);
            let partner: Vec<usize> = (0..n).map(|a| s.partner(a)).collect();
            let split = split_alternating(c, &partner);
            match class {
                Some(CycleClass::Acceptable) => assert_eq!(split.map(|p| p.len()), Some(1)),
                Some(_) => {
                    let parts = split.unwrap();
                    assert_eq!(parts.len(), 2);
                    let k = class.unwrap().doubled();
                    assert_eq!(parts[0].len() + parts[1].len(), 2 * len - 2);
                    assert!(parts[0].len() % 2 == 1 && parts[1].len() % 2 == 1);
                    let _ = k;
                }
                None => {}
            }
        }
    }

    #[test]
    fn companion_has_same_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..20 {
            let m = random_symmetric(8, 40, seed);
            let s = random_pm(8, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            for (c, class, value) in enumerate_cycles(&r, &s, i64::MAX) {
                let comp = companion(&c, &s);
                assert_eq!(classify_cycle(&comp, &s), Some(class));
                assert_eq!(cycle_value(&r, &comp).unwrap(), value);
                if class == CycleClass::Acceptable {
                    assert_eq!(
                        apply_acceptable_cycle(&s, &comp).unwrap(),
                        apply_acceptable_cycle(&s, &c).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn example_two_chain() {
        // vertices 1, 3, 7, 10 lie in distinct 2-cycles
        let s = pm(10, "(1 2)(3 4)(5 6)(7 8)(9 10)");
        let rules = PathRules::matching(&s, true);
        let mut t = PathTable::new(10, 1);
        let arc = |a: usize, b: usize, v: i64| StoredPath {
            vertices: vec![a - 1, b - 1],
            value: v,
            class: CycleClass::Acceptable,
            via: None,
        };
        t.offer(arc(1, 3, 5));
        t.offer(arc(3, 7, -2));
        t.offer(arc(1, 7, 25));
        t.offer(arc(7, 10, -5));
        t.offer(arc(1, 10, 7));
        // raw arcs too expensive to join
        let r = build_reduced(
            &CostMatrix::from_fn(10, |a, b| if s.partner(a) == b { 0 } else { 100 }),
            &s.as_permutation(),
        )
        .unwrap();
        let mut cycles = Vec::new();
        triangle_update(&mut t, &r, &rules, 2, 50, &mut cycles);
        assert_eq!(t.value(0, 6), Some(3));
        assert_eq!(t.via(0, 6), Some(2));
        triangle_update(&mut t, &r, &rules, 6, 50, &mut cycles);
        assert_eq!(t.value(0, 9), Some(-2));
        assert_eq!(t.best(0, 9).unwrap().vertices, vec![0, 2, 6, 9]);
    }

    #[test]
    fn pivot_on_isolated_vertex_changes_nothing() {
        let s = pm(4, "(1 2)(3 4)");
        let rules = PathRules::matching(&s, true);
        let mut t = PathTable::new(4, 1);
        t.offer(StoredPath {
            vertices: vec![0, 2],
            value: 1,
            class: CycleClass::Acceptable,
            via: None,
        });
        let before = t.clone();
        let r = build_reduced(
            &CostMatrix::from_fn(4, |a, b| if s.partner(a) == b { 0 } else { 100 }),
            &s.as_permutation(),
        )
        .unwrap();
        let mut cycles = Vec::new();
        assert!(!triangle_update(&mut t, &r, &rules, 3, 50, &mut cycles));
        assert_eq!(t.iter().count(), before.iter().count());
    }

    #[test]
    fn stored_paths_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..10 {
            let m = random_symmetric(10, 50, seed);
            let s = random_pm(10, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let rules = PathRules::matching(&s, true);
            let mut table = init_table(&r, &rules, 30, [2; 3]);
            let mut cycles = Vec::new();
            for _ in 0..3 {
                for j in 0..10 {
                    triangle_update(&mut table, &r, &rules, j, 30, &mut cycles);
                    for p in table.iter() {
                        assert_eq!(r.path_value(&p.vertices).unwrap(), p.value);
                        assert_eq!(classify_path(&p.vertices, &s), Some(p.class));
                    }
                }
            }
            for c in &cycles {
                assert_eq!(cycle_value(&r, &c.vertices).unwrap(), c.value);
                assert_eq!(classify_cycle(&c.vertices, &s), Some(c.class));
            }
        }
    }

    fn classify_path(p: &[usize], s: &PerfectMatching) -> Option<CycleClass> {
        Checker::new(s.n()).check(&PathRules::matching(s, true), p, false)
    }

    /// Optimal cells found with `keep` paths per cell; asserts soundness and
    /// that every reachable cell is reached.
    fn exact_cells(keep: usize) -> (usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cells = 0;
        let mut exact = 0;
        for seed in 0..20 {
            let m = random_symmetric(6, 30, seed);
            let s = random_pm(6, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let rules = PathRules::matching(&s, false);
            let cfg = HarvestConfig {
                passes: 6,
                linked: false,
                keep,
                keep_two_circuit: keep,
                row_preselect: false,
            };
            let (table, _) = run_search(&r, &rules, i64::MAX, &cfg, |_| false);
            let paths = enumerate_simple_paths(&r, &s);
            for i in 0..6 {
                for k in 0..6 {
                    if i == k {
                        continue;
                    }
                    let best = paths
                        .iter()
                        .filter(|(p, class, _)| {
                            *class == CycleClass::Acceptable && p[0] == i && *p.last().unwrap() == k
                        })
                        .map(|(_, _, v)| *v)
                        .min();
                    let got = table
                        .paths(CycleClass::Acceptable, i, k)
                        .first()
                        .map(|p| p.value);
                    // the search never beats the true optimum
                    if let (Some(b), Some(g)) = (best, got) {
                        assert!(g >= b);
                    }
                    assert_eq!(best.is_some(), got.is_some());
                    cells += 1;
                    exact += usize::from(best == got);
                }
            }
        }
        (exact, cells)
    }

    #[test]
    fn acceptable_paths_match_exhaustive_search() {
        let (shallow, cells) = exact_cells(1);
        let (deep, _) = exact_cells(4);
        assert!(
            shallow * 4 >= cells * 3,
            "{shallow} of {cells} cells optimal"
        );
        assert!(deep >= shallow, "deep {deep} < shallow {shallow}");
    }

    #[test]
    fn harvest_is_sound_and_deduplicated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..15 {
            let m = random_symmetric(8, 40, seed);
            let s = random_pm(8, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let bound = 10;
            let (recs, stats) = harvest_cycles(&r, &s, bound, &HarvestConfig::default());
            let all: HashSet<Vec<usize>> = enumerate_cycles(&r, &s, bound)
                .into_iter()
                .map(|c| c.0)
                .collect();
            let mut keys = HashSet::new();
            for rec in &recs {
                assert!(
                    all.contains(&rec.vertices),
                    "{} not a real cycle",
                    rec.text()
                );
                assert_eq!(cycle_value(&r, &rec.vertices).unwrap(), rec.value);
                assert_eq!(classify_cycle(&rec.vertices, &s), Some(rec.class));
                assert!(rec.value <= bound);
                assert!(keys.insert(rec.vertices.clone()));
                let lp = rec.linking_points();
                assert_eq!(lp + 2 * rec.class.doubled(), rec.points());
            }
            let pairs = recs
                .iter()
                .filter(|rec| {
                    let comp = canonical_rotation(&companion(&rec.vertices, &s));
                    comp != rec.vertices && keys.contains(&comp)
                })
                .count();
            assert_eq!(2 * stats.companion_pairs, pairs);
        }
    }

    #[test]
    fn more_passes_never_find_fewer_cycles() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..8 {
            let m = random_symmetric(10, 40, seed);
            let s = random_pm(10, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let mut last = 0;
            for passes in 1..5 {
                let cfg = HarvestConfig {
                    passes,
                    ..HarvestConfig::default()
                };
                let (recs, _) = harvest_cycles(&r, &s, 5, &cfg);
                assert!(recs.len() >= last);
                last = recs.len();
            }
        }
    }

    #[test]
    fn split_rejects_acceptable_cycles() {
        let m = random_symmetric(4, 9, 1);
        let s = pm(4, "(1 2)(3 4)");
        let r = build_reduced(&m, &s.as_permutation()).unwrap();
        let rec = CycleRecord::new(&r, &s, &[0, 2], 100).unwrap();
        assert!(split_two_circuit(&rec, &s).is_err());
    }

    #[test]
    fn smallest_unlinked_cycles_split_into_triangles() {
        let s = pm(8, "(1 2)(3 4)(5 6)(7 8)");
        let m = random_symmetric(8, 20, 7);
        let r = build_reduced(&m, &s.as_permutation()).unwrap();
        let mut seen = 0;
        for (c, class, _) in enumerate_cycles(&r, &s, i64::MAX) {
            if class == CycleClass::Unlinked && c.len() == 4 {
                let rec = CycleRecord::new(&r, &s, &c, i64::MAX).unwrap();
                let (x, y) = split_two_circuit(&rec, &s).unwrap();
                assert_eq!((x.len(), y.len()), (3, 3));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn phase2_never_worsens() {
        for seed in 0..20 {
            let m = random_symmetric(8, 50, seed);
            let d = Permutation::new((0..8).map(|a| (a + 1) % 8).collect()).unwrap();
            let before = derangement_value(&d, &m);
            let (out, steps) = phase2_improve(&d, &m, &HarvestConfig::default());
            assert!(out.is_derangement());
            let after = derangement_value(&out, &m);
            assert!(after <= before);
            assert_eq!(after < before, !steps.is_empty());
            let mut v = before;
            for st in &steps {
                assert_eq!(st.derangement_value, v + st.value);
                v = st.derangement_value;
            }
        }
    }
}
