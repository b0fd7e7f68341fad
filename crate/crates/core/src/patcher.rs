//! Circuits, circuit linking, the branch-and-bound tour search over harvested
//! cycles, and the end-to-end solver.
//!
//! Every cycle of `sigma^-1 M^-` becomes one or two circuits that alternate
//! new edges with matching edges. When two circuits carry the same matching
//! edge, deleting both copies joins them. A set of cycles gives a tour when
//! its circuits form a tree under such links and every 2-cycle of `sigma` is
//! touched; the tour's value is then `|sigma|` plus the cycle values.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::{SolveConfig, TraceLevel};
use crate::fwcycles::{
    cycle_circuits, harvest_cycles, phase2_improve, CycleClass, CycleRecord, FwError, HarvestStats,
};
use crate::instance::{pad_odd, CostMatrix, InstanceError, NeighborRank};
use crate::permutation::{
    cycle_text, derangement_value, pm_from_tour, pm_value, tour_value, PerfectMatching, PermError,
    Permutation, Tour,
};
use crate::phase1::{initial_derangement, phase1_run};
use crate::reduced::{build_reduced, ReducedError};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("a circuit needs at least three vertices, got {0}")]
    TooShort(usize),
    #[error("vertex {0} repeats in a circuit")]
    Repeated(usize),
    #[error("circuits share no edge")]
    NoSharedEdge,
    #[error("circuits share {0} edges; exactly one is required")]
    SharedEdges(usize),
    #[error(transparent)]
    Cycle(#[from] FwError),
    #[error(transparent)]
    Perm(#[from] PermError),
    #[error(transparent)]
    Reduced(#[from] ReducedError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// A closed sequence of distinct vertices, each joined to its neighbours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeCircuit {
    vertices: Vec<usize>,
    value: i64,
}

fn edge(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

impl EdgeCircuit {
    pub fn new(vertices: Vec<usize>, value: i64) -> Result<Self, PatchError> {
        if vertices.len() < 3 {
            return Err(PatchError::TooShort(vertices.len()));
        }
        let mut sorted = vertices.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(PatchError::Repeated(w[0] + 1));
        }
        Ok(Self { vertices, value })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// Value carried from the cycle arcs whose new edges lie on the circuit.
    pub fn value(&self) -> i64 {
        self.value
    }

    /// Number of vertices, equal to the number of edges.
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Undirected edges as `(min, max)`, in circuit order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let k = self.len();
        (0..k)
            .map(|i| edge(self.vertices[i], self.vertices[(i + 1) % k]))
            .collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges().contains(&edge(u, v))
    }

    /// Sum of edge costs.
    pub fn cost(&self, m: &CostMatrix) -> i64 {
        self.edges().into_iter().map(|(a, b)| m.cost(a, b)).sum()
    }
}

/// The circuit(s) of a harvested cycle.
pub fn circuit_from_cycle(
    c: &CycleRecord,
    sigma: &PerfectMatching,
) -> Result<Vec<EdgeCircuit>, PatchError> {
    Ok(cycle_circuits(c, sigma)?)
}

/// Joins two circuits that share exactly one edge `{u, v}`: both copies of
/// the edge are deleted and the two remaining paths are spliced at `u` and
/// `v`.
pub fn link_circuits(x: &EdgeCircuit, y: &EdgeCircuit) -> Result<EdgeCircuit, PatchError> {
    let ye = y.edges();
    let shared: Vec<usize> = x
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| ye.contains(e))
        .map(|(i, _)| i)
        .collect();
    let i = match shared.as_slice() {
        [] => return Err(PatchError::NoSharedEdge),
        [i] => *i,
        more => return Err(PatchError::SharedEdges(more.len())),
    };
    let (kx, ky) = (x.len(), y.len());
    let (u, v) = (x.vertices[i], x.vertices[(i + 1) % kx]);
    // x from v the long way round to u
    let mut out: Vec<usize> = (0..kx).map(|k| x.vertices[(i + 1 + k) % kx]).collect();
    // y from u the long way round to v, endpoints dropped
    let j = y
        .vertices
        .iter()
        .position(|&w| w == u)
        .expect("shared endpoint");
    let forward = y.vertices[(j + 1) % ky] != v;
    for k in 1..ky - 1 {
        let idx = if forward {
            (j + k) % ky
        } else {
            (j + ky - k) % ky
        };
        out.push(y.vertices[idx]);
    }
    EdgeCircuit::new(out, x.value + y.value)
}

/// Total edge count of a tree of `r` circuits spanning `n` vertices before
/// its `r - 1` links are deleted: `n + 2r - 2`.
pub fn edge_count_ok(circuits: &[EdgeCircuit], n: usize) -> bool {
    let r = circuits.len();
    circuits.iter().map(EdgeCircuit::len).sum::<usize>() + 2 == n + 2 * r
}

/// Dominance key: class, covered pairs and the pair groups of each circuit.
type Signature = (CycleClass, Vec<usize>, Vec<Vec<usize>>);

/// How a cycle attaches to the matching.
#[derive(Debug, Clone)]
struct Shape {
    class: CycleClass,
    circuits: usize,
    /// Pair whose edge lies on both circuits of a linked cycle.
    internal: Option<usize>,
    /// Pairs contributing both points.
    doubled: Vec<usize>,
    /// Pairs with one point on the cycle, and the local circuit holding it.
    linking: Vec<(usize, usize)>,
    points: usize,
    value: i64,
}

impl Shape {
    fn new(
        c: &CycleRecord,
        sigma: &PerfectMatching,
        pair_of: &[usize],
        circuits: &[EdgeCircuit],
    ) -> Self {
        let doubled: Vec<usize> = c
            .covered
            .iter()
            .filter(|p| !p.linking)
            .map(|p| p.pair)
            .collect();
        let local = |v: usize| {
            circuits
                .iter()
                .position(|k| k.vertices().contains(&v))
                .unwrap_or(0)
        };
        let linking = c
            .vertices
            .iter()
            .filter(|&&v| !c.vertices.contains(&sigma.partner(v)))
            .map(|&v| (pair_of[v], local(v)))
            .collect();
        let internal = (c.class == CycleClass::Linked).then(|| {
            // the doubled pair whose edge survives on both circuits
            *doubled
                .iter()
                .find(|&&p| {
                    let a = c
                        .vertices
                        .iter()
                        .find(|&&v| pair_of[v] == p)
                        .copied()
                        .unwrap_or(0);
                    circuits.iter().all(|k| k.has_edge(a, sigma.partner(a)))
                })
                .expect("linked cycle shares an edge")
        });
        Self {
            class: c.class,
            circuits: circuits.len(),
            internal,
            doubled,
            linking,
            points: c.points(),
            value: c.value,
        }
    }

    /// A circuit of an unlinked cycle with no linking edge can never join
    /// anything else.
    fn has_isolated_circuit(&self) -> bool {
        self.class == CycleClass::Unlinked
            && (0..self.circuits).any(|k| !self.linking.iter().any(|l| l.1 == k))
    }

    fn signature(&self) -> Signature {
        let mut doubled = self.doubled.clone();
        doubled.sort_unstable();
        let mut per: Vec<Vec<usize>> = (0..self.circuits)
            .map(|k| {
                let mut v: Vec<usize> = self
                    .linking
                    .iter()
                    .filter(|l| l.1 == k)
                    .map(|l| l.0)
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        per.sort();
        (self.class, doubled, per)
    }
}

/// Coverage state of a pair.
const FREE: u8 = 0;
const ONCE: u8 = 1;
const LINKED: u8 = 2;
const DOUBLED: u8 = 3;

/// A set of cycles under construction: which 2-cycles are touched, how the
/// circuits are linked, and the running counts `t`, `a`, `p`.
#[derive(Debug, Clone)]
pub struct PatchBranch {
    /// Inventory indices of the member cycles.
    pub members: Vec<usize>,
    /// 2-circuit cycles.
    pub t: usize,
    /// Acceptable cycles.
    pub a: usize,
    /// Points moved by all members.
    pub points: usize,
    /// Sum of member values.
    pub value: i64,
    /// 2-cycles of the matching not touched yet.
    pub uncovered: usize,
    /// Connected groups of circuits.
    pub components: usize,
    /// Pairs whose edge was deleted to join two circuits.
    pub links: Vec<usize>,
    coverage: Vec<u8>,
    owner: Vec<usize>,
    parent: Vec<usize>,
}

impl PatchBranch {
    pub fn empty(pairs: usize) -> Self {
        Self {
            members: Vec::new(),
            t: 0,
            a: 0,
            points: 0,
            value: 0,
            uncovered: pairs,
            components: 0,
            links: Vec::new(),
            coverage: vec![FREE; pairs],
            owner: vec![usize::MAX; pairs],
            parent: Vec::new(),
        }
    }

    /// Circuits created so far.
    pub fn circuits(&self) -> usize {
        self.parent.len()
    }

    fn root(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    /// Whether `s` can join without touching a doubled or twice-linked
    /// pair and without closing a loop of links.
    fn admits(&self, s: &Shape) -> bool {
        if s.doubled.iter().any(|&p| self.coverage[p] != FREE) {
            return false;
        }
        // groups reached through each local circuit; a linked cycle's two
        // circuits form one group
        let mut seen: Vec<(usize, usize)> = Vec::with_capacity(s.linking.len());
        for &(p, k) in &s.linking {
            match self.coverage[p] {
                FREE => {}
                ONCE => {
                    let g = if s.internal.is_some() { 0 } else { k };
                    let r = self.root(self.owner[p]);
                    if seen.contains(&(g, r)) {
                        return false;
                    }
                    seen.push((g, r));
                }
                _ => return false,
            }
        }
        if s.internal.is_none() && s.circuits == 2 {
            // both circuits may meet the same group once each, but then no
            // other shared group may exist
            let mut common = 0;
            for &(g, r) in &seen {
                if g == 0 && seen.contains(&(1, r)) {
                    common += 1;
                }
            }
            if common > 1 {
                return false;
            }
        }
        true
    }

    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.root(x), self.root(y));
        if rx == ry {
            return false;
        }
        self.parent[rx.max(ry)] = rx.min(ry);
        self.components -= 1;
        true
    }

    /// Adds a cycle, or `None` when it does not fit.
    fn add(&self, idx: usize, s: &Shape) -> Option<PatchBranch> {
        if !self.admits(s) {
            return None;
        }
        let mut b = self.clone();
        let base = b.parent.len();
        for k in 0..s.circuits {
            b.parent.push(base + k);
        }
        b.components += s.circuits;
        if let Some(p) = s.internal {
            b.union(base, base + 1);
            b.links.push(p);
        }
        for &p in &s.doubled {
            b.coverage[p] = DOUBLED;
            b.uncovered -= 1;
        }
        for &(p, k) in &s.linking {
            if b.coverage[p] == FREE {
                b.coverage[p] = ONCE;
                b.owner[p] = base + k;
                b.uncovered -= 1;
            } else {
                if !b.union(b.owner[p], base + k) {
                    return None;
                }
                b.coverage[p] = LINKED;
                b.links.push(p);
            }
        }
        b.members.push(idx);
        b.points += s.points;
        b.value += s.value;
        if s.class == CycleClass::Acceptable {
            b.a += 1;
        } else {
            b.t += 1;
        }
        Some(b)
    }

    /// Builds a branch from cycles in order; `None` if one does not fit.
    pub fn from_cycles(cycles: &[CycleRecord], sigma: &PerfectMatching) -> Option<PatchBranch> {
        let pair_of = sigma.pair_index_table();
        let mut b = PatchBranch::empty(sigma.n() / 2);
        for (i, c) in cycles.iter().enumerate() {
            let circuits = cycle_circuits(c, sigma).ok()?;
            let s = Shape::new(c, sigma, &pair_of, &circuits);
            b = b.add(i, &s)?;
        }
        Some(b)
    }
}

/// Outcome of the point-count test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Tour,
    Derangement,
    Infeasible,
}

/// `tour` iff every 2-cycle is touched and `p = n/2 + 3t + a - 1`;
/// `derangement` iff all are touched but the count differs.
pub fn count_check(b: &PatchBranch, n: usize) -> Verdict {
    if b.members.is_empty() || b.uncovered > 0 {
        return Verdict::Infeasible;
    }
    if b.points + 1 == n / 2 + 3 * b.t + b.a {
        Verdict::Tour
    } else {
        Verdict::Derangement
    }
}

/// Search settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SearchConfig {
    /// Value bound, capacity bound, dominance and isolated-circuit pruning.
    pub pruning: bool,
    /// Branch nodes before the search gives up.
    pub node_limit: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            pruning: true,
            node_limit: 1_000_000,
        }
    }
}

/// A tour assembled by the search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TourEvent {
    pub value: i64,
    /// Member cycles in 1-based text form.
    pub cycles: Vec<String>,
    pub points: usize,
    pub t: usize,
    pub a: usize,
    /// Circuits before linking.
    pub circuits: usize,
    /// Edges of all circuits before linking.
    pub edges: usize,
    /// `p = n/2 + 3t + a - 1` held.
    pub point_count_ok: bool,
    /// `edges = n + 2r - 2` held.
    pub edge_count_ok: bool,
}

/// Result of [`tour_search`].
#[derive(Debug, Clone, Default)]
pub struct SearchResult {
    /// Best tour strictly below the starting upper bound.
    pub tour: Option<(Tour, i64)>,
    /// Best 2-factor with every 2-cycle touched but several circuits.
    pub derangement: Option<(Permutation, i64)>,
    pub nodes: u64,
    pub limit_hit: bool,
    pub tours: Vec<TourEvent>,
    /// Cycles left after dominance and feasibility filtering.
    pub inventory: usize,
    /// Tour-verdict branches whose assembly failed; always zero when the
    /// counting argument holds.
    pub assembly_failures: usize,
}

struct Searcher<'a> {
    cycles: &'a [CycleRecord],
    shapes: Vec<Shape>,
    circuits: Vec<Vec<EdgeCircuit>>,
    usable: Vec<usize>,
    by_pair: Vec<Vec<usize>>,
    sigma: &'a PerfectMatching,
    m: &'a CostMatrix,
    sigma_value: i64,
    cfg: SearchConfig,
    banned: Vec<bool>,
    best: i64,
    res: SearchResult,
}

impl<'a> Searcher<'a> {
    fn budget(&self) -> i64 {
        self.best - self.sigma_value - 1
    }

    /// Joins the member circuits along every link.
    fn assemble(&self, b: &PatchBranch) -> Result<(Vec<EdgeCircuit>, usize, usize), PatchError> {
        let mut pool: Vec<EdgeCircuit> = b
            .members
            .iter()
            .flat_map(|&i| self.circuits[i].iter().cloned())
            .collect();
        let (r, edges) = (pool.len(), pool.iter().map(EdgeCircuit::len).sum());
        for &p in &b.links {
            let (x, y) = self.sigma.pairs()[p];
            let holders: Vec<usize> = (0..pool.len())
                .filter(|&i| pool[i].has_edge(x, y))
                .collect();
            let [i, j] = holders[..] else {
                return Err(PatchError::SharedEdges(holders.len()));
            };
            let joined = link_circuits(&pool[i], &pool[j])?;
            pool.remove(j);
            pool.remove(i);
            pool.push(joined);
        }
        Ok((pool, r, edges))
    }

    fn terminal_tour(&mut self, b: &PatchBranch) {
        let value = self.sigma_value + b.value;
        if value >= self.best {
            return;
        }
        let n = self.m.n();
        let assembled = self.assemble(b).ok().and_then(|(pool, r, edges)| {
            let [one] = &pool[..] else { return None };
            let tour = Tour::new(one.vertices().to_vec()).ok()?;
            (tour_value(&tour, self.m) == value).then_some((tour, r, edges))
        });
        let Some((tour, r, edges)) = assembled else {
            self.res.assembly_failures += 1;
            return;
        };
        self.res.tours.push(TourEvent {
            value,
            cycles: b.members.iter().map(|&i| self.cycles[i].text()).collect(),
            points: b.points,
            t: b.t,
            a: b.a,
            circuits: r,
            edges,
            point_count_ok: count_check(b, n) == Verdict::Tour,
            edge_count_ok: edges + 2 == n + 2 * r,
        });
        self.best = value;
        self.res.tour = Some((tour, value));
    }

    fn terminal_derangement(&mut self, b: &PatchBranch) {
        let value = self.sigma_value + b.value;
        if self.res.derangement.as_ref().is_some_and(|d| d.1 <= value) {
            return;
        }
        let n = self.m.n();
        let Ok((pool, _, _)) = self.assemble(b) else {
            return;
        };
        let cycles: Vec<Vec<usize>> = pool.iter().map(|c| c.vertices().to_vec()).collect();
        if cycles.iter().map(Vec::len).sum::<usize>() != n {
            return;
        }
        let Ok(d) = Permutation::from_cycles(n, &cycles) else {
            return;
        };
        if derangement_value(&d, self.m) == value {
            self.res.derangement = Some((d, value));
        }
    }

    fn dfs(&mut self, b: &PatchBranch) {
        self.res.nodes += 1;
        if self.res.nodes > self.cfg.node_limit {
            self.res.limit_hit = true;
            return;
        }
        if b.uncovered == 0 && b.components == 1 {
            self.terminal_tour(b);
            return;
        }
        let compatible: Vec<usize> = self
            .usable
            .iter()
            .copied()
            .filter(|&i| !self.banned[i] && b.admits(&self.shapes[i]))
            .collect();
        let mut candidates: Vec<usize> = if b.uncovered == 0 {
            self.terminal_derangement(b);
            compatible
                .iter()
                .copied()
                .filter(|&i| self.shapes[i].class == CycleClass::Acceptable)
                .collect()
        } else {
            let mut best: Option<(usize, usize)> = None;
            let mut ok = vec![false; self.cycles.len()];
            for &i in &compatible {
                ok[i] = true;
            }
            for p in 0..b.coverage.len() {
                if b.coverage[p] != FREE {
                    continue;
                }
                let count = self.by_pair[p].iter().filter(|&&i| ok[i]).count();
                if best.is_none_or(|(c, _)| count < c) {
                    best = Some((count, p));
                }
            }
            match best {
                Some((0, _)) | None => return,
                Some((_, p)) => self.by_pair[p].iter().copied().filter(|&i| ok[i]).collect(),
            }
        };
        if self.cfg.pruning {
            let slack = b.uncovered + b.components.max(1) - 1;
            let mut negatives: Vec<i64> = compatible
                .iter()
                .map(|&i| self.shapes[i].value)
                .filter(|&v| v < 0)
                .collect();
            negatives.sort_unstable();
            let bound: i64 = negatives.iter().take(slack).sum();
            if b.value + bound > self.budget() {
                return;
            }
        }
        candidates.sort_by_key(|&i| (self.shapes[i].value, i));
        let mut banned_here = Vec::new();
        for i in candidates {
            if self.res.limit_hit {
                break;
            }
            if let Some(child) = b.add(i, &self.shapes[i]) {
                if !self.cfg.pruning
                    || child.value <= self.budget()
                    || child.uncovered > 0
                    || child.components > 1
                {
                    self.dfs(&child);
                }
            }
            self.banned[i] = true;
            banned_here.push(i);
        }
        for i in banned_here {
            self.banned[i] = false;
        }
    }
}

/// Depth-first search for the cheapest tour below `upper` assembled from the
/// inventory, recording the cheapest fully-covering 2-factor met on the way.
///
/// Roots are tried by point count (descending), then value, then canonical
/// form; later subtrees exclude earlier roots. Below a root the search
/// branches on the untouched 2-cycle with the fewest fitting cycles, or, once
/// all are touched but several circuit groups remain, on acceptable cycles
/// that link groups.
pub fn tour_search(
    cycles: &[CycleRecord],
    sigma: &PerfectMatching,
    m: &CostMatrix,
    upper: i64,
    cfg: &SearchConfig,
) -> SearchResult {
    let pair_of = sigma.pair_index_table();
    let pairs = sigma.n() / 2;
    let mut circuits = Vec::with_capacity(cycles.len());
    let mut shapes = Vec::with_capacity(cycles.len());
    let mut usable = Vec::new();
    let mut best_by_signature: HashMap<Signature, usize> = HashMap::new();
    for (i, c) in cycles.iter().enumerate() {
        let circ = cycle_circuits(c, sigma).unwrap_or_default();
        let shape = Shape::new(c, sigma, &pair_of, &circ);
        let ok = !circ.is_empty();
        circuits.push(circ);
        shapes.push(shape);
        if !ok {
            continue;
        }
        if cfg.pruning {
            if shapes[i].has_isolated_circuit() {
                continue;
            }
            let sig = shapes[i].signature();
            match best_by_signature.get(&sig) {
                Some(&j) if shapes[j].value <= shapes[i].value => continue,
                _ => {
                    best_by_signature.insert(sig, i);
                }
            }
        }
        usable.push(i);
    }
    if cfg.pruning {
        let keep: std::collections::HashSet<usize> = best_by_signature.values().copied().collect();
        usable.retain(|i| keep.contains(i));
    }
    usable.sort_by(|&x, &y| {
        let (cx, cy) = (&cycles[x], &cycles[y]);
        (std::cmp::Reverse(cx.points()), cx.value, &cx.vertices).cmp(&(
            std::cmp::Reverse(cy.points()),
            cy.value,
            &cy.vertices,
        ))
    });
    let mut by_pair = vec![Vec::new(); pairs];
    for &i in &usable {
        for cp in &cycles[i].covered {
            by_pair[cp.pair].push(i);
        }
    }
    let mut s = Searcher {
        cycles,
        shapes,
        circuits,
        usable: usable.clone(),
        by_pair,
        sigma,
        m,
        sigma_value: 2 * pm_value(sigma, m),
        cfg: *cfg,
        banned: vec![false; cycles.len()],
        best: upper,
        res: SearchResult {
            inventory: usable.len(),
            ..SearchResult::default()
        },
    };
    let empty = PatchBranch::empty(pairs);
    for &root in &usable {
        if s.res.limit_hit {
            break;
        }
        if let Some(b) = empty.add(root, &s.shapes[root]) {
            s.dfs(&b);
        }
        s.banned[root] = true;
    }
    s.res
}

/// Joins the cycles of a derangement into one tour by repeated cheapest
/// 2-exchange: for arcs `x -> d(x)` and `y -> d(y)` on different cycles,
/// reroute to `x -> d(y)` and `y -> d(x)`.
pub fn patch_derangement_to_tour(d: &Permutation, m: &CostMatrix) -> Tour {
    let n = d.n();
    let mut next: Vec<usize> = d.image().to_vec();
    loop {
        let mut cycle_of = vec![usize::MAX; n];
        let mut count = 0;
        for s in 0..n {
            if cycle_of[s] != usize::MAX {
                continue;
            }
            let mut a = s;
            while cycle_of[a] == usize::MAX {
                cycle_of[a] = count;
                a = next[a];
            }
            count += 1;
        }
        if count <= 1 {
            break;
        }
        let mut best: Option<(i64, usize, usize)> = None;
        for x in 0..n {
            for y in x + 1..n {
                if cycle_of[x] == cycle_of[y] {
                    continue;
                }
                let delta = m.cost(x, next[y]) + m.cost(y, next[x])
                    - m.cost(x, next[x])
                    - m.cost(y, next[y]);
                if best.is_none_or(|b| delta < b.0) {
                    best = Some((delta, x, y));
                }
            }
        }
        let (_, x, y) = best.expect("two cycles have a pair of arcs");
        next.swap(x, y);
    }
    Tour::from_permutation(&Permutation::new(next).expect("rerouting keeps a bijection"))
        .expect("single cycle")
}

/// One stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseEntry {
    pub name: String,
    pub value_before: i64,
    pub value_after: i64,
    /// Canonical cycle text (1-based) of the stage's result.
    pub artifact: String,
}

/// One round of matching extraction, harvest and tour search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundEntry {
    pub tour_value: i64,
    pub matching_value: i64,
    pub bound: i64,
    pub harvest: HarvestStats,
    pub inventory: usize,
    pub nodes: u64,
    pub limit_hit: bool,
    pub tour_found: Option<i64>,
    pub derangement_found: Option<i64>,
}

/// The best 2-factor seen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DerangementEntry {
    pub value: i64,
    pub cycles: String,
}

/// Machine-readable summary of a solve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SolveReport {
    pub n: usize,
    pub padded: bool,
    pub phases: Vec<PhaseEntry>,
    pub rounds: Vec<RoundEntry>,
    /// 1-based vertex order.
    pub tour: Vec<usize>,
    pub tour_value: i64,
    pub best_derangement: Option<DerangementEntry>,
    pub limit_hit: bool,
    pub tours: Vec<TourEvent>,
    pub trace: Vec<serde_json::Value>,
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub tour: Tour,
    pub value: i64,
    pub derangement: Option<(Permutation, i64)>,
    pub report: SolveReport,
}

/// A serialized event with an `event` tag in front of its fields.
fn tagged(kind: &str, e: &impl Serialize) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    obj.insert("event".into(), kind.into());
    if let Ok(serde_json::Value::Object(fields)) = serde_json::to_value(e) {
        obj.extend(fields);
    }
    serde_json::Value::Object(obj)
}

/// Full pipeline: trial phase, symmetric-arc phase, patch to an upper-bound
/// tour, then rounds of matching extraction, harvest and tour search until
/// neither a tour nor a re-patched 2-factor improves the incumbent. Odd
/// instances are padded with a dummy vertex that is shortcut at the end.
pub fn solve(m: &CostMatrix, cfg: &SolveConfig) -> Result<SolveOutcome, PatchError> {
    let n0 = m.n();
    if n0 < 3 {
        return Err(PatchError::Instance(InstanceError::TooSmall(n0)));
    }
    let padded = n0 % 2 == 1;
    let mm = if padded { pad_odd(m)? } else { m.clone() };
    let n = mm.n();
    let nr = NeighborRank::new(&mm);
    let mut trace = Vec::new();
    let mut phases = Vec::new();
    let d0 = initial_derangement(n);
    let mut events = Vec::new();
    let full = cfg.trace == TraceLevel::Full;
    let (d1, steps1) = phase1_run(&mm, &nr, cfg.threads, full.then_some(&mut events));
    if full {
        trace.extend(events.iter().map(|e| tagged("trial", e)));
    }
    if cfg.trace != TraceLevel::None {
        trace.extend(steps1.iter().map(|s| {
            serde_json::json!({
                "event": "phase1_step",
                "vertex": s.vertex + 1,
                "trial": s.trial,
                "cycle": cycle_text(&s.cycle),
                "value": s.value,
                "derangement_value": s.derangement_value,
            })
        }));
    }
    phases.push(PhaseEntry {
        name: "phase1".into(),
        value_before: derangement_value(&d0, &mm),
        value_after: derangement_value(&d1, &mm),
        artifact: d1.to_string(),
    });
    let (d2, steps2) = phase2_improve(&d1, &mm, &cfg.harvest);
    if cfg.trace != TraceLevel::None {
        trace.extend(steps2.iter().map(|s| {
            serde_json::json!({
                "event": "phase2_step",
                "cycle": cycle_text(&s.cycle),
                "value": s.value,
                "derangement_value": s.derangement_value,
            })
        }));
    }
    let d2_value = derangement_value(&d2, &mm);
    phases.push(PhaseEntry {
        name: "phase2".into(),
        value_before: derangement_value(&d1, &mm),
        value_after: d2_value,
        artifact: d2.to_string(),
    });
    let mut tour = patch_derangement_to_tour(&d2, &mm);
    let mut value = tour_value(&tour, &mm);
    phases.push(PhaseEntry {
        name: "patch".into(),
        value_before: d2_value,
        value_after: value,
        artifact: tour.to_string(),
    });
    let mut best_der = Some((d2, d2_value));
    let mut rounds = Vec::new();
    let mut tours = Vec::new();
    let mut limit_hit = false;
    let search_cfg = SearchConfig {
        pruning: cfg.pruning,
        node_limit: cfg.node_limit,
    };
    for _ in 0..cfg.max_rounds {
        let (sigma, sigma_value) = pm_from_tour(&tour, &mm)?;
        let r = build_reduced(&mm, &sigma.as_permutation())?;
        let bound = value - sigma_value - 1;
        let (cycles, stats) = harvest_cycles(&r, &sigma, bound, &cfg.harvest);
        let res = tour_search(&cycles, &sigma, &mm, value, &search_cfg);
        limit_hit |= res.limit_hit;
        tours.extend(res.tours.iter().cloned());
        rounds.push(RoundEntry {
            tour_value: value,
            matching_value: sigma_value,
            bound,
            harvest: stats,
            inventory: res.inventory,
            nodes: res.nodes,
            limit_hit: res.limit_hit,
            tour_found: res.tour.as_ref().map(|t| t.1),
            derangement_found: res.derangement.as_ref().map(|d| d.1),
        });
        if let Some((d, dv)) = &res.derangement {
            if best_der.as_ref().is_none_or(|b| *dv < b.1) {
                best_der = Some((d.clone(), *dv));
            }
        }
        let before = value;
        let mut next = res.tour.clone();
        if next.is_none() {
            if let Some((d, _)) = &res.derangement {
                let t = patch_derangement_to_tour(d, &mm);
                let tv = tour_value(&t, &mm);
                if tv < value {
                    next = Some((t, tv));
                }
            }
        }
        let Some((t, tv)) = next else { break };
        tour = t;
        value = tv;
        phases.push(PhaseEntry {
            name: format!("round{}", rounds.len()),
            value_before: before,
            value_after: value,
            artifact: tour.to_string(),
        });
    }
    let (final_tour, final_value) = if padded {
        let order: Vec<usize> = tour.order().iter().copied().filter(|&v| v != n0).collect();
        let t = Tour::new(order)?;
        let v = tour_value(&t, m);
        (t, v)
    } else {
        (tour, value)
    };
    let derangement = if padded { None } else { best_der };
    let report = SolveReport {
        n: n0,
        padded,
        phases,
        rounds,
        tour: final_tour.labels(),
        tour_value: final_value,
        best_derangement: derangement.as_ref().map(|(d, v)| DerangementEntry {
            value: *v,
            cycles: d.to_string(),
        }),
        limit_hit,
        tours,
        trace,
    };
    Ok(SolveOutcome {
        tour: final_tour,
        value: final_value,
        derangement,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fwcycles::HarvestConfig;
    use crate::instance::random_symmetric;
    use crate::oracle::brute_tsp;
    use crate::permutation::{tour_from_full_cycle, Tour};
    use crate::reduced::build_reduced;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn circuit(v: &[usize]) -> EdgeCircuit {
        EdgeCircuit::new(v.iter().map(|x| x - 1).collect(), 0).unwrap()
    }

    #[test]
    fn circuit_invariants() {
        assert!(EdgeCircuit::new(vec![0, 1], 0).is_err());
        assert!(EdgeCircuit::new(vec![0, 1, 0], 0).is_err());
        let c = circuit(&[1, 2, 3, 4]);
        assert_eq!(c.edges(), vec![(0, 1), (1, 2), (2, 3), (0, 3)]);
        assert!(c.has_edge(3, 0));
    }

    #[test]
    fn linking_needs_exactly_one_shared_edge() {
        let x = circuit(&[1, 2, 3]);
        let y = circuit(&[4, 5, 6]);
        assert!(matches!(
            link_circuits(&x, &y),
            Err(PatchError::NoSharedEdge)
        ));
        let y = circuit(&[1, 2, 3, 4]);
        assert!(matches!(
            link_circuits(&x, &y),
            Err(PatchError::SharedEdges(2))
        ));
    }

    #[test]
    fn linking_conserves_vertices_and_drops_two_edges() {
        let x = circuit(&[1, 2, 3, 4]);
        let y = circuit(&[3, 2, 5, 6, 7]);
        let z = link_circuits(&x, &y).unwrap();
        assert_eq!(z.len(), x.len() + y.len() - 2);
        let mut vs = z.vertices().to_vec();
        vs.sort_unstable();
        assert_eq!(vs, (0..7).collect::<Vec<_>>());
        assert!(!z.has_edge(1, 2));
        assert_eq!(z.edges().len(), x.edges().len() + y.edges().len() - 2);
    }

    #[test]
    fn empty_branch_is_infeasible() {
        assert_eq!(count_check(&PatchBranch::empty(5), 10), Verdict::Infeasible);
    }

    #[test]
    fn patch_keeps_single_cycles() {
        let m = random_symmetric(6, 30, 1);
        let d = Permutation::new(vec![2, 0, 4, 1, 5, 3]).unwrap();
        assert_eq!(d.cycles().cycles.len(), 1);
        let t = patch_derangement_to_tour(&d, &m);
        assert_eq!(t.as_permutation(), d);
    }

    #[test]
    fn patch_is_bounded_by_oracles() {
        for seed in 0..30 {
            let m = random_symmetric(8, 99, seed);
            let best = crate::oracle::brute_min_derangement(&m).unwrap();
            let crate::oracle::Witness::Derangement(d) = best.witness else {
                panic!()
            };
            let t = patch_derangement_to_tour(&d, &m);
            let v = tour_value(&t, &m);
            assert!(v >= brute_tsp(&m).unwrap().value);
            assert!(v >= best.value);
        }
    }

    fn random_pm(n: usize, rng: &mut ChaCha8Rng) -> PerfectMatching {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        let pairs: Vec<(usize, usize)> = v.chunks(2).map(|c| (c[0], c[1])).collect();
        PerfectMatching::from_pairs(n, &pairs).unwrap()
    }

    #[test]
    fn single_full_cycle_gives_its_tour() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..40 {
            let m = random_symmetric(8, 50, seed);
            let s = random_pm(8, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let sv = 2 * pm_value(&s, &m);
            let full: Vec<Vec<usize>> =
                crate::oracle::enumerate_acceptable_cycles(&r, &s, i64::MAX)
                    .into_iter()
                    .filter(|c| c.0.len() == 4)
                    .map(|c| c.0)
                    .collect();
            let Some(c) = full.first() else { continue };
            let rec = CycleRecord::new(&r, &s, c, i64::MAX).unwrap();
            let res = tour_search(
                std::slice::from_ref(&rec),
                &s,
                &m,
                i64::MAX,
                &SearchConfig::default(),
            );
            let (t, v) = res.tour.unwrap();
            assert_eq!(v, sv + rec.value);
            assert!(t.same_cycle(&tour_from_full_cycle(&s, c).unwrap()));
            let circ = circuit_from_cycle(&rec, &s).unwrap();
            assert_eq!(circ.len(), 1);
            assert_eq!(circ[0].len(), 8);
            assert_eq!(circ[0].value(), rec.value);
        }
    }

    #[test]
    fn circuit_values_sum_to_cycle_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for seed in 0..20 {
            let m = random_symmetric(10, 50, seed);
            let s = random_pm(10, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            for (c, _, _) in crate::oracle::enumerate_cycles(&r, &s, 0)
                .into_iter()
                .take(200)
            {
                let rec = CycleRecord::new(&r, &s, &c, i64::MAX).unwrap();
                let circ = circuit_from_cycle(&rec, &s).unwrap();
                assert_eq!(circ.iter().map(EdgeCircuit::value).sum::<i64>(), rec.value);
                let edges: usize = circ.iter().map(EdgeCircuit::len).sum();
                assert_eq!(
                    edges,
                    2 * rec.points() - 2 * usize::from(rec.class != CycleClass::Acceptable)
                );
                assert!(circ
                    .iter()
                    .all(|k| rec.class == CycleClass::Acceptable || k.len() % 2 == 1));
            }
        }
    }

    #[test]
    fn search_tours_are_valid_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..40 {
            let m = random_symmetric(10, 60, seed);
            let s = random_pm(10, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let upper = 2 * pm_value(&s, &m) + 200;
            let (cycles, _) = harvest_cycles(
                &r,
                &s,
                upper - 2 * pm_value(&s, &m) - 1,
                &HarvestConfig::default(),
            );
            let res = tour_search(&cycles, &s, &m, upper, &SearchConfig::default());
            assert_eq!(res.assembly_failures, 0);
            for e in &res.tours {
                assert!(e.point_count_ok && e.edge_count_ok, "{e:?}");
            }
            if let Some((t, v)) = &res.tour {
                assert_eq!(tour_value(t, &m), *v);
                assert!(*v >= brute_tsp(&m).unwrap().value);
            }
            if let Some((d, v)) = &res.derangement {
                assert!(d.is_derangement());
                assert_eq!(derangement_value(d, &m), *v);
            }
        }
    }

    #[test]
    fn point_count_agrees_with_circuit_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        for seed in 0..60 {
            let m = random_symmetric(8, 40, seed);
            let s = random_pm(8, &mut rng);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            let all: Vec<CycleRecord> = crate::oracle::enumerate_cycles(&r, &s, 20)
                .into_iter()
                .filter_map(|(c, _, _)| CycleRecord::new(&r, &s, &c, i64::MAX))
                .collect();
            for i in 0..all.len().min(30) {
                for j in i..all.len().min(30) {
                    let set = if i == j {
                        vec![all[i].clone()]
                    } else {
                        vec![all[i].clone(), all[j].clone()]
                    };
                    let Some(b) = PatchBranch::from_cycles(&set, &s) else {
                        continue;
                    };
                    let slack = (4 + 3 * b.t + b.a) as i64 - 1 - b.points as i64;
                    assert_eq!(slack, (b.uncovered + b.components) as i64 - 1);
                    if b.uncovered == 0 {
                        assert_eq!(count_check(&b, 8) == Verdict::Tour, b.components == 1);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "{checked}");
    }

    #[test]
    fn solve_small_instances() {
        for seed in 0..10 {
            let m = random_symmetric(7, 50, seed);
            let out = solve(&m, &SolveConfig::default()).unwrap();
            assert_eq!(out.tour.n(), 7);
            assert_eq!(tour_value(&out.tour, &m), out.value);
            assert!(out.value >= brute_tsp(&m).unwrap().value);
        }
    }

    #[test]
    fn solve_rejects_tiny_instances() {
        let m = CostMatrix::from_rows(&[vec![0, 1], vec![1, 0]]);
        assert!(solve(&m, &SolveConfig::default()).is_err());
        let _ = Tour::new(vec![0, 1, 2]).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn solve_returns_a_tour_and_never_worsens(n in 3usize..=12, seed in any::<u64>()) {
            let m = random_symmetric(n, 99, seed);
            let out = solve(&m, &SolveConfig::default()).unwrap();
            let mut labels = out.tour.labels();
            labels.sort_unstable();
            prop_assert_eq!(labels, (1..=n).collect::<Vec<_>>());
            prop_assert_eq!(tour_value(&out.tour, &m), out.value);
            prop_assert_eq!(out.report.tour_value, out.value);
            for p in out.report.phases.iter().filter(|p| p.name.starts_with("round")) {
                prop_assert!(p.value_after < p.value_before);
            }
            for t in &out.report.tours {
                prop_assert!(t.point_count_ok && t.edge_count_ok);
            }
        }
    }
}
