//! Greedy trial-based construction of a low-value derangement.
//!
//! A trial grows a path `v = a1, a2, ..` of arcs of the reduced matrix
//! `D^-1 M^-`, taken from each row's cheapest neighbours. Choosing neighbour
//! `c` of `a` gives the arc `(a, D^-1(c))` of value `cost(a, c) - cost(a, D(a))`,
//! i.e. the new edge `a -> c`. The path must stay negative and closes when it
//! returns to `v`; the cycle `s` found is applied as `D' = D s`.

use serde::Serialize;

use crate::instance::{CostMatrix, NeighborRank};
use crate::permutation::{compose, derangement_value, inverse, Permutation};

/// The cyclic shift `a -> a + 1`.
pub fn initial_derangement(n: usize) -> Permutation {
    assert!(n >= 2, "a derangement needs two points");
    Permutation::new((0..n).map(|a| (a + 1) % n).collect()).expect("shift is a bijection")
}

/// Trials per start vertex and candidates per extension: `ceil(log2 n) + 1`.
pub fn trial_count(n: usize) -> usize {
    let mut bits = 0;
    while (1usize << bits) < n {
        bits += 1;
    }
    bits + 1
}

/// Vertices by descending gain `cost(a, D(a)) - cost(a, MIN(a, 1))`, ties to
/// the smaller vertex.
pub fn sort_candidates(d: &Permutation, m: &CostMatrix, nr: &NeighborRank) -> Vec<usize> {
    let n = m.n();
    let gain = |a: usize| m.cost(a, d.at(a)) - m.cost(a, nr.rank(a, 0));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&a| (std::cmp::Reverse(gain(a)), a));
    order
}

/// Why a candidate was taken or skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Accept,
    /// The target vertex is already on the path.
    Repeat,
    /// The candidate is the current arc `(a, D(a))`.
    Arc,
    /// The new edge would form a 2-cycle with an old arc or repeat a placed
    /// edge in reverse.
    NotAllowed,
    /// The running value would not stay negative.
    NonNegative,
    Close,
    /// Candidate budget exhausted; the best legal prefix closure is used.
    Stuck,
}

/// One trace line of a trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialEvent {
    pub phase: u8,
    pub vertex: usize,
    pub trial: usize,
    pub path: Vec<usize>,
    pub candidate: usize,
    pub decision: Decision,
    pub running: i64,
}

/// Result of a successful trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialOutcome {
    pub vertex: usize,
    pub trial: usize,
    /// Cycle of `D^-1 M^-` starting at the trial's vertex.
    pub cycle: Vec<usize>,
    pub arc_values: Vec<i64>,
    pub value: i64,
}

struct TrialState<'a> {
    d: &'a Permutation,
    inv: Permutation,
    m: &'a CostMatrix,
    path: Vec<usize>,
    arc_values: Vec<i64>,
    running: Vec<i64>,
    on_path: Vec<bool>,
    /// Placed new edges `(a, c)`, compared in both directions.
    placed: Vec<(usize, usize)>,
}

impl<'a> TrialState<'a> {
    fn start(&self) -> usize {
        self.path[0]
    }

    fn total(&self) -> i64 {
        *self.running.last().unwrap_or(&0)
    }

    fn arc_value(&self, a: usize, c: usize) -> i64 {
        self.m.cost(a, c) - self.m.cost(a, self.d.at(a))
    }

    /// Guards shared by extensions and closures: no loop, no fixed point, no
    /// 2-cycle with an old arc, no reversal of a placed edge.
    fn legal(&self, a: usize, c: usize, upto: usize) -> Result<(), Decision> {
        let b = self.inv.at(c);
        if b == a {
            return Err(Decision::Arc);
        }
        if c == a || self.d.at(c) == a {
            return Err(Decision::NotAllowed);
        }
        if self.placed[..upto]
            .iter()
            .any(|&(x, y)| (x, y) == (c, a) || (x, y) == (a, c))
        {
            return Err(Decision::NotAllowed);
        }
        Ok(())
    }

    fn push(&mut self, a: usize, c: usize, value: i64) {
        let b = self.inv.at(c);
        self.path.push(b);
        self.arc_values.push(value);
        let r = self.total() + value;
        self.running.push(r);
        self.on_path[b] = true;
        self.placed.push((a, c));
    }

    /// Most negative legal closure of a prefix `path[..=k]`, `k >= 1`.
    fn best_prefix_closure(&self) -> Option<(usize, i64)> {
        let v = self.start();
        let c = self.d.at(v);
        (1..self.path.len())
            .filter_map(|k| {
                let e = self.path[k];
                self.legal(e, c, k).ok()?;
                Some((k, self.running[k - 1] + self.arc_value(e, c)))
            })
            .min_by_key(|&(k, total)| (total, k))
            .filter(|&(_, total)| total < 0)
    }

    fn outcome(&self, k: usize, close_value: i64, trial: usize) -> TrialOutcome {
        let mut arc_values = self.arc_values[..k].to_vec();
        arc_values.push(close_value);
        TrialOutcome {
            vertex: self.start(),
            trial,
            cycle: self.path[..=k].to_vec(),
            value: arc_values.iter().sum(),
            arc_values,
        }
    }
}

/// Runs trial `t` (1-based) from `v` on derangement `d`. Each vertex may try
/// `budget` candidates in MIN order; the start vertex tries only `MIN(v, t)`.
pub fn run_trial(
    d: &Permutation,
    m: &CostMatrix,
    nr: &NeighborRank,
    v: usize,
    t: usize,
    budget: usize,
    mut trace: Option<&mut Vec<TrialEvent>>,
) -> Option<TrialOutcome> {
    let n = m.n();
    if t == 0 || t > n - 1 {
        return None;
    }
    let mut st = TrialState {
        d,
        inv: inverse(d),
        m,
        path: vec![v],
        arc_values: Vec::new(),
        running: Vec::new(),
        on_path: vec![false; n],
        placed: Vec::new(),
    };
    st.on_path[v] = true;
    let mut log = |st: &TrialState, cand: usize, decision: Decision, running: i64| {
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TrialEvent {
                phase: 1,
                vertex: v + 1,
                trial: t,
                path: st.path.iter().map(|x| x + 1).collect(),
                candidate: cand + 1,
                decision,
                running,
            });
        }
    };
    loop {
        let a = *st.path.last().unwrap_or(&v);
        let positions: Vec<usize> = if st.path.len() == 1 {
            vec![t - 1]
        } else {
            (0..budget.min(n - 1)).collect()
        };
        let mut extended = false;
        for pos in positions {
            let c = nr.rank(a, pos);
            let b = st.inv.at(c);
            let value = st.arc_value(a, c);
            let running = st.total() + value;
            let verdict = if b == v && st.path.len() > 1 {
                st.legal(a, c, st.placed.len()).and({
                    if running < 0 {
                        Ok(Decision::Close)
                    } else {
                        Err(Decision::NonNegative)
                    }
                })
            } else if b == a {
                Err(Decision::Arc)
            } else if st.on_path[b] {
                Err(Decision::Repeat)
            } else {
                st.legal(a, c, st.placed.len()).and({
                    if running < 0 {
                        Ok(Decision::Accept)
                    } else {
                        Err(Decision::NonNegative)
                    }
                })
            };
            match verdict {
                Ok(Decision::Close) => {
                    log(&st, b, Decision::Close, running);
                    let k = st.path.len() - 1;
                    return Some(st.outcome(k, value, t));
                }
                Ok(_) => {
                    st.push(a, c, value);
                    log(&st, b, Decision::Accept, running);
                    extended = true;
                    break;
                }
                Err(reason) => log(&st, b, reason, running),
            }
        }
        if !extended {
            let closure = st.best_prefix_closure();
            log(&st, v, Decision::Stuck, closure.map_or(st.total(), |c| c.1));
            let (k, total) = closure?;
            let e = st.path[k];
            let close_value = st.arc_value(e, d.at(v));
            debug_assert_eq!(st.running[k - 1] + close_value, total);
            return Some(st.outcome(k, close_value, t));
        }
        if st.path.len() == n {
            // every vertex is on the path; only a closure can follow
            let (k, _) = st.best_prefix_closure()?;
            let e = st.path[k];
            let close_value = st.arc_value(e, d.at(v));
            return Some(st.outcome(k, close_value, t));
        }
    }
}

/// One applied improvement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Phase1Step {
    pub vertex: usize,
    pub trial: usize,
    pub cycle: Vec<usize>,
    pub value: i64,
    pub derangement_value: i64,
}

/// Best negative trial from `v`, trying `t = 1..=T`. Ties keep the earlier
/// trial. With `threads > 1` trials run concurrently; the choice is the same.
pub fn best_trial(
    d: &Permutation,
    m: &CostMatrix,
    nr: &NeighborRank,
    v: usize,
    threads: usize,
    trace: Option<&mut Vec<TrialEvent>>,
) -> Option<TrialOutcome> {
    let big_t = trial_count(m.n());
    let trials: Vec<usize> = (1..=big_t.min(m.n() - 1)).collect();
    let results: Vec<(Option<TrialOutcome>, Vec<TrialEvent>)> = if threads > 1 && trace.is_none() {
        std::thread::scope(|scope| {
            let handles: Vec<_> = trials
                .iter()
                .map(|&t| scope.spawn(move || (run_trial(d, m, nr, v, t, big_t, None), Vec::new())))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trial thread"))
                .collect()
        })
    } else {
        let tracing = trace.is_some();
        trials
            .iter()
            .map(|&t| {
                let mut events = Vec::new();
                let out = run_trial(d, m, nr, v, t, big_t, tracing.then_some(&mut events));
                (out, events)
            })
            .collect()
    };
    let mut best: Option<TrialOutcome> = None;
    let mut all_events = Vec::new();
    for (out, events) in results {
        all_events.extend(events);
        if let Some(o) = out.filter(|o| o.value < 0) {
            if best.as_ref().is_none_or(|b| o.value < b.value) {
                best = Some(o);
            }
        }
    }
    if let Some(tr) = trace {
        tr.extend(all_events);
    }
    best
}

/// Applies the best trial cycle from the first vertex (in gain order) that
/// has one, until no vertex yields a negative cycle.
pub fn phase1_run(
    m: &CostMatrix,
    nr: &NeighborRank,
    threads: usize,
    mut trace: Option<&mut Vec<TrialEvent>>,
) -> (Permutation, Vec<Phase1Step>) {
    let n = m.n();
    let mut d = initial_derangement(n);
    let mut value = derangement_value(&d, m);
    let mut steps = Vec::new();
    'outer: loop {
        for v in sort_candidates(&d, m, nr) {
            let Some(o) = best_trial(&d, m, nr, v, threads, trace.as_deref_mut()) else {
                continue;
            };
            let s = Permutation::from_cycles(n, std::slice::from_ref(&o.cycle))
                .expect("trial cycle is simple");
            let next = compose(&d, &s);
            let next_value = derangement_value(&next, m);
            debug_assert_eq!(next_value, value + o.value);
            if !next.is_derangement() || next_value >= value {
                continue;
            }
            d = next;
            value = next_value;
            steps.push(Phase1Step {
                vertex: v,
                trial: o.trial,
                cycle: o.cycle,
                value: o.value,
                derangement_value: value,
            });
            continue 'outer;
        }
        break;
    }
    (d, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::random_symmetric;
    use crate::oracle::brute_min_derangement;
    use proptest::prelude::*;

    #[test]
    fn shift_and_trial_count() {
        assert_eq!(initial_derangement(2).to_string(), "(1 2)");
        assert_eq!(initial_derangement(5).at(4), 0);
        assert_eq!(trial_count(20), 6);
        assert_eq!(trial_count(16), 5);
        assert_eq!(trial_count(2), 2);
    }

    #[test]
    fn zero_gains_keep_index_order() {
        let m = CostMatrix::from_fn(5, |_, _| 3);
        let nr = NeighborRank::new(&m);
        let order = sort_candidates(&initial_derangement(5), &m, &nr);
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn uniform_costs_give_no_cycle() {
        let m = CostMatrix::from_fn(4, |_, _| 7);
        let nr = NeighborRank::new(&m);
        let d = initial_derangement(4);
        for v in 0..4 {
            for t in 1..=3 {
                let out = run_trial(&d, &m, &nr, v, t, 3, None);
                assert!(out.is_none_or(|o| o.value == 0));
            }
        }
        let (out, steps) = phase1_run(&m, &nr, 1, None);
        assert_eq!(out, d);
        assert!(steps.is_empty());
    }

    #[test]
    fn trial_values_are_consistent() {
        for seed in 0..30 {
            let m = random_symmetric(9, 60, seed);
            let nr = NeighborRank::new(&m);
            let d = initial_derangement(9);
            for v in 0..9 {
                for t in 1..=trial_count(9) {
                    if let Some(o) = run_trial(&d, &m, &nr, v, t, trial_count(9), None) {
                        assert!(o.value < 0);
                        let s =
                            Permutation::from_cycles(9, std::slice::from_ref(&o.cycle)).unwrap();
                        let next = compose(&d, &s);
                        assert!(next.is_derangement());
                        assert_eq!(
                            derangement_value(&next, &m),
                            derangement_value(&d, &m) + o.value
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn phase1_bounded_by_oracle() {
        for seed in 0..100 {
            let m = random_symmetric(8, 99, seed);
            let nr = NeighborRank::new(&m);
            let (d, steps) = phase1_run(&m, &nr, 1, None);
            let v = derangement_value(&d, &m);
            assert!(d.is_derangement());
            assert!(v >= brute_min_derangement(&m).unwrap().value);
            assert!(v <= derangement_value(&initial_derangement(8), &m));
            let mut prev = derangement_value(&initial_derangement(8), &m);
            for s in &steps {
                assert!(s.derangement_value < prev);
                assert_eq!(s.derangement_value, prev + s.value);
                prev = s.derangement_value;
            }
        }
    }

    #[test]
    fn threads_do_not_change_the_result() {
        for seed in 0..5 {
            let m = random_symmetric(16, 99, seed);
            let nr = NeighborRank::new(&m);
            assert_eq!(phase1_run(&m, &nr, 1, None), phase1_run(&m, &nr, 4, None));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn steps_strictly_improve_a_derangement(n in 3usize..=16, seed in any::<u64>()) {
            let m = random_symmetric(n, 99, seed);
            let nr = NeighborRank::new(&m);
            let (d, steps) = phase1_run(&m, &nr, 1, None);
            prop_assert!(d.is_derangement());
            let mut prev = derangement_value(&initial_derangement(n), &m);
            for s in &steps {
                prop_assert!(s.value < 0);
                prop_assert_eq!(s.derangement_value - prev, s.value);
                prev = s.derangement_value;
            }
            prop_assert_eq!(prev, derangement_value(&d, &m));
        }
    }
}
