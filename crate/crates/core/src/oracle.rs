//! Exact references for small instances: optimal tours, minimum perfect
//! matchings, minimum derangements and exhaustive cycle enumeration.

use std::fmt;

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

use crate::fwcycles::{classify_cycle, CycleClass};
use crate::instance::CostMatrix;
use crate::permutation::{
    canonical_rotation, derangement_value, is_acceptable, pm_value, tour_value, PerfectMatching,
    Permutation, Tour,
};
use crate::reduced::ReducedMatrix;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance has {n} vertices; this oracle handles {min}..={max}")]
    Size { n: usize, min: usize, max: usize },
    #[error("a perfect matching needs an even vertex count, got {0}")]
    Odd(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Enumeration,
    DynamicProgramming,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    Tour(Tour),
    Matching(PerfectMatching),
    Derangement(Permutation),
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Tour(t) => write!(f, "{t}"),
            Witness::Matching(p) => write!(f, "{p}"),
            Witness::Derangement(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub value: i64,
    pub witness: Witness,
    pub method: Method,
}

fn check_size(n: usize, min: usize, max: usize) -> Result<(), OracleError> {
    if n < min || n > max {
        Err(OracleError::Size { n, min, max })
    } else {
        Ok(())
    }
}

/// Optimal tour by Held-Karp dynamic programming, `3 <= n <= 13`.
pub fn brute_tsp(m: &CostMatrix) -> Result<OracleResult, OracleError> {
    let n = m.n();
    check_size(n, 3, 13)?;
    // dp[mask][j]: cheapest path from 0 through `mask` (over 1..n) ending at j
    let k = n - 1;
    let full = 1usize << k;
    let mut dp = vec![i64::MAX; full * k];
    let mut parent = vec![usize::MAX; full * k];
    for j in 0..k {
        dp[(1 << j) * k + j] = m.cost(0, j + 1);
    }
    for mask in 1..full {
        for j in 0..k {
            let cur = dp[mask * k + j];
            if cur == i64::MAX || mask & (1 << j) == 0 {
                continue;
            }
            for nx in 0..k {
                if mask & (1 << nx) != 0 {
                    continue;
                }
                let next = mask | (1 << nx);
                let cand = cur + m.cost(j + 1, nx + 1);
                if cand < dp[next * k + nx] {
                    dp[next * k + nx] = cand;
                    parent[next * k + nx] = j;
                }
            }
        }
    }
    let last = full - 1;
    let (end, value) = (0..k)
        .map(|j| (j, dp[last * k + j] + m.cost(j + 1, 0)))
        .min_by_key(|&(j, v)| (v, j))
        .expect("n >= 3");
    let mut order = Vec::with_capacity(n);
    let (mut mask, mut j) = (last, end);
    while j != usize::MAX {
        order.push(j + 1);
        let p = parent[mask * k + j];
        mask &= !(1 << j);
        j = p;
    }
    order.push(0);
    order.reverse();
    let tour = Tour::new(order).expect("dp path visits every vertex");
    debug_assert_eq!(tour_value(&tour, m), value);
    Ok(OracleResult {
        value,
        witness: Witness::Tour(tour),
        method: Method::DynamicProgramming,
    })
}

/// Optimal tour by enumerating all orders that start at vertex 1, `n <= 9`.
pub fn enumerate_tsp(m: &CostMatrix) -> Result<OracleResult, OracleError> {
    let n = m.n();
    check_size(n, 3, 9)?;
    let mut best: Option<(i64, Vec<usize>)> = None;
    for rest in (1..n).permutations(n - 1) {
        let order: Vec<usize> = std::iter::once(0).chain(rest).collect();
        let v: i64 = (0..n).map(|i| m.cost(order[i], order[(i + 1) % n])).sum();
        if best.as_ref().is_none_or(|b| v < b.0) {
            best = Some((v, order));
        }
    }
    let (value, order) = best.expect("at least one tour");
    Ok(OracleResult {
        value,
        witness: Witness::Tour(Tour::new(order).expect("valid order")),
        method: Method::Enumeration,
    })
}

/// Minimum-value perfect matching by recursive pairing, even `n <= 14`.
pub fn brute_min_pm(m: &CostMatrix) -> Result<OracleResult, OracleError> {
    let n = m.n();
    check_size(n, 2, 14)?;
    if n % 2 == 1 {
        return Err(OracleError::Odd(n));
    }
    fn rec(
        m: &CostMatrix,
        free: &mut Vec<usize>,
        acc: i64,
        cur: &mut Vec<(usize, usize)>,
        best: &mut (i64, Vec<(usize, usize)>),
    ) {
        if acc >= best.0 {
            return;
        }
        if free.is_empty() {
            *best = (acc, cur.clone());
            return;
        }
        let a = free.remove(0);
        for i in 0..free.len() {
            let b = free.remove(i);
            cur.push((a, b));
            rec(m, free, acc + m.cost(a, b), cur, best);
            cur.pop();
            free.insert(i, b);
        }
        free.insert(0, a);
    }
    let mut best = (i64::MAX, Vec::new());
    rec(m, &mut (0..n).collect(), 0, &mut Vec::new(), &mut best);
    let pm = PerfectMatching::from_pairs(n, &best.1).expect("pairing covers every vertex");
    debug_assert_eq!(pm_value(&pm, m), best.0);
    Ok(OracleResult {
        value: best.0,
        witness: Witness::Matching(pm),
        method: Method::Enumeration,
    })
}

/// Minimum-value derangement by enumerating fixed-point-free assignments,
/// `2 <= n <= 9`.
pub fn brute_min_derangement(m: &CostMatrix) -> Result<OracleResult, OracleError> {
    let n = m.n();
    check_size(n, 2, 9)?;
    fn rec(
        m: &CostMatrix,
        a: usize,
        used: &mut [bool],
        image: &mut Vec<usize>,
        acc: i64,
        best: &mut (i64, Vec<usize>),
    ) {
        let n = used.len();
        if acc >= best.0 {
            return;
        }
        if a == n {
            *best = (acc, image.clone());
            return;
        }
        for b in 0..n {
            if b == a || used[b] {
                continue;
            }
            used[b] = true;
            image.push(b);
            rec(m, a + 1, used, image, acc + m.cost(a, b), best);
            image.pop();
            used[b] = false;
        }
    }
    let mut best = (i64::MAX, Vec::new());
    rec(m, 0, &mut vec![false; n], &mut Vec::new(), 0, &mut best);
    let d = Permutation::new(best.1).expect("assignment is a bijection");
    debug_assert_eq!(derangement_value(&d, m), best.0);
    Ok(OracleResult {
        value: best.0,
        witness: Witness::Derangement(d),
        method: Method::Enumeration,
    })
}

/// Every simple cycle of the reduced matrix with value at most `bound` that
/// classifies over `sigma`, as (canonical cycle, class, value), sorted.
pub fn enumerate_cycles(
    r: &ReducedMatrix,
    sigma: &PerfectMatching,
    bound: i64,
) -> Vec<(Vec<usize>, CycleClass, i64)> {
    let n = r.n();
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(n);
    let mut on = vec![false; n];
    fn dfs(
        r: &ReducedMatrix,
        sigma: &PerfectMatching,
        bound: i64,
        path: &mut Vec<usize>,
        on: &mut [bool],
        acc: i64,
        out: &mut Vec<(Vec<usize>, CycleClass, i64)>,
    ) {
        let a = *path.last().expect("nonempty");
        let start = path[0];
        for b in start..r.n() {
            let Some(w) = r.arc(a, b) else { continue };
            if b == start {
                if path.len() >= 2 && acc + w <= bound {
                    if let Some(class) = classify_cycle(path, sigma) {
                        out.push((path.clone(), class, acc + w));
                    }
                }
            } else if !on[b] {
                on[b] = true;
                path.push(b);
                dfs(r, sigma, bound, path, on, acc + w, out);
                path.pop();
                on[b] = false;
            }
        }
    }
    for start in 0..n {
        path.push(start);
        on[start] = true;
        dfs(r, sigma, bound, &mut path, &mut on, 0, &mut out);
        on[start] = false;
        path.pop();
    }
    out.sort();
    out
}

/// Acceptable cycles with value at most `bound`, sorted.
pub fn enumerate_acceptable_cycles(
    r: &ReducedMatrix,
    sigma: &PerfectMatching,
    bound: i64,
) -> Vec<(Vec<usize>, i64)> {
    enumerate_cycles(r, sigma, bound)
        .into_iter()
        .filter(|c| c.1 == CycleClass::Acceptable)
        .map(|(c, _, v)| (c, v))
        .collect()
}

/// Independent generator for acceptable cycles: pick one point from each of
/// a set of 2-cycles, then every cyclic order of those points.
pub fn enumerate_acceptable_cycles_by_choice(
    r: &ReducedMatrix,
    sigma: &PerfectMatching,
    bound: i64,
) -> Vec<(Vec<usize>, i64)> {
    let pairs = sigma.pairs();
    let mut out = Vec::new();
    for size in 2..=pairs.len() {
        for chosen in pairs.iter().combinations(size) {
            for pick in (0..size).map(|_| [0, 1]).multi_cartesian_product() {
                let pts: Vec<usize> = chosen
                    .iter()
                    .zip(&pick)
                    .map(|(&&(a, b), &s)| if s == 0 { a } else { b })
                    .collect();
                let first = *pts.iter().min().expect("nonempty");
                let rest: Vec<usize> = pts.iter().copied().filter(|&p| p != first).collect();
                for perm in rest.iter().copied().permutations(rest.len()) {
                    let c: Vec<usize> = std::iter::once(first).chain(perm).collect();
                    debug_assert!(is_acceptable(sigma, &c));
                    let mut v = 0;
                    let ok = (0..c.len()).all(|i| match r.arc(c[i], c[(i + 1) % c.len()]) {
                        Some(w) => {
                            v += w;
                            true
                        }
                        None => false,
                    });
                    if ok && v <= bound {
                        out.push((canonical_rotation(&c), v));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Every simple path (two or more vertices) that classifies over `sigma`,
/// as (path, class, value).
pub fn enumerate_simple_paths(
    r: &ReducedMatrix,
    sigma: &PerfectMatching,
) -> Vec<(Vec<usize>, CycleClass, i64)> {
    let n = r.n();
    let mut out = Vec::new();
    fn class_of(p: &[usize], sigma: &PerfectMatching) -> Option<CycleClass> {
        let mut seen: Vec<(usize, usize)> = Vec::new();
        let mut doubled = Vec::new();
        for (i, &v) in p.iter().enumerate() {
            let key = v.min(sigma.partner(v));
            match seen.iter().find(|s| s.0 == key) {
                Some(&(_, first)) => doubled.push((first, i)),
                None => seen.push((key, i)),
            }
        }
        match doubled.len() {
            0 => Some(CycleClass::Acceptable),
            1 => Some(CycleClass::Unlinked),
            2 => {
                let (x, y) = (doubled[0], doubled[1]);
                let inside = |q: usize| x.0 < q && q < x.1;
                (inside(y.0) != inside(y.1)).then_some(CycleClass::Linked)
            }
            _ => None,
        }
    }
    fn dfs(
        r: &ReducedMatrix,
        sigma: &PerfectMatching,
        path: &mut Vec<usize>,
        on: &mut [bool],
        acc: i64,
        out: &mut Vec<(Vec<usize>, CycleClass, i64)>,
    ) {
        let a = *path.last().expect("nonempty");
        for b in 0..r.n() {
            if on[b] {
                continue;
            }
            let Some(w) = r.arc(a, b) else { continue };
            path.push(b);
            if let Some(class) = class_of(path, sigma) {
                out.push((path.clone(), class, acc + w));
                on[b] = true;
                dfs(r, sigma, path, on, acc + w, out);
                on[b] = false;
            }
            path.pop();
        }
    }
    let mut on = vec![false; n];
    for s in 0..n {
        on[s] = true;
        dfs(r, sigma, &mut vec![s], &mut on, 0, &mut out);
        on[s] = false;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::random_symmetric;
    use crate::reduced::build_reduced;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_has_one_tour() {
        let m = CostMatrix::from_rows(&[vec![0, 3, 4], vec![3, 0, 5], vec![4, 5, 0]]);
        assert_eq!(brute_tsp(&m).unwrap().value, 12);
        assert_eq!(enumerate_tsp(&m).unwrap().value, 12);
    }

    #[test]
    fn held_karp_agrees_with_enumeration() {
        for seed in 0..10 {
            let m = random_symmetric(8, 99, seed);
            let hk = brute_tsp(&m).unwrap();
            let en = enumerate_tsp(&m).unwrap();
            assert_eq!(hk.value, en.value);
            match hk.witness {
                Witness::Tour(t) => assert_eq!(tour_value(&t, &m), hk.value),
                _ => panic!("tour witness expected"),
            }
        }
    }

    #[test]
    fn four_vertices_cheap_pair() {
        // tours: (1 2 3 4), (1 2 4 3), (1 3 2 4)
        let m = CostMatrix::from_rows(&[
            vec![0, 1, 9, 9],
            vec![1, 0, 9, 9],
            vec![9, 9, 0, 1],
            vec![9, 9, 1, 0],
        ]);
        let sums = [1 + 9 + 1 + 9, 1 + 9 + 1 + 9, 9 + 9 + 9 + 9];
        assert_eq!(brute_tsp(&m).unwrap().value, *sums.iter().min().unwrap());
    }

    #[test]
    fn size_limits() {
        assert!(brute_tsp(&random_symmetric(14, 9, 1)).is_err());
        assert!(brute_min_pm(&random_symmetric(5, 9, 1)).is_err());
        assert!(brute_min_derangement(&random_symmetric(10, 9, 1)).is_err());
    }

    #[test]
    fn small_matchings() {
        let m = CostMatrix::from_rows(&[vec![0, 5], vec![5, 0]]);
        assert_eq!(brute_min_pm(&m).unwrap().value, 5);
        let m = random_symmetric(4, 50, 3);
        let three = [
            m.cost(0, 1) + m.cost(2, 3),
            m.cost(0, 2) + m.cost(1, 3),
            m.cost(0, 3) + m.cost(1, 2),
        ];
        assert_eq!(
            brute_min_pm(&m).unwrap().value,
            *three.iter().min().unwrap()
        );
    }

    #[test]
    fn uniform_derangement() {
        let m = CostMatrix::from_fn(4, |_, _| 6);
        assert_eq!(brute_min_derangement(&m).unwrap().value, 24);
    }

    #[test]
    fn lower_bound_chain() {
        for seed in 0..20 {
            let m = random_symmetric(8, 99, seed);
            let tour = brute_tsp(&m).unwrap().value;
            let der = brute_min_derangement(&m).unwrap().value;
            let pm = brute_min_pm(&m).unwrap().value;
            assert!(der <= tour);
            assert!(der <= 2 * pm);
            assert!(2 * pm <= tour);
        }
    }

    #[test]
    fn oracles_are_deterministic() {
        let m = random_symmetric(8, 20, 4);
        assert_eq!(brute_tsp(&m), brute_tsp(&m));
        assert_eq!(brute_min_pm(&m), brute_min_pm(&m));
        assert_eq!(brute_min_derangement(&m), brute_min_derangement(&m));
    }

    fn random_pm(n: usize, seed: u64) -> PerfectMatching {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pairs: Vec<(usize, usize)> = v.chunks(2).map(|c| (c[0], c[1])).collect();
        PerfectMatching::from_pairs(n, &pairs).unwrap()
    }

    #[test]
    fn cycle_generators_agree() {
        for seed in 0..10 {
            let m = random_symmetric(6, 30, seed);
            let s = random_pm(6, seed);
            let r = build_reduced(&m, &s.as_permutation()).unwrap();
            for bound in [-5, 0, 10, i64::MAX] {
                assert_eq!(
                    enumerate_acceptable_cycles(&r, &s, bound),
                    enumerate_acceptable_cycles_by_choice(&r, &s, bound)
                );
            }
        }
    }

    #[test]
    fn no_negative_cycle_at_minimum_matching() {
        for seed in 0..10 {
            let m = random_symmetric(10, 99, seed);
            let best = match brute_min_pm(&m).unwrap().witness {
                Witness::Matching(p) => p,
                _ => unreachable!(),
            };
            let r = build_reduced(&m, &best.as_permutation()).unwrap();
            assert!(enumerate_acceptable_cycles(&r, &best, -1).is_empty());
        }
    }
}
