//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the code paths under test beyond reading plain
//! data out of the library's types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use labelshed::evaluator::UnclearPolicy;
use labelshed::triage::ReviewVerdict;

// ---------------------------------------------------------------------------
// multi-label accuracy

pub struct OracleRecord {
    pub correct: BTreeSet<u32>,
    pub unclear: BTreeSet<u32>,
    pub wrong: BTreeSet<u32>,
    pub problematic: bool,
    pub prediction: u32,
}

/// Fixed-point closure over a raw edge list.
pub fn closure(edges: &[(u32, u32)], labels: &BTreeSet<u32>) -> BTreeSet<u32> {
    let mut out = labels.clone();
    loop {
        let before = out.len();
        for &(src, dst) in edges {
            if out.contains(&src) {
                out.insert(dst);
            }
        }
        if out.len() == before {
            return out;
        }
    }
}

/// Returns (numerator, denominator) of multi-label accuracy.
pub fn brute_force_mla(records: &[OracleRecord], edges: &[(u32, u32)], policy: UnclearPolicy) -> (u64, u64) {
    let (mut num, mut den) = (0, 0);
    for r in records {
        if r.problematic {
            continue;
        }
        let credited = closure(edges, &r.correct).contains(&r.prediction);
        if credited {
            num += 1;
            den += 1;
        } else if r.unclear.contains(&r.prediction) {
            match policy {
                UnclearPolicy::Exclude => {}
                UnclearPolicy::CountWrong => den += 1,
                UnclearPolicy::CountCorrect => {
                    num += 1;
                    den += 1;
                }
            }
        } else {
            // wrong or novel
            den += 1;
        }
    }
    (num, den)
}

// ---------------------------------------------------------------------------
// vote aggregation

/// Plurality with ties to unclear, by explicit counting over the four options.
pub fn plurality_oracle(votes: &[ReviewVerdict]) -> (ReviewVerdict, bool) {
    let options = [
        ReviewVerdict::Correct,
        ReviewVerdict::Wrong,
        ReviewVerdict::Unclear,
        ReviewVerdict::Problematic,
    ];
    let counts: Vec<usize> = options
        .iter()
        .map(|o| votes.iter().filter(|v| *v == o).count())
        .collect();
    let best = *counts.iter().max().unwrap();
    let winners: Vec<usize> = (0..4).filter(|&i| counts[i] == best).collect();
    let verdict = if winners.len() > 1 {
        ReviewVerdict::Unclear
    } else {
        options[winners[0]]
    };
    let unanimous = votes.iter().all(|v| *v == votes[0]);
    (verdict, !unanimous)
}

// ---------------------------------------------------------------------------
// nearest neighbours

/// Double loop over all pairs, full sort by (distance, index).
pub fn naive_knn(queries: &[Vec<f32>], corpus: &[Vec<f32>], k: usize, cosine: bool) -> Vec<Vec<(usize, f64)>> {
    queries
        .iter()
        .map(|q| {
            let mut all: Vec<(usize, f64)> = corpus
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let d = if cosine {
                        let mut dot = 0.0f64;
                        let mut qq = 0.0f64;
                        let mut cc = 0.0f64;
                        for j in 0..q.len() {
                            dot += q[j] as f64 * c[j] as f64;
                            qq += q[j] as f64 * q[j] as f64;
                            cc += c[j] as f64 * c[j] as f64;
                        }
                        if qq == 0.0 || cc == 0.0 {
                            1.0
                        } else {
                            1.0 - dot / (qq.sqrt() * cc.sqrt())
                        }
                    } else {
                        let mut s = 0.0f64;
                        for j in 0..q.len() {
                            let d = q[j] as f64 - c[j] as f64;
                            s += d * d;
                        }
                        s.sqrt()
                    };
                    (i, d)
                })
                .collect();
            all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

// ---------------------------------------------------------------------------
// taxonomy

/// Every (ancestor, path length) reachable by walking parent edges, over all
/// paths; keeps the minimum length per ancestor.
pub fn all_upward_paths(node: &str, parents: &BTreeMap<String, Vec<String>>) -> BTreeMap<String, u32> {
    let mut best = BTreeMap::new();
    let mut stack = vec![(node.to_string(), 0u32)];
    while let Some((n, d)) = stack.pop() {
        let e = best.entry(n.clone()).or_insert(u32::MAX);
        if d < *e {
            *e = d;
        }
        for p in parents.get(&n).into_iter().flatten() {
            stack.push((p.clone(), d + 1));
        }
    }
    best
}

pub fn exhaustive_distance(a: &str, b: &str, parents: &BTreeMap<String, Vec<String>>) -> Option<u32> {
    if a == b {
        return Some(0);
    }
    let pa = all_upward_paths(a, parents);
    let pb = all_upward_paths(b, parents);
    let mut best: Option<u32> = None;
    for (node, da) in &pa {
        if let Some(db) = pb.get(node) {
            let d = (*da).max(*db);
            best = Some(best.map_or(d, |x| x.min(d)));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// binomial intervals

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

fn binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
        + k as f64 * p.ln()
        + (n - k) as f64 * (1.0 - p).ln();
    ln.exp()
}

/// P(X >= k) for X ~ Bin(n, p), by summation.
pub fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    (k..=n).map(|i| binom_pmf(i, n, p)).sum()
}

/// P(X <= k) for X ~ Bin(n, p), by summation.
pub fn lower_tail(k: u64, n: u64, p: f64) -> f64 {
    (0..=k).map(|i| binom_pmf(i, n, p)).sum()
}

fn bisect(mut lo: f64, mut hi: f64, increasing: bool, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let below = f(mid) < target;
        if below == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Clopper-Pearson bounds from binomial tails.
pub fn cp_oracle(k: u64, n: u64, alpha: f64) -> (f64, f64) {
    let lower = if k == 0 {
        0.0
    } else {
        // P(X >= k | p) increases with p
        bisect(0.0, 1.0, true, alpha / 2.0, |p| upper_tail(k, n, p))
    };
    let upper = if k == n {
        1.0
    } else {
        // P(X <= k | p) decreases with p
        bisect(0.0, 1.0, false, alpha / 2.0, |p| lower_tail(k, n, p))
    };
    (lower, upper)
}

// ---------------------------------------------------------------------------
// chi-square

pub fn textbook_chi_square(cells: &[Vec<u64>]) -> (f64, u32) {
    let r = cells.len();
    let c = cells[0].len();
    let n: f64 = cells.iter().flatten().map(|&x| x as f64).sum();
    let mut stat = 0.0;
    for j in 0..c {
        let col: f64 = (0..r).map(|i| cells[i][j] as f64).sum();
        for i in 0..r {
            let row: f64 = cells[i].iter().map(|&x| x as f64).sum();
            let e = row * col / n;
            stat += (cells[i][j] as f64 - e).powi(2) / e;
        }
    }
    (stat, ((r - 1) * (c - 1)) as u32)
}

/// Gamma(df / 2) for integer df, from the factorial and half-integer forms.
fn gamma_half(df: u32) -> f64 {
    if df % 2 == 0 {
        (1..df / 2).map(|i| i as f64).product()
    } else {
        // Gamma(m + 1/2) = (2m)! / (4^m m!) * sqrt(pi)
        let m = (df - 1) / 2;
        let mut g = std::f64::consts::PI.sqrt();
        for i in 0..m {
            g *= i as f64 + 0.5;
        }
        g
    }
}

/// Upper tail of chi-square by Simpson integration in t = sqrt(x).
pub fn chi_square_tail_quadrature(stat: f64, df: u32) -> f64 {
    let k = df as f64;
    let norm = 2f64.powf(k / 2.0) * gamma_half(df);
    let f = |t: f64| 2.0 * t.powf(k - 1.0) * (-t * t / 2.0).exp() / norm;
    let a = stat.sqrt();
    let b = a + 40.0;
    let steps = 200_000;
    let h = (b - a) / steps as f64;
    let mut sum = f(a) + f(b);
    for i in 1..steps {
        let x = a + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    sum * h / 3.0
}
