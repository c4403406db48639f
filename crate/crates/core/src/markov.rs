//! Finite ergodic discrete-time Markov chains.
//!
//! A [`Dtmc`] is validated on construction (row-stochastic, irreducible,
//! aperiodic) and carries a cache of its matrix powers `P^0 ..= P^K`. The
//! AoD cost and kernel look up `p_ij^(k)` for every state/action pair, so the
//! powers are computed once and shared.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Tolerance on each row sum of a transition matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Largest power cached when no bound is given: `tau1_max + tau2_max` for the
/// default truncation of 20 + 20.
pub const DEFAULT_CACHE_BOUND: usize = 40;

const STATIONARY_TOLERANCE: f64 = 1e-12;
const STATIONARY_MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("a chain needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("transition matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("chain is not irreducible: state {unreachable} is not mutually reachable with state 0")]
    NotIrreducible { unreachable: usize },
    #[error("chain is periodic with period {period}")]
    Periodic { period: usize },
    #[error("exponent {k} exceeds the cached bound {bound}")]
    ExponentOutOfRange { k: usize, bound: usize },
    #[error("state {state} out of range for a {n}-state chain")]
    StateOutOfRange { state: usize, n: usize },
    #[error("stationary distribution did not converge after {iterations} iterations (last change {change:e})")]
    StationaryNotConverged { iterations: usize, change: f64 },
}

/// Dense row-major square matrix.
#[derive(Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        SquareMatrix { n, data }
    }

    fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        SquareMatrix { n, data: rows.iter().flatten().copied().collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n..(row + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        SquareMatrix { n, data }
    }
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.chunks(self.n)).finish()
    }
}

/// Stationary distribution of an ergodic chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pub pi: Vec<f64>,
}

impl StationaryDist {
    /// Long-run rate of state changes, `sum_i pi_i (1 - p_ii)`.
    pub fn transition_rate(&self, dtmc: &Dtmc) -> f64 {
        self.pi.iter().enumerate().map(|(i, pi)| pi * (1.0 - dtmc.p(i, i))).sum()
    }
}

/// A validated ergodic discrete-time Markov chain with cached n-step powers.
#[derive(Debug, Clone)]
pub struct Dtmc {
    p: SquareMatrix,
    powers: Vec<SquareMatrix>,
}

impl Dtmc {
    /// Validates `rows` and caches powers up to [`DEFAULT_CACHE_BOUND`].
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, MarkovError> {
        Self::with_cache_bound(rows, DEFAULT_CACHE_BOUND)
    }

    pub fn with_cache_bound(rows: Vec<Vec<f64>>, bound: usize) -> Result<Self, MarkovError> {
        validate_rows(&rows)?;
        let p = SquareMatrix::from_rows(&rows);
        check_ergodic(&p)?;
        Ok(Self::build(p, bound))
    }

    /// Two-state chain `[[1 - p01, p01], [p10, 1 - p10]]`.
    pub fn two_state(p01: f64, p10: f64) -> Result<Self, MarkovError> {
        Self::new(vec![vec![1.0 - p01, p01], vec![p10, 1.0 - p10]])
    }

    /// Builds a chain without the ergodicity check. Rows must still be
    /// stochastic; used by tests that need degenerate rows.
    #[cfg(test)]
    pub(crate) fn new_unchecked(rows: Vec<Vec<f64>>) -> Self {
        validate_rows(&rows).expect("rows must be stochastic");
        Self::build(SquareMatrix::from_rows(&rows), DEFAULT_CACHE_BOUND)
    }

    fn build(p: SquareMatrix, bound: usize) -> Self {
        let mut powers = Vec::with_capacity(bound + 1);
        powers.push(SquareMatrix::identity(p.n()));
        for k in 0..bound {
            let next = powers[k].mul(&p);
            powers.push(next);
        }
        Dtmc { p, powers }
    }

    /// Same chain with the power cache extended (or shrunk) to `bound`.
    pub fn rebound(&self, bound: usize) -> Self {
        if bound + 1 == self.powers.len() {
            return self.clone();
        }
        Self::build(self.p.clone(), bound)
    }

    pub fn n(&self) -> usize {
        self.p.n()
    }

    pub fn cache_bound(&self) -> usize {
        self.powers.len() - 1
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.p
    }

    /// One-step transition probability `p_ij`.
    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p.get(i, j)
    }

    /// `P^k`, from the cache.
    pub fn n_step(&self, k: usize) -> Result<&SquareMatrix, MarkovError> {
        self.powers.get(k).ok_or(MarkovError::ExponentOutOfRange { k, bound: self.cache_bound() })
    }

    /// `p_ij^(k)`. Panics if `k` is beyond the cache bound.
    #[inline]
    pub fn p_n(&self, k: usize, i: usize, j: usize) -> f64 {
        self.powers[k].get(i, j)
    }

    /// `(p_jj)^k`: probability of `k` consecutive self-loops at `j`. This is
    /// the scalar power of the one-step entry, not the `(j, j)` entry of `P^k`.
    pub fn self_stay_power(&self, j: usize, k: u32) -> Result<f64, MarkovError> {
        if j >= self.n() {
            return Err(MarkovError::StateOutOfRange { state: j, n: self.n() });
        }
        Ok(self.p(j, j).powi(k as i32))
    }

    /// Stationary distribution by power iteration from the uniform vector.
    pub fn stationary(&self) -> Result<StationaryDist, MarkovError> {
        let n = self.n();
        let mut x = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        let mut change = f64::INFINITY;
        for _ in 0..STATIONARY_MAX_ITERATIONS {
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &xi) in x.iter().enumerate() {
                for (j, v) in next.iter_mut().enumerate() {
                    *v += xi * self.p(i, j);
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|v| *v /= total);
            change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut x, &mut next);
            if change <= STATIONARY_TOLERANCE {
                return Ok(StationaryDist { pi: x });
            }
        }
        Err(MarkovError::StationaryNotConverged { iterations: STATIONARY_MAX_ITERATIONS, change })
    }

    /// Draws the successor of state `i`.
    pub fn step_sample<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        sample_row(self.p.row(i), rng)
    }
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = j;
            if u < acc {
                return j;
            }
        }
    }
    // Rounding left acc slightly below 1.
    last_positive
}

fn validate_rows(rows: &[Vec<f64>]) -> Result<(), MarkovError> {
    let n = rows.len();
    if n < 2 {
        return Err(MarkovError::TooFewStates(n));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(MarkovError::NotSquare { row: r, len: row.len(), expected: n });
        }
        for (c, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(MarkovError::EntryOutOfRange { row: r, col: c, value: v });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(MarkovError::RowSum { row: r, sum });
        }
    }
    Ok(())
}

/// Irreducibility by forward/backward reachability from state 0, then the
/// period as the gcd of `level(u) + 1 - level(v)` over support edges, with
/// BFS levels from state 0.
fn check_ergodic(p: &SquareMatrix) -> Result<(), MarkovError> {
    let n = p.n();
    let forward = bfs_levels(n, |u, v| p.get(u, v) > 0.0);
    if let Some(s) = forward.iter().position(Option::is_none) {
        return Err(MarkovError::NotIrreducible { unreachable: s });
    }
    let backward = bfs_levels(n, |u, v| p.get(v, u) > 0.0);
    if let Some(s) = backward.iter().position(Option::is_none) {
        return Err(MarkovError::NotIrreducible { unreachable: s });
    }
    let mut period = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p.get(u, v) > 0.0 {
                let lu = forward[u].unwrap() as i64;
                let lv = forward[v].unwrap() as i64;
                period = gcd(period, (lu + 1 - lv).unsigned_abs() as usize);
            }
        }
    }
    if period != 1 {
        return Err(MarkovError::Periodic { period });
    }
    Ok(())
}

fn bfs_levels(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Option<usize>> {
    let mut level = vec![None; n];
    level[0] = Some(0);
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for v in 0..n {
            if level[v].is_none() && edge(u, v) {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
