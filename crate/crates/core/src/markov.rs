//! Exact Markov-chain treatment of the speculator-only market.
//!
//! With `N` agents each buying with probability `i / N` after demand `i`,
//! the next demand is `Binomial(N, i / N)`. Boundary rows are either
//! absorbing or, under the reset rule, replaced by `Binomial(N, 1/2)`.

use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{ln_pmf, pmf_window, PmfWindow};
use crate::{Error, Result};

/// Largest chain stored as a dense matrix (about 200 MB of f64).
pub const DENSE_LIMIT: usize = 5000;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainBoundary {
    Absorbing,
    ResetRule,
}

/// Anything that can push a distribution one step forward.
pub trait MarkovOperator: Sync {
    /// Number of agents; the state space is `0..=n`.
    fn n(&self) -> usize;

    fn boundary(&self) -> ChainBoundary;

    /// `out = p * Pi`.
    fn propagate(&self, p: &[f64], out: &mut [f64]);
}

fn row_distribution(n: usize, i: usize, boundary: ChainBoundary) -> PmfWindow {
    let reset = boundary == ChainBoundary::ResetRule && (i == 0 || i == n);
    let p = if reset { 0.5 } else { i as f64 / n as f64 };
    pmf_window(n as u64, p)
}

/// Dense `(N+1) x (N+1)` row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    boundary: ChainBoundary,
    entries: Vec<f64>,
    /// Half-open column range holding the non-zero entries of each row.
    support: Vec<(usize, usize)>,
}

pub fn transition_matrix(n: usize, boundary: ChainBoundary) -> Result<TransitionMatrix> {
    if n == 0 {
        return Err(Error::InvalidParams("the chain needs at least one agent".into()));
    }
    if n > DENSE_LIMIT {
        return Err(Error::Resource(format!(
            "N = {n} exceeds the dense limit {DENSE_LIMIT}; use MatrixFreeChain"
        )));
    }
    let size = n + 1;
    let mut entries = vec![0.0; size * size];
    let support: Vec<(usize, usize)> = entries
        .par_chunks_mut(size)
        .enumerate()
        .map(|(i, row)| {
            let dist = row_distribution(n, i, boundary);
            let start = dist.start as usize;
            row[start..start + dist.mass.len()].copy_from_slice(&dist.mass);
            (start, start + dist.mass.len())
        })
        .collect();
    Ok(TransitionMatrix {
        n,
        boundary,
        entries,
        support,
    })
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.n + 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let size = self.size();
        &self.entries[i * size..(i + 1) * size]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Writes the matrix as a CSV grid without a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.size() {
            out.write_record(self.row(i).iter().map(|x| x.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

impl MarkovOperator for TransitionMatrix {
    fn n(&self) -> usize {
        self.n
    }

    fn boundary(&self) -> ChainBoundary {
        self.boundary
    }

    fn propagate(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &weight) in p.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            let (lo, hi) = self.support[i];
            let row = &self.row(i)[lo..hi];
            for (o, &r) in out[lo..hi].iter_mut().zip(row) {
                *o += weight * r;
            }
        }
    }
}

/// Chain whose rows are regenerated on every step instead of stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixFreeChain {
    pub n: usize,
    pub boundary: ChainBoundary,
}

impl MarkovOperator for MatrixFreeChain {
    fn n(&self) -> usize {
        self.n
    }

    fn boundary(&self) -> ChainBoundary {
        self.boundary
    }

    fn propagate(&self, p: &[f64], out: &mut [f64]) {
        let size = self.n + 1;
        let chunks = rayon::current_num_threads().max(1);
        let per_chunk = size.div_ceil(chunks);
        let partials: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; size];
                for i in c * per_chunk..((c + 1) * per_chunk).min(size) {
                    if p[i] == 0.0 {
                        continue;
                    }
                    for (j, m) in row_distribution(self.n, i, self.boundary).iter() {
                        acc[j as usize] += p[i] * m;
                    }
                }
                acc
            })
            .collect();
        out.iter_mut().for_each(|x| *x = 0.0);
        for partial in partials {
            for (o, v) in out.iter_mut().zip(partial) {
                *o += v;
            }
        }
    }
}

/// Dense matrix when it fits, otherwise the matrix-free chain.
pub fn chain(n: usize, boundary: ChainBoundary) -> Result<Box<dyn MarkovOperator>> {
    if n <= DENSE_LIMIT {
        Ok(Box::new(transition_matrix(n, boundary)?))
    } else {
        Ok(Box::new(MatrixFreeChain { n, boundary }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryResult {
    pub distribution: Vec<f64>,
    /// Max-norm of `pi - pi * Pi` for the returned distribution.
    pub residual: f64,
    pub iterations: usize,
    /// False for absorbing chains: the returned vector is the limit from the
    /// uniform start, one of many stationary distributions.
    pub unique: bool,
}

impl StationaryResult {
    /// `d,probability`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["d", "probability"])?;
        for (d, p) in self.distribution.iter().enumerate() {
            out.write_record([d.to_string(), p.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Power iteration from the uniform vector until the max-norm change drops
/// below `tol`.
pub fn stationary_distribution<M: MarkovOperator + ?Sized>(
    chain: &M,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance {tol} must be positive")));
    }
    let size = chain.n() + 1;
    let mut current = vec![1.0 / size as f64; size];
    let mut next = vec![0.0; size];
    let mut change = f64::INFINITY;
    for iteration in 1..=max_iter {
        chain.propagate(&current, &mut next);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        change = max_abs_diff(&current, &next);
        std::mem::swap(&mut current, &mut next);
        if change < tol {
            chain.propagate(&current, &mut next);
            return Ok(StationaryResult {
                residual: max_abs_diff(&current, &next),
                distribution: current,
                iterations: iteration,
                unique: chain.boundary() == ChainBoundary::ResetRule,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: change,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Column sum `S(N, j) = sum_i C(N, j) (i/N)^j (1 - i/N)^(N-j)` evaluated in
/// log space.
pub fn beta_column_sum(n: u64, j: u64) -> f64 {
    assert!(j <= n, "column {j} outside 0..={n}");
    (0..=n)
        .map(|i| ln_pmf(n, j, i as f64 / n as f64).exp())
        .sum()
}

/// `S(N, j) - N / (N + 1)` in exact rational arithmetic, the gap between the
/// column sum and the value of its integral approximation.
pub fn beta_identity_residual_exact(n: u64, j: u64) -> BigRational {
    assert!(n >= 1 && j <= n, "need 0 <= j <= n and n >= 1");
    let big_n = BigInt::from(n);
    let mut sum = BigInt::from(0);
    for i in 0..=n {
        sum += BigInt::from(i).pow(j as u32) * BigInt::from(n - i).pow((n - j) as u32);
    }
    let choose = binomial_coefficient(n, j);
    // S = C(N, j) * sum / N^N
    let s = BigRational::new(choose * sum, big_n.pow(n as u32));
    let limit = BigRational::new(big_n.clone(), big_n + BigInt::one());
    s - limit
}

/// The exact gap rounded once to f64.
///
/// Interior gaps are far below the resolution of `S` itself, and for large
/// `N` below the smallest positive f64, where this returns 0. Use
/// [`beta_identity_log10_gap`] to compare magnitudes there.
pub fn beta_identity_residual(n: u64, j: u64) -> f64 {
    beta_identity_residual_exact(n, j).to_f64().unwrap_or(f64::NAN)
}

/// `log10 |S(N, j) - N / (N + 1)|`; `-inf` when the gap is zero.
pub fn beta_identity_log10_gap(n: u64, j: u64) -> f64 {
    let gap = beta_identity_residual_exact(n, j);
    (log2_magnitude(gap.numer()) - log2_magnitude(gap.denom())) * std::f64::consts::LOG10_2
}

fn log2_magnitude(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return x.to_f64().unwrap_or(0.0).abs().log2();
    }
    let drop = bits - 64;
    (x >> drop as usize).to_f64().unwrap_or(f64::NAN).abs().log2() + drop as f64
}

fn binomial_coefficient(n: u64, k: u64) -> BigInt {
    let k = k.min(n - k);
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}
