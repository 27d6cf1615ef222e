//! Price-efficient buy probabilities.
//!
//! The demand-efficient rule keeps `E[d_t] = d_{t-1}`. The exact
//! price-efficient rule instead asks for `E[p_t] = p_{t-1}`, which has no
//! closed form; it is solved here by bisection on the speculator buy
//! probability, using the exact distribution of the next demand.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binomial::{pmf_window, PmfWindow};
use crate::market::{price, speculator_buy_prob, ModelParams};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_BISECTIONS: usize = 200;

/// Treatment of the next-demand state `d' = N`, whose price is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regularization {
    /// Expectation conditioned on `d' < N`.
    ConditionOnFinite,
    /// The price at `d' = N` is replaced by `cap`, and prices above `cap`
    /// are capped as well.
    CapPrice { cap: f64 },
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::ConditionOnFinite
    }
}

/// Exact distribution of the next demand when every speculator buys with
/// probability `q`: `Binomial(N_s, q) * Binomial(N_r, 1/2)`.
pub fn next_demand_distribution(q: f64, params: &ModelParams) -> PmfWindow {
    let speculators = pmf_window(params.n_speculators as u64, q);
    if params.n_random == 0 {
        return speculators;
    }
    speculators.convolve(&pmf_window(params.n_random as u64, 0.5))
}

/// Expected next price given buy probability `q`, under the default
/// regularization.
pub fn expected_price(q: f64, params: &ModelParams) -> Result<f64> {
    expected_price_with(q, params, Regularization::ConditionOnFinite)
}

pub fn expected_price_with(q: f64, params: &ModelParams, reg: Regularization) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParams(format!("probability {q} outside [0, 1]")));
    }
    let n = params.n_total();
    let dist = next_demand_distribution(q, params);
    match reg {
        Regularization::ConditionOnFinite => {
            let mut mass = 0.0;
            let mut weighted = 0.0;
            for (d, m) in dist.iter() {
                if d < n as u64 {
                    mass += m;
                    weighted += m * d as f64 / (n as u64 - d) as f64;
                }
            }
            if mass <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "no probability mass below d' = N at q = {q}"
                )));
            }
            Ok(weighted / mass)
        }
        Regularization::CapPrice { cap } => {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::InvalidParams(format!("price cap {cap} must be positive")));
            }
            let mut mass = 0.0;
            let mut weighted = 0.0;
            for (d, m) in dist.iter() {
                let p = if d < n as u64 {
                    (d as f64 / (n as u64 - d) as f64).min(cap)
                } else {
                    cap
                };
                mass += m;
                weighted += m * p;
            }
            Ok(weighted / mass)
        }
    }
}

/// Limit of the expected price as `q -> 1`. Without random traders the
/// conditioned distribution collapses onto `d' = N - 1`.
fn expected_price_at_one(params: &ModelParams, reg: Regularization) -> Result<f64> {
    match expected_price_with(1.0, params, reg) {
        Err(Error::Degenerate(_)) => price(params.n_total() - 1, params.n_total()),
        other => other,
    }
}

/// Buy probability `q*` with `|E[p_t | q*] - p_{t-1}| <= tol`.
///
/// When no probability in [0, 1] reaches the target the result is clamped to
/// the nearer end.
pub fn solve_price_efficient(prev_demand: u32, params: &ModelParams, tol: f64) -> Result<f64> {
    solve_price_efficient_with(prev_demand, params, tol, Regularization::default())
}

pub fn solve_price_efficient_with(
    prev_demand: u32,
    params: &ModelParams,
    tol: f64,
    reg: Regularization,
) -> Result<f64> {
    params.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance {tol} must be positive")));
    }
    let n = params.n_total();
    if prev_demand == 0 || prev_demand >= n {
        return Err(Error::DemandOutOfRange {
            demand: prev_demand as i64,
            n_total: n,
        });
    }
    let target = price(prev_demand, n)?;

    let at_zero = expected_price_with(0.0, params, reg)?;
    if at_zero >= target - tol {
        return Ok(0.0);
    }
    let at_one = expected_price_at_one(params, reg)?;
    if at_one <= target + tol {
        return Ok(1.0);
    }

    // Start from the demand-efficient guess; the two rules differ only by a
    // finite-size correction, so a narrow bracket usually suffices.
    let guess = speculator_buy_prob(prev_demand, params);
    let (mut lo, mut hi) = bracket(guess, target, params, reg)?;
    let mut best = (f64::INFINITY, guess);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let value = expected_price_with(mid, params, reg)?;
        let residual = value - target;
        if residual.abs() < best.0 {
            best = (residual.abs(), mid);
        }
        if residual.abs() <= tol {
            return Ok(mid);
        }
        if residual < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1e-300) {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_BISECTIONS,
        residual: best.0,
    })
}

/// Interval `[lo, hi]` around `guess` with `f(lo) < target < f(hi)`.
fn bracket(guess: f64, target: f64, params: &ModelParams, reg: Regularization) -> Result<(f64, f64)> {
    let mut width = 1.0 / params.n_speculators as f64;
    loop {
        let lo = (guess - width).max(0.0);
        let hi = (guess + width).min(1.0);
        let lo_ok = lo == 0.0 || expected_price_with(lo, params, reg)? < target;
        let hi_ok = hi == 1.0 || expected_price_with(hi, params, reg)? > target;
        if lo_ok && hi_ok {
            return Ok((lo, hi));
        }
        width *= 4.0;
    }
}

/// Demand-efficient and price-efficient buy probabilities over all demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyProfile {
    pub params: ModelParams,
    /// Indexed by previous demand `0..=N`. The ends hold the clamped
    /// solutions 0 and 1.
    pub q_price: Vec<f64>,
    pub q_demand: Vec<f64>,
    pub regularization: Regularization,
}

impl EfficiencyProfile {
    pub fn n_total(&self) -> u32 {
        self.params.n_total()
    }

    /// Largest `|q_price - q_demand|` over interior demands `1..N`, with the
    /// demand where it occurs.
    pub fn max_abs_difference(&self) -> (u32, f64) {
        (1..self.n_total() as usize)
            .map(|d| (d as u32, (self.q_price[d] - self.q_demand[d]).abs()))
            .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
    }

    /// Expected demand change `E[d_t] - d_{t-1}` under the price-efficient rule.
    pub fn price_rule_drift(&self, prev_demand: u32) -> f64 {
        self.params.n_speculators as f64 * self.q_price[prev_demand as usize]
            + self.params.n_random as f64 / 2.0
            - prev_demand as f64
    }

    /// `d,d_over_N,q_demand,q_price`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.n_total() as f64;
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["d", "d_over_N", "q_demand", "q_price"])?;
        for d in 0..self.q_price.len() {
            out.write_record([
                d.to_string(),
                (d as f64 / n).to_string(),
                self.q_demand[d].to_string(),
                self.q_price[d].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn compare_profiles(params: &ModelParams, tol: f64) -> Result<EfficiencyProfile> {
    compare_profiles_with(params, tol, Regularization::default())
}

pub fn compare_profiles_with(
    params: &ModelParams,
    tol: f64,
    reg: Regularization,
) -> Result<EfficiencyProfile> {
    params.validate()?;
    let n = params.n_total();
    let interior: Vec<f64> = (1..n)
        .into_par_iter()
        .map(|d| solve_price_efficient_with(d, params, tol, reg))
        .collect::<Result<_>>()?;
    let mut q_price = Vec::with_capacity(n as usize + 1);
    q_price.push(0.0);
    q_price.extend(interior);
    q_price.push(1.0);
    let q_demand = (0..=n).map(|d| speculator_buy_prob(d, params)).collect();
    Ok(EfficiencyProfile {
        params: *params,
        q_price,
        q_demand,
        regularization: reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(ns: u32, nr: u32) -> ModelParams {
        ModelParams::new(ns, nr).unwrap()
    }

    /// Direct summation over every outcome with explicit binomial
    /// coefficients; independent of the log-space windows.
    fn brute_expected_price(q: f64, ns: u32, nr: u32) -> f64 {
        fn choose(n: u32, k: u32) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        let n = ns + nr;
        let (mut mass, mut weighted) = (0.0, 0.0);
        for a in 0..=ns {
            let pa = choose(ns, a) * q.powi(a as i32) * (1.0 - q).powi((ns - a) as i32);
            for b in 0..=nr {
                let pb = choose(nr, b) * 0.5f64.powi(nr as i32);
                let d = a + b;
                if d < n {
                    mass += pa * pb;
                    weighted += pa * pb * d as f64 / (n - d) as f64;
                }
            }
        }
        weighted / mass
    }

    #[test]
    fn zero_probability_without_random_traders_prices_zero() {
        assert_eq!(expected_price(0.0, &params(10, 0)).unwrap(), 0.0);
    }

    #[test]
    fn all_buy_without_random_traders_is_degenerate() {
        let err = expected_price(1.0, &params(10, 0)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn matches_direct_summation() {
        for &q in &[0.0, 0.1, 0.4, 0.6, 0.95] {
            let fast = expected_price(q, &params(20, 2)).unwrap();
            let slow = brute_expected_price(q, 20, 2);
            assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0), "q={q}: {fast} vs {slow}");
        }
        assert!(brute_expected_price(0.6, 20, 2) > brute_expected_price(0.4, 20, 2));
        assert!(expected_price(0.6, &params(20, 2)).unwrap() > expected_price(0.4, &params(20, 2)).unwrap());
    }

    #[test]
    fn expected_price_is_strictly_increasing() {
        for p in [params(20, 2), params(100, 10), params(4, 0), params(7, 3)] {
            let mut last = -1.0;
            for i in 0..100 {
                let q = i as f64 / 99.0;
                let value = match expected_price(q, &p) {
                    Ok(v) => v,
                    Err(Error::Degenerate(_)) => break,
                    Err(e) => panic!("{e}"),
                };
                assert!(value > last, "not increasing at q={q} for {p:?}");
                last = value;
            }
        }
    }

    #[test]
    fn capped_regularization_bounds_the_price() {
        let p = params(4, 0);
        let capped = expected_price_with(1.0, &p, Regularization::CapPrice { cap: 50.0 }).unwrap();
        assert_eq!(capped, 50.0);
        assert!(expected_price_with(0.5, &p, Regularization::CapPrice { cap: 0.0 }).is_err());
    }

    #[test]
    fn four_speculators_enumeration_oracle() {
        // Independent bisection on the brute-force sum.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if brute_expected_price(mid, 4, 0) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let q = solve_price_efficient(2, &params(4, 0), 1e-10).unwrap();
        assert!((brute_expected_price(q, 4, 0) - 1.0).abs() <= 1e-10);
        assert!((q - oracle).abs() < 1e-8, "{q} vs {oracle}");
        // Convexity of the price pulls the solution below the symmetric 1/2.
        assert!(q < 0.5);
    }

    #[test]
    fn solution_near_boundary_respects_contract() {
        let p = params(20, 2);
        for d in [1u32, 2, 20, 21] {
            let q = solve_price_efficient(d, &p, DEFAULT_TOL).unwrap();
            assert!((0.0..=1.0).contains(&q));
            let residual = expected_price(q, &p).unwrap_or(f64::INFINITY) - price(d, 22).unwrap();
            if q == 0.0 {
                assert!(residual >= -DEFAULT_TOL);
            } else if q == 1.0 {
                assert!(residual <= DEFAULT_TOL);
            } else {
                assert!(residual.abs() <= DEFAULT_TOL, "d={d} residual={residual}");
            }
        }
    }

    #[test]
    fn solver_rejects_bad_input() {
        let p = params(20, 2);
        assert!(solve_price_efficient(5, &p, 0.0).is_err());
        assert!(solve_price_efficient(0, &p, 1e-10).is_err());
        assert!(solve_price_efficient(22, &p, 1e-10).is_err());
    }

    #[test]
    fn profile_for_four_speculators_matches_oracle() {
        let profile = compare_profiles(&params(4, 0), 1e-10).unwrap();
        for d in 1..4u32 {
            let target = d as f64 / (4 - d) as f64;
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if brute_expected_price(mid, 4, 0) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((profile.q_price[d as usize] - 0.5 * (lo + hi)).abs() < 1e-8, "d={d}");
        }
    }

    #[test]
    fn profile_demand_column_is_closed_form() {
        let p = params(20, 2);
        let profile = compare_profiles(&p, DEFAULT_TOL).unwrap();
        assert_eq!(profile.q_price.len(), 23);
        for d in 0..=22u32 {
            assert_eq!(profile.q_demand[d as usize], speculator_buy_prob(d, &p));
            assert!((0.0..=1.0).contains(&profile.q_price[d as usize]));
        }
    }

    #[test]
    fn difference_shrinks_with_system_size() {
        let small = compare_profiles(&params(20, 2), DEFAULT_TOL).unwrap();
        let large = compare_profiles(&params(100, 10), DEFAULT_TOL).unwrap();
        assert!(large.max_abs_difference().1 < small.max_abs_difference().1);
    }

    #[test]
    fn profile_csv_header() {
        let profile = compare_profiles(&params(4, 0), 1e-10).unwrap();
        let mut buf = Vec::new();
        profile.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("d,d_over_N,q_demand,q_price"));
        assert_eq!(lines.count(), 5);
    }
}
