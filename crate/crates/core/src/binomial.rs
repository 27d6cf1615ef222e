//! Binomial probability mass functions evaluated in log space.
//!
//! The evaluations use `0^0 = 1`, so `p = 0` puts all mass on `k = 0` and
//! `p = 1` puts all mass on `k = n`.

use std::f64::consts::PI;

/// `ln(n!) - ln(sqrt(2 pi n) (n/e)^n)`, the error of Stirling's formula.
fn stirling_error(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        // n! is exact in f64 here
        let factorial: f64 = (1..=n).map(|k| k as f64).product();
        let x = n as f64;
        return factorial.ln() - (x + 0.5) * x.ln() + x - 0.5 * (2.0 * PI).ln();
    }
    let x = n as f64;
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x / m) + m - x`, evaluated without cancellation when
/// `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut term = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            term *= v2;
            let next = s + term / (2 * j + 1) as f64;
            if next == s {
                return next;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Natural log of the binomial coefficient `C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n);
    ln_pmf(n, k, 0.5) + n as f64 * std::f64::consts::LN_2
}

/// `ln P(K = k)` for `K ~ Binomial(n, p)`; `-inf` for impossible outcomes.
///
/// Saddle-point form (Loader, 2000): relative accuracy near machine
/// precision for every `n`, unlike a difference of log-gamma values.
pub fn ln_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -deviance(nf, nf * q) - nf * p
        } else {
            nf * (-p).ln_1p()
        };
    }
    if k == n {
        return if q < 0.1 {
            -deviance(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let kf = k as f64;
    let lc = stirling_error(n)
        - stirling_error(k)
        - stirling_error(n - k)
        - deviance(kf, nf * p)
        - deviance(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// Probability mass of `Binomial(n, p)` restricted to the outcomes that do not
/// underflow.
///
/// Mass outside the returned window is below `exp(-700)` relative to the
/// mode, so dropping it is exact at f64 precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfWindow {
    /// Outcome of `mass[0]`.
    pub start: u64,
    pub mass: Vec<f64>,
}

impl PmfWindow {
    pub fn end(&self) -> u64 {
        self.start + self.mass.len() as u64
    }

    pub fn get(&self, k: u64) -> f64 {
        if k < self.start || k >= self.end() {
            0.0
        } else {
            self.mass[(k - self.start) as usize]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.mass
            .iter()
            .enumerate()
            .map(move |(i, &m)| (self.start + i as u64, m))
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Distribution of the sum of two independent variables.
    pub fn convolve(&self, other: &PmfWindow) -> PmfWindow {
        if self.mass.is_empty() || other.mass.is_empty() {
            return PmfWindow {
                start: self.start + other.start,
                mass: Vec::new(),
            };
        }
        let mut mass = vec![0.0; self.mass.len() + other.mass.len() - 1];
        for (i, &a) in self.mass.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.mass.iter().enumerate() {
                mass[i + j] += a * b;
            }
        }
        PmfWindow {
            start: self.start + other.start,
            mass,
        }
    }
}

/// Full probability vector of `Binomial(n, p)` over `0..=n`.
pub fn pmf(n: u64, p: f64) -> Vec<f64> {
    (0..=n).map(|k| ln_pmf(n, k, p).exp()).collect()
}

/// Probability vector of `Binomial(n, p)` over the non-negligible window.
pub fn pmf_window(n: u64, p: f64) -> PmfWindow {
    let (lo, hi) = support_window(n, p);
    PmfWindow {
        start: lo,
        mass: (lo..=hi).map(|k| ln_pmf(n, k, p).exp()).collect(),
    }
}

/// Inclusive range of outcomes carrying non-negligible mass.
pub fn support_window(n: u64, p: f64) -> (u64, u64) {
    if p <= 0.0 {
        return (0, 0);
    }
    if p >= 1.0 {
        return (n, n);
    }
    let mean = n as f64 * p;
    let sd = (mean * (1.0 - p)).sqrt();
    // 40 sd puts the Gaussian core below exp(-800); the additive margin
    // covers the Poisson-like tails when n p is small.
    let half_width = 40.0 * sd + 60.0;
    let lo = (mean - half_width).floor().max(0.0) as u64;
    let hi = ((mean + half_width).ceil() as u64).min(n);
    (lo, hi)
}
