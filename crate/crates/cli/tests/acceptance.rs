//! Acceptance criteria for the core model, the analysis routines and the
//! headless game room. Each test prints one `PASS`/`FAIL` line with the
//! measured values before asserting. The lines go to the process's stderr
//! handle directly so they show without `--nocapture`.

use std::io::Write;
use std::sync::OnceLock;

use effmarket_core::efficiency::compare_profiles;
use effmarket_core::game::{
    metrics, run_bot_game, settle_round, write_round_log, BotKind, GameConfig, PayoffMode,
};
use effmarket_core::market::{simulate, InitialDemand, ModelParams, Trajectory};
use effmarket_core::markov::{
    beta_identity_log10_gap, beta_identity_residual, beta_identity_residual_exact, chain, stationary_distribution, ChainBoundary, DEFAULT_MAX_ITER,
};
use effmarket_core::stats::{self, ReturnSeries};
use effmarket_service::log::RoundLog;
use effmarket_service::room::{run_headless_room, RoomConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:>2} {verdict} {name}: {detail}\n");
    std::io::stderr().lock().write_all(line.as_bytes()).unwrap();
}

struct TailRun {
    returns: ReturnSeries,
    trajectory: Trajectory,
}

fn tail_run() -> &'static TailRun {
    static RUN: OnceLock<TailRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let params = ModelParams::new(10_000, 10).unwrap().with_seed(7);
        let trajectory = simulate(&params, 1_000_000, InitialDemand::Center).unwrap();
        let returns = stats::log_returns(&trajectory).unwrap();
        TailRun { returns, trajectory }
    })
}

fn demand_run() -> &'static Trajectory {
    static RUN: OnceLock<Trajectory> = OnceLock::new();
    RUN.get_or_init(|| {
        let params = ModelParams::new(1000, 1).unwrap().with_seed(42);
        simulate(&params, 10_000_000, InitialDemand::Center).unwrap()
    })
}

#[test]
fn c01_tail_exponent() {
    let fit = stats::hill_tail_exponent(&tail_run().returns.magnitudes(), 0.01).unwrap();
    let pass = (1.6..=2.4).contains(&fit.xi);
    report(1, "tail exponent", pass, format!("xi = {:.3} over {} samples, want [1.6, 2.4]", fit.xi, fit.n_tail));
    assert!(pass);
}

#[test]
fn c02_no_linear_autocorrelation() {
    let r = &tail_run().returns.values;
    let band = stats::noise_band(r.len());
    let acf = stats::autocorrelation(r, 100).unwrap();
    let outside = acf[1..].iter().filter(|a| a.abs() >= band).count();
    let worst = acf[1..].iter().map(|a| a.abs()).fold(0.0, f64::max);
    let pass = outside == 0;
    report(
        2,
        "no linear autocorrelation",
        pass,
        format!("max |acf| = {worst:.4}, band = {band:.4}, {outside}/100 lags outside"),
    );
    assert!(pass);
}

#[test]
fn c03_volatility_clustering() {
    let run = tail_run();
    let band = stats::noise_band(run.returns.values.len());
    let acf = stats::autocorrelation(&run.returns.magnitudes(), 50).unwrap();
    let above = acf[1..].iter().filter(|&&a| a > band).count();
    let pass = above as f64 >= 0.9 * 50.0;
    report(3, "volatility clustering", pass, format!("{above}/50 lags above {band:.4}"));
    assert!(pass);
}

#[test]
fn c04_uniform_demand() {
    let t = demand_run();
    let u = stats::uniformity_test(&t.demands, t.n_total(), 0.02, 50).unwrap();
    let pass = u.max_relative_deviation <= 0.05;
    report(
        4,
        "uniform demand distribution",
        pass,
        format!("max relative deviation = {:.3}, want <= 0.05", u.max_relative_deviation),
    );
    assert!(pass);
}

#[test]
fn c05_demand_martingale() {
    let bins = stats::demand_drift(demand_run(), 0.02, 50).unwrap();
    let worst = bins.iter().map(|b| b.z_score().abs()).fold(0.0, f64::max);
    let pass = bins.iter().all(|b| b.count > 1) && worst < 3.0;
    report(5, "martingale of demand", pass, format!("max |z| = {worst:.2} over {} bins", bins.len()));
    assert!(pass);
}

#[test]
fn c06_fluctuation_scaling() {
    let t = &tail_run().trajectory;
    let n = t.n_total() as f64;
    let bins = stats::conditional_return_variance(t, 40).unwrap();
    let slope = stats::fluctuation_scaling_slope(&bins, 10.0 * 10.0, n / 10.0).unwrap();
    let pass = (slope + 1.0).abs() <= 0.2;
    report(6, "conditional fluctuation scaling", pass, format!("slope = {slope:.3}, want -1 +/- 0.2"));
    assert!(pass);
}

#[test]
fn c07_stationary_distribution() {
    let two = stationary_distribution(chain(2, ChainBoundary::ResetRule).unwrap().as_ref(), 1e-14, DEFAULT_MAX_ITER)
        .unwrap();
    let small_err = two
        .distribution
        .iter()
        .zip([0.25, 0.5, 0.25])
        .map(|(p, want)| (p - want).abs())
        .fold(0.0, f64::max);

    let n = 1000usize;
    let big = stationary_distribution(chain(n, ChainBoundary::ResetRule).unwrap().as_ref(), 1e-13, DEFAULT_MAX_ITER)
        .unwrap();
    let uniform = 1.0 / (n + 1) as f64;
    let (lo, hi) = (n / 50, n - n / 50);
    let big_dev = big.distribution[lo..=hi]
        .iter()
        .map(|p| (p / uniform - 1.0).abs())
        .fold(0.0, f64::max);

    let pass = small_err < 1e-10 && big_dev <= 0.05;
    report(
        7,
        "stationary distribution",
        pass,
        format!("N=2 max error = {small_err:.1e}; N=1000 max interior deviation = {big_dev:.3}, want <= 0.05"),
    );
    assert!(pass);
}

#[test]
fn c08_beta_identity() {
    use num_traits::Signed;
    let small = beta_identity_residual_exact(100, 50).abs();
    let large = beta_identity_residual_exact(1000, 500).abs();
    let pass = beta_identity_residual(100, 50).abs() < 0.05 && large < small;
    report(
        8,
        "beta identity",
        pass,
        format!(
            "log10 |S(100,50) gap| = {:.2}, log10 |S(1000,500) gap| = {:.2}",
            beta_identity_log10_gap(100, 50),
            beta_identity_log10_gap(1000, 500)
        ),
    );
    assert!(pass);
}

#[test]
fn c09_efficiency_gap_shrinks() {
    let small = compare_profiles(&ModelParams::new(20, 2).unwrap(), 1e-12).unwrap();
    let large = compare_profiles(&ModelParams::new(100, 10).unwrap(), 1e-12).unwrap();
    let (_, a) = small.max_abs_difference();
    let (_, b) = large.max_abs_difference();
    let pass = b < a;
    report(9, "price vs demand efficiency", pass, format!("N=22 gap = {a:.4}, N=110 gap = {b:.4}"));
    assert!(pass);
}

fn choice_vectors(n: usize) -> Vec<Vec<i64>> {
    let mut all = vec![Vec::new()];
    for _ in 0..n {
        all = all
            .into_iter()
            .flat_map(|v| {
                [-1, 0, 1].map(|c| {
                    let mut next = v.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    all
}

#[test]
fn c10_nash_property() {
    let mut checked = 0u64;
    let mut violations = 0u64;
    for n in 1..=5 {
        for prev in choice_vectors(n) {
            let d_prev: i64 = prev.iter().sum();
            let repeat = settle_round(2, &prev, d_prev, PayoffMode::MinorityPoint).unwrap();
            checked += 1;
            if repeat.outcome != 0 || !repeat.winners.is_empty() {
                violations += 1;
            }
            for i in 0..n {
                for c in [-1, 0, 1] {
                    if c == prev[i] {
                        continue;
                    }
                    let mut deviated = prev.clone();
                    deviated[i] = c;
                    let r = settle_round(2, &deviated, d_prev, PayoffMode::MinorityPoint).unwrap();
                    checked += 1;
                    if r.winners.contains(&i) {
                        violations += 1;
                    }
                }
            }
        }
    }
    let pass = violations == 0;
    report(10, "game Nash property", pass, format!("{checked} rounds checked, {violations} violations"));
    assert!(pass);
}

/// Percentile bootstrap interval of the mean.
fn bootstrap_interval(values: &[f64], rng: &mut StdRng) -> (f64, f64) {
    let mut means: Vec<f64> = (0..10_000)
        .map(|_| {
            (0..values.len())
                .map(|_| values[rng.random_range(0..values.len())])
                .sum::<f64>()
                / values.len() as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    (means[249], means[9_749])
}

#[test]
fn c11_bot_ordering() {
    let per_kind = |kind: BotKind| -> (Vec<f64>, Vec<f64>) {
        (1..=20u64)
            .map(|seed| {
                let config = GameConfig {
                    n_players: 11,
                    payoff_mode: PayoffMode::MinorityPoint,
                    skip_prob: 0.1,
                    rounds: 10_000,
                    seed,
                };
                let m = metrics(&run_bot_game(&config, kind).unwrap()).unwrap();
                (m.bubble_fraction, m.outcome_variance)
            })
            .unzip()
    };
    let (eff_bubble, eff_var) = per_kind(BotKind::DemandEfficient);
    let (coin_bubble, coin_var) = per_kind(BotKind::CoinFlip);
    let mut rng = StdRng::seed_from_u64(11);
    let eb = bootstrap_interval(&eff_bubble, &mut rng);
    let cb = bootstrap_interval(&coin_bubble, &mut rng);
    let ev = bootstrap_interval(&eff_var, &mut rng);
    let cv = bootstrap_interval(&coin_var, &mut rng);
    let pass = eb.0 > cb.1 && ev.1 < cv.0;
    report(
        11,
        "bot ordering",
        pass,
        format!(
            "bubble efficient [{:.4}, {:.4}] vs coin [{:.4}, {:.4}]; variance efficient [{:.3}, {:.3}] vs coin [{:.3}, {:.3}]",
            eb.0, eb.1, cb.0, cb.1, ev.0, ev.1, cv.0, cv.1
        ),
    );
    assert!(pass);
}

#[test]
fn c12_online_offline_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    for (kind, seed) in [(BotKind::DemandEfficient, 12u64), (BotKind::CoinFlip, 13)] {
        let game = GameConfig {
            n_players: 11,
            payoff_mode: PayoffMode::MinorityPoint,
            skip_prob: 0.1,
            rounds: 1000,
            seed,
        };
        let path = dir.path().join(format!("room-{seed}.jsonl"));
        run_headless_room(RoomConfig::headless_bots(game.clone(), kind), Some(RoundLog::open(&path).unwrap())).unwrap();
        let mut offline = Vec::new();
        write_round_log(&run_bot_game(&game, kind).unwrap(), &mut offline).unwrap();
        if std::fs::read(&path).unwrap() != offline {
            mismatches.push(format!("{kind:?}"));
        }
    }
    let pass = mismatches.is_empty();
    report(12, "online/offline equivalence", pass, format!("2 room logs compared, mismatched: {mismatches:?}"));
    assert!(pass);
}
