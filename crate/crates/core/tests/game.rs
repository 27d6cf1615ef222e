use effmarket_core::game::{
    metrics, read_round_log, run_bot_game, settle_round, write_round_log, BotKind, Choice,
    GameConfig, PayoffMode,
};
use proptest::prelude::*;

fn all_choice_vectors(n: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                [-1, 0, 1].into_iter().map(move |c| {
                    let mut w = v.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    out
}

#[test]
fn repeating_is_a_nash_equilibrium() {
    for n in 1..=5 {
        for prev in all_choice_vectors(n) {
            let d_prev: i64 = prev.iter().sum();
            let repeat = settle_round(2, &prev, d_prev, PayoffMode::MinorityPoint).unwrap();
            assert_eq!(repeat.outcome, 0);
            assert!(repeat.winners.is_empty());
            assert!(repeat.points_delta.iter().all(|&p| p == 0.0));

            for i in 0..n {
                for c in [-1, 0, 1] {
                    if c == prev[i] {
                        continue;
                    }
                    let mut deviated = prev.clone();
                    deviated[i] = c;
                    let r = settle_round(2, &deviated, d_prev, PayoffMode::MinorityPoint).unwrap();
                    assert!(!r.winners.contains(&i), "{prev:?} -> {deviated:?}");
                    assert_eq!(r.points_delta[i], 0.0);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn superplayer_cancels_previous_excess(
        choices in prop::collection::vec(-1i64..=1, 2..30),
        prev in -30i64..=30,
        proportional: bool,
    ) {
        let mode = if proportional { PayoffMode::ReturnProportional } else { PayoffMode::MinorityPoint };
        let r = settle_round(1, &choices, prev, mode).unwrap();
        prop_assert_eq!(r.superplayer + r.prev_excess, 0);
        prop_assert_eq!(r.outcome, choices.iter().sum::<i64>() - prev);
        for &w in &r.winners {
            prop_assert!(choices[w] != 0);
            prop_assert_eq!(choices[w], -r.outcome.signum());
        }
        if r.outcome == 0 {
            prop_assert!(r.winners.is_empty());
        }
        if proportional {
            for (c, p) in choices.iter().zip(&r.points_delta) {
                prop_assert_eq!(*p, (-c * r.outcome) as f64);
            }
        }
    }

    #[test]
    fn invalid_choices_are_rejected(bad in prop_oneof![-100i64..-1, 2i64..100]) {
        prop_assert!(settle_round(1, &[0, bad], 0, PayoffMode::MinorityPoint).is_err());
    }
}

#[test]
fn bot_games_replay_and_round_trip() {
    let config = GameConfig {
        n_players: 11,
        payoff_mode: PayoffMode::MinorityPoint,
        skip_prob: 0.1,
        rounds: 500,
        seed: 99,
    };
    for kind in [BotKind::CoinFlip, BotKind::DemandEfficient] {
        let a = run_bot_game(&config, kind).unwrap();
        assert_eq!(a, run_bot_game(&config, kind).unwrap());
        assert_eq!(a[0].prev_excess, 0);
        for w in a.windows(2) {
            assert_eq!(w[1].prev_excess, w[0].excess());
            assert_eq!(w[1].round, w[0].round + 1);
        }
        let mut buf = Vec::new();
        write_round_log(&a, &mut buf).unwrap();
        let back = read_round_log(buf.as_slice()).unwrap();
        assert_eq!(back, a);
        assert_eq!(metrics(&back).unwrap(), metrics(&a).unwrap());
    }
}

#[test]
fn efficient_bots_bubble_more_and_vary_less() {
    let mut eff = (0.0, 0.0);
    let mut coin = (0.0, 0.0);
    for seed in 0..5 {
        let config = GameConfig {
            n_players: 11,
            payoff_mode: PayoffMode::MinorityPoint,
            skip_prob: 0.1,
            rounds: 10_000,
            seed,
        };
        let e = metrics(&run_bot_game(&config, BotKind::DemandEfficient).unwrap()).unwrap();
        let c = metrics(&run_bot_game(&config, BotKind::CoinFlip).unwrap()).unwrap();
        assert!(e.bubble_fraction > c.bubble_fraction);
        assert!(e.outcome_variance < c.outcome_variance);
        assert!(e.choice_demand_correlation > 0.1);
        assert!(c.choice_demand_correlation.abs() < 0.05);
        eff = (eff.0 + e.bubble_fraction, eff.1 + e.outcome_variance);
        coin = (coin.0 + c.bubble_fraction, coin.1 + c.outcome_variance);
    }
    assert!(eff.0 > coin.0 && eff.1 < coin.1);
}

#[test]
fn skipping_bots_never_score() {
    let config = GameConfig {
        n_players: 5,
        payoff_mode: PayoffMode::MinorityPoint,
        skip_prob: 0.5,
        rounds: 200,
        seed: 3,
    };
    for r in run_bot_game(&config, BotKind::CoinFlip).unwrap() {
        for (i, c) in r.choices.iter().enumerate() {
            if *c == Choice::Skip {
                assert_eq!(r.points_delta[i], 0.0);
                assert!(!r.winners.contains(&i));
            }
        }
    }
}
