//! Minority game with a superplayer.
//!
//! Each round every player picks +1, -1 or skips (0). A superplayer bets
//! `C_t = -D_{t-1}`, minus the previous sum of player choices, and the
//! outcome is `O_t = sum_i c_{i,t} + C_t`. Players on the side opposite to
//! the outcome win. Repeating the previous round exactly gives `O_t = 0`,
//! and any single player who changes ends up on the winning side of nobody.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::market::{seeded_rng, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i64")]
pub enum Choice {
    Minus,
    Skip,
    Plus,
}

impl Choice {
    pub fn value(self) -> i64 {
        match self {
            Choice::Minus => -1,
            Choice::Skip => 0,
            Choice::Plus => 1,
        }
    }
}

impl TryFrom<i64> for Choice {
    type Error = Error;

    fn try_from(v: i64) -> Result<Self> {
        match v {
            -1 => Ok(Choice::Minus),
            0 => Ok(Choice::Skip),
            1 => Ok(Choice::Plus),
            other => Err(Error::InvalidChoice(other)),
        }
    }
}

impl From<Choice> for i8 {
    fn from(c: Choice) -> i8 {
        c.value() as i8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffMode {
    /// One point for each player on the minority side; nothing otherwise.
    #[default]
    MinorityPoint,
    /// `-c_i * O_t` for every player.
    ReturnProportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BotKind {
    CoinFlip,
    DemandEfficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub n_players: usize,
    #[serde(default)]
    pub payoff_mode: PayoffMode,
    #[serde(default)]
    pub skip_prob: f64,
    pub rounds: u64,
    #[serde(default)]
    pub seed: u64,
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players < 2 {
            return Err(Error::InvalidParams("a game needs at least two players".into()));
        }
        if !(0.0..=1.0).contains(&self.skip_prob) {
            return Err(Error::InvalidParams(format!(
                "skip probability {} outside [0, 1]",
                self.skip_prob
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidParams("rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub choices: Vec<Choice>,
    /// `D_{t-1}`, the sum of the previous round's choices.
    pub prev_excess: i64,
    /// `C_t = -D_{t-1}`.
    pub superplayer: i64,
    pub outcome: i64,
    pub winners: Vec<usize>,
    #[serde(rename = "points")]
    pub points_delta: Vec<f64>,
}

impl RoundRecord {
    /// Sum of player choices, the next round's `prev_excess`.
    pub fn excess(&self) -> i64 {
        self.choices.iter().map(|c| c.value()).sum()
    }

    pub fn counts(&self) -> (usize, usize) {
        let plus = self.choices.iter().filter(|&&c| c == Choice::Plus).count();
        let minus = self.choices.iter().filter(|&&c| c == Choice::Minus).count();
        (plus, minus)
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Settles a round from raw choice values.
pub fn settle_round(round: u64, choices: &[i64], prev_excess: i64, payoff: PayoffMode) -> Result<RoundRecord> {
    let choices = choices
        .iter()
        .map(|&c| Choice::try_from(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(settle(round, choices, prev_excess, payoff))
}

pub fn settle(round: u64, choices: Vec<Choice>, prev_excess: i64, payoff: PayoffMode) -> RoundRecord {
    let superplayer = -prev_excess;
    let outcome = choices.iter().map(|c| c.value()).sum::<i64>() + superplayer;
    let winning = -outcome.signum();
    let winners: Vec<usize> = if outcome == 0 {
        Vec::new()
    } else {
        choices
            .iter()
            .enumerate()
            .filter(|(_, c)| c.value() == winning)
            .map(|(i, _)| i)
            .collect()
    };
    let points_delta = match payoff {
        PayoffMode::MinorityPoint => {
            let mut points = vec![0.0; choices.len()];
            for &w in &winners {
                points[w] = 1.0;
            }
            points
        }
        PayoffMode::ReturnProportional => choices
            .iter()
            .map(|c| (-c.value() * outcome) as f64)
            .collect(),
    };
    RoundRecord {
        round,
        choices,
        prev_excess,
        superplayer,
        outcome,
        winners,
        points_delta,
    }
}

/// Skips with probability `skip_prob`, otherwise +1 or -1 with equal odds.
pub fn coin_flip_bot<R: Rng + ?Sized>(skip_prob: f64, rng: &mut R) -> Choice {
    biased_choice(skip_prob, 0.5, rng)
}

/// Skips with probability `skip_prob`, otherwise plays +1 with probability
/// `clamp(1/2 + D_{t-1} / (2 n), 0, 1)`: the demand-efficient buy rule
/// written for signed choices, with buyer count `(n + D) / 2`.
pub fn demand_efficient_bot<R: Rng + ?Sized>(
    prev_excess: i64,
    n_players: usize,
    skip_prob: f64,
    rng: &mut R,
) -> Choice {
    let q = (0.5 + prev_excess as f64 / (2.0 * n_players as f64)).clamp(0.0, 1.0);
    biased_choice(skip_prob, q, rng)
}

fn biased_choice<R: Rng + ?Sized>(skip_prob: f64, plus_prob: f64, rng: &mut R) -> Choice {
    if rng.random::<f64>() < skip_prob {
        return Choice::Skip;
    }
    if rng.random::<f64>() < plus_prob {
        Choice::Plus
    } else {
        Choice::Minus
    }
}

/// A seeded group of bots sharing one random stream.
///
/// Bots draw in seat order every round, so a room that seats the same bots
/// replays an offline game exactly.
#[derive(Debug, Clone)]
pub struct BotPopulation {
    kind: BotKind,
    skip_prob: f64,
    rng: SimRng,
}

impl BotPopulation {
    pub fn new(kind: BotKind, skip_prob: f64, seed: u64) -> Self {
        Self {
            kind,
            skip_prob,
            rng: seeded_rng(seed),
        }
    }

    pub fn kind(&self) -> BotKind {
        self.kind
    }

    pub fn choose(&mut self, prev_excess: i64, n_players: usize) -> Choice {
        match self.kind {
            BotKind::CoinFlip => coin_flip_bot(self.skip_prob, &mut self.rng),
            BotKind::DemandEfficient => {
                demand_efficient_bot(prev_excess, n_players, self.skip_prob, &mut self.rng)
            }
        }
    }
}

/// Plays `config.rounds` rounds with `config.n_players` bots of one kind.
pub fn run_bot_game(config: &GameConfig, kind: BotKind) -> Result<Vec<RoundRecord>> {
    config.validate()?;
    let mut bots = BotPopulation::new(kind, config.skip_prob, config.seed);
    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut prev_excess = 0;
    for round in 1..=config.rounds {
        let choices: Vec<Choice> = (0..config.n_players)
            .map(|_| bots.choose(prev_excess, config.n_players))
            .collect();
        let record = settle(round, choices, prev_excess, config.payoff_mode);
        prev_excess = record.excess();
        records.push(record);
    }
    Ok(records)
}

/// One choice made by at least twice as many players as the other.
pub fn is_bubble(n_plus: usize, n_minus: usize) -> bool {
    let (hi, lo) = (n_plus.max(n_minus), n_plus.min(n_minus));
    hi > 0 && hi >= 2 * lo
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub outcome_variance: f64,
    /// Pearson correlation of `c_{i,t}` with `D_{t-1}` pooled over all
    /// players and rounds after the first, skipped choices excluded.
    pub choice_demand_correlation: f64,
    pub bubble_fraction: f64,
    pub n_rounds: usize,
    /// The same correlation per player; `None` where undefined.
    pub per_player_correlation: Vec<Option<f64>>,
}

pub fn metrics(records: &[RoundRecord]) -> Result<MetricsReport> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} rounds, need at least 2",
            records.len()
        )));
    }
    if records
        .iter()
        .all(|r| r.choices.iter().all(|&c| c == Choice::Skip))
    {
        return Err(Error::InsufficientData("every choice is a skip".into()));
    }

    let outcomes: Vec<f64> = records.iter().map(|r| r.outcome as f64).collect();
    let mean = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
    let outcome_variance = outcomes.iter().map(|o| (o - mean).powi(2)).sum::<f64>()
        / (outcomes.len() - 1) as f64;

    let n_players = records.iter().map(|r| r.choices.len()).max().unwrap_or(0);
    let mut pooled = Vec::new();
    let mut per_player = vec![Vec::new(); n_players];
    for record in &records[1..] {
        for (i, &c) in record.choices.iter().enumerate() {
            if c != Choice::Skip {
                let pair = (c.value() as f64, record.prev_excess as f64);
                pooled.push(pair);
                per_player[i].push(pair);
            }
        }
    }

    let bubbles = records
        .iter()
        .filter(|r| {
            let (plus, minus) = r.counts();
            is_bubble(plus, minus)
        })
        .count();

    Ok(MetricsReport {
        outcome_variance,
        // A constant side makes the correlation undefined; report zero.
        choice_demand_correlation: pearson(&pooled).unwrap_or(0.0),
        bubble_fraction: bubbles as f64 / records.len() as f64,
        n_rounds: records.len(),
        per_player_correlation: per_player.iter().map(|p| pearson(p)).collect(),
    })
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Writes one JSON object per round.
pub fn write_round_log<W: Write>(records: &[RoundRecord], mut writer: W) -> Result<()> {
    for record in records {
        writeln!(writer, "{}", record.to_json_line()?)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a JSON-lines round log; blank lines are ignored.
pub fn read_round_log<R: BufRead>(reader: R) -> Result<Vec<RoundRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RoundRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choices(values: &[i64]) -> Vec<Choice> {
        values.iter().map(|&v| Choice::try_from(v).unwrap()).collect()
    }

    #[test]
    fn hand_evaluated_round() {
        let r = settle_round(4, &[1, 1, -1], -2, PayoffMode::MinorityPoint).unwrap();
        assert_eq!(r.superplayer, 2);
        assert_eq!(r.outcome, 3);
        assert_eq!(r.winners, vec![2]);
        assert_eq!(r.points_delta, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn repeating_everything_is_a_tie() {
        let prev = [1, -1, 1, 0, 1];
        let r = settle_round(2, &prev, 2, PayoffMode::MinorityPoint).unwrap();
        assert_eq!(r.outcome, 0);
        assert!(r.winners.is_empty());
        assert!(r.points_delta.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_flip_loses() {
        // previous round (1, 1, -1): D = 1; player 0 flips to -1.
        let r = settle_round(2, &[-1, 1, -1], 1, PayoffMode::MinorityPoint).unwrap();
        assert_eq!(r.outcome, -2);
        assert!(!r.winners.contains(&0));
        assert_eq!(r.winners, vec![1]);
    }

    #[test]
    fn invalid_choice_is_rejected() {
        assert!(matches!(
            settle_round(1, &[1, 2], 0, PayoffMode::MinorityPoint),
            Err(Error::InvalidChoice(2))
        ));
    }

    #[test]
    fn return_payoff_is_minus_choice_times_outcome() {
        let r = settle_round(1, &[1, 1, -1, 0], -2, PayoffMode::ReturnProportional).unwrap();
        assert_eq!(r.outcome, 3);
        assert_eq!(r.points_delta, vec![-3.0, -3.0, 3.0, 0.0]);
        assert_eq!(r.winners, vec![2]);
    }

    #[test]
    fn bubble_rule() {
        assert!(is_bubble(6, 3));
        assert!(!is_bubble(5, 4));
        assert!(is_bubble(0, 2));
        assert!(!is_bubble(0, 0));
        assert!(is_bubble(2, 1));
    }

    #[test]
    fn coin_flip_bot_statistics() {
        let mut rng = seeded_rng(1);
        assert!((0..1000).all(|_| coin_flip_bot(1.0, &mut rng) == Choice::Skip));

        let draws = 100_000;
        let mean = (0..draws)
            .map(|_| coin_flip_bot(0.0, &mut rng).value() as f64)
            .sum::<f64>()
            / draws as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");

        let skips = (0..draws)
            .filter(|_| coin_flip_bot(0.2, &mut rng) == Choice::Skip)
            .count();
        assert!((skips as f64 / draws as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn demand_efficient_bot_statistics() {
        let mut rng = seeded_rng(2);
        assert!((0..1000).all(|_| demand_efficient_bot(10, 10, 0.0, &mut rng) == Choice::Plus));
        assert!((0..1000).all(|_| demand_efficient_bot(-10, 10, 0.0, &mut rng) == Choice::Minus));

        let draws = 100_000;
        let plus = (0..draws)
            .filter(|_| demand_efficient_bot(-5, 10, 0.0, &mut rng) == Choice::Plus)
            .count();
        assert!((plus as f64 / draws as f64 - 0.25).abs() < 0.01);

        let active: Vec<Choice> = (0..draws)
            .map(|_| demand_efficient_bot(0, 10, 0.3, &mut rng))
            .filter(|&c| c != Choice::Skip)
            .collect();
        let plus = active.iter().filter(|&&c| c == Choice::Plus).count();
        assert!((plus as f64 / active.len() as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn bot_games_replay() {
        let config = GameConfig {
            n_players: 11,
            payoff_mode: PayoffMode::MinorityPoint,
            skip_prob: 0.1,
            rounds: 500,
            seed: 99,
        };
        for kind in [BotKind::CoinFlip, BotKind::DemandEfficient] {
            let a = run_bot_game(&config, kind).unwrap();
            let b = run_bot_game(&config, kind).unwrap();
            assert_eq!(a, b);
            assert_eq!(a[0].prev_excess, 0);
            for w in a.windows(2) {
                assert_eq!(w[1].prev_excess, w[0].excess());
            }
            for r in &a {
                assert_eq!(r.superplayer + r.prev_excess, 0);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let mut config = GameConfig {
            n_players: 1,
            payoff_mode: PayoffMode::MinorityPoint,
            skip_prob: 0.0,
            rounds: 10,
            seed: 0,
        };
        assert!(run_bot_game(&config, BotKind::CoinFlip).is_err());
        config.n_players = 3;
        config.skip_prob = 1.5;
        assert!(config.validate().is_err());
        config.skip_prob = 0.0;
        config.rounds = 0;
        assert!(config.validate().is_err());
    }

    /// Three rounds evaluated by hand:
    ///
    /// | t | choices      | D_{t-1} | O_t | n+ | n- | bubble |
    /// |---|--------------|---------|-----|----|----|--------|
    /// | 1 | +1 +1 -1  0  |    0    |  1  | 2  | 1  | yes    |
    /// | 2 | +1 -1 -1 +1  |    1    | -1  | 2  | 2  | no     |
    /// | 3 | -1 -1 -1  0  |    0    | -3  | 0  | 3  | yes    |
    ///
    /// Outcomes (1, -1, -3): mean -1, sample variance (4 + 0 + 4) / 2 = 4.
    /// Correlation pairs (c, D) from rounds 2 and 3:
    /// (1,1) (-1,1) (-1,1) (1,1) (-1,0) (-1,0) (-1,0);
    /// mean c = -3/7, mean D = 4/7, Sxy = 0 - 7(-3/7)(4/7) = 12/7,
    /// Sxx = 7 - 9/7 = 40/7, Syy = 4 - 16/7 = 12/7,
    /// r = (12/7) / sqrt(480/49) = 12 / sqrt(480).
    pub(crate) fn fixture() -> Vec<RoundRecord> {
        let mut prev = 0;
        [[1, 1, -1, 0], [1, -1, -1, 1], [-1, -1, -1, 0]]
            .iter()
            .enumerate()
            .map(|(t, c)| {
                let r = settle(t as u64 + 1, choices(c), prev, PayoffMode::MinorityPoint);
                prev = r.excess();
                r
            })
            .collect()
    }

    #[test]
    fn metrics_on_hand_fixture() {
        let records = fixture();
        assert_eq!(
            records.iter().map(|r| r.outcome).collect::<Vec<_>>(),
            vec![1, -1, -3]
        );
        let m = metrics(&records).unwrap();
        assert!((m.outcome_variance - 4.0).abs() < 1e-12);
        assert!((m.choice_demand_correlation - 12.0 / 480f64.sqrt()).abs() < 1e-12);
        assert!((m.bubble_fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.n_rounds, 3);
        assert_eq!(m.per_player_correlation.len(), 4);
    }

    #[test]
    fn metrics_need_data() {
        let all_skip: Vec<RoundRecord> = (1..=3)
            .map(|t| settle(t, vec![Choice::Skip; 3], 0, PayoffMode::MinorityPoint))
            .collect();
        assert!(matches!(metrics(&all_skip), Err(Error::InsufficientData(_))));
        assert!(matches!(metrics(&fixture()[..1]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn round_log_json_shape() {
        let records = fixture();
        let mut buf = Vec::new();
        write_round_log(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"round":1,"choices":[1,1,-1,0],"prev_excess":0,"superplayer":0,"outcome":1,"winners":[2],"points":[0.0,0.0,1.0,0.0]}"#
        );
        assert_eq!(read_round_log(&buf[..]).unwrap(), records);
    }

    #[test]
    fn corrupt_log_line_is_named() {
        let mut buf = Vec::new();
        write_round_log(&fixture(), &mut buf).unwrap();
        buf.extend_from_slice(b"{\"round\": oops}\n");
        match read_round_log(&buf[..]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let bad_choice = r#"{"round":1,"choices":[3],"prev_excess":0,"superplayer":0,"outcome":3,"winners":[],"points":[0.0]}"#;
        assert!(matches!(
            read_round_log(bad_choice.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
