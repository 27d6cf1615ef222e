//! Room state machine.
//!
//! A room is driven by two inputs, client messages and clock ticks, and
//! answers each with the messages to deliver. It never reads a clock itself:
//! callers pass a monotonic millisecond timestamp, which keeps every
//! transition reproducible.

use std::collections::HashMap;

use effmarket_core::game::{
    metrics, settle, BotKind, BotPopulation, Choice, GameConfig, MetricsReport, RoundRecord,
};
use serde::{Deserialize, Serialize};

use crate::log::RoundLog;
use crate::protocol::{
    ClientMessage, ConfigUpdate, ErrorCode, Outbound, PlayerKind, RosterEntry, ServerMessage,
};
use crate::{Result, ServiceError};

pub const DEFAULT_COUNTDOWN_SECONDS: f64 = 5.0;
pub const DEFAULT_RESULT_PAUSE_SECONDS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Each player sees only their own score.
    #[default]
    OwnScore,
    /// Everyone sees all scores and the seat-ordered choices of each round.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    CountingDown,
    /// Between a round result and the next countdown.
    Settling,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    /// `n_players` is the seat capacity of the room.
    pub game: GameConfig,
    #[serde(default = "default_countdown")]
    pub countdown_seconds: f64,
    #[serde(default = "default_pause")]
    pub result_pause_seconds: f64,
    /// Bot seats, placed before any human seat.
    #[serde(default)]
    pub bots: usize,
    #[serde(default = "default_bot_kind")]
    pub bot_kind: BotKind,
    #[serde(default)]
    pub visibility: Visibility,
    /// Accept joins after the game started; the newcomer plays 0 until the
    /// next round begins.
    #[serde(default)]
    pub allow_hot_join: bool,
    /// Bot-only room that plays all rounds at once on a virtual clock.
    #[serde(default)]
    pub headless: bool,
}

fn default_countdown() -> f64 {
    DEFAULT_COUNTDOWN_SECONDS
}

fn default_pause() -> f64 {
    DEFAULT_RESULT_PAUSE_SECONDS
}

fn default_bot_kind() -> BotKind {
    BotKind::DemandEfficient
}

impl RoomConfig {
    pub fn new(game: GameConfig) -> Self {
        RoomConfig {
            game,
            countdown_seconds: DEFAULT_COUNTDOWN_SECONDS,
            result_pause_seconds: DEFAULT_RESULT_PAUSE_SECONDS,
            bots: 0,
            bot_kind: BotKind::DemandEfficient,
            visibility: Visibility::OwnScore,
            allow_hot_join: false,
            headless: false,
        }
    }

    /// Every seat taken by a bot of one kind, played without a real clock.
    pub fn headless_bots(game: GameConfig, kind: BotKind) -> Self {
        RoomConfig {
            bots: game.n_players,
            bot_kind: kind,
            headless: true,
            result_pause_seconds: 0.0,
            ..RoomConfig::new(game)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        if !(self.countdown_seconds.is_finite() && self.countdown_seconds > 0.0) {
            return Err(ServiceError::Config(format!(
                "countdown {} s must be positive",
                self.countdown_seconds
            )));
        }
        if !(self.result_pause_seconds.is_finite() && self.result_pause_seconds >= 0.0) {
            return Err(ServiceError::Config(format!(
                "result pause {} s must be non-negative",
                self.result_pause_seconds
            )));
        }
        if self.bots > self.game.n_players {
            return Err(ServiceError::Config(format!(
                "{} bots exceed {} seats",
                self.bots, self.game.n_players
            )));
        }
        if self.headless && self.bots != self.game.n_players {
            return Err(ServiceError::Config(
                "a headless room needs a bot in every seat".into(),
            ));
        }
        Ok(())
    }

    fn apply(&mut self, update: &ConfigUpdate) {
        if let Some(v) = update.countdown_seconds {
            self.countdown_seconds = v;
        }
        if let Some(v) = update.rounds {
            self.game.rounds = v;
        }
        if let Some(v) = update.skip_prob {
            self.game.skip_prob = v;
        }
        if let Some(v) = update.payoff_mode {
            self.game.payoff_mode = v;
        }
        if let Some(v) = update.visibility {
            self.visibility = v;
        }
        if let Some(v) = update.allow_hot_join {
            self.allow_hot_join = v;
        }
        if let Some(v) = update.bots {
            self.bots = v;
        }
        if let Some(v) = update.bot_kind {
            self.bot_kind = v;
        }
    }

    fn countdown_ms(&self) -> u64 {
        (self.countdown_seconds * 1000.0).round().max(1.0) as u64
    }

    fn pause_ms(&self) -> u64 {
        (self.result_pause_seconds * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Player {
    pub id: String,
    pub name: String,
    pub kind: PlayerKind,
    pub score: f64,
    pub present: bool,
    /// Round during which the player took the seat; 0 for lobby joins.
    pub joined_round: u64,
}

#[derive(Debug)]
pub struct Room {
    id: String,
    config: RoomConfig,
    phase: Phase,
    round: u64,
    players: Vec<Player>,
    pending: HashMap<String, Choice>,
    deadline: Option<u64>,
    next_round_at: Option<u64>,
    prev_excess: i64,
    last_now: u64,
    bots: Option<BotPopulation>,
    records: Vec<RoundRecord>,
    log: Option<RoundLog>,
}

impl Room {
    pub fn new(id: impl Into<String>, config: RoomConfig, log: Option<RoundLog>, now: u64) -> Result<Self> {
        config.validate()?;
        let mut room = Room {
            id: id.into(),
            config,
            phase: Phase::Lobby,
            round: 0,
            players: Vec::new(),
            pending: HashMap::new(),
            deadline: None,
            next_round_at: None,
            prev_excess: 0,
            last_now: now,
            bots: None,
            records: Vec::new(),
            log,
        };
        room.seat_bots();
        Ok(room)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &RoomConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn deadline(&self) -> Option<u64> {
        self.deadline
    }

    pub fn players(&self) -> &[Player] {
        &self.players
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Choice currently registered for `player` in the running round.
    pub fn pending_choice(&self, player: &str) -> Option<i64> {
        self.pending.get(player).map(|c| c.value())
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        Ok(metrics(&self.records)?)
    }

    /// Next timestamp at which `tick` has work to do.
    pub fn next_wake(&self) -> Option<u64> {
        match self.phase {
            Phase::CountingDown => self.deadline,
            Phase::Settling => self.next_round_at,
            Phase::Lobby | Phase::Finished => None,
        }
    }

    fn seat_bots(&mut self) {
        self.players.retain(|p| p.kind != PlayerKind::Bot);
        let bots = (1..=self.config.bots).map(|i| Player {
            id: format!("bot-{i}"),
            name: format!("Bot {i}"),
            kind: PlayerKind::Bot,
            score: 0.0,
            present: true,
            joined_round: 0,
        });
        self.players.splice(0..0, bots);
    }

    /// Clamps a timestamp so time never runs backwards inside the room.
    fn advance_clock(&mut self, now: u64) -> Option<u64> {
        if now < self.last_now {
            return None;
        }
        self.last_now = now;
        Some(now)
    }

    fn roster(&self) -> Vec<RosterEntry> {
        self.players
            .iter()
            .map(|p| RosterEntry {
                player: p.id.clone(),
                name: p.name.clone(),
                kind: p.kind,
                score: (self.config.visibility == Visibility::Full).then_some(p.score),
                present: p.present,
            })
            .collect()
    }

    pub fn state_message(&self) -> ServerMessage {
        ServerMessage::State {
            room: self.id.clone(),
            phase: self.phase,
            round: self.round,
            rounds: self.config.game.rounds,
            deadline: self.deadline,
            roster: self.roster(),
        }
    }

    fn error(&self, player: &str, code: ErrorCode, message: impl Into<String>) -> Vec<Outbound> {
        let round = (self.round > 0).then_some(self.round);
        vec![Outbound::to(player, ServerMessage::error(code, message, round))]
    }

    fn seat_of(&self, player: &str) -> Option<usize> {
        self.players.iter().position(|p| p.id == player)
    }

    pub fn handle_message(&mut self, message: ClientMessage, now: u64) -> Vec<Outbound> {
        let now = self.advance_clock(now).unwrap_or(self.last_now);
        let player = message.player().to_string();
        if message.room() != self.id {
            return self.error(&player, ErrorCode::NotFound, format!("unknown room {}", message.room()));
        }
        match message {
            ClientMessage::Join { name, .. } => self.join(&player, name),
            ClientMessage::Leave { .. } => self.leave(&player),
            ClientMessage::Choose { value, .. } => self.choose(&player, value, now),
            ClientMessage::Start { .. } => self.start(&player, now),
            ClientMessage::Config { config, .. } => self.update_config(&player, &config),
        }
    }

    fn join(&mut self, player: &str, name: Option<String>) -> Vec<Outbound> {
        if let Some(seat) = self.seat_of(player) {
            if self.players[seat].kind == PlayerKind::Bot {
                return self.error(player, ErrorCode::Protocol, "that seat belongs to a bot");
            }
            self.players[seat].present = true;
            return vec![Outbound::all(self.state_message())];
        }
        let open = match self.phase {
            Phase::Lobby => true,
            Phase::CountingDown | Phase::Settling => self.config.allow_hot_join,
            Phase::Finished => false,
        };
        if !open {
            return self.error(player, ErrorCode::WrongPhase, "the game has already started");
        }
        if self.players.len() >= self.config.game.n_players {
            return self.error(player, ErrorCode::RoomFull, "no free seat");
        }
        let joined_round = if self.phase == Phase::CountingDown { self.round } else { 0 };
        self.players.push(Player {
            id: player.to_string(),
            name: name.unwrap_or_else(|| player.to_string()),
            kind: PlayerKind::Human,
            score: 0.0,
            present: true,
            joined_round,
        });
        vec![Outbound::all(self.state_message())]
    }

    fn leave(&mut self, player: &str) -> Vec<Outbound> {
        let Some(seat) = self.seat_of(player) else {
            return self.error(player, ErrorCode::NotInRoom, "not seated in this room");
        };
        if self.players[seat].kind == PlayerKind::Bot {
            return self.error(player, ErrorCode::Protocol, "that seat belongs to a bot");
        }
        if self.phase == Phase::Lobby {
            self.players.remove(seat);
        } else {
            // The seat stays so that later rounds keep one choice per seat.
            self.players[seat].present = false;
        }
        vec![Outbound::all(self.state_message())]
    }

    fn choose(&mut self, player: &str, value: i64, now: u64) -> Vec<Outbound> {
        let choice = match Choice::try_from(value) {
            Ok(c) => c,
            Err(_) => return self.error(player, ErrorCode::Protocol, format!("invalid choice {value}")),
        };
        let Some(seat) = self.seat_of(player) else {
            return self.error(player, ErrorCode::NotInRoom, "not seated in this room");
        };
        if self.players[seat].kind == PlayerKind::Bot {
            return self.error(player, ErrorCode::Protocol, "that seat belongs to a bot");
        }
        match self.phase {
            Phase::Lobby => return self.error(player, ErrorCode::TooEarly, "no round is running"),
            Phase::Settling | Phase::Finished => {
                return self.error(player, ErrorCode::TooLate, "the round has been settled")
            }
            Phase::CountingDown => {}
        }
        if self.deadline.is_some_and(|d| now >= d) {
            return self.error(player, ErrorCode::TooLate, "the countdown has run out");
        }
        if self.players[seat].joined_round == self.round && self.round > 0 {
            return self.error(player, ErrorCode::TooEarly, "joined during this round; wait for the next");
        }
        self.pending.insert(player.to_string(), choice);
        Vec::new()
    }

    fn start(&mut self, player: &str, now: u64) -> Vec<Outbound> {
        if self.phase != Phase::Lobby {
            return self.error(player, ErrorCode::WrongPhase, "the game has already started");
        }
        if self.seat_of(player).is_none() {
            return self.error(player, ErrorCode::NotInRoom, "not seated in this room");
        }
        if self.players.len() < 2 {
            return self.error(player, ErrorCode::WrongPhase, "a game needs at least two players");
        }
        self.begin(now)
    }

    /// Starts the first round; used by `start` messages and headless rooms.
    pub fn begin(&mut self, now: u64) -> Vec<Outbound> {
        self.bots = Some(BotPopulation::new(
            self.config.bot_kind,
            self.config.game.skip_prob,
            self.config.game.seed,
        ));
        self.prev_excess = 0;
        self.start_round(now)
    }

    fn update_config(&mut self, player: &str, update: &ConfigUpdate) -> Vec<Outbound> {
        if self.phase != Phase::Lobby {
            return self.error(player, ErrorCode::WrongPhase, "configuration is fixed once the game starts");
        }
        if self.seat_of(player).is_none() {
            return self.error(player, ErrorCode::NotInRoom, "not seated in this room");
        }
        let mut next = self.config.clone();
        next.apply(update);
        let humans = self.players.iter().filter(|p| p.kind == PlayerKind::Human).count();
        if let Err(e) = next.validate() {
            return self.error(player, ErrorCode::InvalidConfig, e.to_string());
        }
        if next.bots + humans > next.game.n_players {
            return self.error(player, ErrorCode::InvalidConfig, "not enough seats for the bots");
        }
        self.config = next;
        self.seat_bots();
        vec![Outbound::all(self.state_message())]
    }

    fn start_round(&mut self, now: u64) -> Vec<Outbound> {
        self.round += 1;
        self.phase = Phase::CountingDown;
        self.next_round_at = None;
        self.pending.clear();
        let deadline = now + self.config.countdown_ms();
        self.deadline = Some(deadline);

        // Bots decide at countdown start, in seat order.
        let seats = self.players.len();
        if let Some(bots) = self.bots.as_mut() {
            for p in self.players.iter().filter(|p| p.kind == PlayerKind::Bot) {
                self.pending.insert(p.id.clone(), bots.choose(self.prev_excess, seats));
            }
        }
        vec![Outbound::all(ServerMessage::RoundStart {
            room: self.id.clone(),
            round: self.round,
            deadline,
            superplayer: -self.prev_excess,
            roster: self.roster(),
        })]
    }

    /// Advances the room to `now`. A timestamp earlier than one already seen
    /// is ignored.
    ///
    /// The settled round is on disk before the returned messages exist; if
    /// the append fails the round stays open and the next tick retries.
    pub fn tick(&mut self, now: u64) -> Result<Vec<Outbound>> {
        let Some(now) = self.advance_clock(now) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        loop {
            match self.phase {
                Phase::CountingDown if self.deadline.is_some_and(|d| now >= d) => {
                    out.extend(self.settle_round(now)?);
                }
                Phase::Settling if self.next_round_at.is_some_and(|t| now >= t) => {
                    out.extend(self.start_round(now));
                }
                _ => return Ok(out),
            }
        }
    }

    fn settle_round(&mut self, now: u64) -> Result<Vec<Outbound>> {
        let choices: Vec<Choice> = self
            .players
            .iter()
            .map(|p| self.pending.get(&p.id).copied().unwrap_or(Choice::Skip))
            .collect();
        let record = settle(self.round, choices, self.prev_excess, self.config.game.payoff_mode);
        if let Some(log) = self.log.as_mut() {
            log.append(&record)?;
        }

        for (player, delta) in self.players.iter_mut().zip(&record.points_delta) {
            player.score += delta;
        }
        self.prev_excess = record.excess();
        self.pending.clear();
        self.deadline = None;

        let mut out = self.result_messages(&record);
        self.records.push(record);

        if self.round >= self.config.game.rounds {
            self.phase = Phase::Finished;
            out.push(Outbound::all(self.state_message()));
        } else if self.config.pause_ms() == 0 {
            self.phase = Phase::Settling;
            self.next_round_at = Some(now);
        } else {
            self.phase = Phase::Settling;
            self.next_round_at = Some(now + self.config.pause_ms());
            out.push(Outbound::all(self.state_message()));
        }
        Ok(out)
    }

    fn result_messages(&self, record: &RoundRecord) -> Vec<Outbound> {
        let winners: Vec<String> = record.winners.iter().map(|&i| self.players[i].id.clone()).collect();
        let keyed = |values: Vec<f64>| -> Vec<(String, f64)> {
            self.players.iter().map(|p| p.id.clone()).zip(values).collect()
        };
        let points = keyed(record.points_delta.clone());
        let scores = keyed(self.players.iter().map(|p| p.score).collect());
        let message = |points: Vec<(String, f64)>, scores: Vec<(String, f64)>, choices| {
            ServerMessage::RoundResult {
                room: self.id.clone(),
                round: record.round,
                outcome: record.outcome,
                winners: winners.clone(),
                points,
                scores,
                choices,
                superplayer_next: -record.excess(),
                roster: self.roster(),
            }
        };
        match self.config.visibility {
            Visibility::Full => {
                let choices = record.choices.iter().map(|c| c.value()).collect();
                vec![Outbound::all(message(points, scores, Some(choices)))]
            }
            Visibility::OwnScore => self
                .players
                .iter()
                .enumerate()
                .filter(|(_, p)| p.kind == PlayerKind::Human)
                .map(|(i, p)| {
                    Outbound::to(
                        &p.id,
                        message(vec![points[i].clone()], vec![scores[i].clone()], None),
                    )
                })
                .collect(),
        }
    }

    /// Plays a bot-only room to the end on a virtual clock starting at the
    /// room's current time.
    pub fn run_headless(&mut self) -> Result<()> {
        if self.players.iter().any(|p| p.kind == PlayerKind::Human) {
            return Err(ServiceError::Config("headless rooms cannot seat humans".into()));
        }
        if self.phase == Phase::Lobby {
            self.begin(self.last_now);
        }
        while let Some(wake) = self.next_wake() {
            self.tick(wake)?;
        }
        Ok(())
    }
}

/// Runs a headless bot room with an optional log file and returns its rounds.
pub fn run_headless_room(config: RoomConfig, log: Option<RoundLog>) -> Result<Vec<RoundRecord>> {
    let mut room = Room::new("headless", config, log, 0)?;
    room.run_headless()?;
    Ok(room.records)
}
