//! JSON messages exchanged with clients.

use effmarket_core::game::{BotKind, PayoffMode};
use serde::{Deserialize, Serialize};

use crate::room::{Phase, Visibility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Join {
        room: String,
        player: String,
        #[serde(default)]
        name: Option<String>,
    },
    Leave {
        room: String,
        player: String,
    },
    Choose {
        room: String,
        player: String,
        value: i64,
    },
    Start {
        room: String,
        player: String,
    },
    Config {
        room: String,
        player: String,
        config: ConfigUpdate,
    },
}

impl ClientMessage {
    pub fn room(&self) -> &str {
        match self {
            ClientMessage::Join { room, .. }
            | ClientMessage::Leave { room, .. }
            | ClientMessage::Choose { room, .. }
            | ClientMessage::Start { room, .. }
            | ClientMessage::Config { room, .. } => room,
        }
    }

    pub fn player(&self) -> &str {
        match self {
            ClientMessage::Join { player, .. }
            | ClientMessage::Leave { player, .. }
            | ClientMessage::Choose { player, .. }
            | ClientMessage::Start { player, .. }
            | ClientMessage::Config { player, .. } => player,
        }
    }
}

/// Lobby-time changes to a room's configuration; absent fields are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigUpdate {
    pub countdown_seconds: Option<f64>,
    pub rounds: Option<u64>,
    pub skip_prob: Option<f64>,
    pub payoff_mode: Option<PayoffMode>,
    pub visibility: Option<Visibility>,
    pub allow_hot_join: Option<bool>,
    pub bots: Option<usize>,
    pub bot_kind: Option<BotKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub player: String,
    pub name: String,
    pub kind: PlayerKind,
    /// Hidden from other players unless the room shows full scores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerKind {
    Human,
    Bot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Protocol,
    TooEarly,
    TooLate,
    NotInRoom,
    RoomFull,
    WrongPhase,
    InvalidConfig,
}

/// Times are milliseconds on the server clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        room: String,
        phase: Phase,
        round: u64,
        rounds: u64,
        deadline: Option<u64>,
        roster: Vec<RosterEntry>,
    },
    RoundStart {
        room: String,
        round: u64,
        deadline: u64,
        /// `C_t` for this round.
        superplayer: i64,
        roster: Vec<RosterEntry>,
    },
    RoundResult {
        room: String,
        round: u64,
        outcome: i64,
        winners: Vec<String>,
        /// Points won this round, keyed like `scores`.
        points: Vec<(String, f64)>,
        scores: Vec<(String, f64)>,
        /// Seat-ordered choices; present only when the room shows the raster.
        #[serde(skip_serializing_if = "Option::is_none")]
        choices: Option<Vec<i64>>,
        /// `C_{t+1}`, the superplayer's move in the next round.
        superplayer_next: i64,
        roster: Vec<RosterEntry>,
    },
    Error {
        code: ErrorCode,
        message: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        round: Option<u64>,
    },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>, round: Option<u64>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
            round,
        }
    }
}

/// Who receives an outgoing message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Recipient {
    All,
    Player(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: Recipient,
    pub message: ServerMessage,
}

impl Outbound {
    pub fn all(message: ServerMessage) -> Self {
        Outbound {
            to: Recipient::All,
            message,
        }
    }

    pub fn to(player: &str, message: ServerMessage) -> Self {
        Outbound {
            to: Recipient::Player(player.to_string()),
            message,
        }
    }
}
