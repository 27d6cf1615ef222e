//! Live rooms for the minority game with a superplayer.
//!
//! [`room::Room`] is a clock-free state machine; [`server`] wraps each room
//! in a task that feeds it WebSocket messages and deadline ticks and exposes
//! the administrative REST endpoints.

mod error;
pub mod log;
pub mod protocol;
pub mod room;
pub mod server;
pub mod settings;

pub use error::{Result, ServiceError};
