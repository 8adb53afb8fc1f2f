//! HTTP service for live conversations between a human and a trained agent.
//!
//! `POST /sessions` starts a conversation, `POST /sessions/{id}/answer`
//! records the human's answer and returns the agent's next action, and
//! `GET /sessions/{id}` returns the transcript with per-turn distribution
//! snapshots.

pub mod api;
pub mod live;

use thiserror::Error;
use vaguecrs::policy::PolicyError;
use vaguecrs::simulator::SimError;

pub use api::{router, serve};
pub use live::{
    replay, ActionView, AnswerRequest, AnswerView, CheckpointInfo, Engine, Replay, Scored, Settings,
    Snapshot, StepView, Transcript, TurnView,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown checkpoint {0:?}")]
    UnknownCheckpoint(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} expired")]
    Expired(String),
    #[error("session already finished")]
    Finished,
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("cannot load checkpoints: {0}")]
    Load(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("internal error: {0}")]
    Internal(String),
}
