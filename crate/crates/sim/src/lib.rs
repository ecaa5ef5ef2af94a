//! Deterministic device-farm simulator for the cradlewatch hub.
//!
//! Scenarios expand into wire events ([`scenario`]), [`runner::run`] plays
//! them against a live hub and records a [`transcript::Transcript`], and
//! [`transcript::check`] compares a transcript with an expected outcome.

pub mod baby;
pub mod runner;
pub mod scenario;
pub mod transcript;

pub use baby::{gen_baby, BabyParams, Episode, EpisodeKind};
pub use runner::{run, RunOptions, SimError};
pub use scenario::{Scenario, ScenarioError};
pub use transcript::{check, CheckReport, ExpectedOutcome, Transcript};
