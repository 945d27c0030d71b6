//! Self-learning actor-critic loop for embodied instruction following.
//!
//! An actor model collects trajectories in a symbolic household simulator; a
//! critic model triages each trajectory (direct detection, self-asking,
//! hindsight relabeling, discard) and the surviving data fine-tunes both.

pub mod actor;
pub mod backends;
pub mod cli;
pub mod critic;
pub mod instruction;
pub mod manifest;
pub mod report;
pub mod runner;
pub mod schema;
pub mod seed;
pub mod worldsim;

pub use instruction::{Instruction, InstructionError, Verb};
