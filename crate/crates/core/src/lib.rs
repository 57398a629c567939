//! Scheduling and discrete-step simulation for grouped RL sampling.
//!
//! A group of `G` completions for one prompt is decoded on `g` slots. The
//! crate plans which completion goes where ([`planner`]), simulates the
//! resulting token rounds ([`engine`]), prices the KV cache they hold
//! ([`memory`]) and evaluates the group-relative objective in micro groups
//! ([`grpo`]). Length traces ([`trace`]) stand in for real generations.

pub mod cli;
pub mod engine;
pub mod error;
pub mod grpo;
pub mod memory;
pub mod planner;
pub mod trace;

pub use error::{Error, Result};
