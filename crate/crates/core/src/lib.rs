//! Role-play zero-shot prompting engine.
//!
//! Turns an instruction-following completion model into an open-domain
//! conversational agent: structured prompt assembly with task-specific
//! section ordering, history truncation with episode summaries and user
//! memory, output filtering with regeneration, self-chat generation,
//! Elo arena evaluation and conversation statistics.

pub mod arena;
pub mod filter;
pub mod gateway;
pub mod memory;
pub mod pipeline;
pub mod prompt;
pub mod registry;
pub mod selfchat;
pub mod stats;
pub mod store;
pub mod text;

pub use registry::{Registry, UnknownEntry};
