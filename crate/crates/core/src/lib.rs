//! Group-relative policy optimization (GRPO) and a supervised fine-tuning
//! baseline for urban region profiling on a synthetic world, plus the
//! evaluation harness that compares them on seen and unseen regions.

pub mod config;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod numeric;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod sft;
pub mod seeding;
pub mod world;

pub use error::{Result, UrpError};
