//! The policy network: vocabulary, prompt encoding, a small causal transformer
//! with a hand-written backward pass, sampling, and persistence.

pub mod checkpoint;
pub mod grad;
pub mod model;
pub mod optim;
pub mod params;
pub mod prompt;
pub mod sampling;
pub mod vocab;

pub use checkpoint::{Checkpoint, CheckpointKind};
pub use grad::{grad, loss_only, Gradient, SequenceObjective, SequenceTerm};
pub use model::{forward_logits, Session};
pub use optim::{Adam, AdamConfig};
pub use params::{ModelConfig, ParamLayout, PolicyParams};
pub use prompt::{encode_prompt, Ablation, PrefixInput, Prompt};
pub use sampling::{greedy_decode, logprob_of, logprob_of_tempered, sample_rollout, Candidate};
pub use vocab::Vocabulary;
