use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::{argmax, log_softmax, Real};

use super::model::Session;
use super::params::PolicyParams;
use super::prompt::Prompt;
use super::vocab::Vocabulary;

/// One generated continuation. `tokens` includes the terminating EOS when one
/// was emitted; `text` is the decoding without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<usize>,
    pub text: String,
    pub per_token_logprob: Vec<f64>,
    pub prompt_ref: String,
}

impl Candidate {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn check_room<T: Real>(params: &PolicyParams<T>, prompt: &Prompt, max_len: usize) -> Result<()> {
    let needed = params.config.n_prefix + prompt.tokens.len() + max_len.saturating_sub(1);
    if needed > params.config.context {
        return Err(UrpError::Capacity {
            len: needed,
            limit: params.config.context,
        });
    }
    Ok(())
}

/// Draws an index from a categorical given by log-probabilities.
pub fn draw<T: Real, R: Rng + ?Sized>(logp: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &lp) in logp.iter().enumerate() {
        acc += lp.as_f64().exp();
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    logp.iter()
        .enumerate()
        .rev()
        .find(|(_, lp)| lp.as_f64() > f64::NEG_INFINITY)
        .map_or(logp.len() - 1, |(i, _)| i)
}

/// Samples up to `max_len` tokens from `softmax(logits / temperature)`, stopping
/// after EOS. Recorded log-probabilities are those of the tempered distribution.
pub fn sample_rollout<T: Real, R: Rng + ?Sized>(
    params: &PolicyParams<T>,
    vocab: &Vocabulary,
    prompt: &Prompt,
    prompt_ref: &str,
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<Candidate> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(UrpError::Domain(format!("temperature must be positive, got {temperature}")));
    }
    decode(params, vocab, prompt, prompt_ref, max_len, |logits| {
        let logp = log_softmax(logits, T::lit(temperature));
        let tok = draw(&logp, rng);
        (tok, logp[tok].as_f64())
    })
}

/// Argmax decoding. Recorded log-probabilities are at temperature 1.
pub fn greedy_decode<T: Real>(
    params: &PolicyParams<T>,
    vocab: &Vocabulary,
    prompt: &Prompt,
    prompt_ref: &str,
    max_len: usize,
) -> Result<Candidate> {
    decode(params, vocab, prompt, prompt_ref, max_len, |logits| {
        let tok = argmax(logits);
        (tok, log_softmax(logits, T::one())[tok].as_f64())
    })
}

fn decode<T: Real>(
    params: &PolicyParams<T>,
    vocab: &Vocabulary,
    prompt: &Prompt,
    prompt_ref: &str,
    max_len: usize,
    mut pick: impl FnMut(&[T]) -> (usize, f64),
) -> Result<Candidate> {
    if vocab.len() != params.config.vocab_size {
        return Err(UrpError::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    check_room(params, prompt, max_len)?;
    let mut session = Session::start(params, prompt)?;
    let mut tokens = Vec::with_capacity(max_len);
    let mut logprobs = Vec::with_capacity(max_len);
    while tokens.len() < max_len {
        let (tok, lp) = pick(session.last_logits());
        tokens.push(tok);
        logprobs.push(lp);
        if tok == vocab.eos() || tokens.len() == max_len {
            break;
        }
        session.push_token(tok)?;
    }
    let body: Vec<usize> = tokens.iter().copied().filter(|&t| t != vocab.eos()).collect();
    Ok(Candidate {
        text: vocab.decode(&body),
        tokens,
        per_token_logprob: logprobs,
        prompt_ref: prompt_ref.to_string(),
    })
}

/// Teacher-forced log-probabilities of `tokens` at temperature 1.
pub fn logprob_of<T: Real>(params: &PolicyParams<T>, prompt: &Prompt, tokens: &[usize]) -> Result<Vec<f64>> {
    logprob_of_tempered(params, prompt, tokens, 1.0)
}

pub fn logprob_of_tempered<T: Real>(
    params: &PolicyParams<T>,
    prompt: &Prompt,
    tokens: &[usize],
    temperature: f64,
) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let (session, first) = Session::teacher_forced(params, prompt, tokens)?;
    Ok(tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| log_softmax(session.logits_row(first + t), T::lit(temperature))[tok].as_f64())
        .collect())
}
