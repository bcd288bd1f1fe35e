//! Group-relative policy optimization.
//!
//! Each outer step samples a group of `G` candidates per prompt from the
//! behavior policy, normalizes the group's rewards into advantages, and takes
//! `inner_epochs` Adam steps on the clipped, KL-regularized surrogate.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::{log_softmax, Real};
use crate::policy::checkpoint::{Checkpoint, CheckpointKind};
use crate::policy::grad::{grad, loss_only, SequenceObjective, SequenceTerm};
use crate::policy::{logprob_of_tempered, sample_rollout, Adam, AdamConfig, Candidate, PolicyParams, Prompt, Vocabulary};
use crate::reward::{composite_reward, ParseStatus, RewardBreakdown, RewardConfig};
use crate::seeding::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// `exp(d) - d - 1` at the sampled token, with `d = log pi_ref - log pi`.
    Estimator,
    /// Full categorical KL(pi || pi_ref) at every position.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub kl_mode: KlMode,
    pub rollout_temperature: f64,
    pub prompts_per_step: usize,
    pub inner_epochs: usize,
    pub learning_rate: f64,
    pub max_steps: u64,
    pub std_floor: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            kl_mode: KlMode::Estimator,
            rollout_temperature: 1.0,
            prompts_per_step: 32,
            inner_epochs: 1,
            learning_rate: 1e-3,
            max_steps: 300,
            std_floor: 1e-6,
            seed: 0,
            checkpoint_every: 50,
            adam: AdamConfig::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UrpError::Config(m));
        if self.group_size < 2 {
            return bad(format!("grpo.group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("grpo.clip_eps must be in (0, 1), got {}", self.clip_eps));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad(format!("grpo.kl_beta must be non-negative, got {}", self.kl_beta));
        }
        if !(self.std_floor > 0.0) {
            return bad(format!("grpo.std_floor must be positive, got {}", self.std_floor));
        }
        if !(self.rollout_temperature > 0.0 && self.rollout_temperature.is_finite()) {
            return bad(format!(
                "grpo.rollout_temperature must be positive, got {}",
                self.rollout_temperature
            ));
        }
        if self.prompts_per_step == 0 || self.inner_epochs == 0 {
            return bad("grpo.prompts_per_step and grpo.inner_epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("grpo.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.checkpoint_every == 0 {
            return bad("grpo.checkpoint_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Something a policy can be rolled out on: a fixed prompt and a reward.
pub trait RolloutTask: Sync {
    fn prompt(&self) -> &Prompt;
    fn prompt_ref(&self) -> &str;
    fn reward(&self, candidate: &Candidate) -> RewardBreakdown;
}

/// A URP prompt scored with the composite reward against its target.
#[derive(Debug, Clone)]
pub struct UrpTask {
    pub prompt: Prompt,
    pub sample_id: String,
    pub target: f64,
    pub reward: RewardConfig,
}

impl RolloutTask for UrpTask {
    fn prompt(&self) -> &Prompt {
        &self.prompt
    }

    fn prompt_ref(&self) -> &str {
        &self.sample_id
    }

    fn reward(&self, candidate: &Candidate) -> RewardBreakdown {
        composite_reward(&candidate.text, self.target, &self.reward)
    }
}

/// Rewards 1 for one exact token sequence and 0 otherwise.
#[derive(Debug, Clone)]
pub struct StubTask {
    pub prompt: Prompt,
    pub answer: Vec<usize>,
    pub name: String,
}

impl RolloutTask for StubTask {
    fn prompt(&self) -> &Prompt {
        &self.prompt
    }

    fn prompt_ref(&self) -> &str {
        &self.name
    }

    fn reward(&self, candidate: &Candidate) -> RewardBreakdown {
        let hit = candidate.tokens == self.answer;
        let r = if hit { 1.0 } else { 0.0 };
        RewardBreakdown {
            r_acc: r,
            r_fmt: r,
            composite: r,
            parsed_value: None,
            parse_status: if hit { ParseStatus::Ok } else { ParseStatus::BadStructure },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_ref: String,
    pub candidates: Vec<Candidate>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

/// `(r - mean) / std` with the population standard deviation; all zeros when
/// the standard deviation does not exceed `std_floor`.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > std_floor) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

pub fn collect_group<T: Real, K: RolloutTask + ?Sized, R: rand::Rng + ?Sized>(
    theta_old: &PolicyParams<T>,
    vocab: &Vocabulary,
    task: &K,
    config: &GrpoConfig,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let mut candidates = Vec::with_capacity(config.group_size);
    for _ in 0..config.group_size {
        candidates.push(sample_rollout(
            theta_old,
            vocab,
            task.prompt(),
            task.prompt_ref(),
            config.rollout_temperature,
            theta_old.config.max_len,
            rng,
        )?);
    }
    let rewards: Vec<RewardBreakdown> = candidates.iter().map(|c| task.reward(c)).collect();
    let composite: Vec<f64> = rewards.iter().map(|r| r.composite).collect();
    Ok(RolloutGroup {
        prompt_ref: task.prompt_ref().to_string(),
        advantages: group_advantages(&composite, config.std_floor),
        candidates,
        rewards,
    })
}

/// `exp(d) - d - 1`.
pub fn kl_estimator(delta: f64) -> f64 {
    delta.exp() - delta - 1.0
}

/// `sum_j p_j (log p_j - log q_j)` from two log-probability vectors.
pub fn categorical_kl(logp: &[f64], logq: &[f64]) -> f64 {
    logp.iter()
        .zip(logq)
        .filter(|(&lp, _)| lp > f64::NEG_INFINITY)
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum()
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Per-candidate, per-token `exp(log pi_theta - log pi_old)`.
pub fn token_ratios<T: Real>(
    theta: &PolicyParams<T>,
    theta_old: &PolicyParams<T>,
    prompt: &Prompt,
    group: &RolloutGroup,
    temperature: f64,
) -> Result<Vec<Vec<f64>>> {
    group
        .candidates
        .iter()
        .map(|c| {
            let new = logprob_of_tempered(theta, prompt, &c.tokens, temperature)?;
            let old = logprob_of_tempered(theta_old, prompt, &c.tokens, temperature)?;
            new.iter()
                .zip(&old)
                .map(|(a, b)| {
                    let r = (a - b).exp();
                    if r.is_finite() {
                        Ok(r)
                    } else {
                        Err(UrpError::Numeric(format!("non-finite importance ratio from {a} - {b}")))
                    }
                })
                .collect()
        })
        .collect()
}

fn tempered_rows<T: Real>(params: &PolicyParams<T>, prompt: &Prompt, tokens: &[usize], temperature: f64) -> Result<Vec<Vec<f64>>> {
    let (session, first) = crate::policy::Session::teacher_forced(params, prompt, tokens)?;
    Ok((0..tokens.len())
        .map(|t| {
            log_softmax(session.logits_row(first + t), T::lit(temperature))
                .into_iter()
                .map(|x| x.as_f64())
                .collect()
        })
        .collect())
}

/// Per-candidate, per-token KL between `theta` and `pi_ref`.
pub fn kl_per_token<T: Real>(
    theta: &PolicyParams<T>,
    pi_ref: &PolicyParams<T>,
    prompt: &Prompt,
    group: &RolloutGroup,
    mode: KlMode,
    temperature: f64,
) -> Result<Vec<Vec<f64>>> {
    group
        .candidates
        .iter()
        .map(|c| {
            let p = tempered_rows(theta, prompt, &c.tokens, temperature)?;
            let q = tempered_rows(pi_ref, prompt, &c.tokens, temperature)?;
            Ok(c.tokens
                .iter()
                .enumerate()
                .map(|(t, &tok)| match mode {
                    KlMode::Estimator => kl_estimator(q[t][tok] - p[t][tok]),
                    KlMode::Exact => categorical_kl(&p[t], &q[t]),
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
enum RefLogprobs {
    Sampled(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
struct SeqData<'a> {
    prompt: &'a Prompt,
    tokens: &'a [usize],
    old: Vec<f64>,
    adv: f64,
    reference: RefLogprobs,
}

/// Negated surrogate as a sum over candidate sequences.
///
/// aux: `[clipped tokens, tokens, sum of per-candidate mean KL, sum of
/// per-candidate mean surrogate]`.
struct GrpoLoss<'a> {
    seqs: Vec<SeqData<'a>>,
    eps: f64,
    beta: f64,
    temperature: f64,
}

impl<'a, T: Real> SequenceObjective<T> for GrpoLoss<'a> {
    fn num_sequences(&self) -> usize {
        self.seqs.len()
    }

    fn prompt(&self, i: usize) -> &Prompt {
        self.seqs[i].prompt
    }

    fn targets(&self, i: usize) -> &[usize] {
        self.seqs[i].tokens
    }

    fn term(&self, i: usize, logits: &[T]) -> Result<SequenceTerm<T>> {
        let s = &self.seqs[i];
        let n = s.tokens.len();
        let v = logits.len() / n;
        let weight = 1.0 / (self.seqs.len() as f64 * n as f64);
        let tau = self.temperature;
        let mut dlogits = vec![T::zero(); logits.len()];
        let (mut clipped, mut kl_sum, mut sur_sum) = (0.0, 0.0, 0.0);
        for (t, &tok) in s.tokens.iter().enumerate() {
            let row = &logits[t * v..(t + 1) * v];
            let logp: Vec<f64> = log_softmax(row, T::lit(tau)).into_iter().map(|x| x.as_f64()).collect();
            let lp = logp[tok];
            let ratio = (lp - s.old[t]).exp();
            if !ratio.is_finite() {
                return Err(UrpError::Numeric(format!("non-finite importance ratio at token {t}")));
            }
            let unclipped = ratio * s.adv;
            let clip = ratio.clamp(1.0 - self.eps, 1.0 + self.eps) * s.adv;
            sur_sum += unclipped.min(clip);
            // d(surrogate)/d(lp) through the unclipped branch only
            let mut d_lp = if unclipped <= clip { unclipped } else {
                clipped += 1.0;
                0.0
            };
            let dst = &mut dlogits[t * v..(t + 1) * v];
            match &s.reference {
                RefLogprobs::Sampled(r) => {
                    let delta = r[t] - lp;
                    kl_sum += kl_estimator(delta);
                    d_lp -= self.beta * (1.0 - delta.exp());
                }
                RefLogprobs::Full(q) => {
                    let kl = categorical_kl(&logp, &q[t]);
                    kl_sum += kl;
                    // d KL / d logit_j = p_j (log p_j - log q_j - KL) / tau
                    for j in 0..v {
                        let p = logp[j].exp();
                        let g = if p > 0.0 { p * (logp[j] - q[t][j] - kl) / tau } else { 0.0 };
                        dst[j] += T::lit(weight * self.beta * g);
                    }
                }
            }
            // d lp / d logit_j = (1[j = tok] - p_j) / tau; the loss is the negated objective
            if d_lp != 0.0 {
                for j in 0..v {
                    let ind = if j == tok { 1.0 } else { 0.0 };
                    dst[j] -= T::lit(weight * d_lp * (ind - logp[j].exp()) / tau);
                }
            }
        }
        let mean_kl = kl_sum / n as f64;
        let mean_sur = sur_sum / n as f64;
        Ok(SequenceTerm {
            loss: -weight * n as f64 * (mean_sur - self.beta * mean_kl),
            dlogits,
            aux: [clipped, n as f64, mean_kl, mean_sur],
        })
    }
}

/// Scalar surrogate and its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub objective: f64,
    pub mean_kl: f64,
    pub clip_frac: f64,
}

fn build_loss<'a, T: Real>(
    prompts: &[&'a Prompt],
    groups: &'a [RolloutGroup],
    old: Option<&PolicyParams<T>>,
    pi_ref: &PolicyParams<T>,
    config: &GrpoConfig,
) -> Result<GrpoLoss<'a>> {
    if prompts.len() != groups.len() {
        return Err(UrpError::Domain("one prompt per group is required".into()));
    }
    let tau = config.rollout_temperature;
    let pairs: Vec<(&Prompt, &Candidate, f64)> = prompts
        .iter()
        .zip(groups)
        .flat_map(|(&p, g)| g.candidates.iter().zip(&g.advantages).map(move |(c, &a)| (p, c, a)))
        .collect();
    let seqs = pairs
        .par_iter()
        .map(|&(prompt, c, adv)| {
            let old = match old {
                Some(o) => logprob_of_tempered(o, prompt, &c.tokens, tau)?,
                None => c.per_token_logprob.clone(),
            };
            let reference = match config.kl_mode {
                KlMode::Estimator => RefLogprobs::Sampled(logprob_of_tempered(pi_ref, prompt, &c.tokens, tau)?),
                KlMode::Exact => RefLogprobs::Full(tempered_rows(pi_ref, prompt, &c.tokens, tau)?),
            };
            Ok(SeqData {
                prompt,
                tokens: &c.tokens,
                old,
                adv,
                reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GrpoLoss {
        seqs,
        eps: config.clip_eps,
        beta: config.kl_beta,
        temperature: tau,
    })
}

fn summarize(loss: f64, aux: [f64; 4], n_seq: usize) -> ObjectiveValue {
    ObjectiveValue {
        objective: -loss,
        mean_kl: aux[2] / n_seq.max(1) as f64,
        clip_frac: if aux[1] > 0.0 { aux[0] / aux[1] } else { 0.0 },
    }
}

/// The surrogate `mean_i (1/|o_i|) sum_t [min(r A, clip(r) A) - beta D_t]`.
pub fn grpo_objective<T: Real>(
    theta: &PolicyParams<T>,
    theta_old: &PolicyParams<T>,
    pi_ref: &PolicyParams<T>,
    prompts: &[&Prompt],
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<ObjectiveValue> {
    let obj = build_loss(prompts, groups, Some(theta_old), pi_ref, config)?;
    let (loss, aux) = loss_only(theta, &obj)?;
    Ok(summarize(loss, aux, obj.seqs.len()))
}

/// Gradient of the surrogate (ascent direction) at `theta`.
pub fn grpo_gradient<T: Real>(
    theta: &PolicyParams<T>,
    theta_old: &PolicyParams<T>,
    pi_ref: &PolicyParams<T>,
    prompts: &[&Prompt],
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(ObjectiveValue, Vec<T>)> {
    let obj = build_loss(prompts, groups, Some(theta_old), pi_ref, config)?;
    let g = grad(theta, &obj)?;
    Ok((summarize(g.loss, g.aux, obj.seqs.len()), g.grad.into_iter().map(|x| -x).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub parse_rate: f64,
    pub mean_kl: f64,
    pub clip_frac: f64,
    pub objective: f64,
    pub mean_abs_advantage: f64,
}

/// Current, behavior and reference policies plus optimizer state. Rollout
/// randomness is derived from `(seed, step, prompt index)`, so `step` is the
/// whole rng state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub theta: PolicyParams<T>,
    pub theta_old: PolicyParams<T>,
    pub pi_ref: PolicyParams<T>,
    pub adam: Adam,
    pub step: u64,
    pub seed: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(initial: PolicyParams<T>, config: &GrpoConfig) -> Self {
        TrainState {
            adam: Adam::new(config.adam, initial.param_count()),
            theta_old: initial.clone(),
            pi_ref: initial.clone(),
            theta: initial,
            step: 0,
            seed: config.seed,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointKind::Policy, self.theta.config.clone());
        c.push_section("theta", self.theta.to_f64());
        c.push_section("pi_ref", self.pi_ref.to_f64());
        c.push_section("adam_m", self.adam.m.clone());
        c.push_section("adam_v", self.adam.v.clone());
        c.meta.insert("trainer".into(), "grpo".into());
        c.meta.insert("step".into(), toml::Value::Integer(self.step as i64));
        c.meta.insert("adam_t".into(), toml::Value::Integer(self.adam.t as i64));
        c.meta.insert("seed".into(), toml::Value::String(self.seed.to_string()));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, config: &GrpoConfig) -> Result<Self> {
        let theta: PolicyParams<T> = c.params("theta")?;
        let pi_ref = c.params("pi_ref")?;
        let int = |k: &str| {
            c.meta
                .get(k)
                .and_then(|v| v.as_integer())
                .ok_or_else(|| UrpError::Data(format!("checkpoint meta lacks {k:?}")))
        };
        let seed: u64 = c
            .meta
            .get("seed")
            .and_then(|v| v.as_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| UrpError::Data("checkpoint meta lacks \"seed\"".into()))?;
        if seed != config.seed {
            return Err(UrpError::Refused(format!(
                "checkpoint was trained with seed {seed}, config has {}",
                config.seed
            )));
        }
        let section = |k: &str| {
            c.section(k)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| UrpError::Data(format!("checkpoint has no {k:?} section")))
        };
        let adam = Adam {
            config: config.adam,
            m: section("adam_m")?,
            v: section("adam_v")?,
            t: int("adam_t")? as u64,
        };
        Ok(TrainState {
            theta_old: theta.clone(),
            theta,
            pi_ref,
            adam,
            step: int("step")? as u64,
            seed,
        })
    }
}

/// Indices of the prompts used at `step`: a fresh seeded draw without
/// replacement from `0..n`.
pub fn select_batch(n: usize, per_step: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, &[stream::BATCH, step]);
    let mut idx = sample_indices(&mut rng, n, per_step.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs one outer step on `tasks`. On error the state is left untouched.
pub fn train_step<T: Real, K: RolloutTask>(
    state: &mut TrainState<T>,
    vocab: &Vocabulary,
    tasks: &[K],
    config: &GrpoConfig,
) -> Result<(StepMetrics, Vec<RolloutGroup>)> {
    if tasks.is_empty() {
        return Err(UrpError::Data("GRPO step needs at least one prompt".into()));
    }
    let theta_old = state.theta.clone();
    let step = state.step;
    let seed = state.seed;
    let groups = tasks
        .par_iter()
        .enumerate()
        .map(|(j, task)| {
            let mut rng = rng_for(seed, &[stream::ROLLOUT, step, j as u64]);
            collect_group(&theta_old, vocab, task, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let prompts: Vec<&Prompt> = tasks.iter().map(|t| t.prompt()).collect();
    let obj = build_loss::<T>(&prompts, &groups, None, &state.pi_ref, config)?;

    let mut theta = state.theta.clone();
    let mut adam = state.adam.clone();
    let mut first = None;
    for _ in 0..config.inner_epochs {
        let g = grad(&theta, &obj)?;
        first.get_or_insert(summarize(g.loss, g.aux, obj.seqs.len()));
        adam.step(config.learning_rate, &mut theta.data, &g.grad)?;
    }
    let value = first.expect("at least one inner epoch");

    let rewards: Vec<&RewardBreakdown> = groups.iter().flat_map(|g| &g.rewards).collect();
    let n = rewards.len() as f64;
    let metrics = StepMetrics {
        step: step + 1,
        mean_reward: rewards.iter().map(|r| r.composite).sum::<f64>() / n,
        parse_rate: rewards.iter().filter(|r| r.parse_status == ParseStatus::Ok).count() as f64 / n,
        mean_kl: value.mean_kl,
        clip_frac: value.clip_frac,
        objective: value.objective,
        mean_abs_advantage: groups.iter().flat_map(|g| &g.advantages).map(|a| a.abs()).sum::<f64>() / n,
    };
    state.theta_old = theta_old;
    state.theta = theta;
    state.adam = adam;
    state.step += 1;
    Ok((metrics, groups))
}
