//! Supervised fine-tuning on gold answers: token-level cross-entropy with Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::{log_softmax, Real};
use crate::policy::checkpoint::{Checkpoint, CheckpointKind};
use crate::policy::grad::{grad, loss_only, SequenceObjective, SequenceTerm};
use crate::policy::vocab::ids;
use crate::policy::{Adam, AdamConfig, PolicyParams, Prompt, Vocabulary};
use crate::seeding::{rng_for, stream};
use crate::world::IndicatorSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftTemplate {
    /// `<think></think><answer>T</answer>`
    AnswerOnly,
    /// `<think> INDICATOR xB yB</think><answer>T</answer>`
    TemplatedRationale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub template: SftTemplate,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            template: SftTemplate::AnswerOnly,
            seed: 0,
            checkpoint_every: 50,
            adam: AdamConfig::default(),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(UrpError::Config("sft.epochs and sft.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(UrpError::Config(format!("sft.learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.checkpoint_every == 0 {
            return Err(UrpError::Config("sft.checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gold ids for `value` under `template`, terminated by `<eos>`.
pub fn answer_tokens(vocab: &Vocabulary, value: f64, rationale: &[usize]) -> Vec<usize> {
    let mut out = vec![ids::THINK_OPEN];
    out.extend_from_slice(rationale);
    out.extend([ids::THINK_CLOSE, ids::ANS_OPEN]);
    out.extend(vocab.number_ids(value));
    out.extend([ids::ANS_CLOSE, vocab.eos()]);
    out
}

pub fn build_target(sample: &IndicatorSample, template: SftTemplate, vocab: &Vocabulary) -> Vec<usize> {
    let rationale = match template {
        SftTemplate::AnswerOnly => Vec::new(),
        SftTemplate::TemplatedRationale => vec![
            vocab.indicator_id(sample.indicator),
            vocab.x_bucket_id(vocab.bucket_of(sample.region.coord[0])),
            vocab.y_bucket_id(vocab.bucket_of(sample.region.coord[1])),
        ],
    };
    answer_tokens(vocab, sample.target, &rationale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub prompt: Prompt,
    pub gold: Vec<usize>,
}

/// Mean over sequences of the per-sequence mean negative log-likelihood.
struct CrossEntropy<'a> {
    examples: Vec<&'a SftExample>,
}

impl<'a, T: Real> SequenceObjective<T> for CrossEntropy<'a> {
    fn num_sequences(&self) -> usize {
        self.examples.len()
    }

    fn prompt(&self, i: usize) -> &Prompt {
        &self.examples[i].prompt
    }

    fn targets(&self, i: usize) -> &[usize] {
        &self.examples[i].gold
    }

    fn term(&self, i: usize, logits: &[T]) -> Result<SequenceTerm<T>> {
        let gold = &self.examples[i].gold;
        let n = gold.len();
        let v = logits.len() / n;
        let w = 1.0 / (self.examples.len() * n) as f64;
        let mut nll = 0.0;
        let mut dlogits = vec![T::zero(); logits.len()];
        for (t, &tok) in gold.iter().enumerate() {
            let logp = log_softmax(&logits[t * v..(t + 1) * v], T::one());
            nll -= logp[tok].as_f64();
            for j in 0..v {
                let ind = if j == tok { T::one() } else { T::zero() };
                dlogits[t * v + j] = T::lit(w) * (logp[j].exp() - ind);
            }
        }
        Ok(SequenceTerm {
            loss: w * nll,
            dlogits,
            aux: [nll / n as f64, 0.0, 0.0, 0.0],
        })
    }
}

/// `-(1/|o|) sum_t log pi(gold_t | prompt, gold_<t)`.
pub fn sft_loss<T: Real>(theta: &PolicyParams<T>, prompt: &Prompt, gold: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(UrpError::Domain("empty gold sequence".into()));
    }
    let ex = SftExample {
        prompt: prompt.clone(),
        gold: gold.to_vec(),
    };
    Ok(loss_only(theta, &CrossEntropy { examples: vec![&ex] })?.0)
}

/// Batch loss and its gradient.
pub fn sft_gradient<T: Real>(theta: &PolicyParams<T>, batch: &[&SftExample]) -> Result<(f64, Vec<T>)> {
    let g = grad(theta, &CrossEntropy { examples: batch.to_vec() })?;
    Ok((g.loss, g.grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Parameters, optimizer and progress of an SFT run. The batch order of epoch
/// `e` is a seeded permutation, so `step` plus the running epoch sum is the
/// whole state.
#[derive(Debug, Clone, PartialEq)]
pub struct SftState<T> {
    pub theta: PolicyParams<T>,
    pub adam: Adam,
    pub step: u64,
    pub epoch_loss_sum: f64,
    pub seed: u64,
}

impl<T: Real> SftState<T> {
    pub fn new(theta: PolicyParams<T>, config: &SftConfig) -> Self {
        SftState {
            adam: Adam::new(config.adam, theta.param_count()),
            theta,
            step: 0,
            epoch_loss_sum: 0.0,
            seed: config.seed,
        }
    }

    pub fn batches_per_epoch(n: usize, batch_size: usize) -> u64 {
        n.div_ceil(batch_size) as u64
    }

    pub fn total_steps(n: usize, config: &SftConfig) -> u64 {
        Self::batches_per_epoch(n, config.batch_size) * config.epochs as u64
    }

    pub fn is_done(&self, n: usize, config: &SftConfig) -> bool {
        self.step >= Self::total_steps(n, config)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CheckpointKind::Policy, self.theta.config.clone());
        c.push_section("theta", self.theta.to_f64());
        c.push_section("adam_m", self.adam.m.clone());
        c.push_section("adam_v", self.adam.v.clone());
        c.meta.insert("trainer".into(), "sft".into());
        c.meta.insert("step".into(), toml::Value::Integer(self.step as i64));
        c.meta.insert("adam_t".into(), toml::Value::Integer(self.adam.t as i64));
        c.meta.insert("seed".into(), toml::Value::String(self.seed.to_string()));
        // bit pattern keeps the running sum exact across a resume
        c.meta.insert(
            "epoch_loss_sum".into(),
            toml::Value::String(format!("{:016x}", self.epoch_loss_sum.to_bits())),
        );
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, config: &SftConfig) -> Result<Self> {
        let meta_str = |k: &str| {
            c.meta
                .get(k)
                .and_then(|v| v.as_str())
                .ok_or_else(|| UrpError::Data(format!("checkpoint meta lacks {k:?}")))
        };
        let meta_int = |k: &str| {
            c.meta
                .get(k)
                .and_then(|v| v.as_integer())
                .ok_or_else(|| UrpError::Data(format!("checkpoint meta lacks {k:?}")))
        };
        let seed: u64 = meta_str("seed")?.parse().map_err(|_| UrpError::Data("bad seed in checkpoint".into()))?;
        if seed != config.seed {
            return Err(UrpError::Refused(format!(
                "checkpoint was trained with seed {seed}, config has {}",
                config.seed
            )));
        }
        let bits = u64::from_str_radix(meta_str("epoch_loss_sum")?, 16)
            .map_err(|_| UrpError::Data("bad epoch_loss_sum in checkpoint".into()))?;
        let section = |k: &str| {
            c.section(k)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| UrpError::Data(format!("checkpoint has no {k:?} section")))
        };
        Ok(SftState {
            theta: c.params("theta")?,
            adam: Adam {
                config: config.adam,
                m: section("adam_m")?,
                v: section("adam_v")?,
                t: meta_int("adam_t")? as u64,
            },
            step: meta_int("step")? as u64,
            epoch_loss_sum: f64::from_bits(bits),
            seed,
        })
    }
}

/// Example indices of batch `step`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let per_epoch = SftState::<f64>::batches_per_epoch(n, batch_size);
    let epoch = step / per_epoch;
    let b = (step % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[stream::SHUFFLE, epoch]));
    order[b * batch_size..((b + 1) * batch_size).min(n)].to_vec()
}

/// One mini-batch update. Returns the epoch summary when the batch completes
/// an epoch. On error the state is left untouched.
pub fn sft_step<T: Real>(state: &mut SftState<T>, examples: &[SftExample], config: &SftConfig) -> Result<Option<EpochLoss>> {
    if examples.is_empty() {
        return Err(UrpError::Data("SFT needs a non-empty training split".into()));
    }
    let idx = batch_indices(examples.len(), config.batch_size, state.seed, state.step);
    let batch: Vec<&SftExample> = idx.iter().map(|&i| &examples[i]).collect();
    let (loss, g) = sft_gradient(&state.theta, &batch)?;
    let mut theta = state.theta.clone();
    let mut adam = state.adam.clone();
    adam.step(config.learning_rate, &mut theta.data, &g)
        .map_err(|e| UrpError::Numeric(format!("SFT diverged at step {}: {e}", state.step)))?;
    state.theta = theta;
    state.adam = adam;
    state.epoch_loss_sum += loss * batch.len() as f64;
    state.step += 1;
    let per_epoch = SftState::<T>::batches_per_epoch(examples.len(), config.batch_size);
    if state.step % per_epoch == 0 {
        let summary = EpochLoss {
            epoch: (state.step / per_epoch) as usize,
            mean_loss: state.epoch_loss_sum / examples.len() as f64,
        };
        state.epoch_loss_sum = 0.0;
        return Ok(Some(summary));
    }
    Ok(None)
}

/// Runs every remaining step and returns the per-epoch loss curve.
pub fn train_sft<T: Real>(state: &mut SftState<T>, examples: &[SftExample], config: &SftConfig) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    let mut curve = Vec::new();
    while !state.is_done(examples.len(), config) {
        if let Some(e) = sft_step(state, examples, config)? {
            curve.push(e);
        }
    }
    Ok(curve)
}

/// Format warm-up targets: every prompt paired with an answer drawn uniformly
/// from the 0.0-9.9 grid, independent of the region. Training on these teaches
/// the grammar without any knowledge of the indicators.
pub fn warmup_examples(prompts: &[Prompt], vocab: &Vocabulary, seed: u64) -> Vec<SftExample> {
    let mut rng = rng_for(seed, &[stream::WARMUP]);
    prompts
        .iter()
        .map(|p| {
            let v = rng.random_range(0..100) as f64 / 10.0;
            SftExample {
                prompt: p.clone(),
                gold: answer_tokens(vocab, v, &[]),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{ModelConfig, PrefixInput};
    use crate::reward::parse_answer;
    use crate::world::{split_dataset, Indicator, World, WorldConfig};

    fn sample() -> IndicatorSample {
        let w = World::build(2, 40, &WorldConfig::default()).unwrap();
        let mut s = split_dataset(&w).unwrap().samples[0].clone();
        s.target = 7.5;
        s
    }

    #[test]
    fn answer_only_target() {
        let v = Vocabulary::standard();
        let gold = build_target(&sample(), SftTemplate::AnswerOnly, &v);
        assert_eq!(*gold.last().unwrap(), v.eos());
        assert_eq!(v.decode(&gold), "<think></think><answer>7.5</answer>");
    }

    #[test]
    fn rationale_target_positions() {
        let v = Vocabulary::standard();
        let mut s = sample();
        s.indicator = Indicator::Gdp;
        let mut region = (*s.region).clone();
        region.coord = [0.35, 0.92];
        s.region = std::sync::Arc::new(region);
        let gold = build_target(&s, SftTemplate::TemplatedRationale, &v);
        assert_eq!(gold[1], v.indicator_id(Indicator::Gdp));
        assert_eq!(gold[2], v.x_bucket_id(3));
        assert_eq!(gold[3], v.y_bucket_id(9));
        assert_eq!(parse_answer(&v.decode(&gold)), Ok(7.5));
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 4,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            n_prefix: 0,
            context: 8,
            raster_features: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn uniform_policy_loss_is_log_v() {
        let mut p = PolicyParams::<f64>::init(&tiny(), 0).unwrap();
        p.tensor_mut("out.weight").unwrap().fill(0.0);
        let prompt = Prompt { prefix: PrefixInput::Null, tokens: vec![0] };
        let l = sft_loss(&p, &prompt, &[1, 2, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_step_hand_computed() {
        // bias-only model: logits are the output bias at every position
        let mut p = PolicyParams::<f64>::zeros(&tiny()).unwrap();
        p.tensor_mut("out.bias").unwrap().copy_from_slice(&[(2.0f64).ln(), 0.0, (0.5f64).ln(), (0.5f64).ln()]);
        p.tensor_mut("ln_f.gain").unwrap().fill(1.0);
        // probabilities (0.5, 0.25, 0.125, 0.125)
        let prompt = Prompt { prefix: PrefixInput::Null, tokens: vec![0] };
        let l = sft_loss(&p, &prompt, &[0, 1]).unwrap();
        assert!((l + (0.5f64.ln() + 0.25f64.ln()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut seen = Vec::new();
        for step in 0..4 {
            seen.extend(batch_indices(10, 3, 7, step));
        }
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_ne!(batch_indices(10, 3, 7, 0), batch_indices(10, 3, 7, 4));
    }

    #[test]
    fn warmup_values_are_on_the_grid() {
        let v = Vocabulary::standard();
        let ex = warmup_examples(&vec![Prompt::bare(); 30], &v, 1);
        for e in &ex {
            assert!(parse_answer(&v.decode(&e.gold)).is_ok());
        }
        assert_eq!(ex, warmup_examples(&vec![Prompt::bare(); 30], &v, 1));
    }
}
