//! End-to-end stages behind the command-line interface: data generation,
//! both trainers, evaluation and rollout inspection. Every stage writes the
//! resolved configuration next to its artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{content_hash, RunConfig};
use crate::error::{Result, UrpError};
use crate::eval::{emit_rank_map, evaluate_model, Evaluation, OracleStub, PolicyPredictor, Predictor};
use crate::grpo::{collect_group, select_batch, train_step, GrpoConfig, TrainState, UrpTask};
use crate::numeric::{Precision, Real};
use crate::policy::{encode_prompt, Ablation, Checkpoint, CheckpointKind, PolicyParams, Prompt, Vocabulary};
use crate::seeding::{rng_for, stream};
use crate::sft::{build_target, sft_step, train_sft, warmup_examples, SftConfig, SftExample, SftState, SftTemplate};
use crate::world::{emit_dataset, load_dataset, split_dataset, Dataset, Indicator, IndicatorSample, Split, World, SCHEMA};

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const RUN_INFO: &str = "run.json";
pub const GRPO_METRICS: &str = "metrics.jsonl";
pub const SFT_METRICS: &str = "loss.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BASE_CHECKPOINT: &str = "base.ckpt";
pub const REPORT: &str = "report.json";

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| UrpError::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    io(path, fs::write(path, contents))
}

/// Creates `dir`, refusing to reuse a non-empty directory unless `overwrite`.
fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = io(dir, fs::read_dir(dir))?.next().is_some();
        if non_empty && !overwrite {
            return Err(UrpError::Refused(format!(
                "{} already exists and is not empty (pass --overwrite to replace it)",
                dir.display()
            )));
        }
    }
    io(dir, fs::create_dir_all(dir))
}

fn split_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub world_seed: u64,
    pub n_regions: usize,
    pub config_hash: String,
    pub dataset_hash: String,
    /// indicator -> split -> number of samples
    pub counts: BTreeMap<Indicator, BTreeMap<Split, usize>>,
    pub files: BTreeMap<Split, String>,
}

/// Builds the world, splits it and writes one JSONL file per split plus a manifest.
pub fn gen_data(cfg: &RunConfig, out: &Path, overwrite: bool) -> Result<Manifest> {
    cfg.validate()?;
    prepare_dir(out, overwrite)?;
    let world = World::build(cfg.world.seed, cfg.world.n_regions, &cfg.world.world_config())?;
    let dataset = split_dataset(&world)?;
    let mut files = BTreeMap::new();
    for split in Split::ALL {
        let path = split_file(out, split);
        emit_dataset(&dataset.subset(split), &path)?;
        files.insert(split, path.file_name().unwrap().to_string_lossy().into_owned());
    }
    let mut counts: BTreeMap<Indicator, BTreeMap<Split, usize>> = BTreeMap::new();
    for (&(ind, split), &n) in &dataset.counts() {
        counts.entry(ind).or_default().insert(split, n);
    }
    let manifest = Manifest {
        schema: SCHEMA.to_string(),
        world_seed: cfg.world.seed,
        n_regions: cfg.world.n_regions,
        config_hash: cfg.hash(),
        dataset_hash: dataset_hash(out)?,
        counts,
        files,
    };
    write_file(&out.join(MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    write_file(&out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    Ok(manifest)
}

/// Content hash of the four split files.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut parts = Vec::new();
    for split in Split::ALL {
        let path = split_file(dir, split);
        parts.push(io(&path, fs::read(&path))?);
    }
    Ok(content_hash(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>()))
}

/// Loads every split of a generated dataset and checks it against the manifest.
pub fn load_data(dir: &Path) -> Result<(Dataset, String)> {
    let mut samples = Vec::new();
    for split in Split::ALL {
        let ds = load_dataset(&split_file(dir, split))?;
        if let Some(bad) = ds.samples.iter().find(|s| s.split != split) {
            return Err(UrpError::Data(format!(
                "{} contains a {} sample",
                split_file(dir, split).display(),
                bad.split
            )));
        }
        samples.extend(ds.samples);
    }
    let hash = dataset_hash(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        let text = io(&manifest_path, fs::read_to_string(&manifest_path))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| UrpError::Data(format!("{}: {e}", manifest_path.display())))?;
        if manifest.dataset_hash != hash {
            return Err(UrpError::Data(format!(
                "dataset files in {} do not match their manifest hash",
                dir.display()
            )));
        }
    }
    Ok((Dataset { samples }, hash))
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub overwrite: bool,
    /// Resume from (same trainer) or initialize from (any other) checkpoint.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunInfo {
    trainer: String,
    config_hash: String,
    training_hash: String,
    dataset_hash: String,
    indicators: Vec<Indicator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub steps: u64,
    /// Last metrics line (GRPO step or SFT epoch).
    pub last_metrics: Option<String>,
}

fn training_samples<'a>(dataset: &'a Dataset, cfg: &RunConfig) -> Result<Vec<&'a IndicatorSample>> {
    let train: Vec<&IndicatorSample> = dataset
        .split(Split::Train)
        .filter(|s| cfg.world.indicators.contains(&s.indicator))
        .collect();
    if train.is_empty() {
        return Err(UrpError::Data("the training split has no samples for the selected indicators".into()));
    }
    Ok(train)
}

fn full_prompts(samples: &[&IndicatorSample], vocab: &Vocabulary, patch: usize) -> Vec<Prompt> {
    samples.iter().map(|s| encode_prompt(s, Ablation::default(), vocab, patch)).collect()
}

/// Random initialization followed, when enabled, by the format warm-up.
pub fn build_base<T: Real>(cfg: &RunConfig, prompts: &[Prompt], vocab: &Vocabulary) -> Result<PolicyParams<T>> {
    let init = PolicyParams::init(&cfg.model, cfg.base.seed)?;
    if !cfg.base.enabled {
        return Ok(init);
    }
    let sc = SftConfig {
        learning_rate: cfg.base.learning_rate,
        epochs: cfg.base.epochs,
        batch_size: cfg.base.batch_size,
        template: SftTemplate::AnswerOnly,
        seed: cfg.base.seed,
        ..SftConfig::default()
    };
    let mut state = SftState::new(init, &sc);
    train_sft(&mut state, &warmup_examples(prompts, vocab, cfg.base.seed), &sc)?;
    Ok(state.theta)
}

fn tag_checkpoint(c: &mut Checkpoint, info: &RunInfo) {
    c.meta.insert("training_hash".into(), info.training_hash.clone().into());
    c.meta.insert("dataset_hash".into(), info.dataset_hash.clone().into());
    c.meta.insert(
        "indicators".into(),
        toml::Value::Array(info.indicators.iter().map(|i| toml::Value::from(i.as_str())).collect()),
    );
}

fn meta_str<'a>(c: &'a Checkpoint, key: &str) -> Option<&'a str> {
    c.meta.get(key).and_then(|v| v.as_str())
}

enum Start<T> {
    Fresh(PolicyParams<T>),
    Resume(Checkpoint),
}

/// Decides between resuming (same trainer) and initializing (anything else).
fn resolve_start<T: Real>(
    cfg: &RunConfig,
    opts: &TrainOptions,
    trainer: &str,
    info: &RunInfo,
    prompts: &[Prompt],
    vocab: &Vocabulary,
) -> Result<(Start<T>, bool)> {
    let Some(path) = &opts.checkpoint else {
        return Ok((Start::Fresh(build_base(cfg, prompts, vocab)?), false));
    };
    let c = Checkpoint::load(path)?;
    if c.kind != CheckpointKind::Policy {
        return Err(UrpError::Refused(format!("{} is not a policy checkpoint", path.display())));
    }
    c.expect_model(&cfg.model)?;
    if meta_str(&c, "trainer") == Some(trainer) {
        if meta_str(&c, "training_hash") != Some(info.training_hash.as_str()) {
            return Err(UrpError::Refused(format!(
                "{} was produced under a different configuration",
                path.display()
            )));
        }
        if meta_str(&c, "dataset_hash") != Some(info.dataset_hash.as_str()) {
            return Err(UrpError::Refused(format!("{} was trained on a different dataset", path.display())));
        }
        Ok((Start::Resume(c), true))
    } else {
        Ok((Start::Fresh(c.params("theta")?), false))
    }
}

/// Output-directory checks: resuming into the checkpoint's own directory is
/// allowed, anything else needs an empty directory or `--overwrite`.
fn prepare_train_dir(opts: &TrainOptions, resuming: bool) -> Result<()> {
    let same_dir = resuming
        && opts.checkpoint.as_ref().and_then(|c| c.parent()).map(|p| p.canonicalize().ok())
            == Some(opts.out.canonicalize().ok())
        && opts.out.exists();
    prepare_dir(&opts.out, opts.overwrite || same_dir)
}

/// First `keep` lines of the metric log that sits next to `checkpoint`.
fn inherited_lines(checkpoint: &Path, file: &str, keep: usize) -> Result<Vec<String>> {
    if keep == 0 {
        return Ok(Vec::new());
    }
    let path = checkpoint.parent().unwrap_or(Path::new(".")).join(file);
    let text = io(&path, fs::read_to_string(&path))?;
    let lines: Vec<String> = text.lines().take(keep).map(str::to_string).collect();
    if lines.len() < keep {
        return Err(UrpError::Data(format!(
            "{} has {} lines but the checkpoint is at {keep}",
            path.display(),
            lines.len()
        )));
    }
    Ok(lines)
}

struct MetricLog {
    path: PathBuf,
    file: fs::File,
    last: Option<String>,
}

impl MetricLog {
    fn create(path: PathBuf, inherited: &[String]) -> Result<Self> {
        let mut file = io(&path, fs::File::create(&path))?;
        for line in inherited {
            io(&path, writeln!(file, "{line}"))?;
        }
        Ok(MetricLog {
            path,
            file,
            last: inherited.last().cloned(),
        })
    }

    fn push(&mut self, line: String) -> Result<()> {
        io(&self.path, writeln!(self.file, "{line}"))?;
        self.last = Some(line);
        Ok(())
    }
}

fn write_run_files(cfg: &RunConfig, out: &Path, info: &RunInfo) -> Result<()> {
    write_file(&out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    write_file(&out.join(RUN_INFO), serde_json::to_string_pretty(info).expect("run info serializes") + "\n")
}

fn step_checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

pub fn train_grpo(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    match cfg.model.precision {
        Precision::F32 => train_grpo_as::<f32>(cfg, opts),
        Precision::F64 => train_grpo_as::<f64>(cfg, opts),
    }
}

fn train_grpo_as<T: Real>(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let (dataset, hash) = load_data(&opts.data)?;
    let vocab = Vocabulary::standard();
    let train = training_samples(&dataset, cfg)?;
    let prompts = full_prompts(&train, &vocab, cfg.model.patch);
    let info = RunInfo {
        trainer: "grpo".into(),
        config_hash: cfg.hash(),
        training_hash: cfg.training_hash(),
        dataset_hash: hash,
        indicators: cfg.world.indicators.clone(),
    };
    let (start, resuming) = resolve_start::<T>(cfg, opts, "grpo", &info, &prompts, &vocab)?;
    prepare_train_dir(opts, resuming)?;
    write_run_files(cfg, &opts.out, &info)?;

    let mut state = match start {
        Start::Fresh(base) => {
            let mut c = Checkpoint::with_params(&base);
            c.meta.insert("trainer".into(), "base".into());
            tag_checkpoint(&mut c, &info);
            c.save(&opts.out.join(BASE_CHECKPOINT))?;
            TrainState::new(base, &cfg.grpo)
        }
        Start::Resume(c) => TrainState::from_checkpoint(&c, &cfg.grpo)?,
    };
    let inherited = match &opts.checkpoint {
        Some(c) if resuming => inherited_lines(c, GRPO_METRICS, state.step as usize)?,
        _ => Vec::new(),
    };
    let mut log = MetricLog::create(opts.out.join(GRPO_METRICS), &inherited)?;

    let save = |state: &TrainState<T>, name: &str| -> Result<PathBuf> {
        let mut c = state.to_checkpoint();
        tag_checkpoint(&mut c, &info);
        let path = opts.out.join(name);
        c.save(&path)?;
        Ok(path)
    };
    let gc: &GrpoConfig = &cfg.grpo;
    while state.step < gc.max_steps {
        let tasks: Vec<UrpTask> = select_batch(train.len(), gc.prompts_per_step, gc.seed, state.step)
            .into_iter()
            .map(|i| UrpTask {
                prompt: prompts[i].clone(),
                sample_id: train[i].sample_id(),
                target: train[i].target,
                reward: cfg.reward,
            })
            .collect();
        let (metrics, _) = train_step(&mut state, &vocab, &tasks, gc)?;
        log.push(serde_json::to_string(&metrics).expect("metrics serialize"))?;
        if state.step % gc.checkpoint_every == 0 {
            save(&state, &step_checkpoint_name(state.step))?;
        }
    }
    let final_checkpoint = save(&state, FINAL_CHECKPOINT)?;
    Ok(TrainSummary {
        final_checkpoint,
        steps: state.step,
        last_metrics: log.last,
    })
}

pub fn train_sft_run(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    match cfg.model.precision {
        Precision::F32 => train_sft_as::<f32>(cfg, opts),
        Precision::F64 => train_sft_as::<f64>(cfg, opts),
    }
}

fn train_sft_as<T: Real>(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let (dataset, hash) = load_data(&opts.data)?;
    let vocab = Vocabulary::standard();
    let train = training_samples(&dataset, cfg)?;
    let prompts = full_prompts(&train, &vocab, cfg.model.patch);
    let examples: Vec<SftExample> = train
        .iter()
        .zip(&prompts)
        .map(|(s, p)| SftExample {
            prompt: p.clone(),
            gold: build_target(s, cfg.sft.template, &vocab),
        })
        .collect();
    let info = RunInfo {
        trainer: "sft".into(),
        config_hash: cfg.hash(),
        training_hash: cfg.training_hash(),
        dataset_hash: hash,
        indicators: cfg.world.indicators.clone(),
    };
    let (start, resuming) = resolve_start::<T>(cfg, opts, "sft", &info, &prompts, &vocab)?;
    prepare_train_dir(opts, resuming)?;
    write_run_files(cfg, &opts.out, &info)?;

    let sc = &cfg.sft;
    let mut state = match start {
        Start::Fresh(base) => {
            let mut c = Checkpoint::with_params(&base);
            c.meta.insert("trainer".into(), "base".into());
            tag_checkpoint(&mut c, &info);
            c.save(&opts.out.join(BASE_CHECKPOINT))?;
            SftState::new(base, sc)
        }
        Start::Resume(c) => SftState::from_checkpoint(&c, sc)?,
    };
    let per_epoch = SftState::<T>::batches_per_epoch(examples.len(), sc.batch_size);
    let inherited = match &opts.checkpoint {
        Some(c) if resuming => inherited_lines(c, SFT_METRICS, (state.step / per_epoch) as usize)?,
        _ => Vec::new(),
    };
    let mut log = MetricLog::create(opts.out.join(SFT_METRICS), &inherited)?;
    let save = |state: &SftState<T>, name: &str| -> Result<PathBuf> {
        let mut c = state.to_checkpoint();
        tag_checkpoint(&mut c, &info);
        let path = opts.out.join(name);
        c.save(&path)?;
        Ok(path)
    };
    while !state.is_done(examples.len(), sc) {
        if let Some(epoch) = sft_step(&mut state, &examples, sc)? {
            log.push(serde_json::to_string(&epoch).expect("loss serializes"))?;
        }
        if state.step % sc.checkpoint_every == 0 {
            save(&state, &step_checkpoint_name(state.step))?;
        }
    }
    let final_checkpoint = save(&state, FINAL_CHECKPOINT)?;
    Ok(TrainSummary {
        final_checkpoint,
        steps: state.step,
        last_metrics: log.last,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub overwrite: bool,
}

fn checked_checkpoint(cfg: &RunConfig, path: &Path, dataset_hash: &str) -> Result<Checkpoint> {
    let c = Checkpoint::load(path)?;
    if c.kind == CheckpointKind::Policy {
        c.expect_model(&cfg.model)?;
        if let Some(h) = meta_str(&c, "dataset_hash") {
            if h != dataset_hash {
                return Err(UrpError::Refused(format!(
                    "{} was trained on a different dataset",
                    path.display()
                )));
            }
        }
    }
    Ok(c)
}

fn model_id(c: &Checkpoint, path: &Path) -> String {
    let trainer = meta_str(c, "trainer").unwrap_or("policy");
    format!("{trainer}:{}", path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default())
}

/// Evaluates a checkpoint on `cfg.eval.splits` and writes the report, rank maps
/// and resolved config into `opts.out`.
pub fn evaluate(cfg: &RunConfig, opts: &EvalOptions) -> Result<Evaluation> {
    cfg.validate()?;
    let (dataset, hash) = load_data(&opts.data)?;
    let c = checked_checkpoint(cfg, &opts.checkpoint, &hash)?;
    let dataset = dataset.filter_indicators(&cfg.world.indicators);
    let ablation = cfg.eval.ablation();
    let vocab = Vocabulary::standard();
    let id = model_id(&c, &opts.checkpoint);
    let ev = match (c.kind, cfg.model.precision) {
        (CheckpointKind::OracleStub, _) => run_eval(&OracleStub, &dataset, cfg, ablation)?,
        (CheckpointKind::Policy, Precision::F32) => {
            let p = c.params::<f32>("theta")?;
            run_eval(&PolicyPredictor { params: &p, vocab: &vocab, ablation, model_id: id }, &dataset, cfg, ablation)?
        }
        (CheckpointKind::Policy, Precision::F64) => {
            let p = c.params::<f64>("theta")?;
            run_eval(&PolicyPredictor { params: &p, vocab: &vocab, ablation, model_id: id }, &dataset, cfg, ablation)?
        }
    };
    prepare_dir(&opts.out, opts.overwrite)?;
    write_file(&opts.out.join(REPORT), ev.report.to_json() + "\n")?;
    write_file(&opts.out.join(RESOLVED_CONFIG), cfg.to_toml())?;
    write_file(
        &opts.out.join(RUN_INFO),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": cfg.hash(),
            "dataset_hash": hash,
            "checkpoint": opts.checkpoint.file_name().map(|f| f.to_string_lossy().into_owned()),
        }))
        .expect("run info serializes")
            + "\n",
    )?;
    for row in &ev.report.rows {
        let path = opts.out.join(format!("rank_map_{}_{}.csv", row.indicator, row.split));
        emit_rank_map(&ev.predictions, row.indicator, row.split, &path)?;
    }
    Ok(ev)
}

fn run_eval<P: Predictor>(p: &P, dataset: &Dataset, cfg: &RunConfig, ablation: Ablation) -> Result<Evaluation> {
    evaluate_model(p, dataset, &cfg.eval.splits, ablation, &cfg.reward)
}

#[derive(Debug, Clone, Default)]
pub struct RolloutOptions {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub region: String,
    pub indicator: Option<Indicator>,
    pub n: usize,
}

/// Samples `n` candidates for one region and formats them with their rewards
/// and within-group advantages.
pub fn rollout(cfg: &RunConfig, opts: &RolloutOptions) -> Result<String> {
    cfg.validate()?;
    let (dataset, hash) = load_data(&opts.data)?;
    let c = checked_checkpoint(cfg, &opts.checkpoint, &hash)?;
    if c.kind != CheckpointKind::Policy {
        return Err(UrpError::Refused("only policy checkpoints can be sampled".into()));
    }
    if opts.n == 0 {
        return Err(UrpError::Config("--n must be at least 1".into()));
    }
    let sample = dataset
        .samples
        .iter()
        .filter(|s| s.region.region_id == opts.region)
        .find(|s| opts.indicator.is_none_or(|i| s.indicator == i))
        .ok_or_else(|| {
            UrpError::Lookup(match opts.indicator {
                Some(i) => format!("no sample for region {:?} and indicator {i}", opts.region),
                None => format!("unknown region {:?}", opts.region),
            })
        })?;
    match cfg.model.precision {
        Precision::F32 => rollout_as(&c.params::<f32>("theta")?, cfg, sample, opts.n),
        Precision::F64 => rollout_as(&c.params::<f64>("theta")?, cfg, sample, opts.n),
    }
}

fn rollout_as<T: Real>(params: &PolicyParams<T>, cfg: &RunConfig, sample: &IndicatorSample, n: usize) -> Result<String> {
    let vocab = Vocabulary::standard();
    let ablation = cfg.eval.ablation();
    let task = UrpTask {
        prompt: encode_prompt(sample, ablation, &vocab, params.config.patch),
        sample_id: sample.sample_id(),
        target: sample.target,
        reward: cfg.reward,
    };
    let gc = GrpoConfig {
        group_size: n,
        ..cfg.grpo.clone()
    };
    let mut rng = rng_for(cfg.grpo.seed, &[stream::INSPECT]);
    let group = collect_group(params, &vocab, &task, &gc, &mut rng)?;
    let r = &sample.region;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "sample {} split={} super_region={} coord=({:.4}, {:.4}) target={:.1}",
        task.sample_id, sample.split, r.super_region, r.coord[0], r.coord[1], sample.target
    );
    let _ = writeln!(
        out,
        "temperature={} group_size={} lambda={} scale_c={}",
        gc.rollout_temperature, n, cfg.reward.lambda, cfg.reward.scale_c
    );
    for (i, ((cand, rw), adv)) in group.candidates.iter().zip(&group.rewards).zip(&group.advantages).enumerate() {
        let _ = writeln!(out, "[{i}] {}", cand.text);
        let _ = writeln!(
            out,
            "    status={} parsed={} r_acc={:.6} r_fmt={} composite={:.6} advantage={:+.6}",
            rw.parse_status.as_str(),
            rw.parsed_value.map_or("-".to_string(), |v| format!("{v:.1}")),
            rw.r_acc,
            rw.r_fmt,
            rw.composite,
            adv
        );
        let lps: Vec<String> = cand
            .tokens
            .iter()
            .zip(&cand.per_token_logprob)
            .map(|(&t, lp)| format!("{}:{lp:.4}", vocab.token(t)))
            .collect();
        let _ = writeln!(out, "    logprobs {}", lps.join(" "));
    }
    Ok(out)
}
