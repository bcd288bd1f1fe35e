//! Rank correlation, R², the seen/unseen bias gap, and rank-map emission.
//!
//! Predictions that fail to parse are excluded from correlation metrics and
//! counted in `parse_rate` and `n_excluded`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::Real;
use crate::policy::{encode_prompt, greedy_decode, Ablation, PolicyParams, Vocabulary};
use crate::reward::{accuracy_reward, parse_answer, ParseStatus, RewardConfig};
use crate::world::{average_ranks, Dataset, Indicator, IndicatorSample, Split, SuperRegion};

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks. `None` for mismatched or short
/// inputs and when either side has no rank variance.
pub fn spearman(preds: &[f64], truths: &[f64]) -> Option<f64> {
    if preds.len() != truths.len() || preds.len() < 2 || preds.iter().chain(truths).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&average_ranks(preds), &average_ranks(truths))
}

/// `1 - SS_res / SS_tot` with the total sum of squares over the truths.
/// `None` for mismatched or short inputs and constant truths.
pub fn r_squared(preds: &[f64], truths: &[f64]) -> Option<f64> {
    if preds.len() != truths.len() || preds.len() < 2 {
        return None;
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = preds.iter().zip(truths).map(|(p, t)| (t - p).powi(2)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Maps a sample to the text of its answer.
pub trait Predictor: Sync {
    fn id(&self) -> String;
    fn predict(&self, sample: &IndicatorSample) -> Result<String>;
}

/// Greedy decoding of a trained policy.
pub struct PolicyPredictor<'a, T> {
    pub params: &'a PolicyParams<T>,
    pub vocab: &'a Vocabulary,
    pub ablation: Ablation,
    pub model_id: String,
}

impl<T: Real> Predictor for PolicyPredictor<'_, T> {
    fn id(&self) -> String {
        self.model_id.clone()
    }

    fn predict(&self, sample: &IndicatorSample) -> Result<String> {
        let prompt = encode_prompt(sample, self.ablation, self.vocab, self.params.config.patch);
        let c = greedy_decode(self.params, self.vocab, &prompt, &sample.sample_id(), self.params.config.max_len)?;
        Ok(c.text)
    }
}

fn answer_text(v: f64) -> String {
    format!("<think></think><answer>{v:.1}</answer>")
}

/// Always answers with the gold target.
pub struct OracleStub;

impl Predictor for OracleStub {
    fn id(&self) -> String {
        "oracle_stub".into()
    }

    fn predict(&self, sample: &IndicatorSample) -> Result<String> {
        Ok(answer_text(sample.target))
    }
}

/// Always answers with the same value.
pub struct ConstantStub(pub f64);

impl Predictor for ConstantStub {
    fn id(&self) -> String {
        format!("constant_stub_{:.1}", self.0)
    }

    fn predict(&self, _: &IndicatorSample) -> Result<String> {
        Ok(answer_text(self.0))
    }
}

/// Any function from sample to answer value.
pub struct FnStub<F>(pub String, pub F);

impl<F: Fn(&IndicatorSample) -> f64 + Sync> Predictor for FnStub<F> {
    fn id(&self) -> String {
        self.0.clone()
    }

    fn predict(&self, sample: &IndicatorSample) -> Result<String> {
        Ok(answer_text((self.1)(sample)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub region_id: String,
    pub coord: [f64; 2],
    pub super_region: SuperRegion,
    pub indicator: Indicator,
    pub split: Split,
    pub target: f64,
    pub text: String,
    pub value: Option<f64>,
    pub status: ParseStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub indicator: Indicator,
    pub split: Split,
    pub n: usize,
    pub n_parsed: usize,
    pub n_excluded: usize,
    pub rho: Option<f64>,
    pub r2: Option<f64>,
    pub parse_rate: f64,
    pub mean_abs_error: Option<f64>,
    /// Mean accuracy reward over all `n` samples, unparsed answers scoring 0.
    pub mean_accuracy_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub decoding: Decoding,
    pub ablation: Ablation,
    pub rows: Vec<MetricRow>,
    /// `rho(test_seen) - rho(test_unseen)` per indicator; null when undefined.
    pub bias_gap: BTreeMap<Indicator, Option<f64>>,
}

impl EvalReport {
    pub fn row(&self, indicator: Indicator, split: Split) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.indicator == indicator && r.split == split)
    }

    /// Mean of a row statistic over the indicators of one split.
    pub fn split_mean(&self, split: Split, f: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.split == split).filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

fn metric_row(indicator: Indicator, split: Split, preds: &[&Prediction], reward: &RewardConfig) -> MetricRow {
    let parsed: Vec<(f64, f64)> = preds.iter().filter_map(|p| p.value.map(|v| (v, p.target))).collect();
    let (pv, tv): (Vec<f64>, Vec<f64>) = parsed.iter().copied().unzip();
    let n = preds.len();
    MetricRow {
        indicator,
        split,
        n,
        n_parsed: parsed.len(),
        n_excluded: n - parsed.len(),
        rho: spearman(&pv, &tv),
        r2: r_squared(&pv, &tv),
        parse_rate: if n == 0 { 0.0 } else { parsed.len() as f64 / n as f64 },
        mean_abs_error: (!parsed.is_empty())
            .then(|| parsed.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / parsed.len() as f64),
        mean_accuracy_reward: if n == 0 {
            0.0
        } else {
            preds
                .iter()
                .map(|p| p.value.map_or(0.0, |v| accuracy_reward(v, p.target, reward.scale_c)))
                .sum::<f64>()
                / n as f64
        },
    }
}

/// Decodes every sample of `splits` and aggregates metrics per indicator and split.
pub fn evaluate_model<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    splits: &[Split],
    ablation: Ablation,
    reward: &RewardConfig,
) -> Result<Evaluation> {
    let samples: Vec<&IndicatorSample> = dataset.samples.iter().filter(|s| splits.contains(&s.split)).collect();
    if samples.is_empty() {
        return Err(UrpError::Data("nothing to evaluate: the requested splits are empty".into()));
    }
    let predictions = samples
        .par_iter()
        .map(|s| {
            let text = predictor.predict(s)?;
            let (value, status) = match parse_answer(&text) {
                Ok(v) => (Some(v), ParseStatus::Ok),
                Err(e) => (None, e),
            };
            Ok(Prediction {
                sample_id: s.sample_id(),
                region_id: s.region.region_id.clone(),
                coord: s.region.coord,
                super_region: s.region.super_region,
                indicator: s.indicator,
                split: s.split,
                target: s.target,
                text,
                value,
                status,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<(Indicator, Split), Vec<&Prediction>> = BTreeMap::new();
    for p in &predictions {
        groups.entry((p.indicator, p.split)).or_default().push(p);
    }
    let rows: Vec<MetricRow> = groups
        .iter()
        .map(|(&(ind, split), ps)| metric_row(ind, split, ps, reward))
        .collect();
    let mut report = EvalReport {
        model_id: predictor.id(),
        decoding: Decoding::Greedy,
        ablation,
        rows,
        bias_gap: BTreeMap::new(),
    };
    report.bias_gap = bias_gap(&report);
    Ok(Evaluation { report, predictions })
}

/// `rho_seen - rho_unseen` for every indicator evaluated on a test split.
pub fn bias_gap(report: &EvalReport) -> BTreeMap<Indicator, Option<f64>> {
    let mut out = BTreeMap::new();
    for r in &report.rows {
        if matches!(r.split, Split::TestSeen | Split::TestUnseen) {
            let seen = report.row(r.indicator, Split::TestSeen).and_then(|x| x.rho);
            let unseen = report.row(r.indicator, Split::TestUnseen).and_then(|x| x.rho);
            out.insert(r.indicator, seen.zip(unseen).map(|(s, u)| s - u));
        }
    }
    out
}

pub const RANK_MAP_HEADER: &str = "region_id,x,y,super_region,truth_rank,pred_rank";

/// Rank-map CSV text for the parsed predictions of one indicator and split.
/// Ranks are average ranks among the emitted rows; rows are ordered by region id.
pub fn rank_map_csv(predictions: &[Prediction], indicator: Indicator, split: Split) -> String {
    let mut rows: Vec<&Prediction> = predictions
        .iter()
        .filter(|p| p.indicator == indicator && p.split == split && p.value.is_some())
        .collect();
    rows.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    let truth_rank = average_ranks(&rows.iter().map(|p| p.target).collect::<Vec<_>>());
    let pred_rank = average_ranks(&rows.iter().map(|p| p.value.expect("filtered")).collect::<Vec<_>>());
    let mut out = String::from(RANK_MAP_HEADER);
    out.push('\n');
    for (i, p) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.region_id, p.coord[0], p.coord[1], p.super_region, truth_rank[i], pred_rank[i]
        );
    }
    out
}

pub fn emit_rank_map(predictions: &[Prediction], indicator: Indicator, split: Split, path: &Path) -> Result<()> {
    std::fs::write(path, rank_map_csv(predictions, indicator, split)).map_err(|e| UrpError::io(path, e))
}
