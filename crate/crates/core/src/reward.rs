//! Answer grammar and the composite reward.
//!
//! A well-formed answer is exactly `<think>REASONING</think><answer>V</answer>`
//! where REASONING contains no structural tag and V matches `-?[0-9]+(\.[0-9])?`
//! with a value in `[0, 10]`. Checks run in that order (structure, number,
//! range) and the first failure names the status.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::policy::vocab::STRUCTURAL_TAGS;

pub const VALUE_MIN: f64 = 0.0;
pub const VALUE_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the format term.
    pub lambda: f64,
    /// Absolute error at which accuracy reward reaches zero.
    pub scale_c: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: 0.1,
            scale_c: 10.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(UrpError::Config(format!("reward.lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.scale_c > 0.0 && self.scale_c.is_finite()) {
            return Err(UrpError::Config(format!("reward.scale_c must be positive, got {}", self.scale_c)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    BadStructure,
    OutOfRange,
    NotANumber,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Ok => "ok",
            ParseStatus::BadStructure => "bad_structure",
            ParseStatus::OutOfRange => "out_of_range",
            ParseStatus::NotANumber => "not_a_number",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_fmt: f64,
    pub composite: f64,
    pub parsed_value: Option<f64>,
    pub parse_status: ParseStatus,
}

fn is_decimal(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| f.len() == 1 && f.as_bytes()[0].is_ascii_digit())
}

/// Parses a candidate's text. Never panics.
pub fn parse_answer(text: &str) -> std::result::Result<f64, ParseStatus> {
    let bad = Err(ParseStatus::BadStructure);
    let Some(rest) = text.strip_prefix("<think>") else { return bad };
    let Some((think, rest)) = rest.split_once("</think>") else { return bad };
    if STRUCTURAL_TAGS.iter().any(|t| think.contains(t)) {
        return bad;
    }
    let Some(rest) = rest.strip_prefix("<answer>") else { return bad };
    let Some((value, tail)) = rest.split_once("</answer>") else { return bad };
    if !tail.is_empty() || STRUCTURAL_TAGS.iter().any(|t| value.contains(t)) {
        return bad;
    }
    if !is_decimal(value) {
        return Err(ParseStatus::NotANumber);
    }
    let v: f64 = value.parse().map_err(|_| ParseStatus::NotANumber)?;
    if !(VALUE_MIN..=VALUE_MAX).contains(&v) {
        return Err(ParseStatus::OutOfRange);
    }
    Ok(v)
}

/// `max(0, 1 - |pred - truth| / scale_c)`; zero for a non-finite prediction.
pub fn accuracy_reward(pred: f64, truth: f64, scale_c: f64) -> f64 {
    if !pred.is_finite() {
        return 0.0;
    }
    (1.0 - (pred - truth).abs() / scale_c).max(0.0)
}

pub fn composite_reward(text: &str, truth: f64, config: &RewardConfig) -> RewardBreakdown {
    let (parsed_value, parse_status) = match parse_answer(text) {
        Ok(v) => (Some(v), ParseStatus::Ok),
        Err(s) => (None, s),
    };
    let r_fmt = if parse_status == ParseStatus::Ok { 1.0 } else { 0.0 };
    let r_acc = parsed_value.map_or(0.0, |v| accuracy_reward(v, truth, config.scale_c));
    RewardBreakdown {
        r_acc,
        r_fmt,
        composite: (1.0 - config.lambda) * r_acc + config.lambda * r_fmt,
        parsed_value,
        parse_status,
    }
}
