use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::world::{Indicator, PLACE_NAMES};

/// Token ids of the standard layout that do not depend on bucket or place counts.
pub mod ids {
    pub const DOT: usize = 10;
    pub const THINK_OPEN: usize = 11;
    pub const THINK_CLOSE: usize = 12;
    pub const ANS_OPEN: usize = 13;
    pub const ANS_CLOSE: usize = 14;
    pub const BOS: usize = 15;
    pub const EOS: usize = 16;
    pub const PAD: usize = 17;
    pub const INDICATOR_BASE: usize = 18;
    pub const BUCKET_BASE: usize = 23;

    pub const fn digit(d: usize) -> usize {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Digit,
    Dot,
    Marker,
    Indicator,
    XBucket,
    YBucket,
    Place,
    Toy,
}

const MARKERS: [&str; 7] = [
    "<think>", "</think>", "<answer>", "</answer>", "<bos>", "<eos>", "<pad>",
];

/// Structural tags as they appear in decoded text.
pub const STRUCTURAL_TAGS: [&str; 7] = MARKERS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, usize>,
    buckets: usize,
    n_places: usize,
    eos: usize,
}

impl Vocabulary {
    /// Digits, `.`, seven markers, five indicators, `x0..`/`y0..` buckets and places.
    pub fn new(buckets: usize, places: &[&str]) -> Result<Self> {
        if buckets == 0 || buckets > 100 {
            return Err(UrpError::Config("bucket count must be in 1..=100".into()));
        }
        let mut tokens: Vec<(String, TokenKind)> = Vec::new();
        tokens.extend((0..10).map(|d| (d.to_string(), TokenKind::Digit)));
        tokens.push((".".into(), TokenKind::Dot));
        tokens.extend(MARKERS.iter().map(|m| (m.to_string(), TokenKind::Marker)));
        tokens.extend(Indicator::ALL.iter().map(|i| (i.to_string(), TokenKind::Indicator)));
        tokens.extend((0..buckets).map(|b| (format!("x{b}"), TokenKind::XBucket)));
        tokens.extend((0..buckets).map(|b| (format!("y{b}"), TokenKind::YBucket)));
        tokens.extend(places.iter().map(|p| (p.to_string(), TokenKind::Place)));
        let vocab = Self::from_parts(tokens, buckets, places.len(), ids::EOS)?;
        debug_assert_eq!(vocab.tokens[ids::EOS], "<eos>");
        Ok(vocab)
    }

    /// 10 buckets per axis and the 32 world place names: 75 tokens.
    pub fn standard() -> Self {
        Self::new(10, &PLACE_NAMES).expect("standard vocabulary is valid")
    }

    /// A vocabulary of `size - 1` opaque tokens `t0, t1, ...` followed by `<eos>`,
    /// used by toy tasks.
    pub fn toy(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(UrpError::Config("toy vocabulary needs at least 2 tokens".into()));
        }
        let mut tokens: Vec<(String, TokenKind)> =
            (0..size - 1).map(|i| (format!("t{i}"), TokenKind::Toy)).collect();
        tokens.push(("<eos>".into(), TokenKind::Marker));
        Self::from_parts(tokens, 0, 0, size - 1)
    }

    /// Rebuilds the standard layout from a token list in any order. Ids depend
    /// only on token category and value, never on list order.
    pub fn from_tokens(list: &[String]) -> Result<Self> {
        let mut buckets = 0usize;
        let mut places: Vec<&str> = Vec::new();
        for t in list {
            if let Some(b) = t.strip_prefix('x').and_then(|b| b.parse::<usize>().ok()) {
                buckets = buckets.max(b + 1);
            }
        }
        for name in PLACE_NAMES {
            if list.iter().any(|t| t == name) {
                places.push(name);
            }
        }
        let vocab = Self::new(buckets, &places)?;
        if vocab.len() != list.len() || list.iter().any(|t| !vocab.index.contains_key(t)) {
            return Err(UrpError::Domain("token list is not a standard vocabulary".into()));
        }
        Ok(vocab)
    }

    fn from_parts(tokens: Vec<(String, TokenKind)>, buckets: usize, n_places: usize, eos: usize) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, (t, _)) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(UrpError::Config(format!("duplicate token {t:?}")));
            }
        }
        let (tokens, kinds) = tokens.into_iter().unzip();
        Ok(Vocabulary {
            tokens,
            kinds,
            index,
            buckets,
            n_places,
            eos,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn kind(&self, id: usize) -> TokenKind {
        self.kinds[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn eos(&self) -> usize {
        self.eos
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn n_places(&self) -> usize {
        self.n_places
    }

    pub fn indicator_id(&self, indicator: Indicator) -> usize {
        ids::INDICATOR_BASE + indicator.index()
    }

    pub fn x_bucket_id(&self, bucket: usize) -> usize {
        ids::BUCKET_BASE + bucket.min(self.buckets - 1)
    }

    pub fn y_bucket_id(&self, bucket: usize) -> usize {
        ids::BUCKET_BASE + self.buckets + bucket.min(self.buckets - 1)
    }

    pub fn place_id(&self, name: &str) -> Option<usize> {
        self.id(name).filter(|&i| self.kinds[i] == TokenKind::Place)
    }

    /// `floor(v * buckets)` clamped to the last bucket.
    pub fn bucket_of(&self, v: f64) -> usize {
        ((v * self.buckets as f64).floor().max(0.0) as usize).min(self.buckets - 1)
    }

    /// Renders ids as text, stopping at (and omitting) the first `<eos>`.
    /// Word-like tokens are preceded by a space.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.eos {
                break;
            }
            match self.kinds.get(id) {
                Some(TokenKind::Digit | TokenKind::Dot | TokenKind::Marker) => out.push_str(&self.tokens[id]),
                Some(_) => {
                    out.push(' ');
                    out.push_str(&self.tokens[id]);
                }
                None => out.push_str("<unk>"),
            }
        }
        out
    }

    /// Token ids for a value written with one fractional digit, e.g. `7.5`.
    pub fn number_ids(&self, value: f64) -> Vec<usize> {
        format!("{value:.1}")
            .chars()
            .map(|c| match c {
                '.' => ids::DOT,
                d => ids::digit(d.to_digit(10).expect("formatted number") as usize),
            })
            .collect()
    }
}
