use serde::{Deserialize, Serialize};

use crate::world::{address_street, IndicatorSample};

use super::vocab::{ids, Vocabulary};

/// Number of place slots in a serialized prompt; shorter lists are padded.
pub const PROMPT_PLACES: usize = 4;

/// Which input modalities the policy may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_raster: bool,
    pub use_text: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_raster: true,
            use_text: true,
        }
    }
}

/// Source of the prefix vectors that precede the prompt tokens.
#[derive(Debug, Clone, PartialEq)]
pub enum PrefixInput {
    /// Centered patch-pooled raster features, projected by the policy.
    Raster(Vec<f64>),
    /// The learned null vector, repeated for every prefix slot.
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub prefix: PrefixInput,
    pub tokens: Vec<usize>,
}

impl Prompt {
    /// A prompt with no raster and only `<bos>`.
    pub fn bare() -> Self {
        Prompt {
            prefix: PrefixInput::Null,
            tokens: vec![ids::BOS],
        }
    }
}

/// Serializes a sample as `[<bos>, indicator, x-bucket, y-bucket, street, place x4]`
/// preceded by raster prefix vectors.
///
/// Without text, every location-derived token becomes `<pad>`; the indicator
/// token always stays so the task remains identified.
pub fn encode_prompt(sample: &IndicatorSample, ablation: Ablation, vocab: &Vocabulary, patch: usize) -> Prompt {
    let region = &sample.region;
    let prefix = if ablation.use_raster {
        PrefixInput::Raster(region.raster.patch_means(patch).into_iter().map(|v| v - 0.5).collect())
    } else {
        PrefixInput::Null
    };
    let mut tokens = vec![ids::BOS, vocab.indicator_id(sample.indicator)];
    if ablation.use_text {
        tokens.push(vocab.x_bucket_id(vocab.bucket_of(region.coord[0])));
        tokens.push(vocab.y_bucket_id(vocab.bucket_of(region.coord[1])));
        tokens.push(
            address_street(&region.address)
                .and_then(|s| vocab.place_id(s))
                .unwrap_or(ids::PAD),
        );
        for slot in 0..PROMPT_PLACES {
            let id = region
                .places
                .get(slot)
                .and_then(|p| vocab.place_id(p))
                .unwrap_or(ids::PAD);
            tokens.push(id);
        }
    } else {
        tokens.extend(std::iter::repeat(ids::PAD).take(3 + PROMPT_PLACES));
    }
    Prompt { prefix, tokens }
}
