use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::seeding::{rng_for, stream};

use super::WorldConfig;

/// A `channels x height x width` image with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Raster {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.height * self.width;
        self.data[c * n..(c + 1) * n].iter().sum::<f64>() / n as f64
    }

    /// Mean over non-overlapping `patch x patch` tiles, channel-major:
    /// `channels * (height / patch) * (width / patch)` values.
    pub fn patch_means(&self, patch: usize) -> Vec<f64> {
        let (ph, pw) = (self.height / patch, self.width / patch);
        let norm = (patch * patch) as f64;
        let mut out = Vec::with_capacity(self.channels * ph * pw);
        for c in 0..self.channels {
            for pi in 0..ph {
                for pj in 0..pw {
                    let mut s = 0.0;
                    for i in pi * patch..(pi + 1) * patch {
                        for j in pj * patch..(pj + 1) * patch {
                            s += self.get(c, i, j);
                        }
                    }
                    out.push(s / norm);
                }
            }
        }
        out
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.channels)
            .map(|c| {
                (0..self.height)
                    .map(|i| (0..self.width).map(|j| self.get(c, i, j)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let channels = nested.len();
        let height = nested.first().map_or(0, Vec::len);
        let width = nested
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len);
        if channels == 0 || height == 0 || width == 0 {
            return Err(UrpError::Domain("raster has an empty dimension".into()));
        }
        let mut data = Vec::with_capacity(channels * height * width);
        for ch in nested {
            if ch.len() != height {
                return Err(UrpError::Domain("raster rows are ragged".into()));
            }
            for row in ch {
                if row.len() != width {
                    return Err(UrpError::Domain("raster columns are ragged".into()));
                }
                for &v in row {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(UrpError::Domain(format!("raster value {v} outside [0, 1]")));
                    }
                    data.push(v);
                }
            }
        }
        Ok(Raster {
            channels,
            height,
            width,
            data,
        })
    }
}

/// Renders the synthetic satellite tile for one region.
///
/// Channel `c` is `channel_bias + raster_gain * latents[c]` plus uniform texture;
/// every further latent `k >= channels` modulates a zero-mean diagonal gradient
/// on channel `(k - channels) % channels`, so it is visible to patch pooling but
/// leaves channel means untouched.
pub fn render_raster(latents: &[f64], config: &WorldConfig, seed: u64) -> Result<Raster> {
    config.validate()?;
    if latents.len() != config.n_factors {
        return Err(UrpError::Domain(format!(
            "expected {} latents, got {}",
            config.n_factors,
            latents.len()
        )));
    }
    let (ch, h, w) = (config.channels, config.height, config.width);
    let mut rng = rng_for(seed, &[stream::RASTER]);
    let diag_norm = (h + w).saturating_sub(2).max(1) as f64;
    let mut raster = Raster::constant(ch, h, w, 0.0);
    for c in 0..ch {
        let level = config.channel_bias + config.raster_gain * latents.get(c).copied().unwrap_or(0.0);
        for i in 0..h {
            for j in 0..w {
                let mut v = level;
                for k in (ch..latents.len()).filter(|k| (k - ch) % ch == c) {
                    let t = if (k - ch) % 2 == 0 {
                        (i + j) as f64 / diag_norm
                    } else {
                        (i + w - 1 - j) as f64 / diag_norm
                    };
                    v += config.pattern_amplitude * latents[k] * (t - 0.5);
                }
                if config.texture_amplitude > 0.0 {
                    v += config.texture_amplitude * (2.0 * rng.random::<f64>() - 1.0);
                }
                raster.data[(c * h + i) * w + j] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(raster)
}
