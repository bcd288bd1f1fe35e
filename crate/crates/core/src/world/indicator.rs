use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::seeding::{rng_for, stream};

use super::SuperRegion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Gdp,
    Carbon,
    Population,
    Poverty,
    HousePrice,
}

impl Indicator {
    pub const ALL: [Indicator; 5] = [
        Indicator::Gdp,
        Indicator::Carbon,
        Indicator::Population,
        Indicator::Poverty,
        Indicator::HousePrice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::Gdp => "gdp",
            Indicator::Carbon => "carbon",
            Indicator::Population => "population",
            Indicator::Poverty => "poverty",
            Indicator::HousePrice => "house_price",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Loadings on the first four latent factors. Extra factors get zero weight.
    pub fn weights(self) -> [f64; 4] {
        match self {
            Indicator::Gdp => [0.9, 0.6, -0.3, 0.4],
            Indicator::Carbon => [0.5, 0.9, 0.4, -0.3],
            Indicator::Population => [0.7, -0.4, 0.8, 0.3],
            Indicator::Poverty => [-0.8, -0.5, 0.3, -0.4],
            Indicator::HousePrice => [0.6, 0.2, -0.7, 0.6],
        }
    }

    pub fn intercept(self) -> f64 {
        match self {
            Indicator::Gdp => 0.1,
            Indicator::Carbon => -0.1,
            Indicator::Population => 0.0,
            Indicator::Poverty => 0.2,
            Indicator::HousePrice => -0.2,
        }
    }

    /// Default additive offset applied to regions of the unseen band.
    pub fn default_shift(self) -> f64 {
        match self {
            Indicator::Gdp => 0.5,
            Indicator::Carbon => 0.4,
            Indicator::Population => -0.3,
            Indicator::Poverty => -0.6,
            Indicator::HousePrice => 0.8,
        }
    }

    /// Parses a comma-separated list such as `carbon,population`.
    pub fn parse_list(list: &str) -> Result<Vec<Indicator>> {
        let out = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Indicator::from_str)
            .collect::<Result<Vec<_>>>()?;
        if out.is_empty() {
            return Err(UrpError::Config("indicator list is empty".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = UrpError;

    fn from_str(s: &str) -> Result<Self> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| UrpError::Domain(format!("unknown indicator {s:?}")))
    }
}

/// Parameters of the linear indicator model for one indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub shift: f64,
    pub noise_sigma: f64,
}

impl IndicatorModel {
    pub fn standard(indicator: Indicator, n_factors: usize, shift: f64, noise_sigma: f64) -> Self {
        let base = indicator.weights();
        IndicatorModel {
            weights: (0..n_factors).map(|k| base.get(k).copied().unwrap_or(0.0)).collect(),
            intercept: indicator.intercept(),
            shift,
            noise_sigma,
        }
    }

    /// Noise-free part of the score.
    pub fn mean_score(&self, latents: &[f64], super_region: SuperRegion) -> f64 {
        let dot: f64 = self.weights.iter().zip(latents).map(|(w, l)| w * l).sum();
        let shift = if super_region == SuperRegion::Unseen {
            self.shift
        } else {
            0.0
        };
        dot + self.intercept + shift
    }
}

/// Raw (unscaled) indicator score: `w . latents + b + shift * [unseen] + N(0, sigma^2)`.
pub fn derive_indicator(
    latents: &[f64],
    model: &IndicatorModel,
    super_region: SuperRegion,
    noise_seed: u64,
) -> Result<f64> {
    if latents.len() != model.weights.len() {
        return Err(UrpError::Domain(format!(
            "expected {} latents, got {}",
            model.weights.len(),
            latents.len()
        )));
    }
    let mut score = model.mean_score(latents, super_region);
    if model.noise_sigma > 0.0 {
        let z: f64 = StandardNormal.sample(&mut rng_for(noise_seed, &[stream::NOISE]));
        score += model.noise_sigma * z;
    }
    Ok(score)
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rounds to one decimal, halves away from zero.
pub fn round_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Maps raw scores onto the 0.0-9.9 grid by average-rank percentile.
pub fn rank_scale(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(UrpError::Domain(format!(
            "rank scaling needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(UrpError::Domain("rank scaling received a non-finite score".into()));
    }
    let n = scores.len() as f64;
    Ok(average_ranks(scores)
        .into_iter()
        .map(|r| round_tenth(9.9 * (r - 1.0) / (n - 1.0)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_scale_three_scores() {
        assert_eq!(rank_scale(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 5.0, 9.9]);
        assert_eq!(rank_scale(&[3.0, 1.0, 2.0]).unwrap(), vec![9.9, 0.0, 5.0]);
    }

    #[test]
    fn rank_scale_ties_and_errors() {
        let t = rank_scale(&[4.0; 6]).unwrap();
        assert!(t.windows(2).all(|w| w[0] == w[1]));
        assert!(rank_scale(&[]).is_err());
        assert!(rank_scale(&[1.0]).is_err());
    }

    #[test]
    fn zero_latents_give_intercept_and_shift() {
        let m = IndicatorModel::standard(Indicator::Poverty, 4, -0.6, 0.0);
        let seen = derive_indicator(&[0.0; 4], &m, SuperRegion::Seen, 3).unwrap();
        let unseen = derive_indicator(&[0.0; 4], &m, SuperRegion::Unseen, 3).unwrap();
        assert_eq!(seen, 0.2);
        assert_eq!(unseen, 0.2 + -0.6);
    }

    #[test]
    fn known_latents_dot_product() {
        let m = IndicatorModel::standard(Indicator::Gdp, 4, 0.5, 0.0);
        // 0.9*0.5 + 0.6*(-1) + (-0.3)*0.2 + 0.4*1 + 0.1 = 0.29
        let v = derive_indicator(&[0.5, -1.0, 0.2, 1.0], &m, SuperRegion::Seen, 0).unwrap();
        assert!((v - 0.29).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seeded() {
        let m = IndicatorModel::standard(Indicator::Carbon, 4, 0.4, 0.1);
        let a = derive_indicator(&[0.1; 4], &m, SuperRegion::Seen, 17).unwrap();
        let b = derive_indicator(&[0.1; 4], &m, SuperRegion::Seen, 17).unwrap();
        let c = derive_indicator(&[0.1; 4], &m, SuperRegion::Seen, 18).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_indicator_string() {
        assert!(matches!("gnp".parse::<Indicator>(), Err(UrpError::Domain(_))));
        assert_eq!(
            Indicator::parse_list("carbon, population").unwrap(),
            vec![Indicator::Carbon, Indicator::Population]
        );
    }
}
