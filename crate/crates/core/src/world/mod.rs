//! Synthetic urban world: a seeded latent field, regions with rasters, places and
//! addresses, indicator targets on a 0-10 grid, and a seen/unseen split.

mod dataset;
mod field;
mod indicator;
mod raster;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::seeding::{derive_seed, rng_for, stream};

pub use dataset::{emit_dataset, load_dataset, split_dataset, Dataset, IndicatorSample, Split, SCHEMA};
pub use field::{Harmonic, LatentField};
pub use indicator::{
    average_ranks, derive_indicator, rank_scale, round_tenth, Indicator, IndicatorModel,
};
pub use raster::{render_raster, Raster};

/// Fixed place vocabulary. Place types load on the latent factors, so the
/// places near a region are weak evidence about its indicators.
pub const PLACE_NAMES: [&str; 32] = [
    "school", "factory", "park", "mall", "hospital", "port", "farm", "office", "station",
    "market", "temple", "stadium", "warehouse", "bank", "hotel", "museum", "library", "airport",
    "harbor", "plant", "mine", "orchard", "clinic", "campus", "plaza", "depot", "tower", "garden",
    "quarry", "refinery", "village", "suburb",
];

/// Number of address districts per axis.
const DISTRICTS: usize = 5;
const PLACE_LOADING_SEED: u64 = 0x5eed_91ac_e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuperRegion {
    Seen,
    Unseen,
}

impl SuperRegion {
    pub fn as_str(self) -> &'static str {
        match self {
            SuperRegion::Seen => "seen",
            SuperRegion::Unseen => "unseen",
        }
    }
}

impl fmt::Display for SuperRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuperRegion {
    type Err = UrpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(SuperRegion::Seen),
            "unseen" => Ok(SuperRegion::Unseen),
            _ => Err(UrpError::Domain(format!("unknown super region {s:?}"))),
        }
    }
}

/// Structural and statistical parameters of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_factors: usize,
    pub n_harmonics: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub max_places: usize,
    /// `x >= split_boundary` is the unseen band.
    pub split_boundary: f64,
    pub noise_sigma: f64,
    pub texture_amplitude: f64,
    pub channel_bias: f64,
    pub raster_gain: f64,
    pub pattern_amplitude: f64,
    /// Indicators emitted into the dataset.
    pub indicators: Vec<Indicator>,
    pub shifts: BTreeMap<Indicator, f64>,
    /// Train / val / test_seen fractions over seen regions.
    pub split_fractions: [f64; 3],
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_factors: 4,
            n_harmonics: 6,
            channels: 3,
            height: 16,
            width: 16,
            max_places: 4,
            split_boundary: 0.7,
            noise_sigma: 0.1,
            texture_amplitude: 0.1,
            channel_bias: 0.5,
            raster_gain: 0.3,
            pattern_amplitude: 0.1,
            indicators: Indicator::ALL.to_vec(),
            shifts: Indicator::ALL.iter().map(|&i| (i, i.default_shift())).collect(),
            split_fractions: [0.59, 0.175, 0.235],
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UrpError::Config(m.to_string()));
        if self.n_factors == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("world dimensions must be positive");
        }
        if !(self.split_boundary > 0.0 && self.split_boundary < 1.0) {
            return bad("split boundary must lie strictly inside (0, 1)");
        }
        if self.max_places == 0 || self.max_places > PLACE_NAMES.len() {
            return bad("max_places must be in 1..=32");
        }
        if self.noise_sigma < 0.0 || self.texture_amplitude < 0.0 {
            return bad("noise and texture amplitudes must be non-negative");
        }
        if self.indicators.is_empty() {
            return bad("indicator subset must be non-empty");
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad("split fractions must be positive and sum to 1");
        }
        Ok(())
    }

    pub fn shift(&self, indicator: Indicator) -> f64 {
        self.shifts.get(&indicator).copied().unwrap_or(0.0)
    }

    pub fn indicator_model(&self, indicator: Indicator) -> IndicatorModel {
        IndicatorModel::standard(indicator, self.n_factors, self.shift(indicator), self.noise_sigma)
    }

    pub fn super_region_of(&self, coord: [f64; 2]) -> SuperRegion {
        if coord[0] >= self.split_boundary {
            SuperRegion::Unseen
        } else {
            SuperRegion::Seen
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: String,
    pub coord: [f64; 2],
    pub super_region: SuperRegion,
    pub raster: Raster,
    pub places: Vec<String>,
    pub address: String,
}

/// A generated world: regions plus the field and every indicator's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub config: WorldConfig,
    pub field: LatentField,
    pub regions: Vec<Arc<Region>>,
    pub latents: Vec<Vec<f64>>,
    pub raw_scores: BTreeMap<Indicator, Vec<f64>>,
    /// Rank-scaled targets over all regions (seen and unseen together).
    pub targets: BTreeMap<Indicator, Vec<f64>>,
}

fn place_loadings(n_factors: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(PLACE_LOADING_SEED, &[n_factors as u64]);
    (0..PLACE_NAMES.len())
        .map(|_| {
            (0..n_factors)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect()
}

fn draw_places(latents: &[f64], loadings: &[Vec<f64>], max_places: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed, &[stream::PLACES]);
    let count = rng.random_range(1..=max_places);
    let mut weights: Vec<f64> = loadings
        .iter()
        .map(|l| (1.5 * l.iter().zip(latents).map(|(a, b)| a * b).sum::<f64>()).exp())
        .collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = weights.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(PLACE_NAMES[pick].to_string());
        weights[pick] = 0.0;
    }
    out
}

fn district(coord: [f64; 2]) -> (usize, usize) {
    let cell = |v: f64| ((v * DISTRICTS as f64) as usize).min(DISTRICTS - 1);
    (cell(coord[0]), cell(coord[1]))
}

/// Street names are fixed per district, so they identify a location without
/// saying anything about it.
fn make_address(world_seed: u64, coord: [f64; 2], seed: u64) -> String {
    let (dx, dy) = district(coord);
    let street = derive_seed(world_seed, &[dx as u64, dy as u64]) as usize % PLACE_NAMES.len();
    let number = rng_for(seed, &[stream::PLACES, 1]).random_range(1..1000);
    format!("{number} {} Road, District {dx}{dy}", PLACE_NAMES[street])
}

/// Extracts the street place name from an address built by this module.
pub fn address_street(address: &str) -> Option<&str> {
    let mut words = address.split_whitespace();
    words.next()?;
    let street = words.next()?;
    PLACE_NAMES.contains(&street).then_some(street)
}

impl World {
    pub fn build(seed: u64, n_regions: usize, config: &WorldConfig) -> Result<World> {
        config.validate()?;
        if n_regions < 10 {
            return Err(UrpError::Config(format!(
                "a world needs at least 10 regions, got {n_regions}"
            )));
        }
        let field = LatentField::generate(seed, config.n_factors, config.n_harmonics);
        let loadings = place_loadings(config.n_factors);
        let mut coord_rng = rng_for(seed, &[stream::COORDS]);
        let width = n_regions.to_string().len().max(4);

        let mut regions = Vec::with_capacity(n_regions);
        let mut latents = Vec::with_capacity(n_regions);
        for idx in 0..n_regions {
            let coord = [coord_rng.random::<f64>(), coord_rng.random::<f64>()];
            let lat = field.sample(coord)?;
            let region_seed = derive_seed(seed, &[idx as u64]);
            let raster = render_raster(&lat, config, region_seed)?;
            regions.push(Arc::new(Region {
                region_id: format!("r{idx:0width$}"),
                coord,
                super_region: config.super_region_of(coord),
                raster,
                places: draw_places(&lat, &loadings, config.max_places, region_seed),
                address: make_address(seed, coord, region_seed),
            }));
            latents.push(lat);
        }

        let mut raw_scores = BTreeMap::new();
        let mut targets = BTreeMap::new();
        for ind in Indicator::ALL {
            let model = config.indicator_model(ind);
            let scores = regions
                .iter()
                .zip(&latents)
                .enumerate()
                .map(|(idx, (r, l))| {
                    let noise_seed = derive_seed(seed, &[stream::NOISE, idx as u64, ind.index() as u64]);
                    derive_indicator(l, &model, r.super_region, noise_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            targets.insert(ind, rank_scale(&scores)?);
            raw_scores.insert(ind, scores);
        }

        Ok(World {
            seed,
            config: config.clone(),
            field,
            regions,
            latents,
            raw_scores,
            targets,
        })
    }

    pub fn unseen_fraction(&self) -> f64 {
        let unseen = self
            .regions
            .iter()
            .filter(|r| r.super_region == SuperRegion::Unseen)
            .count();
        unseen as f64 / self.regions.len() as f64
    }
}

/// Shuffles a slice with a seeded generator (used by the split).
pub(crate) fn seeded_shuffle<T>(items: &mut [T], seed: u64, path: &[u64]) {
    items.shuffle(&mut rng_for(seed, path));
}
