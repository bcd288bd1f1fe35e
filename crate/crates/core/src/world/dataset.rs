use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::seeding::stream;

use super::{round_tenth, seeded_shuffle, Indicator, Raster, Region, SuperRegion, World};

pub const SCHEMA: &str = "urp-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    TestSeen,
    TestUnseen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::TestSeen, Split::TestUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestSeen => "test_seen",
            Split::TestUnseen => "test_unseen",
        }
    }

    pub fn super_region(self) -> SuperRegion {
        match self {
            Split::TestUnseen => SuperRegion::Unseen,
            _ => SuperRegion::Seen,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = UrpError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| UrpError::Domain(format!("unknown split {s:?}")))
    }
}

/// One region paired with one indicator target.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSample {
    pub region: Arc<Region>,
    pub indicator: Indicator,
    /// On the grid `{0.0, 0.1, ..., 10.0}`.
    pub target: f64,
    pub split: Split,
}

impl IndicatorSample {
    /// Stable identifier `"<region_id>/<indicator>"`.
    pub fn sample_id(&self) -> String {
        format!("{}/{}", self.region.region_id, self.indicator)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<IndicatorSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &IndicatorSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn subset(&self, split: Split) -> Dataset {
        Dataset {
            samples: self.split(split).cloned().collect(),
        }
    }

    pub fn filter_indicators(&self, keep: &[Indicator]) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| keep.contains(&s.indicator))
                .cloned()
                .collect(),
        }
    }

    pub fn counts(&self) -> BTreeMap<(Indicator, Split), usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry((s.indicator, s.split)).or_insert(0) += 1;
        }
        out
    }

    pub fn find_region(&self, region_id: &str) -> Option<&Arc<Region>> {
        self.samples
            .iter()
            .find(|s| s.region.region_id == region_id)
            .map(|s| &s.region)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Partitions seen regions into train/val/test_seen and sends every unseen
/// region to test_unseen. The partition is at the region level.
pub fn split_dataset(world: &World) -> Result<Dataset> {
    let cfg = &world.config;
    cfg.validate()?;
    let mut seen: Vec<usize> = Vec::new();
    let mut unseen: Vec<usize> = Vec::new();
    for (i, r) in world.regions.iter().enumerate() {
        match r.super_region {
            SuperRegion::Seen => seen.push(i),
            SuperRegion::Unseen => unseen.push(i),
        }
    }
    let n = seen.len();
    let n_train = (cfg.split_fractions[0] * n as f64).round() as usize;
    let n_val = (cfg.split_fractions[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n || unseen.is_empty() {
        return Err(UrpError::Config(format!(
            "too few regions ({n} seen, {} unseen) for split fractions {:?}",
            unseen.len(),
            cfg.split_fractions
        )));
    }
    seeded_shuffle(&mut seen, world.seed, &[stream::SPLIT]);
    let mut assignment = vec![Split::TestUnseen; world.regions.len()];
    for (pos, &i) in seen.iter().enumerate() {
        assignment[i] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::TestSeen
        };
    }

    let mut samples = Vec::new();
    for split in Split::ALL {
        for (i, region) in world.regions.iter().enumerate() {
            if assignment[i] != split {
                continue;
            }
            for &ind in &cfg.indicators {
                samples.push(IndicatorSample {
                    region: Arc::clone(region),
                    indicator: ind,
                    target: world.targets[&ind][i],
                    split,
                });
            }
        }
    }
    Ok(Dataset { samples })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    schema: String,
    region_id: String,
    coord: [f64; 2],
    super_region: String,
    indicator: String,
    target: f64,
    raster: Vec<Vec<Vec<f64>>>,
    places: Vec<String>,
    address: String,
    split: String,
}

fn to_record(s: &IndicatorSample) -> SampleRecord {
    SampleRecord {
        schema: SCHEMA.to_string(),
        region_id: s.region.region_id.clone(),
        coord: s.region.coord,
        super_region: s.region.super_region.to_string(),
        indicator: s.indicator.to_string(),
        target: s.target,
        raster: s.region.raster.to_nested(),
        places: s.region.places.clone(),
        address: s.region.address.clone(),
        split: s.split.to_string(),
    }
}

/// Serializes one sample as a single JSON line (no trailing newline).
pub fn sample_to_json(s: &IndicatorSample) -> String {
    serde_json::to_string(&to_record(s)).expect("sample records always serialize")
}

pub fn emit_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| UrpError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &dataset.samples {
        writeln!(w, "{}", sample_to_json(s)).map_err(|e| UrpError::io(path, e))?;
    }
    w.flush().map_err(|e| UrpError::io(path, e))
}

fn parse_line(line: &str, lineno: usize) -> Result<SampleRecord> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| UrpError::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    match value.get("schema").and_then(|v| v.as_str()) {
        Some(SCHEMA) => {}
        Some(other) => {
            return Err(UrpError::Version {
                line: lineno,
                expected: SCHEMA.to_string(),
                found: other.to_string(),
            })
        }
        None => {
            return Err(UrpError::Parse {
                line: lineno,
                message: "missing string field \"schema\"".into(),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| UrpError::Parse {
        line: lineno,
        message: e.to_string(),
    })
}

fn to_sample(rec: SampleRecord, lineno: usize) -> Result<(Region, Indicator, f64, Split)> {
    let ctx = |e: UrpError| match e {
        UrpError::Domain(m) => UrpError::Domain(format!("line {lineno}: {m}")),
        other => other,
    };
    let indicator = Indicator::from_str(&rec.indicator).map_err(ctx)?;
    let super_region = SuperRegion::from_str(&rec.super_region).map_err(ctx)?;
    let split = Split::from_str(&rec.split).map_err(ctx)?;
    let raster = Raster::from_nested(&rec.raster).map_err(ctx)?;
    let fail = |m: String| Err(UrpError::Domain(format!("line {lineno}: {m}")));
    if split.super_region() != super_region {
        return fail(format!("split {split} is inconsistent with super region {super_region}"));
    }
    if !rec.coord.iter().all(|c| (0.0..=1.0).contains(c)) {
        return fail("coordinate outside the unit square".into());
    }
    if !(0.0..=10.0).contains(&rec.target) || round_tenth(rec.target) != rec.target {
        return fail(format!("target {} is not on the 0.0-10.0 grid", rec.target));
    }
    let region = Region {
        region_id: rec.region_id,
        coord: rec.coord,
        super_region,
        raster,
        places: rec.places,
        address: rec.address,
    };
    Ok((region, indicator, rec.target, split))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| UrpError::io(path, e))?;
    let mut regions: HashMap<String, Arc<Region>> = HashMap::new();
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| UrpError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (region, indicator, target, split) = to_sample(parse_line(&line, lineno)?, lineno)?;
        let region = match regions.get(&region.region_id) {
            Some(existing) if **existing == region => Arc::clone(existing),
            Some(_) => {
                return Err(UrpError::Data(format!(
                    "line {lineno}: region {} redefined with different content",
                    region.region_id
                )))
            }
            None => {
                let arc = Arc::new(region);
                regions.insert(arc.region_id.clone(), Arc::clone(&arc));
                arc
            }
        };
        samples.push(IndicatorSample {
            region,
            indicator,
            target,
            split,
        });
    }
    Ok(Dataset { samples })
}
