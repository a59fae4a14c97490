//! Seeded synthetic parking cities.
//!
//! Each node is a continuous-time process: a diurnal cycle with a second
//! harmonic, a weekend uplift, and Gaussian noise keyed by the absolute grid
//! step, so a node can be re-evaluated over any time range and yields the same
//! values wherever ranges overlap.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike, Utc, Weekday};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CityDataset, NodeSeries};
use crate::error::{bail, Result};
use crate::math;

/// City-level pattern parameters, all as fractions of capacity unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticProfile {
    pub city_name: String,
    /// First grid timestamp.
    pub start: DateTime<Utc>,
    /// Grid spacing in minutes.
    pub frequency: u32,
    /// Mean availability level.
    pub base: f64,
    pub diurnal_amplitude: f64,
    /// Extra availability on Saturdays and Sundays.
    pub weekly_modulation: f64,
    pub noise_sigma: f64,
    /// Nominal spaces per node.
    pub capacity: u32,
    /// 0 gives identical nodes; 1 spreads phases over the whole day and
    /// varies amplitude, harmonics and capacity widely.
    pub heterogeneity: f64,
    /// Prefix for generated node ids.
    pub node_prefix: String,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            city_name: String::from("synthetic-source"),
            start: DateTime::from_timestamp(1_619_827_200, 0).unwrap(), // 2021-05-01
            frequency: 15,
            base: 0.5,
            diurnal_amplitude: 0.3,
            weekly_modulation: 0.05,
            noise_sigma: 0.01,
            capacity: 500,
            heterogeneity: 0.5,
            node_prefix: String::from("S"),
        }
    }
}

/// Fully resolved parameters of one synthetic node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub base: f64,
    pub amplitude: f64,
    /// Hour of day with the highest availability.
    pub peak_hour: f64,
    pub harmonic: f64,
    pub harmonic_phase: f64,
    pub weekly_modulation: f64,
    pub noise_sigma: f64,
    pub capacity: u32,
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        if self.frequency == 0 || 1440 % self.frequency != 0 {
            bail!(Config, "frequency {} does not divide a day", self.frequency);
        }
        if self.capacity == 0 {
            bail!(Config, "capacity must be positive");
        }
        let reals = [self.base, self.diurnal_amplitude, self.weekly_modulation, self.noise_sigma];
        if reals.iter().any(|x| !x.is_finite()) || self.noise_sigma < 0.0 || self.diurnal_amplitude < 0.0 {
            bail!(Config, "profile parameters must be finite, amplitude and noise non-negative");
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            bail!(Config, "heterogeneity must lie in [0, 1]");
        }
        Ok(())
    }

    /// Per-node parameters, drawn from `seed` independently of node count.
    pub fn node_profile(&self, seed: u64, node: usize) -> NodeProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000);
        rng.set_stream(node as u64 + 1);
        let h = self.heterogeneity;
        let mut jitter = |span: f64| -> f64 { rng.random_range(-1.0..1.0) * span * h };
        let peak_hour = math::rem_euclid(2.0 + jitter(12.0), 24.0);
        let amplitude = self.diurnal_amplitude * (1.0 + jitter(0.5));
        let harmonic = math::abs(jitter(0.6));
        let harmonic_phase = math::rem_euclid(jitter(12.0), 24.0);
        let base = self.base + jitter(0.1);
        let weekly = self.weekly_modulation * (1.0 + jitter(1.0));
        let capacity = ((self.capacity as f64) * (1.0 + jitter(0.5))).max(10.0) as u32;
        NodeProfile {
            base,
            amplitude,
            peak_hour,
            harmonic,
            harmonic_phase,
            weekly_modulation: weekly,
            noise_sigma: self.noise_sigma,
            capacity,
        }
    }
}

fn hour_of_day(t: DateTime<Utc>) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

fn noise(seed: u64, node: usize, step: i64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64 + 1);
    rng.set_word_pos((step as u128) << 4);
    StandardNormal.sample(&mut rng)
}

impl NodeProfile {
    /// Unclamped availability in spaces at `t`.
    pub fn raw_value(&self, seed: u64, node: usize, t: DateTime<Utc>, frequency: u32) -> f64 {
        let hour = hour_of_day(t);
        let diurnal = math::cos(2.0 * PI * (hour - self.peak_hour) / 24.0)
            + self.harmonic * math::cos(4.0 * PI * (hour - self.harmonic_phase) / 24.0);
        let weekend = matches!(t.weekday(), Weekday::Sat | Weekday::Sun) as u8 as f64;
        let step = t.timestamp().div_euclid(frequency as i64 * 60);
        let eps = if self.noise_sigma > 0.0 {
            self.noise_sigma * noise(seed, node, step)
        } else {
            0.0
        };
        self.capacity as f64 * (self.base + self.amplitude * diurnal + self.weekly_modulation * weekend + eps)
    }
}

fn quantize(raw: f64, capacity: u32) -> u32 {
    math::round(raw.clamp(0.0, capacity as f64)) as u32
}

/// Unclamped values of one source node over `steps` grid points from `start`.
pub fn synthetic_raw_series(
    seed: u64,
    profile: &SyntheticProfile,
    node: usize,
    start: DateTime<Utc>,
    steps: usize,
) -> Vec<f64> {
    let np = profile.node_profile(seed, node);
    let step = chrono::TimeDelta::try_minutes(profile.frequency as i64).unwrap();
    (0..steps)
        .map(|i| np.raw_value(seed, node, start + step * i as i32, profile.frequency))
        .collect()
}

fn describe(city: &str, id: &str, np: &NodeProfile) -> String {
    let busiest = math::rem_euclid(np.peak_hour + 12.0, 24.0);
    format!(
        "{id}, {city}: synthetic carpark with {} spaces. Highest availability around {:02}:00, \
         busiest around {:02}:00. Weekend availability {} weekdays.",
        np.capacity,
        np.peak_hour as u32,
        busiest as u32,
        if np.weekly_modulation >= 0.0 { "above" } else { "below" }
    )
}

/// Generates a city of `nodes` nodes over `days` days. Deterministic in `seed`.
pub fn generate_synthetic_city(seed: u64, nodes: usize, days: u32, profile: &SyntheticProfile) -> Result<CityDataset> {
    profile.validate()?;
    if nodes == 0 || days == 0 {
        bail!(Config, "need at least one node and one day");
    }
    let steps = days as usize * (1440 / profile.frequency) as usize;
    let mut series = Vec::with_capacity(nodes);
    let mut node_context = BTreeMap::new();
    for n in 0..nodes {
        let np = profile.node_profile(seed, n);
        let id = format!("{}{:02}", profile.node_prefix, n);
        let values = synthetic_raw_series(seed, profile, n, profile.start, steps)
            .into_iter()
            .map(|raw| Some(quantize(raw, np.capacity)))
            .collect();
        node_context.insert(id.clone(), describe(&profile.city_name, &id, &np));
        series.push(NodeSeries {
            node_id: id,
            capacity: np.capacity,
            values,
        });
    }
    Ok(CityDataset {
        city_name: profile.city_name.clone(),
        frequency: profile.frequency,
        start: profile.start,
        nodes: series,
        node_context,
        provenance: Vec::new(),
    })
}

/// A target node that replays a source node's process under an affine map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedTarget {
    pub source_node: usize,
    pub scale: f64,
    /// Added after scaling, in spaces.
    pub offset: f64,
    pub capacity: u32,
    pub node_id: String,
    pub context: String,
}

/// Builds a target city whose nodes are affine copies of source nodes,
/// evaluated over the target's own time range:
/// `round(clamp(scale * source_raw(t) + offset, 0, capacity))`.
pub fn generate_derived_target(
    source_seed: u64,
    source_profile: &SyntheticProfile,
    targets: &[DerivedTarget],
    city_name: &str,
    start: DateTime<Utc>,
    days: u32,
) -> Result<CityDataset> {
    source_profile.validate()?;
    if targets.is_empty() || days == 0 {
        bail!(Config, "need at least one derived node and one day");
    }
    let steps = days as usize * (1440 / source_profile.frequency) as usize;
    let mut nodes = Vec::new();
    let mut node_context = BTreeMap::new();
    for t in targets {
        if t.capacity == 0 || !t.scale.is_finite() || !t.offset.is_finite() {
            bail!(Config, "derived node {} has invalid parameters", t.node_id);
        }
        let values = synthetic_raw_series(source_seed, source_profile, t.source_node, start, steps)
            .into_iter()
            .map(|raw| Some(quantize(t.scale * raw + t.offset, t.capacity)))
            .collect();
        node_context.insert(t.node_id.clone(), t.context.clone());
        nodes.push(NodeSeries {
            node_id: t.node_id.clone(),
            capacity: t.capacity,
            values,
        });
    }
    Ok(CityDataset {
        city_name: String::from(city_name),
        frequency: source_profile.frequency,
        start,
        nodes,
        node_context,
        provenance: Vec::new(),
    })
}
