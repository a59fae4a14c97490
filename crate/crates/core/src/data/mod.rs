//! Parking-availability datasets: grid alignment, chronological splits,
//! segment slicing, and the seeded synthetic city generator.

mod synthetic;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::nn::Tensor;

pub use synthetic::{
    generate_derived_target, generate_synthetic_city, synthetic_raw_series, DerivedTarget,
    NodeProfile, SyntheticProfile,
};

/// Default forward-fill limit, in grid steps.
pub const DEFAULT_MAX_GAP: usize = 4;
/// Default stride for slicing source segments (one hour at 15 minutes).
pub const DEFAULT_SEGMENT_STRIDE: usize = 4;

/// One observation as it arrives from a feed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParkingRecord {
    pub timestamp: DateTime<Utc>,
    pub node_id: String,
    pub available: u32,
    pub capacity: u32,
}

/// A node's availability on the dataset grid. `None` marks a gap that was
/// too long to forward-fill.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    pub node_id: String,
    pub capacity: u32,
    pub values: Vec<Option<u32>>,
}

impl NodeSeries {
    /// Maximal runs of observed values.
    pub fn usable_spans(&self) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, v) in self.values.iter().enumerate() {
            match (v, start) {
                (Some(_), None) => start = Some(i),
                (None, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..self.values.len());
        }
        spans
    }

    /// Values in `range` as reals, or `None` if any step is missing.
    pub fn window(&self, range: Range<usize>) -> Option<Vec<f64>> {
        self.values
            .get(range)?
            .iter()
            .map(|v| v.map(|x| x as f64))
            .collect()
    }
}

/// A city's aligned multi-node availability data plus node descriptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityDataset {
    pub city_name: String,
    /// Grid spacing in minutes.
    pub frequency: u32,
    /// Timestamp of grid index 0.
    pub start: DateTime<Utc>,
    pub nodes: Vec<NodeSeries>,
    pub node_context: BTreeMap<String, String>,
    /// Human-readable notes about repairs made while aligning.
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl CityDataset {
    /// Number of grid steps.
    pub fn len(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps_per_day(&self) -> usize {
        (1440 / self.frequency.max(1)) as usize
    }

    pub fn step(&self) -> TimeDelta {
        TimeDelta::try_minutes(self.frequency as i64).unwrap_or_default()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + self.step() * index as i32
    }

    pub fn node_index(&self, node_id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == node_id)
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.node_id.clone()).collect()
    }

    pub fn context(&self, node_id: &str) -> &str {
        self.node_context.get(node_id).map_or("", |s| s.as_str())
    }

    /// Sub-dataset covering grid indices `range`.
    pub fn slice(&self, range: Range<usize>) -> CityDataset {
        CityDataset {
            city_name: self.city_name.clone(),
            frequency: self.frequency,
            start: self.timestamp(range.start),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSeries {
                    node_id: n.node_id.clone(),
                    capacity: n.capacity,
                    values: n.values[range.clone()].to_vec(),
                })
                .collect(),
            node_context: self.node_context.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequency == 0 || 1440 % self.frequency != 0 {
            bail!(Data, "frequency {} minutes does not divide a day", self.frequency);
        }
        let len = self.len();
        for n in &self.nodes {
            if n.values.len() != len {
                bail!(Data, "node {} has {} steps, expected {}", n.node_id, n.values.len(), len);
            }
            if n.capacity == 0 {
                bail!(Data, "node {} has zero capacity", n.node_id);
            }
            if let Some(i) = n.values.iter().position(|v| v.is_some_and(|x| x > n.capacity)) {
                bail!(Validation, "node {} exceeds capacity at step {}", n.node_id, i);
            }
            if !self.node_context.contains_key(&n.node_id) {
                bail!(Data, "node {} has no context text", n.node_id);
            }
        }
        Ok(())
    }
}

/// Aligns raw records onto one shared grid.
///
/// Gaps of at most `max_gap` missing steps between two observations are
/// forward-filled with the last observed value and noted in `provenance`;
/// longer gaps stay missing, splitting the node into disjoint spans. Nodes
/// without a context entry get a generated one.
pub fn align_records(
    records: &[ParkingRecord],
    city_name: &str,
    frequency: u32,
    max_gap: usize,
    context: &BTreeMap<String, String>,
) -> Result<CityDataset> {
    if records.is_empty() {
        bail!(Data, "no records");
    }
    if frequency == 0 || 1440 % frequency != 0 {
        bail!(Config, "frequency {frequency} minutes does not divide a day");
    }
    let bad: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.available > r.capacity || r.capacity == 0)
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        bail!(Validation, "available exceeds capacity in records {:?}", bad);
    }
    let step_secs = frequency as i64 * 60;
    if let Some(r) = records.iter().find(|r| r.timestamp.timestamp() % step_secs != 0) {
        bail!(Data, "timestamp {} of node {} is off the {}-minute grid", r.timestamp, r.node_id, frequency);
    }
    let t0 = records.iter().map(|r| r.timestamp).min().unwrap();
    let t1 = records.iter().map(|r| r.timestamp).max().unwrap();
    let len = ((t1 - t0).num_seconds() / step_secs) as usize + 1;

    let mut by_node: BTreeMap<&str, Vec<&ParkingRecord>> = BTreeMap::new();
    for r in records {
        by_node.entry(r.node_id.as_str()).or_default().push(r);
    }
    let mut provenance = Vec::new();
    let mut nodes = Vec::new();
    let mut node_context = BTreeMap::new();
    for (id, mut recs) in by_node {
        recs.sort_by_key(|r| r.timestamp);
        if let Some(w) = recs.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
            bail!(Data, "node {} has duplicate timestamp {}", id, w[0].timestamp);
        }
        let mut values = vec![None; len];
        let mut capacity = 0;
        for r in &recs {
            let idx = ((r.timestamp - t0).num_seconds() / step_secs) as usize;
            values[idx] = Some(r.available);
            capacity = capacity.max(r.capacity);
        }
        let filled = forward_fill(&mut values, max_gap);
        for gap in filled {
            provenance.push(format!(
                "{id}: forward-filled {} step(s) from index {}",
                gap.len(),
                gap.start
            ));
        }
        let text = context
            .get(id)
            .cloned()
            .unwrap_or_else(|| format!("Carpark {id} with {capacity} spaces."));
        node_context.insert(String::from(id), text);
        nodes.push(NodeSeries {
            node_id: String::from(id),
            capacity,
            values,
        });
    }
    let ds = CityDataset {
        city_name: String::from(city_name),
        frequency,
        start: t0,
        nodes,
        node_context,
        provenance,
    };
    ds.validate()?;
    Ok(ds)
}

/// Fills interior gaps of length `<= max_gap`; returns the filled ranges.
fn forward_fill(values: &mut [Option<u32>], max_gap: usize) -> Vec<Range<usize>> {
    let mut filled = Vec::new();
    let mut last: Option<(usize, u32)> = None;
    for i in 0..values.len() {
        if let Some(v) = values[i] {
            if let Some((j, lv)) = last {
                let gap = i - j - 1;
                if gap > 0 && gap <= max_gap {
                    for slot in &mut values[j + 1..i] {
                        *slot = Some(lv);
                    }
                    filled.push(j + 1..i);
                }
            }
            last = Some((i, v));
        }
    }
    filled
}

/// Train/validation/test fractions plus the target-city training restriction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub target_train_days: u32,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            target_train_days: 3,
        }
    }
}

/// Grid index ranges of one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    /// First grid index the model may observe: data before the (possibly
    /// restricted) training span is treated as nonexistent.
    pub fn observed_start(&self) -> usize {
        self.train.start
    }
}

#[derive(Clone, Debug)]
pub struct SplitDatasets {
    pub ranges: SplitRanges,
    pub train: CityDataset,
    pub val: CityDataset,
    pub test: CityDataset,
}

/// Smallest dataset the splitter accepts, in grid steps.
pub const MIN_SPLIT_STEPS: usize = 10;

/// Chronological split with boundaries at `floor(train·T)` and
/// `floor((train+val)·T)`. For a target city the training span is cut to its
/// final `target_train_days` days.
pub fn chronological_split(ds: &CityDataset, spec: &SplitSpec, is_target: bool) -> Result<SplitDatasets> {
    let ranges = split_ranges(ds.len(), ds.frequency, spec, is_target)?;
    Ok(SplitDatasets {
        train: ds.slice(ranges.train.clone()),
        val: ds.slice(ranges.val.clone()),
        test: ds.slice(ranges.test.clone()),
        ranges,
    })
}

pub fn split_ranges(total: usize, frequency: u32, spec: &SplitSpec, is_target: bool) -> Result<SplitRanges> {
    let fr = [spec.train_fraction, spec.val_fraction, spec.test_fraction];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        bail!(Config, "split fractions {:?} must be in [0,1] and sum to 1", fr);
    }
    if total < MIN_SPLIT_STEPS {
        bail!(Data, "dataset has {total} steps, need at least {MIN_SPLIT_STEPS} to split");
    }
    // The epsilon absorbs representation error such as 0.7 + 0.1 = 0.7999...
    let b1 = crate::math::floor(spec.train_fraction * total as f64 + 1e-9) as usize;
    let b2 = crate::math::floor((spec.train_fraction + spec.val_fraction) * total as f64 + 1e-9) as usize;
    let mut train = 0..b1.min(total);
    if is_target {
        if frequency == 0 || 1440 % frequency != 0 {
            bail!(Config, "frequency {frequency} minutes does not divide a day");
        }
        let keep = spec.target_train_days as usize * (1440 / frequency) as usize;
        if keep > train.len() {
            bail!(
                Data,
                "target training split has {} steps but {} days need {} steps",
                train.len(),
                spec.target_train_days,
                keep
            );
        }
        train = train.end - keep..train.end;
    }
    Ok(SplitRanges {
        train,
        val: b1.min(total)..b2.min(total),
        test: b2.min(total)..total,
    })
}

/// A fixed-length window cut from one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub node_index: usize,
    pub node_id: String,
    /// Grid index of the first step.
    pub start_index: usize,
    pub start: DateTime<Utc>,
    pub values: Vec<f64>,
}

/// Lazily enumerates sliding windows, node by node. Windows touching a
/// missing step are skipped, so for gap-free data each node yields
/// `floor((T - len) / stride) + 1` segments.
pub struct SegmentIter<'a> {
    ds: &'a CityDataset,
    len: usize,
    stride: usize,
    node: usize,
    pos: usize,
}

impl Iterator for SegmentIter<'_> {
    type Item = Segment;

    fn next(&mut self) -> Option<Segment> {
        let total = self.ds.len();
        while self.node < self.ds.nodes.len() {
            if self.len == 0 || self.len > total || self.pos + self.len > total {
                self.node += 1;
                self.pos = 0;
                continue;
            }
            let start = self.pos;
            self.pos += self.stride;
            let n = &self.ds.nodes[self.node];
            if let Some(values) = n.window(start..start + self.len) {
                return Some(Segment {
                    node_index: self.node,
                    node_id: n.node_id.clone(),
                    start_index: start,
                    start: self.ds.timestamp(start),
                    values,
                });
            }
        }
        None
    }
}

pub fn slice_segments(ds: &CityDataset, segment_len: usize, stride: usize) -> SegmentIter<'_> {
    if segment_len > ds.len() {
        log::warn!(
            "segment length {} exceeds series length {}; no segments",
            segment_len,
            ds.len()
        );
    }
    SegmentIter {
        ds,
        len: segment_len,
        stride: stride.max(1),
        node: 0,
        pos: 0,
    }
}

/// Closed-form per-node segment count for gap-free data.
pub fn segment_count(total: usize, len: usize, stride: usize) -> usize {
    if len == 0 || len > total || stride == 0 {
        0
    } else {
        (total - len) / stride + 1
    }
}

/// Dense `B x N x L` numeric batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesBatch {
    pub values: Tensor,
    pub start_timestamps: Vec<DateTime<Utc>>,
    pub node_ids: Vec<String>,
}

impl TimeSeriesBatch {
    pub fn new(values: Tensor, start_timestamps: Vec<DateTime<Utc>>, node_ids: Vec<String>) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 {
            bail!(Shape, "batch must be B x N x L, got {:?}", s);
        }
        if start_timestamps.len() != s[0] || node_ids.len() != s[1] {
            bail!(
                Shape,
                "batch {:?} has {} timestamps and {} node ids",
                s,
                start_timestamps.len(),
                node_ids.len()
            );
        }
        values.check_finite("batch values")?;
        Ok(Self {
            values,
            start_timestamps,
            node_ids,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2])
    }

    /// The `L` values of sample `b`, node `n`.
    pub fn series(&self, b: usize, n: usize) -> &[f64] {
        let (_, nn, l) = self.dims();
        &self.values.data()[(b * nn + n) * l..(b * nn + n + 1) * l]
    }

    /// Builds a single-sample batch from a dataset window; fails on gaps.
    pub fn from_window(ds: &CityDataset, range: Range<usize>) -> Result<Self> {
        let mut data = Vec::with_capacity(ds.nodes.len() * range.len());
        for n in &ds.nodes {
            let w = n
                .window(range.clone())
                .ok_or_else(|| Error::Data(format!("node {} has gaps in {:?}", n.node_id, range)))?;
            data.extend(w);
        }
        Self::new(
            Tensor::from_vec(&[1, ds.nodes.len(), range.len()], data)?,
            vec![ds.timestamp(range.start)],
            ds.node_ids(),
        )
    }
}
