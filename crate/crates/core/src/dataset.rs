//! Operator-dataset ingestion: per-cell activity series, load classes,
//! neighborhood aggregation, service mixes and per-service byte profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arrival::EventSchedule;
use crate::rng::Stream;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{count} record(s) with negative activity rejected")]
    NegativeActivity { count: usize },
    #[error("no cells selected")]
    EmptySelection,
    #[error("cell `{0}` not present in the series")]
    UnknownCell(String),
    #[error("series for `{0}` do not share interval and span")]
    MisalignedSeries(String),
    #[error("every service volume is zero")]
    AllZeroVolumes,
    #[error("service `{0}` has a negative or non-finite volume")]
    InvalidVolume(String),
    #[error("window of {window_s} s does not divide interval of {interval_s} s")]
    WindowDoesNotDivideInterval { window_s: u64, interval_s: u64 },
    #[error("profile schema: {0}")]
    SchemaError(String),
    #[error("profile bin {bin} has negative bytes")]
    NegativeBytes { bin: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellActivityRecord {
    pub cell_id: String,
    pub timestamp_s: i64,
    pub activity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLoadSeries {
    pub cell_ids: BTreeSet<String>,
    pub interval_s: u64,
    pub start_s: i64,
    pub values: Vec<f64>,
}

impl CellLoadSeries {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn span_s(&self) -> u64 {
        self.values.len() as u64 * self.interval_s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregation {
    pub series: BTreeMap<String, CellLoadSeries>,
    /// Records dropped for negative (or non-finite) activity.
    pub rejected: usize,
}

/// Bin records into continuous per-cell series of `interval_s` bins.
///
/// All cells share one span, from the earliest to the latest bin seen in the
/// input, so any subset can be summed element-wise. Duplicate (cell, bin)
/// records add up and missing bins are zero.
pub fn aggregate_cell_series<I>(records: I, interval_s: u64) -> Aggregation
where
    I: IntoIterator<Item = CellActivityRecord>,
{
    assert!(interval_s > 0, "interval must be positive");
    let step = interval_s as i64;
    let mut sums: BTreeMap<String, BTreeMap<i64, f64>> = BTreeMap::new();
    let mut rejected = 0;
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for r in records {
        if !(r.activity.is_finite() && r.activity >= 0.0) {
            rejected += 1;
            continue;
        }
        let bin = r.timestamp_s.div_euclid(step);
        lo = lo.min(bin);
        hi = hi.max(bin);
        *sums.entry(r.cell_id).or_default().entry(bin).or_insert(0.0) += r.activity;
    }
    if rejected > 0 {
        log::warn!("{}", DatasetError::NegativeActivity { count: rejected });
    }
    let series = sums
        .into_iter()
        .map(|(cell, bins)| {
            let mut values = vec![0.0; (hi - lo + 1) as usize];
            for (bin, v) in bins {
                values[(bin - lo) as usize] = v;
            }
            let s = CellLoadSeries {
                cell_ids: BTreeSet::from([cell.clone()]),
                interval_s,
                start_s: lo * step,
                values,
            };
            (cell, s)
        })
        .collect();
    Aggregation { series, rejected }
}

/// Read a `cell_id,timestamp_s,activity` CSV.
pub fn read_cell_records<R: Read>(reader: R) -> Result<Vec<CellActivityRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["cell_id", "timestamp_s", "activity"] {
        return Err(DatasetError::SchemaError(format!(
            "expected header cell_id,timestamp_s,activity, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(DatasetError::from)).collect()
}

pub fn load_cell_records(path: &Path) -> Result<Vec<CellActivityRecord>, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_cell_records(BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoadClass {
    High,
    Medium,
    Low,
}

impl fmt::Display for LoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoadClass::High => "High",
            LoadClass::Medium => "Medium",
            LoadClass::Low => "Low",
        })
    }
}

/// Rank by total volume (descending, ties by ascending id) and split 20/60/20
/// with `floor(0.2 N)` cells in each tail.
pub fn classify_totals(totals: &[(String, f64)]) -> BTreeMap<String, LoadClass> {
    let mut ranked: Vec<&(String, f64)> = totals.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let n = ranked.len();
    let tail = n / 5;
    ranked
        .into_iter()
        .enumerate()
        .map(|(i, (id, _))| {
            let class = if i < tail {
                LoadClass::High
            } else if i >= n - tail {
                LoadClass::Low
            } else {
                LoadClass::Medium
            };
            (id.clone(), class)
        })
        .collect()
}

pub fn classify_cells(series: &BTreeMap<String, CellLoadSeries>) -> BTreeMap<String, LoadClass> {
    let totals: Vec<(String, f64)> = series.iter().map(|(id, s)| (id.clone(), s.total())).collect();
    classify_totals(&totals)
}

/// Element-wise sum of the named cells' series.
pub fn aggregate_neighbors(
    series: &BTreeMap<String, CellLoadSeries>,
    cell_ids: &[String],
) -> Result<CellLoadSeries, DatasetError> {
    let (first, rest) = cell_ids.split_first().ok_or(DatasetError::EmptySelection)?;
    let base = series.get(first).ok_or_else(|| DatasetError::UnknownCell(first.clone()))?;
    let mut out = base.clone();
    for id in rest {
        let s = series.get(id).ok_or_else(|| DatasetError::UnknownCell(id.clone()))?;
        if s.interval_s != out.interval_s || s.start_s != out.start_s || s.values.len() != out.values.len() {
            return Err(DatasetError::MisalignedSeries(id.clone()));
        }
        for (acc, v) in out.values.iter_mut().zip(&s.values) {
            *acc += v;
        }
        out.cell_ids.extend(s.cell_ids.iter().cloned());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceMix {
    pub entries: BTreeMap<String, f64>,
}

impl ServiceMix {
    pub fn probability(&self, service: &str) -> f64 {
        self.entries.get(service).copied().unwrap_or(0.0)
    }

    /// Services with nonzero probability, in name order.
    pub fn services(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|(_, p)| **p > 0.0).map(|(s, _)| s.as_str())
    }

    /// Inverse-CDF pick over the services in name order for `u` in [0, 1).
    pub fn pick(&self, u: f64) -> &str {
        let mut acc = 0.0;
        let mut last = None;
        for (service, p) in &self.entries {
            if *p <= 0.0 {
                continue;
            }
            acc += p;
            last = Some(service.as_str());
            if u < acc {
                return service;
            }
        }
        // Rounding left the cumulative sum a hair under 1.
        last.expect("mix has a positive entry")
    }
}

/// Normalize raw per-service volumes into probabilities.
pub fn derive_service_mix(volumes: &BTreeMap<String, f64>) -> Result<ServiceMix, DatasetError> {
    if let Some((bad, _)) = volumes.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(DatasetError::InvalidVolume(bad.clone()));
    }
    let total: f64 = volumes.values().sum();
    if total <= 0.0 {
        return Err(DatasetError::AllZeroVolumes);
    }
    Ok(ServiceMix { entries: volumes.iter().map(|(s, v)| (s.clone(), v / total)).collect() })
}

/// Mix file: JSON object of service to probability or raw volume.
pub fn load_service_mix(path: &Path) -> Result<ServiceMix, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let volumes: BTreeMap<String, f64> = serde_json::from_str(&text)?;
    derive_service_mix(&volumes)
}

/// Split `total` over slots in proportion to `weights` (largest remainder;
/// equal remainders go to the lower index).
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Turn a load series into request arrivals: each bin's `round(value × scale)`
/// requests are apportioned over the bin's windows, then placed uniformly at
/// random inside their window. Offsets are relative to the series start.
pub fn series_to_schedule(
    series: &CellLoadSeries,
    window_s: u64,
    scale: f64,
    seed: u64,
) -> Result<EventSchedule, DatasetError> {
    if window_s == 0 || series.interval_s % window_s != 0 {
        return Err(DatasetError::WindowDoesNotDivideInterval { window_s, interval_s: series.interval_s });
    }
    let windows = (series.interval_s / window_s) as usize;
    let weights = vec![1.0; windows];
    let window_ms = window_s * 1000;
    let mut rng = Stream::new(seed);
    let mut times = Vec::new();
    for (bin, value) in series.values.iter().enumerate() {
        let total = (value * scale).round().max(0.0) as u64;
        if total == 0 {
            continue;
        }
        let bin_ms = bin as u64 * series.interval_s * 1000;
        let mut placed: Vec<u64> = Vec::with_capacity(total as usize);
        for (w, count) in largest_remainder(total, &weights).into_iter().enumerate() {
            let start = bin_ms + w as u64 * window_ms;
            placed.extend((0..count).map(|_| start + rng.below(window_ms)));
        }
        placed.sort_unstable();
        times.extend(placed);
    }
    Ok(EventSchedule::from_times(times))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceTraceProfile {
    pub service: String,
    pub bin_s: u64,
    pub uplink_bytes: Vec<u64>,
    pub downlink_bytes: Vec<u64>,
}

impl ServiceTraceProfile {
    pub fn bins(&self) -> usize {
        self.uplink_bytes.len()
    }

    pub fn total_uplink(&self) -> u64 {
        self.uplink_bytes.iter().sum()
    }

    pub fn total_downlink(&self) -> u64 {
        self.downlink_bytes.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# service={} bin_s={}", self.service, self.bin_s)?;
        writeln!(w, "bin_index,uplink_bytes,downlink_bytes")?;
        for (i, (u, d)) in self.uplink_bytes.iter().zip(&self.downlink_bytes).enumerate() {
            writeln!(w, "{i},{u},{d}")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ProfileRow {
    bin_index: usize,
    uplink_bytes: i64,
    downlink_bytes: i64,
}

fn parse_comment(line: &str) -> Result<(String, u64), DatasetError> {
    let schema = |m: &str| DatasetError::SchemaError(m.to_string());
    let body = line.trim().strip_prefix('#').ok_or_else(|| schema("missing `# service=<name> bin_s=<n>` line"))?;
    let mut service = None;
    let mut bin_s = None;
    for kv in body.split_whitespace() {
        match kv.split_once('=') {
            Some(("service", v)) if !v.is_empty() => service = Some(v.to_string()),
            Some(("bin_s", v)) => bin_s = Some(v.parse::<u64>().map_err(|_| schema("bin_s must be a positive integer"))?),
            _ => return Err(schema(&format!("unexpected token `{kv}` in profile comment"))),
        }
    }
    match (service, bin_s) {
        (Some(s), Some(b)) if b > 0 => Ok((s, b)),
        (Some(_), Some(_)) => Err(schema("bin_s must be a positive integer")),
        _ => Err(schema("comment must carry service and bin_s")),
    }
}

pub fn parse_trace_profile<R: Read>(reader: R) -> Result<ServiceTraceProfile, DatasetError> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first).map_err(|source| DatasetError::Io { path: "<profile>".into(), source })?;
    if first.trim().is_empty() {
        return Err(DatasetError::SchemaError("empty profile".into()));
    }
    let (service, bin_s) = parse_comment(&first)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(buf);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["bin_index", "uplink_bytes", "downlink_bytes"] {
        return Err(DatasetError::SchemaError("expected header bin_index,uplink_bytes,downlink_bytes".into()));
    }
    let mut profile = ServiceTraceProfile { service, bin_s, uplink_bytes: Vec::new(), downlink_bytes: Vec::new() };
    for (i, row) in rdr.deserialize::<ProfileRow>().enumerate() {
        let row = row.map_err(|e| DatasetError::SchemaError(e.to_string()))?;
        if row.bin_index != i {
            return Err(DatasetError::SchemaError(format!("bin_index {} out of sequence (expected {i})", row.bin_index)));
        }
        if row.uplink_bytes < 0 || row.downlink_bytes < 0 {
            return Err(DatasetError::NegativeBytes { bin: i });
        }
        profile.uplink_bytes.push(row.uplink_bytes as u64);
        profile.downlink_bytes.push(row.downlink_bytes as u64);
    }
    if profile.bins() == 0 {
        return Err(DatasetError::SchemaError("profile has no bins".into()));
    }
    Ok(profile)
}

pub fn load_trace_profile(path: &Path) -> Result<ServiceTraceProfile, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    parse_trace_profile(file)
}
