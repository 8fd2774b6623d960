//! Per-VNF resource sampling, rate conversion, event alignment and export.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::cpli::{EventMark, MarkKind};
use crate::emulator::{EmulatorHandle, ResourceSnapshot, VnfKind};
use crate::scenario::MIN_TELEMETRY_INTERVAL_MS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("backend unavailable for {vnf}: {reason}")]
    BackendUnavailable { vnf: VnfKind, reason: String },
    #[error("counter of {vnf} went backwards")]
    NonMonotoneCounter { vnf: VnfKind },
    #[error("snapshots of {vnf} share a timestamp")]
    ZeroInterval { vnf: VnfKind },
    #[error("sampling interval {0} ms is below the {MIN_TELEMETRY_INTERVAL_MS} ms minimum")]
    IntervalTooShort(u64),
    #[error("event at {t_ms} ms lies outside the experiment span")]
    ClockSkew { t_ms: i64 },
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t_ms: u64,
    pub vnf: VnfKind,
    pub cpu_millicores: f64,
    pub mem_bytes: u64,
    pub rx_bytes_delta: u64,
    pub tx_bytes_delta: u64,
    pub active_contexts: u64,
}

/// Source of per-VNF counters.
pub trait TelemetryBackend: Send {
    fn snapshot(&mut self, vnf: VnfKind) -> Result<ResourceSnapshot, TelemetryError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    EmulatorCounters,
    HostProcessStats,
}

/// Reads the emulator's modeled counters.
pub struct EmulatorCounters(pub EmulatorHandle);

impl TelemetryBackend for EmulatorCounters {
    fn snapshot(&mut self, vnf: VnfKind) -> Result<ResourceSnapshot, TelemetryError> {
        Ok(self.0.snapshot(vnf))
    }
}

/// Reads OS per-process counters from `/proc` for externally running
/// functions. Network bytes are those of the process's network namespace.
pub struct HostProcessStats {
    pids: BTreeMap<VnfKind, u32>,
    clock: Arc<dyn Clock>,
    ticks_per_s: u64,
    page_bytes: u64,
}

impl HostProcessStats {
    pub fn new(pids: BTreeMap<VnfKind, u32>, clock: Arc<dyn Clock>) -> Self {
        // SAFETY: sysconf only reads process-wide configuration.
        let (ticks, page) = unsafe { (libc::sysconf(libc::_SC_CLK_TCK), libc::sysconf(libc::_SC_PAGESIZE)) };
        HostProcessStats {
            pids,
            clock,
            ticks_per_s: if ticks > 0 { ticks as u64 } else { 100 },
            page_bytes: if page > 0 { page as u64 } else { 4096 },
        }
    }

    fn read(&self, vnf: VnfKind, pid: u32) -> Result<ResourceSnapshot, String> {
        let proc = PathBuf::from(format!("/proc/{pid}"));
        let stat = fs::read_to_string(proc.join("stat")).map_err(|e| e.to_string())?;
        // Fields after the parenthesized command name; utime and stime are
        // the 14th and 15th fields overall.
        let rest = stat.rsplit_once(')').ok_or("malformed stat")?.1;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        let ticks = |i: usize| fields.get(i).and_then(|s| s.parse::<u64>().ok()).ok_or("malformed stat");
        let cpu_ticks = ticks(11)? + ticks(12)?;
        let statm = fs::read_to_string(proc.join("statm")).map_err(|e| e.to_string())?;
        let rss_pages: u64 = statm.split_whitespace().nth(1).and_then(|s| s.parse().ok()).ok_or("malformed statm")?;
        let (rx_bytes, tx_bytes) = fs::read_to_string(proc.join("net/dev")).map(|t| parse_net_dev(&t)).unwrap_or((0, 0));
        Ok(ResourceSnapshot {
            vnf,
            cpu_time_ns: cpu_ticks * 1_000_000_000 / self.ticks_per_s,
            mem_bytes: rss_pages * self.page_bytes,
            rx_bytes,
            tx_bytes,
            active_contexts: 0,
            taken_at_ms: self.clock.now_ms(),
        })
    }
}

fn parse_net_dev(text: &str) -> (u64, u64) {
    text.lines()
        .skip(2)
        .filter_map(|line| {
            let (_, counters) = line.split_once(':')?;
            let v: Vec<u64> = counters.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            Some((*v.first()?, *v.get(8)?))
        })
        .fold((0, 0), |(r, t), (a, b)| (r + a, t + b))
}

impl TelemetryBackend for HostProcessStats {
    fn snapshot(&mut self, vnf: VnfKind) -> Result<ResourceSnapshot, TelemetryError> {
        let pid = *self.pids.get(&vnf).ok_or_else(|| TelemetryError::BackendUnavailable {
            vnf,
            reason: "no pid in topology".into(),
        })?;
        self.read(vnf, pid).map_err(|reason| TelemetryError::BackendUnavailable { vnf, reason })
    }
}

/// Millicores between two snapshots: 1000 ≡ one fully busy core.
pub fn compute_millicores(prev: &ResourceSnapshot, curr: &ResourceSnapshot) -> Result<f64, TelemetryError> {
    if curr.cpu_time_ns < prev.cpu_time_ns {
        return Err(TelemetryError::NonMonotoneCounter { vnf: curr.vnf });
    }
    if curr.taken_at_ms <= prev.taken_at_ms {
        return Err(TelemetryError::ZeroInterval { vnf: curr.vnf });
    }
    let d_ns = (curr.cpu_time_ns - prev.cpu_time_ns) as f64;
    let d_ms = (curr.taken_at_ms - prev.taken_at_ms) as f64;
    Ok(d_ns / (1000.0 * d_ms))
}

/// Samples every listed function at a fixed cadence.
pub struct Collector {
    backend: Box<dyn TelemetryBackend>,
    vnfs: Vec<VnfKind>,
    interval_ms: u64,
    prev: BTreeMap<VnfKind, ResourceSnapshot>,
    samples: Vec<TelemetrySample>,
    next_due_ms: u64,
}

impl Collector {
    pub fn new(mut backend: Box<dyn TelemetryBackend>, vnfs: &[VnfKind], interval_ms: u64) -> Result<Self, TelemetryError> {
        if interval_ms < MIN_TELEMETRY_INTERVAL_MS {
            return Err(TelemetryError::IntervalTooShort(interval_ms));
        }
        for vnf in vnfs {
            backend.snapshot(*vnf)?;
        }
        Ok(Collector { backend, vnfs: vnfs.to_vec(), interval_ms, prev: BTreeMap::new(), samples: Vec::new(), next_due_ms: 0 })
    }

    pub fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    pub fn next_due_ms(&self) -> u64 {
        self.next_due_ms
    }

    /// One sample per function, stamped `t_ms`. The first round reports zero
    /// rates.
    pub fn sample(&mut self, t_ms: u64) -> Result<(), TelemetryError> {
        for &vnf in &self.vnfs {
            let snap = self.backend.snapshot(vnf)?;
            let (cpu_millicores, rx, tx) = match self.prev.get(&vnf) {
                None => (0.0, 0, 0),
                Some(prev) => {
                    if snap.rx_bytes < prev.rx_bytes || snap.tx_bytes < prev.tx_bytes {
                        return Err(TelemetryError::NonMonotoneCounter { vnf });
                    }
                    (compute_millicores(prev, &snap)?, snap.rx_bytes - prev.rx_bytes, snap.tx_bytes - prev.tx_bytes)
                }
            };
            self.samples.push(TelemetrySample {
                t_ms,
                vnf,
                cpu_millicores,
                mem_bytes: snap.mem_bytes,
                rx_bytes_delta: rx,
                tx_bytes_delta: tx,
                active_contexts: snap.active_contexts,
            });
            self.prev.insert(vnf, snap);
        }
        self.next_due_ms = t_ms + self.interval_ms;
        Ok(())
    }

    pub fn samples(&self) -> &[TelemetrySample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<TelemetrySample> {
        self.samples
    }
}

/// A running collector. Under a virtual clock the owner drives sampling with
/// [`CollectorHandle::tick`]; under the wall clock a sampler thread does.
pub enum CollectorHandle {
    Driven(Collector),
    Threaded {
        stop: Arc<AtomicBool>,
        thread: JoinHandle<(Vec<TelemetrySample>, Option<TelemetryError>)>,
    },
}

pub fn start_collector(
    backend: Box<dyn TelemetryBackend>,
    vnfs: &[VnfKind],
    interval_ms: u64,
    clock: Arc<dyn Clock>,
) -> Result<CollectorHandle, TelemetryError> {
    let mut collector = Collector::new(backend, vnfs, interval_ms)?;
    if clock.is_virtual() {
        return Ok(CollectorHandle::Driven(collector));
    }
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("telemetry".into())
        .spawn(move || {
            let mut k = 0u64;
            loop {
                clock.sleep_until(k * interval_ms);
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                if let Err(e) = collector.sample(clock.now_ms()) {
                    return (collector.into_samples(), Some(e));
                }
                k += 1;
            }
            (collector.into_samples(), None)
        })
        .map_err(|e| TelemetryError::Io { path: "<sampler thread>".into(), source: e })?;
    Ok(CollectorHandle::Threaded { stop, thread })
}

impl CollectorHandle {
    /// Take every sample due at or before `now_ms` (driven mode only).
    pub fn tick(&mut self, now_ms: u64) -> Result<(), TelemetryError> {
        if let CollectorHandle::Driven(c) = self {
            while c.next_due_ms() <= now_ms {
                let due = c.next_due_ms();
                c.sample(due)?;
            }
        }
        Ok(())
    }

    pub fn next_due_ms(&self) -> Option<u64> {
        match self {
            CollectorHandle::Driven(c) => Some(c.next_due_ms()),
            CollectorHandle::Threaded { .. } => None,
        }
    }

    /// Stop sampling; returns what was collected and the error that ended
    /// sampling early, if any.
    pub fn stop(self) -> (Vec<TelemetrySample>, Option<TelemetryError>) {
        match self {
            CollectorHandle::Driven(c) => (c.into_samples(), None),
            CollectorHandle::Threaded { stop, thread } => {
                stop.store(true, Ordering::SeqCst);
                thread.join().unwrap_or_else(|_| (Vec::new(), None))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Warmup,
    Inject,
    Drain,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Inject => "inject",
            Phase::Drain => "drain",
        })
    }
}

/// Phase boundaries in experiment milliseconds: warmup `[0, inject_start)`,
/// inject `[inject_start, drain_start)`, drain `[drain_start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phases {
    pub inject_start_ms: u64,
    pub drain_start_ms: u64,
    pub end_ms: u64,
}

impl Phases {
    pub fn from_seconds(warmup_s: u64, duration_s: u64, drain_s: u64) -> Self {
        let inject_start_ms = warmup_s * 1000;
        let drain_start_ms = inject_start_ms + duration_s * 1000;
        Phases { inject_start_ms, drain_start_ms, end_ms: drain_start_ms + drain_s * 1000 }
    }

    pub fn phase_of(&self, t_ms: i64) -> Option<Phase> {
        if t_ms < 0 || t_ms as u64 > self.end_ms {
            return None;
        }
        let t = t_ms as u64;
        Some(if t < self.inject_start_ms {
            Phase::Warmup
        } else if t < self.drain_start_ms || self.drain_start_ms == self.end_ms {
            Phase::Inject
        } else {
            Phase::Drain
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub scenario_name: String,
    /// SHA-256 of the scenario's canonical JSON.
    pub scenario_hash: String,
    pub seed: u64,
    pub interval_ms: u64,
    pub phases: Phases,
    /// Summary grouping label (service or procedure) and load level.
    pub group: Option<String>,
    pub level: Option<u64>,
    /// `Completed` or `Aborted: <reason>`.
    pub exit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub meta: DatasetMeta,
    pub samples: Vec<(TelemetrySample, Phase)>,
    pub events: Vec<(EventMark, Phase)>,
}

impl AlignedDataset {
    pub fn samples_of(&self, vnf: VnfKind) -> impl Iterator<Item = &(TelemetrySample, Phase)> {
        self.samples.iter().filter(move |(s, _)| s.vnf == vnf)
    }
}

/// Tag samples and events with their phase; fails on anything outside the
/// span.
pub fn align(
    mut samples: Vec<TelemetrySample>,
    mut events: Vec<EventMark>,
    meta: DatasetMeta,
) -> Result<AlignedDataset, TelemetryError> {
    let phases = meta.phases;
    samples.sort_by_key(|s| (s.t_ms, s.vnf));
    events.sort_by_key(|e| e.t_ms);
    let samples = samples
        .into_iter()
        .map(|s| match phases.phase_of(s.t_ms as i64) {
            Some(p) => Ok((s, p)),
            None => Err(TelemetryError::ClockSkew { t_ms: s.t_ms as i64 }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let events = events
        .into_iter()
        .map(|e| match phases.phase_of(e.t_ms) {
            Some(p) => Ok((e, p)),
            None => Err(TelemetryError::ClockSkew { t_ms: e.t_ms }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AlignedDataset { meta, samples, events })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub meta: DatasetMeta,
    pub files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    t_ms: i64,
    kind: MarkKind,
    procedure: String,
    request_id: String,
    status: String,
    phase: Phase,
}

pub const TELEMETRY_CSV: &str = "telemetry.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Write `telemetry.csv`, `events.csv` and `manifest.json` into `dir`.
pub fn export_csv(dataset: &AlignedDataset, dir: &Path) -> Result<Manifest, TelemetryError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tpath = dir.join(TELEMETRY_CSV);
    let mut w = csv::Writer::from_path(&tpath)?;
    for (s, _) in &dataset.samples {
        w.serialize(s)?;
    }
    w.flush().map_err(io_err(&tpath))?;

    let epath = dir.join(EVENTS_CSV);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&epath)?;
    w.write_record(["t_ms", "kind", "procedure", "request_id", "status", "phase"])?;
    for (e, phase) in &dataset.events {
        w.serialize(EventRow {
            t_ms: e.t_ms,
            kind: e.kind,
            procedure: e.procedure.clone(),
            request_id: e.request_id.clone(),
            status: e.status.clone(),
            phase: *phase,
        })?;
    }
    w.flush().map_err(io_err(&epath))?;

    let manifest = Manifest {
        meta: dataset.meta.clone(),
        files: vec![TELEMETRY_CSV.into(), EVENTS_CSV.into(), MANIFEST_JSON.into()],
    };
    let mpath = dir.join(MANIFEST_JSON);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&mpath, text).map_err(io_err(&mpath))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, TelemetryError> {
    let path = dir.join(MANIFEST_JSON);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Read back a dataset written by [`export_csv`].
pub fn import_dataset(dir: &Path) -> Result<AlignedDataset, TelemetryError> {
    let manifest = read_manifest(dir)?;
    let phases = manifest.meta.phases;
    let mut samples = Vec::new();
    for row in csv::Reader::from_path(dir.join(TELEMETRY_CSV))?.deserialize::<TelemetrySample>() {
        let s = row?;
        let phase = phases.phase_of(s.t_ms as i64).ok_or(TelemetryError::ClockSkew { t_ms: s.t_ms as i64 })?;
        samples.push((s, phase));
    }
    let mut events = Vec::new();
    for row in csv::Reader::from_path(dir.join(EVENTS_CSV))?.deserialize::<EventRow>() {
        let r = row?;
        let mark = EventMark { t_ms: r.t_ms, kind: r.kind, procedure: r.procedure, request_id: r.request_id, status: r.status };
        events.push((mark, r.phase));
    }
    Ok(AlignedDataset { meta: manifest.meta, samples, events })
}
