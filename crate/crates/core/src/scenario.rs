//! Declarative experiment descriptions.
//!
//! A scenario names what to stress (control plane, user plane or both), the
//! target, the loads and their arrival patterns, and the lifecycle timing.
//! Documents are strict JSON: unknown keys are rejected so a mistyped field in
//! a stress configuration never silently falls back to a default. The schema
//! is documented in `docs/scenario-schema.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::emulator::{ProcedureKind, VnfKind};

pub const DEFAULT_TELEMETRY_INTERVAL_MS: u64 = 1000;
pub const MIN_TELEMETRY_INTERVAL_MS: u64 = 100;
pub const DEFAULT_WARMUP_S: u64 = 5;
pub const DEFAULT_DRAIN_S: u64 = 10;
pub const DEFAULT_MTU_BYTES: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    ControlPlane,
    UserPlane,
    Joint,
}

impl Scope {
    pub fn has_control(self) -> bool {
        matches!(self, Scope::ControlPlane | Scope::Joint)
    }

    pub fn has_user(self) -> bool {
        matches!(self, Scope::UserPlane | Scope::Joint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TargetKind {
    #[default]
    Emulator,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyEntry {
    pub vnf: VnfKind,
    /// `host:port` answering length-prefixed SBI frames (UDP datagrams for
    /// the UPF).
    pub endpoint: String,
    /// Process to sample for host-level telemetry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pid: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default)]
    pub kind: TargetKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topology: Vec<TopologyEntry>,
    /// Cost-model document; the bundled calibration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emulator_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RandomProcess {
    Poisson,
    Uniform,
}

/// Which cells of a cell-activity CSV drive a trace-driven arrival stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesRef {
    pub file: PathBuf,
    /// Cells summed into one series (one cell, or a neighborhood).
    pub cells: Vec<String>,
    #[serde(default = "default_series_interval")]
    pub interval_s: u64,
}

fn default_series_interval() -> u64 {
    600
}

fn default_window() -> u64 {
    10
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ArrivalSpec {
    Sequential {
        gap_ms: u64,
    },
    Random {
        rate_per_s: f64,
        process: RandomProcess,
    },
    Burst {
        count: u64,
        window_s: u64,
        offset_s: u64,
    },
    TraceDriven {
        series_ref: SeriesRef,
        #[serde(default = "default_window")]
        window_s: u64,
        /// Requests per unit of dataset activity.
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_count() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureLoad {
    pub procedure: ProcedureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_vnf: Option<VnfKind>,
    #[serde(default)]
    pub stub_upstreams: bool,
    pub arrival: ArrivalSpec,
    #[serde(default = "default_count")]
    pub ue_count: u64,
    #[serde(default = "default_count")]
    pub gnb_count: u64,
}

impl ProcedureLoad {
    /// Function receiving the injector's requests.
    pub fn entry_vnf(&self) -> VnfKind {
        self.target_vnf.unwrap_or_else(|| self.procedure.default_entry())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SizeDist {
    Constant(u32),
    Uniform { min: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum GapDist {
    Constant(f64),
    Exponential { mean_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub packet_size_bytes: SizeDist,
    pub inter_arrival_ms: GapDist,
    pub duration_s: u64,
    /// Fraction of packets (and so, on average, bytes) sent downlink.
    pub direction_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FlowSource {
    /// Path to a service profile CSV.
    Trace(PathBuf),
    Synthetic(FlowSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MixRef {
    Path(PathBuf),
    /// Service → probability, or raw volume (normalized on load).
    Inline(BTreeMap<String, f64>),
}

fn default_mtu() -> u32 {
    DEFAULT_MTU_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficLoad {
    /// Upper bound on planned sessions; the first `sessions` arrivals of the
    /// schedule each start one session.
    pub sessions: u64,
    pub mix_ref: MixRef,
    pub profiles: BTreeMap<String, FlowSource>,
    /// Constant per-session length. Per-session distributions would slot in
    /// here as another variant.
    pub session_duration_s: u64,
    pub arrival: ArrivalSpec,
    #[serde(default = "default_mtu")]
    pub mtu_bytes: u32,
}

fn default_warmup() -> u64 {
    DEFAULT_WARMUP_S
}

fn default_drain() -> u64 {
    DEFAULT_DRAIN_S
}

fn default_interval() -> u64 {
    DEFAULT_TELEMETRY_INTERVAL_MS
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub scope: Scope,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub procedures: Vec<ProcedureLoad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficLoad>,
    pub duration_s: u64,
    #[serde(default = "default_warmup")]
    pub warmup_s: u64,
    #[serde(default = "default_drain")]
    pub drain_s: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub telemetry_interval_ms: u64,
    /// Functions sampled by telemetry; all eight when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry_vnfs: Option<Vec<VnfKind>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Scenario {
    pub fn total_span_ms(&self) -> u64 {
        (self.warmup_s + self.duration_s + self.drain_s) * 1000
    }

    pub fn telemetry_vnfs(&self) -> Vec<VnfKind> {
        self.telemetry_vnfs.clone().unwrap_or_else(|| VnfKind::ALL.to_vec())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Rewrite relative dataset and config paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(cfg) = self.target.emulator_config.as_mut() {
            fix(cfg);
        }
        for load in &mut self.procedures {
            if let ArrivalSpec::TraceDriven { series_ref, .. } = &mut load.arrival {
                fix(&mut series_ref.file);
            }
        }
        if let Some(traffic) = self.traffic.as_mut() {
            if let MixRef::Path(p) = &mut traffic.mix_ref {
                fix(p);
            }
            for src in traffic.profiles.values_mut() {
                if let FlowSource::Trace(p) = src {
                    fix(p);
                }
            }
            if let ArrivalSpec::TraceDriven { series_ref, .. } = &mut traffic.arrival {
                fix(&mut series_ref.file);
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    SyntaxError { line: usize, column: usize, message: String },
    #[error("unknown field `{field}` at line {line}, column {column}")]
    UnknownField { field: String, line: usize, column: usize },
    #[error("invalid value at line {line}, column {column}: {message}")]
    InvalidValue { line: usize, column: usize, message: String },
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn parse_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    serde_json::from_str(document).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        let message = e.to_string();
        match e.classify() {
            serde_json::error::Category::Syntax | serde_json::error::Category::Eof | serde_json::error::Category::Io => {
                ScenarioError::SyntaxError { line, column, message }
            }
            serde_json::error::Category::Data => match unknown_field_name(&message) {
                Some(field) => ScenarioError::UnknownField { field, line, column },
                None => ScenarioError::InvalidValue { line, column, message },
            },
        }
    })
}

fn unknown_field_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

/// Read and parse a scenario file, resolving relative paths against its
/// directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut scenario = parse_scenario(&text)?;
    scenario.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(scenario)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Location in the document, e.g. `procedures[0].arrival`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_arrival(report: &mut ValidationReport, path: &str, arrival: &ArrivalSpec, duration_s: u64) {
    match arrival {
        ArrivalSpec::Sequential { .. } => {}
        ArrivalSpec::Random { rate_per_s, .. } => {
            if !(rate_per_s.is_finite() && *rate_per_s > 0.0) {
                report.push(path, "rate_per_s must be positive");
            }
        }
        ArrivalSpec::Burst { count, window_s, offset_s } => {
            if *count < 1 {
                report.push(path, "burst count must be at least 1");
            }
            if *window_s == 0 {
                report.push(path, "window_s must be positive");
            }
            if offset_s + window_s > duration_s {
                report.push(path, "arrival window exceeds duration");
            }
        }
        ArrivalSpec::TraceDriven { series_ref, window_s, scale } => {
            if *window_s == 0 {
                report.push(path, "window_s must be positive");
            }
            if series_ref.cells.is_empty() {
                report.push(path, "series_ref.cells must name at least one cell");
            }
            if series_ref.interval_s == 0 {
                report.push(path, "series_ref.interval_s must be positive");
            } else if *window_s > 0 && series_ref.interval_s % window_s != 0 {
                report.push(path, "window_s must divide series_ref.interval_s");
            }
            if !(scale.is_finite() && *scale >= 0.0) {
                report.push(path, "scale must be finite and non-negative");
            }
        }
    }
}

fn check_flow(report: &mut ValidationReport, path: &str, flow: &FlowSpec, mtu: u32) {
    let size_ok = |s: u32| (1..=mtu).contains(&s);
    match flow.packet_size_bytes {
        SizeDist::Constant(s) if !size_ok(s) => report.push(path, format!("packet size must be within 1..={mtu} bytes")),
        SizeDist::Uniform { min, max } if !(size_ok(min) && size_ok(max) && min <= max) => {
            report.push(path, format!("packet size range must satisfy 1 <= min <= max <= {mtu}"))
        }
        _ => {}
    }
    let gap = match flow.inter_arrival_ms {
        GapDist::Constant(g) => g,
        GapDist::Exponential { mean_ms } => mean_ms,
    };
    if !(gap.is_finite() && gap > 0.0) {
        report.push(path, "inter-arrival must be positive");
    }
    if flow.duration_s == 0 {
        report.push(path, "flow duration must be positive");
    }
    if !(0.0..=1.0).contains(&flow.direction_ratio) {
        report.push(path, "direction_ratio must lie in [0, 1]");
    }
}

/// Every violation of the scenario invariants. Pure: no file access, so
/// dataset files are checked when the run prepares.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    if s.name.trim().is_empty() {
        report.push("name", "name must not be empty");
    }
    if s.duration_s == 0 {
        report.push("duration_s", "duration must be positive");
    }
    if s.telemetry_interval_ms < MIN_TELEMETRY_INTERVAL_MS {
        report.push("telemetry_interval_ms", format!("telemetry interval must be at least {MIN_TELEMETRY_INTERVAL_MS} ms"));
    }
    if s.scope.has_control() && s.procedures.is_empty() {
        report.push("procedures", "scope requires at least one procedure load");
    }
    if s.scope.has_user() && s.traffic.is_none() {
        report.push("traffic", "scope requires a traffic section");
    }
    if let Some(vnfs) = &s.telemetry_vnfs {
        if vnfs.is_empty() {
            report.push("telemetry_vnfs", "telemetry_vnfs must not be empty");
        }
    }

    for (i, load) in s.procedures.iter().enumerate() {
        let path = format!("procedures[{i}]");
        if load.ue_count < 1 {
            report.push(&path, "ue_count must be at least 1");
        }
        if load.gnb_count < 1 {
            report.push(&path, "gnb_count must be at least 1");
        }
        if let Some(vnf) = load.target_vnf {
            if !load.procedure.servable_by(vnf) {
                report.push(&path, format!("procedure not servable by VNF ({} at {vnf})", load.procedure));
            }
        }
        check_arrival(&mut report, &format!("{path}.arrival"), &load.arrival, s.duration_s);
    }

    if let Some(t) = &s.traffic {
        if t.sessions < 1 {
            report.push("traffic.sessions", "sessions must be at least 1");
        }
        if t.session_duration_s == 0 {
            report.push("traffic.session_duration_s", "session duration must be positive");
        }
        if t.mtu_bytes == 0 {
            report.push("traffic.mtu_bytes", "MTU must be positive");
        }
        if let MixRef::Inline(mix) = &t.mix_ref {
            if mix.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
                report.push("traffic.mix_ref", "mix entries must be finite and non-negative");
            }
            if !mix.values().any(|p| *p > 0.0) {
                report.push("traffic.mix_ref", "mix needs at least one service with positive weight");
            }
            for (service, p) in mix {
                if *p > 0.0 && !t.profiles.contains_key(service) {
                    report.push("traffic.profiles", format!("service `{service}` has no flow source"));
                }
            }
        }
        for (service, src) in &t.profiles {
            if let FlowSource::Synthetic(flow) = src {
                check_flow(&mut report, &format!("traffic.profiles.{service}"), flow, t.mtu_bytes);
            }
        }
        check_arrival(&mut report, "traffic.arrival", &t.arrival, s.duration_s);
    }

    if s.target.kind == TargetKind::External {
        let listed: Vec<VnfKind> = s.target.topology.iter().map(|e| e.vnf).collect();
        let mut needed: Vec<VnfKind> = Vec::new();
        for load in &s.procedures {
            if load.stub_upstreams {
                needed.push(load.entry_vnf());
            } else {
                needed.extend(chain_vnfs(load.procedure, load.entry_vnf()));
            }
        }
        if s.traffic.is_some() {
            needed.push(VnfKind::UPF);
        }
        needed.sort();
        needed.dedup();
        for vnf in needed {
            if !listed.contains(&vnf) {
                report.push("target.topology", format!("external topology is missing {vnf}"));
            }
        }
    }
    report
}

/// Functions a procedure touches when entered at `entry`.
pub fn chain_vnfs(procedure: ProcedureKind, entry: VnfKind) -> Vec<VnfKind> {
    use VnfKind::*;
    let mut v = match (procedure, entry) {
        (ProcedureKind::Registration, _) => vec![AMF, AUSF, UDM, UDR, NRF],
        (ProcedureKind::PduSessionSetup, SMF) => vec![SMF, UDM, UDR, UPF, NRF],
        (ProcedureKind::PduSessionSetup, _) => vec![AMF, SMF, UDM, UDR, UPF, NRF],
        (ProcedureKind::Authentication, _) => vec![AUSF, UDM, UDR, NRF],
        (ProcedureKind::AuthVectorGeneration, _) => vec![UDM, UDR, NRF],
        (ProcedureKind::SubscriptionDataMgmt, _) => vec![UDR],
        (ProcedureKind::NrfDiscovery | ProcedureKind::Heartbeat, _) => vec![NRF],
    };
    v.sort();
    v
}
