//! Experiment lifecycle: prepare, warmup, inject, drain, collect.
//!
//! Under the virtual clock the run is a single-threaded discrete-event loop,
//! which makes emulator runs reproducible to the byte. Under the wall clock
//! the injectors, the heartbeat timer and the sampler run on their own
//! threads and the coordinator only waits for phase boundaries.

use std::collections::BTreeMap;
use std::fs;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::arrival::{build_schedule, merge_tagged, ArrivalError, EventSchedule};
use crate::clock::{Clock, VirtualClock, WallClock};
use crate::cpli::{emit_event_marks, inject_control, write_outcomes_csv, ControlInjector, CpliError, EventMark, MarkKind, RequestOutcome};
use crate::dataset::{derive_service_mix, load_service_mix, load_trace_profile, DatasetError, ServiceMix};
use crate::emulator::{
    start_emulator, EmulatorConfig, EmulatorError, EmulatorHandle, Origin, ResourceCostModel, SbiMessage, ServiceOp,
    TransportKind, VnfKind,
};
use crate::rng::{derive_seed, tag};
use crate::scenario::{validate_scenario, FlowSource, MixRef, Scenario, TargetKind, ValidationReport};
use crate::target::{ControlTarget, EmulatorTarget, ExternalTarget, TargetError, UserPlaneTarget};
use crate::telemetry::{
    align, export_csv, start_collector, AlignedDataset, CollectorHandle, DatasetMeta, EmulatorCounters, HostProcessStats,
    Manifest, Phases, TelemetryBackend, TelemetryError, TelemetrySample, MANIFEST_JSON, SCHEMA_VERSION,
};
use crate::upli::{drive_userplane, plan_sessions, SessionPlan, SessionSource, UpliError, UserPlaneDriver, UserPlaneStats};

pub const OUTCOMES_CSV: &str = "outcomes.csv";
pub const USERPLANE_CSV: &str = "userplane.csv";
pub const TAP_CSV: &str = "tap.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitStatus {
    Completed,
    Aborted { reason: String },
}

impl ExitStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, ExitStatus::Completed)
    }
}

impl std::fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitStatus::Completed => f.write_str("Completed"),
            ExitStatus::Aborted { reason } => write!(f, "Aborted: {reason}"),
        }
    }
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub dataset: AlignedDataset,
    pub outcomes: Vec<RequestOutcome>,
    pub up_stats: UserPlaneStats,
    pub exit: ExitStatus,
    /// The emulator the run drove, kept for inspection.
    pub emulator: Option<EmulatorHandle>,
    /// Set when the run was exported.
    pub manifest: Option<Manifest>,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("scenario is invalid:\n{0}")]
    Invalid(ValidationReport),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("dataset missing: {path}")]
    DatasetMissing { path: String },
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("user plane: {0}")]
    UserPlane(#[from] UpliError),
    #[error("emulator: {0}")]
    Emulator(#[from] EmulatorError),
    #[error("cost model: {0}")]
    CostModel(#[from] crate::emulator::CostModelError),
    #[error("telemetry: {0}")]
    Telemetry(#[from] TelemetryError),
    #[error("export to {path}: {message}")]
    Export { path: String, message: String },
}

impl From<ArrivalError> for OrchestratorError {
    fn from(e: ArrivalError) -> Self {
        match e {
            ArrivalError::Dataset(d) => dataset_error(d),
        }
    }
}

fn dataset_error(e: DatasetError) -> OrchestratorError {
    match e {
        DatasetError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
            OrchestratorError::DatasetMissing { path }
        }
        other => OrchestratorError::Dataset(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Wall,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Export directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Emulator transport; in-process when absent.
    pub transport: Option<TransportKind>,
    /// Virtual for emulator targets and wall for external ones when absent.
    pub clock: Option<ClockMode>,
    pub export_schedules: bool,
    pub export_tap: bool,
    /// Summary labels written to the manifest.
    pub group: Option<String>,
    pub level: Option<u64>,
}

/// SHA-256 over the scenario's compact JSON form.
pub fn scenario_hash(s: &Scenario) -> String {
    let json = serde_json::to_string(s).expect("scenario serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

struct Prepared {
    cp_schedules: Vec<EventSchedule>,
    traffic_schedule: Option<EventSchedule>,
    plans: Vec<SessionPlan>,
}

fn resolve_datasets(s: &Scenario) -> Result<Prepared, OrchestratorError> {
    let mut cp_schedules = Vec::new();
    if s.scope.has_control() {
        for (i, load) in s.procedures.iter().enumerate() {
            let seed = derive_seed(s.seed, tag::CONTROL_LOAD + i as u64);
            cp_schedules.push(build_schedule(&load.arrival, s.duration_s, seed)?);
        }
    }
    let (traffic_schedule, plans) = match (&s.traffic, s.scope.has_user()) {
        (Some(t), true) => {
            let seed = derive_seed(s.seed, tag::TRAFFIC_ARRIVALS);
            let full = build_schedule(&t.arrival, s.duration_s, seed)?;
            let schedule = full.truncated(t.sessions as usize);
            let mix: ServiceMix = match &t.mix_ref {
                MixRef::Path(p) => load_service_mix(p).map_err(dataset_error)?,
                MixRef::Inline(m) => derive_service_mix(m)?,
            };
            let mut sources = BTreeMap::new();
            for (service, src) in &t.profiles {
                let source = match src {
                    FlowSource::Synthetic(spec) => SessionSource::Synthetic(spec.clone()),
                    FlowSource::Trace(p) => SessionSource::Trace(Arc::new(load_trace_profile(p).map_err(dataset_error)?)),
                };
                sources.insert(service.clone(), source);
            }
            let mut plans = plan_sessions(
                schedule.len(),
                &mix,
                &sources,
                &schedule,
                t.session_duration_s * 1000,
                t.mtu_bytes,
                derive_seed(s.seed, tag::SERVICE_SAMPLING),
            )?;
            let anchor = s.warmup_s * 1000;
            for p in &mut plans {
                p.start_ms += anchor;
            }
            (Some(schedule), plans)
        }
        _ => (None, Vec::new()),
    };
    Ok(Prepared { cp_schedules, traffic_schedule, plans })
}

/// The system under test as the injectors and the sampler see it.
struct Target {
    cp: Box<dyn ControlTarget>,
    up: Box<dyn UserPlaneTarget>,
    emulator: Option<EmulatorHandle>,
    backend: Box<dyn TelemetryBackend>,
    vnfs: Vec<VnfKind>,
    /// Whether user-plane sessions can be set up through an AMF.
    has_amf: bool,
}

fn connect(s: &Scenario, opts: &RunOptions, clock: Arc<dyn Clock>) -> Result<Target, OrchestratorError> {
    match s.target.kind {
        TargetKind::Emulator => {
            let model = match &s.target.emulator_config {
                Some(p) if !p.exists() => return Err(OrchestratorError::DatasetMissing { path: p.display().to_string() }),
                Some(p) => ResourceCostModel::load(p)?,
                None => ResourceCostModel::builtin(),
            };
            let config = EmulatorConfig { transport: opts.transport.unwrap_or(TransportKind::InProcess), ..Default::default() };
            let emu = start_emulator(model, config, clock)?;
            for load in s.procedures.iter().filter(|l| l.stub_upstreams) {
                emu.set_stubbed(load.entry_vnf(), true);
            }
            Ok(Target {
                cp: Box::new(EmulatorTarget::new(emu.clone())),
                up: Box::new(EmulatorTarget::new(emu.clone())),
                backend: Box::new(EmulatorCounters(emu.clone())),
                emulator: Some(emu),
                vnfs: s.telemetry_vnfs(),
                has_amf: true,
            })
        }
        TargetKind::External => {
            for e in s.target.topology.iter().filter(|e| e.vnf != VnfKind::UPF) {
                probe(&e.endpoint).map_err(|r| OrchestratorError::TargetUnreachable(format!("{} at {}: {r}", e.vnf, e.endpoint)))?;
            }
            let pids: BTreeMap<VnfKind, u32> = s
                .target
                .topology
                .iter()
                .filter_map(|e| e.pid.map(|p| (e.vnf, p)))
                .filter(|(v, _)| s.telemetry_vnfs().contains(v))
                .collect();
            for v in s.telemetry_vnfs().iter().filter(|v| !pids.contains_key(v)) {
                log::warn!("{v} has no pid in the topology; it will not be sampled");
            }
            Ok(Target {
                cp: Box::new(ExternalTarget::new(&s.target.topology)),
                up: Box::new(ExternalTarget::new(&s.target.topology)),
                vnfs: pids.keys().copied().collect(),
                backend: Box::new(HostProcessStats::new(pids, clock)),
                emulator: None,
                has_amf: s.target.topology.iter().any(|e| e.vnf == VnfKind::AMF),
            })
        }
    }
}

fn probe(endpoint: &str) -> Result<(), String> {
    let addr = endpoint.to_socket_addrs().map_err(|e| e.to_string())?.next().ok_or("no address")?;
    TcpStream::connect_timeout(&addr, Duration::from_secs(2)).map(|_| ()).map_err(|e| e.to_string())
}

/// Install every planned session on the UPF through the normal PDU session
/// setup chain, so inject-phase UPF load is forwarding only.
fn pre_establish(cp: &dyn ControlTarget, plans: &[SessionPlan]) -> Result<Vec<String>, OrchestratorError> {
    let mut failed = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        let msg = SbiMessage::new(format!("up-setup-{i}"), ServiceOp::PduSessionRequest, Origin::Injector, VnfKind::AMF)
            .with_supi(Some(p.supi.clone()))
            .with("session_key", p.session_key());
        match cp.send(msg, crate::cpli::DEFAULT_REQUEST_TIMEOUT) {
            Ok(r) if r.is_success() => {}
            Ok(r) => failed.push(format!("{}: {}", p.session_key(), r.reason.unwrap_or_default())),
            Err(TargetError::Unreachable(r)) => return Err(OrchestratorError::TargetUnreachable(r)),
            Err(e) => failed.push(format!("{}: {e}", p.session_key())),
        }
    }
    Ok(failed)
}

fn session_marks(plans: &[SessionPlan], drain_start_ms: u64, failed: &[String]) -> Vec<EventMark> {
    let mut marks = Vec::with_capacity(plans.len() * 2);
    for p in plans {
        let key = p.session_key();
        let status = if failed.iter().any(|f| f.starts_with(&format!("{key}:"))) { "Failure" } else { "Success" };
        let end = p.end_ms().min(drain_start_ms);
        for (t, kind) in [(p.start_ms, MarkKind::SessionStart), (end, MarkKind::SessionEnd)] {
            marks.push(EventMark {
                t_ms: t as i64,
                kind,
                procedure: p.service.clone(),
                request_id: key.clone(),
                status: status.to_string(),
            });
        }
    }
    marks
}

/// Run `s` end to end. Target loss after prepare yields an `Aborted` result
/// carrying whatever was collected.
pub fn run_experiment(s: &Scenario, opts: &RunOptions) -> Result<ExperimentResult, OrchestratorError> {
    let report = validate_scenario(s);
    if !report.is_empty() {
        return Err(OrchestratorError::Invalid(report));
    }
    let mode = opts.clock.unwrap_or(match s.target.kind {
        TargetKind::Emulator => ClockMode::Virtual,
        TargetKind::External => ClockMode::Wall,
    });
    let clock: Arc<dyn Clock> = match mode {
        ClockMode::Virtual => Arc::new(VirtualClock::new()),
        ClockMode::Wall => Arc::new(WallClock::new()),
    };
    let phases = Phases::from_seconds(s.warmup_s, s.duration_s, s.drain_s);

    log::info!("prepare: {}", s.name);
    let prepared = resolve_datasets(s)?;
    let target = connect(s, opts, clock.clone())?;
    let failed = if target.has_amf {
        pre_establish(target.cp.as_ref(), &prepared.plans)?
    } else {
        log::warn!("no AMF in the topology; user-plane sessions are assumed to be provisioned");
        Vec::new()
    };
    if !failed.is_empty() {
        log::warn!("{} user-plane session(s) could not be established; first: {}", failed.len(), failed[0]);
    }

    let collector = start_collector(target.backend, &target.vnfs, s.telemetry_interval_ms, clock.clone())?;
    let run = Run { s, phases, clock: clock.as_ref(), cp: target.cp.as_ref(), up: target.up.as_ref(), emulator: target.emulator.as_ref() };
    let (samples, outcomes, up_stats, exit) = match mode {
        ClockMode::Virtual => run.discrete(collector, &prepared),
        ClockMode::Wall => run.threaded(collector, &prepared),
    };
    log::info!("collect: {exit}");

    let mut marks = emit_event_marks(&outcomes);
    marks.extend(session_marks(&prepared.plans, phases.drain_start_ms, &failed));
    marks.retain(|m| m.t_ms <= phases.end_ms as i64);
    let meta = DatasetMeta {
        schema_version: SCHEMA_VERSION,
        scenario_name: s.name.clone(),
        scenario_hash: scenario_hash(s),
        seed: s.seed,
        interval_ms: s.telemetry_interval_ms,
        phases,
        group: opts.group.clone(),
        level: opts.level,
        exit: exit.to_string(),
    };
    let dataset = align(samples, marks, meta)?;
    if let Some(emu) = &target.emulator {
        emu.shutdown();
    }
    let mut result = ExperimentResult { dataset, outcomes, up_stats, exit, emulator: target.emulator, manifest: None };
    if let Some(dir) = &opts.out_dir {
        result.manifest = Some(export_result(&result, &prepared, dir, opts)?);
    }
    Ok(result)
}

type RunOutput = (Vec<TelemetrySample>, Vec<RequestOutcome>, UserPlaneStats, ExitStatus);

struct Run<'a> {
    s: &'a Scenario,
    phases: Phases,
    clock: &'a dyn Clock,
    cp: &'a dyn ControlTarget,
    up: &'a dyn UserPlaneTarget,
    emulator: Option<&'a EmulatorHandle>,
}

impl Run<'_> {
    fn heartbeat_period(&self) -> Option<u64> {
        self.emulator.map(|e| e.config().heartbeat_period_ms).filter(|p| *p > 0)
    }

    /// At equal timestamps: telemetry, heartbeats, signaling, packets.
    fn discrete(&self, mut collector: CollectorHandle, prepared: &Prepared) -> RunOutput {
        let end = self.phases.end_ms;
        let inject = self.phases.inject_start_ms;
        let drain = self.phases.drain_start_ms;
        let injectors: Vec<ControlInjector<'_>> =
            self.s.procedures.iter().enumerate().map(|(i, l)| ControlInjector::new(self.cp, l, i)).collect();
        let cp_events = merge_tagged(&prepared.cp_schedules);
        let mut next_cp = 0;
        let mut driver = UserPlaneDriver::new(&prepared.plans, self.s.seed, drain);
        let hb_period = self.heartbeat_period();
        let mut next_hb = hb_period;
        let mut outcomes = Vec::with_capacity(cp_events.len());
        let mut abort: Option<String> = None;

        log::info!("warmup: 0..{inject} ms");
        loop {
            let t_tel = collector.next_due_ms().filter(|t| *t <= end);
            let t_hb = next_hb.filter(|t| *t <= end);
            let t_cp = cp_events.get(next_cp).map(|(t, _, _)| inject + t).filter(|t| *t < drain);
            let t_up = driver.next_time().filter(|t| *t < drain);
            let next = [t_tel, t_hb, t_cp, t_up].into_iter().enumerate().filter_map(|(k, t)| t.map(|t| (t, k))).min();
            let Some((t, k)) = next else { break };
            self.clock.sleep_until(t);
            match k {
                0 => {
                    if let Err(e) = collector.tick(t) {
                        abort = Some(format!("telemetry backend lost: {e}"));
                        break;
                    }
                }
                1 => {
                    self.emulator.expect("heartbeats need the emulator").heartbeat_tick(t);
                    next_hb = hb_period.map(|p| t + p);
                }
                2 => {
                    let (_, load, index) = cp_events[next_cp];
                    next_cp += 1;
                    let (outcome, unreachable) = injectors[load].fire(index, self.clock);
                    outcomes.push(outcome);
                    if let Some(r) = unreachable {
                        abort = Some(format!("target unreachable: {r}"));
                        break;
                    }
                }
                _ => {
                    if let Err(e) = driver.deliver_next(self.up) {
                        abort = Some(format!("user plane: {e}"));
                        break;
                    }
                }
            }
        }
        if abort.is_some() {
            for &(t, load, index) in &cp_events[next_cp..] {
                outcomes.push(injectors[load].unsent(index, inject + t));
            }
        }
        let (samples, _) = collector.stop();
        let exit = match abort {
            None => ExitStatus::Completed,
            Some(reason) => {
                log::error!("aborted at {} ms: {reason}", self.clock.now_ms());
                ExitStatus::Aborted { reason }
            }
        };
        (samples, outcomes, driver.finish(), exit)
    }

    fn threaded(&self, collector: CollectorHandle, prepared: &Prepared) -> RunOutput {
        let end = self.phases.end_ms;
        let drain = self.phases.drain_start_ms;
        let done = AtomicBool::new(false);
        let abort: Mutex<Option<String>> = Mutex::new(None);
        let outcomes = Mutex::new(Vec::new());
        let up_stats = Mutex::new(UserPlaneStats::default());
        std::thread::scope(|scope| {
            if let Some(period) = self.heartbeat_period() {
                let (emu, done) = (self.emulator.expect("period implies emulator"), &done);
                scope.spawn(move || {
                    let mut t = period;
                    while t <= end && !done.load(Ordering::SeqCst) {
                        self.clock.sleep_until(t);
                        emu.heartbeat_tick(t);
                        t += period;
                    }
                });
            }
            for (i, (load, schedule)) in self.s.procedures.iter().zip(&prepared.cp_schedules).enumerate() {
                let (outcomes, abort) = (&outcomes, &abort);
                scope.spawn(move || {
                    let got = match inject_control(self.cp, load, i, schedule, self.phases.inject_start_ms, self.clock) {
                        Ok(o) => o,
                        Err(CpliError::TargetUnreachable { reason, outcomes }) => {
                            abort.lock().unwrap().get_or_insert(format!("target unreachable: {reason}"));
                            outcomes
                        }
                    };
                    outcomes.lock().unwrap().extend(got);
                });
            }
            if !prepared.plans.is_empty() {
                let (up_stats, abort) = (&up_stats, &abort);
                scope.spawn(move || match drive_userplane(self.up, &prepared.plans, self.clock, self.s.seed, drain) {
                    Ok(stats) => *up_stats.lock().unwrap() = stats,
                    Err(e) => {
                        abort.lock().unwrap().get_or_insert(format!("user plane: {e}"));
                    }
                });
            }
            self.clock.sleep_until(drain);
            log::info!("drain: {drain}..{end} ms");
            self.clock.sleep_until(end);
            done.store(true, Ordering::SeqCst);
        });
        let (samples, err) = collector.stop();
        let mut abort = abort.into_inner().unwrap();
        if let Some(e) = err {
            abort.get_or_insert(format!("telemetry backend lost: {e}"));
        }
        let mut outcomes = outcomes.into_inner().unwrap();
        outcomes.sort_by(|a, b| a.t_start_ms.cmp(&b.t_start_ms).then_with(|| a.request_id.cmp(&b.request_id)));
        let exit = abort.map_or(ExitStatus::Completed, |reason| ExitStatus::Aborted { reason });
        (samples, outcomes, up_stats.into_inner().unwrap(), exit)
    }
}

fn export_result(
    result: &ExperimentResult,
    prepared: &Prepared,
    dir: &Path,
    opts: &RunOptions,
) -> Result<Manifest, OrchestratorError> {
    let mut manifest = export_csv(&result.dataset, dir)?;
    let fail = |path: &Path, e: &dyn std::fmt::Display| OrchestratorError::Export { path: path.display().to_string(), message: e.to_string() };
    let create = |name: &str| {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| fail(parent, &e))?;
        }
        fs::File::create(&path).map(std::io::BufWriter::new).map_err(|e| fail(&path, &e))
    };
    write_outcomes_csv(&result.outcomes, create(OUTCOMES_CSV)?).map_err(|e| fail(&dir.join(OUTCOMES_CSV), &e))?;
    manifest.files.push(OUTCOMES_CSV.into());
    result.up_stats.write_csv(create(USERPLANE_CSV)?).map_err(|e| fail(&dir.join(USERPLANE_CSV), &e))?;
    manifest.files.push(USERPLANE_CSV.into());
    if opts.export_schedules {
        let mut named: Vec<(String, &EventSchedule)> =
            prepared.cp_schedules.iter().enumerate().map(|(i, sch)| (format!("schedules/cp{i}.csv"), sch)).collect();
        if let Some(t) = &prepared.traffic_schedule {
            named.push(("schedules/traffic.csv".into(), t));
        }
        for (name, sch) in named {
            sch.write_csv(create(&name)?).map_err(|e| fail(&dir.join(&name), &e))?;
            manifest.files.push(name);
        }
    }
    if let (true, Some(emu)) = (opts.export_tap, &result.emulator) {
        emu.export_tap_csv(create(TAP_CSV)?).map_err(|e| fail(&dir.join(TAP_CSV), &e))?;
        manifest.files.push(TAP_CSV.into());
    }
    let path = dir.join(MANIFEST_JSON);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(TelemetryError::from)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| fail(&path, &e))?;
    Ok(manifest)
}
