//! Control-plane load injector.
//!
//! Open loop: every scheduled event fires at its time whether or not earlier
//! requests have completed. Under the virtual clock requests run inline in
//! schedule order; under the wall clock a scheduler thread hands events to a
//! bounded pool of sender workers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arrival::EventSchedule;
use crate::clock::Clock;
use crate::emulator::{Origin, ProcedureKind, SbiMessage, VnfKind};
use crate::scenario::ProcedureLoad;
use crate::target::{ControlTarget, TargetError};

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_WORKERS: usize = 32;
pub const NOT_SENT: &str = "not sent: target unreachable";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeStatus {
    Success,
    Failure { reason: String },
    Timeout,
}

impl OutcomeStatus {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeStatus::Success => "Success",
            OutcomeStatus::Failure { .. } => "Failure",
            OutcomeStatus::Timeout => "Timeout",
        }
    }
}

impl fmt::Display for OutcomeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeStatus::Failure { reason } => write!(f, "Failure({reason})"),
            other => f.write_str(other.label()),
        }
    }
}

impl FromStr for OutcomeStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Success" => Ok(OutcomeStatus::Success),
            "Timeout" => Ok(OutcomeStatus::Timeout),
            _ => s
                .strip_prefix("Failure(")
                .and_then(|r| r.strip_suffix(')'))
                .map(|reason| OutcomeStatus::Failure { reason: reason.to_string() })
                .ok_or_else(|| format!("unknown status `{s}`")),
        }
    }
}

impl Serialize for OutcomeStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OutcomeStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub request_id: String,
    pub procedure: ProcedureKind,
    pub supi: String,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub status: OutcomeStatus,
}

impl RequestOutcome {
    pub fn was_sent(&self) -> bool {
        !matches!(&self.status, OutcomeStatus::Failure { reason } if reason == NOT_SENT)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CpliError {
    /// Injection stopped; `outcomes` still has one entry per event, the
    /// unsent ones marked with [`NOT_SENT`].
    #[error("target unreachable: {reason}")]
    TargetUnreachable { reason: String, outcomes: Vec<RequestOutcome> },
}

/// Subscriber `k` (0-based) of load `load_id`.
pub fn supi_for(load_id: usize, k: u64) -> String {
    format!("imsi-{:02}{:08}", load_id, k + 1)
}

pub fn request_id(load_id: usize, i: u64) -> String {
    format!("cp{load_id}-{i}")
}

/// Fires the requests of one procedure load.
pub struct ControlInjector<'a> {
    target: &'a dyn ControlTarget,
    load: &'a ProcedureLoad,
    load_id: usize,
    timeout: Duration,
}

impl<'a> ControlInjector<'a> {
    pub fn new(target: &'a dyn ControlTarget, load: &'a ProcedureLoad, load_id: usize) -> Self {
        ControlInjector { target, load, load_id, timeout: DEFAULT_REQUEST_TIMEOUT }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn messages(&self, i: u64, supi: &str) -> Vec<SbiMessage> {
        let entry = self.load.entry_vnf();
        let ops = self.load.procedure.injector_ops(entry);
        let gnb = format!("gnb-{}", i % self.load.gnb_count.max(1));
        // Rotates the subject of discovery and heartbeat requests.
        let peer = VnfKind::ALL.into_iter().filter(|k| *k != VnfKind::NRF).nth((i % 7) as usize).expect("seven peers");
        let base = request_id(self.load_id, i);
        ops.iter()
            .enumerate()
            .map(|(n, op)| {
                let id = if ops.len() == 1 { base.clone() } else { format!("{base}.{n}") };
                let msg = SbiMessage::new(id, *op, Origin::Injector, entry).with_supi(Some(supi.to_string())).with("gnb", gnb.clone());
                match self.load.procedure {
                    ProcedureKind::NrfDiscovery => msg.with("wanted", peer.as_str()),
                    ProcedureKind::Heartbeat => msg.with("nf", peer.as_str()),
                    _ => msg,
                }
            })
            .collect()
    }

    /// Send event `i` now. The second value is set when the target could not
    /// be reached at all.
    pub fn fire(&self, i: u64, clock: &dyn Clock) -> (RequestOutcome, Option<String>) {
        let supi = supi_for(self.load_id, i % self.load.ue_count.max(1));
        let t_start_ms = clock.now_ms();
        let mut status = OutcomeStatus::Success;
        let mut unreachable = None;
        let mut t_end_ms = None;
        for msg in self.messages(i, &supi) {
            match self.target.send(msg, self.timeout) {
                Ok(resp) if resp.is_success() => {}
                Ok(resp) => {
                    status = OutcomeStatus::Failure { reason: resp.reason.unwrap_or_default() };
                    break;
                }
                Err(TargetError::Timeout(ms)) => {
                    status = OutcomeStatus::Timeout;
                    if clock.is_virtual() {
                        t_end_ms = Some(t_start_ms + ms);
                    }
                    break;
                }
                Err(e) => {
                    if let TargetError::Unreachable(r) = &e {
                        unreachable = Some(r.clone());
                    }
                    status = OutcomeStatus::Failure { reason: e.to_string() };
                    break;
                }
            }
        }
        let t_end_ms = t_end_ms.unwrap_or_else(|| clock.now_ms()).max(t_start_ms);
        let outcome = RequestOutcome {
            request_id: request_id(self.load_id, i),
            procedure: self.load.procedure,
            supi,
            t_start_ms,
            t_end_ms,
            status,
        };
        (outcome, unreachable)
    }

    pub fn unsent(&self, i: u64, t_ms: u64) -> RequestOutcome {
        RequestOutcome {
            request_id: request_id(self.load_id, i),
            procedure: self.load.procedure,
            supi: supi_for(self.load_id, i % self.load.ue_count.max(1)),
            t_start_ms: t_ms,
            t_end_ms: t_ms,
            status: OutcomeStatus::Failure { reason: NOT_SENT.to_string() },
        }
    }
}

/// Fire every event of `schedule` at `anchor_ms + t_ms` on `clock`.
pub fn inject_control(
    target: &dyn ControlTarget,
    load: &ProcedureLoad,
    load_id: usize,
    schedule: &EventSchedule,
    anchor_ms: u64,
    clock: &dyn Clock,
) -> Result<Vec<RequestOutcome>, CpliError> {
    let injector = ControlInjector::new(target, load, load_id);
    if clock.is_virtual() {
        inject_inline(&injector, schedule, anchor_ms, clock)
    } else {
        inject_pooled(&injector, schedule, anchor_ms, clock, DEFAULT_WORKERS)
    }
}

fn inject_inline(
    injector: &ControlInjector<'_>,
    schedule: &EventSchedule,
    anchor_ms: u64,
    clock: &dyn Clock,
) -> Result<Vec<RequestOutcome>, CpliError> {
    let mut outcomes = Vec::with_capacity(schedule.len());
    let mut failure = None;
    for e in schedule.events() {
        if failure.is_some() {
            outcomes.push(injector.unsent(e.index, anchor_ms + e.t_ms));
            continue;
        }
        clock.sleep_until(anchor_ms + e.t_ms);
        let (outcome, unreachable) = injector.fire(e.index, clock);
        outcomes.push(outcome);
        failure = unreachable;
    }
    finish(outcomes, failure)
}

fn inject_pooled(
    injector: &ControlInjector<'_>,
    schedule: &EventSchedule,
    anchor_ms: u64,
    clock: &dyn Clock,
    workers: usize,
) -> Result<Vec<RequestOutcome>, CpliError> {
    let sink = Mutex::new(Vec::with_capacity(schedule.len()));
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let abort = AtomicBool::new(false);
    let (tx, rx) = crossbeam_channel::bounded::<u64>(workers * 4);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let rx = rx.clone();
            let (sink, failure, abort) = (&sink, &failure, &abort);
            scope.spawn(move || {
                for i in rx {
                    let (outcome, unreachable) = injector.fire(i, clock);
                    if let Some(r) = unreachable {
                        abort.store(true, Ordering::SeqCst);
                        failure.lock().unwrap().get_or_insert(r);
                    }
                    sink.lock().unwrap().push(outcome);
                }
            });
        }
        drop(rx);
        for e in schedule.events() {
            if abort.load(Ordering::SeqCst) {
                sink.lock().unwrap().push(injector.unsent(e.index, anchor_ms + e.t_ms));
                continue;
            }
            clock.sleep_until(anchor_ms + e.t_ms);
            if tx.send(e.index).is_err() {
                break;
            }
        }
        drop(tx);
    });
    finish(sink.into_inner().unwrap(), failure.into_inner().unwrap())
}

fn finish(mut outcomes: Vec<RequestOutcome>, failure: Option<String>) -> Result<Vec<RequestOutcome>, CpliError> {
    outcomes.sort_by(|a, b| a.t_start_ms.cmp(&b.t_start_ms).then_with(|| a.request_id.cmp(&b.request_id)));
    match failure {
        None => Ok(outcomes),
        Some(reason) => Err(CpliError::TargetUnreachable { reason, outcomes }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarkKind {
    Start,
    End,
    SessionStart,
    SessionEnd,
}

/// A timestamped injection event for alignment with telemetry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMark {
    /// Experiment-relative; signed so marks from a skewed external clock
    /// can be represented and rejected.
    pub t_ms: i64,
    pub kind: MarkKind,
    /// Procedure name for signaling marks, service name for session marks.
    pub procedure: String,
    pub request_id: String,
    pub status: String,
}

/// A start and an end mark per outcome, time-sorted (ties keep outcome order).
pub fn emit_event_marks(outcomes: &[RequestOutcome]) -> Vec<EventMark> {
    let mut marks: Vec<EventMark> = outcomes
        .iter()
        .flat_map(|o| {
            let status = o.status.label().to_string();
            [(o.t_start_ms as i64, MarkKind::Start), (o.t_end_ms as i64, MarkKind::End)].map(|(t_ms, kind)| EventMark {
                t_ms,
                kind,
                procedure: o.procedure.to_string(),
                request_id: o.request_id.clone(),
                status: status.clone(),
            })
        })
        .collect();
    marks.sort_by_key(|m| m.t_ms);
    marks
}

/// CSV `request_id,procedure,supi,t_start_ms,t_end_ms,status`.
pub fn write_outcomes_csv<W: Write>(outcomes: &[RequestOutcome], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for o in outcomes {
        out.serialize(o)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::arrival::build_schedule;
    use crate::clock::{VirtualClock, WallClock};
    use crate::emulator::{start_emulator, EmulatorConfig, ResourceCostModel, SbiResponse};
    use crate::scenario::ArrivalSpec;
    use crate::target::EmulatorTarget;

    fn load(procedure: ProcedureKind, arrival: ArrivalSpec) -> ProcedureLoad {
        ProcedureLoad { procedure, target_vnf: None, stub_upstreams: false, arrival, ue_count: 1, gnb_count: 1 }
    }

    fn emulator_target(clock: Arc<VirtualClock>) -> EmulatorTarget {
        EmulatorTarget::new(start_emulator(ResourceCostModel::builtin(), EmulatorConfig::default(), clock).unwrap())
    }

    #[test]
    fn burst_of_pdu_sessions() {
        let clock = Arc::new(VirtualClock::new());
        let target = emulator_target(clock.clone());
        let l = load(ProcedureKind::PduSessionSetup, ArrivalSpec::Burst { count: 200, window_s: 10, offset_s: 0 });
        let sched = build_schedule(&l.arrival, 60, 5).unwrap();
        let before = target.handle().snapshot(VnfKind::UPF).active_contexts;
        let outcomes = inject_control(&target, &l, 0, &sched, 0, clock.as_ref()).unwrap();
        assert_eq!(outcomes.len(), 200);
        assert!(outcomes.iter().all(|o| o.status == OutcomeStatus::Success));
        assert_eq!(target.handle().snapshot(VnfKind::UPF).active_contexts - before, 200);
        assert!(outcomes.windows(2).all(|w| w[0].t_start_ms <= w[1].t_start_ms));
    }

    #[test]
    fn empty_schedule() {
        let clock = Arc::new(VirtualClock::new());
        let target = emulator_target(clock.clone());
        let l = load(ProcedureKind::Registration, ArrivalSpec::Sequential { gap_ms: 10 });
        let out = inject_control(&target, &l, 0, &EventSchedule::default(), 0, clock.as_ref()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn round_robin_subscribers() {
        let clock = Arc::new(VirtualClock::new());
        let target = emulator_target(clock.clone());
        let mut l = load(ProcedureKind::Registration, ArrivalSpec::Sequential { gap_ms: 100 });
        l.ue_count = 3;
        let sched = build_schedule(&l.arrival, 1, 0).unwrap().truncated(6);
        let out = inject_control(&target, &l, 0, &sched, 0, clock.as_ref()).unwrap();
        let supis: Vec<&str> = out.iter().map(|o| o.supi.as_str()).collect();
        let s: Vec<String> = (0..3).map(|k| supi_for(0, k)).collect();
        assert_eq!(supis, [&s[0], &s[1], &s[2], &s[0], &s[1], &s[2]].map(|x| x.as_str()));
    }

    struct SilentTarget;

    impl ControlTarget for SilentTarget {
        fn send(&self, _: SbiMessage, timeout: Duration) -> Result<SbiResponse, TargetError> {
            Err(TargetError::Timeout(timeout.as_millis() as u64))
        }
    }

    #[test]
    fn timeouts_mark_both_ends() {
        let clock = VirtualClock::new();
        let l = load(ProcedureKind::Authentication, ArrivalSpec::Sequential { gap_ms: 1000 });
        let sched = build_schedule(&l.arrival, 3, 0).unwrap();
        let out = inject_control(&SilentTarget, &l, 0, &sched, 0, &clock).unwrap();
        assert!(out.iter().all(|o| o.status == OutcomeStatus::Timeout && o.t_end_ms == o.t_start_ms + 5000));
        let marks = emit_event_marks(&out);
        assert_eq!(marks.len(), 6);
        assert!(marks.iter().all(|m| m.status == "Timeout"));
        assert!(marks.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
    }

    struct DeadTarget;

    impl ControlTarget for DeadTarget {
        fn send(&self, _: SbiMessage, _: Duration) -> Result<SbiResponse, TargetError> {
            Err(TargetError::Unreachable("connection refused".into()))
        }
    }

    #[test]
    fn unreachable_target_aborts_with_full_outcome_list() {
        let clock = VirtualClock::new();
        let l = load(ProcedureKind::Registration, ArrivalSpec::Sequential { gap_ms: 100 });
        let sched = build_schedule(&l.arrival, 1, 0).unwrap();
        match inject_control(&DeadTarget, &l, 0, &sched, 0, &clock) {
            Err(CpliError::TargetUnreachable { outcomes, .. }) => {
                assert_eq!(outcomes.len(), 10);
                assert!(outcomes[0].was_sent());
                assert!(outcomes[1..].iter().all(|o| !o.was_sent()));
            }
            other => panic!("{other:?}"),
        }
        let wall = WallClock::new();
        match inject_control(&DeadTarget, &l, 0, &sched, 0, &wall) {
            Err(CpliError::TargetUnreachable { outcomes, .. }) => assert_eq!(outcomes.len(), 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stubbed_entry_advances_only_itself() {
        let clock = Arc::new(VirtualClock::new());
        let target = emulator_target(clock.clone());
        let emu = target.handle().clone();
        let mut l = load(ProcedureKind::AuthVectorGeneration, ArrivalSpec::Sequential { gap_ms: 100 });
        l.target_vnf = Some(VnfKind::UDM);
        emu.set_stubbed(VnfKind::UDM, true);
        let before: Vec<u64> = VnfKind::ALL.iter().map(|v| emu.snapshot(*v).cpu_time_ns).collect();
        let sched = build_schedule(&l.arrival, 1, 0).unwrap();
        inject_control(&target, &l, 0, &sched, 0, clock.as_ref()).unwrap();
        for (i, v) in VnfKind::ALL.iter().enumerate() {
            let delta = emu.snapshot(*v).cpu_time_ns - before[i];
            assert_eq!(delta > 0, *v == VnfKind::UDM, "{v}");
        }
    }

    #[test]
    fn wall_clock_pool_matches_inline_count() {
        let clock = Arc::new(WallClock::new());
        let emu = start_emulator(ResourceCostModel::builtin(), EmulatorConfig::default(), clock.clone()).unwrap();
        let target = EmulatorTarget::new(emu);
        let l = load(ProcedureKind::Registration, ArrivalSpec::Random { rate_per_s: 500.0, process: crate::scenario::RandomProcess::Uniform });
        let sched = build_schedule(&l.arrival, 1, 2).unwrap();
        let out = inject_control(&target, &l, 0, &sched, 0, clock.as_ref()).unwrap();
        assert_eq!(out.len(), 500);
        assert!(out.iter().all(|o| o.status == OutcomeStatus::Success));
    }

    #[test]
    fn status_text_round_trip() {
        for s in [OutcomeStatus::Success, OutcomeStatus::Timeout, OutcomeStatus::Failure { reason: "x (y)".into() }] {
            assert_eq!(s.to_string().parse::<OutcomeStatus>().unwrap(), s);
        }
    }
}
