//! User-plane load injector.
//!
//! Sessions are planned by sampling each one's service from a mix, expanded
//! into packet streams (synthetic flows or replayed byte profiles), merged by
//! timestamp and pushed through the UPF.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arrival::EventSchedule;
use crate::clock::Clock;
use crate::dataset::{ServiceMix, ServiceTraceProfile};
use crate::emulator::{Direction, Packet};
use crate::rng::Stream;
use crate::scenario::{FlowSpec, GapDist, SizeDist};
use crate::target::{TargetError, UserPlaneTarget};

#[derive(Debug, Clone, PartialEq)]
pub enum SessionSource {
    Synthetic(FlowSpec),
    Trace(Arc<ServiceTraceProfile>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub supi: String,
    pub service: String,
    pub source: SessionSource,
    pub start_ms: u64,
    pub duration_ms: u64,
    /// MTU used when packetizing trace bins.
    pub mtu_bytes: u32,
}

impl SessionPlan {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }

    /// Key of this session's UPF context.
    pub fn session_key(&self) -> String {
        format!("{}/up", self.supi)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum UpliError {
    #[error("service `{0}` has no flow source")]
    MissingSource(String),
    #[error("schedule has {schedule} events for {count} sessions")]
    ScheduleLength { schedule: usize, count: usize },
}

pub fn session_supi(i: usize) -> String {
    format!("imsi-up{:08}", i + 1)
}

/// One plan per schedule event; each session's service is drawn from `mix`.
pub fn plan_sessions(
    count: usize,
    mix: &ServiceMix,
    sources: &BTreeMap<String, SessionSource>,
    schedule: &EventSchedule,
    session_duration_ms: u64,
    mtu_bytes: u32,
    seed: u64,
) -> Result<Vec<SessionPlan>, UpliError> {
    if schedule.len() != count {
        return Err(UpliError::ScheduleLength { schedule: schedule.len(), count });
    }
    if let Some(missing) = mix.services().find(|s| !sources.contains_key(*s)) {
        return Err(UpliError::MissingSource(missing.to_string()));
    }
    let mut rng = Stream::new(seed);
    Ok(schedule
        .events()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let service = mix.pick(rng.unit()).to_string();
            SessionPlan {
                supi: session_supi(i),
                source: sources[&service].clone(),
                service,
                start_ms: e.t_ms,
                duration_ms: session_duration_ms,
                mtu_bytes,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedPacket {
    pub t_ms: u64,
    pub size_bytes: u32,
    pub direction: Direction,
}

impl TimedPacket {
    pub fn packet(&self) -> Packet {
        Packet { size_bytes: self.size_bytes, direction: self.direction }
    }
}

/// Lazy, time-ordered packets of one session, in absolute time.
pub struct PacketStream {
    start_ms: u64,
    end_ms: u64,
    kind: StreamKind,
}

enum StreamKind {
    Synthetic { spec: FlowSpec, rng: Stream, next_ms: f64, flow_end_ms: u64 },
    Trace { profile: Arc<ServiceTraceProfile>, mtu: u32, bin: u64, pending: std::vec::IntoIter<TimedPacket> },
}

/// `bytes` split into `ceil(bytes / mtu)` packets spaced evenly over a bin;
/// the last carries the remainder.
pub fn packetize(bytes: u64, mtu: u32, bin_start_ms: u64, bin_ms: u64, direction: Direction) -> Vec<TimedPacket> {
    let mtu = mtu as u64;
    let n = bytes.div_ceil(mtu);
    (0..n)
        .map(|i| TimedPacket {
            t_ms: bin_start_ms + i * bin_ms / n,
            size_bytes: if i + 1 == n { (bytes - (n - 1) * mtu) as u32 } else { mtu as u32 },
            direction,
        })
        .collect()
}

impl PacketStream {
    pub fn new(plan: &SessionPlan, seed: u64) -> Self {
        let kind = match &plan.source {
            SessionSource::Synthetic(spec) => StreamKind::Synthetic {
                spec: spec.clone(),
                rng: Stream::new(seed),
                next_ms: 0.0,
                flow_end_ms: spec.duration_s * 1000,
            },
            SessionSource::Trace(profile) => StreamKind::Trace {
                profile: profile.clone(),
                mtu: plan.mtu_bytes,
                bin: 0,
                pending: Vec::new().into_iter(),
            },
        };
        PacketStream { start_ms: plan.start_ms, end_ms: plan.end_ms(), kind }
    }
}

impl Iterator for PacketStream {
    type Item = TimedPacket;

    fn next(&mut self) -> Option<TimedPacket> {
        let span = self.end_ms - self.start_ms;
        match &mut self.kind {
            StreamKind::Synthetic { spec, rng, next_ms, flow_end_ms } => {
                let offset = *next_ms as u64;
                if offset >= span.min(*flow_end_ms) {
                    return None;
                }
                let size_bytes = match spec.packet_size_bytes {
                    SizeDist::Constant(s) => s,
                    SizeDist::Uniform { min, max } => min + rng.below((max - min) as u64 + 1) as u32,
                };
                let direction = if rng.unit() < spec.direction_ratio { Direction::Downlink } else { Direction::Uplink };
                *next_ms += match spec.inter_arrival_ms {
                    GapDist::Constant(g) => g,
                    GapDist::Exponential { mean_ms } => rng.exponential(mean_ms),
                };
                Some(TimedPacket { t_ms: self.start_ms + offset, size_bytes, direction })
            }
            StreamKind::Trace { profile, mtu, bin, pending } => loop {
                if let Some(p) = pending.next() {
                    if p.t_ms >= self.end_ms {
                        return None;
                    }
                    return Some(p);
                }
                let bin_ms = profile.bin_s * 1000;
                let bin_start = *bin * bin_ms;
                if bin_start >= span {
                    return None;
                }
                // Profiles shorter than the session repeat.
                let k = (*bin % profile.bins() as u64) as usize;
                let at = self.start_ms + bin_start;
                let mut packets = packetize(profile.uplink_bytes[k], *mtu, at, bin_ms, Direction::Uplink);
                packets.extend(packetize(profile.downlink_bytes[k], *mtu, at, bin_ms, Direction::Downlink));
                packets.sort_by_key(|p| p.t_ms);
                *pending = packets.into_iter();
                *bin += 1;
            },
        }
    }
}

/// Every packet of a plan, materialized.
pub fn generate_packets(plan: &SessionPlan, seed: u64) -> Vec<TimedPacket> {
    PacketStream::new(plan, seed).collect()
}

/// Seed of session `i`'s packet stream.
pub fn session_seed(seed: u64, i: usize) -> u64 {
    crate::rng::derive_seed(seed, crate::rng::tag::SESSION_PACKETS + i as u64)
}

/// Timestamp-ordered merge of all session streams. Equal timestamps go in
/// session order.
pub struct PacketMux {
    streams: Vec<PacketStream>,
    heads: BinaryHeap<Reverse<(u64, usize)>>,
    buffered: Vec<Option<TimedPacket>>,
    horizon_ms: u64,
}

impl PacketMux {
    /// Streams are cut at `horizon_ms` (exclusive).
    pub fn new(plans: &[SessionPlan], seed: u64, horizon_ms: u64) -> Self {
        let mut streams: Vec<PacketStream> =
            plans.iter().enumerate().map(|(i, p)| PacketStream::new(p, session_seed(seed, i))).collect();
        let mut heads = BinaryHeap::new();
        let mut buffered = Vec::with_capacity(streams.len());
        for (i, s) in streams.iter_mut().enumerate() {
            let first = s.next().filter(|p| p.t_ms < horizon_ms);
            if let Some(p) = first {
                heads.push(Reverse((p.t_ms, i)));
            }
            buffered.push(first);
        }
        PacketMux { streams, heads, buffered, horizon_ms }
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heads.peek().map(|Reverse((t, _))| *t)
    }

    /// Next `(session index, packet)`.
    pub fn pop(&mut self) -> Option<(usize, TimedPacket)> {
        let Reverse((_, i)) = self.heads.pop()?;
        let packet = self.buffered[i].take().expect("head is buffered");
        let next = self.streams[i].next().filter(|p| p.t_ms < self.horizon_ms);
        if let Some(p) = next {
            self.heads.push(Reverse((p.t_ms, i)));
        }
        self.buffered[i] = next;
        Some((i, packet))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPlaneRow {
    pub t_s: u64,
    pub active_sessions: u64,
    pub service: String,
    pub pkts: u64,
    pub bytes_ul: u64,
    pub bytes_dl: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserPlaneStats {
    /// One row per second per service; `active_sessions` counts that
    /// service's sessions live at the start of the second.
    pub rows: Vec<UserPlaneRow>,
    pub packets: u64,
    pub bytes_ul: u64,
    pub bytes_dl: u64,
    /// Packets refused because their session was unknown to the UPF.
    pub no_session: u64,
}

impl UserPlaneStats {
    /// Sessions live at each second, summed over services.
    pub fn active_curve(&self) -> Vec<(u64, u64)> {
        let mut curve: BTreeMap<u64, u64> = BTreeMap::new();
        for r in &self.rows {
            *curve.entry(r.t_s).or_default() += r.active_sessions;
        }
        curve.into_iter().collect()
    }

    pub fn peak_active(&self) -> u64 {
        self.active_curve().into_iter().map(|(_, n)| n).max().unwrap_or(0)
    }

    /// CSV `t_s,active_sessions,service,pkts,bytes_ul,bytes_dl`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(["t_s", "active_sessions", "service", "pkts", "bytes_ul", "bytes_dl"])?;
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Accumulates per-second statistics while packets are delivered.
pub struct UserPlaneDriver {
    mux: PacketMux,
    plans_service: Vec<usize>,
    services: Vec<String>,
    keys: Vec<String>,
    per_second: HashMap<(u64, usize), (u64, u64, u64)>,
    active_delta: Vec<BTreeMap<u64, i64>>,
    horizon_s: u64,
    stats: UserPlaneStats,
}

impl UserPlaneDriver {
    pub fn new(plans: &[SessionPlan], seed: u64, horizon_ms: u64) -> Self {
        let mut services: Vec<String> = plans.iter().map(|p| p.service.clone()).collect();
        services.sort();
        services.dedup();
        let index: HashMap<&str, usize> = services.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let plans_service: Vec<usize> = plans.iter().map(|p| index[p.service.as_str()]).collect();
        let mut active_delta = vec![BTreeMap::new(); services.len()];
        for (p, &s) in plans.iter().zip(&plans_service) {
            let first = p.start_ms.div_ceil(1000);
            let last = p.end_ms().min(horizon_ms).div_ceil(1000);
            if first < last {
                *active_delta[s].entry(first).or_insert(0) += 1;
                *active_delta[s].entry(last).or_insert(0) -= 1;
            }
        }
        UserPlaneDriver {
            mux: PacketMux::new(plans, seed, horizon_ms),
            plans_service,
            keys: plans.iter().map(SessionPlan::session_key).collect(),
            services,
            per_second: HashMap::new(),
            active_delta,
            horizon_s: horizon_ms.div_ceil(1000),
            stats: UserPlaneStats::default(),
        }
    }

    pub fn next_time(&self) -> Option<u64> {
        self.mux.peek_time()
    }

    /// Deliver the next packet. Unknown sessions are counted; any other
    /// target error is returned.
    pub fn deliver_next(&mut self, target: &dyn UserPlaneTarget) -> Result<Option<u64>, TargetError> {
        let Some((i, p)) = self.mux.pop() else {
            return Ok(None);
        };
        match target.ingest(&self.keys[i], p.packet()) {
            Ok(()) => {}
            Err(TargetError::NoSuchSession(_)) => {
                self.stats.no_session += 1;
                return Ok(Some(p.t_ms));
            }
            Err(e) => return Err(e),
        }
        let cell = self.per_second.entry((p.t_ms / 1000, self.plans_service[i])).or_default();
        cell.0 += 1;
        self.stats.packets += 1;
        match p.direction {
            Direction::Uplink => {
                cell.1 += p.size_bytes as u64;
                self.stats.bytes_ul += p.size_bytes as u64;
            }
            Direction::Downlink => {
                cell.2 += p.size_bytes as u64;
                self.stats.bytes_dl += p.size_bytes as u64;
            }
        }
        Ok(Some(p.t_ms))
    }

    pub fn finish(mut self) -> UserPlaneStats {
        if self.services.is_empty() {
            return self.stats;
        }
        let mut rows = Vec::with_capacity(self.horizon_s as usize * self.services.len());
        let mut live = vec![0i64; self.services.len()];
        for t_s in 0..self.horizon_s {
            for (s, service) in self.services.iter().enumerate() {
                live[s] += self.active_delta[s].get(&t_s).copied().unwrap_or(0);
                let (pkts, bytes_ul, bytes_dl) = self.per_second.get(&(t_s, s)).copied().unwrap_or_default();
                rows.push(UserPlaneRow {
                    t_s,
                    active_sessions: live[s] as u64,
                    service: service.clone(),
                    pkts,
                    bytes_ul,
                    bytes_dl,
                });
            }
        }
        self.stats.rows = rows;
        self.stats
    }
}

/// Deliver every packet of `plans` at its time on `clock`, stopping at
/// `horizon_ms`.
pub fn drive_userplane(
    target: &dyn UserPlaneTarget,
    plans: &[SessionPlan],
    clock: &dyn Clock,
    seed: u64,
    horizon_ms: u64,
) -> Result<UserPlaneStats, TargetError> {
    let mut driver = UserPlaneDriver::new(plans, seed, horizon_ms);
    while let Some(t) = driver.next_time() {
        clock.sleep_until(t);
        driver.deliver_next(target)?;
    }
    Ok(driver.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;

    fn synthetic(size: u32, gap: f64, duration_s: u64) -> FlowSpec {
        FlowSpec {
            packet_size_bytes: SizeDist::Constant(size),
            inter_arrival_ms: GapDist::Constant(gap),
            duration_s,
            direction_ratio: 0.5,
        }
    }

    fn plan(source: SessionSource, start_ms: u64, duration_ms: u64) -> SessionPlan {
        SessionPlan { supi: "imsi-up1".into(), service: "svc".into(), source, start_ms, duration_ms, mtu_bytes: 1500 }
    }

    fn profile(up: Vec<u64>, down: Vec<u64>) -> Arc<ServiceTraceProfile> {
        Arc::new(ServiceTraceProfile { service: "svc".into(), bin_s: 1, uplink_bytes: up, downlink_bytes: down })
    }

    #[test]
    fn ceiling_packetization() {
        let p = packetize(4500, 1500, 0, 1000, Direction::Downlink);
        assert_eq!(p.iter().map(|p| p.size_bytes).collect::<Vec<_>>(), vec![1500, 1500, 1500]);
        assert_eq!(p.iter().map(|p| p.t_ms).collect::<Vec<_>>(), vec![0, 333, 666]);
        assert!(packetize(0, 1500, 0, 1000, Direction::Uplink).is_empty());
        let odd = packetize(3001, 1500, 0, 1000, Direction::Uplink);
        assert_eq!(odd.iter().map(|p| p.size_bytes).collect::<Vec<_>>(), vec![1500, 1500, 1]);
    }

    #[test]
    fn synthetic_constant_flow() {
        let pkts = generate_packets(&plan(SessionSource::Synthetic(synthetic(1000, 100.0, 1)), 0, 60_000), 1);
        assert_eq!(pkts.len(), 10);
        assert!(pkts.iter().all(|p| p.size_bytes == 1000));
    }

    #[test]
    fn trace_bytes_are_conserved_and_cycled() {
        let prof = profile(vec![100, 0, 3001], vec![4500, 7, 0]);
        let pkts = generate_packets(&plan(SessionSource::Trace(prof), 2000, 6000), 0);
        let up: u64 = pkts.iter().filter(|p| p.direction == Direction::Uplink).map(|p| p.size_bytes as u64).sum();
        let down: u64 = pkts.iter().filter(|p| p.direction == Direction::Downlink).map(|p| p.size_bytes as u64).sum();
        assert_eq!(up, 2 * 3101);
        assert_eq!(down, 2 * 4507);
        assert!(pkts.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
        assert!(pkts.iter().all(|p| (2000..8000).contains(&p.t_ms)));
    }

    #[test]
    fn single_service_mix() {
        let mix = ServiceMix { entries: BTreeMap::from([("A".to_string(), 1.0)]) };
        let sources = BTreeMap::from([("A".to_string(), SessionSource::Synthetic(synthetic(100, 10.0, 1)))]);
        let sched = EventSchedule::from_times(vec![0, 5, 9]);
        let plans = plan_sessions(3, &mix, &sources, &sched, 1000, 1500, 0).unwrap();
        assert!(plans.iter().all(|p| p.service == "A"));
        let supis: std::collections::HashSet<_> = plans.iter().map(|p| p.supi.clone()).collect();
        assert_eq!(supis.len(), 3);
        let missing = ServiceMix { entries: BTreeMap::from([("B".to_string(), 1.0)]) };
        assert!(matches!(plan_sessions(3, &missing, &sources, &sched, 1000, 1500, 0), Err(UpliError::MissingSource(_))));
    }

    #[test]
    fn mux_orders_across_sessions() {
        let plans = vec![
            plan(SessionSource::Synthetic(synthetic(10, 300.0, 1)), 0, 1000),
            plan(SessionSource::Synthetic(synthetic(10, 250.0, 1)), 100, 1000),
        ];
        let mut mux = PacketMux::new(&plans, 0, u64::MAX);
        let mut times = Vec::new();
        while let Some((_, p)) = mux.pop() {
            times.push(p.t_ms);
        }
        assert_eq!(times, vec![0, 100, 300, 350, 600, 600, 850, 900]);
    }

    struct Sink(std::sync::Mutex<u64>);

    impl UserPlaneTarget for Sink {
        fn ingest(&self, key: &str, p: Packet) -> Result<(), TargetError> {
            if key.starts_with("imsi-up2") {
                return Err(TargetError::NoSuchSession(key.into()));
            }
            *self.0.lock().unwrap() += p.size_bytes as u64;
            Ok(())
        }
    }

    #[test]
    fn stats_count_rows_and_missing_sessions() {
        let clock = VirtualClock::new();
        let mut plans = vec![plan(SessionSource::Synthetic(synthetic(10, 500.0, 10)), 0, 3000)];
        let mut second = plans[0].clone();
        second.supi = "imsi-up2".into();
        plans.push(second);
        let sink = Sink(Default::default());
        let stats = drive_userplane(&sink, &plans, &clock, 0, 5000).unwrap();
        assert_eq!(stats.packets, 6);
        assert_eq!(stats.no_session, 6);
        assert_eq!(stats.rows.len(), 5);
        assert_eq!(stats.active_curve(), vec![(0, 2), (1, 2), (2, 2), (3, 0), (4, 0)]);
        assert_eq!(*sink.0.lock().unwrap(), 60);
        assert!(drive_userplane(&sink, &[], &clock, 0, 5000).unwrap().rows.is_empty());
    }
}
