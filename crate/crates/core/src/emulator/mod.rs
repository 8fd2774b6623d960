//! Desk-scale service-based core.
//!
//! Eight network functions (AMF, SMF, AUSF, UDM, UDR, NRF, UPF, DN) exchange
//! SBI messages over a pluggable transport. Each function keeps its own state
//! behind its own lock, so handling is serialized per function while chains
//! spanning several functions proceed concurrently. CPU is accounted as
//! modeled time from a [`ResourceCostModel`], never host cycles, which keeps
//! every counter deterministic for a given message sequence.
//!
//! Chains (`[D]` marks an NRF discovery issued only when the requester has no
//! live cache entry for the wanted function):
//!
//! | procedure        | messages                                                                                   |
//! |------------------|--------------------------------------------------------------------------------------------|
//! | Registration     | Inj→AMF REGISTRATION_REQUEST; [D] AMF→AUSF UE_AUTHENTICATE; [D] AUSF→UDM GENERATE_AUTH_VECTOR; [D] UDM→UDR QUERY_AUTH_SUBSCRIPTION; [D] AMF→UDM REGISTER_UE_CONTEXT; UDM→UDR STORE_UE_CONTEXT |
//! | PduSessionSetup  | Inj→AMF PDU_SESSION_REQUEST; [D] AMF→SMF CREATE_SM_CONTEXT; [D] SMF→UDM GET_SM_SUBSCRIPTION; [D] UDM→UDR QUERY_SM_DATA; [D] SMF→UPF N4_SESSION_ESTABLISH |
//! | Authentication   | Inj→AUSF UE_AUTHENTICATE and the AUSF-rooted suffix of Registration                       |
//! | AuthVectorGen.   | Inj→UDM GENERATE_AUTH_VECTOR; [D] UDM→UDR QUERY_AUTH_SUBSCRIPTION                          |
//! | SubscriptionData | Inj→UDR QUERY_SUBSCRIPTION_DATA; Inj→UDR UPDATE_SUBSCRIPTION_DATA                         |
//! | NrfDiscovery     | Inj→NRF DISCOVER                                                                           |
//!
//! Contexts retained: AMF `ue_context` (per SUPI) and `pdu_session`, SMF
//! `sm_context`, AUSF `auth_context`, UDM `amf_registration`, UDR
//! `ue_context_record` and `subscription_profile`, UPF `pdu_session`.

pub mod cost;
pub mod frame;
pub mod sbi;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::net::{CallError, ConnPool, FrameServer};
pub use cost::{CostModelError, ResourceCostModel};
use cost::CostTable;
pub use sbi::{Body, Origin, ProcedureKind, SbiMessage, SbiResponse, SbiStatus, ServiceOp, VnfKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportKind {
    InProcess,
    TcpLoopback,
}

#[derive(Debug, Clone)]
pub struct EmulatorConfig {
    pub transport: TransportKind,
    pub heartbeat_period_ms: u64,
    pub discovery_ttl_ms: u64,
    pub hop_timeout_ms: u64,
    /// First TCP port; function `k` listens on `base + k`. Zero picks
    /// ephemeral ports.
    pub tcp_base_port: u16,
    /// Burn real CPU for the modeled time of every step. Demo only.
    pub busy_spin: bool,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorConfig {
            transport: TransportKind::InProcess,
            heartbeat_period_ms: 10_000,
            discovery_ttl_ms: 60_000,
            hop_timeout_ms: 2_000,
            tcp_base_port: 0,
            busy_spin: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmulatorError {
    #[error("address in use: {0}")]
    AddressInUse(String),
    #[error("{vnf} does not serve {op}")]
    UnknownServiceOp { vnf: VnfKind, op: ServiceOp },
    #[error("upstream {target} did not answer within {timeout_ms} ms")]
    UpstreamTimeout { target: VnfKind, timeout_ms: u64 },
    #[error("{0} is not registered with the NRF")]
    NotRegistered(VnfKind),
    #[error("no UPF session `{0}`")]
    NoSuchSession(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub size_bytes: u32,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardResult {
    pub cpu_ns: u64,
}

/// Point-in-time counters of one function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSnapshot {
    pub vnf: VnfKind,
    /// Cumulative modeled CPU in nanoseconds.
    pub cpu_time_ns: u64,
    pub mem_bytes: u64,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    pub active_contexts: u64,
    pub taken_at_ms: u64,
}

impl ResourceSnapshot {
    pub fn cpu_time_us(&self) -> f64 {
        self.cpu_time_ns as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapEntry {
    pub seq: u64,
    pub t_ms: u64,
    pub origin: Origin,
    pub target: VnfKind,
    pub service_op: ServiceOp,
    pub request_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionStats {
    pub packets: u64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

#[derive(Debug, Clone)]
struct Context {
    bytes: u64,
    stats: SessionStats,
}

#[derive(Debug, Clone)]
struct RegistryEntry {
    endpoint: String,
    last_heartbeat_ms: u64,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    endpoint: String,
    expires_ms: u64,
}

#[derive(Debug, Default)]
struct VnfState {
    contexts: HashMap<String, Context>,
    context_bytes: u64,
    registry: BTreeMap<VnfKind, RegistryEntry>,
    discovery_cache: BTreeMap<VnfKind, CacheEntry>,
    cpu_ns: u64,
    rx_bytes: u64,
    tx_bytes: u64,
    registered: bool,
    last_heartbeat_sent_ms: u64,
}

impl VnfState {
    fn store(&mut self, key: String, bytes: u64) {
        let ctx = Context { bytes, stats: SessionStats::default() };
        if let Some(old) = self.contexts.insert(key, ctx) {
            self.context_bytes -= old.bytes;
        }
        self.context_bytes += bytes;
    }

    fn remove(&mut self, key: &str) -> bool {
        match self.contexts.remove(key) {
            Some(old) => {
                self.context_bytes -= old.bytes;
                true
            }
            None => false,
        }
    }
}

enum Fabric {
    InProcess,
    Tcp { endpoints: OnceLock<[String; 8]>, pool: ConnPool, servers: Mutex<Vec<FrameServer>> },
}

/// The running core. Shared through [`EmulatorHandle`].
pub struct Emulator {
    config: EmulatorConfig,
    costs: CostTable,
    clock: Arc<dyn Clock>,
    states: [Mutex<VnfState>; 8],
    stubbed: [AtomicBool; 8],
    fabric: Fabric,
    tap: Mutex<Vec<TapEntry>>,
    tap_seq: AtomicU64,
    misc_ids: AtomicU64,
}

#[derive(Clone)]
pub struct EmulatorHandle {
    inner: Arc<Emulator>,
}

impl std::fmt::Debug for EmulatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmulatorHandle").field("transport", &self.inner.config.transport).finish()
    }
}

/// Bring up all eight functions, register every non-NRF function with the NRF
/// and arm heartbeat timers at the current clock time.
pub fn start_emulator(
    cost_model: ResourceCostModel,
    config: EmulatorConfig,
    clock: Arc<dyn Clock>,
) -> Result<EmulatorHandle, EmulatorError> {
    let fabric = match config.transport {
        TransportKind::InProcess => Fabric::InProcess,
        TransportKind::TcpLoopback => Fabric::Tcp {
            endpoints: OnceLock::new(),
            pool: ConnPool::new(),
            servers: Mutex::new(Vec::new()),
        },
    };
    let inner = Arc::new(Emulator {
        config,
        costs: CostTable::new(cost_model),
        clock,
        states: Default::default(),
        stubbed: Default::default(),
        fabric,
        tap: Mutex::new(Vec::new()),
        tap_seq: AtomicU64::new(0),
        misc_ids: AtomicU64::new(0),
    });
    if let Fabric::Tcp { endpoints, servers, .. } = &inner.fabric {
        let mut bound = Vec::with_capacity(8);
        let mut addrs: [String; 8] = Default::default();
        for vnf in VnfKind::ALL {
            let base = inner.config.tcp_base_port;
            let port = if base == 0 { 0 } else { base + vnf.index() as u16 };
            let addr = format!("127.0.0.1:{port}");
            let weak: Weak<Emulator> = Arc::downgrade(&inner);
            let server = FrameServer::bind(&addr, move |msg: SbiMessage| {
                let emu = weak.upgrade()?;
                Some(emu.answer(vnf, msg))
            })
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AddrInUse => EmulatorError::AddressInUse(addr.clone()),
                _ => EmulatorError::Io(e),
            })?;
            addrs[vnf.index()] = server.local_addr().to_string();
            bound.push(server);
        }
        *servers.lock().unwrap() = bound;
        let _ = endpoints.set(addrs);
    }
    let now = inner.clock.now_ms();
    for vnf in VnfKind::ALL.into_iter().filter(|k| *k != VnfKind::NRF) {
        inner.register(vnf, now)?;
    }
    Ok(EmulatorHandle { inner })
}

impl EmulatorHandle {
    pub fn emulator(&self) -> &Emulator {
        &self.inner
    }

    pub fn transport(&self) -> TransportKind {
        self.inner.config.transport
    }

    pub fn endpoint(&self, vnf: VnfKind) -> String {
        self.inner.endpoint(vnf)
    }

    pub fn cost_model(&self) -> &ResourceCostModel {
        &self.inner.costs.model
    }

    pub fn config(&self) -> &EmulatorConfig {
        &self.inner.config
    }

    pub fn handle_sbi(&self, vnf: VnfKind, msg: SbiMessage) -> Result<SbiResponse, EmulatorError> {
        self.inner.handle_sbi(vnf, msg)
    }

    pub fn nrf_discover(&self, requester: VnfKind, wanted: VnfKind) -> Result<String, EmulatorError> {
        let id = format!("disc-{}", self.inner.misc_ids.fetch_add(1, Ordering::Relaxed));
        let mut seq = 0;
        self.inner.resolve(requester, wanted, &id, None, &mut seq)
    }

    pub fn heartbeat_tick(&self, now_ms: u64) -> usize {
        self.inner.heartbeat_tick(now_ms)
    }

    pub fn deregister(&self, vnf: VnfKind) -> Result<(), EmulatorError> {
        self.inner.deregister(vnf)
    }

    pub fn upf_ingest(&self, session_key: &str, packet: Packet) -> Result<ForwardResult, EmulatorError> {
        self.inner.upf_ingest(session_key, packet)
    }

    /// Install a UPF session directly, bypassing signaling.
    pub fn establish_upf_session(&self, session_key: &str) {
        let bytes = self.inner.costs.model.context_bytes(VnfKind::UPF, "pdu_session");
        self.inner.lock(VnfKind::UPF).store(session_key.to_string(), bytes);
    }

    pub fn release_upf_session(&self, session_key: &str) -> bool {
        self.inner.lock(VnfKind::UPF).remove(session_key)
    }

    pub fn session_stats(&self, session_key: &str) -> Option<SessionStats> {
        self.inner.lock(VnfKind::UPF).contexts.get(session_key).map(|c| c.stats)
    }

    pub fn set_stubbed(&self, vnf: VnfKind, stubbed: bool) {
        self.inner.stubbed[vnf.index()].store(stubbed, Ordering::SeqCst);
    }

    pub fn snapshot(&self, vnf: VnfKind) -> ResourceSnapshot {
        self.inner.snapshot(vnf)
    }

    pub fn has_context(&self, vnf: VnfKind, key: &str) -> bool {
        self.inner.lock(vnf).contexts.contains_key(key)
    }

    pub fn tap(&self) -> Vec<TapEntry> {
        self.inner.tap.lock().unwrap().clone()
    }

    pub fn tap_len(&self) -> usize {
        self.inner.tap.lock().unwrap().len()
    }

    /// CSV `seq,t_ms,origin,target,service_op,request_id`.
    pub fn export_tap_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for e in self.inner.tap.lock().unwrap().iter() {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Stop TCP listeners. In-process emulators need no shutdown.
    pub fn shutdown(&self) {
        if let Fabric::Tcp { servers, .. } = &self.inner.fabric {
            for s in servers.lock().unwrap().iter_mut() {
                s.stop();
            }
        }
    }
}

impl Emulator {
    fn lock(&self, vnf: VnfKind) -> MutexGuard<'_, VnfState> {
        self.states[vnf.index()].lock().unwrap()
    }

    fn endpoint(&self, vnf: VnfKind) -> String {
        match &self.fabric {
            Fabric::InProcess => format!("inproc://{}", vnf.as_str().to_ascii_lowercase()),
            Fabric::Tcp { endpoints, .. } => endpoints.get().map(|e| e[vnf.index()].clone()).unwrap_or_default(),
        }
    }

    fn is_stubbed(&self, vnf: VnfKind) -> bool {
        self.stubbed[vnf.index()].load(Ordering::SeqCst)
    }

    fn charge(&self, vnf: VnfKind, cpu_ns: u64, rx: u64, tx: u64) {
        {
            let mut st = self.lock(vnf);
            st.cpu_ns += cpu_ns;
            st.rx_bytes += rx;
            st.tx_bytes += tx;
        }
        if self.config.busy_spin && cpu_ns > 0 {
            let until = Instant::now() + Duration::from_nanos(cpu_ns);
            while Instant::now() < until {
                std::hint::spin_loop();
            }
        }
    }

    fn record_tap(&self, msg: &SbiMessage) {
        let mut tap = self.tap.lock().unwrap();
        let seq = self.tap_seq.fetch_add(1, Ordering::SeqCst);
        tap.push(TapEntry {
            seq,
            t_ms: self.clock.now_ms(),
            origin: msg.origin,
            target: msg.target,
            service_op: msg.service_op,
            request_id: msg.request_id.clone(),
        });
    }

    /// Wire-side entry point: errors become failure responses.
    fn answer(&self, vnf: VnfKind, msg: SbiMessage) -> SbiResponse {
        let id = msg.request_id.clone();
        if msg.target != vnf {
            return SbiResponse::failure(id, format!("misrouted: {} sent to {vnf}", msg.target));
        }
        match self.handle_sbi(vnf, msg) {
            Ok(resp) => resp,
            Err(e) => SbiResponse::failure(id, e.to_string()),
        }
    }

    pub fn handle_sbi(&self, vnf: VnfKind, msg: SbiMessage) -> Result<SbiResponse, EmulatorError> {
        let op = msg.service_op;
        if !vnf.can_serve(op) {
            return Err(EmulatorError::UnknownServiceOp { vnf, op });
        }
        self.record_tap(&msg);
        self.charge(vnf, self.costs.step_ns(vnf, op), msg.wire_len(), 0);
        let resp = self.dispatch(vnf, &msg)?;
        self.charge(vnf, 0, 0, resp.wire_len());
        Ok(resp)
    }

    fn send(&self, endpoint: &str, msg: SbiMessage) -> Result<SbiResponse, EmulatorError> {
        match &self.fabric {
            Fabric::InProcess => {
                let target = msg.target;
                self.handle_sbi(target, msg)
            }
            Fabric::Tcp { pool, .. } => {
                let target = msg.target;
                let timeout = Duration::from_millis(self.config.hop_timeout_ms);
                pool.call(endpoint, &msg, timeout).map_err(|e| match e {
                    CallError::Timeout(_) => {
                        EmulatorError::UpstreamTimeout { target, timeout_ms: self.config.hop_timeout_ms }
                    }
                    other => EmulatorError::Transport(other.to_string()),
                })
            }
        }
    }

    /// Endpoint of `wanted` as seen by `requester`: cached, or via DISCOVER.
    fn resolve(
        &self,
        requester: VnfKind,
        wanted: VnfKind,
        parent_id: &str,
        supi: Option<&String>,
        seq: &mut u32,
    ) -> Result<String, EmulatorError> {
        let now = self.clock.now_ms();
        if let Some(hit) = self.lock(requester).discovery_cache.get(&wanted) {
            if now < hit.expires_ms {
                return Ok(hit.endpoint.clone());
            }
        }
        *seq += 1;
        let msg = SbiMessage::new(format!("{parent_id}.{seq}"), ServiceOp::Discover, Origin::Vnf(requester), VnfKind::NRF)
            .with_supi(supi.cloned())
            .with("wanted", wanted.as_str());
        self.charge(requester, 0, 0, msg.wire_len());
        let resp = self.send(&self.endpoint(VnfKind::NRF), msg)?;
        self.charge(requester, 0, resp.wire_len(), 0);
        let endpoint = match (resp.status, resp.body.get("endpoint").and_then(|v| v.as_str())) {
            (SbiStatus::Success, Some(ep)) => ep.to_string(),
            _ => return Err(EmulatorError::NotRegistered(wanted)),
        };
        self.lock(requester).discovery_cache.insert(
            wanted,
            CacheEntry { endpoint: endpoint.clone(), expires_ms: now + self.config.discovery_ttl_ms },
        );
        Ok(endpoint)
    }

    /// One inter-function hop on behalf of `parent`. Errors other than a hop
    /// timeout come back as failure responses.
    fn call(
        &self,
        from: VnfKind,
        parent: &SbiMessage,
        seq: &mut u32,
        to: VnfKind,
        op: ServiceOp,
        body: Body,
    ) -> Result<SbiResponse, EmulatorError> {
        if self.is_stubbed(from) {
            return Ok(SbiResponse::success(format!("{}.stub", parent.request_id)).with("stub", true));
        }
        let endpoint = match self.resolve(from, to, &parent.request_id, parent.supi.as_ref(), seq) {
            Ok(ep) => ep,
            Err(e @ EmulatorError::UpstreamTimeout { .. }) => return Err(e),
            Err(e) => return Ok(SbiResponse::failure(parent.request_id.clone(), e.to_string())),
        };
        *seq += 1;
        let mut msg = SbiMessage::new(format!("{}.{seq}", parent.request_id), op, Origin::Vnf(from), to)
            .with_supi(parent.supi.clone());
        msg.body = body;
        self.charge(from, 0, 0, msg.wire_len());
        let resp = match self.send(&endpoint, msg) {
            Ok(r) => r,
            Err(e @ EmulatorError::UpstreamTimeout { .. }) => return Err(e),
            Err(e) => SbiResponse::failure(parent.request_id.clone(), e.to_string()),
        };
        self.charge(from, 0, resp.wire_len(), 0);
        Ok(resp)
    }

    fn store_context(&self, vnf: VnfKind, kind: &str, key: String) {
        let bytes = self.costs.model.context_bytes(vnf, kind);
        self.lock(vnf).store(key, bytes);
    }

    fn dispatch(&self, vnf: VnfKind, msg: &SbiMessage) -> Result<SbiResponse, EmulatorError> {
        use ServiceOp::*;
        let id = msg.request_id.as_str();
        let supi = msg.supi.clone().unwrap_or_else(|| "anonymous".to_string());
        let session_key = || msg.body_str("session_key").map(str::to_string).unwrap_or_else(|| format!("{supi}/{id}"));
        let mut seq = 0u32;
        macro_rules! hop {
            ($to:expr, $op:expr) => {
                hop!($to, $op, Body::new())
            };
            ($to:expr, $op:expr, $body:expr) => {{
                let resp = self.call(vnf, msg, &mut seq, $to, $op, $body)?;
                if !resp.is_success() {
                    let reason = resp.reason.unwrap_or_default();
                    return Ok(SbiResponse::failure(id, format!("{} via {}: {}", $op, $to, reason)));
                }
                resp
            }};
        }
        let session_body = |key: &str| {
            let mut b = Body::new();
            b.insert("session_key".into(), key.into());
            b
        };

        let resp = match (vnf, msg.service_op) {
            (VnfKind::AMF, RegistrationRequest) => {
                hop!(VnfKind::AUSF, UeAuthenticate);
                hop!(VnfKind::UDM, RegisterUeContext);
                self.store_context(vnf, "ue_context", format!("ue:{supi}"));
                SbiResponse::success(id)
            }
            (VnfKind::AMF, PduSessionRequest) => {
                let key = session_key();
                hop!(VnfKind::SMF, CreateSmContext, session_body(&key));
                self.store_context(vnf, "pdu_session", format!("pdu:{key}"));
                SbiResponse::success(id).with("session_key", key)
            }
            (VnfKind::SMF, CreateSmContext) => {
                let key = session_key();
                hop!(VnfKind::UDM, GetSmSubscription);
                hop!(VnfKind::UPF, N4SessionEstablish, session_body(&key));
                self.store_context(vnf, "sm_context", format!("sm:{key}"));
                SbiResponse::success(id).with("session_key", key)
            }
            (VnfKind::AUSF, UeAuthenticate) => {
                let av = hop!(VnfKind::UDM, GenerateAuthVector);
                self.store_context(vnf, "auth_context", format!("auth:{supi}"));
                let token = av.body.get("av").cloned().unwrap_or(serde_json::Value::Null);
                SbiResponse::success(id).with("av", token)
            }
            (VnfKind::UDM, GenerateAuthVector) => {
                hop!(VnfKind::UDR, QueryAuthSubscription);
                SbiResponse::success(id).with("av", format!("av:{supi}:{id}"))
            }
            (VnfKind::UDM, RegisterUeContext) => {
                hop!(VnfKind::UDR, StoreUeContext);
                self.store_context(vnf, "amf_registration", format!("reg:{supi}"));
                SbiResponse::success(id)
            }
            (VnfKind::UDM, GetSmSubscription) => {
                hop!(VnfKind::UDR, QuerySmData);
                SbiResponse::success(id).with("dnn", "internet")
            }
            (VnfKind::UDR, QueryAuthSubscription | QuerySmData | QuerySubscriptionData) => SbiResponse::success(id),
            (VnfKind::UDR, StoreUeContext) => {
                self.store_context(vnf, "ue_context_record", format!("uectx:{supi}"));
                SbiResponse::success(id)
            }
            (VnfKind::UDR, UpdateSubscriptionData) => {
                self.store_context(vnf, "subscription_profile", format!("sub:{supi}"));
                SbiResponse::success(id)
            }
            (VnfKind::UPF, N4SessionEstablish) => {
                let key = session_key();
                self.store_context(vnf, "pdu_session", key.clone());
                SbiResponse::success(id).with("session_key", key)
            }
            (VnfKind::UPF, N4SessionRelease) => {
                let key = session_key();
                if self.lock(vnf).remove(&key) {
                    SbiResponse::success(id)
                } else {
                    SbiResponse::failure(id, format!("no UPF session `{key}`"))
                }
            }
            (VnfKind::NRF, NfRegister) => {
                let Some(nf) = msg.body_str("nf").and_then(|s| s.parse::<VnfKind>().ok()) else {
                    return Ok(SbiResponse::failure(id, "NF_REGISTER without nf"));
                };
                let endpoint = msg.body_str("endpoint").unwrap_or_default().to_string();
                let now = self.clock.now_ms();
                self.lock(vnf).registry.insert(nf, RegistryEntry { endpoint, last_heartbeat_ms: now });
                SbiResponse::success(id)
            }
            (VnfKind::NRF, NfDeregister) => {
                if let Some(nf) = msg.body_str("nf").and_then(|s| s.parse::<VnfKind>().ok()) {
                    self.lock(vnf).registry.remove(&nf);
                }
                SbiResponse::success(id)
            }
            (VnfKind::NRF, Discover) => {
                let wanted = msg.body_str("wanted").and_then(|s| s.parse::<VnfKind>().ok());
                let found = wanted.and_then(|w| self.lock(vnf).registry.get(&w).map(|e| e.endpoint.clone()));
                match (wanted, found) {
                    (Some(_), Some(ep)) => SbiResponse::success(id).with("endpoint", ep),
                    (Some(w), None) => SbiResponse::failure(id, format!("{w} not registered")),
                    (None, _) => SbiResponse::failure(id, "DISCOVER without a valid `wanted`"),
                }
            }
            (VnfKind::NRF, Heartbeat) => {
                let now = self.clock.now_ms();
                if let Some(nf) = msg.body_str("nf").and_then(|s| s.parse::<VnfKind>().ok()) {
                    if let Some(entry) = self.lock(vnf).registry.get_mut(&nf) {
                        entry.last_heartbeat_ms = now;
                    }
                }
                SbiResponse::success(id)
            }
            (vnf, op) => return Err(EmulatorError::UnknownServiceOp { vnf, op }),
        };
        Ok(resp)
    }

    fn nrf_exchange(&self, from: VnfKind, msg: SbiMessage) -> Result<SbiResponse, EmulatorError> {
        let tx = msg.wire_len();
        let extra = if msg.service_op == ServiceOp::Heartbeat { self.costs.step_ns(from, ServiceOp::Heartbeat) } else { 0 };
        self.charge(from, extra, 0, tx);
        let resp = self.send(&self.endpoint(VnfKind::NRF), msg)?;
        self.charge(from, 0, resp.wire_len(), 0);
        Ok(resp)
    }

    fn register(&self, vnf: VnfKind, now: u64) -> Result<(), EmulatorError> {
        let msg = SbiMessage::new(format!("reg-{vnf}-{now}"), ServiceOp::NfRegister, Origin::Vnf(vnf), VnfKind::NRF)
            .with("nf", vnf.as_str())
            .with("endpoint", self.endpoint(vnf));
        let resp = self.nrf_exchange(vnf, msg)?;
        if !resp.is_success() {
            return Err(EmulatorError::Transport(resp.reason.unwrap_or_default()));
        }
        let mut st = self.lock(vnf);
        st.registered = true;
        st.last_heartbeat_sent_ms = now;
        Ok(())
    }

    fn deregister(&self, vnf: VnfKind) -> Result<(), EmulatorError> {
        let now = self.clock.now_ms();
        let msg = SbiMessage::new(format!("dereg-{vnf}-{now}"), ServiceOp::NfDeregister, Origin::Vnf(vnf), VnfKind::NRF)
            .with("nf", vnf.as_str());
        self.nrf_exchange(vnf, msg)?;
        self.lock(vnf).registered = false;
        Ok(())
    }

    fn heartbeat_tick(&self, now_ms: u64) -> usize {
        let period = self.config.heartbeat_period_ms;
        let mut sent = 0;
        for vnf in VnfKind::ALL.into_iter().filter(|k| *k != VnfKind::NRF) {
            let due = {
                let st = self.lock(vnf);
                st.registered && now_ms >= st.last_heartbeat_sent_ms + period
            };
            if !due {
                continue;
            }
            self.lock(vnf).last_heartbeat_sent_ms = now_ms;
            let msg = SbiMessage::new(format!("hb-{vnf}-{now_ms}"), ServiceOp::Heartbeat, Origin::Vnf(vnf), VnfKind::NRF)
                .with("nf", vnf.as_str());
            match self.nrf_exchange(vnf, msg) {
                Ok(_) => sent += 1,
                Err(e) => log::warn!("heartbeat from {vnf} failed: {e}"),
            }
        }
        sent
    }

    fn upf_ingest(&self, session_key: &str, packet: Packet) -> Result<ForwardResult, EmulatorError> {
        let cpu_ns = self.costs.model.packet_ns(packet.size_bytes);
        let size = packet.size_bytes as u64;
        {
            let mut upf = self.lock(VnfKind::UPF);
            let Some(ctx) = upf.contexts.get_mut(session_key) else {
                return Err(EmulatorError::NoSuchSession(session_key.to_string()));
            };
            ctx.stats.packets += 1;
            match packet.direction {
                Direction::Uplink => ctx.stats.uplink_bytes += size,
                Direction::Downlink => ctx.stats.downlink_bytes += size,
            }
            upf.cpu_ns += cpu_ns;
            upf.rx_bytes += size;
            upf.tx_bytes += size;
        }
        {
            let mut dn = self.lock(VnfKind::DN);
            match packet.direction {
                Direction::Uplink => dn.rx_bytes += size,
                Direction::Downlink => dn.tx_bytes += size,
            }
        }
        if self.config.busy_spin {
            let until = Instant::now() + Duration::from_nanos(cpu_ns);
            while Instant::now() < until {
                std::hint::spin_loop();
            }
        }
        Ok(ForwardResult { cpu_ns })
    }

    fn snapshot(&self, vnf: VnfKind) -> ResourceSnapshot {
        let st = self.lock(vnf);
        ResourceSnapshot {
            vnf,
            cpu_time_ns: st.cpu_ns,
            mem_bytes: self.costs.model.base_mem(vnf) + st.context_bytes,
            rx_bytes: st.rx_bytes,
            tx_bytes: st.tx_bytes,
            active_contexts: st.contexts.len() as u64,
            taken_at_ms: self.clock.now_ms(),
        }
    }
}
