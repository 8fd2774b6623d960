//! Adapters between the injectors and the system under test.
//!
//! The bundled emulator is reached in-process or over its TCP frame servers;
//! an external core is reached over the same frame protocol for signaling and
//! UDP datagrams for user-plane packets.

use std::collections::BTreeMap;
use std::net::UdpSocket;
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use crate::emulator::{Direction, EmulatorError, EmulatorHandle, Packet, SbiMessage, SbiResponse, TransportKind, VnfKind};
use crate::net::{CallError, ConnPool};
use crate::scenario::TopologyEntry;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TargetError {
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("no such session `{0}`")]
    NoSuchSession(String),
}

pub trait ControlTarget: Send + Sync {
    /// Deliver one injector request to `msg.target` and wait for its answer.
    fn send(&self, msg: SbiMessage, timeout: Duration) -> Result<SbiResponse, TargetError>;
}

pub trait UserPlaneTarget: Send + Sync {
    fn ingest(&self, session_key: &str, packet: Packet) -> Result<(), TargetError>;
}

fn map_call_error(e: CallError, timeout: Duration) -> TargetError {
    match e {
        CallError::Connect { .. } => TargetError::Unreachable(e.to_string()),
        CallError::Timeout(_) => TargetError::Timeout(timeout.as_millis() as u64),
        CallError::Io(io) => TargetError::Unreachable(io.to_string()),
    }
}

/// The bundled emulator. Signaling honors the emulator's transport;
/// user-plane packets are handed to the UPF directly.
pub struct EmulatorTarget {
    handle: EmulatorHandle,
    pool: ConnPool,
}

impl EmulatorTarget {
    pub fn new(handle: EmulatorHandle) -> Self {
        EmulatorTarget { handle, pool: ConnPool::new() }
    }

    pub fn handle(&self) -> &EmulatorHandle {
        &self.handle
    }
}

impl ControlTarget for EmulatorTarget {
    fn send(&self, msg: SbiMessage, timeout: Duration) -> Result<SbiResponse, TargetError> {
        match self.handle.transport() {
            TransportKind::InProcess => match self.handle.handle_sbi(msg.target, msg) {
                Ok(resp) => Ok(resp),
                Err(e @ EmulatorError::UnknownServiceOp { .. }) => Err(TargetError::Rejected(e.to_string())),
                Err(EmulatorError::UpstreamTimeout { timeout_ms, .. }) => Err(TargetError::Timeout(timeout_ms)),
                Err(e) => Err(TargetError::Unreachable(e.to_string())),
            },
            TransportKind::TcpLoopback => {
                let endpoint = self.handle.endpoint(msg.target);
                self.pool.call(&endpoint, &msg, timeout).map_err(|e| map_call_error(e, timeout))
            }
        }
    }
}

impl UserPlaneTarget for EmulatorTarget {
    fn ingest(&self, session_key: &str, packet: Packet) -> Result<(), TargetError> {
        match self.handle.upf_ingest(session_key, packet) {
            Ok(_) => Ok(()),
            Err(EmulatorError::NoSuchSession(k)) => Err(TargetError::NoSuchSession(k)),
            Err(e) => Err(TargetError::Unreachable(e.to_string())),
        }
    }
}

/// Header of a user-plane datagram; the datagram is padded with zero bytes to
/// the packet size.
#[derive(Debug, Serialize)]
struct DatagramHeader<'a> {
    session_key: &'a str,
    direction: Direction,
    size_bytes: u32,
}

/// A core running elsewhere, reached through its topology endpoints.
pub struct ExternalTarget {
    endpoints: BTreeMap<VnfKind, String>,
    pool: ConnPool,
    udp: Mutex<Option<UdpSocket>>,
}

impl ExternalTarget {
    pub fn new(topology: &[TopologyEntry]) -> Self {
        ExternalTarget {
            endpoints: topology.iter().map(|e| (e.vnf, e.endpoint.clone())).collect(),
            pool: ConnPool::new(),
            udp: Mutex::new(None),
        }
    }

    fn endpoint(&self, vnf: VnfKind) -> Result<&str, TargetError> {
        self.endpoints
            .get(&vnf)
            .map(String::as_str)
            .ok_or_else(|| TargetError::Unreachable(format!("{vnf} missing from topology")))
    }
}

impl ControlTarget for ExternalTarget {
    fn send(&self, msg: SbiMessage, timeout: Duration) -> Result<SbiResponse, TargetError> {
        let endpoint = self.endpoint(msg.target)?;
        self.pool.call(endpoint, &msg, timeout).map_err(|e| map_call_error(e, timeout))
    }
}

impl UserPlaneTarget for ExternalTarget {
    fn ingest(&self, session_key: &str, packet: Packet) -> Result<(), TargetError> {
        let endpoint = self.endpoint(VnfKind::UPF)?;
        let header = DatagramHeader { session_key, direction: packet.direction, size_bytes: packet.size_bytes };
        let mut datagram = serde_json::to_vec(&header).expect("header serializes");
        datagram.push(b'\n');
        if datagram.len() < packet.size_bytes as usize {
            datagram.resize(packet.size_bytes as usize, 0);
        }
        let mut guard = self.udp.lock().unwrap();
        if guard.is_none() {
            *guard = Some(UdpSocket::bind("0.0.0.0:0").map_err(|e| TargetError::Unreachable(e.to_string()))?);
        }
        let sock = guard.as_ref().expect("socket bound above");
        sock.send_to(&datagram, endpoint).map_err(|e| TargetError::Unreachable(e.to_string()))?;
        Ok(())
    }
}
