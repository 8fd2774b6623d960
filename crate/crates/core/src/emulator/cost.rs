//! Resource cost model: modeled CPU per handled message and per forwarded
//! packet, and retained memory per stored context.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sbi::{ServiceOp, VnfKind};

const BUILTIN: &str = include_str!("../../../../fixtures/cost_model.json");

#[derive(Debug, thiserror::Error)]
pub enum CostModelError {
    #[error("cost model {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cost model is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cost model entry {0} must be finite and non-negative")]
    Negative(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceCostModel {
    /// Microseconds of CPU per handled message. An entry under a sender for
    /// `HEARTBEAT` is the sender-side cost of emitting a heartbeat.
    pub step_cpu_us: BTreeMap<VnfKind, BTreeMap<ServiceOp, f64>>,
    pub context_mem_bytes: BTreeMap<VnfKind, BTreeMap<String, u64>>,
    #[serde(default)]
    pub base_mem_bytes: BTreeMap<VnfKind, u64>,
    pub upf_pkt_cpu_us: f64,
    pub upf_byte_cpu_ns: f64,
    pub upf_base_mem_bytes: u64,
}

impl ResourceCostModel {
    /// The calibration shipped in `fixtures/cost_model.json`.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled cost model is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CostModelError> {
        let model: ResourceCostModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, CostModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| CostModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        let bad = |v: f64| !v.is_finite() || v < 0.0;
        for (vnf, ops) in &self.step_cpu_us {
            for (op, us) in ops {
                if bad(*us) {
                    return Err(CostModelError::Negative(format!("step_cpu_us.{vnf}.{op}")));
                }
            }
        }
        if bad(self.upf_pkt_cpu_us) {
            return Err(CostModelError::Negative("upf_pkt_cpu_us".into()));
        }
        if bad(self.upf_byte_cpu_ns) {
            return Err(CostModelError::Negative("upf_byte_cpu_ns".into()));
        }
        Ok(())
    }

    pub fn step_cpu_us(&self, vnf: VnfKind, op: ServiceOp) -> f64 {
        self.step_cpu_us
            .get(&vnf)
            .and_then(|ops| ops.get(&op))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn context_bytes(&self, vnf: VnfKind, kind: &str) -> u64 {
        self.context_mem_bytes
            .get(&vnf)
            .and_then(|m| m.get(kind))
            .copied()
            .unwrap_or(0)
    }

    pub fn base_mem(&self, vnf: VnfKind) -> u64 {
        match vnf {
            VnfKind::UPF => self.upf_base_mem_bytes,
            other => self.base_mem_bytes.get(&other).copied().unwrap_or(0),
        }
    }

    /// Modeled CPU of one handled message, in integer nanoseconds.
    pub fn step_ns(&self, vnf: VnfKind, op: ServiceOp) -> u64 {
        us_to_ns(self.step_cpu_us(vnf, op))
    }

    /// Modeled UPF CPU of one forwarded packet, in integer nanoseconds.
    pub fn packet_ns(&self, size_bytes: u32) -> u64 {
        (self.upf_pkt_cpu_us * 1000.0 + size_bytes as f64 * self.upf_byte_cpu_ns).round() as u64
    }
}

pub fn us_to_ns(us: f64) -> u64 {
    (us * 1000.0).round() as u64
}

/// Flattened lookup used on the hot path.
#[derive(Debug, Clone)]
pub(crate) struct CostTable {
    step_ns: [[u64; ServiceOp::ALL.len()]; VnfKind::ALL.len()],
    pub(crate) model: ResourceCostModel,
}

impl CostTable {
    pub(crate) fn new(model: ResourceCostModel) -> Self {
        let mut step_ns = [[0u64; ServiceOp::ALL.len()]; VnfKind::ALL.len()];
        for vnf in VnfKind::ALL {
            for (i, op) in ServiceOp::ALL.into_iter().enumerate() {
                step_ns[vnf.index()][i] = model.step_ns(vnf, op);
            }
        }
        CostTable { step_ns, model }
    }

    pub(crate) fn step_ns(&self, vnf: VnfKind, op: ServiceOp) -> u64 {
        self.step_ns[vnf.index()][op as usize]
    }
}
