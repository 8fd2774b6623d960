//! Service-based interface vocabulary: network functions, operations and the
//! request/response units exchanged between them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VnfKind {
    AMF,
    SMF,
    AUSF,
    UDM,
    UDR,
    NRF,
    UPF,
    DN,
}

impl VnfKind {
    pub const ALL: [VnfKind; 8] = [
        VnfKind::AMF,
        VnfKind::SMF,
        VnfKind::AUSF,
        VnfKind::UDM,
        VnfKind::UDR,
        VnfKind::NRF,
        VnfKind::UPF,
        VnfKind::DN,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VnfKind::AMF => "AMF",
            VnfKind::SMF => "SMF",
            VnfKind::AUSF => "AUSF",
            VnfKind::UDM => "UDM",
            VnfKind::UDR => "UDR",
            VnfKind::NRF => "NRF",
            VnfKind::UPF => "UPF",
            VnfKind::DN => "DN",
        }
    }

    /// Operations this function answers. Anything else is `UnknownServiceOp`.
    pub fn serves(self) -> &'static [ServiceOp] {
        use ServiceOp::*;
        match self {
            VnfKind::AMF => &[RegistrationRequest, PduSessionRequest],
            VnfKind::SMF => &[CreateSmContext],
            VnfKind::AUSF => &[UeAuthenticate],
            VnfKind::UDM => &[GenerateAuthVector, RegisterUeContext, GetSmSubscription],
            VnfKind::UDR => &[
                QueryAuthSubscription,
                StoreUeContext,
                QuerySmData,
                QuerySubscriptionData,
                UpdateSubscriptionData,
            ],
            VnfKind::NRF => &[NfRegister, NfDeregister, Discover, Heartbeat],
            VnfKind::UPF => &[N4SessionEstablish, N4SessionRelease],
            VnfKind::DN => &[],
        }
    }

    pub fn can_serve(self, op: ServiceOp) -> bool {
        self.serves().contains(&op)
    }
}

impl fmt::Display for VnfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VnfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VnfKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown VNF `{s}`"))
    }
}

/// The fixed SBI operation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceOp {
    RegistrationRequest,
    PduSessionRequest,
    CreateSmContext,
    UeAuthenticate,
    GenerateAuthVector,
    RegisterUeContext,
    GetSmSubscription,
    QueryAuthSubscription,
    StoreUeContext,
    QuerySmData,
    QuerySubscriptionData,
    UpdateSubscriptionData,
    NfRegister,
    NfDeregister,
    Discover,
    Heartbeat,
    N4SessionEstablish,
    N4SessionRelease,
}

impl ServiceOp {
    pub const ALL: [ServiceOp; 18] = [
        ServiceOp::RegistrationRequest,
        ServiceOp::PduSessionRequest,
        ServiceOp::CreateSmContext,
        ServiceOp::UeAuthenticate,
        ServiceOp::GenerateAuthVector,
        ServiceOp::RegisterUeContext,
        ServiceOp::GetSmSubscription,
        ServiceOp::QueryAuthSubscription,
        ServiceOp::StoreUeContext,
        ServiceOp::QuerySmData,
        ServiceOp::QuerySubscriptionData,
        ServiceOp::UpdateSubscriptionData,
        ServiceOp::NfRegister,
        ServiceOp::NfDeregister,
        ServiceOp::Discover,
        ServiceOp::Heartbeat,
        ServiceOp::N4SessionEstablish,
        ServiceOp::N4SessionRelease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceOp::RegistrationRequest => "REGISTRATION_REQUEST",
            ServiceOp::PduSessionRequest => "PDU_SESSION_REQUEST",
            ServiceOp::CreateSmContext => "CREATE_SM_CONTEXT",
            ServiceOp::UeAuthenticate => "UE_AUTHENTICATE",
            ServiceOp::GenerateAuthVector => "GENERATE_AUTH_VECTOR",
            ServiceOp::RegisterUeContext => "REGISTER_UE_CONTEXT",
            ServiceOp::GetSmSubscription => "GET_SM_SUBSCRIPTION",
            ServiceOp::QueryAuthSubscription => "QUERY_AUTH_SUBSCRIPTION",
            ServiceOp::StoreUeContext => "STORE_UE_CONTEXT",
            ServiceOp::QuerySmData => "QUERY_SM_DATA",
            ServiceOp::QuerySubscriptionData => "QUERY_SUBSCRIPTION_DATA",
            ServiceOp::UpdateSubscriptionData => "UPDATE_SUBSCRIPTION_DATA",
            ServiceOp::NfRegister => "NF_REGISTER",
            ServiceOp::NfDeregister => "NF_DEREGISTER",
            ServiceOp::Discover => "DISCOVER",
            ServiceOp::Heartbeat => "HEARTBEAT",
            ServiceOp::N4SessionEstablish => "N4_SESSION_ESTABLISH",
            ServiceOp::N4SessionRelease => "N4_SESSION_RELEASE",
        }
    }
}

impl fmt::Display for ServiceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceOp::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| format!("unknown service op `{s}`"))
    }
}

/// Sender of an SBI message: a core function or the load injector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Injector,
    Vnf(VnfKind),
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Injector => "Injector",
            Origin::Vnf(k) => k.as_str(),
        }
    }

    pub fn vnf(self) -> Option<VnfKind> {
        match self {
            Origin::Injector => None,
            Origin::Vnf(k) => Some(k),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Injector" {
            Ok(Origin::Injector)
        } else {
            s.parse().map(Origin::Vnf)
        }
    }
}

impl Serialize for Origin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type Body = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbiMessage {
    pub request_id: String,
    pub service_op: ServiceOp,
    pub origin: Origin,
    pub target: VnfKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supi: Option<String>,
    #[serde(default)]
    pub body: Body,
}

impl SbiMessage {
    pub fn new(request_id: impl Into<String>, service_op: ServiceOp, origin: Origin, target: VnfKind) -> Self {
        SbiMessage {
            request_id: request_id.into(),
            service_op,
            origin,
            target,
            supi: None,
            body: Body::new(),
        }
    }

    pub fn with_supi(mut self, supi: Option<String>) -> Self {
        self.supi = supi;
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.body.insert(key.to_string(), value.into());
        self
    }

    pub fn body_str(&self, key: &str) -> Option<&str> {
        self.body.get(key).and_then(|v| v.as_str())
    }

    /// Serialized payload size; the unit the byte counters advance by.
    pub fn wire_len(&self) -> u64 {
        serde_json::to_vec(self).map(|v| v.len() as u64).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SbiStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbiResponse {
    pub request_id: String,
    pub status: SbiStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub body: Body,
}

impl SbiResponse {
    pub fn success(request_id: impl Into<String>) -> Self {
        SbiResponse {
            request_id: request_id.into(),
            status: SbiStatus::Success,
            reason: None,
            body: Body::new(),
        }
    }

    pub fn failure(request_id: impl Into<String>, reason: impl Into<String>) -> Self {
        SbiResponse {
            request_id: request_id.into(),
            status: SbiStatus::Failure,
            reason: Some(reason.into()),
            body: Body::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.body.insert(key.to_string(), value.into());
        self
    }

    pub fn is_success(&self) -> bool {
        self.status == SbiStatus::Success
    }

    pub fn wire_len(&self) -> u64 {
        serde_json::to_vec(self).map(|v| v.len() as u64).unwrap_or(0)
    }
}

/// Signaling procedures the control-plane injector can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcedureKind {
    Registration,
    PduSessionSetup,
    Authentication,
    AuthVectorGeneration,
    SubscriptionDataMgmt,
    NrfDiscovery,
    Heartbeat,
}

impl ProcedureKind {
    pub const ALL: [ProcedureKind; 7] = [
        ProcedureKind::Registration,
        ProcedureKind::PduSessionSetup,
        ProcedureKind::Authentication,
        ProcedureKind::AuthVectorGeneration,
        ProcedureKind::SubscriptionDataMgmt,
        ProcedureKind::NrfDiscovery,
        ProcedureKind::Heartbeat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcedureKind::Registration => "Registration",
            ProcedureKind::PduSessionSetup => "PduSessionSetup",
            ProcedureKind::Authentication => "Authentication",
            ProcedureKind::AuthVectorGeneration => "AuthVectorGeneration",
            ProcedureKind::SubscriptionDataMgmt => "SubscriptionDataMgmt",
            ProcedureKind::NrfDiscovery => "NrfDiscovery",
            ProcedureKind::Heartbeat => "Heartbeat",
        }
    }

    /// Function that receives the injector's request in end-to-end mode.
    pub fn default_entry(self) -> VnfKind {
        match self {
            ProcedureKind::Registration | ProcedureKind::PduSessionSetup => VnfKind::AMF,
            ProcedureKind::Authentication => VnfKind::AUSF,
            ProcedureKind::AuthVectorGeneration => VnfKind::UDM,
            ProcedureKind::SubscriptionDataMgmt => VnfKind::UDR,
            ProcedureKind::NrfDiscovery | ProcedureKind::Heartbeat => VnfKind::NRF,
        }
    }

    /// Single-VNF profiling pairs.
    pub fn servable_by(self, vnf: VnfKind) -> bool {
        matches!(
            (vnf, self),
            (VnfKind::AMF, ProcedureKind::Registration)
                | (VnfKind::SMF, ProcedureKind::PduSessionSetup)
                | (VnfKind::AUSF, ProcedureKind::Authentication)
                | (VnfKind::UDM, ProcedureKind::AuthVectorGeneration)
                | (VnfKind::UDR, ProcedureKind::SubscriptionDataMgmt)
                | (VnfKind::NRF, ProcedureKind::NrfDiscovery)
        )
    }

    /// Injector-issued requests for this procedure when entering at `entry`.
    pub fn injector_ops(self, entry: VnfKind) -> &'static [ServiceOp] {
        use ServiceOp::*;
        match (self, entry) {
            (ProcedureKind::Registration, _) => &[RegistrationRequest],
            (ProcedureKind::PduSessionSetup, VnfKind::SMF) => &[CreateSmContext],
            (ProcedureKind::PduSessionSetup, _) => &[PduSessionRequest],
            (ProcedureKind::Authentication, _) => &[UeAuthenticate],
            (ProcedureKind::AuthVectorGeneration, _) => &[GenerateAuthVector],
            (ProcedureKind::SubscriptionDataMgmt, _) => &[QuerySubscriptionData, UpdateSubscriptionData],
            (ProcedureKind::NrfDiscovery, _) => &[Discover],
            (ProcedureKind::Heartbeat, _) => &[Heartbeat],
        }
    }
}

impl fmt::Display for ProcedureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcedureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProcedureKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown procedure `{s}`"))
    }
}
