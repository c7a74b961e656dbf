//! Network "bins": capacity plus the delivery constraints a node enforces
//! when it actually sends a message.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::flows::{check_name, deserialize_rational, serialize_rational};
use crate::scalar::Rational;
use crate::Error;

/// Radio technology, used for table glyphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    WiFi,
    LoRa,
    Sigfox,
    NbIot,
    #[default]
    Other,
}

impl Technology {
    /// Legend glyph: `*` Wi-Fi, `#` LoRa, `+` Sigfox, `-` NB-IoT.
    pub fn glyph(self) -> char {
        match self {
            Technology::WiFi => '*',
            Technology::LoRa => '#',
            Technology::Sigfox => '+',
            Technology::NbIot => '-',
            Technology::Other => '~',
        }
    }
}

/// One-way delivery latency of a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed(u32),
    Uniform(u32, u32),
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed(0)
    }
}

impl LatencyModel {
    pub fn bounds_ms(self) -> (u32, u32) {
        match self {
            LatencyModel::Fixed(ms) => (ms, ms),
            LatencyModel::Uniform(lo, hi) => (lo, hi),
        }
    }
}

fn zero() -> Rational {
    Ratio::from_integer(0)
}

fn ser_opt_rational<S: serde::Serializer>(
    value: &Option<Rational>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => serialize_rational(v, serializer),
        None => serializer.serialize_none(),
    }
}

fn de_opt_rational<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> Result<Option<Rational>, D::Error> {
    #[derive(Deserialize)]
    struct Wrap(#[serde(deserialize_with = "deserialize_rational")] Rational);
    Ok(Option::<Wrap>::deserialize(deserializer)?.map(|w| w.0))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub technology: Technology,
    pub capacity_bps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_payload_bytes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_messages_per_day: Option<u32>,
    #[serde(
        default,
        rename = "min_inter_message_gap_seconds",
        serialize_with = "ser_opt_rational",
        deserialize_with = "de_opt_rational",
        skip_serializing_if = "Option::is_none"
    )]
    pub min_gap: Option<Rational>,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(
        default = "zero",
        rename = "connect_time_seconds",
        serialize_with = "serialize_rational",
        deserialize_with = "deserialize_rational"
    )]
    pub connect_time: Rational,
    #[serde(
        default,
        serialize_with = "ser_opt_rational",
        deserialize_with = "de_opt_rational",
        skip_serializing_if = "Option::is_none"
    )]
    pub time_on_air_ms: Option<Rational>,
}

impl NetworkProfile {
    /// A bandwidth-only profile with no delivery constraints.
    pub fn bandwidth_only(id: &str, technology: Technology, capacity_bps: u64) -> Self {
        NetworkProfile {
            id: id.into(),
            name: id.into(),
            technology,
            capacity_bps,
            max_payload_bytes: None,
            max_messages_per_day: None,
            min_gap: None,
            latency: LatencyModel::default(),
            connect_time: zero(),
            time_on_air_ms: None,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        check_name(&self.name).map_err(|reason| NetworkError::InvalidName {
            network: self.id.clone(),
            reason,
        })?;
        if self.id.is_empty() {
            return Err(NetworkError::InvalidName {
                network: self.name.clone(),
                reason: "empty id".into(),
            });
        }
        if self.capacity_bps == 0 {
            return Err(NetworkError::ZeroCapacity { network: self.id.clone() });
        }
        if self.max_payload_bytes == Some(0) {
            return Err(NetworkError::ZeroPayloadCap { network: self.id.clone() });
        }
        if let LatencyModel::Uniform(lo, hi) = self.latency {
            if lo > hi {
                return Err(NetworkError::InvalidLatency { network: self.id.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum NetworkError {
    #[error("unknown built-in profile `{0}`")]
    UnknownProfile(String),
    #[error("unsupported LoRa configuration SF{sf}/{bandwidth_khz} kHz")]
    UnsupportedLora { sf: u8, bandwidth_khz: u16 },
    #[error("network `{network}`: capacity must be positive")]
    ZeroCapacity { network: String },
    #[error("network `{network}`: max payload must be at least 1 byte")]
    ZeroPayloadCap { network: String },
    #[error("network `{network}`: latency lower bound exceeds upper bound")]
    InvalidLatency { network: String },
    #[error("network `{network}`: invalid name: {reason}")]
    InvalidName { network: String, reason: String },
    #[error("network `{0}` declared more than once")]
    DuplicateId(String),
    #[error("network `{0}` is not declared")]
    UnknownNetwork(String),
}

/// Named built-in profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinProfile {
    WifiTable2,
    LoraSf9Table2,
    SigfoxTable2,
    WifiFipy,
    NbiotFipy,
    LoraSf7Fipy,
    SigfoxFipy,
}

impl BuiltinProfile {
    pub const ALL: [BuiltinProfile; 7] = [
        BuiltinProfile::WifiTable2,
        BuiltinProfile::LoraSf9Table2,
        BuiltinProfile::SigfoxTable2,
        BuiltinProfile::WifiFipy,
        BuiltinProfile::NbiotFipy,
        BuiltinProfile::LoraSf7Fipy,
        BuiltinProfile::SigfoxFipy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinProfile::WifiTable2 => "wifi_table2",
            BuiltinProfile::LoraSf9Table2 => "lora_sf9_table2",
            BuiltinProfile::SigfoxTable2 => "sigfox_table2",
            BuiltinProfile::WifiFipy => "wifi_fipy",
            BuiltinProfile::NbiotFipy => "nbiot_fipy",
            BuiltinProfile::LoraSf7Fipy => "lora_sf7_fipy",
            BuiltinProfile::SigfoxFipy => "sigfox_fipy",
        }
    }
}

impl fmt::Display for BuiltinProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinProfile {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinProfile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| NetworkError::UnknownProfile(s.to_string()))
    }
}

fn secs(num: i128, den: i128) -> Rational {
    Ratio::new(num, den)
}

fn wifi(id: &str, capacity_bps: u64) -> NetworkProfile {
    NetworkProfile {
        id: id.into(),
        name: "Wi-Fi".into(),
        technology: Technology::WiFi,
        capacity_bps,
        max_payload_bytes: None,
        max_messages_per_day: None,
        min_gap: None,
        latency: LatencyModel::Fixed(8),
        connect_time: secs(77, 10),
        time_on_air_ms: None,
    }
}

fn sigfox(capacity_bps: u64) -> NetworkProfile {
    NetworkProfile {
        id: "sigfox".into(),
        name: "Sigfox".into(),
        technology: Technology::Sigfox,
        capacity_bps,
        max_payload_bytes: Some(12),
        max_messages_per_day: Some(140),
        min_gap: Some(secs(21, 2)),
        latency: LatencyModel::Uniform(1000, 4500),
        connect_time: secs(1, 10),
        time_on_air_ms: None,
    }
}

/// Strips the delivery constraints: the bandwidth-only comparison set
/// disregards payload size and daily message limits.
fn unconstrained(mut profile: NetworkProfile) -> NetworkProfile {
    profile.max_payload_bytes = None;
    profile.max_messages_per_day = None;
    profile.min_gap = None;
    profile
}

pub fn builtin_profile(kind: BuiltinProfile) -> NetworkProfile {
    match kind {
        BuiltinProfile::WifiTable2 => wifi("wifi", 64_000),
        BuiltinProfile::LoraSf9Table2 => unconstrained(lora_row(&LORA_TABLE[3])),
        BuiltinProfile::SigfoxTable2 => unconstrained(sigfox(48)),
        BuiltinProfile::WifiFipy => wifi("wifi", 750_000),
        BuiltinProfile::NbiotFipy => NetworkProfile {
            id: "nbiot".into(),
            name: "NB-IoT".into(),
            technology: Technology::NbIot,
            capacity_bps: 55_000,
            max_payload_bytes: None,
            max_messages_per_day: None,
            min_gap: None,
            latency: LatencyModel::Fixed(576),
            connect_time: secs(31, 2),
            time_on_air_ms: None,
        },
        BuiltinProfile::LoraSf7Fipy => lora_row(&LORA_TABLE[5]),
        BuiltinProfile::SigfoxFipy => sigfox(100),
    }
}

/// Looks up a built-in profile by its string name.
pub fn builtin_by_name(name: &str) -> Result<NetworkProfile, NetworkError> {
    Ok(builtin_profile(name.parse()?))
}

/// One row of the EU LoRaWAN max-payload airtime table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoraRow {
    pub sf: u8,
    pub bandwidth_khz: u16,
    pub bitrate_bps: u64,
    pub max_payload_bytes: u32,
    /// Time on air in tenths of a millisecond.
    pub time_on_air_dms: u32,
    pub max_messages_per_day: u32,
}

pub const LORA_TABLE: [LoraRow; 7] = [
    LoraRow { sf: 12, bandwidth_khz: 125, bitrate_bps: 250, max_payload_bytes: 51, time_on_air_dms: 27935, max_messages_per_day: 12 },
    LoraRow { sf: 11, bandwidth_khz: 125, bitrate_bps: 440, max_payload_bytes: 51, time_on_air_dms: 15606, max_messages_per_day: 23 },
    LoraRow { sf: 10, bandwidth_khz: 125, bitrate_bps: 980, max_payload_bytes: 51, time_on_air_dms: 6984, max_messages_per_day: 51 },
    LoraRow { sf: 9, bandwidth_khz: 125, bitrate_bps: 1760, max_payload_bytes: 115, time_on_air_dms: 6769, max_messages_per_day: 53 },
    LoraRow { sf: 8, bandwidth_khz: 125, bitrate_bps: 3125, max_payload_bytes: 222, time_on_air_dms: 6559, max_messages_per_day: 54 },
    LoraRow { sf: 7, bandwidth_khz: 125, bitrate_bps: 5470, max_payload_bytes: 222, time_on_air_dms: 3689, max_messages_per_day: 97 },
    LoraRow { sf: 7, bandwidth_khz: 250, bitrate_bps: 11000, max_payload_bytes: 222, time_on_air_dms: 1844, max_messages_per_day: 195 },
];

fn lora_row(row: &LoraRow) -> NetworkProfile {
    NetworkProfile {
        id: "lora".into(),
        name: "LoRa".into(),
        technology: Technology::LoRa,
        capacity_bps: row.bitrate_bps,
        max_payload_bytes: Some(row.max_payload_bytes),
        max_messages_per_day: Some(row.max_messages_per_day),
        min_gap: None,
        latency: LatencyModel::Uniform(24, 2800),
        connect_time: secs(28, 5),
        time_on_air_ms: Some(Ratio::new(i128::from(row.time_on_air_dms), 10)),
    }
}

pub fn lora_profile(sf: u8, bandwidth_khz: u16) -> Result<NetworkProfile, NetworkError> {
    LORA_TABLE
        .iter()
        .find(|r| r.sf == sf && r.bandwidth_khz == bandwidth_khz)
        .map(lora_row)
        .ok_or(NetworkError::UnsupportedLora { sf, bandwidth_khz })
}

/// Entry of a `"networks"` JSON array: a built-in reference or a full profile.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSpec {
    Builtin {
        builtin: BuiltinProfile,
        #[serde(default)]
        id: Option<String>,
        #[serde(default)]
        name: Option<String>,
    },
    Custom(NetworkProfile),
}

impl NetworkSpec {
    pub fn resolve(&self) -> NetworkProfile {
        match self {
            NetworkSpec::Builtin { builtin, id, name } => {
                let mut profile = builtin_profile(*builtin);
                if let Some(id) = id {
                    profile.id = id.clone();
                }
                if let Some(name) = name {
                    profile.name = name.clone();
                }
                profile
            }
            NetworkSpec::Custom(profile) => profile.clone(),
        }
    }
}

/// Validates a declared network list: each profile valid, ids distinct.
pub fn validate_networks(networks: &[NetworkProfile]) -> Result<(), NetworkError> {
    let mut seen = HashSet::new();
    for net in networks {
        net.validate()?;
        if !seen.insert(net.id.as_str()) {
            return Err(NetworkError::DuplicateId(net.id.clone()));
        }
    }
    Ok(())
}

/// Reads a networks file: either a bare array or `{"networks": [...]}`.
pub fn load_networks(path: &Path) -> Result<Vec<NetworkProfile>, Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        List(Vec<NetworkSpec>),
        Wrapped { networks: Vec<NetworkSpec> },
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Doc = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))?;
    let specs = match doc {
        Doc::List(v) | Doc::Wrapped { networks: v } => v,
    };
    let nets: Vec<NetworkProfile> = specs.iter().map(NetworkSpec::resolve).collect();
    validate_networks(&nets)?;
    Ok(nets)
}

/// The bandwidth-only comparison set: Wi-Fi 64000, LoRa SF9 1760, Sigfox 48 bps.
pub fn table2_networks() -> Vec<NetworkProfile> {
    [BuiltinProfile::WifiTable2, BuiltinProfile::LoraSf9Table2, BuiltinProfile::SigfoxTable2]
        .into_iter()
        .map(builtin_profile)
        .collect()
}

/// The four networks measured on the edge device, in declaration order
/// Wi-Fi, NB-IoT, LoRa SF7, Sigfox.
pub fn fipy_networks() -> Vec<NetworkProfile> {
    [
        BuiltinProfile::WifiFipy,
        BuiltinProfile::NbiotFipy,
        BuiltinProfile::LoraSf7Fipy,
        BuiltinProfile::SigfoxFipy,
    ]
    .into_iter()
    .map(builtin_profile)
    .collect()
}

/// The ordered subset of declared networks available at one moment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AvailabilityScenario {
    available: Vec<String>,
}

impl AvailabilityScenario {
    pub fn new<I, S>(ids: I) -> Result<Self, NetworkError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let available: Vec<String> = ids.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for id in &available {
            if !seen.insert(id.as_str()) {
                return Err(NetworkError::DuplicateId(id.clone()));
            }
        }
        Ok(AvailabilityScenario { available })
    }

    pub fn ids(&self) -> &[String] {
        &self.available
    }

    /// Picks the available profiles out of `declared`, in availability order.
    pub fn resolve(&self, declared: &[NetworkProfile]) -> Result<Vec<NetworkProfile>, NetworkError> {
        self.available
            .iter()
            .map(|id| {
                declared
                    .iter()
                    .find(|n| &n.id == id)
                    .cloned()
                    .ok_or_else(|| NetworkError::UnknownNetwork(id.clone()))
            })
            .collect()
    }
}
