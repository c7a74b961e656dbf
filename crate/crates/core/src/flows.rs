//! Mixed-criticality message flows and their bandwidth demand.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::{format_rational, parse_rational, Bandwidth, Rational, Utilization};
use crate::Error;

/// Default bits-per-byte factor applied to `C / T`.
pub const DEFAULT_FACTOR: u64 = 8;

/// Characters that cannot appear in a flow or network name: they are
/// delimiters of the node protocol.
pub const RESERVED_NAME_CHARS: &[char] = &[',', ':', '<', '>', '\n', '\r'];

/// Service tier of a flow. Level 1 is normal operation; larger values are
/// progressively degraded service.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CriticalityLevel(u8);

impl CriticalityLevel {
    pub const NORMAL: CriticalityLevel = CriticalityLevel(1);

    pub fn new(value: u8) -> Option<Self> {
        (value >= 1).then_some(CriticalityLevel(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based index into per-level arrays.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    /// Iterates `1..=l_max`.
    pub fn all(l_max: u8) -> impl DoubleEndedIterator<Item = CriticalityLevel> {
        (1..=l_max).map(CriticalityLevel)
    }
}

impl fmt::Display for CriticalityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Minimum interval between messages, in seconds, kept as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period(Rational);

impl Period {
    pub fn new(seconds: Rational) -> Option<Self> {
        (seconds.is_positive()).then_some(Period(seconds))
    }

    pub fn from_secs(seconds: u32) -> Option<Self> {
        Self::new(Ratio::from_integer(i128::from(seconds)))
    }

    pub fn seconds(self) -> Rational {
        self.0
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serialize_rational(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        // Zero or negative periods are reported by validation, which names the flow.
        deserialize_rational(deserializer).map(Period)
    }
}

/// Writes integers as JSON numbers and everything else as an exact string.
pub(crate) fn serialize_rational<S: Serializer>(
    value: &Rational,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    if value.is_integer() {
        serializer.serialize_i128(*value.numer())
    } else {
        serializer.serialize_str(&format_rational(value))
    }
}

pub(crate) fn deserialize_rational<'de, D: Deserializer<'de>>(
    deserializer: D,
) -> Result<Rational, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Float(f64),
        Text(String),
    }
    let parsed = match Raw::deserialize(deserializer)? {
        // Negative and zero values are kept so validation can name the flow.
        Raw::Int(v) => Some(Ratio::from_integer(i128::from(v))),
        Raw::Float(v) if v.is_finite() && v < 0.0 => {
            parse_rational(&format!("{}", -v)).map(|r| -r)
        }
        Raw::Float(v) if v.is_finite() => parse_rational(&format!("{v}")),
        Raw::Float(_) => None,
        Raw::Text(s) => parse_rational(&s),
    };
    parsed.ok_or_else(|| serde::de::Error::custom("expected a non-negative decimal or n/d"))
}

/// QoS a flow requests at one criticality level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosRequirement {
    /// Maximum message size in bytes.
    #[serde(rename = "c")]
    pub message_size_bytes: u32,
    /// Minimum interval between consecutive messages.
    #[serde(rename = "t")]
    pub min_interval: Period,
}

impl QosRequirement {
    pub fn new(message_size_bytes: u32, min_interval_secs: u32) -> Self {
        QosRequirement {
            message_size_bytes,
            min_interval: Period::from_secs(min_interval_secs).expect("period must be positive"),
        }
    }
}

/// A declared message flow with per-level QoS. Levels absent from `qos`
/// request no service at that level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    #[serde(default)]
    pub app: String,
    pub name: String,
    pub qos: BTreeMap<CriticalityLevel, QosRequirement>,
}

impl FlowSpec {
    pub fn qos_at(&self, level: CriticalityLevel) -> Option<&QosRequirement> {
        self.qos.get(&level)
    }

    pub fn defines(&self, level: CriticalityLevel) -> bool {
        self.qos.contains_key(&level)
    }

    /// Numerically smallest defined level (most generous QoS).
    pub fn lowest_level(&self) -> Option<CriticalityLevel> {
        self.qos.keys().next().copied()
    }

    /// Numerically largest defined level.
    pub fn highest_level(&self) -> Option<CriticalityLevel> {
        self.qos.keys().next_back().copied()
    }

    /// `factor · C / T` at `level`, in the scalar `S`.
    pub fn demand<S: Bandwidth>(&self, level: CriticalityLevel, factor: u64) -> Option<S> {
        let qos = self.qos.get(&level)?;
        let period = qos.min_interval.seconds();
        let num = u128::from(factor)
            * u128::from(qos.message_size_bytes)
            * u128::try_from(*period.denom()).ok()?;
        let den = u128::try_from(*period.numer()).ok()?;
        if den == 0 {
            return None;
        }
        Some(S::from_ratio(num, den))
    }
}

/// Bandwidth demand of `flow` at `level` in micro-bps, or `None` when the
/// flow requests no service at that level.
pub fn utilization(flow: &FlowSpec, level: CriticalityLevel, factor: u64) -> Option<Utilization> {
    flow.demand(level, factor)
}

/// A validated collection of flows sharing one `l_max`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSet {
    pub l_max: u8,
    pub flows: Vec<FlowSpec>,
}

impl FlowSet {
    pub fn new(l_max: u8, flows: Vec<FlowSpec>) -> Result<Self, ValidationError> {
        validate_flow_set(&flows, l_max)?;
        Ok(FlowSet { l_max, flows })
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let raw: FlowSet = serde_json::from_str(text)?;
        Ok(FlowSet::new(raw.l_max, raw.flows)?)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.in_file(path))
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("l_max must be at least 1")]
    InvalidLMax,
    #[error("flow `{flow}`: duplicate id")]
    DuplicateId { flow: String },
    #[error("flow `{flow}`: no criticality levels defined")]
    NoLevels { flow: String },
    #[error("flow `{flow}`: level {level} outside 1..={l_max}")]
    LevelOutOfRange { flow: String, level: u8, l_max: u8 },
    #[error("flow `{flow}`: message size at level {level} must be at least 1 byte")]
    ZeroMessageSize { flow: String, level: u8 },
    #[error("flow `{flow}`: period at level {level} must be positive")]
    NonPositivePeriod { flow: String, level: u8 },
    #[error("flow `{flow}`: invalid name: {reason}")]
    InvalidName { flow: String, reason: String },
}

/// Checks name rules shared by flows and networks.
pub fn check_name(name: &str) -> Result<(), String> {
    if name.is_empty() {
        return Err("name is empty".into());
    }
    if let Some(c) = name.chars().find(|c| RESERVED_NAME_CHARS.contains(c)) {
        return Err(format!("contains reserved character {c:?}"));
    }
    Ok(())
}

pub fn validate_flow_set(flows: &[FlowSpec], l_max: u8) -> Result<(), ValidationError> {
    if l_max == 0 {
        return Err(ValidationError::InvalidLMax);
    }
    let mut seen = HashSet::new();
    for flow in flows {
        if !seen.insert(flow.id.as_str()) {
            return Err(ValidationError::DuplicateId { flow: flow.id.clone() });
        }
        check_name(&flow.name).map_err(|reason| ValidationError::InvalidName {
            flow: flow.id.clone(),
            reason,
        })?;
        if flow.qos.is_empty() {
            return Err(ValidationError::NoLevels { flow: flow.id.clone() });
        }
        for (level, qos) in &flow.qos {
            if level.get() == 0 || level.get() > l_max {
                return Err(ValidationError::LevelOutOfRange {
                    flow: flow.id.clone(),
                    level: level.get(),
                    l_max,
                });
            }
            if qos.message_size_bytes == 0 {
                return Err(ValidationError::ZeroMessageSize {
                    flow: flow.id.clone(),
                    level: level.get(),
                });
            }
            let t = qos.min_interval.seconds();
            if t.is_zero() || t.is_negative() {
                return Err(ValidationError::NonPositivePeriod {
                    flow: flow.id.clone(),
                    level: level.get(),
                });
            }
        }
    }
    Ok(())
}

/// The eight assisted-living flows (HealthApp and HomeApp) with three levels.
pub fn assisted_living() -> FlowSet {
    fn flow(id: &str, app: &str, name: &str, levels: &[(u32, u32)]) -> FlowSpec {
        FlowSpec {
            id: id.into(),
            app: app.into(),
            name: name.into(),
            qos: levels
                .iter()
                .enumerate()
                .map(|(i, &(c, t))| {
                    (CriticalityLevel(i as u8 + 1), QosRequirement::new(c, t))
                })
                .collect(),
        }
    }
    let flows = vec![
        flow("1", "HealthApp", "fall detection", &[(1000, 10), (40, 20), (10, 60)]),
        flow("2", "HealthApp", "heart monitoring", &[(1000, 5), (80, 10), (10, 20)]),
        flow("3", "HealthApp", "body temperature", &[(30, 30), (10, 120)]),
        flow("4", "HomeApp", "sensor bedroom", &[(40000, 10), (10, 30)]),
        flow("5", "HomeApp", "sensor bathroom", &[(80, 10), (10, 30)]),
        flow("6", "HomeApp", "sensor lounge/kitchen", &[(40000, 10), (10, 30)]),
        flow("7", "HomeApp", "sensor front door", &[(40000, 10), (10, 30)]),
        flow("8", "HomeApp", "energy usage", &[(40, 3600)]),
    ];
    FlowSet::new(3, flows).expect("built-in flow set is valid")
}
