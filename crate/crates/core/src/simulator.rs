//! Discrete-event simulation of the host (flow generators) and the node
//! (allocator plus network interfaces).
//!
//! Host and node only talk through encoded frames. Time is virtual and
//! exact. Frames cross the link instantly; network latency is sampled per
//! message from the profile's latency model.
//!
//! Re-allocation after an availability change:
//! 1. node writes `<INFO:RE-ALLOC:INIT>` and the new MFEA; the host pauses
//! 2. after the handshake duration the host installs the MFEA, restarts its
//!    generators and writes `<INFO:RE-ALLOC:ACCEPTED>`
//! 3. the node switches to the new allocation on ACCEPTED; until then it
//!    serves the previous one, minus lost networks

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::path::{Path, PathBuf};

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocators::{Algorithm, AllocationProblem};
use crate::flows::{
    deserialize_rational, serialize_rational, CriticalityLevel, FlowSet, DEFAULT_FACTOR,
};
use crate::netmodel::{validate_networks, LatencyModel, NetworkProfile, NetworkSpec};
use crate::scalar::{Rational, Utilization};
use crate::wire::{
    encode_frame, ControlMessage, ErrorReason, FrameDecoder, HostMessage, MfeaEntry, NodeMessage,
    AppMessage,
};
use crate::Error;

pub const SIM_REPORT_SCHEMA_VERSION: u32 = 1;
/// Identifier of the generator behind every random draw.
pub const RNG_NAME: &str = "chacha8";
const LATENCY_STREAM: u64 = 0;
const HANDSHAKE_STREAM: u64 = 1;
const SECONDS_PER_DAY: i128 = 86_400;

/// A seeded generator for one independent random stream of a run.
pub fn sim_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seconds(
    #[serde(serialize_with = "serialize_rational", deserialize_with = "deserialize_rational")]
    pub Rational,
);

/// Time from INIT written to ACCEPTED received.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeModel {
    Fixed(Seconds),
    Uniform(Seconds, Seconds),
}

impl Default for HandshakeModel {
    fn default() -> Self {
        HandshakeModel::Uniform(Seconds(Ratio::new(13, 10)), Seconds(Ratio::new(3, 2)))
    }
}

/// Draws one handshake duration, at microsecond resolution for uniform models.
pub fn handshake_duration_model(model: &HandshakeModel, rng: &mut ChaCha8Rng) -> Rational {
    match *model {
        HandshakeModel::Fixed(Seconds(d)) => d,
        HandshakeModel::Uniform(Seconds(lo), Seconds(hi)) => {
            let us = Ratio::from_integer(1_000_000);
            let lo_us = (lo * us).ceil().to_integer();
            let hi_us = (hi * us).floor().to_integer().max(lo_us);
            Ratio::new(rng.gen_range(lo_us..=hi_us), 1_000_000)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AvailabilityEvent {
    NetworkUp {
        network: String,
        #[serde(serialize_with = "serialize_rational", deserialize_with = "deserialize_rational")]
        time_seconds: Rational,
    },
    NetworkDown {
        network: String,
        #[serde(serialize_with = "serialize_rational", deserialize_with = "deserialize_rational")]
        time_seconds: Rational,
    },
}

impl AvailabilityEvent {
    pub fn time(&self) -> Rational {
        match self {
            AvailabilityEvent::NetworkUp { time_seconds, .. }
            | AvailabilityEvent::NetworkDown { time_seconds, .. } => *time_seconds,
        }
    }

    pub fn network(&self) -> &str {
        match self {
            AvailabilityEvent::NetworkUp { network, .. }
            | AvailabilityEvent::NetworkDown { network, .. } => network,
        }
    }

    fn is_up(&self) -> bool {
        matches!(self, AvailabilityEvent::NetworkUp { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub flows: FlowSet,
    pub networks: Vec<NetworkProfile>,
    /// Network ids up at t = 0.
    pub initially_available: Vec<String>,
    pub factor: u64,
    pub algorithm: Algorithm,
    pub duration: Rational,
    pub seed: u64,
    pub handshake: HandshakeModel,
    pub events: Vec<AvailabilityEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    /// Inline flow set, or a path relative to the scenario file.
    flows: serde_json::Value,
    networks: Vec<NetworkSpec>,
    #[serde(default)]
    initially_available: Option<Vec<String>>,
    #[serde(default = "default_factor")]
    factor: u64,
    #[serde(default = "default_algorithm")]
    algorithm: String,
    duration_seconds: Seconds,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    handshake: HandshakeModel,
    #[serde(default)]
    events: Vec<AvailabilityEvent>,
}

fn default_factor() -> u64 {
    DEFAULT_FACTOR
}

fn default_algorithm() -> String {
    Algorithm::CabfInv.name()
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidScenario(msg.into())
}

impl Scenario {
    /// A scenario with every network up, CABF_inv, 600 s and seed 0.
    pub fn new(flows: FlowSet, networks: Vec<NetworkProfile>) -> Self {
        Scenario {
            initially_available: networks.iter().map(|n| n.id.clone()).collect(),
            flows,
            networks,
            factor: DEFAULT_FACTOR,
            algorithm: Algorithm::CabfInv,
            duration: Ratio::from_integer(600),
            seed: 0,
            handshake: HandshakeModel::default(),
            events: Vec::new(),
        }
    }

    /// Parses a scenario; a string `flows` entry is a path relative to `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, Error> {
        let raw: ScenarioFile = serde_json::from_str(text)?;
        let flows = match raw.flows {
            serde_json::Value::String(p) => FlowSet::load(&base_dir.join(PathBuf::from(p)))?,
            inline => {
                let set: FlowSet = serde_json::from_value(inline)?;
                FlowSet::new(set.l_max, set.flows)?
            }
        };
        let networks: Vec<NetworkProfile> = raw.networks.iter().map(NetworkSpec::resolve).collect();
        let algorithm = raw.algorithm.parse::<Algorithm>().map_err(|e| invalid(e.to_string()))?;
        let scenario = Scenario {
            initially_available: raw
                .initially_available
                .unwrap_or_else(|| networks.iter().map(|n| n.id.clone()).collect()),
            flows,
            networks,
            factor: raw.factor,
            algorithm,
            duration: raw.duration_seconds.0,
            seed: raw.seed,
            handshake: raw.handshake,
            events: raw.events,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).map_err(|e| e.in_file(path))
    }

    pub fn l_max(&self) -> u8 {
        self.flows.l_max
    }

    pub fn validate(&self) -> Result<(), Error> {
        crate::flows::validate_flow_set(&self.flows.flows, self.flows.l_max)?;
        validate_networks(&self.networks)?;
        if !self.duration.is_positive() {
            return Err(invalid("duration must be positive"));
        }
        if self.factor == 0 {
            return Err(invalid("factor must be positive"));
        }
        let mut names = std::collections::HashSet::new();
        for f in &self.flows.flows {
            if !names.insert(f.name.as_str()) {
                return Err(invalid(format!("flow name `{}` is used twice", f.name)));
            }
        }
        match self.handshake {
            HandshakeModel::Fixed(Seconds(d)) if d.is_negative() => {
                return Err(invalid("handshake duration must be non-negative"));
            }
            HandshakeModel::Uniform(Seconds(lo), Seconds(hi)) if lo.is_negative() || lo > hi => {
                return Err(invalid("handshake bounds must satisfy 0 <= lo <= hi"));
            }
            _ => {}
        }
        let index = |id: &str| {
            self.networks
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| invalid(format!("network `{id}` is not declared")))
        };
        let mut up = vec![false; self.networks.len()];
        for id in &self.initially_available {
            let j = index(id)?;
            if std::mem::replace(&mut up[j], true) {
                return Err(invalid(format!("network `{id}` listed twice as available")));
            }
        }
        let mut last = Rational::zero();
        for ev in &self.events {
            let t = ev.time();
            if t.is_negative() || t > self.duration {
                return Err(invalid(format!("event at {t} s outside [0, duration]")));
            }
            if t < last {
                return Err(invalid("events must be in non-decreasing time order"));
            }
            last = t;
            let j = index(ev.network())?;
            if up[j] == ev.is_up() {
                let state = if ev.is_up() { "up" } else { "down" };
                return Err(invalid(format!("network `{}` is already {state} at {t} s", ev.network())));
            }
            up[j] = ev.is_up();
        }
        Ok(())
    }

    /// Whether some network stays up for the entire run.
    pub fn has_persistent_network(&self) -> bool {
        self.initially_available
            .iter()
            .any(|id| !self.events.iter().any(|e| !e.is_up() && e.network() == id))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LevelStats {
    pub level: u8,
    pub sent: u64,
    pub delivered: u64,
    pub err_not_allocated: u64,
    pub err_not_delivered: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowStats {
    pub flow_id: String,
    pub name: String,
    pub sent: u64,
    pub delivered: u64,
    pub err_not_allocated: u64,
    pub err_not_delivered: u64,
    pub delivered_fraction: Option<f64>,
    pub levels: Vec<LevelStats>,
}

impl FlowStats {
    pub fn delivered_ratio(&self) -> Option<Rational> {
        (self.sent > 0).then(|| Ratio::new(i128::from(self.delivered), i128::from(self.sent)))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NetworkStats {
    pub network_id: String,
    pub messages: u64,
    pub bytes: u64,
    /// Sends refused because of payload cap, daily budget or message gap.
    pub budget_violations_avoided: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Handshake {
    #[serde(serialize_with = "serialize_rational")]
    pub start: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub accepted: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub duration: Rational,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelFraction {
    pub level: u8,
    pub sent: u64,
    pub delivered: u64,
    pub fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AllocatedFlow {
    pub flow_id: String,
    pub network_id: String,
    pub level: CriticalityLevel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AllocationSnapshot {
    #[serde(serialize_with = "serialize_rational")]
    pub time: Rational,
    pub available: Vec<String>,
    pub entries: Vec<AllocatedFlow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub rng: String,
    pub seed: u64,
    pub algorithm: String,
    pub factor: u64,
    #[serde(serialize_with = "serialize_rational")]
    pub duration_seconds: Rational,
    pub flows: Vec<FlowStats>,
    pub networks: Vec<NetworkStats>,
    pub handshakes: Vec<Handshake>,
    pub delivered_fraction: Vec<LevelFraction>,
    pub allocations: Vec<AllocationSnapshot>,
    pub malformed_frames: u64,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    #[serde(rename = "host->node")]
    HostToNode,
    #[serde(rename = "node->host")]
    NodeToHost,
}

/// One frame as written on the link, without its terminating newline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    #[serde(serialize_with = "serialize_rational")]
    pub time: Rational,
    pub direction: Direction,
    pub frame: String,
}

/// Event kinds in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SimEventKind {
    NetworkChange { event: usize },
    ReallocStart,
    ReallocComplete,
    EmitMessage { flow: usize, generation: u64 },
    Delivery { flow: usize, message: u64 },
}

impl SimEventKind {
    fn priority(self) -> u8 {
        match self {
            SimEventKind::NetworkChange { .. } => 0,
            SimEventKind::ReallocStart => 1,
            SimEventKind::ReallocComplete => 2,
            SimEventKind::EmitMessage { .. } => 3,
            SimEventKind::Delivery { .. } => 4,
        }
    }

    fn flow(self) -> usize {
        match self {
            SimEventKind::EmitMessage { flow, .. } | SimEventKind::Delivery { flow, .. } => flow,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimEvent {
    pub time: Rational,
    pub kind: SimEventKind,
    seq: u64,
}

impl SimEvent {
    fn key(&self) -> (Rational, u8, usize, u64) {
        (self.time, self.kind.priority(), self.kind.flow(), self.seq)
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug)]
struct Assignment {
    level: CriticalityLevel,
    period: Rational,
    payload: u32,
}

#[derive(Default)]
struct Host {
    decoder: FrameDecoder,
    assignments: Vec<Option<Assignment>>,
    generation: Vec<u64>,
    paused: bool,
    pending_mfea: Option<Vec<MfeaEntry>>,
    outstanding: Vec<VecDeque<CriticalityLevel>>,
    stats: Vec<Vec<LevelStats>>,
}

#[derive(Clone, Default)]
struct Interface {
    last_send: Option<Rational>,
    day: i128,
    sent_today: u32,
    stats: NetworkStats,
}

type NodeTable = Vec<Option<(usize, CriticalityLevel)>>;

#[derive(Default)]
struct Node {
    decoder: FrameDecoder,
    available: Vec<bool>,
    active: NodeTable,
    pending: Option<NodeTable>,
    handshake_start: Option<Rational>,
    realloc_scheduled: bool,
    realloc_queued: bool,
    interfaces: Vec<Interface>,
    in_flight: BTreeMap<u64, (usize, usize)>,
    next_message: u64,
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: Rational,
    queue: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    latency_rng: ChaCha8Rng,
    handshake_rng: ChaCha8Rng,
    host: Host,
    node: Node,
    to_node: Vec<u8>,
    to_host: Vec<u8>,
    transcript: Option<Vec<TranscriptEntry>>,
    handshakes: Vec<Handshake>,
    allocations: Vec<AllocationSnapshot>,
    malformed: u64,
    flow_by_name: BTreeMap<&'a str, usize>,
}

pub fn run(scenario: &Scenario) -> Result<SimReport, Error> {
    scenario.validate()?;
    Ok(Sim::new(scenario, false).execute().0)
}

/// Runs the scenario and also returns every frame written on the link.
pub fn run_with_transcript(scenario: &Scenario) -> Result<(SimReport, Vec<TranscriptEntry>), Error> {
    scenario.validate()?;
    let (report, transcript) = Sim::new(scenario, true).execute();
    Ok((report, transcript.unwrap_or_default()))
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, record: bool) -> Self {
        let n = sc.flows.len();
        let m = sc.networks.len();
        let l_max = usize::from(sc.l_max());
        let host = Host {
            assignments: vec![None; n],
            generation: vec![0; n],
            outstanding: vec![VecDeque::new(); n],
            stats: (0..n)
                .map(|_| {
                    (1..=l_max)
                        .map(|l| LevelStats { level: l as u8, ..LevelStats::default() })
                        .collect()
                })
                .collect(),
            ..Host::default()
        };
        let mut available = vec![false; m];
        for id in &sc.initially_available {
            if let Some(j) = sc.networks.iter().position(|n| &n.id == id) {
                available[j] = true;
            }
        }
        let node = Node {
            available,
            active: vec![None; n],
            interfaces: sc
                .networks
                .iter()
                .map(|net| Interface {
                    stats: NetworkStats { network_id: net.id.clone(), ..NetworkStats::default() },
                    ..Interface::default()
                })
                .collect(),
            ..Node::default()
        };
        Sim {
            sc,
            now: Rational::zero(),
            queue: BinaryHeap::new(),
            seq: 0,
            latency_rng: sim_rng(sc.seed, LATENCY_STREAM),
            handshake_rng: sim_rng(sc.seed, HANDSHAKE_STREAM),
            host,
            node,
            to_node: Vec::new(),
            to_host: Vec::new(),
            transcript: record.then(Vec::new),
            handshakes: Vec::new(),
            allocations: Vec::new(),
            malformed: 0,
            flow_by_name: sc.flows.flows.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect(),
        }
    }

    fn schedule(&mut self, time: Rational, kind: SimEventKind) {
        self.seq += 1;
        self.queue.push(Reverse(SimEvent { time, kind, seq: self.seq }));
    }

    fn execute(mut self) -> (SimReport, Option<Vec<TranscriptEntry>>) {
        let table = self.allocate();
        self.node.active = table.clone();
        self.snapshot(&table);
        let mfea = self.mfea(&table);
        self.send_to_host(NodeMessage::Mfea(mfea));
        self.pump();
        for (i, ev) in self.sc.events.iter().enumerate() {
            self.schedule(ev.time(), SimEventKind::NetworkChange { event: i });
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            self.now = ev.time;
            match ev.kind {
                SimEventKind::NetworkChange { event } => self.network_change(event),
                SimEventKind::ReallocStart => self.realloc_start(),
                SimEventKind::ReallocComplete => self.realloc_complete(),
                SimEventKind::EmitMessage { flow, generation } => self.emit(flow, generation),
                SimEventKind::Delivery { message, .. } => self.deliver(message),
            }
            self.pump();
        }
        let report = self.report();
        (report, self.transcript)
    }

    fn record(&mut self, direction: Direction, bytes: &[u8]) {
        if let Some(t) = &mut self.transcript {
            t.push(TranscriptEntry {
                time: self.now,
                direction,
                frame: String::from_utf8_lossy(&bytes[..bytes.len() - 1]).into_owned(),
            });
        }
    }

    fn send_to_host(&mut self, msg: NodeMessage) {
        let bytes = encode_frame(&msg.encode());
        self.record(Direction::NodeToHost, &bytes);
        self.to_host.extend_from_slice(&bytes);
    }

    fn send_to_node(&mut self, msg: HostMessage) {
        let bytes = encode_frame(&msg.encode());
        self.record(Direction::HostToNode, &bytes);
        self.to_node.extend_from_slice(&bytes);
    }

    /// Delivers queued link bytes in both directions until both are idle.
    fn pump(&mut self) {
        while !self.to_node.is_empty() || !self.to_host.is_empty() {
            let bytes = std::mem::take(&mut self.to_node);
            for frame in self.node.decoder.push(&bytes) {
                match frame.map_err(|_| ()).and_then(|f| HostMessage::decode(&f.body).map_err(|_| ())) {
                    Ok(msg) => self.node_receive(msg),
                    Err(()) => self.malformed += 1,
                }
            }
            let bytes = std::mem::take(&mut self.to_host);
            for frame in self.host.decoder.push(&bytes) {
                match frame.map_err(|_| ()).and_then(|f| NodeMessage::decode(&f.body).map_err(|_| ())) {
                    Ok(msg) => self.host_receive(msg),
                    Err(()) => self.malformed += 1,
                }
            }
        }
    }

    // ---- node side ----

    fn allocate(&self) -> NodeTable {
        let avail: Vec<usize> = (0..self.sc.networks.len()).filter(|&j| self.node.available[j]).collect();
        let nets: Vec<NetworkProfile> = avail.iter().map(|&j| self.sc.networks[j].clone()).collect();
        let problem: AllocationProblem<Utilization> =
            AllocationProblem::new(&self.sc.flows.flows, &nets, self.sc.l_max(), self.sc.factor);
        let table = self.sc.algorithm.run(&problem, false).expect("unconstrained run always succeeds");
        (0..self.sc.flows.len())
            .map(|i| table.get(i).map(|a| (avail[a.network], a.level)))
            .collect()
    }

    fn mfea(&self, table: &NodeTable) -> Vec<MfeaEntry> {
        table
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| {
                let (net, level) = (*slot)?;
                let flow = &self.sc.flows.flows[i];
                let qos = flow.qos_at(level).expect("allocated level is defined");
                Some(MfeaEntry {
                    payload_size: qos.message_size_bytes,
                    network: self.sc.networks[net].name.clone(),
                    period: qos.min_interval,
                    flow: flow.name.clone(),
                    level,
                })
            })
            .collect()
    }

    fn snapshot(&mut self, table: &NodeTable) {
        let entries = table
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| {
                slot.map(|(net, level)| AllocatedFlow {
                    flow_id: self.sc.flows.flows[i].id.clone(),
                    network_id: self.sc.networks[net].id.clone(),
                    level,
                })
            })
            .collect();
        let available = (0..self.sc.networks.len())
            .filter(|&j| self.node.available[j])
            .map(|j| self.sc.networks[j].id.clone())
            .collect();
        self.allocations.push(AllocationSnapshot { time: self.now, available, entries });
    }

    fn network_change(&mut self, index: usize) {
        let ev = &self.sc.events[index];
        let j = self.sc.networks.iter().position(|n| n.id == ev.network()).expect("validated");
        self.node.available[j] = ev.is_up();
        if !ev.is_up() {
            let lost: Vec<u64> =
                self.node.in_flight.iter().filter(|(_, &(_, net))| net == j).map(|(&id, _)| id).collect();
            for id in lost {
                let (flow, _) = self.node.in_flight.remove(&id).expect("listed above");
                self.node_error(flow, ErrorReason::NotDelivered);
            }
        }
        if self.node.handshake_start.is_some() {
            self.node.realloc_queued = true;
        } else if !self.node.realloc_scheduled {
            self.node.realloc_scheduled = true;
            self.schedule(self.now, SimEventKind::ReallocStart);
        }
    }

    fn realloc_start(&mut self) {
        self.node.realloc_scheduled = false;
        self.node.handshake_start = Some(self.now);
        self.send_to_host(NodeMessage::Control(ControlMessage::ReallocInit));
        let table = self.allocate();
        let mfea = self.mfea(&table);
        self.node.pending = Some(table);
        self.send_to_host(NodeMessage::Mfea(mfea));
    }

    fn node_receive(&mut self, msg: HostMessage) {
        match msg {
            HostMessage::App(app) => self.node_send(app),
            HostMessage::Control(ControlMessage::ReallocAccepted) => {
                if let (Some(start), Some(table)) = (self.node.handshake_start.take(), self.node.pending.take()) {
                    self.handshakes.push(Handshake { start, accepted: self.now, duration: self.now - start });
                    self.node.active = table.clone();
                    self.snapshot(&table);
                    if std::mem::take(&mut self.node.realloc_queued) {
                        self.node.realloc_scheduled = true;
                        self.schedule(self.now, SimEventKind::ReallocStart);
                    }
                }
            }
            HostMessage::Control(_) => self.malformed += 1,
        }
    }

    fn node_error(&mut self, flow: usize, reason: ErrorReason) {
        let name = self.sc.flows.flows[flow].name.clone();
        self.send_to_host(NodeMessage::Control(ControlMessage::Err(name, reason)));
    }

    fn node_send(&mut self, app: AppMessage) {
        let Some(&flow) = self.flow_by_name.get(app.flow_name.as_str()) else {
            self.malformed += 1;
            return;
        };
        let net = match self.node.active[flow] {
            Some((net, level)) if level == app.level => net,
            _ => return self.node_error(flow, ErrorReason::NotAllocated),
        };
        if !self.node.available[net] {
            return self.node_error(flow, ErrorReason::NotDelivered);
        }
        let profile = &self.sc.networks[net];
        let now = self.now;
        let iface = &mut self.node.interfaces[net];
        let day = (now / Ratio::from_integer(SECONDS_PER_DAY)).floor().to_integer();
        if day != iface.day {
            iface.day = day;
            iface.sent_today = 0;
        }
        let size = app.payload.len();
        let too_big = profile.max_payload_bytes.is_some_and(|cap| size > cap as usize);
        let over_budget = profile.max_messages_per_day.is_some_and(|cap| iface.sent_today >= cap);
        let too_soon = match (profile.min_gap, iface.last_send) {
            (Some(gap), Some(last)) => now - last < gap,
            _ => false,
        };
        if too_big || over_budget || too_soon {
            iface.stats.budget_violations_avoided += 1;
            return self.node_error(flow, ErrorReason::NotDelivered);
        }
        iface.last_send = Some(now);
        iface.sent_today += 1;
        iface.stats.messages += 1;
        iface.stats.bytes += size as u64;
        let latency_ms = match profile.latency {
            LatencyModel::Fixed(ms) => ms,
            LatencyModel::Uniform(lo, hi) => self.latency_rng.gen_range(lo..=hi),
        };
        let id = self.node.next_message;
        self.node.next_message += 1;
        self.node.in_flight.insert(id, (flow, net));
        let at = now + Ratio::new(i128::from(latency_ms), 1000);
        self.schedule(at, SimEventKind::Delivery { flow, message: id });
    }

    fn deliver(&mut self, message: u64) {
        if let Some((flow, _)) = self.node.in_flight.remove(&message) {
            let name = self.sc.flows.flows[flow].name.clone();
            self.send_to_host(NodeMessage::Control(ControlMessage::Ack(name)));
        }
    }

    // ---- host side ----

    fn host_receive(&mut self, msg: NodeMessage) {
        match msg {
            NodeMessage::Mfea(entries) => {
                if self.host.paused {
                    self.host.pending_mfea = Some(entries);
                    let d = handshake_duration_model(&self.sc.handshake, &mut self.handshake_rng);
                    self.schedule(self.now + d, SimEventKind::ReallocComplete);
                } else {
                    self.install(entries);
                }
            }
            NodeMessage::Control(ControlMessage::ReallocInit) => {
                self.host.paused = true;
                for g in &mut self.host.generation {
                    *g += 1;
                }
            }
            NodeMessage::Control(ControlMessage::Ack(name)) => self.resolve(&name, None),
            NodeMessage::Control(ControlMessage::Err(name, reason)) => self.resolve(&name, Some(reason)),
            NodeMessage::Control(ControlMessage::ReallocAccepted) => self.malformed += 1,
        }
    }

    fn realloc_complete(&mut self) {
        let entries = self.host.pending_mfea.take().unwrap_or_default();
        self.host.paused = false;
        self.install(entries);
        self.send_to_node(HostMessage::Control(ControlMessage::ReallocAccepted));
    }

    /// Replaces every generator thread according to an MFEA.
    fn install(&mut self, entries: Vec<MfeaEntry>) {
        let mut by_name: BTreeMap<String, MfeaEntry> =
            entries.into_iter().map(|e| (e.flow.clone(), e)).collect();
        for i in 0..self.sc.flows.len() {
            let flow = &self.sc.flows.flows[i];
            let assignment = by_name.remove(&flow.name).map(|e| Assignment {
                level: e.level,
                period: e.period.seconds(),
                payload: e.payload_size,
            });
            self.host.assignments[i] = assignment;
            self.host.generation[i] += 1;
            let period = self.emission(i).period;
            let first = self.now + period;
            if first <= self.sc.duration {
                let generation = self.host.generation[i];
                self.schedule(first, SimEventKind::EmitMessage { flow: i, generation });
            }
        }
    }

    /// What flow `i` currently emits; unallocated flows use their lowest level.
    fn emission(&self, i: usize) -> Assignment {
        self.host.assignments[i].unwrap_or_else(|| {
            let flow = &self.sc.flows.flows[i];
            let level = flow.lowest_level().expect("validated flows define a level");
            let qos = flow.qos_at(level).expect("lowest level is defined");
            Assignment { level, period: qos.min_interval.seconds(), payload: qos.message_size_bytes }
        })
    }

    fn emit(&mut self, flow: usize, generation: u64) {
        if self.host.paused || generation != self.host.generation[flow] {
            return;
        }
        let a = self.emission(flow);
        self.host.stats[flow][a.level.index()].sent += 1;
        self.host.outstanding[flow].push_back(a.level);
        let msg = AppMessage {
            flow_name: self.sc.flows.flows[flow].name.clone(),
            level: a.level,
            payload: vec![b'x'; a.payload as usize],
        };
        self.send_to_node(HostMessage::App(msg));
        let next = self.now + a.period;
        if next <= self.sc.duration {
            self.schedule(next, SimEventKind::EmitMessage { flow, generation });
        }
    }

    /// Attributes an ACK or ERR to the flow's oldest outstanding message.
    fn resolve(&mut self, name: &str, error: Option<ErrorReason>) {
        let Some(&flow) = self.flow_by_name.get(name) else {
            self.malformed += 1;
            return;
        };
        let Some(level) = self.host.outstanding[flow].pop_front() else {
            self.malformed += 1;
            return;
        };
        let s = &mut self.host.stats[flow][level.index()];
        match error {
            None => s.delivered += 1,
            Some(ErrorReason::NotAllocated) => s.err_not_allocated += 1,
            Some(ErrorReason::NotDelivered) => s.err_not_delivered += 1,
        }
    }

    fn report(&self) -> SimReport {
        let l_max = usize::from(self.sc.l_max());
        let flows: Vec<FlowStats> = self
            .sc
            .flows
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let levels: Vec<LevelStats> = self.host.stats[i]
                    .iter()
                    .filter(|s| s.sent > 0 || CriticalityLevel::new(s.level).is_some_and(|l| f.defines(l)))
                    .copied()
                    .collect();
                let sum = |g: fn(&LevelStats) -> u64| levels.iter().map(g).sum::<u64>();
                let (sent, delivered) = (sum(|s| s.sent), sum(|s| s.delivered));
                FlowStats {
                    flow_id: f.id.clone(),
                    name: f.name.clone(),
                    sent,
                    delivered,
                    err_not_allocated: sum(|s| s.err_not_allocated),
                    err_not_delivered: sum(|s| s.err_not_delivered),
                    delivered_fraction: (sent > 0).then(|| delivered as f64 / sent as f64),
                    levels,
                }
            })
            .collect();
        let delivered_fraction = (0..l_max)
            .map(|l| {
                let sent: u64 = self.host.stats.iter().map(|s| s[l].sent).sum();
                let delivered: u64 = self.host.stats.iter().map(|s| s[l].delivered).sum();
                LevelFraction {
                    level: l as u8 + 1,
                    sent,
                    delivered,
                    fraction: (sent > 0).then(|| delivered as f64 / sent as f64),
                }
            })
            .collect();
        SimReport {
            schema_version: SIM_REPORT_SCHEMA_VERSION,
            rng: RNG_NAME.into(),
            seed: self.sc.seed,
            algorithm: self.sc.algorithm.name(),
            factor: self.sc.factor,
            duration_seconds: self.sc.duration,
            flows,
            networks: self.node.interfaces.iter().map(|i| i.stats.clone()).collect(),
            handshakes: self.handshakes.clone(),
            delivered_fraction,
            allocations: self.allocations.clone(),
            malformed_frames: self.malformed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::assisted_living;
    use crate::netmodel::{builtin_profile, BuiltinProfile};

    fn fipy(kinds: &[BuiltinProfile]) -> Scenario {
        let mut sc = Scenario::new(assisted_living(), kinds.iter().map(|&k| builtin_profile(k)).collect());
        sc.factor = 1;
        sc
    }

    fn conserved(r: &SimReport) -> bool {
        r.flows.iter().all(|f| f.sent == f.delivered + f.err_not_allocated + f.err_not_delivered)
            && r.flows.iter().all(|f| {
                f.levels.iter().all(|s| s.sent == s.delivered + s.err_not_allocated + s.err_not_delivered)
            })
    }

    #[test]
    fn handshake_model_bounds() {
        let mut rng = sim_rng(7, HANDSHAKE_STREAM);
        let lo = Ratio::new(13, 10);
        let hi = Ratio::new(3, 2);
        for _ in 0..200 {
            let d = handshake_duration_model(&HandshakeModel::default(), &mut rng);
            assert!(d >= lo && d <= hi);
        }
        let fixed = HandshakeModel::Fixed(Seconds(Rational::zero()));
        assert_eq!(handshake_duration_model(&fixed, &mut rng), Rational::zero());
        let a = handshake_duration_model(&HandshakeModel::default(), &mut sim_rng(3, 1));
        let b = handshake_duration_model(&HandshakeModel::default(), &mut sim_rng(3, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn wifi_only_delivers_everything_at_level_one() {
        let r = run(&fipy(&[BuiltinProfile::WifiFipy])).unwrap();
        assert!(conserved(&r));
        for f in &r.flows[..7] {
            assert!(f.sent > 0);
            assert_eq!(f.delivered, f.sent, "flow {}", f.flow_id);
            assert!(f.levels.iter().filter(|s| s.level != 1).all(|s| s.sent == 0));
        }
        assert!(r.handshakes.is_empty());
        assert_eq!(r.malformed_frames, 0);
        // flow 1: every 10 s over 600 s, first at t = 10
        assert_eq!(r.flows[0].sent, 60);
        assert_eq!(r.flows[7].sent, 0);
    }

    #[test]
    fn sigfox_only_levels_and_constraints() {
        let r = run(&fipy(&[BuiltinProfile::SigfoxFipy])).unwrap();
        assert!(conserved(&r));
        let levels: Vec<u8> = r.allocations[0].entries.iter().map(|e| e.level.get()).collect();
        assert_eq!(levels, vec![2, 2, 1, 2, 1, 2, 2, 1]);
        // 40 B level-2 messages exceed the 12 B payload cap
        assert_eq!(r.flows[0].delivered, 0);
        assert!(r.networks[0].budget_violations_avoided > 0);
        assert!(r.networks[0].messages <= 140);
    }

    #[test]
    fn wifi_loss_single_handshake_and_lora_afterwards() {
        let mut sc = fipy(&[BuiltinProfile::WifiFipy, BuiltinProfile::LoraSf7Fipy]);
        sc.events.push(AvailabilityEvent::NetworkDown {
            network: "wifi".into(),
            time_seconds: Ratio::from_integer(300),
        });
        let (r, transcript) = run_with_transcript(&sc).unwrap();
        assert!(conserved(&r));
        assert_eq!(r.handshakes.len(), 1);
        let h = &r.handshakes[0];
        assert_eq!(h.start, Ratio::from_integer(300));
        assert!(h.duration >= Ratio::new(13, 10) && h.duration <= Ratio::new(3, 2));
        let inside = transcript
            .iter()
            .filter(|e| e.direction == Direction::HostToNode && e.frame.contains(":<"))
            .filter(|e| e.time > h.start && e.time < h.accepted)
            .count();
        assert_eq!(inside, 0);
        let after = r.allocations.last().unwrap();
        assert!(after.entries.iter().all(|e| e.network_id == "lora"));
        assert_eq!(after.available, vec!["lora".to_string()]);
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut sc = fipy(&[BuiltinProfile::WifiFipy, BuiltinProfile::LoraSf7Fipy, BuiltinProfile::SigfoxFipy]);
        sc.seed = 99;
        sc.events.push(AvailabilityEvent::NetworkDown { network: "wifi".into(), time_seconds: Ratio::from_integer(100) });
        sc.events.push(AvailabilityEvent::NetworkUp { network: "wifi".into(), time_seconds: Ratio::from_integer(400) });
        let a = run(&sc).unwrap().to_json();
        let b = run(&sc).unwrap().to_json();
        assert_eq!(a, b);
        assert!(a.contains("\"rng\": \"chacha8\""));
    }

    #[test]
    fn change_during_handshake_is_queued() {
        let mut sc = fipy(&[BuiltinProfile::WifiFipy, BuiltinProfile::NbiotFipy, BuiltinProfile::LoraSf7Fipy]);
        sc.events.push(AvailabilityEvent::NetworkDown { network: "wifi".into(), time_seconds: Ratio::from_integer(100) });
        sc.events.push(AvailabilityEvent::NetworkDown { network: "nbiot".into(), time_seconds: Ratio::new(1005, 10) });
        let r = run(&sc).unwrap();
        assert_eq!(r.handshakes.len(), 2);
        assert_eq!(r.handshakes[1].start, r.handshakes[0].accepted);
        assert!(conserved(&r));
    }

    #[test]
    fn in_flight_on_lost_network_is_not_delivered() {
        let mut sc = fipy(&[BuiltinProfile::NbiotFipy, BuiltinProfile::WifiFipy]);
        sc.handshake = HandshakeModel::Fixed(Seconds(Rational::zero()));
        // NB-IoT latency is 576 ms; flow 2 emits at t = 5 and is in flight at 5.1
        sc.events.push(AvailabilityEvent::NetworkDown { network: "nbiot".into(), time_seconds: Ratio::new(51, 10) });
        let r = run(&sc).unwrap();
        let lost: u64 = r.flows.iter().map(|f| f.err_not_delivered).sum();
        assert!(lost >= 1);
        assert!(conserved(&r));
        assert_eq!(r.handshakes[0].duration, Rational::zero());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut sc = fipy(&[BuiltinProfile::WifiFipy]);
        sc.duration = Rational::zero();
        assert!(matches!(run(&sc), Err(Error::InvalidScenario(_))));
        let mut sc = fipy(&[BuiltinProfile::WifiFipy]);
        sc.events.push(AvailabilityEvent::NetworkDown { network: "lora".into(), time_seconds: Ratio::from_integer(1) });
        assert!(matches!(run(&sc), Err(Error::InvalidScenario(_))));
        let mut sc = fipy(&[BuiltinProfile::WifiFipy]);
        sc.events.push(AvailabilityEvent::NetworkDown { network: "wifi".into(), time_seconds: Ratio::from_integer(700) });
        assert!(matches!(run(&sc), Err(Error::InvalidScenario(_))));
        let mut sc = fipy(&[BuiltinProfile::WifiFipy]);
        sc.events.push(AvailabilityEvent::NetworkUp { network: "wifi".into(), time_seconds: Ratio::from_integer(7) });
        assert!(matches!(run(&sc), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn scenario_json_round() {
        let text = r#"{
            "flows": {"l_max": 1, "flows": [{"id": "a", "name": "alpha", "qos": {"1": {"c": 10, "t": 2}}}]},
            "networks": [{"builtin": "wifi_fipy"}],
            "factor": 1,
            "algorithm": "cabf",
            "duration_seconds": 10,
            "seed": 5,
            "handshake": {"uniform": [1.3, "3/2"]},
            "events": []
        }"#;
        let sc = Scenario::from_json(text, Path::new(".")).unwrap();
        assert_eq!(sc.algorithm, Algorithm::Cabf);
        assert_eq!(sc.handshake, HandshakeModel::default());
        let r = run(&sc).unwrap();
        assert_eq!(r.flows[0].sent, 5);
        assert_eq!(r.flows[0].delivered, 5);
        assert!(Scenario::from_json(r#"{"flows": {"l_max": 1, "flows": []}, "networks": [], "duration_seconds": 1, "bogus": 1}"#, Path::new(".")).is_err());
    }
}
