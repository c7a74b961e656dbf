//! Criticality-aware best fit and the classic bin-packing baselines.
//!
//! All algorithms operate on an [`AllocationProblem`], a precomputed matrix
//! of per-flow, per-level demand plus per-network capacity. Flows are always
//! visited in ascending index order and networks in declaration order, so
//! every algorithm is a deterministic function of its inputs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::flows::{CriticalityLevel, FlowSpec};
use crate::netmodel::NetworkProfile;
use crate::scalar::Bandwidth;
use crate::solver::{self, SolveError};

/// Demand matrix and capacities for one allocation run.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProblem<S> {
    l_max: u8,
    /// `demand[flow][level - 1]`
    demand: Vec<Vec<Option<S>>>,
    capacity: Vec<S>,
}

impl<S: Bandwidth> AllocationProblem<S> {
    /// Builds demands as `factor · C / T` and capacities as `B` bits per second.
    pub fn new(flows: &[FlowSpec], networks: &[NetworkProfile], l_max: u8, factor: u64) -> Self {
        let demand = flows
            .iter()
            .map(|f| CriticalityLevel::all(l_max).map(|l| f.demand(l, factor)).collect())
            .collect();
        let capacity = networks
            .iter()
            .map(|n| S::from_ratio(u128::from(n.capacity_bps), 1))
            .collect();
        AllocationProblem { l_max, demand, capacity }
    }

    /// Builds a problem directly from a demand matrix.
    ///
    /// Panics if a row is longer than `l_max`.
    pub fn from_parts(l_max: u8, demand: Vec<Vec<Option<S>>>, capacity: Vec<S>) -> Self {
        let demand = demand
            .into_iter()
            .map(|mut row| {
                assert!(row.len() <= usize::from(l_max), "demand row longer than l_max");
                row.resize(usize::from(l_max), None);
                row
            })
            .collect();
        AllocationProblem { l_max, demand, capacity }
    }

    pub fn l_max(&self) -> u8 {
        self.l_max
    }

    pub fn n_flows(&self) -> usize {
        self.demand.len()
    }

    pub fn n_networks(&self) -> usize {
        self.capacity.len()
    }

    pub fn demand(&self, flow: usize, level: CriticalityLevel) -> Option<S> {
        self.demand[flow].get(level.index()).copied().flatten()
    }

    pub fn capacity(&self, network: usize) -> S {
        self.capacity[network]
    }

    pub fn capacities(&self) -> &[S] {
        &self.capacity
    }

    /// Defined levels of a flow, ascending.
    pub fn levels(&self, flow: usize) -> impl Iterator<Item = CriticalityLevel> + '_ {
        CriticalityLevel::all(self.l_max).filter(move |&l| self.demand(flow, l).is_some())
    }

    pub fn defines(&self, flow: usize, level: CriticalityLevel) -> bool {
        self.demand(flow, level).is_some()
    }
}

/// One entry `(flow, network, level)` of an allocation table. `flow` and
/// `network` are positions in the problem's input order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Allocation {
    pub flow: usize,
    pub network: usize,
    pub level: CriticalityLevel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Slot<S> {
    network: usize,
    level: CriticalityLevel,
    load: S,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PlacementError {
    #[error("flow {0} is already allocated")]
    AlreadyAllocated(usize),
    #[error("flow {flow} defines no QoS at level {level}")]
    UndefinedLevel { flow: usize, level: CriticalityLevel },
    #[error("flow {flow} does not fit on network {network}")]
    DoesNotFit { flow: usize, network: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum InvariantViolation {
    #[error("table shape does not match the problem")]
    ShapeMismatch,
    #[error("flow {flow} allocated at undefined level {level}")]
    UndefinedLevel { flow: usize, level: CriticalityLevel },
    #[error("network {0} is overloaded")]
    Overloaded(usize),
    #[error("residual of network {0} is inconsistent with its entries")]
    ResidualMismatch(usize),
}

/// The set of allocations with residual-capacity accounting.
///
/// At most one entry per flow; residual capacity never goes negative.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationTable<S> {
    slots: Vec<Option<Slot<S>>>,
    capacity: Vec<S>,
    residual: Vec<S>,
}

impl<S: Bandwidth> AllocationTable<S> {
    pub fn empty(problem: &AllocationProblem<S>) -> Self {
        AllocationTable {
            slots: vec![None; problem.n_flows()],
            capacity: problem.capacity.clone(),
            residual: problem.capacity.clone(),
        }
    }

    pub fn get(&self, flow: usize) -> Option<Allocation> {
        self.slots[flow].map(|s| Allocation { flow, network: s.network, level: s.level })
    }

    pub fn is_allocated(&self, flow: usize) -> bool {
        self.slots[flow].is_some()
    }

    /// Entries in ascending flow order.
    pub fn entries(&self) -> impl Iterator<Item = Allocation> + '_ {
        (0..self.slots.len()).filter_map(|i| self.get(i))
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_flows(&self) -> usize {
        self.slots.len()
    }

    pub fn n_networks(&self) -> usize {
        self.capacity.len()
    }

    pub fn residual(&self, network: usize) -> S {
        self.residual[network]
    }

    pub fn capacity(&self, network: usize) -> S {
        self.capacity[network]
    }

    /// Load currently placed on `network`.
    pub fn used(&self, network: usize) -> S {
        self.slots
            .iter()
            .flatten()
            .filter(|s| s.network == network)
            .fold(S::zero(), |acc, s| acc + s.load)
    }

    pub fn fits(&self, network: usize, load: S) -> bool {
        self.residual[network] >= load
    }

    pub fn place(
        &mut self,
        problem: &AllocationProblem<S>,
        flow: usize,
        network: usize,
        level: CriticalityLevel,
    ) -> Result<(), PlacementError> {
        if self.slots[flow].is_some() {
            return Err(PlacementError::AlreadyAllocated(flow));
        }
        let load = problem
            .demand(flow, level)
            .ok_or(PlacementError::UndefinedLevel { flow, level })?;
        if !self.fits(network, load) {
            return Err(PlacementError::DoesNotFit { flow, network });
        }
        self.residual[network] = self.residual[network] - load;
        self.slots[flow] = Some(Slot { network, level, load });
        Ok(())
    }

    pub fn remove(&mut self, flow: usize) -> Option<Allocation> {
        let slot = self.slots[flow].take()?;
        self.residual[slot.network] = self.residual[slot.network] + slot.load;
        Some(Allocation { flow, network: slot.network, level: slot.level })
    }

    /// Recomputes every invariant from the problem's demand matrix.
    pub fn check_invariants(&self, problem: &AllocationProblem<S>) -> Result<(), InvariantViolation> {
        if self.slots.len() != problem.n_flows() || self.capacity.len() != problem.n_networks() {
            return Err(InvariantViolation::ShapeMismatch);
        }
        let mut used = vec![S::zero(); problem.n_networks()];
        for entry in self.entries() {
            let load = problem.demand(entry.flow, entry.level).ok_or(
                InvariantViolation::UndefinedLevel { flow: entry.flow, level: entry.level },
            )?;
            used[entry.network] = used[entry.network] + load;
        }
        for (j, &u) in used.iter().enumerate() {
            if u > problem.capacity(j) {
                return Err(InvariantViolation::Overloaded(j));
            }
            if S::EXACT && self.residual[j] + u != problem.capacity(j) {
                return Err(InvariantViolation::ResidualMismatch(j));
            }
        }
        Ok(())
    }
}

/// Network selection rule when several networks fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum FitRule {
    FirstFit,
    BestFit,
    WorstFit,
}

/// Returns the network chosen by `rule` for a load, or `None` if nothing fits.
/// Ties go to the earlier network in declaration order.
pub fn fit_network<S: Bandwidth>(table: &AllocationTable<S>, load: S, rule: FitRule) -> Option<usize> {
    let mut chosen: Option<(usize, S)> = None;
    for j in 0..table.n_networks() {
        if !table.fits(j, load) {
            continue;
        }
        let after = table.residual(j) - load;
        let better = match (rule, &chosen) {
            (_, None) => true,
            (FitRule::FirstFit, Some(_)) => false,
            (FitRule::BestFit, Some((_, best))) => after < *best,
            (FitRule::WorstFit, Some((_, best))) => after > *best,
        };
        if better {
            chosen = Some((j, after));
            if rule == FitRule::FirstFit {
                break;
            }
        }
    }
    chosen.map(|(j, _)| j)
}

/// The network with the smallest residual after placing `flow` at `level`.
pub fn best_fit_network<S: Bandwidth>(
    problem: &AllocationProblem<S>,
    table: &AllocationTable<S>,
    flow: usize,
    level: CriticalityLevel,
) -> Option<usize> {
    let load = problem.demand(flow, level)?;
    fit_network(table, load, FitRule::BestFit)
}

/// Relocation pass: entries whose flow defines `level` and currently sits
/// at a higher level are moved to `level` when a best fit exists; otherwise
/// the original entry is restored.
fn relocate_to<S: Bandwidth>(
    problem: &AllocationProblem<S>,
    table: &mut AllocationTable<S>,
    level: CriticalityLevel,
) {
    for flow in 0..problem.n_flows() {
        let Some(current) = table.get(flow) else { continue };
        if !problem.defines(flow, level) || current.level <= level {
            continue;
        }
        table.remove(flow);
        let target = best_fit_network(problem, table, flow, level);
        let (network, lvl) = match target {
            Some(j) => (j, level),
            None => (current.network, current.level),
        };
        table
            .place(problem, flow, network, lvl)
            .expect("relocation target or restored entry fits");
    }
}

/// New-flow pass: unallocated flows defining `level` are placed by best fit.
fn allocate_new_at<S: Bandwidth>(
    problem: &AllocationProblem<S>,
    table: &mut AllocationTable<S>,
    level: CriticalityLevel,
) {
    for flow in 0..problem.n_flows() {
        if table.is_allocated(flow) || !problem.defines(flow, level) {
            continue;
        }
        if let Some(j) = best_fit_network(problem, table, flow, level) {
            table.place(problem, flow, j, level).expect("best fit network has room");
        }
    }
}

/// Criticality-Aware Best Fit: levels from `l_max` down to 1, relocating
/// existing entries to the current level before placing new flows.
pub fn cabf<S: Bandwidth>(problem: &AllocationProblem<S>) -> AllocationTable<S> {
    let mut table = AllocationTable::empty(problem);
    for level in CriticalityLevel::all(problem.l_max()).rev() {
        relocate_to(problem, &mut table, level);
        allocate_new_at(problem, &mut table, level);
    }
    table
}

/// CABF with the two inner passes swapped: new flows first, then relocation.
pub fn cabf_inv<S: Bandwidth>(problem: &AllocationProblem<S>) -> AllocationTable<S> {
    let mut table = AllocationTable::empty(problem);
    for level in CriticalityLevel::all(problem.l_max()).rev() {
        allocate_new_at(problem, &mut table, level);
        relocate_to(problem, &mut table, level);
    }
    table
}

/// Which single level a criticality-unaware baseline uses for each flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum LevelSide {
    /// Numerically smallest defined level.
    LowestDefined,
    /// Numerically largest defined level.
    HighestDefined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct HeuristicKind {
    pub fit: FitRule,
    pub decreasing: bool,
    pub side: LevelSide,
}

impl HeuristicKind {
    /// The twelve baselines in comparison-table row order.
    pub const ALL: [HeuristicKind; 12] = {
        use FitRule::*;
        use LevelSide::*;
        const fn k(side: LevelSide, fit: FitRule, decreasing: bool) -> HeuristicKind {
            HeuristicKind { fit, decreasing, side }
        }
        [
            k(LowestDefined, FirstFit, false),
            k(LowestDefined, FirstFit, true),
            k(HighestDefined, FirstFit, false),
            k(HighestDefined, FirstFit, true),
            k(LowestDefined, WorstFit, false),
            k(LowestDefined, WorstFit, true),
            k(HighestDefined, WorstFit, false),
            k(HighestDefined, WorstFit, true),
            k(LowestDefined, BestFit, false),
            k(LowestDefined, BestFit, true),
            k(HighestDefined, BestFit, false),
            k(HighestDefined, BestFit, true),
        ]
    };

    /// Display label such as `L-FFD`.
    pub fn label(self) -> String {
        let side = match self.side {
            LevelSide::LowestDefined => 'L',
            LevelSide::HighestDefined => 'H',
        };
        let fit = match self.fit {
            FitRule::FirstFit => "FF",
            FitRule::BestFit => "BF",
            FitRule::WorstFit => "WF",
        };
        let dec = if self.decreasing { "D" } else { "" };
        format!("{side}-{fit}{dec}")
    }
}

/// Runs one baseline. Each flow is tried once, at the level chosen by `side`;
/// with `decreasing`, flows are visited by descending demand (stable).
pub fn heuristic<S: Bandwidth>(kind: HeuristicKind, problem: &AllocationProblem<S>) -> AllocationTable<S> {
    let mut candidates: Vec<(usize, CriticalityLevel, S)> = (0..problem.n_flows())
        .filter_map(|flow| {
            let mut levels = problem.levels(flow);
            let level = match kind.side {
                LevelSide::LowestDefined => levels.next(),
                LevelSide::HighestDefined => levels.last(),
            }?;
            Some((flow, level, problem.demand(flow, level)?))
        })
        .collect();
    if kind.decreasing {
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
    }
    let mut table = AllocationTable::empty(problem);
    for (flow, level, load) in candidates {
        if let Some(j) = fit_network(&table, load, kind.fit) {
            table.place(problem, flow, j, level).expect("fit network has room");
        }
    }
    table
}

/// Every allocation algorithm reachable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Algorithm {
    Cabf,
    CabfInv,
    Heuristic(HeuristicKind),
    Exact,
}

impl Algorithm {
    /// All fifteen algorithms in comparison-table row order: the twelve
    /// baselines, CABF, CABF_inv, then the exact optimum.
    pub fn all() -> Vec<Algorithm> {
        HeuristicKind::ALL
            .into_iter()
            .map(Algorithm::Heuristic)
            .chain([Algorithm::Cabf, Algorithm::CabfInv, Algorithm::Exact])
            .collect()
    }

    /// Command-line name, e.g. `cabf-inv` or `l-ffd`.
    pub fn name(self) -> String {
        match self {
            Algorithm::Cabf => "cabf".into(),
            Algorithm::CabfInv => "cabf-inv".into(),
            Algorithm::Exact => "exact".into(),
            Algorithm::Heuristic(k) => k.label().to_ascii_lowercase(),
        }
    }

    /// Row label in rendered tables.
    pub fn label(self) -> String {
        match self {
            Algorithm::Cabf => "CABF".into(),
            Algorithm::CabfInv => "CABFinv".into(),
            Algorithm::Exact => "Optimal".into(),
            Algorithm::Heuristic(k) => k.label(),
        }
    }

    /// Runs the algorithm. Only `Exact` with `require_all` can fail.
    pub fn run<S: Bandwidth>(
        self,
        problem: &AllocationProblem<S>,
        require_all: bool,
    ) -> Result<AllocationTable<S>, SolveError> {
        Ok(match self {
            Algorithm::Cabf => cabf(problem),
            Algorithm::CabfInv => cabf_inv(problem),
            Algorithm::Heuristic(kind) => heuristic(kind, problem),
            Algorithm::Exact => return solver::exact_solve(problem, require_all),
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown algorithm `{0}`")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Algorithm::all()
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| UnknownAlgorithm(s.to_string()))
    }
}

/// Orders allocations for sorting entry sets produced by different runs.
pub fn compare_entries(a: &Allocation, b: &Allocation) -> Ordering {
    (a.flow, a.level, a.network).cmp(&(b.flow, b.level, b.network))
}
