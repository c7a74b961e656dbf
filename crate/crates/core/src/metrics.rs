//! Objective value and per-run allocation reports.

use num_rational::Ratio;
use serde::Serialize;

use crate::allocators::AllocationTable;
use crate::flows::{CriticalityLevel, FlowSpec};
use crate::netmodel::{NetworkProfile, Technology};
use crate::scalar::{format_truncated, Bandwidth, Rational};
use crate::solver::level_score;

/// `Σ (1 + l_max − level)` over the table's entries.
pub fn objective<S: Bandwidth>(table: &AllocationTable<S>, l_max: u8) -> u64 {
    table.entries().map(|a| level_score(a.level, l_max)).sum()
}

/// Count of served flows per level, index `level - 1`.
pub fn level_histogram<S: Bandwidth>(table: &AllocationTable<S>, l_max: u8) -> Vec<usize> {
    let mut hist = vec![0; usize::from(l_max)];
    for a in table.entries() {
        hist[a.level.index()] += 1;
    }
    hist
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowOutcome {
    pub flow_id: String,
    pub network_id: Option<String>,
    pub level: Option<CriticalityLevel>,
    #[serde(skip)]
    pub technology: Option<Technology>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetworkLoad<S> {
    pub network_id: String,
    pub used: S,
    pub capacity: S,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocationReport<S> {
    pub objective: u64,
    pub served: usize,
    pub flows: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub percent_served: Rational,
    #[serde(serialize_with = "ser_opt_ratio")]
    pub avg_criticality: Option<Rational>,
    pub per_flow: Vec<FlowOutcome>,
    pub per_network_load: Vec<NetworkLoad<S>>,
}

fn ser_ratio<Z: serde::Serializer>(r: &Rational, s: Z) -> Result<Z::Ok, Z::Error> {
    s.serialize_f64(*r.numer() as f64 / *r.denom() as f64)
}

fn ser_opt_ratio<Z: serde::Serializer>(r: &Option<Rational>, s: Z) -> Result<Z::Ok, Z::Error> {
    match r {
        Some(r) => ser_ratio(r, s),
        None => s.serialize_none(),
    }
}

impl<S> AllocationReport<S> {
    /// Percent served as printed in tables (two decimals, truncated).
    pub fn percent_served_display(&self) -> String {
        format_truncated(&self.percent_served, 2)
    }

    /// Average criticality as printed in tables; empty when nothing is served.
    pub fn avg_criticality_display(&self) -> String {
        self.avg_criticality.map(|r| format_truncated(&r, 2)).unwrap_or_default()
    }
}

pub fn report<S: Bandwidth>(
    table: &AllocationTable<S>,
    flows: &[FlowSpec],
    networks: &[NetworkProfile],
    l_max: u8,
) -> AllocationReport<S> {
    let n = flows.len();
    let served = table.len();
    let level_sum: i128 = table.entries().map(|a| i128::from(a.level.get())).sum();
    let percent_served = if n == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(100 * served as i128, n as i128)
    };
    let avg_criticality = (served > 0).then(|| Ratio::new(level_sum, served as i128));
    let per_flow = flows
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let entry = table.get(i);
            FlowOutcome {
                flow_id: f.id.clone(),
                network_id: entry.map(|a| networks[a.network].id.clone()),
                level: entry.map(|a| a.level),
                technology: entry.map(|a| networks[a.network].technology),
            }
        })
        .collect();
    let per_network_load = networks
        .iter()
        .enumerate()
        .map(|(j, net)| NetworkLoad {
            network_id: net.id.clone(),
            used: table.used(j),
            capacity: table.capacity(j),
        })
        .collect();
    AllocationReport {
        objective: objective(table, l_max),
        served,
        flows: n,
        percent_served,
        avg_criticality,
        per_flow,
        per_network_load,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocators::{cabf, cabf_inv, heuristic, AllocationProblem, HeuristicKind};
    use crate::flows::assisted_living;
    use crate::netmodel::{builtin_profile, table2_networks, BuiltinProfile};
    use crate::scalar::Utilization;

    fn run_table2(
        f: impl Fn(&AllocationProblem<Utilization>) -> AllocationTable<Utilization>,
    ) -> AllocationReport<Utilization> {
        let flows = assisted_living();
        let nets = table2_networks();
        let p = AllocationProblem::new(&flows.flows, &nets, 3, 8);
        report(&f(&p), &flows.flows, &nets, 3)
    }

    #[test]
    fn objective_of_empty_table_is_zero() {
        let p: AllocationProblem<Utilization> = AllocationProblem::from_parts(3, vec![], vec![]);
        assert_eq!(objective(&AllocationTable::empty(&p), 3), 0);
        let r = report(&AllocationTable::empty(&p), &[], &[], 3);
        assert_eq!(r.percent_served, Ratio::from_integer(0));
        assert_eq!(r.avg_criticality, None);
        assert_eq!(r.avg_criticality_display(), "");
    }

    #[test]
    fn cabf_and_h_ff_objectives() {
        assert_eq!(run_table2(cabf).objective, 22);
        let hff = run_table2(|p| heuristic(HeuristicKind::ALL[2], p));
        assert_eq!(hff.objective, 15);
        assert_eq!(hff.avg_criticality, Some(Ratio::new(17, 8)));
        assert_eq!(hff.avg_criticality_display(), "2.12");
    }

    #[test]
    fn l_ffd_report() {
        let r = run_table2(|p| heuristic(HeuristicKind::ALL[1], p));
        assert_eq!(r.objective, 18);
        assert_eq!(r.percent_served, Ratio::from_integer(75));
        assert_eq!(r.avg_criticality, Some(Ratio::from_integer(1)));
    }

    #[test]
    fn fipy_single_network_reports() {
        let flows = assisted_living();
        for (kind, avg) in [
            (BuiltinProfile::SigfoxFipy, Ratio::new(13, 8)),
            (BuiltinProfile::WifiFipy, Ratio::from_integer(1)),
        ] {
            let nets = vec![builtin_profile(kind)];
            let p: AllocationProblem<Utilization> = AllocationProblem::new(&flows.flows, &nets, 3, 1);
            let r = report(&cabf_inv(&p), &flows.flows, &nets, 3);
            assert_eq!(r.percent_served, Ratio::from_integer(100));
            assert_eq!(r.avg_criticality, Some(avg), "{kind}");
        }
    }

    #[test]
    fn histogram_identity() {
        let flows = assisted_living();
        let nets = table2_networks();
        let p: AllocationProblem<Utilization> = AllocationProblem::new(&flows.flows, &nets, 3, 8);
        for t in [cabf(&p), heuristic(HeuristicKind::ALL[3], &p)] {
            let hist = level_histogram(&t, 3);
            let via_hist: u64 = hist.iter().enumerate().map(|(i, &c)| c as u64 * (3 - i as u64)).sum();
            assert_eq!(via_hist, objective(&t, 3));
        }
    }

    #[test]
    fn per_network_load_sums() {
        let r = run_table2(cabf);
        let wifi = &r.per_network_load[0];
        // flows 2 and 4 at level 1: 1600 + 32000
        assert_eq!(wifi.used, Utilization::from_bps(33_600));
        assert_eq!(wifi.capacity, Utilization::from_bps(64_000));
        assert_eq!(r.per_flow[5].network_id.as_deref(), Some("sigfox"));
    }
}
