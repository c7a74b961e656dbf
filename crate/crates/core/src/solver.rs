//! Exact maximiser of the allocation objective by depth-first branch and
//! bound.
//!
//! Flows are branched in input order. For each flow the options are tried as
//! (level ascending) × (network in declaration order), then "unallocated".
//! Only strictly better leaves replace the incumbent, so among co-optimal
//! tables the lexicographically first in that exploration order is returned.

use crate::allocators::{AllocationProblem, AllocationTable};
use crate::flows::CriticalityLevel;
use crate::scalar::Bandwidth;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("no allocation serves every flow")]
    Infeasible,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub require_all: bool,
    /// Disable to run the unpruned search (used to check bound admissibility).
    pub prune: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { require_all: false, prune: true }
    }
}

/// Objective contribution of one flow served at `level`.
pub fn level_score(level: CriticalityLevel, l_max: u8) -> u64 {
    u64::from(1 + l_max - level.get())
}

/// Admissible bound for a partial assignment: every remaining flow is
/// assumed to be served at level 1.
pub fn objective_upper_bound(current_objective: u64, remaining_flows: usize, l_max: u8) -> u64 {
    current_objective + remaining_flows as u64 * u64::from(l_max)
}

pub fn exact_solve<S: Bandwidth>(
    problem: &AllocationProblem<S>,
    require_all: bool,
) -> Result<AllocationTable<S>, SolveError> {
    exact_solve_with(problem, SearchOptions { require_all, ..SearchOptions::default() })
}

pub fn exact_solve_with<S: Bandwidth>(
    problem: &AllocationProblem<S>,
    options: SearchOptions,
) -> Result<AllocationTable<S>, SolveError> {
    let mut search = Search {
        problem,
        options,
        table: AllocationTable::empty(problem),
        best: None,
        nodes: 0,
    };
    search.descend(0, 0);
    search.best.map(|(_, t)| t).ok_or(SolveError::Infeasible)
}

/// Number of search nodes visited, for diagnostics and tests.
pub fn count_nodes<S: Bandwidth>(problem: &AllocationProblem<S>, options: SearchOptions) -> u64 {
    let mut search = Search {
        problem,
        options,
        table: AllocationTable::empty(problem),
        best: None,
        nodes: 0,
    };
    search.descend(0, 0);
    search.nodes
}

struct Search<'a, S> {
    problem: &'a AllocationProblem<S>,
    options: SearchOptions,
    table: AllocationTable<S>,
    best: Option<(u64, AllocationTable<S>)>,
    nodes: u64,
}

impl<S: Bandwidth> Search<'_, S> {
    fn descend(&mut self, flow: usize, objective: u64) {
        self.nodes += 1;
        let n = self.problem.n_flows();
        let l_max = self.problem.l_max();
        if let Some((incumbent, _)) = &self.best {
            if self.options.prune && objective_upper_bound(objective, n - flow, l_max) <= *incumbent {
                return;
            }
        }
        if flow == n {
            if self.best.as_ref().is_none_or(|(inc, _)| objective > *inc) {
                self.best = Some((objective, self.table.clone()));
            }
            return;
        }
        let levels: Vec<CriticalityLevel> = self.problem.levels(flow).collect();
        for level in levels {
            for network in 0..self.problem.n_networks() {
                if self.table.place(self.problem, flow, network, level).is_ok() {
                    self.descend(flow + 1, objective + level_score(level, l_max));
                    self.table.remove(flow);
                }
            }
        }
        if !self.options.require_all {
            self.descend(flow + 1, objective);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::assisted_living;
    use crate::metrics::objective;
    use crate::netmodel::table2_networks;
    use crate::scalar::Utilization;

    fn u(bps: u64) -> Utilization {
        Utilization::from_bps(bps)
    }

    #[test]
    fn bound_examples() {
        assert_eq!(objective_upper_bound(0, 8, 3), 24);
        assert_eq!(objective_upper_bound(10, 4, 3), 22);
        assert_eq!(objective_upper_bound(17, 0, 3), 17);
    }

    #[test]
    fn table2_optimum_is_22_with_paper_cells() {
        let flows = assisted_living();
        let p: AllocationProblem<Utilization> =
            AllocationProblem::new(&flows.flows, &table2_networks(), 3, 8);
        let t = exact_solve(&p, false).unwrap();
        t.check_invariants(&p).unwrap();
        assert_eq!(objective(&t, 3), 22);
        let levels: Vec<u8> = t.entries().map(|a| a.level.get()).collect();
        assert_eq!(levels, vec![1, 1, 1, 1, 1, 2, 2, 1]);
        assert!(t.entries().all(|a| a.network == 0));
    }

    #[test]
    fn nothing_fits_gives_empty_table() {
        let p = AllocationProblem::from_parts(2, vec![vec![Some(u(10)), Some(u(9))]], vec![u(5)]);
        let t = exact_solve(&p, false).unwrap();
        assert!(t.is_empty());
        assert_eq!(objective(&t, 2), 0);
        assert_eq!(exact_solve(&p, true), Err(SolveError::Infeasible));
    }

    #[test]
    fn require_all_trades_objective_for_coverage() {
        // Unconstrained optimum serves flow 0 at level 1 alone (score 2);
        // serving both forces level 2 for each (score 1 + 1).
        let p = AllocationProblem::from_parts(
            2,
            vec![vec![Some(u(10)), Some(u(5))], vec![None, Some(u(5))]],
            vec![u(10)],
        );
        let free = exact_solve(&p, false).unwrap();
        assert_eq!(objective(&free, 2), 2);
        let all = exact_solve(&p, true).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(objective(&all, 2), 2);
        assert_eq!(all.get(0).unwrap().level.get(), 2);
    }

    #[test]
    fn empty_instance() {
        let p: AllocationProblem<Utilization> = AllocationProblem::from_parts(3, vec![], vec![]);
        assert!(exact_solve(&p, true).unwrap().is_empty());
    }

    #[test]
    fn pruning_visits_fewer_nodes() {
        let flows = assisted_living();
        let p: AllocationProblem<Utilization> =
            AllocationProblem::new(&flows.flows, &table2_networks(), 3, 8);
        let pruned = count_nodes(&p, SearchOptions::default());
        let full = count_nodes(&p, SearchOptions { prune: false, ..SearchOptions::default() });
        assert!(pruned < full);
        let a = exact_solve_with(&p, SearchOptions::default()).unwrap();
        let b = exact_solve_with(&p, SearchOptions { prune: false, ..SearchOptions::default() }).unwrap();
        assert_eq!(a, b);
    }
}
