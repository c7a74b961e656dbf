//! Shared random-instance generator and brute-force oracle.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::Rng;
use resilient_alloc::allocators::AllocationProblem;
use resilient_alloc::flows::{CriticalityLevel, FlowSpec, QosRequirement};
use resilient_alloc::netmodel::{NetworkProfile, Technology};
use resilient_alloc::scalar::Bandwidth;

#[derive(Clone, Debug)]
pub struct Instance {
    pub l_max: u8,
    pub flows: Vec<FlowSpec>,
    pub networks: Vec<NetworkProfile>,
}

/// Periods that divide 10^6, so micro-bps demands are exact at factor 1.
pub const EXACT_PERIODS: [u32; 6] = [1, 2, 4, 5, 8, 10];

pub fn flow(id: usize, levels: &[(u8, u32, u32)]) -> FlowSpec {
    FlowSpec {
        id: id.to_string(),
        app: String::new(),
        name: format!("flow {id}"),
        qos: levels
            .iter()
            .map(|&(l, c, t)| (CriticalityLevel::new(l).unwrap(), QosRequirement::new(c, t)))
            .collect(),
    }
}

pub fn network(id: usize, capacity: u64) -> NetworkProfile {
    NetworkProfile::bandwidth_only(&format!("n{id}"), Technology::Other, capacity)
}

impl Instance {
    pub fn problem<S: Bandwidth>(&self) -> AllocationProblem<S> {
        AllocationProblem::new(&self.flows, &self.networks, self.l_max, 1)
    }

    /// Multiplies every message size and capacity by `k`.
    pub fn scaled(&self, k: u32) -> Instance {
        let mut out = self.clone();
        for f in &mut out.flows {
            for q in f.qos.values_mut() {
                q.message_size_bytes *= k;
            }
        }
        for n in &mut out.networks {
            n.capacity_bps *= u64::from(k);
        }
        out
    }

    /// Keeps only the flows at the given indices, in order.
    pub fn restricted(&self, keep: &[usize]) -> Instance {
        Instance {
            l_max: self.l_max,
            flows: keep.iter().map(|&i| self.flows[i].clone()).collect(),
            networks: self.networks.clone(),
        }
    }
}

/// Random instance: n ≤ 5 flows, m ≤ 3 networks, l_max ≤ 3.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let l_max = rng.gen_range(1..=3u8);
    let n = rng.gen_range(0..=5usize);
    let m = rng.gen_range(1..=3usize);
    let flows = (0..n)
        .map(|i| {
            let mut levels = Vec::new();
            for l in 1..=l_max {
                if levels.is_empty() && l == l_max || rng.gen_bool(0.75) {
                    let c = rng.gen_range(1..=20u32);
                    let t = EXACT_PERIODS[rng.gen_range(0..EXACT_PERIODS.len())];
                    levels.push((l, c, t));
                }
            }
            flow(i, &levels)
        })
        .collect();
    let networks = (0..m).map(|j| network(j, rng.gen_range(1..=30u64))).collect();
    Instance { l_max, flows, networks }
}

pub fn instance_strategy() -> impl Strategy<Value = Instance> {
    any::<u64>().prop_map(|seed| {
        use rand::SeedableRng;
        random_instance(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    })
}

/// Best objective over every assignment of each flow to nothing or to a
/// (network, defined level) pair, checked by summing demands per network.
pub fn brute_force_optimum<S: Bandwidth>(p: &AllocationProblem<S>) -> u64 {
    let n = p.n_flows();
    let m = p.n_networks();
    let options: Vec<Vec<Option<(usize, CriticalityLevel)>>> = (0..n)
        .map(|i| {
            let mut opts = vec![None];
            for l in CriticalityLevel::all(p.l_max()) {
                if p.demand(i, l).is_some() {
                    opts.extend((0..m).map(|j| Some((j, l))));
                }
            }
            opts
        })
        .collect();
    let mut choice = vec![0usize; n];
    let mut best = 0;
    loop {
        let mut load = vec![S::zero(); m];
        let mut score = 0u64;
        for (i, &c) in choice.iter().enumerate() {
            if let Some((j, l)) = options[i][c] {
                load[j] = load[j] + p.demand(i, l).unwrap();
                score += u64::from(1 + p.l_max() - l.get());
            }
        }
        if (0..m).all(|j| load[j] <= p.capacity(j)) {
            best = best.max(score);
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == n {
                return best;
            }
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Served flows as `(flow, network, level)` triples.
pub fn entries<S: Bandwidth>(t: &resilient_alloc::AllocationTable<S>) -> Vec<(usize, usize, u8)> {
    t.entries().map(|a| (a.flow, a.network, a.level.get())).collect()
}
