use std::path::Path;

use num_rational::Ratio;
use proptest::prelude::*;
use resilient_alloc::allocators::Algorithm;
use resilient_alloc::flows::assisted_living;
use resilient_alloc::netmodel::{builtin_profile, BuiltinProfile};
use resilient_alloc::scalar::Rational;
use resilient_alloc::simulator::{run, run_with_transcript, AvailabilityEvent, Direction, Scenario};

const FIPY: [BuiltinProfile; 4] = [
    BuiltinProfile::WifiFipy,
    BuiltinProfile::NbiotFipy,
    BuiltinProfile::LoraSf7Fipy,
    BuiltinProfile::SigfoxFipy,
];

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// A scenario over a FiPy subset with up to three availability toggles.
fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    (1usize..16, any::<u64>(), proptest::collection::vec((0usize..4, 0i128..600), 0..3), 0usize..15)
        .prop_map(|(mask, seed, toggles, alg)| {
            let nets = (0..4).filter(|j| mask & (1 << j) != 0).map(|j| builtin_profile(FIPY[j])).collect();
            let mut sc = Scenario::new(assisted_living(), nets);
            sc.factor = 1;
            sc.seed = seed;
            sc.duration = Ratio::from_integer(600);
            sc.algorithm = Algorithm::all()[alg];
            let mut up: Vec<bool> = vec![true; sc.networks.len()];
            let mut toggles = toggles;
            toggles.sort_by_key(|t| t.1);
            for (j, t) in toggles {
                let j = j % sc.networks.len();
                let network = sc.networks[j].id.clone();
                let time_seconds = Ratio::from_integer(t);
                sc.events.push(if up[j] {
                    AvailabilityEvent::NetworkDown { network, time_seconds }
                } else {
                    AvailabilityEvent::NetworkUp { network, time_seconds }
                });
                up[j] = !up[j];
            }
            sc
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conservation_and_constraints(sc in scenario_strategy()) {
        let (r, transcript) = run_with_transcript(&sc).unwrap();
        prop_assert_eq!(r.malformed_frames, 0);
        for f in &r.flows {
            prop_assert_eq!(f.sent, f.delivered + f.err_not_allocated + f.err_not_delivered);
        }
        for (net, stats) in sc.networks.iter().zip(&r.networks) {
            if let Some(cap) = net.max_messages_per_day {
                prop_assert!(stats.messages <= u64::from(cap));
            }
            // long-run rate bound: bytes·factor ≤ B·duration
            let limit = Ratio::from_integer(i128::from(net.capacity_bps)) * sc.duration;
            prop_assert!(Rational::from_integer(i128::from(stats.bytes * sc.factor)) <= limit, "{}", net.id);
        }
        // pause correctness
        for h in &r.handshakes {
            let inside = transcript.iter()
                .filter(|e| e.direction == Direction::HostToNode && !e.frame.contains("<INFO:"))
                .filter(|e| e.time > h.start && e.time < h.accepted)
                .count();
            prop_assert_eq!(inside, 0);
        }
        prop_assert_eq!(r.handshakes.len(), r.allocations.len() - 1);
    }

    #[test]
    fn payload_cap_never_exceeded(sc in scenario_strategy()) {
        let r = run(&sc).unwrap();
        for (net, stats) in sc.networks.iter().zip(&r.networks) {
            if let Some(cap) = net.max_payload_bytes {
                prop_assert!(stats.bytes <= stats.messages * u64::from(cap));
            }
        }
    }
}

#[test]
fn shipped_scenario_has_one_handshake() {
    let sc = Scenario::load(&fixture("wifi_loss.json")).unwrap();
    assert_eq!(sc.events.len(), 1);
    let r = run(&sc).unwrap();
    assert_eq!(r.handshakes.len(), 1);
    assert_eq!(r.allocations.len(), 2);
    assert!(r.allocations[1].entries.iter().all(|e| e.network_id == "lora"));
}

#[test]
fn scenario_file_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"flows": "missing.json", "networks": [], "duration_seconds": 1}"#).unwrap();
    let err = Scenario::load(&path).unwrap_err().to_string();
    assert!(err.contains("missing.json"), "{err}");
    std::fs::write(&path, "{\n  \"flows\": [}").unwrap();
    let err = Scenario::load(&path).unwrap_err().to_string();
    assert!(err.contains("bad.json") && err.contains("line 2"), "{err}");
}

#[test]
fn fixed_latency_counts_do_not_depend_on_seed() {
    let mut a = Scenario::new(assisted_living(), vec![builtin_profile(BuiltinProfile::WifiFipy)]);
    a.factor = 1;
    let mut b = a.clone();
    b.seed = 12345;
    let (ra, rb) = (run(&a).unwrap(), run(&b).unwrap());
    assert_eq!(ra.flows, rb.flows);
    assert_ne!(ra.to_json(), rb.to_json());
}
