use mimonet::engine::{run, run_traced, SimConfig, SimTime};
use mimonet::mac::MimoPolicy;
use mimonet::phy::BerModel;
use mimonet::topology::{generate, GenerateParams, Topology};

fn small() -> Topology {
    generate(&GenerateParams { n_nodes: 16, width: 600.0, height: 600.0, target_degree: 6.0, ..Default::default() }, 4)
        .unwrap()
}

fn cfg(policy: MimoPolicy, seed: u64) -> SimConfig {
    SimConfig { duration: SimTime::from_secs_f64(3.0), seed, policy, ..Default::default() }
}

#[test]
fn replay_is_byte_identical() {
    let t = small();
    for policy in [MimoPolicy::Siso, MimoPolicy::HybC { n: 3, sinr_min_db: 5.0, sinr_max_db: 23.0 }] {
        let a = run(&cfg(policy, 9), &t).to_csv_rows("r", SimTime::ZERO);
        let b = run(&cfg(policy, 9), &t).to_csv_rows("r", SimTime::ZERO);
        assert_eq!(a, b);
        let c = run(&cfg(policy, 10), &t).to_csv_rows("r", SimTime::ZERO);
        assert_ne!(a, c);
    }
}

#[test]
fn throughput_adds_up_over_sources() {
    let t = small();
    let r = run(&cfg(MimoPolicy::Alamouti { n: 2 }, 2), &t);
    let per: Vec<f64> = r.source_throughputs(SimTime::ZERO);
    assert_eq!(per.len(), t.flows().len());
    let total: f64 = per.iter().sum();
    assert!((total - r.total_delivered_bits() as f64 / 3.0).abs() < 1e-6);
    assert!((r.mean_throughput_bps(SimTime::ZERO) - total / per.len() as f64).abs() < 1e-9);
    let bits: u64 = r.nodes.iter().map(|n| n.delivered_bits(SimTime::ZERO)).sum();
    assert_eq!(bits, r.total_delivered_bits());
}

#[test]
fn frames_are_conserved_per_source() {
    let t = small();
    let c = cfg(MimoPolicy::Vblast { m: 2, n: 3 }, 3);
    let (r, trace) = run_traced(&c, &t, &BerModel::default());
    let cap = c.mac.queue_capacity as u64;
    for &(s, _) in t.flows() {
        let n = &r.nodes[s.index()];
        let successes = trace
            .iter()
            .filter(|x| {
                x.node == s && matches!(x.event, mimonet::engine::TraceEvent::Mac(mimonet::mac::MacTrace::Success { .. }))
            })
            .count() as u64;
        let delivered = n.frames_delivered(SimTime::ZERO);
        // Every packet that left the queue was acknowledged or dropped.
        let left = successes + n.dropped_retry;
        assert!(delivered >= successes && delivered <= left + 1, "{s}");
        // The source stays backlogged to the end of the run.
        assert_eq!(n.queued_ages.len() as u64, cap, "{s}");
        assert_eq!(n.dropped_queue, 0);
        let bits = n.delivered_bits(SimTime::ZERO);
        assert_eq!(bits, delivered * c.mac.payload_bits());
    }
}

#[test]
fn hyb_c_with_unreachable_max_is_hyb_a() {
    let t = small();
    let m = BerModel::default();
    let a = run_traced(&cfg(MimoPolicy::HybA { n: 3, sinr_min_db: 8.0 }, 5), &t, &m);
    let c = run_traced(&cfg(MimoPolicy::HybC { n: 3, sinr_min_db: 8.0, sinr_max_db: 1e9 }, 5), &t, &m);
    assert_eq!(a.1, c.1);
    assert_eq!(a.0, c.0);
}

#[test]
fn hyb_c_with_unreachable_min_is_hyb_b() {
    let t = small();
    let m = BerModel::default();
    let b = run_traced(&cfg(MimoPolicy::HybB { n: 4, sinr_max_db: 20.0 }, 6), &t, &m);
    let c = run_traced(&cfg(MimoPolicy::HybC { n: 4, sinr_min_db: -1e9, sinr_max_db: 20.0 }, 6), &t, &m);
    assert_eq!(b.1, c.1);
}

#[test]
fn hyb_a_below_every_sinr_matches_pure_vblast() {
    let t = small();
    let a = run(&cfg(MimoPolicy::HybA { n: 3, sinr_min_db: -1e9 }, 7), &t);
    let v = run(&cfg(MimoPolicy::Vblast { m: 2, n: 3 }, 7), &t);
    assert_eq!(a.nodes, v.nodes);
    assert_eq!(a.mode_usage, v.mode_usage);
}

#[test]
fn hyb_a_above_every_sinr_matches_pure_alamouti() {
    let t = small();
    let a = run(&cfg(MimoPolicy::HybA { n: 3, sinr_min_db: 1e9 }, 8), &t);
    let v = run(&cfg(MimoPolicy::Alamouti { n: 3 }, 8), &t);
    assert_eq!(a.nodes, v.nodes);
}
