use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use corebench::arrival::{build_schedule, merge_schedules, EventSchedule};
use corebench::clock::VirtualClock;
use corebench::dataset::{
    aggregate_neighbors, classify_totals, derive_service_mix, largest_remainder, series_to_schedule, CellLoadSeries,
    LoadClass, ServiceTraceProfile,
};
use corebench::emulator::{start_emulator, Direction, EmulatorConfig, ResourceCostModel, VnfKind};
use corebench::scenario::{load_scenario, parse_scenario, validate_scenario, ArrivalSpec, RandomProcess, Scenario};
use corebench::upli::{generate_packets, packetize, SessionPlan, SessionSource};
use proptest::prelude::*;

const BUNDLED: &[&str] = &[
    "burst_pdu_sessions.json",
    "registration_poisson.json",
    "single_vnf_profiles.json",
    "control_trace_driven.json",
    "joint_synthetic.json",
    "external_core.json",
    "upf_gaming.json",
    "upf_mixed.json",
    "diurnal_high.json",
];

fn bundled(i: usize) -> Scenario {
    load_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(BUNDLED[i])).unwrap()
}

fn arrival() -> impl Strategy<Value = ArrivalSpec> {
    prop_oneof![
        (0u64..10_000).prop_map(|gap_ms| ArrivalSpec::Sequential { gap_ms }),
        (0.001f64..1e4, prop_oneof![Just(RandomProcess::Poisson), Just(RandomProcess::Uniform)])
            .prop_map(|(rate_per_s, process)| ArrivalSpec::Random { rate_per_s, process }),
        (1u64..10_000, 1u64..100, 0u64..100)
            .prop_map(|(count, window_s, offset_s)| ArrivalSpec::Burst { count, window_s, offset_s }),
    ]
}

fn series(values: Vec<f64>, id: &str) -> CellLoadSeries {
    CellLoadSeries { cell_ids: BTreeSet::from([id.to_string()]), interval_s: 600, start_s: 0, values }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scenarios_survive_a_serialize_parse_round_trip(
        i in 0..BUNDLED.len(), seed in any::<u64>(), duration_s in 1u64..100_000, arrival in arrival()
    ) {
        let mut s = bundled(i);
        s.seed = seed;
        s.duration_s = duration_s;
        if let Some(p) = s.procedures.first_mut() {
            p.arrival = arrival;
        }
        let back = parse_scenario(&s.to_json()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(validate_scenario(&back).to_string(), validate_scenario(&s).to_string());
    }

    #[test]
    fn classification_is_stable_under_ties_and_reordering(
        values in proptest::collection::vec(0u8..5, 1..200), rotate in any::<usize>()
    ) {
        let totals: Vec<(String, f64)> = values.iter().enumerate().map(|(i, v)| (format!("c{i:03}"), *v as f64)).collect();
        let classes = classify_totals(&totals);
        let n = totals.len();
        let high = classes.values().filter(|c| **c == LoadClass::High).count();
        let low = classes.values().filter(|c| **c == LoadClass::Low).count();
        prop_assert_eq!((high, low), (n / 5, n / 5));
        let mut reordered = totals.clone();
        reordered.rotate_left(rotate % n);
        reordered.reverse();
        prop_assert_eq!(classify_totals(&reordered), classes);
    }

    #[test]
    fn service_mix_sums_to_one(volumes in proptest::collection::btree_map("[a-z]{1,8}", 0.0f64..1e12, 1..20)) {
        prop_assume!(volumes.values().any(|v| *v > 0.0));
        let mix = derive_service_mix(&volumes).unwrap();
        prop_assert!((mix.entries.values().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(mix.entries.values().all(|p| *p >= 0.0));
    }

    #[test]
    fn largest_remainder_conserves_the_total(total in 0u64..1_000_000, weights in proptest::collection::vec(0.0f64..100.0, 1..50)) {
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let counts = largest_remainder(total, &weights);
        prop_assert_eq!(counts.iter().sum::<u64>(), total);
    }

    #[test]
    fn trace_schedules_conserve_counts(
        values in proptest::collection::vec(0.0f64..500.0, 1..30),
        window_s in prop_oneof![Just(10u64), Just(60), Just(600)],
        scale in 0.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let s = series(values.clone(), "x");
        let schedule = series_to_schedule(&s, window_s, scale, seed).unwrap();
        let expected: u64 = values.iter().map(|v| (v * scale).round() as u64).sum();
        prop_assert_eq!(schedule.len() as u64, expected);
        prop_assert!(schedule.times().all(|t| t < values.len() as u64 * 600_000));
        prop_assert_eq!(series_to_schedule(&s, window_s, scale, seed).unwrap(), schedule);
    }

    #[test]
    fn neighbor_sums_commute_and_associate(
        a in proptest::collection::vec(0u32..1_000_000, 12),
        b in proptest::collection::vec(0u32..1_000_000, 12),
        c in proptest::collection::vec(0u32..1_000_000, 12),
    ) {
        let all: BTreeMap<String, CellLoadSeries> = [("a", &a), ("b", &b), ("c", &c)]
            .into_iter()
            .map(|(id, v)| (id.to_string(), series(v.iter().map(|x| *x as f64).collect(), id)))
            .collect();
        let ids = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let abc = aggregate_neighbors(&all, &ids(&["a", "b", "c"])).unwrap();
        let cba = aggregate_neighbors(&all, &ids(&["c", "b", "a"])).unwrap();
        prop_assert_eq!(&abc, &cba);
        let mut nested = all.clone();
        nested.insert("bc".into(), aggregate_neighbors(&all, &ids(&["b", "c"])).unwrap());
        let grouped = aggregate_neighbors(&nested, &ids(&["a", "bc"])).unwrap();
        prop_assert_eq!(grouped.values, abc.values);
    }

    #[test]
    fn merged_schedule_length_is_the_sum(lens in proptest::collection::vec((0usize..200, 0u64..5), 0..8)) {
        let schedules: Vec<EventSchedule> =
            lens.iter().map(|(n, step)| EventSchedule::from_times((0..*n as u64).map(|i| i * step).collect())).collect();
        let merged = merge_schedules(&schedules);
        prop_assert_eq!(merged.len(), lens.iter().map(|(n, _)| n).sum::<usize>());
        prop_assert!(merged.times().collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(merged.events().iter().enumerate().all(|(i, e)| e.index == i as u64));
    }

    #[test]
    fn bursts_land_inside_their_window(count in 1u64..5000, window_s in 1u64..60, offset_s in 0u64..60, seed in any::<u64>()) {
        let duration_s = offset_s + window_s;
        let spec = ArrivalSpec::Burst { count, window_s, offset_s };
        let s = build_schedule(&spec, duration_s, seed).unwrap();
        prop_assert_eq!(s.len() as u64, count);
        prop_assert!(s.times().all(|t| t >= offset_s * 1000 && t < duration_s * 1000));
        prop_assert_eq!(build_schedule(&spec, duration_s, seed).unwrap(), s);
    }

    #[test]
    fn random_arrivals_stay_inside_the_span(rate in 0.01f64..500.0, duration_s in 1u64..120, seed in any::<u64>(), poisson in any::<bool>()) {
        let process = if poisson { RandomProcess::Poisson } else { RandomProcess::Uniform };
        let s = build_schedule(&ArrivalSpec::Random { rate_per_s: rate, process }, duration_s, seed).unwrap();
        let times: Vec<u64> = s.times().collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(times.iter().all(|t| *t <= duration_s * 1000));
    }

    #[test]
    fn packetization_conserves_bytes(bytes in 0u64..10_000_000, mtu in 64u32..9000, bin_ms in 1u64..10_000) {
        let packets = packetize(bytes, mtu, 500, bin_ms, Direction::Uplink);
        prop_assert_eq!(packets.iter().map(|p| p.size_bytes as u64).sum::<u64>(), bytes);
        prop_assert!(packets.iter().all(|p| p.size_bytes >= 1 && p.size_bytes <= mtu));
        prop_assert!(packets.iter().all(|p| p.t_ms >= 500 && p.t_ms < 500 + bin_ms));
    }

    #[test]
    fn trace_replay_conserves_bytes_per_direction(
        bins in proptest::collection::vec((0u64..200_000, 0u64..2_000_000), 1..20), start_ms in 0u64..100_000
    ) {
        let (up, down): (Vec<u64>, Vec<u64>) = bins.iter().copied().unzip();
        let profile = ServiceTraceProfile { service: "s".into(), bin_s: 1, uplink_bytes: up.clone(), downlink_bytes: down.clone() };
        let plan = SessionPlan {
            supi: "imsi-0".into(),
            service: "s".into(),
            source: SessionSource::Trace(Arc::new(profile)),
            start_ms,
            duration_ms: bins.len() as u64 * 1000,
            mtu_bytes: 1500,
        };
        let packets = generate_packets(&plan, 7);
        let sum = |d| packets.iter().filter(|p| p.direction == d).map(|p| p.size_bytes as u64).sum::<u64>();
        prop_assert_eq!(sum(Direction::Uplink), up.iter().sum::<u64>());
        prop_assert_eq!(sum(Direction::Downlink), down.iter().sum::<u64>());
        prop_assert!(packets.windows(2).all(|w| w[0].t_ms <= w[1].t_ms));
    }
}

fn upf_cpu_ns(sessions: usize, packets: &[corebench::upli::TimedPacket]) -> u64 {
    let emu = start_emulator(ResourceCostModel::builtin(), EmulatorConfig::default(), Arc::new(VirtualClock::new())).unwrap();
    let before = emu.snapshot(VnfKind::UPF).cpu_time_ns;
    for k in 0..sessions {
        let key = format!("s{k}");
        emu.establish_upf_session(&key);
        for p in packets {
            emu.upf_ingest(&key, p.packet()).unwrap();
        }
    }
    emu.snapshot(VnfKind::UPF).cpu_time_ns - before
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn upf_cpu_scales_exactly_with_session_count(
        bins in proptest::collection::vec((0u64..50_000, 0u64..500_000), 1..10), k in 1usize..40
    ) {
        let (up, down): (Vec<u64>, Vec<u64>) = bins.iter().copied().unzip();
        let profile = ServiceTraceProfile { service: "s".into(), bin_s: 1, uplink_bytes: up, downlink_bytes: down };
        let plan = SessionPlan {
            supi: "imsi-0".into(),
            service: "s".into(),
            source: SessionSource::Trace(Arc::new(profile)),
            start_ms: 0,
            duration_ms: bins.len() as u64 * 1000,
            mtu_bytes: 1500,
        };
        let packets = generate_packets(&plan, 0);
        let one = upf_cpu_ns(1, &packets);
        prop_assert_eq!(upf_cpu_ns(k, &packets), k as u64 * one);
    }
}
