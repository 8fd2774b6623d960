//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use corebench::arrival::EventSchedule;
use corebench::clock::{Clock, VirtualClock};
use corebench::cpli::{ControlInjector, OutcomeStatus};
use corebench::dataset::{classify_totals, LoadClass, ServiceMix};
use corebench::emulator::{
    start_emulator, EmulatorConfig, EmulatorHandle, Origin, ProcedureKind, ResourceCostModel, ServiceOp, VnfKind,
};
use corebench::orchestrator::{run_experiment, ExperimentResult, RunOptions};
use corebench::report::{
    emit_plot_data, linear_regression, load_reference_table, pearson, service_order_at, summarize, GroupBy, PlotKind,
};
use corebench::scenario::{chain_vnfs, load_scenario, ArrivalSpec, ProcedureLoad, Scenario};
use corebench::target::EmulatorTarget;
use corebench::telemetry::{start_collector, EmulatorCounters, Phase};
use corebench::upli::{plan_sessions, SessionSource};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> Scenario {
    load_scenario(&root().join("scenarios").join(name)).unwrap()
}

fn run(s: &Scenario) -> ExperimentResult {
    let r = run_experiment(s, &RunOptions::default()).unwrap();
    assert!(r.exit.is_completed(), "{}: {}", s.name, r.exit);
    r
}

fn cpu_series(r: &ExperimentResult, vnf: VnfKind) -> Vec<(u64, f64, u64)> {
    r.dataset.samples_of(vnf).map(|(s, _)| (s.t_ms, s.cpu_millicores, s.mem_bytes)).collect()
}

fn ac1_burst() -> String {
    let s = scenario("burst_pdu_sessions.json");
    let ArrivalSpec::Burst { count, window_s, offset_s } = s.procedures[0].arrival else { panic!("burst arrival") };
    assert_eq!((count, window_s), (200, 10));
    let r = run(&s);
    let ok = r.outcomes.iter().filter(|o| o.status == OutcomeStatus::Success).count();
    assert_eq!(r.outcomes.len(), 200);
    assert_eq!(ok, 200);

    let burst_start = r.dataset.meta.phases.inject_start_ms + offset_s * 1000;
    let burst_end = burst_start + window_s * 1000;
    for vnf in chain_vnfs(ProcedureKind::PduSessionSetup, VnfKind::AMF) {
        let series = cpu_series(&r, vnf);
        let baseline = series.iter().filter(|(t, ..)| *t <= burst_start).map(|(_, c, _)| *c).fold(0.0, f64::max);
        // A sample at t reports the second ending at t.
        let during: Vec<f64> =
            series.iter().filter(|(t, ..)| *t > burst_start && *t <= burst_end).map(|(_, c, _)| *c).collect();
        let mean = during.iter().sum::<f64>() / during.len() as f64;
        assert!(mean > baseline, "{vnf}: burst mean {mean} vs baseline {baseline}");
        if vnf != VnfKind::NRF {
            // The registry only sees discoveries until caches warm up.
            assert!(during.iter().all(|c| *c > baseline), "{vnf}: {during:?} vs {baseline}");
        }
    }
    let model = ResourceCostModel::builtin();
    for (vnf, kind) in [(VnfKind::AMF, "pdu_session"), (VnfKind::SMF, "sm_context"), (VnfKind::UPF, "pdu_session")] {
        let series = cpu_series(&r, vnf);
        let before = series.iter().rfind(|(t, ..)| *t <= burst_start).unwrap().2;
        let after = series.last().unwrap().2;
        assert_eq!(after - before, 200 * model.context_bytes(vnf, kind), "{vnf}");
    }
    let upf_contexts = r.dataset.samples_of(VnfKind::UPF).map(|(s, _)| s.active_contexts);
    let (lo, hi) = upf_contexts.fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
    assert_eq!(hi - lo, 200);
    format!("200/200 Success, memory deltas exact (AMF +{} B)", 200 * model.context_bytes(VnfKind::AMF, "pdu_session"))
}

fn with_sessions(mut s: Scenario, n: u64) -> Scenario {
    let t = s.traffic.as_mut().unwrap();
    t.sessions = n;
    if let ArrivalSpec::Burst { count, .. } = &mut t.arrival {
        *count = n;
    }
    s.name = format!("{}-{n}", s.name);
    s
}

/// Mean inject-phase UPF rate of an emulator nobody talks to.
fn idle_upf_millicores(s: &Scenario) -> f64 {
    let clock = Arc::new(VirtualClock::new());
    let emu = start_emulator(ResourceCostModel::builtin(), EmulatorConfig::default(), clock.clone()).unwrap();
    let mut collector =
        start_collector(Box::new(EmulatorCounters(emu.clone())), &[VnfKind::UPF], 1000, clock.clone()).unwrap();
    let phases = corebench::telemetry::Phases::from_seconds(s.warmup_s, s.duration_s, s.drain_s);
    let mut t = 0;
    while t <= phases.end_ms {
        clock.sleep_until(t);
        collector.tick(t).unwrap();
        if t > 0 && t % emu.config().heartbeat_period_ms == 0 {
            emu.heartbeat_tick(t);
        }
        t += 1000;
    }
    let (samples, _) = collector.stop();
    let inject: Vec<f64> = samples
        .iter()
        .filter(|x| phases.phase_of(x.t_ms as i64) == Some(Phase::Inject))
        .map(|x| x.cpu_millicores)
        .collect();
    inject.iter().sum::<f64>() / inject.len() as f64
}

struct UpfLevels {
    levels: Vec<f64>,
    means: Vec<f64>,
    mem: Vec<u64>,
    baseline: f64,
}

fn upf_levels() -> &'static UpfLevels {
    static CELL: std::sync::OnceLock<UpfLevels> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let base = scenario("upf_gaming.json");
        let mut datasets = Vec::new();
        let mut mem = Vec::new();
        for n in [100, 200, 300, 400, 500] {
            let r = run(&with_sessions(base.clone(), n));
            assert_eq!(r.up_stats.no_session, 0);
            mem.extend(r.dataset.samples_of(VnfKind::UPF).map(|(s, _)| s.mem_bytes));
            datasets.push(r.dataset);
        }
        let table = summarize(&datasets, GroupBy::Service, &[], VnfKind::UPF).unwrap();
        assert_eq!(table.rows.len(), 5);
        UpfLevels {
            levels: table.rows.iter().map(|r| r.level as f64).collect(),
            means: table.rows.iter().map(|r| r.cpu_millicores).collect(),
            mem,
            baseline: idle_upf_millicores(&base),
        }
    })
}

fn ac2_upf_proportionality() -> String {
    let u = upf_levels();
    assert_eq!(u.levels, vec![100.0, 200.0, 300.0, 400.0, 500.0]);
    let fit = linear_regression(&u.levels, &u.means);
    assert!(fit.r_squared >= 0.999, "R² {}", fit.r_squared);
    let tolerance = 0.01 * u.means[0];
    assert!(
        (fit.intercept - u.baseline).abs() <= tolerance,
        "intercept {} vs baseline {} (±{tolerance})",
        fit.intercept,
        u.baseline
    );
    format!(
        "R² = {:.6}, slope {:.4} mc/session, intercept {:.4} vs idle {:.4} (±{:.3})",
        fit.r_squared, fit.slope, fit.intercept, u.baseline, tolerance
    )
}

fn ac3_upf_memory_flat() -> String {
    let u = upf_levels();
    let (lo, hi) = (u.mem.iter().min().unwrap(), u.mem.iter().max().unwrap());
    assert_eq!(hi - lo, 0);
    format!("UPF mem_bytes constant at {hi} over {} samples", u.mem.len())
}

fn ac4_reference_table() -> String {
    let rows = load_reference_table(&root().join("fixtures/table1.csv")).unwrap();
    assert_eq!(rows.len(), 25);
    let services: BTreeSet<&str> = rows.iter().map(|r| r.service.as_str()).collect();
    let mut worst = 1.0f64;
    for svc in &services {
        let (x, y): (Vec<f64>, Vec<f64>) =
            rows.iter().filter(|r| r.service == *svc).map(|r| (r.sessions as f64, r.cpu_millicores)).unzip();
        let r = pearson(&x, &y);
        assert!(r >= 0.98, "{svc}: {r}");
        worst = worst.min(r);
    }
    let order = service_order_at(&rows, 500);
    assert_eq!(order, ["Instagram", "Mixed", "YouTube", "Browsing", "Gaming"]);
    format!("min Pearson r = {worst:.5}; order at 500: {}", order.join(" > "))
}

fn class_counts(classes: &BTreeMap<String, LoadClass>) -> (usize, usize, usize) {
    let n = |c| classes.values().filter(|v| **v == c).count();
    (n(LoadClass::High), n(LoadClass::Medium), n(LoadClass::Low))
}

fn ac5_classification() -> String {
    let totals: Vec<(String, f64)> = (0..100).map(|i| (format!("cell-{i:03}"), 1000.0 + (i * 37 % 100) as f64)).collect();
    let classes = classify_totals(&totals);
    assert_eq!(class_counts(&classes), (20, 60, 20));
    let top: Vec<&String> = classes.iter().filter(|(_, c)| **c == LoadClass::High).map(|(id, _)| id).collect();
    let min_high = top.iter().map(|id| totals.iter().find(|(t, _)| t == *id).unwrap().1).fold(f64::MAX, f64::min);
    assert!(totals.iter().filter(|(id, _)| classes[id] != LoadClass::High).all(|(_, v)| *v < min_high));

    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    let strategy = (1usize..=500).prop_flat_map(|n| {
        (Just(n), proptest::collection::btree_set(0u32..1_000_000, n), any::<u64>())
    });
    runner
        .run(&strategy, |(n, values, shuffle_seed)| {
            let totals: Vec<(String, f64)> = values.iter().enumerate().map(|(i, v)| (format!("c{i}"), *v as f64)).collect();
            let classes = classify_totals(&totals);
            let tail = n / 5;
            prop_assert_eq!(class_counts(&classes), (tail, n - 2 * tail, tail));
            let mut shuffled = totals.clone();
            let mut s = shuffle_seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(classify_totals(&shuffled), classes);
            Ok(())
        })
        .unwrap();
    "100 cells -> 20/60/20; 256 random N in [1, 500] obey floor law and permutation invariance".into()
}

fn ac6_multiplexing() -> String {
    let n = 100_000usize;
    let schedule = EventSchedule::from_times(vec![0; n]);
    let mixes = [
        [("Browsing", 212.5), ("Gaming", 61.0), ("Instagram", 148.25), ("YouTube", 328.25)],
        [("a", 0.25), ("b", 0.25), ("c", 0.25), ("d", 0.25)],
        [("a", 0.01), ("b", 0.09), ("c", 0.3), ("d", 0.6)],
    ];
    let mut worst_z = 0.0f64;
    for raw in mixes {
        let volumes: BTreeMap<String, f64> = raw.iter().map(|(s, v)| (s.to_string(), *v)).collect();
        let mix = corebench::dataset::derive_service_mix(&volumes).unwrap();
        let sources: BTreeMap<String, SessionSource> = mix
            .services()
            .map(|s| {
                let p = corebench::dataset::ServiceTraceProfile {
                    service: s.to_string(),
                    bin_s: 1,
                    uplink_bytes: vec![1],
                    downlink_bytes: vec![1],
                };
                (s.to_string(), SessionSource::Trace(Arc::new(p)))
            })
            .collect();
        let plan = |seed| plan_sessions(n, &mix, &sources, &schedule, 1000, 1500, seed).unwrap();
        let plans = plan(42);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &plans {
            *counts.entry(p.service.as_str()).or_default() += 1;
        }
        for (service, p) in &mix.entries {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let z = (counts.get(service.as_str()).copied().unwrap_or(0) as f64 - n as f64 * p).abs() / sigma;
            assert!(z <= 5.0, "{service}: {z:.2} sigma");
            worst_z = worst_z.max(z);
        }
        let render = |ps: &[corebench::upli::SessionPlan]| {
            ps.iter().map(|p| format!("{},{},{}\n", p.supi, p.service, p.start_ms)).collect::<String>().into_bytes()
        };
        assert_eq!(render(&plans), render(&plan(42)));
        assert_ne!(render(&plans), render(&plan(43)));
        let _: &ServiceMix = &mix;
    }
    format!("3 mixes x 100000 sessions, worst deviation {worst_z:.2} sigma; same seed byte-identical")
}

type Msg = (Origin, VnfKind, ServiceOp);

/// Independent statement of what each function does on receipt of each
/// operation: the calls it makes, in order.
fn downstream(vnf: VnfKind, op: ServiceOp) -> Vec<(VnfKind, ServiceOp)> {
    use ServiceOp::*;
    use VnfKind::*;
    match (vnf, op) {
        (AMF, RegistrationRequest) => vec![(AUSF, UeAuthenticate), (UDM, RegisterUeContext)],
        (AMF, PduSessionRequest) => vec![(SMF, CreateSmContext)],
        (SMF, CreateSmContext) => vec![(UDM, GetSmSubscription), (UPF, N4SessionEstablish)],
        (AUSF, UeAuthenticate) => vec![(UDM, GenerateAuthVector)],
        (UDM, GenerateAuthVector) => vec![(UDR, QueryAuthSubscription)],
        (UDM, RegisterUeContext) => vec![(UDR, StoreUeContext)],
        (UDM, GetSmSubscription) => vec![(UDR, QuerySmData)],
        _ => vec![],
    }
}

fn walk(from: Origin, to: VnfKind, op: ServiceOp, cache: &mut BTreeSet<(VnfKind, VnfKind)>, out: &mut Vec<Msg>) {
    out.push((from, to, op));
    for (next, next_op) in downstream(to, op) {
        if cache.insert((to, next)) {
            out.push((Origin::Vnf(to), VnfKind::NRF, ServiceOp::Discover));
        }
        walk(Origin::Vnf(to), next, next_op, cache, out);
    }
}

fn injected_ops(p: ProcedureKind) -> Vec<ServiceOp> {
    use ServiceOp::*;
    match p {
        ProcedureKind::Registration => vec![RegistrationRequest],
        ProcedureKind::PduSessionSetup => vec![PduSessionRequest],
        ProcedureKind::Authentication => vec![UeAuthenticate],
        ProcedureKind::AuthVectorGeneration => vec![GenerateAuthVector],
        ProcedureKind::SubscriptionDataMgmt => vec![QuerySubscriptionData, UpdateSubscriptionData],
        ProcedureKind::NrfDiscovery => vec![Discover],
        ProcedureKind::Heartbeat => vec![Heartbeat],
    }
}

fn multiset(msgs: impl IntoIterator<Item = Msg>) -> BTreeMap<Msg, usize> {
    let mut m = BTreeMap::new();
    for k in msgs {
        *m.entry(k).or_default() += 1;
    }
    m
}

fn tapped(emu: &EmulatorHandle, from: usize) -> BTreeMap<Msg, usize> {
    multiset(emu.tap()[from..].iter().map(|e| (e.origin, e.target, e.service_op)))
}

fn ac7_chain_oracle() -> String {
    let mut total = 0;
    for procedure in ProcedureKind::ALL {
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
        let emu = start_emulator(ResourceCostModel::builtin(), EmulatorConfig::default(), clock.clone()).unwrap();
        let target = EmulatorTarget::new(emu.clone());
        let load = ProcedureLoad {
            procedure,
            target_vnf: None,
            stub_upstreams: false,
            arrival: ArrivalSpec::Sequential { gap_ms: 1 },
            ue_count: 2,
            gnb_count: 1,
        };
        let injector = ControlInjector::new(&target, &load, 0);
        let entry = procedure.default_entry();

        let mut cache = BTreeSet::new();
        let mut cold = Vec::new();
        for op in injected_ops(procedure) {
            walk(Origin::Injector, entry, op, &mut cache, &mut cold);
        }
        let mut warm = Vec::new();
        for op in injected_ops(procedure) {
            walk(Origin::Injector, entry, op, &mut cache, &mut warm);
        }

        let mark = emu.tap_len();
        let (o, _) = injector.fire(0, clock.as_ref());
        assert_eq!(o.status, OutcomeStatus::Success, "{procedure}");
        let cold_tap = tapped(&emu, mark);
        assert_eq!(cold_tap, multiset(cold.clone()), "{procedure} cold");
        let mark = emu.tap_len();
        injector.fire(1, clock.as_ref());
        let warm_tap = tapped(&emu, mark);
        assert_eq!(warm_tap, multiset(warm), "{procedure} warm");

        let mut diff = cold_tap.clone();
        for (k, n) in &warm_tap {
            *diff.get_mut(k).unwrap() -= n;
        }
        diff.retain(|_, n| *n > 0);
        assert!(diff.keys().all(|(_, to, op)| *to == VnfKind::NRF && *op == ServiceOp::Discover), "{procedure}: {diff:?}");
        total += cold.len();
    }
    format!("7 procedures, {total} cold messages match the walker; warm reruns differ only by DISCOVER")
}

fn ac8_cadence_and_conservation(s: &Scenario) -> String {
    let r = run(s);
    let idle = start_emulator(ResourceCostModel::builtin(), EmulatorConfig::default(), Arc::new(VirtualClock::new())).unwrap();
    let emu = r.emulator.as_ref().unwrap();
    let interval = r.dataset.meta.interval_ms;
    assert_eq!(interval, 1000);
    let mut worst = 0.0f64;
    for vnf in VnfKind::ALL {
        let samples: Vec<_> = r.dataset.samples_of(vnf).map(|(x, _)| x).collect();
        assert!(samples.windows(2).all(|w| w[1].t_ms - w[0].t_ms == interval), "{vnf} spacing");
        assert_eq!(samples.last().unwrap().t_ms, r.dataset.meta.phases.end_ms);
        // Millicore-seconds to nanoseconds.
        let integrated: f64 = samples.iter().map(|x| x.cpu_millicores * interval as f64 * 1000.0).sum();
        let modeled = (emu.snapshot(vnf).cpu_time_ns - idle.snapshot(vnf).cpu_time_ns) as f64;
        let one_interval = samples.iter().map(|x| x.cpu_millicores).fold(0.0, f64::max) * interval as f64 * 1000.0;
        let err = (integrated - modeled).abs();
        assert!(err <= one_interval.max(1.0), "{vnf}: {integrated} vs {modeled}");
        worst = worst.max(err);
    }
    format!("{}: 1000 ms spacing on 8 functions; max |integral - modeled| = {worst:.3} ns", s.name)
}

fn ac8_telemetry() -> String {
    ac8_cadence_and_conservation(&scenario("registration_poisson.json"))
}

fn exported(s: &Scenario, dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let opts = RunOptions { out_dir: Some(dir.to_path_buf()), ..Default::default() };
    let r = run_experiment(s, &opts).unwrap();
    assert!(r.exit.is_completed());
    (fs::read(dir.join("telemetry.csv")).unwrap(), fs::read(dir.join("events.csv")).unwrap())
}

fn ac9_reproducibility() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let names = ["burst_pdu_sessions.json", "registration_poisson.json", "single_vnf_profiles.json", "joint_synthetic.json", "upf_mixed.json"];
    for name in names {
        let s = scenario(name);
        let a = exported(&s, &tmp.path().join(format!("{name}-a")));
        let b = exported(&s, &tmp.path().join(format!("{name}-b")));
        assert!(a == b, "{name} differs between identical runs");
    }
    let mut s = scenario("registration_poisson.json");
    let base = exported(&s, &tmp.path().join("seed-a"));
    s.seed += 1000;
    let other = exported(&s, &tmp.path().join("seed-b"));
    assert_ne!(base.1, other.1, "a new seed must move Poisson arrivals");
    ac8_cadence_and_conservation(&s);
    let r = run(&s);
    assert!(r.outcomes.iter().all(|o| o.status == OutcomeStatus::Success));
    format!("{} scenarios byte-identical per seed; reseeded run differs and keeps cadence and conservation", names.len())
}

fn ac10_diurnal() -> String {
    let high = run(&scenario("diurnal_high.json"));
    let low = run(&scenario("diurnal_low.json"));
    let peak_sessions = high.up_stats.peak_active();
    assert!((1900..=2100).contains(&peak_sessions), "peak active {peak_sessions}");
    let peak = |r: &ExperimentResult| r.dataset.samples_of(VnfKind::UPF).map(|(s, _)| s.cpu_millicores).fold(0.0, f64::max);
    let (hi, lo) = (peak(&high), peak(&low));
    assert!(hi >= 2.0 * lo, "{hi} vs {lo}");
    let tmp = tempfile::tempdir().unwrap();
    let files = emit_plot_data(&high.dataset, &high.up_stats, PlotKind::UtilizationDiurnal, tmp.path()).unwrap();
    let rows = fs::read_to_string(&files[0]).unwrap().lines().count() - 1;
    assert_eq!(rows as u64, 43_200_000 / high.dataset.meta.interval_ms);
    format!("peak {peak_sessions} sessions; UPF peak {hi:.3} vs {lo:.3} mc ({:.1}x); {rows} diurnal rows", hi / lo)
}

type Criterion = (&'static str, &'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1", "burst experiment replication", ac1_burst),
        ("AC2", "UPF proportionality", ac2_upf_proportionality),
        ("AC3", "UPF memory flatness", ac3_upf_memory_flat),
        ("AC4", "reference table sanity", ac4_reference_table),
        ("AC5", "classification exactness", ac5_classification),
        ("AC6", "multiplexing convergence", ac6_multiplexing),
        ("AC7", "chain enumeration oracle", ac7_chain_oracle),
        ("AC8", "telemetry cadence and rate consistency", ac8_telemetry),
        ("AC9", "reproducibility", ac9_reproducibility),
        ("AC10", "diurnal replay shape", ac10_diurnal),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let prev_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, title, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.eq_ignore_ascii_case(f)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {title} ({secs:.1}s): {detail}"),
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {id} {title} ({secs:.1}s): {msg}");
            }
        }
    }
    std::panic::set_hook(prev_hook);
    if failed > 0 {
        std::process::exit(1);
    }
}
