//! Generator for the small synthetic datasets shipped in `fixtures/`.
//!
//! The files stand in for operator datasets that cannot be redistributed:
//! ten-minute service profiles at 1 s bins, lighter 60 s-bin profiles for
//! long diurnal replays, a twelve-hour cell-activity file and a service mix.
//! Output is a pure function of the constants here; a test keeps the
//! committed copies in sync.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::dataset::ServiceTraceProfile;
use crate::emulator::ResourceCostModel;
use crate::rng::Stream;

/// Per-session UPF load each 600 s profile is calibrated to, in millicores,
/// taken from the 100-session column of the reference measurements.
pub const PROFILE_TARGETS: [(&str, &str, f64); 4] = [
    ("gaming", "Gaming", 0.42),
    ("browsing", "Browsing", 1.42),
    ("youtube", "YouTube", 1.56),
    ("instagram", "Instagram", 3.24),
];

pub const PROFILE_BINS: usize = 600;
pub const DIURNAL_START_S: i64 = 1_383_292_800;
pub const DIURNAL_BINS: usize = 72;
const MTU: u64 = 1500;

/// Modeled UPF nanoseconds to forward one bin.
pub fn bin_cost_ns(model: &ResourceCostModel, up: u64, down: u64) -> u64 {
    let direction = |bytes: u64| match bytes.div_ceil(MTU) {
        0 => 0,
        n => (n - 1) * model.packet_ns(MTU as u32) + model.packet_ns((bytes - (n - 1) * MTU) as u32),
    };
    direction(up) + direction(down)
}

pub fn profile_cost_ns(model: &ResourceCostModel, p: &ServiceTraceProfile) -> u64 {
    p.uplink_bytes.iter().zip(&p.downlink_bytes).map(|(u, d)| bin_cost_ns(model, *u, *d)).sum()
}

/// Mean per-session millicores of a profile replayed back to back.
pub fn profile_millicores(model: &ResourceCostModel, p: &ServiceTraceProfile) -> f64 {
    let span_ms = p.bins() as f64 * p.bin_s as f64 * 1000.0;
    profile_cost_ns(model, p) as f64 / (1000.0 * span_ms)
}

fn shape(file: &str, rng: &mut Stream) -> (Vec<f64>, f64) {
    let n = PROFILE_BINS;
    match file {
        // Steady bidirectional exchange.
        "gaming" => ((0..n).map(|_| 1.0 + 0.2 * rng.unit()).collect(), 0.6),
        // Page loads separated by reading pauses.
        "browsing" => {
            let mut w = vec![0.0; n];
            let mut b = (rng.unit() * 5.0) as usize;
            while b < n {
                let len = 2 + rng.below(4) as usize;
                for x in w.iter_mut().skip(b).take(len) {
                    *x = 4.0 + 2.0 * rng.unit();
                }
                b += len + 10 + rng.below(25) as usize;
            }
            for x in w.iter_mut() {
                *x += 0.05 * rng.unit();
            }
            (w, 0.15)
        }
        // Initial buffering, then a chunk every five seconds.
        "youtube" => {
            let w = (0..n)
                .map(|b| {
                    let u = rng.unit();
                    if b < 10 || b % 5 < 2 {
                        4.0 + u
                    } else {
                        0.2 * u
                    }
                })
                .collect();
            (w, 0.04)
        }
        // Scrolling through image and short-video bursts.
        "instagram" => {
            let w = (0..n)
                .map(|_| {
                    let u = rng.unit();
                    if rng.unit() < 0.3 {
                        3.0 + 2.0 * u
                    } else {
                        0.5 * u
                    }
                })
                .collect();
            (w, 0.08)
        }
        other => panic!("no shape for `{other}`"),
    }
}

/// A 600 × 1 s profile whose replay costs exactly `mc` millicores per
/// session under `model` (up to packet-boundary rounding in the last bin).
pub fn calibrated_profile(model: &ResourceCostModel, file: &str, service: &str, mc: f64) -> ServiceTraceProfile {
    let mut rng = Stream::new(crate::rng::splitmix64(file.bytes().fold(0u64, |h, b| h.wrapping_mul(31) + b as u64)));
    let (weights, up_ratio) = shape(file, &mut rng);
    let target_ns = (mc * 1000.0 * PROFILE_BINS as f64 * 1000.0).round() as u64;
    let wsum: f64 = weights.iter().sum();
    let ns_per_byte = model.upf_pkt_cpu_us * 1000.0 / MTU as f64 + model.upf_byte_cpu_ns;
    let mut up = Vec::with_capacity(PROFILE_BINS);
    let mut down = Vec::with_capacity(PROFILE_BINS);
    for w in &weights {
        let bytes = w / wsum * target_ns as f64 / ns_per_byte;
        let d = (bytes / (1.0 + up_ratio)).round() as u64;
        up.push((d as f64 * up_ratio).round() as u64);
        down.push(d);
    }
    let mut p = ServiceTraceProfile { service: service.to_string(), bin_s: 1, uplink_bytes: up, downlink_bytes: down };
    // Packet headers make cost superlinear in bytes; rescale a few times first.
    for _ in 0..4 {
        let f = target_ns as f64 / profile_cost_ns(model, &p) as f64;
        for b in p.uplink_bytes.iter_mut().chain(p.downlink_bytes.iter_mut()) {
            *b = (*b as f64 * f).round() as u64;
        }
    }
    // Walk the last bin's downlink bytes toward the exact target. A step
    // that crosses a packet boundary can overshoot by one packet cost, so
    // this settles within a few nanoseconds rather than always exactly.
    let last = PROFILE_BINS - 1;
    for _ in 0..64 {
        let diff = target_ns as i64 - profile_cost_ns(model, &p) as i64;
        if diff == 0 {
            break;
        }
        let step = match (diff as f64 / ns_per_byte).round() as i64 {
            0 => diff.signum(),
            s => s,
        };
        p.downlink_bytes[last] = (p.downlink_bytes[last] as i64 + step).max(0) as u64;
    }
    p
}

/// Light 10 × 60 s profiles for half-day replays with thousands of sessions.
pub fn diurnal_profile(file: &str, service: &str) -> ServiceTraceProfile {
    let (up, down): (Vec<u64>, Vec<u64>) = match file {
        "gaming" => (vec![1200; 10], vec![1800; 10]),
        "browsing" => ((0..10).map(|b| if b % 3 == 0 { 900 } else { 150 }).collect(), (0..10).map(|b| if b % 3 == 0 { 9000 } else { 600 }).collect()),
        "youtube" => (vec![400; 10], (0..10).map(|b| if b == 0 { 15000 } else { 9000 }).collect()),
        "instagram" => (vec![800; 10], (0..10).map(|b| if b % 2 == 0 { 13500 } else { 6000 }).collect()),
        other => panic!("no diurnal profile for `{other}`"),
    };
    ServiceTraceProfile { service: service.to_string(), bin_s: 60, uplink_bytes: up, downlink_bytes: down }
}

/// Two-hump daytime activity over twelve 10-minute-binned hours, peaking at
/// exactly 1.0.
fn diurnal_shape(bin: usize) -> f64 {
    let h = bin as f64 / 6.0;
    let evening = (-((h - 10.0) / 2.0).powi(2)).exp();
    let morning = 0.6 * (-((h - 2.0) / 1.5).powi(2)).exp();
    0.1 + 0.9 * evening.max(morning)
}

/// `cell_id,timestamp_s,activity` rows. The five `hi-*` cells sum to 2000 at
/// the busy hour, the five `lo-*` cells to 400; fifteen `mid-*` cells sit in
/// between.
pub fn diurnal_cells() -> String {
    let weights = [0.9, 0.95, 1.0, 1.05, 1.1];
    let peak = (0..DIURNAL_BINS).map(diurnal_shape).fold(0.0, f64::max);
    let mut out = String::from("cell_id,timestamp_s,activity\n");
    for b in 0..DIURNAL_BINS {
        let s = diurnal_shape(b) / peak;
        let ts = DIURNAL_START_S + b as i64 * 600;
        let mut row = |cell: String, v: f64| out.push_str(&format!("{cell},{ts},{:.4}\n", v));
        for (k, w) in weights.iter().enumerate() {
            row(format!("hi-{}", k + 1), 400.0 * w * s);
        }
        for k in 0..15 {
            row(format!("mid-{:02}", k + 1), (120.0 + 10.0 * k as f64) * s);
        }
        for (k, w) in weights.iter().enumerate() {
            row(format!("lo-{}", k + 1), 80.0 * w * s);
        }
    }
    out
}

/// Raw per-service volumes in the shape of an operator service breakdown.
pub fn netmob_mix() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("Browsing".to_string(), 212.5),
        ("Gaming".to_string(), 61.0),
        ("Instagram".to_string(), 148.25),
        ("YouTube".to_string(), 328.25),
    ])
}

fn profile_bytes(p: &ServiceTraceProfile) -> Vec<u8> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf).expect("write to memory");
    buf
}

/// Every generated fixture as `(relative path, contents)`.
pub fn generated_files() -> Vec<(String, Vec<u8>)> {
    let model = ResourceCostModel::builtin();
    let mut files = Vec::new();
    for (file, service, mc) in PROFILE_TARGETS {
        let p = calibrated_profile(&model, file, service, mc);
        files.push((format!("profiles/{file}.profile.csv"), profile_bytes(&p)));
        let d = diurnal_profile(file, service);
        files.push((format!("diurnal/{file}.profile.csv"), profile_bytes(&d)));
    }
    files.push(("cells_diurnal.csv".into(), diurnal_cells().into_bytes()));
    let mut mix = serde_json::to_string_pretty(&netmob_mix()).expect("mix serializes");
    mix.push('\n');
    files.push(("netmob_mix.json".into(), mix.into_bytes()));
    files
}

pub fn write_fixtures(dir: &Path) -> io::Result<Vec<String>> {
    let mut written = Vec::new();
    for (rel, bytes) in generated_files() {
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        written.push(rel);
    }
    Ok(written)
}
