use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use corebench::emulator::{ProcedureKind, VnfKind};
use corebench::scenario::{
    load_scenario, validate_scenario, ArrivalSpec, FlowSource, GapDist, MixRef, RandomProcess, Scenario, Scope,
    SizeDist, TargetKind,
};

fn scenario_files() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
}

fn bundled() -> Vec<Scenario> {
    scenario_files().iter().map(|p| load_scenario(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).collect()
}

#[test]
fn every_bundled_scenario_validates() {
    for path in scenario_files() {
        let s = load_scenario(&path).unwrap();
        let report = validate_scenario(&s);
        assert!(report.is_empty(), "{}:\n{report}", path.display());
    }
}

#[test]
fn scenario_names_are_unique() {
    let names: Vec<String> = bundled().into_iter().map(|s| s.name).collect();
    assert_eq!(names.iter().collect::<BTreeSet<_>>().len(), names.len());
}

// The matches are exhaustive so a new variant fails to compile here until
// it is listed and exercised.
#[test]
fn bundled_scenarios_exercise_every_enum_value() {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut note = |s: &str| {
        seen.insert(s.to_string());
    };
    let arrival = |a: &ArrivalSpec, note: &mut dyn FnMut(&str)| match a {
        ArrivalSpec::Sequential { .. } => note("arrival:Sequential"),
        ArrivalSpec::Random { process, .. } => {
            note("arrival:Random");
            note(match process {
                RandomProcess::Poisson => "process:Poisson",
                RandomProcess::Uniform => "process:Uniform",
            })
        }
        ArrivalSpec::Burst { .. } => note("arrival:Burst"),
        ArrivalSpec::TraceDriven { .. } => note("arrival:TraceDriven"),
    };
    for s in bundled() {
        note(match s.scope {
            Scope::ControlPlane => "scope:ControlPlane",
            Scope::UserPlane => "scope:UserPlane",
            Scope::Joint => "scope:Joint",
        });
        note(match s.target.kind {
            TargetKind::Emulator => "target:Emulator",
            TargetKind::External => "target:External",
        });
        let mut vnfs: Vec<VnfKind> = s.target.topology.iter().map(|t| t.vnf).collect();
        vnfs.extend(s.telemetry_vnfs.clone().unwrap_or_default());
        for p in &s.procedures {
            note(&format!("procedure:{}", p.procedure));
            vnfs.extend(p.target_vnf);
            arrival(&p.arrival, &mut note);
        }
        for v in vnfs {
            note(&format!("vnf:{v}"));
        }
        if let Some(t) = &s.traffic {
            arrival(&t.arrival, &mut note);
            note(match t.mix_ref {
                MixRef::Path(_) => "mix:Path",
                MixRef::Inline(_) => "mix:Inline",
            });
            for source in t.profiles.values() {
                match source {
                    FlowSource::Trace(_) => note("flow:Trace"),
                    FlowSource::Synthetic(f) => {
                        note("flow:Synthetic");
                        note(match f.packet_size_bytes {
                            SizeDist::Constant(_) => "size:Constant",
                            SizeDist::Uniform { .. } => "size:Uniform",
                        });
                        note(match f.inter_arrival_ms {
                            GapDist::Constant(_) => "gap:Constant",
                            GapDist::Exponential { .. } => "gap:Exponential",
                        });
                    }
                }
            }
        }
    }
    let mut expected: BTreeSet<String> = [
        "scope:ControlPlane",
        "scope:UserPlane",
        "scope:Joint",
        "target:Emulator",
        "target:External",
        "arrival:Sequential",
        "arrival:Random",
        "arrival:Burst",
        "arrival:TraceDriven",
        "process:Poisson",
        "process:Uniform",
        "mix:Path",
        "mix:Inline",
        "flow:Trace",
        "flow:Synthetic",
        "size:Constant",
        "size:Uniform",
        "gap:Constant",
        "gap:Exponential",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    expected.extend(ProcedureKind::ALL.iter().map(|p| format!("procedure:{p}")));
    expected.extend(VnfKind::ALL.iter().map(|v| format!("vnf:{v}")));
    let missing: Vec<&String> = expected.difference(&seen).collect();
    assert!(missing.is_empty(), "not exercised: {missing:?}");
}
