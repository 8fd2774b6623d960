//! Summaries and plot-ready tables computed from exported runs.
//!
//! Everything here reads only what a run exports, so a summary can be
//! recomputed from the CSV files alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpli::MarkKind;
use crate::emulator::VnfKind;
use crate::orchestrator::USERPLANE_CSV;
use crate::telemetry::{import_dataset, AlignedDataset, Phase, TelemetryError};
use crate::upli::{UserPlaneRow, UserPlaneStats};

const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no inject-phase samples of {vnf} for {group} at level {level}")]
    EmptyPhase { group: String, level: u64, vnf: VnfKind },
    #[error("run `{scenario}` did not complete ({exit})")]
    NotCompleted { scenario: String, exit: String },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupBy {
    Service,
    Procedure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub level: u64,
    pub vnf: VnfKind,
    pub cpu_millicores: f64,
    pub mem_bytes: f64,
    pub mem_mib: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, group: &str, level: u64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.group == group && r.level == level)
    }

    /// CSV `group,level,vnf,cpu_millicores,mem_bytes,mem_mib,samples`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn marks_of(d: &AlignedDataset, kind: MarkKind) -> impl Iterator<Item = &str> {
    d.events.iter().filter(move |(e, _)| e.kind == kind).map(|(e, _)| e.procedure.as_str())
}

/// The run's label under `group_by`: the manifest's label when set, else the
/// single service (or procedure) it exercised, `Mixed` for several.
pub fn group_of(d: &AlignedDataset, group_by: GroupBy) -> String {
    if let Some(g) = &d.meta.group {
        return g.clone();
    }
    let kind = match group_by {
        GroupBy::Service => MarkKind::SessionStart,
        GroupBy::Procedure => MarkKind::Start,
    };
    let names: BTreeSet<&str> = marks_of(d, kind).collect();
    match names.len() {
        0 => d.meta.scenario_name.clone(),
        1 => names.into_iter().next().expect("one name").to_string(),
        _ => "Mixed".to_string(),
    }
}

/// The manifest's level when set, else the number of sessions (or requests).
pub fn level_of(d: &AlignedDataset, group_by: GroupBy) -> u64 {
    d.meta.level.unwrap_or_else(|| {
        let kind = match group_by {
            GroupBy::Service => MarkKind::SessionStart,
            GroupBy::Procedure => MarkKind::Start,
        };
        marks_of(d, kind).count() as u64
    })
}

/// Inject-phase means of `vnf` per (group, level). Runs sharing a key are
/// pooled; `levels` filters when non-empty.
pub fn summarize(
    runs: &[AlignedDataset],
    group_by: GroupBy,
    levels: &[u64],
    vnf: VnfKind,
) -> Result<SummaryTable, ReportError> {
    let mut acc: BTreeMap<(String, u64), (f64, f64, u64)> = BTreeMap::new();
    for d in runs {
        if d.meta.exit != "Completed" {
            return Err(ReportError::NotCompleted { scenario: d.meta.scenario_name.clone(), exit: d.meta.exit.clone() });
        }
        let level = level_of(d, group_by);
        if !levels.is_empty() && !levels.contains(&level) {
            continue;
        }
        let cell = acc.entry((group_of(d, group_by), level)).or_default();
        for (s, _) in d.samples_of(vnf).filter(|(_, p)| *p == Phase::Inject) {
            cell.0 += s.cpu_millicores;
            cell.1 += s.mem_bytes as f64;
            cell.2 += 1;
        }
    }
    let rows = acc
        .into_iter()
        .map(|((group, level), (cpu, mem, n))| {
            if n == 0 {
                return Err(ReportError::EmptyPhase { group, level, vnf });
            }
            let mem_bytes = mem / n as f64;
            Ok(SummaryRow { group, level, vnf, cpu_millicores: cpu / n as f64, mem_bytes, mem_mib: mem_bytes / MIB, samples: n })
        })
        .collect::<Result<_, _>>()?;
    Ok(SummaryTable { rows })
}

/// One row of the reference per-service UPF measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub service: String,
    pub sessions: u64,
    pub cpu_millicores: f64,
    pub mem_mb: f64,
}

pub fn load_reference_table(path: &Path) -> Result<Vec<ReferenceRow>, ReportError> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Regression {
    assert_eq!(x.len(), y.len(), "paired samples");
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (intercept + slope * a)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Regression { slope, intercept, r_squared }
}

/// Services ordered by CPU at `sessions`, busiest first.
pub fn service_order_at(rows: &[ReferenceRow], sessions: u64) -> Vec<String> {
    let mut at: Vec<&ReferenceRow> = rows.iter().filter(|r| r.sessions == sessions).collect();
    at.sort_by(|a, b| b.cpu_millicores.total_cmp(&a.cpu_millicores));
    at.into_iter().map(|r| r.service.clone()).collect()
}

/// Read back the per-second user-plane table of a run.
pub fn read_userplane_csv(path: &Path) -> Result<UserPlaneStats, ReportError> {
    let mut stats = UserPlaneStats::default();
    for row in csv::Reader::from_path(path)?.deserialize::<UserPlaneRow>() {
        let r = row?;
        stats.packets += r.pkts;
        stats.bytes_ul += r.bytes_ul;
        stats.bytes_dl += r.bytes_dl;
        stats.rows.push(r);
    }
    Ok(stats)
}

/// A dataset and its user-plane table, as exported to `dir`.
pub fn load_run(dir: &Path) -> Result<(AlignedDataset, UserPlaneStats), ReportError> {
    let dataset = import_dataset(dir)?;
    let up_path = dir.join(USERPLANE_CSV);
    let up = if up_path.exists() { read_userplane_csv(&up_path)? } else { UserPlaneStats::default() };
    Ok((dataset, up))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlotKind {
    CpuMemOverTime,
    CpuVsSessions,
    UtilizationDiurnal,
}

#[derive(Serialize)]
struct CpuMemRow {
    t_s: f64,
    cpu_millicores: f64,
    mem_mib: f64,
    phase: String,
}

#[derive(Serialize)]
struct SessionsRow {
    t_s: f64,
    active_sessions: u64,
    upf_cpu_millicores: f64,
    upf_mem_mib: f64,
    phase: String,
}

/// Write the tables behind one figure into `dir` and return their paths.
///
/// * `CpuMemOverTime`: `cpu_mem_<vnf>.csv` per sampled function with
///   `t_s,cpu_millicores,mem_mib,phase`; the phase column marks the
///   injection window.
/// * `CpuVsSessions`: `cpu_vs_sessions.csv` with
///   `t_s,active_sessions,upf_cpu_millicores,upf_mem_mib,phase`, every UPF
///   sample.
/// * `UtilizationDiurnal`: `utilization_diurnal.csv`, same columns, inject
///   phase only, so a replay of span S yields S / interval rows.
pub fn emit_plot_data(
    dataset: &AlignedDataset,
    up: &UserPlaneStats,
    kind: PlotKind,
    dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let t_s = |t_ms: u64| t_ms as f64 / 1000.0;
    match kind {
        PlotKind::CpuMemOverTime => {
            let mut vnfs: BTreeSet<VnfKind> = dataset.samples.iter().map(|(s, _)| s.vnf).collect();
            if vnfs.is_empty() {
                vnfs.extend(VnfKind::ALL);
            }
            let mut paths = Vec::new();
            for vnf in vnfs {
                let path = dir.join(format!("cpu_mem_{}.csv", vnf.as_str().to_ascii_lowercase()));
                let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
                w.write_record(["t_s", "cpu_millicores", "mem_mib", "phase"])?;
                for (s, p) in dataset.samples_of(vnf) {
                    w.serialize(CpuMemRow {
                        t_s: t_s(s.t_ms),
                        cpu_millicores: s.cpu_millicores,
                        mem_mib: s.mem_bytes as f64 / MIB,
                        phase: p.to_string(),
                    })?;
                }
                w.flush().map_err(io_err(&path))?;
                paths.push(path);
            }
            Ok(paths)
        }
        PlotKind::CpuVsSessions | PlotKind::UtilizationDiurnal => {
            let name = if kind == PlotKind::CpuVsSessions { "cpu_vs_sessions.csv" } else { "utilization_diurnal.csv" };
            let path = dir.join(name);
            let curve: BTreeMap<u64, u64> = up.active_curve().into_iter().collect();
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
            w.write_record(["t_s", "active_sessions", "upf_cpu_millicores", "upf_mem_mib", "phase"])?;
            for (s, p) in dataset.samples_of(VnfKind::UPF) {
                if kind == PlotKind::UtilizationDiurnal && *p != Phase::Inject {
                    continue;
                }
                w.serialize(SessionsRow {
                    t_s: t_s(s.t_ms),
                    active_sessions: curve.get(&(s.t_ms / 1000)).copied().unwrap_or(0),
                    upf_cpu_millicores: s.cpu_millicores,
                    upf_mem_mib: s.mem_bytes as f64 / MIB,
                    phase: p.to_string(),
                })?;
            }
            w.flush().map_err(io_err(&path))?;
            Ok(vec![path])
        }
    }
}
