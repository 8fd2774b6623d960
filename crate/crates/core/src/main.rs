use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use corebench::dataset::{
    aggregate_cell_series, aggregate_neighbors, classify_cells, derive_service_mix, load_cell_records,
    load_trace_profile, series_to_schedule,
};
use corebench::emulator::{ResourceCostModel, TransportKind, VnfKind};
use corebench::fixtures::{profile_millicores, write_fixtures};
use corebench::orchestrator::{run_experiment, ClockMode, ExitStatus, OrchestratorError, RunOptions};
use corebench::report::{emit_plot_data, load_run, summarize, GroupBy, PlotKind};
use corebench::scenario::{load_scenario, validate_scenario, ScenarioError};

const EXIT_ERROR: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ABORTED: u8 = 3;

#[derive(Parser)]
#[command(name = "corebench", version, about = "Load injection and telemetry for service-based mobile cores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and export its dataset.
    Run(RunArgs),
    /// Preprocess operator datasets.
    #[command(subcommand)]
    Ingest(Ingest),
    /// Summaries and plot tables from exported runs.
    #[command(subcommand)]
    Report(Report),
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Regenerate the synthetic fixture datasets.
    GenFixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Inproc,
    Tcp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Virtual,
    Wall,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Export directory; the scenario's `output_dir` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    transport: Option<Transport>,
    #[arg(long, value_enum)]
    clock: Option<ClockArg>,
    /// Also write the expanded arrival schedules.
    #[arg(long)]
    export_schedules: bool,
    /// Also write the emulator's message tap.
    #[arg(long)]
    export_tap: bool,
    /// Summary group label recorded in the manifest.
    #[arg(long)]
    group: Option<String>,
    /// Summary load level recorded in the manifest.
    #[arg(long)]
    level: Option<u64>,
}

#[derive(Subcommand)]
enum Ingest {
    /// Aggregate a cell-activity CSV, classify cells and optionally expand a
    /// neighborhood into an arrival schedule.
    Cells {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 600)]
        interval_s: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated cells summed into one series.
        #[arg(long, value_delimiter = ',')]
        neighborhood: Vec<String>,
        #[arg(long, default_value_t = 10)]
        window_s: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Normalize per-service volumes (JSON object) into a mix.
    Mix {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a service profile and report its modeled UPF load.
    Profile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        cost_model: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Service,
    Procedure,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotArg {
    CpuMemOverTime,
    CpuVsSessions,
    UtilizationDiurnal,
    All,
}

#[derive(Subcommand)]
enum Report {
    /// Inject-phase means per group and load level.
    Summary {
        #[arg(long = "result", required = true)]
        results: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "service")]
        group_by: GroupArg,
        #[arg(long, value_delimiter = ',')]
        levels: Vec<u64>,
        #[arg(long, default_value = "UPF")]
        vnf: VnfKind,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tidy per-figure CSV tables.
    Plots {
        #[arg(long)]
        result: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        kind: PlotArg,
        /// Destination directory; `<result>/plots` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COREBENCH_LOG", "info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => run(args),
        Command::Validate { scenario } => validate(&scenario),
        Command::Ingest(i) => ingest(i).map(|_| 0),
        Command::Report(r) => report(r).map(|_| 0),
        Command::GenFixtures { out } => {
            for rel in write_fixtures(&out)? {
                println!("{}", out.join(rel).display());
            }
            Ok(0)
        }
    }
}

fn invalid(e: &ScenarioError) -> u8 {
    eprintln!("invalid scenario: {e}");
    EXIT_INVALID
}

fn validate(path: &Path) -> Result<u8> {
    let s = match load_scenario(path) {
        Ok(s) => s,
        Err(e @ ScenarioError::Io { .. }) => return Err(e.into()),
        Err(e) => return Ok(invalid(&e)),
    };
    let report = validate_scenario(&s);
    if report.is_empty() {
        println!("{}: ok", path.display());
        Ok(0)
    } else {
        eprintln!("{report}");
        Ok(EXIT_INVALID)
    }
}

fn run(args: RunArgs) -> Result<u8> {
    let mut s = match load_scenario(&args.scenario) {
        Ok(s) => s,
        Err(e @ ScenarioError::Io { .. }) => return Err(e.into()),
        Err(e) => return Ok(invalid(&e)),
    };
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    let opts = RunOptions {
        out_dir: Some(args.out.unwrap_or_else(|| s.output_dir.clone())),
        transport: args.transport.map(|t| match t {
            Transport::Inproc => TransportKind::InProcess,
            Transport::Tcp => TransportKind::TcpLoopback,
        }),
        clock: args.clock.map(|c| match c {
            ClockArg::Virtual => ClockMode::Virtual,
            ClockArg::Wall => ClockMode::Wall,
        }),
        export_schedules: args.export_schedules,
        export_tap: args.export_tap,
        group: args.group,
        level: args.level,
    };
    let result = match run_experiment(&s, &opts) {
        Ok(r) => r,
        Err(OrchestratorError::Invalid(report)) => {
            eprintln!("{report}");
            return Ok(EXIT_INVALID);
        }
        Err(e) => return Err(e.into()),
    };
    let dir = opts.out_dir.as_ref().expect("set above");
    let sent = result.outcomes.iter().filter(|o| o.was_sent()).count();
    println!(
        "{}: {} -> {} ({} requests sent, {} packets, {} samples)",
        s.name,
        result.exit,
        dir.display(),
        sent,
        result.up_stats.packets,
        result.dataset.samples.len()
    );
    Ok(match result.exit {
        ExitStatus::Completed => 0,
        ExitStatus::Aborted { .. } => EXIT_ABORTED,
    })
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(fs::File::create(path)?)
}

fn ingest(cmd: Ingest) -> Result<()> {
    match cmd {
        Ingest::Cells { input, interval_s, out, neighborhood, window_s, scale, seed } => {
            let agg = aggregate_cell_series(load_cell_records(&input)?, interval_s);
            if agg.rejected > 0 {
                log::warn!("{} record(s) with negative activity dropped", agg.rejected);
            }
            fs::create_dir_all(&out)?;
            let classes = classify_cells(&agg.series);
            let mut w = csv::Writer::from_path(out.join("cell_classes.csv"))?;
            w.write_record(["cell_id", "total", "class"])?;
            for (id, s) in &agg.series {
                w.write_record([id.as_str(), &s.total().to_string(), &classes[id].to_string()])?;
            }
            w.flush()?;
            if !neighborhood.is_empty() {
                let series = aggregate_neighbors(&agg.series, &neighborhood)?;
                let mut w = csv::Writer::from_path(out.join("series.csv"))?;
                w.write_record(["timestamp_s", "activity"])?;
                for (k, v) in series.values.iter().enumerate() {
                    w.write_record([(series.start_s + (k as u64 * series.interval_s) as i64).to_string(), v.to_string()])?;
                }
                w.flush()?;
                series_to_schedule(&series, window_s, scale, seed)?.write_csv(create(&out.join("schedule.csv"))?)?;
            }
            println!("{} cells -> {}", agg.series.len(), out.display());
        }
        Ingest::Mix { input, out } => {
            let volumes: BTreeMap<String, f64> = serde_json::from_str(&fs::read_to_string(&input)?)?;
            let mix = derive_service_mix(&volumes)?;
            let mut f = create(&out)?;
            serde_json::to_writer_pretty(&mut f, &mix)?;
            writeln!(f)?;
            for (service, p) in &mix.entries {
                println!("{service}\t{p:.6}");
            }
        }
        Ingest::Profile { input, cost_model } => {
            let p = load_trace_profile(&input)?;
            let model = match cost_model {
                Some(path) => ResourceCostModel::load(&path)?,
                None => ResourceCostModel::builtin(),
            };
            println!(
                "{}: {} bins of {} s, {} B up, {} B down, {:.4} millicores per session",
                p.service,
                p.bins(),
                p.bin_s,
                p.total_uplink(),
                p.total_downlink(),
                profile_millicores(&model, &p)
            );
        }
    }
    Ok(())
}

fn report(cmd: Report) -> Result<()> {
    match cmd {
        Report::Summary { results, group_by, levels, vnf, out } => {
            let runs = results.iter().map(|d| load_run(d).map(|(ds, _)| ds)).collect::<std::result::Result<Vec<_>, _>>()?;
            let group_by = match group_by {
                GroupArg::Service => GroupBy::Service,
                GroupArg::Procedure => GroupBy::Procedure,
            };
            let table = summarize(&runs, group_by, &levels, vnf)?;
            match out {
                Some(path) => table.write_csv(create(&path)?)?,
                None => table.write_csv(std::io::stdout().lock())?,
            }
        }
        Report::Plots { result, kind, out } => {
            let (dataset, up) = load_run(&result)?;
            let dir = out.unwrap_or_else(|| result.join("plots"));
            let kinds = match kind {
                PlotArg::CpuMemOverTime => vec![PlotKind::CpuMemOverTime],
                PlotArg::CpuVsSessions => vec![PlotKind::CpuVsSessions],
                PlotArg::UtilizationDiurnal => vec![PlotKind::UtilizationDiurnal],
                PlotArg::All => vec![PlotKind::CpuMemOverTime, PlotKind::CpuVsSessions, PlotKind::UtilizationDiurnal],
            };
            for k in kinds {
                for path in emit_plot_data(&dataset, &up, k, &dir)? {
                    println!("{}", path.display());
                }
            }
        }
    }
    Ok(())
}
