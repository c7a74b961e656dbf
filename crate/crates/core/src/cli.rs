//! Command-line front end.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::allocators::{Algorithm, AllocationProblem, AllocationTable};
use crate::flows::{FlowSet, DEFAULT_FACTOR};
use crate::metrics::{report, AllocationReport};
use crate::netmodel::{
    builtin_by_name, fipy_networks, load_networks, table2_networks, validate_networks, BuiltinProfile,
    LatencyModel, NetworkProfile,
};
use crate::scalar::{format_rational, Utilization};
use crate::simulator::{self, Scenario, SimReport};
use crate::solver::SolveError;
use crate::wire::{encode_frame, FrameDecoder};
use crate::Error;

/// Environment variable that overrides a scenario's seed.
pub const SEED_ENV: &str = "RESILIENT_ALLOC_SEED";
pub const JSON_SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "resilient-alloc", version, about = "Criticality-aware multi-network flow allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(clap::Args, Debug)]
pub struct ProblemArgs {
    /// Flow set JSON file.
    #[arg(long)]
    pub flows: PathBuf,
    /// `table2`, `fipy`, a comma-separated list of built-in profiles, or a JSON file.
    #[arg(long, default_value = "table2")]
    pub networks: String,
    /// Multiplier applied to C/T (8 converts bytes to bits).
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one allocation algorithm.
    Allocate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "cabf-inv")]
        algo: String,
        /// Fail unless every flow is served.
        #[arg(long)]
        require_all: bool,
    },
    /// Run every algorithm and print a comparison table.
    Compare {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Restrict to these algorithms (comma-separated names).
        #[arg(long, value_delimiter = ',')]
        algos: Vec<String>,
    },
    /// Run the exact solver.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Only accept allocations that serve every flow.
        #[arg(long)]
        require_all: bool,
    },
    /// Run a scenario through the simulator.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Write every link frame as JSON lines to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// List built-in network profiles.
    Profiles {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Debug helpers for the serial framing.
    Frame {
        #[command(subcommand)]
        action: FrameAction,
    },
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum FrameAction {
    /// Wrap standard input in one frame.
    Encode,
    /// Print each frame body read from standard input on its own line.
    Decode,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let seed = std::env::var(SEED_ENV).ok();
    match execute(cli.command, seed.as_deref(), stdin, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(
    command: Command,
    seed_override: Option<&str>,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Error> {
    let out = match command {
        Command::Allocate { problem, algo, require_all } => {
            let algorithm = algo.parse::<Algorithm>().map_err(|e| Error::InvalidScenario(e.to_string()))?;
            cmd_allocate(&problem, algorithm, require_all)?
        }
        Command::Solve { problem, require_all } => cmd_allocate(&problem, Algorithm::Exact, require_all)?,
        Command::Compare { problem, algos } => {
            let algorithms = if algos.is_empty() {
                Algorithm::all()
            } else {
                algos
                    .iter()
                    .map(|a| a.parse::<Algorithm>().map_err(|e| Error::InvalidScenario(e.to_string())))
                    .collect::<Result<_, _>>()?
            };
            let (flows, networks) = load_problem(&problem)?;
            let rows = compare(&flows, &networks, problem.factor, &algorithms);
            render_compare(&flows, &networks, problem.factor, &rows, problem.format)
        }
        Command::Simulate { scenario, transcript, format } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(seed) = seed_override {
                sc.seed = seed
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidScenario(format!("{SEED_ENV} must be a 64-bit unsigned integer")))?;
            }
            let (report, frames) = simulator::run_with_transcript(&sc)?;
            if let Some(path) = transcript {
                let mut text = String::new();
                for f in &frames {
                    text.push_str(&serde_json::to_string(f).expect("transcript serializes"));
                    text.push('\n');
                }
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
            render_sim(&sc, &report, format)
        }
        Command::Profiles { format } => render_profiles(format),
        Command::Frame { action } => return frame_tool(action, stdin, stdout, stderr),
    };
    stdout.write_all(out.as_bytes()).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(0)
}

/// Resolves `--networks`: a file path, a preset, or a list of built-in names.
pub fn parse_networks(spec: &str) -> Result<Vec<NetworkProfile>, Error> {
    let path = Path::new(spec);
    if path.is_file() {
        return load_networks(path);
    }
    let nets = match spec {
        "table2" => table2_networks(),
        "fipy" => fipy_networks(),
        list => list
            .split(',')
            .map(|name| builtin_by_name(name.trim()))
            .collect::<Result<Vec<_>, _>>()?,
    };
    validate_networks(&nets)?;
    Ok(nets)
}

fn load_problem(args: &ProblemArgs) -> Result<(FlowSet, Vec<NetworkProfile>), Error> {
    if args.factor == 0 {
        return Err(Error::InvalidScenario("--factor must be positive".into()));
    }
    Ok((FlowSet::load(&args.flows)?, parse_networks(&args.networks)?))
}

fn cmd_allocate(args: &ProblemArgs, algorithm: Algorithm, require_all: bool) -> Result<String, Error> {
    let (flows, networks) = load_problem(args)?;
    let problem: AllocationProblem<Utilization> =
        AllocationProblem::new(&flows.flows, &networks, flows.l_max, args.factor);
    let table = algorithm.run(&problem, require_all)?;
    if require_all && table.len() < flows.len() {
        return Err(SolveError::Infeasible.into());
    }
    let rep = report(&table, &flows.flows, &networks, flows.l_max);
    Ok(render_allocation(&flows, &networks, algorithm, args.factor, &rep, args.format))
}

/// One comparison row.
pub struct CompareRow {
    pub algorithm: Algorithm,
    pub table: AllocationTable<Utilization>,
    pub report: AllocationReport<Utilization>,
}

pub fn compare(flows: &FlowSet, networks: &[NetworkProfile], factor: u64, algorithms: &[Algorithm]) -> Vec<CompareRow> {
    let problem: AllocationProblem<Utilization> =
        AllocationProblem::new(&flows.flows, networks, flows.l_max, factor);
    algorithms
        .iter()
        .map(|&algorithm| {
            let table = algorithm.run(&problem, false).expect("unconstrained run always succeeds");
            let report = report(&table, &flows.flows, networks, flows.l_max);
            CompareRow { algorithm, table, report }
        })
        .collect()
}

/// A table cell: level digit followed by the network glyph, empty if unserved.
fn cell(table: &AllocationTable<Utilization>, networks: &[NetworkProfile], flow: usize) -> String {
    table
        .get(flow)
        .map(|a| format!("{}{}", a.level, networks[a.network].technology.glyph()))
        .unwrap_or_default()
}

fn legend(networks: &[NetworkProfile]) -> String {
    networks
        .iter()
        .map(|n| format!("{} {} ({} bps)", n.technology.glyph(), n.id, n.capacity_bps))
        .collect::<Vec<_>>()
        .join(", ")
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<width$}", width = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_string(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is UTF-8")
}

#[derive(Serialize)]
struct CompareJson<'a> {
    schema_version: u32,
    factor: u64,
    l_max: u8,
    networks: Vec<&'a str>,
    rows: Vec<CompareJsonRow<'a>>,
}

#[derive(Serialize)]
struct CompareJsonRow<'a> {
    algorithm: String,
    label: String,
    #[serde(flatten)]
    report: &'a AllocationReport<Utilization>,
}

pub fn render_compare(
    flows: &FlowSet,
    networks: &[NetworkProfile],
    factor: u64,
    rows: &[CompareRow],
    format: Format,
) -> String {
    match format {
        Format::Json => {
            let doc = CompareJson {
                schema_version: JSON_SCHEMA_VERSION,
                factor,
                l_max: flows.l_max,
                networks: networks.iter().map(|n| n.id.as_str()).collect(),
                rows: rows
                    .iter()
                    .map(|r| CompareJsonRow { algorithm: r.algorithm.name(), label: r.algorithm.label(), report: &r.report })
                    .collect(),
            };
            serde_json::to_string_pretty(&doc).expect("compare serializes") + "\n"
        }
        Format::Table | Format::Csv => {
            let mut grid = Vec::with_capacity(rows.len() + 1);
            let mut header = vec!["algorithm".to_string()];
            header.extend(flows.flows.iter().map(|f| f.id.clone()));
            header.extend(["served_%", "avg_crit", "objective"].map(String::from));
            if format == Format::Csv {
                header.push("factor".into());
            }
            grid.push(header);
            for r in rows {
                let mut line = vec![r.algorithm.label()];
                line.extend((0..flows.len()).map(|i| cell(&r.table, networks, i)));
                line.push(r.report.percent_served_display());
                line.push(r.report.avg_criticality_display());
                line.push(r.report.objective.to_string());
                if format == Format::Csv {
                    line.push(factor.to_string());
                }
                grid.push(line);
            }
            if format == Format::Csv {
                csv_string(&grid)
            } else {
                format!("factor {factor}, l_max {}, networks: {}\n{}", flows.l_max, legend(networks), pad_table(&grid))
            }
        }
    }
}

#[derive(Serialize)]
struct AllocationJson<'a> {
    schema_version: u32,
    algorithm: String,
    factor: u64,
    l_max: u8,
    #[serde(flatten)]
    report: &'a AllocationReport<Utilization>,
}

fn render_allocation(
    flows: &FlowSet,
    networks: &[NetworkProfile],
    algorithm: Algorithm,
    factor: u64,
    rep: &AllocationReport<Utilization>,
    format: Format,
) -> String {
    if format == Format::Json {
        let doc = AllocationJson {
            schema_version: JSON_SCHEMA_VERSION,
            algorithm: algorithm.name(),
            factor,
            l_max: flows.l_max,
            report: rep,
        };
        return serde_json::to_string_pretty(&doc).expect("allocation serializes") + "\n";
    }
    let mut grid = vec![["flow", "name", "network", "level", "demand_bps"].map(String::from).to_vec()];
    for (f, outcome) in flows.flows.iter().zip(&rep.per_flow) {
        let demand = outcome
            .level
            .and_then(|l| crate::flows::utilization(f, l, factor))
            .map(|u| u.to_string())
            .unwrap_or_default();
        grid.push(vec![
            f.id.clone(),
            f.name.clone(),
            outcome.network_id.clone().unwrap_or_else(|| "-".into()),
            outcome.level.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            demand,
        ]);
    }
    if format == Format::Csv {
        return csv_string(&grid);
    }
    let mut out = format!("{} (factor {factor}, networks: {})\n", algorithm.label(), legend(networks));
    out.push_str(&pad_table(&grid));
    for load in &rep.per_network_load {
        out.push_str(&format!("load {}: {} / {} bps\n", load.network_id, load.used, load.capacity));
    }
    out.push_str(&format!(
        "served {}/{} ({}%), avg criticality {}, objective {}\n",
        rep.served,
        rep.flows,
        rep.percent_served_display(),
        if rep.served == 0 { "-".to_string() } else { rep.avg_criticality_display() },
        rep.objective
    ));
    out
}

fn render_sim(sc: &Scenario, report: &SimReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json() + "\n",
        Format::Table | Format::Csv => {
            let mut grid = vec![["flow", "name", "sent", "delivered", "not_allocated", "not_delivered"]
                .map(String::from)
                .to_vec()];
            for f in &report.flows {
                grid.push(vec![
                    f.flow_id.clone(),
                    f.name.clone(),
                    f.sent.to_string(),
                    f.delivered.to_string(),
                    f.err_not_allocated.to_string(),
                    f.err_not_delivered.to_string(),
                ]);
            }
            if format == Format::Csv {
                return csv_string(&grid);
            }
            let mut out = format!(
                "{} for {} s, seed {}, factor {}\n",
                sc.algorithm.label(),
                format_rational(&sc.duration),
                report.seed,
                sc.factor
            );
            out.push_str(&pad_table(&grid));
            for n in &report.networks {
                out.push_str(&format!(
                    "network {}: {} messages, {} bytes, {} refused\n",
                    n.network_id, n.messages, n.bytes, n.budget_violations_avoided
                ));
            }
            for h in &report.handshakes {
                out.push_str(&format!(
                    "handshake at {} s, accepted at {} s ({} s)\n",
                    format_rational(&h.start),
                    format_rational(&h.accepted),
                    format_rational(&h.duration)
                ));
            }
            out
        }
    }
}

#[derive(Serialize)]
struct ProfileJson {
    builtin: &'static str,
    #[serde(flatten)]
    profile: NetworkProfile,
}

fn render_profiles(format: Format) -> String {
    let profiles: Vec<(BuiltinProfile, NetworkProfile)> =
        BuiltinProfile::ALL.iter().map(|&k| (k, crate::netmodel::builtin_profile(k))).collect();
    if format == Format::Json {
        let doc: Vec<ProfileJson> =
            profiles.into_iter().map(|(k, profile)| ProfileJson { builtin: k.as_str(), profile }).collect();
        return serde_json::to_string_pretty(&doc).expect("profiles serialize") + "\n";
    }
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    let mut grid = vec![["builtin", "id", "name", "glyph", "capacity_bps", "max_payload", "per_day", "min_gap_s", "latency_ms"]
        .map(String::from)
        .to_vec()];
    for (k, p) in &profiles {
        let latency = match p.latency {
            LatencyModel::Fixed(ms) => ms.to_string(),
            LatencyModel::Uniform(lo, hi) => format!("{lo}..{hi}"),
        };
        grid.push(vec![
            k.as_str().to_string(),
            p.id.clone(),
            p.name.clone(),
            p.technology.glyph().to_string(),
            p.capacity_bps.to_string(),
            opt(p.max_payload_bytes.map(|v| v.to_string())),
            opt(p.max_messages_per_day.map(|v| v.to_string())),
            opt(p.min_gap.map(|g| format_rational(&g))),
            latency,
        ]);
    }
    match format {
        Format::Csv => csv_string(&grid),
        _ => pad_table(&grid),
    }
}

fn frame_tool(action: FrameAction, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Error> {
    let io_err = |e| Error::io(Path::new("<stdio>"), e);
    match action {
        FrameAction::Encode => {
            let mut body = Vec::new();
            stdin.read_to_end(&mut body).map_err(io_err)?;
            stdout.write_all(&encode_frame(&body)).map_err(io_err)?;
            Ok(0)
        }
        FrameAction::Decode => {
            let mut decoder = FrameDecoder::new();
            let mut buf = [0u8; 4096];
            let mut bad = false;
            loop {
                let n = stdin.read(&mut buf).map_err(io_err)?;
                if n == 0 {
                    break;
                }
                for item in decoder.push(&buf[..n]) {
                    match item {
                        Ok(frame) => {
                            stdout.write_all(&frame.body).map_err(io_err)?;
                            stdout.write_all(b"\n").map_err(io_err)?;
                        }
                        Err(e) => {
                            bad = true;
                            writeln!(stderr, "{e}").map_err(io_err)?;
                        }
                    }
                }
            }
            if !decoder.pending().is_empty() {
                bad = true;
                writeln!(stderr, "incomplete frame: {} trailing bytes", decoder.pending().len()).map_err(io_err)?;
            }
            Ok(i32::from(bad))
        }
    }
}
