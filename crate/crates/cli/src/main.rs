mod live;

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{error::ErrorKind, CommandFactory, Parser, Subcommand, ValueEnum};
use epistate::cluster::{Cluster, ClusterConfig};
use epistate::control::{ControlRequest, ControlResponse};
use epistate::graph::{epistemology_report, export_dot};
use epistate::{build_graph, load_nodes, load_scenario, load_spec, Side, StateMap, SyncConfig};
use uuid::Uuid;

#[derive(Parser)]
#[command(name = "epistate", version, about = "Declarative state convergence engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parent or child engine.
    Run(RunArgs),
    /// Set state on a running engine through its control channel.
    Inject {
        #[arg(long)]
        control: SocketAddr,
        #[arg(long)]
        node: Uuid,
        #[arg(long, default_value = "configured")]
        side: Side,
        /// Assignments as `variable=value`.
        #[arg(required = true)]
        assignments: Vec<String>,
    },
    /// Query a running engine's store, e.g. `/nodes/<id>/discovered`.
    Query {
        #[arg(long)]
        control: SocketAddr,
        path: String,
    },
    /// Build the state graph for a mutation spec and print DOT and a report.
    Graph {
        spec: PathBuf,
        /// Write `<stem>.dot` and `<stem>.txt` here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulator scenario and check its assertions.
    Sim {
        scenario: PathBuf,
        /// Print the event log even when the scenario passes.
        #[arg(long)]
        log: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LaunchRole {
    Parent,
    Child,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Real,
    Sim,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    role: LaunchRole,
    #[arg(long)]
    id: Uuid,
    /// Mutation spec.
    #[arg(long)]
    spec: PathBuf,
    /// Node definitions; required for a parent.
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// UDP address for sync datagrams.
    #[arg(long, default_value = "0.0.0.0:7600")]
    listen: SocketAddr,
    /// Parent's sync address; required for a child.
    #[arg(long)]
    parent_addr: Option<SocketAddr>,
    /// Parent's id; required for a child.
    #[arg(long)]
    parent_id: Option<Uuid>,
    /// TCP address for inject/query requests.
    #[arg(long)]
    control: Option<SocketAddr>,
    #[arg(long, default_value_t = 1)]
    hello_ticks: u64,
    #[arg(long, default_value_t = 4)]
    dead_ticks: u64,
    /// Wall-clock length of a tick in real mode.
    #[arg(long, default_value_t = 1000)]
    tick_ms: u64,
    /// Stop after this many ticks; 0 runs until killed. Sim mode defaults
    /// to 200.
    #[arg(long)]
    ticks: Option<u64>,
    #[arg(long, value_enum, default_value = "real")]
    mode: Mode,
    /// Network seed in sim mode.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Inject {
            control,
            node,
            side,
            assignments,
        } => inject(control, node, side, &assignments),
        Command::Query { control, path } => request(control, &ControlRequest::Query { path }),
        Command::Graph { spec, out } => graph(&spec, out.as_deref()),
        Command::Sim { scenario, log } => sim(&scenario, log),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn usage(message: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, message).exit()
}

fn sync_config(args: &RunArgs) -> SyncConfig {
    SyncConfig {
        hello_ticks: args.hello_ticks,
        dead_ticks: args.dead_ticks,
        ..SyncConfig::default()
    }
}

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    match args.role {
        LaunchRole::Child if args.parent_addr.is_none() || args.parent_id.is_none() => {
            usage("a child needs --parent-addr and --parent-id")
        }
        LaunchRole::Parent if args.nodes.is_none() => usage("a parent needs --nodes"),
        LaunchRole::Child if args.mode == Mode::Sim => usage("sim mode runs a parent with simulated children"),
        _ => {}
    }
    let set = load_spec(&args.spec)?;
    match args.mode {
        Mode::Sim => run_sim(&args, &set),
        Mode::Real => {
            live::run(&args, set)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_sim(args: &RunArgs, set: &epistate::MutationSet) -> anyhow::Result<ExitCode> {
    let nodes_path = args.nodes.as_ref().expect("checked");
    let children = load_nodes(nodes_path, set.schema())?;
    let ids: Vec<Uuid> = children.iter().map(|n| n.id).collect();
    let mut config = ClusterConfig::new(args.seed, args.id, children);
    config.sync = sync_config(args);
    let mut cluster = Cluster::new(set, config)?;
    let limit = args.ticks.unwrap_or(200);
    let done = cluster.run_until(limit, |c| ids.iter().all(|&id| c.consistent(id) && c.converged(id)))?;
    let mut out = std::io::stdout().lock();
    for line in cluster.log() {
        writeln!(out, "{line}")?;
    }
    for id in &ids {
        let view = cluster.parent_view(*id).expect("parent tracks every child");
        writeln!(out, "node {id} discovered {}", render(&view.discovered))?;
    }
    match done {
        Some(t) => {
            writeln!(out, "converged at tick {t}")?;
            Ok(ExitCode::SUCCESS)
        }
        None => {
            writeln!(out, "not converged after {limit} ticks")?;
            Ok(ExitCode::FAILURE)
        }
    }
}

fn render(map: &StateMap) -> String {
    let parts: Vec<String> = map.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{{{}}}", parts.join(", "))
}

fn inject(control: SocketAddr, node: Uuid, side: Side, assignments: &[String]) -> anyhow::Result<ExitCode> {
    let mut set = StateMap::new();
    for a in assignments {
        let Some((k, v)) = a.split_once('=') else {
            usage(&format!("assignment `{a}` is not variable=value"));
        };
        set.insert(k.to_string(), v.to_string());
    }
    request(control, &ControlRequest::Inject { node, side, set })
}

fn request(control: SocketAddr, req: &ControlRequest) -> anyhow::Result<ExitCode> {
    let mut stream = TcpStream::connect(control).with_context(|| format!("connecting to {control}"))?;
    writeln!(stream, "{}", serde_json::to_string(req)?)?;
    stream.shutdown(std::net::Shutdown::Write)?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line)?;
    if line.is_empty() {
        bail!("no response from {control}");
    }
    println!("{}", line.trim_end());
    let response: ControlResponse = serde_json::from_str(&line)?;
    Ok(if response.is_error() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn graph(spec: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let set = load_spec(spec)?;
    let g = build_graph(&set);
    let dot = export_dot(&g);
    let report = epistemology_report(&g);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let stem = spec.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
            std::fs::write(dir.join(format!("{stem}.dot")), dot)?;
            std::fs::write(dir.join(format!("{stem}.txt")), report)?;
        }
        None => {
            print!("{dot}");
            eprint!("{report}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sim(path: &Path, log: bool) -> anyhow::Result<ExitCode> {
    let scenario = load_scenario(path)?;
    let set = scenario.mutation_set()?;
    let report = scenario.run(&set)?;
    let mut out = std::io::stdout().lock();
    if log || !report.passed() {
        for line in &report.log {
            writeln!(out, "{line}")?;
        }
    }
    match &report.failure {
        None => {
            writeln!(out, "PASS {}: {} ticks", report.name, report.ticks_run)?;
            Ok(ExitCode::SUCCESS)
        }
        Some(f) => {
            writeln!(out, "FAIL {}: {f}", report.name)?;
            Ok(ExitCode::FAILURE)
        }
    }
}
