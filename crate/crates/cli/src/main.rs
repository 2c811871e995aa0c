use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relay_assoc::auction::{solve_centralized, write_trace_csv, AuctionConfig};
use relay_assoc::harness::{
    emit_plotdata, generate_topology, join_scenario, read_csv, run_experiments, write_experiment, ApLayout,
    ExperimentSpec, GeneratorSpec, Placement, PlotInputs, PlotKind, Policy, Scenario,
};
use relay_assoc::oracle::{baseline_random, baseline_rssi, solve_exact_mcf};
use relay_assoc::problem::{build_asymmetric, recover_assignment, total_throughput, GBPS};
use relay_assoc::radio::{build_benefits, RadioParams};
use relay_assoc::sim::{run_static, write_csv_rows, write_sim_trace_csv, SimConfig};
use relay_assoc::topology::{TopologyDoc, TopologyInstance};
use relay_assoc::{Error, Result, SCHEMA_VERSION};
use serde_json::json;

#[derive(Parser)]
#[command(name = "relay-assoc", version, about = "Client association and relay selection for mmWave networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random topology and write it as JSON.
    Generate {
        #[arg(long, default_value_t = 4)]
        aps: usize,
        #[arg(long, default_value_t = 5)]
        clients_per_ap: usize,
        #[arg(long, default_value_t = 10)]
        relays: usize,
        /// Cell edge SNR in dB.
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        #[arg(long, default_value_t = 1.1)]
        spacing: f64,
        #[arg(long, value_enum, default_value_t = LayoutArg::Line)]
        layout: LayoutArg,
        #[arg(long, value_enum, default_value_t = PlacementArg::CellMixture)]
        placement: PlacementArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one topology with a single policy.
    Solve {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverArg::Auction)]
        policy: SolverArg,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use price broadcast in the distributed auction.
        #[arg(long)]
        broadcast: bool,
        /// Assignment CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Auction trace CSV output.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a dynamic scenario.
    Simulate {
        #[arg(long, conflicts_with = "preset")]
        scenario: Option<PathBuf>,
        /// Built-in scenario instead of a file.
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Disable the reverse step for unassigned relays.
        #[arg(long)]
        no_reverse: bool,
        #[arg(long)]
        broadcast: bool,
        /// Also write the message-level trace.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo sweep.
    Sweep {
        /// Experiment spec JSON; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        epsilon: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        aps: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        clients_per_ap: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        relays: Option<Vec<usize>>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn sweep or simulation output into per-figure CSV files.
    Plotdata {
        /// Plot kind, or `all` for every kind whose inputs are present.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        timings: Option<PathBuf>,
        #[arg(long)]
        timeseries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Line,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    CellMixture,
    Union,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SolverArg {
    /// Distributed auction (simulated message passing).
    Auction,
    /// Centralized forward/reverse auction.
    Centralized,
    Optm,
    Rssi,
    Rand,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Join,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn load_topology(path: &Path) -> Result<TopologyInstance> {
    let doc: TopologyDoc = serde_json::from_str(&fs::read_to_string(path)?)?;
    TopologyInstance::from_doc(doc)
}

fn solve(topology: &Path, policy: SolverArg, epsilon: f64, seed: u64, broadcast: bool, out: Option<&Path>, trace: Option<&Path>) -> Result<serde_json::Value> {
    let radio = RadioParams::default();
    let topo = load_topology(topology)?;
    let benefits = build_benefits(&radio, &topo)?;
    let inst = build_asymmetric(&benefits, &topo, GBPS)?;
    let mut extra = json!({});
    let assignment = match policy {
        SolverArg::Auction => {
            let mut cfg = SimConfig::new(epsilon)?;
            cfg.broadcast_prices = broadcast;
            cfg.trace = trace.is_some();
            let r = run_static(&inst, &cfg, seed)?;
            if let Some(p) = trace {
                write_sim_trace_csv(&r.trace, create(p)?)?;
            }
            extra = json!({ "stats": r.stats, "bound": r.bound, "eps_cs": r.cs.is_ok() });
            recover_assignment(&inst, &r.snapshot.choice)?
        }
        SolverArg::Centralized => {
            let cfg = AuctionConfig::new(epsilon)?.with_trace(trace.is_some());
            let r = solve_centralized(&inst, &cfg)?;
            if let Some(p) = trace {
                write_trace_csv(&r.trace, create(p)?)?;
            }
            extra = json!({ "stats": r.stats });
            recover_assignment(&inst, &r.choice())?
        }
        SolverArg::Optm => recover_assignment(&inst, &solve_exact_mcf(&inst).choice)?,
        SolverArg::Rssi => baseline_rssi(&benefits, &topo)?,
        SolverArg::Rand => baseline_random(&topo, &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    if let Some(p) = out {
        assignment.write_csv(create(p)?)?;
    }
    let oracle = total_throughput(&benefits, &recover_assignment(&inst, &solve_exact_mcf(&inst).choice)?)?;
    let objective = total_throughput(&benefits, &assignment)?;
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "objective_bps": objective,
        "oracle_bps": oracle,
        "gap_bps": oracle - objective,
        "ap_loads": assignment.ap_loads(topo.num_aps()),
        "details": extra,
    }))
}

#[allow(clippy::too_many_arguments)]
fn simulate(scenario: Option<&Path>, preset: Option<PresetArg>, seed: Option<u64>, epsilon: Option<f64>, no_reverse: bool, broadcast: bool, trace: bool, out: &Path) -> Result<serde_json::Value> {
    let mut s = match (scenario, preset) {
        (Some(p), _) => Scenario::load(p)?,
        (None, Some(PresetArg::Join)) => join_scenario(seed.unwrap_or(1)),
        (None, None) => return Err(Error::Scenario("give --scenario or --preset".into())),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(e) = epsilon {
        s.epsilon = e;
    }
    s.reverse &= !no_reverse;
    s.broadcast_prices |= broadcast;
    let report = s.run(trace)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("scenario.json"), &s)?;
    write_csv_rows(&report.samples, create(&out.join("timeseries.csv"))?)?;
    write_csv_rows(&report.quiescent, create(&out.join("quiescent.csv"))?)?;
    if trace {
        write_sim_trace_csv(&report.trace, create(&out.join("trace.csv"))?)?;
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "stats": report.stats,
        "quiescent_points": report.quiescent.len(),
        "all_within_m_eps": report.quiescent.iter().all(|q| q.within_m_eps),
        "all_eps_cs": report.quiescent.iter().all(|q| q.eps_cs),
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    spec: Option<&Path>,
    seed: Option<u64>,
    epsilon: Option<Vec<f64>>,
    policies: Option<Vec<String>>,
    aps: Option<Vec<usize>>,
    clients_per_ap: Option<Vec<usize>>,
    relays: Option<Vec<usize>>,
    repetitions: Option<usize>,
    out: &Path,
) -> Result<serde_json::Value> {
    let mut s = match spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => ExperimentSpec::default(),
    };
    if let Some(v) = seed {
        s.seed = v;
    }
    if let Some(v) = epsilon {
        s.epsilons = v;
    }
    if let Some(v) = policies {
        s.policies = v.iter().map(|p| p.parse()).collect::<Result<Vec<Policy>>>()?;
    }
    if let Some(v) = aps {
        s.num_aps = v;
    }
    if let Some(v) = clients_per_ap {
        s.clients_per_ap = v;
    }
    if let Some(v) = relays {
        s.num_relays = v;
    }
    if let Some(v) = repetitions {
        s.repetitions = v;
    }
    let result = run_experiments(&s)?;
    write_experiment(out, &result)?;
    write_json(&out.join("spec.json"), &s)?;
    let failed = result.rows.iter().filter(|r| r.failed.is_some()).count();
    Ok(json!({ "schema_version": SCHEMA_VERSION, "rows": result.rows.len(), "failed": failed }))
}

fn plotdata(kind: &str, metrics: Option<&Path>, timings: Option<&Path>, timeseries: Option<&Path>, out: &Path) -> Result<serde_json::Value> {
    let inputs = PlotInputs {
        metrics: metrics.map(read_csv).transpose()?.unwrap_or_default(),
        timings: timings.map(read_csv).transpose()?.unwrap_or_default(),
        timeseries: timeseries.map(read_csv).transpose()?.unwrap_or_default(),
    };
    let mut written = Vec::new();
    if kind == "all" {
        for k in PlotKind::ALL {
            match emit_plotdata(&inputs, k, out) {
                Ok(p) => written.push(p),
                Err(Error::MissingDimension(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if written.is_empty() {
            return Err(Error::MissingDimension("no plot kind has the inputs it needs".into()));
        }
    } else {
        written.push(emit_plotdata(&inputs, kind.parse()?, out)?);
    }
    Ok(json!({ "schema_version": SCHEMA_VERSION, "written": written }))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Generate { aps, clients_per_ap, relays, snr_db, spacing, layout, placement, seed, out } => {
            let spec = GeneratorSpec {
                num_aps: aps,
                clients_per_ap,
                num_relays: relays,
                snr_db,
                ap_spacing_factor: spacing,
                layout: match layout {
                    LayoutArg::Line => ApLayout::Line,
                    LayoutArg::Grid => ApLayout::Grid,
                },
                placement: match placement {
                    PlacementArg::CellMixture => Placement::CellMixture,
                    PlacementArg::Union => Placement::Union,
                },
            };
            let (topo, r) = generate_topology(&spec, &RadioParams::default(), seed)?;
            write_json(&out, &topo.to_doc())?;
            Ok(json!({ "schema_version": SCHEMA_VERSION, "cell_radius_m": r, "out": out }))
        }
        Command::Solve { topology, policy, epsilon, seed, broadcast, out, trace } => {
            solve(&topology, policy, epsilon, seed, broadcast, out.as_deref(), trace.as_deref())
        }
        Command::Simulate { scenario, preset, seed, epsilon, no_reverse, broadcast, trace, out } => {
            simulate(scenario.as_deref(), preset, seed, epsilon, no_reverse, broadcast, trace, &out)
        }
        Command::Sweep { spec, seed, epsilon, policies, aps, clients_per_ap, relays, repetitions, out } => {
            sweep(spec.as_deref(), seed, epsilon, policies, aps, clients_per_ap, relays, repetitions, &out)
        }
        Command::Plotdata { kind, metrics, timings, timeseries, out } => {
            plotdata(&kind, metrics.as_deref(), timings.as_deref(), timeseries.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
