use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use qroute::scenario::{self, metrics_csv, MetricsRow, RunOptions};
use qroute::{
    aggregate, compare_sets, evaluate, grid_topology, run_scenario, train, Checkpoint, EnvConfig,
    Error, PhysParams, PolicyKind, ScenarioSummary, SuiteKind, Topology, TopologyConfig,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "qroute",
    version,
    about = "Entanglement routing simulator and Q-learning scheduler"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random grid topology as JSON.
    GenTopology(NetArgs),
    /// Train a Q-network and write its checkpoint and training log.
    Train(NetArgs),
    /// Evaluate policies and write a metrics CSV and summary.
    Evaluate(NetArgs),
    /// Print pairwise comparisons of summary files.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Print JSON instead of a text table.
        #[arg(long)]
        json: bool,
    },
    /// Run predefined experiment scenarios.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct NetArgs {
    /// JSON settings file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use this topology file instead of generating a grid.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Grid shape, e.g. 5x5.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Qubits per node, LO:HI.
    #[arg(long, value_parser = parse_range::<u32>)]
    qubits: Option<(u32, u32)>,
    /// Channel capacity per edge, LO:HI.
    #[arg(long, value_parser = parse_range::<u32>)]
    channels: Option<(u32, u32)>,
    /// Link fidelity, LO:HI.
    #[arg(long, value_parser = parse_range::<f64>)]
    fidelity: Option<(f64, f64)>,
    #[arg(long)]
    pe: Option<f64>,
    #[arg(long)]
    qv: Option<f64>,
    #[arg(long)]
    fmin: Option<f64>,
    #[arg(long)]
    requests: Option<usize>,
    #[arg(long)]
    k_paths: Option<usize>,
    /// Evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    train_episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (gen-topology) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Policies to evaluate (comma separated or "all").
    /// Defaults to all when a checkpoint is given, else the two baselines.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Name used for output files.
    #[arg(long)]
    name: Option<String>,
    /// Evaluate sequentially.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct SuiteArgs {
    /// grid, demand, illustration or all.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Run only scenarios whose name contains this string.
    #[arg(long)]
    only: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    train_episodes: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    serial: bool,
    /// List the scenarios and exit.
    #[arg(long)]
    list: bool,
}

/// Settings file layout; every field is optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    rows: usize,
    cols: usize,
    qubits: (u32, u32),
    channels: (u32, u32),
    fidelity: (f64, f64),
    phys: PhysParams,
    requests: usize,
    k_paths: usize,
    episodes: usize,
    seed: u64,
    name: String,
    train: TrainConfig,
}

impl Default for Settings {
    fn default() -> Self {
        let g = TopologyConfig::grid(5, 5);
        Settings {
            rows: g.rows,
            cols: g.cols,
            qubits: g.qubit_capacity_range,
            channels: g.channel_capacity_range,
            fidelity: g.fidelity_range,
            phys: PhysParams::default(),
            requests: 5,
            k_paths: 3,
            episodes: 500,
            seed: 0,
            name: "custom".into(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Config(String),
    Io(PathBuf, std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_config() => 2,
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(s) => write!(f, "invalid configuration: {s}"),
            CliError::Io(p, e) => write!(f, "I/O error on {}: {e}", p.display()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected RxC, got {s:?}"))?;
    let r = r.trim().parse().map_err(|e| format!("rows: {e}"))?;
    let c = c.trim().parse().map_err(|e| format!("cols: {e}"))?;
    Ok((r, c))
}

fn parse_range<T: std::str::FromStr>(s: &str) -> Result<(T, T), String>
where
    T::Err: std::fmt::Display,
{
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

impl NetArgs {
    fn settings(&self) -> CliResult<Settings> {
        let mut s = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Settings::default(),
        };
        if let Some((r, c)) = self.grid {
            s.rows = r;
            s.cols = c;
        }
        if let Some(v) = self.qubits {
            s.qubits = v;
        }
        if let Some(v) = self.channels {
            s.channels = v;
        }
        if let Some(v) = self.fidelity {
            s.fidelity = v;
        }
        if let Some(v) = self.pe {
            s.phys.p_e = v;
        }
        if let Some(v) = self.qv {
            s.phys.q_v = v;
        }
        if let Some(v) = self.fmin {
            s.phys.f_min = v;
        }
        if let Some(v) = self.requests {
            s.requests = v;
        }
        if let Some(v) = self.k_paths {
            s.k_paths = v;
        }
        if let Some(v) = self.episodes {
            s.episodes = v;
        }
        if let Some(v) = self.train_episodes {
            s.train.episodes = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = &self.name {
            s.name = v.clone();
        }
        Ok(s)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn topology(&self, s: &Settings) -> CliResult<Topology> {
        match &self.topology {
            Some(p) => Ok(Topology::load(p)?),
            None => Ok(grid_topology(&grid_config(s), s.seed)?),
        }
    }

    fn env(&self, s: &Settings) -> CliResult<EnvConfig> {
        s.phys.validate()?;
        let cfg = EnvConfig::new(Arc::new(self.topology(s)?), s.requests, s.k_paths, s.phys);
        cfg.validate()?;
        Ok(cfg)
    }

    fn policies(&self) -> CliResult<Vec<PolicyKind>> {
        if self.policy.is_empty() {
            return Ok(if self.checkpoint.is_some() {
                PolicyKind::ALL.to_vec()
            } else {
                vec![PolicyKind::Shortest, PolicyKind::Random]
            });
        }
        let mut out = Vec::new();
        for p in &self.policy {
            let kinds = if p == "all" {
                PolicyKind::ALL.to_vec()
            } else {
                vec![p.parse::<PolicyKind>()?]
            };
            for k in kinds {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        Ok(out)
    }
}

fn grid_config(s: &Settings) -> TopologyConfig {
    TopologyConfig {
        rows: s.rows,
        cols: s.cols,
        qubit_capacity_range: s.qubits,
        channel_capacity_range: s.channels,
        fidelity_range: s.fidelity,
    }
}

fn gen_topology(a: &NetArgs) -> CliResult<()> {
    let s = a.settings()?;
    let topo = grid_topology(&grid_config(&s), s.seed)?;
    match &a.out {
        Some(p) => write_file(p, &topo.to_json()),
        None => {
            println!("{}", topo.to_json());
            Ok(())
        }
    }
}

fn run_train(a: &NetArgs) -> CliResult<()> {
    let s = a.settings()?;
    let cfg = a.env(&s)?;
    s.train.validate()?;
    let out = a.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(out.clone(), e))?;
    let (net, log) = train(&cfg, &s.train, s.seed)?;
    write_file(&out.join("topology.json"), &cfg.topology.to_json())?;
    write_file(&out.join("train.csv"), &log.to_csv())?;
    let ckpt = out.join("checkpoint.json");
    Checkpoint::from_mlp(&net, log.grad_steps).save(&ckpt)?;
    let resolved: usize = log.rows.iter().map(|r| r.resolved).sum();
    println!(
        "trained {} episodes, {} env steps, {} gradient steps, {} resolved during training",
        log.rows.len(),
        log.env_steps,
        log.grad_steps,
        resolved
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn run_evaluate(a: &NetArgs) -> CliResult<()> {
    let s = a.settings()?;
    let cfg = a.env(&s)?;
    let policies = a.policies()?;
    let agent = match &a.checkpoint {
        Some(p) => Some(Checkpoint::load(p)?.to_mlp()?),
        None => None,
    };
    let mut rows = Vec::new();
    for &p in &policies {
        let recs = evaluate(p, &cfg, agent.as_ref(), s.episodes, s.seed, !a.serial)?;
        rows.extend(recs.iter().map(|r| MetricsRow::from_record(&s.name, p, r)));
    }
    let out = a.out_dir();
    let summary = aggregate(&s.name, &rows);
    write_file(&out.join(format!("{}.csv", s.name)), &metrics_csv(&rows))?;
    write_file(
        &out.join(format!("{}.summary.json", s.name)),
        &summary.to_json(),
    )?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &ScenarioSummary) {
    println!("scenario {}", s.scenario);
    for p in &s.policies {
        println!(
            "  {:<9} resolved {:.3} ± {:.3} ({:.1}%), qubits {:.2}, channels {:.2}, fidelity {:.4}",
            p.policy.name(),
            p.resolved.mean,
            p.resolved.std,
            100.0 * p.resolved_ratio.mean,
            p.qubits_used.mean,
            p.channels_used.mean,
            p.mean_fidelity.mean
        );
    }
}

fn run_compare(paths: &[PathBuf], json: bool) -> CliResult<()> {
    let sets = paths
        .iter()
        .map(|p| ScenarioSummary::load_all(p))
        .collect::<Result<Vec<_>, _>>()?;
    let tables = compare_sets(&sets)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&tables).expect("tables serialize")
        );
    } else {
        for t in &tables {
            println!("{}", t.render());
        }
    }
    Ok(())
}

fn run_suite(a: &SuiteArgs) -> CliResult<()> {
    let kinds: Vec<SuiteKind> = if a.suite == "all" {
        SuiteKind::ALL.to_vec()
    } else {
        vec![a.suite.parse()?]
    };
    let mut scenarios: Vec<_> = kinds.into_iter().flat_map(scenario::suite).collect();
    if let Some(f) = &a.only {
        scenarios.retain(|s| s.name.contains(f.as_str()));
    }
    if scenarios.is_empty() {
        return Err(CliError::Config("no scenario selected".into()));
    }
    for s in &mut scenarios {
        if let Some(e) = a.episodes {
            s.episodes = e;
        }
        if let Some(e) = a.train_episodes {
            s.train.episodes = e;
        }
        if !a.seeds.is_empty() {
            s.seeds = a.seeds.clone();
        }
    }
    if a.list {
        for s in &scenarios {
            println!(
                "{:<22} {}x{} qubits {:?} requests {}",
                s.name,
                s.topology.rows,
                s.topology.cols,
                s.topology.qubit_capacity_range,
                s.requests
            );
        }
        return Ok(());
    }
    let opts = RunOptions {
        checkpoint: None,
        parallel: !a.serial,
    };
    let mut all = Vec::new();
    for s in &scenarios {
        let summary = run_scenario(s, &a.out, &opts)?;
        print_summary(&summary);
        all.push(summary);
    }
    write_file(
        &a.out.join("suite.summary.json"),
        &serde_json::to_string_pretty(&all).expect("summaries serialize"),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::GenTopology(a) => gen_topology(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Compare { summaries, json } => run_compare(summaries, *json),
        Command::Suite(a) => run_suite(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
