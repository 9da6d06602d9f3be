//! Experiment scenarios, metrics output and policy comparisons.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::entanglement::PhysParams;
use crate::env::{evaluate, train, EnvConfig, EpisodeRecord, PolicyKind};
use crate::qlearn::{Checkpoint, Mlp, TrainConfig};
use crate::topology::{grid_topology, TopologyConfig};
use crate::{Error, Result};

/// Exact header of every metrics CSV.
pub const CSV_HEADER: &str =
    "scenario,policy,seed,episode,resolved,total_requests,qubits_used,channels_used,mean_fidelity,steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    /// Grids 5x5 to 10x10 with 5 to 10 requests, 4 qubits per node.
    GridScaling,
    /// 7x7 grid, 20 qubits per node, 10 to 30 requests.
    DemandScaling,
    /// 4x5 grid, 4-6 qubits per node, 6 requests.
    Illustration,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 3] = [
        SuiteKind::GridScaling,
        SuiteKind::DemandScaling,
        SuiteKind::Illustration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::GridScaling => "grid",
            SuiteKind::DemandScaling => "demand",
            SuiteKind::Illustration => "illustration",
        }
    }
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SuiteKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("suite", format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub suite: SuiteKind,
    pub topology: TopologyConfig,
    pub phys: PhysParams,
    pub requests: usize,
    pub k_paths: usize,
    pub policies: Vec<PolicyKind>,
    pub episodes: usize,
    /// One topology, training run and evaluation per seed.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.phys.validate()?;
        if self.episodes < 1 {
            return Err(Error::config("episodes", "need at least one episode"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("policies", "need at least one policy"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.requests < 1 {
            return Err(Error::config("requests", "need at least one request"));
        }
        if self.k_paths < 1 {
            return Err(Error::config("k_paths", "need at least one candidate path"));
        }
        if self.policies.contains(&PolicyKind::Qudqn) {
            self.train.validate()?;
        }
        Ok(())
    }

    fn env(&self, seed: u64) -> Result<EnvConfig> {
        let topology = Arc::new(grid_topology(&self.topology, seed)?);
        let cfg = EnvConfig::new(topology, self.requests, self.k_paths, self.phys);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn base(
    name: String,
    suite: SuiteKind,
    rows: usize,
    cols: usize,
    qubits: (u32, u32),
    requests: usize,
) -> Scenario {
    let mut topology = TopologyConfig::grid(rows, cols);
    topology.qubit_capacity_range = qubits;
    Scenario {
        name,
        suite,
        topology,
        phys: PhysParams::default(),
        requests,
        k_paths: 3,
        policies: PolicyKind::ALL.to_vec(),
        episodes: 500,
        seeds: vec![0],
        train: TrainConfig::default(),
    }
}

/// Scenarios of one suite.
pub fn suite(kind: SuiteKind) -> Vec<Scenario> {
    match kind {
        SuiteKind::GridScaling => (5..=10)
            .map(|n| base(format!("grid-{n}x{n}-d{n}"), kind, n, n, (4, 4), n))
            .collect(),
        SuiteKind::DemandScaling => (10..=30)
            .step_by(5)
            .map(|d| base(format!("demand-7x7-d{d}"), kind, 7, 7, (20, 20), d))
            .collect(),
        SuiteKind::Illustration => vec![base("illustration-4x5-d6".into(), kind, 4, 5, (4, 6), 6)],
    }
}

/// Every scenario: grid scaling, then demand scaling, then the illustration.
pub fn scenario_suite() -> Vec<Scenario> {
    SuiteKind::ALL.into_iter().flat_map(suite).collect()
}

/// One CSV row: one policy on one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub episode: usize,
    pub resolved: usize,
    pub total_requests: usize,
    pub qubits_used: u64,
    pub channels_used: u64,
    /// Mean realized fidelity of the episode's deliveries; 0 if none.
    #[serde(rename = "mean_fidelity")]
    pub mean_realized_fidelity: f64,
    pub steps: usize,
}

impl MetricsRow {
    pub fn from_record(scenario: &str, policy: PolicyKind, r: &EpisodeRecord) -> Self {
        MetricsRow {
            scenario: scenario.to_string(),
            policy,
            seed: r.seed,
            episode: r.episode,
            resolved: r.resolved,
            total_requests: r.total_requests,
            qubits_used: r.qubits_used,
            channels_used: r.channels_used,
            mean_realized_fidelity: r.mean_fidelity(),
            steps: r.steps,
        }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .expect("in-memory csv");
    }
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn read_metrics_csv(path: &FsPath) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    let header = rd.headers().map_err(|e| Error::format(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::format(path, "unexpected header"));
    }
    rd.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        if v.is_empty() {
            return Stat {
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub episodes: usize,
    pub resolved: Stat,
    pub total_requests: Stat,
    /// Resolved / total requests per episode.
    pub resolved_ratio: Stat,
    pub qubits_used: Stat,
    pub channels_used: Stat,
    pub mean_fidelity: Stat,
    pub steps: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub policies: Vec<PolicySummary>,
}

impl ScenarioSummary {
    pub fn policy(&self, p: PolicyKind) -> Option<&PolicySummary> {
        self.policies.iter().find(|s| s.policy == p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Reads a file holding one summary or an array of them.
    pub fn load_all(path: &FsPath) -> Result<Vec<ScenarioSummary>> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(ScenarioSummary),
            Many(Vec<ScenarioSummary>),
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text).map_err(|e| Error::format(path, e))? {
            OneOrMany::One(s) => Ok(vec![s]),
            OneOrMany::Many(v) => Ok(v),
        }
    }
}

/// Per-policy statistics over `rows`, policies in order of first appearance.
pub fn aggregate(scenario: &str, rows: &[MetricsRow]) -> ScenarioSummary {
    let mut order: Vec<PolicyKind> = Vec::new();
    for r in rows {
        if !order.contains(&r.policy) {
            order.push(r.policy);
        }
    }
    let policies = order
        .into_iter()
        .map(|p| {
            let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.policy == p).collect();
            let col = |f: fn(&MetricsRow) -> f64| Stat::of(mine.iter().map(|r| f(r)));
            PolicySummary {
                policy: p,
                episodes: mine.len(),
                resolved: col(|r| r.resolved as f64),
                total_requests: col(|r| r.total_requests as f64),
                resolved_ratio: col(|r| r.resolved as f64 / r.total_requests as f64),
                qubits_used: col(|r| r.qubits_used as f64),
                channels_used: col(|r| r.channels_used as f64),
                mean_fidelity: col(|r| r.mean_realized_fidelity),
                steps: col(|r| r.steps as f64),
            }
        })
        .collect();
    ScenarioSummary {
        scenario: scenario.to_string(),
        policies,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Use this network instead of training one.
    pub checkpoint: Option<PathBuf>,
    /// Evaluate episodes on the rayon pool.
    pub parallel: bool,
}

fn write(path: &FsPath, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn agent_for(
    s: &Scenario,
    cfg: &EnvConfig,
    seed: u64,
    out: &FsPath,
    opts: &RunOptions,
) -> Result<Mlp> {
    if let Some(path) = &opts.checkpoint {
        let net = Checkpoint::load(path)?.to_mlp()?;
        if net.input_dim() != cfg.state_dim() || net.output_dim() != cfg.action_dim() {
            return Err(Error::config(
                "checkpoint",
                format!(
                    "{} is {}->{}, scenario {} needs {}->{}",
                    path.display(),
                    net.input_dim(),
                    net.output_dim(),
                    s.name,
                    cfg.state_dim(),
                    cfg.action_dim()
                ),
            ));
        }
        return Ok(net);
    }
    let (net, log) = train(cfg, &s.train, seed)?;
    log.write_csv(&out.join(format!("{}.seed{seed}.train.csv", s.name)))?;
    Checkpoint::from_mlp(&net, log.grad_steps)
        .save(&out.join(format!("{}.seed{seed}.checkpoint.json", s.name)))?;
    Ok(net)
}

/// Evaluates every policy of `s` without touching the filesystem.
pub fn scenario_rows(
    s: &Scenario,
    out: Option<&FsPath>,
    opts: &RunOptions,
) -> Result<Vec<MetricsRow>> {
    s.validate()?;
    let mut rows = Vec::new();
    for &seed in &s.seeds {
        let cfg = s.env(seed)?;
        let agent = match (s.policies.contains(&PolicyKind::Qudqn), out) {
            (true, Some(dir)) => Some(agent_for(s, &cfg, seed, dir, opts)?),
            (true, None) => Some(match &opts.checkpoint {
                Some(p) => Checkpoint::load(p)?.to_mlp()?,
                None => train(&cfg, &s.train, seed)?.0,
            }),
            (false, _) => None,
        };
        for &p in &s.policies {
            let recs = evaluate(p, &cfg, agent.as_ref(), s.episodes, seed, opts.parallel)?;
            rows.extend(recs.iter().map(|r| MetricsRow::from_record(&s.name, p, r)));
        }
    }
    Ok(rows)
}

/// Trains (or loads) the agent, evaluates every policy and writes
/// `<name>.csv` and `<name>.summary.json` under `out`.
pub fn run_scenario(s: &Scenario, out: &FsPath, opts: &RunOptions) -> Result<ScenarioSummary> {
    s.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rows = scenario_rows(s, Some(out), opts)?;
    write(&out.join(format!("{}.csv", s.name)), &metrics_csv(&rows))?;
    let summary = aggregate(&s.name, &rows);
    write(
        &out.join(format!("{}.summary.json", s.name)),
        &summary.to_json(),
    )?;
    Ok(summary)
}

/// Means of the compared metrics for one policy entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeans {
    pub label: String,
    pub resolved: f64,
    pub resolved_ratio: f64,
    pub qubits_used: f64,
    pub channels_used: f64,
}

/// `(a - b) / b * 100` for each metric; `None` where `b` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDiff {
    pub a: String,
    pub b: String,
    pub resolved_pct: Option<f64>,
    pub qubits_used_pct: Option<f64>,
    pub channels_used_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub policies: Vec<PolicyMeans>,
    pub pairwise: Vec<PairwiseDiff>,
}

pub fn percent_diff(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b * 100.0)
}

/// Compares every policy entry across summaries of the same scenario.
pub fn compare(summaries: &[ScenarioSummary]) -> Result<ComparisonTable> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::ScenarioMismatch("nothing to compare".into()))?;
    if let Some(other) = summaries.iter().find(|s| s.scenario != first.scenario) {
        return Err(Error::ScenarioMismatch(format!(
            "{} vs {}",
            first.scenario, other.scenario
        )));
    }
    let mut policies: Vec<PolicyMeans> = Vec::new();
    for s in summaries {
        for p in &s.policies {
            let mut label = p.policy.name().to_string();
            let mut n = 2;
            while policies.iter().any(|m| m.label == label) {
                label = format!("{}#{n}", p.policy.name());
                n += 1;
            }
            policies.push(PolicyMeans {
                label,
                resolved: p.resolved.mean,
                resolved_ratio: p.resolved_ratio.mean,
                qubits_used: p.qubits_used.mean,
                channels_used: p.channels_used.mean,
            });
        }
    }
    let mut pairwise = Vec::new();
    for a in &policies {
        for b in &policies {
            if a.label != b.label {
                pairwise.push(PairwiseDiff {
                    a: a.label.clone(),
                    b: b.label.clone(),
                    resolved_pct: percent_diff(a.resolved, b.resolved),
                    qubits_used_pct: percent_diff(a.qubits_used, b.qubits_used),
                    channels_used_pct: percent_diff(a.channels_used, b.channels_used),
                });
            }
        }
    }
    Ok(ComparisonTable {
        scenario: first.scenario.clone(),
        policies,
        pairwise,
    })
}

/// One table per scenario present in every input set.
pub fn compare_sets(sets: &[Vec<ScenarioSummary>]) -> Result<Vec<ComparisonTable>> {
    let Some((head, rest)) = sets.split_first() else {
        return Err(Error::ScenarioMismatch("nothing to compare".into()));
    };
    let mut common: BTreeSet<&str> = head.iter().map(|s| s.scenario.as_str()).collect();
    for set in rest {
        let names: BTreeSet<&str> = set.iter().map(|s| s.scenario.as_str()).collect();
        common = common.intersection(&names).copied().collect();
    }
    if common.is_empty() {
        return Err(Error::ScenarioMismatch("inputs share no scenario".into()));
    }
    // keep the first set's scenario order
    head.iter()
        .filter(|s| common.contains(s.scenario.as_str()))
        .map(|s| {
            let group: Vec<ScenarioSummary> = sets
                .iter()
                .flatten()
                .filter(|x| x.scenario == s.scenario)
                .cloned()
                .collect();
            compare(&group)
        })
        .collect()
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:+.2}%"));
        let mut s = String::new();
        let _ = writeln!(s, "scenario {}", self.scenario);
        let _ = writeln!(
            s,
            "{:<12} {:>10} {:>8} {:>12} {:>12}",
            "policy", "resolved", "ratio", "qubits", "channels"
        );
        for p in &self.policies {
            let _ = writeln!(
                s,
                "{:<12} {:>10.3} {:>8.3} {:>12.3} {:>12.3}",
                p.label, p.resolved, p.resolved_ratio, p.qubits_used, p.channels_used
            );
        }
        for d in &self.pairwise {
            let _ = writeln!(
                s,
                "{} vs {}: resolved {}, qubits {}, channels {}",
                d.a,
                d.b,
                pct(d.resolved_pct),
                pct(d.qubits_used_pct),
                pct(d.channels_used_pct)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_shapes() {
        let grid = suite(SuiteKind::GridScaling);
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[0].topology.rows, 5);
        assert_eq!(grid[5].topology.cols, 10);
        assert_eq!(
            grid.iter().map(|s| s.requests).collect::<Vec<_>>(),
            vec![5, 6, 7, 8, 9, 10]
        );
        assert!(grid
            .iter()
            .all(|s| s.topology.qubit_capacity_range == (4, 4)));

        let demand = suite(SuiteKind::DemandScaling);
        assert_eq!(
            demand.iter().map(|s| s.requests).collect::<Vec<_>>(),
            vec![10, 15, 20, 25, 30]
        );
        assert!(demand
            .iter()
            .all(|s| s.topology.qubit_capacity_range == (20, 20)
                && (s.topology.rows, s.topology.cols) == (7, 7)));

        let ill = suite(SuiteKind::Illustration);
        assert_eq!(ill.len(), 1);
        assert_eq!(ill[0].topology.qubit_capacity_range, (4, 6));
        assert_eq!(ill[0].topology.rows * ill[0].topology.cols, 20);
        assert_eq!(ill[0].requests, 6);

        for s in scenario_suite() {
            assert_eq!(s.phys.p_e, 0.9);
            assert_eq!(s.phys.q_v, 0.9);
            assert_eq!(s.phys.f_min, 0.85);
            assert_eq!(s.topology.channel_capacity_range, (26, 35));
            assert_eq!(s.topology.fidelity_range, (0.70, 0.95));
            assert_eq!(s.train.lr, 0.1);
            assert_eq!(s.train.batch, 512);
            assert_eq!(s.train.target_sync, 100);
            assert!(s.validate().is_ok());
        }
    }

    fn summary(name: &str, means: &[(PolicyKind, f64)]) -> ScenarioSummary {
        let st = |m: f64| Stat { mean: m, std: 0.0 };
        ScenarioSummary {
            scenario: name.into(),
            policies: means
                .iter()
                .map(|&(p, m)| PolicySummary {
                    policy: p,
                    episodes: 1,
                    resolved: st(m),
                    total_requests: st(100.0),
                    resolved_ratio: st(m / 100.0),
                    qubits_used: st(2.0 * m),
                    channels_used: st(m),
                    mean_fidelity: st(0.9),
                    steps: st(m),
                })
                .collect(),
        }
    }

    #[test]
    fn percentage_direction() {
        let t = compare(&[summary(
            "s",
            &[(PolicyKind::Qudqn, 99.0), (PolicyKind::Shortest, 90.0)],
        )])
        .unwrap();
        let d = t
            .pairwise
            .iter()
            .find(|d| d.a == "qudqn" && d.b == "shortest")
            .unwrap();
        assert!((d.resolved_pct.unwrap() - 10.0).abs() < 1e-12);
        assert!(t.render().contains("+10.00%"));
    }

    #[test]
    fn identical_summaries_differ_by_zero() {
        let s = summary("s", &[(PolicyKind::Random, 42.0)]);
        let t = compare(&[s.clone(), s]).unwrap();
        assert_eq!(t.policies.len(), 2);
        assert!(t.pairwise.iter().all(|d| d.resolved_pct == Some(0.0)
            && d.qubits_used_pct == Some(0.0)
            && d.channels_used_pct == Some(0.0)));
    }

    #[test]
    fn mismatched_scenarios() {
        assert!(matches!(
            compare(&[summary("a", &[]), summary("b", &[])]),
            Err(Error::ScenarioMismatch(_))
        ));
        assert!(compare(&[]).is_err());
        assert!(matches!(
            compare_sets(&[vec![summary("a", &[])], vec![summary("b", &[])]]),
            Err(Error::ScenarioMismatch(_))
        ));
        let tables = compare_sets(&[
            vec![summary("a", &[(PolicyKind::Qudqn, 1.0)]), summary("b", &[])],
            vec![summary("a", &[(PolicyKind::Shortest, 2.0)])],
        ])
        .unwrap();
        assert_eq!(tables.len(), 1);
        assert_eq!(tables[0].policies.len(), 2);
    }

    #[test]
    fn zero_baseline_has_no_percentage() {
        assert_eq!(percent_diff(3.0, 0.0), None);
    }

    #[test]
    fn empty_csv_still_has_header() {
        assert_eq!(metrics_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn stat_uses_sample_std() {
        let s = Stat::of([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of([7.0]).std, 0.0);
    }
}
