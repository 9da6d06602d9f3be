//! The routing MDP, the training loop and policy evaluation.
//!
//! An action is a `(request slot, candidate path)` pair encoded as
//! `slot * k + path`. Every step recomputes each pending request's `k`
//! candidate paths over the residual graph and masks out the infeasible ones.
//!
//! State layout (all components in `[0, 1]`):
//!
//! | block | length | content |
//! |---|---|---|
//! | qubits | `N` | residual qubits per node / max node capacity |
//! | channels | `|E|` | residual channel units per edge / max edge capacity |
//! | requests | `K * (2N + 1)` | per slot: src one-hot, dst one-hot, pending flag; zeros once resolved |
//! | physics | 3 | `p_e`, `q_v`, `f_min` |

use std::path::Path as FsPath;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{generate_demands, DemandSet};
use crate::entanglement::{attempt_path, AttemptResult, NetworkState, PhysParams};
use crate::qlearn::{mlp_init, Learner, Mlp, TrainConfig, Transition};
use crate::routing::{build_action_mask, candidate_set, ActionMask, CandidateSet};
use crate::seed::{self, Stream};
use crate::topology::Topology;
use crate::{Error, Result};

/// Reward weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Reward per resolved request.
    pub alpha: f64,
    /// Penalty per request left unresolved at episode end, and per invalid action.
    pub beta: f64,
    /// Weight of the fidelity/success-probability bonus.
    pub fidelity_weight: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha: 0.2,
            beta: -1.0,
            fidelity_weight: 0.9,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta <= 0.0 && 0.0 <= self.alpha) {
            return Err(Error::config("reward", "need beta <= 0 <= alpha"));
        }
        Ok(())
    }
}

/// Everything that fixes the MDP's shape and dynamics.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub topology: Arc<Topology>,
    /// Request slots `K`; demand sets hold at most this many requests.
    pub requests: usize,
    pub k_paths: usize,
    pub phys: PhysParams,
    pub reward: RewardParams,
    /// Step budget per episode is this factor times `|D|`.
    pub step_budget_factor: usize,
}

impl EnvConfig {
    pub fn new(topology: Arc<Topology>, requests: usize, k_paths: usize, phys: PhysParams) -> Self {
        EnvConfig {
            topology,
            requests,
            k_paths,
            phys,
            reward: RewardParams::default(),
            step_budget_factor: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.requests < 1 {
            return Err(Error::config("requests", "need at least one request"));
        }
        if self.k_paths < 1 {
            return Err(Error::config("k_paths", "need at least one candidate path"));
        }
        if self.step_budget_factor < 1 {
            return Err(Error::config("step_budget_factor", "must be at least 1"));
        }
        self.phys.validate()?;
        self.reward.validate()
    }

    pub fn state_dim(&self) -> usize {
        let n = self.topology.node_count();
        n + self.topology.edge_count() + self.requests * (2 * n + 1) + 3
    }

    pub fn action_dim(&self) -> usize {
        self.requests * self.k_paths
    }
}

/// Fixed-length state vector; see the module docs for the layout.
pub fn encode_state(
    state: &NetworkState,
    demands: &DemandSet,
    params: &PhysParams,
    slots: usize,
) -> Result<Vec<f64>> {
    if demands.len() > slots {
        return Err(Error::Dimension {
            expected: slots,
            actual: demands.len(),
        });
    }
    let topo = state.topology();
    let n = topo.node_count();
    let scale = |cap: u32| if cap == 0 { 0.0 } else { 1.0 / cap as f64 };
    let qscale = scale(topo.max_qubit_capacity());
    let cscale = scale(topo.max_channel_capacity());

    let mut v = Vec::with_capacity(n + topo.edge_count() + slots * (2 * n + 1) + 3);
    v.extend(state.residual_qubits().iter().map(|&q| q as f64 * qscale));
    v.extend(state.residual_channels().iter().map(|&c| c as f64 * cscale));
    for slot in 0..slots {
        let base = v.len();
        v.resize(base + 2 * n + 1, 0.0);
        if let Some(r) = demands.get(slot).filter(|r| r.is_pending()) {
            v[base + r.src.0] = 1.0;
            v[base + n + r.dst.0] = 1.0;
            v[base + 2 * n] = 1.0;
        }
    }
    v.extend([params.p_e, params.q_v, params.f_min]);
    Ok(v)
}

/// What a delivered entanglement contributes to the fidelity bonus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub fidelity: f64,
    pub hops: usize,
}

/// Inputs to the per-step reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardContext {
    /// Requests resolved by this step (0 or 1).
    pub resolved_delta: u32,
    /// `|D|`.
    pub total: usize,
    /// Requests resolved so far, including this step.
    pub resolved_total: usize,
    pub terminal: bool,
    /// Set when this step delivered an entanglement.
    pub delivery: Option<Delivery>,
    /// The action was masked out.
    pub invalid: bool,
}

/// Immediate reward:
/// `Δn·α + (|D| - n)·β·f + w·F·q_v^(h-1)·p_e^h`, plus `β` for an invalid action.
///
/// The discounted future term is supplied by the TD bootstrap, not here.
pub fn reward(ctx: &RewardContext, weights: &RewardParams, phys: &PhysParams) -> f64 {
    let mut r = ctx.resolved_delta as f64 * weights.alpha;
    if ctx.terminal {
        r += (ctx.total - ctx.resolved_total) as f64 * weights.beta;
    }
    if let Some(d) = ctx.delivery {
        r += fidelity_bonus(d, weights, phys);
    }
    if ctx.invalid {
        r += weights.beta;
    }
    r
}

fn fidelity_bonus(d: Delivery, weights: &RewardParams, phys: &PhysParams) -> f64 {
    weights.fidelity_weight
        * d.fidelity
        * phys.q_v.powi(d.hops as i32 - 1)
        * phys.p_e.powi(d.hops as i32)
}

/// What the agent sees before acting.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: Vec<f64>,
    pub mask: ActionMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub resolved_delta: u32,
    pub terminal: bool,
    /// `None` when the action was invalid or the episode was closed.
    pub attempt: Option<AttemptResult>,
    pub invalid: bool,
}

/// Totals for one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: usize,
    pub total_requests: usize,
    pub resolved: usize,
    pub qubits_used: u64,
    pub channels_used: u64,
    /// Realized fidelity of each delivery, in delivery order.
    pub fidelities: Vec<f64>,
    /// Hop count of each delivery, in delivery order.
    pub delivered_hops: Vec<usize>,
    pub steps: usize,
    pub episode_return: f64,
    pub fidelity_bonus: f64,
    pub invalid_actions: usize,
}

impl EpisodeRecord {
    pub fn mean_fidelity(&self) -> f64 {
        if self.fidelities.is_empty() {
            0.0
        } else {
            self.fidelities.iter().sum::<f64>() / self.fidelities.len() as f64
        }
    }
}

/// One episode of the routing MDP.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    cfg: &'a EnvConfig,
    state: NetworkState,
    demands: DemandSet,
    candidates: CandidateSet,
    mask: ActionMask,
    budget: usize,
    done: bool,
    terminal_events: usize,
    record: EpisodeRecord,
}

impl<'a> Episode<'a> {
    pub fn new(cfg: &'a EnvConfig, demands: DemandSet) -> Result<Self> {
        if demands.len() > cfg.requests {
            return Err(Error::Dimension {
                expected: cfg.requests,
                actual: demands.len(),
            });
        }
        let state = NetworkState::new(cfg.topology.clone());
        let candidates = candidate_set(&state, &demands, cfg.k_paths)?;
        let mut mask = build_action_mask(&state, &demands, &candidates, &cfg.phys);
        pad_mask(&mut mask, cfg);
        let record = EpisodeRecord {
            seed: 0,
            episode: 0,
            total_requests: demands.len(),
            resolved: 0,
            qubits_used: 0,
            channels_used: 0,
            fidelities: Vec::new(),
            delivered_hops: Vec::new(),
            steps: 0,
            episode_return: 0.0,
            fidelity_bonus: 0.0,
            invalid_actions: 0,
        };
        Ok(Episode {
            cfg,
            budget: cfg.step_budget_factor * demands.len(),
            state,
            demands,
            candidates,
            mask,
            done: false,
            terminal_events: 0,
            record,
        })
    }

    /// Tags the record with its seed and episode index.
    pub fn with_label(mut self, seed: u64, episode: usize) -> Self {
        self.record.seed = seed;
        self.record.episode = episode;
        self
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn demands(&self) -> &DemandSet {
        &self.demands
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn mask(&self) -> &ActionMask {
        &self.mask
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.record.steps
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Number of steps (or closes) that reported `terminal`.
    pub fn terminal_events(&self) -> usize {
        self.terminal_events
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn into_record(self) -> EpisodeRecord {
        self.record
    }

    pub fn observe(&self) -> Result<Observation> {
        Ok(Observation {
            state: encode_state(
                &self.state,
                &self.demands,
                &self.cfg.phys,
                self.cfg.requests,
            )?,
            mask: self.mask.clone(),
        })
    }

    /// Applies `action`. Masked-out actions cost `β` and leave the network untouched.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        action: usize,
        rng: &mut R,
    ) -> Result<(Observation, StepOutcome)> {
        if self.done {
            return Err(Error::Contract("step after episode end".into()));
        }
        if action >= self.cfg.action_dim() {
            return Err(Error::Contract(format!(
                "action {action} outside [0, {})",
                self.cfg.action_dim()
            )));
        }
        let (slot, path_slot) = self.mask.decode(action);
        let mut delivery = None;
        let mut attempt = None;
        let invalid = !self.mask.is_valid(action);
        if !invalid {
            let path = self
                .candidates
                .get(slot, path_slot)
                .expect("valid action has a candidate")
                .clone();
            let result = attempt_path(&mut self.state, &path, &self.cfg.phys, rng)?;
            if result.success {
                self.demands.resolve(slot)?;
                self.record.resolved += 1;
                self.record.qubits_used += u64::from(result.qubits_consumed);
                self.record.channels_used += u64::from(result.channels_consumed);
                self.record.fidelities.push(result.realized_fidelity);
                self.record.delivered_hops.push(path.hops());
                delivery = Some(Delivery {
                    fidelity: result.realized_fidelity,
                    hops: path.hops(),
                });
                self.candidates = candidate_set(&self.state, &self.demands, self.cfg.k_paths)?;
                self.mask =
                    build_action_mask(&self.state, &self.demands, &self.candidates, &self.cfg.phys);
                pad_mask(&mut self.mask, self.cfg);
            }
            attempt = Some(result);
        } else {
            self.record.invalid_actions += 1;
        }
        self.record.steps += 1;

        let terminal =
            !self.demands.has_pending() || !self.mask.any() || self.record.steps >= self.budget;
        let resolved_delta = u32::from(delivery.is_some());
        let ctx = RewardContext {
            resolved_delta,
            total: self.demands.len(),
            resolved_total: self.record.resolved,
            terminal,
            delivery,
            invalid,
        };
        let r = reward(&ctx, &self.cfg.reward, &self.cfg.phys);
        if let Some(d) = delivery {
            self.record.fidelity_bonus += fidelity_bonus(d, &self.cfg.reward, &self.cfg.phys);
        }
        self.record.episode_return += r;
        if terminal {
            self.finish();
        }
        let obs = self.observe()?;
        Ok((
            obs,
            StepOutcome {
                reward: r,
                resolved_delta,
                terminal,
                attempt,
                invalid,
            },
        ))
    }

    /// Ends the episode without acting, charging the unresolved-request penalty.
    /// Used when a policy has nothing it is willing to do.
    pub fn close(&mut self) -> StepOutcome {
        if self.done {
            return StepOutcome {
                reward: 0.0,
                resolved_delta: 0,
                terminal: true,
                attempt: None,
                invalid: false,
            };
        }
        let ctx = RewardContext {
            resolved_delta: 0,
            total: self.demands.len(),
            resolved_total: self.record.resolved,
            terminal: true,
            delivery: None,
            invalid: false,
        };
        let r = reward(&ctx, &self.cfg.reward, &self.cfg.phys);
        self.record.episode_return += r;
        self.finish();
        StepOutcome {
            reward: r,
            resolved_delta: 0,
            terminal: true,
            attempt: None,
            invalid: false,
        }
    }

    fn finish(&mut self) {
        self.done = true;
        self.terminal_events += 1;
        self.demands.fail_remaining();
    }
}

/// Extends the mask to the configured slot count when the demand set is smaller.
fn pad_mask(mask: &mut ActionMask, cfg: &EnvConfig) {
    if mask.len() < cfg.action_dim() {
        let mut bits = mask.bits().to_vec();
        bits.resize(cfg.action_dim(), false);
        *mask = ActionMask::from_bits(cfg.k_paths, bits);
    }
}

/// Epsilon-greedy over mask-valid actions; greedy ties go to the lowest id.
pub fn select_action<R: Rng + ?Sized>(
    mlp: &Mlp,
    obs: &Observation,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let valid: Vec<usize> = obs.mask.valid_actions().collect();
    if valid.is_empty() {
        return Err(Error::Contract("no valid action to select".into()));
    }
    if mlp.output_dim() != obs.mask.len() {
        return Err(Error::Dimension {
            expected: obs.mask.len(),
            actual: mlp.output_dim(),
        });
    }
    if rng.random::<f64>() < epsilon {
        return Ok(valid[rng.random_range(0..valid.len())]);
    }
    let q = mlp.forward(&obs.state)?;
    let mut best = valid[0];
    for &a in &valid[1..] {
        if q[a] > q[best] {
            best = a;
        }
    }
    Ok(best)
}

/// The three schedulers compared in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// The learned Q-network.
    Qudqn,
    /// Lowest-id request on its shortest path.
    Shortest,
    /// Uniformly random request on its shortest path.
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Qudqn, PolicyKind::Shortest, PolicyKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Qudqn => "qudqn",
            PolicyKind::Shortest => "shortest",
            PolicyKind::Random => "random",
        }
    }

    pub fn needs_agent(self) -> bool {
        self == PolicyKind::Qudqn
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qudqn" => Ok(PolicyKind::Qudqn),
            "shortest" => Ok(PolicyKind::Shortest),
            "random" => Ok(PolicyKind::Random),
            other => Err(Error::config("policy", format!("unknown policy {other:?}"))),
        }
    }
}

/// Baseline choice: a pending request whose shortest path (candidate 0) is
/// usable, picked by lowest id or uniformly at random.
fn baseline_action<R: Rng + ?Sized>(ep: &Episode<'_>, random: bool, rng: &mut R) -> Option<usize> {
    let mask = ep.mask();
    let slots: Vec<usize> = (0..ep.demands().len())
        .filter(|&s| mask.get(s, 0))
        .collect();
    if slots.is_empty() {
        return None;
    }
    let slot = if random {
        slots[rng.random_range(0..slots.len())]
    } else {
        slots[0]
    };
    Some(mask.encode(slot, 0))
}

/// Runs one episode to completion under `policy`.
pub fn run_episode<R: Rng + ?Sized>(
    episode: &mut Episode<'_>,
    policy: PolicyKind,
    agent: Option<&Mlp>,
    epsilon: f64,
    physics: &mut R,
    choice: &mut R,
) -> Result<()> {
    while !episode.is_done() {
        let action = match policy {
            PolicyKind::Qudqn => {
                let net = agent
                    .ok_or_else(|| Error::config("checkpoint", "qudqn needs a trained network"))?;
                if episode.mask().any() {
                    let obs = episode.observe()?;
                    Some(select_action(net, &obs, epsilon, choice)?)
                } else {
                    None
                }
            }
            PolicyKind::Shortest => baseline_action(episode, false, choice),
            PolicyKind::Random => baseline_action(episode, true, choice),
        };
        match action {
            Some(a) => {
                episode.step(a, physics)?;
            }
            None => {
                episode.close();
            }
        }
    }
    Ok(())
}

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub resolved: usize,
    pub loss_mean: Option<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub rows: Vec<TrainRow>,
    /// Loss of every gradient step, in order.
    pub losses: Vec<f64>,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub syncs: u64,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains a Q-network on fresh demand sets drawn per episode.
pub fn train(cfg: &EnvConfig, tc: &TrainConfig, seed: u64) -> Result<(Mlp, TrainingLog)> {
    cfg.validate()?;
    tc.validate()?;
    let mut dims = vec![cfg.state_dim()];
    dims.extend(&tc.hidden);
    dims.push(cfg.action_dim());
    let net = mlp_init(&dims, seed::derive(seed, Stream::NetInit, 0))?;
    let mut learner = Learner::new(net, tc.clone());
    let mut physics = seed::stream_rng(seed, Stream::TrainPhysics, 0);
    let mut explore = seed::stream_rng(seed, Stream::Exploration, 0);
    let mut replay = seed::stream_rng(seed, Stream::Replay, 0);
    let mut log = TrainingLog::default();

    'episodes: for e in 0..tc.episodes {
        let demands = generate_demands(
            &cfg.topology,
            cfg.requests,
            seed::derive(seed, Stream::TrainDemands, e as u64),
        )?;
        let epsilon = tc.epsilon(e);
        let mut ep = Episode::new(cfg, demands)?.with_label(seed, e);
        let mut losses = Vec::new();
        let mut out_of_budget = false;
        while !ep.is_done() {
            if tc.max_env_steps.is_some_and(|m| log.env_steps >= m) {
                out_of_budget = true;
                break;
            }
            if !ep.mask().any() {
                ep.close();
                break;
            }
            let obs = ep.observe()?;
            let action = select_action(&learner.main, &obs, epsilon, &mut explore)?;
            let (next, outcome) = ep.step(action, &mut physics)?;
            learner.observe(Transition {
                state: obs.state,
                action,
                reward: outcome.reward,
                next_state: next.state,
                done: outcome.terminal,
                next_mask: next.mask.bits().to_vec(),
            });
            log.env_steps += 1;
            if let Some(loss) = learner.learn(&mut replay)? {
                losses.push(loss);
            }
        }
        let rec = ep.record();
        log.rows.push(TrainRow {
            episode: e,
            episode_return: rec.episode_return,
            resolved: rec.resolved,
            loss_mean: (!losses.is_empty())
                .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            epsilon,
        });
        log.losses.extend(losses);
        if out_of_budget {
            break 'episodes;
        }
    }
    log.grad_steps = learner.grad_steps();
    log.syncs = learner.syncs();
    Ok((learner.main, log))
}

/// Plays `episodes` independent episodes greedily under `policy`.
///
/// Episode `i` sees the same demands and physical coin flips under every
/// policy for a given `seed`.
pub fn evaluate(
    policy: PolicyKind,
    cfg: &EnvConfig,
    agent: Option<&Mlp>,
    episodes: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<EpisodeRecord>> {
    cfg.validate()?;
    if episodes < 1 {
        return Err(Error::config("episodes", "need at least one episode"));
    }
    if policy.needs_agent() {
        let net =
            agent.ok_or_else(|| Error::config("checkpoint", "qudqn needs a trained network"))?;
        if net.input_dim() != cfg.state_dim() || net.output_dim() != cfg.action_dim() {
            return Err(Error::config(
                "checkpoint",
                format!(
                    "network is {}->{}, environment needs {}->{}",
                    net.input_dim(),
                    net.output_dim(),
                    cfg.state_dim(),
                    cfg.action_dim()
                ),
            ));
        }
    }
    let one = |i: usize| -> Result<EpisodeRecord> {
        let demands = generate_demands(
            &cfg.topology,
            cfg.requests,
            seed::derive(seed, Stream::EvalDemands, i as u64),
        )?;
        let mut ep = Episode::new(cfg, demands)?.with_label(seed, i);
        let mut physics = seed::stream_rng(seed, Stream::EvalPhysics, i as u64);
        let mut choice = seed::stream_rng(seed, Stream::EvalPolicy, i as u64);
        run_episode(&mut ep, policy, agent, 0.0, &mut physics, &mut choice)?;
        Ok(ep.into_record())
    };
    if parallel {
        (0..episodes).into_par_iter().map(one).collect()
    } else {
        (0..episodes).map(one).collect()
    }
}
