//! Entanglement routing over quantum repeater grids.
//!
//! The crate is layered bottom-up:
//!
//! - [`topology`]: static grid graphs with qubit/channel capacities and link fidelities.
//! - [`demand`]: per-episode source/destination request sets.
//! - [`entanglement`]: the residual-resource ledger and the stochastic
//!   generation/swap attempt model.
//! - [`routing`]: shortest and k-shortest candidate paths, action masks and
//!   the two greedy baselines.
//! - [`qlearn`]: a small deep Q-network (MLP, replay, TD targets, target sync).
//! - [`env`]: the routing MDP, training loop and policy evaluation.
//! - [`scenario`]: experiment definitions, metrics CSV/summary output and comparisons.

pub mod demand;
pub mod entanglement;
pub mod env;
mod error;
pub mod qlearn;
pub mod routing;
pub mod scenario;
pub mod seed;
pub mod topology;

pub use demand::{generate_demands, DemandSet, Request, RequestId, RequestStatus};
pub use entanglement::{
    attempt_path, feasible, path_fidelity, qubit_cost, AttemptResult, FailureStage, NetworkState,
    Path, PhysParams,
};
pub use env::{
    encode_state, evaluate, reward, select_action, train, EnvConfig, Episode, EpisodeRecord,
    Observation, PolicyKind, RewardContext, RewardParams, StepOutcome, TrainingLog,
};
pub use error::{Error, Result};
pub use qlearn::{
    grad_check, mlp_init, sync_target, td_target, train_step, Checkpoint, Mlp, ReplayBuffer,
    TrainConfig, Transition,
};
pub use routing::{
    build_action_mask, candidate_set, k_shortest_paths, policy_random, policy_shortest,
    shortest_path, ActionMask, CandidateSet, ScheduledAttempt,
};
pub use scenario::{
    aggregate, compare, compare_sets, run_scenario, scenario_suite, ComparisonTable, MetricsRow,
    PolicySummary, RunOptions, Scenario, ScenarioSummary, Stat, SuiteKind,
};
pub use topology::{grid_topology, Edge, EdgeId, Node, NodeId, Topology, TopologyConfig};
