//! Distributed economic dispatch by incremental-cost consensus.
//!
//! Generator and consumer agents exchange price and power-mismatch estimates
//! over an in-process publish/subscribe [`bus`], each re-optimizing its own
//! setpoint, until every agent agrees on one price and the estimated mismatch
//! vanishes. A centralized [`oracle`] solves the same welfare problem directly
//! and certifies the distributed result.

pub mod bus;
pub mod consensus;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod scenario;

pub use bus::{Bus, BusError, BusEvent, DeliveryPolicy, Message, Topic};
pub use consensus::{
    consensus_reached, init_states, local_update, run_dispatch, AgentState, ConsensusError,
    RunResult, SolverConfig, TraceRow,
};
pub use graph::{CommGraph, GraphError, Preset, WeightMatrix};
pub use model::{
    ConsumerParams, Dispatch, GeneratorParams, ModelError, NodeKind, NodeParams, Scenario,
};
pub use oracle::{solve_centralized, verify_kkt, DispatchSolution, KktReport, OracleError};
pub use scenario::{
    generate_scenario, load_scenario, parse_scenario, GenerationRanges, LoadedScenario,
    ScenarioError, ScenarioFile,
};
