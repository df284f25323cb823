//! Leaderless incremental-cost consensus with distributed mismatch tracking.
//!
//! Every node, generator or consumer, holds an estimate `λ_i` of the common
//! incremental cost and an estimate `m_i` of its share of the system power
//! mismatch (demand minus generation). One iteration is one bus heartbeat:
//!
//! ```text
//! λ_i⁺ = Σ_j w_ij λ_j + ε m_i
//! p_i⁺ = best response of node i to λ_i⁺
//! m_i⁺ = Σ_j w_ij m_j ± (p_i⁺ - p_i)     (+ for consumers, - for generators)
//! ```
//!
//! with `w` the Metropolis weights of the communication graph. Because `w`
//! is doubly stochastic, `Σ m_i` always equals total load minus total
//! generation, so driving every `m_i` to zero and every `λ_i` to a common
//! value lands on the balanced dispatch at the clearing price.
//!
//! Agents only see each other through the bus. Each broadcasts its `λ`, `m`,
//! power, and the running sum of all `m` it has ever broadcast. Receivers mix
//! neighbor mismatch through differences of that running sum, so a dropped or
//! late message postpones a neighbor's contribution instead of losing it. For
//! `λ` a receiver holds the last value heard from each neighbor and
//! renormalizes the weights over the neighbors it has heard from at least once.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{Bus, BusError, BusEvent, BusStats, DeliveryPolicy, Topic};
use crate::graph::{CommGraph, GraphError};
use crate::model::{Dispatch, ModelError, NodeKind, NodeParams, Scenario};
use crate::oracle::DispatchSolution;

pub const NODE_TOPIC: &str = "consensus/node";
pub const CONTROL_TOPIC: &str = "consensus/control";

pub const KEY_LAMBDA: &str = "lambda";
pub const KEY_MISMATCH: &str = "mismatch";
pub const KEY_POWER: &str = "power";
pub const KEY_MISMATCH_SUM: &str = "mismatch_sum";

/// Magnitude beyond which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

const WEIGHT_SUM_TOL: f64 = 1e-9;
const HALT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("graph has {graph} nodes but the scenario has {scenario}")]
    NodeCount { graph: usize, scenario: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite input to local update of node `{0}`")]
    NonFinite(String),
    #[error("mixing weights of node `{node}` sum to {sum}, expected 1")]
    WeightSum { node: String, sum: f64 },
    #[error("diverged at iteration {iteration} with epsilon = {epsilon}; try a smaller gain")]
    Diverged { iteration: usize, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Mismatch feedback gain, ($/kWh)/kW per iteration.
    pub epsilon: f64,
    /// Iteration cap. Zero runs no iterations and reports the initial state.
    pub max_iters: usize,
    /// Maximum allowed spread of the price estimates at convergence, $/kWh.
    pub tol_lambda: f64,
    /// Maximum allowed |mismatch estimate| of any node at convergence, kW.
    pub tol_power: f64,
    pub delivery: DeliveryPolicy,
    /// Keep the bus publish/deliver/drop log in the run result.
    pub record_bus_events: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            max_iters: 5000,
            tol_lambda: 1e-4,
            tol_power: 1e-3,
            delivery: DeliveryPolicy::lossless(),
            record_bus_events: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConsensusError::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("tol_lambda", self.tol_lambda)?;
        positive("tol_power", self.tol_power)?;
        self.delivery.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: String,
    pub kind: NodeKind,
    /// Local estimate of the common incremental cost, $/kWh.
    pub lambda_est: f64,
    /// Current setpoint, kW.
    pub power: f64,
    /// Local estimate of the mismatch share, kW.
    pub mismatch_est: f64,
}

/// Generators start at their marginal-cost intercept, consumers at their
/// marginal-utility intercept; both at zero power, so all mismatches are zero.
pub fn init_states(s: &Scenario) -> Vec<AgentState> {
    (0..s.node_count())
        .map(|i| {
            let params = s.node_params(i);
            let lambda = params.initial_price();
            let power = params.response(lambda);
            AgentState {
                id: s.node_id(i).to_string(),
                kind: params.kind(),
                lambda_est: lambda,
                power,
                mismatch_est: match params.kind() {
                    NodeKind::Consumer => power,
                    NodeKind::Generator => 0.0 - power,
                },
            }
        })
        .collect()
}

fn mix(node: &str, terms: &[(f64, f64)]) -> Result<f64, ConsensusError> {
    let mut sum_w = 0.0;
    let mut acc = 0.0;
    for &(w, v) in terms {
        if !(w.is_finite() && v.is_finite()) {
            return Err(ConsensusError::NonFinite(node.to_string()));
        }
        sum_w += w;
        acc += w * v;
    }
    if (sum_w - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(ConsensusError::WeightSum {
            node: node.to_string(),
            sum: sum_w,
        });
    }
    Ok(acc)
}

/// One protocol step of a single agent.
///
/// `lambda_terms` and `mismatch_terms` are `(weight, value)` pairs including
/// the agent's own term; each list's weights must sum to one.
pub fn local_update(
    state: &AgentState,
    params: &NodeParams,
    lambda_terms: &[(f64, f64)],
    mismatch_terms: &[(f64, f64)],
    epsilon: f64,
) -> Result<AgentState, ConsensusError> {
    if !(state.lambda_est.is_finite() && state.mismatch_est.is_finite() && state.power.is_finite())
    {
        return Err(ConsensusError::NonFinite(state.id.clone()));
    }
    let lambda = mix(&state.id, lambda_terms)? + epsilon * state.mismatch_est;
    let power = params.response(lambda);
    let change = power - state.power;
    let mixed = mix(&state.id, mismatch_terms)?;
    let mismatch = match params.kind() {
        NodeKind::Consumer => mixed + change,
        NodeKind::Generator => mixed - change,
    };
    Ok(AgentState {
        id: state.id.clone(),
        kind: state.kind,
        lambda_est: lambda,
        power,
        mismatch_est: mismatch,
    })
}

fn reached(lambdas: &[f64], mismatches: &[f64], cfg: &SolverConfig) -> bool {
    let (lo, hi) = lambdas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    mismatches.iter().all(|m| m.abs() <= cfg.tol_power) && hi - lo <= cfg.tol_lambda
}

/// Zero-mismatch consensus: every mismatch estimate within `tol_power` of zero
/// and all price estimates within `tol_lambda` of each other.
pub fn consensus_reached(states: &[AgentState], cfg: &SolverConfig) -> bool {
    let lambdas: Vec<f64> = states.iter().map(|s| s.lambda_est).collect();
    let mismatches: Vec<f64> = states.iter().map(|s| s.mismatch_est).collect();
    reached(&lambdas, &mismatches, cfg)
}

/// All node values after one iteration, in scenario node order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    pub mismatch: Vec<f64>,
    /// Laplacian potential of the `lambda` vector.
    pub potential: f64,
}

impl TraceRow {
    pub fn lambda_spread(&self) -> f64 {
        let hi = self.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.lambda.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    /// Total load minus total generation given the node kinds.
    pub fn power_mismatch(&self, s: &Scenario) -> f64 {
        let ng = s.generators().len();
        let gen: f64 = self.power[..ng].iter().sum();
        let load: f64 = self.power[ng..].iter().sum();
        load - gen
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub converged: bool,
    pub iterations: usize,
    pub solution: DispatchSolution,
    /// Row 0 is the initial state; row `k` follows iteration `k`.
    pub trace: Vec<TraceRow>,
    pub bus_stats: BusStats,
    /// Empty unless `record_bus_events` was set.
    pub bus_events: Vec<BusEvent>,
}

impl RunResult {
    pub fn final_row(&self) -> &TraceRow {
        self.trace.last().expect("trace holds at least the initial row")
    }

    pub fn potentials(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.potential).collect()
    }
}

struct Link {
    index: usize,
    weight: f64,
    held_lambda: Option<f64>,
    heard_round: Option<u64>,
    heard_sum: f64,
}

struct Agent {
    params: NodeParams,
    topic: Topic,
    self_weight: f64,
    links: Vec<Link>,
    by_id: HashMap<String, usize>,
    sent_sum: f64,
    halted: bool,
}

fn payload(state: &AgentState, sent_sum: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([
        (KEY_LAMBDA.to_string(), state.lambda_est),
        (KEY_MISMATCH.to_string(), state.mismatch_est),
        (KEY_POWER.to_string(), state.power),
        (KEY_MISMATCH_SUM.to_string(), sent_sum),
    ])
}

fn row(iter: usize, states: &[AgentState], g: &CommGraph) -> Result<TraceRow, GraphError> {
    let lambda: Vec<f64> = states.iter().map(|s| s.lambda_est).collect();
    let potential = g.laplacian_potential(&lambda)?;
    Ok(TraceRow {
        iter,
        lambda,
        power: states.iter().map(|s| s.power).collect(),
        mismatch: states.iter().map(|s| s.mismatch_est).collect(),
        potential,
    })
}

/// Runs the distributed protocol over a fresh bus until consensus or `max_iters`.
pub fn run_dispatch(
    s: &Scenario,
    g: &CommGraph,
    cfg: &SolverConfig,
) -> Result<RunResult, ConsensusError> {
    cfg.validate()?;
    if g.node_count() != s.node_count() {
        return Err(ConsensusError::NodeCount {
            graph: g.node_count(),
            scenario: s.node_count(),
        });
    }
    let weights = g.metropolis_weights()?;

    let mut bus = Bus::new(cfg.delivery)?;
    if cfg.record_bus_events {
        bus = bus.with_event_log();
    }
    let node_root: Topic = NODE_TOPIC.parse()?;
    let control: Topic = CONTROL_TOPIC.parse()?;

    let mut agents = Vec::with_capacity(s.node_count());
    for i in 0..s.node_count() {
        let id = s.node_id(i);
        let links: Vec<Link> = g
            .neighbors(i)
            .map(|j| Link {
                index: j,
                weight: weights.get(i, j),
                held_lambda: None,
                heard_round: None,
                heard_sum: 0.0,
            })
            .collect();
        let by_id = links
            .iter()
            .enumerate()
            .map(|(k, l)| (s.node_id(l.index).to_string(), k))
            .collect();
        for l in &links {
            bus.subscribe(id, node_root.child(s.node_id(l.index))?);
        }
        bus.subscribe(id, control.clone());
        agents.push(Agent {
            params: s.node_params(i),
            topic: node_root.child(id)?,
            self_weight: weights.get(i, i),
            links,
            by_id,
            sent_sum: 0.0,
            halted: false,
        });
    }

    let mut states = init_states(s);
    let mut trace = vec![row(0, &states, g)?];
    let mut converged = reached(&trace[0].lambda, &trace[0].mismatch, cfg);
    let mut iterations = 0;

    let mut lambda_terms = Vec::new();
    let mut mismatch_terms = Vec::new();
    while !converged && iterations < cfg.max_iters {
        for (agent, state) in agents.iter_mut().zip(&states) {
            agent.sent_sum += state.mismatch_est;
            bus.publish_to(agent.topic.clone(), &state.id, payload(state, agent.sent_sum));
        }
        bus.deliver_round();

        let mut next = Vec::with_capacity(states.len());
        for (agent, state) in agents.iter_mut().zip(&states) {
            let mut inflow = vec![0.0; agent.links.len()];
            for msg in bus.drain_inbox(&state.id) {
                let Some(&k) = agent.by_id.get(&msg.publisher) else {
                    continue;
                };
                let link = &mut agent.links[k];
                if link.heard_round.is_some_and(|r| r >= msg.publish_round) {
                    continue;
                }
                let (Some(lambda), Some(sum)) = (msg.get(KEY_LAMBDA), msg.get(KEY_MISMATCH_SUM))
                else {
                    continue;
                };
                inflow[k] += sum - link.heard_sum;
                link.heard_sum = sum;
                link.held_lambda = Some(lambda);
                link.heard_round = Some(msg.publish_round);
            }

            lambda_terms.clear();
            lambda_terms.push((agent.self_weight, state.lambda_est));
            let mut heard_weight = agent.self_weight;
            for l in &agent.links {
                if let Some(v) = l.held_lambda {
                    lambda_terms.push((l.weight, v));
                    heard_weight += l.weight;
                }
            }
            for t in &mut lambda_terms {
                t.0 /= heard_weight;
            }

            mismatch_terms.clear();
            mismatch_terms.push((agent.self_weight, state.mismatch_est));
            mismatch_terms.extend(agent.links.iter().zip(&inflow).map(|(l, &v)| (l.weight, v)));

            next.push(local_update(
                state,
                &agent.params,
                &lambda_terms,
                &mismatch_terms,
                cfg.epsilon,
            )?);
        }
        states = next;
        iterations += 1;

        if states.iter().any(|st| {
            !(st.lambda_est.abs() <= DIVERGENCE_LIMIT && st.mismatch_est.abs() <= DIVERGENCE_LIMIT)
        }) {
            return Err(ConsensusError::Diverged {
                iteration: iterations,
                epsilon: cfg.epsilon,
            });
        }
        let r = row(iterations, &states, g)?;
        converged = reached(&r.lambda, &r.mismatch, cfg);
        trace.push(r);
    }

    if converged {
        let halt = BTreeMap::from([
            ("halt".to_string(), 1.0),
            ("iteration".to_string(), iterations as f64),
        ]);
        // The halt can be lost like any other message, so repeat it until
        // every agent has heard it.
        for _ in 0..HALT_ATTEMPTS {
            if agents.iter().all(|a| a.halted) {
                break;
            }
            bus.publish_to(control.clone(), "coordinator", halt.clone());
            bus.deliver_round();
            for (agent, state) in agents.iter_mut().zip(&states) {
                let heard = bus
                    .drain_inbox(&state.id)
                    .iter()
                    .any(|m| control.matches(&m.topic));
                agent.halted |= heard;
            }
        }
    }

    let ng = s.generators().len();
    let powers: Vec<f64> = states.iter().map(|st| st.power).collect();
    let dispatch = Dispatch {
        gen_power: powers[..ng].to_vec(),
        load_power: powers[ng..].to_vec(),
    };
    let lambda_mean = states.iter().map(|st| st.lambda_est).sum::<f64>() / states.len() as f64;
    let solution = DispatchSolution::from_dispatch(s, dispatch, lambda_mean, converged)?;

    Ok(RunResult {
        converged,
        iterations,
        solution,
        trace,
        bus_stats: bus.stats(),
        bus_events: bus.take_events(),
    })
}

/// Laplacian potential of each trace row's price vector.
pub fn trace_laplacian_potential(trace: &[TraceRow], g: &CommGraph) -> Result<Vec<f64>, GraphError> {
    trace.iter().map(|r| g.laplacian_potential(&r.lambda)).collect()
}

pub const TRACE_CSV_HEADER: &str = "iter,node_id,kind,lambda,power,mismatch,potential";

/// One line per node per iteration, full precision.
pub fn write_trace_csv<W: Write>(mut out: W, s: &Scenario, trace: &[TraceRow]) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in trace {
        for i in 0..s.node_count() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter,
                s.node_id(i),
                s.node_params(i).kind(),
                r.lambda[i],
                r.power[i],
                r.mismatch[i],
                r.potential
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::EventKind;
    use crate::graph::Preset;
    use crate::model::{Consumer, ConsumerParams, Generator, GeneratorParams};
    use crate::oracle::{solve_centralized, DEFAULT_BALANCE_TOL};
    use approx::assert_abs_diff_eq;

    fn two_node() -> Scenario {
        Scenario::new(
            vec![Generator {
                id: "G".into(),
                params: GeneratorParams::new(0.01, 5.0, 0.0, 200.0).unwrap(),
            }],
            vec![Consumer {
                id: "L".into(),
                params: ConsumerParams::new(0.05, 10.0, 150.0).unwrap(),
            }],
        )
        .unwrap()
    }

    fn state(kind: NodeKind, lambda: f64, power: f64, mismatch: f64) -> AgentState {
        AgentState {
            id: "n".into(),
            kind,
            lambda_est: lambda,
            power,
            mismatch_est: mismatch,
        }
    }

    #[test]
    fn initial_states() {
        let s = two_node();
        let st = init_states(&s);
        assert_eq!(st[0].lambda_est, 5.0);
        assert_eq!(st[1].lambda_est, 10.0);
        assert!(st.iter().all(|a| a.power == 0.0 && a.mismatch_est == 0.0));
    }

    #[test]
    fn fixed_point_is_preserved() {
        let g = GeneratorParams::new(0.01, 5.0, 0.0, 200.0).unwrap();
        let params = NodeParams::Generator(g);
        let lam = 6.5;
        let st = state(NodeKind::Generator, lam, params.response(lam), 0.0);
        let terms = [(0.5, lam), (0.25, lam), (0.25, lam)];
        let zeros = [(0.5, 0.0), (0.25, 0.0), (0.25, 0.0)];
        let next = local_update(&st, &params, &terms, &zeros, 0.05).unwrap();
        assert_eq!(next, st);
    }

    #[test]
    fn pair_averages() {
        let g = NodeParams::Generator(GeneratorParams::new(0.01, 5.0, 0.0, 200.0).unwrap());
        let c = NodeParams::Consumer(ConsumerParams::new(0.05, 10.0, 150.0).unwrap());
        let a = state(NodeKind::Generator, 4.0, 0.0, 0.0);
        let b = state(NodeKind::Consumer, 6.0, 40.0, 0.0);
        let terms = [(0.5, 4.0), (0.5, 6.0)];
        let m = [(0.5, 0.0), (0.5, 0.0)];
        assert_eq!(local_update(&a, &g, &terms, &m, 0.01).unwrap().lambda_est, 5.0);
        assert_eq!(local_update(&b, &c, &terms, &m, 0.01).unwrap().lambda_est, 5.0);
    }

    #[test]
    fn excess_demand_raises_price_and_generation() {
        // Hand-stepped reference: generator at λ=6 (p=50), neighbor λ=6,
        // mismatch 10 kW of unserved demand, ε = 0.01.
        let gp = GeneratorParams::new(0.01, 5.0, 0.0, 200.0).unwrap();
        let params = NodeParams::Generator(gp);
        let st = state(NodeKind::Generator, 6.0, 50.0, 10.0);
        let next = local_update(
            &st,
            &params,
            &[(0.5, 6.0), (0.5, 6.0)],
            &[(0.5, 10.0), (0.5, 10.0)],
            0.01,
        )
        .unwrap();
        assert_abs_diff_eq!(next.lambda_est, 6.1, epsilon = 1e-12);
        assert_abs_diff_eq!(next.power, 55.0, epsilon = 1e-9);
        assert_abs_diff_eq!(next.mismatch_est, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn local_update_errors() {
        let params = NodeParams::Generator(GeneratorParams::new(0.01, 5.0, 0.0, 200.0).unwrap());
        let st = state(NodeKind::Generator, 6.0, 50.0, 0.0);
        let bad_sum = local_update(&st, &params, &[(0.5, 6.0)], &[(1.0, 0.0)], 0.01);
        assert!(matches!(bad_sum, Err(ConsensusError::WeightSum { .. })));
        let nan = local_update(&st, &params, &[(1.0, f64::NAN)], &[(1.0, 0.0)], 0.01);
        assert!(matches!(nan, Err(ConsensusError::NonFinite(_))));
        let bad_state = state(NodeKind::Generator, f64::INFINITY, 0.0, 0.0);
        assert!(local_update(&bad_state, &params, &[(1.0, 0.0)], &[(1.0, 0.0)], 0.01).is_err());
    }

    #[test]
    fn consensus_condition() {
        let cfg = SolverConfig::default();
        let mk = |l: f64, m: f64| state(NodeKind::Consumer, l, 0.0, m);
        assert!(consensus_reached(&[mk(7.0, 0.0), mk(7.0, 0.0)], &cfg));
        assert!(!consensus_reached(
            &[mk(7.0, 2.0 * cfg.tol_power), mk(7.0, 0.0)],
            &cfg
        ));
        assert!(!consensus_reached(
            &[mk(7.0, 0.0), mk(7.0 + 1.01 * cfg.tol_lambda, 0.0)],
            &cfg
        ));
    }

    #[test]
    fn two_node_run_matches_closed_form() {
        let s = two_node();
        let g = CommGraph::preset(Preset::Line, 2);
        let cfg = SolverConfig::default();
        let res = run_dispatch(&s, &g, &cfg).unwrap();
        assert!(res.converged);
        let sol = &res.solution;
        assert!((sol.total_gen - sol.total_load).abs() <= 2.0 * cfg.tol_power);
        assert!((sol.lambda_star - 35.0 / 6.0).abs() <= cfg.tol_lambda);
        let oracle = solve_centralized(&s, DEFAULT_BALANCE_TOL).unwrap();
        assert!((sol.lambda_star - oracle.lambda_star).abs() <= 1e-3);
    }

    #[test]
    fn zero_iterations_reports_initial_state() {
        let s = two_node();
        let g = CommGraph::preset(Preset::Line, 2);
        let cfg = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        let res = run_dispatch(&s, &g, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 0);
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.bus_stats.published, 0);
    }

    #[test]
    fn configuration_errors() {
        let s = two_node();
        let cfg = SolverConfig::default();
        let split = CommGraph::new(2, &[]).unwrap();
        assert!(matches!(
            run_dispatch(&s, &split, &cfg),
            Err(ConsensusError::Graph(GraphError::Disconnected))
        ));
        let wrong = CommGraph::preset(Preset::Line, 3);
        assert!(matches!(
            run_dispatch(&s, &wrong, &cfg),
            Err(ConsensusError::NodeCount { .. })
        ));
        let bad = SolverConfig {
            epsilon: 0.0,
            ..cfg
        };
        assert!(matches!(
            run_dispatch(&s, &CommGraph::preset(Preset::Line, 2), &bad),
            Err(ConsensusError::Config(_))
        ));
    }

    #[test]
    fn oversized_gain_is_reported_as_divergence() {
        // Unbounded price swings need a node whose response never clamps on
        // the swing, so use huge capacities.
        let s = Scenario::new(
            vec![Generator {
                id: "G".into(),
                params: GeneratorParams::new(0.001, 5.0, 0.0, 1e12).unwrap(),
            }],
            vec![Consumer {
                id: "L".into(),
                params: ConsumerParams::new(0.001, 10.0, 1e12).unwrap(),
            }],
        )
        .unwrap();
        let cfg = SolverConfig {
            epsilon: 50.0,
            ..SolverConfig::default()
        };
        let err = run_dispatch(&s, &CommGraph::preset(Preset::Line, 2), &cfg).unwrap_err();
        assert!(matches!(err, ConsensusError::Diverged { epsilon, .. } if epsilon == 50.0));
        assert!(err.to_string().contains("epsilon = 50"));
    }

    #[test]
    fn halt_reaches_every_agent_under_heavy_loss() {
        let s = two_node();
        let g = CommGraph::preset(Preset::Line, 2);
        let cfg = SolverConfig {
            max_iters: 100_000,
            delivery: DeliveryPolicy {
                drop_probability: 0.9,
                delay_rounds: 0,
                rng_seed: 11,
            },
            record_bus_events: true,
            ..SolverConfig::default()
        };
        let res = run_dispatch(&s, &g, &cfg).unwrap();
        assert!(res.converged);
        for id in ["G", "L"] {
            assert!(res.bus_events.iter().any(|e| e.kind == EventKind::Deliver
                && e.topic == CONTROL_TOPIC
                && e.subscriber.as_deref() == Some(id)));
        }
    }

    #[test]
    fn trace_csv_layout() {
        let s = two_node();
        let g = CommGraph::preset(Preset::Line, 2);
        let cfg = SolverConfig {
            max_iters: 2,
            ..SolverConfig::default()
        };
        let res = run_dispatch(&s, &g, &cfg).unwrap();
        let mut out = Vec::new();
        write_trace_csv(&mut out, &s, &res.trace).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], TRACE_CSV_HEADER);
        assert_eq!(lines.len(), 1 + 3 * 2);
        assert_eq!(lines[1], "0,G,generator,5,0,0,25");
        assert!(lines[2].starts_with("0,L,consumer,10,0,0,"));
        assert!(lines[5].starts_with("2,G,generator,"));
    }
}
