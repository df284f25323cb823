//! Scenario files: JSON documents pinning down node parameters, the
//! communication graph and optional solver overrides.
//!
//! ```json
//! {
//!   "version": 1,
//!   "generators": [{ "id": "DG1", "alpha": 0.01, "beta": 5.0, "gamma": 2.0, "p_max": 200.0 }],
//!   "consumers": [{ "id": "L1", "sigma": 0.05, "omega": 10.0, "p_max": 150.0 }],
//!   "graph": { "preset": "line" },
//!   "solver": { "epsilon": 0.005, "max_iters": 5000 }
//! }
//! ```
//!
//! `graph` is either `{ "preset": "ring" | "complete" | "star" | "line" }` or
//! `{ "edges": [["DG1", "L1"], ["L1", "L2", 2.0]] }` where the optional third
//! element is the edge weight. Presets follow node order: generators first,
//! then consumers. An omitted graph means a ring. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::DeliveryPolicy;
use crate::consensus::SolverConfig;
use crate::graph::{CommGraph, Preset};
use crate::model::{Consumer, ConsumerParams, Generator, GeneratorParams, ModelError, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub id: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerEntry {
    pub id: String,
    pub sigma: f64,
    pub omega: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeEntry {
    Plain(String, String),
    Weighted(String, String, f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeEntry>>,
}

impl GraphSpec {
    pub fn preset(p: Preset) -> Self {
        Self {
            preset: Some(p),
            edges: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_rounds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SolverOverrides {
    pub fn apply(&self, base: SolverConfig) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            tol_lambda: self.tol_lambda.unwrap_or(base.tol_lambda),
            tol_power: self.tol_power.unwrap_or(base.tol_power),
            delivery: DeliveryPolicy {
                drop_probability: self.drop_probability.unwrap_or(base.delivery.drop_probability),
                delay_rounds: self.delay_rounds.unwrap_or(base.delivery.delay_rounds),
                rng_seed: self.seed.unwrap_or(base.delivery.rng_seed),
            },
            record_bus_events: base.record_bus_events,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub generators: Vec<GeneratorEntry>,
    pub consumers: Vec<ConsumerEntry>,
    #[serde(default)]
    pub graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOverrides>,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub graph: CommGraph,
    pub solver: SolverConfig,
}

impl LoadedScenario {
    /// Replaces the communication graph with a preset over the same nodes.
    pub fn with_topology(mut self, preset: Preset) -> Self {
        self.graph = CommGraph::preset(preset, self.scenario.node_count());
        self
    }
}

fn param_error(side: &str, i: usize, id: &str, e: ModelError) -> ScenarioError {
    match e {
        ModelError::InvalidParam { field, reason } => {
            invalid(format!("{side}[{i}] (`{id}`): field `{field}` {reason}"))
        }
        other => invalid(format!("{side}[{i}] (`{id}`): {other}")),
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<LoadedScenario, ScenarioError> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.generators.is_empty() {
            return Err(invalid("`generators` needs at least one entry"));
        }
        if self.consumers.is_empty() {
            return Err(invalid("`consumers` needs at least one entry"));
        }

        let mut generators = Vec::with_capacity(self.generators.len());
        for (i, e) in self.generators.iter().enumerate() {
            if e.id.is_empty() || e.id.contains('/') {
                return Err(invalid(format!("generators[{i}]: id must be non-empty and contain no '/'")));
            }
            let params = GeneratorParams::new(e.alpha, e.beta, e.gamma, e.p_max)
                .map_err(|err| param_error("generators", i, &e.id, err))?;
            generators.push(Generator { id: e.id.clone(), params });
        }
        let mut consumers = Vec::with_capacity(self.consumers.len());
        for (i, e) in self.consumers.iter().enumerate() {
            if e.id.is_empty() || e.id.contains('/') {
                return Err(invalid(format!("consumers[{i}]: id must be non-empty and contain no '/'")));
            }
            let params = ConsumerParams::new(e.sigma, e.omega, e.p_max)
                .map_err(|err| param_error("consumers", i, &e.id, err))?;
            consumers.push(Consumer { id: e.id.clone(), params });
        }
        let scenario = Scenario::new(generators, consumers).map_err(|e| invalid(e.to_string()))?;
        let n = scenario.node_count();

        let graph = match (&self.graph.preset, &self.graph.edges) {
            (Some(_), Some(_)) => {
                return Err(invalid("graph: give either `preset` or `edges`, not both"))
            }
            (Some(p), None) => CommGraph::preset(*p, n),
            (None, None) => CommGraph::preset(Preset::Ring, n),
            (None, Some(edges)) => {
                let lookup = |k: usize, id: &str| {
                    scenario
                        .index_of(id)
                        .ok_or_else(|| invalid(format!("graph.edges[{k}]: unknown node id `{id}`")))
                };
                let mut resolved = Vec::with_capacity(edges.len());
                for (k, e) in edges.iter().enumerate() {
                    let (a, b, w) = match e {
                        EdgeEntry::Plain(a, b) => (a, b, 1.0),
                        EdgeEntry::Weighted(a, b, w) => (a, b, *w),
                    };
                    resolved.push((lookup(k, a)?, lookup(k, b)?, w));
                }
                CommGraph::weighted(n, &resolved).map_err(|e| invalid(format!("graph: {e}")))?
            }
        };

        let solver = self
            .solver
            .as_ref()
            .map_or_else(SolverConfig::default, |o| o.apply(SolverConfig::default()));
        if solver.max_iters == 0 {
            return Err(invalid("solver: field `max_iters` must be >= 1"));
        }
        solver
            .validate()
            .map_err(|e| invalid(format!("solver: {e}")))?;

        Ok(LoadedScenario {
            scenario,
            graph,
            solver,
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<LoadedScenario, ScenarioError> {
    ScenarioFile::parse(text)?.validate()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Uniform sampling ranges for random scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationRanges {
    pub alpha: Range,
    pub beta: Range,
    pub gamma: Range,
    pub gen_p_max: Range,
    pub sigma: Range,
    pub omega: Range,
    pub load_p_max: Range,
}

impl Default for GenerationRanges {
    /// Sized so six generators serve roughly 400 kW against ten consumers
    /// and most nodes clear strictly inside their capacity bounds.
    fn default() -> Self {
        Self {
            alpha: Range::new(0.005, 0.05),
            beta: Range::new(2.0, 8.0),
            gamma: Range::new(0.0, 5.0),
            gen_p_max: Range::new(80.0, 200.0),
            sigma: Range::new(0.02, 0.1),
            omega: Range::new(6.0, 14.0),
            load_p_max: Range::new(30.0, 100.0),
        }
    }
}

impl GenerationRanges {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let ranges = [
            ("alpha", self.alpha, false),
            ("beta", self.beta, false),
            ("gamma", self.gamma, true),
            ("gen_p_max", self.gen_p_max, false),
            ("sigma", self.sigma, false),
            ("omega", self.omega, false),
            ("load_p_max", self.load_p_max, false),
        ];
        for (name, r, zero_ok) in ranges {
            let lo_ok = if zero_ok { r.lo >= 0.0 } else { r.lo > 0.0 };
            if !(r.lo.is_finite() && r.hi.is_finite() && lo_ok && r.lo < r.hi) {
                return Err(invalid(format!("range `{name}` {r} must satisfy 0 < lo < hi")));
            }
        }
        Ok(())
    }
}

// Six significant digits keeps files readable and survives a JSON round trip.
fn tidy(x: f64) -> f64 {
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// Deterministic random scenario with ids `DG1..` and `L1..` on a ring.
pub fn generate_scenario(
    seed: u64,
    n_gen: usize,
    n_load: usize,
    ranges: &GenerationRanges,
) -> Result<ScenarioFile, ScenarioError> {
    if n_gen == 0 || n_load == 0 {
        return Err(invalid("need at least one generator and one consumer"));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: Range| tidy(rng.gen_range(r.lo..r.hi));

    let generators = (1..=n_gen)
        .map(|k| GeneratorEntry {
            id: format!("DG{k}"),
            alpha: draw(ranges.alpha),
            beta: draw(ranges.beta),
            gamma: draw(ranges.gamma),
            p_max: draw(ranges.gen_p_max),
        })
        .collect();
    let consumers = (1..=n_load)
        .map(|k| ConsumerEntry {
            id: format!("L{k}"),
            sigma: draw(ranges.sigma),
            omega: draw(ranges.omega),
            p_max: draw(ranges.load_p_max),
        })
        .collect();

    Ok(ScenarioFile {
        version: SCHEMA_VERSION,
        generators,
        consumers,
        graph: GraphSpec::preset(Preset::Ring),
        solver: None,
    })
}
