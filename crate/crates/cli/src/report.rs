//! Run summaries in the shape of a per-node results table.

use std::fmt::Write as _;

use dispatch_core::consensus::RunResult;
use dispatch_core::oracle::{DispatchSolution, KktReport};
use dispatch_core::{NodeKind, Scenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub id: String,
    pub kind: NodeKind,
    /// kW
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub nodes: Vec<NodeOutput>,
    pub total_generation: f64,
    pub total_load: f64,
    /// $/kWh
    pub lambda: f64,
    /// `None` for the centralized solve.
    pub iterations: Option<usize>,
    pub converged: bool,
    /// $/h
    pub objective: f64,
}

impl SummaryReport {
    fn build(s: &Scenario, sol: &DispatchSolution, iterations: Option<usize>, converged: bool) -> Self {
        let gens = s
            .generators()
            .iter()
            .zip(&sol.dispatch.gen_power)
            .map(|(g, &p)| NodeOutput {
                id: g.id.clone(),
                kind: NodeKind::Generator,
                power: p,
            });
        let loads = s
            .consumers()
            .iter()
            .zip(&sol.dispatch.load_power)
            .map(|(c, &p)| NodeOutput {
                id: c.id.clone(),
                kind: NodeKind::Consumer,
                power: p,
            });
        let nodes: Vec<NodeOutput> = gens.chain(loads).collect();
        let total = |k: NodeKind| nodes.iter().filter(|n| n.kind == k).map(|n| n.power).sum();
        Self {
            total_generation: total(NodeKind::Generator),
            total_load: total(NodeKind::Consumer),
            nodes,
            lambda: sol.lambda_star,
            iterations,
            converged,
            objective: sol.objective,
        }
    }

    pub fn from_run(s: &Scenario, run: &RunResult) -> Self {
        Self::build(s, &run.solution, Some(run.iterations), run.converged)
    }

    pub fn from_oracle(s: &Scenario, sol: &DispatchSolution) -> Self {
        Self::build(s, sol, None, sol.feasible)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Consumers first, then generators, powers to 0.1 kW and price to 0.01 $/kWh.
    pub fn render_text(&self) -> String {
        let ordered: Vec<&NodeOutput> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Consumer)
            .chain(self.nodes.iter().filter(|n| n.kind == NodeKind::Generator))
            .collect();
        let values: Vec<String> = ordered.iter().map(|n| format!("{:.1}", n.power)).collect();
        let label_w = "Output (kW)".len();

        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "Node");
        for (n, v) in ordered.iter().zip(&values) {
            let w = n.id.len().max(v.len());
            let _ = write!(out, "  {:>w$}", n.id);
        }
        out.push('\n');
        let _ = write!(out, "{:<label_w$}", "Output (kW)");
        for (n, v) in ordered.iter().zip(&values) {
            let w = n.id.len().max(v.len());
            let _ = write!(out, "  {v:>w$}");
        }
        out.push('\n');

        let iterations = self
            .iterations
            .map_or_else(|| "-".to_string(), |i| i.to_string());
        let _ = writeln!(
            out,
            "Total Generation (kW) {:.1} | Total Load (kW) {:.1} | Lambda {:.2} | Iterations {}",
            self.total_generation, self.total_load, self.lambda, iterations
        );
        let _ = writeln!(
            out,
            "Converged {} | Objective ($/h) {:.2}",
            if self.converged { "yes" } else { "no" },
            self.objective
        );
        out
    }
}

pub fn render_kkt(report: &KktReport) -> String {
    let mut out = String::new();
    if report.is_clean() {
        let _ = writeln!(out, "KKT report: clean (imbalance {:.3e} kW)", report.imbalance);
    } else {
        let _ = writeln!(
            out,
            "KKT report: {} violation(s) (imbalance {:.3e} kW)",
            report.violations.len(),
            report.imbalance
        );
        for v in &report.violations {
            let _ = writeln!(out, "  {} [{}] p={:.4} kW: {}", v.node_id, v.kind, v.power, v.detail);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dispatch_core::model::{Consumer, ConsumerParams, Dispatch, Generator, GeneratorParams};

    fn scenario() -> Scenario {
        Scenario::new(
            vec![Generator {
                id: "DG1".into(),
                params: GeneratorParams::new(0.01, 5.0, 0.0, 200.0).unwrap(),
            }],
            vec![
                Consumer {
                    id: "L1".into(),
                    params: ConsumerParams::new(0.05, 10.0, 150.0).unwrap(),
                },
                Consumer {
                    id: "L2".into(),
                    params: ConsumerParams::new(0.05, 10.0, 150.0).unwrap(),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn text_table_layout() {
        let s = scenario();
        let d = Dispatch {
            gen_power: vec![100.04],
            load_power: vec![52.44, 47.6],
        };
        let sol = DispatchSolution::from_dispatch(&s, d, 7.3712, true).unwrap();
        let mut r = SummaryReport::from_oracle(&s, &sol);
        r.iterations = Some(42);
        let text = r.render_text();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "Node           L1    L2    DG1");
        assert_eq!(lines[1], "Output (kW)  52.4  47.6  100.0");
        assert_eq!(
            lines[2],
            "Total Generation (kW) 100.0 | Total Load (kW) 100.0 | Lambda 7.37 | Iterations 42"
        );
        assert!(lines[3].starts_with("Converged yes | Objective ($/h) "));
    }

    #[test]
    fn totals_recompute_from_nodes() {
        let s = scenario();
        let d = Dispatch {
            gen_power: vec![90.123456],
            load_power: vec![40.1, 50.023456],
        };
        let sol = DispatchSolution::from_dispatch(&s, d, 7.0, false).unwrap();
        let r = SummaryReport::from_oracle(&s, &sol);
        let gen: f64 = r.nodes.iter().filter(|n| n.kind == NodeKind::Generator).map(|n| n.power).sum();
        let load: f64 = r.nodes.iter().filter(|n| n.kind == NodeKind::Consumer).map(|n| n.power).sum();
        assert_eq!(r.total_generation, gen);
        assert_eq!(r.total_load, load);
        let back: SummaryReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
