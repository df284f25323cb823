//! Centralized benchmark for the welfare problem.
//!
//! The only coupling constraint is power balance, so the dual is a single
//! price. Every node's optimal output at price `λ` is its clamped best
//! response, and the balancing price is the root of the nondecreasing,
//! continuous excess-supply curve `f(λ) = G(λ) - L(λ)`, found by bisection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    gen_response, load_response, marginal_cost, marginal_utility, social_cost, Dispatch,
    ModelError, NodeKind, Scenario,
};

pub const DEFAULT_BALANCE_TOL: f64 = 1e-6;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("generation floor exceeds every feasible load: excess supply {excess} kW at lowest price")]
    Infeasible { excess: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub dispatch: Dispatch,
    /// Clearing incremental cost, $/kWh.
    pub lambda_star: f64,
    pub total_gen: f64,
    pub total_load: f64,
    /// Total cost minus total utility, $/h.
    pub objective: f64,
    pub feasible: bool,
    /// Non-fatal conditions, e.g. generation capacity limiting the market.
    pub warnings: Vec<String>,
}

impl DispatchSolution {
    pub fn from_dispatch(
        s: &Scenario,
        dispatch: Dispatch,
        lambda: f64,
        feasible: bool,
    ) -> Result<Self, ModelError> {
        let objective = social_cost(s, &dispatch)?;
        Ok(Self {
            total_gen: dispatch.total_gen(),
            total_load: dispatch.total_load(),
            dispatch,
            lambda_star: lambda,
            objective,
            feasible,
            warnings: Vec::new(),
        })
    }

    pub fn imbalance(&self) -> f64 {
        self.total_gen - self.total_load
    }
}

pub fn aggregate_generation(s: &Scenario, lambda: f64) -> f64 {
    s.generators()
        .iter()
        .map(|g| gen_response(&g.params, lambda))
        .sum()
}

pub fn aggregate_load(s: &Scenario, lambda: f64) -> f64 {
    s.consumers()
        .iter()
        .map(|c| load_response(&c.params, lambda))
        .sum()
}

/// Excess supply at `lambda`; nondecreasing.
pub fn excess_supply(s: &Scenario, lambda: f64) -> f64 {
    aggregate_generation(s, lambda) - aggregate_load(s, lambda)
}

/// Price bracket guaranteed to contain the balancing price.
pub fn price_bracket(s: &Scenario) -> (f64, f64) {
    let min_beta = s
        .generators()
        .iter()
        .map(|g| g.params.beta)
        .fold(f64::INFINITY, f64::min);
    let max_omega = s
        .consumers()
        .iter()
        .map(|c| c.params.omega)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_sat = s
        .generators()
        .iter()
        .map(|g| g.params.saturation_price())
        .fold(f64::NEG_INFINITY, f64::max);
    (min_beta.min(0.0), max_omega + max_sat)
}

// Boundary of {λ : pred(λ)} for a predicate that is false below and true above.
fn bisect(lo: f64, hi: f64, stop_width: f64, pred: impl Fn(f64) -> bool) -> (f64, f64) {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= stop_width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

pub fn solve_centralized(s: &Scenario, balance_tol: f64) -> Result<DispatchSolution, OracleError> {
    let (lo, hi) = price_bracket(s);
    let f_lo = excess_supply(s, lo);
    if f_lo > balance_tol {
        return Err(OracleError::Infeasible { excess: f_lo });
    }
    let stop = 1e-12 * (hi - lo).max(f64::MIN_POSITIVE);

    // Left and right edges of the zero set of f. They coincide when f crosses
    // zero at a single price; when f is flat at zero over an interval (for
    // instance no profitable trade) the midpoint of that interval is used.
    let (_, left) = bisect(lo, hi, stop, |l| excess_supply(s, l) >= 0.0);
    let (right, _) = bisect(lo, hi, stop, |l| excess_supply(s, l) > 0.0);
    let lambda = 0.5 * (left + right.max(left));

    let dispatch = Dispatch::at_price(s, lambda);
    let feasible = (dispatch.total_gen() - dispatch.total_load()).abs() <= balance_tol;
    let mut sol = DispatchSolution::from_dispatch(s, dispatch, lambda, feasible)?;
    if s
        .generators()
        .iter()
        .all(|g| lambda >= g.params.saturation_price())
    {
        sol.warnings.push(
            "every generator is at capacity; the market clears at reduced load".to_string(),
        );
    }
    if !feasible {
        sol.warnings.push(format!(
            "balance error {:.3e} kW exceeds tolerance {balance_tol:.3e}",
            sol.imbalance()
        ));
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktViolation {
    pub node_id: String,
    pub kind: NodeKind,
    pub power: f64,
    /// Marginal cost or marginal utility at `power`.
    pub marginal: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    pub violations: Vec<KktViolation>,
    /// Total generation minus total load of the checked dispatch, kW.
    pub imbalance: f64,
}

impl KktReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Copy)]
enum Bound {
    Lower,
    Upper,
    Interior,
}

fn bound(p: f64, p_max: f64) -> Bound {
    if p <= 0.0 {
        Bound::Lower
    } else if p >= p_max {
        Bound::Upper
    } else {
        Bound::Interior
    }
}

/// Stationarity and complementary-slackness check of each node against the
/// solution's price. Generators at zero must not find the price attractive,
/// generators at capacity must not be priced out; consumers mirror this.
pub fn verify_kkt(s: &Scenario, sol: &DispatchSolution, tol: f64) -> Result<KktReport, ModelError> {
    sol.dispatch.check_bounds(s)?;
    let lam = sol.lambda_star;
    let mut report = KktReport {
        violations: Vec::new(),
        imbalance: sol.dispatch.total_gen() - sol.dispatch.total_load(),
    };

    for (g, &p) in s.generators().iter().zip(&sol.dispatch.gen_power) {
        let mc = marginal_cost(&g.params, p)?;
        let problem = match bound(p, g.params.p_max) {
            Bound::Interior if (mc - lam).abs() > tol => Some("interior output with marginal cost off the price"),
            Bound::Lower if mc < lam - tol => Some("idle although marginal cost is below the price"),
            Bound::Upper if mc > lam + tol => Some("at capacity although marginal cost exceeds the price"),
            _ => None,
        };
        if let Some(detail) = problem {
            report.violations.push(KktViolation {
                node_id: g.id.clone(),
                kind: NodeKind::Generator,
                power: p,
                marginal: mc,
                detail: format!("{detail} ({mc:.6} vs {lam:.6})"),
            });
        }
    }

    for (c, &p) in s.consumers().iter().zip(&sol.dispatch.load_power) {
        let mu = marginal_utility(&c.params, p)?;
        let problem = match bound(p, c.params.p_max) {
            Bound::Interior if (mu - lam).abs() > tol => Some("interior demand with marginal utility off the price"),
            Bound::Lower if mu > lam + tol => Some("no demand although marginal utility exceeds the price"),
            Bound::Upper if mu < lam - tol => Some("at cap although marginal utility is below the price"),
            _ => None,
        };
        if let Some(detail) = problem {
            report.violations.push(KktViolation {
                node_id: c.id.clone(),
                kind: NodeKind::Consumer,
                power: p,
                marginal: mu,
                detail: format!("{detail} ({mu:.6} vs {lam:.6})"),
            });
        }
    }
    Ok(report)
}
