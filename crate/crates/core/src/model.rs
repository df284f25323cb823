//! Per-node economics: consumer utility, generator cost, their marginals,
//! and the clamped best response of each node to an incremental-cost signal.
//!
//! Units are fixed throughout the crate: power in kW, money rates in $/h,
//! incremental cost in $/kWh.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("power must be nonnegative and finite, got {0}")]
    NegativePower(f64),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("{count} {what} values supplied for {expected} nodes")]
    LengthMismatch {
        what: &'static str,
        count: usize,
        expected: usize,
    },
    #[error("node `{node}` power {power} kW outside [0, {p_max}]")]
    OutOfBounds { node: String, power: f64, p_max: f64 },
    #[error("scenario needs at least one generator and one consumer")]
    EmptySide,
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
}

fn check_power(p: f64) -> Result<(), ModelError> {
    if p.is_finite() && p >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativePower(p))
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParam {
            field,
            reason: format!("must be > 0, got {v}"),
        })
    }
}

/// Quadratic generator cost `alpha p^2 + beta p + gamma` on `[0, p_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Cost curvature, $/kWh².
    pub alpha: f64,
    /// Linear cost, $/kWh.
    pub beta: f64,
    /// Fixed cost, $/h. Shifts the objective only.
    pub gamma: f64,
    /// Capacity, kW.
    pub p_max: f64,
}

impl GeneratorParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, p_max: f64) -> Result<Self, ModelError> {
        let g = Self {
            alpha,
            beta,
            gamma,
            p_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("alpha", self.alpha)?;
        positive("p_max", self.p_max)?;
        if !self.beta.is_finite() {
            return Err(ModelError::InvalidParam {
                field: "beta",
                reason: format!("must be finite, got {}", self.beta),
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(ModelError::InvalidParam {
                field: "gamma",
                reason: format!("must be >= 0, got {}", self.gamma),
            });
        }
        Ok(())
    }

    /// Marginal cost at full output; above this price the unit is saturated.
    pub fn saturation_price(&self) -> f64 {
        self.beta + 2.0 * self.alpha * self.p_max
    }
}

/// Piecewise-quadratic consumer utility, saturating at `omega / (2 sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    /// Utility curvature, $/kWh².
    pub sigma: f64,
    /// Marginal utility at zero consumption, $/kWh.
    pub omega: f64,
    /// Demand cap, kW.
    pub p_max: f64,
}

impl ConsumerParams {
    pub fn new(sigma: f64, omega: f64, p_max: f64) -> Result<Self, ModelError> {
        let c = Self {
            sigma,
            omega,
            p_max,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("sigma", self.sigma)?;
        positive("omega", self.omega)?;
        positive("p_max", self.p_max)
    }

    /// Consumption at which utility stops growing.
    pub fn satiation(&self) -> f64 {
        self.omega / (2.0 * self.sigma)
    }
}

pub fn utility(c: &ConsumerParams, p: f64) -> Result<f64, ModelError> {
    check_power(p)?;
    if p <= c.satiation() {
        Ok(c.omega * p - c.sigma * p * p)
    } else {
        Ok(c.omega * c.omega / (4.0 * c.sigma))
    }
}

pub fn cost(g: &GeneratorParams, p: f64) -> Result<f64, ModelError> {
    check_power(p)?;
    Ok(g.alpha * p * p + g.beta * p + g.gamma)
}

pub fn marginal_cost(g: &GeneratorParams, p: f64) -> Result<f64, ModelError> {
    check_power(p)?;
    Ok(2.0 * g.alpha * p + g.beta)
}

/// Derivative of [`utility`]. The kink at satiation takes the saturated value 0.
pub fn marginal_utility(c: &ConsumerParams, p: f64) -> Result<f64, ModelError> {
    check_power(p)?;
    if p < c.satiation() {
        Ok(c.omega - 2.0 * c.sigma * p)
    } else {
        Ok(0.0)
    }
}

/// Output at which marginal cost equals `lambda`, projected onto `[0, p_max]`.
pub fn gen_response(g: &GeneratorParams, lambda: f64) -> f64 {
    ((lambda - g.beta) / (2.0 * g.alpha)).clamp(0.0, g.p_max)
}

/// Demand at which marginal utility equals `lambda`, projected onto `[0, p_max]`.
/// Never exceeds the satiation point, where utility stops growing.
pub fn load_response(c: &ConsumerParams, lambda: f64) -> f64 {
    ((c.omega - lambda) / (2.0 * c.sigma)).clamp(0.0, c.p_max.min(c.satiation()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Generator,
    Consumer,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Generator => "generator",
            NodeKind::Consumer => "consumer",
        }
    }
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of either kind of node, so the protocol can treat all agents alike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeParams {
    Generator(GeneratorParams),
    Consumer(ConsumerParams),
}

impl NodeParams {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeParams::Generator(_) => NodeKind::Generator,
            NodeParams::Consumer(_) => NodeKind::Consumer,
        }
    }

    pub fn p_max(&self) -> f64 {
        match self {
            NodeParams::Generator(g) => g.p_max,
            NodeParams::Consumer(c) => c.p_max,
        }
    }

    pub fn response(&self, lambda: f64) -> f64 {
        match self {
            NodeParams::Generator(g) => gen_response(g, lambda),
            NodeParams::Consumer(c) => load_response(c, lambda),
        }
    }

    /// Marginal cost for generators, marginal utility for consumers.
    pub fn marginal(&self, p: f64) -> Result<f64, ModelError> {
        match self {
            NodeParams::Generator(g) => marginal_cost(g, p),
            NodeParams::Consumer(c) => marginal_utility(c, p),
        }
    }

    /// The price each node starts from: its marginal value at zero power.
    pub fn initial_price(&self) -> f64 {
        match self {
            NodeParams::Generator(g) => g.beta,
            NodeParams::Consumer(c) => c.omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consumer {
    pub id: String,
    pub params: ConsumerParams,
}

/// The node set. Node index order is all generators first, then all consumers;
/// communication graphs index nodes in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    generators: Vec<Generator>,
    consumers: Vec<Consumer>,
}

impl Scenario {
    pub fn new(generators: Vec<Generator>, consumers: Vec<Consumer>) -> Result<Self, ModelError> {
        if generators.is_empty() || consumers.is_empty() {
            return Err(ModelError::EmptySide);
        }
        let mut seen = std::collections::HashSet::new();
        for id in generators
            .iter()
            .map(|g| &g.id)
            .chain(consumers.iter().map(|c| &c.id))
        {
            if !seen.insert(id.as_str()) {
                return Err(ModelError::DuplicateId(id.clone()));
            }
        }
        for g in &generators {
            g.params.validate()?;
        }
        for c in &consumers {
            c.params.validate()?;
        }
        Ok(Self {
            generators,
            consumers,
        })
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn consumers(&self) -> &[Consumer] {
        &self.consumers
    }

    pub fn node_count(&self) -> usize {
        self.generators.len() + self.consumers.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.generators
            .iter()
            .map(|g| g.id.as_str())
            .chain(self.consumers.iter().map(|c| c.id.as_str()))
    }

    pub fn node_id(&self, index: usize) -> &str {
        let ng = self.generators.len();
        if index < ng {
            &self.generators[index].id
        } else {
            &self.consumers[index - ng].id
        }
    }

    pub fn node_params(&self, index: usize) -> NodeParams {
        let ng = self.generators.len();
        if index < ng {
            NodeParams::Generator(self.generators[index].params)
        } else {
            NodeParams::Consumer(self.consumers[index - ng].params)
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids().position(|n| n == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// kW per generator, in scenario order.
    pub gen_power: Vec<f64>,
    /// kW per consumer, in scenario order.
    pub load_power: Vec<f64>,
}

impl Dispatch {
    pub fn zeros(s: &Scenario) -> Self {
        Self {
            gen_power: vec![0.0; s.generators.len()],
            load_power: vec![0.0; s.consumers.len()],
        }
    }

    /// Best responses of every node to a common price.
    pub fn at_price(s: &Scenario, lambda: f64) -> Self {
        Self {
            gen_power: s
                .generators
                .iter()
                .map(|g| gen_response(&g.params, lambda))
                .collect(),
            load_power: s
                .consumers
                .iter()
                .map(|c| load_response(&c.params, lambda))
                .collect(),
        }
    }

    pub fn total_gen(&self) -> f64 {
        self.gen_power.iter().sum()
    }

    pub fn total_load(&self) -> f64 {
        self.load_power.iter().sum()
    }

    /// Checks lengths and capacity bounds against the scenario.
    pub fn check_bounds(&self, s: &Scenario) -> Result<(), ModelError> {
        if self.gen_power.len() != s.generators.len() {
            return Err(ModelError::LengthMismatch {
                what: "generator power",
                count: self.gen_power.len(),
                expected: s.generators.len(),
            });
        }
        if self.load_power.len() != s.consumers.len() {
            return Err(ModelError::LengthMismatch {
                what: "load power",
                count: self.load_power.len(),
                expected: s.consumers.len(),
            });
        }
        let gens = s
            .generators
            .iter()
            .zip(&self.gen_power)
            .map(|(g, &p)| (&g.id, p, g.params.p_max));
        let loads = s
            .consumers
            .iter()
            .zip(&self.load_power)
            .map(|(c, &p)| (&c.id, p, c.params.p_max));
        for (id, p, p_max) in gens.chain(loads) {
            if !(p.is_finite() && (0.0..=p_max).contains(&p)) {
                return Err(ModelError::OutOfBounds {
                    node: id.clone(),
                    power: p,
                    p_max,
                });
            }
        }
        Ok(())
    }
}

/// Total generation cost minus total consumer utility, $/h. Lower is better.
pub fn social_cost(s: &Scenario, d: &Dispatch) -> Result<f64, ModelError> {
    d.check_bounds(s)?;
    let mut total = 0.0;
    for (g, &p) in s.generators.iter().zip(&d.gen_power) {
        total += cost(&g.params, p)?;
    }
    for (c, &p) in s.consumers.iter().zip(&d.load_power) {
        total -= utility(&c.params, p)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn load() -> ConsumerParams {
        ConsumerParams::new(0.05, 10.0, 150.0).unwrap()
    }

    fn gen(gamma: f64) -> GeneratorParams {
        GeneratorParams::new(0.01, 5.0, gamma, 200.0).unwrap()
    }

    #[test]
    fn utility_values() {
        let c = load();
        assert_eq!(utility(&c, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(utility(&c, 100.0).unwrap(), 500.0, epsilon = 1e-9);
        assert_abs_diff_eq!(utility(&c, 130.0).unwrap(), 500.0, epsilon = 1e-9);
        assert_abs_diff_eq!(utility(&c, 50.0).unwrap(), 375.0, epsilon = 1e-9);
        assert!(matches!(
            utility(&c, -1.0),
            Err(ModelError::NegativePower(_))
        ));
    }

    #[test]
    fn cost_values() {
        assert_eq!(cost(&gen(2.0), 0.0).unwrap(), 2.0);
        assert_abs_diff_eq!(cost(&gen(0.0), 1.0).unwrap(), 5.01, epsilon = 1e-12);
        assert_abs_diff_eq!(cost(&gen(2.0), 100.0).unwrap(), 602.0, epsilon = 1e-9);
        assert!(cost(&gen(0.0), -0.5).is_err());
    }

    #[test]
    fn marginals() {
        let g = gen(0.0);
        assert_eq!(marginal_cost(&g, 0.0).unwrap(), 5.0);
        assert_abs_diff_eq!(marginal_cost(&g, 100.0).unwrap(), 7.0, epsilon = 1e-12);
        let c = load();
        assert_eq!(marginal_utility(&c, 0.0).unwrap(), 10.0);
        assert_eq!(marginal_utility(&c, 100.0).unwrap(), 0.0);
        assert_eq!(marginal_utility(&c, 120.0).unwrap(), 0.0);
    }

    #[test]
    fn marginals_match_finite_differences() {
        let h = 1e-4;
        let g = gen(2.0);
        for p in [1.0, 37.5, 100.0, 199.0] {
            let fd = (cost(&g, p + h).unwrap() - cost(&g, p - h).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(marginal_cost(&g, p).unwrap(), fd, epsilon = 1e-6);
        }
        let c = load();
        for p in [1.0, 20.0, 50.0, 99.0, 101.0, 140.0] {
            let fd = (utility(&c, p + h).unwrap() - utility(&c, p - h).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(marginal_utility(&c, p).unwrap(), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn responses() {
        let g = gen(0.0);
        assert_eq!(gen_response(&g, 5.0), 0.0);
        assert_abs_diff_eq!(gen_response(&g, 7.0), 100.0, epsilon = 1e-9);
        assert_eq!(gen_response(&g, 100.0), 200.0);
        assert_eq!(gen_response(&g, -3.0), 0.0);

        let c = load();
        assert_eq!(load_response(&c, 10.0), 0.0);
        assert_abs_diff_eq!(load_response(&c, 0.0), 100.0, epsilon = 1e-9);
        let capped = ConsumerParams::new(0.05, 10.0, 40.0).unwrap();
        assert_eq!(load_response(&capped, 2.0), 40.0);
        let tight = ConsumerParams::new(0.05, 10.0, 60.0).unwrap();
        assert_eq!(load_response(&tight, 0.0), 60.0);
        assert_abs_diff_eq!(load_response(&c, -4.0), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(GeneratorParams::new(0.0, 5.0, 0.0, 10.0).is_err());
        assert!(GeneratorParams::new(0.01, 5.0, -1.0, 10.0).is_err());
        assert!(GeneratorParams::new(0.01, 5.0, 0.0, 0.0).is_err());
        assert!(ConsumerParams::new(0.05, 0.0, 10.0).is_err());
        assert!(ConsumerParams::new(-0.05, 1.0, 10.0).is_err());
        assert!(ConsumerParams::new(0.05, 1.0, f64::NAN).is_err());
    }

    fn two_node(gamma: f64) -> Scenario {
        Scenario::new(
            vec![Generator {
                id: "G".into(),
                params: gen(gamma),
            }],
            vec![Consumer {
                id: "L".into(),
                params: load(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn scenario_invariants() {
        assert_eq!(
            Scenario::new(vec![], vec![Consumer { id: "L".into(), params: load() }]),
            Err(ModelError::EmptySide)
        );
        let dup = Scenario::new(
            vec![Generator { id: "X".into(), params: gen(0.0) }],
            vec![Consumer { id: "X".into(), params: load() }],
        );
        assert_eq!(dup, Err(ModelError::DuplicateId("X".into())));
        let s = two_node(0.0);
        assert_eq!(s.node_ids().collect::<Vec<_>>(), ["G", "L"]);
        assert_eq!(s.index_of("L"), Some(1));
        assert_eq!(s.node_params(1).kind(), NodeKind::Consumer);
    }

    #[test]
    fn social_cost_values() {
        let s = two_node(3.0);
        let zero = Dispatch::zeros(&s);
        assert_eq!(social_cost(&s, &zero).unwrap(), 3.0);

        // 0.02 g + 5 = 10 - 0.1 g  =>  g = 125/3
        let s = two_node(0.0);
        let p = 125.0 / 3.0;
        let d = Dispatch {
            gen_power: vec![p],
            load_power: vec![p],
        };
        let expected = 0.01 * p * p + 5.0 * p - (10.0 * p - 0.05 * p * p);
        assert_abs_diff_eq!(social_cost(&s, &d).unwrap(), expected, epsilon = 1e-9);
        // maximal welfare (omega - beta)^2 / (4 (alpha + sigma)) = 25 / 0.24
        assert_abs_diff_eq!(social_cost(&s, &d).unwrap(), -104.166_666_7, epsilon = 1e-6);

        let bad = Dispatch {
            gen_power: vec![250.0],
            load_power: vec![1.0],
        };
        assert!(matches!(
            social_cost(&s, &bad),
            Err(ModelError::OutOfBounds { .. })
        ));
    }

    fn gen_strategy() -> impl Strategy<Value = GeneratorParams> {
        (0.001f64..0.1, 0.0f64..10.0, 0.0f64..5.0, 10.0f64..300.0)
            .prop_map(|(a, b, g, p)| GeneratorParams::new(a, b, g, p).unwrap())
    }

    fn load_strategy() -> impl Strategy<Value = ConsumerParams> {
        (0.01f64..0.2, 1.0f64..20.0, 10.0f64..300.0)
            .prop_map(|(s, w, p)| ConsumerParams::new(s, w, p).unwrap())
    }

    proptest! {
        #[test]
        fn utility_is_continuous_at_satiation(c in load_strategy()) {
            let k = c.satiation();
            let quad = c.omega * k - c.sigma * k * k;
            let flat = c.omega * c.omega / (4.0 * c.sigma);
            prop_assert!((quad - flat).abs() <= 1e-9 * flat.abs());
        }

        #[test]
        fn utility_and_cost_are_monotone(
            c in load_strategy(), g in gen_strategy(), p in 0.0f64..400.0, dp in 1e-3f64..50.0
        ) {
            prop_assert!(utility(&c, p + dp).unwrap() >= utility(&c, p).unwrap() - 1e-9);
            prop_assert!(cost(&g, p + dp).unwrap() > cost(&g, p).unwrap());
        }

        #[test]
        fn responses_invert_marginals_on_interior(
            c in load_strategy(), g in gen_strategy(), t in 0.01f64..0.99
        ) {
            let lam = g.beta + t * (g.saturation_price() - g.beta);
            let p = gen_response(&g, lam);
            prop_assert!((marginal_cost(&g, p).unwrap() - lam).abs() <= 1e-9);

            let floor = (c.omega - 2.0 * c.sigma * c.p_max).max(0.0);
            let lam = floor + t * (c.omega - floor);
            let p = load_response(&c, lam);
            prop_assert!((marginal_utility(&c, p).unwrap() - lam).abs() <= 1e-9);
        }

        #[test]
        fn responses_are_monotone(
            c in load_strategy(), g in gen_strategy(), l1 in -5.0f64..30.0, dl in 0.0f64..10.0
        ) {
            let l2 = l1 + dl;
            prop_assert!(gen_response(&g, l1) <= gen_response(&g, l2));
            prop_assert!(load_response(&c, l1) >= load_response(&c, l2));
        }
    }
}
