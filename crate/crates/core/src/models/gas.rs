//! Natural-gas market equilibrium as one complementarity system.
//!
//! Price-taking suppliers produce gas under a Golombek cost function
//! (marginal cost diverges near capacity), ship it over a directed pipeline
//! network run by a system operator, and sell it to consumers with linear
//! inverse demand, over several years with discounting and endogenous
//! capacity expansion. Stacking every player's KKT conditions with the
//! inverse-demand and market-clearing equations yields the NCP solved here.
//!
//! Variables per supplier p, consumer c, node n, arc a, year y:
//!
//! * sales Q_pcy ≥ 0, shipments Q_pay ≥ 0, production Q_py ≥ 0,
//!   expansion X_py ≥ 0, capacity Cap_py ≥ 0,
//! * supplier duals: availability α_b ≥ 0, capacity accounting α_c (free),
//!   nodal balance α_d (free, one per reachable node),
//! * arc flow Q_ay ≥ 0, arc expansion X_ay ≥ 0, arc capacity Cap_ay ≥ 0,
//!   arc duals α_h ≥ 0 (capacity use) and α_i (free, accounting),
//! * consumer price π_cy (free) and arc price π_ay (free).
//!
//! Variables are only generated for reachable (supplier, node) pairs, so
//! the system carries no structurally indeterminate duals.
//!
//! Gradients are assembled through the coordinate-format sparse array and
//! flattened through the variable index; the toy instances stay far below
//! 5% structural density.

use std::collections::BTreeMap;
use std::sync::Arc as StdArc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::ConeSpec;
use crate::error::{Error, Result};
use crate::problem::ParametrizedNcp;
use crate::sparse::SparseNdArray;
use crate::uq::{wiener_covariance, CovarianceModel};

/// Golombek production-cost coefficients:
/// cost(Q, Cap) = (l+g)·Q + q·Q² + g·(Cap−Q)·log(1 − Q/Cap).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GolombekCost {
    /// Linear coefficient l.
    pub linear: f64,
    /// Logarithmic coefficient g ≥ 0 (drives marginal cost to +∞ at capacity).
    pub log_coeff: f64,
    /// Quadratic coefficient q ≥ 0.
    pub quadratic: f64,
}

/// A supplier located at one node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Supplier {
    pub name: String,
    pub node: String,
    /// Initial production capacity Q_p0.
    pub initial_capacity: f64,
    /// Price per unit of capacity expansion.
    pub expansion_price: f64,
    /// Fractional production loss, in [0, 1).
    pub loss: f64,
    /// Availability fraction of capacity, in (0, 1].
    pub availability: f64,
    pub cost: GolombekCost,
}

/// A consumer with a linear inverse demand per year.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consumer {
    pub name: String,
    pub node: String,
    /// Demand intercept per year.
    pub demand_intercept: Vec<f64>,
    /// Demand slope per year (negative).
    pub demand_slope: Vec<f64>,
}

/// A directed pipeline arc.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineArc {
    pub name: String,
    pub from: String,
    pub to: String,
    /// Initial transport capacity Q_a0.
    pub initial_capacity: f64,
    /// Price per unit of capacity expansion.
    pub expansion_price: f64,
    /// Fractional transport loss, in [0, 1).
    pub loss: f64,
    /// Per-unit operating cost.
    pub operating_cost: f64,
}

/// Families of parameters exposed as random inputs θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaFamily {
    DemandIntercept,
    DemandSlope,
    CostLinear,
    CostQuadratic,
    ArcCost,
    SupplierExpansionPrice,
    ArcExpansionPrice,
}

impl ThetaFamily {
    /// All families, in the layout order of θ.
    pub const ALL: [ThetaFamily; 7] = [
        ThetaFamily::DemandIntercept,
        ThetaFamily::DemandSlope,
        ThetaFamily::CostLinear,
        ThetaFamily::CostQuadratic,
        ThetaFamily::ArcCost,
        ThetaFamily::SupplierExpansionPrice,
        ThetaFamily::ArcExpansionPrice,
    ];
}

/// Which parameters are random, and optional per-supplier variance scaling
/// for the production-cost families.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasThetaSpec {
    /// Exposed families; defaults to all of them.
    pub families: Vec<ThetaFamily>,
    /// Per-supplier multiplier on the production-cost variances.
    pub cost_variance_scale: BTreeMap<String, f64>,
}

impl Default for GasThetaSpec {
    fn default() -> Self {
        Self {
            families: ThetaFamily::ALL.to_vec(),
            cost_variance_scale: BTreeMap::new(),
        }
    }
}

/// Full model description (the JSON file payload).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasMarketModel {
    /// Observation times of the yearly periods, strictly increasing, > 0.
    pub years: Vec<f64>,
    /// Discount factor per year, in (0, 1].
    pub discount: Vec<f64>,
    pub nodes: Vec<String>,
    pub suppliers: Vec<Supplier>,
    pub consumers: Vec<Consumer>,
    pub arcs: Vec<PipelineArc>,
    #[serde(default)]
    pub theta: GasThetaSpec,
}

/// Production cost and marginal cost on the valid domain 0 ≤ q < cap.
pub fn golombek_cost(q: f64, cap: f64, cost: &GolombekCost) -> Result<(f64, f64)> {
    if !(q >= 0.0 && q < cap) {
        return Err(Error::Evaluation(format!(
            "golombek cost requires 0 ≤ q < cap, got q = {q}, cap = {cap}"
        )));
    }
    let e = golombek_eval(q, cap, cost);
    Ok((e.cost, e.dq))
}

/// Demand calibration: slope and intercept so the inverse demand passes
/// through (qty_ref, price_ref) with the target point elasticity.
pub fn calibrate_demand(price_ref: f64, qty_ref: f64, elasticity: f64) -> Result<(f64, f64)> {
    if qty_ref <= 0.0 || price_ref <= 0.0 {
        return Err(Error::InvalidConfig(
            "reference price and quantity must be positive".into(),
        ));
    }
    if elasticity <= 0.0 {
        return Err(Error::InvalidConfig("elasticity must be positive".into()));
    }
    let slope = -price_ref / (elasticity * qty_ref);
    let intercept = price_ref - slope * qty_ref;
    Ok((intercept, slope))
}

/// Golombek evaluation with all first and second partials.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GolombekEval {
    pub cost: f64,
    pub dq: f64,
    pub dcap: f64,
    pub dqq: f64,
    pub dqcap: f64,
    pub dcapcap: f64,
}

/// Fraction of capacity beyond which the interior formula is replaced by
/// its C¹ extension.
const GOLOMBEK_INTERIOR: f64 = 1.0 - 1e-9;

/// Interior evaluation with a C¹ continuation past q = (1−1e-9)·cap, so
/// that solver line searches probing q ≥ cap see steeply growing but
/// finite and derivative-consistent values instead of NaN. Valid solutions
/// never live there: the availability constraint keeps q ≤ avl·cap with
/// avl < 1.
pub(crate) fn golombek_eval(q: f64, cap: f64, c: &GolombekCost) -> GolombekEval {
    let cap_eff = cap.max(1e-12);
    let q_clamp = GOLOMBEK_INTERIOR * cap_eff;
    let (l, g, quad) = (c.linear, c.log_coeff, c.quadratic);
    let interior = |q_in: f64| -> GolombekEval {
        let ratio = 1.0 - q_in / cap_eff; // > 0
        let log_term = ratio.ln();
        GolombekEval {
            cost: (l + g) * q_in + quad * q_in * q_in + g * (cap_eff - q_in) * log_term,
            dq: l + 2.0 * quad * q_in - g * log_term,
            dcap: g * (log_term + q_in / cap_eff),
            dqq: 2.0 * quad + g / (cap_eff - q_in),
            dqcap: -g * q_in / (cap_eff * (cap_eff - q_in)),
            dcapcap: g * (1.0 / (cap_eff - q_in) - 1.0 / cap_eff - q_in / (cap_eff * cap_eff)),
        }
    };
    if q <= q_clamp {
        return interior(q);
    }
    // quadratic-in-cost extension: marginal cost grows linearly with the
    // curvature frozen at the threshold
    let base = interior(q_clamp);
    let d = q - q_clamp;
    GolombekEval {
        cost: base.cost + base.dq * d + 0.5 * base.dqq * d * d,
        dq: base.dq + base.dqq * d,
        dcap: base.dcap + base.dqcap * d,
        dqq: base.dqq,
        dqcap: base.dqcap,
        dcapcap: base.dcapcap,
    }
}

/// One coordinate of the flattened NCP vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GasVar {
    /// Q_pcy: supplier p's sales to consumer c in year y.
    SaleQty { p: usize, c: usize, y: usize },
    /// X_py: production capacity expansion.
    ProdExpansion { p: usize, y: usize },
    /// Q_pay: supplier p's shipment on arc a in year y.
    ShipQty { p: usize, a: usize, y: usize },
    /// Q_py: total production.
    ProdQty { p: usize, y: usize },
    /// Cap_py: production capacity.
    ProdCapacity { p: usize, y: usize },
    /// α_b: dual of Q_py ≤ avl·Cap_py.
    AvailDual { p: usize, y: usize },
    /// α_c: dual of Cap_py = Q_p0 + Σ X (free).
    CapAcctDual { p: usize, y: usize },
    /// α_d: dual of supplier p's balance at node n (free).
    BalanceDual { p: usize, n: usize, y: usize },
    /// Q_ay: total flow on arc a.
    ArcFlow { a: usize, y: usize },
    /// X_ay: arc capacity expansion.
    ArcExpansion { a: usize, y: usize },
    /// Cap_ay: arc capacity.
    ArcCapacity { a: usize, y: usize },
    /// α_h: dual of Q_ay ≤ Cap_ay.
    ArcCapDual { a: usize, y: usize },
    /// α_i: dual of Cap_ay = Q_a0 + Σ X (free).
    ArcAcctDual { a: usize, y: usize },
    /// π_cy: consumer price (free).
    ConsumerPrice { c: usize, y: usize },
    /// π_ay: arc transport price (free).
    ArcPrice { a: usize, y: usize },
}

impl GasVar {
    fn is_nonneg(&self) -> bool {
        !matches!(
            self,
            GasVar::CapAcctDual { .. }
                | GasVar::BalanceDual { .. }
                | GasVar::ArcAcctDual { .. }
                | GasVar::ConsumerPrice { .. }
                | GasVar::ArcPrice { .. }
        )
    }
}

/// Bijection between named variables and flat NCP coordinates.
#[derive(Debug, Clone)]
pub struct GasVariableIndex {
    order: Vec<GasVar>,
    lookup: std::collections::HashMap<GasVar, usize>,
    labels: Vec<String>,
}

impl GasVariableIndex {
    /// Number of coordinates.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    /// Whether the index is empty.
    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Flat coordinate of a variable; `None` when the variable is not
    /// structurally present (e.g. a sale to an unreachable consumer).
    pub fn index(&self, var: GasVar) -> Option<usize> {
        self.lookup.get(&var).copied()
    }

    /// The variable at a flat coordinate.
    pub fn decode(&self, idx: usize) -> GasVar {
        self.order[idx]
    }

    /// Whether the coordinate is sign-constrained.
    pub fn is_nonneg(&self, idx: usize) -> bool {
        self.order[idx].is_nonneg()
    }

    /// Human-readable label of the coordinate.
    pub fn label(&self, idx: usize) -> &str {
        &self.labels[idx]
    }

    /// All coordinates, in flat order.
    pub fn variables(&self) -> &[GasVar] {
        &self.order
    }
}

/// θ layout: (family, offset, length) for every enabled family.
#[derive(Debug, Clone)]
pub struct ThetaLayout {
    segments: Vec<(ThetaFamily, usize, usize)>,
    labels: Vec<String>,
    total: usize,
}

impl ThetaLayout {
    /// Index range of a family, when enabled.
    pub fn range(&self, family: ThetaFamily) -> Option<std::ops::Range<usize>> {
        self.segments
            .iter()
            .find(|(f, _, _)| *f == family)
            .map(|(_, off, len)| *off..*off + *len)
    }

    /// Total parameter dimension m.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Parameter labels.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Resolved structure shared by the evaluation closures.
struct ResolvedGas {
    model: GasMarketModel,
    supplier_node: Vec<usize>,
    consumer_node: Vec<usize>,
    arc_from: Vec<usize>,
    arc_to: Vec<usize>,
    consumers_at: Vec<Vec<usize>>,
    arcs_out: Vec<Vec<usize>>,
    arcs_in: Vec<Vec<usize>>,
    /// reach[p] = nodes reachable from supplier p's home node.
    reach: Vec<Vec<bool>>,
    index: GasVariableIndex,
    theta: ThetaLayout,
}

impl GasMarketModel {
    /// Number of years.
    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    /// Structural validation; errors name the offending set element.
    pub fn validate(&self) -> Result<()> {
        let fail = |element: &str, reason: String| -> Result<()> {
            Err(Error::ModelValidation {
                element: element.to_string(),
                reason,
            })
        };
        if self.years.is_empty() {
            return fail("years", "at least one year is required".into());
        }
        if self.years[0] <= 0.0 || self.years.windows(2).any(|w| w[1] <= w[0]) {
            return fail("years", "times must be positive and strictly increasing".into());
        }
        if self.discount.len() != self.years.len() {
            return fail("discount", format!("expected {} entries", self.years.len()));
        }
        if self.discount.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return fail("discount", "discount factors must lie in (0, 1]".into());
        }
        if self.nodes.is_empty() || self.suppliers.is_empty() || self.consumers.is_empty() {
            return fail("sets", "nodes, suppliers and consumers must be nonempty".into());
        }
        let node_id = |name: &str| self.nodes.iter().position(|n| n == name);
        for s in &self.suppliers {
            if node_id(&s.node).is_none() {
                return fail(&s.name, format!("unknown node `{}`", s.node));
            }
            if !(s.availability > 0.0 && s.availability <= 1.0) {
                return fail(&s.name, "availability must lie in (0, 1]".into());
            }
            if !(0.0..1.0).contains(&s.loss) {
                return fail(&s.name, "loss must lie in [0, 1)".into());
            }
            if s.initial_capacity < 0.0 {
                return fail(&s.name, "initial capacity must be ≥ 0".into());
            }
            if s.cost.log_coeff < 0.0 || s.cost.quadratic < 0.0 {
                return fail(&s.name, "cost coefficients g and q must be ≥ 0".into());
            }
        }
        for c in &self.consumers {
            if node_id(&c.node).is_none() {
                return fail(&c.name, format!("unknown node `{}`", c.node));
            }
            if c.demand_intercept.len() != self.years.len()
                || c.demand_slope.len() != self.years.len()
            {
                return fail(&c.name, "demand series must cover every year".into());
            }
            if c.demand_slope.iter().any(|&s| s >= 0.0) {
                return fail(&c.name, "demand slope must be negative".into());
            }
        }
        for a in &self.arcs {
            if node_id(&a.from).is_none() {
                return fail(&a.name, format!("unknown node `{}`", a.from));
            }
            if node_id(&a.to).is_none() {
                return fail(&a.name, format!("unknown node `{}`", a.to));
            }
            if a.from == a.to {
                return fail(&a.name, "arc endpoints must differ".into());
            }
            if !(0.0..1.0).contains(&a.loss) {
                return fail(&a.name, "loss must lie in [0, 1)".into());
            }
            if a.initial_capacity < 0.0 {
                return fail(&a.name, "initial capacity must be ≥ 0".into());
            }
        }
        for (name, scale) in &self.theta.cost_variance_scale {
            if !self.suppliers.iter().any(|s| &s.name == name) {
                return fail(name, "variance scale names an unknown supplier".into());
            }
            if *scale < 0.0 {
                return fail(name, "variance scale must be ≥ 0".into());
            }
        }
        // every consumer must be reachable from some supplier
        let reach = self.reachability();
        for (ci, c) in self.consumers.iter().enumerate() {
            let n = node_id(&c.node).unwrap();
            if !(0..self.suppliers.len()).any(|p| reach[p][n]) {
                return fail(&c.name, "no supplier can reach this consumer".into());
            }
            let _ = ci;
        }
        Ok(())
    }

    /// reach[p][n]: node n reachable from supplier p's home via directed arcs.
    fn reachability(&self) -> Vec<Vec<bool>> {
        let node_id = |name: &str| self.nodes.iter().position(|n| n == name).unwrap();
        let n_nodes = self.nodes.len();
        self.suppliers
            .iter()
            .map(|s| {
                let mut seen = vec![false; n_nodes];
                let mut stack = vec![node_id(&s.node)];
                while let Some(n) = stack.pop() {
                    if seen[n] {
                        continue;
                    }
                    seen[n] = true;
                    for a in &self.arcs {
                        if node_id(&a.from) == n && !seen[node_id(&a.to)] {
                            stack.push(node_id(&a.to));
                        }
                    }
                }
                seen
            })
            .collect()
    }

    /// The flat variable index of this model.
    pub fn variable_index(&self) -> Result<GasVariableIndex> {
        Ok(self.resolve()?.index.clone())
    }

    /// The θ layout of this model.
    pub fn theta_layout(&self) -> ThetaLayout {
        let n_y = self.years.len();
        let mut segments = Vec::new();
        let mut labels = Vec::new();
        let mut offset = 0;
        for fam in ThetaFamily::ALL {
            if !self.theta.families.contains(&fam) {
                continue;
            }
            let start = offset;
            match fam {
                ThetaFamily::DemandIntercept => {
                    for c in &self.consumers {
                        for y in 0..n_y {
                            labels.push(format!("dem_intercept[{},y{}]", c.name, y + 1));
                        }
                    }
                    offset += self.consumers.len() * n_y;
                }
                ThetaFamily::DemandSlope => {
                    for c in &self.consumers {
                        for y in 0..n_y {
                            labels.push(format!("dem_slope[{},y{}]", c.name, y + 1));
                        }
                    }
                    offset += self.consumers.len() * n_y;
                }
                ThetaFamily::CostLinear => {
                    for s in &self.suppliers {
                        labels.push(format!("cost_lin[{}]", s.name));
                    }
                    offset += self.suppliers.len();
                }
                ThetaFamily::CostQuadratic => {
                    for s in &self.suppliers {
                        labels.push(format!("cost_quad[{}]", s.name));
                    }
                    offset += self.suppliers.len();
                }
                ThetaFamily::ArcCost => {
                    for a in &self.arcs {
                        labels.push(format!("arc_cost[{}]", a.name));
                    }
                    offset += self.arcs.len();
                }
                ThetaFamily::SupplierExpansionPrice => {
                    for s in &self.suppliers {
                        labels.push(format!("exp_price[{}]", s.name));
                    }
                    offset += self.suppliers.len();
                }
                ThetaFamily::ArcExpansionPrice => {
                    for a in &self.arcs {
                        labels.push(format!("arc_exp_price[{}]", a.name));
                    }
                    offset += self.arcs.len();
                }
            }
            segments.push((fam, start, offset - start));
        }
        ThetaLayout {
            segments,
            labels,
            total: offset,
        }
    }

    /// Mean parameter vector θ̄ matching [`GasMarketModel::theta_layout`].
    pub fn theta_mean(&self) -> DVector<f64> {
        let layout = self.theta_layout();
        let mut theta = DVector::zeros(layout.total());
        for (fam, off, _) in &layout.segments {
            let mut k = *off;
            match fam {
                ThetaFamily::DemandIntercept => {
                    for c in &self.consumers {
                        for y in 0..self.years.len() {
                            theta[k] = c.demand_intercept[y];
                            k += 1;
                        }
                    }
                }
                ThetaFamily::DemandSlope => {
                    for c in &self.consumers {
                        for y in 0..self.years.len() {
                            theta[k] = c.demand_slope[y];
                            k += 1;
                        }
                    }
                }
                ThetaFamily::CostLinear => {
                    for s in &self.suppliers {
                        theta[k] = s.cost.linear;
                        k += 1;
                    }
                }
                ThetaFamily::CostQuadratic => {
                    for s in &self.suppliers {
                        theta[k] = s.cost.quadratic;
                        k += 1;
                    }
                }
                ThetaFamily::ArcCost => {
                    for a in &self.arcs {
                        theta[k] = a.operating_cost;
                        k += 1;
                    }
                }
                ThetaFamily::SupplierExpansionPrice => {
                    for s in &self.suppliers {
                        theta[k] = s.expansion_price;
                        k += 1;
                    }
                }
                ThetaFamily::ArcExpansionPrice => {
                    for a in &self.arcs {
                        theta[k] = a.expansion_price;
                        k += 1;
                    }
                }
            }
        }
        theta
    }

    /// Input covariance for the exposed θ families.
    ///
    /// Year-indexed demand parameters get Brownian blocks (per consumer)
    /// fitted with σ = cv·mean over the modeled years when `wiener_demand`
    /// is set, plain diagonal entries otherwise; static parameters get
    /// (cv·value)² diagonal entries. Per-supplier cost variance scaling
    /// from the θ spec is applied last.
    pub fn covariance(&self, cv: f64, wiener_demand: bool) -> Result<CovarianceModel> {
        let layout = self.theta_layout();
        let theta = self.theta_mean();
        let mut matrix = DMatrix::zeros(layout.total(), layout.total());
        for (fam, off, len) in &layout.segments {
            match fam {
                ThetaFamily::DemandIntercept | ThetaFamily::DemandSlope => {
                    let n_y = self.years.len();
                    for (ci, c) in self.consumers.iter().enumerate() {
                        let series = if *fam == ThetaFamily::DemandIntercept {
                            &c.demand_intercept
                        } else {
                            &c.demand_slope
                        };
                        let base = off + ci * n_y;
                        if wiener_demand {
                            let block = wiener_covariance(series, cv, &self.years)?;
                            matrix
                                .view_mut((base, base), (n_y, n_y))
                                .copy_from(&block);
                        } else {
                            for y in 0..n_y {
                                matrix[(base + y, base + y)] = (cv * series[y]).powi(2);
                            }
                        }
                    }
                }
                _ => {
                    for k in *off..*off + *len {
                        matrix[(k, k)] = (cv * theta[k]).powi(2);
                    }
                }
            }
        }
        let mut cov = CovarianceModel::new(matrix, layout.labels().to_vec())?;
        for (name, scale) in &self.theta.cost_variance_scale {
            let p = self
                .suppliers
                .iter()
                .position(|s| &s.name == name)
                .expect("validated supplier name");
            let mut indices = Vec::new();
            if let Some(r) = layout.range(ThetaFamily::CostLinear) {
                indices.push(r.start + p);
            }
            if let Some(r) = layout.range(ThetaFamily::CostQuadratic) {
                indices.push(r.start + p);
            }
            cov.scale_variances(&indices, *scale)?;
        }
        Ok(cov)
    }

    fn resolve(&self) -> Result<StdArc<ResolvedGas>> {
        self.validate()?;
        let node_id = |name: &str| self.nodes.iter().position(|n| n == name).unwrap();
        let supplier_node: Vec<usize> = self.suppliers.iter().map(|s| node_id(&s.node)).collect();
        let consumer_node: Vec<usize> = self.consumers.iter().map(|c| node_id(&c.node)).collect();
        let arc_from: Vec<usize> = self.arcs.iter().map(|a| node_id(&a.from)).collect();
        let arc_to: Vec<usize> = self.arcs.iter().map(|a| node_id(&a.to)).collect();
        let mut consumers_at = vec![Vec::new(); self.nodes.len()];
        for (ci, &n) in consumer_node.iter().enumerate() {
            consumers_at[n].push(ci);
        }
        let mut arcs_out = vec![Vec::new(); self.nodes.len()];
        let mut arcs_in = vec![Vec::new(); self.nodes.len()];
        for (ai, (&f, &t)) in arc_from.iter().zip(&arc_to).enumerate() {
            arcs_out[f].push(ai);
            arcs_in[t].push(ai);
        }
        let reach = self.reachability();

        // enumerate live variables in a fixed block order
        let n_y = self.years.len();
        let mut order = Vec::new();
        for (p, _) in self.suppliers.iter().enumerate() {
            for (c, &cn) in consumer_node.iter().enumerate() {
                if reach[p][cn] {
                    for y in 0..n_y {
                        order.push(GasVar::SaleQty { p, c, y });
                    }
                }
            }
        }
        for p in 0..self.suppliers.len() {
            for y in 0..n_y {
                order.push(GasVar::ProdExpansion { p, y });
            }
        }
        for p in 0..self.suppliers.len() {
            for (a, &af) in arc_from.iter().enumerate() {
                if reach[p][af] {
                    for y in 0..n_y {
                        order.push(GasVar::ShipQty { p, a, y });
                    }
                }
            }
        }
        for p in 0..self.suppliers.len() {
            for y in 0..n_y {
                order.push(GasVar::ProdQty { p, y });
            }
        }
        for p in 0..self.suppliers.len() {
            for y in 0..n_y {
                order.push(GasVar::ProdCapacity { p, y });
            }
        }
        for p in 0..self.suppliers.len() {
            for y in 0..n_y {
                order.push(GasVar::AvailDual { p, y });
            }
        }
        for p in 0..self.suppliers.len() {
            for y in 0..n_y {
                order.push(GasVar::CapAcctDual { p, y });
            }
        }
        for p in 0..self.suppliers.len() {
            for n in 0..self.nodes.len() {
                if reach[p][n] {
                    for y in 0..n_y {
                        order.push(GasVar::BalanceDual { p, n, y });
                    }
                }
            }
        }
        for a in 0..self.arcs.len() {
            for y in 0..n_y {
                order.push(GasVar::ArcFlow { a, y });
            }
        }
        for a in 0..self.arcs.len() {
            for y in 0..n_y {
                order.push(GasVar::ArcExpansion { a, y });
            }
        }
        for a in 0..self.arcs.len() {
            for y in 0..n_y {
                order.push(GasVar::ArcCapacity { a, y });
            }
        }
        for a in 0..self.arcs.len() {
            for y in 0..n_y {
                order.push(GasVar::ArcCapDual { a, y });
            }
        }
        for a in 0..self.arcs.len() {
            for y in 0..n_y {
                order.push(GasVar::ArcAcctDual { a, y });
            }
        }
        for c in 0..self.consumers.len() {
            for y in 0..n_y {
                order.push(GasVar::ConsumerPrice { c, y });
            }
        }
        for a in 0..self.arcs.len() {
            for y in 0..n_y {
                order.push(GasVar::ArcPrice { a, y });
            }
        }

        let lookup = order
            .iter()
            .enumerate()
            .map(|(i, v)| (*v, i))
            .collect::<std::collections::HashMap<_, _>>();
        let labels = order
            .iter()
            .map(|v| self.label_of(v))
            .collect::<Vec<String>>();
        let index = GasVariableIndex {
            order,
            lookup,
            labels,
        };
        let theta = self.theta_layout();
        Ok(StdArc::new(ResolvedGas {
            model: self.clone(),
            supplier_node,
            consumer_node,
            arc_from,
            arc_to,
            consumers_at,
            arcs_out,
            arcs_in,
            reach,
            index,
            theta,
        }))
    }

    fn label_of(&self, v: &GasVar) -> String {
        let s = |p: usize| self.suppliers[p].name.clone();
        let c = |c: usize| self.consumers[c].name.clone();
        let n = |n: usize| self.nodes[n].clone();
        let a = |a: usize| self.arcs[a].name.clone();
        match *v {
            GasVar::SaleQty { p, c: ci, y } => format!("Q_sale[{},{},y{}]", s(p), c(ci), y + 1),
            GasVar::ProdExpansion { p, y } => format!("X_prod[{},y{}]", s(p), y + 1),
            GasVar::ShipQty { p, a: ai, y } => format!("Q_ship[{},{},y{}]", s(p), a(ai), y + 1),
            GasVar::ProdQty { p, y } => format!("Q_prod[{},y{}]", s(p), y + 1),
            GasVar::ProdCapacity { p, y } => format!("Cap_prod[{},y{}]", s(p), y + 1),
            GasVar::AvailDual { p, y } => format!("alpha_avail[{},y{}]", s(p), y + 1),
            GasVar::CapAcctDual { p, y } => format!("alpha_capacct[{},y{}]", s(p), y + 1),
            GasVar::BalanceDual { p, n: ni, y } => {
                format!("alpha_balance[{},{},y{}]", s(p), n(ni), y + 1)
            }
            GasVar::ArcFlow { a: ai, y } => format!("Q_arc[{},y{}]", a(ai), y + 1),
            GasVar::ArcExpansion { a: ai, y } => format!("X_arc[{},y{}]", a(ai), y + 1),
            GasVar::ArcCapacity { a: ai, y } => format!("Cap_arc[{},y{}]", a(ai), y + 1),
            GasVar::ArcCapDual { a: ai, y } => format!("alpha_arccap[{},y{}]", a(ai), y + 1),
            GasVar::ArcAcctDual { a: ai, y } => format!("alpha_arcacct[{},y{}]", a(ai), y + 1),
            GasVar::ConsumerPrice { c: ci, y } => format!("pi_cons[{},y{}]", c(ci), y + 1),
            GasVar::ArcPrice { a: ai, y } => format!("pi_arc[{},y{}]", a(ai), y + 1),
        }
    }
}

/// Parameter accessors resolving θ overrides against model base values.
struct ThetaView<'a> {
    r: &'a ResolvedGas,
    theta: &'a DVector<f64>,
}

impl<'a> ThetaView<'a> {
    fn seg(&self, fam: ThetaFamily) -> Option<std::ops::Range<usize>> {
        self.r.theta.range(fam)
    }

    fn dem_intercept(&self, c: usize, y: usize) -> f64 {
        match self.seg(ThetaFamily::DemandIntercept) {
            Some(r) => self.theta[r.start + c * self.r.model.years.len() + y],
            None => self.r.model.consumers[c].demand_intercept[y],
        }
    }

    fn dem_slope(&self, c: usize, y: usize) -> f64 {
        match self.seg(ThetaFamily::DemandSlope) {
            Some(r) => self.theta[r.start + c * self.r.model.years.len() + y],
            None => self.r.model.consumers[c].demand_slope[y],
        }
    }

    fn cost(&self, p: usize) -> GolombekCost {
        let base = &self.r.model.suppliers[p].cost;
        GolombekCost {
            linear: match self.seg(ThetaFamily::CostLinear) {
                Some(r) => self.theta[r.start + p],
                None => base.linear,
            },
            log_coeff: base.log_coeff,
            quadratic: match self.seg(ThetaFamily::CostQuadratic) {
                Some(r) => self.theta[r.start + p],
                None => base.quadratic,
            },
        }
    }

    fn arc_cost(&self, a: usize) -> f64 {
        match self.seg(ThetaFamily::ArcCost) {
            Some(r) => self.theta[r.start + a],
            None => self.r.model.arcs[a].operating_cost,
        }
    }

    fn exp_price(&self, p: usize) -> f64 {
        match self.seg(ThetaFamily::SupplierExpansionPrice) {
            Some(r) => self.theta[r.start + p],
            None => self.r.model.suppliers[p].expansion_price,
        }
    }

    fn arc_exp_price(&self, a: usize) -> f64 {
        match self.seg(ThetaFamily::ArcExpansionPrice) {
            Some(r) => self.theta[r.start + a],
            None => self.r.model.arcs[a].expansion_price,
        }
    }
}

fn eval_f_gas(r: &ResolvedGas, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
    let view = ThetaView { r, theta };
    let m = &r.model;
    let idx = &r.index;
    let at = |v: GasVar| -> f64 { x[idx.index(v).expect("live variable")] };
    let n_y = m.years.len();
    let mut f = DVector::zeros(idx.len());

    for (row, var) in idx.variables().iter().enumerate() {
        f[row] = match *var {
            GasVar::SaleQty { p, c, y } => {
                let df = m.discount[y];
                -df * at(GasVar::ConsumerPrice { c, y })
                    + at(GasVar::BalanceDual {
                        p,
                        n: r.consumer_node[c],
                        y,
                    })
            }
            GasVar::ProdExpansion { p, y } => {
                let df = m.discount[y];
                let mut acc = df * view.exp_price(p);
                for y2 in y..n_y {
                    acc -= at(GasVar::CapAcctDual { p, y: y2 });
                }
                acc
            }
            GasVar::ShipQty { p, a, y } => {
                let df = m.discount[y];
                df * at(GasVar::ArcPrice { a, y })
                    + at(GasVar::BalanceDual {
                        p,
                        n: r.arc_from[a],
                        y,
                    })
                    - (1.0 - m.arcs[a].loss)
                        * at(GasVar::BalanceDual {
                            p,
                            n: r.arc_to[a],
                            y,
                        })
            }
            GasVar::ProdQty { p, y } => {
                let df = m.discount[y];
                let e = golombek_eval(
                    at(GasVar::ProdQty { p, y }),
                    at(GasVar::ProdCapacity { p, y }),
                    &view.cost(p),
                );
                df * e.dq + at(GasVar::AvailDual { p, y })
                    - (1.0 - m.suppliers[p].loss)
                        * at(GasVar::BalanceDual {
                            p,
                            n: r.supplier_node[p],
                            y,
                        })
            }
            GasVar::ProdCapacity { p, y } => {
                let df = m.discount[y];
                let e = golombek_eval(
                    at(GasVar::ProdQty { p, y }),
                    at(GasVar::ProdCapacity { p, y }),
                    &view.cost(p),
                );
                df * e.dcap - m.suppliers[p].availability * at(GasVar::AvailDual { p, y })
                    + at(GasVar::CapAcctDual { p, y })
            }
            GasVar::AvailDual { p, y } => {
                m.suppliers[p].availability * at(GasVar::ProdCapacity { p, y })
                    - at(GasVar::ProdQty { p, y })
            }
            GasVar::CapAcctDual { p, y } => {
                let mut acc =
                    at(GasVar::ProdCapacity { p, y }) - m.suppliers[p].initial_capacity;
                for y2 in 0..=y {
                    acc -= at(GasVar::ProdExpansion { p, y: y2 });
                }
                acc
            }
            GasVar::BalanceDual { p, n, y } => {
                let mut acc = 0.0;
                for &c in &r.consumers_at[n] {
                    acc += at(GasVar::SaleQty { p, c, y });
                }
                for &a in &r.arcs_out[n] {
                    if r.reach[p][r.arc_from[a]] {
                        acc += at(GasVar::ShipQty { p, a, y });
                    }
                }
                if r.supplier_node[p] == n {
                    acc -= (1.0 - m.suppliers[p].loss) * at(GasVar::ProdQty { p, y });
                }
                for &a in &r.arcs_in[n] {
                    if r.reach[p][r.arc_from[a]] {
                        acc -= (1.0 - m.arcs[a].loss) * at(GasVar::ShipQty { p, a, y });
                    }
                }
                acc
            }
            GasVar::ArcFlow { a, y } => {
                let df = m.discount[y];
                df * (view.arc_cost(a) - at(GasVar::ArcPrice { a, y }))
                    + at(GasVar::ArcCapDual { a, y })
            }
            GasVar::ArcExpansion { a, y } => {
                let df = m.discount[y];
                let mut acc = df * view.arc_exp_price(a);
                for y2 in y..n_y {
                    acc -= at(GasVar::ArcAcctDual { a, y: y2 });
                }
                acc
            }
            GasVar::ArcCapacity { a, y } => {
                -at(GasVar::ArcCapDual { a, y }) + at(GasVar::ArcAcctDual { a, y })
            }
            GasVar::ArcCapDual { a, y } => {
                at(GasVar::ArcCapacity { a, y }) - at(GasVar::ArcFlow { a, y })
            }
            GasVar::ArcAcctDual { a, y } => {
                let mut acc = at(GasVar::ArcCapacity { a, y }) - m.arcs[a].initial_capacity;
                for y2 in 0..=y {
                    acc -= at(GasVar::ArcExpansion { a, y: y2 });
                }
                acc
            }
            GasVar::ConsumerPrice { c, y } => {
                let mut sales = 0.0;
                for p in 0..m.suppliers.len() {
                    if r.reach[p][r.consumer_node[c]] {
                        sales += at(GasVar::SaleQty { p, c, y });
                    }
                }
                at(GasVar::ConsumerPrice { c, y })
                    - view.dem_intercept(c, y)
                    - view.dem_slope(c, y) * sales
            }
            GasVar::ArcPrice { a, y } => {
                let mut shipped = 0.0;
                for p in 0..m.suppliers.len() {
                    if r.reach[p][r.arc_from[a]] {
                        shipped += at(GasVar::ShipQty { p, a, y });
                    }
                }
                at(GasVar::ArcFlow { a, y }) - shipped
            }
        };
    }
    f
}

/// Assemble ∇ₓF as a coordinate-format sparse array (row, column) → value.
pub fn assemble_gradient_sparse(
    model: &GasMarketModel,
    x: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<SparseNdArray> {
    let r = model.resolve()?;
    Ok(assemble_g(&r, x, theta))
}

fn assemble_g(r: &ResolvedGas, x: &DVector<f64>, theta: &DVector<f64>) -> SparseNdArray {
    let view = ThetaView { r, theta };
    let m = &r.model;
    let idx = &r.index;
    let n = idx.len();
    let n_y = m.years.len();
    let at = |v: GasVar| -> f64 { x[idx.index(v).expect("live variable")] };
    let col = |v: GasVar| -> usize { idx.index(v).expect("live variable") };
    let mut g = SparseNdArray::new(&[n, n]).expect("positive shape");
    let mut push = |row: usize, column: usize, value: f64| {
        g.add_entry(&[row, column], value).expect("in bounds");
    };

    for (row, var) in idx.variables().iter().enumerate() {
        match *var {
            GasVar::SaleQty { p, c, y } => {
                let df = m.discount[y];
                push(row, col(GasVar::ConsumerPrice { c, y }), -df);
                push(
                    row,
                    col(GasVar::BalanceDual {
                        p,
                        n: r.consumer_node[c],
                        y,
                    }),
                    1.0,
                );
            }
            GasVar::ProdExpansion { p, y } => {
                for y2 in y..n_y {
                    push(row, col(GasVar::CapAcctDual { p, y: y2 }), -1.0);
                }
            }
            GasVar::ShipQty { p, a, y } => {
                let df = m.discount[y];
                push(row, col(GasVar::ArcPrice { a, y }), df);
                push(
                    row,
                    col(GasVar::BalanceDual {
                        p,
                        n: r.arc_from[a],
                        y,
                    }),
                    1.0,
                );
                push(
                    row,
                    col(GasVar::BalanceDual {
                        p,
                        n: r.arc_to[a],
                        y,
                    }),
                    -(1.0 - m.arcs[a].loss),
                );
            }
            GasVar::ProdQty { p, y } => {
                let df = m.discount[y];
                let e = golombek_eval(
                    at(GasVar::ProdQty { p, y }),
                    at(GasVar::ProdCapacity { p, y }),
                    &view.cost(p),
                );
                push(row, col(GasVar::ProdQty { p, y }), df * e.dqq);
                push(row, col(GasVar::ProdCapacity { p, y }), df * e.dqcap);
                push(row, col(GasVar::AvailDual { p, y }), 1.0);
                push(
                    row,
                    col(GasVar::BalanceDual {
                        p,
                        n: r.supplier_node[p],
                        y,
                    }),
                    -(1.0 - m.suppliers[p].loss),
                );
            }
            GasVar::ProdCapacity { p, y } => {
                let df = m.discount[y];
                let e = golombek_eval(
                    at(GasVar::ProdQty { p, y }),
                    at(GasVar::ProdCapacity { p, y }),
                    &view.cost(p),
                );
                push(row, col(GasVar::ProdQty { p, y }), df * e.dqcap);
                push(row, col(GasVar::ProdCapacity { p, y }), df * e.dcapcap);
                push(
                    row,
                    col(GasVar::AvailDual { p, y }),
                    -m.suppliers[p].availability,
                );
                push(row, col(GasVar::CapAcctDual { p, y }), 1.0);
            }
            GasVar::AvailDual { p, y } => {
                push(
                    row,
                    col(GasVar::ProdCapacity { p, y }),
                    m.suppliers[p].availability,
                );
                push(row, col(GasVar::ProdQty { p, y }), -1.0);
            }
            GasVar::CapAcctDual { p, y } => {
                push(row, col(GasVar::ProdCapacity { p, y }), 1.0);
                for y2 in 0..=y {
                    push(row, col(GasVar::ProdExpansion { p, y: y2 }), -1.0);
                }
            }
            GasVar::BalanceDual { p, n: node, y } => {
                for &c in &r.consumers_at[node] {
                    push(row, col(GasVar::SaleQty { p, c, y }), 1.0);
                }
                for &a in &r.arcs_out[node] {
                    if r.reach[p][r.arc_from[a]] {
                        push(row, col(GasVar::ShipQty { p, a, y }), 1.0);
                    }
                }
                if r.supplier_node[p] == node {
                    push(
                        row,
                        col(GasVar::ProdQty { p, y }),
                        -(1.0 - m.suppliers[p].loss),
                    );
                }
                for &a in &r.arcs_in[node] {
                    if r.reach[p][r.arc_from[a]] {
                        push(
                            row,
                            col(GasVar::ShipQty { p, a, y }),
                            -(1.0 - m.arcs[a].loss),
                        );
                    }
                }
            }
            GasVar::ArcFlow { a, y } => {
                let df = m.discount[y];
                push(row, col(GasVar::ArcPrice { a, y }), -df);
                push(row, col(GasVar::ArcCapDual { a, y }), 1.0);
            }
            GasVar::ArcExpansion { a, y } => {
                for y2 in y..n_y {
                    push(row, col(GasVar::ArcAcctDual { a, y: y2 }), -1.0);
                }
            }
            GasVar::ArcCapacity { a, y } => {
                push(row, col(GasVar::ArcCapDual { a, y }), -1.0);
                push(row, col(GasVar::ArcAcctDual { a, y }), 1.0);
            }
            GasVar::ArcCapDual { a, y } => {
                push(row, col(GasVar::ArcCapacity { a, y }), 1.0);
                push(row, col(GasVar::ArcFlow { a, y }), -1.0);
            }
            GasVar::ArcAcctDual { a, y } => {
                push(row, col(GasVar::ArcCapacity { a, y }), 1.0);
                for y2 in 0..=y {
                    push(row, col(GasVar::ArcExpansion { a, y: y2 }), -1.0);
                }
            }
            GasVar::ConsumerPrice { c, y } => {
                push(row, col(GasVar::ConsumerPrice { c, y }), 1.0);
                let slope = view.dem_slope(c, y);
                for p in 0..m.suppliers.len() {
                    if r.reach[p][r.consumer_node[c]] {
                        push(row, col(GasVar::SaleQty { p, c, y }), -slope);
                    }
                }
            }
            GasVar::ArcPrice { a, y } => {
                push(row, col(GasVar::ArcFlow { a, y }), 1.0);
                for p in 0..m.suppliers.len() {
                    if r.reach[p][r.arc_from[a]] {
                        push(row, col(GasVar::ShipQty { p, a, y }), -1.0);
                    }
                }
            }
        }
    }
    g.remove_duplicates_with(|a, b| a + b);
    g
}

fn eval_l_gas(r: &ResolvedGas, x: &DVector<f64>, _theta: &DVector<f64>) -> DMatrix<f64> {
    let m = &r.model;
    let idx = &r.index;
    let n_y = m.years.len();
    let at = |v: GasVar| -> f64 { x[idx.index(v).expect("live variable")] };
    let mut l = DMatrix::zeros(idx.len(), r.theta.total());

    for (row, var) in idx.variables().iter().enumerate() {
        match *var {
            GasVar::ProdExpansion { p, y } => {
                if let Some(rg) = r.theta.range(ThetaFamily::SupplierExpansionPrice) {
                    l[(row, rg.start + p)] = m.discount[y];
                }
            }
            GasVar::ProdQty { p, y } => {
                // marginal cost = lin + 2·quad·Q − g·log(1 − Q/Cap)
                if let Some(rg) = r.theta.range(ThetaFamily::CostLinear) {
                    l[(row, rg.start + p)] = m.discount[y];
                }
                if let Some(rg) = r.theta.range(ThetaFamily::CostQuadratic) {
                    l[(row, rg.start + p)] =
                        m.discount[y] * 2.0 * at(GasVar::ProdQty { p, y });
                }
            }
            GasVar::ArcFlow { a, y } => {
                if let Some(rg) = r.theta.range(ThetaFamily::ArcCost) {
                    l[(row, rg.start + a)] = m.discount[y];
                }
            }
            GasVar::ArcExpansion { a, y } => {
                if let Some(rg) = r.theta.range(ThetaFamily::ArcExpansionPrice) {
                    l[(row, rg.start + a)] = m.discount[y];
                }
            }
            GasVar::ConsumerPrice { c, y } => {
                if let Some(rg) = r.theta.range(ThetaFamily::DemandIntercept) {
                    l[(row, rg.start + c * n_y + y)] = -1.0;
                }
                if let Some(rg) = r.theta.range(ThetaFamily::DemandSlope) {
                    let mut sales = 0.0;
                    for p in 0..m.suppliers.len() {
                        if r.reach[p][r.consumer_node[c]] {
                            sales += at(GasVar::SaleQty { p, c, y });
                        }
                    }
                    l[(row, rg.start + c * n_y + y)] = -sales;
                }
            }
            _ => {}
        }
    }
    l
}

/// Build the flattened NCP for a gas-market model.
pub fn make_gas_market(model: &GasMarketModel) -> Result<ParametrizedNcp> {
    let r = model.resolve()?;
    let n = r.index.len();
    let mut nonneg = Vec::new();
    for i in 0..n {
        if r.index.is_nonneg(i) {
            nonneg.push(i);
        }
    }
    let cone = ConeSpec::mixed(n, nonneg)?;
    let theta_mean = model.theta_mean();
    let var_labels: Vec<String> = (0..n).map(|i| r.index.label(i).to_string()).collect();
    let param_labels = r.theta.labels().to_vec();

    let rf = StdArc::clone(&r);
    let rg = StdArc::clone(&r);
    let rl = StdArc::clone(&r);
    let f = move |x: &DVector<f64>, theta: &DVector<f64>| eval_f_gas(&rf, x, theta);
    let g = move |x: &DVector<f64>, theta: &DVector<f64>| {
        let sparse = assemble_g(&rg, x, theta);
        let mut dense = DMatrix::zeros(rg.index.len(), rg.index.len());
        for (pos, v) in sparse.iterate() {
            dense[(pos[0], pos[1])] = v;
        }
        dense
    };
    let l = move |x: &DVector<f64>, theta: &DVector<f64>| eval_l_gas(&rl, x, theta);

    Ok(ParametrizedNcp::new(cone, theta_mean, f, g, l).with_labels(var_labels, param_labels))
}

/// A heuristic starting point: moderate production spread over local
/// consumers, capacities at their initial values, prices near the demand
/// midpoint, duals consistent with the sale stationarity rows.
pub fn initial_point(model: &GasMarketModel) -> Result<DVector<f64>> {
    let r = model.resolve()?;
    let m = &r.model;
    let idx = &r.index;
    let mut x = DVector::zeros(idx.len());
    for (i, var) in idx.variables().iter().enumerate() {
        x[i] = match *var {
            GasVar::SaleQty { p, y, .. } => {
                0.2 * m.suppliers[p].availability * m.suppliers[p].initial_capacity
                    / m.consumers.len() as f64
                    * (1.0 + 0.05 * y as f64)
            }
            GasVar::ShipQty { p, .. } => {
                0.05 * m.suppliers[p].availability * m.suppliers[p].initial_capacity
            }
            GasVar::ProdQty { p, .. } => {
                0.5 * m.suppliers[p].availability * m.suppliers[p].initial_capacity
            }
            GasVar::ProdCapacity { p, .. } => m.suppliers[p].initial_capacity,
            GasVar::ProdExpansion { .. } => 0.0,
            GasVar::AvailDual { .. } => 0.1,
            GasVar::CapAcctDual { .. } => 0.1,
            GasVar::BalanceDual { p, n, y } => {
                // sale stationarity suggests α_d ≈ df·π at active sales
                let pi = r.consumers_at[n]
                    .first()
                    .map(|&c| 0.5 * m.consumers[c].demand_intercept[y])
                    .unwrap_or(1.0);
                let _ = p;
                m.discount[y] * pi
            }
            GasVar::ArcFlow { a, .. } => 0.3 * m.arcs[a].initial_capacity,
            GasVar::ArcExpansion { .. } => 0.0,
            GasVar::ArcCapacity { a, .. } => m.arcs[a].initial_capacity,
            GasVar::ArcCapDual { .. } => 0.1,
            GasVar::ArcAcctDual { .. } => 0.1,
            GasVar::ConsumerPrice { c, y } => 0.5 * m.consumers[c].demand_intercept[y],
            GasVar::ArcPrice { a, .. } => m.arcs[a].operating_cost + 0.5,
        };
    }
    Ok(x)
}

/// The bundled synthetic 3-node instance: two suppliers, three consumers,
/// two arcs feeding a production-free demand node, two years with demand
/// growth that makes capacity expansion worthwhile.
pub fn toy_instance() -> GasMarketModel {
    GasMarketModel {
        years: vec![1.0, 2.0],
        discount: vec![1.0, 1.0 / 1.05],
        nodes: vec!["N1".into(), "N2".into(), "N3".into()],
        suppliers: vec![
            Supplier {
                name: "S1".into(),
                node: "N1".into(),
                initial_capacity: 18.0,
                expansion_price: 12.0,
                loss: 0.03,
                availability: 0.9,
                cost: GolombekCost {
                    linear: 4.0,
                    log_coeff: 1.0,
                    quadratic: 0.08,
                },
            },
            Supplier {
                name: "S2".into(),
                node: "N2".into(),
                initial_capacity: 24.0,
                expansion_price: 15.0,
                loss: 0.02,
                availability: 0.9,
                cost: GolombekCost {
                    linear: 5.0,
                    log_coeff: 1.2,
                    quadratic: 0.06,
                },
            },
        ],
        consumers: vec![
            Consumer {
                name: "C1".into(),
                node: "N1".into(),
                demand_intercept: vec![16.0, 19.0],
                demand_slope: vec![-0.8, -0.8],
            },
            Consumer {
                name: "C2".into(),
                node: "N2".into(),
                demand_intercept: vec![15.0, 18.0],
                demand_slope: vec![-0.7, -0.7],
            },
            Consumer {
                name: "C3".into(),
                node: "N3".into(),
                demand_intercept: vec![18.0, 22.0],
                demand_slope: vec![-0.9, -0.9],
            },
        ],
        arcs: vec![
            PipelineArc {
                name: "A1".into(),
                from: "N1".into(),
                to: "N3".into(),
                initial_capacity: 6.0,
                expansion_price: 6.0,
                loss: 0.02,
                operating_cost: 1.2,
            },
            PipelineArc {
                name: "A2".into(),
                from: "N2".into(),
                to: "N3".into(),
                initial_capacity: 8.0,
                expansion_price: 7.0,
                loss: 0.03,
                operating_cost: 1.0,
            },
        ],
        theta: GasThetaSpec::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_derivative_consistency, check_solution, classify_activity};
    use crate::solver::{solve, SolverConfig};

    fn solve_gas(model: &GasMarketModel) -> (crate::problem::ParametrizedNcp, DVector<f64>) {
        let p = make_gas_market(model).unwrap();
        let cfg = SolverConfig {
            x0: Some(initial_point(model).unwrap()),
            residual_tol: 1e-22,
            max_iter: 400,
            ..SolverConfig::default()
        };
        let r = solve(&p, &p.theta_mean().clone(), &cfg).unwrap();
        assert!(r.converged, "gas solve failed at merit {}", r.merit);
        (p, r.x)
    }

    #[test]
    fn golombek_values() {
        let c = GolombekCost {
            linear: 1.0,
            log_coeff: 1.0,
            quadratic: 1.0,
        };
        // zero output costs nothing
        assert_eq!(golombek_cost(0.0, 2.0, &c).unwrap().0, 0.0);
        // l = g = q = 1, cap = 2, q = 1: cost = 2 + 1 + 1·1·log(1/2)
        let (cost, _) = golombek_cost(1.0, 2.0, &c).unwrap();
        assert!((cost - (3.0 - 2f64.ln())).abs() < 1e-14);
        // marginal cost at zero output is the linear coefficient
        let (_, mc0) = golombek_cost(0.0, 2.0, &c).unwrap();
        assert!((mc0 - c.linear).abs() < 1e-14);
        // marginal cost rises steeply toward capacity
        let (_, mc_half) = golombek_cost(1.0, 2.0, &c).unwrap();
        let (_, mc_near) = golombek_cost(1.98, 2.0, &c).unwrap();
        assert!(mc_near > mc_half);
        // the (cap − q)·log(1 − q/cap) factor itself vanishes at the wall
        let q: f64 = 2.0 * (1.0 - 1e-12);
        assert!(((2.0 - q) * (1.0 - q / 2.0).ln()).abs() < 1e-9);
        // out of domain
        assert!(golombek_cost(2.0, 2.0, &c).is_err());
        assert!(golombek_cost(-0.1, 2.0, &c).is_err());
    }

    #[test]
    fn golombek_derivatives_match_finite_differences() {
        let c = GolombekCost {
            linear: 3.0,
            log_coeff: 1.5,
            quadratic: 0.2,
        };
        let h = 1e-6;
        for &(q, cap) in &[(1.0, 5.0), (4.0, 5.0), (0.5, 2.0), (4.9, 5.0)] {
            let e = golombek_eval(q, cap, &c);
            let fd_q = (golombek_eval(q + h, cap, &c).cost - golombek_eval(q - h, cap, &c).cost)
                / (2.0 * h);
            let fd_cap = (golombek_eval(q, cap + h, &c).cost - golombek_eval(q, cap - h, &c).cost)
                / (2.0 * h);
            assert!((e.dq - fd_q).abs() / fd_q.abs().max(1.0) < 1e-6, "dq at ({q},{cap})");
            assert!(
                (e.dcap - fd_cap).abs() / fd_cap.abs().max(1.0) < 1e-6,
                "dcap at ({q},{cap})"
            );
            let fd_qq =
                (golombek_eval(q + h, cap, &c).dq - golombek_eval(q - h, cap, &c).dq) / (2.0 * h);
            assert!((e.dqq - fd_qq).abs() / fd_qq.abs().max(1.0) < 1e-5);
            let fd_qcap =
                (golombek_eval(q, cap + h, &c).dq - golombek_eval(q, cap - h, &c).dq) / (2.0 * h);
            assert!((e.dqcap - fd_qcap).abs() / fd_qcap.abs().max(1.0) < 1e-5);
        }
    }

    #[test]
    fn demand_calibration() {
        let (intercept, slope) = calibrate_demand(4.0, 100.0, 0.29).unwrap();
        assert!((slope - (-4.0 / 29.0)).abs() < 1e-12);
        // passes through the reference point
        assert!((intercept + slope * 100.0 - 4.0).abs() < 1e-12);
        // recomputed point elasticity
        let e = -4.0 / (slope * 100.0);
        assert!((e - 0.29).abs() < 1e-12);
        // very elastic demand flattens the curve
        let (_, s2) = calibrate_demand(4.0, 100.0, 1e9).unwrap();
        assert!(s2.abs() < 1e-9);
        assert!(calibrate_demand(4.0, 0.0, 0.29).is_err());
    }

    #[test]
    fn validation_names_offending_element() {
        let mut model = toy_instance();
        model.suppliers[1].node = "NOWHERE".into();
        match model.validate() {
            Err(crate::error::Error::ModelValidation { element, .. }) => {
                assert_eq!(element, "S2")
            }
            other => panic!("expected validation error, got {other:?}"),
        }

        let mut model = toy_instance();
        model.arcs[0].to = "N1".into();
        assert!(matches!(
            model.validate(),
            Err(crate::error::Error::ModelValidation { .. })
        ));

        // consumer at an isolated node is unreachable
        let mut model = toy_instance();
        model.nodes.push("N4".into());
        model.consumers.push(Consumer {
            name: "C4".into(),
            node: "N4".into(),
            demand_intercept: vec![10.0, 11.0],
            demand_slope: vec![-1.0, -1.0],
        });
        match model.validate() {
            Err(crate::error::Error::ModelValidation { element, reason }) => {
                assert_eq!(element, "C4");
                assert!(reason.contains("reach"));
            }
            other => panic!("expected reachability error, got {other:?}"),
        }
    }

    #[test]
    fn variable_index_is_a_bijection() {
        let model = toy_instance();
        let idx = model.variable_index().unwrap();
        for i in 0..idx.len() {
            let var = idx.decode(i);
            assert_eq!(idx.index(var), Some(i));
        }
        // unreachable pairing is structurally absent: S1 cannot reach N2
        assert_eq!(idx.index(GasVar::SaleQty { p: 0, c: 1, y: 0 }), None);
        assert_eq!(idx.index(GasVar::BalanceDual { p: 0, n: 1, y: 0 }), None);
    }

    #[test]
    fn jacobians_match_finite_differences_at_interior_points() {
        let model = toy_instance();
        let p = make_gas_market(&model).unwrap();
        let x0 = initial_point(&model).unwrap();
        let theta = p.theta_mean().clone();
        let check = check_derivative_consistency(&p, &x0, &theta, 1e-5);
        assert!(check.max_rel_g < 1e-4, "G: {}", check.max_rel_g);
        assert!(check.max_rel_l < 1e-4, "L: {}", check.max_rel_l);
    }

    #[test]
    fn sparse_and_dense_gradient_assemblies_agree() {
        let model = toy_instance();
        let p = make_gas_market(&model).unwrap();
        let x0 = initial_point(&model).unwrap();
        let theta = p.theta_mean().clone();
        let sparse = assemble_gradient_sparse(&model, &x0, &theta).unwrap();
        let dense = p.eval_g(&x0, &theta);
        let n = p.dim();
        let flat = sparse.to_dense().unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(flat[i * n + j], dense[(i, j)]);
            }
        }
        // structural sparsity stays below 5%
        let density = sparse.size() as f64 / (n * n) as f64;
        assert!(density <= 0.05, "density {density}");
    }

    #[test]
    fn toy_solution_clears_markets_and_accounts_capacity() {
        let model = toy_instance();
        let (p, x) = solve_gas(&model);
        let theta = p.theta_mean().clone();
        let report = check_solution(&p, &x, &theta, 1e-8);
        assert!(report.ok, "residuals: {report:?}");

        let idx = model.variable_index().unwrap();
        let at = |v: GasVar| x[idx.index(v).unwrap()];
        for a in 0..model.arcs.len() {
            for y in 0..model.n_years() {
                // market clearing: arc flow equals the suppliers' shipments
                let mut shipped = 0.0;
                for p_i in 0..model.suppliers.len() {
                    if let Some(k) = idx.index(GasVar::ShipQty { p: p_i, a, y }) {
                        shipped += x[k];
                    }
                }
                assert!(
                    (at(GasVar::ArcFlow { a, y }) - shipped).abs() < 1e-8,
                    "arc {a} year {y}"
                );
                // capacity accounting
                let mut cap = model.arcs[a].initial_capacity;
                for y2 in 0..=y {
                    cap += at(GasVar::ArcExpansion { a, y: y2 });
                }
                assert!((at(GasVar::ArcCapacity { a, y }) - cap).abs() < 1e-8);
            }
        }
        for p_i in 0..model.suppliers.len() {
            for y in 0..model.n_years() {
                let mut cap = model.suppliers[p_i].initial_capacity;
                for y2 in 0..=y {
                    cap += at(GasVar::ProdExpansion { p: p_i, y: y2 });
                }
                assert!((at(GasVar::ProdCapacity { p: p_i, y }) - cap).abs() < 1e-8);
            }
        }

        // nodal balance rows are exactly the α_d residual rows
        let f = p.eval_f(&x, &theta);
        for (i, v) in idx.variables().iter().enumerate() {
            if matches!(v, GasVar::BalanceDual { .. }) {
                assert!(f[i].abs() < 1e-8, "balance residual {}", f[i]);
            }
        }
    }

    #[test]
    fn discount_rescaling_leaves_primal_solution_unchanged() {
        let model = toy_instance();
        let (p, x) = solve_gas(&model);
        let mut scaled = toy_instance();
        for d in &mut scaled.discount {
            *d *= 0.5;
        }
        let (p2, x2) = solve_gas(&scaled);
        assert_eq!(p.dim(), p2.dim());
        let idx = model.variable_index().unwrap();
        for (i, v) in idx.variables().iter().enumerate() {
            match v {
                // duals scale with the discount factors; primal quantities,
                // capacities and prices must not move
                GasVar::AvailDual { .. }
                | GasVar::CapAcctDual { .. }
                | GasVar::BalanceDual { .. }
                | GasVar::ArcCapDual { .. }
                | GasVar::ArcAcctDual { .. } => {
                    assert!(
                        (x2[i] - 0.5 * x[i]).abs() < 1e-6,
                        "{}: {} vs {}",
                        idx.label(i),
                        x2[i],
                        0.5 * x[i]
                    );
                }
                _ => {
                    assert!(
                        (x2[i] - x[i]).abs() < 1e-6,
                        "{}: {} vs {}",
                        idx.label(i),
                        x2[i],
                        x[i]
                    );
                }
            }
        }
    }

    #[test]
    fn single_supplier_reduction_matches_welfare_grid_oracle() {
        // one supplier and one consumer at the same node, one year, no
        // arcs: the competitive equilibrium maximizes consumer surplus
        // plus producer profit, a strictly concave 1-D problem solved here
        // by grid search plus golden-section refinement.
        let cost = GolombekCost {
            linear: 3.0,
            log_coeff: 1.0,
            quadratic: 0.1,
        };
        let (q0, avl, loss) = (20.0f64, 0.95f64, 0.04f64);
        let (dem_i, dem_s) = (14.0f64, -0.6f64);
        let model = GasMarketModel {
            years: vec![1.0],
            discount: vec![1.0],
            nodes: vec!["N".into()],
            suppliers: vec![Supplier {
                name: "S".into(),
                node: "N".into(),
                initial_capacity: q0,
                expansion_price: 50.0, // never worth expanding
                loss,
                availability: avl,
                cost: cost.clone(),
            }],
            consumers: vec![Consumer {
                name: "C".into(),
                node: "N".into(),
                demand_intercept: vec![dem_i],
                demand_slope: vec![dem_s],
            }],
            arcs: vec![],
            theta: GasThetaSpec::default(),
        };

        let welfare = |q: f64| -> f64 {
            let sold = (1.0 - loss) * q;
            let surplus = dem_i * sold + 0.5 * dem_s * sold * sold;
            surplus - golombek_eval(q, q0, &cost).cost
        };
        // coarseature grid, then golden-section refinement
        let upper = avl * q0 * (1.0 - 1e-12);
        let mut best = (0.0, welfare(0.0));
        let grid = 200_000;
        for k in 0..=grid {
            let q = upper * k as f64 / grid as f64;
            let w = welfare(q);
            if w > best.1 {
                best = (q, w);
            }
        }
        let (mut lo, mut hi) = (
            (best.0 - upper / grid as f64).max(0.0),
            (best.0 + upper / grid as f64).min(upper),
        );
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if welfare(a) < welfare(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        let q_oracle = 0.5 * (lo + hi);
        let pi_oracle = dem_i + dem_s * (1.0 - loss) * q_oracle;

        let (p, x) = solve_gas(&model);
        let idx = model.variable_index().unwrap();
        let q_ncp = x[idx.index(GasVar::ProdQty { p: 0, y: 0 }).unwrap()];
        let pi_ncp = x[idx.index(GasVar::ConsumerPrice { c: 0, y: 0 }).unwrap()];
        assert!(
            (q_ncp - q_oracle).abs() < 1e-6,
            "production {q_ncp} vs oracle {q_oracle}"
        );
        assert!((pi_ncp - pi_oracle).abs() < 1e-6);
        // expansion really is unattractive at this price
        assert_eq!(x[idx.index(GasVar::ProdExpansion { p: 0, y: 0 }).unwrap()], 0.0);
        let _ = p;
    }

    #[test]
    fn toy_solution_is_strictly_complementary() {
        let model = toy_instance();
        let (p, x) = solve_gas(&model);
        let sol = classify_activity(&p, &x, p.theta_mean(), None).unwrap();
        assert!(sol.weak_set().is_empty());
    }

    #[test]
    fn wiener_covariance_blocks_and_cost_scaling() {
        let mut model = toy_instance();
        model
            .theta
            .cost_variance_scale
            .insert("S1".into(), 5.0);
        let cov = model.covariance(0.01, true).unwrap();
        let layout = model.theta_layout();

        // demand-intercept block for C1: σ²·min(t_i, t_j)
        let r = layout.range(ThetaFamily::DemandIntercept).unwrap();
        let mu_mean: f64 = (16.0 + 19.0) / 2.0;
        let sigma2 = (0.01 * mu_mean).powi(2);
        let m = cov.matrix();
        assert!((m[(r.start, r.start)] - sigma2 * 1.0).abs() < 1e-14);
        assert!((m[(r.start, r.start + 1)] - sigma2 * 1.0).abs() < 1e-14);
        assert!((m[(r.start + 1, r.start + 1)] - sigma2 * 2.0).abs() < 1e-14);

        // S1's cost variances scaled fivefold relative to the unscaled model
        let plain = toy_instance().covariance(0.01, true).unwrap();
        let rl = layout.range(ThetaFamily::CostLinear).unwrap();
        assert!(
            (m[(rl.start, rl.start)] - 5.0 * plain.matrix()[(rl.start, rl.start)]).abs() < 1e-14
        );
        // S2 untouched
        assert!(
            (m[(rl.start + 1, rl.start + 1)] - plain.matrix()[(rl.start + 1, rl.start + 1)])
                .abs()
                < 1e-16
        );
    }
}
