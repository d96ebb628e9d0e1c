//! Consumption and portfolio choice under narrow framing: the Bellman
//! operator `W`, value iteration with greedy policy extraction, and
//! checks of the conditions under which the fixed point exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{
    iterate_t, iterate_to_fixed_point, sup_distance, verify_assumption3, Assumption3Status,
    FramingSpec, IterationOptions, IterationReport, Kappa,
};
use crate::market::MarketModel;
use crate::preferences::Preferences;

/// Values closer than this are treated as ties by the maximizers.
pub const TIE_TOLERANCE: f64 = 1e-13;
/// Final bracket width of the one-dimensional searches.
pub const SEARCH_WIDTH: f64 = 1e-12;
/// Boxes with more assets than this are checked on a sample of corners.
pub const MAX_ENUMERATED_ASSETS: usize = 20;
const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionInterval {
    pub lo: f64,
    /// An upper end of 1 is excluded.
    pub hi: f64,
}

/// Feasible consumption propensities and allocations per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpace {
    pub consumption: Vec<ConsumptionInterval>,
    /// `[state][asset] = (lo, hi)`.
    pub allocation: Vec<Vec<(f64, f64)>>,
}

impl PolicySpace {
    pub fn new(
        consumption: Vec<ConsumptionInterval>,
        allocation: Vec<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let space = Self {
            consumption,
            allocation,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn uniform(n_states: usize, lo: f64, hi: f64, boxes: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(
            vec![ConsumptionInterval { lo, hi }; n_states],
            vec![boxes; n_states],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.consumption.len() != self.allocation.len() {
            return Err(Error::validation(
                "policy_space",
                "consumption and allocation must cover the same states",
            ));
        }
        for (x, iv) in self.consumption.iter().enumerate() {
            if !(iv.lo >= 0.0 && iv.lo <= iv.hi && iv.hi <= 1.0) || (iv.lo == 1.0) {
                return Err(Error::validation(
                    format!("policy_space.consumption[{x}]"),
                    format!(
                        "need 0 <= lo <= hi <= 1 with lo < 1, found [{}, {}]",
                        iv.lo, iv.hi
                    ),
                ));
            }
        }
        let n_assets = self.allocation.first().map_or(0, Vec::len);
        for (x, boxes) in self.allocation.iter().enumerate() {
            if boxes.len() != n_assets {
                return Err(Error::validation(
                    format!("policy_space.allocation[{x}]"),
                    format!("expected {n_assets} assets"),
                ));
            }
            for (i, (lo, hi)) in boxes.iter().enumerate() {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::validation(
                        format!("policy_space.allocation[{x}][{i}]"),
                        format!("need finite lo <= hi, found [{lo}, {hi}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The solvers need a positive consumption floor in every state.
    pub fn require_positive_floor(&self) -> Result<()> {
        match self.consumption.iter().position(|iv| iv.lo <= 0.0) {
            Some(x) => Err(Error::validation(
                format!("policy_space.consumption[{x}].lo"),
                "must be positive to solve",
            )),
            None => Ok(()),
        }
    }

    pub fn n_states(&self) -> usize {
        self.consumption.len()
    }

    pub fn n_assets(&self) -> usize {
        self.allocation.first().map_or(0, Vec::len)
    }

    pub fn contains_consumption(&self, x: usize, c: f64) -> bool {
        let iv = self.consumption[x];
        c >= iv.lo && c <= iv.hi && c < 1.0
    }

    pub fn contains_allocation(&self, x: usize, theta: &[f64]) -> bool {
        theta.len() == self.n_assets()
            && theta
                .iter()
                .zip(&self.allocation[x])
                .all(|(t, (lo, hi))| t >= lo && t <= hi)
    }

    pub(crate) fn check_against(&self, model: &MarketModel) -> Result<()> {
        if self.n_states() != model.n_states() {
            return Err(Error::validation(
                "policy_space",
                format!("expected {} states", model.n_states()),
            ));
        }
        if self.n_assets() != model.n_assets() {
            return Err(Error::validation(
                "policy_space.allocation",
                format!("expected {} assets", model.n_assets()),
            ));
        }
        Ok(())
    }

    /// Corners of `J_x`; all of them up to the enumeration cap, otherwise the
    /// two extreme corners and their single-coordinate flips.
    pub fn vertices(&self, x: usize) -> (Vec<Vec<f64>>, bool) {
        let boxes = &self.allocation[x];
        let n = boxes.len();
        if n <= MAX_ENUMERATED_ASSETS {
            let out = (0..1usize << n)
                .map(|mask| {
                    boxes
                        .iter()
                        .enumerate()
                        .map(|(i, (lo, hi))| if mask >> i & 1 == 1 { *hi } else { *lo })
                        .collect()
                })
                .collect();
            return (out, true);
        }
        let lower: Vec<f64> = boxes.iter().map(|b| b.0).collect();
        let upper: Vec<f64> = boxes.iter().map(|b| b.1).collect();
        let mut out = vec![lower.clone(), upper.clone()];
        for i in 0..n {
            let mut v = lower.clone();
            v[i] = upper[i];
            out.push(v);
            let mut v = upper.clone();
            v[i] = lower[i];
            out.push(v);
        }
        (out, false)
    }
}

/// A stationary consumption-portfolio policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub c: Vec<f64>,
    /// `[state][asset]`.
    pub theta: Vec<Vec<f64>>,
}

impl Policy {
    pub fn validate_in(&self, space: &PolicySpace) -> Result<()> {
        if self.c.len() != space.n_states() || self.theta.len() != space.n_states() {
            return Err(Error::validation(
                "policy",
                format!("expected {} states", space.n_states()),
            ));
        }
        for x in 0..space.n_states() {
            if !space.contains_consumption(x, self.c[x]) {
                return Err(Error::validation(
                    format!("policy.c[{x}]"),
                    format!("{} is outside the feasible consumption interval", self.c[x]),
                ));
            }
            if !space.contains_allocation(x, &self.theta[x]) {
                return Err(Error::validation(
                    format!("policy.theta[{x}]"),
                    "outside the feasible allocation box",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

fn linear_gain_loss(theta: &[f64], gain_loss: &[f64], prefs: &Preferences) -> f64 {
    theta
        .iter()
        .zip(gain_loss)
        .enumerate()
        .map(|(i, (t, g))| t * prefs.framing_weight(i) * g)
        .sum()
}

/// Log consumption growth and gain-loss term induced by a policy.
pub fn policy_framing(
    model: &MarketModel,
    prefs: &Preferences,
    policy: &Policy,
) -> Result<FramingSpec> {
    let n = model.n_states();
    if policy.c.len() != n || policy.theta.len() != n {
        return Err(Error::validation("policy", format!("expected {n} states")));
    }
    for (x, c) in policy.c.iter().enumerate() {
        if !(*c > 0.0 && *c < 1.0) {
            return Err(Error::Domain(format!(
                "consumption propensity {c} at state {x} must lie in (0, 1)"
            )));
        }
    }
    for x in 0..n {
        for o in model.outcomes(x) {
            model.portfolio_return(x, o.next, o.atom, &policy.theta[x])?;
        }
    }
    let kappa = Kappa::from_fn(model, |x, y, j, _| {
        let r = model
            .portfolio_return(x, y, j, &policy.theta[x])
            .unwrap_or(f64::NAN);
        policy.c[y].ln() - policy.c[x].ln() + (1.0 - policy.c[x]).ln() + r.ln()
    });
    let g = model.gain_loss(prefs);
    let varpi = (0..n)
        .map(|x| {
            let c = policy.c[x];
            (1.0 - c) / c * linear_gain_loss(&policy.theta[x], &g[x], prefs)
        })
        .collect();
    FramingSpec::new(kappa, varpi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValue {
    /// Utility per unit of wealth, `c * f`.
    pub value: Vec<f64>,
    pub utility: IterationReport,
}

/// Utility per unit of wealth of a stationary policy, `F = c * f` where `f`
/// is the fixed point of the policy's utility operator. Fails when the
/// policy's operator is not well posed.
pub fn policy_value(
    model: &MarketModel,
    prefs: &Preferences,
    policy: &Policy,
    options: &IterationOptions,
) -> Result<PolicyValue> {
    let spec = policy_framing(model, prefs, policy)?;
    let status = verify_assumption3(
        &spec,
        model,
        prefs,
        crate::fixed_point::DEFAULT_ASSUMPTION3_STEPS,
    )?;
    if !status.passes() {
        return Err(Error::Domain(format!(
            "policy gain-loss term too negative for a well-defined utility: {status:?}"
        )));
    }
    let mut utility = iterate_t(&spec.default_start(prefs), &spec, model, prefs, options)?;
    utility.assumption3 = Some(status);
    let value = utility
        .fixed_point
        .values
        .iter()
        .zip(&policy.c)
        .map(|(f, c)| c * f)
        .collect();
    Ok(PolicyValue { value, utility })
}

/// `D(x, theta) = sum_i theta_i b_i g_i(x) + CE_x(R_theta Phi(X'))`.
pub fn d_value(
    x: usize,
    theta: &[f64],
    phi: &[f64],
    gain_loss: &[f64],
    model: &MarketModel,
    prefs: &Preferences,
) -> Result<f64> {
    let mut terms = Vec::new();
    for o in model.outcomes(x) {
        let r = model.portfolio_return(x, o.next, o.atom, theta)?;
        terms.push((r.ln() + phi[o.next].ln(), o.prob));
    }
    Ok(linear_gain_loss(theta, gain_loss, prefs) + prefs.ce_log(terms))
}

/// Maximizer of a concave function on `[lo, hi]`. A bracket that never
/// left a bound returns that bound exactly; remaining ties within
/// `TIE_TOLERANCE` go to the smallest point.
pub(crate) fn maximize_interval<F>(lo: f64, hi: f64, mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if hi <= lo {
        return Ok((lo, f(lo)?));
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut p = b - INV_PHI * (b - a);
    let mut q = a + INV_PHI * (b - a);
    let mut fp = f(p)?;
    let mut fq = f(q)?;
    while b - a > SEARCH_WIDTH && p < q {
        if fp < fq {
            a = p;
            p = q;
            fp = fq;
            q = a + INV_PHI * (b - a);
            fq = f(q)?;
        } else {
            b = q;
            q = p;
            fq = fp;
            p = b - INV_PHI * (b - a);
            fp = f(p)?;
        }
    }
    let mid = if a == lo {
        lo
    } else if b == hi {
        hi
    } else {
        0.5 * (a + b)
    };
    let mut candidates = vec![(lo, f(lo)?)];
    if mid != lo && mid != hi {
        candidates.push((mid, f(mid)?));
    }
    candidates.push((hi, f(hi)?));
    let best = candidates
        .iter()
        .fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
    Ok(candidates
        .into_iter()
        .find(|(_, v)| *v >= best - TIE_TOLERANCE)
        .expect("at least one candidate attains the maximum"))
}

/// Maximizer of a concave function on a box: exact one-dimensional search
/// for a single coordinate, cyclic coordinate search otherwise.
pub(crate) fn maximize_box<F>(bounds: &[(f64, f64)], mut f: F) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut point: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    if bounds.is_empty() {
        let v = f(&point)?;
        return Ok((point, v));
    }
    if bounds.len() == 1 {
        let (t, v) = maximize_interval(bounds[0].0, bounds[0].1, |t| f(&[t]))?;
        return Ok((vec![t], v));
    }
    let mut value = f(&point)?;
    for _ in 0..MAX_SWEEPS {
        let before = value;
        for i in 0..bounds.len() {
            let mut trial = point.clone();
            let (t, v) = maximize_interval(bounds[i].0, bounds[i].1, |t| {
                trial[i] = t;
                f(&trial)
            })?;
            if v > value {
                point[i] = t;
                value = v;
            }
        }
        if value - before < TIE_TOLERANCE {
            break;
        }
    }
    Ok((point, value))
}

pub fn maximize_theta(
    x: usize,
    phi: &[f64],
    gain_loss: &[f64],
    model: &MarketModel,
    prefs: &Preferences,
    space: &PolicySpace,
) -> Result<(Vec<f64>, f64)> {
    maximize_box(&space.allocation[x], |theta| {
        d_value(x, theta, phi, gain_loss, model, prefs)
    })
}

/// Unconstrained optimal consumption propensity given continuation value
/// `y > 0`.
pub fn interior_consumption(y: f64, prefs: &Preferences) -> f64 {
    if prefs.unit_eis() {
        return 1.0 - prefs.beta;
    }
    let rho = prefs.rho;
    let ratio = (prefs.beta / (1.0 - prefs.beta)).powf(1.0 / rho);
    1.0 / (1.0 + y.powf((1.0 - rho) / rho) * ratio)
}

/// `max_c H(c, (1 - c) y)` over the consumption interval of state `x`.
pub fn maximize_c(x: usize, y: f64, prefs: &Preferences, space: &PolicySpace) -> (f64, f64) {
    let iv = space.consumption[x];
    let c = if y > 0.0 {
        interior_consumption(y, prefs).clamp(iv.lo, iv.hi)
    } else {
        iv.hi
    };
    let value = prefs.h(c, (1.0 - c) * y.max(0.0));
    (c, value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanStep {
    pub value: ValueFunction,
    pub policy: Policy,
    /// `max_theta D` per state.
    pub best_d: Vec<f64>,
}

/// One application of the Bellman operator with the per-state maximizers.
pub fn apply_w(
    phi: &ValueFunction,
    model: &MarketModel,
    prefs: &Preferences,
    space: &PolicySpace,
) -> Result<BellmanStep> {
    let g = model.gain_loss(prefs);
    apply_w_with(phi, &g, model, prefs, space)
}

fn apply_w_with(
    phi: &ValueFunction,
    g: &[Vec<f64>],
    model: &MarketModel,
    prefs: &Preferences,
    space: &PolicySpace,
) -> Result<BellmanStep> {
    let n = model.n_states();
    if phi.values.len() != n {
        return Err(Error::validation("phi", format!("expected {n} values")));
    }
    if let Some(x) = phi
        .values
        .iter()
        .position(|v| !(*v >= 0.0 && v.is_finite()))
    {
        return Err(Error::Domain(format!(
            "value {} at state {x} must be finite and nonnegative",
            phi.values[x]
        )));
    }
    let mut values = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut best_d = Vec::with_capacity(n);
    let mut undefined = Vec::new();
    for x in 0..n {
        let (t, d) = maximize_theta(x, &phi.values, &g[x], model, prefs, space)?;
        if d < 0.0 {
            undefined.push(x);
        }
        let (cx, v) = maximize_c(x, d, prefs, space);
        values.push(v);
        c.push(cx);
        theta.push(t);
        best_d.push(d);
    }
    if !undefined.is_empty() {
        return Err(Error::UndefinedOperator { states: undefined });
    }
    Ok(BellmanStep {
        value: ValueFunction::new(values),
        policy: Policy { c, theta },
        best_d,
    })
}

/// Starting value built from the positive part of the best linear
/// gain-loss term in each state.
pub fn seed_phi0(model: &MarketModel, prefs: &Preferences, space: &PolicySpace) -> ValueFunction {
    let g = model.gain_loss(prefs);
    ValueFunction::new(
        (0..model.n_states())
            .map(|x| {
                let best: f64 = space.allocation[x]
                    .iter()
                    .enumerate()
                    .map(|(i, (lo, hi))| {
                        let slope = prefs.framing_weight(i) * g[x][i];
                        if slope > 0.0 {
                            slope * hi
                        } else {
                            slope * lo
                        }
                    })
                    .sum();
                maximize_c(x, best.max(0.0), prefs, space).1
            })
            .collect(),
    )
}

/// Whether every feasible allocation has a nonnegative gain-loss term in
/// every state.
pub fn gain_loss_nonnegative(
    model: &MarketModel,
    prefs: &Preferences,
    space: &PolicySpace,
) -> bool {
    let g = model.gain_loss(prefs);
    (0..model.n_states()).all(|x| worst_linear_gain_loss(x, &g[x], prefs, space) >= 0.0)
}

fn worst_linear_gain_loss(x: usize, g: &[f64], prefs: &Preferences, space: &PolicySpace) -> f64 {
    space.allocation[x]
        .iter()
        .enumerate()
        .map(|(i, (lo, hi))| {
            let slope = prefs.framing_weight(i) * g[i];
            (slope * lo).min(slope * hi)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Ones,
    Phi0,
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioSolution {
    pub value: ValueFunction,
    pub policy: Policy,
    pub start: StartKind,
    pub iterations: usize,
    pub final_residual: f64,
    /// `sup |W Phi* - Phi*|`.
    pub bellman_residual: f64,
    /// Utility per wealth of the greedy policy, when its operator is well posed.
    pub greedy_value: Option<Vec<f64>>,
    /// `sup |F_greedy - Phi*|`.
    pub greedy_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub greedy_error: Option<String>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// Value iteration for the Bellman operator. Starts from `Phi = 1` when no
/// feasible allocation has a negative gain-loss term and from `seed_phi0`
/// otherwise, unless a start is given.
pub fn iterate_w(
    model: &MarketModel,
    prefs: &Preferences,
    space: &PolicySpace,
    start: Option<ValueFunction>,
    options: &IterationOptions,
) -> Result<PortfolioSolution> {
    space.check_against(model)?;
    space.require_positive_floor()?;
    let g = model.gain_loss(prefs);
    let (start_kind, phi) = match start {
        Some(v) => (StartKind::Provided, v),
        None if gain_loss_nonnegative(model, prefs, space) => (
            StartKind::Ones,
            ValueFunction::new(vec![1.0; model.n_states()]),
        ),
        None => (StartKind::Phi0, seed_phi0(model, prefs, space)),
    };
    let (values, iterations, final_residual, residuals) =
        iterate_to_fixed_point(phi.values, options, |v| {
            apply_w_with(&ValueFunction::new(v.to_vec()), &g, model, prefs, space)
                .map(|s| s.value.values)
        })?;
    let value = ValueFunction::new(values);
    let step = apply_w_with(&value, &g, model, prefs, space)?;
    let bellman_residual = sup_distance(&step.value.values, &value.values);
    let policy = step.policy;
    let greedy_options = IterationOptions {
        trace: false,
        ..*options
    };
    let (greedy_value, greedy_gap, greedy_error) =
        match policy_value(model, prefs, &policy, &greedy_options) {
            Ok(pv) => {
                let gap = sup_distance(&pv.value, &value.values);
                (Some(pv.value), Some(gap), None)
            }
            Err(e) => (None, None, Some(e.to_string())),
        };
    Ok(PortfolioSolution {
        value,
        policy,
        start: start_kind,
        iterations,
        final_residual,
        bellman_residual,
        greedy_value,
        greedy_gap,
        greedy_error,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Check {
    pub pass: bool,
    /// The attained extremum compared against the threshold.
    pub attained: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthBranch {
    /// Unit EIS: the growth condition always holds.
    UnitEis,
    /// `max (1 - c) CE(R_theta) < beta^(-1/(1-rho))`.
    RhoBelowOne,
    /// `min (1 - c) CE(R_theta) > beta^(-1/(1-rho))`.
    RhoAboveOne,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthVerification {
    pub branch: GrowthBranch,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegativeGainLossVerification {
    /// Some feasible allocation has a negative gain-loss term.
    pub present: bool,
    /// `H(i_min, 0) CE(R_theta) - (sum b theta g)^- > 0` at every corner.
    pub sufficient: Option<Check>,
    /// Corner-wise bound on the general condition, when requested.
    pub general: Option<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientConditionVerification {
    pub rho_at_least_one: bool,
    /// Every allocation box lies in `(0, a]` for some `a < 1`.
    pub allocation_bounded: bool,
    /// Some state admits an allocation with nonnegative gain-loss term.
    pub nonnegative_gain_loss_available: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    /// Smallest gross portfolio return over box corners and outcomes.
    pub min_portfolio_return: f64,
    pub returns_positive: bool,
    pub growth: GrowthVerification,
    pub negative_gain_loss: NegativeGainLossVerification,
    pub sufficient_condition: SufficientConditionVerification,
    pub warnings: Vec<String>,
    /// All checks needed by the solver passed.
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifyOptions {
    /// Also evaluate the general negative-gain-loss condition.
    pub general_negative_check: bool,
}

fn ce_return(x: usize, theta: &[f64], model: &MarketModel, prefs: &Preferences) -> Result<f64> {
    let mut terms = Vec::new();
    for o in model.outcomes(x) {
        terms.push((
            model.portfolio_return(x, o.next, o.atom, theta)?.ln(),
            o.prob,
        ));
    }
    Ok(prefs.ce_log(terms))
}

pub fn verify_feasibility(
    model: &MarketModel,
    prefs: &Preferences,
    space: &PolicySpace,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    space.check_against(model)?;
    let n = model.n_states();
    let g = model.gain_loss(prefs);
    let mut warnings = Vec::new();
    let vertices: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|x| {
            let (v, complete) = space.vertices(x);
            if !complete {
                warnings.push(format!(
                    "state {x}: {} assets exceed the corner enumeration cap, checked {} sampled corners",
                    space.n_assets(),
                    v.len()
                ));
            }
            v
        })
        .collect();

    let mut min_return = f64::INFINITY;
    for x in 0..n {
        for theta in &vertices[x] {
            for o in model.outcomes(x) {
                let r0 = model.risk_free(x);
                let r = r0
                    + theta
                        .iter()
                        .enumerate()
                        .map(|(i, t)| t * (model.risky_return(i, x, o.next, o.atom) - r0))
                        .sum::<f64>();
                min_return = min_return.min(r);
            }
        }
    }
    let returns_positive = min_return > 0.0;

    let threshold = if prefs.unit_eis() {
        f64::NAN
    } else {
        prefs.beta.powf(-1.0 / (1.0 - prefs.rho))
    };
    let growth = if prefs.unit_eis() {
        GrowthVerification {
            branch: GrowthBranch::UnitEis,
            pass: true,
            check: None,
        }
    } else if !returns_positive {
        GrowthVerification {
            branch: if prefs.rho < 1.0 {
                GrowthBranch::RhoBelowOne
            } else {
                GrowthBranch::RhoAboveOne
            },
            pass: false,
            check: None,
        }
    } else if prefs.rho < 1.0 {
        let mut attained = f64::NEG_INFINITY;
        for x in 0..n {
            let (_, best) = maximize_box(&space.allocation[x], |t| ce_return(x, t, model, prefs))?;
            attained = attained.max((1.0 - space.consumption[x].lo) * best);
        }
        GrowthVerification {
            branch: GrowthBranch::RhoBelowOne,
            pass: attained < threshold,
            check: Some(Check {
                pass: attained < threshold,
                attained,
                threshold,
            }),
        }
    } else {
        let mut attained = f64::INFINITY;
        for x in 0..n {
            for theta in &vertices[x] {
                let ce = ce_return(x, theta, model, prefs)?;
                attained = attained.min((1.0 - space.consumption[x].hi) * ce);
            }
        }
        GrowthVerification {
            branch: GrowthBranch::RhoAboveOne,
            pass: attained > threshold,
            check: Some(Check {
                pass: attained > threshold,
                attained,
                threshold,
            }),
        }
    };

    let present = (0..n).any(|x| worst_linear_gain_loss(x, &g[x], prefs, space) < 0.0);
    let negative_gain_loss = if !present {
        NegativeGainLossVerification {
            present,
            sufficient: None,
            general: None,
            pass: true,
        }
    } else if !returns_positive {
        NegativeGainLossVerification {
            present,
            sufficient: None,
            general: None,
            pass: false,
        }
    } else {
        let i_min = space
            .consumption
            .iter()
            .fold(f64::INFINITY, |m, iv| m.min(iv.lo));
        let i_max = space.consumption.iter().fold(0.0f64, |m, iv| m.max(iv.hi));
        let floor = prefs.h(i_min, 0.0);
        let mut attained = f64::INFINITY;
        for x in 0..n {
            for theta in &vertices[x] {
                let loss = (-linear_gain_loss(theta, &g[x], prefs)).max(0.0);
                attained = attained.min(floor * ce_return(x, theta, model, prefs)? - loss);
            }
        }
        let sufficient = Check {
            pass: attained > 0.0,
            attained,
            threshold: 0.0,
        };
        let general = if options.general_negative_check {
            // Least continuation factor any allocation can produce per state.
            let floor_next: Vec<f64> = (0..n)
                .map(|y| {
                    let worst = worst_linear_gain_loss(y, &g[y], prefs, space).max(0.0);
                    [i_min, i_max]
                        .iter()
                        .map(|&c| prefs.h(c, (1.0 - c) * worst))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let mut attained = f64::INFINITY;
            for x in 0..n {
                for theta in &vertices[x] {
                    let loss = (-linear_gain_loss(theta, &g[x], prefs)).max(0.0);
                    let mut terms = Vec::new();
                    for o in model.outcomes(x) {
                        let r = model.portfolio_return(x, o.next, o.atom, theta)?;
                        terms.push((r.ln() + floor_next[o.next].ln(), o.prob));
                    }
                    attained = attained.min(prefs.ce_log(terms) - loss);
                }
            }
            Some(Check {
                pass: attained > 0.0,
                attained,
                threshold: 0.0,
            })
        } else {
            None
        };
        let pass = sufficient.pass || general.is_some_and(|c| c.pass);
        NegativeGainLossVerification {
            present,
            sufficient: Some(sufficient),
            general,
            pass,
        }
    };

    let rho_at_least_one = prefs.unit_eis() || prefs.rho >= 1.0;
    let allocation_bounded = space
        .allocation
        .iter()
        .flatten()
        .all(|(lo, hi)| *lo > 0.0 && *hi < 1.0);
    let nonnegative_gain_loss_available = (0..n).any(|x| {
        let best: f64 = space.allocation[x]
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| {
                let slope = prefs.framing_weight(i) * g[x][i];
                (slope * lo).max(slope * hi)
            })
            .sum();
        best >= 0.0
    });
    let sufficient_condition = SufficientConditionVerification {
        rho_at_least_one,
        allocation_bounded,
        nonnegative_gain_loss_available,
        pass: rho_at_least_one || allocation_bounded || nonnegative_gain_loss_available,
    };

    let pass = returns_positive
        && growth.pass
        && (!present || (negative_gain_loss.pass && sufficient_condition.pass));
    Ok(VerificationReport {
        min_portfolio_return: min_return,
        returns_positive,
        growth,
        negative_gain_loss,
        sufficient_condition,
        warnings,
        pass,
    })
}

/// Assumption-3 status of a fixed policy, used by callers that solve a
/// single policy's utility.
pub fn policy_assumption3(
    model: &MarketModel,
    prefs: &Preferences,
    policy: &Policy,
    m_max: usize,
) -> Result<Assumption3Status> {
    let spec = policy_framing(model, prefs, policy)?;
    verify_assumption3(&spec, model, prefs, m_max)
}
