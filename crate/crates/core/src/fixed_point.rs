//! The utility-per-consumption operator
//! `T f(x) = H(1, CE_x(e^kappa f(X')) + varpi(x))`, its iteration to the
//! unique positive fixed point, the growth condition `beta delta^(1-rho) < 1`,
//! the check that the iteration from `f0 = H(1, varpi+)` strictly improves
//! when `varpi` can be negative, and a census of fixed points for the
//! single-state case.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::preferences::Preferences;
use crate::spectral::{growth_rate, SpectralResult};

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;
pub const DEFAULT_ASSUMPTION3_STEPS: usize = 1000;
/// Margin for certifying `T^m f0 > f0` in floating point.
pub const STRICTNESS_MARGIN: f64 = 1e-12;
const RESIDUAL_TAIL: usize = 10;

/// Log consumption growth `kappa(x, x', atom)`, tabulated per outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Kappa {
    table: Vec<Vec<Vec<f64>>>,
}

impl Kappa {
    pub fn from_fn<F>(model: &MarketModel, f: F) -> Self
    where
        F: Fn(usize, usize, usize, f64) -> f64,
    {
        let n = model.n_states();
        let table = (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        model
                            .noise()
                            .atoms(x, y)
                            .iter()
                            .enumerate()
                            .map(|(j, (v, _))| f(x, y, j, *v))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { table }
    }

    pub fn constant(model: &MarketModel, value: f64) -> Self {
        Self::from_fn(model, |_, _, _, _| value)
    }

    /// Table indexed `[x][x'][atom]`; dimensions must match the noise atoms.
    pub fn from_table(model: &MarketModel, table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = model.n_states();
        if table.len() != n || table.iter().any(|r| r.len() != n) {
            return Err(Error::validation(
                "kappa",
                format!("expected {n}x{n} transitions"),
            ));
        }
        for x in 0..n {
            for y in 0..n {
                let want = model.noise().atoms(x, y).len();
                if table[x][y].len() != want {
                    return Err(Error::validation(
                        format!("kappa[{x}][{y}]"),
                        format!("expected {want} atoms"),
                    ));
                }
                if let Some(j) = table[x][y].iter().position(|k| !k.is_finite()) {
                    return Err(Error::validation(
                        format!("kappa[{x}][{y}][{j}]"),
                        "must be finite",
                    ));
                }
            }
        }
        Ok(Self { table })
    }

    pub fn get(&self, x: usize, next: usize, atom: usize) -> f64 {
        self.table[x][next][atom]
    }
}

/// Consumption growth and per-consumption gain-loss utility.
#[derive(Debug, Clone, PartialEq)]
pub struct FramingSpec {
    pub kappa: Kappa,
    pub varpi: Vec<f64>,
}

impl FramingSpec {
    pub fn new(kappa: Kappa, varpi: Vec<f64>) -> Result<Self> {
        if kappa.table.len() != varpi.len() {
            return Err(Error::validation(
                "varpi",
                format!("expected {} entries", kappa.table.len()),
            ));
        }
        if let Some(x) = varpi.iter().position(|w| !w.is_finite()) {
            return Err(Error::validation(format!("varpi[{x}]"), "must be finite"));
        }
        Ok(Self { kappa, varpi })
    }

    pub fn has_negative_varpi(&self) -> bool {
        self.varpi.iter().any(|w| *w < 0.0)
    }

    /// `f0(x) = H(1, varpi+(x))`.
    pub fn anchor(&self, prefs: &Preferences) -> UtilityFunction {
        UtilityFunction::new(
            self.varpi
                .iter()
                .map(|w| prefs.h(1.0, w.max(0.0)))
                .collect(),
        )
    }

    /// Start used by the solvers: `f = 1` for nonnegative `varpi`,
    /// otherwise the anchor `f0`.
    pub fn default_start(&self, prefs: &Preferences) -> UtilityFunction {
        if self.has_negative_varpi() {
            self.anchor(prefs)
        } else {
            UtilityFunction::new(vec![1.0; self.varpi.len()])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct UtilityFunction {
    pub values: Vec<f64>,
}

impl UtilityFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self::new(vec![value; n])
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|v| *v > 0.0)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        sup_distance(&self.values, &other.values)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// One application of the operator. Fails with the list of states where
/// the certainty equivalent plus `varpi` is negative.
pub fn apply_t(
    f: &UtilityFunction,
    spec: &FramingSpec,
    model: &MarketModel,
    prefs: &Preferences,
) -> Result<UtilityFunction> {
    let n = model.n_states();
    if f.values.len() != n {
        return Err(Error::validation(
            "f",
            format!("expected {n} values, found {}", f.values.len()),
        ));
    }
    if let Some(x) = f.values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!(
            "utility value {} at state {x} must be finite and nonnegative",
            f.values[x]
        )));
    }
    let log_f: Vec<f64> = f.values.iter().map(|v| v.ln()).collect();
    let mut out = Vec::with_capacity(n);
    let mut undefined = Vec::new();
    for x in 0..n {
        let ce = prefs.ce_log(
            model
                .outcomes(x)
                .map(|o| (spec.kappa.get(x, o.next, o.atom) + log_f[o.next], o.prob)),
        );
        let z = ce + spec.varpi[x];
        if z < 0.0 {
            undefined.push(x);
            out.push(f64::NAN);
        } else {
            out.push(prefs.h(1.0, z));
        }
    }
    if undefined.is_empty() {
        Ok(UtilityFunction::new(out))
    } else {
        Err(Error::UndefinedOperator { states: undefined })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCheck {
    pub delta: f64,
    /// `beta * delta^(1 - rho)`; equal to `beta` at unit EIS.
    pub product: f64,
    pub pass: bool,
}

impl GrowthCheck {
    pub fn from_delta(delta: f64, prefs: &Preferences) -> Self {
        let product = if prefs.unit_eis() {
            prefs.beta
        } else {
            prefs.beta * delta.powf(1.0 - prefs.rho)
        };
        Self {
            delta,
            product,
            pass: product < 1.0,
        }
    }
}

pub fn growth_condition(
    spec: &FramingSpec,
    model: &MarketModel,
    prefs: &Preferences,
) -> Result<(GrowthCheck, SpectralResult)> {
    let spectral = growth_rate(model, &spec.kappa, prefs)?;
    Ok((GrowthCheck::from_delta(spectral.delta, prefs), spectral))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Keep the full residual history in the report.
    pub trace: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub fixed_point: UtilityFunction,
    pub iterations: usize,
    pub final_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_check: Option<GrowthCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumption3: Option<Assumption3Status>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

/// Generic fixed-point loop shared by the utility and Bellman iterations.
/// Stops when `sup |x_{n+1} - x_n| <= tol * max(1, sup |x_{n+1}|)`.
pub(crate) fn iterate_to_fixed_point<F>(
    start: Vec<f64>,
    options: &IterationOptions,
    mut step: F,
) -> Result<(Vec<f64>, usize, f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut current = start;
    let mut previous = current.clone();
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    for iteration in 1..=options.max_iterations {
        let next = step(&current)?;
        residual = sup_distance(&next, &current);
        if options.trace || history.len() < RESIDUAL_TAIL {
            history.push(residual);
        } else {
            history.remove(0);
            history.push(residual);
        }
        previous = std::mem::replace(&mut current, next);
        if residual <= options.tolerance * sup_norm(&current).max(1.0) {
            return Ok((current, iteration, residual, history));
        }
    }
    let tail_start = history.len().saturating_sub(RESIDUAL_TAIL);
    Err(Error::IterationLimit {
        iterations: options.max_iterations,
        residual,
        last: current,
        previous,
        residual_tail: history[tail_start..].to_vec(),
    })
}

/// Repeats `apply_t` from `start` until the sup-norm residual is within
/// tolerance.
pub fn iterate_t(
    start: &UtilityFunction,
    spec: &FramingSpec,
    model: &MarketModel,
    prefs: &Preferences,
    options: &IterationOptions,
) -> Result<IterationReport> {
    let (values, iterations, residual, residuals) =
        iterate_to_fixed_point(start.values.clone(), options, |f| {
            apply_t(&UtilityFunction::new(f.to_vec()), spec, model, prefs).map(|u| u.values)
        })?;
    Ok(IterationReport {
        fixed_point: UtilityFunction::new(values),
        iterations,
        final_residual: residual,
        growth_check: None,
        assumption3: None,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Assumption3Status {
    /// `varpi >= 0` everywhere; the condition is not needed.
    NotApplicable,
    Satisfied {
        /// Smallest `m` with `T^m f0 > f0` at every state, when found.
        m: Option<usize>,
        /// Accepted through the single-state improvement criterion, valid
        /// when `gamma < 1` or `f0` is strictly positive.
        via_shortcut: bool,
    },
    /// `T f0` is not defined at the listed states.
    Undefined { states: Vec<usize> },
    /// No strict improvement found within `m_max` steps; inconclusive.
    NoStrictImprovement { m_max: usize },
}

impl Assumption3Status {
    pub fn passes(&self) -> bool {
        matches!(self, Self::NotApplicable | Self::Satisfied { .. })
    }
}

pub fn verify_assumption3(
    spec: &FramingSpec,
    model: &MarketModel,
    prefs: &Preferences,
    m_max: usize,
) -> Result<Assumption3Status> {
    if !spec.has_negative_varpi() {
        return Ok(Assumption3Status::NotApplicable);
    }
    let f0 = spec.anchor(prefs);
    let strictly_above =
        |g: &UtilityFunction, x: usize| g.values[x] > f0.values[x] + STRICTNESS_MARGIN;
    let mut iterate = match apply_t(&f0, spec, model, prefs) {
        Ok(g) => g,
        Err(Error::UndefinedOperator { states }) => {
            return Ok(Assumption3Status::Undefined { states })
        }
        Err(e) => return Err(e),
    };
    let shortcut_applies =
        (!prefs.unit_risk_aversion() && prefs.gamma < 1.0) || f0.is_strictly_positive();
    let shortcut = shortcut_applies && (0..f0.values.len()).any(|x| strictly_above(&iterate, x));
    for m in 1..=m_max {
        if (0..f0.values.len()).all(|x| strictly_above(&iterate, x)) {
            return Ok(Assumption3Status::Satisfied {
                m: Some(m),
                via_shortcut: false,
            });
        }
        if m == m_max {
            break;
        }
        let next = apply_t(&iterate, spec, model, prefs)?;
        let stalled = next.sup_distance(&iterate) <= f64::EPSILON * sup_norm(&next.values);
        iterate = next;
        if stalled {
            break;
        }
    }
    if shortcut {
        Ok(Assumption3Status::Satisfied {
            m: None,
            via_shortcut: true,
        })
    } else {
        Ok(Assumption3Status::NoStrictImprovement { m_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonRegime {
    NoFixedPoint,
    UniqueFixedPoint,
    TwoFixedPoints,
    /// The identity line touches `T` at a single point.
    Tangent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingletonCensus {
    /// Left end `max(-varpi/delta, 0)` of the domain of `T`.
    pub domain_lower: f64,
    pub roots: Vec<f64>,
    pub regime: SingletonRegime,
}

impl SingletonCensus {
    pub fn positive_roots(&self) -> Vec<f64> {
        self.roots.iter().copied().filter(|r| *r > 0.0).collect()
    }
}

/// Fixed points of the scalar map `T(f) = H(1, delta f + varpi)` for a
/// single-state chain. `T` is increasing and concave, so `T(f) - f` is
/// concave: its maximizer splits the domain into an increasing and a
/// decreasing branch with at most one root each.
pub fn analyze_singleton(delta: f64, varpi: f64, prefs: &Preferences) -> Result<SingletonCensus> {
    if !(delta > 0.0 && delta.is_finite()) || !varpi.is_finite() {
        return Err(Error::Domain(format!(
            "delta {delta} must be positive and varpi {varpi} finite"
        )));
    }
    let growth = GrowthCheck::from_delta(delta, prefs);
    if !growth.pass {
        return Err(Error::Domain(format!(
            "growth condition fails: beta delta^(1-rho) = {}",
            growth.product
        )));
    }
    let lower = (-varpi / delta).max(0.0);
    let t = |f: f64| prefs.h(1.0, (delta * f + varpi).max(0.0));
    let gap = |f: f64| t(f) - f;

    let upper = if !prefs.unit_eis() && prefs.rho > 1.0 {
        let cap = (1.0 - prefs.beta).powf(1.0 / (1.0 - prefs.rho));
        2.0 * lower.max(cap) + 1.0
    } else {
        let mut u = (2.0 * lower).max(1.0);
        let mut found = false;
        for _ in 0..2000 {
            if gap(u) < 0.0 && gap(u) < gap(0.5 * (u + lower)) {
                found = true;
                break;
            }
            u *= 2.0;
        }
        if !found {
            return Err(Error::Domain("could not bracket the fixed points".into()));
        }
        u
    };

    let peak = golden_max(gap, lower, upper, 1e-13 * upper.max(1.0));
    let peak_gap = gap(peak);
    let scale = peak.max(1.0);
    let mut roots = Vec::new();
    let tangent = peak_gap.abs() <= 1e-12 * scale;
    let lower_gap = gap(lower);
    if lower_gap == 0.0 {
        roots.push(lower);
    } else if lower_gap < 0.0 && peak_gap > 0.0 && !tangent {
        roots.push(bisect(gap, lower, peak));
    }
    if tangent && roots.is_empty() {
        roots.push(peak);
        return Ok(SingletonCensus {
            domain_lower: lower,
            roots,
            regime: SingletonRegime::Tangent,
        });
    }
    if peak_gap > 0.0 && !tangent {
        roots.push(bisect(gap, peak, upper));
    }
    let regime = match roots.len() {
        0 => SingletonRegime::NoFixedPoint,
        1 => SingletonRegime::UniqueFixedPoint,
        _ => SingletonRegime::TwoFixedPoints,
    };
    Ok(SingletonCensus {
        domain_lower: lower,
        roots,
        regime,
    })
}

/// Maximizer of a concave function on `[lo, hi]` by golden-section search.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, width: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = hi - INV_PHI * (hi - lo);
    let mut b = lo + INV_PHI * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > width {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + INV_PHI * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - INV_PHI * (hi - lo);
            fa = f(a);
        }
        if a >= b {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Root of `f` on `[a, b]` given a sign change, bisected to adjacent floats.
fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let fa_neg = f(a) < 0.0;
    for _ in 0..2000 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == fa_neg {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Closed-form fixed point of the single-state map with `varpi = 0`.
pub fn singleton_closed_form(delta: f64, prefs: &Preferences) -> f64 {
    if prefs.unit_eis() {
        delta.powf(prefs.beta / (1.0 - prefs.beta))
    } else {
        let a = 1.0 - prefs.rho;
        ((1.0 - prefs.beta) / (1.0 - prefs.beta * delta.powf(a))).powf(1.0 / a)
    }
}
