//! Command implementations behind the `recutil` binary. Each command
//! returns a JSON report, a short human-readable summary and an exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::Error;
use crate::example;
use crate::fixed_point::{
    analyze_singleton, growth_condition, iterate_t, verify_assumption3, FramingSpec,
    IterationOptions, SingletonRegime, UtilityFunction, DEFAULT_ASSUMPTION3_STEPS,
    DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};
use crate::model_file::{LoadedModel, ModelFile};
use crate::portfolio::{
    iterate_w, policy_framing, verify_feasibility, PolicySpace, ValueFunction, VerifyOptions,
};
use crate::preferences::Preferences;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_GATE: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum StartSpec {
    Ones,
    Phi0,
    F0,
    Vector(Vec<f64>),
}

impl std::str::FromStr for StartSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ones" => Ok(Self::Ones),
            "phi0" => Ok(Self::Phi0),
            "f0" => Ok(Self::F0),
            _ => s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Self::Vector)
                .map_err(|_| {
                    format!("start must be ones, phi0, f0 or comma-separated numbers, got {s:?}")
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: Option<StartSpec>,
    /// Skip the verification gate.
    pub force: bool,
    /// Write `iteration,residual` rows to this file.
    pub trace: Option<PathBuf>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            start: None,
            force: false,
            trace: None,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<(), Error> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::validation("--tol", "tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("--max-iter", "must be at least 1"));
        }
        Ok(())
    }

    fn options(&self) -> IterationOptions {
        IterationOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            trace: self.trace.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub report: Value,
    pub summary: String,
    pub exit_code: u8,
}

impl CommandOutput {
    fn new(report: Value, summary: String, exit_code: u8) -> Self {
        Self {
            report,
            summary,
            exit_code,
        }
    }

    fn failure(command: &str, error: &Error, exit_code: u8) -> Self {
        Self::new(
            json!({ "command": command, "status": "error", "error": error_json(error) }),
            format!("{command}: {error}"),
            exit_code,
        )
    }

    /// Pretty-printed report; identical inputs give identical bytes.
    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("reports serialize")
    }
}

pub fn error_json(e: &Error) -> Value {
    match e {
        Error::Validation { path, message } => {
            json!({ "kind": "validation", "path": path, "message": message })
        }
        Error::UndefinedOperator { states } => {
            json!({ "kind": "undefined_operator", "states": states, "message": e.to_string() })
        }
        Error::IterationLimit {
            iterations,
            residual,
            last,
            previous,
            residual_tail,
        } => json!({
            "kind": "iteration_limit",
            "iterations": iterations,
            "residual": residual,
            "last": last,
            "previous": previous,
            "residual_tail": residual_tail,
            "message": e.to_string(),
        }),
        Error::InfeasibleReturn { .. } => {
            json!({ "kind": "infeasible_return", "message": e.to_string() })
        }
        Error::SpectralFailure { .. } | Error::NumericalOverflow { .. } => {
            json!({ "kind": "spectral", "message": e.to_string() })
        }
        Error::Domain(_) => json!({ "kind": "domain", "message": e.to_string() }),
        Error::Model(_) => json!({ "kind": "model", "message": e.to_string() }),
    }
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Model(_) => EXIT_VALIDATION,
        _ => EXIT_SOLVER,
    }
}

fn write_trace(path: &Path, residuals: &[f64]) -> Result<(), Error> {
    let mut text = String::from("iteration,residual\n");
    for (i, r) in residuals.iter().enumerate() {
        let _ = writeln!(text, "{},{:e}", i + 1, r);
    }
    std::fs::write(path, text)
        .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))
}

fn load(path: &Path) -> Result<LoadedModel, Error> {
    ModelFile::read(path)?.load()
}

pub fn cmd_validate(path: &Path) -> CommandOutput {
    let doc = match ModelFile::read(path) {
        Ok(doc) => doc,
        Err(e) => return CommandOutput::failure("validate", &e, EXIT_VALIDATION),
    };
    let diagnostics = doc.diagnose();
    let valid = diagnostics.iter().all(|d| d.pass);
    let mut summary = String::new();
    for d in &diagnostics {
        let _ = write!(
            summary,
            "{:<20} {}",
            d.check,
            if d.pass { "pass" } else { "FAIL" }
        );
        if let (Some(p), Some(m)) = (&d.path, &d.message) {
            let _ = write!(summary, "  {p}: {m}");
        }
        summary.push('\n');
    }
    CommandOutput::new(
        json!({ "command": "validate", "valid": valid, "diagnostics": diagnostics }),
        summary,
        if valid { EXIT_OK } else { EXIT_VALIDATION },
    )
}

pub fn cmd_solve_utility(path: &Path, config: &SolveConfig) -> CommandOutput {
    const CMD: &str = "solve-utility";
    if let Err(e) = config.validate() {
        return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
    }
    let model = match load(path) {
        Ok(m) => m,
        Err(e) => return CommandOutput::failure(CMD, &e, EXIT_VALIDATION),
    };
    let prefs = &model.preferences;
    let spec = match (&model.policy, &model.framing) {
        (Some(policy), _) => match policy_framing(&model.market, prefs, policy) {
            Ok(s) => s,
            Err(e) => return CommandOutput::failure(CMD, &e, exit_for(&e)),
        },
        (None, Some(f)) => f.clone(),
        (None, None) => {
            let e = Error::validation("policy", "solve-utility needs a policy or a framing entry");
            return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
        }
    };
    solve_utility_spec(CMD, &model, &spec, config)
}

fn solve_utility_spec(
    cmd: &str,
    model: &LoadedModel,
    spec: &FramingSpec,
    config: &SolveConfig,
) -> CommandOutput {
    let prefs = &model.preferences;
    let market = &model.market;
    let (growth, spectral) = match growth_condition(spec, market, prefs) {
        Ok(g) => g,
        Err(e) => return CommandOutput::failure(cmd, &e, EXIT_SOLVER),
    };
    // A single state is a scalar map whose fixed points can be counted
    // outright; proven absence is a solver failure rather than a refusal.
    if market.n_states() == 1 && growth.pass && spec.has_negative_varpi() {
        if let Ok(census) = analyze_singleton(growth.delta, spec.varpi[0], prefs) {
            if census.regime == SingletonRegime::NoFixedPoint {
                let e = Error::Domain(format!(
                    "f -> H(1, {:.6} f + {:.6}) has no fixed point",
                    growth.delta, spec.varpi[0]
                ));
                let mut out = CommandOutput::failure(cmd, &e, EXIT_SOLVER);
                out.report["census"] = json!(census);
                return out;
            }
        }
    }
    let assumption3 = match verify_assumption3(spec, market, prefs, DEFAULT_ASSUMPTION3_STEPS) {
        Ok(s) => s,
        Err(e) => return CommandOutput::failure(cmd, &e, EXIT_SOLVER),
    };
    let gate = json!({
        "delta": growth.delta,
        "eta": spectral.eta,
        "growth_product": growth.product,
        "growth_pass": growth.pass,
        "assumption3": assumption3,
    });
    if !(growth.pass && assumption3.passes()) && !config.force {
        let summary = format!(
            "{cmd}: verification failed (growth {} = {:.6}, strict improvement {:?}); rerun with --force to solve anyway",
            if growth.pass { "pass" } else { "FAIL" },
            growth.product,
            assumption3
        );
        return CommandOutput::new(
            json!({ "command": cmd, "status": "refused", "verification": gate }),
            summary,
            EXIT_GATE,
        );
    }
    let n = market.n_states();
    let start = match &config.start {
        None => spec.default_start(prefs),
        Some(StartSpec::Ones) => UtilityFunction::constant(n, 1.0),
        Some(StartSpec::F0) => spec.anchor(prefs),
        Some(StartSpec::Vector(v)) => UtilityFunction::new(v.clone()),
        Some(StartSpec::Phi0) => {
            let e = Error::validation("--start", "phi0 applies to solve-portfolio only");
            return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
        }
    };
    if start.values.len() != n {
        let e = Error::validation("--start", format!("expected {n} values"));
        return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
    }
    let report = match iterate_t(&start, spec, market, prefs, &config.options()) {
        Ok(r) => r,
        Err(e) => {
            let mut out = CommandOutput::failure(cmd, &e, EXIT_SOLVER);
            out.report["verification"] = gate;
            return out;
        }
    };
    if let Some(path) = &config.trace {
        if let Err(e) = write_trace(path, &report.residuals) {
            return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
        }
    }
    let per_wealth = model.policy.as_ref().map(|p| {
        report
            .fixed_point
            .values
            .iter()
            .zip(&p.c)
            .map(|(f, c)| f * c)
            .collect::<Vec<_>>()
    });
    let mut summary = format!(
        "delta {:.6}, beta*delta^(1-rho) {:.6}, {} iterations, residual {:.3e}\nf = {:?}",
        growth.delta,
        growth.product,
        report.iterations,
        report.final_residual,
        report.fixed_point.values
    );
    if let Some(v) = &per_wealth {
        let _ = write!(summary, "\nF = {v:?}");
    }
    CommandOutput::new(
        json!({
            "command": cmd,
            "status": "solved",
            "verification": gate,
            "forced": config.force && !(growth.pass && assumption3.passes()),
            "iterations": report.iterations,
            "residual": report.final_residual,
            "f": report.fixed_point.values,
            "utility_per_wealth": per_wealth,
        }),
        summary,
        EXIT_OK,
    )
}

pub fn cmd_verify(path: &Path, general: bool) -> CommandOutput {
    const CMD: &str = "verify";
    let model = match load(path) {
        Ok(m) => m,
        Err(e) => return CommandOutput::failure(CMD, &e, EXIT_VALIDATION),
    };
    let prefs = &model.preferences;
    let mut report = json!({ "command": CMD });
    let mut pass = true;
    let mut summary = String::new();
    if let Some(space) = &model.policy_space {
        match verify_feasibility(
            &model.market,
            prefs,
            space,
            &VerifyOptions {
                general_negative_check: general,
            },
        ) {
            Ok(v) => {
                pass &= v.pass;
                summary.push_str(&verification_summary(&v));
                report["portfolio"] = json!(v);
            }
            Err(e) => return CommandOutput::failure(CMD, &e, exit_for(&e)),
        }
    }
    let spec = match (&model.policy, &model.framing) {
        (Some(p), _) => Some(policy_framing(&model.market, prefs, p)),
        (None, Some(f)) => Some(Ok(f.clone())),
        _ => None,
    };
    if let Some(spec) = spec {
        let checked = spec.and_then(|s| {
            let (g, _) = growth_condition(&s, &model.market, prefs)?;
            let a3 = verify_assumption3(&s, &model.market, prefs, DEFAULT_ASSUMPTION3_STEPS)?;
            Ok((g, a3))
        });
        match checked {
            Ok((g, a3)) => {
                pass &= g.pass && a3.passes();
                let _ = writeln!(
                    summary,
                    "utility growth {:.6} {}, strict improvement {:?}",
                    g.product,
                    if g.pass { "pass" } else { "FAIL" },
                    a3
                );
                report["utility"] = json!({ "growth": g, "assumption3": a3 });
            }
            Err(e) => return CommandOutput::failure(CMD, &e, exit_for(&e)),
        }
    }
    if model.policy_space.is_none() && report.get("utility").is_none() {
        let e = Error::validation(
            "policy_space",
            "nothing to verify: give a policy space, policy or framing",
        );
        return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
    }
    report["pass"] = json!(pass);
    CommandOutput::new(report, summary, if pass { EXIT_OK } else { EXIT_GATE })
}

fn verification_summary(v: &crate::portfolio::VerificationReport) -> String {
    let mark = |b: bool| if b { "pass" } else { "FAIL" };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "returns positive      {} (min {:.6})",
        mark(v.returns_positive),
        v.min_portfolio_return
    );
    let _ = write!(
        s,
        "growth                {} ({:?}",
        mark(v.growth.pass),
        v.growth.branch
    );
    if let Some(c) = v.growth.check {
        let _ = write!(s, ": {:.6} vs {:.6}", c.attained, c.threshold);
    }
    s.push_str(")\n");
    let n = &v.negative_gain_loss;
    if n.present {
        let _ = write!(s, "negative gain-loss    {}", mark(n.pass));
        if let Some(c) = n.sufficient {
            let _ = write!(s, " (corner bound {:.3e})", c.attained);
        }
        if let Some(c) = n.general {
            let _ = write!(s, " (general bound {:.3e})", c.attained);
        }
        s.push('\n');
    } else {
        s.push_str("negative gain-loss    none possible\n");
    }
    let _ = writeln!(
        s,
        "sufficient condition  {}",
        mark(v.sufficient_condition.pass)
    );
    for w in &v.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn cmd_solve_portfolio(path: &Path, config: &SolveConfig) -> CommandOutput {
    const CMD: &str = "solve-portfolio";
    if let Err(e) = config.validate() {
        return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
    }
    let model = match load(path) {
        Ok(m) => m,
        Err(e) => return CommandOutput::failure(CMD, &e, EXIT_VALIDATION),
    };
    let Some(space) = model.policy_space.clone() else {
        let e = Error::validation("policy_space", "solve-portfolio needs a policy space");
        return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
    };
    solve_portfolio_model(CMD, &model, &space, config)
}

fn solve_portfolio_model(
    cmd: &str,
    model: &LoadedModel,
    space: &PolicySpace,
    config: &SolveConfig,
) -> CommandOutput {
    let prefs = &model.preferences;
    let market = &model.market;
    if let Err(e) = space.require_positive_floor() {
        return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
    }
    let verification = match verify_feasibility(market, prefs, space, &VerifyOptions::default()) {
        Ok(v) => v,
        Err(e) => return CommandOutput::failure(cmd, &e, exit_for(&e)),
    };
    if !verification.pass && !config.force {
        return CommandOutput::new(
            json!({ "command": cmd, "status": "refused", "verification": verification }),
            format!(
                "{}{cmd}: verification failed; rerun with --force to solve anyway",
                verification_summary(&verification)
            ),
            EXIT_GATE,
        );
    }
    let n = market.n_states();
    let start = match &config.start {
        None => None,
        Some(StartSpec::Ones) => Some(ValueFunction::new(vec![1.0; n])),
        Some(StartSpec::Phi0) => Some(crate::portfolio::seed_phi0(market, prefs, space)),
        Some(StartSpec::Vector(v)) if v.len() == n => Some(ValueFunction::new(v.clone())),
        Some(StartSpec::Vector(_)) => {
            let e = Error::validation("--start", format!("expected {n} values"));
            return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
        }
        Some(StartSpec::F0) => {
            let e = Error::validation("--start", "f0 applies to solve-utility only");
            return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
        }
    };
    let solution = match iterate_w(market, prefs, space, start, &config.options()) {
        Ok(s) => s,
        Err(e) => {
            let mut out = CommandOutput::failure(cmd, &e, EXIT_SOLVER);
            out.report["verification"] = json!(verification);
            return out;
        }
    };
    if let Some(path) = &config.trace {
        if let Err(e) = write_trace(path, &solution.residuals) {
            return CommandOutput::failure(cmd, &e, EXIT_VALIDATION);
        }
    }
    let mut summary = verification_summary(&verification);
    let _ = writeln!(
        summary,
        "{} iterations, residual {:.3e}",
        solution.iterations, solution.final_residual
    );
    for x in 0..n {
        let _ = writeln!(
            summary,
            "state {x}: c = {}, theta = [{}], Phi = {:.6}",
            percent(solution.policy.c[x]),
            solution.policy.theta[x]
                .iter()
                .map(|t| percent(*t))
                .collect::<Vec<_>>()
                .join(", "),
            solution.value.values[x]
        );
    }
    CommandOutput::new(
        json!({
            "command": cmd,
            "status": "solved",
            "forced": config.force && !verification.pass,
            "verification": verification,
            "solution": solution,
        }),
        summary,
        EXIT_OK,
    )
}

fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Comparison {
    computed: f64,
    reported: f64,
    tolerance: f64,
}

impl Comparison {
    fn pass(&self) -> bool {
        (self.computed - self.reported).abs() <= self.tolerance
    }

    fn to_json(self) -> Value {
        json!({
            "computed": self.computed,
            "reported": self.reported,
            "tolerance": self.tolerance,
            "pass": self.pass(),
        })
    }
}

/// Builds the embedded reference market, solves it and compares against
/// the published figures. The solve always runs; the verification outcome
/// is reported alongside.
pub fn cmd_reproduce_example(config: &SolveConfig) -> CommandOutput {
    const CMD: &str = "reproduce-paper-example";
    if let Err(e) = config.validate() {
        return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
    }
    let market = example::market_model();
    let prefs = example::preferences();
    let space = example::policy_space();
    let gain_loss = market.gain_loss(&prefs);
    let moments = market.stationary_return_moments(0);

    let mut checks: Vec<(String, Comparison)> = Vec::new();
    for x in 0..2 {
        checks.push((
            format!("gain_loss[{x}]"),
            Comparison {
                computed: gain_loss[x][0],
                reported: example::reported::GAIN_LOSS[x],
                tolerance: 1e-4,
            },
        ));
    }
    checks.push((
        "mean_return".into(),
        Comparison {
            computed: moments.mean - 1.0,
            reported: example::reported::MEAN_RETURN,
            tolerance: 0.005,
        },
    ));
    checks.push((
        "return_std_dev".into(),
        Comparison {
            computed: moments.std_dev,
            reported: example::reported::STD_DEV,
            tolerance: 0.005,
        },
    ));
    checks.push((
        "equity_premium".into(),
        Comparison {
            computed: moments.premium,
            reported: example::reported::EQUITY_PREMIUM,
            tolerance: 0.005,
        },
    ));

    let verification = match verify_feasibility(&market, &prefs, &space, &VerifyOptions::default())
    {
        Ok(v) => v,
        Err(e) => return CommandOutput::failure(CMD, &e, EXIT_SOLVER),
    };
    let solution = match iterate_w(&market, &prefs, &space, None, &config.options()) {
        Ok(s) => s,
        Err(e) => return CommandOutput::failure(CMD, &e, EXIT_SOLVER),
    };
    if let Some(path) = &config.trace {
        if let Err(e) = write_trace(path, &solution.residuals) {
            return CommandOutput::failure(CMD, &e, EXIT_VALIDATION);
        }
    }
    for x in 0..2 {
        checks.push((
            format!("consumption[{x}]"),
            Comparison {
                computed: solution.policy.c[x],
                reported: example::reported::CONSUMPTION[x],
                tolerance: 5e-4,
            },
        ));
        checks.push((
            format!("allocation[{x}]"),
            Comparison {
                computed: solution.policy.theta[x][0],
                reported: example::reported::ALLOCATION[x],
                tolerance: 5e-3,
            },
        ));
        checks.push((
            format!("value[{x}]"),
            Comparison {
                computed: solution.value.values[x],
                reported: example::reported::VALUE[x],
                tolerance: 5e-4,
            },
        ));
    }
    let corner = solution.policy.theta[0][0] == space.allocation[0][0].1;
    let all_pass = checks.iter().all(|(_, c)| c.pass()) && corner;

    let mut comparisons = serde_json::Map::new();
    let mut summary = String::from("quantity            computed    reported    status\n");
    for (name, c) in &checks {
        comparisons.insert(name.clone(), c.to_json());
        let _ = writeln!(
            summary,
            "{name:<18} {:>10.5} {:>10.5}    {}",
            c.computed,
            c.reported,
            if c.pass() { "pass" } else { "FAIL" }
        );
    }
    let _ = writeln!(
        summary,
        "stock weight in state 0 at its upper bound: {}",
        if corner { "yes" } else { "NO" }
    );
    summary.push_str(&verification_summary(&verification));
    let _ = write!(
        summary,
        "c* = ({}, {}), theta* = ({}, {}), Phi = ({:.4}, {:.4})",
        percent(solution.policy.c[0]),
        percent(solution.policy.c[1]),
        percent(solution.policy.theta[0][0]),
        percent(solution.policy.theta[1][0]),
        solution.value.values[0],
        solution.value.values[1]
    );
    CommandOutput::new(
        json!({
            "command": CMD,
            "gain_loss": gain_loss.iter().map(|g| g[0]).collect::<Vec<_>>(),
            "calibration": moments,
            "verification": verification,
            "solution": solution,
            "comparisons": comparisons,
            "allocation_at_upper_bound": corner,
            "pass": all_pass,
        }),
        summary,
        if all_pass { EXIT_OK } else { EXIT_SOLVER },
    )
}

pub fn cmd_analyze_singleton(
    beta: f64,
    rho: f64,
    gamma: f64,
    delta: f64,
    varpi: f64,
) -> CommandOutput {
    const CMD: &str = "analyze-singleton";
    let prefs = match Preferences::recursive(beta, rho, gamma) {
        Ok(p) => p,
        Err(e) => return CommandOutput::failure(CMD, &e, EXIT_VALIDATION),
    };
    match analyze_singleton(delta, varpi, &prefs) {
        Ok(census) => CommandOutput::new(
            json!({ "command": CMD, "census": census }),
            format!("{:?}: roots {:?}", census.regime, census.roots),
            EXIT_OK,
        ),
        Err(e) => CommandOutput::failure(CMD, &e, EXIT_VALIDATION),
    }
}
