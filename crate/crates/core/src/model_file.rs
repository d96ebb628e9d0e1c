//! JSON model documents: parsing, structural diagnostics and conversion to
//! the solver types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{FramingSpec, Kappa};
use crate::market::{
    is_irreducible, MarketModel, MarkovChain, NoiseAtoms, ReturnModel, RiskyAsset,
};
use crate::portfolio::{Policy, PolicySpace};
use crate::preferences::{Preferences, PROBABILITY_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    pub transition: Vec<Vec<f64>>,
    pub noise: NoiseSpec,
    pub returns: ReturnsSpec,
    pub preferences: Preferences,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_space: Option<PolicySpace>,
    /// Fixed policy evaluated by `solve-utility`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    /// Raw `(kappa, varpi)` evaluated by `solve-utility` when no policy is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing: Option<FramingFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `[value, probability]` pairs used for every transition.
    SharedAtoms(Vec<(f64, f64)>),
    /// `[x][x'] -> [[value, probability], ...]`.
    PerTransition(Vec<Vec<Vec<(f64, f64)>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnsSpec {
    pub risk_free: Vec<f64>,
    #[serde(default)]
    pub assets: Vec<AssetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_dividend: Option<PriceDividend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceDividend {
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramingFile {
    pub kappa: Vec<Vec<Vec<f64>>>,
    pub varpi: Vec<f64>,
}

/// A model document converted to solver types.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub market: MarketModel,
    pub preferences: Preferences,
    pub policy_space: Option<PolicySpace>,
    pub policy: Option<Policy>,
    pub framing: Option<FramingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub check: &'static str,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Diagnostic {
    fn pass(check: &'static str) -> Self {
        Self {
            check,
            pass: true,
            path: None,
            message: None,
        }
    }

    fn fail(check: &'static str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            check,
            pass: false,
            path: Some(path.into()),
            message: Some(message.into()),
        }
    }

    fn from_result(check: &'static str, result: Result<()>) -> Self {
        match result {
            Ok(()) => Self::pass(check),
            Err(Error::Validation { path, message }) => Self::fail(check, path, message),
            Err(e) => Self::fail(check, check, e.to_string()),
        }
    }
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::validation(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents serialize")
    }

    fn n_states(&self) -> usize {
        self.transition.len()
    }

    fn noise_atoms(&self) -> Result<NoiseAtoms> {
        let n = self.n_states();
        match &self.noise {
            NoiseSpec::SharedAtoms(atoms) => NoiseAtoms::shared(n, atoms.clone()),
            NoiseSpec::PerTransition(table) => {
                if table.len() != n || table.iter().any(|r| r.len() != n) {
                    return Err(Error::validation(
                        "noise.per_transition",
                        format!("expected {n}x{n} transitions"),
                    ));
                }
                NoiseAtoms::per_transition(table.clone())
                    .map_err(|e| prefix_path(e, "noise.per_transition"))
            }
        }
    }

    fn assets(&self, noise: &NoiseAtoms) -> Result<Vec<RiskyAsset>> {
        let n = self.n_states();
        self.returns
            .assets
            .iter()
            .enumerate()
            .map(|(i, a)| match (&a.table, &a.price_dividend) {
                (Some(table), None) => Ok(RiskyAsset {
                    name: a.name.clone(),
                    returns: table.clone(),
                }),
                (None, Some(pd)) => {
                    let path = format!("returns.assets[{i}].price_dividend.phi");
                    if pd.phi.len() != n {
                        return Err(Error::validation(path, format!("expected {n} entries")));
                    }
                    if let Some(x) = pd.phi.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
                        return Err(Error::validation(
                            format!("{path}[{x}]"),
                            "price-dividend ratio must be positive",
                        ));
                    }
                    Ok(RiskyAsset::from_price_dividend(
                        a.name.clone(),
                        &pd.phi,
                        noise,
                    ))
                }
                _ => Err(Error::validation(
                    format!("returns.assets[{i}]"),
                    "give exactly one of table or price_dividend",
                )),
            })
            .collect()
    }

    /// Structural checks, each reported separately.
    pub fn diagnose(&self) -> Vec<Diagnostic> {
        let n = self.n_states();
        let mut out = Vec::new();
        if let Some(s) = self.states {
            out.push(if s == n {
                Diagnostic::pass("states")
            } else {
                Diagnostic::fail(
                    "states",
                    "states",
                    format!("declared {s}, transition has {n} rows"),
                )
            });
        }
        let mut stochastic = Vec::new();
        for (x, row) in self.transition.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.len() != n {
                stochastic.push(Diagnostic::fail(
                    "stochastic",
                    format!("transition[{x}]"),
                    format!("row has {} entries, expected {n}", row.len()),
                ));
            } else if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                stochastic.push(Diagnostic::fail(
                    "stochastic",
                    format!("transition[{x}]"),
                    "entries must be finite and nonnegative",
                ));
            } else if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                stochastic.push(Diagnostic::fail(
                    "stochastic",
                    format!("transition[{x}]"),
                    format!("row sums to {total}, not 1"),
                ));
            }
        }
        let square = n > 0 && self.transition.iter().all(|r| r.len() == n);
        if stochastic.is_empty() {
            out.push(if n == 0 {
                Diagnostic::fail("stochastic", "transition", "chain has no states")
            } else {
                Diagnostic::pass("stochastic")
            });
        } else {
            out.extend(stochastic);
        }
        if square {
            out.push(if is_irreducible(&self.transition) {
                Diagnostic::pass("irreducible")
            } else {
                Diagnostic::fail(
                    "irreducible",
                    "transition",
                    "some state cannot reach another",
                )
            });
        }
        let noise = self.noise_atoms();
        out.push(Diagnostic::from_result(
            "atom_probabilities",
            noise.as_ref().map(|_| ()).map_err(Clone::clone),
        ));
        if let Ok(noise) = &noise {
            let returns = self.assets(noise).and_then(|assets| {
                let chain = MarkovChain::new(self.transition.clone())?;
                MarketModel::new(
                    chain,
                    noise.clone(),
                    ReturnModel {
                        risk_free: self.returns.risk_free.clone(),
                        assets,
                    },
                )
                .map(|_| ())
            });
            if square && stochastic_ok(&out) && is_irreducible(&self.transition) {
                out.push(Diagnostic::from_result("positive_returns", returns));
            }
        }
        out.push(Diagnostic::from_result(
            "preferences",
            self.preferences
                .validate()
                .map_err(|e| prefix_path(e, "preferences")),
        ));
        if let Some(space) = &self.policy_space {
            out.push(Diagnostic::from_result(
                "policy_space",
                space.validate().and_then(|_| {
                    if space.n_states() != n {
                        Err(Error::validation(
                            "policy_space",
                            format!("expected {n} states"),
                        ))
                    } else if space.n_assets() != self.returns.assets.len() {
                        Err(Error::validation(
                            "policy_space.allocation",
                            format!("expected {} assets", self.returns.assets.len()),
                        ))
                    } else {
                        Ok(())
                    }
                }),
            ));
        }
        out
    }

    pub fn load(&self) -> Result<LoadedModel> {
        if let Some(d) = self.diagnose().into_iter().find(|d| !d.pass) {
            return Err(Error::validation(
                d.path.unwrap_or_else(|| d.check.to_string()),
                d.message.unwrap_or_default(),
            ));
        }
        let noise = self.noise_atoms()?;
        let assets = self.assets(&noise)?;
        let market = MarketModel::new(
            MarkovChain::new(self.transition.clone())?,
            noise,
            ReturnModel {
                risk_free: self.returns.risk_free.clone(),
                assets,
            },
        )?;
        if let Some(policy) = &self.policy {
            if let Some(space) = &self.policy_space {
                policy.validate_in(space)?;
            }
        }
        let framing = match &self.framing {
            Some(f) => {
                let kappa = Kappa::from_table(&market, f.kappa.clone())
                    .map_err(|e| prefix_path(e, "framing"))?;
                Some(
                    FramingSpec::new(kappa, f.varpi.clone())
                        .map_err(|e| prefix_path(e, "framing"))?,
                )
            }
            None => None,
        };
        Ok(LoadedModel {
            market,
            preferences: self.preferences.clone(),
            policy_space: self.policy_space.clone(),
            policy: self.policy.clone(),
            framing,
        })
    }
}

fn stochastic_ok(diagnostics: &[Diagnostic]) -> bool {
    diagnostics
        .iter()
        .filter(|d| d.check == "stochastic")
        .all(|d| d.pass)
}

fn prefix_path(e: Error, prefix: &str) -> Error {
    match e {
        Error::Validation { path, message } if !path.starts_with(prefix) => Error::Validation {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => other,
    }
}
