//! Recursive utility with narrow framing on finite-state Markov markets:
//! certainty equivalents and the CES aggregator, the growth rate of a
//! consumption stream, fixed points of the utility recursion, and optimal
//! consumption-portfolio choice by value iteration.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod example;
pub mod fixed_point;
pub mod market;
pub mod model_file;
pub mod portfolio;
pub mod preferences;
pub mod spectral;

pub use error::{Error, Result};
pub use fixed_point::{
    analyze_singleton, apply_t, growth_condition, iterate_t, verify_assumption3, Assumption3Status,
    FramingSpec, GrowthCheck, IterationOptions, IterationReport, Kappa, SingletonCensus,
    SingletonRegime, UtilityFunction,
};
pub use market::{MarketModel, MarkovChain, NoiseAtoms, ReturnModel, RiskyAsset};
pub use portfolio::{
    apply_w, iterate_w, maximize_c, maximize_theta, policy_value, seed_phi0, verify_feasibility,
    Policy, PolicySpace, PortfolioSolution, ValueFunction, VerificationReport, VerifyOptions,
};
pub use preferences::Preferences;
pub use spectral::{growth_rate, SpectralResult};
