//! The two-state stock market with i.i.d. dividend growth used as the
//! reference configuration: price-dividend ratios (30.25, 39.75), a 3%
//! risk-free rate, loss aversion 1.5 and a consumption floor of 0.45%.

use crate::market::{MarketModel, MarkovChain, NoiseAtoms, ReturnModel, RiskyAsset};
use crate::model_file::{AssetSpec, ModelFile, NoiseSpec, PriceDividend, ReturnsSpec};
use crate::portfolio::PolicySpace;
use crate::preferences::Preferences;

/// Dividend growth outcomes and probabilities.
pub const DIVIDEND_GROWTH: [(f64, f64); 9] = [
    (0.976, 0.03),
    (0.993, 0.03),
    (1.002, 0.10),
    (1.011, 0.16),
    (1.019, 0.24),
    (1.028, 0.19),
    (1.037, 0.13),
    (1.045, 0.09),
    (1.054, 0.03),
];

pub const TRANSITION: [[f64; 2]; 2] = [[0.6, 0.4], [0.2, 0.8]];
pub const RISK_FREE: [f64; 2] = [1.03, 1.03];
pub const PRICE_DIVIDEND: [f64; 2] = [30.25, 39.75];

pub const BETA: f64 = 0.937;
pub const RHO: f64 = 0.5;
pub const GAMMA: f64 = 8.0;
pub const LOSS_AVERSION: f64 = 1.5;
pub const FRAMING_WEIGHT: f64 = 0.00065;
pub const CONSUMPTION_FLOOR: f64 = 0.0045;

/// Published results, rounded as reported.
pub mod reported {
    pub const GAIN_LOSS: [f64; 2] = [0.1532, -0.0551];
    /// Net mean return of the stock.
    pub const MEAN_RETURN: f64 = 0.06;
    pub const STD_DEV: f64 = 0.15;
    pub const EQUITY_PREMIUM: f64 = 0.03;
    pub const CONSUMPTION: [f64; 2] = [0.0585, 0.0730];
    pub const ALLOCATION: [f64; 2] = [1.00, 0.150];
    pub const VALUE: [f64; 2] = [0.0679, 0.0544];
}

pub fn market_model() -> MarketModel {
    let chain = MarkovChain::new(TRANSITION.iter().map(|r| r.to_vec()).collect())
        .expect("reference chain is valid");
    let noise = NoiseAtoms::shared(2, DIVIDEND_GROWTH.to_vec()).expect("reference atoms are valid");
    let stock = RiskyAsset::from_price_dividend("stock", &PRICE_DIVIDEND, &noise);
    let returns = ReturnModel {
        risk_free: RISK_FREE.to_vec(),
        assets: vec![stock],
    };
    MarketModel::new(chain, noise, returns).expect("reference model is valid")
}

pub fn preferences() -> Preferences {
    Preferences::new(BETA, RHO, GAMMA, LOSS_AVERSION, vec![FRAMING_WEIGHT])
        .expect("reference preferences are valid")
}

/// `I_x = [0.45%, 100%)` and `J_x = [0, 1]` in both states.
pub fn policy_space() -> PolicySpace {
    PolicySpace::uniform(2, CONSUMPTION_FLOOR, 1.0, vec![(0.0, 1.0)])
        .expect("reference policy space is valid")
}

/// The reference configuration as a model document.
pub fn model_file() -> ModelFile {
    ModelFile {
        states: Some(2),
        transition: TRANSITION.iter().map(|r| r.to_vec()).collect(),
        noise: NoiseSpec::SharedAtoms(DIVIDEND_GROWTH.to_vec()),
        returns: ReturnsSpec {
            risk_free: RISK_FREE.to_vec(),
            assets: vec![AssetSpec {
                name: "stock".into(),
                table: None,
                price_dividend: Some(PriceDividend {
                    phi: PRICE_DIVIDEND.to_vec(),
                }),
            }],
        },
        preferences: preferences(),
        policy_space: Some(policy_space()),
        policy: None,
        framing: None,
    }
}
