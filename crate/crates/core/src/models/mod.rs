//! Bundled model generators and the JSON model-file format.
//!
//! A model file is a JSON object with a `type` tag:
//!
//! ```json
//! { "type": "oligopoly", "players": 2, "intercept": 15.0,
//!   "slope": -1.0, "unit_costs": [2.0, 1.0] }
//! ```
//!
//! or `"type": "gas"` with the full market description (see
//! [`gas::GasMarketModel`]). Unknown fields are rejected.

pub mod gas;
pub mod oligopoly;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ParametrizedNcp;
use crate::uq::CovarianceModel;

/// A parsed model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelFile {
    Oligopoly(oligopoly::OligopolyConfig),
    Gas(Box<gas::GasMarketModel>),
}

impl ModelFile {
    /// Parse from JSON text. Parse errors carry line/column positions.
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Build the parametrized NCP.
    pub fn build(&self) -> Result<ParametrizedNcp> {
        match self {
            ModelFile::Oligopoly(cfg) => oligopoly::make_oligopoly(cfg),
            ModelFile::Gas(model) => gas::make_gas_market(model),
        }
    }

    /// A model-specific starting point, when one is worth providing.
    pub fn initial_point(&self) -> Result<Option<DVector<f64>>> {
        match self {
            ModelFile::Oligopoly(_) => Ok(None),
            ModelFile::Gas(model) => Ok(Some(gas::initial_point(model)?)),
        }
    }

    /// Default input covariance from a coefficient of variation.
    ///
    /// `wiener_demand` requests Brownian year-blocks for demand parameters
    /// and is only meaningful for gas models.
    pub fn covariance(&self, cv: f64, wiener_demand: bool) -> Result<CovarianceModel> {
        match self {
            ModelFile::Oligopoly(cfg) => {
                let p = oligopoly::make_oligopoly(cfg)?;
                if wiener_demand {
                    return Err(Error::InvalidConfig(
                        "wiener covariance applies to gas models only".into(),
                    ));
                }
                CovarianceModel::diagonal_from_cv(
                    p.theta_mean(),
                    cv,
                    p.param_labels().to_vec(),
                )
            }
            ModelFile::Gas(model) => model.covariance(cv, wiener_demand),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oligopoly_file_roundtrip() {
        let text = r#"{"type":"oligopoly","players":2,"intercept":15.0,"slope":-1.0,"unit_costs":[2.0,1.0]}"#;
        let model = ModelFile::from_json(text).unwrap();
        let p = model.build().unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.param_dim(), 4);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"type":"oligopoly","players":2,"intercept":15.0,"slope":-1.0,"unit_costs":[2.0,1.0],"bogus":1}"#;
        assert!(ModelFile::from_json(text).is_err());
    }

    #[test]
    fn parse_error_carries_location() {
        let err = ModelFile::from_json("{ not json").unwrap_err();
        assert!(err.line() >= 1);
    }

    #[test]
    fn gas_file_roundtrip() {
        let model = ModelFile::Gas(Box::new(gas::toy_instance()));
        let text = serde_json::to_string_pretty(&model).unwrap();
        let parsed = ModelFile::from_json(&text).unwrap();
        let p = parsed.build().unwrap();
        assert!(p.dim() > 50);
    }
}
