//! Reference co-design problems built from the expression vocabulary: a
//! racing drone and a heterogeneous multi-robot transport team.

pub mod drone;
pub mod transport;

use crate::catalog::{CatalogError, DesignSpace, FeatureMatrix};
use crate::expr::SpecError;

pub use drone::{build_drone_spec, exact_vmax, speed_kappa, DroneParams, DRONE_MODULES};
pub use transport::{
    build_transport_spec, max_team_size, team_summary, Coverage, RobotSummary, TransportCatalogs, TransportParams,
};

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("missing module `{0}`")]
    MissingModule(String),
    #[error("unexpected module `{0}`")]
    UnexpectedModule(String),
    #[error("module `{module}` lacks feature `{feature}`")]
    MissingFeature { module: String, feature: String },
    #[error("feature `{feature}` of `{module}/{component}` must be positive, got {value}")]
    NonPositive {
        module: String,
        component: String,
        feature: String,
        value: f64,
    },
    #[error("invalid parameter `{name}`: {message}")]
    Param { name: String, message: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("{0}")]
    Premise(String),
    #[error("{0}")]
    Domain(String),
}

fn require_features(m: &FeatureMatrix, features: &[&str]) -> Result<(), ProblemError> {
    for f in features {
        if !m.has_feature(f) {
            return Err(ProblemError::MissingFeature {
                module: m.module_id().to_string(),
                feature: f.to_string(),
            });
        }
    }
    Ok(())
}

fn require_positive(m: &FeatureMatrix, features: &[&str]) -> Result<(), ProblemError> {
    for f in features {
        let row = m.row(f)?;
        if let Some((j, &value)) = row.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(ProblemError::NonPositive {
                module: m.module_id().to_string(),
                component: m.component_names()[j].clone(),
                feature: f.to_string(),
                value,
            });
        }
    }
    Ok(())
}

fn module<'a>(space: &'a DesignSpace, id: &str) -> Result<&'a FeatureMatrix, ProblemError> {
    space
        .module(id)
        .map_err(|_| ProblemError::MissingModule(id.to_string()))
}

fn check_param(name: &str, ok: bool, message: &str) -> Result<(), ProblemError> {
    if ok {
        Ok(())
    } else {
        Err(ProblemError::Param {
            name: name.to_string(),
            message: message.to_string(),
        })
    }
}
