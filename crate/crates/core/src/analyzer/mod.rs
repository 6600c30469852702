//! Profile derivation, limit formulas with their enumeration oracles, and
//! fault campaigns.

pub mod campaign;
pub mod formula;
pub mod limits;
pub mod profile;

pub use campaign::{fault_campaign, CampaignSummary};
pub use limits::{
    dynamic_limit_safe, majority_max_faults, max_uncovered, roll_equivalence, split_brain_possible, static_limit_safe,
    verify_limits, LimitReport,
};
pub use profile::{derive_profile, golden_profile, profile_mechanism, ProfileComparison};

use crate::mechanisms::MechanismKind;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyzerError {
    #[error("{kind}: traces miss cases {missing:?}")]
    IncompleteCoverage { kind: MechanismKind, missing: Vec<String> },
    #[error("no golden profile for {0}")]
    NoGolden(MechanismKind),
    #[error("golden data: {0}")]
    Golden(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("simulation failed: {0}")]
    Run(String),
}
