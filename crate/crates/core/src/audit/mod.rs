//! Audits of mechanism properties.
//!
//! Every audit returns an [`AuditReport`] with a verdict, the worst
//! violation found, its threshold and noise allowance, supporting evidence
//! rows and the seeds that produced them.

mod burning;
mod field;
mod incentive;
mod report;
mod structure;

pub use burning::{burning_audit, BurningAudit, BurningClassification, BurningConfig};
pub use field::{
    conservative_field_audit, first_price_counterexample, first_price_theta, loop_integral,
    path_increment, Counterexample, IncrementField, PlanePath,
};
pub use incentive::{
    bid_grid, bnic_audit, dsic_audit, scp1_audit, BnicAudit, BnicConfig, DeviationCurve,
    DsicConfig, Scp1Config,
};
pub use report::{fmt_float, AuditReport, Check, Evidence, Property, Seeds, Verdict};
pub use structure::{
    competitiveness_audit, monotonicity_audit, nfl_audit, symmetry_audit, uir_bf_check,
    FeasibilitySlack, StructuralConfig, STRUCTURAL_TOL,
};
