//! Soft second-price transaction fee mechanisms and their audits.
//!
//! The crate models a transaction fee mechanism as an allocation rule, a
//! payment-if-confirmed rule and a miner revenue rule over bids in
//! `[0, 1]`. It provides
//!
//! * the logit ("soft second-price") allocation for one slot and its
//!   successive-sampling generalisation to `k` slots, with Myerson payments
//!   in closed form or by quadrature;
//! * a quadratic variation term `(theta, r~)` that keeps the mechanism
//!   Bayesian incentive compatible and side-contract proof while paying the
//!   miner a positive expected revenue;
//! * audits for truthfulness, collusion, rationality, budget feasibility
//!   and burning, and a search for the largest feasible perturbation scale.

pub mod audit;
pub mod dists;
pub mod error;
pub mod hsearch;
pub mod mech;
pub mod quadrature;
pub mod reference;
pub mod sim;
pub mod ssp_k;
pub mod ssp_k1;
pub mod stats;

pub use dists::{CMode, DistributionKind, DistributionSpec, ValuationDistribution};
pub use error::{Error, Result};
pub use mech::{
    joint_utility, myerson_integral, myerson_payment, total_expected_payment, user_utility,
    AllocationVector, BidVector, Mechanism, MechanismParams,
};
pub use sim::{framed_mechanism, simulate, SimulationSummary};
pub use ssp_k::{SamplingOutcome, SoftSecondPriceK, ThresholdConstants};
pub use ssp_k1::{Perturbed, SoftSecondPriceK1, VariationTerm};
pub use stats::Estimate;
