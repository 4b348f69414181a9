//! Whether a mechanism burns fees, and whether that is forced.
//!
//! A mechanism with no free lunch, a competitive allocation and strong
//! budget feasibility (everything users pay goes to the miner) must use a
//! bid-independent allocation and earns nothing in expectation. The audit
//! classifies a mechanism against these premises and checks the predicted
//! consequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{AuditReport, Check, Evidence, Property, Seeds, Verdict};
use super::structure::{competitiveness_audit, nfl_audit, StructuralConfig};
use crate::dists::ValuationDistribution;
use crate::error::Result;
use crate::mech::{BidVector, Mechanism};
use crate::stats::{chunks, substream, Estimate, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurningConfig {
    pub samples: usize,
    pub seed: u64,
    /// Profiles used by the pointwise classification checks.
    pub structural_trials: usize,
    pub tolerance: f64,
    pub z: f64,
}

impl BurningConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            structural_trials: 2000,
            tolerance: 1e-9,
            z: 3.0,
        }
    }
}

/// Pointwise and expected quantities behind the burning audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurningClassification {
    pub no_free_lunch: bool,
    pub competitive: bool,
    /// Every profile satisfies `sum_i a_i p_i = r`.
    pub strong_budget_feasible: bool,
    /// Largest `|a_i(b) - k/n|` seen; `k` is the block size, or the mean
    /// total allocation when the block size is not fixed.
    pub max_allocation_deviation: f64,
    pub max_pointwise_burn: f64,
    /// `E[sum_i a_i p_i - r]` under the prior.
    pub expected_burn: Estimate,
    pub expected_revenue: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurningAudit {
    pub report: AuditReport,
    pub classification: BurningClassification,
}

/// Classifies the mechanism and tests the consequence that applies.
///
/// * Premises hold: the allocation must be constant at `k/n` and the
///   expected revenue zero within `z` standard errors.
/// * Strong budget feasibility fails: the expected burn must be
///   significantly positive; otherwise the audit is inconclusive.
/// * Other premises fail: the consequence does not apply and the audit
///   passes on the classification alone.
pub fn burning_audit<M: Mechanism + ?Sized>(
    mech: &M,
    dist: &ValuationDistribution,
    cfg: &BurningConfig,
) -> Result<BurningAudit> {
    let n = mech.num_users();
    let structural = StructuralConfig {
        tolerance: cfg.tolerance,
        ..StructuralConfig::new(cfg.structural_trials, cfg.seed ^ 0x5bd1_e995)
    };
    let nfl = nfl_audit(mech, &structural)?;
    let comp = competitiveness_audit(mech, &structural)?;

    // (burn, revenue, total allocation, max |a_i - mean|, max |burn|)
    type Acc = (Moments, Moments, Moments, Vec<f64>, f64);
    let parts: Vec<Result<Acc>> = chunks(cfg.samples)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(cfg.seed, stream);
            let mut bids = vec![0.0; n];
            let mut acc: Acc = (
                Moments::default(),
                Moments::default(),
                Moments::default(),
                Vec::with_capacity(len),
                0.0,
            );
            for _ in 0..len {
                dist.sample_into(&mut rng, &mut bids);
                let b = BidVector::from_unchecked(bids.clone());
                let a = mech.allocation(&b)?;
                let p = mech.payments(&b)?;
                let r = mech.revenue(&b)?;
                let charged: f64 = a.probs().iter().zip(&p).map(|(x, y)| x * y).sum();
                acc.0.push(charged - r);
                acc.1.push(r);
                acc.2.push(a.sum());
                acc.3.extend(a.probs());
                acc.4 = acc.4.max((charged - r).abs());
            }
            Ok(acc)
        })
        .collect();
    let (mut burn, mut revenue, mut total) =
        (Moments::default(), Moments::default(), Moments::default());
    let mut probs = Vec::new();
    let mut max_burn: f64 = 0.0;
    for p in parts {
        let (b, r, t, a, mb) = p?;
        burn.merge(&b);
        revenue.merge(&r);
        total.merge(&t);
        probs.extend(a);
        max_burn = max_burn.max(mb);
    }
    let slots = mech.block_size().map_or(total.mean(), |k| k as f64);
    let target = slots / n as f64;
    let max_dev = probs.iter().map(|a| (a - target).abs()).fold(0.0, f64::max);

    let class = BurningClassification {
        no_free_lunch: nfl.passed(),
        competitive: comp.passed(),
        strong_budget_feasible: max_burn <= cfg.tolerance,
        max_allocation_deviation: max_dev,
        max_pointwise_burn: max_burn,
        expected_burn: burn.estimate(),
        expected_revenue: revenue.estimate(),
    };

    let mut checks = vec![
        Check::new("no free lunch", nfl.worst_violation, cfg.tolerance, 0.0),
        Check::new("competitiveness", comp.worst_violation, cfg.tolerance, 0.0),
    ];
    let premises = class.no_free_lunch && class.competitive;
    if premises && class.strong_budget_feasible {
        checks.push(Check::new(
            "allocation deviation from k/n",
            max_dev,
            cfg.tolerance,
            0.0,
        ));
        let rev = class.expected_revenue;
        checks.push(Check::decided(
            "expected revenue is zero",
            if rev.covers(0.0, cfg.z) {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            rev.mean.abs(),
            0.0,
            cfg.z * rev.se,
        ));
    } else if !class.strong_budget_feasible {
        let e = class.expected_burn;
        checks.push(Check::decided(
            "expected burn is positive",
            if e.mean > cfg.z * e.se {
                Verdict::Pass
            } else {
                Verdict::Inconclusive
            },
            e.mean,
            cfg.z * e.se,
            cfg.z * e.se,
        ));
    }
    // a failed premise is a classification, not a failure of the audit
    for c in checks.iter_mut().take(2) {
        c.verdict = Verdict::Pass;
    }
    let evidence = vec![
        Evidence::new(
            "expected burn",
            class.expected_burn.mean,
            class.expected_burn.se,
        ),
        Evidence::new(
            "expected revenue",
            class.expected_revenue.mean,
            class.expected_revenue.se,
        ),
        Evidence::new("max allocation deviation from k/n", max_dev, 0.0),
        Evidence::new("max pointwise burn", max_burn, 0.0),
    ];
    Ok(BurningAudit {
        report: AuditReport::new(
            Property::Burning,
            mech.name(),
            checks,
            evidence,
            Seeds::random(cfg.seed, chunks(cfg.samples).len() as u64),
        ),
        classification: class,
    })
}
