//! Pointwise structural checks: symmetry, monotonicity, competitiveness,
//! no free lunch, and the feasibility slacks of a single profile.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{fmt_bids, AuditReport, Check, Evidence, Property, Seeds};
use crate::error::Result;
use crate::mech::{check_len, BidVector, Mechanism};
use crate::stats::{chunks, substream};

/// Tolerance of the exact structural checks.
pub const STRUCTURAL_TOL: f64 = 1e-9;

/// Settings shared by the structural audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Bid increment used by the monotonicity and competitiveness checks.
    pub step: f64,
}

impl StructuralConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            tolerance: STRUCTURAL_TOL,
            step: 0.05,
        }
    }
}

/// Runs `trial` on random profiles and keeps the worst violation.
fn worst_over_profiles<M, F>(
    mech: &M,
    cfg: &StructuralConfig,
    trial: F,
) -> Result<(f64, Option<(String, f64)>)>
where
    M: Mechanism + ?Sized,
    F: Fn(&M, &mut rand_chacha::ChaCha8Rng, &BidVector) -> Result<(f64, String)> + Sync,
{
    let n = mech.num_users();
    type Worst = (f64, Option<(String, f64)>);
    let parts: Vec<Result<Worst>> = chunks(cfg.trials)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(cfg.seed, stream);
            let mut worst: (f64, Option<(String, f64)>) = (0.0, None);
            for _ in 0..len {
                let b = BidVector::from_unchecked((0..n).map(|_| rng.random::<f64>()).collect());
                let (v, what) = trial(mech, &mut rng, &b)?;
                if v > worst.0 || worst.1.is_none() {
                    worst = (worst.0.max(v), Some((what, v)));
                }
            }
            Ok(worst)
        })
        .collect();
    let mut worst: (f64, Option<(String, f64)>) = (0.0, None);
    for p in parts {
        let (v, e) = p?;
        if v > worst.0 || worst.1.is_none() {
            worst = (worst.0.max(v), e);
        }
    }
    Ok(worst)
}

fn structural_report<M: Mechanism + ?Sized>(
    mech: &M,
    property: Property,
    check: &str,
    cfg: &StructuralConfig,
    worst: (f64, Option<(String, f64)>),
) -> AuditReport {
    AuditReport::new(
        property,
        mech.name(),
        vec![Check::new(check, worst.0, cfg.tolerance, 0.0)],
        worst
            .1
            .map(|(what, v)| vec![Evidence::new(what, v, 0.0)])
            .unwrap_or_default(),
        Seeds::random(cfg.seed, chunks(cfg.trials).len() as u64),
    )
}

/// Relabelling users permutes allocations and payments accordingly.
pub fn symmetry_audit<M: Mechanism + ?Sized>(
    mech: &M,
    cfg: &StructuralConfig,
) -> Result<AuditReport> {
    let n = mech.num_users();
    let worst = worst_over_profiles(mech, cfg, |mech, rng, b| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let pb = b.permuted(&perm);
        let (a, p) = (mech.allocation(b)?, mech.payments(b)?);
        let (pa, pp) = (mech.allocation(&pb)?, mech.payments(&pb)?);
        let mut dev: f64 = 0.0;
        for (slot, &src) in perm.iter().enumerate() {
            dev = dev.max((pa.get(slot) - a.get(src)).abs());
            dev = dev.max((pp[slot] - p[src]).abs());
        }
        dev = dev.max((mech.revenue(&pb)? - mech.revenue(b)?).abs());
        Ok((
            dev,
            format!("perm={perm:?} bids={}", fmt_bids(b.as_slice())),
        ))
    })?;
    Ok(structural_report(
        mech,
        Property::Symmetry,
        "max outcome mismatch",
        cfg,
        worst,
    ))
}

/// Each user's allocation is nondecreasing in the user's own bid.
pub fn monotonicity_audit<M: Mechanism + ?Sized>(
    mech: &M,
    cfg: &StructuralConfig,
) -> Result<AuditReport> {
    let n = mech.num_users();
    let step = cfg.step;
    let worst = worst_over_profiles(mech, cfg, |mech, rng, b| {
        let i = rng.random_range(0..n);
        let mut prev = mech.allocation_of(&b.with_bid(i, 0.0), i)?;
        let mut drop: f64 = 0.0;
        let mut t = step;
        while t <= 1.0 + 1e-12 {
            let a = mech.allocation_of(&b.with_bid(i, t.min(1.0)), i)?;
            drop = drop.max(prev - a);
            prev = a;
            t += step;
        }
        Ok((drop, format!("user={i} bids={}", fmt_bids(b.as_slice()))))
    })?;
    Ok(structural_report(
        mech,
        Property::Monotonicity,
        "max allocation drop",
        cfg,
        worst,
    ))
}

/// Raising another user's bid never raises a user's allocation.
pub fn competitiveness_audit<M: Mechanism + ?Sized>(
    mech: &M,
    cfg: &StructuralConfig,
) -> Result<AuditReport> {
    let n = mech.num_users();
    let step = cfg.step;
    let worst = worst_over_profiles(mech, cfg, |mech, rng, b| {
        if n < 2 {
            return Ok((0.0, String::new()));
        }
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        let raised = b.with_bid(j, b[j] + step);
        let rise = mech.allocation_of(&raised, i)? - mech.allocation_of(b, i)?;
        Ok((
            rise,
            format!("user={i} raised={j} bids={}", fmt_bids(b.as_slice())),
        ))
    })?;
    Ok(structural_report(
        mech,
        Property::Competitiveness,
        "max allocation rise from a rival bid",
        cfg,
        worst,
    ))
}

/// A user bidding zero pays nothing in expectation.
pub fn nfl_audit<M: Mechanism + ?Sized>(mech: &M, cfg: &StructuralConfig) -> Result<AuditReport> {
    let n = mech.num_users();
    let worst = worst_over_profiles(mech, cfg, |mech, rng, b| {
        let i = rng.random_range(0..n);
        let z = b.with_bid(i, 0.0);
        let (a, p) = mech.outcome_of(&z, i)?;
        Ok((
            (a * p).abs(),
            format!("user={i} bids={}", fmt_bids(z.as_slice())),
        ))
    })?;
    Ok(structural_report(
        mech,
        Property::Nfl,
        "max expected payment at zero bid",
        cfg,
        worst,
    ))
}

/// Rationality and budget slacks of one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilitySlack {
    /// `b_i - p_i(b)` per user; `None` when the user is never confirmed.
    pub uir: Vec<Option<f64>>,
    /// `sum_i a_i p_i - r`.
    pub bf: f64,
}

impl FeasibilitySlack {
    /// Smallest slack over users and the budget.
    pub fn min_slack(&self) -> f64 {
        self.uir.iter().flatten().copied().fold(self.bf, f64::min)
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.min_slack() >= -tol
    }
}

/// Computes the rationality slack of every user and the budget slack at `b`.
pub fn uir_bf_check<M: Mechanism + ?Sized>(mech: &M, b: &BidVector) -> Result<FeasibilitySlack> {
    check_len(b, mech.num_users())?;
    let a = mech.allocation(b)?;
    let p = mech.payments(b)?;
    let uir = b
        .iter()
        .zip(a.probs())
        .zip(&p)
        .map(|((bi, &ai), &pi)| (ai > 0.0).then_some(bi - pi))
        .collect();
    let charged: f64 = a.probs().iter().zip(&p).map(|(x, y)| x * y).sum();
    Ok(FeasibilitySlack {
        uir,
        bf: charged - mech.revenue(b)?,
    })
}
