//! Truthfulness and collusion audits.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{fmt_bids, AuditReport, Check, Evidence, Property, Seeds, Verdict};
use crate::dists::ValuationDistribution;
use crate::error::{Error, Result};
use crate::mech::{check_user, BidVector, Mechanism};
use crate::quadrature::adaptive_simpson;
use crate::stats::{chunks, substream, Moments};

/// Evenly spaced bids `0, 1/(points-1), ..., 1`.
pub fn bid_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2, "a grid needs both endpoints");
    let last = (points - 1) as f64;
    (0..points).map(|j| j as f64 / last).collect()
}

/// `(a_i, a_i p_i)` of one user.
fn alloc_and_charge<M: Mechanism + ?Sized>(
    mech: &M,
    b: &BidVector,
    i: usize,
) -> Result<(f64, f64)> {
    let (a, p) = mech.outcome_of(b, i)?;
    Ok((a, a * p))
}

fn random_profile<R: Rng + ?Sized>(rng: &mut R, n: usize) -> BidVector {
    BidVector::from_unchecked((0..n).map(|_| rng.random::<f64>()).collect())
}

/// Settings of the dominant-strategy audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsicConfig {
    pub trials: usize,
    pub seed: u64,
    pub grid_points: usize,
    /// Largest tolerated utility gain from misreporting.
    pub tolerance: f64,
    /// Number of worst trials kept as evidence.
    pub evidence_rows: usize,
}

impl DsicConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            grid_points: 101,
            tolerance: 1e-8,
            evidence_rows: 10,
        }
    }
}

struct Trial {
    gain: f64,
    user: usize,
    value: f64,
    best_bid: f64,
    bids: BidVector,
}

/// Dominant-strategy truthfulness for users: for random users, values and
/// opposing bids, no grid bid beats bidding the value by more than the
/// tolerance. Payments are evaluated exactly, so the check is pointwise.
pub fn dsic_audit<M: Mechanism + ?Sized>(mech: &M, cfg: &DsicConfig) -> Result<AuditReport> {
    let n = mech.num_users();
    let grid = bid_grid(cfg.grid_points);
    let parts: Vec<Result<Vec<Trial>>> = chunks(cfg.trials)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(cfg.seed, stream);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let i = rng.random_range(0..n);
                let b = random_profile(&mut rng, n);
                let v = b[i];
                let (a0, c0) = alloc_and_charge(mech, &b, i)?;
                let truthful = a0 * v - c0;
                let mut best = (f64::NEG_INFINITY, v);
                for &t in &grid {
                    let (a, c) = alloc_and_charge(mech, &b.with_bid(i, t), i)?;
                    let gain = a * v - c - truthful;
                    if gain > best.0 {
                        best = (gain, t);
                    }
                }
                out.push(Trial {
                    gain: best.0,
                    user: i,
                    value: v,
                    best_bid: best.1,
                    bids: b,
                });
            }
            Ok(out)
        })
        .collect();
    let mut trials = Vec::with_capacity(cfg.trials);
    for p in parts {
        trials.extend(p?);
    }
    trials.sort_by(|x, y| y.gain.total_cmp(&x.gain));
    let worst = trials.first().map_or(0.0, |t| t.gain);
    let evidence = trials
        .iter()
        .take(cfg.evidence_rows)
        .map(|t| {
            Evidence::new(
                format!(
                    "user={} value={:.6} best_bid={:.4} bids={}",
                    t.user,
                    t.value,
                    t.best_bid,
                    fmt_bids(t.bids.as_slice())
                ),
                t.gain,
                0.0,
            )
        })
        .collect();
    Ok(AuditReport::new(
        Property::UDsic,
        mech.name(),
        vec![Check::new(
            "max utility gain over grid",
            worst,
            cfg.tolerance,
            0.0,
        )],
        evidence,
        Seeds::random(cfg.seed, chunks(cfg.trials).len() as u64),
    ))
}

/// Settings of the Bayesian audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnicConfig {
    /// Number of opposing bid profiles drawn from the prior.
    pub samples: usize,
    pub seed: u64,
    /// The audited user.
    pub user: usize,
    pub values: Vec<f64>,
    pub grid_points: usize,
    /// Significance multiplier on the standard error.
    pub z: f64,
    /// Largest acceptable standard error of the truthful utility.
    pub max_standard_error: f64,
}

impl BnicConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            user: 0,
            values: (1..=9).map(|j| j as f64 / 10.0).collect(),
            grid_points: 41,
            z: 3.0,
            max_standard_error: 1e-3,
        }
    }
}

/// Expected utility of one user as a function of the bid, at a fixed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCurve {
    pub value: f64,
    pub bid_grid: Vec<f64>,
    pub expected_utility: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Paired estimate of `u(bid) - u(value)`.
    pub gain: Vec<f64>,
    pub gain_standard_errors: Vec<f64>,
}

/// Result of a Bayesian audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnicAudit {
    pub report: AuditReport,
    pub curves: Vec<DeviationCurve>,
}

/// Bayesian truthfulness for users. Opposing bids are drawn from the prior
/// and shared by every value and grid bid (common random numbers), so the
/// gain of each deviation is estimated from paired differences. The audit
/// fails when some grid bid beats the value by more than `z` standard
/// errors.
pub fn bnic_audit<M: Mechanism + ?Sized>(
    mech: &M,
    dist: &ValuationDistribution,
    cfg: &BnicConfig,
) -> Result<BnicAudit> {
    let n = mech.num_users();
    check_user(&BidVector::zeros(n), cfg.user)?;
    if cfg.values.is_empty() {
        return Err(Error::InvalidParameter {
            name: "values",
            reason: "need at least one value".into(),
        });
    }
    for &v in &cfg.values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::BidOutOfRange {
                index: cfg.user,
                value: v,
            });
        }
    }
    let grid = bid_grid(cfg.grid_points);
    // evaluation points: the grid plus any value not on it
    let mut points = grid.clone();
    for &v in &cfg.values {
        if !points.contains(&v) {
            points.push(v);
        }
    }
    let truth_idx: Vec<usize> = cfg
        .values
        .iter()
        .map(|v| {
            points
                .iter()
                .position(|x| x == v)
                .expect("value added above")
        })
        .collect();
    let nv = cfg.values.len();
    let np = points.len();
    // per value: utilities at every point, then paired gains
    let zero = || vec![Moments::default(); nv * np * 2];
    let parts: Vec<Result<Vec<Moments>>> = chunks(cfg.samples)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(cfg.seed, stream);
            let mut acc = zero();
            let mut bids = vec![0.0; n];
            let mut outcome = vec![(0.0, 0.0); np];
            for _ in 0..len {
                dist.sample_into(&mut rng, &mut bids);
                let base = BidVector::from_unchecked(bids.clone());
                for (o, &t) in outcome.iter_mut().zip(&points) {
                    *o = alloc_and_charge(mech, &base.with_bid(cfg.user, t), cfg.user)?;
                }
                for (vi, &v) in cfg.values.iter().enumerate() {
                    let (a0, c0) = outcome[truth_idx[vi]];
                    let u0 = a0 * v - c0;
                    for (pi, &(a, c)) in outcome.iter().enumerate() {
                        let u = a * v - c;
                        acc[(vi * np + pi) * 2].push(u);
                        acc[(vi * np + pi) * 2 + 1].push(u - u0);
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut acc = zero();
    for p in parts {
        for (a, b) in acc.iter_mut().zip(&p?) {
            a.merge(b);
        }
    }

    let mut curves = Vec::with_capacity(nv);
    let mut evidence = Vec::new();
    // (excess over z*se, gain, z*se)
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for (vi, &v) in cfg.values.iter().enumerate() {
        let at = |pi: usize, q: usize| &acc[(vi * np + pi) * 2 + q];
        let truth_se = at(truth_idx[vi], 0).std_error();
        if truth_se > cfg.max_standard_error {
            return Err(Error::SampleBudget {
                se: truth_se,
                limit: cfg.max_standard_error,
            });
        }
        let mut best = (f64::NEG_INFINITY, v, 0.0, 0.0);
        for (pi, &t) in points.iter().enumerate().take(grid.len()) {
            if pi == truth_idx[vi] {
                continue;
            }
            let g = at(pi, 1);
            let allowance = cfg.z * g.std_error();
            let excess = g.mean() - allowance;
            if excess > best.0 {
                best = (excess, t, g.mean(), g.std_error());
            }
            if excess > worst.0 {
                worst = (excess, g.mean(), allowance);
            }
        }
        evidence.push(Evidence::new(
            format!("value={v:.4} best_deviation={:.4}", best.1),
            best.2,
            best.3,
        ));
        curves.push(DeviationCurve {
            value: v,
            bid_grid: grid.clone(),
            expected_utility: (0..grid.len()).map(|pi| at(pi, 0).mean()).collect(),
            standard_errors: (0..grid.len()).map(|pi| at(pi, 0).std_error()).collect(),
            gain: (0..grid.len()).map(|pi| at(pi, 1).mean()).collect(),
            gain_standard_errors: (0..grid.len()).map(|pi| at(pi, 1).std_error()).collect(),
        });
    }
    // a deviation only counts when it is significant, so anything inside
    // the noise band is a pass
    let verdict = if worst.0 > 0.0 {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    let check = Check::decided(
        "max significant gain over grid",
        verdict,
        worst.1,
        0.0,
        worst.2,
    );
    Ok(BnicAudit {
        report: AuditReport::new(
            Property::UBnic,
            mech.name(),
            vec![check],
            evidence,
            Seeds::random(cfg.seed, chunks(cfg.samples).len() as u64),
        ),
        curves,
    })
}

/// Settings of the side-contract audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scp1Config {
    pub trials: usize,
    pub seed: u64,
    /// Tolerance of the revenue identity.
    pub identity_tolerance: f64,
    /// Tolerance of the joint-utility maximisation.
    pub behavioural_slack: f64,
    pub grid_points: usize,
    /// Quadrature tolerance of the allocation integral.
    pub quadrature_tolerance: f64,
}

impl Scp1Config {
    /// Tolerances suited to mechanisms with closed-form payments.
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            identity_tolerance: 1e-6,
            behavioural_slack: 1e-6,
            grid_points: 101,
            quadrature_tolerance: 1e-10,
        }
    }

    /// Looser identity tolerance for payments computed by quadrature.
    pub fn quadrature_payments(trials: usize, seed: u64) -> Self {
        Self {
            identity_tolerance: 1e-4,
            ..Self::new(trials, seed)
        }
    }
}

/// Resistance to a side contract between the miner and one user.
///
/// Two checks on random profiles:
/// * the identity `[a p - r](b) - [a p - r](0, b_-i) = int_0^{b_i} a_i`,
///   which characterises mechanisms where the coalition cannot gain;
/// * the coalition's joint utility over a bid grid is maximised by the
///   truthful bid.
pub fn scp1_audit<M: Mechanism + ?Sized>(mech: &M, cfg: &Scp1Config) -> Result<AuditReport> {
    let n = mech.num_users();
    let grid = bid_grid(cfg.grid_points);
    type Row = (f64, f64, usize, f64, BidVector);
    let parts: Vec<Result<Vec<Row>>> = chunks(cfg.trials)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(cfg.seed, stream);
            let mut rows = Vec::with_capacity(len);
            for _ in 0..len {
                let i = rng.random_range(0..n);
                let b = random_profile(&mut rng, n);
                let v = b[i];
                let joint = |t: f64| -> Result<f64> {
                    let bt = b.with_bid(i, t);
                    let (a, c) = alloc_and_charge(mech, &bt, i)?;
                    Ok(a * v - c + mech.revenue(&bt)?)
                };
                let kept = |t: f64| -> Result<f64> {
                    let bt = b.with_bid(i, t);
                    let (_, c) = alloc_and_charge(mech, &bt, i)?;
                    Ok(c - mech.revenue(&bt)?)
                };
                let lhs = kept(v)? - kept(0.0)?;
                // Simpson rather than the Gauss rule behind quadrature
                // payments, so the identity is not checked against itself
                let slice = |t: f64| mech.allocation_of(&b.with_bid(i, t), i).unwrap_or(f64::NAN);
                let rhs = v * slice(v) - adaptive_simpson(slice, 0.0, v, cfg.quadrature_tolerance);
                let residual = (lhs - rhs).abs();
                let truthful = joint(v)?;
                let mut gain = f64::NEG_INFINITY;
                for &t in &grid {
                    gain = gain.max(joint(t)? - truthful);
                }
                rows.push((residual, gain, i, v, b));
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::with_capacity(cfg.trials);
    for p in parts {
        rows.extend(p?);
    }
    let worst_residual = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_gain = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mut evidence = Vec::new();
    if let Some(r) = rows.iter().max_by(|x, y| x.0.total_cmp(&y.0)) {
        evidence.push(Evidence::new(
            format!(
                "identity user={} value={:.6} bids={}",
                r.2,
                r.3,
                fmt_bids(r.4.as_slice())
            ),
            r.0,
            0.0,
        ));
    }
    if let Some(r) = rows.iter().max_by(|x, y| x.1.total_cmp(&y.1)) {
        evidence.push(Evidence::new(
            format!(
                "joint user={} value={:.6} bids={}",
                r.2,
                r.3,
                fmt_bids(r.4.as_slice())
            ),
            r.1,
            0.0,
        ));
    }
    Ok(AuditReport::new(
        Property::Scp1,
        mech.name(),
        vec![
            Check::new(
                "revenue identity residual",
                worst_residual,
                cfg.identity_tolerance,
                0.0,
            ),
            Check::new(
                "joint utility gain over grid",
                worst_gain,
                cfg.behavioural_slack,
                0.0,
            ),
        ],
        evidence,
        Seeds::random(cfg.seed, chunks(cfg.trials).len() as u64),
    ))
}
