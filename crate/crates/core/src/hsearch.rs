//! Search for the largest perturbation scale `h` that keeps the perturbed
//! mechanism individually rational and budget feasible.
//!
//! For a fixed profile every slack is affine in `h`:
//! `b_i - p~_i = (b_i - p_i) - h theta1_i / a_i` and
//! `sum a_i p~_i - r~ = sum a_i p_i - h (r1 - sum theta1_i)`, where
//! `theta1` and `r1` are the variation term at `h = 1`. The search caches
//! this decomposition for a fixed candidate set and refines the worst
//! candidate by coordinate search at each `h` it visits.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::ValuationDistribution;
use crate::error::{Error, Result};
use crate::mech::{BidVector, MechanismParams};
use crate::ssp_k::{monte_carlo_outcome, prefix_count, SoftSecondPriceK, ENUMERATION_LIMIT};
use crate::ssp_k1::{alloc_k1, payments_k1, VariationTerm};
use crate::stats::{chunks, substream, Estimate, Moments, CHUNK};
use crate::Mechanism;

/// Slack below which a profile counts as infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Largest `h` tried before the search gives up on bracketing.
pub const MAX_BRACKET: f64 = 1e6;

/// Settings of the violation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Random candidate profiles.
    pub budget: usize,
    pub seed: u64,
    /// Every corner of `[0, 1]^n` is a candidate when `n` is at most this.
    pub corner_limit: usize,
    /// Shrinking step sizes of the coordinate search.
    pub ascent_steps: usize,
    /// Draws per profile when payments must be estimated.
    pub monte_carlo_draws: usize,
    /// Standard errors subtracted from estimated slacks.
    pub z: f64,
}

impl SearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            seed,
            corner_limit: 12,
            ascent_steps: 20,
            monte_carlo_draws: 4096,
            z: 3.0,
        }
    }
}

/// The slacks of one profile as `A - h B`.
#[derive(Debug, Clone, PartialEq)]
struct AffineSlack {
    /// Per confirmed-with-positive-probability user.
    uir: Vec<(usize, f64, f64)>,
    bf: (f64, f64),
}

impl AffineSlack {
    fn worst_uir(&self, h: f64) -> f64 {
        self.uir
            .iter()
            .map(|&(_, a, b)| a - h * b)
            .fold(f64::INFINITY, f64::min)
    }

    fn bf_at(&self, h: f64) -> f64 {
        self.bf.0 - h * self.bf.1
    }
}

/// How the base payments are obtained.
#[derive(Debug, Clone)]
enum Evaluator {
    Logit,
    Exact(SoftSecondPriceK),
    MonteCarlo,
}

/// Which constraint a witness violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Uir,
    Bf,
}

/// Worst profile found for one constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub constraint: Constraint,
    pub slack: f64,
    pub bids: BidVector,
}

/// Outcome of one oracle call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub h: f64,
    /// Smallest slack over both constraints.
    pub worst: f64,
    pub uir: Witness,
    pub bf: Witness,
    /// Profiles evaluated, including those of the coordinate search.
    pub evaluations: usize,
}

impl OracleResult {
    pub fn feasible(&self) -> bool {
        self.worst >= -FEASIBILITY_TOL
    }
}

/// Cached candidate set for one parameter choice.
pub struct WitnessSearch {
    params: MechanismParams,
    cfg: SearchConfig,
    eval: Evaluator,
    candidates: Vec<(BidVector, AffineSlack)>,
}

impl WitnessSearch {
    /// Builds the candidate set: all corners for small `n`, the diagonal
    /// profiles `(t, ..., t)` and `cfg.budget` uniform profiles.
    pub fn new(params: &MechanismParams, cfg: &SearchConfig) -> Result<Self> {
        params.validate()?;
        if params.n < 2 {
            return Err(Error::TooFewUsers(params.n));
        }
        let eval = if params.k == 1 {
            Evaluator::Logit
        } else if prefix_count(params.n, params.k) <= ENUMERATION_LIMIT {
            Evaluator::Exact(SoftSecondPriceK::new(params.n, params.k, params.m)?)
        } else {
            Evaluator::MonteCarlo
        };
        let mut search = Self {
            params: *params,
            cfg: *cfg,
            eval,
            candidates: Vec::new(),
        };
        let n = params.n;
        let mut profiles = Vec::new();
        if n <= cfg.corner_limit {
            for mask in 0u32..(1 << n) {
                profiles.push(BidVector::from_unchecked(
                    (0..n).map(|j| f64::from((mask >> j) & 1)).collect(),
                ));
            }
        }
        for j in 1..=20 {
            profiles.push(BidVector::from_unchecked(vec![j as f64 / 20.0; n]));
        }
        for (stream, len) in chunks(cfg.budget) {
            let mut rng = substream(cfg.seed, stream);
            for _ in 0..len {
                profiles.push(BidVector::from_unchecked(
                    (0..n).map(|_| rng.random::<f64>()).collect(),
                ));
            }
        }
        let decomposed: Vec<Result<AffineSlack>> =
            profiles.par_iter().map(|b| search.decompose(b)).collect();
        for (b, d) in profiles.into_iter().zip(decomposed) {
            search.candidates.push((b, d?));
        }
        Ok(search)
    }

    pub fn params(&self) -> &MechanismParams {
        &self.params
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    fn decompose(&self, b: &BidVector) -> Result<AffineSlack> {
        let p = &self.params;
        let unit = VariationTerm::new(1.0, p.c)?;
        let theta1 = unit.theta_all(b)?;
        let r1 = unit.revenue(b)?;
        let theta_sum: f64 = theta1.iter().sum();
        let (alloc, uir_base, charged): (Vec<f64>, Vec<f64>, f64) = match &self.eval {
            Evaluator::Logit => {
                let a = alloc_k1(b, p.m).into_inner();
                let pay = payments_k1(b, p.m);
                let charged = a.iter().zip(&pay).map(|(x, y)| x * y).sum();
                let slack = b.iter().zip(&pay).map(|(bi, pi)| bi - pi).collect();
                (a, slack, charged)
            }
            Evaluator::Exact(mech) => {
                let a = mech.allocation(b)?.into_inner();
                let pay = mech.payments(b)?;
                let charged = a.iter().zip(&pay).map(|(x, y)| x * y).sum();
                let slack = b.iter().zip(&pay).map(|(bi, pi)| bi - pi).collect();
                (a, slack, charged)
            }
            Evaluator::MonteCarlo => {
                // common random numbers across profiles
                let mc =
                    monte_carlo_outcome(b, p.k, p.m, self.cfg.monte_carlo_draws, self.cfg.seed)?;
                let z = self.cfg.z;
                let a: Vec<f64> = mc.users.iter().map(|u| u.alloc.mean).collect();
                let slack = mc
                    .users
                    .iter()
                    .map(|u| {
                        if u.alloc.mean > 0.0 {
                            (u.surplus.mean - z * u.surplus.se) / u.alloc.mean
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (a, slack, mc.total_payment.mean - z * mc.total_payment.se)
            }
        };
        let uir = alloc
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .map(|(i, &a)| (i, uir_base[i], theta1[i] / a))
            .collect();
        Ok(AffineSlack {
            uir,
            bf: (charged, r1 - theta_sum),
        })
    }

    /// Worst slacks at scale `h`: the worst cached candidate per
    /// constraint, then coordinate search from it.
    pub fn oracle(&self, h: f64) -> Result<OracleResult> {
        let mut evaluations = self.candidates.len();
        let pick = |f: &dyn Fn(&AffineSlack) -> f64| {
            self.candidates
                .iter()
                .map(|(b, d)| (f(d), b))
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .map(|(v, b)| (v, b.clone()))
                .expect("candidate set is never empty")
        };
        let uir_start = pick(&|d| d.worst_uir(h));
        let bf_start = pick(&|d| d.bf_at(h));
        let (uir_best, e1) = self.descend(uir_start, h, Constraint::Uir)?;
        let (bf_best, e2) = self.descend(bf_start, h, Constraint::Bf)?;
        evaluations += e1 + e2;
        Ok(OracleResult {
            h,
            worst: uir_best.0.min(bf_best.0),
            uir: Witness {
                constraint: Constraint::Uir,
                slack: uir_best.0,
                bids: uir_best.1,
            },
            bf: Witness {
                constraint: Constraint::Bf,
                slack: bf_best.0,
                bids: bf_best.1,
            },
            evaluations,
        })
    }

    fn slack_of(&self, b: &BidVector, h: f64, which: Constraint) -> Result<f64> {
        let d = self.decompose(b)?;
        Ok(match which {
            Constraint::Uir => d.worst_uir(h),
            Constraint::Bf => d.bf_at(h),
        })
    }

    /// Coordinate search minimising one slack, with step sizes halving
    /// from 1/4 over `ascent_steps` rounds.
    fn descend(
        &self,
        (mut best, mut b): (f64, BidVector),
        h: f64,
        which: Constraint,
    ) -> Result<((f64, BidVector), usize)> {
        let mut evals = 0;
        let mut step = 0.25;
        for _ in 0..self.cfg.ascent_steps {
            for j in 0..b.len() {
                for dir in [1.0, -1.0] {
                    let t = (b[j] + dir * step).clamp(0.0, 1.0);
                    if t == b[j] {
                        continue;
                    }
                    let trial = b.with_bid(j, t);
                    let v = self.slack_of(&trial, h, which)?;
                    evals += 1;
                    if v < best {
                        best = v;
                        b = trial;
                    }
                }
            }
            step *= 0.5;
        }
        Ok(((best, b), evals))
    }
}

/// Worst rationality and budget slack found for `params` (including its
/// `h`) with `budget` random candidates.
pub fn violation_oracle(
    params: &MechanismParams,
    budget: usize,
    seed: u64,
) -> Result<OracleResult> {
    WitnessSearch::new(params, &SearchConfig::new(budget, seed))?.oracle(params.h)
}

/// Result of the feasibility search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Largest `h` the search could not refute. Since the search only finds
    /// violations it can reach, this is an upper-bound estimate of the
    /// true feasibility limit.
    pub h_star: f64,
    /// `(feasible, infeasible)` scales bracketing `h_star`.
    pub bisection_bracket: (f64, f64),
    /// Worst rationality witness at the infeasible end of the bracket.
    pub worst_uir_witness: Witness,
    /// Worst budget witness at the infeasible end of the bracket.
    pub worst_bf_witness: Witness,
    /// Expected miner revenue at `h_star` under the prior.
    pub revenue_at_h_star: Estimate,
    /// `n c h_star / 4`.
    pub revenue_formula: f64,
    pub oracle_calls: usize,
    pub candidates: usize,
    /// Hash of the parameters and search settings.
    pub config_hash: String,
}

/// Settings of [`h_star_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HSearchConfig {
    pub search: SearchConfig,
    /// Absolute bracket width at which bisection stops.
    pub tolerance: f64,
    /// Relative bracket width at which bisection stops.
    pub relative_tolerance: f64,
    /// Prior samples for the revenue estimate.
    pub revenue_samples: usize,
}

impl HSearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            search: SearchConfig::new(budget, seed),
            tolerance: 1e-4,
            relative_tolerance: 2e-4,
            revenue_samples: 100_000,
        }
    }
}

/// Brackets and bisects the largest feasible `h` for `params` (its own
/// `h` is ignored), then estimates the revenue there under `dist`.
pub fn h_star_estimate(
    params: &MechanismParams,
    dist: &ValuationDistribution,
    cfg: &HSearchConfig,
) -> Result<FeasibilityReport> {
    let search = WitnessSearch::new(params, &cfg.search)?;
    let mut calls = 0;
    let mut probe = |h: f64| -> Result<OracleResult> {
        calls += 1;
        search.oracle(h)
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut at_hi = probe(hi)?;
    while at_hi.feasible() {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_BRACKET {
            return Err(Error::BracketFailure(hi));
        }
        at_hi = probe(hi)?;
    }
    for _ in 0..200 {
        let width = hi - lo;
        if width <= cfg.tolerance && width <= cfg.relative_tolerance * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let r = probe(mid)?;
        if r.feasible() {
            lo = mid;
        } else {
            hi = mid;
            at_hi = r;
        }
    }
    let h_star = lo;
    let revenue = revenue_estimate(
        &params.with_h(h_star),
        dist,
        cfg.revenue_samples,
        cfg.search.seed,
        0,
    )?;
    Ok(FeasibilityReport {
        h_star,
        bisection_bracket: (lo, hi),
        worst_uir_witness: at_hi.uir,
        worst_bf_witness: at_hi.bf,
        revenue_at_h_star: revenue,
        revenue_formula: 0.25 * h_star * params.n as f64 * params.c,
        oracle_calls: calls,
        candidates: search.candidate_count(),
        config_hash: config_hash(params, cfg),
    })
}

/// FNV-1a over the debug rendering of the inputs.
fn config_hash(params: &MechanismParams, cfg: &HSearchConfig) -> String {
    let text = format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}",
        params.n, params.k, params.m, params.c, cfg
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Monte Carlo estimate of `E[r~(b)]` with `b` drawn from the prior.
/// `row` selects an independent family of substreams.
pub fn revenue_estimate(
    params: &MechanismParams,
    dist: &ValuationDistribution,
    samples: usize,
    seed: u64,
    row: u64,
) -> Result<Estimate> {
    let term = VariationTerm::from_params(params)?;
    let n = params.n;
    let stride = (u64::MAX / 2) / (CHUNK as u64);
    let parts: Vec<Result<Moments>> = chunks(samples)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(seed, row.wrapping_mul(stride).wrapping_add(stream));
            let mut m = Moments::default();
            let mut bids = vec![0.0; n];
            for _ in 0..len {
                dist.sample_into(&mut rng, &mut bids);
                m.push(term.revenue(&BidVector::from_unchecked(bids.clone()))?);
            }
            Ok(m)
        })
        .collect();
    let mut total = Moments::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.estimate())
}

/// One row of a revenue study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub n: usize,
    pub k: usize,
    pub h: f64,
    pub c: f64,
    pub estimate: f64,
    pub se: f64,
    /// `n c h / 4`.
    pub formula: f64,
    /// Revenue per block slot, `estimate / k`.
    pub per_slot: f64,
}

/// Expected revenue for each parameter choice, next to `n c h / 4`.
pub fn revenue_study(
    rows: &[MechanismParams],
    dist: &ValuationDistribution,
    samples: usize,
    seed: u64,
) -> Result<Vec<RevenueRow>> {
    rows.iter()
        .enumerate()
        .map(|(idx, p)| {
            p.validate()?;
            let e = revenue_estimate(p, dist, samples, seed, idx as u64)?;
            Ok(RevenueRow {
                n: p.n,
                k: p.k,
                h: p.h,
                c: p.c,
                estimate: e.mean,
                se: e.se,
                formula: 0.25 * p.h * p.n as f64 * p.c,
                per_slot: e.mean / p.k as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::uir_bf_check;
    use crate::ssp_k1::SoftSecondPriceK1;

    fn params(n: usize, h: f64) -> MechanismParams {
        MechanismParams::new(n, 1, 1.0, h, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn decomposition_matches_direct_slacks() {
        let p = params(4, 0.37);
        let search = WitnessSearch::new(&p, &SearchConfig::new(10, 1)).unwrap();
        let b = BidVector::new(vec![0.9, 0.2, 0.55, 0.0]).unwrap();
        let d = search.decompose(&b).unwrap();
        let direct = uir_bf_check(&SoftSecondPriceK1::framed(&p).unwrap(), &b).unwrap();
        assert!((d.bf_at(p.h) - direct.bf).abs() < 1e-12);
        for &(i, _, _) in &d.uir {
            let got = d
                .uir
                .iter()
                .find(|u| u.0 == i)
                .map(|u| u.1 - p.h * u.2)
                .unwrap();
            assert!((got - direct.uir[i].unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scale_is_feasible() {
        let r = violation_oracle(&params(5, 0.0), 200, 3).unwrap();
        assert!(r.feasible(), "{r:?}");
    }

    #[test]
    fn large_scale_is_infeasible() {
        let r = violation_oracle(&params(5, 50.0), 200, 3).unwrap();
        assert!(!r.feasible());
    }

    #[test]
    fn hash_is_stable() {
        let cfg = HSearchConfig::new(10, 1);
        assert_eq!(
            config_hash(&params(5, 0.0), &cfg),
            config_hash(&params(5, 0.7), &cfg)
        );
        assert_ne!(
            config_hash(&params(5, 0.0), &cfg),
            config_hash(&params(6, 0.0), &cfg)
        );
    }
}
