//! Soft second-price mechanism for block size `k`: `k` rounds of logit
//! choice without replacement.
//!
//! The confirmation probability of user `i` is the sum over rounds `t` and
//! over ordered `(t-1)`-prefixes of other users of the probability that the
//! draw starts with that prefix and then picks `i`. Exact evaluation
//! enumerates those prefixes and is guarded by [`ENUMERATION_LIMIT`]; beyond
//! it, allocations and expected payments are estimated by Monte Carlo.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::{
    check_len, check_user, myerson_payment, AllocationVector, BidVector, Mechanism, MechanismParams,
};
use crate::ssp_k1::{Perturbed, VariationTerm};
use crate::stats::{chunks, substream, Estimate, Moments};

/// Largest number of ordered prefixes enumerated per user.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Default absolute tolerance of quadrature payments.
pub const DEFAULT_PAYMENT_TOL: f64 = 1e-8;

/// Users confirmed in order of selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOutcome {
    pub order: Vec<usize>,
}

fn check_block(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("block size must satisfy 1 <= k <= n = {n}"),
        });
    }
    Ok(())
}

fn check_m(m: f64) -> Result<()> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: "must be finite and >= 0".into(),
        });
    }
    Ok(())
}

/// Weights `e^{m (b_j - ref)}`; the allocation is invariant to `ref`.
fn weights(b: &[f64], m: f64, reference: f64) -> Vec<f64> {
    b.iter().map(|x| (m * (x - reference)).exp()).collect()
}

fn max_bid(b: &[f64]) -> f64 {
    b.iter().cloned().fold(0.0, f64::max)
}

/// Draws one block: `k` rounds, each picking a remaining user with
/// probability proportional to `e^{m b_i}`.
pub fn draw_block<R: Rng + ?Sized>(
    b: &BidVector,
    k: usize,
    m: f64,
    rng: &mut R,
) -> Result<SamplingOutcome> {
    check_block(b.len(), k)?;
    check_m(m)?;
    let mut w = weights(b.as_slice(), m, max_bid(b.as_slice()));
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = None;
        for (j, &wj) in w.iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            pick = Some(j);
            if target < wj {
                break;
            }
            target -= wj;
        }
        // rounding can leave `target` past the last weight; keep the last live user
        let j = pick.expect("a live user remains while fewer than n are drawn");
        order.push(j);
        w[j] = 0.0;
    }
    Ok(SamplingOutcome { order })
}

/// `sum_{t=1..k} (n-1)! / (n-t)!`, the ordered prefixes behind one user's
/// confirmation probability.
pub fn prefix_count(n: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut term: u128 = 1;
    for t in 1..=k {
        if t > 1 {
            term = term.saturating_mul((n - t + 1) as u128);
        }
        total = total.saturating_add(term);
    }
    total
}

fn guard(n: usize, k: usize) -> Result<()> {
    let required = prefix_count(n, k);
    if required > ENUMERATION_LIMIT {
        return Err(Error::SizeGuard {
            required,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Exact confirmation probabilities by prefix enumeration.
pub fn alloc_exact(b: &BidVector, k: usize, m: f64) -> Result<AllocationVector> {
    let n = b.len();
    check_block(n, k)?;
    check_m(m)?;
    guard(n, k)?;
    if k == n {
        return Ok(AllocationVector::new(vec![1.0; n]));
    }
    let w = weights(b.as_slice(), m, max_bid(b.as_slice()));
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; n];
    let mut used = vec![false; n];
    enumerate_rounds(&w, &mut used, 1.0, total, 0, k, &mut out);
    Ok(AllocationVector::new(out))
}

fn enumerate_rounds(
    w: &[f64],
    used: &mut [bool],
    prob: f64,
    remaining: f64,
    depth: usize,
    k: usize,
    out: &mut [f64],
) {
    for j in 0..w.len() {
        if used[j] {
            continue;
        }
        let p = prob * w[j] / remaining;
        out[j] += p;
        if depth + 1 < k {
            used[j] = true;
            let rest = (remaining - w[j]).max(f64::MIN_POSITIVE);
            enumerate_rounds(w, used, p, rest, depth + 1, k, out);
            used[j] = false;
        }
    }
}

/// The allocation of one user as a function of its own bid, with every
/// other bid fixed. Other users' weights and their total are computed once
/// and shared by all evaluations.
#[derive(Debug, Clone)]
pub struct AllocationSlice {
    others: Vec<f64>,
    others_total: f64,
    reference: f64,
    k: usize,
    m: f64,
}

impl AllocationSlice {
    pub fn new(b: &BidVector, i: usize, k: usize, m: f64) -> Result<Self> {
        let n = b.len();
        check_user(b, i)?;
        check_block(n, k)?;
        check_m(m)?;
        guard(n, k)?;
        let rest: Vec<f64> = b
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, x)| x)
            .collect();
        let reference = max_bid(&rest);
        let others = weights(&rest, m, reference);
        let others_total = others.iter().sum();
        Ok(Self {
            others,
            others_total,
            reference,
            k,
            m,
        })
    }

    /// `a_i(t, b_-i)`.
    pub fn eval(&self, t: f64) -> f64 {
        if self.k > self.others.len() {
            return 1.0;
        }
        let w = (self.m * (t - self.reference)).exp();
        let mut used = vec![false; self.others.len()];
        self.descend(&mut used, 1.0, self.others_total, 0, w)
    }

    fn descend(&self, used: &mut [bool], prob: f64, remaining: f64, depth: usize, w: f64) -> f64 {
        let denom = remaining + w;
        let mut total = prob * w / denom;
        if depth + 1 < self.k {
            for j in 0..self.others.len() {
                if used[j] {
                    continue;
                }
                let wj = self.others[j];
                used[j] = true;
                let rest = (remaining - wj).max(0.0);
                total += self.descend(used, prob * wj / denom, rest, depth + 1, w);
                used[j] = false;
            }
        }
        total
    }
}

/// Myerson payment-if-confirmed of user `i` by quadrature over its slice.
pub fn pay_k(b: &BidVector, i: usize, k: usize, m: f64, tol: f64) -> Result<f64> {
    let slice = AllocationSlice::new(b, i, k, m)?;
    myerson_payment(|t| slice.eval(t), b[i], tol)
}

/// Zero-revenue soft second-price mechanism with block size `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftSecondPriceK {
    n: usize,
    k: usize,
    m: f64,
    tol: f64,
}

impl SoftSecondPriceK {
    pub fn new(n: usize, k: usize, m: f64) -> Result<Self> {
        MechanismParams::new(n, k, m, 0.0, 1.0)?;
        guard(n, k)?;
        Ok(Self {
            n,
            k,
            m,
            tol: DEFAULT_PAYMENT_TOL,
        })
    }

    pub fn with_tolerance(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// The mechanism plus the variation term of `params`.
    pub fn framed(params: &MechanismParams) -> Result<Perturbed<Self>> {
        params.validate()?;
        Perturbed::new(
            Self::new(params.n, params.k, params.m)?,
            VariationTerm::from_params(params)?,
        )
    }
}

impl Mechanism for SoftSecondPriceK {
    fn name(&self) -> String {
        format!(
            "soft-second-price(n={}, k={}, m={})",
            self.n, self.k, self.m
        )
    }

    fn num_users(&self) -> usize {
        self.n
    }

    fn block_size(&self) -> Option<usize> {
        Some(self.k)
    }

    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        check_len(b, self.n)?;
        alloc_exact(b, self.k, self.m)
    }

    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        check_len(b, self.n)?;
        (0..self.n)
            .map(|i| pay_k(b, i, self.k, self.m, self.tol))
            .collect()
    }

    fn revenue(&self, b: &BidVector) -> Result<f64> {
        check_len(b, self.n)?;
        Ok(0.0)
    }

    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        check_len(b, self.n)?;
        Ok(AllocationSlice::new(b, i, self.k, self.m)?.eval(b[i]))
    }

    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        check_len(b, self.n)?;
        let slice = AllocationSlice::new(b, i, self.k, self.m)?;
        let a = slice.eval(b[i]);
        let p = myerson_payment(|t| slice.eval(t), b[i], self.tol)?;
        Ok((a, p))
    }
}

/// Monte Carlo allocation with per-user standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloAllocation {
    pub probs: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub draws: usize,
}

/// Empirical confirmation frequencies over `draws` blocks drawn by
/// [`draw_block`] on independent substreams of `seed`.
pub fn alloc_monte_carlo(
    b: &BidVector,
    k: usize,
    m: f64,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloAllocation> {
    let n = b.len();
    check_block(n, k)?;
    check_m(m)?;
    let counts: Vec<Vec<u64>> = chunks(draws)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(seed, stream);
            let mut c = vec![0u64; n];
            for _ in 0..len {
                for j in draw_block(b, k, m, &mut rng)?.order {
                    c[j] += 1;
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0u64; n];
    for c in counts {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    let d = draws.max(1) as f64;
    let probs: Vec<f64> = total.iter().map(|&c| c as f64 / d).collect();
    let std_errors = probs.iter().map(|p| (p * (1.0 - p) / d).sqrt()).collect();
    Ok(MonteCarloAllocation {
        probs,
        std_errors,
        draws,
    })
}

/// Monte Carlo estimates for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserEstimate {
    /// `a_i(b)`.
    pub alloc: Estimate,
    /// `a_i(b) p_i(b)`.
    pub expected_payment: Estimate,
    /// `a_i(b) (b_i - p_i(b))`.
    pub surplus: Estimate,
}

/// Monte Carlo outcome of the Myerson mechanism for large instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub users: Vec<UserEstimate>,
    /// `sum_i a_i p_i`.
    pub total_payment: Estimate,
    pub draws: usize,
}

/// Estimates allocations and Myerson expected payments without
/// enumeration.
///
/// Successive logit sampling is realised by exponential clocks
/// `T_j = E_j / w_j`; the first `k` to ring are confirmed. With the other
/// clocks fixed, user `i` is confirmed iff its bid exceeds a threshold, so
/// each draw contributes the exact Myerson payment of that draw: the
/// threshold bid, floored at zero.
pub fn monte_carlo_outcome(
    b: &BidVector,
    k: usize,
    m: f64,
    draws: usize,
    seed: u64,
) -> Result<MonteCarloOutcome> {
    let n = b.len();
    check_block(n, k)?;
    check_m(m)?;
    if m == 0.0 {
        // no dependence on bids: confirmation k/n, nothing is paid
        let a = k as f64 / n as f64;
        let users = b
            .iter()
            .map(|x| UserEstimate {
                alloc: Estimate { mean: a, se: 0.0 },
                expected_payment: Estimate { mean: 0.0, se: 0.0 },
                surplus: Estimate {
                    mean: a * x,
                    se: 0.0,
                },
            })
            .collect();
        return Ok(MonteCarloOutcome {
            users,
            total_payment: Estimate { mean: 0.0, se: 0.0 },
            draws,
        });
    }
    type Acc = (Vec<[Moments; 3]>, Moments);
    let parts: Vec<Acc> = chunks(draws)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(seed, stream);
            let mut acc: Vec<[Moments; 3]> = vec![[Moments::default(); 3]; n];
            let mut tot = Moments::default();
            let mut clocks: Vec<(f64, usize)> = vec![(0.0, 0); n];
            for _ in 0..len {
                for (j, c) in clocks.iter_mut().enumerate() {
                    let u: f64 = rng.random();
                    // ln T_j = ln E_j - m b_j with E_j = -ln(1 - u)
                    *c = ((-(-u).ln_1p()).ln() - m * b[j], j);
                }
                clocks.sort_by(|x, y| x.0.total_cmp(&y.0));
                let cutoff = clocks.get(k).map(|c| c.0);
                let mut confirmed = vec![None; n];
                for &(ln_t, j) in &clocks[..k] {
                    let threshold = match cutoff {
                        Some(ln_cut) => (b[j] + (ln_t - ln_cut) / m).max(0.0),
                        None => 0.0,
                    };
                    confirmed[j] = Some(threshold);
                }
                let mut sum_pay = 0.0;
                for j in 0..n {
                    let (hit, pay) = match confirmed[j] {
                        Some(t) => (1.0, t),
                        None => (0.0, 0.0),
                    };
                    acc[j][0].push(hit);
                    acc[j][1].push(pay);
                    acc[j][2].push(hit * b[j] - pay);
                    sum_pay += pay;
                }
                tot.push(sum_pay);
            }
            (acc, tot)
        })
        .collect();
    let mut acc: Vec<[Moments; 3]> = vec![[Moments::default(); 3]; n];
    let mut tot = Moments::default();
    for (part, t) in &parts {
        for (a, p) in acc.iter_mut().zip(part) {
            for q in 0..3 {
                a[q].merge(&p[q]);
            }
        }
        tot.merge(t);
    }
    Ok(MonteCarloOutcome {
        users: acc
            .iter()
            .map(|a| UserEstimate {
                alloc: a[0].estimate(),
                expected_payment: a[1].estimate(),
                surplus: a[2].estimate(),
            })
            .collect(),
        total_payment: tot.estimate(),
        draws,
    })
}

/// Constants of the derivative lower bound for general `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConstants {
    pub lambda0: f64,
    /// Prescribed logit sharpness `m_#(lambda0)`.
    pub m_sharp: f64,
    /// `D(m_#, lambda0)`.
    pub d_value: f64,
    /// `f(lambda0) = m D e^{-m} e^{-e^m / (lambda0 - 1)}` at `m = m_#`.
    pub f_value: f64,
}

/// `e / (e - 1)`, the smallest admissible users-per-slot ratio.
pub fn lambda_min() -> f64 {
    let e = std::f64::consts::E;
    e / (e - 1.0)
}

/// `D(m, lambda) = 1 - e^m ln(lambda / (lambda - 1))`.
pub fn d_value(m: f64, lambda: f64) -> f64 {
    1.0 - m.exp() * (lambda / (lambda - 1.0)).ln()
}

pub fn threshold_constants(lambda0: f64) -> Result<ThresholdConstants> {
    if !lambda0.is_finite() || lambda0 <= lambda_min() {
        return Err(Error::ThresholdDomain(lambda0));
    }
    let ln_ratio = (lambda0 / (lambda0 - 1.0)).ln();
    let m_sharp = (0.5 * (1.0 / ln_ratio).ln()).min(1.0);
    let d = d_value(m_sharp, lambda0);
    let f = m_sharp * d * (-m_sharp).exp() * (-(m_sharp.exp()) / (lambda0 - 1.0)).exp();
    Ok(ThresholdConstants {
        lambda0,
        m_sharp,
        d_value: d,
        f_value: f,
    })
}

/// Lower bound `(k/n) m D(m, n/k) e^{-m} e^{-e^m k/(n-k)}` on
/// `da_i/db_i`, up to a `1 - o(1)` factor. Requires `n > k`.
pub fn derivative_floor(n: usize, k: usize, m: f64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    kf / nf * m * d_value(m, nf / kf) * (-m).exp() * (-(m.exp()) * kf / (nf - kf)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssp_k1::{alloc_k1, pay_k1};

    fn bids(v: &[f64]) -> BidVector {
        BidVector::new(v.to_vec()).unwrap()
    }

    /// weights (2, 1, 1) at m = 1
    fn two_one_one() -> BidVector {
        bids(&[2f64.ln(), 0.0, 0.0])
    }

    #[test]
    fn full_block_is_a_permutation() {
        let b = bids(&[0.1, 0.5, 0.9, 0.3]);
        let out = draw_block(&b, 4, 2.0, &mut substream(5, 0)).unwrap();
        let mut o = out.order.clone();
        o.sort();
        assert_eq!(o, vec![0, 1, 2, 3]);
    }

    #[test]
    fn exact_hand_enumeration() {
        // delta_1(1) = 1/2, delta_2(1) = 1/4 * 2/3 * 2 = 1/3
        let a = alloc_exact(&two_one_one(), 2, 1.0).unwrap();
        let want = [5.0 / 6.0, 7.0 / 12.0, 7.0 / 12.0];
        for (x, y) in a.probs().iter().zip(want) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn equal_bids_give_k_over_n() {
        let a = alloc_exact(&bids(&[0.4; 3]), 2, 3.0).unwrap();
        assert!(a.probs().iter().all(|x| (x - 2.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn block_one_is_logit() {
        let b = bids(&[0.2, 0.75, 0.5, 0.01]);
        let exact = alloc_exact(&b, 1, 2.5).unwrap();
        let logit = alloc_k1(&b, 2.5);
        for (x, y) in exact.probs().iter().zip(logit.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_matches_full_enumeration() {
        let b = bids(&[0.2, 0.75, 0.5, 0.01, 0.66]);
        let full = alloc_exact(&b, 3, 1.3).unwrap();
        for i in 0..5 {
            let s = AllocationSlice::new(&b, i, 3, 1.3).unwrap();
            assert!((s.eval(b[i]) - full.get(i)).abs() < 1e-13);
        }
    }

    #[test]
    fn prefix_counts() {
        assert_eq!(prefix_count(5, 1), 1);
        assert_eq!(prefix_count(5, 3), 1 + 4 + 12);
        assert!(prefix_count(40, 20) > ENUMERATION_LIMIT);
        let b = BidVector::new(vec![0.5; 40]).unwrap();
        assert!(matches!(
            alloc_exact(&b, 20, 1.0),
            Err(Error::SizeGuard { .. })
        ));
        assert!(matches!(
            pay_k(&b, 0, 20, 1.0, 1e-6),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn payment_edge_cases() {
        let b = bids(&[0.0, 0.4, 0.9]);
        assert_eq!(pay_k(&b, 0, 2, 1.0, 1e-8).unwrap(), 0.0);
        for i in 0..3 {
            assert!(pay_k(&b, i, 3, 1.0, 1e-8).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn block_one_payment_matches_closed_form() {
        let b = bids(&[0.3, 0.85, 0.1, 0.64]);
        for i in 0..4 {
            let q = pay_k(&b, i, 1, 2.0, 1e-10).unwrap();
            assert!((q - pay_k1(&b, i, 2.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn threshold_constants_at_two() {
        let t = threshold_constants(2.0).unwrap();
        // 0.5 ln(1/ln 2) and 1 - e^{m} ln 2
        let m = 0.5 * (1.0 / 2f64.ln()).ln();
        assert!((t.m_sharp - m).abs() < 1e-15);
        assert!((t.m_sharp - 0.1833).abs() < 5e-5);
        assert!((t.d_value - 0.1674).abs() < 1e-4, "{}", t.d_value);
        assert!(t.f_value > 0.0);
        assert!(matches!(
            threshold_constants(1.5),
            Err(Error::ThresholdDomain(_))
        ));
    }

    #[test]
    fn threshold_constants_near_boundary() {
        let t = threshold_constants(lambda_min() * (1.0 + 1e-9)).unwrap();
        assert!(t.m_sharp < 1e-4 && t.m_sharp > 0.0);
        assert!(t.d_value > 0.0 && t.d_value < 1e-4);
        // m_# caps at 1 for large lambda0
        assert_eq!(threshold_constants(100.0).unwrap().m_sharp, 1.0);
    }

    #[test]
    fn clock_estimator_agrees_with_exact() {
        let b = bids(&[0.2, 0.75, 0.5, 0.01, 0.66]);
        let (k, m) = (2, 2.0);
        let exact = alloc_exact(&b, k, m).unwrap();
        let mc = monte_carlo_outcome(&b, k, m, 200_000, 9).unwrap();
        for i in 0..5 {
            let u = mc.users[i];
            assert!(u.alloc.covers(exact.get(i), 4.0), "alloc {i}");
            let p = pay_k(&b, i, k, m, 1e-10).unwrap();
            assert!(
                u.expected_payment.covers(exact.get(i) * p, 4.0),
                "payment {i}"
            );
        }
    }
}
