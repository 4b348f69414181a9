//! Soft second-price mechanism for block size one, the quadratic
//! variation term `(theta, r~)` and the perturbed mechanism built from them.
//!
//! All exponentials go through log-sum-exp so that `m` in the thousands
//! neither overflows nor loses the payment to cancellation.

use crate::error::{Error, Result};
use crate::mech::{check_len, check_user, AllocationVector, BidVector, Mechanism, MechanismParams};
use crate::stats::KahanSum;

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(ln(1 + e^x))`.
fn ln_softplus(x: f64) -> f64 {
    if x > 30.0 {
        (x + (-x).exp().ln_1p()).ln()
    } else if x < -30.0 {
        x - 0.5 * x.exp()
    } else {
        x.exp().ln_1p().ln()
    }
}

/// Logit allocation `a_i = e^{m b_i} / sum_j e^{m b_j}`.
pub fn alloc_k1(b: &BidVector, m: f64) -> AllocationVector {
    let n = b.len();
    if m == 0.0 {
        return AllocationVector::new(vec![1.0 / n as f64; n]);
    }
    // shifting by the top bid keeps the exponents small, so equal bids
    // share exactly
    let top = b.iter().fold(0.0, f64::max);
    let lse = log_sum_exp(b.iter().map(|x| m * (x - top)));
    AllocationVector::new(b.iter().map(|x| (m * (x - top) - lse).exp()).collect())
}

fn alloc_one(b: &BidVector, i: usize, m: f64) -> f64 {
    if m == 0.0 {
        return 1.0 / b.len() as f64;
    }
    let top = b.iter().fold(0.0, f64::max);
    (m * (b[i] - top) - log_sum_exp(b.iter().map(|x| m * (x - top)))).exp()
}

/// `p_i = b_i - (1/(m a_i)) ln(1 + (e^{m b_i} - 1) / (1 + sum_{j != i} e^{m b_j}))`
/// given `ln sum_j e^{m b_j}` and `ln sum_{j != i} e^{m b_j}`.
fn pay_from_lse(b_i: f64, m: f64, lse_all: f64, lse_others: f64) -> f64 {
    if b_i <= 0.0 {
        return 0.0;
    }
    let x = m * b_i;
    let ln_num = x + (-(-x).exp_m1()).ln();
    let ln_den = log_add_exp(0.0, lse_others);
    let ln_term = lse_all - x - m.ln() + ln_softplus(ln_num - ln_den);
    b_i - ln_term.exp()
}

/// Closed-form Myerson payment-if-confirmed of user `i` under the logit
/// allocation. `m = 0` is the random free allocation and pays nothing.
pub fn pay_k1(b: &BidVector, i: usize, m: f64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let lse_all = log_sum_exp(b.iter().map(|x| m * x));
    let lse_others = log_sum_exp(
        b.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, x)| m * x),
    );
    pay_from_lse(b[i], m, lse_all, lse_others)
}

/// All payments at once, `O(n)` via prefix/suffix log-sum-exp.
pub fn payments_k1(b: &BidVector, m: f64) -> Vec<f64> {
    let n = b.len();
    if m == 0.0 {
        return vec![0.0; n];
    }
    let xs: Vec<f64> = b.iter().map(|x| m * x).collect();
    let mut prefix = vec![f64::NEG_INFINITY; n + 1];
    for j in 0..n {
        prefix[j + 1] = log_add_exp(prefix[j], xs[j]);
    }
    let mut suffix = vec![f64::NEG_INFINITY; n + 1];
    for j in (0..n).rev() {
        suffix[j] = log_add_exp(suffix[j + 1], xs[j]);
    }
    let lse_all = log_sum_exp(xs.iter().copied());
    (0..n)
        .map(|i| pay_from_lse(b[i], m, lse_all, log_add_exp(prefix[i], suffix[i + 1])))
        .collect()
}

/// The quadratic variation term scaled by `h` and normalised by `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationTerm {
    pub h: f64,
    pub c: f64,
}

impl VariationTerm {
    pub fn new(h: f64, c: f64) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: "must be finite and >= 0".into(),
            });
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "c",
                reason: "must be finite and > 0".into(),
            });
        }
        Ok(Self { h, c })
    }

    pub fn from_params(p: &MechanismParams) -> Result<Self> {
        Self::new(p.h, p.c)
    }

    /// `theta_i = -h/2 b_i^2 (sum_{j != i} b_j^2 / (c (n-1)) - 1)`.
    pub fn theta(&self, b: &BidVector, i: usize) -> Result<f64> {
        let n = b.len();
        if n < 2 {
            return Err(Error::TooFewUsers(n));
        }
        check_user(b, i)?;
        let others: f64 = b
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, x)| x * x)
            .sum();
        Ok(self.theta_from_sum(b[i], others, n))
    }

    fn theta_from_sum(&self, b_i: f64, others_sq: f64, n: usize) -> f64 {
        -0.5 * self.h * b_i * b_i * (others_sq / (self.c * (n - 1) as f64) - 1.0)
    }

    pub fn theta_all(&self, b: &BidVector) -> Result<Vec<f64>> {
        let n = b.len();
        if n < 2 {
            return Err(Error::TooFewUsers(n));
        }
        let total: f64 = b.iter().map(|x| x * x).sum();
        Ok(b.iter()
            .map(|x| self.theta_from_sum(x, total - x * x, n))
            .collect())
    }

    /// `r~ = h/2 (sum_i b_i^2 - sum_{i<j} b_i^2 b_j^2 / (c (n-1)))`.
    pub fn revenue(&self, b: &BidVector) -> Result<f64> {
        let n = b.len();
        if n < 2 {
            return Err(Error::TooFewUsers(n));
        }
        let mut sq = KahanSum::default();
        let mut pairs = KahanSum::default();
        let mut running = 0.0;
        for x in b.iter() {
            let q = x * x;
            pairs.add(q * running);
            running += q;
            sq.add(q);
        }
        Ok(0.5 * self.h * (sq.value() - pairs.value() / (self.c * (n - 1) as f64)))
    }
}

pub fn theta(b: &BidVector, i: usize, h: f64, c: f64) -> Result<f64> {
    VariationTerm::new(h, c)?.theta(b, i)
}

pub fn revenue(b: &BidVector, h: f64, c: f64) -> Result<f64> {
    VariationTerm::new(h, c)?.revenue(b)
}

/// `p~_i = p_i + theta_i / a_i` for the block-size-one mechanism.
pub fn pay_perturbed(b: &BidVector, i: usize, params: &MechanismParams) -> Result<f64> {
    params.validate()?;
    check_user(b, i)?;
    let a = alloc_one(b, i, params.m);
    let p = pay_k1(b, i, params.m);
    let theta = VariationTerm::from_params(params)?.theta(b, i)?;
    Ok(if a > 0.0 { p + theta / a } else { p })
}

/// The zero-revenue soft second-price mechanism `(a, p, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftSecondPriceK1 {
    n: usize,
    m: f64,
}

impl SoftSecondPriceK1 {
    pub fn new(n: usize, m: f64) -> Result<Self> {
        MechanismParams::new(n, 1, m, 0.0, 1.0)?;
        Ok(Self { n, m })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// The mechanism plus the variation term of `params`.
    pub fn framed(params: &MechanismParams) -> Result<Perturbed<Self>> {
        params.validate()?;
        if params.k != 1 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: "block-size-one mechanism needs k = 1".into(),
            });
        }
        Perturbed::new(
            Self::new(params.n, params.m)?,
            VariationTerm::from_params(params)?,
        )
    }
}

impl Mechanism for SoftSecondPriceK1 {
    fn name(&self) -> String {
        format!("soft-second-price(n={}, m={})", self.n, self.m)
    }

    fn num_users(&self) -> usize {
        self.n
    }

    fn block_size(&self) -> Option<usize> {
        Some(1)
    }

    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        check_len(b, self.n)?;
        Ok(alloc_k1(b, self.m))
    }

    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        check_len(b, self.n)?;
        Ok(payments_k1(b, self.m))
    }

    fn revenue(&self, b: &BidVector) -> Result<f64> {
        check_len(b, self.n)?;
        Ok(0.0)
    }

    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        check_len(b, self.n)?;
        check_user(b, i)?;
        Ok(alloc_one(b, i, self.m))
    }

    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        check_len(b, self.n)?;
        check_user(b, i)?;
        Ok((alloc_one(b, i, self.m), pay_k1(b, i, self.m)))
    }
}

/// A base mechanism `(a, p, 0)` plus a variation term: `(a, p + theta/a, r~)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed<M> {
    base: M,
    term: VariationTerm,
}

impl<M: Mechanism> Perturbed<M> {
    pub fn new(base: M, term: VariationTerm) -> Result<Self> {
        if base.num_users() < 2 && term.h > 0.0 {
            return Err(Error::TooFewUsers(base.num_users()));
        }
        Ok(Self { base, term })
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn term(&self) -> VariationTerm {
        self.term
    }

    fn theta_or_zero(&self, b: &BidVector, i: usize) -> Result<f64> {
        if self.term.h == 0.0 {
            return Ok(0.0);
        }
        self.term.theta(b, i)
    }
}

impl<M: Mechanism> Mechanism for Perturbed<M> {
    fn name(&self) -> String {
        format!(
            "{} + variation(h={}, c={})",
            self.base.name(),
            self.term.h,
            self.term.c
        )
    }

    fn num_users(&self) -> usize {
        self.base.num_users()
    }

    fn block_size(&self) -> Option<usize> {
        self.base.block_size()
    }

    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        self.base.allocation(b)
    }

    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        let a = self.base.allocation(b)?;
        let mut p = self.base.payments(b)?;
        if self.term.h == 0.0 {
            return Ok(p);
        }
        let theta = self.term.theta_all(b)?;
        for ((p, a), t) in p.iter_mut().zip(a.probs()).zip(theta) {
            if *a > 0.0 {
                *p += t / a;
            }
        }
        Ok(p)
    }

    fn revenue(&self, b: &BidVector) -> Result<f64> {
        check_len(b, self.num_users())?;
        if self.term.h == 0.0 {
            return self.base.revenue(b);
        }
        self.term.revenue(b)
    }

    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        self.base.allocation_of(b, i)
    }

    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        let (a, p) = self.base.outcome_of(b, i)?;
        let theta = self.theta_or_zero(b, i)?;
        Ok((a, if a > 0.0 { p + theta / a } else { p }))
    }
}
