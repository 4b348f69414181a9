//! Bid vectors, mechanism parameters, the mechanism abstraction and the
//! generic Myerson payment engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_gauss;

/// Bids (or valuations under truthful bidding), each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BidVector(Vec<f64>);

impl BidVector {
    pub fn new(bids: Vec<f64>) -> Result<Self> {
        if bids.is_empty() {
            return Err(Error::EmptyBids);
        }
        if let Some((index, &value)) = bids
            .iter()
            .enumerate()
            .find(|(_, b)| !(0.0..=1.0).contains(*b))
        {
            return Err(Error::BidOutOfRange { index, value });
        }
        Ok(Self(bids))
    }

    pub(crate) fn from_unchecked(bids: Vec<f64>) -> Self {
        debug_assert!(!bids.is_empty());
        debug_assert!(bids.iter().all(|b| (0.0..=1.0).contains(b)));
        Self(bids)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.0.iter().copied()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Copy with bidder `i` bidding `t` (clamped to `[0, 1]`).
    pub fn with_bid(&self, i: usize, t: f64) -> Self {
        let mut v = self.0.clone();
        v[i] = t.clamp(0.0, 1.0);
        Self(v)
    }

    /// Copy reordered so that position `k` holds the bid of user `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&j| self.0[j]).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for BidVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BidVector> for Vec<f64> {
    fn from(b: BidVector) -> Self {
        b.0
    }
}

impl std::ops::Index<usize> for BidVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Confirmation probabilities, one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector(Vec<f64>);

impl AllocationVector {
    pub fn new(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0
            .iter()
            .copied()
            .collect::<crate::stats::KahanSum>()
            .value()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Parameters of the soft second-price family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    /// Number of users.
    pub n: usize,
    /// Block size.
    pub k: usize,
    /// Logit sharpness.
    pub m: f64,
    /// Perturbation scale of the variation term.
    pub h: f64,
    /// Normalising constant of the variation term.
    pub c: f64,
}

impl MechanismParams {
    pub fn new(n: usize, k: usize, m: f64, h: f64, c: f64) -> Result<Self> {
        let p = Self { n, k, m, h, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if self.n == 0 {
            return invalid("n", "need at least one user");
        }
        if self.k == 0 || self.k > self.n {
            return invalid("k", "block size must satisfy 1 <= k <= n");
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return invalid("m", "must be finite and >= 0");
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return invalid("h", "must be finite and >= 0");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return invalid("c", "must be finite and > 0");
        }
        Ok(())
    }

    /// Users per block slot, `n / k`.
    pub fn lambda(&self) -> f64 {
        self.n as f64 / self.k as f64
    }

    pub fn with_h(self, h: f64) -> Self {
        Self { h, ..self }
    }
}

/// A transaction fee mechanism: allocation, payment-if-confirmed and miner
/// revenue as functions of the bid vector.
pub trait Mechanism: Send + Sync {
    fn name(&self) -> String;

    fn num_users(&self) -> usize;

    /// Number of confirmed transactions when it is fixed.
    fn block_size(&self) -> Option<usize> {
        None
    }

    fn allocation(&self, b: &BidVector) -> Result<AllocationVector>;

    /// Payment charged to each user if its transaction is confirmed.
    fn payments(&self, b: &BidVector) -> Result<Vec<f64>>;

    fn revenue(&self, b: &BidVector) -> Result<f64>;

    /// `a_i(b)` for one user.
    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        check_user(b, i)?;
        Ok(self.allocation(b)?.get(i))
    }

    /// `(a_i(b), p_i(b))` for one user.
    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        check_user(b, i)?;
        Ok((self.allocation(b)?.get(i), self.payments(b)?[i]))
    }
}

impl<M: Mechanism + ?Sized> Mechanism for &M {
    fn name(&self) -> String {
        (**self).name()
    }
    fn num_users(&self) -> usize {
        (**self).num_users()
    }
    fn block_size(&self) -> Option<usize> {
        (**self).block_size()
    }
    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        (**self).allocation(b)
    }
    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        (**self).payments(b)
    }
    fn revenue(&self, b: &BidVector) -> Result<f64> {
        (**self).revenue(b)
    }
    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        (**self).allocation_of(b, i)
    }
    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        (**self).outcome_of(b, i)
    }
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn num_users(&self) -> usize {
        (**self).num_users()
    }
    fn block_size(&self) -> Option<usize> {
        (**self).block_size()
    }
    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        (**self).allocation(b)
    }
    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        (**self).payments(b)
    }
    fn revenue(&self, b: &BidVector) -> Result<f64> {
        (**self).revenue(b)
    }
    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        (**self).allocation_of(b, i)
    }
    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        (**self).outcome_of(b, i)
    }
}

pub(crate) fn check_user(b: &BidVector, i: usize) -> Result<()> {
    if i >= b.len() {
        return Err(Error::UserIndex {
            index: i,
            n: b.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_len(b: &BidVector, n: usize) -> Result<()> {
    if b.len() != n {
        return Err(Error::InvalidParameter {
            name: "bids",
            reason: format!("expected {n} bids, got {}", b.len()),
        });
    }
    Ok(())
}

/// Largest tolerated decrease of a sampled allocation slice.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// `int_0^{b_i} t da_i(t)` for the slice `t -> a_i(t, b_-i)`, evaluated in
/// the derivative-free form `b_i a_i(b_i) - int_0^{b_i} a_i(t) dt`.
///
/// This is the expected payment `a_i p_i` of the Myerson mechanism.
pub fn myerson_integral<F: Fn(f64) -> f64>(alloc: F, b_i: f64, tol: f64) -> Result<f64> {
    if b_i <= 0.0 {
        return Ok(0.0);
    }
    let a_b = alloc(b_i);
    let (area, _) = slice_area(&alloc, b_i, tol)?;
    Ok(b_i * a_b - area)
}

/// Myerson payment-if-confirmed `p_i = (1/a_i) int_0^{b_i} t da_i(t)`,
/// computed as `b_i - (1/a_i(b_i)) int_0^{b_i} a_i(t) dt`. Zero when the
/// allocation at `b_i` is zero. The absolute error is at most `tol`.
pub fn myerson_payment<F: Fn(f64) -> f64>(alloc: F, b_i: f64, tol: f64) -> Result<f64> {
    if b_i <= 0.0 {
        return Ok(0.0);
    }
    let a_b = alloc(b_i);
    if a_b <= 0.0 {
        return Ok(0.0);
    }
    let (area, _) = slice_area(&alloc, b_i, tol * a_b)?;
    Ok(b_i - area / a_b)
}

/// Integrates the slice over `[0, b_i]`, checking monotonicity on every
/// sampled node.
fn slice_area<F: Fn(f64) -> f64>(alloc: &F, b_i: f64, tol: f64) -> Result<(f64, usize)> {
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(192);
    let area = adaptive_gauss(
        |t| {
            let a = alloc(t);
            samples.push((t, a));
            a
        },
        0.0,
        b_i,
        tol,
    );
    samples.push((0.0, alloc(0.0)));
    samples.push((b_i, alloc(b_i)));
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in samples.windows(2) {
        let drop = w[0].1 - w[1].1;
        if drop > MONOTONE_SLACK {
            return Err(Error::NonMonotoneAllocation { at: w[1].0, drop });
        }
    }
    Ok((area, samples.len()))
}

/// `P(b) = sum_i a_i(b) p_i(b)`.
pub fn total_expected_payment<M: Mechanism + ?Sized>(mech: &M, b: &BidVector) -> Result<f64> {
    let a = mech.allocation(b)?;
    let p = mech.payments(b)?;
    Ok(a.probs()
        .iter()
        .zip(&p)
        .map(|(a, p)| a * p)
        .collect::<crate::stats::KahanSum>()
        .value())
}

/// `u_i = a_i(b) (v_i - p_i(b))`.
pub fn user_utility<M: Mechanism + ?Sized>(
    mech: &M,
    b: &BidVector,
    i: usize,
    v_i: f64,
) -> Result<f64> {
    let (a, p) = mech.outcome_of(b, i)?;
    if a == 0.0 {
        return Ok(0.0);
    }
    Ok(a * (v_i - p))
}

/// Utility of the coalition of user `i` and the miner.
pub fn joint_utility<M: Mechanism + ?Sized>(
    mech: &M,
    b: &BidVector,
    i: usize,
    v_i: f64,
) -> Result<f64> {
    Ok(user_utility(mech, b, i, v_i)? + mech.revenue(b)?)
}
