//! Reference mechanisms used as baselines and counterexamples.

use crate::error::{Error, Result};
use crate::mech::{check_len, total_expected_payment, AllocationVector, BidVector, Mechanism};

/// Deterministic first-price auction for one slot: the highest bid wins
/// (ties split evenly) and the winner pays `shade` times its bid.
///
/// `shade = 1` is the plain first-price auction; `shade = (n-1)/n` is the
/// direct-revelation form of the uniform-prior equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPrice {
    n: usize,
    shade: f64,
}

impl FirstPrice {
    pub fn new(n: usize, shade: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewUsers(n));
        }
        if !(0.0..=1.0).contains(&shade) {
            return Err(Error::InvalidParameter {
                name: "shade",
                reason: "must lie in [0, 1]".into(),
            });
        }
        Ok(Self { n, shade })
    }

    pub fn unshaded(n: usize) -> Result<Self> {
        Self::new(n, 1.0)
    }

    /// Pays `(n-1)/n` of the winning bid.
    pub fn shaded(n: usize) -> Result<Self> {
        Self::new(n, (n as f64 - 1.0) / n as f64)
    }
}

impl Mechanism for FirstPrice {
    fn name(&self) -> String {
        format!("first-price(n={}, shade={})", self.n, self.shade)
    }

    fn num_users(&self) -> usize {
        self.n
    }

    fn block_size(&self) -> Option<usize> {
        Some(1)
    }

    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        check_len(b, self.n)?;
        let top = b.iter().fold(f64::NEG_INFINITY, f64::max);
        let winners = b.iter().filter(|&x| x == top).count() as f64;
        Ok(AllocationVector::new(
            b.iter()
                .map(|x| if x == top { 1.0 / winners } else { 0.0 })
                .collect(),
        ))
    }

    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        check_len(b, self.n)?;
        let top = b.iter().fold(f64::NEG_INFINITY, f64::max);
        Ok(b.iter().map(|_| self.shade * top).collect())
    }

    fn revenue(&self, b: &BidVector) -> Result<f64> {
        check_len(b, self.n)?;
        Ok(0.0)
    }
}

/// Confirms `k` of `n` users uniformly at random and charges nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomFreeAllocation {
    n: usize,
    k: usize,
}

impl RandomFreeAllocation {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("block size must satisfy 1 <= k <= n = {n}"),
            });
        }
        Ok(Self { n, k })
    }
}

impl Mechanism for RandomFreeAllocation {
    fn name(&self) -> String {
        format!("random-free-allocation(n={}, k={})", self.n, self.k)
    }

    fn num_users(&self) -> usize {
        self.n
    }

    fn block_size(&self) -> Option<usize> {
        Some(self.k)
    }

    fn allocation(&self, b: &BidVector) -> Result<AllocationVector> {
        check_len(b, self.n)?;
        Ok(AllocationVector::new(vec![
            self.k as f64 / self.n as f64;
            self.n
        ]))
    }

    fn payments(&self, b: &BidVector) -> Result<Vec<f64>> {
        check_len(b, self.n)?;
        Ok(vec![0.0; self.n])
    }

    fn revenue(&self, b: &BidVector) -> Result<f64> {
        check_len(b, self.n)?;
        Ok(0.0)
    }
}

/// Hands every collected fee to the miner (`r = sum_i a_i p_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoBurn<M> {
    base: M,
}

impl<M: Mechanism> NoBurn<M> {
    pub fn new(base: M) -> Self {
        Self { base }
    }
}

impl<M: Mechanism> Mechanism for NoBurn<M> {
    fn name(&self) -> String {
        format!("{} with no burn", self.base.name())
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
        self.base.payments(b)
    }

    fn revenue(&self, b: &BidVector) -> Result<f64> {
        total_expected_payment(&self.base, b)
    }

    fn allocation_of(&self, b: &BidVector, i: usize) -> Result<f64> {
        self.base.allocation_of(b, i)
    }

    fn outcome_of(&self, b: &BidVector, i: usize) -> Result<(f64, f64)> {
        self.base.outcome_of(b, i)
    }
}
