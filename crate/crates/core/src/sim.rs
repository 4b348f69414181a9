//! Rounds of the perturbed mechanism with truthful bidders.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dists::ValuationDistribution;
use crate::error::Result;
use crate::mech::{BidVector, Mechanism, MechanismParams};
use crate::ssp_k::{draw_block, SoftSecondPriceK};
use crate::ssp_k1::SoftSecondPriceK1;
use crate::stats::{chunks, substream, Estimate, Moments};

/// The soft second-price mechanism with the variation term of `params`:
/// closed-form payments for one slot, quadrature payments otherwise.
pub fn framed_mechanism(params: &MechanismParams) -> Result<Box<dyn Mechanism>> {
    if params.k == 1 {
        Ok(Box::new(SoftSecondPriceK1::framed(params)?))
    } else {
        Ok(Box::new(SoftSecondPriceK::framed(params)?))
    }
}

/// Per-round averages over simulated rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub rounds: usize,
    /// `sum_i a_i p~_i`.
    pub expected_fees: Estimate,
    /// `r~`.
    pub miner_revenue: Estimate,
    /// Fees not passed to the miner, `sum_i a_i p~_i - r~`.
    pub burn: Estimate,
    /// `sum_i a_i v_i`.
    pub expected_welfare: Estimate,
    /// Fees paid by the users confirmed in the sampled block.
    pub realised_fees: Estimate,
    /// Values of the users confirmed in the sampled block.
    pub realised_welfare: Estimate,
    /// Fraction of rounds in which the highest-value user is confirmed.
    pub top_user_confirmed: Estimate,
}

/// Simulates `rounds` rounds: values drawn from `dist`, bids equal to
/// values, one block drawn by successive logit sampling.
pub fn simulate(
    params: &MechanismParams,
    dist: &ValuationDistribution,
    rounds: usize,
    seed: u64,
) -> Result<SimulationSummary> {
    let mech = framed_mechanism(params)?;
    let n = params.n;
    let parts: Vec<Result<[Moments; 7]>> = chunks(rounds)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(seed, stream);
            let mut acc = [Moments::default(); 7];
            let mut values = vec![0.0; n];
            for _ in 0..len {
                dist.sample_into(&mut rng, &mut values);
                let b = BidVector::new(values.clone())?;
                let a = mech.allocation(&b)?;
                let p = mech.payments(&b)?;
                let r = mech.revenue(&b)?;
                let fees: f64 = a.probs().iter().zip(&p).map(|(x, y)| x * y).sum();
                let welfare: f64 = a.probs().iter().zip(b.iter()).map(|(x, v)| x * v).sum();
                let block = draw_block(&b, params.k, params.m, &mut rng)?;
                let top = (0..n)
                    .max_by(|&x, &y| b[x].total_cmp(&b[y]))
                    .expect("at least one user");
                acc[0].push(fees);
                acc[1].push(r);
                acc[2].push(fees - r);
                acc[3].push(welfare);
                acc[4].push(block.order.iter().map(|&j| p[j]).sum());
                acc[5].push(block.order.iter().map(|&j| b[j]).sum());
                acc[6].push(if block.order.contains(&top) { 1.0 } else { 0.0 });
            }
            Ok(acc)
        })
        .collect();
    let mut acc = [Moments::default(); 7];
    for p in parts {
        for (a, b) in acc.iter_mut().zip(&p?) {
            a.merge(b);
        }
    }
    Ok(SimulationSummary {
        rounds,
        expected_fees: acc[0].estimate(),
        miner_revenue: acc[1].estimate(),
        burn: acc[2].estimate(),
        expected_welfare: acc[3].estimate(),
        realised_fees: acc[4].estimate(),
        realised_welfare: acc[5].estimate(),
        top_user_confirmed: acc[6].estimate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realised_and_expected_fees_agree() {
        let p = MechanismParams::new(4, 1, 1.0, 0.05, 1.0 / 3.0).unwrap();
        let s = simulate(&p, &ValuationDistribution::uniform(), 20_000, 9).unwrap();
        let diff = s.realised_fees.mean - s.expected_fees.mean;
        let se = (s.realised_fees.se.powi(2) + s.expected_fees.se.powi(2)).sqrt();
        assert!(diff.abs() < 4.0 * se, "{s:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let p = MechanismParams::new(4, 2, 0.5, 0.0, 1.0 / 3.0).unwrap();
        let d = ValuationDistribution::uniform();
        assert_eq!(
            simulate(&p, &d, 300, 1).unwrap(),
            simulate(&p, &d, 300, 1).unwrap()
        );
    }
}
