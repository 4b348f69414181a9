use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfm_core::ssp_k::{
    alloc_exact, alloc_monte_carlo, derivative_floor, monte_carlo_outcome, pay_k,
    threshold_constants, AllocationSlice,
};
use tfm_core::ssp_k1::{alloc_k1, pay_k1};
use tfm_core::{BidVector, Error, Mechanism, SoftSecondPriceK};

fn bids(v: Vec<f64>) -> BidVector {
    BidVector::new(v).unwrap()
}

/// Confirmation probabilities by walking every ordered draw sequence.
fn brute_force(w: &[f64], k: usize) -> Vec<f64> {
    fn walk(w: &[f64], k: usize, taken: &mut Vec<usize>, prob: f64, out: &mut [f64]) {
        if taken.len() == k {
            for &j in taken.iter() {
                out[j] += prob;
            }
            return;
        }
        let left: f64 = (0..w.len())
            .filter(|j| !taken.contains(j))
            .map(|j| w[j])
            .sum();
        for j in 0..w.len() {
            if taken.contains(&j) {
                continue;
            }
            taken.push(j);
            walk(w, k, taken, prob * w[j] / left, out);
            taken.pop();
        }
    }
    let mut out = vec![0.0; w.len()];
    walk(w, k, &mut Vec::new(), 1.0, &mut out);
    out
}

#[test]
fn hand_enumerated_example() {
    // weights (2, 1, 1) with m = 1
    let a = alloc_exact(&bids(vec![2f64.ln(), 0.0, 0.0]), 2, 1.0).unwrap();
    let want = [5.0 / 6.0, 7.0 / 12.0, 7.0 / 12.0];
    for (got, want) in a.probs().iter().zip(want) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn enumeration_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(2..=6);
        let k = rng.random_range(1..=n.min(3));
        let m = rng.random_range(0.0..4.0);
        let b: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let w: Vec<f64> = b.iter().map(|x| (m * x).exp()).collect();
        let exact = alloc_exact(&bids(b), k, m).unwrap();
        for (x, y) in exact.probs().iter().zip(brute_force(&w, k)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn sampling_frequencies_match_enumeration() {
    for (b, k, m, seed) in [
        (vec![0.9, 0.1, 0.5, 0.3, 0.7, 0.2, 0.6], 3, 2.0, 5),
        (vec![0.2, 0.8, 0.5, 0.4, 0.1], 2, 1.0, 6),
        (vec![1.0, 0.0, 0.5, 0.25], 1, 3.0, 7),
    ] {
        let bv = bids(b);
        let draws = 1_000_000;
        let mc = alloc_monte_carlo(&bv, k, m, draws, seed).unwrap();
        let exact = alloc_exact(&bv, k, m).unwrap();
        for (f, a) in mc.probs.iter().zip(exact.probs()) {
            let sd = (a * (1.0 - a) / draws as f64).sqrt();
            assert!((f - a).abs() <= 3.0 * sd, "{f} vs {a}");
        }
    }
}

#[test]
fn clock_payments_match_quadrature() {
    let bv = bids(vec![0.8, 0.3, 0.55, 0.1, 0.95]);
    let (k, m) = (2, 1.5);
    let mc = monte_carlo_outcome(&bv, k, m, 400_000, 3).unwrap();
    let mech = SoftSecondPriceK::new(5, k, m).unwrap();
    for i in 0..5 {
        let (a, p) = mech.outcome_of(&bv, i).unwrap();
        let est = mc.users[i].expected_payment;
        assert!(est.covers(a * p, 4.0), "user {i}: {est:?} vs {}", a * p);
    }
}

#[test]
fn single_slot_reduces_to_logit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let m = rng.random_range(0.1..3.0);
        let bv = bids((0..n).map(|_| rng.random()).collect());
        let a = alloc_exact(&bv, 1, m).unwrap();
        let l = alloc_k1(&bv, m);
        for i in 0..n {
            assert!((a.get(i) - l.get(i)).abs() <= 1e-12);
            let p = pay_k(&bv, i, 1, m, 1e-10).unwrap();
            assert!((p - pay_k1(&bv, i, m)).abs() <= 1e-7);
        }
    }
}

#[test]
fn derivative_floor_holds() {
    let m = threshold_constants(2.0).unwrap().m_sharp;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let eps = 1e-4;
    for n in [20usize, 40, 80] {
        for k in 1..=3 {
            let floor = 0.5 * derivative_floor(n, k, m);
            assert!(floor > 0.0);
            for _ in 0..3 {
                let bv = bids((0..n).map(|_| rng.random()).collect());
                for i in [0, n / 2, n - 1] {
                    let slice = AllocationSlice::new(&bv, i, k, m).unwrap();
                    let t = bv[i].clamp(eps, 1.0 - eps);
                    let d = (slice.eval(t + eps) - slice.eval(t - eps)) / (2.0 * eps);
                    assert!(d >= floor, "n={n} k={k} i={i}: {d} < {floor}");
                }
            }
        }
    }
}

#[test]
fn threshold_constants_reference_values() {
    let c = threshold_constants(2.0).unwrap();
    assert!((c.m_sharp - 0.1833).abs() < 5e-5);
    assert!((c.d_value - 0.1674).abs() < 5e-5);
    assert!(c.f_value > 0.0);
    assert!(matches!(
        threshold_constants(1.5),
        Err(Error::ThresholdDomain(_))
    ));
}

#[test]
fn size_guard_is_reported() {
    let err = SoftSecondPriceK::new(200, 10, 1.0).unwrap_err();
    assert!(matches!(err, Error::SizeGuard { .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn allocation_sums_to_block_size(
        b in prop::collection::vec(0.0f64..=1.0, 2..=7),
        k in 1usize..=3,
        m in 0.0f64..6.0,
    ) {
        let k = k.min(b.len());
        let a = alloc_exact(&bids(b), k, m).unwrap();
        prop_assert!((a.sum() - k as f64).abs() <= 1e-12);
        prop_assert!(a.probs().iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn monotone_and_competitive_on_grid(
        b in prop::collection::vec(0.0f64..=1.0, 3..=6),
        k in 2usize..=3,
        m in 0.1f64..4.0,
        i in 0usize..6,
    ) {
        let bv = bids(b);
        let n = bv.len();
        let k = k.min(n - 1);
        let i = i % n;
        let j = (i + 1) % n;
        let mut prev = 0.0;
        for s in 0..=50 {
            let t = s as f64 * 0.02;
            let at = bv.with_bid(i, t);
            let a = alloc_exact(&at, k, m).unwrap().get(i);
            prop_assert!(a >= prev - 1e-12);
            prev = a;
            let raised = at.with_bid(j, at[j] + 0.02);
            prop_assert!(alloc_exact(&raised, k, m).unwrap().get(i) <= a + 1e-12);
        }
    }

    #[test]
    fn quadrature_payment_is_rational(
        b in prop::collection::vec(0.0f64..=1.0, 3..=5),
        m in 0.1f64..3.0,
    ) {
        let bv = bids(b);
        let mech = SoftSecondPriceK::new(bv.len(), 2, m).unwrap();
        for (i, p) in mech.payments(&bv).unwrap().into_iter().enumerate() {
            prop_assert!(p >= -1e-9 && p <= bv[i] + 1e-9);
        }
    }
}
