//! Path integrals of a revenue-increment field.
//!
//! A side-contract-proof extension of a mechanism needs a miner revenue
//! `r` whose increment when user `i` moves is `theta_i = a_i (p~_i - p_i)`.
//! Such an `r` exists only when the field `theta` is conservative: the sum
//! of increments along any closed path of single-user moves is zero.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{AuditReport, Check, Evidence, Property, Seeds};
use crate::error::{Error, Result};
use crate::mech::BidVector;
use crate::ssp_k1::VariationTerm;
use crate::stats::{chunks, substream};

/// Increment field `theta_i(b)` on bid profiles.
pub trait IncrementField: Sync {
    fn theta(&self, b: &BidVector, i: usize) -> Result<f64>;
}

impl IncrementField for VariationTerm {
    fn theta(&self, b: &BidVector, i: usize) -> Result<f64> {
        VariationTerm::theta(self, b, i)
    }
}

impl<F> IncrementField for F
where
    F: Fn(&BidVector, usize) -> Result<f64> + Sync,
{
    fn theta(&self, b: &BidVector, i: usize) -> Result<f64> {
        self(b, i)
    }
}

/// A path in the plane of users `p` and `q`, other bids held at `rest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanePath {
    pub p: usize,
    pub q: usize,
    pub rest: BidVector,
    /// Vertices `(b_p, b_q)`; consecutive vertices differ in one coordinate.
    pub vertices: Vec<(f64, f64)>,
}

impl PlanePath {
    fn profile(&self, (x, y): (f64, f64)) -> BidVector {
        self.rest.with_bid(self.p, x).with_bid(self.q, y)
    }
}

/// Sum of increments along a path of axis-aligned moves. A move of user
/// `j` from `s` to `t` contributes `theta_j(t) - theta_j(s)`.
pub fn path_increment<F: IncrementField + ?Sized>(field: &F, path: &PlanePath) -> Result<f64> {
    let n = path.rest.len();
    if path.p == path.q || path.p >= n || path.q >= n {
        return Err(Error::InvalidParameter {
            name: "plane",
            reason: format!(
                "need two distinct users below {n}, got {} and {}",
                path.p, path.q
            ),
        });
    }
    let mut total = 0.0;
    for w in path.vertices.windows(2) {
        let (s, t) = (w[0], w[1]);
        let mover = match (s.0 != t.0, s.1 != t.1) {
            (false, false) => continue,
            (true, false) => path.p,
            (false, true) => path.q,
            (true, true) => {
                return Err(Error::InvalidParameter {
                    name: "path",
                    reason: format!("move {s:?} -> {t:?} changes two bids at once"),
                })
            }
        };
        total += field.theta(&path.profile(t), mover)? - field.theta(&path.profile(s), mover)?;
    }
    Ok(total)
}

/// Closed loop around the rectangle `[x0, x1] x [y0, y1]`.
pub fn loop_integral<F: IncrementField + ?Sized>(
    field: &F,
    rest: &BidVector,
    p: usize,
    q: usize,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
) -> Result<f64> {
    path_increment(
        field,
        &PlanePath {
            p,
            q,
            rest: rest.clone(),
            vertices: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)],
        },
    )
}

/// Random rectangle loops; the field passes when every loop sums to zero.
pub fn conservative_field_audit<F: IncrementField + ?Sized>(
    field: &F,
    name: &str,
    n: usize,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<AuditReport> {
    if n < 2 {
        return Err(Error::TooFewUsers(n));
    }
    let parts: Vec<Result<(f64, String)>> = chunks(trials)
        .into_par_iter()
        .map(|(stream, len)| {
            let mut rng = substream(seed, stream);
            let mut worst = (0.0, String::new());
            for _ in 0..len {
                let rest: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                let rest = BidVector::from_unchecked(rest);
                let p = rng.random_range(0..n);
                let q = (p + rng.random_range(1..n)) % n;
                let xs = (rng.random::<f64>(), rng.random::<f64>());
                let ys = (rng.random::<f64>(), rng.random::<f64>());
                let v = loop_integral(field, &rest, p, q, xs, ys)?.abs();
                if v >= worst.0 {
                    worst = (v, format!("plane=({p},{q}) x={xs:?} y={ys:?}"));
                }
            }
            Ok(worst)
        })
        .collect();
    let mut worst = (0.0, String::new());
    for part in parts {
        let w = part?;
        if w.0 >= worst.0 {
            worst = w;
        }
    }
    Ok(AuditReport::new(
        Property::ConservativeField,
        name.to_string(),
        vec![Check::new("max |loop integral|", worst.0, tolerance, 0.0)],
        vec![Evidence::new(worst.1, worst.0, 0.0)],
        Seeds::random(seed, chunks(trials).len() as u64),
    ))
}

/// Increment field `a_i (p~_i - p_i)` for two users, where `p~` is the
/// shaded first-price payment (the winner pays half its bid) and `p` the
/// second-price payment under the same allocation. A tie confirms each
/// user with probability 1/2 at a second-price payment equal to the common
/// bid.
pub fn first_price_theta(b: &BidVector, i: usize) -> Result<f64> {
    if b.len() != 2 || i > 1 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "the first-price increment field is defined for two users".into(),
        });
    }
    let (own, other) = (b[i], b[1 - i]);
    Ok(if own > other {
        0.5 * own - other
    } else if own == other {
        -0.25 * own
    } else {
        0.0
    })
}

/// Path-dependence of the first-price increment field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    /// `(profile, user, theta)` at every profile the paths visit.
    pub increments: Vec<(String, usize, f64)>,
    /// `(0,0) -> (1,0) -> (1,1)`.
    pub path_one: f64,
    /// `(0,0) -> (0.5,0) -> (0.5,1) -> (1,1)`.
    pub path_two: f64,
    /// Loop integral of path one followed by path two reversed.
    pub loop_integral: f64,
    pub path_dependent: bool,
    pub verdict: String,
}

/// Evaluates the two monotone paths from `(0,0)` to `(1,1)` for the
/// first-price increment field. Different totals mean no revenue function
/// can make the mechanism side-contract proof.
pub fn first_price_counterexample() -> Result<Counterexample> {
    let path = |vertices: Vec<(f64, f64)>| PlanePath {
        p: 0,
        q: 1,
        rest: BidVector::zeros(2),
        vertices,
    };
    let one = path(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]);
    let two = path(vec![(0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (1.0, 1.0)]);
    let field = |b: &BidVector, i: usize| first_price_theta(b, i);
    let path_one = path_increment(&field, &one)?;
    let path_two = path_increment(&field, &two)?;
    let mut around = one.vertices.clone();
    around.extend(two.vertices.iter().rev().skip(1));
    let loop_integral = path_increment(&field, &path(around))?;

    let mut increments = Vec::new();
    for &(x, y, i) in &[
        (1.0, 0.0, 0),
        (1.0, 1.0, 1),
        (0.5, 0.0, 0),
        (0.5, 1.0, 1),
        (0.5, 1.0, 0),
        (1.0, 1.0, 0),
    ] {
        let b = BidVector::new(vec![x, y])?;
        increments.push((format!("({x},{y})"), i, first_price_theta(&b, i)?));
    }
    let path_dependent = (path_one - path_two).abs() > 1e-12;
    Ok(Counterexample {
        increments,
        path_one,
        path_two,
        loop_integral,
        path_dependent,
        verdict: if path_dependent {
            "path-dependent: no side-contract-proof extension exists".into()
        } else {
            "path-independent".into()
        },
    })
}
