//! I.i.d. valuation laws on `[0, 1]`.
//!
//! Every distribution is validated at construction: the pdf must be
//! nonnegative, bounded and integrate to one. Nothing is rescaled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mech::BidVector;
use crate::quadrature::adaptive_simpson;

/// Largest pdf value accepted by [`ValuationDistribution::crho_literal`].
pub const DEFAULT_PDF_CAP: f64 = 1e4;

const NORMALISATION_TOL: f64 = 1e-9;
const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    /// `rho(t) = 1`. No parameters.
    Uniform,
    /// Pdf values at `K + 1` equally spaced knots `0, 1/K, ..., 1`,
    /// linearly interpolated.
    PiecewiseLinearPdf,
    /// `rho(t) = (a + 1) t^a` with a single parameter `a >= 0`.
    TruncatedPower,
}

/// JSON form of a distribution: `{"kind": ..., "params": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl DistributionSpec {
    pub fn uniform() -> Self {
        Self {
            kind: DistributionKind::Uniform,
            params: Vec::new(),
        }
    }

    pub fn piecewise_linear(knots: Vec<f64>) -> Self {
        Self {
            kind: DistributionKind::PiecewiseLinearPdf,
            params: knots,
        }
    }

    pub fn power(a: f64) -> Self {
        Self {
            kind: DistributionKind::TruncatedPower,
            params: vec![a],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Uniform,
    Piecewise { knots: Vec<f64>, cdf: Vec<f64> },
    Power { a: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValuationDistribution {
    spec: DistributionSpec,
    shape: Shape,
    sup: f64,
}

impl ValuationDistribution {
    pub fn new(spec: DistributionSpec) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        if spec.params.iter().any(|p| !p.is_finite()) {
            return bad("parameters must be finite".into());
        }
        let (shape, sup) = match spec.kind {
            DistributionKind::Uniform => {
                if !spec.params.is_empty() {
                    return bad("uniform takes no parameters".into());
                }
                (Shape::Uniform, 1.0)
            }
            DistributionKind::TruncatedPower => {
                let &[a] = spec.params.as_slice() else {
                    return bad("truncated-power takes exactly one exponent".into());
                };
                if a < 0.0 {
                    // (a+1) t^a blows up at 0 for a < 0
                    return bad(format!("exponent {a} gives an unbounded pdf"));
                }
                (Shape::Power { a }, a + 1.0)
            }
            DistributionKind::PiecewiseLinearPdf => {
                let knots = spec.params.clone();
                if knots.len() < 2 {
                    return bad("piecewise-linear-pdf needs at least two knot values".into());
                }
                if knots.iter().any(|&y| y < 0.0) {
                    return bad("pdf knot values must be nonnegative".into());
                }
                let width = 1.0 / (knots.len() - 1) as f64;
                let mut cdf = Vec::with_capacity(knots.len());
                cdf.push(0.0);
                for w in knots.windows(2) {
                    let last = *cdf.last().unwrap();
                    cdf.push(last + 0.5 * width * (w[0] + w[1]));
                }
                let sup = knots.iter().cloned().fold(0.0, f64::max);
                (Shape::Piecewise { knots, cdf }, sup)
            }
        };
        let dist = Self { spec, shape, sup };
        let mass = dist.quadrature_mass();
        if (mass - 1.0).abs() > NORMALISATION_TOL {
            return bad(format!("pdf integrates to {mass}, not 1"));
        }
        Ok(dist)
    }

    pub fn uniform() -> Self {
        Self::new(DistributionSpec::uniform()).expect("uniform is valid")
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    /// Supremum of the pdf on `[0, 1]`.
    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match &self.shape {
            Shape::Uniform => 1.0,
            Shape::Power { a } => (a + 1.0) * t.powf(*a),
            Shape::Piecewise { knots, .. } => {
                let segs = knots.len() - 1;
                let x = t * segs as f64;
                let j = (x.floor() as usize).min(segs - 1);
                let frac = x - j as f64;
                knots[j] + (knots[j + 1] - knots[j]) * frac
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match &self.shape {
            Shape::Uniform => t,
            Shape::Power { a } => t.powf(a + 1.0),
            Shape::Piecewise { knots, cdf } => {
                let segs = knots.len() - 1;
                let width = 1.0 / segs as f64;
                let x = t * segs as f64;
                let j = (x.floor() as usize).min(segs - 1);
                let d = t - j as f64 * width;
                let slope = (knots[j + 1] - knots[j]) / width;
                cdf[j] + knots[j] * d + 0.5 * slope * d * d
            }
        }
    }

    /// Inverse cdf.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.shape {
            Shape::Uniform => u,
            Shape::Power { a } => u.powf(1.0 / (a + 1.0)),
            Shape::Piecewise { knots, cdf } => {
                let segs = knots.len() - 1;
                let width = 1.0 / segs as f64;
                // first segment whose right cdf reaches u and carries mass
                let j = (0..segs)
                    .find(|&j| cdf[j + 1] >= u && cdf[j + 1] > cdf[j])
                    .unwrap_or(segs - 1);
                let r = (u - cdf[j]).max(0.0);
                let y0 = knots[j];
                let slope = (knots[j + 1] - y0) / width;
                let disc = (y0 * y0 + 2.0 * slope * r).max(0.0);
                let denom = y0 + disc.sqrt();
                let d = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
                (j as f64 * width + d.clamp(0.0, width)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// `n` independent draws. Deterministic given the generator state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<BidVector> {
        if n == 0 {
            return Err(Error::EmptyBids);
        }
        Ok(BidVector::from_unchecked(
            (0..n).map(|_| self.sample_one(rng)).collect(),
        ))
    }

    /// Fills `out` with independent draws.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out {
            *x = self.sample_one(rng);
        }
    }

    /// `E[v^2] = int t^2 rho(t) dt`.
    pub fn second_moment(&self) -> f64 {
        match &self.shape {
            Shape::Uniform => 1.0 / 3.0,
            Shape::Power { a } => (a + 1.0) / (a + 3.0),
            Shape::Piecewise { .. } => self.integrate_segments(|t| t * t * self.pdf(t)),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.shape {
            Shape::Uniform => 0.5,
            Shape::Power { a } => (a + 1.0) / (a + 2.0),
            Shape::Piecewise { .. } => self.integrate_segments(|t| t * self.pdf(t)),
        }
    }

    /// `int rho(t)^2 dt` with the default pdf cap.
    pub fn crho_literal(&self) -> Result<f64> {
        self.crho_literal_capped(DEFAULT_PDF_CAP)
    }

    pub fn crho_literal_capped(&self, cap: f64) -> Result<f64> {
        if self.sup > cap {
            return Err(Error::UnboundedPdf { sup: self.sup, cap });
        }
        Ok(match &self.shape {
            Shape::Uniform => 1.0,
            Shape::Power { a } => (a + 1.0) * (a + 1.0) / (2.0 * a + 1.0),
            Shape::Piecewise { .. } => self.integrate_segments(|t| self.pdf(t).powi(2)),
        })
    }

    /// Numerical mass of the pdf, used for the construction check.
    pub fn quadrature_mass(&self) -> f64 {
        self.integrate_segments(|t| self.pdf(t))
    }

    fn integrate_segments<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match &self.shape {
            Shape::Piecewise { knots, .. } => {
                let segs = knots.len() - 1;
                let width = 1.0 / segs as f64;
                (0..segs)
                    .map(|j| {
                        let a = j as f64 * width;
                        let b = if j + 1 == segs { 1.0 } else { a + width };
                        adaptive_simpson(&f, a, b, QUAD_TOL / segs as f64)
                    })
                    .sum()
            }
            _ => adaptive_simpson(f, 0.0, 1.0, QUAD_TOL),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{substream, Moments};

    fn linear_up() -> ValuationDistribution {
        ValuationDistribution::new(DistributionSpec::piecewise_linear(vec![0.0, 2.0])).unwrap()
    }

    #[test]
    fn uniform_sample_in_support() {
        let d = ValuationDistribution::uniform();
        let b = d.sample(&mut substream(3, 0), 3).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = linear_up();
        let a = d.sample(&mut substream(11, 4), 50).unwrap();
        let b = d.sample(&mut substream(11, 4), 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_mean_within_three_se() {
        let d = ValuationDistribution::uniform();
        let mut rng = substream(2024, 0);
        let m: Moments = (0..100_000).map(|_| d.sample_one(&mut rng)).collect();
        let se = (1.0f64 / 12.0 * 1e-5).sqrt();
        assert!((m.mean() - 0.5).abs() <= 3.0 * se, "{}", m.mean());
    }

    #[test]
    fn second_moments() {
        assert!((ValuationDistribution::uniform().second_moment() - 1.0 / 3.0).abs() < 1e-15);
        // int 2 t^3 dt = 1/2
        assert!((linear_up().second_moment() - 0.5).abs() < 1e-12);
        let p = ValuationDistribution::new(DistributionSpec::power(1.0)).unwrap();
        assert!((p.second_moment() - 0.5).abs() < 1e-15);
        let narrow = ValuationDistribution::new(DistributionSpec::power(2000.0)).unwrap();
        assert!(narrow.second_moment() > 0.999);
    }

    #[test]
    fn crho_values() {
        assert_eq!(
            ValuationDistribution::uniform().crho_literal().unwrap(),
            1.0
        );
        assert!((linear_up().crho_literal().unwrap() - 4.0 / 3.0).abs() < 1e-12);
        let down =
            ValuationDistribution::new(DistributionSpec::piecewise_linear(vec![2.0, 0.0])).unwrap();
        assert!((down.crho_literal().unwrap() - 4.0 / 3.0).abs() < 1e-12);
        let p = ValuationDistribution::new(DistributionSpec::power(1.0)).unwrap();
        assert!((p.crho_literal().unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn crho_respects_cap() {
        let p = ValuationDistribution::new(DistributionSpec::power(50.0)).unwrap();
        assert!(matches!(
            p.crho_literal_capped(10.0),
            Err(Error::UnboundedPdf { .. })
        ));
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(ValuationDistribution::new(DistributionSpec::power(-0.5)).is_err());
        assert!(
            ValuationDistribution::new(DistributionSpec::piecewise_linear(vec![1.0, 2.0])).is_err()
        );
        assert!(
            ValuationDistribution::new(DistributionSpec::piecewise_linear(vec![-1.0, 3.0]))
                .is_err()
        );
        let extra = DistributionSpec {
            kind: DistributionKind::Uniform,
            params: vec![1.0],
        };
        assert!(ValuationDistribution::new(extra).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = ValuationDistribution::new(DistributionSpec::piecewise_linear(vec![0.5, 1.5, 0.5]))
            .unwrap();
        for i in 0..=20 {
            let u = i as f64 / 20.0;
            assert!((d.cdf(d.quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_json_shape() {
        let s: DistributionSpec =
            serde_json::from_str(r#"{"kind": "piecewise-linear-pdf", "params": [0, 2]}"#).unwrap();
        assert_eq!(s, DistributionSpec::piecewise_linear(vec![0.0, 2.0]));
        let u: DistributionSpec = serde_json::from_str(r#"{"kind": "uniform"}"#).unwrap();
        assert_eq!(u.kind, DistributionKind::Uniform);
    }
}

/// Which distribution constant normalises the variation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    /// `E[v^2]`, which makes the variation term mean-zero.
    #[default]
    SecondMoment,
    /// `int rho^2`, the literal constant.
    RhoSquared,
}

impl CMode {
    pub fn resolve(self, dist: &ValuationDistribution) -> Result<f64> {
        match self {
            CMode::SecondMoment => Ok(dist.second_moment()),
            CMode::RhoSquared => dist.crho_literal(),
        }
    }
}
