//! Per-(state, event type) emission distributions.
//!
//! Each feature is an independent normal or log-normal. Log-normal parameters
//! live in log space (log-mean η, log-standard-deviation ρ).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{PohmmError, Result};

/// Lower bound on every emission scale.
pub const SCALE_FLOOR: f64 = 1e-4;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionKind {
    #[serde(alias = "log-normal")]
    Lognormal,
    Normal,
}

impl EmissionKind {
    /// Maps a raw value into the space where the distribution is normal.
    #[inline]
    pub fn transform(self, x: f64) -> Result<f64> {
        match self {
            EmissionKind::Normal => Ok(x),
            EmissionKind::Lognormal => {
                if x > 0.0 {
                    Ok(x.ln())
                } else {
                    Err(PohmmError::Domain { value: x })
                }
            }
        }
    }

    /// Inverse of [`transform`](Self::transform).
    #[inline]
    pub fn untransform(self, t: f64) -> f64 {
        match self {
            EmissionKind::Normal => t,
            EmissionKind::Lognormal => t.exp(),
        }
    }
}

impl std::str::FromStr for EmissionKind {
    type Err = PohmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lognormal" | "log-normal" => Ok(EmissionKind::Lognormal),
            "normal" | "gaussian" => Ok(EmissionKind::Normal),
            other => Err(PohmmError::InvalidConfig(format!("unknown emission kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for EmissionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmissionKind::Lognormal => "lognormal",
            EmissionKind::Normal => "normal",
        })
    }
}

/// Location and scale per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub kind: EmissionKind,
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl EmissionParams {
    pub fn new(kind: EmissionKind, loc: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let p = Self { kind, loc, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn feature_count(&self) -> usize {
        self.loc.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.loc.is_empty() || self.loc.len() != self.scale.len() {
            return Err(PohmmError::InvalidParams("emission feature count".into()));
        }
        for (&l, &s) in self.loc.iter().zip(&self.scale) {
            if !l.is_finite() || !s.is_finite() || s < SCALE_FLOOR {
                return Err(PohmmError::InvalidParams(format!("emission location {l} / scale {s} out of range")));
            }
        }
        Ok(())
    }

    /// Sum over features of the log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.loc.len() {
            return Err(PohmmError::DimensionMismatch { expected: self.loc.len(), got: x.len() });
        }
        let mut total = 0.0;
        for ((&xi, &loc), &scale) in x.iter().zip(&self.loc).zip(&self.scale) {
            let t = self.kind.transform(xi)?;
            let z = (t - loc) / scale;
            total += -scale.ln() - HALF_LN_2PI - 0.5 * z * z;
            if self.kind == EmissionKind::Lognormal {
                total -= t;
            }
        }
        Ok(total)
    }

    /// Cumulative distribution of a single feature.
    pub fn cdf(&self, feature: usize, x: f64) -> f64 {
        let t = match self.kind {
            EmissionKind::Normal => x,
            EmissionKind::Lognormal => {
                if x <= 0.0 {
                    return 0.0;
                }
                x.ln()
            }
        };
        normal_cdf((t - self.loc[feature]) / self.scale[feature])
    }

    /// Density of a single feature.
    pub fn pdf(&self, feature: usize, x: f64) -> f64 {
        let one = EmissionParams { kind: self.kind, loc: vec![self.loc[feature]], scale: vec![self.scale[feature]] };
        one.log_density(&[x]).map(f64::exp).unwrap_or(0.0)
    }

    /// `count` i.i.d. feature vectors.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.loc
            .iter()
            .zip(&self.scale)
            .map(|(&loc, &scale)| {
                let z: f64 = StandardNormal.sample(rng);
                self.kind.untransform(loc + scale * z)
            })
            .collect()
    }
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Numerically stable weighted mean/variance accumulator (West's update).
///
/// Accumulators merge with Chan's pairwise formula, so partial sums computed
/// on separate sequences combine in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedMoments {
    pub weight: f64,
    pub mean: f64,
    pub m2: f64,
}

impl WeightedMoments {
    #[inline]
    pub fn push(&mut self, x: f64, w: f64) {
        if w <= 0.0 {
            return;
        }
        self.weight += w;
        let delta = x - self.mean;
        let r = delta * w / self.weight;
        self.mean += r;
        self.m2 += (self.weight - w) * delta * r;
    }

    pub fn merge(&mut self, other: &WeightedMoments) {
        if other.weight <= 0.0 {
            return;
        }
        if self.weight <= 0.0 {
            *self = other.clone();
            return;
        }
        let total = self.weight + other.weight;
        let delta = other.mean - self.mean;
        self.mean += delta * other.weight / total;
        self.m2 += other.m2 + delta * delta * self.weight * other.weight / total;
        self.weight = total;
    }

    pub fn variance(&self) -> f64 {
        if self.weight > 0.0 {
            (self.m2 / self.weight).max(0.0)
        } else {
            0.0
        }
    }
}

/// Weighted moments for each feature of the transformed values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments(pub Vec<WeightedMoments>);

impl FeatureMoments {
    pub fn new(features: usize) -> Self {
        Self(vec![WeightedMoments::default(); features])
    }

    #[inline]
    pub fn push(&mut self, t: &[f64], w: f64) {
        for (m, &x) in self.0.iter_mut().zip(t) {
            m.push(x, w);
        }
    }

    pub fn merge(&mut self, other: &FeatureMoments) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.merge(b);
        }
    }

    pub fn weight(&self) -> f64 {
        self.0.first().map_or(0.0, |m| m.weight)
    }

    /// Maximum-likelihood parameters; scales clamped to [`SCALE_FLOOR`].
    pub fn to_params(&self, kind: EmissionKind) -> Result<EmissionParams> {
        if !(self.weight() > 0.0) {
            return Err(PohmmError::DegenerateResponsibility);
        }
        Ok(EmissionParams {
            kind,
            loc: self.0.iter().map(|m| m.mean).collect(),
            scale: self.0.iter().map(|m| m.variance().sqrt().max(SCALE_FLOOR)).collect(),
        })
    }
}

/// Weighted maximum-likelihood estimate of an emission distribution.
pub fn weighted_mle(xs: &[Vec<f64>], weights: &[f64], kind: EmissionKind) -> Result<EmissionParams> {
    if xs.len() != weights.len() {
        return Err(PohmmError::DimensionMismatch { expected: xs.len(), got: weights.len() });
    }
    let k = xs.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(PohmmError::DegenerateResponsibility);
    }
    let mut acc = FeatureMoments::new(k);
    let mut t = vec![0.0; k];
    for (x, &w) in xs.iter().zip(weights) {
        if x.len() != k {
            return Err(PohmmError::DimensionMismatch { expected: k, got: x.len() });
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(PohmmError::InvalidParams(format!("weight {w}")));
        }
        for (ti, &xi) in t.iter_mut().zip(x) {
            *ti = kind.transform(xi)?;
        }
        acc.push(&t, w);
    }
    acc.to_params(kind)
}

/// Log density of a normal distribution, used by oracles in tests.
#[cfg(test)]
pub(crate) fn normal_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln() - (x - mu) * (x - mu) / (2.0 * sigma * sigma)
}
