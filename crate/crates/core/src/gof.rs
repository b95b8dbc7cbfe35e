//! Monte Carlo goodness-of-fit test on the key-press intervals.
//!
//! The area between the empirical CDF and the model's marginal CDF is compared
//! with the same statistic on surrogate samples drawn from, and refit to, the
//! fitted model.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionKind, EmissionParams};
use crate::error::{PohmmError, Result};
use crate::estimation::{fit, FitConfig};
use crate::model::{ObservationSequence, PohmmParams};
use crate::rng::{self, Rng};

/// Integration grid size for the area statistic.
pub const GRID_POINTS: usize = 2048;

/// Mixture Σ_ω Σ_j Π[ω] Π[j] f(x; b[j|ω]) of single-feature components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDensity {
    pub weights: Vec<f64>,
    pub components: Vec<EmissionParams>,
}

impl MixtureDensity {
    pub fn kind(&self) -> EmissionKind {
        self.components[0].kind
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.pdf(0, x)).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.cdf(0, x)).sum()
    }
}

/// Exact marginal density of feature `feature` under `params`.
pub fn marginal_density(params: &PohmmParams, feature: usize) -> MixtureDensity {
    let big_m = params.n_states();
    let pi_event = &params.event_chain().stationary;
    let pi_state = params.state_stationary();
    let mut weights = Vec::with_capacity(params.n_events() * big_m);
    let mut components = Vec::with_capacity(weights.capacity());
    for (w, &pw) in pi_event.iter().enumerate() {
        for (j, &pj) in pi_state.iter().enumerate() {
            let e = params.emission(w, j);
            weights.push(pw * pj);
            components.push(EmissionParams { kind: e.kind, loc: vec![e.loc[feature]], scale: vec![e.scale[feature]] });
        }
    }
    MixtureDensity { weights, components }
}

/// Trapezoidal ∫|F_D − F_M| over [min/2, 2·max] on a log-spaced grid.
///
/// Samples containing nonpositive values use a linear grid over the sample
/// range widened by its span on each side.
pub fn area_statistic(sample: &[f64], model: &MixtureDensity) -> Result<f64> {
    area_statistic_on_grid(sample, model, GRID_POINTS)
}

pub fn area_statistic_on_grid(sample: &[f64], model: &MixtureDensity, points: usize) -> Result<f64> {
    if sample.is_empty() {
        return Err(PohmmError::EmptySequence);
    }
    if let Some(&bad) = sample.iter().find(|x| !x.is_finite()) {
        return Err(PohmmError::Domain { value: bad });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let grid: Vec<f64> = if lo > 0.0 {
        let (a, b) = ((0.5 * lo).ln(), (2.0 * hi).ln());
        (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
    } else {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (a, b) = (lo - span, hi + span);
        (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect()
    };
    let n = sorted.len() as f64;
    let gap = |x: f64| {
        let empirical = sorted.partition_point(|&v| v <= x) as f64 / n;
        (empirical - model.cdf(x)).abs()
    };
    let mut prev = gap(grid[0]);
    let mut area = 0.0;
    for w in grid.windows(2) {
        let cur = gap(w[1]);
        area += 0.5 * (w[1] - w[0]) * (prev + cur);
        prev = cur;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofConfig {
    pub fit: FitConfig,
    /// Number of surrogates S.
    pub surrogates: usize,
    /// Draw surrogate event types from the fitted chain; otherwise reuse the
    /// observed event sequence.
    pub resample_events: bool,
}

impl Default for GofConfig {
    fn default() -> Self {
        Self { fit: FitConfig::default(), surrogates: 99, resample_events: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    #[serde(rename = "A")]
    pub a_empirical: f64,
    #[serde(rename = "A_surrogates")]
    pub a_surrogates: Vec<f64>,
    pub p_value: f64,
}

impl GofResult {
    /// (count(|A_s − ⟨A_s⟩| > |A − ⟨A_s⟩|) + 1) / (S + 1).
    pub fn from_statistics(a_empirical: f64, a_surrogates: Vec<f64>) -> Self {
        let s = a_surrogates.len();
        let centre = a_surrogates.iter().sum::<f64>() / s as f64;
        let observed = (a_empirical - centre).abs();
        let extreme = a_surrogates.iter().filter(|&&a| (a - centre).abs() > observed).count();
        let p_value = (extreme + 1) as f64 / (s + 1) as f64;
        Self { a_empirical, a_surrogates, p_value }
    }
}

fn taus(seq: &ObservationSequence) -> Vec<f64> {
    seq.features.iter().map(|x| x[0]).collect()
}

fn fitted_area(seq: &ObservationSequence, params: &PohmmParams, config: &FitConfig) -> Result<(PohmmParams, f64)> {
    let (fitted, _) = fit(std::slice::from_ref(seq), params.alphabet(), config)?;
    let a = area_statistic(&taus(seq), &marginal_density(&fitted, 0))?;
    Ok((fitted, a))
}

fn surrogate_area(fitted: &PohmmParams, seq: &ObservationSequence, config: &GofConfig, rng: &mut Rng) -> Result<f64> {
    let events = if config.resample_events { None } else { Some(seq.events.as_slice()) };
    let (surrogate, _) = fitted.sample(seq.len(), rng, events)?;
    fitted_area(&surrogate, fitted, &config.fit).map(|(_, a)| a)
}

/// Fits `template`'s alphabet to the first feature of `seq` and runs the
/// surrogate test. Surrogate `s` uses substream `s` of a seed drawn from
/// `rng`, so the result depends only on the generator state.
pub fn monte_carlo_gof(seq: &ObservationSequence, alphabet: &crate::EventAlphabet, config: &GofConfig, rng: &mut Rng) -> Result<GofResult> {
    if config.surrogates == 0 {
        return Err(PohmmError::InvalidConfig("need at least one surrogate".into()));
    }
    if seq.is_empty() {
        return Err(PohmmError::EmptySequence);
    }
    let seq = seq.project(0);
    let (fitted, _) = fit(std::slice::from_ref(&seq), alphabet, &config.fit)?;
    let a = area_statistic(&taus(&seq), &marginal_density(&fitted, 0))?;
    let base: u64 = rng.random();
    let a_surrogates = (0..config.surrogates)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::substream(base, s as u64);
            match surrogate_area(&fitted, &seq, config, &mut r) {
                Ok(v) => Ok(v),
                Err(e) => {
                    log::warn!("surrogate {s} failed ({e}); resampling once");
                    surrogate_area(&fitted, &seq, config, &mut r)
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GofResult::from_statistics(a, a_surrogates))
}
