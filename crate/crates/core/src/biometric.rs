//! Identification, verification and continuous verification against a
//! population of per-user models, plus Manhattan distance baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSequence;
use crate::error::{PohmmError, Result};
use crate::inference::ForwardState;
use crate::model::PohmmParams;

/// Window length of the continuous-verification penalty.
pub const DEFAULT_WINDOW: usize = 25;

/// One fitted model per user, kept in id order.
#[derive(Debug, Clone)]
pub struct Population {
    ids: Vec<String>,
    models: Vec<PohmmParams>,
}

impl Population {
    pub fn new(mut members: Vec<(String, PohmmParams)>) -> Result<Self> {
        if members.is_empty() {
            return Err(PohmmError::InvalidConfig("population is empty".into()));
        }
        members.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = members.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(PohmmError::InvalidConfig(format!("duplicate user id {:?}", w[0].0)));
        }
        let (n0, k0, kind0) = (members[0].1.n_states(), members[0].1.n_features(), members[0].1.kind());
        if members.iter().any(|(_, m)| m.n_states() != n0 || m.n_features() != k0 || m.kind() != kind0) {
            return Err(PohmmError::InvalidConfig("population models must share states, features and emission kind".into()));
        }
        let (ids, models) = members.into_iter().unzip();
        Ok(Self { ids, models })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn models(&self) -> &[PohmmParams] {
        &self.models
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(id)).map_err(|_| PohmmError::UnknownUser(id.to_string()))
    }

    /// Log-likelihood of `query` under every model, in id order. Models that
    /// fail to score yield `None` and a warning.
    pub fn logliks(&self, query: &LabeledSequence) -> Vec<Option<f64>> {
        self.models
            .par_iter()
            .zip(&self.ids)
            .map(|(m, id)| match m.loglik(&query.encode(m.alphabet())) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(v) => {
                    log::warn!("model {id} gave log-likelihood {v}; excluded");
                    None
                }
                Err(e) => {
                    log::warn!("model {id} failed to score query: {e}; excluded");
                    None
                }
            })
            .collect()
    }
}

/// Index of the best score; ties go to the lowest index, `None` entries are
/// skipped.
pub fn argmax_score(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Maximum-likelihood user; ties resolve to the smallest id.
pub fn identify(query: &LabeledSequence, population: &Population) -> Result<String> {
    argmax_score(&population.logliks(query)).map(|i| population.ids[i].clone()).ok_or(PohmmError::NonFiniteLikelihood)
}

/// Min-max normalization of `scores[claimed]` over the population; 0.5 when
/// every score is equal. Failed scores are ignored, and a failed claimed score
/// normalizes to 0.
pub fn min_max_normalize(scores: &[Option<f64>], claimed: usize) -> f64 {
    let valid = scores.iter().flatten();
    let lo = valid.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.copied().fold(f64::NEG_INFINITY, f64::max);
    match scores[claimed] {
        None => 0.0,
        Some(_) if hi <= lo => 0.5,
        Some(v) => (v - lo) / (hi - lo),
    }
}

/// Claimed model's log-likelihood, min-max normalized over the population.
pub fn verification_score(query: &LabeledSequence, claimed: &str, population: &Population) -> Result<f64> {
    if population.len() < 2 {
        return Err(PohmmError::InvalidConfig("verification needs at least two models".into()));
    }
    let c = population.index_of(claimed)?;
    Ok(min_max_normalize(&population.logliks(query), c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ascending; the last entry is +∞ (reject everything).
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub eer: f64,
}

/// ROC over every observed score; a claim is accepted when score ≥ threshold.
/// The EER interpolates linearly where FAR − FRR changes sign.
pub fn roc_eer(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(PohmmError::InvalidConfig("ROC needs genuine and impostor scores".into()));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(PohmmError::InvalidConfig("NaN score".into()));
    }
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, im.len() as f64);
    let far: Vec<f64> = thresholds.iter().map(|&t| (im.len() - im.partition_point(|&s| s < t)) as f64 / ni).collect();
    let frr: Vec<f64> = thresholds.iter().map(|&t| g.partition_point(|&s| s < t) as f64 / ng).collect();

    // FAR − FRR starts at 1 − 0 and ends at 0 − 1, so a crossing exists.
    let k = (0..thresholds.len()).find(|&k| far[k] - frr[k] <= 0.0).unwrap_or(thresholds.len() - 1);
    let d2 = far[k] - frr[k];
    let eer = if d2 == 0.0 || k == 0 {
        far[k]
    } else {
        let d1 = far[k - 1] - frr[k - 1];
        let s = d1 / (d1 - d2);
        far[k - 1] + s * (far[k] - far[k - 1])
    };
    Ok(RocCurve { thresholds, far, frr, eer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTrace {
    /// Rank of the claimed model at each event, 0 = best.
    pub ranks: Vec<usize>,
    pub window: usize,
    /// Sum of the ranks over the last min(n, W) events.
    pub cumulative: Vec<f64>,
    pub threshold: Option<f64>,
    /// 1-based event index of the first penalty above the threshold.
    pub rejected_at: Option<usize>,
}

impl PenaltyTrace {
    pub fn from_ranks(ranks: Vec<usize>, window: usize) -> Self {
        let mut cumulative = Vec::with_capacity(ranks.len());
        let mut sum = 0usize;
        for n in 0..ranks.len() {
            sum += ranks[n];
            if n >= window {
                sum -= ranks[n - window];
            }
            cumulative.push(sum as f64);
        }
        Self { ranks, window, cumulative, threshold: None, rejected_at: None }
    }

    pub fn max_penalty(&self) -> f64 {
        self.cumulative.iter().copied().fold(0.0, f64::max)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.rejected_at = self.cumulative.iter().position(|&c| c > threshold).map(|i| i + 1);
        self.threshold = Some(threshold);
        self
    }
}

/// Rank of `scores[claimed]`: models scoring strictly higher, plus tied models
/// with a smaller id.
pub fn rank_of(scores: &[f64], claimed: usize) -> usize {
    let v = scores[claimed];
    scores.iter().enumerate().filter(|&(i, &s)| s > v || (s == v && i < claimed)).count()
}

/// Per-event log-likelihood increments of `query` under every model, indexed
/// `[model][event]`. Failures score −∞ from that event on.
pub fn incremental_logliks(query: &LabeledSequence, population: &Population) -> Vec<Vec<f64>> {
    population
        .models
        .par_iter()
        .map(|m| {
            let seq = query.encode(m.alphabet());
            let mut state = ForwardState::new(m);
            let mut failed = false;
            seq.events
                .iter()
                .zip(&seq.features)
                .map(|(&e, x)| {
                    if !failed {
                        match state.push(e, x) {
                            Ok(v) if v.is_finite() => return v,
                            _ => failed = true,
                        }
                    }
                    f64::NEG_INFINITY
                })
                .collect()
        })
        .collect()
}

/// Rank penalty of the claimed model at every event of `query`.
pub fn continuous_penalty(query: &LabeledSequence, claimed: &str, population: &Population, window: usize) -> Result<PenaltyTrace> {
    if population.len() < 2 {
        return Err(PohmmError::InvalidConfig("continuous verification needs at least two models".into()));
    }
    if window == 0 {
        return Err(PohmmError::InvalidConfig("window must be positive".into()));
    }
    let c = population.index_of(claimed)?;
    let inc = incremental_logliks(query, population);
    let mut scores = vec![0.0; population.len()];
    let ranks = (0..query.len())
        .map(|n| {
            for (s, row) in scores.iter_mut().zip(&inc) {
                *s = row[n];
            }
            rank_of(&scores, c)
        })
        .collect();
    Ok(PenaltyTrace::from_ranks(ranks, window))
}

/// First 1-based index where the penalty exceeds `threshold`, or the
/// sequence length when it never does.
pub fn max_rejection_time(trace: &PenaltyTrace, threshold: f64) -> usize {
    trace.cumulative.iter().position(|&c| c > threshold).map_or(trace.cumulative.len(), |i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrtRecord {
    pub model: String,
    pub impostor: String,
    pub threshold: f64,
    pub mrt: usize,
    pub length: usize,
}

/// One round of continuous verification. Every model's threshold is the
/// largest penalty its own user's queries reach, so the genuine user is never
/// rejected; each other user's query then gets its MRT against that model.
pub fn amrt_round(queries: &[(String, LabeledSequence)], population: &Population, window: usize) -> Result<Vec<MrtRecord>> {
    let mut records = Vec::new();
    for model_id in &population.ids {
        let mut genuine = Vec::new();
        let mut impostors = Vec::new();
        for (user, q) in queries {
            let trace = continuous_penalty(q, model_id, population, window)?;
            if user == model_id {
                genuine.push(trace);
            } else {
                impostors.push((user, trace));
            }
        }
        if genuine.is_empty() {
            return Err(PohmmError::InvalidConfig(format!("no genuine query for user {model_id}")));
        }
        let threshold = genuine.iter().map(PenaltyTrace::max_penalty).fold(0.0, f64::max);
        for t in genuine {
            assert!(t.with_threshold(threshold).rejected_at.is_none(), "genuine user {model_id} rejected");
        }
        for (user, trace) in impostors {
            records.push(MrtRecord {
                model: model_id.clone(),
                impostor: user.clone(),
                threshold,
                mrt: max_rejection_time(&trace, threshold),
                length: trace.cumulative.len(),
            });
        }
    }
    Ok(records)
}

/// Mean MRT over records.
pub fn amrt(records: &[MrtRecord]) -> f64 {
    records.iter().map(|r| r.mrt as f64).sum::<f64>() / records.len() as f64
}

/// Mean absolute deviation of each feature from its mean, over all vectors.
pub fn global_mad(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mean = mean_vector(vectors)?;
    let n = vectors.len() as f64;
    let mut mad = vec![0.0; mean.len()];
    for v in vectors {
        for ((m, x), mu) in mad.iter_mut().zip(v).zip(&mean) {
            *m += (x - mu).abs() / n;
        }
    }
    Ok(mad)
}

pub fn mean_vector(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = vectors.first().map(Vec::len).ok_or(PohmmError::NoSequences)?;
    let mut mean = vec![0.0; k];
    for v in vectors {
        if v.len() != k {
            return Err(PohmmError::DimensionMismatch { expected: k, got: v.len() });
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Negative Manhattan distance from `query` to the template mean, each term
/// optionally divided by a per-feature scale floored at 1e-9.
pub fn manhattan_score(query: &[f64], template_mean: &[f64], scale: Option<&[f64]>) -> Result<f64> {
    if query.len() != template_mean.len() || scale.is_some_and(|s| s.len() != query.len()) {
        return Err(PohmmError::DimensionMismatch { expected: template_mean.len(), got: query.len() });
    }
    let mut d = 0.0;
    for (i, (q, m)) in query.iter().zip(template_mean).enumerate() {
        let s = scale.map_or(1.0, |s| s[i].max(1e-9));
        d += (q - m).abs() / s;
    }
    Ok(-d)
}

/// [`manhattan_score`] against the mean of `templates`.
pub fn manhattan_scores(query: &[f64], templates: &[Vec<f64>], global_mad: Option<&[f64]>) -> Result<f64> {
    manhattan_score(query, &mean_vector(templates)?, global_mad)
}
