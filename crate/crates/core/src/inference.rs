//! Scaled forward/backward recursions, posteriors and state decoding.
//!
//! At step n the forward vector is normalized to sum to one and the
//! normalizer is kept in log form, so `loglik = Σ log_scale[n]`. The backward
//! vector uses the same constants (β̂_N = 1, β̂_n = Σ_j a b β̂_{n+1} / c_{n+1}),
//! which makes `Σ_j α̂_n[j] β̂_n[j] = 1` at every step.

use crate::error::{PohmmError, Result};
use crate::model::{ObservationSequence, PohmmParams};

/// Output of the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Scaled α, N×M.
    pub alpha: Vec<f64>,
    /// ln of the per-step normalizers.
    pub log_scale: Vec<f64>,
    pub loglik: f64,
    /// ln b for every step and state, N×M.
    pub log_emission: Vec<f64>,
}

/// Posterior state and transition probabilities of one sequence.
#[derive(Debug, Clone)]
pub struct PosteriorTables {
    pub loglik: f64,
    /// γ, N×M.
    pub gamma: Vec<f64>,
    /// ξ, (N−1)×M×M.
    pub xi: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl PosteriorTables {
    pub fn gamma_row(&self, n: usize, big_m: usize) -> &[f64] {
        &self.gamma[n * big_m..(n + 1) * big_m]
    }
}

pub(crate) fn log_emissions(params: &PohmmParams, seq: &ObservationSequence) -> Result<Vec<f64>> {
    let big_m = params.n_states();
    let mut out = Vec::with_capacity(seq.len() * big_m);
    for (&ev, x) in seq.events.iter().zip(&seq.features) {
        for e in params.emissions_for(ev) {
            out.push(e.log_density(x)?);
        }
    }
    Ok(out)
}

/// One normalized forward update. `pred` holds the predicted state
/// distribution on entry and the filtered one on exit; returns ln c_n.
#[inline]
fn absorb(pred: &mut [f64], log_b: &[f64]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for (p, &lb) in pred.iter_mut().zip(log_b) {
        *p = if *p > 0.0 { p.ln() + lb } else { f64::NEG_INFINITY };
        if *p > max {
            max = *p;
        }
    }
    if !max.is_finite() {
        return Err(PohmmError::NonFiniteLikelihood);
    }
    let mut c = 0.0;
    for p in pred.iter_mut() {
        *p = (*p - max).exp();
        c += *p;
    }
    for p in pred.iter_mut() {
        *p /= c;
    }
    Ok(c.ln() + max)
}

#[inline]
fn predict(prev: &[f64], trans: &[f64], out: &mut [f64]) {
    let big_m = prev.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &a) in prev.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &trans[i * big_m..(i + 1) * big_m];
        for (o, &t) in out.iter_mut().zip(row) {
            *o += a * t;
        }
    }
}

/// Forward pass with per-step scaling.
pub fn forward(params: &PohmmParams, seq: &ObservationSequence) -> Result<ForwardPass> {
    let n = seq.len();
    if n == 0 {
        return Err(PohmmError::EmptySequence);
    }
    let big_m = params.n_states();
    let log_emission = log_emissions(params, seq)?;
    let mut alpha = vec![0.0; n * big_m];
    let mut log_scale = Vec::with_capacity(n);
    let mut tm = vec![0.0; big_m * big_m];

    alpha[..big_m].copy_from_slice(params.start_probs(seq.events[0]));
    log_scale.push(absorb(&mut alpha[..big_m], &log_emission[..big_m])?);
    for t in 1..n {
        params.transition_matrix(seq.events[t - 1], seq.events[t], &mut tm);
        let (done, rest) = alpha.split_at_mut(t * big_m);
        let cur = &mut rest[..big_m];
        predict(&done[(t - 1) * big_m..], &tm, cur);
        log_scale.push(absorb(cur, &log_emission[t * big_m..(t + 1) * big_m])?);
    }
    let loglik = log_scale.iter().sum();
    Ok(ForwardPass { alpha, log_scale, loglik, log_emission })
}

/// Backward pass scaled by the forward normalizers.
pub fn backward(params: &PohmmParams, seq: &ObservationSequence, fwd: &ForwardPass) -> Result<Vec<f64>> {
    let n = seq.len();
    if n == 0 {
        return Err(PohmmError::EmptySequence);
    }
    let big_m = params.n_states();
    let mut beta = vec![0.0; n * big_m];
    beta[(n - 1) * big_m..].iter_mut().for_each(|b| *b = 1.0);
    let mut tm = vec![0.0; big_m * big_m];
    let mut w = vec![0.0; big_m];
    for t in (0..n - 1).rev() {
        params.transition_matrix(seq.events[t], seq.events[t + 1], &mut tm);
        let ls = fwd.log_scale[t + 1];
        for j in 0..big_m {
            w[j] = (fwd.log_emission[(t + 1) * big_m + j] - ls).exp() * beta[(t + 1) * big_m + j];
        }
        for i in 0..big_m {
            let row = &tm[i * big_m..(i + 1) * big_m];
            beta[t * big_m + i] = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        }
    }
    Ok(beta)
}

/// Posterior state (γ) and transition (ξ) probabilities.
pub fn posteriors(params: &PohmmParams, seq: &ObservationSequence) -> Result<PosteriorTables> {
    let fwd = forward(params, seq)?;
    let beta = backward(params, seq, &fwd)?;
    let n = seq.len();
    let big_m = params.n_states();

    let mut gamma = vec![0.0; n * big_m];
    for t in 0..n {
        let row = &mut gamma[t * big_m..(t + 1) * big_m];
        let mut s = 0.0;
        for j in 0..big_m {
            row[j] = fwd.alpha[t * big_m + j] * beta[t * big_m + j];
            s += row[j];
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(PohmmError::NonFiniteLikelihood);
        }
        row.iter_mut().for_each(|g| *g /= s);
    }

    let mm = big_m * big_m;
    let mut xi = vec![0.0; n.saturating_sub(1) * mm];
    let mut tm = vec![0.0; mm];
    let mut w = vec![0.0; big_m];
    for t in 0..n.saturating_sub(1) {
        params.transition_matrix(seq.events[t], seq.events[t + 1], &mut tm);
        let ls = fwd.log_scale[t + 1];
        for j in 0..big_m {
            w[j] = (fwd.log_emission[(t + 1) * big_m + j] - ls).exp() * beta[(t + 1) * big_m + j];
        }
        let cell = &mut xi[t * mm..(t + 1) * mm];
        let mut s = 0.0;
        for i in 0..big_m {
            let a = fwd.alpha[t * big_m + i];
            for j in 0..big_m {
                let v = a * tm[i * big_m + j] * w[j];
                cell[i * big_m + j] = v;
                s += v;
            }
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(PohmmError::NonFiniteLikelihood);
        }
        cell.iter_mut().for_each(|v| *v /= s);
    }

    Ok(PosteriorTables { loglik: fwd.loglik, gamma, xi, log_scale: fwd.log_scale })
}

/// Posterior-argmax state at every step; ties go to the smaller index.
pub fn predict_states(params: &PohmmParams, seq: &ObservationSequence) -> Result<Vec<usize>> {
    let post = posteriors(params, seq)?;
    let big_m = params.n_states();
    Ok((0..seq.len()).map(|t| argmax_first(post.gamma_row(t, big_m))).collect())
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = j;
        }
    }
    best
}

/// Forward filter that accepts one observation at a time.
///
/// Each push returns ln P(x_n | x_1..x_{n−1}); the running sum is identical to
/// the full-sequence log-likelihood from [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardState<'a> {
    params: &'a PohmmParams,
    alpha: Vec<f64>,
    scratch: Vec<f64>,
    tm: Vec<f64>,
    prev_event: Option<usize>,
    loglik: f64,
    steps: usize,
}

impl<'a> ForwardState<'a> {
    pub fn new(params: &'a PohmmParams) -> Self {
        let big_m = params.n_states();
        Self {
            params,
            alpha: vec![0.0; big_m],
            scratch: vec![0.0; big_m],
            tm: vec![0.0; big_m * big_m],
            prev_event: None,
            loglik: 0.0,
            steps: 0,
        }
    }

    pub fn push(&mut self, event: usize, x: &[f64]) -> Result<f64> {
        let log_b: Vec<f64> = self.params.emissions_for(event).iter().map(|e| e.log_density(x)).collect::<Result<_>>()?;
        match self.prev_event {
            None => self.scratch.copy_from_slice(self.params.start_probs(event)),
            Some(prev) => {
                self.params.transition_matrix(prev, event, &mut self.tm);
                predict(&self.alpha, &self.tm, &mut self.scratch);
            }
        }
        let inc = absorb(&mut self.scratch, &log_b)?;
        std::mem::swap(&mut self.alpha, &mut self.scratch);
        self.prev_event = Some(event);
        self.loglik += inc;
        self.steps += 1;
        Ok(inc)
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Filtered state distribution after the last push.
    pub fn filtered(&self) -> &[f64] {
        &self.alpha
    }
}

impl PohmmParams {
    /// ln P(x | Ω) of a sequence.
    pub fn loglik(&self, seq: &ObservationSequence) -> Result<f64> {
        forward(self, seq).map(|f| f.loglik)
    }

    pub fn posteriors(&self, seq: &ObservationSequence) -> Result<PosteriorTables> {
        posteriors(self, seq)
    }

    pub fn predict_states(&self, seq: &ObservationSequence) -> Result<Vec<usize>> {
        predict_states(self, seq)
    }
}
