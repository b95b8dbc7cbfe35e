//! Parameter estimation: observation-based initialization, the modified
//! Baum-Welch step, frequency-weighted smoothing toward the marginals, and the
//! full fit loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionKind, EmissionParams, FeatureMoments, SCALE_FLOOR};
use crate::error::{PohmmError, Result};
use crate::event_chain::{fit_event_chain, EventAlphabet};
use crate::inference::posteriors;
use crate::model::{ObservationSequence, PohmmParams};

/// Sequences per accumulation chunk. Fixed so that the reduction order, and
/// therefore every bit of the result, is independent of the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_states: usize,
    pub kind: EmissionKind,
    /// Stop once the log-likelihood gain of an iteration drops below this.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Spread of the initial state means, in observed standard deviations.
    pub bandwidth: f64,
    pub smoothing: bool,
    /// Additive smoothing for the event-type chain.
    pub pseudocount: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_states: 2,
            kind: EmissionKind::Lognormal,
            epsilon: 1e-6,
            max_iter: 1000,
            bandwidth: 2.0,
            smoothing: true,
            pseudocount: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(PohmmError::InvalidConfig("n_states must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(PohmmError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(PohmmError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.bandwidth >= 0.0 && self.bandwidth.is_finite()) {
            return Err(PohmmError::InvalidConfig("bandwidth must be a nonnegative number".into()));
        }
        if !(self.pseudocount >= 0.0 && self.pseudocount.is_finite()) {
            return Err(PohmmError::InvalidConfig("pseudocount must be a nonnegative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Log-likelihood of the parameters entering each iteration.
    pub loglik_trace: Vec<f64>,
    /// Number of parameter updates applied.
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
}

/// Event-type counts pooled over a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrequencies {
    /// f(ω).
    pub unigram: Vec<f64>,
    /// f(ψ,ω), m×m.
    pub bigram: Vec<f64>,
}

impl EventFrequencies {
    pub fn from_sequences(seqs: &[ObservationSequence], m: usize) -> Self {
        let mut unigram = vec![0.0; m];
        let mut bigram = vec![0.0; m * m];
        for s in seqs {
            for &e in &s.events {
                unigram[e] += 1.0;
            }
            for w in s.events.windows(2) {
                bigram[w[0] * m + w[1]] += 1.0;
            }
        }
        Self { unigram, bigram }
    }
}

/// Degrees of freedom m(M−1) + m²M(M−1) + mMK, with K free emission
/// parameters per state and event type.
pub fn dof(n_states: usize, m: usize, k: usize) -> usize {
    m * (n_states - 1) + m * m * n_states * (n_states - 1) + m * n_states * k
}

fn check_sequences(seqs: &[ObservationSequence], m: usize) -> Result<usize> {
    if seqs.is_empty() {
        return Err(PohmmError::NoSequences);
    }
    let k = seqs[0].features.first().map_or(0, Vec::len);
    for s in seqs {
        if s.is_empty() {
            return Err(PohmmError::EmptySequence);
        }
        if s.events.len() != s.features.len() {
            return Err(PohmmError::DimensionMismatch { expected: s.events.len(), got: s.features.len() });
        }
        for &e in &s.events {
            if e >= m {
                return Err(PohmmError::SymbolOutOfAlphabet { id: e, size: m });
            }
        }
        for x in &s.features {
            if x.len() != k || k == 0 {
                return Err(PohmmError::DimensionMismatch { expected: k, got: x.len() });
            }
        }
    }
    Ok(k)
}

/// Observation-based initial parameters.
///
/// Starts and transitions are uniform. For each event type the observed mean
/// and standard deviation of the (log-)features are computed and the M state
/// means spread evenly over mean ± h·sd, so state 0 always has the smallest
/// location. Event types without observations use the pooled moments.
pub fn init_params(seqs: &[ObservationSequence], alphabet: &EventAlphabet, config: &FitConfig) -> Result<PohmmParams> {
    config.validate()?;
    let m = alphabet.len();
    let k = check_sequences(seqs, m)?;
    let big_m = config.n_states;
    let kind = config.kind;

    let mut per_event = vec![FeatureMoments::new(k); m];
    let mut pooled = FeatureMoments::new(k);
    let mut t = vec![0.0; k];
    for s in seqs {
        for (&e, x) in s.events.iter().zip(&s.features) {
            for (ti, &xi) in t.iter_mut().zip(x) {
                *ti = kind.transform(xi)?;
            }
            per_event[e].push(&t, 1.0);
            pooled.push(&t, 1.0);
        }
    }

    let mut emit = Vec::with_capacity(m * big_m);
    for (w, moments) in per_event.iter().enumerate() {
        let src = if moments.weight() > 0.0 { moments } else { &pooled };
        let base = src.to_params(kind)?;
        for j in 0..big_m {
            let offset = if big_m > 1 { 2.0 * config.bandwidth * j as f64 / (big_m - 1) as f64 - config.bandwidth } else { 0.0 };
            let loc = base.loc.iter().zip(&base.scale).map(|(l, s)| l + offset * s).collect();
            let cell = EmissionParams { kind, loc, scale: base.scale.clone() };
            if cell.validate().is_err() {
                return Err(PohmmError::NonFinite { state: j, event: alphabet.label(w).to_string() });
            }
            emit.push(cell);
        }
    }

    let events: Vec<&[usize]> = seqs.iter().map(|s| s.events.as_slice()).collect();
    let chain = fit_event_chain(&events, alphabet, config.pseudocount)?;
    PohmmParams::with_uniform_dynamics(big_m, alphabet.clone(), emit, chain)
}

/// Expected sufficient statistics accumulated over sequences.
#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    pub start: Vec<f64>,
    pub start_count: Vec<f64>,
    /// Σξ in (ψ,i)→(ω,j) layout.
    pub trans: Vec<f64>,
    pub emit: Vec<FeatureMoments>,
    pub state_mass: Vec<f64>,
    pub loglik: f64,
}

impl SufficientStats {
    fn new(m: usize, big_m: usize, k: usize) -> Self {
        Self {
            start: vec![0.0; m * big_m],
            start_count: vec![0.0; m],
            trans: vec![0.0; m * m * big_m * big_m],
            emit: vec![FeatureMoments::new(k); m * big_m],
            state_mass: vec![0.0; big_m],
            loglik: 0.0,
        }
    }

    fn add_sequence(&mut self, params: &PohmmParams, seq: &ObservationSequence) -> Result<()> {
        let big_m = params.n_states();
        let kind = params.kind();
        let post = posteriors(params, seq)?;
        self.loglik += post.loglik;

        let first = seq.events[0];
        self.start_count[first] += 1.0;
        for j in 0..big_m {
            self.start[first * big_m + j] += post.gamma[j];
        }

        let mut t = vec![0.0; seq.features[0].len()];
        for (n, (&e, x)) in seq.events.iter().zip(&seq.features).enumerate() {
            for (ti, &xi) in t.iter_mut().zip(x) {
                *ti = kind.transform(xi)?;
            }
            for j in 0..big_m {
                let g = post.gamma[n * big_m + j];
                self.emit[e * big_m + j].push(&t, g);
                self.state_mass[j] += g;
            }
        }

        let mm = big_m * big_m;
        for n in 0..seq.len() - 1 {
            let (psi, w) = (seq.events[n], seq.events[n + 1]);
            let cell = &post.xi[n * mm..(n + 1) * mm];
            for i in 0..big_m {
                let off = params.trans_row_offset(psi, i, w);
                for j in 0..big_m {
                    self.trans[off + j] += cell[i * big_m + j];
                }
            }
        }
        Ok(())
    }

    fn merge(&mut self, other: &SufficientStats) {
        add_into(&mut self.start, &other.start);
        add_into(&mut self.start_count, &other.start_count);
        add_into(&mut self.trans, &other.trans);
        add_into(&mut self.state_mass, &other.state_mass);
        for (a, b) in self.emit.iter_mut().zip(&other.emit) {
            a.merge(b);
        }
        self.loglik += other.loglik;
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// E-step over all sequences: chunks in parallel, merged in input order.
pub(crate) fn expected_statistics(params: &PohmmParams, seqs: &[ObservationSequence]) -> Result<SufficientStats> {
    let (m, big_m, k) = (params.n_events(), params.n_states(), params.n_features());
    let partials: Vec<Result<SufficientStats>> = seqs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut st = SufficientStats::new(m, big_m, k);
            for s in chunk {
                st.add_sequence(params, s)?;
            }
            Ok(st)
        })
        .collect();
    let mut total = SufficientStats::new(m, big_m, k);
    for p in partials {
        total.merge(&p?);
    }
    Ok(total)
}

/// One iteration: expectation, re-estimation, marginalization and (optionally)
/// smoothing. Returns the updated parameters and the total log-likelihood of
/// the parameters passed in.
///
/// Cells whose conditioning events never occur keep their previous values.
pub fn em_step(params: &PohmmParams, seqs: &[ObservationSequence], smoothing: bool) -> Result<(PohmmParams, f64)> {
    let m = params.n_events();
    let k = check_sequences(seqs, m)?;
    if k != params.n_features() {
        return Err(PohmmError::DimensionMismatch { expected: params.n_features(), got: k });
    }
    let big_m = params.n_states();
    let stats = expected_statistics(params, seqs)?;
    if !stats.loglik.is_finite() {
        return Err(PohmmError::NonFiniteLikelihood);
    }

    let mut next = params.clone();
    for w in 0..m {
        if stats.start_count[w] > 0.0 {
            let row = &stats.start[w * big_m..(w + 1) * big_m];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for j in 0..big_m {
                    next.startp[w * big_m + j] = row[j] / s;
                }
            }
        }
    }
    for row_start in (0..next.trans.len()).step_by(big_m) {
        let num = &stats.trans[row_start..row_start + big_m];
        let den: f64 = num.iter().sum();
        if den > 0.0 {
            for j in 0..big_m {
                next.trans[row_start + j] = num[j] / den;
            }
        }
    }
    for (cell, acc) in next.emit.iter_mut().zip(&stats.emit) {
        if acc.weight() > 0.0 {
            *cell = acc.to_params(params.kind())?;
        }
    }
    let mass: f64 = stats.state_mass.iter().sum();
    if mass > 0.0 {
        next.state_stationary = stats.state_mass.iter().map(|v| v / mass).collect();
    }
    next.marginalize();

    if smoothing {
        let freqs = EventFrequencies::from_sequences(seqs, m);
        next = smooth(&next, &freqs);
    }
    Ok((next, stats.loglik))
}

/// Smoothing weight for starting and emission parameters, f/(1+f).
pub fn event_weight(f: f64) -> f64 {
    1.0 - 1.0 / (1.0 + f)
}

/// Weights `[w_ψω, w_ψ, w_ω, w]` on a[i,j|ψ,ω], a[i,j|ψ], a[i,j|ω], a[i,j].
///
/// Regular case: w_ψ = 1/(f(ψ,ω)+f(ω)), w_ω = 1/(f(ψ,ω)+f(ψ)), w = 0. When a
/// denominator is zero or w_ψ + w_ω exceeds one, the conditional weight is
/// zero and the mass goes to the finite marginal weights in proportion; if
/// both denominators are zero everything goes to a[i,j].
pub fn transition_weights(f_pair: f64, f_from: f64, f_to: f64) -> [f64; 4] {
    let d_from = f_pair + f_to;
    let d_to = f_pair + f_from;
    match (d_from > 0.0, d_to > 0.0) {
        (false, false) => [0.0, 0.0, 0.0, 1.0],
        (false, true) => [0.0, 1.0, 0.0, 0.0],
        (true, false) => [0.0, 0.0, 1.0, 0.0],
        (true, true) => {
            let (wp, ww) = (1.0 / d_from, 1.0 / d_to);
            if wp + ww <= 1.0 {
                [1.0 - (wp + ww), wp, ww, 0.0]
            } else {
                let s = wp + ww;
                [0.0, wp / s, ww / s, 0.0]
            }
        }
    }
}

/// Blends conditional parameters toward the cached marginals according to
/// event-type frequencies, then recomputes the marginals.
pub fn smooth(params: &PohmmParams, freqs: &EventFrequencies) -> PohmmParams {
    let (m, big_m) = (params.n_events(), params.n_states());
    let mg = params.marginals();
    let mut out = params.clone();

    for w in 0..m {
        let wt = event_weight(freqs.unigram[w]);
        for j in 0..big_m {
            let c = w * big_m + j;
            out.startp[c] = wt * params.startp[c] + (1.0 - wt) * mg.startp[j];
            let (cond, marg) = (&params.emit[c], &mg.emit[j]);
            out.emit[c] = EmissionParams {
                kind: cond.kind,
                loc: cond.loc.iter().zip(&marg.loc).map(|(a, b)| wt * a + (1.0 - wt) * b).collect(),
                scale: cond.scale.iter().zip(&marg.scale).map(|(a, b)| (wt * a + (1.0 - wt) * b).max(SCALE_FLOOR)).collect(),
            };
        }
        renormalize(&mut out.startp[w * big_m..(w + 1) * big_m]);
    }

    let mm = big_m * big_m;
    for psi in 0..m {
        for w in 0..m {
            let [w_pw, w_p, w_w, w_all] = transition_weights(freqs.bigram[psi * m + w], freqs.unigram[psi], freqs.unigram[w]);
            for i in 0..big_m {
                let off = params.trans_row_offset(psi, i, w);
                for j in 0..big_m {
                    out.trans[off + j] = w_pw * params.trans[off + j]
                        + w_p * mg.trans_from[psi * mm + i * big_m + j]
                        + w_w * mg.trans_to[w * mm + i * big_m + j]
                        + w_all * mg.trans[i * big_m + j];
                }
                renormalize(&mut out.trans[off..off + big_m]);
            }
        }
    }
    out.marginalize();
    out
}

fn renormalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Names the first (state, event) cell that yields a non-finite density.
fn diagnose(params: &PohmmParams, seqs: &[ObservationSequence]) -> PohmmError {
    for (c, e) in params.emit.iter().enumerate() {
        if e.validate().is_err() {
            let (w, j) = (c / params.n_states(), c % params.n_states());
            return PohmmError::NonFinite { state: j, event: params.alphabet().label(w).to_string() };
        }
    }
    for s in seqs {
        for (&w, x) in s.events.iter().zip(&s.features) {
            for (j, e) in params.emissions_for(w).iter().enumerate() {
                match e.log_density(x) {
                    Ok(v) if v.is_finite() => {}
                    _ => return PohmmError::NonFinite { state: j, event: params.alphabet().label(w).to_string() },
                }
            }
        }
    }
    PohmmError::NonFiniteLikelihood
}

/// Modified Baum-Welch: initialize, then iterate [`em_step`] until the
/// log-likelihood gain falls below `epsilon` or `max_iter` updates.
///
/// Deterministic: identical inputs give bit-identical parameters.
pub fn fit(seqs: &[ObservationSequence], alphabet: &EventAlphabet, config: &FitConfig) -> Result<(PohmmParams, FitReport)> {
    let mut params = init_params(seqs, alphabet, config)?;
    let step = |p: &PohmmParams| match em_step(p, seqs, config.smoothing) {
        Err(PohmmError::NonFiniteLikelihood) => Err(diagnose(p, seqs)),
        other => other,
    };
    let (mut next, mut ll) = step(&params)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        params = next;
        iterations += 1;
        let (candidate, ll_new) = step(&params)?;
        trace.push(ll_new);
        next = candidate;
        let gain = ll_new - ll;
        ll = ll_new;
        if gain < config.epsilon {
            converged = true;
            break;
        }
    }
    let report = FitReport { loglik_trace: trace, iterations, converged, final_loglik: ll };
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_chain::EventChain;
    use crate::model::testutil::random_params;
    use crate::rng;

    #[test]
    fn dof_examples() {
        assert_eq!(dof(1, 3, 2), 6);
        assert_eq!(dof(2, 3, 2), 33);
        assert_eq!(dof(2, 1, 2), 7);
    }

    #[test]
    fn smoothing_weights() {
        assert_eq!(event_weight(0.0), 0.0);
        assert_eq!(event_weight(1.0), 0.5);
        let w = transition_weights(10.0, 10.0, 10.0);
        assert!((w[1] - 0.05).abs() < 1e-15 && (w[2] - 0.05).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-15);
        assert_eq!(w[3], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // degenerate cases
        assert_eq!(transition_weights(0.0, 0.0, 0.0), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(transition_weights(0.0, 5.0, 0.0), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(transition_weights(0.0, 0.0, 5.0), [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(transition_weights(0.0, 1.0, 1.0), [0.0, 0.5, 0.5, 0.0]);
    }

    fn seqs_from(p: &PohmmParams, count: usize, n: usize, seed: u64) -> Vec<ObservationSequence> {
        let mut r = rng::seeded(seed);
        (0..count).map(|_| p.sample(n, &mut r, None).unwrap().0).collect()
    }

    #[test]
    fn init_spreads_state_means() {
        let mut r = rng::seeded(1);
        let truth = random_params(2, 2, EmissionKind::Lognormal, 1, &mut r);
        let seqs = seqs_from(&truth, 3, 50, 2);
        let alphabet = truth.alphabet().clone();
        for (big_m, offsets) in [(1usize, vec![0.0]), (2, vec![-2.0, 2.0]), (3, vec![-2.0, 0.0, 2.0])] {
            let cfg = FitConfig { n_states: big_m, ..FitConfig::default() };
            let p = init_params(&seqs, &alphabet, &cfg).unwrap();
            for w in 0..2 {
                let logs: Vec<f64> =
                    seqs.iter().flat_map(|s| s.events.iter().zip(&s.features)).filter(|(&e, _)| e == w).map(|(_, x)| x[0].ln()).collect();
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / logs.len() as f64).sqrt();
                for (j, off) in offsets.iter().enumerate() {
                    let e = p.emission(w, j);
                    assert!((e.loc[0] - (mean + off * sd)).abs() < 1e-9);
                    assert!((e.scale[0] - sd).abs() < 1e-9);
                }
                assert!(p.startp_table().iter().all(|&v| (v - 1.0 / big_m as f64).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn init_uses_pooled_moments_for_unseen_event() {
        let alphabet = EventAlphabet::numbered(2).unwrap();
        let seq = ObservationSequence::scalar(vec![0, 0, 0], &[1.0, 2.0, 4.0]).unwrap();
        let cfg = FitConfig { n_states: 1, ..FitConfig::default() };
        let p = init_params(&[seq], &alphabet, &cfg).unwrap();
        assert_eq!(p.emission(1, 0), p.emission(0, 0));
    }

    #[test]
    fn init_rejects_nonpositive_lognormal_data() {
        let alphabet = EventAlphabet::numbered(1).unwrap();
        let seq = ObservationSequence::scalar(vec![0, 0], &[1.0, 0.0]).unwrap();
        assert!(init_params(&[seq], &alphabet, &FitConfig::default()).is_err());
    }

    #[test]
    fn single_state_reaches_fixed_point_in_one_step() {
        let mut r = rng::seeded(3);
        let truth = random_params(1, 3, EmissionKind::Normal, 2, &mut r);
        let seqs = seqs_from(&truth, 4, 30, 4);
        for smoothing in [false, true] {
            let cfg = FitConfig { n_states: 1, kind: EmissionKind::Normal, smoothing, ..FitConfig::default() };
            let p0 = init_params(&seqs, truth.alphabet(), &cfg).unwrap();
            let (p1, _) = em_step(&p0, &seqs, smoothing).unwrap();
            let (p2, _) = em_step(&p1, &seqs, smoothing).unwrap();
            for (a, b) in p1.emission_table().iter().zip(p2.emission_table()) {
                for f in 0..2 {
                    assert!((a.loc[f] - b.loc[f]).abs() < 1e-12);
                    assert!((a.scale[f] - b.scale[f]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn em_step_never_decreases_likelihood_without_smoothing() {
        let mut r = rng::seeded(5);
        for case in 0..10 {
            let truth = random_params(2, 3, EmissionKind::Lognormal, 2, &mut r);
            let seqs = seqs_from(&truth, 3, 40, 100 + case);
            let cfg = FitConfig { smoothing: false, max_iter: 30, ..FitConfig::default() };
            let (_, report) = fit(&seqs, truth.alphabet(), &cfg).unwrap();
            for w in report.loglik_trace.windows(2) {
                assert!(w[1] - w[0] >= -1e-8, "case {case}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn smoothing_with_zero_frequency_yields_marginals() {
        let mut r = rng::seeded(6);
        let p = random_params(2, 3, EmissionKind::Lognormal, 1, &mut r);
        let freqs = EventFrequencies { unigram: vec![0.0; 3], bigram: vec![0.0; 9] };
        let s = smooth(&p, &freqs);
        let mg = p.marginals();
        for w in 0..3 {
            for j in 0..2 {
                assert!((s.start(w, j) - mg.startp[j]).abs() < 1e-12);
                assert!((s.emission(w, j).loc[0] - mg.emit[j].loc[0]).abs() < 1e-12);
                for i in 0..2 {
                    assert!((s.transition(w, i, 0, j) - mg.trans[i * 2 + j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn smoothing_vanishes_with_large_counts() {
        let mut r = rng::seeded(7);
        let p = random_params(2, 3, EmissionKind::Lognormal, 1, &mut r);
        let freqs = EventFrequencies { unigram: vec![3e4; 3], bigram: vec![1e4; 9] };
        let s = smooth(&p, &freqs);
        let gap = p
            .startp_table()
            .iter()
            .zip(s.startp_table())
            .chain(p.trans_table().iter().zip(s.trans_table()))
            .map(|(a, b)| (a - b).abs())
            .chain(
                p.emission_table()
                    .iter()
                    .zip(s.emission_table())
                    .map(|(a, b)| (a.loc[0] - b.loc[0]).abs().max((a.scale[0] - b.scale[0]).abs())),
            )
            .fold(0.0, f64::max);
        assert!(gap < 1e-3, "{gap}");
    }

    #[test]
    fn smoothed_rows_stay_stochastic() {
        let mut r = rng::seeded(8);
        let p = random_params(3, 4, EmissionKind::Normal, 1, &mut r);
        let freqs = EventFrequencies { unigram: vec![0.0, 1.0, 3.0, 50.0], bigram: (0..16).map(|i| (i % 3) as f64).collect() };
        let s = smooth(&p, &freqs);
        for row in s.trans_table().chunks(3).chain(s.startp_table().chunks(3)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut r = rng::seeded(9);
        let truth = random_params(2, 3, EmissionKind::Lognormal, 2, &mut r);
        let seqs = seqs_from(&truth, 70, 30, 10);
        let cfg = FitConfig { max_iter: 50, ..FitConfig::default() };
        let (a, ra) = fit(&seqs, truth.alphabet(), &cfg).unwrap();
        let (b, rb) = fit(&seqs, truth.alphabet(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig { epsilon: 0.0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { max_iter: 0, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { n_states: 0, ..FitConfig::default() }.validate().is_err());
    }

    #[test]
    fn non_finite_input_names_a_cell() {
        let alphabet = EventAlphabet::new(["k"]).unwrap();
        let seq = ObservationSequence::scalar(vec![0, 0, 0], &[1.0, f64::INFINITY, 3.0]).unwrap();
        let cfg = FitConfig { kind: EmissionKind::Normal, ..FitConfig::default() };
        let err = fit(&[seq], &alphabet, &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
        assert!(err.to_string().contains("event type k"), "{err}");
    }

    #[test]
    fn unseen_pairs_keep_prior_before_smoothing() {
        let alphabet = EventAlphabet::numbered(2).unwrap();
        let e = EmissionParams::new(EmissionKind::Normal, vec![0.0], vec![1.0]).unwrap();
        let mut trans = vec![0.5; 16];
        // a[.,.|1,1] rows set to a recognizable value
        trans[((1 * 2) * 2 + 1) * 2] = 0.9;
        trans[((1 * 2) * 2 + 1) * 2 + 1] = 0.1;
        let p =
            PohmmParams::new(2, alphabet, vec![0.5; 4], trans, vec![e.clone(), e.clone(), e.clone(), e], EventChain::uniform(2)).unwrap();
        let seq = ObservationSequence::scalar(vec![0, 1, 0, 0], &[0.1, 2.0, -1.0, 0.5]).unwrap();
        let (next, _) = em_step(&p, &[seq], false).unwrap();
        assert_eq!(next.transition(1, 0, 1, 0), 0.9);
    }
}
