//! POHMM parameter container and marginalization.
//!
//! Conditional tables are indexed by event type. Event ids at or beyond the
//! alphabet size are novel; they are scored with the marginal tables, where the
//! event type has been summed out.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionKind, EmissionParams, SCALE_FLOOR};
use crate::error::{PohmmError, Result};
use crate::event_chain::{check_distribution, sample_index, EventAlphabet, EventChain};

/// Event-type ids and feature vectors of one observed sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub events: Vec<usize>,
    pub features: Vec<Vec<f64>>,
}

impl ObservationSequence {
    pub fn new(events: Vec<usize>, features: Vec<Vec<f64>>) -> Result<Self> {
        if events.len() != features.len() {
            return Err(PohmmError::DimensionMismatch { expected: events.len(), got: features.len() });
        }
        Ok(Self { events, features })
    }

    /// Single-feature sequence.
    pub fn scalar(events: Vec<usize>, xs: &[f64]) -> Result<Self> {
        Self::new(events, xs.iter().map(|&x| vec![x]).collect())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Keeps only feature `k`.
    pub fn project(&self, k: usize) -> Self {
        Self { events: self.events.clone(), features: self.features.iter().map(|x| vec![x[k]]).collect() }
    }

    /// Same features with every event mapped to id 0.
    pub fn collapse_events(&self) -> Self {
        Self { events: vec![0; self.len()], features: self.features.clone() }
    }
}

/// Tables with the event type marginalized out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    /// π[j], length M.
    pub startp: Vec<f64>,
    /// a[i,j|ψ], m×M×M.
    pub trans_from: Vec<f64>,
    /// a[i,j|ω], m×M×M.
    pub trans_to: Vec<f64>,
    /// a[i,j], M×M.
    pub trans: Vec<f64>,
    /// Moment-matched b[j], length M.
    pub emit: Vec<EmissionParams>,
}

/// Full conditional parameter set of a POHMM plus cached marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct PohmmParams {
    pub(crate) n_states: usize,
    pub(crate) alphabet: EventAlphabet,
    pub(crate) kind: EmissionKind,
    /// π[j|ω], m×M.
    pub(crate) startp: Vec<f64>,
    /// a[i,j|ψ,ω] stored as rows (ψ,i) and columns (ω,j) of an mM×mM table.
    pub(crate) trans: Vec<f64>,
    /// b[j|ω], m×M.
    pub(crate) emit: Vec<EmissionParams>,
    pub(crate) event_chain: EventChain,
    pub(crate) marginals: Marginals,
    /// Π[j], stationary hidden-state probabilities.
    pub(crate) state_stationary: Vec<f64>,
}

impl PohmmParams {
    /// Builds and validates a model, then computes the marginals.
    ///
    /// `startp` is m×M, `trans` is the mM×mM table in (ψ,i)→(ω,j) order and
    /// `emit` is m×M, all row-major. The stationary hidden-state vector is set
    /// to the long-run average of the marginal transition matrix.
    pub fn new(
        n_states: usize,
        alphabet: EventAlphabet,
        startp: Vec<f64>,
        trans: Vec<f64>,
        emit: Vec<EmissionParams>,
        event_chain: EventChain,
    ) -> Result<Self> {
        let m = alphabet.len();
        let kind = emit.first().map(|e| e.kind).ok_or_else(|| PohmmError::InvalidParams("no emission parameters".into()))?;
        let mut p = Self {
            n_states,
            alphabet,
            kind,
            startp,
            trans,
            emit,
            event_chain,
            marginals: Marginals { startp: vec![], trans_from: vec![], trans_to: vec![], trans: vec![], emit: vec![] },
            state_stationary: vec![1.0 / n_states.max(1) as f64; n_states],
        };
        p.validate_conditionals(m)?;
        p.marginalize();
        p.state_stationary = long_run_average(&p.marginals.startp, &p.marginals.trans, n_states);
        Ok(p)
    }

    /// Uniform starts and transitions with the given per-(ω, j) emissions.
    pub fn with_uniform_dynamics(
        n_states: usize,
        alphabet: EventAlphabet,
        emit: Vec<EmissionParams>,
        event_chain: EventChain,
    ) -> Result<Self> {
        let m = alphabet.len();
        let u = 1.0 / n_states as f64;
        Self::new(n_states, alphabet, vec![u; m * n_states], vec![u; m * m * n_states * n_states], emit, event_chain)
    }

    fn validate_conditionals(&self, m: usize) -> Result<()> {
        let big_m = self.n_states;
        if big_m == 0 {
            return Err(PohmmError::InvalidParams("need at least one hidden state".into()));
        }
        if self.startp.len() != m * big_m || self.trans.len() != m * m * big_m * big_m || self.emit.len() != m * big_m {
            return Err(PohmmError::InvalidParams("table dimensions do not match (m, M)".into()));
        }
        if self.event_chain.len() != m {
            return Err(PohmmError::InvalidParams("event chain size does not match alphabet".into()));
        }
        self.event_chain.validate()?;
        for w in 0..m {
            check_distribution(&self.startp[w * big_m..(w + 1) * big_m], "start row")?;
        }
        for row in self.trans.chunks(big_m) {
            check_distribution(row, "transition row")?;
        }
        let k = self.emit[0].feature_count();
        for e in &self.emit {
            e.validate()?;
            if e.kind != self.kind || e.feature_count() != k {
                return Err(PohmmError::InvalidParams("emission kind/feature count must be uniform".into()));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Number of event types `m`.
    pub fn n_events(&self) -> usize {
        self.alphabet.len()
    }

    pub fn n_features(&self) -> usize {
        self.emit[0].feature_count()
    }

    pub fn kind(&self) -> EmissionKind {
        self.kind
    }

    pub fn alphabet(&self) -> &EventAlphabet {
        &self.alphabet
    }

    pub fn event_chain(&self) -> &EventChain {
        &self.event_chain
    }

    pub fn marginals(&self) -> &Marginals {
        &self.marginals
    }

    pub fn state_stationary(&self) -> &[f64] {
        &self.state_stationary
    }

    pub fn startp_table(&self) -> &[f64] {
        &self.startp
    }

    pub fn trans_table(&self) -> &[f64] {
        &self.trans
    }

    pub fn emission_table(&self) -> &[EmissionParams] {
        &self.emit
    }

    /// π[j|ω].
    pub fn start(&self, event: usize, state: usize) -> f64 {
        self.startp[event * self.n_states + state]
    }

    /// a[i,j|ψ,ω].
    pub fn transition(&self, from_event: usize, from: usize, to_event: usize, to: usize) -> f64 {
        self.trans[self.trans_row_offset(from_event, from, to_event) + to]
    }

    /// b[j|ω].
    pub fn emission(&self, event: usize, state: usize) -> &EmissionParams {
        &self.emit[event * self.n_states + state]
    }

    #[inline]
    pub(crate) fn trans_row_offset(&self, from_event: usize, from: usize, to_event: usize) -> usize {
        let (m, big_m) = (self.n_events(), self.n_states);
        ((from_event * big_m + from) * m + to_event) * big_m
    }

    #[inline]
    pub(crate) fn is_known(&self, event: usize) -> bool {
        event < self.n_events()
    }

    /// Start distribution for the first event, falling back to π[j].
    pub fn start_probs(&self, event: usize) -> &[f64] {
        let big_m = self.n_states;
        if self.is_known(event) {
            &self.startp[event * big_m..(event + 1) * big_m]
        } else {
            &self.marginals.startp
        }
    }

    /// Emission parameters for all states given `event`, falling back to b[j].
    pub fn emissions_for(&self, event: usize) -> &[EmissionParams] {
        let big_m = self.n_states;
        if self.is_known(event) {
            &self.emit[event * big_m..(event + 1) * big_m]
        } else {
            &self.marginals.emit
        }
    }

    /// Writes the M×M transition matrix between two events into `out`.
    ///
    /// A novel predecessor selects a[i,j|ω], a novel successor a[i,j|ψ], and
    /// two novel events a[i,j].
    pub fn transition_matrix(&self, from_event: usize, to_event: usize, out: &mut [f64]) {
        let big_m = self.n_states;
        match (self.is_known(from_event), self.is_known(to_event)) {
            (true, true) => {
                for i in 0..big_m {
                    let off = self.trans_row_offset(from_event, i, to_event);
                    out[i * big_m..(i + 1) * big_m].copy_from_slice(&self.trans[off..off + big_m]);
                }
            }
            (true, false) => {
                let off = from_event * big_m * big_m;
                out.copy_from_slice(&self.marginals.trans_from[off..off + big_m * big_m]);
            }
            (false, true) => {
                let off = to_event * big_m * big_m;
                out.copy_from_slice(&self.marginals.trans_to[off..off + big_m * big_m]);
            }
            (false, false) => out.copy_from_slice(&self.marginals.trans),
        }
    }

    /// Recomputes every marginal table from the conditional tables and the
    /// event chain.
    pub fn marginalize(&mut self) {
        let (m, big_m) = (self.n_events(), self.n_states);
        let chain = &self.event_chain;
        let mm = big_m * big_m;

        let mut startp = vec![0.0; big_m];
        for w in 0..m {
            for j in 0..big_m {
                startp[j] += self.startp[w * big_m + j] * chain.start[w];
            }
        }

        let mut trans_from = vec![0.0; m * mm];
        let mut weighted_to = vec![0.0; m * mm];
        let mut trans = vec![0.0; mm];
        let mut to_mass = vec![0.0; m];
        for psi in 0..m {
            for w in 0..m {
                let a_pw = chain.trans[psi * m + w];
                to_mass[w] += a_pw;
                if a_pw == 0.0 {
                    continue;
                }
                for i in 0..big_m {
                    let off = self.trans_row_offset(psi, i, w);
                    for j in 0..big_m {
                        let v = self.trans[off + j] * a_pw;
                        trans_from[psi * mm + i * big_m + j] += v;
                        weighted_to[w * mm + i * big_m + j] += v;
                        trans[i * big_m + j] += v;
                    }
                }
            }
        }
        for v in trans.iter_mut() {
            *v /= m as f64;
        }
        let mut trans_to = weighted_to;
        for w in 0..m {
            let block = &mut trans_to[w * mm..(w + 1) * mm];
            if to_mass[w] > 0.0 {
                for v in block.iter_mut() {
                    *v /= to_mass[w];
                }
            } else {
                block.copy_from_slice(&trans);
            }
        }

        let k = self.n_features();
        let mut emit = Vec::with_capacity(big_m);
        for j in 0..big_m {
            let mut loc = vec![0.0; k];
            for w in 0..m {
                let e = &self.emit[w * big_m + j];
                for f in 0..k {
                    loc[f] += chain.stationary[w] * e.loc[f];
                }
            }
            let mut var = vec![0.0; k];
            for w in 0..m {
                let e = &self.emit[w * big_m + j];
                for f in 0..k {
                    let d = e.loc[f] - loc[f];
                    var[f] += chain.stationary[w] * (d * d + e.scale[f] * e.scale[f]);
                }
            }
            emit.push(EmissionParams { kind: self.kind, loc, scale: var.into_iter().map(|v| v.sqrt().max(SCALE_FLOOR)).collect() });
        }

        self.marginals = Marginals { startp, trans_from, trans_to, trans, emit };
    }

    /// Degrees of freedom after normalization constraints.
    pub fn dof(&self) -> usize {
        crate::estimation::dof(self.n_states, self.n_events(), 2 * self.n_features())
    }

    /// Draws a sequence of length `n` and its hidden state path.
    ///
    /// Event types come from the event chain unless `events` is given.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, events: Option<&[usize]>) -> Result<(ObservationSequence, Vec<usize>)> {
        let events = match events {
            Some(e) if e.len() != n => return Err(PohmmError::DimensionMismatch { expected: n, got: e.len() }),
            Some(e) => e.to_vec(),
            None => self.event_chain.sample(n, rng),
        };
        let big_m = self.n_states;
        let mut states = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n);
        let mut tm = vec![0.0; big_m * big_m];
        for (idx, &ev) in events.iter().enumerate() {
            let z = if idx == 0 {
                sample_index(self.start_probs(ev), rng)
            } else {
                self.transition_matrix(events[idx - 1], ev, &mut tm);
                let prev = states[idx - 1];
                sample_index(&tm[prev * big_m..(prev + 1) * big_m], rng)
            };
            states.push(z);
            features.push(self.emissions_for(ev)[z].sample_one(rng));
        }
        Ok((ObservationSequence { events, features }, states))
    }
}

/// Cesàro average of `start · A^k`, a stationary distribution of `A` for any chain.
fn long_run_average(start: &[f64], trans: &[f64], big_m: usize) -> Vec<f64> {
    const STEPS: usize = 2000;
    let mut p = start.to_vec();
    let mut avg = vec![0.0; big_m];
    let mut next = vec![0.0; big_m];
    for _ in 0..STEPS {
        for (a, &x) in avg.iter_mut().zip(&p) {
            *a += x;
        }
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..big_m {
            for j in 0..big_m {
                next[j] += p[i] * trans[i * big_m + j];
            }
        }
        std::mem::swap(&mut p, &mut next);
    }
    let total: f64 = avg.iter().sum();
    avg.iter().map(|v| v / total).collect()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;

    /// Random normalized vector with entries bounded away from zero.
    pub fn random_dist<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    pub fn random_params<R: Rng>(big_m: usize, m: usize, kind: EmissionKind, k: usize, rng: &mut R) -> PohmmParams {
        let alphabet = EventAlphabet::numbered(m).unwrap();
        let mut startp = Vec::new();
        for _ in 0..m {
            startp.extend(random_dist(big_m, rng));
        }
        let mut trans = Vec::new();
        for _ in 0..m * big_m * m {
            trans.extend(random_dist(big_m, rng));
        }
        let emit = (0..m * big_m)
            .map(|_| {
                let loc = (0..k)
                    .map(|_| match kind {
                        EmissionKind::Lognormal => 4.0 + 2.0 * rng.random::<f64>(),
                        EmissionKind::Normal => 10.0 * rng.random::<f64>(),
                    })
                    .collect();
                let scale = (0..k).map(|_| 0.3 + rng.random::<f64>()).collect();
                EmissionParams::new(kind, loc, scale).unwrap()
            })
            .collect();
        let mut chain_trans = Vec::new();
        for _ in 0..m {
            chain_trans.extend(random_dist(m, rng));
        }
        let chain = EventChain { start: random_dist(m, rng), trans: chain_trans, stationary: random_dist(m, rng) };
        PohmmParams::new(big_m, alphabet, startp, trans, emit, chain).unwrap()
    }
}
