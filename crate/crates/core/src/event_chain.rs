//! First-order Markov chain over event types.
//!
//! The event type sequence is observed, so its start, transition and
//! stationary probabilities come straight from counts.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PohmmError, Result};

/// Ordered set of event-type labels with dense ids in `[0, m)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EventAlphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl EventAlphabet {
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(PohmmError::InvalidParams("alphabet must not be empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(PohmmError::InvalidParams(format!("duplicate event label {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Alphabet of the distinct labels in first-seen order.
    pub fn from_labels<'a, I>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen = Vec::new();
        let mut set = std::collections::HashSet::new();
        for l in labels {
            if set.insert(l) {
                seen.push(l.to_string());
            }
        }
        Self::new(seen)
    }

    /// `m` synthetic labels `"0"`, `"1"`, ...
    pub fn numbered(m: usize) -> Result<Self> {
        Self::new((0..m).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Label of `id`, or `"<novel>"` for ids outside the alphabet.
    pub fn label(&self, id: usize) -> &str {
        self.symbols.get(id).map(String::as_str).unwrap_or("<novel>")
    }

    /// Dense ids for `labels`; unknown labels map to `len()` (novel).
    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Vec<usize> {
        labels.iter().map(|l| self.id(l.as_ref()).unwrap_or(self.len())).collect()
    }
}

impl TryFrom<Vec<String>> for EventAlphabet {
    type Error = PohmmError;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EventAlphabet> for Vec<String> {
    fn from(a: EventAlphabet) -> Self {
        a.symbols
    }
}

/// Start, transition and stationary probabilities of the event types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventChain {
    /// π[ω], length m.
    pub start: Vec<f64>,
    /// a[ψ,ω], m×m row-major.
    pub trans: Vec<f64>,
    /// Π[ω], length m.
    pub stationary: Vec<f64>,
}

impl EventChain {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// Uniform chain over `m` symbols.
    pub fn uniform(m: usize) -> Self {
        let p = 1.0 / m as f64;
        Self { start: vec![p; m], trans: vec![p; m * m], stationary: vec![p; m] }
    }

    pub fn trans_row(&self, from: usize) -> &[f64] {
        let m = self.len();
        &self.trans[from * m..(from + 1) * m]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if m == 0 || self.trans.len() != m * m || self.stationary.len() != m {
            return Err(PohmmError::InvalidParams("event chain dimensions".into()));
        }
        check_distribution(&self.start, "event start")?;
        check_distribution(&self.stationary, "event stationary")?;
        for r in 0..m {
            check_distribution(self.trans_row(r), "event transition row")?;
        }
        Ok(())
    }

    /// Draws an event-type sequence of length `n`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return out;
        }
        let mut cur = sample_index(&self.start, rng);
        out.push(cur);
        for _ in 1..n {
            cur = sample_index(self.trans_row(cur), rng);
            out.push(cur);
        }
        out
    }
}

/// Estimates the event chain from id sequences.
///
/// Start and transition probabilities use additive smoothing with
/// `pseudocount`; a source symbol with no outgoing mass gets a uniform row.
/// The stationary vector is the plain pooled symbol frequency.
pub fn fit_event_chain(sequences: &[&[usize]], alphabet: &EventAlphabet, pseudocount: f64) -> Result<EventChain> {
    let m = alphabet.len();
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(PohmmError::NoSequences);
    }
    if !(pseudocount >= 0.0 && pseudocount.is_finite()) {
        return Err(PohmmError::InvalidConfig("pseudocount must be a nonnegative number".into()));
    }
    let mut first = vec![0.0; m];
    let mut pairs = vec![0.0; m * m];
    let mut freq = vec![0u64; m];
    let mut total = 0u64;
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        for &id in seq.iter() {
            if id >= m {
                return Err(PohmmError::SymbolOutOfAlphabet { id, size: m });
            }
            freq[id] += 1;
            total += 1;
        }
        first[seq[0]] += 1.0;
        for w in seq.windows(2) {
            pairs[w[0] * m + w[1]] += 1.0;
        }
    }

    let start = normalize_counts(&first, pseudocount);
    let mut trans = Vec::with_capacity(m * m);
    for r in 0..m {
        trans.extend(normalize_counts(&pairs[r * m..(r + 1) * m], pseudocount));
    }
    let stationary = freq.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(EventChain { start, trans, stationary })
}

fn normalize_counts(counts: &[f64], pseudocount: f64) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c + pseudocount).sum();
    if total > 0.0 {
        counts.iter().map(|c| (c + pseudocount) / total).collect()
    } else {
        vec![1.0 / counts.len() as f64; counts.len()]
    }
}

pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in p {
        if !(x.is_finite() && x >= 0.0) {
            return Err(PohmmError::InvalidParams(format!("{what}: entry {x} is not a probability")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PohmmError::InvalidParams(format!("{what}: sums to {sum}, expected 1")));
    }
    Ok(())
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last nonzero cell
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}
