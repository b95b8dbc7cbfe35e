//! Keystroke event logs: CSV ingestion, timing features and segmentation.
//!
//! The CSV header is `user,session,key,t_press,t_release`, optionally followed
//! by numeric columns `f0`, `f1`, ... that are appended to each keystroke's
//! feature vector. Timestamps are milliseconds.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PohmmError, Result};
use crate::event_chain::EventAlphabet;
use crate::model::ObservationSequence;

/// Timing features are clamped to at least this many milliseconds.
pub const MIN_INTERVAL_MS: f64 = 1.0;

const REQUIRED: [&str; 5] = ["user", "session", "key", "t_press", "t_release"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeEvent {
    pub user: String,
    pub session: String,
    pub key: String,
    pub t_press: f64,
    pub t_release: f64,
    /// Values of the optional `f*` columns.
    pub extra: Vec<f64>,
}

fn is_extra_column(name: &str) -> bool {
    name.len() > 1 && name.starts_with('f') && name[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Parses a keystroke CSV. Events come back grouped by (user, session) in
/// sorted order, each session stably sorted by press time.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<KeystrokeEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| PohmmError::MissingColumn(name.to_string()));
    let idx: Vec<usize> = REQUIRED.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let extras: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| is_extra_column(h)).map(|(i, _)| i).collect();

    let mut sessions: BTreeMap<(String, String), Vec<KeystrokeEvent>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize, what: &str| -> Result<f64> {
            let raw = field(i);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(PohmmError::InvalidRow { line, reason: format!("{what}: not a finite number: {raw:?}") }),
            }
        };
        let t_press = number(idx[3], "t_press")?;
        let t_release = number(idx[4], "t_release")?;
        if t_release < t_press {
            return Err(PohmmError::InvalidRow { line, reason: format!("t_release {t_release} precedes t_press {t_press}") });
        }
        let extra = extras.iter().map(|&i| number(i, &headers[i])).collect::<Result<Vec<_>>>()?;
        let ev = KeystrokeEvent {
            user: field(idx[0]).to_string(),
            session: field(idx[1]).to_string(),
            key: field(idx[2]).to_string(),
            t_press,
            t_release,
            extra,
        };
        sessions.entry((ev.user.clone(), ev.session.clone())).or_default().push(ev);
    }
    let mut out = Vec::new();
    for (_, mut evs) in sessions {
        evs.sort_by(|a, b| a.t_press.total_cmp(&b.t_press));
        out.extend(evs);
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<KeystrokeEvent>> {
    read_events(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Writes events in the format accepted by [`read_events`]. Reals use the
/// shortest representation that parses back to the same value.
pub fn write_events<W: Write>(events: &[KeystrokeEvent], writer: W) -> Result<()> {
    let n_extra = events.iter().map(|e| e.extra.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    header.extend((0..n_extra).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for e in events {
        if e.extra.len() != n_extra {
            return Err(PohmmError::DimensionMismatch { expected: n_extra, got: e.extra.len() });
        }
        let mut row = vec![e.user.clone(), e.session.clone(), e.key.clone(), e.t_press.to_string(), e.t_release.to_string()];
        row.extend(e.extra.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(events: &[KeystrokeEvent], path: impl AsRef<Path>) -> Result<()> {
    write_events(events, std::io::BufWriter::new(std::fs::File::create(path)?))
}

/// Splits grouped events into sessions, preserving order.
pub fn sessions(events: &[KeystrokeEvent]) -> Vec<&[KeystrokeEvent]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].user != events[start].user || events[i].session != events[start].session {
            if i > start {
                out.push(&events[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Keeps the first `k` keystrokes of every session.
pub fn truncate_sessions(events: &[KeystrokeEvent], k: usize) -> Vec<KeystrokeEvent> {
    sessions(events).into_iter().flat_map(|s| s[..s.len().min(k)].iter().cloned()).collect()
}

/// One session's key labels and feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub user: String,
    pub session: String,
    pub keys: Vec<String>,
    pub features: Vec<Vec<f64>>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Event ids under `alphabet`; unknown keys map to the novel id.
    pub fn encode(&self, alphabet: &EventAlphabet) -> ObservationSequence {
        ObservationSequence { events: alphabet.encode(&self.keys), features: self.features.clone() }
    }

    /// Same features with every key replaced by one symbol.
    pub fn collapsed(&self) -> Self {
        Self { keys: vec![COLLAPSED_KEY.to_string(); self.len()], ..self.clone() }
    }
}

/// The single event label used when event types are ignored.
pub const COLLAPSED_KEY: &str = "*";

/// Press-press interval τ and hold duration d for keystrokes 2..K, followed
/// by any extra columns. The first keystroke only anchors the first interval.
/// Single-keystroke sessions are skipped with a warning.
pub fn to_sequences(events: &[KeystrokeEvent]) -> Vec<LabeledSequence> {
    let mut out = Vec::new();
    for s in sessions(events) {
        if s.len() < 2 {
            log::warn!("skipping session {}/{}: a single keystroke has no interval", s[0].user, s[0].session);
            continue;
        }
        let mut keys = Vec::with_capacity(s.len() - 1);
        let mut features = Vec::with_capacity(s.len() - 1);
        for w in s.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            let mut x = vec![(cur.t_press - prev.t_press).max(MIN_INTERVAL_MS), (cur.t_release - cur.t_press).max(MIN_INTERVAL_MS)];
            x.extend_from_slice(&cur.extra);
            keys.push(cur.key.clone());
            features.push(x);
        }
        out.push(LabeledSequence { user: s[0].user.clone(), session: s[0].session.clone(), keys, features });
    }
    out
}

/// Which timing features to keep from each keystroke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Press-press interval only.
    Tau,
    /// Interval and duration.
    TauDuration,
    /// Interval, duration and every extra column.
    All,
}

impl FeatureSet {
    pub fn apply(self, seq: &LabeledSequence) -> LabeledSequence {
        let keep = match self {
            FeatureSet::Tau => 1,
            FeatureSet::TauDuration => 2,
            FeatureSet::All => usize::MAX,
        };
        LabeledSequence { features: seq.features.iter().map(|x| x[..x.len().min(keep)].to_vec()).collect(), ..seq.clone() }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = PohmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(FeatureSet::Tau),
            "tau-duration" | "tau_duration" => Ok(FeatureSet::TauDuration),
            "all" => Ok(FeatureSet::All),
            other => Err(PohmmError::InvalidConfig(format!("unknown feature set {other:?}"))),
        }
    }
}

/// Alphabet of every key seen, in first-seen order.
pub fn alphabet_of(seqs: &[LabeledSequence]) -> Result<EventAlphabet> {
    EventAlphabet::from_labels(seqs.iter().flat_map(|s| s.keys.iter().map(String::as_str)))
}

/// Fixed-length timing vector of one fixed-text sample: the press-press
/// latencies τ₂..τ_K followed by the durations d₁..d_K, both clamped to
/// [`MIN_INTERVAL_MS`]. Eleven keystrokes give 21 features.
pub fn fixed_vector(session: &[KeystrokeEvent]) -> Vec<f64> {
    let lat = session.windows(2).map(|w| (w[1].t_press - w[0].t_press).max(MIN_INTERVAL_MS));
    let dur = session.iter().map(|e| (e.t_release - e.t_press).max(MIN_INTERVAL_MS));
    lat.chain(dur).collect()
}

/// Rebuilds keystrokes from a feature sequence: presses accumulate τ from
/// time 0 and each release follows its press by d (or coincides with it when
/// there is no duration feature). A leading keystroke at time 0 anchors the
/// first interval, so [`to_sequences`] recovers the input.
pub fn events_from_sequence(user: &str, session: &str, keys: &[String], features: &[Vec<f64>]) -> Vec<KeystrokeEvent> {
    let mut out = Vec::with_capacity(keys.len() + 1);
    let hold = |x: &Vec<f64>| x.get(1).copied().unwrap_or(0.0);
    let extra = |x: &Vec<f64>| x.get(2..).map_or_else(Vec::new, <[f64]>::to_vec);
    if let (Some(k0), Some(x0)) = (keys.first(), features.first()) {
        out.push(KeystrokeEvent {
            user: user.into(),
            session: session.into(),
            key: k0.clone(),
            t_press: 0.0,
            t_release: hold(x0),
            extra: extra(x0),
        });
    }
    let mut t = 0.0;
    for (k, x) in keys.iter().zip(features) {
        t += x[0];
        out.push(KeystrokeEvent {
            user: user.into(),
            session: session.into(),
            key: k.clone(),
            t_press: t,
            t_release: t + hold(x),
            extra: extra(x),
        });
    }
    out
}
