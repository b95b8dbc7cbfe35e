//! Detector comparison over a keystroke dataset: identification accuracy,
//! per-user EER, and AMRT for the likelihood-based detectors.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biometric::{
    amrt, amrt_round, argmax_score, global_mad, manhattan_score, mean_vector, min_max_normalize, roc_eer, MrtRecord, Population, RocCurve,
    DEFAULT_WINDOW,
};
use crate::dataset::{alphabet_of, fixed_vector, sessions, to_sequences, FeatureSet, KeystrokeEvent, LabeledSequence};
use crate::emissions::{EmissionKind, EmissionParams};
use crate::error::{PohmmError, Result};
use crate::estimation::{fit, FitConfig};
use crate::event_chain::{EventAlphabet, EventChain};
use crate::model::PohmmParams;
use crate::rng::Rng;
use crate::stats::mean_ci;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    Manhattan,
    ScaledManhattan,
    /// The POHMM fit with every key mapped to one event type.
    Hmm,
    Pohmm,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::Manhattan, Detector::ScaledManhattan, Detector::Hmm, Detector::Pohmm];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Manhattan => "manhattan",
            Detector::ScaledManhattan => "scaled-manhattan",
            Detector::Hmm => "hmm",
            Detector::Pohmm => "pohmm",
        }
    }

    fn is_likelihood(self) -> bool {
        matches!(self, Detector::Hmm | Detector::Pohmm)
    }
}

impl std::str::FromStr for Detector {
    type Err = PohmmError;

    fn from_str(s: &str) -> Result<Self> {
        Detector::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| PohmmError::InvalidConfig(format!("unknown detector {s:?}")))
    }
}

/// How samples are split into training data and queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Fold k holds out sample k of every user as that fold's query.
    CrossFold,
    /// Train on samples `train`, query with each sample index in `test`.
    Split { train: Range<usize>, test: Range<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub fit: FitConfig,
    pub feature_set: FeatureSet,
    pub protocol: Protocol,
    pub window: usize,
    pub detectors: Vec<Detector>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            feature_set: FeatureSet::TauDuration,
            protocol: Protocol::CrossFold,
            window: DEFAULT_WINDOW,
            detectors: Detector::ALL.to_vec(),
        }
    }
}

/// A user's samples (sessions) in session order.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSamples {
    pub user: String,
    pub samples: Vec<Vec<KeystrokeEvent>>,
}

/// Numeric session labels compare as numbers, anything else as text.
fn session_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

pub fn group_users(events: &[KeystrokeEvent]) -> Vec<UserSamples> {
    let mut by_user: BTreeMap<&str, Vec<&[KeystrokeEvent]>> = BTreeMap::new();
    for s in sessions(events) {
        by_user.entry(s[0].user.as_str()).or_default().push(s);
    }
    by_user
        .into_iter()
        .map(|(user, mut ss)| {
            ss.sort_by(|a, b| session_order(&a[0].session, &b[0].session));
            UserSamples { user: user.to_string(), samples: ss.into_iter().map(<[KeystrokeEvent]>::to_vec).collect() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub detector: Detector,
    pub user: String,
    pub accuracy: f64,
    pub eer: f64,
    pub amrt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub detector: Detector,
    pub accuracy: f64,
    pub accuracy_ci: f64,
    pub eer: f64,
    pub eer_ci: f64,
    pub amrt: Option<f64>,
    pub amrt_ci: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMrt {
    pub detector: Detector,
    pub round: usize,
    pub record: MrtRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub summary: Vec<DetectorSummary>,
    pub per_user: Vec<UserMetrics>,
    /// (detector, user, curve) in detector then user order.
    pub roc: Vec<(Detector, String, RocCurve)>,
    pub mrt: Vec<RoundMrt>,
}

/// Train sample indices and the query index of each round.
fn rounds(protocol: &Protocol, n_samples: usize) -> Result<Vec<(Vec<usize>, usize)>> {
    match protocol {
        Protocol::CrossFold => {
            if n_samples < 2 {
                return Err(PohmmError::InvalidConfig("cross-fold needs two samples per user".into()));
            }
            Ok((0..n_samples).map(|k| ((0..n_samples).filter(|&i| i != k).collect(), k)).collect())
        }
        Protocol::Split { train, test } => {
            if train.is_empty() || test.is_empty() || train.end > n_samples || test.end > n_samples {
                return Err(PohmmError::InvalidConfig(format!("split {train:?}/{test:?} out of range for {n_samples} samples per user")));
            }
            let tr: Vec<usize> = train.clone().collect();
            Ok(test.clone().map(|q| (tr.clone(), q)).collect())
        }
    }
}

/// Per-detector scorer trained on one round.
enum Scorer {
    Likelihood { population: Population, collapse: bool },
    Distance { means: Vec<Vec<f64>>, scale: Option<Vec<f64>> },
}

impl Scorer {
    fn scores(&self, query: &LabeledSequence, vector: &[f64]) -> Result<Vec<Option<f64>>> {
        match self {
            Scorer::Likelihood { population, collapse } => {
                Ok(if *collapse { population.logliks(&query.collapsed()) } else { population.logliks(query) })
            }
            Scorer::Distance { means, scale } => means.iter().map(|m| manhattan_score(vector, m, scale.as_deref()).map(Some)).collect(),
        }
    }
}

/// Fits one user's model on labeled sequences.
pub fn fit_user_model(seqs: &[LabeledSequence], config: &FitConfig) -> Result<PohmmParams> {
    let alphabet = alphabet_of(seqs)?;
    let encoded: Vec<_> = seqs.iter().map(|s| s.encode(&alphabet)).collect();
    fit(&encoded, &alphabet, config).map(|(p, _)| p)
}

/// Runs every configured detector under the protocol.
///
/// Users need equally many samples; the distance detectors also need every
/// sample to have the same number of keystrokes.
pub fn run_benchmark(users: &[UserSamples], config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if users.len() < 2 {
        return Err(PohmmError::InvalidConfig("benchmark needs at least two users".into()));
    }
    let n_samples = users.iter().map(|u| u.samples.len()).min().unwrap_or(0);
    if users.iter().any(|u| u.samples.len() != n_samples) {
        log::warn!("users have unequal sample counts; using the first {n_samples} of each");
    }
    let plan = rounds(&config.protocol, n_samples)?;

    // features of every sample, indexed [user][sample]
    let seqs: Vec<Vec<LabeledSequence>> = users
        .iter()
        .map(|u| {
            u.samples[..n_samples]
                .iter()
                .map(|s| {
                    let mut v = to_sequences(s);
                    if v.len() != 1 {
                        return Err(PohmmError::InvalidConfig(format!("sample of user {} has fewer than two keystrokes", u.user)));
                    }
                    Ok(config.feature_set.apply(&v.remove(0)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let needs_vectors = config.detectors.iter().any(|d| !d.is_likelihood());
    let vectors: Vec<Vec<Vec<f64>>> = users.iter().map(|u| u.samples[..n_samples].iter().map(|s| fixed_vector(s)).collect()).collect();
    let dataset_mad = if needs_vectors {
        let all: Vec<Vec<f64>> = vectors.iter().flatten().cloned().collect();
        Some(global_mad(&all).map_err(|_| PohmmError::InvalidConfig("distance detectors need equally long samples".into()))?)
    } else {
        None
    };
    let ids: Vec<String> = users.iter().map(|u| u.user.clone()).collect();
    let n_users = users.len();

    let mut report = BenchmarkReport { summary: vec![], per_user: vec![], roc: vec![], mrt: vec![] };
    for &det in &config.detectors {
        let mut correct = vec![0usize; n_users];
        let mut asked = vec![0usize; n_users];
        let mut genuine = vec![Vec::new(); n_users];
        let mut impostor = vec![Vec::new(); n_users];
        let mut mrt_by_model: Vec<Vec<f64>> = vec![Vec::new(); n_users];

        for (round_idx, (train, q)) in plan.iter().enumerate() {
            let scorer = match det {
                Detector::Hmm | Detector::Pohmm => {
                    let collapse = det == Detector::Hmm;
                    let members = (0..n_users)
                        .into_par_iter()
                        .map(|u| {
                            let data: Vec<LabeledSequence> =
                                train.iter().map(|&i| if collapse { seqs[u][i].collapsed() } else { seqs[u][i].clone() }).collect();
                            fit_user_model(&data, &config.fit).map(|p| (ids[u].clone(), p))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Scorer::Likelihood { population: Population::new(members)?, collapse }
                }
                Detector::Manhattan | Detector::ScaledManhattan => {
                    let means = (0..n_users)
                        .map(|u| mean_vector(&train.iter().map(|&i| vectors[u][i].clone()).collect::<Vec<_>>()))
                        .collect::<Result<Vec<_>>>()?;
                    let scale = if det == Detector::ScaledManhattan { dataset_mad.clone() } else { None };
                    Scorer::Distance { means, scale }
                }
            };

            for v in 0..n_users {
                let scores = scorer.scores(&seqs[v][*q], &vectors[v][*q])?;
                asked[v] += 1;
                if argmax_score(&scores) == Some(v) {
                    correct[v] += 1;
                }
                for u in 0..n_users {
                    let s = min_max_normalize(&scores, u);
                    if u == v {
                        genuine[u].push(s);
                    } else {
                        impostor[u].push(s);
                    }
                }
            }

            if let Scorer::Likelihood { population, collapse } = &scorer {
                let queries: Vec<(String, LabeledSequence)> = (0..n_users)
                    .map(|v| {
                        let s = &seqs[v][*q];
                        (ids[v].clone(), if *collapse { s.collapsed() } else { s.clone() })
                    })
                    .collect();
                for record in amrt_round(&queries, population, config.window)? {
                    let u = population.index_of(&record.model)?;
                    mrt_by_model[u].push(record.mrt as f64);
                    report.mrt.push(RoundMrt { detector: det, round: round_idx, record });
                }
            }
        }

        let mut accs = Vec::with_capacity(n_users);
        let mut eers = Vec::with_capacity(n_users);
        let mut amrts = Vec::with_capacity(n_users);
        for u in 0..n_users {
            let acc = correct[u] as f64 / asked[u] as f64;
            let roc = roc_eer(&genuine[u], &impostor[u])?;
            let user_amrt = det.is_likelihood().then(|| crate::stats::mean(&mrt_by_model[u]));
            accs.push(acc);
            eers.push(roc.eer);
            if let Some(a) = user_amrt {
                amrts.push(a);
            }
            report.per_user.push(UserMetrics { detector: det, user: ids[u].clone(), accuracy: acc, eer: roc.eer, amrt: user_amrt });
            report.roc.push((det, ids[u].clone(), roc));
        }
        let (accuracy, accuracy_ci) = mean_ci(&accs);
        let (eer, eer_ci) = mean_ci(&eers);
        let (amrt_mean, amrt_ci) = if amrts.is_empty() {
            (None, None)
        } else {
            let (m, c) = mean_ci(&amrts);
            (Some(m), Some(c))
        };
        report.summary.push(DetectorSummary { detector: det, accuracy, accuracy_ci, eer, eer_ci, amrt: amrt_mean, amrt_ci });
    }
    Ok(report)
}

/// Mean MRT of one detector over every recorded pair.
pub fn overall_amrt(report: &BenchmarkReport, detector: Detector) -> Option<f64> {
    let recs: Vec<MrtRecord> = report.mrt.iter().filter(|r| r.detector == detector).map(|r| r.record.clone()).collect();
    (!recs.is_empty()).then(|| amrt(&recs))
}

impl BenchmarkReport {
    pub fn summary_for(&self, detector: Detector) -> Option<&DetectorSummary> {
        self.summary.iter().find(|s| s.detector == detector)
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv_writer(w);
        w.write_record(["detector", "acc", "acc_ci", "eer", "eer_ci", "amrt", "amrt_ci"])?;
        for s in &self.summary {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            w.write_record([
                s.detector.name().to_string(),
                s.accuracy.to_string(),
                s.accuracy_ci.to_string(),
                s.eer.to_string(),
                s.eer_ci.to_string(),
                opt(s.amrt),
                opt(s.amrt_ci),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_roc_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv_writer(w);
        w.write_record(["detector", "user", "threshold", "far", "frr"])?;
        for (det, user, roc) in &self.roc {
            for ((t, far), frr) in roc.thresholds.iter().zip(&roc.far).zip(&roc.frr) {
                w.write_record([det.name().to_string(), user.clone(), t.to_string(), far.to_string(), frr.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_amrt_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv_writer(w);
        w.write_record(["detector", "round", "model", "impostor", "threshold", "mrt", "length"])?;
        for r in &self.mrt {
            w.write_record([
                r.detector.name().to_string(),
                r.round.to_string(),
                r.record.model.clone(),
                r.record.impostor.clone(),
                r.record.threshold.to_string(),
                r.record.mrt.to_string(),
                r.record.length.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn per_user_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.per_user)?)
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Synthetic fixed-text typing population.
///
/// Every user has a two-state log-normal POHMM over the keys of a fixed
/// phrase: an active state with user- and key-specific latencies and
/// durations, and a passive state with longer, more variable pauses. Every
/// fourth key starts a word and is far more likely to be typed passively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub keys: usize,
    pub samples: usize,
    /// Spread of the per-user, per-key log-latency offsets.
    pub key_spread: f64,
    /// Spread of the per-user log-latency baseline.
    pub user_spread: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { users: 10, keys: 11, samples: 60, key_spread: 0.1, user_spread: 0.05 }
    }
}

/// Per-user generating models of a [`SyntheticSpec`] population.
pub fn synthetic_models(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Vec<PohmmParams>> {
    let alphabet = EventAlphabet::new((0..spec.keys).map(|k| format!("k{k}")))?;
    let m = spec.keys;
    // fixed text: key k is always followed by key k + 1
    let mut chain_trans = vec![0.0; m * m];
    for k in 0..m {
        chain_trans[k * m + (k + 1) % m] = 1.0;
    }
    let mut start = vec![0.0; m];
    start[0] = 1.0;
    let chain = EventChain { start, trans: chain_trans, stationary: vec![1.0 / m as f64; m] };
    let normal = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
    (0..spec.users)
        .map(|_| {
            let base_tau = 150f64.ln() + spec.user_spread * normal(rng);
            let base_dur = 90f64.ln() + spec.user_spread * normal(rng);
            let mut emit = Vec::with_capacity(2 * m);
            for _ in 0..m {
                let tau = base_tau + spec.key_spread * normal(rng);
                let dur = base_dur + spec.key_spread * normal(rng);
                emit.push(EmissionParams::new(EmissionKind::Lognormal, vec![tau, dur], vec![0.15, 0.15])?);
                emit.push(EmissionParams::new(EmissionKind::Lognormal, vec![tau + 1.0, dur + 0.2], vec![0.4, 0.3])?);
            }
            // pauses cluster at word boundaries, with a user-specific rate per key
            let pause: Vec<f64> =
                (0..m).map(|k| if k % 4 == 0 { 0.4 + 0.4 * rng.random::<f64>() } else { 0.02 + 0.1 * rng.random::<f64>() }).collect();
            let mut trans = Vec::with_capacity(m * m * 4);
            for _psi in 0..m {
                for _i in 0..2 {
                    for &p in &pause {
                        trans.extend_from_slice(&[1.0 - p, p]);
                    }
                }
            }
            let startp: Vec<f64> = pause.iter().flat_map(|&p| [1.0 - p, p]).collect();
            PohmmParams::new(2, alphabet.clone(), startp, trans, emit, chain.clone())
        })
        .collect()
}

/// Keystroke log of a synthetic population: `samples` sessions per user,
/// each typing the whole phrase once.
pub fn synthetic_keystrokes(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Vec<KeystrokeEvent>> {
    let models = synthetic_models(spec, rng)?;
    let phrase: Vec<usize> = (0..spec.keys).collect();
    let mut out = Vec::with_capacity(spec.users * spec.samples * spec.keys);
    for (u, model) in models.iter().enumerate() {
        for s in 0..spec.samples {
            let (seq, _) = model.sample(spec.keys, rng, Some(&phrase))?;
            let mut t = 0.0;
            for (n, (&e, x)) in seq.events.iter().zip(&seq.features).enumerate() {
                if n > 0 {
                    t += x[0];
                }
                out.push(KeystrokeEvent {
                    user: format!("u{u:02}"),
                    session: s.to_string(),
                    key: model.alphabet().label(e).to_string(),
                    t_press: t,
                    t_release: t + x[1],
                    extra: vec![],
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn protocol_rounds() {
        let r = rounds(&Protocol::CrossFold, 3).unwrap();
        assert_eq!(r, vec![(vec![1, 2], 0), (vec![0, 2], 1), (vec![0, 1], 2)]);
        let r = rounds(&Protocol::Split { train: 0..2, test: 2..4 }, 4).unwrap();
        assert_eq!(r, vec![(vec![0, 1], 2), (vec![0, 1], 3)]);
        assert!(rounds(&Protocol::Split { train: 0..2, test: 2..5 }, 4).is_err());
    }

    #[test]
    fn sessions_sort_numerically() {
        let ev =
            |s: &str| KeystrokeEvent { user: "u".into(), session: s.into(), key: "a".into(), t_press: 0.0, t_release: 1.0, extra: vec![] };
        let mut evs = vec![ev("10"), ev("2"), ev("1")];
        evs.sort_by(|a, b| a.session.cmp(&b.session));
        let g = group_users(&evs);
        let order: Vec<&str> = g[0].samples.iter().map(|s| s[0].session.as_str()).collect();
        assert_eq!(order, ["1", "2", "10"]);
    }

    #[test]
    fn synthetic_benchmark_runs_and_is_deterministic() {
        let spec = SyntheticSpec { users: 3, keys: 5, samples: 6, ..SyntheticSpec::default() };
        let events = synthetic_keystrokes(&spec, &mut rng::seeded(41)).unwrap();
        assert_eq!(events.len(), 3 * 5 * 6);
        let users = group_users(&events);
        let cfg = BenchmarkConfig {
            protocol: Protocol::Split { train: 0..4, test: 4..6 },
            fit: FitConfig { max_iter: 30, ..FitConfig::default() },
            ..BenchmarkConfig::default()
        };
        let a = run_benchmark(&users, &cfg).unwrap();
        let b = run_benchmark(&users, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.summary.len(), 4);
        assert_eq!(a.per_user.len(), 12);
        // 2 rounds × 3 models × 2 impostors per likelihood detector
        assert_eq!(a.mrt.len(), 2 * 12);
        for s in &a.summary {
            assert!((0.0..=1.0).contains(&s.accuracy) && (0.0..=1.0).contains(&s.eer));
            assert_eq!(s.amrt.is_some(), s.detector.is_likelihood());
        }
        let mut buf = Vec::new();
        a.write_summary_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("detector,acc,acc_ci,eer,eer_ci,amrt,amrt_ci\n"));
    }
}
