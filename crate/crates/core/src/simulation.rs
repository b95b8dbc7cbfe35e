//! Parameter-recovery simulations.
//!
//! 1. POHMM fit without smoothing on POHMM data.
//! 2. The same data fit with smoothing.
//! 3. POHMM fit on HMM emissions with independent uniform event types,
//!    compared through its marginals.
//! 4. Single-event-type fit (an HMM) on POHMM data, compared with every
//!    event-conditional generating parameter.

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionKind, EmissionParams};
use crate::error::{PohmmError, Result};
use crate::estimation::{fit, FitConfig};
use crate::event_chain::{EventAlphabet, EventChain};
use crate::model::{ObservationSequence, PohmmParams};
use crate::rng;
use crate::stats::{mean, sample_sd};

/// Generating model: two normal states, three event types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaO {
    pub state_locations: Vec<f64>,
    /// Added to every state location for each event type.
    pub event_offsets: Vec<f64>,
    pub scale: f64,
}

impl Default for ThetaO {
    fn default() -> Self {
        Self { state_locations: vec![100.0, 400.0], event_offsets: vec![-30.0, 0.0, 30.0], scale: 50.0 }
    }
}

impl ThetaO {
    fn build(&self, offsets: &[f64]) -> Result<PohmmParams> {
        let (big_m, m) = (self.state_locations.len(), offsets.len());
        let emit = offsets
            .iter()
            .flat_map(|o| self.state_locations.iter().map(move |l| (l + o, self.scale)))
            .map(|(loc, s)| EmissionParams::new(EmissionKind::Normal, vec![loc], vec![s]))
            .collect::<Result<Vec<_>>>()?;
        PohmmParams::with_uniform_dynamics(big_m, EventAlphabet::numbered(m)?, emit, EventChain::uniform(m))
    }

    /// The POHMM with uniform starts, transitions and event chain.
    pub fn pohmm(&self) -> Result<PohmmParams> {
        self.build(&self.event_offsets)
    }

    /// The HMM (one event type) with the un-offset state locations.
    pub fn hmm(&self) -> Result<PohmmParams> {
        self.build(&[0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub theta: ThetaO,
    pub fit: FitConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![128, 512, 2048, 4096],
            replicates: 100,
            theta: ThetaO::default(),
            fit: FitConfig { kind: EmissionKind::Normal, smoothing: false, ..FitConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Location,
    Scale,
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub n: usize,
    pub parameter: String,
    pub group: ParamGroup,
    pub truth: f64,
    /// Mean over replicates of (θ̂ − θ_o) / sd(θ̂).
    pub mean_residual: f64,
    /// Standard error of the mean estimate, sd(θ̂)/√R.
    pub stderr: f64,
    /// Mean error in standard errors, mean(θ̂ − θ_o)/stderr.
    pub z: f64,
    /// Mean of |θ̂ − θ_o|.
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: u8,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub rows: Vec<ResidualRow>,
    /// Mean hidden-state classification accuracy per N.
    pub accuracy: Vec<f64>,
}

impl ScenarioReport {
    pub fn rows_at(&self, n: usize) -> impl Iterator<Item = &ResidualRow> {
        self.rows.iter().filter(move |r| r.n == n)
    }

    pub fn accuracy_at(&self, n: usize) -> Option<f64> {
        self.n_grid.iter().position(|&x| x == n).map(|i| self.accuracy[i])
    }
}

/// Parameter estimates of one refit, in target order, and its decoding accuracy.
struct Replicate {
    estimates: Vec<f64>,
    accuracy: f64,
}

struct Target {
    name: String,
    group: ParamGroup,
    truth: f64,
}

fn targets(scenario: u8, theta: &PohmmParams) -> Vec<Target> {
    let (big_m, m) = (theta.n_states(), theta.n_events());
    let mut out = Vec::new();
    let push = |out: &mut Vec<Target>, name: String, group, truth| out.push(Target { name, group, truth });
    match scenario {
        1 | 2 | 4 => {
            for w in 0..m {
                for j in 0..big_m {
                    push(&mut out, format!("loc[{j}|{w}]"), ParamGroup::Location, theta.emission(w, j).loc[0]);
                }
            }
            for w in 0..m {
                for j in 0..big_m {
                    push(&mut out, format!("scale[{j}|{w}]"), ParamGroup::Scale, theta.emission(w, j).scale[0]);
                }
            }
            if scenario == 4 {
                for i in 0..big_m {
                    push(&mut out, format!("trans[{i},0]"), ParamGroup::Transition, theta.marginals().trans[i * big_m]);
                }
            } else {
                for psi in 0..m {
                    for i in 0..big_m {
                        for w in 0..m {
                            push(&mut out, format!("trans[{i},0|{psi},{w}]"), ParamGroup::Transition, theta.transition(psi, i, w, 0));
                        }
                    }
                }
            }
        }
        _ => {
            let mg = theta.marginals();
            for j in 0..big_m {
                push(&mut out, format!("loc[{j}]"), ParamGroup::Location, mg.emit[j].loc[0]);
            }
            for j in 0..big_m {
                push(&mut out, format!("scale[{j}]"), ParamGroup::Scale, mg.emit[j].scale[0]);
            }
            for i in 0..big_m {
                push(&mut out, format!("trans[{i},0]"), ParamGroup::Transition, mg.trans[i * big_m]);
            }
        }
    }
    out
}

/// Estimates in the same order as [`targets`].
fn estimates(scenario: u8, fitted: &PohmmParams, m_true: usize) -> Vec<f64> {
    let big_m = fitted.n_states();
    let mut out = Vec::new();
    match scenario {
        1 | 2 => {
            for w in 0..m_true {
                out.extend((0..big_m).map(|j| fitted.emission(w, j).loc[0]));
            }
            for w in 0..m_true {
                out.extend((0..big_m).map(|j| fitted.emission(w, j).scale[0]));
            }
            for psi in 0..m_true {
                for i in 0..big_m {
                    out.extend((0..m_true).map(|w| fitted.transition(psi, i, w, 0)));
                }
            }
        }
        4 => {
            for _ in 0..m_true {
                out.extend((0..big_m).map(|j| fitted.emission(0, j).loc[0]));
            }
            for _ in 0..m_true {
                out.extend((0..big_m).map(|j| fitted.emission(0, j).scale[0]));
            }
            out.extend((0..big_m).map(|i| fitted.marginals().trans[i * big_m]));
        }
        _ => {
            let mg = fitted.marginals();
            out.extend((0..big_m).map(|j| mg.emit[j].loc[0]));
            out.extend((0..big_m).map(|j| mg.emit[j].scale[0]));
            out.extend((0..big_m).map(|i| mg.trans[i * big_m]));
        }
    }
    out
}

/// Training data of one replicate. Scenarios 1 and 2 draw identical data
/// for identical (seed, index).
fn generate(scenario: u8, theta: &ThetaO, n: usize, r: &mut rng::Rng) -> Result<(ObservationSequence, Vec<usize>)> {
    match scenario {
        3 => {
            let hmm = theta.hmm()?;
            let (mut seq, states) = hmm.sample(n, r, None)?;
            let m = theta.event_offsets.len();
            seq.events = (0..n).map(|_| r.random_range(0..m)).collect();
            Ok((seq, states))
        }
        _ => theta.pohmm()?.sample(n, r, None),
    }
}

fn replicate(scenario: u8, config: &SimulationConfig, n: usize, stream: u64, seed: u64) -> Result<(Replicate, PohmmParams)> {
    let mut r = rng::substream(seed, stream);
    let (seq, states) = generate(scenario, &config.theta, n, &mut r)?;
    let m = config.theta.event_offsets.len();
    let fit_config = FitConfig { smoothing: scenario == 2, ..config.fit.clone() };
    let (train, alphabet) =
        if scenario == 4 { (seq.collapse_events(), EventAlphabet::numbered(1)?) } else { (seq, EventAlphabet::numbered(m)?) };
    let (fitted, _) = fit(std::slice::from_ref(&train), &alphabet, &fit_config)?;
    let predicted = fitted.predict_states(&train)?;
    let accuracy = predicted.iter().zip(&states).filter(|(a, b)| a == b).count() as f64 / n as f64;
    Ok((Replicate { estimates: estimates(scenario, &fitted, m), accuracy }, fitted))
}

fn stream_index(grid_index: usize, rep: usize) -> u64 {
    ((grid_index as u64) << 32) | rep as u64
}

/// Runs one scenario over the N grid. Replicates run in parallel and are
/// aggregated in replicate order; replicate `r` at grid index `g` uses
/// substream (g, r) of `seed`.
pub fn run_scenario(scenario: u8, config: &SimulationConfig, seed: u64) -> Result<ScenarioReport> {
    if !(1..=4).contains(&scenario) {
        return Err(PohmmError::InvalidConfig(format!("scenario must be 1-4, got {scenario}")));
    }
    if config.replicates == 0 || config.n_grid.is_empty() {
        return Err(PohmmError::InvalidConfig("need at least one replicate and one N".into()));
    }
    let theta = match scenario {
        3 => {
            // marginals of the generating HMM seen through three event types
            let mut t = config.theta.clone();
            t.event_offsets = vec![0.0; config.theta.event_offsets.len()];
            t.pohmm()?
        }
        _ => config.theta.pohmm()?,
    };
    let tg = targets(scenario, &theta);
    let mut rows = Vec::new();
    let mut accuracy = Vec::new();
    for (g, &n) in config.n_grid.iter().enumerate() {
        let reps = (0..config.replicates)
            .into_par_iter()
            .map(|r| replicate(scenario, config, n, stream_index(g, r), seed).map(|(rep, _)| rep))
            .collect::<Result<Vec<_>>>()?;
        accuracy.push(mean(&reps.iter().map(|r| r.accuracy).collect::<Vec<_>>()));
        for (p, t) in tg.iter().enumerate() {
            let est: Vec<f64> = reps.iter().map(|r| r.estimates[p]).collect();
            rows.push(residual_row(n, t, &est));
        }
    }
    Ok(ScenarioReport { scenario, n_grid: config.n_grid.clone(), replicates: config.replicates, rows, accuracy })
}

fn residual_row(n: usize, t: &Target, est: &[f64]) -> ResidualRow {
    let errors: Vec<f64> = est.iter().map(|e| e - t.truth).collect();
    let sd = sample_sd(est);
    let bias = mean(&errors);
    let stderr = sd / (est.len() as f64).sqrt();
    let ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(num)
        }
    };
    ResidualRow {
        n,
        parameter: t.name.clone(),
        group: t.group,
        truth: t.truth,
        mean_residual: ratio(bias, sd),
        stderr,
        z: ratio(bias, stderr),
        mean_abs_error: mean(&errors.iter().map(|e| e.abs()).collect::<Vec<_>>()),
    }
}

/// Largest difference between smoothed and unsmoothed fits on identical data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingGap {
    pub n: usize,
    /// Location differences in units of the generating scale.
    pub location: f64,
    pub scale: f64,
    pub transition: f64,
}

impl SmoothingGap {
    pub fn max(&self) -> f64 {
        self.location.max(self.scale).max(self.transition)
    }
}

/// Paired scenario 1 / scenario 2 fits at grid index `g`, maximized over
/// replicates and cells.
pub fn smoothing_gap(config: &SimulationConfig, g: usize, seed: u64) -> Result<SmoothingGap> {
    let n = config.n_grid[g];
    let s = config.theta.scale;
    let pairs = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let a = replicate(1, config, n, stream_index(g, r), seed)?.1;
            let b = replicate(2, config, n, stream_index(g, r), seed)?.1;
            let mut gap = SmoothingGap { n, location: 0.0, scale: 0.0, transition: 0.0 };
            for (ea, eb) in a.emission_table().iter().zip(b.emission_table()) {
                gap.location = gap.location.max((ea.loc[0] - eb.loc[0]).abs() / s);
                gap.scale = gap.scale.max((ea.scale[0] - eb.scale[0]).abs() / s);
            }
            for (ta, tb) in a.trans_table().iter().zip(b.trans_table()) {
                gap.transition = gap.transition.max((ta - tb).abs());
            }
            Ok(gap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().fold(SmoothingGap { n, location: 0.0, scale: 0.0, transition: 0.0 }, |acc, g| SmoothingGap {
        n,
        location: acc.location.max(g.location),
        scale: acc.scale.max(g.scale),
        transition: acc.transition.max(g.transition),
    }))
}

/// Writes `scenario,N,parameter,mean_residual,stderr,z,mean_abs_error,accuracy`.
pub fn write_reports_csv<W: Write>(reports: &[ScenarioReport], w: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    w.write_record(["scenario", "N", "parameter", "mean_residual", "stderr", "z", "mean_abs_error", "accuracy"])?;
    for rep in reports {
        for row in &rep.rows {
            let acc = rep.accuracy_at(row.n).unwrap_or(f64::NAN);
            w.write_record([
                rep.scenario.to_string(),
                row.n.to_string(),
                row.parameter.clone(),
                row.mean_residual.to_string(),
                row.stderr.to_string(),
                row.z.to_string(),
                row.mean_abs_error.to_string(),
                acc.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
