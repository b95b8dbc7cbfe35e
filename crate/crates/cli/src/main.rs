use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng as _;
use serde::Serialize;

use pohmm::benchmark::{group_users, run_benchmark, BenchmarkConfig, Detector, Protocol};
use pohmm::dataset::{
    alphabet_of, events_from_sequence, load_csv, to_sequences, truncate_sessions, write_events, FeatureSet, LabeledSequence,
};
use pohmm::estimation::{fit, FitConfig, FitReport};
use pohmm::gof::{monte_carlo_gof, GofConfig};
use pohmm::simulation::{run_scenario, write_reports_csv, SimulationConfig};
use pohmm::{model_file, rng, EmissionKind, PohmmError, PohmmParams};

#[derive(Parser)]
#[command(name = "pohmm", version, about = "Fit and evaluate partially observable hidden Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a keystroke CSV and write it as JSON.
    Fit(FitCmd),
    /// Per-sequence log-likelihood under a model.
    Loglik(ScoreCmd),
    /// Most probable hidden state of every event.
    States(ScoreCmd),
    /// Draw synthetic keystroke sequences from a model.
    Sample(SampleCmd),
    /// Monte Carlo goodness-of-fit test of one sequence.
    Gof(GofCmd),
    /// Compare detectors on a keystroke dataset.
    Benchmark(BenchmarkCmd),
    /// Parameter-recovery simulations.
    Simulate(SimulateCmd),
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Hidden states per event type.
    #[arg(long, default_value_t = 2)]
    states: usize,
    #[arg(long, default_value = "lognormal")]
    emission: EmissionKind,
    /// Stop when an iteration improves the log-likelihood by less than this.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Blend sparse conditional parameters toward the marginals.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    smoothing: bool,
    /// Initial spread of the state means, in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    bandwidth: f64,
    /// Additive smoothing of the event-type chain.
    #[arg(long, default_value_t = 0.0)]
    pseudocount: f64,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            n_states: self.states,
            kind: self.emission,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            bandwidth: self.bandwidth,
            smoothing: self.smoothing,
            pseudocount: self.pseudocount,
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Keystroke CSV with columns user,session,key,t_press,t_release[,f0..].
    #[arg(long)]
    input: PathBuf,
    /// tau, tau-duration or all.
    #[arg(long, default_value = "tau-duration")]
    feature_set: FeatureSet,
    /// Keep only the first K keystrokes of each session.
    #[arg(long)]
    truncate: Option<usize>,
    /// Restrict to one user.
    #[arg(long)]
    user: Option<String>,
    /// Restrict to one session.
    #[arg(long)]
    session: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<LabeledSequence>, CliError> {
        let mut events = load_csv(&self.input)?;
        if let Some(k) = self.truncate {
            events = truncate_sessions(&events, k);
        }
        events.retain(|e| self.user.as_ref().is_none_or(|u| &e.user == u) && self.session.as_ref().is_none_or(|s| &e.session == s));
        let seqs: Vec<LabeledSequence> = to_sequences(&events).iter().map(|s| self.feature_set.apply(s)).collect();
        if seqs.is_empty() {
            return Err(CliError::input("no sequences with at least two keystrokes in the input"));
        }
        Ok(seqs)
    }
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Model JSON path.
    #[arg(long)]
    output: PathBuf,
    /// Optional fit report JSON (log-likelihood trace, iterations).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long)]
    model: PathBuf,
    /// Keystroke CSV; every session is scored.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    truncate: Option<usize>,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    model: PathBuf,
    /// Events per sequence.
    #[arg(long, short = 'n')]
    length: usize,
    #[arg(long, default_value_t = 1)]
    sequences: usize,
    #[arg(long)]
    seed: u64,
    /// User label written to the CSV.
    #[arg(long, default_value = "sample")]
    user: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GofCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Number of surrogate samples S.
    #[arg(long, default_value_t = 99)]
    surrogates: usize,
    /// Reuse the observed event types in surrogates instead of sampling them.
    #[arg(long)]
    reuse_events: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// cross-fold, or split with --train/--test sample ranges.
    #[arg(long, default_value = "cross-fold")]
    protocol: String,
    /// Training sample range START..END (split protocol).
    #[arg(long)]
    train: Option<String>,
    /// Query sample range START..END (split protocol).
    #[arg(long)]
    test: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "manhattan,scaled-manhattan,hmm,pohmm")]
    detectors: Vec<Detector>,
    /// Continuous-verification window length.
    #[arg(long, default_value_t = pohmm::biometric::DEFAULT_WINDOW)]
    window: usize,
    /// Directory receiving summary.csv, roc.csv, amrt.csv and per_user.json.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SimulateCmd {
    /// Scenarios to run (1-4).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    scenario: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "128,512,2048,4096")]
    n_grid: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<PohmmError> for CliError {
    fn from(e: PohmmError) -> Self {
        Self { code: if e.is_numerical() { 1 } else { 2 }, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e.to_string())
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// Drops trailing features the model was not trained on.
fn fit_features(seq: &LabeledSequence, model: &PohmmParams) -> Result<LabeledSequence, CliError> {
    let k = model.n_features();
    if seq.features.iter().any(|x| x.len() < k) {
        return Err(CliError::input(format!("session {}/{} has fewer than the model's {k} features", seq.user, seq.session)));
    }
    Ok(LabeledSequence { features: seq.features.iter().map(|x| x[..k].to_vec()).collect(), ..seq.clone() })
}

fn scored_sequences(cmd: &ScoreCmd) -> Result<(PohmmParams, Vec<LabeledSequence>), CliError> {
    let model = model_file::load(&cmd.model)?;
    let data = DataArgs { input: cmd.input.clone(), feature_set: FeatureSet::All, truncate: cmd.truncate, user: None, session: None };
    let seqs = data.load()?.iter().map(|s| fit_features(s, &model)).collect::<Result<_, _>>()?;
    Ok((model, seqs))
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    report: &'a FitReport,
    sequences: usize,
    events: usize,
    dof: usize,
}

fn run_fit(cmd: &FitCmd) -> Result<(), CliError> {
    let seqs = cmd.data.load()?;
    let alphabet = alphabet_of(&seqs)?;
    let encoded: Vec<_> = seqs.iter().map(|s| s.encode(&alphabet)).collect();
    let (model, report) = fit(&encoded, &alphabet, &cmd.fit.config())?;
    model_file::save(&model, &cmd.output)?;
    if let Some(path) = &cmd.report {
        let out =
            FitOutput { report: &report, sequences: seqs.len(), events: seqs.iter().map(LabeledSequence::len).sum(), dof: model.dof() };
        write_json(&out, Some(path))?;
    }
    log::info!("fit {} sequences in {} iterations, loglik {}", seqs.len(), report.iterations, report.final_loglik);
    Ok(())
}

fn run_loglik(cmd: &ScoreCmd) -> Result<(), CliError> {
    let (model, seqs) = scored_sequences(cmd)?;
    let lls = seqs.iter().map(|s| model.loglik(&s.encode(model.alphabet()))).collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer(output(cmd.output.as_deref())?);
    w.write_record(["user", "session", "n", "loglik"]).map_err(PohmmError::from)?;
    for (s, ll) in seqs.iter().zip(lls) {
        w.write_record([s.user.clone(), s.session.clone(), s.len().to_string(), ll.to_string()]).map_err(PohmmError::from)?;
    }
    w.flush()?;
    Ok(())
}

fn run_states(cmd: &ScoreCmd) -> Result<(), CliError> {
    let (model, seqs) = scored_sequences(cmd)?;
    let decoded = seqs.iter().map(|s| model.predict_states(&s.encode(model.alphabet()))).collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer(output(cmd.output.as_deref())?);
    w.write_record(["user", "session", "index", "key", "state"]).map_err(PohmmError::from)?;
    for (s, states) in seqs.iter().zip(decoded) {
        for (i, (k, z)) in s.keys.iter().zip(states).enumerate() {
            w.write_record([s.user.clone(), s.session.clone(), i.to_string(), k.clone(), z.to_string()]).map_err(PohmmError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_sample(cmd: &SampleCmd) -> Result<(), CliError> {
    let model = model_file::load(&cmd.model)?;
    if cmd.length == 0 {
        return Err(CliError::input("--length must be positive"));
    }
    let mut events = Vec::new();
    for i in 0..cmd.sequences {
        let mut r = rng::substream(cmd.seed, i as u64);
        let (seq, _) = model.sample(cmd.length, &mut r, None)?;
        let keys: Vec<String> = seq.events.iter().map(|&e| model.alphabet().label(e).to_string()).collect();
        events.extend(events_from_sequence(&cmd.user, &i.to_string(), &keys, &seq.features));
    }
    let w = output(cmd.output.as_deref())?;
    write_events(&events, w)?;
    Ok(())
}

#[derive(Serialize)]
struct GofOutput {
    user: String,
    session: String,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "S")]
    s: usize,
    p_value: f64,
    #[serde(rename = "A_surrogates")]
    a_surrogates: Vec<f64>,
}

fn run_gof(cmd: &GofCmd) -> Result<(), CliError> {
    let seqs = cmd.data.load()?;
    if seqs.len() != 1 {
        return Err(CliError::input(format!(
            "gof tests one sequence but the input has {}; select one with --user and --session",
            seqs.len()
        )));
    }
    let seq = &seqs[0];
    let alphabet = alphabet_of(&seqs)?;
    let config = GofConfig { fit: cmd.fit.config(), surrogates: cmd.surrogates, resample_events: !cmd.reuse_events };
    let result = monte_carlo_gof(&seq.encode(&alphabet), &alphabet, &config, &mut rng::seeded(cmd.seed))?;
    let out = GofOutput {
        user: seq.user.clone(),
        session: seq.session.clone(),
        a: result.a_empirical,
        s: result.a_surrogates.len(),
        p_value: result.p_value,
        a_surrogates: result.a_surrogates,
    };
    write_json(&out, cmd.output.as_deref())
}

fn parse_range(flag: &str, value: Option<&String>) -> Result<std::ops::Range<usize>, CliError> {
    let v = value.ok_or_else(|| CliError::input(format!("split protocol needs --{flag} START..END")))?;
    let (a, b) = v.split_once("..").ok_or_else(|| CliError::input(format!("--{flag}: expected START..END, got {v:?}")))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| CliError::input(format!("--{flag}: bad bound {s:?}")));
    Ok(parse(a)?..parse(b)?)
}

fn run_benchmark_cmd(cmd: &BenchmarkCmd) -> Result<(), CliError> {
    let protocol = match cmd.protocol.as_str() {
        "cross-fold" => Protocol::CrossFold,
        "split" => Protocol::Split { train: parse_range("train", cmd.train.as_ref())?, test: parse_range("test", cmd.test.as_ref())? },
        other => return Err(CliError::input(format!("unknown protocol {other:?}"))),
    };
    let mut events = load_csv(&cmd.data.input)?;
    if let Some(k) = cmd.data.truncate {
        events = truncate_sessions(&events, k);
    }
    let config = BenchmarkConfig {
        fit: cmd.fit.config(),
        feature_set: cmd.data.feature_set,
        protocol,
        window: cmd.window,
        detectors: cmd.detectors.clone(),
    };
    let report = run_benchmark(&group_users(&events), &config)?;
    fs::create_dir_all(&cmd.output_dir)?;
    let dir = &cmd.output_dir;
    let file = |name: &str| -> Result<BufWriter<fs::File>, CliError> { Ok(BufWriter::new(fs::File::create(dir.join(name))?)) };
    report.write_summary_csv(file("summary.csv")?)?;
    report.write_roc_csv(file("roc.csv")?)?;
    report.write_amrt_csv(file("amrt.csv")?)?;
    let mut f = file("per_user.json")?;
    f.write_all(report.per_user_json()?.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn run_simulate(cmd: &SimulateCmd) -> Result<(), CliError> {
    let mut config = SimulationConfig { n_grid: cmd.n_grid.clone(), replicates: cmd.replicates, ..SimulationConfig::default() };
    config.fit.epsilon = cmd.epsilon;
    config.fit.max_iter = cmd.max_iter;
    // one independent seed per scenario, so scenario subsets reproduce the full run
    let mut master = rng::seeded(cmd.seed);
    let seeds: Vec<u64> = (0..4).map(|_| master.random()).collect();
    let mut reports = Vec::new();
    for &s in &cmd.scenario {
        if !(1..=4).contains(&s) {
            return Err(CliError::input(format!("scenario must be 1-4, got {s}")));
        }
        // scenarios 1 and 2 share data so their fits are paired
        let seed = seeds[if s == 2 { 0 } else { usize::from(s - 1) }];
        reports.push(run_scenario(s, &config, seed)?);
    }
    write_reports_csv(&reports, output(cmd.output.as_deref())?)?;
    Ok(())
}

fn configure_threads() -> Result<(), CliError> {
    let threads = match std::env::var("POHMM_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| CliError::input(format!("POHMM_THREADS: not a count: {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| CliError::input(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Fit(c) => run_fit(c),
        Command::Loglik(c) => run_loglik(c),
        Command::States(c) => run_states(c),
        Command::Sample(c) => run_sample(c),
        Command::Gof(c) => run_gof(c),
        Command::Benchmark(c) => run_benchmark_cmd(c),
        Command::Simulate(c) => run_simulate(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
