//! The `guirc` command line.
//!
//! Stages talk through JSONL files: `sample` writes sample sets, `consensus`
//! and `reward` read them, `eval` scores prediction files against a dataset.
//! Exit codes: 0 on success, 1 for usage errors, 2 for data errors.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::{
    compare_reports, evaluate_with, load_dataset, predictions_from_lines, BboxConvention,
    Containment, PredictionLine, Report,
};
use crate::io::{read_jsonl, write_atomic, write_json, write_jsonl, Reject};
use crate::reward::{group_advantages, DEFAULT_EPS};
use crate::sampler::{
    load_samples, now_ms, persist_samples, render_prompt, ConfigSnapshot, ImagePayload, SampleSet,
    Sampler, SamplerConfig, INSTRUCTION_PLACEHOLDER,
};
use crate::sim::{self, par_map};
use crate::types::{Connectivity, GroundingRecord, ImageSize, PixelRect, PointMode, RcConfig, RcpoConfig, Sample};
use crate::vote::{build_vote_grid, consensus_of_rects, render_heatmap};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "guirc", version, about = "Region-consistency voting for GUI grounding")]
pub struct Cli {
    /// TOML file of `flag = value` defaults; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Vote over sample sets and write one click point per query.
    Consensus(ConsensusArgs),
    /// Score predictions against a dataset.
    Eval(EvalArgs),
    /// Per-sample consistency rewards and group advantages.
    Reward(RewardArgs),
    /// Collect K completions per query from a chat-completions endpoint.
    Sample(SampleArgs),
    /// Train the toy Gaussian policy with consistency rewards.
    RcpoDemo(RcpoDemoArgs),
    /// Accuracy sweeps over dispersion, sample count or expansion size.
    Ablate(AblateArgs),
    /// Consensus vs single-sample accuracy on synthetic trials.
    RcVsSingle(RcVsSingleArgs),
    /// Greedy baseline vs voting at a higher temperature on one endpoint.
    ComposeRcAfterRcpo(ComposeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConnectivityArg {
    #[value(name = "4")]
    Four,
    #[value(name = "8")]
    Eight,
}

impl From<ConnectivityArg> for Connectivity {
    fn from(c: ConnectivityArg) -> Self {
        match c {
            ConnectivityArg::Four => Connectivity::Four,
            ConnectivityArg::Eight => Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PointModeArg {
    BboxCenter,
    Centroid,
}

impl From<PointModeArg> for PointMode {
    fn from(m: PointModeArg) -> Self {
        match m {
            PointModeArg::BboxCenter => PointMode::BboxCenter,
            PointModeArg::Centroid => PointMode::Centroid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BboxArg {
    Xyxy,
    Xywh,
}

impl From<BboxArg> for BboxConvention {
    fn from(b: BboxArg) -> Self {
        match b {
            BboxArg::Xyxy => BboxConvention::Xyxy,
            BboxArg::Xywh => BboxConvention::Xywh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContainmentArg {
    Inclusive,
    HalfOpen,
}

impl From<ContainmentArg> for Containment {
    fn from(c: ContainmentArg) -> Self {
        match c {
            ContainmentArg::Inclusive => Containment::Inclusive,
            ContainmentArg::HalfOpen => Containment::HalfOpen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Dispersion,
    KSamples,
    Alpha,
}

impl From<SweepArg> for sim::SweepParam {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::Dispersion => sim::SweepParam::Dispersion,
            SweepArg::KSamples => sim::SweepParam::KSamples,
            SweepArg::Alpha => sim::SweepParam::Alpha,
        }
    }
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    /// Side of the square a point prediction votes with, px.
    #[arg(long, default_value_t = 50.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "4")]
    pub connectivity: ConnectivityArg,
    #[arg(long, value_enum, default_value = "bbox-center")]
    pub point_mode: PointModeArg,
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    /// Sample sets as written by `sample`.
    pub samples: PathBuf,
    #[command(flatten)]
    pub vote: VoteArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Write one PGM vote heatmap per query into this directory.
    #[arg(long)]
    pub heatmap_dir: Option<PathBuf>,
    /// Exit 0 even when some queries have no consensus.
    #[arg(long)]
    pub allow_missing: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub predictions: PathBuf,
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "xyxy")]
    pub bbox_convention: BboxArg,
    #[arg(long, value_enum, default_value = "inclusive")]
    pub containment: ContainmentArg,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Earlier JSON report; prints per-cell differences against it.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Skipped dataset lines, as JSONL.
    #[arg(long)]
    pub rejects: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    pub samples: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    /// Base URL or full chat-completions URL.
    #[arg(long)]
    pub endpoint: String,
    #[arg(long)]
    pub model: String,
    /// Directory holding the screenshots, named by `image_id`.
    #[arg(long)]
    pub image_dir: PathBuf,
    /// Prompt template containing `{instruction}`.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 60.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(long, default_value_t = 250)]
    pub backoff_ms: u64,
    /// Maximum in-flight requests when fanning out.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// Send K single-completion requests instead of one request with `n = K`.
    #[arg(long)]
    pub no_n: bool,
    #[arg(long, value_enum, default_value = "xyxy")]
    pub bbox_convention: BboxArg,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RcpoDemoArgs {
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.02)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.04)]
    pub kl_beta: f64,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Per-step CSV curve.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary with the initial and final policy.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub param: SweepArg,
    /// Comma-separated values to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    pub tasks: usize,
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 30.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dispersion: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RcVsSingleArgs {
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 20)]
    pub tasks_per_trial: usize,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    pub dataset: PathBuf,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    #[command(flatten)]
    pub vote: VoteArgs,
    /// Receives samples, predictions, both reports and the delta.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name), runs the command, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_tracing(cli.verbose);
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Consensus(a) => cmd_consensus(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reward(a) => cmd_reward(a),
        Command::Sample(a) => cmd_sample(a),
        Command::RcpoDemo(a) => cmd_rcpo_demo(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::RcVsSingle(a) => cmd_rc_vs_single(a),
        Command::ComposeRcAfterRcpo(a) => cmd_compose(a),
    }
}

/// Splices `--config FILE` entries into `argv` right after the subcommand.
///
/// Top-level keys apply to every subcommand that has a flag of that name;
/// a `[subcommand]` table applies only to that subcommand. Flags already
/// present on the command line are left alone.
pub fn apply_config_file(mut argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy().into_owned();
        if a == "--config" {
            if i + 1 >= argv.len() {
                return Err(CliError::Usage("--config needs a file".into()));
            }
            path = Some(PathBuf::from(argv.remove(i + 1)));
            argv.remove(i);
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            argv.remove(i);
            continue;
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;

    let root = Cli::command();
    let names: Vec<String> = root.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(sub_at) = argv
        .iter()
        .position(|a| names.iter().any(|n| a.to_str() == Some(n.as_str())))
    else {
        return Ok(argv);
    };
    let sub_name = argv[sub_at].to_string_lossy().into_owned();
    let sub = root.find_subcommand(&sub_name).expect("listed subcommand");
    let flags: Vec<(String, bool)> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(|l| (l.to_string(), a.get_action().takes_values())))
        .collect();
    let known_anywhere: HashSet<String> = root
        .get_subcommands()
        .flat_map(|s| s.get_arguments().filter_map(|a| a.get_long().map(str::to_string)))
        .collect();
    let given: HashSet<String> = argv[sub_at + 1..]
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();

    let mut entries: Vec<(String, toml::Value, bool)> = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(t) => {
                if !names.contains(key) {
                    return Err(CliError::Usage(format!("config: unknown section [{key}]")));
                }
                if *key == sub_name {
                    entries.extend(t.iter().map(|(k, v)| (k.clone(), v.clone(), true)));
                }
            }
            v => entries.push((key.clone(), v.clone(), false)),
        }
    }

    let mut extra: Vec<OsString> = Vec::new();
    for (key, value, scoped) in entries {
        let flag = key.replace('_', "-");
        let Some(&(_, takes_value)) = flags.iter().find(|(l, _)| *l == flag) else {
            if scoped || !known_anywhere.contains(&flag) {
                return Err(CliError::Usage(format!("config: unknown key `{key}` for {sub_name}")));
            }
            continue;
        };
        if given.contains(&flag) {
            continue;
        }
        let rendered = match &value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(n) => n.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => {
                return Err(CliError::Usage(format!("config: unsupported value for `{key}`: {other}")));
            }
        };
        if takes_value {
            extra.push(format!("--{flag}").into());
            extra.push(rendered.into());
        } else if matches!(value, toml::Value::Boolean(true)) {
            extra.push(format!("--{flag}").into());
        }
    }
    argv.splice(sub_at + 1..sub_at + 1, extra);
    Ok(argv)
}

fn warn_rejects(path: &Path, rejects: &[Reject]) {
    for r in rejects {
        tracing::warn!("{}:{}: skipped: {}", path.display(), r.line, r.reason);
        eprintln!("warning: {}:{}: skipped: {}", path.display(), r.line, r.reason);
    }
}

fn rc_config(vote: &VoteArgs, k: usize, temperature: f64, top_p: f64) -> CliResult<RcConfig> {
    let cfg = RcConfig {
        k_samples: k,
        temperature,
        top_p,
        alpha: vote.alpha,
        connectivity: vote.connectivity.into(),
        point_mode: vote.point_mode.into(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn by_key<T>(items: &mut [T], key: impl Fn(&T) -> (&str, &str)) {
    items.sort_by(|a, b| key(a).cmp(&key(b)));
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

enum Voted {
    Hit(PredictionLine, Option<(ImageSize, Vec<PixelRect>)>),
    Miss(String),
}

fn vote_sets(sets: &[SampleSet], cfg: &RcConfig, keep_rects: bool) -> Vec<Voted> {
    par_map(sets.len(), |i| {
        let set = &sets[i];
        let label = format!("{} / {:?}", set.image_id, set.instruction);
        let size = match ImageSize::new(set.width, set.height) {
            Ok(s) => s,
            Err(e) => return Voted::Miss(format!("{label}: {e}")),
        };
        let rects: Vec<PixelRect> = set
            .texts
            .iter()
            .map(|t| Sample::from_text(t, cfg.alpha, size).rect)
            .collect();
        match consensus_of_rects(&rects, size, cfg.connectivity) {
            Ok(c) => {
                let (x, y) = c.point(cfg.point_mode);
                Voted::Hit(
                    PredictionLine {
                        image_id: set.image_id.clone(),
                        instruction: set.instruction.clone(),
                        x,
                        y,
                        bbox: Some(c.bbox),
                        v_max: Some(c.v_max),
                        area: Some(c.area),
                    },
                    keep_rects.then_some((size, rects)),
                )
            }
            Err(e) => Voted::Miss(format!("{label}: {e}")),
        }
    })
}

fn cmd_consensus(a: ConsensusArgs) -> CliResult {
    let cfg = rc_config(&a.vote, 1, 0.0, 1.0)?;
    let (mut sets, rejects) = load_samples(&a.samples)?;
    warn_rejects(&a.samples, &rejects);
    if sets.is_empty() {
        return Err(CliError::Data(format!("{}: {}", a.samples.display(), Error::NoConsensus)));
    }
    by_key(&mut sets, |s| (&s.image_id, &s.instruction));
    let voted = vote_sets(&sets, &cfg, a.heatmap_dir.is_some());

    let mut lines = Vec::new();
    let mut misses = Vec::new();
    for (i, v) in voted.into_iter().enumerate() {
        match v {
            Voted::Hit(line, rects) => {
                if let (Some(dir), Some((size, rects))) = (&a.heatmap_dir, rects) {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    let grid = build_vote_grid(&rects, size)?;
                    let name = format!("{i:04}_{}.pgm", sanitize(&line.image_id));
                    render_heatmap(&grid, &dir.join(name))?;
                }
                lines.push(line);
            }
            Voted::Miss(m) => misses.push(m),
        }
    }
    write_jsonl(&a.out, &lines)?;
    println!("{} predictions written to {}", lines.len(), a.out.display());
    if misses.is_empty() {
        return Ok(());
    }
    for m in &misses {
        eprintln!("warning: {m}");
    }
    if a.allow_missing {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} of {} queries had no consensus", misses.len(), sets.len())))
    }
}

fn evaluate_files(
    predictions: &Path,
    dataset: &Path,
    convention: BboxConvention,
    containment: Containment,
    rejects_out: Option<&Path>,
) -> CliResult<Report> {
    let data = load_dataset(dataset, convention)?;
    warn_rejects(dataset, &data.rejects);
    if let Some(path) = rejects_out {
        write_jsonl(path, &data.rejects)?;
    }
    if data.records.is_empty() {
        return Err(CliError::Data(format!("{}: no usable records", dataset.display())));
    }
    let (lines, rejects) = read_jsonl::<PredictionLine>(predictions)?;
    warn_rejects(predictions, &rejects);
    Ok(evaluate_with(&predictions_from_lines(&lines), &data.records, containment))
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let report = evaluate_files(
        &a.predictions,
        &a.dataset,
        a.bbox_convention.into(),
        a.containment.into(),
        a.rejects.as_deref(),
    )?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if let Some(csv) = &a.csv {
        let text = report.to_csv();
        write_atomic(csv, |f| std::io::Write::write_all(f, text.as_bytes()))?;
    }
    println!(
        "overall: {:.2}% ({}/{}, {} missing)",
        report.overall_percent(),
        report.overall.hits,
        report.overall.total,
        report.overall.missing
    );
    if let Some(before) = &a.compare {
        let text = std::fs::read_to_string(before).map_err(|e| Error::io(before, e))?;
        let before: Report = serde_json::from_str(&text).map_err(Error::from)?;
        print!("{}", compare_reports(&before, &report).render());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLine {
    pub image_id: String,
    pub instruction: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

fn cmd_reward(a: RewardArgs) -> CliResult {
    if !(a.alpha > 0.0 && a.alpha.is_finite()) {
        return Err(CliError::Usage(format!("alpha must be positive, got {}", a.alpha)));
    }
    let (mut sets, rejects) = load_samples(&a.samples)?;
    warn_rejects(&a.samples, &rejects);
    by_key(&mut sets, |s| (&s.image_id, &s.instruction));
    let results = par_map(sets.len(), |i| -> CliResult<Option<RewardLine>> {
        let set = &sets[i];
        if set.texts.is_empty() {
            return Ok(None);
        }
        let size = ImageSize::new(set.width, set.height)?;
        let rewards = crate::reward::reward_from_texts(&set.texts, a.alpha, size)?;
        // A lone sample sits exactly at its group mean.
        let advantages = if rewards.len() < 2 {
            vec![0.0; rewards.len()]
        } else {
            group_advantages(&rewards, DEFAULT_EPS)?
        };
        Ok(Some(RewardLine {
            image_id: set.image_id.clone(),
            instruction: set.instruction.clone(),
            rewards,
            advantages,
        }))
    });
    let mut lines = Vec::new();
    for (set, r) in sets.iter().zip(results) {
        match r? {
            Some(l) => lines.push(l),
            None => eprintln!("warning: {} / {:?}: no samples", set.image_id, set.instruction),
        }
    }
    write_jsonl(&a.out, &lines)?;
    println!("{} reward groups written to {}", lines.len(), a.out.display());
    Ok(())
}

fn sampler_from(e: &EndpointArgs) -> CliResult<(Sampler, String)> {
    if !(e.timeout_secs > 0.0 && e.timeout_secs.is_finite()) {
        return Err(CliError::Usage("timeout-secs must be positive".into()));
    }
    let template = match &e.prompt_file {
        Some(p) => std::fs::read_to_string(p).map_err(|err| Error::io(p, err))?,
        None => INSTRUCTION_PLACEHOLDER.to_string(),
    };
    render_prompt(&template, "")?;
    let mut cfg = SamplerConfig::new(e.endpoint.clone(), e.model.clone());
    cfg.max_tokens = e.max_tokens;
    cfg.timeout = Duration::from_secs_f64(e.timeout_secs);
    cfg.max_retries = e.retries;
    cfg.backoff_base = Duration::from_millis(e.backoff_ms);
    cfg.concurrency = e.concurrency.max(1);
    cfg.use_n = !e.no_n;
    Ok((Sampler::new(cfg)?, template))
}

fn load_records(path: &Path, convention: BboxConvention) -> CliResult<Vec<GroundingRecord>> {
    let data = load_dataset(path, convention)?;
    warn_rejects(path, &data.rejects);
    if data.records.is_empty() {
        return Err(CliError::Data(format!("{}: no usable records", path.display())));
    }
    let mut records = data.records;
    by_key(&mut records, |r| (&r.image_id, &r.instruction));
    Ok(records)
}

/// Samples every record; returns the sets and how many had gaps.
fn sample_records(
    sampler: &Sampler,
    template: &str,
    image_dir: &Path,
    records: &[GroundingRecord],
    cfg: &RcConfig,
) -> CliResult<(Vec<SampleSet>, usize)> {
    let mut sets = Vec::with_capacity(records.len());
    let mut gapped = 0;
    for r in records {
        let image = ImagePayload::from_path(&image_dir.join(&r.image_id))?;
        let prompt = render_prompt(template, &r.instruction)?;
        let started = now_ms();
        let outcome = sampler.sample_k(&image, &prompt, cfg);
        if !outcome.gaps.is_empty() {
            gapped += 1;
            tracing::warn!(
                "{} / {:?}: {} of {} samples missing",
                r.image_id,
                r.instruction,
                cfg.k_samples - outcome.texts.len(),
                cfg.k_samples
            );
        }
        sets.push(SampleSet {
            image_id: r.image_id.clone(),
            instruction: r.instruction.clone(),
            width: r.size.width(),
            height: r.size.height(),
            texts: outcome.texts,
            config: ConfigSnapshot {
                model: sampler.config().model.clone(),
                k: cfg.k_samples,
                temperature: cfg.temperature,
                top_p: cfg.top_p,
                max_tokens: sampler.config().max_tokens,
            },
            started_at_ms: started,
            finished_at_ms: now_ms(),
            gaps: outcome.gaps,
        });
    }
    Ok((sets, gapped))
}

fn cmd_sample(a: SampleArgs) -> CliResult {
    let vote = VoteArgs {
        alpha: 50.0,
        connectivity: ConnectivityArg::Four,
        point_mode: PointModeArg::BboxCenter,
    };
    let cfg = rc_config(&vote, a.k, a.temperature, a.top_p)?;
    let (sampler, template) = sampler_from(&a.endpoint)?;
    let records = load_records(&a.dataset, a.endpoint.bbox_convention.into())?;
    let (sets, gapped) = sample_records(&sampler, &template, &a.endpoint.image_dir, &records, &cfg)?;
    persist_samples(&a.out, &sets)?;
    println!("{} sample sets written to {}", sets.len(), a.out.display());
    if gapped > 0 {
        return Err(CliError::Data(format!(
            "{gapped} of {} queries are missing samples; partial results kept",
            sets.len()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    write_atomic(path, |f| std::io::Write::write_all(f, text.as_bytes()))?;
    Ok(())
}

fn cmd_rcpo_demo(a: RcpoDemoArgs) -> CliResult {
    let defaults = sim::DemoConfig::default();
    let cfg = sim::DemoConfig {
        rcpo: RcpoConfig {
            group_size: a.group_size,
            learning_rate: a.learning_rate,
            kl_beta: a.kl_beta,
            steps: a.steps,
            ..defaults.rcpo
        },
        seed: a.seed,
        ..defaults
    };
    let curve = sim::run_rcpo_demo(&cfg)?;
    if let Some(out) = &a.out {
        write_text(out, &curve.to_csv())?;
    }
    if let Some(summary) = &a.summary {
        write_json(summary, &curve)?;
    }
    let first = curve.steps.first().map_or(0.0, |s| s.mean_reward);
    let last = curve.steps.last().map_or(0.0, |s| s.mean_reward);
    println!(
        "center std {:.3} -> {:.3}, mean reward {:.3} -> {:.3} over {} steps",
        curve.initial.center_std(),
        curve.final_policy.center_std(),
        first,
        last,
        curve.steps.len()
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CliResult {
    let cfg = sim::SweepConfig {
        tasks: a.tasks,
        k_samples: a.k,
        alpha: a.alpha,
        dispersion: a.dispersion,
        seed: a.seed,
        ..sim::SweepConfig::default()
    };
    let curve = sim::ablation_sweep(a.param.into(), &a.values, &cfg)?;
    let csv = curve.to_csv();
    match &a.out {
        Some(out) => write_text(out, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_rc_vs_single(a: RcVsSingleArgs) -> CliResult {
    let cfg = sim::DominanceConfig {
        tasks_per_trial: a.tasks_per_trial,
        k_samples: a.k,
        seed: a.seed,
        ..sim::DominanceConfig::default()
    };
    let summary = sim::rc_vs_single_experiment(&cfg, a.trials)?;
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    println!(
        "consensus {:.4} [{:.4}, {:.4}]  single {:.4} [{:.4}, {:.4}]  consensus >= single in {:.1}% of {} trials",
        summary.consensus.mean,
        summary.consensus.lo,
        summary.consensus.hi,
        summary.single.mean,
        summary.single.lo,
        summary.single.hi,
        summary.dominance_rate * 100.0,
        summary.trials
    );
    Ok(())
}

fn cmd_compose(a: ComposeArgs) -> CliResult {
    let cfg = rc_config(&a.vote, a.k, a.temperature, a.top_p)?;
    let (sampler, template) = sampler_from(&a.endpoint)?;
    let records = load_records(&a.dataset, a.endpoint.bbox_convention.into())?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let mut greedy = Vec::new();
    for r in &records {
        let image = ImagePayload::from_path(&a.endpoint.image_dir.join(&r.image_id))?;
        let prompt = render_prompt(&template, &r.instruction)?;
        match sampler.greedy_baseline(&image, &prompt) {
            Ok(text) => {
                let (target, _) = crate::parse::parse_prediction(&text, cfg.alpha, r.size);
                if let Some((x, y)) = target.click_point() {
                    greedy.push(PredictionLine {
                        image_id: r.image_id.clone(),
                        instruction: r.instruction.clone(),
                        x,
                        y,
                        bbox: None,
                        v_max: None,
                        area: None,
                    });
                }
            }
            Err(e) => eprintln!("warning: {} / {:?}: greedy request failed: {e}", r.image_id, r.instruction),
        }
    }

    let (sets, gapped) = sample_records(&sampler, &template, &a.endpoint.image_dir, &records, &cfg)?;
    let voted = vote_sets(&sets, &cfg, false);
    let rc: Vec<PredictionLine> = voted
        .into_iter()
        .filter_map(|v| match v {
            Voted::Hit(l, _) => Some(l),
            Voted::Miss(m) => {
                eprintln!("warning: {m}");
                None
            }
        })
        .collect();

    let containment = Containment::Inclusive;
    let before = evaluate_with(&predictions_from_lines(&greedy), &records, containment);
    let after = evaluate_with(&predictions_from_lines(&rc), &records, containment);
    let delta = compare_reports(&before, &after);
    let dir = &a.out_dir;
    write_jsonl(&dir.join("greedy_predictions.jsonl"), &greedy)?;
    persist_samples(&dir.join("samples.jsonl"), &sets)?;
    write_jsonl(&dir.join("rc_predictions.jsonl"), &rc)?;
    write_json(&dir.join("greedy_report.json"), &before)?;
    write_json(&dir.join("rc_report.json"), &after)?;
    write_json(&dir.join("delta.json"), &delta)?;
    print!("{}", delta.render());
    if gapped > 0 {
        eprintln!("warning: {gapped} of {} queries are missing samples", sets.len());
    }
    Ok(())
}
