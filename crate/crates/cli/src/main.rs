//! Command-line front end: train, evaluate and trace dispatch policies.

mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ridehail::baselines::{GreedyMatching, RandomFeasible};
use ridehail::checkpoint::{config_hash, Checkpoint};
use ridehail::eval::{eval_rng, evaluate, simulate_episode_with};
use ridehail::ppo::{write_metrics, TrainConfig, TrainOverrides, Trainer};
use ridehail::sdm::write_trace;
use ridehail::{DispatchPolicy, Preset};

/// Best fulfilled fraction reported for the time-dependent lookahead policy.
const LOOKAHEAD_REFERENCE: f64 = 0.84;

#[derive(Parser)]
#[command(name = "ridehail", version, about = "Ride-hailing fleet control with PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics and checkpoints.
    Train(TrainArgs),
    /// Report the mean fulfilled-request fraction of a policy.
    Eval(RunArgs),
    /// Run one episode and write its step-by-step trace.
    Simulate(RunArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Traffic pattern file (preset TOML format).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in traffic pattern.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of policy iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Override the number of episodes (per iteration when training).
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write a learning-curve SVG.
    #[arg(long)]
    svg: bool,
    /// Keep one checkpoint file per iteration instead of only the latest.
    #[arg(long)]
    keep_checkpoints: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// `checkpoint:PATH`, `random` or `greedy`.
    #[arg(long, default_value = "greedy")]
    policy: PolicySelector,
}

#[derive(Clone, Debug)]
enum PolicySelector {
    Checkpoint(PathBuf),
    Random,
    Greedy,
}

impl FromStr for PolicySelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "greedy" => Ok(Self::Greedy),
            _ => match s.strip_prefix("checkpoint:") {
                Some(path) if !path.is_empty() => Ok(Self::Checkpoint(path.into())),
                _ => Err(format!("expected checkpoint:PATH, random or greedy, got '{s}'")),
            },
        }
    }
}

impl PolicySelector {
    fn label(&self) -> String {
        match self {
            Self::Checkpoint(p) => format!("checkpoint:{}", p.display()),
            Self::Random => "random".into(),
            Self::Greedy => "greedy".into(),
        }
    }
}

/// Everything a command needs after resolving presets and overrides.
struct Resolved {
    preset: Preset,
    train: TrainConfig,
    hash: String,
}

impl Resolved {
    fn header(&self, seed: u64, extra: &[(&str, String)]) -> Vec<String> {
        let mut line = format!(
            "config_hash={} seed={} pattern={}",
            self.hash,
            seed,
            self.preset.pattern.name()
        );
        for (k, v) in extra {
            line.push_str(&format!(" {k}={v}"));
        }
        vec![line]
    }
}

fn load_preset(common: &CommonArgs) -> Result<Option<Preset>> {
    Ok(match (&common.config, &common.preset) {
        (Some(path), _) => Some(
            Preset::from_path(path).with_context(|| format!("loading {}", path.display()))?,
        ),
        (None, Some(name)) => Some(Preset::builtin(name)?),
        (None, None) => None,
    })
}

fn resolve(common: &CommonArgs, preset: Preset) -> Result<Resolved> {
    let mut train = TrainConfig::default();
    preset.train.apply(&mut train);
    TrainOverrides {
        iterations: common.iters,
        episodes: common.episodes,
        seed: Some(common.seed),
        ..TrainOverrides::default()
    }
    .apply(&mut train);
    train.validate()?;
    let hash = config_hash(&preset, &train);
    Ok(Resolved { preset, train, hash })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("part");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let common = &args.common;
    let (mut trainer, run) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let preset = ck.preset()?;
            let mut trainer = ck.into_trainer()?;
            if let Some(j) = common.iters {
                trainer.config.iterations = j;
            }
            let hash = config_hash(&preset, &trainer.config);
            let train = trainer.config.clone();
            (trainer, Resolved { preset, train, hash })
        }
        None => {
            let preset = load_preset(common)?.context("pass --preset NAME or --config PATH")?;
            let run = resolve(common, preset)?;
            let trainer = Trainer::new(run.train.clone(), run.preset.pattern.clone(), run.preset.rewards.clone())?;
            (trainer, run)
        }
    };
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let seed = run.train.seed;
    let header = run.header(seed, &[]);
    let out = common.out.clone();
    log::info!(
        "training on '{}' for {} iterations of {} episodes (config {})",
        run.preset.pattern.name(),
        run.train.iterations,
        run.train.episodes,
        run.hash
    );

    trainer.run(|t, m| {
        println!(
            "iteration {:>3}  fulfilled {:.4}  reward {:>9.2}  value_loss {:.4}  kl {:.5}  updates {}  {:.1}s",
            m.iteration,
            m.mean_fulfilled_fraction,
            m.mean_episode_reward,
            m.value_loss,
            m.approx_kl,
            m.policy_updates,
            m.wall_seconds
        );
        let mut metrics = Vec::new();
        write_metrics(&mut metrics, &header, &t.history)?;
        let mut timing = format!("# {}\niteration,datapoints,policy_updates,wall_seconds\n", header[0]);
        for h in &t.history {
            timing.push_str(&format!("{},{},{},{}\n", h.iteration, h.datapoints, h.policy_updates, h.wall_seconds));
        }
        let ck = Checkpoint::from_trainer(t, &run.preset);
        let io = |e: anyhow::Error| ridehail::Error::Io(std::io::Error::other(format!("{e:#}")));
        write_file(&out.join("metrics.csv"), &metrics).map_err(io)?;
        write_file(&out.join("timing.csv"), timing.as_bytes()).map_err(io)?;
        ck.save(out.join("checkpoint.ckpt"))?;
        if args.keep_checkpoints {
            ck.save(out.join(format!("checkpoint-{:03}.ckpt", m.iteration)))?;
        }
        Ok(())
    })?;

    if args.svg {
        let points: Vec<(usize, f64)> = trainer
            .history
            .iter()
            .map(|m| (m.iteration, m.mean_fulfilled_fraction))
            .collect();
        let svg = plot::learning_curve_svg(&points, LOOKAHEAD_REFERENCE, "lookahead reference 84%");
        write_file(&out.join("learning_curve.svg"), svg.as_bytes())?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Builds the selected policy and the run it applies to.
fn prepare(args: &RunArgs) -> Result<(Box<dyn DispatchPolicy + Sync>, Resolved)> {
    let common = &args.common;
    match &args.policy {
        PolicySelector::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            let preset = match load_preset(common)? {
                Some(p) => p,
                None => ck.preset()?,
            };
            ck.check_compatible(&preset.pattern)?;
            let run = resolve(common, preset)?;
            Ok((Box::new(ck.policy), run))
        }
        PolicySelector::Random | PolicySelector::Greedy => {
            let preset = load_preset(common)?.context("pass --preset NAME or --config PATH")?;
            let run = resolve(common, preset)?;
            let policy: Box<dyn DispatchPolicy + Sync> = match args.policy {
                PolicySelector::Random => Box::new(RandomFeasible),
                _ => Box::new(GreedyMatching),
            };
            Ok((policy, run))
        }
    }
}

fn cmd_eval(args: &RunArgs) -> Result<()> {
    let (policy, run) = prepare(args)?;
    let episodes = args.common.episodes.unwrap_or(run.train.episodes);
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let seed = args.common.seed;
    let summary = evaluate(
        policy.as_ref(),
        &run.preset.pattern,
        &run.preset.rewards,
        episodes,
        seed,
        true,
    )?;
    println!(
        "policy {}  episodes {}  mean fulfilled fraction {:.4}  std error {:.4}  mean reward {:.2}",
        args.policy.label(),
        episodes,
        summary.mean_fraction,
        summary.std_error,
        summary.mean_reward
    );
    fs::create_dir_all(&args.common.out)?;
    let mut csv = Vec::new();
    for line in run.header(seed, &[]) {
        writeln!(csv, "# {line}")?;
    }
    writeln!(csv, "policy,episodes,mean_fulfilled_fraction,std_error,mean_episode_reward")?;
    writeln!(
        csv,
        "{},{},{},{},{}",
        args.policy.label(),
        episodes,
        summary.mean_fraction,
        summary.std_error,
        summary.mean_reward
    )?;
    write_file(&args.common.out.join("eval.csv"), &csv)?;
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<()> {
    let (policy, run) = prepare(args)?;
    let seed = args.common.seed;
    let mut records = Vec::new();
    let summary = simulate_episode_with(
        policy.as_ref(),
        &run.preset.pattern,
        &run.preset.rewards,
        &mut eval_rng(seed, 0),
        |_| {},
        |r| records.push(*r),
    )?;
    fs::create_dir_all(&args.common.out)?;
    let mut csv = Vec::new();
    write_trace(&mut csv, &run.header(seed, &[("policy", args.policy.label())]), &records)?;
    let path = args.common.out.join("trace.csv");
    write_file(&path, &csv)?;
    println!(
        "{} steps, {} of {} requests served, reward {:.2}; trace in {}",
        summary.steps,
        summary.matches,
        summary.arrivals,
        summary.total_reward,
        path.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}
