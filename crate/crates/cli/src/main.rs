use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tbqn_core::envs::EnvName;
use tbqn_core::hpo::{SamplerKind, SearchSpace, StudyConfig};

use tbqn_cli::error::{CliError, CliResult};
use tbqn_cli::search::{run_search, SearchArgs};
use tbqn_cli::variants::run_variants;
use tbqn_cli::{eval, presets, resolve, train, Overrides, RunConfig};

/// Training steps per study run unless `--steps` says otherwise.
const STUDY_STEPS: u64 = 15_000;

#[derive(Parser)]
#[command(name = "tbqn", version, about = "Train and study transformer-based Q-networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics, checkpoints and the resolved config.
    Train(ConfigArgs),
    /// Evaluate a saved checkpoint with greedy episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the environment stored in the checkpoint.
        #[arg(long)]
        env: Option<EnvName>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Defaults to the training seed stored in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a hyperparameter study over a search-space file.
    Search {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value = "tpe")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "cartpole")]
        envs: Vec<EnvName>,
        #[arg(long, default_value_t = 2)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        base: ConfigArgs,
    },
    /// Train the final recipe at each model-size variant.
    Variants {
        /// Number of seeds per variant, counting up from --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        base: ConfigArgs,
    },
    /// Print the resolved configuration without running anything.
    Config(ConfigArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    env: Option<EnvName>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set agent.lr=1e-4`; `none` clears optional keys.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            preset: self.preset.clone(),
            env: self.env,
            steps: self.steps,
            seed: self.seed,
            out: self.out.clone(),
            sets: self.sets.clone(),
            env_vars: std::env::vars().collect(),
        }
    }

    fn resolve(&self) -> CliResult<RunConfig> {
        resolve(&self.overrides())
    }

    fn resolve_with_default(&self, preset: &str) -> CliResult<RunConfig> {
        let mut o = self.overrides();
        if o.preset.is_none() && o.config.is_none() {
            o.preset = Some(preset.into());
        }
        resolve(&o)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let summary = train::run_train(&cfg)?.into_result()?;
            match summary.log.rows.last() {
                Some(r) => println!("trained {} steps, last avg_return {}", r.step, r.avg_return),
                None => println!("trained {} steps", summary.log.steps_trained),
            }
            println!("outputs in {}", summary.out.display());
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => println!("{}", eval::run_eval(&checkpoint, env, episodes, seed)?),
        Command::Search {
            space,
            sampler,
            trials,
            envs,
            runs,
            workers,
            base,
        } => {
            let text = std::fs::read_to_string(&space).map_err(|e| CliError::io(space.display(), e))?;
            let space = SearchSpace::parse(&text)?;
            let configs = envs
                .iter()
                .map(|&env| {
                    let mut b = base.clone();
                    b.env = Some(env);
                    b.steps = b.steps.or(Some(STUDY_STEPS));
                    b.resolve_with_default(presets::BASELINE)
                })
                .collect::<CliResult<Vec<_>>>()?;
            let first = configs.first().ok_or_else(|| CliError::Config("--envs is empty".into()))?;
            let mut study = StudyConfig::new(sampler, trials, envs.clone(), first.agent.seed);
            study.runs_per_sample = runs;
            study.workers = workers;
            let args = SearchArgs {
                space,
                steps: first.total_steps,
                out: base.out.clone().unwrap_or_else(|| PathBuf::from("runs/search")),
                study,
                base: configs,
            };
            let summary = run_search(&args)?;
            let failed = summary.records.iter().filter(|r| r.error.is_some()).count();
            for r in summary.records.iter().filter(|r| r.error.is_some()) {
                eprintln!("trial {} failed: {}", r.index, r.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} trials ({failed} failed), results in {}",
                summary.records.len(),
                args.out.display()
            );
        }
        Command::Variants { seeds, workers, base } => {
            let cfg = base.resolve_with_default(presets::FINAL)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.agent.seed + i).collect();
            let runs = run_variants(&cfg, &seed_list, workers)?;
            for r in &runs {
                match &r.result {
                    Ok(log) => println!(
                        "{} seed {}: best avg_return {}",
                        r.variant.tag(),
                        r.seed,
                        log.best_return().unwrap_or(f64::NAN)
                    ),
                    Err(e) => eprintln!("{} seed {} failed: {e}", r.variant.tag(), r.seed),
                }
            }
        }
        Command::Config(args) => print!("{}", args.resolve()?.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
