use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nstepac::agents::load_agent_checkpoint;
use nstepac::diagnostics::{
    estimate_bias, online_offline_gap, record_target_gaps, StateJournal,
};
use nstepac::envs::make_env;
use nstepac::harness::{
    compare_runs, load_config, plot, run_experiment, CompareMetric, HarnessError,
};
use nstepac::replay::{ReplayBuffer, Transition};
use nstepac::selftest::run_selftest;

#[derive(Parser)]
#[command(
    name = "nstepac",
    about = "Continuous-control RL lab: DDPG, multi-step and mixed multi-step DDPG, TD3, \
             and overestimation diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write CSVs, plots and a summary.
    Train(TrainArgs),
    /// Compare completed runs on a metric.
    Compare(CompareArgs),
    /// Run a diagnostic suite against a finished run's checkpoint.
    Diagnose(DiagnoseArgs),
    /// Run the built-in oracle/property suite.
    Selftest,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list, e.g. `--seed-list 1,2,3`.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Override any config key, e.g. `--override agent.gamma=0.99`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    // Common agent fields as first-class flags.
    #[arg(long)]
    env_id: Option<String>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    target_spec: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated hidden layer sizes, e.g. `--hidden-sizes 64,64`.
    #[arg(long, value_delimiter = ',')]
    hidden_sizes: Option<Vec<usize>>,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    exploration_noise_sigma: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    update_every: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Completed run directories.
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    /// `max_avg_return` or `final_bias`.
    #[arg(long, default_value = "max_avg_return")]
    metric: String,
    /// Also write overlaid return curves to this SVG file.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// A run directory (containing seed_*/checkpoint.bin).
    #[arg(long)]
    run: PathBuf,
    /// `gaps`, `bias` or `online-offline`.
    #[arg(long)]
    suite: String,
    /// Which seed's checkpoint to inspect (default: first found).
    #[arg(long)]
    seed: Option<u64>,
    /// Fresh experience to collect for the probe batches.
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    /// RNG seed for the diagnostic itself.
    #[arg(long, default_value_t = 0)]
    diag_seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Compare(args) => compare(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Selftest => selftest(),
    }
}

fn train(args: TrainArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut overrides = Vec::new();
    macro_rules! flag {
        ($field:expr, $key:literal) => {
            if let Some(v) = &$field {
                overrides.push(format!(concat!($key, "={}"), v));
            }
        };
    }
    flag!(args.env_id, "env_id");
    flag!(args.total_steps, "total_steps");
    flag!(args.target_spec, "agent.target_spec");
    flag!(args.gamma, "agent.gamma");
    flag!(args.tau, "agent.tau");
    flag!(args.batch_size, "agent.batch_size");
    flag!(args.actor_lr, "agent.actor_lr");
    flag!(args.critic_lr, "agent.critic_lr");
    flag!(args.exploration_noise_sigma, "agent.exploration_noise_sigma");
    flag!(args.warmup_steps, "agent.warmup_steps");
    flag!(args.update_every, "agent.update_every");
    if let Some(dir) = &args.output_dir {
        overrides.push(format!("output_dir={}", toml_string(&dir.display().to_string())));
    }
    if let Some(seeds) = &args.seed_list {
        let list = seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        overrides.push(format!("seeds=[{list}]"));
    }
    if let Some(sizes) = &args.hidden_sizes {
        let list = sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        overrides.push(format!("agent.hidden_sizes=[{list}]"));
    }
    overrides.extend(args.overrides.iter().cloned());

    let config = load_config(&args.config, &overrides)?;
    let summary = run_experiment(&config)?;
    println!(
        "trained {} on {} ({} seeds, {} steps)",
        summary.target_spec,
        summary.env_id,
        summary.seeds.len(),
        summary.total_steps
    );
    println!(
        "max average return {:.3} +- {:.3} at step {}",
        summary.max_avg_return, summary.max_avg_return_std, summary.max_avg_return_step
    );
    if let Some(bias) = summary.mean_final_bias {
        println!("mean final bias {bias:.3}");
    }
    println!("outputs in {}", config.resolved_output_dir().display());
    Ok(())
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn compare(args: CompareArgs) -> Result<(), Box<dyn std::error::Error>> {
    let metric: CompareMetric = args.metric.parse().map_err(HarnessError::Config)?;
    let table = compare_runs(&args.runs, metric)?;
    print!("{table}");
    if let Some(out) = &args.plot {
        plot::emit_plots(&args.runs, out)?;
        println!("curves written to {}", out.display());
    }
    Ok(())
}

fn find_checkpoint(args: &DiagnoseArgs) -> Result<PathBuf, Box<dyn std::error::Error>> {
    if let Some(seed) = args.seed {
        return Ok(args.run.join(format!("seed_{seed}")).join("checkpoint.bin"));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&args.run)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("seed_"))
                    .unwrap_or(false)
        })
        .collect();
    dirs.sort();
    dirs.first()
        .map(|d| d.join("checkpoint.bin"))
        .ok_or_else(|| format!("no seed_* directories under {}", args.run.display()).into())
}

fn diagnose(args: DiagnoseArgs) -> Result<(), Box<dyn std::error::Error>> {
    let path = find_checkpoint(&args)?;
    let bytes = fs::read(&path)?;
    let (env_id, agent) = load_agent_checkpoint(&mut bytes.as_slice())?;
    println!(
        "checkpoint {} ({} env steps, {} critic updates, spec {})",
        path.display(),
        agent.total_env_steps(),
        agent.critic_updates(),
        agent.config().target_spec
    );
    let mut env = make_env(&env_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.diag_seed);

    // Fresh exploration experience for the probe batches.
    let mut buffer = ReplayBuffer::new(args.steps.max(1));
    let mut journal = StateJournal::new(args.steps.max(1));
    let mut obs = env.reset(Some(args.diag_seed));
    let (mut ep, mut idx) = (0u64, 0u64);
    for _ in 0..args.steps {
        let action = agent.select_action(&obs, true, &mut rng)?;
        let r = env.step(&action)?;
        buffer.push(Transition {
            obs: obs.clone(),
            action,
            reward: r.reward,
            next_obs: r.next_obs.clone(),
            terminal: r.terminal,
            truncated: r.truncated,
            episode_id: ep,
            step_index: idx,
        })?;
        journal.record(ep, idx, env.save_state());
        if r.terminal || r.truncated {
            ep += 1;
            idx = 0;
            obs = env.reset(None);
        } else {
            idx += 1;
            obs = r.next_obs;
        }
    }

    match args.suite.as_str() {
        "gaps" => {
            let samples = buffer.sample_n(agent.config().batch_size, 5, &mut rng)?;
            let report = record_target_gaps(&agent, &samples, 5)?;
            println!("batch-mean 1-step target: {:.4}", report.one_step_mean);
            for (i, gap) in &report.gaps {
                if *i >= 2 {
                    println!("gap(1, {i}): {gap:.6}");
                }
            }
            println!("avg mixture target: {:.4}", report.mix_avg_mean);
            println!("min mixture target: {:.4}", report.mix_min_mean);
        }
        "bias" => {
            let est = estimate_bias(&agent, env.as_ref(), 256, 200, &mut rng)?;
            println!("mean predicted Q: {:.4}", est.mean_predicted_q);
            println!("mean MC return:   {:.4}", est.mean_mc_return);
            println!("bias:             {:.4}", est.bias);
        }
        "online-offline" => {
            let n = agent.config().target_spec.window_len().max(2);
            let samples = buffer.sample_n(agent.config().batch_size, n, &mut rng)?;
            let (offline, online, gap) =
                online_offline_gap(&agent, env.as_ref(), &journal, &samples, n)?;
            println!("offline mean target (n={n}): {offline:.6}");
            println!("online mean target  (n={n}): {online:.6}");
            println!("gap (online - offline):      {gap:.6}");
        }
        other => return Err(format!("unknown suite '{other}'").into()),
    }
    Ok(())
}

fn selftest() -> Result<(), Box<dyn std::error::Error>> {
    let results = run_selftest();
    let mut failures = 0;
    for r in &results {
        match &r.outcome {
            Ok(()) => println!("PASS {}", r.name),
            Err(msg) => {
                failures += 1;
                println!("FAIL {}: {msg}", r.name);
            }
        }
    }
    if failures > 0 {
        Err(format!("{failures} selftest check(s) failed").into())
    } else {
        println!("all {} checks passed", results.len());
        Ok(())
    }
}
