use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vaguecrs::catalog::{generate_synthetic, load_catalog};
use vaguecrs::embeddings::pretrain_translational;
use vaguecrs::harness::baselines::{GreedyAgent, MaxEntropy, UniformRandom};
use vaguecrs::harness::config::CatalogSource;
use vaguecrs::harness::experiments::{run_ablation, run_sweep, standard_variants, SweepAxis, TEST_SEED};
use vaguecrs::harness::runner::{evaluate_policy, train, write_csv, write_jsonl, World};
use vaguecrs::harness::{ExperimentConfig, Metrics};
use vaguecrs::policy::Agent;
use vaguecrs::simulator::Mode;
use vaguecrs::{Catalog, UserId};
use vaguecrs_service::{Engine, Settings};

#[derive(Parser)]
#[command(name = "vaguecrs", about = "Conversational recommendation with vague preferences")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the desk-scale preset instead of the full defaults.
    #[arg(long, global = true)]
    desk: bool,
    /// Config override, repeatable: `--set episodes=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic catalog as TSV files.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain translational embeddings and save the table.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent per seed; writes checkpoints, logs and test metrics.
    Train {
        /// Keep the replay buffer in checkpoints so training can resume.
        #[arg(long)]
        with_replay: bool,
    },
    /// Evaluate a policy on a held-out split.
    Evaluate {
        #[arg(long, value_enum, default_value = "agent")]
        policy: PolicyKind,
        /// Agent checkpoint; required for `--policy agent`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Rollout seed; defaults to the test offset plus the first config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and test every estimator variant in both modes.
    Ablate,
    /// Train and test along one estimator or session axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Values of the axis; for `lambdas`, the click weights.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Non-click weights for `lambdas`.
        #[arg(long, value_delimiter = ',')]
        noclick: Vec<f64>,
    },
    /// Serve live sessions over HTTP.
    Serve {
        /// Directory of `*.json` agent checkpoints.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Catalog user whose embedding stands in for the human.
        #[arg(long, default_value_t = 0)]
        user: u32,
        /// Idle minutes before a session expires.
        #[arg(long, default_value_t = 30)]
        ttl_minutes: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Agent,
    MaxEntropy,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Decay,
    VagueRatio,
    Lambdas,
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    label: &'a str,
    episodes: usize,
    sr: f64,
    at: f64,
    hdcg: f64,
    target_filtered: f64,
}

impl<'a> MetricsRow<'a> {
    fn new(label: &'a str, m: &Metrics) -> Self {
        MetricsRow {
            label,
            episodes: m.episodes,
            sr: m.sr,
            at: m.at,
            hdcg: m.hdcg,
            target_filtered: m.target_filtered,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    if cli.config.is_some() && cli.desk {
        bail!("--desk and --config are exclusive");
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None if cli.desk => ExperimentConfig::desk(),
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn build_catalog(cfg: &ExperimentConfig) -> Result<Catalog> {
    Ok(match &cfg.catalog {
        CatalogSource::Synthetic(spec) => generate_synthetic(spec)?,
        CatalogSource::Directory(dir) => load_catalog(dir)?,
    })
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.to_text()).context("writing config.txt")?;
    Ok(dir)
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label}: SR {:.4} AT {:.3} hDCG {:.4} ({} episodes)",
        m.sr, m.at, m.hdcg, m.episodes
    );
}

fn cmd_train(cfg: &ExperimentConfig, with_replay: bool) -> Result<()> {
    let world = World::<f32>::build(cfg)?;
    let dir = output_dir(cfg)?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    let mut summary = Vec::new();
    let mut labels = Vec::new();
    for seed in &cfg.seeds {
        let (agent, log) = train(cfg, &world, *seed)?;
        agent.save(dir.join("checkpoints").join(format!("seed{seed}.json")), with_replay)?;
        write_csv(dir.join(format!("train_seed{seed}_episodes.csv")), &log.episodes)?;
        write_csv(dir.join(format!("train_seed{seed}_evals.csv")), &log.evals)?;
        let mut policy = GreedyAgent::new(&agent, &world.know);
        let (m, records) = evaluate_policy(
            &mut policy,
            world.catalog(),
            &world.split.test,
            cfg.test_episodes,
            &cfg.session_config(),
            cfg.top_n,
            TEST_SEED + seed,
        )?;
        write_jsonl(dir.join(format!("test_seed{seed}.jsonl")), &records)?;
        print_metrics(&format!("seed {seed} test"), &m);
        labels.push(format!("seed{seed}"));
        summary.push(m);
    }
    let rows: Vec<MetricsRow> = labels.iter().zip(&summary).map(|(l, m)| MetricsRow::new(l, m)).collect();
    write_csv(dir.join("train_summary.csv"), &rows)?;
    Ok(())
}

fn cmd_evaluate(
    cfg: &ExperimentConfig,
    kind: PolicyKind,
    checkpoint: Option<&Path>,
    split: Split,
    seed: Option<u64>,
) -> Result<()> {
    let world = World::<f32>::build(cfg)?;
    let pairs = match split {
        Split::Valid => &world.split.valid,
        Split::Test => &world.split.test,
    };
    let seed = seed.unwrap_or(TEST_SEED + cfg.seeds[0]);
    let session = cfg.session_config();
    let episodes = cfg.test_episodes;
    let (label, (m, records)) = match kind {
        PolicyKind::Agent => {
            let path = checkpoint.context("--checkpoint is required for the agent policy")?;
            let agent: Agent<f32> = Agent::load(path)?;
            let mut p = GreedyAgent::new(&agent, &world.know);
            ("agent", evaluate_policy(&mut p, world.catalog(), pairs, episodes, &session, cfg.top_n, seed)?)
        }
        PolicyKind::MaxEntropy => {
            let mut p = MaxEntropy {
                n: cfg.top_n,
                k: cfg.ask_k,
            };
            let out = evaluate_policy(&mut p, world.catalog(), pairs, episodes, &session, cfg.top_n, seed)?;
            ("max_entropy", out)
        }
        PolicyKind::Random => {
            let mut p = UniformRandom {
                n: cfg.top_n,
                k: cfg.ask_k,
            };
            ("random", evaluate_policy(&mut p, world.catalog(), pairs, episodes, &session, cfg.top_n, seed)?)
        }
    };
    let dir = output_dir(cfg)?;
    write_csv(dir.join(format!("eval_{label}.csv")), &[MetricsRow::new(label, &m)])?;
    write_jsonl(dir.join(format!("eval_{label}.jsonl")), &records)?;
    print_metrics(label, &m);
    Ok(())
}

fn sweep_axis(axis: Axis, values: &[f64], noclick: &[f64]) -> SweepAxis {
    let or = |v: &[f64], d: &[f64]| if v.is_empty() { d.to_vec() } else { v.to_vec() };
    match axis {
        Axis::Decay => SweepAxis::Decay(or(values, &[0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0])),
        Axis::VagueRatio => SweepAxis::VagueRatio(or(values, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])),
        Axis::Lambdas => SweepAxis::Lambdas(or(values, &[0.01, 0.1, 1.0]), or(noclick, &[0.001, 0.01, 0.1])),
    }
}

async fn cmd_serve(cfg: &ExperimentConfig, dir: &Path, addr: SocketAddr, user: u32, ttl_minutes: u64) -> Result<()> {
    let world = World::<f32>::build(cfg)?;
    let settings = Settings {
        max_turns: cfg.max_turns,
        user: UserId(user),
        ttl: std::time::Duration::from_secs(ttl_minutes * 60),
        seed: cfg.seeds[0],
        ..Settings::default()
    };
    let engine = Engine::load_dir(world.know, dir, settings)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on {}", listener.local_addr()?);
    vaguecrs_service::serve(listener, Arc::new(engine)).await?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate { out } => {
            let catalog = build_catalog(&cfg)?;
            catalog.dump(out)?;
            println!(
                "wrote {} users, {} items, {} attributes to {}",
                catalog.n_users(),
                catalog.n_items(),
                catalog.n_attributes(),
                out.display()
            );
        }
        Command::Pretrain { out } => {
            let catalog = build_catalog(&cfg)?;
            let outcome = pretrain_translational::<f32>(&catalog, &cfg.pretrain)?;
            outcome.table.save(out)?;
            let first = outcome.loss_curve.first().copied().unwrap_or(f64::NAN);
            let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("margin loss {first:.4} -> {last:.4}; wrote {}", out.display());
        }
        Command::Train { with_replay } => cmd_train(&cfg, *with_replay)?,
        Command::Evaluate {
            policy,
            checkpoint,
            split,
            seed,
        } => cmd_evaluate(&cfg, *policy, checkpoint.as_deref(), *split, *seed)?,
        Command::Ablate => {
            let world = World::<f32>::build(&cfg)?;
            let rows = run_ablation(&cfg, &world, &standard_variants(), &[Mode::Vpmcr, Mode::Mimcr])?;
            let dir = output_dir(&cfg)?;
            write_csv(dir.join("ablation.csv"), &rows)?;
            for r in &rows {
                println!("{} {:?}: SR {:.4} AT {:.3} hDCG {:.4}", r.variant, r.mode, r.sr, r.at, r.hdcg);
            }
        }
        Command::Sweep { axis, values, noclick } => {
            let world = World::<f32>::build(&cfg)?;
            let rows = run_sweep(&cfg, &world, &sweep_axis(*axis, values, noclick))?;
            let name = axis.to_possible_value().expect("named axis").get_name().to_string();
            let dir = output_dir(&cfg)?;
            write_csv(dir.join(format!("sweep_{name}.csv")), &rows)?;
            for r in &rows {
                println!("{}: SR {:.4} AT {:.3} hDCG {:.4}", r.variant, r.sr, r.at, r.hdcg);
            }
        }
        Command::Serve {
            checkpoints,
            addr,
            user,
            ttl_minutes,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cmd_serve(&cfg, checkpoints, *addr, *user, *ttl_minutes))?;
        }
    }
    Ok(())
}
