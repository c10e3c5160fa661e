use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use safe_marl::solver::{DenseLqclp, SolverConfig};
use safe_marl::trainers::{evaluate, Trainer};
use safe_marl::verify::{verify, Fault, Suite, VerifyConfig};
use safe_marl_cli::config::{load_training_config, strip_comments};
use safe_marl_cli::plot::plot_logs;
use safe_marl_cli::run::{default_run_dir, read_checkpoint, read_manifest, train};
use safe_marl_cli::OUT_ROOT_VAR;

#[derive(Parser)]
#[command(name = "safe-marl", version, about = "Safe multi-agent RL: training, evaluation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run, or several seeds in parallel processes.
    Train {
        /// JSON training config (`//` comments allowed).
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// Replay the config snapshot of an earlier run.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated seeds; each gets `<out>/seed<k>`.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Vec<u64>,
        /// Run directory (the parent directory with --seeds).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for default run directories.
        #[arg(long, env = OUT_ROOT_VAR, default_value = "runs")]
        out_root: PathBuf,
        /// Concurrent processes with --seeds.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint with deterministic (mean or most likely) actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample actions instead of acting deterministically.
        #[arg(long)]
        stochastic: bool,
        /// Also write the summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suites; exits 1 when any property fails.
    Verify {
        /// Suites to run (default: all).
        #[arg(long = "suite")]
        suites: Vec<Suite>,
        /// JSON instance counts (fields of the verify config).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Inject a known defect (negative control).
        #[arg(long)]
        fault: Option<Fault>,
        /// Directory for report.json and counterexample files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot one or more logs sharing a schema, one SVG per metric.
    Plot {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated series labels (default: run directory names).
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Bound line for cost charts (default: from the run manifest).
        #[arg(long)]
        bound: Option<f64>,
    },
    /// Solve a dense LQCLP instance given as JSON (`-` for stdin).
    SolveLqclp {
        problem: PathBuf,
        /// Solve several constraints jointly.
        #[arg(long)]
        multi_constraint: bool,
    },
}

fn cmd_train(
    config: Option<PathBuf>,
    manifest: Option<PathBuf>,
    seed: Option<u64>,
    seeds: Vec<u64>,
    out: Option<PathBuf>,
    out_root: PathBuf,
    jobs: usize,
) -> Result<()> {
    let mut cfg = match (&config, &manifest) {
        (Some(path), _) => load_training_config(path)?,
        (None, Some(path)) => read_manifest(path)?.config,
        (None, None) => bail!("either --config or --manifest is required"),
    };
    if !seeds.is_empty() {
        let parent = out.unwrap_or_else(|| out_root.join(format!("{}_{}", cfg.algorithm, safe_marl_cli::config::env_id(&cfg))));
        return fan_out(config.as_deref(), manifest.as_deref(), &seeds, &parent, jobs);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.unwrap_or_else(|| default_run_dir(&out_root, &cfg));
    let status = train(cfg, &dir)?;
    println!(
        "{}",
        json!({ "run": dir, "iterations": status.iterations_completed, "seconds": status.seconds })
    );
    Ok(())
}

/// One child process per seed, at most `jobs` at a time; no state is shared.
fn fan_out(config: Option<&Path>, manifest: Option<&Path>, seeds: &[u64], parent: &Path, jobs: usize) -> Result<()> {
    let exe = std::env::current_exe()?;
    let mut queue: VecDeque<u64> = seeds.iter().copied().collect();
    let mut running = Vec::new();
    let mut failed = Vec::new();
    while !queue.is_empty() || !running.is_empty() {
        while running.len() < jobs.max(1) {
            let Some(seed) = queue.pop_front() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("train");
            match (config, manifest) {
                (Some(c), _) => cmd.arg("--config").arg(c),
                (None, Some(m)) => cmd.arg("--manifest").arg(m),
                (None, None) => unreachable!("checked by the caller"),
            };
            cmd.arg("--seed").arg(seed.to_string()).arg("--out").arg(parent.join(format!("seed{seed}")));
            running.push((seed, cmd.spawn().context("spawning training process")?));
        }
        let (seed, mut child) = running.remove(0);
        if !child.wait()?.success() {
            failed.push(seed);
        }
    }
    if !failed.is_empty() {
        bail!("runs failed for seeds {failed:?}");
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, episodes: Option<usize>, seed: u64, stochastic: bool, out: Option<PathBuf>) -> Result<()> {
    let trainer = Trainer::from_checkpoint(read_checkpoint(checkpoint)?)?;
    let cfg = trainer.config();
    let episodes = episodes.unwrap_or(cfg.eval_episodes);
    let eval_seed = safe_marl::rng::derive_seed(seed, "cli_eval", 0);
    let state = trainer.state();
    let result = evaluate(trainer.env(), &state.policies, state.norms.as_ref(), episodes, cfg.gamma, eval_seed, !stochastic)?;
    let bounds: Vec<Vec<Option<f64>>> =
        trainer.bounds().iter().map(|r| r.iter().map(|c| c.is_finite().then_some(*c)).collect()).collect();
    let report = json!({
        "checkpoint": checkpoint,
        "iteration": state.iteration,
        "seed": seed,
        "deterministic": !stochastic,
        "summary": result.summary,
        "bounds": bounds,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = out {
        std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_verify(suites: Vec<Suite>, config: Option<PathBuf>, seed: Option<u64>, fault: Option<Fault>, out: Option<PathBuf>) -> Result<bool> {
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<VerifyConfig>(&strip_comments(&text)).with_context(|| format!("parsing {}", path.display()))?
        }
        None => VerifyConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if fault.is_some() {
        cfg.fault = fault;
    }
    let report = verify(&suites, &cfg)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.json"), &text)?;
        for suite in &report.suites {
            if let Some(example) = &suite.counterexample {
                let path = dir.join(format!("counterexample_{}.json", suite.suite));
                std::fs::write(&path, serde_json::to_string_pretty(example)?)?;
                eprintln!("{}: counterexample written to {}", suite.suite, path.display());
            }
        }
    }
    println!("{text}");
    for suite in &report.suites {
        eprintln!(
            "{:<20} {} ({}/{} instances failed, {:.2} s)",
            suite.suite.as_str(),
            if suite.passed() { "pass" } else { "FAIL" },
            suite.failed_instances,
            suite.instances,
            suite.seconds
        );
    }
    Ok(report.passed())
}

fn cmd_solve(problem: &Path, multi_constraint: bool) -> Result<()> {
    let text = if problem == Path::new("-") {
        std::io::read_to_string(std::io::stdin())?
    } else {
        std::fs::read_to_string(problem).with_context(|| format!("reading {}", problem.display()))?
    };
    let dense: DenseLqclp = serde_json::from_str(&strip_comments(&text)).context("parsing problem")?;
    let config = SolverConfig {
        multi_constraint,
        ..SolverConfig::default()
    };
    let solution = dense.solve(&config)?;
    println!("{}", serde_json::to_string_pretty(&solution)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Cmd::Train {
            config,
            manifest,
            seed,
            seeds,
            out,
            out_root,
            jobs,
        } => cmd_train(config, manifest, seed, seeds, out, out_root, jobs).map(|_| true),
        Cmd::Eval {
            checkpoint,
            episodes,
            seed,
            stochastic,
            out,
        } => cmd_eval(&checkpoint, episodes, seed, stochastic, out).map(|_| true),
        Cmd::Verify {
            suites,
            config,
            seed,
            fault,
            out,
        } => cmd_verify(suites, config, seed, fault, out),
        Cmd::Plot { logs, out, labels, bound } => plot_logs(&logs, &labels, bound, &out).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            true
        }),
        Cmd::SolveLqclp { problem, multi_constraint } => cmd_solve(&problem, multi_constraint).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
