use std::path::PathBuf;

use anyhow::bail;
use clap::{Parser, Subcommand};

use libra_balance_cli::commands;
use libra_balance_cli::config::{Overrides, RunConfig};

/// Balanced-sampling, loss-curve, and feature-pyramid experiments on
/// synthetic detection scenarios.
#[derive(Parser)]
#[command(name = "libra-balance", version, about)]
struct Cli {
    /// JSON config file; command-line flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base seed (falls back to LIBRA_BALANCE_SEED, then 42)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Monte-Carlo trial count
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Scenario JSON (ground_truths/candidates corner arrays) to use
    /// instead of the generator
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,

    /// Output CSV path (summaries go to a sibling .json)
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Balanced L1 alpha
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Balanced L1 gamma
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Number of IoU bins
    #[arg(long, global = true)]
    bins: Option<usize>,

    /// Negatives to draw per scenario
    #[arg(long = "neg-count", global = true)]
    neg_count: Option<usize>,

    /// Positives to draw per scenario
    #[arg(long = "pos-count", global = true)]
    pos_count: Option<usize>,

    /// Non-local refinement in the pyramid
    #[arg(long, global = true, value_parser = ["on", "off"])]
    refine: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sampled-IoU histogram: random vs IoU-balanced over seeded scenarios
    SampleHist,
    /// Smooth and balanced L1 loss/gradient curves over x in [0, 2]
    LossCurves,
    /// Finite-difference verification of every gradient rule
    Gradcheck,
    /// Per-level mean/variance before vs after pyramid balancing
    PyramidStats,
    /// Gradient-descent offset fitting with injected outliers
    ToyFit,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_overrides(&Overrides {
        seed: cli.seed,
        trials: cli.trials,
        scenario_file: cli.scenario,
        alpha: cli.alpha,
        gamma: cli.gamma,
        bins: cli.bins,
        neg_count: cli.neg_count,
        pos_count: cli.pos_count,
        refine: cli.refine.as_deref().map(|v| v == "on"),
    });

    let out_or = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));

    match cli.command {
        Command::SampleHist => {
            let out = out_or("sample_hist.csv");
            let summary = commands::cmd_sample_hist(&cfg, &out)?;
            println!(
                "sample-hist: {} trials, hard fraction pool {:.4} / random {:.4} / balanced {:.4}",
                summary.trials,
                summary.pool_hard_fraction,
                summary.random_hard_fraction,
                summary.balanced_hard_fraction
            );
            println!("wrote {} and {}", out.display(), out.with_extension("json").display());
        }
        Command::LossCurves => {
            let out = out_or("loss_curves.csv");
            for path in commands::cmd_loss_curves(&cfg, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Gradcheck => {
            let out = out_or("gradcheck.csv");
            let report = commands::cmd_gradcheck(&cfg, &out)?;
            for r in &report.rows {
                println!(
                    "{:<20} max_rel_err {:>10.3e}  tol {:.0e}  {}",
                    r.op,
                    r.max_rel_err,
                    r.tolerance,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            println!("wrote {}", out.display());
            if !report.all_passed {
                bail!("gradient checks failed");
            }
        }
        Command::PyramidStats => {
            let out = out_or("pyramid_stats.csv");
            commands::cmd_pyramid_stats(&cfg, &out)?;
            println!("wrote {}", out.display());
        }
        Command::ToyFit => {
            let out = out_or("toy_fit.csv");
            let summary = commands::cmd_toy_fit(&cfg, &out)?;
            println!(
                "toy-fit: final mean inlier error smooth {:.6e} vs balanced {:.6e}",
                summary.final_smooth_inlier_error, summary.final_balanced_inlier_error
            );
            println!(
                "initial inlier gradient share: smooth {:.3} vs balanced {:.3}",
                summary.initial_inlier_gradient_share_smooth,
                summary.initial_inlier_gradient_share_balanced
            );
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
