use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lorafl::experiment::{
    cmd_centralized, cmd_cost, cmd_federate, cmd_plot, cmd_prepare, MetricsRow, Precision, RunConfig,
};

#[derive(Parser)]
#[command(name = "lorafl", version, about = "Federated low-rank Siamese head experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, value_enum, global = true)]
    precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Extract features and write per-fold shards and pairs.
    Prepare,
    /// Federated rank sweep over all folds.
    Federate,
    /// Pooled-data baseline over all folds.
    Centralized,
    /// Parameter, bandwidth and FLOP report per rank.
    Cost,
    /// Redraw SVG charts from existing CSVs.
    Plot,
}

fn load_config(c: &Common) -> lorafl::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    if let Some(p) = c.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    Ok(cfg)
}

fn summarize(rows: &[MetricsRow]) {
    let last = rows.iter().map(|r| r.round).max().unwrap_or(0);
    let mut ranks: Vec<&str> = Vec::new();
    for r in rows {
        if !ranks.contains(&r.k_or_dense.as_str()) {
            ranks.push(&r.k_or_dense);
        }
    }
    for k in ranks {
        let accs: Vec<f64> = rows
            .iter()
            .filter(|r| r.k_or_dense == k && r.round == last)
            .map(|r| r.test_acc)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("k={k:>5}  final accuracy (mean over {} folds) {mean:.4}", accs.len());
    }
}

fn run(cli: Cli) -> lorafl::Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Prepare => {
            let manifest = cmd_prepare(&cfg)?;
            println!("wrote {}", manifest.display());
        }
        Command::Federate => summarize(&cmd_federate(&cfg)?),
        Command::Centralized => summarize(&cmd_centralized(&cfg)?),
        Command::Cost => {
            for r in cmd_cost(&cfg)? {
                println!(
                    "{:>5}  params {:>9}  bytes/run {:>12}  flops/run {:>16}  bytes vs dense {:.2}x",
                    r.rank.to_string(),
                    r.params,
                    r.run_bytes,
                    r.flops_per_run,
                    r.bytes_ratio_vs_dense
                );
            }
        }
        Command::Plot => {
            for p in cmd_plot(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
