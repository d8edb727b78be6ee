use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use planwatch::config::SimConfig;
use planwatch::harness::{read_csv, run_experiment, summarize, write_csv, ExperimentConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "planwatch", version, about = "Closed-loop plan monitoring experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment grid and write results.csv (and traces) to --out.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        grid: String,
        /// Comma-separated policy labels; default depends on the task family.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        episodes: Option<u32>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write one trace file per episode.
        #[arg(long)]
        traces: bool,
    },
    /// Re-simulate a trace file and report the first divergence.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit timing and exposure knobs to the nominal results and print the config.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the result table of a results CSV.
    Summarize {
        #[arg(long)]
        csv: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().cmd {
        Cmd::Run { config, grid, policies, seeds, episodes, out, workers, traces } => {
            let sim = load_config(&config)?;
            let mut exp = ExperimentConfig::named(&grid, sim)?;
            exp.policies = policies;
            if let Some(s) = seeds {
                exp.seeds = s;
            }
            if let Some(e) = episodes {
                exp.episodes_per_seed = e;
            }
            exp.workers = workers;
            exp.keep_traces = traces;
            let results = run_experiment(&exp)?;
            std::fs::create_dir_all(&out)?;
            let csv = out.join("results.csv");
            write_csv(&results.cells, &csv)?;
            if traces {
                let dir = out.join("traces");
                std::fs::create_dir_all(&dir)?;
                for cell in &results.traces {
                    for t in cell {
                        let name = planwatch::trace::file_name(t);
                        std::fs::write(dir.join(name), planwatch::trace::format_trace(t))?;
                    }
                }
            }
            print!("{}", summarize(&results.cells));
            tracing::info!(path = %csv.display(), "wrote results");
        }
        Cmd::Replay { trace, config } => {
            let cfg = config.as_ref().map(|p| SimConfig::load(p)).transpose()?;
            let text = std::fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let report = planwatch::trace::replay_text(&text, cfg.as_ref())?;
            println!("{report}");
            if !report.is_identical() {
                bail!("replay diverged");
            }
        }
        Cmd::Calibrate { config } => {
            let fit = planwatch::calibrate::calibrate(&load_config(&config)?)?;
            eprint!("{}", fit.report());
            print!("{}", fit.config.to_toml_string());
        }
        Cmd::Summarize { csv } => {
            print!("{}", summarize(&read_csv(&csv)?));
        }
    }
    Ok(())
}
