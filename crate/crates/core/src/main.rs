use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hxit::bench::{
    compare_runs, emit_table, format_gain, receive, run_experiment, write_receiver_csv, ReceiverMode, ReceiverSetup,
    RunConfig, RunOptions, RunReport, RECEIVER_CSV,
};
use hxit::gateway::Backend;
use hxit::transport::{Endpoint, Reader};

#[derive(Parser)]
#[command(name = "hxit", version, about = "Inline, transit and hybrid analysis experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write timings.csv, report.json and images.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Backend,
        #[arg(long)]
        out: PathBuf,
        /// Receiver placement: in_process or subprocess.
        #[arg(long)]
        receiver: Option<ReceiverMode>,
    },
    /// Gain of report b over baseline report a.
    Compare { report_a: PathBuf, report_b: PathBuf },
    /// Comparison table over two or more reports.
    Table {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
    /// Receive, reduce where needed and render a stream.
    Receive {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Backend,
        #[arg(long)]
        out: PathBuf,
        /// Socket address or file://dir to listen on.
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: Endpoint,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Run {
            config,
            mode,
            out,
            receiver,
        } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let outcome = run_experiment(
                &cfg,
                mode,
                &out,
                &RunOptions {
                    receiver,
                    receiver_exe: None,
                },
            )?;
            println!("{}", outcome.report.describe());
            println!("timings: {}", outcome.csv_path.display());
            println!("report: {}", outcome.report_path.display());
        }
        Cmd::Compare { report_a, report_b } => {
            let a = RunReport::load(&report_a).with_context(|| format!("loading {}", report_a.display()))?;
            let b = RunReport::load(&report_b).with_context(|| format!("loading {}", report_b.display()))?;
            println!("{}", format_gain(compare_runs(&a, &b)?));
        }
        Cmd::Table { reports } => {
            let loaded = reports
                .iter()
                .map(|p| RunReport::load(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", emit_table(&loaded)?);
        }
        Cmd::Receive {
            config,
            mode,
            out,
            listen,
        } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let mut reader = Reader::open(&listen)?;
            let bound = match reader.local_addr() {
                Some(a) => Endpoint::Socket(a.to_string()),
                None => listen,
            };
            let mut stdout = std::io::stdout();
            writeln!(stdout, "listening {bound}")?;
            stdout.flush()?;
            let setup = ReceiverSetup {
                backend: mode,
                config: cfg,
                out_dir: out.clone(),
            };
            let steps = receive(&mut reader, &setup)?;
            write_receiver_csv(&out.join(RECEIVER_CSV), &steps)?;
        }
    }
    Ok(())
}
