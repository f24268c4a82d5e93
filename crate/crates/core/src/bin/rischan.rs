use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rischan::harness::{run_crb, run_experiment, synthesize, with_threads, write_outputs, ExperimentConfig};
use rischan::synth::PilotModel;

#[derive(Parser)]
#[command(name = "rischan", version, about = "RIS channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write CSV plus JSON metadata.
    Run(Common),
    /// Compute Cramér-Rao bounds only.
    Crb(Common),
    /// Write the received block(s) of one trial as binary dumps.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Index into the config's SNR list.
        #[arg(long, default_value_t = 0)]
        snr_index: usize,
    },
    /// Check a configuration and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = ["ideal", "shaped"])]
    pilot_model: Option<String>,
}

impl Common {
    fn load(&self) -> rischan::Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.pilot_model {
            cfg.pilot_model = m.parse::<PilotModel>().map_err(rischan::Error::Config)?;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        cfg.validate()?;
        let out = cfg.output.clone();
        Ok((cfg, out))
    }
}

fn dump(path: &Path, block: &rischan::synth::ReceivedBlock) -> rischan::Result<()> {
    block.write_dump(BufWriter::new(File::create(path)?))?;
    println!("wrote {} ({} x {})", path.display(), block.y.nrows(), block.y.ncols());
    Ok(())
}

fn run(cli: Cli) -> rischan::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            let res = with_threads(c.threads, || run_experiment(&cfg))??;
            let (csv, json) = write_outputs(&out, &cfg, &res)?;
            for r in res.rows.iter().filter(|r| r.trial.is_none()) {
                let off = r.offset.map_or(String::new(), |o| format!(" @{o}"));
                println!("snr {:>5}  {:<16}{:<5} {:.4e}", r.snr_db.to_string(), r.metric, off, r.value);
            }
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Crb(c) => {
            let (mut cfg, out) = c.load()?;
            cfg.name = format!("{}_crb", cfg.name);
            let res = with_threads(c.threads, || run_crb(&cfg))??;
            let (csv, json) = write_outputs(&out, &cfg, &res)?;
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Command::Synth {
            common,
            trial,
            snr_index,
        } => {
            let (cfg, out) = common.load()?;
            std::fs::create_dir_all(&out)?;
            let (off, on) = synthesize(&cfg, snr_index, trial)?;
            if let Some(off) = off {
                dump(&out.join(format!("{}_t{trial}_off.risy", cfg.name)), &off)?;
            }
            dump(&out.join(format!("{}_t{trial}_on.risy", cfg.name)), &on)?;
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let issues = cfg.issues();
            if !issues.is_empty() {
                for i in &issues {
                    eprintln!("{i}");
                }
                return Err(rischan::Error::Config(format!("{} problem(s) found", issues.len())));
            }
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
