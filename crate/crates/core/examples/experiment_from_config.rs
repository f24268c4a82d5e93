//! Runs an experiment described by a JSON config and writes its CSV and
//! metadata, like `rischan run`.
//!
//! cargo run --release --example experiment_from_config -- configs/smoke.json out

use std::path::PathBuf;

use rischan::harness::{run_experiment, write_outputs, ExperimentConfig};

fn main() -> rischan::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json")));
    let cfg = ExperimentConfig::load(&path)?;
    cfg.validate()?;
    let out = args.next().map_or_else(|| cfg.output.clone(), PathBuf::from);
    let res = run_experiment(&cfg)?;
    let (csv, json) = write_outputs(&out, &cfg, &res)?;
    println!("{} rows, {} non-converged trials", res.rows.len(), res.nonconverged);
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}
