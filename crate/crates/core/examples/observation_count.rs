//! Channel RMSE of the four-path scene as the number of RIS phase
//! configurations K grows.

use std::path::Path;

use rischan::harness::{run_experiment, ExperimentConfig};

fn main() -> rischan::Result<()> {
    let base = ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/four_path.json")))?;
    let trials: usize = std::env::args().nth(1).map_or(Ok(10), |s| s.parse()).expect("trial count");
    println!("{:>3} {:>12} {:>12}", "K", "median", "mean");
    for k in [2, 3, 4, 6] {
        let mut cfg = base.clone();
        cfg.plan.k = k;
        cfg.trials = trials;
        let snr = cfg.snr_db[0].0;
        let res = run_experiment(&cfg)?;
        let mut v = res.per_trial(snr, "chan_ris", None);
        v.sort_by(f64::total_cmp);
        let mean = res.mean(snr, "chan_ris", None).unwrap_or(f64::NAN);
        println!("{k:>3} {:>12.3e} {mean:>12.3e}", v[v.len() / 2]);
    }
    Ok(())
}
