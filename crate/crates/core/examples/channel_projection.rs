//! Projecting the estimated channel forward with the estimated Doppler
//! versus reusing the stale estimate.

use std::path::Path;

use rischan::harness::{synthesize, trial_inputs, ExperimentConfig, Snr};
use rischan::recon::{projection_time, reconstruct_ris, rmse, to_frequency};
use rischan::sage::Estimator;

fn main() -> rischan::Result<()> {
    let mut cfg = ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/six_path.json")))?;
    cfg.snr_db = vec![Snr(20.0)];
    let geom = cfg.geometry.build()?;
    let pilot = cfg.pilot.build()?;
    let (scene, plan) = trial_inputs(&cfg, 0)?;
    let (_, on) = synthesize(&cfg, 0, 0)?;
    let est = Estimator::new(&geom, &pilot, &plan, &cfg.grid, cfg.estimator)?;
    let paths = est.sage_ris(&on.compensated(&pilot), scene.ris_paths.len(), None)?.ris_scene();

    let stale = to_frequency(&reconstruct_ris(&paths, &geom, &pilot, 0.0)?);
    println!("{:>8} {:>12} {:>12}", "symbols", "projected", "stale");
    for j in [0, 10, 20, 40, 80, 160] {
        let t = projection_time(&plan, &pilot, j);
        let truth = to_frequency(&reconstruct_ris(&scene.ris_paths, &geom, &pilot, t)?);
        let proj = to_frequency(&reconstruct_ris(&paths, &geom, &pilot, t)?);
        println!("{j:>8} {:>12.3e} {:>12.3e}", rmse(&proj, &truth)?, rmse(&stale, &truth)?);
    }
    Ok(())
}
