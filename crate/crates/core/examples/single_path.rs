//! One RIS path at the paper's single-path setting: estimate at several
//! SNRs and compare the errors with the Cramér-Rao bound.

use std::path::Path;

use rischan::crb::fim;
use rischan::harness::{synthesize, trial_inputs, ExperimentConfig, Snr};
use rischan::sage::Estimator;

fn main() -> rischan::Result<()> {
    let mut cfg = ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/single_path.json")))?;
    cfg.snr_db = vec![Snr(0.0), Snr(10.0), Snr(20.0), Snr(30.0)];
    let geom = cfg.geometry.build()?;
    let pilot = cfg.pilot.build()?;
    let (scene, plan) = trial_inputs(&cfg, 0)?;
    let truth = scene.ris_paths[0];
    let est = Estimator::new(&geom, &pilot, &plan, &cfg.grid, cfg.estimator)?;
    println!("truth: {truth:?}");
    println!("{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}", "snr", "d_tau", "crb_tau", "d_theta", "crb_theta", "|d_beta|");
    for (i, snr) in cfg.snr_db.iter().enumerate() {
        let (_, on) = synthesize(&cfg, i, 0)?;
        let e = est.single_ris(&on.compensated(&pilot))?;
        let b = &fim(&scene.ris_paths, &plan, &geom, &pilot, on.noise_var)?.bounds[0];
        println!(
            "{:>5} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
            snr.to_string(),
            (e.delay - truth.delay).abs(),
            b.tau.sqrt(),
            (e.azimuth - truth.azimuth).abs(),
            b.theta.sqrt(),
            (e.gain - truth.gain).norm()
        );
    }
    Ok(())
}
