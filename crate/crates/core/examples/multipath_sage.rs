//! Six RIS paths recovered by SAGE at 20 dB.

use std::path::Path;

use rischan::harness::{synthesize, trial_inputs, ExperimentConfig, Snr};
use rischan::sage::{match_paths, Estimator};

fn main() -> rischan::Result<()> {
    let mut cfg = ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/six_path.json")))?;
    cfg.snr_db = vec![Snr(20.0)];
    let geom = cfg.geometry.build()?;
    let pilot = cfg.pilot.build()?;
    let (scene, plan) = trial_inputs(&cfg, 0)?;
    let (_, on) = synthesize(&cfg, 0, 0)?;
    let est = Estimator::new(&geom, &pilot, &plan, &cfg.grid, cfg.estimator)?;
    let report = est.sage_ris(&on.compensated(&pilot), scene.ris_paths.len(), None)?;
    println!("cycles {} converged {} residual {:.3e}", report.cycles, report.converged, report.residual_norm);

    let found = report.ris_scene();
    println!("{:>7} {:>8} {:>11} {:>11} {:>8} {:>8}", "tau", "tau^", "xi", "xi^", "theta^", "phi^");
    for (t, m) in scene.ris_paths.iter().zip(match_paths(&found, &scene.ris_paths)) {
        let e = found[m.expect("as many estimates as paths")];
        println!(
            "{:>7.3} {:>8.3} {:>11.3e} {:>11.3e} {:>8.2} {:>8.2}",
            t.delay,
            e.delay,
            t.doppler,
            e.doppler,
            e.azimuth.to_degrees(),
            e.elevation.to_degrees()
        );
    }
    Ok(())
}
