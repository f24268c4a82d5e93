//! Two-stage estimation with a direct UE-BS link: direct paths from the
//! RIS-off block, then RIS paths with the direct link cancelled.

use std::path::Path;

use rischan::harness::{synthesize, trial_inputs, ExperimentConfig, Snr};
use rischan::recon::{rmse_factored, Rank1Sum};
use rischan::sage::Estimator;

fn main() -> rischan::Result<()> {
    let mut cfg = ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/direct_link.json")))?;
    cfg.snr_db = vec![Snr(20.0)];
    let geom = cfg.geometry.build()?;
    let pilot = cfg.pilot.build()?;
    let (scene, plan) = trial_inputs(&cfg, 0)?;
    let (off, on) = synthesize(&cfg, 0, 0)?;
    let off = off.expect("config has direct paths");
    let est = Estimator::new(&geom, &pilot, &plan, &cfg.grid, cfg.estimator)?;
    let r = est.estimate_full(
        &off.compensated(&pilot),
        &on.compensated(&pilot),
        scene.ris_paths.len(),
        scene.direct_paths.len(),
    )?;
    for d in &r.direct_paths {
        println!(
            "direct: tau {:.3} xi {:.3e} theta {:.2} deg |alpha| {:.3}",
            d.delay,
            d.xi,
            d.azimuth.to_degrees(),
            d.gain.norm()
        );
    }
    let bs = rmse_factored(
        &Rank1Sum::direct(&r.direct_scene(), &geom, &pilot, &plan, 0.0)?,
        &Rank1Sum::direct(&scene.direct_paths, &geom, &pilot, &plan, 0.0)?,
    )?;
    let ris = rmse_factored(
        &Rank1Sum::ris(&r.ris_scene(), &geom, &pilot, 0.0)?,
        &Rank1Sum::ris(&scene.ris_paths, &geom, &pilot, 0.0)?,
    )?;
    println!("channel RMSE: BS link {bs:.3e}, RIS link {ris:.3e}");
    Ok(())
}
