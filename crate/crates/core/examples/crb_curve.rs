//! Square-root CRB of every parameter of the single-path scene versus SNR.

use std::path::Path;

use rischan::crb::{fim, PARAM_NAMES};
use rischan::harness::{trial_inputs, ExperimentConfig};
use rischan::synth::{mean_power, noise_variance, noiseless, Stage};

fn main() -> rischan::Result<()> {
    let cfg = ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/single_path.json")))?;
    let geom = cfg.geometry.build()?;
    let pilot = cfg.pilot.build()?;
    let (scene, plan) = trial_inputs(&cfg, 0)?;
    let power = mean_power(&noiseless(&scene, &plan, &geom, &pilot, cfg.pilot_model, Stage::RisOn)?);

    print!("{:>5}", "snr");
    for name in PARAM_NAMES {
        print!(" {name:>10}");
    }
    println!();
    for snr in (-10..=30).step_by(5) {
        let report = fim(&scene.ris_paths, &plan, &geom, &pilot, noise_variance(power, snr as f64))?;
        print!("{snr:>5}");
        for v in report.bounds[0].as_array() {
            print!(" {:>10.3e}", v.sqrt());
        }
        println!();
    }
    Ok(())
}
