//! The delay-Doppler ambiguity of a ZC chirp: a fractional delay looks like
//! a Doppler shift of `-tau / L~` times a constant phase.

use std::f64::consts::PI;

use num_complex::Complex64;
use rischan::pilot::{chirp_window, doppler_window, ZcPilot};

fn main() -> rischan::Result<()> {
    let pilot = ZcPilot::new(1024, 64, 600, 0.3)?;
    let l = pilot.zc_len as f64;
    let x0 = chirp_window(pilot.zc_len, pilot.window, 0.0);
    println!("{:>6} {:>12} {:>14}", "tau", "zeta", "max |error|");
    for tau in [0.0, 0.5, 1.1, 2.6, 6.4] {
        let xt = chirp_window(pilot.zc_len, pilot.window, tau);
        let d = doppler_window(pilot.window, -tau / l);
        let c = Complex64::from_polar(1.0, PI * tau * tau / l);
        let err = xt
            .iter()
            .zip(&x0)
            .zip(&d)
            .map(|((a, b), dn)| (a - c * b * dn).norm())
            .fold(0.0, f64::max);
        println!("{tau:>6.2} {:>12.4e} {err:>14.2e}", -tau / l);
    }
    Ok(())
}
