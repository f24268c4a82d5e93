//! Small fixtures shared by unit tests.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coarse::GridSpec;
use crate::geometry::{ArrayGeometry, Angle2D};
use crate::pilot::{doppler_window, ZcPilot};
use crate::scene::{generate_g, random_phases, GModel, ObservationPlan};

pub(crate) struct Small {
    pub geom: ArrayGeometry,
    pub pilot: ZcPilot,
    pub plan: ObservationPlan,
    pub grid: GridSpec,
}

/// 3 x 4 RIS, two BS antennas, `L~ = 64`, `L = 24`.
pub(crate) fn small(k: usize, k_off: usize, seed: u64) -> Small {
    small_with(k, k_off, seed, ZcPilot::new(64, 16, 24, 0.3).unwrap())
}

pub(crate) fn small_with(k: usize, k_off: usize, seed: u64, pilot: ZcPilot) -> Small {
    let geom = ArrayGeometry::half_wavelength(3, 4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = generate_g(&geom, GModel::RandomPhase, &mut rng).unwrap();
    let phases = random_phases(k, geom.ris_elements(), &mut rng);
    let plan = ObservationPlan::new(k_off, pilot.symbol_len(), 0.8, phases, g).unwrap();
    let grid = GridSpec {
        theta: 8,
        phi: 8,
        zeta: 32,
        xi: 8,
        direct_theta: 8,
        direct_zeta: 32,
        direct_xi: 8,
    };
    Small {
        geom,
        pilot,
        plan,
        grid,
    }
}

pub(crate) fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Compensated single-path block `beta~ W(xi) a d(zeta)^T`.
pub(crate) fn ris_block(s: &Small, zeta: f64, xi: f64, angle: Angle2D, gain: Complex64) -> Array2<Complex64> {
    let a = crate::geometry::ris_response(&s.geom, angle).unwrap();
    let v = s.plan.steer(&a, xi);
    let d = doppler_window(s.pilot.window, zeta);
    Array2::from_shape_fn((v.len(), d.len()), |(i, n)| gain * v[i] * d[n])
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}
