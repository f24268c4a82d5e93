//! Independent oracles shared by the integration tests. Each returns the
//! worst relative error it observed.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rischan::coarse::{direct_objective_tensor, ris_objective_tensor, wrap_bin, GridSpec, RisDenominator};
use rischan::crb::{dense_column, path_derivatives};
use rischan::geometry::{bs_response_at_freq, ris_response_at_freq, Angle2D, ArrayGeometry};
use rischan::pilot::{chirp_window, doppler_window, ZcPilot};
use rischan::refine::{DirectProblem, RisProblem, Vgh};
use rischan::sage::{Estimator, SageSettings};
use rischan::scene::{generate_g, GModel, ObservationPlan, RisPath, Scene};
use rischan::synth::{noiseless, PilotModel, Stage};

pub struct Small {
    pub geom: ArrayGeometry,
    pub pilot: ZcPilot,
    pub plan: ObservationPlan,
    pub grid: GridSpec,
}

pub fn small(k: usize, k_off: usize, seed: u64) -> Small {
    let geom = ArrayGeometry::half_wavelength(4, 3, 2).unwrap();
    let pilot = ZcPilot::new(64, 16, 24, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = generate_g(&geom, GModel::RandomPhase, &mut rng).unwrap();
    let plan = ObservationPlan::random(k, k_off, pilot.symbol_len(), 0.8, g, &mut rng).unwrap();
    let grid = GridSpec {
        theta: 8,
        phi: 4,
        zeta: 32,
        xi: 4,
        direct_theta: 8,
        direct_zeta: 32,
        direct_xi: 4,
    };
    Small {
        geom,
        pilot,
        plan,
        grid,
    }
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<C> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| {
        C::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().cloned().fold(0.0, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

/// FFT coarse tensors against direct evaluation of every grid cell.
pub fn coarse_vs_brute_force(seed: u64) -> f64 {
    let s = small(3, 3, seed);
    let n = s.plan.symbol_len as f64;
    let y = gaussian(6, s.pilot.window, seed + 1);
    let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
    let fast = ris_objective_tensor(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
    let mut slow = Vec::new();
    for nt in 0..s.grid.theta {
        for np in 0..s.grid.phi {
            let a = ris_response_at_freq(&s.geom, wrap_bin(nt, s.grid.theta), wrap_bin(np, s.grid.phi));
            let gamma: f64 = s
                .plan
                .mixing_matrices()
                .iter()
                .map(|w| w.dot(&a).iter().map(|v| v.norm_sqr()).sum::<f64>())
                .sum();
            for nz in 0..s.grid.zeta {
                let d = Array1::from(doppler_window(y.ncols(), -wrap_bin(nz, s.grid.zeta)));
                for nx in 0..s.grid.xi {
                    let xi = wrap_bin(nx, s.grid.xi) / n;
                    let v = s.plan.stacked_mixing(xi).dot(&a);
                    let num: C = v.mapv(|x| x.conj()).dot(&y.dot(&d));
                    slow.push(num.norm_sqr() / gamma);
                }
            }
        }
    }
    let ris_err = max_rel(&fast, &slow);

    let yd = gaussian(6, s.pilot.window, seed + 2);
    let fast = direct_objective_tensor(&yd, 3, &s.geom, &s.grid).unwrap();
    let mut slow = Vec::new();
    for nt in 0..s.grid.direct_theta {
        let c = bs_response_at_freq(2, wrap_bin(nt, s.grid.direct_theta));
        for nz in 0..s.grid.direct_zeta {
            let d = Array1::from(doppler_window(yd.ncols(), -wrap_bin(nz, s.grid.direct_zeta)));
            let yz = yd.dot(&d);
            for nx in 0..s.grid.direct_xi {
                let xi = wrap_bin(nx, s.grid.direct_xi) / n;
                let mut p = C::new(0.0, 0.0);
                for k in 0..3 {
                    let rot = C::from_polar(1.0, -2.0 * PI * xi * k as f64 * n);
                    for m in 0..2 {
                        p += rot * c[m].conj() * yz[k * 2 + m];
                    }
                }
                slow.push(p.norm_sqr());
            }
        }
    }
    ris_err.max(max_rel(&fast, &slow))
}

fn fd_error<const D: usize>(f: impl Fn(&SVector<f64, D>) -> Vgh<D>, x: SVector<f64, D>, h: SVector<f64, D>) -> f64 {
    let (_, g, hess) = f(&x);
    let mut g_fd = SVector::<f64, D>::zeros();
    let mut h_fd = SMatrix::<f64, D, D>::zeros();
    for i in 0..D {
        let mut e = SVector::<f64, D>::zeros();
        e[i] = h[i];
        let (fp, gp, _) = f(&(x + e));
        let (fm, gm, _) = f(&(x - e));
        g_fd[i] = (fp - fm) / (2.0 * h[i]);
        h_fd.set_column(i, &((gp - gm) / (2.0 * h[i])));
    }
    // Compare in cell-scaled coordinates so all axes weigh alike.
    let ge = (g_fd - g).component_mul(&h).amax() / g.component_mul(&h).amax();
    let hs = |m: &SMatrix<f64, D, D>| SMatrix::<f64, D, D>::from_fn(|i, j| m[(i, j)] * h[i] * h[j]);
    let he = hs(&(h_fd - hess)).amax() / hs(&hess).amax();
    ge.max(he)
}

/// Analytic gradients and Hessians of the three refinement objectives
/// against central differences with `h = 1e-6` (in symbol units for Doppler).
pub fn refine_derivatives_vs_fd(seed: u64) -> f64 {
    let s = small(3, 3, seed);
    let n = s.plan.symbol_len as f64;
    let y = gaussian(6, s.pilot.window, seed + 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    let prob = RisProblem {
        ytilde: &y,
        plan: &s.plan,
        geom: &s.geom,
        grid: &s.grid,
    };
    let direct = DirectProblem {
        ytilde: &y,
        observations: 3,
        symbol_len: s.plan.symbol_len,
        geom: &s.geom,
        grid: &s.grid,
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let angle = Angle2D {
            azimuth: rng.gen_range(0.3..2.8),
            elevation: rng.gen_range(0.3..2.8),
        };
        let (zeta, xi) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5) / n);
        worst = worst.max(fd_error(
            |x| prob.delay_doppler_vgh(angle, x[0], x[1]),
            SVector::<f64, 2>::new(zeta, xi),
            SVector::<f64, 2>::new(1e-6, 1e-6 / n),
        ));
        let r = prob.beam_vector(zeta, xi);
        worst = worst.max(fd_error(
            |x| {
                prob.angle_vgh(
                    &r,
                    Angle2D {
                        azimuth: x[0],
                        elevation: x[1],
                    },
                )
            },
            SVector::<f64, 2>::new(angle.azimuth, angle.elevation),
            SVector::<f64, 2>::repeat(1e-6),
        ));
        worst = worst.max(fd_error(
            |x| direct.vgh(x[0], x[1], x[2]),
            SVector::<f64, 3>::new(zeta, xi, angle.azimuth),
            SVector::<f64, 3>::new(1e-6, 1e-6 / n, 1e-6),
        ));
    }
    worst
}

/// FIM Jacobian columns against central differences of the simulator.
pub fn crb_jacobian_vs_fd() -> f64 {
    let s = small(3, 0, 11);
    let p = RisPath {
        delay: 1.3,
        doppler: 2e-3,
        azimuth: 1.1,
        elevation: 1.7,
        gain: C::new(0.6, -0.5),
    };
    let mean = |q: RisPath| {
        let sc = Scene {
            ris_paths: vec![q],
            direct_paths: vec![],
        };
        noiseless(&sc, &s.plan, &s.geom, &s.pilot, PilotModel::Ideal, Stage::RisOn).unwrap()
    };
    let bump = |idx: usize, h: f64| {
        let mut q = p;
        match idx {
            0 => q.delay += h,
            1 => q.doppler += h,
            2 => q.azimuth += h,
            3 => q.elevation += h,
            4 => q.gain += C::new(h, 0.0),
            _ => q.gain += C::new(0.0, h),
        }
        q
    };
    let blocks = path_derivatives(&p, &s.plan, &s.geom, &s.pilot).unwrap();
    let mut worst = 0.0f64;
    for (idx, b) in blocks.iter().enumerate() {
        let h = if idx == 1 { 1e-8 } else { 1e-6 };
        let (yp, ym) = (mean(bump(idx, h)), mean(bump(idx, -h)));
        let an = dense_column(b);
        let (mut num, mut den) = (0.0, 0.0);
        for ((a, u), v) in an.iter().zip(yp.iter()).zip(ym.iter()) {
            num += (a - (u - v) / (2.0 * h)).norm_sqr();
            den += a.norm_sqr();
        }
        worst = worst.max((num / den).sqrt());
    }
    worst
}

/// `x(n - tau) = x(n) exp(j pi tau^2 / L~) d(-tau / L~)(n)` for the chirp.
pub fn zc_identity_error() -> f64 {
    let (l, len) = (1024usize, 600usize);
    let x0 = chirp_window(l, len, 0.0);
    let mut worst = 0.0f64;
    for tau in [-7.3, -0.5, 0.0, 0.25, 1.0, 3.9, 8.0] {
        let xt = chirp_window(l, len, tau);
        let d = doppler_window(len, -tau / l as f64);
        let c = C::from_polar(1.0, PI * tau * tau / l as f64);
        for i in 0..len {
            worst = worst.max((xt[i] - c * x0[i] * d[i]).norm());
        }
    }
    worst
}

/// Largest relative increase of the residual between consecutive M-steps
/// after every path has an estimate (zero when monotone).
pub fn sage_residual_increase(seed: u64) -> f64 {
    let s = small(8, 3, seed);
    let est = Estimator::new(&s.geom, &s.pilot, &s.plan, &s.grid, SageSettings::default()).unwrap();
    let mut worst = 0.0f64;
    let y = gaussian(16, s.pilot.window, seed + 5);
    let r = est.sage_ris(&y, 3, None).unwrap();
    for w in r.residual_trace[2..].windows(2) {
        worst = worst.max((w[1] - w[0]) / w[0]);
    }
    let y = gaussian(6, s.pilot.window, seed + 6);
    let r = est.sage_direct(&y, 2).unwrap();
    for w in r.residual_trace[1..].windows(2) {
        worst = worst.max((w[1] - w[0]) / w[0]);
    }
    worst
}
