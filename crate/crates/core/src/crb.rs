//! Fisher information and Cramér-Rao bounds for RIS path parameters under
//! the ideal-chirp model.
//!
//! Per path the parameters are ordered `[tau, xi, theta, phi, Re beta,
//! Im beta]`. Every derivative of the stacked mean is a sum of at most two
//! outer products `u w^T` (spatial by time), so Gram entries come from
//! inner products of the factors without forming the full Jacobian.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{ris_freq_derivatives, ris_response, ArrayGeometry};
use crate::pilot::{chirp_window, window_indices, ZcPilot};
use crate::scene::{ObservationPlan, RisPath};

type C = Complex64;

pub const PARAMS_PER_PATH: usize = 6;
pub const PARAM_NAMES: [&str; PARAMS_PER_PATH] = ["tau", "xi", "theta", "phi", "beta_re", "beta_im"];

/// Bounds (variances) for one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBounds {
    pub tau: f64,
    pub xi: f64,
    pub theta: f64,
    pub phi: f64,
    pub beta_re: f64,
    pub beta_im: f64,
}

impl PathBounds {
    fn from_slice(v: &[f64]) -> Self {
        Self {
            tau: v[0],
            xi: v[1],
            theta: v[2],
            phi: v[3],
            beta_re: v[4],
            beta_im: v[5],
        }
    }

    /// Bounds in `PARAM_NAMES` order.
    pub fn as_array(&self) -> [f64; PARAMS_PER_PATH] {
        [self.tau, self.xi, self.theta, self.phi, self.beta_re, self.beta_im]
    }
}

#[derive(Debug, Clone)]
pub struct CrbReport {
    pub fim: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub bounds: Vec<PathBounds>,
    /// Eigenvalues were floored before inversion.
    pub singular: bool,
}

type Factor = (Array1<C>, Vec<C>);

/// Derivative blocks of one path's contribution, one entry per parameter.
pub fn path_derivatives(
    path: &RisPath,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
) -> Result<[Vec<Factor>; PARAMS_PER_PATH]> {
    let ang = path.angle();
    let a = ris_response(geom, ang)?;
    let fd = ris_freq_derivatives(geom, ang);
    let l = pilot.zc_len as f64;
    let n: Vec<f64> = window_indices(pilot.window).map(|n| n as f64).collect();
    let w: Vec<C> = chirp_window(pilot.zc_len, pilot.window, path.delay)
        .into_iter()
        .zip(&n)
        .map(|(x, &n)| x * C::from_polar(1.0, 2.0 * PI * path.doppler * n))
        .collect();
    let b = path.gain;
    let v = plan.steer(&a, path.doppler);

    let dw_tau: Vec<C> = w
        .iter()
        .zip(&n)
        .map(|(x, &n)| x * C::new(0.0, -2.0 * PI * (n - path.delay) / l))
        .collect();
    let dw_xi: Vec<C> = w.iter().zip(&n).map(|(x, &n)| x * C::new(0.0, 2.0 * PI * n)).collect();

    let m_r = geom.bs_antennas;
    let mut dv_xi = v.clone();
    for k in 0..plan.k {
        let f = C::new(0.0, 2.0 * PI * (k * plan.symbol_len) as f64);
        dv_xi.slice_mut(s![k * m_r..(k + 1) * m_r]).mapv_inplace(|x| x * f);
    }

    let coords: Vec<(f64, f64)> = geom.element_coords().collect();
    let da = |col: usize| -> Array1<C> {
        let (gx, gz) = (fd.jac[0][col], fd.jac[1][col]);
        Array1::from_iter(
            a.iter()
                .zip(&coords)
                .map(|(ai, &(q, p))| ai * C::new(0.0, 2.0 * PI * (q * gx + p * gz))),
        )
    };
    let dv_theta = plan.steer(&da(0), path.doppler);
    let dv_phi = plan.steer(&da(1), path.doppler);

    let bv = v.mapv(|x| x * b);
    Ok([
        vec![(bv.clone(), dw_tau)],
        vec![(dv_xi.mapv(|x| x * b), w.clone()), (bv, dw_xi)],
        vec![(dv_theta.mapv(|x| x * b), w.clone())],
        vec![(dv_phi.mapv(|x| x * b), w.clone())],
        vec![(v.clone(), w.clone())],
        vec![(v.mapv(|x| x * C::i()), w)],
    ])
}

fn inner(a: &[Factor], b: &[Factor]) -> C {
    let mut acc = C::new(0.0, 0.0);
    for (ua, wa) in a {
        for (ub, wb) in b {
            let su: C = ua.iter().zip(ub.iter()).map(|(x, y)| x.conj() * y).sum();
            let sw: C = wa.iter().zip(wb).map(|(x, y)| x.conj() * y).sum();
            acc += su * sw;
        }
    }
    acc
}

/// Dense Jacobian column for one derivative block, row-major over
/// `(row, sample)` to match `vec` of the received block by rows.
pub fn dense_column(blocks: &[Factor]) -> Vec<C> {
    let (rows, cols) = (blocks[0].0.len(), blocks[0].1.len());
    let mut out = vec![C::new(0.0, 0.0); rows * cols];
    for (u, w) in blocks {
        for (i, ui) in u.iter().enumerate() {
            for (j, wj) in w.iter().enumerate() {
                out[i * cols + j] += ui * wj;
            }
        }
    }
    out
}

pub fn fim(
    paths: &[RisPath],
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
    noise_var: f64,
) -> Result<CrbReport> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(domain(format!("noise variance must be positive, got {noise_var}")));
    }
    if paths.is_empty() {
        return Err(domain("at least one path is required"));
    }
    plan.check_geometry(geom)?;
    let mut cols = Vec::with_capacity(paths.len() * PARAMS_PER_PATH);
    for p in paths {
        cols.extend(path_derivatives(p, plan, geom, pilot)?);
    }
    let dim = cols.len();
    let mut f = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = 2.0 / noise_var * inner(&cols[i], &cols[j]).re;
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    let (inverse, singular) = floored_inverse(&f);
    let diag: Vec<f64> = (0..dim).map(|i| inverse[(i, i)].max(0.0)).collect();
    let bounds = diag.chunks(PARAMS_PER_PATH).map(PathBounds::from_slice).collect();
    Ok(CrbReport {
        fim: f,
        inverse,
        bounds,
        singular,
    })
}

/// Inverse through a symmetric eigendecomposition with eigenvalues floored
/// at `1e-12` times the largest.
pub fn floored_inverse(f: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(f.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-12 * max;
    let mut singular = max <= 0.0;
    let inv_vals = eig.eigenvalues.map(|l| {
        if l < floor || l <= 0.0 {
            singular = true;
            if floor > 0.0 {
                1.0 / floor
            } else {
                0.0
            }
        } else {
            1.0 / l
        }
    });
    let q = &eig.eigenvectors;
    let inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    ((&inv + inv.transpose()) * 0.5, singular)
}
