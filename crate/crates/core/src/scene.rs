//! Ground-truth path parameters, RIS phase schedules and the mixing
//! matrices `W_k = G diag(eta exp(j Phi_k))` shared by the simulator and
//! the estimators.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Error, Result};
use crate::geometry::{
    bs_response_at_freq, check_open_angle, ris_response, ArrayGeometry, Angle2D,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisPath {
    pub delay: f64,
    pub doppler: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub gain: Complex64,
}

impl RisPath {
    pub fn angle(&self) -> Angle2D {
        Angle2D {
            azimuth: self.azimuth,
            elevation: self.elevation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectPath {
    pub delay: f64,
    pub doppler: f64,
    pub azimuth: f64,
    pub gain: Complex64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ris_paths: Vec<RisPath>,
    pub direct_paths: Vec<DirectPath>,
}

impl Scene {
    /// Checks delay, Doppler and angle bounds against the pilot and symbol
    /// length.
    pub fn validate(&self, max_delay: f64, symbol_len: usize) -> Result<()> {
        let xi_lim = 0.5 / symbol_len as f64;
        let check = |what: &str, i: usize, delay: f64, doppler: f64| -> Result<()> {
            if !(delay.abs() <= max_delay) {
                return Err(domain(format!("{what}[{i}].delay {delay} exceeds {max_delay}")));
            }
            if !(doppler.abs() < xi_lim) {
                return Err(domain(format!(
                    "{what}[{i}].doppler {doppler} outside the unambiguous range +-{xi_lim}"
                )));
            }
            Ok(())
        };
        for (i, p) in self.ris_paths.iter().enumerate() {
            check("ris_paths", i, p.delay, p.doppler)?;
            check_open_angle("ris path azimuth", p.azimuth)?;
            check_open_angle("ris path elevation", p.elevation)?;
        }
        for (i, p) in self.direct_paths.iter().enumerate() {
            check("direct_paths", i, p.delay, p.doppler)?;
            check_open_angle("direct path azimuth", p.azimuth)?;
        }
        Ok(())
    }
}

/// How the RIS-to-BS matrix `G` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GModel {
    /// Rank-one far-field line of sight `c(theta_b) a(theta_r, phi_r)^H`
    /// with directions drawn uniformly from `[30, 150]` degrees.
    Los,
    /// Independent uniform phases on every entry.
    RandomPhase,
    /// Spherical-wavefront line of sight to a BS array centred `distance`
    /// wavelengths from the RIS centre, direction drawn as for `Los`.
    NearField { distance: f64 },
}

impl Default for GModel {
    fn default() -> Self {
        GModel::NearField { distance: 5.0 }
    }
}

pub fn generate_g<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    model: GModel,
    rng: &mut R,
) -> Result<Array2<Complex64>> {
    let (m_r, m) = (geom.bs_antennas, geom.ris_elements());
    match model {
        GModel::Los => {
            let mut draw = || rng.gen_range(30.0f64..150.0).to_radians();
            let (tb, tr, pr) = (draw(), draw(), draw());
            let c = bs_response_at_freq(m_r, -(geom.bs_dx / geom.wavelength) * tb.cos());
            let a = ris_response(geom, Angle2D::new(tr, pr)?)?;
            Ok(Array2::from_shape_fn((m_r, m), |(i, j)| c[i] * a[j].conj()))
        }
        GModel::RandomPhase => Ok(Array2::from_shape_fn((m_r, m), |_| {
            Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))
        })),
        GModel::NearField { distance } => {
            if !(distance.is_finite() && distance > 0.0) {
                return Err(domain(format!("near-field distance must be positive, got {distance}")));
            }
            let mut draw = || rng.gen_range(30.0f64..150.0).to_radians();
            let (tb, pb) = (draw(), draw());
            let lam = geom.wavelength;
            let centre = [
                distance * lam * pb.sin() * tb.cos(),
                distance * lam * pb.sin() * tb.sin(),
                distance * lam * pb.cos(),
            ];
            let (q0, p0) = ((geom.ris_cols - 1) as f64 / 2.0, (geom.ris_rows - 1) as f64 / 2.0);
            let m0 = (m_r - 1) as f64 / 2.0;
            let coords: Vec<(f64, f64)> = geom.element_coords().collect();
            Ok(Array2::from_shape_fn((m_r, m), |(i, j)| {
                let (q, p) = coords[j];
                let ris = [(q - q0) * geom.ris_dx, 0.0, (p - p0) * geom.ris_dz];
                let bs = [centre[0] + (i as f64 - m0) * geom.bs_dx, centre[1], centre[2]];
                let r = ((bs[0] - ris[0]).powi(2) + (bs[1] - ris[1]).powi(2) + (bs[2] - ris[2]).powi(2)).sqrt();
                Complex64::from_polar(1.0, -2.0 * PI * r / lam)
            }))
        }
    }
}

/// Draws `k` phase vectors i.i.d. uniform over the 2-bit set.
pub fn random_phases<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..m).map(|_| rng.gen_range(0..4) as f64 * PI / 2.0).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct ObservationPlan {
    /// RIS-on observation count `K`.
    pub k: usize,
    /// RIS-off observation count `K-bar`.
    pub k_off: usize,
    pub symbol_len: usize,
    pub efficiency: f64,
    pub phases: Vec<Vec<f64>>,
    pub g: Array2<Complex64>,
    mixing: Vec<Array2<Complex64>>,
    stacked: Array2<Complex64>,
}

impl ObservationPlan {
    pub fn new(
        k_off: usize,
        symbol_len: usize,
        efficiency: f64,
        phases: Vec<Vec<f64>>,
        g: Array2<Complex64>,
    ) -> Result<Self> {
        if !(efficiency > 0.0 && efficiency <= 1.0) {
            return Err(domain(format!("efficiency must lie in (0, 1], got {efficiency}")));
        }
        if symbol_len == 0 {
            return Err(domain("symbol length must be positive"));
        }
        let m = g.ncols();
        if let Some((i, p)) = phases.iter().enumerate().find(|(_, p)| p.len() != m) {
            return Err(dimension(format!(
                "phase vector {i} has {} entries, G has {m} columns",
                p.len()
            )));
        }
        let mixing: Vec<Array2<Complex64>> = phases
            .iter()
            .map(|ph| {
                let mut w = g.clone();
                for (mut col, &p) in w.columns_mut().into_iter().zip(ph) {
                    col *= Complex64::from_polar(efficiency, p);
                }
                w
            })
            .collect();
        let m_r = g.nrows();
        let mut stacked = Array2::zeros((phases.len() * m_r, m));
        for (k, w) in mixing.iter().enumerate() {
            stacked.slice_mut(s![k * m_r..(k + 1) * m_r, ..]).assign(w);
        }
        Ok(Self {
            k: phases.len(),
            k_off,
            symbol_len,
            efficiency,
            phases,
            g,
            mixing,
            stacked,
        })
    }

    pub fn random<R: Rng + ?Sized>(
        k: usize,
        k_off: usize,
        symbol_len: usize,
        efficiency: f64,
        g: Array2<Complex64>,
        rng: &mut R,
    ) -> Result<Self> {
        let phases = random_phases(k, g.ncols(), rng);
        Self::new(k_off, symbol_len, efficiency, phases, g)
    }

    pub fn bs_antennas(&self) -> usize {
        self.g.nrows()
    }

    pub fn ris_elements(&self) -> usize {
        self.g.ncols()
    }

    pub fn check_geometry(&self, geom: &ArrayGeometry) -> Result<()> {
        if self.g.dim() != (geom.bs_antennas, geom.ris_elements()) {
            return Err(dimension(format!(
                "G is {:?}, geometry expects ({}, {})",
                self.g.dim(),
                geom.bs_antennas,
                geom.ris_elements()
            )));
        }
        Ok(())
    }

    /// `W_k` for zero-based observation index `k`.
    pub fn mixing_matrix(&self, k: usize) -> Result<&Array2<Complex64>> {
        self.mixing.get(k).ok_or_else(|| {
            Error::Domain(format!("observation index {k} out of range 0..{}", self.k))
        })
    }

    pub fn mixing_matrices(&self) -> &[Array2<Complex64>] {
        &self.mixing
    }

    /// Vertical stack of all `W_k` without Doppler phases.
    pub fn stacked(&self) -> &Array2<Complex64> {
        &self.stacked
    }

    /// Block `k` equals `W_k exp(j 2 pi xi k N)`.
    pub fn stacked_mixing(&self, xi: f64) -> Array2<Complex64> {
        let m_r = self.bs_antennas();
        let p = doppler_stack(self.k, self.symbol_len, xi);
        let mut out = self.stacked.clone();
        for (k, ph) in p.iter().enumerate() {
            out.slice_mut(s![k * m_r..(k + 1) * m_r, ..])
                .mapv_inplace(|v| v * ph);
        }
        out
    }

    /// `W(xi) a`, applying the block phases after the product.
    pub fn steer(&self, a: &Array1<Complex64>, xi: f64) -> Array1<Complex64> {
        let m_r = self.bs_antennas();
        let mut v = self.stacked.dot(a);
        for (k, ph) in doppler_stack(self.k, self.symbol_len, xi).iter().enumerate() {
            v.slice_mut(s![k * m_r..(k + 1) * m_r]).mapv_inplace(|x| x * ph);
        }
        v
    }
}

/// `p(xi)[k] = exp(j 2 pi xi k N)` for `k = 0..count`.
pub fn doppler_stack(count: usize, symbol_len: usize, xi: f64) -> Vec<Complex64> {
    (0..count)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * xi * (k * symbol_len) as f64))
        .collect()
}
