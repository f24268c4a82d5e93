//! Array manifolds for the RIS (uniform rectangular array) and the base
//! station (uniform linear array).
//!
//! RIS element `(p, q)` (zero-based row `p` along z, column `q` along x)
//! lives at linear index `q * P + p`, i.e. column-major stacking of the
//! `P x Q` element grid. Every module uses this ordering.
//!
//! Directions are parametrised by spatial frequencies in cycles per element:
//! `u_x = -(d_x / lambda) sin(phi) cos(theta)` and `u_z = (d_z / lambda) cos(phi)`,
//! so that element `(p, q)` of the response is `exp(j 2 pi (q u_x + p u_z))`.

use std::f64::consts::PI;

use ndarray::Array1;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Number of RIS rows `P` (z axis).
    pub ris_rows: usize,
    /// Number of RIS columns `Q` (x axis).
    pub ris_cols: usize,
    /// Number of BS antennas `M_r`.
    pub bs_antennas: usize,
    pub ris_dx: f64,
    pub ris_dz: f64,
    pub bs_dx: f64,
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(
        ris_rows: usize,
        ris_cols: usize,
        bs_antennas: usize,
        ris_dx: f64,
        ris_dz: f64,
        bs_dx: f64,
        wavelength: f64,
    ) -> Result<Self> {
        let geom = Self {
            ris_rows,
            ris_cols,
            bs_antennas,
            ris_dx,
            ris_dz,
            bs_dx,
            wavelength,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Half-wavelength spacing on both arrays with unit wavelength.
    pub fn half_wavelength(ris_rows: usize, ris_cols: usize, bs_antennas: usize) -> Result<Self> {
        Self::new(ris_rows, ris_cols, bs_antennas, 0.5, 0.5, 0.5, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ris_rows == 0 || self.ris_cols == 0 || self.bs_antennas == 0 {
            return Err(domain("array dimensions must be positive"));
        }
        for (name, v) in [
            ("ris_dx", self.ris_dx),
            ("ris_dz", self.ris_dz),
            ("bs_dx", self.bs_dx),
            ("wavelength", self.wavelength),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn ris_elements(&self) -> usize {
        self.ris_rows * self.ris_cols
    }

    pub fn element_index(&self, p: usize, q: usize) -> usize {
        q * self.ris_rows + p
    }

    /// `(q, p)` coordinates of every element in storage order.
    pub fn element_coords(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let rows = self.ris_rows;
        (0..self.ris_elements()).map(move |i| ((i / rows) as f64, (i % rows) as f64))
    }
}

/// Azimuth `theta` and elevation `phi` in radians, both in `(0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angle2D {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Angle2D {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        check_open_angle("azimuth", azimuth)?;
        check_open_angle("elevation", elevation)?;
        Ok(Self { azimuth, elevation })
    }

    pub fn from_degrees(azimuth: f64, elevation: f64) -> Result<Self> {
        Self::new(azimuth.to_radians(), elevation.to_radians())
    }
}

pub(crate) fn check_open_angle(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 && v < PI {
        Ok(())
    } else {
        Err(domain(format!("{name} must lie in (0, pi), got {v}")))
    }
}

/// Spatial frequencies `(u_x, u_z)` for a direction.
pub fn ris_spatial_freq(geom: &ArrayGeometry, ang: Angle2D) -> (f64, f64) {
    let ct = ang.azimuth.cos();
    let (sp, cp) = ang.elevation.sin_cos();
    (
        -(geom.ris_dx / geom.wavelength) * sp * ct,
        (geom.ris_dz / geom.wavelength) * cp,
    )
}

/// RIS response evaluated directly at spatial frequencies, which need not
/// correspond to a visible direction.
pub fn ris_response_at_freq(geom: &ArrayGeometry, ux: f64, uz: f64) -> Array1<Complex64> {
    geom.element_coords()
        .map(|(q, p)| Complex64::from_polar(1.0, 2.0 * PI * (q * ux + p * uz)))
        .collect()
}

pub fn ris_response(geom: &ArrayGeometry, ang: Angle2D) -> Result<Array1<Complex64>> {
    check_open_angle("azimuth", ang.azimuth)?;
    check_open_angle("elevation", ang.elevation)?;
    let (ux, uz) = ris_spatial_freq(geom, ang);
    Ok(ris_response_at_freq(geom, ux, uz))
}

/// BS spatial frequency `-(d / lambda) cos(theta)`.
pub fn bs_spatial_freq(geom: &ArrayGeometry, theta: f64) -> f64 {
    -(geom.bs_dx / geom.wavelength) * theta.cos()
}

pub fn bs_response_at_freq(m_r: usize, u: f64) -> Array1<Complex64> {
    (0..m_r)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 * u))
        .collect()
}

pub fn bs_response(geom: &ArrayGeometry, theta: f64) -> Result<Array1<Complex64>> {
    check_open_angle("azimuth", theta)?;
    Ok(bs_response_at_freq(geom.bs_antennas, bs_spatial_freq(geom, theta)))
}

/// Clamps an arccos argument and reports whether clamping occurred.
fn clamped_acos(x: f64) -> (f64, bool) {
    const LIM: f64 = 1.0 - 1e-12;
    if x > LIM {
        (LIM.acos(), true)
    } else if x < -LIM {
        ((-LIM).acos(), true)
    } else {
        (x.acos(), false)
    }
}

/// Inverts [`ris_spatial_freq`]. The flag is set when a frequency falls
/// outside the visible region and had to be clamped.
pub fn ris_angles_from_freq(geom: &ArrayGeometry, ux: f64, uz: f64) -> (Angle2D, bool) {
    let (elevation, c1) = clamped_acos(geom.wavelength * uz / geom.ris_dz);
    let arg = -geom.wavelength * ux / (geom.ris_dx * elevation.sin());
    let (azimuth, c2) = clamped_acos(arg);
    (Angle2D { azimuth, elevation }, c1 || c2)
}

pub fn bs_angle_from_freq(geom: &ArrayGeometry, u: f64) -> (f64, bool) {
    clamped_acos(-geom.wavelength * u / geom.bs_dx)
}

/// First and second derivatives of `(u_x, u_z)` with respect to
/// `(theta, phi)`: `jac[i][a] = du_i / dpsi_a`, `hess[i][a][b]`.
#[derive(Debug, Clone, Copy)]
pub struct FreqDerivatives {
    pub value: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub hess: [[[f64; 2]; 2]; 2],
}

pub fn ris_freq_derivatives(geom: &ArrayGeometry, ang: Angle2D) -> FreqDerivatives {
    let cx = geom.ris_dx / geom.wavelength;
    let cz = geom.ris_dz / geom.wavelength;
    let (st, ct) = ang.azimuth.sin_cos();
    let (sp, cp) = ang.elevation.sin_cos();
    FreqDerivatives {
        value: [-cx * sp * ct, cz * cp],
        jac: [[cx * sp * st, -cx * cp * ct], [0.0, -cz * sp]],
        hess: [
            [[cx * sp * ct, cx * cp * st], [cx * cp * st, cx * sp * ct]],
            [[0.0, 0.0], [0.0, -cz * cp]],
        ],
    }
}

/// `(u, du/dtheta, d2u/dtheta2)` for the BS array.
pub fn bs_freq_derivatives(geom: &ArrayGeometry, theta: f64) -> [f64; 3] {
    let c = geom.bs_dx / geom.wavelength;
    let (s, co) = theta.sin_cos();
    [-c * co, c * s, c * co]
}
