//! Forward model: stacked received blocks for the RIS-off and RIS-on
//! stages, with circular complex Gaussian noise.
//!
//! Time reference: symbol offsets count from the first RIS-on observation.
//! RIS-off observations precede it, so the direct link seen during the
//! RIS-on stage is offset by `K-bar` symbols relative to the RIS-off start.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{s, Array2};
use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, Result};
use crate::geometry::{bs_response, ris_response, ArrayGeometry};
use crate::pilot::{window_indices, ShapedPilot, ZcPilot};
use crate::scene::{ObservationPlan, Scene};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotModel {
    #[default]
    Ideal,
    Shaped,
}

impl std::str::FromStr for PilotModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ideal" => Ok(Self::Ideal),
            "shaped" => Ok(Self::Shaped),
            other => Err(format!("unknown pilot model '{other}', expected ideal|shaped")),
        }
    }
}

/// Which training stage a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// `K-bar` observations with the RIS switched off: direct paths only.
    RisOff,
    /// `K` observations with the RIS reflecting.
    RisOn,
}

#[derive(Debug, Clone)]
pub struct ReceivedBlock {
    /// `(observations * M_r) x L`, observation `k` in row block `k`.
    pub y: Array2<Complex64>,
    pub noise_var: f64,
    pub snr_db: f64,
    pub observations: usize,
}

impl ReceivedBlock {
    /// `Y diag(s*)`: removes the pilot chirp from every column.
    pub fn compensated(&self, pilot: &ZcPilot) -> Array2<Complex64> {
        compensate(&self.y, pilot)
    }

    /// Writes the block as `RISY`, `u32 rows`, `u32 cols`, then row-major
    /// `complex64` pairs, all little-endian.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"RISY")?;
        w.write_all(&(self.y.nrows() as u32).to_le_bytes())?;
        w.write_all(&(self.y.ncols() as u32).to_le_bytes())?;
        for v in self.y.iter() {
            let c = Complex32::new(v.re as f32, v.im as f32);
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }
}

pub fn compensate(y: &Array2<Complex64>, pilot: &ZcPilot) -> Array2<Complex64> {
    let s = pilot.window_samples();
    let mut out = y.clone();
    for mut row in out.rows_mut() {
        for (v, sv) in row.iter_mut().zip(&s) {
            *v *= sv.conj();
        }
    }
    out
}

fn pilot_row(
    pilot: &ZcPilot,
    shaped: Option<&ShapedPilot>,
    tau: f64,
    xi: f64,
) -> Vec<Complex64> {
    let x = match shaped {
        Some(sp) => sp.delayed_window(pilot.window, tau),
        None => pilot.delayed_window(tau),
    };
    x.into_iter()
        .zip(window_indices(pilot.window))
        .map(|(v, n)| v * Complex64::from_polar(1.0, 2.0 * PI * xi * n as f64))
        .collect()
}

/// Noiseless block for one stage.
pub fn noiseless(
    scene: &Scene,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
    model: PilotModel,
    stage: Stage,
) -> Result<Array2<Complex64>> {
    plan.check_geometry(geom)?;
    if plan.symbol_len != pilot.symbol_len() {
        return Err(dimension(format!(
            "plan symbol length {} differs from pilot symbol length {}",
            plan.symbol_len,
            pilot.symbol_len()
        )));
    }
    let shaped = match model {
        PilotModel::Ideal => None,
        PilotModel::Shaped => Some(ShapedPilot::new(pilot)?),
    };
    let m_r = geom.bs_antennas;
    let n_sym = plan.symbol_len as f64;
    let (obs, direct_offset) = match stage {
        Stage::RisOff => (plan.k_off, 0),
        Stage::RisOn => (plan.k, plan.k_off),
    };
    let mut y = Array2::<Complex64>::zeros((obs * m_r, pilot.window));

    if stage == Stage::RisOn {
        for path in &scene.ris_paths {
            let a = ris_response(geom, path.angle())?;
            let col = plan.steer(&a, path.doppler);
            let row = pilot_row(pilot, shaped.as_ref(), path.delay, path.doppler);
            for (i, c) in col.iter().enumerate() {
                let c = c * path.gain;
                for (v, r) in y.row_mut(i).iter_mut().zip(&row) {
                    *v += c * r;
                }
            }
        }
    }
    for path in &scene.direct_paths {
        let c = bs_response(geom, path.azimuth)?;
        let row = pilot_row(pilot, shaped.as_ref(), path.delay, path.doppler);
        for k in 0..obs {
            let ph = Complex64::from_polar(
                1.0,
                2.0 * PI * path.doppler * (k + direct_offset) as f64 * n_sym,
            ) * path.gain;
            let mut block = y.slice_mut(s![k * m_r..(k + 1) * m_r, ..]);
            for (m, cm) in c.iter().enumerate() {
                let f = cm * ph;
                for (v, r) in block.row_mut(m).iter_mut().zip(&row) {
                    *v += f * r;
                }
            }
        }
    }
    Ok(y)
}

pub fn mean_power(y: &Array2<Complex64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64
}

/// Noise variance giving `snr_db` relative to a signal power.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        signal_power / 10f64.powf(snr_db / 10.0)
    }
}

pub fn add_noise<R: Rng + ?Sized>(y: &mut Array2<Complex64>, noise_var: f64, rng: &mut R) {
    if noise_var <= 0.0 {
        return;
    }
    let sd = (noise_var / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(sd * re, sd * im);
    }
}

/// Simulates one stage with noise variance set from that stage's own mean
/// noiseless power.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Rng + ?Sized>(
    scene: &Scene,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
    model: PilotModel,
    stage: Stage,
    snr_db: f64,
    rng: &mut R,
) -> Result<ReceivedBlock> {
    let mut y = noiseless(scene, plan, geom, pilot, model, stage)?;
    let noise_var = noise_variance(mean_power(&y), snr_db);
    add_noise(&mut y, noise_var, rng);
    let observations = y.nrows() / geom.bs_antennas;
    Ok(ReceivedBlock {
        y,
        noise_var,
        snr_db,
        observations,
    })
}

/// Both stages with a common noise variance derived from the pooled
/// noiseless power of the two blocks.
#[allow(clippy::too_many_arguments)]
pub fn simulate_two_stage<R: Rng + ?Sized>(
    scene: &Scene,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
    model: PilotModel,
    snr_db: f64,
    rng: &mut R,
) -> Result<(ReceivedBlock, ReceivedBlock)> {
    let mut off = noiseless(scene, plan, geom, pilot, model, Stage::RisOff)?;
    let mut on = noiseless(scene, plan, geom, pilot, model, Stage::RisOn)?;
    let total = off.len() + on.len();
    let power = if total == 0 {
        0.0
    } else {
        (mean_power(&off) * off.len() as f64 + mean_power(&on) * on.len() as f64) / total as f64
    };
    let noise_var = noise_variance(power, snr_db);
    add_noise(&mut off, noise_var, rng);
    add_noise(&mut on, noise_var, rng);
    let m_r = geom.bs_antennas;
    Ok((
        ReceivedBlock {
            observations: off.nrows() / m_r,
            y: off,
            noise_var,
            snr_db,
        },
        ReceivedBlock {
            observations: on.nrows() / m_r,
            y: on,
            noise_var,
            snr_db,
        },
    ))
}
