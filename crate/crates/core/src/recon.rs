//! Channel reconstruction from path parameters, Doppler projection to
//! future symbols, and error metrics.
//!
//! The RIS channel at time `T` (samples after the first RIS-on
//! observation) has taps
//! `H(T)[i, n] = sum_u beta_u exp(j 2 pi xi_u T) a_u[i] p(n - tau_u)` for
//! `n = 0..L~`, with `p` the raised-cosine pulse. The direct channel is the
//! analogue with `c(theta)` and the phase `exp(j 2 pi xi (T + K-bar N))`,
//! since direct gains are referenced to the start of the RIS-off stage.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{dimension, Result};
use crate::geometry::{bs_response, ris_response, ArrayGeometry};
use crate::pilot::{raised_cosine, ZcPilot};
use crate::scene::{DirectPath, ObservationPlan, RisPath};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Time,
    Frequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    /// `rows x L~` taps or bins.
    pub taps: Array2<C>,
    pub domain: Domain,
    pub time: f64,
}

/// Sample index `T(J)` lying `J` symbols after the last training sample of
/// the RIS-on stage.
pub fn projection_time(plan: &ObservationPlan, pilot: &ZcPilot, symbols: usize) -> f64 {
    let last = (plan.k.saturating_sub(1) * plan.symbol_len) as f64
        + (pilot.window - 1 - pilot.window / 2) as f64;
    last + (symbols * plan.symbol_len) as f64
}

/// A channel held as a sum of `weight * spatial (x) taps` terms.
#[derive(Debug, Clone)]
pub struct Rank1Sum {
    rows: usize,
    len: usize,
    terms: Vec<(C, Array1<C>, Vec<C>)>,
}

fn pulse_taps(len: usize, delay: f64, rolloff: f64) -> Vec<C> {
    (0..len)
        .map(|n| C::new(raised_cosine(n as f64 - delay, rolloff), 0.0))
        .collect()
}

impl Rank1Sum {
    pub fn ris(paths: &[RisPath], geom: &ArrayGeometry, pilot: &ZcPilot, time: f64) -> Result<Self> {
        let mut terms = Vec::with_capacity(paths.len());
        for p in paths {
            let a = ris_response(geom, p.angle())?;
            let w = p.gain * C::from_polar(1.0, 2.0 * PI * p.doppler * time);
            terms.push((w, a, pulse_taps(pilot.zc_len, p.delay, pilot.rolloff)));
        }
        Ok(Self {
            rows: geom.ris_elements(),
            len: pilot.zc_len,
            terms,
        })
    }

    pub fn direct(
        paths: &[DirectPath],
        geom: &ArrayGeometry,
        pilot: &ZcPilot,
        plan: &ObservationPlan,
        time: f64,
    ) -> Result<Self> {
        let offset = (plan.k_off * plan.symbol_len) as f64;
        let mut terms = Vec::with_capacity(paths.len());
        for p in paths {
            let c = bs_response(geom, p.azimuth)?;
            let w = p.gain * C::from_polar(1.0, 2.0 * PI * p.doppler * (time + offset));
            terms.push((w, c, pulse_taps(pilot.zc_len, p.delay, pilot.rolloff)));
        }
        Ok(Self {
            rows: geom.bs_antennas,
            len: pilot.zc_len,
            terms,
        })
    }

    pub fn dense(&self) -> Array2<C> {
        let mut out = Array2::zeros((self.rows, self.len));
        for (w, s, t) in &self.terms {
            for (i, si) in s.iter().enumerate() {
                let f = w * si;
                for (v, tn) in out.row_mut(i).iter_mut().zip(t) {
                    *v += f * tn;
                }
            }
        }
        out
    }

    /// `|A - B|_F^2` from pairwise inner products of the factors.
    pub fn distance_sq(&self, other: &Rank1Sum) -> Result<f64> {
        if (self.rows, self.len) != (other.rows, other.len) {
            return Err(dimension("channel shapes differ"));
        }
        let all: Vec<(C, &Array1<C>, &Vec<C>)> = self
            .terms
            .iter()
            .map(|(w, s, t)| (*w, s, t))
            .chain(other.terms.iter().map(|(w, s, t)| (-w, s, t)))
            .collect();
        let mut acc = 0.0;
        for (i, (wi, si, ti)) in all.iter().enumerate() {
            for (wj, sj, tj) in all.iter().skip(i) {
                let ss: C = si.iter().zip(sj.iter()).map(|(a, b)| a.conj() * b).sum();
                let tt: C = ti.iter().zip(tj.iter()).map(|(a, b)| a.conj() * b).sum();
                let v = (wi.conj() * wj * ss * tt).re;
                acc += if std::ptr::eq(si, sj) && std::ptr::eq(ti, tj) { v } else { 2.0 * v };
            }
        }
        Ok(acc.max(0.0))
    }

    pub fn norm_sq(&self) -> f64 {
        let empty = Rank1Sum {
            rows: self.rows,
            len: self.len,
            terms: Vec::new(),
        };
        self.distance_sq(&empty).unwrap_or(0.0)
    }

    pub fn entries(&self) -> usize {
        self.rows * self.len
    }
}

pub fn reconstruct_ris(
    paths: &[RisPath],
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
    time: f64,
) -> Result<ChannelResponse> {
    Ok(ChannelResponse {
        taps: Rank1Sum::ris(paths, geom, pilot, time)?.dense(),
        domain: Domain::Time,
        time,
    })
}

pub fn reconstruct_direct(
    paths: &[DirectPath],
    geom: &ArrayGeometry,
    pilot: &ZcPilot,
    plan: &ObservationPlan,
    time: f64,
) -> Result<ChannelResponse> {
    Ok(ChannelResponse {
        taps: Rank1Sum::direct(paths, geom, pilot, plan, time)?.dense(),
        domain: Domain::Time,
        time,
    })
}

fn unitary_dft_rows(taps: &Array2<C>, inverse: bool) -> Array2<C> {
    let n = taps.ncols();
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = taps.as_standard_layout().to_owned();
    for mut row in out.rows_mut() {
        let buf = row.as_slice_mut().expect("standard layout");
        fft.process(buf);
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Unitary DFT along the tap axis.
pub fn to_frequency(resp: &ChannelResponse) -> ChannelResponse {
    match resp.domain {
        Domain::Frequency => resp.clone(),
        Domain::Time => ChannelResponse {
            taps: unitary_dft_rows(&resp.taps, false),
            domain: Domain::Frequency,
            time: resp.time,
        },
    }
}

pub fn to_time(resp: &ChannelResponse) -> ChannelResponse {
    match resp.domain {
        Domain::Time => resp.clone(),
        Domain::Frequency => ChannelResponse {
            taps: unitary_dft_rows(&resp.taps, true),
            domain: Domain::Time,
            time: resp.time,
        },
    }
}

/// `sqrt(|H_est - H_true|_F^2 / entries)`; domains must match.
pub fn rmse(est: &ChannelResponse, truth: &ChannelResponse) -> Result<f64> {
    if est.taps.dim() != truth.taps.dim() || est.domain != truth.domain {
        return Err(dimension("responses differ in shape or domain"));
    }
    let n = est.taps.len().max(1) as f64;
    let s: f64 = est
        .taps
        .iter()
        .zip(truth.taps.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok((s / n).sqrt())
}

/// RMSE between two factored channels. Equal to [`rmse`] on their dense
/// frequency responses because the DFT is unitary.
pub fn rmse_factored(est: &Rank1Sum, truth: &Rank1Sum) -> Result<f64> {
    Ok((est.distance_sq(truth)? / truth.entries().max(1) as f64).sqrt())
}
