//! Zadoff-Chu pilots, delay/Doppler vectors and the raised-cosine shaped
//! waveform.
//!
//! Discrete time indices run over a centred window: a window of length `L`
//! covers `n = -floor(L/2) ..= L - 1 - floor(L/2)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZcPilot {
    /// Sequence length `L~` (even).
    pub zc_len: usize,
    /// Cyclic prefix length in samples.
    pub cp_len: usize,
    /// Number of samples `L` kept per observation.
    pub window: usize,
    /// Raised-cosine roll-off used by the shaped waveform and by channel
    /// reconstruction.
    pub rolloff: f64,
    /// Oversampling factor of the shaped waveform.
    pub oversample: usize,
    /// Maximum supported delay `R` in samples.
    pub max_delay: f64,
    /// Timing advance `g` in samples.
    pub advance: f64,
}

impl ZcPilot {
    pub fn new(zc_len: usize, cp_len: usize, window: usize, rolloff: f64) -> Result<Self> {
        let p = Self {
            zc_len,
            cp_len,
            window,
            rolloff,
            oversample: 8,
            max_delay: 8.0,
            advance: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self.issues().into_iter().next() {
            Some(msg) => Err(domain(msg)),
            None => Ok(()),
        }
    }

    /// Every violated constraint, each message prefixed by its field name.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.zc_len == 0 || self.zc_len % 2 != 0 {
            out.push(format!("zc_len: ZC length must be even and positive, got {}", self.zc_len));
        }
        if self.window == 0 || self.window >= self.zc_len {
            out.push(format!(
                "window: observation window {} must lie in 1..{}",
                self.window, self.zc_len
            ));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            out.push(format!("rolloff: roll-off must lie in [0, 1], got {}", self.rolloff));
        }
        if self.oversample == 0 {
            out.push("oversample: oversampling factor must be positive".to_string());
        }
        if !(self.max_delay.is_finite() && self.max_delay >= 0.0) {
            out.push(format!("max_delay: must be non-negative, got {}", self.max_delay));
        }
        if !(self.advance.is_finite() && self.advance >= 0.0) {
            out.push(format!("advance: must be non-negative, got {}", self.advance));
        } else if self.advance >= self.cp_len as f64 - self.max_delay {
            out.push(format!(
                "advance: timing advance {} reaches the ISI region (cyclic prefix {} minus max delay {})",
                self.advance, self.cp_len, self.max_delay
            ));
        }
        out
    }

    /// Samples per transmitted symbol, `N = L~ + T_cp`.
    pub fn symbol_len(&self) -> usize {
        self.zc_len + self.cp_len
    }

    /// ZC sample at integer time, periodic with period `L~`.
    pub fn zc_sample(&self, n: i64) -> Complex64 {
        zc_sample(self.zc_len, n)
    }

    /// `x(n - tau)` of the ideal chirp over the observation window.
    pub fn delayed_window(&self, tau: f64) -> Vec<Complex64> {
        chirp_window(self.zc_len, self.window, tau)
    }

    /// Like [`Self::delayed_window`] but rejects delays beyond `max_delay`.
    pub fn delay_vector(&self, tau: f64) -> Result<Vec<Complex64>> {
        if !(tau.abs() <= self.max_delay) {
            return Err(domain(format!("delay {tau} exceeds maximum {}", self.max_delay)));
        }
        Ok(self.delayed_window(tau))
    }

    /// `s(n)` over the observation window.
    pub fn window_samples(&self) -> Vec<Complex64> {
        window_indices(self.window).map(|n| self.zc_sample(n)).collect()
    }
}

pub fn window_start(len: usize) -> i64 {
    -((len / 2) as i64)
}

pub fn window_indices(len: usize) -> impl Iterator<Item = i64> + Clone {
    let start = window_start(len);
    start..start + len as i64
}

pub fn zc_sample(zc_len: usize, n: i64) -> Complex64 {
    // Reduce n^2 modulo 2 L~ in integers to keep the phase exact.
    let l = zc_len as i64;
    let r = n.rem_euclid(2 * l);
    let phase = PI * ((r * r) % (2 * l)) as f64 / l as f64;
    Complex64::from_polar(1.0, phase)
}

/// The full ZC sequence ordered from `n = -L~/2` to `L~/2 - 1`.
pub fn zc_sequence(zc_len: usize) -> Result<Vec<Complex64>> {
    if zc_len == 0 || zc_len % 2 != 0 {
        return Err(domain(format!("ZC length must be even and positive, got {zc_len}")));
    }
    Ok(window_indices(zc_len).map(|n| zc_sample(zc_len, n)).collect())
}

/// `exp(j pi (n - tau)^2 / L~)` over a centred window of `len` samples.
pub fn chirp_window(zc_len: usize, len: usize, tau: f64) -> Vec<Complex64> {
    let l = zc_len as f64;
    window_indices(len)
        .map(|n| {
            let t = n as f64 - tau;
            Complex64::from_polar(1.0, PI * t * t / l)
        })
        .collect()
}

/// `d(xi)(n) = exp(j 2 pi xi n)` over a centred window.
pub fn doppler_window(len: usize, xi: f64) -> Vec<Complex64> {
    window_indices(len)
        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * xi * n as f64))
        .collect()
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Raised-cosine pulse with roll-off `mu`, unit spacing between zeros.
pub fn raised_cosine(t: f64, mu: f64) -> f64 {
    let den = 1.0 - (2.0 * mu * t).powi(2);
    if den.abs() < 1e-8 {
        PI / 4.0 * sinc(1.0 / (2.0 * mu))
    } else {
        sinc(t) * (PI * mu * t).cos() / den
    }
}

/// Band-limited pilot obtained by raised-cosine interpolation of the
/// periodic ZC sequence.
#[derive(Debug, Clone)]
pub struct ShapedPilot {
    zc_len: usize,
    cp_len: usize,
    rolloff: f64,
    oversample: usize,
    /// Half-width of the pulse truncation in symbols.
    span: i64,
}

impl ShapedPilot {
    pub const DEFAULT_SPAN: i64 = 48;

    pub fn new(pilot: &ZcPilot) -> Result<Self> {
        pilot.validate()?;
        Ok(Self {
            zc_len: pilot.zc_len,
            cp_len: pilot.cp_len,
            rolloff: pilot.rolloff,
            oversample: pilot.oversample,
            span: Self::DEFAULT_SPAN,
        })
    }

    /// Continuous-time value at `t` samples.
    pub fn sample(&self, t: f64) -> Complex64 {
        let lo = (t - self.span as f64).ceil() as i64;
        let hi = (t + self.span as f64).floor() as i64;
        (lo..=hi)
            .map(|m| zc_sample(self.zc_len, m) * raised_cosine(t - m as f64, self.rolloff))
            .sum()
    }

    /// Oversampled waveform over one CP-extended symbol, starting at
    /// `t = -L~/2 - T_cp` with spacing `1 / oversample`.
    pub fn waveform(&self) -> Vec<Complex64> {
        let start = -((self.zc_len / 2) as f64) - self.cp_len as f64;
        let n = (self.zc_len + self.cp_len) * self.oversample;
        (0..n)
            .map(|i| self.sample(start + i as f64 / self.oversample as f64))
            .collect()
    }

    /// `x(n - tau)` over a centred window of `len` samples.
    pub fn delayed_window(&self, len: usize, tau: f64) -> Vec<Complex64> {
        window_indices(len).map(|n| self.sample(n as f64 - tau)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zc_known_values() {
        let s = zc_sequence(1024).unwrap();
        assert!((s[512] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((s[512 + 32] + Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((s[512 - 32] + Complex64::new(1.0, 0.0)).norm() < 1e-12);
        let quarter = zc_sequence(4).unwrap();
        assert!((quarter[1] - Complex64::from_polar(1.0, PI / 4.0)).norm() < 1e-15);
    }

    #[test]
    fn zc_is_periodic() {
        for n in (-5000i64..5000).step_by(97) {
            assert!((zc_sample(1024, n) - zc_sample(1024, n + 1024)).norm() < 1e-12);
        }
    }

    #[test]
    fn delay_identity_holds() {
        let p = ZcPilot::new(1024, 64, 600, 0.3).unwrap();
        let tau = 0.5;
        let x = p.delay_vector(tau).unwrap();
        let s = p.window_samples();
        let d = doppler_window(p.window, -tau / 1024.0);
        let c = Complex64::from_polar(1.0, PI * tau * tau / 1024.0);
        for i in 0..p.window {
            assert!((x[i] - c * s[i] * d[i]).norm() < 1e-12);
        }
        assert!(p.delay_vector(9.0).is_err());
    }

    #[test]
    fn doppler_one_cycle_sums_to_zero() {
        let d = doppler_window(600, 1.0 / 600.0);
        let total: Complex64 = d.iter().sum();
        assert!(total.norm() < 1e-9);
        let e = doppler_window(600, 0.01);
        let f = doppler_window(600, -0.01);
        for (a, b) in e.iter().zip(&f) {
            assert!((a * b - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn window_bounds_are_checked() {
        assert!(ZcPilot::new(1024, 64, 1024, 0.3).is_err());
        let mut p = ZcPilot::new(1024, 64, 600, 0.3).unwrap();
        p.advance = 56.0;
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("advance"), "{err}");
    }

    #[test]
    fn sinc_pulse_interpolates_lattice() {
        let mut p = ZcPilot::new(64, 16, 32, 0.0).unwrap();
        p.max_delay = 4.0;
        let sp = ShapedPilot::new(&p).unwrap();
        let got = sp.delayed_window(p.window, 0.0);
        for (a, b) in got.iter().zip(p.window_samples()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn odd_length_is_rejected() {
        assert!(zc_sequence(5).is_err());
        assert!(ZcPilot::new(1023, 64, 600, 0.3).is_err());
    }

    #[test]
    fn integer_delay_is_cyclic_shift() {
        let l = 64;
        let s = zc_sequence(l).unwrap();
        let x = chirp_window(l, l, 3.0);
        for i in 0..l {
            let j = (i + l - 3) % l;
            assert!((x[i] - s[j]).norm() < 1e-10);
        }
    }

    #[test]
    fn raised_cosine_singular_point() {
        let mu = 0.3;
        let t = 1.0 / (2.0 * mu);
        let v = raised_cosine(t, mu);
        let near = raised_cosine(t + 1e-6, mu);
        assert_relative_eq!(v, near, epsilon = 1e-5);
        assert_relative_eq!(raised_cosine(0.0, mu), 1.0);
        assert!(raised_cosine(3.0, mu).abs() < 1e-15);
        assert_relative_eq!(raised_cosine(0.4, 0.0), sinc(0.4));
    }

    #[test]
    fn shaped_pilot_hits_zc_on_lattice() {
        let p = ZcPilot::new(64, 16, 32, 0.3).unwrap();
        let sp = ShapedPilot::new(&p).unwrap();
        for n in -40..40 {
            assert!((sp.sample(n as f64) - p.zc_sample(n)).norm() < 1e-12);
        }
        let w = sp.waveform();
        assert_eq!(w.len(), 80 * 8);
        // cyclic prefix repeats the tail of the symbol
        let idx = |t: i64| ((t + 32 + 16) * 8) as usize;
        assert!((w[idx(-33)] - w[idx(31)]).norm() < 1e-12);
    }

    #[test]
    fn shaped_fractional_delay_tracks_chirp() {
        let p = ZcPilot::new(1024, 64, 600, 0.3).unwrap();
        let sp = ShapedPilot::new(&p).unwrap();
        let shaped = sp.delayed_window(p.window, 0.5);
        let ideal = p.delayed_window(0.5);
        let worst = shaped
            .iter()
            .zip(&ideal)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-2, "max entrywise error {worst}");
    }
}
