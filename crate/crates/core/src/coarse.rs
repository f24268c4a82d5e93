//! FFT-based coarse grid search.
//!
//! RIS paths: the objective `|a^H W(xi)^H Y~ d(-zeta)|^2 / sum_k |W_k a|^2`
//! is evaluated on a `N_theta x N_phi x N_zeta x N_xi` grid of spatial
//! frequencies, delay-frequencies and Dopplers. Direct paths use the 3-D
//! analogue `|c^H B(xi)^H Y~ d(-zeta)|^2`.
//!
//! Both searches return the exact grid argmax (ties go to the lowest linear
//! index) but only expand delay columns and spatial rows whose
//! Cauchy-Schwarz upper bound can still beat the incumbent.

use std::cmp::Ordering;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, Result};
use crate::geometry::{bs_angle_from_freq, ris_angles_from_freq, Angle2D, ArrayGeometry};
use crate::pilot::window_indices;
use crate::scene::ObservationPlan;

const BOUND_SLACK: f64 = 1.0 + 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub theta: usize,
    pub phi: usize,
    pub zeta: usize,
    pub xi: usize,
    pub direct_theta: usize,
    pub direct_zeta: usize,
    pub direct_xi: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            theta: 32,
            phi: 32,
            zeta: 1024,
            xi: 64,
            direct_theta: 32,
            direct_zeta: 1024,
            direct_xi: 64,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("theta", self.theta),
            ("phi", self.phi),
            ("zeta", self.zeta),
            ("xi", self.xi),
            ("direct_theta", self.direct_theta),
            ("direct_zeta", self.direct_zeta),
            ("direct_xi", self.direct_xi),
        ];
        for (name, v) in all {
            if v == 0 {
                return Err(domain(format!("grid.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Maps `i / n` into `[-0.5, 0.5)`.
pub fn wrap_bin(i: usize, n: usize) -> f64 {
    let f = i as f64 / n as f64;
    if f >= 0.5 {
        f - 1.0
    } else {
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseRis {
    pub zeta: f64,
    pub xi: f64,
    pub angle: Angle2D,
    /// Spatial frequencies `(u_x, u_z)` of the selected cell.
    pub freq: (f64, f64),
    pub objective: f64,
    /// Set when the cell lies outside the visible region.
    pub clamped: bool,
    /// `(n_theta, n_phi, n_zeta, n_xi)`.
    pub index: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseDirect {
    pub zeta: f64,
    pub xi: f64,
    pub azimuth: f64,
    pub freq: f64,
    pub objective: f64,
    pub clamped: bool,
    /// False when fewer than two observations make Doppler unobservable;
    /// `xi` is then reported as zero.
    pub doppler_identified: bool,
    /// `(n_theta, n_zeta, n_xi)`.
    pub index: [usize; 3],
}

/// Spatial DFT of every `W_k` row and the resulting denominators.
#[derive(Debug, Clone)]
pub struct RisDenominator {
    n_theta: usize,
    n_phi: usize,
    m_r: usize,
    k: usize,
    /// `r[(k * N_s + n) * M_r + m] = a_n^H conj(W_k[m, :])^T`.
    r: Vec<Complex64>,
    gamma: Vec<f64>,
}

impl RisDenominator {
    pub fn new(plan: &ObservationPlan, geom: &ArrayGeometry, grid: &GridSpec) -> Result<Self> {
        plan.check_geometry(geom)?;
        grid.validate()?;
        let (n_theta, n_phi) = (grid.theta, grid.phi);
        let ns = n_theta * n_phi;
        let m_r = geom.bs_antennas;
        let k = plan.k;
        let mut planner = FftPlanner::new();
        let mut r = vec![Complex64::new(0.0, 0.0); k * ns * m_r];
        let mut buf = vec![Complex64::new(0.0, 0.0); ns];
        for (kk, w) in plan.mixing_matrices().iter().enumerate() {
            for m in 0..m_r {
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for p in 0..geom.ris_rows {
                    for q in 0..geom.ris_cols {
                        let v = w[[m, geom.element_index(p, q)]].conj();
                        buf[(q % n_theta) * n_phi + p % n_phi] += v;
                    }
                }
                fft2_colmajor(&mut buf, n_phi, n_theta, &mut planner);
                for (n, v) in buf.iter().enumerate() {
                    r[(kk * ns + n) * m_r + m] = *v;
                }
            }
        }
        let row_norms: Vec<f64> = r
            .chunks(m_r)
            .map(|row| row.iter().map(|v| v.norm_sqr()).sum())
            .collect();
        let gamma = (0..ns)
            .map(|n| (0..k).map(|kk| row_norms[kk * ns + n]).sum())
            .collect();
        Ok(Self {
            n_theta,
            n_phi,
            m_r,
            k,
            r,
            gamma,
        })
    }

    pub fn spatial_cells(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// `sum_k |W_k a_n|^2` for spatial cell `n = n_theta * N_phi + n_phi`.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    fn r_row(&self, k: usize, n: usize) -> &[Complex64] {
        let ns = self.spatial_cells();
        let start = (k * ns + n) * self.m_r;
        &self.r[start..start + self.m_r]
    }
}

/// In-place 2-D DFT of a column-major `rows x cols` buffer.
fn fft2_colmajor(buf: &mut [Complex64], rows: usize, cols: usize, planner: &mut FftPlanner<f64>) {
    let f_rows = planner.plan_fft_forward(rows);
    for col in buf.chunks_mut(rows) {
        f_rows.process(col);
    }
    let f_cols = planner.plan_fft_forward(cols);
    let mut line = vec![Complex64::new(0.0, 0.0); cols];
    for r in 0..rows {
        for c in 0..cols {
            line[c] = buf[c * rows + r];
        }
        f_cols.process(&mut line);
        for c in 0..cols {
            buf[c * rows + r] = line[c];
        }
    }
}

/// DFT over the centred time window of every row in `rows`, folding
/// indices modulo `n_fft`. Output is row-major `rows x n_fft`.
fn time_dft(
    y: &Array2<Complex64>,
    row_range: std::ops::Range<usize>,
    n_fft: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<Complex64> {
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = vec![Complex64::new(0.0, 0.0); row_range.len() * n_fft];
    let idx: Vec<usize> = window_indices(y.ncols())
        .map(|n| n.rem_euclid(n_fft as i64) as usize)
        .collect();
    for (i, r) in row_range.enumerate() {
        let dst = &mut out[i * n_fft..(i + 1) * n_fft];
        for (v, &j) in y.row(r).iter().zip(&idx) {
            dst[j] += v;
        }
        fft.process(dst);
    }
    out
}

fn twiddles(count: usize, n_fft: usize) -> Vec<Complex64> {
    // tw[nf * count + k] = exp(-j 2 pi nf k / n_fft)
    let mut tw = Vec::with_capacity(count * n_fft);
    for nf in 0..n_fft {
        for k in 0..count {
            let e = ((nf * k) % n_fft) as f64 / n_fft as f64;
            tw.push(Complex64::from_polar(1.0, -2.0 * PI * e));
        }
    }
    tw
}

struct Incumbent {
    value: f64,
    index: usize,
}

impl Incumbent {
    fn new() -> Self {
        Self {
            value: -1.0,
            index: usize::MAX,
        }
    }

    fn offer(&mut self, value: f64, index: usize) {
        if value > self.value || (value == self.value && index < self.index) {
            self.value = value;
            self.index = index;
        }
    }

    /// True when no entry bounded by `bound` whose index is at least
    /// `min_index` can displace the incumbent.
    fn dominates(&self, bound: f64, min_index: usize) -> bool {
        bound * BOUND_SLACK < self.value || (bound <= self.value && min_index > self.index)
    }
}

fn check_block(y: &Array2<Complex64>, obs: usize, m_r: usize) -> Result<()> {
    if y.nrows() != obs * m_r {
        return Err(dimension(format!(
            "received block has {} rows, expected {} observations x {} antennas",
            y.nrows(),
            obs,
            m_r
        )));
    }
    Ok(())
}

struct RisSpectra {
    /// `b[(k * M_r + m) * N_zeta + n_zeta]`.
    b: Vec<Complex64>,
    column_bound: Vec<f64>,
}

fn ris_spectra(
    ytilde: &Array2<Complex64>,
    k: usize,
    m_r: usize,
    n_zeta: usize,
) -> RisSpectra {
    let mut planner = FftPlanner::new();
    let b = time_dft(ytilde, 0..k * m_r, n_zeta, &mut planner);
    let mut column_bound = vec![0.0; n_zeta];
    for row in b.chunks(n_zeta) {
        for (c, v) in column_bound.iter_mut().zip(row) {
            *c += v.norm_sqr();
        }
    }
    RisSpectra { b, column_bound }
}

fn ris_column_q(
    spectra: &RisSpectra,
    den: &RisDenominator,
    n_zeta: usize,
    col: usize,
    q: &mut [Complex64],
) {
    // q[n * K + k]
    let (k_obs, m_r, ns) = (den.k, den.m_r, den.spatial_cells());
    let mut bcol = vec![Complex64::new(0.0, 0.0); k_obs * m_r];
    for (i, v) in bcol.iter_mut().enumerate() {
        *v = spectra.b[i * n_zeta + col];
    }
    for n in 0..ns {
        for k in 0..k_obs {
            let r = den.r_row(k, n);
            let bk = &bcol[k * m_r..(k + 1) * m_r];
            q[n * k_obs + k] = r.iter().zip(bk).map(|(a, b)| a * b).sum();
        }
    }
}

fn ris_estimate(
    index: usize,
    value: f64,
    grid: &GridSpec,
    geom: &ArrayGeometry,
    symbol_len: usize,
) -> CoarseRis {
    let n_xi = index % grid.xi;
    let rest = index / grid.xi;
    let n_zeta = rest % grid.zeta;
    let n = rest / grid.zeta;
    let (n_theta, n_phi) = (n / grid.phi, n % grid.phi);
    let ux = wrap_bin(n_theta, grid.theta);
    let uz = wrap_bin(n_phi, grid.phi);
    let (angle, clamped) = ris_angles_from_freq(geom, ux, uz);
    CoarseRis {
        zeta: wrap_bin(n_zeta, grid.zeta),
        xi: wrap_bin(n_xi, grid.xi) / symbol_len as f64,
        angle,
        freq: (ux, uz),
        objective: value.max(0.0),
        clamped,
        index: [n_theta, n_phi, n_zeta, n_xi],
    }
}

/// Exact grid argmax of the RIS-path objective.
pub fn coarse_ris(
    ytilde: &Array2<Complex64>,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    grid: &GridSpec,
    den: &RisDenominator,
) -> Result<CoarseRis> {
    let (k_obs, m_r) = (plan.k, geom.bs_antennas);
    if k_obs == 0 {
        return Err(crate::Error::DegeneratePlan("no RIS-on observations".into()));
    }
    check_block(ytilde, k_obs, m_r)?;
    let ns = den.spatial_cells();
    let spectra = ris_spectra(ytilde, k_obs, m_r, grid.zeta);
    let tw = twiddles(k_obs, grid.xi);

    let mut order: Vec<usize> = (0..grid.zeta).collect();
    order.sort_by(|&a, &b| {
        spectra.column_bound[b]
            .partial_cmp(&spectra.column_bound[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut best = Incumbent::new();
    let mut q = vec![Complex64::new(0.0, 0.0); ns * k_obs];
    for &col in &order {
        let cb = spectra.column_bound[col];
        if cb * BOUND_SLACK < best.value {
            break;
        }
        if best.dominates(cb, col * grid.xi) {
            continue;
        }
        ris_column_q(&spectra, den, grid.zeta, col, &mut q);
        for n in 0..ns {
            let qn = &q[n * k_obs..(n + 1) * k_obs];
            let gamma = den.gamma[n];
            let base = (n * grid.zeta + col) * grid.xi;
            if gamma <= 0.0 {
                best.offer(0.0, base);
                continue;
            }
            let s: f64 = qn.iter().map(|v| v.norm()).sum();
            if best.dominates(s * s / gamma, base) {
                continue;
            }
            for nx in 0..grid.xi {
                let t = &tw[nx * k_obs..(nx + 1) * k_obs];
                let m: Complex64 = qn.iter().zip(t).map(|(a, b)| a * b).sum();
                best.offer(m.norm_sqr() / gamma, base + nx);
            }
        }
    }
    Ok(ris_estimate(best.index, best.value, grid, geom, plan.symbol_len))
}

/// Full objective tensor indexed `((n * N_zeta + n_zeta) * N_xi + n_xi)`
/// with `n = n_theta * N_phi + n_phi`. Intended for small grids.
pub fn ris_objective_tensor(
    ytilde: &Array2<Complex64>,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    grid: &GridSpec,
    den: &RisDenominator,
) -> Result<Vec<f64>> {
    let (k_obs, m_r) = (plan.k, geom.bs_antennas);
    check_block(ytilde, k_obs, m_r)?;
    let ns = den.spatial_cells();
    let spectra = ris_spectra(ytilde, k_obs, m_r, grid.zeta);
    let tw = twiddles(k_obs, grid.xi);
    let mut out = vec![0.0; ns * grid.zeta * grid.xi];
    let mut q = vec![Complex64::new(0.0, 0.0); ns * k_obs];
    for col in 0..grid.zeta {
        ris_column_q(&spectra, den, grid.zeta, col, &mut q);
        for n in 0..ns {
            let gamma = den.gamma[n];
            if gamma <= 0.0 {
                continue;
            }
            let qn = &q[n * k_obs..(n + 1) * k_obs];
            for nx in 0..grid.xi {
                let t = &tw[nx * k_obs..(nx + 1) * k_obs];
                let m: Complex64 = qn.iter().zip(t).map(|(a, b)| a * b).sum();
                out[(n * grid.zeta + col) * grid.xi + nx] = m.norm_sqr() / gamma;
            }
        }
    }
    Ok(out)
}

/// Lowest-index argmax of a slice.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best = Incumbent::new();
    for (i, &v) in values.iter().enumerate() {
        best.offer(v, i);
    }
    (best.index != usize::MAX).then_some(best.index)
}

pub fn ris_estimate_from_index(
    index: usize,
    value: f64,
    grid: &GridSpec,
    geom: &ArrayGeometry,
    symbol_len: usize,
) -> CoarseRis {
    ris_estimate(index, value, grid, geom, symbol_len)
}

struct DirectSpectra {
    /// `t[(k * M_r + m) * N_zeta + n_zeta]`.
    t: Vec<Complex64>,
    column_bound: Vec<f64>,
    spatial: Vec<Complex64>,
}

fn direct_spectra(
    ytilde: &Array2<Complex64>,
    k: usize,
    m_r: usize,
    grid: &GridSpec,
) -> DirectSpectra {
    let nz = grid.direct_zeta;
    let mut planner = FftPlanner::new();
    let t = time_dft(ytilde, 0..k * m_r, nz, &mut planner);
    let mut column_bound = vec![0.0; nz];
    for col in 0..nz {
        let mut acc = 0.0;
        for kk in 0..k {
            let e: f64 = (0..m_r)
                .map(|m| t[(kk * m_r + m) * nz + col].norm_sqr())
                .sum();
            acc += e.sqrt();
        }
        column_bound[col] = m_r as f64 * acc * acc;
    }
    // spatial[n * M_r + m] = exp(-j 2 pi m n / N_theta)
    let nt = grid.direct_theta;
    let spatial = (0..nt)
        .flat_map(|n| {
            (0..m_r).map(move |m| {
                let e = ((m * n) % nt) as f64 / nt as f64;
                Complex64::from_polar(1.0, -2.0 * PI * e)
            })
        })
        .collect();
    DirectSpectra {
        t,
        column_bound,
        spatial,
    }
}

fn direct_column_v(sp: &DirectSpectra, k_obs: usize, m_r: usize, grid: &GridSpec, col: usize, v: &mut [Complex64]) {
    // v[n * K + k]
    let nz = grid.direct_zeta;
    for n in 0..grid.direct_theta {
        let f = &sp.spatial[n * m_r..(n + 1) * m_r];
        for k in 0..k_obs {
            v[n * k_obs + k] = (0..m_r)
                .map(|m| f[m] * sp.t[(k * m_r + m) * nz + col])
                .sum();
        }
    }
}

fn direct_estimate(
    index: usize,
    value: f64,
    grid: &GridSpec,
    geom: &ArrayGeometry,
    symbol_len: usize,
    k_obs: usize,
) -> CoarseDirect {
    let n_xi = index % grid.direct_xi;
    let rest = index / grid.direct_xi;
    let n_zeta = rest % grid.direct_zeta;
    let n_theta = rest / grid.direct_zeta;
    let u = wrap_bin(n_theta, grid.direct_theta);
    let (azimuth, clamped) = bs_angle_from_freq(geom, u);
    let identified = k_obs >= 2;
    CoarseDirect {
        zeta: wrap_bin(n_zeta, grid.direct_zeta),
        xi: if identified {
            wrap_bin(n_xi, grid.direct_xi) / symbol_len as f64
        } else {
            0.0
        },
        azimuth,
        freq: u,
        objective: value.max(0.0),
        clamped,
        doppler_identified: identified,
        index: [n_theta, n_zeta, if identified { n_xi } else { 0 }],
    }
}

/// Exact grid argmax of `|c^H B(xi)^H Y~ d(-zeta)|^2` over the RIS-off block.
pub fn coarse_direct(
    ytilde: &Array2<Complex64>,
    k_obs: usize,
    geom: &ArrayGeometry,
    grid: &GridSpec,
    symbol_len: usize,
) -> Result<CoarseDirect> {
    let m_r = geom.bs_antennas;
    if k_obs == 0 {
        return Err(crate::Error::DegeneratePlan("no RIS-off observations".into()));
    }
    check_block(ytilde, k_obs, m_r)?;
    grid.validate()?;
    let sp = direct_spectra(ytilde, k_obs, m_r, grid);
    let n_xi = if k_obs >= 2 { grid.direct_xi } else { 1 };
    let tw = twiddles(k_obs, grid.direct_xi);

    let mut order: Vec<usize> = (0..grid.direct_zeta).collect();
    order.sort_by(|&a, &b| {
        sp.column_bound[b]
            .partial_cmp(&sp.column_bound[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut best = Incumbent::new();
    let mut v = vec![Complex64::new(0.0, 0.0); grid.direct_theta * k_obs];
    for &col in &order {
        let cb = sp.column_bound[col];
        if cb * BOUND_SLACK < best.value {
            break;
        }
        if best.dominates(cb, col * grid.direct_xi) {
            continue;
        }
        direct_column_v(&sp, k_obs, m_r, grid, col, &mut v);
        for n in 0..grid.direct_theta {
            let vn = &v[n * k_obs..(n + 1) * k_obs];
            let base = (n * grid.direct_zeta + col) * grid.direct_xi;
            let s: f64 = vn.iter().map(|x| x.norm()).sum();
            if best.dominates(s * s, base) {
                continue;
            }
            for nx in 0..n_xi {
                let t = &tw[nx * k_obs..(nx + 1) * k_obs];
                let p: Complex64 = vn.iter().zip(t).map(|(a, b)| a * b).sum();
                best.offer(p.norm_sqr(), base + nx);
            }
        }
    }
    Ok(direct_estimate(best.index, best.value, grid, geom, symbol_len, k_obs))
}

/// Full direct-path objective tensor indexed
/// `((n_theta * N_zeta + n_zeta) * N_xi + n_xi)`.
pub fn direct_objective_tensor(
    ytilde: &Array2<Complex64>,
    k_obs: usize,
    geom: &ArrayGeometry,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    let m_r = geom.bs_antennas;
    check_block(ytilde, k_obs, m_r)?;
    let sp = direct_spectra(ytilde, k_obs, m_r, grid);
    let tw = twiddles(k_obs, grid.direct_xi);
    let mut out = vec![0.0; grid.direct_theta * grid.direct_zeta * grid.direct_xi];
    let mut v = vec![Complex64::new(0.0, 0.0); grid.direct_theta * k_obs];
    for col in 0..grid.direct_zeta {
        direct_column_v(&sp, k_obs, m_r, grid, col, &mut v);
        for n in 0..grid.direct_theta {
            let vn = &v[n * k_obs..(n + 1) * k_obs];
            for nx in 0..grid.direct_xi {
                let t = &tw[nx * k_obs..(nx + 1) * k_obs];
                let p: Complex64 = vn.iter().zip(t).map(|(a, b)| a * b).sum();
                out[(n * grid.direct_zeta + col) * grid.direct_xi + nx] = p.norm_sqr();
            }
        }
    }
    Ok(out)
}

pub fn direct_estimate_from_index(
    index: usize,
    value: f64,
    grid: &GridSpec,
    geom: &ArrayGeometry,
    symbol_len: usize,
    k_obs: usize,
) -> CoarseDirect {
    direct_estimate(index, value, grid, geom, symbol_len, k_obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bs_response_at_freq, ris_response_at_freq};
    use crate::pilot::doppler_window;
    use crate::scene::ObservationPlan;
    use crate::testutil::{gaussian, ris_block, small};

    fn brute_ris(y: &Array2<Complex64>, plan: &ObservationPlan, geom: &ArrayGeometry, grid: &GridSpec) -> Vec<f64> {
        let mut out = Vec::new();
        for nt in 0..grid.theta {
            for np in 0..grid.phi {
                let a = ris_response_at_freq(geom, wrap_bin(nt, grid.theta), wrap_bin(np, grid.phi));
                let den: f64 = plan.stacked().dot(&a).iter().map(|v| v.norm_sqr()).sum();
                for nz in 0..grid.zeta {
                    let d = doppler_window(y.ncols(), -wrap_bin(nz, grid.zeta));
                    let yd = y.dot(&ndarray::Array1::from(d));
                    for nx in 0..grid.xi {
                        let v = plan.steer(&a, wrap_bin(nx, grid.xi) / plan.symbol_len as f64);
                        let num: Complex64 = v.iter().zip(yd.iter()).map(|(p, q)| p.conj() * q).sum();
                        out.push(num.norm_sqr() / den);
                    }
                }
            }
        }
        out
    }

    fn brute_direct(y: &Array2<Complex64>, k: usize, m_r: usize, grid: &GridSpec, n: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for nt in 0..grid.direct_theta {
            let c = bs_response_at_freq(m_r, wrap_bin(nt, grid.direct_theta));
            for nz in 0..grid.direct_zeta {
                let d = doppler_window(y.ncols(), -wrap_bin(nz, grid.direct_zeta));
                let yd = y.dot(&ndarray::Array1::from(d));
                for nx in 0..grid.direct_xi {
                    let xi = wrap_bin(nx, grid.direct_xi) / n as f64;
                    let mut p = Complex64::new(0.0, 0.0);
                    for kk in 0..k {
                        let ph = Complex64::from_polar(1.0, -2.0 * PI * xi * (kk * n) as f64);
                        for m in 0..m_r {
                            p += ph * c[m].conj() * yd[kk * m_r + m];
                        }
                    }
                    out.push(p.norm_sqr());
                }
            }
        }
        out
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        let scale = b.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-9 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn denominator_matches_direct_evaluation() {
        let s = small(2, 0, 1);
        let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
        for nt in 0..s.grid.theta {
            for np in 0..s.grid.phi {
                let a = ris_response_at_freq(&s.geom, wrap_bin(nt, 8), wrap_bin(np, 8));
                let g: f64 = s.plan.stacked().dot(&a).iter().map(|v| v.norm_sqr()).sum();
                assert!((den.gamma()[nt * 8 + np] - g).abs() <= 1e-10 * g);
            }
        }
    }

    #[test]
    fn single_element_has_flat_denominator() {
        let geom = ArrayGeometry::half_wavelength(1, 1, 1).unwrap();
        let w = Complex64::new(0.3, 0.4);
        let g = Array2::from_elem((1, 1), w);
        let plan = ObservationPlan::new(0, 80, 1.0, vec![vec![0.0]], g).unwrap();
        let den = RisDenominator::new(&plan, &geom, &small(1, 0, 0).grid).unwrap();
        assert!(den.gamma().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn repeated_schedule_scales_denominator() {
        let s = small(1, 0, 2);
        let one = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
        let plan3 = ObservationPlan::new(0, s.plan.symbol_len, s.plan.efficiency, vec![s.plan.phases[0].clone(); 3], s.plan.g.clone()).unwrap();
        let three = RisDenominator::new(&plan3, &s.geom, &s.grid).unwrap();
        for (a, b) in one.gamma().iter().zip(three.gamma()) {
            assert!((3.0 * a - b).abs() <= 1e-10 * b);
        }
    }

    #[test]
    fn ris_tensor_matches_brute_force() {
        let s = small(3, 0, 3);
        let y = gaussian(6, s.pilot.window, 4);
        let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
        let fast = ris_objective_tensor(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
        assert_close(&fast, &brute_ris(&y, &s.plan, &s.geom, &s.grid));
    }

    #[test]
    fn direct_tensor_matches_brute_force() {
        let s = small(1, 3, 5);
        let y = gaussian(6, s.pilot.window, 6);
        let fast = direct_objective_tensor(&y, 3, &s.geom, &s.grid).unwrap();
        assert_close(&fast, &brute_direct(&y, 3, 2, &s.grid, s.plan.symbol_len));
    }

    #[test]
    fn pruned_search_returns_exhaustive_argmax() {
        for seed in 0..12 {
            let s = small(3, 2, 100 + seed);
            let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
            let y = gaussian(6, s.pilot.window, 200 + seed);
            let t = ris_objective_tensor(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
            let i = argmax(&t).unwrap();
            let c = coarse_ris(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
            let e = ris_estimate_from_index(i, t[i], &s.grid, &s.geom, s.plan.symbol_len);
            assert_eq!(c.index, e.index);
            assert!((c.objective - t[i]).abs() <= 1e-9 * t[i]);

            let yd = gaussian(4, s.pilot.window, 300 + seed);
            let t = direct_objective_tensor(&yd, 2, &s.geom, &s.grid).unwrap();
            let i = argmax(&t).unwrap();
            let c = coarse_direct(&yd, 2, &s.geom, &s.grid, s.plan.symbol_len).unwrap();
            let e = direct_estimate_from_index(i, t[i], &s.grid, &s.geom, s.plan.symbol_len, 2);
            assert_eq!(c.index, e.index);
        }
    }

    #[test]
    fn zero_data_returns_first_cell() {
        let s = small(2, 2, 7);
        let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
        let y = Array2::zeros((4, s.pilot.window));
        let c = coarse_ris(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
        assert_eq!(c.index, [0, 0, 0, 0]);
        assert_eq!(c.objective, 0.0);
        let d = coarse_direct(&y, 2, &s.geom, &s.grid, s.plan.symbol_len).unwrap();
        assert_eq!(d.index, [0, 0, 0]);
    }

    #[test]
    fn on_grid_path_is_recovered_exactly() {
        let s = small(3, 0, 8);
        let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
        let (ux, uz) = (wrap_bin(2, 8), wrap_bin(7, 8));
        let (angle, clamped) = ris_angles_from_freq(&s.geom, ux, uz);
        assert!(!clamped);
        let (zeta, xi) = (wrap_bin(5, 32), wrap_bin(1, 8) / s.plan.symbol_len as f64);
        let y = ris_block(&s, zeta, xi, angle, Complex64::new(0.7, 0.2));
        let c = coarse_ris(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
        assert_eq!(c.index, [2, 7, 5, 1]);
        assert_eq!((c.zeta, c.xi), (zeta, xi));
    }

    #[test]
    fn broadside_direct_path_lands_in_bin_zero() {
        let s = small(1, 2, 9);
        let c = bs_response_at_freq(2, 0.0);
        let d = doppler_window(s.pilot.window, wrap_bin(3, 32));
        let y = Array2::from_shape_fn((4, d.len()), |(i, n)| c[i % 2] * d[n]);
        let est = coarse_direct(&y, 2, &s.geom, &s.grid, s.plan.symbol_len).unwrap();
        assert_eq!(est.index, [0, 3, 0]);
        assert!((est.azimuth - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_observation_leaves_doppler_unidentified() {
        let s = small(1, 1, 10);
        let y = gaussian(2, s.pilot.window, 11);
        let est = coarse_direct(&y, 1, &s.geom, &s.grid, s.plan.symbol_len).unwrap();
        assert!(!est.doppler_identified);
        assert_eq!(est.xi, 0.0);
    }
}
