//! Newton refinement of coarse estimates and closed-form gain recovery.
//!
//! Three objectives are maximised:
//!
//! * delay-frequency and Doppler of a RIS path at fixed angles,
//!   `|a^H W(xi)^H Y~ d(-zeta)|^2`;
//! * RIS angles at fixed `(zeta, xi)`, `|a^H r|^2 / sum_k |W_k a|^2` with
//!   `r = W(xi)^H Y~ d(-zeta)`;
//! * direct-path `(zeta, xi, theta)`, `|c^H B(xi)^H Y~ d(-zeta)|^2`.
//!
//! All three phase sums are separable over (observation, antenna or
//! element column, sample or element row), so values, gradients and
//! Hessians come from one tensor contraction with per-axis factor tables.
//!
//! Each Newton step works in coordinates scaled by the coarse cell width.
//! A step is used only if it is an ascent direction, otherwise the scaled
//! gradient is followed; Armijo backtracking then halves the step until it
//! stays inside a one-cell box around the coarse estimate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coarse::{CoarseDirect, CoarseRis, GridSpec};
use crate::geometry::{
    bs_freq_derivatives, bs_spatial_freq, ris_freq_derivatives, ris_response_at_freq,
    ris_spatial_freq, Angle2D, ArrayGeometry,
};
use crate::pilot::window_indices;
use crate::scene::ObservationPlan;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_halvings: usize,
    pub max_cycles: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-9,
            armijo: 1e-4,
            shrink: 0.5,
            max_halvings: 30,
            max_cycles: 20,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonResult<const D: usize> {
    pub x: SVector<f64, D>,
    pub value: f64,
    pub grad: SVector<f64, D>,
    pub hess: SMatrix<f64, D, D>,
    pub iterations: usize,
    pub converged: bool,
}

/// Value, gradient and Hessian.
pub type Vgh<const D: usize> = (f64, SVector<f64, D>, SMatrix<f64, D, D>);

/// Maximises a smooth objective by safeguarded Newton iterations.
///
/// `scale` holds the per-coordinate cell width, `inside` the feasible box.
pub fn newton_maximize<const D: usize>(
    value: impl Fn(&SVector<f64, D>) -> f64,
    vgh: impl Fn(&SVector<f64, D>) -> Vgh<D>,
    x0: SVector<f64, D>,
    scale: SVector<f64, D>,
    inside: impl Fn(&SVector<f64, D>) -> bool,
    settings: &NewtonSettings,
) -> NewtonResult<D> {
    let mut x = x0;
    let (mut f, mut g, mut h) = vgh(&x);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let gs = g.component_mul(&scale);
        let hs = SMatrix::<f64, D, D>::from_fn(|i, j| h[(i, j)] * scale[i] * scale[j]);
        if gs.amax() <= settings.tol * f.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let newton = DMatrix::from_fn(D, D, |i, j| hs[(i, j)])
            .lu()
            .solve(&DVector::from_fn(D, |i, _| -gs[i]))
            .map(|d| SVector::<f64, D>::from_fn(|i, _| d[i]))
            .filter(|d| d.iter().all(|v| v.is_finite()));
        let d = match newton {
            Some(d) if d.dot(&gs) > 0.0 => d,
            _ => gs / gs.amax(),
        };
        let slope = d.dot(&gs);
        let mut s = 1.0;
        while s * d.amax() > 1.0 {
            s *= 0.5;
        }
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let xn = x + (d * s).component_mul(&scale);
            if inside(&xn) {
                let fv = value(&xn);
                if fv >= f + settings.armijo * s * slope {
                    accepted = Some(xn);
                    break;
                }
            }
            s *= settings.shrink;
        }
        let Some(xn) = accepted else {
            converged = true;
            break;
        };
        let step = s * d.amax();
        x = xn;
        (f, g, h) = vgh(&x);
        if step < settings.tol {
            converged = true;
            break;
        }
    }
    NewtonResult {
        x,
        value: f,
        grad: g,
        hess: h,
        iterations,
        converged,
    }
}

/// Factor table along one tensor axis: `f`, `df/dpsi`, `d2f/dpsi2`.
#[derive(Debug, Clone)]
pub struct Axis {
    pub f: [Vec<C>; 3],
}

impl Axis {
    /// `exp(-j 2 pi c_i psi)` for coefficients `c_i`.
    pub fn linear(coeffs: impl Iterator<Item = f64>, psi: f64) -> Self {
        let mut f0 = Vec::new();
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for c in coeffs {
            let e = C::from_polar(1.0, -2.0 * PI * c * psi);
            let w = C::new(0.0, -2.0 * PI * c);
            f0.push(e);
            f1.push(w * e);
            f2.push(w * w * e);
        }
        Self { f: [f0, f1, f2] }
    }

    /// `exp(j Psi_i)` given the phase and its first two derivatives.
    pub fn from_phase(phase: &[f64], d1: &[f64], d2: &[f64]) -> Self {
        let mut f0 = Vec::new();
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for i in 0..phase.len() {
            let e = C::from_polar(1.0, phase[i]);
            f0.push(e);
            f1.push(C::new(0.0, d1[i]) * e);
            f2.push(C::new(-d1[i] * d1[i], d2[i]) * e);
        }
        Self { f: [f0, f1, f2] }
    }

    pub fn constant(len: usize) -> Self {
        Self {
            f: [vec![C::new(1.0, 0.0); len], vec![ZERO; len], vec![ZERO; len]],
        }
    }

    fn len(&self) -> usize {
        self.f[0].len()
    }
}

/// `s[i][j][l] = sum y[a,b,c] A^(i)_a B^(j)_b C^(l)_c` for `i + j + l <= 2`,
/// with `y` row-major `(A.len(), B.len(), C.len())`.
pub fn separable_moments(y: &[C], a: &Axis, b: &Axis, c: &Axis) -> [[[C; 3]; 3]; 3] {
    let (na, nb, nc) = (a.len(), b.len(), c.len());
    debug_assert_eq!(y.len(), na * nb * nc);
    let mut out = [[[ZERO; 3]; 3]; 3];
    // t[l][a][b]
    let mut t = vec![[ZERO; 3]; na * nb];
    for (ab, row) in y.chunks(nc).enumerate() {
        let mut acc = [ZERO; 3];
        for (ci, v) in row.iter().enumerate() {
            for (l, slot) in acc.iter_mut().enumerate() {
                *slot += v * c.f[l][ci];
            }
        }
        t[ab] = acc;
    }
    for ai in 0..na {
        // u[j][l]
        let mut u = [[ZERO; 3]; 3];
        for bi in 0..nb {
            let tv = &t[ai * nb + bi];
            for j in 0..3 {
                let fb = b.f[j][bi];
                for l in 0..3 - j {
                    u[j][l] += fb * tv[l];
                }
            }
        }
        for i in 0..3 {
            let fa = a.f[i][ai];
            for j in 0..3 - i {
                for l in 0..3 - i - j {
                    out[i][j][l] += fa * u[j][l];
                }
            }
        }
    }
    out
}

/// Which parameter drives each axis of a separable sum.
#[derive(Debug, Clone, Copy)]
pub struct AxisParams {
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub c: Option<usize>,
}

/// `S`, `dS` and `d2S` in parameter space from separable moments.
pub fn sum_derivatives<const D: usize>(
    m: &[[[C; 3]; 3]; 3],
    map: AxisParams,
) -> (C, [C; D], [[C; D]; D]) {
    let axes = [map.a, map.b, map.c];
    let order = |counts: [usize; 3]| m[counts[0]][counts[1]][counts[2]];
    let mut grad = [ZERO; D];
    let mut hess = [[ZERO; D]; D];
    for (ax, p) in axes.iter().enumerate() {
        let Some(p) = *p else { continue };
        let mut c = [0; 3];
        c[ax] = 1;
        grad[p] += order(c);
        for (ax2, p2) in axes.iter().enumerate() {
            let Some(p2) = *p2 else { continue };
            let mut c2 = c;
            c2[ax2] += 1;
            hess[p][p2] += order(c2);
        }
    }
    (m[0][0][0], grad, hess)
}

/// Value, gradient and Hessian of `|S|^2`.
pub fn squared_magnitude<const D: usize>(s: C, ds: &[C; D], dds: &[[C; D]; D]) -> Vgh<D> {
    let g = SVector::<f64, D>::from_fn(|a, _| 2.0 * (s.conj() * ds[a]).re);
    let h = SMatrix::<f64, D, D>::from_fn(|a, b| {
        2.0 * (ds[b].conj() * ds[a] + s.conj() * dds[a][b]).re
    });
    (s.norm_sqr(), g, h)
}

fn window_axis(len: usize, zeta: f64) -> Axis {
    Axis::linear(window_indices(len).map(|n| n as f64), zeta)
}

fn observation_axis(count: usize, symbol_len: usize, xi: f64) -> Axis {
    Axis::linear((0..count).map(|k| (k * symbol_len) as f64), xi)
}

/// Refined RIS-path parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisRefined {
    pub zeta: f64,
    pub xi: f64,
    pub angle: Angle2D,
    pub objective: f64,
    pub cycles: usize,
    pub converged: bool,
}

/// Data and model context for estimating one RIS path.
#[derive(Debug, Clone, Copy)]
pub struct RisProblem<'a> {
    /// `(K M_r) x L` pilot-compensated block.
    pub ytilde: &'a Array2<C>,
    pub plan: &'a ObservationPlan,
    pub geom: &'a ArrayGeometry,
    pub grid: &'a GridSpec,
}

impl<'a> RisProblem<'a> {
    fn window(&self) -> usize {
        self.ytilde.ncols()
    }

    fn response(&self, angle: Angle2D) -> Array1<C> {
        let (ux, uz) = ris_spatial_freq(self.geom, angle);
        ris_response_at_freq(self.geom, ux, uz)
    }

    /// `z_k(n) = (W_k a)^H Y~_k(:, n)`, row-major `K x L`.
    fn projected(&self, angle: Angle2D) -> Vec<C> {
        let a = self.response(angle);
        let h = self.plan.stacked().dot(&a);
        let (k_obs, m_r, l) = (self.plan.k, self.geom.bs_antennas, self.window());
        let mut z = vec![ZERO; k_obs * l];
        for k in 0..k_obs {
            let dst = &mut z[k * l..(k + 1) * l];
            for m in 0..m_r {
                let w = h[k * m_r + m].conj();
                for (d, v) in dst.iter_mut().zip(self.ytilde.row(k * m_r + m)) {
                    *d += w * v;
                }
            }
        }
        z
    }

    /// `|a^H W(xi)^H Y~ d(-zeta)|^2` with gradient and Hessian in
    /// `(zeta, xi)` at fixed angles.
    pub fn delay_doppler_vgh(&self, angle: Angle2D, zeta: f64, xi: f64) -> Vgh<2> {
        let z = self.projected(angle);
        self.delay_doppler_from_projection(&z, zeta, xi)
    }

    fn delay_doppler_from_projection(&self, z: &[C], zeta: f64, xi: f64) -> Vgh<2> {
        let a = observation_axis(self.plan.k, self.plan.symbol_len, xi);
        let b = Axis::constant(1);
        let c = window_axis(self.window(), zeta);
        let m = separable_moments(z, &a, &b, &c);
        let (s, ds, dds) = sum_derivatives::<2>(
            &m,
            AxisParams {
                a: Some(1),
                b: None,
                c: Some(0),
            },
        );
        squared_magnitude(s, &ds, &dds)
    }

    /// `r = W(xi)^H Y~ d(-zeta)`, an `M`-vector.
    pub fn beam_vector(&self, zeta: f64, xi: f64) -> Array1<C> {
        let (k_obs, m_r) = (self.plan.k, self.geom.bs_antennas);
        let d: Vec<C> = window_indices(self.window())
            .map(|n| C::from_polar(1.0, -2.0 * PI * zeta * n as f64))
            .collect();
        let mut yk = Array1::<C>::zeros(k_obs * m_r);
        for (i, v) in yk.iter_mut().enumerate() {
            let row = self.ytilde.row(i);
            let acc: C = row.iter().zip(&d).map(|(a, b)| a * b).sum();
            let k = i / m_r;
            *v = acc * C::from_polar(1.0, -2.0 * PI * xi * (k * self.plan.symbol_len) as f64);
        }
        self.plan.stacked().t().mapv(|v| v.conj()).dot(&yk)
    }

    fn denominator(&self, a: &Array1<C>) -> f64 {
        self.plan.stacked().dot(a).iter().map(|v| v.norm_sqr()).sum()
    }

    /// Angle objective value `|a^H r|^2 / sum_k |W_k a|^2`.
    pub fn angle_value(&self, r: &Array1<C>, angle: Angle2D) -> f64 {
        let a = self.response(angle);
        let num: C = a.iter().zip(r).map(|(x, y)| x.conj() * y).sum();
        let den = self.denominator(&a);
        if den > 0.0 {
            num.norm_sqr() / den
        } else {
            0.0
        }
    }

    /// Angle objective with gradient and Hessian in `(theta, phi)`.
    pub fn angle_vgh(&self, r: &Array1<C>, angle: Angle2D) -> Vgh<2> {
        let fd = ris_freq_derivatives(self.geom, angle);
        let (ux, uz) = (fd.value[0], fd.value[1]);
        let (p_rows, q_cols) = (self.geom.ris_rows, self.geom.ris_cols);

        // numerator in u-space: c(u) = sum_i r_i exp(-j 2 pi (q u_x + p u_z))
        let ax_q = Axis::linear((0..q_cols).map(|q| q as f64), ux);
        let ax_p = Axis::linear((0..p_rows).map(|p| p as f64), uz);
        let m = separable_moments(r.as_slice().expect("contiguous"), &Axis::constant(1), &ax_q, &ax_p);
        let (c, dc, ddc) = sum_derivatives::<2>(
            &m,
            AxisParams {
                a: None,
                b: Some(0),
                c: Some(1),
            },
        );
        let (f, fu, fuu) = squared_magnitude(c, &dc, &ddc);

        // denominator in u-space
        let a = ris_response_at_freq(self.geom, ux, uz);
        let coords: Vec<(f64, f64)> = self.geom.element_coords().collect();
        let st = self.plan.stacked();
        let w = |wgt: &dyn Fn(f64, f64) -> C| -> Array1<C> {
            let v: Array1<C> = a
                .iter()
                .zip(&coords)
                .map(|(ai, &(q, p))| ai * wgt(q, p))
                .collect();
            st.dot(&v)
        };
        let j2 = C::new(0.0, 2.0 * PI);
        let h = st.dot(&a);
        let hx = w(&|q, _| j2 * q);
        let hz = w(&|_, p| j2 * p);
        let hxx = w(&|q, _| j2 * j2 * q * q);
        let hxz = w(&|q, p| j2 * j2 * q * p);
        let hzz = w(&|_, p| j2 * j2 * p * p);
        let dot = |x: &Array1<C>, y: &Array1<C>| -> f64 {
            x.iter().zip(y).map(|(a, b)| (a.conj() * b).re).sum()
        };
        let g = h.iter().map(|v| v.norm_sqr()).sum::<f64>();
        if g <= 0.0 {
            return (0.0, SVector::zeros(), SMatrix::zeros());
        }
        let gu = [2.0 * dot(&h, &hx), 2.0 * dot(&h, &hz)];
        let guu = [
            [2.0 * (dot(&hx, &hx) + dot(&h, &hxx)), 2.0 * (dot(&hz, &hx) + dot(&h, &hxz))],
            [2.0 * (dot(&hx, &hz) + dot(&h, &hxz)), 2.0 * (dot(&hz, &hz) + dot(&h, &hzz))],
        ];

        let val = f / g;
        let lu = [
            (fu[0] * g - f * gu[0]) / (g * g),
            (fu[1] * g - f * gu[1]) / (g * g),
        ];
        let mut luu = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                luu[i][j] = fuu[(i, j)] / g - (fu[i] * gu[j] + fu[j] * gu[i]) / (g * g)
                    - f * guu[i][j] / (g * g)
                    + 2.0 * f * gu[i] * gu[j] / (g * g * g);
            }
        }
        // chain rule to (theta, phi)
        let grad = SVector::<f64, 2>::from_fn(|a, _| {
            (0..2).map(|i| lu[i] * fd.jac[i][a]).sum()
        });
        let hess = SMatrix::<f64, 2, 2>::from_fn(|a, b| {
            let mut acc = 0.0;
            for i in 0..2 {
                acc += lu[i] * fd.hess[i][a][b];
                for j in 0..2 {
                    acc += luu[i][j] * fd.jac[i][a] * fd.jac[j][b];
                }
            }
            acc
        });
        (val, grad, hess)
    }

    /// Full concentrated objective at a parameter point.
    pub fn objective(&self, zeta: f64, xi: f64, angle: Angle2D) -> f64 {
        self.angle_value(&self.beam_vector(zeta, xi), angle)
    }

    /// `beta~ = a^H W(xi)^H Y~ d(-zeta) / (L sum_k |W_k a|^2)`.
    pub fn gain(&self, zeta: f64, xi: f64, angle: Angle2D) -> C {
        let r = self.beam_vector(zeta, xi);
        let a = self.response(angle);
        let num: C = a.iter().zip(&r).map(|(x, y)| x.conj() * y).sum();
        let den = self.denominator(&a) * self.window() as f64;
        if den > 0.0 {
            num / den
        } else {
            ZERO
        }
    }

    fn delay_doppler_scale(&self) -> SVector<f64, 2> {
        SVector::<f64, 2>::new(
            1.0 / self.grid.zeta as f64,
            1.0 / (self.grid.xi * self.plan.symbol_len) as f64,
        )
    }

    fn angle_scale(&self, angle: Angle2D) -> SVector<f64, 2> {
        let fd = ris_freq_derivatives(self.geom, angle);
        let wx = 1.0 / self.grid.theta as f64;
        let wz = 1.0 / self.grid.phi as f64;
        let clamp = |v: f64| v.clamp(1e-6, 0.5);
        SVector::<f64, 2>::new(
            clamp(wx / fd.jac[0][0].abs().max(1e-12)),
            clamp(wz / fd.jac[1][1].abs().max(1e-12)),
        )
    }

    /// Newton over `(zeta, xi)` at fixed angles, confined to one cell around
    /// `anchor`.
    pub fn refine_delay_doppler(
        &self,
        angle: Angle2D,
        init: (f64, f64),
        anchor: (f64, f64),
        settings: &NewtonSettings,
    ) -> NewtonResult<2> {
        let z = self.projected(angle);
        let scale = self.delay_doppler_scale();
        let vgh = |x: &SVector<f64, 2>| self.delay_doppler_from_projection(&z, x[0], x[1]);
        let value = |x: &SVector<f64, 2>| vgh(x).0;
        let inside = |x: &SVector<f64, 2>| {
            (x[0] - anchor.0).abs() <= scale[0] && (x[1] - anchor.1).abs() <= scale[1]
        };
        newton_maximize(value, vgh, SVector::<f64, 2>::new(init.0, init.1), scale, inside, settings)
    }

    /// Newton over `(theta, phi)` at fixed `(zeta, xi)`, confined to one
    /// spatial-frequency cell around `anchor = (u_x, u_z)`.
    pub fn refine_angles(
        &self,
        zeta: f64,
        xi: f64,
        init: Angle2D,
        anchor: (f64, f64),
        settings: &NewtonSettings,
    ) -> NewtonResult<2> {
        let r = self.beam_vector(zeta, xi);
        let scale = self.angle_scale(init);
        let (wx, wz) = (1.0 / self.grid.theta as f64, 1.0 / self.grid.phi as f64);
        let to_angle = |x: &SVector<f64, 2>| Angle2D {
            azimuth: x[0],
            elevation: x[1],
        };
        let inside = |x: &SVector<f64, 2>| {
            let open = |v: f64| v > 0.0 && v < PI;
            if !(open(x[0]) && open(x[1])) {
                return false;
            }
            let (ux, uz) = ris_spatial_freq(self.geom, to_angle(x));
            (ux - anchor.0).abs() <= wx && (uz - anchor.1).abs() <= wz
        };
        newton_maximize(
            |x| self.angle_value(&r, to_angle(x)),
            |x| self.angle_vgh(&r, to_angle(x)),
            SVector::<f64, 2>::new(init.azimuth, init.elevation),
            scale,
            inside,
            settings,
        )
    }

    /// Alternates delay-Doppler and angle refinements from a coarse cell.
    pub fn alternate(&self, coarse: &CoarseRis, settings: &NewtonSettings) -> RisRefined {
        let dd_anchor = (coarse.zeta, coarse.xi);
        let ang_anchor = ris_spatial_freq(self.geom, coarse.angle);
        let dd_scale = self.delay_doppler_scale();
        let ang_scale = self.angle_scale(coarse.angle);
        let (mut zeta, mut xi, mut angle) = (coarse.zeta, coarse.xi, coarse.angle);
        let mut converged = false;
        let mut cycles = 0;
        while cycles < settings.max_cycles {
            cycles += 1;
            let dd = self.refine_delay_doppler(angle, (zeta, xi), dd_anchor, settings);
            let an = self.refine_angles(dd.x[0], dd.x[1], angle, ang_anchor, settings);
            let change = [
                (dd.x[0] - zeta) / dd_scale[0],
                (dd.x[1] - xi) / dd_scale[1],
                (an.x[0] - angle.azimuth) / ang_scale[0],
                (an.x[1] - angle.elevation) / ang_scale[1],
            ]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
            zeta = dd.x[0];
            xi = dd.x[1];
            angle = Angle2D {
                azimuth: an.x[0],
                elevation: an.x[1],
            };
            if change < settings.tol {
                converged = true;
                break;
            }
        }
        RisRefined {
            zeta,
            xi,
            angle,
            objective: self.objective(zeta, xi, angle),
            cycles,
            converged,
        }
    }
}

/// Refined direct-path parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectRefined {
    pub zeta: f64,
    pub xi: f64,
    pub azimuth: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Data context for estimating one direct path from the RIS-off block.
#[derive(Debug, Clone, Copy)]
pub struct DirectProblem<'a> {
    /// `(K-bar M_r) x L` pilot-compensated block.
    pub ytilde: &'a Array2<C>,
    pub observations: usize,
    pub symbol_len: usize,
    pub geom: &'a ArrayGeometry,
    pub grid: &'a GridSpec,
}

impl<'a> DirectProblem<'a> {
    fn window(&self) -> usize {
        self.ytilde.ncols()
    }

    fn moments(&self, zeta: f64, xi: f64, theta: f64) -> [[[C; 3]; 3]; 3] {
        let m_r = self.geom.bs_antennas;
        let [_, du, ddu] = bs_freq_derivatives(self.geom, theta);
        let u = bs_spatial_freq(self.geom, theta);
        let phase: Vec<f64> = (0..m_r).map(|m| -2.0 * PI * m as f64 * u).collect();
        let d1: Vec<f64> = (0..m_r).map(|m| -2.0 * PI * m as f64 * du).collect();
        let d2: Vec<f64> = (0..m_r).map(|m| -2.0 * PI * m as f64 * ddu).collect();
        let a = observation_axis(self.observations, self.symbol_len, xi);
        let b = Axis::from_phase(&phase, &d1, &d2);
        let c = window_axis(self.window(), zeta);
        let y = self.ytilde.as_slice().expect("standard layout");
        separable_moments(y, &a, &b, &c)
    }

    /// `|c^H B(xi)^H Y~ d(-zeta)|^2` with derivatives in `(zeta, xi, theta)`.
    pub fn vgh(&self, zeta: f64, xi: f64, theta: f64) -> Vgh<3> {
        let m = self.moments(zeta, xi, theta);
        let (s, ds, dds) = sum_derivatives::<3>(
            &m,
            AxisParams {
                a: Some(1),
                b: Some(2),
                c: Some(0),
            },
        );
        squared_magnitude(s, &ds, &dds)
    }

    pub fn value(&self, zeta: f64, xi: f64, theta: f64) -> f64 {
        self.moments(zeta, xi, theta)[0][0][0].norm_sqr()
    }

    /// `alpha~ = c^H B(xi)^H Y~ d(-zeta) / (L K-bar M_r)`.
    pub fn gain(&self, zeta: f64, xi: f64, theta: f64) -> C {
        let s = self.moments(zeta, xi, theta)[0][0][0];
        s / (self.window() * self.observations * self.geom.bs_antennas) as f64
    }

    pub fn refine(&self, coarse: &CoarseDirect, settings: &NewtonSettings) -> DirectRefined {
        let fd = bs_freq_derivatives(self.geom, coarse.azimuth);
        let wu = 1.0 / self.grid.direct_theta as f64;
        let scale = SVector::<f64, 3>::new(
            1.0 / self.grid.direct_zeta as f64,
            1.0 / (self.grid.direct_xi * self.symbol_len) as f64,
            (wu / fd[1].abs().max(1e-12)).clamp(1e-6, 0.5),
        );
        let anchor = (coarse.zeta, coarse.xi, fd[0]);
        let identified = self.observations >= 2;
        let inside = |x: &SVector<f64, 3>| {
            x[2] > 0.0
                && x[2] < PI
                && (x[0] - anchor.0).abs() <= scale[0]
                && (x[1] - anchor.1).abs() <= scale[1]
                && (identified || x[1] == anchor.1)
                && (bs_spatial_freq(self.geom, x[2]) - anchor.2).abs() <= wu
        };
        let res = newton_maximize(
            |x| self.value(x[0], x[1], x[2]),
            |x| self.vgh(x[0], x[1], x[2]),
            SVector::<f64, 3>::new(coarse.zeta, coarse.xi, coarse.azimuth),
            scale,
            inside,
            settings,
        );
        DirectRefined {
            zeta: res.x[0],
            xi: res.x[1],
            azimuth: res.x[2],
            objective: res.value,
            iterations: res.iterations,
            converged: res.converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse::{coarse_ris, RisDenominator};
    use crate::pilot::ZcPilot;
    use crate::scene::{RisPath, Scene};
    use crate::synth::{compensate, noiseless, PilotModel, Stage};
    use crate::testutil::{gaussian, ris_block, small, small_with, uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central differences of `f` and of its analytic gradient `g`.
    fn check_vgh<const D: usize>(
        f: impl Fn(&SVector<f64, D>) -> Vgh<D>,
        x: SVector<f64, D>,
        h: SVector<f64, D>,
    ) {
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
        let gs = g.component_mul(&h);
        let gerr = (g_fd - g).component_mul(&h).amax() / gs.amax().max(1e-300);
        assert!(gerr < 1e-4, "gradient error {gerr}: {g} vs {g_fd}");
        let hs = SMatrix::<f64, D, D>::from_fn(|i, j| hess[(i, j)] * h[i] * h[j]);
        let hd = SMatrix::<f64, D, D>::from_fn(|i, j| (h_fd[(i, j)] - hess[(i, j)]) * h[i] * h[j]);
        let herr = hd.amax() / hs.amax().max(1e-300);
        assert!(herr < 1e-4, "hessian error {herr}: {hess} vs {h_fd}");
    }

    #[test]
    fn delay_doppler_derivatives_match_finite_differences() {
        let s = small(3, 0, 1);
        let y = gaussian(6, s.pilot.window, 2);
        let prob = RisProblem {
            ytilde: &y,
            plan: &s.plan,
            geom: &s.geom,
            grid: &s.grid,
        };
        let n = s.plan.symbol_len as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let angle = Angle2D {
                azimuth: uniform(&mut rng, 0.3, 2.8),
                elevation: uniform(&mut rng, 0.3, 2.8),
            };
            let x = SVector::<f64, 2>::new(uniform(&mut rng, -0.5, 0.5), uniform(&mut rng, -0.5, 0.5) / n);
            check_vgh(
                |x| prob.delay_doppler_vgh(angle, x[0], x[1]),
                x,
                SVector::<f64, 2>::new(1e-6, 1e-6 / n),
            );
        }
    }

    #[test]
    fn angle_derivatives_match_finite_differences() {
        let s = small(3, 0, 4);
        let y = gaussian(6, s.pilot.window, 5);
        let prob = RisProblem {
            ytilde: &y,
            plan: &s.plan,
            geom: &s.geom,
            grid: &s.grid,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let r = prob.beam_vector(uniform(&mut rng, -0.5, 0.5), uniform(&mut rng, -0.5, 0.5) / 80.0);
            let x = SVector::<f64, 2>::new(uniform(&mut rng, 0.3, 2.8), uniform(&mut rng, 0.3, 2.8));
            let to_angle = |x: &SVector<f64, 2>| Angle2D {
                azimuth: x[0],
                elevation: x[1],
            };
            let (v, _, _) = prob.angle_vgh(&r, to_angle(&x));
            assert!((v - prob.angle_value(&r, to_angle(&x))).abs() <= 1e-12 * v.max(1.0));
            check_vgh(|x| prob.angle_vgh(&r, to_angle(x)), x, SVector::<f64, 2>::repeat(1e-6));
        }
    }

    #[test]
    fn direct_derivatives_match_finite_differences() {
        let s = small(1, 3, 7);
        let y = gaussian(6, s.pilot.window, 8);
        let prob = DirectProblem {
            ytilde: &y,
            observations: 3,
            symbol_len: s.plan.symbol_len,
            geom: &s.geom,
            grid: &s.grid,
        };
        let n = s.plan.symbol_len as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = SVector::<f64, 3>::new(
                uniform(&mut rng, -0.5, 0.5),
                uniform(&mut rng, -0.5, 0.5) / n,
                uniform(&mut rng, 0.3, 2.8),
            );
            let (v, _, _) = prob.vgh(x[0], x[1], x[2]);
            assert!((v - prob.value(x[0], x[1], x[2])).abs() <= 1e-12 * v.max(1.0));
            check_vgh(
                |x| prob.vgh(x[0], x[1], x[2]),
                x,
                SVector::<f64, 3>::new(1e-6, 1e-6 / n, 1e-6),
            );
        }
    }

    #[test]
    fn newton_finds_quadratic_maximum() {
        let c = SVector::<f64, 2>::new(0.3, -0.2);
        let vgh = |x: &SVector<f64, 2>| {
            let d = x - c;
            (5.0 - d.norm_squared(), -2.0 * d, -2.0 * SMatrix::<f64, 2, 2>::identity())
        };
        let res = newton_maximize(
            |x| vgh(x).0,
            vgh,
            SVector::zeros(),
            SVector::repeat(1.0),
            |_| true,
            &NewtonSettings::default(),
        );
        assert!(res.converged);
        assert!((res.x - c).amax() < 1e-12);
    }

    /// Eight observations so that `K M_r` exceeds the RIS size.
    fn truth_setup() -> (crate::testutil::Small, Array2<C>, Angle2D, f64, f64) {
        let s = small(8, 0, 10);
        let angle = Angle2D {
            azimuth: 1.2,
            elevation: 1.9,
        };
        let (zeta, xi) = (0.137, 0.21 / s.plan.symbol_len as f64);
        let y = ris_block(&s, zeta, xi, angle, C::new(0.8, -0.4));
        (s, y, angle, zeta, xi)
    }

    #[test]
    fn refinement_from_truth_stays_put() {
        let (s, y, angle, zeta, xi) = truth_setup();
        let prob = RisProblem {
            ytilde: &y,
            plan: &s.plan,
            geom: &s.geom,
            grid: &s.grid,
        };
        let coarse = CoarseRis {
            zeta,
            xi,
            angle,
            freq: ris_spatial_freq(&s.geom, angle),
            objective: 0.0,
            clamped: false,
            index: [0; 4],
        };
        let r = prob.alternate(&coarse, &NewtonSettings::default());
        assert!(r.converged);
        assert_eq!(r.cycles, 1);
        assert!((r.zeta - zeta).abs() < 1e-12 && (r.xi - xi).abs() < 1e-14);
        assert!((r.angle.azimuth - angle.azimuth).abs() < 1e-12);
        assert!((r.angle.elevation - angle.elevation).abs() < 1e-12);
    }

    #[test]
    fn refinement_recovers_perturbed_start() {
        let (s, y, angle, zeta, xi) = truth_setup();
        let prob = RisProblem {
            ytilde: &y,
            plan: &s.plan,
            geom: &s.geom,
            grid: &s.grid,
        };
        let start = CoarseRis {
            zeta: zeta + 0.25 / s.grid.zeta as f64,
            xi,
            angle,
            freq: ris_spatial_freq(&s.geom, angle),
            objective: 0.0,
            clamped: false,
            index: [0; 4],
        };
        let r = prob.alternate(&start, &NewtonSettings::default());
        assert!((r.zeta - zeta).abs() < 1e-8, "{}", r.zeta - zeta);
        assert!(((r.xi - xi) * s.plan.symbol_len as f64).abs() < 1e-8);
        assert!((r.angle.azimuth - angle.azimuth).abs() < 1e-8);
        assert!((r.angle.elevation - angle.elevation).abs() < 1e-8);
    }

    #[test]
    fn coarse_then_refine_recovers_off_grid_path() {
        let (s, y, angle, zeta, xi) = truth_setup();
        let den = RisDenominator::new(&s.plan, &s.geom, &s.grid).unwrap();
        let coarse = coarse_ris(&y, &s.plan, &s.geom, &s.grid, &den).unwrap();
        let prob = RisProblem {
            ytilde: &y,
            plan: &s.plan,
            geom: &s.geom,
            grid: &s.grid,
        };
        let r = prob.alternate(&coarse, &NewtonSettings::default());
        assert!((r.zeta - zeta).abs() < 1e-8);
        assert!(((r.xi - xi) * s.plan.symbol_len as f64).abs() < 1e-8);
        assert!((r.angle.azimuth - angle.azimuth).abs() < 1e-8);
        let g = prob.gain(r.zeta, r.xi, r.angle);
        assert!((g - C::new(0.8, -0.4)).norm() < 1e-8);
    }

    fn gain_ratio(delay: f64, gain: C) -> C {
        let pilot = ZcPilot::new(1024, 64, 600, 0.3).unwrap();
        let s = small_with(2, 0, 11, pilot);
        let path = RisPath {
            delay,
            doppler: 0.0,
            azimuth: 1.3,
            elevation: 1.1,
            gain,
        };
        let scene = Scene {
            ris_paths: vec![path],
            direct_paths: vec![],
        };
        let y = noiseless(&scene, &s.plan, &s.geom, &s.pilot, PilotModel::Ideal, Stage::RisOn).unwrap();
        let yt = compensate(&y, &s.pilot);
        let prob = RisProblem {
            ytilde: &yt,
            plan: &s.plan,
            geom: &s.geom,
            grid: &s.grid,
        };
        prob.gain(-delay / 1024.0, 0.0, path.angle()) / gain
    }

    #[test]
    fn gain_of_undelayed_unit_path_is_one() {
        assert!((gain_ratio(0.0, C::new(1.0, 0.0)) - 1.0).norm() < 1e-12);
    }

    #[test]
    fn gain_carries_chirp_phase_of_delay() {
        let r = gain_ratio(0.5, C::from_polar(0.7, 0.4));
        let want = C::from_polar(1.0, PI * 0.25 / 1024.0);
        assert!((r - want).norm() < 1e-12, "{r} vs {want}");
    }
}
