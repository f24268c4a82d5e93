//! Space-alternating multipath decomposition and the two-stage protocol
//! (direct link from the RIS-off block, then RIS paths from the RIS-on
//! block with the projected direct link removed).
//!
//! Each M-step re-runs the coarse search on its path's residual, refines
//! it, and keeps whichever of the new or previous parameters explains more
//! of that residual. With the closed-form gain this makes the residual norm
//! nonincreasing after every M-step.

use std::f64::consts::PI;

use itertools::Itertools;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coarse::{coarse_direct, coarse_ris, CoarseDirect, CoarseRis, GridSpec, RisDenominator};
use crate::error::{dimension, Result};
use crate::geometry::{
    bs_response, bs_spatial_freq, ris_response, ris_spatial_freq, Angle2D, ArrayGeometry,
};
use crate::pilot::{doppler_window, ZcPilot};
use crate::refine::{DirectProblem, NewtonSettings, RisProblem};
use crate::scene::{DirectPath, ObservationPlan, RisPath};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageSettings {
    pub max_cycles: usize,
    pub rel_tol: f64,
    pub newton: NewtonSettings,
}

impl Default for SageSettings {
    fn default() -> Self {
        Self {
            max_cycles: 10,
            rel_tol: 1e-6,
            newton: NewtonSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RisPathEstimate {
    pub zeta: f64,
    pub xi: f64,
    pub azimuth: f64,
    pub elevation: f64,
    /// Gain with the chirp phase still attached.
    pub gain_tilde: C,
    pub delay: f64,
    pub gain: C,
    pub clamped: bool,
}

impl RisPathEstimate {
    fn new(zeta: f64, xi: f64, angle: Angle2D, gain_tilde: C, zc_len: usize, clamped: bool) -> Self {
        let l = zc_len as f64;
        let delay = (xi - zeta) * l;
        Self {
            zeta,
            xi,
            azimuth: angle.azimuth,
            elevation: angle.elevation,
            gain_tilde,
            delay,
            gain: gain_tilde * C::from_polar(1.0, -PI * delay * delay / l),
            clamped,
        }
    }

    pub fn angle(&self) -> Angle2D {
        Angle2D {
            azimuth: self.azimuth,
            elevation: self.elevation,
        }
    }

    /// Refinement start and box centre at this estimate.
    fn as_anchor(&self, geom: &ArrayGeometry) -> CoarseRis {
        CoarseRis {
            zeta: self.zeta,
            xi: self.xi,
            angle: self.angle(),
            freq: ris_spatial_freq(geom, self.angle()),
            objective: 0.0,
            clamped: self.clamped,
            index: [0; 4],
        }
    }

    pub fn to_path(&self) -> RisPath {
        RisPath {
            delay: self.delay,
            doppler: self.xi,
            azimuth: self.azimuth,
            elevation: self.elevation,
            gain: self.gain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectPathEstimate {
    pub zeta: f64,
    pub xi: f64,
    pub azimuth: f64,
    pub gain_tilde: C,
    pub delay: f64,
    pub gain: C,
    pub doppler_identified: bool,
}

impl DirectPathEstimate {
    fn new(zeta: f64, xi: f64, azimuth: f64, gain_tilde: C, zc_len: usize, identified: bool) -> Self {
        let l = zc_len as f64;
        let delay = (xi - zeta) * l;
        Self {
            zeta,
            xi,
            azimuth,
            gain_tilde,
            delay,
            gain: gain_tilde * C::from_polar(1.0, -PI * delay * delay / l),
            doppler_identified: identified,
        }
    }

    fn as_anchor(&self, geom: &ArrayGeometry) -> CoarseDirect {
        CoarseDirect {
            zeta: self.zeta,
            xi: self.xi,
            azimuth: self.azimuth,
            freq: bs_spatial_freq(geom, self.azimuth),
            objective: 0.0,
            clamped: false,
            doppler_identified: self.doppler_identified,
            index: [0; 3],
        }
    }

    pub fn to_path(&self) -> DirectPath {
        DirectPath {
            delay: self.delay,
            doppler: self.xi,
            azimuth: self.azimuth,
            gain: self.gain,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub ris_paths: Vec<RisPathEstimate>,
    pub direct_paths: Vec<DirectPathEstimate>,
    /// Frobenius norm of the final residual of the last stage.
    pub residual_norm: f64,
    /// Residual norm after every M-step, in order.
    pub residual_trace: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
}

impl EstimateReport {
    pub fn ris_scene(&self) -> Vec<RisPath> {
        self.ris_paths.iter().map(RisPathEstimate::to_path).collect()
    }

    pub fn direct_scene(&self) -> Vec<DirectPath> {
        self.direct_paths.iter().map(DirectPathEstimate::to_path).collect()
    }
}

fn frob(y: &Array2<C>) -> f64 {
    y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `beta~ W(xi) a d(zeta)^T` over `K` observations.
pub fn ris_contribution(
    est: &RisPathEstimate,
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    window: usize,
) -> Result<Array2<C>> {
    let a = ris_response(geom, est.angle())?;
    let col = plan.steer(&a, est.xi).mapv(|v| v * est.gain_tilde);
    let d = doppler_window(window, est.zeta);
    Ok(Array2::from_shape_fn((col.len(), window), |(i, n)| col[i] * d[n]))
}

/// `alpha~ B(xi) c d(zeta)^T` over `count` observations starting
/// `offset` symbols after the RIS-off reference.
pub fn direct_contribution(
    est: &DirectPathEstimate,
    geom: &ArrayGeometry,
    count: usize,
    offset: usize,
    symbol_len: usize,
    window: usize,
) -> Result<Array2<C>> {
    let c = bs_response(geom, est.azimuth)?;
    let m_r = c.len();
    let d = doppler_window(window, est.zeta);
    let ph: Vec<C> = (0..count)
        .map(|k| {
            C::from_polar(1.0, 2.0 * PI * est.xi * ((k + offset) * symbol_len) as f64)
                * est.gain_tilde
        })
        .collect();
    Ok(Array2::from_shape_fn((count * m_r, window), |(i, n)| {
        ph[i / m_r] * c[i % m_r] * d[n]
    }))
}

/// Projection of estimated direct paths into the RIS-on block.
pub fn direct_background(
    paths: &[DirectPathEstimate],
    plan: &ObservationPlan,
    geom: &ArrayGeometry,
    window: usize,
) -> Result<Array2<C>> {
    let mut out = Array2::zeros((plan.k * geom.bs_antennas, window));
    for p in paths {
        out += &direct_contribution(p, geom, plan.k, plan.k_off, plan.symbol_len, window)?;
    }
    Ok(out)
}

/// Estimator bound to one geometry, pilot, observation plan and grid.
#[derive(Debug, Clone)]
pub struct Estimator<'a> {
    pub geom: &'a ArrayGeometry,
    pub pilot: &'a ZcPilot,
    pub plan: &'a ObservationPlan,
    pub grid: &'a GridSpec,
    pub settings: SageSettings,
    den: RisDenominator,
}

impl<'a> Estimator<'a> {
    pub fn new(
        geom: &'a ArrayGeometry,
        pilot: &'a ZcPilot,
        plan: &'a ObservationPlan,
        grid: &'a GridSpec,
        settings: SageSettings,
    ) -> Result<Self> {
        if plan.symbol_len != pilot.symbol_len() {
            return Err(dimension("plan and pilot symbol lengths differ"));
        }
        let den = RisDenominator::new(plan, geom, grid)?;
        Ok(Self {
            geom,
            pilot,
            plan,
            grid,
            settings,
            den,
        })
    }

    pub fn denominator(&self) -> &RisDenominator {
        &self.den
    }

    fn ris_problem<'b>(&'b self, y: &'b Array2<C>) -> RisProblem<'b> {
        RisProblem {
            ytilde: y,
            plan: self.plan,
            geom: self.geom,
            grid: self.grid,
        }
    }

    fn direct_problem<'b>(&'b self, y: &'b Array2<C>) -> DirectProblem<'b> {
        DirectProblem {
            ytilde: y,
            observations: self.plan.k_off,
            symbol_len: self.plan.symbol_len,
            geom: self.geom,
            grid: self.grid,
        }
    }

    /// Coarse search, alternating refinement and gain for one RIS path.
    pub fn single_ris(&self, ytilde: &Array2<C>) -> Result<RisPathEstimate> {
        let coarse = coarse_ris(ytilde, self.plan, self.geom, self.grid, &self.den)?;
        let prob = self.ris_problem(ytilde);
        let r = prob.alternate(&coarse, &self.settings.newton);
        let g = prob.gain(r.zeta, r.xi, r.angle);
        Ok(RisPathEstimate::new(
            r.zeta,
            r.xi,
            r.angle,
            g,
            self.pilot.zc_len,
            coarse.clamped,
        ))
    }

    /// Coarse search, refinement and gain for one direct path.
    pub fn single_direct(&self, ytilde: &Array2<C>) -> Result<DirectPathEstimate> {
        let coarse = coarse_direct(
            ytilde,
            self.plan.k_off,
            self.geom,
            self.grid,
            self.plan.symbol_len,
        )?;
        let prob = self.direct_problem(ytilde);
        let r = prob.refine(&coarse, &self.settings.newton);
        let g = prob.gain(r.zeta, r.xi, r.azimuth);
        Ok(DirectPathEstimate::new(
            r.zeta,
            r.xi,
            r.azimuth,
            g,
            self.pilot.zc_len,
            coarse.doppler_identified,
        ))
    }

    /// SAGE over `paths` RIS paths. `background` is subtracted from the
    /// data before every E-step.
    pub fn sage_ris(
        &self,
        ytilde: &Array2<C>,
        paths: usize,
        background: Option<&Array2<C>>,
    ) -> Result<EstimateReport> {
        let window = ytilde.ncols();
        let mut residual = match background {
            Some(b) => {
                if b.dim() != ytilde.dim() {
                    return Err(dimension("background and data shapes differ"));
                }
                ytilde - b
            }
            None => ytilde.clone(),
        };
        let mut ests: Vec<Option<(RisPathEstimate, Array2<C>)>> = vec![None; paths];
        let mut trace = Vec::new();
        let mut prev = frob(&residual);
        let mut converged = paths == 0;
        let mut cycles = 0;
        while cycles < self.settings.max_cycles && paths > 0 {
            cycles += 1;
            for slot in ests.iter_mut() {
                let target = match slot {
                    Some((_, contrib)) => &residual + &*contrib,
                    None => residual.clone(),
                };
                let mut cand = self.single_ris(&target)?;
                if let Some((old, _)) = slot.as_ref() {
                    let prob = self.ris_problem(&target);
                    let j_new = prob.objective(cand.zeta, cand.xi, cand.angle());
                    let warm = prob.alternate(&old.as_anchor(self.geom), &self.settings.newton);
                    if warm.objective > j_new {
                        let g = prob.gain(warm.zeta, warm.xi, warm.angle);
                        cand = RisPathEstimate::new(
                            warm.zeta,
                            warm.xi,
                            warm.angle,
                            g,
                            self.pilot.zc_len,
                            old.clamped,
                        );
                    }
                }
                let contrib = ris_contribution(&cand, self.plan, self.geom, window)?;
                residual = &target - &contrib;
                trace.push(frob(&residual));
                *slot = Some((cand, contrib));
            }
            let now = frob(&residual);
            // A single path sees the same data every cycle.
            let done = paths == 1
                || prev == 0.0
                || (cycles > 1 && (prev - now) / prev < self.settings.rel_tol);
            prev = now;
            if done {
                converged = true;
                break;
            }
        }
        Ok(EstimateReport {
            ris_paths: ests.into_iter().flatten().map(|(e, _)| e).collect(),
            direct_paths: Vec::new(),
            residual_norm: frob(&residual),
            residual_trace: trace,
            cycles,
            converged,
        })
    }

    /// SAGE over `paths` direct paths on the RIS-off block.
    pub fn sage_direct(&self, ytilde_off: &Array2<C>, paths: usize) -> Result<EstimateReport> {
        let window = ytilde_off.ncols();
        let (count, n) = (self.plan.k_off, self.plan.symbol_len);
        let mut residual = ytilde_off.clone();
        let mut ests: Vec<Option<(DirectPathEstimate, Array2<C>)>> = vec![None; paths];
        let mut trace = Vec::new();
        let mut prev = frob(&residual);
        let mut converged = paths == 0;
        let mut cycles = 0;
        while cycles < self.settings.max_cycles && paths > 0 {
            cycles += 1;
            for slot in ests.iter_mut() {
                let target = match slot {
                    Some((_, contrib)) => &residual + &*contrib,
                    None => residual.clone(),
                };
                let mut cand = self.single_direct(&target)?;
                if let Some((old, _)) = slot.as_ref() {
                    let prob = self.direct_problem(&target);
                    let j_new = prob.value(cand.zeta, cand.xi, cand.azimuth);
                    let warm = prob.refine(&old.as_anchor(self.geom), &self.settings.newton);
                    if warm.objective > j_new {
                        let g = prob.gain(warm.zeta, warm.xi, warm.azimuth);
                        cand = DirectPathEstimate::new(
                            warm.zeta,
                            warm.xi,
                            warm.azimuth,
                            g,
                            self.pilot.zc_len,
                            old.doppler_identified,
                        );
                    }
                }
                let contrib = direct_contribution(&cand, self.geom, count, 0, n, window)?;
                residual = &target - &contrib;
                trace.push(frob(&residual));
                *slot = Some((cand, contrib));
            }
            let now = frob(&residual);
            // A single path sees the same data every cycle.
            let done = paths == 1
                || prev == 0.0
                || (cycles > 1 && (prev - now) / prev < self.settings.rel_tol);
            prev = now;
            if done {
                converged = true;
                break;
            }
        }
        Ok(EstimateReport {
            ris_paths: Vec::new(),
            direct_paths: ests.into_iter().flatten().map(|(e, _)| e).collect(),
            residual_norm: frob(&residual),
            residual_trace: trace,
            cycles,
            converged,
        })
    }

    /// Two-stage estimation: direct paths from the RIS-off block, then RIS
    /// paths from the RIS-on block with the projected direct link removed.
    pub fn estimate_full(
        &self,
        ytilde_off: &Array2<C>,
        ytilde_on: &Array2<C>,
        ris_paths: usize,
        direct_paths: usize,
    ) -> Result<EstimateReport> {
        if direct_paths == 0 {
            return self.sage_ris(ytilde_on, ris_paths, None);
        }
        let stage1 = self.sage_direct(ytilde_off, direct_paths)?;
        let background =
            direct_background(&stage1.direct_paths, self.plan, self.geom, ytilde_on.ncols())?;
        let mut stage2 = self.sage_ris(ytilde_on, ris_paths, Some(&background))?;
        stage2.direct_paths = stage1.direct_paths;
        stage2.converged &= stage1.converged;
        Ok(stage2)
    }
}

/// Assignment of estimated to true paths minimising the summed squared
/// normalised parameter error. Entry `i` is the estimate matched to true
/// path `i`, or `None` when there are fewer estimates than true paths.
pub fn match_paths(est: &[RisPath], truth: &[RisPath]) -> Vec<Option<usize>> {
    let cost = |e: &RisPath, t: &RisPath| {
        let dt = e.delay - t.delay;
        let dx = (e.doppler - t.doppler) * 1e4;
        let da = e.azimuth - t.azimuth;
        let de = e.elevation - t.elevation;
        dt * dt + dx * dx + da * da + de * de
    };
    let (n, m) = (truth.len(), est.len());
    let mut best = (f64::INFINITY, vec![None; n]);
    if m >= n {
        for perm in (0..m).permutations(n) {
            let c: f64 = perm.iter().enumerate().map(|(t, &e)| cost(&est[e], &truth[t])).sum();
            if c < best.0 {
                best = (c, perm.into_iter().map(Some).collect());
            }
        }
    } else {
        for perm in (0..n).permutations(m) {
            let c: f64 = perm.iter().enumerate().map(|(e, &t)| cost(&est[e], &truth[t])).sum();
            if c < best.0 {
                let mut assign = vec![None; n];
                for (e, &t) in perm.iter().enumerate() {
                    assign[t] = Some(e);
                }
                best = (c, assign);
            }
        }
    }
    best.1
}
