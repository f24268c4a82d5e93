//! Experiment configuration, the Monte-Carlo driver and CSV/JSON output.
//!
//! Angles are given in degrees, delays in samples and Dopplers in cycles
//! per sample in the configuration only; everything downstream is radians.
//! Every trial draws from its own ChaCha stream keyed by `(seed, trial)`
//! for the scene and schedule and by `(seed, snr index, trial)` for noise,
//! so results do not depend on thread count or scheduling.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::coarse::GridSpec;
use crate::crb::fim;
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::pilot::ZcPilot;
use crate::recon::{projection_time, rmse_factored, Rank1Sum};
use crate::sage::{direct_background, match_paths, Estimator, SageSettings};
use crate::scene::{generate_g, random_phases, DirectPath, GModel, ObservationPlan, RisPath, Scene};
use crate::synth::{
    compensate, mean_power, noise_variance, noiseless, simulate, simulate_two_stage, PilotModel,
    ReceivedBlock, Stage,
};

pub const SCHEMA: &str = "rischan-metrics/1";

/// SNR in dB; `"inf"` in JSON means noiseless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub f64);

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Snr(v)),
            Raw::Text(t) if t == "inf" => Ok(Snr(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown SNR value {t:?}"))),
        }
    }
}

impl std::fmt::Display for Snr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub bs_antennas: usize,
    #[serde(default = "half")]
    pub ris_dx: f64,
    #[serde(default = "half")]
    pub ris_dz: f64,
    #[serde(default = "half")]
    pub bs_dx: f64,
    #[serde(default = "one")]
    pub wavelength: f64,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

impl GeometrySpec {
    pub fn build(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.ris_rows,
            self.ris_cols,
            self.bs_antennas,
            self.ris_dx,
            self.ris_dz,
            self.bs_dx,
            self.wavelength,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotSpec {
    pub zc_len: usize,
    pub cp_len: usize,
    pub window: usize,
    pub rolloff: f64,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_max_delay")]
    pub max_delay: f64,
    #[serde(default)]
    pub advance: f64,
}

fn default_oversample() -> usize {
    8
}

fn default_max_delay() -> f64 {
    8.0
}

impl PilotSpec {
    fn unchecked(&self) -> ZcPilot {
        ZcPilot {
            zc_len: self.zc_len,
            cp_len: self.cp_len,
            window: self.window,
            rolloff: self.rolloff,
            oversample: self.oversample,
            max_delay: self.max_delay,
            advance: self.advance,
        }
    }

    pub fn build(&self) -> Result<ZcPilot> {
        let p = self.unchecked();
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisPathSpec {
    pub delay: f64,
    pub doppler: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub gain_mag: f64,
    /// Drawn uniformly per trial when absent.
    #[serde(default)]
    pub gain_phase_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectPathSpec {
    pub delay: f64,
    pub doppler: f64,
    pub azimuth_deg: f64,
    pub gain_mag: f64,
    #[serde(default)]
    pub gain_phase_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub ris_paths: Vec<RisPathSpec>,
    #[serde(default)]
    pub direct_paths: Vec<DirectPathSpec>,
}

fn gain<R: Rng + ?Sized>(mag: f64, phase_deg: Option<f64>, rng: &mut R) -> Complex64 {
    let ph = match phase_deg {
        Some(d) => d.to_radians(),
        None => rng.gen_range(0.0..2.0 * PI),
    };
    Complex64::from_polar(mag, ph)
}

impl SceneSpec {
    /// Draws one scene; random gain phases come from `rng` in path order.
    pub fn realise<R: Rng + ?Sized>(&self, rng: &mut R) -> Scene {
        Scene {
            ris_paths: self
                .ris_paths
                .iter()
                .map(|p| RisPath {
                    delay: p.delay,
                    doppler: p.doppler,
                    azimuth: p.azimuth_deg.to_radians(),
                    elevation: p.elevation_deg.to_radians(),
                    gain: gain(p.gain_mag, p.gain_phase_deg, rng),
                })
                .collect(),
            direct_paths: self
                .direct_paths
                .iter()
                .map(|p| DirectPath {
                    delay: p.delay,
                    doppler: p.doppler,
                    azimuth: p.azimuth_deg.to_radians(),
                    gain: gain(p.gain_mag, p.gain_phase_deg, rng),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    /// RIS-on observations `K`.
    pub k: usize,
    /// RIS-off observations `K-bar`.
    #[serde(default)]
    pub k_off: usize,
    /// Must equal `zc_len + cp_len` when given.
    #[serde(default)]
    pub symbol_len: Option<usize>,
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default)]
    pub g_model: GModel,
    #[serde(default)]
    pub g_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub geometry: GeometrySpec,
    pub pilot: PilotSpec,
    pub scene: SceneSpec,
    pub plan: PlanSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub estimator: SageSettings,
    #[serde(default)]
    pub pilot_model: PilotModel,
    pub snr_db: Vec<Snr>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub projection_offsets: Vec<usize>,
    #[serde(default)]
    pub compute_crb: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Every violated constraint, not just the first.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.geometry.build() {
            out.push(format!("geometry: {e}"));
        }
        let pilot = self.pilot.unchecked();
        out.extend(pilot.issues().into_iter().map(|m| format!("pilot.{m}")));
        if let Err(e) = self.grid.validate() {
            out.push(e.to_string());
        }
        let n = self.pilot.zc_len + self.pilot.cp_len;
        if let Some(s) = self.plan.symbol_len {
            if s != n {
                out.push(format!("plan.symbol_len: {s} differs from zc_len + cp_len = {n}"));
            }
        }
        if self.plan.k == 0 {
            out.push("plan.k: at least one RIS-on observation is required".into());
        }
        if !(self.plan.efficiency > 0.0 && self.plan.efficiency <= 1.0) {
            out.push(format!("plan.efficiency: must lie in (0, 1], got {}", self.plan.efficiency));
        }
        if let GModel::NearField { distance } = self.plan.g_model {
            if !(distance.is_finite() && distance > 0.0) {
                out.push(format!("plan.g_model.distance: must be positive, got {distance}"));
            }
        }
        if !self.scene.direct_paths.is_empty() && self.plan.k_off == 0 {
            out.push("plan.k_off: direct paths need at least one RIS-off observation".into());
        }
        if self.scene.ris_paths.is_empty() {
            out.push("scene.ris_paths: at least one RIS path is required".into());
        }
        let xi_lim = 0.5 / n.max(1) as f64;
        let angle = |v: f64| v > 0.0 && v < 180.0;
        for (i, p) in self.scene.ris_paths.iter().enumerate() {
            let f = format!("scene.ris_paths[{i}]");
            if !(p.delay.abs() <= self.pilot.max_delay) {
                out.push(format!("{f}.delay: {} exceeds max_delay {}", p.delay, self.pilot.max_delay));
            }
            if !(p.doppler.abs() < xi_lim) {
                out.push(format!("{f}.doppler: {} outside +-{xi_lim}", p.doppler));
            }
            if !angle(p.azimuth_deg) {
                out.push(format!("{f}.azimuth_deg: {} outside (0, 180)", p.azimuth_deg));
            }
            if !angle(p.elevation_deg) {
                out.push(format!("{f}.elevation_deg: {} outside (0, 180)", p.elevation_deg));
            }
            if !(p.gain_mag.is_finite() && p.gain_mag > 0.0) {
                out.push(format!("{f}.gain_mag: must be positive"));
            }
        }
        for (i, p) in self.scene.direct_paths.iter().enumerate() {
            let f = format!("scene.direct_paths[{i}]");
            if !(p.delay.abs() <= self.pilot.max_delay) {
                out.push(format!("{f}.delay: {} exceeds max_delay {}", p.delay, self.pilot.max_delay));
            }
            if !(p.doppler.abs() < xi_lim) {
                out.push(format!("{f}.doppler: {} outside +-{xi_lim}", p.doppler));
            }
            if !angle(p.azimuth_deg) {
                out.push(format!("{f}.azimuth_deg: {} outside (0, 180)", p.azimuth_deg));
            }
            if !(p.gain_mag.is_finite() && p.gain_mag > 0.0) {
                out.push(format!("{f}.gain_mag: must be positive"));
            }
        }
        if self.trials == 0 {
            out.push("trials: must be at least 1".into());
        }
        if self.snr_db.is_empty() {
            out.push("snr_db: at least one SNR point is required".into());
        }
        for (i, s) in self.snr_db.iter().enumerate() {
            if s.0.is_nan() || s.0 == f64::NEG_INFINITY {
                out.push(format!("snr_db[{i}]: must be a number or \"inf\""));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues.join("; ")))
        }
    }
}

/// ChaCha stream for `(seed, tag, a, b)`.
pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, tag, a, b].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

const TAG_SCENE: u64 = 1;
const TAG_NOISE: u64 = 2;

/// One output row. `trial` is `None` for aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub snr_db: Snr,
    pub metric: &'static str,
    pub value: f64,
    pub trial: Option<usize>,
    pub offset: Option<usize>,
}

/// How trial values of a metric are reduced to the aggregate row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reduce {
    Mean,
    QuadraticMean,
}

fn reduction(metric: &str) -> Reduce {
    if metric.starts_with("rmse_") {
        Reduce::QuadraticMean
    } else {
        Reduce::Mean
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<Row>,
    pub nonconverged: usize,
}

impl ExperimentResult {
    pub fn mean(&self, snr: f64, metric: &str, offset: Option<usize>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.trial.is_none() && r.metric == metric && r.offset == offset && same_snr(r.snr_db.0, snr)
            })
            .map(|r| r.value)
    }

    pub fn per_trial(&self, snr: f64, metric: &str, offset: Option<usize>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| {
                r.trial.is_some() && r.metric == metric && r.offset == offset && same_snr(r.snr_db.0, snr)
            })
            .map(|r| r.value)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# schema={SCHEMA}\nsnr_db,metric,value,trial,projection_offset\n");
        for r in &self.rows {
            let trial = r.trial.map_or("mean".to_string(), |t| t.to_string());
            let off = r.offset.map_or(String::new(), |o| o.to_string());
            let _ = writeln!(s, "{},{},{:e},{},{}", r.snr_db, r.metric, r.value, trial, off);
        }
        s
    }
}

fn same_snr(a: f64, b: f64) -> bool {
    a == b || (a.is_infinite() && b.is_infinite() && a.signum() == b.signum())
}

struct Fixed {
    geom: ArrayGeometry,
    pilot: ZcPilot,
    g: ndarray::Array2<Complex64>,
}

fn fixed(cfg: &ExperimentConfig) -> Result<Fixed> {
    cfg.validate()?;
    let geom = cfg.geometry.build()?;
    let pilot = cfg.pilot.build()?;
    let mut grng = stream(cfg.plan.g_seed, 0, 0, 0);
    let g = generate_g(&geom, cfg.plan.g_model, &mut grng)?;
    Ok(Fixed { geom, pilot, g })
}

fn trial_setup(cfg: &ExperimentConfig, fx: &Fixed, trial: usize) -> Result<(Scene, ObservationPlan)> {
    let mut rng = stream(cfg.seed, TAG_SCENE, trial as u64, 0);
    let scene = cfg.scene.realise(&mut rng);
    let phases = random_phases(cfg.plan.k, fx.geom.ris_elements(), &mut rng);
    let plan = ObservationPlan::new(
        cfg.plan.k_off,
        fx.pilot.symbol_len(),
        cfg.plan.efficiency,
        phases,
        fx.g.clone(),
    )?;
    Ok((scene, plan))
}

type TrialRows = Vec<(&'static str, f64, Option<usize>)>;

fn blocks(
    cfg: &ExperimentConfig,
    fx: &Fixed,
    scene: &Scene,
    plan: &ObservationPlan,
    snr_idx: usize,
    trial: usize,
) -> Result<(Option<ReceivedBlock>, ReceivedBlock)> {
    let snr = cfg.snr_db[snr_idx].0;
    let mut rng = stream(cfg.seed, TAG_NOISE, snr_idx as u64, trial as u64);
    let (geom, pilot) = (&fx.geom, &fx.pilot);
    if scene.direct_paths.is_empty() {
        let on = simulate(scene, plan, geom, pilot, cfg.pilot_model, Stage::RisOn, snr, &mut rng)?;
        Ok((None, on))
    } else {
        let (off, on) = simulate_two_stage(scene, plan, geom, pilot, cfg.pilot_model, snr, &mut rng)?;
        Ok((Some(off), on))
    }
}

/// The scene and observation plan [`run_experiment`] uses for one trial.
pub fn trial_inputs(cfg: &ExperimentConfig, trial: usize) -> Result<(Scene, ObservationPlan)> {
    let fx = fixed(cfg)?;
    trial_setup(cfg, &fx, trial)
}

/// The received blocks (RIS-off when the scene has direct paths, and
/// RIS-on) that [`run_experiment`] sees for one trial and SNR index.
pub fn synthesize(
    cfg: &ExperimentConfig,
    snr_idx: usize,
    trial: usize,
) -> Result<(Option<ReceivedBlock>, ReceivedBlock)> {
    if snr_idx >= cfg.snr_db.len() {
        return Err(Error::Config(format!(
            "snr index {snr_idx} out of range for {} SNR points",
            cfg.snr_db.len()
        )));
    }
    let fx = fixed(cfg)?;
    let (scene, plan) = trial_setup(cfg, &fx, trial)?;
    blocks(cfg, &fx, &scene, &plan, snr_idx, trial)
}

fn run_trial(
    cfg: &ExperimentConfig,
    fx: &Fixed,
    snr_idx: usize,
    trial: usize,
) -> Result<(TrialRows, bool)> {
    let (scene, plan) = trial_setup(cfg, fx, trial)?;
    let (geom, pilot) = (&fx.geom, &fx.pilot);
    let (u, d) = (scene.ris_paths.len(), scene.direct_paths.len());
    let est = Estimator::new(geom, pilot, &plan, &cfg.grid, cfg.estimator)?;
    let (off, on) = blocks(cfg, fx, &scene, &plan, snr_idx, trial)?;
    let noise_var = on.noise_var;
    let report = match off {
        Some(off) => est.estimate_full(&off.compensated(pilot), &on.compensated(pilot), u, d)?,
        None => est.sage_ris(&on.compensated(pilot), u, None)?,
    };

    let mut rows: TrialRows = Vec::new();
    let est_ris = report.ris_scene();
    let assign = match_paths(&est_ris, &scene.ris_paths);
    let mut se = [0.0; 4];
    for (t, e) in scene.ris_paths.iter().zip(&assign) {
        let e = &est_ris[e.expect("one estimate per path")];
        let diffs = [
            e.delay - t.delay,
            e.doppler - t.doppler,
            e.azimuth - t.azimuth,
            e.elevation - t.elevation,
        ];
        for (s, v) in se.iter_mut().zip(diffs) {
            *s += v * v;
        }
    }
    for (name, s) in ["rmse_tau", "rmse_xi", "rmse_theta", "rmse_phi"].into_iter().zip(se) {
        rows.push((name, (s / u as f64).sqrt(), None));
    }

    if cfg.compute_crb && d == 0 && noise_var > 0.0 {
        let c = fim(&scene.ris_paths, &plan, geom, pilot, noise_var)?;
        let mean = |f: fn(&crate::crb::PathBounds) -> f64| {
            (c.bounds.iter().map(f).sum::<f64>() / u as f64).sqrt()
        };
        rows.push(("sqrt_crb_tau", mean(|b| b.tau), None));
        rows.push(("sqrt_crb_xi", mean(|b| b.xi), None));
        rows.push(("sqrt_crb_theta", mean(|b| b.theta), None));
        rows.push(("sqrt_crb_phi", mean(|b| b.phi), None));
    }

    let truth0 = Rank1Sum::ris(&scene.ris_paths, geom, pilot, 0.0)?;
    let est0 = Rank1Sum::ris(&est_ris, geom, pilot, 0.0)?;
    rows.push(("chan_ris", rmse_factored(&est0, &truth0)?, None));
    rows.push(("chan_ris_rms", (truth0.norm_sq() / truth0.entries() as f64).sqrt(), None));
    for &j in &cfg.projection_offsets {
        let t = projection_time(&plan, pilot, j);
        let truth = Rank1Sum::ris(&scene.ris_paths, geom, pilot, t)?;
        let proj = Rank1Sum::ris(&est_ris, geom, pilot, t)?;
        rows.push(("chan_ris_proj", rmse_factored(&proj, &truth)?, Some(j)));
        rows.push(("chan_ris_stale", rmse_factored(&est0, &truth)?, Some(j)));
    }

    if d > 0 {
        let est_d = report.direct_scene();
        let truth0 = Rank1Sum::direct(&scene.direct_paths, geom, pilot, &plan, 0.0)?;
        let e0 = Rank1Sum::direct(&est_d, geom, pilot, &plan, 0.0)?;
        rows.push(("chan_bs", rmse_factored(&e0, &truth0)?, None));
        rows.push(("chan_bs_rms", (truth0.norm_sq() / truth0.entries() as f64).sqrt(), None));
        for &j in &cfg.projection_offsets {
            let t = projection_time(&plan, pilot, j);
            let truth = Rank1Sum::direct(&scene.direct_paths, geom, pilot, &plan, t)?;
            let proj = Rank1Sum::direct(&est_d, geom, pilot, &plan, t)?;
            rows.push(("chan_bs_proj", rmse_factored(&proj, &truth)?, Some(j)));
            rows.push(("chan_bs_stale", rmse_factored(&e0, &truth)?, Some(j)));
        }
        let only_direct = Scene {
            ris_paths: Vec::new(),
            direct_paths: scene.direct_paths.clone(),
        };
        let true_direct = compensate(
            &noiseless(&only_direct, &plan, geom, pilot, cfg.pilot_model, Stage::RisOn)?,
            pilot,
        );
        let full_on = noiseless(&scene, &plan, geom, pilot, cfg.pilot_model, Stage::RisOn)?;
        let bg = direct_background(&report.direct_paths, &plan, geom, pilot.window)?;
        let resid: f64 = (&true_direct - &bg).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let on_norm = (mean_power(&full_on) * full_on.len() as f64).sqrt();
        rows.push(("cancel_residual", resid / on_norm, None));
    }

    rows.push(("cycles", report.cycles as f64, None));
    rows.push(("converged", if report.converged { 1.0 } else { 0.0 }, None));
    Ok((rows, report.converged))
}

fn aggregate(snr: Snr, per_trial: &[TrialRows]) -> Vec<Row> {
    let mut keys: Vec<(&'static str, Option<usize>)> = Vec::new();
    for rows in per_trial {
        for (m, _, o) in rows {
            if !keys.contains(&(*m, *o)) {
                keys.push((*m, *o));
            }
        }
    }
    keys.into_iter()
        .map(|(metric, offset)| {
            let vals: Vec<f64> = per_trial
                .iter()
                .flat_map(|r| r.iter().filter(|(m, _, o)| *m == metric && *o == offset))
                .map(|(_, v, _)| *v)
                .collect();
            let n = vals.len().max(1) as f64;
            let value = match reduction(metric) {
                Reduce::Mean => vals.iter().sum::<f64>() / n,
                Reduce::QuadraticMean => (vals.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            };
            Row {
                snr_db: snr,
                metric,
                value,
                trial: None,
                offset,
            }
        })
        .collect()
}

/// Runs every (SNR, trial) pair on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let fx = fixed(cfg)?;
    let mut rows = Vec::new();
    let mut nonconverged = 0;
    for (si, snr) in cfg.snr_db.iter().enumerate() {
        let results: Vec<Result<(TrialRows, bool)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &fx, si, t))
            .collect();
        let mut per_trial = Vec::with_capacity(cfg.trials);
        for (t, r) in results.into_iter().enumerate() {
            let (tr, conv) = r?;
            if !conv {
                nonconverged += 1;
            }
            rows.extend(tr.iter().map(|(metric, value, offset)| Row {
                snr_db: *snr,
                metric,
                value: *value,
                trial: Some(t),
                offset: *offset,
            }));
            per_trial.push(tr);
        }
        rows.extend(aggregate(*snr, &per_trial));
    }
    Ok(ExperimentResult { rows, nonconverged })
}

/// Bounds only: `sqrt(CRB)` per trial on each trial's schedule, no estimation.
pub fn run_crb(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let fx = fixed(cfg)?;
    let mut rows = Vec::new();
    for snr in &cfg.snr_db {
        let results: Vec<Result<TrialRows>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let (scene, plan) = trial_setup(cfg, &fx, t)?;
                let ris_only = Scene {
                    ris_paths: scene.ris_paths.clone(),
                    direct_paths: Vec::new(),
                };
                let y = noiseless(&ris_only, &plan, &fx.geom, &fx.pilot, PilotModel::Ideal, Stage::RisOn)?;
                let var = noise_variance(mean_power(&y), snr.0);
                if var <= 0.0 {
                    return Ok(Vec::new());
                }
                let c = fim(&scene.ris_paths, &plan, &fx.geom, &fx.pilot, var)?;
                let u = c.bounds.len() as f64;
                let m = |f: fn(&crate::crb::PathBounds) -> f64| {
                    (c.bounds.iter().map(f).sum::<f64>() / u).sqrt()
                };
                Ok(vec![
                    ("sqrt_crb_tau", m(|b| b.tau), None),
                    ("sqrt_crb_xi", m(|b| b.xi), None),
                    ("sqrt_crb_theta", m(|b| b.theta), None),
                    ("sqrt_crb_phi", m(|b| b.phi), None),
                    ("singular", if c.singular { 1.0 } else { 0.0 }, None),
                ])
            })
            .collect();
        let mut per_trial = Vec::with_capacity(cfg.trials);
        for (t, r) in results.into_iter().enumerate() {
            let tr = r?;
            rows.extend(tr.iter().map(|(metric, value, offset)| Row {
                snr_db: *snr,
                metric,
                value: *value,
                trial: Some(t),
                offset: *offset,
            }));
            per_trial.push(tr);
        }
        rows.extend(aggregate(*snr, &per_trial));
    }
    Ok(ExperimentResult {
        rows,
        nonconverged: 0,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub schema: &'static str,
    pub name: &'a str,
    pub seed: u64,
    pub trials: usize,
    pub nonconverged_trials: usize,
    pub snr_definition: &'static str,
    pub dft_scaling: &'static str,
    pub projection_time: &'static str,
    pub stale_channel: &'static str,
    pub crb_averaging: &'static str,
    pub rmse_aggregation: &'static str,
    pub config: &'a ExperimentConfig,
}

pub fn metadata<'a>(cfg: &'a ExperimentConfig, res: &ExperimentResult) -> Metadata<'a> {
    Metadata {
        schema: SCHEMA,
        name: &cfg.name,
        seed: cfg.seed,
        trials: cfg.trials,
        nonconverged_trials: res.nonconverged,
        snr_definition: "noise variance = mean |Y|^2 over the noiseless received entries / 10^(snr/10); two-stage runs pool RIS-off and RIS-on power",
        dft_scaling: "unitary (1/sqrt(L~)); channel RMSE is identical in time and frequency",
        projection_time: "offset J is evaluated at T = (K-1)N + (L - 1 - floor(L/2)) + J N samples after the first RIS-on observation",
        stale_channel: "estimate at T = 0 compared with the true channel at T",
        crb_averaging: "CRB per trial on that trial's phase schedule; aggregate is the mean of sqrt(CRB)",
        rmse_aggregation: "rmse_* rows aggregate as sqrt(mean of squares); all other metrics as arithmetic means",
        config: cfg,
    }
}

/// Writes `<name>.csv` and `<name>.json` under `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, res: &ExperimentResult) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{}.csv", cfg.name));
    let json = dir.join(format!("{}.json", cfg.name));
    fs::write(&csv, res.to_csv())?;
    fs::write(&json, serde_json::to_string_pretty(&metadata(cfg, res))? + "\n")?;
    Ok((csv, json))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "name": "small",
                "geometry": {"ris_rows": 4, "ris_cols": 4, "bs_antennas": 2},
                "pilot": {"zc_len": 64, "cp_len": 16, "window": 40, "rolloff": 0.3},
                "scene": {"ris_paths": [
                    {"delay": 0.0, "doppler": 0.0, "azimuth_deg": 90, "elevation_deg": 90, "gain_mag": 1.0}
                ]},
                "plan": {"k": 3, "g_model": {"kind": "random_phase"}, "g_seed": 3},
                "grid": {"theta": 8, "phi": 8, "zeta": 64, "xi": 4,
                         "direct_theta": 8, "direct_zeta": 64, "direct_xi": 4},
                "snr_db": ["inf", 10],
                "trials": 3,
                "seed": 11,
                "projection_offsets": [10]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn on_grid_noiseless_path_is_recovered() {
        let cfg = small_config();
        let res = run_experiment(&cfg).unwrap();
        for v in res.per_trial(f64::INFINITY, "chan_ris", None) {
            assert!(v <= 1e-6, "{v}");
        }
        for v in res.per_trial(f64::INFINITY, "rmse_tau", None) {
            assert!(v <= 1e-6, "{v}");
        }
    }

    #[test]
    fn csv_has_schema_and_mean_rows() {
        let res = run_experiment(&small_config()).unwrap();
        let csv = res.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# schema=rischan-metrics/1"));
        assert_eq!(lines.next(), Some("snr_db,metric,value,trial,projection_offset"));
        assert!(csv.lines().any(|l| l.starts_with("inf,chan_ris,") && l.contains(",mean,")));
        assert!(csv.lines().any(|l| l.starts_with("10,chan_ris_proj,") && l.ends_with(",10")));
    }

    #[test]
    fn quadratic_mean_for_parameter_errors() {
        let tr: Vec<TrialRows> = vec![vec![("rmse_tau", 3.0, None), ("chan_ris", 1.0, None)], vec![
            ("rmse_tau", 4.0, None),
            ("chan_ris", 2.0, None),
        ]];
        let agg = aggregate(Snr(0.0), &tr);
        assert!((agg[0].value - (12.5f64).sqrt()).abs() < 1e-12);
        assert!((agg[1].value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn issues_are_aggregated_with_field_names() {
        let mut cfg = small_config();
        cfg.pilot.window = 64;
        cfg.pilot.advance = 10.0;
        cfg.trials = 0;
        let issues = cfg.issues();
        assert!(issues.iter().any(|m| m.starts_with("pilot.window")));
        assert!(issues.iter().any(|m| m.starts_with("pilot.advance") && m.contains("ISI")));
        assert!(issues.iter().any(|m| m.starts_with("trials")));
        assert!(cfg.validate().is_err());
        assert!(small_config().validate().is_ok());
    }

    #[test]
    fn snr_accepts_inf_string() {
        let s: Vec<Snr> = serde_json::from_str(r#"[0, "inf", -3.5]"#).unwrap();
        assert_eq!(s[0].0, 0.0);
        assert!(s[1].0.is_infinite());
        assert!(serde_json::from_str::<Vec<Snr>>(r#"["nan"]"#).is_err());
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"[0.0,"inf",-3.5]"#);
    }

    #[test]
    fn streams_are_keyed() {
        let a: u64 = stream(1, 2, 3, 4).gen();
        let b: u64 = stream(1, 2, 3, 4).gen();
        let c: u64 = stream(1, 2, 4, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
