use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{domain, Error, Result};
use crate::noise::{self, EigenvalueLaw, NoiseSpec};
use crate::operators::{self, FiniteRankOperator};
use crate::regularity::{
    self, AnchorAggregate, ConstantIntegrand, LagPlan, NormKind, RandomStepIntegrand, StepIntegrand, Verdict,
};
use crate::solver::{self, CouplingKey, Ensemble, Model, Scheme, SimConfig, SolutionPath};
use crate::spectral::{EigenSystem, GridField, SpectralField};
use crate::stats;

use super::{EnsembleExport, ExperimentManifest, InitialCondition};

/// One analysis in an experiment's plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    OuOracle(OuOracleCheck),
    MomentBound(MomentCheck),
    LpContinuity(ContinuityCheck),
    TemporalHolder(TemporalHolderCheck),
    SpatialSweep(SpatialSweepCheck),
    Picard(PicardCheck),
    Burkholder(BurkholderSuite),
    Factorization(FactorizationCheck),
}

/// Exact OU variances and strong self-convergence of the exponential Euler scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuOracleCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Allowed distance from the closed form, in standard errors.
    pub se_factor: f64,
    pub min_order: f64,
    /// Successively doubled step counts, coupled through the first.
    pub convergence_steps: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_paths: Option<usize>,
}

impl Default for OuOracleCheck {
    fn default() -> Self {
        Self {
            label: None,
            se_factor: 4.0,
            min_order: 0.9,
            convergence_steps: vec![256, 512, 1024],
            convergence_paths: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Defaults to `sim.p`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Defaults to the `E^theta` norm of `sim.theta` in `L^{sim.q}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    /// Solver resolutions; defaults to `N/2` and `N`.
    pub resolutions: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuityCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    /// Record index of the fixed time; defaults to the middle record.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<usize>,
    /// Gaps in records; defaults to powers of two that fit after the anchor.
    pub gaps: Vec<usize>,
}

/// A norm in which to estimate the temporal exponent, with an optional
/// acceptance window on `exponent` (plus `theta/2` when requested).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderTarget {
    pub norm: NormKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub add_half_theta: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalHolderCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub targets: Vec<HolderTarget>,
    pub aggregate: AnchorAggregate,
    pub anchors: usize,
}

impl Default for TemporalHolderCheck {
    fn default() -> Self {
        Self {
            label: None,
            p: None,
            targets: Vec::new(),
            aggregate: AnchorAggregate::Mean,
            anchors: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSweepCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub thetas: Vec<f64>,
    pub q: f64,
    pub resolutions: Vec<usize>,
    /// Truncate the noise at the solver resolution.
    pub scale_noise: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Required verdict per smoothness index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<Vec<Verdict>>,
}

impl Default for SpatialSweepCheck {
    fn default() -> Self {
        Self {
            label: None,
            thetas: vec![0.0, 0.5, 1.0],
            q: 2.0,
            resolutions: vec![32, 64, 128],
            scale_noise: true,
            scheme: None,
            paths: None,
            expect: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Required value of the contraction factor at the chosen weight.
    pub target: f64,
    pub tolerance: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    pub max_ratio: f64,
    /// Distances below this fraction of the first are rounding noise.
    pub floor: f64,
}

impl Default for PicardCheck {
    fn default() -> Self {
        Self {
            label: None,
            target: 0.5,
            tolerance: 1e-6,
            iterations: 30,
            paths: None,
            max_ratio: 0.9,
            floor: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurkholderSuite {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub integrands: usize,
    pub p: f64,
    pub qs: Vec<f64>,
    pub rank: usize,
    pub steps: usize,
    pub paths: usize,
    pub gamma_samples: usize,
    pub grid_points: usize,
    /// Scalings of the constant rank-one family.
    pub scalings: Vec<f64>,
    /// Allowed spread of the family ratios, in standard errors.
    pub se_factor: f64,
}

impl Default for BurkholderSuite {
    fn default() -> Self {
        Self {
            label: None,
            integrands: 50,
            p: 4.0,
            qs: vec![2.0, 4.0],
            rank: 3,
            steps: 8,
            paths: 400,
            gamma_samples: 100,
            grid_points: 24,
            scalings: vec![0.5, 1.0, 2.0, 4.0],
            se_factor: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorizationCheck {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Defaults to `sim.alpha`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub steps: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    pub max_relative: f64,
    pub beta_cells: usize,
    pub beta_tolerance: f64,
}

impl Default for FactorizationCheck {
    fn default() -> Self {
        Self {
            label: None,
            alpha: None,
            steps: vec![512, 1024, 2048, 4096],
            paths: None,
            max_relative: 0.05,
            beta_cells: 4096,
            beta_tolerance: 1e-3,
        }
    }
}

/// Verdict of one check as recorded in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub kind: String,
    pub pass: bool,
    pub details: serde_json::Value,
}

pub(crate) struct CheckRun {
    pub outcome: CheckOutcome,
    /// `(file name, CSV body)`.
    pub tables: Vec<(String, String)>,
}

fn doubling(steps: &[usize]) -> bool {
    !steps.is_empty() && steps[0] > 0 && steps.windows(2).all(|w| w[1] == 2 * w[0])
}

fn is_additive(m: &ExperimentManifest) -> bool {
    m.f.is_zero() && m.g.as_constant().is_some() && m.noise.is_diagonal()
}

fn alpha_violation(alpha: f64, p: f64) -> Option<String> {
    let lo = 1.0 / p;
    (!(alpha > lo && alpha < 0.5)).then(|| format!("alpha = {alpha} lies outside the window (1/p, 1/2) = ({lo:.4}, 0.5)"))
}

impl Check {
    pub fn kind(&self) -> &'static str {
        match self {
            Check::OuOracle(_) => "ou_oracle",
            Check::MomentBound(_) => "moment_bound",
            Check::LpContinuity(_) => "lp_continuity",
            Check::TemporalHolder(_) => "temporal_holder",
            Check::SpatialSweep(_) => "spatial_sweep",
            Check::Picard(_) => "picard",
            Check::Burkholder(_) => "burkholder",
            Check::Factorization(_) => "factorization",
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Check::OuOracle(c) => c.label.as_deref(),
            Check::MomentBound(c) => c.label.as_deref(),
            Check::LpContinuity(c) => c.label.as_deref(),
            Check::TemporalHolder(c) => c.label.as_deref(),
            Check::SpatialSweep(c) => c.label.as_deref(),
            Check::Picard(c) => c.label.as_deref(),
            Check::Burkholder(c) => c.label.as_deref(),
            Check::Factorization(c) => c.label.as_deref(),
        }
    }

    /// Checks whose meaning rests on the noise summability condition.
    pub fn is_regularity(&self) -> bool {
        matches!(
            self,
            Check::MomentBound(_) | Check::LpContinuity(_) | Check::TemporalHolder(_) | Check::SpatialSweep(_)
        )
    }

    pub(crate) fn smallest_resolution(&self) -> Option<usize> {
        match self {
            Check::MomentBound(c) => c.resolutions.iter().copied().min(),
            Check::SpatialSweep(c) => c.resolutions.iter().copied().min(),
            _ => None,
        }
    }

    pub(crate) fn violations(&self, m: &ExperimentManifest) -> Vec<String> {
        let mut e = Vec::new();
        let sim = &m.sim;
        let norm_ok = |e: &mut Vec<String>, n: &NormKind| {
            if let Err(err) = n.validate() {
                e.push(err.to_string());
            }
        };
        let p_ok = |e: &mut Vec<String>, p: f64, lo: f64| {
            if !(p >= lo && p.is_finite()) {
                e.push(format!("moment exponent p must be at least {lo}, got {p}"));
            }
        };
        match self {
            Check::OuOracle(c) => {
                if !is_additive(m) {
                    e.push("the OU oracle needs f = 0, constant g and diagonal noise".into());
                }
                if !doubling(&c.convergence_steps) || c.convergence_steps.len() < 3 {
                    e.push("convergence steps must be at least three successive doublings".into());
                }
                if !(c.se_factor > 0.0) {
                    e.push("standard-error factor must be positive".into());
                }
                if c.convergence_paths.unwrap_or(sim.paths) < 2 || sim.paths < 2 {
                    e.push("at least two paths are needed for standard errors".into());
                }
            }
            Check::MomentBound(c) => {
                p_ok(&mut e, c.p.unwrap_or(sim.p), 1.0);
                if let Some(n) = &c.norm {
                    norm_ok(&mut e, n);
                }
                if c.resolutions.len() == 1 || c.resolutions.windows(2).any(|w| w[1] <= w[0]) || c.resolutions.contains(&0) {
                    e.push("moment resolutions must be at least two increasing mode counts".into());
                }
                if c.resolutions.is_empty() && sim.modes < 2 {
                    e.push("default moment resolutions need N >= 2".into());
                }
            }
            Check::LpContinuity(c) => {
                p_ok(&mut e, c.p.unwrap_or(sim.p), 1.0);
                if let Some(n) = &c.norm {
                    norm_ok(&mut e, n);
                }
                let last = sim.steps / sim.record_stride.max(1);
                let anchor = c.anchor.unwrap_or(last / 2);
                let gaps = continuity_gaps(c, anchor, last);
                if anchor > last || gaps.iter().any(|&g| g == 0 || anchor + g > last) {
                    e.push(format!("continuity pairs must lie within the {} recorded times", last + 1));
                }
                let span = gaps.iter().max().copied().unwrap_or(0) as f64 / gaps.iter().min().copied().unwrap_or(1).max(1) as f64;
                if span < 100.0 {
                    e.push(format!("continuity gaps span a factor {span}, need two decades"));
                }
            }
            Check::TemporalHolder(c) => {
                p_ok(&mut e, c.p.unwrap_or(sim.p), 1.0);
                if c.targets.is_empty() {
                    e.push("at least one norm target is required".into());
                }
                for t in &c.targets {
                    norm_ok(&mut e, &t.norm);
                    if let Some([lo, hi]) = t.window {
                        if !(lo < hi) {
                            e.push(format!("window [{lo}, {hi}] is empty"));
                        }
                    }
                }
                if c.anchors == 0 {
                    e.push("at least one anchor time is required".into());
                }
                if 4 % sim.record_stride != 0 {
                    e.push(format!("record stride {} cannot resolve the smallest lag 4 dt", sim.record_stride));
                }
                if sim.steps < 128 * 2 {
                    e.push(format!("M = {} leaves fewer than 5 dyadic lags in [4 dt, T/8]", sim.steps));
                }
            }
            Check::SpatialSweep(c) => {
                if c.resolutions.len() < 3 || c.resolutions.windows(2).any(|w| w[1] <= w[0]) || c.resolutions.contains(&0) {
                    e.push("a sweep needs at least three strictly increasing resolutions".into());
                }
                if c.thetas.is_empty() || c.thetas.iter().any(|t| !(*t >= 0.0)) {
                    e.push("smoothness indices must be a non-empty list of nonnegative values".into());
                }
                if !(c.q >= 2.0) {
                    e.push(format!("q must satisfy q >= 2, got {}", c.q));
                }
                if let Some(x) = &c.expect {
                    if x.len() != c.thetas.len() {
                        e.push("one expected verdict per smoothness index is required".into());
                    }
                }
                if c.scheme.unwrap_or(sim.scheme) == Scheme::OuExact && !is_additive(m) {
                    e.push("the exact OU scheme needs f = 0, constant g and diagonal noise".into());
                }
                if c.paths == Some(0) {
                    e.push("sweep ensemble must be non-empty".into());
                }
            }
            Check::Picard(c) => {
                if !(c.target > 0.0 && c.target < 1.0) {
                    e.push(format!("contraction target must lie in (0, 1), got {}", c.target));
                }
                if c.iterations < 2 {
                    e.push("at least two Picard iterations are required".into());
                }
                if c.paths == Some(0) {
                    e.push("Picard ensemble must be non-empty".into());
                }
            }
            Check::Burkholder(c) => {
                p_ok(&mut e, c.p, 2.0);
                if c.qs.is_empty() || c.qs.iter().any(|q| !(*q >= 2.0)) {
                    e.push("Burkholder exponents q must be a non-empty list with q >= 2".into());
                }
                if c.integrands == 0 || c.rank == 0 || c.steps == 0 || c.paths < 2 || c.grid_points == 0 {
                    e.push("integrands, rank, steps, grid points must be positive and paths at least 2".into());
                }
                if c.gamma_samples < 100 {
                    e.push(format!("gamma-norm estimates need at least 100 samples, got {}", c.gamma_samples));
                }
                if c.scalings.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    e.push("family scalings must be positive".into());
                }
            }
            Check::Factorization(c) => match c.alpha.or(sim.alpha) {
                None => e.push("factorization needs alpha, from the check or from sim.alpha".into()),
                Some(a) => {
                    if c.alpha.is_some() {
                        e.extend(alpha_violation(a, sim.p));
                    }
                    if !doubling(&c.steps) || c.steps.len() < 2 {
                        e.push("factorization steps must be successive doublings".into());
                    }
                    if c.beta_cells < 2 {
                        e.push("the Beta identity needs at least two cells".into());
                    }
                    if c.paths == Some(0) {
                        e.push("factorization ensemble must be non-empty".into());
                    }
                }
            },
        }
        e
    }

    pub(crate) fn run(&self, ctx: &mut Context, name: &str) -> Result<CheckRun> {
        let (pass, details, tables) = match self {
            Check::OuOracle(c) => ou_oracle(ctx, c, name)?,
            Check::MomentBound(c) => moment(ctx, c)?,
            Check::LpContinuity(c) => continuity(ctx, c, name)?,
            Check::TemporalHolder(c) => holder(ctx, c, name)?,
            Check::SpatialSweep(c) => sweep(ctx, c, name)?,
            Check::Picard(c) => picard(ctx, c, name)?,
            Check::Burkholder(c) => burkholder(ctx, c, name)?,
            Check::Factorization(c) => factorization(ctx, c, name)?,
        };
        Ok(CheckRun {
            outcome: CheckOutcome {
                name: name.to_string(),
                kind: self.kind().to_string(),
                pass,
                details,
            },
            tables,
        })
    }
}

type Tables = Vec<(String, String)>;
type Produced = (bool, serde_json::Value, Tables);

fn csv_text<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut buf = Vec::new();
    regularity::write_rows(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
struct SolveKey {
    modes: usize,
    noise_modes: usize,
    steps: usize,
    base_steps: Option<usize>,
    scheme: Scheme,
    paths: usize,
    stride: usize,
}

/// Ensembles solved so far in one run, shared between checks.
pub(crate) struct Context<'a> {
    m: &'a ExperimentManifest,
    cache: Vec<(SolveKey, Arc<Ensemble>)>,
}

impl<'a> Context<'a> {
    pub(crate) fn new(m: &'a ExperimentManifest) -> Self {
        Self { m, cache: Vec::new() }
    }

    fn primary_key(&self) -> SolveKey {
        let s = &self.m.sim;
        SolveKey {
            modes: s.modes,
            noise_modes: self.m.noise.modes,
            steps: s.steps,
            base_steps: s.noise_base_steps,
            scheme: s.scheme,
            paths: s.paths,
            stride: s.record_stride,
        }
    }

    fn config(&self, k: &SolveKey) -> SimConfig {
        let primary = *k == self.primary_key();
        SimConfig {
            modes: k.modes,
            steps: k.steps,
            noise_base_steps: k.base_steps,
            scheme: k.scheme,
            paths: k.paths,
            record_stride: k.stride,
            grid_points: if primary { self.m.sim.grid_points } else { None },
            ..self.m.sim.clone()
        }
    }

    fn model(&self, noise_modes: usize) -> Model {
        let mut model = self.m.model();
        model.noise.modes = noise_modes;
        model
    }

    fn x0(&self, dim: usize, modes: usize) -> Result<SpectralField> {
        self.m.initial.field(EigenSystem::shared(dim, modes)?)
    }

    fn solve(&mut self, key: SolveKey) -> Result<Arc<Ensemble>> {
        if let Some((_, e)) = self.cache.iter().find(|(k, _)| *k == key) {
            return Ok(e.clone());
        }
        let cfg = self.config(&key);
        let model = self.model(key.noise_modes);
        let x0 = self.x0(cfg.dim, cfg.modes)?;
        let e = Arc::new(solver::run_ensemble(&cfg, &model, &x0, 0)?);
        self.cache.push((key, e.clone()));
        Ok(e)
    }

    pub(crate) fn primary(&mut self) -> Result<Arc<Ensemble>> {
        let k = self.primary_key();
        self.solve(k)
    }

    /// Installs full paths read from an export as the primary ensemble.
    pub(crate) fn preload_primary(&mut self, e: EnsembleExport) -> Result<()> {
        let cfg = self.m.sim.clone();
        if e.dim != cfg.dim || e.modes != cfg.modes || e.paths.len() + e.blowups.len() != cfg.paths {
            return Err(Error::Format("ensemble export does not match the manifest".into()));
        }
        let ens = Ensemble {
            coupling: CouplingKey {
                seed: cfg.seed,
                base_steps: cfg.base_steps(),
                t_final: cfg.t_final,
                law: self.m.noise.law.clone(),
                first_path: 0,
            },
            config: cfg,
            paths: e.paths,
            blowups: e.blowups,
        };
        let key = self.primary_key();
        self.cache.retain(|(k, _)| *k != key);
        self.cache.push((key, Arc::new(ens)));
        Ok(())
    }

    fn default_norm(&self) -> NormKind {
        NormKind::ETheta {
            theta: self.m.sim.theta,
            q: self.m.sim.q,
        }
    }
}

fn mean_sq_dist(a: &[SolutionPath], b: &[SolutionPath]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.path_id() != y.path_id()) {
        return Err(Error::Uncoupled("ensembles differ in their paths".into()));
    }
    let d: Vec<f64> = a
        .par_iter()
        .zip(b)
        .map(|(x, y)| x.terminal().iter().zip(y.terminal()).map(|(u, v)| (u - v) * (u - v)).sum())
        .collect();
    Ok(stats::mean(&d))
}

#[derive(Serialize)]
struct VarianceRow {
    mode: usize,
    eigenvalue: f64,
    oracle: f64,
    exp_euler: f64,
    exp_euler_se: f64,
    ou_exact: f64,
    ou_exact_se: f64,
}

#[derive(Serialize)]
struct ConvergenceRow {
    steps: usize,
    self_distance: f64,
    exact_error: f64,
}

fn second_moments(e: &Ensemble, i: usize) -> (f64, f64) {
    let v: Vec<f64> = e.paths.iter().map(|p| p.terminal()[i] * p.terminal()[i]).collect();
    (stats::mean(&v), stats::std_error(&v))
}

fn ou_oracle(ctx: &mut Context, c: &OuOracleCheck, name: &str) -> Result<Produced> {
    let m = ctx.m;
    let sim = &m.sim;
    let key = |scheme, steps, base, paths| SolveKey {
        modes: sim.modes,
        noise_modes: m.noise.modes,
        steps,
        base_steps: base,
        scheme,
        paths,
        stride: steps,
    };
    let ee = ctx.solve(key(Scheme::ExpEuler, sim.steps, sim.noise_base_steps, sim.paths))?;
    let ou = ctx.solve(key(Scheme::OuExact, sim.steps, sim.noise_base_steps, sim.paths))?;
    if !ee.blowups.is_empty() || !ou.blowups.is_empty() {
        return domain("linear additive paths blew up");
    }
    let basis = EigenSystem::shared(sim.dim, sim.modes)?;
    let noise_basis = m.noise.basis()?;
    let lq = m.noise.eigenvalues();
    let gc = m.g.as_constant().unwrap_or(0.0);
    let x0 = ctx.x0(sim.dim, sim.modes)?;
    let z = |mean: f64, se: f64, oracle: f64| {
        let d = mean - oracle;
        if se > 0.0 {
            d.abs() / se
        } else if d.abs() <= 1e-12 * (1.0 + oracle.abs()) {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let mut rows = Vec::new();
    let (mut ee_fail, mut ou_fail) = (Vec::new(), Vec::new());
    let (mut ee_zmax, mut ou_zmax) = (0.0_f64, 0.0_f64);
    for i in 0..basis.len() {
        let k = basis.multi_index(i);
        let lam = basis.eigenvalue(i);
        let q = noise_basis.flat_index(&k).map_or(0.0, |j| lq[j]);
        let mean0 = x0.coeffs()[i] * (-lam * sim.t_final).exp();
        let oracle = gc * gc * solver::ou_variance(lam, q, sim.t_final) + mean0 * mean0;
        let (em, es) = second_moments(&ee, i);
        let (om, os) = second_moments(&ou, i);
        let (ze, zo) = (z(em, es, oracle), z(om, os, oracle));
        ee_zmax = ee_zmax.max(ze);
        ou_zmax = ou_zmax.max(zo);
        if ze > c.se_factor {
            ee_fail.push(i + 1);
        }
        if zo > c.se_factor {
            ou_fail.push(i + 1);
        }
        rows.push(VarianceRow {
            mode: i + 1,
            eigenvalue: lam,
            oracle,
            exp_euler: em,
            exp_euler_se: es,
            ou_exact: om,
            ou_exact_se: os,
        });
    }
    let base = Some(c.convergence_steps[0]);
    let paths = c.convergence_paths.unwrap_or(sim.paths);
    let mut ee_runs = Vec::new();
    let mut conv = Vec::new();
    for &s in &c.convergence_steps {
        let e = ctx.solve(key(Scheme::ExpEuler, s, base, paths))?;
        let o = ctx.solve(key(Scheme::OuExact, s, base, paths))?;
        if !e.blowups.is_empty() {
            return domain("linear additive paths blew up");
        }
        conv.push(ConvergenceRow {
            steps: s,
            self_distance: f64::NAN,
            exact_error: mean_sq_dist(&e.paths, &o.paths)?.sqrt(),
        });
        ee_runs.push(e);
    }
    for j in 0..conv.len() - 1 {
        conv[j].self_distance = mean_sq_dist(&ee_runs[j].paths, &ee_runs[j + 1].paths)?.sqrt();
    }
    let order = |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| (w[0] / w[1]).log2()).collect() };
    let self_d: Vec<f64> = conv[..conv.len() - 1].iter().map(|r| r.self_distance).collect();
    let exact: Vec<f64> = conv.iter().map(|r| r.exact_error).collect();
    let self_orders = order(&self_d);
    let exact_orders = order(&exact);
    let self_order = self_orders.iter().copied().fold(f64::INFINITY, f64::min);
    let variances_ok = ee_fail.is_empty() && ou_fail.is_empty();
    let pass = variances_ok && self_order >= c.min_order;
    let details = json!({
        "modes": basis.len(),
        "paths": sim.paths,
        "se_factor": c.se_factor,
        "exp_euler_max_z": ee_zmax,
        "ou_exact_max_z": ou_zmax,
        "exp_euler_failing_modes": ee_fail,
        "ou_exact_failing_modes": ou_fail,
        "convergence_steps": c.convergence_steps,
        "self_distances": self_d,
        "self_orders": self_orders,
        "self_order": self_order,
        "exact_errors": exact,
        "exact_orders": exact_orders,
        "min_order": c.min_order,
    });
    let tables = vec![
        (format!("{name}-variances.csv"), csv_text(rows)?),
        (format!("{name}-convergence.csv"), csv_text(conv)?),
    ];
    Ok((pass, details, tables))
}

fn moment(ctx: &mut Context, c: &MomentCheck) -> Result<Produced> {
    let sim = ctx.m.sim.clone();
    let res = if c.resolutions.is_empty() {
        vec![sim.modes / 2, sim.modes]
    } else {
        c.resolutions.clone()
    };
    let mut ens = Vec::new();
    for &n in &res {
        let mut k = ctx.primary_key();
        k.modes = n;
        ens.push(ctx.solve(k)?);
    }
    let refs: Vec<&Ensemble> = ens.iter().map(|e| e.as_ref()).collect();
    let x0 = ctx.x0(sim.dim, *res.last().unwrap())?;
    let p = c.p.unwrap_or(sim.p);
    let norm = c.norm.unwrap_or_else(|| ctx.default_norm());
    let rep = regularity::moment_bound_check(&refs, p, norm, &x0)?;
    let details = json!({ "resolutions": res, "p": p, "norm": norm, "report": rep });
    Ok((rep.pass, details, Vec::new()))
}

fn continuity_gaps(c: &ContinuityCheck, anchor: usize, last: usize) -> Vec<usize> {
    if !c.gaps.is_empty() {
        return c.gaps.clone();
    }
    let mut g = Vec::new();
    let mut d = 1;
    while anchor + d <= last {
        g.push(d);
        d *= 2;
    }
    g.reverse();
    g
}

#[derive(Serialize)]
struct ContinuityRow {
    gap: f64,
    moment: f64,
    std_error: f64,
}

fn continuity(ctx: &mut Context, c: &ContinuityCheck, name: &str) -> Result<Produced> {
    let e = ctx.primary()?;
    let sim = &ctx.m.sim;
    let last = sim.steps / sim.record_stride;
    let anchor = c.anchor.unwrap_or(last / 2);
    let pairs: Vec<(usize, usize)> = continuity_gaps(c, anchor, last).into_iter().map(|g| (anchor, anchor + g)).collect();
    let p = c.p.unwrap_or(sim.p);
    let norm = c.norm.unwrap_or_else(|| ctx.default_norm());
    let rep = regularity::lp_continuity_check(&e.paths, p, norm, &pairs)?;
    let rows: Vec<ContinuityRow> = (0..rep.gaps.len())
        .map(|i| ContinuityRow {
            gap: rep.gaps[i],
            moment: rep.moments[i],
            std_error: rep.std_errors[i],
        })
        .collect();
    let details = json!({ "anchor": anchor, "p": p, "norm": norm, "report": rep });
    Ok((rep.pass, details, vec![(format!("{name}.csv"), csv_text(rows)?)]))
}

fn holder(ctx: &mut Context, c: &TemporalHolderCheck, name: &str) -> Result<Produced> {
    let e = ctx.primary()?;
    let sim = &ctx.m.sim;
    let p = c.p.unwrap_or(sim.p);
    let plan = LagPlan {
        anchors: c.anchors,
        aggregate: c.aggregate,
        ..LagPlan::standard(sim.dt(), sim.t_final)
    };
    let mut pass = true;
    let mut results = Vec::new();
    let mut tables = Vec::new();
    for (i, t) in c.targets.iter().enumerate() {
        let est = regularity::temporal_holder_estimate(&e.paths, p, t.norm, &plan, sim.seed)?;
        let theta = match t.norm {
            NormKind::ETheta { theta, .. } => theta,
            _ => 0.0,
        };
        let value = est.exponent + if t.add_half_theta { theta / 2.0 } else { 0.0 };
        let ok = match t.window {
            None => true,
            Some([lo, hi]) => est.reported && !est.underpowered && value >= lo && value <= hi,
        };
        pass &= ok;
        let mut buf = Vec::new();
        regularity::write_holder_csv(&est, &mut buf)?;
        tables.push((format!("{name}-{}.csv", i + 1), String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?));
        results.push(json!({
            "norm": t.norm,
            "window": t.window,
            "add_half_theta": t.add_half_theta,
            "value": value,
            "pass": ok,
            "estimate": est,
        }));
    }
    let details = json!({ "p": p, "plan": plan, "targets": results });
    Ok((pass, details, tables))
}

fn sweep(ctx: &mut Context, c: &SpatialSweepCheck, name: &str) -> Result<Produced> {
    let m = ctx.m;
    let sim = &m.sim;
    let scheme = c.scheme.unwrap_or(sim.scheme);
    let mut ens = Vec::new();
    for &n in &c.resolutions {
        ens.push(ctx.solve(SolveKey {
            modes: n,
            noise_modes: if c.scale_noise { n } else { m.noise.modes },
            steps: sim.steps,
            base_steps: sim.noise_base_steps,
            scheme,
            paths: c.paths.unwrap_or(sim.paths),
            stride: sim.steps,
        })?);
    }
    let refs: Vec<&Ensemble> = ens.iter().map(|e| e.as_ref()).collect();
    let rows = regularity::spatial_regularity_sweep(&refs, &c.thetas, c.q)?;
    let verdicts: Vec<Verdict> = rows.iter().map(|r| r.verdict).collect();
    let oracle_applies = is_additive(m) && m.initial == InitialCondition::Zero && c.scale_noise && c.q == 2.0;
    let oracle = if oracle_applies {
        Some(regularity::ou_oracle_sweep(&m.noise.law, sim.dim, &c.resolutions, &c.thetas, sim.t_final)?)
    } else {
        None
    };
    let oracle_verdicts: Option<Vec<Verdict>> = oracle.as_ref().map(|o| o.iter().map(|r| r.verdict).collect());
    let matches_oracle = oracle_verdicts.as_ref().is_none_or(|o| *o == verdicts);
    let matches_expect = c.expect.as_ref().is_none_or(|x| *x == verdicts);
    let blowups: usize = ens.iter().map(|e| e.blowups.len()).sum();
    let pass = matches_oracle && matches_expect && blowups == 0;
    let mut tables = Vec::new();
    let mut buf = Vec::new();
    regularity::write_spatial_csv(&rows, &mut buf)?;
    tables.push((format!("{name}.csv"), String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?));
    if let Some(o) = &oracle {
        let mut buf = Vec::new();
        regularity::write_spatial_csv(o, &mut buf)?;
        tables.push((format!("{name}-oracle.csv"), String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?));
    }
    let details = json!({
        "scheme": scheme,
        "verdicts": verdicts,
        "oracle_verdicts": oracle_verdicts,
        "expected": c.expect,
        "matches_oracle": matches_oracle,
        "matches_expected": matches_expect,
        "blowups": blowups,
        "rows": rows,
        "oracle_rows": oracle,
    });
    Ok((pass, details, tables))
}

#[derive(Serialize)]
struct PicardRow {
    iteration: usize,
    distance: f64,
}

fn picard(ctx: &mut Context, c: &PicardCheck, name: &str) -> Result<Produced> {
    let m = ctx.m;
    let sim = &m.sim;
    let model = m.model();
    let (c_f, c_g) = operators::structural_constants(&m.f, &m.g, &m.noise)?;
    let u = solver::solve_weight(c.target, c_f, c_g, sim.t_final)?;
    let at_u = solver::contraction_factor(u, c_f, c_g, sim.t_final)?;
    let bisection_ok = (at_u - c.target).abs() <= c.tolerance;
    let grid: Vec<f64> = (-40..=40)
        .map(|j| solver::contraction_factor(u * 2f64.powf(j as f64 / 4.0), c_f, c_g, sim.t_final))
        .collect::<Result<_>>()?;
    let decreasing = grid.windows(2).all(|w| w[1] < w[0]);
    let paths = c.paths.unwrap_or(sim.paths.min(100));
    let noise = (0..paths as u64)
        .into_par_iter()
        .map(|id| solver::wiener_path(sim, &m.noise, id))
        .collect::<Result<Vec<_>>>()?;
    let x0 = ctx.x0(sim.dim, sim.modes)?;
    let (_, rep) = solver::picard_solve(sim, &model, &x0, &noise, u, c.iterations)?;
    let d0 = rep.distances.first().copied().unwrap_or(0.0);
    let considered: Vec<f64> = rep
        .ratios
        .iter()
        .enumerate()
        .filter(|(k, _)| rep.distances[k + 1] > c.floor * d0)
        .map(|(_, r)| *r)
        .collect();
    let worst = considered.iter().copied().fold(0.0, f64::max);
    let geometric = !considered.is_empty() && worst <= c.max_ratio && !rep.non_contraction;
    let pass = bisection_ok && decreasing && geometric;
    let rows: Vec<PicardRow> = rep
        .distances
        .iter()
        .enumerate()
        .map(|(i, &d)| PicardRow {
            iteration: i + 1,
            distance: d,
        })
        .collect();
    let details = json!({
        "c_f": c_f,
        "c_g": c_g,
        "weight": u,
        "factor_at_weight": at_u,
        "bisection_ok": bisection_ok,
        "strictly_decreasing": decreasing,
        "paths": paths,
        "ratios_checked": considered.len(),
        "max_ratio": worst,
        "report": rep,
    });
    Ok((pass, details, vec![(format!("{name}.csv"), csv_text(rows)?)]))
}

#[derive(Serialize)]
struct BurkholderRow {
    q: f64,
    family: &'static str,
    index: usize,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    ratio: f64,
    ratio_se: f64,
}

fn burkholder(ctx: &mut Context, c: &BurkholderSuite, name: &str) -> Result<Produced> {
    let sim = &ctx.m.sim;
    let spec = NoiseSpec {
        law: EigenvalueLaw::Explicit {
            values: vec![1.0; c.rank],
        },
        ..NoiseSpec::power_law(1, c.rank, 1.0, 1.0, 0.0)
    };
    let noise = (0..c.paths as u64)
        .into_par_iter()
        .map(|id| noise::sample_wiener_increments(&spec, c.steps, sim.t_final, sim.seed, id))
        .collect::<Result<Vec<_>>>()?;
    let random = (0..c.integrands as u64)
        .map(|i| RandomStepIntegrand::sample(sim.seed, i, c.rank, sim.dim, c.grid_points))
        .collect::<Result<Vec<_>>>()?;
    let random_refs: Vec<&dyn StepIntegrand> = random.iter().map(|f| f as &dyn StepIntegrand).collect();
    let x = GridField::from_fn(sim.dim, c.grid_points, |p| {
        p.iter().map(|v| (std::f64::consts::PI * v).sin()).product::<f64>() + 0.3
    })?;
    let family: Vec<ConstantIntegrand> = c
        .scalings
        .iter()
        .map(|&s| ConstantIntegrand(FiniteRankOperator::new(vec![x.scale(s)]).expect("one column")))
        .collect();
    let family_refs: Vec<&dyn StepIntegrand> = family.iter().map(|f| f as &dyn StepIntegrand).collect();
    let mut pass = true;
    let mut per_q = Vec::new();
    let mut rows = Vec::new();
    for &q in &c.qs {
        let batch = regularity::burkholder_check(&random_refs, c.p, q, &noise, c.gamma_samples, sim.seed)?;
        let fam = regularity::burkholder_check(&family_refs, c.p, q, &noise, c.gamma_samples, sim.seed)?;
        let r0 = fam.entries.first().map(|e| (e.ratio, e.ratio_se));
        let spread_ok = r0.is_none_or(|(r0, s0)| {
            fam.entries
                .iter()
                .all(|e| (e.ratio - r0).abs() <= c.se_factor * (e.ratio_se.powi(2) + s0 * s0).sqrt())
        });
        let ok = batch.pass && !batch.underpowered && spread_ok;
        pass &= ok;
        for (family, rep) in [("random", &batch), ("constant", &fam)] {
            for (i, e) in rep.entries.iter().enumerate() {
                rows.push(BurkholderRow {
                    q,
                    family,
                    index: i,
                    lhs: e.lhs,
                    lhs_se: e.lhs_se,
                    rhs: e.rhs,
                    ratio: e.ratio,
                    ratio_se: e.ratio_se,
                });
            }
        }
        per_q.push(json!({
            "q": q,
            "pass": ok,
            "batch_median_ratio": batch.median_ratio,
            "batch_max_ratio": batch.max_ratio,
            "batch_pass": batch.pass,
            "underpowered": batch.underpowered,
            "family_ratios": fam.entries.iter().map(|e| e.ratio).collect::<Vec<_>>(),
            "family_ratio_se": fam.entries.iter().map(|e| e.ratio_se).collect::<Vec<_>>(),
            "family_consistent": spread_ok,
        }));
    }
    let details = json!({
        "integrands": c.integrands,
        "p": c.p,
        "paths": c.paths,
        "steps": c.steps,
        "results": per_q,
    });
    Ok((pass, details, vec![(format!("{name}.csv"), csv_text(rows)?)]))
}

#[derive(Serialize)]
struct FactorizationRow {
    steps: usize,
    relative_distance: f64,
}

fn factorization(ctx: &mut Context, c: &FactorizationCheck, name: &str) -> Result<Produced> {
    let m = ctx.m;
    let alpha = c.alpha.or(m.sim.alpha).expect("validated");
    let model = m.model();
    let paths = c.paths.unwrap_or(m.sim.paths);
    let mut rel = Vec::new();
    for &s in &c.steps {
        let cfg = SimConfig {
            steps: s,
            noise_base_steps: Some(c.steps[0]),
            record_stride: 1,
            paths,
            grid_points: None,
            ..m.sim.clone()
        };
        let x0 = ctx.x0(cfg.dim, cfg.modes)?;
        let sums = (0..paths as u64)
            .into_par_iter()
            .map(|id| -> Result<(f64, f64)> {
                let w = solver::wiener_path(&cfg, &model.noise, id)?;
                let x = solver::exp_euler_solve(&cfg, &model, &x0, &w)?;
                let d = solver::stochastic_convolution_direct(&x, &model.g, &model.noise, &w)?;
                let f = solver::stochastic_convolution_factorized(&x, &model.g, &model.noise, &w, alpha)?;
                let (d, f) = (d[s].coeffs(), f[s].coeffs());
                let num = d.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
                let den = d.iter().map(|a| a * a).sum();
                Ok((num, den))
            })
            .collect::<Result<Vec<_>>>()?;
        let num = stats::sum(sums.iter().map(|v| v.0));
        let den = stats::sum(sums.iter().map(|v| v.1));
        rel.push(if den > 0.0 { (num / den).sqrt() } else { 0.0 });
    }
    let beta = solver::factorization_identity(alpha, c.beta_cells)?;
    let beta_ok = (beta - 1.0).abs() <= c.beta_tolerance;
    let decreasing = rel.windows(2).all(|w| w[1] < w[0]);
    let last = *rel.last().unwrap();
    let pass = beta_ok && decreasing && last <= c.max_relative;
    let rows: Vec<FactorizationRow> = c
        .steps
        .iter()
        .zip(&rel)
        .map(|(&s, &r)| FactorizationRow {
            steps: s,
            relative_distance: r,
        })
        .collect();
    let details = json!({
        "alpha": alpha,
        "steps": c.steps,
        "relative_distances": rel,
        "monotone": decreasing,
        "max_relative": c.max_relative,
        "beta_identity": beta,
        "beta_ok": beta_ok,
    });
    Ok((pass, details, vec![(format!("{name}.csv"), csv_text(rows)?)]))
}
