//! Statistical checks on simulated ensembles: temporal Hölder exponents,
//! spatial regularity sweeps, moment bounds, mean-square continuity and the
//! one-sided Burkholder inequality.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, size, Error, Result};
use crate::noise::{EigenvalueLaw, NoiseSpec, WienerPath};
use crate::operators::{self, FiniteRankOperator};
use crate::rng::{self, Purpose};
use crate::solver::{Ensemble, SolutionPath};
use crate::spectral::{self, EigenSystem, GridField, SineTransform, SpectralField};
use crate::stats;

/// Spatial norm in which a check is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormKind {
    Lq { q: f64 },
    /// `||(-A)^(theta/2) x||_{L^q}`.
    ETheta { theta: f64, q: f64 },
    /// Sup norm plus the `kappa`-Hölder seminorm.
    Holder { kappa: f64 },
}

impl NormKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NormKind::Lq { q } | NormKind::ETheta { q, .. } if !(q >= 2.0 && q.is_finite()) => {
                domain(format!("integrability exponent q must satisfy q >= 2, got {q}"))
            }
            NormKind::ETheta { theta, .. } if !(theta >= 0.0) => {
                domain(format!("smoothness index must be nonnegative, got {theta}"))
            }
            NormKind::Holder { kappa } if !(0.0..=1.0).contains(&kappa) => {
                domain(format!("Hölder exponent must lie in [0,1], got {kappa}"))
            }
            _ => Ok(()),
        }
    }
}

/// Grid points per axis used for grid-based norms of an `N`-mode field.
pub fn analysis_grid(modes: usize) -> usize {
    4 * modes
}

// Reusable evaluator of one norm on one basis.
struct NormEval {
    kind: NormKind,
    dim: usize,
    n: usize,
    n_g: usize,
    weights: Vec<f64>,
    tr: Option<SineTransform>,
    scaled: Vec<f64>,
    grid: Vec<f64>,
}

impl NormEval {
    fn new(kind: NormKind, basis: &EigenSystem) -> Result<Self> {
        kind.validate()?;
        let (dim, n) = (basis.dim(), basis.modes_per_axis());
        let n_g = analysis_grid(n);
        let weights = match kind {
            NormKind::ETheta { theta, .. } => basis.eigenvalues().iter().map(|l| l.powf(theta / 2.0)).collect(),
            _ => vec![1.0; basis.len()],
        };
        let on_grid = !matches!(kind, NormKind::Lq { q } | NormKind::ETheta { q, .. } if q == 2.0);
        Ok(Self {
            kind,
            dim,
            n,
            n_g,
            weights,
            tr: if on_grid { Some(SineTransform::new(dim, n_g)?) } else { None },
            scaled: vec![0.0; basis.len()],
            grid: if on_grid { vec![0.0; n_g.pow(dim as u32)] } else { Vec::new() },
        })
    }

    fn eval(&mut self, c: &[f64]) -> f64 {
        for ((s, x), w) in self.scaled.iter_mut().zip(c).zip(&self.weights) {
            *s = x * w;
        }
        let Some(tr) = self.tr.as_mut() else {
            return stats::sum(self.scaled.iter().map(|v| v * v)).sqrt();
        };
        tr.synthesize_into(&self.scaled, self.n, &mut self.grid);
        match self.kind {
            NormKind::Lq { q } | NormKind::ETheta { q, .. } => spectral::lq_norm_raw(&self.grid, self.dim, self.n_g, q),
            NormKind::Holder { kappa } => {
                let u = GridField::new(self.dim, self.n_g, std::mem::take(&mut self.grid))
                    .expect("grid sized by construction");
                let v = spectral::holder_norm(&u, kappa).expect("exponent validated");
                self.grid = u.into_values();
                v
            }
        }
    }

    fn eval_diff(&mut self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.eval(&d)
    }
}

/// Norm of a single field, as used by the ensemble checks.
pub fn field_norm(x: &SpectralField, kind: NormKind) -> Result<f64> {
    Ok(NormEval::new(kind, x.basis())?.eval(x.coeffs()))
}

fn check_paths(paths: &[SolutionPath]) -> Result<()> {
    let Some(first) = paths.first() else {
        return size("an ensemble with at least one path is required");
    };
    for p in paths {
        if p.basis() != first.basis() && **p.basis() != **first.basis() {
            return size("paths live on different bases");
        }
        if p.len() != first.len() || p.stride() != first.stride() || p.dt() != first.dt() {
            return size("paths are recorded on different time grids");
        }
    }
    Ok(())
}

/// How structure functions at different anchor times are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorAggregate {
    #[default]
    Mean,
    /// Largest anchor value; matches the supremum in the Hölder seminorm for
    /// paths whose roughness is concentrated at a few times.
    Max,
}

/// Lags and anchors of a structure-function regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagPlan {
    pub min_lag: f64,
    pub max_lag: f64,
    pub anchors: usize,
    #[serde(default)]
    pub aggregate: AnchorAggregate,
}

impl LagPlan {
    /// Dyadic lags in `[4 dt, T/8]` with 16 anchors.
    pub fn standard(dt: f64, t_final: f64) -> Self {
        Self {
            min_lag: 4.0 * dt,
            max_lag: t_final / 8.0,
            anchors: 16,
            aggregate: AnchorAggregate::Mean,
        }
    }
}

pub const MIN_LAGS: usize = 5;
pub const MIN_R_SQUARED: f64 = 0.95;
pub const MIN_HOLDER_PATHS: usize = 1000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    /// Regression slope divided by `p`.
    pub exponent: f64,
    /// Bootstrap standard error over resampled paths.
    pub std_error: f64,
    pub r_squared: f64,
    pub lags: Vec<f64>,
    /// `E ||X(t + lag) - X(t)||^p`, combined over anchors.
    pub structure: Vec<f64>,
    pub p: f64,
    pub norm: NormKind,
    pub paths: usize,
    /// False when the fit fails the lag-count or `R^2` requirement.
    pub reported: bool,
    /// Fewer paths than the estimator is designed for.
    pub underpowered: bool,
    pub note: Option<String>,
}

/// Exponent `delta` in `E ||X(t + h) - X(t)||^p ~ h^(p delta)` from a
/// log-log regression over dyadic lags.
pub fn temporal_holder_estimate(
    paths: &[SolutionPath],
    p: f64,
    norm: NormKind,
    plan: &LagPlan,
    seed: u64,
) -> Result<HolderEstimate> {
    check_paths(paths)?;
    if !(p >= 1.0 && p.is_finite()) {
        return domain(format!("moment exponent must be at least 1, got {p}"));
    }
    let first = &paths[0];
    let h = first.dt() * first.stride() as f64;
    let last = first.len() - 1;
    let t_final = first.times()[last];
    let tol = 1e-9;
    if plan.min_lag < 4.0 * first.dt() * (1.0 - tol) || plan.max_lag > t_final / 8.0 * (1.0 + tol) {
        return domain(format!(
            "lags must lie within [4 dt, T/8] = [{}, {}]",
            4.0 * first.dt(),
            t_final / 8.0
        ));
    }
    if plan.anchors == 0 {
        return domain("at least one anchor time is required");
    }
    let mut lags = Vec::new();
    let mut l = 1usize;
    while (l as f64) * h <= plan.max_lag * (1.0 + tol) && l <= last {
        if (l as f64) * h >= plan.min_lag * (1.0 - tol) {
            lags.push(l);
        }
        l *= 2;
    }
    let Some(&max_lag) = lags.last() else {
        return domain("no dyadic lag fits the requested window");
    };
    let starts = last - max_lag + 1;
    let a = plan.anchors.min(starts);
    let mut anchors: Vec<usize> = (0..a)
        .map(|i| if a == 1 { 0 } else { (i * (starts - 1) + (a - 1) / 2) / (a - 1) })
        .collect();
    anchors.dedup();
    let cells = lags.len() * anchors.len();
    let basis = first.basis().clone();
    let per_path: Vec<Vec<f64>> = paths
        .par_iter()
        .map_init(
            || NormEval::new(norm, &basis),
            |ev, path| {
                let ev = ev.as_mut().map_err(|e| Error::Domain(e.to_string()))?;
                let mut row = Vec::with_capacity(cells);
                for &l in &lags {
                    for &i in &anchors {
                        row.push(ev.eval_diff(path.state(i + l), path.state(i)).powf(p));
                    }
                }
                Ok(row)
            },
        )
        .collect::<Result<_>>()?;
    let lag_times: Vec<f64> = lags.iter().map(|&l| l as f64 * h).collect();
    let combine = |weights: &dyn Fn(usize) -> f64, total: f64| -> Vec<f64> {
        (0..lags.len())
            .map(|li| {
                let per_anchor = (0..anchors.len()).map(|ai| {
                    let c = li * anchors.len() + ai;
                    stats::sum((0..paths.len()).map(|k| weights(k) * per_path[k][c])) / total
                });
                match plan.aggregate {
                    AnchorAggregate::Mean => stats::sum(per_anchor) / anchors.len() as f64,
                    AnchorAggregate::Max => per_anchor.fold(0.0, f64::max),
                }
            })
            .collect()
    };
    let structure = combine(&|_| 1.0, paths.len() as f64);
    let underpowered = paths.len() < MIN_HOLDER_PATHS;
    let mut est = HolderEstimate {
        exponent: 0.0,
        std_error: 0.0,
        r_squared: 0.0,
        lags: lag_times.clone(),
        structure: structure.clone(),
        p,
        norm,
        paths: paths.len(),
        reported: false,
        underpowered,
        note: None,
    };
    if structure.iter().any(|&s| !(s > 0.0)) {
        est.note = Some("increments vanish at some lag; no exponent".into());
        return Ok(est);
    }
    let x: Vec<f64> = lag_times.iter().map(|t| t.ln()).collect();
    let fit = |s: &[f64]| {
        let y: Vec<f64> = s.iter().map(|v| v.ln()).collect();
        stats::linear_fit(&x, &y)
    };
    let Some(main) = fit(&structure) else {
        est.note = Some("regression is degenerate".into());
        return Ok(est);
    };
    est.exponent = main.slope / p;
    est.r_squared = main.r_squared;
    let slopes: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut g = rng::stream(seed, b, Purpose::Bootstrap, 0);
            let mut counts = vec![0u32; paths.len()];
            for _ in 0..paths.len() {
                counts[rand::Rng::random_range(&mut g, 0..paths.len())] += 1;
            }
            let s = combine(&|k| counts[k] as f64, paths.len() as f64);
            if s.iter().any(|&v| !(v > 0.0)) {
                return None;
            }
            fit(&s).map(|f| f.slope / p)
        })
        .collect();
    est.std_error = if slopes.len() > 1 { stats::variance(&slopes).sqrt() } else { 0.0 };
    if lags.len() < MIN_LAGS {
        est.note = Some(format!("only {} lags fit the window, need {MIN_LAGS}", lags.len()));
    } else if main.r_squared < MIN_R_SQUARED {
        est.note = Some(format!("R^2 = {:.4} below {MIN_R_SQUARED}", main.r_squared));
    } else {
        est.reported = true;
    }
    Ok(est)
}

/// Outcome of a resolution sweep for one smoothness index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    Divergent,
    Inconclusive,
}

pub const BOUNDED_RATIO: f64 = 1.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialRow {
    pub theta: f64,
    pub q: f64,
    pub resolutions: Vec<usize>,
    /// Terminal-time norm per resolution.
    pub norms: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `norms[i+1] / norms[i]`.
    pub ratios: Vec<f64>,
    /// Ratio of the last two increments `norms[i+1] - norms[i]`.
    pub growth: Option<f64>,
    pub verdict: Verdict,
}

/// Classifies a resolution sequence of norms. Increments that do not shrink
/// geometrically mean divergence; shrinking increments together with a last
/// ratio of at most 1.15 mean boundedness.
pub fn classify_growth(norms: &[f64]) -> (Vec<f64>, Option<f64>, Verdict) {
    let ratios: Vec<f64> = norms.windows(2).map(|w| w[1] / w[0]).collect();
    let inc: Vec<f64> = norms.windows(2).map(|w| w[1] - w[0]).collect();
    let k = inc.len();
    let growth = (k >= 2 && inc[k - 2] > 0.0).then(|| inc[k - 1] / inc[k - 2]);
    let last_ratio = ratios.last().copied().unwrap_or(1.0);
    let verdict = if k == 0 || inc[k - 1] <= 0.0 {
        Verdict::Bounded
    } else {
        match growth {
            Some(g) if g >= 1.0 => Verdict::Divergent,
            _ if last_ratio <= BOUNDED_RATIO => Verdict::Bounded,
            _ => Verdict::Inconclusive,
        }
    };
    (ratios, growth, verdict)
}

/// Mean terminal `E^theta` norm at each resolution, with a boundedness verdict.
/// Ensembles must be ordered by resolution and driven by the same noise.
pub fn spatial_regularity_sweep(ensembles: &[&Ensemble], thetas: &[f64], q: f64) -> Result<Vec<SpatialRow>> {
    if ensembles.len() < 3 {
        return size("a spatial sweep needs at least three resolutions");
    }
    let base = ensembles[0];
    for e in &ensembles[1..] {
        if !base.is_coupled_with(e) {
            return Err(Error::Uncoupled(
                "every resolution must be driven by the same Brownian paths".into(),
            ));
        }
    }
    let mut resolutions = Vec::new();
    for e in ensembles {
        check_paths(&e.paths)?;
        resolutions.push(e.config.modes);
    }
    if resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return size("resolutions must increase strictly");
    }
    for &theta in thetas {
        NormKind::ETheta { theta, q }.validate()?;
    }
    thetas
        .iter()
        .map(|&theta| {
            let kind = NormKind::ETheta { theta, q };
            let mut norms = Vec::new();
            let mut std_errors = Vec::new();
            for e in ensembles {
                let basis = e.paths[0].basis().clone();
                let v: Vec<f64> = e
                    .paths
                    .par_iter()
                    .map_init(
                        || NormEval::new(kind, &basis).expect("norm validated"),
                        |ev, p| ev.eval(p.terminal()),
                    )
                    .collect();
                norms.push(stats::mean(&v));
                std_errors.push(stats::std_error(&v));
            }
            let (ratios, growth, verdict) = classify_growth(&norms);
            Ok(SpatialRow {
                theta,
                q,
                resolutions: resolutions.clone(),
                norms,
                std_errors,
                ratios,
                growth,
                verdict,
            })
        })
        .collect()
}

/// `E ||X(t)||^2_{E^theta, L^2}` of the `modes`-mode linear additive equation
/// started at zero: `sum_k lambda_k^theta lambda_k^Q (1 - e^{-2 lambda_k t}) / (2 lambda_k)`.
pub fn ou_etheta_moment(law: &EigenvalueLaw, dim: usize, modes: usize, theta: f64, t: f64) -> Result<f64> {
    let spec = NoiseSpec {
        dim,
        modes,
        law: law.clone(),
        epsilon: 0.0,
        eigenfunctions: Default::default(),
    };
    let basis = EigenSystem::new(dim, modes)?;
    let lq = spec.eigenvalues();
    Ok(stats::sum(basis.eigenvalues().iter().zip(&lq).map(|(&l, &q)| {
        l.powf(theta) * crate::solver::ou_variance(l, q, t)
    })))
}

/// The sweep applied to the root-mean-square oracle norms.
pub fn ou_oracle_sweep(law: &EigenvalueLaw, dim: usize, resolutions: &[usize], thetas: &[f64], t: f64) -> Result<Vec<SpatialRow>> {
    thetas
        .iter()
        .map(|&theta| {
            let norms = resolutions
                .iter()
                .map(|&n| ou_etheta_moment(law, dim, n, theta, t).map(f64::sqrt))
                .collect::<Result<Vec<_>>>()?;
            let (ratios, growth, verdict) = classify_growth(&norms);
            Ok(SpatialRow {
                theta,
                q: 2.0,
                resolutions: resolutions.to_vec(),
                std_errors: vec![0.0; norms.len()],
                norms,
                ratios,
                growth,
                verdict,
            })
        })
        .collect()
}

pub const MAX_BLOWUP_FRACTION: f64 = 1e-3;
pub const MOMENT_STABILITY: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `sup_t E ||X(t)||^p` on the finest ensemble.
    pub sup_moment: f64,
    /// The same supremum per ensemble.
    pub sup_moments: Vec<f64>,
    pub initial_norm: f64,
    /// `sup_moment / (1 + ||X0||^p)`.
    pub ratio: f64,
    pub blowups: usize,
    pub blowup_fraction: f64,
    /// Relative change of the supremum between the two finest ensembles.
    pub relative_change: Option<f64>,
    pub pass: bool,
}

/// Supremum over recorded times of the empirical `p`-th moment. Blown-up
/// paths are excluded and counted.
pub fn moment_bound_check(ensembles: &[&Ensemble], p: f64, norm: NormKind, x0: &SpectralField) -> Result<MomentReport> {
    if ensembles.is_empty() {
        return size("at least one ensemble is required");
    }
    if !(p >= 1.0) {
        return domain(format!("moment exponent must be at least 1, got {p}"));
    }
    norm.validate()?;
    let mut sups = Vec::new();
    let mut blowups = 0;
    let mut attempted = 0;
    for e in ensembles {
        check_paths(&e.paths)?;
        blowups += e.blowups.len();
        attempted += e.blowups.len() + e.paths.len();
        let basis = e.paths[0].basis().clone();
        let per_path: Vec<Vec<f64>> = e
            .paths
            .par_iter()
            .map_init(
                || NormEval::new(norm, &basis).expect("norm validated"),
                |ev, path| path.states().iter().map(|s| ev.eval(s).powf(p)).collect(),
            )
            .collect::<Vec<_>>();
        let len = e.paths[0].len();
        let sup = (0..len)
            .map(|i| stats::mean(&per_path.iter().map(|v| v[i]).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        sups.push(sup);
    }
    let initial_norm = field_norm(x0, norm)?;
    let sup_moment = *sups.last().expect("nonempty");
    let ratio = sup_moment / (1.0 + initial_norm.powf(p));
    let blowup_fraction = blowups as f64 / attempted as f64;
    let relative_change = (sups.len() >= 2).then(|| {
        let (a, b) = (sups[sups.len() - 2], sups[sups.len() - 1]);
        if a == b { 0.0 } else { (b - a).abs() / a.abs().max(b.abs()) }
    });
    let pass = ratio.is_finite()
        && blowup_fraction <= MAX_BLOWUP_FRACTION
        && relative_change.is_none_or(|c| c < MOMENT_STABILITY);
    Ok(MomentReport {
        sup_moment,
        sup_moments: sups,
        initial_norm,
        ratio,
        blowups,
        blowup_fraction,
        relative_change,
        pass,
    })
}

pub const MONOTONE_SLACK: f64 = 1.10;
pub const CONTINUITY_DECAY: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// Time gaps in decreasing order.
    pub gaps: Vec<f64>,
    /// `E ||X(t1) - X(t2)||^p` per gap.
    pub moments: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Each moment is at most 1.1 times the moment at the next larger gap.
    pub monotone: bool,
    /// Moment at the smallest positive gap over the moment at the largest.
    pub decay: f64,
    pub pass: bool,
}

/// `E ||X(t1) - X(t2)||^p` for pairs of record indices.
pub fn lp_continuity_check(paths: &[SolutionPath], p: f64, norm: NormKind, pairs: &[(usize, usize)]) -> Result<ContinuityReport> {
    check_paths(paths)?;
    let first = &paths[0];
    if pairs.iter().any(|&(a, b)| a >= first.len() || b >= first.len()) {
        return size("pair index beyond the recorded times");
    }
    let times = first.times();
    let mut order: Vec<(f64, usize, usize)> = pairs
        .iter()
        .map(|&(a, b)| ((times[a] - times[b]).abs(), a, b))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let positive: Vec<f64> = order.iter().map(|o| o.0).filter(|&g| g > 0.0).collect();
    let (Some(&big), Some(&small)) = (positive.first(), positive.last()) else {
        return domain("at least one pair with a positive gap is required");
    };
    if big < 100.0 * small * (1.0 - 1e-9) {
        return domain("gaps must span at least two decades");
    }
    let basis = first.basis().clone();
    let per_path: Vec<Vec<f64>> = paths
        .par_iter()
        .map_init(
            || NormEval::new(norm, &basis),
            |ev, path| {
                let ev = ev.as_mut().map_err(|e| Error::Domain(e.to_string()))?;
                Ok(order
                    .iter()
                    .map(|&(g, a, b)| if g == 0.0 { 0.0 } else { ev.eval_diff(path.state(a), path.state(b)).powf(p) })
                    .collect())
            },
        )
        .collect::<Result<_>>()?;
    let mut moments = Vec::new();
    let mut std_errors = Vec::new();
    for i in 0..order.len() {
        let v: Vec<f64> = per_path.iter().map(|r| r[i]).collect();
        moments.push(stats::mean(&v));
        std_errors.push(stats::std_error(&v));
    }
    let monotone = moments.windows(2).all(|w| w[1] <= MONOTONE_SLACK * w[0]);
    let at = |g: f64| moments[order.iter().position(|o| o.0 == g).expect("gap present")];
    let decay = if at(big) > 0.0 { at(small) / at(big) } else { 0.0 };
    Ok(ContinuityReport {
        gaps: order.iter().map(|o| o.0).collect(),
        moments,
        std_errors,
        monotone,
        decay,
        pass: monotone && decay < CONTINUITY_DECAY,
    })
}

/// Integrand that is constant on each time cell of the noise grid.
pub trait StepIntegrand: Sync {
    /// Operator on cell `step`; `past[j]` holds the increments of cell `j < step`.
    fn operator(&self, step: usize, past: &[&[f64]]) -> Result<FiniteRankOperator>;
}

/// The same operator on every cell.
pub struct ConstantIntegrand(pub FiniteRankOperator);

impl StepIntegrand for ConstantIntegrand {
    fn operator(&self, _step: usize, _past: &[&[f64]]) -> Result<FiniteRankOperator> {
        Ok(self.0.clone())
    }
}

/// Random columns `c_n` modulated by the driving Brownian motions:
/// `Phi(t) h_n = (1 + a_n sin(w_n beta_n(t_j) + s_n)) c_n` on `[t_j, t_{j+1})`.
#[derive(Clone, Debug)]
pub struct RandomStepIntegrand {
    columns: Vec<GridField>,
    amp: Vec<f64>,
    freq: Vec<f64>,
    shift: Vec<f64>,
}

impl RandomStepIntegrand {
    pub fn sample(seed: u64, id: u64, rank: usize, dim: usize, n_g: usize) -> Result<Self> {
        if rank == 0 {
            return size("rank must be positive");
        }
        let mut g = rng::stream(seed, id, Purpose::Integrand, 0);
        let modes = 4;
        let basis = EigenSystem::shared(dim, modes)?;
        let mut columns = Vec::with_capacity(rank);
        for _ in 0..rank {
            let c: Vec<f64> = (0..basis.len())
                .map(|i| {
                    let k: usize = basis.multi_index(i).iter().sum();
                    rng::normal(&mut g) / k as f64
                })
                .collect();
            columns.push(spectral::synthesize(&SpectralField::from_coeffs(basis.clone(), c)?, n_g)?);
        }
        let mut uniform = |lo: f64, hi: f64| rand::Rng::random_range(&mut g, lo..hi);
        let amp = (0..rank).map(|_| uniform(0.0, 0.9)).collect();
        let freq = (0..rank).map(|_| uniform(0.5, 3.0)).collect();
        let shift = (0..rank).map(|_| uniform(0.0, std::f64::consts::TAU)).collect();
        Ok(Self {
            columns,
            amp,
            freq,
            shift,
        })
    }
}

impl StepIntegrand for RandomStepIntegrand {
    fn operator(&self, _step: usize, past: &[&[f64]]) -> Result<FiniteRankOperator> {
        let cols = self
            .columns
            .iter()
            .enumerate()
            .map(|(n, c)| {
                let beta = stats::sum(past.iter().map(|inc| inc[n]));
                c.scale(1.0 + self.amp[n] * (self.freq[n] * beta + self.shift[n]).sin())
            })
            .collect();
        FiniteRankOperator::new(cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurkholderEntry {
    /// `E sup_t ||int_0^t Phi dW||^p_{L^q}`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `(int_0^T (E ||Phi(r)||_gamma^p)^(2/p) dr)^(p/2)`.
    pub rhs: f64,
    pub ratio: f64,
    pub ratio_se: f64,
}

pub const MIN_INTEGRANDS: usize = 20;
pub const RATIO_SPREAD: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurkholderReport {
    pub entries: Vec<BurkholderEntry>,
    pub median_ratio: f64,
    pub max_ratio: f64,
    /// No ratio exceeds ten times the batch median.
    pub pass: bool,
    pub underpowered: bool,
}

/// Both sides of the one-sided Burkholder inequality for a batch of step
/// integrands. Mode `n` of the noise paths drives `h_n`; gamma norms share
/// their Gaussian samples across integrands.
pub fn burkholder_check(
    integrands: &[&dyn StepIntegrand],
    p: f64,
    q: f64,
    noise: &[WienerPath],
    gamma_samples: usize,
    seed: u64,
) -> Result<BurkholderReport> {
    if !(p >= 2.0) || !(q >= 2.0) {
        return domain(format!("need p >= 2 and q >= 2, got p = {p}, q = {q}"));
    }
    let Some(w0) = noise.first() else {
        return size("at least one noise path is required");
    };
    if noise.iter().any(|w| w.steps() != w0.steps() || w.dt() != w0.dt() || w.mode_count() != w0.mode_count()) {
        return size("noise paths must share their grid");
    }
    let steps = w0.steps();
    let dt = w0.dt();
    let entries = integrands
        .iter()
        .map(|phi| {
            let rows: Vec<(f64, Vec<f64>)> = noise
                .par_iter()
                .map(|w| {
                    let past: Vec<&[f64]> = (0..steps).map(|j| w.step(j)).collect();
                    let mut acc: Option<Vec<f64>> = None;
                    let mut sup = 0.0_f64;
                    let mut gammas = Vec::with_capacity(steps);
                    for j in 0..steps {
                        let op = phi.operator(j, &past[..j])?;
                        if op.rank() > w.mode_count() {
                            return size("integrand rank exceeds the number of noise modes");
                        }
                        let key = (w.path_id() << 20) ^ j as u64;
                        let gam = operators::gamma_norm_keyed(&op, q, gamma_samples, seed, key)?;
                        gammas.push(gam.estimate.powf(p));
                        let Some(c0) = op.columns().first() else {
                            continue;
                        };
                        let (dim, n_g) = (c0.dim(), c0.points_per_axis());
                        let acc = acc.get_or_insert_with(|| vec![0.0; c0.values().len()]);
                        for (col, d) in op.columns().iter().zip(w.step(j)) {
                            acc.iter_mut().zip(col.values()).for_each(|(a, v)| *a += d * v);
                        }
                        sup = sup.max(spectral::lq_norm_raw(acc, dim, n_g, q));
                    }
                    Ok((sup.powf(p), gammas))
                })
                .collect::<Result<_>>()?;
            let left: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let lhs = stats::mean(&left);
            let lhs_se = stats::std_error(&left);
            let rhs = stats::sum((0..steps).map(|j| {
                let m = stats::mean(&rows.iter().map(|r| r.1[j]).collect::<Vec<_>>());
                dt * m.powf(2.0 / p)
            }))
            .powf(p / 2.0);
            let (ratio, ratio_se) = if rhs > 0.0 { (lhs / rhs, lhs_se / rhs) } else { (0.0, 0.0) };
            Ok(BurkholderEntry {
                lhs,
                lhs_se,
                rhs,
                ratio,
                ratio_se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = entries.iter().filter(|e| e.rhs > 0.0).map(|e| e.ratio).collect();
    let median_ratio = if ratios.is_empty() { 0.0 } else { stats::median(&ratios) };
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(BurkholderReport {
        pass: ratios.iter().all(|r| r.is_finite()) && max_ratio <= RATIO_SPREAD * median_ratio,
        underpowered: integrands.len() < MIN_INTEGRANDS,
        entries,
        median_ratio,
        max_ratio,
    })
}

#[derive(Serialize)]
struct LagRow {
    lag: f64,
    structure: f64,
    ln_lag: f64,
    ln_structure: f64,
}

/// One row per lag, gnuplot-ready.
pub fn write_holder_csv(est: &HolderEstimate, w: impl Write) -> Result<()> {
    write_rows(
        w,
        est.lags.iter().zip(&est.structure).map(|(&lag, &s)| LagRow {
            lag,
            structure: s,
            ln_lag: lag.ln(),
            ln_structure: s.ln(),
        }),
    )
}

#[derive(Serialize)]
struct SpatialCsvRow {
    theta: f64,
    resolution: usize,
    norm: f64,
    std_error: f64,
    verdict: Verdict,
}

/// One row per `(theta, resolution)`.
pub fn write_spatial_csv(rows: &[SpatialRow], w: impl Write) -> Result<()> {
    write_rows(
        w,
        rows.iter().flat_map(|r| {
            r.resolutions.iter().enumerate().map(move |(i, &n)| SpatialCsvRow {
                theta: r.theta,
                resolution: n,
                norm: r.norms[i],
                std_error: r.std_errors[i],
                verdict: r.verdict,
            })
        }),
    )
}

/// Rows of any serializable record type as CSV with a header.
pub fn write_rows<T: Serialize>(w: impl Write, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
