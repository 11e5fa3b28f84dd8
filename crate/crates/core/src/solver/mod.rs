//! Time integration of the mild formulation
//! `X(t) = S(t) X0 + int S(t-r) F(X) dr + int S(t-r) G(X) dW`.

mod convolution;
mod export;
mod picard;
mod stepper;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, size, Error, Result};
use crate::noise::{self, EigenvalueLaw, NoiseSpec, WienerPath};
use crate::operators::ScalarFn;
use crate::rng::{self, Purpose};
use crate::spectral::{EigenSystem, SpectralField};

pub use convolution::{
    deterministic_convolution, factorization_identity, r_alpha_apply, stochastic_convolution_direct,
    stochastic_convolution_factorized, Quadrature,
};
pub use export::{read_snapshots, write_snapshots};
pub use picard::{contraction_factor, picard_solve, solve_weight, PicardReport};
pub(crate) use stepper::Stepper;

/// Aborts a path once any coefficient exceeds this magnitude.
pub const BLOWUP_SENTINEL: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ExpEuler,
    Picard,
    /// Exact Ornstein-Uhlenbeck transition; linear additive models only.
    OuExact,
}

/// Numerical and statistical parameters of one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "one")]
    pub dim: usize,
    /// Final time `T`.
    pub t_final: f64,
    /// Time steps `M`.
    pub steps: usize,
    /// Spectral modes per axis `N`.
    pub modes: usize,
    pub q: f64,
    pub p: f64,
    #[serde(default)]
    pub theta: f64,
    /// Factorization exponent, when the factorized convolution is used.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    pub paths: usize,
    pub seed: u64,
    /// Keep every `record_stride`-th state.
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Resolution at which increments are drawn before bridge refinement to `steps`.
    #[serde(default)]
    pub noise_base_steps: Option<usize>,
    /// Collocation grid override; defaults to a dealiased grid.
    #[serde(default)]
    pub grid_points: Option<usize>,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn base_steps(&self) -> usize {
        self.noise_base_steps.unwrap_or(self.steps)
    }

    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.dim == 1 || self.dim == 2) {
            errs.push(format!("dimension must be 1 or 2, got {}", self.dim));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            errs.push(format!("final time T must be positive, got {}", self.t_final));
        }
        if self.steps == 0 {
            errs.push("time steps M must be positive".into());
        }
        if self.modes == 0 {
            errs.push("spectral modes N must be positive".into());
        }
        if !(self.q >= 2.0) {
            errs.push(format!("state exponent q must satisfy q >= 2, got {}", self.q));
        }
        if !(self.theta >= 0.0) {
            errs.push(format!("regularity index theta must be nonnegative, got {}", self.theta));
        }
        if let Some(a) = self.alpha {
            if !(self.p > 2.0) {
                errs.push(format!("moment exponent p must exceed 2 when alpha is used, got {}", self.p));
            }
            let lo = 1.0 / self.p;
            if !(a > lo && a < 0.5) {
                errs.push(format!(
                    "alpha = {a} lies outside the window (1/p, 1/2) = ({lo:.4}, 0.5)"
                ));
            }
        } else if !(self.p >= 2.0) {
            errs.push(format!("moment exponent p must be at least 2, got {}", self.p));
        }
        if self.paths == 0 {
            errs.push("ensemble size must be positive".into());
        }
        if self.record_stride == 0 || (self.steps > 0 && self.steps % self.record_stride != 0) {
            errs.push(format!(
                "record stride {} must divide M = {}",
                self.record_stride, self.steps
            ));
        }
        if let Some(b) = self.noise_base_steps {
            let ok = b > 0 && self.steps % b == 0 && (self.steps / b).is_power_of_two();
            if !ok {
                errs.push(format!(
                    "noise base resolution {b} must divide M = {} by a power of two",
                    self.steps
                ));
            }
        }
        if let Some(g) = self.grid_points {
            if g < self.modes {
                errs.push(format!("grid of {g} points cannot carry {} modes", self.modes));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Drift, diffusion and noise of the equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub f: ScalarFn,
    pub g: ScalarFn,
    pub noise: NoiseSpec,
}

impl Model {
    pub fn additive(noise: NoiseSpec) -> Self {
        Self {
            f: ScalarFn::Zero,
            g: ScalarFn::constant(1.0),
            noise,
        }
    }
}

/// Smallest grid `n_g >= max(2N, N_W)` whose DST length `n_g + 1` has only
/// factors 2, 3 and 5.
pub fn dealiased_grid(modes: usize, noise_modes: usize) -> usize {
    let mut n = (2 * modes).max(noise_modes).max(1);
    loop {
        let mut m = n + 1;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

/// Recorded states of one solution path.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionPath {
    basis: Arc<EigenSystem>,
    path_id: u64,
    dt: f64,
    stride: usize,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl SolutionPath {
    pub(crate) fn new(basis: Arc<EigenSystem>, path_id: u64, dt: f64, stride: usize) -> Self {
        Self {
            basis,
            path_id,
            dt,
            stride,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn from_states(
        basis: Arc<EigenSystem>,
        path_id: u64,
        dt: f64,
        stride: usize,
        states: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if states.iter().any(|s| s.len() != basis.len()) {
            return size("state length does not match the basis");
        }
        let times = (0..states.len())
            .map(|i| (i * stride) as f64 * dt)
            .collect();
        Ok(Self {
            basis,
            path_id,
            dt,
            stride,
            times,
            states,
        })
    }

    pub(crate) fn push(&mut self, step: usize, state: &[f64]) {
        self.times.push(step as f64 * self.dt);
        self.states.push(state.to_vec());
    }

    pub fn basis(&self) -> &Arc<EigenSystem> {
        &self.basis
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Solver steps between consecutive records.
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn field(&self, i: usize) -> SpectralField {
        SpectralField::from_coeffs(self.basis.clone(), self.states[i].clone())
            .expect("recorded states are finite and sized to the basis")
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("a solution path has at least one record")
    }
}

/// Identifies the noise realisation shared by coupled ensembles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingKey {
    pub seed: u64,
    pub base_steps: usize,
    pub t_final: f64,
    pub law: EigenvalueLaw,
    pub first_path: u64,
}

/// A failed path and where it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUpRecord {
    pub path_id: u64,
    pub step: usize,
    pub mode: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub config: SimConfig,
    pub coupling: CouplingKey,
    pub paths: Vec<SolutionPath>,
    pub blowups: Vec<BlowUpRecord>,
}

impl Ensemble {
    /// Fraction of attempted paths that blew up.
    pub fn blowup_fraction(&self) -> f64 {
        let total = self.paths.len() + self.blowups.len();
        if total == 0 {
            0.0
        } else {
            self.blowups.len() as f64 / total as f64
        }
    }

    pub fn basis(&self) -> Option<&Arc<EigenSystem>> {
        self.paths.first().map(|p| p.basis())
    }

    /// Ensembles are coupled when they were driven by the same Brownian motions.
    pub fn is_coupled_with(&self, other: &Ensemble) -> bool {
        self.coupling == other.coupling
            && self.paths.len() == other.paths.len()
            && self
                .paths
                .iter()
                .zip(&other.paths)
                .all(|(a, b)| a.path_id == b.path_id)
    }
}

/// Increments for path `path_id` at the resolution of `cfg`.
pub fn wiener_path(cfg: &SimConfig, spec: &NoiseSpec, path_id: u64) -> Result<WienerPath> {
    let base = cfg.base_steps();
    if base == 0 || cfg.steps % base != 0 {
        return size("noise base resolution must divide M");
    }
    let w = noise::sample_wiener_increments(spec, base, cfg.t_final, cfg.seed, path_id)?;
    if base == cfg.steps {
        Ok(w)
    } else {
        noise::refine_path(&w, cfg.steps / base)
    }
}

fn check_inputs(cfg: &SimConfig, model: &Model, x0: &SpectralField, w: &WienerPath) -> Result<()> {
    cfg.validate()?;
    model.noise.validate()?;
    for (name, f) in [("f", &model.f), ("g", &model.g)] {
        f.validate()
            .map_err(|e| Error::Validation(vec![format!("{name}: {e}")]))?;
    }
    let b = x0.basis();
    if b.dim() != cfg.dim || b.modes_per_axis() != cfg.modes {
        return size("initial state basis does not match the configuration");
    }
    if model.noise.dim != cfg.dim {
        return size("noise dimension does not match the configuration");
    }
    if w.steps() != cfg.steps || w.modes() != model.noise.modes || w.dim() != cfg.dim {
        return size("Wiener path resolution does not match the configuration");
    }
    if (w.t_final() - cfg.t_final).abs() > 1e-12 * cfg.t_final {
        return size("Wiener path horizon does not match T");
    }
    Ok(())
}

/// Exponential Euler: `X_{m+1} = S(dt) [X_m + dt F(X_m) + G(X_m) dW_m]`.
pub fn exp_euler_solve(cfg: &SimConfig, model: &Model, x0: &SpectralField, w: &WienerPath) -> Result<SolutionPath> {
    check_inputs(cfg, model, x0, w)?;
    let mut st = Stepper::new(cfg, model)?;
    let mut x = x0.coeffs().to_vec();
    let mut path = SolutionPath::new(x0.basis().clone(), w.path_id(), cfg.dt(), cfg.record_stride);
    path.push(0, &x);
    for m in 0..cfg.steps {
        st.step(&mut x, None, w.step(m));
        if let Some((mode, value)) = blowup(&x) {
            return Err(Error::BlowUp {
                path_id: w.path_id(),
                step: m + 1,
                mode,
                value,
            });
        }
        if (m + 1) % cfg.record_stride == 0 {
            path.push(m + 1, &x);
        }
    }
    Ok(path)
}

pub(crate) fn blowup(x: &[f64]) -> Option<(usize, f64)> {
    x.iter()
        .position(|v| !(v.abs() <= BLOWUP_SENTINEL))
        .map(|i| (i, x[i]))
}

// Variance of int_0^dt e^{-lambda (dt - s)} dbeta conditional on beta(dt),
// i.e. a - b^2 / dt with a = (1 - e^{-2z}) / (2 lambda), b = (1 - e^{-z}) / lambda.
fn ou_residual_variance(lambda: f64, dt: f64) -> (f64, f64) {
    let z = lambda * dt;
    let b = if z < 1e-8 { dt * (1.0 - z / 2.0) } else { -(-z).exp_m1() / lambda };
    let var = if z < 1e-4 {
        dt * z * z / 12.0 * (1.0 - z)
    } else {
        let a = -(-2.0 * z).exp_m1() / (2.0 * lambda);
        (a - b * b / dt).max(0.0)
    };
    (b / dt, var)
}

/// Exact mode-wise transition of the linear additive equation, driven by the
/// same increments as the other schemes plus an independent residual.
pub fn ou_exact_solve(cfg: &SimConfig, model: &Model, x0: &SpectralField, w: &WienerPath) -> Result<SolutionPath> {
    check_inputs(cfg, model, x0, w)?;
    if !model.noise.is_diagonal() {
        return domain("the exact OU transition needs diagonal noise");
    }
    if !model.f.is_zero() {
        return domain("the exact OU transition needs f = 0");
    }
    let Some(gc) = model.g.as_constant() else {
        return domain("the exact OU transition needs constant g");
    };
    let basis = x0.basis().clone();
    let dt = cfg.dt();
    let sqrt_q = model.noise.sqrt_eigenvalues();
    let noise_basis = model.noise.basis()?;
    let n = basis.len();
    // per solver mode: (noise index, decay, mean factor, residual sd, residual stream)
    let mut modes = Vec::with_capacity(n);
    for i in 0..n {
        let k = basis.multi_index(i);
        let lam = basis.eigenvalue(i);
        let src = noise_basis.flat_index(&k);
        let (mean, var) = ou_residual_variance(lam, dt);
        let stream = rng::stream(
            cfg.seed,
            w.path_id(),
            Purpose::OuResidual {
                steps: cfg.steps as u64,
            },
            k.iter().fold(0u64, |acc, &ki| (acc << 32) | ki as u64),
        );
        modes.push((src, (-lam * dt).exp(), mean, var.sqrt(), stream));
    }
    let mut x = x0.coeffs().to_vec();
    let mut path = SolutionPath::new(basis, w.path_id(), dt, cfg.record_stride);
    path.push(0, &x);
    for m in 0..cfg.steps {
        let inc = w.step(m);
        for (xi, (src, decay, mean, sd, stream)) in x.iter_mut().zip(modes.iter_mut()) {
            let z = rng::normal(stream);
            *xi *= *decay;
            if let Some(s) = *src {
                let amp = gc * sqrt_q[s];
                if amp != 0.0 {
                    *xi += amp * (*mean * inc[s] + *sd * z);
                }
            }
        }
        if (m + 1) % cfg.record_stride == 0 {
            path.push(m + 1, &x);
        }
    }
    Ok(path)
}

/// Closed-form terminal variance of OU mode `k` started at zero.
pub fn ou_variance(lambda: f64, lambda_q: f64, t: f64) -> f64 {
    lambda_q * -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
}

/// Runs `cfg.paths` independent paths; blown-up paths are recorded, not fatal.
pub fn run_ensemble(cfg: &SimConfig, model: &Model, x0: &SpectralField, first_path: u64) -> Result<Ensemble> {
    cfg.validate()?;
    let solve = |id: u64| -> Result<SolutionPath> {
        let w = wiener_path(cfg, &model.noise, id)?;
        match cfg.scheme {
            Scheme::ExpEuler | Scheme::Picard => exp_euler_solve(cfg, model, x0, &w),
            Scheme::OuExact => ou_exact_solve(cfg, model, x0, &w),
        }
    };
    let results: Vec<Result<SolutionPath>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| solve(first_path + i))
        .collect();
    let mut paths = Vec::with_capacity(cfg.paths);
    let mut blowups = Vec::new();
    for r in results {
        match r {
            Ok(p) => paths.push(p),
            Err(Error::BlowUp {
                path_id,
                step,
                mode,
                value,
            }) => blowups.push(BlowUpRecord {
                path_id,
                step,
                mode,
                value,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(Ensemble {
        config: cfg.clone(),
        coupling: CouplingKey {
            seed: cfg.seed,
            base_steps: cfg.base_steps(),
            t_final: cfg.t_final,
            law: model.noise.law.clone(),
            first_path,
        },
        paths,
        blowups,
    })
}
