//! Q-Wiener noise `W(t) = sum_n sqrt(lambda_n) h_n beta_n(t)`.
//!
//! Noise modes are indexed like the Laplacian modes of an [`EigenSystem`]
//! with `N_W` modes per axis. Each mode draws its Brownian increments from a
//! stream keyed by its multi-index, so mode `k` sees the same Brownian motion
//! whatever the truncation level, and refinement in time goes through a
//! Brownian bridge keyed by the target resolution.

use std::f64::consts::{PI, SQRT_2};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, size, Error, Result};
use crate::rng::{self, Purpose};
use crate::spectral::{self, EigenSystem, SpectralField};
use crate::stats;

/// Eigenvalues of the covariance operator Q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EigenvalueLaw {
    /// `lambda_k = scale * |k|^(-2 r)`.
    Power { scale: f64, r: f64 },
    /// One value per noise mode, in flat mode order.
    Explicit { values: Vec<f64> },
}

/// Eigenfunctions of Q.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Eigenfunctions {
    /// `h_n` equals the n-th Dirichlet sine mode.
    #[default]
    Sine,
    /// Row `n` holds the sine coefficients of `h_n` (`N_W^d` entries each).
    Explicit { rows: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub dim: usize,
    /// Noise modes per axis, `N_W`.
    pub modes: usize,
    pub law: EigenvalueLaw,
    /// Hölder exponent used in the summability condition.
    pub epsilon: f64,
    #[serde(default)]
    pub eigenfunctions: Eigenfunctions,
}

impl NoiseSpec {
    /// Diagonal noise with `lambda_k = scale * |k|^(-2 r)`.
    pub fn power_law(dim: usize, modes: usize, scale: f64, r: f64, epsilon: f64) -> Self {
        Self {
            dim,
            modes,
            law: EigenvalueLaw::Power { scale, r },
            epsilon,
            eigenfunctions: Eigenfunctions::Sine,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_violations(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub(crate) fn collect_violations(&self, errs: &mut Vec<String>) {
        if !(self.dim == 1 || self.dim == 2) {
            errs.push(format!("noise dimension must be 1 or 2, got {}", self.dim));
            return;
        }
        if self.modes == 0 {
            errs.push("noise truncation N_W must be positive".into());
            return;
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            errs.push(format!("noise Hölder exponent must lie in [0,1], got {}", self.epsilon));
        }
        let count = self.mode_count();
        match &self.law {
            EigenvalueLaw::Power { scale, r } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    errs.push(format!("eigenvalue scale must be nonnegative, got {scale}"));
                }
                if !(*r > 0.0 && r.is_finite()) {
                    errs.push(format!("eigenvalue decay r must be positive, got {r}"));
                }
            }
            EigenvalueLaw::Explicit { values } => {
                if values.len() != count {
                    errs.push(format!(
                        "explicit eigenvalue list has {} entries, expected {count}",
                        values.len()
                    ));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    errs.push("explicit eigenvalues must be finite and nonnegative".into());
                }
            }
        }
        if let Eigenfunctions::Explicit { rows } = &self.eigenfunctions {
            if rows.len() != count || rows.iter().any(|r| r.len() != count) {
                errs.push(format!("explicit eigenfunctions must form a {count} x {count} table"));
            }
        }
    }

    /// Number of noise modes, `N_W^d`.
    pub fn mode_count(&self) -> usize {
        self.modes.pow(self.dim as u32)
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.eigenfunctions, Eigenfunctions::Sine)
    }

    pub fn basis(&self) -> Result<Arc<EigenSystem>> {
        EigenSystem::shared(self.dim, self.modes)
    }

    /// `lambda_n` for every noise mode in flat order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match &self.law {
            EigenvalueLaw::Power { scale, r } => (0..self.mode_count())
                .map(|i| {
                    let k2: usize = mode_index(self.dim, self.modes, i).iter().map(|k| k * k).sum();
                    scale * (k2 as f64).powf(-r)
                })
                .collect(),
            EigenvalueLaw::Explicit { values } => values.clone(),
        }
    }

    pub fn sqrt_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues().into_iter().map(f64::sqrt).collect()
    }

    /// Sine coefficients of `h_n`.
    pub fn eigenfunction(&self, n: usize) -> Result<SpectralField> {
        if n >= self.mode_count() {
            return size(format!("noise mode {n} exceeds N_W^d = {}", self.mode_count()));
        }
        let basis = self.basis()?;
        match &self.eigenfunctions {
            Eigenfunctions::Sine => {
                let mut f = SpectralField::zeros(basis);
                f.coeffs_mut()[n] = 1.0;
                Ok(f)
            }
            Eigenfunctions::Explicit { rows } => SpectralField::from_coeffs(basis, rows[n].clone()),
        }
    }

    /// Trace of Q restricted to the first `N_W^d` modes.
    pub fn trace(&self) -> f64 {
        stats::sum(self.eigenvalues())
    }

    /// Upper bound on the trace of Q outside the truncation, relative to the
    /// full trace. `None` when no bound is available.
    pub fn trace_deficit(&self) -> Option<f64> {
        let EigenvalueLaw::Power { scale, r } = self.law else {
            return None;
        };
        if scale == 0.0 {
            return Some(0.0);
        }
        let tail = power_tail(self.dim, self.modes, scale, 2.0 * r, 0.0)?;
        Some(tail / (self.trace() + tail))
    }
}

pub(crate) fn mode_index(dim: usize, n: usize, i: usize) -> Vec<usize> {
    if dim == 1 {
        vec![i + 1]
    } else {
        vec![i / n + 1, i % n + 1]
    }
}

// `sum_{modes outside the truncation} scale * |k|^(-a) * |k|^b`, bounded by an
// integral. `None` when the bound diverges.
fn power_tail(dim: usize, modes: usize, scale: f64, a: f64, b: f64) -> Option<f64> {
    let n = modes as f64;
    let e = a - b;
    if dim == 1 {
        (e > 1.0).then(|| scale * n.powf(1.0 - e) / (e - 1.0))
    } else {
        // every lattice point outside the square lies outside the quarter disc of
        // radius N, and its unit cell lies outside radius N - sqrt(2)
        let r0 = (n - SQRT_2).max(0.5);
        (e > 2.0).then(|| scale * PI / 2.0 * r0.powf(2.0 - e) / (e - 2.0))
    }
}

/// Summability record for `C_Q = sum_n sqrt(lambda_n) ||h_n||_{C^eps}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CqReport {
    pub partial_sum: f64,
    /// Bound on the omitted tail; `None` when no bound is known or it diverges.
    pub tail_bound: Option<f64>,
    /// The partial sum is within 1% of the full series; `None` when this
    /// cannot be decided.
    pub converged: Option<bool>,
}

impl CqReport {
    /// The full series is known to diverge, not merely to be poorly truncated.
    pub fn diverges(&self) -> bool {
        self.tail_bound.is_none() && self.converged == Some(false)
    }
}

// sup_{s in (0, s_max]} 2 sin(s/2) / s^eps, maximiser solves tan(s/2) = s / (2 eps)
fn chord_constant(eps: f64) -> f64 {
    if eps >= 1.0 {
        return 1.0;
    }
    let x = bisect(|x| x.tan() - x / eps, 1e-12, PI / 2.0 - 1e-12);
    2.0 * x.sin() / (2.0 * x).powf(eps)
}

// sup_{s in (0, pi]} sin(s) / s^eps, maximiser solves tan(s) = s / eps
fn first_mode_constant(eps: f64) -> f64 {
    if eps >= 1.0 {
        return 1.0;
    }
    let s = bisect(|s| s.tan() - s / eps, 1e-12, PI / 2.0 - 1e-12);
    s.sin() / s.powf(eps)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `||sqrt(2) sin(n pi .)||_{C^eps((0,1))}` in closed form; `eps = 0` is the sup norm.
pub fn sine_mode_holder_norm(n: usize, eps: f64) -> f64 {
    if eps == 0.0 {
        return SQRT_2;
    }
    let c = if n == 1 {
        first_mode_constant(eps)
    } else {
        chord_constant(eps)
    };
    SQRT_2 * (1.0 + (n as f64 * PI).powf(eps) * c)
}

/// Partial sum and tail bound of `C_Q`.
pub fn check_cq_condition(spec: &NoiseSpec) -> Result<CqReport> {
    spec.validate()?;
    let eps = spec.epsilon;
    let lambdas = spec.eigenvalues();
    let norms: Vec<f64> = match (&spec.eigenfunctions, spec.dim) {
        (Eigenfunctions::Sine, 1) => (1..=spec.modes).map(|n| sine_mode_holder_norm(n, eps)).collect(),
        (Eigenfunctions::Sine, _) => (0..spec.mode_count())
            .map(|i| {
                let k = mode_index(2, spec.modes, i);
                product_mode_holder_bound(&k, eps)
            })
            .collect(),
        (Eigenfunctions::Explicit { .. }, _) => {
            let n_g = (4 * spec.modes).max(64);
            (0..spec.mode_count())
                .map(|n| {
                    let h = spec.eigenfunction(n)?;
                    spectral::holder_norm(&spectral::synthesize(&h, n_g)?, eps)
                })
                .collect::<Result<_>>()?
        }
    };
    let partial_sum = stats::sum(lambdas.iter().zip(&norms).map(|(l, h)| l.sqrt() * h));
    let tail_bound = match (&spec.law, &spec.eigenfunctions) {
        (EigenvalueLaw::Power { scale, .. }, _) if *scale == 0.0 => Some(0.0),
        (EigenvalueLaw::Power { scale, r }, Eigenfunctions::Sine) => {
            let (sup, semi) = if spec.dim == 1 {
                (SQRT_2, SQRT_2 * PI.powf(eps) * chord_constant(eps))
            } else {
                (2.0, 4.0_f64.powf(1.0 - eps) * (2.0 * PI).powf(eps))
            };
            let s = scale.sqrt();
            let lower = power_tail(spec.dim, spec.modes, s * sup, *r, 0.0);
            let upper = if eps == 0.0 {
                Some(0.0)
            } else {
                power_tail(spec.dim, spec.modes, s * semi, *r, eps)
            };
            lower.zip(upper).map(|(a, b)| a + b)
        }
        _ => None,
    };
    let converged = match (&spec.law, tail_bound) {
        (_, Some(t)) => Some(t == 0.0 || t < 0.01 * partial_sum),
        (EigenvalueLaw::Power { .. }, None) if spec.is_diagonal() => Some(false),
        _ => None,
    };
    Ok(CqReport {
        partial_sum,
        tail_bound,
        converged,
    })
}

// Upper bound for a product of two sine modes: sup norm 2 and Lipschitz
// constant 2 pi |k|, interpolated.
fn product_mode_holder_bound(k: &[usize], eps: f64) -> f64 {
    if eps == 0.0 {
        return 2.0;
    }
    let norm_k = k.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    2.0 + 4.0_f64.powf(1.0 - eps) * (2.0 * PI * norm_k).powf(eps)
}

/// Sampled Brownian increments `Delta beta_n(t_m)` on a uniform grid of `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    dim: usize,
    modes: usize,
    t_final: f64,
    steps: usize,
    seed: u64,
    path_id: u64,
    /// Row-major `[steps][modes^dim]`.
    increments: Vec<f64>,
}

fn lane(k: &[usize]) -> u64 {
    k.iter().fold(0u64, |acc, &ki| (acc << 32) | ki as u64)
}

impl WienerPath {
    pub fn from_increments(
        dim: usize,
        modes: usize,
        t_final: f64,
        steps: usize,
        seed: u64,
        path_id: u64,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if steps == 0 || !(t_final > 0.0) {
            return size("a Wiener path needs at least one step and T > 0");
        }
        if increments.len() != steps * modes.pow(dim as u32) {
            return size("increment array does not match steps x modes");
        }
        Ok(Self {
            dim,
            modes,
            t_final,
            steps,
            seed,
            path_id,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Noise modes per axis.
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.pow(self.dim as u32)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increments of every mode over step `m`.
    pub fn step(&self, m: usize) -> &[f64] {
        let w = self.mode_count();
        &self.increments[m * w..(m + 1) * w]
    }

    /// `beta_n(t_m)` for `m = 0..=steps`.
    pub fn mode_path(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for m in 0..self.steps {
            acc += self.step(m)[n];
            out.push(acc);
        }
        out
    }

    /// Writes the little-endian binary dump described in the README.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for v in [
            self.seed,
            self.path_id,
            self.steps as u64,
            self.dim as u64,
            self.modes as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.t_final.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("not a Wiener increment dump".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let seed = next(&mut r)?;
        let path_id = next(&mut r)?;
        let steps = next(&mut r)? as usize;
        let dim = next(&mut r)? as usize;
        let modes = next(&mut r)? as usize;
        let t_final = f64::from_bits(next(&mut r)?);
        if !(dim == 1 || dim == 2) || modes == 0 || steps == 0 {
            return Err(Error::Format("corrupt Wiener dump header".into()));
        }
        let count = steps
            .checked_mul(modes.pow(dim as u32))
            .ok_or_else(|| Error::Format("Wiener dump size overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * count {
            return Err(Error::Format(format!(
                "Wiener dump body holds {} bytes, expected {}",
                bytes.len(),
                8 * count
            )));
        }
        let increments = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_increments(dim, modes, t_final, steps, seed, path_id, increments)
    }
}

const DUMP_MAGIC: &[u8; 8] = b"SHEWIEN1";

/// Independent `N(0, T/M)` increments for every noise mode of `spec`.
pub fn sample_wiener_increments(
    spec: &NoiseSpec,
    steps: usize,
    t_final: f64,
    seed: u64,
    path_id: u64,
) -> Result<WienerPath> {
    if steps == 0 {
        return size("at least one time step is required");
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return domain(format!("final time must be positive, got {t_final}"));
    }
    let w = spec.mode_count();
    let sd = (t_final / steps as f64).sqrt();
    let mut increments = vec![0.0; steps * w];
    for n in 0..w {
        let mut g = rng::stream(
            seed,
            path_id,
            Purpose::Increments,
            lane(&mode_index(spec.dim, spec.modes, n)),
        );
        for m in 0..steps {
            increments[m * w + n] = sd * rng::normal(&mut g);
        }
    }
    WienerPath::from_increments(spec.dim, spec.modes, t_final, steps, seed, path_id, increments)
}

/// Brownian-bridge refinement by a power-of-two factor.
pub fn refine_path(path: &WienerPath, factor: usize) -> Result<WienerPath> {
    if factor == 0 || !factor.is_power_of_two() {
        return domain(format!("refinement factor must be a power of two, got {factor}"));
    }
    let mut p = path.clone();
    let mut f = factor;
    while f > 1 {
        p = bisect_path(&p);
        f /= 2;
    }
    Ok(p)
}

// Split every cell at its midpoint: the first half is N(Delta/2, tau/4) given Delta.
fn bisect_path(path: &WienerPath) -> WienerPath {
    let w = path.mode_count();
    let m = path.steps;
    let fine = 2 * m;
    let sd = 0.5 * path.dt().sqrt();
    let mut out = vec![0.0; fine * w];
    for n in 0..w {
        let mut g = rng::stream(
            path.seed,
            path.path_id,
            Purpose::Bridge { steps: fine as u64 },
            lane(&mode_index(path.dim, path.modes, n)),
        );
        for j in 0..m {
            let delta = path.increments[j * w + n];
            let first = 0.5 * delta + sd * rng::normal(&mut g);
            out[2 * j * w + n] = first;
            out[(2 * j + 1) * w + n] = delta - first;
        }
    }
    WienerPath {
        steps: fine,
        increments: out,
        ..path.clone()
    }
}

/// Sums consecutive groups of `factor` increments.
pub fn coarsen_path(path: &WienerPath, factor: usize) -> Result<WienerPath> {
    if factor == 0 || path.steps % factor != 0 {
        return size(format!(
            "cannot coarsen {} steps by a factor of {factor}",
            path.steps
        ));
    }
    let w = path.mode_count();
    let coarse = path.steps / factor;
    let mut out = vec![0.0; coarse * w];
    for j in 0..coarse {
        for n in 0..w {
            out[j * w + n] = stats::sum((0..factor).map(|i| path.increments[(j * factor + i) * w + n]));
        }
    }
    Ok(WienerPath {
        steps: coarse,
        increments: out,
        ..path.clone()
    })
}
