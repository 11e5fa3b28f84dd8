//! Nemytskii drift and diffusion, gamma-radonifying norms of finite-rank
//! operators into `L^q`, and fitted growth constants of `S(t) F` and `S(t) G`.

use std::f64::consts::E;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, size, Error, Result};
use crate::noise::{Eigenfunctions, NoiseSpec};
use crate::rng::{self, Purpose};
use crate::spectral::{self, EigenSystem, GridField, SineTransform};
use crate::stats;

/// Lipschitz scalar nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    Zero,
    /// `a x + b`.
    Linear { a: f64, b: f64 },
    /// `a sin(x)`.
    ScaledSine { a: f64 },
    /// Piecewise-linear interpolation through `(x, y)` nodes, constant outside.
    Table { x: Vec<f64>, y: Vec<f64> },
}

impl ScalarFn {
    pub fn identity() -> Self {
        ScalarFn::Linear { a: 1.0, b: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        ScalarFn::Linear { a: 0.0, b: c }
    }

    /// Tabulates `f` at `nodes` equispaced points of `[lo, hi]`.
    pub fn tabulate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> Self {
        let x: Vec<f64> = (0..nodes)
            .map(|i| lo + (hi - lo) * i as f64 / (nodes - 1) as f64)
            .collect();
        let y = x.iter().map(|&v| f(v)).collect();
        ScalarFn::Table { x, y }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let finite = |v: &f64| v.is_finite();
        match self {
            ScalarFn::Zero => Ok(()),
            ScalarFn::Linear { a, b } if finite(a) && finite(b) => Ok(()),
            ScalarFn::ScaledSine { a } if finite(a) => Ok(()),
            ScalarFn::Table { x, y } => {
                if x.len() < 2 || x.len() != y.len() {
                    Err("table needs at least two nodes and matching x/y lengths".into())
                } else if x.windows(2).any(|w| !(w[1] > w[0])) {
                    Err("table nodes must be strictly increasing".into())
                } else if !x.iter().chain(y).all(finite) {
                    Err("table entries must be finite".into())
                } else {
                    Ok(())
                }
            }
            _ => Err("coefficients must be finite".into()),
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { a, b } => a * v + b,
            ScalarFn::ScaledSine { a } => a * v.sin(),
            ScalarFn::Table { x, y } => {
                let n = x.len();
                if v <= x[0] {
                    return y[0];
                }
                if v >= x[n - 1] {
                    return y[n - 1];
                }
                let j = x.partition_point(|&p| p <= v) - 1;
                let w = (v - x[j]) / (x[j + 1] - x[j]);
                y[j] + w * (y[j + 1] - y[j])
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { a, .. } => a.abs(),
            ScalarFn::ScaledSine { a } => a.abs(),
            ScalarFn::Table { x, y } => x
                .windows(2)
                .zip(y.windows(2))
                .map(|(a, b)| ((b[1] - b[0]) / (a[1] - a[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// `Some(c)` when the function is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarFn::Zero => Some(0.0),
            ScalarFn::Linear { a, b } if *a == 0.0 => Some(*b),
            ScalarFn::ScaledSine { a } if *a == 0.0 => Some(0.0),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Largest observed `|f(x) - f(y)| / |x - y|` over random pairs in `[-r, r]`.
    pub fn sampled_lipschitz(&self, pairs: usize, r: f64, seed: u64) -> f64 {
        let mut g = rng::stream(seed, 0, Purpose::Other(0x11f), 0);
        (0..pairs)
            .map(|_| {
                let a = g.random_range(-r..r);
                let b = g.random_range(-r..r);
                if a == b {
                    0.0
                } else {
                    (self.eval(a) - self.eval(b)).abs() / (a - b).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `F(u)(xi) = f(u(xi))`.
pub fn apply_f(u: &GridField, f: &ScalarFn) -> Result<GridField> {
    u.map(|v| f.eval(v))
}

/// `G(u) h_n (xi) = sqrt(lambda_n) g(u(xi)) h_n(xi)`.
pub fn apply_g_mode(u: &GridField, n: usize, g: &ScalarFn, spec: &NoiseSpec) -> Result<GridField> {
    if n >= spec.mode_count() {
        return size(format!("noise mode {n} exceeds N_W^d = {}", spec.mode_count()));
    }
    if spec.dim != u.dim() {
        return size("noise and grid dimensions differ");
    }
    let sqrt_l = spec.eigenvalues()[n].sqrt();
    let h = noise_mode_on_grid(spec, n, u.points_per_axis())?;
    let values = u
        .values()
        .iter()
        .zip(h.values())
        .map(|(&v, &hn)| sqrt_l * g.eval(v) * hn)
        .collect();
    GridField::new(u.dim(), u.points_per_axis(), values)
}

/// Grid values of the noise eigenfunction `h_n`.
pub fn noise_mode_on_grid(spec: &NoiseSpec, n: usize, n_g: usize) -> Result<GridField> {
    match &spec.eigenfunctions {
        Eigenfunctions::Sine => {
            let basis = spec.basis()?;
            let k = basis.multi_index(n);
            GridField::from_fn(spec.dim, n_g, |x| basis.eigenfunction(&k, x))
        }
        Eigenfunctions::Explicit { .. } => spectral::synthesize(&spec.eigenfunction(n)?, n_g),
    }
}

/// Finite-rank operator `R: U -> L^q`, stored as the images `R h_n` on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteRankOperator {
    columns: Vec<GridField>,
}

impl FiniteRankOperator {
    pub fn new(columns: Vec<GridField>) -> Result<Self> {
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| !c.same_grid(first)) {
                return size("all columns of a finite-rank operator must share one grid");
            }
        }
        Ok(Self { columns })
    }

    /// `G(u)` truncated to the noise modes of `spec`.
    pub fn diffusion(u: &GridField, g: &ScalarFn, spec: &NoiseSpec) -> Result<Self> {
        let cols = (0..spec.mode_count())
            .map(|n| apply_g_mode(u, n, g, spec))
            .collect::<Result<_>>()?;
        Self::new(cols)
    }

    pub fn columns(&self) -> &[GridField] {
        &self.columns
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            columns: self.columns.iter().map(|c| c.scale(a)).collect(),
        }
    }

    /// Adds a column; it must live on the same grid.
    pub fn push(&mut self, col: GridField) -> Result<()> {
        if let Some(first) = self.columns.first() {
            if !col.same_grid(first) {
                return size("column grid differs from the operator grid");
            }
        }
        self.columns.push(col);
        Ok(())
    }

    /// Applies a diagonal spectral multiplier to every column, resolving all
    /// `n_g` modes of the grid.
    pub fn map_spectral(&self, multiplier: impl Fn(f64) -> f64) -> Result<Self> {
        let Some(first) = self.columns.first() else {
            return Ok(self.clone());
        };
        let (dim, n_g) = (first.dim(), first.points_per_axis());
        let basis = EigenSystem::new(dim, n_g)?;
        let factors: Vec<f64> = basis.eigenvalues().iter().map(|&l| multiplier(l)).collect();
        let mut tr = SineTransform::new(dim, n_g)?;
        let mut coeffs = vec![0.0; basis.len()];
        let cols = self
            .columns
            .iter()
            .map(|c| {
                tr.analyze_into(c.values(), n_g, &mut coeffs);
                coeffs.iter_mut().zip(&factors).for_each(|(c, f)| *c *= f);
                let mut out = vec![0.0; c.values().len()];
                tr.synthesize_into(&coeffs, n_g, &mut out);
                GridField::new(dim, n_g, out)
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns: cols })
    }

    /// `(-A)^(theta/2) S(t) R`.
    pub fn smoothed(&self, t: f64, theta: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return domain(format!("semigroup time must be nonnegative, got {t}"));
        }
        self.map_spectral(|l| l.powf(theta / 2.0) * (-l * t).exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `(E || sum_n gamma_n R h_n ||_{L^q}^2)^(1/2)`.
pub fn gamma_norm_mc(r: &FiniteRankOperator, q: f64, samples: usize, seed: u64) -> Result<GammaEstimate> {
    gamma_norm_keyed(r, q, samples, seed, 0)
}

pub(crate) fn gamma_norm_keyed(
    r: &FiniteRankOperator,
    q: f64,
    samples: usize,
    seed: u64,
    key: u64,
) -> Result<GammaEstimate> {
    if samples < 100 {
        return domain(format!("gamma-norm estimation needs at least 100 samples, got {samples}"));
    }
    if !(q >= 2.0) {
        return domain(format!("integrability exponent q must satisfy q >= 2, got {q}"));
    }
    let Some(first) = r.columns.first() else {
        return Ok(GammaEstimate {
            estimate: 0.0,
            std_error: 0.0,
        });
    };
    let (dim, n_g) = (first.dim(), first.points_per_axis());
    let len = first.values().len();
    let second: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::stream(seed, key, Purpose::Gamma, s as u64);
            let mut acc = vec![0.0; len];
            for col in &r.columns {
                let z = rng::normal(&mut g);
                acc.iter_mut().zip(col.values()).for_each(|(a, v)| *a += z * v);
            }
            let norm = spectral::lq_norm_raw(&acc, dim, n_g, q);
            norm * norm
        })
        .collect();
    Ok(from_second_moments(&second))
}

pub(crate) fn from_second_moments(second: &[f64]) -> GammaEstimate {
    let m = stats::mean(second);
    let estimate = m.sqrt();
    let std_error = if m > 0.0 {
        stats::std_error(second) / (2.0 * estimate)
    } else {
        0.0
    };
    GammaEstimate {
        estimate,
        std_error,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealReport {
    /// `||(-A)^(theta/2) S(t) R||_gamma`.
    pub lhs: GammaEstimate,
    /// `||R||_gamma`.
    pub rhs: GammaEstimate,
    /// `sup_lambda lambda^(theta/2) exp(-lambda t) = (theta / (2 e t))^(theta/2)`.
    pub operator_bound: f64,
    pub ratio: f64,
    pub holds: bool,
}

/// Ideal property of the gamma norm for `(-A)^(theta/2) S(t)`.
pub fn ideal_property_check(
    r: &FiniteRankOperator,
    t: f64,
    theta: f64,
    q: f64,
    samples: usize,
    seed: u64,
) -> Result<IdealReport> {
    if !(t > 0.0) {
        return domain(format!("ideal property check needs t > 0, got {t}"));
    }
    if !(theta >= 0.0) {
        return domain(format!("smoothness index must be nonnegative, got {theta}"));
    }
    let bound = if theta == 0.0 {
        1.0
    } else {
        (theta / (2.0 * E * t)).powf(theta / 2.0)
    };
    let rhs = gamma_norm_mc(r, q, samples, seed)?;
    let lhs = gamma_norm_mc(&r.smoothed(t, theta)?, q, samples, seed)?;
    let rel = |g: GammaEstimate| if g.estimate > 0.0 { g.std_error / g.estimate } else { 0.0 };
    let slack = 1.0 + 5.0 * (rel(lhs) + rel(rhs));
    let ratio = if rhs.estimate > 0.0 {
        lhs.estimate / (bound * rhs.estimate)
    } else {
        0.0
    };
    Ok(IdealReport {
        lhs,
        rhs,
        operator_bound: bound,
        ratio,
        holds: lhs.estimate <= bound * rhs.estimate * slack,
    })
}

/// Which growth constant to fit.
#[derive(Clone, Debug)]
pub enum AssumptionTarget<'a> {
    /// `||S(t) F(z)||_theta <= K_{F,theta}(t) (1 + ||z||_theta)`.
    Drift(&'a ScalarFn),
    /// `||S(t) G(z)||_{gamma(U, E^theta)} <= K_{G,theta}(t) (1 + ||z||_theta)`.
    Diffusion(&'a ScalarFn, &'a NoiseSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    /// Fitted `sigma` in `K(t) = C t^(-sigma)`.
    pub sigma: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// The ratios did not vary with `t`; `sigma` is set to zero.
    pub degenerate: bool,
    /// `r_squared >= 0.9`, or the fit is degenerate.
    pub reliable: bool,
    pub samples: Vec<(f64, f64)>,
}

/// Fits `log y(t) = log C - sigma log t` where `y(t)` is the ratio in the
/// assumption for `target` at the fixed state `z`.
pub fn fit_assumption_constants(
    target: AssumptionTarget<'_>,
    theta: f64,
    q: f64,
    z: &GridField,
    t_grid: &[f64],
    gamma_samples: usize,
    seed: u64,
) -> Result<AssumptionConstants> {
    if t_grid.len() < 2 || t_grid.iter().any(|&t| !(t > 0.0)) {
        return domain("fit needs at least two positive times");
    }
    if !(theta >= 0.0) {
        return domain(format!("smoothness index must be nonnegative, got {theta}"));
    }
    let n_g = z.points_per_axis();
    let full = EigenSystem::shared(z.dim(), n_g)?;
    let z_theta = spectral::etheta_norm(&spectral::analyze(z, full.clone())?, theta, q, n_g)?;
    let op = match target {
        AssumptionTarget::Drift(f) => FiniteRankOperator::new(vec![apply_f(z, f)?])?,
        AssumptionTarget::Diffusion(g, spec) => FiniteRankOperator::diffusion(z, g, spec)?,
    };
    let drift = matches!(target, AssumptionTarget::Drift(_));
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let img = op.smoothed(t, theta)?;
        let norm = if drift {
            spectral::lq_norm(&img.columns[0], q)?
        } else {
            gamma_norm_mc(&img, q, gamma_samples, seed)?.estimate
        };
        samples.push((t, norm / (1.0 + z_theta)));
    }
    let lx: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ly: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let window = (
        t_grid.iter().cloned().fold(f64::INFINITY, f64::min),
        t_grid.iter().cloned().fold(0.0, f64::max),
    );
    let spread = ly.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ly.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(spread > 1e-12) {
        return Ok(AssumptionConstants {
            sigma: 0.0,
            prefactor: samples[0].1,
            r_squared: f64::NAN,
            window,
            degenerate: true,
            reliable: true,
            samples,
        });
    }
    let fit = stats::linear_fit(&lx, &ly).ok_or_else(|| Error::Domain("degenerate time grid".into()))?;
    Ok(AssumptionConstants {
        sigma: -fit.slope,
        prefactor: fit.intercept.exp(),
        r_squared: fit.r_squared,
        window,
        degenerate: false,
        reliable: fit.r_squared >= 0.9,
        samples,
    })
}

/// Constant kernels `K_F = L_f` and `K_G = L_g sum_n sqrt(lambda_n) ||h_n||_inf`
/// for the contraction factor at `theta = 0`.
pub fn structural_constants(f: &ScalarFn, g: &ScalarFn, spec: &NoiseSpec) -> Result<(f64, f64)> {
    let sup_norms: Vec<f64> = match &spec.eigenfunctions {
        Eigenfunctions::Sine => vec![2f64.powf(spec.dim as f64 / 2.0); spec.mode_count()],
        Eigenfunctions::Explicit { .. } => (0..spec.mode_count())
            .map(|n| {
                let u = noise_mode_on_grid(spec, n, (4 * spec.modes).max(64))?;
                spectral::holder_norm(&u, 0.0)
            })
            .collect::<Result<_>>()?,
    };
    let cq0 = stats::sum(spec.eigenvalues().iter().zip(&sup_norms).map(|(l, h)| l.sqrt() * h));
    Ok((f.lipschitz(), g.lipschitz() * cq0))
}

/// Image of `x` as a one-column operator, the rank-one `h_1 (x) x`.
pub fn rank_one(x: GridField) -> FiniteRankOperator {
    FiniteRankOperator { columns: vec![x] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};
    use std::f64::consts::{PI, SQRT_2};

    fn grid(n_g: usize, f: impl Fn(f64) -> f64) -> GridField {
        GridField::from_fn(1, n_g, |x| f(x[0])).unwrap()
    }

    fn random_operator(rank: usize, n_g: usize, seed: u64) -> FiniteRankOperator {
        let mut g = rng::stream(seed, 0, Purpose::Other(1), 0);
        let cols = (0..rank)
            .map(|_| {
                let a: Vec<f64> = (0..4).map(|_| g.random_range(-1.0..1.0)).collect();
                grid(n_g, |x| {
                    a.iter()
                        .enumerate()
                        .map(|(k, c)| c * SQRT_2 * ((k + 1) as f64 * PI * x).sin())
                        .sum()
                })
            })
            .collect();
        FiniteRankOperator::new(cols).unwrap()
    }

    #[test]
    fn drift_examples() {
        let u = grid(16, |x| x - 0.3);
        assert!(apply_f(&u, &ScalarFn::Zero).unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(apply_f(&u, &ScalarFn::identity()).unwrap(), u);
        let half_pi = GridField::constant(1, 8, PI / 2.0).unwrap();
        let s = apply_f(&half_pi, &ScalarFn::ScaledSine { a: 1.0 }).unwrap();
        assert!(s.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn diffusion_examples() {
        let spec = NoiseSpec::power_law(1, 8, 1.0, 2.0, 0.0);
        let u = grid(32, |x| (3.0 * x).cos());
        let z = apply_g_mode(&u, 2, &ScalarFn::Zero, &spec).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let add = apply_g_mode(&u, 2, &ScalarFn::constant(1.0), &spec).unwrap();
        let expect = grid(32, |x| SQRT_2 * (3.0 * PI * x).sin() / 9.0);
        for (a, b) in add.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        let silent = NoiseSpec::power_law(1, 8, 0.0, 2.0, 0.0);
        let z = apply_g_mode(&u, 1, &ScalarFn::constant(1.0), &silent).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(apply_g_mode(&u, 8, &ScalarFn::constant(1.0), &spec).is_err());
    }

    #[test]
    fn table_interpolates_and_extrapolates_flat() {
        let t = ScalarFn::tabulate(|x| x / (1.0 + x * x), -4.0, 4.0, 33);
        assert!(t.validate().is_ok());
        assert_eq!(t.eval(10.0), t.eval(4.0));
        assert!((t.eval(0.5) - 0.4).abs() < 1e-12);
        // chord slopes of x/(1+x^2) stay below its peak derivative 1
        assert!(t.lipschitz() <= 1.0 && t.lipschitz() > 0.9);
        assert!(t.sampled_lipschitz(1000, 6.0, 1) <= t.lipschitz() + 1e-12);
        for f in [ScalarFn::ScaledSine { a: 2.0 }, ScalarFn::Linear { a: -3.0, b: 1.0 }] {
            assert!(f.sampled_lipschitz(1000, 5.0, 2) <= f.lipschitz() + 1e-12);
        }
        let bad = ScalarFn::Table {
            x: vec![0.0, 0.0],
            y: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rank_one_gamma_norm_is_lq_norm() {
        let x = grid(64, |s| (2.0 * PI * s).sin() + 0.3);
        for q in [2.0, 4.0] {
            let est = gamma_norm_mc(&rank_one(x.clone()), q, 4000, 1).unwrap();
            let exact = spectral::lq_norm(&x, q).unwrap();
            assert!((est.estimate - exact).abs() < 4.0 * est.std_error);
        }
    }

    #[test]
    fn zero_operator_has_zero_norm() {
        let zero = FiniteRankOperator::new(vec![GridField::constant(1, 8, 0.0).unwrap(); 3]).unwrap();
        let est = gamma_norm_mc(&zero, 2.0, 100, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(gamma_norm_mc(&zero, 2.0, 0, 1).is_err());
        let rep = ideal_property_check(&zero, 0.1, 1.0, 2.0, 100, 1).unwrap();
        assert_eq!((rep.lhs.estimate, rep.rhs.estimate), (0.0, 0.0));
    }

    #[test]
    fn diagonal_operator_matches_hilbert_schmidt() {
        let sig = [1.0, 0.5, 0.25, 2.0];
        let cols = sig
            .iter()
            .enumerate()
            .map(|(n, s)| grid(63, |x| s * SQRT_2 * ((n + 1) as f64 * PI * x).sin()))
            .collect();
        let r = FiniteRankOperator::new(cols).unwrap();
        let est = gamma_norm_mc(&r, 2.0, 5000, 3).unwrap();
        let hs = sig.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((est.estimate - hs).abs() < 4.0 * est.std_error);
    }

    #[test]
    fn homogeneity_is_exact_for_dyadic_scalings() {
        let r = random_operator(5, 31, 7);
        for q in [2.0, 4.0] {
            let base = gamma_norm_mc(&r, q, 200, 9).unwrap().estimate;
            for a in [2.0, -0.5, 0.25] {
                let s = gamma_norm_mc(&r.scale(a), q, 200, 9).unwrap().estimate;
                assert_eq!(s, a.abs() * base);
            }
            let s = gamma_norm_mc(&r.scale(3.7), q, 200, 9).unwrap().estimate;
            assert!((s - 3.7 * base).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn adding_a_column_never_decreases_the_q2_estimate() {
        let mut r = random_operator(3, 31, 4);
        let mut prev = gamma_norm_mc(&r, 2.0, 300, 5).unwrap().estimate;
        for extra in random_operator(4, 31, 12).columns() {
            r.push(extra.clone()).unwrap();
            let next = gamma_norm_mc(&r, 2.0, 300, 5).unwrap().estimate;
            assert!(next >= prev * (1.0 - 1e-12));
            prev = next;
        }
    }

    #[test]
    fn ideal_property_examples() {
        let r = random_operator(8, 63, 2);
        for t in [0.01, 0.5] {
            let rep = ideal_property_check(&r, t, 0.0, 2.0, 400, 1).unwrap();
            assert!(rep.holds && rep.ratio <= 1.0 + 1e-12);
        }
        for seed in 0..20 {
            let r = random_operator(8, 63, 100 + seed);
            let rep = ideal_property_check(&r, 0.1, 1.0, 2.0, 200, seed).unwrap();
            assert!(rep.holds, "seed {seed}: {rep:?}");
        }
        assert!(ideal_property_check(&r, 0.0, 1.0, 2.0, 200, 0).is_err());
    }

    #[test]
    fn lipschitz_transfer_to_nemytskii() {
        let f = ScalarFn::ScaledSine { a: 1.5 };
        let mut g = rng::stream(1, 0, Purpose::Other(2), 0);
        for _ in 0..50 {
            let a: Vec<f64> = (0..32).map(|_| g.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..32).map(|_| g.random_range(-3.0..3.0)).collect();
            let u = GridField::new(1, 32, a).unwrap();
            let v = GridField::new(1, 32, b).unwrap();
            for q in [2.0, 4.0] {
                let fu = apply_f(&u, &f).unwrap();
                let fv = apply_f(&v, &f).unwrap();
                let d = |x: &GridField, y: &GridField| {
                    let diff: Vec<f64> = x.values().iter().zip(y.values()).map(|(p, q)| p - q).collect();
                    spectral::lq_norm(&GridField::new(1, 32, diff).unwrap(), q).unwrap()
                };
                assert!(d(&fu, &fv) <= f.lipschitz() * d(&u, &v) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn diffusion_constant_at_theta_zero_is_flat() {
        let spec = NoiseSpec::power_law(1, 16, 1.0, 2.0, 0.0);
        let g = ScalarFn::Linear { a: 0.5, b: 1.0 };
        let z = grid(127, |x| 0.5 * SQRT_2 * (PI * x).sin());
        let ts: Vec<f64> = (0..7).map(|i| 1e-4 * 10f64.powf(i as f64 / 3.0)).collect();
        let fit = fit_assumption_constants(AssumptionTarget::Diffusion(&g, &spec), 0.0, 2.0, &z, &ts, 400, 1)
            .unwrap();
        assert!(fit.sigma.abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn drift_constant_at_theta_zero_is_flat() {
        let f = ScalarFn::ScaledSine { a: 1.0 };
        let z = grid(127, |x| 0.5 * SQRT_2 * (PI * x).sin());
        let ts: Vec<f64> = (0..7).map(|i| 1e-4 * 10f64.powf(i as f64 / 3.0)).collect();
        let fit = fit_assumption_constants(AssumptionTarget::Drift(&f), 0.0, 2.0, &z, &ts, 100, 1).unwrap();
        assert!(fit.sigma.abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn drift_constant_singularity_matches_smoothing_rate() {
        // a rough state: sine coefficients decaying like k^(-1/2)
        let n_g = 255;
        let z = grid(n_g, |x| {
            (1..=n_g)
                .map(|k| (k as f64).powf(-0.5) * SQRT_2 * (k as f64 * PI * x).sin())
                .sum()
        });
        let ts: Vec<f64> = (0..7).map(|i| 1e-4 * 10f64.powf(i as f64 / 3.0)).collect();
        let fit = fit_assumption_constants(
            AssumptionTarget::Drift(&ScalarFn::identity()),
            0.8,
            2.0,
            &z,
            &ts,
            100,
            1,
        )
        .unwrap();
        assert!((fit.sigma - 0.4).abs() < 0.1, "{fit:?}");
        assert!(fit.reliable);
    }

    #[test]
    fn constant_ratios_are_flagged_degenerate() {
        let z = GridField::constant(1, 15, 0.0).unwrap();
        let fit = fit_assumption_constants(
            AssumptionTarget::Drift(&ScalarFn::Zero),
            0.0,
            2.0,
            &z,
            &[0.1, 0.2, 0.3],
            100,
            1,
        )
        .unwrap();
        assert!(fit.degenerate && fit.sigma == 0.0);
    }

    #[test]
    fn structural_constants_for_sine_noise() {
        let spec = NoiseSpec::power_law(1, 4, 1.0, 2.0, 0.0);
        let (cf, cg) = structural_constants(
            &ScalarFn::ScaledSine { a: 1.0 },
            &ScalarFn::Linear { a: 0.5, b: 1.0 },
            &spec,
        )
        .unwrap();
        assert_eq!(cf, 1.0);
        let expect = 0.5 * SQRT_2 * (1.0 + 0.25 + 1.0 / 9.0 + 1.0 / 16.0);
        assert!((cg - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn table_respects_its_lipschitz_constant(ys in prop::collection::vec(-2.0..2.0_f64, 5), a in -6.0..6.0_f64, b in -6.0..6.0_f64) {
            let f = ScalarFn::Table { x: vec![-2.0, -1.0, 0.0, 1.5, 3.0], y: ys };
            prop_assert!((f.eval(a) - f.eval(b)).abs() <= f.lipschitz() * (a - b).abs() + 1e-12);
        }
    }
}
