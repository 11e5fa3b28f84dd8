//! Dirichlet Laplacian on the unit interval or square, in its sine eigenbasis.
//!
//! Coefficients of a [`SpectralField`] are stored flat. In two dimensions the
//! multi-index `(k1, k2)` lives at `(k1 - 1) * N + (k2 - 1)`; grid values of a
//! [`GridField`] use the same row-major convention with `n_g` points per axis.

use std::cell::RefCell;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use rayon::prelude::*;
use rustdct::{Dst1, DctPlanner};

use crate::error::{domain, size, Error, Result};
use crate::stats;

/// Eigenpairs `(lambda_k, h_k)` of `-A` for the first `N` modes per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSystem {
    dim: usize,
    n: usize,
    eigenvalues: Vec<f64>,
}

impl EigenSystem {
    pub fn new(dim: usize, modes_per_axis: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return domain(format!("dimension must be 1 or 2, got {dim}"));
        }
        if modes_per_axis == 0 {
            return size("at least one mode per axis is required");
        }
        let n = modes_per_axis;
        let eigenvalues = (0..n.pow(dim as u32))
            .map(|i| {
                let k2: usize = multi_index(dim, n, i).iter().map(|k| k * k).sum();
                PI * PI * k2 as f64
            })
            .collect();
        Ok(Self {
            dim,
            n,
            eigenvalues,
        })
    }

    pub fn shared(dim: usize, modes_per_axis: usize) -> Result<Arc<Self>> {
        Self::new(dim, modes_per_axis).map(Arc::new)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes_per_axis(&self) -> usize {
        self.n
    }

    /// Total number of modes, `N^d`.
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, index: usize) -> f64 {
        self.eigenvalues[index]
    }

    /// One-based multi-index of flat position `index`.
    pub fn multi_index(&self, index: usize) -> Vec<usize> {
        multi_index(self.dim, self.n, index)
    }

    /// Flat position of a one-based multi-index, if it is in range.
    pub fn flat_index(&self, k: &[usize]) -> Option<usize> {
        if k.len() != self.dim || k.iter().any(|&ki| ki == 0 || ki > self.n) {
            return None;
        }
        Some(k.iter().fold(0, |acc, &ki| acc * self.n + ki - 1))
    }

    /// `h_k(xi) = prod_i sqrt(2) sin(k_i pi xi_i)`.
    pub fn eigenfunction(&self, k: &[usize], xi: &[f64]) -> f64 {
        k.iter()
            .zip(xi)
            .map(|(&ki, &x)| SQRT_2 * (ki as f64 * PI * x).sin())
            .product()
    }
}

fn multi_index(dim: usize, n: usize, index: usize) -> Vec<usize> {
    if dim == 1 {
        vec![index + 1]
    } else {
        vec![index / n + 1, index % n + 1]
    }
}

/// Coefficients of a function in the sine eigenbasis.
#[derive(Clone, Debug)]
pub struct SpectralField {
    basis: Arc<EigenSystem>,
    coeffs: Vec<f64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        *self.basis == *other.basis && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(basis: Arc<EigenSystem>) -> Self {
        let coeffs = vec![0.0; basis.len()];
        Self { basis, coeffs }
    }

    pub fn from_coeffs(basis: Arc<EigenSystem>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return size(format!(
                "expected {} coefficients, got {}",
                basis.len(),
                coeffs.len()
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return domain("coefficients must be finite");
        }
        Ok(Self { basis, coeffs })
    }

    /// `c * h_k` for a one-based multi-index `k`.
    pub fn single_mode(basis: Arc<EigenSystem>, k: &[usize], c: f64) -> Result<Self> {
        let idx = basis
            .flat_index(k)
            .ok_or_else(|| Error::Size(format!("mode {k:?} outside the basis range")))?;
        let mut field = Self::zeros(basis);
        field.coeffs[idx] = c;
        Ok(field)
    }

    pub fn basis(&self) -> &Arc<EigenSystem> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map_coeffs(|_, c| a * c)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if self.basis != other.basis && *self.basis != *other.basis {
            return size("fields live on different bases");
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x + a * y)
            .collect();
        Ok(Self {
            basis: self.basis.clone(),
            coeffs,
        })
    }

    /// Euclidean norm of the coefficient vector, i.e. the L2 norm of the function.
    pub fn l2_norm(&self) -> f64 {
        stats::sum(self.coeffs.iter().map(|c| c * c)).sqrt()
    }

    fn map_coeffs(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let coeffs = self
            .basis
            .eigenvalues()
            .iter()
            .zip(&self.coeffs)
            .map(|(&l, &c)| f(l, c))
            .collect();
        Self {
            basis: self.basis.clone(),
            coeffs,
        }
    }
}

/// Values on the interior collocation grid `xi_j = j / (n_g + 1)`, `j = 1..n_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    dim: usize,
    n_g: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(dim: usize, n_g: usize, values: Vec<f64>) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return domain(format!("dimension must be 1 or 2, got {dim}"));
        }
        if n_g == 0 || values.len() != n_g.pow(dim as u32) {
            return size(format!(
                "{} values do not fill a {n_g}^{dim} grid",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("grid values must be finite");
        }
        Ok(Self { dim, n_g, values })
    }

    pub fn from_fn(dim: usize, n_g: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let h = 1.0 / (n_g + 1) as f64;
        let values = (0..n_g.pow(dim as u32))
            .map(|i| {
                if dim == 1 {
                    f(&[(i + 1) as f64 * h])
                } else {
                    f(&[(i / n_g + 1) as f64 * h, (i % n_g + 1) as f64 * h])
                }
            })
            .collect();
        Self::new(dim, n_g, values)
    }

    pub fn constant(dim: usize, n_g: usize, c: f64) -> Result<Self> {
        Self::new(dim, n_g, vec![c; n_g.pow(dim as u32)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n_g
    }

    /// Grid spacing `1 / (n_g + 1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.n_g + 1) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Coordinates of grid point `index`.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        multi_index(self.dim, self.n_g, index)
            .into_iter()
            .map(|j| j as f64 * h)
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dim, self.n_g, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            n_g: self.n_g,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n_g == other.n_g
    }
}

thread_local! {
    static PLANNER: RefCell<DctPlanner<f64>> = RefCell::new(DctPlanner::new());
}

fn plan(n_g: usize) -> Arc<dyn Dst1<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_dst1(n_g))
}

/// Reusable sine transform between `N^d` coefficients and an `n_g^d` grid.
///
/// Holds its own work buffers, so hot loops can transform without allocating.
pub struct SineTransform {
    dim: usize,
    n_g: usize,
    dst: Arc<dyn Dst1<f64>>,
    scratch: Vec<f64>,
    work: Vec<f64>,
}

impl SineTransform {
    pub fn new(dim: usize, n_g: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return domain(format!("dimension must be 1 or 2, got {dim}"));
        }
        if n_g == 0 {
            return size("grid must have at least one point");
        }
        let dst = plan(n_g);
        let scratch = vec![0.0; dst.get_scratch_len()];
        let work = if dim == 2 {
            vec![0.0; n_g * n_g]
        } else {
            Vec::new()
        };
        Ok(Self {
            dim,
            n_g,
            dst,
            scratch,
            work,
        })
    }

    pub fn points_per_axis(&self) -> usize {
        self.n_g
    }

    /// Grid values of the field with coefficients `coeffs` (`N` modes per axis).
    pub fn synthesize_into(&mut self, coeffs: &[f64], n: usize, out: &mut [f64]) {
        let g = self.n_g;
        debug_assert!(n <= g);
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.dim == 1 {
            out[..n].copy_from_slice(coeffs);
            dst1(&*self.dst, out, &mut self.scratch);
            out.iter_mut().for_each(|v| *v *= SQRT_2);
        } else {
            for k1 in 0..n {
                out[k1 * g..k1 * g + n].copy_from_slice(&coeffs[k1 * n..(k1 + 1) * n]);
            }
            self.transform_2d(out, n);
            out.iter_mut().for_each(|v| *v *= 2.0);
        }
    }

    /// First `N` coefficients per axis of the grid function `values`.
    pub fn analyze_into(&mut self, values: &[f64], n: usize, out: &mut [f64]) {
        let g = self.n_g;
        debug_assert!(n <= g);
        if self.dim == 1 {
            self.work.clear();
            self.work.extend_from_slice(values);
            dst1(&*self.dst, &mut self.work, &mut self.scratch);
            let s = SQRT_2 / (g + 1) as f64;
            for (o, w) in out.iter_mut().zip(&self.work[..n]) {
                *o = s * w;
            }
        } else {
            let mut buf = std::mem::take(&mut self.work);
            buf.copy_from_slice(values);
            self.transform_2d(&mut buf, g);
            let s = 2.0 / ((g + 1) * (g + 1)) as f64;
            for k1 in 0..n {
                for k2 in 0..n {
                    out[k1 * n + k2] = s * buf[k1 * g + k2];
                }
            }
            self.work = buf;
        }
    }

    // Separable unnormalised DST-I over a g x g block whose first `rows` rows
    // may be nonzero.
    fn transform_2d(&mut self, buf: &mut [f64], rows: usize) {
        let g = self.n_g;
        for r in 0..rows {
            dst1(&*self.dst, &mut buf[r * g..(r + 1) * g], &mut self.scratch);
        }
        transpose_square(buf, g);
        for r in 0..g {
            dst1(&*self.dst, &mut buf[r * g..(r + 1) * g], &mut self.scratch);
        }
        transpose_square(buf, g);
    }
}

// The FFT-backed DST-I reads two scratch slots it never writes, so stale
// values from the previous call would leak into the result.
fn dst1(dst: &dyn Dst1<f64>, buf: &mut [f64], scratch: &mut [f64]) {
    scratch.iter_mut().for_each(|v| *v = 0.0);
    dst.process_dst1_with_scratch(buf, scratch);
}

fn transpose_square(buf: &mut [f64], g: usize) {
    for i in 0..g {
        for j in i + 1..g {
            buf.swap(i * g + j, j * g + i);
        }
    }
}

/// `S(t) x`: multiplies each coefficient by `exp(-lambda_k t)`.
pub fn apply_semigroup(x: &SpectralField, t: f64) -> Result<SpectralField> {
    if !(t >= 0.0) || !t.is_finite() {
        return domain(format!("semigroup time must be finite and nonnegative, got {t}"));
    }
    if t == 0.0 {
        return Ok(x.clone());
    }
    Ok(x.map_coeffs(|l, c| (-l * t).exp() * c))
}

/// `(-A)^s x`: multiplies each coefficient by `lambda_k^s`.
pub fn apply_fractional_power(x: &SpectralField, s: f64) -> Result<SpectralField> {
    if !s.is_finite() {
        return domain("fractional power exponent must be finite");
    }
    if s == 0.0 {
        return Ok(x.clone());
    }
    Ok(x.map_coeffs(|l, c| l.powf(s) * c))
}

pub fn synthesize(x: &SpectralField, n_g: usize) -> Result<GridField> {
    let basis = x.basis();
    let n = basis.modes_per_axis();
    if n_g < n {
        return size(format!(
            "synthesis grid of {n_g} points cannot carry {n} modes per axis"
        ));
    }
    let mut out = vec![0.0; n_g.pow(basis.dim() as u32)];
    SineTransform::new(basis.dim(), n_g)?.synthesize_into(x.coeffs(), n, &mut out);
    GridField::new(basis.dim(), n_g, out)
}

/// Projection of a grid function onto the first `N` modes per axis.
pub fn analyze(u: &GridField, basis: Arc<EigenSystem>) -> Result<SpectralField> {
    let n = basis.modes_per_axis();
    if basis.dim() != u.dim() {
        return size("grid and basis dimensions differ");
    }
    if n > u.points_per_axis() {
        return size(format!(
            "cannot resolve {n} modes per axis from {} grid points",
            u.points_per_axis()
        ));
    }
    let mut coeffs = vec![0.0; basis.len()];
    SineTransform::new(u.dim(), u.points_per_axis())?.analyze_into(u.values(), n, &mut coeffs);
    Ok(SpectralField { basis, coeffs })
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 2.0) || !q.is_finite() {
        return domain(format!("integrability exponent q must satisfy q >= 2, got {q}"));
    }
    Ok(())
}

/// Riemann sum of `|u|^q` over interior points. `q` is assumed valid.
pub(crate) fn lq_norm_raw(values: &[f64], dim: usize, n_g: usize, q: f64) -> f64 {
    let h = 1.0 / (n_g + 1) as f64;
    let w = h.powi(dim as i32);
    let s = if q == 2.0 {
        stats::sum(values.iter().map(|v| v * v))
    } else if q == 4.0 {
        stats::sum(values.iter().map(|v| (v * v) * (v * v)))
    } else {
        stats::sum(values.iter().map(|v| v.abs().powf(q)))
    };
    (w * s).powf(1.0 / q)
}

/// `(h^d sum_j |u(xi_j)|^q)^(1/q)`.
pub fn lq_norm(u: &GridField, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(lq_norm_raw(u.values(), u.dim(), u.points_per_axis(), q))
}

/// `||(-A)^(theta/2) x||_{L^q}` evaluated on an `n_g` grid.
pub fn etheta_norm(x: &SpectralField, theta: f64, q: f64, n_g: usize) -> Result<f64> {
    if !(theta >= 0.0) {
        return domain(format!("smoothness index must be nonnegative, got {theta}"));
    }
    check_q(q)?;
    let y = apply_fractional_power(x, theta / 2.0)?;
    lq_norm(&synthesize(&y, n_g)?, q)
}

/// Sobolev-Slobodeckij norm with the diagonal of the double sum excluded.
pub fn slobodeckij_norm(u: &GridField, theta: f64, q: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return domain(format!("Slobodeckij order must lie in (0,1), got {theta}"));
    }
    check_q(q)?;
    let d = u.dim();
    let h = u.spacing();
    let n = u.values().len();
    let expo = (d as f64 + theta * q) / 2.0;
    let vals = u.values();
    let pts: Vec<Vec<f64>> = (0..n).map(|i| u.point(i)).collect();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            stats::sum((0..n).filter(|&l| l != j).map(|l| {
                let r2: f64 = pts[j].iter().zip(&pts[l]).map(|(a, b)| (a - b).powi(2)).sum();
                (vals[j] - vals[l]).abs().powf(q) / r2.powf(expo)
            }))
        })
        .collect();
    let semi = h.powi(2 * d as i32) * stats::sum(rows);
    let base = lq_norm_raw(vals, d, u.points_per_axis(), q).powf(q);
    Ok((base + semi).powf(1.0 / q))
}

/// Sup norm plus the `eps`-Hölder seminorm over grid pairs; `eps = 0` gives the sup norm.
pub fn holder_norm(u: &GridField, eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eps) {
        return domain(format!("Hölder exponent must lie in [0,1], got {eps}"));
    }
    let vals = u.values();
    let sup = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if eps == 0.0 {
        return Ok(sup);
    }
    Ok(sup + holder_seminorm(u, eps))
}

pub(crate) fn holder_seminorm(u: &GridField, eps: f64) -> f64 {
    let vals = u.values();
    let n = vals.len();
    let h = u.spacing();
    if u.dim() == 1 {
        // pairwise quotients depend only on the index gap
        let pow: Vec<f64> = (0..n).map(|g| (g as f64 * h).powf(eps)).collect();
        (1..n)
            .into_par_iter()
            .map(|gap| {
                let denom = pow[gap];
                let mut m = 0.0_f64;
                for j in 0..n - gap {
                    m = m.max((vals[j + gap] - vals[j]).abs());
                }
                m / denom
            })
            .reduce(|| 0.0, f64::max)
    } else {
        let pts: Vec<Vec<f64>> = (0..n).map(|i| u.point(i)).collect();
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mut m = 0.0_f64;
                for l in j + 1..n {
                    let r2: f64 = pts[j].iter().zip(&pts[l]).map(|(a, b)| (a - b).powi(2)).sum();
                    m = m.max((vals[j] - vals[l]).abs() / r2.powf(eps / 2.0));
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    }
}
