use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, size, Result};
use crate::noise::{NoiseSpec, WienerPath};
use crate::operators::ScalarFn;
use crate::spectral::SpectralField;

use super::{Model, SolutionPath, Stepper};

/// Cell rule for the deterministic convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// `sum_j S(t - t_j) F(X_j) dt`.
    #[default]
    LeftPoint,
    /// `sum_j int_{t_j}^{t_{j+1}} S(t - r) dr F(X_j)`.
    ExactCell,
}

fn require_full(path: &SolutionPath) -> Result<()> {
    if path.stride() != 1 || path.len() < 2 {
        return size("convolutions need every time step of the path recorded");
    }
    Ok(())
}

fn stepper_for(path: &SolutionPath, f: &ScalarFn, g: &ScalarFn, noise: Option<&NoiseSpec>) -> Result<Stepper> {
    let b = path.basis();
    let noise = match noise {
        Some(n) => n.clone(),
        None => NoiseSpec::power_law(b.dim(), 1, 0.0, 1.0, 0.0),
    };
    let model = Model {
        f: f.clone(),
        g: g.clone(),
        noise,
    };
    Stepper::build(b.dim(), b.modes_per_axis(), path.dt(), None, &model)
}

fn to_fields(path: &SolutionPath, states: Vec<Vec<f64>>) -> Vec<SpectralField> {
    states
        .into_iter()
        .map(|c| SpectralField::from_coeffs(path.basis().clone(), c).expect("sized to the basis"))
        .collect()
}

/// `int_0^t S(t - r) F(X(r)) dr` at every grid time of `path`.
pub fn deterministic_convolution(path: &SolutionPath, f: &ScalarFn, quad: Quadrature) -> Result<Vec<SpectralField>> {
    require_full(path)?;
    let mut st = stepper_for(path, f, &ScalarFn::Zero, None)?;
    let dt = path.dt();
    let decay = st.decay().to_vec();
    let cell: Vec<f64> = path
        .basis()
        .eigenvalues()
        .iter()
        .map(|&l| -(-l * dt).exp_m1() / l)
        .collect();
    let n = path.basis().len();
    let mut y = vec![0.0; n];
    let mut forcing = vec![0.0; n];
    let mut out = vec![y.clone()];
    for m in 0..path.len() - 1 {
        st.forcing(path.state(m), 1.0, None, &mut forcing);
        for i in 0..n {
            y[i] = match quad {
                Quadrature::LeftPoint => decay[i] * (y[i] + dt * forcing[i]),
                Quadrature::ExactCell => decay[i] * y[i] + cell[i] * forcing[i],
            };
        }
        out.push(y.clone());
    }
    Ok(to_fields(path, out))
}

// P_N G(X_j) dW_j for j = 0..M-1.
fn noise_terms(path: &SolutionPath, g: &ScalarFn, noise: &NoiseSpec, w: &WienerPath) -> Result<(Stepper, Vec<Vec<f64>>)> {
    require_full(path)?;
    if w.steps() + 1 != path.len() || w.modes() != noise.modes {
        return size("Wiener path does not match the solution path");
    }
    let mut st = stepper_for(path, &ScalarFn::Zero, g, Some(noise))?;
    let n = path.basis().len();
    let terms = (0..w.steps())
        .map(|m| {
            let mut xi = vec![0.0; n];
            st.forcing(path.state(m), 0.0, Some(w.step(m)), &mut xi);
            xi
        })
        .collect();
    Ok((st, terms))
}

/// Itô sum `sum_{t_j < t} S(t - t_j) G(X(t_j)) dW_j`.
pub fn stochastic_convolution_direct(
    path: &SolutionPath,
    g: &ScalarFn,
    noise: &NoiseSpec,
    w: &WienerPath,
) -> Result<Vec<SpectralField>> {
    let (st, terms) = noise_terms(path, g, noise, w)?;
    let decay = st.decay();
    let mut z = vec![0.0; path.basis().len()];
    let mut out = vec![z.clone()];
    for xi in &terms {
        for ((zi, x), d) in z.iter_mut().zip(xi).zip(decay) {
            *zi = d * (*zi + x);
        }
        out.push(z.clone());
    }
    Ok(to_fields(path, out))
}

// Product-integration weights of (t - r)^(a - 1) over the cells at lags 1..=m.
fn kernel_weights(a: f64, dt: f64, m: usize) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    let scale = dt.powf(a) / a;
    for (d, wd) in w.iter_mut().enumerate().skip(1) {
        let d = d as f64;
        *wd = scale * (d.powf(a) - (d - 1.0).powf(a));
    }
    w
}

/// `R_a f(t_m) = sum_{j<m} w_{m-j} S(t_m - t_j) f(t_j)` with exact cell
/// integrals of `(t_m - r)^(a-1)`. `values[j]` holds the coefficients of `f(t_j)`.
pub fn r_alpha_apply(values: &[Vec<f64>], eigenvalues: &[f64], dt: f64, alpha: f64) -> Result<Vec<Vec<f64>>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain(format!("R_alpha needs alpha in (0, 1], got {alpha}"));
    }
    if !(dt > 0.0) {
        return domain("time step must be positive");
    }
    if values.iter().any(|v| v.len() != eigenvalues.len()) {
        return size("coefficient vectors do not match the eigenvalues");
    }
    let w = kernel_weights(alpha, dt, values.len().saturating_sub(1));
    Ok(apply_weighted(values, eigenvalues, dt, &w))
}

fn apply_weighted(values: &[Vec<f64>], eigenvalues: &[f64], dt: f64, w: &[f64]) -> Vec<Vec<f64>> {
    let len = values.len();
    let mut out = vec![vec![0.0; eigenvalues.len()]; len];
    let mut kernel = vec![0.0; len];
    let mut series = vec![0.0; len];
    for (k, &lam) in eigenvalues.iter().enumerate() {
        for (d, kd) in kernel.iter_mut().enumerate() {
            *kd = w[d] * (-lam * dt * d as f64).exp();
        }
        for (s, v) in series.iter_mut().zip(values) {
            *s = v[k];
        }
        let y = causal_toeplitz(&kernel, &series);
        for (o, v) in out.iter_mut().zip(y) {
            o[k] = v;
        }
    }
    out
}

thread_local! {
    static FFT: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `y[m] = sum_{j<m} kernel[m - j] x[j]`; `kernel[0]` is ignored.
pub(crate) fn causal_toeplitz(kernel: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n <= 64 {
        return (0..n)
            .map(|m| (0..m).map(|j| kernel[m - j] * x[j]).sum())
            .collect();
    }
    let len = (2 * n).next_power_of_two();
    let (fwd, inv) = FFT.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(len), p.plan_fft_inverse(len))
    });
    // pack both real sequences into one complex transform
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for i in 1..n {
        buf[i].re = kernel[i];
    }
    for (b, &v) in buf.iter_mut().zip(x) {
        b.im = v;
    }
    fwd.process(&mut buf);
    let mut prod = vec![Complex::new(0.0, 0.0); len];
    for i in 0..len {
        let a = buf[i];
        let b = buf[(len - i) % len].conj();
        let kh = (a + b) * 0.5;
        let xh = (a - b) * Complex::new(0.0, -0.5);
        prod[i] = kh * xh;
    }
    inv.process(&mut prod);
    let s = 1.0 / len as f64;
    prod[..n].iter().map(|c| c.re * s).collect()
}

/// `sin(pi a)/pi R_a G_a(t)` with
/// `G_a(t_m) = sum_{j<m} v_{m-j} S(t_m - t_j) G(X(t_j)) dW_j`.
pub fn stochastic_convolution_factorized(
    path: &SolutionPath,
    g: &ScalarFn,
    noise: &NoiseSpec,
    w: &WienerPath,
    alpha: f64,
) -> Result<Vec<SpectralField>> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return domain(format!("factorization exponent must lie in (0, 1/2), got {alpha}"));
    }
    let (_, terms) = noise_terms(path, g, noise, w)?;
    let dt = path.dt();
    let lam = path.basis().eigenvalues();
    let m = terms.len();
    // xi_j for j = 0..M-1 followed by a zero slot so lags reach t_M
    let mut xi = terms;
    xi.push(vec![0.0; lam.len()]);
    let v: Vec<f64> = kernel_weights(1.0 - alpha, dt, m)
        .into_iter()
        .map(|x| x / dt)
        .collect();
    let g_alpha = apply_weighted(&xi, lam, dt, &v);
    let w_alpha = kernel_weights(alpha, dt, m);
    let c = (PI * alpha).sin() / PI;
    let y = apply_weighted(&g_alpha, lam, dt, &w_alpha)
        .into_iter()
        .map(|row| row.into_iter().map(|x| c * x).collect())
        .collect();
    Ok(to_fields(path, y))
}

/// Discrete analogue of `sin(pi a)/pi int_s^t (t-r)^(a-1) (r-s)^(-a) dr = 1`
/// over `cells` cells, as realised by the factorized convolution.
pub fn factorization_identity(alpha: f64, cells: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("identity needs alpha in (0, 1), got {alpha}"));
    }
    let w = kernel_weights(alpha, 1.0, cells);
    let v = kernel_weights(1.0 - alpha, 1.0, cells);
    let s = crate::stats::sum((1..cells).map(|e| w[cells - e] * v[e]));
    Ok((PI * alpha).sin() / PI * s)
}
