use crate::error::{size, Result};
use crate::noise::Eigenfunctions;
use crate::operators::ScalarFn;
use crate::spectral::{EigenSystem, SineTransform};

use super::{dealiased_grid, Model, SimConfig};

/// Pseudo-spectral evaluation of `P_N F(y)` and `P_N G(y) dW` plus the
/// exponential-Euler update built on them. One instance per worker.
pub(crate) struct Stepper {
    n: usize,
    noise_n: usize,
    decay: Vec<f64>,
    dt: f64,
    f: ScalarFn,
    g: ScalarFn,
    f_const: Option<f64>,
    g_const: Option<f64>,
    const_coeffs: Vec<f64>,
    sqrt_q: Vec<f64>,
    rows: Option<Vec<Vec<f64>>>,
    /// Solver index of each noise mode, if it is resolved.
    to_solver: Vec<Option<usize>>,
    tr: SineTransform,
    u: Vec<f64>,
    rhs: Vec<f64>,
    dw: Vec<f64>,
    tmp: Vec<f64>,
    proj: Vec<f64>,
    ncoef: Vec<f64>,
}

impl Stepper {
    pub(crate) fn new(cfg: &SimConfig, model: &Model) -> Result<Self> {
        Self::build(cfg.dim, cfg.modes, cfg.dt(), cfg.grid_points, model)
    }

    pub(crate) fn build(
        dim: usize,
        modes: usize,
        dt: f64,
        grid_points: Option<usize>,
        model: &Model,
    ) -> Result<Self> {
        let basis = EigenSystem::new(dim, modes)?;
        let noise_basis = model.noise.basis()?;
        let n_g = grid_points.unwrap_or_else(|| dealiased_grid(modes, model.noise.modes));
        if n_g < modes.max(model.noise.modes) {
            return size(format!(
                "collocation grid of {n_g} points cannot resolve {modes} solver or {} noise modes",
                model.noise.modes
            ));
        }
        let cells = n_g.pow(dim as u32);
        let mut tr = SineTransform::new(dim, n_g)?;
        let mut const_coeffs = vec![0.0; basis.len()];
        tr.analyze_into(&vec![1.0; cells], modes, &mut const_coeffs);
        let to_solver = (0..noise_basis.len())
            .map(|i| basis.flat_index(&noise_basis.multi_index(i)))
            .collect();
        let rows = match &model.noise.eigenfunctions {
            Eigenfunctions::Sine => None,
            Eigenfunctions::Explicit { rows } => Some(rows.clone()),
        };
        Ok(Self {
            n: modes,
            noise_n: model.noise.modes,
            decay: basis.eigenvalues().iter().map(|l| (-l * dt).exp()).collect(),
            dt,
            f: model.f.clone(),
            g: model.g.clone(),
            f_const: model.f.as_constant(),
            g_const: model.g.as_constant(),
            const_coeffs,
            sqrt_q: model.noise.sqrt_eigenvalues(),
            rows,
            to_solver,
            tr,
            u: vec![0.0; cells],
            rhs: vec![0.0; cells],
            dw: vec![0.0; cells],
            tmp: vec![0.0; basis.len()],
            proj: vec![0.0; basis.len()],
            ncoef: vec![0.0; noise_basis.len()],
        })
    }

    pub(crate) fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// `x <- S(dt) [x + dt F(y) + G(y) dW]` with `y = eval_at.unwrap_or(x)`.
    pub(crate) fn step(&mut self, x: &mut [f64], eval_at: Option<&[f64]>, inc: &[f64]) {
        let mut out = std::mem::take(&mut self.tmp);
        match eval_at {
            Some(y) => self.forcing(y, self.dt, Some(inc), &mut out),
            None => self.forcing(x, self.dt, Some(inc), &mut out),
        }
        for ((xi, o), d) in x.iter_mut().zip(&out).zip(&self.decay) {
            *xi = d * (*xi + o);
        }
        self.tmp = out;
    }

    /// `out = w P_N F(y) + P_N G(y) dW`, the noise part only when `inc` is given.
    pub(crate) fn forcing(&mut self, y: &[f64], w: f64, inc: Option<&[f64]>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let drift_grid = w != 0.0 && self.f_const.is_none();
        let noise_grid = inc.is_some() && self.g_const.is_none();
        if drift_grid || noise_grid {
            self.tr.synthesize_into(y, self.n, &mut self.u);
        }
        if w != 0.0 {
            if let Some(c) = self.f_const {
                if c != 0.0 {
                    for (o, k) in out.iter_mut().zip(&self.const_coeffs) {
                        *o += w * c * k;
                    }
                }
            } else {
                for (r, &u) in self.rhs.iter_mut().zip(&self.u) {
                    *r = w * self.f.eval(u);
                }
            }
        }
        if let Some(inc) = inc {
            self.noise_coefficients(inc);
            if let Some(c) = self.g_const {
                if c != 0.0 {
                    for (i, dst) in self.to_solver.iter().enumerate() {
                        if let Some(j) = dst {
                            out[*j] += c * self.ncoef[i];
                        }
                    }
                }
            } else {
                self.tr.synthesize_into(&self.ncoef, self.noise_n, &mut self.dw);
                if drift_grid {
                    for ((r, &u), &d) in self.rhs.iter_mut().zip(&self.u).zip(&self.dw) {
                        *r += self.g.eval(u) * d;
                    }
                } else {
                    for ((r, &u), &d) in self.rhs.iter_mut().zip(&self.u).zip(&self.dw) {
                        *r = self.g.eval(u) * d;
                    }
                }
            }
        }
        if drift_grid || noise_grid {
            self.tr.analyze_into(&self.rhs, self.n, &mut self.proj);
            for (o, p) in out.iter_mut().zip(&self.proj) {
                *o += p;
            }
        }
    }

    // Sine coefficients of sum_n sqrt(lambda_n) dbeta_n h_n in the noise basis.
    fn noise_coefficients(&mut self, inc: &[f64]) {
        match &self.rows {
            None => {
                for ((c, s), d) in self.ncoef.iter_mut().zip(&self.sqrt_q).zip(inc) {
                    *c = s * d;
                }
            }
            Some(rows) => {
                self.ncoef.iter_mut().for_each(|c| *c = 0.0);
                for ((row, s), d) in rows.iter().zip(&self.sqrt_q).zip(inc) {
                    let a = s * d;
                    if a != 0.0 {
                        for (c, r) in self.ncoef.iter_mut().zip(row) {
                            *c += a * r;
                        }
                    }
                }
            }
        }
    }
}
