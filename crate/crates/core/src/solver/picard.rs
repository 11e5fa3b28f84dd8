use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noise::WienerPath;
use crate::operators;
use crate::spectral::{self, SineTransform, SpectralField};
use crate::stats;

use super::{blowup, check_inputs, dealiased_grid, Model, SimConfig, SolutionPath, Stepper};

/// `L_T(u) = c_F (1 - e^{-uT}) / u + c_G ((1 - e^{-2uT}) / (2u))^(1/2)` for
/// constant kernels `K_F = c_F`, `K_G = c_G`.
pub fn contraction_factor(u: f64, c_f: f64, c_g: f64, t_final: f64) -> Result<f64> {
    if !(u > 0.0) {
        return domain(format!("weight u must be positive, got {u}"));
    }
    let a = -(-u * t_final).exp_m1() / u;
    let b = -(-2.0 * u * t_final).exp_m1() / (2.0 * u);
    Ok(c_f * a + c_g * b.sqrt())
}

/// Weight `u` with `L_T(u) = target`, by bisection on a bracket grown from below.
pub fn solve_weight(target: f64, c_f: f64, c_g: f64, t_final: f64) -> Result<f64> {
    let limit = c_f * t_final + c_g * t_final.sqrt();
    if !(target > 0.0 && target < limit) {
        return domain(format!(
            "L_T decreases from {limit:.6} to 0; no weight reaches {target}"
        ));
    }
    let l = |u: f64| contraction_factor(u, c_f, c_g, t_final).expect("u is positive");
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while l(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if l(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub weight: f64,
    /// `L_T(weight)` from the structural constants.
    pub contraction_factor: f64,
    /// Weighted distance between consecutive iterates, starting with `d(X1, X0)`.
    pub distances: Vec<f64>,
    /// `distances[k+1] / distances[k]`.
    pub ratios: Vec<f64>,
    /// A distance ratio exceeded 1 for three consecutive iterations.
    pub non_contraction: bool,
    /// Iterations performed.
    pub iterations: usize,
}

/// Picard iteration of the discrete mild map on a fixed set of noise paths.
///
/// The map sends `X` to `Y_{m+1} = S(dt) [Y_m + dt F(X_m) + G(X_m) dW_m]`,
/// whose fixed point is the exponential-Euler solution. Distances are
/// `sup_m e^{-u t_m} (E ||Y_m - X_m||_{L^q}^p)^(1/p)` over the ensemble.
pub fn picard_solve(
    cfg: &SimConfig,
    model: &Model,
    x0: &SpectralField,
    noise: &[WienerPath],
    weight: f64,
    iterations: usize,
) -> Result<(Vec<SolutionPath>, PicardReport)> {
    if noise.is_empty() {
        return domain("Picard iteration needs at least one noise path");
    }
    for w in noise {
        check_inputs(cfg, model, x0, w)?;
    }
    let (c_f, c_g) = operators::structural_constants(&model.f, &model.g, &model.noise)?;
    let factor = contraction_factor(weight, c_f, c_g, cfg.t_final)?;
    let m = cfg.steps;
    let mut iterates: Vec<Vec<Vec<f64>>> = vec![vec![x0.coeffs().to_vec(); m + 1]; noise.len()];
    let n_g = cfg
        .grid_points
        .unwrap_or_else(|| dealiased_grid(cfg.modes, model.noise.modes));
    let n = cfg.modes;
    let dim = cfg.dim;
    let q = cfg.q;
    let p = cfg.p;
    let mut distances = Vec::new();
    let mut done = 0;
    for _ in 0..iterations {
        let step: Vec<Result<(Vec<Vec<f64>>, Vec<f64>)>> = iterates
            .par_iter()
            .zip(noise)
            .map(|(prev, w)| {
                let mut st = Stepper::new(cfg, model)?;
                let mut tr = SineTransform::new(dim, n_g)?;
                let mut next = Vec::with_capacity(m + 1);
                let mut y = x0.coeffs().to_vec();
                next.push(y.clone());
                for (j, x_j) in prev.iter().take(m).enumerate() {
                    st.step(&mut y, Some(x_j), w.step(j));
                    if let Some((mode, value)) = blowup(&y) {
                        return Err(Error::BlowUp {
                            path_id: w.path_id(),
                            step: j + 1,
                            mode,
                            value,
                        });
                    }
                    next.push(y.clone());
                }
                let mut grid = vec![0.0; n_g.pow(dim as u32)];
                let moments = next
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| {
                        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                        tr.synthesize_into(&diff, n, &mut grid);
                        spectral::lq_norm_raw(&grid, dim, n_g, q).powf(p)
                    })
                    .collect();
                Ok((next, moments))
            })
            .collect();
        let mut per_time = vec![Vec::with_capacity(noise.len()); m + 1];
        for (slot, r) in iterates.iter_mut().zip(step) {
            let (next, moments) = r?;
            *slot = next;
            for (acc, v) in per_time.iter_mut().zip(moments) {
                acc.push(v);
            }
        }
        let d = per_time
            .iter()
            .enumerate()
            .map(|(j, v)| (-weight * j as f64 * cfg.dt()).exp() * stats::mean(v).powf(1.0 / p))
            .fold(0.0, f64::max);
        distances.push(d);
        done += 1;
        if d == 0.0 {
            break;
        }
    }
    let ratios: Vec<f64> = distances
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let non_contraction = ratios.windows(3).any(|r| r.iter().all(|&x| x > 1.0));
    let basis = x0.basis().clone();
    let paths = iterates
        .into_iter()
        .zip(noise)
        .map(|(states, w)| {
            let kept = states.into_iter().step_by(cfg.record_stride).collect();
            SolutionPath::from_states(basis.clone(), w.path_id(), cfg.dt(), cfg.record_stride, kept)
        })
        .collect::<Result<_>>()?;
    Ok((
        paths,
        PicardReport {
            weight,
            contraction_factor: factor,
            distances,
            ratios,
            non_contraction,
            iterations: done,
        },
    ))
}
