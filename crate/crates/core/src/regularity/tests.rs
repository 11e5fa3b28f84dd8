use std::f64::consts::PI;

use super::*;
use crate::noise::sample_wiener_increments;
use crate::operators::{rank_one, ScalarFn};
use crate::solver::{run_ensemble, BlowUpRecord, Model, Scheme, SimConfig};

fn scalar_paths(values: Vec<Vec<f64>>, dt: f64) -> Vec<SolutionPath> {
    let basis = EigenSystem::shared(1, 1).unwrap();
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| SolutionPath::from_states(basis.clone(), i as u64, dt, 1, v.into_iter().map(|x| vec![x]).collect()).unwrap())
        .collect()
}

fn brownian_paths(count: usize, steps: usize, seed: u64) -> Vec<SolutionPath> {
    let spec = NoiseSpec::power_law(1, 1, 1.0, 1.0, 0.0);
    let values = (0..count as u64)
        .map(|id| {
            let w = sample_wiener_increments(&spec, steps, 1.0, seed, id).unwrap();
            let mut b = vec![0.0];
            for m in 0..steps {
                b.push(b[m] + w.step(m)[0]);
            }
            b
        })
        .collect();
    scalar_paths(values, 1.0 / steps as f64)
}

fn ou_config(modes: usize, paths: usize) -> SimConfig {
    SimConfig {
        dim: 1,
        t_final: 0.5,
        steps: 64,
        modes,
        q: 2.0,
        p: 2.0,
        theta: 0.0,
        alpha: None,
        scheme: Scheme::OuExact,
        paths,
        seed: 8,
        record_stride: 1,
        noise_base_steps: None,
        grid_points: None,
    }
}

#[test]
fn brownian_exponent_is_one_half() {
    let paths = brownian_paths(1000, 1024, 3);
    let plan = LagPlan::standard(1.0 / 1024.0, 1.0);
    for p in [2.0, 4.0] {
        let est = temporal_holder_estimate(&paths, p, NormKind::Lq { q: 2.0 }, &plan, 1).unwrap();
        assert!(est.reported && !est.underpowered, "{est:?}");
        assert_eq!(est.lags.len(), 6);
        assert!((est.exponent - 0.5).abs() < 0.05, "{est:?}");
        assert!(est.std_error > 0.0 && est.std_error < 0.05);
    }
}

#[test]
fn power_curves_are_recovered_with_max_aggregation() {
    let m = 1024;
    let plan = LagPlan {
        aggregate: AnchorAggregate::Max,
        ..LagPlan::standard(1.0 / m as f64, 1.0)
    };
    for a in [0.3, 0.5, 0.9] {
        let curve: Vec<f64> = (0..=m).map(|i| (i as f64 / m as f64).powf(a)).collect();
        let paths = scalar_paths(vec![curve], 1.0 / m as f64);
        let est = temporal_holder_estimate(&paths, 2.0, NormKind::Lq { q: 2.0 }, &plan, 0).unwrap();
        assert!(est.reported && est.underpowered);
        assert!((est.exponent - a).abs() < 0.05, "{a}: {est:?}");
    }
}

#[test]
fn semigroup_flow_exponent_follows_initial_smoothness() {
    let n = 256;
    let m = 1024;
    let beta = 1.0;
    let basis = EigenSystem::shared(1, n).unwrap();
    let x0: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-beta - 0.5 - 0.01)).collect();
    let states: Vec<Vec<f64>> = (0..=m)
        .map(|i| {
            let t = i as f64 / m as f64;
            x0.iter().zip(basis.eigenvalues()).map(|(c, l)| c * (-l * t).exp()).collect()
        })
        .collect();
    let path = SolutionPath::from_states(basis, 0, 1.0 / m as f64, 1, states).unwrap();
    let plan = LagPlan {
        aggregate: AnchorAggregate::Max,
        ..LagPlan::standard(1.0 / m as f64, 1.0)
    };
    for theta in [0.0, 0.5] {
        let est = temporal_holder_estimate(
            std::slice::from_ref(&path),
            2.0,
            NormKind::ETheta { theta, q: 2.0 },
            &plan,
            0,
        )
        .unwrap();
        let expect = ((beta - theta) / 2.0).min(1.0);
        assert!((est.exponent - expect).abs() < 0.1, "{theta}: {est:?}");
    }
}

#[test]
fn constant_paths_are_withheld() {
    let paths = scalar_paths(vec![vec![2.0; 257]; 3], 1.0 / 256.0);
    let est = temporal_holder_estimate(&paths, 2.0, NormKind::Lq { q: 2.0 }, &LagPlan::standard(1.0 / 256.0, 1.0), 0).unwrap();
    assert!(!est.reported);
    assert_eq!(est.exponent, 0.0);
    assert!(est.note.is_some());
}

#[test]
fn holder_estimate_checks_its_window() {
    let paths = brownian_paths(10, 64, 0);
    let bad = LagPlan {
        max_lag: 0.5,
        ..LagPlan::standard(1.0 / 64.0, 1.0)
    };
    assert!(temporal_holder_estimate(&paths, 2.0, NormKind::Lq { q: 2.0 }, &bad, 0).is_err());
    // [4/64, 1/8] holds only two dyadic lags
    let est = temporal_holder_estimate(&paths, 2.0, NormKind::Lq { q: 2.0 }, &LagPlan::standard(1.0 / 64.0, 1.0), 0).unwrap();
    assert_eq!(est.lags.len(), 2);
    assert!(!est.reported);
    assert!(temporal_holder_estimate(&paths, 2.0, NormKind::Lq { q: 1.0 }, &LagPlan::standard(1.0 / 64.0, 1.0), 0).is_err());
}

#[test]
fn growth_classification() {
    let (r, g, v) = classify_growth(&[1.0, 1.1, 1.15, 1.17]);
    assert_eq!(v, Verdict::Bounded);
    assert!((g.unwrap() - 0.4).abs() < 1e-9);
    assert_eq!(r.len(), 3);
    assert_eq!(classify_growth(&[1.0, 2.0, 4.0]).2, Verdict::Divergent);
    // slow but non-decaying growth is still divergent
    assert_eq!(classify_growth(&[1.0, 1.01, 1.02, 1.03]).2, Verdict::Divergent);
    assert_eq!(classify_growth(&[1.0, 1.5, 1.9]).2, Verdict::Inconclusive);
    assert_eq!(classify_growth(&[1.0, 1.0, 1.0]).2, Verdict::Bounded);
}

#[test]
fn oracle_series_and_its_verdicts() {
    let law = EigenvalueLaw::Power { scale: 1.0, r: 2.0 };
    let m = ou_etheta_moment(&law, 1, 3, 0.0, 1e6).unwrap();
    let direct: f64 = (1..=3).map(|k| (k as f64).powi(-4) / (2.0 * PI * PI * (k * k) as f64)).sum();
    assert!((m - direct).abs() < 1e-15);
    let rows = ou_oracle_sweep(&law, 1, &[32, 64, 128], &[0.0, 1.2, 1.8, 2.4, 2.6, 3.0], 1.0).unwrap();
    let verdicts: Vec<Verdict> = rows.iter().map(|r| r.verdict).collect();
    use Verdict::*;
    assert_eq!(verdicts, vec![Bounded, Bounded, Bounded, Bounded, Divergent, Divergent]);
}

#[test]
fn simulated_sweep_matches_oracle() {
    let spec = NoiseSpec::power_law(1, 8, 1.0, 2.0, 1.0);
    let ens: Vec<Ensemble> = [8, 16, 32]
        .iter()
        .map(|&n| {
            let model = Model::additive(NoiseSpec { modes: n, ..spec.clone() });
            let x0 = SpectralField::zeros(EigenSystem::shared(1, n).unwrap());
            run_ensemble(&ou_config(n, 300), &model, &x0, 0).unwrap()
        })
        .collect();
    let refs: Vec<&Ensemble> = ens.iter().collect();
    let thetas = [0.0, 1.0, 3.5];
    let rows = spatial_regularity_sweep(&refs, &thetas, 2.0).unwrap();
    let oracle = ou_oracle_sweep(&spec.law, 1, &[8, 16, 32], &thetas, 0.5).unwrap();
    for (r, o) in rows.iter().zip(&oracle) {
        assert_eq!(r.verdict, o.verdict, "{r:?} vs {o:?}");
    }
    assert_eq!(rows[2].verdict, Verdict::Divergent);
    assert!(spatial_regularity_sweep(&refs[..2], &thetas, 2.0).is_err());
    let other = run_ensemble(
        &SimConfig { seed: 9, ..ou_config(64, 20) },
        &Model::additive(NoiseSpec { modes: 64, ..spec.clone() }),
        &SpectralField::zeros(EigenSystem::shared(1, 64).unwrap()),
        0,
    )
    .unwrap();
    assert!(matches!(
        spatial_regularity_sweep(&[refs[0], refs[1], &other], &thetas, 2.0),
        Err(Error::Uncoupled(_))
    ));
}

#[test]
fn band_limited_deterministic_flow_is_bounded() {
    let spec = NoiseSpec::power_law(1, 4, 1.0, 2.0, 1.0);
    let model = Model {
        f: ScalarFn::Zero,
        g: ScalarFn::Zero,
        noise: spec,
    };
    let ens: Vec<Ensemble> = [8, 16, 32]
        .iter()
        .map(|&n| {
            let x0 = SpectralField::single_mode(EigenSystem::shared(1, n).unwrap(), &[3], 1.0).unwrap();
            run_ensemble(&SimConfig { scheme: Scheme::ExpEuler, ..ou_config(n, 4) }, &model, &x0, 0).unwrap()
        })
        .collect();
    let rows = spatial_regularity_sweep(&ens.iter().collect::<Vec<_>>(), &[0.0, 1.0, 2.0, 4.0], 2.0).unwrap();
    assert!(rows.iter().all(|r| r.verdict == Verdict::Bounded));
}

#[test]
fn moment_bound_examples() {
    let model = Model {
        f: ScalarFn::Zero,
        g: ScalarFn::Zero,
        noise: NoiseSpec::power_law(1, 8, 1.0, 2.0, 0.0),
    };
    let x0 = SpectralField::from_coeffs(EigenSystem::shared(1, 8).unwrap(), vec![1.0, 0.5, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0]).unwrap();
    let cfg = SimConfig { scheme: Scheme::ExpEuler, ..ou_config(8, 3) };
    let ens = run_ensemble(&cfg, &model, &x0, 0).unwrap();
    let rep = moment_bound_check(&[&ens], 4.0, NormKind::Lq { q: 2.0 }, &x0).unwrap();
    assert!((rep.sup_moment - x0.l2_norm().powi(4)).abs() < 1e-12);
    assert!(rep.ratio <= 1.0 && rep.pass);

    let noise = NoiseSpec::power_law(1, 8, 1.0, 2.0, 0.0);
    let zero = SpectralField::zeros(EigenSystem::shared(1, 8).unwrap());
    let ens = run_ensemble(&ou_config(8, 4000), &Model::additive(noise.clone()), &zero, 0).unwrap();
    let rep = moment_bound_check(&[&ens], 2.0, NormKind::Lq { q: 2.0 }, &zero).unwrap();
    let target = ou_etheta_moment(&noise.law, 1, 8, 0.0, 0.5).unwrap();
    let sq: Vec<f64> = ens.paths.iter().map(|p| p.terminal().iter().map(|c| c * c).sum()).collect();
    assert!((rep.sup_moment - target).abs() < 4.0 * stats::std_error(&sq), "{} {target}", rep.sup_moment);
    assert_eq!(rep.initial_norm, 0.0);

    let mut broken = ens.clone();
    broken.blowups = (0..5)
        .map(|i| BlowUpRecord {
            path_id: 10_000 + i,
            step: 3,
            mode: 0,
            value: 1e13,
        })
        .collect();
    let rep = moment_bound_check(&[&broken], 2.0, NormKind::Lq { q: 2.0 }, &zero).unwrap();
    assert_eq!(rep.blowups, 5);
    assert!(!rep.pass);
}

#[test]
fn moment_stability_across_resolutions() {
    let law = NoiseSpec::power_law(1, 8, 1.0, 2.0, 0.0);
    let ens: Vec<Ensemble> = [8, 16]
        .iter()
        .map(|&n| {
            let x0 = SpectralField::zeros(EigenSystem::shared(1, n).unwrap());
            run_ensemble(&ou_config(n, 500), &Model::additive(NoiseSpec { modes: n, ..law.clone() }), &x0, 0).unwrap()
        })
        .collect();
    let x0 = SpectralField::zeros(EigenSystem::shared(1, 16).unwrap());
    let rep = moment_bound_check(&[&ens[0], &ens[1]], 2.0, NormKind::Lq { q: 2.0 }, &x0).unwrap();
    assert!(rep.relative_change.unwrap() < 0.1);
    assert!(rep.pass);
}

#[test]
fn continuity_examples() {
    let n = 16;
    let m = 1000;
    let basis = EigenSystem::shared(1, n).unwrap();
    let states: Vec<Vec<f64>> = (0..=m)
        .map(|i| {
            let t = i as f64 / m as f64;
            basis.eigenvalues().iter().enumerate().map(|(k, l)| (-l * t).exp() / (k + 1) as f64).collect()
        })
        .collect();
    let flow = SolutionPath::from_states(basis, 0, 1.0 / m as f64, 1, states).unwrap();
    let pairs = [(100, 600), (100, 200), (100, 150), (100, 110), (100, 105), (100, 101), (100, 100)];
    let rep = lp_continuity_check(std::slice::from_ref(&flow), 2.0, NormKind::Lq { q: 2.0 }, &pairs).unwrap();
    assert!(rep.moments.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*rep.moments.last().unwrap(), 0.0);
    assert!(rep.pass && rep.decay < 1e-2);
    assert!(lp_continuity_check(std::slice::from_ref(&flow), 2.0, NormKind::Lq { q: 2.0 }, &[(0, 10), (0, 20)]).is_err());

    let paths = brownian_paths(2000, 1000, 5);
    let pairs = [(0, 500), (0, 50), (0, 5)];
    let rep = lp_continuity_check(&paths, 2.0, NormKind::Lq { q: 2.0 }, &pairs).unwrap();
    for (g, (mo, se)) in rep.gaps.iter().zip(rep.moments.iter().zip(&rep.std_errors)) {
        assert!((mo - g).abs() < 4.0 * se, "{g} {mo}");
    }
    assert!(rep.monotone);
}

fn unit_noise(modes: usize, count: usize, steps: usize) -> Vec<WienerPath> {
    let spec = NoiseSpec {
        law: EigenvalueLaw::Explicit { values: vec![1.0; modes] },
        ..NoiseSpec::power_law(1, modes, 1.0, 1.0, 0.0)
    };
    (0..count as u64)
        .map(|id| sample_wiener_increments(&spec, steps, 1.0, 21, id).unwrap())
        .collect()
}

#[test]
fn burkholder_zero_and_constant_integrands() {
    let noise = unit_noise(2, 400, 16);
    let zero = ConstantIntegrand(FiniteRankOperator::new(vec![GridField::constant(1, 16, 0.0).unwrap()]).unwrap());
    let rep = burkholder_check(&[&zero], 4.0, 2.0, &noise, 100, 0).unwrap();
    assert_eq!((rep.entries[0].lhs, rep.entries[0].rhs), (0.0, 0.0));
    assert!(rep.underpowered);

    let x = GridField::from_fn(1, 32, |p| (PI * p[0]).sin() + 0.3).unwrap();
    let family: Vec<ConstantIntegrand> = [0.5, 1.0, 3.0].iter().map(|&a| ConstantIntegrand(rank_one(x.scale(a)))).collect();
    let refs: Vec<&dyn StepIntegrand> = family.iter().map(|f| f as &dyn StepIntegrand).collect();
    for q in [2.0, 4.0] {
        let rep = burkholder_check(&refs, 4.0, q, &noise, 400, 1).unwrap();
        let r0 = rep.entries[0].ratio;
        for e in &rep.entries {
            assert!((e.ratio - r0).abs() < 1e-9 * r0);
        }
        // E sup |beta / sqrt(T)|^4 on the same grid
        let sup: Vec<f64> = noise
            .iter()
            .map(|w| {
                let mut b = 0.0_f64;
                let mut s = 0.0_f64;
                for j in 0..w.steps() {
                    b += w.step(j)[0];
                    s = s.max(b.abs());
                }
                s.powi(4)
            })
            .collect();
        let oracle = stats::mean(&sup);
        let tol = 4.0 * stats::std_error(&sup) + 0.1 * oracle;
        assert!((r0 - oracle).abs() < tol, "q={q}: {r0} vs {oracle}");
    }
}

#[test]
fn burkholder_random_batch_is_uniformly_bounded() {
    let noise = unit_noise(3, 200, 8);
    let family: Vec<RandomStepIntegrand> = (0..20).map(|i| RandomStepIntegrand::sample(4, i, 3, 1, 24).unwrap()).collect();
    let refs: Vec<&dyn StepIntegrand> = family.iter().map(|f| f as &dyn StepIntegrand).collect();
    for q in [2.0, 4.0] {
        let rep = burkholder_check(&refs, 4.0, q, &noise, 100, 2).unwrap();
        assert!(!rep.underpowered);
        assert!(rep.pass, "{rep:?}");
        assert!(rep.entries.iter().all(|e| e.ratio > 0.0));
    }
    assert!(burkholder_check(&refs, 4.0, 2.0, &unit_noise(2, 10, 8), 100, 2).is_err());
}

#[test]
fn random_integrands_are_adapted() {
    let phi = RandomStepIntegrand::sample(1, 0, 2, 1, 16).unwrap();
    let a = [0.1, -0.2];
    let b = [0.3, 0.05];
    let early = phi.operator(1, &[&a]).unwrap();
    let again = phi.operator(1, &[&a]).unwrap();
    assert_eq!(early.columns(), again.columns());
    let later = phi.operator(2, &[&a, &b]).unwrap();
    assert_ne!(early.columns(), later.columns());
}

#[test]
fn csv_tables_have_headers_and_rows() {
    let paths = brownian_paths(50, 256, 0);
    let est = temporal_holder_estimate(&paths, 2.0, NormKind::Lq { q: 2.0 }, &LagPlan::standard(1.0 / 256.0, 1.0), 0).unwrap();
    let mut buf = Vec::new();
    write_holder_csv(&est, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lag,structure,ln_lag,ln_structure");
    assert_eq!(lines.len(), est.lags.len() + 1);

    let rows = ou_oracle_sweep(&EigenvalueLaw::Power { scale: 1.0, r: 2.0 }, 1, &[4, 8, 16], &[0.0, 3.0], 1.0).unwrap();
    let mut buf = Vec::new();
    write_spatial_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().nth(6).unwrap().ends_with("divergent"));
}

#[test]
fn norms_agree_with_spectral_definitions() {
    let basis = EigenSystem::shared(1, 8).unwrap();
    let x = SpectralField::from_coeffs(basis, (1..=8).map(|k| 1.0 / k as f64).collect()).unwrap();
    for (kind, expect) in [
        (NormKind::Lq { q: 2.0 }, x.l2_norm()),
        (NormKind::Lq { q: 4.0 }, spectral::lq_norm(&spectral::synthesize(&x, 32).unwrap(), 4.0).unwrap()),
        (NormKind::ETheta { theta: 0.7, q: 2.0 }, spectral::etheta_norm(&x, 0.7, 2.0, 32).unwrap()),
        (NormKind::ETheta { theta: 0.7, q: 3.0 }, spectral::etheta_norm(&x, 0.7, 3.0, 32).unwrap()),
        (NormKind::Holder { kappa: 0.5 }, spectral::holder_norm(&spectral::synthesize(&x, 32).unwrap(), 0.5).unwrap()),
    ] {
        let v = field_norm(&x, kind).unwrap();
        assert!((v - expect).abs() < 1e-10 * expect, "{kind:?}: {v} vs {expect}");
    }
    assert!(field_norm(&x, NormKind::Holder { kappa: 1.5 }).is_err());
}
