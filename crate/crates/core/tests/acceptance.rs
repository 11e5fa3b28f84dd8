use std::collections::BTreeMap;
use std::f64::consts::E;
use std::path::Path;

use rand::Rng;
use serde_json::Value;
use she_core::harness::{self, preset, Check, ExperimentManifest, RunOptions, SpatialSweepCheck, Summary, PRESET_NAMES};
use she_core::noise::{sample_wiener_increments, EigenvalueLaw, NoiseSpec};
use she_core::operators::{gamma_norm_mc, FiniteRankOperator, ScalarFn};
use she_core::regularity::{ou_oracle_sweep, temporal_holder_estimate, AnchorAggregate, LagPlan, NormKind, Verdict};
use she_core::rng::{self, Purpose};
use she_core::solver::{Scheme, SolutionPath};
use she_core::spectral::{apply_fractional_power, apply_semigroup, EigenSystem, GridField, SpectralField};

struct Ledger {
    lines: Vec<(u32, String)>,
    hard_failures: Vec<String>,
}

impl Ledger {
    fn line(&mut self, id: u32, title: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        self.lines.push((id, format!("criterion {id:>2} {verdict} {title}: {detail}")));
    }

    /// Parts of a criterion that must hold even when the criterion as a whole
    /// is known to be out of reach.
    fn require(&mut self, id: u32, what: &str, ok: bool) {
        if !ok {
            self.hard_failures.push(format!("criterion {id}: {what}"));
        }
    }
}

fn run(m: &ExperimentManifest, root: &Path, workers: Option<usize>) -> Summary {
    let opts = RunOptions {
        output_root: Some(root.to_path_buf()),
        workers,
    };
    harness::run_experiment(m, &opts)
        .unwrap_or_else(|e| panic!("{}: {e}", m.name))
        .summary
}

fn details<'a>(s: &'a Summary, check: &str) -> &'a Value {
    &s.check(check).unwrap_or_else(|| panic!("{}: no check {check}", s.name)).details
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().map(f).collect()).unwrap_or_default()
}

fn ou_oracle(l: &mut Ledger, s: &Summary) {
    let d = details(s, "ou_oracle");
    let ee_fail = d["exp_euler_failing_modes"].as_array().map_or(usize::MAX, Vec::len);
    let ou_fail = d["ou_exact_failing_modes"].as_array().map_or(usize::MAX, Vec::len);
    let order = f(&d["self_order"]);
    let secs = s.timing.total_seconds;
    let fast = secs < 300.0;
    let pass = ee_fail == 0 && ou_fail == 0 && order >= 0.9 && fast;
    l.line(
        1,
        "OU oracle agreement",
        pass,
        format!(
            "exp-Euler modes outside 4 SE {ee_fail}/64 (max z {:.3e}), exact-OU modes outside 4 SE {ou_fail}/64 (max z {:.2}), self-convergence order {order:.3}, {secs:.1} s",
            f(&d["exp_euler_max_z"]),
            f(&d["ou_exact_max_z"]),
        ),
    );
    l.require(1, "exact OU variances within 4 SE", ou_fail == 0);
    l.require(1, "self-convergence order >= 0.9", order >= 0.9);
    l.require(1, "runtime under 5 min", fast);
}

fn factorization(l: &mut Ledger, s: &Summary) {
    let d = details(s, "factorization");
    let rel = floats(&d["relative_distances"]);
    let pass = s.check("factorization").unwrap().pass;
    l.line(
        2,
        "factorization identity",
        pass,
        format!(
            "relative distances {:?} over M = {}, Beta identity {:.7}",
            rel.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>(),
            d["steps"],
            f(&d["beta_identity"])
        ),
    );
    l.require(2, "factorized convolution", pass);
}

fn random_operator(i: u64) -> (FiniteRankOperator, f64) {
    let mut g = rng::stream(31, i, Purpose::Other(3), 0);
    let dim = 1 + (i % 2) as usize;
    let n_g: usize = if dim == 1 { g.random_range(12..48) } else { g.random_range(6..16) };
    let rank: usize = g.random_range(1..7);
    let mut hs = 0.0;
    let cols = (0..rank)
        .map(|_| {
            let vals: Vec<f64> = (0..n_g.pow(dim as u32)).map(|_| g.random_range(-2.0..2.0)).collect();
            let h = 1.0 / (n_g + 1) as f64;
            hs += h.powi(dim as i32) * vals.iter().map(|v| v * v).sum::<f64>();
            GridField::new(dim, n_g, vals).unwrap()
        })
        .collect();
    (FiniteRankOperator::new(cols).unwrap(), hs.sqrt())
}

fn gamma_coincidence(l: &mut Ledger) {
    let mut worst_z: f64 = 0.0;
    let mut worst_homog: f64 = 0.0;
    let mut misses = 0;
    for i in 0..20u64 {
        let (r, hs) = random_operator(i);
        let est = gamma_norm_mc(&r, 2.0, 4000, 100 + i).unwrap();
        let z = (est.estimate - hs).abs() / est.std_error;
        worst_z = worst_z.max(z);
        if z > 5.0 {
            misses += 1;
        }
        for a in [-2.5, 0.3, 7.0] {
            let scaled = gamma_norm_mc(&r.scale(a), 2.0, 4000, 100 + i).unwrap();
            let rel = (scaled.estimate - a.abs() * est.estimate).abs() / (a.abs() * est.estimate);
            worst_homog = worst_homog.max(rel);
        }
    }
    let homogeneous = worst_homog <= 1e-12;
    let pass = misses == 0 && homogeneous;
    l.line(
        3,
        "gamma-norm coincidence",
        pass,
        format!("20 operators, {misses} outside 5 SE (max z {worst_z:.2}), homogeneity relative error {worst_homog:.1e}"),
    );
    l.require(3, "gamma norm equals Hilbert-Schmidt norm", pass);
}

fn burkholder(l: &mut Ledger, s: &Summary) {
    let d = details(s, "burkholder");
    let pass = s.check("burkholder").unwrap().pass;
    let parts: Vec<String> = d["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            format!(
                "q = {}: max/median {:.2}, family consistent {}",
                r["q"],
                f(&r["batch_max_ratio"]) / f(&r["batch_median_ratio"]),
                r["family_consistent"]
            )
        })
        .collect();
    l.line(4, "Burkholder suite", pass, parts.join("; "));
    l.require(4, "Burkholder suite", pass);
}

fn contraction(l: &mut Ledger, s: &Summary) {
    let d = details(s, "picard");
    let pass = s.check("picard").unwrap().pass;
    l.line(
        5,
        "contraction machinery",
        pass,
        format!(
            "u* = {:.4}, L_T(u*) = {:.9}, strictly decreasing {}, max ratio {:.3} over {} iterations",
            f(&d["weight"]),
            f(&d["factor_at_weight"]),
            d["strictly_decreasing"],
            f(&d["max_ratio"]),
            d["ratios_checked"]
        ),
    );
    l.require(5, "Picard contraction", pass);
}

fn temporal_window(l: &mut Ledger, s: &Summary) {
    let d = details(s, "temporal_holder");
    let secs = s.timing.total_seconds;
    let targets = d["targets"].as_array().unwrap();
    let mut parts = Vec::new();
    for t in targets {
        let est = &t["estimate"];
        parts.push(format!(
            "{} -> {:.3} (R^2 {:.4}) in {} {}",
            t["norm"],
            f(&t["value"]),
            f(&est["r_squared"]),
            t["window"],
            if t["pass"].as_bool() == Some(true) { "ok" } else { "out" }
        ));
    }
    let pass = s.check("temporal_holder").unwrap().pass && secs < 1200.0;
    l.line(6, "temporal Hölder window", pass, format!("{}; {secs:.1} s", parts.join("; ")));
    let c0 = &targets[0];
    l.require(6, "C0 exponent within its window", c0["pass"].as_bool() == Some(true));
    l.require(
        6,
        "every fit reported with R^2 >= 0.95",
        targets.iter().all(|t| t["estimate"]["reported"].as_bool() == Some(true)),
    );
    l.require(6, "runtime under 20 min", secs < 1200.0);
}

fn ceiling_manifest() -> ExperimentManifest {
    let mut m = preset("she-eps1").unwrap();
    m.name = "spatial-ceiling".into();
    m.sim.scheme = Scheme::OuExact;
    m.sim.steps = 16;
    m.sim.paths = 200;
    m.sim.p = 2.0;
    m.f = ScalarFn::Zero;
    m.g = ScalarFn::constant(1.0);
    m.initial = harness::InitialCondition::Zero;
    m.checks = vec![Check::SpatialSweep(SpatialSweepCheck {
        thetas: vec![1.2, 1.4, 1.6, 1.8],
        resolutions: vec![32, 64, 128],
        expect: Some(vec![Verdict::Bounded, Verdict::Bounded, Verdict::Divergent, Verdict::Divergent]),
        ..Default::default()
    })];
    m
}

fn spatial_ceiling(l: &mut Ledger, root: &Path) {
    let m = ceiling_manifest();
    let s = run(&m, root, None);
    let d = details(&s, "spatial_sweep");
    let pass = s.check("spatial_sweep").unwrap().pass;
    let rows = ou_oracle_sweep(&EigenvalueLaw::Power { scale: 1.0, r: 2.0 }, 1, &[32, 64, 128], &[1.2, 1.4, 1.6, 1.8], 1.0).unwrap();
    l.line(
        7,
        "spatial ceiling",
        pass,
        format!(
            "noise {:?} eps = {}: simulated {} oracle {} expected {}; oracle for n^-4 noise {:?}",
            m.noise.law,
            m.noise.epsilon,
            d["verdicts"],
            d["oracle_verdicts"],
            d["expected"],
            rows.iter().map(|r| r.verdict).collect::<Vec<_>>()
        ),
    );
    l.require(7, "simulated verdicts match the oracle", d["matches_oracle"].as_bool() == Some(true));
    l.require(7, "no blow-ups", d["blowups"].as_u64() == Some(0));
}

fn scalar_paths(values: Vec<Vec<f64>>, dt: f64) -> Vec<SolutionPath> {
    let basis = EigenSystem::shared(1, 1).unwrap();
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| SolutionPath::from_states(basis.clone(), i as u64, dt, 1, v.into_iter().map(|x| vec![x]).collect()).unwrap())
        .collect()
}

fn calibration(l: &mut Ledger) {
    let m = 1024;
    let dt = 1.0 / m as f64;
    let plan = LagPlan {
        aggregate: AnchorAggregate::Max,
        ..LagPlan::standard(dt, 1.0)
    };
    let spec = NoiseSpec::power_law(1, 1, 1.0, 1.0, 0.0);
    let brownian: Vec<Vec<f64>> = (0..1000u64)
        .map(|id| {
            let w = sample_wiener_increments(&spec, m, 1.0, 77, id).unwrap();
            let mut b = vec![0.0];
            for k in 0..m {
                b.push(b[k] + w.step(k)[0]);
            }
            b
        })
        .collect();
    let mut cases = vec![(0.5, scalar_paths(brownian, dt))];
    for a in [0.3, 0.9] {
        let curve = (0..=m).map(|i| (i as f64 * dt).powf(a)).collect();
        cases.push((a, scalar_paths(vec![curve], dt)));
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, paths) in &cases {
        let est = temporal_holder_estimate(paths, 2.0, NormKind::Lq { q: 2.0 }, &plan, 5).unwrap();
        let ok = est.reported && (est.exponent - a).abs() <= 0.05;
        pass &= ok;
        parts.push(format!("{a} -> {:.4}", est.exponent));
    }
    l.line(8, "estimator calibration", pass, parts.join(", "));
    l.require(8, "estimator calibration", pass);
}

fn random_field(i: u64) -> (SpectralField, f64) {
    let mut g = rng::stream(9, i, Purpose::Other(9), 0);
    let dim = 1 + (i % 2) as usize;
    let modes = if dim == 1 { 128 } else { 24 };
    let basis = EigenSystem::shared(dim, modes).unwrap();
    let decay = g.random_range(-0.5..2.5);
    let coeffs = (0..basis.len())
        .map(|k| rng::normal(&mut g) * basis.eigenvalue(k).powf(-decay / 2.0))
        .collect();
    let t = 10f64.powf(g.random_range(-5.0..0.5));
    (SpectralField::from_coeffs(basis, coeffs).unwrap(), t)
}

fn semigroup_estimates(l: &mut Ledger) {
    let slack = 1.0 + 1e-12;
    let mut violations = BTreeMap::new();
    let mut tightest = BTreeMap::new();
    for i in 0..1000u64 {
        let (x, t) = random_field(i);
        let norm = x.l2_norm();
        let smoothed = apply_semigroup(&x, t).unwrap();
        let increment = smoothed.axpy(-1.0, &x).unwrap().l2_norm();
        for mu in [0.25, 0.5, 1.0] {
            let lhs = apply_fractional_power(&smoothed, mu).unwrap().l2_norm();
            let rhs = (mu / (E * t)).powf(mu) * norm;
            let key = format!("smoothing mu = {mu}");
            *violations.entry(key.clone()).or_insert(0) += (lhs > slack * rhs) as usize;
            let r = tightest.entry(key).or_insert(0.0f64);
            *r = r.max(lhs / rhs);
        }
        for rho in [0.25, 0.75, 1.0] {
            let rhs = t.powf(rho) * apply_fractional_power(&x, rho).unwrap().l2_norm();
            let key = format!("Hölder rho = {rho}");
            *violations.entry(key.clone()).or_insert(0) += (increment > slack * rhs) as usize;
            let r = tightest.entry(key).or_insert(0.0f64);
            *r = r.max(increment / rhs);
        }
    }
    let total: usize = violations.values().sum();
    let parts: Vec<String> = tightest.iter().map(|(k, r)| format!("{k} max ratio {r:.4}")).collect();
    l.line(9, "semigroup estimates", total == 0, format!("{total} violations in 1000 fields; {}", parts.join(", ")));
    l.require(9, "semigroup estimates", total == 0);
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut l = Ledger {
        lines: Vec::new(),
        hard_failures: Vec::new(),
    };
    let mut first = BTreeMap::new();
    for name in PRESET_NAMES {
        let s = run(&preset(name).unwrap(), root.path(), None);
        match name {
            "ou-oracle" => ou_oracle(&mut l, &s),
            "factorization" => factorization(&mut l, &s),
            "burkholder" => burkholder(&mut l, &s),
            "she-eps1" => contraction(&mut l, &s),
            "she-eps0" => temporal_window(&mut l, &s),
            _ => {}
        }
        first.insert(name, s);
        if name == "factorization" {
            gamma_coincidence(&mut l);
        }
    }
    spatial_ceiling(&mut l, root.path());
    calibration(&mut l);
    semigroup_estimates(&mut l);

    let mut differing = Vec::new();
    for name in PRESET_NAMES {
        let again = run(&preset(name).unwrap(), root.path(), Some(3));
        if again.summary_hash != first[name].summary_hash {
            differing.push(name);
        }
    }
    l.line(
        10,
        "reproducibility",
        differing.is_empty(),
        format!("{} presets rerun with 3 workers, differing summary hashes: {differing:?}", PRESET_NAMES.len()),
    );
    l.require(10, "identical summary hashes", differing.is_empty());

    l.lines.sort_by_key(|(id, _)| *id);
    for (_, line) in &l.lines {
        println!("{line}");
    }
    if !l.hard_failures.is_empty() {
        panic!("required parts failed:\n{}", l.hard_failures.join("\n"));
    }
}
