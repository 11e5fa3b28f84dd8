use super::*;
use crate::solver;

fn tiny() -> ExperimentManifest {
    let mut m = preset("smoke").unwrap();
    m.name = "tiny".into();
    m.sim.paths = 24;
    m
}

fn lists(e: Error, needle: &str) -> bool {
    match e {
        Error::Validation(v) => v.iter().any(|s| s.contains(needle)),
        _ => false,
    }
}

#[test]
fn every_preset_validates_and_round_trips() {
    for name in PRESET_NAMES {
        let m = preset(name).unwrap();
        m.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ExperimentManifest::parse(&m.to_toml().unwrap()).unwrap(), m, "{name} toml");
        assert_eq!(ExperimentManifest::parse(&m.to_json().unwrap()).unwrap(), m, "{name} json");
    }
}

#[test]
fn preset_catalogue_entries() {
    let ou = preset("ou-oracle").unwrap();
    assert!(ou.f.is_zero());
    assert_eq!(ou.g.as_constant(), Some(1.0));
    assert_eq!(ou.noise.law, crate::noise::EigenvalueLaw::Power { scale: 1.0, r: 2.0 });
    assert_eq!((ou.sim.modes, ou.sim.steps, ou.sim.paths), (64, 1024, 10_000));
    let b = preset("burkholder").unwrap();
    match &b.checks[0] {
        Check::Burkholder(c) => assert_eq!((c.integrands, c.p), (50, 4.0)),
        other => panic!("{other:?}"),
    }
    let e1 = preset("she-eps1").unwrap();
    assert_eq!(e1.noise.epsilon, 1.0);
    assert_eq!(e1.f, ScalarFn::ScaledSine { a: 1.0 });
    assert!((e1.g.eval(2.0) - 0.4).abs() < 1e-12);
}

#[test]
fn unknown_preset_lists_the_catalogue() {
    let msg = preset("nope").unwrap_err().to_string();
    for name in PRESET_NAMES {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn unknown_keys_and_versions_are_rejected() {
    let text = tiny().to_toml().unwrap();
    let extra_top = text.replacen("name = \"tiny\"", "name = \"tiny\"\ncolour = \"red\"", 1);
    assert!(ExperimentManifest::parse(&extra_top).is_err());
    let extra_sim = text.replacen("[sim]\n", "[sim]\nsteps_per_day = 3\n", 1);
    assert!(ExperimentManifest::parse(&extra_sim).is_err());
    let extra_check = text.replacen("kind = \"moment_bound\"\n", "kind = \"moment_bound\"\nslack = 2.0\n", 1);
    assert_ne!(extra_check, text);
    assert!(ExperimentManifest::parse(&extra_check).is_err());
    let v2 = text.replacen("schema_version = 1", "schema_version = 2", 1);
    assert!(ExperimentManifest::parse(&v2).unwrap_err().to_string().contains("schema version"));
}

#[test]
fn alpha_outside_window_is_rejected() {
    let mut m = preset("factorization").unwrap();
    m.sim.alpha = Some(0.6);
    assert!(lists(m.validate().unwrap_err(), "(1/p, 1/2)"));
    let mut m = preset("factorization").unwrap();
    if let Check::Factorization(c) = &mut m.checks[0] {
        c.alpha = Some(0.2);
    }
    assert!(lists(m.validate().unwrap_err(), "(1/p, 1/2)"));
}

#[test]
fn validation_lists_every_violation() {
    let mut m = tiny();
    m.name = "bad name".into();
    m.sim.q = 1.5;
    m.sim.paths = 0;
    m.noise.epsilon = 2.0;
    m.g = ScalarFn::Table { x: vec![1.0, 0.0], y: vec![0.0, 1.0] };
    let Err(Error::Validation(v)) = m.validate() else {
        panic!("expected a validation error");
    };
    assert!(v.len() >= 5, "{v:?}");
    for needle in ["name", "q >= 2", "ensemble size", "Hölder exponent", "g:"] {
        assert!(v.iter().any(|s| s.contains(needle)), "{needle}: {v:?}");
    }
}

#[test]
fn divergent_summability_blocks_regularity_checks_only() {
    let mut m = tiny();
    m.noise = crate::noise::NoiseSpec::power_law(1, 16, 1.0, 2.0, 1.0);
    assert!(lists(m.validate().unwrap_err(), "diverges"));
    m.checks.clear();
    m.validate().unwrap();
}

#[test]
fn manifest_hash_is_git_style_sha256() {
    // sha256(b"blob 7\0\"hello\"") from an independent implementation
    assert_eq!(
        content_hash(&"hello").unwrap(),
        "c23719bf53fe0d271b883f2a98491f681a800896f1cc695332802ab1faf8f43e"
    );
    let m = tiny();
    let mut moved = m.clone();
    moved.output_dir = Some("/elsewhere".into());
    assert_eq!(m.hash().unwrap(), moved.hash().unwrap());
    let mut reseeded = m.clone();
    reseeded.sim.seed += 1;
    assert_ne!(m.hash().unwrap(), reseeded.hash().unwrap());
}

#[test]
fn check_names_are_unique() {
    let mut m = tiny();
    m.checks.push(m.checks[0].clone());
    assert_eq!(m.check_names(), ["moment_bound", "lp_continuity", "temporal_holder", "moment_bound-2"]);
}

#[test]
fn run_writes_stamped_artifacts_and_reproduces() {
    let root = tempfile::tempdir().unwrap();
    let mut m = tiny();
    m.export.noise = true;
    let opts = |w| RunOptions {
        output_root: Some(root.path().to_path_buf()),
        workers: Some(w),
    };
    let a = run_experiment(&m, &opts(1)).unwrap();
    let hash = m.hash().unwrap();
    assert_eq!(a.summary.manifest_hash, hash);
    assert!(a.dir.ends_with(format!("tiny-{}", &hash[..12])));
    for f in &a.summary.artifacts {
        assert!(a.dir.join(f).exists(), "{f}");
        if f.ends_with(".csv") || f.ends_with(".toml") {
            let body = fs::read_to_string(a.dir.join(f)).unwrap();
            assert!(body.starts_with(&format!("# manifest {hash}\n")), "{f}");
        }
    }
    let echo = ExperimentManifest::load(&a.dir.join("manifest.toml")).unwrap();
    assert_eq!(echo, m);
    let b = run_experiment(&m, &opts(3)).unwrap();
    assert_eq!(a.summary.summary_hash, b.summary.summary_hash);
    assert_eq!(a.summary.checks, b.summary.checks);
    assert_eq!(b.summary.workers, 3);
    // nothing but the final directory remains
    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);

    let ens = read_ensemble(fs::File::open(a.dir.join(format!("ensemble-{}.bin", &hash[..12]))).unwrap()).unwrap();
    assert_eq!(ens.manifest_hash, hash);
    assert_eq!(ens.terminal.len(), m.sim.paths);
    let noise = read_noise(fs::File::open(a.dir.join(format!("noise-{}.bin", &hash[..12]))).unwrap()).unwrap();
    for (i, (id, t, c)) in ens.terminal.iter().enumerate() {
        assert_eq!(*id, i as u64);
        assert_eq!(*t, m.sim.t_final);
        let w = solver::wiener_path(&m.sim, &m.noise, *id).unwrap();
        assert_eq!(noise[i], w);
        let x0 = m.initial.field(crate::spectral::EigenSystem::shared(1, m.sim.modes).unwrap()).unwrap();
        let p = solver::exp_euler_solve(&m.sim, &m.model(), &x0, &w).unwrap();
        assert_eq!(p.terminal(), &c[..]);
    }

    for name in m.check_names() {
        let r = replay(&a.dir, &name, Some(2)).unwrap();
        assert!(r.identical, "{name}");
    }
    assert!(replay(&a.dir, "missing", None).is_err());
}

#[test]
fn replay_reads_full_exports() {
    let root = tempfile::tempdir().unwrap();
    let mut m = tiny();
    m.export.ensemble = ExportMode::Full;
    let opts = RunOptions {
        output_root: Some(root.path().to_path_buf()),
        workers: None,
    };
    let a = run_experiment(&m, &opts).unwrap();
    let hash = m.hash().unwrap();
    let file = a.dir.join(format!("ensemble-{}.bin", &hash[..12]));
    let ens = read_ensemble(fs::File::open(&file).unwrap()).unwrap();
    assert_eq!(ens.paths.len(), m.sim.paths);
    assert_eq!(ens.paths[0].len(), m.sim.steps + 1);
    let r = replay(&a.dir, "lp_continuity", None).unwrap();
    assert!(r.identical);

    // a tampered export changes the replayed outcome
    let mut bytes = fs::read(&file).unwrap();
    let at = bytes.len() - 8;
    bytes[at..].copy_from_slice(&7.0f64.to_le_bytes());
    fs::write(&file, bytes).unwrap();
    assert!(!replay(&a.dir, "lp_continuity", None).unwrap().identical);
}

#[test]
fn aborted_runs_leave_no_output() {
    let root = tempfile::tempdir().unwrap();
    let mut m = preset("factorization").unwrap();
    m.f = ScalarFn::Linear { a: 1e7, b: 0.0 };
    m.sim.paths = 2;
    if let Check::Factorization(c) = &mut m.checks[0] {
        c.steps = vec![512, 1024];
    }
    let opts = RunOptions {
        output_root: Some(root.path().to_path_buf()),
        workers: None,
    };
    let err = run_experiment(&m, &opts).unwrap_err();
    assert!(matches!(err, Error::BlowUp { .. }), "{err}");
    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn invalid_manifests_write_nothing() {
    let root = tempfile::tempdir().unwrap();
    let mut m = tiny();
    m.sim.steps = 0;
    let opts = RunOptions {
        output_root: Some(root.path().to_path_buf()),
        workers: None,
    };
    assert!(matches!(run_experiment(&m, &opts), Err(Error::Validation(_))));
    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn initial_condition_places_modes() {
    let b = crate::spectral::EigenSystem::shared(2, 4).unwrap();
    let ic = InitialCondition::Modes {
        terms: vec![ModeTerm { k: vec![2, 3], amplitude: 0.5 }],
    };
    let x = ic.field(b.clone()).unwrap();
    assert_eq!(x.coeffs()[b.flat_index(&[2, 3]).unwrap()], 0.5);
    assert_eq!(x.coeffs().iter().filter(|c| **c != 0.0).count(), 1);
    let far = InitialCondition::Modes {
        terms: vec![ModeTerm { k: vec![5, 1], amplitude: 1.0 }],
    };
    assert!(far.field(b).is_err());
}
