use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::operators::ScalarFn;
use crate::regularity::NormKind;
use crate::solver::{Scheme, SimConfig};

use super::checks::*;
use super::{ExperimentManifest, ExportPlan, InitialCondition, ModeTerm, SCHEMA_VERSION};

pub const PRESET_NAMES: [&str; 6] = ["smoke", "ou-oracle", "she-eps1", "she-eps0", "burkholder", "factorization"];

fn sim(t_final: f64, steps: usize, modes: usize, paths: usize) -> SimConfig {
    SimConfig {
        dim: 1,
        t_final,
        steps,
        modes,
        q: 2.0,
        p: 2.0,
        theta: 0.0,
        alpha: None,
        scheme: Scheme::ExpEuler,
        paths,
        seed: 20240611,
        record_stride: 1,
        noise_base_steps: None,
        grid_points: None,
    }
}

fn first_mode() -> InitialCondition {
    InitialCondition::Modes {
        terms: vec![ModeTerm { k: vec![1], amplitude: 1.0 }],
    }
}

/// Bounded Lipschitz diffusion `x / (1 + x^2)` sampled on `[-8, 8]`.
fn bounded_diffusion() -> ScalarFn {
    ScalarFn::tabulate(|x| x / (1.0 + x * x), -8.0, 8.0, 65)
}

/// `1 + x / (2 (1 + x^2))`, which keeps the noise active as the state decays.
fn shifted_diffusion() -> ScalarFn {
    ScalarFn::tabulate(|x| 1.0 + 0.5 * x / (1.0 + x * x), -8.0, 8.0, 65)
}

fn manifest(name: &str, sim: SimConfig, noise: NoiseSpec, f: ScalarFn, g: ScalarFn, checks: Vec<Check>) -> ExperimentManifest {
    ExperimentManifest {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        output_dir: None,
        sim,
        noise,
        f,
        g,
        initial: InitialCondition::Zero,
        export: ExportPlan::default(),
        checks,
    }
}

/// The named catalogue entry.
pub fn preset(name: &str) -> Result<ExperimentManifest> {
    let sine = ScalarFn::ScaledSine { a: 1.0 };
    let m = match name {
        "smoke" => {
            let mut m = manifest(
                name,
                SimConfig { p: 4.0, ..sim(1.0, 256, 16, 100) },
                NoiseSpec::power_law(1, 16, 1.0, 2.0, 0.0),
                sine,
                shifted_diffusion(),
                vec![
                    Check::MomentBound(MomentCheck::default()),
                    Check::LpContinuity(ContinuityCheck::default()),
                    Check::TemporalHolder(TemporalHolderCheck {
                        targets: vec![HolderTarget {
                            norm: NormKind::Lq { q: 2.0 },
                            window: None,
                            add_half_theta: false,
                        }],
                        ..Default::default()
                    }),
                ],
            );
            m.initial = first_mode();
            m
        }
        "ou-oracle" => manifest(
            name,
            SimConfig {
                record_stride: 1024,
                noise_base_steps: Some(256),
                ..sim(1.0, 1024, 64, 10_000)
            },
            NoiseSpec::power_law(1, 64, 1.0, 2.0, 0.0),
            ScalarFn::Zero,
            ScalarFn::constant(1.0),
            vec![Check::OuOracle(OuOracleCheck::default())],
        ),
        "she-eps1" => {
            let mut m = manifest(
                name,
                SimConfig { p: 4.0, ..sim(1.0, 256, 32, 200) },
                NoiseSpec::power_law(1, 32, 1.0, 3.0, 1.0),
                sine,
                bounded_diffusion(),
                vec![
                    Check::Picard(PicardCheck {
                        paths: Some(100),
                        ..Default::default()
                    }),
                    Check::MomentBound(MomentCheck::default()),
                    Check::SpatialSweep(SpatialSweepCheck {
                        thetas: vec![1.2, 1.4, 1.6, 1.8],
                        resolutions: vec![16, 32, 64],
                        ..Default::default()
                    }),
                ],
            );
            m.initial = first_mode();
            m
        }
        "she-eps0" => {
            let window = Some([0.35, 0.55]);
            let mut targets = vec![HolderTarget {
                norm: NormKind::Holder { kappa: 0.0 },
                window: Some([0.40, 0.55]),
                add_half_theta: false,
            }];
            for theta in [0.0, 0.4, 0.8] {
                targets.push(HolderTarget {
                    norm: NormKind::ETheta { theta, q: 2.0 },
                    window,
                    add_half_theta: true,
                });
            }
            let mut m = manifest(
                name,
                SimConfig {
                    record_stride: 4,
                    ..sim(1.0, 1024, 64, 2000)
                },
                NoiseSpec::power_law(1, 64, 1.0, 2.0, 0.0),
                sine,
                shifted_diffusion(),
                vec![Check::TemporalHolder(TemporalHolderCheck {
                    targets,
                    ..Default::default()
                })],
            );
            m.initial = first_mode();
            m
        }
        "burkholder" => manifest(
            name,
            SimConfig { p: 4.0, ..sim(1.0, 8, 8, 2) },
            NoiseSpec::power_law(1, 8, 1.0, 2.0, 0.0),
            ScalarFn::Zero,
            ScalarFn::constant(1.0),
            vec![Check::Burkholder(BurkholderSuite::default())],
        ),
        "factorization" => manifest(
            name,
            SimConfig {
                p: 4.0,
                alpha: Some(0.375),
                record_stride: 512,
                ..sim(0.1, 512, 16, 200)
            },
            NoiseSpec::power_law(1, 16, 1.0, 2.0, 0.0),
            ScalarFn::Zero,
            ScalarFn::constant(1.0),
            vec![Check::Factorization(FactorizationCheck::default())],
        ),
        _ => {
            return Err(Error::Domain(format!(
                "unknown preset {name:?}; valid presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(m)
}
