//! Experiment manifests, presets, orchestration and replay.
//!
//! A run writes into `<root>/<name>-<hash>`: the manifest echo
//! (`manifest.toml`), `summary.json`, one CSV per table and the ensemble
//! export. Every artifact carries the manifest hash.

mod checks;
mod export;
mod presets;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::noise::{self, NoiseSpec};
use crate::operators::ScalarFn;
use crate::solver::{Model, SimConfig};
use crate::spectral::{EigenSystem, SpectralField};

pub use checks::{Check, CheckOutcome, FactorizationCheck, HolderTarget, OuOracleCheck, PicardCheck, SpatialSweepCheck};
pub use checks::{BurkholderSuite, ContinuityCheck, MomentCheck, TemporalHolderCheck};
pub use export::{read_ensemble, read_noise, write_ensemble, EnsembleExport, ExportMode};
pub use presets::{preset, PRESET_NAMES};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SHE_OUTPUT_ROOT";

/// Initial state, resolved against whatever basis a check runs on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Zero,
    /// Finite sum of eigenfunctions.
    Modes { terms: Vec<ModeTerm> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerm {
    pub k: Vec<usize>,
    pub amplitude: f64,
}

impl InitialCondition {
    pub fn field(&self, basis: std::sync::Arc<EigenSystem>) -> Result<SpectralField> {
        let mut x = SpectralField::zeros(basis.clone());
        if let InitialCondition::Modes { terms } = self {
            for t in terms {
                let Some(i) = basis.flat_index(&t.k) else {
                    return domain(format!("initial mode {:?} is not resolved", t.k));
                };
                x.coeffs_mut()[i] += t.amplitude;
            }
        }
        Ok(x)
    }

    fn max_mode(&self) -> usize {
        match self {
            InitialCondition::Zero => 0,
            InitialCondition::Modes { terms } => terms.iter().flat_map(|t| t.k.iter().copied()).max().unwrap_or(0),
        }
    }
}

/// Which ensemble data a run persists.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportPlan {
    #[serde(default)]
    pub ensemble: ExportMode,
    /// Also dump the Wiener increments of the primary ensemble.
    #[serde(default)]
    pub noise: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// `sim.seed` is the master seed of every random stream in the run.
    pub sim: SimConfig,
    pub noise: NoiseSpec,
    pub f: ScalarFn,
    pub g: ScalarFn,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub export: ExportPlan,
    #[serde(default)]
    pub checks: Vec<Check>,
}

impl ExperimentManifest {
    pub fn model(&self) -> Model {
        Model {
            f: self.f.clone(),
            g: self.g.clone(),
            noise: self.noise.clone(),
        }
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?
        };
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Content hash of the manifest without its output location.
    pub fn hash(&self) -> Result<String> {
        let mut m = self.clone();
        m.output_dir = None;
        content_hash(&m)
    }

    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let name_ok = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !name_ok {
            errs.push(format!(
                "experiment name {:?} must be non-empty and use only letters, digits, '-', '_' or '.'",
                self.name
            ));
        }
        errs.extend(self.sim.violations());
        if self.sim.seed > i64::MAX as u64 {
            errs.push(format!("master seed {} must fit in 63 bits", self.sim.seed));
        }
        let before = errs.len();
        self.noise.collect_violations(&mut errs);
        let noise_ok = errs.len() == before;
        if self.noise.dim != self.sim.dim {
            errs.push(format!(
                "noise dimension {} differs from the simulation dimension {}",
                self.noise.dim, self.sim.dim
            ));
        }
        for (name, f) in [("f", &self.f), ("g", &self.g)] {
            if let Err(e) = f.validate() {
                errs.push(format!("{name}: {e}"));
            }
        }
        if let InitialCondition::Modes { terms } = &self.initial {
            for t in terms {
                if t.k.len() != self.sim.dim || t.k.contains(&0) {
                    errs.push(format!("initial mode {:?} is not a {}-dimensional index", t.k, self.sim.dim));
                }
                if !t.amplitude.is_finite() {
                    errs.push(format!("initial mode {:?} has a non-finite amplitude", t.k));
                }
            }
        }
        let smallest = self.checks.iter().filter_map(Check::smallest_resolution).fold(self.sim.modes, usize::min);
        if self.initial.max_mode() > smallest {
            errs.push(format!(
                "initial condition uses mode {} but some solve resolves only {smallest} modes",
                self.initial.max_mode()
            ));
        }
        for (i, c) in self.checks.iter().enumerate() {
            for e in c.violations(self) {
                errs.push(format!("check {} ({}): {e}", i + 1, c.kind()));
            }
        }
        if noise_ok && self.checks.iter().any(Check::is_regularity) {
            if let Ok(rep) = noise::check_cq_condition(&self.noise) {
                if rep.diverges() {
                    errs.push(format!(
                        "the noise summability series diverges at epsilon = {}; regularity checks need a convergent series",
                        self.noise.epsilon
                    ));
                }
            }
        }
        let names = self.check_names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                errs.push(format!("duplicate check name {n:?}"));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Names under which check outcomes are reported and replayed.
    pub fn check_names(&self) -> Vec<String> {
        let mut seen: Vec<&str> = Vec::new();
        self.checks
            .iter()
            .map(|c| {
                if let Some(l) = c.label() {
                    return l.to_string();
                }
                let kind = c.kind();
                let n = seen.iter().filter(|k| **k == kind).count();
                seen.push(kind);
                if n == 0 {
                    kind.to_string()
                } else {
                    format!("{kind}-{}", n + 1)
                }
            })
            .collect()
    }
}

/// Git-style SHA-256 of the compact JSON form: `blob <len>\0<json>`.
pub fn content_hash(value: &impl Serialize) -> Result<String> {
    let body = serde_json::to_vec(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()).as_bytes());
    h.update(&body);
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub checks: Vec<(String, f64)>,
}

/// JSON verdict summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub manifest_hash: String,
    pub pass: bool,
    /// Blown-up paths in the primary ensemble.
    pub blowups: usize,
    pub checks: Vec<CheckOutcome>,
    pub artifacts: Vec<String>,
    /// Hash of every field above; excludes timing and worker count.
    pub summary_hash: String,
    pub workers: usize,
    pub timing: Timing,
}

#[derive(Serialize)]
struct Hashed<'a> {
    schema_version: u32,
    name: &'a str,
    manifest_hash: &'a str,
    pass: bool,
    blowups: usize,
    checks: &'a [CheckOutcome],
    artifacts: &'a [String],
}

impl Summary {
    fn compute_hash(&self) -> Result<String> {
        content_hash(&Hashed {
            schema_version: self.schema_version,
            name: &self.name,
            manifest_hash: &self.manifest_hash,
            pass: self.pass,
            blowups: self.blowups,
            checks: &self.checks,
            artifacts: &self.artifacts,
        })
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the manifest's directory and the environment default.
    pub output_root: Option<PathBuf>,
    /// Size of a dedicated worker pool; the global pool otherwise.
    pub workers: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub summary: Summary,
}

fn output_root(m: &ExperimentManifest, opts: &RunOptions) -> PathBuf {
    opts.output_root
        .clone()
        .or_else(|| m.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("she-output"))
}

pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => domain("worker count must be positive"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Domain(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Validates, solves, analyzes and persists one experiment.
///
/// Output is assembled in a hidden sibling directory and renamed into place,
/// so an aborted run leaves nothing behind.
pub fn run_experiment(m: &ExperimentManifest, opts: &RunOptions) -> Result<RunReport> {
    m.validate()?;
    let hash = m.hash()?;
    let root = output_root(m, opts);
    fs::create_dir_all(&root)?;
    let dir_name = format!("{}-{}", m.name, &hash[..12]);
    let dir = root.join(&dir_name);
    let tmp = root.join(format!(".{dir_name}.partial-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let started = Instant::now();
    let result = with_workers(opts.workers, || assemble(m, &hash, &tmp)).and_then(|r| r);
    let mut summary = match result {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    summary.workers = opts.workers.unwrap_or_else(rayon::current_num_threads);
    summary.timing.total_seconds = started.elapsed().as_secs_f64();
    let finish = || -> Result<()> {
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(tmp.join("summary.json"), json + "\n")?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&tmp, &dir)?;
        Ok(())
    };
    if let Err(e) = finish() {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    Ok(RunReport { dir, summary })
}

fn assemble(m: &ExperimentManifest, hash: &str, dir: &Path) -> Result<Summary> {
    let stamp = format!("# manifest {hash}\n");
    fs::write(dir.join("manifest.toml"), stamp.clone() + &m.to_toml()?)?;
    let mut artifacts = vec!["manifest.toml".to_string()];
    let mut ctx = checks::Context::new(m);
    let primary = ctx.primary()?;
    let short = &hash[..12];
    if m.export.ensemble != ExportMode::None {
        let name = format!("ensemble-{short}.bin");
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&name))?);
        write_ensemble(&primary, m.export.ensemble, hash, &mut w)?;
        std::io::Write::flush(&mut w)?;
        artifacts.push(name);
    }
    if m.export.noise {
        let name = format!("noise-{short}.bin");
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&name))?);
        export::write_noise(m, &primary, &mut w)?;
        std::io::Write::flush(&mut w)?;
        artifacts.push(name);
    }
    let names = m.check_names();
    let mut outcomes = Vec::new();
    let mut timing = Timing::default();
    for (check, name) in m.checks.iter().zip(&names) {
        let t0 = Instant::now();
        let run = check.run(&mut ctx, name)?;
        timing.checks.push((name.clone(), t0.elapsed().as_secs_f64()));
        for (file, body) in &run.tables {
            fs::write(dir.join(file), stamp.clone() + body)?;
            artifacts.push(file.clone());
        }
        outcomes.push(run.outcome);
    }
    let mut summary = Summary {
        schema_version: SCHEMA_VERSION,
        name: m.name.clone(),
        manifest_hash: hash.to_string(),
        pass: outcomes.iter().all(|o| o.pass) && primary.blowups.is_empty(),
        blowups: primary.blowups.len(),
        checks: outcomes,
        artifacts,
        summary_hash: String::new(),
        workers: 0,
        timing,
    };
    summary.summary_hash = summary.compute_hash()?;
    Ok(summary)
}

/// Result of recomputing one recorded check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub recorded: CheckOutcome,
    pub recomputed: CheckOutcome,
    /// Recorded and recomputed outcomes agree exactly.
    pub identical: bool,
}

/// Recomputes check `name` of an artifact directory from its manifest echo,
/// reading the primary ensemble from the export when it holds full paths.
pub fn replay(dir: &Path, name: &str, workers: Option<usize>) -> Result<ReplayReport> {
    let m = ExperimentManifest::load(&dir.join("manifest.toml"))?;
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let hash = m.hash()?;
    if summary.manifest_hash != hash {
        return Err(Error::Format("manifest echo does not match the recorded hash".into()));
    }
    let names = m.check_names();
    let Some(idx) = names.iter().position(|n| n == name) else {
        return domain(format!("no check named {name:?}; recorded checks: {}", names.join(", ")));
    };
    let recorded = summary
        .check(name)
        .cloned()
        .ok_or_else(|| Error::Format(format!("summary has no outcome for {name:?}")))?;
    let recomputed = with_workers(workers, || -> Result<CheckOutcome> {
        let mut ctx = checks::Context::new(&m);
        if m.export.ensemble == ExportMode::Full {
            let file = dir.join(format!("ensemble-{}.bin", &hash[..12]));
            let e = read_ensemble(std::io::BufReader::new(fs::File::open(file)?))?;
            if e.manifest_hash != hash {
                return Err(Error::Format("ensemble export belongs to another manifest".into()));
            }
            ctx.preload_primary(e)?;
        }
        Ok(m.checks[idx].run(&mut ctx, name)?.outcome)
    })??;
    Ok(ReplayReport {
        identical: recorded == recomputed,
        recorded,
        recomputed,
    })
}

#[cfg(test)]
mod tests;
