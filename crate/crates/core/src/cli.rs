//! Configuration-driven scenario runs with CSV outputs and a manifest.
//!
//! A run is fully determined by one JSON file. Each scenario writes a fixed
//! set of CSV files (columns listed on [`Scenario`]) plus `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::collision::{self, CollisionError, CollisionTable};
use crate::combinatorics::{self, CombinatoricsError, FieldStatistics, Letter, TwoPointRule};
use crate::evolve::{self, EvolveError};
use crate::isotropic::{self, EnergyGrid, EnergyState, IsotropicError, IsotropicRunOptions, Phase};
use crate::lattice::{self, DispersionField, HoppingModel, L3ScanOptions, LatticeError, MomentumGrid, Site};
use crate::linearized::{self, LinearizedError};
use crate::numerics::fmt_float;
use crate::state::{self, InverseTemperature, RandomFieldSpec, StateError, Statistics};

/// Output directory override, below `--out` and above the config.
pub const OUT_DIR_ENV: &str = "KINETIC_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("config has {} violation(s): {}", .0.len(), .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Linearized(#[from] LinearizedError),
    #[error(transparent)]
    Isotropic(#[from] IsotropicError),
    #[error(transparent)]
    Combinatorics(#[from] CombinatoricsError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 for i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Invalid(_) => 2,
            CliError::Io { .. } => 1,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub side: usize,
}

/// Nearest-neighbour hopping `alpha1` (with `α(0) = 2d|α₁| + 1` unless
/// `onsite` is set), or an explicit `hopping` list. The potential is a list
/// of sites; empty means a unit contact potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub alpha1: f64,
    #[serde(default)]
    pub onsite: Option<f64>,
    #[serde(default)]
    pub hopping: Option<Vec<Site>>,
    #[serde(default)]
    pub potential: Vec<Site>,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { alpha1: 1.0, onsite: None, hopping: None, potential: Vec::new() }
    }
}

impl ModelConfig {
    pub fn build(&self, dim: usize) -> Result<HoppingModel, LatticeError> {
        let potential =
            if self.potential.is_empty() { HoppingModel::contact_potential(dim, 1.0) } else { self.potential.clone() };
        match (&self.hopping, self.onsite) {
            (Some(h), _) => HoppingModel::new(dim, h.clone(), potential),
            (None, Some(onsite)) => HoppingModel::nearest_neighbor_with_onsite(dim, onsite, self.alpha1, potential),
            (None, None) => HoppingModel::nearest_neighbor(dim, self.alpha1, potential),
        }
    }
}

/// Lorentzian width: `max|∇ω|/N`, a fixed value, or a multiple of the default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonPolicy {
    #[default]
    Default,
    Fixed { value: f64 },
    Relative { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialField {
    Equilibrium { beta: f64, mu: f64 },
    /// Smooth random field; `spec` overrides the per-statistics defaults.
    Random {
        seed: u64,
        #[serde(default)]
        spec: Option<RandomFieldSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IsotropicInitial {
    BoseEinstein { beta: f64, mu: f64 },
    /// `amplitude · exp(−(ε − centre)² / (2 width²))`.
    Gaussian { amplitude: f64, centre: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Density,
    Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L3Config {
    pub times: Vec<f64>,
    #[serde(default)]
    pub options: Option<L3ScanOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceConfig {
    pub times: Vec<f64>,
    /// Integer coordinates of `k₀` on the grid.
    pub k0: Vec<i64>,
    pub sigma: i8,
}

/// Scenario and its parameters. Outputs, by column order:
///
/// - `evolve`: `summary.csv` (`t,rho,energy,entropy,sigma`), `fields.csv`,
///   `relaxation.csv` (`t,l1_to_matched_equilibrium`)
/// - `isotropic`: `trajectory.csv` (`t,mass,energy,entropy,window_mass,leakage`),
///   `final_state.csv` (`epsilon,f`), `phase.csv` (`mass,energy,beta_c,rho_c,condensate`)
/// - `linearize`: `spectrum.csv` (`index,eigenvalue`), `kubo.csv` (`t,correlation`)
/// - `correlation`: `decay_rate.csv` (`index,omega,nu_delta,nu_time_re,nu_time_im`)
/// - `diagnostics`: `conservation.csv` (`seed,variant,number_residual,energy_residual,max_abs_rate`),
///   optionally `l3.csv` (`t,l3_sum,slope`) and `interference.csv` (`t,re,im`)
/// - `diagrams`: `census.csv`
/// - `wick`: `moments.csv` (`word,quasifree,classical,truncated`, exact rationals)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Evolve {
        initial: InitialField,
        horizon: f64,
        /// Defaults to the stability step of the initial field.
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default = "one_usize")]
        record_every: usize,
    },
    Isotropic {
        cells: usize,
        cutoff: f64,
        initial: IsotropicInitial,
        horizon: f64,
        dt: f64,
        #[serde(default = "default_relative_change")]
        max_relative_change: f64,
        record_every: f64,
        /// Defaults to one cell.
        #[serde(default)]
        window: Option<f64>,
    },
    Linearize {
        beta: f64,
        mu: f64,
        times: Vec<f64>,
        observable: Observable,
        #[serde(default = "default_kernel_tol")]
        kernel_tol: f64,
    },
    Correlation {
        beta: f64,
        mu: f64,
        step: f64,
    },
    Diagnostics {
        seeds: Vec<u64>,
        #[serde(default)]
        l3: Option<L3Config>,
        #[serde(default)]
        interference: Option<InterferenceConfig>,
    },
    Diagrams {
        external: usize,
        max_fusions: usize,
    },
    Wick {
        statistics: FieldStatistics,
        /// Rationals such as `"1/3"`, one per mode.
        occupations: Vec<String>,
        /// Letters as `[mode, parity]`, parity `-1` for creation.
        words: Vec<Vec<(usize, i8)>>,
    },
}

fn one_usize() -> usize {
    1
}

fn default_relative_change() -> f64 {
    0.05
}

fn default_kernel_tol() -> f64 {
    1e-10
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Evolve { .. } => "evolve",
            Scenario::Isotropic { .. } => "isotropic",
            Scenario::Linearize { .. } => "linearize",
            Scenario::Correlation { .. } => "correlation",
            Scenario::Diagnostics { .. } => "diagnostics",
            Scenario::Diagrams { .. } => "diagrams",
            Scenario::Wick { .. } => "wick",
        }
    }

    fn on_lattice(&self) -> bool {
        matches!(
            self,
            Scenario::Evolve { .. } | Scenario::Linearize { .. } | Scenario::Correlation { .. } | Scenario::Diagnostics { .. }
        )
    }
}

pub fn list_scenarios() -> &'static [(&'static str, &'static str)] {
    &[
        ("evolve", "RK4 trajectory of the lattice collision equation"),
        ("isotropic", "isotropic boson energy-grid evolution with the condensation diagnostic"),
        ("linearize", "spectrum of the linearized operator and a Kubo time correlation"),
        ("correlation", "equilibrium decay rates from the delta form and the damped time integral"),
        ("diagnostics", "conservation residuals, l3 dispersivity scan and interference integral"),
        ("diagrams", "Feynman diagram census with leading and contracted counts"),
        ("wick", "exact quasifree, classical and truncated moments of operator words"),
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub statistics: Option<Statistics>,
    #[serde(default)]
    pub epsilon: EpsilonPolicy,
    pub scenario: Scenario,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(canonical))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

/// `--out`, then the environment variable, then the config, then `out`.
pub fn resolve_output_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.output.dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

struct Checker {
    out: Vec<Diagnostic>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Diagnostic { path: path.into(), message: message.into() });
    }

    fn positive(&mut self, path: &str, x: f64) {
        if !(x > 0.0) || !x.is_finite() {
            self.fail(path, format!("must be positive and finite, got {x}"));
        }
    }

    fn finite(&mut self, path: &str, x: f64) {
        if !x.is_finite() {
            self.fail(path, format!("must be finite, got {x}"));
        }
    }

    /// Boson equilibria need `μ < min ω` for `β > 0` and `μ > max ω` for `β < 0`.
    fn thermo(&mut self, path: &str, stats: Statistics, beta: f64, mu: f64, disp: Option<&DispersionField>) {
        self.finite(&format!("{path}.beta"), beta);
        self.finite(&format!("{path}.mu"), mu);
        if stats != Statistics::Boson {
            return;
        }
        if beta == 0.0 {
            self.fail(format!("{path}.beta"), "boson equilibrium needs beta != 0");
            return;
        }
        let Some(d) = disp else { return };
        if beta > 0.0 && !(mu < d.min_omega()) {
            self.fail(
                format!("{path}.mu"),
                format!("boson equilibrium with beta > 0 is restricted to mu < min omega = {}", d.min_omega()),
            );
        }
        if beta < 0.0 && !(mu > d.max_omega()) {
            self.fail(
                format!("{path}.mu"),
                format!("boson equilibrium with beta < 0 is restricted to mu > max omega = {}", d.max_omega()),
            );
        }
    }
}

fn quantum(stats: Option<Statistics>) -> Option<Statistics> {
    stats.filter(|s| matches!(s, Statistics::Boson | Statistics::Fermion))
}

/// Every violation found without running anything.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    let mut c = Checker { out: Vec::new() };
    let scenario = &config.scenario;
    let mut disp = None;
    if scenario.on_lattice() {
        match &config.grid {
            None => c.fail("grid", "required for this scenario"),
            Some(g) => match MomentumGrid::new(g.dim, g.side) {
                Err(e) => c.fail("grid", e.to_string()),
                Ok(grid) if grid.len() > CollisionTable::MAX_POINTS => {
                    c.fail("grid", format!("{} points exceed the collision cap {}", grid.len(), CollisionTable::MAX_POINTS))
                }
                Ok(grid) => match config.model.build(g.dim).and_then(|m| m.dispersion(&grid)) {
                    Err(e) => c.fail("model", e.to_string()),
                    Ok(d) => disp = Some(d),
                },
            },
        }
        if quantum(config.statistics).is_none() {
            c.fail("statistics", "this scenario needs boson or fermion statistics");
        }
        match config.epsilon {
            EpsilonPolicy::Default => {}
            EpsilonPolicy::Fixed { value } => c.positive("epsilon.value", value),
            EpsilonPolicy::Relative { factor } => c.positive("epsilon.factor", factor),
        }
    }
    let stats = quantum(config.statistics).unwrap_or(Statistics::Fermion);
    match scenario {
        Scenario::Evolve { initial, horizon, dt, record_every } => {
            if !(*horizon >= 0.0) || !horizon.is_finite() {
                c.fail("scenario.horizon", format!("must be finite and non-negative, got {horizon}"));
            }
            if let Some(dt) = dt {
                c.positive("scenario.dt", *dt);
            }
            if *record_every == 0 {
                c.fail("scenario.record_every", "must be at least 1");
            }
            match initial {
                InitialField::Equilibrium { beta, mu } => c.thermo("scenario.initial", stats, *beta, *mu, disp.as_ref()),
                InitialField::Random { spec: Some(s), .. } => {
                    if !(s.lower <= s.upper) || !(0.0..=1.0).contains(&s.amplitude) {
                        c.fail("scenario.initial.spec", "need lower <= upper and amplitude in [0, 1]");
                    }
                    if stats == Statistics::Fermion && (s.lower < 0.0 || s.upper > 1.0) {
                        c.fail("scenario.initial.spec", "fermion values must lie in [0, 1]");
                    }
                    if stats == Statistics::Boson && s.lower < 0.0 {
                        c.fail("scenario.initial.spec", "boson values must be non-negative");
                    }
                }
                InitialField::Random { .. } => {}
            }
        }
        Scenario::Isotropic { cells, cutoff, initial, horizon, dt, max_relative_change, record_every, window } => {
            if *cells == 0 || *cells > 400 {
                c.fail("scenario.cells", format!("must lie in 1..=400, got {cells}"));
            }
            c.positive("scenario.cutoff", *cutoff);
            c.positive("scenario.dt", *dt);
            c.positive("scenario.record_every", *record_every);
            if !(*horizon >= 0.0) || !horizon.is_finite() {
                c.fail("scenario.horizon", format!("must be finite and non-negative, got {horizon}"));
            }
            if !(*max_relative_change > 0.0 && *max_relative_change <= 1.0) {
                c.fail("scenario.max_relative_change", "must lie in (0, 1]");
            }
            if let Some(w) = window {
                c.positive("scenario.window", *w);
            }
            match initial {
                IsotropicInitial::BoseEinstein { beta, mu } => {
                    c.positive("scenario.initial.beta", *beta);
                    let lowest = 0.5 * cutoff / (*cells).max(1) as f64;
                    if !(*mu < lowest) {
                        c.fail("scenario.initial.mu", format!("must lie below the lowest cell {lowest}"));
                    }
                }
                IsotropicInitial::Gaussian { amplitude, centre, width } => {
                    if !(*amplitude >= 0.0) || !amplitude.is_finite() {
                        c.fail("scenario.initial.amplitude", "must be finite and non-negative");
                    }
                    c.finite("scenario.initial.centre", *centre);
                    c.positive("scenario.initial.width", *width);
                }
            }
        }
        Scenario::Linearize { beta, mu, times, kernel_tol, .. } => {
            c.thermo("scenario", stats, *beta, *mu, disp.as_ref());
            if times.iter().any(|t| !t.is_finite()) {
                c.fail("scenario.times", "must be finite");
            }
            c.positive("scenario.kernel_tol", *kernel_tol);
        }
        Scenario::Correlation { beta, mu, step } => {
            c.thermo("scenario", stats, *beta, *mu, disp.as_ref());
            c.positive("scenario.step", *step);
        }
        Scenario::Diagnostics { l3, interference, .. } => {
            if let Some(l) = l3 {
                if l.times.is_empty() || l.times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
                    c.fail("scenario.l3.times", "need at least one positive time");
                }
            }
            if let Some(i) = interference {
                if i.sigma.abs() != 1 {
                    c.fail("scenario.interference.sigma", "must be 1 or -1");
                }
                if config.grid.as_ref().is_some_and(|g| g.dim != i.k0.len()) {
                    c.fail("scenario.interference.k0", "length must equal the grid dimension");
                }
                if i.times.iter().any(|t| !t.is_finite()) {
                    c.fail("scenario.interference.times", "must be finite");
                }
            }
        }
        Scenario::Diagrams { external, max_fusions } => {
            if *external == 0 || external % 2 == 1 {
                c.fail("scenario.external", "census needs a positive even number of external lines");
            } else {
                let work: u128 = (0..=*max_fusions)
                    .map(|n| {
                        let lines = (external + 2 * n) as u128;
                        let pairings: u128 = (1..lines).step_by(2).product();
                        combinatorics::history_count(*external, n).saturating_mul(pairings)
                    })
                    .sum();
                if work > 50_000_000 {
                    c.fail("scenario.max_fusions", format!("{work} history-pairing combinations exceed the cap 5e7"));
                }
            }
        }
        Scenario::Wick { occupations, words, .. } => {
            for (i, o) in occupations.iter().enumerate() {
                if BigRational::from_str(o).is_err() {
                    c.fail(format!("scenario.occupations[{i}]"), format!("`{o}` is not a rational"));
                }
            }
            for (i, w) in words.iter().enumerate() {
                if w.len() % 2 == 1 || w.len() > combinatorics::TRUNCATION_CAP {
                    c.fail(format!("scenario.words[{i}]"), format!("length must be even and at most {}", combinatorics::TRUNCATION_CAP));
                }
                if w.iter().any(|&(m, p)| m >= occupations.len() || p.abs() != 1) {
                    c.fail(format!("scenario.words[{i}]"), "letters need a known mode and parity ±1");
                }
            }
        }
    }
    c.out
}

/// Files written by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'static str,
    config_sha256: String,
    config: &'a RunConfig,
    threads: usize,
    outputs: Vec<OutputEntry>,
    wall_seconds: f64,
}

/// Writes `contents` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

/// Validates, runs, and writes the outputs and `manifest.json` into `out_dir`.
pub fn run_scenario(config: &RunConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let problems = validate(config);
    if !problems.is_empty() {
        return Err(CliError::Invalid(problems));
    }
    let start = Instant::now();
    let files = compute(config)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut outputs = Vec::new();
    let mut entries = Vec::new();
    for (name, text) in &files {
        let path = out_dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        entries.push(OutputEntry { file: name.clone(), bytes: text.len(), sha256: hex(&Sha256::digest(text.as_bytes())) });
        outputs.push(path);
    }
    let manifest = Manifest {
        tool: "kinetic",
        version: env!("CARGO_PKG_VERSION"),
        scenario: config.scenario.name(),
        config_sha256: config.hash(),
        config,
        threads: rayon::current_num_threads(),
        outputs: entries,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(RunReport { outputs, manifest: manifest_path })
}

fn lattice_setup(config: &RunConfig) -> Result<(DispersionField, CollisionTable, Statistics), CliError> {
    let g = config.grid.as_ref().expect("validated");
    let stats = config.statistics.expect("validated");
    let grid = MomentumGrid::new(g.dim, g.side)?;
    let disp = config.model.build(g.dim)?.dispersion(&grid)?;
    let eps = match config.epsilon {
        EpsilonPolicy::Default => collision::default_epsilon(&disp),
        EpsilonPolicy::Fixed { value } => value,
        EpsilonPolicy::Relative { factor } => factor * collision::default_epsilon(&disp),
    };
    let table = CollisionTable::build(&disp, stats, eps)?;
    Ok((disp, table, stats))
}

fn compute(config: &RunConfig) -> Result<Vec<(String, String)>, CliError> {
    match &config.scenario {
        Scenario::Evolve { initial, horizon, dt, record_every } => {
            let (disp, table, stats) = lattice_setup(config)?;
            let field = match initial {
                InitialField::Equilibrium { beta, mu } => {
                    state::equilibrium_field(&disp, InverseTemperature::Finite(*beta), *mu, stats)?
                }
                InitialField::Random { seed, spec } => {
                    let spec = spec.unwrap_or_else(|| RandomFieldSpec::for_statistics(stats, *seed));
                    let spec = RandomFieldSpec { seed: *seed, ..spec };
                    state::random_field(disp.grid(), stats, &spec)?
                }
            };
            let dt = match dt {
                Some(dt) => *dt,
                None => evolve::default_step(&table, &field)?,
            };
            let traj = evolve::run(&table, &field, *horizon, dt, *record_every)?;
            let start = state::thermo(&field, &disp);
            let target = state::match_equilibrium(start.density, start.energy, &disp, stats)?.field(&disp, stats)?;
            let mut relaxation = String::from("t,l1_to_matched_equilibrium\n");
            for (t, f) in traj.times.iter().zip(&traj.fields) {
                relaxation.push_str(&format!("{},{}\n", fmt_float(*t), fmt_float(f.l1_distance(&target))));
            }
            Ok(vec![
                ("summary.csv".into(), traj.summary_csv()),
                ("fields.csv".into(), traj.fields_csv()),
                ("relaxation.csv".into(), relaxation),
            ])
        }
        Scenario::Isotropic { cells, cutoff, initial, horizon, dt, max_relative_change, record_every, window } => {
            let grid = EnergyGrid::new(*cells, *cutoff)?;
            let state = match initial {
                IsotropicInitial::BoseEinstein { beta, mu } => EnergyState::bose_einstein(grid.clone(), *beta, *mu)?,
                IsotropicInitial::Gaussian { amplitude, centre, width } => {
                    let f = grid
                        .centres()
                        .iter()
                        .map(|e| amplitude * (-(e - centre).powi(2) / (2.0 * width * width)).exp())
                        .collect();
                    EnergyState::new(grid.clone(), f)?
                }
            };
            let opts = IsotropicRunOptions {
                horizon: *horizon,
                dt: *dt,
                max_relative_change: *max_relative_change,
                record_every: *record_every,
                window: window.unwrap_or(grid.spacing()),
            };
            let traj = isotropic::evolve_isotropic(&state, &opts)?;
            let m = state.moments();
            let curve = isotropic::critical_curve(&[1.0])?;
            let (beta_c, rho_c) = isotropic::critical_density(m.energy, &curve)?;
            let condensate = match isotropic::classify(m.mass, m.energy, &curve)? {
                Phase::Subcritical => 0.0,
                Phase::Supercritical { condensate } => condensate,
            };
            let phase = format!(
                "mass,energy,beta_c,rho_c,condensate\n{},{},{},{},{}\n",
                fmt_float(m.mass),
                fmt_float(m.energy),
                fmt_float(beta_c),
                fmt_float(rho_c),
                fmt_float(condensate)
            );
            Ok(vec![
                ("trajectory.csv".into(), traj.to_csv()),
                ("final_state.csv".into(), traj.last().to_csv()),
                ("phase.csv".into(), phase),
            ])
        }
        Scenario::Linearize { beta, mu, times, observable, kernel_tol } => {
            let (disp, table, _) = lattice_setup(config)?;
            let op = linearized::assemble_l(&table, *beta, *mu)?;
            let spec = linearized::spectrum(&op, None, *kernel_tol);
            let mut spectrum = String::from("index,eigenvalue\n");
            for (i, l) in spec.eigenvalues.iter().enumerate() {
                spectrum.push_str(&format!("{i},{}\n", fmt_float(*l)));
            }
            let eta: Vec<f64> = match observable {
                Observable::Density => vec![1.0; disp.grid().len()],
                Observable::Energy => disp.omega().to_vec(),
            };
            let corr = linearized::kubo_correlation(&op, &eta, times)?;
            let mut kubo = String::from("t,correlation\n");
            for (t, v) in times.iter().zip(&corr) {
                kubo.push_str(&format!("{},{}\n", fmt_float(*t), fmt_float(*v)));
            }
            Ok(vec![("spectrum.csv".into(), spectrum), ("kubo.csv".into(), kubo)])
        }
        Scenario::Correlation { beta, mu, step } => {
            let (disp, table, _) = lattice_setup(config)?;
            let delta = linearized::decay_rate(&table, *beta, *mu)?;
            let timed = linearized::decay_rate_time_integral(&table, *beta, *mu, *step)?;
            let mut out = String::from("index,omega,nu_delta,nu_time_re,nu_time_im\n");
            for k in 0..delta.len() {
                out.push_str(&format!(
                    "{k},{},{},{},{}\n",
                    fmt_float(disp.omega()[k]),
                    fmt_float(delta[k]),
                    fmt_float(timed[k].re),
                    fmt_float(timed[k].im)
                ));
            }
            Ok(vec![("decay_rate.csv".into(), out)])
        }
        Scenario::Diagnostics { seeds, l3, interference } => {
            let (disp, table, stats) = lattice_setup(config)?;
            let mut out = String::from("seed,variant,number_residual,energy_residual,max_abs_rate\n");
            for &seed in seeds {
                let field = state::random_field(disp.grid(), stats, &RandomFieldSpec::for_statistics(stats, seed))?;
                let mut variants = vec![("bn", collision::evaluate_bn(&table, &field)?)];
                if stats == Statistics::Boson {
                    variants.push(("nls", collision::evaluate_nls(&table, &field)?));
                    variants.push(("cl", collision::evaluate_cl(&table, &field)?));
                }
                for (name, rate) in variants {
                    let (n, e) = collision::conservation_residuals(&disp, &rate);
                    let top = rate.iter().fold(0.0f64, |a, r| a.max(r.abs()));
                    out.push_str(&format!("{seed},{name},{},{},{}\n", fmt_float(n), fmt_float(e), fmt_float(top)));
                }
            }
            let mut files = vec![("conservation.csv".to_string(), out)];
            if let Some(l) = l3 {
                let scan = lattice::l3_dispersivity_scan(disp.model(), &l.times, &l.options.unwrap_or_default())?;
                let mut text = String::from("t,l3_sum,slope\n");
                for (t, s) in scan.times.iter().zip(&scan.sums) {
                    text.push_str(&format!("{},{},{}\n", fmt_float(*t), fmt_float(*s), fmt_float(scan.slope)));
                }
                files.push(("l3.csv".into(), text));
            }
            if let Some(i) = interference {
                let k0 = disp.grid().index(&i.k0);
                let mut text = String::from("t,re,im\n");
                for &t in &i.times {
                    let z = lattice::interference_integral(&disp, t, k0, i.sigma);
                    text.push_str(&format!("{},{},{}\n", fmt_float(t), fmt_float(z.re), fmt_float(z.im)));
                }
                files.push(("interference.csv".into(), text));
            }
            Ok(files)
        }
        Scenario::Diagrams { external, max_fusions } => {
            let rows = combinatorics::diagram_census(*external, *max_fusions)?;
            Ok(vec![("census.csv".into(), combinatorics::census_csv(&rows)?)])
        }
        Scenario::Wick { statistics, occupations, words } => {
            let occupation: Vec<BigRational> =
                occupations.iter().map(|o| BigRational::from_str(o).expect("validated")).collect();
            let rule = TwoPointRule::new(*statistics, occupation);
            let mut out = String::from("word,quasifree,classical,truncated\n");
            for w in words {
                let word: Vec<Letter> = w.iter().map(|&(mode, parity)| Letter { mode, parity }).collect();
                let quasi = combinatorics::quasifree_moment(&word, &rule)?;
                let classical = combinatorics::classical_moment(&word, &rule)?;
                let truncated = combinatorics::truncate(&word, *statistics, |sub| {
                    combinatorics::quasifree_moment(sub, &rule).expect("sub-words of a checked word")
                })?;
                let label: Vec<String> =
                    word.iter().map(|l| format!("{}{}", if l.parity < 0 { "c" } else { "a" }, l.mode)).collect();
                out.push_str(&format!("{},{quasi},{classical},{truncated}\n", label.join(" ")));
            }
            Ok(vec![("moments.csv".into(), out)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_config(scenario: &str) -> String {
        format!(
            r#"{{"grid": {{"dim": 1, "side": 8}}, "statistics": "fermion",
                "model": {{"alpha1": 0.5, "potential": [{{"offset": [0], "value": 1.0}},
                  {{"offset": [1], "value": 0.3}}, {{"offset": [-1], "value": 0.3}}]}},
                "scenario": {scenario}}}"#
        )
    }

    #[test]
    fn parse_errors_carry_the_field_path() {
        let text = r#"{"grid": {"dim": 2, "side": "eight"}, "scenario": {"kind": "diagrams", "external": 2, "max_fusions": 1}}"#;
        match parse_config(text).unwrap_err() {
            CliError::Config { path, .. } => assert_eq!(path, "grid.side"),
            other => panic!("{other:?}"),
        }
        assert_eq!(err_code(r#"{"scenario": {"kind": "nope"}}"#), 2);
    }

    fn err_code(text: &str) -> i32 {
        parse_config(text).unwrap_err().exit_code()
    }

    #[test]
    fn odd_side_and_boson_mu_are_reported() {
        let text = r#"{"grid": {"dim": 2, "side": 5}, "statistics": "boson",
            "scenario": {"kind": "correlation", "beta": 1.0, "mu": 0.0, "step": 0.1}}"#;
        let d = validate(&parse_config(text).unwrap());
        assert!(d.iter().any(|d| d.path == "grid"), "{d:?}");
        let text = r#"{"grid": {"dim": 2, "side": 4}, "statistics": "boson",
            "scenario": {"kind": "correlation", "beta": 1.0, "mu": 1.5, "step": 0.1}}"#;
        let d = validate(&parse_config(text).unwrap());
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("mu < min omega"), "{d:?}");
        let text = r#"{"grid": {"dim": 2, "side": 4}, "statistics": "fermion",
            "scenario": {"kind": "correlation", "beta": -3.0, "mu": 7.5, "step": 0.1}}"#;
        assert!(validate(&parse_config(text).unwrap()).is_empty());
    }

    #[test]
    fn equilibrium_evolve_is_flat_and_rerun_is_identical() {
        let text = lattice_config(r#"{"kind": "evolve", "initial": {"kind": "equilibrium", "beta": 1.0, "mu": 2.0}, "horizon": 0.5}"#);
        let config = parse_config(&text).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_scenario(&config, a.path()).unwrap();
        run_scenario(&config, b.path()).unwrap();
        for p in &ra.outputs {
            let name = p.file_name().unwrap();
            assert_eq!(fs::read(p).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
        let rhos: Vec<f64> = summary.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(rhos.len() >= 2);
        assert!(rhos.iter().all(|r| (r - rhos[0]).abs() < 1e-12));
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ra.manifest).unwrap()).unwrap();
        assert_eq!(manifest["config_sha256"], config.hash());
    }

    #[test]
    fn wick_outputs_exact_rationals() {
        let text = r#"{"scenario": {"kind": "wick", "statistics": "boson", "occupations": ["1/3"],
            "words": [[[0, -1], [0, 1]], [[0, 1], [0, -1]], [[0, -1], [0, -1], [0, 1], [0, 1]]]}}"#;
        let dir = tempfile::tempdir().unwrap();
        run_scenario(&parse_config(text).unwrap(), dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("moments.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "c0 a0,1/3,1/3,1/3");
        assert_eq!(lines[2], "a0 c0,4/3,1/3,4/3");
        assert_eq!(lines[3], "c0 c0 a0 a0,2/9,2/9,0");
    }
}
