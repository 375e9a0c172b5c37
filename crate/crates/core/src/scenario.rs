//! Config-driven scenario runner. Configs are strict JSON with dotted-path
//! overrides; every run ends in a machine-readable summary.
//!
//! Outputs of one run live in a single directory: `diagnostics.ndjson` for
//! time series, `snapshots/` for fields, one scenario CSV for final curves and
//! `summary.json`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calculus::{StencilConfig, StencilOrder};
use crate::dynamics::{self, IntegratorConfig};
use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, HydroState, PhysicsParams, PotentialSpec};
use crate::model::{self, Couplings, Model, GAMMA_CONVENTION};
use crate::observables::{self, DiagnosticsRecord, PacketFamily};
use crate::separability::{self, CorrelationSample, CubicVariant};
use crate::snapshot::Snapshot;
use crate::spectral;
use crate::stationary::{self, EigenSolverConfig};
use crate::symmetry::{self, BoostSpec};

/// Exit code of a passing run.
pub const EXIT_PASS: i32 = 0;
/// Exit code when a scenario tolerance is not met.
pub const EXIT_TOLERANCE: i32 = 1;
/// Exit code on instability, non-finite values or solver failure.
pub const EXIT_NUMERICAL: i32 = 2;
/// Exit code for invalid configurations.
pub const EXIT_CONFIG: i32 = 3;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "MADELUNG_OUTPUT_DIR";

/// A complete run specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub couplings: CouplingsSpec,
    #[serde(default)]
    pub stencil: StencilOrder,
    /// Required by every scenario except `stationary_report` and
    /// `finite_energy_scan`.
    #[serde(default)]
    pub initial_state: Option<InitialStateSpec>,
    /// Required by the time-dependent scenarios.
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Seed for the phase-noise generator.
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub points: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.points.clone(), self.lengths.clone())
    }
}

/// Couplings as a direct `c` list or as the `b` parametrization; exactly one
/// may be given, and neither means the linear theory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CouplingsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 6]>,
}

impl CouplingsSpec {
    pub fn resolve(&self) -> Result<Couplings> {
        let couplings = match (self.c, self.b) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "couplings: `b` and `c` are mutually exclusive; give one list".into(),
                ))
            }
            (Some(c), None) => Couplings::from_array(c),
            (None, Some(b)) => model::couplings_from_b(b),
            (None, None) => Couplings::LINEAR,
        };
        if couplings.as_array().iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("couplings: every entry must be finite".into()));
        }
        Ok(couplings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Used when neither the command line nor the environment names one.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub snapshots: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            snapshots: true,
        }
    }
}

fn yes() -> bool {
    true
}

/// A scalar broadcast to every axis or one value per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum PerAxis {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerAxis {
    fn resolve(&self, dim: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            PerAxis::Scalar(v) => Ok(vec![*v; dim]),
            PerAxis::List(v) if v.len() == dim => Ok(v.clone()),
            PerAxis::List(v) => Err(Error::Config(format!(
                "{name}: {} values for a {dim}-dimensional grid",
                v.len()
            ))),
        }
    }
}

/// One periodic phase mode `a·sin(2π Σ n_k x_k / L_k + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhaseMode {
    pub amplitude: f64,
    pub winding: Vec<i64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    /// Normalized Gaussian density of standard deviation `sigma` on a
    /// uniform pedestal, with background wavevector `k`.
    Gaussian {
        #[serde(default)]
        center: Option<PerAxis>,
        sigma: PerAxis,
        #[serde(default)]
        k: Option<PerAxis>,
        /// Background density as a fraction of the peak density.
        #[serde(default)]
        pedestal: f64,
        #[serde(default)]
        phase_modes: Vec<PhaseMode>,
        /// Amplitude of seeded random phase modes (windings 1 to 4 per axis).
        #[serde(default)]
        phase_noise: f64,
    },
    /// Linear eigenstate of the configured potential, counted from the
    /// ground state.
    Eigenstate {
        index: usize,
        #[serde(default)]
        solver: Option<EigenSolverConfig>,
    },
    /// Unit-norm plane wave with wavevector `k`.
    PlaneWave { k: PerAxis },
    /// Tensor product of two one-dimensional states on a 2D grid.
    Product {
        first: Box<InitialStateSpec>,
        second: Box<InitialStateSpec>,
    },
}

/// The experiment to execute; exactly one per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// Plain evolution; passes when the norm drift stays below tolerance.
    Evolve {
        #[serde(default = "default_norm_tolerance")]
        norm_tolerance: f64,
    },
    /// Hydrodynamic evolution against the split-step oracle (c = 0 only).
    LinearCompare {
        #[serde(default = "default_linear_tolerance")]
        tolerance: f64,
        /// Oracle step.
        #[serde(default = "default_oracle_dt")]
        oracle_dt: f64,
    },
    /// Linear eigenstate and its stationarity measures under the couplings.
    StationaryReport {
        #[serde(default)]
        level: usize,
        #[serde(default = "default_linear_tolerance")]
        tolerance: f64,
        /// Whether stationarity should survive; defaults to `c4 = c5 = c6 = 0`.
        #[serde(default)]
        expect_unmodified: Option<bool>,
        #[serde(default)]
        solver: Option<EigenSolverConfig>,
    },
    /// Growth exponent of the nonlinear energy against domain size.
    FiniteEnergyScan {
        family: PacketFamily,
        lengths: Vec<f64>,
        spacing: f64,
        /// Defaults to the dimension for spreading packets and 0 otherwise.
        #[serde(default)]
        expected_exponent: Option<f64>,
        #[serde(default = "default_scan_tolerance")]
        tolerance: f64,
    },
    /// Commuting-diagram boost test against the c = 0 baseline.
    GalileiTest {
        #[serde(default)]
        velocity: Option<Vec<f64>>,
        #[serde(default)]
        winding: Option<Vec<i64>>,
        #[serde(default = "default_galilei_factor")]
        baseline_factor: f64,
    },
    /// Correlation growth of a joint product state against the c = 0
    /// baseline, plus the marginal and joint cubic contrast.
    SeparabilityTest {
        #[serde(default = "default_cubic_strength")]
        cubic_strength: f64,
        #[serde(default = "default_oracle_dt")]
        cubic_dt: f64,
        #[serde(default = "default_separability_factor")]
        baseline_factor: f64,
        #[serde(default = "default_correlation_tolerance")]
        linear_tolerance: f64,
        #[serde(default = "default_cubic_tolerance")]
        cubic_tolerance: f64,
    },
    /// Trajectory-differenced Ehrenfest relations with the I₁, I₂ terms.
    EhrenfestTest {
        /// Relative RMS bound on the position relation when c ≠ 0.
        #[serde(default = "default_ehrenfest_tolerance")]
        tolerance: f64,
        /// Absolute bound on both relations when c = 0.
        #[serde(default = "default_ehrenfest_linear_tolerance")]
        linear_tolerance: f64,
    },
}

fn default_norm_tolerance() -> f64 {
    1e-6
}
fn default_linear_tolerance() -> f64 {
    1e-6
}
fn default_oracle_dt() -> f64 {
    1e-3
}
fn default_scan_tolerance() -> f64 {
    0.1
}
fn default_galilei_factor() -> f64 {
    10.0
}
fn default_cubic_strength() -> f64 {
    1.0
}
fn default_separability_factor() -> f64 {
    100.0
}
fn default_correlation_tolerance() -> f64 {
    1e-8
}
fn default_cubic_tolerance() -> f64 {
    1e-6
}
fn default_ehrenfest_tolerance() -> f64 {
    0.01
}
fn default_ehrenfest_linear_tolerance() -> f64 {
    1e-5
}

impl ScenarioSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::Evolve { .. } => "evolve",
            ScenarioSpec::LinearCompare { .. } => "linear_compare",
            ScenarioSpec::StationaryReport { .. } => "stationary_report",
            ScenarioSpec::FiniteEnergyScan { .. } => "finite_energy_scan",
            ScenarioSpec::GalileiTest { .. } => "galilei_test",
            ScenarioSpec::SeparabilityTest { .. } => "separability_test",
            ScenarioSpec::EhrenfestTest { .. } => "ehrenfest_test",
        }
    }

    fn needs_initial_state(&self) -> bool {
        !matches!(
            self,
            ScenarioSpec::StationaryReport { .. } | ScenarioSpec::FiniteEnergyScan { .. }
        )
    }

    fn needs_integrator(&self) -> bool {
        self.needs_initial_state()
    }
}

/// Exit code for an error raised while preparing or executing a run.
pub fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::NonFinite { .. }
        | Error::Unstable { .. }
        | Error::StepTooLarge { .. }
        | Error::NoConvergence { .. }
        | Error::Io { .. }
        | Error::Snapshot { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// JSON schema of [`RunConfig`].
pub fn schema() -> Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}

/// Parse a JSON document into a raw value, then into a [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed JSON: {e}")))?;
    from_value(value)
}

/// Strict conversion naming the offending key path on failure.
pub fn from_value(value: Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("at `{path}`: {}", e.inner()))
    })
}

/// Apply `key=value` overrides on dotted paths; numeric segments index
/// arrays. Values parse as JSON and fall back to plain strings.
pub fn apply_overrides(value: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form key=value")))?;
        let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut cursor = &mut *value;
        let segments: Vec<&str> = path.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::Config(format!("override path {path:?} has an empty segment")));
        }
        for (depth, seg) in segments.iter().enumerate() {
            let last = depth + 1 == segments.len();
            cursor = match cursor {
                Value::Array(items) => {
                    let idx: usize = seg
                        .parse()
                        .map_err(|_| Error::Config(format!("override {path:?}: `{seg}` is not an array index")))?;
                    let len = items.len();
                    items
                        .get_mut(idx)
                        .ok_or_else(|| Error::Config(format!("override {path:?}: index {idx} out of range ({len})")))?
                }
                Value::Object(map) => map
                    .entry(seg.to_string())
                    .or_insert_with(|| if last { Value::Null } else { Value::Object(Default::default()) }),
                _ => {
                    return Err(Error::Config(format!(
                        "override {path:?}: `{seg}` is below a non-container value"
                    )))
                }
            };
        }
        *cursor = new;
    }
    Ok(())
}

/// Load a config file with overrides applied.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("malformed JSON in {}: {e}", path.display())))?;
    apply_overrides(&mut value, overrides)?;
    from_value(value)
}

/// Everything derived from a config before any scenario work starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: Grid,
    pub params: PhysicsParams,
    pub couplings: Couplings,
    pub model: Model,
}

/// Check every cross-field constraint that does not require solving
/// anything; eigenstate initial data is solved later, in [`run`].
pub fn validate(config: &RunConfig) -> Result<Prepared> {
    let grid = config.grid.build().map_err(as_config)?;
    config.physics.validate().map_err(as_config)?;
    let couplings = config.couplings.resolve()?;
    let stencil = StencilConfig { order: config.stencil };
    let model = Model::new(&grid, config.physics.clone(), couplings)
        .map_err(as_config)?
        .with_stencil(stencil);

    if config.scenario.needs_integrator() {
        let integ = config
            .integrator
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scenario `{}` requires `integrator`", config.scenario.name())))?;
        integ.validate().map_err(as_config)?;
    }
    if config.scenario.needs_initial_state() {
        let spec = config
            .initial_state
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scenario `{}` requires `initial_state`", config.scenario.name())))?;
        check_initial(spec, &grid, &config.physics)?;
    }

    match &config.scenario {
        ScenarioSpec::Evolve { norm_tolerance } => positive("scenario.norm_tolerance", *norm_tolerance)?,
        ScenarioSpec::LinearCompare { tolerance, oracle_dt } => {
            positive("scenario.tolerance", *tolerance)?;
            positive("scenario.oracle_dt", *oracle_dt)?;
            if !couplings.is_linear() {
                return Err(Error::Config("linear_compare requires all couplings to be zero".into()));
            }
        }
        ScenarioSpec::StationaryReport { tolerance, .. } => {
            positive("scenario.tolerance", *tolerance)?;
            if config.physics.potential.is_free() {
                return Err(Error::Config("stationary_report requires a confining potential".into()));
            }
        }
        ScenarioSpec::FiniteEnergyScan {
            family,
            lengths,
            spacing,
            tolerance,
            ..
        } => {
            positive("scenario.spacing", *spacing)?;
            positive("scenario.tolerance", *tolerance)?;
            if lengths.len() < 2 || lengths.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Config("finite_energy_scan needs at least two positive lengths".into()));
            }
            if !(1..=3).contains(&family.dim()) {
                return Err(Error::Config("finite_energy_scan family dim must be 1, 2 or 3".into()));
            }
        }
        ScenarioSpec::GalileiTest { baseline_factor, .. } => {
            positive("scenario.baseline_factor", *baseline_factor)?;
            boost_spec(&config.scenario, &grid, &config.physics)?;
            if !config.physics.potential.is_free() {
                return Err(Error::Config("galilei_test requires a free potential".into()));
            }
        }
        ScenarioSpec::SeparabilityTest {
            cubic_dt,
            baseline_factor,
            linear_tolerance,
            cubic_tolerance,
            cubic_strength,
        } => {
            positive("scenario.cubic_dt", *cubic_dt)?;
            positive("scenario.baseline_factor", *baseline_factor)?;
            positive("scenario.linear_tolerance", *linear_tolerance)?;
            positive("scenario.cubic_tolerance", *cubic_tolerance)?;
            if !cubic_strength.is_finite() {
                return Err(Error::Config("scenario.cubic_strength must be finite".into()));
            }
            if !matches!(config.initial_state, Some(InitialStateSpec::Product { .. })) {
                return Err(Error::Config("separability_test requires a `product` initial state".into()));
            }
            axis_params(&config.physics, 0)?;
            axis_params(&config.physics, 1)?;
        }
        ScenarioSpec::EhrenfestTest {
            tolerance,
            linear_tolerance,
        } => {
            positive("scenario.tolerance", *tolerance)?;
            positive("scenario.linear_tolerance", *linear_tolerance)?;
        }
    }
    Ok(Prepared {
        grid,
        params: config.physics.clone(),
        couplings,
        model,
    })
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive (got {v})")))
    }
}

fn boost_spec(scenario: &ScenarioSpec, grid: &Grid, params: &PhysicsParams) -> Result<BoostSpec> {
    let ScenarioSpec::GalileiTest { velocity, winding, .. } = scenario else {
        return Err(Error::Config("not a galilei_test".into()));
    };
    let spec = match (velocity, winding) {
        (Some(v), None) => BoostSpec::new(v.clone(), grid, params),
        (None, Some(w)) => BoostSpec::from_winding(w, grid, params),
        _ => {
            return Err(Error::Config(
                "galilei_test needs exactly one of `velocity` and `winding`".into(),
            ))
        }
    }
    .map_err(as_config)?;
    if spec.is_identity() {
        return Err(Error::Config("galilei_test needs a nonzero velocity".into()));
    }
    Ok(spec)
}

/// Physics restricted to one axis of a separable potential.
fn axis_params(params: &PhysicsParams, axis: usize) -> Result<PhysicsParams> {
    let potential = match &params.potential {
        PotentialSpec::Free => PotentialSpec::Free,
        PotentialSpec::Harmonic { omega } if omega.len() == 1 => PotentialSpec::Harmonic { omega: omega.clone() },
        PotentialSpec::Harmonic { omega } => PotentialSpec::Harmonic {
            omega: vec![*omega
                .get(axis)
                .ok_or_else(|| Error::Config(format!("physics.potential.omega has no entry for axis {axis}")))?],
        },
        PotentialSpec::Additive { parts } => parts
            .get(axis)
            .cloned()
            .ok_or_else(|| Error::Config(format!("physics.potential.parts has no entry for axis {axis}")))?,
        _ => {
            return Err(Error::Config(
                "product states need a free, harmonic or additive potential".into(),
            ))
        }
    };
    Ok(PhysicsParams {
        potential,
        ..params.clone()
    })
}

fn check_initial(spec: &InitialStateSpec, grid: &Grid, params: &PhysicsParams) -> Result<()> {
    let dim = grid.dim();
    match spec {
        InitialStateSpec::Gaussian {
            center,
            sigma,
            k,
            pedestal,
            phase_modes,
            phase_noise,
        } => {
            if let Some(c) = center {
                c.resolve(dim, "initial_state.center")?;
            }
            if let Some(k) = k {
                k.resolve(dim, "initial_state.k")?;
            }
            for s in sigma.resolve(dim, "initial_state.sigma")? {
                positive("initial_state.sigma", s)?;
            }
            if !(pedestal.is_finite() && *pedestal >= 0.0) {
                return Err(Error::Config("initial_state.pedestal must be non-negative".into()));
            }
            if !(phase_noise.is_finite() && *phase_noise >= 0.0) {
                return Err(Error::Config("initial_state.phase_noise must be non-negative".into()));
            }
            for m in phase_modes {
                if m.winding.len() != dim {
                    return Err(Error::Config(format!(
                        "initial_state.phase_modes: winding has {} entries for a {dim}-dimensional grid",
                        m.winding.len()
                    )));
                }
            }
            Ok(())
        }
        InitialStateSpec::Eigenstate { .. } => {
            if params.potential.is_free() {
                Err(Error::Config("eigenstate initial data requires a confining potential".into()))
            } else {
                Ok(())
            }
        }
        InitialStateSpec::PlaneWave { k } => k.resolve(dim, "initial_state.k").map(|_| ()),
        InitialStateSpec::Product { first, second } => {
            if dim != 2 {
                return Err(Error::Config("product initial data requires a 2D grid".into()));
            }
            for (axis, part) in [first, second].into_iter().enumerate() {
                if matches!(**part, InitialStateSpec::Product { .. }) {
                    return Err(Error::Config("product factors must be one-dimensional".into()));
                }
                check_initial(part, &grid.axis_grid(axis), &axis_params(params, axis)?)?;
            }
            Ok(())
        }
    }
}

/// Build the initial state; `rng` feeds phase noise.
pub fn build_initial(
    spec: &InitialStateSpec,
    grid: &Grid,
    params: &PhysicsParams,
    rng: &mut ChaCha8Rng,
) -> Result<HydroState> {
    check_initial(spec, grid, params)?;
    let dim = grid.dim();
    match spec {
        InitialStateSpec::Gaussian {
            center,
            sigma,
            k,
            pedestal,
            phase_modes,
            phase_noise,
        } => {
            let center = match center {
                Some(c) => c.resolve(dim, "initial_state.center")?,
                None => vec![0.0; dim],
            };
            let sigma = sigma.resolve(dim, "initial_state.sigma")?;
            let k0 = match k {
                Some(k) => k.resolve(dim, "initial_state.k")?,
                None => vec![0.0; dim],
            };
            let lengths = grid.lengths().to_vec();
            let amplitude = grid.sample(|x| {
                let mut exponent = 0.0;
                for a in 0..dim {
                    // Periodic distance so packets may straddle the seam.
                    let l = lengths[a];
                    let d = (x[a] - center[a] + 0.5 * l).rem_euclid(l) - 0.5 * l;
                    exponent += d * d / (2.0 * sigma[a] * sigma[a]);
                }
                (pedestal + (-exponent).exp()).sqrt()
            });
            let mut modes = phase_modes.clone();
            if *phase_noise > 0.0 {
                for a in 0..dim {
                    for n in 1..=4 {
                        let mut winding = vec![0; dim];
                        winding[a] = n;
                        modes.push(PhaseMode {
                            amplitude: phase_noise * rng.gen_range(-1.0..1.0),
                            winding,
                            offset: rng.gen_range(0.0..2.0 * PI),
                        });
                    }
                }
            }
            let phase = grid.sample(|x| {
                modes
                    .iter()
                    .map(|m| {
                        let arg: f64 = (0..dim).map(|a| 2.0 * PI * m.winding[a] as f64 * x[a] / lengths[a]).sum();
                        m.amplitude * (arg + m.offset).sin()
                    })
                    .sum()
            });
            let omega0 = params.hbar * k0.iter().map(|k| k * k).sum::<f64>() / (2.0 * params.mass);
            let mut state = HydroState::with_background(grid.clone(), amplitude, phase, k0, omega0, 0.0)?;
            fields::normalize(&mut state)?;
            Ok(state)
        }
        InitialStateSpec::Eigenstate { index, solver } => {
            let cfg = solver.unwrap_or_default();
            stationary::linear_eigenstate(grid, params, *index, &cfg)?.to_state(grid)
        }
        InitialStateSpec::PlaneWave { k } => {
            let k0 = k.resolve(dim, "initial_state.k")?;
            let volume: f64 = grid.lengths().iter().product();
            let omega0 = params.hbar * k0.iter().map(|k| k * k).sum::<f64>() / (2.0 * params.mass);
            HydroState::with_background(
                grid.clone(),
                vec![volume.sqrt().recip(); grid.len()],
                vec![0.0; grid.len()],
                k0,
                omega0,
                0.0,
            )
        }
        InitialStateSpec::Product { first, second } => {
            let a = build_initial(first, &grid.axis_grid(0), &axis_params(params, 0)?, rng)?;
            let b = build_initial(second, &grid.axis_grid(1), &axis_params(params, 1)?, rng)?;
            Ok(separability::tensor_product(&a, &b)?.state)
        }
    }
}

/// Outcome of one scenario check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<"` or `">"`.
    pub relation: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: "<".into(),
            threshold,
            passed: value < threshold,
        }
    }

    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: ">".into(),
            threshold,
            passed: value > threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The run aborted; outputs written so far are kept.
    Failed,
}

/// Machine-readable run summary, written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub verdict: Verdict,
    pub failed: bool,
    pub exit_code: i32,
    pub error: Option<String>,
    /// Couplings actually used, after any `b` conversion.
    pub couplings: Couplings,
    /// The couplings section as given.
    pub couplings_input: CouplingsSpec,
    pub gamma_equivalent: f64,
    pub gamma_convention: String,
    pub grid: GridSpec,
    pub physics: PhysicsParams,
    pub stencil: StencilOrder,
    pub rng_seed: u64,
    pub final_norm: Option<f64>,
    pub e_qm_real: Option<f64>,
    pub e_qm_imag: Option<f64>,
    pub e_ft: Option<f64>,
    pub max_norm_drift: Option<f64>,
    pub max_continuity_residual: Option<f64>,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

/// Files written by a run, relative to its output directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    snapshots: bool,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn ndjson(&mut self, name: &str) -> Result<Ndjson> {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Ndjson {
            out: BufWriter::new(file),
            path,
        })
    }

    fn snapshot(&mut self, state: &HydroState, step: usize) -> Result<()> {
        if !self.snapshots {
            return Ok(());
        }
        for (field, values) in [("rho", state.density()), ("phase", state.total_phase())] {
            let base = self.dir.join("snapshots").join(format!("{field}_{step:06}"));
            let written = Snapshot::new(&state.grid, field, state.t, values)?.write(&base)?;
            let rel = written
                .strip_prefix(&self.dir)
                .unwrap_or(&written)
                .display()
                .to_string();
            self.files.push(rel);
        }
        Ok(())
    }
}

struct Ndjson {
    out: BufWriter<fs::File>,
    path: PathBuf,
}

impl Ndjson {
    fn line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value).map_err(|e| Error::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for Ndjson {
    fn drop(&mut self) {
        // Keep partial time series when a run aborts.
        let _ = self.out.flush();
    }
}

#[derive(Serialize)]
struct DiagnosticsLine<'a> {
    step: usize,
    #[serde(flatten)]
    record: &'a DiagnosticsRecord,
}

/// Scenario results before they are folded into the summary.
#[derive(Default)]
struct Outcome {
    checks: Vec<Check>,
    metrics: BTreeMap<String, f64>,
    final_state: Option<(Model, HydroState)>,
    diagnostics: Vec<DiagnosticsRecord>,
}

/// Create the output directory and confirm it accepts files.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

/// Execute a validated config, writing every output under `out_dir`.
///
/// Errors only for configuration problems found before execution starts;
/// failures during execution produce a summary with the `failed` marker.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let prepared = validate(config)?;
    prepare_output_dir(out_dir)?;
    let mut outputs = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
        snapshots: config.output.snapshots,
    };
    let result = execute(config, &prepared, &mut outputs);

    let mut summary = RunSummary {
        scenario: config.scenario.name().to_string(),
        verdict: Verdict::Pass,
        failed: false,
        exit_code: EXIT_PASS,
        error: None,
        couplings: prepared.couplings,
        couplings_input: config.couplings,
        gamma_equivalent: prepared.couplings.gamma_equivalent(),
        gamma_convention: GAMMA_CONVENTION.to_string(),
        grid: config.grid.clone(),
        physics: config.physics.clone(),
        stencil: config.stencil,
        rng_seed: config.rng_seed,
        final_norm: None,
        e_qm_real: None,
        e_qm_imag: None,
        e_ft: None,
        max_norm_drift: None,
        max_continuity_residual: None,
        checks: Vec::new(),
        metrics: BTreeMap::new(),
        outputs: Vec::new(),
        wall_time_s: 0.0,
    };
    match result {
        Ok(outcome) => {
            if let Some((model, state)) = &outcome.final_state {
                let e = observables::e_qm(model, state);
                summary.final_norm = Some(fields::norm(state));
                summary.e_qm_real = Some(e.re);
                summary.e_qm_imag = Some(e.im);
                summary.e_ft = Some(observables::e_ft(model, state));
            }
            if let Some(first) = outcome.diagnostics.first() {
                let d = &outcome.diagnostics;
                summary.max_norm_drift = Some(d.iter().fold(0.0, |m, r| m.max((r.norm - first.norm).abs())));
                summary.max_continuity_residual = Some(d.iter().fold(0.0, |m, r| m.max(r.continuity_residual)));
            }
            if outcome.checks.iter().all(|c| c.passed) {
                summary.verdict = Verdict::Pass;
            } else {
                summary.verdict = Verdict::Fail;
                summary.exit_code = EXIT_TOLERANCE;
            }
            summary.checks = outcome.checks;
            summary.metrics = outcome.metrics;
        }
        Err(e) => {
            log::error!("scenario `{}` aborted: {e}", summary.scenario);
            summary.verdict = Verdict::Failed;
            summary.failed = true;
            summary.exit_code = exit_code_for(&e);
            summary.error = Some(e.to_string());
        }
    }
    summary.wall_time_s = start.elapsed().as_secs_f64();
    outputs.path("summary.json");
    summary.outputs = outputs.files.clone();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let path = out_dir.join("summary.json");
    if let Err(e) = fs::write(&path, json) {
        log::error!("cannot write {}: {e}", path.display());
        summary.failed = true;
        summary.verdict = Verdict::Failed;
        summary.exit_code = EXIT_NUMERICAL;
    }
    Ok(summary)
}

fn execute(config: &RunConfig, prep: &Prepared, out: &mut Outputs) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let initial = match &config.initial_state {
        Some(spec) if config.scenario.needs_initial_state() => {
            Some(build_initial(spec, &prep.grid, &prep.params, &mut rng)?)
        }
        _ => None,
    };
    let integ = config.integrator.clone();
    let need = |what: &str| Error::Config(format!("missing {what}"));
    match &config.scenario {
        ScenarioSpec::Evolve { norm_tolerance } => {
            let initial = initial.ok_or_else(|| need("initial_state"))?;
            let cfg = integ.ok_or_else(|| need("integrator"))?;
            let mut outcome = evolve_recording(&prep.model, &initial, &cfg, out, |_, _, _| Ok(()))?;
            let drift = outcome.metrics["max_norm_drift"];
            outcome.checks.push(Check::below("norm_drift", drift, *norm_tolerance));
            Ok(outcome)
        }
        ScenarioSpec::LinearCompare { tolerance, oracle_dt } => {
            let initial = initial.ok_or_else(|| need("initial_state"))?;
            let cfg = integ.ok_or_else(|| need("integrator"))?;
            linear_compare(prep, &initial, &cfg, *tolerance, *oracle_dt, out)
        }
        ScenarioSpec::StationaryReport {
            level,
            tolerance,
            expect_unmodified,
            solver,
        } => stationary_scenario(prep, *level, *tolerance, *expect_unmodified, solver.unwrap_or_default(), out),
        ScenarioSpec::FiniteEnergyScan {
            family,
            lengths,
            spacing,
            expected_exponent,
            tolerance,
        } => {
            let scan = observables::finite_energy_scan(family, lengths, *spacing, &prep.params, prep.couplings)?;
            out.write("finite_energy_scan.csv", &scan.to_csv())?;
            let expected = expected_exponent.unwrap_or(match family {
                PacketFamily::SpreadingGaussian { dim, .. } => *dim as f64,
                PacketFamily::StationaryGaussian { .. } => 0.0,
            });
            let mut outcome = Outcome::default();
            outcome.metrics.insert("contribution_exponent".into(), scan.contribution_exponent);
            outcome.metrics.insert("e_ft_exponent".into(), scan.e_ft_exponent);
            outcome.metrics.insert("expected_exponent".into(), expected);
            outcome.checks.push(Check::below(
                "exponent_error",
                (scan.contribution_exponent - expected).abs(),
                *tolerance,
            ));
            Ok(outcome)
        }
        ScenarioSpec::GalileiTest { baseline_factor, .. } => {
            let initial = initial.ok_or_else(|| need("initial_state"))?;
            let cfg = integ.ok_or_else(|| need("integrator"))?;
            let spec = boost_spec(&config.scenario, &prep.grid, &prep.params)?;
            galilei(prep, &initial, &spec, &cfg, *baseline_factor, out)
        }
        ScenarioSpec::SeparabilityTest {
            cubic_strength,
            cubic_dt,
            baseline_factor,
            linear_tolerance,
            cubic_tolerance,
        } => {
            let initial = initial.ok_or_else(|| need("initial_state"))?;
            let cfg = integ.ok_or_else(|| need("integrator"))?;
            separability_scenario(
                prep,
                &initial,
                &cfg,
                SeparabilityLimits {
                    cubic_strength: *cubic_strength,
                    cubic_dt: *cubic_dt,
                    baseline_factor: *baseline_factor,
                    linear_tolerance: *linear_tolerance,
                    cubic_tolerance: *cubic_tolerance,
                },
                out,
            )
        }
        ScenarioSpec::EhrenfestTest {
            tolerance,
            linear_tolerance,
        } => {
            let initial = initial.ok_or_else(|| need("initial_state"))?;
            let cfg = integ.ok_or_else(|| need("integrator"))?;
            ehrenfest(prep, &initial, &cfg, *tolerance, *linear_tolerance, out)
        }
    }
}

/// Evolve while streaming diagnostics to NDJSON and writing snapshots;
/// `on_record` sees every diagnostics sample.
fn evolve_recording<F>(
    model: &Model,
    initial: &HydroState,
    cfg: &IntegratorConfig,
    out: &mut Outputs,
    mut on_record: F,
) -> Result<Outcome>
where
    F: FnMut(usize, &HydroState, &DiagnosticsRecord) -> Result<()>,
{
    let mut ndjson = out.ndjson("diagnostics.ndjson")?;
    let mut records = Vec::new();
    let final_state = dynamics::evolve_with(model, initial, cfg, |i, steps, s| {
        if i % cfg.snapshot_every == 0 || i == steps {
            out.snapshot(s, i)?;
        }
        if i % cfg.diagnostics_every == 0 || i == steps {
            let record = observables::diagnostics(model, s)?;
            ndjson.line(&DiagnosticsLine { step: i, record: &record })?;
            on_record(i, s, &record)?;
            records.push(record);
        }
        Ok(())
    })?;
    ndjson.finish()?;
    let n0 = records.first().map_or(0.0, |r| r.norm);
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "max_norm_drift".into(),
        records.iter().fold(0.0, |m: f64, r| m.max((r.norm - n0).abs())),
    );
    metrics.insert("final_time".into(), final_state.t);
    Ok(Outcome {
        checks: Vec::new(),
        metrics,
        final_state: Some((model.clone(), final_state)),
        diagnostics: records,
    })
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn linear_compare(
    prep: &Prepared,
    initial: &HydroState,
    cfg: &IntegratorConfig,
    tolerance: f64,
    oracle_dt: f64,
    out: &mut Outputs,
) -> Result<Outcome> {
    if !spectral::is_grid_compatible(&prep.grid, &initial.k0) {
        return Err(Error::Config(
            "linear_compare needs a background wavevector that is periodic on the grid".into(),
        ));
    }
    let mut outcome = evolve_recording(&prep.model, initial, cfg, out, |_, _, _| Ok(()))?;
    let oracle_cfg = IntegratorConfig {
        dt: Some(oracle_dt),
        snapshot_every: usize::MAX,
        diagnostics_every: usize::MAX,
        ..cfg.clone()
    };
    let reference = dynamics::linear_reference_evolve(initial, &prep.params, &oracle_cfg)?;
    let oracle = reference
        .last()
        .ok_or_else(|| Error::InvalidState("oracle produced no state".into()))?;
    let (_, hydro) = outcome.final_state.as_ref().expect("evolution sets the final state");
    let (rho_h, rho_o) = (hydro.density(), oracle.density());
    let error = linf(&rho_h, &rho_o);

    let mut csv = String::from("index,rho_hydro,rho_reference,abs_diff\n");
    for (i, (a, b)) in rho_h.iter().zip(&rho_o).enumerate() {
        csv.push_str(&format!("{i},{a},{b},{}\n", (a - b).abs()));
    }
    out.write("linear_compare.csv", &csv)?;
    outcome.metrics.insert("linf_density".into(), error);
    outcome.checks.push(Check::below("linf_density", error, tolerance));
    Ok(outcome)
}

fn stationary_scenario(
    prep: &Prepared,
    level: usize,
    tolerance: f64,
    expect_unmodified: Option<bool>,
    solver: EigenSolverConfig,
    out: &mut Outputs,
) -> Result<Outcome> {
    let c = prep.couplings;
    let model = &prep.model;
    let pair = stationary::linear_eigenstate(&prep.grid, &prep.params, level, &solver)?;
    let report = stationary::stationary_report_for(model, level, &pair)?;
    let state = pair.to_state(&prep.grid)?;
    out.snapshot(&state, 0)?;

    let pointwise: Option<Field> = if c.c2 == 0.0 && c.c3 == 0.0 {
        Some(stationary::energy_equation_residual(model, &state.amplitude, pair.energy)?)
    } else {
        None
    };
    let mut csv = String::from("index,profile,energy_equation_residual\n");
    for (i, p) in pair.profile.iter().enumerate() {
        let r = pointwise.as_ref().map_or(String::new(), |f| f[i].to_string());
        csv.push_str(&format!("{i},{p},{r}\n"));
    }
    out.write("stationary_report.csv", &csv)?;
    out.write(
        "stationary_report.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;

    let mut outcome = Outcome::default();
    let metrics = &mut outcome.metrics;
    metrics.insert("energy_linear".into(), report.energy_linear);
    metrics.insert("harmonic_residual".into(), report.harmonic_residual);
    metrics.insert("e_ft_shift".into(), report.e_ft_shift);
    metrics.insert("solver_residual".into(), report.solver_residual);
    if let Some(r) = report.residual_energy_equation {
        metrics.insert("residual_energy_equation".into(), r);
    }
    if let Some(s) = report.energy_shift_estimate {
        metrics.insert("energy_shift_estimate".into(), s);
    }

    // The energy equation decides when it applies; otherwise the harmonic
    // constraint stands in for it.
    let unmodified = expect_unmodified.unwrap_or(c.c4 == 0.0 && c.c5 == 0.0 && c.c6 == 0.0);
    let (name, value) = match report.residual_energy_equation {
        Some(r) => ("residual_energy_equation", r),
        None => ("harmonic_residual", report.harmonic_residual),
    };
    outcome.checks.push(if unmodified {
        Check::below(name, value, tolerance)
    } else {
        Check::above(name, value, tolerance)
    });
    outcome.final_state = Some((model.clone(), state));
    Ok(outcome)
}

fn galilei(
    prep: &Prepared,
    initial: &HydroState,
    spec: &BoostSpec,
    cfg: &IntegratorConfig,
    factor: f64,
    out: &mut Outputs,
) -> Result<Outcome> {
    // One step size for both runs, from the stiffer coupled system.
    let mut lab = initial.clone();
    lab.t = 0.0;
    let moving = symmetry::boost(&lab, spec, &prep.params)?;
    let bound =
        dynamics::stability_bound(&prep.model, &lab).min(dynamics::stability_bound(&prep.model, &moving));
    let dt = cfg.dt.unwrap_or(cfg.stability_factor * bound);
    let shared = cfg.clone().with_dt(dt);

    let coupled = symmetry::invariance_test(initial, spec, &prep.params, prep.couplings, &shared)?;
    let baseline = symmetry::invariance_test(initial, spec, &prep.params, Couplings::LINEAR, &shared)?;

    let mut csv = String::from("variant,deviation,density_deviation,gradient_deviation,dt,checkpoints\n");
    for (name, r) in [("coupled", &coupled), ("baseline", &baseline)] {
        csv.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            r.deviation,
            r.density_deviation,
            r.gradient_deviation,
            r.dt,
            r.checkpoints.len()
        ));
    }
    out.write("galilei_test.csv", &csv)?;

    let mut outcome = Outcome::default();
    outcome.metrics.insert("deviation".into(), coupled.deviation);
    outcome.metrics.insert("baseline_deviation".into(), baseline.deviation);
    outcome.metrics.insert("dt".into(), coupled.dt);
    outcome.metrics.insert("final_checkpoint".into(), coupled.checkpoints.last().copied().unwrap_or(0.0));
    outcome.checks.push(Check::below(
        "deviation_vs_baseline",
        coupled.deviation,
        factor * baseline.deviation,
    ));
    Ok(outcome)
}

struct SeparabilityLimits {
    cubic_strength: f64,
    cubic_dt: f64,
    baseline_factor: f64,
    linear_tolerance: f64,
    cubic_tolerance: f64,
}

fn max_correlation(samples: &[CorrelationSample]) -> f64 {
    samples.iter().fold(0.0, |m, s| m.max(s.correlation))
}

fn separability_scenario(
    prep: &Prepared,
    initial: &HydroState,
    cfg: &IntegratorConfig,
    limits: SeparabilityLimits,
    out: &mut Outputs,
) -> Result<Outcome> {
    let (g1, g2) = (prep.grid.axis_grid(0), prep.grid.axis_grid(1));
    let joint = separability::JointState::new(g1, g2, initial.clone())?;
    let (p1, p2) = (axis_params(&prep.params, 0)?, axis_params(&prep.params, 1)?);

    // Shared step so the two correlation columns sample the same times.
    let bound = dynamics::stability_bound(&prep.model, initial);
    let shared = cfg.clone().with_dt(cfg.dt.unwrap_or(cfg.stability_factor * bound));
    let coupled = separability::joint_evolve(&joint, &p1, &p2, prep.couplings, &shared)?;
    let baseline = separability::joint_evolve(&joint, &p1, &p2, Couplings::LINEAR, &shared)?;

    let mut ndjson = out.ndjson("diagnostics.ndjson")?;
    for (a, b) in coupled.samples.iter().zip(&baseline.samples) {
        ndjson.line(&serde_json::json!({
            "t": a.t,
            "correlation": a.correlation,
            "correlation_baseline": b.correlation,
            "joint_norm": a.joint_norm,
            "e_ft_joint": a.e_ft_joint,
        }))?;
    }
    ndjson.finish()?;
    let mut csv = String::from("t,correlation,correlation_baseline\n");
    for (a, b) in coupled.samples.iter().zip(&baseline.samples) {
        csv.push_str(&format!("{},{},{}\n", a.t, a.correlation, b.correlation));
    }
    out.write("separability_test.csv", &csv)?;

    let sample_every = ((cfg.t_final / limits.cubic_dt) / 100.0).ceil().max(1.0) as usize;
    let cubic = |variant| {
        separability::cubic_evolve(
            &joint,
            &prep.params,
            variant,
            limits.cubic_strength,
            cfg.t_final,
            limits.cubic_dt,
            sample_every,
        )
    };
    let marginal = cubic(CubicVariant::Marginal)?;
    let naive = cubic(CubicVariant::Joint)?;
    let mut csv = String::from("t,correlation_marginal,correlation_joint\n");
    for (a, b) in marginal.iter().zip(&naive) {
        csv.push_str(&format!("{},{},{}\n", a.t, a.correlation, b.correlation));
    }
    out.write("cubic_contrast.csv", &csv)?;

    let base_max = max_correlation(&baseline.samples);
    let coupled_max = max_correlation(&coupled.samples);
    let monotone = coupled
        .samples
        .windows(2)
        .all(|w| w[1].correlation >= w[0].correlation);
    let mut outcome = Outcome::default();
    let m = &mut outcome.metrics;
    m.insert("correlation_max".into(), coupled_max);
    m.insert("correlation_baseline_max".into(), base_max);
    m.insert("correlation_final".into(), coupled.samples.last().map_or(0.0, |s| s.correlation));
    m.insert("correlation_monotone".into(), if monotone { 1.0 } else { 0.0 });
    m.insert("cubic_marginal_max".into(), max_correlation(&marginal));
    m.insert("cubic_joint_max".into(), max_correlation(&naive));
    m.insert("dt".into(), shared.dt.unwrap_or(f64::NAN));
    outcome
        .checks
        .push(Check::below("baseline_correlation", base_max, limits.linear_tolerance));
    // A baseline at rounding level would make the contrast vacuous, so the
    // reference is never below the declared baseline tolerance.
    outcome.checks.push(Check::above(
        "correlation_exceeds_baseline",
        coupled_max,
        limits.baseline_factor * base_max.max(limits.linear_tolerance),
    ));
    outcome.checks.push(Check::below(
        "cubic_marginal_correlation",
        max_correlation(&marginal),
        limits.cubic_tolerance,
    ));
    let model = Model::new(&prep.grid, separability::joint_params(&p1, &p2)?, prep.couplings)?;
    outcome.final_state = Some((model, coupled.final_state.state));
    Ok(outcome)
}

/// Fourth-order central derivative at interior samples `2..n-2`.
fn central_derivative(values: &[f64], spacing: f64) -> Vec<f64> {
    (2..values.len().saturating_sub(2))
        .map(|i| (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) / (12.0 * spacing))
        .collect()
}

fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

struct EhrenfestSample {
    t: f64,
    position: Vec<f64>,
    momentum: Vec<f64>,
    i1: Vec<f64>,
    seam_flux: Vec<f64>,
    i2: Vec<f64>,
    force: Vec<f64>,
}

fn ehrenfest(
    prep: &Prepared,
    initial: &HydroState,
    cfg: &IntegratorConfig,
    tolerance: f64,
    linear_tolerance: f64,
    out: &mut Outputs,
) -> Result<Outcome> {
    let model = &prep.model;
    let every = cfg.diagnostics_every;
    // The periodic cut stays opposite the initial centroid so ⟨r⟩ and I₁
    // are continuous along the trajectory.
    let centre = observables::centroid(initial);
    let mut samples: Vec<EhrenfestSample> = Vec::new();
    let mut outcome = evolve_recording(model, initial, cfg, out, |i, s, r| {
        // Only the evenly spaced samples enter the differencing.
        if i % every == 0 {
            samples.push(EhrenfestSample {
                t: r.t,
                position: observables::position_about(s, &centre),
                momentum: r.momentum_mean.clone(),
                i1: observables::i1_about(model, s, &centre),
                seam_flux: observables::seam_flux_about(model, s, &centre),
                i2: r.i2.clone(),
                force: observables::mean_force(model, s)?,
            });
        }
        Ok(())
    })?;
    if samples.len() < 5 {
        return Err(Error::Config(
            "ehrenfest_test needs at least five evenly spaced diagnostics samples".into(),
        ));
    }
    let spacing = samples[1].t - samples[0].t;
    let dim = prep.grid.dim();
    let mass = prep.params.mass;
    let interior = 2..samples.len() - 2;

    let mut res_r = Vec::new();
    let mut res_p = Vec::new();
    let (mut i1, mut i2) = (Vec::new(), Vec::new());
    let mut csv = String::from("t,axis,m_dr_dt,p,i1,seam_flux,residual_r,dp_dt,force,i2,residual_p\n");
    for a in 0..dim {
        let r: Vec<f64> = samples.iter().map(|d| d.position[a]).collect();
        let p: Vec<f64> = samples.iter().map(|d| d.momentum[a]).collect();
        let dr = central_derivative(&r, spacing);
        let dp = central_derivative(&p, spacing);
        for (j, k) in interior.clone().enumerate() {
            let d = &samples[k];
            let rr = mass * dr[j] - d.momentum[a] - d.i1[a] - d.seam_flux[a];
            let rp = dp[j] + d.force[a] - d.i2[a];
            res_r.push(rr);
            res_p.push(rp);
            i1.push(d.i1[a]);
            i2.push(d.i2[a]);
            csv.push_str(&format!(
                "{},{a},{},{},{},{},{rr},{},{},{},{rp}\n",
                d.t,
                mass * dr[j],
                d.momentum[a],
                d.i1[a],
                d.seam_flux[a],
                dp[j],
                d.force[a],
                d.i2[a]
            ));
        }
    }
    out.write("ehrenfest_test.csv", &csv)?;

    let max_abs = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    let m = &mut outcome.metrics;
    m.insert("max_residual_r".into(), max_abs(&res_r));
    m.insert("max_residual_p".into(), max_abs(&res_p));
    m.insert("rms_i1".into(), rms(&i1));
    m.insert("rms_i2".into(), rms(&i2));
    let rel_r = rms(&res_r) / rms(&i1);
    let rel_p = rms(&res_p) / rms(&i2);
    m.insert("relative_rms_residual_r".into(), rel_r);
    m.insert("relative_rms_residual_p".into(), rel_p);
    m.insert("sample_spacing".into(), spacing);
    if prep.couplings.is_linear() {
        outcome.checks.push(Check::below("max_residual_r", max_abs(&res_r), linear_tolerance));
        outcome.checks.push(Check::below("max_residual_p", max_abs(&res_p), linear_tolerance));
    } else {
        outcome.checks.push(Check::below("relative_rms_residual_r", rel_r, tolerance));
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Value {
        serde_json::json!({
            "scenario": {"kind": "evolve"},
            "grid": {"points": [64], "lengths": [20.0]},
            "initial_state": {"kind": "gaussian", "sigma": 2.0},
            "integrator": {"t_final": 0.1}
        })
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = from_value(minimal()).unwrap();
        assert_eq!(cfg.physics, PhysicsParams::default());
        assert_eq!(cfg.couplings.resolve().unwrap(), Couplings::LINEAR);
        assert_eq!(cfg.stencil, StencilOrder::Fourth);
        assert_eq!(cfg.integrator.as_ref().unwrap().stability_factor, 0.5);
        assert!(cfg.output.snapshots);
        assert!(validate(&cfg).is_ok());
    }

    #[test]
    fn unknown_keys_name_the_path() {
        let mut v = minimal();
        v["integrator"]["tfinal"] = 1.0.into();
        let err = from_value(v).unwrap_err().to_string();
        assert!(err.contains("integrator") && err.contains("tfinal"), "{err}");
    }

    #[test]
    fn both_coupling_lists_conflict() {
        let mut v = minimal();
        v["couplings"] = serde_json::json!({"c": [0, 0, 0, 0, 0, 0], "b": [0, 0, 0, 0, 0, 0]});
        let err = validate(&from_value(v).unwrap()).unwrap_err().to_string();
        assert!(err.contains("mutually exclusive"), "{err}");
    }

    #[test]
    fn b_list_is_converted() {
        let mut v = minimal();
        v["couplings"] = serde_json::json!({"b": [0, 1, 0, 0, 0, 0]});
        let p = validate(&from_value(v).unwrap()).unwrap();
        assert_eq!(p.couplings.c2, -2.0);
        assert_eq!(p.couplings.c3, 2.0);
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut v = minimal();
        apply_overrides(
            &mut v,
            &[
                "integrator.t_final=0.5".into(),
                "grid.points.0=128".into(),
                "physics.hbar=2".into(),
                "initial_state.kind=plane_wave".into(),
            ],
        )
        .unwrap();
        assert_eq!(v["integrator"]["t_final"], 0.5);
        assert_eq!(v["grid"]["points"][0], 128);
        assert_eq!(v["physics"]["hbar"], 2);
        assert_eq!(v["initial_state"]["kind"], "plane_wave");
        assert!(apply_overrides(&mut v, &["grid.points.5=1".into()]).is_err());
        assert!(apply_overrides(&mut v, &["novalue".into()]).is_err());
    }

    #[test]
    fn incompatible_boost_is_a_config_error() {
        let mut v = minimal();
        v["scenario"] = serde_json::json!({"kind": "galilei_test", "velocity": [0.1]});
        let err = validate(&from_value(v).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(exit_code_for(&err), EXIT_CONFIG);
    }

    #[test]
    fn gaussian_wraps_and_normalizes() {
        let g = Grid::line(128, 20.0).unwrap();
        let spec: InitialStateSpec =
            serde_json::from_value(serde_json::json!({"kind": "gaussian", "sigma": 1.0, "center": 9.0})).unwrap();
        let s = build_initial(&spec, &g, &PhysicsParams::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((fields::norm(&s) - 1.0).abs() < 1e-12);
        // Mass at the far edge wraps onto the near edge.
        assert!(s.amplitude[1] > 1e-2);
    }

    #[test]
    fn phase_noise_is_seeded() {
        let g = Grid::line(64, 10.0).unwrap();
        let spec: InitialStateSpec = serde_json::from_value(
            serde_json::json!({"kind": "gaussian", "sigma": 1.0, "phase_noise": 0.3}),
        )
        .unwrap();
        let p = PhysicsParams::default();
        let a = build_initial(&spec, &g, &p, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = build_initial(&spec, &g, &p, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let c = build_initial(&spec, &g, &p, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.phase_residual, c.phase_residual);
    }

    #[test]
    fn central_derivative_is_exact_on_quartics() {
        let h = 0.1;
        let f: Vec<f64> = (0..9).map(|i| (i as f64 * h).powi(4)).collect();
        let d = central_derivative(&f, h);
        for (j, v) in d.iter().enumerate() {
            let t = (j + 2) as f64 * h;
            assert!((v - 4.0 * t.powi(3)).abs() < 1e-10);
        }
    }

    #[test]
    fn schema_lists_scenarios() {
        let text = schema().to_string();
        for kind in ["evolve", "linear_compare", "separability_test", "ehrenfest_test"] {
            assert!(text.contains(kind), "{kind}");
        }
    }
}
