//! Scenario files (TOML), load profiles (CSV) and result output.

mod profiles;
mod results;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use profiles::{load_profiles, BusLoad, ProfileSeries, SyntheticProfile};
pub use results::{write_results, write_static_results, write_trace_csv};

use crate::bbus::{build_bbus, BbusMatrix};
use crate::error::{Error, Result};
use crate::feeder::{FeederModel, FeederSpec};
use crate::flow::{build_operating_vector_with_reactive, OperatingCondition};
use crate::ppd::{ControlConfig, HvcProblem, StepBounds};
use crate::sim::{
    validate_outage_buses, var_limits_kvar, CommModel, DelayModel, Feedback, OutageWindow,
    PlantKind, Strategy,
};

pub const SCHEMA_VERSION: u32 = 1;

/// A step size given as a number or as `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl StepSpec {
    pub const AUTO: StepSpec = StepSpec::Auto(AutoTag::Auto);
}

impl Default for StepSpec {
    fn default() -> Self {
        Self::AUTO
    }
}

/// One value for every bus, or one per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBus {
    Scalar(f64),
    Each(Vec<f64>),
}

impl PerBus {
    fn expand(&self, field: &str, n: usize) -> Result<Vec<f64>> {
        match self {
            PerBus::Scalar(x) => Ok(vec![*x; n]),
            PerBus::Each(v) if v.len() == n => Ok(v.clone()),
            PerBus::Each(v) => Err(Error::config(
                field,
                format!("expected {n} per-bus values, got {}", v.len()),
            )),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerBus::Scalar(x) => vec![*x],
            PerBus::Each(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederRef {
    /// JSON feeder file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<FeederSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub gamma: f64,
    pub alpha: StepSpec,
    pub beta: StepSpec,
    pub theta: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Fraction of the certified bounds used by `"auto"` steps.
    pub auto_fraction: f64,
    /// Keep every n-th iteration in static solve traces.
    pub record_every: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            alpha: StepSpec::AUTO,
            beta: StepSpec::AUTO,
            theta: 0.0,
            tol: ControlConfig::DEFAULT_TOL,
            max_iters: ControlConfig::DEFAULT_MAX_ITERS,
            auto_fraction: ControlConfig::AUTO_FRACTION,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommConfig {
    pub activation_prob: f64,
    pub outages: Vec<OutageWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayModel>,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            activation_prob: 1.0,
            outages: Vec::new(),
            delay: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub strategy: Strategy,
    pub feedback: Feedback,
    pub plant: PlantKind,
    pub rounds_per_timestep: usize,
    pub round_seconds: f64,
    pub timestep_seconds: f64,
    /// Defaults to the length of the profile series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,
    /// Standard deviation of Gaussian noise on voltage measurements, pu.
    pub noise_std: f64,
    /// Write per-bus `v`, `q`, `lambda` columns to the trace.
    pub record_buses: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hvc,
            feedback: Feedback::Measured,
            plant: PlantKind::Ac,
            rounds_per_timestep: 30,
            round_seconds: 2.0,
            timestep_seconds: 60.0,
            timesteps: None,
            noise_std: 0.0,
            record_buses: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileSource {
    /// The same loading at every bus and timestep.
    Constant {
        #[serde(default)]
        p_load_kw: f64,
        #[serde(default)]
        q_load_kvar: f64,
        #[serde(default)]
        p_gen_kw: f64,
        #[serde(default = "one")]
        timesteps: usize,
    },
    File {
        path: PathBuf,
    },
    Synthetic(SyntheticProfile),
}

fn one() -> usize {
    1
}

impl Default for ProfileSource {
    fn default() -> Self {
        ProfileSource::Constant {
            p_load_kw: 0.0,
            q_load_kvar: 0.0,
            p_gen_kw: 0.0,
            timesteps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct InverterConfig {
    /// Rating per bus. Without a rating the VAR output is unlimited.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating_kva: Option<PerBus>,
    /// Variance of a zero-mean Gaussian added to each rating (seeded).
    pub rating_variance: f64,
    /// Replace the rating-derived limits with `[-x, x]` pu.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_limit_pu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit_mu")]
    pub mu: PerBus,
    pub feeder: FeederRef,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub comm: CommConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub profiles: ProfileSource,
    #[serde(default)]
    pub inverters: InverterConfig,
}

fn unit_mu() -> PerBus {
    PerBus::Scalar(1.0)
}

impl ScenarioConfig {
    /// Minimal configuration around a feeder file.
    pub fn with_feeder_path(path: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            mu: unit_mu(),
            feeder: FeederRef {
                path: Some(path.into()),
                inline: None,
            },
            controller: ControllerConfig::default(),
            comm: CommConfig::default(),
            simulation: SimulationConfig::default(),
            profiles: ProfileSource::default(),
            inverters: InverterConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str, source: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: source.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidProblem(format!("cannot serialize scenario: {e}")))
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        let mut c = self.clone();
        c.simulation.strategy = strategy;
        c
    }

    /// Domain checks on every numeric field.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (this build reads {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let finite = |field: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite, got {x}")))
            }
        };
        let nonneg = |field: &str, x: f64| {
            finite(field, x)?;
            if x >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be nonnegative, got {x}")))
            }
        };
        let positive = |field: &str, x: f64| {
            finite(field, x)?;
            if x > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {x}")))
            }
        };

        for m in self.mu.values() {
            positive("mu", m)?;
        }
        match (&self.feeder.path, &self.feeder.inline) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::config("feeder", "give exactly one of `path` or `inline`")),
        }

        let c = &self.controller;
        nonneg("controller.gamma", c.gamma)?;
        for (field, s) in [("controller.alpha", c.alpha), ("controller.beta", c.beta)] {
            if let StepSpec::Value(x) = s {
                positive(field, x)?;
            }
        }
        nonneg("controller.theta", c.theta)?;
        positive("controller.tol", c.tol)?;
        if c.record_every == 0 {
            return Err(Error::config("controller.record_every", "must be positive"));
        }
        if c.max_iters == 0 {
            return Err(Error::config("controller.max_iters", "must be positive"));
        }
        positive("controller.auto_fraction", c.auto_fraction)?;
        if c.auto_fraction >= 1.0 {
            return Err(Error::config("controller.auto_fraction", "must be below 1"));
        }

        self.comm_model().validate()?;

        let s = &self.simulation;
        positive("simulation.round_seconds", s.round_seconds)?;
        positive("simulation.timestep_seconds", s.timestep_seconds)?;
        nonneg("simulation.noise_std", s.noise_std)?;

        match &self.profiles {
            ProfileSource::Constant {
                p_load_kw,
                q_load_kvar,
                p_gen_kw,
                ..
            } => {
                finite("profiles.p_load_kw", *p_load_kw)?;
                finite("profiles.q_load_kvar", *q_load_kvar)?;
                nonneg("profiles.p_gen_kw", *p_gen_kw)?;
            }
            ProfileSource::Synthetic(spec) => spec.validate()?,
            ProfileSource::File { .. } => {}
        }

        let inv = &self.inverters;
        if let Some(r) = &inv.rating_kva {
            for x in r.values() {
                nonneg("inverters.rating_kva", x)?;
            }
        }
        nonneg("inverters.rating_variance", inv.rating_variance)?;
        if let Some(x) = inv.q_limit_pu {
            nonneg("inverters.q_limit_pu", x)?;
        }
        Ok(())
    }

    pub fn comm_model(&self) -> CommModel {
        CommModel {
            activation_prob: self.comm.activation_prob,
            outages: self.comm.outages.clone(),
            delay: self.comm.delay.clone(),
            seed: self.seed,
        }
    }
}

/// Per-unit loading of one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Loading {
    /// Net active injection `p_gen - p_load`.
    pub p_net: Vec<f64>,
    /// Uncontrolled reactive injection `-q_load`.
    pub q_fixed: Vec<f64>,
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    /// LinDistFlow operating condition for this loading.
    pub w: OperatingCondition,
    pub headroom_kvar: f64,
}

/// A validated scenario with every reference resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub feeder: Arc<FeederModel>,
    pub bbus: Arc<BbusMatrix>,
    pub mu: Vec<f64>,
    pub gamma: f64,
    pub control: ControlConfig,
    /// Certified bounds; `None` when `gamma == 0`.
    pub step_bounds: Option<StepBounds>,
    /// An explicit step size exceeds its certified bound.
    pub step_warning: bool,
    pub comm: CommModel,
    pub profiles: ProfileSeries,
    /// `None` means unlimited VAR.
    pub ratings_kva: Option<Vec<f64>>,
    pub timesteps: usize,
}

/// Read, validate and resolve a scenario file. Relative paths inside it are
/// taken relative to the file's directory.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = ScenarioConfig::from_toml_str(&text, path)?;
    Scenario::resolve(cfg, path.parent().unwrap_or(Path::new(".")))
}

/// Read and validate a scenario file without resolving it.
pub fn read_scenario_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml_str(&text, path)
}

impl Scenario {
    pub fn resolve(config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let spec = match (&config.feeder.path, &config.feeder.inline) {
            (Some(p), _) => FeederSpec::from_json_file(&base_dir.join(p))?,
            (None, Some(s)) => s.clone(),
            (None, None) => unreachable!("validated"),
        };
        let feeder = FeederModel::from_spec(&spec)?;
        feeder.tree()?;
        let n = feeder.n_controllable();
        let bbus = Arc::new(build_bbus(&feeder)?);
        let comm = config.comm_model();
        validate_outage_buses(&comm, &feeder)?;

        let mu = config.mu.expand("mu", n)?;
        let c = &config.controller;
        let gamma = c.gamma;
        let step_bounds = (gamma > 0.0)
            .then(|| crate::ppd::stepsize_bounds(bbus.eta_tilde(), bbus.l_tilde(), gamma));
        let auto_err = || Error::config("controller", "\"auto\" step sizes need gamma > 0");
        let alpha = match c.alpha {
            StepSpec::Value(x) => x,
            StepSpec::Auto(_) => c.auto_fraction * step_bounds.ok_or_else(auto_err)?.alpha_max,
        };
        let beta = match c.beta {
            StepSpec::Value(x) => x,
            StepSpec::Auto(_) => c.auto_fraction * step_bounds.ok_or_else(auto_err)?.beta_max,
        };
        let step_warning = step_bounds.is_some_and(|b| alpha >= b.alpha_max || beta >= b.beta_max);
        let control = ControlConfig::new(alpha, beta)?
            .with_theta(c.theta)?
            .with_tol(c.tol)?
            .with_max_iters(c.max_iters)
            .with_record_every(c.record_every);

        let ratings_kva = match &config.inverters.rating_kva {
            None => None,
            Some(r) => {
                let mut base = r.expand("inverters.rating_kva", n)?;
                let var = config.inverters.rating_variance;
                if var > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(1);
                    let d = Normal::new(0.0, var.sqrt()).map_err(|e| Error::config("inverters.rating_variance", e.to_string()))?;
                    for x in &mut base {
                        *x = (*x + d.sample(&mut rng)).max(0.0);
                    }
                }
                Some(base)
            }
        };

        let profiles = match &config.profiles {
            ProfileSource::Constant {
                p_load_kw,
                q_load_kvar,
                p_gen_kw,
                timesteps,
            } => ProfileSeries::constant(
                n,
                *timesteps,
                BusLoad {
                    p_load_kw: *p_load_kw,
                    q_load_kvar: *q_load_kvar,
                    p_gen_kw: *p_gen_kw,
                },
            )?,
            ProfileSource::File { path } => load_profiles(&base_dir.join(path))?,
            ProfileSource::Synthetic(spec) => {
                spec.generate(n, ratings_kva.as_deref(), &mut profiles::profile_rng(config.seed))?
            }
        };
        if profiles.n_buses() != n {
            return Err(Error::DimensionMismatch {
                what: "profile buses",
                expected: n,
                got: profiles.n_buses(),
            });
        }
        let timesteps = config.simulation.timesteps.unwrap_or(profiles.len());
        if timesteps == 0 || timesteps > profiles.len() {
            return Err(Error::config(
                "simulation.timesteps",
                format!("need 1..={} timesteps, got {timesteps}", profiles.len()),
            ));
        }

        Ok(Self {
            comm,
            feeder: Arc::new(feeder),
            bbus,
            mu,
            gamma,
            control,
            step_bounds,
            step_warning,
            profiles,
            ratings_kva,
            timesteps,
            config,
        })
    }

    pub fn n(&self) -> usize {
        self.bbus.n()
    }

    /// Per-unit loading, VAR limits and operating condition at timestep `t`.
    pub fn loading_at(&self, t: usize) -> Result<Loading> {
        if t >= self.profiles.len() {
            return Err(Error::config(
                "timestep",
                format!("{t} is outside the profile range 0..{}", self.profiles.len()),
            ));
        }
        let bases = self.feeder.bases();
        let row = self.profiles.at(t);
        let n = self.n();
        let mut p_net = Vec::with_capacity(n);
        let mut q_fixed = Vec::with_capacity(n);
        let mut q_lo = Vec::with_capacity(n);
        let mut q_hi = Vec::with_capacity(n);
        let mut headroom_kvar = 0.0;
        for (j, l) in row.iter().enumerate() {
            p_net.push(bases.kw_to_pu(l.p_gen_kw - l.p_load_kw));
            q_fixed.push(bases.kw_to_pu(-l.q_load_kvar));
            let (lo, hi) = match (&self.ratings_kva, self.config.inverters.q_limit_pu) {
                (_, Some(x)) => {
                    headroom_kvar += bases.pu_to_kw(x);
                    (-x, x)
                }
                (Some(r), None) => {
                    let (lo, hi) = var_limits_kvar(r[j], l.p_gen_kw)?;
                    headroom_kvar += hi;
                    (bases.kw_to_pu(lo), bases.kw_to_pu(hi))
                }
                (None, None) => {
                    headroom_kvar = f64::INFINITY;
                    (f64::NEG_INFINITY, f64::INFINITY)
                }
            };
            q_lo.push(lo);
            q_hi.push(hi);
        }
        let w = build_operating_vector_with_reactive(&self.feeder, &p_net, &q_fixed, self.feeder.v0())?;
        Ok(Loading {
            p_net,
            q_fixed,
            q_lo,
            q_hi,
            w,
            headroom_kvar,
        })
    }

    pub fn problem_for(&self, load: &Loading) -> Result<HvcProblem> {
        HvcProblem::new(
            self.bbus.clone(),
            load.w.clone(),
            self.mu.clone(),
            self.gamma,
            load.q_lo.clone(),
            load.q_hi.clone(),
        )
    }

    /// Static HVC problem of timestep `t`.
    pub fn problem_at(&self, t: usize) -> Result<HvcProblem> {
        self.problem_for(&self.loading_at(t)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FEEDER: &str = r#"{"buses":[{"id":0},{"id":1}],"lines":[{"from":0,"to":1,"r_pu":0.05,"x_pu":0.1}]}"#;

    fn inline_config() -> ScenarioConfig {
        let mut c = ScenarioConfig::with_feeder_path("unused.json");
        c.feeder = FeederRef {
            path: None,
            inline: Some(FeederSpec::from_json_str(FEEDER).unwrap()),
        };
        c
    }

    #[test]
    fn minimal_defaults() {
        let text = "schema_version = 1\n[feeder]\npath = \"f.json\"\n";
        let c = ScenarioConfig::from_toml_str(text, Path::new("s.toml")).unwrap();
        assert_eq!(c.controller.gamma, 0.5);
        assert_eq!(c.controller.alpha, StepSpec::AUTO);
        assert_eq!(c.mu, PerBus::Scalar(1.0));
    }

    #[test]
    fn auto_steps_resolve() {
        let s = Scenario::resolve(inline_config(), Path::new(".")).unwrap();
        let b = s.step_bounds.unwrap();
        assert_eq!(s.control.alpha, 0.5 * b.alpha_max);
        assert_eq!(s.control.beta, 0.5 * b.beta_max);
        assert!(!s.step_warning);
    }

    #[test]
    fn oversized_alpha_warns() {
        let mut c = inline_config();
        c.controller.alpha = StepSpec::Value(1e3);
        let s = Scenario::resolve(c, Path::new(".")).unwrap();
        assert!(s.step_warning);
    }

    #[test]
    fn auto_with_zero_gamma_rejected() {
        let mut c = inline_config();
        c.controller.gamma = 0.0;
        assert!(Scenario::resolve(c, Path::new(".")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = inline_config();
        c.controller.beta = StepSpec::Value(0.0025);
        c.mu = PerBus::Each(vec![1.01]);
        c.comm.outages.push(OutageWindow {
            start_round: 3,
            end_round: 9,
            buses: crate::sim::OutageScope::all(),
        });
        c.profiles = ProfileSource::Synthetic(SyntheticProfile::default());
        c.inverters.rating_kva = Some(PerBus::Scalar(70.0));
        let text = c.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let text = "schema_version = 1\n[feeder]\npath = \"f.json\"\n[controller]\ngama = 0.5\n";
        let err = ScenarioConfig::from_toml_str(text, Path::new("s.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gama") && msg.contains("line"), "{msg}");

        let text = "schema_version = 1\n[feeder]\npath = \"f.json\"\n[controller]\ntol = -1.0\n";
        let err = ScenarioConfig::from_toml_str(text, Path::new("s.toml")).unwrap_err();
        assert!(err.to_string().contains("controller.tol"));
    }

    #[test]
    fn missing_feeder_file_named() {
        let c = ScenarioConfig::with_feeder_path("does/not/exist.json");
        let err = Scenario::resolve(c, Path::new("/tmp")).unwrap_err();
        assert!(err.to_string().contains("does/not/exist.json"), "{err}");
    }
}
