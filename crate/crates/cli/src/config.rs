//! TOML scenario configuration.
//!
//! Every section is optional and falls back to the library defaults. Unknown
//! keys are rejected so typos surface as errors instead of silently using a
//! default.

use std::collections::BTreeMap;
use std::path::Path;

use lettuce_core::control::{ActuationSchedule, ControlPolicy, PolicyKind, SaturationSpec};
use lettuce_core::field::FieldConfig;
use lettuce_core::fitting::FitSpec;
use lettuce_core::integrator::PiecewiseConstantSignal;
use lettuce_core::metrics::DEFAULT_BINS;
use lettuce_core::model::{EnvPoint, PlantParams, PlantState, PARAM_NAMES};
use lettuce_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Overrides of the nominal plant parameters, by name.
    pub params: BTreeMap<String, f64>,
    pub field: FieldSection,
    pub env: EnvSection,
    pub control: ControlSection,
    pub schedule: ScheduleSection,
    pub output: OutputSection,
    pub fit: FitSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            params: BTreeMap::new(),
            field: FieldSection::default(),
            env: EnvSection::default(),
            control: ControlSection::default(),
            schedule: ScheduleSection::default(),
            output: OutputSection::default(),
            fit: FitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub n_plants: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub perturbation_frac: f64,
    pub seed: u64,
    pub s0: PlantState,
    pub season_days: f64,
    pub dt: f64,
    /// Uniform application of the uncontrolled reference field (g).
    pub u_bar: f64,
    pub rejection_percentile: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        let d = FieldConfig::default();
        FieldSection {
            n_plants: d.n_plants,
            grid_rows: d.grid_rows,
            grid_cols: d.grid_cols,
            perturbation_frac: d.perturbation_frac,
            seed: d.seed,
            s0: d.s0,
            season_days: d.season_days,
            dt: d.dt,
            u_bar: d.u_bar,
            rejection_percentile: d.rejection_percentile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalars {
    One(f64),
    Many(Vec<f64>),
}

/// Piecewise-constant temperature and light. With `starts` empty both values
/// must be scalars; otherwise each is a scalar or one value per start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub starts: Vec<f64>,
    pub temperature: Scalars,
    pub light: Scalars,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            starts: Vec::new(),
            temperature: Scalars::One(lettuce_core::field::DEFAULT_TEMPERATURE),
            light: Scalars::One(lettuce_core::field::DEFAULT_LIGHT),
        }
    }
}

impl EnvSection {
    pub fn signal(&self) -> Result<PiecewiseConstantSignal<EnvPoint>> {
        let starts = if self.starts.is_empty() { vec![0.0] } else { self.starts.clone() };
        let expand = |name: &str, s: &Scalars| -> Result<Vec<f64>> {
            match s {
                Scalars::One(v) => Ok(vec![*v; starts.len()]),
                Scalars::Many(v) if v.len() == starts.len() => Ok(v.clone()),
                Scalars::Many(v) => Err(Error::config(format!(
                    "env.{name} has {} values for {} starts",
                    v.len(),
                    starts.len()
                ))),
            }
        };
        let temps = expand("temperature", &self.temperature)?;
        let lights = expand("light", &self.light)?;
        let points = temps
            .into_iter()
            .zip(lights)
            .map(|(t, l)| EnvPoint::new(t, l))
            .collect::<Result<Vec<_>>>()?;
        PiecewiseConstantSignal::new(starts, points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub policy: PolicyKind,
    pub gain: f64,
    /// Centre of the controlled application range; defaults to `field.u_bar`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_bar: Option<f64>,
    pub u_range: f64,
    pub noise_frac: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            policy: PolicyKind::Constant,
            gain: ControlPolicy::DEFAULT_GAIN,
            u_bar: None,
            u_range: 0.0075,
            noise_frac: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub interval_days: f64,
    pub first_application_day: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let d = ActuationSchedule::daily();
        ScheduleSection { interval_days: d.interval_days, first_application_day: d.first_application_day }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Spacing of rows in the trajectory CSV (days); a multiple of `field.dt`.
    pub sample_interval: f64,
    pub histogram_bins: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { sample_interval: 1.0, histogram_bins: DEFAULT_BINS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Parameters to estimate; `None` keeps the library default mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free: Option<Vec<String>>,
    pub lower: BTreeMap<String, f64>,
    pub upper: BTreeMap<String, f64>,
    /// Assumed nitrogen availability; defaults to `field.u_bar`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub gradient_tolerance: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitSpec::default();
        FitSection {
            free: None,
            lower: BTreeMap::new(),
            upper: BTreeMap::new(),
            u: None,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            gradient_tolerance: d.gradient_tolerance,
        }
    }
}

fn param_index(name: &str) -> Result<usize> {
    PlantParams::index_of(name).ok_or_else(|| {
        Error::config(format!("unknown parameter '{name}' (expected one of {})", PARAM_NAMES.join(", ")))
    })
}

impl ScenarioConfig {
    /// Reads `path` (or starts from defaults) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ScenarioConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Parameters with overrides applied, without admissibility checks.
    pub fn params_unchecked(&self) -> Result<PlantParams> {
        let mut v = PlantParams::NOMINAL.to_array();
        for (name, value) in &self.params {
            v[param_index(name)?] = *value;
        }
        Ok(PlantParams::from_array_unchecked(v))
    }

    pub fn params(&self) -> Result<PlantParams> {
        let p = self.params_unchecked()?;
        p.validate().map_err(|e| Error::config(format!("params: {e}")))?;
        Ok(p)
    }

    pub fn field_config(&self) -> Result<FieldConfig> {
        let f = &self.field;
        let cfg = FieldConfig {
            n_plants: f.n_plants,
            grid_rows: f.grid_rows,
            grid_cols: f.grid_cols,
            nominal_params: self.params()?,
            perturbation_frac: f.perturbation_frac,
            seed: f.seed,
            s0: f.s0,
            env: self.env.signal()?,
            season_days: f.season_days,
            dt: f.dt,
            u_bar: f.u_bar,
            rejection_percentile: f.rejection_percentile,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn policy(&self) -> Result<ControlPolicy> {
        let c = &self.control;
        let policy = ControlPolicy {
            kind: c.policy,
            gain: c.gain,
            saturation: SaturationSpec { u_bar: c.u_bar.unwrap_or(self.field.u_bar), u_range: c.u_range },
            noise_frac: c.noise_frac,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn schedule(&self) -> Result<ActuationSchedule> {
        let s = ActuationSchedule {
            interval_days: self.schedule.interval_days,
            first_application_day: self.schedule.first_application_day,
        };
        s.validate(self.field.dt)?;
        Ok(s)
    }

    /// Rows of the trajectory CSV are written every this many integration steps.
    pub fn output_stride(&self) -> Result<usize> {
        let ratio = self.output.sample_interval / self.field.dt;
        let stride = ratio.round();
        if !(stride >= 1.0 && (ratio - stride).abs() < 1e-6) {
            return Err(Error::config("output.sample_interval must be a positive multiple of field.dt"));
        }
        Ok(stride as usize)
    }

    pub fn fit_spec(&self) -> Result<FitSpec> {
        let mut spec = FitSpec {
            initial: self.params()?,
            env: self.env.signal()?,
            u: self.fit.u.unwrap_or(self.field.u_bar),
            s0: self.field.s0,
            dt: self.field.dt,
            max_iterations: self.fit.max_iterations,
            tolerance: self.fit.tolerance,
            gradient_tolerance: self.fit.gradient_tolerance,
            ..FitSpec::default()
        };
        if let Some(free) = &self.fit.free {
            let names: Vec<&str> = free.iter().map(String::as_str).collect();
            spec = spec.free_only(&names)?;
        }
        for (name, v) in &self.fit.lower {
            spec.lower[param_index(name)?] = *v;
        }
        for (name, v) in &self.fit.upper {
            spec.upper[param_index(name)?] = *v;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every section.
    pub fn validate(&self) -> Result<()> {
        self.field_config()?;
        self.policy()?;
        self.schedule()?;
        self.output_stride()?;
        if self.output.histogram_bins == 0 {
            return Err(Error::config("output.histogram_bins must be at least 1"));
        }
        self.fit_spec()?;
        Ok(())
    }
}

/// Sets a dotted `key=value` in a TOML table. The value is parsed as TOML and
/// taken as a bare string if that fails.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override '{assignment}' has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut node = table;
    for part in parts {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override '{key}': '{part}' is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
