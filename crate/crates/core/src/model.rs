//! Plant dynamics: flux functions, the right-hand side, the output map and
//! analytic Jacobians.
//!
//! The state is `x = (b, c, n)`: structural dry biomass, carbon store and
//! nitrogen store, all in grams. Rates are per day. Temperature and light are
//! treated as time-varying parameters, nitrogen availability `u` is the only
//! control input, and the measured output is the shoot biomass `y = psi * b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical floor on structural biomass. Several fluxes divide by `b`.
pub const B_EPS: f64 = 1e-6;

/// Parameter names in canonical order, as used in config files and CSV headers.
pub const PARAM_NAMES: [&str; 12] = [
    "k", "k_l", "k_ml", "sigma_c", "sigma_n", "v", "j_c", "j_n", "psi", "T_op", "theta_c",
    "theta_n",
];

/// Index of `psi` in [`PARAM_NAMES`].
pub const PSI_INDEX: usize = 8;
/// Index of `T_op` in [`PARAM_NAMES`].
pub const T_OP_INDEX: usize = 9;

/// Parameters of a single plant.
///
/// Fields are public so the numerical kernels stay readable; every path that
/// builds parameters from external data goes through [`PlantParams::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlantParams")]
pub struct PlantParams {
    /// Structural growth rate.
    pub k: f64,
    /// Litter loss rate.
    pub k_l: f64,
    /// Litter saturation (g).
    pub k_ml: f64,
    /// Carbon assimilation rate per unit light.
    pub sigma_c: f64,
    /// Nitrogen assimilation rate.
    pub sigma_n: f64,
    /// Self-shading saturation (g).
    pub v: f64,
    /// Carbon product inhibition.
    pub j_c: f64,
    /// Nitrogen product inhibition.
    pub j_n: f64,
    /// Shoot fraction of structural biomass.
    pub psi: f64,
    /// Optimal temperature (°C).
    #[serde(rename = "T_op")]
    pub t_op: f64,
    /// Carbon consumption per unit growth.
    pub theta_c: f64,
    /// Nitrogen consumption per unit growth.
    pub theta_n: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlantParams {
    k: f64,
    k_l: f64,
    k_ml: f64,
    sigma_c: f64,
    sigma_n: f64,
    v: f64,
    j_c: f64,
    j_n: f64,
    psi: f64,
    #[serde(rename = "T_op")]
    t_op: f64,
    theta_c: f64,
    theta_n: f64,
}

impl TryFrom<RawPlantParams> for PlantParams {
    type Error = Error;

    fn try_from(r: RawPlantParams) -> Result<Self> {
        let p = PlantParams {
            k: r.k,
            k_l: r.k_l,
            k_ml: r.k_ml,
            sigma_c: r.sigma_c,
            sigma_n: r.sigma_n,
            v: r.v,
            j_c: r.j_c,
            j_n: r.j_n,
            psi: r.psi,
            t_op: r.t_op,
            theta_c: r.theta_c,
            theta_n: r.theta_n,
        };
        p.validate()?;
        Ok(p)
    }
}

impl Default for PlantParams {
    fn default() -> Self {
        Self::NOMINAL
    }
}

impl PlantParams {
    /// Fitted values of the reference "good fit" plant.
    pub const NOMINAL: PlantParams = PlantParams {
        k: 1000.0,
        k_l: 0.149,
        k_ml: 0.0221,
        sigma_c: 0.260,
        sigma_n: 70.0,
        v: 0.0620,
        j_c: 0.144,
        j_n: 0.115,
        psi: 0.718,
        t_op: 22.0,
        theta_c: 6.89e-2,
        theta_n: 5.57e-6,
    };

    /// Builds validated parameters from an array in [`PARAM_NAMES`] order.
    pub fn from_array(values: [f64; 12]) -> Result<Self> {
        let p = Self::from_array_unchecked(values);
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters without validation. Used by test harnesses that need
    /// deliberately inadmissible parameter sets.
    pub fn from_array_unchecked(v: [f64; 12]) -> Self {
        PlantParams {
            k: v[0],
            k_l: v[1],
            k_ml: v[2],
            sigma_c: v[3],
            sigma_n: v[4],
            v: v[5],
            j_c: v[6],
            j_n: v[7],
            psi: v[8],
            t_op: v[9],
            theta_c: v[10],
            theta_n: v[11],
        }
    }

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.k,
            self.k_l,
            self.k_ml,
            self.sigma_c,
            self.sigma_n,
            self.v,
            self.j_c,
            self.j_n,
            self.psi,
            self.t_op,
            self.theta_c,
            self.theta_n,
        ]
    }

    /// Position of a parameter name in [`PARAM_NAMES`].
    pub fn index_of(name: &str) -> Option<usize> {
        PARAM_NAMES.iter().position(|n| *n == name)
    }

    /// Whether `value` is admissible for the parameter at `index`.
    pub fn admissible(index: usize, value: f64) -> bool {
        if !value.is_finite() || value <= 0.0 {
            return false;
        }
        index != PSI_INDEX || value < 1.0
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (name, value)) in PARAM_NAMES.iter().zip(self.to_array()).enumerate() {
            if !Self::admissible(i, value) {
                let rule = if i == PSI_INDEX { "in (0, 1)" } else { "finite and > 0" };
                return Err(Error::config(format!("parameter {name} = {value} must be {rule}")));
            }
        }
        Ok(())
    }

    /// Row vector of the output map `y = C x`.
    pub fn output_row(&self) -> [f64; 3] {
        [self.psi, 0.0, 0.0]
    }
}

/// Compartment masses in grams of dry matter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantState {
    pub b: f64,
    pub c: f64,
    pub n: f64,
}

impl PlantState {
    pub fn new(b: f64, c: f64, n: f64) -> Result<Self> {
        let s = PlantState { b, c, n };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b.is_finite() && self.c.is_finite() && self.n.is_finite()) {
            return Err(Error::Domain(format!("non-finite state {self:?}")));
        }
        if self.b < B_EPS {
            return Err(Error::Domain(format!("b = {} below floor {B_EPS}", self.b)));
        }
        if self.c < 0.0 || self.n < 0.0 {
            return Err(Error::Domain(format!("negative store in {self:?}")));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.b, self.c, self.n]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        PlantState { b: x[0], c: x[1], n: x[2] }
    }

    /// Clamps onto the admissible region: `b >= B_EPS`, `c, n >= 0`.
    pub fn projected(self) -> Self {
        PlantState { b: self.b.max(B_EPS), c: self.c.max(0.0), n: self.n.max(0.0) }
    }
}

/// Environmental disturbance at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvPoint {
    /// Air temperature (°C).
    pub temperature: f64,
    /// Light intensity, nonnegative.
    pub light: f64,
}

impl EnvPoint {
    pub fn new(temperature: f64, light: f64) -> Result<Self> {
        if !temperature.is_finite() || !light.is_finite() || light < 0.0 {
            return Err(Error::config(format!(
                "invalid environment point T={temperature}, I={light}"
            )));
        }
        Ok(EnvPoint { temperature, light })
    }
}

fn check_floor(b: f64) -> Result<()> {
    if b >= B_EPS {
        Ok(())
    } else {
        Err(Error::Domain(format!("b = {b} below floor {B_EPS}")))
    }
}

/// Unit triangle centred on `t_op`, clamped at zero outside `(0, 2 t_op)`.
pub fn temperature_response(temperature: f64, t_op: f64) -> f64 {
    ((t_op - (t_op - temperature).abs()) / t_op).max(0.0)
}

/// Structural growth `G = k R_T (c/b)(n/b) b`.
pub fn growth_flux(s: &PlantState, temperature: f64, p: &PlantParams) -> Result<f64> {
    check_floor(s.b)?;
    let r = temperature_response(temperature, p.t_op);
    Ok(p.k * r * (s.c / s.b) * (s.n / s.b) * s.b)
}

/// Litter loss `k_l b / (1 + k_ml / b)`, extended continuously with `L(0) = 0`.
pub fn litter_loss(b: f64, p: &PlantParams) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    p.k_l * b / (1.0 + p.k_ml / b)
}

/// Carbon consumed by growth and respiration, `theta_c k R_T c`.
pub fn carbon_consumption(s: &PlantState, temperature: f64, p: &PlantParams) -> Result<f64> {
    check_floor(s.b)?;
    let r = temperature_response(temperature, p.t_op);
    Ok(p.theta_c * p.k * r * (s.c / s.b) * s.b)
}

/// Nitrogen consumed by growth, `theta_n k R_T n`.
pub fn nitrogen_consumption(s: &PlantState, temperature: f64, p: &PlantParams) -> Result<f64> {
    check_floor(s.b)?;
    let r = temperature_response(temperature, p.t_op);
    Ok(p.theta_n * p.k * r * (s.n / s.b) * s.b)
}

/// Saturating assimilation shared by photosynthesis and nitrogen uptake.
///
/// `rate * a * drive / ((1 + a/v)(1 + store/(a j)))` with `a` the assimilating
/// fraction of biomass.
#[inline]
fn assimilation(rate: f64, a: f64, drive: f64, v: f64, store: f64, j: f64) -> f64 {
    rate * a * drive / ((1.0 + a / v) * (1.0 + store / (a * j)))
}

/// Carbon assimilation through photosynthesis.
pub fn photosynthesis(s: &PlantState, light: f64, p: &PlantParams) -> Result<f64> {
    check_floor(s.b)?;
    Ok(assimilation(p.sigma_c, p.psi * s.b, light, p.v, s.c, p.j_c))
}

/// Nitrogen uptake from the soil through the root fraction.
pub fn nitrogen_uptake(s: &PlantState, u: f64, p: &PlantParams) -> Result<f64> {
    check_floor(s.b)?;
    Ok(assimilation(p.sigma_n, (1.0 - p.psi) * s.b, u, p.v, s.n, p.j_n))
}

/// All six fluxes at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluxes {
    pub growth: f64,
    pub litter: f64,
    pub carbon_consumption: f64,
    pub nitrogen_consumption: f64,
    pub photosynthesis: f64,
    pub nitrogen_uptake: f64,
}

impl Fluxes {
    pub fn evaluate(s: &PlantState, u: f64, env: &EnvPoint, p: &PlantParams) -> Result<Self> {
        Ok(Fluxes {
            growth: growth_flux(s, env.temperature, p)?,
            litter: litter_loss(s.b, p),
            carbon_consumption: carbon_consumption(s, env.temperature, p)?,
            nitrogen_consumption: nitrogen_consumption(s, env.temperature, p)?,
            photosynthesis: photosynthesis(s, env.light, p)?,
            nitrogen_uptake: nitrogen_uptake(s, u, p)?,
        })
    }

    pub fn derivative(&self) -> [f64; 3] {
        [
            self.growth - self.litter,
            self.photosynthesis - self.carbon_consumption,
            self.nitrogen_uptake - self.nitrogen_consumption,
        ]
    }
}

/// Time derivative `(db/dt, dc/dt, dn/dt)`.
pub fn rhs(s: &PlantState, u: f64, env: &EnvPoint, p: &PlantParams) -> Result<[f64; 3]> {
    Ok(Fluxes::evaluate(s, u, env, p)?.derivative())
}

/// Shoot biomass `y = psi b`.
pub fn output(s: &PlantState, p: &PlantParams) -> f64 {
    p.psi * s.b
}

/// Partial derivatives of a saturating assimilation term.
///
/// With `a = frac * b` the term equals `rate drive v j a^2 / ((v + a)(a j + store))`.
/// Returns `(d/db, d/dstore, d/ddrive)`.
fn assimilation_partials(
    rate: f64,
    frac: f64,
    b: f64,
    drive: f64,
    v: f64,
    store: f64,
    j: f64,
) -> (f64, f64, f64) {
    let a = frac * b;
    let va = v + a;
    let ajs = a * j + store;
    let scale = rate * v * j;
    let d_da = scale * drive * a * (2.0 * store * v + a * store + v * a * j) / (va * va * ajs * ajs);
    let d_dstore = -scale * drive * a * a / (va * ajs * ajs);
    let d_ddrive = scale * a * a / (va * ajs);
    (frac * d_da, d_dstore, d_ddrive)
}

/// Analytic state Jacobian `d rhs / d x`, row-major over `(b, c, n)`.
pub fn jacobian_state(
    s: &PlantState,
    u: f64,
    env: &EnvPoint,
    p: &PlantParams,
) -> Result<[[f64; 3]; 3]> {
    check_floor(s.b)?;
    let PlantState { b, c, n } = *s;
    let kr = p.k * temperature_response(env.temperature, p.t_op);

    let dg_db = -kr * c * n / (b * b);
    let dg_dc = kr * n / b;
    let dg_dn = kr * c / b;
    let dl_db = p.k_l * b * (b + 2.0 * p.k_ml) / ((b + p.k_ml) * (b + p.k_ml));

    let (dac_db, dac_dc, _) = assimilation_partials(p.sigma_c, p.psi, b, env.light, p.v, c, p.j_c);
    let (dan_db, dan_dn, _) =
        assimilation_partials(p.sigma_n, 1.0 - p.psi, b, u, p.v, n, p.j_n);

    Ok([
        [dg_db - dl_db, dg_dc, dg_dn],
        [dac_db, dac_dc - p.theta_c * kr, 0.0],
        [dan_db, 0.0, dan_dn - p.theta_n * kr],
    ])
}

/// Analytic input Jacobian `d rhs / d u`.
pub fn jacobian_input(
    s: &PlantState,
    u: f64,
    _env: &EnvPoint,
    p: &PlantParams,
) -> Result<[f64; 3]> {
    check_floor(s.b)?;
    let (_, _, dan_du) = assimilation_partials(p.sigma_n, 1.0 - p.psi, s.b, u, p.v, s.n, p.j_n);
    Ok([0.0, 0.0, dan_du])
}

/// Log-uniform sampling region for the cooperativity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBox {
    pub b: (f64, f64),
    pub c: (f64, f64),
    pub n: (f64, f64),
    pub u: (f64, f64),
}

impl Default for SamplingBox {
    fn default() -> Self {
        SamplingBox { b: (1e-4, 200.0), c: (1e-6, 10.0), n: (1e-6, 20.0), u: (1e-4, 1.0) }
    }
}

impl SamplingBox {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("b", self.b), ("c", self.c), ("n", self.n), ("u", self.u)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config(format!("sampling range for {name} must be 0 < lo <= hi")));
            }
        }
        if self.b.0 < B_EPS {
            return Err(Error::config("sampling range for b starts below the biomass floor"));
        }
        Ok(())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// One sign-condition failure found by [`check_cooperativity`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub state: PlantState,
    pub u: f64,
    /// Which entry failed, e.g. `df_b/dc` or `df_n/du`.
    pub entry: String,
    pub value: f64,
}

/// Outcome of a sampled Kamke-condition check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CooperativityReport {
    pub samples: usize,
    pub violation_count: usize,
    /// First violations found, capped at [`CooperativityReport::MAX_LISTED`].
    pub violations: Vec<Violation>,
    pub min_off_diagonal: f64,
    pub min_input_entry: f64,
    pub output_map_nonnegative: bool,
}

impl CooperativityReport {
    pub const MAX_LISTED: usize = 100;

    pub fn is_cooperative(&self) -> bool {
        self.violation_count == 0 && self.output_map_nonnegative
    }
}

const STATE_LABELS: [&str; 3] = ["b", "c", "n"];

/// Samples positive states log-uniformly and checks the sign conditions for an
/// open cooperative system: nonnegative off-diagonal state Jacobian, nonnegative
/// input Jacobian and nonnegative output map.
pub fn check_cooperativity(
    p: &PlantParams,
    env: &EnvPoint,
    sample_count: usize,
    seed: u64,
    region: &SamplingBox,
) -> Result<CooperativityReport> {
    if sample_count == 0 {
        return Err(Error::config("sample_count must be at least 1"));
    }
    region.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CooperativityReport {
        samples: sample_count,
        violation_count: 0,
        violations: Vec::new(),
        min_off_diagonal: f64::INFINITY,
        min_input_entry: f64::INFINITY,
        output_map_nonnegative: p.output_row().iter().all(|&x| x >= 0.0),
    };
    let record = |report: &mut CooperativityReport, v: Violation| {
        report.violation_count += 1;
        if report.violations.len() < CooperativityReport::MAX_LISTED {
            report.violations.push(v);
        }
    };

    for _ in 0..sample_count {
        let state = PlantState {
            b: log_uniform(&mut rng, region.b),
            c: log_uniform(&mut rng, region.c),
            n: log_uniform(&mut rng, region.n),
        };
        let u = log_uniform(&mut rng, region.u);
        let jx = jacobian_state(&state, u, env, p)?;
        let ju = jacobian_input(&state, u, env, p)?;
        for (i, row) in jx.iter().enumerate() {
            for (j, &value) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                report.min_off_diagonal = report.min_off_diagonal.min(value);
                if value < 0.0 || value.is_nan() {
                    let entry = format!("df_{}/d{}", STATE_LABELS[i], STATE_LABELS[j]);
                    record(&mut report, Violation { state, u, entry, value });
                }
            }
        }
        for (i, &value) in ju.iter().enumerate() {
            report.min_input_entry = report.min_input_entry.min(value);
            if value < 0.0 || value.is_nan() {
                let entry = format!("df_{}/du", STATE_LABELS[i]);
                record(&mut report, Violation { state, u, entry, value });
            }
        }
    }
    Ok(report)
}
