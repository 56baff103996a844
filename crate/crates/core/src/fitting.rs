//! Parameter estimation from sparse shoot-biomass timeseries.
//!
//! The objective is the mean squared residual between the simulated shoot
//! biomass and dry-mass observations. It is minimised over the free
//! parameters in log space with a projected limited-memory BFGS method and
//! central finite-difference gradients, so box constraints are honoured at
//! every iterate.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, DEFAULT_LIGHT, DEFAULT_S0, DEFAULT_TEMPERATURE};
use crate::integrator::{self, PiecewiseConstantSignal, StepGrid};
use crate::model::{self, EnvPoint, PlantParams, PlantState, PARAM_NAMES, PSI_INDEX};
use crate::{par, rng};

/// Fresh-to-dry mass conversion factor.
pub const FRESH_TO_DRY: f64 = 0.1;

pub const MIN_OBSERVATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassKind {
    Fresh,
    Dry,
}

impl std::str::FromStr for MassKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fresh" | "wet" => Ok(MassKind::Fresh),
            "dry" => Ok(MassKind::Dry),
            other => Err(Error::input(format!("unknown mass kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for MassKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MassKind::Fresh => "fresh",
            MassKind::Dry => "dry",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomassTimeseries {
    pub plant_id: String,
    pub times: Vec<f64>,
    pub masses: Vec<f64>,
    pub kind: MassKind,
}

impl BiomassTimeseries {
    pub fn new(plant_id: impl Into<String>, times: Vec<f64>, masses: Vec<f64>, kind: MassKind) -> Result<Self> {
        let s = BiomassTimeseries { plant_id: plant_id.into(), times, masses, kind };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.plant_id;
        if self.times.len() != self.masses.len() {
            return Err(Error::input(format!("series {id}: times and masses differ in length")));
        }
        if self.times.len() < MIN_OBSERVATIONS {
            return Err(Error::input(format!(
                "series {id}: {} observations, need at least {MIN_OBSERVATIONS}",
                self.times.len()
            )));
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::input(format!("series {id}: observation days must be >= 0")));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input(format!("series {id}: days must be strictly ascending")));
        }
        if self.masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::input(format!("series {id}: masses must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Converts fresh masses to dry; dry series are returned unchanged.
pub fn to_dry(series: &BiomassTimeseries) -> BiomassTimeseries {
    match series.kind {
        MassKind::Dry => series.clone(),
        MassKind::Fresh => BiomassTimeseries {
            masses: series.masses.iter().map(|m| m * FRESH_TO_DRY).collect(),
            kind: MassKind::Dry,
            ..series.clone()
        },
    }
}

/// What to fit and under which assumed conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub initial: PlantParams,
    pub lower: [f64; 12],
    pub upper: [f64; 12],
    /// `true` keeps the parameter at its initial value.
    pub fixed: [bool; 12],
    pub env: PiecewiseConstantSignal<EnvPoint>,
    /// Assumed constant nitrogen availability (g).
    pub u: f64,
    pub s0: PlantState,
    pub dt: f64,
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an iteration falls below this.
    pub tolerance: f64,
    /// Stop when the projected log-space gradient falls below this.
    pub gradient_tolerance: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        let nominal = PlantParams::NOMINAL;
        let mut lower = nominal.to_array().map(|v| v / 5.0);
        let mut upper = nominal.to_array().map(|v| v * 5.0);
        lower[PSI_INDEX] = 0.05;
        upper[PSI_INDEX] = 0.99;
        let mut fixed = [false; 12];
        for name in ["T_op", "theta_c", "theta_n", "k"] {
            fixed[PlantParams::index_of(name).expect("known name")] = true;
        }
        FitSpec {
            initial: nominal,
            lower,
            upper,
            fixed,
            env: PiecewiseConstantSignal::constant(EnvPoint {
                temperature: DEFAULT_TEMPERATURE,
                light: DEFAULT_LIGHT,
            }),
            u: 0.075,
            s0: DEFAULT_S0,
            dt: integrator::DEFAULT_DT,
            max_iterations: 200,
            tolerance: 1e-12,
            gradient_tolerance: 1e-10,
        }
    }
}

impl FitSpec {
    /// Fixes every parameter except the named ones.
    pub fn free_only(mut self, names: &[&str]) -> Result<Self> {
        self.fixed = [true; 12];
        for name in names {
            let i = PlantParams::index_of(name)
                .ok_or_else(|| Error::config(format!("unknown parameter '{name}'")))?;
            self.fixed[i] = false;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let init = self.initial.to_array();
        for i in 0..12 {
            let (lo, hi, x) = (self.lower[i], self.upper[i], init[i]);
            let name = PARAM_NAMES[i];
            if !(lo > 0.0 && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("bounds for {name} must satisfy 0 < lower < upper")));
            }
            if i == PSI_INDEX && hi >= 1.0 {
                return Err(Error::config("upper bound for psi must be < 1"));
            }
            if !(lo <= x && x <= hi) {
                return Err(Error::config(format!("initial {name} = {x} outside [{lo}, {hi}]")));
            }
        }
        if !(self.u >= 0.0 && self.u.is_finite()) {
            return Err(Error::config("assumed u must be nonnegative"));
        }
        self.s0.validate().map_err(|e| Error::config(format!("initial state: {e}")))?;
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.tolerance >= 0.0 && self.gradient_tolerance >= 0.0) {
            return Err(Error::config("tolerances must be nonnegative"));
        }
        Ok(())
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..12).filter(|&i| !self.fixed[i]).collect()
    }
}

/// Model output minus observation at every observation time.
///
/// The model is integrated from day 0 on the `dt` grid and sampled at the grid
/// point nearest each observation.
pub fn residuals(p: &PlantParams, spec: &FitSpec, series: &BiomassTimeseries) -> Result<Vec<f64>> {
    if series.kind != MassKind::Dry {
        return Err(Error::input(format!("series {} must be converted to dry mass", series.plant_id)));
    }
    let last = series.times.last().copied().unwrap_or(0.0);
    let n_steps = ((last / spec.dt).ceil() as usize).max(1);
    let grid = StepGrid { t0: 0.0, dt: spec.dt, n_steps };
    let env_steps = spec.env.per_step(&grid)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(spec.s0);
    integrator::advance(p, spec.s0, spec.dt, env_steps.into_iter().map(|e| (spec.u, e)), &mut states)?;
    Ok(series
        .times
        .iter()
        .zip(&series.masses)
        .map(|(&t, &m)| model::output(&states[grid.nearest_index(t)], p) - m)
        .collect())
}

/// Mean squared residual (g²).
pub fn cost(p: &PlantParams, spec: &FitSpec, series: &BiomassTimeseries) -> Result<f64> {
    let r = residuals(p, spec, series)?;
    Ok(r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64)
}

/// Normaliser for NRMSE: the observed range, or the maximum for a constant series.
fn nrmse_scale(masses: &[f64]) -> Result<f64> {
    let max = masses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = masses.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if range > 0.0 {
        Ok(range)
    } else if max > 0.0 {
        Ok(max)
    } else {
        Err(Error::input("observations are identically zero; NRMSE undefined"))
    }
}

/// Root mean square of `residuals` normalised by the range of `masses`.
pub fn normalized_rmse(residuals: &[f64], masses: &[f64]) -> Result<f64> {
    if residuals.is_empty() || residuals.len() != masses.len() {
        return Err(Error::input("residuals and observations must be nonempty and equal in length"));
    }
    let ms = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    Ok(ms.sqrt() / nrmse_scale(masses)?)
}

/// Root mean squared residual normalised by the observed range.
pub fn nrmse(p: &PlantParams, spec: &FitSpec, series: &BiomassTimeseries) -> Result<f64> {
    normalized_rmse(&residuals(p, spec, series)?, &series.masses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub plant_id: String,
    pub params: PlantParams,
    /// Mean squared residual (g²).
    pub cost: f64,
    pub nrmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Objective<'a> {
    spec: &'a FitSpec,
    series: &'a BiomassTimeseries,
    free: Vec<usize>,
    base: [f64; 12],
    evaluations: usize,
}

impl Objective<'_> {
    fn params(&self, x: &[f64]) -> PlantParams {
        let mut v = self.base;
        for (&i, &xi) in self.free.iter().zip(x) {
            v[i] = xi.exp();
        }
        PlantParams::from_array_unchecked(v)
    }

    /// Cost at log-parameters `x`; failures count as +inf.
    fn value(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        match cost(&self.params(x), self.spec, self.series) {
            Ok(c) if c.is_finite() => c,
            _ => f64::INFINITY,
        }
    }

    fn gradient(&mut self, x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        const H: f64 = 1e-6;
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            let up = (x[k] + H).min(hi[k]);
            let down = (x[k] - H).max(lo[k]);
            probe[k] = up;
            let fu = self.value(&probe);
            probe[k] = down;
            let fd = self.value(&probe);
            probe[k] = x[k];
            g[k] = if up > down { (fu - fd) / (up - down) } else { 0.0 };
            if !g[k].is_finite() {
                g[k] = 0.0;
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient with components that push against an active bound zeroed.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(k, (&xk, &gk))| {
            if (xk <= lo[k] && gk > 0.0) || (xk >= hi[k] && gk < 0.0) {
                0.0
            } else {
                gk
            }
        })
        .collect()
}

const HISTORY: usize = 8;

/// Fits the free parameters of `spec` to `series`.
pub fn fit(spec: &FitSpec, series: &BiomassTimeseries) -> Result<FitResult> {
    spec.validate()?;
    series.validate()?;
    let dry = to_dry(series);
    let free = spec.free_indices();
    let lo: Vec<f64> = free.iter().map(|&i| spec.lower[i].ln()).collect();
    let hi: Vec<f64> = free.iter().map(|&i| spec.upper[i].ln()).collect();
    let init = spec.initial.to_array();
    let mut x: Vec<f64> =
        free.iter().enumerate().map(|(k, &i)| init[i].ln().clamp(lo[k], hi[k])).collect();

    let mut obj = Objective { spec, series: &dry, free: free.clone(), base: init, evaluations: 0 };
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Err(Error::Numerical(format!(
            "cost is not finite at the initial guess for series {}",
            series.plant_id
        )));
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
    let mut converged = free.is_empty();
    let mut iterations = 0;
    let mut g = if free.is_empty() { Vec::new() } else { obj.gradient(&x, &lo, &hi) };

    while !converged && iterations < spec.max_iterations {
        let pg = projected_gradient(&x, &g, &lo, &hi);
        let pg_norm = pg.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if pg_norm <= spec.gradient_tolerance {
            converged = true;
            break;
        }

        // Two-loop recursion on the projected gradient.
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qk, yk) in q.iter_mut().zip(y) {
                *qk -= a * yk;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qk, sk) in q.iter_mut().zip(s) {
                *qk += (a - b) * sk;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        for k in 0..d.len() {
            if pg[k] == 0.0 {
                d[k] = 0.0;
            }
        }
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut step = if history.is_empty() {
            let dn = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            (0.1 / dn).min(1.0)
        } else {
            1.0
        };

        // Backtracking Armijo search along the projected path.
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> =
                x.iter().zip(&d).enumerate().map(|(k, (xk, dk))| (xk + step * dk).clamp(lo[k], hi[k])).collect();
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gk, (t, xk))| gk * (t - xk)).sum();
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * decrease {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((x_new, f_new)) = accepted else {
            // No progress possible along this direction.
            converged = pg_norm <= spec.gradient_tolerance.max(1e-8 * (1.0 + f));
            break;
        };

        let g_new = obj.gradient(&x_new, &lo, &hi);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let rel = (f - f_new) / f.abs().max(f_new.abs()).max(1e-300);
        let small = f_new <= f64::MIN_POSITIVE;
        x = x_new;
        f = f_new;
        g = g_new;
        if rel <= spec.tolerance || small {
            converged = true;
        }
    }

    let params = obj.params(&x);
    let nrmse = f.sqrt() / nrmse_scale(&dry.masses)?;
    Ok(FitResult { plant_id: series.plant_id.clone(), params, cost: f, nrmse, iterations, converged })
}

/// Fits every series independently; failures are kept per series.
pub fn fit_batch(spec: &FitSpec, batch: &[BiomassTimeseries]) -> Vec<Result<FitResult>> {
    par::map(batch, |s| fit(spec, s))
}

/// Settings for the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub series_count: usize,
    pub nominal: PlantParams,
    /// Relative spread of the true parameters around `nominal`.
    pub perturbation_frac: f64,
    pub min_observations: usize,
    pub max_observations: usize,
    pub season_days: f64,
    /// Relative standard deviation of multiplicative observation noise.
    pub noise_frac: f64,
    pub kind: MassKind,
    pub seed: u64,
    pub env: PiecewiseConstantSignal<EnvPoint>,
    pub u: f64,
    pub s0: PlantState,
    pub dt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let fit = FitSpec::default();
        SyntheticSpec {
            series_count: 20,
            nominal: PlantParams::NOMINAL,
            perturbation_frac: 0.05,
            min_observations: MIN_OBSERVATIONS,
            max_observations: 12,
            season_days: 50.0,
            noise_frac: 0.0,
            kind: MassKind::Dry,
            seed: 0,
            env: fit.env,
            u: fit.u,
            s0: fit.s0,
            dt: fit.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSeries {
    pub truth: PlantParams,
    pub series: BiomassTimeseries,
}

/// Observation days for `count` samples spread over the season, on whole days.
fn observation_days(count: usize, season_days: f64) -> Vec<f64> {
    let mut days: Vec<f64> =
        (1..=count).map(|j| (season_days * j as f64 / count as f64).round()).collect();
    days.dedup();
    days
}

/// Simulates `series_count` plants and samples noisy shoot biomass from each.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSeries>> {
    if spec.min_observations < MIN_OBSERVATIONS || spec.max_observations < spec.min_observations {
        return Err(Error::config(format!(
            "observation counts must satisfy {MIN_OBSERVATIONS} <= min <= max"
        )));
    }
    if (spec.max_observations as f64) > spec.season_days {
        return Err(Error::config("more observations than whole days in the season"));
    }
    if !(spec.noise_frac >= 0.0) {
        return Err(Error::config("noise_frac must be >= 0"));
    }
    let param_seed = rng::mix(spec.seed ^ rng::TAG_SYNTH);
    let out = par::map_range(spec.series_count, |i| -> Result<SyntheticSeries> {
        let truth = field::sample_params(&spec.nominal, spec.perturbation_frac, param_seed, i)?;
        let mut r = rng::substream(spec.seed, rng::TAG_SYNTH, 1, i as u64);
        let count = r.random_range(spec.min_observations..=spec.max_observations);
        let times = observation_days(count, spec.season_days);
        let u = PiecewiseConstantSignal::constant(spec.u);
        let traj = integrator::integrate(&truth, spec.s0, &u, &spec.env, 0.0, spec.season_days, spec.dt)?;
        let grid = StepGrid::new(0.0, spec.season_days, spec.dt)?;
        let masses = times
            .iter()
            .map(|&t| {
                let y = traj.outputs[grid.nearest_index(t)];
                let z: f64 = StandardNormal.sample(&mut r);
                let dry = (y * (1.0 + spec.noise_frac * z)).max(0.0);
                match spec.kind {
                    MassKind::Dry => dry,
                    MassKind::Fresh => dry / FRESH_TO_DRY,
                }
            })
            .collect();
        let series = BiomassTimeseries::new(format!("plant-{i:04}"), times, masses, spec.kind)?;
        Ok(SyntheticSeries { truth, series })
    });
    out.into_iter().collect()
}

#[derive(Debug, Deserialize)]
struct ObservationRow {
    plant_id: String,
    day: f64,
    mass_g: f64,
    kind: String,
}

/// Reads `plant_id,day,mass_g,kind` rows, grouping by plant in order of first
/// appearance. Malformed series are returned as per-series errors; an input
/// without any data row is an error.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<(String, Result<BiomassTimeseries>)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["plant_id", "day", "mass_g", "kind"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::input(format!("missing column '{required}'")));
        }
    }
    let mut groups: Vec<(String, Vec<ObservationRow>)> = Vec::new();
    for row in rdr.deserialize::<ObservationRow>() {
        let row = row?;
        match groups.iter_mut().find(|(id, _)| *id == row.plant_id) {
            Some((_, rows)) => rows.push(row),
            None => groups.push((row.plant_id.clone(), vec![row])),
        }
    }
    if groups.is_empty() {
        return Err(Error::input("no observations in input"));
    }
    Ok(groups
        .into_iter()
        .map(|(id, rows)| {
            let parsed = (|| {
                let kind: MassKind = rows[0].kind.parse()?;
                for r in &rows {
                    if r.kind.parse::<MassKind>()? != kind {
                        return Err(Error::input(format!("series {id} mixes mass kinds")));
                    }
                }
                BiomassTimeseries::new(
                    id.clone(),
                    rows.iter().map(|r| r.day).collect(),
                    rows.iter().map(|r| r.mass_g).collect(),
                    kind,
                )
            })();
            (id, parsed)
        })
        .collect())
}

pub fn write_series_csv<W: Write>(mut w: W, series: &[BiomassTimeseries]) -> Result<()> {
    writeln!(w, "plant_id,day,mass_g,kind")?;
    for s in series {
        for (t, m) in s.times.iter().zip(&s.masses) {
            writeln!(w, "{},{t},{m},{}", s.plant_id, s.kind)?;
        }
    }
    Ok(())
}

/// One row per series: `plant_id,nrmse,cost,converged,iterations,error,<params>`.
pub fn write_fit_results_csv<W: Write>(
    mut w: W,
    results: &[(String, Result<FitResult>)],
) -> Result<()> {
    writeln!(w, "plant_id,nrmse,cost,converged,iterations,error,{}", PARAM_NAMES.join(","))?;
    for (id, res) in results {
        match res {
            Ok(r) => {
                let params: Vec<String> = r.params.to_array().iter().map(|v| v.to_string()).collect();
                writeln!(
                    w,
                    "{id},{},{},{},{},,{}",
                    r.nrmse,
                    r.cost,
                    r.converged,
                    r.iterations,
                    params.join(",")
                )?;
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                writeln!(w, "{id},,,false,0,{msg}{}", ",".repeat(12))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dry(times: &[f64], masses: &[f64]) -> BiomassTimeseries {
        BiomassTimeseries::new("t", times.to_vec(), masses.to_vec(), MassKind::Dry).unwrap()
    }

    fn self_generated(p: &PlantParams, spec: &FitSpec, days: &[f64]) -> BiomassTimeseries {
        let zeros = dry(days, &vec![0.0; days.len()]);
        let y = residuals(p, spec, &zeros).unwrap();
        dry(days, &y)
    }

    #[test]
    fn to_dry_examples() {
        let fresh = BiomassTimeseries::new("a", vec![1.0, 2.0, 3.0], vec![100.0, 200.0, 300.0], MassKind::Fresh)
            .unwrap();
        let d = to_dry(&fresh);
        assert_eq!(d.kind, MassKind::Dry);
        assert_relative_eq!(d.masses[0], 10.0);
        assert_relative_eq!(d.masses[1], 20.0);
        assert_eq!(to_dry(&d), d);
        assert_eq!(to_dry(&to_dry(&fresh)), to_dry(&fresh));
    }

    #[test]
    fn series_validation() {
        assert!(BiomassTimeseries::new("a", vec![1.0, 2.0], vec![1.0, 2.0], MassKind::Dry).is_err());
        assert!(BiomassTimeseries::new("a", vec![1.0, 1.0, 2.0], vec![1.0; 3], MassKind::Dry).is_err());
        assert!(BiomassTimeseries::new("a", vec![1.0, 2.0, 3.0], vec![1.0, -1.0, 2.0], MassKind::Dry).is_err());
    }

    #[test]
    fn residuals_self_consistent_and_shift() {
        let spec = FitSpec::default();
        let p = PlantParams::NOMINAL;
        let days = [5.0, 10.0, 20.0, 35.0, 50.0];
        let s = self_generated(&p, &spec, &days);
        let r = residuals(&p, &spec, &s).unwrap();
        assert_eq!(r.len(), days.len());
        assert!(r.iter().all(|x| x.abs() < 1e-6));
        assert!(cost(&p, &spec, &s).unwrap() < 1e-12);
        assert_eq!(nrmse(&p, &spec, &s).unwrap(), 0.0);

        let shifted = dry(&days, &s.masses.iter().map(|m| m + 1.0).collect::<Vec<_>>());
        let r2 = residuals(&p, &spec, &shifted).unwrap();
        for (a, b) in r.iter().zip(&r2) {
            assert_relative_eq!(b - a, -1.0, epsilon = 1e-9);
        }
        let fresh = BiomassTimeseries { kind: MassKind::Fresh, ..s };
        assert!(residuals(&p, &spec, &fresh).is_err());
    }

    #[test]
    fn cost_and_nrmse_toy_case() {
        // Observations offset from model output by (+1, -2, +2): residuals are
        // (-1, 2, -2), mean square 9/3 = 3.
        let spec = FitSpec::default();
        let p = PlantParams::NOMINAL;
        let days = [10.0, 30.0, 50.0];
        let exact = self_generated(&p, &spec, &days);
        let obs: Vec<f64> = exact.masses.iter().zip([1.0, -2.0, 2.0]).map(|(m, d)| m + d).collect();
        let s = dry(&days, &obs);
        let c = cost(&p, &spec, &s).unwrap();
        assert_relative_eq!(c, 3.0, max_relative = 1e-9);
        let range = obs.iter().cloned().fold(f64::MIN, f64::max) - obs.iter().cloned().fold(f64::MAX, f64::min);
        assert_relative_eq!(nrmse(&p, &spec, &s).unwrap(), 3.0_f64.sqrt() / range, max_relative = 1e-9);
    }

    #[test]
    fn nrmse_normalisation_edge_cases() {
        let constant = dry(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]);
        assert_eq!(nrmse_scale(&constant.masses).unwrap(), 2.0);
        let zero = dry(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]);
        assert!(nrmse(&PlantParams::NOMINAL, &FitSpec::default(), &zero).is_err());
    }

    #[test]
    fn exact_guess_converges_immediately() {
        let spec = FitSpec::default();
        let s = self_generated(&PlantParams::NOMINAL, &spec, &[5.0, 15.0, 25.0, 40.0, 50.0]);
        let r = fit(&spec, &s).unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2, "iterations = {}", r.iterations);
        assert!(r.cost < 1e-12);
    }

    #[test]
    fn fit_stays_in_bounds_and_never_worsens() {
        let mut spec = FitSpec::default();
        let obs = dry(&[10.0, 20.0, 30.0, 40.0, 50.0], &[80.0, 150.0, 200.0, 240.0, 260.0]);
        spec.max_iterations = 30;
        let initial = cost(&spec.initial, &spec, &obs).unwrap();
        let r = fit(&spec, &obs).unwrap();
        assert!(r.cost <= initial);
        let v = r.params.to_array();
        for i in 0..12 {
            assert!(v[i] >= spec.lower[i] * (1.0 - 1e-12) && v[i] <= spec.upper[i] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn fit_spec_validation() {
        let mut spec = FitSpec::default();
        spec.upper[PSI_INDEX] = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = FitSpec::default();
        spec.lower[0] = 2000.0;
        assert!(spec.validate().is_err());
        assert!(FitSpec::default().free_only(&["nope"]).is_err());
    }

    #[test]
    fn synthetic_generator() {
        let spec = SyntheticSpec { series_count: 6, seed: 4, ..SyntheticSpec::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let fit_spec = FitSpec::default();
        for s in &a {
            assert!((3..=12).contains(&s.series.len()));
            let r = residuals(&s.truth, &fit_spec, &s.series).unwrap();
            assert!(r.iter().all(|x| x.abs() < 1e-9));
        }
        let fresh = generate_synthetic(&SyntheticSpec { kind: MassKind::Fresh, ..spec }).unwrap();
        assert_relative_eq!(fresh[0].series.masses[0] * FRESH_TO_DRY, a[0].series.masses[0], max_relative = 1e-12);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let spec = SyntheticSpec { series_count: 3, seed: 1, ..SyntheticSpec::default() };
        let data: Vec<BiomassTimeseries> = generate_synthetic(&spec).unwrap().into_iter().map(|s| s.series).collect();
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &data).unwrap();
        let back = read_series_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for ((id, s), orig) in back.iter().zip(&data) {
            assert_eq!(id, &orig.plant_id);
            assert_eq!(s.as_ref().unwrap(), orig);
        }

        assert!(read_series_csv("plant_id,day,mass_g,kind\n".as_bytes()).is_err());
        assert!(read_series_csv("plant,day,mass_g,kind\na,1,1,dry\n".as_bytes()).is_err());
        let mixed = "plant_id,day,mass_g,kind\na,1,1,dry\na,2,2,fresh\na,3,3,dry\nb,1,1,dry\nb,2,2,dry\nb,3,3,dry\n";
        let groups = read_series_csv(mixed.as_bytes()).unwrap();
        assert!(groups[0].1.is_err());
        assert!(groups[1].1.is_ok());
    }
}
