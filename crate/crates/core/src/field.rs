//! A heterogeneous field of plants on a grid, simulated in actuation epochs.
//!
//! Between applications every plant is integrated independently (in parallel
//! when the `parallel` feature is on). At each application the controller sees
//! the whole field, which is the only synchronisation point.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{self, ActuationSchedule, ControlPolicy};
use crate::error::{Error, Result};
use crate::integrator::{self, PiecewiseConstantSignal, StepGrid, Trajectory};
use crate::model::{self, EnvPoint, PlantParams, PlantState, PARAM_NAMES};
use crate::{par, rng, stats};

/// Light level giving a mean final shoot biomass in the low 40s of grams at
/// day 50 with nominal parameters and `u = 0.075 g`.
pub const DEFAULT_LIGHT: f64 = 500.0;
pub const DEFAULT_TEMPERATURE: f64 = 22.0;
pub const DEFAULT_S0: PlantState = PlantState { b: 0.005, c: 0.001, n: 0.0001 };

/// Give up on a parameter draw after this many inadmissible samples.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub n_plants: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub nominal_params: PlantParams,
    /// Relative standard deviation of each parameter across plants.
    pub perturbation_frac: f64,
    pub seed: u64,
    pub s0: PlantState,
    pub env: PiecewiseConstantSignal<EnvPoint>,
    pub season_days: f64,
    pub dt: f64,
    /// Baseline uniform application of the uncontrolled reference field (g).
    pub u_bar: f64,
    pub rejection_percentile: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            n_plants: 100,
            grid_rows: 10,
            grid_cols: 10,
            nominal_params: PlantParams::NOMINAL,
            perturbation_frac: 0.05,
            seed: 0,
            s0: DEFAULT_S0,
            env: PiecewiseConstantSignal::constant(EnvPoint {
                temperature: DEFAULT_TEMPERATURE,
                light: DEFAULT_LIGHT,
            }),
            season_days: 50.0,
            dt: integrator::DEFAULT_DT,
            u_bar: 0.075,
            rejection_percentile: 10.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_plants == 0 {
            return Err(Error::config("n_plants must be at least 1"));
        }
        if self.grid_rows * self.grid_cols != self.n_plants {
            return Err(Error::config(format!(
                "grid {}x{} does not hold {} plants",
                self.grid_rows, self.grid_cols, self.n_plants
            )));
        }
        self.nominal_params.validate()?;
        if !(0.0..0.5).contains(&self.perturbation_frac) {
            return Err(Error::config(format!(
                "perturbation_frac = {} must be in [0, 0.5)",
                self.perturbation_frac
            )));
        }
        self.s0.validate().map_err(|e| Error::config(format!("initial state: {e}")))?;
        for env in self.env.values() {
            EnvPoint::new(env.temperature, env.light)?;
        }
        if !(self.season_days > 0.0 && self.season_days.is_finite()) {
            return Err(Error::config("season_days must be positive"));
        }
        StepGrid::new(0.0, self.season_days, self.dt)?;
        if !(self.u_bar >= 0.0 && self.u_bar.is_finite()) {
            return Err(Error::config("u_bar must be nonnegative"));
        }
        if !(0.0..=100.0).contains(&self.rejection_percentile) {
            return Err(Error::config("rejection_percentile must be in [0, 100]"));
        }
        Ok(())
    }
}

/// Draws one plant's parameters: each parameter independently from
/// `N(nominal, (frac * nominal)^2)`, redrawing inadmissible values.
pub fn sample_params(
    nominal: &PlantParams,
    frac: f64,
    seed: u64,
    plant_index: usize,
) -> Result<PlantParams> {
    if !(frac >= 0.0 && frac.is_finite()) {
        return Err(Error::config(format!("perturbation fraction must be >= 0, got {frac}")));
    }
    if frac == 0.0 {
        return Ok(*nominal);
    }
    let mut r = rng::substream(seed, rng::TAG_PARAMS, 0, plant_index as u64);
    let mut values = nominal.to_array();
    for (i, value) in values.iter_mut().enumerate() {
        let centre = *value;
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let z: f64 = StandardNormal.sample(&mut r);
            let draw = centre * (1.0 + frac * z);
            if PlantParams::admissible(i, draw) {
                accepted = Some(draw);
                break;
            }
        }
        *value = accepted.ok_or_else(|| {
            Error::config(format!(
                "could not draw an admissible {} for plant {plant_index} in {MAX_RESAMPLES} attempts",
                PARAM_NAMES[i]
            ))
        })?;
    }
    PlantParams::from_array(values)
}

/// Moore neighbourhood (no wraparound) of `plant_index` on a row-major grid.
pub fn neighbors(plant_index: usize, grid_rows: usize, grid_cols: usize) -> Result<Vec<usize>> {
    if plant_index >= grid_rows * grid_cols {
        return Err(Error::input(format!(
            "plant {plant_index} outside a {grid_rows}x{grid_cols} grid"
        )));
    }
    let (r, c) = (plant_index / grid_cols, plant_index % grid_cols);
    let mut out = Vec::with_capacity(8);
    for rr in r.saturating_sub(1)..=(r + 1).min(grid_rows - 1) {
        for cc in c.saturating_sub(1)..=(c + 1).min(grid_cols - 1) {
            if (rr, cc) != (r, c) {
                out.push(rr * grid_cols + cc);
            }
        }
    }
    Ok(out)
}

/// Neighbour lists for every plant of the grid.
pub fn grid_topology(grid_rows: usize, grid_cols: usize) -> Vec<Vec<usize>> {
    (0..grid_rows * grid_cols)
        .map(|i| neighbors(i, grid_rows, grid_cols).expect("index in range"))
        .collect()
}

/// The shoot biomass at `percentile` of the final outputs (linear interpolation).
pub fn rejection_threshold(final_outputs: &[f64], percentile: f64) -> Result<f64> {
    stats::percentile(final_outputs, percentile)
}

/// One nitrogen application to one plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Application {
    /// Day of the application.
    pub time: f64,
    /// Nitrogen made available (g), held until the next application.
    pub u: f64,
    /// Days until the next application or the end of the season.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrajectory {
    pub trajectories: Vec<Trajectory>,
    /// Applications per plant, in time order.
    pub ledger: Vec<Vec<Application>>,
    /// Realised parameters per plant.
    pub params: Vec<PlantParams>,
    pub final_outputs: Vec<f64>,
}

impl FieldTrajectory {
    pub fn n_plants(&self) -> usize {
        self.trajectories.len()
    }

    /// Sum over plants and applications of the applied `u`.
    pub fn total_nitrogen(&self) -> f64 {
        self.ledger.iter().flatten().map(|a| a.u).sum()
    }

    /// Sum over plants and applications of `u * duration` (g·day).
    pub fn nitrogen_exposure(&self) -> f64 {
        self.ledger.iter().flatten().map(|a| a.u * a.duration).sum()
    }

    /// Writes the long-format table `plant_id,t,b,c,n,y,u`, keeping every
    /// `stride`-th grid point plus the final one. `u` is the availability in
    /// force from `t` onwards (the last application at the final time).
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        writeln!(w, "plant_id,t,b,c,n,y,u")?;
        for (id, (traj, ledger)) in self.trajectories.iter().zip(&self.ledger).enumerate() {
            let last = traj.len().saturating_sub(1);
            let mut app = 0usize;
            for i in (0..traj.len()).filter(|&i| i % stride == 0 || i == last) {
                let t = traj.times[i];
                while app < ledger.len() && ledger[app].time <= t + integrator::SNAP_TOL {
                    app += 1;
                }
                let u = if app == 0 { 0.0 } else { ledger[app - 1].u };
                let s = &traj.states[i];
                writeln!(w, "{id},{t},{},{},{},{},{u}", s.b, s.c, s.n, traj.outputs[i])?;
            }
        }
        Ok(())
    }
}

struct PlantRun {
    params: PlantParams,
    state: PlantState,
    states: Vec<PlantState>,
    /// Availability in force for the current epoch.
    u: f64,
    failure: Option<Error>,
}

/// Simulates the whole field for one season under `policy`.
pub fn simulate_field(
    cfg: &FieldConfig,
    policy: &ControlPolicy,
    schedule: &ActuationSchedule,
) -> Result<FieldTrajectory> {
    cfg.validate()?;
    policy.validate()?;
    schedule.validate(cfg.dt)?;

    let grid = StepGrid::new(0.0, cfg.season_days, cfg.dt)?;
    let env_steps = cfg.env.per_step(&grid)?;
    let app_times = schedule.application_times(cfg.season_days);
    let app_steps = app_times.iter().map(|&t| grid.index_of(t)).collect::<Result<Vec<_>>>()?;
    let topology = grid_topology(cfg.grid_rows, cfg.grid_cols);

    let params = par::map_range(cfg.n_plants, |i| {
        sample_params(&cfg.nominal_params, cfg.perturbation_frac, cfg.seed, i)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut runs: Vec<PlantRun> = params
        .iter()
        .map(|&p| {
            let mut states = Vec::with_capacity(grid.n_steps + 1);
            states.push(cfg.s0);
            PlantRun { params: p, state: cfg.s0, states, u: 0.0, failure: None }
        })
        .collect();
    let mut ledger: Vec<Vec<Application>> = vec![Vec::with_capacity(app_steps.len()); cfg.n_plants];

    // Epoch boundaries: start, each application, end.
    let mut bounds = vec![0];
    bounds.extend(app_steps.iter().copied().filter(|&s| s > 0));
    bounds.push(grid.n_steps);
    bounds.dedup();

    let mut next_app = 0usize;
    for window in bounds.windows(2) {
        let (from, to) = (window[0], window[1]);
        if next_app < app_steps.len() && app_steps[next_app] == from {
            let outputs: Vec<f64> = runs.iter().map(|r| model::output(&r.state, &r.params)).collect();
            let observed = control::observe(&outputs, policy.noise_frac, cfg.seed, next_app as u64);
            let u = policy.decide(&observed, &topology)?;
            let duration = grid.time(to) - grid.time(from);
            for ((run, plant_ledger), &ui) in runs.iter_mut().zip(ledger.iter_mut()).zip(&u) {
                run.u = ui;
                plant_ledger.push(Application { time: app_times[next_app], u: ui, duration });
            }
            next_app += 1;
        }

        let env_slice = &env_steps[from..to];
        par::for_each_mut(&mut runs, |run| {
            if run.failure.is_some() {
                return;
            }
            let inputs = env_slice.iter().map(|e| (run.u, *e));
            match integrator::advance(&run.params, run.state, cfg.dt, inputs, &mut run.states) {
                Ok(s) => run.state = s,
                Err(e) => run.failure = Some(e),
            }
        });
        if let Some(i) = runs.iter().position(|r| r.failure.is_some()) {
            let e = runs.swap_remove(i).failure.expect("checked");
            return Err(e);
        }
    }

    let times: Vec<f64> = (0..=grid.n_steps).map(|i| grid.time(i)).collect();
    let mut trajectories = Vec::with_capacity(cfg.n_plants);
    let mut final_outputs = Vec::with_capacity(cfg.n_plants);
    for run in runs {
        let outputs: Vec<f64> = run.states.iter().map(|s| model::output(s, &run.params)).collect();
        final_outputs.push(*outputs.last().expect("nonempty trajectory"));
        trajectories.push(Trajectory { times: times.clone(), states: run.states, outputs });
    }
    Ok(FieldTrajectory { trajectories, ledger, params, final_outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{PolicyKind, SaturationSpec};

    fn small_cfg() -> FieldConfig {
        FieldConfig {
            n_plants: 9,
            grid_rows: 3,
            grid_cols: 3,
            season_days: 10.0,
            seed: 3,
            dt: 0.01,
            ..FieldConfig::default()
        }
    }

    #[test]
    fn neighbor_counts() {
        assert_eq!(neighbors(0, 10, 10).unwrap(), vec![1, 10, 11]);
        assert_eq!(neighbors(55, 10, 10).unwrap().len(), 8);
        assert_eq!(neighbors(5, 10, 10).unwrap().len(), 5);
        assert_eq!(neighbors(99, 10, 10).unwrap().len(), 3);
        assert!(neighbors(100, 10, 10).is_err());
        assert_eq!(neighbors(0, 1, 1).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn neighbors_are_symmetric() {
        let topo = grid_topology(4, 7);
        for (i, nb) in topo.iter().enumerate() {
            for &j in nb {
                assert!(topo[j].contains(&i));
            }
        }
    }

    #[test]
    fn zero_perturbation_copies_nominal() {
        let p = sample_params(&PlantParams::NOMINAL, 0.0, 1, 5).unwrap();
        assert_eq!(p, PlantParams::NOMINAL);
        let a = sample_params(&PlantParams::NOMINAL, 0.05, 1, 5).unwrap();
        let b = sample_params(&PlantParams::NOMINAL, 0.05, 1, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_params(&PlantParams::NOMINAL, 0.05, 1, 6).unwrap());
    }

    #[test]
    fn sampled_means_track_nominal() {
        let nominal = PlantParams::NOMINAL.to_array();
        let mut sums = [0.0; 12];
        let n = 10_000;
        for i in 0..n {
            let p = sample_params(&PlantParams::NOMINAL, 0.05, 42, i).unwrap().to_array();
            for k in 0..12 {
                sums[k] += p[k];
            }
        }
        for k in 0..12 {
            let mean = sums[k] / n as f64;
            assert!((mean / nominal[k] - 1.0).abs() < 0.01, "{}: {mean}", PARAM_NAMES[k]);
        }
    }

    #[test]
    fn large_perturbation_stays_admissible() {
        for i in 0..500 {
            let p = sample_params(&PlantParams::NOMINAL, 0.45, 9, i).unwrap();
            assert!(p.validate().is_ok());
        }
    }

    #[test]
    fn rejection_threshold_examples() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((rejection_threshold(&xs, 10.0).unwrap() - 10.9).abs() < 1e-12);
        assert_eq!(rejection_threshold(&xs, 0.0).unwrap(), 1.0);
        assert!(rejection_threshold(&[], 10.0).is_err());
    }

    #[test]
    fn homogeneous_field_is_uniform_and_ledger_adds_up() {
        let cfg = FieldConfig { perturbation_frac: 0.0, ..small_cfg() };
        let traj = simulate_field(&cfg, &ControlPolicy::constant(0.075), &ActuationSchedule::daily()).unwrap();
        assert!(traj.final_outputs.iter().all(|&y| y == traj.final_outputs[0]));
        assert_eq!(traj.ledger[0].len(), 10);
        let expected: f64 = (0..9 * 10).map(|_| 0.075).sum();
        assert_eq!(traj.total_nitrogen(), expected);
        assert!((traj.nitrogen_exposure() - 9.0 * 0.075 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn trajectories_share_grid_and_respect_floor() {
        let traj = simulate_field(&small_cfg(), &ControlPolicy::constant(0.075), &ActuationSchedule::every(3.0))
            .unwrap();
        let times = &traj.trajectories[0].times;
        assert_eq!(times.len(), 1001);
        for t in &traj.trajectories {
            assert_eq!(&t.times, times);
            assert!(t.states.iter().all(|s| s.b >= model::B_EPS && s.c >= 0.0 && s.n >= 0.0));
        }
        let ledger_times: Vec<f64> = traj.ledger[0].iter().map(|a| a.time).collect();
        assert_eq!(ledger_times, vec![0.0, 3.0, 6.0, 9.0]);
        assert_eq!(traj.ledger[0][3].duration, 1.0);
    }

    #[test]
    fn delayed_first_application_starts_without_nitrogen() {
        let schedule = ActuationSchedule { interval_days: 5.0, first_application_day: 2.0 };
        let traj = simulate_field(&small_cfg(), &ControlPolicy::constant(0.075), &schedule).unwrap();
        assert_eq!(traj.ledger[0].len(), 2);
        let n_at_2 = traj.trajectories[0].states[200].n;
        assert!(n_at_2 < DEFAULT_S0.n);
    }

    #[test]
    fn controlled_inputs_stay_in_band() {
        let policy = ControlPolicy {
            kind: PolicyKind::LocalProportional,
            gain: 0.05,
            saturation: SaturationSpec { u_bar: 0.075, u_range: 0.0075 },
            noise_frac: 0.1,
        };
        let traj = simulate_field(&small_cfg(), &policy, &ActuationSchedule::daily()).unwrap();
        for a in traj.ledger.iter().flatten() {
            assert!(a.u >= 0.0675 - 1e-15 && a.u <= 0.0825 + 1e-15);
        }
    }

    #[test]
    fn csv_export_shape() {
        let traj = simulate_field(&small_cfg(), &ControlPolicy::constant(0.075), &ActuationSchedule::daily()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, 100).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "plant_id,t,b,c,n,y,u");
        assert_eq!(lines.len(), 1 + 9 * 11);
        assert!(lines[1].starts_with("0,0,0.005,"));
        assert!(lines[1].ends_with(",0.075"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.grid_cols = 4;
        assert!(simulate_field(&cfg, &ControlPolicy::constant(0.075), &ActuationSchedule::daily()).is_err());
        let cfg = FieldConfig { perturbation_frac: 0.5, ..small_cfg() };
        assert!(cfg.validate().is_err());
        let cfg = FieldConfig { dt: 0.3, ..small_cfg() };
        assert!(cfg.validate().is_err());
        let cfg = small_cfg();
        let bad_schedule = ActuationSchedule::every(0.015);
        assert!(simulate_field(&cfg, &ControlPolicy::constant(0.075), &bad_schedule).is_err());
    }
}
