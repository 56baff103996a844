//! Fixed-step classical Runge-Kutta integration of a single plant under
//! piecewise-constant inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, EnvPoint, PlantParams, PlantState};

/// Default step in days. At nominal parameters the carbon store relaxes at
/// roughly 69/day; above this step the RK4 map stops preserving the order of
/// trajectories during early transients, and much above it loses stability.
pub const DEFAULT_DT: f64 = 0.005;

/// Maximum distance (days) between a breakpoint and the step grid.
pub const SNAP_TOL: f64 = 1e-9;

/// A signal that holds `values[i]` on `[starts[i], starts[i + 1])`.
///
/// The last value extends to infinity and the first value also covers times
/// before `starts[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantSignal<T> {
    starts: Vec<f64>,
    values: Vec<T>,
}

impl<T: Copy> PiecewiseConstantSignal<T> {
    pub fn new(starts: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::config("signal needs at least one interval"));
        }
        if starts.len() != values.len() {
            return Err(Error::config(format!(
                "signal has {} breakpoints but {} values",
                starts.len(),
                values.len()
            )));
        }
        if starts.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("signal breakpoints must be finite"));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("signal breakpoints must be strictly ascending"));
        }
        Ok(PiecewiseConstantSignal { starts, values })
    }

    pub fn constant(value: T) -> Self {
        PiecewiseConstantSignal { starts: vec![0.0], values: vec![value] }
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value at time `t` (right-open intervals).
    pub fn at(&self, t: f64) -> T {
        let idx = self.starts.partition_point(|&s| s <= t);
        self.values[idx.saturating_sub(1)]
    }

    /// Value for each step of `grid`, with breakpoints snapped onto the grid.
    pub fn per_step(&self, grid: &StepGrid) -> Result<Vec<T>> {
        let mut switch = Vec::with_capacity(self.starts.len());
        for &s in &self.starts {
            if s <= grid.t0 {
                switch.push(0);
            } else if s >= grid.end() {
                switch.push(grid.n_steps);
            } else {
                switch.push(grid.index_of(s)?);
            }
        }
        let mut out = Vec::with_capacity(grid.n_steps);
        let mut current = 0;
        for i in 0..grid.n_steps {
            while current + 1 < switch.len() && switch[current + 1] <= i {
                current += 1;
            }
            out.push(self.values[current]);
        }
        Ok(out)
    }
}

/// Uniform time grid `t0, t0 + dt, ..., t0 + n_steps dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl StepGrid {
    pub fn new(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {dt}")));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::config(format!("need t1 > t0, got [{t0}, {t1}]")));
        }
        let n_steps = ((t1 - t0) / dt).round() as usize;
        let grid = StepGrid { t0, dt, n_steps };
        if n_steps == 0 || (grid.time(n_steps) - t1).abs() > SNAP_TOL {
            return Err(Error::config(format!(
                "interval [{t0}, {t1}] is not a multiple of dt = {dt}"
            )));
        }
        Ok(grid)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Grid index of `t`, which must lie on the grid within [`SNAP_TOL`].
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k as usize > self.n_steps || (self.time(k as usize) - t).abs() > SNAP_TOL {
            return Err(Error::config(format!(
                "time {t} is not on the step grid (t0 = {}, dt = {})",
                self.t0, self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_steps)
        }
    }
}

/// Sampled solution of one plant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PlantState>,
    pub outputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&PlantState> {
        self.states.last()
    }

    pub fn final_output(&self) -> Option<f64> {
        self.outputs.last().copied()
    }
}

fn add_scaled(s: &PlantState, k: &[f64; 3], h: f64) -> PlantState {
    PlantState { b: s.b + h * k[0], c: s.c + h * k[1], n: s.n + h * k[2] }.projected()
}

/// One classical RK4 step followed by projection onto the admissible region.
///
/// Stage states are projected as well so the flux functions are always
/// evaluated inside their domain; for states away from the boundary this is
/// the textbook scheme.
pub fn rk4_step(
    p: &PlantParams,
    s: &PlantState,
    u: f64,
    env: &EnvPoint,
    dt: f64,
) -> Result<PlantState> {
    let k1 = model::rhs(s, u, env, p)?;
    let k2 = model::rhs(&add_scaled(s, &k1, 0.5 * dt), u, env, p)?;
    let k3 = model::rhs(&add_scaled(s, &k2, 0.5 * dt), u, env, p)?;
    let k4 = model::rhs(&add_scaled(s, &k3, dt), u, env, p)?;
    let next = PlantState {
        b: s.b + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        c: s.c + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        n: s.n + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    };
    if !(next.b.is_finite() && next.c.is_finite() && next.n.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite state after RK4 step of {dt} day from {s:?}; reduce dt"
        )));
    }
    Ok(next.projected())
}

/// Advances `s` through consecutive steps with per-step `(u, env)` inputs,
/// appending each new state to `out`. Returns the final state.
pub fn advance<I>(
    p: &PlantParams,
    s: PlantState,
    dt: f64,
    inputs: I,
    out: &mut Vec<PlantState>,
) -> Result<PlantState>
where
    I: IntoIterator<Item = (f64, EnvPoint)>,
{
    let mut state = s;
    for (u, env) in inputs {
        state = rk4_step(p, &state, u, &env, dt)?;
        out.push(state);
    }
    Ok(state)
}

/// Integrates one plant from `t0` to `t1` with fixed step `dt`.
///
/// Breakpoints of both signals must fall on the step grid (within
/// [`SNAP_TOL`]) so that inputs switch exactly at step boundaries. The
/// trajectory is sampled at every grid point including `t0`.
pub fn integrate(
    p: &PlantParams,
    s0: PlantState,
    u_sig: &PiecewiseConstantSignal<f64>,
    env_sig: &PiecewiseConstantSignal<EnvPoint>,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory> {
    let grid = StepGrid::new(t0, t1, dt)?;
    s0.validate()?;
    if u_sig.values().iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
        return Err(Error::config("nitrogen input must be finite and nonnegative"));
    }
    let u_steps = u_sig.per_step(&grid)?;
    let env_steps = env_sig.per_step(&grid)?;

    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(s0);
    advance(p, s0, dt, u_steps.into_iter().zip(env_steps), &mut states)?;

    let times = (0..=grid.n_steps).map(|i| grid.time(i)).collect();
    let outputs = states.iter().map(|s| model::output(s, p)).collect();
    Ok(Trajectory { times, states, outputs })
}
