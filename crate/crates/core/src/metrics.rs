//! End-of-season statistics, scenario comparison and the constant-dose sweep.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldTrajectory;
use crate::integrator::{self, PiecewiseConstantSignal};
use crate::model::{EnvPoint, PlantParams, PlantState};
use crate::{par, stats};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(xs: &[f64]) -> Result<Self> {
        Ok(FiveNumber {
            min: stats::percentile(xs, 0.0)?,
            q1: stats::percentile(xs, 25.0)?,
            median: stats::percentile(xs, 50.0)?,
            q3: stats::percentile(xs, 75.0)?,
            max: stats::percentile(xs, 100.0)?,
        })
    }
}

/// Equal-width bins over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BinSpec {
    /// Bins spanning the pooled range of several samples so paired
    /// histograms line up.
    pub fn pooled(samples: &[&[f64]], count: usize) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in samples.iter().flat_map(|s| s.iter()) {
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::input("cannot bin an empty sample"));
        }
        if hi == lo {
            hi = lo + 1.0;
        }
        Ok(BinSpec { count: count.max(1), lo, hi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `count + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Values outside the range go to the end bins; the last bin is closed.
    pub fn build(xs: &[f64], spec: &BinSpec) -> Self {
        let width = (spec.hi - spec.lo) / spec.count as f64;
        let edges = (0..=spec.count).map(|i| spec.lo + i as f64 * width).collect();
        let mut counts = vec![0; spec.count];
        for &x in xs {
            let k = ((x - spec.lo) / width).floor();
            let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(spec.count - 1) };
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub n_plants: usize,
    /// Mean final shoot biomass (g).
    pub mean: f64,
    /// Population variance of final shoot biomass (g²).
    pub variance: f64,
    /// Rejection threshold used (g).
    pub threshold: f64,
    pub fraction_above_threshold: f64,
    /// Sum of applied nitrogen over plants and applications (g).
    pub total_nitrogen: f64,
    /// Time integral of availability over plants (g·day).
    pub nitrogen_exposure: f64,
    pub applications_per_plant: usize,
    pub five_number: FiveNumber,
    pub histogram: Histogram,
}

impl ScenarioSummary {
    pub const CSV_HEADER: &'static str = "scenario,n_plants,mean,variance,threshold,fraction_above_threshold,total_nitrogen,nitrogen_exposure,applications_per_plant,min,q1,median,q3,max";

    pub fn csv_row(&self) -> String {
        let f = &self.five_number;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.n_plants,
            self.mean,
            self.variance,
            self.threshold,
            self.fraction_above_threshold,
            self.total_nitrogen,
            self.nitrogen_exposure,
            self.applications_per_plant,
            f.min,
            f.q1,
            f.median,
            f.q3,
            f.max
        )
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Summary of the final shoot biomass of a completed field run.
pub fn summarize(
    scenario: &str,
    traj: &FieldTrajectory,
    threshold: f64,
    bins: &BinSpec,
) -> Result<ScenarioSummary> {
    let y = &traj.final_outputs;
    if y.is_empty() {
        return Err(Error::input("cannot summarise an empty trajectory"));
    }
    let above = y.iter().filter(|&&v| v >= threshold).count();
    Ok(ScenarioSummary {
        scenario: scenario.to_string(),
        n_plants: y.len(),
        mean: stats::mean(y),
        variance: stats::population_variance(y),
        threshold,
        fraction_above_threshold: above as f64 / y.len() as f64,
        total_nitrogen: traj.total_nitrogen(),
        nitrogen_exposure: traj.nitrogen_exposure(),
        applications_per_plant: traj.ledger.first().map_or(0, Vec::len),
        five_number: FiveNumber::of(y)?,
        histogram: Histogram::build(y, bins),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub base: String,
    pub other: String,
    /// `variance(other) / variance(base)`.
    pub variance_ratio: f64,
    /// `fraction(other) - fraction(base)`.
    pub fraction_delta: f64,
    /// `total_nitrogen(other) / total_nitrogen(base)`.
    pub nitrogen_ratio: f64,
    pub exposure_ratio: f64,
    pub plant_counts_match: bool,
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str =
        "base,other,variance_ratio,fraction_delta,nitrogen_ratio,exposure_ratio,plant_counts_match";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.base,
            self.other,
            self.variance_ratio,
            self.fraction_delta,
            self.nitrogen_ratio,
            self.exposure_ratio,
            self.plant_counts_match
        )
    }
}

pub fn compare(base: &ScenarioSummary, other: &ScenarioSummary) -> ComparisonReport {
    let ratio = |a: f64, b: f64| if a == b { 1.0 } else { a / b };
    ComparisonReport {
        base: base.scenario.clone(),
        other: other.scenario.clone(),
        variance_ratio: ratio(other.variance, base.variance),
        fraction_delta: other.fraction_above_threshold - base.fraction_above_threshold,
        nitrogen_ratio: ratio(other.total_nitrogen, base.total_nitrogen),
        exposure_ratio: ratio(other.nitrogen_exposure, base.nitrogen_exposure),
        plant_counts_match: base.n_plants == other.n_plants,
    }
}

/// Final structural biomass for each parameter set (rows) and constant
/// nitrogen level (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseResponseTable {
    pub day: f64,
    pub u_grid: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl DoseResponseTable {
    /// `(row, column)` pairs where biomass drops as `u` increases.
    pub fn monotonicity_exceptions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            for j in 1..row.len() {
                if row[j] < row[j - 1] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "param_set,u,b_final")?;
        for (i, row) in self.rows.iter().enumerate() {
            for (u, b) in self.u_grid.iter().zip(row) {
                writeln!(w, "{i},{u},{b}")?;
            }
        }
        Ok(())
    }
}

/// Simulates every parameter set under every constant `u` up to `day`.
pub fn dose_response_sweep(
    param_sets: &[PlantParams],
    u_grid: &[f64],
    day: f64,
    s0: PlantState,
    env: &PiecewiseConstantSignal<EnvPoint>,
    dt: f64,
) -> Result<DoseResponseTable> {
    if u_grid.iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
        return Err(Error::config("dose grid must be nonnegative"));
    }
    if u_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("dose grid must be ascending"));
    }
    let cols = u_grid.len();
    let cells = par::map_range(param_sets.len() * cols, |k| {
        let (i, j) = (k / cols, k % cols);
        let u = PiecewiseConstantSignal::constant(u_grid[j]);
        integrator::integrate(&param_sets[i], s0, &u, env, 0.0, day, dt)
            .map(|t| t.final_state().expect("nonempty").b)
    });
    let cells = cells.into_iter().collect::<Result<Vec<f64>>>()?;
    let rows = if cols == 0 {
        vec![Vec::new(); param_sets.len()]
    } else {
        cells.chunks(cols).map(<[f64]>::to_vec).collect()
    };
    Ok(DoseResponseTable { day, u_grid: u_grid.to_vec(), rows })
}

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}
