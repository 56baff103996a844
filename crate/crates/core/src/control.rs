//! Nitrogen application policies: uniform, global proportional and
//! neighbourhood proportional feedback with symmetric saturation, plus the
//! noisy observation model and actuation schedules.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Baseline application and the half-width of the admissible band around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationSpec {
    /// Baseline nitrogen availability per application (g).
    pub u_bar: f64,
    /// Maximum deviation from the baseline (g).
    pub u_range: f64,
}

impl SaturationSpec {
    pub fn new(u_bar: f64, u_range: f64) -> Result<Self> {
        let spec = SaturationSpec { u_bar, u_range };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_bar.is_finite() && self.u_range.is_finite()) {
            return Err(Error::config("saturation bounds must be finite"));
        }
        if !(0.0 <= self.u_range && self.u_range <= self.u_bar) {
            return Err(Error::config(format!(
                "need 0 <= u_range <= u_bar, got u_range = {}, u_bar = {}",
                self.u_range, self.u_bar
            )));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.u_bar - self.u_range
    }

    pub fn upper(&self) -> f64 {
        self.u_bar + self.u_range
    }
}

/// Symmetric piecewise-linear saturation `clamp(x, -u_range, u_range)`.
pub fn saturate(x: f64, spec: &SaturationSpec) -> f64 {
    x.clamp(-spec.u_range, spec.u_range)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Uniform application `u_i = u_bar`.
    Constant,
    /// Feedback on the deviation from the field mean.
    GlobalProportional,
    /// Feedback on the mean deviation from grid neighbours.
    LocalProportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    pub kind: PolicyKind,
    /// Proportional gain, grams of nitrogen per gram of shoot-biomass deviation.
    pub gain: f64,
    pub saturation: SaturationSpec,
    /// Standard deviation of multiplicative observation noise.
    pub noise_frac: f64,
}

impl ControlPolicy {
    pub const DEFAULT_GAIN: f64 = 0.05;

    pub fn constant(u_bar: f64) -> Self {
        ControlPolicy {
            kind: PolicyKind::Constant,
            gain: 0.0,
            saturation: SaturationSpec { u_bar, u_range: 0.0 },
            noise_frac: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.saturation.validate()?;
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::config(format!("gain must be >= 0, got {}", self.gain)));
        }
        if !(self.noise_frac >= 0.0 && self.noise_frac.is_finite()) {
            return Err(Error::config(format!("noise_frac must be >= 0, got {}", self.noise_frac)));
        }
        Ok(())
    }

    /// Application for every plant given the (possibly noisy) observations.
    pub fn decide(&self, observed: &[f64], topology: &[Vec<usize>]) -> Result<Vec<f64>> {
        match self.kind {
            PolicyKind::Constant => Ok(vec![self.saturation.u_bar; observed.len()]),
            PolicyKind::GlobalProportional => global_proportional(observed, self),
            PolicyKind::LocalProportional => local_proportional(observed, topology, self),
        }
    }
}

/// `u_i = u_bar + sat(gain (mean(y) - y_i))`.
pub fn global_proportional(outputs: &[f64], policy: &ControlPolicy) -> Result<Vec<f64>> {
    if outputs.is_empty() {
        return Err(Error::input("global_proportional needs at least one output"));
    }
    let mean = outputs.iter().sum::<f64>() / outputs.len() as f64;
    let sat = &policy.saturation;
    Ok(outputs.iter().map(|&y| sat.u_bar + saturate(policy.gain * (mean - y), sat)).collect())
}

/// `u_i = u_bar + sat(gain / |N_i| * sum_{j in N_i} (y_j - y_i))`.
pub fn local_proportional(
    outputs: &[f64],
    topology: &[Vec<usize>],
    policy: &ControlPolicy,
) -> Result<Vec<f64>> {
    if topology.len() != outputs.len() {
        return Err(Error::input(format!(
            "topology has {} plants but {} outputs were given",
            topology.len(),
            outputs.len()
        )));
    }
    let sat = &policy.saturation;
    outputs
        .iter()
        .zip(topology)
        .enumerate()
        .map(|(i, (&yi, nbrs))| {
            if nbrs.is_empty() {
                return Err(Error::input(format!("plant {i} has no neighbours")));
            }
            let mut sum = 0.0;
            for &j in nbrs {
                let yj = outputs.get(j).ok_or_else(|| {
                    Error::input(format!("plant {i} lists neighbour {j} out of range"))
                })?;
                sum += yj - yi;
            }
            Ok(sat.u_bar + saturate(policy.gain / nbrs.len() as f64 * sum, sat))
        })
        .collect()
}

/// Observations seen by the controller: `max(0, y_i + e_i)` with
/// `e_i ~ N(0, (noise_frac y_i)^2)` drawn from the `(seed, epoch, i)` substream.
pub fn observe(outputs: &[f64], noise_frac: f64, seed: u64, epoch: u64) -> Vec<f64> {
    if noise_frac == 0.0 {
        return outputs.to_vec();
    }
    outputs
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut r = rng::substream(seed, rng::TAG_OBSERVE, epoch, i as u64);
            let z: f64 = StandardNormal.sample(&mut r);
            (y + noise_frac * y * z).max(0.0)
        })
        .collect()
}

/// When applications happen: `first_application_day + m * interval_days`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationSchedule {
    pub interval_days: f64,
    pub first_application_day: f64,
}

impl Default for ActuationSchedule {
    fn default() -> Self {
        Self::daily()
    }
}

impl ActuationSchedule {
    pub fn daily() -> Self {
        ActuationSchedule { interval_days: 1.0, first_application_day: 0.0 }
    }

    pub fn every(interval_days: f64) -> Self {
        ActuationSchedule { interval_days, first_application_day: 0.0 }
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.interval_days.is_finite() && self.interval_days >= dt) {
            return Err(Error::config(format!(
                "interval_days = {} must be at least dt = {dt}",
                self.interval_days
            )));
        }
        if !(self.first_application_day.is_finite() && self.first_application_day >= 0.0) {
            return Err(Error::config("first_application_day must be >= 0"));
        }
        Ok(())
    }

    /// Application times strictly before `season_days`.
    pub fn application_times(&self, season_days: f64) -> Vec<f64> {
        let mut times = Vec::new();
        let mut m = 0usize;
        loop {
            let t = self.first_application_day + m as f64 * self.interval_days;
            if t >= season_days - crate::integrator::SNAP_TOL {
                break;
            }
            times.push(t);
            m += 1;
        }
        times
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn policy(kind: PolicyKind) -> ControlPolicy {
        ControlPolicy {
            kind,
            gain: 0.05,
            saturation: SaturationSpec { u_bar: 0.075, u_range: 0.0075 },
            noise_frac: 0.0,
        }
    }

    #[test]
    fn saturate_examples() {
        let spec = SaturationSpec { u_bar: 0.075, u_range: 0.0075 };
        assert_eq!(saturate(0.0, &spec), 0.0);
        assert_eq!(saturate(1.0, &spec), 0.0075);
        assert_eq!(saturate(-1.0, &spec), -0.0075);
        assert_eq!(saturate(-0.003, &spec), -0.003);
        assert_relative_eq!(spec.lower(), 0.0675, max_relative = 1e-12);
        assert_relative_eq!(spec.upper(), 0.0825, max_relative = 1e-12);
    }

    #[test]
    fn saturation_validation() {
        assert!(SaturationSpec::new(0.075, 0.08).is_err());
        assert!(SaturationSpec::new(0.075, -0.001).is_err());
        assert!(SaturationSpec::new(0.075, 0.075).is_ok());
    }

    #[test]
    fn global_examples() {
        let p = policy(PolicyKind::GlobalProportional);
        assert_eq!(global_proportional(&[5.0; 4], &p).unwrap(), vec![0.075; 4]);
        let u = global_proportional(&[10.0, 30.0], &p).unwrap();
        assert_relative_eq!(u[0], 0.0825, max_relative = 1e-12);
        assert_relative_eq!(u[1], 0.0675, max_relative = 1e-12);
        assert!(global_proportional(&[], &p).is_err());

        // Unsaturated deviations cancel.
        let u = global_proportional(&[10.0, 10.05, 9.98, 10.01], &p).unwrap();
        let dev: f64 = u.iter().map(|x| x - 0.075).sum();
        assert!(dev.abs() < 1e-15);
    }

    #[test]
    fn local_examples() {
        let p = policy(PolicyKind::LocalProportional);
        let path = vec![vec![1], vec![0, 2], vec![1]];
        let u = local_proportional(&[10.0, 20.0, 30.0], &path, &p).unwrap();
        assert_relative_eq!(u[0], 0.0825, max_relative = 1e-12);
        assert_eq!(u[1], 0.075);
        assert_relative_eq!(u[2], 0.0675, max_relative = 1e-12);

        assert_eq!(local_proportional(&[3.0; 3], &path, &p).unwrap(), vec![0.075; 3]);
        let isolated = vec![vec![1], vec![0], vec![]];
        assert!(local_proportional(&[1.0, 2.0, 3.0], &isolated, &p).is_err());
        assert!(local_proportional(&[1.0, 2.0], &path, &p).is_err());
    }

    #[test]
    fn complete_graph_matches_global_up_to_self_exclusion() {
        // On a complete graph without self loops, the neighbour mean deviation is
        // N/(N-1) times the field mean deviation. Scaling the gain accordingly
        // gives the global law exactly.
        let y = [1.0, 1.02, 0.97, 1.01, 0.99];
        let n = y.len();
        let complete: Vec<Vec<usize>> =
            (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        let g = policy(PolicyKind::GlobalProportional);
        let mut l = policy(PolicyKind::LocalProportional);
        l.gain = g.gain * (n as f64 - 1.0) / n as f64;
        let ug = global_proportional(&y, &g).unwrap();
        let ul = local_proportional(&y, &complete, &l).unwrap();
        for (a, b) in ug.iter().zip(&ul) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn observe_identity_and_zero() {
        let y = [1.0, 2.0, 0.0];
        assert_eq!(observe(&y, 0.0, 3, 0), y.to_vec());
        let noisy = observe(&y, 0.1, 3, 0);
        assert_eq!(noisy[2], 0.0);
        assert_ne!(noisy[0], 1.0);
        assert_eq!(noisy, observe(&y, 0.1, 3, 0));
        assert_ne!(noisy, observe(&y, 0.1, 3, 1));
    }

    #[test]
    fn observe_noise_level() {
        let y = vec![10.0; 100_000];
        let obs = observe(&y, 0.1, 11, 5);
        let rel: Vec<f64> = obs.iter().map(|o| o / 10.0 - 1.0).collect();
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let var = rel.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rel.len() as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.002, "std = {}", var.sqrt());
    }

    #[test]
    fn schedules() {
        assert_eq!(ActuationSchedule::every(14.0).application_times(50.0), vec![0.0, 14.0, 28.0, 42.0]);
        assert_eq!(ActuationSchedule::daily().application_times(50.0).len(), 50);
        assert!(ActuationSchedule::every(0.001).validate(0.01).is_err());
        let late = ActuationSchedule { interval_days: 10.0, first_application_day: 5.0 };
        assert_eq!(late.application_times(30.0), vec![5.0, 15.0, 25.0]);
    }

    #[test]
    fn policy_validation() {
        let mut p = policy(PolicyKind::GlobalProportional);
        assert!(p.validate().is_ok());
        p.gain = -1.0;
        assert!(p.validate().is_err());
        p.gain = 0.05;
        p.noise_frac = -0.1;
        assert!(p.validate().is_err());
    }
}
