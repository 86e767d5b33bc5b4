//! Concrete models and trajectory simulation.

mod hmm;
mod lgssm;
mod slam;
mod sv;

use std::io::{self, Write};

use crate::error::Result;
use crate::model::{check_parameter, ParameterVector, StateSpaceModel};
use crate::rng::{Purpose, StreamSeed};

pub use hmm::{HmmModel, HmmSpec};
pub use lgssm::{LgssmModel, LgssmParams};
pub use slam::{
    slam_observe, wrap_angle, LandmarkObs, LoopTrack, Pose, SlamModel, SlamNoise, SlamObservation, SlamSpec,
};
pub use sv::SvModel;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub(crate) fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    (-0.5 * r * r / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[inline]
pub(crate) fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// A simulated record: states `x_0..=x_T` and observations `y_0..=y_T`.
#[derive(Debug, Clone)]
pub struct Trajectory<S, O> {
    pub states: Vec<S>,
    pub observations: Vec<O>,
}

impl<S, O> Trajectory<S, O> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Draws `x_0 ~ χ`, `x_{t+1} ~ q(x_t, ·)` and `y_t ~ g(x_t, ·)` for
/// `t = 0..=horizon`.
pub fn simulate<M: StateSpaceModel>(
    model: &M,
    theta: &ParameterVector,
    horizon: usize,
    seed: StreamSeed,
) -> Result<Trajectory<M::State, M::Obs>> {
    check_parameter(model, theta)?;
    let mut rng = seed.sequential(Purpose::Simulation);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut x = model.sample_initial(&mut rng);
    for t in 0..=horizon {
        observations.push(model.sample_emission(theta, &x, &mut rng));
        let next = if t < horizon {
            Some(model.sample_transition(theta, t, &x, &mut rng))
        } else {
            None
        };
        states.push(x);
        match next {
            Some(n) => x = n,
            None => break,
        }
    }
    Ok(Trajectory {
        states,
        observations,
    })
}

/// Column layout used when writing trajectories.
pub trait TrajectoryFormat: StateSpaceModel {
    fn state_fields(&self) -> Vec<String>;

    fn observation_fields(&self) -> Vec<String>;

    /// One record per row. Scalar observations give exactly one record.
    fn observation_records(&self, y: &Self::Obs) -> Vec<Vec<f64>>;

    /// Whether every observation is exactly one record, so states and
    /// observations can share a file.
    fn single_record_observations(&self) -> bool {
        true
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `t, state coords, observation fields`. For models whose
/// observations are multi-record, use [`write_states_csv`] and
/// [`write_observations_csv`] instead.
pub fn write_trajectory_csv<M: TrajectoryFormat, W: Write>(
    model: &M,
    traj: &Trajectory<M::State, M::Obs>,
    mut out: W,
) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(model.state_fields());
    header.extend(model.observation_fields());
    writeln!(out, "{}", header.join(","))?;
    for (t, (x, y)) in traj.states.iter().zip(&traj.observations).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(model.state_coords(x).into_iter().map(fmt_f64));
        for rec in model.observation_records(y) {
            row.extend(rec.into_iter().map(fmt_f64));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_states_csv<M: TrajectoryFormat, W: Write>(
    model: &M,
    states: &[M::State],
    mut out: W,
) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(model.state_fields());
    writeln!(out, "{}", header.join(","))?;
    for (t, x) in states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(model.state_coords(x).into_iter().map(fmt_f64));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// One row per observation record, prefixed by the time index.
pub fn write_observations_csv<M: TrajectoryFormat, W: Write>(
    model: &M,
    observations: &[M::Obs],
    mut out: W,
) -> io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(model.observation_fields());
    writeln!(out, "{}", header.join(","))?;
    for (t, y) in observations.iter().enumerate() {
        for rec in model.observation_records(y) {
            let mut row = vec![t.to_string()];
            row.extend(rec.into_iter().map(fmt_f64));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_horizon_gives_one_state_and_one_observation() {
        let model = SvModel::default();
        let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let traj = simulate(&model, &theta, 0, StreamSeed(1)).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.observations.len(), 1);
    }

    #[test]
    fn simulation_is_deterministic_in_the_seed() {
        let model = SvModel::default();
        let theta = ParameterVector::new(vec![0.8, 0.1, 1.0]).unwrap();
        let a = simulate(&model, &theta, 50, StreamSeed(3)).unwrap();
        let b = simulate(&model, &theta, 50, StreamSeed(3)).unwrap();
        let c = simulate(&model, &theta, 50, StreamSeed(4)).unwrap();
        assert_eq!(a.observations, b.observations);
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn lgssm_trajectory_csv_has_header_and_rows() {
        let model = LgssmModel::new(0.9, 1.0, 0.5, LgssmParams::Phi).unwrap();
        let theta = ParameterVector::new(vec![0.9]).unwrap();
        let traj = simulate(&model, &theta, 2, StreamSeed(0)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&model, &traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x,y");
        assert_eq!(lines.len(), 4);
        let cols: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[1], traj.states[0]);
        assert_eq!(cols[2], traj.observations[0]);
    }
}
