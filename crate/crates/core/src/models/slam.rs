//! Range-bearing SLAM with known data association.
//!
//! The robot pose `(x, y, heading)` moves under known commands `(d, α)`
//! with independent Gaussian noise on each coordinate. At each time it
//! observes every landmark inside the sensing radius and the forward field
//! of view, measuring range and relative bearing. The parameter is the
//! flattened list of coordinates of the landmarks that are not fixed.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normal_log_pdf, Trajectory, TrajectoryFormat};
use crate::error::{Error, Result};
use crate::model::{check_parameter, ParameterVector, StateSpaceModel};
use crate::rng::{Purpose, StreamSeed};

/// Robot pose `[x, y, heading]`, heading in `(−π, π]`.
pub type Pose = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkObs {
    pub id: usize,
    pub range: f64,
    pub bearing: f64,
}

pub type SlamObservation = Vec<LandmarkObs>;

/// Wraps an angle into `(−π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlamNoise {
    /// Standard deviations of the three pose coordinates per step.
    pub motion_std: [f64; 3],
    /// Standard deviations of range and bearing.
    pub obs_std: [f64; 2],
}

impl Default for SlamNoise {
    fn default() -> Self {
        SlamNoise {
            motion_std: [0.25, 0.25, 3.0 * PI / 180.0],
            obs_std: [0.25, PI / 180.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlamSpec {
    /// True landmark positions. Only the fixed ones are read by the model;
    /// the rest define the true parameter used for simulation.
    pub landmarks: Vec<[f64; 2]>,
    pub fixed: Vec<usize>,
    pub noise: SlamNoise,
    pub radius: f64,
    pub fov_half_angle: f64,
    /// `commands[t]` drives the move from time `t` to `t + 1`.
    #[serde(default)]
    pub commands: Vec<[f64; 2]>,
}

impl SlamSpec {
    /// First `count` landmarks of a fixed layout around [`LoopTrack::default`],
    /// the first two of which are fixed.
    pub fn default_layout(count: usize) -> Self {
        let layout = [
            [5.0, 10.0],
            [25.0, 10.0],
            [15.0, -6.0],
            [15.0, 26.0],
            [-12.0, 10.0],
            [42.0, 10.0],
            [-8.0, -8.0],
            [40.0, 28.0],
            [15.0, 10.0],
        ];
        let count = count.clamp(1, layout.len());
        SlamSpec {
            landmarks: layout[..count].to_vec(),
            fixed: (0..count.min(2)).collect(),
            noise: SlamNoise::default(),
            radius: 30.0,
            fov_half_angle: PI / 2.0,
            commands: Vec::new(),
        }
    }
}

/// Noise-free range and bearing of every visible landmark.
pub fn visible_landmarks(spec: &SlamSpec, landmarks: &[[f64; 2]], robot: &Pose) -> Vec<(usize, f64, f64)> {
    landmarks
        .iter()
        .enumerate()
        .filter_map(|(id, lm)| {
            let (dx, dy) = (lm[0] - robot[0], lm[1] - robot[1]);
            let range = dx.hypot(dy);
            let bearing = wrap_angle(dy.atan2(dx) - robot[2]);
            (range <= spec.radius && bearing.abs() <= spec.fov_half_angle).then_some((id, range, bearing))
        })
        .collect()
}

/// Simulated sensor reading at `robot`, given full landmark coordinates.
pub fn slam_observe<R: Rng + ?Sized>(
    spec: &SlamSpec,
    landmarks: &[[f64; 2]],
    robot: &Pose,
    rng: &mut R,
) -> SlamObservation {
    let [s_range, s_bearing] = spec.noise.obs_std;
    visible_landmarks(spec, landmarks, robot)
        .into_iter()
        .map(|(id, range, bearing)| {
            let er: f64 = rng.sample(StandardNormal);
            let eb: f64 = rng.sample(StandardNormal);
            LandmarkObs {
                id,
                range: range + s_range * er,
                bearing: wrap_angle(bearing + s_bearing * eb),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SlamSpec", into = "SlamSpec")]
pub struct SlamModel {
    spec: SlamSpec,
    /// Parameter slot of each landmark; `None` for fixed ones.
    slots: Vec<Option<usize>>,
    bound: f64,
}

impl TryFrom<SlamSpec> for SlamModel {
    type Error = Error;

    fn try_from(spec: SlamSpec) -> Result<Self> {
        SlamModel::new(spec)
    }
}

impl From<SlamModel> for SlamSpec {
    fn from(m: SlamModel) -> SlamSpec {
        m.spec
    }
}

impl SlamModel {
    pub fn new(spec: SlamSpec) -> Result<Self> {
        let count = spec.landmarks.len();
        if count == 0 {
            return Err(Error::Config("SLAM needs at least one landmark".into()));
        }
        let noise = spec.noise;
        if noise.motion_std.iter().chain(&noise.obs_std).any(|s| !(*s > 0.0)) {
            return Err(Error::Config("SLAM noise standard deviations must be positive".into()));
        }
        let mut slots = vec![Some(0); count];
        for &f in &spec.fixed {
            if f >= count || slots[f].is_none() {
                return Err(Error::Config(format!("bad fixed landmark index {f}")));
            }
            slots[f] = None;
        }
        let mut next = 0;
        for s in slots.iter_mut().flatten() {
            *s = next;
            next += 1;
        }
        let bound = noise
            .motion_std
            .iter()
            .map(|s| (2.0 * PI * s * s).sqrt().recip())
            .product();
        Ok(SlamModel { spec, slots, bound })
    }

    pub fn spec(&self) -> &SlamSpec {
        &self.spec
    }

    pub fn landmark_count(&self) -> usize {
        self.spec.landmarks.len()
    }

    /// Indices of the landmarks whose coordinates form θ, in slot order.
    pub fn free_landmarks(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].is_some()).collect()
    }

    /// θ holding the true coordinates of the free landmarks.
    pub fn true_parameter(&self) -> Vec<f64> {
        self.free_landmarks()
            .into_iter()
            .flat_map(|i| self.spec.landmarks[i])
            .collect()
    }

    #[inline]
    pub fn landmark(&self, theta: &[f64], i: usize) -> [f64; 2] {
        match self.slots[i] {
            Some(k) => [theta[2 * k], theta[2 * k + 1]],
            None => self.spec.landmarks[i],
        }
    }

    pub fn landmarks(&self, theta: &[f64]) -> Vec<[f64; 2]> {
        (0..self.slots.len()).map(|i| self.landmark(theta, i)).collect()
    }

    /// Same model driven by a different command sequence.
    pub fn with_commands(&self, commands: Vec<[f64; 2]>) -> Self {
        let mut m = self.clone();
        m.spec.commands = commands;
        m
    }

    #[inline]
    fn command(&self, t: usize) -> [f64; 2] {
        self.spec.commands.get(t).copied().unwrap_or([0.0, 0.0])
    }

    #[inline]
    fn mean_move(x: &Pose, cmd: [f64; 2]) -> Pose {
        let [d, alpha] = cmd;
        [x[0] + d * x[2].cos(), x[1] + d * x[2].sin(), wrap_angle(x[2] + alpha)]
    }

    fn noisy_move<R: Rng + ?Sized>(&self, x: &Pose, cmd: [f64; 2], rng: &mut R) -> Pose {
        let m = Self::mean_move(x, cmd);
        let s = self.spec.noise.motion_std;
        let e: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        [m[0] + s[0] * e[0], m[1] + s[1] * e[1], wrap_angle(m[2] + s[2] * e[2])]
    }

    /// Simulates `horizon` steps while a pure-pursuit controller steers the
    /// true pose around `track`. Returns the model carrying the generated
    /// commands together with the trajectory.
    pub fn simulate_loop(
        &self,
        theta: &ParameterVector,
        track: &LoopTrack,
        horizon: usize,
        seed: StreamSeed,
    ) -> Result<(SlamModel, Trajectory<Pose, SlamObservation>)> {
        check_parameter(self, theta)?;
        let landmarks = self.landmarks(theta);
        let mut rng = seed.sequential(Purpose::Simulation);
        let mut controller = track.controller();
        let mut x: Pose = [0.0, 0.0, 0.0];
        let mut states = Vec::with_capacity(horizon + 1);
        let mut observations = Vec::with_capacity(horizon + 1);
        let mut commands = Vec::with_capacity(horizon);
        for t in 0..=horizon {
            observations.push(slam_observe(&self.spec, &landmarks, &x, &mut rng));
            states.push(x);
            if t < horizon {
                let cmd = controller.command(&x);
                commands.push(cmd);
                x = self.noisy_move(&x, cmd, &mut rng);
            }
        }
        Ok((self.with_commands(commands), Trajectory { states, observations }))
    }
}

impl StateSpaceModel for SlamModel {
    type State = Pose;
    type Obs = SlamObservation;

    fn param_dim(&self) -> usize {
        2 * self.slots.iter().flatten().count()
    }

    fn validate(&self, _theta: &[f64]) -> Result<()> {
        Ok(())
    }

    fn sample_initial<R: Rng + ?Sized>(&self, _rng: &mut R) -> Pose {
        [0.0, 0.0, 0.0]
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _theta: &[f64], t: usize, x: &Pose, rng: &mut R) -> Pose {
        self.noisy_move(x, self.command(t), rng)
    }

    fn transition_density(&self, theta: &[f64], t: usize, x: &Pose, x_next: &Pose) -> f64 {
        self.log_transition_density(theta, t, x, x_next).exp()
    }

    fn log_transition_density(&self, _theta: &[f64], t: usize, x: &Pose, x_next: &Pose) -> f64 {
        let m = Self::mean_move(x, self.command(t));
        let s = self.spec.noise.motion_std;
        normal_log_pdf(x_next[0], m[0], s[0] * s[0])
            + normal_log_pdf(x_next[1], m[1], s[1] * s[1])
            + normal_log_pdf(wrap_angle(x_next[2] - m[2]), 0.0, s[2] * s[2])
    }

    fn density_bound(&self, _theta: &[f64]) -> f64 {
        self.bound
    }

    fn emission_density(&self, theta: &[f64], x: &Pose, y: &SlamObservation) -> f64 {
        self.log_emission_density(theta, x, y).exp()
    }

    fn log_emission_density(&self, theta: &[f64], x: &Pose, y: &SlamObservation) -> f64 {
        let [sr, sb] = self.spec.noise.obs_std;
        y.iter()
            .map(|o| {
                let lm = self.landmark(theta, o.id);
                let (dx, dy) = (lm[0] - x[0], lm[1] - x[1]);
                let range = dx.hypot(dy);
                let bearing = dy.atan2(dx) - x[2];
                normal_log_pdf(o.range, range, sr * sr)
                    + normal_log_pdf(wrap_angle(o.bearing - bearing), 0.0, sb * sb)
            })
            .sum()
    }

    fn sample_emission<R: Rng + ?Sized>(&self, theta: &[f64], x: &Pose, rng: &mut R) -> SlamObservation {
        slam_observe(&self.spec, &self.landmarks(theta), x, rng)
    }

    fn add_grad_log_emission(&self, theta: &[f64], x: &Pose, y: &SlamObservation, out: &mut [f64]) -> Result<()> {
        let [sr, sb] = self.spec.noise.obs_std;
        for o in y {
            let Some(k) = self.slots[o.id] else { continue };
            let lm = [theta[2 * k], theta[2 * k + 1]];
            let (dx, dy) = (lm[0] - x[0], lm[1] - x[1]);
            let r2 = dx * dx + dy * dy;
            let range = r2.sqrt();
            if range == 0.0 {
                return Err(Error::ZeroDensity("landmark coincides with the robot"));
            }
            let er = (o.range - range) / (sr * sr);
            let eb = wrap_angle(o.bearing - (dy.atan2(dx) - x[2])) / (sb * sb);
            out[2 * k] += er * dx / range - eb * dy / r2;
            out[2 * k + 1] += er * dy / range + eb * dx / r2;
        }
        Ok(())
    }

    fn add_grad_log_transition(
        &self,
        _theta: &[f64],
        _t: usize,
        _x: &Pose,
        _x_next: &Pose,
        _out: &mut [f64],
    ) -> Result<()> {
        Ok(())
    }

    fn state_coords(&self, x: &Pose) -> Vec<f64> {
        x.to_vec()
    }
}

impl TrajectoryFormat for SlamModel {
    fn state_fields(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "heading".into()]
    }

    fn observation_fields(&self) -> Vec<String> {
        vec!["landmark".into(), "range".into(), "bearing".into()]
    }

    fn observation_records(&self, y: &SlamObservation) -> Vec<Vec<f64>> {
        y.iter().map(|o| vec![o.id as f64, o.range, o.bearing]).collect()
    }

    fn single_record_observations(&self) -> bool {
        false
    }
}

/// Closed rounded-rectangle course starting at the origin heading along
/// `+x` and turning counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopTrack {
    /// Length of the straights along `x`.
    pub length: f64,
    /// Length of the straights along `y`.
    pub width: f64,
    pub corner_radius: f64,
    pub speed: f64,
    pub dt: f64,
    pub lookahead: f64,
    /// Largest heading change commanded in one step.
    pub max_turn: f64,
}

impl Default for LoopTrack {
    fn default() -> Self {
        LoopTrack {
            length: 30.0,
            width: 10.0,
            corner_radius: 5.0,
            speed: 4.0,
            dt: 0.1,
            lookahead: 3.0,
            max_turn: 0.3,
        }
    }
}

impl LoopTrack {
    pub fn lap_length(&self) -> f64 {
        2.0 * (self.length + self.width) + 2.0 * PI * self.corner_radius
    }

    /// Point of the course at arc length `s`.
    pub fn point(&self, s: f64) -> [f64; 2] {
        let (a, b, r) = (self.length, self.width, self.corner_radius);
        let quarter = 0.5 * PI * r;
        let mut s = s.rem_euclid(self.lap_length());
        let arc = |cx: f64, cy: f64, start: f64, s: f64| {
            let ang = start + s / r;
            [cx + r * ang.cos(), cy + r * ang.sin()]
        };
        if s < a {
            return [s, 0.0];
        }
        s -= a;
        if s < quarter {
            return arc(a, r, -0.5 * PI, s);
        }
        s -= quarter;
        if s < b {
            return [a + r, r + s];
        }
        s -= b;
        if s < quarter {
            return arc(a, r + b, 0.0, s);
        }
        s -= quarter;
        if s < a {
            return [a - s, 2.0 * r + b];
        }
        s -= a;
        if s < quarter {
            return arc(0.0, r + b, 0.5 * PI, s);
        }
        s -= quarter;
        if s < b {
            return [-r, r + b - s];
        }
        s -= b;
        arc(0.0, r, PI, s.min(quarter))
    }

    fn controller(&self) -> PursuitController {
        PursuitController { track: *self, progress: 0.0 }
    }
}

struct PursuitController {
    track: LoopTrack,
    progress: f64,
}

impl PursuitController {
    fn command(&mut self, pose: &Pose) -> [f64; 2] {
        // Closest course point in a window around the current progress.
        let mut best = (f64::INFINITY, self.progress);
        let steps = 100;
        for k in 0..=steps {
            let s = self.progress - 2.0 + 8.0 * k as f64 / steps as f64;
            let p = self.track.point(s);
            let d = (p[0] - pose[0]).powi(2) + (p[1] - pose[1]).powi(2);
            if d < best.0 {
                best = (d, s);
            }
        }
        self.progress = best.1.max(self.progress);
        let target = self.track.point(self.progress + self.track.lookahead);
        let desired = (target[1] - pose[1]).atan2(target[0] - pose[0]);
        let turn = wrap_angle(desired - pose[2]).clamp(-self.track.max_turn, self.track.max_turn);
        [self.track.speed * self.track.dt, turn]
    }
}
