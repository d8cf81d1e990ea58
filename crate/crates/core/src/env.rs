//! The head-movement decision environment: observations are gnomonic
//! viewports, actions are "stay" plus eight compass directions, and every
//! move travels a fixed great-circle arc.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{EquirectImage, ImagePatch};
use crate::io::{self, Provenance};
use crate::sphere::{angular_distance_deg, extract_viewport, SpherePoint, ViewportSpec};
use crate::trajectory::LabeledTrajectory;

/// Default arc per move, the middle of the typical 2-6 degree band.
pub const DEFAULT_STEP_MAG_DEG: f64 = 4.0;
/// Default steps per trajectory: 42 episodes of 5 steps.
pub const DEFAULT_HORIZON: usize = 210;

/// `0` = stay, `k` in `1..=8` = move in direction `(k - 1) * 45` degrees,
/// where 0 degrees is east (+lon) and 90 degrees is north (+lat).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(u8);

impl ActionId {
    pub const COUNT: usize = 9;
    pub const STAY: ActionId = ActionId(0);
    pub const EAST: ActionId = ActionId(1);
    pub const NORTH: ActionId = ActionId(3);
    pub const WEST: ActionId = ActionId(5);
    pub const SOUTH: ActionId = ActionId(7);

    pub fn new(id: usize) -> Result<Self> {
        if id < Self::COUNT {
            Ok(ActionId(id as u8))
        } else {
            Err(Error::invalid(format!("action id {id} outside 0..9")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn direction_deg(self) -> Option<f64> {
        match self.0 {
            0 => None,
            k => Some((k - 1) as f64 * 45.0),
        }
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..Self::COUNT as u8).map(ActionId)
    }

    pub fn one_hot(self) -> [f64; Self::COUNT] {
        let mut v = [0.0; Self::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub step_mag_deg: f64,
    /// Steps per trajectory.
    pub horizon: usize,
    /// Viewport geometry; its output size is the observation size.
    pub viewport: ViewportSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            step_mag_deg: DEFAULT_STEP_MAG_DEG,
            horizon: DEFAULT_HORIZON,
            viewport: ViewportSpec::default(),
        }
    }
}

impl EnvConfig {
    /// Small observations for quick CPU runs.
    pub fn desk() -> Self {
        EnvConfig {
            viewport: ViewportSpec::square(90.0, 32),
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_mag_deg > 0.0) {
            return Err(Error::invalid("step magnitude must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        self.viewport.validate()
    }

    pub fn obs_shape(&self, channels: usize) -> [usize; 3] {
        [channels, self.viewport.out_h, self.viewport.out_w]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub pos: SpherePoint,
    pub t: usize,
    pub obs: ImagePatch,
}

/// Position after taking `action` from `pos`.
pub fn transition(pos: SpherePoint, action: ActionId, step_mag_deg: f64) -> SpherePoint {
    match action.direction_deg() {
        None => pos,
        Some(dir) => pos.step_towards(dir, step_mag_deg),
    }
}

/// One environment per image; cheap to create, holds no mutable state.
#[derive(Clone, Copy)]
pub struct HeadEnv<'a> {
    pub image: &'a EquirectImage,
    pub cfg: EnvConfig,
}

impl<'a> HeadEnv<'a> {
    pub fn new(image: &'a EquirectImage, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if image.is_empty() {
            return Err(Error::invalid("environment image is empty"));
        }
        Ok(HeadEnv { image, cfg })
    }

    pub fn observe(&self, pos: SpherePoint) -> Result<ImagePatch> {
        extract_viewport(self.image, pos, &self.cfg.viewport)
    }

    /// Head re-centered at (0, 0).
    pub fn reset(&self) -> Result<EnvState> {
        self.state_at(SpherePoint::ORIGIN, 0)
    }

    pub fn state_at(&self, pos: SpherePoint, t: usize) -> Result<EnvState> {
        Ok(EnvState {
            pos,
            t,
            obs: self.observe(pos)?,
        })
    }

    pub fn step(&self, state: &EnvState, action: ActionId) -> Result<EnvState> {
        if state.t >= self.cfg.horizon {
            return Err(Error::invalid(format!(
                "episode finished after {} steps",
                self.cfg.horizon
            )));
        }
        let pos = transition(state.pos, action, self.cfg.step_mag_deg);
        self.state_at(pos, state.t + 1)
    }
}

/// Action whose transition from `from` lands closest to `to`. Ties go to the
/// lower action id, so small movements map to stay.
pub fn infer_action(from: SpherePoint, to: SpherePoint, step_mag_deg: f64) -> ActionId {
    let mut best = (f64::INFINITY, ActionId::STAY);
    for a in ActionId::all() {
        let d = angular_distance_deg(transition(from, a, step_mag_deg), to);
        if d < best.0 - 1e-12 {
            best = (d, a);
        }
    }
    best.1
}

/// Mean great-circle step between consecutive samples, in degrees, pooled
/// over every trajectory.
pub fn mean_step_magnitude(trajs: &[LabeledTrajectory]) -> Result<f64> {
    let paths: Vec<Vec<SpherePoint>> = trajs.iter().map(|t| t.positions()).collect();
    mean_step_magnitude_of(&paths)
}

pub fn mean_step_magnitude_of(paths: &[Vec<SpherePoint>]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for p in paths {
        for w in p.windows(2) {
            sum += angular_distance_deg(w[0], w[1]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no consecutive samples to measure step magnitude"));
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixationMode {
    /// Every position reached after the initial one.
    #[default]
    AllSteps,
    /// Only positions reached by a stay action.
    StayOnly,
}

/// A rolled-out head trajectory: `positions[0]` is the start and
/// `positions[t + 1]` the result of `actions[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub stream: usize,
    pub positions: Vec<SpherePoint>,
    pub actions: Vec<ActionId>,
}

impl Rollout {
    pub fn fixations(&self, mode: FixationMode) -> Vec<SpherePoint> {
        trajectory_to_fixations(&self.positions, &self.actions, mode)
    }
}

pub fn trajectory_to_fixations(
    positions: &[SpherePoint],
    actions: &[ActionId],
    mode: FixationMode,
) -> Vec<SpherePoint> {
    let reached = positions.iter().skip(1).zip(actions);
    match mode {
        FixationMode::AllSteps => reached.map(|(p, _)| *p).collect(),
        FixationMode::StayOnly => reached
            .filter(|(_, a)| **a == ActionId::STAY)
            .map(|(p, _)| *p)
            .collect(),
    }
}

/// `stream,step,action,lat,lon`; step 0 is the start position with an
/// empty action.
pub fn write_rollouts(path: &Path, rollouts: &[Rollout], prov: &Provenance) -> Result<()> {
    let mut w = io::csv_writer(path, prov)?;
    w.write_record(["stream", "step", "action", "lat", "lon"])?;
    for r in rollouts {
        for (t, p) in r.positions.iter().enumerate() {
            let action = if t == 0 {
                String::new()
            } else {
                r.actions[t - 1].to_string()
            };
            w.write_record([
                r.stream.to_string(),
                t.to_string(),
                action,
                p.lat.to_string(),
                p.lon.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
