//! Domain types shared by the simulator, the policy and the value function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graspworld::HiddenParam;

/// End-effector position and gripper aperture, all in `[0, 1]`.
///
/// This is both the proprioceptive state and the action space: actions are
/// absolute proprioceptive targets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct ProprioPoint {
    pub x: f64,
    pub y: f64,
    pub gripper: f64,
}

impl ProprioPoint {
    pub const fn new(x: f64, y: f64, gripper: f64) -> Self {
        Self { x, y, gripper }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("x", self.x), ("y", self.y), ("gripper", self.gripper)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("proprio {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn clamped(self) -> Self {
        Self {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
            gripper: self.gripper.clamp(0.0, 1.0),
        }
    }

    pub fn is_open(&self) -> bool {
        self.gripper >= 0.5
    }

    /// Squared Euclidean distance over `(x, y, gripper)`.
    pub fn dist2(&self, other: &ProprioPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dg = self.gripper - other.gripper;
        dx * dx + dy * dy + dg * dg
    }

    pub fn planar_dist(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

impl From<[f64; 3]> for ProprioPoint {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<ProprioPoint> for [f64; 3] {
    fn from(p: ProprioPoint) -> Self {
        [p.x, p.y, p.gripper]
    }
}

/// Number of observation features.
pub const OBS_DIM: usize = 15;

/// The observed part of the world state.
///
/// Layout: end-effector `x, y`, gripper aperture, object `x, y, theta`,
/// attached flag, then the four affordance world positions as `x, y` pairs.
/// Blocked flags and slip probabilities never appear here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub const EE_X: usize = 0;
    pub const EE_Y: usize = 1;
    pub const GRIPPER: usize = 2;
    pub const OBJ_X: usize = 3;
    pub const OBJ_Y: usize = 4;
    pub const OBJ_THETA: usize = 5;
    pub const ATTACHED: usize = 6;
    pub const AFFORDANCES: usize = 7;

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; OBS_DIM] = v.try_into().map_err(|_| Error::Dimension {
            expected: OBS_DIM,
            found: v.len(),
        })?;
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite observation feature".into()));
        }
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn proprio(&self) -> ProprioPoint {
        ProprioPoint::new(self.0[Self::EE_X], self.0[Self::EE_Y], self.0[Self::GRIPPER])
    }

    pub fn object_pose(&self) -> (f64, f64, f64) {
        (self.0[Self::OBJ_X], self.0[Self::OBJ_Y], self.0[Self::OBJ_THETA])
    }

    pub fn attached(&self) -> bool {
        self.0[Self::ATTACHED] > 0.5
    }

    pub fn affordance(&self, i: usize) -> (f64, f64) {
        let base = Self::AFFORDANCES + 2 * i;
        (self.0[base], self.0[base + 1])
    }
}

/// Default number of targets a policy predicts per chunk.
pub const CHUNK_LEN: usize = 24;

/// A sequence of absolute proprioceptive targets executed open-loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub targets: Vec<ProprioPoint>,
}

impl ActionChunk {
    pub fn new(targets: Vec<ProprioPoint>) -> Result<Self> {
        if targets.is_empty() || targets.len() > CHUNK_LEN {
            return Err(Error::Validation(format!(
                "chunk length {} outside 1..={CHUNK_LEN}",
                targets.len()
            )));
        }
        Ok(Self { targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    GraspAttach,
    GraspFailBlocked,
    Slip,
    Success,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub proprio: ProprioPoint,
    pub action: ProprioPoint,
    pub reward: f64,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

/// One episode. `hidden` is provenance only and never feeds any model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub success: bool,
    pub hidden: HiddenParam,
}

impl Trajectory {
    /// Episode length `T`.
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, tr) in self.transitions.iter().enumerate() {
            if tr.step != i {
                return Err(Error::Validation(format!("step index {} at position {i}", tr.step)));
            }
        }
        if self.success {
            let last = self
                .transitions
                .last()
                .ok_or_else(|| Error::Validation("successful trajectory is empty".into()))?;
            if last.reward != 0.0 || !last.events.contains(&Event::Success) {
                return Err(Error::Validation(
                    "successful trajectory must end with reward 0 and a success event".into(),
                ));
            }
        }
        Ok(())
    }
}
