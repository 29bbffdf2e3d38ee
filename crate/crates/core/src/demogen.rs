//! Scripted expert demonstrations and the demonstration file format.
//!
//! The file is newline-delimited JSON: a header object on line 1, then one
//! trajectory object per line.
//!
//! ```text
//! {"format":"retrial-demos","version":1,"variant":"train","seed":1,"count":2,
//!  "mean_length":31.5,"feature_mean":[..15..],"feature_std":[..15..]}
//! {"id":0,"hidden":{..},"steps":[{"obs":[..15..],"proprio":[x,y,g],"action":[x,y,g],"reward":-1},..]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graspworld::{reset, HiddenParam, ScenarioConfig, Variant, WorldState};
use crate::rng::SeedStream;
use crate::types::{Event, Observation, ProprioPoint, Trajectory, Transition, OBS_DIM};

pub const FORMAT_NAME: &str = "retrial-demos";
pub const FORMAT_VERSION: u64 = 1;

/// Expert target noise per axis during the approach.
pub const EXPERT_NOISE: f64 = 0.01;
/// Demonstrations longer than this multiple of the straight-line optimum are rejected.
pub const REJECT_FACTOR: usize = 3;
/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

const PURPOSE_EXPERT: u64 = 11;

/// Privileged scripted controller. It knows the hidden parameter and picks,
/// once per episode, one affordance that is neither blocked nor slippery.
#[derive(Debug, Clone)]
pub struct Expert {
    pub chosen: usize,
    noise: Normal<f64>,
}

impl Expert {
    pub fn new(hidden: &HiddenParam, rng: &mut impl Rng) -> Result<Self> {
        let eligible = hidden.eligible();
        if eligible.is_empty() {
            return Err(Error::Config(
                "no eligible affordance: hidden parameter violates solvability".into(),
            ));
        }
        let chosen = eligible[rng.random_range(0..eligible.len())];
        Ok(Self {
            chosen,
            noise: Normal::new(0.0, EXPERT_NOISE).expect("valid normal"),
        })
    }

    /// Absolute proprioceptive target for the current state.
    pub fn action(&self, state: &WorldState, rng: &mut impl Rng) -> ProprioPoint {
        let cfg = &state.cfg;
        if state.attached.is_some() {
            let [gx, gy] = cfg.goal_center;
            return ProprioPoint::new(gx, gy, 0.0);
        }
        let [ax, ay] = state.affordance_position(self.chosen);
        if !state.ee.is_open() {
            // A missed closure: reopen in place before trying again.
            return ProprioPoint::new(ax, ay, 1.0).clamped();
        }
        let nx = ax + self.noise.sample(rng);
        let ny = ay + self.noise.sample(rng);
        let gripper = if state.ee.planar_dist(ax, ay) <= cfg.grasp_radius {
            0.0
        } else {
            1.0
        };
        ProprioPoint::new(nx, ny, gripper).clamped()
    }
}

/// One-shot form of [`Expert::action`] for a freshly drawn strategy.
pub fn expert_action(state: &WorldState, hidden: &HiddenParam, rng: &mut impl Rng) -> Result<ProprioPoint> {
    let expert = Expert::new(hidden, rng)?;
    Ok(expert.action(state, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub variant: Variant,
    pub seed: u64,
    pub count: usize,
    pub mean_length: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

/// Successful expert trajectories plus observation statistics.
///
/// Transitions keep only the [`Event::Success`] tag on the final step; the
/// file format does not carry the other events.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Assemble a dataset, computing the feature statistics.
    pub fn from_trajectories(variant: Variant, seed: u64, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Validation("dataset needs at least one trajectory".into()));
        }
        for t in &trajectories {
            t.validate()?;
            if !t.success {
                return Err(Error::Validation("dataset trajectories must be successful".into()));
            }
        }
        let (feature_mean, feature_std) = feature_stats(&trajectories);
        let mean_length = trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / trajectories.len() as f64;
        Ok(Self {
            meta: DatasetMeta {
                variant,
                seed,
                count: trajectories.len(),
                mean_length,
                feature_mean,
                feature_std,
            },
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total number of transitions.
    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Hex SHA-256 over every observation, action and reward.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.trajectories {
            for tr in &t.transitions {
                for v in tr.obs.0.iter().chain(<[f64; 3]>::from(tr.action).iter()) {
                    h.update(v.to_le_bytes());
                }
                h.update(tr.reward.to_le_bytes());
            }
            h.update(b"|");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-feature mean and population std (floored) over all observations.
pub fn feature_stats(trajectories: &[Trajectory]) -> (Vec<f64>, Vec<f64>) {
    let mut sum = [0.0; OBS_DIM];
    let mut n = 0usize;
    for tr in trajectories.iter().flat_map(|t| &t.transitions) {
        for (s, v) in sum.iter_mut().zip(tr.obs.0) {
            *s += v;
        }
        n += 1;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
    let mut sq = [0.0; OBS_DIM];
    for tr in trajectories.iter().flat_map(|t| &t.transitions) {
        for ((s, v), m) in sq.iter_mut().zip(tr.obs.0).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = sq.iter().map(|s| (s / n.max(1) as f64).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Roll one expert episode. Returns the trajectory and whether it slipped.
fn roll_expert(
    cfg: &ScenarioConfig,
    stream: SeedStream,
    max_steps: Option<usize>,
) -> Result<(Trajectory, bool, usize)> {
    let (mut state, mut obs) = reset(cfg, stream)?;
    let mut rng = stream.fork(PURPOSE_EXPERT).rng();
    let expert = Expert::new(&state.hidden, &mut rng)?;
    let optimal = state.optimal_steps(expert.chosen);
    let limit = max_steps.unwrap_or(REJECT_FACTOR * optimal);
    let mut transitions = Vec::new();
    let mut slipped = false;
    while !state.done && transitions.len() < limit {
        let proprio = state.proprio();
        let action = expert.action(&state, &mut rng);
        let out = state.step(action)?;
        slipped |= out.events.contains(&Event::Slip);
        transitions.push(Transition {
            obs,
            proprio,
            action,
            reward: out.reward,
            step: transitions.len(),
            events: out.events,
        });
        obs = out.obs;
    }
    let traj = Trajectory {
        transitions,
        success: state.done,
        hidden: state.hidden,
    };
    Ok((traj, slipped, optimal))
}

/// Roll a single unfiltered expert episode (for evaluation and tests).
pub fn expert_episode(cfg: &ScenarioConfig, stream: SeedStream) -> Result<Trajectory> {
    Ok(roll_expert(cfg, stream, None)?.0)
}

/// Generate exactly `n` accepted demonstrations.
///
/// Episodes that slip or take more than three times the straight-line
/// optimum are discarded and re-rolled with a fresh stream.
pub fn generate_demos(cfg: &ScenarioConfig, n: usize, stream: SeedStream) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Usage("demo count must be at least 1".into()));
    }
    let mut accepted = Vec::with_capacity(n);
    let mut attempts = 0u64;
    let mut rejected = 0u64;
    while accepted.len() < n {
        let episode = SeedStream::new(stream.seed, attempts).fork(stream.stream);
        attempts += 1;
        let (mut traj, slipped, _) = roll_expert(cfg, episode, None)?;
        if !traj.success || slipped || traj.len() < 2 {
            rejected += 1;
            if attempts >= 100 && rejected * 100 > attempts * 99 {
                return Err(Error::Config(format!(
                    "expert rejection rate above 99% ({rejected}/{attempts})"
                )));
            }
            continue;
        }
        let last = traj.transitions.len() - 1;
        for (i, tr) in traj.transitions.iter_mut().enumerate() {
            tr.events.retain(|e| i == last && *e == Event::Success);
        }
        accepted.push(traj);
    }
    Dataset::from_trajectories(cfg.variant, stream.seed, accepted)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
    variant: Variant,
    seed: u64,
    count: usize,
    mean_length: f64,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    obs: Vec<f64>,
    proprio: [f64; 3],
    action: [f64; 3],
    reward: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    id: usize,
    hidden: HiddenParam,
    steps: Vec<StepRecord>,
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        variant: d.meta.variant,
        seed: d.meta.seed,
        count: d.trajectories.len(),
        mean_length: d.meta.mean_length,
        feature_mean: d.meta.feature_mean.clone(),
        feature_std: d.meta.feature_std.clone(),
    };
    let mut emit = |line: String| -> Result<()> {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    emit(serde_json::to_string(&header)?)?;
    for (id, t) in d.trajectories.iter().enumerate() {
        let rec = TrajectoryRecord {
            id,
            hidden: t.hidden,
            steps: t
                .transitions
                .iter()
                .map(|tr| StepRecord {
                    obs: tr.obs.0.to_vec(),
                    proprio: tr.proprio.into(),
                    action: tr.action.into(),
                    reward: tr.reward as i64,
                })
                .collect(),
        };
        emit(serde_json::to_string(&rec)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME) {
        return Err(parse_err(1, format!("missing '{FORMAT_NAME}' format header")));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(1, "missing version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| parse_err(1, e.to_string()))?;
    if header.feature_mean.len() != OBS_DIM || header.feature_std.len() != OBS_DIM {
        return Err(parse_err(1, "feature statistics must have 15 entries".into()));
    }

    let mut trajectories = Vec::with_capacity(header.count);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if rec.id != trajectories.len() {
            return Err(parse_err(lineno, format!("unexpected trajectory id {}", rec.id)));
        }
        let n = rec.steps.len();
        if n == 0 {
            return Err(parse_err(lineno, "trajectory has no steps".into()));
        }
        let mut transitions = Vec::with_capacity(n);
        for (i, s) in rec.steps.into_iter().enumerate() {
            let reward = match s.reward {
                -1 => -1.0,
                0 => 0.0,
                r => return Err(parse_err(lineno, format!("reward {r} not in {{-1, 0}}"))),
            };
            let obs = Observation::from_slice(&s.obs).map_err(|e| parse_err(lineno, e.to_string()))?;
            let events = if i + 1 == n && reward == 0.0 {
                vec![Event::Success]
            } else {
                Vec::new()
            };
            transitions.push(Transition {
                obs,
                proprio: s.proprio.into(),
                action: s.action.into(),
                reward,
                step: i,
                events,
            });
        }
        let success = transitions.last().map(|t| t.reward == 0.0).unwrap_or(false);
        if !success {
            return Err(parse_err(lineno, "demonstration does not end in success".into()));
        }
        trajectories.push(Trajectory {
            transitions,
            success,
            hidden: rec.hidden,
        });
    }
    if trajectories.len() != header.count {
        return Err(parse_err(
            trajectories.len() + 2,
            format!(
                "truncated file: header declares {} trajectories, found {}",
                header.count,
                trajectories.len()
            ),
        ));
    }
    Ok(Dataset {
        meta: DatasetMeta {
            variant: header.variant,
            seed: header.seed,
            count: header.count,
            mean_length: header.mean_length,
            feature_mean: header.feature_mean,
            feature_std: header.feature_std,
        },
        trajectories,
    })
}
