//! The closed deployment loop: sample chunks, skew-select, execute while
//! monitoring every step, recover on a trigger and remember where it went
//! wrong.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graspworld::{reset, HiddenParam, ScenarioConfig};
use crate::monitor::{observe_and_judge, MonitorConfig, TraceRow, ValueHistory};
use crate::policy::{record_avoid, skewed_select, AvoidanceSet, RetrievalPolicy, SkewConfig};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::types::{Observation, ProprioPoint, OBS_DIM};
use crate::valuefn::ValueModel;

const PURPOSE_POLICY: u64 = 31;

/// Default interval-baseline buffer, as a fraction of the mean expert length.
pub const INTERVAL_BUFFER: f64 = 0.25;

/// What triggers a recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TriggerMode {
    Off,
    Monitor,
    Interval { period: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeployConfig {
    /// Executed policy steps per episode; recovery ticks are not counted.
    pub horizon: usize,
    pub max_recoveries: usize,
    pub execute_len: usize,
    pub monitor: MonitorConfig,
    pub skew: SkewConfig,
    pub skew_enabled: bool,
    pub trigger: TriggerMode,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self {
            horizon: 400,
            max_recoveries: 20,
            execute_len: 16,
            monitor: MonitorConfig::default(),
            skew: SkewConfig::default(),
            skew_enabled: true,
            trigger: TriggerMode::Monitor,
        }
    }
}

impl DeployConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.execute_len == 0 {
            return Err(Error::Config("horizon and execute_len must be at least 1".into()));
        }
        if self.skew.n_skew == 0 {
            return Err(Error::Config("n_skew must be at least 1".into()));
        }
        match self.trigger {
            TriggerMode::Monitor => self.monitor.validate(),
            TriggerMode::Interval { period: 0 } => Err(Error::Config("interval period must be at least 1".into())),
            _ => Ok(()),
        }
    }

    fn chunks_per_decision(&self) -> usize {
        if self.skew_enabled {
            self.skew.n_skew
        } else {
            1
        }
    }
}

/// Interval-baseline period: `round((1 + buffer) * mean_length)`.
pub fn interval_period(mean_length: f64, buffer: f64) -> Result<usize> {
    if !(mean_length > 0.0) || !mean_length.is_finite() {
        return Err(Error::Config(format!(
            "mean expert length {mean_length} must be positive"
        )));
    }
    if !(buffer >= 0.0) {
        return Err(Error::Config("interval buffer must be nonnegative".into()));
    }
    Ok(((1.0 + buffer) * mean_length).round().max(1.0) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Executed policy steps, recovery excluded.
    pub steps: usize,
    pub recoveries: usize,
    /// Episode step at which each recovery fired.
    pub recovery_steps: Vec<usize>,
    /// Steps executed in the attempt that each recovery ended.
    pub recovery_attempt_lengths: Vec<usize>,
    /// End-effector position at every open-to-closed gripper transition.
    pub grasp_attempts: Vec<[f64; 2]>,
    pub avoid_points: Vec<ProprioPoint>,
    pub trace: Vec<TraceRow>,
    pub initial_obs: Observation,
    pub hidden: HiddenParam,
}

/// Run one episode of the deployment loop.
pub fn run_episode<F: Scalar>(
    sim: &ScenarioConfig,
    policy: &RetrievalPolicy,
    model: &ValueModel<F>,
    cfg: &DeployConfig,
    scenario: SeedStream,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    if model.net.input_dim != OBS_DIM {
        return Err(Error::Config(format!(
            "value model expects {} features, observations have {OBS_DIM}",
            model.net.input_dim
        )));
    }
    if cfg.trigger == TriggerMode::Monitor && model.backend != cfg.monitor.backend {
        return Err(Error::Config(
            "monitor backend differs from the value model backend".into(),
        ));
    }
    if policy.params.chunk_len < cfg.execute_len {
        return Err(Error::Config("policy chunks are shorter than execute_len".into()));
    }

    let (mut state, mut obs) = reset(sim, scenario)?;
    let initial_obs = obs;
    let hidden = state.hidden;
    let mut rng = scenario.fork(PURPOSE_POLICY).rng();
    let monitoring = cfg.trigger == TriggerMode::Monitor;
    let mut history = ValueHistory::<F>::new(cfg.monitor.k);
    if monitoring {
        history.push(0, model.predict(&obs), None);
    }

    let mut avoid = AvoidanceSet::new();
    let mut steps = 0;
    let mut attempt_steps = 0;
    let mut recovery_steps = Vec::new();
    let mut recovery_attempt_lengths = Vec::new();
    let mut grasp_attempts = Vec::new();

    'episode: while steps < cfg.horizon && !state.done {
        let chunks = policy.sample_chunks(&obs, cfg.chunks_per_decision(), &mut rng);
        let (chunk, _) = skewed_select(&chunks, &avoid)?;
        for target in chunk.targets.iter().take(cfg.execute_len) {
            let before = state.proprio();
            let out = state.step(*target)?;
            steps += 1;
            attempt_steps += 1;
            if before.is_open() && !state.ee.is_open() {
                grasp_attempts.push([state.ee.x, state.ee.y]);
            }
            obs = out.obs;
            if out.done || steps >= cfg.horizon {
                break 'episode;
            }
            let fire = match cfg.trigger {
                TriggerMode::Off => false,
                TriggerMode::Interval { period } => attempt_steps >= period,
                TriggerMode::Monitor => {
                    observe_and_judge(&mut history, model, &obs, Some(out.reward), steps, &cfg.monitor).triggered()
                }
            };
            // Past the recovery cap further triggers are ignored.
            if fire && recovery_steps.len() < cfg.max_recoveries {
                if monitoring {
                    record_avoid(&mut avoid, before);
                }
                state.run_recovery();
                recovery_steps.push(steps);
                recovery_attempt_lengths.push(attempt_steps);
                attempt_steps = 0;
                obs = state.observe();
                if monitoring {
                    history.clear();
                    history.push(steps, model.predict(&obs), None);
                }
                continue 'episode;
            }
        }
    }

    Ok(EpisodeResult {
        success: state.done,
        steps,
        recoveries: recovery_steps.len(),
        recovery_steps,
        recovery_attempt_lengths,
        grasp_attempts,
        avoid_points: avoid.points,
        trace: history.into_trace(),
        initial_obs,
        hidden,
    })
}
