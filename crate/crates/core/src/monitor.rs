//! Strategy evaluation from the last `k` value predictions.
//!
//! With rewards of -1 per step and `gamma = 1`, an on-pace strategy satisfies
//! `V(s_{t-k}) = V(s_t) - k`; the scalar check fires when the earlier value
//! exceeds its k-step Bellman target. The categorical check compares an upper
//! confidence bound of the progress made over `k` steps with a slack-scaled
//! share `eta * k / T_mean` of the expert's pace.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::CategoricalValueDist;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::Observation;
use crate::valuefn::{Backend, Prediction, ValueModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub k: usize,
    pub backend: Backend,
    /// Confidence multiplier on the delta standard deviation.
    pub z: f64,
    /// Fraction of expert pace that still counts as progress.
    pub slack: f64,
    /// Extra tolerance for the scalar check, in value units.
    pub margin: f64,
    pub mean_expert_length: f64,
    pub gamma: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            k: 20,
            backend: Backend::Categorical,
            z: 2.0,
            slack: 0.5,
            margin: 0.0,
            mean_expert_length: 1.0,
            gamma: 1.0,
        }
    }
}

impl MonitorConfig {
    pub fn new(backend: Backend, mean_expert_length: f64) -> Self {
        Self {
            backend,
            mean_expert_length,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("monitor lookback k must be at least 1".into()));
        }
        if !(self.mean_expert_length >= 1.0) {
            return Err(Error::Config("mean expert length must be at least 1".into()));
        }
        if !(self.slack > 0.0 && self.slack <= 1.0) || !(self.z >= 0.0) || !(self.margin >= 0.0) {
            return Err(Error::Config("slack in (0,1], z >= 0 and margin >= 0 required".into()));
        }
        Ok(())
    }

    /// Expert progress over `k` steps as a fraction of the task.
    pub fn expected_progress(&self) -> f64 {
        self.k as f64 / self.mean_expert_length
    }
}

/// Outcome of one progress check. `triggered` holds exactly when
/// `observed < threshold`. `expected` is the on-pace value of `observed`
/// (zero for the scalar check, whose target already includes it).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressVerdict {
    pub triggered: bool,
    pub observed: f64,
    pub threshold: f64,
    pub expected: f64,
    pub step: usize,
}

/// k-step Bellman target `gamma^k v_now + sum_m gamma^m r_{t-k+m}`.
pub fn bellman_target_scalar(v_now: f64, rewards: &[f64], k: usize, gamma: f64) -> Result<f64> {
    if rewards.len() != k {
        return Err(Error::Validation(format!(
            "expected {k} rewards, got {}",
            rewards.len()
        )));
    }
    let mut discount = 1.0;
    let mut y = 0.0;
    for r in rewards {
        y += discount * r;
        discount *= gamma;
    }
    Ok(y + discount * v_now)
}

pub fn check_scalar(v_past: f64, y: f64, margin: f64, step: usize) -> ProgressVerdict {
    let observed = y - v_past;
    let threshold = -margin;
    ProgressVerdict {
        triggered: observed < threshold,
        observed,
        threshold,
        expected: 0.0,
        step,
    }
}

pub fn check_categorical<F: Scalar>(
    d_past: &CategoricalValueDist<F>,
    d_now: &CategoricalValueDist<F>,
    cfg: &MonitorConfig,
    step: usize,
) -> ProgressVerdict {
    let observed = d_now.delta(d_past).upper_bound(F::of(cfg.z)).as_f64();
    let expected = cfg.expected_progress();
    let threshold = cfg.slack * expected;
    ProgressVerdict {
        triggered: observed < threshold,
        observed,
        threshold,
        expected,
        step,
    }
}

/// One judged step, on a scale where zero means exactly expert pace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub delta: f64,
    pub threshold: f64,
    pub triggered: bool,
}

impl From<&ProgressVerdict> for TraceRow {
    fn from(v: &ProgressVerdict) -> Self {
        Self {
            step: v.step,
            delta: v.observed - v.expected,
            threshold: v.threshold - v.expected,
            triggered: v.triggered,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry<F> {
    step: usize,
    prediction: Prediction<F>,
    /// Reward of the transition that led into this state.
    reward: Option<f64>,
}

/// The last `k + 1` predictions since the most recent clear, plus a log of
/// every verdict produced so far.
#[derive(Debug, Clone)]
pub struct ValueHistory<F> {
    k: usize,
    entries: VecDeque<Entry<F>>,
    trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Judgement {
    NotReady,
    Verdict(ProgressVerdict),
}

impl Judgement {
    pub fn triggered(&self) -> bool {
        matches!(self, Judgement::Verdict(v) if v.triggered)
    }
}

impl<F: Scalar> ValueHistory<F> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: VecDeque::with_capacity(k + 1),
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Forget all predictions (after a recovery). The verdict log is kept.
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRow> {
        self.trace
    }

    /// Append a prediction. Panics if the step index is not contiguous.
    pub fn push(&mut self, step: usize, prediction: Prediction<F>, reward: Option<f64>) {
        if let Some(last) = self.entries.back() {
            assert_eq!(last.step + 1, step, "history steps must be contiguous");
        }
        if self.entries.len() == self.k + 1 {
            self.entries.pop_front();
        }
        self.entries.push_back(Entry {
            step,
            prediction,
            reward,
        });
    }

    /// Judge the newest entry against the one `k` steps earlier.
    pub fn judge(&mut self, cfg: &MonitorConfig) -> Judgement {
        if self.entries.len() < self.k + 1 {
            return Judgement::NotReady;
        }
        let past = &self.entries[0];
        let now = &self.entries[self.k];
        let verdict = match (&past.prediction, &now.prediction) {
            (Prediction::Scalar(vp), Prediction::Scalar(vn)) => {
                let rewards: Vec<f64> = self.entries.iter().skip(1).map(|e| e.reward.unwrap_or(-1.0)).collect();
                let y =
                    bellman_target_scalar(vn.as_f64(), &rewards, self.k, cfg.gamma).expect("window holds k rewards");
                check_scalar(vp.as_f64(), y, cfg.margin, now.step)
            }
            (Prediction::Categorical(dp), Prediction::Categorical(dn)) => check_categorical(dp, dn, cfg, now.step),
            _ => panic!("mixed prediction kinds in one history"),
        };
        self.trace.push(TraceRow::from(&verdict));
        Judgement::Verdict(verdict)
    }
}

/// Predict on `obs`, append it, and judge once `k + 1` entries are present.
pub fn observe_and_judge<F: Scalar>(
    history: &mut ValueHistory<F>,
    model: &ValueModel<F>,
    obs: &Observation,
    reward: Option<f64>,
    step: usize,
    cfg: &MonitorConfig,
) -> Judgement {
    history.push(step, model.predict(obs), reward);
    history.judge(cfg)
}

/// Run the monitor passively over a recorded state sequence.
///
/// `observations[i]` is the state after `i` steps and `rewards[i]` the reward
/// of the transition into `observations[i + 1]`.
pub fn judge_sequence<F: Scalar>(
    model: &ValueModel<F>,
    observations: &[Observation],
    rewards: &[f64],
    cfg: &MonitorConfig,
) -> Vec<TraceRow> {
    let mut history = ValueHistory::new(cfg.k);
    for (i, obs) in observations.iter().enumerate() {
        let reward = if i == 0 { None } else { rewards.get(i - 1).copied() };
        observe_and_judge(&mut history, model, obs, reward, i, cfg);
    }
    history.into_trace()
}

pub const TRACE_HEADER: &str = "step,delta,threshold,triggered";

/// Write the verdict log as CSV.
pub fn emit_trace<F>(history: &ValueHistory<F>, sink: impl Write) -> std::io::Result<()> {
    write_trace_rows(&history.trace, sink)
}

pub fn write_trace_rows(rows: &[TraceRow], mut sink: impl Write) -> std::io::Result<()> {
    writeln!(sink, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(sink, "{},{},{},{}", r.step, r.delta, r.threshold, r.triggered)?;
    }
    sink.flush()
}
