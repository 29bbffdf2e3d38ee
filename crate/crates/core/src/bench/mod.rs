//! Matched-pair benchmark harness.
//!
//! For every `(variant, seed, trial)` all methods reset the world from the
//! same [`SeedStream`], so they face the same hidden parameter, the same
//! initial object pose and, until their actions diverge, the same policy
//! draws.

mod report;
mod summary;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{read_records, write_records, write_report, CSV_HEADER};
pub use summary::{grasp_distances, summarize, Summary, SummaryRow};

use crate::demogen::{read_dataset, Dataset};
use crate::deploy::{interval_period, run_episode, DeployConfig, EpisodeResult, TriggerMode, INTERVAL_BUFFER};
use crate::error::{Error, Result};
use crate::graspworld::{ScenarioConfig, Variant};
use crate::monitor::MonitorConfig;
use crate::policy::{build_policy, PolicyParams, RetrievalPolicy};
use crate::rng::SeedStream;
use crate::valuefn::ValueModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BaseNoRecovery,
    IntervalRecovery,
    OursNoSkew,
    OursFull,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::BaseNoRecovery,
        Method::IntervalRecovery,
        Method::OursNoSkew,
        Method::OursFull,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::BaseNoRecovery => "base_no_recovery",
            Method::IntervalRecovery => "interval_recovery",
            Method::OursNoSkew => "ours_no_skew",
            Method::OursFull => "ours_full",
        }
    }

    /// Deployment flags for this method on top of `base`.
    pub fn deploy_config(&self, base: &DeployConfig, interval: usize) -> DeployConfig {
        let mut cfg = base.clone();
        match self {
            Method::BaseNoRecovery => {
                cfg.trigger = TriggerMode::Off;
                cfg.skew_enabled = false;
            }
            Method::IntervalRecovery => {
                cfg.trigger = TriggerMode::Interval { period: interval };
                cfg.skew_enabled = false;
            }
            Method::OursNoSkew => {
                cfg.trigger = TriggerMode::Monitor;
                cfg.skew_enabled = false;
            }
            Method::OursFull => {
                cfg.trigger = TriggerMode::Monitor;
                cfg.skew_enabled = true;
            }
        }
        cfg
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub variants: Vec<Variant>,
    pub methods: Vec<Method>,
    pub trials_per_seed: usize,
    /// One value model per seed; the seed also drives the trial streams.
    pub seeds: Vec<u64>,
    pub dataset: PathBuf,
    pub value_models: Vec<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub deploy: DeployConfig,
    pub policy: PolicyParams,
    /// Interval baseline buffer as a fraction of the mean expert length.
    pub interval_buffer: f64,
    /// Keep per-step monitor traces in the trial records.
    pub keep_traces: bool,
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Blocked, Variant::AdversarialSlip],
            methods: Method::ALL.to_vec(),
            trials_per_seed: 100,
            seeds: vec![0, 1, 2],
            dataset: PathBuf::new(),
            value_models: Vec::new(),
            out_dir: None,
            scenario: ScenarioConfig::default(),
            deploy: DeployConfig::default(),
            policy: PolicyParams::default(),
            interval_buffer: INTERVAL_BUFFER,
            keep_traces: false,
            threads: None,
        }
    }
}

impl BenchConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials_per_seed == 0 || self.seeds.is_empty() {
            return Err(Error::Config("need at least one trial and one seed".into()));
        }
        if self.variants.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("need at least one variant and one method".into()));
        }
        if self.value_models.len() != self.seeds.len() {
            return Err(Error::Config(format!(
                "{} seeds but {} value models",
                self.seeds.len(),
                self.value_models.len()
            )));
        }
        self.scenario.validate()?;
        self.policy.validate()
    }

    /// Resolve relative input paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        self.value_models.iter_mut().for_each(fix);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub variant: Variant,
    pub method: Method,
    pub seed: u64,
    pub trial: usize,
    pub horizon: usize,
    pub mean_expert_length: f64,
    #[serde(flatten)]
    pub result: EpisodeResult,
}

impl TrialRecord {
    /// Steps to success, with failures scored at the horizon.
    pub fn steps_to_success(&self) -> usize {
        if self.result.success {
            self.result.steps
        } else {
            self.horizon
        }
    }
}

/// Everything a benchmark run needs, loaded once.
pub struct BenchContext {
    pub dataset: Dataset,
    pub policy: RetrievalPolicy,
    pub models: Vec<ValueModel<f64>>,
}

impl BenchContext {
    /// Check every artifact path before loading anything.
    pub fn load(cfg: &BenchConfig) -> Result<Self> {
        let missing: Vec<String> = std::iter::once(&cfg.dataset)
            .chain(&cfg.value_models)
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing artifacts: {}", missing.join(", "))));
        }
        let dataset = read_dataset(&cfg.dataset)?;
        let policy = build_policy(&dataset, cfg.policy.clone())?;
        let models = cfg
            .value_models
            .iter()
            .map(ValueModel::load)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            policy,
            models,
        })
    }
}

/// Scenario stream for trial `trial` under model seed `seed`.
pub fn scenario_stream(seed: u64, trial: usize) -> SeedStream {
    SeedStream::new(seed, trial as u64)
}

/// Run every `(variant, seed, trial, method)` combination.
pub fn run_matched(cfg: &BenchConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let ctx = BenchContext::load(cfg)?;
    run_matched_with(cfg, &ctx)
}

pub fn run_matched_with(cfg: &BenchConfig, ctx: &BenchContext) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let mean_len = ctx.dataset.meta.mean_length;
    let interval = interval_period(mean_len, cfg.interval_buffer)?;
    let mut jobs = Vec::new();
    for (vi, &variant) in cfg.variants.iter().enumerate() {
        for si in 0..cfg.seeds.len() {
            for trial in 0..cfg.trials_per_seed {
                for (mi, &method) in cfg.methods.iter().enumerate() {
                    jobs.push((vi, si, trial, mi, variant, method));
                }
            }
        }
    }
    let run = || {
        jobs.par_iter()
            .map(|&(_, si, trial, _, variant, method)| {
                let model = &ctx.models[si];
                let mut base = cfg.deploy.clone();
                base.monitor = MonitorConfig {
                    backend: model.backend,
                    mean_expert_length: mean_len,
                    ..cfg.deploy.monitor.clone()
                };
                let deploy = method.deploy_config(&base, interval);
                let sim = cfg.scenario.with_variant(variant);
                let seed = cfg.seeds[si];
                let mut result = run_episode(&sim, &ctx.policy, model, &deploy, scenario_stream(seed, trial))?;
                if !cfg.keep_traces {
                    result.trace.clear();
                }
                Ok(TrialRecord {
                    variant,
                    method,
                    seed,
                    trial,
                    horizon: deploy.horizon,
                    mean_expert_length: mean_len,
                    result,
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let records = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    // par_iter preserves job order, which is already the canonical key order.
    Ok(records)
}

#[cfg(test)]
pub(crate) fn fake_record(
    variant: Variant,
    method: Method,
    seed: u64,
    trial: usize,
    success: bool,
    steps: usize,
) -> TrialRecord {
    use crate::graspworld::HiddenParam;
    use crate::types::{Observation, OBS_DIM};
    TrialRecord {
        variant,
        method,
        seed,
        trial,
        horizon: 400,
        mean_expert_length: 25.0,
        result: EpisodeResult {
            success,
            steps,
            recoveries: 0,
            recovery_steps: Vec::new(),
            recovery_attempt_lengths: Vec::new(),
            grasp_attempts: Vec::new(),
            avoid_points: Vec::new(),
            trace: Vec::new(),
            initial_obs: Observation([0.5; OBS_DIM]),
            hidden: HiddenParam::nominal(),
        },
    }
}
