//! Value functions trained by Monte Carlo regression on expert demonstrations.
//!
//! Two heads share the same one-hidden-layer approximator:
//!
//! * **scalar**: squared-error regression onto the remaining-step return
//!   `-(T - t)` (rewards of -1 per remaining step, zero at success, `gamma = 1`
//!   by default);
//! * **categorical**: cross-entropy against a softened one-hot over 50
//!   progress bins, centred on `round(50 t / T)`.

pub mod net;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demogen::Dataset;
use crate::dist::{CategoricalValueDist, BINS};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::types::{Observation, Trajectory, OBS_DIM};
use net::{Adam, Mlp, Sample, Target};

pub const HIDDEN_WIDTH: usize = 64;

const PURPOSE_INIT: u64 = 21;
const PURPOSE_BATCH: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Scalar,
    Categorical,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Backend::Scalar),
            "categorical" => Ok(Backend::Categorical),
            other => Err(Error::Usage(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Discount for the scalar label.
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 20_000,
            seed: 0,
            gamma: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config(
                "learning rate, batch size and steps must be positive".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Remaining-step return from step `t`: `-sum_{i=0}^{T-t-1} gamma^i`.
pub fn scalar_target(traj: &Trajectory, t: usize, gamma: f64) -> Result<f64> {
    let len = traj.len();
    if t >= len {
        return Err(Error::Validation(format!("step {t} outside 0..{len}")));
    }
    // Summed directly: the closed form loses digits as gamma approaches 1.
    let mut g = 0.0;
    for _ in t..len {
        g = -1.0 + gamma * g;
    }
    Ok(g)
}

/// Soft progress target: one third of the mass on each of `b - 1, b, b + 1`
/// with `b = round(50 t / T)`, bins outside the range dropped and the rest
/// renormalised. `t = T` (the success state) is accepted.
pub fn categorical_target<F: Scalar>(traj: &Trajectory, t: usize) -> Result<CategoricalValueDist<F>> {
    let len = traj.len();
    if len == 0 || t > len {
        return Err(Error::Validation(format!("step {t} outside 0..={len}")));
    }
    Ok(soft_progress_target(t, len))
}

pub(crate) fn soft_progress_target<F: Scalar>(t: usize, len: usize) -> CategoricalValueDist<F> {
    let b = ((BINS as f64 * t as f64 / len as f64).round() as i64).clamp(0, BINS as i64 - 1);
    let bins: Vec<usize> = (b - 1..=b + 1)
        .filter(|&i| (0..BINS as i64).contains(&i))
        .map(|i| i as usize)
        .collect();
    let mass = F::one() / F::of(bins.len() as f64);
    let pairs: Vec<(usize, F)> = bins.into_iter().map(|i| (i, mass)).collect();
    CategoricalValueDist::from_pairs(&pairs).expect("soft target is normalised")
}

/// Output of a value model for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", rename_all = "snake_case")]
pub enum Prediction<F> {
    Scalar(F),
    Categorical(CategoricalValueDist<F>),
}

impl<F: Scalar> Prediction<F> {
    /// Scalar summary: the value itself, or the expected progress fraction.
    pub fn summary(&self) -> F {
        match self {
            Prediction::Scalar(v) => *v,
            Prediction::Categorical(d) => d.mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub dataset_hash: String,
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Mean batch loss over the first 100 steps.
    pub initial_loss: f64,
    /// Mean batch loss over the last 100 steps.
    pub final_loss: f64,
    /// Mean expert episode length of the training set.
    pub mean_expert_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel<F> {
    pub backend: Backend,
    pub feature_mean: Vec<F>,
    pub feature_std: Vec<F>,
    pub net: Mlp<F>,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
struct ModelFile<F> {
    backend: Backend,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    w1: Vec<F>,
    b1: Vec<F>,
    w2: Vec<F>,
    b2: Vec<F>,
    feature_mean: Vec<F>,
    feature_std: Vec<F>,
    metadata: TrainMeta,
}

impl<F: Scalar> ValueModel<F> {
    pub fn output_dim(backend: Backend) -> usize {
        match backend {
            Backend::Scalar => 1,
            Backend::Categorical => BINS,
        }
    }

    pub fn standardize(&self, features: &[f64]) -> Result<Vec<F>> {
        if features.len() != self.net.input_dim {
            return Err(Error::Dimension {
                expected: self.net.input_dim,
                found: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&x, (&m, &s))| (F::of(x) - m) / s)
            .collect())
    }

    /// Predict from a raw feature vector.
    pub fn predict_features(&self, features: &[f64]) -> Result<Prediction<F>> {
        let x = self.standardize(features)?;
        Ok(self.predict_standardized(&x))
    }

    pub fn predict(&self, obs: &Observation) -> Prediction<F> {
        self.predict_features(obs.as_slice())
            .expect("observation width matches model")
    }

    pub(crate) fn predict_standardized(&self, x: &[F]) -> Prediction<F> {
        let (_, out) = self.net.forward(x);
        match self.backend {
            Backend::Scalar => Prediction::Scalar(out[0]),
            Backend::Categorical => Prediction::Categorical(
                CategoricalValueDist::from_weights(net::softmax(&out)).expect("softmax output normalises"),
            ),
        }
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            backend: self.backend,
            input_dim: self.net.input_dim,
            hidden_dim: self.net.hidden_dim,
            output_dim: self.net.output_dim,
            w1: self.net.w1.clone(),
            b1: self.net.b1.clone(),
            w2: self.net.w2.clone(),
            b2: self.net.b2.clone(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            metadata: self.meta.clone(),
        };
        serde_json::to_string(&file).expect("model serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile<F> = serde_json::from_str(s)?;
        let net = Mlp {
            input_dim: f.input_dim,
            hidden_dim: f.hidden_dim,
            output_dim: f.output_dim,
            w1: f.w1,
            b1: f.b1,
            w2: f.w2,
            b2: f.b2,
        };
        net.validate()?;
        if net.output_dim != Self::output_dim(f.backend) {
            return Err(Error::Validation(format!(
                "{:?} backend needs {} outputs, file has {}",
                f.backend,
                Self::output_dim(f.backend),
                net.output_dim
            )));
        }
        if f.feature_mean.len() != net.input_dim || f.feature_std.len() != net.input_dim {
            return Err(Error::Validation(
                "standardisation vectors do not match input width".into(),
            ));
        }
        Ok(Self {
            backend: f.backend,
            feature_mean: f.feature_mean,
            feature_std: f.feature_std,
            net,
            meta: f.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Every `(trajectory, step)` pair of the dataset as a standardised sample.
pub fn training_samples<F: Scalar>(dataset: &Dataset, backend: Backend, gamma: f64) -> Result<Vec<Sample<F>>> {
    let mean = &dataset.meta.feature_mean;
    let std = &dataset.meta.feature_std;
    let mut samples = Vec::with_capacity(dataset.num_transitions());
    for traj in &dataset.trajectories {
        for (t, tr) in traj.transitions.iter().enumerate() {
            let input = tr
                .obs
                .0
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(&x, (&m, &s))| F::of((x - m) / s))
                .collect();
            let target = match backend {
                Backend::Scalar => Target::Scalar(F::of(scalar_target(traj, t, gamma)?)),
                Backend::Categorical => Target::Distribution(soft_progress_target::<F>(t, traj.len()).probs().to_vec()),
            };
            samples.push(Sample { input, target });
        }
    }
    Ok(samples)
}

/// Fit a value model with minibatch Adam on uniformly drawn transitions.
pub fn train<F: Scalar>(dataset: &Dataset, backend: Backend, cfg: &TrainConfig) -> Result<ValueModel<F>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    let samples = training_samples::<F>(dataset, backend, cfg.gamma)?;
    let stream = SeedStream::new(cfg.seed, 0);
    let mut init_rng = stream.fork(PURPOSE_INIT).rng();
    let mut batch_rng = stream.fork(PURPOSE_BATCH).rng();

    let out_dim = ValueModel::<F>::output_dim(backend);
    let mut net = Mlp::<F>::new(OBS_DIM, HIDDEN_WIDTH, out_dim, &mut init_rng);
    if backend == Backend::Scalar {
        // Start the output at the mean label so early steps fit shape, not offset.
        let mean_label = samples
            .iter()
            .map(|s| match s.target {
                Target::Scalar(v) => v.as_f64(),
                Target::Distribution(_) => 0.0,
            })
            .sum::<f64>()
            / samples.len() as f64;
        net.b2[0] = F::of(mean_label);
    }

    let mut params = net.params();
    let mut adam = Adam::new(F::of(cfg.learning_rate), params.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut batch: Vec<Sample<F>> = Vec::with_capacity(cfg.batch_size);
    use rand::Rng;
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(samples[batch_rng.random_range(0..samples.len())].clone());
        }
        let (loss, grad) = net.loss_and_grad(&batch);
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        losses.push(loss);
        adam.step(&mut params, &grad);
        net.set_params(&params);
    }

    let window = losses.len().min(100);
    let mean_of = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let meta = TrainMeta {
        dataset_hash: dataset.fingerprint(),
        steps: cfg.steps,
        seed: cfg.seed,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        gamma: cfg.gamma,
        initial_loss: mean_of(&losses[..window]),
        final_loss: mean_of(&losses[losses.len() - window..]),
        mean_expert_length: dataset.meta.mean_length,
    };
    Ok(ValueModel {
        backend,
        feature_mean: dataset.meta.feature_mean.iter().map(|&v| F::of(v)).collect(),
        feature_std: dataset.meta.feature_std.iter().map(|&v| F::of(v)).collect(),
        net,
        meta,
    })
}

/// Spearman rank correlation; zero when either side has no variance.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Average ranks (ties share the mean of their positions).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Per-trajectory Spearman correlation between step index and predicted value.
pub fn monotonicity_report<F: Scalar>(model: &ValueModel<F>, demos: &Dataset) -> Vec<f64> {
    monotonicity_by(demos, |obs| model.predict(obs).summary().as_f64())
}

/// Same as [`monotonicity_report`] for an arbitrary value oracle.
pub fn monotonicity_by(demos: &Dataset, mut value: impl FnMut(&Observation) -> f64) -> Vec<f64> {
    demos
        .trajectories
        .iter()
        .map(|traj| {
            let steps: Vec<f64> = (0..traj.len()).map(|t| t as f64).collect();
            let values: Vec<f64> = traj.transitions.iter().map(|tr| value(&tr.obs)).collect();
            spearman(&steps, &values)
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
