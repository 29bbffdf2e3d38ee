//! One-hidden-layer tanh network with analytic gradients.
//!
//! Parameters are stored row-major: `w1` is `hidden x input`, `w2` is
//! `output x hidden`. The flat parameter order used by [`Mlp::params`] and
//! [`Mlp::loss_and_grad`] is `w1, b1, w2, b2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Mlp<F> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: Vec<F>,
}

/// Regression target for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<F> {
    /// Squared error against one output.
    Scalar(F),
    /// Cross-entropy of the softmax output against a probability vector.
    Distribution(Vec<F>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F> {
    pub input: Vec<F>,
    pub target: Target<F>,
}

impl<F: Scalar> Mlp<F> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<F> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| F::of(rng.random_range(-a..a))).collect()
        };
        let w1 = glorot(input_dim, hidden_dim, input_dim * hidden_dim);
        let w2 = glorot(hidden_dim, output_dim, hidden_dim * output_dim);
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![F::zero(); hidden_dim],
            w2,
            b2: vec![F::zero(); output_dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w1.len() == self.input_dim * self.hidden_dim
            && self.b1.len() == self.hidden_dim
            && self.w2.len() == self.hidden_dim * self.output_dim
            && self.b2.len() == self.output_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("layer shapes disagree with weight arrays".into()))
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn params(&self) -> Vec<F> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[F]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    /// Hidden activations and raw outputs.
    pub fn forward(&self, x: &[F]) -> (Vec<F>, Vec<F>) {
        debug_assert_eq!(x.len(), self.input_dim);
        let h: Vec<F> = (0..self.hidden_dim)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                let z = row.iter().zip(x).fold(self.b1[j], |acc, (&w, &v)| acc + w * v);
                z.tanh()
            })
            .collect();
        let out = (0..self.output_dim)
            .map(|k| {
                let row = &self.w2[k * self.hidden_dim..(k + 1) * self.hidden_dim];
                row.iter().zip(&h).fold(self.b2[k], |acc, (&w, &v)| acc + w * v)
            })
            .collect();
        (h, out)
    }

    /// Per-sample loss and its gradient with respect to the raw outputs.
    fn output_loss(out: &[F], target: &Target<F>) -> (F, Vec<F>) {
        match target {
            Target::Scalar(t) => {
                let e = out[0] - *t;
                (e * e, vec![F::of(2.0) * e])
            }
            Target::Distribution(t) => {
                let probs = softmax(out);
                let max = out.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = max + out.iter().fold(F::zero(), |a, &z| a + (z - max).exp()).ln();
                let loss = t
                    .iter()
                    .zip(out)
                    .fold(F::zero(), |acc, (&ti, &zi)| acc - ti * (zi - lse));
                let grad = probs.iter().zip(t).map(|(&p, &ti)| p - ti).collect();
                (loss, grad)
            }
        }
    }

    /// Mean loss over a batch.
    pub fn loss(&self, batch: &[Sample<F>]) -> F {
        let n = F::of(batch.len() as f64);
        batch
            .iter()
            .map(|s| Self::output_loss(&self.forward(&s.input).1, &s.target).0)
            .fold(F::zero(), |a, b| a + b)
            / n
    }

    /// Mean loss over a batch and its gradient in flat parameter order.
    pub fn loss_and_grad(&self, batch: &[Sample<F>]) -> (F, Vec<F>) {
        let (ni, nh, no) = (self.input_dim, self.hidden_dim, self.output_dim);
        let mut grad = vec![F::zero(); self.num_params()];
        let (gw1, rest) = grad.split_at_mut(ni * nh);
        let (gb1, rest) = rest.split_at_mut(nh);
        let (gw2, gb2) = rest.split_at_mut(nh * no);
        let scale = F::one() / F::of(batch.len() as f64);
        let mut total = F::zero();
        let mut dh = vec![F::zero(); nh];
        for s in batch {
            let (h, out) = self.forward(&s.input);
            let (loss, dout) = Self::output_loss(&out, &s.target);
            total = total + loss;
            dh.iter_mut().for_each(|v| *v = F::zero());
            for k in 0..no {
                let g = dout[k] * scale;
                gb2[k] = gb2[k] + g;
                let row = &self.w2[k * nh..(k + 1) * nh];
                for j in 0..nh {
                    gw2[k * nh + j] = gw2[k * nh + j] + g * h[j];
                    dh[j] = dh[j] + g * row[j];
                }
            }
            for j in 0..nh {
                let da = dh[j] * (F::one() - h[j] * h[j]);
                gb1[j] = gb1[j] + da;
                for i in 0..ni {
                    gw1[j * ni + i] = gw1[j * ni + i] + da * s.input[i];
                }
            }
        }
        (total * scale, grad)
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = e.iter().fold(F::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / sum).collect()
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    lr: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(lr: F, n: usize) -> Self {
        Self {
            lr,
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        self.t += 1;
        let (b1, b2) = (F::of(Self::BETA1), F::of(Self::BETA2));
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - self.lr * mh / (vh.sqrt() + F::of(Self::EPS));
        }
    }
}
