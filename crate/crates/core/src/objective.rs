//! Logistic regression with the nonconvex regularizer `lambda * sum x^2 / (1 + x^2)`.
//!
//! Each worker `i` owns `f_i(x) = (1/m) sum_j log(1 + exp(-b_ij a_ij^T x)) + lambda * r(x)`
//! and the global objective is the plain average `f = (1/n) sum_i f_i`.

use std::ops::{Deref, DerefMut};

use crate::data::{sigmoid, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, norm_sq};
use crate::rng::RandomStream;

/// Model parameters or a gradient, length `d`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn standard_normal(d: usize, rng: &mut RandomStream) -> Self {
        Self((0..d).map(|_| rng.standard_normal()).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// `log(1 + exp(u))` without overflow.
#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    data: &'a Dataset,
    lambda: f64,
}

impl<'a> Objective<'a> {
    pub fn new(data: &'a Dataset, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::param(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self { data, lambda })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn dim(&self) -> usize {
        self.data.d()
    }

    fn check(&self, x: &[f64], worker: usize) -> Result<()> {
        if worker >= self.data.n() {
            return Err(Error::Index {
                what: "worker",
                index: worker,
                len: self.data.n(),
            });
        }
        self.check_dim(x)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.data.d() {
            return Err(Error::Dimension {
                expected: self.data.d(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn regularizer(&self, x: &[f64]) -> f64 {
        self.lambda * x.iter().map(|&v| v * v / (1.0 + v * v)).sum::<f64>()
    }

    /// `out += lambda * grad r(x)`.
    fn add_regularizer_grad(&self, x: &[f64], out: &mut [f64]) {
        if self.lambda == 0.0 {
            return;
        }
        for (o, &v) in out.iter_mut().zip(x) {
            let s = 1.0 + v * v;
            *o += self.lambda * (2.0 * v / (s * s));
        }
    }

    pub fn local_loss(&self, x: &[f64], worker: usize) -> Result<f64> {
        self.check(x, worker)?;
        let feats = self.data.shard_features(worker);
        let labels = self.data.shard_labels(worker);
        let d = self.data.d();
        let data_term: f64 = feats
            .chunks_exact(d)
            .zip(labels)
            .map(|(a, &b)| softplus(-b * dot(a, x)))
            .sum();
        Ok(data_term / self.data.m() as f64 + self.regularizer(x))
    }

    /// Average logistic gradient over the (sorted) sample indices of one
    /// worker plus the full regularizer gradient.
    fn batch_grad(&self, x: &[f64], worker: usize, samples: impl Iterator<Item = usize>, count: usize) -> ParamVector {
        let d = self.data.d();
        let feats = self.data.shard_features(worker);
        let labels = self.data.shard_labels(worker);
        let mut g = vec![0.0; d];
        for j in samples {
            let a = &feats[j * d..(j + 1) * d];
            let b = labels[j];
            let coef = -b * sigmoid(-b * dot(a, x));
            axpy(coef, a, &mut g);
        }
        let inv = count as f64;
        for v in g.iter_mut() {
            *v /= inv;
        }
        self.add_regularizer_grad(x, &mut g);
        ParamVector(g)
    }

    pub fn local_grad(&self, x: &[f64], worker: usize) -> Result<ParamVector> {
        self.check(x, worker)?;
        let m = self.data.m();
        Ok(self.batch_grad(x, worker, 0..m, m))
    }

    /// Mini-batch gradient: `batch_size` samples drawn uniformly without
    /// replacement, summed in increasing sample order so that a full batch
    /// reproduces [`Objective::local_grad`] exactly.
    pub fn stochastic_grad(
        &self,
        x: &[f64],
        worker: usize,
        batch_size: usize,
        rng: &mut RandomStream,
    ) -> Result<ParamVector> {
        self.check(x, worker)?;
        let m = self.data.m();
        if batch_size == 0 || batch_size > m {
            return Err(Error::param(format!("batch size {batch_size} outside [1, {m}]")));
        }
        let mut idx = rng.sample_without_replacement(m, batch_size);
        idx.sort_unstable();
        Ok(self.batch_grad(x, worker, idx.into_iter(), batch_size))
    }

    /// All local gradients at `x`, in worker order.
    pub fn local_grads(&self, x: &[f64]) -> Result<Vec<ParamVector>> {
        self.check_dim(x)?;
        let m = self.data.m();
        Ok((0..self.n()).map(|i| self.batch_grad(x, i, 0..m, m)).collect())
    }

    /// `(1/n) sum_i grad f_i(x)`: summed in worker order, then divided by `n`.
    pub fn mean_of(&self, grads: &[ParamVector]) -> ParamVector {
        let mut g = vec![0.0; self.dim()];
        for gi in grads {
            for (o, v) in g.iter_mut().zip(gi.iter()) {
                *o += v;
            }
        }
        let n = grads.len() as f64;
        for v in g.iter_mut() {
            *v /= n;
        }
        ParamVector(g)
    }

    pub fn global_grad(&self, x: &[f64]) -> Result<ParamVector> {
        Ok(self.mean_of(&self.local_grads(x)?))
    }

    pub fn global_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut total = 0.0;
        for i in 0..self.n() {
            total += self.local_loss(x, i)?;
        }
        Ok(total / self.n() as f64)
    }

    /// `(f(x), ||grad f(x)||^2)` in one pass over the data.
    pub fn loss_and_grad_norm_sq(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        let d = self.dim();
        let n = self.n();
        let m = self.data.m();
        let mut g = vec![0.0; d];
        let mut gi = vec![0.0; d];
        let mut data_total = 0.0;
        for i in 0..n {
            gi.iter_mut().for_each(|v| *v = 0.0);
            let feats = self.data.shard_features(i);
            let labels = self.data.shard_labels(i);
            let mut data_term = 0.0;
            for (a, &b) in feats.chunks_exact(d).zip(labels) {
                let margin = b * dot(a, x);
                data_term += softplus(-margin);
                axpy(-b * sigmoid(-margin), a, &mut gi);
            }
            data_total += data_term / m as f64;
            for (o, v) in g.iter_mut().zip(&gi) {
                *o += v / m as f64;
            }
        }
        let mut grad: Vec<f64> = g.iter().map(|v| v / n as f64).collect();
        self.add_regularizer_grad(x, &mut grad);
        Ok((data_total / n as f64 + self.regularizer(x), norm_sq(&grad)))
    }

    /// Empirical lower estimates `(zeta^2, G)` over the probe points:
    /// `max ||grad f_i - grad f||^2` and `max ||grad f_i||`.
    pub fn estimate_constants(&self, probes: &[ParamVector]) -> Result<(f64, f64)> {
        if probes.is_empty() {
            return Err(Error::param("at least one probe point is required"));
        }
        let mut zeta_sq: f64 = 0.0;
        let mut g_max: f64 = 0.0;
        for x in probes {
            let locals = self.local_grads(x)?;
            let mean = self.mean_of(&locals);
            for gi in &locals {
                let diff: f64 = gi.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                zeta_sq = zeta_sq.max(diff);
                g_max = g_max.max(gi.norm());
            }
        }
        Ok((zeta_sq, g_max))
    }

    /// Largest observed `||grad f_i(x) - grad f_i(y)|| / ||x - y||` over
    /// consecutive probe pairs and all workers. Pairs at distance zero are
    /// skipped; returns 0 when no usable pair exists.
    pub fn estimate_smoothness(&self, probes: &[ParamVector]) -> Result<f64> {
        let mut best: f64 = 0.0;
        let mut prev: Option<(&ParamVector, Vec<ParamVector>)> = None;
        for x in probes {
            let grads = self.local_grads(x)?;
            if let Some((px, pg)) = &prev {
                let dx = crate::linalg::dist(px, x);
                if dx > 0.0 {
                    for (a, b) in grads.iter().zip(pg) {
                        best = best.max(crate::linalg::dist(a, b) / dx);
                    }
                }
            }
            prev = Some((x, grads));
        }
        Ok(best)
    }

    /// Largest per-worker Monte-Carlo estimate of
    /// `E ||g_i(x) - grad f_i(x)||^2` over the probes.
    pub fn estimate_variance(
        &self,
        probes: &[ParamVector],
        batch_size: usize,
        draws: usize,
        rng: &mut RandomStream,
    ) -> Result<f64> {
        if batch_size >= self.data.m() {
            return Ok(0.0);
        }
        let mut best: f64 = 0.0;
        for x in probes {
            for i in 0..self.n() {
                let exact = self.local_grad(x, i)?;
                let mut acc = 0.0;
                for _ in 0..draws.max(1) {
                    let g = self.stochastic_grad(x, i, batch_size, rng)?;
                    acc += g.iter().zip(exact.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                best = best.max(acc / draws.max(1) as f64);
            }
        }
        Ok(best)
    }
}
