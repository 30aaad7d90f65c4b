//! MI and GMI objectives with hand-assembled gradients.
//!
//! Both rates have the form
//!
//! ```text
//! R = H(p) + Σ_m p_m E[ℓ_m(c̃_m + Z)] / ln 2
//! ```
//!
//! with `ℓ_m(y) = ln Q(c_m | y)` for symbol-metric decoding and
//! `ℓ_m(y) = Σ_k ln q(b_k = label_k(m) | y)` for bit-metric decoding. The
//! channel output is reparameterized as `c̃_m + Z`, so the noise draw (or the
//! quadrature node) is held fixed while differentiating. The derivative with
//! respect to `p_i` then has three parts:
//!
//! * the entropy derivative `-(ln p_i + 1)`,
//! * the pathwise part: the derivative of `ℓ` through the priors inside the
//!   posterior and through the power normalization,
//! * the score part `E[ℓ_i(c̃_i + Z)]`, coming from the `p_m` that weights
//!   each symbol's expectation. A plain batch average of `ℓ` hides this
//!   weight inside the sampling distribution and loses the term.
//!
//! In batch mode the score part for symbol `i` is the mean of `ℓ` over the
//! samples drawn with index `i`, multiplied by `p_i`. The probability
//! gradient is chained through the softmax into the logits.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{gh_grid, AwgnChannel, Channel};
use crate::constellation::Constellation;
use crate::demapper::log_sum_exp;
use crate::error::Result;
use crate::sampler::{sample_batch, Batch};

/// Default Gauss-Hermite nodes per real dimension.
pub const DEFAULT_GH_NODES: usize = 32;

const BATCH_CHUNK: usize = 256;

/// Below this bit-subset posterior mass the log-domain path is used.
const SUBSET_MASS_FLOOR: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Mutual information, symbol-metric decoding.
    Mi,
    /// Generalized mutual information, bit-metric decoding.
    Gmi,
}

impl FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mi" => Ok(ObjectiveKind::Mi),
            "gmi" => Ok(ObjectiveKind::Gmi),
            _ => Err(format!("unknown objective '{s}' (expected mi or gmi)")),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Mi => "mi",
            ObjectiveKind::Gmi => "gmi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Monte Carlo over one quota-sampled batch.
    BatchMc { batch: usize, seed: u64 },
    /// Gauss-Hermite tensor rule with `nodes` points per real dimension.
    ExactQuadrature { nodes: usize },
}

impl Default for EvalMode {
    fn default() -> Self {
        EvalMode::ExactQuadrature { nodes: DEFAULT_GH_NODES }
    }
}

/// Derivatives of a rate (bits) with respect to the raw points and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `∂R/∂Re c_m + i ∂R/∂Im c_m`.
    pub d_points: Vec<Complex64>,
    pub d_logits: Vec<f64>,
}

impl Gradients {
    pub fn zeros(m: usize) -> Self {
        Self { d_points: vec![Complex64::new(0.0, 0.0); m], d_logits: vec![0.0; m] }
    }

    /// Logits first, then interleaved real and imaginary point components.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.d_logits.clone();
        out.extend(self.d_points.iter().flat_map(|g| [g.re, g.im]));
        out
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest coordinate difference, relative to the Euclidean norm of
    /// `reference`.
    pub fn relative_error(&self, reference: &Gradients) -> f64 {
        let diff = self
            .flatten()
            .iter()
            .zip(reference.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        diff / reference.norm().max(f64::MIN_POSITIVE)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradOptions {
    /// Include the score (correction) part of the probability gradient.
    pub correction: bool,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self { correction: true }
    }
}

/// Rate and optional gradients from one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Unclamped rate in bits.
    pub rate: f64,
    pub entropy: f64,
    /// `-Σ_m p_m E[ℓ_m] / ln 2`; the cross entropy for MI.
    pub cross_entropy: f64,
    pub gradients: Option<Gradients>,
}

impl Evaluation {
    /// The rate as reported, `max(0, rate)`.
    pub fn reported(&self) -> f64 {
        self.rate.max(0.0)
    }
}

struct Model<'a> {
    kind: ObjectiveKind,
    probs: Vec<f64>,
    log_p: Vec<f64>,
    raw: &'a [Complex64],
    points: Vec<Complex64>,
    scale: f64,
    inv_sigma2: f64,
    labels: &'a [u32],
    bits: usize,
    // members[2k + b]: indices whose label bit k equals b
    members: Vec<Vec<usize>>,
}

#[derive(Clone)]
struct Acc {
    value: f64,
    // Σ w ℓ over samples of each symbol
    score: Vec<f64>,
    // p_j ∂/∂p_j of the pathwise part through the priors
    prior: Vec<f64>,
    // ∂/∂c̃_j
    points: Vec<Complex64>,
}

impl Acc {
    fn new(m: usize) -> Self {
        Self {
            value: 0.0,
            score: vec![0.0; m],
            prior: vec![0.0; m],
            points: vec![Complex64::new(0.0, 0.0); m],
        }
    }

    fn merge(mut self, other: &Acc) -> Self {
        self.value += other.value;
        for (a, b) in self.score.iter_mut().zip(&other.score) {
            *a += b;
        }
        for (a, b) in self.prior.iter_mut().zip(&other.prior) {
            *a += b;
        }
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            *a += b;
        }
        self
    }
}

impl<'a> Model<'a> {
    fn new(c: &'a Constellation, channel: &AwgnChannel, kind: ObjectiveKind) -> Result<Self> {
        let probs = c.probabilities();
        let points = c.normalized_points()?;
        let scale = c.mean_power().sqrt().recip();
        let members = (0..c.bits())
            .flat_map(|k| [false, true].map(|b| (0..c.len()).filter(|&j| c.label_bit(j, k) == b).collect()))
            .collect();
        Ok(Self {
            kind,
            probs,
            log_p: c.log_probabilities(),
            raw: c.points(),
            points,
            scale,
            inv_sigma2: channel.sigma2().recip(),
            labels: c.labels(),
            bits: c.bits(),
            members,
        })
    }

    fn m(&self) -> usize {
        self.points.len()
    }

    fn bit(&self, j: usize, k: usize) -> bool {
        (self.labels[j] >> (self.bits - 1 - k)) & 1 == 1
    }

    /// Adds `w ℓ_m(c̃_m + z)` and, if requested, its parameter derivatives.
    fn accumulate(&self, m: usize, z: Complex64, w: f64, grad: bool, acc: &mut Acc, scratch: &mut Scratch) {
        let n = self.m();
        let Scratch { diff, a, u, r } = scratch;
        let origin = self.points[m] + z;
        for j in 0..n {
            diff[j] = origin - self.points[j];
            a[j] = self.log_p[j] - diff[j].norm_sqr() * self.inv_sigma2;
        }
        let lse = log_sum_exp(a.iter().copied());

        let ell = match self.kind {
            ObjectiveKind::Mi => {
                if grad {
                    for j in 0..n {
                        u[j] = -(a[j] - lse).exp();
                    }
                    u[m] += 1.0;
                }
                a[m] - lse
            }
            ObjectiveKind::Gmi => {
                for j in 0..n {
                    r[j] = (a[j] - lse).exp();
                    u[j] = 0.0;
                }
                let mut ell = 0.0;
                for k in 0..self.bits {
                    let subset = &self.members[2 * k + self.bit(m, k) as usize];
                    let mass: f64 = subset.iter().map(|&j| r[j]).sum();
                    if mass > SUBSET_MASS_FLOOR {
                        ell += mass.ln();
                        if grad {
                            for &j in subset {
                                u[j] += r[j] / mass;
                            }
                        }
                    } else {
                        // the posterior mass of this bit value underflows
                        let lse_s = log_sum_exp(subset.iter().map(|&j| a[j]));
                        ell += lse_s - lse;
                        if grad {
                            for &j in subset {
                                u[j] += (a[j] - lse_s).exp();
                            }
                        }
                    }
                }
                if grad {
                    let k = self.bits as f64;
                    for j in 0..n {
                        u[j] -= k * r[j];
                    }
                }
                ell
            }
        };

        acc.value += w * ell;
        acc.score[m] += w * ell;
        if grad {
            let two = 2.0 * self.inv_sigma2 * w;
            for j in 0..n {
                acc.prior[j] += w * u[j];
                // a_j depends on c̃_m - c̃_j through -|diff_j|² / sigma2
                let e = diff[j] * (two * u[j]);
                acc.points[j] += e;
                acc.points[m] -= e;
            }
        }
    }

    /// Turns accumulated sums into the rate and gradients in bits.
    /// `score_scale[i]` maps the accumulated `Σ w ℓ` of symbol `i` onto
    /// `p_i E[ℓ_i]`.
    fn finish(&self, acc: Acc, score_scale: &[f64], grad: bool, options: GradOptions) -> Evaluation {
        let n = self.m();
        let entropy_nats: f64 = self
            .probs
            .iter()
            .zip(&self.log_p)
            .map(|(p, lp)| if *p > 0.0 { -p * lp } else { 0.0 })
            .sum();
        let rate = (entropy_nats + acc.value) / LN_2;
        let entropy = entropy_nats.max(0.0) / LN_2;
        let cross_entropy = -acc.value / LN_2;

        let gradients = grad.then(|| {
            // h_j = p_j ∂R/∂p_j in nats
            let mut h: Vec<f64> = self
                .probs
                .iter()
                .zip(&self.log_p)
                .map(|(p, lp)| -p * (lp + 1.0))
                .collect();
            for j in 0..n {
                h[j] += acc.prior[j];
                if options.correction {
                    h[j] += acc.score[j] * score_scale[j];
                }
            }

            // c̃ = s c with s = (Σ p |c|²)^(-1/2)
            let s = self.scale;
            let d_scale: f64 = acc.points.iter().zip(self.raw).map(|(g, c)| g.re * c.re + g.im * c.im).sum();
            let s3 = s * s * s;
            let mut d_points = Vec::with_capacity(n);
            for (j, hj) in h.iter_mut().enumerate() {
                let c = self.raw[j];
                d_points.push((acc.points[j] * s - c * (d_scale * s3 * self.probs[j])) / LN_2);
                *hj -= self.probs[j] * d_scale * s3 * c.norm_sqr() / 2.0;
            }

            let total: f64 = h.iter().sum();
            let d_logits = h.iter().zip(&self.probs).map(|(hj, pj)| (hj - pj * total) / LN_2).collect();
            Gradients { d_points, d_logits }
        });

        Evaluation { rate, entropy, cross_entropy, gradients }
    }
}

struct Scratch {
    diff: Vec<Complex64>,
    a: Vec<f64>,
    u: Vec<f64>,
    r: Vec<f64>,
}

impl Scratch {
    fn new(m: usize) -> Self {
        Self { diff: vec![Complex64::new(0.0, 0.0); m], a: vec![0.0; m], u: vec![0.0; m], r: vec![0.0; m] }
    }
}

/// Exact evaluation with a Gauss-Hermite tensor rule of `nodes` points per
/// real dimension.
pub fn evaluate_exact(
    c: &Constellation,
    channel: &AwgnChannel,
    kind: ObjectiveKind,
    nodes: usize,
    grad: bool,
    options: GradOptions,
) -> Result<Evaluation> {
    let model = Model::new(c, channel, kind)?;
    let noise = channel.noise_nodes(&gh_grid(nodes)?);
    let n = model.m();
    let partials: Vec<Acc> = (0..n)
        .into_par_iter()
        .map(|m| {
            let mut acc = Acc::new(n);
            let mut scratch = Scratch::new(n);
            for &(z, w) in &noise {
                model.accumulate(m, z, model.probs[m] * w, grad, &mut acc, &mut scratch);
            }
            acc
        })
        .collect();
    let acc = partials.iter().fold(Acc::new(n), Acc::merge);
    Ok(model.finish(acc, &vec![1.0; n], grad, options))
}

/// Evaluation on a given batch of symbol indices and recorded channel noise.
pub fn evaluate_on_batch(
    c: &Constellation,
    channel: &AwgnChannel,
    kind: ObjectiveKind,
    batch: &Batch,
    noise: &[Complex64],
    grad: bool,
    options: GradOptions,
) -> Result<Evaluation> {
    let model = Model::new(c, channel, kind)?;
    let n = model.m();
    let size = batch.len();
    let w = (size as f64).recip();
    let partials: Vec<Acc> = batch
        .indices
        .par_chunks(BATCH_CHUNK)
        .zip(noise.par_chunks(BATCH_CHUNK))
        .map(|(idx, z)| {
            let mut acc = Acc::new(n);
            let mut scratch = Scratch::new(n);
            for (&m, &z) in idx.iter().zip(z) {
                model.accumulate(m, z, w, grad, &mut acc, &mut scratch);
            }
            acc
        })
        .collect();
    let acc = partials.iter().fold(Acc::new(n), Acc::merge);
    // Σ w ℓ over symbol i is (counts_i / B) times the conditional mean
    let score_scale: Vec<f64> = batch
        .counts
        .iter()
        .zip(&model.probs)
        .map(|(&k, p)| if k > 0 { p * size as f64 / k as f64 } else { 0.0 })
        .collect();
    Ok(model.finish(acc, &score_scale, grad, options))
}

/// Draws a quota batch, sends it through the channel, and evaluates on it.
pub fn evaluate_batch<R: Rng + ?Sized>(
    c: &Constellation,
    channel: &AwgnChannel,
    kind: ObjectiveKind,
    batch_size: usize,
    rng: &mut R,
    grad: bool,
    options: GradOptions,
) -> Result<Evaluation> {
    let batch = sample_batch(&c.probabilities(), batch_size, rng);
    let points = c.normalized_points()?;
    let symbols: Vec<Complex64> = batch.indices.iter().map(|&m| points[m]).collect();
    let tx = channel.transmit(&symbols, rng);
    evaluate_on_batch(c, channel, kind, &batch, &tx.noise, grad, options)
}

pub fn evaluate(
    c: &Constellation,
    channel: &AwgnChannel,
    kind: ObjectiveKind,
    mode: EvalMode,
    grad: bool,
    options: GradOptions,
) -> Result<Evaluation> {
    match mode {
        EvalMode::ExactQuadrature { nodes } => evaluate_exact(c, channel, kind, nodes, grad, options),
        EvalMode::BatchMc { batch, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            evaluate_batch(c, channel, kind, batch, &mut rng, grad, options)
        }
    }
}

/// Categorical cross entropy of the symbol posterior, in bits.
pub fn cross_entropy(c: &Constellation, channel: &AwgnChannel, mode: EvalMode) -> Result<f64> {
    Ok(evaluate(c, channel, ObjectiveKind::Mi, mode, false, GradOptions::default())?.cross_entropy)
}

/// Mutual information in bits.
pub fn mi(c: &Constellation, channel: &AwgnChannel, mode: EvalMode) -> Result<f64> {
    Ok(evaluate(c, channel, ObjectiveKind::Mi, mode, false, GradOptions::default())?.rate)
}

/// Generalized mutual information in bits, clamped at zero.
pub fn gmi(c: &Constellation, channel: &AwgnChannel, mode: EvalMode) -> Result<f64> {
    Ok(evaluate(c, channel, ObjectiveKind::Gmi, mode, false, GradOptions::default())?.reported())
}

/// Rate as reported for the given objective.
pub fn rate(c: &Constellation, channel: &AwgnChannel, kind: ObjectiveKind, mode: EvalMode) -> Result<f64> {
    Ok(evaluate(c, channel, kind, mode, false, GradOptions::default())?.reported())
}

pub fn grad_mi(c: &Constellation, channel: &AwgnChannel, mode: EvalMode) -> Result<Gradients> {
    grad_with(c, channel, ObjectiveKind::Mi, mode, GradOptions::default())
}

/// Gradient of the unclamped GMI.
pub fn grad_gmi(c: &Constellation, channel: &AwgnChannel, mode: EvalMode) -> Result<Gradients> {
    grad_with(c, channel, ObjectiveKind::Gmi, mode, GradOptions::default())
}

pub fn grad_with(
    c: &Constellation,
    channel: &AwgnChannel,
    kind: ObjectiveKind,
    mode: EvalMode,
    options: GradOptions,
) -> Result<Gradients> {
    let eval = evaluate(c, channel, kind, mode, true, options)?;
    Ok(eval.gradients.expect("gradients requested"))
}

/// Central differences of the unclamped exact objective with respect to
/// every logit and every point coordinate.
pub fn fd_gradient(
    c: &Constellation,
    channel: &AwgnChannel,
    kind: ObjectiveKind,
    step: f64,
    nodes: usize,
) -> Result<Gradients> {
    gh_grid(nodes)?;
    fd_gradient_with(c, step, |k| {
        evaluate_exact(k, channel, kind, nodes, false, GradOptions::default()).map(|e| e.rate)
    })
}

/// Central differences of an arbitrary objective of the constellation.
pub fn fd_gradient_with<F>(c: &Constellation, step: f64, f: F) -> Result<Gradients>
where
    F: Fn(&Constellation) -> Result<f64> + Sync,
{
    let n = c.len();
    let coords: Vec<usize> = (0..3 * n).collect();
    let diffs = coords
        .par_iter()
        .map(|&i| {
            let (plus, minus) = if i < n {
                let mut up = c.logits().to_vec();
                let mut down = up.clone();
                up[i] += step;
                down[i] -= step;
                (c.with_logits(up)?, c.with_logits(down)?)
            } else {
                let j = (i - n) / 2;
                let delta = if (i - n).is_multiple_of(2) { Complex64::new(step, 0.0) } else { Complex64::new(0.0, step) };
                let mut up = c.points().to_vec();
                let mut down = up.clone();
                up[j] += delta;
                down[j] -= delta;
                (c.with_points(up)?, c.with_points(down)?)
            };
            Ok((f(&plus)? - f(&minus)?) / (2.0 * step))
        })
        .collect::<Result<Vec<f64>>>()?;
    let d_logits = diffs[..n].to_vec();
    let d_points = diffs[n..].chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
    Ok(Gradients { d_points, d_logits })
}
