//! Differentiable channel contract, the AWGN channel, and Gauss-Hermite
//! machinery for exact expectations over channel outputs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Channel outputs together with the noise that produced them, so that
/// gradients can flow through `y = x + noise` with the noise held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub outputs: Vec<Complex64>,
    pub noise: Vec<Complex64>,
}

/// What the training pipeline needs from a channel.
pub trait Channel {
    /// Reparameterized sampling: outputs plus the recorded noise draws.
    fn transmit<R: Rng + ?Sized>(&self, symbols: &[Complex64], rng: &mut R) -> Transmission;

    /// `ln p(y | x)` in nats.
    fn log_likelihood(&self, y: Complex64, x: Complex64) -> f64;

    /// `E[f(Y) | X = x]` evaluated with a deterministic quadrature rule.
    fn expect_over_output<F>(&self, x: Complex64, grid: &QuadratureGrid, f: F) -> f64
    where
        F: FnMut(Complex64) -> f64;
}

/// Additive circular complex Gaussian noise at a given SNR, for unit mean
/// signal power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AwgnChannel {
    snr_db: f64,
    sigma2: f64,
}

impl AwgnChannel {
    pub fn new(snr_db: f64) -> Result<Self> {
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        if !snr_db.is_finite() || !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!("snr_db {snr_db} gives no usable noise variance")));
        }
        Ok(Self { snr_db, sigma2 })
    }

    /// Channel with the given total complex noise variance.
    pub fn from_sigma2(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidConfig(format!("noise variance {sigma2} must be positive")));
        }
        Ok(Self { snr_db: -10.0 * sigma2.log10(), sigma2 })
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    /// Total complex noise variance, `sigma2 / 2` per real dimension.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Shannon capacity `log2(1 + SNR)` in bits.
    pub fn capacity_bits(&self) -> f64 {
        (1.0 + self.sigma2.recip()).log2()
    }

    /// Noise offsets and weights of the 2-D tensor rule: `E[f(x + Z)]` is
    /// `Σ w f(x + z)` over the returned pairs.
    pub fn noise_nodes(&self, grid: &QuadratureGrid) -> Vec<(Complex64, f64)> {
        let sigma = self.sigma2.sqrt();
        let mut out = Vec::with_capacity(grid.len() * grid.len());
        for (tr, wr) in grid.nodes.iter().zip(&grid.weights) {
            for (ti, wi) in grid.nodes.iter().zip(&grid.weights) {
                out.push((Complex64::new(*tr, *ti) * sigma, wr * wi / PI));
            }
        }
        out
    }
}

impl Channel for AwgnChannel {
    fn transmit<R: Rng + ?Sized>(&self, symbols: &[Complex64], rng: &mut R) -> Transmission {
        let std = (self.sigma2 / 2.0).sqrt();
        let noise: Vec<Complex64> = symbols
            .iter()
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * std
            })
            .collect();
        let outputs = symbols.iter().zip(&noise).map(|(x, w)| x + w).collect();
        Transmission { outputs, noise }
    }

    fn log_likelihood(&self, y: Complex64, x: Complex64) -> f64 {
        -(y - x).norm_sqr() / self.sigma2 - (PI * self.sigma2).ln()
    }

    fn expect_over_output<F>(&self, x: Complex64, grid: &QuadratureGrid, mut f: F) -> f64
    where
        F: FnMut(Complex64) -> f64,
    {
        self.noise_nodes(grid).into_iter().map(|(z, w)| w * f(x + z)).sum()
    }
}

/// Gauss-Hermite rule for the weight `exp(-t²)`, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Z)]` for `Z ~ N(0, s²)`.
    pub fn expect_normal<F: FnMut(f64) -> f64>(&self, s: f64, mut f: F) -> f64 {
        let scale = 2f64.sqrt() * s;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * f(scale * t))
            .sum::<f64>()
            / PI.sqrt()
    }
}

pub const MAX_GH_NODES: usize = 128;

/// Gauss-Hermite nodes and weights by Newton iteration on the orthonormal
/// Hermite recurrence.
pub fn gh_grid(n: usize) -> Result<QuadratureGrid> {
    if !(1..=MAX_GH_NODES).contains(&n) {
        return Err(Error::QuadratureNodes(n));
    }
    let pi_m4 = PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..half {
        // initial guesses for the largest roots, then extrapolation inward
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        for _ in 0..200 {
            let (p1, p2) = hermite_orthonormal(n, z, pi_m4);
            let dz = p1 / ((2.0 * nf).sqrt() * p2);
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, p2) = hermite_orthonormal(n, z, pi_m4);
        let pp = (2.0 * nf).sqrt() * p2;
        nodes[i] = z;
        weights[i] = 2.0 / (pp * pp);
        nodes[n - 1 - i] = -z;
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes.reverse();
    weights.reverse();
    Ok(QuadratureGrid { nodes, weights })
}

/// Returns `(h_n(z), h_{n-1}(z))` of the orthonormal Hermite functions.
fn hermite_orthonormal(n: usize, z: f64, h0: f64) -> (f64, f64) {
    let (mut p1, mut p2) = (h0, 0.0);
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}
