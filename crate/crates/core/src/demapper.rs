//! Exact Bayes demappers for the AWGN channel.
//!
//! These stand in for trained receivers: the symbol posterior for
//! symbol-metric decoding and its per-bit marginals for bit-metric decoding.
//! Everything is computed in the log domain and exponentiated at the end.

use num_complex::Complex64;

use crate::channel::AwgnChannel;
use crate::constellation::Constellation;
use crate::error::Result;

/// `Q(c_m | y)` for every point.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPosterior(pub Vec<f64>);

/// `q(b_k = 1 | y)` for every label bit.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPosterior(pub Vec<f64>);

/// Unnormalized log posterior `ln p_m - |y - x_m|² / sigma2`.
pub(crate) fn log_weights(y: Complex64, log_p: &[f64], points: &[Complex64], inv_sigma2: f64) -> Vec<f64> {
    log_p
        .iter()
        .zip(points)
        .map(|(lp, x)| lp - (y - x).norm_sqr() * inv_sigma2)
        .collect()
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log weights into a posterior.
pub fn posterior_from_log_weights(a: &[f64]) -> SymbolPosterior {
    let lse = log_sum_exp(a.iter().copied());
    SymbolPosterior(a.iter().map(|x| (x - lse).exp()).collect())
}

pub fn smd_posterior(y: Complex64, c: &Constellation, channel: &AwgnChannel) -> Result<SymbolPosterior> {
    let points = c.normalized_points()?;
    let a = log_weights(y, &c.log_probabilities(), &points, channel.sigma2().recip());
    Ok(posterior_from_log_weights(&a))
}

pub fn bmd_posterior(y: Complex64, c: &Constellation, channel: &AwgnChannel) -> Result<BitPosterior> {
    let q = smd_posterior(y, c, channel)?;
    Ok(BitPosterior(
        (0..c.bits())
            .map(|k| {
                (0..c.len())
                    .filter(|&m| c.label_bit(m, k))
                    .map(|m| q.0[m])
                    .sum::<f64>()
                    .min(1.0)
            })
            .collect(),
    ))
}
