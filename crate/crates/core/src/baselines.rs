//! Reference curves: Maxwell-Boltzmann shaping on the square QAM grid and
//! uniform QAM.

use serde::{Deserialize, Serialize};

use crate::channel::AwgnChannel;
use crate::cli::{RateRecord, Scheme};
use crate::constellation::{maxwell_boltzmann, qam_init, Constellation};
use crate::error::Result;
use crate::objectives::{evaluate_exact, GradOptions, ObjectiveKind};

/// Upper end of the search interval for `nu` on the unit-power grid.
pub const NU_MAX: f64 = 5.0;
pub const NU_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbResult {
    pub nu: f64,
    pub probs: Vec<f64>,
    /// Reported rate in bits.
    pub rate: f64,
    pub objective: ObjectiveKind,
}

impl MbResult {
    /// The QAM grid carrying the optimized probabilities.
    pub fn constellation(&self) -> Result<Constellation> {
        let q = qam_init(self.probs.len())?;
        Constellation::from_probs(q.points().to_vec(), &self.probs, q.labels().to_vec())
    }
}

/// QAM grid with `p ∝ exp(-nu |c|²)`, energies taken on the unit-power
/// uniform grid.
pub fn mb_constellation(m: usize, nu: f64) -> Result<Constellation> {
    let q = qam_init(m)?;
    let probs = maxwell_boltzmann(q.points(), nu);
    Constellation::from_probs(q.points().to_vec(), &probs, q.labels().to_vec())
}

pub fn mb_rate(m: usize, nu: f64, channel: &AwgnChannel, objective: ObjectiveKind, gh_nodes: usize) -> Result<f64> {
    let c = mb_constellation(m, nu)?;
    Ok(evaluate_exact(&c, channel, objective, gh_nodes, false, GradOptions::default())?.reported())
}

/// Golden-section search for the best maximizer of `f` on `[lo, hi]`.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Maxwell-Boltzmann distribution maximizing the exact MI or GMI of the
/// square QAM grid. The power normalization is redone for every `nu`.
pub fn mb_optimize(m: usize, snr_db: f64, objective: ObjectiveKind, gh_nodes: usize) -> Result<MbResult> {
    let channel = AwgnChannel::new(snr_db)?;
    let rate = |nu: f64| mb_rate(m, nu, &channel, objective, gh_nodes);
    let (mut nu, mut best) = golden_section_max(rate, 0.0, NU_MAX, NU_TOL)?;
    let uniform = mb_rate(m, 0.0, &channel, objective, gh_nodes)?;
    if uniform >= best {
        nu = 0.0;
        best = uniform;
    }
    let probs = mb_constellation(m, nu)?.probabilities();
    Ok(MbResult { nu, probs, rate: best, objective })
}

/// Exact MI and GMI of uniform Gray QAM at each SNR.
pub fn uniform_rates(m: usize, snr_grid: &[f64], gh_nodes: usize) -> Result<Vec<RateRecord>> {
    let c = qam_init(m)?;
    let mut out = Vec::with_capacity(2 * snr_grid.len());
    for &snr_db in snr_grid {
        let channel = AwgnChannel::new(snr_db)?;
        for objective in [ObjectiveKind::Mi, ObjectiveKind::Gmi] {
            let e = evaluate_exact(&c, &channel, objective, gh_nodes, false, GradOptions::default())?;
            out.push(RateRecord {
                scheme: Scheme::Uniform,
                m,
                snr_db,
                objective,
                rate_bits: e.reported(),
                entropy_bits: e.entropy,
            });
        }
    }
    Ok(out)
}
