//! Constellation state: points, logits, and fixed bit labels.
//!
//! Probabilities are the softmax of the logits, so the logits are
//! unconstrained and shift-invariant. Points are stored unnormalized; the
//! unit-power version is derived from the current probabilities whenever it
//! is needed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

/// Which parameter groups are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapingMode {
    /// Points move, probabilities stay uniform.
    GeometricOnly,
    /// Probabilities move, points stay at their initial positions.
    ProbabilisticOnly,
    Joint,
}

impl ShapingMode {
    pub fn trains_points(self) -> bool {
        !matches!(self, ShapingMode::ProbabilisticOnly)
    }

    pub fn trains_logits(self) -> bool {
        !matches!(self, ShapingMode::GeometricOnly)
    }
}

impl FromStr for ShapingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "geo" | "geometric" => Ok(ShapingMode::GeometricOnly),
            "prob" | "probabilistic" => Ok(ShapingMode::ProbabilisticOnly),
            "joint" => Ok(ShapingMode::Joint),
            _ => Err(format!("unknown shaping mode '{s}' (expected geo, prob or joint)")),
        }
    }
}

impl fmt::Display for ShapingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapingMode::GeometricOnly => "geo",
            ShapingMode::ProbabilisticOnly => "prob",
            ShapingMode::Joint => "joint",
        })
    }
}

/// `M` complex points with trainable logits and fixed `K`-bit labels,
/// `K = ceil(log2 M)`.
///
/// Label bit `k = 0` is the leftmost character of the label string.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    logits: Vec<f64>,
    labels: Vec<u32>,
    bits: usize,
}

/// Number of label bits for `m` points.
pub fn label_bits(m: usize) -> usize {
    if m <= 1 {
        0
    } else {
        (usize::BITS - (m - 1).leading_zeros()) as usize
    }
}

impl Constellation {
    pub fn new(points: Vec<Complex64>, logits: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        let m = points.len();
        if m == 0 {
            return Err(Error::InvalidConstellation("no points".into()));
        }
        if logits.len() != m {
            return Err(Error::ShapeMismatch { expected: m, got: logits.len() });
        }
        if labels.len() != m {
            return Err(Error::ShapeMismatch { expected: m, got: labels.len() });
        }
        if points.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidConstellation("non-finite point".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidConstellation("non-finite logit".into()));
        }
        let bits = label_bits(m);
        let mut seen = labels.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != m {
            return Err(Error::InvalidConstellation("bit labels are not distinct".into()));
        }
        if labels.iter().any(|&l| bits < 32 && l >> bits != 0) {
            return Err(Error::InvalidConstellation(format!("label wider than {bits} bits")));
        }
        Ok(Self { points, logits, labels, bits })
    }

    /// Builds a constellation from probabilities, with `logits = ln p`.
    pub fn from_probs(points: Vec<Complex64>, probs: &[f64], labels: Vec<u32>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConstellation("probabilities must be finite and >= 0".into()));
        }
        let logits = probs.iter().map(|&p| p.max(LOG_FLOOR).ln()).collect();
        Self::new(points, logits, labels)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Label width `K`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Bit `k` of the label of point `m`.
    pub fn label_bit(&self, m: usize, k: usize) -> bool {
        (self.labels[m] >> (self.bits - 1 - k)) & 1 == 1
    }

    pub fn label_string(&self, m: usize) -> String {
        (0..self.bits).map(|k| if self.label_bit(m, k) { '1' } else { '0' }).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        probabilities(&self.logits)
    }

    pub fn log_probabilities(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    /// `Σ p_m |c_m|²` of the raw points.
    pub fn mean_power(&self) -> f64 {
        let p = self.probabilities();
        p.iter().zip(&self.points).map(|(p, c)| p * c.norm_sqr()).sum()
    }

    /// Points scaled to unit mean power under the current probabilities.
    pub fn normalized_points(&self) -> Result<Vec<Complex64>> {
        let power = self.mean_power();
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::DegenerateConstellation);
        }
        let scale = power.sqrt().recip();
        Ok(self.points.iter().map(|c| c * scale).collect())
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.probabilities())
    }

    pub fn with_points(&self, points: Vec<Complex64>) -> Result<Self> {
        Self::new(points, self.logits.clone(), self.labels.clone())
    }

    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), logits, self.labels.clone())
    }

    pub fn to_file(&self) -> ConstellationFile {
        ConstellationFile {
            m: self.len(),
            points: self.points.iter().map(|c| [c.re, c.im]).collect(),
            probs: self.probabilities(),
            labels: (0..self.len()).map(|m| self.label_string(m)).collect(),
        }
    }

    pub fn from_file(file: &ConstellationFile) -> Result<Self> {
        if file.points.len() != file.m {
            return Err(Error::ShapeMismatch { expected: file.m, got: file.points.len() });
        }
        if file.probs.len() != file.m {
            return Err(Error::ShapeMismatch { expected: file.m, got: file.probs.len() });
        }
        if file.labels.len() != file.m {
            return Err(Error::ShapeMismatch { expected: file.m, got: file.labels.len() });
        }
        let bits = label_bits(file.m);
        let labels = file
            .labels
            .iter()
            .map(|s| {
                if s.len() != bits || !s.chars().all(|ch| ch == '0' || ch == '1') {
                    return Err(Error::InvalidConstellation(format!(
                        "label '{s}' is not a {bits}-bit string"
                    )));
                }
                Ok(if bits == 0 { 0 } else { u32::from_str_radix(s, 2).unwrap_or(0) })
            })
            .collect::<Result<Vec<_>>>()?;
        let points = file.points.iter().map(|&[re, im]| Complex64::new(re, im)).collect();
        Self::from_probs(points, &file.probs, labels)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Serialize for Constellation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Constellation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = ConstellationFile::deserialize(deserializer)?;
        Constellation::from_file(&file).map_err(serde::de::Error::custom)
    }
}

/// On-disk form. Probabilities are stored instead of logits; `serde_json`
/// prints the shortest representation that round-trips each `f64` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationFile {
    pub m: usize,
    pub points: Vec<[f64; 2]>,
    pub probs: Vec<f64>,
    pub labels: Vec<String>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Softmax of the logits, with max-subtraction.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `-Σ p log2 p`, with `0 log 0 = 0`.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p >= LOG_FLOOR)
        .map(|&p| -p * p.log2())
        .sum();
    h.max(0.0)
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

fn qam_side(m: usize) -> Result<usize> {
    if !(4..=1 << 16).contains(&m) || !m.is_power_of_two() || !m.trailing_zeros().is_multiple_of(2) {
        return Err(Error::UnsupportedSize(m));
    }
    Ok(1 << (m.trailing_zeros() / 2))
}

/// Binary-reflected Gray labels for the square grid produced by [`qam_init`]:
/// the in-phase level code followed by the quadrature level code.
///
/// Point `m` sits at in-phase level `m / side` and quadrature level
/// `m % side`, levels counted from the most negative coordinate.
pub fn gray_labels(m: usize) -> Result<Vec<u32>> {
    let side = qam_side(m)?;
    let half = side.trailing_zeros();
    Ok((0..m)
        .map(|idx| {
            let (i, q) = ((idx / side) as u32, (idx % side) as u32);
            (gray(i) << half) | gray(q)
        })
        .collect())
}

/// Square QAM with odd-integer coordinates scaled to unit mean power under
/// uniform probabilities, zero logits, Gray labels.
pub fn qam_init(m: usize) -> Result<Constellation> {
    let side = qam_side(m)?;
    let level = |i: usize| (2 * i) as f64 - (side - 1) as f64;
    // mean of (2i - side + 1)^2 over one axis is (side^2 - 1)/3, two axes
    let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt().recip();
    let points = (0..m)
        .map(|idx| Complex64::new(level(idx / side), level(idx % side)) * scale)
        .collect();
    Constellation::new(points, vec![0.0; m], gray_labels(m)?)
}

/// `(P(b_k = 0), P(b_k = 1))` for each label bit.
pub fn bit_marginals(probs: &[f64], labels: &[u32], bits: usize) -> Vec<(f64, f64)> {
    (0..bits)
        .map(|k| {
            let one: f64 = probs
                .iter()
                .zip(labels)
                .filter(|(_, &l)| (l >> (bits - 1 - k)) & 1 == 1)
                .map(|(p, _)| p)
                .sum();
            let zero: f64 = probs
                .iter()
                .zip(labels)
                .filter(|(_, &l)| (l >> (bits - 1 - k)) & 1 == 0)
                .map(|(p, _)| p)
                .sum();
            (zero, one)
        })
        .collect()
}

/// Maxwell-Boltzmann weights `p_m ∝ exp(-nu |c_m|²)`.
pub fn maxwell_boltzmann(points: &[Complex64], nu: f64) -> Vec<f64> {
    let logits: Vec<f64> = points.iter().map(|c| -nu * c.norm_sqr()).collect();
    probabilities(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn qam4_is_unit_power_square() {
        let q = qam_init(4).unwrap();
        let s = 0.5f64.sqrt();
        for p in q.points() {
            assert!((p.re.abs() - s).abs() < 1e-15 && (p.im.abs() - s).abs() < 1e-15);
        }
        assert_eq!(q.probabilities(), vec![0.25; 4]);
    }

    #[test]
    fn qam16_grid_scale() {
        let q = qam_init(16).unwrap();
        let s = 10f64.sqrt();
        let mut coords: Vec<f64> = q.points().iter().map(|p| (p.re * s).round()).collect();
        coords.sort_by(f64::total_cmp);
        coords.dedup();
        assert_eq!(coords, vec![-3.0, -1.0, 1.0, 3.0]);
        for p in q.points() {
            assert!(((p.re * s) - (p.re * s).round()).abs() < 1e-12);
        }
        assert!((q.mean_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qam_rejects_non_square_sizes() {
        for m in [0, 1, 2, 8, 32, 12] {
            assert!(matches!(qam_init(m), Err(Error::UnsupportedSize(_))), "m={m}");
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(probabilities(&[0.0; 4]), vec![0.25; 4]);
        let p = probabilities(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = probabilities(&[1000.0, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn normalization_examples() {
        let labels = vec![0, 1];
        let k = Constellation::from_probs(vec![c(1.0, 0.0), c(-1.0, 0.0)], &[0.5, 0.5], labels.clone()).unwrap();
        assert_eq!(k.normalized_points().unwrap(), vec![c(1.0, 0.0), c(-1.0, 0.0)]);
        let k = Constellation::from_probs(vec![c(2.0, 0.0), c(-2.0, 0.0)], &[0.5, 0.5], labels.clone()).unwrap();
        assert_eq!(k.normalized_points().unwrap(), vec![c(1.0, 0.0), c(-1.0, 0.0)]);
        let k = Constellation::from_probs(vec![c(1.0, 0.0), c(-1.0, 0.0)], &[0.9, 0.1], labels.clone()).unwrap();
        let n = k.normalized_points().unwrap();
        assert!((n[0] - c(1.0, 0.0)).norm() < 1e-15 && (n[1] - c(-1.0, 0.0)).norm() < 1e-15);
        let k = Constellation::new(vec![c(0.0, 0.0); 2], vec![0.0; 2], labels).unwrap();
        assert!(matches!(k.normalized_points(), Err(Error::DegenerateConstellation)));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_bits(&[1.0 / 16.0; 16]) - 4.0).abs() < 1e-12);
        assert_eq!(entropy_bits(&[1.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((entropy_bits(&[0.5, 0.25, 0.25]) - 1.5).abs() < 1e-15);
    }

    fn hamming(a: u32, b: u32) -> u32 {
        (a ^ b).count_ones()
    }

    #[test]
    fn gray_labels_adjacent_pairs_differ_in_one_bit() {
        for (m, side) in [(4usize, 2usize), (16, 4), (64, 8), (256, 16)] {
            let labels = gray_labels(m).unwrap();
            let mut adjacent = 0;
            for i in 0..side {
                for q in 0..side {
                    let idx = i * side + q;
                    if q + 1 < side {
                        assert_eq!(hamming(labels[idx], labels[idx + 1]), 1);
                        adjacent += 1;
                    }
                    if i + 1 < side {
                        assert_eq!(hamming(labels[idx], labels[idx + side]), 1);
                        adjacent += 1;
                    }
                }
            }
            assert_eq!(adjacent, 2 * side * (side - 1));
            let mut sorted = labels.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..m as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn gray_labels_16_axis_code() {
        let q = qam_init(16).unwrap();
        // in-phase levels -3,-1,1,3 -> 00,01,11,10
        let codes: Vec<String> = (0..4).map(|i| q.label_string(i * 4)[..2].to_string()).collect();
        assert_eq!(codes, ["00", "01", "11", "10"]);
        assert_eq!(gray_labels(8).unwrap_err().to_string(), Error::UnsupportedSize(8).to_string());
    }

    #[test]
    fn bit_marginal_examples() {
        let labels = gray_labels(16).unwrap();
        for (z, o) in bit_marginals(&[1.0 / 16.0; 16], &labels, 4) {
            assert_eq!((z, o), (0.5, 0.5));
        }
        let m = bit_marginals(&[0.7, 0.3], &[0, 1], 1);
        assert!((m[0].1 - 0.3).abs() < 1e-15 && (m[0].0 - 0.7).abs() < 1e-15);

        let probs = [0.4, 0.3, 0.2, 0.1];
        let q = Constellation::from_probs(qam_init(4).unwrap().points().to_vec(), &probs, gray_labels(4).unwrap()).unwrap();
        let got = bit_marginals(&probs, q.labels(), 2);
        for (k, g) in got.iter().enumerate() {
            let mut one = 0.0;
            for (m, p) in probs.iter().enumerate() {
                if q.label_string(m).as_bytes()[k] == b'1' {
                    one += p;
                }
            }
            assert!((g.1 - one).abs() < 1e-15);
            assert!((g.0 - (1.0 - one)).abs() < 1e-15);
        }
        // labels 00,01,10,11 on points 0..3
        assert!((got[0].1 - 0.3).abs() < 1e-15 && (got[1].1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn maxwell_boltzmann_examples() {
        let q = qam_init(16).unwrap();
        assert!(maxwell_boltzmann(q.points(), 0.0).iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));

        let p = maxwell_boltzmann(q.points(), 500.0);
        for (pt, pm) in q.points().iter().zip(&p) {
            let inner = pt.norm_sqr() < 0.3;
            assert!(if inner { (pm - 0.25).abs() < 1e-12 } else { *pm < 1e-12 });
        }

        // unnormalized grid: energies 2 (x4), 10 (x8), 18 (x4)
        let raw: Vec<Complex64> = q.points().iter().map(|c| c * 10f64.sqrt()).collect();
        let p = maxwell_boltzmann(&raw, 0.5);
        let z = 4.0 * (-1.0f64).exp() + 8.0 * (-5.0f64).exp() + 4.0 * (-9.0f64).exp();
        for (pt, pm) in raw.iter().zip(&p) {
            let e = pt.norm_sqr().round();
            let want = (-0.5 * e).exp() / z;
            assert!((pm - want).abs() < 1e-15, "{e} {pm} {want}");
        }
    }

    #[test]
    fn json_round_trip_and_malformed() {
        let q = qam_init(16).unwrap();
        let mb = Constellation::from_probs(q.points().to_vec(), &maxwell_boltzmann(q.points(), 0.7), q.labels().to_vec()).unwrap();
        let back = Constellation::from_json(&mb.to_json().unwrap()).unwrap();
        assert_eq!(back.points(), mb.points());
        assert_eq!(back.labels(), mb.labels());
        for (a, b) in back.probabilities().iter().zip(mb.probabilities()) {
            assert!((a - b).abs() < 1e-16);
        }
        assert!(Constellation::from_json("{\"m\":2,\"points\":[[1,0]],\"probs\":[1],\"labels\":[\"0\"]}").is_err());
        assert!(Constellation::from_json("{\"m\":2,\"points\":[[1,0],[0,1]],\"probs\":[0.5,0.5],\"labels\":[\"0\",\"0\"]}").is_err());
        assert!(Constellation::from_json("not json").is_err());
    }
}
