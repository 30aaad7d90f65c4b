//! Properties that hold across modules: training plateaus, the power
//! constraint, quadrature convergence and the batch gradient estimator.

use std::f64::consts::PI;

use geopcs::baselines::mb_constellation;
use geopcs::demapper::smd_posterior;
use geopcs::objectives::{evaluate_batch, evaluate_exact, GradOptions};
use geopcs::training::{train, TrainConfig};
use geopcs::{qam_init, AwgnChannel, Complex64, ObjectiveKind, ShapingMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn default_training_plateaus_with_unit_power() {
    let cfg = TrainConfig { snr_db: 10.0, objective: ObjectiveKind::Gmi, mode: ShapingMode::Joint, ..TrainConfig::default() };
    let result = train(&cfg).unwrap();

    // last quarter of the trace never drops by more than 0.01 bit
    let tail = &result.trace[result.trace.len() * 3 / 4..];
    let mut best = f64::NEG_INFINITY;
    for r in tail {
        assert!(r.exact_obj >= best - 0.01, "step {}: {} after {best}", r.step, r.exact_obj);
        best = best.max(r.exact_obj);
    }
    assert!(result.final_exact() > result.trace[0].exact_obj);

    let c = &result.constellation;
    let power: f64 = c.normalized_points().unwrap().iter().zip(c.probabilities()).map(|(x, p)| p * x.norm_sqr()).sum();
    assert!((power - 1.0).abs() < 1e-12);
}

/// The log posterior bends sharply near decision boundaries once the noise
/// is small, so convergence in the node count is steady but not spectral.
#[test]
fn quadrature_converges_in_node_count() {
    let c = mb_constellation(16, 0.3).unwrap();
    for snr in [0.0, 4.0, 8.0, 12.0, 16.0, 20.0] {
        let ch = AwgnChannel::new(snr).unwrap();
        for kind in [ObjectiveKind::Mi, ObjectiveKind::Gmi] {
            let at = |n| evaluate_exact(&c, &ch, kind, n, false, GradOptions::default()).unwrap().rate;
            let reference = at(128);
            assert!((at(32) - reference).abs() < 2e-4, "{kind} at {snr} dB");
            assert!((at(64) - reference).abs() < 2e-5, "{kind} at {snr} dB");
        }
    }
}

#[test]
fn quadrature_matches_fine_trapezoid_rule() {
    let c = qam_init(16).unwrap();
    let ch = AwgnChannel::new(16.0).unwrap();
    let pts = c.normalized_points().unwrap();
    let s2 = ch.sigma2();
    let h = (s2 / 2.0).sqrt() / 8.0;
    let k = 72i64;
    let mut expected_log = 0.0;
    for (m, &x) in pts.iter().enumerate() {
        for i in -k..=k {
            for j in -k..=k {
                let (u, v) = (i as f64 * h, j as f64 * h);
                let w = (-(u * u + v * v) / s2).exp() / (PI * s2) * h * h;
                let q = smd_posterior(x + Complex64::new(u, v), &c, &ch).unwrap().0[m];
                expected_log += w * q.log2() / 16.0;
            }
        }
    }
    let trapezoid = 4.0 + expected_log;
    let gh = evaluate_exact(&c, &ch, ObjectiveKind::Mi, 128, false, GradOptions::default()).unwrap().rate;
    assert!((gh - trapezoid).abs() < 1e-6, "{gh} vs {trapezoid}");
}

#[test]
fn batch_gradient_is_centered_on_exact_gradient() {
    let c = mb_constellation(16, 0.4).unwrap();
    let ch = AwgnChannel::new(6.0).unwrap();
    for kind in [ObjectiveKind::Mi, ObjectiveKind::Gmi] {
        let exact = evaluate_exact(&c, &ch, kind, 48, true, GradOptions::default()).unwrap().gradients.unwrap().flatten();
        let runs = 200;
        let samples: Vec<Vec<f64>> = (0..runs)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let e = evaluate_batch(&c, &ch, kind, 2000, &mut rng, true, GradOptions::default()).unwrap();
                e.gradients.unwrap().flatten()
            })
            .collect();
        let mut outside = 0;
        for (i, &target) in exact.iter().enumerate() {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / runs as f64;
            let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            let se = (var / runs as f64).sqrt();
            if (mean - target).abs() > 3.0 * se + 1e-12 {
                outside += 1;
            }
        }
        // 48 components; at 3 SE a couple may fall outside by chance
        assert!(outside <= 3, "{kind}: {outside} of {} components beyond 3 SE", exact.len());
    }
}
