//! Adam-driven gradient ascent on the batch objective.

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{AwgnChannel, MAX_GH_NODES};
use crate::constellation::{qam_init, Constellation, ShapingMode};
use crate::error::{Error, Result};
use crate::objectives::{evaluate_batch, evaluate_exact, GradOptions, ObjectiveKind, DEFAULT_GH_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { learning_rate: 5e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m1: vec![0.0; len], m2: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam step in the ascent direction.
pub fn adam_step(
    params: &[f64],
    grads: &[f64],
    state: &AdamState,
    hp: &AdamParams,
) -> Result<(Vec<f64>, AdamState)> {
    let n = params.len();
    for len in [grads.len(), state.m1.len(), state.m2.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, got: len });
        }
    }
    let t = state.t + 1;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let mut next = AdamState { m1: Vec::with_capacity(n), m2: Vec::with_capacity(n), t };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let g = grads[i];
        let m1 = hp.beta1 * state.m1[i] + (1.0 - hp.beta1) * g;
        let m2 = hp.beta2 * state.m2[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m1 / bc1;
        let v_hat = m2 / bc2;
        out.push(params[i] + hp.learning_rate * m_hat / (v_hat.sqrt() + hp.eps));
        next.m1.push(m1);
        next.m2.push(m2);
    }
    Ok((out, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m: usize,
    pub snr_db: f64,
    pub objective: ObjectiveKind,
    pub mode: ShapingMode,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub eval_every: usize,
    pub gh_nodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 16,
            snr_db: 8.0,
            objective: ObjectiveKind::Mi,
            mode: ShapingMode::Joint,
            batch_size: 4000,
            learning_rate: 5e-3,
            steps: 3000,
            seed: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 100,
            gh_nodes: DEFAULT_GH_NODES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        qam_init(self.m)?;
        if self.batch_size < self.m {
            return bad(format!("batch size {} is smaller than M = {}", self.batch_size, self.m));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad(format!("learning rate {} outside (0, 1)", self.learning_rate));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(1..=MAX_GH_NODES).contains(&self.gh_nodes) {
            return Err(Error::QuadratureNodes(self.gh_nodes));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam moments need betas in [0, 1) and eps > 0".into());
        }
        AwgnChannel::new(self.snr_db)?;
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// One trace row. `batch_obj` is the unclamped estimate on the batch drawn at
/// `step`; `exact_obj` is the reported quadrature rate of the constellation
/// before that step's update. The last row (`step == steps`) describes the
/// final constellation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub batch_obj: f64,
    pub exact_obj: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub constellation: Constellation,
    pub trace: Vec<TraceRecord>,
    pub config: TrainConfig,
}

impl TrainResult {
    pub fn final_exact(&self) -> f64 {
        self.trace.last().map(|r| r.exact_obj).unwrap_or(f64::NAN)
    }
}

pub const TRACE_HEADER: &str = "step,batch_obj,exact_obj,entropy";

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.step, r.batch_obj, r.exact_obj, r.entropy)?;
    }
    Ok(())
}

fn pack(c: &Constellation) -> Vec<f64> {
    let mut v = c.logits().to_vec();
    v.extend(c.points().iter().flat_map(|p| [p.re, p.im]));
    v
}

fn unpack(c: &Constellation, params: &[f64]) -> Result<Constellation> {
    let m = c.len();
    let logits = params[..m].to_vec();
    let points = params[m..].chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
    Constellation::new(points, logits, c.labels().to_vec())
}

/// Trains from the uniform square QAM start.
pub fn train(config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    train_from(config, qam_init(config.m)?)
}

/// Trains from a given initial constellation.
pub fn train_from(config: &TrainConfig, init: Constellation) -> Result<TrainResult> {
    config.validate()?;
    let channel = AwgnChannel::new(config.snr_db)?;
    let hp = config.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut c = init;
    let mut params = pack(&c);
    let mut adam = AdamState::new(params.len());
    let mut trace = Vec::new();
    let m = c.len();

    let exact = |c: &Constellation| evaluate_exact(c, &channel, config.objective, config.gh_nodes, false, GradOptions::default());

    for step in 0..config.steps {
        let eval = evaluate_batch(&c, &channel, config.objective, config.batch_size, &mut rng, true, GradOptions::default())?;
        if !eval.rate.is_finite() {
            return Err(Error::NonFinite { what: "objective", step });
        }
        let grads = eval.gradients.expect("gradients requested");
        if !grads.is_finite() {
            return Err(Error::NonFinite { what: "gradient", step });
        }
        if step % config.eval_every == 0 {
            let e = exact(&c)?;
            trace.push(TraceRecord { step, batch_obj: eval.rate, exact_obj: e.reported(), entropy: e.entropy });
        }

        let mut flat = grads.flatten();
        if !config.mode.trains_logits() {
            flat[..m].fill(0.0);
        }
        if !config.mode.trains_points() {
            flat[m..].fill(0.0);
        }
        let (next, state) = adam_step(&params, &flat, &adam, &hp)?;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "parameter", step });
        }
        params = next;
        adam = state;
        c = unpack(&c, &params)?;
    }

    let last = evaluate_batch(&c, &channel, config.objective, config.batch_size, &mut rng, false, GradOptions::default())?;
    let e = exact(&c)?;
    if !e.rate.is_finite() {
        return Err(Error::NonFinite { what: "objective", step: config.steps });
    }
    trace.push(TraceRecord { step: config.steps, batch_obj: last.rate, exact_obj: e.reported(), entropy: e.entropy });

    Ok(TrainResult { constellation: c, trace, config: config.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let hp = AdamParams::default();
        let (p, s) = adam_step(&[1.0, -2.0], &[0.0, 0.0], &AdamState::new(2), &hp).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_normalized() {
        let hp = AdamParams { learning_rate: 0.01, ..Default::default() };
        let g = [0.5, -3.0, 1e-9];
        let (p, _) = adam_step(&[0.0; 3], &g, &AdamState::new(3), &hp).unwrap();
        // m̂ = g and v̂ = g² after one bias-corrected step
        for (d, g) in p.iter().zip(g) {
            let want = 0.01 * g / (g.abs() + 1e-8);
            assert!((d - want).abs() < 1e-15, "{d} {want}");
        }
    }

    #[test]
    fn constant_gradient_steps_by_learning_rate() {
        let hp = AdamParams { learning_rate: 0.01, ..Default::default() };
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2);
        for _ in 0..5000 {
            let before = params.clone();
            let (p, s) = adam_step(&params, &[2.0, -0.1], &state, &hp).unwrap();
            params = p;
            state = s;
            assert!((params[0] - before[0] - 0.01).abs() < 1e-8);
            assert!((params[1] - before[1] + 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch() {
        let r = adam_step(&[0.0; 3], &[0.0; 2], &AdamState::new(3), &AdamParams::default());
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { steps: 0, ..ok.clone() },
            TrainConfig { m: 8, ..ok.clone() },
            TrainConfig { batch_size: 10, ..ok.clone() },
            TrainConfig { learning_rate: 1.5, ..ok.clone() },
            TrainConfig { gh_nodes: 0, ..ok.clone() },
        ] {
            assert!(train(&bad).is_err());
        }
    }

    #[test]
    fn single_step_run() {
        let cfg = TrainConfig { m: 4, steps: 1, batch_size: 100, gh_nodes: 8, ..Default::default() };
        let r = train(&cfg).unwrap();
        assert_eq!(r.trace.len(), 2);
        assert_eq!(r.trace[0].step, 0);
        assert_eq!(r.trace[1].step, 1);
        assert!((r.constellation.normalized_points().unwrap().iter().zip(r.constellation.probabilities()).map(|(c, p)| p * c.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn modes_freeze_their_parameters() {
        let base = TrainConfig { m: 16, steps: 40, batch_size: 500, gh_nodes: 8, eval_every: 10, ..Default::default() };
        let init = qam_init(16).unwrap();

        let geo = train(&TrainConfig { mode: ShapingMode::GeometricOnly, ..base.clone() }).unwrap();
        assert_eq!(geo.constellation.logits(), init.logits());
        assert!(geo.constellation.probabilities().iter().all(|&p| p == 1.0 / 16.0));
        assert_ne!(geo.constellation.points(), init.points());

        let prob = train(&TrainConfig { mode: ShapingMode::ProbabilisticOnly, ..base.clone() }).unwrap();
        assert_eq!(prob.constellation.points(), init.points());
        assert_ne!(prob.constellation.logits(), init.logits());
    }

    #[test]
    fn trace_csv_layout() {
        let trace = [TraceRecord { step: 0, batch_obj: 1.5, exact_obj: 1.25, entropy: 2.0 }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,batch_obj,exact_obj,entropy\n0,1.5,1.25,2\n");
    }
}
