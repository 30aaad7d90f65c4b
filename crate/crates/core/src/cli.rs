//! Command-line surface: `train`, `sweep`, `eval` and `gradcheck`.
//!
//! Output files:
//!
//! * `constellation.json`: `{m, points: [[re, im], ...], probs, labels}`
//! * `trace.csv`: `step,batch_obj,exact_obj,entropy`
//! * `config.json`: the training configuration
//! * `curves.csv`: `scheme,m,snr_db,objective,rate_bits,entropy_bits`

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::mb_optimize;
use crate::channel::AwgnChannel;
use crate::constellation::{gray_labels, qam_init, Constellation, ShapingMode};
use crate::error::{Error, Result};
use crate::objectives::{evaluate_exact, fd_gradient, grad_with, EvalMode, GradOptions, ObjectiveKind, DEFAULT_GH_NODES};
use crate::training::{train, write_trace_csv, TrainConfig, TrainResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FLAGS: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const ABLATION_MIN_ERROR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Uniform,
    Mb,
    LearnedPcs,
    LearnedGeopcs,
    LearnedGeo,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Uniform => "uniform",
            Scheme::Mb => "mb",
            Scheme::LearnedPcs => "learned-pcs",
            Scheme::LearnedGeopcs => "learned-geopcs",
            Scheme::LearnedGeo => "learned-geo",
        }
    }

    fn shaping(self) -> Option<ShapingMode> {
        match self {
            Scheme::LearnedPcs => Some(ShapingMode::ProbabilisticOnly),
            Scheme::LearnedGeopcs => Some(ShapingMode::Joint),
            Scheme::LearnedGeo => Some(ShapingMode::GeometricOnly),
            Scheme::Uniform | Scheme::Mb => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One point of a rate curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub scheme: Scheme,
    pub m: usize,
    pub snr_db: f64,
    pub objective: ObjectiveKind,
    pub rate_bits: f64,
    pub entropy_bits: f64,
}

pub const CURVES_HEADER: &str = "scheme,m,snr_db,objective,rate_bits,entropy_bits";

pub fn write_curves_csv<W: Write>(records: &[RateRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CURVES_HEADER}")?;
    for r in records {
        writeln!(out, "{},{},{},{},{},{}", r.scheme, r.m, r.snr_db, r.objective, r.rate_bits, r.entropy_bits)?;
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "geopcs", about = "Learn geometric and probabilistic constellation shaping", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one constellation at one SNR
    Train(TrainArgs),
    /// Uniform, MB and learned rates over an SNR grid
    Sweep(SweepArgs),
    /// Exact MI, GMI, entropy and power of a stored constellation
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainingFlags {
    /// Constellation size (4, 16, 64 or 256)
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    /// mi or gmi
    #[arg(long, default_value = "mi")]
    pub objective: ObjectiveKind,
    #[arg(long = "batch", default_value_t = 4000)]
    pub batch_size: usize,
    #[arg(long = "lr", default_value_t = 5e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Gauss-Hermite nodes per real dimension
    #[arg(long, default_value_t = DEFAULT_GH_NODES)]
    pub gh_nodes: usize,
}

impl TrainingFlags {
    pub fn config(&self, snr_db: f64, mode: ShapingMode) -> TrainConfig {
        TrainConfig {
            m: self.m,
            snr_db,
            objective: self.objective,
            mode,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            steps: self.steps,
            seed: self.seed,
            eval_every: self.eval_every,
            gh_nodes: self.gh_nodes,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    /// geo, prob or joint
    #[arg(long, default_value = "joint")]
    pub mode: ShapingMode,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub training: TrainingFlags,
    /// "start:stop:step" or a comma-separated list, in dB
    #[arg(long, default_value = "2:14:2", allow_hyphen_values = true)]
    pub snr_grid: String,
    /// Also train geometry-only constellations
    #[arg(long)]
    pub with_geo: bool,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub constellation: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: f64,
    #[arg(long, default_value = "mi")]
    pub objective: ObjectiveKind,
    #[arg(long, default_value_t = DEFAULT_GH_NODES)]
    pub gh_nodes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 8.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    #[arg(long, default_value = "mi")]
    pub objective: ObjectiveKind,
    /// Random constellations to check
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = DEFAULT_GH_NODES)]
    pub gh_nodes: usize,
    /// Drop the score term and confirm the check fails
    #[arg(long)]
    pub ablate_correction: bool,
}

/// Outcome of a command that ran to completion.
#[derive(Debug)]
pub enum Outcome {
    Ok,
    /// Ran, but a numerical check did not pass.
    CheckFailed(String),
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train(args) => cmd_train(&args).map(|_| Outcome::Ok),
        Command::Sweep(args) => {
            let outcome = cmd_sweep(&args)?;
            if outcome.failures.is_empty() {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::CheckFailed(format!("{} sweep points failed", outcome.failures.len())))
            }
        }
        Command::Eval(args) => {
            let report = cmd_eval(&args)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(Outcome::Ok)
        }
        Command::Gradcheck(args) => {
            let report = cmd_gradcheck(&args)?;
            print!("{report}");
            if report.passed {
                Ok(Outcome::Ok)
            } else {
                Ok(Outcome::CheckFailed("gradient check failed".into()))
            }
        }
    }
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed(_)) => EXIT_NUMERICAL,
        Err(e) if e.is_numerical() => EXIT_NUMERICAL,
        Err(_) => EXIT_FLAGS,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainResult> {
    let config = args.training.config(args.snr_db, args.mode);
    config.validate()?;
    let result = train(&config)?;
    fs::create_dir_all(&args.out)?;
    result.constellation.save(args.out.join("constellation.json"))?;
    let mut trace = BufWriter::new(File::create(args.out.join("trace.csv"))?);
    write_trace_csv(&result.trace, &mut trace)?;
    trace.flush()?;
    write_json(&args.out.join("config.json"), &result.config)?;
    eprintln!(
        "final exact {}: {:.6} bits, entropy {:.6} bits",
        config.objective,
        result.final_exact(),
        result.constellation.entropy_bits()
    );
    Ok(result)
}

/// Parses `"a:b:step"` (inclusive) or `"x,y,z"`.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("cannot parse SNR grid '{s}'"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub records: Vec<RateRecord>,
    pub constellations: Vec<(Scheme, f64, Constellation)>,
    pub failures: Vec<(Scheme, f64, String)>,
}

/// All schemes at every SNR, in SNR order. Per-point failures are collected
/// rather than aborting the sweep.
pub fn sweep(flags: &TrainingFlags, snrs: &[f64], with_geo: bool) -> Result<SweepOutcome> {
    qam_init(flags.m)?;
    let mut schemes = vec![Scheme::Uniform, Scheme::Mb, Scheme::LearnedPcs, Scheme::LearnedGeopcs];
    if with_geo {
        schemes.push(Scheme::LearnedGeo);
    }
    let jobs: Vec<(f64, Scheme)> = snrs.iter().flat_map(|&s| schemes.iter().map(move |&k| (s, k))).collect();
    let results: Vec<Result<(Constellation, RateRecord)>> =
        jobs.par_iter().map(|&(snr, scheme)| sweep_point(flags, snr, scheme)).collect();

    let mut out = SweepOutcome { records: Vec::new(), constellations: Vec::new(), failures: Vec::new() };
    for ((snr, scheme), r) in jobs.into_iter().zip(results) {
        match r {
            Ok((c, rec)) => {
                out.records.push(rec);
                out.constellations.push((scheme, snr, c));
            }
            Err(e) => out.failures.push((scheme, snr, e.to_string())),
        }
    }
    Ok(out)
}

fn sweep_point(flags: &TrainingFlags, snr_db: f64, scheme: Scheme) -> Result<(Constellation, RateRecord)> {
    let channel = AwgnChannel::new(snr_db)?;
    let c = match scheme {
        Scheme::Uniform => qam_init(flags.m)?,
        Scheme::Mb => mb_optimize(flags.m, snr_db, flags.objective, flags.gh_nodes)?.constellation()?,
        learned => {
            let mode = learned.shaping().expect("learned scheme");
            train(&flags.config(snr_db, mode))?.constellation
        }
    };
    let e = evaluate_exact(&c, &channel, flags.objective, flags.gh_nodes, false, GradOptions::default())?;
    let rec = RateRecord {
        scheme,
        m: flags.m,
        snr_db,
        objective: flags.objective,
        rate_bits: e.reported(),
        entropy_bits: e.entropy,
    };
    Ok((c, rec))
}

pub fn constellation_file_name(scheme: Scheme, snr_db: f64) -> String {
    format!("{scheme}_snr{snr_db}.json")
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepOutcome> {
    let snrs = parse_snr_grid(&args.snr_grid)?;
    for &snr in &snrs {
        args.training.config(snr, ShapingMode::Joint).validate()?;
    }
    let outcome = sweep(&args.training, &snrs, args.with_geo)?;
    fs::create_dir_all(&args.out)?;
    let mut curves = BufWriter::new(File::create(args.out.join("curves.csv"))?);
    write_curves_csv(&outcome.records, &mut curves)?;
    curves.flush()?;
    for (scheme, snr, c) in &outcome.constellations {
        c.save(args.out.join(constellation_file_name(*scheme, *snr)))?;
    }
    for (scheme, snr, e) in &outcome.failures {
        eprintln!("{scheme} at {snr} dB failed: {e}");
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub snr_db: f64,
    pub objective: ObjectiveKind,
    /// Reported rate for `objective`.
    pub rate: f64,
    pub mi: f64,
    pub gmi: f64,
    pub entropy: f64,
    pub mean_power: f64,
}

pub fn evaluate_constellation(c: &Constellation, snr_db: f64, objective: ObjectiveKind, gh_nodes: usize) -> Result<EvalReport> {
    let channel = AwgnChannel::new(snr_db)?;
    let mi = evaluate_exact(c, &channel, ObjectiveKind::Mi, gh_nodes, false, GradOptions::default())?;
    let gmi = evaluate_exact(c, &channel, ObjectiveKind::Gmi, gh_nodes, false, GradOptions::default())?;
    let probs = c.probabilities();
    let mean_power = c.normalized_points()?.iter().zip(&probs).map(|(x, p)| p * x.norm_sqr()).sum();
    Ok(EvalReport {
        snr_db,
        objective,
        rate: match objective {
            ObjectiveKind::Mi => mi.reported(),
            ObjectiveKind::Gmi => gmi.reported(),
        },
        mi: mi.reported(),
        gmi: gmi.reported(),
        entropy: mi.entropy,
        mean_power,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let c = Constellation::load(&args.constellation)?;
    evaluate_constellation(&c, args.snr_db, args.objective, args.gh_nodes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub m: usize,
    pub snr_db: f64,
    pub objective: ObjectiveKind,
    pub ablated: bool,
    /// Relative error of each random trial.
    pub errors: Vec<f64>,
    /// Norm of the logit gradient at the uniform square QAM start.
    pub uniform_logit_grad: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_error(&self) -> f64 {
        self.errors.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck m={} snr_db={} objective={} ablate_correction={}", self.m, self.snr_db, self.objective, self.ablated)?;
        for (i, e) in self.errors.iter().enumerate() {
            writeln!(f, "trial {i}: relative error {e:.3e}")?;
        }
        writeln!(f, "max relative error: {:.3e}", self.max_error())?;
        writeln!(f, "uniform start logit gradient norm: {:.3e}", self.uniform_logit_grad)?;
        if self.ablated {
            writeln!(f, "min relative error without correction: {:.3e} (expected > {ABLATION_MIN_ERROR:e})", self.min_error())?;
        }
        writeln!(f, "{}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// Random points (standard complex normal), random logits (standard normal)
/// and Gray labels.
pub fn random_constellation<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Constellation> {
    let points = (0..m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let logits = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    Constellation::new(points, logits, gray_labels(m)?)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport> {
    if !(1e-7..=1e-3).contains(&args.step) {
        return Err(Error::InvalidConfig(format!("finite-difference step {} outside [1e-7, 1e-3]", args.step)));
    }
    if args.trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let channel = AwgnChannel::new(args.snr_db)?;
    let mode = EvalMode::ExactQuadrature { nodes: args.gh_nodes };
    let options = GradOptions { correction: !args.ablate_correction };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut errors = Vec::with_capacity(args.trials);
    for _ in 0..args.trials {
        let c = random_constellation(args.m, &mut rng)?;
        let analytic = grad_with(&c, &channel, args.objective, mode, options)?;
        let fd = fd_gradient(&c, &channel, args.objective, args.step, args.gh_nodes)?;
        errors.push(analytic.relative_error(&fd));
    }
    let start = grad_with(&qam_init(args.m)?, &channel, args.objective, mode, GradOptions::default())?;
    let uniform_logit_grad = start.d_logits.iter().map(|x| x * x).sum::<f64>().sqrt();
    let passed = if args.ablate_correction {
        errors.iter().all(|&e| e > ABLATION_MIN_ERROR)
    } else {
        errors.iter().all(|&e| e <= GRADCHECK_TOL)
    };
    Ok(GradcheckReport {
        m: args.m,
        snr_db: args.snr_db,
        objective: args.objective,
        ablated: args.ablate_correction,
        errors,
        uniform_logit_grad,
        passed,
    })
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport> {
    gradcheck(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_grid_forms() {
        assert_eq!(parse_snr_grid("2:14:2").unwrap(), vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
        assert_eq!(parse_snr_grid("5,12").unwrap(), vec![5.0, 12.0]);
        assert_eq!(parse_snr_grid("-2:0:1").unwrap(), vec![-2.0, -1.0, 0.0]);
        assert_eq!(parse_snr_grid("0:1:0.1").unwrap().len(), 11);
        for bad in ["", "1:2", "3:1:1", "a,b", "0:5:0"] {
            assert!(parse_snr_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn curves_csv_layout() {
        let r = RateRecord { scheme: Scheme::LearnedGeopcs, m: 16, snr_db: 8.0, objective: ObjectiveKind::Gmi, rate_bits: 2.5, entropy_bits: 3.75 };
        let mut buf = Vec::new();
        write_curves_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "scheme,m,snr_db,objective,rate_bits,entropy_bits\nlearned-geopcs,16,8,gmi,2.5,3.75\n");
    }

    #[test]
    fn eval_of_qam_at_high_snr() {
        let r = evaluate_constellation(&qam_init(16).unwrap(), 40.0, ObjectiveKind::Mi, 32).unwrap();
        assert!((r.rate - 4.0).abs() < 1e-9);
        assert!((r.mean_power - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_start_gradient_is_small() {
        let args = GradcheckArgs { m: 4, snr_db: 6.0, objective: ObjectiveKind::Mi, trials: 2, seed: 3, step: 1e-5, gh_nodes: 16, ablate_correction: false };
        let r = gradcheck(&args).unwrap();
        assert!(r.uniform_logit_grad < 1e-8);
        assert!(r.passed, "{r}");
    }
}
