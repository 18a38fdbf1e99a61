//! Runtime scaling sweeps over the number of partitions, the clutter rate
//! and the number of targets.
//!
//! Every sweep tracks the scenario-2 formation with a fixed number of
//! association iterations and no likelihood gating, so the measured time
//! reflects the full cost of each step. Cells run one at a time.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use gtbp::filter::{Filter, FilterConfig};
use gtbp::sim::{build_scenario2, generate_truth, synthesize, BirthSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{filter_for, SCENARIO2_SPACING, SCENARIO2_TARGETS};
use crate::error::{CliError, Result};
use crate::run::{splitmix64, write_atomic};

pub const BENCH_HEADER: &str =
    "sweep,value,rep,mean_step_ms,t_predict_ms,t_assoc_ms,t_update_ms,t_resample_ms,timed_steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    /// Number of preserved partitions M.
    M,
    /// Clutter rate μ_c.
    Clutter,
    /// Number of targets in the formation.
    Targets,
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::M => "m",
            Sweep::Clutter => "clutter",
            Sweep::Targets => "targets",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Repetitions per sweep value.
    pub reps: usize,
    pub steps: usize,
    /// Leading steps left out of the timing.
    pub warmup: usize,
    pub particles: usize,
    /// M when the sweep is not over M.
    pub m_best: usize,
    pub bp_iters: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            reps: 1,
            steps: 100,
            warmup: 10,
            particles: 1000,
            m_best: 2,
            bp_iters: 20,
            seed: 0,
        }
    }
}

/// One row of `bench.csv`; times are per-step means in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub sweep: Sweep,
    pub value: f64,
    pub rep: usize,
    pub mean_step_ms: f64,
    pub t_predict_ms: f64,
    pub t_assoc_ms: f64,
    pub t_update_ms: f64,
    pub t_resample_ms: f64,
    pub timed_steps: usize,
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<Fit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(Fit { slope, intercept: my - slope * mx, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub sweep: Sweep,
    pub values: Vec<f64>,
    /// Mean step time per value, averaged over repetitions.
    pub mean_ms: Vec<f64>,
    pub linear: Option<Fit>,
    /// Fit of `ln(time)` against `ln(value)`; the slope is the scaling
    /// exponent.
    pub loglog: Option<Fit>,
    #[serde(skip)]
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(BENCH_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.sweep.name(),
                r.value,
                r.rep,
                r.mean_step_ms,
                r.t_predict_ms,
                r.t_assoc_ms,
                r.t_update_ms,
                r.t_resample_ms,
                r.timed_steps
            );
        }
        out
    }

    /// Writes `bench.csv` and `bench_fit.json` to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_atomic(&dir.join("bench.csv"), &self.csv())?;
        let fit = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(&dir.join("bench_fit.json"), &(fit + "\n"))
    }
}

fn check_values(sweep: Sweep, values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(CliError::Config("values: a sweep needs at least two points".into()));
    }
    for &v in values {
        let ok = match sweep {
            Sweep::M | Sweep::Targets => v >= 1.0 && v.fract() == 0.0,
            Sweep::Clutter => v > 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(CliError::Config(format!("values: {v} is not valid for the {} sweep", sweep.name())));
        }
    }
    Ok(())
}

/// Times one configuration of the sweep.
fn time_cell(sweep: Sweep, value: f64, rep: usize, opts: &BenchOptions) -> Result<BenchRow> {
    let (targets, clutter, m_best) = match sweep {
        Sweep::M => (SCENARIO2_TARGETS, None, value as usize),
        Sweep::Clutter => (SCENARIO2_TARGETS, Some(value), opts.m_best),
        Sweep::Targets => (value as usize, None, opts.m_best),
    };
    let mut spec = build_scenario2(targets, SCENARIO2_SPACING)?;
    if let Some(c) = clutter {
        spec.clutter_mean = c;
        spec.birth_mean = 1e-5 * c;
    }
    let steps = opts.steps.min(spec.duration);
    let cfg = FilterConfig {
        m_best,
        max_tracks: if sweep == Sweep::Targets { (targets + 10).max(20) } else { FilterConfig::default().max_tracks },
        bp_max_iter: opts.bp_iters,
        bp_tol: 0.0,
        likelihood_gate: None,
        ..filter_for(&spec, opts.particles)
    };
    let seed = splitmix64(opts.seed ^ splitmix64(rep as u64));
    let truth = generate_truth(&spec)?;
    let frames = synthesize(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let birth = BirthSampler::for_scenario(&spec);
    let mut filter = Filter::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let mut row = BenchRow {
        sweep,
        value,
        rep,
        mean_step_ms: 0.0,
        t_predict_ms: 0.0,
        t_assoc_ms: 0.0,
        t_update_ms: 0.0,
        t_resample_ms: 0.0,
        timed_steps: 0,
    };
    for frame in &frames[..steps] {
        let t0 = Instant::now();
        let r = filter.step(frame, &birth, &mut rng)?;
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        if frame.k > opts.warmup {
            row.mean_step_ms += wall;
            row.t_predict_ms += r.timings.predict_ms;
            row.t_assoc_ms += r.timings.assoc_ms;
            row.t_update_ms += r.timings.update_ms;
            row.t_resample_ms += r.timings.resample_ms;
            row.timed_steps += 1;
        }
    }
    let n = row.timed_steps.max(1) as f64;
    row.mean_step_ms /= n;
    row.t_predict_ms /= n;
    row.t_assoc_ms /= n;
    row.t_update_ms /= n;
    row.t_resample_ms /= n;
    Ok(row)
}

/// Runs the sweep sequentially and fits the timings.
///
/// The target sweep sizes the track capacity as `max(20, n + 10)`.
pub fn bench(sweep: Sweep, values: &[f64], opts: &BenchOptions) -> Result<BenchReport> {
    check_values(sweep, values)?;
    if opts.reps < 1 || opts.particles < 1 || opts.bp_iters < 1 || opts.m_best < 1 {
        return Err(CliError::Config("reps, particles, bp_iters and m must be >= 1".into()));
    }
    if opts.warmup >= opts.steps {
        return Err(CliError::Config("warmup: must be smaller than steps".into()));
    }
    let mut rows = Vec::with_capacity(values.len() * opts.reps);
    let mut mean_ms = Vec::with_capacity(values.len());
    for &v in values {
        let mut acc = 0.0;
        for rep in 0..opts.reps {
            let row = time_cell(sweep, v, rep, opts)?;
            acc += row.mean_step_ms;
            rows.push(row);
        }
        mean_ms.push(acc / opts.reps as f64);
    }
    let linear = linear_fit(values, &mean_ms);
    let lx: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = mean_ms.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let loglog = linear_fit(&lx, &ly);
    Ok(BenchReport { sweep, values: values.to_vec(), mean_ms, linear, loglog, rows })
}
