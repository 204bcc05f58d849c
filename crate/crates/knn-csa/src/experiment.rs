//! Replicated convergence sweeps, rate-slope fitting, bias-variance
//! decomposition, bound-coverage checks, and the runtime-scaling harness.
//!
//! Every replication derives its seed from (base seed, cell index,
//! replication index), so sweeps are reproducible bit-for-bit no matter
//! how replications are scheduled. Results are emitted as a long-format
//! CSV (`method,n,m,rep,error,seconds`) plus a JSON summary carrying
//! per-cell aggregates and fitted log-log rate slopes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Matrix, UnlabeledDataset};
#[cfg(test)]
use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::estimator::{
    conditional_moments, csa_estimate, kder_weight_estimate, oracle_estimate, DensitySpec,
};
use crate::bounds;
use crate::rng::SeededRng;
use crate::sampler::{build_sampler, KPolicy};
use crate::shift_sim::{gen_mean_setup, gen_risk_setup, oracle_labeled_targets, SetupTag, SyntheticSetup};

/// An estimation method compared in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    Csa { k: KPolicy },
    KderW,
    OracleQ,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Csa { k: KPolicy::Fixed(k) } => format!("csa-k{k}"),
            Method::Csa { k: KPolicy::LogN } => "csa-klogn".to_string(),
            Method::KderW => "kder-w".to_string(),
            Method::OracleQ => "oracle-q".to_string(),
        }
    }
}

/// Sweep specification: which setup, which (n, m) cells, which methods,
/// how many replications, and the base seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub setup: SetupTag,
    pub cells: Vec<(usize, usize)>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidParameter(format!(
                "replications: must be at least 2, got {}",
                self.replications
            )));
        }
        if self.cells.is_empty() {
            return Err(Error::InvalidParameter("cells: must not be empty".into()));
        }
        for (i, (n, m)) in self.cells.iter().enumerate() {
            if *n == 0 || *m == 0 {
                return Err(Error::InvalidParameter(format!(
                    "cells[{i}]: sizes must be positive, got ({n}, {m})"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods: must not be empty".into()));
        }
        if let Some(d) = self.delta {
            if !d.is_finite() || d <= 0.0 || d >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "delta: must lie in (0, 1), got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// One replication of one method in one cell.
#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub rep: usize,
    /// Absolute estimation error |estimate - true target value|.
    pub error: f64,
    pub seconds: f64,
}

/// Per-(method, cell) aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub mean_abs_error: f64,
    /// Standard error of the mean absolute error: sd / sqrt(R).
    pub std_error: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub setup: SetupTag,
    pub replications: usize,
    pub base_seed: u64,
    pub records: Vec<RepRecord>,
    pub summaries: Vec<CellSummary>,
    /// Fitted log-log slope of mean absolute error against n per method;
    /// absent with fewer than three cells.
    pub slopes: BTreeMap<String, Option<f64>>,
}

fn gen_setup_data(
    tag: SetupTag,
    n: usize,
    m: usize,
    rng: &SeededRng,
) -> Result<(LabeledDataset, UnlabeledDataset, SyntheticSetup)> {
    match tag {
        SetupTag::MeanEstimation => gen_mean_setup(n, m, rng),
        SetupTag::RiskEstimation => gen_risk_setup(n, m, rng),
    }
}

/// Uniform density of the target inputs for the synthetic setups.
fn synthetic_target_density() -> DensitySpec {
    DensitySpec::analytic(|x| {
        if (0.0..=1.0).contains(&x[0]) {
            1.0
        } else {
            0.0
        }
    })
}

fn run_method(
    method: &Method,
    source: &LabeledDataset,
    targets: &UnlabeledDataset,
    setup: &SyntheticSetup,
    rng: &SeededRng,
) -> Result<(f64, f64)> {
    let start = Instant::now();
    let estimate = match method {
        Method::Csa { k } => csa_estimate(source, targets, &setup.h, *k, rng, None)?.estimate,
        Method::KderW => kder_weight_estimate(source, &setup.h, &synthetic_target_density())?.estimate,
        Method::OracleQ => {
            let labeled = oracle_labeled_targets(setup, targets, rng)?;
            oracle_estimate(&labeled, &setup.h)?
        }
    };
    Ok((estimate, start.elapsed().as_secs_f64()))
}

/// Run every (cell, method) for R replications with derived seeds; errors
/// are |estimate - true target value|.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let root = SeededRng::new(config.base_seed);
    let jobs: Vec<(usize, usize)> = (0..config.cells.len())
        .flat_map(|ci| (0..config.replications).map(move |rep| (ci, rep)))
        .collect();

    let per_job: Vec<Vec<RepRecord>> = jobs
        .par_iter()
        .map(|&(ci, rep)| -> Result<Vec<RepRecord>> {
            let (n, m) = config.cells[ci];
            let rep_rng = root.substream(ci as u64).substream(rep as u64);
            let (source, targets, setup) =
                gen_setup_data(config.setup, n, m, &rep_rng).map_err(|e| {
                    Error::InvalidParameter(format!("cell ({n}, {m}) rep {rep}: {e}"))
                })?;
            config
                .methods
                .iter()
                .enumerate()
                .map(|(mi, method)| {
                    let method_rng = rep_rng.substream(16 + mi as u64);
                    let (estimate, seconds) =
                        run_method(method, &source, &targets, &setup, &method_rng).map_err(
                            |e| {
                                Error::InvalidParameter(format!(
                                    "cell ({n}, {m}) rep {rep} method {}: {e}",
                                    method.label()
                                ))
                            },
                        )?;
                    Ok(RepRecord {
                        method: method.label(),
                        n,
                        m,
                        rep,
                        error: (estimate - setup.true_target_value).abs(),
                        seconds,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<RepRecord> = per_job.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    for method in &config.methods {
        let label = method.label();
        for &(n, m) in &config.cells {
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.method == label && r.n == n && r.m == m)
                .map(|r| r.error)
                .collect();
            let secs: Vec<f64> = records
                .iter()
                .filter(|r| r.method == label && r.n == n && r.m == m)
                .map(|r| r.seconds)
                .collect();
            let count = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / count;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (count - 1.0);
            summaries.push(CellSummary {
                method: label.clone(),
                n,
                m,
                mean_abs_error: mean,
                std_error: (var / count).sqrt(),
                mean_seconds: secs.iter().sum::<f64>() / count,
            });
        }
    }

    let mut slopes = BTreeMap::new();
    for method in &config.methods {
        let label = method.label();
        let pts: Vec<(f64, f64)> = summaries
            .iter()
            .filter(|s| s.method == label)
            .map(|s| (s.n as f64, s.mean_abs_error))
            .collect();
        let ns: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let es: Vec<f64> = pts.iter().map(|p| p.1).collect();
        slopes.insert(label, fit_rate(&ns, &es).ok());
    }

    Ok(SweepResult {
        setup: config.setup,
        replications: config.replications,
        base_seed: config.base_seed,
        records,
        summaries,
        slopes,
    })
}

/// Ordinary-least-squares slope of log(err) against log(n).
pub fn fit_rate(ns: &[f64], errs: &[f64]) -> Result<f64> {
    if ns.len() != errs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} sizes but {} errors",
            ns.len(),
            errs.len()
        )));
    }
    if ns.len() < 3 {
        return Err(Error::InvalidParameter(
            "rate fitting needs at least 3 points".into(),
        ));
    }
    for (&n, &e) in ns.iter().zip(errs) {
        if !n.is_finite() || n <= 0.0 {
            return Err(Error::InvalidParameter(format!("nonpositive size {n}")));
        }
        if !e.is_finite() || e <= 0.0 {
            return Err(Error::InvalidParameter(format!("nonpositive error value {e}")));
        }
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all sizes are identical".into()));
    }
    Ok(sxy / sxx)
}

/// Realized bias/variance split of the estimation error of the k-NN
/// conditional measure on a synthetic setup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// Average over targets of the mean shift carried by the k nearest
    /// neighbors: (1/m)·Σ_j (1/k)·Σ_i [m_h(X_i; x*_j) - m_h(x*_j; x*_j)].
    pub bias: f64,
    /// Remainder of the realized error after removing the bias:
    /// label-noise average plus the finite-m integration residual.
    pub variance_term: f64,
}

/// Split the realized error of the conditional-measure estimate into the
/// analytic-neighbor-shift bias and the label-noise remainder.
///
/// The integral over the target input law is approximated by the target
/// sample average, adding O(m^{-1/2}) noise to the variance term.
pub fn decompose_bias_variance(
    setup: &SyntheticSetup,
    source: &LabeledDataset,
    targets: &UnlabeledDataset,
    k: usize,
) -> Result<Decomposition> {
    if !setup.has_conditional_mean() {
        return Err(Error::Unsupported(
            "decomposition needs an analytic conditional mean".into(),
        ));
    }
    if targets.m() == 0 {
        return Err(Error::InvalidParameter("need at least one target row".into()));
    }
    let sampler = build_sampler(source, KPolicy::Fixed(k))?;
    let per_target: Vec<(f64, f64)> = (0..targets.m())
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let x = targets.covariate(j);
            let neighbors = sampler.tree().knn(x, k)?;
            let center = setup
                .conditional_mean_at(x, x)
                .expect("conditional mean checked above");
            let mut realized = 0.0;
            let mut shift = 0.0;
            for &i in &neighbors.indices {
                realized += setup.h.eval(x, &source.labels()[i]);
                let mi = setup
                    .conditional_mean_at(source.covariate(i), x)
                    .expect("conditional mean checked above");
                shift += mi - center;
            }
            let kf = k as f64;
            Ok((realized / kf, shift / kf))
        })
        .collect::<Result<_>>()?;
    let m = targets.m() as f64;
    let q_hat = per_target.iter().map(|p| p.0).sum::<f64>() / m;
    let bias = per_target.iter().map(|p| p.1).sum::<f64>() / m;
    Ok(Decomposition {
        bias,
        variance_term: q_hat - setup.true_target_value - bias,
    })
}

/// Empirical coverage of the sampling-error certificate.
///
/// Runs `reps` fresh replications of the setup at (n, m), computes the
/// exact conditional mean and variance of the clamped function under the
/// pseudo-label law, draws one sampled estimate, and reports the fraction
/// of replications whose deviation is covered by the Bernstein bound.
/// The setup's function is clamped to [-6, 6] so its declared bound is
/// honest.
pub fn coverage_check(
    tag: SetupTag,
    n: usize,
    m: usize,
    k: usize,
    delta: f64,
    reps: usize,
    rng: &SeededRng,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let covered: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let rep_rng = rng.substream(r as u64);
            let (source, targets, setup) = gen_setup_data(tag, n, m, &rep_rng)?;
            let h = setup.h.clamped(-6.0, 6.0);
            let u_h = h.bound().expect("clamped h declares a bound");
            let sampler = build_sampler(&source, KPolicy::Fixed(k))?;
            let (m1, m2) = conditional_moments(&sampler, &targets, &h)?;
            let v_exact = (m2 - m1 * m1).max(0.0);
            let bound = bounds::sampling_bound(u_h, v_exact, m, delta)?;
            let pseudo = sampler.pseudo_label(&targets, &rep_rng.substream(9))?;
            let mut sum = 0.0;
            for j in 0..pseudo.n() {
                sum += h.eval(pseudo.covariate(j), pseudo.label(j));
            }
            let q_star = sum / pseudo.n() as f64;
            Ok((q_star - m1).abs() <= bound)
        })
        .collect::<Result<_>>()?;
    Ok(covered.iter().filter(|c| **c).count() as f64 / reps as f64)
}

const TIMING_RUNS: usize = 5;

fn gen_timing_data(
    tag: SetupTag,
    d: usize,
    n: usize,
    m: usize,
    rng: &SeededRng,
) -> Result<(LabeledDataset, UnlabeledDataset, SyntheticSetup)> {
    let setup = SyntheticSetup::from_tag(tag);
    let mut source_rng = rng.substream(0);
    let mut target_rng = rng.substream(1);
    let mut cov = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = cov.len();
        for _ in 0..d {
            cov.push(source_rng.random_range(-1.0..1.0));
        }
        let label = setup.draw_label(&cov[start..], &mut source_rng);
        labels.push(label);
    }
    let source = LabeledDataset::new(Matrix::from_vec(cov, n, d)?, labels)?;
    let tcov: Vec<f64> = (0..m * d).map(|_| target_rng.random_range(0.0..1.0)).collect();
    let targets = UnlabeledDataset::new(Matrix::from_vec(tcov, m, d)?)?;
    Ok((source, targets, setup))
}

/// Wall time of index build + pseudo-labeling + averaging at each size
/// (m = n), excluding data generation: median of 5 runs per size, pinned
/// to a single thread for stable measurements.
pub fn timing_scan(
    tag: SetupTag,
    d: usize,
    sizes: &[usize],
    policy: KPolicy,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if sizes.len() < 4 {
        return Err(Error::InvalidParameter(
            "timing scan needs at least 4 sizes".into(),
        ));
    }
    if !sizes.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter("sizes must be strictly increasing".into()));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("d must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| -> Result<Vec<(usize, f64)>> {
        let root = SeededRng::new(seed);
        let mut out = Vec::with_capacity(sizes.len());
        for (si, &n) in sizes.iter().enumerate() {
            let data_rng = root.substream(si as u64);
            let (source, targets, setup) = gen_timing_data(tag, d, n, n, &data_rng)?;
            let label_rng = data_rng.substream(7);
            let mut times = Vec::with_capacity(TIMING_RUNS);
            for _ in 0..TIMING_RUNS {
                let start = Instant::now();
                let sampler = build_sampler(&source, policy)?;
                let pseudo = sampler.pseudo_label(&targets, &label_rng)?;
                let mut sum = 0.0;
                for j in 0..pseudo.n() {
                    sum += setup.h.eval(pseudo.covariate(j), pseudo.label(j));
                }
                std::hint::black_box(sum);
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            out.push((n, times[TIMING_RUNS / 2]));
        }
        Ok(out)
    })
}

/// Consecutive time ratios of a scan (t_{i+1}/t_i).
pub fn doubling_ratios(scan: &[(usize, f64)]) -> Vec<f64> {
    scan.windows(2).map(|w| w[1].1 / w[0].1).collect()
}

/// Write per-replication records as long-format CSV:
/// `method,n,m,rep,error,seconds`.
pub fn write_records_csv<P: AsRef<Path>>(result: &SweepResult, path: P) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "method,n,m,rep,error,seconds")?;
    for r in &result.records {
        writeln!(out, "{},{},{},{},{},{}", r.method, r.n, r.m, r.rep, r.error, r.seconds)?;
    }
    out.flush()?;
    Ok(())
}

/// Write the aggregate summary (cells, slopes, seeds) as JSON.
pub fn write_summary_json<P: AsRef<Path>>(result: &SweepResult, path: P) -> Result<()> {
    #[derive(Serialize)]
    struct SummaryDoc<'a> {
        setup: &'a SetupTag,
        replications: usize,
        base_seed: u64,
        summaries: &'a [CellSummary],
        slopes: &'a BTreeMap<String, Option<f64>>,
    }
    let doc = SummaryDoc {
        setup: &result.setup,
        replications: result.replications,
        base_seed: result.base_seed,
        summaries: &result.summaries,
        slopes: &result.slopes,
    };
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, &doc).map_err(|e| Error::Data(format!("json: {e}")))?;
    Ok(())
}
