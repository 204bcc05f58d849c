//! Target-mean estimators: the conditional-sampling estimate, a
//! KDE-ratio importance-weighting baseline, and the oracle average over
//! labeled targets.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::bounds;
use crate::dataset::{Label, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::sampler::{build_sampler, ConditionalSampler, KPolicy};

type HEval = dyn Fn(&[f64], &Label) -> f64 + Send + Sync;

/// A function of (input, label) whose target-distribution mean is being
/// estimated, with an optionally declared sup-norm bound.
///
/// When a bound is declared, every evaluation is checked against it and a
/// violation is an error.
#[derive(Clone)]
pub struct HFunction {
    eval: Arc<HEval>,
    bound: Option<f64>,
}

impl HFunction {
    pub fn new(f: impl Fn(&[f64], &Label) -> f64 + Send + Sync + 'static) -> HFunction {
        HFunction {
            eval: Arc::new(f),
            bound: None,
        }
    }

    /// Declare a sup-norm bound |h| <= u_h.
    pub fn with_bound(mut self, u_h: f64) -> HFunction {
        self.bound = Some(u_h);
        self
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// h(x, y) = y. Categorical labels evaluate to NaN, which estimation
    /// rejects.
    pub fn mean_y() -> HFunction {
        HFunction::new(|_, y| y.as_real().unwrap_or(f64::NAN))
    }

    /// h(x, y) = |y - x0|: absolute residual of the identity predictor on
    /// the first coordinate.
    pub fn abs_residual_identity() -> HFunction {
        HFunction::new(|x, y| match y.as_real() {
            Some(v) => (v - x[0]).abs(),
            None => f64::NAN,
        })
    }

    /// This function composed with a clamp to [lo, hi]; the declared
    /// bound becomes max(|lo|, |hi|).
    pub fn clamped(&self, lo: f64, hi: f64) -> HFunction {
        let inner = self.eval.clone();
        HFunction {
            eval: Arc::new(move |x: &[f64], y: &Label| inner(x, y).clamp(lo, hi)),
            bound: Some(lo.abs().max(hi.abs())),
        }
    }

    pub fn eval(&self, x: &[f64], y: &Label) -> f64 {
        (self.eval)(x, y)
    }

    fn eval_checked(&self, x: &[f64], y: &Label) -> Result<f64> {
        let v = self.eval(x, y);
        if !v.is_finite() {
            return Err(Error::Data(format!("h returned a non-finite value ({v})")));
        }
        if let Some(u) = self.bound {
            if v.abs() > u {
                return Err(Error::Data(format!(
                    "h returned {v}, violating its declared bound {u}"
                )));
            }
        }
        Ok(v)
    }
}

impl std::fmt::Debug for HFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HFunction").field("bound", &self.bound).finish()
    }
}

/// Point estimate with its dispersion and (optionally) a sampling-error
/// certificate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    /// Empirical variance of h over the pseudo-labeled sample.
    pub empirical_variance: f64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_bound: Option<f64>,
    /// Wall-clock seconds spent building the index, labeling, and
    /// averaging.
    pub wall_time: f64,
}

/// Conditional-sampling estimate of the target mean of h: pseudo-label
/// every target row, then average.
///
/// The empirical variance is accumulated in the same pass from the same
/// pseudo-labels; when both `delta` and a declared bound on h are
/// available, the Bernstein sampling bound evaluated at the empirical
/// variance is attached.
pub fn csa_estimate(
    source: &LabeledDataset,
    targets: &UnlabeledDataset,
    h: &HFunction,
    policy: KPolicy,
    rng: &SeededRng,
    delta: Option<f64>,
) -> Result<EstimateReport> {
    if targets.m() == 0 {
        return Err(Error::InvalidParameter(
            "estimation needs at least one target row".into(),
        ));
    }
    if let Some(d) = delta {
        if !d.is_finite() || d <= 0.0 || d >= 1.0 {
            return Err(Error::InvalidParameter("delta must lie in (0, 1)".into()));
        }
    }
    let start = Instant::now();
    let sampler = build_sampler(source, policy)?;
    let pseudo = sampler.pseudo_label(targets, rng)?;
    // Fixed-order reduction keeps the result independent of scheduling.
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for j in 0..pseudo.n() {
        let v = h.eval_checked(pseudo.covariate(j), pseudo.label(j))?;
        sum += v;
        sum_sq += v * v;
    }
    let m = pseudo.n() as f64;
    let estimate = sum / m;
    let empirical_variance = (sum_sq / m - estimate * estimate).max(0.0);
    let sampling_bound = match (delta, h.bound()) {
        (Some(d), Some(u)) => Some(bounds::sampling_bound(u, empirical_variance, pseudo.n(), d)?),
        _ => None,
    };
    Ok(EstimateReport {
        estimate,
        empirical_variance,
        n: source.n(),
        m: pseudo.n(),
        k: sampler.k(),
        sampling_bound,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Exact first and second moments of h under the pseudo-label law,
/// averaged over the given targets:
/// (1/m)·Σ_j (1/k)·Σ_{i in kNN(x*_j)} h(x*_j, Y_i), and the same with h².
///
/// This is the conditional mean the sampled estimate fluctuates around,
/// computed without drawing any labels.
pub fn conditional_moments(
    sampler: &ConditionalSampler<'_>,
    targets: &UnlabeledDataset,
    h: &HFunction,
) -> Result<(f64, f64)> {
    if targets.m() == 0 {
        return Err(Error::InvalidParameter(
            "conditional moments need at least one target row".into(),
        ));
    }
    if targets.d() != sampler.d() {
        return Err(Error::Dimension(format!(
            "targets have d = {} but the source index has d = {}",
            targets.d(),
            sampler.d()
        )));
    }
    let k = sampler.k();
    let per_row: Vec<(f64, f64)> = (0..targets.m())
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let x = targets.covariate(j);
            let neighbors = sampler.tree().knn(x, k)?;
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for &i in &neighbors.indices {
                let v = h.eval_checked(x, &sampler.labels()[i])?;
                m1 += v;
                m2 += v * v;
            }
            Ok((m1 / k as f64, m2 / k as f64))
        })
        .collect::<Result<_>>()?;
    let m = targets.m() as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (a, b) in per_row {
        s1 += a;
        s2 += b;
    }
    Ok((s1 / m, s2 / m))
}

/// First moment only; see [`conditional_moments`].
pub fn conditional_mean(
    sampler: &ConditionalSampler<'_>,
    targets: &UnlabeledDataset,
    h: &HFunction,
) -> Result<f64> {
    Ok(conditional_moments(sampler, targets, h)?.0)
}

type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Target input density supplied to the weighting baseline: either an
/// analytic density function, or a target sample from which a second KDE
/// is built.
#[derive(Clone)]
pub enum DensitySpec {
    Analytic(Arc<DensityFn>),
    Sample(UnlabeledDataset),
}

impl DensitySpec {
    pub fn analytic(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> DensitySpec {
        DensitySpec::Analytic(Arc::new(f))
    }
}

/// Result of the KDE-ratio weighting baseline.
#[derive(Debug, Clone, serde::Serialize)]
pub struct KderReport {
    pub estimate: f64,
    /// Number of source points whose density estimate was clamped up to
    /// the floor; a nonzero count signals near-degenerate weights.
    pub clamp_count: usize,
    /// Scott bandwidth factor n^(-1/(d+4)) applied to per-dimension
    /// source standard deviations.
    pub bandwidth: f64,
}

/// Density floor preventing division blow-ups near the support boundary.
const DENSITY_FLOOR: f64 = 1e-12;

/// Product-Gaussian KDE with a single Scott factor scaled per dimension.
struct Kde<'a> {
    points: &'a crate::dataset::Matrix,
    widths: Vec<f64>,
    norm: f64,
}

impl<'a> Kde<'a> {
    fn fit(points: &'a crate::dataset::Matrix) -> Kde<'a> {
        let n = points.rows();
        let d = points.cols();
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let mut widths = Vec::with_capacity(d);
        for j in 0..d {
            let mean = (0..n).map(|i| points.row(i)[j]).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|i| {
                    let c = points.row(i)[j] - mean;
                    c * c
                })
                .sum::<f64>()
                / n as f64;
            let sd = var.sqrt();
            widths.push(factor * if sd > 0.0 { sd } else { 1.0 });
        }
        let norm = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0)
            / widths.iter().product::<f64>();
        Kde {
            points,
            widths,
            norm,
        }
    }

    fn density(&self, x: &[f64]) -> f64 {
        let n = self.points.rows();
        let mut acc = 0.0;
        for i in 0..n {
            let row = self.points.row(i);
            let mut e = 0.0;
            for j in 0..x.len() {
                let u = (x[j] - row[j]) / self.widths[j];
                e += u * u;
            }
            acc += (-0.5 * e).exp();
        }
        self.norm * acc / n as f64
    }
}

/// Importance-weighting baseline: (1/n)·Σ h(X_i, Y_i)·q̂(X_i)/max(p̂(X_i), ε)
/// with p̂ a Gaussian KDE of the source inputs using the Scott bandwidth
/// n^(-1/(d+4)) on source-standardized data.
pub fn kder_weight_estimate(
    source: &LabeledDataset,
    h: &HFunction,
    q_density: &DensitySpec,
) -> Result<KderReport> {
    let n = source.n();
    let p_kde = Kde::fit(source.covariates());
    let p_hat: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| p_kde.density(source.covariate(i)))
        .collect();

    let q_hat: Vec<f64> = match q_density {
        DensitySpec::Analytic(q) => (0..n).map(|i| q(source.covariate(i))).collect(),
        DensitySpec::Sample(targets) => {
            if targets.m() == 0 {
                return Err(Error::InvalidParameter(
                    "target sample for the density estimate is empty".into(),
                ));
            }
            if targets.d() != source.d() {
                return Err(Error::Dimension(format!(
                    "target sample has d = {} but source has d = {}",
                    targets.d(),
                    source.d()
                )));
            }
            let q_kde = Kde::fit(targets.covariates());
            (0..n)
                .into_par_iter()
                .map(|i| q_kde.density(source.covariate(i)))
                .collect()
        }
    };

    let clamp_count = p_hat.iter().filter(|&&p| p < DENSITY_FLOOR).count();
    if clamp_count == n {
        return Err(Error::DegenerateWeights(format!(
            "all {n} source density estimates fall below the {DENSITY_FLOOR} floor"
        )));
    }
    let mut sum = 0.0;
    for i in 0..n {
        let v = h.eval_checked(source.covariate(i), source.label(i))?;
        if !q_hat[i].is_finite() || q_hat[i] < 0.0 {
            return Err(Error::Data(format!(
                "target density evaluated to {} at source row {i}",
                q_hat[i]
            )));
        }
        sum += v * q_hat[i] / p_hat[i].max(DENSITY_FLOOR);
    }
    Ok(KderReport {
        estimate: sum / n as f64,
        clamp_count,
        bandwidth: (n as f64).powf(-1.0 / (source.d() as f64 + 4.0)),
    })
}

/// Plain sample mean of h over a labeled target sample.
pub fn oracle_estimate(labeled_targets: &LabeledDataset, h: &HFunction) -> Result<f64> {
    if labeled_targets.n() == 0 {
        return Err(Error::InvalidParameter(
            "oracle estimation needs at least one row".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..labeled_targets.n() {
        sum += h.eval_checked(labeled_targets.covariate(i), labeled_targets.label(i))?;
    }
    Ok(sum / labeled_targets.n() as f64)
}
