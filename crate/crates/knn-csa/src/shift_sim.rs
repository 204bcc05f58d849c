//! Synthetic covariate-shift generators and rejection-based bias
//! subsampling.
//!
//! Two one-dimensional setups are provided. Both draw source inputs
//! uniformly on [-1, 1] and target inputs uniformly on [0, 1], so the
//! input marginals differ while the conditional label law is shared:
//!
//! - mean estimation: labels are N(x, 0.1), the function of interest is
//!   h(x, y) = y, and its target mean is exactly 0.5 (the source mean
//!   is 0, so unadapted estimation fails);
//! - risk estimation: labels are N(|x|, 0.1), h(x, y) = |y - x| is the
//!   absolute loss of the identity predictor, and the target mean is
//!   E|N(0, 0.1)| = sqrt(0.2/π).

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Label, LabeledDataset, Matrix, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::estimator::HFunction;
use crate::rng::SeededRng;

/// Label noise standard deviation: the conditional variance is 0.1.
const NOISE_SD: f64 = 0.316_227_766_016_837_94; // sqrt(0.1)

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean of |Z| for Z ~ N(mu, sigma²):
/// mu·(1 - 2·Φ(-mu/sigma)) + 2·sigma·φ(mu/sigma).
pub fn folded_normal_mean(mu: f64, sigma: f64) -> f64 {
    let r = mu / sigma;
    mu * (1.0 - 2.0 * normal_cdf(-r)) + 2.0 * sigma * normal_pdf(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetupTag {
    MeanEstimation,
    RiskEstimation,
}

type CondMean = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A synthetic estimation problem: the function of interest, its known
/// target-distribution mean, and (when available) the analytic
/// conditional mean of h used by the bias/variance decomposition.
#[derive(Clone)]
pub struct SyntheticSetup {
    pub tag: SetupTag,
    pub true_target_value: f64,
    pub h: HFunction,
    conditional_mean: Option<CondMean>,
}

impl SyntheticSetup {
    pub fn mean_estimation() -> SyntheticSetup {
        SyntheticSetup {
            tag: SetupTag::MeanEstimation,
            true_target_value: 0.5,
            h: HFunction::mean_y(),
            // E[h(Y, x) | X = x'] = E[Y | X = x'] = x'.
            conditional_mean: Some(Arc::new(|x_src: &[f64], _x_tgt: &[f64]| x_src[0])),
        }
    }

    pub fn risk_estimation() -> SyntheticSetup {
        SyntheticSetup {
            tag: SetupTag::RiskEstimation,
            true_target_value: (0.2 / std::f64::consts::PI).sqrt(),
            h: HFunction::abs_residual_identity(),
            // E[|Y - x| | X = x'] with Y ~ N(|x'|, 0.1) is the folded
            // normal mean at mu = |x'| - x.
            conditional_mean: Some(Arc::new(|x_src: &[f64], x_tgt: &[f64]| {
                folded_normal_mean(x_src[0].abs() - x_tgt[0], NOISE_SD)
            })),
        }
    }

    pub fn from_tag(tag: SetupTag) -> SyntheticSetup {
        match tag {
            SetupTag::MeanEstimation => SyntheticSetup::mean_estimation(),
            SetupTag::RiskEstimation => SyntheticSetup::risk_estimation(),
        }
    }

    /// m_h(x_src; x_tgt) = E[h(Y, x_tgt) | X = x_src], when analytic.
    pub fn conditional_mean_at(&self, x_src: &[f64], x_tgt: &[f64]) -> Option<f64> {
        self.conditional_mean.as_ref().map(|f| f(x_src, x_tgt))
    }

    pub fn has_conditional_mean(&self) -> bool {
        self.conditional_mean.is_some()
    }

    /// Draw a label from the true conditional law at `x`.
    pub fn draw_label(&self, x: &[f64], rng: &mut SeededRng) -> Label {
        let mean = match self.tag {
            SetupTag::MeanEstimation => x[0],
            SetupTag::RiskEstimation => x[0].abs(),
        };
        let z: f64 = StandardNormal.sample(rng);
        Label::Real(mean + NOISE_SD * z)
    }

    /// A variant for tests exercising the unsupported-decomposition path.
    #[cfg(test)]
    pub(crate) fn without_conditional_mean(mut self) -> SyntheticSetup {
        self.conditional_mean = None;
        self
    }
}

impl std::fmt::Debug for SyntheticSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticSetup")
            .field("tag", &self.tag)
            .field("true_target_value", &self.true_target_value)
            .finish()
    }
}

fn gen_setup(
    tag: SetupTag,
    n: usize,
    m: usize,
    rng: &SeededRng,
) -> Result<(LabeledDataset, UnlabeledDataset, SyntheticSetup)> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let setup = SyntheticSetup::from_tag(tag);
    // One stream per dataset so that source and target draws do not
    // interleave.
    let mut source_rng = rng.substream(0);
    let mut target_rng = rng.substream(1);

    let mut cov = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = source_rng.random_range(-1.0..1.0);
        labels.push(setup.draw_label(&[x], &mut source_rng));
        cov.push(x);
    }
    let source = LabeledDataset::new(Matrix::from_vec(cov, n, 1)?, labels)?;

    let tcov: Vec<f64> = (0..m).map(|_| target_rng.random_range(0.0..1.0)).collect();
    let targets = UnlabeledDataset::new(Matrix::from_vec(tcov, m, 1)?)?;
    Ok((source, targets, setup))
}

/// Mean-estimation setup: source X ~ U[-1,1] with Y|X=x ~ N(x, 0.1),
/// targets X* ~ U[0,1], h(x, y) = y, target mean 0.5.
pub fn gen_mean_setup(
    n: usize,
    m: usize,
    rng: &SeededRng,
) -> Result<(LabeledDataset, UnlabeledDataset, SyntheticSetup)> {
    gen_setup(SetupTag::MeanEstimation, n, m, rng)
}

/// Risk-estimation setup: Y|X=x ~ N(|x|, 0.1), h(x, y) = |y - x|,
/// target mean sqrt(0.2/π).
pub fn gen_risk_setup(
    n: usize,
    m: usize,
    rng: &SeededRng,
) -> Result<(LabeledDataset, UnlabeledDataset, SyntheticSetup)> {
    gen_setup(SetupTag::RiskEstimation, n, m, rng)
}

/// Attach labels drawn from the true conditional law to target inputs
/// (what an oracle with target-label access would observe).
pub fn oracle_labeled_targets(
    setup: &SyntheticSetup,
    targets: &UnlabeledDataset,
    rng: &SeededRng,
) -> Result<LabeledDataset> {
    let mut label_rng = rng.substream(2);
    let labels: Vec<Label> = (0..targets.m())
        .map(|j| setup.draw_label(targets.covariate(j), &mut label_rng))
        .collect();
    LabeledDataset::new(targets.covariates().clone(), labels)
}

/// Rejection rule used to simulate covariate shift on real datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasRule {
    /// Keep a row with probability min(1, 4·x_c), clipped below at 0.
    LinearClip { column: usize },
    /// Keep a row with probability proportional to exp(-20·|x_c + 0.06|),
    /// normalized by the in-sample maximum so probabilities stay in [0, 1].
    ExpAge { column: usize },
}

impl BiasRule {
    fn column(&self) -> usize {
        match self {
            BiasRule::LinearClip { column } | BiasRule::ExpAge { column } => *column,
        }
    }

    /// Per-row acceptance probabilities, each in [0, 1].
    pub fn acceptance_probabilities(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        let c = self.column();
        if c >= data.d() {
            return Err(Error::InvalidParameter(format!(
                "column {c} out of range for d = {}",
                data.d()
            )));
        }
        let xs: Vec<f64> = (0..data.n()).map(|i| data.covariate(i)[c]).collect();
        Ok(match self {
            BiasRule::LinearClip { .. } => {
                xs.iter().map(|x| (4.0 * x).clamp(0.0, 1.0)).collect()
            }
            BiasRule::ExpAge { .. } => {
                let raw: Vec<f64> = xs.iter().map(|x| (-20.0 * (x + 0.06).abs()).exp()).collect();
                let max = raw.iter().cloned().fold(f64::MIN, f64::max);
                raw.iter().map(|e| e / max).collect()
            }
        })
    }
}

/// Keep each row independently with its rule probability, preserving
/// order. An empty result is an error.
pub fn bias_subsample(
    data: &LabeledDataset,
    rule: &BiasRule,
    rng: &mut SeededRng,
) -> Result<LabeledDataset> {
    let probs = rule.acceptance_probabilities(data)?;
    let mut cov = Vec::new();
    let mut labels = Vec::new();
    for (i, p) in probs.iter().enumerate() {
        let u: f64 = rng.random_range(0.0..1.0);
        if u < *p {
            cov.extend_from_slice(data.covariate(i));
            labels.push(data.label(i).clone());
        }
    }
    if labels.is_empty() {
        return Err(Error::DegenerateSubsample(
            "the rejection rule removed every row".into(),
        ));
    }
    let rows = labels.len();
    LabeledDataset::new(Matrix::from_vec(cov, rows, data.d())?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_setup_supports_and_truth() {
        let rng = SeededRng::new(1);
        let (source, targets, setup) = gen_mean_setup(500, 400, &rng).unwrap();
        assert_eq!(setup.true_target_value, 0.5);
        for i in 0..source.n() {
            let x = source.covariate(i)[0];
            assert!((-1.0..1.0).contains(&x));
            assert!(source.label(i).as_real().unwrap().is_finite());
        }
        for j in 0..targets.m() {
            let x = targets.covariate(j)[0];
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn risk_setup_truth_is_folded_normal_mean() {
        let setup = SyntheticSetup::risk_estimation();
        let want = (0.2 / std::f64::consts::PI).sqrt();
        assert!((setup.true_target_value - want).abs() < 1e-15);
        assert!((want - 0.252_313_252_202_016).abs() < 1e-12);
        // Same value from the general folded-normal formula at mu = 0.
        assert!((folded_normal_mean(0.0, NOISE_SD) - want).abs() < 1e-15);
    }

    #[test]
    fn risk_truth_matches_monte_carlo_oracle() {
        // Independent check of sqrt(0.2/π) by direct simulation of
        // E|N(0, 0.1)|.
        let mut rng = SeededRng::new(2024);
        let draws = 10_000_000usize;
        let mut acc = 0.0;
        for _ in 0..draws {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += (NOISE_SD * z).abs();
        }
        let mc = acc / draws as f64;
        let want = (0.2 / std::f64::consts::PI).sqrt();
        // sd of |N| is sqrt(0.1 - want²) ≈ 0.19; five sigma of the mean.
        let band = 5.0 * (0.1 - want * want).sqrt() / (draws as f64).sqrt();
        assert!((mc - want).abs() < band, "mc = {mc}, want = {want}");
    }

    #[test]
    fn risk_conditional_mean_larger_left_of_origin() {
        // At x < 0 the label mean is |x| = -x, so the residual y - x is
        // N(-2x, 0.1): the conditional mean of h at such points is the
        // folded normal mean at mu = -2x > 0, exceeding the x >= 0 value.
        let setup = SyntheticSetup::risk_estimation();
        let at = |xs: f64, xt: f64| setup.conditional_mean_at(&[xs], &[xt]).unwrap();
        let on_support = at(0.3, 0.3);
        let off_support = at(-0.3, -0.3);
        assert!((on_support - folded_normal_mean(0.0, NOISE_SD)).abs() < 1e-15);
        assert!((off_support - folded_normal_mean(0.6, NOISE_SD)).abs() < 1e-12);
        assert!(off_support > on_support);
    }

    #[test]
    fn generation_is_deterministic() {
        let (s1, t1, _) = gen_risk_setup(100, 50, &SeededRng::new(9)).unwrap();
        let (s2, t2, _) = gen_risk_setup(100, 50, &SeededRng::new(9)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        let (s3, _, _) = gen_risk_setup(100, 50, &SeededRng::new(10)).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn oracle_target_mean_near_truth() {
        let rng = SeededRng::new(3);
        let (_, targets, setup) = gen_mean_setup(10, 100_000, &rng).unwrap();
        let labeled = oracle_labeled_targets(&setup, &targets, &rng).unwrap();
        let mean: f64 = labeled.labels().iter().filter_map(Label::as_real).sum::<f64>()
            / labeled.n() as f64;
        // Var(Y) under the target law is 1/12 + 0.1.
        let band = 5.0 * ((1.0 / 12.0 + 0.1) / labeled.n() as f64).sqrt();
        assert!((mean - 0.5).abs() < band, "mean = {mean}");
    }

    #[test]
    fn linear_clip_probabilities() {
        let data = LabeledDataset::new(
            Matrix::from_rows(&[vec![0.5], vec![0.1], vec![-0.2]]).unwrap(),
            vec![Label::Real(0.0), Label::Real(1.0), Label::Real(2.0)],
        )
        .unwrap();
        let rule = BiasRule::LinearClip { column: 0 };
        let probs = rule.acceptance_probabilities(&data).unwrap();
        assert_eq!(probs, vec![1.0, 0.4, 0.0]);
    }

    #[test]
    fn exp_age_peaks_at_minus_point_06() {
        let data = LabeledDataset::new(
            Matrix::from_rows(&[vec![-0.06], vec![0.0], vec![1.0]]).unwrap(),
            vec![Label::Real(0.0), Label::Real(1.0), Label::Real(2.0)],
        )
        .unwrap();
        let rule = BiasRule::ExpAge { column: 0 };
        let probs = rule.acceptance_probabilities(&data).unwrap();
        assert_eq!(probs[0], 1.0);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(probs[1] < 1.0 && probs[2] < probs[1]);
    }

    #[test]
    fn subsample_preserves_order_and_matches_rates() {
        let mut rng = SeededRng::new(12);
        use rand::Rng;
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let data = LabeledDataset::new(
            Matrix::from_rows(&xs.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap(),
            xs.iter().map(|x| Label::Real(*x)).collect(),
        )
        .unwrap();
        let rule = BiasRule::LinearClip { column: 0 };
        let mut sub_rng = SeededRng::new(77);
        let sub = bias_subsample(&data, &rule, &mut sub_rng).unwrap();
        // Order preserved: covariates strictly follow the original sequence.
        let mut cursor = 0usize;
        for i in 0..sub.n() {
            let v = sub.covariate(i)[0];
            while xs[cursor] != v {
                cursor += 1;
            }
            cursor += 1;
        }
        // Acceptance frequency per bin within five binomial sd of 4·x̄.
        let bins = 5;
        for b in 0..bins {
            let lo = 0.5 * b as f64 / bins as f64;
            let hi = 0.5 * (b + 1) as f64 / bins as f64;
            let total = xs.iter().filter(|x| (lo..hi).contains(x)).count();
            let kept = (0..sub.n())
                .filter(|&i| (lo..hi).contains(&sub.covariate(i)[0]))
                .count();
            let p_mid: f64 = xs
                .iter()
                .filter(|x| (lo..hi).contains(x))
                .map(|x| (4.0 * x).clamp(0.0, 1.0))
                .sum::<f64>()
                / total as f64;
            let sd = (p_mid * (1.0 - p_mid) / total as f64).sqrt();
            let freq = kept as f64 / total as f64;
            assert!(
                (freq - p_mid).abs() <= 5.0 * sd.max(1e-9),
                "bin {b}: freq = {freq}, p = {p_mid}"
            );
        }
    }

    #[test]
    fn subsample_rejecting_everything_is_an_error() {
        let data = LabeledDataset::new(
            Matrix::from_rows(&[vec![-1.0], vec![-2.0]]).unwrap(),
            vec![Label::Real(0.0), Label::Real(1.0)],
        )
        .unwrap();
        let rule = BiasRule::LinearClip { column: 0 };
        let mut rng = SeededRng::new(0);
        assert!(matches!(
            bias_subsample(&data, &rule, &mut rng),
            Err(Error::DegenerateSubsample(_))
        ));
    }

    #[test]
    fn out_of_range_column_rejected() {
        let data = LabeledDataset::new(
            Matrix::from_rows(&[vec![0.5]]).unwrap(),
            vec![Label::Real(0.0)],
        )
        .unwrap();
        let rule = BiasRule::LinearClip { column: 3 };
        assert!(rule.acceptance_probabilities(&data).is_err());
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        // Φ(1) and Φ(-1.96), classic table values at full precision.
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((normal_cdf(-1.96) - 0.024_997_895_148_220_43).abs() < 1e-14);
    }
}
