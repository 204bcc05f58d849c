//! Covariate shift adaptation by k-nearest-neighbor conditional sampling.
//!
//! Given a labeled source sample and an unlabeled target sample whose input
//! marginals differ (while the conditional label law is shared), this crate
//! attaches pseudo-labels to the target inputs by drawing uniformly among the
//! labels of each input's k nearest source neighbors. Averaging a function of
//! interest over the pseudo-labeled sample then estimates its target-
//! distribution mean without any density-ratio weighting or hyper-parameter
//! tuning; `k = 1` is the recommended default.
//!
//! The crate bundles:
//!
//! - [`dataset`]: CSV-backed data model and source-statistics standardization,
//! - [`spatial`]: an exact k-d tree with a brute-force verification oracle,
//! - [`sampler`]: the conditional sampler producing pseudo-labels,
//! - [`estimator`]: the sampling estimator, a KDE-ratio weighting baseline,
//!   and an oracle estimator for labeled targets,
//! - [`bounds`]: computable finite-sample error certificates,
//! - [`shift_sim`]: synthetic shift generators and rejection subsampling,
//! - [`experiment`]: replicated convergence sweeps, bias/variance
//!   decomposition, coverage checks, and a runtime-scaling harness.
//!
//! # Example
//! ```
//! use knn_csa::{gen_mean_setup, build_sampler, csa_estimate, KPolicy, SeededRng};
//!
//! let rng = SeededRng::new(7);
//! let (source, targets, setup) = gen_mean_setup(2000, 2000, &rng).unwrap();
//! let report = csa_estimate(&source, &targets, &setup.h, KPolicy::Fixed(1), &rng, None).unwrap();
//! assert!((report.estimate - 0.5).abs() < 0.1);
//! ```

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod rng;
pub mod sampler;
pub mod shift_sim;
pub mod spatial;

pub use bounds::{combined_bound, nn_bound, sampling_bound, unit_ball_volume, BoundInputs, BoundReport};
pub use dataset::{
    standardize, Label, LabeledDataset, Matrix, StandardizationParams, UnlabeledDataset,
};
pub use error::{Error, Result};
pub use estimator::{
    conditional_mean, conditional_moments, csa_estimate, kder_weight_estimate, oracle_estimate,
    DensitySpec, EstimateReport, HFunction, KderReport,
};
pub use experiment::{
    coverage_check, decompose_bias_variance, fit_rate, run_sweep, timing_scan, Method, SweepConfig,
    SweepResult,
};
pub use rng::SeededRng;
pub use sampler::{build_sampler, ConditionalSampler, KPolicy};
pub use shift_sim::{
    bias_subsample, gen_mean_setup, gen_risk_setup, oracle_labeled_targets, BiasRule, SetupTag,
    SyntheticSetup,
};
pub use spatial::{brute_force_knn, KdTree, NeighborSet};
