//! Conditional sampling of pseudo-labels from the k nearest source
//! neighbors.
//!
//! For a target input x*, the sampler finds the k nearest source
//! covariates and returns the label of one of them chosen uniformly at
//! random, realizing the k-NN estimate of the conditional label law
//! (a uniform mixture of point masses at the neighbor labels). With the
//! covariate-shift assumption, averaging any function over pseudo-labeled
//! targets estimates its target-distribution mean.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::dataset::{Label, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::spatial::KdTree;

/// Choice of the neighbor count.
///
/// `Fixed(k)` uses k as given; `LogN` resolves to max(1, ⌈ln n⌉) for a
/// source of size n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    Fixed(usize),
    LogN,
}

impl KPolicy {
    pub fn resolve(&self, n: usize) -> usize {
        match self {
            KPolicy::Fixed(k) => *k,
            KPolicy::LogN => ((n as f64).ln().ceil() as usize).max(1),
        }
    }
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPolicy::Fixed(k) => write!(f, "{k}"),
            KPolicy::LogN => write!(f, "logn"),
        }
    }
}

impl FromStr for KPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<KPolicy> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("logn") {
            return Ok(KPolicy::LogN);
        }
        let k: usize = t
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("k must be a positive integer or `logn`, got `{s}`")))?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        Ok(KPolicy::Fixed(k))
    }
}

// JSON spelling: a positive integer or the string "logn".
impl serde::Serialize for KPolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KPolicy::Fixed(k) => serializer.serialize_u64(*k as u64),
            KPolicy::LogN => serializer.serialize_str("logn"),
        }
    }
}

impl<'de> serde::Deserialize<'de> for KPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<KPolicy, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Fixed(usize),
            Named(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Fixed(k) if k >= 1 => Ok(KPolicy::Fixed(k)),
            Repr::Fixed(_) => Err(serde::de::Error::custom("k must be at least 1")),
            Repr::Named(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A built spatial index over the source covariates together with the
/// source labels and a resolved neighbor count.
///
/// Immutable and shareable across threads.
pub struct ConditionalSampler<'a> {
    tree: KdTree<'a>,
    labels: &'a [Label],
    k: usize,
}

/// Index the source sample for conditional sampling.
pub fn build_sampler(source: &LabeledDataset, policy: KPolicy) -> Result<ConditionalSampler<'_>> {
    let k = policy.resolve(source.n());
    if k > source.n() {
        return Err(Error::InvalidParameter(format!(
            "k = {} exceeds the source size n = {}",
            k,
            source.n()
        )));
    }
    Ok(ConditionalSampler {
        tree: KdTree::build(source.covariates())?,
        labels: source.labels(),
        k,
    })
}

impl<'a> ConditionalSampler<'a> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn d(&self) -> usize {
        self.tree.d()
    }

    pub fn tree(&self) -> &KdTree<'a> {
        &self.tree
    }

    pub(crate) fn labels(&self) -> &'a [Label] {
        self.labels
    }

    /// Draw one label: uniform over the labels of the k nearest source
    /// points to `x_star`.
    pub fn sample_label(&self, x_star: &[f64], rng: &mut SeededRng) -> Result<Label> {
        if self.k == 1 {
            let (index, _) = self.tree.nearest(x_star)?;
            return Ok(self.labels[index].clone());
        }
        let neighbors = self.tree.knn(x_star, self.k)?;
        let pick = rng.random_range(0..self.k);
        Ok(self.labels[neighbors.indices[pick]].clone())
    }

    /// Attach one sampled label to every target row.
    ///
    /// Row j draws from the substream derived from `(rng.seed(), j)`, so
    /// the output depends only on (seed, source, targets, k): rows may be
    /// processed in parallel or in any order with identical results.
    pub fn pseudo_label(
        &self,
        targets: &UnlabeledDataset,
        rng: &SeededRng,
    ) -> Result<LabeledDataset> {
        if targets.d() != self.d() {
            return Err(Error::Dimension(format!(
                "targets have d = {} but the source index has d = {}",
                targets.d(),
                self.d()
            )));
        }
        let labels = (0..targets.m())
            .into_par_iter()
            .map(|j| {
                let mut row_rng = rng.substream(j as u64);
                self.sample_label(targets.covariate(j), &mut row_rng)
            })
            .collect::<Result<Vec<Label>>>()?;
        LabeledDataset::from_parts(targets.covariates().clone(), labels)
    }
}
