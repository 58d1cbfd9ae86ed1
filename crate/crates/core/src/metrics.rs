//! Ranking and likelihood metrics: AUC and NLL plus their propensity-weighted
//! debiased variants (D-AUC, D-NLL), CTCVR metrics over impression splits,
//! and oracle-based entire-space evaluation for synthetic data.
//!
//! AUC and D-AUC are computed via weighted rank accumulation in O(n log n);
//! ties between a positive and a negative contribute half their joint weight,
//! so with constant propensities D-AUC reduces exactly to tie-aware AUC.

use alloc::string::String;
use alloc::vec::Vec;

use crate::fmath;
use crate::nn::PROB_EPS;

/// One scored example for metric computation.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub sample_id: u64,
    pub score: f64,
    pub label: u8,
    /// Observation propensity in (0, 1]; its inverse is the debiasing weight.
    pub propensity: Option<f64>,
}

impl ScoredSample {
    pub fn new(sample_id: u64, score: f64, label: u8) -> Self {
        ScoredSample {
            sample_id,
            score,
            label,
            propensity: None,
        }
    }

    pub fn with_propensity(sample_id: u64, score: f64, label: u8, propensity: f64) -> Self {
        ScoredSample {
            sample_id,
            score,
            label,
            propensity: Some(propensity),
        }
    }
}

/// Why a metric could not be computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricError {
    /// All labels identical; AUC undefined.
    SingleClass,
    /// No samples.
    Empty,
    /// A debiased metric was requested without propensities.
    MissingPropensity,
}

impl core::fmt::Display for MetricError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MetricError::SingleClass => write!(f, "metric undefined: single-class input"),
            MetricError::Empty => write!(f, "metric undefined: empty input"),
            MetricError::MissingPropensity => write!(f, "propensity missing on sample"),
        }
    }
}

/// Weighted tie-aware AUC over (score, label, weight) triples.
///
/// Numerator: sum over positive-negative pairs of w_i * w_j * [I(s_i > s_j)
/// + 0.5 * I(s_i == s_j)], normalized by (sum of positive weights) * (sum of
/// negative weights). Computed by a single sweep over score-sorted samples,
/// grouping equal scores.
fn weighted_auc(items: &mut Vec<(f64, u8, f64)>) -> Result<f64, MetricError> {
    if items.is_empty() {
        return Err(MetricError::Empty);
    }
    let pos_w: f64 = items.iter().filter(|x| x.1 == 1).map(|x| x.2).sum();
    let neg_w: f64 = items.iter().filter(|x| x.1 == 0).map(|x| x.2).sum();
    if pos_w == 0.0 || neg_w == 0.0 {
        return Err(MetricError::SingleClass);
    }
    items.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut num = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    let n = items.len();
    while i < n {
        let mut j = i;
        let mut tie_pos = 0.0;
        let mut tie_neg = 0.0;
        while j < n && items[j].0 == items[i].0 {
            if items[j].1 == 1 {
                tie_pos += items[j].2;
            } else {
                tie_neg += items[j].2;
            }
            j += 1;
        }
        num += tie_pos * (neg_below + 0.5 * tie_neg);
        neg_below += tie_neg;
        i = j;
    }
    Ok(num / (pos_w * neg_w))
}

/// Tie-aware AUC: probability a random positive outscores a random negative.
pub fn auc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    let mut items: Vec<(f64, u8, f64)> =
        samples.iter().map(|s| (s.score, s.label, 1.0)).collect();
    weighted_auc(&mut items)
}

/// Debiased AUC: every sample weighted by 1/propensity.
///
/// Weights are normalized by the first weight; the statistic is homogeneous
/// of degree zero in the weights, and this makes the constant-propensity
/// case reduce to plain [`auc`] bit-exactly.
pub fn d_auc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    let mut items = Vec::with_capacity(samples.len());
    let mut first = None;
    for s in samples {
        let p = s.propensity.ok_or(MetricError::MissingPropensity)?;
        let w = 1.0 / p;
        let base = *first.get_or_insert(w);
        items.push((s.score, s.label, w / base));
    }
    weighted_auc(&mut items)
}

fn sample_nll(s: &ScoredSample) -> f64 {
    let p = s.score.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if s.label == 1 {
        -fmath::ln(p)
    } else {
        -fmath::ln(1.0 - p)
    }
}

/// Mean per-sample negative log-likelihood.
pub fn nll(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(samples.iter().map(sample_nll).sum::<f64>() / samples.len() as f64)
}

/// Propensity-weighted NLL, self-normalized by the total weight.
pub fn d_nll(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut first = None;
    for s in samples {
        let p = s.propensity.ok_or(MetricError::MissingPropensity)?;
        let w = 1.0 / p;
        let base = *first.get_or_insert(w);
        num += (w / base) * sample_nll(s);
        den += w / base;
    }
    Ok(num / den)
}

/// CTCVR metrics over an impression split: AUC/NLL of the product score
/// p_ctr * p_cvr against post-view conversion labels. The CTR scores must
/// come from one shared, independently trained CTR model so all competitors
/// are comparable.
pub fn ctcvr_metrics(
    cvr_scores: &[f64],
    ctr_scores: &[f64],
    pv_conv_labels: &[u8],
) -> (Result<f64, MetricError>, Result<f64, MetricError>) {
    debug_assert_eq!(cvr_scores.len(), ctr_scores.len());
    debug_assert_eq!(cvr_scores.len(), pv_conv_labels.len());
    let samples: Vec<ScoredSample> = cvr_scores
        .iter()
        .zip(ctr_scores)
        .zip(pv_conv_labels)
        .enumerate()
        .map(|(i, ((&v, &c), &y))| ScoredSample::new(i as u64, v * c, y))
        .collect();
    (auc(&samples), nll(&samples))
}

/// Entire-space CVR AUC against counterfactual conversion labels sampled from
/// the generator's oracle. Only meaningful on synthetic data.
pub fn entire_space_oracle_auc(
    cvr_scores: &[f64],
    counterfactual_labels: &[u8],
) -> Result<f64, MetricError> {
    debug_assert_eq!(cvr_scores.len(), counterfactual_labels.len());
    let samples: Vec<ScoredSample> = cvr_scores
        .iter()
        .zip(counterfactual_labels)
        .enumerate()
        .map(|(i, (&s, &y))| ScoredSample::new(i as u64, s, y))
        .collect();
    auc(&samples)
}

/// All headline metrics for one trained model on one split.
///
/// Undefined metrics (e.g. a single-class split) are `None`, never zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub auc_cvr: Option<f64>,
    pub nll_cvr: Option<f64>,
    pub d_auc_cvr: Option<f64>,
    pub d_nll_cvr: Option<f64>,
    pub auc_ctcvr: Option<f64>,
    pub nll_ctcvr: Option<f64>,
    pub oracle_auc_cvr_entire_space: Option<f64>,
    pub n_clicked: usize,
    pub n_impressions: usize,
}

impl MetricReport {
    /// Ordered (name, value) pairs for serialization.
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        alloc::vec![
            ("auc_ctcvr", self.auc_ctcvr),
            ("auc_cvr", self.auc_cvr),
            ("d_auc_cvr", self.d_auc_cvr),
            ("nll_ctcvr", self.nll_ctcvr),
            ("nll_cvr", self.nll_cvr),
            ("d_nll_cvr", self.d_nll_cvr),
            ("oracle_auc_cvr_entire_space", self.oracle_auc_cvr_entire_space),
        ]
    }

    pub fn metric_by_name(&self, name: &str) -> Option<f64> {
        self.fields()
            .into_iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, v)| v)
    }

    pub fn metric_names() -> Vec<String> {
        MetricReport::default()
            .fields()
            .into_iter()
            .map(|(n, _)| String::from(n))
            .collect()
    }
}
