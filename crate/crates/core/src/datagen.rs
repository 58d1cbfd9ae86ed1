//! Synthetic biased-logging world: a hidden ground-truth oracle over sparse
//! categorical features, Bernoulli click/conversion sampling, label-noise
//! injection, click/unclick splitting and day-based train/valid/test splits.
//!
//! The oracle defines true CTR and CVR as logistic functions of per-category
//! latent weights plus optional per-category-pair interaction tables; the two
//! weight sets share a configurable fraction of mass, which controls the
//! correlation between click and conversion logits and therefore the severity
//! of the sample selection bias.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::fmath;
use crate::rng::{derive_seed, rng_from, Rng};

/// Post-click conversion label; unknown for unclicked impressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvLabel {
    Zero,
    One,
    Unknown,
}

impl ConvLabel {
    pub fn from_binary(y: u8) -> Self {
        if y == 1 {
            ConvLabel::One
        } else {
            ConvLabel::Zero
        }
    }

    /// Known binary value, if any.
    pub fn known(self) -> Option<u8> {
        match self {
            ConvLabel::Zero => Some(0),
            ConvLabel::One => Some(1),
            ConvLabel::Unknown => None,
        }
    }
}

/// One logged impression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImpressionRecord {
    pub sample_id: u64,
    /// Category id per field, field order implicit.
    pub features: Vec<u32>,
    pub y_click: u8,
    pub y_conv: ConvLabel,
    pub y_pv_conv: u8,
}

impl ImpressionRecord {
    /// Label-consistency invariant: unclicked implies unknown conversion and
    /// zero post-view conversion; clicked implies y_pv_conv == y_conv.
    pub fn labels_consistent(&self) -> bool {
        if self.y_click == 0 {
            self.y_conv == ConvLabel::Unknown && self.y_pv_conv == 0
        } else {
            self.y_conv.known() == Some(self.y_pv_conv)
        }
    }
}

/// An ordered collection of impressions plus the feature-space description.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<ImpressionRecord>,
    pub field_cardinalities: Vec<usize>,
    /// Set when the dataset was produced by a generator oracle.
    pub oracle_id: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_fields(&self) -> usize {
        self.field_cardinalities.len()
    }

    fn with_records(&self, records: Vec<ImpressionRecord>) -> Dataset {
        Dataset {
            records,
            field_cardinalities: self.field_cardinalities.clone(),
            oracle_id: self.oracle_id,
        }
    }
}

/// Errors from generation and dataset surgery.
#[derive(Debug, Clone, PartialEq)]
pub enum DatagenError {
    DegenerateConfig(String),
    /// Operation received a dataset not produced by this oracle.
    ForeignDataset,
    /// Not enough negative samples to mirror the flipped positives.
    InsufficientNegatives { needed: usize, available: usize },
}

impl core::fmt::Display for DatagenError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DatagenError::DegenerateConfig(m) => write!(f, "degenerate config: {m}"),
            DatagenError::ForeignDataset => write!(f, "dataset was not produced by this oracle"),
            DatagenError::InsufficientNegatives { needed, available } => write!(
                f,
                "label noise needs {needed} negatives but only {available} available"
            ),
        }
    }
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_impressions: usize,
    pub field_cardinalities: Vec<usize>,
    /// Correlation between true CTR and CVR logits, in [-1, 1].
    pub ctr_cvr_correlation: f64,
    pub base_ctr: f64,
    pub base_cvr: f64,
    /// Standard deviation of the true CTR logit across impressions.
    pub ctr_logit_scale: f64,
    /// Standard deviation of the true CVR logit across impressions.
    pub cvr_logit_scale: f64,
    /// Fraction of each logit's variance carried by pairwise category
    /// interactions between adjacent fields (0 = purely additive logits).
    /// Interaction tables are drawn independently per category pair, so no
    /// additive model — and no finite network trained on a biased slice of
    /// the feature space — can represent them exactly.
    pub interaction_share: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_impressions: 100_000,
            field_cardinalities: alloc::vec![40; 8],
            ctr_cvr_correlation: 0.8,
            base_ctr: 0.1,
            base_cvr: 0.2,
            ctr_logit_scale: 2.0,
            cvr_logit_scale: 1.5,
            interaction_share: 0.5,
            seed: 0,
        }
    }
}

/// Hidden ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleWorld {
    /// Per-category latent weight for the CTR logit, rows laid out by field offset.
    ctr_weights: Vec<f64>,
    cvr_weights: Vec<f64>,
    /// Flattened per-category-pair tables for adjacent fields (f, f+1); pair f
    /// starts at `pair_offsets[f]` and is indexed `cat_f * pair_strides[f] + cat_{f+1}`.
    ctr_pair_weights: Vec<f64>,
    cvr_pair_weights: Vec<f64>,
    ctr_intercept: f64,
    cvr_intercept: f64,
    field_offsets: Vec<usize>,
    pair_offsets: Vec<usize>,
    /// Cardinality of field f+1, the row stride of pair table f.
    pair_strides: Vec<usize>,
    pub correlation: f64,
    pub world_id: u64,
}

/// Owned serialization view of an [`OracleWorld`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleParts {
    pub ctr_weights: Vec<f64>,
    pub cvr_weights: Vec<f64>,
    pub ctr_pair_weights: Vec<f64>,
    pub cvr_pair_weights: Vec<f64>,
    pub ctr_intercept: f64,
    pub cvr_intercept: f64,
    pub field_offsets: Vec<usize>,
    pub pair_offsets: Vec<usize>,
    pub pair_strides: Vec<usize>,
    pub correlation: f64,
    pub world_id: u64,
}

impl OracleWorld {
    fn logit(&self, weights: &[f64], pair_weights: &[f64], intercept: f64, features: &[u32]) -> f64 {
        let mut z = intercept;
        for (f, &cat) in features.iter().enumerate() {
            z += weights[self.field_offsets[f] + cat as usize];
        }
        if !pair_weights.is_empty() {
            for (f, w) in features.windows(2).enumerate() {
                z += pair_weights
                    [self.pair_offsets[f] + w[0] as usize * self.pair_strides[f] + w[1] as usize];
            }
        }
        z
    }

    /// True click probability for a feature vector.
    pub fn p_ctr(&self, features: &[u32]) -> f64 {
        fmath::sigmoid(self.logit(
            &self.ctr_weights,
            &self.ctr_pair_weights,
            self.ctr_intercept,
            features,
        ))
    }

    /// True post-click conversion probability for a feature vector.
    pub fn p_cvr(&self, features: &[u32]) -> f64 {
        fmath::sigmoid(self.logit(
            &self.cvr_weights,
            &self.cvr_pair_weights,
            self.cvr_intercept,
            features,
        ))
    }

    /// Raw pieces for serialization by IO layers.
    pub fn parts(&self) -> OracleParts {
        OracleParts {
            ctr_weights: self.ctr_weights.clone(),
            cvr_weights: self.cvr_weights.clone(),
            ctr_pair_weights: self.ctr_pair_weights.clone(),
            cvr_pair_weights: self.cvr_pair_weights.clone(),
            ctr_intercept: self.ctr_intercept,
            cvr_intercept: self.cvr_intercept,
            field_offsets: self.field_offsets.clone(),
            pair_offsets: self.pair_offsets.clone(),
            pair_strides: self.pair_strides.clone(),
            correlation: self.correlation,
            world_id: self.world_id,
        }
    }

    /// Rebuild from serialized pieces.
    pub fn from_parts(parts: OracleParts) -> Self {
        OracleWorld {
            ctr_weights: parts.ctr_weights,
            cvr_weights: parts.cvr_weights,
            ctr_pair_weights: parts.ctr_pair_weights,
            cvr_pair_weights: parts.cvr_pair_weights,
            ctr_intercept: parts.ctr_intercept,
            cvr_intercept: parts.cvr_intercept,
            field_offsets: parts.field_offsets,
            pair_offsets: parts.pair_offsets,
            pair_strides: parts.pair_strides,
            correlation: parts.correlation,
            world_id: parts.world_id,
        }
    }
}

fn standard_normal(rng: &mut Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    fmath::sqrt(-2.0 * fmath::ln(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Draw a pair of latent direction vectors over `card` categories whose
/// correlation equals `rho` exactly: center both, project the second away
/// from the first and from its centered square (the leading source of
/// spurious dependence after sigmoid squashing), normalize to unit sd, and
/// mix. Returns (a, rho*a + sqrt(1-rho^2)*b).
fn correlated_directions(card: usize, rho: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let ortho = fmath::sqrt(1.0 - rho * rho);
    let mut a: Vec<f64> = (0..card).map(|_| standard_normal(rng)).collect();
    let mut b: Vec<f64> = (0..card).map(|_| standard_normal(rng)).collect();
    if card >= 3 {
        let c = card as f64;
        let ma = a.iter().sum::<f64>() / c;
        let mb = b.iter().sum::<f64>() / c;
        for x in &mut a {
            *x -= ma;
        }
        for x in &mut b {
            *x -= mb;
        }
        let mut a2: Vec<f64> = a.iter().map(|x| x * x).collect();
        let m2 = a2.iter().sum::<f64>() / c;
        for x in &mut a2 {
            *x -= m2;
        }
        for basis in [&a, &a2] {
            let bb: f64 = basis.iter().map(|x| x * x).sum();
            if bb > 1e-12 {
                let dot: f64 = basis.iter().zip(&b).map(|(x, y)| x * y).sum();
                for (y, x) in b.iter_mut().zip(basis.iter()) {
                    *y -= dot / bb * x;
                }
            }
        }
        let norm = |v: &mut Vec<f64>| {
            let ss: f64 = v.iter().map(|x| x * x).sum();
            if ss > 1e-12 {
                let sd = fmath::sqrt(ss / c);
                for x in v.iter_mut() {
                    *x /= sd;
                }
            }
        };
        norm(&mut a);
        norm(&mut b);
    }
    let mixed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| rho * x + ortho * y).collect();
    (a, mixed)
}

/// Solve for the intercept b such that mean sigmoid(b + z_i) == target.
fn calibrate_intercept(logit_sums: &[f64], target: f64) -> f64 {
    let mut lo = -30.0;
    let mut hi = 30.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let mean: f64 = logit_sums
            .iter()
            .map(|&z| fmath::sigmoid(mid + z))
            .sum::<f64>()
            / logit_sums.len() as f64;
        if mean < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generate a synthetic logged dataset together with its hidden oracle.
pub fn generate_synthetic(config: &GenConfig) -> Result<(Dataset, OracleWorld), DatagenError> {
    if config.n_impressions == 0 {
        return Err(DatagenError::DegenerateConfig(String::from(
            "n_impressions must be >= 1",
        )));
    }
    if config.field_cardinalities.is_empty() || config.field_cardinalities.contains(&0) {
        return Err(DatagenError::DegenerateConfig(String::from(
            "every field needs cardinality >= 1",
        )));
    }
    if !(-1.0..=1.0).contains(&config.ctr_cvr_correlation) {
        return Err(DatagenError::DegenerateConfig(String::from(
            "correlation must lie in [-1, 1]",
        )));
    }
    if !(0.0..1.0).contains(&config.interaction_share) {
        return Err(DatagenError::DegenerateConfig(String::from(
            "interaction_share must lie in [0, 1)",
        )));
    }
    for (name, p) in [("base_ctr", config.base_ctr), ("base_cvr", config.base_cvr)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(DatagenError::DegenerateConfig(alloc::format!(
                "{name} must lie strictly inside (0, 1)"
            )));
        }
    }

    let n_fields = config.field_cardinalities.len();
    let mut field_offsets = Vec::with_capacity(n_fields);
    let mut total = 0usize;
    for &c in &config.field_cardinalities {
        field_offsets.push(total);
        total += c;
    }

    let mut rng = rng_from(derive_seed(config.seed, "oracle-weights", 0));
    let rho = config.ctr_cvr_correlation;
    // With a single field there are no adjacent pairs, so the whole logit is
    // carried by the additive part regardless of the configured share.
    let share = if n_fields >= 2 { config.interaction_share } else { 0.0 };
    let n_pairs = n_fields.saturating_sub(1);

    // Split each logit's variance between the additive and interaction parts,
    // then spread each part evenly over its fields / field pairs.
    let ctr_sd = config.ctr_logit_scale * fmath::sqrt(1.0 - share) / fmath::sqrt(n_fields as f64);
    let cvr_sd = config.cvr_logit_scale * fmath::sqrt(1.0 - share) / fmath::sqrt(n_fields as f64);
    let mut ctr_weights = Vec::with_capacity(total);
    let mut cvr_weights = Vec::with_capacity(total);
    for &card in &config.field_cardinalities {
        let (a, mixed) = correlated_directions(card, rho, &mut rng);
        for i in 0..card {
            ctr_weights.push(ctr_sd * a[i]);
            cvr_weights.push(cvr_sd * mixed[i]);
        }
    }

    // Interaction tables over adjacent field pairs, correlated the same way
    // so the realized CTR-CVR correlation of the full logits stays on target.
    let mut pair_offsets = Vec::with_capacity(n_pairs);
    let mut pair_strides = Vec::with_capacity(n_pairs);
    let mut ctr_pair_weights = Vec::new();
    let mut cvr_pair_weights = Vec::new();
    if share > 0.0 {
        let ctr_pair_sd =
            config.ctr_logit_scale * fmath::sqrt(share) / fmath::sqrt(n_pairs as f64);
        let cvr_pair_sd =
            config.cvr_logit_scale * fmath::sqrt(share) / fmath::sqrt(n_pairs as f64);
        for w in config.field_cardinalities.windows(2) {
            pair_offsets.push(ctr_pair_weights.len());
            pair_strides.push(w[1]);
            let (a, mixed) = correlated_directions(w[0] * w[1], rho, &mut rng);
            for i in 0..w[0] * w[1] {
                ctr_pair_weights.push(ctr_pair_sd * a[i]);
                cvr_pair_weights.push(cvr_pair_sd * mixed[i]);
            }
        }
    } else {
        pair_offsets = alloc::vec![0; n_pairs];
        pair_strides = config.field_cardinalities[1..].to_vec();
    }

    // Draw features for every impression, then calibrate intercepts so the
    // population means hit the configured base rates.
    let mut feat_rng = rng_from(derive_seed(config.seed, "features", 0));
    let mut all_features = Vec::with_capacity(config.n_impressions);
    for _ in 0..config.n_impressions {
        let feats: Vec<u32> = config
            .field_cardinalities
            .iter()
            .map(|&c| feat_rng.gen_range(0..c as u32))
            .collect();
        all_features.push(feats);
    }

    let mut oracle = OracleWorld {
        ctr_weights,
        cvr_weights,
        ctr_pair_weights,
        cvr_pair_weights,
        ctr_intercept: 0.0,
        cvr_intercept: 0.0,
        field_offsets,
        pair_offsets,
        pair_strides,
        correlation: rho,
        world_id: derive_seed(config.seed, "world-id", 0),
    };
    let ctr_sums: Vec<f64> = all_features
        .iter()
        .map(|f| oracle.logit(&oracle.ctr_weights, &oracle.ctr_pair_weights, 0.0, f))
        .collect();
    let cvr_sums: Vec<f64> = all_features
        .iter()
        .map(|f| oracle.logit(&oracle.cvr_weights, &oracle.cvr_pair_weights, 0.0, f))
        .collect();
    oracle.ctr_intercept = calibrate_intercept(&ctr_sums, config.base_ctr);
    oracle.cvr_intercept = calibrate_intercept(&cvr_sums, config.base_cvr);

    let mut label_rng = rng_from(derive_seed(config.seed, "labels", 0));
    let mut records = Vec::with_capacity(config.n_impressions);
    for (i, feats) in all_features.into_iter().enumerate() {
        let p_click = oracle.p_ctr(&feats);
        let clicked = label_rng.gen::<f64>() < p_click;
        let (y_click, y_conv, y_pv_conv) = if clicked {
            let p_conv = oracle.p_cvr(&feats);
            let converted = label_rng.gen::<f64>() < p_conv;
            let c = converted as u8;
            (1, ConvLabel::from_binary(c), c)
        } else {
            // advance the conversion draw so clicked/unclicked streams stay aligned
            let _ = label_rng.gen::<f64>();
            (0, ConvLabel::Unknown, 0)
        };
        records.push(ImpressionRecord {
            sample_id: i as u64,
            features: feats,
            y_click,
            y_conv,
            y_pv_conv,
        });
    }

    let dataset = Dataset {
        records,
        field_cardinalities: config.field_cardinalities.clone(),
        oracle_id: Some(oracle.world_id),
    };
    Ok((dataset, oracle))
}

/// Full-space conversion labels: clicked records keep their logged label,
/// unclicked records draw y_conv ~ Bernoulli(true p_CVR), deterministically
/// per (seed, sample_id).
pub fn counterfactual_labels(
    oracle: &OracleWorld,
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<u8>, DatagenError> {
    if dataset.oracle_id != Some(oracle.world_id) {
        return Err(DatagenError::ForeignDataset);
    }
    Ok(dataset
        .records
        .iter()
        .map(|r| match r.y_conv.known() {
            Some(y) => y,
            None => {
                let p = oracle.p_cvr(&r.features);
                let mut rng = rng_from(derive_seed(seed, "counterfactual", r.sample_id));
                (rng.gen::<f64>() < p) as u8
            }
        })
        .collect())
}

/// Partition into (clicked, unclicked), preserving order within each part.
pub fn split_by_click(dataset: &Dataset) -> (Dataset, Dataset) {
    let mut clicked = Vec::new();
    let mut unclicked = Vec::new();
    for r in &dataset.records {
        if r.y_click == 1 {
            clicked.push(r.clone());
        } else {
            unclicked.push(r.clone());
        }
    }
    (dataset.with_records(clicked), dataset.with_records(unclicked))
}

/// Contiguous day-block split: the last block is the test set, the
/// penultimate block the validation set, everything earlier is training data.
pub fn split_days(dataset: &Dataset, n_days: usize) -> (Dataset, Dataset, Dataset) {
    assert!(n_days >= 3, "need at least 3 days for train/valid/test");
    let n = dataset.len();
    let day_of = |i: usize| i * n_days / n.max(1);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let d = day_of(i).min(n_days - 1);
        if d == n_days - 1 {
            test.push(r.clone());
        } else if d == n_days - 2 {
            valid.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    (
        dataset.with_records(train),
        dataset.with_records(valid),
        dataset.with_records(test),
    )
}

/// Flip k% of positives to 0 and the same number of negatives to 1; the
/// returned mask marks exactly the flipped records.
pub fn inject_label_noise(
    d_click: &Dataset,
    k_percent: f64,
    seed: u64,
) -> Result<(Dataset, Vec<bool>), DatagenError> {
    assert!((0.0..=100.0).contains(&k_percent));
    let positives: Vec<usize> = d_click
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.y_conv == ConvLabel::One)
        .map(|(i, _)| i)
        .collect();
    let negatives: Vec<usize> = d_click
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.y_conv == ConvLabel::Zero)
        .map(|(i, _)| i)
        .collect();
    let n_flip = libm::ceil(k_percent * positives.len() as f64 / 100.0 - 1e-9).max(0.0) as usize;
    if n_flip > negatives.len() {
        return Err(DatagenError::InsufficientNegatives {
            needed: n_flip,
            available: negatives.len(),
        });
    }
    let mut rng = rng_from(derive_seed(seed, "label-noise", 0));
    let mut pos = positives;
    let mut neg = negatives;
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut records = d_click.records.clone();
    let mut mask = alloc::vec![false; records.len()];
    for &i in pos.iter().take(n_flip) {
        records[i].y_conv = ConvLabel::Zero;
        records[i].y_pv_conv = 0;
        mask[i] = true;
    }
    for &i in neg.iter().take(n_flip) {
        records[i].y_conv = ConvLabel::One;
        records[i].y_pv_conv = records[i].y_click;
        mask[i] = true;
    }
    Ok((d_click.with_records(records), mask))
}

/// Uniform subsample of the unclicked pool sized round(ratio * |clicked|).
/// Returns (sampled, truncated) where `truncated` warns that the pool was
/// smaller than requested and was returned in full.
pub fn sample_unclick_ratio(
    d_click: &Dataset,
    d_unclick: &Dataset,
    ratio: f64,
    seed: u64,
) -> (Dataset, bool) {
    assert!(ratio >= 0.0);
    let want = libm::round(ratio * d_click.len() as f64) as usize;
    if want >= d_unclick.len() {
        return (d_unclick.clone(), want > d_unclick.len());
    }
    let mut rng = rng_from(derive_seed(seed, "unclick-sample", 0));
    let mut idx: Vec<usize> = (0..d_unclick.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(want);
    idx.sort_unstable();
    let records = idx.iter().map(|&i| d_unclick.records[i].clone()).collect();
    (d_unclick.with_records(records), false)
}
