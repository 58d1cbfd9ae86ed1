//! Click-adaptive teacher: a CVR network trained adversarially so that its
//! representation carries no click/unclick signal, then used to attach soft
//! pseudo-conversion labels to unclicked impressions.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datagen::{Dataset, ImpressionRecord};
use crate::metrics::{self, MetricError, ScoredSample};
use crate::nn::{
    cross_entropy, cross_entropy_grad, dropout, gradient_reversal_backward, softmax2,
    softmax2_backward, Adam, Embedding, Mlp, NnError, Params,
};
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub embedding_dim: usize,
    /// Dense widths; the leading widths form the representation learner and
    /// the final width-2 layer the CVR predictor.
    pub layer_widths: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight on the click-discriminator cross-entropy.
    pub gamma_d: f64,
    pub gradient_reversal_scale: f64,
    /// Unclicked records per clicked record in each training batch.
    pub unclick_ratio: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            embedding_dim: 4,
            layer_widths: alloc::vec![32, 16, 8, 2],
            learning_rate: 0.005,
            batch_size: 128,
            epochs: 8,
            gamma_d: 1.0,
            gradient_reversal_scale: 2.0,
            unclick_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TeacherError {
    InvalidConfig(String),
    EmptyClickedSet,
    /// Monte Carlo labeling needs at least two passes.
    TooFewPasses(usize),
    Nn(NnError),
    /// Loss became non-finite.
    Diverged { epoch: usize, step: usize },
}

impl From<NnError> for TeacherError {
    fn from(e: NnError) -> Self {
        TeacherError::Nn(e)
    }
}

impl core::fmt::Display for TeacherError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TeacherError::InvalidConfig(m) => write!(f, "invalid teacher config: {m}"),
            TeacherError::EmptyClickedSet => write!(f, "clicked training set is empty"),
            TeacherError::TooFewPasses(n) => {
                write!(f, "mc dropout needs >= 2 passes, got {n}")
            }
            TeacherError::Nn(e) => write!(f, "{e}"),
            TeacherError::Diverged { epoch, step } => {
                write!(f, "teacher training diverged at epoch {epoch}, step {step}")
            }
        }
    }
}

/// An unclicked impression with the teacher's soft conversion label.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledRecord {
    pub record: ImpressionRecord,
    /// (positive mass, negative mass), sums to 1.
    pub p_conv: [f64; 2],
    /// Positive-mass variance across Monte Carlo dropout passes.
    pub mc_variance: Option<f64>,
}

/// Representation learner + CVR predictor + click discriminator. The
/// discriminator reads the same representation through a gradient-reversal
/// node; the inference path never touches it.
pub struct TeacherNetwork {
    pub config: TeacherConfig,
    pub params: Params,
    pub embedding: Embedding,
    pub rep: Mlp,
    pub pred: Mlp,
    pub disc: Mlp,
}

/// Train-mode forward outputs.
pub struct TeacherForward {
    pub rep_out: Vec<f64>,
    pub p_conv: [f64; 2],
    pub p_d: [f64; 2],
}

impl TeacherNetwork {
    pub fn new(
        config: TeacherConfig,
        field_cardinalities: &[usize],
        seed: u64,
    ) -> Result<Self, TeacherError> {
        if config.layer_widths.len() < 2 || *config.layer_widths.last().unwrap() != 2 {
            return Err(TeacherError::InvalidConfig(String::from(
                "layer_widths needs >= 2 layers ending in width 2",
            )));
        }
        if config.unclick_ratio < 0.0 || config.gamma_d < 0.0 || config.gradient_reversal_scale < 0.0
        {
            return Err(TeacherError::InvalidConfig(String::from(
                "ratio and loss weights must be >= 0",
            )));
        }
        if config.batch_size == 0 || config.embedding_dim == 0 {
            return Err(TeacherError::InvalidConfig(String::from(
                "batch_size and embedding_dim must be >= 1",
            )));
        }
        let mut params = Params::new();
        let mut rng = rng_from(derive_seed(seed, "teacher-init", 0));
        let embedding = Embedding::new(&mut params, field_cardinalities, config.embedding_dim, &mut rng);
        let (rep_widths, pred_widths) = config.layer_widths.split_at(config.layer_widths.len() - 1);
        let rep = Mlp::new_with(&mut params, embedding.out_dim(), rep_widths, true, &mut rng)?;
        let d = rep.out_dim();
        let pred = Mlp::new(&mut params, d, pred_widths, &mut rng)?;
        let disc = Mlp::new(&mut params, d, &[d, 2], &mut rng)?;
        Ok(TeacherNetwork {
            config,
            params,
            embedding,
            rep,
            pred,
            disc,
        })
    }

    /// Train-mode forward: both heads from the shared representation.
    pub fn forward_full(&self, record: &ImpressionRecord) -> TeacherForward {
        let x = self.embedding.lookup(&self.params, &record.features);
        let rep_out = self.rep.infer(&self.params, &x);
        let cl = self.pred.infer(&self.params, &rep_out);
        let dl = self.disc.infer(&self.params, &rep_out);
        TeacherForward {
            rep_out,
            p_conv: softmax2([cl[0], cl[1]]),
            p_d: softmax2([dl[0], dl[1]]),
        }
    }

    /// Inference-mode forward: representation and CVR predictor only.
    pub fn infer_cvr(&self, record: &ImpressionRecord) -> [f64; 2] {
        let x = self.embedding.lookup(&self.params, &record.features);
        let rep_out = self.rep.infer(&self.params, &x);
        let logits = self.pred.infer(&self.params, &rep_out);
        softmax2([logits[0], logits[1]])
    }

    /// Batch objective value: CVR cross-entropy over the clicked members
    /// plus gamma_d times the domain cross-entropy over the whole batch.
    pub fn batch_loss(&self, batch: &[ImpressionRecord]) -> f64 {
        self.eval_batch_value(batch)
    }

    fn eval_batch_value(&self, batch: &[ImpressionRecord]) -> f64 {
        let n_click = batch.iter().filter(|r| r.y_click == 1).count();
        let inv_click = if n_click > 0 { 1.0 / n_click as f64 } else { 0.0 };
        let inv_all = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for r in batch {
            let f = self.forward_full(r);
            if r.y_click == 1 {
                let y = r.y_conv.known().expect("clicked record has label");
                total += inv_click * cross_entropy([y as f64, 1.0 - y as f64], f.p_conv);
            }
            total += self.config.gamma_d
                * inv_all
                * cross_entropy([r.y_click as f64, 1.0 - r.y_click as f64], f.p_d);
        }
        total
    }

    /// Domain cross-entropy term alone, averaged over the batch, with the
    /// gamma_d weight applied.
    pub fn domain_loss(&self, batch: &[ImpressionRecord]) -> f64 {
        let inv_all = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for r in batch {
            let f = self.forward_full(r);
            total += self.config.gamma_d
                * inv_all
                * cross_entropy([r.y_click as f64, 1.0 - r.y_click as f64], f.p_d);
        }
        total
    }

    /// Arena indices of the discriminator's own tensors.
    pub fn discriminator_tensor_indices(&self) -> Vec<usize> {
        self.disc
            .layers
            .iter()
            .flat_map(|l| [l.w.index(), l.b.index()])
            .collect()
    }

    /// Batch loss with gradients: predictor and discriminator descend their
    /// terms; the representation receives the domain gradient through the
    /// reversal node (negated and scaled).
    pub fn batch_loss_and_grad(&mut self, batch: &[ImpressionRecord]) -> f64 {
        let n_click = batch.iter().filter(|r| r.y_click == 1).count();
        let inv_click = if n_click > 0 { 1.0 / n_click as f64 } else { 0.0 };
        let inv_all = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for r in batch {
            let x = self.embedding.lookup(&self.params, &r.features);
            let (rep_out, rep_trace) = self.rep.forward(&self.params, &x);
            let (cl, pred_trace) = self.pred.forward(&self.params, &rep_out);
            let (dl, disc_trace) = self.disc.forward(&self.params, &rep_out);
            let p_conv = softmax2([cl[0], cl[1]]);
            let p_d = softmax2([dl[0], dl[1]]);

            let mut drep = alloc::vec![0.0; rep_out.len()];
            if r.y_click == 1 {
                let y = r.y_conv.known().expect("clicked record has label");
                let t = [y as f64, 1.0 - y as f64];
                total += inv_click * cross_entropy(t, p_conv);
                let g = cross_entropy_grad(t, p_conv);
                let dz = softmax2_backward(p_conv, [inv_click * g[0], inv_click * g[1]]);
                let d = self.pred.backward(&mut self.params, &pred_trace, &dz);
                for (a, b) in drep.iter_mut().zip(&d) {
                    *a += b;
                }
            }

            let t = [r.y_click as f64, 1.0 - r.y_click as f64];
            let w = self.config.gamma_d * inv_all;
            total += w * cross_entropy(t, p_d);
            let g = cross_entropy_grad(t, p_d);
            let dz = softmax2_backward(p_d, [w * g[0], w * g[1]]);
            let d_disc_in = self.disc.backward(&mut self.params, &disc_trace, &dz);
            let reversed =
                gradient_reversal_backward(&d_disc_in, self.config.gradient_reversal_scale);
            for (a, b) in drep.iter_mut().zip(&reversed) {
                *a += b;
            }

            let dx = self.rep.backward(&mut self.params, &rep_trace, &drep);
            self.embedding.backward(&mut self.params, &r.features, &dx);
        }
        total
    }

    /// Held-out CVR AUC on the clicked subset; used for model selection.
    pub fn validation_metric(&self, valid: &Dataset) -> Option<f64> {
        let samples: Vec<ScoredSample> = valid
            .records
            .iter()
            .filter(|r| r.y_click == 1)
            .map(|r| {
                ScoredSample::new(
                    r.sample_id,
                    self.infer_cvr(r)[0],
                    r.y_conv.known().unwrap_or(0),
                )
            })
            .collect();
        metrics::auc(&samples).ok()
    }
}

/// Clicked and unclicked batch sizes implied by the configured ratio. The
/// ratio is the contract (honored within rounding); the total batch size is
/// approximate.
pub fn batch_composition(batch_size: usize, unclick_ratio: f64) -> (usize, usize) {
    let c = (((batch_size as f64 / (1.0 + unclick_ratio)) + 0.5) as usize).max(1);
    let u = ((c as f64 * unclick_ratio) + 0.5) as usize;
    (c, u)
}

/// Endless shuffled index stream over a pool; reshuffles on exhaustion.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl IndexStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = IndexStream {
            order: (0..n).collect(),
            pos: 0,
            rng: rng_from(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub struct TrainedTeacher {
    pub net: TeacherNetwork,
    pub history: Vec<crate::models::EpochStats>,
    pub best_epoch: Option<usize>,
    /// Set when D_unclick was empty and the domain term was skipped.
    pub domain_skipped: bool,
}

/// Adversarial teacher training on one mixed clicked/unclicked stream. Each
/// epoch makes one shuffled pass over the clicked pool; unclicked records
/// are drawn at the configured per-batch ratio from an endless shuffled
/// stream. Best validation (clicked CVR AUC) snapshot is retained.
pub fn train_teacher(
    config: &TeacherConfig,
    d_click: &Dataset,
    d_unclick: &Dataset,
    valid: &Dataset,
    seed: u64,
) -> Result<TrainedTeacher, TeacherError> {
    if d_click.is_empty() {
        return Err(TeacherError::EmptyClickedSet);
    }
    let domain_skipped = d_unclick.is_empty();
    let mut net = TeacherNetwork::new(config.clone(), &d_click.field_cardinalities, seed)?;
    let (n_c, n_u) = batch_composition(config.batch_size, config.unclick_ratio);
    let n_u = if domain_skipped { 0 } else { n_u };
    let mut adam = Adam::new(&net.params, config.learning_rate);
    let mut unclick_stream = IndexStream::new(
        d_unclick.len(),
        derive_seed(seed, "teacher-unclick-stream", 0),
    );
    let mut history = Vec::new();

    let full_scale = config.gradient_reversal_scale;
    for epoch in 0..config.epochs {
        // The first epoch runs without reversal so the click/conversion
        // losses establish a live representation first; adversarial pressure
        // from step zero can push the shared ReLU layers into an all-dead
        // state they never recover from (constant output, loss frozen).
        net.config.gradient_reversal_scale = if epoch == 0 { 0.0 } else { full_scale };
        let mut order: Vec<usize> = (0..d_click.len()).collect();
        let mut rng = rng_from(derive_seed(seed, "teacher-epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (step, chunk) in order.chunks(n_c).enumerate() {
            let mut batch: Vec<ImpressionRecord> =
                chunk.iter().map(|&i| d_click.records[i].clone()).collect();
            if n_u > 0 {
                // keep the clicked:unclicked ratio also for the tail chunk
                let want_u =
                    ((chunk.len() as f64 * n_u as f64 / n_c as f64) + 0.5) as usize;
                for i in unclick_stream.take(want_u.max(1)) {
                    batch.push(d_unclick.records[i].clone());
                }
            }
            let loss = net.batch_loss_and_grad(&batch);
            if !loss.is_finite() {
                return Err(TeacherError::Diverged { epoch, step });
            }
            adam.step(&mut net.params)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let validation_metric = net.validation_metric(valid);
        history.push(crate::models::EpochStats {
            mean_loss: loss_sum / n_batches.max(1) as f64,
            validation_metric,
        });
    }

    // The teacher keeps its final-epoch parameters. Restoring an earlier
    // snapshot that maximized clicked-validation accuracy would undo the
    // click-invariance the later (fully ramped) adversarial epochs achieve;
    // validation metrics stay in the history for inspection.
    let best_epoch = history
        .iter()
        .enumerate()
        .filter_map(|(e, s)| s.validation_metric.map(|m| (e, m)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(e, _)| e);
    Ok(TrainedTeacher {
        net,
        history,
        best_epoch,
        domain_skipped,
    })
}

/// One soft label per unclicked record, through the inference path only.
pub fn generate_pseudo_labels(net: &TeacherNetwork, d_unclick: &Dataset) -> Vec<PseudoLabeledRecord> {
    d_unclick
        .records
        .iter()
        .map(|r| PseudoLabeledRecord {
            record: r.clone(),
            p_conv: net.infer_cvr(r),
            mc_variance: None,
        })
        .collect()
}

/// Monte Carlo dropout labeling: `n_passes` stochastic forwards per record
/// with dropout on the representation, mean distribution as the label and
/// the positive-mass variance as its uncertainty.
pub fn mc_dropout_pseudo_labels(
    net: &TeacherNetwork,
    d_unclick: &Dataset,
    n_passes: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<PseudoLabeledRecord>, TeacherError> {
    if n_passes < 2 {
        return Err(TeacherError::TooFewPasses(n_passes));
    }
    let mut out = Vec::with_capacity(d_unclick.len());
    for (i, r) in d_unclick.records.iter().enumerate() {
        let x = net.embedding.lookup(&net.params, &r.features);
        let rep_out = net.rep.infer(&net.params, &x);
        let mut scores = Vec::with_capacity(n_passes);
        for pass in 0..n_passes {
            let mask_seed = derive_seed(
                derive_seed(seed, "mc-pass", pass as u64),
                "record",
                i as u64,
            );
            let dropped =
                dropout(&rep_out, dropout_rate, mask_seed).map_err(TeacherError::Nn)?;
            let logits = net.pred.infer(&net.params, &dropped);
            scores.push(softmax2([logits[0], logits[1]])[0]);
        }
        // identical passes (e.g. rate 0) must report exactly zero variance
        let (mean, var) = if scores.windows(2).all(|w| w[0] == w[1]) {
            (scores[0], 0.0)
        } else {
            let m = scores.iter().sum::<f64>() / n_passes as f64;
            let v = scores.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n_passes as f64;
            (m, v)
        };
        out.push(PseudoLabeledRecord {
            record: r.clone(),
            p_conv: [mean, 1.0 - mean],
            mc_variance: Some(var),
        });
    }
    Ok(out)
}

/// Keeps the `fraction` of records with the lowest Monte Carlo variance;
/// records without a variance rank as zero. Output keeps sample-id order.
pub fn retain_low_variance(
    mut labels: Vec<PseudoLabeledRecord>,
    fraction: f64,
) -> Vec<PseudoLabeledRecord> {
    let keep = ((labels.len() as f64 * fraction) + 0.5) as usize;
    labels.sort_by(|a, b| {
        let va = a.mc_variance.unwrap_or(0.0);
        let vb = b.mc_variance.unwrap_or(0.0);
        va.partial_cmp(&vb)
            .unwrap()
            .then(a.record.sample_id.cmp(&b.record.sample_id))
    });
    labels.truncate(keep.min(labels.len()));
    labels.sort_by_key(|l| l.record.sample_id);
    labels
}

/// AUC of the discriminator's positive-class score against click labels.
pub fn discriminator_auc(net: &TeacherNetwork, dataset: &Dataset) -> Result<f64, MetricError> {
    let samples: Vec<ScoredSample> = dataset
        .records
        .iter()
        .map(|r| ScoredSample::new(r.sample_id, net.forward_full(r).p_d[0], r.y_click))
        .collect();
    metrics::auc(&samples)
}
