//! Distillation student: trains over clicked ads plus teacher-labeled
//! unclicked ads. The base variant distills soft labels directly; the
//! uncertainty variant runs two CVR predictors over independently masked
//! copies of the shared representation, down-weights unclicked terms by
//! exp(-lambda * KL) between the two heads, and regularizes that KL.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datagen::{inject_label_noise, Dataset, DatagenError, ImpressionRecord};
use crate::metrics::{self, ScoredSample};
use crate::models::EpochStats;
use crate::nn::{
    cross_entropy, cross_entropy_grad, dropout_mask, kl_divergence, kl_divergence_grad_p,
    kl_divergence_grad_q, softmax2, softmax2_backward, Adam, Embedding, Mlp, NnError, Params,
};
use crate::rng::{derive_seed, rng_from};
use crate::teacher::PseudoLabeledRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentVariant {
    Base,
    Uncertainty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Weight of the unclicked distillation term.
    pub alpha: f64,
    /// Weight of the CTR cross-entropy term.
    pub gamma: f64,
    /// Scale inside the uncertainty factor exp(-lambda * KL).
    pub lambda: f64,
    pub dropout_rate: f64,
    pub variant: StudentVariant,
    pub embedding_dim: usize,
    pub layer_widths: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            gamma: 0.2,
            lambda: 100.0,
            dropout_rate: 0.2,
            variant: StudentVariant::Uncertainty,
            embedding_dim: 4,
            layer_widths: alloc::vec![32, 16, 8, 2],
            learning_rate: 0.005,
            batch_size: 128,
            epochs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StudentError {
    InvalidConfig(String),
    /// An unclicked batch member arrived without a soft label.
    MissingPseudoLabel { sample_id: u64 },
    /// A sample id appears in both the clicked and pseudo-labeled pools.
    OverlappingSampleIds { sample_id: u64 },
    EmptyTrainingSet,
    Nn(NnError),
    Datagen(DatagenError),
    Diverged { epoch: usize, step: usize },
}

impl From<NnError> for StudentError {
    fn from(e: NnError) -> Self {
        StudentError::Nn(e)
    }
}

impl From<DatagenError> for StudentError {
    fn from(e: DatagenError) -> Self {
        StudentError::Datagen(e)
    }
}

impl core::fmt::Display for StudentError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StudentError::InvalidConfig(m) => write!(f, "invalid student config: {m}"),
            StudentError::MissingPseudoLabel { sample_id } => {
                write!(f, "unclicked record {sample_id} lacks a pseudo label")
            }
            StudentError::OverlappingSampleIds { sample_id } => {
                write!(f, "sample id {sample_id} appears in both training pools")
            }
            StudentError::EmptyTrainingSet => write!(f, "empty training set"),
            StudentError::Nn(e) => write!(f, "{e}"),
            StudentError::Datagen(e) => write!(f, "{e}"),
            StudentError::Diverged { epoch, step } => {
                write!(f, "student training diverged at epoch {epoch}, step {step}")
            }
        }
    }
}

/// One training sample: clicked records carry a hard conversion label,
/// unclicked ones a teacher soft label.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSample {
    pub record: ImpressionRecord,
    pub pseudo: Option<[f64; 2]>,
}

impl DistillSample {
    pub fn clicked(record: ImpressionRecord) -> Self {
        DistillSample {
            record,
            pseudo: None,
        }
    }

    pub fn from_pseudo(p: &PseudoLabeledRecord) -> Self {
        DistillSample {
            record: p.record.clone(),
            pseudo: Some(p.p_conv),
        }
    }
}

/// Shared embedding, a CVR learner with one or two predictors over
/// independently masked representation copies, and a CTR learner+predictor.
pub struct StudentNetwork {
    pub config: DistillConfig,
    pub params: Params,
    pub embedding: Embedding,
    pub cvr_rep: Mlp,
    pub cvr_pred: Mlp,
    /// Second predictor; present only in the uncertainty variant.
    pub cvr_pred2: Option<Mlp>,
    pub ctr_rep: Mlp,
    pub ctr_pred: Mlp,
    /// Mask-stream labels of the two heads; swapped together with the head
    /// parameters they keep the loss invariant.
    pub head_mask_ids: [u64; 2],
}

/// Train-mode head outputs for one record.
pub struct StudentForward {
    pub p_conv: [f64; 2],
    pub p_conv2: Option<[f64; 2]>,
    pub p_click: [f64; 2],
}

impl StudentNetwork {
    pub fn new(
        config: DistillConfig,
        field_cardinalities: &[usize],
        seed: u64,
    ) -> Result<Self, StudentError> {
        if config.layer_widths.len() < 2 || *config.layer_widths.last().unwrap() != 2 {
            return Err(StudentError::InvalidConfig(String::from(
                "layer_widths needs >= 2 layers ending in width 2",
            )));
        }
        if config.alpha < 0.0 || config.gamma < 0.0 || config.lambda < 0.0 {
            return Err(StudentError::InvalidConfig(String::from(
                "alpha, gamma and lambda must be >= 0",
            )));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(StudentError::InvalidConfig(String::from(
                "dropout_rate must lie in [0, 1)",
            )));
        }
        if config.batch_size == 0 || config.embedding_dim == 0 {
            return Err(StudentError::InvalidConfig(String::from(
                "batch_size and embedding_dim must be >= 1",
            )));
        }
        let mut params = Params::new();
        let mut rng = rng_from(derive_seed(seed, "student-init", 0));
        let embedding =
            Embedding::new(&mut params, field_cardinalities, config.embedding_dim, &mut rng);
        let in_dim = embedding.out_dim();
        // Predictors take the last two dense layers when depth allows: a
        // purely linear head on a shared representation has a unique optimum,
        // so two heads could never develop the disagreement that the
        // uncertainty weighting and the noise diagnostic rely on.
        let head_depth = if config.layer_widths.len() >= 3 { 2 } else { 1 };
        let (rep_widths, pred_widths) =
            config.layer_widths.split_at(config.layer_widths.len() - head_depth);
        let cvr_rep = Mlp::new_with(&mut params, in_dim, rep_widths, true, &mut rng)?;
        let d = cvr_rep.out_dim();
        let cvr_pred = Mlp::new(&mut params, d, pred_widths, &mut rng)?;
        let cvr_pred2 = if config.variant == StudentVariant::Uncertainty {
            Some(Mlp::new(&mut params, d, pred_widths, &mut rng)?)
        } else {
            None
        };
        let ctr_rep = Mlp::new_with(&mut params, in_dim, rep_widths, true, &mut rng)?;
        let ctr_pred = Mlp::new(&mut params, d, pred_widths, &mut rng)?;
        Ok(StudentNetwork {
            config,
            params,
            embedding,
            cvr_rep,
            cvr_pred,
            cvr_pred2,
            ctr_rep,
            ctr_pred,
            head_mask_ids: [0, 1],
        })
    }

    fn head_mask(&self, head: usize, step_seed: u64) -> Result<Vec<f64>, NnError> {
        dropout_mask(
            self.cvr_rep.out_dim(),
            self.config.dropout_rate,
            derive_seed(step_seed, "head-mask", self.head_mask_ids[head]),
        )
    }

    /// Train-mode forward with the step's dropout masks.
    pub fn forward_train(
        &self,
        record: &ImpressionRecord,
        step_seed: u64,
    ) -> Result<StudentForward, StudentError> {
        let m1 = self.head_mask(0, step_seed)?;
        let m2 = self.head_mask(1, step_seed)?;
        let x = self.embedding.lookup(&self.params, &record.features);
        let h = self.cvr_rep.infer(&self.params, &x);
        let masked = |m: &[f64]| -> Vec<f64> { h.iter().zip(m).map(|(a, b)| a * b).collect() };
        let l1 = self.cvr_pred.infer(&self.params, &masked(&m1));
        let p_conv = softmax2([l1[0], l1[1]]);
        let p_conv2 = self.cvr_pred2.as_ref().map(|p2| {
            let l2 = p2.infer(&self.params, &masked(&m2));
            softmax2([l2[0], l2[1]])
        });
        let hc = self.ctr_rep.infer(&self.params, &x);
        let lc = self.ctr_pred.infer(&self.params, &hc);
        Ok(StudentForward {
            p_conv,
            p_conv2,
            p_click: softmax2([lc[0], lc[1]]),
        })
    }

    /// Inference CVR score; the uncertainty variant averages its two heads.
    pub fn predict_cvr(&self, record: &ImpressionRecord) -> f64 {
        let x = self.embedding.lookup(&self.params, &record.features);
        let h = self.cvr_rep.infer(&self.params, &x);
        let l1 = self.cvr_pred.infer(&self.params, &h);
        let p1 = softmax2([l1[0], l1[1]])[0];
        match &self.cvr_pred2 {
            Some(p2) => {
                let l2 = p2.infer(&self.params, &h);
                (p1 + softmax2([l2[0], l2[1]])[0]) / 2.0
            }
            None => p1,
        }
    }

    pub fn predict_ctr(&self, record: &ImpressionRecord) -> f64 {
        let x = self.embedding.lookup(&self.params, &record.features);
        let h = self.ctr_rep.infer(&self.params, &x);
        let l = self.ctr_pred.infer(&self.params, &h);
        softmax2([l[0], l[1]])[0]
    }

    pub fn predict_ctcvr(&self, record: &ImpressionRecord) -> f64 {
        self.predict_cvr(record) * self.predict_ctr(record)
    }

    /// Infer-mode KL between the two heads' distributions.
    pub fn head_kl(&self, record: &ImpressionRecord) -> Option<f64> {
        let p2m = self.cvr_pred2.as_ref()?;
        let x = self.embedding.lookup(&self.params, &record.features);
        let h = self.cvr_rep.infer(&self.params, &x);
        let l1 = self.cvr_pred.infer(&self.params, &h);
        let l2 = p2m.infer(&self.params, &h);
        Some(kl_divergence(
            softmax2([l1[0], l1[1]]),
            softmax2([l2[0], l2[1]]),
        ))
    }

    /// Base objective: mean clicked CVR cross-entropy + alpha * mean
    /// unclicked distillation cross-entropy + gamma * mean CTR term.
    pub fn base_distill_loss(
        &mut self,
        batch: &[DistillSample],
        step_seed: u64,
    ) -> Result<f64, StudentError> {
        self.eval_base(batch, step_seed, false)
    }

    pub fn base_distill_loss_and_grad(
        &mut self,
        batch: &[DistillSample],
        step_seed: u64,
    ) -> Result<f64, StudentError> {
        self.eval_base(batch, step_seed, true)
    }

    /// The uncertainty objective; `fixed_weights`, when given, replaces the
    /// per-unclicked-record factors (w, w') with constants so finite
    /// differences can mirror the detached analytic gradient.
    pub fn uncertainty_distill_loss(
        &mut self,
        batch: &[DistillSample],
        step_seed: u64,
        fixed_weights: Option<&[(f64, f64)]>,
    ) -> Result<f64, StudentError> {
        self.eval_uncertainty(batch, step_seed, fixed_weights, false)
    }

    pub fn uncertainty_distill_loss_and_grad(
        &mut self,
        batch: &[DistillSample],
        step_seed: u64,
    ) -> Result<f64, StudentError> {
        self.eval_uncertainty(batch, step_seed, None, true)
    }

    /// Current (w, w') factors per batch member, 1 for clicked records.
    pub fn current_uncertainty_weights(
        &self,
        batch: &[DistillSample],
        step_seed: u64,
    ) -> Result<Vec<(f64, f64)>, StudentError> {
        let lambda = self.config.lambda;
        batch
            .iter()
            .map(|s| {
                if s.record.y_click == 1 {
                    return Ok((1.0, 1.0));
                }
                let f = self.forward_train(&s.record, step_seed)?;
                let p2 = f.p_conv2.expect("uncertainty variant has two heads");
                Ok((
                    uncertainty_weight(kl_divergence(f.p_conv, p2), lambda),
                    uncertainty_weight(kl_divergence(p2, f.p_conv), lambda),
                ))
            })
            .collect()
    }

    fn check_labels(batch: &[DistillSample]) -> Result<(), StudentError> {
        for s in batch {
            if s.record.y_click == 0 && s.pseudo.is_none() {
                return Err(StudentError::MissingPseudoLabel {
                    sample_id: s.record.sample_id,
                });
            }
        }
        Ok(())
    }

    fn eval_base(
        &mut self,
        batch: &[DistillSample],
        step_seed: u64,
        with_grad: bool,
    ) -> Result<f64, StudentError> {
        Self::check_labels(batch)?;
        let (alpha, gamma) = (self.config.alpha, self.config.gamma);
        let n = batch.len();
        assert!(n > 0, "empty batch");
        let n_click = batch.iter().filter(|s| s.record.y_click == 1).count();
        let n_unclick = n - n_click;
        let inv_click = if n_click > 0 { 1.0 / n_click as f64 } else { 0.0 };
        let inv_unclick = if n_unclick > 0 { 1.0 / n_unclick as f64 } else { 0.0 };
        let inv_all = 1.0 / n as f64;
        let m1 = self.head_mask(0, step_seed)?;
        let mut total = 0.0;

        for s in batch {
            let r = &s.record;
            let x = self.embedding.lookup(&self.params, &r.features);
            let (h, rep_trace) = self.cvr_rep.forward(&self.params, &x);
            let hd: Vec<f64> = h.iter().zip(&m1).map(|(a, b)| a * b).collect();
            let (l1, pred_trace) = self.cvr_pred.forward(&self.params, &hd);
            let p = softmax2([l1[0], l1[1]]);
            let (hc, ctr_rep_trace) = self.ctr_rep.forward(&self.params, &x);
            let (lc, ctr_pred_trace) = self.ctr_pred.forward(&self.params, &hc);
            let pc = softmax2([lc[0], lc[1]]);

            let (target, scale) = if r.y_click == 1 {
                let y = r.y_conv.known().expect("clicked record has label") as f64;
                ([y, 1.0 - y], inv_click)
            } else {
                (s.pseudo.unwrap(), alpha * inv_unclick)
            };
            total += scale * cross_entropy(target, p);
            let tc = [r.y_click as f64, 1.0 - r.y_click as f64];
            total += gamma * inv_all * cross_entropy(tc, pc);

            if with_grad {
                let g = cross_entropy_grad(target, p);
                let dz = softmax2_backward(p, [scale * g[0], scale * g[1]]);
                let dhd = self.cvr_pred.backward(&mut self.params, &pred_trace, &dz);
                let dh: Vec<f64> = dhd.iter().zip(&m1).map(|(a, b)| a * b).collect();
                let mut dx = self.cvr_rep.backward(&mut self.params, &rep_trace, &dh);

                let gc = cross_entropy_grad(tc, pc);
                let w = gamma * inv_all;
                let dzc = softmax2_backward(pc, [w * gc[0], w * gc[1]]);
                let dhc = self.ctr_pred.backward(&mut self.params, &ctr_pred_trace, &dzc);
                let dxc = self.ctr_rep.backward(&mut self.params, &ctr_rep_trace, &dhc);
                for (a, b) in dx.iter_mut().zip(&dxc) {
                    *a += b;
                }
                self.embedding.backward(&mut self.params, &r.features, &dx);
            }
        }
        Ok(total)
    }

    fn eval_uncertainty(
        &mut self,
        batch: &[DistillSample],
        step_seed: u64,
        fixed_weights: Option<&[(f64, f64)]>,
        with_grad: bool,
    ) -> Result<f64, StudentError> {
        Self::check_labels(batch)?;
        assert!(
            self.cvr_pred2.is_some(),
            "uncertainty loss needs the two-predictor variant"
        );
        let (alpha, gamma, lambda) = (self.config.alpha, self.config.gamma, self.config.lambda);
        let n = batch.len();
        assert!(n > 0, "empty batch");
        let n_click = batch.iter().filter(|s| s.record.y_click == 1).count();
        let n_unclick = n - n_click;
        let inv_click = if n_click > 0 { 1.0 / n_click as f64 } else { 0.0 };
        let inv_unclick = if n_unclick > 0 { 1.0 / n_unclick as f64 } else { 0.0 };
        let inv_all = 1.0 / n as f64;
        let m1 = self.head_mask(0, step_seed)?;
        let m2 = self.head_mask(1, step_seed)?;
        let mut total = 0.0;

        for (bi, s) in batch.iter().enumerate() {
            let r = &s.record;
            let x = self.embedding.lookup(&self.params, &r.features);
            let (h, rep_trace) = self.cvr_rep.forward(&self.params, &x);
            let hd1: Vec<f64> = h.iter().zip(&m1).map(|(a, b)| a * b).collect();
            let hd2: Vec<f64> = h.iter().zip(&m2).map(|(a, b)| a * b).collect();
            let (l1, t1) = self.cvr_pred.forward(&self.params, &hd1);
            let (l2, t2) = self
                .cvr_pred2
                .as_ref()
                .unwrap()
                .forward(&self.params, &hd2);
            let p = softmax2([l1[0], l1[1]]);
            let p2 = softmax2([l2[0], l2[1]]);
            let (hc, ctr_rep_trace) = self.ctr_rep.forward(&self.params, &x);
            let (lc, ctr_pred_trace) = self.ctr_pred.forward(&self.params, &hc);
            let pc = softmax2([lc[0], lc[1]]);

            let mut dp: [f64; 2];
            let mut dp2: [f64; 2];

            if r.y_click == 1 {
                let y = r.y_conv.known().expect("clicked record has label") as f64;
                let t = [y, 1.0 - y];
                total += inv_click * (cross_entropy(t, p) + cross_entropy(t, p2));
                let g = cross_entropy_grad(t, p);
                dp = [inv_click * g[0], inv_click * g[1]];
                let g2 = cross_entropy_grad(t, p2);
                dp2 = [inv_click * g2[0], inv_click * g2[1]];
            } else {
                let t = s.pseudo.unwrap();
                // the factors are constants in the backward pass
                let (w, w2) = match fixed_weights {
                    Some(ws) => ws[bi],
                    None => (
                        uncertainty_weight(kl_divergence(p, p2), lambda),
                        uncertainty_weight(kl_divergence(p2, p), lambda),
                    ),
                };
                let a = alpha * inv_unclick;
                total += a * (w * cross_entropy(t, p) + w2 * cross_entropy(t, p2));
                let g = cross_entropy_grad(t, p);
                dp = [a * w * g[0], a * w * g[1]];
                let g2 = cross_entropy_grad(t, p2);
                dp2 = [a * w2 * g2[0], a * w2 * g2[1]];

                // symmetrized KL regularization; gradients do propagate here
                total += inv_unclick * 0.5 * (kl_divergence(p, p2) + kl_divergence(p2, p));
                let k = inv_unclick * 0.5;
                let gp = kl_divergence_grad_p(p, p2);
                let gq = kl_divergence_grad_q(p, p2);
                let gp2 = kl_divergence_grad_p(p2, p);
                let gq2 = kl_divergence_grad_q(p2, p);
                for i in 0..2 {
                    dp[i] += k * (gp[i] + gq2[i]);
                    dp2[i] += k * (gq[i] + gp2[i]);
                }
            }

            let tc = [r.y_click as f64, 1.0 - r.y_click as f64];
            total += gamma * inv_all * cross_entropy(tc, pc);

            if with_grad {
                let dz = softmax2_backward(p, dp);
                let dhd1 = self.cvr_pred.backward(&mut self.params, &t1, &dz);
                let dz2 = softmax2_backward(p2, dp2);
                let dhd2 =
                    self.cvr_pred2
                        .as_ref()
                        .unwrap()
                        .backward(&mut self.params, &t2, &dz2);
                let dh: Vec<f64> = dhd1
                    .iter()
                    .zip(&m1)
                    .zip(dhd2.iter().zip(&m2))
                    .map(|((a, ma), (b, mb))| a * ma + b * mb)
                    .collect();
                let mut dx = self.cvr_rep.backward(&mut self.params, &rep_trace, &dh);

                let gc = cross_entropy_grad(tc, pc);
                let w = gamma * inv_all;
                let dzc = softmax2_backward(pc, [w * gc[0], w * gc[1]]);
                let dhc = self.ctr_pred.backward(&mut self.params, &ctr_pred_trace, &dzc);
                let dxc = self.ctr_rep.backward(&mut self.params, &ctr_rep_trace, &dhc);
                for (a, b) in dx.iter_mut().zip(&dxc) {
                    *a += b;
                }
                self.embedding.backward(&mut self.params, &r.features, &dx);
            }
        }
        Ok(total)
    }

    /// CTCVR AUC on an impression split; used for model selection.
    /// Clicked-subset CVR AUC: snapshot selection must track the CVR head
    /// itself — an impression-level CTCVR metric can look healthy on CTR
    /// variation alone even when the CVR head has degenerated.
    pub fn validation_metric(&self, valid: &Dataset) -> Option<f64> {
        let samples: Vec<ScoredSample> = valid
            .records
            .iter()
            .filter(|r| r.y_click == 1)
            .map(|r| {
                ScoredSample::new(
                    r.sample_id,
                    self.predict_cvr(r),
                    r.y_conv.known().unwrap_or(0),
                )
            })
            .collect();
        metrics::auc(&samples).ok()
    }
}

/// exp(-lambda * kl): 1 at kl = 0, strictly decreasing, in (0, 1].
pub fn uncertainty_weight(kl: f64, lambda: f64) -> f64 {
    crate::fmath::exp(-lambda * kl.max(0.0))
}

pub struct TrainedStudent {
    pub net: StudentNetwork,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

/// Mixed-batch Adam training over clicked union pseudo-labeled records; the
/// union is shuffled uniformly so batches follow the pool proportions.
/// Retains the best-validation (CTCVR AUC) snapshot.
pub fn train_student(
    config: &DistillConfig,
    d_click: &Dataset,
    pseudo: &[PseudoLabeledRecord],
    valid: &Dataset,
    seed: u64,
) -> Result<TrainedStudent, StudentError> {
    let click_ids: BTreeSet<u64> = d_click.records.iter().map(|r| r.sample_id).collect();
    if let Some(p) = pseudo.iter().find(|p| click_ids.contains(&p.record.sample_id)) {
        return Err(StudentError::OverlappingSampleIds {
            sample_id: p.record.sample_id,
        });
    }
    let mut net = StudentNetwork::new(config.clone(), &d_click.field_cardinalities, seed)?;
    let mut pool: Vec<DistillSample> = d_click
        .records
        .iter()
        .map(|r| DistillSample::clicked(r.clone()))
        .collect();
    pool.extend(pseudo.iter().map(DistillSample::from_pseudo));
    if pool.is_empty() && config.epochs > 0 {
        return Err(StudentError::EmptyTrainingSet);
    }
    let mut adam = Adam::new(&net.params, config.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = rng_from(derive_seed(seed, "student-epoch-shuffle", epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<DistillSample> = chunk.iter().map(|&i| pool[i].clone()).collect();
            let step_seed = derive_seed(
                seed,
                "student-step",
                ((epoch as u64) << 32) | step as u64,
            );
            let loss = match config.variant {
                StudentVariant::Base => net.base_distill_loss_and_grad(&batch, step_seed)?,
                StudentVariant::Uncertainty => {
                    net.uncertainty_distill_loss_and_grad(&batch, step_seed)?
                }
            };
            if !loss.is_finite() {
                return Err(StudentError::Diverged { epoch, step });
            }
            adam.step(&mut net.params)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let validation_metric = net.validation_metric(valid);
        if let Some(m) = validation_metric {
            let better = best.as_ref().map(|(_, b, _)| m > *b).unwrap_or(true);
            if better {
                best = Some((epoch, m, net.params.snapshot()));
            }
        }
        history.push(EpochStats {
            mean_loss: loss_sum / n_batches.max(1) as f64,
            validation_metric,
        });
    }

    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, snap)) = best {
        net.params.restore(&snap);
    }
    Ok(TrainedStudent {
        net,
        history,
        best_epoch,
    })
}

/// One cell of the label-noise identification table.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub k_percent: u32,
    pub seed: u64,
    /// Absent when k = 0 leaves the noisy group empty.
    pub mean_kl_noisy: Option<f64>,
    pub mean_kl_clean: f64,
}

/// For each (k, seed): flip k% of the clicked conversion labels, train a
/// dual-predictor CVR model on the noisy data, then report the mean
/// infer-mode KL between the heads on flipped vs untouched records.
pub fn noise_identification_experiment(
    d_click: &Dataset,
    k_values: &[u32],
    seeds: &[u64],
    config: &DistillConfig,
) -> Result<Vec<NoiseRow>, StudentError> {
    let mut cfg = config.clone();
    // pure dual-predictor CVR objective on clicked data
    cfg.variant = StudentVariant::Uncertainty;
    cfg.alpha = 0.0;
    cfg.gamma = 0.0;
    let mut rows = Vec::with_capacity(k_values.len() * seeds.len());
    for &k in k_values {
        for &seed in seeds {
            let (noisy, mask) =
                inject_label_noise(d_click, k as f64, derive_seed(seed, "noise", k as u64))?;
            // No validation split: the diagnostic reads the fully trained
            // parameters, so no best-snapshot restore may roll the heads back
            // to an early epoch where they have not yet diverged.
            let no_valid = Dataset {
                records: alloc::vec![],
                field_cardinalities: d_click.field_cardinalities.clone(),
                oracle_id: d_click.oracle_id,
            };
            let trained = train_student(&cfg, &noisy, &[], &no_valid, seed)?;
            let mut sum_noisy = 0.0;
            let mut n_noisy = 0usize;
            let mut sum_clean = 0.0;
            let mut n_clean = 0usize;
            for (r, &flipped) in noisy.records.iter().zip(&mask) {
                let kl = trained.net.head_kl(r).expect("dual-predictor model");
                if flipped {
                    sum_noisy += kl;
                    n_noisy += 1;
                } else {
                    sum_clean += kl;
                    n_clean += 1;
                }
            }
            rows.push(NoiseRow {
                k_percent: k,
                seed,
                mean_kl_noisy: (n_noisy > 0).then(|| sum_noisy / n_noisy as f64),
                mean_kl_clean: sum_clean / n_clean.max(1) as f64,
            });
        }
    }
    Ok(rows)
}
