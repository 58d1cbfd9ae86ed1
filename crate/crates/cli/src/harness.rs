//! Experiment harness behind the CLI verbs: data preparation, the shared
//! CTR scorer, model training pipelines, evaluation, and the artifact
//! writers for each command.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use cvrkit_core::datagen::{
    counterfactual_labels, generate_synthetic, split_by_click, split_days, ConvLabel, Dataset,
    OracleWorld,
};
use cvrkit_core::metrics::{self, MetricReport, ScoredSample};
use cvrkit_core::models::{train, Branch, ModelKind, ModelSpec, TrainedModel};
use cvrkit_core::nn::{cross_entropy_grad, Adam, Embedding, Params};
use cvrkit_core::rng::{derive_seed, rng_from};
use cvrkit_core::student::{train_student, StudentVariant, TrainedStudent};
use cvrkit_core::teacher::{
    generate_pseudo_labels, mc_dropout_pseudo_labels, retain_low_variance, train_teacher,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::formats::checkpoint::{write_checkpoint, Checkpoint};
use crate::formats::logfile::{load_log_file, write_log_file};
use crate::formats::oracle::{load_oracle, write_oracle};
use crate::formats::report::{report_csv_row, report_to_text, write_report_csv};

fn pipeline(e: impl core::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

/// Everything a model can be asked to estimate, by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Baseline(ModelKind),
    /// Teacher-distilled student without the uncertainty machinery.
    UkdBase,
    /// Teacher-distilled student with uncertainty-weighted distillation.
    Ukd,
}

pub const MODEL_NAMES: [&str; 8] = [
    "single-cvr",
    "joint",
    "joint-domain",
    "esmm",
    "division",
    "ips-cfl",
    "ukd-base",
    "ukd",
];

impl ModelChoice {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "ukd-base" => Ok(ModelChoice::UkdBase),
            "ukd" => Ok(ModelChoice::Ukd),
            other => ModelKind::parse(other).map(ModelChoice::Baseline).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown model {other:?}; expected one of {}",
                    MODEL_NAMES.join(", ")
                ))
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Baseline(k) => k.name(),
            ModelChoice::UkdBase => "ukd-base",
            ModelChoice::Ukd => "ukd",
        }
    }
}

/// Temporal train/validation/test splits plus the generator oracle when one
/// is available.
pub struct SplitData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub oracle: Option<OracleWorld>,
}

/// Materialize the configured data source and split it by day: last day is
/// the test split, the day before validation, the rest training.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<SplitData, CliError> {
    let (dataset, oracle) = match cfg.data.source.as_str() {
        "generate" => {
            let gen = cfg.gen_config(derive_seed(seed, "datagen", 0));
            let (d, o) = generate_synthetic(&gen).map_err(pipeline)?;
            (d, Some(o))
        }
        "logfile" => {
            let path = cfg.data.path.as_ref().expect("validated");
            let mut d = load_log_file(path)?;
            let oracle = match &cfg.data.oracle_path {
                Some(p) => {
                    let o = load_oracle(p)?;
                    // the log format carries no oracle linkage; trusting the
                    // configured pairing re-establishes it
                    d.oracle_id = Some(o.world_id);
                    Some(o)
                }
                None => None,
            };
            (d, oracle)
        }
        _ => unreachable!("validated"),
    };
    let (train, valid, test) = split_days(&dataset, cfg.data.n_days);
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(CliError::Data(format!(
            "dataset with {} records is too small for {} days",
            dataset.len(),
            cfg.data.n_days
        )));
    }
    Ok(SplitData {
        train,
        valid,
        test,
        oracle,
    })
}

/// Click predictor trained once per dataset and shared by every competitor,
/// so CTCVR products and propensity weights are comparable across models.
pub struct CtrModel {
    params: Params,
    embedding: Embedding,
    branch: Branch,
}

impl CtrModel {
    pub fn predict(&self, features: &[u32]) -> f64 {
        let x = self.embedding.lookup(&self.params, features);
        self.branch.infer_probs(&self.params, &x)[0]
    }

    pub fn scores(&self, data: &Dataset) -> Vec<f64> {
        data.records
            .iter()
            .map(|r| self.predict(&r.features))
            .collect()
    }
}

/// Mini-batch Adam on click cross-entropy over all impressions.
pub fn train_ctr_model(
    train_data: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<CtrModel, CliError> {
    let hp = cfg.hyperparams();
    let mut params = Params::new();
    let mut rng = rng_from(derive_seed(seed, "ctr-init", 0));
    let embedding = Embedding::new(
        &mut params,
        &train_data.field_cardinalities,
        hp.embedding_dim,
        &mut rng,
    );
    let branch = Branch::new(&mut params, embedding.out_dim(), &hp.layer_widths, &mut rng)
        .map_err(pipeline)?;
    let mut adam = Adam::new(&params, hp.learning_rate);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..hp.epochs {
        let mut shuffle_rng = rng_from(derive_seed(seed, "ctr-shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(hp.batch_size) {
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let r = &train_data.records[i];
                let x = embedding.lookup(&params, &r.features);
                let trace = branch.forward(&params, &x);
                let target = [r.y_click as f64, 1.0 - r.y_click as f64];
                let mut dp = cross_entropy_grad(target, trace.probs);
                dp[0] *= inv;
                dp[1] *= inv;
                let drep = branch.backward_pred(&mut params, &trace, dp);
                let dx = branch.backward_rep(&mut params, &trace, &drep);
                embedding.backward(&mut params, &r.features, &dx);
            }
            adam.step(&mut params).map_err(pipeline)?;
        }
    }
    Ok(CtrModel {
        params,
        embedding,
        branch,
    })
}

/// A trained competitor of any architecture, reduced to what evaluation and
/// checkpointing need.
pub enum TrainedAny {
    Baseline(TrainedModel),
    Distilled(TrainedStudent),
}

impl TrainedAny {
    pub fn cvr_scores(&self, data: &Dataset) -> Vec<f64> {
        match self {
            TrainedAny::Baseline(t) => t.model.cvr_scores(data),
            TrainedAny::Distilled(t) => data
                .records
                .iter()
                .map(|r| t.net.predict_cvr(r))
                .collect(),
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            TrainedAny::Baseline(t) => &t.model.params,
            TrainedAny::Distilled(t) => &t.net.params,
        }
    }
}

/// Train one competitor. The distilled variants run the full pipeline:
/// adversarial teacher on the clicked/unclicked split of the training data,
/// pseudo-labels for the unclicked pool (optionally variance-filtered), then
/// the student.
pub fn run_model(
    choice: ModelChoice,
    cfg: &ExperimentConfig,
    data: &SplitData,
    seed: u64,
) -> Result<TrainedAny, CliError> {
    match choice {
        ModelChoice::Baseline(kind) => {
            let spec = ModelSpec {
                kind,
                hp: cfg.hyperparams(),
            };
            let trained = train(&spec, &data.train, &data.valid, derive_seed(seed, "train", 0))
                .map_err(pipeline)?;
            Ok(TrainedAny::Baseline(trained))
        }
        ModelChoice::UkdBase | ModelChoice::Ukd => {
            let (d_click, d_unclick) = split_by_click(&data.train);
            let teacher = train_teacher(
                &cfg.teacher_config(),
                &d_click,
                &d_unclick,
                &data.valid,
                derive_seed(seed, "teacher", 0),
            )
            .map_err(pipeline)?;
            let pseudo = if cfg.model.keep_fraction < 1.0 {
                let labeled = mc_dropout_pseudo_labels(
                    &teacher.net,
                    &d_unclick,
                    cfg.model.mc_passes,
                    cfg.model.dropout_rate,
                    derive_seed(seed, "mc-dropout", 0),
                )
                .map_err(pipeline)?;
                retain_low_variance(labeled, cfg.model.keep_fraction)
            } else {
                generate_pseudo_labels(&teacher.net, &d_unclick)
            };
            let variant = match choice {
                ModelChoice::Ukd => StudentVariant::Uncertainty,
                _ => StudentVariant::Base,
            };
            let student = train_student(
                &cfg.distill_config(variant),
                &d_click,
                &pseudo,
                &data.valid,
                derive_seed(seed, "student", 0),
            )
            .map_err(pipeline)?;
            Ok(TrainedAny::Distilled(student))
        }
    }
}

/// All headline metrics for one score vector on one split. Clicked-subset
/// metrics use the shared CTR model's click probability as the propensity;
/// CTCVR metrics use its score as the click factor; the entire-space oracle
/// AUC only exists when the split is linked to a generator oracle.
pub fn evaluate_model(
    cvr_scores: &[f64],
    split: &Dataset,
    ctr: &CtrModel,
    oracle: Option<&OracleWorld>,
    seed: u64,
) -> MetricReport {
    let ctr_scores = ctr.scores(split);
    let mut clicked = Vec::new();
    for (i, r) in split.records.iter().enumerate() {
        if r.y_click != 1 {
            continue;
        }
        let label = match r.y_conv {
            ConvLabel::One => 1,
            ConvLabel::Zero => 0,
            ConvLabel::Unknown => continue,
        };
        clicked.push(ScoredSample::with_propensity(
            r.sample_id,
            cvr_scores[i],
            label,
            ctr_scores[i],
        ));
    }
    let pv_labels: Vec<u8> = split.records.iter().map(|r| r.y_pv_conv).collect();
    let (auc_ctcvr, nll_ctcvr) = metrics::ctcvr_metrics(cvr_scores, &ctr_scores, &pv_labels);
    let oracle_auc = oracle.and_then(|o| {
        let labels = counterfactual_labels(o, split, derive_seed(seed, "counterfactual", 0)).ok()?;
        metrics::entire_space_oracle_auc(cvr_scores, &labels).ok()
    });
    MetricReport {
        auc_cvr: metrics::auc(&clicked).ok(),
        nll_cvr: metrics::nll(&clicked).ok(),
        d_auc_cvr: metrics::d_auc(&clicked).ok(),
        d_nll_cvr: metrics::d_nll(&clicked).ok(),
        auc_ctcvr: auc_ctcvr.ok(),
        nll_ctcvr: nll_ctcvr.ok(),
        oracle_auc_cvr_entire_space: oracle_auc,
        n_clicked: clicked.len(),
        n_impressions: split.len(),
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    seed: u64,
    artifacts: &[String],
    wall_ms: u128,
) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str(&format!("command {command}\n"));
    text.push_str(&format!("seed {seed}\n"));
    text.push_str(&format!("wall_clock_ms {wall_ms}\n"));
    for a in artifacts {
        text.push_str(&format!("artifact {a}\n"));
    }
    text.push_str("config:\n");
    text.push_str(&cfg.to_toml());
    fs::write(out.join("manifest.txt"), text)?;
    Ok(())
}

/// `generate`: draw a synthetic log and write it plus its oracle world.
pub fn cmd_generate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    if cfg.data.source != "generate" {
        return Err(CliError::Usage(
            "generate requires data.source = \"generate\"".to_string(),
        ));
    }
    let started = Instant::now();
    ensure_out_dir(out)?;
    let gen = cfg.gen_config(derive_seed(seed, "datagen", 0));
    let (dataset, oracle) = generate_synthetic(&gen).map_err(pipeline)?;
    write_log_file(&dataset, &out.join("data.log"))?;
    write_oracle(&oracle, &out.join("oracle.txt"))?;
    write_manifest(
        out,
        "generate",
        cfg,
        seed,
        &["data.log".to_string(), "oracle.txt".to_string()],
        started.elapsed().as_millis(),
    )
}

/// `train`: one model, one seed; writes the metric report, a one-row CSV,
/// and a parameter checkpoint.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    model_name: &str,
) -> Result<(), CliError> {
    let choice = ModelChoice::parse(model_name)?;
    let started = Instant::now();
    ensure_out_dir(out)?;
    let data = prepare_data(cfg, seed)?;
    let ctr = train_ctr_model(&data.train, cfg, derive_seed(seed, "shared-ctr", 0))?;
    let trained = run_model(choice, cfg, &data, seed)?;
    let scores = trained.cvr_scores(&data.test);
    let report = evaluate_model(&scores, &data.test, &ctr, data.oracle.as_ref(), seed);
    fs::write(
        out.join("report.txt"),
        report_to_text(choice.name(), "test", &report),
    )?;
    write_report_csv(
        &[(choice.name().to_string(), "test".to_string(), report)],
        &out.join("reports.csv"),
    )?;
    let ckpt = Checkpoint::from_params(
        choice.name(),
        &data.train.field_cardinalities,
        &cfg.to_toml(),
        trained.params(),
    );
    write_checkpoint(&ckpt, &out.join("model.ckpt"))?;
    write_manifest(
        out,
        "train",
        cfg,
        seed,
        &[
            "report.txt".to_string(),
            "reports.csv".to_string(),
            "model.ckpt".to_string(),
        ],
        started.elapsed().as_millis(),
    )
}

/// Whether larger values of a metric are better.
fn higher_is_better(metric: &str) -> bool {
    !metric.contains("nll")
}

/// `compare`: several models over several seeds on freshly drawn data per
/// seed; writes every per-run report row plus an aggregate table with mean,
/// standard deviation, and per-metric rank.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    model_names: &[String],
    n_seeds: usize,
) -> Result<(), CliError> {
    if model_names.is_empty() {
        return Err(CliError::Usage("no models given".to_string()));
    }
    if n_seeds == 0 {
        return Err(CliError::Usage("n-seeds must be at least 1".to_string()));
    }
    let choices: Vec<ModelChoice> = model_names
        .iter()
        .map(|s| ModelChoice::parse(s))
        .collect::<Result<_, _>>()?;
    let started = Instant::now();
    ensure_out_dir(out)?;
    // reports[m] holds one report per seed for model m
    let mut reports: Vec<Vec<MetricReport>> = vec![Vec::new(); choices.len()];
    let mut rows = Vec::new();
    for run in 0..n_seeds {
        let run_seed = derive_seed(seed, "compare-run", run as u64);
        let data = prepare_data(cfg, run_seed)?;
        let ctr = train_ctr_model(&data.train, cfg, derive_seed(run_seed, "shared-ctr", 0))?;
        for (m, &choice) in choices.iter().enumerate() {
            let trained = run_model(choice, cfg, &data, run_seed)?;
            let scores = trained.cvr_scores(&data.test);
            let report = evaluate_model(&scores, &data.test, &ctr, data.oracle.as_ref(), run_seed);
            rows.push((
                choice.name().to_string(),
                format!("test-seed{run}"),
                report.clone(),
            ));
            reports[m].push(report);
        }
    }
    write_report_csv(&rows, &out.join("reports.csv"))?;

    let mut table = String::from("model,metric,mean,sd,rank\n");
    let metric_names = MetricReport::metric_names();
    for metric in &metric_names {
        // mean per model, skipping models where the metric never applied
        let stats: Vec<Option<(f64, f64)>> = reports
            .iter()
            .map(|rs| {
                let vals: Vec<f64> = rs.iter().filter_map(|r| r.metric_by_name(metric)).collect();
                if vals.is_empty() {
                    return None;
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = if vals.len() < 2 {
                    0.0
                } else {
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / (vals.len() - 1) as f64;
                    var.sqrt()
                };
                Some((mean, sd))
            })
            .collect();
        for (m, choice) in choices.iter().enumerate() {
            let Some((mean, sd)) = stats[m] else {
                table.push_str(&format!("{},{metric},,,\n", choice.name()));
                continue;
            };
            let rank = 1 + stats
                .iter()
                .flatten()
                .filter(|(other, _)| {
                    if higher_is_better(metric) {
                        *other > mean
                    } else {
                        *other < mean
                    }
                })
                .count();
            table.push_str(&format!("{},{metric},{mean},{sd},{rank}\n", choice.name()));
        }
    }
    fs::write(out.join("comparison.csv"), table)?;
    write_manifest(
        out,
        "compare",
        cfg,
        seed,
        &["reports.csv".to_string(), "comparison.csv".to_string()],
        started.elapsed().as_millis(),
    )
}

/// `sweep`: retrain the uncertainty-distilled model over the configured
/// (dropout rate, alpha, unclicked ratio) grid, `repetitions` seeds per
/// cell, one CSV row per run.
pub fn cmd_sweep(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let metric_names = MetricReport::metric_names();
    let mut table = format!(
        "dropout_rate,alpha,unclick_ratio,seed,{},n_clicked,n_impressions\n",
        metric_names.join(",")
    );
    for rep in 0..cfg.sweep.repetitions {
        let run_seed = derive_seed(seed, "sweep-run", rep as u64);
        let data = prepare_data(cfg, run_seed)?;
        let ctr = train_ctr_model(&data.train, cfg, derive_seed(run_seed, "shared-ctr", 0))?;
        for &dropout_rate in &cfg.sweep.dropout_rates {
            for &alpha in &cfg.sweep.alphas {
                for &unclick_ratio in &cfg.sweep.unclick_ratios {
                    let mut cell = cfg.clone();
                    cell.model.dropout_rate = dropout_rate;
                    cell.model.alpha = alpha;
                    cell.model.unclick_ratio = unclick_ratio;
                    cell.validate()?;
                    let trained = run_model(ModelChoice::Ukd, &cell, &data, run_seed)?;
                    let scores = trained.cvr_scores(&data.test);
                    let report =
                        evaluate_model(&scores, &data.test, &ctr, data.oracle.as_ref(), run_seed);
                    let row = report_csv_row("ukd", "test", &report);
                    // drop the leading model,split cells; prepend the grid cell
                    let metrics_part = row.splitn(3, ',').nth(2).unwrap().to_string();
                    table.push_str(&format!(
                        "{dropout_rate},{alpha},{unclick_ratio},{run_seed},{metrics_part}\n"
                    ));
                }
            }
        }
    }
    fs::write(out.join("sweep.csv"), table)?;
    write_manifest(
        out,
        "sweep",
        cfg,
        seed,
        &["sweep.csv".to_string()],
        started.elapsed().as_millis(),
    )
}

/// `noise-exp`: label-noise identification. Flip k% of clicked conversion
/// labels, train the dual-predictor model, and compare the mean between-head
/// divergence on flipped vs untouched records.
pub fn cmd_noise_exp(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    ensure_out_dir(out)?;
    let data = prepare_data(cfg, seed)?;
    let (d_click, _) = split_by_click(&data.train);
    let seeds: Vec<u64> = (0..cfg.sweep.repetitions)
        .map(|i| derive_seed(seed, "noise-run", i as u64))
        .collect();
    let rows = cvrkit_core::student::noise_identification_experiment(
        &d_click,
        &cfg.sweep.k_values,
        &seeds,
        &cfg.distill_config(StudentVariant::Uncertainty),
    )
    .map_err(pipeline)?;

    let mut table = String::from("k,seed,mean_kl_noisy,mean_kl_clean\n");
    for r in &rows {
        let noisy = r
            .mean_kl_noisy
            .map(|v| v.to_string())
            .unwrap_or_default();
        table.push_str(&format!(
            "{},{},{},{}\n",
            r.k_percent, r.seed, noisy, r.mean_kl_clean
        ));
    }
    fs::write(out.join("noise.csv"), &table)?;

    let mut summary = String::new();
    for &k in &cfg.sweep.k_values {
        let at_k: Vec<_> = rows.iter().filter(|r| r.k_percent == k).collect();
        let wins = at_k
            .iter()
            .filter(|r| r.mean_kl_noisy.map_or(false, |n| n > r.mean_kl_clean))
            .count();
        summary.push_str(&format!(
            "k {k}: flipped records show higher between-head divergence in {wins}/{} runs\n",
            at_k.len()
        ));
    }
    fs::write(out.join("summary.txt"), summary)?;
    write_manifest(
        out,
        "noise-exp",
        cfg,
        seed,
        &["noise.csv".to_string(), "summary.txt".to_string()],
        started.elapsed().as_millis(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.n_impressions = 3_000;
        cfg.data.field_cardinalities = vec![8; 3];
        cfg.data.n_days = 5;
        cfg.model.layer_widths = vec![8, 2];
        cfg.model.epochs = 1;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn model_choice_parses_every_documented_name() {
        for name in MODEL_NAMES {
            assert_eq!(ModelChoice::parse(name).unwrap().name(), name);
        }
        assert!(matches!(
            ModelChoice::parse("bogus"),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn ctr_model_scores_are_probabilities() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg, 7).unwrap();
        let ctr = train_ctr_model(&data.train, &cfg, 7).unwrap();
        for s in ctr.scores(&data.test) {
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn evaluate_reports_all_metrics_on_synthetic_data() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg, 11).unwrap();
        let ctr = train_ctr_model(&data.train, &cfg, 11).unwrap();
        let trained = run_model(ModelChoice::Baseline(ModelKind::Joint), &cfg, &data, 11).unwrap();
        let scores = trained.cvr_scores(&data.test);
        let report = evaluate_model(&scores, &data.test, &ctr, data.oracle.as_ref(), 11);
        assert!(report.auc_cvr.is_some());
        assert!(report.d_auc_cvr.is_some());
        assert!(report.auc_ctcvr.is_some());
        assert!(report.oracle_auc_cvr_entire_space.is_some());
        assert_eq!(report.n_impressions, data.test.len());
    }

    #[test]
    fn distilled_pipeline_produces_scores() {
        let cfg = tiny_config();
        let data = prepare_data(&cfg, 3).unwrap();
        let trained = run_model(ModelChoice::Ukd, &cfg, &data, 3).unwrap();
        let scores = trained.cvr_scores(&data.test);
        assert_eq!(scores.len(), data.test.len());
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}
