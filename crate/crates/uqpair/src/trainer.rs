//! Training and evaluation loops: warmup/decay schedule, delayed-start
//! early stopping on validation concordance, best-checkpoint restore, and
//! the multi-seed median/peak protocol.

use serde::{Deserialize, Serialize};

use crate::data::{tokenize_pair, ExamplePair, TokenizedPair, Tokenizer};
use crate::ensemble::ensemble_forward;
use crate::error::Error;
use crate::losses::{BatchTargets, LossWeights};
use crate::metrics::{
    calibration_error, concordance, nlpd, pearson, rmse, sharpness, spearman, MetricReport,
};
use crate::model::Model;
use crate::optim::{clip_global_norm, AdamW};
use crate::rng::{RngStream, DOMAIN_EVAL, DOMAIN_SHUFFLE, DOMAIN_TRAIN};
use crate::Result;

/// Optimization and protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Bound on optimizer steps; epochs run until this or early stop.
    pub max_steps: usize,
    /// Fraction of max_steps spent ramping the learning rate from 0.
    pub warmup_frac: f64,
    /// Early stopping is armed only after this many epochs.
    pub min_epochs: usize,
    /// Epochs without validation-CCC improvement before stopping.
    pub patience: usize,
    pub seeds: Vec<u64>,
    /// Ensemble passes per sample, training and evaluation alike.
    #[serde(rename = "T")]
    pub t_passes: usize,
    /// Keep dropout active during evaluation (the MC-dropout path).
    pub mc_dropout: bool,
    /// Global gradient-norm bound.
    pub grad_clip: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            batch_size: 16,
            max_steps: 6000,
            warmup_frac: 0.03,
            min_epochs: 5,
            patience: 3,
            seeds: vec![0, 42, 100],
            t_passes: 4,
            mc_dropout: true,
            grad_clip: 1.0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::Config(format!(
                "warmup_frac must be in (0,1), got {}",
                self.warmup_frac
            )));
        }
        if self.min_epochs < 1 {
            return Err(Error::Config("min_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if self.t_passes < 1 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!(
                "grad_clip must be > 0, got {}",
                self.grad_clip
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Linear warmup from 0 over the first `warmup_frac * total_steps` steps,
/// then linear decay to 0 at `total_steps`. Steps past the end log a
/// warning and clamp to 0.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if step > total_steps {
        log::warn!("lr_at called with step {step} past total {total_steps}; clamping to 0");
        return 0.0;
    }
    let total = total_steps as f64;
    let warm = cfg.warmup_frac * total;
    let s = step as f64;
    if s <= warm {
        if warm == 0.0 {
            return cfg.lr;
        }
        cfg.lr * s / warm
    } else {
        cfg.lr * (total - s) / (total - warm)
    }
}

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub y: f64,
    pub y_bar: f64,
    pub sigma2_bar: f64,
    pub is_noisy: bool,
    pub original_score: Option<f64>,
}

/// Outcome of one seeded training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_ccc: f64,
    /// Validation metrics per epoch, in order.
    pub val_history: Vec<MetricReport>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub steps_taken: usize,
    /// Filled by callers that evaluate a held-out split afterwards.
    pub test: Option<MetricReport>,
    /// Written by callers that persist the restored best model.
    pub checkpoint: Option<std::path::PathBuf>,
    /// Set when a sweep pruning hook abandoned the run early.
    pub pruned: bool,
}

/// MC-dropout ensembled evaluation of one split.
///
/// Constant predictions make the correlation metrics undefined; they are
/// scored as the worst value (-1) rather than erroring, so evaluating an
/// untrained model is always safe. Everything else propagates.
pub fn evaluate_split(
    model: &Model,
    split: &[ExamplePair],
    tokenizer: &dyn Tokenizer,
    t_passes: usize,
    mc_dropout: bool,
    stream: RngStream,
) -> Result<(MetricReport, Vec<SampleRecord>)> {
    if split.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "metrics undefined on a split of {} sample(s)",
            split.len()
        )));
    }
    let mut y = Vec::with_capacity(split.len());
    let mut y_bar = Vec::with_capacity(split.len());
    let mut s2_bar = Vec::with_capacity(split.len());
    let mut records = Vec::with_capacity(split.len());
    for (i, pair) in split.iter().enumerate() {
        let tokenized = tokenize_pair(&pair.text_a, &pair.text_b, tokenizer, model.cfg().max_len)?;
        let ens = ensemble_forward(model, &tokenized, t_passes, stream.child(i as u64), mc_dropout)?;
        y.push(pair.score);
        y_bar.push(ens.y_bar);
        s2_bar.push(ens.sigma2_bar);
        records.push(SampleRecord {
            id: pair.id.clone(),
            y: pair.score,
            y_bar: ens.y_bar,
            sigma2_bar: ens.sigma2_bar,
            is_noisy: pair.is_noisy,
            original_score: pair.original_score,
        });
    }
    let correlation_or_worst = |r: Result<f64>| -> Result<f64> {
        match r {
            Ok(v) => Ok(v),
            Err(Error::CorrelationUndefined { .. }) => Ok(-1.0),
            Err(e) => Err(e),
        }
    };
    let report = MetricReport {
        pcc: correlation_or_worst(pearson(&y, &y_bar))?,
        scc: correlation_or_worst(spearman(&y, &y_bar))?,
        ccc: correlation_or_worst(concordance(&y, &y_bar))?,
        rmse: rmse(&y, &y_bar)?,
        nlpd: nlpd(&y, &y_bar, &s2_bar)?,
        cal: calibration_error(&y, &y_bar, &s2_bar)?,
        shp: sharpness(&s2_bar)?,
    };
    Ok((report, records))
}

/// Decide after each epoch whether to abandon the run (sweep pruning).
/// Receives the finished epoch number and its validation CCC.
pub type PruneHook<'a> = &'a dyn Fn(usize, f64) -> bool;

/// Train `model` in place. Per optimizer step: one batch of T-pass
/// ensembled gradients, global-norm clipping, AdamW at the scheduled rate.
/// Per epoch: shuffled batches, then validation CCC with the configured
/// ensembling. Early stopping is armed after `min_epochs`; the best-CCC
/// parameters are restored before returning.
pub fn train(
    model: &mut Model,
    tokenizer: &dyn Tokenizer,
    train_split: &[ExamplePair],
    val_split: &[ExamplePair],
    bounds: (f64, f64),
    cfg: &TrainConfig,
    seed: u64,
    prune: Option<PruneHook>,
) -> Result<RunResult> {
    cfg.validate()?;
    if train_split.is_empty() || val_split.len() < 2 {
        return Err(Error::invalid(format!(
            "need a nonempty train split and >= 2 validation samples, got {} and {}",
            train_split.len(),
            val_split.len()
        )));
    }
    let root = RngStream::root(seed);
    let max_len = model.cfg().max_len;
    let tokenized: Vec<TokenizedPair> = train_split
        .iter()
        .map(|p| tokenize_pair(&p.text_a, &p.text_b, tokenizer, max_len))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = train_split.iter().map(|p| p.score).collect();

    let mut opt = AdamW::new(
        model.num_params(),
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.weight_decay,
    );
    let mut grads = vec![0.0; model.num_params()];
    let mut step = 0usize;
    let mut best_epoch = 0usize;
    let mut best_ccc = f64::NEG_INFINITY;
    let mut best_params: Vec<f64> = model.params().to_vec();
    let mut val_history = Vec::new();
    let mut train_loss = Vec::new();
    let mut pruned = false;

    let mut indices: Vec<usize> = (0..train_split.len()).collect();
    let mut epoch = 0usize;
    loop {
        epoch += 1;
        {
            use rand::seq::SliceRandom;
            let mut rng = root.descend(&[DOMAIN_SHUFFLE, epoch as u64]).rng();
            indices.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            if step >= cfg.max_steps {
                break;
            }
            let batch: Vec<TokenizedPair> = chunk.iter().map(|&i| tokenized[i].clone()).collect();
            let batch_scores: Vec<f64> = chunk.iter().map(|&i| scores[i]).collect();
            let targets = BatchTargets::new(batch_scores, bounds.0, bounds.1)?;
            let batch_stream = root.descend(&[DOMAIN_TRAIN, epoch as u64, step as u64]);
            let loss =
                model.loss_gradients(&batch, &targets, &cfg.weights, cfg.t_passes, batch_stream, &mut grads)?;
            clip_global_norm(&mut grads, cfg.grad_clip);
            let lr = lr_at(step, cfg.max_steps, cfg);
            opt.step(model.params_mut(), &grads, lr);
            step += 1;
            epoch_loss += loss.total;
            epoch_batches += 1;
        }
        if epoch_batches == 0 {
            // max_steps exhausted before this epoch ran a single batch
            epoch -= 1;
            break;
        }
        train_loss.push(epoch_loss / epoch_batches as f64);

        let (report, _) = evaluate_split(
            model,
            val_split,
            tokenizer,
            cfg.t_passes,
            cfg.mc_dropout,
            root.descend(&[DOMAIN_EVAL, epoch as u64]),
        )?;
        val_history.push(report);
        if report.ccc > best_ccc {
            best_ccc = report.ccc;
            best_epoch = epoch;
            best_params.copy_from_slice(model.params());
        }
        if let Some(hook) = prune {
            if hook(epoch, report.ccc) {
                pruned = true;
                break;
            }
        }
        if epoch >= cfg.min_epochs && epoch - best_epoch >= cfg.patience {
            break;
        }
        if step >= cfg.max_steps {
            break;
        }
    }

    model.params_mut().copy_from_slice(&best_params);
    Ok(RunResult {
        seed,
        stopped_epoch: epoch,
        best_epoch,
        best_val_ccc: best_ccc,
        val_history,
        train_loss,
        steps_taken: step,
        test: None,
        checkpoint: None,
        pruned,
    })
}

/// Median and best-direction extremum per metric across seed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub median: MetricReport,
    pub peak: MetricReport,
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite metric"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregate test reports: elementwise median, and peak taking the max for
/// the correlation metrics and the min for the error/uncertainty metrics.
pub fn summarize_reports(reports: &[MetricReport]) -> Result<SeedSummary> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to summarize"));
    }
    let collect = |f: &dyn Fn(&MetricReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let pcc = collect(&|r| r.pcc);
    let scc = collect(&|r| r.scc);
    let ccc = collect(&|r| r.ccc);
    let rmse = collect(&|r| r.rmse);
    let nlpd = collect(&|r| r.nlpd);
    let cal = collect(&|r| r.cal);
    let shp = collect(&|r| r.shp);
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SeedSummary {
        median: MetricReport {
            pcc: median_of(pcc.clone()),
            scc: median_of(scc.clone()),
            ccc: median_of(ccc.clone()),
            rmse: median_of(rmse.clone()),
            nlpd: median_of(nlpd.clone()),
            cal: median_of(cal.clone()),
            shp: median_of(shp.clone()),
        },
        peak: MetricReport {
            pcc: max(&pcc),
            scc: max(&scc),
            ccc: max(&ccc),
            rmse: min(&rmse),
            nlpd: min(&nlpd),
            cal: min(&cal),
            shp: min(&shp),
        },
    })
}

/// Run the per-seed closure over every seed and aggregate the test reports.
/// The runner must fill `RunResult::test`.
pub fn multi_seed<F>(seeds: &[u64], mut runner: F) -> Result<(Vec<RunResult>, SeedSummary)>
where
    F: FnMut(u64) -> Result<RunResult>,
{
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed required"));
    }
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let r = runner(seed)?;
        if r.test.is_none() {
            return Err(Error::invalid(format!(
                "seed {seed}: runner returned no test report"
            )));
        }
        results.push(r);
    }
    let reports: Vec<MetricReport> = results.iter().map(|r| r.test.unwrap()).collect();
    let summary = summarize_reports(&reports)?;
    Ok((results, summary))
}
