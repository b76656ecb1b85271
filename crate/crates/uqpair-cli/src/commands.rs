//! The five subcommand bodies. Each writes an immutable run directory:
//! manifest first, then artifacts, never touching input files.

use std::path::{Path, PathBuf};

use uqpair::data::{
    inject_noise, load_dataset, save_split, DatasetSplits, ExamplePair, HashedTokenizer, Tokenizer,
};
use uqpair::metrics::{noise_separation_auroc, welch_t_test};
use uqpair::model::Model;
use uqpair::rng::{RngStream, DOMAIN_EVAL, DOMAIN_INIT, DOMAIN_NOISE, DOMAIN_SWEEP, DOMAIN_SYNTH};
use uqpair::synth::{generate, SynthConfig};
use uqpair::trainer::{evaluate_split, multi_seed, train, RunResult, SampleRecord};
use uqpair::{Error, Result};

use crate::artifacts::{
    create_run_dir, histogram, scatter_svg, sig9, write_flat_report, write_history_csv,
    write_samples_csv, RunManifest,
};
use crate::config::FullConfig;

fn dataset_paths(data_dir: &Path) -> Vec<PathBuf> {
    ["train.tsv", "validation.tsv", "test.tsv"]
        .iter()
        .map(|f| data_dir.join(f))
        .collect()
}

/// Test-set evaluation stream. Epoch streams start at 1, so index 0 is
/// reserved for the held-out pass; `eval` reuses this to reproduce train's
/// test reports exactly.
fn test_stream(seed: u64) -> RngStream {
    RngStream::root(seed).descend(&[DOMAIN_EVAL, 0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Train per seed, aggregate median/peak across seeds, write everything.
pub fn cmd_train(cfg: &FullConfig, data_dir: &Path, out_dir: &Path) -> Result<()> {
    cfg.validate()?;
    let ds = load_dataset(data_dir, None)?;
    create_run_dir(out_dir)?;
    RunManifest::new("train", cfg, &cfg.train.seeds, &dataset_paths(data_dir)).write(out_dir)?;
    let tokenizer = HashedTokenizer::new(cfg.encoder.vocab_size)?;

    let seeds = cfg.train.seeds.clone();
    let (results, summary) = multi_seed(&seeds, |seed| {
        let run = run_one_seed(cfg, &tokenizer, &ds, seed, out_dir, None)?;
        log::info!(
            "seed {seed}: stopped epoch {}, best val ccc {:.4}, test ccc {:.4}",
            run.stopped_epoch,
            run.best_val_ccc,
            run.test.map(|t| t.ccc).unwrap_or(f64::NAN)
        );
        Ok(run)
    })?;

    write_flat_report(
        &out_dir.join("summary.txt"),
        &[("median", &summary.median), ("peak", &summary.peak)],
    )?;
    let summary_json = serde_json::json!({
        "seeds": seeds,
        "median": summary.median,
        "peak": summary.peak,
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary_json).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    for r in &results {
        println!(
            "seed {:>4}  stopped_epoch {:>3}  best_val_ccc {}  test_ccc {}",
            r.seed,
            r.stopped_epoch,
            sig9(r.best_val_ccc),
            sig9(r.test.map(|t| t.ccc).unwrap_or(f64::NAN)),
        );
    }
    println!("median test ccc {}  peak test ccc {}", sig9(summary.median.ccc), sig9(summary.peak.ccc));
    Ok(())
}

/// One seeded run: train, evaluate the test split, persist artifacts under
/// `out_dir/seed-N/`. `noisy_eval` switches the final evaluation from the
/// test split to a provided (noisy) split, for the noise analysis.
fn run_one_seed(
    cfg: &FullConfig,
    tokenizer: &dyn Tokenizer,
    ds: &DatasetSplits,
    seed: u64,
    out_dir: &Path,
    noisy_eval: Option<&[ExamplePair]>,
) -> Result<RunResult> {
    let seed_dir = out_dir.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&seed_dir)?;
    let mut model = Model::new(cfg.encoder.clone(), RngStream::root(seed).child(DOMAIN_INIT))?;
    let mut run = train(
        &mut model,
        tokenizer,
        &ds.train,
        &ds.validation,
        (ds.label_min, ds.label_max),
        &cfg.train,
        seed,
        None,
    )?;
    let eval_set: &[ExamplePair] = noisy_eval.unwrap_or(&ds.test);
    let (report, records) = evaluate_split(
        &model,
        eval_set,
        tokenizer,
        cfg.train.t_passes,
        cfg.train.mc_dropout,
        test_stream(seed),
    )?;
    run.test = Some(report);

    let ckpt = seed_dir.join("checkpoint.bin");
    model.save(&ckpt)?;
    run.checkpoint = Some(ckpt);
    write_history_csv(&seed_dir.join("history.csv"), &run.val_history, &run.train_loss)?;
    write_samples_csv(&seed_dir.join("samples.csv"), &records)?;
    write_flat_report(&seed_dir.join("report.txt"), &[("test", &report)])?;
    std::fs::write(
        seed_dir.join("run_result.json"),
        serde_json::to_string_pretty(&run).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    Ok(run)
}

/// Evaluate a saved checkpoint on one split of a dataset.
pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    split_name: &str,
    t_passes: usize,
    mc_dropout: bool,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let ds = load_dataset(data_dir, None)?;
    let split = match split_name {
        "train" => &ds.train,
        "validation" => &ds.validation,
        "test" => &ds.test,
        other => {
            return Err(Error::Config(format!(
                "unknown split {other:?}; expected train, validation, or test"
            )))
        }
    };
    let tokenizer = HashedTokenizer::new(model.cfg().vocab_size)?;
    let (report, records) =
        evaluate_split(&model, split, &tokenizer, t_passes, mc_dropout, test_stream(seed))?;
    std::fs::create_dir_all(out_dir)?;
    write_flat_report(&out_dir.join("report.txt"), &[("", &report)])?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    write_samples_csv(&out_dir.join("samples.csv"), &records)?;
    for (k, v) in report.flat() {
        println!("{k} = {}", sig9(v));
    }
    Ok(())
}

/// Inject label noise into the train split, train on it, then score the
/// noisy train split itself: per-sample uncertainty should separate the
/// shifted rows from the untouched ones.
#[allow(clippy::too_many_arguments)]
pub fn cmd_noise_demo(
    cfg: &FullConfig,
    data_dir: &Path,
    fraction: f64,
    shift: f64,
    seed: u64,
    svg: bool,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    let ds = load_dataset(data_dir, None)?;
    create_run_dir(out_dir)?;
    RunManifest::new("noise-demo", cfg, &[seed], &dataset_paths(data_dir)).write(out_dir)?;

    let noisy_train = inject_noise(
        &ds.train,
        fraction,
        shift,
        (ds.label_min, ds.label_max),
        RngStream::root(seed).child(DOMAIN_NOISE),
    )?;
    save_split(&out_dir.join("noisy_train.tsv"), &noisy_train)?;
    let noisy_ds = DatasetSplits { train: noisy_train.clone(), ..ds };

    let tokenizer = HashedTokenizer::new(cfg.encoder.vocab_size)?;
    let run = run_one_seed(cfg, &tokenizer, &noisy_ds, seed, out_dir, Some(&noisy_train))?;
    let records = read_seed_records(out_dir, seed)?;

    let sigma2_noisy: Vec<f64> = records.iter().filter(|r| r.is_noisy).map(|r| r.sigma2_bar).collect();
    let sigma2_clean: Vec<f64> = records.iter().filter(|r| !r.is_noisy).map(|r| r.sigma2_bar).collect();
    let auroc = if sigma2_noisy.is_empty() {
        None
    } else {
        Some(noise_separation_auroc(&sigma2_noisy, &sigma2_clean)?)
    };
    let welch = if sigma2_noisy.len() >= 2 && sigma2_clean.len() >= 2 {
        welch_t_test(&sigma2_noisy, &sigma2_clean).ok()
    } else {
        None
    };
    let analysis = serde_json::json!({
        "fraction": fraction,
        "shift": shift,
        "seed": seed,
        "n_noisy": sigma2_noisy.len(),
        "n_clean": sigma2_clean.len(),
        "auroc": auroc,
        "note": if auroc.is_none() { "auroc not applicable: no noisy samples" } else { "" },
        "mean_sigma2_noisy": if sigma2_noisy.is_empty() { None } else { Some(mean(&sigma2_noisy)) },
        "mean_sigma2_clean": if sigma2_clean.is_empty() { None } else { Some(mean(&sigma2_clean)) },
        "welch": welch,
        "stopped_epoch": run.stopped_epoch,
        "steps_taken": run.steps_taken,
    });
    std::fs::write(
        out_dir.join("analysis.json"),
        serde_json::to_string_pretty(&analysis).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    write_panels(out_dir, &records, svg)?;

    match auroc {
        Some(a) => println!(
            "auroc = {}  mean_sigma2_noisy = {}  mean_sigma2_clean = {}",
            sig9(a),
            sig9(mean(&sigma2_noisy)),
            sig9(mean(&sigma2_clean))
        ),
        None => println!("auroc = n/a (no noisy samples)"),
    }
    Ok(())
}

/// The demo reads its own emitted per-sample CSV back rather than keeping a
/// second copy in memory, so the analysis is provably re-runnable from files.
fn read_seed_records(out_dir: &Path, seed: u64) -> Result<Vec<SampleRecord>> {
    let path = out_dir.join(format!("seed-{seed}")).join("samples.csv");
    let body = std::fs::read_to_string(&path)?;
    let mut records = Vec::new();
    for (i, line) in body.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::Data(format!("{}:{}: expected 6 columns", path.display(), i + 1)));
        }
        let f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("{}:{}: bad {what} {s:?}", path.display(), i + 1)))
        };
        records.push(SampleRecord {
            id: cols[0].to_string(),
            y: f(cols[1], "y")?,
            original_score: if cols[2].is_empty() { None } else { Some(f(cols[2], "original_score")?) },
            y_bar: f(cols[3], "y_bar")?,
            sigma2_bar: f(cols[4], "sigma2_bar")?,
            is_noisy: cols[5] == "true",
        });
    }
    Ok(records)
}

/// Four analysis panels as CSV (the contract) plus optional SVG renderings.
fn write_panels(out_dir: &Path, records: &[SampleRecord], svg: bool) -> Result<()> {
    use std::fmt::Write as _;

    // 1: absolute error vs predicted uncertainty
    let mut p1 = String::from("id\tabs_error\tsigma2_bar\tis_noisy\n");
    for r in records {
        writeln!(p1, "{}\t{}\t{}\t{}", r.id, sig9((r.y - r.y_bar).abs()), sig9(r.sigma2_bar), r.is_noisy).unwrap();
    }
    std::fs::write(out_dir.join("panel_error_vs_uncertainty.csv"), p1)?;

    // 2: prediction scatter with noisy flags
    let mut p2 = String::from("id\ty\ty_bar\tis_noisy\n");
    for r in records {
        writeln!(p2, "{}\t{}\t{}\t{}", r.id, sig9(r.y), sig9(r.y_bar), r.is_noisy).unwrap();
    }
    std::fs::write(out_dir.join("panel_prediction_scatter.csv"), p2)?;

    // 3: sigma2 histograms per subset over shared bins
    let all: Vec<f64> = records.iter().map(|r| r.sigma2_bar).collect();
    let bins = histogram(&all, 20);
    let mut p3 = String::from("bin_lo\tbin_hi\tcount_noisy\tcount_clean\n");
    for (lo, hi, _) in &bins {
        let in_bin = |r: &&SampleRecord| {
            r.sigma2_bar >= *lo && (r.sigma2_bar < *hi || (*hi == bins.last().unwrap().1 && r.sigma2_bar <= *hi))
        };
        let noisy = records.iter().filter(|r| r.is_noisy).filter(in_bin).count();
        let clean = records.iter().filter(|r| !r.is_noisy).filter(in_bin).count();
        writeln!(p3, "{}\t{}\t{noisy}\t{clean}", sig9(*lo), sig9(*hi)).unwrap();
    }
    std::fs::write(out_dir.join("panel_sigma2_hist.csv"), p3)?;

    // 4: sigma2 against the noisy flag
    let mut p4 = String::from("id\tis_noisy\tsigma2_bar\n");
    for r in records {
        writeln!(p4, "{}\t{}\t{}", r.id, r.is_noisy, sig9(r.sigma2_bar)).unwrap();
    }
    std::fs::write(out_dir.join("panel_sigma2_by_flag.csv"), p4)?;

    if svg {
        let split = |f: &dyn Fn(&SampleRecord) -> (f64, f64)| {
            let clean: Vec<(f64, f64)> = records.iter().filter(|r| !r.is_noisy).map(f).collect();
            let noisy: Vec<(f64, f64)> = records.iter().filter(|r| r.is_noisy).map(f).collect();
            (clean, noisy)
        };
        let (c, n) = split(&|r| ((r.y - r.y_bar).abs(), r.sigma2_bar));
        scatter_svg(
            &out_dir.join("panel_error_vs_uncertainty.svg"),
            "absolute error vs predicted variance",
            "|y - y_bar|",
            "sigma2_bar",
            &c,
            &n,
        )?;
        let (c, n) = split(&|r| (r.y, r.y_bar));
        scatter_svg(
            &out_dir.join("panel_prediction_scatter.svg"),
            "predictions vs labels",
            "y",
            "y_bar",
            &c,
            &n,
        )?;
        let (c, n) = split(&|r| (if r.is_noisy { 1.0 } else { 0.0 }, r.sigma2_bar));
        scatter_svg(
            &out_dir.join("panel_sigma2_by_flag.svg"),
            "predicted variance by noisy flag",
            "is_noisy",
            "sigma2_bar",
            &c,
            &n,
        )?;
        // histogram panel as bin-center points, counts on y
        let noisy_pts: Vec<(f64, f64)> = bins
            .iter()
            .map(|(lo, hi, _)| {
                let c = records
                    .iter()
                    .filter(|r| r.is_noisy && r.sigma2_bar >= *lo && r.sigma2_bar < *hi)
                    .count();
                (0.5 * (lo + hi), c as f64)
            })
            .collect();
        let clean_pts: Vec<(f64, f64)> = bins
            .iter()
            .map(|(lo, hi, _)| {
                let c = records
                    .iter()
                    .filter(|r| !r.is_noisy && r.sigma2_bar >= *lo && r.sigma2_bar < *hi)
                    .count();
                (0.5 * (lo + hi), c as f64)
            })
            .collect();
        scatter_svg(
            &out_dir.join("panel_sigma2_hist.svg"),
            "predicted variance histogram",
            "sigma2_bar (bin center)",
            "count",
            &clean_pts,
            &noisy_pts,
        )?;
    }
    Ok(())
}

/// Seeded uniform random search over (alpha, lambda1, lambda2); each trial
/// trains once and is scored by best validation CCC.
#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    cfg: &FullConfig,
    data_dir: &Path,
    trials: usize,
    seed: u64,
    alphas: &[f64],
    l1_range: (f64, f64),
    l2_range: (f64, f64),
    prune: bool,
    out_dir: &Path,
) -> Result<()> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    if alphas.is_empty() {
        return Err(Error::Config("empty alpha set: search space is empty".into()));
    }
    for (name, (lo, hi)) in [("lambda1", l1_range), ("lambda2", l2_range)] {
        if !(hi >= lo) {
            return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")));
        }
    }
    let ds = load_dataset(data_dir, None)?;
    create_run_dir(out_dir)?;
    RunManifest::new("sweep", cfg, &[seed], &dataset_paths(data_dir)).write(out_dir)?;
    let tokenizer = HashedTokenizer::new(cfg.encoder.vocab_size)?;

    struct Trial {
        alpha: f64,
        lambda1: f64,
        lambda2: f64,
        val_ccc: f64,
        epoch5_ccc: Option<f64>,
        pruned: bool,
    }
    let mut log_rows: Vec<Trial> = Vec::with_capacity(trials);
    let mut best: Option<usize> = None;
    // epoch-5 CCCs of completed trials, the pruning reference
    let mut epoch5_done: Vec<f64> = Vec::new();

    for t in 0..trials {
        let draws = RngStream::root(seed).descend(&[DOMAIN_SWEEP, t as u64]);
        let pick = (draws.child(0).uniform() * alphas.len() as f64) as usize;
        let alpha = alphas[pick.min(alphas.len() - 1)];
        let lambda1 = l1_range.0 + (l1_range.1 - l1_range.0) * draws.child(1).uniform();
        let lambda2 = l2_range.0 + (l2_range.1 - l2_range.0) * draws.child(2).uniform();
        let mut trial_cfg = cfg.clone();
        trial_cfg.train.weights.alpha = alpha;
        trial_cfg.train.weights.lambda1 = lambda1;
        trial_cfg.train.weights.lambda2 = lambda2;

        use std::cell::RefCell;
        let epoch5: RefCell<Option<f64>> = RefCell::new(None);
        let median_ref = median(&epoch5_done);
        let hook = |epoch: usize, ccc: f64| -> bool {
            if epoch == 5 {
                *epoch5.borrow_mut() = Some(ccc);
                if prune {
                    if let Some(m) = median_ref {
                        return ccc < m;
                    }
                }
            }
            false
        };
        let mut model = Model::new(trial_cfg.encoder.clone(), RngStream::root(seed).child(DOMAIN_INIT))?;
        let run = train(
            &mut model,
            &tokenizer,
            &ds.train,
            &ds.validation,
            (ds.label_min, ds.label_max),
            &trial_cfg.train,
            seed,
            Some(&hook),
        )?;
        let epoch5_ccc = *epoch5.borrow();
        if !run.pruned {
            if let Some(c) = epoch5_ccc {
                epoch5_done.push(c);
            }
            if best.map(|b| run.best_val_ccc > log_rows[b].val_ccc).unwrap_or(true) {
                best = Some(t);
            }
        }
        log::info!(
            "trial {t}: alpha {alpha}, lambda1 {lambda1:.4}, lambda2 {lambda2:.4} -> ccc {:.4}{}",
            run.best_val_ccc,
            if run.pruned { " (pruned)" } else { "" }
        );
        log_rows.push(Trial {
            alpha,
            lambda1,
            lambda2,
            val_ccc: run.best_val_ccc,
            epoch5_ccc,
            pruned: run.pruned,
        });
    }

    let mut csv = String::from("trial\talpha\tlambda1\tlambda2\tval_ccc\tepoch5_ccc\tpruned\n");
    for (t, row) in log_rows.iter().enumerate() {
        csv.push_str(&format!(
            "{t}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            sig9(row.alpha),
            sig9(row.lambda1),
            sig9(row.lambda2),
            sig9(row.val_ccc),
            row.epoch5_ccc.map(sig9).unwrap_or_default(),
            row.pruned
        ));
    }
    std::fs::write(out_dir.join("trials.csv"), csv)?;

    let best = best.ok_or_else(|| Error::Config("every trial was pruned; nothing to select".into()))?;
    let row = &log_rows[best];
    let mut best_cfg = cfg.clone();
    best_cfg.train.weights.alpha = row.alpha;
    best_cfg.train.weights.lambda1 = row.lambda1;
    best_cfg.train.weights.lambda2 = row.lambda2;
    std::fs::write(out_dir.join("best_config.cfg"), best_cfg.to_flat())?;
    let best_json = serde_json::json!({
        "trial": best,
        "alpha": row.alpha,
        "lambda1": row.lambda1,
        "lambda2": row.lambda2,
        "val_ccc": row.val_ccc,
    });
    std::fs::write(
        out_dir.join("best.json"),
        serde_json::to_string_pretty(&best_json).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    println!(
        "best trial {best}: alpha {} lambda1 {} lambda2 {} val_ccc {}",
        sig9(row.alpha),
        sig9(row.lambda1),
        sig9(row.lambda2),
        sig9(row.val_ccc)
    );
    Ok(())
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("non-finite ccc"));
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Write a synthetic dataset as the three split files `train` expects.
pub fn cmd_gen_data(synth: &SynthConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let ds = generate(synth, RngStream::root(seed).child(DOMAIN_SYNTH))?;
    std::fs::create_dir_all(out_dir)?;
    save_split(&out_dir.join("train.tsv"), &ds.train)?;
    save_split(&out_dir.join("validation.tsv"), &ds.validation)?;
    save_split(&out_dir.join("test.tsv"), &ds.test)?;
    println!(
        "wrote {} train / {} validation / {} test pairs to {}",
        ds.train.len(),
        ds.validation.len(),
        ds.test.len(),
        out_dir.display()
    );
    Ok(())
}
