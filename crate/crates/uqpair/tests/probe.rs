//! Throwaway tuning probes. Not part of the suite; run explicitly with
//! `cargo test --test probe -- --ignored --nocapture <name>`.

use uqpair::data::{inject_noise, HashedTokenizer};
use uqpair::losses::LossWeights;
use uqpair::metrics::noise_separation_auroc;
use uqpair::model::Model;
use uqpair::rng::{RngStream, DOMAIN_INIT, DOMAIN_NOISE, DOMAIN_SYNTH};
use uqpair::synth::{generate, SynthConfig};
use uqpair::trainer::{evaluate_split, train, TrainConfig};

fn synth_cfg(lexicon: usize) -> SynthConfig {
    SynthConfig {
        n_train: 1000,
        n_val: 200,
        n_test: 200,
        words_per_text: 10,
        lexicon,
        tail_words: 0,
        tail_lexicon: 0,
        noise_sd: 0.2,
        noise_tail_slope: 0.0,
        label_min: 1.0,
        label_max: 7.0,
    }
}

fn synth_cfg_tails(lexicon: usize, tails: usize, pool: usize) -> SynthConfig {
    SynthConfig { tail_words: tails, tail_lexicon: pool, ..synth_cfg(lexicon) }
}

fn encoder(vocab: usize) -> uqpair::EncoderConfig {
    let d: usize = std::env::var("D_WIDTH").map_or(48, |v| v.parse().unwrap());
    uqpair::EncoderConfig {
        vocab_size: vocab,
        d,
        depth: 2,
        heads: 8,
        dropout_rate: 0.1,
        max_len: 32,
        var_floor: 1e-8,
    }
}

fn base_cfg() -> TrainConfig {
    TrainConfig {
        lr: 5e-3,
        weight_decay: 0.2,
        batch_size: 16,
        max_steps: 4000,
        warmup_frac: 0.03,
        min_epochs: 5,
        patience: 8,
        seeds: vec![0],
        t_passes: 1,
        mc_dropout: false,
        grad_clip: 1.0,
        weights: LossWeights::default(),
        ..TrainConfig::default()
    }
}

fn pretrain_on(scfg: SynthConfig, vocab: usize, n: usize, steps: usize, path: &str) {
    pretrain_from(None, scfg, vocab, n, steps, path);
}

fn pretrain_from(
    warm: Option<&str>,
    scfg: SynthConfig,
    vocab: usize,
    n: usize,
    steps: usize,
    path: &str,
) {
    let lexicon = scfg.lexicon;
    let corpus = generate(
        &SynthConfig { n_train: n, ..scfg },
        RngStream::root(13).child(DOMAIN_SYNTH),
    )
    .unwrap();
    let tok = HashedTokenizer::new(vocab).unwrap();
    let mut model = match warm {
        Some(p) => Model::load(std::path::Path::new(p)).unwrap(),
        None => Model::new(encoder(vocab), RngStream::root(0xAE).child(DOMAIN_INIT)).unwrap(),
    };
    let cfg = TrainConfig { max_steps: steps, ..base_cfg() };
    let run = train(
        &mut model,
        &tok,
        &corpus.train,
        &corpus.validation,
        (1.0, 7.0),
        &cfg,
        0xAE,
        None,
    )
    .unwrap();
    println!(
        "pretrain lex{lexicon}: best val ccc {:.3} at epoch {}/{} ({} steps)",
        run.best_val_ccc, run.best_epoch, run.stopped_epoch, run.steps_taken
    );
    if scfg.noise_tail_slope > 0.0 {
        // did the variance head learn to read the tail count?
        let (_, records) = evaluate_split(
            &model,
            &corpus.validation,
            &tok,
            1,
            false,
            RngStream::root(77).child(1),
        )
        .unwrap();
        let tails = |t: &str| {
            t.split(' ').filter(|w| w[1..].parse::<usize>().unwrap() >= lexicon).count()
        };
        let mut sums = vec![0.0f64; 2 * scfg.tail_words + 1];
        let mut counts = vec![0usize; 2 * scfg.tail_words + 1];
        for (p, r) in corpus.validation.iter().zip(&records) {
            let k = tails(&p.text_a) + tails(&p.text_b);
            sums[k] += r.sigma2_bar;
            counts[k] += 1;
        }
        let by_k: Vec<String> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| format!("{:.3}", if c > 0 { s / c as f64 } else { f64::NAN }))
            .collect();
        println!("  mean sigma2 by tail count: {}", by_k.join(" "));
    }
    model.save(std::path::Path::new(path)).unwrap();
}

#[test]
#[ignore]
fn probe_pretrain_lex64() {
    pretrain_on(synth_cfg(64), 512, 4000, 4000, "/tmp/pre64.bin");
}

#[test]
#[ignore]
fn probe_pretrain_lex4000() {
    pretrain_on(synth_cfg(4000), 4096, 16000, 10000, "/tmp/pre4000.bin");
}

#[test]
#[ignore]
fn probe_pretrain_tails() {
    pretrain_on(synth_cfg_tails(64, 2, 8000), 4096, 6000, 5000, "/tmp/pretail.bin");
}

#[test]
#[ignore]
fn probe_pretrain_core() {
    pretrain_on(synth_cfg(64), 4096, 4000, 4000, "/tmp/precore.bin");
}

#[test]
#[ignore]
fn probe_pretrain_d96() {
    pretrain_on(synth_cfg(64), 4096, 4000, 2500, "/tmp/pre96.bin");
}

fn hetero_cfg(slope: f64) -> SynthConfig {
    SynthConfig { noise_tail_slope: slope, ..synth_cfg_tails(64, 2, 8000) }
}

#[test]
#[ignore]
fn probe_pretrain_hetero() {
    pretrain_on(hetero_cfg(2.5), 4096, 6000, 5000, "/tmp/prehet.bin");
}

#[test]
#[ignore]
fn probe_pretrain_hetero_warm() {
    pretrain_from(Some("/tmp/precore.bin"), hetero_cfg(2.5), 4096, 6000, 2500, "/tmp/prehetwarm.bin");
}

#[test]
#[ignore]
fn probe_ft_hetero() {
    ft_trajectory_on("/tmp/prehet.bin", synth_cfg_tails(64, 2, 8000), 4096, 5e-4, 2.0, 10);
}

#[test]
#[ignore]
fn probe_ft_hetero_warm() {
    ft_trajectory_on("/tmp/prehetwarm.bin", synth_cfg_tails(64, 2, 8000), 4096, 5e-4, 2.0, 10);
}

#[test]
#[ignore]
fn probe_ft_d96() {
    let sc = || synth_cfg_tails(64, 2, 8000);
    let w = LossWeights { lambda1: 2.0, ..LossWeights::default() };
    ft_trajectory_full("/tmp/pre96.bin", sc(), 4096, 5e-4, w.clone(), 10, 16, false);
    ft_trajectory_full("/tmp/pre96.bin", sc(), 4096, 1e-3, w, 10, 16, false);
}

#[test]
#[ignore]
fn probe_ft_core_tails() {
    for (lr, l1) in [(5e-4, 2.0), (5e-4, 9.0)] {
        ft_trajectory_on("/tmp/precore.bin", synth_cfg_tails(64, 2, 8000), 4096, lr, l1, 10);
    }
}

#[test]
#[ignore]
fn probe_head_norms() {
    let m = Model::load(std::path::Path::new("/tmp/precore.bin")).unwrap();
    let d = m.cfg().d;
    let p = m.params();
    let n = p.len();
    let w_mean = &p[n - 2 * (d + 1)..n - (d + 2)];
    let b_mean = p[n - (d + 2)];
    let w_var = &p[n - (d + 1)..n - 1];
    let b_var = p[n - 1];
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!(
        "w_mean {:.4} b_mean {b_mean:.4} w_var {:.4} b_var {b_var:.4} (init scale {:.4})",
        norm(w_mean),
        norm(w_var),
        (d as f64 / 3.0).sqrt() / (d as f64).sqrt()
    );
}

#[test]
#[ignore]
fn probe_ft_fresh_heads() {
    let sc = || synth_cfg_tails(64, 2, 8000);
    let w = |l1: f64| LossWeights { lambda1: l1, ..LossWeights::default() };
    ft_trajectory_full("/tmp/precore.bin", sc(), 4096, 5e-4, w(2.0), 12, 16, true);
    ft_trajectory_full("/tmp/precore.bin", sc(), 4096, 1e-3, w(2.0), 12, 16, true);
}

#[test]
#[ignore]
fn probe_ft_var_gain() {
    let sc = || synth_cfg_tails(64, 2, 8000);
    let w = LossWeights { lambda1: 2.0, ..LossWeights::default() };
    ft_trajectory_full("/tmp/precore.bin", sc(), 4096, 5e-4, w, 12, 16, false);
}

#[test]
#[ignore]
fn probe_ft_hot() {
    let sc = || synth_cfg_tails(64, 2, 8000);
    let w = LossWeights { lambda1: 2.0, ..LossWeights::default() };
    ft_trajectory_full("/tmp/precore.bin", sc(), 4096, 2e-3, w.clone(), 12, 16, false);
    ft_trajectory_full("/tmp/precore.bin", sc(), 4096, 5e-3, w, 12, 16, false);
}

#[test]
#[ignore]
fn probe_ft_long() {
    let sc = || synth_cfg_tails(64, 2, 8000);
    let w = |l1: f64| LossWeights { lambda1: l1, ..LossWeights::default() };
    ft_trajectory_full("/tmp/precore.bin", sc(), 4096, 1e-3, w(0.25), 20, 16, false);
}

#[test]
#[ignore]
fn probe_ft_beta() {
    let sc = || synth_cfg_tails(64, 2, 8000);
    let w = |beta: f64, lambda2: f64| LossWeights {
        beta,
        lambda1: 2.0,
        lambda2,
        ..LossWeights::default()
    };
    ft_trajectory_w("/tmp/precore.bin", sc(), 4096, 5e-4, w(0.25, 1.0), 10, 16);
    ft_trajectory_w("/tmp/precore.bin", sc(), 4096, 5e-4, w(0.0, 1.0), 10, 16);
    ft_trajectory_w("/tmp/precore.bin", sc(), 4096, 5e-4, w(0.5, 0.0), 10, 16);
}

#[test]
#[ignore]
fn probe_ft_tails3() {
    ft_trajectory_cfg("/tmp/precore.bin", synth_cfg_tails(64, 3, 8000), 4096, 5e-4, 2.0, 10, 16);
    ft_trajectory_cfg("/tmp/precore.bin", synth_cfg_tails(64, 3, 8000), 4096, 5e-4, 2.0, 10, 8);
    ft_trajectory_cfg("/tmp/precore.bin", synth_cfg_tails(64, 3, 8000), 4096, 1e-3, 2.0, 10, 16);
}

/// Epoch-by-epoch fine-tune on noisy data, reporting val CCC and the
/// sigma2 noise AUROC on the training split after every epoch.
fn ft_trajectory(pre_path: &str, lexicon: usize, vocab: usize, lr: f64, lambda1: f64, epochs: usize) {
    ft_trajectory_on(pre_path, synth_cfg(lexicon), vocab, lr, lambda1, epochs);
}

fn ft_trajectory_on(
    pre_path: &str,
    scfg: SynthConfig,
    vocab: usize,
    lr: f64,
    lambda1: f64,
    epochs: usize,
) {
    ft_trajectory_cfg(pre_path, scfg, vocab, lr, lambda1, epochs, 16);
}

fn ft_trajectory_cfg(
    pre_path: &str,
    scfg: SynthConfig,
    vocab: usize,
    lr: f64,
    lambda1: f64,
    epochs: usize,
    batch: usize,
) {
    let w = LossWeights { lambda1, ..LossWeights::default() };
    ft_trajectory_w(pre_path, scfg, vocab, lr, w, epochs, batch);
}

fn ft_trajectory_w(
    pre_path: &str,
    scfg: SynthConfig,
    vocab: usize,
    lr: f64,
    w: LossWeights,
    epochs: usize,
    batch: usize,
) {
    ft_trajectory_full(pre_path, scfg, vocab, lr, w, epochs, batch, false);
}

#[allow(clippy::too_many_arguments)]
fn ft_trajectory_full(
    pre_path: &str,
    scfg: SynthConfig,
    vocab: usize,
    lr: f64,
    w: LossWeights,
    epochs: usize,
    batch: usize,
    fresh_heads: bool,
) {
    let lexicon = scfg.lexicon;
    let ds = generate(&scfg, RngStream::root(7).child(DOMAIN_SYNTH)).unwrap();
    let noisy_train = inject_noise(
        &ds.train,
        0.30,
        3.0,
        (1.0, 7.0),
        RngStream::root(7).child(DOMAIN_NOISE),
    )
    .unwrap();
    let tok = HashedTokenizer::new(vocab).unwrap();
    let mut model = Model::load(std::path::Path::new(pre_path)).unwrap();
    if fresh_heads {
        model.reset_heads(RngStream::root(0xF0).child(DOMAIN_INIT));
    }
    if let Ok(g) = std::env::var("VAR_GAIN") {
        let gain: f64 = g.parse().unwrap();
        let d = model.cfg().d;
        let n = model.num_params();
        if gain > 0.0 {
            use rand::Rng;
            let mut rng = RngStream::root(0xF1).child(DOMAIN_INIT).rng();
            let bound = gain / (d as f64).sqrt();
            let p = model.params_mut();
            for v in &mut p[n - (d + 1)..n - 1] {
                *v = rng.gen_range(-bound..=bound);
            }
        } else {
            let p = model.params_mut();
            for v in &mut p[n - (d + 1)..n - 1] {
                *v *= -gain;
            }
        }
        let p = model.params();
        let nw = p[n - (d + 1)..n - 1].iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("var head norm set to {nw:.3} (gain {gain})");
    }
    let steps_per_epoch = noisy_train.len() / batch;
    println!(
        "ft lex{lexicon} lr {lr} lambda1 {} lambda2 {} beta {} batch {batch} fresh_heads {fresh_heads}",
        w.lambda1, w.lambda2, w.beta
    );
    for ep in 1..=epochs {
        let cfg = TrainConfig {
            lr,
            batch_size: batch,
            max_steps: steps_per_epoch,
            warmup_frac: 0.01,
            min_epochs: 1,
            patience: 999,
            t_passes: 2,
            mc_dropout: true,
            weights: w.clone(),
            ..base_cfg()
        };
        let run = train(
            &mut model,
            &tok,
            &noisy_train,
            &ds.validation,
            (1.0, 7.0),
            &cfg,
            1000 + ep as u64,
            None,
        )
        .unwrap();
        let mut line = format!("  ep {ep}: val ccc {:.3}", run.best_val_ccc);
        let eval_ts: &[usize] =
            if std::env::var("EVAL_T").is_ok() { &[4, 16, 64] } else { &[4] };
        for &t in eval_ts {
            let (_, records) = evaluate_split(
                &model,
                &noisy_train,
                &tok,
                t,
                true,
                RngStream::root(55).child(ep as u64),
            )
            .unwrap();
            let noisy: Vec<f64> =
                records.iter().filter(|r| r.is_noisy).map(|r| r.sigma2_bar).collect();
            let clean: Vec<f64> =
                records.iter().filter(|r| !r.is_noisy).map(|r| r.sigma2_bar).collect();
            let auroc = noise_separation_auroc(&noisy, &clean).unwrap();
            let mn = noisy.iter().sum::<f64>() / noisy.len() as f64;
            let mc = clean.iter().sum::<f64>() / clean.len() as f64;
            line += &format!(", T{t} auroc {auroc:.3} s2 {mn:.3}/{mc:.3}");
        }
        println!("{line}");
    }
}

#[test]
#[ignore]
fn probe_ft_lex64() {
    ft_trajectory("/tmp/pre64.bin", 64, 512, 5e-4, 9.0, 12);
}

#[test]
#[ignore]
fn probe_ft_lex4000() {
    ft_trajectory("/tmp/pre4000.bin", 4000, 4096, 5e-4, 9.0, 12);
}

#[test]
#[ignore]
fn probe_ft_grid() {
    for (lr, l1) in [(5e-4, 3.0), (5e-4, 27.0), (1e-3, 9.0), (2e-4, 9.0)] {
        ft_trajectory("/tmp/pre4000.bin", 4000, 4096, lr, l1, 8);
    }
}

#[test]
#[ignore]
fn probe_ft_tails() {
    for (lr, l1) in [(5e-4, 2.0), (5e-4, 9.0)] {
        ft_trajectory_on("/tmp/pretail.bin", synth_cfg_tails(64, 2, 8000), 4096, lr, l1, 10);
    }
}
