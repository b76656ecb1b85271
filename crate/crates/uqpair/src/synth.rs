//! Synthetic paired-text regression data. Each pair shares a controlled
//! number of lexicon words and its score is an affine map of that overlap
//! plus Gaussian noise, so word overlap is the learnable signal. Texts can
//! also carry rare tail words that never affect the score; they individuate
//! examples the way rare tokens do in natural sentences.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplits, ExamplePair};
use crate::error::Error;
use crate::rng::{normal, RngStream};
use crate::Result;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Words per text; overlap ranges over 0..=(words_per_text - tail_words).
    pub words_per_text: usize,
    /// Distinct lexicon words available for the scored overlap.
    pub lexicon: usize,
    /// Words per text drawn from the tail pool instead of the core lexicon.
    /// They carry no score signal and never overlap within a pair.
    pub tail_words: usize,
    /// Size of the tail pool; indices continue past the core lexicon.
    pub tail_lexicon: usize,
    /// Standard deviation of the additive score noise.
    pub noise_sd: f64,
    /// Heteroscedastic option: when > 0, each text draws 0..=tail_words
    /// tails instead of exactly tail_words, and the pair's noise sd becomes
    /// noise_sd * (1 + slope * total tails). The noise level is then
    /// readable from the text, giving the variance head a learnable signal.
    pub noise_tail_slope: f64,
    pub label_min: f64,
    pub label_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 1000,
            n_val: 200,
            n_test: 200,
            words_per_text: 10,
            lexicon: 4000,
            tail_words: 0,
            tail_lexicon: 0,
            noise_sd: 0.2,
            noise_tail_slope: 0.0,
            label_min: 1.0,
            label_max: 7.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.words_per_text < 1 {
            return Err(Error::Config("words_per_text must be >= 1".into()));
        }
        if self.tail_words >= self.words_per_text {
            return Err(Error::Config(format!(
                "tail_words of {} leaves no core words in texts of {}",
                self.tail_words, self.words_per_text
            )));
        }
        if self.tail_words > 0 && self.tail_lexicon < 2 * self.tail_words {
            return Err(Error::Config(format!(
                "tail pool of {} cannot supply two disjoint sets of {} words",
                self.tail_lexicon, self.tail_words
            )));
        }
        let core = self.words_per_text - self.tail_words;
        if self.lexicon < 2 * core {
            return Err(Error::Config(format!(
                "lexicon of {} cannot supply two disjoint texts of {} core words",
                self.lexicon, core
            )));
        }
        if !(self.label_max > self.label_min) {
            return Err(Error::Config(format!(
                "label bounds [{}, {}] are degenerate",
                self.label_min, self.label_max
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        if !(self.noise_tail_slope >= 0.0) {
            return Err(Error::Config(format!(
                "noise_tail_slope must be >= 0, got {}",
                self.noise_tail_slope
            )));
        }
        if self.noise_tail_slope > 0.0 && self.tail_words == 0 {
            return Err(Error::Config(
                "noise_tail_slope > 0 needs tail_words > 0 to carry the signal".into(),
            ));
        }
        if self.n_train < 1 || self.n_val < 2 || self.n_test < 2 {
            return Err(Error::Config(format!(
                "split sizes {}/{}/{} too small (train >= 1, validation and test >= 2)",
                self.n_train, self.n_val, self.n_test
            )));
        }
        Ok(())
    }
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

fn one_pair(cfg: &SynthConfig, id: String, rng: &mut ChaCha8Rng) -> ExamplePair {
    let core = cfg.words_per_text - cfg.tail_words;
    // 2*core distinct lexicon indices: first `core` form text_a, text_b
    // reuses the first `shared` of them and draws the rest from the second
    // block, so the overlap count is exact by construction
    let idx = rand::seq::index::sample(rng, cfg.lexicon, 2 * core).into_vec();
    let u: f64 = rand::Rng::gen(rng);
    let shared = (u * core as f64).round() as usize;
    let mut a_idx: Vec<usize> = idx[..core].to_vec();
    let mut b_idx: Vec<usize> = idx[..shared]
        .iter()
        .chain(&idx[core..2 * core - shared])
        .copied()
        .collect();
    // with a slope the tail counts vary per text and scale the noise,
    // so the noise level is legible from the tokens themselves
    let (k_a, k_b) = if cfg.noise_tail_slope > 0.0 {
        (
            rand::Rng::gen_range(rng, 0..=cfg.tail_words),
            rand::Rng::gen_range(rng, 0..=cfg.tail_words),
        )
    } else {
        (cfg.tail_words, cfg.tail_words)
    };
    if k_a + k_b > 0 {
        // disjoint tail draws keep the pair's overlap purely core
        let tail = rand::seq::index::sample(rng, cfg.tail_lexicon, k_a + k_b).into_vec();
        a_idx.extend(tail[..k_a].iter().map(|&t| cfg.lexicon + t));
        b_idx.extend(tail[k_a..].iter().map(|&t| cfg.lexicon + t));
    }
    let mut a_words: Vec<String> = a_idx.iter().map(|&i| word(i)).collect();
    let mut b_words: Vec<String> = b_idx.iter().map(|&i| word(i)).collect();
    a_words.shuffle(rng);
    b_words.shuffle(rng);
    let span = cfg.label_max - cfg.label_min;
    let sd = cfg.noise_sd * (1.0 + cfg.noise_tail_slope * (k_a + k_b) as f64);
    let score = (cfg.label_min + span * shared as f64 / core as f64 + sd * normal(rng))
        .clamp(cfg.label_min, cfg.label_max);
    ExamplePair::new(id, a_words.join(" "), b_words.join(" "), score)
}

/// Generate the three splits deterministically from `stream`.
pub fn generate(cfg: &SynthConfig, stream: RngStream) -> Result<DatasetSplits> {
    cfg.validate()?;
    let split = |tag: u64, name: &str, n: usize| -> Vec<ExamplePair> {
        (0..n)
            .map(|i| {
                let mut rng = stream.descend(&[tag, i as u64]).rng();
                one_pair(cfg, format!("{name}-{i:04}"), &mut rng)
            })
            .collect()
    };
    let splits = DatasetSplits {
        train: split(0, "train", cfg.n_train),
        validation: split(1, "validation", cfg.n_val),
        test: split(2, "test", cfg.n_test),
        label_min: cfg.label_min,
        label_max: cfg.label_max,
    };
    splits.validate()?;
    Ok(splits)
}
