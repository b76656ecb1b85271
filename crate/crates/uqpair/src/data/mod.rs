//! Dataset ingestion, label-noise injection, and augmentation.
//!
//! Files are UTF-8 tab-separated with a header `id  text_a  text_b  score`
//! (noisy exports add `is_noisy` and `original_score`), one file per split.
//! Loading validates scores against the label bounds and rejects duplicate
//! ids with row-level diagnostics.

mod tokenizer;

pub use tokenizer::{
    tokenize_pair, truncate_tokenized, HashedTokenizer, TokenizedPair, Tokenizer, CLS_ID,
    MIN_SEQ_LEN, PAD_ID, RESERVED_IDS, SEP_ID,
};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::RngStream;
use crate::Result;

/// One scored text pair. `is_noisy` is only ever set by noise injection,
/// which also records the pre-shift score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub id: String,
    pub text_a: String,
    pub text_b: String,
    pub score: f64,
    #[serde(default)]
    pub is_noisy: bool,
    #[serde(default)]
    pub original_score: Option<f64>,
}

impl ExamplePair {
    pub fn new(id: impl Into<String>, text_a: impl Into<String>, text_b: impl Into<String>, score: f64) -> Self {
        ExamplePair {
            id: id.into(),
            text_a: text_a.into(),
            text_b: text_b.into(),
            score,
            is_noisy: false,
            original_score: None,
        }
    }
}

/// The three predefined splits plus the score bounds used for rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<ExamplePair>,
    pub validation: Vec<ExamplePair>,
    pub test: Vec<ExamplePair>,
    pub label_min: f64,
    pub label_max: f64,
}

impl DatasetSplits {
    /// Unique ids within each split and across splits; scores in bounds.
    pub fn validate(&self) -> Result<()> {
        if !(self.label_max > self.label_min) {
            return Err(Error::Data(format!(
                "degenerate label bounds [{}, {}]",
                self.label_min, self.label_max
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, split) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for p in split {
                if !seen.insert(p.id.clone()) {
                    return Err(Error::Data(format!(
                        "duplicate id {:?} (second occurrence in {name})",
                        p.id
                    )));
                }
                if p.score < self.label_min || p.score > self.label_max {
                    return Err(Error::Data(format!(
                        "{name} row id {:?}: score {} outside [{}, {}]",
                        p.id, p.score, self.label_min, self.label_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Read one split file. All malformed rows are reported together.
pub fn load_split(path: &Path) -> Result<Vec<ExamplePair>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for (i, record) in reader.deserialize::<ExamplePair>().enumerate() {
        // +2: header occupies line 1
        let line = i + 2;
        match record {
            Ok(p) => {
                if !p.score.is_finite() {
                    bad.push(format!("line {line}: non-finite score"));
                } else {
                    rows.push(p);
                }
            }
            Err(e) => bad.push(format!("line {line}: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Data(format!(
            "{}: {} malformed row(s): {}",
            path.display(),
            bad.len(),
            bad.join("; ")
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for p in &rows {
        if !seen.insert(&p.id) {
            return Err(Error::Data(format!(
                "{}: duplicate id {:?}",
                path.display(),
                p.id
            )));
        }
    }
    Ok(rows)
}

/// Write one split file, including the noise columns so a noisy export can
/// be reloaded and analyzed from files alone.
pub fn save_split(path: &Path, rows: &[ExamplePair]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    writer.flush()?;
    Ok(())
}

/// Load `train.tsv`, `validation.tsv`, `test.tsv` from a directory. Bounds
/// are taken from `bounds` when given, otherwise inferred as the min/max
/// score over all splits.
pub fn load_dataset(dir: &Path, bounds: Option<(f64, f64)>) -> Result<DatasetSplits> {
    let train = load_split(&dir.join("train.tsv"))?;
    let validation = load_split(&dir.join("validation.tsv"))?;
    let test = load_split(&dir.join("test.tsv"))?;
    let (label_min, label_max) = match bounds {
        Some(b) => b,
        None => {
            let all = train.iter().chain(&validation).chain(&test);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in all {
                lo = lo.min(p.score);
                hi = hi.max(p.score);
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Data("cannot infer bounds from empty dataset".into()));
            }
            (lo, hi)
        }
    };
    let splits = DatasetSplits { train, validation, test, label_min, label_max };
    splits.validate()?;
    Ok(splits)
}

/// Shift the scores of a seeded uniform sample of `floor(fraction * N)`
/// distinct rows by `+shift`, falling back to `-shift` when the raised
/// score would leave the bounds. Every shifted row gets `is_noisy` and its
/// original score recorded.
pub fn inject_noise(
    split: &[ExamplePair],
    fraction: f64,
    shift: f64,
    bounds: (f64, f64),
    stream: RngStream,
) -> Result<Vec<ExamplePair>> {
    let (lo, hi) = bounds;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must be in [0,1], got {fraction}")));
    }
    if !(shift > 0.0) {
        return Err(Error::invalid(format!("shift must be > 0, got {shift}")));
    }
    if shift > hi - lo {
        return Err(Error::invalid(format!(
            "shift {shift} exceeds the label span {}",
            hi - lo
        )));
    }
    let n_noisy = (fraction * split.len() as f64).floor() as usize;
    let mut rng = stream.rng();
    let chosen = rand::seq::index::sample(&mut rng, split.len(), n_noisy);
    let mut out = split.to_vec();
    for idx in chosen.iter() {
        let row = &mut out[idx];
        let raised = row.score + shift;
        let lowered = row.score - shift;
        let new_score = if raised <= hi {
            raised
        } else if lowered >= lo {
            lowered
        } else {
            return Err(Error::invalid(format!(
                "row id {:?}: neither {raised} nor {lowered} fits [{lo}, {hi}]",
                row.id
            )));
        };
        row.original_score = Some(row.score);
        row.score = new_score;
        row.is_noisy = true;
    }
    Ok(out)
}

/// Augmenter hook: maps (text, rate, rng) to a rewritten text.
pub type AugmentHook<'a> = &'a dyn Fn(&str, f64, &mut rand_chacha::ChaCha8Rng) -> Result<String>;

/// Seeded word dropout/swap. Each word is touched with probability `rate`;
/// touched words are dropped or swapped with their right neighbor (50/50).
/// At least one word always survives.
pub fn default_augmenter(text: &str, rate: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Result<String> {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Ok(text.to_string());
    }
    let mut i = 0;
    while i < words.len() {
        if rng.gen::<f64>() < rate {
            if rng.gen::<bool>() && i + 1 < words.len() {
                words.swap(i, i + 1);
                i += 2;
                continue;
            }
            if words.len() > 1 {
                words.remove(i);
                continue;
            }
        }
        i += 1;
    }
    Ok(words.join(" "))
}

/// Append one augmented copy per row, doubling the split. Labels and noise
/// flags are copied unchanged; copies get an `-aug` id suffix. Hook errors
/// carry the originating row id.
pub fn augment(
    split: &[ExamplePair],
    hook: AugmentHook,
    rate: f64,
    stream: RngStream,
) -> Result<Vec<ExamplePair>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("rate must be in [0,1], got {rate}")));
    }
    let mut out = Vec::with_capacity(split.len() * 2);
    out.extend_from_slice(split);
    for (i, row) in split.iter().enumerate() {
        let mut rng = stream.child(i as u64).rng();
        let text_a = hook(&row.text_a, rate, &mut rng)
            .map_err(|e| Error::Data(format!("augmenter failed on id {:?}: {e}", row.id)))?;
        let text_b = hook(&row.text_b, rate, &mut rng)
            .map_err(|e| Error::Data(format!("augmenter failed on id {:?}: {e}", row.id)))?;
        let mut copy = row.clone();
        copy.id = format!("{}-aug", row.id);
        copy.text_a = text_a;
        copy.text_b = text_b;
        out.push(copy);
    }
    Ok(out)
}
