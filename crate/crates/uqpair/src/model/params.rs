//! Flat parameter storage for the encoder and its two heads.
//!
//! All parameters live in one `Vec<f64>`; the layout maps named tensors to
//! index ranges. A flat buffer keeps optimizer state, gradient checks, and
//! checkpoints trivial: every parameter has exactly one index.

use std::ops::Range;

use rand::Rng;

use crate::error::Error;
use crate::rng::RngStream;
use crate::Result;

/// Feed-forward width as a multiple of the hidden width.
pub const FF_MULT: usize = 4;

/// Variance-head bias start value: softplus of it equals 1, keeping the
/// initial predicted variance well away from the floor.
pub const VAR_BIAS_INIT: f64 = 0.5413248546129181;

/// Architecture of the encoder and heads.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Hidden width.
    pub d: usize,
    /// Number of attention blocks.
    pub depth: usize,
    /// Attention heads per block; must divide `d`.
    pub heads: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    /// Additive floor under the softplus variance output.
    pub var_floor: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 512,
            d: 64,
            depth: 2,
            heads: 4,
            dropout_rate: 0.1,
            max_len: 256,
            var_floor: 1e-8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.depth < 1 || self.heads < 1 {
            return Err(Error::Config(format!(
                "d, depth, heads must be >= 1, got {}, {}, {}",
                self.d, self.depth, self.heads
            )));
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads {} must divide hidden width {}",
                self.heads, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if self.max_len < crate::data::MIN_SEQ_LEN {
            return Err(Error::Config(format!(
                "max_len {} below the minimum sequence length {}",
                self.max_len,
                crate::data::MIN_SEQ_LEN
            )));
        }
        if self.vocab_size <= crate::data::RESERVED_IDS as usize {
            return Err(Error::Config(format!("vocab_size {} too small", self.vocab_size)));
        }
        if !(self.var_floor > 0.0) {
            return Err(Error::Config(format!("var_floor must be > 0, got {}", self.var_floor)));
        }
        Ok(())
    }

    pub fn ff(&self) -> usize {
        FF_MULT * self.d
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Index ranges of one attention block's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Index ranges of every tensor in the flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub final_g: Range<usize>,
    pub final_b: Range<usize>,
    pub w_mean: Range<usize>,
    pub b_mean: Range<usize>,
    pub w_var: Range<usize>,
    pub b_var: Range<usize>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let d = cfg.d;
        let ff = cfg.ff();
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let tok_emb = take(cfg.vocab_size * d);
        let pos_emb = take(cfg.max_len * d);
        let blocks = (0..cfg.depth)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * ff),
                b1: take(ff),
                w2: take(ff * d),
                b2: take(d),
            })
            .collect();
        let final_g = take(d);
        let final_b = take(d);
        let w_mean = take(d);
        let b_mean = take(1);
        let w_var = take(d);
        let b_var = take(1);
        ParamLayout {
            tok_emb,
            pos_emb,
            blocks,
            final_g,
            final_b,
            w_mean,
            b_mean,
            w_var,
            b_var,
            total: at,
        }
    }
}

/// Fill a fresh parameter buffer: matrices symmetric uniform at 1/sqrt(fan_in),
/// norms at identity, biases at zero except the variance-head bias.
pub fn init_params(cfg: &EncoderConfig, layout: &ParamLayout, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    let mut p = vec![0.0; layout.total];
    let d = cfg.d;
    let ff = cfg.ff();
    let mut fill = |r: &Range<usize>, p: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut p[r.clone()] {
            *v = rng.gen_range(-bound..=bound);
        }
    };
    fill(&layout.tok_emb, &mut p, d);
    fill(&layout.pos_emb, &mut p, d);
    for b in &layout.blocks {
        p[b.ln1_g.clone()].fill(1.0);
        fill(&b.wq, &mut p, d);
        fill(&b.wk, &mut p, d);
        fill(&b.wv, &mut p, d);
        fill(&b.wo, &mut p, d);
        p[b.ln2_g.clone()].fill(1.0);
        fill(&b.w1, &mut p, d);
        fill(&b.w2, &mut p, ff);
    }
    p[layout.final_g.clone()].fill(1.0);
    fill(&layout.w_mean, &mut p, d);
    fill(&layout.w_var, &mut p, d);
    p[layout.b_var.start] = VAR_BIAS_INIT;
    p
}
