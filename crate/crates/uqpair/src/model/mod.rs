//! Probabilistic cross-encoder over joint text-pair sequences.
//!
//! One encoder consumes `[CLS, x1, SEP, SEP, x2, SEP]`; the CLS-position
//! representation feeds two linear heads, one for the predicted mean and one
//! for the predicted variance (softplus plus a strictly positive floor).
//! Segment mean vectors of the token representations give the cosine
//! similarity used by the alignment loss. Training gradients flow through
//! the mean of T stochastic passes, so the ensembled quantities, not the
//! individual passes, carry the objective.

mod encoder;
mod params;

pub use params::{EncoderConfig, VAR_BIAS_INIT};

use std::io::{Read as _, Write as _};
use std::ops::Range;
use std::path::Path;

use encoder::{encoder_backward, encoder_forward, ForwardCache};
use params::{init_params, ParamLayout};

use crate::data::{truncate_tokenized, TokenizedPair};
use crate::error::Error;
use crate::losses::{
    alignment_loss, alignment_loss_grad, beta_nll, beta_nll_grad, total_loss, variance_penalty,
    variance_penalty_grad, BatchTargets, LossParts, LossWeights,
};
use crate::rng::RngStream;
use crate::Result;

#[inline]
pub(crate) fn softplus(v: f64) -> f64 {
    // max(v,0) + ln(1+e^-|v|): no overflow for large |v|
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Predictions for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub y_hat: f64,
    /// Predicted variance, always >= the configured floor.
    pub sigma2: f64,
    /// Token representations, L x d row-major.
    pub h_z: Vec<f64>,
    /// CLS-position representation the heads consumed.
    pub h_pooled: Vec<f64>,
    /// Set when the input exceeded max_len and was shortened.
    pub truncated: bool,
}

/// Cosine similarity of the two segment-mean vectors of `h_z` (L x d).
/// A zero-norm mean yields `(0.0, true)`: neutral similarity, flagged, and
/// treated as gradient-free by the training path.
pub fn segment_similarity(h_z: &[f64], d: usize, seg_a: &Range<usize>, seg_b: &Range<usize>) -> (f64, bool) {
    let mean_of = |seg: &Range<usize>| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for i in seg.clone() {
            for j in 0..d {
                m[j] += h_z[i * d + j];
            }
        }
        let n = seg.len() as f64;
        for v in &mut m {
            *v /= n;
        }
        m
    };
    let u = mean_of(seg_a);
    let w = mean_of(seg_b);
    let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nu == 0.0 || nw == 0.0 {
        return (0.0, true);
    }
    let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
    ((dot / (nu * nw)).clamp(-1.0, 1.0), false)
}

/// Gradient of the segment cosine w.r.t. every row of `h_z`, scaled by the
/// upstream `d_s`, accumulated into `d_hz`. Zero-norm segments contribute
/// nothing, matching the flagged forward value.
fn segment_similarity_backward(
    h_z: &[f64],
    d: usize,
    seg_a: &Range<usize>,
    seg_b: &Range<usize>,
    d_s: f64,
    d_hz: &mut [f64],
) {
    let mean_of = |seg: &Range<usize>| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for i in seg.clone() {
            for j in 0..d {
                m[j] += h_z[i * d + j];
            }
        }
        let n = seg.len() as f64;
        for v in &mut m {
            *v /= n;
        }
        m
    };
    let u = mean_of(seg_a);
    let w = mean_of(seg_b);
    let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nu == 0.0 || nw == 0.0 {
        return;
    }
    let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
    let s = dot / (nu * nw);
    // ds/du = w/(|u||w|) - s*u/|u|^2, then 1/|seg| per contributing row
    let ka = d_s / seg_a.len() as f64;
    let kb = d_s / seg_b.len() as f64;
    for j in 0..d {
        let du = w[j] / (nu * nw) - s * u[j] / (nu * nu);
        let dw = u[j] / (nu * nw) - s * w[j] / (nw * nw);
        for i in seg_a.clone() {
            d_hz[i * d + j] += ka * du;
        }
        for i in seg_b.clone() {
            d_hz[i * d + j] += kb * dw;
        }
    }
}

/// Scalar loss values of one gradient computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub parts: LossParts,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"UQPR";
const CHECKPOINT_VERSION: u32 = 1;

/// Encoder plus heads over one flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: EncoderConfig,
    layout: ParamLayout,
    params: Vec<f64>,
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: EncoderConfig, stream: RngStream) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        let params = init_params(&cfg, &layout, stream);
        Ok(Model { cfg, layout, params })
    }

    pub fn cfg(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_pair(&self, pair: &TokenizedPair) -> Result<()> {
        pair.validate()?;
        if let Some(&bad) = pair.ids.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocab of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// One forward pass. `stochastic` arms dropout; with it off (or with
    /// dropout_rate 0) repeated calls are bit-identical. Inputs longer than
    /// max_len are truncated (longer segment first) and flagged.
    pub fn forward(&self, pair: &TokenizedPair, stochastic: bool, stream: RngStream) -> Result<ModelOutput> {
        let (out, _) = self.forward_cached(pair, stochastic, stream)?;
        Ok(out)
    }

    fn forward_cached(
        &self,
        pair: &TokenizedPair,
        stochastic: bool,
        stream: RngStream,
    ) -> Result<(ModelOutput, ForwardCache)> {
        self.check_pair(pair)?;
        let (pair, truncated) = truncate_tokenized(pair, self.cfg.max_len)?;
        let use_dropout = stochastic && self.cfg.dropout_rate > 0.0;
        let mut rng = stream.rng();
        let (h_z, cache) = encoder_forward(&self.params, &self.layout, &self.cfg, &pair.ids, use_dropout, &mut rng);
        let d = self.cfg.d;
        let h_pooled = h_z[..d].to_vec();
        let p = &self.params;
        let lay = &self.layout;
        let y_hat = dot(&p[lay.w_mean.clone()], &h_pooled) + p[lay.b_mean.start];
        let v = dot(&p[lay.w_var.clone()], &h_pooled) + p[lay.b_var.start];
        let sigma2 = softplus(v) + self.cfg.var_floor;
        Ok((ModelOutput { y_hat, sigma2, h_z, h_pooled, truncated }, cache))
    }

    /// Gradients of the composite objective on T-pass ensembled outputs.
    ///
    /// Per sample, T stochastic passes are averaged into (y_bar, sigma2_bar,
    /// h_bar); the three losses are computed on those means over the whole
    /// batch; each pass then receives 1/T of the upstream gradient. `grads`
    /// must have one slot per parameter and is overwritten.
    pub fn loss_gradients(
        &self,
        batch: &[TokenizedPair],
        targets: &BatchTargets,
        weights: &LossWeights,
        t_passes: usize,
        stream: RngStream,
        grads: &mut [f64],
    ) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if batch.len() != targets.len() {
            return Err(Error::invalid(format!(
                "batch of {} pairs vs {} targets",
                batch.len(),
                targets.len()
            )));
        }
        if t_passes < 1 {
            return Err(Error::invalid("T must be >= 1"));
        }
        if grads.len() != self.layout.total {
            return Err(Error::invalid(format!(
                "gradient buffer of {} slots, expected {}",
                grads.len(),
                self.layout.total
            )));
        }
        weights.validate()?;
        grads.fill(0.0);

        let n = batch.len();
        let d = self.cfg.d;
        let t_f = t_passes as f64;

        struct PassState {
            out: ModelOutput,
            cache: ForwardCache,
            /// Pre-softplus variance-head activation.
            v: f64,
        }
        let mut per_sample: Vec<Vec<PassState>> = Vec::with_capacity(n);
        let mut y_bar = vec![0.0; n];
        let mut s2_bar = vec![0.0; n];
        let mut h_bar: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut sims = vec![0.0; n];
        let mut segs: Vec<(Range<usize>, Range<usize>)> = Vec::with_capacity(n);

        for (i, pair) in batch.iter().enumerate() {
            let sample_stream = stream.child(i as u64);
            let mut passes = Vec::with_capacity(t_passes);
            let mut h_sum: Option<Vec<f64>> = None;
            for t in 0..t_passes {
                let (out, cache) = self.forward_cached(pair, true, sample_stream.child(t as u64))?;
                // recover v for the softplus derivative
                let v = dot(&self.params[self.layout.w_var.clone()], &out.h_pooled)
                    + self.params[self.layout.b_var.start];
                y_bar[i] += out.y_hat / t_f;
                s2_bar[i] += out.sigma2 / t_f;
                match &mut h_sum {
                    Some(h) => {
                        for (a, b) in h.iter_mut().zip(&out.h_z) {
                            *a += b;
                        }
                    }
                    None => h_sum = Some(out.h_z.clone()),
                }
                passes.push(PassState { out, cache, v });
            }
            let mut h = h_sum.expect("at least one pass");
            for v in &mut h {
                *v /= t_f;
            }
            // the truncated pair defines the segment ranges actually used
            let (tp, _) = truncate_tokenized(pair, self.cfg.max_len)?;
            let (s, _) = segment_similarity(&h, d, &tp.seg_a, &tp.seg_b);
            sims[i] = s;
            segs.push((tp.seg_a, tp.seg_b));
            h_bar.push(h);
            per_sample.push(passes);
        }

        let parts = LossParts {
            nll: beta_nll(&targets.y, &y_bar, &s2_bar, weights.beta, weights.mean_reduce_nll)?,
            pen: variance_penalty(&targets.y, &y_bar, &s2_bar, weights.alpha, weights.norm_eps)?,
            align: alignment_loss(&sims, &targets.y_prime)?,
        };
        let total = total_loss(parts, weights)?;

        let (nll_dy, nll_ds2) =
            beta_nll_grad(&targets.y, &y_bar, &s2_bar, weights.beta, weights.mean_reduce_nll)?;
        let (pen_dy, pen_ds2) =
            variance_penalty_grad(&targets.y, &y_bar, &s2_bar, weights.alpha, weights.norm_eps)?;
        let align_ds = alignment_loss_grad(&sims, &targets.y_prime)?;

        let lay = &self.layout;
        for i in 0..n {
            let d_ybar = nll_dy[i] + weights.lambda1 * pen_dy[i];
            let d_s2bar = nll_ds2[i] + weights.lambda1 * pen_ds2[i];
            let d_s = weights.lambda2 * align_ds[i];

            let mut d_hbar = vec![0.0; h_bar[i].len()];
            segment_similarity_backward(&h_bar[i], d, &segs[i].0, &segs[i].1, d_s, &mut d_hbar);

            for pass in &per_sample[i] {
                let d_y = d_ybar / t_f;
                let d_s2 = d_s2bar / t_f;
                let d_v = d_s2 * sigmoid(pass.v);
                let mut d_hz: Vec<f64> = d_hbar.iter().map(|g| g / t_f).collect();
                // heads read the CLS row
                for j in 0..d {
                    let w_m = self.params[lay.w_mean.start + j];
                    let w_v = self.params[lay.w_var.start + j];
                    grads[lay.w_mean.start + j] += pass.out.h_pooled[j] * d_y;
                    grads[lay.w_var.start + j] += pass.out.h_pooled[j] * d_v;
                    d_hz[j] += w_m * d_y + w_v * d_v;
                }
                grads[lay.b_mean.start] += d_y;
                grads[lay.b_var.start] += d_v;
                encoder_backward(&self.params, lay, &self.cfg, &pass.cache, &d_hz, grads);
            }
        }

        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("non-finite gradient"));
        }
        Ok(BatchLoss { total, parts })
    }

    /// Re-draw both output heads from the construction-time distribution,
    /// keeping the encoder. Transfer setups attach fresh task heads to a
    /// pretrained backbone; without this the variance head arrives with
    /// weights shrunk toward a constant-variance readout and its gradients
    /// are much weaker than the mean head's.
    pub fn reset_heads(&mut self, stream: RngStream) {
        use rand::Rng;
        let mut rng = stream.rng();
        let bound = 1.0 / (self.cfg.d as f64).sqrt();
        for r in [self.layout.w_mean.clone(), self.layout.w_var.clone()] {
            for v in &mut self.params[r] {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        self.params[self.layout.b_mean.start] = 0.0;
        self.params[self.layout.b_var.start] = VAR_BIAS_INIT;
    }

    /// Serialize config and parameters. The format is fixed-endian binary,
    /// so a round-trip restores every bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg_json = serde_json::to_vec(&self.cfg)
            .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
        f.write_all(&cfg_json)?;
        f.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.params.len() * 8);
        for v in &self.params {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: version {version}, expected {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        f.read_exact(&mut u32buf)?;
        let cfg_len = u32::from_le_bytes(u32buf) as usize;
        let mut cfg_json = vec![0u8; cfg_len];
        f.read_exact(&mut cfg_json)
            .map_err(|e| Error::Checkpoint(format!("{}: truncated config: {e}", path.display())))?;
        let cfg: EncoderConfig = serde_json::from_slice(&cfg_json)
            .map_err(|e| Error::Checkpoint(format!("{}: config parse: {e}", path.display())))?;
        cfg.validate().map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let layout = ParamLayout::new(&cfg);
        if count != layout.total {
            return Err(Error::Checkpoint(format!(
                "{}: {count} parameters, layout expects {}",
                path.display(),
                layout.total
            )));
        }
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: {} parameter bytes, expected {}",
                path.display(),
                bytes.len(),
                count * 8
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Model { cfg, layout, params })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
