//! Variational ensembling: T stochastic forward passes, averaged.
//!
//! Every pass draws its dropout masks from an independently derived stream,
//! so the whole ensemble is a pure function of (parameters, input, T, seed).
//! With `mc_dropout` off the passes are deterministic and the ensemble
//! degenerates to a single pass, which is the non-Bayesian baseline path.

use crate::data::TokenizedPair;
use crate::error::Error;
use crate::model::Model;
use crate::rng::RngStream;
use crate::Result;

/// Means over the retained passes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub y_bar: f64,
    pub sigma2_bar: f64,
    /// Mean token representations, L x d.
    pub h_bar: Vec<f64>,
    pub t: usize,
    /// Per-pass (y_hat, sigma2), retained for inspection.
    pub per_pass: Vec<(f64, f64)>,
}

/// Arithmetic means of per-pass (y_hat, sigma2) records.
pub fn ensemble_means(per_pass: &[(f64, f64)]) -> Result<(f64, f64)> {
    if per_pass.is_empty() {
        return Err(Error::invalid("no passes to average"));
    }
    let t = per_pass.len() as f64;
    let y = per_pass.iter().map(|p| p.0).sum::<f64>() / t;
    let s2 = per_pass.iter().map(|p| p.1).sum::<f64>() / t;
    Ok((y, s2))
}

/// Run `t` forward passes with derived per-pass streams and average them.
/// `mc_dropout` keeps dropout active outside training; with it off (or a
/// dropout-free model) every pass is identical to the deterministic one.
pub fn ensemble_forward(
    model: &Model,
    pair: &TokenizedPair,
    t: usize,
    stream: RngStream,
    mc_dropout: bool,
) -> Result<EnsembleOutput> {
    if t < 1 {
        return Err(Error::invalid("T must be >= 1"));
    }
    let mut per_pass = Vec::with_capacity(t);
    let mut h_bar: Vec<f64> = Vec::new();
    for pass in 0..t {
        let out = model.forward(pair, mc_dropout, stream.child(pass as u64))?;
        per_pass.push((out.y_hat, out.sigma2));
        if h_bar.is_empty() {
            h_bar = out.h_z;
        } else {
            for (a, b) in h_bar.iter_mut().zip(&out.h_z) {
                *a += b;
            }
        }
    }
    let tf = t as f64;
    for v in &mut h_bar {
        *v /= tf;
    }
    let (y_bar, sigma2_bar) = ensemble_means(&per_pass)?;
    Ok(EnsembleOutput { y_bar, sigma2_bar, h_bar, t, per_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize_pair, HashedTokenizer};
    use crate::model::EncoderConfig;

    fn model(dropout: f64, seed: u64) -> Model {
        let cfg = EncoderConfig {
            vocab_size: 32,
            d: 8,
            depth: 1,
            heads: 2,
            dropout_rate: dropout,
            max_len: 16,
            var_floor: 1e-8,
        };
        Model::new(cfg, RngStream::root(seed).child(crate::rng::DOMAIN_INIT)).unwrap()
    }

    fn pair() -> TokenizedPair {
        let tok = HashedTokenizer::new(32).unwrap();
        tokenize_pair("quick brown fox", "lazy dog", &tok, 16).unwrap()
    }

    #[test]
    fn means_worked_value() {
        let (y, s2) = ensemble_means(&[(1.0, 0.5), (2.0, 1.0), (3.0, 1.5)]).unwrap();
        assert_eq!(y, 2.0);
        assert_eq!(s2, 1.0);
        assert!(ensemble_means(&[]).is_err());
    }

    #[test]
    fn t_one_is_the_single_pass() {
        let m = model(0.3, 1);
        let p = pair();
        let s = RngStream::root(5);
        let ens = ensemble_forward(&m, &p, 1, s, true).unwrap();
        let single = m.forward(&p, true, s.child(0)).unwrap();
        assert_eq!(ens.y_bar, single.y_hat);
        assert_eq!(ens.sigma2_bar, single.sigma2);
        assert_eq!(ens.h_bar, single.h_z);
        assert_eq!(ens.per_pass, vec![(single.y_hat, single.sigma2)]);
    }

    #[test]
    fn dropout_zero_makes_any_t_identical() {
        let m = model(0.0, 2);
        let p = pair();
        let s = RngStream::root(5);
        let e1 = ensemble_forward(&m, &p, 1, s, true).unwrap();
        let e4 = ensemble_forward(&m, &p, 4, s, true).unwrap();
        assert_eq!(e1.y_bar, e4.y_bar);
        assert_eq!(e1.sigma2_bar, e4.sigma2_bar);
        assert_eq!(e1.h_bar, e4.h_bar);
    }

    #[test]
    fn mc_dropout_off_is_deterministic_despite_dropout_rate() {
        let m = model(0.4, 3);
        let p = pair();
        let a = ensemble_forward(&m, &p, 4, RngStream::root(7), false).unwrap();
        let b = ensemble_forward(&m, &p, 4, RngStream::root(1234), false).unwrap();
        assert_eq!(a, b, "stream must not matter when dropout is off");
        let det = m.forward(&p, false, RngStream::root(0)).unwrap();
        assert_eq!(a.y_bar, det.y_hat);
    }

    #[test]
    fn mc_dropout_on_varies_across_streams_and_reproduces_within_one() {
        let m = model(0.4, 4);
        let p = pair();
        let a = ensemble_forward(&m, &p, 4, RngStream::root(7), true).unwrap();
        let a2 = ensemble_forward(&m, &p, 4, RngStream::root(7), true).unwrap();
        let b = ensemble_forward(&m, &p, 4, RngStream::root(8), true).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a.y_bar, b.y_bar);
        // passes are mutually distinct with overwhelming probability
        assert_ne!(a.per_pass[0], a.per_pass[1]);
    }

    #[test]
    fn pass_order_permutation_leaves_means_unchanged() {
        let m = model(0.4, 5);
        let p = pair();
        let s = RngStream::root(11);
        let ens = ensemble_forward(&m, &p, 4, s, true).unwrap();
        // reassign the derived streams in reverse order
        let mut per_pass = Vec::new();
        for t in (0..4).rev() {
            let out = m.forward(&p, true, s.child(t as u64)).unwrap();
            per_pass.push((out.y_hat, out.sigma2));
        }
        let (y, s2) = ensemble_means(&per_pass).unwrap();
        assert!((y - ens.y_bar).abs() < 1e-12);
        assert!((s2 - ens.sigma2_bar).abs() < 1e-12);
    }

    #[test]
    fn invalid_t_is_rejected() {
        let m = model(0.1, 6);
        assert!(ensemble_forward(&m, &pair(), 0, RngStream::root(0), true).is_err());
    }
}
