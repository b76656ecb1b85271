//! Flat key=value run configuration covering every training, loss, and
//! encoder field. Unknown keys are errors so typos cannot silently fall
//! back to defaults.

use std::path::Path;

use uqpair::model::EncoderConfig;
use uqpair::trainer::TrainConfig;
use uqpair::{Error, Result};

/// Everything a run needs: optimizer/protocol settings plus model shape.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FullConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
}

impl Default for FullConfig {
    fn default() -> Self {
        FullConfig {
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl FullConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.encoder.validate()
    }

    /// Apply one key=value assignment. `var_floor` sets both the loss-side
    /// and the encoder-side floor; they describe the same quantity.
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("key `{key}`: cannot parse {value:?} as {what}"));
        macro_rules! float {
            () => {
                value.parse::<f64>().map_err(|_| bad("a float"))?
            };
        }
        macro_rules! uint {
            () => {
                value.parse::<usize>().map_err(|_| bad("an unsigned integer"))?
            };
        }
        macro_rules! boolean {
            () => {
                value.parse::<bool>().map_err(|_| bad("true or false"))?
            };
        }
        match key {
            // TrainConfig
            "lr" => self.train.lr = float!(),
            "adam_beta1" => self.train.adam_beta1 = float!(),
            "adam_beta2" => self.train.adam_beta2 = float!(),
            "adam_eps" => self.train.adam_eps = float!(),
            "weight_decay" => self.train.weight_decay = float!(),
            "batch_size" => self.train.batch_size = uint!(),
            "max_steps" => self.train.max_steps = uint!(),
            "warmup_frac" => self.train.warmup_frac = float!(),
            "min_epochs" => self.train.min_epochs = uint!(),
            "patience" => self.train.patience = uint!(),
            "seeds" => self.train.seeds = parse_seed_list(value)?,
            "T" => self.train.t_passes = uint!(),
            "mc_dropout" => self.train.mc_dropout = boolean!(),
            "grad_clip" => self.train.grad_clip = float!(),
            // LossWeights
            "beta" => self.train.weights.beta = float!(),
            "alpha" => self.train.weights.alpha = float!(),
            "lambda1" => self.train.weights.lambda1 = float!(),
            "lambda2" => self.train.weights.lambda2 = float!(),
            "norm_eps" => self.train.weights.norm_eps = float!(),
            "mean_reduce_nll" => self.train.weights.mean_reduce_nll = boolean!(),
            "var_floor" => {
                self.train.weights.var_floor = float!();
                self.encoder.var_floor = self.train.weights.var_floor;
            }
            // EncoderConfig
            "vocab_size" => self.encoder.vocab_size = uint!(),
            "d" => self.encoder.d = uint!(),
            "depth" => self.encoder.depth = uint!(),
            "heads" => self.encoder.heads = uint!(),
            "dropout_rate" => self.encoder.dropout_rate = float!(),
            "max_len" => self.encoder.max_len = uint!(),
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse a flat config file on top of the defaults. Lines are
    /// `key = value`; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<FullConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = FullConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.apply(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The same flat key=value shape `from_file` reads, so emitted configs
    /// round-trip. Floats keep full precision here.
    pub fn to_flat(&self) -> String {
        let t = &self.train;
        let w = &t.weights;
        let e = &self.encoder;
        let seeds: Vec<String> = t.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "lr = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\nweight_decay = {}\n\
             batch_size = {}\nmax_steps = {}\nwarmup_frac = {}\nmin_epochs = {}\npatience = {}\n\
             seeds = {}\nT = {}\nmc_dropout = {}\ngrad_clip = {}\n\
             beta = {}\nalpha = {}\nlambda1 = {}\nlambda2 = {}\nvar_floor = {}\nnorm_eps = {}\n\
             mean_reduce_nll = {}\n\
             vocab_size = {}\nd = {}\ndepth = {}\nheads = {}\ndropout_rate = {}\nmax_len = {}\n",
            t.lr,
            t.adam_beta1,
            t.adam_beta2,
            t.adam_eps,
            t.weight_decay,
            t.batch_size,
            t.max_steps,
            t.warmup_frac,
            t.min_epochs,
            t.patience,
            seeds.join(","),
            t.t_passes,
            t.mc_dropout,
            t.grad_clip,
            w.beta,
            w.alpha,
            w.lambda1,
            w.lambda2,
            w.var_floor,
            w.norm_eps,
            w.mean_reduce_nll,
            e.vocab_size,
            e.d,
            e.depth,
            e.heads,
            e.dropout_rate,
            e.max_len,
        )
    }
}

pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {:?} in {s:?}", p.trim())))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("run.cfg");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_overrides_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "# comment\nlr = 0.001\nT = 2\nseeds = 5, 6\nlambda1 = 9.5\nvar_floor = 1e-6\nd = 32\n",
        );
        let cfg = FullConfig::from_file(&p).unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.t_passes, 2);
        assert_eq!(cfg.train.seeds, vec![5, 6]);
        assert_eq!(cfg.train.weights.lambda1, 9.5);
        assert_eq!(cfg.train.weights.var_floor, 1e-6);
        assert_eq!(cfg.encoder.var_floor, 1e-6, "one key drives both floors");
        assert_eq!(cfg.encoder.d, 32);
        // untouched keys keep their defaults
        assert_eq!(cfg.train.batch_size, 16);

        let p2 = write(dir.path(), &cfg.to_flat());
        assert_eq!(FullConfig::from_file(&p2).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "learning_rate = 0.1\n");
        let err = FullConfig::from_file(&p).unwrap_err().to_string();
        assert!(err.contains("unknown config key `learning_rate`"), "{err}");
        assert!(err.contains(":1:"), "{err}");

        let p = write(dir.path(), "lr = fast\n");
        let err = FullConfig::from_file(&p).unwrap_err().to_string();
        assert!(err.contains("cannot parse"), "{err}");

        let p = write(dir.path(), "lr 0.1\n");
        assert!(FullConfig::from_file(&p).is_err());

        // parses but fails validation
        let p = write(dir.path(), "warmup_frac = 2.0\n");
        assert!(FullConfig::from_file(&p).is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("0,42,100").unwrap(), vec![0, 42, 100]);
        assert_eq!(parse_seed_list(" 7 ").unwrap(), vec![7]);
        assert!(parse_seed_list("a,b").is_err());
        assert!(parse_seed_list("").is_err());
    }
}
