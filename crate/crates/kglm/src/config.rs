//! Run configuration: UTF-8 `key=value` files plus CLI overrides.
//!
//! Unknown keys fail loudly so a typo never silently trains the wrong model.
//! Defaults are desk-scale (a tiny model that trains in minutes on a CPU);
//! paper-scale values remain selectable through the same keys.

use crate::bka::BkaConfig;
use crate::cgsa::{AugmentConfig, PoolMethod};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // model
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub hop_threshold: Option<usize>,
    pub local_window: Option<usize>,
    pub text_bidirectional: bool,
    // optimization
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    // objectives
    pub gamma: f64,
    pub tau: f64,
    pub lambda_cgsa: f64,
    pub cgsa_symmetric: bool,
    pub pool_method: PoolMethod,
    // data
    pub seed: u64,
    pub min_freq: usize,
    pub p_aug: f64,
    pub subgraph_radius: usize,
    pub subgraph_max_triples: usize,
    pub pagerank_damping: f64,
    pub pagerank_iters: usize,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            max_len: 128,
            dropout_p: 0.1,
            hop_threshold: Some(2),
            local_window: Some(2),
            text_bidirectional: true,
            peak_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 2000,
            weight_decay: 1e-2,
            clip_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            gamma: 0.15,
            tau: 0.07,
            lambda_cgsa: 1.0,
            cgsa_symmetric: false,
            pool_method: PoolMethod::Mean,
            seed: 42,
            min_freq: 1,
            p_aug: 0.3,
            subgraph_radius: 2,
            subgraph_max_triples: 6,
            pagerank_damping: 0.85,
            pagerank_iters: 100,
            checkpoint_every: 0,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::usage(format!(
            "config key {key}: expected true/false, got {v:?}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::usage(format!("config key {key}: bad value {v:?}")))
}

fn parse_opt_usize(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "inf" || v == "none" {
        Ok(None)
    } else {
        Ok(Some(parse_num(key, v)?))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "layers" => self.layers = parse_num(key, value)?,
            "model_dim" => self.model_dim = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_num(key, value)?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "dropout_p" => self.dropout_p = parse_num(key, value)?,
            "hop_threshold" => self.hop_threshold = parse_opt_usize(key, value)?,
            "local_window" => self.local_window = parse_opt_usize(key, value)?,
            "text_bidirectional" => self.text_bidirectional = parse_bool(key, value)?,
            "peak_lr" => self.peak_lr = parse_num(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, value)?,
            "total_steps" => self.total_steps = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "clip_norm" => self.clip_norm = parse_num(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "lambda_cgsa" => self.lambda_cgsa = parse_num(key, value)?,
            "cgsa_symmetric" => self.cgsa_symmetric = parse_bool(key, value)?,
            "pool_method" => {
                self.pool_method = match value {
                    "mean" => PoolMethod::Mean,
                    "bos" => PoolMethod::Bos,
                    _ => {
                        return Err(Error::usage(format!(
                            "config key pool_method: expected mean|bos, got {value:?}"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "min_freq" => self.min_freq = parse_num(key, value)?,
            "p_aug" => self.p_aug = parse_num(key, value)?,
            "subgraph_radius" => self.subgraph_radius = parse_num(key, value)?,
            "subgraph_max_triples" => self.subgraph_max_triples = parse_num(key, value)?,
            "pagerank_damping" => self.pagerank_damping = parse_num(key, value)?,
            "pagerank_iters" => self.pagerank_iters = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            _ => return Err(Error::usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a whole `key=value` file. Blank lines and `#` comments allowed.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::usage(format!(
                    "config line {}: expected key=value",
                    lineno + 1
                )));
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::usage(format!("{}: {e}", path.as_ref().display())))?;
        RunConfig::parse(&text)
    }

    /// Canonical echo, parseable by [`RunConfig::parse`]. Floats use Rust's
    /// shortest round-trip formatting, so echo -> parse is lossless.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("inf".to_string(), |x| x.to_string());
        let pool = match self.pool_method {
            PoolMethod::Mean => "mean",
            PoolMethod::Bos => "bos",
        };
        format!(
            "layers={}\nmodel_dim={}\nheads={}\nffn_dim={}\nmax_len={}\ndropout_p={}\n\
             hop_threshold={}\nlocal_window={}\ntext_bidirectional={}\npeak_lr={}\n\
             warmup_steps={}\ntotal_steps={}\nweight_decay={}\nclip_norm={}\nadam_beta1={}\n\
             adam_beta2={}\nadam_eps={}\nbatch_size={}\ngamma={}\ntau={}\nlambda_cgsa={}\n\
             cgsa_symmetric={}\npool_method={}\nseed={}\nmin_freq={}\np_aug={}\n\
             subgraph_radius={}\nsubgraph_max_triples={}\npagerank_damping={}\n\
             pagerank_iters={}\ncheckpoint_every={}\n",
            self.layers,
            self.model_dim,
            self.heads,
            self.ffn_dim,
            self.max_len,
            self.dropout_p,
            opt(self.hop_threshold),
            opt(self.local_window),
            self.text_bidirectional,
            self.peak_lr,
            self.warmup_steps,
            self.total_steps,
            self.weight_decay,
            self.clip_norm,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.batch_size,
            self.gamma,
            self.tau,
            self.lambda_cgsa,
            self.cgsa_symmetric,
            pool,
            self.seed,
            self.min_freq,
            self.p_aug,
            self.subgraph_radius,
            self.subgraph_max_triples,
            self.pagerank_damping,
            self.pagerank_iters,
            self.checkpoint_every,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.bka().validate()?;
        if self.warmup_steps > self.total_steps {
            return Err(Error::usage(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.peak_lr <= 0.0 || self.clip_norm <= 0.0 || self.tau <= 0.0 {
            return Err(Error::usage("peak_lr, clip_norm and tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) || self.gamma == 0.0 {
            return Err(Error::usage(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        if self.subgraph_radius == 0 {
            return Err(Error::usage("subgraph_radius must be >= 1"));
        }
        Ok(())
    }

    pub fn bka(&self) -> BkaConfig {
        BkaConfig {
            hop_threshold: self.hop_threshold,
            local_window: self.local_window,
            text_bidirectional: self.text_bidirectional,
            layers: self.layers,
            model_dim: self.model_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            dropout_p: self.dropout_p,
            max_len: self.max_len,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            p_aug: self.p_aug,
            hop_radius: self.hop_threshold.unwrap_or(usize::MAX),
            max_len: self.max_len,
        }
    }
}
