//! Training configuration and its `key=value` text form.
//!
//! Grammar: one `key = value` per line, `#` starts a comment, blank lines are
//! ignored, lists are comma separated and booleans are `true` / `false`.
//! Unknown keys and repeated keys are errors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, UniformConfig};
use crate::net::NetConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub factors: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub epochs: usize,
    /// Overrides the epoch-derived iteration count when set.
    pub iterations: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub patch_size: usize,
    pub net: NetConfig,
    pub weights: LossWeights,
    pub uniform: UniformConfig,
    pub jitter: f64,
    pub seed: u64,
    pub use_refinement: bool,
    pub coarse_loss: bool,
    pub pro_loss: bool,
    pub uni_loss: bool,
    /// Write a log line every this many iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: `N = 64`, 50 epochs.
    fn default() -> Self {
        Self {
            factors: vec![4, 8, 12, 16],
            probabilities: vec![0.1, 0.2, 0.3, 0.4],
            epochs: 50,
            iterations: None,
            batch_size: 8,
            lr: 0.001,
            patch_size: 64,
            net: NetConfig::default(),
            weights: LossWeights::default(),
            uniform: UniformConfig::default(),
            jitter: 0.005,
            seed: 0,
            use_refinement: true,
            coarse_loss: true,
            pro_loss: true,
            uni_loss: true,
            log_every: 1,
        }
    }
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.weights.validate()?;
        self.uniform.validate()?;
        if self.factors.is_empty() || self.factors.len() != self.probabilities.len() {
            return cfg_err(format!(
                "{} factors but {} probabilities",
                self.factors.len(),
                self.probabilities.len()
            ));
        }
        if let Some(&r) = self.factors.iter().find(|&&r| r == 0 || r > self.net.r_max) {
            return cfg_err(format!("factor {r} outside [1, r_max = {}]", self.net.r_max));
        }
        if self.probabilities.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return cfg_err("factor probabilities must be non-negative");
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return cfg_err(format!("factor probabilities sum to {sum}, not 1"));
        }
        if self.batch_size == 0 {
            return cfg_err("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return cfg_err(format!("lr = {} must be positive", self.lr));
        }
        if self.patch_size < self.net.neighbors || self.patch_size < self.net.graph_k {
            return cfg_err(format!(
                "patch_size {} is smaller than neighbors {} or graph_k {}",
                self.patch_size, self.net.neighbors, self.net.graph_k
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return cfg_err(format!("jitter = {} must be >= 0", self.jitter));
        }
        if self.log_every == 0 {
            return cfg_err("log_every must be at least 1");
        }
        Ok(())
    }

    /// Applies `key=value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return cfg_err(format!("line {}: expected key=value, got {line:?}", i + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return cfg_err(format!("line {}: repeated key {key}", i + 1));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("{key}: expected true or false, got {v:?}")),
            }
        }
        match key {
            "factors" => self.factors = list(key, value)?,
            "probabilities" => self.probabilities = list(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "iterations" => self.iterations = Some(num(key, value)?),
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "r_max" => self.net.r_max = num(key, value)?,
            "neighbors" => self.net.neighbors = num(key, value)?,
            "feature_width" => self.net.feature_width = num(key, value)?,
            "edge_widths" => self.net.edge_widths = list(key, value)?,
            "graph_k" => self.net.graph_k = num(key, value)?,
            "query_width" => self.net.query_width = num(key, value)?,
            "value_width" => self.net.value_width = num(key, value)?,
            "hidden_width" => self.net.hidden_width = num(key, value)?,
            "alpha" => self.weights.alpha = num(key, value)?,
            "beta" => self.weights.beta = num(key, value)?,
            "gamma" => self.weights.gamma = num(key, value)?,
            "zeta" => self.weights.zeta = num(key, value)?,
            "uniform_p" => self.uniform.p = num(key, value)?,
            "uniform_seeds" => self.uniform.max_seeds = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "refine" => self.use_refinement = flag(key, value)?,
            "coarse_loss" => self.coarse_loss = flag(key, value)?,
            "pro_loss" => self.pro_loss = flag(key, value)?,
            "uni_loss" => self.uni_loss = flag(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Loss weights with disabled terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.weights.alpha,
            beta: if self.coarse_loss { self.weights.beta } else { 0.0 },
            gamma: if self.pro_loss { self.weights.gamma } else { 0.0 },
            zeta: if self.uni_loss { self.weights.zeta } else { 0.0 },
        }
    }
}
