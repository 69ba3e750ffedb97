use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lexical::LEXICAL_DIM;
use crate::phoc::PHOC_DIM;

/// Architecture sizes. Defaults are desk scale; the full-size setting is
/// [`ModelConfig::full_scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Extended text length.
    pub k_cap: usize,
    pub m_cap: usize,
    pub n_cap: usize,
    /// Decoding steps.
    pub t_cap: usize,
    pub dropout: f64,
    pub ffn_mult: usize,
    pub max_primary_words: usize,
    pub appearance_dim: usize,
    pub lexical_dim: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            layers: 2,
            heads: 4,
            k_cap: 40,
            m_cap: 8,
            n_cap: 12,
            t_cap: 12,
            dropout: 0.1,
            ffn_mult: 4,
            max_primary_words: 20,
            appearance_dim: 16,
            lexical_dim: LEXICAL_DIM,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        Self {
            d: 768,
            layers: 4,
            heads: 12,
            k_cap: 220,
            m_cap: 100,
            n_cap: 100,
            t_cap: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d ({}) must be a positive multiple of heads ({})",
                self.d, self.heads
            )));
        }
        for (name, v) in [
            ("layers", self.layers),
            ("k_cap", self.k_cap),
            ("m_cap", self.m_cap),
            ("n_cap", self.n_cap),
            ("t_cap", self.t_cap),
            ("ffn_mult", self.ffn_mult),
            ("appearance_dim", self.appearance_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn object_feature_dim(&self) -> usize {
        self.appearance_dim + 4
    }

    pub fn ocr_feature_dim(&self) -> usize {
        self.appearance_dim + 4 + self.lexical_dim + PHOC_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub lr_decay_steps: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 32,
            max_iters: 2000,
            lr_decay_steps: vec![1200, 1600],
            lr_decay_factor: 0.1,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 128,
            max_iters: 24_000,
            lr_decay_steps: vec![14_000, 19_000],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr_decay_factor.is_nan() || self.lr_decay_factor <= 0.0 {
            return Err(Error::Config("lr_decay_factor must be positive".into()));
        }
        Ok(())
    }

    /// Iteration budget stretched in proportion to the training-pair count.
    pub fn scaled_to(&self, original_pairs: usize, pairs: usize) -> Self {
        let factor = pairs as f64 / original_pairs.max(1) as f64;
        let schedule =
            crate::optim::LrSchedule::new(self.lr, self.lr_decay_factor, self.lr_decay_steps.clone()).scaled(factor);
        Self {
            max_iters: scale_iters(self.max_iters, original_pairs, pairs),
            lr_decay_steps: schedule.decay_steps,
            ..self.clone()
        }
    }
}

/// `round(max_iters * pairs / original_pairs)`, exact for integer ratios.
pub fn scale_iters(max_iters: usize, original_pairs: usize, pairs: usize) -> usize {
    let original = original_pairs.max(1) as u128;
    ((max_iters as u128 * pairs as u128 * 2 + original) / (2 * original)) as usize
}
