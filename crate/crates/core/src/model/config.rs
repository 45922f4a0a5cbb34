use crate::error::{Error, Result};

/// Components that can be switched off to reproduce the ablation rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_is: bool,
    pub no_eg: bool,
    pub no_san: bool,
    pub no_scn: bool,
    pub no_sdn: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = ["is", "eg", "san", "scn", "sdn"];

    /// Everything off: with one prominent semantic this is a plain CVAE.
    pub fn all() -> Self {
        Self {
            no_is: true,
            no_eg: true,
            no_san: true,
            no_scn: true,
            no_sdn: true,
        }
    }

    /// Turns off one component by its short name (`is`, `eg`, `san`, `scn`, `sdn`).
    pub fn drop(mut self, name: &str) -> Result<Self> {
        match name {
            "is" => self.no_is = true,
            "eg" => self.no_eg = true,
            "san" => self.no_san = true,
            "scn" => self.no_scn = true,
            "sdn" => self.no_sdn = true,
            other => return Err(Error::Domain(format!("unknown component {other:?}"))),
        }
        Ok(self)
    }

    pub fn flags(&self) -> [(&'static str, bool); 5] {
        [
            ("is", self.no_is),
            ("eg", self.no_eg),
            ("san", self.no_san),
            ("scn", self.no_scn),
            ("sdn", self.no_sdn),
        ]
    }

    /// Comma-joined names of dropped components, `none` if nothing is dropped.
    pub fn label(&self) -> String {
        let dropped: Vec<&str> = self.flags().iter().filter(|(_, on)| *on).map(|(n, _)| *n).collect();
        if dropped.is_empty() {
            "none".into()
        } else {
            dropped.join(",")
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        if label == "none" {
            return Ok(Self::default());
        }
        label.split(',').try_fold(Self::default(), |acc, n| acc.drop(n.trim()))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Longest context/response, in tokens.
    pub max_clen: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Convolution kernel length over the sequence axis (`m`).
    pub kernel_width: usize,
    /// Words selected per trigger (`chan`).
    pub channels: usize,
    /// Number of prominent semantics per context (`M`).
    pub num_semantics: usize,
    pub tau: f64,
    pub vocab_size: usize,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Full-size settings: 300-d embeddings and hidden state, contexts of
    /// 25 tokens, m = 3, chan = 3, M = 8.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            max_clen: 25,
            emb_dim: 300,
            hidden_dim: 300,
            latent_dim: 300,
            kernel_width: 3,
            channels: 3,
            num_semantics: 8,
            tau: 0.1,
            vocab_size,
            ablation: Ablation::default(),
        }
    }

    /// Small settings for desk-scale runs and tests.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            max_clen: 10,
            emb_dim: 16,
            hidden_dim: 16,
            latent_dim: 16,
            kernel_width: 2,
            channels: 2,
            num_semantics: 2,
            tau: 0.1,
            vocab_size,
            ablation: Ablation::default(),
        }
    }

    /// Positions produced by the trigger convolution.
    pub fn conv_len(&self) -> usize {
        self.max_clen + 1 - self.kernel_width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_clen", self.max_clen),
            ("emb_dim", self.emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("kernel_width", self.kernel_width),
            ("channels", self.channels),
            ("num_semantics", self.num_semantics),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Domain(format!("{name} must be positive")));
            }
        }
        if self.max_clen < 3 {
            return Err(Error::Domain("max_clen must be at least 3".into()));
        }
        if self.kernel_width > self.max_clen {
            return Err(Error::Domain(format!(
                "kernel width {} exceeds max_clen {}",
                self.kernel_width, self.max_clen
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Domain(format!("tau must be positive, got {}", self.tau)));
        }
        if self.vocab_size <= crate::corpus::SPECIAL_TOKENS.len() {
            return Err(Error::Domain("vocabulary has no ordinary tokens".into()));
        }
        Ok(())
    }
}
