use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Hidden width of the transformer MLP as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub max_strokes: usize,
    pub max_points: usize,
    pub num_classes: usize,
    pub use_shape: bool,
    pub use_location: bool,
    pub use_order: bool,
}

/// Which embedding branch an ablation drops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoShape,
    NoLocation,
    NoOrder,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoShape,
        Ablation::NoLocation,
        Ablation::NoOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoShape => "no_shape",
            Ablation::NoLocation => "no_location",
            Ablation::NoOrder => "no_order",
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: d=64, two blocks, four heads.
    pub fn micro(num_classes: usize) -> Self {
        ModelConfig {
            embed_dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4,
            max_strokes: 32,
            max_points: 64,
            num_classes,
            use_shape: true,
            use_location: true,
            use_order: true,
        }
    }

    /// ViT-Tiny widths.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            embed_dim: 192,
            depth: 12,
            heads: 3,
            ..Self::micro(num_classes)
        }
    }

    /// ViT-Base widths.
    pub fn base(num_classes: usize) -> Self {
        ModelConfig {
            embed_dim: 768,
            depth: 12,
            heads: 12,
            ..Self::micro(num_classes)
        }
    }

    pub fn named(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro(num_classes)),
            "tiny" => Ok(Self::tiny(num_classes)),
            "base" => Ok(Self::base(num_classes)),
            _ => Err(Error::invalid("config", format!("unknown preset `{name}`"))),
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.use_shape = ablation != Ablation::NoShape;
        self.use_location = ablation != Ablation::NoLocation;
        self.use_order = ablation != Ablation::NoOrder;
        self
    }

    /// Hidden size of each recurrent direction.
    pub fn lstm_hidden(&self) -> usize {
        self.embed_dim / 2
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::ConfigMismatch(r.to_owned()));
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad("embed_dim must be a positive multiple of heads");
        }
        if !self.embed_dim.is_multiple_of(2) {
            return bad("embed_dim must be even");
        }
        if self.num_classes == 0 || self.max_strokes == 0 || self.max_points == 0 || self.mlp_ratio == 0 {
            return bad("class count, stroke/point limits and mlp_ratio must be positive");
        }
        Ok(())
    }
}
