use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, QecError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    UNet,
    Gcn,
    Gcnii,
    Appnp,
    MultiGnn,
    GraphTransformer,
    Lookup,
    TrivialNoError,
}

impl Architecture {
    pub const NEURAL: [Architecture; 7] = [
        Architecture::Cnn,
        Architecture::UNet,
        Architecture::Gcn,
        Architecture::Gcnii,
        Architecture::Appnp,
        Architecture::MultiGnn,
        Architecture::GraphTransformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Cnn => "cnn",
            Architecture::UNet => "unet",
            Architecture::Gcn => "gcn",
            Architecture::Gcnii => "gcnii",
            Architecture::Appnp => "appnp",
            Architecture::MultiGnn => "multignn",
            Architecture::GraphTransformer => "transformer",
            Architecture::Lookup => "lookup",
            Architecture::TrivialNoError => "trivial",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, Architecture::Lookup | Architecture::TrivialNoError)
    }

    pub fn is_graph(self) -> bool {
        matches!(
            self,
            Architecture::Gcn
                | Architecture::Gcnii
                | Architecture::Appnp
                | Architecture::MultiGnn
                | Architecture::GraphTransformer
        )
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = QecError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "cnn" => Architecture::Cnn,
            "unet" => Architecture::UNet,
            "gcn" => Architecture::Gcn,
            "gcnii" => Architecture::Gcnii,
            "appnp" => Architecture::Appnp,
            "multignn" | "multiscalegnn" => Architecture::MultiGnn,
            "transformer" | "graphtransformer" => Architecture::GraphTransformer,
            "lookup" => Architecture::Lookup,
            "trivial" | "trivialnoerror" | "noerror" => Architecture::TrivialNoError,
            _ => return Err(invalid(format!("unknown architecture `{s}`"))),
        })
    }
}

/// Hyperparameters of one decoder. `layers` means: conv blocks (CNN),
/// pooling depth (U-Net), propagation steps (graph models, `K` for APPNP),
/// or attention blocks (transformer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub hidden: usize,
    /// Initial-residual weight (GCNII) or teleport probability (APPNP).
    pub alpha: f64,
    /// Identity-mapping strength λ (GCNII); layer `l` uses `ln(λ / l + 1)`.
    pub beta: f64,
    pub heads: usize,
    pub key_dim: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Hidden width 16 with the per-architecture defaults used for desk runs.
    pub fn new(architecture: Architecture) -> Self {
        let mut config = ModelConfig {
            architecture,
            layers: 1,
            hidden: 16,
            alpha: 0.0,
            beta: 0.0,
            heads: 4,
            key_dim: 4,
            dropout: 0.0,
            seed: 0,
        };
        match architecture {
            Architecture::Cnn => config.layers = 1,
            Architecture::UNet => config.layers = 2,
            Architecture::Gcn => config.layers = 4,
            Architecture::Gcnii => {
                config.layers = 4;
                config.alpha = 0.1;
                config.beta = 0.5;
            }
            Architecture::Appnp => {
                config.layers = 5;
                config.alpha = 0.5;
            }
            Architecture::MultiGnn => config.layers = 5,
            Architecture::GraphTransformer => {
                config.layers = 3;
                config.dropout = 0.1;
            }
            Architecture::Lookup | Architecture::TrivialNoError => {}
        }
        config
    }

    /// Per-cell settings from the published hyperparameter tables.
    pub fn published(architecture: Architecture, distance: usize, p: f64) -> Self {
        let mut config = Self::new(architecture);
        let high_noise = p >= 0.05;
        config.layers = match architecture {
            Architecture::Gcn => {
                if high_noise {
                    6
                } else if distance == 3 && p <= 0.005 {
                    3
                } else {
                    4
                }
            }
            Architecture::Gcnii => {
                if distance == 3 {
                    4
                } else {
                    5
                }
            }
            Architecture::MultiGnn => {
                if high_noise || distance >= 7 {
                    7
                } else {
                    5
                }
            }
            Architecture::GraphTransformer => {
                if distance == 3 && !high_noise {
                    3
                } else {
                    5
                }
            }
            _ => config.layers,
        };
        config
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.architecture.is_neural() {
            return Ok(());
        }
        if self.layers == 0 {
            return Err(invalid("layers must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden width must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("alpha and beta must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        if self.architecture == Architecture::GraphTransformer
            && (self.heads == 0 || self.key_dim == 0)
        {
            return Err(invalid(
                "transformer needs at least one head of positive width",
            ));
        }
        if self.architecture == Architecture::UNet && self.layers > 6 {
            return Err(invalid("U-Net depth above 6 is not supported"));
        }
        Ok(())
    }
}
