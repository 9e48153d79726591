use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
}

/// How web entities are presented to the encoder and decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityMode {
    /// One type token per entity; the decoder emits type tokens that are
    /// substituted after decoding.
    #[default]
    Type,
    /// Entity subtokens with a per-position type embedding; the decoder
    /// emits surface text.
    Surface,
}

impl std::str::FromStr for EntityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type" => Ok(EntityMode::Type),
            "surface" => Ok(EntityMode::Surface),
            other => Err(Error::Config(format!(
                "unknown entity mode `{other}` (expected type or surface)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub ffn_dim: usize,
    /// Longest decoder input, BOS included.
    pub max_len: usize,
    /// Image grid cells (R).
    pub feature_rows: usize,
    /// Image feature width (D).
    pub feature_dim: usize,
    pub max_segments: usize,
    pub image: EncoderConfig,
    pub objects: EncoderConfig,
    pub entities: EncoderConfig,
    pub decoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            ffn_dim: 2048,
            max_len: 128,
            feature_rows: 49,
            feature_dim: 2048,
            max_segments: 32,
            image: EncoderConfig { layers: 1, heads: 4 },
            objects: EncoderConfig { layers: 3, heads: 1 },
            entities: EncoderConfig { layers: 1, heads: 4 },
            decoder: EncoderConfig { layers: 6, heads: 8 },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("feature_rows", self.feature_rows),
            ("feature_dim", self.feature_dim),
            ("max_segments", self.max_segments),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.d_model = {} must be even to tile two coverage scores",
                self.d_model
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("model.max_len must be at least 2".into()));
        }
        for (name, e) in [
            ("image", self.image),
            ("objects", self.objects),
            ("entities", self.entities),
            ("decoder", self.decoder),
        ] {
            if e.heads == 0 || !self.d_model.is_multiple_of(e.heads) {
                return Err(Error::Config(format!(
                    "model.{name}.heads = {} must divide d_model = {}",
                    e.heads, self.d_model
                )));
            }
        }
        if self.decoder.layers == 0 {
            return Err(Error::Config("model.decoder.layers must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_setup() {
        let c = ModelConfig::default();
        assert_eq!((c.decoder.layers, c.decoder.heads), (6, 8));
        assert_eq!((c.objects.layers, c.objects.heads), (3, 1));
        assert_eq!((c.feature_rows, c.feature_dim), (49, 2048));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads_and_odd_width() {
        let mut c = ModelConfig {
            d_model: 30,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.d_model = 7;
        c.decoder.heads = 7;
        c.image.heads = 7;
        c.entities.heads = 7;
        c.objects.heads = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn entity_mode_parses() {
        assert_eq!("type".parse::<EntityMode>().unwrap(), EntityMode::Type);
        assert!("both".parse::<EntityMode>().is_err());
    }
}
