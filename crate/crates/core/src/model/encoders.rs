//! Image, object-label and web-entity encoders sharing one feature space.

use entcap_tensor::{Element, Graph, ParamId, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::config::{EncoderConfig, EntityMode, ModelConfig};
use crate::model::layers::{EncLayerIds, Init, LnIds, Slots};
use crate::text::labels::{ObjectLabel, WebEntity};
use crate::text::vocab::{Vocabulary, TYPE_UNK};

#[derive(Clone, Debug)]
pub struct StackIds {
    pub layers: Vec<EncLayerIds>,
    pub ln_f: LnIds,
}

impl StackIds {
    pub fn build(s: &mut impl Slots, p: &str, cfg: &ModelConfig, e: EncoderConfig) -> Result<Self> {
        let layers = (0..e.layers)
            .map(|i| EncLayerIds::build(s, &format!("{p}.l{i}"), cfg.d_model, cfg.ffn_dim, e.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            ln_f: LnIds::build(s, &format!("{p}.ln_f"), cfg.d_model)?,
        })
    }

    pub fn apply<T: Element>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.apply(g, x)?;
        }
        self.ln_f.apply(g, x)
    }
}

#[derive(Clone, Debug)]
pub struct ImageIds {
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub pos: ParamId,
    pub sentinel: ParamId,
    pub stack: StackIds,
}

impl ImageIds {
    pub fn build(s: &mut impl Slots, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            proj_w: s.slot("img.proj.w", &[cfg.feature_dim, d], Init::Glorot)?,
            proj_b: s.slot("img.proj.b", &[d], Init::Zeros)?,
            pos: s.slot("img.pos", &[cfg.feature_rows, d], Init::Embedding)?,
            sentinel: s.slot("img.sentinel", &[1, d], Init::Embedding)?,
            stack: StackIds::build(s, "img", cfg, cfg.image)?,
        })
    }

    /// Projects `features [R, D]` to the model width, adds the grid position
    /// embedding and runs the encoder stack. `None` encodes the sentinel.
    pub fn encode<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        features: Option<&Tensor<f32>>,
        dropout: f64,
    ) -> Result<Var> {
        let x = match features {
            None => g.param(self.sentinel),
            Some(f) => {
                let (rows, dim) = (f.rows(), f.cols());
                let (max_rows, want_dim) = (g.params().get(self.pos).rows(), g.params().get(self.proj_w).rows());
                if dim != want_dim || rows > max_rows || f.shape().len() != 2 {
                    return Err(Error::Validation(format!(
                        "image features have shape {:?}, expected at most [{max_rows}, {want_dim}]",
                        f.shape()
                    )));
                }
                let x = g.constant(f.cast())?;
                let x = g.dropout(x, dropout)?;
                let (w, b, pos) = (g.param(self.proj_w), g.param(self.proj_b), g.param(self.pos));
                let h = g.matmul(x, w)?;
                let h = g.add_row(h, b)?;
                let p = g.slice_rows(pos, 0, rows)?;
                g.add(h, p)?
            }
        };
        self.stack.apply(g, x)
    }
}

/// Subtokens of a label list with their segment (label rank) and, in
/// surface mode, entity type indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelTokens {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    /// Index into the type embedding table; empty unless surface mode.
    pub types: Vec<usize>,
}

impl LabelTokens {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn from_objects(labels: &[ObjectLabel], vocab: &Vocabulary, max_segments: usize) -> Self {
        let mut out = Self::default();
        for (rank, l) in labels.iter().enumerate() {
            for t in vocab.tokenize(&l.name.to_lowercase()) {
                out.tokens.push(t);
                out.segments.push(rank.min(max_segments - 1));
            }
        }
        out
    }

    /// Returns the tokens and the number of entities whose type had no
    /// registered type token.
    pub fn from_entities(
        entities: &[WebEntity],
        vocab: &Vocabulary,
        mode: EntityMode,
        max_segments: usize,
    ) -> (Self, usize) {
        let mut out = Self::default();
        let mut unknown = 0;
        for (rank, e) in entities.iter().enumerate() {
            let seg = rank.min(max_segments - 1);
            let type_id = vocab.type_id(&e.entity_type).unwrap_or_else(|| {
                unknown += 1;
                TYPE_UNK
            });
            match mode {
                EntityMode::Type => {
                    out.tokens.push(type_id);
                    out.segments.push(seg);
                }
                EntityMode::Surface => {
                    for t in vocab.tokenize(&e.name.to_lowercase()) {
                        out.tokens.push(t);
                        out.segments.push(seg);
                        out.types.push(type_id - TYPE_UNK);
                    }
                }
            }
        }
        (out, unknown)
    }
}

/// Segment-embedded label encoder without positional embeddings.
#[derive(Clone, Debug)]
pub struct LabelIds {
    pub seg: ParamId,
    pub sentinel: ParamId,
    /// Present for the web-entity encoder.
    pub type_emb: Option<ParamId>,
    pub stack: StackIds,
}

impl LabelIds {
    pub fn build(
        s: &mut impl Slots,
        p: &str,
        cfg: &ModelConfig,
        e: EncoderConfig,
        n_types: Option<usize>,
    ) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            seg: s.slot(&format!("{p}.seg"), &[cfg.max_segments, d], Init::Embedding)?,
            sentinel: s.slot(&format!("{p}.sentinel"), &[1, d], Init::Embedding)?,
            type_emb: n_types
                .map(|n| s.slot(&format!("{p}.type"), &[n, d], Init::Embedding))
                .transpose()?,
            stack: StackIds::build(s, p, cfg, e)?,
        })
    }

    pub fn encode<T: Element>(&self, g: &mut Graph<'_, T>, tok_emb: ParamId, input: &LabelTokens) -> Result<Var> {
        let x = if input.is_empty() {
            g.param(self.sentinel)
        } else {
            let (table, seg) = (g.param(tok_emb), g.param(self.seg));
            let t = g.embedding(table, &input.tokens)?;
            let s = g.embedding(seg, &input.segments)?;
            let mut x = g.add(t, s)?;
            if !input.types.is_empty() {
                let Some(type_emb) = self.type_emb else {
                    return Err(Error::Validation(
                        "type indices given to an encoder without a type table".into(),
                    ));
                };
                let ty = g.param(type_emb);
                let e = g.embedding(ty, &input.types)?;
                x = g.add(x, e)?;
            }
            x
        };
        self.stack.apply(g, x)
    }
}

/// Encoder memories for one example, with optional validity masks.
#[derive(Clone, Debug)]
pub struct EncoderOutputs {
    pub img: Var,
    pub obj: Var,
    pub we: Var,
    pub img_valid: Option<Vec<bool>>,
    pub obj_valid: Option<Vec<bool>>,
    pub we_valid: Option<Vec<bool>>,
}

impl EncoderOutputs {
    pub fn new(img: Var, obj: Var, we: Var) -> Self {
        Self {
            img,
            obj,
            we,
            img_valid: None,
            obj_valid: None,
            we_valid: None,
        }
    }
}
