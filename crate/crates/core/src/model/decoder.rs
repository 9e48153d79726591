//! Decoder with per-source encoder attention fused by tanh vector gates.

use entcap_tensor::{Element, Graph, ParamId, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::encoders::EncoderOutputs;
use crate::model::layers::{causal_mask, memory_mask, AttnIds, FfnIds, Init, LnIds, Slots};
use crate::text::vocab::BOS;

#[derive(Clone, Copy, Debug)]
pub struct GateIds {
    /// `[d, 3d]` each, applied to `concat(Z_img; Z_obj; Z_we)`.
    pub img: ParamId,
    pub obj: ParamId,
    pub we: ParamId,
}

#[derive(Clone, Debug)]
pub struct DecLayerIds {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub x_img: AttnIds,
    pub x_obj: AttnIds,
    pub x_we: AttnIds,
    pub gates: GateIds,
    pub ln3: LnIds,
    pub ffn: FfnIds,
}

/// Gate values and fused output of one gate-fusion sub-layer.
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    pub out: Var,
    pub gate_img: Var,
    pub gate_obj: Var,
    pub gate_we: Var,
}

impl DecLayerIds {
    pub fn build(s: &mut impl Slots, p: &str, cfg: &ModelConfig) -> Result<Self> {
        let (d, h) = (cfg.d_model, cfg.decoder.heads);
        Ok(Self {
            ln1: LnIds::build(s, &format!("{p}.ln1"), d)?,
            self_attn: AttnIds::build(s, &format!("{p}.self"), d, h)?,
            ln2: LnIds::build(s, &format!("{p}.ln2"), d)?,
            x_img: AttnIds::build(s, &format!("{p}.x_img"), d, h)?,
            x_obj: AttnIds::build(s, &format!("{p}.x_obj"), d, h)?,
            x_we: AttnIds::build(s, &format!("{p}.x_we"), d, h)?,
            gates: GateIds {
                img: s.slot(&format!("{p}.gate_img"), &[d, 3 * d], Init::Glorot)?,
                obj: s.slot(&format!("{p}.gate_obj"), &[d, 3 * d], Init::Glorot)?,
                we: s.slot(&format!("{p}.gate_we"), &[d, 3 * d], Init::Glorot)?,
            },
            ln3: LnIds::build(s, &format!("{p}.ln3"), d)?,
            ffn: FfnIds::build(s, &format!("{p}.ffn"), d, cfg.ffn_dim)?,
        })
    }

    /// Causal multi-head self-attention over `x [T, d]` (pre-norm, residual).
    pub fn self_attention<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let t = g.shape(x)[0];
        let h = self.ln1.apply(g, x)?;
        let a = self.self_attn.apply(g, h, h, Some(&causal_mask(t)))?;
        Ok(g.add(x, a)?)
    }

    /// Three independent cross-attentions of `q [T, d]` over the encoder
    /// memories.
    pub fn encoder_attention<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        q: Var,
        enc: &EncoderOutputs,
    ) -> Result<(Var, Var, Var)> {
        let t = g.shape(q)[0];
        let mask = |v: &Option<Vec<bool>>| v.as_deref().map(|m| memory_mask::<T>(t, m));
        let zi = self.x_img.apply(g, q, enc.img, mask(&enc.img_valid).as_ref())?;
        let zo = self.x_obj.apply(g, q, enc.obj, mask(&enc.obj_valid).as_ref())?;
        let zw = self.x_we.apply(g, q, enc.we, mask(&enc.we_valid).as_ref())?;
        Ok((zi, zo, zw))
    }

    /// `Gate_S = tanh(concat(Z_img; Z_obj; Z_we) · U_Sᵀ)` per position and
    /// `out = Σ_S Gate_S ⊙ Z_S`.
    pub fn gate_fusion<T: Element>(&self, g: &mut Graph<'_, T>, zi: Var, zo: Var, zw: Var) -> Result<Fusion> {
        let c = g.concat_cols(&[zi, zo, zw])?;
        let mut gate = |u: ParamId| -> Result<Var> {
            let u = g.param(u);
            let pre = g.matmul_bt(c, u)?;
            Ok(g.tanh(pre)?)
        };
        let (gi, go, gw) = (gate(self.gates.img)?, gate(self.gates.obj)?, gate(self.gates.we)?);
        let a = g.mul(gi, zi)?;
        let b = g.mul(go, zo)?;
        let cw = g.mul(gw, zw)?;
        let s = g.add(a, b)?;
        let out = g.add(s, cw)?;
        Ok(Fusion {
            out,
            gate_img: gi,
            gate_obj: go,
            gate_we: gw,
        })
    }

    pub fn apply<T: Element>(&self, g: &mut Graph<'_, T>, x: Var, enc: &EncoderOutputs) -> Result<Var> {
        let x = self.self_attention(g, x)?;
        let h = self.ln2.apply(g, x)?;
        let (zi, zo, zw) = self.encoder_attention(g, h, enc)?;
        let fused = self.gate_fusion(g, zi, zo, zw)?;
        let x = g.add(x, fused.out)?;
        let h = self.ln3.apply(g, x)?;
        let f = self.ffn.apply(g, h)?;
        Ok(g.add(x, f)?)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderIds {
    pub pos: ParamId,
    pub layers: Vec<DecLayerIds>,
    pub ln_f: LnIds,
}

impl DecoderIds {
    pub fn build(s: &mut impl Slots, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            pos: s.slot("dec.pos", &[cfg.max_len, cfg.d_model], Init::Embedding)?,
            layers: (0..cfg.decoder.layers)
                .map(|i| DecLayerIds::build(s, &format!("dec.l{i}"), cfg))
                .collect::<Result<_>>()?,
            ln_f: LnIds::build(s, "dec.ln_f", cfg.d_model)?,
        })
    }

    /// Logits `[T, vocab]` for `prefix` (starting with BOS). The BOS
    /// embedding is scaled elementwise by `coverage` (length d).
    pub fn logits<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        tok_emb: ParamId,
        enc: &EncoderOutputs,
        prefix: &[usize],
        coverage: &[f64],
    ) -> Result<Var> {
        let max_len = g.params().get(self.pos).rows();
        if prefix.len() > max_len {
            return Err(Error::Length {
                len: prefix.len(),
                max: max_len,
            });
        }
        if prefix.first() != Some(&BOS) {
            return Err(Error::Validation("decoder prefix must start with BOS".into()));
        }
        let emb = g.param(tok_emb);
        let d = g.shape(emb)[1];
        if coverage.len() != d {
            return Err(Error::Validation(format!(
                "coverage vector has length {}, expected {d}",
                coverage.len()
            )));
        }
        let t = prefix.len();
        let e = g.embedding(emb, prefix)?;
        let scale = Tensor::from_fn(&[t, d], |i| if i < d { T::of(coverage[i]) } else { T::one() });
        let scale = g.constant(scale)?;
        let e = g.mul(e, scale)?;
        let pos = g.param(self.pos);
        let p = g.slice_rows(pos, 0, t)?;
        let mut x = g.add(e, p)?;
        for l in &self.layers {
            x = l.apply(g, x, enc)?;
        }
        let x = self.ln_f.apply(g, x)?;
        Ok(g.matmul_bt(x, emb)?)
    }
}
