//! Parameter layout and the building blocks shared by encoders and decoder.

use entcap_tensor::{Element, Graph, ParamId, ParamStore, Tensor, Var, MASK_VALUE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform with the Glorot bound for a `[fan_in, fan_out]` matrix.
    Glorot,
    /// Uniform with standard deviation `1/sqrt(cols)`.
    Embedding,
    Zeros,
    Ones,
}

/// Source of parameter ids: either creates fresh tensors or looks up
/// existing ones by name, checking shapes.
pub trait Slots {
    fn slot(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId>;
}

pub struct Creator<T> {
    pub store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Element> Creator<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<T: Element> Slots for Creator<T> {
    fn slot(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let cols = *shape.last().unwrap_or(&1);
        let rows: usize = shape.iter().product::<usize>() / cols.max(1);
        let bound = match init {
            Init::Glorot => (6.0 / (rows + cols) as f64).sqrt(),
            Init::Embedding => (3.0 / cols as f64).sqrt(),
            Init::Zeros | Init::Ones => 0.0,
        };
        let rng = &mut self.rng;
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            _ => Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound))),
        };
        Ok(self.store.add(name, t)?)
    }
}

pub struct Finder<'a, T>(pub &'a ParamStore<T>);

impl<T: Element> Slots for Finder<'_, T> {
    fn slot(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId> {
        let id = self.0.id(name)?;
        let got = self.0.get(id).shape();
        if got != shape {
            return Err(Error::Validation(format!(
                "parameter `{name}` has shape {got:?}, expected {shape:?}"
            )));
        }
        Ok(id)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LnIds {
    pub fn build(s: &mut impl Slots, p: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: s.slot(&format!("{p}.g"), &[d], Init::Ones)?,
            beta: s.slot(&format!("{p}.b"), &[d], Init::Zeros)?,
        })
    }

    pub fn apply<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        Ok(g.layer_norm(x, ga, be)?)
    }
}

/// Multi-head scaled dot-product attention without biases.
#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl AttnIds {
    pub fn build(s: &mut impl Slots, p: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            wq: s.slot(&format!("{p}.wq"), &[d, d], Init::Glorot)?,
            wk: s.slot(&format!("{p}.wk"), &[d, d], Init::Glorot)?,
            wv: s.slot(&format!("{p}.wv"), &[d, d], Init::Glorot)?,
            wo: s.slot(&format!("{p}.wo"), &[d, d], Init::Glorot)?,
            heads,
        })
    }

    /// Attends from `query [Tq, d]` over `memory [M, d]`. `mask` is an
    /// additive `[Tq, M]` tensor or `None`.
    pub fn apply<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        query: Var,
        memory: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let (wq, wk, wv, wo) = (g.param(self.wq), g.param(self.wk), g.param(self.wv), g.param(self.wo));
        let q = g.matmul(query, wq)?;
        let k = g.matmul(memory, wk)?;
        let v = g.matmul(memory, wv)?;
        let d = g.shape(q)[1];
        let dh = d / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = g.matmul_bt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let p = g.softmax(scores, mask)?;
            outs.push(g.matmul(p, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        Ok(g.matmul(cat, wo)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnIds {
    pub fn build(s: &mut impl Slots, p: &str, d: usize, f: usize) -> Result<Self> {
        Ok(Self {
            w1: s.slot(&format!("{p}.w1"), &[d, f], Init::Glorot)?,
            b1: s.slot(&format!("{p}.b1"), &[f], Init::Zeros)?,
            w2: s.slot(&format!("{p}.w2"), &[f, d], Init::Glorot)?,
            b2: s.slot(&format!("{p}.b2"), &[d], Init::Zeros)?,
        })
    }

    pub fn apply<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let h = g.matmul(h, w2)?;
        Ok(g.add_row(h, b2)?)
    }
}

/// Pre-norm Transformer encoder layer.
#[derive(Clone, Copy, Debug)]
pub struct EncLayerIds {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ffn: FfnIds,
}

impl EncLayerIds {
    pub fn build(s: &mut impl Slots, p: &str, d: usize, f: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: LnIds::build(s, &format!("{p}.ln1"), d)?,
            attn: AttnIds::build(s, &format!("{p}.attn"), d, heads)?,
            ln2: LnIds::build(s, &format!("{p}.ln2"), d)?,
            ffn: FfnIds::build(s, &format!("{p}.ffn"), d, f)?,
        })
    }

    pub fn apply<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.ln1.apply(g, x)?;
        let a = self.attn.apply(g, h, h, None)?;
        let x = g.add(x, a)?;
        let h = self.ln2.apply(g, x)?;
        let f = self.ffn.apply(g, h)?;
        Ok(g.add(x, f)?)
    }
}

/// `[t, t]` additive mask hiding positions to the right.
pub fn causal_mask<T: Element>(t: usize) -> Tensor<T> {
    Tensor::from_fn(&[t, t], |i| if i % t > i / t { T::of(MASK_VALUE) } else { T::zero() })
}

/// `[rows, valid.len()]` additive mask hiding invalid memory positions.
pub fn memory_mask<T: Element>(rows: usize, valid: &[bool]) -> Tensor<T> {
    let m = valid.len();
    Tensor::from_fn(&[rows, m], |i| if valid[i % m] { T::zero() } else { T::of(MASK_VALUE) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use entcap_tensor::Mode;

    #[test]
    fn causal_mask_layout() {
        let m = causal_mask::<f64>(3);
        assert_eq!(m.row(0)[1], MASK_VALUE);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn finder_checks_shapes() {
        let mut c = Creator::<f64>::new(1);
        c.slot("w", &[2, 3], Init::Glorot).unwrap();
        assert!(Finder(&c.store).slot("w", &[2, 3], Init::Zeros).is_ok());
        assert!(Finder(&c.store).slot("w", &[3, 2], Init::Zeros).is_err());
        assert!(Finder(&c.store).slot("missing", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn single_memory_row_attention_is_projected_value() {
        let mut c = Creator::<f64>::new(3);
        let a = AttnIds::build(&mut c, "a", 4, 2).unwrap();
        let mut g = Graph::new(&c.store, Mode::Eval);
        let q = g.constant(Tensor::from_fn(&[3, 4], |i| i as f64 * 0.1)).unwrap();
        let mem = g.constant(Tensor::from_fn(&[1, 4], |i| 1.0 - i as f64)).unwrap();
        let out = a.apply(&mut g, q, mem, None).unwrap();
        let wv = g.param(a.wv);
        let wo = g.param(a.wo);
        let v = g.matmul(mem, wv).unwrap();
        let expect = g.matmul(v, wo).unwrap();
        for r in 0..3 {
            for (x, y) in g.value(out).row(r).iter().zip(g.value(expect).row(0)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
