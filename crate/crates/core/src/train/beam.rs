//! Length-synchronous beam search over raw log-probabilities.

use entcap_tensor::{Element, Graph, Mode, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderOutputs, Model, ModelInput};
use crate::par::Execution;
use crate::text::vocab::{BOS, EOS, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Most tokens generated, EOS included.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            max_len: 128,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::Config("beam.beam_size and beam.max_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens without BOS and EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// False when no hypothesis reached EOS within the length limit.
    pub finished: bool,
}

/// Token space for the search.
#[derive(Clone, Debug)]
pub struct SearchSpace {
    pub vocab_size: usize,
    pub eos: usize,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

impl SearchSpace {
    pub fn for_model(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            eos: EOS,
            banned: vec![PAD, BOS],
        }
    }
}

struct Cand {
    score: f64,
    tokens: Vec<usize>,
    eos: bool,
}

/// Beam search over a next-token log-probability oracle. `next(prefix)`
/// receives the generated tokens so far and returns `vocab_size` values.
///
/// Each step expands every live hypothesis, ranks all candidates by score
/// (ties: lexicographically smallest token sequence), moves EOS candidates
/// ranked within the top `beam_size` to the finished set and keeps the best
/// `beam_size` non-EOS candidates alive. Search stops once the best finished
/// score is at least the best live score.
pub fn beam_search_with<F>(space: &SearchSpace, bc: BeamConfig, exec: Execution, next: F) -> Result<Hypothesis>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync + Send,
{
    bc.validate()?;
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..bc.max_len {
        let scored = exec.map(&alive, |_, (toks, _)| next(toks));
        let mut cands = Vec::new();
        for ((toks, base), lp) in alive.iter().zip(scored) {
            let lp = lp?;
            if lp.len() != space.vocab_size {
                return Err(Error::Validation(format!(
                    "scorer returned {} values for vocabulary {}",
                    lp.len(),
                    space.vocab_size
                )));
            }
            for (tok, &l) in lp.iter().enumerate() {
                if space.banned.contains(&tok) {
                    continue;
                }
                let mut t = toks.clone();
                t.push(tok);
                cands.push(Cand {
                    score: base + l,
                    tokens: t,
                    eos: tok == space.eos,
                });
            }
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
        let mut next_alive = Vec::with_capacity(bc.beam_size);
        for (rank, c) in cands.into_iter().enumerate() {
            if c.eos {
                if rank < bc.beam_size {
                    let mut tokens = c.tokens;
                    tokens.pop();
                    finished.push(Hypothesis {
                        tokens,
                        log_prob: c.score,
                        finished: true,
                    });
                }
            } else if next_alive.len() < bc.beam_size {
                next_alive.push((c.tokens, c.score));
            }
            if rank + 1 >= bc.beam_size && next_alive.len() == bc.beam_size {
                break;
            }
        }
        alive = next_alive;
        let best_finished = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_alive = alive.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
        if alive.is_empty() || best_finished >= best_alive {
            break;
        }
    }
    let best = finished.into_iter().reduce(|a, b| {
        if b.log_prob > a.log_prob || (b.log_prob == a.log_prob && b.tokens < a.tokens) {
            b
        } else {
            a
        }
    });
    match best {
        Some(h) => Ok(h),
        None => {
            let (tokens, log_prob) = alive
                .into_iter()
                .next()
                .ok_or_else(|| Error::Validation("beam search found no candidate tokens".into()))?;
            Ok(Hypothesis {
                tokens,
                log_prob,
                finished: false,
            })
        }
    }
}

/// Encoder outputs kept as plain tensors so every decoding step can build a
/// small graph of its own.
#[derive(Clone, Debug)]
pub struct Memory<T> {
    pub img: Tensor<T>,
    pub obj: Tensor<T>,
    pub we: Tensor<T>,
    pub predicted: (f64, f64),
}

/// Runs the encoders (eval mode) and the coverage regressors once.
pub fn encode_memory<T: Element>(model: &Model<T>, input: &ModelInput) -> Result<Memory<T>> {
    let mut g = Graph::new(&model.params, Mode::Eval);
    let enc = model.encode(&mut g, input, 0.0)?;
    let (po, pw) = model.predict_coverage(&mut g, &enc)?;
    Ok(Memory {
        img: g.value(enc.img).clone(),
        obj: g.value(enc.obj).clone(),
        we: g.value(enc.we).clone(),
        predicted: (g.value(po).data()[0].as_f64(), g.value(pw).data()[0].as_f64()),
    })
}

/// Log-softmax of the last-position logits for `[BOS] + generated`.
pub fn next_log_probs<T: Element>(
    model: &Model<T>,
    mem: &Memory<T>,
    generated: &[usize],
    coverage: &[f64],
) -> Result<Vec<f64>> {
    let mut g = Graph::new(&model.params, Mode::Eval);
    let enc = EncoderOutputs::new(
        g.constant(mem.img.clone())?,
        g.constant(mem.obj.clone())?,
        g.constant(mem.we.clone())?,
    );
    let mut prefix = Vec::with_capacity(generated.len() + 1);
    prefix.push(BOS);
    prefix.extend_from_slice(generated);
    let logits = model.decode(&mut g, &enc, &prefix, coverage)?;
    let row: Vec<f64> = g
        .value(logits)
        .row(prefix.len() - 1)
        .iter()
        .map(|v| v.as_f64())
        .collect();
    Ok(log_softmax(&row))
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Beam search with the model. The length limit is capped so the decoder
/// input never exceeds the model's `max_len`.
pub fn beam_search<T: Element>(
    model: &Model<T>,
    mem: &Memory<T>,
    coverage: &[f64],
    bc: BeamConfig,
    exec: Execution,
) -> Result<Hypothesis> {
    let bc = BeamConfig {
        max_len: bc.max_len.min(model.cfg.max_len),
        ..bc
    };
    let space = SearchSpace::for_model(model.vocab_size());
    beam_search_with(&space, bc, exec, |g| next_log_probs(model, mem, g, coverage))
}
