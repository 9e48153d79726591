//! Teacher-forced MLE training, model selection on dev CIDEr and the
//! frozen-transformer regressor phase.

use entcap_tensor::{Gradients, Graph, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::cider::cider_scores;
use crate::model::coverage::{
    compute_coverage, coverage_vector, BoostFactors, CoveragePair, RegressorIds, REGRESSOR_PREFIX,
};
use crate::model::{EntityMode, Model, ModelInput};
use crate::par::Execution;
use crate::text::dataset::Example;
use crate::text::hypernym::to_type_caption;
use crate::text::labels::WebEntity;
use crate::text::vocab::{Vocabulary, BOS, EOS};
use crate::train::beam::{beam_search, encode_memory, BeamConfig, Hypothesis};
use crate::train::optim::Adagrad;
use crate::train::postprocess::postprocess_types;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub image_feature_dropout: f64,
    pub max_steps: usize,
    /// Steps between dev evaluations; the final step is always evaluated.
    pub eval_every: usize,
    /// Dev examples decoded per evaluation; 0 uses all.
    pub dev_limit: usize,
    /// Evaluations without dev improvement before stopping; 0 disables.
    pub patience: usize,
    pub regressor_learning_rate: f64,
    pub regressor_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            clip_norm: 4.0,
            image_feature_dropout: 0.2,
            max_steps: 100_000,
            eval_every: 1000,
            dev_limit: 0,
            patience: 0,
            regressor_learning_rate: 0.05,
            regressor_steps: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |n: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("train.{n} must be positive, got {v}")))
            }
        };
        pos("learning_rate", self.learning_rate)?;
        pos("clip_norm", self.clip_norm)?;
        pos("regressor_learning_rate", self.regressor_learning_rate)?;
        for (n, v) in [
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{n} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.image_feature_dropout) {
            return Err(Error::Config(format!(
                "train.image_feature_dropout must lie in [0, 1), got {}",
                self.image_feature_dropout
            )));
        }
        Ok(())
    }
}

/// Caption text the decoder learns to emit: lowercased, with entity names
/// replaced by type tokens in type mode.
pub fn decoder_text(ex: &Example, mode: EntityMode) -> String {
    let cap = ex.target_text().to_lowercase();
    match mode {
        EntityMode::Type => to_type_caption(&cap, &ex.web_entities),
        EntityMode::Surface => cap,
    }
}

/// Texts a vocabulary must cover: decoder targets and label names.
pub fn vocab_corpus(examples: &[Example], mode: EntityMode) -> Vec<String> {
    let mut out = Vec::new();
    for ex in examples {
        out.push(decoder_text(ex, mode));
        out.extend(ex.object_labels.iter().map(|o| o.name.to_lowercase()));
        if mode == EntityMode::Surface {
            out.extend(ex.web_entities.iter().map(|e| e.name.to_lowercase()));
        }
    }
    out
}

/// Entity types seen in `examples`, sorted and deduplicated.
pub fn entity_types(examples: &[Example]) -> Vec<String> {
    let set: std::collections::BTreeSet<String> = examples
        .iter()
        .flat_map(|e| e.web_entities.iter().map(|w| w.entity_type.to_uppercase()))
        .collect();
    set.into_iter().collect()
}

/// An example tokenized and ready for the model.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub input: ModelInput,
    /// Caption tokens followed by EOS, truncated to the decoder length.
    pub target: Vec<usize>,
    /// Coverage of the reference caption against the input labels.
    pub coverage: CoveragePair,
    /// Lowercased reference caption.
    pub reference: String,
    pub entities: Vec<WebEntity>,
}

impl Prepared {
    /// Decoder input `[BOS] + target[..n-1]`.
    pub fn decoder_input(&self) -> Vec<usize> {
        let mut p = Vec::with_capacity(self.target.len());
        p.push(BOS);
        p.extend_from_slice(&self.target[..self.target.len() - 1]);
        p
    }
}

pub fn prepare_example(
    ex: &Example,
    vocab: &Vocabulary,
    mode: EntityMode,
    max_len: usize,
    max_segments: usize,
) -> Prepared {
    let (input, _) = ModelInput::from_example(ex, vocab, mode, max_segments);
    let mut target = vocab.tokenize(&decoder_text(ex, mode));
    target.push(EOS);
    target.truncate(max_len);
    let reference = ex.target_text().to_lowercase();
    Prepared {
        id: ex.id.clone(),
        input,
        target,
        coverage: compute_coverage(&reference, &ex.object_labels, &ex.web_entities),
        reference,
        entities: ex.web_entities.clone(),
    }
}

pub fn prepare_examples(
    examples: &[Example],
    vocab: &Vocabulary,
    mode: EntityMode,
    model: &Model<f32>,
    exec: Execution,
) -> Vec<Prepared> {
    let (max_len, seg) = (model.cfg.max_len, model.cfg.max_segments);
    exec.map(examples, |_, ex| prepare_example(ex, vocab, mode, max_len, seg))
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(a << 6)
        .wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dropout seed for example `index` of step `step`.
pub fn dropout_seed(seed: u64, step: u64, index: u64) -> u64 {
    mix(mix(seed, step), index)
}

/// Summed cross-entropy of one example and its gradients, conditioned on the
/// actual coverage with unit boosts.
pub fn example_gradients(model: &Model<f32>, p: &Prepared, dropout: f64, seed: u64) -> Result<(f64, Gradients<f32>)> {
    let mode = if dropout > 0.0 { Mode::Train } else { Mode::Eval };
    let mut g = Graph::with_seed(&model.params, mode, seed);
    let enc = model.encode(&mut g, &p.input, dropout)?;
    let cov = coverage_vector(p.coverage, BoostFactors::default(), model.cfg.d_model)?;
    let logits = model.decode(&mut g, &enc, &p.decoder_input(), &cov)?;
    let loss = g.cross_entropy(logits, &p.target)?;
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss on example {}", p.id)));
    }
    Ok((value, g.backward(loss)?))
}

/// Token-mean loss and gradients over `batch`. Examples run in chunks of the
/// execution width and are reduced in index order, so the result does not
/// depend on the thread count.
pub fn batch_gradients(
    model: &Model<f32>,
    batch: &[&Prepared],
    dropout: f64,
    seed: u64,
    step: u64,
    exec: Execution,
) -> Result<(f64, Gradients<f32>)> {
    let mut total = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    let tokens: usize = batch.iter().map(|p| p.target.len()).sum();
    for (c, chunk) in batch.chunks(exec.width()).enumerate() {
        let base = c * exec.width();
        let parts = exec.map(chunk, |i, p| {
            example_gradients(model, p, dropout, dropout_seed(seed, step, (base + i) as u64))
        });
        for part in parts {
            let (l, gr) = part?;
            loss += l;
            total.add_assign(&gr);
        }
    }
    let n = tokens.max(1) as f64;
    total.scale(1.0 / n as f32);
    Ok((loss / n, total))
}

/// One optimizer step; returns the token-mean loss before the update.
pub fn mle_step(
    model: &mut Model<f32>,
    opt: &mut Adagrad,
    batch: &[&Prepared],
    cfg: &TrainConfig,
    seed: u64,
    step: u64,
    exec: Execution,
) -> Result<f64> {
    let (loss, mut grads) = batch_gradients(model, batch, cfg.image_feature_dropout, seed, step, exec)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss or gradient at step {step}")));
    }
    grads.clip_global_norm(cfg.clip_norm);
    opt.step(&mut model.params, &grads);
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeacherForced {
    pub loss: f64,
    pub accuracy: f64,
    pub tokens: usize,
}

/// Token-mean loss and argmax accuracy under teacher forcing (no dropout).
pub fn teacher_forced(model: &Model<f32>, data: &[Prepared], exec: Execution) -> Result<TeacherForced> {
    let parts = exec.map(data, |_, p| -> Result<(f64, usize, usize)> {
        let mut g = Graph::new(&model.params, Mode::Eval);
        let enc = model.encode(&mut g, &p.input, 0.0)?;
        let cov = coverage_vector(p.coverage, BoostFactors::default(), model.cfg.d_model)?;
        let logits = model.decode(&mut g, &enc, &p.decoder_input(), &cov)?;
        let loss = g.cross_entropy(logits, &p.target)?;
        let lv = g.value(logits);
        let correct = p
            .target
            .iter()
            .enumerate()
            .filter(|&(t, &y)| argmax(lv.row(t)) == y)
            .count();
        Ok((g.value(loss).data()[0] as f64, correct, p.target.len()))
    });
    let (mut loss, mut correct, mut tokens) = (0.0, 0, 0);
    for p in parts {
        let (l, c, t) = p?;
        loss += l;
        correct += c;
        tokens += t;
    }
    let n = tokens.max(1) as f64;
    Ok(TeacherForced {
        loss: loss / n,
        accuracy: correct as f64 / n,
        tokens,
    })
}

fn argmax(row: &[f32]) -> usize {
    (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
}

/// Which coverage pair conditions decoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditioning {
    /// Reference coverage, as in training.
    Actual,
    /// Regressor predictions scaled by boosts.
    Predicted(BoostFactors),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub example_id: String,
    pub caption: String,
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    pub cov_pred: CoveragePair,
    pub cov_actual: CoveragePair,
}

/// Final caption text for generated tokens.
pub fn render(tokens: &[usize], vocab: &Vocabulary, mode: EntityMode, entities: &[WebEntity]) -> String {
    match mode {
        EntityMode::Type => postprocess_types(tokens, vocab, entities),
        EntityMode::Surface => vocab.detokenize(tokens),
    }
}

pub fn decode_one(
    model: &Model<f32>,
    p: &Prepared,
    vocab: &Vocabulary,
    mode: EntityMode,
    beam: BeamConfig,
    cond: Conditioning,
    exec: Execution,
) -> Result<Decoded> {
    let mem = encode_memory(model, &p.input)?;
    let cov_pred = CoveragePair {
        cov_obj: mem.predicted.0,
        cov_we: mem.predicted.1,
    };
    let cov = match cond {
        Conditioning::Actual => coverage_vector(p.coverage, BoostFactors::default(), model.cfg.d_model)?,
        Conditioning::Predicted(b) => coverage_vector(cov_pred, b, model.cfg.d_model)?,
    };
    let Hypothesis {
        tokens,
        log_prob,
        finished,
    } = beam_search(model, &mem, &cov, beam, exec)?;
    Ok(Decoded {
        example_id: p.id.clone(),
        caption: render(&tokens, vocab, mode, &p.entities),
        tokens,
        log_prob,
        finished,
        cov_pred,
        cov_actual: p.coverage,
    })
}

/// Decodes every example; examples run in parallel, each beam sequentially.
pub fn decode_set(
    model: &Model<f32>,
    data: &[Prepared],
    vocab: &Vocabulary,
    mode: EntityMode,
    beam: BeamConfig,
    cond: Conditioning,
    exec: Execution,
) -> Result<Vec<Decoded>> {
    exec.map(data, |_, p| {
        decode_one(model, p, vocab, mode, beam, cond, Execution::Sequential)
    })
    .into_iter()
    .collect()
}

/// Corpus CIDEr of decoded captions against the prepared references.
pub fn dev_cider(decoded: &[Decoded], data: &[Prepared], exec: Execution) -> Result<f64> {
    let cands: Vec<String> = decoded.iter().map(|d| d.caption.clone()).collect();
    let refs: Vec<Vec<String>> = data.iter().map(|p| vec![p.reference.clone()]).collect();
    Ok(cider_scores(&cands, &refs, exec)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Step { step: usize, loss: f64 },
    Eval { step: usize, cider: f64, best: bool },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub evals: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_cider: f64,
    pub steps: usize,
}

/// Trains with Adagrad on shuffled mini-batches and keeps the parameters with
/// the best dev CIDEr (beam search under actual coverage).
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut Model<f32>,
    train_set: &[Prepared],
    dev_set: &[Prepared],
    vocab: &Vocabulary,
    mode: EntityMode,
    cfg: &TrainConfig,
    beam: BeamConfig,
    seed: u64,
    exec: Execution,
    mut on_event: impl FnMut(&TrainEvent),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let dev = if cfg.dev_limit == 0 {
        dev_set
    } else {
        &dev_set[..cfg.dev_limit.min(dev_set.len())]
    };
    let mut opt = Adagrad::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport {
        best_cider: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = model.params.clone();
    let mut stale = 0;
    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let loss = mle_step(model, &mut opt, &batch, cfg, seed, step as u64, exec)?;
        report.losses.push(loss);
        report.steps = step;
        on_event(&TrainEvent::Step { step, loss });
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let score = if dev.is_empty() {
                -loss
            } else {
                let decoded = decode_set(model, dev, vocab, mode, beam, Conditioning::Actual, exec)?;
                dev_cider(&decoded, dev, exec)?
            };
            let improved = score > report.best_cider;
            report.evals.push((step, score));
            if improved {
                report.best_cider = score;
                report.best_step = step;
                best = model.params.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            on_event(&TrainEvent::Eval {
                step,
                cider: score,
                best: improved,
            });
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    model.params = best;
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressorReport {
    /// Mean squared error summed over both regressors, per step.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// `[N, 3d]` pooled encoder features, computed once in eval mode.
pub fn pooled_features(model: &Model<f32>, data: &[Prepared], exec: Execution) -> Result<Tensor<f32>> {
    let rows = exec.map(data, |_, p| -> Result<Vec<f32>> {
        let mut g = Graph::new(&model.params, Mode::Eval);
        let enc = model.encode(&mut g, &p.input, 0.0)?;
        let pooled = RegressorIds::pooled(&mut g, &enc)?;
        Ok(g.value(pooled).data().to_vec())
    });
    let rows: Vec<Vec<f32>> = rows.into_iter().collect::<Result<_>>()?;
    Ok(Tensor::from_rows(&rows)?)
}

fn regressor_loss_graph(
    model: &Model<f32>,
    features: &Tensor<f32>,
    targets: &(Tensor<f32>, Tensor<f32>),
) -> Result<(f64, Gradients<f32>)> {
    let n = features.rows() as f32;
    let mut g = Graph::new(&model.params, Mode::Eval);
    let x = g.constant(features.clone())?;
    let (po, pw) = model.layout.regressors.predict(&mut g, x)?;
    let to = g.constant(targets.0.clone())?;
    let tw = g.constant(targets.1.clone())?;
    let d_o = g.sub(po, to)?;
    let d_w = g.sub(pw, tw)?;
    let s_o = g.square(d_o)?;
    let s_w = g.square(d_w)?;
    let both = g.add(s_o, s_w)?;
    let sum = g.sum_all(both)?;
    let loss = g.scale(sum, 1.0 / n)?;
    Ok((g.value(loss).data()[0] as f64, g.backward(loss)?))
}

/// Fits the coverage regressors with the transformer frozen: only parameters
/// named `reg.*` change.
pub fn train_regressors(
    model: &mut Model<f32>,
    data: &[Prepared],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<RegressorReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("regressor training set is empty".into()));
    }
    let features = pooled_features(model, data, exec)?;
    let n = data.len();
    let targets = (
        Tensor::from_fn(&[n, 1], |i| data[i].coverage.cov_obj as f32),
        Tensor::from_fn(&[n, 1], |i| data[i].coverage.cov_we as f32),
    );
    let mut opt = Adagrad::new(&model.params, cfg.regressor_learning_rate);
    let mut report = RegressorReport::default();
    for _ in 0..cfg.regressor_steps {
        let (loss, grads) = regressor_loss_graph(model, &features, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Numerical("non-finite regressor loss".into()));
        }
        report.losses.push(loss);
        opt.step_filtered(&mut model.params, &grads, |name| name.starts_with(REGRESSOR_PREFIX));
    }
    let (last, _) = regressor_loss_graph(model, &features, &targets)?;
    report.initial_loss = report.losses.first().copied().unwrap_or(last);
    report.final_loss = last;
    Ok(report)
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i] - mx, y[i] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
