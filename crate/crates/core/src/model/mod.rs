//! Encoders, gated decoder and coverage regressors over one parameter store.

pub mod config;
pub mod coverage;
pub mod decoder;
pub mod encoders;
pub mod layers;

use entcap_tensor::{Element, Graph, ParamId, ParamStore, Tensor, Var};

pub use config::{EncoderConfig, EntityMode, ModelConfig};
pub use coverage::{compute_coverage, coverage_vector, BoostFactors, CoveragePair, RegressorIds};
pub use decoder::{DecLayerIds, DecoderIds, Fusion};
pub use encoders::{EncoderOutputs, ImageIds, LabelIds, LabelTokens};

use crate::error::{Error, Result};
use crate::model::layers::{Creator, Finder, Init, Slots};
use crate::text::dataset::Example;
use crate::text::vocab::Vocabulary;

/// Parameter ids of every model component.
#[derive(Clone, Debug)]
pub struct Layout {
    /// `[vocab, d]`, shared by all inputs and the output projection.
    pub tok_emb: ParamId,
    pub image: ImageIds,
    pub objects: LabelIds,
    pub entities: LabelIds,
    pub decoder: DecoderIds,
    pub regressors: RegressorIds,
}

impl Layout {
    fn build(s: &mut impl Slots, cfg: &ModelConfig, vocab_size: usize, n_types: usize) -> Result<Self> {
        Ok(Self {
            tok_emb: s.slot("tok_emb", &[vocab_size, cfg.d_model], Init::Embedding)?,
            image: ImageIds::build(s, cfg)?,
            objects: LabelIds::build(s, "obj", cfg, cfg.objects, None)?,
            entities: LabelIds::build(s, "we", cfg, cfg.entities, Some(n_types))?,
            decoder: DecoderIds::build(s, cfg)?,
            regressors: RegressorIds::build(s, cfg.d_model)?,
        })
    }
}

/// Encoder inputs for one example.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub image: Option<Tensor<f32>>,
    pub objects: LabelTokens,
    pub entities: LabelTokens,
}

impl ModelInput {
    /// Returns the input and the count of entities with unregistered types.
    pub fn from_example(ex: &Example, vocab: &Vocabulary, mode: EntityMode, max_segments: usize) -> (Self, usize) {
        let (entities, unknown) = LabelTokens::from_entities(&ex.web_entities, vocab, mode, max_segments);
        let input = Self {
            image: Some(ex.image_features.clone()),
            objects: LabelTokens::from_objects(&ex.object_labels, vocab, max_segments),
            entities,
        };
        (input, unknown)
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
}

impl<T: Element> Model<T> {
    /// Fresh parameters; `n_types` counts type tokens including `TYPE:UNK`.
    pub fn new(cfg: &ModelConfig, vocab_size: usize, n_types: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut c = Creator::new(seed);
        let layout = Layout::build(&mut c, cfg, vocab_size, n_types)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: c.store,
            layout,
        })
    }

    pub fn for_vocab(cfg: &ModelConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        Self::new(cfg, vocab.len(), vocab.type_ids().len(), seed)
    }

    /// Wraps loaded parameters, checking every expected name and shape.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let vocab_size = params.by_name("tok_emb")?.rows();
        let n_types = params.by_name("we.type")?.rows();
        let layout = Layout::build(&mut Finder(&params), cfg, vocab_size, n_types)?;
        let expected = count_slots(cfg, vocab_size, n_types)?;
        if expected != params.len() {
            return Err(Error::Validation(format!(
                "checkpoint holds {} tensors, model expects {expected}",
                params.len()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
            layout,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.params.get(self.layout.tok_emb).rows()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, input: &ModelInput, image_dropout: f64) -> Result<EncoderOutputs> {
        let l = &self.layout;
        let img = l.image.encode(g, input.image.as_ref(), image_dropout)?;
        let obj = l.objects.encode(g, l.tok_emb, &input.objects)?;
        let we = l.entities.encode(g, l.tok_emb, &input.entities)?;
        Ok(EncoderOutputs::new(img, obj, we))
    }

    /// Logits `[prefix.len(), vocab]`.
    pub fn decode(
        &self,
        g: &mut Graph<'_, T>,
        enc: &EncoderOutputs,
        prefix: &[usize],
        coverage: &[f64],
    ) -> Result<Var> {
        self.layout
            .decoder
            .logits(g, self.layout.tok_emb, enc, prefix, coverage)
    }

    /// Predicted `(cov_obj, cov_we)` nodes, each `[1, 1]`.
    pub fn predict_coverage(&self, g: &mut Graph<'_, T>, enc: &EncoderOutputs) -> Result<(Var, Var)> {
        let pooled = RegressorIds::pooled(g, enc)?;
        self.layout.regressors.predict(g, pooled)
    }
}

fn count_slots(cfg: &ModelConfig, vocab_size: usize, n_types: usize) -> Result<usize> {
    struct Counter(usize);
    impl Slots for Counter {
        fn slot(&mut self, _: &str, _: &[usize], _: Init) -> Result<ParamId> {
            self.0 += 1;
            Ok(ParamId(self.0 - 1))
        }
    }
    let mut c = Counter(0);
    Layout::build(&mut c, cfg, vocab_size, n_types)?;
    Ok(c.0)
}
