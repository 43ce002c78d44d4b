//! Full classifier: encoders, fusion head and classifier behind one
//! parameter set.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::encoders::{ImageInput, TextEncoder, TextFeatures, VisualEncoder, PAD_ID};
use crate::error::{Error, Result};
use crate::fusion::{self, Alignment, AlignmentParams, BaselineHead, Classifier, ContextVectors, FusionKind};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Visual feature width `d`.
    pub visual: usize,
    /// LSTM hidden units per direction `N`.
    pub hidden: usize,
    /// Padded caption length `l`.
    pub seq_len: usize,
    /// Alignment width `a`.
    pub attention: usize,
    pub embed: usize,
    /// Output channels of the two conv blocks.
    pub conv: [usize; 2],
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            visual: 100,
            hidden: 50,
            seq_len: 60,
            attention: 100,
            embed: 64,
            conv: [8, 16],
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.visual,
            self.hidden,
            self.seq_len,
            self.attention,
            self.embed,
            self.conv[0],
            self.conv[1],
        ];
        if all.contains(&0) {
            return Err(Error::Config(alloc::format!(
                "all dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub fusion: FusionKind,
    pub dims: Dims,
    pub vocab_size: usize,
    /// Skip pad positions in the LSTM recurrences and exclude them from the
    /// alignment softmax.
    pub mask_padding: bool,
}

#[derive(Debug, Clone, Copy)]
enum Head {
    Aligned {
        alignment: AlignmentParams,
        classifier: Classifier,
    },
    Baseline(BaselineHead),
}

/// One (image, caption) input.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T> {
    pub image: ImageInput<'a, T>,
    pub tokens: &'a [usize],
}

/// Handles to the interesting intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Var,
    pub visual: Option<Var>,
    pub text: Option<TextFeatures>,
    pub alignment: Option<Alignment>,
    pub context: Option<ContextVectors>,
    /// Vector handed to the final classifier, when the head has one.
    pub fused: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    visual: Option<VisualEncoder>,
    text: Option<TextEncoder>,
    head: Head,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialised model; the initial weights are a pure function of
    /// `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.dims.validate()?;
        if config.vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold at least PAD and OOV".into()));
        }
        let d = config.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let kind = config.fusion;
        let visual = kind
            .uses_image()
            .then(|| VisualEncoder::init(&mut params, d.conv, d.visual, &mut rng));
        let text = kind.uses_text().then(|| {
            TextEncoder::init(
                &mut params,
                config.vocab_size,
                d.embed,
                d.hidden,
                d.seq_len,
                config.mask_padding,
                &mut rng,
            )
        });
        let text_width = 2 * d.hidden;
        let head = if kind.uses_alignment() {
            let alignment = AlignmentParams::init(&mut params, d.visual, text_width, d.attention, &mut rng);
            let width = kind.fused_width(d.visual, text_width);
            let classifier = Classifier::init(&mut params, "head", width, &mut rng);
            Head::Aligned { alignment, classifier }
        } else {
            Head::Baseline(BaselineHead::init(
                &mut params,
                kind,
                d.visual,
                text_width,
                d.attention,
                &mut rng,
            )?)
        };
        Ok(Self {
            config,
            params,
            visual,
            text,
            head,
        })
    }

    /// Model with the layout implied by `config` and the given weights. Every
    /// expected tensor must be present exactly once with the expected shape.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} parameter tensors for `{}`, found {}",
                model.params.len(),
                config.fusion,
                params.len()
            )));
        }
        for id in model.params.ids() {
            let name = model.params.name(id);
            let found = params
                .find(name)
                .ok_or_else(|| Error::Config(alloc::format!("missing parameter `{name}`")))?;
            let (want, got) = (model.params.get(id).shape(), params.get(found).shape());
            if want != got {
                return Err(Error::Shape {
                    op: "load parameters",
                    message: alloc::format!("`{name}` has shape {got:?}, model expects {want:?}"),
                });
            }
        }
        for id in model.params.ids() {
            let found = params.find(model.params.name(id)).unwrap();
            *model.params.get_mut(id) = params.get(found).clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn visual_encoder(&self) -> Option<&VisualEncoder> {
        self.visual.as_ref()
    }

    pub fn text_encoder(&self) -> Option<&TextEncoder> {
        self.text.as_ref()
    }

    pub fn alignment_params(&self) -> Option<&AlignmentParams> {
        match &self.head {
            Head::Aligned { alignment, .. } => Some(alignment),
            Head::Baseline(_) => None,
        }
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
            visual: self.visual,
            text: self.text,
            head: self.head,
        }
    }

    /// Records the forward pass of one sample on `g`.
    pub fn forward<'p>(&'p self, g: &mut Graph<'p, T>, bound: &Bound, sample: Sample<'p, T>) -> Result<Forward> {
        let visual = match &self.visual {
            Some(enc) => Some(enc.encode(g, bound, sample.image)?),
            None => None,
        };
        let text = match &self.text {
            Some(enc) => Some(enc.encode(g, bound, sample.tokens)?),
            None => None,
        };
        match &self.head {
            Head::Aligned { alignment, classifier } => {
                let (v_f, tf) = (visual.unwrap(), text.unwrap());
                let mask: Option<Vec<bool>> = self
                    .config
                    .mask_padding
                    .then(|| sample.tokens.iter().map(|&t| t == PAD_ID).collect());
                let al = fusion::align(g, bound, alignment, v_f, tf.word_matrix, mask.as_deref())?;
                let ctx = fusion::context_vectors(g, al.alpha, v_f, tf.word_matrix)?;
                let fused = fusion::fuse(g, self.config.fusion, &ctx, v_f, tf.sentence)?;
                let probs = classifier.classify(g, bound, fused)?;
                Ok(Forward {
                    probs,
                    visual,
                    text: Some(tf),
                    alignment: Some(al),
                    context: Some(ctx),
                    fused: Some(fused),
                })
            }
            Head::Baseline(head) => {
                let out = head.forward(g, bound, visual, text.as_ref().map(|t| t.sentence))?;
                Ok(Forward {
                    probs: out.probs,
                    visual,
                    text,
                    alignment: None,
                    context: None,
                    fused: out.joint,
                })
            }
        }
    }

    /// Class probabilities for one sample.
    pub fn predict(&self, sample: Sample<'_, T>) -> Result<[T; 2]> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &bound, sample)?;
        let p = g.value(out.probs).data();
        Ok([p[0], p[1]])
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamSet`].
pub type Gradients<T> = Vec<Option<Tensor<T>>>;

/// Adds `scale ×` the gradients recorded in `g` for `bound` into `acc`.
pub fn accumulate_gradients<T: Scalar>(g: &Graph<'_, T>, bound: &Bound, acc: &mut Gradients<T>, scale: T) {
    for (slot, &v) in acc.iter_mut().zip(bound.vars()) {
        let Some(grad) = g.grad(v) else { continue };
        match slot {
            Some(existing) => {
                for (a, &b) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *a = *a + scale * b;
                }
            }
            None => *slot = Some(grad.map(|x| x * scale)),
        }
    }
}
