//! Additive alignment between the visual feature and word features, the
//! context vectors built from it, the fused representations, the baseline
//! fusion heads and the softmax classifier.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, Dense, ParamId, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Score added to masked positions before the softmax.
const MASKED_SCORE: f64 = -1e9;

/// Which head combines the two modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionKind {
    /// `C_v ⊕ C_t ⊕ V_f ⊕ h^[l]`
    McaScf,
    /// `C_v ⊕ h^[l]`
    Vgcf,
    /// `C_t ⊕ V_f`
    Tgcf,
    /// `C_v ⊕ C_t`
    Mcf,
    Early,
    Late,
    Attentive,
    /// Unimodal baseline on the sentence feature only.
    TextOnly,
    /// Unimodal baseline on the visual feature only.
    ImageOnly,
}

impl FusionKind {
    /// The multimodal kinds compared in an ablation run.
    pub const MULTIMODAL: [FusionKind; 7] = [
        FusionKind::McaScf,
        FusionKind::Vgcf,
        FusionKind::Tgcf,
        FusionKind::Mcf,
        FusionKind::Early,
        FusionKind::Late,
        FusionKind::Attentive,
    ];

    pub const ALL: [FusionKind; 9] = [
        FusionKind::McaScf,
        FusionKind::Vgcf,
        FusionKind::Tgcf,
        FusionKind::Mcf,
        FusionKind::Early,
        FusionKind::Late,
        FusionKind::Attentive,
        FusionKind::TextOnly,
        FusionKind::ImageOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::McaScf => "mca_scf",
            FusionKind::Vgcf => "vgcf",
            FusionKind::Tgcf => "tgcf",
            FusionKind::Mcf => "mcf",
            FusionKind::Early => "early",
            FusionKind::Late => "late",
            FusionKind::Attentive => "attentive",
            FusionKind::TextOnly => "text_only",
            FusionKind::ImageOnly => "image_only",
        }
    }

    pub fn uses_alignment(self) -> bool {
        matches!(
            self,
            FusionKind::McaScf | FusionKind::Vgcf | FusionKind::Tgcf | FusionKind::Mcf
        )
    }

    pub fn uses_image(self) -> bool {
        self != FusionKind::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != FusionKind::ImageOnly
    }

    /// Width of the vector handed to the classifier, given the visual width
    /// `d` and the word-feature width `2N`.
    pub fn fused_width(self, visual: usize, text: usize) -> usize {
        match self {
            FusionKind::McaScf => 2 * visual + 2 * text,
            FusionKind::Vgcf | FusionKind::Tgcf | FusionKind::Mcf => visual + text,
            FusionKind::Early => 2 * visual,
            FusionKind::Late | FusionKind::Attentive | FusionKind::TextOnly | FusionKind::ImageOnly => visual,
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownFusionKind(s.into()))
    }
}

/// `W1: d×a`, `W2: 2N×a`, `v_a: a×1`.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentParams {
    pub w_visual: ParamId,
    pub w_text: ParamId,
    pub v: ParamId,
}

impl AlignmentParams {
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        visual: usize,
        text: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(width >= 1, "attention width must be positive");
        let w_visual = params.push("align.w_visual", glorot(rng, &[visual, width], visual, width));
        let w_text = params.push("align.w_text", glorot(rng, &[text, width], text, width));
        let v = params.push("align.v", glorot(rng, &[width, 1], width, 1));
        Self { w_visual, w_text, v }
    }
}

/// Raw scores and their softmax, both `1×l`.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    pub scores: Var,
    pub alpha: Var,
}

/// `score_j = v_aᵀ·tanh(W1ᵀ·V_f + W2ᵀ·h_j)` for every row `h_j` of
/// `words` (`l×2N`), followed by a softmax over positions. Positions flagged
/// in `mask` are excluded from the softmax.
pub fn align<T: Scalar>(
    g: &mut Graph<'_, T>,
    bound: &Bound,
    params: &AlignmentParams,
    visual: Var,
    words: Var,
    mask: Option<&[bool]>,
) -> Result<Alignment> {
    let (w1, w2, v) = (
        bound.var(params.w_visual),
        bound.var(params.w_text),
        bound.var(params.v),
    );
    check_operand(g, "align", "V_f", visual, Some(1), g.shape(w1)[0])?;
    check_operand(g, "align", "word features", words, None, g.shape(w2)[0])?;
    let l = g.shape(words)[0];
    let projected_visual = g.matmul(visual, w1)?;
    let projected_words = g.matmul(words, w2)?;
    let hidden = g.add(projected_words, projected_visual)?;
    let hidden = g.tanh(hidden)?;
    let scores = g.matmul(hidden, v)?;
    let mut scores = g.reshape(scores, &[1, l])?;
    if let Some(mask) = mask.filter(|m| m.iter().any(|&x| x)) {
        if mask.len() != l {
            return Err(Error::Shape {
                op: "align",
                message: alloc::format!("mask has {} entries for {l} positions", mask.len()),
            });
        }
        let offsets = mask
            .iter()
            .map(|&m| T::lit(if m { MASKED_SCORE } else { 0.0 }))
            .collect();
        let offsets = g.constant(Tensor::row(offsets));
        scores = g.add(scores, offsets)?;
    }
    let alpha = g.softmax(scores)?;
    #[cfg(debug_assertions)]
    {
        let a = g.value(alpha).data();
        let total: f64 = a.iter().map(|v| v.to_f64_lossy()).sum();
        debug_assert!(a.iter().all(|&x| x >= T::zero()));
        debug_assert!(!total.is_finite() || (total - 1.0).abs() < 1e-4);
    }
    Ok(Alignment { scores, alpha })
}

fn check_operand<T: Scalar>(
    g: &Graph<'_, T>,
    op: &'static str,
    operand: &str,
    v: Var,
    rows: Option<usize>,
    cols: usize,
) -> Result<()> {
    let shape = g.shape(v);
    let ok = match shape {
        &[r, c] => c == cols && rows.is_none_or(|want| want == r),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            message: alloc::format!("{operand} has shape {shape:?}, expected width {cols}"),
        })
    }
}

/// Visual and textual context vectors.
#[derive(Debug, Clone, Copy)]
pub struct ContextVectors {
    /// `Σ_j α_j·V_f`, `1×d`.
    pub visual: Var,
    /// `Σ_j α_j·h_j`, `1×2N`.
    pub text: Var,
}

/// Both sums are evaluated as written: `C_v` weights `l` copies of `V_f`,
/// so it equals `V_f` whenever `α` is normalised.
pub fn context_vectors<T: Scalar>(g: &mut Graph<'_, T>, alpha: Var, visual: Var, words: Var) -> Result<ContextVectors> {
    let l = g.shape(words)[0];
    if g.shape(alpha) != [1, l] {
        return Err(Error::Dimension {
            op: "context_vectors",
            lhs: g.shape(alpha).to_vec(),
            rhs: g.shape(words).to_vec(),
        });
    }
    let tiled = g.tile_rows(visual, l)?;
    let c_v = g.matmul(alpha, tiled)?;
    let c_t = g.matmul(alpha, words)?;
    Ok(ContextVectors { visual: c_v, text: c_t })
}

/// Concatenation for the alignment-based kinds, in the order each
/// representation is defined.
pub fn fuse<T: Scalar>(
    g: &mut Graph<'_, T>,
    kind: FusionKind,
    context: &ContextVectors,
    visual: Var,
    sentence: Var,
) -> Result<Var> {
    let parts: Vec<Var> = match kind {
        FusionKind::McaScf => alloc::vec![context.visual, context.text, visual, sentence],
        FusionKind::Vgcf => alloc::vec![context.visual, sentence],
        FusionKind::Tgcf => alloc::vec![context.text, visual],
        FusionKind::Mcf => alloc::vec![context.visual, context.text],
        other => {
            return Err(Error::Config(alloc::format!(
                "`{other}` is not an alignment-based fusion kind"
            )))
        }
    };
    g.concat(&parts)
}

/// Two-class softmax layer; class 1 is hateful/offensive.
#[derive(Debug, Clone, Copy)]
pub struct Classifier {
    pub dense: Dense,
}

impl Classifier {
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, name: &str, inputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            dense: Dense::init(params, name, inputs, 2, rng),
        }
    }

    pub fn classify<T: Scalar>(&self, g: &mut Graph<'_, T>, bound: &Bound, fused: Var) -> Result<Var> {
        let expected = g.shape(bound.var(self.dense.weight))[0];
        check_operand(g, "classify", "fused representation", fused, Some(1), expected)?;
        let logits = self.dense.apply(g, bound, fused)?;
        g.softmax(logits)
    }
}

/// Predicted class from a probability pair; ties go to class 0.
pub fn predicted_class<T: Scalar>(probs: &[T]) -> usize {
    usize::from(probs[1] > probs[0])
}

/// Parameters of the early/late/attentive baselines and unimodal heads.
#[derive(Debug, Clone, Copy)]
pub enum BaselineHead {
    /// Dense ReLU projection of each modality, concatenated, classified.
    Early {
        visual: Dense,
        text: Dense,
        classifier: Classifier,
    },
    /// A classifier per modality; probabilities are averaged.
    Late {
        visual: Classifier,
        text: Classifier,
    },
    /// Dense ReLU projection of each modality, stacked as a 2-row sequence,
    /// pooled with additive self-attention, classified.
    Attentive {
        visual: Dense,
        text: Dense,
        attention: SelfAttention,
        classifier: Classifier,
    },
    TextOnly {
        text: Dense,
        classifier: Classifier,
    },
    ImageOnly {
        classifier: Classifier,
    },
}

/// Additive scoring with a shared learned query:
/// `score_k = vᵀ·tanh(W·s_k + q)`.
#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    pub w: ParamId,
    pub query: ParamId,
    pub v: ParamId,
}

impl SelfAttention {
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, width: usize, attn: usize, rng: &mut impl Rng) -> Self {
        let w = params.push("attentive.w", glorot(rng, &[width, attn], width, attn));
        let query = params.push("attentive.query", Tensor::zeros(&[1, attn]));
        let v = params.push("attentive.v", glorot(rng, &[attn, 1], attn, 1));
        Self { w, query, v }
    }

    /// Pools the rows of `seq` (`k×width`) into one `1×width` vector.
    pub fn pool<T: Scalar>(&self, g: &mut Graph<'_, T>, bound: &Bound, seq: Var) -> Result<(Var, Var)> {
        let k = g.shape(seq)[0];
        let proj = g.matmul(seq, bound.var(self.w))?;
        let proj = g.add(proj, bound.var(self.query))?;
        let hidden = g.tanh(proj)?;
        let scores = g.matmul(hidden, bound.var(self.v))?;
        let scores = g.reshape(scores, &[1, k])?;
        let alpha = g.softmax(scores)?;
        let pooled = g.matmul(alpha, seq)?;
        Ok((pooled, alpha))
    }
}

impl BaselineHead {
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        kind: FusionKind,
        visual: usize,
        text: usize,
        attn: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // Baseline projections use the visual width (100 by default).
        let width = visual;
        Ok(match kind {
            FusionKind::Early => {
                let v = Dense::init(params, "early.visual", visual, width, rng);
                let t = Dense::init(params, "early.text", text, width, rng);
                let c = Classifier::init(params, "head", 2 * width, rng);
                BaselineHead::Early {
                    visual: v,
                    text: t,
                    classifier: c,
                }
            }
            FusionKind::Late => BaselineHead::Late {
                visual: Classifier::init(params, "late.visual", visual, rng),
                text: Classifier::init(params, "late.text", text, rng),
            },
            FusionKind::Attentive => {
                let v = Dense::init(params, "attentive.visual", visual, width, rng);
                let t = Dense::init(params, "attentive.text", text, width, rng);
                let a = SelfAttention::init(params, width, attn, rng);
                let c = Classifier::init(params, "head", width, rng);
                BaselineHead::Attentive {
                    visual: v,
                    text: t,
                    attention: a,
                    classifier: c,
                }
            }
            FusionKind::TextOnly => BaselineHead::TextOnly {
                text: Dense::init(params, "text_only.dense", text, width, rng),
                classifier: Classifier::init(params, "head", width, rng),
            },
            FusionKind::ImageOnly => BaselineHead::ImageOnly {
                classifier: Classifier::init(params, "head", visual, rng),
            },
            other => {
                return Err(Error::Config(alloc::format!("`{other}` is not a baseline head")));
            }
        })
    }

    /// Class probabilities (`1×2`) from whichever branch features the head
    /// uses.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        bound: &Bound,
        visual: Option<Var>,
        sentence: Option<Var>,
    ) -> Result<BaselineOutput> {
        let need = |v: Option<Var>, what: &str| {
            v.ok_or_else(|| Error::Config(alloc::format!("baseline head needs the {what} branch")))
        };
        match *self {
            BaselineHead::Early {
                visual: dv,
                text: dt,
                classifier,
            } => {
                let v = dv.apply(g, bound, need(visual, "visual")?)?;
                let v = g.relu(v)?;
                let t = dt.apply(g, bound, need(sentence, "text")?)?;
                let t = g.relu(t)?;
                let joint = g.concat(&[v, t])?;
                let probs = classifier.classify(g, bound, joint)?;
                Ok(BaselineOutput {
                    probs,
                    joint: Some(joint),
                    attention: None,
                })
            }
            BaselineHead::Late { visual: cv, text: ct } => {
                let pv = cv.classify(g, bound, need(visual, "visual")?)?;
                let pt = ct.classify(g, bound, need(sentence, "text")?)?;
                let sum = g.add(pv, pt)?;
                let probs = g.scale(sum, 0.5);
                Ok(BaselineOutput {
                    probs,
                    joint: None,
                    attention: None,
                })
            }
            BaselineHead::Attentive {
                visual: dv,
                text: dt,
                attention,
                classifier,
            } => {
                let v = dv.apply(g, bound, need(visual, "visual")?)?;
                let v = g.relu(v)?;
                let t = dt.apply(g, bound, need(sentence, "text")?)?;
                let t = g.relu(t)?;
                let seq = g.stack_rows(&[v, t])?;
                let (pooled, alpha) = attention.pool(g, bound, seq)?;
                let probs = classifier.classify(g, bound, pooled)?;
                Ok(BaselineOutput {
                    probs,
                    joint: Some(pooled),
                    attention: Some(alpha),
                })
            }
            BaselineHead::TextOnly { text, classifier } => {
                let t = text.apply(g, bound, need(sentence, "text")?)?;
                let t = g.relu(t)?;
                let probs = classifier.classify(g, bound, t)?;
                Ok(BaselineOutput {
                    probs,
                    joint: Some(t),
                    attention: None,
                })
            }
            BaselineHead::ImageOnly { classifier } => {
                let v = need(visual, "visual")?;
                let probs = classifier.classify(g, bound, v)?;
                Ok(BaselineOutput {
                    probs,
                    joint: Some(v),
                    attention: None,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineOutput {
    pub probs: Var,
    /// Representation handed to the final classifier, when there is one.
    pub joint: Option<Var>,
    /// Attention weights over the two modalities (attentive head only).
    pub attention: Option<Var>,
}
