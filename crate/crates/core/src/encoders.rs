//! Visual (conv stack → global average pooling → dense → ReLU) and textual
//! (embedding → bidirectional LSTM) feature extractors.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, uniform, Bound, Dense, ParamId, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Reserved vocabulary ids.
pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;

/// What the visual encoder consumes for one image.
#[derive(Debug, Clone, Copy)]
pub enum ImageInput<'a, T> {
    /// `H×W×3` pixels in `[0, 1]`.
    Pixels(&'a Tensor<T>),
    /// A precomputed `1×d` visual feature vector, used as-is in place of the
    /// encoder output (e.g. features from an external backbone).
    Features(&'a Tensor<T>),
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    kernel: ParamId,
    bias: ParamId,
}

impl ConvBlock {
    fn init<T: Scalar>(params: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let kernel = params.push(
            alloc::format!("{name}.kernel"),
            glorot(rng, &[3, 3, cin, cout], 9 * cin, 9 * cout),
        );
        let bias = params.push(alloc::format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { kernel, bias }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, bound: &Bound, x: Var) -> Result<Var> {
        let y = g.conv2d(x, bound.var(self.kernel), bound.var(self.bias))?;
        let y = g.relu(y)?;
        g.max_pool2(y)
    }
}

/// Two 3×3 conv blocks (ReLU, 2×2 max-pool), global average pooling, then a
/// dense ReLU layer of width `d`.
#[derive(Debug, Clone, Copy)]
pub struct VisualEncoder {
    blocks: [ConvBlock; 2],
    dense: Dense,
    width: usize,
}

impl VisualEncoder {
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, channels: [usize; 2], width: usize, rng: &mut impl Rng) -> Self {
        let b1 = ConvBlock::init(params, "visual.conv1", 3, channels[0], rng);
        let b2 = ConvBlock::init(params, "visual.conv2", channels[0], channels[1], rng);
        let dense = Dense::init(params, "visual.dense", channels[1], width, rng);
        Self {
            blocks: [b1, b2],
            dense,
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pooled feature map `G` (`1×c2`) of an image.
    pub fn pooled<'p, T: Scalar>(&self, g: &mut Graph<'p, T>, bound: &Bound, pixels: &'p Tensor<T>) -> Result<Var> {
        if !matches!(pixels.shape(), &[h, w, 3] if h >= 4 && w >= 4) {
            return Err(Error::Shape {
                op: "encode_visual",
                message: alloc::format!("expected an H×W×3 image with H, W ≥ 4, got {:?}", pixels.shape()),
            });
        }
        let mut x = g.constant_ref(pixels);
        for block in &self.blocks {
            x = block.apply(g, bound, x)?;
        }
        g.global_avg_pool(x)
    }

    /// `V_f = ReLU(GAP(G)·W + b)`, a `1×d` row.
    pub fn encode<'p, T: Scalar>(&self, g: &mut Graph<'p, T>, bound: &Bound, image: ImageInput<'p, T>) -> Result<Var> {
        match image {
            ImageInput::Pixels(pixels) => {
                let pooled = self.pooled(g, bound, pixels)?;
                let z = self.dense.apply(g, bound, pooled)?;
                g.relu(z)
            }
            ImageInput::Features(features) => {
                if features.shape() != [1, self.width] {
                    return Err(Error::Dimension {
                        op: "encode_visual",
                        lhs: alloc::vec![1, self.width],
                        rhs: features.shape().to_vec(),
                    });
                }
                Ok(g.constant_ref(features))
            }
        }
    }
}

/// One LSTM direction. Gate blocks in the `4N` axis are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

impl LstmCell {
    fn init<T: Scalar>(params: &mut ParamSet<T>, name: &str, embed: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_input = params.push(
            alloc::format!("{name}.w_input"),
            glorot(rng, &[embed, 4 * hidden], embed, 4 * hidden),
        );
        let w_hidden = params.push(
            alloc::format!("{name}.w_hidden"),
            glorot(rng, &[hidden, 4 * hidden], hidden, 4 * hidden),
        );
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        let bias = params.push(alloc::format!("{name}.bias"), b);
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    /// Runs the cell over `order`, returning the hidden state produced at
    /// each position (indexed by position, not by visit order).
    fn run<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        bound: &Bound,
        embedded: Var,
        order: impl Iterator<Item = usize>,
        skip: &[bool],
        hidden: usize,
    ) -> Result<Vec<Var>> {
        let len = skip.len();
        // Input projections for every position in one product.
        let projected = g.matmul(embedded, bound.var(self.w_input))?;
        let mut h = g.constant(Tensor::zeros(&[1, hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, hidden]));
        let mut states = alloc::vec![h; len];
        for t in order {
            if skip[t] {
                states[t] = h;
                continue;
            }
            let xw = g.slice_rows(projected, t, 1)?;
            let hw = g.matmul(h, bound.var(self.w_hidden))?;
            let z = g.add(xw, hw)?;
            let z = g.add(z, bound.var(self.bias))?;
            let i = g.slice_cols(z, 0, hidden)?;
            let f = g.slice_cols(z, hidden, hidden)?;
            let cand = g.slice_cols(z, 2 * hidden, hidden)?;
            let o = g.slice_cols(z, 3 * hidden, hidden)?;
            let i = g.sigmoid(i)?;
            let f = g.sigmoid(f)?;
            let cand = g.tanh(cand)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c)?;
            h = g.mul(o, tc)?;
            states[t] = h;
        }
        Ok(states)
    }
}

/// Word-level and sentence-level outputs of the bidirectional encoder.
#[derive(Debug, Clone)]
pub struct TextFeatures {
    /// `h_j` for every position, each `1×2N` (forward half first).
    pub words: Vec<Var>,
    /// All `h_j` stacked as an `l×2N` matrix.
    pub word_matrix: Var,
    /// Forward state after the last position ⊕ backward state after the first.
    pub sentence: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct TextEncoder {
    pub embedding: ParamId,
    pub forward: LstmCell,
    pub backward: LstmCell,
    hidden: usize,
    vocab: usize,
    seq_len: usize,
    mask_padding: bool,
}

impl TextEncoder {
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        vocab: usize,
        embed: usize,
        hidden: usize,
        seq_len: usize,
        mask_padding: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let embedding = params.push("text.embedding", uniform(rng, &[vocab, embed], 0.05));
        let forward = LstmCell::init(params, "text.lstm_fwd", embed, hidden, rng);
        let backward = LstmCell::init(params, "text.lstm_bwd", embed, hidden, rng);
        Self {
            embedding,
            forward,
            backward,
            hidden,
            vocab,
            seq_len,
            mask_padding,
        }
    }

    /// Width of each `h_j`, i.e. `2N`.
    pub fn width(&self) -> usize {
        2 * self.hidden
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, bound: &Bound, ids: &[usize]) -> Result<TextFeatures> {
        if ids.len() != self.seq_len {
            return Err(Error::Shape {
                op: "encode_text",
                message: alloc::format!("expected {} token ids, got {}", self.seq_len, ids.len()),
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::Vocabulary { id, size: self.vocab });
        }
        let embedded = g.gather_rows(bound.var(self.embedding), ids)?;
        let skip: Vec<bool> = ids.iter().map(|&id| self.mask_padding && id == PAD_ID).collect();
        let n = ids.len();
        let fwd = self.forward.run(g, bound, embedded, 0..n, &skip, self.hidden)?;
        let bwd = self
            .backward
            .run(g, bound, embedded, (0..n).rev(), &skip, self.hidden)?;
        let words = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        let word_matrix = g.stack_rows(&words)?;
        let sentence = g.concat(&[fwd[n - 1], bwd[0]])?;
        Ok(TextFeatures {
            words,
            word_matrix,
            sentence,
        })
    }
}
