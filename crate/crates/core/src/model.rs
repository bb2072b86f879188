//! The frozen toy dual encoder and the learnable prompt.
//!
//! Both towers are one tanh hidden layer followed by a linear map and L2
//! normalization — small enough to differentiate by hand, but structured
//! like the frozen encoders of a contrastive dual-encoder classifier. The
//! prompt enters the text tower as mean-pooled context vectors added to each
//! class token embedding, so one shared prompt shifts every class feature
//! jointly.

use crate::error::{LabError, Result};
use crate::linalg::{l2_normalize, Matrix, Vector, EPS_NORM};
use crate::rng::CounterRng;

/// Layer sizes of the toy model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Token embedding width (text tower input).
    pub d_tok: usize,
    /// Image input width.
    pub d_img: usize,
    /// Hidden width shared by both towers.
    pub hidden: usize,
    /// Shared feature space width.
    pub feat_dim: usize,
    /// Number of learnable context vectors.
    pub n_ctx: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { d_tok: 16, d_img: 24, hidden: 32, feat_dim: 16, n_ctx: 4 }
    }
}

/// Conventional inverse-temperature multiplier applied to cosine
/// similarities before the softmax.
pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

/// Scale of the seeded prompt initialization ("hard prompt seed"). Tuned
/// once on the frozen benchmark so the prompt-induced shared feature
/// component dominates the per-class signal, then frozen.
pub const PROMPT_INIT_SCALE: f64 = 0.1152;

/// Frozen random weights of the text and image towers.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// Text tower input layer, `hidden x d_tok`.
    pub a_t: Matrix,
    /// Text tower output layer, `feat_dim x hidden`.
    pub w_t: Matrix,
    /// Image tower input layer, `hidden x d_img`.
    pub a_i: Matrix,
    /// Image tower output layer, `feat_dim x hidden`.
    pub w_i: Matrix,
    pub logit_scale: f64,
}

fn random_layer(rng: &mut CounterRng, rows: usize, cols: usize) -> Matrix {
    // i.i.d. uniform(-1,1) scaled by 1/sqrt(fan_in); fan_in is the column
    // count (the layer's input width).
    let scale = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0) * scale).collect();
    Matrix::new(rows, cols, data)
}

impl EncoderParams {
    /// Deterministic weights from a seed: same `(seed, dims)` gives
    /// bit-identical parameters.
    pub fn generate(seed: u64, dims: &ModelDims) -> Self {
        let root = CounterRng::new(seed);
        EncoderParams {
            a_t: random_layer(&mut root.stream(0), dims.hidden, dims.d_tok),
            w_t: random_layer(&mut root.stream(1), dims.feat_dim, dims.hidden),
            a_i: random_layer(&mut root.stream(2), dims.hidden, dims.d_img),
            w_i: random_layer(&mut root.stream(3), dims.feat_dim, dims.hidden),
            logit_scale: DEFAULT_LOGIT_SCALE,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_tok: self.a_t.cols(),
            d_img: self.a_i.cols(),
            hidden: self.a_t.rows(),
            feat_dim: self.w_t.rows(),
            n_ctx: 0, // not carried by the encoder; prompt-side quantity
        }
    }
}

/// One fixed token embedding per class name, `C x d_tok`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbeddings {
    pub g: Matrix,
}

impl ClassEmbeddings {
    pub fn from_matrix(g: Matrix) -> Self {
        ClassEmbeddings { g }
    }

    /// Unstructured random class tokens; used by unit tests and fixtures.
    pub fn random(seed: u64, n_classes: usize, d_tok: usize) -> Self {
        let mut rng = CounterRng::new(seed).stream(7);
        let scale = 1.0 / (d_tok as f64).sqrt();
        let data = (0..n_classes * d_tok).map(|_| rng.uniform(-1.0, 1.0) * scale).collect();
        ClassEmbeddings { g: Matrix::new(n_classes, d_tok, data) }
    }

    pub fn n_classes(&self) -> usize {
        self.g.rows()
    }
}

/// The learnable context vectors together with their AdamW moment state.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptState {
    /// `n_ctx x d_tok` learnable context vectors.
    pub context: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
}

impl PromptState {
    pub fn new(context: Matrix) -> Self {
        let (r, c) = (context.rows(), context.cols());
        PromptState {
            context,
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    /// Seeded deterministic initialization — the "hard prompt seed".
    pub fn from_hard_seed(seed: u64, n_ctx: usize, d_tok: usize) -> Self {
        let mut rng = CounterRng::new(seed).stream(11);
        let data = (0..n_ctx * d_tok)
            .map(|_| rng.uniform(-1.0, 1.0) * PROMPT_INIT_SCALE)
            .collect();
        PromptState::new(Matrix::new(n_ctx, d_tok, data))
    }

    pub fn n_ctx(&self) -> usize {
        self.context.rows()
    }
}

/// Row-normalized class text features, `C x feat_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatureMatrix {
    pub e: Matrix,
}

impl TextFeatureMatrix {
    pub fn n_classes(&self) -> usize {
        self.e.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.e.cols()
    }

    /// Mean over unordered row pairs of their cosine similarity, clamped to
    /// [-1, 1]. Zero when there are fewer than two rows.
    pub fn mean_pairwise_cos(&self) -> f64 {
        let c = self.e.rows();
        if c < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..c {
            for j in i + 1..c {
                sum += crate::linalg::dot(self.e.row(i), self.e.row(j));
            }
        }
        let mean = sum / (c * (c - 1) / 2) as f64;
        mean.clamp(-1.0, 1.0)
    }
}

/// Unit-norm image feature, length `feat_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeature {
    pub v: Vector,
}

/// Intermediate activations of the text tower, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct TextForwardCache {
    /// tanh activations, `C x hidden`.
    pub h: Matrix,
    /// Norms of the pre-normalization feature rows, length `C`.
    pub prenorm_norm: Vec<f64>,
}

/// Pooled text-tower input for class `c`: `(sum_j context_j + g_c) / (P+1)`.
fn pooled_input(context: &Matrix, g_row: &[f64]) -> Vec<f64> {
    let p = context.rows();
    let d = context.cols();
    let denom = (p + 1) as f64;
    let mut u = vec![0.0; d];
    for j in 0..p {
        let row = context.row(j);
        for k in 0..d {
            u[k] += row[k];
        }
    }
    for k in 0..d {
        u[k] = (u[k] + g_row[k]) / denom;
    }
    u
}

pub(crate) fn encode_text_cached(
    params: &EncoderParams,
    classes: &ClassEmbeddings,
    context: &Matrix,
) -> Result<(TextFeatureMatrix, TextForwardCache)> {
    if classes.g.cols() != params.a_t.cols() || context.cols() != params.a_t.cols() {
        return Err(LabError::DimensionMismatch(format!(
            "text encoder expects d_tok {}, got classes {} and context {}",
            params.a_t.cols(),
            classes.g.cols(),
            context.cols()
        )));
    }
    let c = classes.n_classes();
    let hidden = params.a_t.rows();
    let feat = params.w_t.rows();
    let mut e = Matrix::zeros(c, feat);
    let mut h_all = Matrix::zeros(c, hidden);
    let mut norms = Vec::with_capacity(c);
    for ci in 0..c {
        let u = pooled_input(context, classes.g.row(ci));
        let z = params.a_t.matvec(&u);
        let h: Vec<f64> = z.iter().map(|x| x.tanh()).collect();
        let y = params.w_t.matvec(&h);
        let n = crate::linalg::slice_norm(&y);
        if n <= EPS_NORM {
            return Err(LabError::ZeroNorm);
        }
        for d in 0..feat {
            e.set(ci, d, y[d] / n);
        }
        h_all.row_mut(ci).copy_from_slice(&h);
        norms.push(n);
    }
    Ok((TextFeatureMatrix { e }, TextForwardCache { h: h_all, prenorm_norm: norms }))
}

/// Class text features for the given prompt: row `c` is
/// `l2_normalize(W_T tanh(A_T u_c))` with `u_c = (sum_j context_j + g_c)/(P+1)`.
pub fn encode_text(
    params: &EncoderParams,
    classes: &ClassEmbeddings,
    prompt: &PromptState,
) -> Result<TextFeatureMatrix> {
    encode_text_cached(params, classes, &prompt.context).map(|(e, _)| e)
}

/// Image feature `l2_normalize(W_I tanh(A_I x))`.
pub fn encode_image(params: &EncoderParams, x: &Vector) -> Result<ImageFeature> {
    if x.len() != params.a_i.cols() {
        return Err(LabError::DimensionMismatch(format!(
            "image encoder expects d_img {}, got {}",
            params.a_i.cols(),
            x.len()
        )));
    }
    let z = params.a_i.matvec(x.as_slice());
    let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
    let y = params.w_i.matvec(&h);
    let v = l2_normalize(&Vector::new(y))?;
    Ok(ImageFeature { v })
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Pre-softmax logits `logit_scale * <v, e_c>`.
pub fn raw_logits(e: &TextFeatureMatrix, v: &ImageFeature, logit_scale: f64) -> Vec<f64> {
    (0..e.n_classes())
        .map(|c| logit_scale * crate::linalg::dot(e.e.row(c), v.v.as_slice()))
        .collect()
}

/// Class probabilities `softmax(logit_scale * <v, e_c>)`.
pub fn predict(e: &TextFeatureMatrix, v: &ImageFeature, logit_scale: f64) -> Vec<f64> {
    softmax(&raw_logits(e, v, logit_scale))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
