//! Predictors (linear and projected MLP), the bounded margin loss, empirical
//! risk, and hand-derived reverse-mode gradients.
//!
//! The two architectures are
//!
//! ```text
//! linear:  h_w(x) = W x + b
//! mlp:     h^i(x) = proj(leaky(W_i h^{i-1}(x) + b_i)),  h^0(x) = x,
//!          h_w(x) = W h^K(x) + b,   proj(v) = v / max(1, |v|)
//! ```
//!
//! and the loss on an example (x, y) with scores s is the clamped hinge sum
//!
//! ```text
//! loss = min(1, (1/|Y|) sum_{y' != y} max(0, 1 - alpha (s[y] - s[y'])))
//! ```
//!
//! The clamp keeps the loss in [0, 1] as required by the bound hypotheses and
//! is 1-Lipschitz, so the stated Lipschitz constants remain valid. Gradients
//! are a fixed-topology reverse pass (no general autodiff): at hinge kinks
//! and at the clamp boundary the zero subgradient of the inactive side is
//! used, and at the projection boundary |v| = 1 the identity (inside) branch
//! is used.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

/// Architecture selector. The MLP carries its hidden width N and the number
/// of hidden layers K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp { hidden_width: usize, depth: usize },
}

/// Shape descriptor: architecture, input dimension n, class count |Y|, the
/// margin scale alpha of the loss, and the leaky-ReLU slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    kind: ModelKind,
    input_dim: usize,
    class_count: usize,
    margin_scale: f64,
    leaky_slope: f64,
}

/// Conventional leaky-ReLU slope; the reference experiments do not pin one.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

impl ModelShape {
    /// Linear model W x + b.
    pub fn linear(input_dim: usize, class_count: usize, margin_scale: f64) -> Result<Self> {
        Self::validate(ModelKind::Linear, input_dim, class_count, margin_scale, DEFAULT_LEAKY_SLOPE)
    }

    /// Projected MLP with `depth` hidden layers of width `hidden_width`.
    pub fn mlp(
        input_dim: usize,
        class_count: usize,
        hidden_width: usize,
        depth: usize,
        margin_scale: f64,
    ) -> Result<Self> {
        Self::validate(
            ModelKind::Mlp { hidden_width, depth },
            input_dim,
            class_count,
            margin_scale,
            DEFAULT_LEAKY_SLOPE,
        )
    }

    /// Same shape with a different leaky-ReLU slope in (0, 1).
    pub fn with_leaky_slope(mut self, slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::invalid("leaky_slope", format!("must lie in (0,1), got {slope}")));
        }
        self.leaky_slope = slope;
        Ok(self)
    }

    fn validate(
        kind: ModelKind,
        input_dim: usize,
        class_count: usize,
        margin_scale: f64,
        leaky_slope: f64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        if class_count < 2 {
            return Err(Error::invalid("class_count", "must be >= 2"));
        }
        if !(margin_scale > 0.0) || !margin_scale.is_finite() {
            return Err(Error::invalid("margin_scale", format!("must be positive, got {margin_scale}")));
        }
        if let ModelKind::Mlp { hidden_width, depth } = kind {
            if hidden_width == 0 {
                return Err(Error::invalid("hidden_width", "must be >= 1"));
            }
            if depth == 0 {
                return Err(Error::invalid("depth", "must be >= 1"));
            }
        }
        Ok(Self { kind, input_dim, class_count, margin_scale, leaky_slope })
    }

    #[must_use]
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    #[must_use]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[must_use]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[must_use]
    pub fn margin_scale(&self) -> f64 {
        self.margin_scale
    }

    #[must_use]
    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    /// (rows, cols) of every weight matrix in layer order, final layer last.
    #[must_use]
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ModelKind::Linear => vec![(self.class_count, self.input_dim)],
            ModelKind::Mlp { hidden_width, depth } => {
                let mut dims = Vec::with_capacity(depth + 1);
                dims.push((hidden_width, self.input_dim));
                for _ in 1..depth {
                    dims.push((hidden_width, hidden_width));
                }
                dims.push((self.class_count, hidden_width));
                dims
            }
        }
    }

    /// Total length of the flat parameter vector:
    /// linear |Y| n + |Y|; MLP N n + N + (K-1)(N^2 + N) + |Y| N + |Y|.
    #[must_use]
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(r, c)| r * c + r).sum()
    }
}

/// One layer of the packed parameter vector: a row-major weight matrix and a
/// bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Structured view of a flat parameter vector, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredWeights {
    pub layers: Vec<LayerWeights>,
}

/// Flat parameter vector tied to its shape. The layout is, per layer and in
/// layer order, the row-major weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    shape: ModelShape,
    theta: Vec<f64>,
}

/// Byte span of one layer inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    w_start: usize,
    rows: usize,
    cols: usize,
    b_start: usize,
}

fn layer_spans(shape: &ModelShape) -> Vec<LayerSpan> {
    let mut spans = Vec::new();
    let mut offset = 0;
    for (rows, cols) in shape.layer_dims() {
        let w_start = offset;
        let b_start = w_start + rows * cols;
        offset = b_start + rows;
        spans.push(LayerSpan { w_start, rows, cols, b_start });
    }
    spans
}

impl ModelParams {
    /// Wraps a flat vector, checking its length against the shape.
    pub fn new(shape: ModelShape, theta: Vec<f64>) -> Result<Self> {
        let expected = shape.param_count();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: theta.len() });
        }
        Ok(Self { shape, theta })
    }

    #[must_use]
    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    #[must_use]
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    #[must_use]
    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Splits the flat vector into per-layer weight matrices and biases.
    #[must_use]
    pub fn unpack(&self) -> StructuredWeights {
        let layers = layer_spans(&self.shape)
            .iter()
            .map(|s| LayerWeights {
                rows: s.rows,
                cols: s.cols,
                weight: self.theta[s.w_start..s.w_start + s.rows * s.cols].to_vec(),
                bias: self.theta[s.b_start..s.b_start + s.rows].to_vec(),
            })
            .collect();
        StructuredWeights { layers }
    }

    /// Reassembles a flat vector from structured weights; inverse of
    /// [`ModelParams::unpack`].
    pub fn pack(shape: ModelShape, weights: &StructuredWeights) -> Result<Self> {
        let dims = shape.layer_dims();
        if weights.layers.len() != dims.len() {
            return Err(Error::Inconsistent(format!(
                "expected {} layers, got {}",
                dims.len(),
                weights.layers.len()
            )));
        }
        let mut theta = Vec::with_capacity(shape.param_count());
        for (layer, &(rows, cols)) in weights.layers.iter().zip(&dims) {
            if layer.rows != rows || layer.cols != cols || layer.weight.len() != rows * cols || layer.bias.len() != rows
            {
                return Err(Error::Inconsistent(format!(
                    "layer shape mismatch: expected {rows}x{cols}"
                )));
            }
            theta.extend_from_slice(&layer.weight);
            theta.extend_from_slice(&layer.bias);
        }
        Self::new(shape, theta)
    }

    /// Scales every weight matrix to Frobenius norm at most 1, leaving
    /// biases untouched. This enforces the hypothesis under which the MLP
    /// loss-Lipschitz constant holds.
    #[must_use]
    pub fn project_frobenius(&self) -> Self {
        let mut out = self.clone();
        for span in layer_spans(&self.shape) {
            let w = &mut out.theta[span.w_start..span.w_start + span.rows * span.cols];
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                for v in w.iter_mut() {
                    *v /= norm;
                }
            }
        }
        out
    }
}

/// A feature vector inside the unit ball with its integer label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    x: Vec<f64>,
    y: usize,
}

impl LabeledExample {
    /// Requires finite entries and `|x| <= 1 + 1e-9`.
    pub fn new(x: Vec<f64>, y: usize) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x", "entries must be finite"));
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 + 1e-9 {
            return Err(Error::invalid("x", format!("norm {norm} exceeds the unit ball")));
        }
        Ok(Self { x, y })
    }

    #[must_use]
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    #[must_use]
    pub fn y(&self) -> usize {
        self.y
    }
}

fn matvec_bias(w: &[f64], rows: usize, cols: usize, b: &[f64], x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[r] = acc;
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Forward activations kept for the backward pass. For each hidden layer i:
/// `pre` holds v_i = W_i h^{i-1} + b_i, `act` holds u_i = leaky(v_i), and
/// `hidden` holds h_i = proj(u_i).
struct ForwardTrace {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

fn forward_trace(params: &ModelParams, x: &[f64]) -> Result<ForwardTrace> {
    let shape = &params.shape;
    if x.len() != shape.input_dim() {
        return Err(Error::DimensionMismatch { expected: shape.input_dim(), got: x.len() });
    }
    let spans = layer_spans(shape);
    let slope = shape.leaky_slope();
    let mut pre = Vec::new();
    let mut act = Vec::new();
    let mut hidden = Vec::new();
    let mut input: Vec<f64> = x.to_vec();
    for (idx, span) in spans.iter().enumerate() {
        let w = &params.theta[span.w_start..span.w_start + span.rows * span.cols];
        let b = &params.theta[span.b_start..span.b_start + span.rows];
        let mut v = vec![0.0; span.rows];
        matvec_bias(w, span.rows, span.cols, b, &input, &mut v);
        if idx + 1 == spans.len() {
            // Final affine layer produces the scores, with no activation.
            return Ok(ForwardTrace { pre, act, hidden, scores: v });
        }
        let u: Vec<f64> = v.iter().map(|&t| leaky(t, slope)).collect();
        let norm = u.iter().map(|t| t * t).sum::<f64>().sqrt();
        let h: Vec<f64> =
            if norm > 1.0 { u.iter().map(|t| t / norm).collect() } else { u.clone() };
        pre.push(v);
        act.push(u);
        input = h.clone();
        hidden.push(h);
    }
    unreachable!("layer list is nonempty");
}

/// Scores of the model on a feature vector: the |Y| real outputs before any
/// loss is applied.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    forward_trace(params, x).map(|t| t.scores)
}

/// Clamped average hinge loss in [0, 1]; see the module docs for the exact
/// expression.
pub fn margin_loss(scores: &[f64], y: usize, alpha: f64) -> Result<f64> {
    if y >= scores.len() {
        return Err(Error::LabelOutOfRange { label: y, class_count: scores.len() });
    }
    let k = scores.len() as f64;
    let sy = scores[y];
    let mut sum = 0.0;
    for (j, &s) in scores.iter().enumerate() {
        if j != y {
            sum += (1.0 - alpha * (sy - s)).max(0.0);
        }
    }
    Ok((sum / k).min(1.0))
}

/// Mean margin loss over a dataset.
pub fn empirical_risk(params: &ModelParams, data: &Dataset, alpha: f64) -> Result<f64> {
    if data.len() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let scores = predict(params, data.row(i))?;
        total += margin_loss(&scores, data.label(i), alpha)?;
    }
    Ok(total / data.len() as f64)
}

/// Gradient of the margin loss with respect to the scores; `None` when the
/// loss sits in a flat region (clamped at 1, or every hinge inactive).
fn score_gradient(scores: &[f64], y: usize, alpha: f64) -> Result<Option<Vec<f64>>> {
    if y >= scores.len() {
        return Err(Error::LabelOutOfRange { label: y, class_count: scores.len() });
    }
    let k = scores.len() as f64;
    let sy = scores[y];
    let mut sum = 0.0;
    let mut grad = vec![0.0; scores.len()];
    let mut any_active = false;
    for (j, &s) in scores.iter().enumerate() {
        if j == y {
            continue;
        }
        let arg = 1.0 - alpha * (sy - s);
        if arg > 0.0 {
            sum += arg;
            grad[j] += alpha / k;
            grad[y] -= alpha / k;
            any_active = true;
        }
    }
    // min(1, t): at or beyond the clamp the inactive-side subgradient is 0.
    if !any_active || sum / k >= 1.0 {
        return Ok(None);
    }
    Ok(Some(grad))
}

/// Reverse-mode gradient of `margin_loss(predict(params, x), y, alpha)` with
/// respect to the flat parameter vector.
pub fn loss_gradient(params: &ModelParams, x: &[f64], y: usize, alpha: f64) -> Result<Vec<f64>> {
    let trace = forward_trace(params, x)?;
    let d = params.dim();
    let mut grad = vec![0.0; d];
    let Some(mut g_out) = score_gradient(&trace.scores, y, alpha)? else {
        return Ok(grad);
    };

    let shape = &params.shape;
    let spans = layer_spans(shape);
    let slope = shape.leaky_slope();
    let hidden_count = spans.len() - 1;

    // Walk layers from the output back to the input. `g_out` holds the
    // gradient with respect to the current layer's output vector.
    for (idx, span) in spans.iter().enumerate().rev() {
        let layer_input: &[f64] = if idx == 0 { x } else { &trace.hidden[idx - 1] };
        let w = &params.theta[span.w_start..span.w_start + span.rows * span.cols];

        // Affine part: dL/dW = g_out (input)^T, dL/db = g_out.
        for r in 0..span.rows {
            let g = g_out[r];
            if g != 0.0 {
                let w_row = span.w_start + r * span.cols;
                for (c, inp) in layer_input.iter().enumerate() {
                    grad[w_row + c] += g * inp;
                }
            }
            grad[span.b_start + r] += g;
        }
        if idx == 0 {
            break;
        }

        // Pull the gradient through W to the previous layer's output h,
        // then through the projection and the leaky activation.
        let mut g_h = vec![0.0; span.cols];
        for r in 0..span.rows {
            let g = g_out[r];
            if g != 0.0 {
                let row = &w[r * span.cols..(r + 1) * span.cols];
                for (c, wv) in row.iter().enumerate() {
                    g_h[c] += g * wv;
                }
            }
        }

        let layer = idx - 1; // hidden layer index owning h = proj(leaky(v))
        debug_assert!(layer < hidden_count);
        let u = &trace.act[layer];
        let v = &trace.pre[layer];
        let norm = u.iter().map(|t| t * t).sum::<f64>().sqrt();
        // proj(u) = u / max(1, |u|): identity inside the ball (and on the
        // boundary), J = (I - u u^T / |u|^2) / |u| outside.
        let g_u: Vec<f64> = if norm > 1.0 {
            let dot: f64 = u.iter().zip(&g_h).map(|(a, b)| a * b).sum();
            u.iter().zip(&g_h).map(|(ui, gi)| (gi - dot * ui / (norm * norm)) / norm).collect()
        } else {
            g_h
        };
        g_out = g_u
            .iter()
            .zip(v)
            .map(|(g, &vi)| if vi > 0.0 { *g } else { *g * slope })
            .collect();
    }
    Ok(grad)
}

/// Mean of [`loss_gradient`] over the dataset rows listed in `indices`,
/// accumulated in index order so results are deterministic.
pub fn mean_loss_gradient(
    params: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    alpha: f64,
) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = vec![0.0; params.dim()];
    for &i in indices {
        let g = loss_gradient(params, data.row(i), data.label(i), alpha)?;
        for (a, b) in acc.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / indices.len() as f64;
    for a in acc.iter_mut() {
        *a *= scale;
    }
    Ok(acc)
}

/// Lipschitz constant of the MLP loss with respect to the parameters on the
/// subspace where every weight matrix has Frobenius norm at most 1:
/// alpha sqrt(2 (K + 2)).
#[must_use]
pub fn mlp_loss_lipschitz(alpha: f64, depth: usize) -> f64 {
    alpha * (2.0 * (depth as f64 + 2.0)).sqrt()
}

/// Lipschitz constant of the loss with respect to the parameters:
/// sqrt(2) alpha for the linear model; [`mlp_loss_lipschitz`] for the MLP
/// (valid under its Frobenius-norm hypothesis).
#[must_use]
pub fn loss_lipschitz_const(shape: &ModelShape) -> f64 {
    match shape.kind() {
        ModelKind::Linear => std::f64::consts::SQRT_2 * shape.margin_scale(),
        ModelKind::Mlp { depth, .. } => mlp_loss_lipschitz(shape.margin_scale(), depth),
    }
}

/// Std of the MLP weight initialisation.
pub const MLP_INIT_STD: f64 = 0.04;
/// Clipping interval half-width for MLP weight initialisation.
pub const MLP_INIT_CLIP: f64 = 0.08;
/// Constant first-layer bias at MLP initialisation.
pub const MLP_INIT_FIRST_BIAS: f64 = 0.1;

/// MLP initialisation: every weight entry drawn N(0, 0.04^2) then clipped to
/// [-0.08, 0.08]; biases zero except the first hidden layer's bias entries,
/// all set to 0.1. Deterministic for a fixed seed.
pub fn init_mlp(shape: &ModelShape, seed: u64) -> Result<ModelParams> {
    if !matches!(shape.kind(), ModelKind::Mlp { .. }) {
        return Err(Error::Inconsistent("init_mlp requires an MLP shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, MLP_INIT_STD).expect("valid normal");
    let mut theta = vec![0.0; shape.param_count()];
    let spans = layer_spans(shape);
    for span in &spans {
        for slot in theta[span.w_start..span.w_start + span.rows * span.cols].iter_mut() {
            *slot = normal.sample(&mut rng).clamp(-MLP_INIT_CLIP, MLP_INIT_CLIP);
        }
    }
    let first = spans[0];
    for slot in theta[first.b_start..first.b_start + first.rows].iter_mut() {
        *slot = MLP_INIT_FIRST_BIAS;
    }
    ModelParams::new(shape.clone(), theta)
}

/// Linear initialisation: all zeros.
pub fn init_linear(shape: &ModelShape) -> Result<ModelParams> {
    if shape.kind() != ModelKind::Linear {
        return Err(Error::Inconsistent("init_linear requires a linear shape".into()));
    }
    ModelParams::new(shape.clone(), vec![0.0; shape.param_count()])
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PBCKPT01";

/// Writes a model checkpoint: the 8-byte magic `PBCKPT01`, a shape header,
/// and the flat parameter vector as little-endian f64. See the repository
/// README for the exact layout.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let shape = params.shape();
    let (kind, width, depth) = match shape.kind() {
        ModelKind::Linear => (0u8, 0u32, 0u32),
        ModelKind::Mlp { hidden_width, depth } => (1u8, hidden_width as u32, depth as u32),
    };
    let mut buf = Vec::with_capacity(49 + 8 * params.dim());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(kind);
    buf.extend_from_slice(&(shape.input_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(shape.class_count() as u32).to_le_bytes());
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&depth.to_le_bytes());
    buf.extend_from_slice(&shape.margin_scale().to_le_bytes());
    buf.extend_from_slice(&shape.leaky_slope().to_le_bytes());
    buf.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    for v in params.theta() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    std::fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic (not a PBCKPT01 checkpoint)".into()));
    }
    let kind = take(1)?[0];
    let read_u32 =
        |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let input_dim = read_u32(take(4)?);
    let class_count = read_u32(take(4)?);
    let width = read_u32(take(4)?);
    let depth = read_u32(take(4)?);
    let margin_scale = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let leaky_slope = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let shape = match kind {
        0 => ModelShape::linear(input_dim, class_count, margin_scale),
        1 => ModelShape::mlp(input_dim, class_count, width, depth, margin_scale),
        other => return Err(Error::Checkpoint(format!("unknown model kind {other}"))),
    }?
    .with_leaky_slope(leaky_slope)?;
    if count != shape.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match shape ({})",
            shape.param_count()
        )));
    }
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        theta.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter vector".into()));
    }
    ModelParams::new(shape, theta)
}
