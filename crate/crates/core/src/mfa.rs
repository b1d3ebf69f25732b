//! The multi-fusion attentive classifier and its ablation heads.
//!
//! The main head runs one attentive-statistics pooling layer per encoder
//! layer over time (T-ASP), stacks the resulting summary vectors, pools the
//! stack with a second attentive layer (L-ASP), and feeds the fused vector
//! through a small fully connected head producing two logits
//! (index 0 = spoof, index 1 = bonafide).
//!
//! Two simpler heads exist for ablation runs: global average pooling of the
//! final layer (GAP) and per-dimension temporal normalization followed by
//! mean pooling (TN + FC). All heads have hand-written backward passes.

use std::path::Path;

use crate::asp::{asp_backward, asp_forward, AspParams, AspSummary, VAR_EPSILON};
use crate::error::{Error, Result};
use crate::formats::{self, NamedTensor};
use crate::frontend::LayeredEmbeddings;
use crate::kernel::{matvec_row, s, Scalar, Tensor};
use crate::rng::Rng;

/// Which classifier head to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Mfa,
    Gap,
    TnFc,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Mfa => "mfa",
            ClassifierKind::Gap => "gap",
            ClassifierKind::TnFc => "tnfc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mfa" => Some(ClassifierKind::Mfa),
            "gap" => Some(ClassifierKind::Gap),
            "tnfc" => Some(ClassifierKind::TnFc),
            _ => None,
        }
    }
}

/// Two-class output. The countermeasure score is the bonafide logit minus
/// the spoof logit, so higher means more bonafide-like.
#[derive(Clone, Copy, Debug)]
pub struct Logits<T> {
    pub values: [T; 2],
}

impl<T: Scalar> Logits<T> {
    pub fn cm_score(&self) -> T {
        self.values[1] - self.values[0]
    }
}

// ---------------------------------------------------------------------------
// Main head
// ---------------------------------------------------------------------------

/// Parameters of the full classifier: L time-wise pooling layers, one
/// layer-wise pooling layer over the stacked summaries, and two FC layers.
#[derive(Clone, Debug)]
pub struct MfaParams<T> {
    pub tasp: Vec<AspParams<T>>,
    pub lasp: AspParams<T>,
    /// [hidden, 4D] and [hidden].
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    /// [2, hidden] and [2].
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

impl<T: Scalar> MfaParams<T> {
    /// One attention width is shared by the time-wise and layer-wise
    /// poolers; it and the FC hidden width default to the embedding dim.
    pub fn init(layers: usize, dim: usize, attn: usize, hidden: usize, rng: &mut Rng) -> Self {
        let tasp = (0..layers).map(|_| AspParams::init(dim, attn, rng)).collect();
        let lasp = AspParams::init(2 * dim, attn, rng);
        let bound1 = 1.0 / (4.0 * dim as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        MfaParams {
            tasp,
            lasp,
            fc1_w: Tensor::uniform(vec![hidden, 4 * dim], bound1, rng),
            fc1_b: Tensor::uniform(vec![hidden], bound1, rng),
            fc2_w: Tensor::uniform(vec![2, hidden], bound2, rng),
            fc2_b: Tensor::uniform(vec![2], bound2, rng),
        }
    }

    pub fn with_defaults(layers: usize, dim: usize, rng: &mut Rng) -> Self {
        Self::init(layers, dim, dim, dim, rng)
    }

    pub fn num_layers(&self) -> usize {
        self.tasp.len()
    }

    pub fn input_dim(&self) -> usize {
        self.tasp[0].input_dim()
    }

    pub fn hidden_width(&self) -> usize {
        self.fc1_w.dims()[0]
    }

    pub fn param_count(&self) -> usize {
        self.tasp.iter().map(AspParams::param_count).sum::<usize>()
            + self.lasp.param_count()
            + self.fc1_w.len()
            + self.fc1_b.len()
            + self.fc2_w.len()
            + self.fc2_b.len()
    }

    pub fn zeros_like(&self) -> Self {
        MfaParams {
            tasp: self.tasp.iter().map(AspParams::zeros_like).collect(),
            lasp: self.lasp.zeros_like(),
            fc1_w: Tensor::zeros(self.fc1_w.dims().to_vec()),
            fc1_b: Tensor::zeros(self.fc1_b.dims().to_vec()),
            fc2_w: Tensor::zeros(self.fc2_w.dims().to_vec()),
            fc2_b: Tensor::zeros(self.fc2_b.dims().to_vec()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> MfaParams<U> {
        MfaParams {
            tasp: self.tasp.iter().map(AspParams::cast).collect(),
            lasp: self.lasp.cast(),
            fc1_w: self.fc1_w.cast(),
            fc1_b: self.fc1_b.cast(),
            fc2_w: self.fc2_w.cast(),
            fc2_b: self.fc2_b.cast(),
        }
    }

    /// Flat parameter view in checkpoint order.
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(4 * self.tasp.len() + 8);
        for p in &self.tasp {
            out.push(p.w.as_slice());
            out.push(p.b.as_slice());
            out.push(p.v.as_slice());
            out.push(std::slice::from_ref(&p.k));
        }
        out.push(self.lasp.w.as_slice());
        out.push(self.lasp.b.as_slice());
        out.push(self.lasp.v.as_slice());
        out.push(std::slice::from_ref(&self.lasp.k));
        out.push(self.fc1_w.as_slice());
        out.push(self.fc1_b.as_slice());
        out.push(self.fc2_w.as_slice());
        out.push(self.fc2_b.as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(4 * self.tasp.len() + 8);
        for p in &mut self.tasp {
            let AspParams { w, b, v, k } = p;
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
            out.push(v.as_mut_slice());
            out.push(std::slice::from_mut(k));
        }
        let AspParams { w, b, v, k } = &mut self.lasp;
        out.push(w.as_mut_slice());
        out.push(b.as_mut_slice());
        out.push(v.as_mut_slice());
        out.push(std::slice::from_mut(k));
        out.push(self.fc1_w.as_mut_slice());
        out.push(self.fc1_b.as_mut_slice());
        out.push(self.fc2_w.as_mut_slice());
        out.push(self.fc2_b.as_mut_slice());
        out
    }

    /// Checkpoint tensor names in the same order as `param_slices`;
    /// layer indices are 1-based.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 1..=self.tasp.len() {
            for part in ["W", "b", "v", "k"] {
                names.push(format!("tasp.{l}.{part}"));
            }
        }
        for part in ["W", "b", "v", "k"] {
            names.push(format!("lasp.{part}"));
        }
        names.extend(["fc1.W", "fc1.b", "fc2.W", "fc2.b"].map(String::from));
        names
    }
}

/// Activations kept by the forward pass.
#[derive(Clone, Debug)]
pub struct MfaCache<T: Scalar> {
    tasp_summaries: Vec<AspSummary<T>>,
    lasp_summary: AspSummary<T>,
    fused: Tensor<T>,
    hidden: Tensor<T>,
    frames: usize,
}

fn fc_head_forward<T: Scalar>(
    pooled: &[T],
    fc1_w: &Tensor<T>,
    fc1_b: &Tensor<T>,
    fc2_w: &Tensor<T>,
    fc2_b: &Tensor<T>,
) -> (Tensor<T>, Logits<T>) {
    let hidden_width = fc1_w.dims()[0];
    let mut hidden = vec![T::zero(); hidden_width];
    for (i, h) in hidden.iter_mut().enumerate() {
        *h = matvec_row(fc1_w.row(i), pooled, fc1_b.as_slice()[i]).tanh();
    }
    let logits = Logits {
        values: [
            matvec_row(fc2_w.row(0), &hidden, fc2_b.as_slice()[0]),
            matvec_row(fc2_w.row(1), &hidden, fc2_b.as_slice()[1]),
        ],
    };
    (Tensor::from_vec(vec![hidden_width], hidden).unwrap(), logits)
}

/// Returns (g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b, g_pooled).
#[allow(clippy::type_complexity)]
fn fc_head_backward<T: Scalar>(
    grad_logits: [T; 2],
    hidden: &Tensor<T>,
    pooled: &[T],
    fc1_w: &Tensor<T>,
    fc2_w: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>, Vec<T>) {
    let hidden_width = hidden.len();
    let in_width = pooled.len();

    let mut g_fc2_w = Tensor::zeros(vec![2, hidden_width]);
    let g_fc2_b = Tensor::from_vec(vec![2], grad_logits.to_vec()).unwrap();
    let mut g_hidden = vec![T::zero(); hidden_width];
    for i in 0..2 {
        let row = &mut g_fc2_w.as_mut_slice()[i * hidden_width..(i + 1) * hidden_width];
        for j in 0..hidden_width {
            row[j] = grad_logits[i] * hidden.as_slice()[j];
            g_hidden[j] += fc2_w.at2(i, j) * grad_logits[i];
        }
    }

    let mut g_fc1_w = Tensor::zeros(vec![hidden_width, in_width]);
    let mut g_fc1_b = Tensor::zeros(vec![hidden_width]);
    let mut g_pooled = vec![T::zero(); in_width];
    for i in 0..hidden_width {
        let hi = hidden.as_slice()[i];
        let g_pre = g_hidden[i] * (T::one() - hi * hi);
        g_fc1_b.as_mut_slice()[i] = g_pre;
        let row = &mut g_fc1_w.as_mut_slice()[i * in_width..(i + 1) * in_width];
        for j in 0..in_width {
            row[j] = g_pre * pooled[j];
            g_pooled[j] += fc1_w.at2(i, j) * g_pre;
        }
    }
    (g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b, g_pooled)
}

/// Forward pass of the full classifier over an L x T x D stack.
pub fn mfa_forward<T: Scalar>(
    emb: &LayeredEmbeddings<T>,
    params: &MfaParams<T>,
) -> Result<(Logits<T>, MfaCache<T>)> {
    let (l_count, t_len, d) = (emb.num_layers(), emb.num_frames(), emb.dim());
    if l_count != params.num_layers() || d != params.input_dim() {
        return Err(Error::Shape {
            op: "mfa_forward",
            expected: format!("L={}, D={}", params.num_layers(), params.input_dim()),
            got: format!("L={l_count}, D={d}"),
        });
    }

    let mut tasp_summaries = Vec::with_capacity(l_count);
    let mut stacked = Vec::with_capacity(l_count * 2 * d);
    for l in 0..l_count {
        let z = Tensor::from_vec(vec![t_len, d], emb.layer(l).to_vec())?;
        let summary = asp_forward(&z, &params.tasp[l])?;
        stacked.extend_from_slice(summary.r.as_slice());
        tasp_summaries.push(summary);
    }
    let stack = Tensor::from_vec(vec![l_count, 2 * d], stacked)?;
    let lasp_summary = asp_forward(&stack, &params.lasp)?;
    let fused = lasp_summary.r.clone();

    let (hidden, logits) = fc_head_forward(
        fused.as_slice(),
        &params.fc1_w,
        &params.fc1_b,
        &params.fc2_w,
        &params.fc2_b,
    );

    Ok((
        logits,
        MfaCache {
            tasp_summaries,
            lasp_summary,
            fused,
            hidden,
            frames: t_len,
        },
    ))
}

/// Backward pass. Returns gradients for every parameter tensor and for the
/// input stack (the latter is informational while the encoder is frozen).
pub fn mfa_backward<T: Scalar>(
    params: &MfaParams<T>,
    cache: &MfaCache<T>,
    grad_logits: [T; 2],
) -> Result<(MfaParams<T>, Tensor<T>)> {
    let l_count = params.num_layers();
    let d = params.input_dim();
    let t_len = cache.frames;

    let (g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b, g_fused) = fc_head_backward(
        grad_logits,
        &cache.hidden,
        cache.fused.as_slice(),
        &params.fc1_w,
        &params.fc2_w,
    );

    let g_fused = Tensor::from_vec(vec![4 * d], g_fused)?;
    let (g_stack, g_lasp) = asp_backward(&params.lasp, &cache.lasp_summary, &g_fused)?;

    let mut grads = params.zeros_like();
    grads.lasp = g_lasp;
    grads.fc1_w = g_fc1_w;
    grads.fc1_b = g_fc1_b;
    grads.fc2_w = g_fc2_w;
    grads.fc2_b = g_fc2_b;

    let mut grad_h = Tensor::zeros(vec![l_count, t_len, d]);
    for l in 0..l_count {
        let g_r = Tensor::from_vec(vec![2 * d], g_stack.row(l).to_vec())?;
        let (g_z, g_tasp) = asp_backward(&params.tasp[l], &cache.tasp_summaries[l], &g_r)?;
        grads.tasp[l] = g_tasp;
        let span = t_len * d;
        grad_h.as_mut_slice()[l * span..(l + 1) * span].copy_from_slice(g_z.as_slice());
    }

    Ok((grads, grad_h))
}

// ---------------------------------------------------------------------------
// Ablation heads
// ---------------------------------------------------------------------------

/// FC head over a pooled final-layer vector, used by both ablation heads.
#[derive(Clone, Debug)]
pub struct HeadParams<T> {
    /// [hidden, D] and [hidden].
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    /// [2, hidden] and [2].
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

impl<T: Scalar> HeadParams<T> {
    pub fn init(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound1 = 1.0 / (dim as f64).sqrt();
        let bound2 = 1.0 / (hidden as f64).sqrt();
        HeadParams {
            fc1_w: Tensor::uniform(vec![hidden, dim], bound1, rng),
            fc1_b: Tensor::uniform(vec![hidden], bound1, rng),
            fc2_w: Tensor::uniform(vec![2, hidden], bound2, rng),
            fc2_b: Tensor::uniform(vec![2], bound2, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1_w.dims()[1]
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            fc1_w: Tensor::zeros(self.fc1_w.dims().to_vec()),
            fc1_b: Tensor::zeros(self.fc1_b.dims().to_vec()),
            fc2_w: Tensor::zeros(self.fc2_w.dims().to_vec()),
            fc2_b: Tensor::zeros(self.fc2_b.dims().to_vec()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        HeadParams {
            fc1_w: self.fc1_w.cast(),
            fc1_b: self.fc1_b.cast(),
            fc2_w: self.fc2_w.cast(),
            fc2_b: self.fc2_b.cast(),
        }
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        vec![
            self.fc1_w.as_slice(),
            self.fc1_b.as_slice(),
            self.fc2_w.as_slice(),
            self.fc2_b.as_slice(),
        ]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.fc1_w.as_mut_slice(),
            self.fc1_b.as_mut_slice(),
            self.fc2_w.as_mut_slice(),
            self.fc2_b.as_mut_slice(),
        ]
    }
}

/// Activations kept by a baseline forward pass.
#[derive(Clone, Debug)]
pub struct HeadCache<T: Scalar> {
    kind: ClassifierKind,
    pooled: Tensor<T>,
    hidden: Tensor<T>,
    extents: [usize; 3],
}

/// Forward pass of an ablation head over the final encoder layer.
///
/// GAP averages the final layer's frames. TN first z-scores each dimension
/// over time (with the variance floor), then mean-pools over time.
pub fn baseline_forward<T: Scalar>(
    emb: &LayeredEmbeddings<T>,
    kind: ClassifierKind,
    params: &HeadParams<T>,
) -> Result<(Logits<T>, HeadCache<T>)> {
    if kind == ClassifierKind::Mfa {
        return Err(Error::Config("baseline_forward expects gap or tnfc".into()));
    }
    let (l_count, t_len, d) = (emb.num_layers(), emb.num_frames(), emb.dim());
    if d != params.input_dim() {
        return Err(Error::Shape {
            op: "baseline_forward",
            expected: format!("D={}", params.input_dim()),
            got: format!("D={d}"),
        });
    }
    let last = emb.layer(l_count - 1);
    let t_scale = T::one() / s::<T>(t_len as f64);

    let pooled: Vec<T> = match kind {
        ClassifierKind::Gap => {
            let mut p = vec![T::zero(); d];
            for t in 0..t_len {
                for dd in 0..d {
                    p[dd] += last[t * d + dd];
                }
            }
            p.iter_mut().for_each(|x| *x *= t_scale);
            p
        }
        ClassifierKind::TnFc => {
            let eps = s::<T>(VAR_EPSILON);
            let mut p = vec![T::zero(); d];
            for dd in 0..d {
                let mut mean = T::zero();
                for t in 0..t_len {
                    mean += last[t * d + dd];
                }
                mean *= t_scale;
                let mut var = T::zero();
                for t in 0..t_len {
                    let c = last[t * d + dd] - mean;
                    var += c * c;
                }
                var *= t_scale;
                let std = var.max(eps).sqrt();
                let mut acc = T::zero();
                for t in 0..t_len {
                    acc += (last[t * d + dd] - mean) / std;
                }
                p[dd] = acc * t_scale;
            }
            p
        }
        ClassifierKind::Mfa => unreachable!(),
    };

    let pooled = Tensor::from_vec(vec![d], pooled)?;
    let (hidden, logits) = fc_head_forward(
        pooled.as_slice(),
        &params.fc1_w,
        &params.fc1_b,
        &params.fc2_w,
        &params.fc2_b,
    );
    Ok((
        logits,
        HeadCache {
            kind,
            pooled,
            hidden,
            extents: [l_count, t_len, d],
        },
    ))
}

/// Backward pass of an ablation head.
pub fn baseline_backward<T: Scalar>(
    params: &HeadParams<T>,
    cache: &HeadCache<T>,
    grad_logits: [T; 2],
) -> Result<(HeadParams<T>, Tensor<T>)> {
    let [l_count, t_len, d] = cache.extents;
    let (g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b, g_pooled) = fc_head_backward(
        grad_logits,
        &cache.hidden,
        cache.pooled.as_slice(),
        &params.fc1_w,
        &params.fc2_w,
    );
    let grads = HeadParams {
        fc1_w: g_fc1_w,
        fc1_b: g_fc1_b,
        fc2_w: g_fc2_w,
        fc2_b: g_fc2_b,
    };

    let mut grad_h = Tensor::zeros(vec![l_count, t_len, d]);
    match cache.kind {
        ClassifierKind::Gap => {
            let t_scale = T::one() / s::<T>(t_len as f64);
            let base = (l_count - 1) * t_len * d;
            let gh = grad_h.as_mut_slice();
            for t in 0..t_len {
                for dd in 0..d {
                    gh[base + t * d + dd] = g_pooled[dd] * t_scale;
                }
            }
        }
        ClassifierKind::TnFc => {
            // The time-mean of a per-dimension z-score is identically zero
            // as a function of the input, so the input gradient vanishes.
        }
        ClassifierKind::Mfa => unreachable!(),
    }
    Ok((grads, grad_h))
}

// ---------------------------------------------------------------------------
// Unified model wrapper
// ---------------------------------------------------------------------------

/// A trainable classifier of any head kind.
#[derive(Clone, Debug)]
pub enum ModelParams<T: Scalar> {
    Mfa(MfaParams<T>),
    Gap(HeadParams<T>),
    TnFc(HeadParams<T>),
}

/// Forward activations of any head kind.
#[derive(Clone, Debug)]
pub enum ModelCache<T: Scalar> {
    Mfa(MfaCache<T>),
    Head(HeadCache<T>),
}

/// Marker tensor distinguishing the two FC-only heads in checkpoints.
const HEAD_KIND_TENSOR: &str = "head.kind";

impl<T: Scalar> ModelParams<T> {
    pub fn init(kind: ClassifierKind, layers: usize, dim: usize, rng: &mut Rng) -> Self {
        match kind {
            ClassifierKind::Mfa => ModelParams::Mfa(MfaParams::with_defaults(layers, dim, rng)),
            ClassifierKind::Gap => ModelParams::Gap(HeadParams::init(dim, dim, rng)),
            ClassifierKind::TnFc => ModelParams::TnFc(HeadParams::init(dim, dim, rng)),
        }
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            ModelParams::Mfa(_) => ClassifierKind::Mfa,
            ModelParams::Gap(_) => ClassifierKind::Gap,
            ModelParams::TnFc(_) => ClassifierKind::TnFc,
        }
    }

    pub fn forward(&self, emb: &LayeredEmbeddings<T>) -> Result<(Logits<T>, ModelCache<T>)> {
        match self {
            ModelParams::Mfa(p) => {
                let (logits, cache) = mfa_forward(emb, p)?;
                Ok((logits, ModelCache::Mfa(cache)))
            }
            ModelParams::Gap(p) => {
                let (logits, cache) = baseline_forward(emb, ClassifierKind::Gap, p)?;
                Ok((logits, ModelCache::Head(cache)))
            }
            ModelParams::TnFc(p) => {
                let (logits, cache) = baseline_forward(emb, ClassifierKind::TnFc, p)?;
                Ok((logits, ModelCache::Head(cache)))
            }
        }
    }

    pub fn backward(
        &self,
        cache: &ModelCache<T>,
        grad_logits: [T; 2],
    ) -> Result<(ModelParams<T>, Tensor<T>)> {
        match (self, cache) {
            (ModelParams::Mfa(p), ModelCache::Mfa(c)) => {
                let (g, gh) = mfa_backward(p, c, grad_logits)?;
                Ok((ModelParams::Mfa(g), gh))
            }
            (ModelParams::Gap(p), ModelCache::Head(c)) => {
                let (g, gh) = baseline_backward(p, c, grad_logits)?;
                Ok((ModelParams::Gap(g), gh))
            }
            (ModelParams::TnFc(p), ModelCache::Head(c)) => {
                let (g, gh) = baseline_backward(p, c, grad_logits)?;
                Ok((ModelParams::TnFc(g), gh))
            }
            _ => Err(Error::MissingCache("model backward: cache/params mismatch")),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            ModelParams::Mfa(p) => ModelParams::Mfa(p.zeros_like()),
            ModelParams::Gap(p) => ModelParams::Gap(p.zeros_like()),
            ModelParams::TnFc(p) => ModelParams::TnFc(p.zeros_like()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        match self {
            ModelParams::Mfa(p) => ModelParams::Mfa(p.cast()),
            ModelParams::Gap(p) => ModelParams::Gap(p.cast()),
            ModelParams::TnFc(p) => ModelParams::TnFc(p.cast()),
        }
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        match self {
            ModelParams::Mfa(p) => p.param_slices(),
            ModelParams::Gap(p) | ModelParams::TnFc(p) => p.param_slices(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            ModelParams::Mfa(p) => p.param_slices_mut(),
            ModelParams::Gap(p) | ModelParams::TnFc(p) => p.param_slices_mut(),
        }
    }

    /// acc += delta * scale over every parameter.
    pub fn accumulate(&mut self, delta: &ModelParams<T>, scale: T) {
        for (a, b) in self.param_slices_mut().into_iter().zip(delta.param_slices()) {
            for (x, &y) in a.iter_mut().zip(b.iter()) {
                *x += y * scale;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|sl| sl.len()).sum()
    }

    fn head_tensors(p: &HeadParams<T>, kind_value: f32) -> Vec<NamedTensor> {
        vec![
            NamedTensor {
                name: "fc1.W".into(),
                dims: p.fc1_w.dims().to_vec(),
                data: p.fc1_w.cast::<f32>().as_slice().to_vec(),
            },
            NamedTensor {
                name: "fc1.b".into(),
                dims: p.fc1_b.dims().to_vec(),
                data: p.fc1_b.cast::<f32>().as_slice().to_vec(),
            },
            NamedTensor {
                name: "fc2.W".into(),
                dims: p.fc2_w.dims().to_vec(),
                data: p.fc2_w.cast::<f32>().as_slice().to_vec(),
            },
            NamedTensor {
                name: "fc2.b".into(),
                dims: p.fc2_b.dims().to_vec(),
                data: p.fc2_b.cast::<f32>().as_slice().to_vec(),
            },
            NamedTensor {
                name: HEAD_KIND_TENSOR.into(),
                dims: vec![1],
                data: vec![kind_value],
            },
        ]
    }

    /// Serialize to named f32 tensors. The main head uses exactly the
    /// `tasp.<l>.*` / `lasp.*` / `fc1.*` / `fc2.*` names; the FC-only heads
    /// add a `head.kind` marker so checkpoints are self-describing.
    pub fn to_named_tensors(&self) -> Vec<NamedTensor> {
        match self {
            ModelParams::Mfa(p) => {
                let names = p.tensor_names();
                let slices = p.param_slices();
                let mut dims: Vec<Vec<usize>> = Vec::new();
                for t in &p.tasp {
                    dims.push(t.w.dims().to_vec());
                    dims.push(t.b.dims().to_vec());
                    dims.push(t.v.dims().to_vec());
                    dims.push(vec![1]);
                }
                dims.push(p.lasp.w.dims().to_vec());
                dims.push(p.lasp.b.dims().to_vec());
                dims.push(p.lasp.v.dims().to_vec());
                dims.push(vec![1]);
                dims.push(p.fc1_w.dims().to_vec());
                dims.push(p.fc1_b.dims().to_vec());
                dims.push(p.fc2_w.dims().to_vec());
                dims.push(p.fc2_b.dims().to_vec());

                names
                    .into_iter()
                    .zip(slices)
                    .zip(dims)
                    .map(|((name, slice), dims)| NamedTensor {
                        name,
                        dims,
                        data: slice.iter().map(|v| v.to_f64().unwrap() as f32).collect(),
                    })
                    .collect()
            }
            ModelParams::Gap(p) => Self::head_tensors(p, 1.0),
            ModelParams::TnFc(p) => Self::head_tensors(p, 2.0),
        }
    }

    pub fn save_file(&self, path: &Path) -> Result<u64> {
        formats::write_checkpoint_file(&self.to_named_tensors(), path)
    }
}

fn tensor_from_named<T: Scalar>(nt: &NamedTensor, rank: usize) -> Result<Tensor<T>> {
    if nt.dims.len() != rank {
        return Err(Error::Shape {
            op: "load_checkpoint",
            expected: format!("rank {rank} for {:?}", nt.name),
            got: format!("rank {}", nt.dims.len()),
        });
    }
    Tensor::from_vec(
        nt.dims.clone(),
        nt.data.iter().map(|&v| s(f64::from(v))).collect(),
    )
}

fn scalar_from_named<T: Scalar>(nt: &NamedTensor) -> Result<T> {
    if nt.data.len() != 1 {
        return Err(Error::Shape {
            op: "load_checkpoint",
            expected: format!("1 value for {:?}", nt.name),
            got: format!("{} values", nt.data.len()),
        });
    }
    Ok(s(f64::from(nt.data[0])))
}

/// Rebuild a model from checkpoint tensors. Names that do not belong to the
/// reconstructed head are reported, never dropped.
pub fn model_from_named_tensors(tensors: &[NamedTensor]) -> Result<ModelParams<f32>> {
    let mut map = std::collections::HashMap::new();
    for t in tensors {
        if map.insert(t.name.as_str(), t).is_some() {
            return Err(Error::DuplicateTensor(t.name.clone()));
        }
    }

    let mut take = |name: &str| -> Result<&NamedTensor> {
        map.remove(name).ok_or_else(|| Error::MissingTensor(name.into()))
    };

    let is_mfa = tensors.iter().any(|t| t.name.starts_with("tasp."));
    let model = if is_mfa {
        let mut max_layer = 0usize;
        for t in tensors {
            if let Some(rest) = t.name.strip_prefix("tasp.") {
                if let Some((idx, _)) = rest.split_once('.') {
                    if let Ok(i) = idx.parse::<usize>() {
                        max_layer = max_layer.max(i);
                    }
                }
            }
        }
        if max_layer == 0 {
            return Err(Error::MissingTensor("tasp.1.W".into()));
        }
        let mut tasp = Vec::with_capacity(max_layer);
        for l in 1..=max_layer {
            tasp.push(AspParams {
                w: tensor_from_named(take(&format!("tasp.{l}.W"))?, 2)?,
                b: tensor_from_named(take(&format!("tasp.{l}.b"))?, 1)?,
                v: tensor_from_named(take(&format!("tasp.{l}.v"))?, 1)?,
                k: scalar_from_named(take(&format!("tasp.{l}.k"))?)?,
            });
        }
        let lasp = AspParams {
            w: tensor_from_named(take("lasp.W")?, 2)?,
            b: tensor_from_named(take("lasp.b")?, 1)?,
            v: tensor_from_named(take("lasp.v")?, 1)?,
            k: scalar_from_named(take("lasp.k")?)?,
        };
        let params = MfaParams {
            tasp,
            lasp,
            fc1_w: tensor_from_named(take("fc1.W")?, 2)?,
            fc1_b: tensor_from_named(take("fc1.b")?, 1)?,
            fc2_w: tensor_from_named(take("fc2.W")?, 2)?,
            fc2_b: tensor_from_named(take("fc2.b")?, 1)?,
        };
        let d = params.input_dim();
        if params.lasp.input_dim() != 2 * d || params.fc1_w.dims()[1] != 4 * d {
            return Err(Error::Shape {
                op: "load_checkpoint",
                expected: format!("lasp input {}, fc1 input {}", 2 * d, 4 * d),
                got: format!(
                    "lasp input {}, fc1 input {}",
                    params.lasp.input_dim(),
                    params.fc1_w.dims()[1]
                ),
            });
        }
        ModelParams::Mfa(params)
    } else {
        let kind = scalar_from_named::<f32>(take(HEAD_KIND_TENSOR)?)?;
        let params = HeadParams {
            fc1_w: tensor_from_named(take("fc1.W")?, 2)?,
            fc1_b: tensor_from_named(take("fc1.b")?, 1)?,
            fc2_w: tensor_from_named(take("fc2.W")?, 2)?,
            fc2_b: tensor_from_named(take("fc2.b")?, 1)?,
        };
        match kind {
            v if v == 1.0 => ModelParams::Gap(params),
            v if v == 2.0 => ModelParams::TnFc(params),
            v => return Err(Error::Config(format!("unknown head.kind value {v}"))),
        }
    };

    if !map.is_empty() {
        let mut names: Vec<String> = map.keys().map(|s| s.to_string()).collect();
        names.sort();
        return Err(Error::UnknownTensors(names));
    }
    Ok(model)
}

pub fn load_model_file(path: &Path) -> Result<ModelParams<f32>> {
    let tensors = formats::read_checkpoint_file(path)?;
    model_from_named_tensors(&tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{finite_diff_grad, linear, rel_err, tanh};

    fn random_embeddings(l: usize, t: usize, d: usize, seed: u64) -> LayeredEmbeddings<f64> {
        let mut rng = Rng::new(seed);
        let data = (0..l * t * d).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
        LayeredEmbeddings::new(l, t, d, data).unwrap()
    }

    #[test]
    fn zero_weight_head_outputs_biases() {
        let mut rng = Rng::new(1);
        let mut params = MfaParams::<f64>::with_defaults(1, 2, &mut rng);
        params.fc1_w.fill(0.0);
        params.fc1_b.fill(0.0);
        params.fc2_w.fill(0.0);
        params.fc2_b = Tensor::from_vec(vec![2], vec![0.4, -0.9]).unwrap();
        let emb = random_embeddings(1, 1, 2, 2);
        let (logits, _) = mfa_forward(&emb, &params).unwrap();
        assert_eq!(logits.values, [0.4, -0.9]);
        assert!((logits.cm_score() - (-1.3)).abs() < 1e-15);
    }

    #[test]
    fn logits_permutation_invariant_over_frames() {
        let mut rng = Rng::new(3);
        let params = MfaParams::<f64>::with_defaults(3, 4, &mut rng);
        let emb = random_embeddings(3, 6, 4, 4);
        let (base, _) = mfa_forward(&emb, &params).unwrap();

        // Reverse the frame order in every layer.
        let mut data = Vec::new();
        for l in 0..3 {
            for t in (0..6).rev() {
                data.extend_from_slice(emb.frame(l, t));
            }
        }
        let permuted = LayeredEmbeddings::new(3, 6, 4, data).unwrap();
        let (perm, _) = mfa_forward(&permuted, &params).unwrap();
        assert!((base.values[0] - perm.values[0]).abs() < 1e-12);
        assert!((base.values[1] - perm.values[1]).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_composition_of_pooling_and_linear() {
        let mut rng = Rng::new(5);
        let params = MfaParams::<f64>::with_defaults(3, 4, &mut rng);
        let emb = random_embeddings(3, 5, 4, 6);
        let (logits, _) = mfa_forward(&emb, &params).unwrap();

        // Same computation assembled from the public pooling and linear ops.
        let mut stacked = Vec::new();
        for l in 0..3 {
            let z = Tensor::from_vec(vec![5, 4], emb.layer(l).to_vec()).unwrap();
            stacked.extend_from_slice(asp_forward(&z, &params.tasp[l]).unwrap().r.as_slice());
        }
        let stack = Tensor::from_vec(vec![3, 8], stacked).unwrap();
        let fused = asp_forward(&stack, &params.lasp).unwrap().r;
        let hidden = tanh(&linear(&params.fc1_w, &fused, &params.fc1_b).unwrap());
        let out = linear(&params.fc2_w, &hidden, &params.fc2_b).unwrap();

        assert!((logits.values[0] - out.as_slice()[0]).abs() < 1e-13);
        assert!((logits.values[1] - out.as_slice()[1]).abs() < 1e-13);
    }

    #[test]
    fn identical_layers_get_uniform_layer_attention() {
        let mut rng = Rng::new(7);
        let mut params = MfaParams::<f64>::with_defaults(4, 3, &mut rng);
        // Symmetry needs the per-layer poolers to agree as well.
        let shared = params.tasp[0].clone();
        params.tasp.iter_mut().for_each(|p| *p = shared.clone());
        let one_layer = random_embeddings(1, 5, 3, 8);
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(one_layer.layer(0));
        }
        let emb = LayeredEmbeddings::new(4, 5, 3, data).unwrap();
        let (_, cache) = mfa_forward(&emb, &params).unwrap();
        for &a in cache.lasp_summary.alpha.as_slice() {
            assert!((a - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_matches_closed_form() {
        let (l, d, a, d_h) = (3, 5, 4, 6);
        let mut rng = Rng::new(9);
        let params = MfaParams::<f64>::init(l, d, a, d_h, &mut rng);
        let want = l * (a * d + 2 * a + 1) + (a * 2 * d + 2 * a + 1) + (d_h * 4 * d + d_h) + (2 * d_h + 2);
        assert_eq!(params.param_count(), want);
        assert_eq!(ModelParams::Mfa(params).param_count(), want);
    }

    #[test]
    fn backward_zero_upstream_gives_zero() {
        let mut rng = Rng::new(10);
        let params = MfaParams::<f64>::with_defaults(2, 3, &mut rng);
        let emb = random_embeddings(2, 4, 3, 11);
        let (_, cache) = mfa_forward(&emb, &params).unwrap();
        let (grads, grad_h) = mfa_backward(&params, &cache, [0.0, 0.0]).unwrap();
        assert!(grad_h.as_slice().iter().all(|&x| x == 0.0));
        for slice in ModelParams::Mfa(grads).param_slices() {
            assert!(slice.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let params = MfaParams::<f64>::init(2, 3, 3, 4, &mut rng);
        let emb = random_embeddings(2, 3, 3, 13);
        let gl = [0.7, -1.3];

        let objective = |p: &MfaParams<f64>, e: &LayeredEmbeddings<f64>| -> f64 {
            let (logits, _) = mfa_forward(e, p).unwrap();
            gl[0] * logits.values[0] + gl[1] * logits.values[1]
        };

        let (_, cache) = mfa_forward(&emb, &params).unwrap();
        let (grads, grad_h) = mfa_backward(&params, &cache, gl).unwrap();

        // Every parameter tensor, via the flat views.
        let names = params.tensor_names();
        let analytic = ModelParams::Mfa(grads.clone());
        let analytic_slices = analytic.param_slices();
        for (idx, name) in names.iter().enumerate() {
            let base = params.param_slices()[idx].to_vec();
            let probe = Tensor::from_vec(vec![base.len()], base).unwrap();
            let num = finite_diff_grad(
                |t| {
                    let mut p = params.clone();
                    p.param_slices_mut()[idx].copy_from_slice(t.as_slice());
                    Ok(objective(&p, &emb))
                },
                &probe,
                1e-5,
            )
            .unwrap();
            for (a, n) in analytic_slices[idx].iter().zip(num.as_slice()) {
                assert!(rel_err(*a, *n) < 1e-4, "{name}: {a} vs {n}");
            }
        }

        // Input stack.
        let num_h = finite_diff_grad(
            |t| {
                let e = LayeredEmbeddings::from_tensor(t.clone()).unwrap();
                Ok(objective(&params, &e))
            },
            emb.values(),
            1e-5,
        )
        .unwrap();
        for (a, n) in grad_h.as_slice().iter().zip(num_h.as_slice()) {
            assert!(rel_err(*a, *n) < 1e-4, "h: {a} vs {n}");
        }
    }

    #[test]
    fn second_layer_pooler_sees_signal_when_first_layer_is_zero() {
        let mut rng = Rng::new(14);
        let params = MfaParams::<f64>::with_defaults(2, 3, &mut rng);
        let signal = random_embeddings(1, 4, 3, 15);
        let mut data = vec![0.0; 4 * 3];
        data.extend_from_slice(signal.layer(0));
        let emb = LayeredEmbeddings::new(2, 4, 3, data).unwrap();
        let (_, cache) = mfa_forward(&emb, &params).unwrap();
        let (grads, _) = mfa_backward(&params, &cache, [1.0, -1.0]).unwrap();
        let nonzero = grads.tasp[1].w.as_slice().iter().any(|&x| x != 0.0);
        assert!(nonzero, "second-layer pooler gradient is all zero");
    }

    #[test]
    fn gap_on_time_constant_input_equals_head_of_constant() {
        let mut rng = Rng::new(16);
        let params = HeadParams::<f64>::init(3, 3, &mut rng);
        let frame: Vec<f64> = vec![0.3, -1.1, 0.9];
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&frame);
        }
        let emb = LayeredEmbeddings::new(1, 5, 3, data).unwrap();
        let (logits, _) = baseline_forward(&emb, ClassifierKind::Gap, &params).unwrap();

        let p = Tensor::from_vec(vec![3], frame).unwrap();
        let hidden = tanh(&linear(&params.fc1_w, &p, &params.fc1_b).unwrap());
        let want = linear(&params.fc2_w, &hidden, &params.fc2_b).unwrap();
        assert!((logits.values[0] - want.as_slice()[0]).abs() < 1e-12);
        assert!((logits.values[1] - want.as_slice()[1]).abs() < 1e-12);
    }

    #[test]
    fn gap_matches_loop_oracle() {
        let mut rng = Rng::new(17);
        let params = HeadParams::<f64>::init(4, 4, &mut rng);
        let emb = random_embeddings(2, 6, 4, 18);
        let (logits, _) = baseline_forward(&emb, ClassifierKind::Gap, &params).unwrap();

        // Naive mean of the final layer, then the head, all scalar loops.
        let mut p = vec![0.0f64; 4];
        for t in 0..6 {
            for dd in 0..4 {
                p[dd] += emb.frame(1, t)[dd];
            }
        }
        p.iter_mut().for_each(|x| *x /= 6.0);
        let mut hidden = vec![0.0f64; 4];
        for i in 0..4 {
            let mut acc = params.fc1_b.as_slice()[i];
            for j in 0..4 {
                acc += params.fc1_w.at2(i, j) * p[j];
            }
            hidden[i] = acc.tanh();
        }
        for i in 0..2 {
            let mut acc = params.fc2_b.as_slice()[i];
            for j in 0..4 {
                acc += params.fc2_w.at2(i, j) * hidden[j];
            }
            assert!((logits.values[i] - acc).abs() < 1e-13);
        }
    }

    #[test]
    fn tnfc_invariant_to_per_dimension_affine_rescaling() {
        let mut rng = Rng::new(19);
        let params = HeadParams::<f64>::init(3, 3, &mut rng);
        let emb = random_embeddings(1, 8, 3, 20);
        let (base, _) = baseline_forward(&emb, ClassifierKind::TnFc, &params).unwrap();

        let scale = [2.5, 0.4, 7.0];
        let shift = [1.0, -3.0, 0.25];
        let data: Vec<f64> = emb
            .values()
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &v)| scale[i % 3] * v + shift[i % 3])
            .collect();
        let rescaled = LayeredEmbeddings::new(1, 8, 3, data).unwrap();
        let (out, _) = baseline_forward(&rescaled, ClassifierKind::TnFc, &params).unwrap();
        assert!((base.values[0] - out.values[0]).abs() < 1e-6);
        assert!((base.values[1] - out.values[1]).abs() < 1e-6);
    }

    #[test]
    fn baseline_heads_permutation_invariant() {
        let mut rng = Rng::new(21);
        let params = HeadParams::<f64>::init(3, 3, &mut rng);
        let emb = random_embeddings(2, 5, 3, 22);
        let mut data = Vec::new();
        for l in 0..2 {
            for t in (0..5).rev() {
                data.extend_from_slice(emb.frame(l, t));
            }
        }
        let permuted = LayeredEmbeddings::new(2, 5, 3, data).unwrap();
        for kind in [ClassifierKind::Gap, ClassifierKind::TnFc] {
            let (a, _) = baseline_forward(&emb, kind, &params).unwrap();
            let (b, _) = baseline_forward(&permuted, kind, &params).unwrap();
            assert!((a.values[0] - b.values[0]).abs() < 1e-12);
            assert!((a.values[1] - b.values[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let mut rng = Rng::new(23);
        let emb = random_embeddings(2, 4, 3, 24);
        let gl = [1.1, -0.4];
        for kind in [ClassifierKind::Gap, ClassifierKind::TnFc] {
            let params = HeadParams::<f64>::init(3, 4, &mut rng);
            let (_, cache) = baseline_forward(&emb, kind, &params).unwrap();
            let (grads, grad_h) = baseline_backward(&params, &cache, gl).unwrap();

            let objective = |p: &HeadParams<f64>, e: &LayeredEmbeddings<f64>| -> f64 {
                let (logits, _) = baseline_forward(e, kind, p).unwrap();
                gl[0] * logits.values[0] + gl[1] * logits.values[1]
            };

            for (idx, analytic) in grads.param_slices().iter().enumerate() {
                let base = params.param_slices()[idx].to_vec();
                let probe = Tensor::from_vec(vec![base.len()], base).unwrap();
                let num = finite_diff_grad(
                    |t| {
                        let mut p = params.clone();
                        p.param_slices_mut()[idx].copy_from_slice(t.as_slice());
                        Ok(objective(&p, &emb))
                    },
                    &probe,
                    1e-5,
                )
                .unwrap();
                for (a, n) in analytic.iter().zip(num.as_slice()) {
                    assert!(rel_err(*a, *n) < 1e-4, "{kind:?}[{idx}]: {a} vs {n}");
                }
            }

            let num_h = finite_diff_grad(
                |t| {
                    let e = LayeredEmbeddings::from_tensor(t.clone()).unwrap();
                    Ok(objective(&params, &e))
                },
                emb.values(),
                1e-5,
            )
            .unwrap();
            for (a, n) in grad_h.as_slice().iter().zip(num_h.as_slice()) {
                assert!(rel_err(*a, *n) < 1e-4, "{kind:?} input: {a} vs {n}");
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_forward() {
        let mut rng = Rng::new(25);
        let params = MfaParams::<f32>::with_defaults(3, 4, &mut rng);
        let model = ModelParams::Mfa(params);
        let emb = random_embeddings(3, 5, 4, 26).cast::<f32>();
        let (before, _) = model.forward(&emb).unwrap();

        let tensors = model.to_named_tensors();
        let mut buf = Vec::new();
        formats::write_checkpoint(&tensors, &mut buf).unwrap();
        let back = formats::read_checkpoint(&mut buf.as_slice()).unwrap();
        let restored = model_from_named_tensors(&back).unwrap();
        let (after, _) = restored.forward(&emb).unwrap();
        assert_eq!(before.values, after.values);
    }

    #[test]
    fn baseline_checkpoint_roundtrip_keeps_kind() {
        let mut rng = Rng::new(27);
        for kind in [ClassifierKind::Gap, ClassifierKind::TnFc] {
            let model = ModelParams::<f32>::init(kind, 2, 3, &mut rng);
            let restored = model_from_named_tensors(&model.to_named_tensors()).unwrap();
            assert_eq!(restored.kind(), kind);
        }
    }

    #[test]
    fn unknown_tensor_names_are_surfaced() {
        let mut rng = Rng::new(28);
        let model = ModelParams::<f32>::init(ClassifierKind::Mfa, 1, 2, &mut rng);
        let mut tensors = model.to_named_tensors();
        tensors.push(NamedTensor {
            name: "mystery.W".into(),
            dims: vec![1],
            data: vec![0.0],
        });
        match model_from_named_tensors(&tensors) {
            Err(Error::UnknownTensors(names)) => assert_eq!(names, vec!["mystery.W".to_string()]),
            other => panic!("expected UnknownTensors, got {other:?}"),
        }
    }

    #[test]
    fn missing_tensor_is_reported() {
        let mut rng = Rng::new(29);
        let model = ModelParams::<f32>::init(ClassifierKind::Mfa, 2, 2, &mut rng);
        let tensors: Vec<NamedTensor> = model
            .to_named_tensors()
            .into_iter()
            .filter(|t| t.name != "lasp.v")
            .collect();
        assert!(matches!(
            model_from_named_tensors(&tensors),
            Err(Error::MissingTensor(name)) if name == "lasp.v"
        ));
    }
}
