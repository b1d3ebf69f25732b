//! Supervised training: class-weighted softmax cross-entropy, Adam with
//! bias correction, a step learning-rate schedule, deterministic seeded
//! batching, and best/final checkpoint selection.
//!
//! Given the same seed, dataset, and config, the sequence of parameter
//! updates is identical run to run.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::formats::{Label, ManifestEntry, ScoreRecord};
use crate::frontend::{preprocess, LayeredEmbeddings, PreprocConfig, ToyEncoder};
use crate::kernel::{s, Scalar};
use crate::mfa::{ClassifierKind, Logits, ModelParams};
use crate::rng::Rng;

/// Hyperparameters of one training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch: usize,
    pub step_size: usize,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_steps: usize,
    pub seed: u64,
    /// Loss weights per class, indexed like logits (spoof, bonafide).
    pub class_weights: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.003,
            batch: 32,
            step_size: 3200,
            gamma: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_steps: 16_000,
            seed: 0,
            class_weights: [1.0, 1.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch == 0 || self.step_size == 0 {
            return Err(Error::Config("batch and step_size must be >= 1".into()));
        }
        if self.class_weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant decay: lr0 * gamma^floor(step / step_size).
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.gamma.powi((step / cfg.step_size) as i32)
}

/// Class-weighted negative log-likelihood of the labeled class, with the
/// exact gradient w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(
    logits: &Logits<T>,
    label: Label,
    class_weights: [T; 2],
) -> (T, [T; 2]) {
    let [a, b] = logits.values;
    let max = a.max(b);
    let lse = max + ((a - max).exp() + (b - max).exp()).ln();
    let idx = label.class_index();
    let w = class_weights[idx];
    let loss = w * (lse - logits.values[idx]);

    let p = [(a - lse).exp(), (b - lse).exp()];
    let mut grad = [w * p[0], w * p[1]];
    grad[idx] -= w;
    (loss, grad)
}

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    /// Completed steps; bias correction uses t starting at 1.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new_for(param_slices: &[&[T]]) -> Self {
        AdamState {
            m: param_slices.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: param_slices.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
        }
    }

    /// One optimizer step over every parameter tensor.
    pub fn step(&mut self, model: &mut ModelParams<T>, grads: &ModelParams<T>, lr: f64, cfg: &TrainConfig) -> Result<()> {
        self.t += 1;
        let mut params = model.param_slices_mut();
        let grad_slices = grads.param_slices();
        if params.len() != grad_slices.len() {
            return Err(Error::Shape {
                op: "adam_step",
                expected: format!("{} tensors", params.len()),
                got: format!("{} tensors", grad_slices.len()),
            });
        }
        for (i, (p, g)) in params.iter_mut().zip(grad_slices).enumerate() {
            adam_update(
                p,
                g,
                &mut self.m[i],
                &mut self.v[i],
                self.t,
                s(lr),
                s(cfg.beta1),
                s(cfg.beta2),
                s(cfg.eps_adam),
            )?;
        }
        Ok(())
    }
}

/// Adam update of one parameter slice with bias correction:
/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != m.len() || param.len() != v.len() {
        return Err(Error::Shape {
            op: "adam_update",
            expected: format!("{} values", param.len()),
            got: format!("{} grads, {} m, {} v", grad.len(), m.len(), v.len()),
        });
    }
    let one = T::one();
    let bc1 = one - beta1.powi(t as i32);
    let bc2 = one - beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

/// Resolves a manifest entry to its embedding stack.
pub trait EmbeddingSource: Sync {
    fn load(&self, entry: &ManifestEntry) -> Result<LayeredEmbeddings<f32>>;
}

/// Reads pre-extracted embedding files relative to a root directory.
pub struct LebDirSource {
    pub root: PathBuf,
}

impl EmbeddingSource for LebDirSource {
    fn load(&self, entry: &ManifestEntry) -> Result<LayeredEmbeddings<f32>> {
        crate::formats::read_leb_file(&self.root.join(&entry.path))
    }
}

/// Encodes WAV files on the fly with a frozen encoder.
pub struct WavDirSource {
    pub root: PathBuf,
    pub preproc: PreprocConfig,
    pub encoder: ToyEncoder,
}

impl EmbeddingSource for WavDirSource {
    fn load(&self, entry: &ManifestEntry) -> Result<LayeredEmbeddings<f32>> {
        let wave = crate::frontend::read_wav(&self.root.join(&entry.path))?;
        let samples = preprocess(&wave, &self.preproc)?;
        self.encoder.encode(&samples)
    }
}

/// Load every entry, optionally with a capped worker pool. Results are
/// keyed by index, so the output order never depends on thread timing.
pub fn load_all(
    entries: &[ManifestEntry],
    source: &dyn EmbeddingSource,
    threads: usize,
) -> Result<Vec<LayeredEmbeddings<f32>>> {
    let threads = threads.max(1).min(entries.len().max(1));
    if threads == 1 {
        return entries.iter().map(|e| source.load(e)).collect();
    }
    let mut slots: Vec<Option<Result<LayeredEmbeddings<f32>>>> =
        (0..entries.len()).map(|_| None).collect();
    let chunk = entries.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (entry_chunk, slot_chunk) in entries.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (e, slot) in entry_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(source.load(e));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One log line per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// TSV lines `step<TAB>lr<TAB>loss`.
pub fn format_train_log(log: &[TrainLogEntry]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&format!("{}\t{:.6}\t{:.6}\n", e.step, e.lr, e.loss));
    }
    out
}

/// Final model, the best-loss model seen, and the full loss log.
pub struct TrainOutcome<T: Scalar> {
    pub final_model: ModelParams<T>,
    pub best_model: ModelParams<T>,
    pub best_step: usize,
    pub best_loss: f64,
    pub log: Vec<TrainLogEntry>,
}

/// Train a classifier over preloaded embeddings (index-aligned with the
/// manifest entries). Epochs are seeded shuffles; the last short batch of
/// an epoch is used as-is; each step applies Adam to the mean gradient of
/// its batch.
pub fn train<T: Scalar>(
    entries: &[ManifestEntry],
    embeddings: &[LayeredEmbeddings<T>],
    cfg: &TrainConfig,
    kind: ClassifierKind,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if entries.is_empty() {
        return Err(Error::Dataset("empty manifest".into()));
    }
    if entries.len() != embeddings.len() {
        return Err(Error::Dataset(format!(
            "{} manifest entries but {} embedding stacks",
            entries.len(),
            embeddings.len()
        )));
    }
    let n_bona = entries.iter().filter(|e| e.label == Label::Bonafide).count();
    if n_bona == 0 || n_bona == entries.len() {
        return Err(Error::Dataset("training needs both classes present".into()));
    }
    let (l_count, t_len, d) = (
        embeddings[0].num_layers(),
        embeddings[0].num_frames(),
        embeddings[0].dim(),
    );
    for (e, emb) in entries.iter().zip(embeddings) {
        if emb.num_layers() != l_count || emb.num_frames() != t_len || emb.dim() != d {
            return Err(Error::Dataset(format!(
                "inconsistent extents for {:?}: [{}, {}, {}] vs [{l_count}, {t_len}, {d}]",
                e.utt_id,
                emb.num_layers(),
                emb.num_frames(),
                emb.dim()
            )));
        }
    }

    let mut rng = Rng::new(cfg.seed);
    let mut model = ModelParams::<T>::init(kind, l_count, d, &mut rng);
    let mut adam = AdamState::new_for(&model.param_slices());
    let weights = [s::<T>(cfg.class_weights[0]), s::<T>(cfg.class_weights[1])];

    let mut order: Vec<usize> = (0..entries.len()).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let mut log = Vec::with_capacity(cfg.max_steps);
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0usize;
    let mut best_model = model.clone();

    for step in 0..cfg.max_steps {
        if cursor >= order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let batch = &order[cursor..(cursor + cfg.batch).min(order.len())];
        cursor += batch.len();

        let inv_batch = s::<T>(1.0 / batch.len() as f64);
        let mut grads = model.zeros_like();
        let mut loss_sum = 0.0f64;
        for &idx in batch {
            let (logits, cache) = model.forward(&embeddings[idx])?;
            let (loss, grad_logits) = cross_entropy(&logits, entries[idx].label, weights);
            loss_sum += loss.to_f64().unwrap();
            let scaled = [grad_logits[0] * inv_batch, grad_logits[1] * inv_batch];
            let (g, _) = model.backward(&cache, scaled)?;
            grads.accumulate(&g, T::one());
        }
        let mean_loss = loss_sum / batch.len() as f64;
        let lr = lr_at(step, cfg);
        adam.step(&mut model, &grads, lr, cfg)?;
        log.push(TrainLogEntry {
            step,
            lr,
            loss: mean_loss,
        });

        if mean_loss < best_loss {
            best_loss = mean_loss;
            best_step = step;
            best_model = model.clone();
        }
    }

    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_step,
        best_loss,
        log,
    })
}

/// Load embeddings from a source, then train. This is the path the command
/// line uses; `threads` caps the loader pool.
pub fn train_from_source<T: Scalar>(
    entries: &[ManifestEntry],
    source: &dyn EmbeddingSource,
    cfg: &TrainConfig,
    kind: ClassifierKind,
    threads: usize,
) -> Result<TrainOutcome<T>> {
    let raw = load_all(entries, source, threads)?;
    let embeddings: Vec<LayeredEmbeddings<T>> = raw.iter().map(|e| e.cast()).collect();
    train(entries, &embeddings, cfg, kind)
}

/// Countermeasure score per utterance, in manifest order.
pub fn score_all<T: Scalar>(
    model: &ModelParams<T>,
    entries: &[ManifestEntry],
    embeddings: &[LayeredEmbeddings<T>],
) -> Result<Vec<ScoreRecord>> {
    entries
        .iter()
        .zip(embeddings)
        .map(|(e, emb)| {
            let (logits, _) = model.forward(emb)?;
            Ok(ScoreRecord {
                utt_id: e.utt_id.clone(),
                score: logits.cm_score().to_f64().unwrap(),
            })
        })
        .collect()
}
