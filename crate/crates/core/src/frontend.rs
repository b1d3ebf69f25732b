//! Waveform preprocessing and a deterministic frozen toy encoder.
//!
//! The encoder stands in for a large self-supervised speech model: it turns a
//! fixed-length sample sequence into a stack of per-layer frame embeddings.
//! Its weights are drawn once from a seed and never trained, so the only
//! trainable surface in this crate is the classifier on top.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{matvec_row, Scalar, Tensor};
use crate::rng::Rng;

/// Mono audio signal.
#[derive(Clone, Debug)]
pub struct Waveform {
    /// Samples in [-1, 1].
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

/// Pre-emphasis + length normalization settings.
#[derive(Clone, Copy, Debug)]
pub struct PreprocConfig {
    /// First-difference filter coefficient: y[n] = x[n] - c * x[n-1].
    pub pre_emphasis: f64,
    /// Output sample count (about 4 s at 16 kHz).
    pub target_len: usize,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            pre_emphasis: 0.97,
            target_len: 64_600,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::Config(format!(
                "pre_emphasis must be in [0, 1), got {}",
                self.pre_emphasis
            )));
        }
        if self.target_len == 0 {
            return Err(Error::Config("target_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Frozen encoder settings.
#[derive(Clone, Copy, Debug)]
pub struct ToyEncoderConfig {
    pub seed: u64,
    /// Number of residual layers L in the output stack.
    pub layers: usize,
    /// Embedding width D.
    pub dim: usize,
    /// Frame window in samples.
    pub win: usize,
    /// Frame hop in samples (20 ms at 16 kHz).
    pub hop: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            seed: 0,
            layers: 4,
            dim: 16,
            win: 400,
            hop: 320,
        }
    }
}

impl ToyEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 {
            return Err(Error::Config(format!(
                "encoder layers and dim must be >= 1, got L={}, D={}",
                self.layers, self.dim
            )));
        }
        if self.hop == 0 || self.win < self.hop {
            return Err(Error::Config(format!(
                "require win >= hop >= 1, got win={}, hop={}",
                self.win, self.hop
            )));
        }
        Ok(())
    }
}

/// L x T x D stack of frame representations, layer index outermost.
///
/// Layer l of the stack (0-based here) holds the l+1-th residual layer's
/// output for every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredEmbeddings<T: Scalar = f32> {
    values: Tensor<T>,
}

impl<T: Scalar> LayeredEmbeddings<T> {
    pub fn new(layers: usize, frames: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        let values = Tensor::from_vec(vec![layers, frames, dim], data)?;
        Ok(LayeredEmbeddings { values })
    }

    pub fn from_tensor(values: Tensor<T>) -> Result<Self> {
        if values.dims().len() != 3 {
            return Err(Error::Shape {
                op: "LayeredEmbeddings::from_tensor",
                expected: "rank 3 [L, T, D]".into(),
                got: format!("{:?}", values.dims()),
            });
        }
        Ok(LayeredEmbeddings { values })
    }

    pub fn num_layers(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.dims()[2]
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    /// All frames of one layer (0-based), as a T*D slice.
    pub fn layer(&self, layer: usize) -> &[T] {
        let span = self.num_frames() * self.dim();
        &self.values.as_slice()[layer * span..(layer + 1) * span]
    }

    /// One frame of one layer (0-based), as a D slice.
    pub fn frame(&self, layer: usize, frame: usize) -> &[T] {
        let d = self.dim();
        let start = (layer * self.num_frames() + frame) * d;
        &self.values.as_slice()[start..start + d]
    }

    pub fn cast<U: Scalar>(&self) -> LayeredEmbeddings<U> {
        LayeredEmbeddings {
            values: self.values.cast(),
        }
    }
}

/// Pre-emphasize and fit to the configured length.
///
/// The filter is y[0] = x[0], y[n] = x[n] - c * x[n-1]. Longer signals are
/// truncated to the first target_len samples; shorter ones are repeated
/// cyclically until the target is reached.
pub fn preprocess(wave: &Waveform, cfg: &PreprocConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    if wave.samples.is_empty() {
        return Err(Error::EmptyInput("preprocess"));
    }
    let coef = cfg.pre_emphasis as f32;
    let x = &wave.samples;
    let mut y = Vec::with_capacity(x.len().max(cfg.target_len));
    y.push(x[0]);
    for n in 1..x.len() {
        y.push(x[n] - coef * x[n - 1]);
    }
    if y.len() >= cfg.target_len {
        y.truncate(cfg.target_len);
    } else {
        let base = y.len();
        while y.len() < cfg.target_len {
            y.push(y[y.len() - base]);
        }
    }
    Ok(y)
}

/// Frozen random-feature encoder.
///
/// Frames go through one input projection with tanh, then L residual tanh
/// layers: h_l = tanh(W_l h_{l-1} + b_l) + h_{l-1}. The output stack holds
/// layers 1..=L, so every entry of stored layer l (1-based) is bounded by
/// l + 1 in magnitude.
pub struct ToyEncoder {
    cfg: ToyEncoderConfig,
    w_in: Tensor<f32>,
    b_in: Tensor<f32>,
    w_layers: Vec<Tensor<f32>>,
    b_layers: Vec<Tensor<f32>>,
}

impl ToyEncoder {
    pub fn new(cfg: &ToyEncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let bound_in = 1.0 / (cfg.win as f64).sqrt();
        let w_in = Tensor::uniform(vec![cfg.dim, cfg.win], bound_in, &mut rng);
        let b_in = Tensor::uniform(vec![cfg.dim], bound_in, &mut rng);
        let bound = 1.0 / (cfg.dim as f64).sqrt();
        let mut w_layers = Vec::with_capacity(cfg.layers);
        let mut b_layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            w_layers.push(Tensor::uniform(vec![cfg.dim, cfg.dim], bound, &mut rng));
            b_layers.push(Tensor::uniform(vec![cfg.dim], bound, &mut rng));
        }
        Ok(ToyEncoder {
            cfg: *cfg,
            w_in,
            b_in,
            w_layers,
            b_layers,
        })
    }

    pub fn config(&self) -> &ToyEncoderConfig {
        &self.cfg
    }

    /// Number of frames produced for a given sample count.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        if len < self.cfg.win {
            return Err(Error::Shape {
                op: "encode",
                expected: format!(">= {} samples (window)", self.cfg.win),
                got: format!("{len} samples"),
            });
        }
        Ok(1 + (len - self.cfg.win) / self.cfg.hop)
    }

    pub fn encode(&self, samples: &[f32]) -> Result<LayeredEmbeddings<f32>> {
        let t_frames = self.frame_count(samples.len())?;
        let d = self.cfg.dim;
        let l_count = self.cfg.layers;

        // h0: input projection of each frame.
        let mut prev = vec![0.0f32; t_frames * d];
        for t in 0..t_frames {
            let frame = &samples[t * self.cfg.hop..t * self.cfg.hop + self.cfg.win];
            for i in 0..d {
                prev[t * d + i] =
                    matvec_row(self.w_in.row(i), frame, self.b_in.as_slice()[i]).tanh();
            }
        }

        let mut stack = Vec::with_capacity(l_count * t_frames * d);
        for l in 0..l_count {
            let w = &self.w_layers[l];
            let b = &self.b_layers[l];
            let mut cur = vec![0.0f32; t_frames * d];
            for t in 0..t_frames {
                let h_prev = &prev[t * d..(t + 1) * d];
                for i in 0..d {
                    cur[t * d + i] =
                        matvec_row(w.row(i), h_prev, b.as_slice()[i]).tanh() + h_prev[i];
                }
            }
            stack.extend_from_slice(&cur);
            prev = cur;
        }
        LayeredEmbeddings::new(l_count, t_frames, d, stack)
    }
}

/// Read a mono 16 kHz PCM16 RIFF/WAVE file. Other rates, channel counts,
/// sample formats, or malformed containers are rejected.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path)?;
    parse_wav(&bytes)
}

pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    fn take<'a>(bytes: &'a [u8], at: usize, n: usize) -> Result<&'a [u8]> {
        bytes.get(at..at + n).ok_or(Error::Truncated {
            what: "wav",
            needed: at + n,
            available: bytes.len(),
        })
    }
    fn le_u32(b: &[u8]) -> u32 {
        u32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
    fn le_u16(b: &[u8]) -> u16 {
        u16::from_le_bytes([b[0], b[1]])
    }

    if take(bytes, 0, 4)? != b"RIFF" || take(bytes, 8, 4)? != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = take(bytes, pos, 4)?;
        let size = le_u32(take(bytes, pos + 4, 4)?) as usize;
        let body = take(bytes, pos + 8, size)?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Wav("fmt chunk too short".into()));
                }
                fmt = Some((
                    le_u16(&body[0..2]),
                    le_u16(&body[2..4]),
                    le_u32(&body[4..8]),
                    le_u16(&body[14..16]),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1); // chunks are word-aligned
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    if format != 1 || bits != 16 {
        return Err(Error::Wav(format!(
            "only PCM16 supported, got format={format}, bits={bits}"
        )));
    }
    if channels != 1 {
        return Err(Error::Wav(format!("only mono supported, got {channels} channels")));
    }
    if rate != 16_000 {
        return Err(Error::Wav(format!("only 16000 Hz supported, got {rate} Hz")));
    }
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Wav("odd data chunk length for PCM16".into()));
    }
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect();
    if samples.is_empty() {
        return Err(Error::Wav("empty data chunk".into()));
    }
    Ok(Waveform {
        samples,
        sample_rate: rate,
    })
}

/// Read a WAV from any reader (used for in-memory fixtures).
pub fn read_wav_from(mut r: impl Read) -> Result<Waveform> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}
