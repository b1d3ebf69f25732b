//! Synthetic layered-embedding datasets with a closed-form separability
//! oracle.
//!
//! Frames are isotropic Gaussians with a rank-one class mean shift of
//! ±delta/2 along the fixed unit direction u = (1, ..., 1)/sqrt(D). The
//! shift can cover everything, a single layer, or only a leading fraction
//! of frames, which is what makes the fusing classifier distinguishable
//! from a final-layer average-pooling head in tests.

use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::{self, Label, ManifestEntry};
use crate::frontend::LayeredEmbeddings;
use crate::rng::Rng;

/// Where the class mean shift is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthMode {
    /// Every layer and frame.
    GlobalShift,
    /// Only layer j (1-based); other layers are pure noise.
    LayerSparse { layer: usize },
    /// Only the first ceil(rho * T) frames of every layer.
    TimeSparse { rho: f64 },
}

impl SynthMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthMode::GlobalShift => "global_shift",
            SynthMode::LayerSparse { .. } => "layer_sparse",
            SynthMode::TimeSparse { .. } => "time_sparse",
        }
    }
}

/// Generation settings.
#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub layers: usize,
    pub frames: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub mode: SynthMode,
    /// Euclidean class mean separation along u.
    pub delta: f64,
    /// Per-frame per-dimension Gaussian noise std.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.frames == 0 || self.dim == 0 || self.n_per_class == 0 {
            return Err(Error::Config("synth extents must all be >= 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.noise <= 0.0 {
            return Err(Error::Config(format!("noise must be > 0, got {}", self.noise)));
        }
        match self.mode {
            SynthMode::LayerSparse { layer } if layer < 1 || layer > self.layers => {
                Err(Error::Config(format!(
                    "layer_sparse layer must be in 1..={}, got {layer}",
                    self.layers
                )))
            }
            SynthMode::TimeSparse { rho } if !(rho > 0.0 && rho <= 1.0) => Err(Error::Config(
                format!("time_sparse rho must be in (0, 1], got {rho}"),
            )),
            _ => Ok(()),
        }
    }

    /// The fixed unit shift direction.
    pub fn direction(&self) -> Vec<f64> {
        vec![1.0 / (self.dim as f64).sqrt(); self.dim]
    }

    /// Key=value echo written next to the manifest.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("l={}\n", self.layers));
        out.push_str(&format!("t={}\n", self.frames));
        out.push_str(&format!("d={}\n", self.dim));
        out.push_str(&format!("n_per_class={}\n", self.n_per_class));
        out.push_str(&format!("mode={}\n", self.mode.as_str()));
        match self.mode {
            SynthMode::LayerSparse { layer } => out.push_str(&format!("layer={layer}\n")),
            SynthMode::TimeSparse { rho } => out.push_str(&format!("rho={rho}\n")),
            SynthMode::GlobalShift => {}
        }
        out.push_str(&format!("delta={}\n", self.delta));
        out.push_str(&format!("noise={}\n", self.noise));
        out.push_str(&format!("seed={}\n", self.seed));
        out
    }
}

/// Sample one utterance's embedding stack.
fn sample_stack(cfg: &SynthConfig, label: Label, rng: &mut Rng) -> LayeredEmbeddings<f32> {
    let (l_count, t_len, d) = (cfg.layers, cfg.frames, cfg.dim);
    let sign = match label {
        Label::Bonafide => 0.5,
        Label::Spoof => -0.5,
    };
    let u = 1.0 / (d as f64).sqrt();
    let shift = sign * cfg.delta * u;
    let active_frames = match cfg.mode {
        SynthMode::TimeSparse { rho } => (rho * t_len as f64).ceil() as usize,
        _ => t_len,
    };

    let mut data = Vec::with_capacity(l_count * t_len * d);
    for l in 0..l_count {
        let layer_active = match cfg.mode {
            SynthMode::LayerSparse { layer } => l + 1 == layer,
            _ => true,
        };
        for t in 0..t_len {
            let frame_active = layer_active && t < active_frames;
            for _ in 0..d {
                let mean = if frame_active { shift } else { 0.0 };
                data.push((mean + cfg.noise * rng.next_gaussian()) as f32);
            }
        }
    }
    LayeredEmbeddings::new(l_count, t_len, d, data).expect("validated extents")
}

/// Generate the dataset in memory: balanced labels, bonafide block first,
/// one seeded stream in manifest order.
pub fn generate_in_memory(
    cfg: &SynthConfig,
) -> Result<(Vec<ManifestEntry>, Vec<LayeredEmbeddings<f32>>)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut entries = Vec::with_capacity(2 * cfg.n_per_class);
    let mut stacks = Vec::with_capacity(2 * cfg.n_per_class);
    for label in [Label::Bonafide, Label::Spoof] {
        let prefix = match label {
            Label::Bonafide => "bona",
            Label::Spoof => "spoof",
        };
        for i in 0..cfg.n_per_class {
            entries.push(ManifestEntry {
                utt_id: format!("{prefix}_{i:04}"),
                path: format!("leb/{prefix}_{i:04}.leb"),
                label,
            });
            stacks.push(sample_stack(cfg, label, &mut rng));
        }
    }
    Ok((entries, stacks))
}

/// Generate and write the dataset: `manifest.tsv`, `synth_config.txt`, and
/// one embedding file per utterance under `leb/`.
pub fn generate(cfg: &SynthConfig, dest: &Path) -> Result<Vec<ManifestEntry>> {
    let (entries, stacks) = generate_in_memory(cfg)?;
    std::fs::create_dir_all(dest.join("leb"))?;
    for (entry, stack) in entries.iter().zip(&stacks) {
        formats::write_leb_file(stack, &dest.join(&entry.path))?;
    }
    formats::write_manifest_file(&entries, &dest.join("manifest.tsv"))?;
    std::fs::write(dest.join("synth_config.txt"), cfg.to_kv())?;
    Ok(entries)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Analytic equal error rate of the best mean-pooled detector on a
/// global-shift dataset: Phi(-delta * sqrt(T) / (2 * noise)).
///
/// Averaging T frames shrinks the noise along u by sqrt(T) while the class
/// means stay ±delta/2 apart, so thresholding the pooled projection at zero
/// errs with exactly this probability.
pub fn reference_eer(cfg: &SynthConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.mode != SynthMode::GlobalShift {
        return Err(Error::Config(
            "reference_eer is defined for global_shift only".into(),
        ));
    }
    Ok(normal_cdf(-cfg.delta * (cfg.frames as f64).sqrt() / (2.0 * cfg.noise)))
}
