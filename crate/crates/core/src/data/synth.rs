//! Synthetic three-stream dataset with a cross-modal label.
//!
//! Each clip draws a latent `u ~ N(0, I₄)`. Every modality observes a
//! different pair of latent coordinates through a fixed random projection
//! plus per-frame Gaussian noise:
//!
//! | stream | latents  |
//! |--------|----------|
//! | video  | u₁, u₂   |
//! | image  | u₂, u₃   |
//! | text   | u₃, u₄   |
//!
//! Class label: `u₁·u₂ + u₃ > 0`. Regression target:
//! `(tanh(u₁ + u₃), tanh(u₂ + u₄))`. Neither target is a function of any
//! single stream.
//!
//! The labelled latent is only visible during a short event span (shared
//! by all streams, random position per clip), where each stream also
//! carries a fixed marker direction. The remaining frames show a second,
//! unrelated latent drawn per clip, so a model has to find the event
//! rather than average the whole clip.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{write_features, FeatureSequence, Modality};
use super::manifest::{ClipRecord, Label, Manifest, Task, NUM_FOLDS};
use super::sampling::WINDOW;
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 4;

/// Latent coordinates (0-based) visible to each stream.
pub fn latent_subset(m: Modality) -> [usize; 2] {
    match m {
        Modality::Video => [0, 1],
        Modality::Image => [1, 2],
        Modality::Text => [2, 3],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub d_v: usize,
    pub d_i: usize,
    pub d_t: usize,
    pub task: Task,
    pub seed: u64,
    /// Frames per clip.
    pub frames: usize,
    /// Per-frame noise standard deviation.
    pub noise: f64,
    /// Length of the contiguous event span carrying the labelled latent;
    /// frames outside it show an unrelated distractor latent. `0` puts the
    /// labelled latent in every frame.
    pub event_len: usize,
    /// Scale of the fixed per-stream marker added to event frames.
    pub marker: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clips: 2000,
            d_v: 8,
            d_i: 8,
            d_t: 8,
            task: Task::Classification,
            seed: 0,
            frames: WINDOW,
            noise: 0.15,
            event_len: 16,
            marker: 2.0,
        }
    }
}

impl SynthConfig {
    pub fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.d_v,
            Modality::Image => self.d_i,
            Modality::Text => self.d_t,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clips < 10 {
            return Err(Error::Config(format!(
                "n_clips must be >= 10, got {}",
                self.n_clips
            )));
        }
        if [self.d_v, self.d_i, self.d_t].iter().any(|&d| d < 4) {
            return Err(Error::Config("feature dims must be >= 4".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if !self.marker.is_finite() {
            return Err(Error::Config(format!(
                "marker must be finite, got {}",
                self.marker
            )));
        }
        Ok(())
    }
}

pub fn class_label(u: &[f64; LATENT_DIM]) -> u8 {
    u8::from(u[0] * u[1] + u[2] > 0.0)
}

pub fn va_target(u: &[f64; LATENT_DIM]) -> [f64; 2] {
    [(u[0] + u[2]).tanh(), (u[1] + u[3]).tanh()]
}

/// One generated clip held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub latent: [f64; LATENT_DIM],
    pub label: Label,
    /// Frames `[start, end)` of the event span.
    pub event: (usize, usize),
    pub video: FeatureSequence,
    pub image: FeatureSequence,
    pub text: FeatureSequence,
}

/// Fixed per-dataset projections; per stream a `d × 2` latent map followed
/// by a `d`-vector event marker.
struct Projections {
    mats: [Vec<f64>; 3],
}

impl Projections {
    fn draw(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |d: usize| -> Vec<f64> {
            (0..d * 3)
                .map(|_| rng.sample::<f64, _>(StandardNormal) / std::f64::consts::SQRT_2)
                .collect()
        };
        Self {
            mats: [draw(cfg.d_v), draw(cfg.d_i), draw(cfg.d_t)],
        }
    }

    fn get(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Video => &self.mats[0],
            Modality::Image => &self.mats[1],
            Modality::Text => &self.mats[2],
        }
    }
}

/// Frames `[start, end)` that carry the latent signal.
fn event_span(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (usize, usize) {
    if cfg.event_len == 0 || cfg.event_len >= cfg.frames {
        return (0, cfg.frames);
    }
    let start = rng.gen_range(0..=cfg.frames - cfg.event_len);
    (start, start + cfg.event_len)
}

fn stream(
    cfg: &SynthConfig,
    m: Modality,
    proj: &[f64],
    u: &[f64; LATENT_DIM],
    distractor: &[f64; LATENT_DIM],
    span: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<FeatureSequence> {
    let d = cfg.dim(m);
    let [a, b] = latent_subset(m);
    let mut data = Vec::with_capacity(cfg.frames * d);
    for f in 0..cfg.frames {
        let on = f >= span.0 && f < span.1;
        for r in 0..d {
            let signal = if on {
                proj[2 * r] * u[a] + proj[2 * r + 1] * u[b] + cfg.marker * proj[2 * d + r]
            } else {
                proj[2 * r] * distractor[a] + proj[2 * r + 1] * distractor[b]
            };
            let noise: f64 = rng.sample(StandardNormal);
            data.push((signal + cfg.noise * noise) as f32);
        }
    }
    FeatureSequence::new(m, cfg.frames, d, data)
}

/// Generates every clip in memory. Clip `i` draws from its own ChaCha
/// stream of the seed, so any clip range can be produced independently.
pub fn generate_clips(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let mut base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proj = Projections::draw(cfg, &mut base);
    (0..cfg.n_clips)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let mut u = [0.0; LATENT_DIM];
            for x in &mut u {
                *x = rng.sample(StandardNormal);
            }
            let label = match cfg.task {
                Task::Classification => Label::Class(class_label(&u)),
                Task::Regression => Label::Va(va_target(&u)),
            };
            let mut distractor = [0.0; LATENT_DIM];
            for x in &mut distractor {
                *x = rng.sample(StandardNormal);
            }
            let span = event_span(cfg, &mut rng);
            let mut s = |m: Modality| stream(cfg, m, proj.get(m), &u, &distractor, span, &mut rng);
            Ok(SynthClip {
                latent: u,
                label,
                event: span,
                video: s(Modality::Video)?,
                image: s(Modality::Image)?,
                text: s(Modality::Text)?,
            })
        })
        .collect()
}

/// Writes feature files under `out_dir/features/` and the manifest at
/// `out_dir/manifest.jsonl`. Clips are assigned to folds round-robin.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let clips = generate_clips(cfg)?;
    let feat_dir = out_dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut records = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let id = format!("clip{i:05}");
        let rel = |m: Modality| PathBuf::from("features").join(format!("{id}.{m}.mmfb"));
        for (m, seq) in [
            (Modality::Video, &clip.video),
            (Modality::Image, &clip.image),
            (Modality::Text, &clip.text),
        ] {
            write_features(&out_dir.join(rel(m)), seq)?;
        }
        records.push(ClipRecord {
            fold: (i as u32 % NUM_FOLDS) + 1,
            label: clip.label,
            video: rel(Modality::Video),
            image: rel(Modality::Image),
            text: rel(Modality::Text),
            id,
        });
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
