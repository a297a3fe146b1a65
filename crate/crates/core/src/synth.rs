//! Synthetic face-patch videos for benchmarking.
//!
//! Every video has an identity: per region, a smooth random field (a few
//! low-frequency plane waves over a base colour) that drifts slowly from
//! frame to frame. Fake videos add a ripple with a 4 to 6 pixel wavelength
//! under a Gaussian envelope near the patch centre, scaled by the artifact
//! amplitude. All random draws happen for every video in the same order, so
//! at amplitude zero real and fake videos come from the same distribution.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{write_manifest, ManifestEntry, Split, PATCH_CHANNELS, PATCH_SIDE};
use crate::pten::write_patch;
use crate::region::Region;
use crate::tensor::PatchTensor;

const WAVES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Training videos.
    pub n_videos: usize,
    pub n_test_videos: usize,
    pub frames_per_video: usize,
    pub artifact_amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 200,
            n_test_videos: 50,
            frames_per_video: 10,
            artifact_amplitude: 0.0,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.artifact_amplitude >= 0.0 && self.artifact_amplitude.is_finite()) {
            return Err(Error::Config("artifact amplitude must be a finite value >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be a finite value >= 0".into()));
        }
        if self.frames_per_video == 0 {
            return Err(Error::Config("frames_per_video must be positive".into()));
        }
        Ok(())
    }
}

/// One generated video: patches per frame in `Region::ALL` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub split: Split,
    pub label: bool,
    pub frames: Vec<[PatchTensor; 3]>,
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    drift: f64,
    amp: [f64; PATCH_CHANNELS],
}

struct RegionStyle {
    base: [f64; PATCH_CHANNELS],
    waves: Vec<Wave>,
    // artifact
    cx: f64,
    cy: f64,
    kx: f64,
    ky: f64,
    phase: f64,
    width: f64,
    gain: [f64; PATCH_CHANNELS],
}

fn draw_style(rng: &mut ChaCha8Rng) -> RegionStyle {
    let base = std::array::from_fn(|_| rng.gen_range(0.35..0.65));
    let waves = (0..WAVES)
        .map(|_| Wave {
            fx: rng.gen_range(-1.5..1.5),
            fy: rng.gen_range(-1.5..1.5),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            drift: rng.gen_range(-0.2..0.2),
            amp: std::array::from_fn(|_| rng.gen_range(-0.08..0.08)),
        })
        .collect();
    let wavelength = rng.gen_range(4.0..6.0);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let k = std::f64::consts::TAU / wavelength;
    RegionStyle {
        base,
        waves,
        cx: 15.5 + rng.gen_range(-3.0..3.0),
        cy: 15.5 + rng.gen_range(-3.0..3.0),
        kx: k * angle.cos(),
        ky: k * angle.sin(),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        width: rng.gen_range(4.0..6.0),
        gain: std::array::from_fn(|_| rng.gen_range(0.6..1.0)),
    }
}

fn render(
    style: &RegionStyle,
    t: f64,
    jitter: f64,
    amplitude: f64,
    noise: &mut impl FnMut() -> f64,
) -> PatchTensor {
    let side = PATCH_SIDE;
    let mut data = Vec::with_capacity(side * side * PATCH_CHANNELS);
    let two_pi = std::f64::consts::TAU;
    for y in 0..side {
        for x in 0..side {
            let (xf, yf) = (x as f64, y as f64);
            let dx = xf - style.cx;
            let dy = yf - style.cy;
            let ripple = (style.kx * dx + style.ky * dy + style.phase + jitter).sin()
                * (-(dx * dx + dy * dy) / (2.0 * style.width * style.width)).exp();
            for c in 0..PATCH_CHANNELS {
                let mut v = style.base[c];
                for w in &style.waves {
                    let arg = two_pi * (w.fx * xf + w.fy * yf) / side as f64 + w.phase + w.drift * t;
                    v += w.amp[c] * arg.cos();
                }
                v += amplitude * style.gain[c] * ripple;
                v += noise();
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    PatchTensor::new(side, side, PATCH_CHANNELS, data).expect("sizes match")
}

/// Generates video `index` (train videos first, then test videos).
pub fn generate_video(cfg: &SynthConfig, index: usize) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (split, local) = if index < cfg.n_videos {
        (Split::Train, index)
    } else {
        (Split::Test, index - cfg.n_videos)
    };
    let label = local % 2 == 1;
    let styles: Vec<RegionStyle> = Region::ALL.iter().map(|_| draw_style(&mut rng)).collect();
    let amplitude = if label { cfg.artifact_amplitude } else { 0.0 };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let frames = (0..cfg.frames_per_video)
        .map(|f| {
            let t = f as f64;
            std::array::from_fn(|r| {
                let jitter = 0.3 * normal.sample(&mut rng);
                let mut noise = {
                    let rng = &mut rng;
                    let sigma = cfg.noise_sigma;
                    move || sigma * normal.sample(rng)
                };
                render(&styles[r], t, jitter, amplitude, &mut noise)
            })
        })
        .collect();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    SynthVideo {
        video_id: format!("{prefix}_{local:04}"),
        split,
        label,
        frames,
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthVideo>> {
    cfg.validate()?;
    Ok((0..cfg.n_videos + cfg.n_test_videos)
        .into_par_iter()
        .map(|i| generate_video(cfg, i))
        .collect())
}

/// Manifest entries for generated videos, with patch paths under `patches/`.
pub fn manifest_entries(videos: &[SynthVideo]) -> Vec<ManifestEntry> {
    let mut entries = Vec::new();
    for v in videos {
        for f in 0..v.frames.len() {
            for region in Region::ALL {
                entries.push(ManifestEntry {
                    video_id: v.video_id.clone(),
                    frame_index: f as u32,
                    region,
                    label: v.label as u8,
                    patch_path: format!("patches/{}_{f:03}_{region}.pten", v.video_id),
                    split: v.split,
                });
            }
        }
    }
    entries
}

/// Writes PTEN patches and `manifest.jsonl` under `out_dir`; returns the
/// manifest path.
pub fn write_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<std::path::PathBuf> {
    let videos = generate(cfg)?;
    let patch_dir = out_dir.join("patches");
    std::fs::create_dir_all(&patch_dir)
        .map_err(|e| Error::io(format!("creating {}", patch_dir.display()), e))?;
    let entries = manifest_entries(&videos);
    let patches: Vec<&PatchTensor> = videos.iter().flat_map(|v| v.frames.iter().flatten()).collect();
    entries
        .par_iter()
        .zip(patches.par_iter())
        .try_for_each(|(e, p)| write_patch(&out_dir.join(&e.patch_path), p))?;
    let manifest = out_dir.join("manifest.jsonl");
    std::fs::write(&manifest, write_manifest(&entries))
        .map_err(|e| Error::io(format!("writing {}", manifest.display()), e))?;
    Ok(manifest)
}
