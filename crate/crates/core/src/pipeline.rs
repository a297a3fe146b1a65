//! End-to-end training and scoring.

use std::time::{Duration, Instant};

use crate::config::Config;
use crate::cwsaab::{CwSaabTree, N_HOPS};
use crate::distill::{Distiller, PatchDescriptor};
use crate::ensemble::{fit_final, group_frames, score_videos, FrameRecord, MissingRegions, VideoScore};
use crate::error::{Error, Result};
use crate::gboost::BoostedClassifier;
use crate::manifest::Sample;
use crate::region::Region;

#[derive(Debug, Clone, PartialEq)]
pub struct RegionModel {
    pub region: Region,
    pub tree: CwSaabTree,
    pub distiller: Distiller,
    /// Mean training descriptor, used for frames missing this region.
    pub mean_descriptor: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefakeHopModel {
    pub config: Config,
    /// One per region, in `Region::ALL` order.
    pub regions: Vec<RegionModel>,
    pub final_classifier: BoostedClassifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub region: Region,
    pub patches: usize,
    pub channels_per_hop: [usize; N_HOPS],
    pub pca_kept: [usize; N_HOPS],
    pub descriptor_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub regions: Vec<RegionSummary>,
    pub videos: usize,
    pub frames: usize,
    pub ensemble_dim: usize,
    pub timings: Vec<(String, Duration)>,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in &self.regions {
            writeln!(
                f,
                "{:<9} patches {:>6}  channels {:?}  pca kept {:?}  descriptor dim {}",
                r.region.as_str(),
                r.patches,
                r.channels_per_hop,
                r.pca_kept,
                r.descriptor_dim
            )?;
        }
        writeln!(
            f,
            "ensemble: {} videos, {} frames, vector dim {}",
            self.videos, self.frames, self.ensemble_dim
        )?;
        for (stage, t) in &self.timings {
            writeln!(f, "time {stage:<22} {:>8.2}s", t.as_secs_f64())?;
        }
        Ok(())
    }
}

/// Samples sorted by `(video_id, frame_index, region)` so that fits do not
/// depend on manifest order.
fn canonical(samples: &[Sample]) -> Vec<&Sample> {
    let mut v: Vec<&Sample> = samples.iter().collect();
    v.sort_by(|a, b| {
        (&a.video_id, a.frame_index, a.region).cmp(&(&b.video_id, b.frame_index, b.region))
    });
    v
}

fn frame_records(samples: &[&Sample], descriptors: &[PatchDescriptor]) -> Vec<FrameRecord> {
    let mut frames: Vec<FrameRecord> = Vec::new();
    for (s, d) in samples.iter().zip(descriptors) {
        let same = frames
            .last()
            .is_some_and(|f| f.video_id == s.video_id && f.frame_index == s.frame_index);
        if !same {
            frames.push(FrameRecord {
                video_id: s.video_id.clone(),
                frame_index: s.frame_index,
                label: s.label,
                regions: [None, None, None],
            });
        }
        let f = frames.last_mut().expect("pushed above");
        f.regions[s.region.index()] = Some(d.clone());
    }
    frames
}

fn check_video_labels(samples: &[&Sample]) -> Result<()> {
    for w in samples.windows(2) {
        if w[0].video_id == w[1].video_id && w[0].label != w[1].label {
            return Err(Error::InsufficientData(format!(
                "video `{}` has patches with different labels",
                w[0].video_id
            )));
        }
    }
    Ok(())
}

pub fn train(samples: &[Sample], config: &Config) -> Result<(DefakeHopModel, TrainSummary)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData("no training patches".into()));
    }
    let samples = canonical(samples);
    check_video_labels(&samples)?;
    if samples.iter().all(|s| s.label) || samples.iter().all(|s| !s.label) {
        return Err(Error::SingleClass);
    }
    for region in Region::ALL {
        if !samples.iter().any(|s| s.region == region) {
            return Err(Error::MissingRegion(region));
        }
    }

    let mut timings = Vec::new();
    let mut regions = Vec::new();
    let mut summaries = Vec::new();
    let mut descriptors: Vec<PatchDescriptor> = vec![Vec::new(); samples.len()];
    for region in Region::ALL {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].region == region).collect();
        let patches: Vec<_> = idx.iter().map(|&i| samples[i].patch.clone()).collect();
        let labels: Vec<bool> = idx.iter().map(|&i| samples[i].label).collect();

        let t = Instant::now();
        let tree = CwSaabTree::fit(&patches, &config.cascade())?;
        let outputs = tree.transform_batch(&patches)?;
        drop(patches);
        timings.push((format!("{region} cascade"), t.elapsed()));

        let t = Instant::now();
        let distiller = Distiller::fit(
            &tree,
            &outputs,
            &labels,
            &config.distill(),
            &config.channel_boost(),
        )?;
        let region_desc: Vec<PatchDescriptor> = outputs
            .iter()
            .map(|o| distiller.describe(o))
            .collect::<Result<_>>()?;
        drop(outputs);
        timings.push((format!("{region} distillation"), t.elapsed()));

        let dim = distiller.n_channels();
        let mut mean = vec![0.0f64; dim];
        for d in &region_desc {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        let mean_descriptor: Vec<f32> = mean.iter().map(|m| (m / region_desc.len() as f64) as f32).collect();
        for (&i, d) in idx.iter().zip(region_desc) {
            descriptors[i] = d;
        }

        let mut pca_kept = [0; N_HOPS];
        for (slot, h) in pca_kept.iter_mut().zip(distiller.hops()) {
            *slot = h.pca.as_ref().map_or(0, |p| p.kept());
        }
        summaries.push(RegionSummary {
            region,
            patches: idx.len(),
            channels_per_hop: tree.output_channels_per_hop(),
            pca_kept,
            descriptor_dim: dim,
        });
        regions.push(RegionModel {
            region,
            tree,
            distiller,
            mean_descriptor,
        });
    }

    let t = Instant::now();
    let videos = group_frames(frame_records(&samples, &descriptors), MissingRegions::Drop)?;
    if videos.is_empty() {
        return Err(Error::InsufficientData(
            "no training frame has all three regions".into(),
        ));
    }
    let final_classifier = fit_final(&videos, config.frame_context, &config.final_boost())?;
    timings.push(("ensemble".into(), t.elapsed()));

    let summary = TrainSummary {
        regions: summaries,
        videos: videos.len(),
        frames: videos.iter().map(|v| v.frames.len()).sum(),
        ensemble_dim: final_classifier.n_features(),
        timings,
    };
    Ok((
        DefakeHopModel {
            config: config.clone(),
            regions,
            final_classifier,
        },
        summary,
    ))
}

impl DefakeHopModel {
    /// Descriptor of one patch from the model of its region.
    pub fn describe(&self, region: Region, patch: &crate::tensor::PatchTensor) -> Result<PatchDescriptor> {
        let m = &self.regions[region.index()];
        m.distiller.describe(&m.tree.transform(patch)?)
    }

    /// Scores videos, sorted by `video_id`. Frames missing a region get that
    /// region's mean training descriptor.
    pub fn score(&self, samples: &[Sample]) -> Result<Vec<VideoScore>> {
        use rayon::prelude::*;
        if samples.is_empty() {
            return Err(Error::InsufficientData("no patches to score".into()));
        }
        let samples = canonical(samples);
        check_video_labels(&samples)?;
        let descriptors: Vec<PatchDescriptor> = samples
            .par_iter()
            .map(|s| self.describe(s.region, &s.patch))
            .collect::<Result<_>>()?;
        let means: Vec<Vec<f64>> = self
            .regions
            .iter()
            .map(|r| r.mean_descriptor.iter().map(|&v| v as f64).collect())
            .collect();
        let videos = group_frames(
            frame_records(&samples, &descriptors),
            MissingRegions::Impute(&means),
        )?;
        score_videos(&self.final_classifier, &videos, self.config.frame_context)
    }
}
