//! Multi-region and multi-frame ensemble.
//!
//! A frame's feature vector is the concatenation of its region descriptors
//! (left eye, right eye, mouth). The ensemble vector for a frame stacks the
//! frame vectors at offsets `-context..=context` within the same video,
//! clamping offsets that run past either end of the video to the nearest
//! existing frame. "Adjacent" means adjacent in the video's sorted frame list.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::distill::PatchDescriptor;
use crate::error::{Error, Result};
use crate::gboost::{fit_boosted, BoostParams, BoostedClassifier};
use crate::region::Region;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: u32,
    pub label: bool,
    /// Indexed by `Region::index()`.
    pub regions: [Option<PatchDescriptor>; 3],
}

/// Frames of one video, sorted by frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrames {
    pub video_id: String,
    pub label: bool,
    pub frame_indices: Vec<u32>,
    /// Region-concatenated descriptors, one per frame.
    pub frames: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub video_id: String,
    pub label: bool,
    pub frame_indices: Vec<u32>,
    pub frame_probs: Vec<f64>,
    pub video_prob: f64,
}

/// What to do with a frame that lacks one or more region descriptors.
#[derive(Debug, Clone, Copy)]
pub enum MissingRegions<'a> {
    Drop,
    /// Fill with per-region mean descriptors, indexed by `Region::index()`.
    Impute(&'a [Vec<f64>]),
}

/// Groups frames by video, sorted by `(video_id, frame_index)`.
///
/// Videos left without any usable frame are omitted.
pub fn group_frames(records: Vec<FrameRecord>, missing: MissingRegions<'_>) -> Result<Vec<VideoFrames>> {
    let mut by_video: BTreeMap<String, Vec<FrameRecord>> = BTreeMap::new();
    for r in records {
        by_video.entry(r.video_id.clone()).or_default().push(r);
    }
    let mut videos = Vec::with_capacity(by_video.len());
    for (video_id, mut frames) in by_video {
        frames.sort_by_key(|f| f.frame_index);
        let label = frames[0].label;
        if frames.iter().any(|f| f.label != label) {
            return Err(Error::InsufficientData(format!(
                "video `{video_id}` has frames with different labels"
            )));
        }
        if frames.windows(2).any(|w| w[0].frame_index == w[1].frame_index) {
            return Err(Error::InsufficientData(format!(
                "video `{video_id}` has a duplicated frame index"
            )));
        }
        let mut frame_indices = Vec::new();
        let mut vectors = Vec::new();
        for f in frames {
            let complete = f.regions.iter().all(Option::is_some);
            let parts: Option<Vec<&[f64]>> = match (complete, missing) {
                (true, _) => Some(f.regions.iter().map(|r| r.as_deref().unwrap()).collect()),
                (false, MissingRegions::Drop) => None,
                (false, MissingRegions::Impute(means)) => Some(
                    Region::ALL
                        .iter()
                        .map(|r| {
                            f.regions[r.index()]
                                .as_deref()
                                .unwrap_or(means[r.index()].as_slice())
                        })
                        .collect(),
                ),
            };
            if let Some(parts) = parts {
                frame_indices.push(f.frame_index);
                vectors.push(parts.concat());
            }
        }
        if !vectors.is_empty() {
            videos.push(VideoFrames {
                video_id,
                label,
                frame_indices,
                frames: vectors,
            });
        }
    }
    Ok(videos)
}

/// One stacked vector per frame of a single video, ordered by frame offset
/// (outer), then region, then channel.
pub fn build_ensemble_vectors(frames: &[Vec<f64>], context: usize) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::InsufficientData("video has no frames".into()));
    }
    let width = frames[0].len();
    if frames.iter().any(|f| f.len() != width) {
        return Err(Error::Dimension("frames of one video differ in length".into()));
    }
    let last = frames.len() as isize - 1;
    Ok((0..frames.len() as isize)
        .map(|i| {
            let mut v = Vec::with_capacity((2 * context + 1) * width);
            for off in -(context as isize)..=context as isize {
                v.extend_from_slice(&frames[(i + off).clamp(0, last) as usize]);
            }
            v
        })
        .collect())
}

/// Ensemble vectors for every frame of every video, with frame labels.
pub fn stack_videos(videos: &[VideoFrames], context: usize) -> Result<(Vec<f64>, usize, Vec<bool>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for v in videos {
        for row in build_ensemble_vectors(&v.frames, context)? {
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(Error::Dimension("ensemble vector length differs across videos".into()));
            }
            data.extend(row);
            labels.push(v.label);
        }
    }
    Ok((data, width.unwrap_or(0), labels))
}

pub fn fit_final(
    videos: &[VideoFrames],
    context: usize,
    params: &BoostParams,
) -> Result<BoostedClassifier> {
    let (data, width, labels) = stack_videos(videos, context)?;
    fit_boosted(&data, width, &labels, params)
}

/// Arithmetic mean of frame probabilities.
pub fn video_probability(frame_probs: &[f64]) -> f64 {
    frame_probs.iter().sum::<f64>() / frame_probs.len() as f64
}

/// Scores every video; `video_prob` is the mean of its frame probabilities.
pub fn score_videos(
    model: &BoostedClassifier,
    videos: &[VideoFrames],
    context: usize,
) -> Result<Vec<VideoScore>> {
    videos
        .par_iter()
        .map(|v| {
            let vectors = build_ensemble_vectors(&v.frames, context)?;
            if vectors[0].len() != model.n_features() {
                return Err(Error::Dimension(format!(
                    "ensemble vector has {} features, model expects {}",
                    vectors[0].len(),
                    model.n_features()
                )));
            }
            let frame_probs: Vec<f64> = vectors.iter().map(|x| model.predict_one(x)).collect();
            let video_prob = video_probability(&frame_probs);
            Ok(VideoScore {
                video_id: v.video_id.clone(),
                label: v.label,
                frame_indices: v.frame_indices.clone(),
                frame_probs,
                video_prob,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: f64) -> Vec<f64> {
        vec![v, v + 0.5]
    }

    #[test]
    fn middle_frame_gets_exact_window() {
        let frames: Vec<Vec<f64>> = (0..9).map(|i| frame(i as f64)).collect();
        let vecs = build_ensemble_vectors(&frames, 3).unwrap();
        let expected: Vec<f64> = (1..=7).flat_map(|i| frame(i as f64)).collect();
        assert_eq!(vecs[4], expected);
    }

    #[test]
    fn single_frame_fills_all_slots() {
        let vecs = build_ensemble_vectors(&[frame(2.0)], 3).unwrap();
        assert_eq!(vecs.len(), 1);
        assert_eq!(vecs[0], frame(2.0).repeat(7));
    }

    #[test]
    fn edges_clamp() {
        let frames: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let vecs = build_ensemble_vectors(&frames, 3).unwrap();
        assert_eq!(vecs[0], vec![0., 0., 0., 0., 1., 2., 2.]);
        assert_eq!(vecs[2], vec![0., 0., 1., 2., 2., 2., 2.]);
        assert!(build_ensemble_vectors(&[], 3).is_err());
    }

    #[test]
    fn dimension_is_seven_times_regions_times_channels() {
        let desc = vec![0.5; 30];
        let rec = FrameRecord {
            video_id: "v".into(),
            frame_index: 0,
            label: true,
            regions: [Some(desc.clone()), Some(desc.clone()), Some(desc)],
        };
        let videos = group_frames(vec![rec], MissingRegions::Drop).unwrap();
        let vecs = build_ensemble_vectors(&videos[0].frames, 3).unwrap();
        assert_eq!(vecs[0].len(), 630);
    }

    #[test]
    fn grouping_never_mixes_videos() {
        let mk = |vid: &str, idx: u32, v: f64| FrameRecord {
            video_id: vid.into(),
            frame_index: idx,
            label: vid == "b",
            regions: [Some(vec![v]), Some(vec![v]), Some(vec![v])],
        };
        let recs = vec![mk("b", 1, 11.0), mk("a", 0, 0.0), mk("b", 0, 10.0), mk("a", 1, 1.0)];
        let videos = group_frames(recs, MissingRegions::Drop).unwrap();
        assert_eq!(videos.len(), 2);
        assert_eq!(videos[0].video_id, "a");
        assert_eq!(videos[1].frames, vec![vec![10.0; 3], vec![11.0; 3]]);
        let (data, width, labels) = stack_videos(&videos, 3).unwrap();
        assert_eq!(width, 21);
        assert_eq!(labels, vec![false, false, true, true]);
        // first video's vectors only contain its own values
        assert!(data[..2 * width].iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn missing_regions_drop_or_impute() {
        let rec = FrameRecord {
            video_id: "v".into(),
            frame_index: 0,
            label: false,
            regions: [Some(vec![0.1]), None, Some(vec![0.3])],
        };
        assert!(group_frames(vec![rec.clone()], MissingRegions::Drop).unwrap().is_empty());
        let means = vec![vec![9.0], vec![0.2], vec![9.0]];
        let v = group_frames(vec![rec], MissingRegions::Impute(&means)).unwrap();
        assert_eq!(v[0].frames[0], vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn mean_aggregation() {
        assert!((video_probability(&[0.2, 0.4, 0.9]) - 0.5).abs() < 1e-12);
        assert_eq!(video_probability(&[0.3; 5]), 0.3);
    }

    #[test]
    fn video_prob_is_frame_mean() {
        // A model with no trees predicts its prior for every frame; check the
        // arithmetic mean through a hand-built classifier instead.
        let model = BoostedClassifier {
            n_features: 7,
            max_depth: 1,
            base_score: 0.0,
            learning_rate: 1.0,
            trees: vec![crate::gboost::Tree {
                nodes: vec![
                    crate::gboost::TreeNode::Split { feature: 3, threshold: 0.5, left: 1, right: 2 },
                    crate::gboost::TreeNode::Leaf { value: (0.2f64 / 0.8).ln() as f32 },
                    crate::gboost::TreeNode::Leaf { value: (0.9f64 / 0.1).ln() as f32 },
                ],
            }],
        };
        let video = VideoFrames {
            video_id: "v".into(),
            label: true,
            frame_indices: vec![0, 1, 2],
            frames: vec![vec![0.0], vec![1.0], vec![0.0]],
        };
        let s = &score_videos(&model, &[video], 3).unwrap()[0];
        assert!((s.frame_probs[0] - 0.2).abs() < 1e-6);
        assert!((s.frame_probs[1] - 0.9).abs() < 1e-6);
        let mean = s.frame_probs.iter().sum::<f64>() / 3.0;
        assert_eq!(s.video_prob, mean);
    }
}
