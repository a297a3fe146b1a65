//! Feature distillation: spatial PCA per hop, then one soft classifier per
//! output channel.
//!
//! Each hop has a single spatial PCA fitted on the flattened maps of all of
//! that hop's output channels, so a hop-1 map of 225 values is reduced to at
//! most `pca_caps[0]` coefficients. Every channel then gets a depth-limited
//! boosted classifier on its own coefficients, and the patch descriptor is
//! the vector of those classifiers' probabilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cwsaab::{CwSaabTree, HopOutput, N_HOPS};
use crate::error::{Error, Result};
use crate::gboost::{fit_boosted, BoostParams, BoostedClassifier};
use crate::pca::{SampleSource, SpatialPca};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub energy_target: f64,
    pub pca_caps: [usize; N_HOPS],
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            energy_target: 0.9,
            pca_caps: [45, 25, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDistiller {
    /// Index into the tree's channel records.
    pub record: u32,
    pub classifier: BoostedClassifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopDistiller {
    /// `None` when the hop has no output channels.
    pub pca: Option<SpatialPca>,
    pub channels: Vec<ChannelDistiller>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distiller {
    pub(crate) hops: Vec<HopDistiller>,
}

/// One probability per output channel, hop-1 channels first.
pub type PatchDescriptor = Vec<f64>;

struct HopPlanes<'a> {
    outputs: &'a [Vec<HopOutput>],
    hop: usize,
    dim: usize,
}

impl SampleSource for HopPlanes<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_chunks(&self) -> usize {
        self.outputs.len()
    }

    fn visit_chunk(&self, chunk: usize, f: &mut dyn FnMut(&[f64])) {
        for plane in &self.outputs[chunk][self.hop].planes {
            f(plane);
        }
    }
}

fn check_outputs(tree: &CwSaabTree, outputs: &[HopOutput]) -> Result<()> {
    let counts = tree.output_channels_per_hop();
    if outputs.len() != N_HOPS
        || outputs.iter().zip(counts).any(|(o, c)| o.n_channels() != c)
    {
        return Err(Error::Dimension(format!(
            "hop outputs do not match the tree's channel counts {counts:?}"
        )));
    }
    Ok(())
}

impl Distiller {
    pub fn fit(
        tree: &CwSaabTree,
        outputs: &[Vec<HopOutput>],
        labels: &[bool],
        cfg: &DistillConfig,
        boost: &BoostParams,
    ) -> Result<Self> {
        if outputs.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} patches but {} labels",
                outputs.len(),
                labels.len()
            )));
        }
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            return Err(Error::SingleClass);
        }
        for o in outputs {
            check_outputs(tree, o)?;
        }

        let mut hops = Vec::with_capacity(N_HOPS);
        for hop in 0..N_HOPS {
            let records = tree.output_records(hop as u8 + 1);
            if records.is_empty() {
                hops.push(HopDistiller {
                    pca: None,
                    channels: Vec::new(),
                });
                continue;
            }
            let dim = outputs[0][hop].spatial_dim();
            let pca = SpatialPca::fit(
                &HopPlanes { outputs, hop, dim },
                cfg.energy_target,
                cfg.pca_caps[hop],
            )?;
            let kept = pca.kept();
            let channels = records
                .par_iter()
                .enumerate()
                .map(|(c, &record)| {
                    let mut coeffs = vec![0.0; outputs.len() * kept];
                    let mut centered = vec![0.0; dim];
                    for (o, row) in outputs.iter().zip(coeffs.chunks_exact_mut(kept)) {
                        pca.project_into(&o[hop].planes[c], &mut centered, row);
                    }
                    let classifier = fit_boosted(&coeffs, kept, labels, boost)?;
                    Ok(ChannelDistiller {
                        record: record as u32,
                        classifier,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            hops.push(HopDistiller {
                pca: Some(pca),
                channels,
            });
        }
        Ok(Self { hops })
    }

    pub fn hops(&self) -> &[HopDistiller] {
        &self.hops
    }

    /// Descriptor length: total output channels over all hops.
    pub fn n_channels(&self) -> usize {
        self.hops.iter().map(|h| h.channels.len()).sum()
    }

    pub fn describe(&self, outputs: &[HopOutput]) -> Result<PatchDescriptor> {
        if outputs.len() != self.hops.len()
            || outputs
                .iter()
                .zip(&self.hops)
                .any(|(o, h)| o.n_channels() != h.channels.len())
        {
            return Err(Error::Dimension("hop outputs do not match the distiller".into()));
        }
        let mut out = Vec::with_capacity(self.n_channels());
        for (o, h) in outputs.iter().zip(&self.hops) {
            let Some(pca) = &h.pca else { continue };
            if o.spatial_dim() != pca.input_dim() {
                return Err(Error::Dimension(format!(
                    "hop map has {} values, PCA expects {}",
                    o.spatial_dim(),
                    pca.input_dim()
                )));
            }
            let mut centered = vec![0.0; pca.input_dim()];
            let mut coeffs = vec![0.0; pca.kept()];
            for (plane, ch) in o.planes.iter().zip(&h.channels) {
                pca.project_into(plane, &mut centered, &mut coeffs);
                out.push(ch.classifier.predict_one(&coeffs));
            }
        }
        Ok(out)
    }
}

pub fn fit_distillers(
    tree: &CwSaabTree,
    outputs: &[Vec<HopOutput>],
    labels: &[bool],
    cfg: &DistillConfig,
    boost: &BoostParams,
) -> Result<Distiller> {
    Distiller::fit(tree, outputs, labels, cfg, boost)
}

pub fn describe(distiller: &Distiller, outputs: &[HopOutput]) -> Result<PatchDescriptor> {
    distiller.describe(outputs)
}
