//! Three-hop channel-wise Saab cascade.
//!
//! Hop 1 fits one Saab node on the `k x k x C` blocks of the input patches.
//! Every hop-1 channel whose energy clears `th_forward` gets its own hop-2
//! node, fitted on the `k x k` blocks of that channel's pooled response map;
//! hop 3 repeats this for forwarded hop-2 channels. Channel energy is the
//! parent's energy times the channel's share of its node's variance.
//!
//! Within a hop, channels are partitioned into forward / keep / discard by
//! energy, then the surviving channels are ranked by energy across all nodes
//! of the hop and truncated to `max_channels_per_hop`. The hop-1 DC channel
//! gets no special treatment; it is forwarded when its energy allows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::{SaabNode, SampleSource};
use crate::tensor::{max_pool_plane, pooled_len, PatchTensor};

pub const N_HOPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub kernel_size: usize,
    pub max_channels_per_hop: usize,
    pub th_discard: f64,
    pub th_forward: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            max_channels_per_hop: 10,
            th_discard: 0.002,
            th_forward: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    /// Low frequency: output and transformed again at the next hop.
    Forward,
    /// Mid frequency: output only.
    Keep,
    /// High frequency or zero variance: dropped.
    Discard,
    /// Above the discard threshold but beyond the per-hop channel cap.
    Capped,
}

impl Disposition {
    pub fn is_output(self) -> bool {
        matches!(self, Disposition::Forward | Disposition::Keep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecord {
    /// 1-based hop number.
    pub hop: u8,
    /// Node within the hop that produces this channel.
    pub node: u32,
    /// Response channel of that node (0 = DC).
    pub channel: u32,
    /// Response-channel indices from hop 1 down to this channel.
    pub path: Vec<u32>,
    pub energy: f32,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopNode {
    /// Record index of the parent channel; `None` for the hop-1 root.
    pub parent: Option<u32>,
    pub saab: SaabNode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CwSaabTree {
    pub(crate) input_shape: (usize, usize, usize),
    pub(crate) config: CascadeConfig,
    pub(crate) hops: Vec<Vec<HopNode>>,
    pub(crate) records: Vec<ChannelRecord>,
    /// Set when the training data had no variance at all.
    pub(crate) degenerate: bool,
}

/// Response maps of one hop: one pooled plane per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct HopOutput {
    pub height: usize,
    pub width: usize,
    /// Row-major `height x width` planes, in channel-record order.
    pub planes: Vec<Vec<f64>>,
}

impl HopOutput {
    pub fn n_channels(&self) -> usize {
        self.planes.len()
    }

    pub fn spatial_dim(&self) -> usize {
        self.height * self.width
    }
}

/// Spatial sides per hop: (window grid, pooled) for a square-kernel cascade.
pub fn hop_geometry(height: usize, width: usize, k: usize) -> Result<[(usize, usize); N_HOPS]> {
    let mut out = [(0, 0); N_HOPS];
    let (mut h, mut w) = (height, width);
    for slot in out.iter_mut() {
        if k == 0 || h < k || w < k {
            return Err(Error::Dimension(format!(
                "{k}x{k} kernel does not fit a {h}x{w} hop input"
            )));
        }
        let (gh, gw) = (h - k + 1, w - k + 1);
        h = pooled_len(gh);
        w = pooled_len(gw);
        *slot = (h, w);
    }
    Ok(out)
}

struct PatchWindows<'a> {
    patches: &'a [PatchTensor],
    k: usize,
}

impl SampleSource for PatchWindows<'_> {
    fn dim(&self) -> usize {
        self.k * self.k * self.patches[0].channels()
    }

    fn n_chunks(&self) -> usize {
        self.patches.len()
    }

    fn visit_chunk(&self, chunk: usize, f: &mut dyn FnMut(&[f64])) {
        let p = &self.patches[chunk];
        let d = self.dim();
        let mut raw = vec![0f32; d];
        let mut buf = vec![0f64; d];
        for y in 0..=p.height() - self.k {
            for x in 0..=p.width() - self.k {
                p.block_into(y, x, self.k, self.k, &mut raw);
                for (b, &r) in buf.iter_mut().zip(&raw) {
                    *b = r as f64;
                }
                f(&buf);
            }
        }
    }
}

struct PlaneWindows<'a> {
    planes: Vec<&'a [f64]>,
    height: usize,
    width: usize,
    k: usize,
}

fn plane_block(plane: &[f64], width: usize, y: usize, x: usize, k: usize, out: &mut [f64]) {
    for dy in 0..k {
        let start = (y + dy) * width + x;
        out[dy * k..(dy + 1) * k].copy_from_slice(&plane[start..start + k]);
    }
}

impl SampleSource for PlaneWindows<'_> {
    fn dim(&self) -> usize {
        self.k * self.k
    }

    fn n_chunks(&self) -> usize {
        self.planes.len()
    }

    fn visit_chunk(&self, chunk: usize, f: &mut dyn FnMut(&[f64])) {
        let plane = self.planes[chunk];
        let mut buf = vec![0f64; self.k * self.k];
        for y in 0..=self.height - self.k {
            for x in 0..=self.width - self.k {
                plane_block(plane, self.width, y, x, self.k, &mut buf);
                f(&buf);
            }
        }
    }
}

/// Pooled response planes of `node` for the given channels over an input of
/// `h x w` window anchors supplied by `gather`.
fn pooled_responses(
    node: &SaabNode,
    channels: &[usize],
    grid_h: usize,
    grid_w: usize,
    mut gather: impl FnMut(usize, usize, &mut [f64]),
) -> Vec<Vec<f64>> {
    let d = node.input_dim();
    let mut block = vec![0.0; d];
    let mut residual = vec![0.0; d];
    let mut resp = vec![0.0; channels.len()];
    let mut raw: Vec<Vec<f64>> = vec![Vec::with_capacity(grid_h * grid_w); channels.len()];
    for y in 0..grid_h {
        for x in 0..grid_w {
            gather(y, x, &mut block);
            node.respond_channels(&block, channels, &mut residual, &mut resp);
            for (plane, &r) in raw.iter_mut().zip(&resp) {
                plane.push(r);
            }
        }
    }
    raw.iter()
        .map(|p| max_pool_plane(p, grid_h, grid_w))
        .collect()
}

fn patch_responses(node: &SaabNode, channels: &[usize], patch: &PatchTensor, k: usize) -> Vec<Vec<f64>> {
    let mut raw = vec![0f32; node.input_dim()];
    pooled_responses(
        node,
        channels,
        patch.height() - k + 1,
        patch.width() - k + 1,
        |y, x, out| {
            patch.block_into(y, x, k, k, &mut raw);
            for (o, &r) in out.iter_mut().zip(&raw) {
                *o = r as f64;
            }
        },
    )
}

fn plane_responses(
    node: &SaabNode,
    channels: &[usize],
    plane: &[f64],
    h: usize,
    w: usize,
    k: usize,
) -> Vec<Vec<f64>> {
    pooled_responses(node, channels, h - k + 1, w - k + 1, |y, x, out| {
        plane_block(plane, w, y, x, k, out)
    })
}

/// Assigns dispositions to the records `range` of one hop.
fn partition(records: &mut [ChannelRecord], variances: &[f64], cfg: &CascadeConfig, last_hop: bool) {
    for (r, &var) in records.iter_mut().zip(variances) {
        let e = r.energy as f64;
        r.disposition = if var <= 0.0 || e < cfg.th_discard {
            Disposition::Discard
        } else if !last_hop && e >= cfg.th_forward {
            Disposition::Forward
        } else {
            Disposition::Keep
        };
    }
    let mut ranked: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].disposition.is_output())
        .collect();
    // Stable: equal energies keep (node, channel) order.
    ranked.sort_by(|&a, &b| records[b].energy.total_cmp(&records[a].energy));
    for &i in ranked.iter().skip(cfg.max_channels_per_hop) {
        records[i].disposition = Disposition::Capped;
    }
}

fn child_records(
    hop: u8,
    node_idx: u32,
    node: &SaabNode,
    parent_energy: f32,
    parent_path: &[u32],
) -> (Vec<ChannelRecord>, Vec<f64>) {
    let total = node.total_variance();
    (0..node.n_channels())
        .map(|ch| {
            let var = node.channel_variance(ch);
            let share = if total > 0.0 { var / total } else { 0.0 };
            let mut path = parent_path.to_vec();
            path.push(ch as u32);
            let record = ChannelRecord {
                hop,
                node: node_idx,
                channel: ch as u32,
                path,
                energy: (parent_energy as f64 * share) as f32,
                disposition: Disposition::Discard,
            };
            (record, var)
        })
        .unzip()
}

impl CwSaabTree {
    /// Fits the cascade on training patches, which must all share one shape.
    pub fn fit(patches: &[PatchTensor], cfg: &CascadeConfig) -> Result<Self> {
        if patches.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "cascade needs at least 2 patches, got {}",
                patches.len()
            )));
        }
        let shape = patches[0].shape();
        if let Some(p) = patches.iter().find(|p| p.shape() != shape) {
            return Err(Error::Dimension(format!(
                "patch shape {:?} differs from {:?}",
                p.shape(),
                shape
            )));
        }
        if cfg.max_channels_per_hop == 0 {
            return Err(Error::Config("max_channels_per_hop must be positive".into()));
        }
        let k = cfg.kernel_size;
        let geometry = hop_geometry(shape.0, shape.1, k)?;

        let root = SaabNode::fit(&PatchWindows { patches, k })?;
        let degenerate = root.total_variance() <= 0.0;
        let (mut records, variances) = child_records(1, 0, &root, 1.0, &[]);
        partition(&mut records, &variances, cfg, false);
        let mut hops = vec![vec![HopNode {
            parent: None,
            saab: root,
        }]];

        // Pooled planes of the forwarded channels of the previous hop, per patch.
        let forwarded: Vec<usize> = forwarded_in(&records, 1);
        let root = &hops[0][0].saab;
        let fwd_channels: Vec<usize> = forwarded.iter().map(|&r| records[r].channel as usize).collect();
        let mut parent_planes: Vec<Vec<Vec<f64>>> = patches
            .par_iter()
            .map(|p| patch_responses(root, &fwd_channels, p, k))
            .collect();
        let mut parents = forwarded;
        let mut in_side = geometry[0];

        for hop in 2..=N_HOPS as u8 {
            let last = hop as usize == N_HOPS;
            let (h, w) = in_side;
            let mut nodes = Vec::with_capacity(parents.len());
            let mut hop_records = Vec::new();
            let mut hop_vars = Vec::new();
            for (j, &parent) in parents.iter().enumerate() {
                let src = PlaneWindows {
                    planes: parent_planes.iter().map(|pp| pp[j].as_slice()).collect(),
                    height: h,
                    width: w,
                    k,
                };
                let mut saab = SaabNode::fit(&src)?;
                saab.energy = records[parent].energy;
                let (recs, vars) = child_records(
                    hop,
                    j as u32,
                    &saab,
                    records[parent].energy,
                    &records[parent].path,
                );
                hop_records.extend(recs);
                hop_vars.extend(vars);
                nodes.push(HopNode {
                    parent: Some(parent as u32),
                    saab,
                });
            }
            partition(&mut hop_records, &hop_vars, cfg, last);
            let offset = records.len();
            records.extend(hop_records);

            if !last {
                let next: Vec<usize> = forwarded_in(&records, hop)
                    .into_iter()
                    .filter(|&r| r >= offset)
                    .collect();
                parent_planes = parent_planes
                    .par_iter()
                    .map(|pp| {
                        next.iter()
                            .map(|&r| {
                                let rec = &records[r];
                                let node = &nodes[rec.node as usize];
                                plane_responses(
                                    &node.saab,
                                    &[rec.channel as usize],
                                    &pp[rec.node as usize],
                                    h,
                                    w,
                                    k,
                                )
                                .pop()
                                .unwrap()
                            })
                            .collect()
                    })
                    .collect();
                parents = next;
                in_side = geometry[hop as usize - 1];
            }
            hops.push(nodes);
        }

        Ok(Self {
            input_shape: shape,
            config: *cfg,
            hops,
            records,
            degenerate,
        })
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn records(&self) -> &[ChannelRecord] {
        &self.records
    }

    pub fn hops(&self) -> &[Vec<HopNode>] {
        &self.hops
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Record indices of the output channels of `hop` (1-based), in order.
    pub fn output_records(&self, hop: u8) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].hop == hop && self.records[i].disposition.is_output())
            .collect()
    }

    pub fn output_channels_per_hop(&self) -> [usize; N_HOPS] {
        let mut out = [0; N_HOPS];
        for (h, slot) in out.iter_mut().enumerate() {
            *slot = self.output_records(h as u8 + 1).len();
        }
        out
    }

    /// Pooled `(height, width)` of each hop's output maps.
    pub fn output_sides(&self) -> [(usize, usize); N_HOPS] {
        hop_geometry(self.input_shape.0, self.input_shape.1, self.config.kernel_size)
            .expect("geometry validated at fit time")
    }

    /// Per-hop output maps for one patch. Forwarded channels are computed
    /// once and reused as the next hop's input.
    pub fn transform(&self, patch: &PatchTensor) -> Result<Vec<HopOutput>> {
        if patch.shape() != self.input_shape {
            return Err(Error::Dimension(format!(
                "patch shape {:?}, tree expects {:?}",
                patch.shape(),
                self.input_shape
            )));
        }
        let k = self.config.kernel_size;
        let sides = self.output_sides();
        // Planes per record index, for records that are outputs.
        let mut planes: Vec<Option<Vec<f64>>> = vec![None; self.records.len()];

        let hop1 = self.output_records(1);
        let channels: Vec<usize> = hop1.iter().map(|&r| self.records[r].channel as usize).collect();
        for (r, plane) in hop1
            .iter()
            .zip(patch_responses(&self.hops[0][0].saab, &channels, patch, k))
        {
            planes[*r] = Some(plane);
        }

        for hop in 2..=N_HOPS as u8 {
            let (h, w) = sides[hop as usize - 2];
            let outs = self.output_records(hop);
            for (node_idx, node) in self.hops[hop as usize - 1].iter().enumerate() {
                let recs: Vec<usize> = outs
                    .iter()
                    .copied()
                    .filter(|&r| self.records[r].node as usize == node_idx)
                    .collect();
                if recs.is_empty() {
                    continue;
                }
                let parent = node.parent.expect("non-root node has a parent") as usize;
                let input = planes[parent]
                    .as_ref()
                    .expect("forwarded parent is an output channel");
                let channels: Vec<usize> =
                    recs.iter().map(|&r| self.records[r].channel as usize).collect();
                let responses = plane_responses(&node.saab, &channels, input, h, w, k);
                for (r, plane) in recs.into_iter().zip(responses) {
                    planes[r] = Some(plane);
                }
            }
        }

        Ok((1..=N_HOPS as u8)
            .map(|hop| {
                let (height, width) = sides[hop as usize - 1];
                HopOutput {
                    height,
                    width,
                    planes: self
                        .output_records(hop)
                        .into_iter()
                        .map(|r| planes[r].take().expect("computed above"))
                        .collect(),
                }
            })
            .collect())
    }

    /// Transforms a batch of patches in parallel; order is preserved.
    pub fn transform_batch(&self, patches: &[PatchTensor]) -> Result<Vec<Vec<HopOutput>>> {
        patches.par_iter().map(|p| self.transform(p)).collect()
    }
}

fn forwarded_in(records: &[ChannelRecord], hop: u8) -> Vec<usize> {
    (0..records.len())
        .filter(|&i| records[i].hop == hop && records[i].disposition == Disposition::Forward)
        .collect()
}

pub fn fit_cascade(patches: &[PatchTensor], cfg: &CascadeConfig) -> Result<CwSaabTree> {
    CwSaabTree::fit(patches, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn smooth_patches(n: usize, seed: u64) -> Vec<PatchTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (fx, fy, ph): (f32, f32, f32) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3), rng.gen());
                let base: f32 = rng.gen_range(0.3..0.6);
                let noise = 0.05f32;
                PatchTensor::from_fn(32, 32, 3, |y, x, c| {
                    let v = base
                        + 0.2 * ((x as f32 * fx + y as f32 * fy) * std::f32::consts::TAU + ph + c as f32).sin()
                        + noise * (rng.gen::<f32>() - 0.5);
                    v.clamp(0.0, 1.0)
                })
            })
            .collect()
    }

    #[test]
    fn geometry_of_default_cascade() {
        assert_eq!(hop_geometry(32, 32, 3).unwrap(), [(15, 15), (7, 7), (3, 3)]);
        assert!(hop_geometry(8, 8, 3).is_err());
    }

    #[test]
    fn fitted_tree_shapes_and_invariants() {
        let patches = smooth_patches(12, 1);
        let tree = fit_cascade(&patches, &CascadeConfig::default()).unwrap();
        let out = tree.transform(&patches[0]).unwrap();
        let counts = tree.output_channels_per_hop();
        for (hop, (o, side)) in out.iter().zip([15, 7, 3]).enumerate() {
            assert_eq!((o.height, o.width), (side, side));
            assert_eq!(o.n_channels(), counts[hop]);
            assert!(o.n_channels() <= 10);
            assert!(o.planes.iter().all(|p| p.len() == side * side));
        }
        assert!(counts[0] > 0);
        for node in tree.hops()[1..].iter().flatten() {
            assert_eq!(node.saab.input_dim(), 9);
        }
        for r in tree.records() {
            if r.disposition == Disposition::Forward {
                assert!(r.hop < 3);
                assert!(r.energy as f64 >= 0.01);
            }
            if r.hop > 1 {
                let node = &tree.hops()[r.hop as usize - 1][r.node as usize];
                let parent = &tree.records()[node.parent.unwrap() as usize];
                assert!(r.energy <= parent.energy);
                assert_eq!(parent.disposition, Disposition::Forward);
            }
        }
        let hop1: f32 = tree.records().iter().filter(|r| r.hop == 1).map(|r| r.energy).sum();
        assert!(hop1 <= 1.0 + 1e-6);
    }

    #[test]
    fn constant_patches_are_degenerate() {
        let patches = vec![PatchTensor::filled(32, 32, 3, 0.5); 4];
        let tree = fit_cascade(&patches, &CascadeConfig::default()).unwrap();
        assert!(tree.is_degenerate());
        assert_eq!(tree.output_channels_per_hop(), [0, 0, 0]);
        let out = tree.transform(&patches[0]).unwrap();
        assert!(out.iter().all(|o| o.planes.is_empty()));
    }

    #[test]
    fn cap_is_respected() {
        let patches = smooth_patches(8, 2);
        let cfg = CascadeConfig {
            max_channels_per_hop: 2,
            th_discard: 0.0,
            th_forward: 0.0,
            ..CascadeConfig::default()
        };
        let tree = fit_cascade(&patches, &cfg).unwrap();
        assert!(tree.output_channels_per_hop().iter().all(|&c| c <= 2));
        assert!(tree.records().iter().any(|r| r.disposition == Disposition::Capped));
    }

    #[test]
    fn rejects_mixed_shapes_and_small_sets() {
        let a = PatchTensor::filled(32, 32, 3, 0.1);
        let b = PatchTensor::filled(30, 32, 3, 0.1);
        assert!(fit_cascade(std::slice::from_ref(&a), &CascadeConfig::default()).is_err());
        assert!(fit_cascade(&[a.clone(), b.clone()], &CascadeConfig::default()).is_err());
        let tree = fit_cascade(&smooth_patches(3, 3), &CascadeConfig::default()).unwrap();
        assert!(tree.transform(&b).is_err());
    }

    #[test]
    fn gray_patch_gives_flat_maps() {
        let patches = smooth_patches(6, 4);
        let tree = fit_cascade(&patches, &CascadeConfig::default()).unwrap();
        let gray = PatchTensor::filled(32, 32, 3, 0.5);
        let out = tree.transform(&gray).unwrap();
        let node = &tree.hops()[0][0].saab;
        let expected = node.respond(&[0.5; 27]);
        for (r, plane) in tree.output_records(1).iter().zip(&out[0].planes) {
            let ch = tree.records()[*r].channel as usize;
            assert!(plane.iter().all(|&v| v == expected[ch]));
        }
        for hop in &out {
            for plane in &hop.planes {
                assert!(plane.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }
}
