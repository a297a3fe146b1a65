//! DFHM model files.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "DFHM"  u16 version  u32 section_count
//! section_count x { u16 name_len  name  u64 offset  u64 length  u32 crc32 }
//! payloads
//! ```
//!
//! Sections: `config` (the flat config text), `layout` (region order), one
//! section per region (cascade tree, distiller, mean descriptor) and `final`
//! (the ensemble classifier). Offsets are absolute. Every real number is
//! stored as f32, which is the precision the model holds them in, so a load
//! reproduces the saved model exactly.

use std::path::Path;

use crate::config::Config;
use crate::cwsaab::{ChannelRecord, CwSaabTree, Disposition, HopNode, N_HOPS};
use crate::distill::{ChannelDistiller, Distiller, HopDistiller};
use crate::error::{Error, Result};
use crate::gboost::{BoostedClassifier, Tree, TreeNode};
use crate::manifest::{PATCH_CHANNELS, PATCH_SIDE};
use crate::pca::{SaabNode, SpatialPca};
use crate::pipeline::{DefakeHopModel, RegionModel};
use crate::region::Region;

pub const MAGIC: &[u8; 4] = b"DFHM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&u32::try_from(v).expect("count fits in u32").to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u32(v.len());
        for &x in v {
            self.f32(x);
        }
    }
}

struct Reader<'a> {
    section: &'a str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(section: &'a str, buf: &'a [u8]) -> Self {
        Self { section, buf, pos: 0 }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::ModelFormat(format!("section `{}`: {msg}", self.section))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s_len(&mut self, expected: usize, what: &str) -> Result<Vec<f32>> {
        let v = self.f32s()?;
        if v.len() != expected {
            return Err(self.err(format!("{what}: {} values, expected {expected}", v.len())));
        }
        Ok(v)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn write_saab(w: &mut Writer, n: &SaabNode) {
    w.u32(n.input_dim);
    w.f32s(&n.mean);
    w.f32s(&n.ac_kernels);
    w.f32s(&n.eigenvalues);
    w.f32(n.dc_variance);
    w.f32(n.bias);
    w.f32(n.energy);
}

fn read_saab(r: &mut Reader) -> Result<SaabNode> {
    let input_dim = r.u32()?;
    if input_dim < 2 {
        return Err(r.err("Saab node input dimension below 2"));
    }
    let mean = r.f32s_len(input_dim, "Saab mean")?;
    let ac_kernels = r.f32s()?;
    if ac_kernels.len() % input_dim != 0 {
        return Err(r.err("Saab kernel matrix is ragged"));
    }
    let n_ac = ac_kernels.len() / input_dim;
    let eigenvalues = r.f32s_len(n_ac, "Saab eigenvalues")?;
    Ok(SaabNode {
        input_dim,
        mean,
        ac_kernels,
        eigenvalues,
        dc_variance: r.f32()?,
        bias: r.f32()?,
        energy: r.f32()?,
    })
}

fn disposition_code(d: Disposition) -> u8 {
    match d {
        Disposition::Forward => 0,
        Disposition::Keep => 1,
        Disposition::Discard => 2,
        Disposition::Capped => 3,
    }
}

fn write_tree(w: &mut Writer, t: &CwSaabTree) {
    let (h, wd, c) = t.input_shape;
    w.u32(h);
    w.u32(wd);
    w.u32(c);
    w.u8(t.degenerate as u8);
    w.u32(t.hops.len());
    for hop in &t.hops {
        w.u32(hop.len());
        for node in hop {
            w.u32(node.parent.map_or(u32::MAX as usize, |p| p as usize));
            write_saab(w, &node.saab);
        }
    }
    w.u32(t.records.len());
    for rec in &t.records {
        w.u8(rec.hop);
        w.u32(rec.node as usize);
        w.u32(rec.channel as usize);
        w.u32(rec.path.len());
        for &p in &rec.path {
            w.u32(p as usize);
        }
        w.f32(rec.energy);
        w.u8(disposition_code(rec.disposition));
    }
}

fn read_tree(r: &mut Reader, config: &Config) -> Result<CwSaabTree> {
    let input_shape = (r.u32()?, r.u32()?, r.u32()?);
    let degenerate = r.u8()? != 0;
    let n_hops = r.u32()?;
    if n_hops != N_HOPS {
        return Err(r.err(format!("{n_hops} hops, expected {N_HOPS}")));
    }
    let mut hops = Vec::with_capacity(N_HOPS);
    for _ in 0..n_hops {
        let n = r.u32()?;
        let mut nodes = Vec::new();
        for _ in 0..n {
            let parent = r.u32()?;
            let parent = (parent != u32::MAX as usize).then_some(parent as u32);
            nodes.push(HopNode {
                parent,
                saab: read_saab(r)?,
            });
        }
        hops.push(nodes);
    }
    let n_records = r.u32()?;
    let mut records = Vec::new();
    for _ in 0..n_records {
        let hop = r.u8()?;
        let node = r.u32()? as u32;
        let channel = r.u32()? as u32;
        let path_len = r.u32()?;
        if path_len > N_HOPS {
            return Err(r.err("channel path longer than the cascade"));
        }
        let path = (0..path_len).map(|_| r.u32().map(|p| p as u32)).collect::<Result<_>>()?;
        let energy = r.f32()?;
        let disposition = match r.u8()? {
            0 => Disposition::Forward,
            1 => Disposition::Keep,
            2 => Disposition::Discard,
            3 => Disposition::Capped,
            d => return Err(r.err(format!("unknown channel disposition {d}"))),
        };
        records.push(ChannelRecord {
            hop,
            node,
            channel,
            path,
            energy,
            disposition,
        });
    }
    let tree = CwSaabTree {
        input_shape,
        config: config.cascade(),
        hops,
        records,
        degenerate,
    };
    check_tree(&tree).map_err(|m| r.err(m))?;
    Ok(tree)
}

/// Structural checks that keep `transform` from indexing out of bounds.
fn check_tree(t: &CwSaabTree) -> std::result::Result<(), String> {
    let k = t.config.kernel_size;
    let (h, w, c) = t.input_shape;
    crate::cwsaab::hop_geometry(h, w, k).map_err(|e| e.to_string())?;
    if t.hops[0].len() != 1 || t.hops[0][0].parent.is_some() {
        return Err("hop 1 must have a single root node".into());
    }
    for (hi, hop) in t.hops.iter().enumerate() {
        let dim = if hi == 0 { k * k * c } else { k * k };
        for node in hop {
            if node.saab.input_dim != dim {
                return Err(format!("hop {} node has input dimension {}", hi + 1, node.saab.input_dim));
            }
            if hi > 0 {
                let p = node.parent.ok_or("non-root node without parent")? as usize;
                let rec = t.records.get(p).ok_or("parent record out of range")?;
                if rec.hop as usize != hi || !rec.disposition.is_output() {
                    return Err("parent record is not an output of the previous hop".into());
                }
            }
        }
    }
    for rec in &t.records {
        if rec.hop == 0 || rec.hop as usize > N_HOPS {
            return Err(format!("record hop {} out of range", rec.hop));
        }
        let node = t.hops[rec.hop as usize - 1]
            .get(rec.node as usize)
            .ok_or("record node out of range")?;
        if rec.channel as usize >= node.saab.n_channels() {
            return Err("record channel out of range".into());
        }
    }
    Ok(())
}

fn write_classifier(w: &mut Writer, c: &BoostedClassifier) {
    w.u32(c.n_features);
    w.u32(c.max_depth);
    w.f32(c.base_score);
    w.f32(c.learning_rate);
    w.u32(c.trees.len());
    for t in &c.trees {
        w.u32(t.nodes.len());
        for n in &t.nodes {
            match *n {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    w.u8(0);
                    w.u32(feature as usize);
                    w.f32(threshold);
                    w.u32(left as usize);
                    w.u32(right as usize);
                }
                TreeNode::Leaf { value } => {
                    w.u8(1);
                    w.f32(value);
                }
            }
        }
    }
}

fn read_classifier(r: &mut Reader) -> Result<BoostedClassifier> {
    let n_features = r.u32()?;
    let max_depth = r.u32()?;
    let base_score = r.f32()?;
    let learning_rate = r.f32()?;
    let n_trees = r.u32()?;
    let mut trees = Vec::new();
    for _ in 0..n_trees {
        let n = r.u32()?;
        if n == 0 {
            return Err(r.err("empty tree"));
        }
        let mut nodes = Vec::new();
        for i in 0..n {
            let node = match r.u8()? {
                0 => {
                    let feature = r.u32()?;
                    let threshold = r.f32()?;
                    let (left, right) = (r.u32()?, r.u32()?);
                    // Children must come later in the array, which rules out cycles.
                    if feature >= n_features || left <= i || right <= i || left >= n || right >= n {
                        return Err(r.err("split node references out of range"));
                    }
                    TreeNode::Split {
                        feature: feature as u32,
                        threshold,
                        left: left as u32,
                        right: right as u32,
                    }
                }
                1 => TreeNode::Leaf { value: r.f32()? },
                t => return Err(r.err(format!("unknown tree node tag {t}"))),
            };
            nodes.push(node);
        }
        trees.push(Tree { nodes });
    }
    Ok(BoostedClassifier {
        n_features,
        max_depth,
        base_score,
        learning_rate,
        trees,
    })
}

fn write_pca(w: &mut Writer, p: &SpatialPca) {
    w.u32(p.input_dim);
    w.f32s(&p.mean);
    w.f32s(&p.components);
    w.f32s(&p.eigenvalues);
    w.f32(p.total_variance);
    w.f32(p.energy_captured);
}

fn read_pca(r: &mut Reader) -> Result<SpatialPca> {
    let input_dim = r.u32()?;
    let mean = r.f32s_len(input_dim, "PCA mean")?;
    let components = r.f32s()?;
    if input_dim == 0 || components.is_empty() || components.len() % input_dim != 0 {
        return Err(r.err("PCA component matrix is ragged"));
    }
    let kept = components.len() / input_dim;
    Ok(SpatialPca {
        input_dim,
        mean,
        components,
        eigenvalues: r.f32s_len(kept, "PCA eigenvalues")?,
        total_variance: r.f32()?,
        energy_captured: r.f32()?,
    })
}

fn write_distiller(w: &mut Writer, d: &Distiller) {
    w.u32(d.hops.len());
    for h in &d.hops {
        match &h.pca {
            Some(p) => {
                w.u8(1);
                write_pca(w, p);
            }
            None => w.u8(0),
        }
        w.u32(h.channels.len());
        for c in &h.channels {
            w.u32(c.record as usize);
            write_classifier(w, &c.classifier);
        }
    }
}

fn read_distiller(r: &mut Reader, tree: &CwSaabTree) -> Result<Distiller> {
    let n_hops = r.u32()?;
    if n_hops != N_HOPS {
        return Err(r.err(format!("distiller has {n_hops} hops")));
    }
    let counts = tree.output_channels_per_hop();
    let sides = tree.output_sides();
    let mut hops = Vec::new();
    for hop in 0..N_HOPS {
        let pca = match r.u8()? {
            0 => None,
            1 => Some(read_pca(r)?),
            t => return Err(r.err(format!("bad PCA flag {t}"))),
        };
        let n = r.u32()?;
        if n != counts[hop] {
            return Err(r.err(format!("hop {} has {n} channel classifiers, tree has {} channels", hop + 1, counts[hop])));
        }
        if n > 0 {
            let p = pca.as_ref().ok_or_else(|| r.err("channels without a PCA"))?;
            if p.input_dim != sides[hop].0 * sides[hop].1 {
                return Err(r.err("PCA dimension does not match the hop map size"));
            }
        }
        let mut channels = Vec::new();
        for _ in 0..n {
            let record = r.u32()? as u32;
            let classifier = read_classifier(r)?;
            if classifier.n_features != pca.as_ref().map_or(0, |p| p.kept()) {
                return Err(r.err("channel classifier width differs from PCA size"));
            }
            channels.push(ChannelDistiller { record, classifier });
        }
        hops.push(HopDistiller { pca, channels });
    }
    Ok(Distiller { hops })
}

fn encode_region(m: &RegionModel) -> Vec<u8> {
    let mut w = Writer::default();
    write_tree(&mut w, &m.tree);
    write_distiller(&mut w, &m.distiller);
    w.f32s(&m.mean_descriptor);
    w.buf
}

fn decode_region(region: Region, buf: &[u8], config: &Config) -> Result<RegionModel> {
    let mut r = Reader::new(region.as_str(), buf);
    let tree = read_tree(&mut r, config)?;
    let distiller = read_distiller(&mut r, &tree)?;
    let mean_descriptor = r.f32s_len(distiller.n_channels(), "mean descriptor")?;
    r.finish()?;
    Ok(RegionModel {
        region,
        tree,
        distiller,
        mean_descriptor,
    })
}

pub fn to_bytes(model: &DefakeHopModel) -> Vec<u8> {
    let mut sections: Vec<(String, Vec<u8>)> = Vec::new();
    sections.push(("config".into(), model.config.to_text().into_bytes()));
    let mut layout = Writer::default();
    layout.u32(model.regions.len());
    for m in &model.regions {
        layout.u8(m.region.index() as u8);
    }
    sections.push(("layout".into(), layout.buf));
    for m in &model.regions {
        sections.push((m.region.as_str().into(), encode_region(m)));
    }
    let mut fin = Writer::default();
    write_classifier(&mut fin, &model.final_classifier);
    sections.push(("final".into(), fin.buf));

    let table_len: usize = sections.iter().map(|(n, _)| 2 + n.len() + 8 + 8 + 4).sum();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = (out.len() + table_len) as u64;
    for (name, payload) in &sections {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        out.extend_from_slice(payload);
    }
    out
}

/// Reads the section table and verifies every checksum.
pub fn read_sections(bytes: &[u8]) -> Result<Vec<(String, &[u8])>> {
    let mut r = Reader::new("header", bytes);
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::ModelFormat("not a DFHM file".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.u32()?;
    let mut sections = Vec::new();
    for _ in 0..n {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::ModelFormat("section name is not UTF-8".into()))?
            .to_string();
        let offset = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let length = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let crc = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let end = offset.checked_add(length).filter(|&e| e <= bytes.len() as u64).ok_or_else(|| {
            Error::ModelFormat(format!("section `{name}` is truncated"))
        })?;
        let payload = &bytes[offset as usize..end as usize];
        if crc32fast::hash(payload) != crc {
            return Err(Error::Checksum(name));
        }
        sections.push((name, payload));
    }
    Ok(sections)
}

pub fn from_bytes(bytes: &[u8]) -> Result<DefakeHopModel> {
    let sections = read_sections(bytes)?;
    let get = |name: &str| {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::ModelFormat(format!("missing section `{name}`")))
    };
    let config_text = std::str::from_utf8(get("config")?)
        .map_err(|_| Error::ModelFormat("config section is not UTF-8".into()))?;
    let config = Config::from_text(config_text)
        .map_err(|e| Error::ModelFormat(format!("config section: {e}")))?;

    let mut r = Reader::new("layout", get("layout")?);
    let n = r.u32()?;
    let order = (0..n).map(|_| r.u8()).collect::<Result<Vec<u8>>>()?;
    r.finish()?;
    if order != [0, 1, 2] {
        return Err(Error::ModelFormat(format!("unexpected region order {order:?}")));
    }
    let regions = Region::ALL
        .iter()
        .map(|&region| decode_region(region, get(region.as_str())?, &config))
        .collect::<Result<Vec<_>>>()?;

    let mut r = Reader::new("final", get("final")?);
    let final_classifier = read_classifier(&mut r)?;
    r.finish()?;
    let width: usize = regions.iter().map(|m| m.distiller.n_channels()).sum();
    if final_classifier.n_features != (2 * config.frame_context + 1) * width {
        return Err(Error::ModelFormat(
            "final classifier width does not match the region descriptors".into(),
        ));
    }
    Ok(DefakeHopModel {
        config,
        regions,
        final_classifier,
    })
}

pub fn save(model: &DefakeHopModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))
        .map_err(|e| Error::io(format!("writing model {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<DefakeHopModel> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io(format!("reading model {}", path.display()), e))?;
    from_bytes(&bytes)
}

pub const ROW_NAMES: [&str; 8] = [
    "Hop-1 kernels",
    "Hop-2 kernels",
    "Hop-3 kernels",
    "PCA Hop-1",
    "PCA Hop-2",
    "PCA Hop-3",
    "Channel-wise boosters",
    "Final booster",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: &'static str,
    pub count: usize,
    /// Every stored value, including means and eigenvalues. Only filled in
    /// for trained models.
    pub storage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterReport {
    pub heading: String,
    /// Named groups of rows; the upper-bound report has a single group.
    pub groups: Vec<(String, Vec<ReportRow>)>,
    pub total: usize,
    pub notes: Vec<String>,
}

impl ParameterReport {
    /// Row counts of one group, in `ROW_NAMES` order where present.
    pub fn counts(&self, group: usize) -> Vec<usize> {
        self.groups[group].1.iter().map(|r| r.count).collect()
    }
}

/// `12345` -> `"12,345"`.
pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl std::fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}", self.heading)?;
        let with_storage = self.groups.iter().flat_map(|g| &g.1).any(|r| r.storage.is_some());
        if with_storage {
            writeln!(f, "{:<24}{:>10}{:>12}", "", "params", "stored")?;
        }
        for (name, rows) in &self.groups {
            if !name.is_empty() {
                writeln!(f, "[{name}]")?;
            }
            for r in rows {
                write!(f, "{:<24}{:>10}", r.name, group_thousands(r.count))?;
                if let Some(s) = r.storage {
                    write!(f, "{:>12}", group_thousands(s))?;
                }
                writeln!(f)?;
            }
        }
        writeln!(f, "{:<24}{:>10}", "Total", group_thousands(self.total))?;
        for n in &self.notes {
            writeln!(f)?;
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

fn hop2_note(config: &Config) -> String {
    let side = crate::cwsaab::hop_geometry(PATCH_SIDE, PATCH_SIDE, config.kernel_size)
        .map(|g| g[1].0 * g[1].1)
        .unwrap_or(0);
    format!(
        "PCA Hop-2 keeps {} components ({} x {} = {}); a cap of 30 would give {}.",
        config.pca_cap_hop2,
        side,
        config.pca_cap_hop2,
        group_thousands(side * config.pca_cap_hop2),
        group_thousands(side * 30)
    )
}

/// Upper bound from the config alone: every hop at its channel cap, every
/// PCA at its component cap and every tree full-shaped. Counts cover one
/// region's pipeline plus the final booster.
pub fn upper_bound_report(config: &Config) -> Result<ParameterReport> {
    config.validate()?;
    let k = config.kernel_size;
    let g = crate::cwsaab::hop_geometry(PATCH_SIDE, PATCH_SIDE, k)?;
    let cap = config.max_channels_per_hop;
    let caps = [config.pca_cap_hop1, config.pca_cap_hop2, config.pca_cap_hop3];
    let channel_tree = crate::gboost::full_tree_parameters(config.channel_max_depth);
    let final_tree = crate::gboost::full_tree_parameters(config.final_max_depth);
    let counts = [
        k * k * PATCH_CHANNELS * cap,
        k * k * cap,
        k * k * cap,
        g[0].0 * g[0].1 * caps[0],
        g[1].0 * g[1].1 * caps[1],
        g[2].0 * g[2].1 * caps[2],
        N_HOPS * cap * config.n_trees * channel_tree,
        config.n_trees * final_tree,
    ];
    let rows = ROW_NAMES
        .iter()
        .zip(counts)
        .map(|(&name, count)| ReportRow {
            name,
            count,
            storage: None,
        })
        .collect();
    Ok(ParameterReport {
        heading: format!(
            "Parameter upper bound: {cap} channels per hop, PCA caps {caps:?}, full trees of depth {}/{}",
            config.channel_max_depth, config.final_max_depth
        ),
        groups: vec![(String::new(), rows)],
        total: counts.iter().sum(),
        notes: vec![hop2_note(config)],
    })
}

fn saab_storage(n: &SaabNode) -> usize {
    n.mean.len() + n.ac_kernels.len() + n.eigenvalues.len() + 3
}

/// Region rows of a trained model. Kernel rows count `input_dim` per output
/// channel; PCA rows count `input_dim x kept`; booster rows count split
/// features, thresholds and leaves of the trees as grown.
pub fn region_rows(m: &RegionModel) -> Vec<ReportRow> {
    let t = &m.tree;
    let outputs = t.output_channels_per_hop();
    let mut rows = Vec::new();
    for hop in 0..N_HOPS {
        let dim = t.hops[hop].first().map_or(0, |n| n.saab.input_dim);
        rows.push(ReportRow {
            name: ROW_NAMES[hop],
            count: dim * outputs[hop],
            storage: Some(t.hops[hop].iter().map(|n| saab_storage(&n.saab)).sum()),
        });
    }
    for (hop, h) in m.distiller.hops.iter().enumerate() {
        let (count, storage) = h.pca.as_ref().map_or((0, 0), |p| {
            (p.input_dim * p.kept(), p.mean.len() + p.components.len() + p.eigenvalues.len() + 2)
        });
        rows.push(ReportRow {
            name: ROW_NAMES[N_HOPS + hop],
            count,
            storage: Some(storage),
        });
    }
    let boosters: Vec<&BoostedClassifier> = m
        .distiller
        .hops
        .iter()
        .flat_map(|h| h.channels.iter().map(|c| &c.classifier))
        .collect();
    let count: usize = boosters.iter().map(|c| c.count_parameters().actual).sum();
    rows.push(ReportRow {
        name: ROW_NAMES[6],
        count,
        storage: Some(count + 2 * boosters.len()),
    });
    rows
}

pub fn model_report(model: &DefakeHopModel) -> ParameterReport {
    let mut groups: Vec<(String, Vec<ReportRow>)> = model
        .regions
        .iter()
        .map(|m| (m.region.as_str().to_string(), region_rows(m)))
        .collect();
    let fin = model.final_classifier.count_parameters().actual;
    groups.push((
        "ensemble".into(),
        vec![ReportRow {
            name: ROW_NAMES[7],
            count: fin,
            storage: Some(fin + 2),
        }],
    ));
    let total = groups.iter().flat_map(|g| &g.1).map(|r| r.count).sum();
    let dims: Vec<usize> = model.regions.iter().map(|m| m.distiller.n_channels()).collect();
    ParameterReport {
        heading: format!(
            "Trained model parameters (descriptor dims {dims:?}, ensemble width {})",
            model.final_classifier.n_features()
        ),
        groups,
        total,
        notes: vec![
            "The upper bound counts one region's pipeline plus the final booster; this total covers all three regions.".into(),
            hop2_note(&model.config),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_bound_defaults() {
        let r = upper_bound_report(&Config::default()).unwrap();
        assert_eq!(r.counts(0), vec![270, 90, 90, 10_125, 1_225, 45, 12_000, 19_000]);
        assert_eq!(r.total, 42_845);
        let text = r.to_string();
        assert!(text.contains("10,125"));
        assert!(text.contains("42,845"));
        assert!(text.contains("1,470"));
    }

    #[test]
    fn thousands() {
        assert_eq!(group_thousands(0), "0");
        assert_eq!(group_thousands(999), "999");
        assert_eq!(group_thousands(1000), "1,000");
        assert_eq!(group_thousands(1234567), "1,234,567");
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(matches!(from_bytes(b"nope"), Err(Error::ModelFormat(_))));
        let mut v = MAGIC.to_vec();
        v.extend_from_slice(&99u16.to_le_bytes());
        v.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&v),
            Err(Error::UnsupportedVersion { found: 99, expected: 1 })
        ));
    }
}
