//! JSON Lines dataset manifests.
//!
//! One object per line:
//!
//! ```text
//! {"video_id":"v001","frame_index":3,"region":"mouth","label":1,"patch_path":"patches/v001_3_mouth.pten","split":"train"}
//! ```
//!
//! `patch_path` is resolved relative to the manifest's directory unless it is
//! absolute. Blank lines are ignored, as is a leading object carrying only a
//! `header` key (producers use it to record provenance).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pten::read_patch;
use crate::region::Region;
use crate::tensor::PatchTensor;

pub const PATCH_SIDE: usize = 32;
pub const PATCH_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frame_index: u32,
    pub region: Region,
    /// 1 = fake, 0 = real.
    pub label: u8,
    pub patch_path: String,
    pub split: Split,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    #[allow(dead_code)]
    header: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory that relative patch paths are resolved against.
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// One loaded, validated patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub frame_index: u32,
    pub region: Region,
    pub label: bool,
    pub patch: PatchTensor,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if entries.is_empty() && serde_json::from_str::<HeaderLine>(line).is_ok() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: line_no,
            msg: e.to_string(),
        })?;
        if entry.label > 1 {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("label must be 0 or 1, got {}", entry.label),
            });
        }
        if entry.video_id.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                msg: "empty video_id".into(),
            });
        }
        if !seen.insert((entry.video_id.clone(), entry.frame_index, entry.region)) {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!(
                    "duplicate entry for video `{}` frame {} region {}",
                    entry.video_id, entry.frame_index, entry.region
                ),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    out
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        Ok(Self {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries: parse_manifest(&text)?,
        })
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.patch_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads and validates every patch of `split`, in manifest order.
    pub fn load(&self, split: Split) -> Result<Vec<Sample>> {
        let entries: Vec<&ManifestEntry> = self.split(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let path = self.resolve(e);
                let patch = read_patch(&path).map_err(|err| match err {
                    Error::Io { source, .. } => Error::Patch {
                        path: path.clone(),
                        msg: source.to_string(),
                    },
                    other => Error::Patch {
                        path: path.clone(),
                        msg: other.to_string(),
                    },
                })?;
                validate_patch(&patch).map_err(|msg| Error::Patch { path, msg })?;
                Ok(Sample {
                    video_id: e.video_id.clone(),
                    frame_index: e.frame_index,
                    region: e.region,
                    label: e.label == 1,
                    patch,
                })
            })
            .collect()
    }
}

fn validate_patch(patch: &PatchTensor) -> std::result::Result<(), String> {
    if patch.shape() != (PATCH_SIDE, PATCH_SIDE, PATCH_CHANNELS) {
        return Err(format!(
            "shape {:?}, expected ({PATCH_SIDE}, {PATCH_SIDE}, {PATCH_CHANNELS})",
            patch.shape()
        ));
    }
    if let Some(v) = patch.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("value {v} outside [0, 1]"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(video: &str, frame: u32, region: Region) -> ManifestEntry {
        ManifestEntry {
            video_id: video.into(),
            frame_index: frame,
            region,
            label: 1,
            patch_path: format!("{video}_{frame}_{region}.pten"),
            split: Split::Train,
        }
    }

    #[test]
    fn parses_documented_line() {
        let line = r#"{"video_id":"v001","frame_index":3,"region":"mouth","label":1,"patch_path":"p.pten","split":"test"}"#;
        let e = &parse_manifest(line).unwrap()[0];
        assert_eq!(e.region, Region::Mouth);
        assert_eq!(e.split, Split::Test);
    }

    #[test]
    fn skips_header_and_blank_lines() {
        let text = format!(
            "{{\"header\":{{\"backend\":\"x\"}}}}\n\n{}",
            write_manifest(&[entry("a", 0, Region::LeftEye)])
        );
        assert_eq!(parse_manifest(&text).unwrap().len(), 1);
    }

    #[test]
    fn rejects_bad_lines() {
        let dup = write_manifest(&[entry("a", 0, Region::Mouth), entry("a", 0, Region::Mouth)]);
        assert!(matches!(parse_manifest(&dup), Err(Error::Manifest { line: 2, .. })));
        let bad_region = r#"{"video_id":"a","frame_index":0,"region":"nose","label":0,"patch_path":"p","split":"train"}"#;
        assert!(matches!(parse_manifest(bad_region), Err(Error::Manifest { line: 1, .. })));
        let bad_label = bad_region.replace("nose", "mouth").replace("\"label\":0", "\"label\":2");
        assert!(parse_manifest(&bad_label).is_err());
        assert!(parse_manifest("not json").is_err());
    }

    #[test]
    fn validates_patches() {
        assert!(validate_patch(&PatchTensor::filled(32, 32, 3, 0.5)).is_ok());
        assert!(validate_patch(&PatchTensor::filled(32, 32, 1, 0.5)).is_err());
        assert!(validate_patch(&PatchTensor::filled(32, 32, 3, 1.5)).is_err());
        assert!(validate_patch(&PatchTensor::filled(32, 32, 3, f32::NAN)).is_err());
    }

    fn arb_entry() -> impl Strategy<Value = ManifestEntry> {
        (
            "[a-z0-9_]{1,8}",
            0u32..1000,
            prop::sample::select(Region::ALL.to_vec()),
            0u8..=1,
            "[a-zA-Z0-9_/.\" ]{0,20}",
            prop::bool::ANY,
        )
            .prop_map(|(video_id, frame_index, region, label, patch_path, test)| ManifestEntry {
                video_id,
                frame_index,
                region,
                label,
                patch_path,
                split: if test { Split::Test } else { Split::Train },
            })
    }

    proptest! {
        #[test]
        fn round_trip(entries in prop::collection::vec(arb_entry(), 0..20)) {
            let mut seen = HashSet::new();
            let entries: Vec<ManifestEntry> = entries
                .into_iter()
                .filter(|e| seen.insert((e.video_id.clone(), e.frame_index, e.region)))
                .collect();
            prop_assert_eq!(parse_manifest(&write_manifest(&entries)).unwrap(), entries);
        }
    }
}
